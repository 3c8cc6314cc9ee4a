//! Fixed-width primitives shared by every role: the 256-bit word, SHA-256
//! with an unambiguous multi-field encoding, XOR, randomness and
//! constant-time comparison.

use std::fmt;
use std::ops::{BitXor, BitXorAssign};

use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Width of every challenge, response, nonce and digest in bytes.
pub const WORD_BYTES: usize = 32;
pub const WORD_BITS: usize = WORD_BYTES * 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid hex word: {0}")]
    InvalidHex(String),
    #[error("entropy source unavailable: {0}")]
    EntropyUnavailable(String),
}

/// A 256-bit value. Bit 0 is the most significant bit of byte 0.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Word256(pub [u8; WORD_BYTES]);

impl Word256 {
    pub const ZERO: Word256 = Word256([0u8; WORD_BYTES]);

    pub const fn from_bytes(bytes: [u8; WORD_BYTES]) -> Self {
        Word256(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; WORD_BYTES] {
        &self.0
    }

    /// Big-endian embedding of a counter into the low-order 8 bytes.
    pub fn from_u64(value: u64) -> Self {
        let mut bytes = [0u8; WORD_BYTES];
        bytes[WORD_BYTES - 8..].copy_from_slice(&value.to_be_bytes());
        Word256(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        <[u8; WORD_BYTES]>::try_from(bytes).ok().map(Word256)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let raw = hex::decode(s.trim()).map_err(|_| CryptoError::InvalidHex(s.to_string()))?;
        Word256::from_slice(&raw).ok_or_else(|| CryptoError::InvalidHex(s.to_string()))
    }

    pub fn bit(&self, index: usize) -> bool {
        (self.0[index / 8] >> (7 - index % 8)) & 1 == 1
    }

    pub fn with_bit_flipped(mut self, index: usize) -> Self {
        self.0[index / 8] ^= 0x80 >> (index % 8);
        self
    }

    pub fn count_ones(&self) -> u32 {
        self.0.iter().map(|b| b.count_ones()).sum()
    }

    pub fn hamming(&self, other: &Word256) -> u32 {
        (*self ^ *other).count_ones()
    }

    /// Remainder of the word, read as a big-endian integer, modulo `modulus`.
    pub fn rem_u64(&self, modulus: u64) -> u64 {
        assert!(modulus > 0, "modulus must be positive");
        let m = modulus as u128;
        self.0.iter().fold(0u128, |acc, &b| ((acc << 8) | b as u128) % m) as u64
    }
}

impl fmt::Debug for Word256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word256({})", self.to_hex())
    }
}

impl fmt::Display for Word256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl BitXor for Word256 {
    type Output = Word256;

    fn bitxor(self, rhs: Word256) -> Word256 {
        xor256(&self, &rhs)
    }
}

impl BitXorAssign for Word256 {
    fn bitxor_assign(&mut self, rhs: Word256) {
        *self = xor256(self, &rhs);
    }
}

/// 32-bit device or client identifier, serialized big-endian.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct DeviceId(pub u32);

impl DeviceId {
    pub fn to_be_bytes(self) -> [u8; 4] {
        self.0.to_be_bytes()
    }

    pub fn from_be_bytes(bytes: [u8; 4]) -> Self {
        DeviceId(u32::from_be_bytes(bytes))
    }
}

impl fmt::Debug for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeviceId({:08x})", self.0)
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08x}", self.0)
    }
}

pub fn hash256(data: &[u8]) -> Word256 {
    Word256(Sha256::digest(data).into())
}

/// One input to [`hash_fields`].
#[derive(Clone, Copy, Debug)]
pub enum Field<'a> {
    /// 32 bytes as-is.
    Word(&'a Word256),
    /// 4 bytes big-endian.
    Id(DeviceId),
    /// Variable-length octets, prefixed by their length as 4 bytes big-endian.
    Octets(&'a [u8]),
}

impl<'a> From<&'a Word256> for Field<'a> {
    fn from(w: &'a Word256) -> Self {
        Field::Word(w)
    }
}

impl From<DeviceId> for Field<'_> {
    fn from(id: DeviceId) -> Self {
        Field::Id(id)
    }
}

impl<'a> From<&'a [u8]> for Field<'a> {
    fn from(b: &'a [u8]) -> Self {
        Field::Octets(b)
    }
}

/// SHA-256 over the concatenated fixed-width serialization of `fields`.
pub fn hash_fields(fields: &[Field<'_>]) -> Word256 {
    let mut hasher = Sha256::new();
    for field in fields {
        match field {
            Field::Word(w) => hasher.update(w.0),
            Field::Id(id) => hasher.update(id.to_be_bytes()),
            Field::Octets(bytes) => {
                let len = u32::try_from(bytes.len()).expect("hash field longer than 4 GiB");
                hasher.update(len.to_be_bytes());
                hasher.update(bytes);
            }
        }
    }
    Word256(hasher.finalize().into())
}

/// `hash_fields` over a list of words only.
pub fn hash_words(words: &[&Word256]) -> Word256 {
    let mut hasher = Sha256::new();
    for w in words {
        hasher.update(w.0);
    }
    Word256(hasher.finalize().into())
}

pub fn xor256(a: &Word256, b: &Word256) -> Word256 {
    let mut out = [0u8; WORD_BYTES];
    for (o, (x, y)) in out.iter_mut().zip(a.0.iter().zip(b.0.iter())) {
        *o = x ^ y;
    }
    Word256(out)
}

/// Equality that inspects all 32 bytes regardless of where they differ.
pub fn ct_equal(a: &Word256, b: &Word256) -> bool {
    let mut diff = 0u8;
    for i in 0..WORD_BYTES {
        diff |= std::hint::black_box(a.0[i] ^ b.0[i]);
    }
    std::hint::black_box(diff) == 0
}

/// Source of fresh 256-bit values (T1, T2, nonces, new challenges).
pub trait WordSource {
    fn next_word(&mut self) -> Word256;
}

impl<W: WordSource + ?Sized> WordSource for &mut W {
    fn next_word(&mut self) -> Word256 {
        (**self).next_word()
    }
}

impl<W: WordSource + ?Sized> WordSource for Box<W> {
    fn next_word(&mut self) -> Word256 {
        (**self).next_word()
    }
}

pub fn random_word(source: &mut impl WordSource) -> Word256 {
    source.next_word()
}

/// Operating-system CSPRNG.
#[derive(Debug)]
pub struct SystemEntropy(OsRng);

impl SystemEntropy {
    /// Probes the OS generator once so an unusable source fails at startup.
    pub fn new() -> Result<Self, CryptoError> {
        let mut probe = [0u8; WORD_BYTES];
        OsRng
            .try_fill_bytes(&mut probe)
            .map_err(|e| CryptoError::EntropyUnavailable(e.to_string()))?;
        Ok(SystemEntropy(OsRng))
    }
}

impl WordSource for SystemEntropy {
    fn next_word(&mut self) -> Word256 {
        let mut bytes = [0u8; WORD_BYTES];
        if let Err(e) = self.0.try_fill_bytes(&mut bytes) {
            panic!("entropy source failed after initialization: {e}");
        }
        Word256(bytes)
    }
}

/// Deterministic ChaCha20 stream for simulations and tests.
#[derive(Clone, Debug)]
pub struct SeededWords(ChaCha20Rng);

impl SeededWords {
    pub fn new(seed: u64) -> Self {
        SeededWords(ChaCha20Rng::seed_from_u64(seed))
    }

    /// Independent stream for a named sub-purpose of one seed.
    pub fn derived(seed: u64, label: &str) -> Self {
        let mut material = seed.to_be_bytes().to_vec();
        material.extend_from_slice(label.as_bytes());
        SeededWords(ChaCha20Rng::from_seed(hash256(&material).0))
    }
}

impl WordSource for SeededWords {
    fn next_word(&mut self) -> Word256 {
        let mut bytes = [0u8; WORD_BYTES];
        self.0.fill_bytes(&mut bytes);
        Word256(bytes)
    }
}

/// Replays a fixed list of words, then falls back to a seeded stream.
#[derive(Clone, Debug)]
pub struct ScriptedWords {
    queued: std::collections::VecDeque<Word256>,
    fallback: SeededWords,
}

impl ScriptedWords {
    pub fn new(words: impl IntoIterator<Item = Word256>, fallback_seed: u64) -> Self {
        ScriptedWords {
            queued: words.into_iter().collect(),
            fallback: SeededWords::new(fallback_seed),
        }
    }
}

impl WordSource for ScriptedWords {
    fn next_word(&mut self) -> Word256 {
        self.queued
            .pop_front()
            .unwrap_or_else(|| self.fallback.next_word())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn word(seed: u64) -> Word256 {
        SeededWords::new(seed).next_word()
    }

    #[test]
    fn sha256_published_vectors() {
        assert_eq!(
            hash256(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hash256(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(hash256(b"abc"), hash256(b"abc"));
    }

    #[test]
    fn single_field_reduces_to_plain_hash() {
        assert_eq!(hash_fields(&[(&Word256::ZERO).into()]), hash256(&[0u8; 32]));
        assert_eq!(
            hash_fields(&[DeviceId(0x0102_0304).into()]),
            hash256(&[1, 2, 3, 4])
        );
        let a = word(1);
        let b = word(2);
        assert_eq!(hash_words(&[&a, &b]), hash_fields(&[(&a).into(), (&b).into()]));
    }

    #[test]
    fn field_order_matters() {
        let a = word(3);
        let b = word(4);
        assert_ne!(hash_words(&[&a, &b]), hash_words(&[&b, &a]));
    }

    #[test]
    fn octet_fields_are_length_prefixed() {
        // ("ab", "c") and ("a", "bc") concatenate identically without a prefix.
        let left = hash_fields(&[b"ab".as_slice().into(), b"c".as_slice().into()]);
        let right = hash_fields(&[b"a".as_slice().into(), b"bc".as_slice().into()]);
        assert_ne!(left, right);
        let mut manual = vec![0, 0, 0, 2, b'a', b'b', 0, 0, 0, 1, b'c'];
        manual.extend_from_slice(&7u32.to_be_bytes());
        let with_id = hash_fields(&[
            b"ab".as_slice().into(),
            b"c".as_slice().into(),
            DeviceId(7).into(),
        ]);
        assert_eq!(with_id, hash256(&manual));
    }

    #[test]
    fn xor_bytewise_pattern() {
        let a = Word256([0xFF; 32]);
        let b = Word256([0x0F; 32]);
        let expected: Vec<u8> = a.0.iter().zip(b.0.iter()).map(|(x, y)| x ^ y).collect();
        assert_eq!(xor256(&a, &b).0.to_vec(), expected);
        assert_eq!(xor256(&a, &b), Word256([0xF0; 32]));
        assert_eq!(a ^ Word256::ZERO, a);
        assert_eq!(a ^ a, Word256::ZERO);
    }

    #[test]
    fn ct_equal_detects_first_and_last_bit() {
        let a = word(9);
        assert!(ct_equal(&a, &a));
        assert!(!ct_equal(&a, &a.with_bit_flipped(255)));
        assert!(!ct_equal(&a, &a.with_bit_flipped(0)));
    }

    #[test]
    fn seeded_stream_is_reproducible_and_fresh() {
        let mut s1 = SeededWords::new(42);
        let mut s2 = SeededWords::new(42);
        let a: Vec<_> = (0..8).map(|_| s1.next_word()).collect();
        let b: Vec<_> = (0..8).map(|_| s2.next_word()).collect();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_ne!(
            SeededWords::derived(1, "x").next_word(),
            SeededWords::derived(1, "y").next_word()
        );
    }

    #[test]
    fn system_entropy_never_repeats() {
        let mut src = SystemEntropy::new().unwrap();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..10_000 {
            assert!(seen.insert(random_word(&mut src)));
        }
    }

    #[test]
    fn per_bit_frequency_is_balanced() {
        let mut src = SeededWords::new(2024);
        let mut ones = [0u32; WORD_BITS];
        let samples = 10_000;
        for _ in 0..samples {
            let w = src.next_word();
            for (i, count) in ones.iter_mut().enumerate() {
                *count += w.bit(i) as u32;
            }
        }
        for &count in &ones {
            let freq = count as f64 / samples as f64;
            assert!((0.48..=0.52).contains(&freq), "bit frequency {freq}");
        }
    }

    #[test]
    fn scripted_words_then_fallback() {
        let mut s = ScriptedWords::new([Word256::ZERO, Word256([1; 32])], 5);
        assert_eq!(s.next_word(), Word256::ZERO);
        assert_eq!(s.next_word(), Word256([1; 32]));
        assert_eq!(s.next_word(), SeededWords::new(5).next_word());
    }

    #[test]
    fn rem_matches_small_values() {
        assert_eq!(Word256::from_u64(1000).rem_u64(7), 1000 % 7);
        // 2^256 - 1 mod 3: 2^256 = (2^2)^128 = 1 mod 3, so result is 0.
        assert_eq!(Word256([0xFF; 32]).rem_u64(3), 0);
        assert_eq!(Word256([0xFF; 32]).rem_u64(5), 0);
        // 2^256 = 2 mod 7.
        assert_eq!(Word256([0xFF; 32]).rem_u64(7), 1);
    }

    fn arb_word() -> impl Strategy<Value = Word256> {
        any::<[u8; 32]>().prop_map(Word256)
    }

    proptest! {
        #[test]
        fn xor_group_laws(a in arb_word(), b in arb_word(), c in arb_word()) {
            prop_assert_eq!((a ^ b) ^ c, a ^ (b ^ c));
            prop_assert_eq!(a ^ b, b ^ a);
            prop_assert_eq!((a ^ b) ^ b, a);
        }

        #[test]
        fn hex_round_trip(a in arb_word()) {
            prop_assert_eq!(Word256::from_hex(&a.to_hex()).unwrap(), a);
        }

        #[test]
        fn ct_equal_agrees_with_eq(a in arb_word(), b in arb_word()) {
            prop_assert_eq!(ct_equal(&a, &b), a == b);
            prop_assert!(ct_equal(&a, &a));
        }
    }
}
