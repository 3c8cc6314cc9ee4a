//! Software SRAM-PUF.
//!
//! A chip is an array of cells, each with a power-on preference (nominal
//! bit) and a probability of settling the other way. Enrollment reads the
//! array repeatedly and keeps the addresses that never changed; those form
//! the [`StablePool`]. A 256-bit challenge seeds a hash chain that draws an
//! ordered selection of `fingerprint_size` pool addresses, and the response
//! is the hash of the challenge together with the bits found there.
//!
//! The pool is non-secret helper data: without the cell array the
//! addresses say nothing about the response.

use std::fmt;
use std::io::{self, Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::{hash_fields, Word256, WORD_BITS, WORD_BYTES};

pub const DEFAULT_CELL_COUNT: usize = 4096;
pub const DEFAULT_FINGERPRINT_BITS: usize = 96;
pub const DEFAULT_QUALIFICATION_READS: u32 = 31;
pub const DEFAULT_STABLE_FRACTION: f64 = 0.85;
pub const MIN_CELL_COUNT: usize = 512;

/// Unstable cells flip with a probability drawn from this range.
const UNSTABLE_FLIP_RANGE: (f64, f64) = (0.1, 0.5);

const IDENTITY_MAGIC: &[u8; 4] = b"SPUF";
const IDENTITY_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum PufError {
    #[error("invalid PUF configuration: {0}")]
    Config(String),
    #[error("chip unusable: {found} stable cells, {required} required")]
    ChipUnusable { found: usize, required: usize },
    #[error("corrupt identity file: {0}")]
    CorruptIdentity(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellModel {
    pub nominal_bit: bool,
    pub flip_probability: f64,
}

impl CellModel {
    pub fn is_stable(&self) -> bool {
        self.flip_probability == 0.0
    }
}

/// Read-noise model for a power-on read.
pub enum Noise<'a> {
    /// Every cell settles to its nominal bit.
    Silent,
    /// Each cell flips with its own probability, drawn from the generator.
    Sampled(&'a mut dyn RngCore),
}

impl fmt::Debug for Noise<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Noise::Silent => f.write_str("Silent"),
            Noise::Sampled(_) => f.write_str("Sampled"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SramChip {
    chip_id: u64,
    cells: Vec<CellModel>,
}

impl SramChip {
    /// Manufactures a chip whose cell array is a pure function of `chip_id`.
    pub fn fabricate(chip_id: u64, cell_count: usize, stable_fraction: f64) -> Result<Self, PufError> {
        if cell_count < MIN_CELL_COUNT {
            return Err(PufError::Config(format!(
                "cell count {cell_count} below minimum {MIN_CELL_COUNT}"
            )));
        }
        if !(stable_fraction > 0.0 && stable_fraction <= 1.0) {
            return Err(PufError::Config(format!(
                "stable fraction {stable_fraction} outside (0, 1]"
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(chip_id);
        let cells = (0..cell_count)
            .map(|_| {
                let nominal_bit = rng.gen_bool(0.5);
                let flip_probability = if rng.gen_bool(stable_fraction) {
                    0.0
                } else {
                    rng.gen_range(UNSTABLE_FLIP_RANGE.0..=UNSTABLE_FLIP_RANGE.1)
                };
                CellModel { nominal_bit, flip_probability }
            })
            .collect();
        Ok(SramChip { chip_id, cells })
    }

    /// Builds a chip from explicit cells, e.g. to plant known-unstable cells.
    pub fn from_cells(chip_id: u64, cells: Vec<CellModel>) -> Result<Self, PufError> {
        if let Some(bad) = cells
            .iter()
            .find(|c| !(0.0..=0.5).contains(&c.flip_probability))
        {
            return Err(PufError::Config(format!(
                "flip probability {} outside [0, 0.5]",
                bad.flip_probability
            )));
        }
        Ok(SramChip { chip_id, cells })
    }

    pub fn chip_id(&self) -> u64 {
        self.chip_id
    }

    pub fn cells(&self) -> &[CellModel] {
        &self.cells
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn nominal_bits(&self) -> Vec<bool> {
        self.cells.iter().map(|c| c.nominal_bit).collect()
    }

    pub fn power_on_read(&self, noise: &mut Noise<'_>) -> Vec<bool> {
        match noise {
            Noise::Silent => self.nominal_bits(),
            Noise::Sampled(rng) => self
                .cells
                .iter()
                .map(|c| {
                    let flip = c.flip_probability > 0.0 && rng.gen_bool(c.flip_probability);
                    c.nominal_bit ^ flip
                })
                .collect(),
        }
    }

    /// Addresses whose value was identical across `reads` power-on reads,
    /// ascending.
    pub fn find_stable_cells(
        &self,
        reads: u32,
        fingerprint_size: usize,
        noise: &mut dyn RngCore,
    ) -> Result<StablePool, PufError> {
        if reads == 0 {
            return Err(PufError::Config("at least one qualification read required".into()));
        }
        if reads == 1 {
            log::warn!("stable-cell qualification with a single read accepts every cell");
        }
        let mut noise = Noise::Sampled(noise);
        let first = self.power_on_read(&mut noise);
        let mut stable = vec![true; first.len()];
        for _ in 1..reads {
            let read = self.power_on_read(&mut noise);
            for ((keep, a), b) in stable.iter_mut().zip(&first).zip(&read) {
                *keep &= a == b;
            }
        }
        let addresses: Vec<u32> = stable
            .iter()
            .enumerate()
            .filter(|(_, keep)| **keep)
            .map(|(i, _)| i as u32)
            .collect();
        if addresses.len() < fingerprint_size {
            return Err(PufError::ChipUnusable {
                found: addresses.len(),
                required: fingerprint_size,
            });
        }
        Ok(StablePool { addresses, read_count: reads })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StablePool {
    addresses: Vec<u32>,
    read_count: u32,
}

impl StablePool {
    /// Pool from explicit addresses; they must be distinct and inside the chip.
    pub fn new(addresses: Vec<u32>, read_count: u32, cell_count: usize) -> Result<Self, PufError> {
        let mut sorted = addresses.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(PufError::Config("duplicate pool address".into()));
        }
        if let Some(&max) = sorted.last() {
            if max as usize >= cell_count {
                return Err(PufError::Config(format!(
                    "pool address {max} outside chip of {cell_count} cells"
                )));
            }
        }
        if read_count == 0 {
            return Err(PufError::Config("pool read count must be positive".into()));
        }
        Ok(StablePool { addresses, read_count })
    }

    pub fn addresses(&self) -> &[u32] {
        &self.addresses
    }

    pub fn read_count(&self) -> u32 {
        self.read_count
    }

    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }
}

/// Ordered selection of `k` distinct pool addresses driven by `challenge`.
///
/// Round `i` hashes `(challenge, i)` and takes the digest modulo the number
/// of addresses not yet chosen, removing the selected entry.
pub fn expand_challenge(challenge: &Word256, pool: &StablePool, k: usize) -> Result<Vec<u32>, PufError> {
    if pool.len() < k {
        return Err(PufError::ChipUnusable { found: pool.len(), required: k });
    }
    let mut remaining = pool.addresses.clone();
    let mut selected = Vec::with_capacity(k);
    for round in 0..k {
        let counter = Word256::from_u64(round as u64);
        let digest = hash_fields(&[challenge.into(), (&counter).into()]);
        let idx = digest.rem_u64(remaining.len() as u64) as usize;
        selected.push(remaining.remove(idx));
    }
    Ok(selected)
}

/// Packs bits MSB-first into a zero-padded word. At most 256 bits.
pub fn pack_bits(bits: impl IntoIterator<Item = bool>) -> Word256 {
    let mut bytes = [0u8; WORD_BYTES];
    for (i, bit) in bits.into_iter().enumerate() {
        assert!(i < WORD_BITS, "fingerprint wider than 256 bits");
        if bit {
            bytes[i / 8] |= 0x80 >> (i % 8);
        }
    }
    Word256(bytes)
}

/// The device's PUF: chip, enrolled pool and fingerprint width.
#[derive(Clone, Debug, PartialEq)]
pub struct PufFunction {
    chip: SramChip,
    pool: StablePool,
    fingerprint_size: usize,
}

impl PufFunction {
    pub fn new(chip: SramChip, pool: StablePool, fingerprint_size: usize) -> Result<Self, PufError> {
        if fingerprint_size == 0 || fingerprint_size > WORD_BITS {
            return Err(PufError::Config(format!(
                "fingerprint size {fingerprint_size} outside 1..=256"
            )));
        }
        if chip.cell_count() < fingerprint_size {
            return Err(PufError::Config("chip smaller than fingerprint".into()));
        }
        if pool.addresses.iter().any(|&a| a as usize >= chip.cell_count()) {
            return Err(PufError::Config("pool does not belong to this chip".into()));
        }
        if pool.len() < fingerprint_size {
            return Err(PufError::ChipUnusable { found: pool.len(), required: fingerprint_size });
        }
        Ok(PufFunction { chip, pool, fingerprint_size })
    }

    /// Fabricates a chip, qualifies its stable cells and wraps both.
    pub fn provision(params: &PufParams, chip_id: u64) -> Result<Self, PufError> {
        let chip = SramChip::fabricate(chip_id, params.cell_count, params.stable_fraction)?;
        let mut noise = ChaCha20Rng::seed_from_u64(chip_id ^ 0x5155_414c_4946_5900);
        let pool = chip.find_stable_cells(params.qualification_reads, params.fingerprint_bits, &mut noise)?;
        PufFunction::new(chip, pool, params.fingerprint_bits)
    }

    pub fn chip(&self) -> &SramChip {
        &self.chip
    }

    pub fn pool(&self) -> &StablePool {
        &self.pool
    }

    pub fn fingerprint_size(&self) -> usize {
        self.fingerprint_size
    }

    /// Response at the zero-noise operating point.
    pub fn respond(&self, challenge: &Word256) -> Result<Word256, PufError> {
        self.respond_with(challenge, &mut Noise::Silent)
    }

    pub fn respond_with(&self, challenge: &Word256, noise: &mut Noise<'_>) -> Result<Word256, PufError> {
        let addresses = expand_challenge(challenge, &self.pool, self.fingerprint_size)?;
        let read = self.chip.power_on_read(noise);
        let fingerprint = pack_bits(addresses.iter().map(|&a| read[a as usize]));
        Ok(hash_fields(&[challenge.into(), (&fingerprint).into()]))
    }

    pub fn write_identity<W: Write>(&self, mut out: W) -> Result<(), PufError> {
        out.write_all(IDENTITY_MAGIC)?;
        out.write_all(&[IDENTITY_VERSION])?;
        out.write_all(&self.chip.chip_id.to_be_bytes())?;
        out.write_all(&(self.chip.cells.len() as u32).to_be_bytes())?;
        for cell in &self.chip.cells {
            out.write_all(&[cell.nominal_bit as u8])?;
            out.write_all(&cell.flip_probability.to_be_bytes())?;
        }
        out.write_all(&(self.fingerprint_size as u32).to_be_bytes())?;
        out.write_all(&self.pool.read_count.to_be_bytes())?;
        out.write_all(&(self.pool.addresses.len() as u32).to_be_bytes())?;
        for a in &self.pool.addresses {
            out.write_all(&a.to_be_bytes())?;
        }
        Ok(())
    }

    pub fn read_identity<R: Read>(mut input: R) -> Result<Self, PufError> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        let mut cur = ByteCursor { buf: &buf, pos: 0 };
        if cur.take(4)? != IDENTITY_MAGIC {
            return Err(PufError::CorruptIdentity("bad magic".into()));
        }
        let version = cur.take(1)?[0];
        if version != IDENTITY_VERSION {
            return Err(PufError::CorruptIdentity(format!("unsupported version {version}")));
        }
        let chip_id = cur.u64()?;
        let cell_count = cur.u32()? as usize;
        if cell_count > (buf.len() - cur.pos) / 9 {
            return Err(PufError::CorruptIdentity("cell count exceeds file size".into()));
        }
        let mut cells = Vec::with_capacity(cell_count);
        for _ in 0..cell_count {
            let nominal = match cur.take(1)?[0] {
                0 => false,
                1 => true,
                other => return Err(PufError::CorruptIdentity(format!("bad cell bit {other}"))),
            };
            let flip = f64::from_be_bytes(cur.take(8)?.try_into().expect("8 bytes"));
            cells.push(CellModel { nominal_bit: nominal, flip_probability: flip });
        }
        let fingerprint_size = cur.u32()? as usize;
        let read_count = cur.u32()?;
        let pool_len = cur.u32()? as usize;
        if pool_len > (buf.len() - cur.pos) / 4 {
            return Err(PufError::CorruptIdentity("pool length exceeds file size".into()));
        }
        let addresses = (0..pool_len).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        if cur.pos != buf.len() {
            return Err(PufError::CorruptIdentity("trailing bytes".into()));
        }
        let corrupt = |e: PufError| PufError::CorruptIdentity(e.to_string());
        let chip = SramChip::from_cells(chip_id, cells).map_err(corrupt)?;
        let pool = StablePool::new(addresses, read_count, chip.cell_count()).map_err(corrupt)?;
        PufFunction::new(chip, pool, fingerprint_size).map_err(corrupt)
    }
}

struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PufError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| PufError::CorruptIdentity("truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, PufError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, PufError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Manufacturing and enrollment parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PufParams {
    pub cell_count: usize,
    pub stable_fraction: f64,
    pub fingerprint_bits: usize,
    pub qualification_reads: u32,
}

impl Default for PufParams {
    fn default() -> Self {
        PufParams {
            cell_count: DEFAULT_CELL_COUNT,
            stable_fraction: DEFAULT_STABLE_FRACTION,
            fingerprint_bits: DEFAULT_FINGERPRINT_BITS,
            qualification_reads: DEFAULT_QUALIFICATION_READS,
        }
    }
}

/// Hamming-distance summary in bits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceStats {
    pub mean: f64,
    pub min: u32,
    pub max: u32,
    pub samples: usize,
}

impl DistanceStats {
    fn from_distances(distances: &[u32]) -> Self {
        if distances.is_empty() {
            return DistanceStats { mean: 0.0, min: 0, max: 0, samples: 0 };
        }
        let sum: u64 = distances.iter().map(|&d| d as u64).sum();
        DistanceStats {
            mean: sum as f64 / distances.len() as f64,
            min: *distances.iter().min().expect("non-empty"),
            max: *distances.iter().max().expect("non-empty"),
            samples: distances.len(),
        }
    }

    pub fn mean_fraction(&self) -> f64 {
        self.mean / WORD_BITS as f64
    }
}

fn pairwise(responses: &[Word256]) -> Vec<u32> {
    let mut out = Vec::new();
    for i in 0..responses.len() {
        for j in i + 1..responses.len() {
            out.push(responses[i].hamming(&responses[j]));
        }
    }
    out
}

/// Pairwise distances between `trials` responses of one PUF to one challenge.
pub fn intra_distance(
    puf: &PufFunction,
    challenge: &Word256,
    trials: usize,
    noise: &mut Noise<'_>,
) -> Result<DistanceStats, PufError> {
    if trials < 2 {
        return Err(PufError::Config("intra-distance needs at least two trials".into()));
    }
    let responses = (0..trials)
        .map(|_| puf.respond_with(challenge, noise))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DistanceStats::from_distances(&pairwise(&responses)))
}

/// Pairwise distances between the responses of distinct PUFs to one challenge.
pub fn inter_distance(pufs: &[PufFunction], challenge: &Word256) -> Result<DistanceStats, PufError> {
    if pufs.len() < 2 {
        return Err(PufError::Config("inter-distance needs at least two PUFs".into()));
    }
    let responses = pufs
        .iter()
        .map(|p| p.respond(challenge))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DistanceStats::from_distances(&pairwise(&responses)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{SeededWords, WordSource};
    use proptest::prelude::*;

    fn small_params() -> PufParams {
        PufParams { cell_count: 1024, ..PufParams::default() }
    }

    fn chip_hamming(a: &SramChip, b: &SramChip) -> usize {
        a.cells().iter().zip(b.cells()).filter(|(x, y)| x.nominal_bit != y.nominal_bit).count()
    }

    #[test]
    fn fabrication_is_deterministic() {
        let a = SramChip::fabricate(11, 1024, 0.85).unwrap();
        let b = SramChip::fabricate(11, 1024, 0.85).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fabrication_rejects_bad_parameters() {
        assert!(matches!(SramChip::fabricate(1, 511, 0.85), Err(PufError::Config(_))));
        assert!(matches!(SramChip::fabricate(1, 1024, 0.0), Err(PufError::Config(_))));
        assert!(matches!(SramChip::fabricate(1, 1024, 1.01), Err(PufError::Config(_))));
    }

    #[test]
    fn full_stability_means_no_flips() {
        let chip = SramChip::fabricate(5, 1024, 1.0).unwrap();
        assert!(chip.cells().iter().all(CellModel::is_stable));
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let read = chip.power_on_read(&mut Noise::Sampled(&mut rng));
        assert_eq!(read, chip.nominal_bits());
        assert_eq!(read, chip.power_on_read(&mut Noise::Sampled(&mut rng)));
    }

    #[test]
    fn distinct_chips_differ_in_about_half_their_cells() {
        let n = 4096;
        for pair in 0..100u64 {
            let a = SramChip::fabricate(2 * pair, n, 0.85).unwrap();
            let b = SramChip::fabricate(2 * pair + 1, n, 0.85).unwrap();
            let d = chip_hamming(&a, &b) as f64 / n as f64;
            assert!((0.45..=0.55).contains(&d), "pair {pair}: {d}");
        }
    }

    #[test]
    fn half_probability_cell_flips_half_the_time() {
        let cells = vec![CellModel { nominal_bit: false, flip_probability: 0.5 }; 512];
        let chip = SramChip::from_cells(0, cells).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let mut flips = 0;
        for _ in 0..10_000 {
            flips += chip.power_on_read(&mut Noise::Sampled(&mut rng))[0] as u32;
        }
        let freq = flips as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&freq), "{freq}");
    }

    fn planted_chip() -> SramChip {
        let mut cells = vec![CellModel { nominal_bit: true, flip_probability: 0.0 }; 512];
        for (i, c) in cells.iter_mut().enumerate() {
            c.nominal_bit = i % 3 == 0;
        }
        cells[3].flip_probability = 0.5;
        cells[17].flip_probability = 0.5;
        SramChip::from_cells(9, cells).unwrap()
    }

    #[test]
    fn planted_unstable_cells_are_excluded() {
        let chip = planted_chip();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let pool = chip.find_stable_cells(31, 96, &mut rng).unwrap();
        assert!(!pool.addresses().contains(&3));
        assert!(!pool.addresses().contains(&17));
        assert_eq!(pool.len(), 510);
        assert!(pool.addresses().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_read_accepts_every_cell() {
        let chip = planted_chip();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let pool = chip.find_stable_cells(1, 96, &mut rng).unwrap();
        assert_eq!(pool.len(), 512);
        assert!(matches!(
            chip.find_stable_cells(0, 96, &mut rng),
            Err(PufError::Config(_))
        ));
    }

    #[test]
    fn fully_stable_chip_pools_everything() {
        let chip = SramChip::fabricate(8, 600, 1.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let pool = chip.find_stable_cells(31, 96, &mut rng).unwrap();
        assert_eq!(pool.addresses(), (0..600).collect::<Vec<u32>>().as_slice());
    }

    #[test]
    fn too_few_stable_cells_is_unusable() {
        let cells = vec![CellModel { nominal_bit: true, flip_probability: 0.5 }; 512];
        let chip = SramChip::from_cells(1, cells).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        assert!(matches!(
            chip.find_stable_cells(31, 96, &mut rng),
            Err(PufError::ChipUnusable { .. })
        ));
    }

    #[test]
    fn expansion_of_exact_pool_is_a_permutation() {
        let pool = StablePool::new((100..196).collect(), 31, 512).unwrap();
        let c = SeededWords::new(1).next_word();
        let mut out = expand_challenge(&c, &pool, 96).unwrap();
        assert_eq!(out, expand_challenge(&c, &pool, 96).unwrap());
        out.sort_unstable();
        assert_eq!(out, pool.addresses().to_vec());
        assert!(matches!(
            expand_challenge(&c, &pool, 97),
            Err(PufError::ChipUnusable { found: 96, required: 97 })
        ));
    }

    #[test]
    fn expansion_matches_hash_chain_oracle() {
        // Independent restatement of the selection rule over big integers.
        let pool = StablePool::new(vec![5, 9, 13, 40, 41, 77, 300], 2, 512).unwrap();
        let c = SeededWords::new(2).next_word();
        let mut remaining: Vec<u32> = pool.addresses().to_vec();
        let mut expected = Vec::new();
        for i in 0..4u64 {
            let mut input = c.0.to_vec();
            input.extend_from_slice(&[0u8; 24]);
            input.extend_from_slice(&i.to_be_bytes());
            let digest = crate::crypto::hash256(&input);
            let mut rem: u128 = 0;
            for byte in digest.0 {
                rem = (rem * 256 + byte as u128) % remaining.len() as u128;
            }
            expected.push(remaining.remove(rem as usize));
        }
        assert_eq!(expand_challenge(&c, &pool, 4).unwrap(), expected);
    }

    #[test]
    fn one_bit_challenge_change_reorders_selection() {
        let puf = PufFunction::provision(&small_params(), 4).unwrap();
        let mut words = SeededWords::new(99);
        let mut differing = 0;
        for _ in 0..1000 {
            let c = words.next_word();
            let a = expand_challenge(&c, puf.pool(), 96).unwrap();
            let b = expand_challenge(&c.with_bit_flipped(200), puf.pool(), 96).unwrap();
            differing += (a != b) as u32;
        }
        assert!(differing >= 950, "{differing}");
    }

    #[test]
    fn response_is_reproducible_at_zero_noise() {
        let puf = PufFunction::provision(&small_params(), 21).unwrap();
        let c = SeededWords::new(4).next_word();
        assert_eq!(puf.respond(&c).unwrap(), puf.respond(&c).unwrap());
        let stats = intra_distance(&puf, &c, 2, &mut Noise::Silent).unwrap();
        assert_eq!((stats.mean, stats.max), (0.0, 0));
    }

    #[test]
    fn response_binds_challenge_and_fingerprint() {
        let puf = PufFunction::provision(&small_params(), 22).unwrap();
        let c = SeededWords::new(5).next_word();
        let addrs = expand_challenge(&c, puf.pool(), 96).unwrap();
        let bits = puf.chip().nominal_bits();
        let fp = pack_bits(addrs.iter().map(|&a| bits[a as usize]));
        let mut input = c.0.to_vec();
        input.extend_from_slice(&fp.0);
        assert_eq!(puf.respond(&c).unwrap(), crate::crypto::hash256(&input));
        // 96 bits leave the trailing 20 bytes zero.
        assert!(fp.0[12..].iter().all(|&b| b == 0));
    }

    #[test]
    fn corrupted_pool_shows_nonzero_intra_distance() {
        let chip = planted_chip();
        let mut addresses: Vec<u32> = (20..115).collect();
        addresses.push(3);
        let pool = StablePool::new(addresses, 31, chip.cell_count()).unwrap();
        let puf = PufFunction::new(chip, pool, 96).unwrap();
        let c = SeededWords::new(6).next_word();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let stats = intra_distance(&puf, &c, 20, &mut Noise::Sampled(&mut rng)).unwrap();
        assert!(stats.mean > 0.0);
        assert!(stats.max > 64);
    }

    #[test]
    fn cloned_chips_have_zero_inter_distance() {
        let a = PufFunction::provision(&small_params(), 30).unwrap();
        let b = PufFunction::provision(&small_params(), 30).unwrap();
        let c = SeededWords::new(7).next_word();
        assert_eq!(inter_distance(&[a, b], &c).unwrap().mean, 0.0);
    }

    #[test]
    fn inter_distance_single_pair_matches_direct_hamming() {
        let a = PufFunction::provision(&small_params(), 31).unwrap();
        let b = PufFunction::provision(&small_params(), 32).unwrap();
        let c = SeededWords::new(8).next_word();
        let ra = a.respond(&c).unwrap();
        let rb = b.respond(&c).unwrap();
        let direct: u32 = ra.0.iter().zip(rb.0.iter()).map(|(x, y)| (x ^ y).count_ones()).sum();
        let stats = inter_distance(&[a, b], &c).unwrap();
        assert_eq!(stats.samples, 1);
        assert_eq!(stats.min, direct);
        assert_eq!(stats.mean, direct as f64);
    }

    #[test]
    fn twenty_chips_are_unique() {
        let pufs: Vec<_> = (0..20).map(|i| PufFunction::provision(&PufParams::default(), 1000 + i).unwrap()).collect();
        let c = SeededWords::new(9).next_word();
        let stats = inter_distance(&pufs, &c).unwrap();
        assert_eq!(stats.samples, 190);
        assert!((115.0..=141.0).contains(&stats.mean), "{}", stats.mean);
    }

    #[test]
    fn same_chip_different_challenges_are_far_apart() {
        let puf = PufFunction::provision(&small_params(), 40).unwrap();
        let mut words = SeededWords::new(10);
        let total: u32 = (0..100)
            .map(|_| {
                let c = words.next_word();
                let c2 = words.next_word();
                puf.respond(&c).unwrap().hamming(&puf.respond(&c2).unwrap())
            })
            .sum();
        let mean = total as f64 / 100.0;
        assert!((115.0..=141.0).contains(&mean), "{mean}");
    }

    #[test]
    fn response_bits_are_balanced() {
        let pufs: Vec<_> = (0..10).map(|i| PufFunction::provision(&small_params(), 500 + i).unwrap()).collect();
        let mut words = SeededWords::new(11);
        let mut ones = [0u32; 256];
        for i in 0..1000 {
            let r = pufs[i % 10].respond(&words.next_word()).unwrap();
            for (b, count) in ones.iter_mut().enumerate() {
                *count += r.bit(b) as u32;
            }
        }
        let overall = ones.iter().sum::<u32>() as f64 / (1000.0 * 256.0);
        assert!((0.47..=0.53).contains(&overall), "{overall}");
        // Per bit, one binomial standard deviation is about 0.016 at n = 1000.
        for count in ones {
            let f = count as f64 / 1000.0;
            assert!((0.42..=0.58).contains(&f), "{f}");
        }
    }

    #[test]
    fn identity_file_round_trips_and_rejects_damage() {
        let puf = PufFunction::provision(&small_params(), 50).unwrap();
        let mut bytes = Vec::new();
        puf.write_identity(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"SPUF");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..13], &50u64.to_be_bytes());
        assert_eq!(&bytes[13..17], &1024u32.to_be_bytes());
        let back = PufFunction::read_identity(bytes.as_slice()).unwrap();
        assert_eq!(back, puf);

        assert!(matches!(
            PufFunction::read_identity(&bytes[..bytes.len() - 1]),
            Err(PufError::CorruptIdentity(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(PufFunction::read_identity(bad.as_slice()), Err(PufError::CorruptIdentity(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(PufFunction::read_identity(extra.as_slice()), Err(PufError::CorruptIdentity(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn expansion_never_repeats(seed in any::<[u8; 32]>(), extra in 0usize..200) {
            let pool = StablePool::new((0..(96 + extra as u32)).collect(), 2, 512).unwrap();
            let out = expand_challenge(&Word256(seed), &pool, 96).unwrap();
            let mut dedup = out.clone();
            dedup.sort_unstable();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), 96);
            prop_assert!(out.iter().all(|a| pool.addresses().contains(a)));
        }
    }
}
