//! What a passive observer of the open channel can compute.
//!
//! The observer's atoms are the thirteen 256-bit message fields of one
//! handshake plus a word carrying the cleartext identifiers. Secrets are
//! checked against every XOR combination of atoms, against the GF(2) span
//! (an independent cross-check of the same question), and against a
//! depth-bounded closure that adds one layer of hashing.

use std::collections::HashSet;

use crate::crypto::{hash_fields, DeviceId, Field, Word256};
use crate::protocol::{Frame, WireMessage};

use super::sim::SessionRun;

pub const ATOM_COUNT: usize = 14;

/// Open-channel words of one handshake, in a fixed order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpenAtoms {
    pub names: Vec<&'static str>,
    pub words: Vec<Word256>,
    pub device_id: DeviceId,
    pub client_id: DeviceId,
}

impl OpenAtoms {
    /// Collects the atoms from honest open-channel frames. Returns `None`
    /// when the handshake did not put every message on the wire.
    pub fn from_frames(frames: &[Frame]) -> Option<Self> {
        let mut ids = None;
        let mut auth = None;
        let mut rotate = None;
        let mut nonce = None;
        let mut reply = None;
        for frame in frames {
            match frame.message {
                WireMessage::ConnEstablish(m) => ids = Some((m.device_id, m.client_id)),
                WireMessage::AuthChallenge(m) => auth = Some(m),
                WireMessage::CrpRotate(m) => rotate = Some(m),
                WireMessage::ClientNonce(m) => nonce = Some(m),
                WireMessage::DeviceNonce(m) => reply = Some(m),
                _ => {}
            }
        }
        let (device_id, client_id) = ids?;
        let (a, r, n, d) = (auth?, rotate?, nonce?, reply?);
        let names = vec![
            "M1", "M2", "M3", "M4", "M5", "M6", "M7", "M8", "M10", "M11", "M12", "M13", "C_p", "Id_p|Id_c",
        ];
        let words = vec![
            a.m1,
            a.m2,
            a.m3,
            a.m4,
            r.m5,
            r.m6,
            r.m7,
            r.m8,
            n.m10,
            n.m11,
            d.m12,
            d.m13,
            a.challenge,
            identity_word(device_id, client_id),
        ];
        debug_assert_eq!(words.len(), ATOM_COUNT);
        Some(OpenAtoms { names, words, device_id, client_id })
    }

    pub fn get(&self, name: &str) -> Option<&Word256> {
        self.names.iter().position(|n| *n == name).map(|i| &self.words[i])
    }
}

/// Id_p followed by Id_c, zero-padded to a word.
pub fn identity_word(device_id: DeviceId, client_id: DeviceId) -> Word256 {
    let mut bytes = [0u8; 32];
    bytes[..4].copy_from_slice(&device_id.to_be_bytes());
    bytes[4..8].copy_from_slice(&client_id.to_be_bytes());
    Word256::from_bytes(bytes)
}

/// Ground-truth secrets of one handshake.
#[derive(Clone, Debug)]
pub struct Secrets {
    pub named: Vec<(&'static str, Word256)>,
}

impl Secrets {
    /// Reads the secrets out of the parties' terminal states.
    pub fn from_run(run: &SessionRun) -> Option<Self> {
        let server = run.server.as_ref()?;
        let device = run.device.as_ref()?;
        let (_, new_response) = device.new_crp();
        let key = *run.client_key()?.as_word();
        let response = run
            .store_before
            .crps()
            .find(|r| r.device_id == server.device_id())
            .map(|r| r.response)?;
        Some(Secrets {
            named: vec![
                ("R_p", response),
                ("R_pnew", new_response),
                ("T1", *server.t1()),
                ("T2", *server.t2()),
                ("Id_c'", *server.alias()),
                ("N_c", *device.client_nonce()?),
                ("N_p", *device.device_nonce()?),
                ("session key", key),
            ],
        })
    }

    pub fn get(&self, name: &str) -> Option<&Word256> {
        self.named.iter().find(|(n, _)| *n == name).map(|(_, w)| w)
    }
}

/// A subset of atoms whose XOR equals a secret.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecretHit {
    pub secret: &'static str,
    pub subset: Vec<&'static str>,
}

/// Walks all 2^n subsets in Gray-code order, one XOR per step, and
/// reports every subset that reproduces a secret. The empty subset is
/// included; it only matters when a secret is zero.
pub fn enumerate_xor_subsets(atoms: &OpenAtoms, secrets: &Secrets) -> (u64, Vec<SecretHit>) {
    let n = atoms.words.len();
    assert!(n < 32, "subset enumeration is exponential");
    let mut hits = Vec::new();
    let mut acc = Word256::ZERO;
    let check = |mask: u64, acc: &Word256, hits: &mut Vec<SecretHit>| {
        for (name, secret) in &secrets.named {
            if acc == secret {
                let subset = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| atoms.names[i]).collect();
                hits.push(SecretHit { secret: name, subset });
            }
        }
    };
    check(0, &acc, &mut hits);
    let total = 1u64 << n;
    for step in 1..total {
        let flip = step.trailing_zeros() as usize;
        acc ^= atoms.words[flip];
        let mask = step ^ (step >> 1);
        check(mask, &acc, &mut hits);
    }
    (total, hits)
}

/// Row-reduced basis of a set of words over GF(2).
#[derive(Clone, Debug, Default)]
pub struct XorBasis {
    rows: Vec<(usize, Word256)>,
}

impl XorBasis {
    pub fn new(words: &[Word256]) -> Self {
        let mut basis = XorBasis::default();
        for w in words {
            basis.insert(*w);
        }
        basis
    }

    /// Reduces `w` modulo the span. The basis is kept in reduced row
    /// echelon form, which makes this map linear.
    pub fn reduce(&self, mut w: Word256) -> Word256 {
        for (pivot, row) in &self.rows {
            if w.bit(*pivot) {
                w ^= *row;
            }
        }
        w
    }

    /// Adds `w`; returns false when it was already in the span.
    pub fn insert(&mut self, w: Word256) -> bool {
        let r = self.reduce(w);
        match (0..256).find(|&i| r.bit(i)) {
            Some(pivot) => {
                for (_, row) in self.rows.iter_mut() {
                    if row.bit(pivot) {
                        *row ^= r;
                    }
                }
                self.rows.push((pivot, r));
                true
            }
            None => false,
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    pub fn contains(&self, w: &Word256) -> bool {
        self.reduce(*w) == Word256::ZERO
    }
}

/// One of the nine published relations between M1, M2, M3 and the secrets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityCheck {
    pub number: u8,
    /// How the left side is formed from observable fields.
    pub observable: &'static str,
    pub holds: bool,
}

/// Checks the nine relations on one transcript.
///
/// Relations 1-5 and 7 are read literally. Relation 6 is stated as
/// `(2) xor (3)` but the literal combination cancels to M1 xor M2; its
/// right-hand side, on which 8 and 9 depend, equals M1 xor M2 xor M3. That
/// is the form checked here; [`literal_relation_six_holds`] reports the
/// literal reading separately.
pub fn check_identities(atoms: &OpenAtoms, secrets: &Secrets) -> Vec<IdentityCheck> {
    let m = |n: &str| *atoms.get(n).expect("atom present");
    let s = |n: &str| *secrets.get(n).expect("secret present");
    let (m1, m2, m3) = (m("M1"), m("M2"), m("M3"));
    let (t1, t2, rp, alias) = (s("T1"), s("T2"), s("R_p"), s("Id_c'"));
    let h = hash_fields(&[Field::Word(&t1), Field::Word(&t2)]);

    let e1 = m1 ^ m2;
    let e2 = m1 ^ m3;
    let e3 = m2 ^ m3;
    let e4 = e1 ^ e2;
    let e5 = e1 ^ e3;
    let e6 = m1 ^ m2 ^ m3;
    let e7 = e4 ^ e5;
    let e8 = e4 ^ e6;
    let e9 = e5 ^ e6;

    let rows = [
        (1, "M1^M2", e1 == rp ^ t2),
        (2, "M1^M3", e2 == (t1 ^ rp) ^ (h ^ alias)),
        (3, "M2^M3", e3 == (t1 ^ t2) ^ (h ^ alias)),
        (4, "(1)^(2)", e4 == (t1 ^ t2) ^ (h ^ alias)),
        (5, "(1)^(3)", e5 == (t1 ^ rp) ^ (h ^ alias)),
        (6, "M1^M2^M3", e6 == (t2 ^ rp) ^ (h ^ alias)),
        (7, "(4)^(5)", e7 == e1),
        (8, "(4)^(6)", e8 == m1),
        (9, "(5)^(6)", e9 == m2),
    ];
    rows.into_iter()
        .map(|(number, observable, holds)| IdentityCheck { number, observable, holds })
        .collect()
}

/// Whether `(M1^M3) ^ (M2^M3)` equals the stated right side of relation 6.
pub fn literal_relation_six_holds(atoms: &OpenAtoms, secrets: &Secrets) -> bool {
    let m = |n: &str| *atoms.get(n).expect("atom present");
    let s = |n: &str| *secrets.get(n).expect("secret present");
    let (t1, t2) = (s("T1"), s("T2"));
    let h = hash_fields(&[Field::Word(&t1), Field::Word(&t2)]);
    let literal = (m("M1") ^ m("M3")) ^ (m("M2") ^ m("M3"));
    literal == (t2 ^ s("R_p")) ^ (h ^ s("Id_c'"))
}

/// Result of the full eavesdropping analysis on one transcript.
#[derive(Clone, Debug)]
pub struct EavesdropReport {
    pub subsets_checked: u64,
    pub hits: Vec<SecretHit>,
    /// Secrets lying in the GF(2) span of the atoms.
    pub span_hits: Vec<&'static str>,
    pub span_rank: usize,
    pub identities: Vec<IdentityCheck>,
    pub literal_relation_six: bool,
    /// Secrets inside the depth-bounded knowledge closure.
    pub closure_hits: Vec<&'static str>,
}

impl EavesdropReport {
    pub fn analyze(atoms: &OpenAtoms, secrets: &Secrets) -> Self {
        let (subsets_checked, hits) = enumerate_xor_subsets(atoms, secrets);
        let basis = XorBasis::new(&atoms.words);
        let span_hits = secrets.named.iter().filter(|(_, w)| basis.contains(w)).map(|(n, _)| *n).collect();
        let knowledge = Knowledge::from_atoms(atoms);
        let closure_hits = secrets.named.iter().filter(|(_, w)| knowledge.contains(w)).map(|(n, _)| *n).collect();
        EavesdropReport {
            subsets_checked,
            hits,
            span_hits,
            span_rank: basis.rank(),
            identities: check_identities(atoms, secrets),
            literal_relation_six: literal_relation_six_holds(atoms, secrets),
            closure_hits,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.hits.is_empty() && self.span_hits.is_empty() && self.closure_hits.is_empty()
    }

    pub fn identities_hold(&self) -> bool {
        self.identities.len() == 9 && self.identities.iter().all(|c| c.holds)
    }
}

/// Words an open-channel observer can compute, bounded at depth two: any
/// XOR of atoms, optionally XORed with one hash over a tuple of atoms.
/// Tuples are ordered pairs and triples, and triples followed by Id_p in
/// the shape of the session-key derivation.
#[derive(Clone, Debug)]
pub struct Knowledge {
    basis: XorBasis,
    /// Hashes reduced modulo the span; reduction is linear, so `w ^ h` lies
    /// in the span exactly when `w` and `h` reduce to the same word.
    reduced_hashes: HashSet<Word256>,
    hash_count: usize,
}

impl Knowledge {
    pub fn from_atoms(atoms: &OpenAtoms) -> Self {
        Self::from_words(&atoms.words, &[atoms.device_id])
    }

    /// Knowledge from every word and identifier carried by `frames`.
    pub fn from_frames(frames: &[Frame]) -> Self {
        let mut words = Vec::new();
        let mut ids = Vec::new();
        for frame in frames {
            match frame.message {
                WireMessage::ConnReq(m) => ids.push(m.client_id),
                WireMessage::ConnEstablish(m) => {
                    ids.extend([m.device_id, m.client_id]);
                    words.push(identity_word(m.device_id, m.client_id));
                }
                ref other => words.extend(other.words()),
            }
        }
        words.sort_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
        words.dedup();
        ids.sort_by_key(|id| id.0);
        ids.dedup();
        Self::from_words(&words, &ids)
    }

    fn from_words(words: &[Word256], ids: &[DeviceId]) -> Self {
        let basis = XorBasis::new(words);
        let mut reduced_hashes = HashSet::new();
        let mut hash_count = 0;
        let mut push = |h: Word256| {
            hash_count += 1;
            reduced_hashes.insert(basis.reduce(h));
        };
        for a in words {
            for b in words {
                push(hash_fields(&[Field::Word(a), Field::Word(b)]));
                for c in words {
                    push(hash_fields(&[Field::Word(a), Field::Word(b), Field::Word(c)]));
                    for id in ids {
                        push(hash_fields(&[Field::Word(a), Field::Word(b), Field::Word(c), Field::Id(*id)]));
                    }
                }
            }
        }
        Knowledge { basis, reduced_hashes, hash_count }
    }

    pub fn contains(&self, w: &Word256) -> bool {
        let r = self.basis.reduce(*w);
        r == Word256::ZERO || self.reduced_hashes.contains(&r)
    }

    /// Number of hash tuples evaluated.
    pub fn hash_count(&self) -> usize {
        self.hash_count
    }
}
