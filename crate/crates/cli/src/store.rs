//! Line-oriented credential store with atomic rewrites.
//!
//! ```text
//! PUFKEX-STORE 1
//! CRP <device_id> <challenge> <response>
//! CLIENT <client_id> <alias>
//! ```
//!
//! Every change rewrites the whole file: write `<path>.tmp`, fsync it,
//! rename it over the store, fsync the directory. A crash leaves either
//! the old or the new file in place; a stale temp file is discarded on
//! load.

use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{debug, warn};
use pufkex_core::crypto::{DeviceId, Word256};
use pufkex_core::protocol::{ClientRecord, CredentialStore, CrpRecord, MemoryStore, ProtocolError};
use thiserror::Error;

pub const STORE_HEADER: &str = "PUFKEX-STORE 1";

/// Places in the write path where a simulated crash can stop it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CrashPoint {
    BeforeTempWrite,
    PartialTempWrite,
    AfterTempSync,
    AfterRename,
    AfterDirSync,
}

impl CrashPoint {
    pub const ALL: [CrashPoint; 5] = [
        CrashPoint::BeforeTempWrite,
        CrashPoint::PartialTempWrite,
        CrashPoint::AfterTempSync,
        CrashPoint::AfterRename,
        CrashPoint::AfterDirSync,
    ];
}

impl fmt::Display for CrashPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CrashPoint::BeforeTempWrite => "before-temp-write",
            CrashPoint::PartialTempWrite => "partial-temp-write",
            CrashPoint::AfterTempSync => "after-temp-sync",
            CrashPoint::AfterRename => "after-rename",
            CrashPoint::AfterDirSync => "after-dir-sync",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("store already exists at {0}")]
    Exists(PathBuf),
    #[error("simulated crash {0}")]
    InjectedCrash(CrashPoint),
}

impl From<StoreError> for ProtocolError {
    fn from(e: StoreError) -> Self {
        ProtocolError::Storage(e.to_string())
    }
}

/// Credential store persisted to a single text file.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    records: MemoryStore,
    crash: Option<CrashPoint>,
}

impl FileStore {
    /// Creates an empty store; fails if one already exists.
    pub fn create(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        if path.exists() {
            return Err(StoreError::Exists(path));
        }
        let store = FileStore { path, records: MemoryStore::new(), crash: None };
        store.persist(&store.records)?;
        Ok(store)
    }

    /// Loads an existing store, discarding any leftover temp file.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let tmp = temp_path(&path);
        if tmp.exists() {
            warn!("discarding incomplete store write {}", tmp.display());
            fs::remove_file(&tmp)?;
        }
        let text = fs::read_to_string(&path)?;
        let records = parse(&text)?;
        Ok(FileStore { path, records, crash: None })
    }

    pub fn open_or_create(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        if path.exists() {
            Self::open(path)
        } else {
            Self::create(path)
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &MemoryStore {
        &self.records
    }

    /// Makes the next write stop at `point` as if the process had died.
    pub fn inject_crash(&mut self, point: CrashPoint) {
        self.crash = Some(point);
    }

    fn persist(&self, next: &MemoryStore) -> Result<(), StoreError> {
        let crash = self.crash;
        let stop = |point| if crash == Some(point) { Err(StoreError::InjectedCrash(point)) } else { Ok(()) };

        stop(CrashPoint::BeforeTempWrite)?;
        let text = render(next);
        let tmp = temp_path(&self.path);
        let mut file = File::create(&tmp)?;
        if crash == Some(CrashPoint::PartialTempWrite) {
            file.write_all(&text.as_bytes()[..text.len() / 2])?;
            return Err(StoreError::InjectedCrash(CrashPoint::PartialTempWrite));
        }
        file.write_all(text.as_bytes())?;
        file.sync_all()?;
        drop(file);
        stop(CrashPoint::AfterTempSync)?;
        fs::rename(&tmp, &self.path)?;
        stop(CrashPoint::AfterRename)?;
        sync_dir(&self.path)?;
        stop(CrashPoint::AfterDirSync)?;
        debug!("store written to {}", self.path.display());
        Ok(())
    }

    /// Persists `next`, then adopts it in memory.
    fn commit(&mut self, next: MemoryStore) -> Result<(), StoreError> {
        let result = self.persist(&next);
        self.crash = None;
        result?;
        self.records = next;
        Ok(())
    }
}

impl CredentialStore for FileStore {
    fn crp(&self, device: DeviceId) -> Option<CrpRecord> {
        self.records.crp(device)
    }

    fn client(&self, client: DeviceId) -> Option<ClientRecord> {
        self.records.client(client)
    }

    fn insert_crp(&mut self, record: CrpRecord) -> Result<(), ProtocolError> {
        let mut next = self.records.clone();
        next.insert_crp(record)?;
        Ok(self.commit(next)?)
    }

    fn replace_crp(&mut self, record: CrpRecord) -> Result<(), ProtocolError> {
        let mut next = self.records.clone();
        next.replace_crp(record)?;
        Ok(self.commit(next)?)
    }

    fn insert_client(&mut self, record: ClientRecord) -> Result<(), ProtocolError> {
        let mut next = self.records.clone();
        next.insert_client(record)?;
        Ok(self.commit(next)?)
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

#[cfg(unix)]
fn sync_dir(path: &Path) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    File::open(dir)?.sync_all()
}

#[cfg(not(unix))]
fn sync_dir(_path: &Path) -> std::io::Result<()> {
    Ok(())
}

/// Serializes records in canonical order: CRPs then clients, each sorted by id.
pub fn render(records: &MemoryStore) -> String {
    let mut out = String::from(STORE_HEADER);
    out.push('\n');
    for r in records.crps() {
        out.push_str(&format!("CRP {} {} {}\n", r.device_id, r.challenge.to_hex(), r.response.to_hex()));
    }
    for c in records.clients() {
        out.push_str(&format!("CLIENT {} {}\n", c.client_id, c.alias.to_hex()));
    }
    out
}

pub fn parse(text: &str) -> Result<MemoryStore, StoreError> {
    let corrupt = |line: usize, reason: &str| StoreError::Corrupt { line, reason: reason.to_string() };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, STORE_HEADER)) => {}
        Some((n, _)) => return Err(corrupt(n, "missing or unsupported header")),
        None => return Err(corrupt(1, "empty file")),
    }
    if !text.ends_with('\n') {
        return Err(corrupt(text.lines().count(), "truncated final line"));
    }
    let mut store = MemoryStore::new();
    for (n, line) in lines {
        let parts: Vec<&str> = line.split(' ').collect();
        let id = |s: &str| {
            if s.len() != 8 {
                return Err(corrupt(n, "identifier must be 8 hex digits"));
            }
            u32::from_str_radix(s, 16).map(DeviceId).map_err(|_| corrupt(n, "bad identifier"))
        };
        let word = |s: &str| Word256::from_hex(s).map_err(|_| corrupt(n, "bad 256-bit value"));
        match parts.as_slice() {
            ["CRP", d, c, r] => {
                let record = CrpRecord { device_id: id(d)?, challenge: word(c)?, response: word(r)? };
                store.insert_crp(record).map_err(|_| corrupt(n, "second CRP for device"))?;
            }
            ["CLIENT", c, a] => {
                let record = ClientRecord { client_id: id(c)?, alias: word(a)? };
                store.insert_client(record).map_err(|_| corrupt(n, "duplicate client"))?;
            }
            _ => return Err(corrupt(n, "unrecognized record")),
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MemoryStore {
        let mut s = MemoryStore::new();
        s.insert_crp(CrpRecord { device_id: DeviceId(2), challenge: Word256::from_u64(5), response: Word256::from_u64(6) })
            .unwrap();
        s.insert_crp(CrpRecord { device_id: DeviceId(1), challenge: Word256::from_u64(3), response: Word256::from_u64(4) })
            .unwrap();
        s.insert_client(ClientRecord { client_id: DeviceId(9), alias: Word256::from_u64(7) }).unwrap();
        s
    }

    #[test]
    fn render_is_canonical_and_parses_back() {
        let text = render(&sample());
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(STORE_HEADER));
        assert!(lines.next().unwrap().starts_with("CRP 00000001 "));
        assert!(lines.next().unwrap().starts_with("CRP 00000002 "));
        assert!(lines.next().unwrap().starts_with("CLIENT 00000009 "));
        assert_eq!(parse(&text).unwrap(), sample());
        assert_eq!(render(&parse(&text).unwrap()), text);
    }

    #[test]
    fn duplicates_and_garbage_are_rejected() {
        let text = render(&sample());
        let crp_line = text.lines().nth(1).unwrap();
        let doubled = format!("{text}{crp_line}\n");
        assert!(matches!(parse(&doubled), Err(StoreError::Corrupt { line: 5, .. })));
        assert!(parse("PUFKEX-STORE 2\n").is_err());
        assert!(parse("").is_err());
        assert!(parse(&text[..text.len() - 10]).is_err());
        assert!(parse(&format!("{STORE_HEADER}\nCRP 1 00 00\n")).is_err());
    }

    #[test]
    fn temp_path_sits_beside_store() {
        assert_eq!(temp_path(Path::new("/x/y/store.txt")), PathBuf::from("/x/y/store.txt.tmp"));
    }
}
