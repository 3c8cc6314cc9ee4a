use std::collections::BTreeMap;

use crate::crypto::{DeviceId, Word256};

use super::ProtocolError;

/// The one challenge-response pair the server holds for a device.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrpRecord {
    pub device_id: DeviceId,
    pub challenge: Word256,
    pub response: Word256,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClientRecord {
    pub client_id: DeviceId,
    pub alias: Word256,
}

/// Server-side credential database.
///
/// Implementations hold at most one CRP per device; `replace_crp` swaps it
/// atomically or leaves the old record untouched on error.
pub trait CredentialStore {
    fn crp(&self, device: DeviceId) -> Option<CrpRecord>;
    fn client(&self, client: DeviceId) -> Option<ClientRecord>;
    fn insert_crp(&mut self, record: CrpRecord) -> Result<(), ProtocolError>;
    fn replace_crp(&mut self, record: CrpRecord) -> Result<(), ProtocolError>;
    fn insert_client(&mut self, record: ClientRecord) -> Result<(), ProtocolError>;
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MemoryStore {
    crps: BTreeMap<DeviceId, CrpRecord>,
    clients: BTreeMap<DeviceId, ClientRecord>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn crps(&self) -> impl Iterator<Item = &CrpRecord> {
        self.crps.values()
    }

    pub fn clients(&self) -> impl Iterator<Item = &ClientRecord> {
        self.clients.values()
    }

    pub fn crp_count(&self, device: DeviceId) -> usize {
        self.crps.values().filter(|r| r.device_id == device).count()
    }
}

impl CredentialStore for MemoryStore {
    fn crp(&self, device: DeviceId) -> Option<CrpRecord> {
        self.crps.get(&device).copied()
    }

    fn client(&self, client: DeviceId) -> Option<ClientRecord> {
        self.clients.get(&client).copied()
    }

    fn insert_crp(&mut self, record: CrpRecord) -> Result<(), ProtocolError> {
        if self.crps.contains_key(&record.device_id) {
            return Err(ProtocolError::AlreadyEnrolled(record.device_id));
        }
        self.crps.insert(record.device_id, record);
        Ok(())
    }

    fn replace_crp(&mut self, record: CrpRecord) -> Result<(), ProtocolError> {
        match self.crps.get_mut(&record.device_id) {
            Some(slot) => {
                *slot = record;
                Ok(())
            }
            None => Err(ProtocolError::UnknownDevice(record.device_id)),
        }
    }

    fn insert_client(&mut self, record: ClientRecord) -> Result<(), ProtocolError> {
        if self.clients.contains_key(&record.client_id) {
            return Err(ProtocolError::AlreadyRegistered(record.client_id));
        }
        self.clients.insert(record.client_id, record);
        Ok(())
    }
}
