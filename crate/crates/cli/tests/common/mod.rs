#![allow(dead_code)]

use std::net::TcpListener;
use std::path::PathBuf;
use std::time::Duration;

use pufkex_app::node::{authenticate, spawn_emulator, spawn_server, AuthReport, ClientError, EmulatorHandle, ServerHandle, ServerOptions};
use pufkex_app::store::FileStore;
use pufkex_core::crypto::{DeviceId, SeededWords};
use pufkex_core::protocol::{enroll_device, register_client, ClientCredentials, Device};
use pufkex_core::sram_puf::{PufFunction, PufParams};
use tempfile::TempDir;

pub const DEVICE: DeviceId = DeviceId(0x1001);
pub const CLIENT: DeviceId = DeviceId(0x2001);
pub const PSK: [u8; 32] = [7u8; 32];
pub const IO_TIMEOUT: Duration = Duration::from_secs(5);

pub fn credentials() -> ClientCredentials {
    ClientCredentials::new(CLIENT, "alice", "correct horse")
}

pub fn options(psk: [u8; 32]) -> ServerOptions {
    ServerOptions { psk, session_timeout: Duration::from_secs(30), io_timeout: IO_TIMEOUT }
}

/// A store on disk with one enrolled device and one registered client.
pub struct Fixture {
    pub dir: TempDir,
    pub store_path: PathBuf,
    pub puf: PufFunction,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let store_path = dir.path().join("store.txt");
        let puf = PufFunction::provision(&PufParams::default(), seed).unwrap();
        let mut store = FileStore::create(&store_path).unwrap();
        enroll_device(&mut store, DEVICE, &puf, &mut SeededWords::derived(seed, "enroll")).unwrap();
        let c = credentials();
        register_client(&mut store, &c.username, &c.password, c.client_id).unwrap();
        Fixture { dir, store_path, puf }
    }

    pub fn server(&self, psk: [u8; 32]) -> ServerHandle {
        let store = FileStore::open(&self.store_path).unwrap();
        spawn_server(TcpListener::bind("127.0.0.1:0").unwrap(), store, options(psk)).unwrap()
    }

    pub fn emulator(&self) -> EmulatorHandle {
        let device = Device::new(DEVICE, self.puf.clone());
        spawn_emulator(TcpListener::bind("127.0.0.1:0").unwrap(), device, IO_TIMEOUT).unwrap()
    }

    pub fn store_text(&self) -> String {
        std::fs::read_to_string(&self.store_path).unwrap()
    }
}

pub fn auth(server: &ServerHandle, emulator: &EmulatorHandle) -> Result<AuthReport, ClientError> {
    authenticate(server.addr(), emulator.addr(), &PSK, &credentials(), IO_TIMEOUT)
}
