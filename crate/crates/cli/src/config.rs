use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::warn;
use pufkex_core::sram_puf::PufParams;
use serde::Deserialize;
use thiserror::Error;

pub const CONFIG_ENV: &str = "PUFKEX_CONFIG";
pub const LOG_ENV: &str = "PUFKEX_LOG";

/// Pre-shared key used when the configuration names none. Anyone can read
/// it here, so it only suits local experiments.
pub const DEV_PSK_HEX: &str = "7075666b65782d6465762d70736b2d6e6f742d666f722d70726f64756374696f";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("psk must be 64 hex digits")]
    BadPsk,
    #[error("invalid PUF parameters: {0}")]
    Puf(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    /// Everything runs in one process over the simulator.
    #[default]
    Simulated,
    /// Real sockets: server daemon, device emulator and client.
    Tcp,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PufSection {
    pub cell_count: usize,
    pub stable_fraction: f64,
    pub fingerprint_bits: usize,
    pub qualification_reads: u32,
}

impl Default for PufSection {
    fn default() -> Self {
        let p = PufParams::default();
        PufSection {
            cell_count: p.cell_count,
            stable_fraction: p.stable_fraction,
            fingerprint_bits: p.fingerprint_bits,
            qualification_reads: p.qualification_reads,
        }
    }
}

impl PufSection {
    pub fn params(&self) -> PufParams {
        PufParams {
            cell_count: self.cell_count,
            stable_fraction: self.stable_fraction,
            fingerprint_bits: self.fingerprint_bits,
            qualification_reads: self.qualification_reads,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeoutSection {
    /// Seconds a server-side handshake may stay open.
    pub session_secs: u64,
    /// Seconds to wait on a socket read or write.
    pub io_secs: u64,
}

impl Default for TimeoutSection {
    fn default() -> Self {
        TimeoutSection { session_secs: 30, io_secs: 10 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default = "default_device_listen")]
    pub device_listen: SocketAddr,
    pub store_path: PathBuf,
    #[serde(default)]
    pub channel_mode: ChannelMode,
    #[serde(default)]
    pub psk: Option<String>,
    #[serde(default)]
    pub puf: PufSection,
    #[serde(default)]
    pub timeouts: TimeoutSection,
    #[serde(default = "default_log_level")]
    pub log_level: String,
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:7410".parse().expect("valid literal")
}

fn default_device_listen() -> SocketAddr {
    "127.0.0.1:7411".parse().expect("valid literal")
}

fn default_log_level() -> String {
    "info".to_string()
}

impl AppConfig {
    pub fn with_store(store_path: impl Into<PathBuf>) -> Self {
        AppConfig {
            listen: default_listen(),
            device_listen: default_device_listen(),
            store_path: store_path.into(),
            channel_mode: ChannelMode::default(),
            psk: None,
            puf: PufSection::default(),
            timeouts: TimeoutSection::default(),
            log_level: default_log_level(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: AppConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if let Some(psk) = &self.psk {
            decode_psk(psk)?;
        }
        let p = &self.puf;
        if p.fingerprint_bits == 0 || p.fingerprint_bits > 256 {
            return Err(ConfigError::Puf("fingerprint_bits must be in 1..=256".into()));
        }
        if !(0.0..=1.0).contains(&p.stable_fraction) {
            return Err(ConfigError::Puf("stable_fraction must be in [0, 1]".into()));
        }
        if p.qualification_reads == 0 {
            return Err(ConfigError::Puf("qualification_reads must be positive".into()));
        }
        Ok(())
    }

    /// The tunnel key, falling back to the built-in development key.
    pub fn psk(&self) -> [u8; 32] {
        match &self.psk {
            Some(hex) => decode_psk(hex).expect("validated at load"),
            None => {
                warn!("no psk configured; using the built-in development key");
                decode_psk(DEV_PSK_HEX).expect("valid literal")
            }
        }
    }

    pub fn session_timeout(&self) -> Duration {
        Duration::from_secs(self.timeouts.session_secs)
    }

    pub fn io_timeout(&self) -> Duration {
        Duration::from_secs(self.timeouts.io_secs)
    }
}

pub fn decode_psk(text: &str) -> Result<[u8; 32], ConfigError> {
    let bytes = hex::decode(text.trim()).map_err(|_| ConfigError::BadPsk)?;
    bytes.try_into().map_err(|_| ConfigError::BadPsk)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_store_path_is_required() {
        let config = AppConfig::from_toml("store_path = \"s.txt\"\n").unwrap();
        assert_eq!(config.store_path, PathBuf::from("s.txt"));
        assert_eq!(config.channel_mode, ChannelMode::Simulated);
        assert_eq!(config.timeouts.session_secs, 30);
        assert_eq!(config.puf.fingerprint_bits, 96);
        assert!(AppConfig::from_toml("listen = \"127.0.0.1:1\"\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(AppConfig::from_toml("store_path = \"s\"\nbogus = 1\n").is_err());
        assert!(AppConfig::from_toml("store_path = \"s\"\n[puf]\ncells = 1\n").is_err());
    }

    #[test]
    fn full_config() {
        let text = r#"
            listen = "0.0.0.0:9000"
            device_listen = "127.0.0.1:9001"
            store_path = "/var/lib/pufkex/store"
            channel_mode = "tcp"
            psk = "0000000000000000000000000000000000000000000000000000000000000001"
            log_level = "debug"

            [puf]
            cell_count = 2048
            fingerprint_bits = 64

            [timeouts]
            session_secs = 5
        "#;
        let config = AppConfig::from_toml(text).unwrap();
        assert_eq!(config.channel_mode, ChannelMode::Tcp);
        assert_eq!(config.psk()[31], 1);
        assert_eq!(config.puf.params().cell_count, 2048);
        assert_eq!(config.puf.qualification_reads, 31);
        assert_eq!(config.session_timeout(), Duration::from_secs(5));
        assert_eq!(config.io_timeout(), Duration::from_secs(10));
    }

    #[test]
    fn bad_psk_is_rejected() {
        assert!(matches!(AppConfig::from_toml("store_path = \"s\"\npsk = \"abcd\"\n"), Err(ConfigError::BadPsk)));
    }
}
