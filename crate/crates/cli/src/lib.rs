//! Networked deployment of the PUF key exchange: credential store on disk,
//! server daemon, device emulator, client and the command implementations
//! behind the `pufkex` binary.

pub mod commands;
pub mod config;
pub mod node;
pub mod store;
pub mod wire;
