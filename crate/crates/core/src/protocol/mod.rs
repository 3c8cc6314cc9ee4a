//! Enrollment, registration and the seven-step authentication and key
//! exchange between a client, a PUF-bearing device and the server.
//!
//! Each role is a small state machine. Sessions reject messages that do not
//! match their phase without changing state; a failed integrity check moves
//! the session to its aborted phase and emits nothing further.

use std::fmt;

use thiserror::Error;

use crate::crypto::{hash256, DeviceId, Word256};
use crate::sram_puf::PufError;

mod client;
mod costs;
mod device;
mod messages;
mod server;
mod store;

pub use client::{client_finish, client_send_nonce, ClientCredentials, ClientPhase, ClientSession};
pub use costs::{count_costs, CostReport, OpTally, Role, RoleCost, Transcript, TranscriptEntry};
pub use device::{device_handle_auth, device_handle_nonce, Device, DevicePhase, DeviceSession};
pub use messages::{
    decode, encode, AuthChallenge, ClientNonce, CodecError, ConnEstablish, ConnReq, CrpRotate, DeviceNonce,
    Frame, MessageKind, RotateAck, SessionId, WireMessage, FRAME_HEADER_BYTES,
};
pub use server::{
    client_alias, enroll_device, register_client, server_begin_auth, server_handle_rotate, AuthServer, PolicyWarning,
    Registration, ServerPhase, ServerSession, DEFAULT_SESSION_TIMEOUT,
};
pub use store::{ClientRecord, CredentialStore, CrpRecord, MemoryStore};

/// Integrity checks performed during a handshake.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Check {
    /// Device verifies M4 against the recovered T1, T2, Id_c'.
    M4,
    /// Server verifies M6 = H(M5, R_p).
    M6,
    /// Server verifies M8 = H(M7, T2).
    M8,
    /// Device verifies M11 = H(M10, M9).
    M11,
    /// Client verifies M13 = H(M12, N_c).
    M13,
    /// Client verifies the device echoed its own identifier.
    ClientEcho,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Check::M4 => "M4",
            Check::M6 => "M6",
            Check::M8 => "M8",
            Check::M11 => "M11",
            Check::M13 => "M13",
            Check::ClientEcho => "client id echo",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("unknown client {0}")]
    UnknownClient(DeviceId),
    #[error("device {0} already enrolled")]
    AlreadyEnrolled(DeviceId),
    #[error("client {0} already registered")]
    AlreadyRegistered(DeviceId),
    #[error("authentication failure: {0} mismatch")]
    AuthenticationFailure(Check),
    #[error("CRP rotation failure: {0} mismatch")]
    RotateFailure(Check),
    #[error("malformed message: {0}")]
    Malformed(#[from] CodecError),
    #[error("{got} not accepted in phase {phase}")]
    UnexpectedMessage { phase: &'static str, got: MessageKind },
    #[error("device {0} already has a session in progress")]
    SessionBusy(DeviceId),
    #[error("no session {0}")]
    UnknownSession(SessionId),
    #[error("session {0} expired")]
    SessionExpired(SessionId),
    #[error(transparent)]
    Puf(#[from] PufError),
    #[error("store error: {0}")]
    Storage(String),
}

/// The shared key H(N_c, N_p, Id_c', Id_p).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SessionKey(Word256);

impl SessionKey {
    pub fn from_word(word: Word256) -> Self {
        SessionKey(word)
    }

    pub fn as_word(&self) -> &Word256 {
        &self.0
    }

    /// Short non-secret digest for display and comparison in logs.
    pub fn fingerprint(&self) -> String {
        let mut input = b"pufkex key fingerprint".to_vec();
        input.extend_from_slice(self.0.as_bytes());
        hex::encode(&hash256(&input).as_bytes()[..8])
    }
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionKey(fp:{})", self.fingerprint())
    }
}
