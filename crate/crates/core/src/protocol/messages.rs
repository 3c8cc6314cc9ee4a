//! Wire messages and their frame codec.
//!
//! A frame is `tag (1) || session id (4, BE) || payload`, with payload
//! fields at fixed widths in declaration order: 32 bytes per word, 4 bytes
//! per identifier.

use std::fmt;

use thiserror::Error;

use crate::crypto::{DeviceId, Word256, WORD_BYTES};

pub const FRAME_HEADER_BYTES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("empty frame")]
    Empty,
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("{kind} frame is {got} bytes, expected {expected}")]
    BadLength { kind: MessageKind, expected: usize, got: usize },
}

/// Client-chosen identifier echoed in every frame of one handshake.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SessionId(pub u32);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08x}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    ConnReq,
    ConnEstablish,
    AuthChallenge,
    CrpRotate,
    RotateAck,
    ClientNonce,
    DeviceNonce,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::ConnReq,
        MessageKind::ConnEstablish,
        MessageKind::AuthChallenge,
        MessageKind::CrpRotate,
        MessageKind::RotateAck,
        MessageKind::ClientNonce,
        MessageKind::DeviceNonce,
    ];

    pub fn tag(self) -> u8 {
        match self {
            MessageKind::ConnReq => 0x01,
            MessageKind::ConnEstablish => 0x02,
            MessageKind::AuthChallenge => 0x03,
            MessageKind::CrpRotate => 0x04,
            MessageKind::RotateAck => 0x05,
            MessageKind::ClientNonce => 0x06,
            MessageKind::DeviceNonce => 0x07,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        MessageKind::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn payload_bytes(self) -> usize {
        match self {
            MessageKind::ConnReq => 4,
            MessageKind::ConnEstablish => 8,
            MessageKind::AuthChallenge => 5 * WORD_BYTES,
            MessageKind::CrpRotate => 4 * WORD_BYTES,
            MessageKind::RotateAck => WORD_BYTES,
            MessageKind::ClientNonce | MessageKind::DeviceNonce => 2 * WORD_BYTES,
        }
    }

    pub fn payload_bits(self) -> u64 {
        self.payload_bytes() as u64 * 8
    }

    /// Connection setup messages, left out of communication-cost totals.
    pub fn is_setup(self) -> bool {
        matches!(self, MessageKind::ConnReq | MessageKind::ConnEstablish)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::ConnReq => "ConnReq",
            MessageKind::ConnEstablish => "ConnEstablish",
            MessageKind::AuthChallenge => "AuthChallenge",
            MessageKind::CrpRotate => "CrpRotate",
            MessageKind::RotateAck => "RotateAck",
            MessageKind::ClientNonce => "ClientNonce",
            MessageKind::DeviceNonce => "DeviceNonce",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConnReq {
    pub client_id: DeviceId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConnEstablish {
    pub device_id: DeviceId,
    pub client_id: DeviceId,
}

/// M1 = T1⊕R_p, M2 = T1⊕T2, M3 = H(T1,T2)⊕Id_c', M4 = H(T1,T2,R_p,C_p,Id_c'), and C_p.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuthChallenge {
    pub m1: Word256,
    pub m2: Word256,
    pub m3: Word256,
    pub m4: Word256,
    pub challenge: Word256,
}

/// M5 = C_pnew⊕R_p, M6 = H(M5,R_p), M7 = T2⊕R_pnew, M8 = H(M7,T2).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrpRotate {
    pub m5: Word256,
    pub m6: Word256,
    pub m7: Word256,
    pub m8: Word256,
}

/// M9 = H(C_pnew, R_pnew).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RotateAck {
    pub m9: Word256,
}

/// M10 = N_c⊕M9, M11 = H(M10,M9).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClientNonce {
    pub m10: Word256,
    pub m11: Word256,
}

/// M12 = N_p⊕N_c, M13 = H(M12,N_c).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeviceNonce {
    pub m12: Word256,
    pub m13: Word256,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WireMessage {
    ConnReq(ConnReq),
    ConnEstablish(ConnEstablish),
    AuthChallenge(AuthChallenge),
    CrpRotate(CrpRotate),
    RotateAck(RotateAck),
    ClientNonce(ClientNonce),
    DeviceNonce(DeviceNonce),
}

impl WireMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            WireMessage::ConnReq(_) => MessageKind::ConnReq,
            WireMessage::ConnEstablish(_) => MessageKind::ConnEstablish,
            WireMessage::AuthChallenge(_) => MessageKind::AuthChallenge,
            WireMessage::CrpRotate(_) => MessageKind::CrpRotate,
            WireMessage::RotateAck(_) => MessageKind::RotateAck,
            WireMessage::ClientNonce(_) => MessageKind::ClientNonce,
            WireMessage::DeviceNonce(_) => MessageKind::DeviceNonce,
        }
    }

    pub fn payload_bits(&self) -> u64 {
        self.kind().payload_bits()
    }

    /// The 256-bit payload fields in declaration order.
    pub fn words(&self) -> Vec<Word256> {
        match self {
            WireMessage::ConnReq(_) | WireMessage::ConnEstablish(_) => Vec::new(),
            WireMessage::AuthChallenge(m) => vec![m.m1, m.m2, m.m3, m.m4, m.challenge],
            WireMessage::CrpRotate(m) => vec![m.m5, m.m6, m.m7, m.m8],
            WireMessage::RotateAck(m) => vec![m.m9],
            WireMessage::ClientNonce(m) => vec![m.m10, m.m11],
            WireMessage::DeviceNonce(m) => vec![m.m12, m.m13],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frame {
    pub session: SessionId,
    pub message: WireMessage,
}

impl Frame {
    pub fn new(session: SessionId, message: WireMessage) -> Self {
        Frame { session, message }
    }

    pub fn kind(&self) -> MessageKind {
        self.message.kind()
    }

    pub fn encode(&self) -> Vec<u8> {
        encode(self)
    }
}

pub fn encode(frame: &Frame) -> Vec<u8> {
    let kind = frame.kind();
    let mut out = Vec::with_capacity(FRAME_HEADER_BYTES + kind.payload_bytes());
    out.push(kind.tag());
    out.extend_from_slice(&frame.session.0.to_be_bytes());
    match &frame.message {
        WireMessage::ConnReq(m) => out.extend_from_slice(&m.client_id.to_be_bytes()),
        WireMessage::ConnEstablish(m) => {
            out.extend_from_slice(&m.device_id.to_be_bytes());
            out.extend_from_slice(&m.client_id.to_be_bytes());
        }
        other => {
            for w in other.words() {
                out.extend_from_slice(w.as_bytes());
            }
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Frame, CodecError> {
    let tag = *bytes.first().ok_or(CodecError::Empty)?;
    let kind = MessageKind::from_tag(tag).ok_or(CodecError::UnknownTag(tag))?;
    let expected = FRAME_HEADER_BYTES + kind.payload_bytes();
    if bytes.len() != expected {
        return Err(CodecError::BadLength { kind, expected, got: bytes.len() });
    }
    let session = SessionId(u32::from_be_bytes(bytes[1..5].try_into().expect("4 bytes")));
    let payload = &bytes[FRAME_HEADER_BYTES..];
    let id = |i: usize| DeviceId::from_be_bytes(payload[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let word = |i: usize| Word256::from_slice(&payload[WORD_BYTES * i..WORD_BYTES * (i + 1)]).expect("32 bytes");
    let message = match kind {
        MessageKind::ConnReq => WireMessage::ConnReq(ConnReq { client_id: id(0) }),
        MessageKind::ConnEstablish => WireMessage::ConnEstablish(ConnEstablish {
            device_id: id(0),
            client_id: id(1),
        }),
        MessageKind::AuthChallenge => WireMessage::AuthChallenge(AuthChallenge {
            m1: word(0),
            m2: word(1),
            m3: word(2),
            m4: word(3),
            challenge: word(4),
        }),
        MessageKind::CrpRotate => WireMessage::CrpRotate(CrpRotate {
            m5: word(0),
            m6: word(1),
            m7: word(2),
            m8: word(3),
        }),
        MessageKind::RotateAck => WireMessage::RotateAck(RotateAck { m9: word(0) }),
        MessageKind::ClientNonce => WireMessage::ClientNonce(ClientNonce { m10: word(0), m11: word(1) }),
        MessageKind::DeviceNonce => WireMessage::DeviceNonce(DeviceNonce { m12: word(0), m13: word(1) }),
    };
    Ok(Frame { session, message })
}
