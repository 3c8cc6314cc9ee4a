//! Adversaries sitting on the open client-device channel.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::protocol::{decode, encode, Frame, MessageKind};

/// Which way a frame travels on the open channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    ClientToDevice,
    DeviceToClient,
}

/// Decides what the other end of the open channel receives.
///
/// `observed` holds every frame the adversary has seen so far, including
/// `frame` itself as its last element. Returned frames are delivered in
/// order, each in the direction given with it.
pub trait Interceptor {
    fn intercept(&mut self, direction: Direction, frame: &Frame, observed: &[Frame]) -> Vec<(Direction, Frame)>;
}

/// Forwards everything unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct Passive;

impl Interceptor for Passive {
    fn intercept(&mut self, direction: Direction, frame: &Frame, _observed: &[Frame]) -> Vec<(Direction, Frame)> {
        vec![(direction, *frame)]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Forward,
    Drop,
    /// Deliver observed frame `i` instead, carrying the current session id.
    Replay(usize),
    /// Deliver observed frame `i` with one bit of its encoding flipped.
    Tamper { frame: usize, byte: usize, bit: u8 },
    /// Deliver an arbitrary encoded frame instead.
    Inject(Vec<u8>),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Forward => f.write_str("forward"),
            Action::Drop => f.write_str("drop"),
            Action::Replay(i) => write!(f, "replay {i}"),
            Action::Tamper { frame, byte, bit } => write!(f, "tamper {frame} {byte} {bit}"),
            Action::Inject(bytes) => write!(f, "inject {}", hex::encode(bytes)),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptError {
    #[error("missing or unsupported version header (expected `version 1`)")]
    Version,
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
}

pub const SCRIPT_VERSION: u32 = 1;

/// Ordered adversary actions, one per open-channel transmission.
/// Once the script runs out, frames are forwarded.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Script {
    pub actions: Vec<Action>,
}

impl Script {
    pub fn new(actions: Vec<Action>) -> Self {
        Script { actions }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("version {SCRIPT_VERSION}\n");
        for a in &self.actions {
            out.push_str(&a.to_string());
            out.push('\n');
        }
        out
    }
}

impl FromStr for Script {
    type Err = ScriptError;

    fn from_str(text: &str) -> Result<Self, ScriptError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, header)) if header.split_whitespace().collect::<Vec<_>>() == ["version", "1"] => {}
            _ => return Err(ScriptError::Version),
        }
        let mut actions = Vec::new();
        for (line, content) in lines {
            let syntax = |reason: &str| ScriptError::Syntax { line, reason: reason.to_string() };
            let words: Vec<&str> = content.split_whitespace().collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| syntax(&format!("bad number `{s}`")));
            let action = match words.as_slice() {
                ["forward"] => Action::Forward,
                ["drop"] => Action::Drop,
                ["replay", i] => Action::Replay(num(i)?),
                ["tamper", i, byte, bit] => {
                    let bit = num(bit)?;
                    if bit > 7 {
                        return Err(syntax("bit must be 0..=7"));
                    }
                    Action::Tamper { frame: num(i)?, byte: num(byte)?, bit: bit as u8 }
                }
                ["inject", h] => Action::Inject(hex::decode(h).map_err(|_| syntax("bad hex"))?),
                _ => return Err(syntax(&format!("unknown action `{content}`"))),
            };
            actions.push(action);
        }
        Ok(Script { actions })
    }
}

/// Executes a [`Script`]. Bytes that no longer decode as a frame would be
/// rejected by any receiver; they are kept in `undecodable` and dropped.
#[derive(Clone, Debug, Default)]
pub struct ScriptedAdversary {
    script: Script,
    cursor: usize,
    pub undecodable: Vec<Vec<u8>>,
}

impl ScriptedAdversary {
    pub fn new(script: Script) -> Self {
        ScriptedAdversary { script, cursor: 0, undecodable: Vec::new() }
    }
}

fn with_session(mut frame: Frame, current: &Frame) -> Frame {
    frame.session = current.session;
    frame
}

impl Interceptor for ScriptedAdversary {
    fn intercept(&mut self, direction: Direction, frame: &Frame, observed: &[Frame]) -> Vec<(Direction, Frame)> {
        let action = self.script.actions.get(self.cursor).cloned().unwrap_or(Action::Forward);
        self.cursor += 1;
        match action {
            Action::Forward => vec![(direction, *frame)],
            Action::Drop => Vec::new(),
            Action::Replay(i) => match observed.get(i) {
                Some(old) => vec![(direction, with_session(*old, frame))],
                None => vec![(direction, *frame)],
            },
            Action::Tamper { frame: i, byte, bit } => {
                let Some(target) = observed.get(i) else {
                    return vec![(direction, *frame)];
                };
                let mut bytes = encode(target);
                if let Some(b) = bytes.get_mut(byte) {
                    *b ^= 0x80 >> bit;
                }
                match decode(&bytes) {
                    Ok(f) => vec![(direction, f)],
                    Err(_) => {
                        self.undecodable.push(bytes);
                        Vec::new()
                    }
                }
            }
            Action::Inject(bytes) => match decode(&bytes) {
                Ok(f) => vec![(direction, f)],
                Err(_) => {
                    self.undecodable.push(bytes);
                    Vec::new()
                }
            },
        }
    }
}

/// Open-channel fields an adversary can modify in transit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpenField {
    ConnReqClientId,
    EstablishDeviceId,
    EstablishClientId,
    M1,
    M2,
    M3,
    M4,
    Challenge,
    M5,
    M6,
    M7,
    M8,
    M10,
    M11,
    M12,
    M13,
}

impl OpenField {
    pub const ALL: [OpenField; 16] = [
        OpenField::ConnReqClientId,
        OpenField::EstablishDeviceId,
        OpenField::EstablishClientId,
        OpenField::M1,
        OpenField::M2,
        OpenField::M3,
        OpenField::M4,
        OpenField::Challenge,
        OpenField::M5,
        OpenField::M6,
        OpenField::M7,
        OpenField::M8,
        OpenField::M10,
        OpenField::M11,
        OpenField::M12,
        OpenField::M13,
    ];

    pub fn message(self) -> MessageKind {
        use OpenField::*;
        match self {
            ConnReqClientId => MessageKind::ConnReq,
            EstablishDeviceId | EstablishClientId => MessageKind::ConnEstablish,
            M1 | M2 | M3 | M4 | Challenge => MessageKind::AuthChallenge,
            M5 | M6 | M7 | M8 => MessageKind::CrpRotate,
            M10 | M11 => MessageKind::ClientNonce,
            M12 | M13 => MessageKind::DeviceNonce,
        }
    }

    /// Byte offset of the field in the payload and its width in bits.
    pub fn layout(self) -> (usize, usize) {
        use OpenField::*;
        match self {
            ConnReqClientId | EstablishDeviceId => (0, 32),
            EstablishClientId => (4, 32),
            M1 | M5 | M10 | M12 => (0, 256),
            M2 | M6 | M11 | M13 => (32, 256),
            M3 | M7 => (64, 256),
            M4 | M8 => (96, 256),
            Challenge => (128, 256),
        }
    }

    /// The 32 bit positions the tamper sweep flips: every bit of an
    /// identifier, or the leading bit of every byte of a word.
    pub fn sweep_bits(self) -> Vec<usize> {
        match self.layout().1 {
            32 => (0..32).collect(),
            _ => (0..32).map(|byte| byte * 8).collect(),
        }
    }

    pub fn name(self) -> &'static str {
        use OpenField::*;
        match self {
            ConnReqClientId => "ConnReq.Id_c",
            EstablishDeviceId => "ConnEstablish.Id_p",
            EstablishClientId => "ConnEstablish.Id_c",
            M1 => "M1",
            M2 => "M2",
            M3 => "M3",
            M4 => "M4",
            Challenge => "C_p",
            M5 => "M5",
            M6 => "M6",
            M7 => "M7",
            M8 => "M8",
            M10 => "M10",
            M11 => "M11",
            M12 => "M12",
            M13 => "M13",
        }
    }
}

impl fmt::Display for OpenField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpenField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        OpenField::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown field `{s}`"))
    }
}

/// Flips one bit of one field the first time its message crosses the
/// open channel.
#[derive(Clone, Debug)]
pub struct FieldTamper {
    pub field: OpenField,
    pub bit: usize,
    pub fired: bool,
}

impl FieldTamper {
    pub fn new(field: OpenField, bit: usize) -> Self {
        assert!(bit < field.layout().1, "bit {bit} outside {field}");
        FieldTamper { field, bit, fired: false }
    }
}

impl Interceptor for FieldTamper {
    fn intercept(&mut self, direction: Direction, frame: &Frame, _observed: &[Frame]) -> Vec<(Direction, Frame)> {
        if self.fired || frame.kind() != self.field.message() {
            return vec![(direction, *frame)];
        }
        self.fired = true;
        let (offset, _) = self.field.layout();
        let mut bytes = encode(frame);
        bytes[crate::protocol::FRAME_HEADER_BYTES + offset + self.bit / 8] ^= 0x80 >> (self.bit % 8);
        let tampered = decode(&bytes).expect("payload bit flips keep the frame well-formed");
        vec![(direction, tampered)]
    }
}

/// Replaces the first open-channel frame of `kind` with a frame recorded
/// earlier, rewritten to the current session id.
#[derive(Clone, Debug)]
pub struct SubstituteRecorded {
    pub kind: MessageKind,
    pub recorded: Frame,
    pub fired: bool,
}

impl Interceptor for SubstituteRecorded {
    fn intercept(&mut self, direction: Direction, frame: &Frame, _observed: &[Frame]) -> Vec<(Direction, Frame)> {
        if !self.fired && frame.kind() == self.kind {
            self.fired = true;
            return vec![(direction, with_session(self.recorded, frame))];
        }
        vec![(direction, *frame)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{DeviceId, Word256};
    use crate::protocol::{ConnReq, RotateAck, SessionId, WireMessage};

    #[test]
    fn script_text_round_trip() {
        let script = Script::new(vec![
            Action::Forward,
            Action::Drop,
            Action::Replay(3),
            Action::Tamper { frame: 2, byte: 40, bit: 7 },
            Action::Inject(vec![0x05, 0, 0, 0, 1]),
        ]);
        let text = script.to_text();
        assert_eq!(text.lines().next(), Some("version 1"));
        assert_eq!(text.parse::<Script>().unwrap(), script);
    }

    #[test]
    fn script_parser_errors() {
        assert_eq!("forward\n".parse::<Script>(), Err(ScriptError::Version));
        assert_eq!("version 2\nforward".parse::<Script>(), Err(ScriptError::Version));
        assert!(matches!(
            "version 1\n# comment\n\nforward\nbogus".parse::<Script>(),
            Err(ScriptError::Syntax { line: 5, .. })
        ));
        assert!(matches!(
            "version 1\ntamper 1 2 9".parse::<Script>(),
            Err(ScriptError::Syntax { line: 2, .. })
        ));
        assert_eq!("version 1 # header\n".parse::<Script>().unwrap(), Script::default());
    }

    #[test]
    fn scripted_actions() {
        let a = Frame::new(SessionId(1), WireMessage::ConnReq(ConnReq { client_id: DeviceId(1) }));
        let b = Frame::new(SessionId(2), WireMessage::RotateAck(RotateAck { m9: Word256::ZERO }));
        let mut adv = ScriptedAdversary::new(Script::new(vec![
            Action::Drop,
            Action::Replay(0),
            Action::Tamper { frame: 1, byte: 5, bit: 0 },
            Action::Tamper { frame: 1, byte: 0, bit: 0 },
        ]));
        let d = Direction::ClientToDevice;
        assert!(adv.intercept(d, &a, &[a]).is_empty());
        let replayed = adv.intercept(d, &b, &[a, b]);
        assert_eq!(replayed, vec![(d, Frame::new(SessionId(2), a.message))]);
        let tampered = adv.intercept(d, &b, &[a, b]);
        let WireMessage::RotateAck(ack) = tampered[0].1.message else { panic!() };
        assert_eq!(ack.m9, Word256::ZERO.with_bit_flipped(0));
        // Flipping the tag byte yields an unknown tag: nothing is delivered.
        assert!(adv.intercept(d, &b, &[a, b]).is_empty());
        assert_eq!(adv.undecodable.len(), 1);
        // Script exhausted: forward.
        assert_eq!(adv.intercept(d, &b, &[a, b]), vec![(d, b)]);
    }

    #[test]
    fn field_layouts_cover_payloads() {
        for field in OpenField::ALL {
            let (offset, bits) = field.layout();
            assert!(offset + bits / 8 <= field.message().payload_bytes(), "{field}");
            assert_eq!(field.sweep_bits().len(), 32);
            assert_eq!(field.name().parse::<OpenField>().unwrap(), field);
        }
    }
}
