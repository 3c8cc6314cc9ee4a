//! Deterministic in-process network: a client, one device and the server,
//! joined by an open channel (client-device) and a secure channel
//! (client-server). Only the open channel passes through the adversary.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use crate::crypto::{DeviceId, SeededWords, WordSource};
use crate::protocol::{
    client_finish, client_send_nonce, count_costs, device_handle_auth, device_handle_nonce, enroll_device,
    register_client, server_begin_auth, server_handle_rotate, ClientCredentials, ClientPhase, ClientSession,
    CostReport, Device, DevicePhase, DeviceSession, Frame, MemoryStore, MessageKind, ProtocolError, Role,
    ServerSession, SessionId, SessionKey, Transcript, WireMessage,
};
use crate::sram_puf::{PufFunction, PufParams};

use super::adversary::{Direction, Interceptor, Passive};

pub const VICTIM_DEVICE: DeviceId = DeviceId(0x0000_1001);
pub const DECOY_DEVICE: DeviceId = DeviceId(0x0000_1002);
pub const CLIENT_ID: DeviceId = DeviceId(0x0000_2001);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    /// Client-device link; every frame is exposed to the adversary.
    Open,
    /// Client-server link; confidential and authentic.
    Secure,
}

#[derive(Clone, Debug)]
pub struct Envelope {
    pub seq: u64,
    pub from: Role,
    pub to: Role,
    pub frame: Frame,
}

/// FIFO queue of frames in flight on one channel.
#[derive(Clone, Debug)]
pub struct SimChannel {
    pub kind: ChannelKind,
    queue: VecDeque<Envelope>,
}

impl SimChannel {
    pub fn new(kind: ChannelKind) -> Self {
        SimChannel { kind, queue: VecDeque::new() }
    }

    pub fn push(&mut self, envelope: Envelope) {
        self.queue.push_back(envelope);
    }

    fn peek_seq(&self) -> Option<u64> {
        self.queue.front().map(|e| e.seq)
    }

    fn pop(&mut self) -> Option<Envelope> {
        self.queue.pop_front()
    }
}

/// Protocol operation during which a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Step {
    DeviceAccept,
    ClientCheckEstablish,
    ServerBeginAuth,
    ClientRelay,
    DeviceHandleAuth,
    ServerHandleRotate,
    ClientSendNonce,
    DeviceHandleNonce,
    ClientFinish,
    /// Nothing left to deliver before both ends held a key.
    Stalled,
}

impl Step {
    pub fn name(self) -> &'static str {
        match self {
            Step::DeviceAccept => "device_accept",
            Step::ClientCheckEstablish => "client_check_establish",
            Step::ServerBeginAuth => "server_begin_auth",
            Step::ClientRelay => "client_relay",
            Step::DeviceHandleAuth => "device_handle_auth",
            Step::ServerHandleRotate => "server_handle_rotate",
            Step::ClientSendNonce => "client_send_nonce",
            Step::DeviceHandleNonce => "device_handle_nonce",
            Step::ClientFinish => "client_finish",
            Step::Stalled => "stalled",
        }
    }

    fn for_delivery(to: Role, kind: MessageKind) -> Step {
        match (to, kind) {
            (Role::Device, MessageKind::ConnReq) => Step::DeviceAccept,
            (Role::Device, MessageKind::ClientNonce) => Step::DeviceHandleNonce,
            (Role::Device, _) => Step::DeviceHandleAuth,
            (Role::Client, MessageKind::ConnEstablish) => Step::ClientCheckEstablish,
            (Role::Client, MessageKind::RotateAck) => Step::ClientSendNonce,
            (Role::Client, MessageKind::DeviceNonce) => Step::ClientFinish,
            (Role::Client, _) => Step::ClientRelay,
            (Role::Server, MessageKind::CrpRotate) => Step::ServerHandleRotate,
            (_, _) => Step::ServerBeginAuth,
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Both client and device derived a key.
    Established { keys_match: bool },
    AbortedAt { step: Step, error: String },
}

impl Outcome {
    pub fn is_established(&self) -> bool {
        matches!(self, Outcome::Established { .. })
    }

    pub fn aborted_step(&self) -> Option<Step> {
        match self {
            Outcome::AbortedAt { step, .. } => Some(*step),
            Outcome::Established { .. } => None,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Established { keys_match } => write!(f, "established (keys match: {keys_match})"),
            Outcome::AbortedAt { step, error } => write!(f, "aborted at {step}: {error}"),
        }
    }
}

/// Everything observable about one simulated handshake.
#[derive(Clone, Debug)]
pub struct SessionRun {
    pub session: SessionId,
    pub outcome: Outcome,
    pub transcript: Transcript,
    /// Open-channel frames as sent by honest parties, in order.
    pub open_frames: Vec<Frame>,
    /// Secure-channel frames in order; never shown to the adversary.
    pub secure_frames: Vec<Frame>,
    pub client: ClientSession,
    pub device: Option<DeviceSession>,
    pub server: Option<ServerSession>,
    pub store_before: MemoryStore,
    pub store_after: MemoryStore,
    pub deliveries: usize,
}

impl SessionRun {
    pub fn costs(&self) -> CostReport {
        count_costs(&self.transcript)
    }

    pub fn client_key(&self) -> Option<&SessionKey> {
        self.client.key()
    }

    pub fn device_key(&self) -> Option<&SessionKey> {
        self.device.as_ref().and_then(|d| d.key())
    }
}

/// Server, victim device and registered client with their randomness.
pub struct World {
    pub store: MemoryStore,
    pub device: Device,
    pub credentials: ClientCredentials,
    pub server_rng: Box<dyn WordSource>,
    pub device_rng: Box<dyn WordSource>,
    pub client_rng: Box<dyn WordSource>,
    /// Every open-channel frame the adversary has seen, across sessions.
    pub observed: Vec<Frame>,
    seed: u64,
    next_session: u32,
}

impl World {
    /// Enrolled device and registered client, all derived from `seed`.
    pub fn new(seed: u64) -> Self {
        Self::with_params(seed, &PufParams::default())
    }

    pub fn with_params(seed: u64, params: &PufParams) -> Self {
        let puf = PufFunction::provision(params, chip_seed(seed, 0)).expect("default PUF parameters are usable");
        let device = Device::new(VICTIM_DEVICE, puf);
        let credentials = ClientCredentials::new(CLIENT_ID, format!("client-{seed}"), format!("pw-{seed:016x}"));
        let mut store = MemoryStore::new();
        let mut enroll_rng = SeededWords::derived(seed, "enroll");
        enroll_device(&mut store, device.id(), device.puf(), &mut enroll_rng).expect("fresh store");
        register_client(&mut store, &credentials.username, &credentials.password, credentials.client_id)
            .expect("fresh store");
        World {
            store,
            device,
            credentials,
            server_rng: Box::new(SeededWords::derived(seed, "server")),
            device_rng: Box::new(SeededWords::derived(seed, "device")),
            client_rng: Box::new(SeededWords::derived(seed, "client")),
            observed: Vec::new(),
            seed,
            next_session: 1,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Enrolls a second device with its own chip and returns it.
    pub fn enroll_decoy(&mut self, params: &PufParams) -> Device {
        let puf = PufFunction::provision(params, chip_seed(self.seed, 1)).expect("default PUF parameters are usable");
        let decoy = Device::new(DECOY_DEVICE, puf);
        let mut rng = SeededWords::derived(self.seed, "enroll-decoy");
        enroll_device(&mut self.store, decoy.id(), decoy.puf(), &mut rng).expect("decoy not yet enrolled");
        decoy
    }

    pub fn run_honest_session(&mut self) -> SessionRun {
        self.run_session(&mut Passive)
    }

    /// Runs one handshake to completion or first error.
    pub fn run_session(&mut self, adversary: &mut dyn Interceptor) -> SessionRun {
        let session_id = SessionId(self.next_session);
        self.next_session += 1;
        let store_before = self.store.clone();

        let mut sim = Sim {
            open: SimChannel::new(ChannelKind::Open),
            secure: SimChannel::new(ChannelKind::Secure),
            seq: 0,
            transcript: Transcript::default(),
            open_frames: Vec::new(),
            secure_frames: Vec::new(),
            deliveries: 0,
        };

        let (mut client, req) = ClientSession::start(&self.credentials, session_id);
        let mut device_sessions: HashMap<SessionId, DeviceSession> = HashMap::new();
        let mut device_busy: Option<SessionId> = None;
        let mut server: Option<ServerSession> = None;
        let mut outcome = None;

        sim.send(Role::Client, Role::Device, Frame::new(session_id, WireMessage::ConnReq(req)));

        while outcome.is_none() {
            let Some(envelope) = sim.next() else { break };
            let deliveries: Vec<(Role, Role, Frame)> = if sim_channel(envelope.from, envelope.to) == ChannelKind::Open {
                self.observed.push(envelope.frame);
                let direction = match envelope.to {
                    Role::Device => Direction::ClientToDevice,
                    _ => Direction::DeviceToClient,
                };
                let delivered = adversary.intercept(direction, &envelope.frame, &self.observed);
                delivered
                    .into_iter()
                    .map(|(dir, frame)| {
                        let (from, to) = match dir {
                            Direction::ClientToDevice => (Role::Client, Role::Device),
                            Direction::DeviceToClient => (Role::Device, Role::Client),
                        };
                        if frame != envelope.frame || to != envelope.to {
                            sim.transcript.record(Role::Adversary, to, frame);
                        }
                        (from, to, frame)
                    })
                    .collect()
            } else {
                vec![(envelope.from, envelope.to, envelope.frame)]
            };

            for (_, to, frame) in deliveries {
                sim.deliveries += 1;
                let step = Step::for_delivery(to, frame.kind());
                let result: Result<(), ProtocolError> = match to {
                    Role::Device => {
                        let device = &self.device;
                        let rng = &mut self.device_rng;
                        match frame.message {
                            WireMessage::ConnReq(req) => match device_busy {
                                Some(active) if active != frame.session => Err(ProtocolError::SessionBusy(device.id())),
                                _ => {
                                    device_busy = Some(frame.session);
                                    let reply = device.accept_connection(&req);
                                    sim.send(Role::Device, Role::Client, Frame::new(frame.session, WireMessage::ConnEstablish(reply)));
                                    Ok(())
                                }
                            },
                            WireMessage::AuthChallenge(msg) => device_handle_auth(device, &msg, rng).map(|(session, rotate)| {
                                device_sessions.insert(frame.session, session);
                                sim.send(Role::Device, Role::Client, Frame::new(frame.session, WireMessage::CrpRotate(rotate)));
                            }),
                            WireMessage::ClientNonce(msg) => match device_sessions.get_mut(&frame.session) {
                                Some(session) => device_handle_nonce(session, &msg, rng).map(|(reply, _)| {
                                    sim.send(Role::Device, Role::Client, Frame::new(frame.session, WireMessage::DeviceNonce(reply)));
                                }),
                                None => Err(ProtocolError::UnknownSession(frame.session)),
                            },
                            other => Err(ProtocolError::UnexpectedMessage { phase: "device", got: other.kind() }),
                        }
                    }
                    Role::Client => {
                        if frame.session != client.session_id() {
                            Err(ProtocolError::UnknownSession(frame.session))
                        } else {
                            match frame.message {
                                WireMessage::ConnEstablish(msg) => client.on_establish(&msg).map(|fwd| {
                                    sim.send(Role::Client, Role::Server, Frame::new(frame.session, WireMessage::ConnEstablish(fwd)));
                                }),
                                WireMessage::AuthChallenge(msg) => client.on_challenge(&msg).map(|fwd| {
                                    sim.send(Role::Client, Role::Device, Frame::new(frame.session, WireMessage::AuthChallenge(fwd)));
                                }),
                                WireMessage::CrpRotate(msg) => client.on_rotate(&msg).map(|fwd| {
                                    sim.send(Role::Client, Role::Server, Frame::new(frame.session, WireMessage::CrpRotate(fwd)));
                                }),
                                WireMessage::RotateAck(msg) => {
                                    client_send_nonce(&mut client, &msg, &mut self.client_rng).map(|reply| {
                                        sim.send(Role::Client, Role::Device, Frame::new(frame.session, WireMessage::ClientNonce(reply)));
                                    })
                                }
                                WireMessage::DeviceNonce(msg) => client_finish(&mut client, &msg).map(|_| ()),
                                other => Err(ProtocolError::UnexpectedMessage { phase: "client", got: other.kind() }),
                            }
                        }
                    }
                    Role::Server => match frame.message {
                        WireMessage::ConnEstablish(req) => server_begin_auth(
                            &self.store,
                            frame.session,
                            req.device_id,
                            req.client_id,
                            &mut self.server_rng,
                        )
                        .map(|(session, challenge)| {
                            server = Some(session);
                            sim.send(Role::Server, Role::Client, Frame::new(frame.session, WireMessage::AuthChallenge(challenge)));
                        }),
                        WireMessage::CrpRotate(msg) => match server.as_mut() {
                            Some(session) => server_handle_rotate(session, &mut self.store, &msg).map(|ack| {
                                sim.send(Role::Server, Role::Client, Frame::new(frame.session, WireMessage::RotateAck(ack)));
                            }),
                            None => Err(ProtocolError::UnknownSession(frame.session)),
                        },
                        other => Err(ProtocolError::UnexpectedMessage { phase: "server", got: other.kind() }),
                    },
                    Role::Adversary => Ok(()),
                };
                if let Err(e) = result {
                    outcome = Some(Outcome::AbortedAt { step, error: e.to_string() });
                    if !matches!(client.phase(), ClientPhase::Established) {
                        client.abort();
                    }
                    break;
                }
            }

            let device_done = device_sessions
                .get(&session_id)
                .is_some_and(|s| s.phase() == DevicePhase::Established);
            if outcome.is_none() && device_done && client.phase() == ClientPhase::Established {
                let keys_match = client.key() == device_sessions.get(&session_id).and_then(|s| s.key());
                outcome = Some(Outcome::Established { keys_match });
            }
        }

        let outcome = outcome.unwrap_or(Outcome::AbortedAt { step: Step::Stalled, error: "handshake stalled".into() });

        let mut transcript = sim.transcript;
        transcript.add_ops(Role::Client, client.ops());
        let device = device_sessions.remove(&session_id);
        if let Some(d) = &device {
            transcript.add_ops(Role::Device, d.ops());
        }
        if let Some(s) = &server {
            transcript.add_ops(Role::Server, s.ops());
        }

        SessionRun {
            session: session_id,
            outcome,
            transcript,
            open_frames: sim.open_frames,
            secure_frames: sim.secure_frames,
            client,
            device,
            server,
            store_before,
            store_after: self.store.clone(),
            deliveries: sim.deliveries,
        }
    }
}

fn chip_seed(seed: u64, index: u64) -> u64 {
    let mut material = seed.to_be_bytes().to_vec();
    material.extend_from_slice(&index.to_be_bytes());
    let digest = crate::crypto::hash256(&material);
    u64::from_be_bytes(digest.as_bytes()[..8].try_into().expect("8 bytes"))
}

fn sim_channel(a: Role, b: Role) -> ChannelKind {
    match (a, b) {
        (Role::Client, Role::Server) | (Role::Server, Role::Client) => ChannelKind::Secure,
        _ => ChannelKind::Open,
    }
}

struct Sim {
    open: SimChannel,
    secure: SimChannel,
    seq: u64,
    transcript: Transcript,
    open_frames: Vec<Frame>,
    secure_frames: Vec<Frame>,
    deliveries: usize,
}

impl Sim {
    fn send(&mut self, from: Role, to: Role, frame: Frame) {
        self.transcript.record(from, to, frame);
        let envelope = Envelope { seq: self.seq, from, to, frame };
        self.seq += 1;
        match sim_channel(from, to) {
            ChannelKind::Open => {
                self.open_frames.push(frame);
                self.open.push(envelope);
            }
            ChannelKind::Secure => {
                self.secure_frames.push(frame);
                self.secure.push(envelope);
            }
        }
    }

    fn next(&mut self) -> Option<Envelope> {
        match (self.open.peek_seq(), self.secure.peek_seq()) {
            (Some(a), Some(b)) if a < b => self.open.pop(),
            (Some(_), None) => self.open.pop(),
            (_, Some(_)) => self.secure.pop(),
            (None, None) => None,
        }
    }
}
