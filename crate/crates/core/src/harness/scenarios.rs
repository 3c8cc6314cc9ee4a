//! Attack scenarios. Each is a pure function of its seed and parameters.

use std::fmt;
use std::str::FromStr;

use crate::crypto::{hash_fields, hash_words, random_word, Field, SeededWords, Word256};
use crate::protocol::{
    device_handle_auth, device_handle_nonce, CostReport, CredentialStore, CrpRotate, Frame, MemoryStore,
    MessageKind, Role, Transcript, WireMessage,
};
use crate::sram_puf::{PufFunction, PufParams};

use super::adversary::{Direction, FieldTamper, Interceptor, OpenField, Passive, SubstituteRecorded};
use super::secrecy::{EavesdropReport, Knowledge, OpenAtoms, Secrets};
use super::sim::{Outcome, SessionRun, Step, World};

/// Outcome of one scenario together with what changed and what leaked.
#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub scenario: String,
    pub outcome: Outcome,
    pub store_before: MemoryStore,
    pub store_after: MemoryStore,
    /// Every open-channel frame the adversary saw.
    pub observed: Vec<Frame>,
    /// Whether a key held by an honest party lies in the adversary's
    /// depth-bounded knowledge closure.
    pub adversary_has_key: bool,
    /// Whether an honest party ended holding a key its peer does not share.
    pub mismatched_key: bool,
    pub costs: CostReport,
    pub transcript: Transcript,
}

impl ScenarioResult {
    fn from_run(scenario: String, run: &SessionRun, observed: &[Frame]) -> Self {
        let keys: Vec<_> = [run.client_key(), run.device_key()].into_iter().flatten().collect();
        let adversary_has_key = !keys.is_empty() && {
            let knowledge = Knowledge::from_frames(observed);
            keys.iter().any(|k| knowledge.contains(k.as_word()))
        };
        let mismatched_key = matches!(run.outcome, Outcome::Established { keys_match: false });
        ScenarioResult {
            scenario,
            outcome: run.outcome.clone(),
            store_before: run.store_before.clone(),
            store_after: run.store_after.clone(),
            observed: observed.to_vec(),
            adversary_has_key,
            mismatched_key,
            costs: run.costs(),
            transcript: run.transcript.clone(),
        }
    }

    pub fn store_changed(&self) -> bool {
        self.store_before != self.store_after
    }

    /// The attack was stopped: no completed handshake, no leaked key.
    pub fn defeated(&self) -> bool {
        !self.outcome.is_established() && !self.adversary_has_key && !self.mismatched_key
    }
}

/// One honest handshake on a fresh fixture.
pub fn run_honest(seed: u64) -> (ScenarioResult, SessionRun) {
    let mut world = World::new(seed);
    let run = world.run_honest_session();
    (ScenarioResult::from_run("honest".into(), &run, &world.observed), run)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReplayKind {
    /// AuthChallenge from an earlier session fed to the device in a new one.
    StaleAuthChallenge,
    /// CrpRotate from an earlier session fed to the server in a new one.
    StaleCrpRotate,
    /// The adversary plays the client: it opens a session with the device
    /// and sends every recorded client frame of an earlier session.
    FullTranscript,
}

impl ReplayKind {
    pub const ALL: [ReplayKind; 3] =
        [ReplayKind::StaleAuthChallenge, ReplayKind::StaleCrpRotate, ReplayKind::FullTranscript];

    pub fn name(self) -> &'static str {
        match self {
            ReplayKind::StaleAuthChallenge => "stale-auth-challenge",
            ReplayKind::StaleCrpRotate => "stale-crp-rotate",
            ReplayKind::FullTranscript => "full-transcript",
        }
    }
}

impl fmt::Display for ReplayKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReplayKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReplayKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown replay kind `{s}`"))
    }
}

/// Records one honest session, then replays part of it into a second.
pub fn run_replay(seed: u64, kind: ReplayKind) -> ScenarioResult {
    let mut world = World::new(seed);
    let recorded = world.run_honest_session();
    assert!(recorded.outcome.is_established(), "recording session failed: {}", recorded.outcome);
    let pick = |kind: MessageKind| -> Frame {
        *recorded.open_frames.iter().find(|f| f.kind() == kind).expect("honest session carries every message")
    };
    let scenario = format!("replay {kind}");

    match kind {
        ReplayKind::StaleAuthChallenge | ReplayKind::StaleCrpRotate => {
            let message = if kind == ReplayKind::StaleAuthChallenge {
                MessageKind::AuthChallenge
            } else {
                MessageKind::CrpRotate
            };
            let mut adversary = SubstituteRecorded { kind: message, recorded: pick(message), fired: false };
            let run = world.run_session(&mut adversary);
            ScenarioResult::from_run(scenario, &run, &world.observed)
        }
        ReplayKind::FullTranscript => replay_to_device(&mut world, &recorded, scenario),
    }
}

/// The adversary talks to the device directly; no client or server is
/// involved. The device authenticates the stale challenge (its PUF still
/// answers C_p) and spends two PUF evaluations before M11 exposes the replay.
fn replay_to_device(world: &mut World, recorded: &SessionRun, scenario: String) -> ScenarioResult {
    let store_before = world.store.clone();
    let session = crate::protocol::SessionId(recorded.session.0 + 1000);
    let mut transcript = Transcript::default();
    let mut observed = world.observed.clone();
    let client_frames: Vec<Frame> = recorded
        .open_frames
        .iter()
        .filter(|f| matches!(f.kind(), MessageKind::ConnReq | MessageKind::AuthChallenge | MessageKind::ClientNonce))
        .map(|f| Frame { session, ..*f })
        .collect();

    let mut device_session = None;
    let mut outcome = Outcome::AbortedAt { step: Step::Stalled, error: "replay ran out of frames".into() };
    for frame in client_frames {
        transcript.record(Role::Adversary, Role::Device, frame);
        observed.push(frame);
        let result = match frame.message {
            WireMessage::ConnReq(req) => {
                let reply = Frame::new(session, WireMessage::ConnEstablish(world.device.accept_connection(&req)));
                transcript.record(Role::Device, Role::Adversary, reply);
                observed.push(reply);
                Ok(())
            }
            WireMessage::AuthChallenge(msg) => {
                device_handle_auth(&world.device, &msg, &mut world.device_rng).map(|(s, rotate)| {
                    let reply = Frame::new(session, WireMessage::CrpRotate(rotate));
                    transcript.record(Role::Device, Role::Adversary, reply);
                    observed.push(reply);
                    device_session = Some(s);
                })
            }
            WireMessage::ClientNonce(msg) => match device_session.as_mut() {
                Some(s) => device_handle_nonce(s, &msg, &mut world.device_rng).map(|(reply, _)| {
                    let reply = Frame::new(session, WireMessage::DeviceNonce(reply));
                    transcript.record(Role::Device, Role::Adversary, reply);
                    observed.push(reply);
                }),
                None => Err(crate::protocol::ProtocolError::UnknownSession(session)),
            },
            _ => unreachable!("only client frames are replayed"),
        };
        if let Err(e) = result {
            let step = match frame.kind() {
                MessageKind::AuthChallenge => Step::DeviceHandleAuth,
                MessageKind::ClientNonce => Step::DeviceHandleNonce,
                _ => Step::DeviceAccept,
            };
            outcome = Outcome::AbortedAt { step, error: e.to_string() };
            break;
        }
    }
    if let Some(s) = &device_session {
        transcript.add_ops(Role::Device, s.ops());
    }
    let device_key = device_session.as_ref().and_then(|s| s.key()).copied();
    let adversary_has_key = device_key.is_some_and(|k| Knowledge::from_frames(&observed).contains(k.as_word()));
    world.observed = observed.clone();
    ScenarioResult {
        scenario,
        outcome,
        store_before,
        store_after: world.store.clone(),
        observed,
        adversary_has_key,
        // The adversary holds no key, so any device key is unmatched.
        mismatched_key: device_key.is_some(),
        costs: crate::protocol::count_costs(&transcript),
        transcript,
    }
}

/// Flips `bit` of `field` in transit, or nothing for the control run.
pub fn run_tamper(seed: u64, tamper: Option<(OpenField, usize)>) -> ScenarioResult {
    let mut world = World::new(seed);
    let (scenario, run) = match tamper {
        Some((field, bit)) => {
            let mut adversary = FieldTamper::new(field, bit);
            (format!("tamper {field} bit {bit}"), world.run_session(&mut adversary))
        }
        None => ("tamper control".to_string(), world.run_session(&mut Passive)),
    };
    ScenarioResult::from_run(scenario, &run, &world.observed)
}

/// Every (field, bit) pair of the exhaustive tamper sweep.
pub fn tamper_sweep_points() -> Vec<(OpenField, usize)> {
    OpenField::ALL
        .into_iter()
        .flat_map(|field| field.sweep_bits().into_iter().map(move |bit| (field, bit)))
        .collect()
}

/// Eavesdropping analysis of one honest transcript. With `plant_zero_t1`
/// the server draws T1 = 0, which puts R_p on the wire as M1.
pub fn run_eavesdrop_analysis(seed: u64, plant_zero_t1: bool) -> EavesdropReport {
    let mut world = World::new(seed);
    if plant_zero_t1 {
        world.server_rng = Box::new(crate::crypto::ScriptedWords::new(vec![Word256::ZERO], seed));
    }
    let run = world.run_honest_session();
    assert!(run.outcome.is_established(), "eavesdrop fixture failed: {}", run.outcome);
    let atoms = OpenAtoms::from_frames(&run.open_frames).expect("complete transcript");
    let secrets = Secrets::from_run(&run).expect("complete handshake");
    EavesdropReport::analyze(&atoms, &secrets)
}

/// Which secrets the server can see under two observation models.
#[derive(Clone, Debug)]
pub struct EscrowReport {
    /// Overlap before any handshake: the server state is only the store.
    pub pre_handshake_overlap: Vec<&'static str>,
    /// Overlap of {N_c, N_p, key} with the server's session state and store.
    pub server_state_overlap: Vec<&'static str>,
    /// Overlap with every word carried on the secure channel.
    pub secure_channel_overlap: Vec<&'static str>,
    /// The server, handed the open-channel frames, recomputes N_c = M10 ^ M9,
    /// N_p = M12 ^ N_c and the key; true when that key is the real one.
    pub tap_derives_key: bool,
}

impl EscrowReport {
    /// No escrow without taps, and the documented counter-case holds.
    pub fn boundary_holds(&self) -> bool {
        self.pre_handshake_overlap.is_empty()
            && self.server_state_overlap.is_empty()
            && self.secure_channel_overlap.is_empty()
            && self.tap_derives_key
    }
}

fn store_words(store: &MemoryStore) -> Vec<Word256> {
    let mut words: Vec<Word256> = store.crps().flat_map(|r| [r.challenge, r.response]).collect();
    words.extend(store.clients().map(|c| c.alias));
    words
}

pub fn run_key_escrow_check(seed: u64) -> EscrowReport {
    let mut world = World::new(seed);
    let pre_store = store_words(&world.store);
    let run = world.run_honest_session();
    assert!(run.outcome.is_established(), "escrow fixture failed: {}", run.outcome);

    let device = run.device.as_ref().expect("device session");
    let server = run.server.as_ref().expect("server session");
    let key = *run.client_key().expect("client key").as_word();
    let targets = [
        ("N_c", *device.client_nonce().expect("nonce")),
        ("N_p", *device.device_nonce().expect("nonce")),
        ("session key", key),
    ];
    let overlap = |pool: &[Word256]| -> Vec<&'static str> {
        targets.iter().filter(|(_, t)| pool.contains(t)).map(|(n, _)| *n).collect()
    };

    let mut server_state = server.known_words();
    server_state.extend(store_words(&world.store));
    let secure_words: Vec<Word256> = run.secure_frames.iter().flat_map(|f| f.message.words()).collect();

    let tap_derives_key = match (server.m9(), OpenAtoms::from_frames(&run.open_frames)) {
        (Some(m9), Some(atoms)) => {
            let nc = *atoms.get("M10").expect("M10") ^ m9;
            let np = *atoms.get("M12").expect("M12") ^ nc;
            let derived = hash_fields(&[
                Field::Word(&nc),
                Field::Word(&np),
                Field::Word(server.alias()),
                Field::Id(server.device_id()),
            ]);
            derived == key
        }
        _ => false,
    };

    EscrowReport {
        pre_handshake_overlap: overlap(&pre_store),
        server_state_overlap: overlap(&server_state),
        secure_channel_overlap: overlap(&secure_words),
        tap_derives_key,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MitmMode {
    /// Random M5..M8.
    RandomForgery,
    /// M5..M8 computed honestly but with a different enrolled device's PUF.
    OtherDevicePuf,
    /// No interference.
    HonestControl,
}

impl MitmMode {
    pub const ALL: [MitmMode; 3] = [MitmMode::RandomForgery, MitmMode::OtherDevicePuf, MitmMode::HonestControl];

    pub fn name(self) -> &'static str {
        match self {
            MitmMode::RandomForgery => "random-forgery",
            MitmMode::OtherDevicePuf => "other-device-puf",
            MitmMode::HonestControl => "honest-control",
        }
    }
}

impl fmt::Display for MitmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Withholds the AuthChallenge from the device and answers it with a
/// forged CrpRotate.
struct ForgeRotate {
    rng: SeededWords,
    puf: Option<PufFunction>,
    fired: bool,
}

impl ForgeRotate {
    fn forge(&mut self, frame: &Frame) -> CrpRotate {
        let WireMessage::AuthChallenge(challenge) = frame.message else {
            unreachable!("only AuthChallenge is answered")
        };
        match &self.puf {
            None => CrpRotate {
                m5: random_word(&mut self.rng),
                m6: random_word(&mut self.rng),
                m7: random_word(&mut self.rng),
                m8: random_word(&mut self.rng),
            },
            Some(puf) => {
                let response = puf.respond(&challenge.challenge).expect("decoy PUF is provisioned");
                let t1 = challenge.m1 ^ response;
                let t2 = challenge.m2 ^ t1;
                let new_challenge = random_word(&mut self.rng);
                let new_response = puf.respond(&new_challenge).expect("decoy PUF is provisioned");
                let m5 = new_challenge ^ response;
                let m7 = t2 ^ new_response;
                CrpRotate { m5, m6: hash_words(&[&m5, &response]), m7, m8: hash_words(&[&m7, &t2]) }
            }
        }
    }
}

impl Interceptor for ForgeRotate {
    fn intercept(&mut self, direction: Direction, frame: &Frame, _observed: &[Frame]) -> Vec<(Direction, Frame)> {
        if self.fired || frame.kind() != MessageKind::AuthChallenge {
            return vec![(direction, *frame)];
        }
        self.fired = true;
        let forged = self.forge(frame);
        vec![(Direction::DeviceToClient, Frame::new(frame.session, WireMessage::CrpRotate(forged)))]
    }
}

/// The adversary impersonates the victim device towards the server.
pub fn run_mitm_impersonation(seed: u64, mode: MitmMode) -> ScenarioResult {
    let mut world = World::new(seed);
    let scenario = format!("mitm {mode}");
    let run = match mode {
        MitmMode::HonestControl => world.run_session(&mut Passive),
        MitmMode::RandomForgery | MitmMode::OtherDevicePuf => {
            let puf = (mode == MitmMode::OtherDevicePuf).then(|| world.enroll_decoy(&PufParams::default()).puf().clone());
            let mut adversary = ForgeRotate { rng: SeededWords::derived(seed, "forger"), puf, fired: false };
            world.run_session(&mut adversary)
        }
    };
    ScenarioResult::from_run(scenario, &run, &world.observed)
}

/// The victim's stored CRP after a scenario.
pub fn victim_crp(result: &ScenarioResult) -> Option<crate::protocol::CrpRecord> {
    result.store_after.crp(super::sim::VICTIM_DEVICE)
}
