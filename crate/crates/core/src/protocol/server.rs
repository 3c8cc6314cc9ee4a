use std::collections::HashMap;
use std::fmt;
use std::time::{Duration, Instant};

use crate::crypto::{ct_equal, hash_fields, hash_words, random_word, DeviceId, Field, Word256, WordSource};
use crate::sram_puf::PufFunction;

use super::costs::OpTally;
use super::messages::{AuthChallenge, ConnEstablish, CrpRotate, Frame, MessageKind, RotateAck, SessionId, WireMessage};
use super::store::{ClientRecord, CredentialStore, CrpRecord};
use super::{Check, ProtocolError};

pub const DEFAULT_SESSION_TIMEOUT: Duration = Duration::from_secs(30);

/// Stores the device's first CRP. Runs only over the trusted enrollment path.
pub fn enroll_device<S: CredentialStore>(
    store: &mut S,
    device_id: DeviceId,
    puf: &PufFunction,
    rng: &mut impl WordSource,
) -> Result<CrpRecord, ProtocolError> {
    if store.crp(device_id).is_some() {
        return Err(ProtocolError::AlreadyEnrolled(device_id));
    }
    let challenge = random_word(rng);
    let response = puf.respond(&challenge)?;
    let record = CrpRecord { device_id, challenge, response };
    store.insert_crp(record)?;
    Ok(record)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyWarning {
    EmptyUsername,
    EmptyPassword,
}

impl fmt::Display for PolicyWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyWarning::EmptyUsername => f.write_str("empty username"),
            PolicyWarning::EmptyPassword => f.write_str("empty password"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Registration {
    pub record: ClientRecord,
    pub warnings: Vec<PolicyWarning>,
}

/// Id_c' = H(U_c, P_c, Id_c).
pub fn client_alias(username: &[u8], password: &[u8], client_id: DeviceId) -> Word256 {
    hash_fields(&[Field::Octets(username), Field::Octets(password), Field::Id(client_id)])
}

/// Registers a client over the confidential client-server channel.
pub fn register_client<S: CredentialStore>(
    store: &mut S,
    username: &[u8],
    password: &[u8],
    client_id: DeviceId,
) -> Result<Registration, ProtocolError> {
    if store.client(client_id).is_some() {
        return Err(ProtocolError::AlreadyRegistered(client_id));
    }
    let mut warnings = Vec::new();
    if username.is_empty() {
        warnings.push(PolicyWarning::EmptyUsername);
    }
    if password.is_empty() {
        warnings.push(PolicyWarning::EmptyPassword);
    }
    for w in &warnings {
        log::warn!("client {client_id} registered with {w}");
    }
    let record = ClientRecord { client_id, alias: client_alias(username, password, client_id) };
    store.insert_client(record)?;
    Ok(Registration { record, warnings })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServerPhase {
    AwaitRotate,
    Done,
    Aborted,
}

impl ServerPhase {
    fn name(self) -> &'static str {
        match self {
            ServerPhase::AwaitRotate => "AwaitRotate",
            ServerPhase::Done => "Done",
            ServerPhase::Aborted => "Aborted",
        }
    }
}

/// Server half of one handshake.
#[derive(Clone, Debug)]
pub struct ServerSession {
    session_id: SessionId,
    device_id: DeviceId,
    client_id: DeviceId,
    alias: Word256,
    t1: Word256,
    t2: Word256,
    challenge: Word256,
    response: Word256,
    rotated: Option<(Word256, Word256)>,
    m9: Option<Word256>,
    phase: ServerPhase,
    ops: OpTally,
}

impl ServerSession {
    pub fn session_id(&self) -> SessionId {
        self.session_id
    }

    pub fn device_id(&self) -> DeviceId {
        self.device_id
    }

    pub fn client_id(&self) -> DeviceId {
        self.client_id
    }

    pub fn phase(&self) -> ServerPhase {
        self.phase
    }

    pub fn ops(&self) -> &OpTally {
        &self.ops
    }

    pub fn t1(&self) -> &Word256 {
        &self.t1
    }

    pub fn t2(&self) -> &Word256 {
        &self.t2
    }

    pub fn alias(&self) -> &Word256 {
        &self.alias
    }

    /// The CRP committed by this session, once rotation succeeded.
    pub fn rotated_crp(&self) -> Option<(Word256, Word256)> {
        self.rotated
    }

    /// M9 = H(C_pnew, R_pnew), once rotation succeeded.
    pub fn m9(&self) -> Option<Word256> {
        self.m9
    }

    /// Every 256-bit value the session holds.
    pub fn known_words(&self) -> Vec<Word256> {
        let mut words = vec![self.alias, self.t1, self.t2, self.challenge, self.response];
        if let Some((c, r)) = self.rotated {
            words.extend([c, r]);
        }
        words.extend(self.m9);
        words
    }
}

/// Step 2: draws T1, T2 and builds M1..M4 for the device's stored CRP.
pub fn server_begin_auth<S: CredentialStore>(
    store: &S,
    session_id: SessionId,
    device_id: DeviceId,
    client_id: DeviceId,
    rng: &mut impl WordSource,
) -> Result<(ServerSession, AuthChallenge), ProtocolError> {
    let crp = store.crp(device_id).ok_or(ProtocolError::UnknownDevice(device_id))?;
    let client = store.client(client_id).ok_or(ProtocolError::UnknownClient(client_id))?;
    let t1 = random_word(rng);
    let t2 = random_word(rng);
    let mut ops = OpTally::default();

    let m1 = t1 ^ crp.response;
    let m2 = t1 ^ t2;
    let h12 = hash_words(&[&t1, &t2]);
    let m3 = h12 ^ client.alias;
    let m4 = hash_words(&[&t1, &t2, &crp.response, &crp.challenge, &client.alias]);
    ops.xor += 3;
    ops.hash += 2;

    let session = ServerSession {
        session_id,
        device_id,
        client_id,
        alias: client.alias,
        t1,
        t2,
        challenge: crp.challenge,
        response: crp.response,
        rotated: None,
        m9: None,
        phase: ServerPhase::AwaitRotate,
        ops,
    };
    Ok((session, AuthChallenge { m1, m2, m3, m4, challenge: crp.challenge }))
}

/// Step 5: recovers and verifies the new CRP, swaps it into the store and
/// answers with M9. On any failure the stored CRP is left as it was.
pub fn server_handle_rotate<S: CredentialStore>(
    session: &mut ServerSession,
    store: &mut S,
    msg: &CrpRotate,
) -> Result<RotateAck, ProtocolError> {
    if session.phase != ServerPhase::AwaitRotate {
        return Err(ProtocolError::UnexpectedMessage {
            phase: session.phase.name(),
            got: MessageKind::CrpRotate,
        });
    }
    let ops = &mut session.ops;

    let new_challenge = msg.m5 ^ session.response;
    ops.xor += 1;
    let expected_m6 = hash_words(&[&msg.m5, &session.response]);
    ops.hash += 1;
    if !ct_equal(&expected_m6, &msg.m6) {
        session.phase = ServerPhase::Aborted;
        return Err(ProtocolError::RotateFailure(Check::M6));
    }

    let new_response = session.t2 ^ msg.m7;
    ops.xor += 1;
    let expected_m8 = hash_words(&[&msg.m7, &session.t2]);
    ops.hash += 1;
    if !ct_equal(&expected_m8, &msg.m8) {
        session.phase = ServerPhase::Aborted;
        return Err(ProtocolError::RotateFailure(Check::M8));
    }

    // The session's CRP must still be the stored one.
    let current = store.crp(session.device_id);
    let expected = CrpRecord {
        device_id: session.device_id,
        challenge: session.challenge,
        response: session.response,
    };
    if current != Some(expected) {
        session.phase = ServerPhase::Aborted;
        return Err(ProtocolError::Storage(format!(
            "stored CRP for device {} changed during the session",
            session.device_id
        )));
    }
    let record = CrpRecord { device_id: session.device_id, challenge: new_challenge, response: new_response };
    if let Err(e) = store.replace_crp(record) {
        session.phase = ServerPhase::Aborted;
        return Err(e);
    }

    let m9 = hash_words(&[&new_challenge, &new_response]);
    ops.hash += 1;
    session.rotated = Some((new_challenge, new_response));
    session.m9 = Some(m9);
    session.phase = ServerPhase::Done;
    Ok(RotateAck { m9 })
}

/// Multiplexes concurrent handshakes over one credential store.
///
/// At most one handshake per device is in flight; sessions older than the
/// timeout are dropped as aborted.
pub struct AuthServer<S> {
    store: S,
    sessions: HashMap<SessionId, (ServerSession, Instant)>,
    timeout: Duration,
}

impl<S: CredentialStore> AuthServer<S> {
    pub fn new(store: S, timeout: Duration) -> Self {
        AuthServer { store, sessions: HashMap::new(), timeout }
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut S {
        &mut self.store
    }

    pub fn into_store(self) -> S {
        self.store
    }

    pub fn active_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Drops sessions past their deadline and returns their ids.
    pub fn expire(&mut self, now: Instant) -> Vec<SessionId> {
        let timeout = self.timeout;
        let mut expired: Vec<SessionId> = self
            .sessions
            .iter()
            .filter(|(_, (_, started))| now.saturating_duration_since(*started) >= timeout)
            .map(|(id, _)| *id)
            .collect();
        expired.sort();
        for id in &expired {
            self.sessions.remove(id);
            log::info!("session {id} expired");
        }
        expired
    }

    pub fn begin(
        &mut self,
        session_id: SessionId,
        request: &ConnEstablish,
        rng: &mut impl WordSource,
        now: Instant,
    ) -> Result<AuthChallenge, ProtocolError> {
        self.expire(now);
        if self.sessions.contains_key(&session_id) {
            return Err(ProtocolError::UnexpectedMessage {
                phase: ServerPhase::AwaitRotate.name(),
                got: MessageKind::ConnEstablish,
            });
        }
        if self.sessions.values().any(|(s, _)| s.device_id == request.device_id) {
            return Err(ProtocolError::SessionBusy(request.device_id));
        }
        let (session, challenge) =
            server_begin_auth(&self.store, session_id, request.device_id, request.client_id, rng)?;
        self.sessions.insert(session_id, (session, now));
        Ok(challenge)
    }

    /// Completes a session. The session ends whether or not rotation succeeds.
    pub fn rotate(&mut self, session_id: SessionId, msg: &CrpRotate, now: Instant) -> Result<RotateAck, ProtocolError> {
        let (mut session, started) = self
            .sessions
            .remove(&session_id)
            .ok_or(ProtocolError::UnknownSession(session_id))?;
        if now.saturating_duration_since(started) >= self.timeout {
            return Err(ProtocolError::SessionExpired(session_id));
        }
        server_handle_rotate(&mut session, &mut self.store, msg)
    }

    /// Dispatches one client frame and returns the reply frame.
    pub fn handle_frame(&mut self, frame: &Frame, rng: &mut impl WordSource, now: Instant) -> Result<Frame, ProtocolError> {
        let reply = match &frame.message {
            WireMessage::ConnEstablish(req) => WireMessage::AuthChallenge(self.begin(frame.session, req, rng, now)?),
            WireMessage::CrpRotate(msg) => WireMessage::RotateAck(self.rotate(frame.session, msg, now)?),
            other => {
                return Err(ProtocolError::UnexpectedMessage { phase: "server", got: other.kind() });
            }
        };
        Ok(Frame::new(frame.session, reply))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{ScriptedWords, SeededWords};
    use crate::protocol::MemoryStore;
    use crate::sram_puf::PufParams;

    fn puf(seed: u64) -> PufFunction {
        PufFunction::provision(&PufParams { cell_count: 1024, ..PufParams::default() }, seed).unwrap()
    }

    fn fixture() -> (MemoryStore, PufFunction) {
        let mut store = MemoryStore::new();
        let puf = puf(7);
        enroll_device(&mut store, DeviceId(1), &puf, &mut SeededWords::new(1)).unwrap();
        register_client(&mut store, b"alice", b"secret", DeviceId(2)).unwrap();
        (store, puf)
    }

    #[test]
    fn enrollment_stores_one_record() {
        let (mut store, puf) = fixture();
        let rec = store.crp(DeviceId(1)).unwrap();
        assert_eq!(puf.respond(&rec.challenge).unwrap(), rec.response);
        assert_eq!(store.crp_count(DeviceId(1)), 1);
        assert!(matches!(
            enroll_device(&mut store, DeviceId(1), &puf, &mut SeededWords::new(2)),
            Err(ProtocolError::AlreadyEnrolled(DeviceId(1)))
        ));
        assert_eq!(store.crp(DeviceId(1)), Some(rec));
    }

    #[test]
    fn enrollment_is_reproducible_under_seed() {
        let (a, _) = fixture();
        let (b, _) = fixture();
        assert_eq!(a.crp(DeviceId(1)), b.crp(DeviceId(1)));
    }

    #[test]
    fn registration_alias_and_duplicates() {
        let (mut store, _) = fixture();
        let rec = store.client(DeviceId(2)).unwrap();
        // Independent encoding: len(U) || U || len(P) || P || Id_c.
        let mut raw = Vec::new();
        raw.extend_from_slice(&5u32.to_be_bytes());
        raw.extend_from_slice(b"alice");
        raw.extend_from_slice(&6u32.to_be_bytes());
        raw.extend_from_slice(b"secret");
        raw.extend_from_slice(&2u32.to_be_bytes());
        assert_eq!(rec.alias, crate::crypto::hash256(&raw));
        assert!(matches!(
            register_client(&mut store, b"bob", b"x", DeviceId(2)),
            Err(ProtocolError::AlreadyRegistered(_))
        ));
        let other = register_client(&mut store, b"alice", b"secreT", DeviceId(3)).unwrap();
        assert_ne!(other.record.alias, client_alias(b"alice", b"secret", DeviceId(3)));
        assert!(other.warnings.is_empty());
    }

    #[test]
    fn empty_credentials_are_flagged() {
        let mut store = MemoryStore::new();
        let reg = register_client(&mut store, b"", b"", DeviceId(9)).unwrap();
        assert_eq!(reg.warnings, vec![PolicyWarning::EmptyUsername, PolicyWarning::EmptyPassword]);
        assert!(store.client(DeviceId(9)).is_some());
    }

    #[test]
    fn zero_randomness_exposes_xor_identities() {
        let (store, _) = fixture();
        let crp = store.crp(DeviceId(1)).unwrap();
        let alias = store.client(DeviceId(2)).unwrap().alias;
        let mut rng = ScriptedWords::new([Word256::ZERO, Word256::ZERO], 0);
        let (_, msg) = server_begin_auth(&store, SessionId(1), DeviceId(1), DeviceId(2), &mut rng).unwrap();
        assert_eq!(msg.m1, crp.response);
        assert_eq!(msg.m2, Word256::ZERO);
        assert_eq!(msg.m3, hash_words(&[&Word256::ZERO, &Word256::ZERO]) ^ alias);
        assert_eq!(msg.challenge, crp.challenge);
    }

    #[test]
    fn unknown_parties_are_rejected() {
        let (store, _) = fixture();
        let mut rng = SeededWords::new(3);
        assert!(matches!(
            server_begin_auth(&store, SessionId(1), DeviceId(5), DeviceId(2), &mut rng),
            Err(ProtocolError::UnknownDevice(DeviceId(5)))
        ));
        assert!(matches!(
            server_begin_auth(&store, SessionId(1), DeviceId(1), DeviceId(6), &mut rng),
            Err(ProtocolError::UnknownClient(DeviceId(6)))
        ));
        let mut server = AuthServer::new(store, DEFAULT_SESSION_TIMEOUT);
        let req = ConnEstablish { device_id: DeviceId(5), client_id: DeviceId(2) };
        assert!(server.begin(SessionId(1), &req, &mut rng, Instant::now()).is_err());
        assert_eq!(server.active_sessions(), 0);
    }

    #[test]
    fn rotate_in_wrong_phase_changes_nothing() {
        let (mut store, _) = fixture();
        let mut rng = SeededWords::new(4);
        let (mut session, _) = server_begin_auth(&store, SessionId(1), DeviceId(1), DeviceId(2), &mut rng).unwrap();
        let forged = CrpRotate { m5: Word256::ZERO, m6: Word256::ZERO, m7: Word256::ZERO, m8: Word256::ZERO };
        let before = store.clone();
        assert!(matches!(
            server_handle_rotate(&mut session, &mut store, &forged),
            Err(ProtocolError::RotateFailure(Check::M6))
        ));
        assert_eq!(session.phase(), ServerPhase::Aborted);
        let snapshot = session.clone();
        assert!(matches!(
            server_handle_rotate(&mut session, &mut store, &forged),
            Err(ProtocolError::UnexpectedMessage { .. })
        ));
        assert_eq!(session.ops(), snapshot.ops());
        assert_eq!(store, before);
    }

    #[test]
    fn one_session_per_device_and_timeouts() {
        let (store, _) = fixture();
        let mut server = AuthServer::new(store, Duration::from_secs(30));
        let mut rng = SeededWords::new(5);
        let t0 = Instant::now();
        let req = ConnEstablish { device_id: DeviceId(1), client_id: DeviceId(2) };
        server.begin(SessionId(1), &req, &mut rng, t0).unwrap();
        assert!(matches!(
            server.begin(SessionId(2), &req, &mut rng, t0 + Duration::from_secs(1)),
            Err(ProtocolError::SessionBusy(DeviceId(1)))
        ));
        // Once the first session expires the device is free again.
        let later = t0 + Duration::from_secs(31);
        server.begin(SessionId(2), &req, &mut rng, later).unwrap();
        assert_eq!(server.active_sessions(), 1);
        let forged = CrpRotate { m5: Word256::ZERO, m6: Word256::ZERO, m7: Word256::ZERO, m8: Word256::ZERO };
        assert!(matches!(
            server.rotate(SessionId(1), &forged, later),
            Err(ProtocolError::UnknownSession(_))
        ));
        assert!(matches!(
            server.rotate(SessionId(2), &forged, later + Duration::from_secs(30)),
            Err(ProtocolError::SessionExpired(_))
        ));
        assert_eq!(server.active_sessions(), 0);
    }
}
