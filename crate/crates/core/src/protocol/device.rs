use crate::crypto::{ct_equal, hash_fields, hash_words, random_word, DeviceId, Field, Word256, WordSource};
use crate::sram_puf::PufFunction;

use super::costs::OpTally;
use super::messages::{AuthChallenge, ClientNonce, ConnEstablish, ConnReq, CrpRotate, DeviceNonce, MessageKind};
use super::{Check, ProtocolError, SessionKey};

/// A deployed device: its identifier and PUF. It stores no secrets.
#[derive(Clone, Debug)]
pub struct Device {
    id: DeviceId,
    puf: PufFunction,
}

impl Device {
    pub fn new(id: DeviceId, puf: PufFunction) -> Self {
        Device { id, puf }
    }

    pub fn id(&self) -> DeviceId {
        self.id
    }

    pub fn puf(&self) -> &PufFunction {
        &self.puf
    }

    /// Step 1: answers a connection request with (Id_p, Id_c).
    pub fn accept_connection(&self, req: &ConnReq) -> ConnEstablish {
        ConnEstablish { device_id: self.id, client_id: req.client_id }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DevicePhase {
    AwaitNonce,
    Established,
    Aborted,
}

impl DevicePhase {
    fn name(self) -> &'static str {
        match self {
            DevicePhase::AwaitNonce => "AwaitNonce",
            DevicePhase::Established => "Established",
            DevicePhase::Aborted => "Aborted",
        }
    }
}

/// Device half of one handshake, created once M4 verifies.
#[derive(Clone, Debug)]
pub struct DeviceSession {
    device_id: DeviceId,
    t1: Word256,
    t2: Word256,
    alias: Word256,
    new_challenge: Word256,
    new_response: Word256,
    client_nonce: Option<Word256>,
    device_nonce: Option<Word256>,
    key: Option<SessionKey>,
    phase: DevicePhase,
    ops: OpTally,
}

impl DeviceSession {
    pub fn phase(&self) -> DevicePhase {
        self.phase
    }

    pub fn ops(&self) -> &OpTally {
        &self.ops
    }

    pub fn recovered_t1(&self) -> &Word256 {
        &self.t1
    }

    pub fn recovered_t2(&self) -> &Word256 {
        &self.t2
    }

    pub fn recovered_alias(&self) -> &Word256 {
        &self.alias
    }

    /// (C_pnew, R_pnew) generated for this session.
    pub fn new_crp(&self) -> (Word256, Word256) {
        (self.new_challenge, self.new_response)
    }

    pub fn client_nonce(&self) -> Option<&Word256> {
        self.client_nonce.as_ref()
    }

    pub fn device_nonce(&self) -> Option<&Word256> {
        self.device_nonce.as_ref()
    }

    pub fn key(&self) -> Option<&SessionKey> {
        self.key.as_ref()
    }
}

/// Steps 3-4: authenticates the server through M4, then draws a new
/// challenge and returns it and its response masked as M5..M8.
pub fn device_handle_auth(
    device: &Device,
    msg: &AuthChallenge,
    rng: &mut impl WordSource,
) -> Result<(DeviceSession, CrpRotate), ProtocolError> {
    let puf = &device.puf;
    let mut ops = OpTally::default();

    let response = puf.respond(&msg.challenge)?;
    ops.puf += 1;
    let t1 = msg.m1 ^ response;
    let t2 = msg.m2 ^ t1;
    let h12 = hash_words(&[&t1, &t2]);
    let alias = msg.m3 ^ h12;
    ops.xor += 3;
    ops.hash += 1;
    let expected_m4 = hash_words(&[&t1, &t2, &response, &msg.challenge, &alias]);
    ops.hash += 1;
    if !ct_equal(&expected_m4, &msg.m4) {
        return Err(ProtocolError::AuthenticationFailure(Check::M4));
    }

    let new_challenge = loop {
        let c = random_word(rng);
        if c != msg.challenge {
            break c;
        }
    };
    let m5 = new_challenge ^ response;
    ops.xor += 1;
    let new_response = puf.respond(&new_challenge)?;
    ops.puf += 1;
    let m6 = hash_words(&[&m5, &response]);
    ops.hash += 1;
    let m7 = t2 ^ new_response;
    ops.xor += 1;
    let m8 = hash_words(&[&m7, &t2]);
    ops.hash += 1;

    let session = DeviceSession {
        device_id: device.id,
        t1,
        t2,
        alias,
        new_challenge,
        new_response,
        client_nonce: None,
        device_nonce: None,
        key: None,
        phase: DevicePhase::AwaitNonce,
        ops,
    };
    Ok((session, CrpRotate { m5, m6, m7, m8 }))
}

/// Step 7 (device side): recovers N_c through M9 = H(C_pnew, R_pnew),
/// answers with its own nonce and derives the session key.
pub fn device_handle_nonce(
    session: &mut DeviceSession,
    msg: &ClientNonce,
    rng: &mut impl WordSource,
) -> Result<(DeviceNonce, SessionKey), ProtocolError> {
    if session.phase != DevicePhase::AwaitNonce {
        return Err(ProtocolError::UnexpectedMessage {
            phase: session.phase.name(),
            got: MessageKind::ClientNonce,
        });
    }
    let ops = &mut session.ops;
    let m9 = hash_words(&[&session.new_challenge, &session.new_response]);
    ops.hash += 1;
    let client_nonce = msg.m10 ^ m9;
    ops.xor += 1;
    let expected_m11 = hash_words(&[&msg.m10, &m9]);
    ops.hash += 1;
    if !ct_equal(&expected_m11, &msg.m11) {
        session.phase = DevicePhase::Aborted;
        return Err(ProtocolError::AuthenticationFailure(Check::M11));
    }

    let device_nonce = random_word(rng);
    let m12 = device_nonce ^ client_nonce;
    ops.xor += 1;
    let m13 = hash_words(&[&m12, &client_nonce]);
    ops.hash += 1;
    let key = derive_session_key(&client_nonce, &device_nonce, &session.alias, session.device_id);
    ops.hash += 1;

    session.client_nonce = Some(client_nonce);
    session.device_nonce = Some(device_nonce);
    session.key = Some(key);
    session.phase = DevicePhase::Established;
    Ok((DeviceNonce { m12, m13 }, key))
}

/// H(N_c, N_p, Id_c', Id_p).
pub(crate) fn derive_session_key(
    client_nonce: &Word256,
    device_nonce: &Word256,
    alias: &Word256,
    device_id: DeviceId,
) -> SessionKey {
    SessionKey::from_word(hash_fields(&[
        Field::Word(client_nonce),
        Field::Word(device_nonce),
        Field::Word(alias),
        Field::Id(device_id),
    ]))
}
