use crate::crypto::{ct_equal, hash_words, random_word, DeviceId, Word256, WordSource};

use super::costs::OpTally;
use super::device::derive_session_key;
use super::messages::{
    AuthChallenge, ClientNonce, ConnEstablish, ConnReq, CrpRotate, DeviceNonce, MessageKind, RotateAck, SessionId,
};
use super::server::client_alias;
use super::{Check, ProtocolError, SessionKey};

/// What the client knows about itself: Id_c, U_c and P_c.
#[derive(Clone)]
pub struct ClientCredentials {
    pub client_id: DeviceId,
    pub username: Vec<u8>,
    pub password: Vec<u8>,
}

impl ClientCredentials {
    pub fn new(client_id: DeviceId, username: impl Into<Vec<u8>>, password: impl Into<Vec<u8>>) -> Self {
        ClientCredentials { client_id, username: username.into(), password: password.into() }
    }

    pub fn alias(&self) -> Word256 {
        client_alias(&self.username, &self.password, self.client_id)
    }
}

impl std::fmt::Debug for ClientCredentials {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClientCredentials")
            .field("client_id", &self.client_id)
            .finish_non_exhaustive()
    }
}

/// Client progress through a handshake. The client relays ConnEstablish,
/// AuthChallenge and CrpRotate between device and server before it takes
/// part in the nonce exchange.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClientPhase {
    AwaitEstablish,
    AwaitServer,
    AwaitDeviceRotate,
    AwaitRotateAck,
    AwaitDeviceNonce,
    Established,
    Aborted,
}

impl ClientPhase {
    fn name(self) -> &'static str {
        match self {
            ClientPhase::AwaitEstablish => "AwaitEstablish",
            ClientPhase::AwaitServer => "AwaitServer",
            ClientPhase::AwaitDeviceRotate => "AwaitDeviceRotate",
            ClientPhase::AwaitRotateAck => "AwaitRotateAck",
            ClientPhase::AwaitDeviceNonce => "AwaitDeviceNonce",
            ClientPhase::Established => "Established",
            ClientPhase::Aborted => "Aborted",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClientSession {
    session_id: SessionId,
    client_id: DeviceId,
    alias: Word256,
    device_id: Option<DeviceId>,
    m9: Option<Word256>,
    nonce: Option<Word256>,
    device_nonce: Option<Word256>,
    key: Option<SessionKey>,
    phase: ClientPhase,
    ops: OpTally,
}

impl ClientSession {
    /// Opens a handshake; the returned request goes to the device.
    pub fn start(credentials: &ClientCredentials, session_id: SessionId) -> (Self, ConnReq) {
        let session = ClientSession {
            session_id,
            client_id: credentials.client_id,
            alias: credentials.alias(),
            device_id: None,
            m9: None,
            nonce: None,
            device_nonce: None,
            key: None,
            phase: ClientPhase::AwaitEstablish,
            ops: OpTally::default(),
        };
        (session, ConnReq { client_id: credentials.client_id })
    }

    pub fn session_id(&self) -> SessionId {
        self.session_id
    }

    pub fn phase(&self) -> ClientPhase {
        self.phase
    }

    pub fn ops(&self) -> &OpTally {
        &self.ops
    }

    pub fn device_id(&self) -> Option<DeviceId> {
        self.device_id
    }

    pub fn alias(&self) -> &Word256 {
        &self.alias
    }

    pub fn nonce(&self) -> Option<&Word256> {
        self.nonce.as_ref()
    }

    pub fn device_nonce(&self) -> Option<&Word256> {
        self.device_nonce.as_ref()
    }

    pub fn key(&self) -> Option<&SessionKey> {
        self.key.as_ref()
    }

    fn expect(&self, phase: ClientPhase, got: MessageKind) -> Result<(), ProtocolError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(ProtocolError::UnexpectedMessage { phase: self.phase.name(), got })
        }
    }

    /// Checks the device echoed our identifier and relays the request to the server.
    pub fn on_establish(&mut self, msg: &ConnEstablish) -> Result<ConnEstablish, ProtocolError> {
        self.expect(ClientPhase::AwaitEstablish, MessageKind::ConnEstablish)?;
        if msg.client_id != self.client_id {
            self.phase = ClientPhase::Aborted;
            return Err(ProtocolError::AuthenticationFailure(Check::ClientEcho));
        }
        self.device_id = Some(msg.device_id);
        self.phase = ClientPhase::AwaitServer;
        Ok(*msg)
    }

    /// Relays the server's challenge to the device.
    pub fn on_challenge(&mut self, msg: &AuthChallenge) -> Result<AuthChallenge, ProtocolError> {
        self.expect(ClientPhase::AwaitServer, MessageKind::AuthChallenge)?;
        self.phase = ClientPhase::AwaitDeviceRotate;
        Ok(*msg)
    }

    /// Relays the device's rotation message to the server.
    pub fn on_rotate(&mut self, msg: &CrpRotate) -> Result<CrpRotate, ProtocolError> {
        self.expect(ClientPhase::AwaitDeviceRotate, MessageKind::CrpRotate)?;
        self.phase = ClientPhase::AwaitRotateAck;
        Ok(*msg)
    }

    /// Marks the session aborted after an error reported by a peer.
    pub fn abort(&mut self) {
        self.phase = ClientPhase::Aborted;
    }
}

/// Step 6: masks a fresh N_c with M9.
pub fn client_send_nonce(
    session: &mut ClientSession,
    msg: &RotateAck,
    rng: &mut impl WordSource,
) -> Result<ClientNonce, ProtocolError> {
    session.expect(ClientPhase::AwaitRotateAck, MessageKind::RotateAck)?;
    let nonce = random_word(rng);
    let m10 = nonce ^ msg.m9;
    session.ops.xor += 1;
    let m11 = hash_words(&[&m10, &msg.m9]);
    session.ops.hash += 1;
    session.m9 = Some(msg.m9);
    session.nonce = Some(nonce);
    session.phase = ClientPhase::AwaitDeviceNonce;
    Ok(ClientNonce { m10, m11 })
}

/// Step 7 (client side): recovers N_p, checks M13 and derives the key.
pub fn client_finish(session: &mut ClientSession, msg: &DeviceNonce) -> Result<SessionKey, ProtocolError> {
    session.expect(ClientPhase::AwaitDeviceNonce, MessageKind::DeviceNonce)?;
    let nonce = session.nonce.expect("nonce is set before AwaitDeviceNonce");
    let device_id = session.device_id.expect("device id is set before AwaitDeviceNonce");
    let device_nonce = msg.m12 ^ nonce;
    session.ops.xor += 1;
    let expected_m13 = hash_words(&[&msg.m12, &nonce]);
    session.ops.hash += 1;
    if !ct_equal(&expected_m13, &msg.m13) {
        session.phase = ClientPhase::Aborted;
        return Err(ProtocolError::AuthenticationFailure(Check::M13));
    }
    let key = derive_session_key(&nonce, &device_nonce, &session.alias, device_id);
    session.ops.hash += 1;
    session.device_nonce = Some(device_nonce);
    session.key = Some(key);
    session.phase = ClientPhase::Established;
    Ok(key)
}
