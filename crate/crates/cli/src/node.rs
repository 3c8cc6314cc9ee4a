//! Socket-facing roles: the server daemon, the device emulator and the
//! client that bridges them.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use pufkex_core::crypto::{random_word, SystemEntropy, WordSource};
use pufkex_core::protocol::{
    client_finish, client_send_nonce, device_handle_auth, device_handle_nonce, AuthServer, ClientCredentials,
    ClientSession, Device, DeviceSession, Frame, MessageKind, ProtocolError, SessionId, WireMessage,
};
use thiserror::Error;

use crate::store::FileStore;
use crate::wire::{Envelope, Link, PlainLink, Tunnel, WireError};

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn is_disconnect(e: &WireError) -> bool {
    matches!(e, WireError::Io(io) if io.kind() == io::ErrorKind::UnexpectedEof)
}

/// A listening thread that can be stopped and joined.
struct Acceptor {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Acceptor {
    fn spawn(listener: TcpListener, mut handle: impl FnMut(TcpStream) + Send + 'static) -> io::Result<Self> {
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(s) => handle(s),
                    Err(e) => warn!("accept failed: {e}"),
                }
            }
        });
        Ok(Acceptor { addr, stop, thread: Some(thread) })
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn wait(&mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

struct ServerState {
    auth: AuthServer<FileStore>,
    rng: SystemEntropy,
}

/// Running server daemon.
pub struct ServerHandle {
    acceptor: Acceptor,
    state: Arc<Mutex<ServerState>>,
    connections: Arc<AtomicUsize>,
}

pub struct ServerOptions {
    pub psk: [u8; 32],
    pub session_timeout: Duration,
    pub io_timeout: Duration,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.acceptor.addr
    }

    /// Connections accepted so far.
    pub fn connections(&self) -> usize {
        self.connections.load(Ordering::SeqCst)
    }

    pub fn with_store<R>(&self, f: impl FnOnce(&mut FileStore) -> R) -> R {
        f(lock(&self.state).auth.store_mut())
    }

    pub fn shutdown(mut self) {
        self.acceptor.shutdown();
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        self.acceptor.wait();
    }
}

pub fn spawn_server(listener: TcpListener, store: FileStore, options: ServerOptions) -> io::Result<ServerHandle> {
    let rng = SystemEntropy::new().map_err(io::Error::other)?;
    let state = Arc::new(Mutex::new(ServerState { auth: AuthServer::new(store, options.session_timeout), rng }));
    let connections = Arc::new(AtomicUsize::new(0));
    let (st, count) = (Arc::clone(&state), Arc::clone(&connections));
    let options = Arc::new(options);
    let acceptor = Acceptor::spawn(listener, move |stream| {
        let id = count.fetch_add(1, Ordering::SeqCst) + 1;
        let (st, options) = (Arc::clone(&st), Arc::clone(&options));
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = serve_connection(stream, &st, &options) {
                warn!("connection {id} from {peer:?}: {e}");
            }
        });
    })?;
    info!("server listening on {}", acceptor.addr);
    Ok(ServerHandle { acceptor, state, connections })
}

fn serve_connection(stream: TcpStream, state: &Mutex<ServerState>, options: &ServerOptions) -> Result<(), WireError> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(options.io_timeout))?;
    stream.set_write_timeout(Some(options.io_timeout))?;
    let mut rng = SystemEntropy::new().map_err(io::Error::other)?;
    let mut tunnel = Tunnel::accept(stream, &options.psk, &mut rng)?;
    loop {
        let envelope = match tunnel.recv() {
            Ok(e) => e,
            Err(e) if is_disconnect(&e) => return Ok(()),
            Err(e) => return Err(e),
        };
        let Envelope::Frame(frame) = envelope else {
            tunnel.send(&Envelope::Error("expected a protocol frame".into()))?;
            return Ok(());
        };
        let reply = {
            let mut guard = lock(state);
            let ServerState { auth, rng } = &mut *guard;
            let now = Instant::now();
            for expired in auth.expire(now) {
                info!("session {expired} timed out");
            }
            auth.handle_frame(&frame, rng, now)
        };
        match reply {
            Ok(f) => {
                if f.kind() == MessageKind::RotateAck {
                    info!("session {}: CRP rotated", frame.session);
                }
                tunnel.send(&Envelope::Frame(f))?;
            }
            Err(e) => {
                warn!("session {}: {e}", frame.session);
                tunnel.send(&Envelope::Error(e.to_string()))?;
                return Ok(());
            }
        }
    }
}

/// Running device emulator. It only ever listens; it has no notion of
/// where the server is.
pub struct EmulatorHandle {
    acceptor: Acceptor,
    established: Arc<Mutex<Vec<(SessionId, String)>>>,
}

impl EmulatorHandle {
    pub fn addr(&self) -> SocketAddr {
        self.acceptor.addr
    }

    /// (session, key fingerprint) for every completed handshake.
    pub fn established(&self) -> Vec<(SessionId, String)> {
        lock(&self.established).clone()
    }

    pub fn shutdown(mut self) {
        self.acceptor.shutdown();
    }

    pub fn wait(mut self) {
        self.acceptor.wait();
    }
}

pub fn spawn_emulator(listener: TcpListener, device: Device, io_timeout: Duration) -> io::Result<EmulatorHandle> {
    let device = Arc::new(device);
    let busy: Arc<Mutex<Option<usize>>> = Arc::new(Mutex::new(None));
    let established = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&established);
    let mut next_conn = 0usize;
    let acceptor = Acceptor::spawn(listener, move |stream| {
        next_conn += 1;
        let conn = next_conn;
        let (device, busy, log) = (Arc::clone(&device), Arc::clone(&busy), Arc::clone(&log));
        thread::spawn(move || {
            let result = device_connection(stream, conn, &device, &busy, &log, io_timeout);
            {
                let mut slot = lock(&busy);
                if *slot == Some(conn) {
                    *slot = None;
                }
            }
            if let Err(e) = result {
                debug!("device connection {conn}: {e}");
            }
        });
    })?;
    info!("device emulator listening on {}", acceptor.addr);
    Ok(EmulatorHandle { acceptor, established })
}

fn device_connection(
    stream: TcpStream,
    conn: usize,
    device: &Device,
    busy: &Mutex<Option<usize>>,
    established: &Mutex<Vec<(SessionId, String)>>,
    io_timeout: Duration,
) -> Result<(), WireError> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(io_timeout))?;
    stream.set_write_timeout(Some(io_timeout))?;
    let mut link = PlainLink::new(stream);
    let mut rng = SystemEntropy::new().map_err(io::Error::other)?;
    let mut session: Option<DeviceSession> = None;
    loop {
        let envelope = match link.recv() {
            Ok(e) => e,
            Err(e) if is_disconnect(&e) => return Ok(()),
            Err(e) => return Err(e),
        };
        let Envelope::Frame(frame) = envelope else {
            link.send(&Envelope::Error("expected a protocol frame".into()))?;
            return Ok(());
        };
        let reply: Result<Vec<Envelope>, ProtocolError> = match frame.message {
            WireMessage::ConnReq(req) => {
                let mut slot = lock(busy);
                match *slot {
                    Some(owner) if owner != conn => Err(ProtocolError::SessionBusy(device.id())),
                    _ => {
                        *slot = Some(conn);
                        let reply = device.accept_connection(&req);
                        Ok(vec![Envelope::Frame(Frame::new(frame.session, WireMessage::ConnEstablish(reply)))])
                    }
                }
            }
            WireMessage::AuthChallenge(msg) if *lock(busy) == Some(conn) && session.is_none() => {
                device_handle_auth(device, &msg, &mut rng).map(|(s, rotate)| {
                    session = Some(s);
                    vec![Envelope::Frame(Frame::new(frame.session, WireMessage::CrpRotate(rotate)))]
                })
            }
            WireMessage::ClientNonce(msg) if session.is_some() => {
                let s = session.as_mut().expect("checked");
                device_handle_nonce(s, &msg, &mut rng).map(|(reply, key)| {
                    info!("session {}: key established (fp {})", frame.session, key.fingerprint());
                    lock(established).push((frame.session, key.fingerprint()));
                    vec![
                        Envelope::Frame(Frame::new(frame.session, WireMessage::DeviceNonce(reply))),
                        Envelope::KeyConfirm(key.fingerprint()),
                    ]
                })
            }
            other => Err(ProtocolError::UnexpectedMessage { phase: "device", got: other.kind() }),
        };
        match reply {
            Ok(envelopes) => {
                let done = envelopes.iter().any(|e| matches!(e, Envelope::KeyConfirm(_)));
                for e in &envelopes {
                    link.send(e)?;
                }
                if done {
                    return Ok(());
                }
            }
            Err(e) => {
                warn!("session {}: {e}", frame.session);
                link.send(&Envelope::Error(e.to_string()))?;
                return Ok(());
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{step}: {source}")]
    Wire { step: &'static str, source: WireError },
    #[error("aborted at {step}: {source}")]
    Protocol { step: &'static str, source: ProtocolError },
    #[error("aborted at {step}: {peer} refused: {reason}")]
    Refused { step: &'static str, peer: &'static str, reason: String },
    #[error("aborted at {step}: unexpected reply {got}")]
    Unexpected { step: &'static str, got: String },
}

impl ClientError {
    /// The handshake step that failed.
    pub fn step(&self) -> &'static str {
        match self {
            ClientError::Wire { step, .. }
            | ClientError::Protocol { step, .. }
            | ClientError::Refused { step, .. }
            | ClientError::Unexpected { step, .. } => step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthReport {
    pub session: SessionId,
    pub client_fingerprint: String,
    /// Fingerprint the device confirmed, when it sent one.
    pub device_fingerprint: Option<String>,
}

impl AuthReport {
    pub fn keys_match(&self) -> Option<bool> {
        self.device_fingerprint.as_ref().map(|d| *d == self.client_fingerprint)
    }
}

fn exchange(
    link: &mut impl Link,
    frame: Frame,
    step: &'static str,
    peer: &'static str,
) -> Result<WireMessage, ClientError> {
    link.send(&Envelope::Frame(frame)).map_err(|source| ClientError::Wire { step, source })?;
    match link.recv().map_err(|source| ClientError::Wire { step, source })? {
        Envelope::Frame(f) if f.session == frame.session => Ok(f.message),
        Envelope::Frame(f) => Err(ClientError::Unexpected { step, got: format!("frame for session {}", f.session) }),
        Envelope::Error(reason) => Err(ClientError::Refused { step, peer, reason }),
        Envelope::KeyConfirm(_) => Err(ClientError::Unexpected { step, got: "key confirmation".into() }),
    }
}

/// Runs one handshake, relaying between a device link and a server link.
pub fn run_handshake(
    device: &mut impl Link,
    server: &mut impl Link,
    credentials: &ClientCredentials,
    session_id: SessionId,
    rng: &mut impl WordSource,
) -> Result<AuthReport, ClientError> {
    let protocol = |step| move |source| ClientError::Protocol { step, source };
    let unexpected = |step, got: &WireMessage| ClientError::Unexpected { step, got: got.kind().to_string() };
    let (mut client, req) = ClientSession::start(credentials, session_id);

    let step = "device_accept";
    let establish = match exchange(device, Frame::new(session_id, WireMessage::ConnReq(req)), step, "device")? {
        WireMessage::ConnEstablish(m) => m,
        other => return Err(unexpected(step, &other)),
    };
    let forward = client.on_establish(&establish).map_err(protocol("client_check_establish"))?;

    let step = "server_begin_auth";
    let challenge = match exchange(server, Frame::new(session_id, WireMessage::ConnEstablish(forward)), step, "server")? {
        WireMessage::AuthChallenge(m) => m,
        other => return Err(unexpected(step, &other)),
    };
    let forward = client.on_challenge(&challenge).map_err(protocol("client_relay"))?;

    let step = "device_handle_auth";
    let rotate = match exchange(device, Frame::new(session_id, WireMessage::AuthChallenge(forward)), step, "device")? {
        WireMessage::CrpRotate(m) => m,
        other => return Err(unexpected(step, &other)),
    };
    let forward = client.on_rotate(&rotate).map_err(protocol("client_relay"))?;

    let step = "server_handle_rotate";
    let ack = match exchange(server, Frame::new(session_id, WireMessage::CrpRotate(forward)), step, "server")? {
        WireMessage::RotateAck(m) => m,
        other => return Err(unexpected(step, &other)),
    };
    let nonce = client_send_nonce(&mut client, &ack, rng).map_err(protocol("client_send_nonce"))?;

    let step = "device_handle_nonce";
    let reply = match exchange(device, Frame::new(session_id, WireMessage::ClientNonce(nonce)), step, "device")? {
        WireMessage::DeviceNonce(m) => m,
        other => return Err(unexpected(step, &other)),
    };
    let key = client_finish(&mut client, &reply).map_err(protocol("client_finish"))?;

    let device_fingerprint = match device.recv() {
        Ok(Envelope::KeyConfirm(fp)) => Some(fp),
        _ => None,
    };
    Ok(AuthReport { session: session_id, client_fingerprint: key.fingerprint(), device_fingerprint })
}

/// Connects to a device and a server and runs one handshake.
pub fn authenticate(
    server: SocketAddr,
    device: SocketAddr,
    psk: &[u8; 32],
    credentials: &ClientCredentials,
    io_timeout: Duration,
) -> Result<AuthReport, ClientError> {
    let wire = |step| move |source: io::Error| ClientError::Wire { step, source: WireError::Io(source) };
    let mut rng = SystemEntropy::new().map_err(|e| wire("setup")(io::Error::other(e)))?;
    let session_id = SessionId(u32::from_be_bytes(random_word(&mut rng).as_bytes()[..4].try_into().expect("4 bytes")));

    let device_stream = TcpStream::connect_timeout(&device, io_timeout).map_err(wire("device_accept"))?;
    device_stream.set_nodelay(true).map_err(wire("device_accept"))?;
    device_stream.set_read_timeout(Some(io_timeout)).map_err(wire("device_accept"))?;
    let mut device_link = PlainLink::new(device_stream);

    let server_stream = TcpStream::connect_timeout(&server, io_timeout).map_err(wire("server_connect"))?;
    server_stream.set_nodelay(true).map_err(wire("server_connect"))?;
    server_stream.set_read_timeout(Some(io_timeout)).map_err(wire("server_connect"))?;
    let mut tunnel = Tunnel::connect(server_stream, psk, &mut rng)
        .map_err(|source| ClientError::Wire { step: "server_connect", source })?;

    run_handshake(&mut device_link, &mut tunnel, credentials, session_id, &mut rng)
}
