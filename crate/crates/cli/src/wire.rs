//! Socket framing and the PSK tunnel standing in for TLS on the
//! client-server link.
//!
//! Every chunk on a socket is a 4-byte big-endian length followed by that
//! many bytes. Inside a tunnel a chunk is a 12-byte nonce followed by the
//! ChaCha20-Poly1305 ciphertext and its 16-byte tag.

use std::io::{self, Read, Write};

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use pufkex_core::crypto::{random_word, Word256, WordSource};
use pufkex_core::protocol::{decode, encode, CodecError, Frame};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAX_CHUNK: usize = 64 * 1024;
const TUNNEL_MAGIC: &[u8; 4] = b"PKT1";
const NONCE_BYTES: usize = 12;
const CLIENT_CONFIRM: &[u8] = b"pufkex tunnel client confirm";
const SERVER_CONFIRM: &[u8] = b"pufkex tunnel server confirm";

pub fn write_chunk(w: &mut impl Write, bytes: &[u8]) -> io::Result<()> {
    if bytes.len() > MAX_CHUNK {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "chunk too large"));
    }
    let mut buf = Vec::with_capacity(4 + bytes.len());
    buf.extend((bytes.len() as u32).to_be_bytes());
    buf.extend(bytes);
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_chunk(r: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_CHUNK {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("chunk of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// What travels in one chunk on either link.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Envelope {
    Frame(Frame),
    /// The peer rejected the last message and closes the session.
    Error(String),
    /// Device-side key confirmation: the session key fingerprint.
    KeyConfirm(String),
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed envelope: {0}")]
    Envelope(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("tunnel: {0}")]
    Tunnel(&'static str),
}

impl Envelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Envelope::Frame(f) => {
                let mut out = vec![0];
                out.extend(encode(f));
                out
            }
            Envelope::Error(msg) => {
                let mut out = vec![1];
                out.extend(msg.as_bytes());
                out
            }
            Envelope::KeyConfirm(fp) => {
                let mut out = vec![2];
                out.extend(fp.as_bytes());
                out
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let text = |b: &[u8]| String::from_utf8(b.to_vec()).map_err(|_| WireError::Envelope("text is not UTF-8".into()));
        match bytes.split_first() {
            Some((0, rest)) => Ok(Envelope::Frame(decode(rest)?)),
            Some((1, rest)) => Ok(Envelope::Error(text(rest)?)),
            Some((2, rest)) => Ok(Envelope::KeyConfirm(text(rest)?)),
            Some((tag, _)) => Err(WireError::Envelope(format!("unknown envelope tag {tag}"))),
            None => Err(WireError::Envelope("empty envelope".into())),
        }
    }
}

/// Anything that carries envelopes: a plain socket or a tunnel.
pub trait Link {
    fn send(&mut self, envelope: &Envelope) -> Result<(), WireError>;
    fn recv(&mut self) -> Result<Envelope, WireError>;
}

/// Unprotected link, used on the open client-device channel.
pub struct PlainLink<S> {
    stream: S,
}

impl<S: Read + Write> PlainLink<S> {
    pub fn new(stream: S) -> Self {
        PlainLink { stream }
    }

    pub fn get_ref(&self) -> &S {
        &self.stream
    }
}

impl<S: Read + Write> Link for PlainLink<S> {
    fn send(&mut self, envelope: &Envelope) -> Result<(), WireError> {
        Ok(write_chunk(&mut self.stream, &envelope.to_bytes())?)
    }

    fn recv(&mut self) -> Result<Envelope, WireError> {
        Envelope::from_bytes(&read_chunk(&mut self.stream)?)
    }
}

/// Authenticated, encrypted link keyed from a pre-shared key and two fresh
/// nonces. Each direction has its own key and a strictly increasing counter.
pub struct Tunnel<S> {
    stream: S,
    send_cipher: ChaCha20Poly1305,
    recv_cipher: ChaCha20Poly1305,
    send_counter: u64,
    recv_counter: u64,
}

fn direction_key(label: &[u8], psk: &[u8; 32], client_nonce: &Word256, server_nonce: &Word256) -> ChaCha20Poly1305 {
    let digest = Sha256::new()
        .chain_update(label)
        .chain_update(psk)
        .chain_update(client_nonce.as_bytes())
        .chain_update(server_nonce.as_bytes())
        .finalize();
    ChaCha20Poly1305::new(Key::from_slice(&digest))
}

impl<S: Read + Write> Tunnel<S> {
    /// Client side of the tunnel handshake.
    pub fn connect(mut stream: S, psk: &[u8; 32], rng: &mut impl WordSource) -> Result<Self, WireError> {
        let client_nonce = random_word(rng);
        let mut hello = TUNNEL_MAGIC.to_vec();
        hello.extend(client_nonce.as_bytes());
        write_chunk(&mut stream, &hello)?;
        let reply = read_chunk(&mut stream)?;
        let server_nonce = Word256::from_slice(&reply).ok_or(WireError::Tunnel("bad server hello"))?;
        let mut tunnel = Self::keyed(stream, psk, &client_nonce, &server_nonce, b"c2s", b"s2c");
        tunnel.send_raw(CLIENT_CONFIRM)?;
        let confirm = tunnel.recv_raw()?;
        if confirm != SERVER_CONFIRM {
            return Err(WireError::Tunnel("server confirmation mismatch"));
        }
        Ok(tunnel)
    }

    /// Server side of the tunnel handshake. A peer with a different key
    /// fails here, before any protocol frame is read.
    pub fn accept(mut stream: S, psk: &[u8; 32], rng: &mut impl WordSource) -> Result<Self, WireError> {
        let hello = read_chunk(&mut stream)?;
        if hello.len() != 4 + 32 || &hello[..4] != TUNNEL_MAGIC {
            return Err(WireError::Tunnel("bad client hello"));
        }
        let client_nonce = Word256::from_slice(&hello[4..]).expect("32 bytes");
        let server_nonce = random_word(rng);
        write_chunk(&mut stream, server_nonce.as_bytes())?;
        let mut tunnel = Self::keyed(stream, psk, &client_nonce, &server_nonce, b"s2c", b"c2s");
        let confirm = tunnel.recv_raw()?;
        if confirm != CLIENT_CONFIRM {
            return Err(WireError::Tunnel("client confirmation mismatch"));
        }
        tunnel.send_raw(SERVER_CONFIRM)?;
        Ok(tunnel)
    }

    fn keyed(stream: S, psk: &[u8; 32], cn: &Word256, sn: &Word256, send: &[u8], recv: &[u8]) -> Self {
        let label = |dir: &[u8]| [b"pufkex tunnel ".as_slice(), dir].concat();
        Tunnel {
            stream,
            send_cipher: direction_key(&label(send), psk, cn, sn),
            recv_cipher: direction_key(&label(recv), psk, cn, sn),
            send_counter: 0,
            recv_counter: 0,
        }
    }

    pub fn get_ref(&self) -> &S {
        &self.stream
    }

    fn nonce(counter: u64) -> [u8; NONCE_BYTES] {
        let mut n = [0u8; NONCE_BYTES];
        n[4..].copy_from_slice(&counter.to_be_bytes());
        n
    }

    fn send_raw(&mut self, plaintext: &[u8]) -> Result<(), WireError> {
        let nonce = Self::nonce(self.send_counter);
        self.send_counter += 1;
        let sealed = self
            .send_cipher
            .encrypt(Nonce::from_slice(&nonce), plaintext)
            .map_err(|_| WireError::Tunnel("encryption failed"))?;
        let mut chunk = nonce.to_vec();
        chunk.extend(sealed);
        Ok(write_chunk(&mut self.stream, &chunk)?)
    }

    fn recv_raw(&mut self) -> Result<Vec<u8>, WireError> {
        let chunk = read_chunk(&mut self.stream)?;
        if chunk.len() < NONCE_BYTES + 16 {
            return Err(WireError::Tunnel("short tunnel frame"));
        }
        let (nonce, sealed) = chunk.split_at(NONCE_BYTES);
        if nonce != Self::nonce(self.recv_counter) {
            return Err(WireError::Tunnel("out-of-order or replayed tunnel frame"));
        }
        let plaintext = self
            .recv_cipher
            .decrypt(Nonce::from_slice(nonce), sealed)
            .map_err(|_| WireError::Tunnel("authentication failed"))?;
        self.recv_counter += 1;
        Ok(plaintext)
    }
}

impl<S: Read + Write> Link for Tunnel<S> {
    fn send(&mut self, envelope: &Envelope) -> Result<(), WireError> {
        self.send_raw(&envelope.to_bytes())
    }

    fn recv(&mut self) -> Result<Envelope, WireError> {
        Envelope::from_bytes(&self.recv_raw()?)
    }
}
