use std::collections::HashSet;

use pufkex_core::crypto::{DeviceId, Word256};
use pufkex_core::harness::{Outcome, SessionRun, World, VICTIM_DEVICE};
use pufkex_core::protocol::{
    client_finish, client_send_nonce, device_handle_auth, device_handle_nonce, encode, server_begin_auth,
    server_handle_rotate, ClientPhase, ClientSession, CredentialStore, DevicePhase, MessageKind, OpTally,
    ProtocolError, Role, ServerPhase, SessionId, WireMessage,
};
use sha2::{Digest, Sha256};

fn sha(parts: &[&[u8]]) -> Word256 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Word256::from_bytes(h.finalize().into())
}

fn frame_of(run: &SessionRun, kind: MessageKind) -> WireMessage {
    run.open_frames
        .iter()
        .chain(run.secure_frames.iter())
        .find(|f| f.kind() == kind)
        .map(|f| f.message)
        .unwrap_or_else(|| panic!("no {kind} frame"))
}

#[test]
fn wire_values_match_an_independent_recomputation() {
    let mut world = World::new(11);
    let run = world.run_honest_session();
    assert_eq!(run.outcome, Outcome::Established { keys_match: true });

    let server = run.server.as_ref().unwrap();
    let device = run.device.as_ref().unwrap();
    let before = run.store_before.crp(VICTIM_DEVICE).unwrap();
    let (t1, t2, alias) = (*server.t1(), *server.t2(), *server.alias());
    let (rp, cp) = (before.response, before.challenge);
    let (cnew, rnew) = device.new_crp();
    let nc = *device.client_nonce().unwrap();
    let np = *device.device_nonce().unwrap();
    let b = |w: &Word256| *w.as_bytes();

    let WireMessage::AuthChallenge(auth) = frame_of(&run, MessageKind::AuthChallenge) else { unreachable!() };
    assert_eq!(auth.m1, t1 ^ rp);
    assert_eq!(auth.m2, t1 ^ t2);
    assert_eq!(auth.m3, sha(&[&b(&t1), &b(&t2)]) ^ alias);
    assert_eq!(auth.m4, sha(&[&b(&t1), &b(&t2), &b(&rp), &b(&cp), &b(&alias)]));
    assert_eq!(auth.challenge, cp);

    let WireMessage::CrpRotate(rot) = frame_of(&run, MessageKind::CrpRotate) else { unreachable!() };
    assert_eq!(rot.m5, cnew ^ rp);
    assert_eq!(rot.m6, sha(&[&b(&rot.m5), &b(&rp)]));
    assert_eq!(rot.m7, t2 ^ rnew);
    assert_eq!(rot.m8, sha(&[&b(&rot.m7), &b(&t2)]));

    let m9 = sha(&[&b(&cnew), &b(&rnew)]);
    let WireMessage::RotateAck(ack) = frame_of(&run, MessageKind::RotateAck) else { unreachable!() };
    assert_eq!(ack.m9, m9);

    let WireMessage::ClientNonce(cn) = frame_of(&run, MessageKind::ClientNonce) else { unreachable!() };
    assert_eq!(cn.m10, nc ^ m9);
    assert_eq!(cn.m11, sha(&[&b(&cn.m10), &b(&m9)]));

    let WireMessage::DeviceNonce(dn) = frame_of(&run, MessageKind::DeviceNonce) else { unreachable!() };
    assert_eq!(dn.m12, np ^ nc);
    assert_eq!(dn.m13, sha(&[&b(&dn.m12), &b(&nc)]));

    let key = sha(&[&b(&nc), &b(&np), &b(&alias), &VICTIM_DEVICE.to_be_bytes()]);
    assert_eq!(run.client_key().unwrap().as_word(), &key);
    assert_eq!(run.device_key().unwrap().as_word(), &key);

    let after = run.store_after.crp(VICTIM_DEVICE).unwrap();
    assert_eq!((after.challenge, after.response), (cnew, rnew));
}

#[test]
fn alias_is_hash_of_username_password_and_id() {
    let world = World::new(12);
    let creds = &world.credentials;
    let len = |v: &[u8]| (v.len() as u32).to_be_bytes();
    let expected = sha(&[
        &len(&creds.username),
        &creds.username,
        &len(&creds.password),
        &creds.password,
        &creds.client_id.to_be_bytes(),
    ]);
    assert_eq!(creds.alias(), expected);
    assert_eq!(world.store.client(creds.client_id).unwrap().alias, expected);
}

// Frozen from a reference run; any change to the wire format, hashing or
// randomness derivation shows up here.
#[test]
fn golden_transcript_seed_42() {
    let mut world = World::new(42);
    let run = world.run_honest_session();
    let mut bytes = Vec::new();
    for entry in &run.transcript.entries {
        bytes.extend(encode(&entry.frame));
    }
    // Ten 5-byte headers plus 4 + 2*8 + 2*160 + 2*128 + 32 + 64 + 64 payload bytes.
    assert_eq!(bytes.len(), 806);
    let digest = sha(&[&bytes]);
    assert_eq!(digest.to_hex(), GOLDEN_TRANSCRIPT);
    assert_eq!(run.client_key().unwrap().fingerprint(), GOLDEN_KEY_FINGERPRINT);
}

const GOLDEN_TRANSCRIPT: &str = "d7e8e4d951faa1575559060062e727811dccf5d6612f3dfd7e6fe272d13114df";
const GOLDEN_KEY_FINGERPRINT: &str = "1b2090d2715df841";

#[test]
fn reruns_are_bit_identical() {
    let a = World::new(5).run_honest_session();
    let b = World::new(5).run_honest_session();
    assert_eq!(a.transcript, b.transcript);
    assert_eq!(a.client_key(), b.client_key());
    assert_eq!(a.store_after, b.store_after);
}

#[test]
fn liveness_ten_hops_seven_kinds() {
    let run = World::new(13).run_honest_session();
    assert!(run.outcome.is_established());
    assert_eq!(run.deliveries, 10);
    let kinds: HashSet<MessageKind> = run.transcript.entries.iter().map(|e| e.frame.kind()).collect();
    assert_eq!(kinds.len(), MessageKind::ALL.len());
}

#[test]
fn traced_operation_counts() {
    // Hand trace of one handshake.
    let device = OpTally { hash: 8, xor: 7, puf: 2 };
    let client = OpTally { hash: 3, xor: 2, puf: 0 };
    let server = OpTally { hash: 5, xor: 5, puf: 0 };
    for seed in [1, 2, 3] {
        let run = World::new(seed).run_honest_session();
        assert_eq!(run.transcript.ops[&Role::Device], device);
        assert_eq!(run.transcript.ops[&Role::Client], client);
        assert_eq!(run.transcript.ops[&Role::Server], server);
        let costs = run.costs();
        assert_eq!(costs.device.ops, device);
        assert_eq!(costs.total_ops(), OpTally { hash: 16, xor: 14, puf: 2 });
    }
}

#[test]
fn payload_bits_per_role() {
    let costs = World::new(3).run_honest_session().costs();
    assert_eq!(costs.device.payload_bits, 1536);
    assert_eq!(costs.client.payload_bits, 2816);
    assert_eq!(costs.server.payload_bits, 1536);
    assert_eq!(costs.total_bits(), 5888);
}

#[test]
fn nonces_and_keys_are_fresh_across_sessions() {
    let mut world = World::new(21);
    let mut seen = HashSet::new();
    let mut keys = HashSet::new();
    for _ in 0..200 {
        let run = world.run_honest_session();
        assert_eq!(run.outcome, Outcome::Established { keys_match: true });
        let server = run.server.as_ref().unwrap();
        let device = run.device.as_ref().unwrap();
        for w in [*server.t1(), *server.t2(), *device.client_nonce().unwrap(), *device.device_nonce().unwrap()] {
            assert!(seen.insert(w), "repeated session randomness");
        }
        assert!(keys.insert(*run.client_key().unwrap().as_word()));
    }
}

#[test]
fn rotation_chain_keeps_one_matching_record() {
    let mut world = World::new(31);
    let mut previous = world.store.crp(VICTIM_DEVICE).unwrap();
    for _ in 0..50 {
        let run = world.run_honest_session();
        assert!(run.outcome.is_established());
        assert_eq!(world.store.crp_count(VICTIM_DEVICE), 1);
        let stored = world.store.crp(VICTIM_DEVICE).unwrap();
        let (c, r) = run.device.as_ref().unwrap().new_crp();
        assert_eq!((stored.challenge, stored.response), (c, r));
        assert_ne!(stored, previous);
        assert_eq!(world.device.puf().respond(&c).unwrap(), r);
        previous = stored;
    }
}

#[test]
fn messages_out_of_phase_are_rejected_without_state_change() {
    let mut world = World::new(41);
    let id = SessionId(77);
    let (mut client, _) = ClientSession::start(&world.credentials, id);
    let (mut server, challenge) =
        server_begin_auth(&world.store, id, VICTIM_DEVICE, world.credentials.client_id, &mut world.server_rng)
            .unwrap();

    // The client has not seen ConnEstablish yet.
    let before = client.clone();
    let err = client.on_challenge(&challenge).unwrap_err();
    assert!(matches!(err, ProtocolError::UnexpectedMessage { got: MessageKind::AuthChallenge, .. }));
    assert_eq!(client.phase(), before.phase());
    assert_eq!(client.phase(), ClientPhase::AwaitEstablish);

    let (mut device_session, rotate) = device_handle_auth(&world.device, &challenge, &mut world.device_rng).unwrap();
    let ack = server_handle_rotate(&mut server, &mut world.store, &rotate).unwrap();
    assert_eq!(server.phase(), ServerPhase::Done);
    let store = world.store.clone();
    assert!(server_handle_rotate(&mut server, &mut world.store, &rotate).is_err());
    assert_eq!(world.store, store);
    assert_eq!(server.phase(), ServerPhase::Done);

    let err = client_send_nonce(&mut client, &ack, &mut world.client_rng).unwrap_err();
    assert!(matches!(err, ProtocolError::UnexpectedMessage { .. }));

    // Drive the client forward by hand and finish the exchange.
    let establish = world.device.accept_connection(&pufkex_core::protocol::ConnReq { client_id: world.credentials.client_id });
    client.on_establish(&establish).unwrap();
    client.on_challenge(&challenge).unwrap();
    client.on_rotate(&rotate).unwrap();
    let nonce = client_send_nonce(&mut client, &ack, &mut world.client_rng).unwrap();
    let (reply, device_key) = device_handle_nonce(&mut device_session, &nonce, &mut world.device_rng).unwrap();
    assert_eq!(device_session.phase(), DevicePhase::Established);
    assert!(device_handle_nonce(&mut device_session, &nonce, &mut world.device_rng).is_err());
    assert_eq!(device_session.key(), Some(&device_key));
    let client_key = client_finish(&mut client, &reply).unwrap();
    assert_eq!(client_key, device_key);
    assert!(client_finish(&mut client, &reply).is_err());
    assert_eq!(client.key(), Some(&client_key));
}

#[test]
fn failed_rotation_leaves_store_untouched() {
    let mut world = World::new(51);
    let id = SessionId(1);
    let (mut server, challenge) =
        server_begin_auth(&world.store, id, VICTIM_DEVICE, world.credentials.client_id, &mut world.server_rng)
            .unwrap();
    let (_, mut rotate) = device_handle_auth(&world.device, &challenge, &mut world.device_rng).unwrap();
    rotate.m8 ^= Word256::from_u64(1);
    let before = world.store.clone();
    assert!(server_handle_rotate(&mut server, &mut world.store, &rotate).is_err());
    assert_eq!(world.store, before);
    assert_eq!(server.phase(), ServerPhase::Aborted);
    // The next session still works against the unchanged record.
    assert!(world.run_honest_session().outcome.is_established());
}

#[test]
fn unknown_device_and_client_are_refused() {
    let mut world = World::new(61);
    let err = server_begin_auth(&world.store, SessionId(1), DeviceId(0xdead), world.credentials.client_id, &mut world.server_rng)
        .unwrap_err();
    assert!(matches!(err, ProtocolError::UnknownDevice(DeviceId(0xdead))));
    let err =
        server_begin_auth(&world.store, SessionId(1), VICTIM_DEVICE, DeviceId(0xbeef), &mut world.server_rng).unwrap_err();
    assert!(matches!(err, ProtocolError::UnknownClient(DeviceId(0xbeef))));
}
