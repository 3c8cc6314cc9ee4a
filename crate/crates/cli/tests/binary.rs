use std::path::Path;
use std::process::{Command, Output};

fn pufkex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pufkex"))
        .args(args)
        .env_remove("PUFKEX_CONFIG")
        .env_remove("PUFKEX_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("pufkex.toml");
    let store = dir.join("store.txt");
    std::fs::write(&path, format!("store_path = {:?}\nlog_level = \"error\"\n", store)).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn seeded_auth_is_deterministic() {
    let a = pufkex(&["auth", "--seed", "7"]);
    let b = pufkex(&["auth", "--seed", "7"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    let text = stdout(&a);
    assert!(text.contains("keys match: yes"), "{text}");
    assert_ne!(stdout(&pufkex(&["auth", "--seed", "8"])), text);

    let tsv = stdout(&pufkex(&["--format", "tsv", "auth", "--seed", "7"]));
    assert!(tsv.starts_with("session\toutcome\t"));
    assert!(tsv.lines().nth(1).unwrap().ends_with("\ttrue"));
}

#[test]
fn costs_report_totals() {
    let out = pufkex(&["costs"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("total 5888 bits"), "{text}");
    assert!(text.contains("8Th+2Tpuf+7Txor"));
    assert!(text.contains("5Th+1Tpuf+7Txor"));
    let timed = stdout(&pufkex(&["costs", "--timings"]));
    assert!(timed.contains("per operation"), "{timed}");
}

#[test]
fn attack_exit_codes() {
    let replay = pufkex(&["attack", "--scenario", "replay", "--kind", "full-transcript", "--seed", "4"]);
    assert_eq!(replay.status.code(), Some(0));
    assert!(stdout(&replay).contains("attack defeated at device_handle_nonce"), "{}", stdout(&replay));

    let tamper = pufkex(&["attack", "--scenario", "tamper", "--field", "M7", "--bit", "9"]);
    assert_eq!(tamper.status.code(), Some(0));
    assert!(stdout(&tamper).contains("attack defeated at server_handle_rotate"));

    let mitm = pufkex(&["attack", "--scenario", "mitm", "--mode", "other-device-puf"]);
    assert_eq!(mitm.status.code(), Some(0));

    // An unmodified run is not an attack the protocol should stop.
    let control = pufkex(&["attack", "--scenario", "mitm", "--mode", "honest-control"]);
    assert_eq!(control.status.code(), Some(1));
    assert!(stdout(&control).contains("attack succeeded"));

    assert_eq!(pufkex(&["attack", "--scenario", "escrow"]).status.code(), Some(0));
    assert_eq!(pufkex(&["attack", "--scenario", "tamper", "--field", "M7", "--bit", "256"]).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(pufkex(&["attack", "--scenario", "teleport"]).status.code(), Some(2));
    assert_eq!(pufkex(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(pufkex(&[]).status.code(), Some(2));
}

#[test]
fn enroll_register_and_serve_against_a_corrupt_store() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let identity = dir.path().join("dev.id");
    let identity = identity.to_str().unwrap();

    let out = pufkex(&["--config", &config, "enroll", "--identity", identity, "--device-id", "1001", "--chip-seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let again = pufkex(&["--config", &config, "enroll", "--identity", identity, "--device-id", "1001"]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("already enrolled"));

    let out = pufkex(&["--config", &config, "register", "--client-id", "2001", "--username", "", "--password", "pw"]);
    assert!(stdout(&out).contains("warning: empty username"), "{}", stdout(&out));

    let store = dir.path().join("store.txt");
    let text = std::fs::read_to_string(&store).unwrap();
    assert_eq!(text.lines().count(), 3);
    std::fs::write(&store, &text[..text.len() - 3]).unwrap();
    let serve = pufkex(&["--config", &config, "serve"]);
    assert_eq!(serve.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&serve.stderr).contains("corrupt store"));
}

#[test]
fn commands_needing_a_config_say_so() {
    let out = pufkex(&["serve"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PUFKEX_CONFIG"));
}

#[test]
fn puf_stats_reports_both_distances() {
    let text = stdout(&pufkex(&["puf-stats", "--chips", "4", "--trials", "3"]));
    assert!(text.contains("inter-distance"));
    assert!(text.contains("intra-distance (zero noise): mean 0.00 bits, max 0"), "{text}");
}
