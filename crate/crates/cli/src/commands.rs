//! Subcommand implementations. Each returns its report as text plus the
//! process exit code; `main` only parses arguments and prints.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::net::TcpListener;
use std::path::Path;

use anyhow::{bail, Context, Result};
use pufkex_core::crypto::{random_word, DeviceId, SeededWords, SystemEntropy};
use pufkex_core::harness::{
    measure_op_timings, report_costs, run_eavesdrop_analysis, run_honest, run_key_escrow_check,
    run_mitm_impersonation, run_replay, run_tamper, tamper_sweep_points, MitmMode, OpenField, ReplayKind,
    ScenarioResult, World,
};
use pufkex_core::protocol::{enroll_device, register_client, ClientCredentials, Device};
use pufkex_core::sram_puf::{inter_distance, intra_distance, Noise, PufFunction, PufParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::{AppConfig, ChannelMode};
use crate::node::{authenticate, spawn_emulator, spawn_server, ServerOptions};
use crate::store::FileStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Text,
    Tsv,
}

/// Text to print and the exit status to return.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub output: String,
    pub code: i32,
}

impl Report {
    fn ok(output: String) -> Self {
        Report { output, code: 0 }
    }
}

pub fn parse_id(text: &str) -> Result<DeviceId> {
    let digits = text.trim_start_matches("0x");
    let value = u32::from_str_radix(digits, 16).with_context(|| format!("`{text}` is not a hex identifier"))?;
    Ok(DeviceId(value))
}

pub fn enroll(config: &AppConfig, identity: &Path, device_id: DeviceId, chip_seed: Option<u64>) -> Result<Report> {
    let mut entropy = SystemEntropy::new()?;
    let chip_seed = match chip_seed {
        Some(s) => s,
        None => u64::from_be_bytes(random_word(&mut entropy).as_bytes()[..8].try_into().expect("8 bytes")),
    };
    let puf = PufFunction::provision(&config.puf.params(), chip_seed).context("provisioning the PUF")?;
    let mut store = FileStore::open_or_create(&config.store_path)
        .with_context(|| format!("opening store {}", config.store_path.display()))?;
    enroll_device(&mut store, device_id, &puf, &mut entropy)?;
    let file = File::create(identity).with_context(|| format!("creating {}", identity.display()))?;
    puf.write_identity(BufWriter::new(file))?;
    Ok(Report::ok(format!(
        "enrolled device {device_id} ({} stable cells); identity written to {}\n",
        puf.pool().len(),
        identity.display()
    )))
}

pub fn register(config: &AppConfig, client_id: DeviceId, username: &str, password: &str) -> Result<Report> {
    let mut store = FileStore::open_or_create(&config.store_path)
        .with_context(|| format!("opening store {}", config.store_path.display()))?;
    let registration = register_client(&mut store, username.as_bytes(), password.as_bytes(), client_id)?;
    let mut out = format!("registered client {client_id} alias {}\n", registration.record.alias.to_hex());
    for w in &registration.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    Ok(Report::ok(out))
}

/// Simulated handshake on a fixture derived from `seed`.
pub fn auth_simulated(seed: u64, format: Format) -> Report {
    let mut world = World::new(seed);
    let run = world.run_honest_session();
    let client = run.client_key().map(|k| k.fingerprint()).unwrap_or_else(|| "-".into());
    let device = run.device_key().map(|k| k.fingerprint()).unwrap_or_else(|| "-".into());
    let matched = run.client_key().is_some() && run.client_key() == run.device_key();
    let output = match format {
        Format::Tsv => format!(
            "session\toutcome\tclient_key\tdevice_key\tkeys_match\n{}\t{}\t{client}\t{device}\t{matched}\n",
            run.session, run.outcome
        ),
        Format::Text => format!(
            "session {}\noutcome: {}\nclient key fingerprint: {client}\ndevice key fingerprint: {device}\nkeys match: {}\n",
            run.session,
            run.outcome,
            if matched { "yes" } else { "no" }
        ),
    };
    Report { output, code: if matched { 0 } else { 1 } }
}

pub fn auth_tcp(config: &AppConfig, credentials: &ClientCredentials, format: Format) -> Result<Report> {
    if config.channel_mode != ChannelMode::Tcp {
        bail!("channel_mode is not tcp; pass --seed for a simulated run");
    }
    let report = match authenticate(config.listen, config.device_listen, &config.psk(), credentials, config.io_timeout()) {
        Ok(r) => r,
        Err(e) => return Ok(Report { output: format!("aborted at {}: {e}\n", e.step()), code: 1 }),
    };
    let device = report.device_fingerprint.clone().unwrap_or_else(|| "-".into());
    let verdict = match report.keys_match() {
        Some(true) => "yes",
        Some(false) => "no",
        None => "unconfirmed",
    };
    let output = match format {
        Format::Tsv => format!(
            "session\toutcome\tclient_key\tdevice_key\tkeys_match\n{}\testablished\t{}\t{device}\t{verdict}\n",
            report.session, report.client_fingerprint
        ),
        Format::Text => format!(
            "session {}\noutcome: established\nclient key fingerprint: {}\ndevice key fingerprint: {device}\nkeys match: {verdict}\n",
            report.session, report.client_fingerprint
        ),
    };
    Ok(Report { output, code: if report.keys_match() == Some(false) { 1 } else { 0 } })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Replay,
    Tamper,
    Eavesdrop,
    Mitm,
    Escrow,
}

/// Options narrowing an attack run.
#[derive(Clone, Debug, Default)]
pub struct AttackOptions {
    pub seed: u64,
    pub replay: Option<ReplayKind>,
    pub field: Option<OpenField>,
    pub bit: Option<usize>,
    pub mitm: Option<MitmMode>,
}

fn single_result(result: &ScenarioResult, format: Format) -> Report {
    let step = result.outcome.aborted_step().map(|s| s.name()).unwrap_or("-");
    let defeated = result.defeated();
    let output = match format {
        Format::Tsv => format!(
            "scenario\toutcome\tstep\tdefeated\tstore_changed\n{}\t{}\t{step}\t{defeated}\t{}\n",
            result.scenario,
            result.outcome,
            result.store_changed()
        ),
        Format::Text if defeated => format!("{}: {}\nattack defeated at {step}\n", result.scenario, result.outcome),
        Format::Text => format!("{}: {}\nattack succeeded\n", result.scenario, result.outcome),
    };
    Report { output, code: if defeated { 0 } else { 1 } }
}

pub fn attack(scenario: Scenario, options: &AttackOptions, format: Format) -> Result<Report> {
    let seed = options.seed;
    Ok(match scenario {
        Scenario::Replay => {
            single_result(&run_replay(seed, options.replay.unwrap_or(ReplayKind::StaleAuthChallenge)), format)
        }
        Scenario::Mitm => {
            single_result(&run_mitm_impersonation(seed, options.mitm.unwrap_or(MitmMode::RandomForgery)), format)
        }
        Scenario::Tamper => match options.field {
            Some(field) => {
                let bit = options.bit.unwrap_or(0);
                if bit >= field.layout().1 {
                    bail!("bit {bit} is outside {field}");
                }
                single_result(&run_tamper(seed, Some((field, bit))), format)
            }
            None => tamper_sweep(seed, format),
        },
        Scenario::Eavesdrop => {
            let report = run_eavesdrop_analysis(seed, false);
            let held = report.identities.iter().filter(|c| c.holds).count();
            let defeated = report.is_clean() && report.identities_hold();
            let output = match format {
                Format::Tsv => format!(
                    "subsets\thits\tspan_hits\tclosure_hits\tidentities_held\tdefeated\n{}\t{}\t{}\t{}\t{held}\t{defeated}\n",
                    report.subsets_checked,
                    report.hits.len(),
                    report.span_hits.len(),
                    report.closure_hits.len()
                ),
                Format::Text => {
                    let mut out = format!(
                        "{} of {} XOR subsets reveal a secret; span rank {}; {held}/9 identities hold\n",
                        report.hits.len(),
                        report.subsets_checked,
                        report.span_rank
                    );
                    out.push_str(if defeated { "attack defeated\n" } else { "attack succeeded\n" });
                    out
                }
            };
            Report { output, code: if defeated { 0 } else { 1 } }
        }
        Scenario::Escrow => {
            let report = run_key_escrow_check(seed);
            let defeated = report.boundary_holds();
            let output = match format {
                Format::Tsv => format!(
                    "server_state_overlap\tsecure_channel_overlap\ttap_derives_key\tdefeated\n{}\t{}\t{}\t{defeated}\n",
                    report.server_state_overlap.len(),
                    report.secure_channel_overlap.len(),
                    report.tap_derives_key
                ),
                Format::Text => {
                    let mut out = format!(
                        "server state overlap with {{N_c, N_p, key}}: {:?}\nsecure channel overlap: {:?}\n\
                         with open-channel taps the server derives the key: {}\n",
                        report.server_state_overlap, report.secure_channel_overlap, report.tap_derives_key
                    );
                    out.push_str(if defeated { "attack defeated\n" } else { "attack succeeded\n" });
                    out
                }
            };
            Report { output, code: if defeated { 0 } else { 1 } }
        }
    })
}

fn tamper_sweep(seed: u64, format: Format) -> Report {
    let points = tamper_sweep_points();
    let mut failures = Vec::new();
    for (i, (field, bit)) in points.iter().enumerate() {
        let result = run_tamper(seed.wrapping_add(i as u64), Some((*field, *bit)));
        if !result.defeated() {
            failures.push(format!("{field} bit {bit}: {}", result.outcome));
        }
    }
    let aborted = points.len() - failures.len();
    let output = match format {
        Format::Tsv => format!("runs\taborted\n{}\t{aborted}\n", points.len()),
        Format::Text => {
            let mut out = format!("{aborted}/{} tampered runs aborted\n", points.len());
            for f in &failures {
                let _ = writeln!(out, "not detected: {f}");
            }
            out.push_str(if failures.is_empty() { "attack defeated\n" } else { "attack succeeded\n" });
            out
        }
    };
    Report { output, code: if failures.is_empty() { 0 } else { 1 } }
}

pub fn puf_stats(params: &PufParams, chips: usize, trials: usize, seed: u64, format: Format) -> Result<Report> {
    if chips < 2 {
        bail!("need at least two chips");
    }
    let pufs = (0..chips as u64)
        .map(|i| PufFunction::provision(params, seed.wrapping_mul(1000).wrapping_add(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let challenge = random_word(&mut SeededWords::derived(seed, "puf-stats challenge"));
    let inter = inter_distance(&pufs, &challenge)?;
    let intra = intra_distance(&pufs[0], &challenge, trials.max(2), &mut Noise::Silent)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let noisy = intra_distance(&pufs[0], &challenge, trials.max(2), &mut Noise::Sampled(&mut rng))?;
    let output = match format {
        Format::Tsv => format!(
            "metric\tmean_bits\tmean_fraction\tmin\tmax\tsamples\n\
             inter\t{:.2}\t{:.4}\t{}\t{}\t{}\nintra_zero_noise\t{:.2}\t{:.4}\t{}\t{}\t{}\nintra_sampled_noise\t{:.2}\t{:.4}\t{}\t{}\t{}\n",
            inter.mean, inter.mean_fraction(), inter.min, inter.max, inter.samples,
            intra.mean, intra.mean_fraction(), intra.min, intra.max, intra.samples,
            noisy.mean, noisy.mean_fraction(), noisy.min, noisy.max, noisy.samples
        ),
        Format::Text => format!(
            "{chips} chips, {} cells, {}-bit fingerprint\n\
             inter-distance: mean {:.2} bits ({:.3}), min {}, max {}\n\
             intra-distance (zero noise): mean {:.2} bits, max {}\n\
             intra-distance (sampled noise): mean {:.2} bits, max {}\n",
            params.cell_count,
            params.fingerprint_bits,
            inter.mean,
            inter.mean_fraction(),
            inter.min,
            inter.max,
            intra.mean,
            intra.max,
            noisy.mean,
            noisy.max
        ),
    };
    Ok(Report::ok(output))
}

pub fn costs(seed: u64, timings: bool, format: Format) -> Report {
    let (result, _) = run_honest(seed);
    let table = report_costs(&[result.costs]);
    let mut output = match format {
        Format::Tsv => table.to_tsv(),
        Format::Text => table.to_text(),
    };
    if timings {
        let puf = PufFunction::provision(&PufParams::default(), seed).expect("default parameters");
        let t = measure_op_timings(&puf, 2000);
        match format {
            Format::Tsv => {
                let _ = write!(output, "op\tnanoseconds\nhash\t{}\nxor\t{}\npuf\t{}\n", t.hash.as_nanos(), t.xor.as_nanos(), t.puf.as_nanos());
            }
            Format::Text => {
                let _ = writeln!(
                    output,
                    "measured on this machine: hash {:?}, xor {:?}, puf {:?} per operation",
                    t.hash, t.xor, t.puf
                );
            }
        }
    }
    let code = if table.bits_match() { 0 } else { 1 };
    Report { output, code }
}

/// Runs the server daemon until the process is killed.
pub fn serve(config: &AppConfig) -> Result<()> {
    let store = FileStore::open(&config.store_path)
        .with_context(|| format!("opening store {}", config.store_path.display()))?;
    let listener = TcpListener::bind(config.listen).with_context(|| format!("binding {}", config.listen))?;
    let options =
        ServerOptions { psk: config.psk(), session_timeout: config.session_timeout(), io_timeout: config.io_timeout() };
    spawn_server(listener, store, options)?.wait();
    Ok(())
}

/// Runs the device emulator until the process is killed.
pub fn emulate(config: &AppConfig, identity: &Path, device_id: DeviceId) -> Result<()> {
    let file = File::open(identity).with_context(|| format!("opening identity {}", identity.display()))?;
    let puf = PufFunction::read_identity(BufReader::new(file)).context("reading identity")?;
    let listener =
        TcpListener::bind(config.device_listen).with_context(|| format!("binding {}", config.device_listen))?;
    spawn_emulator(listener, Device::new(device_id, puf), config.io_timeout())?.wait();
    Ok(())
}
