use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pufkex_app::commands::{self, AttackOptions, Format, Report, Scenario};
use pufkex_app::config::{AppConfig, CONFIG_ENV, LOG_ENV};
use pufkex_core::harness::{MitmMode, OpenField, ReplayKind};
use pufkex_core::protocol::ClientCredentials;
use pufkex_core::sram_puf::PufParams;

#[derive(Parser)]
#[command(name = "pufkex", version, about = "PUF-based authentication and key exchange for IoT devices")]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    /// Output format for reports.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Tsv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Replay,
    Tamper,
    Eavesdrop,
    Mitm,
    Escrow,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReplayArg {
    StaleAuthChallenge,
    StaleCrpRotate,
    FullTranscript,
}

#[derive(Clone, Copy, ValueEnum)]
enum MitmArg {
    RandomForgery,
    OtherDevicePuf,
    HonestControl,
}

#[derive(Subcommand)]
enum Command {
    /// Provision a simulated chip, store its first CRP and write its identity file.
    Enroll {
        #[arg(long)]
        identity: PathBuf,
        /// Device identifier in hex.
        #[arg(long)]
        device_id: String,
        /// Fixes the simulated chip; random when omitted.
        #[arg(long)]
        chip_seed: Option<u64>,
    },
    /// Register a client's credentials with the server store.
    Register {
        #[arg(long)]
        client_id: String,
        #[arg(long)]
        username: String,
        #[arg(long)]
        password: String,
    },
    /// Run one handshake. With --seed it runs in-process on a seeded fixture.
    Auth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        client_id: Option<String>,
        #[arg(long)]
        username: Option<String>,
        #[arg(long)]
        password: Option<String>,
    },
    /// Run an attack scenario; exits 0 when the protocol defeats it.
    Attack {
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum)]
        kind: Option<ReplayArg>,
        /// Field to tamper with (M1..M13, C_p, ...); sweeps all fields when omitted.
        #[arg(long)]
        field: Option<String>,
        #[arg(long)]
        bit: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<MitmArg>,
    },
    /// Inter- and intra-distance of simulated PUF responses.
    PufStats {
        #[arg(long, default_value_t = 20)]
        chips: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Communication and computation costs of one honest run.
    Costs {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also time hash, XOR and PUF operations on this machine.
        #[arg(long)]
        timings: bool,
    },
    /// Run the authentication server.
    Serve,
    /// Run the device emulator.
    Emulate {
        #[arg(long)]
        identity: PathBuf,
        #[arg(long)]
        device_id: String,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<AppConfig> {
    let path = path.context("this command needs a configuration file (--config or PUFKEX_CONFIG)")?;
    Ok(AppConfig::load(path)?)
}

fn init_logging(config: Option<&AppConfig>) {
    let default = config.map(|c| c.log_level.as_str()).unwrap_or("warn");
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, default)).init();
}

fn run(cli: Cli) -> Result<Report> {
    let format = match cli.format {
        FormatArg::Text => Format::Text,
        FormatArg::Tsv => Format::Tsv,
    };
    let config = match (&cli.command, &cli.config) {
        (Command::Attack { .. } | Command::Costs { .. } | Command::Auth { seed: Some(_), .. }, None) => None,
        (Command::PufStats { .. }, None) => None,
        (_, path) => Some(load_config(path.as_ref())?),
    };
    init_logging(config.as_ref());

    match cli.command {
        Command::Enroll { identity, device_id, chip_seed } => {
            let config = config.expect("loaded above");
            commands::enroll(&config, &identity, commands::parse_id(&device_id)?, chip_seed)
        }
        Command::Register { client_id, username, password } => {
            let config = config.expect("loaded above");
            commands::register(&config, commands::parse_id(&client_id)?, &username, &password)
        }
        Command::Auth { seed: Some(seed), .. } => Ok(commands::auth_simulated(seed, format)),
        Command::Auth { seed: None, client_id, username, password } => {
            let config = config.expect("loaded above");
            let client_id = client_id.context("--client-id is required for a networked run")?;
            let credentials = ClientCredentials::new(
                commands::parse_id(&client_id)?,
                username.unwrap_or_default(),
                password.unwrap_or_default(),
            );
            commands::auth_tcp(&config, &credentials, format)
        }
        Command::Attack { scenario, seed, kind, field, bit, mode } => {
            let scenario = match scenario {
                ScenarioArg::Replay => Scenario::Replay,
                ScenarioArg::Tamper => Scenario::Tamper,
                ScenarioArg::Eavesdrop => Scenario::Eavesdrop,
                ScenarioArg::Mitm => Scenario::Mitm,
                ScenarioArg::Escrow => Scenario::Escrow,
            };
            let options = AttackOptions {
                seed,
                replay: kind.map(|k| match k {
                    ReplayArg::StaleAuthChallenge => ReplayKind::StaleAuthChallenge,
                    ReplayArg::StaleCrpRotate => ReplayKind::StaleCrpRotate,
                    ReplayArg::FullTranscript => ReplayKind::FullTranscript,
                }),
                field: field.map(|f| f.parse::<OpenField>()).transpose().map_err(anyhow::Error::msg)?,
                bit,
                mitm: mode.map(|m| match m {
                    MitmArg::RandomForgery => MitmMode::RandomForgery,
                    MitmArg::OtherDevicePuf => MitmMode::OtherDevicePuf,
                    MitmArg::HonestControl => MitmMode::HonestControl,
                }),
            };
            commands::attack(scenario, &options, format)
        }
        Command::PufStats { chips, trials, seed } => {
            let params = config.map(|c| c.puf.params()).unwrap_or_else(PufParams::default);
            commands::puf_stats(&params, chips, trials, seed, format)
        }
        Command::Costs { seed, timings } => Ok(commands::costs(seed, timings, format)),
        Command::Serve => {
            commands::serve(&config.expect("loaded above"))?;
            Ok(Report { output: String::new(), code: 0 })
        }
        Command::Emulate { identity, device_id } => {
            let config = config.expect("loaded above");
            commands::emulate(&config, &identity, commands::parse_id(&device_id)?)?;
            Ok(Report { output: String::new(), code: 0 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            print!("{}", report.output);
            ExitCode::from(report.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
