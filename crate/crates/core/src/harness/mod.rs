//! Simulation harness: an in-process network with a pluggable adversary on
//! the open channel, attack scenarios, secrecy analysis and cost reports.

pub mod adversary;
pub mod report;
pub mod scenarios;
pub mod secrecy;
pub mod sim;

pub use adversary::{
    Action, Direction, FieldTamper, Interceptor, OpenField, Passive, Script, ScriptError, ScriptedAdversary,
    SubstituteRecorded, SCRIPT_VERSION,
};
pub use report::{measure_op_timings, report_costs, CostRow, CostTable, OpTimings, PUBLISHED_BITS, PUBLISHED_OPS};
pub use scenarios::{
    run_eavesdrop_analysis, run_honest, run_key_escrow_check, run_mitm_impersonation, run_replay, run_tamper,
    tamper_sweep_points, EscrowReport, MitmMode, ReplayKind, ScenarioResult,
};
pub use secrecy::{EavesdropReport, IdentityCheck, Knowledge, OpenAtoms, SecretHit, Secrets, XorBasis};
pub use sim::{ChannelKind, Envelope, Outcome, SessionRun, SimChannel, Step, World, CLIENT_ID, DECOY_DEVICE, VICTIM_DEVICE};
