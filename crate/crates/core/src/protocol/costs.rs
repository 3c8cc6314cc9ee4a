use std::collections::BTreeMap;
use std::fmt;

use super::messages::Frame;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Device,
    Client,
    Server,
    Adversary,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Device => "device",
            Role::Client => "client",
            Role::Server => "server",
            Role::Adversary => "adversary",
        };
        f.write_str(s)
    }
}

/// Primitive operations performed by one role during a handshake.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpTally {
    pub hash: u32,
    pub xor: u32,
    pub puf: u32,
}

impl OpTally {
    pub fn add(&mut self, other: &OpTally) {
        self.hash += other.hash;
        self.xor += other.xor;
        self.puf += other.puf;
    }
}

impl fmt::Display for OpTally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = vec![format!("{}Th", self.hash)];
        if self.puf > 0 {
            parts.push(format!("{}Tpuf", self.puf));
        }
        parts.push(format!("{}Txor", self.xor));
        f.write_str(&parts.join("+"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub from: Role,
    pub to: Role,
    pub frame: Frame,
}

/// Frames sent by each role plus the operation tallies of an instrumented run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
    pub ops: BTreeMap<Role, OpTally>,
}

impl Transcript {
    pub fn record(&mut self, from: Role, to: Role, frame: Frame) {
        self.entries.push(TranscriptEntry { from, to, frame });
    }

    pub fn add_ops(&mut self, role: Role, ops: &OpTally) {
        self.ops.entry(role).or_default().add(ops);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RoleCost {
    pub ops: OpTally,
    pub payload_bits: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostReport {
    pub device: RoleCost,
    pub client: RoleCost,
    pub server: RoleCost,
}

impl CostReport {
    pub fn role(&self, role: Role) -> Option<&RoleCost> {
        match role {
            Role::Device => Some(&self.device),
            Role::Client => Some(&self.client),
            Role::Server => Some(&self.server),
            Role::Adversary => None,
        }
    }

    pub fn total_bits(&self) -> u64 {
        self.device.payload_bits + self.client.payload_bits + self.server.payload_bits
    }

    pub fn total_ops(&self) -> OpTally {
        let mut total = OpTally::default();
        for role in [&self.device, &self.client, &self.server] {
            total.add(&role.ops);
        }
        total
    }
}

/// Per-role tallies. Every frame is charged to its sender, so forwarded
/// copies count against the forwarder; connection setup frames and frames
/// injected by an adversary are not charged.
pub fn count_costs(transcript: &Transcript) -> CostReport {
    let mut report = CostReport::default();
    for entry in &transcript.entries {
        if entry.frame.kind().is_setup() {
            continue;
        }
        let bits = entry.frame.message.payload_bits();
        match entry.from {
            Role::Device => report.device.payload_bits += bits,
            Role::Client => report.client.payload_bits += bits,
            Role::Server => report.server.payload_bits += bits,
            Role::Adversary => {}
        }
    }
    for (role, ops) in &transcript.ops {
        match role {
            Role::Device => report.device.ops.add(ops),
            Role::Client => report.client.ops.add(ops),
            Role::Server => report.server.ops.add(ops),
            Role::Adversary => {}
        }
    }
    report
}
