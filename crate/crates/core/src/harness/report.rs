//! Cost tables: measured payload bits and operation counts per role next
//! to the published figures.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::crypto::{hash_words, xor256, Word256};
use crate::protocol::{CostReport, OpTally};
use crate::sram_puf::PufFunction;

/// Published per-handshake payload bits: device, client, server, total.
pub const PUBLISHED_BITS: [u64; 4] = [1536, 2816, 1536, 5888];

/// Published per-role operation counts: device, client, server, total.
pub const PUBLISHED_OPS: [&str; 4] = ["5Th+1Tpuf+7Txor", "2Th+2Txor", "4Th+5Txor", "11Th+1Tpuf+14Txor"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub role: &'static str,
    pub bits: u64,
    pub published_bits: u64,
    pub ops: OpTally,
    pub published_ops: &'static str,
}

impl CostRow {
    pub fn bits_match(&self) -> bool {
        self.bits == self.published_bits
    }

    pub fn ops_match(&self) -> bool {
        self.ops.to_string() == self.published_ops
    }
}

/// Cost comparison built from one or more honest runs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostTable {
    pub rows: Vec<CostRow>,
    /// False when the runs disagreed with each other.
    pub consistent: bool,
}

/// Builds the table from honest-run reports. All runs must agree for the
/// table to be marked consistent; the first run's figures are shown.
pub fn report_costs(results: &[CostReport]) -> CostTable {
    let Some(first) = results.first() else {
        return CostTable { rows: Vec::new(), consistent: true };
    };
    let consistent = results.iter().all(|r| r == first);
    let measured = [
        ("device", first.device.payload_bits, first.device.ops),
        ("client", first.client.payload_bits, first.client.ops),
        ("server", first.server.payload_bits, first.server.ops),
        ("total", first.total_bits(), first.total_ops()),
    ];
    let rows = measured
        .into_iter()
        .enumerate()
        .map(|(i, (role, bits, ops))| CostRow {
            role,
            bits,
            published_bits: PUBLISHED_BITS[i],
            ops,
            published_ops: PUBLISHED_OPS[i],
        })
        .collect();
    CostTable { rows, consistent }
}

impl CostTable {
    pub fn bits_match(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(CostRow::bits_match)
    }

    pub fn total_bits(&self) -> Option<u64> {
        self.rows.iter().find(|r| r.role == "total").map(|r| r.bits)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("role\tbits\tpublished_bits\tbits_match\tops\tpublished_ops\tops_match\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.role,
                r.bits,
                r.published_bits,
                r.bits_match(),
                r.ops,
                r.published_ops,
                r.ops_match()
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        if self.rows.is_empty() {
            return String::new();
        }
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>6} {:>10}   {:<20} {:<20}", "role", "bits", "published", "ops (traced)", "ops (published)");
        for r in &self.rows {
            let bit_mark = if r.bits_match() { "=" } else { "!" };
            let op_mark = if r.ops_match() { "=" } else { "*" };
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>9}{}   {:<20} {:<19}{}",
                r.role,
                r.bits,
                r.published_bits,
                bit_mark,
                r.ops.to_string(),
                r.published_ops,
                op_mark
            );
        }
        if self.rows.iter().any(|r| !r.ops_match()) {
            out.push_str(
                "* traced counts include every hash, XOR and PUF evaluation the code performs: the device \
                 evaluates the PUF for both C_p and C_pnew, and integrity checks, the M9 recomputation and \
                 key derivation are counted as hashes.\n",
            );
        }
        if let Some(total) = self.total_bits() {
            let _ = writeln!(out, "total {total} bits");
        }
        if !self.consistent {
            out.push_str("warning: runs disagreed; first run shown\n");
        }
        out
    }
}

/// Mean wall-clock time per primitive on this machine.
#[derive(Clone, Copy, Debug)]
pub struct OpTimings {
    pub hash: Duration,
    pub xor: Duration,
    pub puf: Duration,
}

pub fn measure_op_timings(puf: &PufFunction, iterations: u32) -> OpTimings {
    let iterations = iterations.max(1);
    let mut w = Word256::from_u64(1);
    let start = Instant::now();
    for _ in 0..iterations {
        w = hash_words(&[&w, &w]);
    }
    let hash = start.elapsed() / iterations;
    let other = Word256::from_u64(0xfeed);
    let start = Instant::now();
    for _ in 0..iterations {
        w = std::hint::black_box(xor256(&w, &other));
    }
    let xor = start.elapsed() / iterations;
    let start = Instant::now();
    for _ in 0..iterations {
        w = puf.respond(&w).expect("provisioned PUF");
    }
    let puf_time = start.elapsed() / iterations;
    std::hint::black_box(w);
    OpTimings { hash, xor, puf: puf_time }
}
