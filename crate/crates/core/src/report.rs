//! Violation reports and traffic metrics.

use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ViolationKind {
    /// A load observed a reaching definition outside its legal set.
    DfiCheckFailure,
    /// A non-collector store targeted the packet FIFO region.
    FifoAccessViolation,
    /// A library/return store sequence was interrupted or a record
    /// stream arrived inconsistent.
    MalformedSequence,
    /// Two successive DFI stores outside any library/return sequence.
    DoubleDfiStore,
}

impl std::fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ViolationKind::DfiCheckFailure => "DfiCheckFailure",
            ViolationKind::FifoAccessViolation => "FifoAccessViolation",
            ViolationKind::MalformedSequence => "MalformedSequence",
            ViolationKind::DoubleDfiStore => "DoubleDfiStore",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ViolationReport {
    pub kind: ViolationKind,
    pub load_id: u16,
    pub found_id: u16,
    pub address: u32,
    /// Packets between the offending store and its detection; 0 for
    /// violations detected at the collector.
    pub packet_index: u64,
}

impl ViolationReport {
    /// Identity used for verdict multiset comparison. Latency is
    /// excluded: the reference checker has none.
    pub fn key(&self) -> (ViolationKind, u16, u16, u32) {
        (self.kind, self.load_id, self.found_id, self.address)
    }

    pub fn log_line(&self) -> String {
        format!(
            "VIOLATION kind={} load_id={} found_id={} addr=0x{:x} packet_index={}",
            self.kind, self.load_id, self.found_id, self.address, self.packet_index
        )
    }
}

/// Multiset of violation identities, for comparing pipeline runs against
/// the synchronous reference.
pub fn verdict_multiset(
    violations: &[ViolationReport],
) -> BTreeMap<(ViolationKind, u16, u16, u32), usize> {
    let mut out = BTreeMap::new();
    for v in violations {
        *out.entry(v.key()).or_default() += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PrunedCounts {
    #[serde(rename = "A")]
    pub a: u64,
    #[serde(rename = "B")]
    pub b: u64,
    #[serde(rename = "C")]
    pub c: u64,
    #[serde(rename = "D")]
    pub d: u64,
    #[serde(rename = "E")]
    pub e: u64,
}

impl PrunedCounts {
    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d + self.e
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub packets_generated: u64,
    pub pruned: PrunedCounts,
    pub records_emitted: u64,
    pub wire_bytes: u64,
    pub baseline_bytes: u64,
    pub compression_ratio: f64,
    pub producer_stalls: u64,
    pub max_latency_packets: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub violations: Vec<ViolationReport>,
    pub metrics: Metrics,
}

impl Report {
    pub fn has_violations(&self) -> bool {
        !self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
}

pub fn emit_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("report serializes")
        }
        ReportFormat::Table => {
            let mut out = String::new();
            for v in &report.violations {
                out.push_str(&v.log_line());
                out.push('\n');
            }
            let m = &report.metrics;
            let rows: [(&str, String); 8] = [
                ("packets_generated", m.packets_generated.to_string()),
                (
                    "pruned",
                    format!(
                        "A={} B={} C={} D={} E={}",
                        m.pruned.a, m.pruned.b, m.pruned.c, m.pruned.d, m.pruned.e
                    ),
                ),
                ("records_emitted", m.records_emitted.to_string()),
                ("wire_bytes", m.wire_bytes.to_string()),
                ("baseline_bytes", m.baseline_bytes.to_string()),
                ("compression_ratio", format!("{:.4}", m.compression_ratio)),
                ("producer_stalls", m.producer_stalls.to_string()),
                ("max_latency_packets", m.max_latency_packets.to_string()),
            ];
            for (name, value) in rows {
                out.push_str(&format!("{name:<20} {value}\n"));
            }
            out
        }
    }
}
