//! The info-collector: recognizes DFI stores, assembles packets, runs
//! the transmission-buffer optimizations and compression, and emits FIFO
//! records.
//!
//! The collector reacts only to executed memory instructions. Loads just
//! latch their address; a store is classified as dummy capture, DFI
//! store, or ordinary store. Ordinary stores are relayed to memory and
//! latch their address; DFI stores are consumed.

pub mod compress;
pub mod opt;

pub use opt::{opt_a, opt_b, opt_c, opt_d, opt_e};

use crate::instr::{decode_info, AccessKind, InfoShape};
use crate::mir::InstructionId;
use crate::packet::DfiPacket;
use crate::record::{encode_record, Record};
use crate::report::{PrunedCounts, ViolationKind, ViolationReport};

/// Which of the five buffer optimizations run at flush time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OptSet {
    pub a: bool,
    pub b: bool,
    pub c: bool,
    pub d: bool,
    pub e: bool,
}

impl OptSet {
    pub const NONE: OptSet = OptSet {
        a: false,
        b: false,
        c: false,
        d: false,
        e: false,
    };

    pub const ALL: OptSet = OptSet {
        a: true,
        b: true,
        c: true,
        d: true,
        e: true,
    };

    /// The default safe set: every pruning rule that preserves oracle
    /// equivalence across flush boundaries, plus sorting.
    pub const SAFE: OptSet = OptSet {
        a: true,
        b: true,
        c: true,
        d: false,
        e: true,
    };

    pub fn from_letters(s: &str) -> Result<OptSet, String> {
        let mut set = OptSet::NONE;
        for c in s.chars() {
            match c.to_ascii_uppercase() {
                'A' => set.a = true,
                'B' => set.b = true,
                'C' => set.c = true,
                'D' => set.d = true,
                'E' => set.e = true,
                '-' => {}
                other => return Err(format!("unknown optimization `{other}`")),
            }
        }
        Ok(set)
    }

    pub fn letters(&self) -> String {
        let mut out = String::new();
        for (on, c) in [
            (self.a, 'A'),
            (self.b, 'B'),
            (self.c, 'C'),
            (self.d, 'D'),
            (self.e, 'E'),
        ] {
            if on {
                out.push(c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectorConfig {
    pub dfi_dummy: u32,
    pub packet_dummy: u32,
    pub buffer_capacity_bytes: usize,
    pub opts: OptSet,
    pub compression: bool,
    pub opt_d_paper_mode: bool,
    /// Flag-gated check for two successive DFI stores outside any
    /// library or return sequence.
    pub detect_double_dfi: bool,
    /// Write-protected FIFO region [fifo_base, fifo_base + fifo_bytes).
    pub fifo_base: u32,
    pub fifo_bytes: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectorMetrics {
    pub packets_generated: u64,
    pub pruned: PrunedCounts,
    pub records_emitted: u64,
    pub wire_bytes: u64,
    /// Bytes the same packets would cost with no pruning or compression.
    pub baseline_bytes: u64,
}

/// Partial multi-store sequence under assembly.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Pending {
    None,
    Library {
        id: InstructionId,
        has_load: bool,
        has_store: bool,
        len64: bool,
        operands: Vec<u32>,
    },
    Return {
        is_return: bool,
        id: InstructionId,
    },
}

impl Pending {
    fn active(&self) -> bool {
        !matches!(self, Pending::None)
    }
}

/// Result of observing one memory instruction.
#[derive(Debug, Default)]
pub struct ObserveOutcome {
    /// Whether an ordinary store should commit to memory.
    pub relay: bool,
    /// Records flushed to the FIFO by this observation.
    pub records: Vec<u64>,
    pub violations: Vec<ViolationReport>,
}

#[derive(Debug)]
pub struct Collector {
    cfg: CollectorConfig,
    dfi_global: Option<u32>,
    packet_mem_addr: Option<u32>,
    last_mem_addr: Option<u32>,
    pending: Pending,
    last_store_was_dfi: bool,
    /// Decompression reference mirrored by the checker; carries across
    /// flush boundaries.
    reference: Option<(u32, u16)>,
    buffer: Vec<DfiPacket>,
    buffer_bytes: u64,
    finished: bool,
    pub metrics: CollectorMetrics,
}

impl Collector {
    pub fn new(cfg: CollectorConfig) -> Collector {
        Collector {
            cfg,
            dfi_global: None,
            packet_mem_addr: None,
            last_mem_addr: None,
            pending: Pending::None,
            last_store_was_dfi: false,
            reference: None,
            buffer: Vec::new(),
            buffer_bytes: 0,
            finished: false,
            metrics: CollectorMetrics::default(),
        }
    }

    pub fn dfi_global(&self) -> Option<u32> {
        self.dfi_global
    }

    pub fn packet_mem_addr(&self) -> Option<u32> {
        self.packet_mem_addr
    }

    pub fn buffer_occupancy_bytes(&self) -> u64 {
        self.buffer_bytes
    }

    fn violation(kind: ViolationKind, address: u32) -> ViolationReport {
        ViolationReport {
            kind,
            load_id: 0,
            found_id: 0,
            address,
            packet_index: 0,
        }
    }

    fn in_fifo_region(&self, addr: u32) -> bool {
        self.packet_mem_addr.is_some()
            && self.cfg.fifo_bytes > 0
            && addr >= self.cfg.fifo_base
            && u64::from(addr) < u64::from(self.cfg.fifo_base) + u64::from(self.cfg.fifo_bytes)
    }

    pub fn observe_load(&mut self, addr: u32) {
        self.last_mem_addr = Some(addr);
        self.last_store_was_dfi = false;
    }

    pub fn observe_store(&mut self, addr: u32, value: u32) -> ObserveOutcome {
        let mut outcome = ObserveOutcome::default();

        // Dummy captures come first: each signature binds exactly once.
        if self.dfi_global.is_none() && value == self.cfg.dfi_dummy {
            self.dfi_global = Some(addr);
            self.last_store_was_dfi = false;
            return outcome;
        }
        if self.packet_mem_addr.is_none() && value == self.cfg.packet_dummy {
            self.packet_mem_addr = Some(addr);
            self.last_store_was_dfi = false;
            return outcome;
        }

        if self.dfi_global == Some(addr) {
            self.observe_dfi_store(value, &mut outcome);
            self.last_store_was_dfi = true;
            return outcome;
        }

        // Ordinary store.
        if self.pending.active() {
            outcome
                .violations
                .push(Self::violation(ViolationKind::MalformedSequence, addr));
            self.pending = Pending::None;
        }
        if self.in_fifo_region(addr) {
            outcome
                .violations
                .push(Self::violation(ViolationKind::FifoAccessViolation, addr));
            self.last_store_was_dfi = false;
            return outcome;
        }
        outcome.relay = true;
        self.last_mem_addr = Some(addr);
        self.last_store_was_dfi = false;
        outcome
    }

    fn observe_dfi_store(&mut self, value: u32, outcome: &mut ObserveOutcome) {
        // Operand words of an open sequence are raw values.
        match &mut self.pending {
            Pending::Library {
                id,
                has_load,
                has_store,
                len64,
                operands,
            } => {
                operands.push(value);
                let want =
                    usize::from(*has_load) + usize::from(*has_store) + 1 + usize::from(*len64);
                if operands.len() == want {
                    let mut it = operands.iter().copied();
                    let load_addr = has_load.then(|| it.next().unwrap());
                    let store_addr = has_store.then(|| it.next().unwrap());
                    let len_lo = it.next().unwrap();
                    let len_hi = if *len64 { it.next().unwrap() } else { 0 };
                    let len_bytes = u64::from(len_lo) | (u64::from(len_hi) << 32);
                    let packet = DfiPacket::Library {
                        id: *id,
                        load_addr,
                        store_addr,
                        len_words: len_bytes.div_ceil(4),
                        len64: *len64,
                    };
                    self.pending = Pending::None;
                    self.push_packet(packet, outcome);
                }
                return;
            }
            Pending::Return { is_return, id } => {
                let kind = if *is_return {
                    AccessKind::Load
                } else {
                    AccessKind::Store
                };
                let packet = DfiPacket::Basic {
                    kind,
                    id: *id,
                    addr: value,
                };
                self.pending = Pending::None;
                self.push_packet(packet, outcome);
                return;
            }
            Pending::None => {}
        }

        match decode_info(value) {
            Some(InfoShape::Basic { kind, id }) => {
                if self.cfg.detect_double_dfi && self.last_store_was_dfi {
                    outcome
                        .violations
                        .push(Self::violation(ViolationKind::DoubleDfiStore, value));
                }
                match self.last_mem_addr {
                    Some(addr) => {
                        self.push_packet(DfiPacket::Basic { kind, id, addr }, outcome)
                    }
                    None => outcome
                        .violations
                        .push(Self::violation(ViolationKind::MalformedSequence, 0)),
                }
            }
            Some(InfoShape::Library {
                has_load,
                has_store,
                len64,
                id,
            }) => {
                self.pending = Pending::Library {
                    id,
                    has_load,
                    has_store,
                    len64,
                    operands: Vec::new(),
                };
            }
            Some(InfoShape::Return { is_return, id }) => {
                self.pending = Pending::Return { is_return, id };
            }
            None => outcome
                .violations
                .push(Self::violation(ViolationKind::MalformedSequence, value)),
        }
    }

    fn push_packet(&mut self, packet: DfiPacket, outcome: &mut ObserveOutcome) {
        let bytes = packet.uncompressed_wire_bytes();
        if self.buffer_bytes + bytes > self.cfg.buffer_capacity_bytes as u64
            && !self.buffer.is_empty()
        {
            outcome.records.extend(self.flush());
        }
        self.metrics.packets_generated += 1;
        self.metrics.baseline_bytes += bytes;
        self.buffer_bytes += bytes;
        self.buffer.push(packet);
        if self.buffer_bytes >= self.cfg.buffer_capacity_bytes as u64 {
            outcome.records.extend(self.flush());
        }
    }

    /// Runs the optimization pipeline over the buffered packets, then
    /// compression, and returns the FIFO records. Called when occupancy
    /// reaches capacity and at end of program.
    pub fn flush(&mut self) -> Vec<u64> {
        let packets = std::mem::take(&mut self.buffer);
        self.buffer_bytes = 0;
        if packets.is_empty() {
            return Vec::new();
        }
        let mut packets = packets;
        if self.cfg.opts.a {
            let (kept, pruned) = opt_a(packets);
            packets = kept;
            self.metrics.pruned.a += pruned;
        }
        if self.cfg.opts.b {
            let (kept, pruned) = opt_b(packets);
            packets = kept;
            self.metrics.pruned.b += pruned;
        }
        if self.cfg.opts.c {
            let (kept, pruned) = opt_c(packets);
            packets = kept;
            self.metrics.pruned.c += pruned;
        }
        if self.cfg.opts.d {
            let (kept, pruned) = opt_d(packets, self.cfg.opt_d_paper_mode);
            packets = kept;
            self.metrics.pruned.d += pruned;
        }
        if self.cfg.opts.e {
            let (kept, _) = opt_e(packets);
            packets = kept;
        }
        let mut out = Vec::new();
        let stats =
            compress::emit_records(&packets, self.cfg.compression, &mut self.reference, &mut out);
        self.metrics.records_emitted += stats.records;
        self.metrics.wire_bytes += stats.wire_bytes;
        out
    }

    /// Final flush plus the end-of-stream control record.
    pub fn finish(&mut self) -> Vec<u64> {
        assert!(!self.finished, "collector finished twice");
        self.finished = true;
        let mut records = self.flush();
        records.push(encode_record(&Record::EndOfStream));
        self.metrics.records_emitted += 1;
        self.metrics.wire_bytes += 8;
        self.metrics.baseline_bytes += 8;
        records
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_cfg() -> CollectorConfig {
        CollectorConfig {
            dfi_dummy: 0x0DF1_D0D0,
            packet_dummy: 0x0DF1_F1F0,
            buffer_capacity_bytes: 2048,
            opts: OptSet::NONE,
            compression: false,
            opt_d_paper_mode: false,
            detect_double_dfi: false,
            fifo_base: 0xF000,
            fifo_bytes: 0x1000,
        }
    }

    fn capture_dummies(c: &mut Collector) {
        let o = c.observe_store(0x9000, 0x0DF1_D0D0);
        assert!(!o.relay);
        let o = c.observe_store(0xF000, 0x0DF1_F1F0);
        assert!(!o.relay);
        assert_eq!(c.dfi_global(), Some(0x9000));
        assert_eq!(c.packet_mem_addr(), Some(0xF000));
    }

    #[test]
    fn dummy_capture_binds_once_and_emits_nothing() {
        let mut c = Collector::new(test_cfg());
        capture_dummies(&mut c);
        assert_eq!(c.metrics.packets_generated, 0);
        // A second store of the dummy value is an ordinary store now.
        let o = c.observe_store(0x100, 0x0DF1_D0D0);
        assert!(o.relay);
        assert_eq!(c.dfi_global(), Some(0x9000));
    }

    #[test]
    fn store_then_dfi_store_forms_basic_packet() {
        let mut c = Collector::new(test_cfg());
        capture_dummies(&mut c);
        let o = c.observe_store(0x8000, 77);
        assert!(o.relay);
        let o = c.observe_store(0x9000, 0x0000_000C);
        assert!(!o.relay);
        assert_eq!(c.metrics.packets_generated, 1);
        assert_eq!(
            c.buffer[0],
            DfiPacket::basic(AccessKind::Store, 12, 0x8000)
        );
    }

    #[test]
    fn load_addresses_latch_for_load_packets() {
        let mut c = Collector::new(test_cfg());
        capture_dummies(&mut c);
        c.observe_load(0x8004);
        c.observe_store(0x9000, 0x0001_0019);
        assert_eq!(c.buffer[0], DfiPacket::basic(AccessKind::Load, 25, 0x8004));
    }

    #[test]
    fn library_sequence_assembles_word_length() {
        let mut c = Collector::new(test_cfg());
        capture_dummies(&mut c);
        // memcpy-like: header, load addr, store addr, 40 bytes.
        c.observe_store(0x9000, 0x001A_0007);
        c.observe_store(0x9000, 0x5000);
        c.observe_store(0x9000, 0x6000);
        let o = c.observe_store(0x9000, 40);
        assert!(o.violations.is_empty());
        assert_eq!(
            c.buffer[0],
            DfiPacket::Library {
                id: InstructionId(7),
                load_addr: Some(0x5000),
                store_addr: Some(0x6000),
                len_words: 10,
                len64: false,
            }
        );
    }

    #[test]
    fn return_sequence_forms_basic_packet_with_slot_address() {
        let mut c = Collector::new(test_cfg());
        capture_dummies(&mut c);
        c.observe_store(0x9000, (1 << 21) | 0x64);
        c.observe_store(0x9000, 0x7abc);
        assert_eq!(
            c.buffer[0],
            DfiPacket::basic(AccessKind::Store, 0x64, 0x7abc)
        );
    }

    #[test]
    fn fifo_region_store_is_blocked_and_flagged() {
        let mut c = Collector::new(test_cfg());
        capture_dummies(&mut c);
        let o = c.observe_store(0xF010, 1234);
        assert!(!o.relay);
        assert_eq!(o.violations.len(), 1);
        assert_eq!(o.violations[0].kind, ViolationKind::FifoAccessViolation);
    }

    #[test]
    fn interrupted_sequence_is_malformed() {
        let mut c = Collector::new(test_cfg());
        capture_dummies(&mut c);
        c.observe_store(0x9000, 0x001A_0007);
        let o = c.observe_store(0x8000, 1);
        assert_eq!(o.violations[0].kind, ViolationKind::MalformedSequence);
        // Recovered: ordinary traffic continues.
        assert!(o.relay);
    }

    #[test]
    fn double_dfi_store_detected_when_enabled() {
        let mut cfg = test_cfg();
        cfg.detect_double_dfi = true;
        let mut c = Collector::new(cfg);
        capture_dummies(&mut c);
        c.observe_store(0x8000, 1);
        let o = c.observe_store(0x9000, 0x0000_000C);
        assert!(o.violations.is_empty());
        // A second basic info word with no memory access between.
        let o = c.observe_store(0x9000, 0x0000_000D);
        assert_eq!(o.violations[0].kind, ViolationKind::DoubleDfiStore);
    }

    #[test]
    fn garbage_info_word_is_malformed() {
        let mut c = Collector::new(test_cfg());
        capture_dummies(&mut c);
        let o = c.observe_store(0x9000, 0xFFFF_FFFF);
        assert_eq!(o.violations[0].kind, ViolationKind::MalformedSequence);
    }

    #[test]
    fn capacity_triggers_flush() {
        let mut cfg = test_cfg();
        cfg.buffer_capacity_bytes = 16;
        let mut c = Collector::new(cfg);
        capture_dummies(&mut c);
        c.observe_store(0x8000, 1);
        let o = c.observe_store(0x9000, 0x0000_0001);
        assert!(o.records.is_empty());
        c.observe_store(0x8004, 1);
        let o = c.observe_store(0x9000, 0x0000_0002);
        // Second packet fills the 16-byte buffer; both flush.
        assert_eq!(o.records.len(), 2);
    }

    #[test]
    fn finish_emits_end_of_stream() {
        let mut c = Collector::new(test_cfg());
        capture_dummies(&mut c);
        let records = c.finish();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0] >> 62, 0b11);
    }

    #[test]
    fn empty_flush_emits_nothing() {
        let mut c = Collector::new(test_cfg());
        assert!(c.flush().is_empty());
    }

    #[test]
    fn duplicate_loads_collapse_under_opt_c() {
        let mut cfg = test_cfg();
        cfg.opts.c = true;
        let mut c = Collector::new(cfg);
        capture_dummies(&mut c);
        for _ in 0..5 {
            c.observe_load(0x8000);
            c.observe_store(0x9000, 0x0001_0009);
        }
        let records = c.finish();
        // One basic record plus end-of-stream.
        assert_eq!(records.len(), 2);
        assert_eq!(c.metrics.pruned.c, 4);
    }
}
