//! End-to-end drivers: the asynchronous enforcement pipeline
//! (instrument, interpret, collect, FIFO, check) and the synchronous
//! reference that checks every access inline.
//!
//! The pipeline runs producer and consumer in deterministic lockstep:
//! the collector flushes into the FIFO as the interpreter executes, and
//! when the FIFO fills the checker drains it (counted as a producer
//! stall).

use crate::checker::{CheckError, Checker};
use crate::collector::{Collector, CollectorConfig, ObserveOutcome, OptSet};
use crate::error::{ExecError, SimError};
use crate::fifo::FifoMemory;
use crate::instr::{instrument, AccessKind, InstrumentationConfig};
use crate::interp::{ExecSink, LibcallEvent, Machine, Mutation, DEFAULT_STEP_LIMIT};
use crate::layout::Layout;
use crate::mir::{assign_identifiers, Instruction, InstructionId, Program};
use crate::rda::{compute_rds, RdsMap};
use crate::report::{Metrics, Report, ViolationKind, ViolationReport};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    /// Transmission buffer capacity in bytes (512 and 2048 are the
    /// studied sizes).
    pub buffer_bytes: usize,
    pub opts: OptSet,
    pub compression: bool,
    /// FIFO capacity in 64-bit records.
    pub fifo_capacity: usize,
    pub seed: u64,
    /// Disable the cross-address staleness gate of optimization D.
    pub opt_d_paper_mode: bool,
    pub detect_double_dfi: bool,
    pub step_limit: u64,
    pub instrumentation: InstrumentationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            buffer_bytes: 2048,
            opts: OptSet::SAFE,
            compression: true,
            fifo_capacity: 4096,
            seed: 0,
            opt_d_paper_mode: false,
            detect_double_dfi: false,
            step_limit: DEFAULT_STEP_LIMIT,
            instrumentation: InstrumentationConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// No buffering, no pruning, no compression: every packet becomes a
    /// record immediately.
    pub fn naive() -> Self {
        PipelineConfig {
            buffer_bytes: 8,
            opts: OptSet::NONE,
            compression: false,
            ..PipelineConfig::default()
        }
    }
}

/// Assigns identifiers (where missing) and computes the analysis, the
/// offline half of the flow.
pub fn prepare(program: &Program) -> Result<(Program, RdsMap), SimError> {
    let mut prog = program.clone();
    assign_identifiers(&mut prog)?;
    let rds = compute_rds(&prog)?;
    Ok((prog, rds))
}

struct PipelineSink<'a> {
    collector: Collector,
    fifo: &'a FifoMemory,
    checker: &'a mut Checker,
    stalls: u64,
    collector_violations: Vec<ViolationReport>,
}

impl PipelineSink<'_> {
    fn absorb(&mut self, outcome: ObserveOutcome) -> Result<bool, ExecError> {
        self.collector_violations.extend(outcome.violations);
        self.push_records(&outcome.records)?;
        Ok(outcome.relay)
    }

    fn push_records(&mut self, records: &[u64]) -> Result<(), ExecError> {
        for &record in records {
            while self.fifo.push(record).is_err() {
                // Producer stalls until the consumer makes room.
                self.stalls += 1;
                self.checker
                    .consume_stream(self.fifo)
                    .map_err(check_to_exec)?;
            }
        }
        Ok(())
    }
}

fn check_to_exec(e: CheckError) -> ExecError {
    let addr = match e {
        CheckError::AddressOutOfRange(a) => a,
        CheckError::RangeOutOfMemory { addr, .. } => addr,
    };
    ExecError::InvalidAccess {
        addr,
        what: "packet address outside configured memory",
    }
}

impl ExecSink for PipelineSink<'_> {
    fn on_store(&mut self, addr: u32, value: u32, _: &Instruction) -> Result<bool, ExecError> {
        let outcome = self.collector.observe_store(addr, value);
        self.absorb(outcome)
    }

    fn on_load(&mut self, addr: u32, _: u32, _: &Instruction) -> Result<(), ExecError> {
        self.collector.observe_load(addr);
        Ok(())
    }

    fn on_libcall(&mut self, _: &LibcallEvent) -> Result<(), ExecError> {
        // The library DFI-store sequence precedes the call in the
        // instrumented text; nothing extra happens here.
        Ok(())
    }

    fn on_lib_access(&mut self, is_store: bool, addr: u32, value: u32) -> Result<(), ExecError> {
        if is_store {
            let outcome = self.collector.observe_store(addr, value);
            self.absorb(outcome).map(|_| ())
        } else {
            self.collector.observe_load(addr);
            Ok(())
        }
    }
}

/// Report plus the checker's final table, for equivalence tests.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub report: Report,
    pub rdt: Vec<u16>,
}

pub fn run_pipeline(program: &Program, config: &PipelineConfig) -> Result<Report, SimError> {
    run_pipeline_mutated(program, config, None)
}

pub fn run_pipeline_mutated(
    program: &Program,
    config: &PipelineConfig,
    mutation: Option<&Mutation>,
) -> Result<Report, SimError> {
    run_pipeline_outcome(program, config, mutation).map(|o| o.report)
}

pub fn run_pipeline_outcome(
    program: &Program,
    config: &PipelineConfig,
    mutation: Option<&Mutation>,
) -> Result<PipelineOutcome, SimError> {
    let (prog, rds) = prepare(program)?;
    let instrumented = instrument(&prog, &rds, &config.instrumentation)?;
    let layout = Layout::build(&instrumented, config.fifo_capacity)?;
    let fifo = FifoMemory::new(layout.fifo_base, config.fifo_capacity);
    let mut checker = Checker::new(rds, prog.memory_bytes);

    let collector = Collector::new(CollectorConfig {
        dfi_dummy: config.instrumentation.dfi_dummy,
        packet_dummy: config.instrumentation.packet_dummy,
        buffer_capacity_bytes: config.buffer_bytes,
        opts: config.opts,
        compression: config.compression,
        opt_d_paper_mode: config.opt_d_paper_mode,
        detect_double_dfi: config.detect_double_dfi,
        fifo_base: layout.fifo_base,
        fifo_bytes: layout.fifo_bytes,
    });

    let mut sink = PipelineSink {
        collector,
        fifo: &fifo,
        checker: &mut checker,
        stalls: 0,
        collector_violations: Vec::new(),
    };

    let mut machine = Machine::new(&instrumented, layout, config.step_limit);
    machine.run(&mut sink, mutation)?;

    let trailing = sink.collector.finish();
    sink.push_records(&trailing)?;
    let collector_metrics = sink.collector.metrics;
    let mut violations = std::mem::take(&mut sink.collector_violations);
    let stalls = sink.stalls;
    checker
        .consume_stream(&fifo)
        .map_err(|e| SimError::Exec(check_to_exec(e)))?;
    debug_assert!(checker.end_seen(), "stream must terminate");

    violations.extend(checker.take_violations());
    let max_latency = violations.iter().map(|v| v.packet_index).max().unwrap_or(0);
    let metrics = Metrics {
        packets_generated: collector_metrics.packets_generated,
        pruned: collector_metrics.pruned,
        records_emitted: collector_metrics.records_emitted,
        wire_bytes: collector_metrics.wire_bytes,
        baseline_bytes: collector_metrics.baseline_bytes,
        compression_ratio: if collector_metrics.baseline_bytes == 0 {
            1.0
        } else {
            collector_metrics.wire_bytes as f64 / collector_metrics.baseline_bytes as f64
        },
        producer_stalls: stalls,
        max_latency_packets: max_latency,
    };
    Ok(PipelineOutcome {
        report: Report {
            violations,
            metrics,
        },
        rdt: checker.rdt().entries().to_vec(),
    })
}

/// Final state of a synchronous reference run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefOutcome {
    pub violations: Vec<ViolationReport>,
    pub rdt: Vec<u16>,
}

/// Inline DFI enforcement with no buffering, pruning, or compression;
/// deliberately implemented apart from the record-stream checker so the
/// two can serve as independent routes in equivalence tests.
struct ReferenceSink<'a> {
    rdt: Vec<u16>,
    rds: &'a RdsMap,
    max_static_id: u16,
    composite: u16,
    fifo_base: u32,
    fifo_bytes: u32,
    violations: Vec<ViolationReport>,
}

impl ReferenceSink<'_> {
    fn word(&self, addr: u32) -> Result<usize, ExecError> {
        let w = (addr >> 2) as usize;
        if w >= self.rdt.len() {
            return Err(ExecError::InvalidAccess {
                addr,
                what: "check outside configured memory",
            });
        }
        Ok(w)
    }

    fn check_load(&mut self, id: u16, addr: u32) -> Result<(), ExecError> {
        let w = self.word(addr)?;
        let found = self.rdt[w];
        let ok = if id > self.max_static_id {
            found == id
        } else {
            self.rds
                .rds(InstructionId(id))
                .map(|set| set.contains(&InstructionId(found)))
                .unwrap_or(false)
        };
        if !ok {
            self.violations.push(ViolationReport {
                kind: ViolationKind::DfiCheckFailure,
                load_id: id,
                found_id: found,
                address: addr,
                packet_index: 0,
            });
        }
        Ok(())
    }

    fn write(&mut self, id: u16, addr: u32) -> Result<(), ExecError> {
        let w = self.word(addr)?;
        self.rdt[w] = id;
        Ok(())
    }

    fn in_fifo_region(&self, addr: u32) -> bool {
        self.fifo_bytes > 0
            && addr >= self.fifo_base
            && u64::from(addr) < u64::from(self.fifo_base) + u64::from(self.fifo_bytes)
    }
}

impl ExecSink for ReferenceSink<'_> {
    fn on_store(&mut self, addr: u32, _: u32, instr: &Instruction) -> Result<bool, ExecError> {
        if self.in_fifo_region(addr) {
            self.violations.push(ViolationReport {
                kind: ViolationKind::FifoAccessViolation,
                load_id: 0,
                found_id: 0,
                address: addr,
                packet_index: 0,
            });
            return Ok(false);
        }
        if let Some(id) = instr.id {
            self.write(id.0, addr)?;
        }
        Ok(true)
    }

    fn on_load(&mut self, addr: u32, _: u32, instr: &Instruction) -> Result<(), ExecError> {
        if let Some(id) = instr.id {
            self.check_load(id.0, addr)?;
        }
        Ok(())
    }

    fn on_libcall(&mut self, event: &LibcallEvent) -> Result<(), ExecError> {
        let Some(id) = event.id else { return Ok(()) };
        let len_words = event.len_bytes.div_ceil(4);
        if let Some(base) = event.load_addr {
            for k in 0..len_words {
                let addr = base + (k as u32) * 4;
                let w = self.word(addr)?;
                let found = self.rdt[w];
                let ok = self
                    .rds
                    .rds(InstructionId(id))
                    .map(|set| set.contains(&InstructionId(found)))
                    .unwrap_or(false);
                if !ok {
                    self.violations.push(ViolationReport {
                        kind: ViolationKind::DfiCheckFailure,
                        load_id: id,
                        found_id: found,
                        address: w as u32 * 4,
                        packet_index: 0,
                    });
                }
            }
        }
        if let Some(base) = event.store_addr {
            for k in 0..len_words {
                self.write(id, base + (k as u32) * 4)?;
            }
        }
        Ok(())
    }

    fn on_function_entry(&mut self, _: &str, ret_slot: u32) -> Result<(), ExecError> {
        self.write(self.composite, ret_slot)
    }

    fn on_function_ret(&mut self, _: &str, ret_slot: u32) -> Result<(), ExecError> {
        let w = self.word(ret_slot)?;
        let found = self.rdt[w];
        if found != self.composite {
            self.violations.push(ViolationReport {
                kind: ViolationKind::DfiCheckFailure,
                load_id: self.composite,
                found_id: found,
                address: ret_slot,
                packet_index: 0,
            });
        }
        Ok(())
    }
}

pub fn run_reference(program: &Program, config: &PipelineConfig) -> Result<RefOutcome, SimError> {
    run_reference_mutated(program, config, None)
}

pub fn run_reference_mutated(
    program: &Program,
    config: &PipelineConfig,
    mutation: Option<&Mutation>,
) -> Result<RefOutcome, SimError> {
    let (prog, rds) = prepare(program)?;
    let layout = Layout::build(&prog, config.fifo_capacity)?;
    let composite = crate::instr::return_id_base(rds.max_static_id)
        .checked_add(config.instrumentation.thread_id)
        .ok_or(SimError::Instr(crate::error::InstrError::ReturnIdOverflow))?;
    let mut sink = ReferenceSink {
        rdt: vec![0; (prog.memory_bytes / 4) as usize],
        rds: &rds,
        max_static_id: rds.max_static_id,
        composite,
        fifo_base: layout.fifo_base,
        fifo_bytes: layout.fifo_bytes,
        violations: Vec::new(),
    };
    let mut machine = Machine::new(&prog, layout, config.step_limit);
    machine.run(&mut sink, mutation)?;
    Ok(RefOutcome {
        violations: sink.violations,
        rdt: sink.rdt,
    })
}

/// Checks a store/load packet multiset exactly the way the checker
/// would, without records or buffering. Test oracle for the
/// optimization passes.
pub fn check_packets_synchronously(
    packets: &[crate::packet::DfiPacket],
    rds: &RdsMap,
    rdt: &mut Vec<u16>,
) -> Vec<(u16, u16, u32)> {
    let mut verdicts = Vec::new();
    for packet in packets {
        match packet {
            crate::packet::DfiPacket::Basic { kind, id, addr } => {
                let w = (addr >> 2) as usize;
                match kind {
                    AccessKind::Store => {
                        if w < rdt.len() {
                            rdt[w] = id.0;
                        }
                    }
                    AccessKind::Load => {
                        let found = rdt.get(w).copied().unwrap_or(0);
                        let ok = if id.0 > rds.max_static_id {
                            found == id.0
                        } else {
                            rds.rds(*id)
                                .map(|s| s.contains(&InstructionId(found)))
                                .unwrap_or(false)
                        };
                        if !ok {
                            verdicts.push((id.0, found, *addr));
                        }
                    }
                }
            }
            crate::packet::DfiPacket::Library {
                id,
                load_addr,
                store_addr,
                len_words,
                ..
            } => {
                if let Some(base) = load_addr {
                    for k in 0..*len_words {
                        let w = ((base >> 2) as u64 + k) as usize;
                        let found = rdt.get(w).copied().unwrap_or(0);
                        let ok = rds
                            .rds(*id)
                            .map(|s| s.contains(&InstructionId(found)))
                            .unwrap_or(false);
                        if !ok {
                            verdicts.push((id.0, found, (w * 4) as u32));
                        }
                    }
                }
                if let Some(base) = store_addr {
                    for k in 0..*len_words {
                        let w = ((base >> 2) as u64 + k) as usize;
                        if w < rdt.len() {
                            rdt[w] = id.0;
                        }
                    }
                }
            }
        }
    }
    verdicts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::NullSink;
    use crate::mir::parse_program;
    use crate::report::verdict_multiset;

    const FIG2: &str = "\
store x1 addr1
store x2 addr2
cmp x1 x2
jne label
store x2 addr1
load x3 addr1
label:
load x4 addr1
";

    #[test]
    fn fig2_is_clean_under_pipeline_and_reference() {
        let p = parse_program(FIG2).unwrap();
        let config = PipelineConfig::default();
        let report = run_pipeline(&p, &config).unwrap();
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        let reference = run_reference(&p, &config).unwrap();
        assert!(reference.violations.is_empty());
    }

    #[test]
    fn empty_program_produces_empty_clean_report() {
        let p = parse_program("").unwrap();
        let report = run_pipeline(&p, &PipelineConfig::default()).unwrap();
        assert!(report.violations.is_empty());
        assert_eq!(report.metrics.packets_generated, 0);
        let reference = run_reference(&p, &PipelineConfig::default()).unwrap();
        assert!(reference.violations.is_empty());
    }

    #[test]
    fn pipeline_matches_reference_on_fig2_both_paths() {
        // Force the branch-taken path with unequal registers.
        let taken = format!("mov x1 1\n{FIG2}");
        for text in [FIG2.to_string(), taken] {
            let p = parse_program(&text).unwrap();
            for config in [PipelineConfig::default(), PipelineConfig::naive()] {
                let report = run_pipeline(&p, &config).unwrap();
                let reference = run_reference(&p, &config).unwrap();
                assert_eq!(
                    verdict_multiset(&report.violations),
                    verdict_multiset(&reference.violations)
                );
            }
        }
    }

    #[test]
    fn instrumentation_preserves_architectural_state() {
        let text = "\
var buf 16
mov r1 &buf
mov r2 0
loop:
store r2 r1
add r1 r1 4
add r2 r2 1
cmp r2 4
jne loop
load r5 buf
libcall memset(buf, 9, 8)
ret
";
        let (prog, rds) = prepare(&parse_program(text).unwrap()).unwrap();
        let config = PipelineConfig::default();
        let instrumented = instrument(&prog, &rds, &config.instrumentation).unwrap();

        let plain_layout = Layout::build(&prog, config.fifo_capacity).unwrap();
        let mut plain = Machine::new(&prog, plain_layout, config.step_limit);
        plain.run(&mut NullSink, None).unwrap();

        let ilayout = Layout::build(&instrumented, config.fifo_capacity).unwrap();
        let fifo = FifoMemory::new(ilayout.fifo_base, config.fifo_capacity);
        let mut checker = Checker::new(rds, prog.memory_bytes);
        let collector = Collector::new(CollectorConfig {
            dfi_dummy: config.instrumentation.dfi_dummy,
            packet_dummy: config.instrumentation.packet_dummy,
            buffer_capacity_bytes: config.buffer_bytes,
            opts: config.opts,
            compression: config.compression,
            opt_d_paper_mode: false,
            detect_double_dfi: false,
            fifo_base: ilayout.fifo_base,
            fifo_bytes: ilayout.fifo_bytes,
        });
        let mut sink = PipelineSink {
            collector,
            fifo: &fifo,
            checker: &mut checker,
            stalls: 0,
            collector_violations: Vec::new(),
        };
        let mut traced = Machine::new(&instrumented, ilayout, config.step_limit);
        traced.run(&mut sink, None).unwrap();

        // User memory and registers agree; DFI stores were consumed.
        assert_eq!(plain.mem, traced.mem);
        assert_eq!(plain.regs, traced.regs);
    }

    #[test]
    fn reports_are_deterministic() {
        let p = parse_program(FIG2).unwrap();
        let config = PipelineConfig::default();
        let a = run_pipeline(&p, &config).unwrap();
        let b = run_pipeline(&p, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_fifo_forces_stalls_but_keeps_verdicts() {
        let text = "\
var buf 64
mov r1 &buf
mov r2 0
loop:
store r2 r1
add r1 r1 4
add r2 r2 1
cmp r2 16
jne loop
";
        let p = parse_program(text).unwrap();
        let mut config = PipelineConfig::naive();
        config.fifo_capacity = 2;
        let report = run_pipeline(&p, &config).unwrap();
        assert!(report.metrics.producer_stalls > 0);
        assert!(report.violations.is_empty());
    }
}
