//! Desk-scale simulator of hardware-assisted data-flow integrity
//! enforcement.
//!
//! A program in a mini intermediate representation is analyzed for
//! per-load reaching-definition sets, instrumented with overloaded
//! `store` instructions, and executed. A modeled info-collector turns
//! the instrumentation traffic into packets, prunes and compresses them
//! in a transmission buffer, and streams records through a FIFO to a
//! modeled memory-side checker that maintains the Reaching Definition
//! Table and reports violations alongside traffic-reduction metrics.

pub mod batch;
pub mod checker;
pub mod collector;
pub mod corpus;
pub mod error;
pub mod fifo;
pub mod instr;
pub mod interp;
pub mod layout;
pub mod mir;
pub mod packet;
pub mod pipeline;
pub mod rda;
pub mod record;
pub mod report;

pub use checker::{CheckError, Checker, Rdt};
pub use collector::{Collector, CollectorConfig, OptSet};
pub use corpus::{gen_random_program, gen_scenario, run_scenario, Expectation, Scenario, ScenarioKind};
pub use error::SimError;
pub use fifo::FifoMemory;
pub use instr::{
    decode_info, encode_basic_info, encode_library_header, encode_return_info, instrument,
    AccessKind, InfoShape, InfoWord, InstrumentationConfig,
};
pub use interp::{Machine, Mutation};
pub use layout::Layout;
pub use mir::{assign_identifiers, parse_program, print_program, InstructionId, Program};
pub use packet::{compress_delta, float8_encode, CompressedSlot, DfiPacket, Float8Delta};
pub use pipeline::{
    prepare, run_pipeline, run_pipeline_mutated, run_pipeline_outcome, run_reference,
    run_reference_mutated, PipelineConfig, PipelineOutcome, RefOutcome,
};
pub use rda::{build_cfg, compute_rds, RdsMap};
pub use report::{
    emit_report, verdict_multiset, Metrics, Report, ReportFormat, ViolationKind, ViolationReport,
};
