//! Error types shared across the pipeline stages.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MirError {
    #[error("identifier 0 is reserved")]
    ReservedIdentifier,
    #[error("duplicate identifier {0}")]
    DuplicateIdentifier(u16),
    #[error("program exceeds the 16-bit identifier space")]
    IdentifierSpaceExhausted,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("memory of {memory_bytes} bytes cannot hold {needed} bytes of data and FIFO")]
    MemoryTooSmall { memory_bytes: u32, needed: u64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstrError {
    #[error("program is already instrumented")]
    AlreadyInstrumented,
    #[error("identifiers are not assigned")]
    IdentifiersNotAssigned,
    #[error("composite return identifier overflows 16 bits")]
    ReturnIdOverflow,
    #[error("unknown library function `{0}`")]
    UnknownLibrary(String),
    #[error("library call `{0}` has wrong arity")]
    LibraryArity(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("step limit {0} exceeded")]
    StepLimit(u64),
    #[error("invalid memory access at 0x{addr:08x} ({what})")]
    InvalidAccess { addr: u32, what: &'static str },
    #[error("call to undefined function `{0}`")]
    UndefinedFunction(String),
    #[error("branch to unresolved label `{0}`")]
    UnresolvedLabel(String),
    #[error("unknown library function `{0}`")]
    UnknownLibrary(String),
    #[error("library call `{0}` has wrong arity")]
    LibraryArity(String),
}

/// Top-level error for driver entry points.
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Parse(#[from] crate::mir::ParseError),
    #[error(transparent)]
    Mir(#[from] MirError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Instr(#[from] InstrError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("rds analysis requires assigned identifiers")]
    RdsRequiresIds,
}
