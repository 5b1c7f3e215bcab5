//! Mini intermediate representation: a small assembly-like language with
//! explicit memory instructions, symbolic data, and library calls.
//!
//! Every instruction that touches memory (store, load, libcall, call, ret)
//! carries a 16-bit identifier used by the enforcement machinery. Programs
//! are plain text, one instruction per line; `//` starts a comment.

mod parse;
mod print;

pub use parse::{parse_program, ParseError};
pub use print::print_program;

use std::collections::BTreeSet;

use crate::error::MirError;

/// 16-bit identifier of a memory-access instruction.
///
/// Identifier 0 is reserved as the "never written" marker, so real
/// instructions are numbered from 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(transparent)]
pub struct InstructionId(pub u16);

impl InstructionId {
    pub const NEVER_WRITTEN: InstructionId = InstructionId(0);
}

impl std::fmt::Display for InstructionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// A value operand: something that evaluates to a number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    /// Integer literal. 64-bit so library data lengths can exceed 32 bits.
    Lit(u64),
    /// Register, created on first use, initially zero.
    Reg(String),
    /// Address of a data symbol, a link-time constant.
    AddrOf(String),
}

/// An address operand: where a store writes or a load reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AddrOperand {
    /// Absolute address literal.
    Abs(u32),
    /// Base address of a data symbol.
    Sym(String),
    /// Indirect through a register.
    Reg(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AluOp {
    Add,
    Sub,
    Mov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchCond {
    /// `jne`: taken when the last `cmp` compared unequal values.
    NotEqual,
    /// `jmp`: always taken.
    Always,
}

/// Markers inserted by the instrumentation pass at program start.
/// They execute as no-ops; their presence flags an instrumented program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerKind {
    FifoAlloc,
    RdsLoad,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstrKind {
    Store { src: Operand, addr: AddrOperand },
    Load { dst: String, addr: AddrOperand },
    LibCall { name: String, args: Vec<Operand> },
    Cmp { lhs: Operand, rhs: Operand },
    Branch { cond: BranchCond, target: String },
    Call { func: String },
    Ret,
    Alu { op: AluOp, dst: String, ops: Vec<Operand> },
    Label(String),
    Marker(MarkerKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub kind: InstrKind,
    /// Present on Store/Load/LibCall/Call/Ret once identifiers are assigned.
    /// Instrumentation-inserted stores never carry one.
    pub id: Option<InstructionId>,
}

impl Instruction {
    pub fn new(kind: InstrKind) -> Self {
        Instruction { kind, id: None }
    }

    /// Whether this instruction kind carries an identifier.
    pub fn bears_id(&self) -> bool {
        matches!(
            self.kind,
            InstrKind::Store { .. }
                | InstrKind::Load { .. }
                | InstrKind::LibCall { .. }
                | InstrKind::Call { .. }
                | InstrKind::Ret
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub body: Vec<Instruction>,
}

/// Explicit data-symbol declaration (`var name bytes`). Symbols used
/// without a declaration get one word by default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub size_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub functions: Vec<Function>,
    pub memory_bytes: u32,
    pub entry: String,
    pub vars: Vec<VarDecl>,
    /// Largest assigned identifier; 0 until `assign_identifiers` runs
    /// (or when the program has no id-bearing instructions).
    pub max_static_id: u16,
}

pub const DEFAULT_MEMORY_BYTES: u32 = 65536;

impl Program {
    pub fn empty() -> Self {
        Program {
            functions: Vec::new(),
            memory_bytes: DEFAULT_MEMORY_BYTES,
            entry: "main".to_string(),
            vars: Vec::new(),
            max_static_id: 0,
        }
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn instruction_count(&self) -> usize {
        self.functions.iter().map(|f| f.body.len()).sum()
    }

    /// All instructions in textual order, paired with their function name.
    pub fn iter_instructions(&self) -> impl Iterator<Item = (&str, &Instruction)> {
        self.functions
            .iter()
            .flat_map(|f| f.body.iter().map(move |i| (f.name.as_str(), i)))
    }

    /// True once the instrumentation pass has run (markers present).
    pub fn is_instrumented(&self) -> bool {
        self.iter_instructions()
            .any(|(_, i)| matches!(i.kind, InstrKind::Marker(_)))
    }
}

/// Assigns identifiers to id-bearing instructions that lack one.
///
/// Each instruction's candidate identifier is its 1-based position in
/// textual order, so in a listing with one instruction per line the
/// identifiers equal the line numbers. Instructions pinned via
/// `// identifier: N` comments keep their value. Records the maximum
/// assigned identifier in `program.max_static_id`.
pub fn assign_identifiers(program: &mut Program) -> Result<(), MirError> {
    let mut used: BTreeSet<u16> = BTreeSet::new();
    for (_, instr) in program.iter_instructions() {
        if let Some(id) = instr.id {
            if id.0 == 0 {
                return Err(MirError::ReservedIdentifier);
            }
            if !used.insert(id.0) {
                return Err(MirError::DuplicateIdentifier(id.0));
            }
        }
    }

    let mut position: u64 = 0;
    let mut max_id: u16 = used.iter().copied().max().unwrap_or(0);
    for func in &mut program.functions {
        for instr in &mut func.body {
            position += 1;
            let bears = matches!(
                instr.kind,
                InstrKind::Store { .. }
                    | InstrKind::Load { .. }
                    | InstrKind::LibCall { .. }
                    | InstrKind::Call { .. }
                    | InstrKind::Ret
            );
            if !bears || instr.id.is_some() {
                continue;
            }
            if position >= u64::from(u16::MAX) {
                return Err(MirError::IdentifierSpaceExhausted);
            }
            let mut candidate = position as u16;
            // A pinned id may occupy this position's number; slide forward.
            while used.contains(&candidate) {
                candidate = candidate
                    .checked_add(1)
                    .ok_or(MirError::IdentifierSpaceExhausted)?;
            }
            used.insert(candidate);
            instr.id = Some(InstructionId(candidate));
            max_id = max_id.max(candidate);
        }
    }
    program.max_static_id = max_id;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const FIG2_LISTING: &str = "\
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
    fn line_numbers_become_identifiers() {
        let mut p = parse_program(FIG2_LISTING).unwrap();
        assign_identifiers(&mut p).unwrap();
        let ids: Vec<Option<u16>> = p.functions[0]
            .body
            .iter()
            .map(|i| i.id.map(|x| x.0))
            .collect();
        assert_eq!(
            ids,
            vec![
                Some(1),
                Some(2),
                None,
                None,
                Some(5),
                Some(6),
                None,
                Some(8)
            ]
        );
        assert_eq!(p.max_static_id, 8);
    }

    #[test]
    fn empty_program_keeps_zero_max_id() {
        let mut p = parse_program("").unwrap();
        assign_identifiers(&mut p).unwrap();
        assert_eq!(p.instruction_count(), 0);
        assert_eq!(p.max_static_id, 0);
    }

    #[test]
    fn assignment_is_deterministic() {
        let text = "store r1 a\nload r2 a\ncall f\nret\nfunc f:\nret\n";
        let mut p1 = parse_program(text).unwrap();
        let mut p2 = parse_program(text).unwrap();
        assign_identifiers(&mut p1).unwrap();
        assign_identifiers(&mut p2).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn pinned_identifiers_are_respected() {
        let text = "store r1 a // identifier: 7\nload r2 a\n";
        let mut p = parse_program(text).unwrap();
        assign_identifiers(&mut p).unwrap();
        assert_eq!(p.functions[0].body[0].id, Some(InstructionId(7)));
        assert_eq!(p.functions[0].body[1].id, Some(InstructionId(2)));
        assert_eq!(p.max_static_id, 7);
    }

    #[test]
    fn duplicate_pinned_identifier_rejected() {
        let text = "store r1 a // identifier: 3\nload r2 a // identifier: 3\n";
        let mut p = parse_program(text).unwrap();
        assert!(matches!(
            assign_identifiers(&mut p),
            Err(MirError::DuplicateIdentifier(3))
        ));
    }
}
