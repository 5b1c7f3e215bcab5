//! Code instrumentation: overloads ordinary `store` instructions as
//! enforcement messages aimed at the collector hardware.
//!
//! Every ordinary store/load is followed by one DFI store whose 32-bit
//! data word encodes instruction type and identifier. Library calls are
//! preceded by a multi-store sequence carrying addresses and length.
//! Function entry and return are bracketed by sequences that protect the
//! return-address slot with a composite identifier above the static id
//! space.
//!
//! InfoWord bit layout:
//!   bits 15..0  identifier
//!   bit  16     instruction type (0 = write, 1 = read)
//!   bit  17     library: call stores data
//!   bit  18     library: 64-bit data length
//!   bit  19     library: call loads data
//!   bit  20     library indicator
//!   bit  21     function-return indicator

use crate::error::InstrError;
use crate::layout::{DFI_GLOBAL, PACKET_MEM, RET_SLOT_PREFIX};
use crate::mir::{
    AddrOperand, Function, InstrKind, Instruction, InstructionId, MarkerKind, Operand, Program,
};
use crate::rda::{library_effect, RdsMap};

/// Instruction type carried in packets and info words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum AccessKind {
    Store,
    Load,
}

impl AccessKind {
    pub fn bit(self) -> u32 {
        match self {
            AccessKind::Store => 0,
            AccessKind::Load => 1,
        }
    }

    pub fn from_bit(bit: u32) -> AccessKind {
        if bit & 1 == 0 {
            AccessKind::Store
        } else {
            AccessKind::Load
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InfoWord(pub u32);

/// Decoded shape of an info word. The three shapes are mutually
/// exclusive: plain words have bits 17..21 clear, library words set
/// bit 20, return words set bit 21.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoShape {
    Basic {
        kind: AccessKind,
        id: InstructionId,
    },
    Library {
        has_load: bool,
        has_store: bool,
        len64: bool,
        id: InstructionId,
    },
    Return {
        is_return: bool,
        id: InstructionId,
    },
}

pub fn encode_basic_info(kind: AccessKind, id: InstructionId) -> InfoWord {
    InfoWord((kind.bit() << 16) | u32::from(id.0))
}

pub fn encode_library_header(
    id: InstructionId,
    has_load: bool,
    has_store: bool,
    len64: bool,
) -> InfoWord {
    InfoWord(
        (1 << 20)
            | (u32::from(has_load) << 19)
            | (u32::from(len64) << 18)
            | (u32::from(has_store) << 17)
            | u32::from(id.0),
    )
}

/// Encodes a return-protection word. The composite identifier is
/// `base + thread_id`; callers pick a base above the static id space so
/// the checker can recognize return packets by value.
pub fn encode_return_info(
    base: u16,
    thread_id: u16,
    is_return: bool,
) -> Result<InfoWord, InstrError> {
    let composite = u32::from(base) + u32::from(thread_id);
    if composite > u32::from(u16::MAX) {
        return Err(InstrError::ReturnIdOverflow);
    }
    Ok(InfoWord(
        (1 << 21) | (u32::from(is_return) << 16) | composite,
    ))
}

/// Decodes an info word back into its shape; `None` when the indicator
/// bits are inconsistent or unused high bits are set.
pub fn decode_info(word: u32) -> Option<InfoShape> {
    if word >> 22 != 0 {
        return None;
    }
    let id = InstructionId((word & 0xFFFF) as u16);
    let type_bit = (word >> 16) & 1;
    let library = (word >> 20) & 1 == 1;
    let ret = (word >> 21) & 1 == 1;
    if ret {
        if library || (word >> 17) & 0x7 != 0 {
            return None;
        }
        return Some(InfoShape::Return {
            is_return: type_bit == 1,
            id,
        });
    }
    if library {
        let has_load = (word >> 19) & 1 == 1;
        let len64 = (word >> 18) & 1 == 1;
        let has_store = (word >> 17) & 1 == 1;
        if type_bit != 0 || (!has_load && !has_store) {
            return None;
        }
        return Some(InfoShape::Library {
            has_load,
            has_store,
            len64,
            id,
        });
    }
    if (word >> 17) & 0x7 != 0 {
        return None;
    }
    Some(InfoShape::Basic {
        kind: AccessKind::from_bit(type_bit),
        id,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentationConfig {
    /// Signature value whose first store designates the channel address.
    pub dfi_dummy: u32,
    /// Signature value whose first store designates the FIFO base.
    pub packet_dummy: u32,
    pub thread_id: u16,
}

impl Default for InstrumentationConfig {
    fn default() -> Self {
        InstrumentationConfig {
            dfi_dummy: 0x0DF1_D0D0,
            packet_dummy: 0x0DF1_F1F0,
            thread_id: 0,
        }
    }
}

fn dfi_store(info: InfoWord) -> Instruction {
    Instruction::new(InstrKind::Store {
        src: Operand::Lit(u64::from(info.0)),
        addr: AddrOperand::Sym(DFI_GLOBAL.to_string()),
    })
}

fn dfi_store_operand(value: Operand) -> Instruction {
    Instruction::new(InstrKind::Store {
        src: value,
        addr: AddrOperand::Sym(DFI_GLOBAL.to_string()),
    })
}

/// The composite identifier base used for return protection: one above
/// the largest static identifier.
pub fn return_id_base(max_static_id: u16) -> u16 {
    max_static_id.saturating_add(1)
}

fn library_sequence(
    id: InstructionId,
    name: &str,
    args: &[Operand],
) -> Result<Vec<Instruction>, InstrError> {
    let effect = library_effect(name);
    if !effect.known {
        return Err(InstrError::UnknownLibrary(name.to_string()));
    }
    let arity = 1 + effect.len_arg.max(effect.load_arg).max(effect.store_arg);
    if args.len() != arity {
        return Err(InstrError::LibraryArity(name.to_string()));
    }
    let len = &args[effect.len_arg];
    let (len64, len_lo, len_hi) = match len {
        Operand::Lit(n) => (
            *n > u64::from(u32::MAX),
            Operand::Lit(n & 0xFFFF_FFFF),
            Operand::Lit(n >> 32),
        ),
        other => (false, other.clone(), Operand::Lit(0)),
    };
    let header = encode_library_header(id, effect.loads, effect.stores, len64);
    let mut out = vec![dfi_store(header)];
    if effect.loads {
        out.push(dfi_store_operand(args[effect.load_arg].clone()));
    }
    if effect.stores {
        out.push(dfi_store_operand(args[effect.store_arg].clone()));
    }
    out.push(dfi_store_operand(len_lo));
    if len64 {
        out.push(dfi_store_operand(len_hi));
    }
    Ok(out)
}

/// Runs the instrumentation pass. The reaching-definition map is handed
/// to the checker out of band; here it only pins the identifier space the
/// composite return identifier must clear.
pub fn instrument(
    program: &Program,
    rds: &RdsMap,
    cfg: &InstrumentationConfig,
) -> Result<Program, InstrError> {
    for (_, instr) in program.iter_instructions() {
        if matches!(instr.kind, InstrKind::Marker(_)) {
            return Err(InstrError::AlreadyInstrumented);
        }
        if let InstrKind::Store { addr, .. } | InstrKind::Load { addr, .. } = &instr.kind {
            if matches!(addr, AddrOperand::Sym(s) if s == DFI_GLOBAL || s == PACKET_MEM) {
                return Err(InstrError::AlreadyInstrumented);
            }
        }
        if instr.bears_id() && instr.id.is_none() {
            return Err(InstrError::IdentifiersNotAssigned);
        }
    }

    let base = return_id_base(rds.max_static_id.max(program.max_static_id));
    let call_info = encode_return_info(base, cfg.thread_id, false)?;
    let ret_info = encode_return_info(base, cfg.thread_id, true)?;

    let mut out = program.clone();
    out.functions = Vec::new();

    let prologue = |body: &mut Vec<Instruction>| {
        body.push(Instruction::new(InstrKind::Marker(MarkerKind::FifoAlloc)));
        body.push(Instruction::new(InstrKind::Marker(MarkerKind::RdsLoad)));
        body.push(Instruction::new(InstrKind::Store {
            src: Operand::Lit(u64::from(cfg.dfi_dummy)),
            addr: AddrOperand::Sym(DFI_GLOBAL.to_string()),
        }));
        body.push(Instruction::new(InstrKind::Store {
            src: Operand::Lit(u64::from(cfg.packet_dummy)),
            addr: AddrOperand::Sym(PACKET_MEM.to_string()),
        }));
    };

    if program.functions.is_empty() {
        let mut body = Vec::new();
        prologue(&mut body);
        out.functions.push(Function {
            name: out.entry.clone(),
            body,
        });
        return Ok(out);
    }

    for func in &program.functions {
        let ret_slot = Operand::AddrOf(format!("{RET_SLOT_PREFIX}{}", func.name));
        let mut body = Vec::new();
        if func.name == program.entry {
            prologue(&mut body);
        }
        if !func.body.is_empty() {
            // Announce the implicit store of the return address.
            body.push(dfi_store(call_info));
            body.push(dfi_store_operand(ret_slot.clone()));
        }
        for instr in &func.body {
            match &instr.kind {
                InstrKind::Store { .. } => {
                    let id = instr.id.expect("checked above");
                    body.push(instr.clone());
                    body.push(dfi_store(encode_basic_info(AccessKind::Store, id)));
                }
                InstrKind::Load { .. } => {
                    let id = instr.id.expect("checked above");
                    body.push(instr.clone());
                    body.push(dfi_store(encode_basic_info(AccessKind::Load, id)));
                }
                InstrKind::LibCall { name, args } => {
                    let id = instr.id.expect("checked above");
                    body.extend(library_sequence(id, name, args)?);
                    body.push(instr.clone());
                }
                InstrKind::Ret => {
                    // Announce the implicit load of the return address.
                    body.push(dfi_store(ret_info));
                    body.push(dfi_store_operand(ret_slot.clone()));
                    body.push(instr.clone());
                }
                _ => body.push(instr.clone()),
            }
        }
        out.functions.push(Function {
            name: func.name.clone(),
            body,
        });
    }
    Ok(out)
}
