//! Deterministic data layout for the simulated 32-bit memory.
//!
//! User symbols are packed from the bottom in declaration/first-use order,
//! so an instrumented program and its uninstrumented twin place user data
//! at identical addresses. Return-address slots sit directly above the
//! user block (stack-like adjacency), then the instrumentation channel
//! word, and the packet FIFO region occupies the top of memory.

use std::collections::BTreeMap;

use crate::error::LayoutError;
use crate::mir::{AddrOperand, InstrKind, Operand, Program};

/// Base of the user data block. The first page-let is left unmapped so
/// that address 0 never aliases a symbol.
pub const USER_BASE: u32 = 0x10;

/// Name of the instrumentation channel symbol; stores to its address are
/// interpreted as enforcement messages.
pub const DFI_GLOBAL: &str = "dfi_global";
/// Name of the symbol whose address is the FIFO region base.
pub const PACKET_MEM: &str = "packet_mem_addr";
/// Prefix of per-function return-address slots.
pub const RET_SLOT_PREFIX: &str = "__ret_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent {
    pub addr: u32,
    pub size_bytes: u32,
}

impl Extent {
    pub fn end(&self) -> u32 {
        self.addr + self.size_bytes
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.addr && addr < self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    symbols: BTreeMap<String, Extent>,
    pub memory_bytes: u32,
    /// End of the user data block (exclusive).
    pub user_top: u32,
    /// FIFO region: [fifo_base, memory_bytes).
    pub fifo_base: u32,
    pub fifo_bytes: u32,
    pub dfi_global_addr: u32,
}

fn round_word(n: u32) -> u32 {
    (n + 3) & !3
}

/// Collects user symbol names in declaration order followed by first
/// textual use. Instrumentation names are excluded; they are placed by
/// the layout itself.
fn user_symbols(program: &Program) -> Vec<(String, u32)> {
    let mut order: Vec<(String, u32)> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let push = |name: &str, order: &mut Vec<(String, u32)>, seen: &mut BTreeMap<String, usize>| {
        if name == DFI_GLOBAL || name == PACKET_MEM || name.starts_with(RET_SLOT_PREFIX) {
            return;
        }
        if !seen.contains_key(name) {
            seen.insert(name.to_string(), order.len());
            order.push((name.to_string(), 4));
        }
    };
    for var in &program.vars {
        push(&var.name, &mut order, &mut seen);
        if let Some(slot) = seen.get(&var.name) {
            order[*slot].1 = round_word(var.size_bytes.max(1));
        }
    }
    let visit_operand = |op: &Operand, order: &mut Vec<(String, u32)>, seen: &mut BTreeMap<String, usize>| {
        if let Operand::AddrOf(s) = op {
            push(s, order, seen);
        }
    };
    for (_, instr) in program.iter_instructions() {
        match &instr.kind {
            InstrKind::Store { src, addr } => {
                visit_operand(src, &mut order, &mut seen);
                if let AddrOperand::Sym(s) = addr {
                    push(s, &mut order, &mut seen);
                }
            }
            InstrKind::Load { addr, .. } => {
                if let AddrOperand::Sym(s) = addr {
                    push(s, &mut order, &mut seen);
                }
            }
            InstrKind::LibCall { args, .. } => {
                for arg in args {
                    visit_operand(arg, &mut order, &mut seen);
                }
            }
            InstrKind::Cmp { lhs, rhs } => {
                visit_operand(lhs, &mut order, &mut seen);
                visit_operand(rhs, &mut order, &mut seen);
            }
            InstrKind::Alu { ops, .. } => {
                for op in ops {
                    visit_operand(op, &mut order, &mut seen);
                }
            }
            _ => {}
        }
    }
    order
}

impl Layout {
    /// Builds the full layout including return slots and the FIFO region
    /// sized for `fifo_capacity_records` 64-bit records.
    pub fn build(program: &Program, fifo_capacity_records: usize) -> Result<Layout, LayoutError> {
        let memory_bytes = program.memory_bytes;
        let fifo_bytes = (fifo_capacity_records as u64) * 8;

        let mut symbols = BTreeMap::new();
        let mut cursor = USER_BASE;
        for (name, size) in user_symbols(program) {
            symbols.insert(
                name,
                Extent {
                    addr: cursor,
                    size_bytes: size,
                },
            );
            cursor += size;
        }
        let user_top = cursor;

        for func in &program.functions {
            symbols.insert(
                format!("{RET_SLOT_PREFIX}{}", func.name),
                Extent {
                    addr: cursor,
                    size_bytes: 4,
                },
            );
            cursor += 4;
        }
        let dfi_global_addr = cursor;
        symbols.insert(
            DFI_GLOBAL.to_string(),
            Extent {
                addr: cursor,
                size_bytes: 4,
            },
        );
        cursor += 4;

        let needed = u64::from(cursor) + fifo_bytes;
        if needed > u64::from(memory_bytes) {
            return Err(LayoutError::MemoryTooSmall {
                memory_bytes,
                needed,
            });
        }
        let fifo_base = memory_bytes - fifo_bytes as u32;
        symbols.insert(
            PACKET_MEM.to_string(),
            Extent {
                addr: fifo_base,
                size_bytes: fifo_bytes as u32,
            },
        );

        Ok(Layout {
            symbols,
            memory_bytes,
            user_top,
            fifo_base,
            fifo_bytes: fifo_bytes as u32,
            dfi_global_addr,
        })
    }

    pub fn resolve(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).map(|e| e.addr)
    }

    pub fn extent(&self, name: &str) -> Option<Extent> {
        self.symbols.get(name).copied()
    }

    pub fn ret_slot(&self, func: &str) -> Option<u32> {
        self.resolve(&format!("{RET_SLOT_PREFIX}{func}"))
    }

    pub fn in_fifo_region(&self, addr: u32) -> bool {
        self.fifo_bytes > 0 && addr >= self.fifo_base
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::parse_program;

    #[test]
    fn user_addresses_do_not_depend_on_fifo_size() {
        let p = parse_program("var buf 16\nstore r1 buf\nload r2 other\nret\n").unwrap();
        let small = Layout::build(&p, 16).unwrap();
        let large = Layout::build(&p, 1024).unwrap();
        assert_eq!(small.resolve("buf"), large.resolve("buf"));
        assert_eq!(small.resolve("other"), large.resolve("other"));
        assert_eq!(small.resolve("buf"), Some(USER_BASE));
        assert_eq!(small.resolve("other"), Some(USER_BASE + 16));
    }

    #[test]
    fn ret_slots_sit_directly_above_user_data() {
        let p = parse_program("var buf 8\nstore r1 buf\nret\n").unwrap();
        let layout = Layout::build(&p, 16).unwrap();
        assert_eq!(layout.ret_slot("main"), Some(layout.user_top));
        assert!(layout.dfi_global_addr > layout.user_top);
        assert_eq!(layout.resolve(PACKET_MEM), Some(layout.fifo_base));
    }

    #[test]
    fn oversized_fifo_rejected() {
        let p = parse_program("memory 1024\nret\n").unwrap();
        assert!(Layout::build(&p, 4096).is_err());
    }
}
