//! Deterministic interpreter for mini-IR programs, standing in for the
//! main processor. Every executed memory instruction is offered to an
//! `ExecSink`, which models either the info-collector or the synchronous
//! reference checker.

use std::collections::HashMap;

use crate::error::ExecError;
use crate::layout::Layout;
use crate::mir::{AddrOperand, AluOp, BranchCond, InstrKind, Instruction, Operand, Program};
use crate::rda::library_effect;

/// Resolved library-call event: concrete addresses and byte length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LibcallEvent {
    pub name: String,
    pub id: Option<u16>,
    pub load_addr: Option<u32>,
    pub store_addr: Option<u32>,
    pub len_bytes: u64,
}

/// Receives execution events in program order.
pub trait ExecSink {
    /// An executed store instruction. Returns whether the value commits
    /// to memory (the collector consumes DFI stores and blocks stores
    /// into the FIFO region).
    fn on_store(&mut self, addr: u32, value: u32, instr: &Instruction) -> Result<bool, ExecError>;
    fn on_load(&mut self, addr: u32, value: u32, instr: &Instruction) -> Result<(), ExecError>;
    fn on_libcall(&mut self, event: &LibcallEvent) -> Result<(), ExecError>;
    /// Word traffic performed inside a library function.
    fn on_lib_access(&mut self, is_store: bool, addr: u32, value: u32) -> Result<(), ExecError> {
        let _ = (is_store, addr, value);
        Ok(())
    }
    /// Implicit store of the return address when a function is entered.
    fn on_function_entry(&mut self, func: &str, ret_slot: u32) -> Result<(), ExecError> {
        let _ = (func, ret_slot);
        Ok(())
    }
    /// Implicit load of the return address at an explicit `ret`.
    fn on_function_ret(&mut self, func: &str, ret_slot: u32) -> Result<(), ExecError> {
        let _ = (func, ret_slot);
        Ok(())
    }
}

/// Ignores everything and commits all stores; runs uninstrumented
/// programs for semantic comparisons.
pub struct NullSink;

impl ExecSink for NullSink {
    fn on_store(&mut self, _: u32, _: u32, _: &Instruction) -> Result<bool, ExecError> {
        Ok(true)
    }
    fn on_load(&mut self, _: u32, _: u32, _: &Instruction) -> Result<(), ExecError> {
        Ok(())
    }
    fn on_libcall(&mut self, _: &LibcallEvent) -> Result<(), ExecError> {
        Ok(())
    }
}

/// Register overwrite injected at a chosen execution point. The point is
/// counted in completed id-bearing accesses so that instrumented and
/// plain runs of the same program line up exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutation {
    pub after_access: u64,
    pub reg: String,
    pub value: u64,
}

pub const DEFAULT_STEP_LIMIT: u64 = 1_000_000;

#[derive(Debug)]
pub struct Machine<'p> {
    program: &'p Program,
    pub layout: Layout,
    pub regs: HashMap<String, u64>,
    pub mem: Vec<u8>,
    eq_flag: bool,
    steps: u64,
    accesses: u64,
    step_limit: u64,
}

struct Frame {
    func: usize,
    pc: usize,
}

impl<'p> Machine<'p> {
    pub fn new(program: &'p Program, layout: Layout, step_limit: u64) -> Machine<'p> {
        let mem = vec![0u8; program.memory_bytes as usize];
        Machine {
            program,
            layout,
            regs: HashMap::new(),
            mem,
            eq_flag: false,
            steps: 0,
            accesses: 0,
            step_limit,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn reg(&self, name: &str) -> u64 {
        self.regs.get(name).copied().unwrap_or(0)
    }

    fn eval(&self, op: &Operand) -> Result<u64, ExecError> {
        Ok(match op {
            Operand::Lit(v) => *v,
            Operand::Reg(r) => self.reg(r),
            Operand::AddrOf(s) => {
                u64::from(self.layout.resolve(s).ok_or(ExecError::InvalidAccess {
                    addr: 0,
                    what: "unresolved symbol",
                })?)
            }
        })
    }

    fn eval_addr(&self, op: &AddrOperand) -> Result<u32, ExecError> {
        Ok(match op {
            AddrOperand::Abs(a) => *a,
            AddrOperand::Sym(s) => self.layout.resolve(s).ok_or(ExecError::InvalidAccess {
                addr: 0,
                what: "unresolved symbol",
            })?,
            AddrOperand::Reg(r) => self.reg(r) as u32,
        })
    }

    fn read_word(&self, addr: u32) -> Result<u32, ExecError> {
        let base = (addr & !3) as usize;
        if base + 4 > self.mem.len() {
            return Err(ExecError::InvalidAccess {
                addr,
                what: "load out of bounds",
            });
        }
        Ok(u32::from_le_bytes(
            self.mem[base..base + 4].try_into().unwrap(),
        ))
    }

    fn write_word(&mut self, addr: u32, value: u32) -> Result<(), ExecError> {
        let base = (addr & !3) as usize;
        if base + 4 > self.mem.len() {
            return Err(ExecError::InvalidAccess {
                addr,
                what: "store out of bounds",
            });
        }
        self.mem[base..base + 4].copy_from_slice(&value.to_le_bytes());
        Ok(())
    }

    fn check_range(&self, addr: u32, len: u64, what: &'static str) -> Result<(), ExecError> {
        if u64::from(addr) + len > self.mem.len() as u64 {
            return Err(ExecError::InvalidAccess { addr, what });
        }
        Ok(())
    }

    /// Runs the program to completion under the step limit.
    pub fn run(
        &mut self,
        sink: &mut dyn ExecSink,
        mutation: Option<&Mutation>,
    ) -> Result<(), ExecError> {
        let program = self.program;
        let Some(entry_idx) = program
            .functions
            .iter()
            .position(|f| f.name == program.entry)
        else {
            return Ok(());
        };

        let label_maps: Vec<HashMap<&str, usize>> = program
            .functions
            .iter()
            .map(|f| {
                f.body
                    .iter()
                    .enumerate()
                    .filter_map(|(i, instr)| match &instr.kind {
                        InstrKind::Label(name) => Some((name.as_str(), i)),
                        _ => None,
                    })
                    .collect()
            })
            .collect();

        let mut frames = vec![Frame {
            func: entry_idx,
            pc: 0,
        }];
        if !program.functions[entry_idx].body.is_empty() {
            if let Some(slot) = self.layout.ret_slot(&program.entry) {
                sink.on_function_entry(&program.entry, slot)?;
            }
        }

        let mut mutation_fired = mutation.is_none();
        while let Some(frame) = frames.last_mut() {
            let func = &program.functions[frame.func];
            if frame.pc >= func.body.len() {
                // Fall off the end: implicit return without a ret check.
                frames.pop();
                continue;
            }
            let instr = &func.body[frame.pc];
            let func_idx = frame.func;
            frame.pc += 1;

            self.steps += 1;
            if self.steps > self.step_limit {
                return Err(ExecError::StepLimit(self.step_limit));
            }
            if !mutation_fired {
                let m = mutation.unwrap();
                if self.accesses >= m.after_access {
                    self.regs.insert(m.reg.clone(), m.value);
                    mutation_fired = true;
                }
            }
            if instr.id.is_some() {
                self.accesses += 1;
            }

            match &instr.kind {
                InstrKind::Store { src, addr } => {
                    let value = self.eval(src)? as u32;
                    let addr = self.eval_addr(addr)?;
                    if sink.on_store(addr, value, instr)? {
                        self.write_word(addr, value)?;
                    }
                }
                InstrKind::Load { dst, addr } => {
                    let addr = self.eval_addr(addr)?;
                    let value = self.read_word(addr)?;
                    sink.on_load(addr, value, instr)?;
                    self.regs.insert(dst.clone(), u64::from(value));
                }
                InstrKind::LibCall { name, args } => {
                    self.exec_libcall(name, args, instr, sink)?;
                }
                InstrKind::Cmp { lhs, rhs } => {
                    self.eq_flag = self.eval(lhs)? == self.eval(rhs)?;
                }
                InstrKind::Branch { cond, target } => {
                    let taken = match cond {
                        BranchCond::Always => true,
                        BranchCond::NotEqual => !self.eq_flag,
                    };
                    if taken {
                        let target_pc = label_maps[func_idx]
                            .get(target.as_str())
                            .copied()
                            .ok_or_else(|| ExecError::UnresolvedLabel(target.clone()))?;
                        frames.last_mut().unwrap().pc = target_pc;
                    }
                }
                InstrKind::Call { func: callee } => {
                    let callee_idx = program
                        .functions
                        .iter()
                        .position(|f| f.name == *callee)
                        .ok_or_else(|| ExecError::UndefinedFunction(callee.clone()))?;
                    frames.push(Frame {
                        func: callee_idx,
                        pc: 0,
                    });
                    if !program.functions[callee_idx].body.is_empty() {
                        if let Some(slot) = self.layout.ret_slot(callee) {
                            sink.on_function_entry(callee, slot)?;
                        }
                    }
                }
                InstrKind::Ret => {
                    if let Some(slot) = self.layout.ret_slot(&func.name) {
                        sink.on_function_ret(&func.name, slot)?;
                    }
                    frames.pop();
                }
                InstrKind::Alu { op, dst, ops } => {
                    let value = match op {
                        AluOp::Mov => self.eval(&ops[0])?,
                        AluOp::Add => self.eval(&ops[0])?.wrapping_add(self.eval(&ops[1])?),
                        AluOp::Sub => self.eval(&ops[0])?.wrapping_sub(self.eval(&ops[1])?),
                    };
                    self.regs.insert(dst.clone(), value);
                }
                InstrKind::Label(_) | InstrKind::Marker(_) => {}
            }
        }
        Ok(())
    }

    fn exec_libcall(
        &mut self,
        name: &str,
        args: &[Operand],
        instr: &Instruction,
        sink: &mut dyn ExecSink,
    ) -> Result<(), ExecError> {
        let effect = library_effect(name);
        if !effect.known {
            return Err(ExecError::UnknownLibrary(name.to_string()));
        }
        let arity = 1 + effect.len_arg.max(effect.load_arg).max(effect.store_arg);
        if args.len() != arity {
            return Err(ExecError::LibraryArity(name.to_string()));
        }
        let len_bytes = self.eval(&args[effect.len_arg])?;
        let load_addr = if effect.loads {
            Some(self.eval(&args[effect.load_arg])? as u32)
        } else {
            None
        };
        let store_addr = if effect.stores {
            Some(self.eval(&args[effect.store_arg])? as u32)
        } else {
            None
        };
        let event = LibcallEvent {
            name: name.to_string(),
            id: instr.id.map(|i| i.0),
            load_addr,
            store_addr,
            len_bytes,
        };
        sink.on_libcall(&event)?;

        // Concrete memory effect, observed word by word.
        match name {
            "memcpy" | "memmove" => {
                let src = load_addr.unwrap();
                let dst = store_addr.unwrap();
                self.check_range(src, len_bytes, "library read out of bounds")?;
                self.check_range(dst, len_bytes, "library write out of bounds")?;
                let bytes: Vec<u8> =
                    self.mem[src as usize..(u64::from(src) + len_bytes) as usize].to_vec();
                self.emit_word_traffic(sink, false, src, len_bytes)?;
                self.mem[dst as usize..(u64::from(dst) + len_bytes) as usize]
                    .copy_from_slice(&bytes);
                self.emit_word_traffic(sink, true, dst, len_bytes)?;
            }
            "memset" => {
                let dst = store_addr.unwrap();
                let fill = self.eval(&args[1])? as u8;
                self.check_range(dst, len_bytes, "library write out of bounds")?;
                for b in &mut self.mem[dst as usize..(u64::from(dst) + len_bytes) as usize] {
                    *b = fill;
                }
                self.emit_word_traffic(sink, true, dst, len_bytes)?;
            }
            "send" => {
                let src = load_addr.unwrap();
                self.check_range(src, len_bytes, "library read out of bounds")?;
                self.emit_word_traffic(sink, false, src, len_bytes)?;
            }
            "recv" => {
                let dst = store_addr.unwrap();
                self.check_range(dst, len_bytes, "library write out of bounds")?;
                for b in &mut self.mem[dst as usize..(u64::from(dst) + len_bytes) as usize] {
                    *b = 0;
                }
                self.emit_word_traffic(sink, true, dst, len_bytes)?;
            }
            _ => unreachable!("effect table covers known names"),
        }
        Ok(())
    }

    fn emit_word_traffic(
        &mut self,
        sink: &mut dyn ExecSink,
        is_store: bool,
        addr: u32,
        len_bytes: u64,
    ) -> Result<(), ExecError> {
        for k in 0..len_bytes.div_ceil(4) {
            let a = addr + (k * 4) as u32;
            if ((a & !3) as usize) + 4 > self.mem.len() {
                break;
            }
            let value = self.read_word(a & !3)?;
            sink.on_lib_access(is_store, a, value)?;
        }
        Ok(())
    }
}
