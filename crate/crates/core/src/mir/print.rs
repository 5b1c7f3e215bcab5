//! Canonical text form. `parse_program(print_program(p)) == p` for any
//! valid program, including instrumented ones.

use std::fmt::Write;

use super::{
    AddrOperand, AluOp, BranchCond, InstrKind, Instruction, MarkerKind, Operand, Program,
};

fn write_operand(out: &mut String, op: &Operand) {
    match op {
        Operand::Lit(v) => {
            let _ = write!(out, "{v}");
        }
        Operand::Reg(r) => out.push_str(r),
        Operand::AddrOf(s) => {
            let _ = write!(out, "&{s}");
        }
    }
}

fn write_addr(out: &mut String, addr: &AddrOperand) {
    match addr {
        AddrOperand::Abs(a) => {
            let _ = write!(out, "{a}");
        }
        AddrOperand::Sym(s) => out.push_str(s),
        AddrOperand::Reg(r) => out.push_str(r),
    }
}

fn write_instruction(out: &mut String, instr: &Instruction) {
    match &instr.kind {
        InstrKind::Store { src, addr } => {
            out.push_str("store ");
            // Instrumentation words render as hex for readability.
            match (src, addr) {
                (Operand::Lit(v), AddrOperand::Sym(s)) if s == "dfi_global" => {
                    let _ = write!(out, "0x{v:08X}");
                }
                _ => write_operand(out, src),
            }
            out.push(' ');
            write_addr(out, addr);
        }
        InstrKind::Load { dst, addr } => {
            let _ = write!(out, "load {dst} ");
            write_addr(out, addr);
        }
        InstrKind::LibCall { name, args } => {
            let _ = write!(out, "libcall {name}(");
            for (i, arg) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_operand(out, arg);
            }
            out.push(')');
        }
        InstrKind::Cmp { lhs, rhs } => {
            out.push_str("cmp ");
            write_operand(out, lhs);
            out.push(' ');
            write_operand(out, rhs);
        }
        InstrKind::Branch { cond, target } => {
            let mnemonic = match cond {
                BranchCond::NotEqual => "jne",
                BranchCond::Always => "jmp",
            };
            let _ = write!(out, "{mnemonic} {target}");
        }
        InstrKind::Call { func } => {
            let _ = write!(out, "call {func}");
        }
        InstrKind::Ret => out.push_str("ret"),
        InstrKind::Alu { op, dst, ops } => {
            let mnemonic = match op {
                AluOp::Add => "add",
                AluOp::Sub => "sub",
                AluOp::Mov => "mov",
            };
            let _ = write!(out, "{mnemonic} {dst}");
            for operand in ops {
                out.push(' ');
                write_operand(out, operand);
            }
        }
        InstrKind::Label(name) => {
            let _ = write!(out, "{name}:");
        }
        InstrKind::Marker(kind) => out.push_str(match kind {
            MarkerKind::FifoAlloc => "fifo_alloc",
            MarkerKind::RdsLoad => "rds_load",
        }),
    }
    if let Some(id) = instr.id {
        let _ = write!(out, " // identifier: {id}");
    }
    out.push('\n');
}

pub fn print_program(program: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "memory {}", program.memory_bytes);
    let _ = writeln!(out, "entry {}", program.entry);
    for var in &program.vars {
        let _ = writeln!(out, "var {} {}", var.name, var.size_bytes);
    }
    for func in &program.functions {
        out.push('\n');
        let _ = writeln!(out, "func {}:", func.name);
        for instr in &func.body {
            if !matches!(instr.kind, InstrKind::Label(_)) {
                out.push_str("    ");
            }
            write_instruction(&mut out, instr);
        }
    }
    out
}
