//! Text-format parser.
//!
//! One instruction per line. `//` starts a comment; a trailing
//! `// identifier: N` comment pins the instruction's identifier.
//! Directives (`memory`, `entry`, `var`) may appear before any code.
//! Instructions before the first `func name:` header form an implicit
//! `main` function.
//!
//! Operand conventions: `r<n>`/`x<n>` name registers, other bare
//! identifiers name data symbols. In value position a bare symbol (or
//! `&sym`) denotes the symbol's address constant; in address position it
//! denotes the symbol itself. `libcall` arguments treat every identifier
//! except `r<n>` as a symbol, mirroring the C-style listings the format
//! is modeled on.

use std::collections::BTreeSet;

use thiserror::Error;

use super::{
    AddrOperand, AluOp, BranchCond, Function, InstrKind, Instruction, InstructionId, MarkerKind,
    Operand, Program, VarDecl, DEFAULT_MEMORY_BYTES,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: duplicate label `{name}`")]
    DuplicateLabel { line: usize, name: String },
    #[error("unresolved label `{name}` in function `{func}`")]
    UnresolvedLabel { name: String, func: String },
    #[error("line {line}: duplicate function `{name}`")]
    DuplicateFunction { line: usize, name: String },
    #[error("memory size {0} is not a multiple of 4")]
    MisalignedMemory(u32),
    #[error("entry function `{0}` is not defined")]
    MissingEntry(String),
}

fn err(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        msg: msg.into(),
    }
}

fn is_register_name(token: &str) -> bool {
    let mut chars = token.chars();
    matches!(chars.next(), Some('r') | Some('x'))
        && token.len() > 1
        && chars.all(|c| c.is_ascii_digit())
}

fn is_identifier(token: &str) -> bool {
    !token.is_empty()
        && token
            .chars()
            .next()
            .map(|c| c.is_ascii_alphabetic() || c == '_')
            .unwrap_or(false)
        && token.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses integer constant expressions: hex/decimal literals combined
/// with `+`, `-` and parenthesized `<<`, e.g. `(9<<32)+12`.
fn parse_const_expr(s: &str) -> Option<u64> {
    let bytes: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
    let mut pos = 0usize;
    let value = parse_sum(&bytes, &mut pos)?;
    if pos == bytes.len() {
        Some(value)
    } else {
        None
    }
}

fn parse_sum(chars: &[char], pos: &mut usize) -> Option<u64> {
    let mut acc = parse_shift(chars, pos)?;
    while *pos < chars.len() {
        match chars[*pos] {
            '+' => {
                *pos += 1;
                acc = acc.wrapping_add(parse_shift(chars, pos)?);
            }
            '-' => {
                *pos += 1;
                acc = acc.wrapping_sub(parse_shift(chars, pos)?);
            }
            _ => break,
        }
    }
    Some(acc)
}

fn parse_shift(chars: &[char], pos: &mut usize) -> Option<u64> {
    let mut acc = parse_primary(chars, pos)?;
    while *pos + 1 < chars.len() && chars[*pos] == '<' && chars[*pos + 1] == '<' {
        *pos += 2;
        let amount = parse_primary(chars, pos)?;
        acc = acc.wrapping_shl(amount as u32);
    }
    Some(acc)
}

fn parse_primary(chars: &[char], pos: &mut usize) -> Option<u64> {
    if *pos < chars.len() && chars[*pos] == '(' {
        *pos += 1;
        let inner = parse_sum(chars, pos)?;
        if *pos < chars.len() && chars[*pos] == ')' {
            *pos += 1;
            return Some(inner);
        }
        return None;
    }
    let start = *pos;
    if chars.get(*pos) == Some(&'0') && matches!(chars.get(*pos + 1), Some('x') | Some('X')) {
        *pos += 2;
        let digits_start = *pos;
        while *pos < chars.len() && chars[*pos].is_ascii_hexdigit() {
            *pos += 1;
        }
        if *pos == digits_start {
            return None;
        }
        let text: String = chars[digits_start..*pos].iter().collect();
        return u64::from_str_radix(&text, 16).ok();
    }
    while *pos < chars.len() && chars[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return None;
    }
    let text: String = chars[start..*pos].iter().collect();
    text.parse().ok()
}

fn looks_numeric(token: &str) -> bool {
    token
        .chars()
        .next()
        .map(|c| c.is_ascii_digit() || c == '(')
        .unwrap_or(false)
}

fn parse_value_operand(token: &str, line: usize) -> Result<Operand, ParseError> {
    if looks_numeric(token) {
        return parse_const_expr(token)
            .map(Operand::Lit)
            .ok_or_else(|| err(line, format!("bad integer expression `{token}`")));
    }
    if let Some(sym) = token.strip_prefix('&') {
        if !is_identifier(sym) {
            return Err(err(line, format!("bad symbol reference `{token}`")));
        }
        return Ok(Operand::AddrOf(sym.to_string()));
    }
    if is_register_name(token) {
        return Ok(Operand::Reg(token.to_string()));
    }
    if is_identifier(token) {
        return Ok(Operand::AddrOf(token.to_string()));
    }
    Err(err(line, format!("bad operand `{token}`")))
}

fn parse_addr_operand(token: &str, line: usize) -> Result<AddrOperand, ParseError> {
    if looks_numeric(token) {
        let value = parse_const_expr(token)
            .ok_or_else(|| err(line, format!("bad address expression `{token}`")))?;
        let addr = u32::try_from(value)
            .map_err(|_| err(line, format!("address `{token}` exceeds 32 bits")))?;
        return Ok(AddrOperand::Abs(addr));
    }
    if let Some(sym) = token.strip_prefix('&') {
        if !is_identifier(sym) {
            return Err(err(line, format!("bad symbol reference `{token}`")));
        }
        return Ok(AddrOperand::Sym(sym.to_string()));
    }
    if is_register_name(token) {
        return Ok(AddrOperand::Reg(token.to_string()));
    }
    if is_identifier(token) {
        return Ok(AddrOperand::Sym(token.to_string()));
    }
    Err(err(line, format!("bad address operand `{token}`")))
}

fn parse_libcall_arg(token: &str, line: usize) -> Result<Operand, ParseError> {
    if looks_numeric(token) {
        return parse_const_expr(token)
            .map(Operand::Lit)
            .ok_or_else(|| err(line, format!("bad integer expression `{token}`")));
    }
    let bare = token.strip_prefix('&').unwrap_or(token);
    if !is_identifier(bare) {
        return Err(err(line, format!("bad libcall argument `{token}`")));
    }
    // Only strict r-registers pass values; x1-style names are buffers here.
    if token == bare && bare.starts_with('r') && is_register_name(bare) {
        return Ok(Operand::Reg(bare.to_string()));
    }
    Ok(Operand::AddrOf(bare.to_string()))
}

fn parse_register(token: &str, line: usize) -> Result<String, ParseError> {
    if is_identifier(token) {
        Ok(token.to_string())
    } else {
        Err(err(line, format!("expected register, found `{token}`")))
    }
}

/// Splits an instruction line into mnemonic and operand tokens.
/// `libcall name(a, b)` is normalized to `["libcall", "name", "a", "b"]`.
fn tokenize(line_text: &str, line: usize) -> Result<Vec<String>, ParseError> {
    if let Some(open) = line_text.find('(') {
        let head = &line_text[..open];
        let mut tokens: Vec<String> = head.split_whitespace().map(str::to_string).collect();
        // Parenthesized const-exprs carry no commas at top level; treat a
        // parenthesis directly after a name as a call argument list.
        let is_call = tokens.first().map(|t| t == "libcall").unwrap_or(false);
        if is_call {
            let close = line_text
                .rfind(')')
                .ok_or_else(|| err(line, "missing `)`"))?;
            if tokens.len() != 2 {
                return Err(err(line, "expected `libcall name(args)`"));
            }
            let args = &line_text[open + 1..close];
            for raw in args.split(',') {
                let trimmed = raw.trim();
                if !trimmed.is_empty() {
                    tokens.push(trimmed.to_string());
                }
            }
            if line_text[close + 1..].split_whitespace().next().is_some() {
                return Err(err(line, "trailing tokens after `)`"));
            }
            return Ok(tokens);
        }
    }
    Ok(line_text.split_whitespace().map(str::to_string).collect())
}

struct PendingFunction {
    name: String,
    body: Vec<Instruction>,
    labels: BTreeSet<String>,
    header_line: usize,
}

impl PendingFunction {
    fn new(name: String, header_line: usize) -> Self {
        PendingFunction {
            name,
            body: Vec::new(),
            labels: BTreeSet::new(),
            header_line,
        }
    }
}

/// Parses mini-IR source text into a `Program`.
///
/// Does not assign identifiers; `assign_identifiers` does that, taking
/// values pinned by `// identifier: N` comments into account.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut memory_bytes: Option<u32> = None;
    let mut entry: Option<String> = None;
    let mut vars: Vec<VarDecl> = Vec::new();
    let mut declared: BTreeSet<String> = BTreeSet::new();
    let mut functions: Vec<Function> = Vec::new();
    let mut current: Option<PendingFunction> = None;
    let mut seen_code = false;

    let finish =
        |f: Option<PendingFunction>, out: &mut Vec<Function>| -> Result<(), ParseError> {
            if let Some(pending) = f {
                for instr in &pending.body {
                    if let InstrKind::Branch { target, .. } = &instr.kind {
                        if !pending.labels.contains(target) {
                            return Err(ParseError::UnresolvedLabel {
                                name: target.clone(),
                                func: pending.name.clone(),
                            });
                        }
                    }
                }
                if out.iter().any(|f| f.name == pending.name) {
                    return Err(ParseError::DuplicateFunction {
                        line: pending.header_line,
                        name: pending.name,
                    });
                }
                out.push(Function {
                    name: pending.name,
                    body: pending.body,
                });
            }
            Ok(())
        };

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let mut pinned_id: Option<u16> = None;
        let code = match raw_line.find("//") {
            Some(pos) => {
                let comment = raw_line[pos + 2..].trim();
                if let Some(rest) = comment.strip_prefix("identifier:") {
                    let value: u16 = rest
                        .trim()
                        .parse()
                        .map_err(|_| err(line, format!("bad identifier comment `{comment}`")))?;
                    pinned_id = Some(value);
                }
                &raw_line[..pos]
            }
            None => raw_line,
        };
        let code = code.trim();
        if code.is_empty() {
            continue;
        }

        // Directives are only legal before the first instruction.
        let first_word = code.split_whitespace().next().unwrap_or("");
        match first_word {
            "memory" | "entry" | "var" if !seen_code => {
                let tokens: Vec<&str> = code.split_whitespace().collect();
                match (first_word, tokens.as_slice()) {
                    ("memory", [_, n]) => {
                        let value = parse_const_expr(n)
                            .and_then(|v| u32::try_from(v).ok())
                            .ok_or_else(|| err(line, format!("bad memory size `{n}`")))?;
                        memory_bytes = Some(value);
                    }
                    ("entry", [_, name]) if is_identifier(name) => {
                        entry = Some(name.to_string());
                    }
                    ("var", [_, name, n]) if is_identifier(name) => {
                        let size = parse_const_expr(n)
                            .and_then(|v| u32::try_from(v).ok())
                            .filter(|v| *v > 0)
                            .ok_or_else(|| err(line, format!("bad var size `{n}`")))?;
                        if !declared.insert(name.to_string()) {
                            return Err(err(line, format!("duplicate var `{name}`")));
                        }
                        vars.push(VarDecl {
                            name: name.to_string(),
                            size_bytes: size,
                        });
                    }
                    _ => return Err(err(line, format!("bad directive `{code}`"))),
                }
                continue;
            }
            _ => {}
        }

        // Function header: `func name:`
        if let Some(rest) = code.strip_prefix("func ") {
            let name = rest
                .trim()
                .strip_suffix(':')
                .map(str::trim)
                .filter(|n| is_identifier(n))
                .ok_or_else(|| err(line, "expected `func name:`"))?;
            finish(current.take(), &mut functions)?;
            current = Some(PendingFunction::new(name.to_string(), line));
            seen_code = true;
            continue;
        }

        seen_code = true;
        let func = current.get_or_insert_with(|| PendingFunction::new("main".to_string(), line));

        // Bare `name:` is a label.
        if let Some(name) = code.strip_suffix(':') {
            let name = name.trim();
            if code.split_whitespace().count() == 1 && is_identifier(name) {
                if !func.labels.insert(name.to_string()) {
                    return Err(ParseError::DuplicateLabel {
                        line,
                        name: name.to_string(),
                    });
                }
                func.body
                    .push(Instruction::new(InstrKind::Label(name.to_string())));
                continue;
            }
        }

        let tokens = tokenize(code, line)?;
        let mnemonic = tokens[0].as_str();
        let rest = &tokens[1..];
        let kind = match mnemonic {
            "store" => match rest {
                [src, addr] => InstrKind::Store {
                    src: parse_value_operand(src, line)?,
                    addr: parse_addr_operand(addr, line)?,
                },
                _ => return Err(err(line, "expected `store src addr`")),
            },
            "load" => match rest {
                [dst, addr] => InstrKind::Load {
                    dst: parse_register(dst, line)?,
                    addr: parse_addr_operand(addr, line)?,
                },
                _ => return Err(err(line, "expected `load dst addr`")),
            },
            "libcall" => match rest {
                [name, args @ ..] if is_identifier(name) => InstrKind::LibCall {
                    name: name.to_string(),
                    args: args
                        .iter()
                        .map(|a| parse_libcall_arg(a, line))
                        .collect::<Result<_, _>>()?,
                },
                _ => return Err(err(line, "expected `libcall name(args)`")),
            },
            "cmp" => match rest {
                [a, b] => InstrKind::Cmp {
                    lhs: parse_value_operand(a, line)?,
                    rhs: parse_value_operand(b, line)?,
                },
                _ => return Err(err(line, "expected `cmp a b`")),
            },
            "jne" | "jmp" => match rest {
                [target] if is_identifier(target) => InstrKind::Branch {
                    cond: if mnemonic == "jne" {
                        BranchCond::NotEqual
                    } else {
                        BranchCond::Always
                    },
                    target: target.to_string(),
                },
                _ => return Err(err(line, format!("expected `{mnemonic} label`"))),
            },
            "call" => match rest {
                [name] if is_identifier(name) => InstrKind::Call {
                    func: name.to_string(),
                },
                _ => return Err(err(line, "expected `call function`")),
            },
            "ret" => match rest {
                [] => InstrKind::Ret,
                _ => return Err(err(line, "`ret` takes no operands")),
            },
            "add" | "sub" => match rest {
                [dst, a, b] => InstrKind::Alu {
                    op: if mnemonic == "add" {
                        AluOp::Add
                    } else {
                        AluOp::Sub
                    },
                    dst: parse_register(dst, line)?,
                    ops: vec![
                        parse_value_operand(a, line)?,
                        parse_value_operand(b, line)?,
                    ],
                },
                _ => return Err(err(line, format!("expected `{mnemonic} dst a b`"))),
            },
            "mov" => match rest {
                [dst, src] => InstrKind::Alu {
                    op: AluOp::Mov,
                    dst: parse_register(dst, line)?,
                    ops: vec![parse_value_operand(src, line)?],
                },
                _ => return Err(err(line, "expected `mov dst src`")),
            },
            "fifo_alloc" => InstrKind::Marker(MarkerKind::FifoAlloc),
            "rds_load" => InstrKind::Marker(MarkerKind::RdsLoad),
            other => return Err(err(line, format!("unknown instruction `{other}`"))),
        };

        let mut instr = Instruction::new(kind);
        if instr.bears_id() {
            instr.id = pinned_id.map(InstructionId);
        }
        func.body.push(instr);
    }

    finish(current.take(), &mut functions)?;

    let memory_bytes = memory_bytes.unwrap_or(DEFAULT_MEMORY_BYTES);
    if memory_bytes % 4 != 0 {
        return Err(ParseError::MisalignedMemory(memory_bytes));
    }

    let entry = match entry {
        Some(name) => name,
        None if functions.iter().any(|f| f.name == "main") => "main".to_string(),
        None => functions
            .first()
            .map(|f| f.name.clone())
            .unwrap_or_else(|| "main".to_string()),
    };
    if !functions.is_empty() && !functions.iter().any(|f| f.name == entry) {
        return Err(ParseError::MissingEntry(entry));
    }

    // Fully pinned programs (e.g. reparsed output) keep their id space.
    let max_static_id = functions
        .iter()
        .flat_map(|f| &f.body)
        .filter_map(|i| i.id)
        .map(|i| i.0)
        .max()
        .unwrap_or(0);

    Ok(Program {
        functions,
        memory_bytes,
        entry,
        vars,
        max_static_id,
    })
}
