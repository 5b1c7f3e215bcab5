//! Static reaching-definition analysis.
//!
//! Produces, for every load (and every loading library call), the set of
//! store identifiers that may be the most recent writer of the accessed
//! address on some execution path. The analysis is a forward may-dataflow
//! fixpoint over the control-flow graph, preceded by a flow-insensitive
//! register points-to pass that maps address registers to data symbols.
//! Function calls are inlined up to a fixed depth; deeper or recursive
//! calls degrade to a summary that touches unknown locations.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::SimError;
use crate::layout::{Layout, DFI_GLOBAL, PACKET_MEM};
use crate::mir::{
    AddrOperand, AluOp, Function, InstrKind, Instruction, InstructionId, Operand, Program,
};

const INLINE_DEPTH: usize = 4;
const MAX_OFFSETS_PER_SYMBOL: usize = 8;
const MAX_CONSTS: usize = 8;

/// Map from load identifier to its legal writer set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RdsMap {
    pub entries: BTreeMap<InstructionId, BTreeSet<InstructionId>>,
    pub max_static_id: u16,
}

impl RdsMap {
    pub fn rds(&self, id: InstructionId) -> Option<&BTreeSet<InstructionId>> {
        self.entries.get(&id)
    }

    /// Text table `loadId: {id, id, ...}`, one line per load.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for (load, set) in &self.entries {
            let ids: Vec<String> = set.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "{load}: {{{}}}", ids.join(", "));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Control-flow graph over a single function body.

pub const CFG_EXIT: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct CfgBlock {
    /// Instruction index range [start, end) within the function body.
    pub start: usize,
    pub end: usize,
    /// Successor block indices; `CFG_EXIT` marks the function exit.
    pub succs: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub blocks: Vec<CfgBlock>,
}

fn label_positions(body: &[Instruction]) -> HashMap<&str, usize> {
    body.iter()
        .enumerate()
        .filter_map(|(i, instr)| match &instr.kind {
            InstrKind::Label(name) => Some((name.as_str(), i)),
            _ => None,
        })
        .collect()
}

/// Splits a function body into basic blocks. `split_calls` additionally
/// terminates a block at every `call`, which the inliner relies on.
fn segment(body: &[Instruction], split_calls: bool) -> Vec<(usize, usize)> {
    if body.is_empty() {
        return Vec::new();
    }
    let mut leaders = BTreeSet::new();
    leaders.insert(0);
    let labels = label_positions(body);
    for (i, instr) in body.iter().enumerate() {
        match &instr.kind {
            InstrKind::Branch { target, .. } => {
                if let Some(&t) = labels.get(target.as_str()) {
                    leaders.insert(t);
                }
                if i + 1 < body.len() {
                    leaders.insert(i + 1);
                }
            }
            InstrKind::Ret => {
                if i + 1 < body.len() {
                    leaders.insert(i + 1);
                }
            }
            InstrKind::Call { .. } if split_calls => {
                if i + 1 < body.len() {
                    leaders.insert(i + 1);
                }
            }
            _ => {}
        }
    }
    let starts: Vec<usize> = leaders.into_iter().collect();
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| (s, starts.get(k + 1).copied().unwrap_or(body.len())))
        .collect()
}

/// Builds the basic-block graph of one function.
pub fn build_cfg(func: &Function) -> Cfg {
    let body = &func.body;
    let ranges = segment(body, false);
    let labels = label_positions(body);
    let block_of: HashMap<usize, usize> = ranges
        .iter()
        .enumerate()
        .map(|(b, &(s, _))| (s, b))
        .collect();
    let blocks = ranges
        .iter()
        .enumerate()
        .map(|(_b, &(start, end))| {
            let mut succs = Vec::new();
            let last = &body[end - 1];
            match &last.kind {
                InstrKind::Branch { cond, target } => {
                    let t = labels[target.as_str()];
                    succs.push(block_of[&t]);
                    if matches!(cond, crate::mir::BranchCond::NotEqual) {
                        succs.push(if end < body.len() {
                            block_of[&end]
                        } else {
                            CFG_EXIT
                        });
                    }
                }
                InstrKind::Ret => succs.push(CFG_EXIT),
                _ => succs.push(if end < body.len() {
                    block_of[&end]
                } else {
                    CFG_EXIT
                }),
            }
            CfgBlock {
                start,
                end,
                succs,
            }
        })
        .collect();
    Cfg { blocks }
}

// ---------------------------------------------------------------------------
// Register points-to lattice.

/// Abstract value a register may hold.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Val {
    Const(u64),
    /// Symbol base plus a known byte offset.
    SymOff(String, i64),
    /// Somewhere within the symbol's extent.
    SymAny(String),
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ValSet(BTreeSet<Val>);

impl ValSet {
    /// Absorbing insert: coarser elements already present swallow finer
    /// ones, which keeps the fixpoint monotone after widening.
    fn insert(&mut self, v: Val) -> bool {
        if self.0.contains(&Val::Unknown) {
            return false;
        }
        match &v {
            Val::Unknown => {
                self.0.clear();
                self.0.insert(Val::Unknown);
                return true;
            }
            Val::SymOff(s, _) if self.0.contains(&Val::SymAny(s.clone())) => return false,
            Val::SymAny(s) => {
                let sym = s.clone();
                self.0
                    .retain(|x| !matches!(x, Val::SymOff(t, _) if *t == sym));
            }
            _ => {}
        }
        let changed = self.0.insert(v);
        if changed {
            self.widen();
        }
        changed
    }

    fn merge_from(&mut self, other: &ValSet) -> bool {
        let mut changed = false;
        for v in &other.0 {
            if self.insert(v.clone()) {
                changed = true;
            }
        }
        changed
    }

    /// Keeps the lattice finite: too many offsets of one symbol collapse
    /// to SymAny, too many constants collapse to Unknown.
    fn widen(&mut self) {
        let mut per_sym: BTreeMap<String, usize> = BTreeMap::new();
        let mut consts = 0usize;
        for v in &self.0 {
            match v {
                Val::SymOff(s, _) => *per_sym.entry(s.clone()).or_default() += 1,
                Val::Const(_) => consts += 1,
                _ => {}
            }
        }
        for (sym, count) in per_sym {
            if count > MAX_OFFSETS_PER_SYMBOL {
                self.0.retain(|v| !matches!(v, Val::SymOff(s, _) if *s == sym));
                self.0.insert(Val::SymAny(sym));
            }
        }
        if consts > MAX_CONSTS {
            self.0.clear();
            self.0.insert(Val::Unknown);
        }
    }
}

fn combine(a: &Val, b: &Val, sub: bool) -> Val {
    match (a, b) {
        (Val::Const(x), Val::Const(y)) => {
            if sub {
                Val::Const(x.wrapping_sub(*y))
            } else {
                Val::Const(x.wrapping_add(*y))
            }
        }
        (Val::SymOff(s, o), Val::Const(c)) => {
            let delta = *c as i64;
            Val::SymOff(s.clone(), if sub { o - delta } else { o + delta })
        }
        (Val::Const(c), Val::SymOff(s, o)) if !sub => Val::SymOff(s.clone(), o + *c as i64),
        (Val::SymAny(s), Val::Const(_)) => Val::SymAny(s.clone()),
        (Val::Const(_), Val::SymAny(s)) if !sub => Val::SymAny(s.clone()),
        _ => Val::Unknown,
    }
}

// ---------------------------------------------------------------------------
// Inlined analysis graph.

#[derive(Debug, Clone)]
enum ANode {
    Real(Instruction),
    /// Unexpanded call: every store in the callee closure may write any
    /// location, every load may read any location.
    Havoc(FnSummary),
}

#[derive(Debug, Clone, Default)]
struct FnSummary {
    store_ids: BTreeSet<u16>,
    load_ids: BTreeSet<u16>,
    written_regs: BTreeSet<String>,
}

struct ABlock {
    nodes: Vec<ANode>,
    succs: Vec<usize>,
}

struct GraphBuilder<'p> {
    program: &'p Program,
    blocks: Vec<ABlock>,
    summaries: HashMap<String, FnSummary>,
}

impl<'p> GraphBuilder<'p> {
    fn summary(&mut self, name: &str) -> FnSummary {
        if let Some(s) = self.summaries.get(name) {
            return s.clone();
        }
        let mut acc = FnSummary::default();
        let mut stack = vec![name.to_string()];
        let mut seen = BTreeSet::new();
        while let Some(f) = stack.pop() {
            if !seen.insert(f.clone()) {
                continue;
            }
            let Some(func) = self.program.function(&f) else {
                continue;
            };
            for instr in &func.body {
                match &instr.kind {
                    InstrKind::Store { .. } => {
                        if let Some(id) = instr.id {
                            acc.store_ids.insert(id.0);
                        }
                    }
                    InstrKind::Load { dst, .. } => {
                        if let Some(id) = instr.id {
                            acc.load_ids.insert(id.0);
                        }
                        acc.written_regs.insert(dst.clone());
                    }
                    InstrKind::LibCall { name, .. } => {
                        if let Some(id) = instr.id {
                            let lib = library_effect(name);
                            if lib.stores {
                                acc.store_ids.insert(id.0);
                            }
                            if lib.loads {
                                acc.load_ids.insert(id.0);
                            }
                        }
                    }
                    InstrKind::Alu { dst, .. } => {
                        acc.written_regs.insert(dst.clone());
                    }
                    InstrKind::Call { func } => stack.push(func.clone()),
                    _ => {}
                }
            }
        }
        self.summaries.insert(name.to_string(), acc.clone());
        acc
    }

    /// Expands one function instance; returns (entry block, exit blocks).
    fn build_instance(&mut self, func: &Function, stack: &mut Vec<String>) -> (usize, Vec<usize>) {
        let body = &func.body;
        if body.is_empty() {
            let b = self.blocks.len();
            self.blocks.push(ABlock {
                nodes: Vec::new(),
                succs: Vec::new(),
            });
            return (b, vec![b]);
        }
        let ranges = segment(body, true);
        let labels = label_positions(body);
        let base = self.blocks.len();
        for _ in &ranges {
            self.blocks.push(ABlock {
                nodes: Vec::new(),
                succs: Vec::new(),
            });
        }
        let block_of = |start: usize| -> usize {
            base + ranges.iter().position(|&(s, _)| s == start).unwrap()
        };
        let mut exits = Vec::new();
        for (k, &(start, end)) in ranges.iter().enumerate() {
            let this = base + k;
            let mut nodes = Vec::new();
            let mut succs: Vec<usize> = Vec::new();
            let mut terminated = false;
            for (i, instr) in body[start..end].iter().enumerate() {
                let at = start + i;
                match &instr.kind {
                    InstrKind::Label(_) => {}
                    InstrKind::Branch { cond, target } => {
                        let t = labels[target.as_str()];
                        succs.push(block_of(t));
                        if matches!(cond, crate::mir::BranchCond::NotEqual) {
                            if at + 1 < body.len() {
                                succs.push(block_of(at + 1));
                            } else {
                                exits.push(this);
                            }
                        }
                        terminated = true;
                    }
                    InstrKind::Ret => {
                        exits.push(this);
                        terminated = true;
                    }
                    InstrKind::Call { func: callee } => {
                        let next = if at + 1 < body.len() {
                            Some(block_of(at + 1))
                        } else {
                            None
                        };
                        let expandable = stack.len() <= INLINE_DEPTH
                            && !stack.iter().any(|f| f == callee)
                            && self.program.function(callee).is_some();
                        if expandable {
                            stack.push(callee.clone());
                            let callee_fn = self.program.function(callee).unwrap().clone();
                            let (entry, callee_exits) = self.build_instance(&callee_fn, stack);
                            stack.pop();
                            succs.push(entry);
                            for e in callee_exits {
                                match next {
                                    Some(n) => self.blocks[e].succs.push(n),
                                    None => exits.push(e),
                                }
                            }
                        } else {
                            nodes.push(ANode::Havoc(self.summary(callee)));
                            match next {
                                Some(n) => succs.push(n),
                                None => exits.push(this),
                            }
                        }
                        terminated = true;
                    }
                    _ => nodes.push(ANode::Real(instr.clone())),
                }
            }
            if !terminated {
                if end < body.len() {
                    succs.push(block_of(end));
                } else {
                    exits.push(this);
                }
            }
            self.blocks[this].nodes = nodes;
            self.blocks[this].succs = succs;
        }
        (base, exits)
    }
}

// ---------------------------------------------------------------------------
// Address abstraction.

#[derive(Debug, Clone, PartialEq, Eq)]
enum WordSet {
    Top,
    Words(BTreeSet<u32>),
}

struct Resolver<'a> {
    layout: &'a Layout,
    pts: &'a HashMap<String, ValSet>,
}

impl Resolver<'_> {
    fn sym_base(&self, name: &str) -> Option<u32> {
        if name == PACKET_MEM || name == DFI_GLOBAL {
            // Runtime position of the channel and FIFO depends on the
            // pipeline configuration; treat as unknown.
            return None;
        }
        self.layout.resolve(name)
    }

    fn val_words(&self, v: &Val, out: &mut BTreeSet<u32>) -> bool {
        match v {
            Val::Const(c) => {
                out.insert((*c as u32) >> 2);
                true
            }
            Val::SymOff(s, o) => match self.sym_base(s) {
                Some(base) => {
                    let addr = (base as i64 + o) as u32;
                    out.insert(addr >> 2);
                    true
                }
                None => false,
            },
            Val::SymAny(s) => match self.layout.extent(s) {
                Some(e) if self.sym_base(s).is_some() => {
                    for w in (e.addr >> 2)..(e.end().div_ceil(4)) {
                        out.insert(w);
                    }
                    true
                }
                _ => false,
            },
            Val::Unknown => false,
        }
    }

    fn addr_words(&self, addr: &AddrOperand) -> WordSet {
        let mut words = BTreeSet::new();
        let exact = match addr {
            AddrOperand::Abs(a) => {
                words.insert(a >> 2);
                true
            }
            AddrOperand::Sym(s) => match self.sym_base(s) {
                Some(base) => {
                    words.insert(base >> 2);
                    true
                }
                None => false,
            },
            AddrOperand::Reg(r) => match self.pts.get(r) {
                Some(set) if !set.0.is_empty() => {
                    set.0.iter().all(|v| self.val_words(v, &mut words))
                }
                // Never-written register reads as zero.
                _ => {
                    words.insert(0);
                    true
                }
            },
        };
        if exact {
            WordSet::Words(words)
        } else {
            WordSet::Top
        }
    }

    /// Word range accessed by a library argument given a length operand.
    fn range_words(&self, base: &Operand, len: &Operand) -> WordSet {
        let len_words = match len {
            Operand::Lit(n) => Some(n.div_ceil(4)),
            _ => None,
        };
        let mut words = BTreeSet::new();
        let push_range = |start: u32, count: u64, words: &mut BTreeSet<u32>| {
            for k in 0..count.min(1 << 20) {
                words.insert((start >> 2) + k as u32);
            }
        };
        let exact = match (base, len_words) {
            (Operand::AddrOf(s), Some(n)) => match self.sym_base(s) {
                Some(b) => {
                    push_range(b, n, &mut words);
                    true
                }
                None => false,
            },
            (Operand::AddrOf(s), None) => match self.layout.extent(s) {
                Some(e) if self.sym_base(s).is_some() => {
                    push_range(e.addr, u64::from(e.size_bytes.div_ceil(4)), &mut words);
                    true
                }
                _ => false,
            },
            (Operand::Lit(a), Some(n)) => {
                push_range(*a as u32, n, &mut words);
                true
            }
            (Operand::Reg(r), n) => match self.pts.get(r) {
                Some(set) if !set.0.is_empty() => set.0.iter().all(|v| match (v, n) {
                    (Val::Const(c), Some(n)) => {
                        push_range(*c as u32, n, &mut words);
                        true
                    }
                    (Val::SymOff(s, o), Some(n)) => match self.sym_base(s) {
                        Some(b) => {
                            push_range((b as i64 + o) as u32, n, &mut words);
                            true
                        }
                        None => false,
                    },
                    (Val::SymOff(s, _) | Val::SymAny(s), _) => match self.layout.extent(s) {
                        Some(e) if self.sym_base(s).is_some() => {
                            push_range(e.addr, u64::from(e.size_bytes.div_ceil(4)), &mut words);
                            true
                        }
                        _ => false,
                    },
                    _ => false,
                }),
                _ => false,
            },
            _ => false,
        };
        if exact {
            WordSet::Words(words)
        } else {
            WordSet::Top
        }
    }
}

/// Which memory effects a library function has and where its operands sit.
/// Argument convention: `(store_arg?, load_arg?, len_arg)` indices.
pub struct LibraryEffect {
    pub loads: bool,
    pub stores: bool,
    pub load_arg: usize,
    pub store_arg: usize,
    pub len_arg: usize,
    pub known: bool,
}

/// Library model: memcpy/memmove copy, memset fills, send reads, recv
/// writes. Unknown names conservatively both load and store.
pub fn library_effect(name: &str) -> LibraryEffect {
    match name {
        "memcpy" | "memmove" => LibraryEffect {
            loads: true,
            stores: true,
            load_arg: 1,
            store_arg: 0,
            len_arg: 2,
            known: true,
        },
        "memset" => LibraryEffect {
            loads: false,
            stores: true,
            load_arg: 0,
            store_arg: 0,
            len_arg: 2,
            known: true,
        },
        "send" => LibraryEffect {
            loads: true,
            stores: false,
            load_arg: 0,
            store_arg: 0,
            len_arg: 1,
            known: true,
        },
        "recv" => LibraryEffect {
            loads: false,
            stores: true,
            load_arg: 0,
            store_arg: 0,
            len_arg: 1,
            known: true,
        },
        _ => LibraryEffect {
            loads: true,
            stores: true,
            load_arg: 0,
            store_arg: 0,
            len_arg: 0,
            known: false,
        },
    }
}

// ---------------------------------------------------------------------------
// Reaching-definitions dataflow.

type IdSet = BTreeSet<u16>;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct RdState {
    words: BTreeMap<u32, IdSet>,
    /// Writers of words not present in `words` (stores to unknown
    /// addresses reach everything).
    default: IdSet,
}

impl RdState {
    fn lookup(&self, w: u32) -> IdSet {
        self.words.get(&w).cloned().unwrap_or_else(|| self.default.clone())
    }

    fn join_from(&mut self, other: &RdState) -> bool {
        let mut changed = false;
        let keys: Vec<u32> = self
            .words
            .keys()
            .chain(other.words.keys())
            .copied()
            .collect();
        for w in keys {
            let mut merged = self.lookup(w);
            merged.extend(other.lookup(w).iter().copied());
            if self.words.get(&w) != Some(&merged) {
                self.words.insert(w, merged);
                changed = true;
            }
        }
        for id in &other.default {
            if self.default.insert(*id) {
                changed = true;
                for set in self.words.values_mut() {
                    set.insert(*id);
                }
            }
        }
        changed
    }

    fn gen_everywhere(&mut self, ids: &IdSet) {
        self.default.extend(ids.iter().copied());
        for set in self.words.values_mut() {
            set.extend(ids.iter().copied());
        }
    }

    fn store_strong(&mut self, w: u32, id: u16) {
        self.words.insert(w, IdSet::from([id]));
    }

    fn store_weak(&mut self, w: u32, id: u16) {
        let mut set = self.lookup(w);
        set.insert(id);
        self.words.insert(w, set);
    }
}

struct Analysis<'a> {
    resolver: Resolver<'a>,
    all_stores: IdSet,
}

impl Analysis<'_> {
    /// Applies one node's effect. When `rds` is given, loads record their
    /// observed writer sets into it.
    fn transfer(
        &self,
        node: &ANode,
        state: &mut RdState,
        rds: Option<&mut BTreeMap<InstructionId, BTreeSet<InstructionId>>>,
    ) {
        match node {
            ANode::Real(instr) => self.transfer_real(instr, state, rds),
            ANode::Havoc(summary) => {
                let ids: IdSet = summary.store_ids.iter().copied().collect();
                state.gen_everywhere(&ids);
                if let Some(rds) = rds {
                    for l in &summary.load_ids {
                        rds.entry(InstructionId(*l))
                            .or_default()
                            .extend(self.all_stores.iter().map(|i| InstructionId(*i)));
                    }
                }
            }
        }
    }

    fn transfer_real(
        &self,
        instr: &Instruction,
        state: &mut RdState,
        rds: Option<&mut BTreeMap<InstructionId, BTreeSet<InstructionId>>>,
    ) {
        match &instr.kind {
            InstrKind::Store { addr, .. } => {
                let Some(id) = instr.id else { return };
                match self.resolver.addr_words(addr) {
                    WordSet::Words(words) if words.len() == 1 => {
                        state.store_strong(*words.iter().next().unwrap(), id.0);
                    }
                    WordSet::Words(words) => {
                        for w in words {
                            state.store_weak(w, id.0);
                        }
                    }
                    WordSet::Top => state.gen_everywhere(&IdSet::from([id.0])),
                }
            }
            InstrKind::Load { addr, .. } => {
                let Some(id) = instr.id else { return };
                if let Some(rds) = rds {
                    let observed = match self.resolver.addr_words(addr) {
                        WordSet::Words(words) => {
                            let mut set = IdSet::new();
                            for w in words {
                                set.extend(state.lookup(w));
                            }
                            set
                        }
                        WordSet::Top => self.all_stores.clone(),
                    };
                    rds.entry(id)
                        .or_default()
                        .extend(observed.iter().map(|i| InstructionId(*i)));
                }
            }
            InstrKind::LibCall { name, args } => {
                let Some(id) = instr.id else { return };
                let effect = library_effect(name);
                let len = args.get(effect.len_arg).cloned().unwrap_or(Operand::Lit(0));
                if effect.loads {
                    if let Some(rds) = rds {
                        let range = match args.get(effect.load_arg) {
                            Some(base) if effect.known => self.resolver.range_words(base, &len),
                            _ => WordSet::Top,
                        };
                        let observed = match range {
                            WordSet::Words(words) => {
                                let mut set = IdSet::new();
                                for w in words {
                                    set.extend(state.lookup(w));
                                }
                                set
                            }
                            WordSet::Top => self.all_stores.clone(),
                        };
                        rds.entry(id)
                            .or_default()
                            .extend(observed.iter().map(|i| InstructionId(*i)));
                    }
                }
                if effect.stores {
                    let range = match args.get(effect.store_arg) {
                        Some(base) if effect.known => self.resolver.range_words(base, &len),
                        _ => WordSet::Top,
                    };
                    match range {
                        WordSet::Words(words) => {
                            for w in words {
                                state.store_weak(w, id.0);
                            }
                        }
                        WordSet::Top => state.gen_everywhere(&IdSet::from([id.0])),
                    }
                }
            }
            _ => {}
        }
    }
}

fn points_to(blocks: &[ABlock]) -> HashMap<String, ValSet> {
    let mut pts: HashMap<String, ValSet> = HashMap::new();
    let eval = |op: &Operand, pts: &HashMap<String, ValSet>| -> ValSet {
        let mut set = ValSet::default();
        match op {
            Operand::Lit(c) => {
                set.insert(Val::Const(*c));
            }
            Operand::AddrOf(s) => {
                set.insert(Val::SymOff(s.clone(), 0));
            }
            Operand::Reg(r) => {
                if let Some(existing) = pts.get(r) {
                    set = existing.clone();
                }
            }
        }
        set
    };
    loop {
        let mut changed = false;
        for block in blocks {
            for node in &block.nodes {
                match node {
                    ANode::Real(instr) => match &instr.kind {
                        InstrKind::Alu { op, dst, ops } => {
                            let result = match op {
                                AluOp::Mov => eval(&ops[0], &pts),
                                AluOp::Add | AluOp::Sub => {
                                    let a = eval(&ops[0], &pts);
                                    let b = eval(&ops[1], &pts);
                                    let mut out = ValSet::default();
                                    if a.0.is_empty() || b.0.is_empty() {
                                        out
                                    } else {
                                        for x in &a.0 {
                                            for y in &b.0 {
                                                out.insert(combine(
                                                    x,
                                                    y,
                                                    matches!(op, AluOp::Sub),
                                                ));
                                            }
                                        }
                                        out
                                    }
                                }
                            };
                            let entry = pts.entry(dst.clone()).or_default();
                            if entry.merge_from(&result) {
                                changed = true;
                            }
                        }
                        InstrKind::Load { dst, .. } => {
                            let entry = pts.entry(dst.clone()).or_default();
                            if entry.insert(Val::Unknown) {
                                changed = true;
                            }
                        }
                        _ => {}
                    },
                    ANode::Havoc(summary) => {
                        for r in &summary.written_regs {
                            let entry = pts.entry(r.clone()).or_default();
                            if entry.insert(Val::Unknown) {
                                changed = true;
                            }
                        }
                    }
                }
            }
        }
        if !changed {
            return pts;
        }
    }
}

/// Computes the reaching-definition set of every load in the program.
///
/// Requires identifiers to be assigned. Never fails on strange programs;
/// unknown addresses degrade to "all stores".
pub fn compute_rds(program: &Program) -> Result<RdsMap, SimError> {
    for (_, instr) in program.iter_instructions() {
        if instr.bears_id() && instr.id.is_none() {
            return Err(SimError::RdsRequiresIds);
        }
    }

    let layout = Layout::build(program, 0)?;
    let mut entries: BTreeMap<InstructionId, BTreeSet<InstructionId>> = BTreeMap::new();
    let mut all_stores: IdSet = IdSet::new();
    for (_, instr) in program.iter_instructions() {
        match &instr.kind {
            InstrKind::Store { .. } => {
                if let Some(id) = instr.id {
                    all_stores.insert(id.0);
                }
            }
            InstrKind::LibCall { name, .. } => {
                if let Some(id) = instr.id {
                    if library_effect(name).stores {
                        all_stores.insert(id.0);
                    }
                }
            }
            _ => {}
        }
        // Every load gets an entry even if no store reaches it.
        match &instr.kind {
            InstrKind::Load { .. } => {
                if let Some(id) = instr.id {
                    entries.entry(id).or_default();
                }
            }
            InstrKind::LibCall { name, .. } => {
                if let Some(id) = instr.id {
                    if library_effect(name).loads {
                        entries.entry(id).or_default();
                    }
                }
            }
            _ => {}
        }
    }

    let Some(entry_fn) = program.function(&program.entry).cloned() else {
        return Ok(RdsMap {
            entries,
            max_static_id: program.max_static_id,
        });
    };

    let mut builder = GraphBuilder {
        program,
        blocks: Vec::new(),
        summaries: HashMap::new(),
    };
    let mut stack = vec![program.entry.clone()];
    let (_entry_block, _exits) = builder.build_instance(&entry_fn, &mut stack);
    let blocks = builder.blocks;

    let pts = points_to(&blocks);
    let analysis = Analysis {
        resolver: Resolver {
            layout: &layout,
            pts: &pts,
        },
        all_stores,
    };

    let states = fixpoint(&blocks, &analysis);

    // Collection pass over the stable states.
    for (b, block) in blocks.iter().enumerate() {
        let mut state = states[b].clone();
        for node in &block.nodes {
            analysis.transfer(node, &mut state, Some(&mut entries));
        }
    }

    Ok(RdsMap {
        entries,
        max_static_id: program.max_static_id,
    })
}

/// Worklist iteration to a fixpoint; returns the IN state of each block.
/// Block 0 is the entry of the expanded graph.
fn fixpoint(blocks: &[ABlock], analysis: &Analysis<'_>) -> Vec<RdState> {
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); blocks.len()];
    for (b, block) in blocks.iter().enumerate() {
        for &s in &block.succs {
            if s != CFG_EXIT {
                preds[s].push(b);
            }
        }
    }
    let mut in_states: Vec<RdState> = vec![RdState::default(); blocks.len()];
    let mut out_states: Vec<RdState> = vec![RdState::default(); blocks.len()];
    let mut work: Vec<usize> = (0..blocks.len()).rev().collect();
    let mut on_work: Vec<bool> = vec![true; blocks.len()];
    while let Some(b) = work.pop() {
        on_work[b] = false;
        let mut input = RdState::default();
        for &p in &preds[b] {
            input.join_from(&out_states[p]);
        }
        let mut output = input.clone();
        for node in &blocks[b].nodes {
            analysis.transfer(node, &mut output, None);
        }
        in_states[b] = input;
        if output != out_states[b] {
            out_states[b] = output;
            for &s in &blocks[b].succs {
                if s != CFG_EXIT && !on_work[s] {
                    on_work[s] = true;
                    work.push(s);
                }
            }
        }
    }
    in_states
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::{assign_identifiers, parse_program};

    fn analyzed(text: &str) -> (Program, RdsMap) {
        let mut p = parse_program(text).unwrap();
        assign_identifiers(&mut p).unwrap();
        let rds = compute_rds(&p).unwrap();
        (p, rds)
    }

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
    fn fig2_rds_matches_hand_analysis() {
        let (_, rds) = analyzed(FIG2);
        let set6: Vec<u16> = rds.rds(InstructionId(6)).unwrap().iter().map(|i| i.0).collect();
        let set8: Vec<u16> = rds.rds(InstructionId(8)).unwrap().iter().map(|i| i.0).collect();
        assert_eq!(set6, vec![5]);
        assert_eq!(set8, vec![1, 5]);
    }

    #[test]
    fn straight_line_single_definition() {
        let (_, rds) = analyzed("store r1 a\nload r2 a\n");
        let set: Vec<u16> = rds.rds(InstructionId(2)).unwrap().iter().map(|i| i.0).collect();
        assert_eq!(set, vec![1]);
    }

    #[test]
    fn fig2_cfg_has_three_blocks() {
        let p = parse_program(FIG2).unwrap();
        let cfg = build_cfg(p.function("main").unwrap());
        assert_eq!(cfg.blocks.len(), 3);
    }

    #[test]
    fn straight_line_cfg_is_one_block() {
        let p = parse_program("store r1 a\nload r2 a\n").unwrap();
        let cfg = build_cfg(p.function("main").unwrap());
        assert_eq!(cfg.blocks.len(), 1);
    }

    #[test]
    fn self_loop_cfg_has_self_edge() {
        let p = parse_program("l:\njmp l\n").unwrap();
        let cfg = build_cfg(p.function("main").unwrap());
        assert_eq!(cfg.blocks.len(), 1);
        assert_eq!(cfg.blocks[0].succs, vec![0]);
    }

    #[test]
    fn pointer_walk_covers_whole_buffer() {
        let text = "\
var buf 12
mov r1 &buf
store r2 r1
add r1 r1 4
store r2 r1
load r3 buf
";
        let (_, rds) = analyzed(text);
        // Load of buf's base word can see both stores: the walking
        // register may hold offset 0 or 4.
        let set: Vec<u16> = rds.rds(InstructionId(5)).unwrap().iter().map(|i| i.0).collect();
        assert_eq!(set, vec![2, 4]);
    }

    #[test]
    fn loads_through_unknown_pointer_see_all_stores() {
        let text = "\
store r1 a
store r1 b
load r9 a
load r2 r9
";
        let (_, rds) = analyzed(text);
        let set: Vec<u16> = rds.rds(InstructionId(4)).unwrap().iter().map(|i| i.0).collect();
        assert_eq!(set, vec![1, 2]);
    }

    #[test]
    fn library_rds_covers_range() {
        let text = "\
var src 8
var dst 8
mov r1 &src
store r2 r1
add r1 r1 4
store r2 r1
libcall memcpy(dst, src, 8)
load r3 dst
";
        let (_, rds) = analyzed(text);
        let lib: Vec<u16> = rds.rds(InstructionId(5)).unwrap().iter().map(|i| i.0).collect();
        assert_eq!(lib, vec![2, 4]);
        // The load of dst sees the library store.
        let set: Vec<u16> = rds.rds(InstructionId(6)).unwrap().iter().map(|i| i.0).collect();
        assert_eq!(set, vec![5]);
    }

    #[test]
    fn calls_are_inlined() {
        let text = "\
store r1 a
call helper
load r2 a
ret
func helper:
store r1 a
ret
";
        let (_, rds) = analyzed(text);
        let set: Vec<u16> = rds.rds(InstructionId(3)).unwrap().iter().map(|i| i.0).collect();
        // Only the helper's store reaches: it overwrites the first one.
        assert_eq!(set, vec![5]);
    }

    #[test]
    fn recursion_degrades_conservatively() {
        let text = "\
store r1 a
call rec
load r2 a
ret
func rec:
store r3 b
call rec
ret
";
        let (_, rds) = analyzed(text);
        let set: Vec<u16> = rds.rds(InstructionId(3)).unwrap().iter().map(|i| i.0).collect();
        // The recursive callee's store may land anywhere.
        assert_eq!(set, vec![1, 5]);
    }

    #[test]
    fn rerunning_analysis_is_stable() {
        let (p, rds1) = analyzed(FIG2);
        let rds2 = compute_rds(&p).unwrap();
        assert_eq!(rds1, rds2);
    }

    #[test]
    fn dump_format() {
        let (_, rds) = analyzed("store r1 a\nload r2 a\n");
        assert_eq!(rds.dump(), "2: {1}\n");
    }
}
