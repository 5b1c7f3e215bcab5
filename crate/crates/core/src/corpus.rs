//! Scenario and random-program generation for testing and experiments.
//!
//! Attack scenarios come in twins: the clean program and the same
//! program with a register mutation injected mid-run (a corrupted
//! length or pointer). Random programs are branchy store/load soups
//! whose memory is always initialized through id-bearing stores before
//! any load, so a sound analysis yields zero false alarms.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::SimError;
use crate::interp::Mutation;
use crate::layout::Layout;
use crate::mir::{parse_program, Program};
use crate::pipeline::{run_pipeline_mutated, PipelineConfig};
use crate::report::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// A store loop walks past a stack buffer into the return-address
    /// slot; caught by the return rule.
    RetOverwrite,
    /// An under-allocated buffer is filled with a fixed-size write that
    /// spills into the neighbouring object.
    HeapOverflow,
    /// A library read whose claimed length exceeds the written region.
    OverRead,
    /// Branchy store/load soup for differential testing.
    Random,
}

impl ScenarioKind {
    pub fn parse(s: &str) -> Option<ScenarioKind> {
        match s {
            "ret_overwrite" => Some(ScenarioKind::RetOverwrite),
            "heap_overflow" => Some(ScenarioKind::HeapOverflow),
            "over_read" => Some(ScenarioKind::OverRead),
            "random" => Some(ScenarioKind::Random),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::RetOverwrite => "ret_overwrite",
            ScenarioKind::HeapOverflow => "heap_overflow",
            ScenarioKind::OverRead => "over_read",
            ScenarioKind::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    Clean,
    AttackDetected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub program: Program,
    pub mutation: Option<Mutation>,
    pub expected: Expectation,
}

impl Scenario {
    /// The attack-free twin: same program, no mutation.
    pub fn clean_twin(&self) -> Scenario {
        Scenario {
            name: format!("{}_clean", self.name),
            program: self.program.clone(),
            mutation: None,
            expected: Expectation::Clean,
        }
    }
}

pub fn run_scenario(scenario: &Scenario, config: &PipelineConfig) -> Result<Report, SimError> {
    run_pipeline_mutated(&scenario.program, config, scenario.mutation.as_ref())
}

/// Builds the requested scenario deterministically from the seed.
pub fn gen_scenario(kind: ScenarioKind, seed: u64) -> Scenario {
    match kind {
        ScenarioKind::RetOverwrite => ret_overwrite(seed),
        ScenarioKind::HeapOverflow => heap_overflow(seed),
        ScenarioKind::OverRead => over_read(seed),
        ScenarioKind::Random => Scenario {
            name: format!("random_{seed}"),
            program: gen_random_program(seed),
            mutation: None,
            expected: Expectation::Clean,
        },
    }
}

fn ret_overwrite(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e7);
    let words = rng.gen_range(3..=6u32);
    let fill = rng.gen_range(1..=255u32);
    let text = format!(
        "\
var buf {size}
func main:
    mov r3 {fill}
    mov r1 &buf
    mov r2 0
    mov r4 {words}
    store r3 buf
loop:
    store r3 r1
    add r1 r1 4
    add r2 r2 1
    cmp r2 r4
    jne loop
    load r5 buf
    ret
",
        size = words * 4,
    );
    let program = parse_program(&text).expect("scenario template parses");
    // Walk distance from the buffer base to the return slot, inclusive.
    // User layout does not depend on the pipeline configuration.
    let layout = Layout::build(&program, 0).expect("scenario layout");
    let buf = layout.resolve("buf").unwrap();
    let slot = layout.ret_slot("main").unwrap();
    let distance_words = u64::from((slot - buf) / 4 + 1);
    Scenario {
        name: format!("ret_overwrite_{seed}"),
        program,
        // Fires after the first store: overwrites the loop bound.
        mutation: Some(Mutation {
            after_access: 1,
            reg: "r4".to_string(),
            value: distance_words,
        }),
        expected: Expectation::AttackDetected,
    }
}

fn heap_overflow(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4845_4150);
    let a_words = rng.gen_range(3..=5u32);
    let b_words = rng.gen_range(2..=4u32);
    let fill = rng.gen_range(1..=255u32);
    let mut text = format!(
        "\
var bufa {a}
var bufb {b}
func main:
    mov r3 {fill}
    mov r6 &bufb
",
        a = a_words * 4,
        b = b_words * 4,
    );
    for _ in 0..b_words {
        text.push_str("    store r3 r6\n    add r6 r6 4\n");
    }
    text.push_str(&format!(
        "\
    mov r1 &bufa
    mov r2 0
    mov r4 {a_words}
    store r3 bufa
loop:
    store r3 r1
    add r1 r1 4
    add r2 r2 1
    cmp r2 r4
    jne loop
    mov r6 &bufb
",
    ));
    for _ in 0..b_words {
        text.push_str("    load r5 r6\n    add r6 r6 4\n");
    }
    text.push_str("    ret\n");
    let program = parse_program(&text).expect("scenario template parses");
    // Overflow by up to the whole victim, at least one word.
    let spill = rng.gen_range(1..=b_words);
    Scenario {
        name: format!("heap_overflow_{seed}"),
        program,
        // Fires after the init stores and the bufa marker store.
        mutation: Some(Mutation {
            after_access: u64::from(b_words) + 1,
            reg: "r4".to_string(),
            value: u64::from(a_words + spill),
        }),
        expected: Expectation::AttackDetected,
    }
}

fn over_read(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ead);
    let msg_words = rng.gen_range(3..=5u32);
    let secret_words = rng.gen_range(2..=4u32);
    let fill = rng.gen_range(1..=255u32);
    let mut text = format!(
        "\
var msg {m}
var secret {s}
func main:
    mov r3 {fill}
    mov r6 &msg
",
        m = msg_words * 4,
        s = secret_words * 4,
    );
    for _ in 0..msg_words {
        text.push_str("    store r3 r6\n    add r6 r6 4\n");
    }
    text.push_str("    mov r6 &secret\n");
    for _ in 0..secret_words {
        text.push_str("    store r3 r6\n    add r6 r6 4\n");
    }
    text.push_str(&format!(
        "\
    mov r4 {clean_len}
    store r3 msg
    libcall send(msg, r4)
    ret
",
        clean_len = msg_words * 4,
    ));
    let program = parse_program(&text).expect("scenario template parses");
    let over = rng.gen_range(1..=secret_words);
    Scenario {
        name: format!("over_read_{seed}"),
        program,
        // Fires after all init stores plus the marker store, right
        // before the library call reads the length register.
        mutation: Some(Mutation {
            after_access: u64::from(msg_words + secret_words) + 1,
            reg: "r4".to_string(),
            value: u64::from((msg_words + over) * 4),
        }),
        expected: Expectation::AttackDetected,
    }
}

// ---------------------------------------------------------------------------
// Random program generation.

struct SymbolSpec {
    name: String,
    words: u32,
}

/// Generates a deterministic, terminating, fully initialized program of
/// at most ~200 instructions.
pub fn gen_random_program(seed: u64) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut symbols: Vec<SymbolSpec> = Vec::new();
    let scalar_count = rng.gen_range(2..=4);
    for i in 0..scalar_count {
        symbols.push(SymbolSpec {
            name: format!("v{i}"),
            words: 1,
        });
    }
    let buffer_count = rng.gen_range(1..=2);
    for i in 0..buffer_count {
        symbols.push(SymbolSpec {
            name: format!("buf{i}"),
            words: rng.gen_range(4..=8),
        });
    }

    let mut text = String::new();
    for s in &symbols {
        text.push_str(&format!("var {} {}\n", s.name, s.words * 4));
    }
    let has_helper = rng.gen_bool(0.4);
    text.push_str("func main:\n");

    // Initialization: write every word of every symbol.
    text.push_str("    mov r1 7\n");
    for s in &symbols {
        text.push_str(&format!("    mov r10 &{}\n", s.name));
        for _ in 0..s.words {
            text.push_str("    store r1 r10\n    add r10 r10 4\n");
        }
    }

    let mut label_counter = 0usize;
    let body_ops = rng.gen_range(8..=24);
    emit_ops(
        &mut text,
        &mut rng,
        &symbols,
        body_ops,
        &mut label_counter,
        has_helper,
        2,
    );
    text.push_str("    ret\n");

    if has_helper {
        text.push_str("func helper:\n");
        let helper_ops = rng.gen_range(2..=6);
        emit_ops(
            &mut text,
            &mut rng,
            &symbols,
            helper_ops,
            &mut label_counter,
            false,
            1,
        );
        text.push_str("    ret\n");
    }

    parse_program(&text).expect("generated program parses")
}

fn pick<'a>(rng: &mut ChaCha8Rng, symbols: &'a [SymbolSpec]) -> &'a SymbolSpec {
    &symbols[rng.gen_range(0..symbols.len())]
}

fn value_reg(rng: &mut ChaCha8Rng) -> String {
    format!("r{}", rng.gen_range(1..=5))
}

fn emit_ops(
    text: &mut String,
    rng: &mut ChaCha8Rng,
    symbols: &[SymbolSpec],
    count: usize,
    label_counter: &mut usize,
    allow_calls: bool,
    loop_budget: usize,
) {
    let mut loops_left = loop_budget;
    for _ in 0..count {
        match rng.gen_range(0..10) {
            0 | 1 => {
                // Store to a symbol's base word.
                let s = pick(rng, symbols);
                text.push_str(&format!("    store {} {}\n", value_reg(rng), s.name));
            }
            2 | 3 => {
                // Load from a symbol or a fixed in-extent offset.
                let s = pick(rng, symbols);
                if s.words > 1 && rng.gen_bool(0.5) {
                    let off = rng.gen_range(0..s.words) * 4;
                    text.push_str(&format!("    mov r11 &{}\n", s.name));
                    text.push_str(&format!("    add r11 r11 {off}\n"));
                    text.push_str(&format!("    load {} r11\n", value_reg(rng)));
                } else {
                    text.push_str(&format!("    load {} {}\n", value_reg(rng), s.name));
                }
            }
            4 => {
                // Bounded store walk over a buffer.
                if loops_left == 0 {
                    continue;
                }
                loops_left -= 1;
                let s = pick(rng, symbols);
                let trips = rng.gen_range(1..=s.words.min(3));
                let label = format!("w{}", *label_counter);
                *label_counter += 1;
                text.push_str(&format!("    mov r12 &{}\n    mov r13 0\n", s.name));
                text.push_str(&format!("{label}:\n"));
                text.push_str(&format!("    store {} r12\n", value_reg(rng)));
                text.push_str("    add r12 r12 4\n    add r13 r13 1\n");
                text.push_str(&format!("    cmp r13 {trips}\n    jne {label}\n"));
            }
            5 => {
                // Library traffic between buffers, literal lengths.
                let bufs: Vec<&SymbolSpec> = symbols.iter().filter(|s| s.words > 1).collect();
                if bufs.is_empty() {
                    continue;
                }
                let a = bufs[rng.gen_range(0..bufs.len())];
                let b = bufs[rng.gen_range(0..bufs.len())];
                let len = rng.gen_range(1..=a.words.min(b.words)) * 4;
                match rng.gen_range(0..4) {
                    0 => text.push_str(&format!(
                        "    libcall memcpy({}, {}, {len})\n",
                        a.name, b.name
                    )),
                    1 => text.push_str(&format!(
                        "    libcall memset({}, {}, {len})\n",
                        a.name,
                        rng.gen_range(0..256)
                    )),
                    2 => text.push_str(&format!("    libcall send({}, {len})\n", a.name)),
                    _ => text.push_str(&format!("    libcall recv({}, {len})\n", a.name)),
                }
            }
            6 | 7 => {
                // Forward branch over a couple of operations.
                let label = format!("f{}", *label_counter);
                *label_counter += 1;
                text.push_str(&format!(
                    "    cmp {} {}\n    jne {label}\n",
                    value_reg(rng),
                    rng.gen_range(0..4)
                ));
                let s = pick(rng, symbols);
                text.push_str(&format!("    store {} {}\n", value_reg(rng), s.name));
                if rng.gen_bool(0.5) {
                    let s2 = pick(rng, symbols);
                    text.push_str(&format!("    load {} {}\n", value_reg(rng), s2.name));
                }
                text.push_str(&format!("{label}:\n"));
            }
            8 => {
                // Register arithmetic on values.
                let dst = value_reg(rng);
                let a = value_reg(rng);
                text.push_str(&format!(
                    "    {} {dst} {a} {}\n",
                    if rng.gen_bool(0.5) { "add" } else { "sub" },
                    rng.gen_range(0..16)
                ));
            }
            _ => {
                if allow_calls && rng.gen_bool(0.5) {
                    text.push_str("    call helper\n");
                } else {
                    let s = pick(rng, symbols);
                    text.push_str(&format!("    load {} {}\n", value_reg(rng), s.name));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{Machine, NullSink, DEFAULT_STEP_LIMIT};
    use crate::mir::assign_identifiers;
    use crate::pipeline::prepare;

    #[test]
    fn scenarios_are_seed_deterministic() {
        for kind in [
            ScenarioKind::RetOverwrite,
            ScenarioKind::HeapOverflow,
            ScenarioKind::OverRead,
            ScenarioKind::Random,
        ] {
            let a = gen_scenario(kind, 11);
            let b = gen_scenario(kind, 11);
            assert_eq!(a, b);
            let c = gen_scenario(kind, 12);
            assert!(a.program != c.program || a.mutation != c.mutation || kind != ScenarioKind::Random);
        }
    }

    #[test]
    fn random_programs_parse_and_terminate() {
        for seed in 0..60 {
            let program = gen_random_program(seed);
            let mut p = program.clone();
            assign_identifiers(&mut p).unwrap();
            let layout = Layout::build(&p, 16).unwrap();
            let mut m = Machine::new(&p, layout, DEFAULT_STEP_LIMIT);
            m.run(&mut NullSink, None).unwrap_or_else(|e| {
                panic!("seed {seed}: {e}");
            });
            assert!(p.instruction_count() <= 220, "seed {seed} too large");
        }
    }

    #[test]
    fn random_programs_are_clean_under_reference() {
        use crate::pipeline::run_reference;
        for seed in 0..40 {
            let program = gen_random_program(seed);
            let outcome = run_reference(&program, &PipelineConfig::default()).unwrap();
            assert!(
                outcome.violations.is_empty(),
                "seed {seed}: {:?}",
                outcome.violations
            );
        }
    }

    #[test]
    fn attack_scenarios_prepare_cleanly() {
        for kind in [
            ScenarioKind::RetOverwrite,
            ScenarioKind::HeapOverflow,
            ScenarioKind::OverRead,
        ] {
            for seed in 0..5 {
                let s = gen_scenario(kind, seed);
                prepare(&s.program).unwrap();
                assert_eq!(s.expected, Expectation::AttackDetected);
                assert!(s.mutation.is_some());
            }
        }
    }
}
