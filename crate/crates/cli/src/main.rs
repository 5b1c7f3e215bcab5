//! `dfi-sim`: run mini-IR programs through the enforcement pipeline,
//! generate scenario corpora, and diff pipeline vs reference verdicts.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dfi_core::corpus::{gen_scenario, ScenarioKind};
use dfi_core::report::{emit_report, verdict_multiset, ReportFormat};
use dfi_core::{
    instrument, parse_program, prepare, print_program, run_pipeline, run_reference, OptSet,
    PipelineConfig,
};

#[derive(Parser)]
#[command(name = "dfi-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunOptions {
    /// Transmission buffer size in bytes (512 and 2048 are the studied
    /// sizes; any positive value works).
    #[arg(long, default_value_t = 2048)]
    buffer: usize,
    /// Enabled runtime optimizations, a subset of the letters ABCDE.
    #[arg(long, default_value = "ABCE")]
    opts: String,
    /// Disable packet compression.
    #[arg(long)]
    no_compress: bool,
    /// Run optimization D without the cross-address staleness gate.
    #[arg(long)]
    opt_d_paper_mode: bool,
    /// Enable the double-DFI-store malicious store check.
    #[arg(long)]
    detect_double_dfi: bool,
    /// FIFO capacity in 64-bit records.
    #[arg(long, default_value_t = 4096)]
    fifo_capacity: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunOptions {
    fn to_config(&self) -> Result<PipelineConfig> {
        let opts = OptSet::from_letters(&self.opts).map_err(|e| anyhow::anyhow!(e))?;
        Ok(PipelineConfig {
            buffer_bytes: self.buffer,
            opts,
            compression: !self.no_compress,
            fifo_capacity: self.fifo_capacity,
            seed: self.seed,
            opt_d_paper_mode: self.opt_d_paper_mode,
            detect_double_dfi: self.detect_double_dfi,
            ..PipelineConfig::default()
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one program through the full pipeline and print the report.
    Run {
        /// Mini-IR source file.
        file: PathBuf,
        #[command(flatten)]
        options: RunOptions,
        /// Report format.
        #[arg(long, default_value = "table")]
        report: String,
        /// Write the instrumented program to a file.
        #[arg(long)]
        dump_instrumented: Option<PathBuf>,
    },
    /// Generate scenario programs and descriptors into a directory.
    Corpus {
        /// One of: ret_overwrite, heap_overflow, over_read, random.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 10)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "corpus")]
        out: PathBuf,
    },
    /// Run pipeline and synchronous reference; compare verdicts.
    Diff {
        file: PathBuf,
        #[command(flatten)]
        options: RunOptions,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            file,
            options,
            report,
            dump_instrumented,
        } => {
            let format = match report.as_str() {
                "json" => ReportFormat::Json,
                "table" => ReportFormat::Table,
                other => bail!("unknown report format `{other}`"),
            };
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            let program = parse_program(&text)?;
            let config = options.to_config()?;
            if let Some(path) = dump_instrumented {
                let (prog, rds) = prepare(&program)?;
                let instrumented = instrument(&prog, &rds, &config.instrumentation)?;
                std::fs::write(&path, print_program(&instrumented))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let report = run_pipeline(&program, &config)?;
            print!("{}", emit_report(&report, format));
            Ok(if report.has_violations() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Corpus {
            kind,
            count,
            seed,
            out,
        } => {
            let kind = ScenarioKind::parse(&kind)
                .with_context(|| format!("unknown scenario kind `{kind}`"))?;
            std::fs::create_dir_all(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            for i in 0..count {
                let scenario = gen_scenario(kind, seed + i);
                let program_path = out.join(format!("{}.dfi", scenario.name));
                std::fs::write(&program_path, print_program(&scenario.program))?;
                let descriptor = serde_descriptor(&scenario);
                std::fs::write(
                    out.join(format!("{}.json", scenario.name)),
                    descriptor,
                )?;
                println!("{}", program_path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Diff { file, options } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            let program = parse_program(&text)?;
            let config = options.to_config()?;
            let pipeline = run_pipeline(&program, &config)?;
            let reference = run_reference(&program, &config)?;
            let left = verdict_multiset(&pipeline.violations);
            let right = verdict_multiset(&reference.violations);
            if left == right {
                println!(
                    "match: {} violation(s) in both runs",
                    pipeline.violations.len()
                );
                Ok(ExitCode::SUCCESS)
            } else {
                println!("MISMATCH");
                println!("pipeline:  {left:?}");
                println!("reference: {right:?}");
                Ok(ExitCode::from(2))
            }
        }
    }
}

/// Scenario sidecar: where the mutation strikes and what to expect.
fn serde_descriptor(scenario: &dfi_core::Scenario) -> String {
    let mutation = match &scenario.mutation {
        Some(m) => format!(
            "{{\"after_access\": {}, \"reg\": \"{}\", \"value\": {}}}",
            m.after_access, m.reg, m.value
        ),
        None => "null".to_string(),
    };
    let expected = match scenario.expected {
        dfi_core::Expectation::Clean => "clean",
        dfi_core::Expectation::AttackDetected => "attack_detected",
    };
    format!(
        "{{\"name\": \"{}\", \"expected\": \"{expected}\", \"mutation\": {mutation}}}\n",
        scenario.name
    )
}
