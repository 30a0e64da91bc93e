//! Command-line front door: analyze a trace log for an actual cause of an
//! effect, generate benchmark logs, or benchmark the execution modes.
//!
//! Exit codes: 0 when a cause is found (or the command succeeded), 3 when the
//! analysis finishes without a cause, 1 on any input error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};

use tracecause::engine::{
    bench_modes, build_report, find_actual_cause, EngineConfig, Mode, Outcome,
};
use tracecause::generators::{default_policy_family, generate_log, MountainCarParams};
use tracecause::{CausalFormula64, IngestMode, Signature64, TraceLog64};

const EXIT_OK: u8 = 0;
const EXIT_INPUT_ERROR: u8 = 1;
const EXIT_NO_CAUSE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "tracecause",
    version,
    about = "Find the actual cause of an effect in a log of execution traces",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search a trace log for an actual cause of the effect formula.
    Analyze(AnalyzeArgs),
    /// Produce a benchmark trace log.
    Generate {
        #[command(subcommand)]
        target: GenerateTarget,
    },
    /// Time the execution modes over log prefixes; timeouts are data.
    Bench(BenchArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace log CSV.
    #[arg(long)]
    log: PathBuf,
    /// Signature sidecar JSON.
    #[arg(long)]
    signature: PathBuf,
    /// Effect formula, e.g. 'pos(n) != 0.6'.
    #[arg(long)]
    effect: String,
    /// Comma-separated candidate cause variables, in priority order.
    #[arg(long, value_name = "VARS")]
    cause_vars: String,
    /// direct_full | direct_abs | backend_full | backend_abs.
    #[arg(long, default_value = "direct_full")]
    mode: String,
    /// Initial under-approximation fraction in (0, 1].
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Over-approximation grid width (normalized); 0 disables merging.
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    /// Seed for all randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest cause conjunction to consider.
    #[arg(long, default_value_t = 1)]
    max_conjuncts: usize,
    /// Require the counterfactual to share the witness's context.
    #[arg(long, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
    same_context: bool,
    /// Compare traces only up to the cause step.
    #[arg(long, default_value_t = false, action = ArgAction::Set, value_name = "BOOL")]
    equiv_prefix: bool,
    /// Split the log by context and analyze each group separately.
    #[arg(long, default_value_t = false, action = ArgAction::Set, value_name = "BOOL")]
    partition_by_context: bool,
    /// Where to write the JSON report.
    #[arg(long, default_value = "./report.json")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum GenerateTarget {
    /// Mountain-car episodes under a mixed scripted-policy family.
    MountainCar {
        /// Number of traces.
        #[arg(long)]
        n: usize,
        /// Seed for initial-condition sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Step limit per episode.
        #[arg(long, default_value_t = 100)]
        horizon: usize,
        /// Output directory for log.csv and signature.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    signature: PathBuf,
    #[arg(long)]
    effect: String,
    #[arg(long, value_name = "VARS")]
    cause_vars: String,
    /// Comma-separated prefix sizes, e.g. 1000,4000,8000.
    #[arg(long)]
    sizes: String,
    /// Comma-separated modes to time.
    #[arg(long, default_value = "direct_full,direct_abs")]
    modes: String,
    /// Per-cell timeout in milliseconds.
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Comma-separated alpha sweep; defaults to a single --alpha.
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    max_conjuncts: usize,
    #[arg(long, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
    same_context: bool,
    #[arg(long, default_value_t = false, action = ArgAction::Set, value_name = "BOOL")]
    equiv_prefix: bool,
    /// Where to write the CSV timing table.
    #[arg(long, default_value = "./bench.csv")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are not errors
            let code = if e.use_stderr() { EXIT_INPUT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT_ERROR)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Generate { target } => cmd_generate(target),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn load_inputs(
    signature: &PathBuf,
    log: &PathBuf,
    effect: &str,
) -> Result<(TraceLog64, CausalFormula64)> {
    let sig_text = fs::read_to_string(signature)
        .with_context(|| format!("cannot read signature file {}", signature.display()))?;
    let sig: Signature64 = Signature64::parse(&sig_text)
        .with_context(|| format!("invalid signature in {}", signature.display()))?;
    let log_text = fs::read_to_string(log)
        .with_context(|| format!("cannot read trace log {}", log.display()))?;
    let log = TraceLog64::parse_csv(&log_text, &sig, IngestMode::Strict)
        .with_context(|| "invalid trace log")?;
    let effect = parse_formula(effect, log.signature())?;
    Ok((log, effect))
}

fn parse_formula(text: &str, sig: &Signature64) -> Result<CausalFormula64> {
    CausalFormula64::parse(text, sig).map_err(|e| {
        let caret = " ".repeat(e.position());
        anyhow!("{e}\n  {text}\n  {caret}^")
    })
}

fn split_list(text: &str) -> Vec<String> {
    text.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn parse_modes(text: &str) -> Result<Vec<Mode>> {
    let modes: Result<Vec<Mode>, String> = split_list(text).iter().map(|m| m.parse()).collect();
    modes.map_err(|e| anyhow!(e))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<u8> {
    let (log, effect) = load_inputs(&args.signature, &args.log, &args.effect)?;
    let cfg = EngineConfig {
        mode: args.mode.parse().map_err(|e: String| anyhow!(e))?,
        alpha0: args.alpha,
        beta: args.beta,
        seed: args.seed,
        cause_vars: split_list(&args.cause_vars),
        max_conjuncts: args.max_conjuncts,
        same_context: args.same_context,
        equiv_prefix: args.equiv_prefix,
        partition_by_context: args.partition_by_context,
        ..EngineConfig::default()
    };
    let outcome = find_actual_cause(&log, &effect, &cfg)?;
    let report = build_report(&outcome, &cfg);
    fs::write(&args.out, report.to_json())
        .with_context(|| format!("cannot write report to {}", args.out.display()))?;
    match &outcome {
        Outcome::Cause(found) => {
            println!("cause: {}", found.candidate);
            println!("witness: {}", found.witness);
            println!("counterfactual: {}", found.counterfactual);
            let p = &found.candidate.partition;
            println!(
                "partition: Z = {{{}}}, W = {{{}}}",
                p.z.iter().cloned().collect::<Vec<_>>().join(", "),
                p.w.iter().cloned().collect::<Vec<_>>().join(", ")
            );
            let v = &found.verification;
            println!(
                "verification: ac1={} ac2a={} ac2b={} (checked {} traces)",
                pass(v.ac1),
                pass(v.ac2a),
                pass(v.ac2b),
                v.checked_universe
            );
            println!(
                "stats: outer_iters={} inner_iters={} alpha_final={} abstract_states={} wall_ms={}",
                found.stats.outer_iters,
                found.stats.inner_iters,
                found.stats.alpha_final,
                found.stats.abstract_states,
                found.stats.wall_ms
            );
            println!("report: {}", args.out.display());
            Ok(EXIT_OK)
        }
        Outcome::NoCause(nc) => {
            println!("no cause found (reason: {})", nc.reason);
            println!("report: {}", args.out.display());
            Ok(EXIT_NO_CAUSE)
        }
    }
}

fn pass(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}

fn cmd_generate(target: GenerateTarget) -> Result<u8> {
    match target {
        GenerateTarget::MountainCar { n, seed, horizon, out } => {
            let mut params = MountainCarParams::<f64>::standard();
            params.horizon = horizon;
            let family = default_policy_family::<f64>();
            let (log, summary) = generate_log(n, seed, &params, &family)?;
            fs::create_dir_all(&out)
                .with_context(|| format!("cannot create output directory {}", out.display()))?;
            let log_path = out.join("log.csv");
            let sig_path = out.join("signature.json");
            fs::write(&log_path, log.to_csv_string())
                .with_context(|| format!("cannot write {}", log_path.display()))?;
            fs::write(&sig_path, log.signature().to_json())
                .with_context(|| format!("cannot write {}", sig_path.display()))?;
            println!(
                "generated {} traces (success rate {:.1}%) into {}",
                summary.traces,
                summary.success_rate * 100.0,
                out.display()
            );
            if let Some(warning) = summary.warning {
                eprintln!("warning: {warning}");
            }
            Ok(EXIT_OK)
        }
    }
}

fn cmd_bench(args: BenchArgs) -> Result<u8> {
    let (log, effect) = load_inputs(&args.signature, &args.log, &args.effect)?;
    let sizes: Vec<usize> = split_list(&args.sizes)
        .iter()
        .map(|s| s.parse().map_err(|_| anyhow!("invalid size `{s}`")))
        .collect::<Result<_>>()?;
    if sizes.is_empty() {
        bail!("--sizes must list at least one prefix size");
    }
    let modes = parse_modes(&args.modes)?;
    if modes.is_empty() {
        bail!("--modes must list at least one mode");
    }
    let alphas: Option<Vec<f64>> = match &args.alphas {
        None => None,
        Some(text) => Some(
            split_list(text)
                .iter()
                .map(|a| a.parse().map_err(|_| anyhow!("invalid alpha `{a}`")))
                .collect::<Result<_>>()?,
        ),
    };
    let cfg = EngineConfig {
        alpha0: args.alpha,
        beta: args.beta,
        seed: args.seed,
        cause_vars: split_list(&args.cause_vars),
        max_conjuncts: args.max_conjuncts,
        same_context: args.same_context,
        equiv_prefix: args.equiv_prefix,
        ..EngineConfig::default()
    };
    let timeout = args.timeout_ms.map(Duration::from_millis);
    let rows = bench_modes(&log, &effect, &cfg, &sizes, &modes, alphas.as_deref(), timeout)?;
    let mut table = String::from("size,mode,alpha,wall_ms,refinements,outcome,cause\n");
    for row in &rows {
        table.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.size,
            row.mode,
            row.alpha,
            row.wall_ms,
            row.refinements,
            row.outcome,
            row.cause.as_deref().unwrap_or("")
        ));
    }
    print!("{table}");
    fs::write(&args.out, table)
        .with_context(|| format!("cannot write bench table to {}", args.out.display()))?;
    Ok(EXIT_OK)
}
