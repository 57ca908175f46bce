//! Command-line front end: generate traces, verify the bounds, compare
//! policies and inspect head concentration.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use adakv::compare::{run_comparison, ComparisonConfig};
use adakv::inspect::head_concentration;
use adakv::policy::{PolicyConfig, PolicyKind};
use adakv::report::{render, ReportFormat, Tabular};
use adakv::trace::{
    generate_synthetic_trace, load_trace, save_trace, GeneratorProfile, PayloadStorage, TraceKind,
};
use adakv::verify::{verify_theorems, VerifyCaps, VerifyOptions};
use adakv::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "adakv", version, about = "KV-cache eviction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace.
    Gen(GenArgs),
    /// Check the loss bounds against exhaustive search on random instances.
    Verify(VerifyArgs),
    /// Compare eviction policies on a full trace.
    Compare(CompareArgs),
    /// Per-head attention concentration of a trace.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Full,
    WeightsOnly,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "full")]
    kind: Kind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Store the payload inside the JSON envelope instead of a sidecar.
    #[arg(long)]
    inline: bool,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
    #[arg(long)]
    model_dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    kv_group_size: Option<usize>,
    #[arg(long)]
    fraction_sparse_heads: Option<f64>,
    #[arg(long)]
    sparse_top_mass: Option<f64>,
    #[arg(long)]
    sparse_support: Option<f64>,
    #[arg(long)]
    dispersed_temperature: Option<f64>,
}

#[derive(Args)]
struct Output {
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Report file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Size caps as `key=value` pairs, e.g. `topk_len=8,alloc_heads=3`.
    #[arg(long, default_value = "")]
    caps: String,
    #[arg(long)]
    workers: Option<usize>,
    /// Subtract this from every loss bound (harness self-test).
    #[arg(long, default_value_t = 0.0, hide = true)]
    epsilon_offset: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4")]
    budgets: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "snapkv,ada_snapkv")]
    policies: Vec<PolicyKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Attention share each head must cover.
    #[arg(long, default_value_t = 0.95)]
    mass: f64,
    #[command(flatten)]
    output: Output,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::Capability(_)
        | Error::BudgetBelowFloor { .. }
        | Error::BudgetExceedsCapacity { .. } => EXIT_USAGE,
        _ => EXIT_IO,
    }
}

fn write_report(report: &impl Tabular, output: &Output) -> adakv::Result<()> {
    let bytes = render(report, output.format)?;
    match &output.out {
        Some(path) => std::fs::write(path, bytes)?,
        None => std::io::stdout().lock().write_all(&bytes)?,
    }
    Ok(())
}

fn gen(args: GenArgs) -> adakv::Result<()> {
    let mut p = GeneratorProfile {
        kind: match args.kind {
            Kind::Full => TraceKind::Full,
            Kind::WeightsOnly => TraceKind::WeightsOnly,
        },
        ..GeneratorProfile::default()
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { p.$field = v; })* };
    }
    set!(
        samples,
        layers,
        heads,
        n,
        head_dim,
        model_dim,
        window,
        kv_group_size
    );
    set!(
        fraction_sparse_heads,
        sparse_top_mass,
        sparse_support,
        dispersed_temperature
    );
    let trace = generate_synthetic_trace(&p, args.seed)?;
    let storage = if args.inline {
        PayloadStorage::Inline
    } else {
        PayloadStorage::Sidecar
    };
    save_trace(&trace, &args.out, storage)?;
    eprintln!(
        "wrote {} samples to {}",
        trace.num_samples(),
        args.out.display()
    );
    Ok(())
}

fn verify(args: VerifyArgs) -> adakv::Result<bool> {
    let opts = VerifyOptions {
        caps: VerifyCaps::default().parse_overrides(&args.caps)?,
        workers: args.workers,
        epsilon_offset: args.epsilon_offset,
        ..VerifyOptions::new(args.seed, args.trials)
    };
    let report = verify_theorems(&opts)?;
    write_report(&report, &args.output)?;
    for p in &report.properties {
        eprintln!(
            "{:<26} {} violations in {} trials",
            p.property.name(),
            p.violations,
            p.trials
        );
    }
    Ok(report.passed())
}

fn compare(args: CompareArgs) -> adakv::Result<()> {
    let trace = load_trace(&args.trace)?;
    let policies = args
        .policies
        .iter()
        .map(|&kind| {
            let mut p = PolicyConfig::new(kind);
            p.window_size = trace.profile.window;
            p.gqa_group_size = trace.profile.kv_group_size;
            if let Some(a) = args.alpha {
                p.alpha = a;
            }
            p
        })
        .collect();
    let mut config = ComparisonConfig::new(args.budgets, policies);
    config.workers = args.workers;
    let report = run_comparison(&trace, &config)?;
    write_report(&report, &args.output)?;
    for s in &report.summaries {
        eprintln!(
            "budget {}: {} beats {} on {}/{} samples",
            s.budget_fraction, s.adaptive, s.uniform, s.adaptive_wins, s.samples
        );
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> adakv::Result<()> {
    if !(args.mass > 0.0 && args.mass <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "mass {} outside (0, 1]",
            args.mass
        )));
    }
    let trace = load_trace(Path::new(&args.trace))?;
    let report = head_concentration(&trace, args.mass)?;
    write_report(&report, &args.output)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => gen(a).map(|_| true),
        Command::Verify(a) => verify(a),
        Command::Compare(a) => compare(a).map(|_| true),
        Command::Inspect(a) => inspect(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
