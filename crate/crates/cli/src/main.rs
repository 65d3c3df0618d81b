use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pdsched::config::{RunConfig, Solver, TraceSource};
use pdsched::offline::mip::export_original_mip;
use pdsched::offline::{lower_bound, BoundOptions, PrefillRounding, ServiceMode};
use pdsched::online::DecodeCostScope;
use pdsched::sim::{export_gantt, run_batch, run, BatchConfig, GanttFormat, Policy};
use pdsched::workload::{load_trace, save_trace, Trace};

#[derive(Parser)]
#[command(name = "pdsched", version, about = "Prefill/decode scheduling for batched LLM inference")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic trace.
    Generate(GenerateArgs),
    /// Simulate one policy on one trace.
    Run(RunArgs),
    /// Baseline against hybrid over many seeded traces.
    Batch(BatchArgs),
    /// Makespan lower bound of a trace.
    Lb(LbArgs),
    /// Write the bin-level MIP in LP format.
    ExportMip(ExportMipArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Gsm8k,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, value_enum, default_value = "gsm8k")]
    preset: Preset,
    /// Trace file; defaults to trace.json under --out, else stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    /// Trace file; otherwise the configured source (the preset generator by default).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    clients: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Oracle,
    Estimate,
}

impl From<ModeArg> for ServiceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Oracle => ServiceMode::Oracle,
            ModeArg::Estimate => ServiceMode::Estimate,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Auto,
    Lpt,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Active,
    Waiting,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long, value_parser = parse_policy)]
    policy: Option<Policy>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    /// Output lengths the offline solver may see.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    no_steal: bool,
    #[arg(long, value_enum)]
    decode_cost_scope: Option<ScopeArg>,
    /// Gantt chart path; the extension picks svg or csv.
    #[arg(long)]
    gantt: Option<PathBuf>,
    /// Metrics JSON path.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 1319)]
    requests: usize,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Args)]
struct LbArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long, value_enum, default_value = "oracle")]
    mode: ModeArg,
    /// Round the prefill term up instead of down.
    #[arg(long)]
    ceil: bool,
}

#[derive(Args)]
struct ExportMipArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long)]
    bins: usize,
    /// LP file; defaults to model.lp under --out, else stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::gsm8k(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Generate(a) => generate(&cfg, a, out),
        Command::Run(a) => run_cmd(cfg, a, out),
        Command::Batch(a) => batch(&cfg, a, out),
        Command::Lb(a) => lb(cfg, a),
        Command::ExportMip(a) => export_mip(cfg, a, out),
    }
}

fn write_or_print(path: Option<PathBuf>, body: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
            eprintln!("wrote {}", p.display());
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn default_path(explicit: Option<PathBuf>, out: Option<&Path>, name: &str) -> Option<PathBuf> {
    explicit.or_else(|| out.map(|d| d.join(name)))
}

fn generate(cfg: &RunConfig, a: GenerateArgs, out: Option<&Path>) -> Result<()> {
    let params = match a.preset {
        Preset::Gsm8k => pdsched::SamplerParams::GSM8K,
    };
    let trace = pdsched::generate_trace(a.count, cfg.seed, params)?;
    write_or_print(default_path(a.output, out, "trace.json"), &save_trace(&trace))
}

fn resolve_trace(cfg: &mut RunConfig, a: &TraceArgs) -> Result<Trace> {
    if let Some(c) = a.clients {
        cfg.clients = c;
    }
    match &a.trace {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(load_trace(&text).with_context(|| format!("loading {}", p.display()))?)
        }
        None => Ok(cfg.load_trace()?),
    }
}

fn run_cmd(mut cfg: RunConfig, a: RunArgs, out: Option<&Path>) -> Result<()> {
    let trace = resolve_trace(&mut cfg, &a.trace)?;
    if let Some(p) = a.policy {
        cfg.policy.policy = p;
    }
    if a.no_steal {
        cfg.policy.steal = false;
    }
    if let Some(s) = a.decode_cost_scope {
        cfg.policy.decode_cost_scope = match s {
            ScopeArg::Active => DecodeCostScope::Active,
            ScopeArg::Waiting => DecodeCostScope::Waiting,
        };
    }
    if let Some(s) = a.solver {
        cfg.assignment.solver = match s {
            SolverArg::Auto => Solver::Auto,
            SolverArg::Lpt => Solver::Lpt,
            SolverArg::Exact => Solver::Exact,
        };
    }
    if let Some(m) = a.mode {
        cfg.assignment.mode = m.into();
    }
    let cost = cfg.cost_model()?;
    let policy = cfg.policy.policy;

    let (assignment, note) = if policy.needs_assignment() {
        let exact_fits = trace.len() <= cfg.assignment.instance_cap || cfg.assignment.node_budget.is_some();
        let note = match cfg.assignment.solver {
            Solver::Lpt => "lpt (heuristic)",
            Solver::Auto if !exact_fits => "lpt (heuristic: instance above exact cap)",
            _ => "exact",
        };
        (Some(cfg.assignment.solve(&trace, cfg.clients, &cost)?), note)
    } else {
        (None, "none")
    };
    let output = run(&trace, cfg.clients, &cost, &cfg.policy, assignment.as_ref())?;
    let m = &output.metrics;

    let gantt = a.gantt.or(cfg.outputs.gantt_svg.clone());
    if let Some(p) = gantt {
        let fmt = gantt_format(&p)?;
        write_or_print(Some(p), &export_gantt(&output.schedule, fmt))?;
    }
    if let Some(p) = cfg.outputs.gantt_csv.clone() {
        write_or_print(Some(p), &export_gantt(&output.schedule, GanttFormat::Csv))?;
    }
    if let Some(p) = default_path(a.metrics.or(cfg.outputs.metrics_json.clone()), out, "metrics.json") {
        write_or_print(Some(p), &(serde_json::to_string_pretty(m)? + "\n"))?;
    }
    println!(
        "policy={} requests={} clients={} makespan_s={:.3} utilization={:.4} generation_speed={:.2} assignment={note}",
        policy.name(),
        trace.len(),
        cfg.clients,
        m.makespan_s,
        m.utilization,
        m.generation_speed
    );
    Ok(())
}

fn gantt_format(p: &Path) -> Result<GanttFormat> {
    match p.extension().and_then(|e| e.to_str()) {
        Some(ext) => Ok(ext.parse()?),
        None => bail!("gantt path {} needs a .svg or .csv extension", p.display()),
    }
}

fn batch(cfg: &RunConfig, a: BatchArgs, out: Option<&Path>) -> Result<()> {
    let params = match &cfg.trace {
        TraceSource::Generate { params, .. } => *params,
        TraceSource::Path(_) => bail!("batch generates its own traces; the config must use a generator"),
    };
    let bc = BatchConfig {
        requests: a.requests,
        clients: a.clients.unwrap_or(cfg.clients),
        params,
        cost: cfg.cost,
        policy: cfg.policy,
        mode: a.mode.map(Into::into).unwrap_or(cfg.assignment.mode),
    };
    let report = run_batch(a.cases, cfg.seed, &bc)?;
    let s = &report.summary;
    let summary = serde_json::to_string_pretty(s)?;
    match out {
        Some(dir) => {
            write_or_print(Some(dir.join("batch.csv")), &report.to_csv())?;
            write_or_print(Some(dir.join("summary.json")), &(summary + "\n"))?;
            println!(
                "cases={} hybrid_wins={} utilization_delta_mean={:.4} speed_delta_mean={:.2}",
                s.cases, s.hybrid_wins, s.utilization_delta_mean, s.speed_delta_mean
            );
        }
        None => {
            print!("{}", report.to_csv());
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn lb(mut cfg: RunConfig, a: LbArgs) -> Result<()> {
    let trace = resolve_trace(&mut cfg, &a.trace)?;
    let cost = cfg.cost_model()?;
    let opts = BoundOptions {
        rounding: if a.ceil { PrefillRounding::Ceil } else { PrefillRounding::Floor },
        exact: cfg.assignment.exact_options(),
    };
    let b = lower_bound(&trace, cfg.clients, &cost, a.mode.into(), opts)?;
    let report = serde_json::json!({
        "prefill_s": b.prefill_part / 1000.0,
        "decode_s": b.decode_part / 1000.0,
        "total_s": b.total / 1000.0,
        "packing_tokens": b.packing_tokens,
        "exact": b.exact,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn export_mip(mut cfg: RunConfig, a: ExportMipArgs, out: Option<&Path>) -> Result<()> {
    let trace = resolve_trace(&mut cfg, &a.trace)?;
    let cost = cfg.cost_model()?;
    let lp = export_original_mip(&trace, cfg.clients, a.bins, &cost)?;
    write_or_print(default_path(a.output, out, "model.lp"), &lp)
}
