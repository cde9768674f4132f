//! `fedelim` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedelim::config::{canonical_toml, load_experiment};
use fedelim::harness::{run, run_many, ExperimentConfig, Variant};
use fedelim::objectives::{near_optimality_profile, BaseObjective, Certificate, ObjectiveKind, ObjectiveSuite};
use fedelim::report::write_outputs;
use fedelim::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "fedelim", version, about = "Personalized federated X-armed bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured variants over seeds and write regret.csv, comm.csv
    /// and summary.json.
    Run(RunArgs),
    /// Print certified optima of a shifted suite.
    Oracle(OracleArgs),
    /// Print near-optimality cell counts for a ladder of (eps, grid_step).
    Profile(ProfileArgs),
    /// Print the canonical protocol transcript of one run.
    Transcript(TranscriptArgs),
}

#[derive(Debug, Args)]
struct Overrides {
    /// TOML experiment file; defaults are used for missing keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// First seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, value_name = "N")]
    runs: Option<u64>,
    /// Variant to run (pfpne, global-only, local-only); repeatable.
    #[arg(long = "variant", value_name = "NAME")]
    variants: Vec<String>,
    #[arg(long, value_name = "NAME")]
    objective: Option<String>,
    #[arg(long, value_name = "M")]
    clients: Option<usize>,
    #[arg(long, value_name = "T")]
    horizon: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long, value_name = "NAME")]
    objective: String,
    #[arg(long, value_name = "M", default_value_t = 10)]
    clients: usize,
    /// Defaults to 5% of the widest domain side.
    #[arg(long, value_name = "S")]
    shift_std: Option<f64>,
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[arg(long, value_name = "NAME")]
    objective: String,
    #[arg(long, default_value_t = 1.0)]
    nu1: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Rungs h = 0..levels of the ladder eps = 6·nu1·rho^h, grid_step = rho^h.
    #[arg(long, default_value_t = 7)]
    levels: u32,
    /// Single count at this eps (requires --grid-step).
    #[arg(long, requires = "grid_step")]
    eps: Option<f64>,
    #[arg(long, requires = "eps")]
    grid_step: Option<f64>,
}

#[derive(Debug, Args)]
struct TranscriptArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Also list every pull.
    #[arg(long)]
    pulls: bool,
    /// Write to this file instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn experiment(o: &Overrides) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &o.config {
        Some(path) => load_experiment(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(name) = &o.objective {
        let kind: ObjectiveKind = name.parse()?;
        if kind != cfg.objective {
            cfg.domain = None;
        }
        cfg.objective = kind;
    }
    if let Some(m) = o.clients {
        cfg.clients = m;
    }
    if let Some(t) = o.horizon {
        cfg.horizon = t;
    }
    if !o.variants.is_empty() {
        cfg.variants = o.variants.iter().map(|v| v.parse()).collect::<Result<Vec<Variant>, _>>()?;
    }
    if o.seed.is_some() || o.runs.is_some() {
        let start = o.seed.unwrap_or(cfg.seeds[0]);
        let n = o.runs.unwrap_or(if o.seed.is_some() { 1 } else { cfg.seeds.len() as u64 });
        cfg.seeds = (0..n)
            .map(|k| start.checked_add(k))
            .collect::<Option<Vec<u64>>>()
            .ok_or_else(|| Failure::Config("seed range overflows".into()))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = experiment(&args.overrides)?;
    let results = run_many(&cfg)?;
    write_outputs(&args.out, &results).map_err(|e| Failure::Runtime(format!("writing {}: {e}", args.out.display())))?;
    std::fs::write(args.out.join("config.toml"), canonical_toml(&cfg)?)
        .map_err(|e| Failure::Runtime(format!("writing {}: {e}", args.out.display())))?;
    for a in &results.aggregates {
        println!(
            "{:<12} runs={} final avg cum regret = {:.4} ± {:.4}  comm rounds = {:.2}",
            a.variant, a.runs, a.final_mean, a.final_std, a.comm_rounds_mean
        );
    }
    Ok(())
}

fn print_certificate(label: &str, c: &Certificate) {
    let x: Vec<String> = c.point.iter().map(|v| format!("{v:.10}")).collect();
    println!(
        "{label:<10} f* = {:.12}  x* = [{}]  method = {:?}, {} evaluations, {} zoom rounds",
        c.value,
        x.join(", "),
        c.method,
        c.evaluations,
        c.zoom_rounds
    );
}

fn cmd_oracle(args: &OracleArgs) -> Result<(), Failure> {
    let kind: ObjectiveKind = args.objective.parse()?;
    let base = BaseObjective::new(kind)?;
    let shift_std = args.shift_std.unwrap_or(0.05 * base.domain().max_width());
    let suite = ObjectiveSuite::new(base, args.clients, shift_std, 0.0, args.seed)?;
    for (m, c) in suite.local_optima().iter().enumerate() {
        let shift: Vec<String> = suite.shifts()[m].iter().map(|v| format!("{v:.6}")).collect();
        print_certificate(&format!("client {m}"), c);
        println!("           shift = [{}]", shift.join(", "));
    }
    print_certificate("global", suite.global_optimum());
    Ok(())
}

fn cmd_profile(args: &ProfileArgs) -> Result<(), Failure> {
    let kind: ObjectiveKind = args.objective.parse()?;
    if !(args.nu1 > 0.0 && args.rho > 0.0 && args.rho < 1.0) {
        return Err(Failure::Config("need nu1 > 0 and 0 < rho < 1".into()));
    }
    let base = BaseObjective::new(kind)?;
    let f_star = ObjectiveSuite::new(base.clone(), 1, 0.0, 0.0, 0)?.global_optimum().value;
    let f = |x: &[f64]| base.eval(x).unwrap_or(f64::NEG_INFINITY);
    let rungs: Vec<(String, f64, f64)> = match (args.eps, args.grid_step) {
        (Some(eps), Some(step)) => vec![("-".into(), eps, step)],
        _ => (0..args.levels)
            .map(|h| (h.to_string(), 6.0 * args.nu1 * args.rho.powi(h as i32), args.rho.powi(h as i32)))
            .collect(),
    };
    println!("{:>3} {:>24} {:>24} {:>14}", "h", "eps", "grid_step", "count");
    for (h, eps, step) in rungs {
        match near_optimality_profile(&f, base.domain(), f_star, eps, step) {
            Ok(n) => println!("{h:>3} {eps:>24.17e} {step:>24.17e} {n:>14}"),
            Err(e @ Error::Config(_)) if h != "-" => println!("{h:>3} {eps:>24.17e} {step:>24.17e} {:>14}  ({e})", "-"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn cmd_transcript(args: &TranscriptArgs) -> Result<(), Failure> {
    let cfg = experiment(&args.overrides)?;
    let mut text = String::new();
    for &seed in &cfg.seeds {
        for &v in &cfg.variants {
            let out = run(&cfg, v, seed)?;
            text.push_str(&format!("# variant={v} seed={seed}\n"));
            text.push_str(&out.transcript.canonical());
            if args.pulls {
                for recs in &out.pulls {
                    for p in recs {
                        text.push_str(&fedelim::pfpne::canonical_pull(p));
                        text.push('\n');
                    }
                }
            }
        }
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display())))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Transcript(a) => cmd_transcript(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("fedelim: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("fedelim: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
