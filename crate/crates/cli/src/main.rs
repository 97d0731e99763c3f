use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hardmt::harness::{
    complexity_sweep, parse_continuum, parse_track, run, verify, Config, EnvKind, EtaSetting, Format, Mode,
    SweepOptions,
};
use hardmt::{Aggregator, ConstraintDescriptor};

const SMALL_CONFIG: &str = include_str!("../../../configs/small.toml");

#[derive(Parser)]
#[command(name = "hardmt", version, about = "Multi-task forecasting under hard joint constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play the game and report per-round regret.
    Run(GameArgs),
    /// Check the lattice against the exhaustive oracles on a small instance.
    Verify(GameArgs),
    /// Count edge relaxations and time forward passes across parameter sweeps.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GameArgs {
    /// TOML config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Constraint descriptor, e.g. `coherence:gamma=1` or `budget:B=6`.
    #[arg(long)]
    constraint: Option<ConstraintDescriptor>,
    #[arg(long, value_name = "M")]
    tasks: Option<usize>,
    #[arg(long, value_name = "N")]
    actions: Option<usize>,
    #[arg(long, value_name = "n")]
    rounds: Option<usize>,
    /// `auto` or a non-negative real.
    #[arg(long)]
    eta: Option<EtaSetting>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "R")]
    replicas: Option<usize>,
    /// Track the best comparator with at most K switches: `K=<int>`.
    #[arg(long, value_name = "K=<int>", value_parser = track_arg, conflicts_with_all = ["global", "continuum"])]
    track: Option<usize>,
    /// Non-additive round loss: max, min or sum.
    #[arg(long, conflicts_with = "continuum")]
    global: Option<Aggregator>,
    /// Every task sees the same per-action losses.
    #[arg(long)]
    common_losses: bool,
    /// Continuum of tasks on a grid of width eps with at most m shifts: `eps=<real>,m=<int>`.
    #[arg(long, value_name = "eps=<real>,m=<int>", value_parser = continuum_arg)]
    continuum: Option<(f64, usize)>,
    /// zero, iid, rotating, piecewise, continuum or steps.
    #[arg(long, value_name = "KIND")]
    env: Option<EnvKind>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Task counts of the M sweep.
    #[arg(long, value_delimiter = ',', default_values_t = SweepOptions::default().tasks)]
    tasks: Vec<usize>,
    /// Action counts of the N sweep.
    #[arg(long, value_delimiter = ',', default_values_t = SweepOptions::default().actions)]
    actions: Vec<usize>,
    /// Forward passes timed per row.
    #[arg(long, default_value_t = SweepOptions::default().repeats)]
    repeats: usize,
    #[arg(long, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn track_arg(s: &str) -> Result<usize, String> {
    parse_track(s).map_err(|e| e.to_string())
}

fn continuum_arg(s: &str) -> Result<(f64, usize), String> {
    parse_continuum(s).map_err(|e| e.to_string())
}

impl GameArgs {
    fn config(&self, fallback: Option<&str>) -> Result<Config> {
        let mut c = match (&self.config, fallback) {
            (Some(path), _) => Config::load(path).with_context(|| format!("reading config {}", path.display()))?,
            (None, Some(text)) => Config::from_toml_str(text)?,
            (None, None) => Config::skeleton(self.rounds.context("--rounds is required without --config")?),
        };
        let g = &mut c.game;
        if let Some(d) = &self.constraint {
            g.constraint = Some(d.clone());
        }
        if self.tasks.is_some() {
            g.tasks = self.tasks;
        }
        if let Some(n) = self.actions {
            g.actions = Some(n);
            g.action_values = None;
        }
        if let Some(n) = self.rounds {
            g.rounds = n;
        }
        if let Some(s) = self.seed {
            g.seed = s;
        }
        if let Some(r) = self.replicas {
            g.replicas = r;
        }
        if let Some(d) = self.delta {
            g.delta = d;
        }
        let f = &mut c.forecaster;
        if let Some(e) = self.eta {
            f.eta = e;
        }
        if let Some(k) = self.track {
            f.mode = Mode::Tracking;
            f.switches = Some(k);
        }
        if let Some(agg) = self.global {
            f.mode = Mode::Global;
            f.aggregator = Some(agg);
        }
        if let Some((eps, m)) = self.continuum {
            f.mode = Mode::Continuum;
            f.eps = Some(eps);
            f.shifts = Some(m);
            if !matches!(c.environment.kind, EnvKind::Continuum | EnvKind::Steps | EnvKind::Zero) {
                c.environment.kind = EnvKind::Continuum;
            }
        }
        if let Some(kind) = self.env {
            c.environment.kind = kind;
        }
        if self.common_losses {
            c.environment.common = true;
        }
        if let Some(fmt) = self.format {
            c.output.format = fmt;
        }
        if let Some(p) = &self.out {
            c.output.path = Some(p.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_cmd(args: &GameArgs) -> Result<ExitCode> {
    let config = args.config(None)?;
    let report = run(&config)?;
    let mut out = output(config.output.path.as_ref())?;
    report.write(config.output.format, &mut out)?;
    out.flush()?;
    let s = report.summary();
    eprintln!(
        "{} replicas, {} rounds: mean regret {:.4}, bound {:.4}, within bound {:.1}%",
        s.replicas.len(),
        s.rounds,
        s.mean_regret,
        s.bound,
        100.0 * s.fraction_within_bound
    );
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(args: &GameArgs) -> Result<ExitCode> {
    let fallback = if args.config.is_none() && args.constraint.is_none() && args.continuum.is_none() {
        Some(SMALL_CONFIG)
    } else {
        None
    };
    let config = args.config(fallback)?;
    let report = verify(&config)?;
    let mut out = output(config.output.path.as_ref())?;
    writeln!(out, "{report}")?;
    out.flush()?;
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn bench_cmd(args: &BenchArgs) -> Result<ExitCode> {
    if args.tasks.len() < 2 || args.actions.len() < 2 {
        bail!("each sweep needs at least two points");
    }
    let opts = SweepOptions {
        tasks: args.tasks.clone(),
        actions: args.actions.clone(),
        repeats: args.repeats,
        ..SweepOptions::default()
    };
    let report = complexity_sweep(&opts)?;
    let mut out = output(args.out.as_ref())?;
    match args.format {
        Format::Csv => write!(out, "{report}")?,
        Format::Json => writeln!(out, "{}", report.to_json())?,
    }
    out.flush()?;
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
