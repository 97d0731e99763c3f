//! The full-information game loop and its reports.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Config, EtaSetting, Format, Mode};
use super::env::{replica_streams, Environment};
use crate::bounds::{continuum_bound, fixed_bound, tracking_bound};
use crate::constraint::ConstraintAutomaton;
use crate::continuum::{continuum_eta, profile_loss, ContinuumComparator, ContinuumForecaster};
use crate::error::{Error, Result};
use crate::global::{global_eta, global_round_loss, Aggregator, GlobalForecaster};
use crate::lattice::{count_legal, eta_with_rule, forward_pass, round_loss, LatticeScratch, LossTable};
use crate::tracking::{tracking_eta, TrackingForecaster};

/// Column set of the CSV report, one row per round.
pub const CSV_HEADER: &str = "replica,round,loss,cumulative_loss,comparator_loss,regret,bound,eta,relaxations,play";

/// One round of one replica.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub replica: usize,
    /// One-based.
    pub round: usize,
    pub loss: f64,
    pub cumulative_loss: f64,
    pub comparator_loss: f64,
    pub regret: f64,
    pub bound: f64,
    pub eta: f64,
    pub relaxations: u64,
    /// One-based action per task joined by `;`, `-` for no play. In continuum
    /// mode, `start@action` per piece of the played profile.
    pub play: String,
}

/// Trace of one replica.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegretReport {
    pub replica: usize,
    pub seed: u64,
    pub eta: f64,
    pub bound: f64,
    pub rounds: Vec<RoundRecord>,
}

impl RegretReport {
    pub fn forecaster_loss(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cumulative_loss)
    }

    pub fn comparator_loss(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.comparator_loss)
    }

    /// `R_n`; zero for an empty game.
    pub fn regret(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.regret)
    }

    pub fn within_bound(&self) -> bool {
        self.regret() <= self.bound
    }

    pub fn relaxations(&self) -> u64 {
        self.rounds.iter().map(|r| r.relaxations).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicaSummary {
    pub replica: usize,
    pub forecaster_loss: f64,
    pub comparator_loss: f64,
    pub regret: f64,
    pub bound: f64,
    pub bound_holds: bool,
    pub relaxations: u64,
}

/// JSON summary of a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub mode: Mode,
    pub rounds: usize,
    pub seed: u64,
    pub delta: f64,
    /// Log size of the comparator class entering the bound.
    pub ln_comparator_class: f64,
    pub eta: f64,
    pub bound: f64,
    pub fraction_within_bound: f64,
    pub mean_regret: f64,
    pub replicas: Vec<ReplicaSummary>,
}

/// All replicas of a run, in replica order.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub mode: Mode,
    pub rounds: usize,
    pub seed: u64,
    pub delta: f64,
    pub ln_comparator_class: f64,
    pub replicas: Vec<RegretReport>,
}

impl RunReport {
    pub fn fraction_within_bound(&self) -> f64 {
        let hits = self.replicas.iter().filter(|r| r.within_bound()).count();
        hits as f64 / self.replicas.len() as f64
    }

    pub fn summary(&self) -> RunSummary {
        let first = &self.replicas[0];
        RunSummary {
            schema_version: super::config::SCHEMA_VERSION,
            mode: self.mode,
            rounds: self.rounds,
            seed: self.seed,
            delta: self.delta,
            ln_comparator_class: self.ln_comparator_class,
            eta: first.eta,
            bound: first.bound,
            fraction_within_bound: self.fraction_within_bound(),
            mean_regret: self.replicas.iter().map(RegretReport::regret).sum::<f64>() / self.replicas.len() as f64,
            replicas: self
                .replicas
                .iter()
                .map(|r| ReplicaSummary {
                    replica: r.replica,
                    forecaster_loss: r.forecaster_loss(),
                    comparator_loss: r.comparator_loss(),
                    regret: r.regret(),
                    bound: r.bound,
                    bound_holds: r.within_bound(),
                    relaxations: r.relaxations(),
                })
                .collect(),
        }
    }

    /// Floats carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for rep in &self.replicas {
            for r in &rep.rounds {
                writeln!(
                    out,
                    "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                    r.replica,
                    r.round,
                    r.loss,
                    r.cumulative_loss,
                    r.comparator_loss,
                    r.regret,
                    r.bound,
                    r.eta,
                    r.relaxations,
                    r.play
                )?;
            }
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: &mut W) -> Result<()> {
        serde_json::to_writer_pretty(&mut *out, &self.summary()).map_err(|e| Error::Io(e.into()))?;
        writeln!(out)?;
        Ok(())
    }

    pub fn write<W: Write>(&self, format: Format, out: &mut W) -> Result<()> {
        match format {
            Format::Csv => self.write_csv(out),
            Format::Json => self.write_json(out),
        }
    }
}

/// Runs every replica of `config`, concurrently, and returns them in replica order.
pub fn run(config: &Config) -> Result<RunReport> {
    config.validate()?;
    let plan = Plan::new(config)?;
    let replicas =
        (0..config.game.replicas).into_par_iter().map(|r| run_replica(config, &plan, r)).collect::<Result<Vec<_>>>()?;
    Ok(RunReport {
        mode: config.forecaster.mode,
        rounds: config.game.rounds,
        seed: config.game.seed,
        delta: config.game.delta,
        ln_comparator_class: plan.ln_class,
        replicas,
    })
}

/// Quantities shared by all replicas.
struct Plan {
    automaton: Option<ConstraintAutomaton>,
    eta: f64,
    bound: f64,
    ln_class: f64,
}

impl Plan {
    fn new(config: &Config) -> Result<Self> {
        let n = config.game.rounds;
        let delta = config.game.delta;
        let f = &config.forecaster;
        let tuned = |auto: &dyn Fn() -> Result<f64>| match f.eta {
            EtaSetting::Fixed(v) => Ok(v),
            EtaSetting::Auto if n == 0 => Ok(0.0),
            EtaSetting::Auto => auto(),
        };
        if f.mode == Mode::Continuum {
            let grid = config.grid()?;
            let actions = config.action_set()?;
            let n_actions = actions.len();
            let shifts = f.shifts.expect("validated");
            let forecaster = ContinuumForecaster::new(actions, grid.clone(), shifts, 0.0)?;
            let eta = tuned(&|| continuum_eta(n, forecaster.automaton()))?;
            let bound = continuum_bound(n, n_actions, &grid, shifts, delta)?;
            let ln_class = count_legal(forecaster.automaton()).ln;
            return Ok(Plan { automaton: None, eta, bound, ln_class });
        }
        let a = config.automaton()?;
        let ln_legal = count_legal(&a).ln;
        if ln_legal == f64::NEG_INFINITY {
            return Err(Error::EmptyLegalSet);
        }
        let tasks = a.task_count();
        let (eta, bound, ln_class) = match f.mode {
            Mode::Standard => {
                let eta = tuned(&|| eta_with_rule(n, &a, f.eta_rule))?;
                (eta, fixed_bound(n, ln_legal, tasks as f64, delta)?, ln_legal)
            }
            Mode::Tracking => {
                let k = f.switches.expect("validated");
                let eta = tuned(&|| tracking_eta(n, &a, k))?;
                let ln_class = crate::tracking::ln_switching_class_size(n.max(1), k, ln_legal);
                (eta, tracking_bound(n, ln_legal, tasks, k, delta)?, ln_class)
            }
            Mode::Global => {
                let agg = f.aggregator.expect("validated");
                let eta = tuned(&|| global_eta(n, &a, agg))?;
                (eta, fixed_bound(n, ln_legal, agg.range(tasks), delta)?, ln_legal)
            }
            Mode::Continuum => unreachable!("handled above"),
        };
        Ok(Plan { automaton: Some(a), eta, bound, ln_class })
    }
}

struct Trace {
    replica: usize,
    eta: f64,
    bound: f64,
    cumulative: f64,
    rows: Vec<RoundRecord>,
}

impl Trace {
    fn push(&mut self, loss: f64, comparator: f64, relaxations: u64, play: String) {
        self.cumulative += loss;
        self.rows.push(RoundRecord {
            replica: self.replica,
            round: self.rows.len() + 1,
            loss,
            cumulative_loss: self.cumulative,
            comparator_loss: comparator,
            regret: self.cumulative - comparator,
            bound: self.bound,
            eta: self.eta,
            relaxations,
            play,
        });
    }
}

/// One-based actions joined by `;`, `-` for the no-play choice.
pub fn format_play(automaton: &ConstraintAutomaton, actions: &[usize]) -> String {
    actions
        .iter()
        .map(|&k| if automaton.is_no_play(k) { "-".to_owned() } else { (k + 1).to_string() })
        .collect::<Vec<_>>()
        .join(";")
}

fn assert_legal(automaton: &ConstraintAutomaton, actions: &[usize]) {
    assert!(automaton.is_legal(actions).unwrap_or(false), "forecaster played an illegal vector {actions:?}");
}

fn run_replica(config: &Config, plan: &Plan, replica: usize) -> Result<RegretReport> {
    let (mut frng, mut erng) = replica_streams(config.game.seed, replica);
    let n = config.game.rounds;
    let mut trace = Trace { replica, eta: plan.eta, bound: plan.bound, cumulative: 0.0, rows: Vec::with_capacity(n) };
    let f = &config.forecaster;
    match (f.mode, &plan.automaton) {
        (Mode::Continuum, _) => play_continuum(config, plan, &mut trace, &mut frng, &mut erng)?,
        (Mode::Standard, Some(a)) => play_standard(config, a, plan.eta, &mut trace, &mut frng, &mut erng)?,
        (Mode::Tracking, Some(a)) => {
            let k = f.switches.expect("validated");
            play_tracking(config, a, k, plan.eta, &mut trace, &mut frng, &mut erng)?
        }
        (Mode::Global, Some(a)) => {
            let agg = f.aggregator.expect("validated");
            play_global(config, a, agg, plan.eta, &mut trace, &mut frng, &mut erng)?
        }
        _ => unreachable!("non-continuum plans carry an automaton"),
    }
    Ok(RegretReport { replica, seed: config.game.seed, eta: plan.eta, bound: plan.bound, rounds: trace.rows })
}

/// Per-task losses of one round, repeating a common row when the environment emits one.
fn task_losses<R: Rng>(env: &Environment, tasks: usize, t: usize, rng: &mut R) -> Vec<f64> {
    let m = env.matrix(t, rng);
    if env.rows() == tasks {
        m
    } else {
        m.iter().copied().cycle().take(tasks * m.len()).collect()
    }
}

fn task_env<R: Rng>(config: &Config, a: &ConstraintAutomaton, rng: &mut R) -> Environment {
    let rows = if config.environment.common { 1 } else { a.task_count() };
    Environment::new(&config.environment, rows, a.num_actions(), config.game.rounds, rng)
}

fn play_standard<R: Rng>(
    config: &Config,
    a: &ConstraintAutomaton,
    eta: f64,
    trace: &mut Trace,
    frng: &mut R,
    erng: &mut R,
) -> Result<()> {
    let env = task_env(config, a, erng);
    let mut table = LossTable::for_automaton(a);
    let mut scratch = LatticeScratch::new();
    for t in 0..config.game.rounds {
        let lattice = forward_pass(a, &table, eta)?;
        let play = lattice.sample(frng)?;
        assert_legal(a, &play.actions);
        let round = task_losses(&env, a.task_count(), t, erng);
        let loss = round_loss(a, &round, &play.actions);
        table.accumulate(&round)?;
        let comparator = scratch.min_loss(a, table.as_slice()).0;
        trace.push(loss, comparator, lattice.relaxations(), format_play(a, &play.actions));
    }
    Ok(())
}

fn play_tracking<R: Rng>(
    config: &Config,
    a: &ConstraintAutomaton,
    max_switches: usize,
    eta: f64,
    trace: &mut Trace,
    frng: &mut R,
    erng: &mut R,
) -> Result<()> {
    let n = config.game.rounds;
    if n == 0 {
        return Ok(());
    }
    let env = task_env(config, a, erng);
    let mut forecaster = TrackingForecaster::new(a, n, max_switches, eta)?;
    for t in 0..n {
        let play = forecaster.sample(frng)?;
        assert_legal(a, &play.actions);
        let relaxations = forecaster.relaxations();
        let round = task_losses(&env, a.task_count(), t, erng);
        let loss = round_loss(a, &round, &play.actions);
        forecaster.observe(&round)?;
        trace.push(loss, forecaster.comparator_loss(), relaxations, format_play(a, &play.actions));
    }
    Ok(())
}

fn play_global<R: Rng>(
    config: &Config,
    a: &ConstraintAutomaton,
    aggregator: Aggregator,
    eta: f64,
    trace: &mut Trace,
    frng: &mut R,
    erng: &mut R,
) -> Result<()> {
    let env = Environment::new(&config.environment, 1, a.num_actions(), config.game.rounds, erng);
    let mut forecaster = GlobalForecaster::new(a, aggregator, eta)?;
    for t in 0..config.game.rounds {
        let round = forecaster.round()?;
        let play = round.sample(frng)?;
        assert_legal(a, &play.actions);
        let common = env.matrix(t, erng);
        let loss = global_round_loss(aggregator, &common, &play.actions);
        forecaster.observe(&common)?;
        trace.push(loss, forecaster.comparator_loss(), round.relaxations(), format_play(a, &play.actions));
    }
    Ok(())
}

fn play_continuum<R: Rng>(config: &Config, plan: &Plan, trace: &mut Trace, frng: &mut R, erng: &mut R) -> Result<()> {
    let grid = config.grid()?;
    let shifts = config.forecaster.shifts.expect("validated");
    let actions = config.action_set()?;
    let n_actions = actions.len();
    let mut forecaster = ContinuumForecaster::new(actions, grid.clone(), shifts, plan.eta)?;
    let env = Environment::new(&config.environment, 1, n_actions, config.game.rounds, erng);
    let mut comparator = ContinuumComparator::new(n_actions, shifts);
    for t in 0..config.game.rounds {
        let lattice = forecaster.round();
        let relaxations = lattice.relaxations();
        let play = forecaster.sample(frng)?;
        assert_legal(forecaster.automaton(), &play.assignment.actions);
        assert!(play.shifts() <= shifts, "profile with {} shifts", play.shifts());
        let losses = env.step_losses(t, erng);
        let loss = profile_loss(&losses, &play.profile);
        let integrated = forecaster.observe(&losses)?;
        for (i, v) in integrated.iter().enumerate() {
            let (lo, hi) = grid.cell(i / n_actions);
            assert!(*v >= 0.0 && *v <= hi - lo, "integrated loss {v} outside its cell range");
        }
        comparator.observe(&losses)?;
        let text = play.profile.iter().map(|&(s, k)| format!("{s}@{}", k + 1)).collect::<Vec<_>>().join(";");
        trace.push(loss, comparator.loss(), relaxations, text);
    }
    Ok(())
}
