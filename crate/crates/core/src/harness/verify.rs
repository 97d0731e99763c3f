//! Oracle-versus-lattice equivalence suite for desk-scale instances.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Config, Mode};
use crate::constraint::{ActionSet, ConstraintAutomaton};
use crate::continuum::{
    best_in_continuum, discretize, integrate_losses, ContinuumComparator, ContinuumForecaster, PiecewiseConstantLoss,
    StepFunction,
};
use crate::error::{Error, Result};
use crate::global::{global_round_loss, Aggregator, GlobalForecaster, MAX_TRACKED_ACTIONS};
use crate::lattice::{best_fixed, count_legal, forward_pass, round_loss, LossTable};
use crate::numeric::{log_sum_exp_slice, relative_error};
use crate::oracle::{
    enumerate_legal, enumerate_switching, normalize_log_weights, oracle_best_fixed, oracle_count, oracle_distribution,
    oracle_log_normalizer, DEFAULT_CAP,
};
use crate::tracking::{switching_comparator, TrackingForecaster};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "outcome", content = "detail", rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail(String),
    Refused(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    /// `None` for exact comparisons.
    pub tolerance: Option<f64>,
    /// Largest discrepancy seen.
    pub observed: Option<f64>,
    pub outcome: Outcome,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail(_) => "FAIL",
            Outcome::Refused(_) => "REFUSED",
        };
        write!(f, "{tag:<8}{:<28}", self.name)?;
        match self.tolerance {
            Some(t) => write!(f, "tol={t:<8e}")?,
            None => write!(f, "{:<12}", "exact")?,
        }
        if let Some(o) = self.observed {
            write!(f, " observed={o:.3e}")?;
        }
        match &self.outcome {
            Outcome::Pass => Ok(()),
            Outcome::Fail(d) | Outcome::Refused(d) => write!(f, "  {d}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    /// True when no check failed; refusals do not count as failures.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| !matches!(c.outcome, Outcome::Fail(_)))
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.checks.iter().filter(|c| matches!(c.outcome, Outcome::Fail(_))).count();
        let refused = self.checks.iter().filter(|c| matches!(c.outcome, Outcome::Refused(_))).count();
        write!(f, "{} checks, {failed} failed, {refused} refused", self.checks.len())
    }
}

/// Discrepancy and verdict of one comparison.
struct Measured {
    observed: Option<f64>,
    failure: Option<String>,
}

impl Measured {
    fn within(observed: f64, tolerance: f64) -> Self {
        let failure = (!(observed <= tolerance)).then(|| format!("discrepancy {observed:e} above tolerance"));
        Measured { observed: Some(observed), failure }
    }

    fn exact(ok: bool, detail: impl FnOnce() -> String) -> Self {
        Measured { observed: None, failure: (!ok).then(detail) }
    }
}

fn check(name: &'static str, tolerance: Option<f64>, body: impl FnOnce() -> Result<Measured>) -> Check {
    let (observed, outcome) = match body() {
        Ok(Measured { observed, failure: None }) => (observed, Outcome::Pass),
        Ok(Measured { observed, failure: Some(d) }) => (observed, Outcome::Fail(d)),
        Err(e @ Error::CapExceeded { .. }) => (None, Outcome::Refused(e.to_string())),
        Err(e) => (None, Outcome::Fail(e.to_string())),
    };
    Check { name, tolerance, observed, outcome }
}

/// Settings of the suite beyond the automaton itself.
#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    pub eta: f64,
    /// Rounds of loss history fed to the checks.
    pub rounds: usize,
    pub switches: usize,
    pub eps: f64,
    pub shifts: usize,
    pub continuum_actions: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 0, eta: 1.3, rounds: 4, switches: 1, eps: 0.25, shifts: 1, continuum_actions: 2 }
    }
}

/// Runs the whole suite on the instance described by `config`.
pub fn verify(config: &Config) -> Result<VerifyReport> {
    config.validate()?;
    let f = &config.forecaster;
    let mut opts = VerifyOptions { seed: config.game.seed, ..VerifyOptions::default() };
    if let Some(k) = f.switches {
        opts.switches = k;
    }
    if f.mode == Mode::Continuum {
        opts.eps = f.eps.expect("validated");
        opts.shifts = f.shifts.expect("validated");
        opts.continuum_actions = config.action_set()?.len();
    }
    let mut report = VerifyReport::default();
    if f.mode != Mode::Continuum {
        let a = config.automaton()?;
        report.checks.extend(verify_automaton(&a, &opts));
    }
    report.checks.extend(verify_continuum(&opts));
    Ok(report)
}

fn random_table(a: &ConstraintAutomaton, rounds: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rounds).map(|_| (0..a.task_count() * a.num_actions()).map(|_| rng.random()).collect()).collect()
}

fn dyadic_rounds(len: usize, rounds: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rounds).map(|_| (0..len).map(|_| rng.random_range(0..=8) as f64 / 8.0).collect()).collect()
}

fn cumulate(a: &ConstraintAutomaton, rounds: &[Vec<f64>]) -> Result<LossTable> {
    let mut table = LossTable::for_automaton(a);
    for r in rounds {
        table.accumulate(r)?;
    }
    Ok(table)
}

/// Every sequence over the choice alphabet, with its acceptance under the full step map.
fn all_sequences(a: &ConstraintAutomaton) -> Result<Vec<Vec<usize>>> {
    let m = a.task_count();
    let needed = (a.choices() as f64).powi(m as i32);
    if needed > DEFAULT_CAP {
        return Err(Error::CapExceeded { what: "full sequence enumeration", needed, cap: DEFAULT_CAP });
    }
    let mut out = vec![Vec::new()];
    for _ in 0..m {
        out = out.into_iter().flat_map(|p| (0..a.choices()).map(move |k| [p.clone(), vec![k]].concat())).collect();
    }
    Ok(out)
}

/// Checks for one constraint automaton: counts, distributions, comparators, tracking and global losses.
pub fn verify_automaton(a: &ConstraintAutomaton, opts: &VerifyOptions) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let history = random_table(a, opts.rounds, &mut rng);
    let mut checks = Vec::new();

    checks.push(check("markov_consistency", None, || {
        let folded = all_sequences(a)?.iter().filter(|s| a.is_legal(s).unwrap_or(false)).count() as u128;
        let lattice = count_legal(a).exact;
        let absorbing = a.dead_state_absorbing();
        Ok(Measured::exact(absorbing && lattice == Some(folded), || {
            format!(
                "dead state absorbing: {absorbing}; lattice count {lattice:?}, sequences accepted by folding {folded}"
            )
        }))
    }));

    checks.push(check("legal_count", None, || {
        let set = enumerate_legal(a)?;
        let lattice = count_legal(a).exact;
        let oracle = oracle_count(&set);
        Ok(Measured::exact(lattice == Some(oracle), || format!("lattice {lattice:?}, oracle {oracle}")))
    }));

    checks.push(check("distribution", Some(1e-9), || {
        let set = enumerate_legal(a)?;
        let table = cumulate(a, &history)?;
        let law = oracle_distribution(&set, &table, opts.eta)?;
        let lattice = forward_pass(a, &table, opts.eta)?;
        let worst = set.iter().zip(&law).map(|(s, p)| relative_error(lattice.prob_of(s), *p)).fold(0.0, f64::max);
        Ok(Measured::within(worst, 1e-9))
    }));

    checks.push(check("log_normalizer", Some(1e-10), || {
        let set = enumerate_legal(a)?;
        let table = cumulate(a, &history)?;
        let lattice = forward_pass(a, &table, opts.eta)?;
        Ok(Measured::within((lattice.log_normalizer()? - oracle_log_normalizer(&set, &table, opts.eta)).abs(), 1e-10))
    }));

    checks.push(check("best_fixed", None, || {
        let set = enumerate_legal(a)?;
        let rounds = dyadic_rounds(a.task_count() * a.num_actions(), opts.rounds, &mut rng.clone());
        let table = cumulate(a, &rounds)?;
        let (lattice, oracle) = (best_fixed(a, &table)?, oracle_best_fixed(&set, &table)?);
        Ok(Measured::exact(lattice == oracle, || format!("lattice {lattice:?}, oracle {oracle:?}")))
    }));

    checks.push(check("sampler_support", None, || {
        let table = cumulate(a, &history)?;
        let lattice = forward_pass(a, &table, opts.eta)?;
        let mut r = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
        for _ in 0..2000 {
            let s = lattice.sample(&mut r)?;
            if !a.is_legal(&s.actions)? || !(lattice.prob_of(&s.actions) > 0.0) {
                return Ok(Measured::exact(false, || format!("sampled {:?} outside the support", s.actions)));
            }
        }
        Ok(Measured::exact(true, String::new))
    }));

    let tracking_rounds = opts.rounds.clamp(1, 4);
    checks.push(check("tracking_predictive", Some(1e-9), || {
        let horizon = tracking_rounds + 1;
        let class = enumerate_switching(a, horizon, opts.switches)?;
        let rounds = dyadic_rounds(a.task_count() * a.num_actions(), tracking_rounds, &mut rng.clone());
        let mut f = TrackingForecaster::new(a, horizon, opts.switches, opts.eta)?;
        let mut worst: f64 = 0.0;
        for t in 0..=tracking_rounds {
            let (_, law) = f.exact_predictive()?;
            let mut logs = vec![Vec::new(); class.legal.len()];
            for m in &class.members {
                let loss: f64 = (0..t).map(|s| round_loss(a, &rounds[s], &class.legal.sequences()[m[s]])).sum();
                logs[m[t]].push(-opts.eta * loss);
            }
            let flat: Vec<f64> = logs.iter().map(|l| log_sum_exp_slice(l)).collect();
            let brute = normalize_log_weights(&flat);
            let tv = law.iter().zip(&brute).map(|(p, q)| (p - q).abs()).sum::<f64>() / 2.0;
            worst = worst.max(tv);
            if t < tracking_rounds {
                f.observe(&rounds[t])?;
            }
        }
        Ok(Measured::within(worst, 1e-9))
    }));

    checks.push(check("tracking_comparator", None, || {
        let class = enumerate_switching(a, tracking_rounds, opts.switches)?;
        let rounds = dyadic_rounds(a.task_count() * a.num_actions(), tracking_rounds, &mut rng.clone());
        let brute = class
            .members
            .iter()
            .map(|m| {
                (0..tracking_rounds).map(|s| round_loss(a, &rounds[s], &class.legal.sequences()[m[s]])).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        let dp = switching_comparator(a, &rounds, opts.switches)?.loss;
        Ok(Measured::exact(dp == brute, || format!("dynamic program {dp}, exhaustive {brute}")))
    }));

    for (name, agg) in [("global_max", Aggregator::Max), ("global_min", Aggregator::Min)] {
        checks.push(check(name, Some(1e-9), || {
            if a.has_no_play() || a.num_actions() > MAX_TRACKED_ACTIONS {
                return Err(Error::CapExceeded {
                    what: "global-loss check (needs real actions only, at most 12)",
                    needed: a.choices() as f64,
                    cap: MAX_TRACKED_ACTIONS as f64,
                });
            }
            let set = enumerate_legal(a)?;
            let mut r = rng.clone();
            let commons: Vec<Vec<f64>> =
                (0..opts.rounds).map(|_| (0..a.num_actions()).map(|_| r.random()).collect()).collect();
            let mut f = GlobalForecaster::new(a, agg, opts.eta)?;
            for c in &commons {
                f.observe(c)?;
            }
            let logs: Vec<f64> = set
                .iter()
                .map(|s| -opts.eta * commons.iter().map(|c| global_round_loss(agg, c, s)).sum::<f64>())
                .collect();
            let law = normalize_log_weights(&logs);
            let round = f.round()?;
            let worst = set.iter().zip(&law).map(|(s, p)| relative_error(round.prob_of(s), *p)).fold(0.0, f64::max);
            Ok(Measured::within(worst, 1e-9))
        }));
    }

    checks.push(check("global_sum_matches_standard", Some(1e-12), || {
        if a.has_no_play() {
            return Err(Error::CapExceeded {
                what: "global-loss check (needs real actions only)",
                needed: 1.0,
                cap: 0.0,
            });
        }
        let set = enumerate_legal(a)?;
        let mut r = rng.clone();
        let commons: Vec<Vec<f64>> =
            (0..opts.rounds).map(|_| (0..a.num_actions()).map(|_| r.random()).collect()).collect();
        let mut f = GlobalForecaster::new(a, Aggregator::Sum, opts.eta)?;
        let mut table = LossTable::for_automaton(a);
        for c in &commons {
            f.observe(c)?;
            let row: Vec<f64> = (0..a.task_count()).flat_map(|_| c.iter().copied()).collect();
            table.accumulate(&row)?;
        }
        let standard = forward_pass(a, &table, opts.eta)?;
        let round = f.round()?;
        let worst = set.iter().map(|s| (round.prob_of(s) - standard.prob_of(s)).abs()).fold(0.0, f64::max);
        Ok(Measured::within(worst, 1e-12))
    }));

    checks
}

fn random_step_loss(actions: usize, rng: &mut ChaCha8Rng) -> PiecewiseConstantLoss {
    let per_action = (0..actions)
        .map(|_| {
            let mut starts: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            starts.push(0.0);
            starts.sort_by(f64::total_cmp);
            starts.dedup();
            let values = starts.iter().map(|_| rng.random()).collect();
            StepFunction::new(starts, values).expect("starts sorted in [0, 1)")
        })
        .collect();
    PiecewiseConstantLoss::new(per_action).expect("one function per action")
}

/// Continuum checks on the grid of resolution `opts.eps`.
pub fn verify_continuum(opts: &VerifyOptions) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let history: Vec<PiecewiseConstantLoss> =
        (0..opts.rounds.max(1)).map(|_| random_step_loss(opts.continuum_actions, &mut rng)).collect();
    let mut checks = Vec::new();

    checks.push(check("continuum_integrals", None, || {
        let grid = discretize(opts.eps)?;
        for l in &history {
            for (i, v) in integrate_losses(l, &grid).iter().enumerate() {
                let (lo, hi) = grid.cell(i / opts.continuum_actions);
                if !(*v >= 0.0 && *v <= hi - lo && *v <= grid.eps()) {
                    return Ok(Measured::exact(false, || {
                        format!("cell {} integrates to {v}", i / opts.continuum_actions)
                    }));
                }
            }
        }
        Ok(Measured::exact(true, String::new))
    }));

    checks.push(check("continuum_distribution", Some(1e-9), || {
        let grid = discretize(opts.eps)?;
        let actions = ActionSet::integers(opts.continuum_actions)?;
        let mut f = ContinuumForecaster::new(actions, grid, opts.shifts, opts.eta)?;
        for l in &history {
            f.observe(l)?;
        }
        let set = enumerate_legal(f.automaton())?;
        let law = oracle_distribution(&set, f.table(), opts.eta)?;
        let lattice = f.round();
        let worst = set.iter().zip(&law).map(|(s, p)| relative_error(lattice.prob_of(s), *p)).fold(0.0, f64::max);
        Ok(Measured::within(worst, 1e-9))
    }));

    checks.push(check("continuum_comparator", Some(1e-9), || {
        let mut running = ContinuumComparator::new(opts.continuum_actions, opts.shifts);
        for l in &history {
            running.observe(l)?;
        }
        let batch = best_in_continuum(&history, opts.shifts)?;
        Ok(Measured::within((running.loss() - batch).abs(), 1e-9))
    }));

    checks
}
