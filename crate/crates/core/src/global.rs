//! Exponential weights for per-round global losses `psi(c(x_1), .., c(x_M))`
//! when every task shares the round's per-action loss vector `c`.
//!
//! For `max` and `min` the round loss depends on the vector only through the
//! set of actions it uses, so the cumulative global loss is a function of
//! that set. The lattice carries the set as an extra coordinate and applies
//! the exponential once, at the sink.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{ConstraintAutomaton, ConstraintState};
use crate::error::{Error, Result};
use crate::lattice::{count_legal, forward_pass_unchecked, LossTable, PlaySample, WeightLattice};
use crate::numeric::{log_sum_exp_slice, sample_log_categorical};

/// Largest action count the subset tracker accepts.
pub const MAX_TRACKED_ACTIONS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Max,
    Min,
    Sum,
}

impl Aggregator {
    /// Combines per-task losses in task order.
    pub fn apply(self, losses: impl IntoIterator<Item = f64>) -> f64 {
        let mut it = losses.into_iter();
        let first = it.next().unwrap_or(0.0);
        it.fold(first, |acc, l| self.combine(acc, l))
    }

    fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            Aggregator::Max => a.max(b),
            Aggregator::Min => a.min(b),
            Aggregator::Sum => a + b,
        }
    }

    /// Largest value the round loss can take for `tasks` tasks.
    pub fn range(self, tasks: usize) -> f64 {
        match self {
            Aggregator::Sum => tasks as f64,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Max => "max",
            Aggregator::Min => "min",
            Aggregator::Sum => "sum",
        })
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregator::Max),
            "min" => Ok(Aggregator::Min),
            "sum" => Ok(Aggregator::Sum),
            other => Err(Error::input(format!("unknown aggregator `{other}`, expected max, min or sum"))),
        }
    }
}

/// Global loss of a play for one round of common per-action losses.
pub fn global_round_loss(aggregator: Aggregator, common: &[f64], seq: &[usize]) -> f64 {
    aggregator.apply(seq.iter().map(|&k| common[k]))
}

/// Cumulative global loss `G(v)` of every non-empty action subset `v` (as a bitmask).
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSetTracker {
    aggregator: Aggregator,
    actions: usize,
    totals: Vec<f64>,
    rounds: usize,
}

impl ActionSetTracker {
    pub fn new(aggregator: Aggregator, actions: usize) -> Result<Self> {
        if aggregator == Aggregator::Sum {
            return Err(Error::param("the sum aggregator needs no subset tracker; use the standard forecaster"));
        }
        if actions == 0 || actions > MAX_TRACKED_ACTIONS {
            return Err(Error::param(format!(
                "global max/min losses track action subsets and support 1..={MAX_TRACKED_ACTIONS} actions, got {actions}"
            )));
        }
        Ok(ActionSetTracker { aggregator, actions, totals: vec![0.0; 1 << actions], rounds: 0 })
    }

    pub fn aggregator(&self) -> Aggregator {
        self.aggregator
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// `G(v)`; the empty set maps to zero.
    pub fn total(&self, subset: usize) -> f64 {
        self.totals[subset]
    }

    /// Adds `agg_{x in v} c(x)` to `G(v)` for every non-empty `v`.
    pub fn update(&mut self, common: &[f64]) -> Result<()> {
        check_common(common, self.actions)?;
        let mut round = vec![0.0; self.totals.len()];
        for v in 1..round.len() {
            let low = v.trailing_zeros() as usize;
            let rest = v & (v - 1);
            round[v] = if rest == 0 { common[low] } else { self.aggregator.combine(round[rest], common[low]) };
            self.totals[v] += round[v];
        }
        self.rounds += 1;
        Ok(())
    }
}

fn check_common(common: &[f64], actions: usize) -> Result<()> {
    if common.len() != actions {
        return Err(Error::input(format!("common losses have {} entries, expected {actions}", common.len())));
    }
    if let Some(bad) = common.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::input(format!("common loss {bad} outside [0, 1]")));
    }
    Ok(())
}

fn check_automaton(automaton: &ConstraintAutomaton) -> Result<()> {
    if automaton.has_no_play() {
        return Err(Error::param("global losses are defined for automata where every task plays"));
    }
    Ok(())
}

/// Log weights over (task, action, state, action subset).
#[derive(Clone, Debug)]
pub struct GlobalLattice<'a> {
    automaton: &'a ConstraintAutomaton,
    eta: f64,
    subsets: usize,
    layers: Vec<Vec<f64>>,
    sink_penalty: Vec<f64>,
    log_normalizer: f64,
    relaxations: u64,
}

/// Builds the subset-extended lattice; transitions carry no loss factor.
pub fn global_forward_pass<'a>(
    automaton: &'a ConstraintAutomaton,
    tracker: &ActionSetTracker,
    eta: f64,
) -> Result<GlobalLattice<'a>> {
    check_automaton(automaton)?;
    if tracker.actions() != automaton.num_actions() {
        return Err(Error::input("tracker and automaton disagree on the action count"));
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::param(format!("learning rate must be finite and non-negative, got {eta}")));
    }
    let n = automaton.num_actions();
    let states = automaton.num_states();
    let subsets = 1usize << n;
    let node = |k: usize, s: usize, v: usize| (k * states + s) * subsets + v;
    let width = n * states * subsets;
    let mut relaxations = 0u64;

    let mut first = vec![f64::NEG_INFINITY; width];
    for k in 0..n {
        if let Some(s) = automaton.initial(k).live() {
            first[node(k, s, 1 << k)] = 0.0;
            relaxations += 1;
        }
    }
    let mut layers = vec![first];
    let mut buf = Vec::new();
    for j in 1..automaton.task_count() {
        let prev = &layers[j - 1];
        let mut next = vec![f64::NEG_INFINITY; width];
        for k2 in 0..n {
            for s2 in 0..states {
                let preds = automaton.predecessors(k2, s2);
                if preds.is_empty() {
                    continue;
                }
                for v2 in (1..subsets).filter(|v| v & (1 << k2) != 0) {
                    buf.clear();
                    for &(k, s) in preds {
                        for v in [v2, v2 & !(1 << k2)] {
                            relaxations += 1;
                            if v & (1 << k) != 0 {
                                buf.push(prev[node(k, s, v)]);
                            }
                        }
                    }
                    next[node(k2, s2, v2)] = log_sum_exp_slice(&buf);
                }
            }
        }
        layers.push(next);
    }
    let sink_penalty: Vec<f64> = (0..subsets).map(|v| -eta * tracker.total(v)).collect();
    let sink = layers.last().expect("at least one task");
    let mut terms = Vec::new();
    for k in 0..n {
        for s in (0..states).filter(|&s| automaton.is_accepting(s)) {
            for v in 1..subsets {
                terms.push(sink[node(k, s, v)] + sink_penalty[v]);
            }
        }
    }
    let log_normalizer = log_sum_exp_slice(&terms);
    Ok(GlobalLattice { automaton, eta, subsets, layers, sink_penalty, log_normalizer, relaxations })
}

impl<'a> GlobalLattice<'a> {
    fn node(&self, k: usize, s: usize, v: usize) -> usize {
        (k * self.automaton.num_states() + s) * self.subsets + v
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn relaxations(&self) -> u64 {
        self.relaxations
    }

    pub fn log_normalizer(&self) -> Result<f64> {
        if self.log_normalizer == f64::NEG_INFINITY {
            Err(Error::EmptyLegalSet)
        } else {
            Ok(self.log_normalizer)
        }
    }

    /// Predecessor nodes of `(k2, s2, v2)` in the previous layer.
    fn predecessors(&self, k2: usize, s2: usize, v2: usize) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &(k, s) in self.automaton.predecessors(k2, s2) {
            for v in [v2, v2 & !(1 << k2)] {
                if v & (1 << k) != 0 {
                    out.push((k, s, v));
                }
            }
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PlaySample> {
        self.log_normalizer()?;
        let a = self.automaton;
        let m = a.task_count();
        let sink = &self.layers[m - 1];
        let mut cands = Vec::new();
        let mut weights = Vec::new();
        for k in 0..a.num_actions() {
            for s in (0..a.num_states()).filter(|&s| a.is_accepting(s)) {
                for v in 1..self.subsets {
                    cands.push((k, s, v));
                    weights.push(sink[self.node(k, s, v)] + self.sink_penalty[v]);
                }
            }
        }
        let pick = sample_log_categorical(&weights, rng).ok_or_else(|| Error::Invariant("empty sink".into()))?;
        let (mut k, mut s, mut v) = cands[pick];
        let mut actions = vec![0; m];
        let mut states = vec![0; m];
        actions[m - 1] = k;
        states[m - 1] = s;
        for j in (0..m - 1).rev() {
            let preds = self.predecessors(k, s, v);
            let w: Vec<f64> = preds.iter().map(|&(pk, ps, pv)| self.layers[j][self.node(pk, ps, pv)]).collect();
            let pick = sample_log_categorical(&w, rng)
                .ok_or_else(|| Error::Invariant(format!("no predecessor mass at task {}", j + 1)))?;
            (k, s, v) = preds[pick];
            actions[j] = k;
            states[j] = s;
        }
        Ok(PlaySample::from_path(a, actions, states))
    }

    /// Log probability of `seq` along the backward conditional chain; `-inf` if illegal.
    pub fn log_prob_of(&self, seq: &[usize]) -> f64 {
        let a = self.automaton;
        if seq.len() != a.task_count() || seq.iter().any(|&k| k >= a.num_actions()) || !a.accepts(seq) {
            return f64::NEG_INFINITY;
        }
        let m = seq.len();
        let mut states = Vec::with_capacity(m);
        let mut subsets = Vec::with_capacity(m);
        let mut st = a.initial(seq[0]);
        let mut v = 0usize;
        for (j, &k) in seq.iter().enumerate() {
            if j > 0 {
                st = a.step(seq[j - 1], st, k);
            }
            v |= 1 << k;
            states.push(match st {
                ConstraintState::Live(s) => s,
                ConstraintState::Dead => return f64::NEG_INFINITY,
            });
            subsets.push(v);
        }
        let last = self.node(seq[m - 1], states[m - 1], subsets[m - 1]);
        let mut lp = self.layers[m - 1][last] + self.sink_penalty[subsets[m - 1]] - self.log_normalizer;
        for j in (0..m - 1).rev() {
            let preds = self.predecessors(seq[j + 1], states[j + 1], subsets[j + 1]);
            let w: Vec<f64> = preds.iter().map(|&(pk, ps, pv)| self.layers[j][self.node(pk, ps, pv)]).collect();
            lp += self.layers[j][self.node(seq[j], states[j], subsets[j])] - log_sum_exp_slice(&w);
        }
        lp
    }

    pub fn prob_of(&self, seq: &[usize]) -> f64 {
        self.log_prob_of(seq).exp()
    }
}

/// Learning rate `sqrt(8 ln|A| / n) / range`, with range 1 for max/min and `M` for sum.
pub fn global_eta(horizon: usize, automaton: &ConstraintAutomaton, aggregator: Aggregator) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::param("horizon must be at least 1"));
    }
    let ln_legal = count_legal(automaton).ln;
    if ln_legal == f64::NEG_INFINITY {
        return Err(Error::EmptyLegalSet);
    }
    Ok((8.0 * ln_legal / horizon as f64).sqrt() / aggregator.range(automaton.task_count()))
}

#[derive(Clone, Debug)]
enum GlobalState {
    Subsets(ActionSetTracker),
    Sum(LossTable),
}

/// Forecaster for global losses over common per-action losses.
#[derive(Clone, Debug)]
pub struct GlobalForecaster<'a> {
    automaton: &'a ConstraintAutomaton,
    aggregator: Aggregator,
    eta: f64,
    state: GlobalState,
    relaxations: u64,
}

/// The current round's distribution, in whichever lattice the aggregator needs.
#[derive(Clone, Debug)]
pub enum GlobalRound<'a> {
    Subsets(GlobalLattice<'a>),
    Sum(WeightLattice<'a>),
}

impl GlobalRound<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PlaySample> {
        match self {
            GlobalRound::Subsets(l) => l.sample(rng),
            GlobalRound::Sum(l) => l.sample(rng),
        }
    }

    pub fn prob_of(&self, seq: &[usize]) -> f64 {
        match self {
            GlobalRound::Subsets(l) => l.prob_of(seq),
            GlobalRound::Sum(l) => l.prob_of(seq),
        }
    }

    pub fn log_normalizer(&self) -> Result<f64> {
        match self {
            GlobalRound::Subsets(l) => l.log_normalizer(),
            GlobalRound::Sum(l) => l.log_normalizer(),
        }
    }

    pub fn relaxations(&self) -> u64 {
        match self {
            GlobalRound::Subsets(l) => l.relaxations(),
            GlobalRound::Sum(l) => l.relaxations(),
        }
    }
}

impl<'a> GlobalForecaster<'a> {
    pub fn new(automaton: &'a ConstraintAutomaton, aggregator: Aggregator, eta: f64) -> Result<Self> {
        check_automaton(automaton)?;
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::param(format!("learning rate must be finite and non-negative, got {eta}")));
        }
        let state = match aggregator {
            Aggregator::Sum => GlobalState::Sum(LossTable::for_automaton(automaton)),
            agg => GlobalState::Subsets(ActionSetTracker::new(agg, automaton.num_actions())?),
        };
        Ok(GlobalForecaster { automaton, aggregator, eta, state, relaxations: 0 })
    }

    pub fn aggregator(&self) -> Aggregator {
        self.aggregator
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Edge relaxations of the latest `round` call.
    pub fn relaxations(&self) -> u64 {
        self.relaxations
    }

    /// Distribution for the next round.
    pub fn round(&mut self) -> Result<GlobalRound<'a>> {
        let r = match &self.state {
            GlobalState::Subsets(t) => GlobalRound::Subsets(global_forward_pass(self.automaton, t, self.eta)?),
            GlobalState::Sum(t) => GlobalRound::Sum(forward_pass_unchecked(self.automaton, t.as_slice(), self.eta)),
        };
        self.relaxations = r.relaxations();
        Ok(r)
    }

    /// Records one round of common per-action losses.
    pub fn observe(&mut self, common: &[f64]) -> Result<()> {
        match &mut self.state {
            GlobalState::Subsets(t) => t.update(common),
            GlobalState::Sum(t) => {
                check_common(common, self.automaton.num_actions())?;
                let row: Vec<f64> = (0..self.automaton.task_count()).flat_map(|_| common.iter().copied()).collect();
                t.accumulate(&row)
            }
        }
    }

    /// Least cumulative global loss over the legal set so far.
    pub fn comparator_loss(&self) -> f64 {
        match &self.state {
            GlobalState::Subsets(t) => {
                reachable_subsets(self.automaton).into_iter().map(|v| t.total(v)).fold(f64::INFINITY, f64::min)
            }
            GlobalState::Sum(t) => crate::lattice::best_fixed_unchecked(self.automaton, t.as_slice()).0.loss,
        }
    }
}

/// Action subsets used by at least one legal vector.
pub fn reachable_subsets(automaton: &ConstraintAutomaton) -> Vec<usize> {
    let n = automaton.num_actions();
    let states = automaton.num_states();
    let subsets = 1usize << n;
    let node = |k: usize, s: usize, v: usize| (k * states + s) * subsets + v;
    let mut layer = vec![false; n * states * subsets];
    for k in 0..n {
        if let Some(s) = automaton.initial(k).live() {
            layer[node(k, s, 1 << k)] = true;
        }
    }
    for _ in 1..automaton.task_count() {
        let mut next = vec![false; layer.len()];
        for k in 0..n {
            for s in 0..states {
                for v in 1..subsets {
                    if !layer[node(k, s, v)] {
                        continue;
                    }
                    for k2 in 0..n {
                        if let Some(s2) = automaton.step(k, ConstraintState::Live(s), k2).live() {
                            next[node(k2, s2, v | (1 << k2))] = true;
                        }
                    }
                }
            }
        }
        layer = next;
    }
    let mut found = vec![false; subsets];
    for k in 0..n {
        for s in (0..states).filter(|&s| automaton.is_accepting(s)) {
            for (v, f) in found.iter_mut().enumerate() {
                *f |= layer[node(k, s, v)];
            }
        }
    }
    (1..subsets).filter(|&v| found[v]).collect()
}
