//! Exponentially weighted average over a constrained action set, computed on
//! the task/action/state lattice.
//!
//! Node `(j, k, s)` carries the total weight of all legal prefixes of length
//! `j + 1` that end with action `k` in state `s`. One forward sweep fills every
//! layer; a backward sweep then draws the sink pair and each earlier pair
//! conditioned on its successor. The same layer traversal, run in the
//! counting and min-plus semirings, gives `|A|` and the best fixed comparator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::ConstraintAutomaton;
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp_slice, sample_log_categorical};

/// Cumulative per-task, per-action losses after `rounds` rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTable {
    tasks: usize,
    actions: usize,
    rounds: usize,
    cumulative: Vec<f64>,
}

impl LossTable {
    pub fn new(tasks: usize, actions: usize) -> Self {
        LossTable { tasks, actions, rounds: 0, cumulative: vec![0.0; tasks * actions] }
    }

    pub fn for_automaton(automaton: &ConstraintAutomaton) -> Self {
        Self::new(automaton.task_count(), automaton.num_actions())
    }

    /// Wraps precomputed cumulative losses (row-major, task by action).
    pub fn from_cumulative(tasks: usize, actions: usize, rounds: usize, cumulative: Vec<f64>) -> Result<Self> {
        if cumulative.len() != tasks * actions {
            return Err(Error::input(format!(
                "cumulative table has {} entries, expected {tasks}x{actions}",
                cumulative.len()
            )));
        }
        if cumulative.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::input("cumulative losses must be finite and non-negative"));
        }
        Ok(LossTable { tasks, actions, rounds, cumulative })
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn get(&self, task: usize, action: usize) -> f64 {
        self.cumulative[task * self.actions + action]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.cumulative
    }

    /// Adds one round of per-task losses (row-major `tasks x actions`, each in `[0, 1]`).
    pub fn accumulate(&mut self, round: &[f64]) -> Result<()> {
        check_round(round, self.tasks, self.actions)?;
        for (c, l) in self.cumulative.iter_mut().zip(round) {
            *c += l;
        }
        self.rounds += 1;
        Ok(())
    }

    pub fn accumulated(&self, round: &[f64]) -> Result<LossTable> {
        let mut next = self.clone();
        next.accumulate(round)?;
        Ok(next)
    }

    /// Cumulative loss `sum_j L_j(x_j)` of a choice sequence, summed in task order.
    /// The no-play choice costs nothing.
    pub fn loss_of(&self, automaton: &ConstraintAutomaton, seq: &[usize]) -> f64 {
        let mut total = 0.0;
        for (j, &k) in seq.iter().enumerate() {
            if !automaton.is_no_play(k) {
                total += self.get(j, k);
            }
        }
        total
    }
}

/// Checks a per-round loss matrix: right shape, entries in `[0, 1]`.
pub fn check_round(round: &[f64], tasks: usize, actions: usize) -> Result<()> {
    if round.len() != tasks * actions {
        return Err(Error::input(format!("round losses have {} entries, expected {tasks}x{actions}", round.len())));
    }
    if let Some(bad) = round.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::input(format!("round loss {bad} outside [0, 1]")));
    }
    Ok(())
}

/// Loss of one round for a choice sequence, summed in task order.
pub fn round_loss(automaton: &ConstraintAutomaton, round: &[f64], seq: &[usize]) -> f64 {
    let n = automaton.num_actions();
    let mut total = 0.0;
    for (j, &k) in seq.iter().enumerate() {
        if !automaton.is_no_play(k) {
            total += round[j * n + k];
        }
    }
    total
}

/// One draw from the forecaster: a legal choice per task with the states visited.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaySample {
    pub actions: Vec<usize>,
    pub states: Vec<usize>,
    /// Real action values, `None` where the no-play choice was taken.
    pub values: Vec<Option<f64>>,
}

impl PlaySample {
    pub(crate) fn from_path(automaton: &ConstraintAutomaton, actions: Vec<usize>, states: Vec<usize>) -> Self {
        let values = actions.iter().map(|&k| automaton.action_value(k)).collect();
        PlaySample { actions, states, values }
    }
}

/// A semiring evaluated over the layered constraint graph.
pub(crate) trait LayerSemiring {
    type Value: Copy;

    fn empty(&self) -> Self::Value;

    /// Value of a first-task node whose action has loss `loss`.
    fn start(&self, loss: f64) -> Self::Value;

    /// Combines the predecessors of a node whose own action has loss `loss`.
    fn combine(&self, prev: &[Self::Value], preds: &[(usize, usize)], states: usize, loss: f64) -> Self::Value;

    fn finish_layer(&mut self, _layer: &mut [Self::Value], _states: usize) {}
}

/// Runs `semiring` over every layer. Returns all layers and the number of edge relaxations.
pub(crate) fn traverse<S: LayerSemiring>(
    automaton: &ConstraintAutomaton,
    loss: impl Fn(usize, usize) -> f64,
    semiring: &mut S,
) -> (Vec<Vec<S::Value>>, u64) {
    let choices = automaton.choices();
    let states = automaton.num_states();
    let mut relaxations = 0u64;
    let mut layers = Vec::with_capacity(automaton.task_count());

    let mut first = vec![semiring.empty(); choices * states];
    for (k, slot) in (0..choices).filter_map(|k| automaton.initial(k).live().map(|s| (k, s))) {
        first[k * states + slot] = semiring.start(loss(0, k));
        relaxations += 1;
    }
    semiring.finish_layer(&mut first, states);
    layers.push(first);

    for j in 1..automaton.task_count() {
        let prev = &layers[j - 1];
        let mut next = vec![semiring.empty(); choices * states];
        for k2 in 0..choices {
            let l = loss(j, k2);
            for s2 in 0..states {
                let preds = automaton.predecessors(k2, s2);
                if preds.is_empty() {
                    continue;
                }
                relaxations += preds.len() as u64;
                next[k2 * states + s2] = semiring.combine(prev, preds, states, l);
            }
        }
        semiring.finish_layer(&mut next, states);
        layers.push(next);
    }
    (layers, relaxations)
}

/// Sum semiring in the log domain, with node factor `exp(-eta * loss)`.
struct LogSum {
    eta: f64,
}

impl LayerSemiring for LogSum {
    type Value = f64;

    fn empty(&self) -> f64 {
        f64::NEG_INFINITY
    }

    fn start(&self, loss: f64) -> f64 {
        -self.eta * loss
    }

    fn combine(&self, prev: &[f64], preds: &[(usize, usize)], states: usize, loss: f64) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for &(k, s) in preds {
            max = max.max(prev[k * states + s]);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        let mut sum = 0.0;
        for &(k, s) in preds {
            sum += (prev[k * states + s] - max).exp();
        }
        max + sum.ln() - self.eta * loss
    }
}

/// Path counting with overflow detection.
struct Counting;

impl LayerSemiring for Counting {
    type Value = Option<u128>;

    fn empty(&self) -> Option<u128> {
        Some(0)
    }

    fn start(&self, _loss: f64) -> Option<u128> {
        Some(1)
    }

    fn combine(&self, prev: &[Option<u128>], preds: &[(usize, usize)], states: usize, _loss: f64) -> Option<u128> {
        preds.iter().try_fold(0u128, |acc, &(k, s)| acc.checked_add(prev[k * states + s]?))
    }
}

#[derive(Clone, Copy, Debug)]
struct Tropical {
    loss: f64,
    /// Lexicographic rank of the best prefix within its layer (before `finish_layer`: rank of its predecessor).
    rank: usize,
    back: usize,
}

/// Min-plus with lexicographic tie-breaking on the action-index prefix.
struct MinPlusLex;

impl LayerSemiring for MinPlusLex {
    type Value = Tropical;

    fn empty(&self) -> Tropical {
        Tropical { loss: f64::INFINITY, rank: usize::MAX, back: usize::MAX }
    }

    fn start(&self, loss: f64) -> Tropical {
        Tropical { loss, rank: 0, back: usize::MAX }
    }

    fn combine(&self, prev: &[Tropical], preds: &[(usize, usize)], states: usize, loss: f64) -> Tropical {
        let mut best = self.empty();
        for &(k, s) in preds {
            let node = k * states + s;
            let p = prev[node];
            if p.loss == f64::INFINITY {
                continue;
            }
            let cand = p.loss + loss;
            if cand < best.loss || (cand == best.loss && p.rank < best.rank) {
                best = Tropical { loss: cand, rank: p.rank, back: node };
            }
        }
        best
    }

    fn finish_layer(&mut self, layer: &mut [Tropical], states: usize) {
        // New prefix = predecessor prefix followed by this node's action.
        let mut order: Vec<usize> = (0..layer.len()).filter(|&i| layer[i].loss < f64::INFINITY).collect();
        order.sort_by_key(|&i| (layer[i].rank, i / states));
        for (rank, i) in order.into_iter().enumerate() {
            layer[i].rank = rank;
        }
    }
}

fn task_loss<'t>(automaton: &'t ConstraintAutomaton, losses: &'t [f64]) -> impl Fn(usize, usize) -> f64 + 't {
    let n = automaton.num_actions();
    move |j, k| if automaton.is_no_play(k) { 0.0 } else { losses[j * n + k] }
}

fn check_table(automaton: &ConstraintAutomaton, table: &LossTable) -> Result<()> {
    if table.tasks() != automaton.task_count() || table.actions() != automaton.num_actions() {
        return Err(Error::input(format!(
            "loss table is {}x{}, automaton needs {}x{}",
            table.tasks(),
            table.actions(),
            automaton.task_count(),
            automaton.num_actions()
        )));
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::param(format!("learning rate must be finite and non-negative, got {eta}")));
    }
    Ok(())
}

/// Log-domain weights of every lattice node for one round.
#[derive(Clone, Debug)]
pub struct WeightLattice<'a> {
    automaton: &'a ConstraintAutomaton,
    eta: f64,
    layers: Vec<Vec<f64>>,
    log_normalizer: f64,
    relaxations: u64,
}

/// Builds the weight lattice for cumulative losses `table` at learning rate `eta`.
pub fn forward_pass<'a>(automaton: &'a ConstraintAutomaton, table: &LossTable, eta: f64) -> Result<WeightLattice<'a>> {
    check_table(automaton, table)?;
    check_eta(eta)?;
    Ok(forward_pass_unchecked(automaton, table.as_slice(), eta))
}

pub(crate) fn forward_pass_unchecked<'a>(
    automaton: &'a ConstraintAutomaton,
    losses: &[f64],
    eta: f64,
) -> WeightLattice<'a> {
    let (layers, relaxations) = traverse(automaton, task_loss(automaton, losses), &mut LogSum { eta });
    let states = automaton.num_states();
    let sink = layers.last().expect("at least one task");
    let accepted: Vec<f64> = sink_nodes(automaton).map(|(k, s)| sink[k * states + s]).collect();
    let log_normalizer = log_sum_exp_slice(&accepted);
    WeightLattice { automaton, eta, layers, log_normalizer, relaxations }
}

fn sink_nodes(automaton: &ConstraintAutomaton) -> impl Iterator<Item = (usize, usize)> + '_ {
    let states = automaton.num_states();
    (0..automaton.choices())
        .flat_map(move |k| (0..states).map(move |s| (k, s)))
        .filter(|&(_, s)| automaton.is_accepting(s))
}

impl<'a> WeightLattice<'a> {
    pub fn automaton(&self) -> &'a ConstraintAutomaton {
        self.automaton
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Edge relaxations performed by the forward pass.
    pub fn relaxations(&self) -> u64 {
        self.relaxations
    }

    /// `ln w_{j,k,s}` (task `j` zero-based), `-inf` for unreachable nodes.
    pub fn log_weight(&self, task: usize, action: usize, state: usize) -> f64 {
        self.layers[task][action * self.automaton.num_states() + state]
    }

    /// `ln sum_{x in A} exp(-eta L(x))`.
    pub fn log_normalizer(&self) -> Result<f64> {
        if self.log_normalizer == f64::NEG_INFINITY {
            Err(Error::EmptyLegalSet)
        } else {
            Ok(self.log_normalizer)
        }
    }

    /// Draws a legal sequence from the exponentially weighted distribution, last task first.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PlaySample> {
        self.log_normalizer()?;
        let a = self.automaton;
        let states = a.num_states();
        let m = a.task_count();
        let sink = &self.layers[m - 1];

        let candidates: Vec<(usize, usize)> = sink_nodes(a).collect();
        let weights: Vec<f64> = candidates.iter().map(|&(k, s)| sink[k * states + s]).collect();
        let pick = sample_log_categorical(&weights, rng)
            .ok_or_else(|| Error::Invariant("sink layer carries no mass".into()))?;
        let (mut k, mut s) = candidates[pick];

        let mut actions = vec![0; m];
        let mut path_states = vec![0; m];
        actions[m - 1] = k;
        path_states[m - 1] = s;
        let mut buf = Vec::new();
        for j in (0..m - 1).rev() {
            let preds = a.predecessors(k, s);
            buf.clear();
            buf.extend(preds.iter().map(|&(pk, ps)| self.layers[j][pk * states + ps]));
            let pick = sample_log_categorical(&buf, rng)
                .ok_or_else(|| Error::Invariant(format!("no predecessor mass for task {} pair ({k}, {s})", j + 1)))?;
            (k, s) = preds[pick];
            actions[j] = k;
            path_states[j] = s;
        }
        Ok(PlaySample::from_path(a, actions, path_states))
    }

    /// Log of the probability the backward sampler assigns to `seq`; `-inf` if illegal.
    pub fn log_prob_of(&self, seq: &[usize]) -> f64 {
        let a = self.automaton;
        if seq.len() != a.task_count() || seq.iter().any(|&k| k >= a.choices()) || !a.accepts(seq) {
            return f64::NEG_INFINITY;
        }
        let states = a.num_states();
        let path = live_states(a, seq);
        let m = seq.len();
        let mut log_p = self.layers[m - 1][seq[m - 1] * states + path[m - 1]] - self.log_normalizer;
        let mut buf = Vec::new();
        for j in (0..m - 1).rev() {
            let preds = a.predecessors(seq[j + 1], path[j + 1]);
            buf.clear();
            buf.extend(preds.iter().map(|&(pk, ps)| self.layers[j][pk * states + ps]));
            log_p += self.layers[j][seq[j] * states + path[j]] - log_sum_exp_slice(&buf);
        }
        log_p
    }

    /// Probability of `seq` under this round's distribution: the product of the
    /// backward conditionals, which equals `exp(-eta L(seq)) / Z`.
    pub fn prob_of(&self, seq: &[usize]) -> f64 {
        self.log_prob_of(seq).exp()
    }
}

/// States along a sequence known to stay live.
pub(crate) fn live_states(automaton: &ConstraintAutomaton, seq: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(seq.len());
    let mut st = automaton.initial(seq[0]);
    out.push(st.live().expect("legal prefix"));
    for w in seq.windows(2) {
        st = automaton.step(w[0], st, w[1]);
        out.push(st.live().expect("legal prefix"));
    }
    out
}

/// Minimizer of the cumulative loss over the legal set.
#[derive(Clone, Debug, PartialEq)]
pub struct BestPath {
    pub actions: Vec<usize>,
    pub loss: f64,
}

/// Best fixed legal sequence in hindsight (min-plus pass); ties go to the
/// lexicographically smallest action-index sequence.
pub fn best_fixed(automaton: &ConstraintAutomaton, table: &LossTable) -> Result<BestPath> {
    check_table(automaton, table)?;
    Ok(best_fixed_unchecked(automaton, table.as_slice()).0)
}

pub(crate) fn best_fixed_unchecked(automaton: &ConstraintAutomaton, losses: &[f64]) -> (BestPath, u64) {
    let (layers, relaxations) = traverse(automaton, task_loss(automaton, losses), &mut MinPlusLex);
    let states = automaton.num_states();
    let m = automaton.task_count();
    let sink = &layers[m - 1];
    let end = sink_nodes(automaton)
        .map(|(k, s)| k * states + s)
        .filter(|&i| sink[i].loss < f64::INFINITY)
        .min_by(|&x, &y| sink[x].loss.total_cmp(&sink[y].loss).then(sink[x].rank.cmp(&sink[y].rank)));
    let Some(mut node) = end else {
        return (BestPath { actions: Vec::new(), loss: f64::INFINITY }, relaxations);
    };
    let loss = sink[node].loss;
    let mut actions = vec![0; m];
    for j in (0..m).rev() {
        actions[j] = node / states;
        node = layers[j][node].back;
    }
    (BestPath { actions, loss }, relaxations)
}

/// Cardinality of the legal set: exact when it fits in `u128`, always as a natural log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LegalCount {
    pub exact: Option<u128>,
    pub ln: f64,
}

pub fn count_legal(automaton: &ConstraintAutomaton) -> LegalCount {
    count_legal_with_relaxations(automaton).0
}

pub(crate) fn count_legal_with_relaxations(automaton: &ConstraintAutomaton) -> (LegalCount, u64) {
    let (layers, relaxations) = traverse(automaton, |_, _| 0.0, &mut Counting);
    let states = automaton.num_states();
    let sink = layers.last().expect("at least one task");
    let exact = sink_nodes(automaton).try_fold(0u128, |acc, (k, s)| acc.checked_add(sink[k * states + s]?));
    let ln = match exact {
        Some(c) => (c as f64).ln(),
        None => {
            let zeros = vec![0.0; automaton.task_count() * automaton.num_actions()];
            forward_pass_unchecked(automaton, &zeros, 0.0).log_normalizer
        }
    };
    (LegalCount { exact, ln }, relaxations)
}

/// Which log-cardinality enters the default learning rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaRule {
    /// `(1/M) sqrt(8 ln|A| / n)`, matching the regret bound in `ln|A|`.
    #[default]
    LnLegal,
    /// `(1/M) sqrt(8 ln N / n)`.
    LnActions,
}

/// Default learning rate for horizon `horizon`: `(1/M) sqrt(8 ln|A| / n)`.
pub fn eta_default(horizon: usize, automaton: &ConstraintAutomaton) -> Result<f64> {
    eta_with_rule(horizon, automaton, EtaRule::LnLegal)
}

pub fn eta_with_rule(horizon: usize, automaton: &ConstraintAutomaton, rule: EtaRule) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::param("horizon must be at least 1"));
    }
    let ln_size = match rule {
        EtaRule::LnLegal => count_legal(automaton).ln,
        EtaRule::LnActions => (automaton.num_actions() as f64).ln(),
    };
    if ln_size == f64::NEG_INFINITY {
        return Err(Error::EmptyLegalSet);
    }
    Ok((8.0 * ln_size / horizon as f64).sqrt() / automaton.task_count() as f64)
}

/// Reusable buffers for normalizer-only and min-only sweeps that skip storing layers.
#[derive(Clone, Debug, Default)]
pub struct LatticeScratch {
    prev: Vec<f64>,
    next: Vec<f64>,
    factors: Vec<f64>,
}

impl LatticeScratch {
    pub fn new() -> Self {
        Self::default()
    }

    /// `ln sum_{x in A} exp(-eta L(x))` for row-major losses, plus the relaxation count.
    ///
    /// Runs in the linear domain with each layer rescaled to a unit maximum;
    /// only prefixes more than ~1e-308 below the layer leader are lost.
    pub fn log_normalizer(&mut self, automaton: &ConstraintAutomaton, losses: &[f64], eta: f64) -> (f64, u64) {
        let choices = automaton.choices();
        let states = automaton.num_states();
        let width = choices * states;
        let loss = task_loss(automaton, losses);
        let mut relaxations = 0u64;
        self.prev.clear();
        self.prev.resize(width, 0.0);
        self.factors.resize(choices, 0.0);

        let mut scale = layer_factors(&mut self.factors, |k| -eta * loss(0, k));
        for k in 0..choices {
            if let Some(s) = automaton.initial(k).live() {
                self.prev[k * states + s] = self.factors[k];
                relaxations += 1;
            }
        }
        for j in 1..automaton.task_count() {
            scale += layer_factors(&mut self.factors, |k| -eta * loss(j, k));
            self.next.clear();
            self.next.resize(width, 0.0);
            let mut max = 0.0f64;
            for k2 in 0..choices {
                for s2 in 0..states {
                    let preds = automaton.predecessors(k2, s2);
                    relaxations += preds.len() as u64;
                    let mut sum = 0.0;
                    for &(k, s) in preds {
                        sum += self.prev[k * states + s];
                    }
                    let w = sum * self.factors[k2];
                    self.next[k2 * states + s2] = w;
                    max = max.max(w);
                }
            }
            if max == 0.0 {
                return (f64::NEG_INFINITY, relaxations);
            }
            for w in &mut self.next {
                *w /= max;
            }
            scale += max.ln();
            std::mem::swap(&mut self.prev, &mut self.next);
        }
        let mut total = 0.0;
        for (k, s) in sink_nodes(automaton) {
            total += self.prev[k * states + s];
        }
        (total.ln() + scale, relaxations)
    }

    /// Smallest cumulative loss over the legal set (summed in task order), plus the relaxation count.
    pub fn min_loss(&mut self, automaton: &ConstraintAutomaton, losses: &[f64]) -> (f64, u64) {
        let choices = automaton.choices();
        let states = automaton.num_states();
        let loss = task_loss(automaton, losses);
        let mut relaxations = 0u64;
        self.prev.clear();
        self.prev.resize(choices * states, f64::INFINITY);
        for k in 0..choices {
            if let Some(s) = automaton.initial(k).live() {
                self.prev[k * states + s] = loss(0, k);
                relaxations += 1;
            }
        }
        for j in 1..automaton.task_count() {
            self.next.clear();
            self.next.resize(choices * states, f64::INFINITY);
            for k2 in 0..choices {
                let l = loss(j, k2);
                for s2 in 0..states {
                    let preds = automaton.predecessors(k2, s2);
                    relaxations += preds.len() as u64;
                    let mut best = f64::INFINITY;
                    for &(k, s) in preds {
                        best = best.min(self.prev[k * states + s] + l);
                    }
                    self.next[k2 * states + s2] = best;
                }
            }
            std::mem::swap(&mut self.prev, &mut self.next);
        }
        let best = sink_nodes(automaton).map(|(k, s)| self.prev[k * states + s]).fold(f64::INFINITY, f64::min);
        (best, relaxations)
    }
}

/// Fills `factors[k] = exp(x_k - max)` and returns `max`.
fn layer_factors(factors: &mut [f64], exponent: impl Fn(usize) -> f64) -> f64 {
    let max = (0..factors.len()).map(&exponent).fold(f64::NEG_INFINITY, f64::max);
    for (k, f) in factors.iter_mut().enumerate() {
        *f = (exponent(k) - max).exp();
    }
    max
}

#[cfg(test)]
mod tests;
