//! Exponential weights over sequences of legal vectors that change value at
//! most `K` times, each such sequence carrying the same prior weight.
//!
//! A prefix `x_1..x_t` splits into maximal constant segments. Relaxing the
//! requirement that neighbouring segments differ gives a proposal whose
//! segment values are independent given the boundaries, and whose boundary
//! posterior follows from cached segment normalizers. Proposals whose
//! neighbouring values coincide are rejected; accepted draws follow the
//! exact predictive law.

use std::collections::HashMap;

use rand::Rng;

use crate::constraint::ConstraintAutomaton;
use crate::error::{Error, Result};
use crate::lattice::{
    best_fixed_unchecked, check_round, count_legal, forward_pass_unchecked, round_loss, LatticeScratch, PlaySample,
    WeightLattice,
};
use crate::numeric::{ln_binomial, log_sum_exp_slice, sample_log_categorical};
use crate::oracle;

/// `ln |Sigma_K(A)|` over `horizon` rounds, from `ln |A|`.
pub fn ln_switching_class_size(horizon: usize, max_switches: usize, ln_legal: f64) -> f64 {
    let ln_other = ln_minus_one(ln_legal);
    let top = max_switches.min(horizon.saturating_sub(1));
    let terms: Vec<f64> =
        (0..=top).map(|b| ln_binomial(horizon as u64 - 1, b as u64) + ln_legal + scaled(b, ln_other)).collect();
    log_sum_exp_slice(&terms)
}

/// Learning rate `(1/M) sqrt(8 ln|Sigma_K(A)| / n)`.
pub fn tracking_eta(horizon: usize, automaton: &ConstraintAutomaton, max_switches: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::param("horizon must be at least 1"));
    }
    let ln_legal = count_legal(automaton).ln;
    if ln_legal == f64::NEG_INFINITY {
        return Err(Error::EmptyLegalSet);
    }
    let ln_class = ln_switching_class_size(horizon, max_switches, ln_legal);
    Ok((8.0 * ln_class / horizon as f64).sqrt() / automaton.task_count() as f64)
}

/// `ln(|A| - 1)`, `-inf` when `|A| = 1`.
fn ln_minus_one(ln_legal: f64) -> f64 {
    if ln_legal <= 0.0 {
        f64::NEG_INFINITY
    } else {
        ln_legal + (-(-ln_legal).exp()).ln_1p()
    }
}

/// `i * ln_other` with `0 * -inf = 0`.
fn scaled(i: usize, ln_other: f64) -> f64 {
    if i == 0 {
        0.0
    } else {
        i as f64 * ln_other
    }
}

/// Posterior over the start of the current segment and the number of
/// boundaries used so far, under the relaxed proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchPosterior {
    /// `(start round (zero-based), boundaries, probability)`.
    pub entries: Vec<(usize, usize, f64)>,
}

/// Draw and rejection statistics for the most recent `sample` call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleStats {
    pub proposals: u64,
    pub lattice_passes: u64,
}

/// The tracking forecaster. Feed it rounds with `observe` and draw plays with `sample`.
#[derive(Clone, Debug)]
pub struct TrackingForecaster<'a> {
    automaton: &'a ConstraintAutomaton,
    horizon: usize,
    max_switches: usize,
    eta: f64,
    ln_legal: f64,
    ln_other: f64,
    rounds: Vec<Vec<f64>>,
    suffix: Vec<Vec<f64>>,
    /// `ln_z[b][a] = ln Z(a..=b)`.
    ln_z: Vec<Vec<f64>>,
    /// `relaxed[r - 1][b]`: log relaxed weight of rounds `0..r` cut into `b + 1` segments.
    relaxed: Vec<Vec<f64>>,
    /// `comparator[r - 1][k]`: least loss on rounds `0..r` with exactly `k` boundaries.
    comparator: Vec<Vec<f64>>,
    scratch: LatticeScratch,
    normalizer_passes: u64,
    relaxations: u64,
    last_stats: SampleStats,
}

impl<'a> TrackingForecaster<'a> {
    pub fn new(automaton: &'a ConstraintAutomaton, horizon: usize, max_switches: usize, eta: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::param("horizon must be at least 1"));
        }
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::param(format!("learning rate must be finite and non-negative, got {eta}")));
        }
        let ln_legal = count_legal(automaton).ln;
        if ln_legal == f64::NEG_INFINITY {
            return Err(Error::EmptyLegalSet);
        }
        Ok(TrackingForecaster {
            automaton,
            horizon,
            max_switches,
            eta,
            ln_legal,
            ln_other: ln_minus_one(ln_legal),
            rounds: Vec::new(),
            suffix: Vec::new(),
            ln_z: Vec::new(),
            relaxed: Vec::new(),
            comparator: Vec::new(),
            scratch: LatticeScratch::new(),
            normalizer_passes: 0,
            relaxations: 0,
            last_stats: SampleStats::default(),
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn max_switches(&self) -> usize {
        self.max_switches
    }

    /// Rounds observed so far.
    pub fn observed(&self) -> usize {
        self.rounds.len()
    }

    /// Normalizer passes run by the latest `observe` (one per candidate segment start).
    pub fn normalizer_passes(&self) -> u64 {
        self.normalizer_passes
    }

    /// Edge relaxations spent by the latest `observe` and `sample`.
    pub fn relaxations(&self) -> u64 {
        self.relaxations
    }

    pub fn last_sample_stats(&self) -> SampleStats {
        self.last_stats
    }

    /// Least loss over the switching class on the rounds observed so far.
    pub fn comparator_loss(&self) -> f64 {
        match self.comparator.last() {
            Some(row) => row.iter().take(self.max_switches + 1).copied().fold(f64::INFINITY, f64::min),
            None => 0.0,
        }
    }

    /// Adds one round of per-task losses (row-major `M x N`).
    pub fn observe(&mut self, round: &[f64]) -> Result<()> {
        let a = self.automaton;
        check_round(round, a.task_count(), a.num_actions())?;
        for s in &mut self.suffix {
            for (c, l) in s.iter_mut().zip(round) {
                *c += l;
            }
        }
        self.suffix.push(round.to_vec());
        self.rounds.push(round.to_vec());
        let t = self.rounds.len();

        let mut z_row = Vec::with_capacity(t);
        let mut best_row = Vec::with_capacity(t);
        let mut relaxations = 0;
        for s in &self.suffix {
            let (z, r1) = self.scratch.log_normalizer(a, s, self.eta);
            let (b, r2) = self.scratch.min_loss(a, s);
            z_row.push(z);
            best_row.push(b);
            relaxations += r1 + r2;
        }
        self.normalizer_passes = t as u64;
        self.relaxations = relaxations;

        let depth = self.max_switches.max(1);
        let mut relaxed_row = vec![f64::NEG_INFINITY; depth];
        let mut comp_row = vec![f64::INFINITY; self.max_switches + 1];
        relaxed_row[0] = z_row[0];
        comp_row[0] = best_row[0];
        let mut buf = Vec::with_capacity(t);
        for (b, cell) in relaxed_row.iter_mut().enumerate().skip(1) {
            buf.clear();
            buf.extend((1..t).map(|tau| self.relaxed[tau - 1][b - 1] + z_row[tau]));
            *cell = log_sum_exp_slice(&buf);
        }
        for (k, cell) in comp_row.iter_mut().enumerate().skip(1) {
            *cell = (1..t).map(|tau| self.comparator[tau - 1][k - 1] + best_row[tau]).fold(f64::INFINITY, f64::min);
        }
        self.ln_z.push(z_row);
        self.relaxed.push(relaxed_row);
        self.comparator.push(comp_row);
        Ok(())
    }

    fn ln_z(&self, start: usize, end: usize) -> f64 {
        if start == end {
            self.ln_legal
        } else {
            self.ln_z[end - 1][start]
        }
    }

    /// Log number of ways to finish the remaining rounds with at most `k` more changes.
    fn ln_completions(&self, k: usize) -> f64 {
        let rest = (self.horizon - self.rounds.len() - 1) as u64;
        let terms: Vec<f64> =
            (0..=k as u64).map(|i| ln_binomial(rest, i) + scaled(i as usize, self.ln_other)).collect();
        log_sum_exp_slice(&terms)
    }

    /// Candidates `(start, boundaries)` for the current segment with their log proposal weights.
    fn last_segment_weights(&self) -> (Vec<(usize, usize)>, Vec<f64>) {
        let t = self.rounds.len();
        let mut cands = vec![(0, 0)];
        let mut weights = vec![self.ln_completions(self.max_switches) + self.ln_z(0, t)];
        for j in 1..=self.max_switches.min(t) {
            let ln_c = self.ln_completions(self.max_switches - j);
            for tau in 1..=t {
                let w = self.relaxed[tau - 1][j - 1] + self.ln_z(tau, t);
                if w > f64::NEG_INFINITY {
                    cands.push((tau, j));
                    weights.push(ln_c + w);
                }
            }
        }
        (cands, weights)
    }

    /// Posterior of the relaxed proposal over the current segment.
    pub fn switch_posterior(&self) -> SwitchPosterior {
        let (cands, weights) = self.last_segment_weights();
        let z = log_sum_exp_slice(&weights);
        SwitchPosterior { entries: cands.iter().zip(&weights).map(|(&(s, j), w)| (s, j, (w - z).exp())).collect() }
    }

    fn check_open(&self) -> Result<()> {
        if self.rounds.len() >= self.horizon {
            return Err(Error::input(format!("all {} rounds have been played", self.horizon)));
        }
        Ok(())
    }

    /// Cumulative losses of rounds `start..end`, summed in round order.
    fn interval_losses(&self, start: usize, end: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.automaton.task_count() * self.automaton.num_actions()];
        for r in &self.rounds[start..end] {
            for (c, l) in acc.iter_mut().zip(r) {
                *c += l;
            }
        }
        acc
    }

    /// Earlier segments for a proposal whose current segment starts at `start` with `boundaries` cuts.
    fn draw_segments<R: Rng + ?Sized>(&self, start: usize, boundaries: usize, rng: &mut R) -> Vec<(usize, usize)> {
        let t = self.rounds.len();
        let mut segments = vec![(start, t)];
        let mut end = start;
        let mut left = boundaries.saturating_sub(1);
        let mut buf = Vec::new();
        while end > 0 {
            if left == 0 {
                segments.push((0, end));
                break;
            }
            buf.clear();
            buf.extend((1..end).map(|tau| self.relaxed[tau - 1][left - 1] + self.ln_z(tau, end)));
            let tau = 1 + sample_log_categorical(&buf, rng).expect("relaxed weights carry mass");
            segments.push((tau, end));
            end = tau;
            left -= 1;
        }
        segments
    }

    /// Draws the play for the next round from the predictive law.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<PlaySample> {
        self.check_open()?;
        let automaton = self.automaton;
        let mut stats = SampleStats::default();
        let mut relaxations = 0;
        let mut cache: HashMap<(usize, usize), WeightLattice<'a>> = HashMap::new();

        // A single legal vector admits no switch; skip the proposal entirely.
        let (cands, weights) =
            if self.ln_legal == 0.0 { (vec![(0, 0)], vec![0.0]) } else { self.last_segment_weights() };

        let chosen = 'proposal: loop {
            stats.proposals += 1;
            let pick = sample_log_categorical(&weights, rng).ok_or(Error::EmptyLegalSet)?;
            let (start, boundaries) = cands[pick];
            let segments = self.draw_segments(start, boundaries, rng);
            let mut next: Option<Vec<usize>> = None;
            let mut current = None;
            for &(a, b) in &segments {
                let lattice = cache.entry((a, b)).or_insert_with(|| {
                    let lat = forward_pass_unchecked(automaton, &self.interval_losses(a, b), self.eta);
                    stats.lattice_passes += 1;
                    relaxations += lat.relaxations();
                    lat
                });
                let draw = lattice.sample(rng)?;
                if next.as_ref().is_some_and(|n| *n == draw.actions) {
                    continue 'proposal;
                }
                next = Some(draw.actions.clone());
                current.get_or_insert(draw);
            }
            break current.expect("at least one segment");
        };
        self.relaxations += relaxations;
        self.last_stats = stats;
        Ok(chosen)
    }

    /// Exact predictive law of `sample` over the enumerated legal set, for small instances.
    ///
    /// Sums the relaxed proposal over every boundary set and value chain with
    /// distinct neighbours, reading segment masses from the segment lattices.
    pub fn exact_predictive(&self) -> Result<(oracle::EnumeratedSet, Vec<f64>)> {
        self.check_open()?;
        let automaton = self.automaton;
        let set = oracle::enumerate_legal(automaton)?;
        let t = self.rounds.len();
        let needed = (0..=self.max_switches.min(t)).map(|b| ln_binomial(t as u64, b as u64).exp()).sum::<f64>();
        if needed * set.len() as f64 > oracle::DEFAULT_CAP {
            return Err(Error::CapExceeded { what: "tracking predictive", needed, cap: oracle::DEFAULT_CAP });
        }
        let mut lattices: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
        let mut masses = |a: usize, b: usize| -> Vec<f64> {
            lattices
                .entry((a, b))
                .or_insert_with(|| {
                    let lat = forward_pass_unchecked(automaton, &self.interval_losses(a, b), self.eta);
                    set.iter().map(|s| lat.prob_of(s)).collect()
                })
                .clone()
        };

        let mut per_value: Vec<Vec<f64>> = vec![Vec::new(); set.len()];
        for cuts in boundary_sets(t, self.max_switches) {
            let mut starts = vec![0];
            starts.extend(&cuts);
            let ends: Vec<usize> = starts.iter().skip(1).copied().chain(std::iter::once(t)).collect();
            let mut ln_const = self.ln_completions(self.max_switches - cuts.len());
            let mut f: Vec<f64> = Vec::new();
            for (&a, &b) in starts.iter().zip(&ends) {
                ln_const += self.ln_z(a, b);
                let q = masses(a, b);
                f = if f.is_empty() {
                    q
                } else {
                    let total: f64 = f.iter().sum();
                    q.iter().zip(&f).map(|(qv, fv)| qv * (total - fv)).collect()
                };
            }
            for (v, fv) in f.iter().enumerate() {
                if *fv > 0.0 {
                    per_value[v].push(ln_const + fv.ln());
                }
            }
        }
        let logs: Vec<f64> = per_value.iter().map(|w| log_sum_exp_slice(w)).collect();
        Ok((set, oracle::normalize_log_weights(&logs)))
    }
}

/// Sorted boundary positions in `1..=t`, at most `k` of them.
fn boundary_sets(t: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..k.min(t) {
        let mut grown = Vec::new();
        for cuts in &frontier {
            let from = cuts.last().map_or(1, |&c: &usize| c + 1);
            for c in from..=t {
                let mut next: Vec<usize> = cuts.clone();
                next.push(c);
                grown.push(next);
            }
        }
        out.extend(grown.iter().cloned());
        frontier = grown;
    }
    out
}

/// Best sequence in the switching class, as segments of constant legal vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchingPath {
    /// `(first round (zero-based), action indices)` per segment.
    pub segments: Vec<(usize, Vec<usize>)>,
    /// Loss of the path, summed round by round.
    pub loss: f64,
}

impl SwitchingPath {
    /// The legal vector played at `round`.
    pub fn at(&self, round: usize) -> &[usize] {
        let i = self.segments.partition_point(|(s, _)| *s <= round) - 1;
        &self.segments[i].1
    }
}

/// Least cumulative loss over sequences with at most `max_switches` changes,
/// by dynamic programming over (round, boundaries used).
pub fn switching_comparator(
    automaton: &ConstraintAutomaton,
    rounds: &[Vec<f64>],
    max_switches: usize,
) -> Result<SwitchingPath> {
    let n = rounds.len();
    for r in rounds {
        check_round(r, automaton.task_count(), automaton.num_actions())?;
    }
    if n == 0 {
        return Ok(SwitchingPath { segments: Vec::new(), loss: 0.0 });
    }
    if count_legal(automaton).ln == f64::NEG_INFINITY {
        return Err(Error::EmptyLegalSet);
    }
    let mut scratch = LatticeScratch::new();
    let mut suffix: Vec<Vec<f64>> = Vec::new();
    // table[r][k] = (least loss on rounds 0..=r with exactly k boundaries, start of last segment)
    let mut table: Vec<Vec<(f64, usize)>> = Vec::with_capacity(n);
    for (r, round) in rounds.iter().enumerate() {
        for s in &mut suffix {
            for (c, l) in s.iter_mut().zip(round) {
                *c += l;
            }
        }
        suffix.push(round.clone());
        let best: Vec<f64> = suffix.iter().map(|s| scratch.min_loss(automaton, s).0).collect();
        let mut row = vec![(f64::INFINITY, 0); max_switches + 1];
        row[0] = (best[0], 0);
        for k in 1..=max_switches {
            for tau in 1..=r {
                let cand = table[tau - 1][k - 1].0 + best[tau];
                if cand < row[k].0 {
                    row[k] = (cand, tau);
                }
            }
        }
        table.push(row);
    }

    let last = &table[n - 1];
    let mut k = (0..=max_switches).min_by(|&x, &y| last[x].0.total_cmp(&last[y].0)).expect("K + 1 entries");
    let mut end = n;
    let mut segments = Vec::new();
    while end > 0 {
        let start = table[end - 1][k].1;
        let cumulative = suffix_sum(&rounds[start..end]);
        let (path, _) = best_fixed_unchecked(automaton, &cumulative);
        segments.push((start, path.actions));
        end = start;
        k = k.saturating_sub(1);
    }
    segments.reverse();
    let mut path = SwitchingPath { segments, loss: 0.0 };
    path.loss = rounds.iter().enumerate().map(|(r, round)| round_loss(automaton, round, path.at(r))).sum();
    Ok(path)
}

fn suffix_sum(rounds: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; rounds[0].len()];
    for r in rounds {
        for (c, l) in acc.iter_mut().zip(r) {
            *c += l;
        }
    }
    acc
}

/// Forecaster loss and best switching comparator loss for a finished game.
pub fn tracking_regret(
    automaton: &ConstraintAutomaton,
    rounds: &[Vec<f64>],
    plays: &[Vec<usize>],
    max_switches: usize,
) -> Result<(f64, f64)> {
    if plays.len() != rounds.len() {
        return Err(Error::input("one play per round is required"));
    }
    let forecaster = rounds.iter().zip(plays).map(|(r, p)| round_loss(automaton, r, p)).sum();
    Ok((forecaster, switching_comparator(automaton, rounds, max_switches)?.loss))
}
