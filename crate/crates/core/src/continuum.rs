//! A continuum of tasks indexed by `[0, 1]`, played through a grid of
//! super-tasks. Losses are step functions in the task coordinate, so every
//! integral is a finite sum and the best profile with at most `m` shifts can
//! be found exactly on the common refinement of all breakpoints.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{ActionSet, ConstraintAutomaton};
use crate::error::{Error, Result};
use crate::lattice::{best_fixed_unchecked, count_legal, forward_pass_unchecked, LossTable, PlaySample, WeightLattice};

/// Right-continuous step function on `[0, 1]`: `values[i]` holds on `[starts[i], starts[i + 1])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    starts: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(starts: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if starts.is_empty() || starts.len() != values.len() {
            return Err(Error::input("a step function needs one value per piece"));
        }
        if starts[0] != 0.0 {
            return Err(Error::input("the first piece must start at 0"));
        }
        if starts.windows(2).any(|w| !(w[0] < w[1])) || starts.iter().any(|s| !(0.0..1.0).contains(s)) {
            return Err(Error::input("piece starts must increase strictly within [0, 1)"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input("step function values must lie in [0, 1]"));
        }
        Ok(StepFunction { starts, values })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![value])
    }

    pub fn starts(&self) -> &[f64] {
        &self.starts
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn end(&self, i: usize) -> f64 {
        self.starts.get(i + 1).copied().unwrap_or(1.0)
    }

    pub fn eval(&self, g: f64) -> f64 {
        let i = self.starts.partition_point(|&s| s <= g).saturating_sub(1);
        self.values[i]
    }

    /// `int_lo^hi f`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let mut total = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let overlap = self.end(i).min(hi) - self.starts[i].max(lo);
            if overlap > 0.0 {
                total += v * overlap;
            }
        }
        total
    }
}

/// Per-action loss step functions for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantLoss {
    pub per_action: Vec<StepFunction>,
}

impl PiecewiseConstantLoss {
    pub fn new(per_action: Vec<StepFunction>) -> Result<Self> {
        if per_action.is_empty() {
            return Err(Error::input("at least one action is required"));
        }
        Ok(PiecewiseConstantLoss { per_action })
    }

    pub fn actions(&self) -> usize {
        self.per_action.len()
    }
}

/// Partition of `[0, 1]` into `ceil(1/eps)` cells of width `eps`, the last possibly shorter.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperTaskGrid {
    eps: f64,
    edges: Vec<f64>,
}

pub fn discretize(eps: f64) -> Result<SuperTaskGrid> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::param(format!("grid width must lie in (0, 1], got {eps}")));
    }
    let q = 1.0 / eps;
    // 1/eps within rounding of an integer counts as that integer.
    let cells = if (q - q.round()).abs() < 1e-9 { q.round() } else { q.ceil() } as usize;
    let mut edges: Vec<f64> = (0..cells).map(|i| i as f64 * eps).collect();
    edges.push(1.0);
    Ok(SuperTaskGrid { eps, edges })
}

impl SuperTaskGrid {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn cells(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn cell(&self, j: usize) -> (f64, f64) {
        (self.edges[j], self.edges[j + 1])
    }
}

/// Losses of each super-task (row) and action (column): `int_{G_j} psi(g, x) dg`, each in `[0, eps]`.
pub fn integrate_losses(loss: &PiecewiseConstantLoss, grid: &SuperTaskGrid) -> Vec<f64> {
    let n = loss.actions();
    let mut out = vec![0.0; grid.cells() * n];
    for j in 0..grid.cells() {
        let (lo, hi) = grid.cell(j);
        for (k, f) in loss.per_action.iter().enumerate() {
            out[j * n + k] = f.integral(lo, hi).clamp(0.0, hi - lo);
        }
    }
    out
}

/// A play on the continuum: one action per super-task and the induced step profile.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuumPlay {
    pub assignment: PlaySample,
    /// Piece starts of the profile and the action index on each piece.
    pub profile: Vec<(f64, usize)>,
}

impl ContinuumPlay {
    pub fn shifts(&self) -> usize {
        self.profile.len() - 1
    }

    pub fn action_at(&self, g: f64) -> usize {
        let i = self.profile.partition_point(|&(s, _)| s <= g).saturating_sub(1);
        self.profile[i].1
    }
}

fn profile_of(grid: &SuperTaskGrid, actions: &[usize]) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for (j, &k) in actions.iter().enumerate() {
        if out.last().is_none_or(|&(_, last)| last != k) {
            out.push((grid.edges[j], k));
        }
    }
    out
}

/// Learning rate `sqrt(8 ln|B_eps| / n)`; a round's total loss over `[0, 1]` lies in `[0, 1]`.
pub fn continuum_eta(horizon: usize, automaton: &ConstraintAutomaton) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::param("horizon must be at least 1"));
    }
    Ok((8.0 * count_legal(automaton).ln / horizon as f64).sqrt())
}

/// Forecaster over profiles with at most `m` shifts, all at grid points.
#[derive(Clone, Debug)]
pub struct ContinuumForecaster {
    grid: SuperTaskGrid,
    automaton: ConstraintAutomaton,
    table: LossTable,
    eta: f64,
}

impl ContinuumForecaster {
    pub fn new(actions: ActionSet, grid: SuperTaskGrid, max_shifts: usize, eta: f64) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::param(format!("learning rate must be finite and non-negative, got {eta}")));
        }
        let automaton = ConstraintAutomaton::constancy(actions, max_shifts, grid.cells())?;
        let table = LossTable::for_automaton(&automaton);
        Ok(ContinuumForecaster { grid, automaton, table, eta })
    }

    /// Uses the default learning rate for `horizon` rounds.
    pub fn with_horizon(actions: ActionSet, grid: SuperTaskGrid, max_shifts: usize, horizon: usize) -> Result<Self> {
        let mut f = Self::new(actions, grid, max_shifts, 0.0)?;
        f.eta = continuum_eta(horizon, &f.automaton)?;
        Ok(f)
    }

    pub fn grid(&self) -> &SuperTaskGrid {
        &self.grid
    }

    pub fn automaton(&self) -> &ConstraintAutomaton {
        &self.automaton
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn table(&self) -> &LossTable {
        &self.table
    }

    /// The current round's distribution over grid profiles.
    pub fn round(&self) -> WeightLattice<'_> {
        forward_pass_unchecked(&self.automaton, self.table.as_slice(), self.eta)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ContinuumPlay> {
        let assignment = self.round().sample(rng)?;
        let profile = profile_of(&self.grid, &assignment.actions);
        Ok(ContinuumPlay { assignment, profile })
    }

    /// Integrates the round's losses on the grid, records them and returns them.
    pub fn observe(&mut self, loss: &PiecewiseConstantLoss) -> Result<Vec<f64>> {
        if loss.actions() != self.automaton.num_actions() {
            return Err(Error::input("loss functions do not match the action count"));
        }
        let integrated = integrate_losses(loss, &self.grid);
        self.table.accumulate(&integrated)?;
        Ok(integrated)
    }

    /// Least cumulative loss over grid profiles so far.
    pub fn comparator_loss(&self) -> f64 {
        best_fixed_unchecked(&self.automaton, self.table.as_slice()).0.loss
    }
}

/// `int_0^1 psi(g, I(g)) dg` for a profile `I`.
pub fn profile_loss(loss: &PiecewiseConstantLoss, profile: &[(f64, usize)]) -> f64 {
    profile
        .iter()
        .enumerate()
        .map(|(i, &(s, k))| {
            let e = profile.get(i + 1).map_or(1.0, |p| p.0);
            loss.per_action[k].integral(s, e)
        })
        .sum()
}

/// Least cumulative loss over all profiles with at most `max_shifts` shifts anywhere in `[0, 1]`.
///
/// Within a cell of the common refinement every loss is constant, so an
/// optimal profile shifts only at refinement points.
pub fn best_in_continuum(history: &[PiecewiseConstantLoss], max_shifts: usize) -> Result<f64> {
    let Some(first) = history.first() else {
        return Ok(0.0);
    };
    let n = first.actions();
    let mut points: Vec<f64> =
        history.iter().flat_map(|l| l.per_action.iter().flat_map(|f| f.starts.iter().copied())).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let cells = points.len();
    let locate = |x: f64| points.partition_point(|&p| p < x);
    // Difference arrays of summed densities, per action.
    let mut diff = vec![0.0; (cells + 1) * n];
    for loss in history {
        for (k, f) in loss.per_action.iter().enumerate() {
            for (i, &v) in f.values.iter().enumerate() {
                let (lo, hi) = (locate(f.starts[i]), f.starts.get(i + 1).map_or(cells, |&e| locate(e)));
                diff[lo * n + k] += v;
                diff[hi * n + k] -= v;
            }
        }
    }
    let mut cumulative = vec![0.0; cells * n];
    let mut density = vec![0.0; n];
    for c in 0..cells {
        let width = points.get(c + 1).copied().unwrap_or(1.0) - points[c];
        for k in 0..n {
            density[k] += diff[c * n + k];
            cumulative[c * n + k] = (density[k] * width).max(0.0);
        }
    }
    let actions = ActionSet::integers(n)?;
    let automaton = ConstraintAutomaton::constancy(actions, max_shifts.min(cells - 1), cells)?;
    Ok(best_fixed_unchecked(&automaton, &cumulative).0.loss)
}

/// Running form of [`best_in_continuum`] for a history that grows one round at a time.
///
/// Keeps the summed density of each action on every cell of the current
/// refinement. A new breakpoint splits a cell and both halves inherit its density.
#[derive(Clone, Debug)]
pub struct ContinuumComparator {
    actions: usize,
    max_shifts: usize,
    points: Vec<f64>,
    density: Vec<Vec<f64>>,
    rounds: usize,
}

impl ContinuumComparator {
    pub fn new(actions: usize, max_shifts: usize) -> Self {
        ContinuumComparator { actions, max_shifts, points: vec![0.0], density: vec![vec![0.0; actions]], rounds: 0 }
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Cells of the current refinement.
    pub fn cells(&self) -> usize {
        self.points.len()
    }

    pub fn observe(&mut self, loss: &PiecewiseConstantLoss) -> Result<()> {
        if loss.actions() != self.actions {
            return Err(Error::input("loss functions do not match the action count"));
        }
        for f in &loss.per_action {
            for &s in &f.starts {
                if let Err(i) = self.points.binary_search_by(|p| p.total_cmp(&s)) {
                    let inherited = self.density[i - 1].clone();
                    self.points.insert(i, s);
                    self.density.insert(i, inherited);
                }
            }
        }
        for (k, f) in loss.per_action.iter().enumerate() {
            let mut piece = 0;
            for (c, &p) in self.points.iter().enumerate() {
                while piece + 1 < f.starts.len() && f.starts[piece + 1] <= p {
                    piece += 1;
                }
                self.density[c][k] += f.values[piece];
            }
        }
        self.rounds += 1;
        Ok(())
    }

    /// Least cumulative loss over profiles with at most `max_shifts` shifts.
    pub fn loss(&self) -> f64 {
        if self.rounds == 0 {
            return 0.0;
        }
        let cells = self.points.len();
        let mut cumulative = Vec::with_capacity(cells * self.actions);
        for (c, d) in self.density.iter().enumerate() {
            let width = self.points.get(c + 1).copied().unwrap_or(1.0) - self.points[c];
            cumulative.extend(d.iter().map(|v| (v * width).max(0.0)));
        }
        let actions = ActionSet::integers(self.actions).expect("at least one action");
        let automaton = ConstraintAutomaton::constancy(actions, self.max_shifts.min(cells - 1), cells)
            .expect("shift count clamped to the cell count");
        best_fixed_unchecked(&automaton, &cumulative).0.loss
    }
}

/// Forecaster loss, best grid-profile loss and the discretization slack `m n eps / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuumRegret {
    pub forecaster: f64,
    pub grid_comparator: f64,
    pub slack: f64,
}

pub fn continuum_regret(
    history: &[PiecewiseConstantLoss],
    plays: &[ContinuumPlay],
    grid: &SuperTaskGrid,
    max_shifts: usize,
) -> Result<ContinuumRegret> {
    if history.len() != plays.len() {
        return Err(Error::input("one play per round is required"));
    }
    let forecaster = history.iter().zip(plays).map(|(l, p)| profile_loss(l, &p.profile)).sum();
    let grid_comparator = match history.first() {
        None => 0.0,
        Some(first) => {
            let mut f = ContinuumForecaster::new(ActionSet::integers(first.actions())?, grid.clone(), max_shifts, 0.0)?;
            for l in history {
                f.observe(l)?;
            }
            f.comparator_loss()
        }
    };
    let slack = max_shifts as f64 * history.len() as f64 * grid.eps() / 2.0;
    Ok(ContinuumRegret { forecaster, grid_comparator, slack })
}
