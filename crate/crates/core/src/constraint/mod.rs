//! Hard constraints on simultaneous actions, encoded as deterministic automata.
//!
//! An automaton folds a sequence of action indices into a hidden state. The
//! effective Markov state after task `j` is the pair (last action, state), so a
//! constraint only needs to remember what the previous action alone cannot
//! tell (number of shifts, budget spent, tasks played). The absorbing dead
//! state marks a prefix that can no longer be completed legally.

mod descriptor;
mod families;

pub use descriptor::ConstraintDescriptor;

use crate::error::{Error, Result};

/// The shared, finite action space: strictly increasing real values, addressed by index.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSet {
    values: Vec<f64>,
}

impl ActionSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("action set must contain at least one action"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("action values must be finite"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("action values must be strictly increasing"));
        }
        Ok(ActionSet { values })
    }

    /// Actions `1, 2, ..., n`.
    pub fn integers(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|k| k as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index_of(&self, value: f64) -> Option<usize> {
        self.values.iter().position(|&v| v == value)
    }
}

/// Hidden constraint state: a member of the finite state set, or the dead state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintState {
    Live(usize),
    Dead,
}

impl ConstraintState {
    pub fn is_dead(self) -> bool {
        matches!(self, ConstraintState::Dead)
    }

    pub fn live(self) -> Option<usize> {
        match self {
            ConstraintState::Live(s) => Some(s),
            ConstraintState::Dead => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintKind {
    Coherence { gamma: f64 },
    Escalation,
    Constancy { max_shifts: usize },
    Budget { budget: f64 },
    TaskSubset { played: usize },
    Custom,
}

/// Deterministic constraint automaton over `task_count` tasks.
///
/// Action choices are indexed `0..choices()`. For every family except the
/// task-subset one, choices coincide with the action set; the task-subset
/// family appends one extra "no-play" choice with identically zero loss.
#[derive(Clone, Debug)]
pub struct ConstraintAutomaton {
    kind: ConstraintKind,
    actions: ActionSet,
    no_play: bool,
    task_count: usize,
    num_states: usize,
    initial: Vec<ConstraintState>,
    // Row-major over (choice, state incl. dead row at index `num_states`, next choice).
    table: Vec<ConstraintState>,
    accept: Vec<bool>,
    pred_offsets: Vec<usize>,
    pred_pairs: Vec<(usize, usize)>,
    t_max: usize,
}

impl ConstraintAutomaton {
    /// Builds an automaton from its initial map and a step function over live states.
    /// The dead state is made absorbing.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fn(
        kind: ConstraintKind,
        actions: ActionSet,
        no_play: bool,
        task_count: usize,
        num_states: usize,
        initial: impl Fn(usize) -> ConstraintState,
        step: impl Fn(usize, usize, usize) -> ConstraintState,
        accept: Vec<bool>,
    ) -> Result<Self> {
        let choices = actions.len() + usize::from(no_play);
        let rows = num_states + 1;
        let mut table = Vec::with_capacity(choices * rows * choices);
        for k in 0..choices {
            for s in 0..rows {
                for k2 in 0..choices {
                    table.push(if s == num_states { ConstraintState::Dead } else { step(k, s, k2) });
                }
            }
        }
        let initial = (0..choices).map(initial).collect();
        Self::from_tables(kind, actions, no_play, task_count, num_states, initial, table, accept)
    }

    /// Builds an automaton from explicit tables, including the dead-state row.
    ///
    /// Shapes and state ranges are validated; absorption of the dead state is
    /// not, so that broken tables can be fed to the consistency checks.
    #[allow(clippy::too_many_arguments)]
    pub fn from_tables(
        kind: ConstraintKind,
        actions: ActionSet,
        no_play: bool,
        task_count: usize,
        num_states: usize,
        initial: Vec<ConstraintState>,
        table: Vec<ConstraintState>,
        accept: Vec<bool>,
    ) -> Result<Self> {
        if task_count == 0 {
            return Err(Error::param("task count must be positive"));
        }
        if num_states == 0 {
            return Err(Error::param("state set must be non-empty"));
        }
        let choices = actions.len() + usize::from(no_play);
        if initial.len() != choices {
            return Err(Error::param(format!("initial map has {} entries, expected {choices}", initial.len())));
        }
        if table.len() != choices * (num_states + 1) * choices {
            return Err(Error::param("transition table has the wrong shape"));
        }
        if accept.len() != num_states {
            return Err(Error::param("accept set must have one flag per state"));
        }
        let out_of_range = |st: &ConstraintState| matches!(st, ConstraintState::Live(s) if *s >= num_states);
        if initial.iter().chain(table.iter()).any(out_of_range) {
            return Err(Error::param("transition target outside the state set"));
        }

        // Exact preimage of the step map over live states, in CSR form keyed by (k2, s2).
        let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); choices * num_states];
        for k in 0..choices {
            for s in 0..num_states {
                for k2 in 0..choices {
                    if let ConstraintState::Live(s2) = table[(k * (num_states + 1) + s) * choices + k2] {
                        buckets[k2 * num_states + s2].push((k, s));
                    }
                }
            }
        }
        let mut pred_offsets = Vec::with_capacity(buckets.len() + 1);
        let mut pred_pairs = Vec::new();
        pred_offsets.push(0);
        for b in &buckets {
            pred_pairs.extend_from_slice(b);
            pred_offsets.push(pred_pairs.len());
        }
        let t_max = buckets.iter().map(Vec::len).max().unwrap_or(0);

        Ok(ConstraintAutomaton {
            kind,
            actions,
            no_play,
            task_count,
            num_states,
            initial,
            table,
            accept,
            pred_offsets,
            pred_pairs,
            t_max,
        })
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    pub fn action_set(&self) -> &ActionSet {
        &self.actions
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    /// Number of real actions `N`.
    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    /// Number of selectable choices per task (`N`, or `N + 1` with the no-play choice).
    pub fn choices(&self) -> usize {
        self.actions.len() + usize::from(self.no_play)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn has_no_play(&self) -> bool {
        self.no_play
    }

    /// Index of the no-play choice, if this automaton has one.
    pub fn no_play_index(&self) -> Option<usize> {
        self.no_play.then_some(self.actions.len())
    }

    pub fn is_no_play(&self, k: usize) -> bool {
        self.no_play && k == self.actions.len()
    }

    /// Real value of choice `k`, `None` for the no-play choice.
    pub fn action_value(&self, k: usize) -> Option<f64> {
        (k < self.actions.len()).then(|| self.actions.value(k))
    }

    pub fn initial(&self, k: usize) -> ConstraintState {
        self.initial[k]
    }

    pub fn step(&self, k: usize, state: ConstraintState, k2: usize) -> ConstraintState {
        let row = match state {
            ConstraintState::Live(s) => s,
            ConstraintState::Dead => self.num_states,
        };
        self.table[(k * (self.num_states + 1) + row) * self.choices() + k2]
    }

    pub fn is_accepting(&self, s: usize) -> bool {
        self.accept[s]
    }

    pub fn accept_set(&self) -> &[bool] {
        &self.accept
    }

    /// All `(k, s)` with `step(k, s, k2) = s2`.
    pub fn predecessors(&self, k2: usize, s2: usize) -> &[(usize, usize)] {
        let idx = k2 * self.num_states + s2;
        &self.pred_pairs[self.pred_offsets[idx]..self.pred_offsets[idx + 1]]
    }

    /// Largest predecessor set over all `(k2, s2)`.
    pub fn t_max(&self) -> usize {
        self.t_max
    }

    /// Number of (predecessor, successor) pairs in one layer transition.
    pub fn transition_edges(&self) -> usize {
        self.pred_pairs.len()
    }

    fn check_indices(&self, seq: &[usize]) -> Result<()> {
        if let Some(&bad) = seq.iter().find(|&&k| k >= self.choices()) {
            return Err(Error::input(format!("action index {bad} out of range 0..{}", self.choices())));
        }
        Ok(())
    }

    /// Folds the initial map and the step function over `seq`.
    pub fn state_of(&self, seq: &[usize]) -> Result<ConstraintState> {
        if seq.is_empty() || seq.len() > self.task_count {
            return Err(Error::input(format!("sequence length {} outside 1..={}", seq.len(), self.task_count)));
        }
        self.check_indices(seq)?;
        Ok(self.fold(seq))
    }

    pub(crate) fn fold(&self, seq: &[usize]) -> ConstraintState {
        let mut state = self.initial[seq[0]];
        for w in seq.windows(2) {
            state = self.step(w[0], state, w[1]);
        }
        state
    }

    /// Whether a full-length sequence belongs to the legal set.
    pub fn is_legal(&self, seq: &[usize]) -> Result<bool> {
        if seq.len() != self.task_count {
            return Err(Error::input(format!("legality needs exactly {} actions, got {}", self.task_count, seq.len())));
        }
        self.check_indices(seq)?;
        Ok(self.accepts(seq))
    }

    pub(crate) fn accepts(&self, seq: &[usize]) -> bool {
        matches!(self.fold(seq), ConstraintState::Live(s) if self.accept[s])
    }

    /// True when the dead state maps only to itself.
    pub fn dead_state_absorbing(&self) -> bool {
        let choices = self.choices();
        (0..choices).all(|k| (0..choices).all(|k2| self.step(k, ConstraintState::Dead, k2).is_dead()))
    }
}
