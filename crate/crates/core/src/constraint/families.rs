//! Built-in constraint families.

use std::collections::{BTreeSet, HashMap};

use super::{ActionSet, ConstraintAutomaton, ConstraintKind, ConstraintState};
use crate::error::{Error, Result};

use ConstraintState::{Dead, Live};

const MAX_BUDGET_STATES: usize = 1 << 20;

impl ConstraintAutomaton {
    /// Consecutive tasks take actions at most `gamma` apart.
    pub fn coherence(actions: ActionSet, gamma: f64, task_count: usize) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::param(format!("coherence gamma must be positive and finite, got {gamma}")));
        }
        let values = actions.values().to_vec();
        Self::from_fn(
            ConstraintKind::Coherence { gamma },
            actions,
            false,
            task_count,
            1,
            |_| Live(0),
            |k, _, k2| if (values[k] - values[k2]).abs() <= gamma { Live(0) } else { Dead },
            vec![true],
        )
    }

    /// Action indices are non-decreasing across tasks.
    pub fn escalation(actions: ActionSet, task_count: usize) -> Result<Self> {
        Self::from_fn(
            ConstraintKind::Escalation,
            actions,
            false,
            task_count,
            1,
            |_| Live(0),
            |k, _, k2| if k <= k2 { Live(0) } else { Dead },
            vec![true],
        )
    }

    /// At most `max_shifts` changes of action between consecutive tasks. The state counts shifts so far.
    pub fn constancy(actions: ActionSet, max_shifts: usize, task_count: usize) -> Result<Self> {
        if task_count == 0 || max_shifts > task_count - 1 {
            return Err(Error::param(format!(
                "constancy shifts must lie in 0..={}, got {max_shifts}",
                task_count.saturating_sub(1)
            )));
        }
        Self::from_fn(
            ConstraintKind::Constancy { max_shifts },
            actions,
            false,
            task_count,
            max_shifts + 1,
            |_| Live(0),
            |k, s, k2| match (k == k2, s < max_shifts) {
                (true, _) => Live(s),
                (false, true) => Live(s + 1),
                (false, false) => Dead,
            },
            vec![true; max_shifts + 1],
        )
    }

    /// The action values, read as costs, sum to at most `budget`.
    ///
    /// States are the partial sums reachable below the budget. Sums are
    /// tracked exactly on the decimal reading of each value, so `0.1 + 0.2`
    /// fits a budget of `0.3`.
    pub fn budget(actions: ActionSet, budget: f64, task_count: usize) -> Result<Self> {
        if task_count == 0 {
            return Err(Error::param("task count must be positive"));
        }
        if actions.values()[0] <= 0.0 {
            return Err(Error::param("budget constraint needs positive action costs"));
        }
        if !budget.is_finite() {
            return Err(Error::param("budget must be finite"));
        }
        let mut raw = actions.values().to_vec();
        raw.push(budget);
        let scaled = decimal_integers(&raw)
            .ok_or_else(|| Error::param("action costs and budget span too many decimal orders of magnitude"))?;
        let (costs, limit) = scaled.split_at(actions.len());
        let limit = limit[0];
        let cheapest = costs[0];
        if cheapest.checked_mul(task_count as i128).is_none_or(|c| c > limit) {
            return Err(Error::param(format!(
                "budget {budget} is below the cheapest feasible total {}",
                actions.values()[0] * task_count as f64
            )));
        }

        // Reachable partial sums, layer by layer.
        let mut reachable: BTreeSet<i128> = BTreeSet::new();
        let mut layer: BTreeSet<i128> = costs.iter().copied().filter(|&c| c <= limit).collect();
        for _ in 0..task_count {
            reachable.extend(layer.iter().copied());
            if reachable.len() > MAX_BUDGET_STATES {
                return Err(Error::param("budget constraint has too many reachable partial sums"));
            }
            layer = layer.iter().flat_map(|&s| costs.iter().map(move |&c| s + c)).filter(|&s| s <= limit).collect();
        }
        let sums: Vec<i128> = reachable.into_iter().collect();
        let index: HashMap<i128, usize> = sums.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let lookup = |sum: i128| if sum <= limit { index.get(&sum).map_or(Dead, |&i| Live(i)) } else { Dead };
        let costs = costs.to_vec();
        Self::from_fn(
            ConstraintKind::Budget { budget },
            actions,
            false,
            task_count,
            sums.len(),
            |k| lookup(costs[k]),
            |_, s, k2| lookup(sums[s] + costs[k2]),
            vec![true; sums.len()],
        )
    }

    /// Exactly `played` of the tasks receive a real action; the rest take the
    /// no-play choice. The state counts tasks played so far and only the state
    /// `played` accepts at the last task.
    pub fn task_subset(actions: ActionSet, played: usize, task_count: usize) -> Result<Self> {
        if played == 0 || played > task_count {
            return Err(Error::param(format!("tasks to play must lie in 1..={task_count}, got {played}")));
        }
        let no_play = actions.len();
        Self::from_fn(
            ConstraintKind::TaskSubset { played },
            actions,
            true,
            task_count,
            played + 1,
            |k| if k == no_play { Live(0) } else { Live(1) },
            |_, s, k2| {
                if k2 == no_play {
                    Live(s)
                } else if s < played {
                    Live(s + 1)
                } else {
                    Dead
                }
            },
            (0..=played).map(|s| s == played).collect(),
        )
    }
}

/// Rescales values to integers by a common power of ten, reading each value
/// as the shortest decimal that round-trips to it.
fn decimal_integers(values: &[f64]) -> Option<Vec<i128>> {
    let parts: Vec<(i128, i32)> = values.iter().map(|&v| decimal_parts(v)).collect::<Option<_>>()?;
    let shift = parts.iter().map(|&(_, e)| -e).max()?.max(0);
    parts
        .into_iter()
        .map(|(m, e)| 10i128.checked_pow(u32::try_from(e + shift).ok()?).and_then(|p| m.checked_mul(p)))
        .collect()
}

/// `value = mantissa * 10^exponent` with the shortest round-trip mantissa.
fn decimal_parts(value: f64) -> Option<(i128, i32)> {
    if !value.is_finite() {
        return None;
    }
    let text = format!("{value:e}");
    let (digits, exp) = text.split_once('e')?;
    let mut exp: i32 = exp.parse().ok()?;
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    exp -= i32::try_from(frac.len()).ok()?;
    let mantissa: i128 = format!("{int}{frac}").parse().ok()?;
    Some((mantissa, exp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parts_are_shortest() {
        assert_eq!(decimal_parts(0.1), Some((1, -1)));
        assert_eq!(decimal_parts(12345.678), Some((12345678, -3)));
        assert_eq!(decimal_parts(-2.25), Some((-225, -2)));
        assert_eq!(decimal_parts(3.0), Some((3, 0)));
        assert_eq!(decimal_parts(f64::NAN), None);
    }

    #[test]
    fn decimal_scaling_preserves_sums() {
        assert_eq!(decimal_integers(&[0.1, 0.2, 0.3]).unwrap(), vec![1, 2, 3]);
        assert_eq!(decimal_integers(&[1.0, 2.0, 3.5]).unwrap(), vec![10, 20, 35]);
        assert_eq!(decimal_integers(&[300.0, 1.0]).unwrap(), vec![300, 1]);
    }
}
