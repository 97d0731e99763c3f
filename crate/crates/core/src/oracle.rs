//! Exhaustive reference implementations for desk-scale instances.
//!
//! Every routine here refuses, rather than truncates, once the instance
//! exceeds its cap.

use crate::constraint::ConstraintAutomaton;
use crate::error::{Error, Result};
use crate::lattice::{BestPath, LossTable};
use crate::numeric::{ln_binomial, log_sum_exp_slice};

/// Default cap on the number of sequences an oracle may visit.
pub const DEFAULT_CAP: f64 = 1e7;

/// The legal set listed explicitly, in lexicographic order of action indices.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedSet {
    sequences: Vec<Vec<usize>>,
    num_actions: usize,
}

impl EnumeratedSet {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[Vec<usize>] {
        &self.sequences
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.sequences.iter().map(Vec::as_slice)
    }

    pub fn position(&self, seq: &[usize]) -> Option<usize> {
        self.sequences.binary_search_by(|s| s.as_slice().cmp(seq)).ok()
    }

    /// Cumulative loss of member `i`; the no-play choice costs nothing.
    pub fn loss(&self, i: usize, table: &LossTable) -> f64 {
        self.sequences[i]
            .iter()
            .enumerate()
            .filter(|&(_, &k)| k < self.num_actions)
            .map(|(j, &k)| table.get(j, k))
            .sum()
    }
}

/// Depth-first enumeration of the legal set with the default cap.
pub fn enumerate_legal(automaton: &ConstraintAutomaton) -> Result<EnumeratedSet> {
    enumerate_legal_capped(automaton, DEFAULT_CAP)
}

/// Depth-first enumeration, refusing when `choices^M` exceeds `cap`.
pub fn enumerate_legal_capped(automaton: &ConstraintAutomaton, cap: f64) -> Result<EnumeratedSet> {
    let m = automaton.task_count();
    let needed = (automaton.choices() as f64).powi(m as i32);
    if needed > cap {
        return Err(Error::CapExceeded { what: "legal-set enumeration", needed, cap });
    }
    let mut sequences = Vec::new();
    let mut prefix = Vec::with_capacity(m);
    for k in 0..automaton.choices() {
        if let Some(s) = automaton.initial(k).live() {
            prefix.push(k);
            descend(automaton, s, &mut prefix, &mut sequences);
            prefix.pop();
        }
    }
    Ok(EnumeratedSet { sequences, num_actions: automaton.num_actions() })
}

fn descend(a: &ConstraintAutomaton, state: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() == a.task_count() {
        if a.is_accepting(state) {
            out.push(prefix.clone());
        }
        return;
    }
    let last = *prefix.last().expect("non-empty prefix");
    for k2 in 0..a.choices() {
        let next = a.step(last, crate::constraint::ConstraintState::Live(state), k2);
        if let Some(s2) = next.live() {
            prefix.push(k2);
            descend(a, s2, prefix, out);
            prefix.pop();
        }
    }
}

pub fn oracle_count(set: &EnumeratedSet) -> u128 {
    set.len() as u128
}

/// `ln sum_{x in A} exp(-eta L(x))`.
pub fn oracle_log_normalizer(set: &EnumeratedSet, table: &LossTable, eta: f64) -> f64 {
    let logs: Vec<f64> = (0..set.len()).map(|i| -eta * set.loss(i, table)).collect();
    log_sum_exp_slice(&logs)
}

/// Exponentially weighted masses, aligned with `set.sequences()`.
pub fn oracle_distribution(set: &EnumeratedSet, table: &LossTable, eta: f64) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::EmptyLegalSet);
    }
    let logs: Vec<f64> = (0..set.len()).map(|i| -eta * set.loss(i, table)).collect();
    Ok(normalize_log_weights(&logs))
}

/// Turns log weights into probabilities through a shared log-sum-exp.
pub fn normalize_log_weights(logs: &[f64]) -> Vec<f64> {
    let z = log_sum_exp_slice(logs);
    logs.iter().map(|l| (l - z).exp()).collect()
}

/// Exact minimizer; the first minimizer in lexicographic order wins ties.
pub fn oracle_best_fixed(set: &EnumeratedSet, table: &LossTable) -> Result<BestPath> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..set.len() {
        let l = set.loss(i, table);
        if best.is_none_or(|(_, b)| l < b) {
            best = Some((i, l));
        }
    }
    let (i, loss) = best.ok_or(Error::EmptyLegalSet)?;
    Ok(BestPath { actions: set.sequences[i].clone(), loss })
}

/// Sequences of legal vectors over `rounds` rounds with at most `max_switches` value changes.
#[derive(Clone, Debug)]
pub struct SwitchingSet {
    pub legal: EnumeratedSet,
    /// Each member lists, per round, an index into `legal`.
    pub members: Vec<Vec<usize>>,
}

/// Enumerates the switching class with the default cap.
pub fn enumerate_switching(
    automaton: &ConstraintAutomaton,
    rounds: usize,
    max_switches: usize,
) -> Result<SwitchingSet> {
    enumerate_switching_capped(automaton, rounds, max_switches, DEFAULT_CAP)
}

/// Refuses when `|A|^(K+1) C(n-1, K)` exceeds `cap`.
pub fn enumerate_switching_capped(
    automaton: &ConstraintAutomaton,
    rounds: usize,
    max_switches: usize,
    cap: f64,
) -> Result<SwitchingSet> {
    if rounds == 0 {
        return Err(Error::param("switching sequences need at least one round"));
    }
    let legal = enumerate_legal_capped(automaton, cap)?;
    let size = legal.len() as f64;
    let k = max_switches.min(rounds - 1) as u64;
    let needed = ((k + 1) as f64 * size.ln() + ln_binomial(rounds as u64 - 1, k)).exp();
    if needed > cap {
        return Err(Error::CapExceeded { what: "switching-sequence enumeration", needed, cap });
    }
    let mut members = Vec::new();
    let mut path = Vec::with_capacity(rounds);
    extend_switching(legal.len(), rounds, max_switches, &mut path, &mut members);
    Ok(SwitchingSet { legal, members })
}

fn extend_switching(size: usize, rounds: usize, left: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if path.len() == rounds {
        out.push(path.clone());
        return;
    }
    for v in 0..size {
        let change = path.last().is_some_and(|&p| p != v);
        if change && left == 0 {
            continue;
        }
        path.push(v);
        extend_switching(size, rounds, left - usize::from(change), path, out);
        path.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::ActionSet;

    fn ints(n: usize) -> ActionSet {
        ActionSet::integers(n).unwrap()
    }

    #[test]
    fn coherence_example_has_seven_members_in_order() {
        let a = ConstraintAutomaton::coherence(ints(3), 1.0, 2).unwrap();
        let set = enumerate_legal(&a).unwrap();
        assert_eq!(
            set.sequences(),
            &[vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1], vec![1, 2], vec![2, 1], vec![2, 2]]
        );
        assert_eq!(set.position(&[1, 2]), Some(4));
        assert_eq!(set.position(&[0, 2]), None);
    }

    #[test]
    fn small_families() {
        let c0 = ConstraintAutomaton::constancy(ints(4), 0, 3).unwrap();
        assert_eq!(enumerate_legal(&c0).unwrap().len(), 4);
        let sub = ConstraintAutomaton::task_subset(ints(2), 1, 2).unwrap();
        let set = enumerate_legal(&sub).unwrap();
        assert_eq!(set.sequences(), &[vec![0, 2], vec![1, 2], vec![2, 0], vec![2, 1]]);
    }

    #[test]
    fn cap_refuses() {
        let a = ConstraintAutomaton::escalation(ints(10), 8).unwrap();
        assert!(matches!(enumerate_legal(&a), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn distribution_and_best_fixed() {
        let a = ConstraintAutomaton::coherence(ints(3), 1.0, 2).unwrap();
        let set = enumerate_legal(&a).unwrap();
        let zero = LossTable::for_automaton(&a);
        let d = oracle_distribution(&set, &zero, 1.0).unwrap();
        assert!(d.iter().all(|p| (p - 1.0 / 7.0).abs() < 1e-15));
        assert_eq!(oracle_best_fixed(&set, &zero).unwrap(), BestPath { actions: vec![0, 0], loss: 0.0 });

        let t = LossTable::from_cumulative(2, 3, 1, vec![0.5, 0.5, 0.0, 0.5, 0.5, 0.0]).unwrap();
        let d = oracle_distribution(&set, &t, 1e3).unwrap();
        assert!(d[set.position(&[2, 2]).unwrap()] > 0.999);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn switching_counts() {
        let a = ConstraintAutomaton::escalation(ints(2), 1).unwrap();
        assert_eq!(enumerate_switching(&a, 3, 0).unwrap().members.len(), 2);
        assert_eq!(enumerate_switching(&a, 3, 1).unwrap().members.len(), 6);
        assert_eq!(enumerate_switching(&a, 2, 5).unwrap().members.len(), 4);
    }
}
