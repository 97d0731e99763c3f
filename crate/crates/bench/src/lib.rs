//! Benchmark fixtures: constraint instances and seeded loss histories.

use hardmt::harness::complexity::Family;
use hardmt::{ActionSet, ActionSetTracker, Aggregator, ConstraintAutomaton, LossTable, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FAMILIES: [Family; 4] = [Family::Coherence, Family::Escalation, Family::Constancy, Family::Budget];

/// One instance of `family` with `tasks` tasks over actions `0..actions`.
pub fn instance(family: Family, tasks: usize, actions: usize) -> Result<ConstraintAutomaton> {
    let set = ActionSet::integers(actions)?;
    match family {
        Family::Coherence => ConstraintAutomaton::coherence(set, 1.0, tasks),
        Family::Escalation => ConstraintAutomaton::escalation(set, tasks),
        Family::Constancy => ConstraintAutomaton::constancy(set, 2, tasks),
        Family::Budget => ConstraintAutomaton::budget(set, (2 * tasks) as f64, tasks),
    }
}

/// Uniform per-round losses, one `tasks x actions` matrix per round.
pub fn rounds(tasks: usize, actions: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..tasks * actions).map(|_| rng.random()).collect()).collect()
}

/// Cumulative table after `count` uniform rounds.
pub fn history(automaton: &ConstraintAutomaton, count: usize, seed: u64) -> LossTable {
    let mut table = LossTable::for_automaton(automaton);
    for r in rounds(automaton.task_count(), automaton.num_actions(), count, seed) {
        table.accumulate(&r).expect("shapes match");
    }
    table
}

/// Subset tracker after `count` rounds of common losses.
pub fn tracker(aggregator: Aggregator, actions: usize, count: usize, seed: u64) -> ActionSetTracker {
    let mut t = ActionSetTracker::new(aggregator, actions).expect("few actions");
    for r in rounds(1, actions, count, seed) {
        t.update(&r).expect("one row");
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seeded() {
        assert_eq!(rounds(2, 3, 4, 9), rounds(2, 3, 4, 9));
        for family in FAMILIES {
            let a = instance(family, 6, 3).unwrap();
            assert_eq!(history(&a, 5, 1).rounds(), 5);
        }
        assert_eq!(tracker(Aggregator::Max, 3, 4, 0).rounds(), 4);
    }
}
