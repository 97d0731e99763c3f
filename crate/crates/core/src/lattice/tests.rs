use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::constraint::ActionSet;

fn coherence7() -> ConstraintAutomaton {
    ConstraintAutomaton::coherence(ActionSet::integers(3).unwrap(), 1.0, 2).unwrap()
}

/// Every legal sequence, by scanning the full product space.
fn scan(a: &ConstraintAutomaton) -> Vec<Vec<usize>> {
    let c = a.choices();
    let m = a.task_count();
    let mut out = Vec::new();
    for mut code in 0..c.pow(m as u32) {
        let mut seq = vec![0; m];
        for slot in seq.iter_mut().rev() {
            *slot = code % c;
            code /= c;
        }
        if a.is_legal(&seq).unwrap() {
            out.push(seq);
        }
    }
    out
}

fn table(a: &ConstraintAutomaton, rounds: &[Vec<f64>]) -> LossTable {
    let mut t = LossTable::for_automaton(a);
    for r in rounds {
        t.accumulate(r).unwrap();
    }
    t
}

#[test]
fn accumulate_adds_and_counts_rounds() {
    let mut t = LossTable::new(2, 2);
    t.accumulate(&[0.0; 4]).unwrap();
    assert_eq!(t.rounds(), 1);
    assert!(t.as_slice().iter().all(|&v| v == 0.0));
    t.accumulate(&[1.0; 4]).unwrap();
    t.accumulate(&[1.0; 4]).unwrap();
    assert!(t.as_slice().iter().all(|&v| v == 2.0));
    assert!(t.accumulate(&[1.5, 0.0, 0.0, 0.0]).is_err());
    assert!(t.accumulate(&[0.0; 3]).is_err());
}

#[test]
fn zero_loss_normalizer_is_legal_count() {
    let a = coherence7();
    let lat = forward_pass(&a, &LossTable::for_automaton(&a), 0.7).unwrap();
    assert!((lat.log_normalizer().unwrap() - 7f64.ln()).abs() < 1e-12);
    for seq in scan(&a) {
        assert!((lat.prob_of(&seq) - 1.0 / 7.0).abs() < 1e-12);
    }
    assert_eq!(lat.prob_of(&[0, 2]), 0.0);
}

#[test]
fn single_task_normalizer_is_plain_sum() {
    let a = ConstraintAutomaton::escalation(ActionSet::integers(3).unwrap(), 1).unwrap();
    let t = table(&a, &[vec![0.1, 0.5, 0.9]]);
    let lat = forward_pass(&a, &t, 2.0).unwrap();
    let direct: f64 = [0.1f64, 0.5, 0.9].iter().map(|l| (-2.0 * l).exp()).sum();
    assert!((lat.log_normalizer().unwrap() - direct.ln()).abs() < 1e-14);
}

#[test]
fn masses_match_direct_exponential_weights() {
    let a = ConstraintAutomaton::constancy(ActionSet::integers(3).unwrap(), 1, 4).unwrap();
    let rounds: Vec<Vec<f64>> =
        (0..5).map(|r| (0..12).map(|i| ((i * 7 + r * 3) % 11) as f64 / 10.0).collect()).collect();
    let t = table(&a, &rounds);
    let eta = 0.8;
    let lat = forward_pass(&a, &t, eta).unwrap();
    let legal = scan(&a);
    let logs: Vec<f64> = legal.iter().map(|s| -eta * t.loss_of(&a, s)).collect();
    let z = log_sum_exp_slice(&logs);
    assert!(crate::numeric::relative_error(lat.log_normalizer().unwrap(), z) < 1e-12);
    let mut total = 0.0;
    for (s, l) in legal.iter().zip(&logs) {
        let p = lat.prob_of(s);
        total += p;
        assert!(crate::numeric::relative_error(p, (l - z).exp()) < 1e-10);
    }
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn recursion_holds_between_layers() {
    let a = ConstraintAutomaton::coherence(ActionSet::integers(4).unwrap(), 1.0, 3).unwrap();
    let rounds = vec![vec![0.3, 0.1, 0.9, 0.4, 0.2, 0.8, 0.6, 0.0, 1.0, 0.5, 0.7, 0.2]];
    let t = table(&a, &rounds);
    let eta = 1.3;
    let lat = forward_pass(&a, &t, eta).unwrap();
    for k in 0..4 {
        assert_eq!(lat.log_weight(0, k, 0), -eta * t.get(0, k));
    }
    for j in 1..3 {
        for k2 in 0..4 {
            let direct: f64 =
                (0..4).filter(|k: &usize| k.abs_diff(k2) <= 1).map(|k| lat.log_weight(j - 1, k, 0).exp()).sum::<f64>()
                    * (-eta * t.get(j, k2)).exp();
            assert!(crate::numeric::relative_error(lat.log_weight(j, k2, 0).exp(), direct) < 1e-13);
        }
    }
}

#[test]
fn single_legal_vector_is_always_drawn() {
    let a = ConstraintAutomaton::constancy(ActionSet::integers(1).unwrap(), 0, 4).unwrap();
    let lat = forward_pass(&a, &LossTable::for_automaton(&a), 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let s = lat.sample(&mut rng).unwrap();
        assert_eq!(s.actions, vec![0; 4]);
        assert_eq!(s.values, vec![Some(1.0); 4]);
    }
    assert_eq!(lat.prob_of(&[0, 0, 0, 0]), 1.0);
}

#[test]
fn samples_are_legal_and_subset_uses_no_play() {
    let a = ConstraintAutomaton::task_subset(ActionSet::integers(2).unwrap(), 2, 4).unwrap();
    let t = table(&a, &[vec![0.5; 8]]);
    let lat = forward_pass(&a, &t, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let s = lat.sample(&mut rng).unwrap();
        assert!(a.is_legal(&s.actions).unwrap());
        assert_eq!(s.values.iter().filter(|v| v.is_some()).count(), 2);
    }
}

#[test]
fn translation_invariance_per_task() {
    let a = ConstraintAutomaton::escalation(ActionSet::integers(3).unwrap(), 3).unwrap();
    let base: Vec<f64> = vec![0.2, 0.7, 0.1, 0.4, 0.4, 0.9, 0.3, 0.0, 0.6];
    let t = LossTable::from_cumulative(3, 3, 1, base.clone()).unwrap();
    let mut shifted = base;
    for k in 0..3 {
        shifted[3 + k] += 5.0;
    }
    let t2 = LossTable::from_cumulative(3, 3, 1, shifted).unwrap();
    let l1 = forward_pass(&a, &t, 1.1).unwrap();
    let l2 = forward_pass(&a, &t2, 1.1).unwrap();
    assert!((l2.log_normalizer().unwrap() - (l1.log_normalizer().unwrap() - 1.1 * 5.0)).abs() < 1e-12);
    for s in scan(&a) {
        assert!((l1.prob_of(&s) - l2.prob_of(&s)).abs() < 1e-12);
    }
}

#[test]
fn large_eta_times_loss_stays_finite() {
    let a = coherence7();
    let t =
        LossTable::from_cumulative(2, 3, 10_000, vec![9000.0, 10_000.0, 9500.0, 10_000.0, 9800.0, 10_000.0]).unwrap();
    let lat = forward_pass(&a, &t, 1.0).unwrap();
    let z = lat.log_normalizer().unwrap();
    assert!(z.is_finite());
    assert!((z + 18_800.0).abs() < 1e-9);
    let total: f64 = scan(&a).iter().map(|s| lat.prob_of(s)).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(lat.sample(&mut rng).unwrap().actions, vec![0, 1]);
}

#[test]
fn best_fixed_breaks_ties_lexicographically() {
    let a = coherence7();
    let zero = best_fixed(&a, &LossTable::for_automaton(&a)).unwrap();
    assert_eq!(zero, BestPath { actions: vec![0, 0], loss: 0.0 });
    // (1,2) and (2,2) tie at zero.
    let t = LossTable::from_cumulative(2, 3, 1, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.0]).unwrap();
    assert_eq!(best_fixed(&a, &t).unwrap(), BestPath { actions: vec![1, 2], loss: 0.0 });
    let t = LossTable::from_cumulative(2, 3, 1, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    assert_eq!(best_fixed(&a, &t).unwrap(), BestPath { actions: vec![1, 0], loss: 0.0 });
}

#[test]
fn best_fixed_single_task_is_argmin() {
    let a = ConstraintAutomaton::budget(ActionSet::integers(3).unwrap(), 3.0, 1).unwrap();
    let t = LossTable::from_cumulative(1, 3, 2, vec![0.9, 0.3, 0.3]).unwrap();
    assert_eq!(best_fixed(&a, &t).unwrap(), BestPath { actions: vec![1], loss: 0.3 });
}

#[test]
fn min_loss_scratch_agrees_with_best_fixed() {
    let a = ConstraintAutomaton::budget(ActionSet::integers(3).unwrap(), 7.0, 4).unwrap();
    let c: Vec<f64> = (0..12).map(|i| ((i * 5) % 7) as f64 * 0.37).collect();
    let t = LossTable::from_cumulative(4, 3, 3, c).unwrap();
    let mut scratch = LatticeScratch::new();
    let (m, r) = scratch.min_loss(&a, t.as_slice());
    let (b, r2) = best_fixed_unchecked(&a, t.as_slice());
    assert_eq!(m, b.loss);
    assert_eq!(r, r2);
    let (z, r3) = scratch.log_normalizer(&a, t.as_slice(), 0.9);
    let lat = forward_pass(&a, &t, 0.9).unwrap();
    assert!((z - lat.log_normalizer().unwrap()).abs() < 1e-12);
    assert_eq!(r3, lat.relaxations());
}

#[test]
fn count_falls_back_to_log_on_overflow() {
    let a = ConstraintAutomaton::escalation(ActionSet::integers(3).unwrap(), 2).unwrap();
    assert_eq!(count_legal(&a), LegalCount { exact: Some(6), ln: 6f64.ln() });
    let big = ConstraintAutomaton::coherence(ActionSet::integers(4).unwrap(), 10.0, 70).unwrap();
    let c = count_legal(&big);
    assert_eq!(c.exact, None);
    assert!(crate::numeric::relative_error(c.ln, 70.0 * 4f64.ln()) < 1e-12);
}

#[test]
fn relaxation_counts_agree_across_semirings() {
    let a = ConstraintAutomaton::constancy(ActionSet::integers(4).unwrap(), 2, 5).unwrap();
    let t = LossTable::for_automaton(&a);
    let lat = forward_pass(&a, &t, 1.0).unwrap();
    let (_, r_count) = count_legal_with_relaxations(&a);
    let (_, r_min) = best_fixed_unchecked(&a, t.as_slice());
    assert_eq!(lat.relaxations(), r_count);
    assert_eq!(lat.relaxations(), r_min);
    assert!(lat.relaxations() <= crate::harness::complexity::kernel_bound(&a));
}

#[test]
fn eta_default_plug_in() {
    let a = coherence7();
    let eta = eta_default(100, &a).unwrap();
    assert!((eta - 0.5 * (8.0 * 7f64.ln() / 100.0).sqrt()).abs() < 1e-15);
    let eta4 = eta_default(400, &a).unwrap();
    assert!((eta4 - eta / 2.0).abs() < 1e-15);
    let single = ConstraintAutomaton::escalation(ActionSet::integers(5).unwrap(), 1).unwrap();
    assert!((eta_default(10, &single).unwrap() - (8.0 * 5f64.ln() / 10.0).sqrt()).abs() < 1e-15);
    assert!(eta_default(0, &a).is_err());
}

#[test]
fn rejects_mismatched_inputs() {
    let a = coherence7();
    assert!(forward_pass(&a, &LossTable::new(3, 3), 1.0).is_err());
    assert!(forward_pass(&a, &LossTable::for_automaton(&a), f64::NAN).is_err());
    assert!(forward_pass(&a, &LossTable::for_automaton(&a), -1.0).is_err());
}
