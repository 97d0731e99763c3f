//! Acceptance gate: one line per criterion, non-zero exit if any fails.

use std::time::Instant;

use hardmt::constraint::{ActionSet, ConstraintAutomaton};
use hardmt::continuum::{discretize, integrate_losses, ContinuumForecaster, PiecewiseConstantLoss, StepFunction};
use hardmt::global::{global_round_loss, Aggregator, GlobalForecaster};
use hardmt::harness::complexity::{complexity_sweep, SweepOptions};
use hardmt::harness::{run, Config, EnvKind, Mode};
use hardmt::lattice::{best_fixed, count_legal, forward_pass, round_loss, LossTable};
use hardmt::numeric::{log_sum_exp_slice, relative_error};
use hardmt::oracle::{
    enumerate_legal, enumerate_switching, normalize_log_weights, oracle_best_fixed, oracle_count, oracle_distribution,
    oracle_log_normalizer,
};
use hardmt::tracking::{switching_comparator, TrackingForecaster};
use hardmt::ConstraintDescriptor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Seed of the sampler goodness-of-fit draw.
const CHI_SQUARE_SEED: u64 = 20_240_601;

struct Verdict {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, started: Instant, v: &Verdict) {
    println!(
        "criterion {id} [{}] {name}: {} ({:.1}s)",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        started.elapsed().as_secs_f64()
    );
}

fn random_automaton(rng: &mut ChaCha8Rng, family: usize, m: usize, n: usize) -> ConstraintAutomaton {
    let actions = ActionSet::integers(n).unwrap();
    match family {
        0 => ConstraintAutomaton::coherence(actions, [0.5, 1.0, 1.5, 2.0][rng.random_range(0..4)], m).unwrap(),
        1 => ConstraintAutomaton::escalation(actions, m).unwrap(),
        2 => ConstraintAutomaton::constancy(actions, rng.random_range(0..m.min(3)), m).unwrap(),
        3 => ConstraintAutomaton::budget(actions, rng.random_range(m..=m * n) as f64, m).unwrap(),
        _ => ConstraintAutomaton::task_subset(actions, rng.random_range(1..=m), m).unwrap(),
    }
}

fn random_table(rng: &mut ChaCha8Rng, a: &ConstraintAutomaton, dyadic: bool) -> LossTable {
    let mut t = LossTable::for_automaton(a);
    for _ in 0..rng.random_range(1..6) {
        let row: Vec<f64> = (0..a.task_count() * a.num_actions())
            .map(|_| if dyadic { rng.random_range(0..=8) as f64 / 8.0 } else { rng.random() })
            .collect();
        t.accumulate(&row).unwrap();
    }
    t
}

fn oracle_equivalence() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_p, mut worst_z, mut count_bad, mut best_bad) = (0.0f64, 0.0f64, 0, 0);
    let instances = 250;
    for i in 0..instances {
        let (m, n) = (rng.random_range(1..=6), rng.random_range(1..=4));
        let a = random_automaton(&mut rng, i % 5, m, n);
        let set = enumerate_legal(&a).unwrap();
        if count_legal(&a).exact != Some(oracle_count(&set)) {
            count_bad += 1;
        }
        let eta = rng.random_range(0.05..4.0);
        let table = random_table(&mut rng, &a, false);
        let lattice = forward_pass(&a, &table, eta).unwrap();
        let law = oracle_distribution(&set, &table, eta).unwrap();
        for (s, p) in set.iter().zip(&law) {
            worst_p = worst_p.max(relative_error(lattice.prob_of(s), *p));
        }
        worst_z = worst_z.max((lattice.log_normalizer().unwrap() - oracle_log_normalizer(&set, &table, eta)).abs());
        let exact = random_table(&mut rng, &a, true);
        for t in [&table, &exact] {
            if best_fixed(&a, t).unwrap() != oracle_best_fixed(&set, t).unwrap() {
                best_bad += 1;
            }
        }
    }
    Verdict {
        pass: worst_p <= 1e-9 && worst_z <= 1e-10 && count_bad == 0 && best_bad == 0 && started.elapsed().as_secs() < 60,
        detail: format!(
            "{instances} instances in under 60s, max rel err {worst_p:.2e} (tol 1e-9), log-normalizer err {worst_z:.2e} (tol 1e-10), \
             count mismatches {count_bad}, best-fixed mismatches {best_bad}"
        ),
    }
}

fn sampler_law() -> Verdict {
    let a = ConstraintAutomaton::coherence(ActionSet::integers(3).unwrap(), 1.0, 2).unwrap();
    let table = LossTable::from_cumulative(2, 3, 3, vec![0.5, 1.0, 2.0, 1.5, 0.25, 1.0]).unwrap();
    let set = enumerate_legal(&a).unwrap();
    let law = oracle_distribution(&set, &table, 0.8).unwrap();
    let lattice = forward_pass(&a, &table, 0.8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(CHI_SQUARE_SEED);
    let draws = 1_000_000;
    let mut counts = vec![0u64; set.len()];
    for _ in 0..draws {
        let s = lattice.sample(&mut rng).unwrap();
        counts[set.position(&s.actions).expect("legal draw")] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&law)
        .map(|(&c, p)| {
            let e = p * draws as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let df = (set.len() - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
    Verdict {
        pass: p_value >= 0.01,
        detail: format!(
            "{draws} draws, seed {CHI_SQUARE_SEED}, chi2 = {stat:.3} on {df} df, p = {p_value:.4} (alpha 0.01)"
        ),
    }
}

fn fixed_bound_frequency() -> Verdict {
    let started = Instant::now();
    let mut c = Config::new(ConstraintDescriptor::Coherence { gamma: 1.0 }, 5, 5, 1000);
    c.game.replicas = 200;
    c.game.seed = 3;
    c.environment.kind = EnvKind::Iid;
    let r = run(&c).unwrap();
    let frac = r.fraction_within_bound();
    let worst = r.replicas.iter().map(|x| x.regret()).fold(f64::NEG_INFINITY, f64::max);
    Verdict {
        pass: frac >= 0.95 && started.elapsed().as_secs() < 300,
        detail: format!(
            "under 5 min, |A| = {}, {} replicas, within bound {:.1}% (need 95%), bound {:.2}, largest regret {worst:.2}",
            count_legal(&c.automaton().unwrap()).exact.unwrap(),
            r.replicas.len(),
            100.0 * frac,
            r.replicas[0].bound
        ),
    }
}

fn complexity_counts() -> Verdict {
    let report = complexity_sweep(&SweepOptions::default()).unwrap();
    let rows_ok = report.rows.iter().filter(|r| r.within_bounds()).count();
    let slopes: Vec<String> =
        report.slopes.iter().map(|s| format!("{}/{}={:.3}", s.family, s.variable, s.slope)).collect();
    Verdict {
        pass: report.passed(),
        detail: format!(
            "{rows_ok}/{} rows within order and kernel bounds; slopes {} (tolerance 15%)",
            report.rows.len(),
            slopes.join(" ")
        ),
    }
}

fn tracking_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut comparator_bad, mut cases) = (0.0f64, 0, 0);
    for family in 0..5 {
        for m in 1..=3 {
            for k in 0..=2 {
                let a = random_automaton(&mut rng, family, m, 2);
                let n = rng.random_range(2..=5);
                let class = enumerate_switching(&a, n, k).unwrap();
                let eta = rng.random_range(0.2..2.0);
                let rounds: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..m * a.num_actions()).map(|_| rng.random_range(0..=8) as f64 / 8.0).collect())
                    .collect();
                let mut f = TrackingForecaster::new(&a, n, k, eta).unwrap();
                for t in 0..n {
                    let (_, law) = f.exact_predictive().unwrap();
                    let mut logs = vec![Vec::new(); class.legal.len()];
                    for mem in &class.members {
                        let loss: f64 =
                            (0..t).map(|s| round_loss(&a, &rounds[s], &class.legal.sequences()[mem[s]])).sum();
                        logs[mem[t]].push(-eta * loss);
                    }
                    let brute = normalize_log_weights(&logs.iter().map(|l| log_sum_exp_slice(l)).collect::<Vec<_>>());
                    let tv = law.iter().zip(&brute).map(|(p, q)| (p - q).abs()).sum::<f64>() / 2.0;
                    worst = worst.max(tv);
                    f.observe(&rounds[t]).unwrap();
                }
                let exhaustive = class
                    .members
                    .iter()
                    .map(|mem| {
                        (0..n).map(|s| round_loss(&a, &rounds[s], &class.legal.sequences()[mem[s]])).sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min);
                if switching_comparator(&a, &rounds, k).unwrap().loss != exhaustive || f.comparator_loss() != exhaustive
                {
                    comparator_bad += 1;
                }
                cases += 1;
            }
        }
    }
    Verdict {
        pass: worst < 1e-9 && comparator_bad == 0,
        detail: format!("{cases} instances, max TV {worst:.2e} (tol 1e-9), comparator mismatches {comparator_bad}"),
    }
}

fn tracking_bound_frequency() -> Verdict {
    let mut c = Config::new(ConstraintDescriptor::Coherence { gamma: 1.0 }, 2, 3, 1000);
    c.game.replicas = 200;
    c.game.seed = 6;
    c.forecaster.mode = Mode::Tracking;
    c.forecaster.switches = Some(2);
    c.environment.kind = EnvKind::Piecewise;
    c.environment.change_points = 2;
    let r = run(&c).unwrap();
    let frac = r.fraction_within_bound();
    let worst = r.replicas.iter().map(|x| x.regret()).fold(f64::NEG_INFINITY, f64::max);
    Verdict {
        pass: frac >= 0.95,
        detail: format!(
            "M=2 N=3 coherence, K=2, {} replicas, within bound {:.1}% (need 95%), bound {:.2}, largest regret {worst:.2}",
            r.replicas.len(),
            100.0 * frac,
            r.replicas[0].bound
        ),
    }
}

fn global_losses() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst, mut worst_sum, mut cases) = (0.0f64, 0.0f64, 0);
    for i in 0..120 {
        let (m, n) = (rng.random_range(1..=4), rng.random_range(1..=3));
        let a = random_automaton(&mut rng, i % 4, m, n);
        let set = enumerate_legal(&a).unwrap();
        let eta = rng.random_range(0.1..3.0);
        let commons: Vec<Vec<f64>> =
            (0..rng.random_range(1..6)).map(|_| (0..n).map(|_| rng.random()).collect()).collect();
        for agg in [Aggregator::Max, Aggregator::Min] {
            let mut f = GlobalForecaster::new(&a, agg, eta).unwrap();
            for c in &commons {
                f.observe(c).unwrap();
            }
            let logs: Vec<f64> =
                set.iter().map(|s| -eta * commons.iter().map(|c| global_round_loss(agg, c, s)).sum::<f64>()).collect();
            let law = normalize_log_weights(&logs);
            let round = f.round().unwrap();
            for (s, p) in set.iter().zip(&law) {
                worst = worst.max(relative_error(round.prob_of(s), *p));
            }
        }
        let mut f = GlobalForecaster::new(&a, Aggregator::Sum, eta).unwrap();
        let mut table = LossTable::for_automaton(&a);
        for c in &commons {
            f.observe(c).unwrap();
            table.accumulate(&c.repeat(m)).unwrap();
        }
        let standard = forward_pass(&a, &table, eta).unwrap();
        let round = f.round().unwrap();
        for s in set.iter() {
            worst_sum = worst_sum.max((round.prob_of(s) - standard.prob_of(s)).abs());
        }
        cases += 1;
    }
    Verdict {
        pass: worst <= 1e-9 && worst_sum <= 1e-12,
        detail: format!(
            "{cases} instances, max/min rel err {worst:.2e} (tol 1e-9), sum vs standard {worst_sum:.2e} (tol 1e-12)"
        ),
    }
}

fn random_step_loss(rng: &mut ChaCha8Rng, actions: usize) -> PiecewiseConstantLoss {
    let per_action = (0..actions)
        .map(|_| {
            let mut starts: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            starts.push(0.0);
            starts.sort_by(f64::total_cmp);
            starts.dedup();
            let values = starts.iter().map(|_| rng.random()).collect();
            StepFunction::new(starts, values).unwrap()
        })
        .collect();
    PiecewiseConstantLoss::new(per_action).unwrap()
}

fn continuum() -> Verdict {
    let n = 2500;
    let mut c = Config::new(ConstraintDescriptor::Escalation, 1, 3, n);
    c.game.constraint = None;
    c.game.tasks = None;
    c.game.replicas = 100;
    c.game.seed = 8;
    c.forecaster.mode = Mode::Continuum;
    c.forecaster.eps = Some(1.0 / (n as f64).sqrt());
    c.forecaster.shifts = Some(2);
    c.environment.kind = EnvKind::Continuum;
    let r = run(&c).unwrap();
    let frac = r.fraction_within_bound();
    let worst = r.replicas.iter().map(|x| x.regret()).fold(f64::NEG_INFINITY, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut worst_p, mut out_of_range, mut grids) = (0.0f64, 0, 0);
    for eps in [0.5, 0.34, 0.25, 0.2] {
        for actions in 2..=3 {
            for m in 0..=2 {
                let grid = discretize(eps).unwrap();
                if m >= grid.cells() {
                    continue;
                }
                let mut f =
                    ContinuumForecaster::new(ActionSet::integers(actions).unwrap(), grid.clone(), m, 1.5).unwrap();
                for _ in 0..6 {
                    let l = random_step_loss(&mut rng, actions);
                    out_of_range +=
                        integrate_losses(&l, &grid).iter().filter(|v| !(**v >= 0.0 && **v <= grid.eps())).count();
                    f.observe(&l).unwrap();
                }
                let set = enumerate_legal(f.automaton()).unwrap();
                let law = oracle_distribution(&set, f.table(), 1.5).unwrap();
                let lattice = f.round();
                for (s, p) in set.iter().zip(&law) {
                    worst_p = worst_p.max(relative_error(lattice.prob_of(s), *p));
                }
                grids += 1;
            }
        }
    }
    Verdict {
        pass: frac >= 0.95 && worst_p <= 1e-9 && out_of_range == 0,
        detail: format!(
            "n={n} N=3 m=2 eps=0.02: within bound {:.1}% of {} replicas (need 95%), bound {:.2}, largest regret {worst:.2}; \
             {grids} tiny grids max rel err {worst_p:.2e} (tol 1e-9); integrals outside [0, eps]: {out_of_range}",
            100.0 * frac,
            r.replicas.len(),
            r.replicas[0].bound
        ),
    }
}

fn csv_bytes(c: &Config) -> Vec<u8> {
    let mut out = Vec::new();
    run(c).unwrap().write_csv(&mut out).unwrap();
    out
}

fn reproducibility() -> Verdict {
    let mut configs = Vec::new();
    let mut c = Config::new(ConstraintDescriptor::Budget { budget: 7.0 }, 4, 3, 200);
    c.game.replicas = 4;
    c.game.seed = 99;
    configs.push(c.clone());
    c.environment.kind = EnvKind::Rotating;
    c.forecaster.mode = Mode::Tracking;
    c.forecaster.switches = Some(1);
    configs.push(c.clone());
    c.environment.kind = EnvKind::Piecewise;
    c.forecaster.mode = Mode::Global;
    c.forecaster.aggregator = Some(Aggregator::Max);
    configs.push(c.clone());
    c.game.constraint = None;
    c.game.tasks = None;
    c.environment.kind = EnvKind::Continuum;
    c.forecaster.mode = Mode::Continuum;
    c.forecaster.eps = Some(0.1);
    c.forecaster.shifts = Some(2);
    configs.push(c);
    let identical = configs.iter().filter(|c| csv_bytes(c) == csv_bytes(c)).count();
    Verdict {
        pass: identical == configs.len(),
        detail: format!("{identical}/{} configs produced byte-identical CSV on rerun", configs.len()),
    }
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("sampler law", sampler_law),
        ("fixed-comparator bound", fixed_bound_frequency),
        ("complexity counts", complexity_counts),
        ("tracking exactness", tracking_exactness),
        ("tracking bound", tracking_bound_frequency),
        ("global loss", global_losses),
        ("continuum", continuum),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let v = f();
        report(i + 1, name, started, &v);
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
