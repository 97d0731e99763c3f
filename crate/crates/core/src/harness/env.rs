//! Loss generators. Each environment fixes its hidden parameters at
//! construction and then draws one round at a time from its own stream.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EnvKind, EnvironmentConfig};
use crate::continuum::{PiecewiseConstantLoss, StepFunction};

/// Random streams of one replica: stream `2r` drives the forecaster and
/// stream `2r + 1` the environment, both keyed by the run seed.
pub fn replica_streams(seed: u64, replica: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut forecaster = ChaCha8Rng::seed_from_u64(seed);
    forecaster.set_stream(2 * replica as u64);
    let mut environment = ChaCha8Rng::seed_from_u64(seed);
    environment.set_stream(2 * replica as u64 + 1);
    (forecaster, environment)
}

#[derive(Clone, Debug)]
enum Generator {
    Zero,
    /// Bernoulli losses with fixed means, one per (row, action).
    Iid {
        means: Vec<f64>,
    },
    Rotating {
        period: usize,
    },
    /// Bernoulli losses whose means are redrawn at each change point.
    Piecewise {
        starts: Vec<usize>,
        means: Vec<Vec<f64>>,
    },
    /// Step functions with breakpoints from a fixed pool; the action of a hidden profile is favoured.
    Continuum {
        pool: Vec<f64>,
        pieces: usize,
        hidden: Vec<(f64, usize)>,
    },
    Script(Vec<PiecewiseConstantLoss>),
}

/// Per-round losses for `rows` rows of `actions` entries, each in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Environment {
    rows: usize,
    actions: usize,
    generator: Generator,
}

impl Environment {
    /// `rows` is the task count, or 1 when every task shares the round's losses.
    pub fn new<R: Rng + ?Sized>(
        config: &EnvironmentConfig,
        rows: usize,
        actions: usize,
        rounds: usize,
        rng: &mut R,
    ) -> Self {
        let cells = rows * actions;
        let generator = match config.kind {
            EnvKind::Zero => Generator::Zero,
            EnvKind::Steps => Generator::Script(config.scripted_losses(actions).expect("validated script")),
            EnvKind::Iid => Generator::Iid { means: (0..cells).map(|_| rng.random()).collect() },
            EnvKind::Rotating => Generator::Rotating { period: config.period },
            EnvKind::Piecewise => {
                let phases = config.change_points + 1;
                let starts = (0..phases).map(|i| rounds * i / phases).collect();
                let means = (0..phases).map(|_| (0..cells).map(|_| rng.random()).collect()).collect();
                Generator::Piecewise { starts, means }
            }
            EnvKind::Continuum => {
                let mut pool: Vec<f64> = Vec::with_capacity(config.breakpoint_pool);
                while pool.len() < config.breakpoint_pool {
                    let p: f64 = rng.random();
                    if p > 0.0 && !pool.contains(&p) {
                        pool.push(p);
                    }
                }
                pool.sort_by(f64::total_cmp);
                let shifts = config.change_points.min(pool.len());
                let mut cuts: Vec<f64> = sample_indices(rng, pool.len(), shifts).into_iter().map(|i| pool[i]).collect();
                cuts.sort_by(f64::total_cmp);
                let mut hidden = vec![(0.0, rng.random_range(0..actions))];
                for c in cuts {
                    let prev = hidden.last().expect("non-empty").1;
                    let next = if actions > 1 { (prev + rng.random_range(1..actions)) % actions } else { prev };
                    hidden.push((c, next));
                }
                Generator::Continuum { pool, pieces: config.pieces, hidden }
            }
        };
        Environment { rows, actions, generator }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Row-major `rows x actions` losses for round `t` (zero-based).
    pub fn matrix<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Vec<f64> {
        let cells = self.rows * self.actions;
        match &self.generator {
            Generator::Zero | Generator::Continuum { .. } | Generator::Script(_) => vec![0.0; cells],
            Generator::Iid { means } => means.iter().map(|&p| bernoulli(rng, p)).collect(),
            Generator::Rotating { period } => {
                let mut out = Vec::with_capacity(cells);
                for j in 0..self.rows {
                    let favoured = (j + t / period) % self.actions;
                    for k in 0..self.actions {
                        let u: f64 = rng.random();
                        out.push(if k == favoured { 0.5 * u } else { 0.5 + 0.5 * u });
                    }
                }
                out
            }
            Generator::Piecewise { starts, means } => {
                let phase = starts.partition_point(|&s| s <= t) - 1;
                means[phase].iter().map(|&p| bernoulli(rng, p)).collect()
            }
        }
    }

    /// Step-function losses for round `t` of the continuum game.
    pub fn step_losses<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> PiecewiseConstantLoss {
        let (pool, pieces, hidden) = match &self.generator {
            Generator::Continuum { pool, pieces, hidden } => (pool, *pieces, hidden),
            Generator::Script(rounds) => return rounds[t % rounds.len()].clone(),
            _ => {
                let zero = StepFunction::constant(0.0).expect("zero is a valid value");
                return PiecewiseConstantLoss::new(vec![zero; self.actions]).expect("one function per action");
            }
        };
        let per_action = (0..self.actions)
            .map(|k| {
                let mut starts: Vec<f64> =
                    sample_indices(rng, pool.len(), pieces).into_iter().map(|i| pool[i]).collect();
                starts.extend(hidden.iter().map(|&(s, _)| s));
                starts.push(0.0);
                starts.sort_by(f64::total_cmp);
                starts.dedup();
                let values = starts
                    .iter()
                    .map(|&s| {
                        let i = hidden.partition_point(|&(h, _)| h <= s) - 1;
                        let centre = if hidden[i].1 == k { 0.25 } else { 0.75 };
                        centre + 0.5 * (rng.random::<f64>() - 0.5)
                    })
                    .collect();
                StepFunction::new(starts, values).expect("pool positions lie in (0, 1)")
            })
            .collect();
        PiecewiseConstantLoss::new(per_action).expect("one function per action")
    }
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: EnvKind) -> EnvironmentConfig {
        EnvironmentConfig { kind, ..EnvironmentConfig::default() }
    }

    #[test]
    fn entries_in_unit_interval_and_seeded() {
        for kind in [EnvKind::Zero, EnvKind::Iid, EnvKind::Rotating, EnvKind::Piecewise] {
            let (_, mut rng) = replica_streams(5, 2);
            let env = Environment::new(&config(kind), 3, 4, 100, &mut rng);
            let a: Vec<Vec<f64>> = (0..100).map(|t| env.matrix(t, &mut rng)).collect();
            assert!(a.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            assert!(a.iter().all(|r| r.len() == 12));
            let (_, mut rng) = replica_streams(5, 2);
            let env = Environment::new(&config(kind), 3, 4, 100, &mut rng);
            let b: Vec<Vec<f64>> = (0..100).map(|t| env.matrix(t, &mut rng)).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn streams_differ_across_replicas_and_roles() {
        let (mut f0, mut e0) = replica_streams(1, 0);
        let (mut f1, _) = replica_streams(1, 1);
        let x: u64 = f0.random();
        assert_ne!(x, e0.random::<u64>());
        assert_ne!(x, f1.random::<u64>());
    }

    #[test]
    fn rotating_favours_moving_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let env = Environment::new(&EnvironmentConfig { period: 10, ..config(EnvKind::Rotating) }, 2, 3, 50, &mut rng);
        let m = env.matrix(25, &mut rng);
        assert!(m[2] < 0.5 && m[0] >= 0.5 && m[1] >= 0.5);
        assert!(m[3] < 0.5);
    }

    #[test]
    fn piecewise_changes_means_at_change_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let env = Environment::new(&config(EnvKind::Piecewise), 1, 2, 90, &mut rng);
        match &env.generator {
            Generator::Piecewise { starts, means } => {
                assert_eq!(starts, &vec![0, 30, 60]);
                assert_eq!(means.len(), 3);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn step_losses_use_pool_and_hidden_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let env = Environment::new(&config(EnvKind::Continuum), 1, 3, 10, &mut rng);
        let Generator::Continuum { pool, hidden, .. } = env.generator.clone() else { unreachable!() };
        assert_eq!(hidden.len(), 3);
        for _ in 0..50 {
            let l = env.step_losses(0, &mut rng);
            for f in &l.per_action {
                assert!(f.starts().iter().skip(1).all(|s| pool.contains(s)));
                assert!(f.values().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn script_replays_cyclically() {
        let step = |starts: Vec<f64>, values: Vec<f64>| crate::harness::config::StepSpec { starts, values };
        let cfg = EnvironmentConfig {
            script: vec![
                vec![step(vec![0.0, 0.5], vec![0.0, 1.0]), step(vec![0.0], vec![0.5])],
                vec![step(vec![0.0], vec![1.0]), step(vec![0.0], vec![0.0])],
            ],
            ..config(EnvKind::Steps)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let env = Environment::new(&cfg, 1, 2, 5, &mut rng);
        assert_eq!(env.step_losses(0, &mut rng), env.step_losses(2, &mut rng));
        assert_eq!(env.step_losses(1, &mut rng).per_action[0].eval(0.7), 1.0);
        assert_eq!(env.step_losses(4, &mut rng).per_action[0].eval(0.7), 1.0);
    }
}
