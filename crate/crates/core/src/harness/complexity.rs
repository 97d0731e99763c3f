//! Edge-relaxation counts and timings of one forward pass across parameter sweeps.

use std::fmt;
use std::time::Instant;

use serde::Serialize;

use crate::constraint::{ActionSet, ConstraintAutomaton};
use crate::error::Result;
use crate::lattice::{forward_pass, LossTable};

/// Tolerance on fitted log-log slopes, relative to the expected exponent.
pub const SLOPE_TOLERANCE: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Coherence,
    Escalation,
    Constancy,
    Budget,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Coherence => "coherence",
            Family::Escalation => "escalation",
            Family::Constancy => "constancy",
            Family::Budget => "budget",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub family: Family,
    pub tasks: usize,
    pub actions: usize,
    /// Neighbourhood size for coherence, `m` for constancy, `B` for budget, 0 otherwise.
    pub param: usize,
    pub states: usize,
    pub t_max: usize,
    pub relaxations: u64,
    /// `M N theta`, `M N^2`, `M N^2 (m + 1)` or `M N^2 B`.
    pub order_bound: u64,
    /// `M N |S| max(T_max, 1)`.
    pub kernel_bound: u64,
    pub micros: f64,
}

impl ComplexityRow {
    pub fn within_bounds(&self) -> bool {
        self.relaxations <= self.order_bound && self.relaxations <= self.kernel_bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub family: Family,
    /// `"M"` or `"N"`.
    pub variable: &'static str,
    pub slope: f64,
    pub expected: f64,
    /// Slope of wall time, for information only.
    pub time_slope: f64,
}

impl SlopeFit {
    pub fn within_tolerance(&self) -> bool {
        (self.slope - self.expected).abs() <= SLOPE_TOLERANCE * self.expected
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub rows: Vec<ComplexityRow>,
    pub slopes: Vec<SlopeFit>,
}

impl ComplexityReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(ComplexityRow::within_bounds) && self.slopes.iter().all(SlopeFit::within_tolerance)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<11}{:>6}{:>6}{:>7}{:>8}{:>7}{:>13}{:>13}{:>13}{:>12}",
            "family", "M", "N", "param", "states", "T_max", "relaxations", "order_bound", "kernel_bound", "micros"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<11}{:>6}{:>6}{:>7}{:>8}{:>7}{:>13}{:>13}{:>13}{:>12.1}",
                r.family.to_string(),
                r.tasks,
                r.actions,
                r.param,
                r.states,
                r.t_max,
                r.relaxations,
                r.order_bound,
                r.kernel_bound,
                r.micros
            )?;
        }
        for s in &self.slopes {
            writeln!(
                f,
                "{} {:<11} slope in {} = {:.4} (expected {}, tolerance {:.0}%), time slope {:.3}",
                if s.within_tolerance() { "PASS" } else { "FAIL" },
                s.family.to_string(),
                s.variable,
                s.slope,
                s.expected,
                SLOPE_TOLERANCE * 100.0,
                s.time_slope
            )?;
        }
        Ok(())
    }
}

/// Sweep ranges. Each axis is varied with the others held at their base.
#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub tasks: Vec<usize>,
    pub actions: Vec<usize>,
    pub base_tasks: usize,
    pub base_actions: usize,
    pub gamma: f64,
    pub shifts: usize,
    /// Budget `B` per task; the budget rows use `B = budget_per_task * M`.
    pub budget_per_task: usize,
    /// Forward passes timed per row.
    pub repeats: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tasks: vec![16, 32, 64, 128, 256],
            actions: vec![4, 8, 16, 32, 64],
            base_tasks: 32,
            base_actions: 4,
            gamma: 1.0,
            shifts: 2,
            budget_per_task: 2,
            repeats: 3,
        }
    }
}

fn build(family: Family, tasks: usize, actions: usize, opts: &SweepOptions) -> Result<ConstraintAutomaton> {
    let set = ActionSet::integers(actions)?;
    match family {
        Family::Coherence => ConstraintAutomaton::coherence(set, opts.gamma, tasks),
        Family::Escalation => ConstraintAutomaton::escalation(set, tasks),
        Family::Constancy => ConstraintAutomaton::constancy(set, opts.shifts, tasks),
        Family::Budget => ConstraintAutomaton::budget(set, (opts.budget_per_task * tasks) as f64, tasks),
    }
}

/// `M N |S| max(T_max, 1)`.
pub fn kernel_bound(a: &ConstraintAutomaton) -> u64 {
    (a.task_count() * a.choices() * a.num_states() * a.t_max().max(1)) as u64
}

/// Largest number of actions within `gamma` of one action.
fn neighbourhood(a: &ConstraintAutomaton, gamma: f64) -> usize {
    let v = a.action_set().values();
    v.iter().map(|x| v.iter().filter(|y| (x - *y).abs() <= gamma).count()).max().unwrap_or(0)
}

/// Counts and times one forward pass on a zero loss table.
pub fn measure(family: Family, tasks: usize, actions: usize, opts: &SweepOptions) -> Result<ComplexityRow> {
    let a = build(family, tasks, actions, opts)?;
    let table = LossTable::for_automaton(&a);
    let started = Instant::now();
    let mut relaxations = 0;
    for _ in 0..opts.repeats.max(1) {
        relaxations = forward_pass(&a, &table, 1.0)?.relaxations();
    }
    let micros = started.elapsed().as_secs_f64() * 1e6 / opts.repeats.max(1) as f64;
    let (m, n) = (tasks as u64, actions as u64);
    let (param, order_bound) = match family {
        Family::Coherence => {
            let theta = neighbourhood(&a, opts.gamma);
            (theta, m * n * theta as u64)
        }
        Family::Escalation => (0, m * n * n),
        Family::Constancy => (opts.shifts, m * n * n * (opts.shifts as u64 + 1)),
        Family::Budget => {
            let b = opts.budget_per_task * tasks;
            (b, m * n * n * b as u64)
        }
    };
    Ok(ComplexityRow {
        family,
        tasks,
        actions,
        param,
        states: a.num_states(),
        t_max: a.t_max(),
        relaxations,
        order_bound,
        kernel_bound: kernel_bound(&a),
        micros,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn fit(family: Family, variable: &'static str, expected: f64, rows: &[ComplexityRow]) -> SlopeFit {
    let x = |r: &ComplexityRow| if variable == "M" { r.tasks as f64 } else { r.actions as f64 };
    let counts: Vec<(f64, f64)> = rows.iter().map(|r| (x(r), r.relaxations as f64)).collect();
    let times: Vec<(f64, f64)> = rows.iter().map(|r| (x(r), r.micros.max(1e-3))).collect();
    SlopeFit { family, variable, slope: log_log_slope(&counts), expected, time_slope: log_log_slope(&times) }
}

/// Sweeps `M` for every family and `N` for escalation, coherence and constancy.
/// Budget rows are checked against their bounds only: `B` grows with `M`.
pub fn complexity_sweep(opts: &SweepOptions) -> Result<ComplexityReport> {
    let mut report = ComplexityReport::default();
    for family in [Family::Coherence, Family::Escalation, Family::Constancy, Family::Budget] {
        let by_m: Vec<ComplexityRow> =
            opts.tasks.iter().map(|&m| measure(family, m, opts.base_actions, opts)).collect::<Result<_>>()?;
        if family != Family::Budget {
            report.slopes.push(fit(family, "M", 1.0, &by_m));
        }
        report.rows.extend(by_m);
        let expected_n = match family {
            Family::Coherence => 1.0,
            Family::Escalation | Family::Constancy => 2.0,
            Family::Budget => continue,
        };
        let by_n: Vec<ComplexityRow> =
            opts.actions.iter().map(|&n| measure(family, opts.base_tasks, n, opts)).collect::<Result<_>>()?;
        report.slopes.push(fit(family, "N", expected_n, &by_n));
        report.rows.extend(by_n);
    }
    Ok(report)
}
