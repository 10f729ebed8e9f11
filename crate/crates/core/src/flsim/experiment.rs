//! Repetitions, per-seed CSV, summaries, and the convergence check.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::{FlConfig, Mechanism, RoundReport, Simulation, Task};
use crate::analysis::{alpha, convergence_bound, ConvergenceConstants};
use crate::error::{Error, Result};
use crate::stats::{ci95_half_width, mean, ols_slope};

pub const CSV_HEADER: &str = "round,objective_gap,accuracy,snr_db,bits,elapsed_ms";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub ci95: f64,
}

impl Stat {
    fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            ci95: if xs.len() > 1 { ci95_half_width(xs) } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub round: u64,
    pub objective_gap: Stat,
    pub accuracy: Option<Stat>,
    /// Over repetitions with finite SNR; `None` if there are none.
    pub snr_db: Option<Stat>,
    pub bits: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub reps: u64,
    pub seeds: Vec<u64>,
    pub rounds: Vec<SummaryRow>,
    pub final_round: SummaryRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub seeds: Vec<u64>,
    /// One report series per repetition, in seed order.
    pub runs: Vec<Vec<RoundReport>>,
    pub summary: Summary,
}

/// Repetition `r` runs with seed `cfg.seed + r`. Repetitions run in
/// parallel; results do not depend on scheduling.
pub fn run_experiment(cfg: &FlConfig, task: &Task) -> Result<ExperimentResult> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.reps).map(|r| cfg.seed.wrapping_add(r)).collect();
    let runs = seeds
        .par_iter()
        .map(|&s| Simulation::new(cfg, task, s)?.run())
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&seeds, &runs)?;
    Ok(ExperimentResult { seeds, runs, summary })
}

fn summarize(seeds: &[u64], runs: &[Vec<RoundReport>]) -> Result<Summary> {
    let rounds = runs.first().map_or(0, |r| r.len());
    if rounds == 0 {
        return Err(Error::Config("experiment produced no rounds".into()));
    }
    let rows: Vec<SummaryRow> = (0..rounds)
        .map(|i| {
            let col = |f: &dyn Fn(&RoundReport) -> Option<f64>| -> Vec<f64> {
                runs.iter().filter_map(|r| f(&r[i])).collect()
            };
            let acc = col(&|r| r.accuracy);
            let snr = col(&|r| r.snr_db.filter(|v| v.is_finite()));
            SummaryRow {
                round: runs[0][i].t,
                objective_gap: Stat::of(&col(&|r| Some(r.objective_gap))),
                accuracy: (!acc.is_empty()).then(|| Stat::of(&acc)),
                snr_db: (!snr.is_empty()).then(|| Stat::of(&snr)),
                bits: Stat::of(&col(&|r| Some(r.bits as f64))),
            }
        })
        .collect();
    Ok(Summary {
        reps: seeds.len() as u64,
        seeds: seeds.to_vec(),
        final_round: rows[rounds - 1].clone(),
        rounds: rows,
    })
}

/// Per-round CSV. Accuracy is empty for regression tasks, SNR is `inf` for
/// error-free uploads and empty when undefined.
pub fn to_csv(reports: &[RoundReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
        let snr = match r.snr_db {
            Some(v) if v.is_infinite() => "inf".to_string(),
            Some(v) => v.to_string(),
            None => String::new(),
        };
        let _ = writeln!(out, "{},{},{},{},{},{}", r.t, r.objective_gap, acc, snr, r.bits, r.elapsed_ms);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundPoint {
    #[serde(rename = "T")]
    pub t: u64,
    pub measured_gap: f64,
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceCheck {
    #[serde(rename = "T")]
    pub t: u64,
    pub measured_gap: f64,
    pub bound: f64,
    /// Every checked synchronization index respects the bound.
    pub satisfied: bool,
    pub alpha: f64,
    pub init_dist: f64,
    /// Radius of the visited ball used to certify `θ_k`.
    pub visited_radius: f64,
    pub constants: ConvergenceConstants,
    /// Every synchronization index, including those below `α`.
    pub checks: Vec<BoundPoint>,
    /// Log-log slope of the mean gap over the final half of training.
    pub slope: f64,
}

/// Compares the seed-mean gap with the convergence bound.
pub fn convergence_check(cfg: &FlConfig, task: &Task, result: &ExperimentResult) -> Result<ConvergenceCheck> {
    let mech = Mechanism::new(cfg.mechanism.clone())?;
    let w_star = task.w_star();
    let radius = result
        .runs
        .iter()
        .flat_map(|r| r.iter().map(|x| x.max_dist))
        .fold(0.0, f64::max);
    let theta: Vec<f64> = (0..task.clients())
        .map(|k| task.theta_sq(k, w_star, radius, cfg.theta_safety).sqrt())
        .collect();
    let m = theta.iter().cloned().fold(0.0, f64::max);
    let constants = ConvergenceConstants {
        l: task.smoothness(),
        c: task.strong_convexity(),
        theta,
        psi: task.psi(cfg.psi_variant),
        m,
        subvectors: mech.subvectors(task.dim()),
        variance: mech.error_variance_per_subvector(),
        tau: cfg.tau,
        weights: cfg.client_weights(),
    };
    let init = task.initial_point();
    let init_dist = init.iter().zip(w_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let a = alpha(constants.l, constants.c, cfg.tau);
    let mut checks = Vec::new();
    for row in &result.summary.rounds {
        let bound = convergence_bound(row.round, &constants, init_dist)?;
        checks.push(BoundPoint {
            t: row.round,
            measured_gap: row.objective_gap.mean,
            bound,
            satisfied: row.objective_gap.mean <= bound,
        });
    }
    let total = cfg.total_iters;
    let (xs, ys): (Vec<f64>, Vec<f64>) = result
        .summary
        .rounds
        .iter()
        .filter(|r| 2 * r.round > total && r.objective_gap.mean > 0.0)
        .map(|r| ((r.round as f64).ln(), r.objective_gap.mean.ln()))
        .unzip();
    let slope = if xs.len() >= 2 { ols_slope(&xs, &ys) } else { f64::NAN };
    let last = &result.summary.final_round;
    let bound = convergence_bound(last.round, &constants, init_dist)?;
    Ok(ConvergenceCheck {
        t: last.round,
        measured_gap: last.objective_gap.mean,
        bound,
        satisfied: checks.iter().all(|c| c.satisfied) && last.objective_gap.mean <= bound,
        alpha: a,
        init_dist,
        visited_radius: radius,
        constants,
        checks,
        slope,
    })
}
