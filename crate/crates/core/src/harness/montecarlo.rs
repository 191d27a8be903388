//! Monte Carlo driver: independent seeded runs of the scenario, with the
//! online-calibration mode compared against a fixed-(wrong-)ξ baseline on
//! the same data, and per-element ξ calibration statistics aggregated over
//! the second half of each trajectory.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

use super::config::{Mode, ScenarioConfig};
use super::run::{run_estimate_with, simulate_log, xi_true_at, RunResult};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StatPair {
    pub mean: f64,
    pub std: f64,
}

fn stat(xs: &[f64]) -> StatPair {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    StatPair { mean, std: var.sqrt() }
}

/// Outcome of one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Per-element ξ calibration error averaged over the second half of the
    /// trajectory (online mode).
    pub xi_error: [f64; 5],
    pub translation_rmse_online: f64,
    pub rotation_rmse_online: f64,
    pub translation_rmse_fixed: f64,
    pub rotation_rmse_fixed: f64,
}

/// Aggregate over all Monte Carlo runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub mode: String,
    pub n_runs: usize,
    /// Mean/std across seeds of the per-seed second-half ξ errors.
    pub xi_error_mean: [f64; 5],
    pub xi_error_std: [f64; 5],
    pub translation_rmse_online: StatPair,
    pub rotation_rmse_online: StatPair,
    pub translation_rmse_fixed: StatPair,
    pub rotation_rmse_fixed: StatPair,
    /// Seeds where the online mode beat the fixed baseline on translation.
    pub online_better_count: usize,
    /// mean(fixed) / mean(online) translation RMSE.
    pub fixed_over_online_ratio: f64,
    pub per_seed: Vec<SeedOutcome>,
    pub failed_seeds: Vec<(u64, String)>,
}

/// ξ error of one run averaged over the second half of the trajectory.
pub fn second_half_xi_error(result: &RunResult, log: &super::logfmt::MeasurementLog) -> [f64; 5] {
    let gt = log.ground_truth.as_ref().expect("simulated logs carry ground truth");
    let t_end = result.keyframes.last().map(|k| k.t).unwrap_or(0.0);
    let t_start = result.keyframes.first().map(|k| k.t).unwrap_or(0.0);
    let half = 0.5 * (t_start + t_end);
    let mut sums = [0.0; 5];
    let mut n = 0usize;
    for k in &result.keyframes {
        if k.t < half {
            continue;
        }
        if let Some(truth) = xi_true_at(gt, k.t) {
            let ta = truth.as_array();
            for i in 0..5 {
                sums[i] += k.xi[i] - ta[i];
            }
            n += 1;
        }
    }
    if n > 0 {
        for s in sums.iter_mut() {
            *s /= n as f64;
        }
    }
    sums
}

fn run_one_seed(cfg: &ScenarioConfig, seed: u64) -> Result<SeedOutcome> {
    let log = simulate_log(cfg, seed)?;
    let online = run_estimate_with(&log, cfg, cfg.mode())?;
    if online.diverged_at.is_some() {
        return Err(Error::SolverDiverged { escalations: 0, cost: f64::NAN });
    }
    let fixed = run_estimate_with(&log, cfg, Mode::VioFixedXi)?;
    let metrics_on = online
        .metrics
        .as_ref()
        .ok_or_else(|| Error::Precondition("no ground truth in simulated log".into()))?;
    let metrics_fx = fixed
        .metrics
        .as_ref()
        .ok_or_else(|| Error::Precondition("no ground truth in simulated log".into()))?;
    Ok(SeedOutcome {
        seed,
        xi_error: second_half_xi_error(&online, &log),
        translation_rmse_online: metrics_on.ate_rmse,
        rotation_rmse_online: metrics_on.rotation_rmse,
        translation_rmse_fixed: metrics_fx.ate_rmse,
        rotation_rmse_fixed: metrics_fx.rotation_rmse,
    })
}

/// Runs `n_runs` independent seeds in a worker pool and aggregates.
pub fn run_montecarlo(cfg: &ScenarioConfig, n_runs: usize) -> Result<MonteCarloReport> {
    if n_runs == 0 {
        return Err(Error::Precondition("n_runs must be >= 1".into()));
    }
    cfg.validate()?;
    let seed_list = cfg.seeds();
    let seeds: Vec<u64> = (0..n_runs)
        .map(|i| seed_list.get(i).copied().unwrap_or(i as u64))
        .collect();

    let results: Mutex<Vec<(u64, Result<SeedOutcome>)>> = Mutex::new(Vec::new());
    let next: Mutex<usize> = Mutex::new(0);
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(seeds.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = {
                    let mut guard = next.lock().unwrap();
                    let i = *guard;
                    *guard += 1;
                    i
                };
                if idx >= seeds.len() {
                    break;
                }
                let seed = seeds[idx];
                let outcome = run_one_seed(cfg, seed);
                results.lock().unwrap().push((seed, outcome));
            });
        }
    });

    let mut entries = results.into_inner().unwrap();
    entries.sort_by_key(|(seed, _)| *seed);
    let mut per_seed = Vec::new();
    let mut failed = Vec::new();
    for (seed, res) in entries {
        match res {
            Ok(o) => per_seed.push(o),
            Err(e) => failed.push((seed, e.to_string())),
        }
    }
    if per_seed.is_empty() {
        return Err(Error::Precondition(format!(
            "all {} Monte Carlo seeds failed; first: {:?}",
            n_runs,
            failed.first()
        )));
    }

    let mut xi_error_mean = [0.0; 5];
    let mut xi_error_std = [0.0; 5];
    for i in 0..5 {
        let xs: Vec<f64> = per_seed.iter().map(|o| o.xi_error[i]).collect();
        let s = stat(&xs);
        xi_error_mean[i] = s.mean;
        xi_error_std[i] = s.std;
    }
    let t_on = stat(&per_seed.iter().map(|o| o.translation_rmse_online).collect::<Vec<_>>());
    let r_on = stat(&per_seed.iter().map(|o| o.rotation_rmse_online).collect::<Vec<_>>());
    let t_fx = stat(&per_seed.iter().map(|o| o.translation_rmse_fixed).collect::<Vec<_>>());
    let r_fx = stat(&per_seed.iter().map(|o| o.rotation_rmse_fixed).collect::<Vec<_>>());
    let online_better_count = per_seed
        .iter()
        .filter(|o| o.translation_rmse_online < o.translation_rmse_fixed)
        .count();

    Ok(MonteCarloReport {
        mode: cfg.mode().label().to_string(),
        n_runs,
        xi_error_mean,
        xi_error_std,
        translation_rmse_online: t_on,
        rotation_rmse_online: r_on,
        translation_rmse_fixed: t_fx,
        rotation_rmse_fixed: r_fx,
        online_better_count,
        fixed_over_online_ratio: t_fx.mean / t_on.mean.max(1e-12),
        per_seed,
        failed_seeds: failed,
    })
}
