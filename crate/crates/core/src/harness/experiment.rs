//! End-to-end runs: AVR, offline prefixes, the stationary program and the
//! deviation metrics, one independent pipeline per seed.

use rayon::prelude::*;

use crate::avr::run_avr_on;
use crate::error::Result;
use crate::metrics::{self, HorizonTrace};
use crate::offline::{optimality_gap, solve_offline_indexed, GapPoint, OfflineOptions};
use crate::slot_solver::Theta;
use crate::stationary::{solve_optstat, StationarySolution};

use super::config::{ExperimentConfig, Resolved};

/// Per-user distances between the tracked state and the horizon statistics of the offline optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingDeviations {
    /// `|m^T(r*) - m_i(T)|`
    pub mean: Vec<f64>,
    /// `|Var^T(r*) - v_i(T)|`
    pub variance: Vec<f64>,
    /// `|e^T(r*) - (m_i(T) - U_i^V(v_i(T)))|`
    pub qoe: Vec<f64>,
}

impl TrackingDeviations {
    pub fn max(&self) -> f64 {
        self.mean.iter().chain(&self.variance).chain(&self.qoe).fold(0.0, |a, b| a.max(*b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub trace: HorizonTrace,
    pub theta_final: Theta,
    pub horizon_mean: Vec<f64>,
    pub horizon_variance: Vec<f64>,
    pub horizon_qoe: Vec<f64>,
    pub avr_objective: f64,
    pub gaps: Vec<GapPoint>,
    /// Offline optimum over the full horizon.
    pub offline_objective: f64,
    pub offline_kkt_residual: f64,
    pub deviations: TrackingDeviations,
    /// `||theta(T) - theta^pi||_inf`, when the stationary program was solved.
    pub stationary_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub outcome: std::result::Result<SeedResult, String>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub digest: String,
    pub version: &'static str,
    pub horizon: usize,
    pub checkpoints: Vec<usize>,
    pub stationary: std::result::Result<StationarySolution, String>,
    pub seeds: Vec<SeedReport>,
    tolerances: super::config::Tolerances,
}

/// One named pass/fail outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) })
}

impl RunReport {
    /// Median relative gap across successful seeds, per checkpoint.
    pub fn median_relative_gaps(&self) -> Vec<(usize, Option<f64>)> {
        self.checkpoints
            .iter()
            .enumerate()
            .map(|(j, &h)| {
                let gaps = self
                    .seeds
                    .iter()
                    .filter_map(|s| s.outcome.as_ref().ok())
                    .map(|r| r.gaps[j].relative_gap)
                    .collect();
                (h, median(gaps))
            })
            .collect()
    }

    pub fn checks(&self) -> Vec<Check> {
        let tol = self.tolerances;
        let mut out = vec![check(
            "stationary",
            self.stationary.is_ok(),
            match &self.stationary {
                Ok(s) => format!("kkt residual {:e}", s.kkt_residual),
                Err(e) => e.clone(),
            },
        )];
        for s in &self.seeds {
            let r = match &s.outcome {
                Ok(r) => r,
                Err(e) => {
                    out.push(check(format!("seed.{}.completed", s.seed), false, e.clone()));
                    continue;
                }
            };
            let worst_gap = r.gaps.iter().map(|g| g.gap).fold(f64::INFINITY, f64::min);
            out.push(check(
                format!("seed.{}.gap_nonnegative", s.seed),
                r.gaps.iter().all(|g| g.gap >= -tol.gap),
                format!("smallest gap {worst_gap:e}"),
            ));
            let worst_mv = r.deviations.mean.iter().chain(&r.deviations.variance).fold(0.0f64, |a, b| a.max(*b));
            let worst_e = r.deviations.qoe.iter().fold(0.0f64, |a, b| a.max(*b));
            out.push(check(
                format!("seed.{}.tracked_statistics", s.seed),
                worst_mv <= tol.tracking && worst_e <= 2.0 * tol.tracking,
                format!("mean/variance deviation {worst_mv:e}, qoe deviation {worst_e:e}"),
            ));
        }
        out
    }

    pub fn all_passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }
}

fn run_seed(resolved: &Resolved, seed: u64, stationary: Option<&StationarySolution>) -> Result<SeedResult> {
    let cfg = &resolved.config;
    let profile = &resolved.profile;
    let universe = &resolved.universe;
    let process = resolved.process.clone().with_seed(seed);
    let realization = process.realize(cfg.horizon);
    let trace = run_avr_on(&realization, universe, profile, resolved.theta0.clone(), &resolved.slot_options())?;
    let theta_final = trace
        .theta_path
        .as_ref()
        .and_then(|p| p.last().cloned())
        .unwrap_or_else(|| resolved.theta0.clone());
    let offline_opts = OfflineOptions {
        tol: cfg.tolerances.solver,
        ..OfflineOptions::default()
    };
    let gaps = optimality_gap(&realization, universe, &trace, profile, &cfg.checkpoints, &offline_opts)?;
    let offline = solve_offline_indexed(&realization, universe, profile, &offline_opts, None)?;

    let n = profile.len();
    let online = metrics::horizon_moments(&trace.allocations)?;
    let best = metrics::horizon_moments(&offline.allocations)?;
    let mut horizon_qoe = Vec::with_capacity(n);
    let mut deviations = TrackingDeviations {
        mean: Vec::with_capacity(n),
        variance: Vec::with_capacity(n),
        qoe: Vec::with_capacity(n),
    };
    for i in 0..n {
        let pen = &profile.user(i).penalty;
        horizon_qoe.push(online[i].0 - pen.eval(online[i].1)?.0);
        let (m_star, v_star) = best[i];
        let e_star = m_star - pen.eval(v_star)?.0;
        let tracked_e = theta_final.m[i] - pen.eval(theta_final.v[i])?.0;
        deviations.mean.push((m_star - theta_final.m[i]).abs());
        deviations.variance.push((v_star - theta_final.v[i]).abs());
        deviations.qoe.push((e_star - tracked_e).abs());
    }
    Ok(SeedResult {
        avr_objective: metrics::objective_phi(&trace, profile)?,
        horizon_mean: online.iter().map(|x| x.0).collect(),
        horizon_variance: online.iter().map(|x| x.1).collect(),
        horizon_qoe,
        gaps,
        offline_objective: offline.objective,
        offline_kkt_residual: offline.kkt_residual,
        deviations,
        stationary_distance: stationary.map(|s| theta_final.distance_inf(&s.theta_pi)),
        theta_final,
        trace,
    })
}

/// Runs every seed of a validated configuration.
///
/// A fault inside one seed is recorded in its report; the other seeds still run.
pub fn run_resolved(resolved: &Resolved) -> RunReport {
    let cfg = &resolved.config;
    let stationary = solve_optstat(&resolved.universe, resolved.pi(), &resolved.profile, cfg.tolerances.solver).map_err(|e| e.to_string());
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&seed| SeedReport {
            seed,
            outcome: run_seed(resolved, seed, stationary.as_ref().ok()).map_err(|e| e.to_string()),
        })
        .collect();
    RunReport {
        scenario: cfg.scenario.clone(),
        digest: resolved.digest.clone(),
        version: env!("CARGO_PKG_VERSION"),
        horizon: cfg.horizon,
        checkpoints: cfg.checkpoints.clone(),
        stationary,
        seeds,
        tolerances: cfg.tolerances,
    }
}

/// Validates `config` and runs it. An invalid configuration runs nothing.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    Ok(run_resolved(&config.resolve()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenarios;

    #[test]
    fn deterministic_scenario_converges() {
        let mut cfg = scenarios::deterministic();
        cfg.horizon = 20_000;
        let report = run_experiment(&cfg).unwrap();
        assert!(report.all_passed(), "{:?}", report.checks());
        let r = report.seeds[0].outcome.as_ref().unwrap();
        assert!(r.gaps.last().unwrap().gap <= 1e-3);
        assert!(r.deviations.max() <= 1e-3, "{:?}", r.deviations);
        assert!(r.stationary_distance.unwrap() <= 1e-3);
    }

    #[test]
    fn seed_fault_is_isolated() {
        let mut cfg = scenarios::two_constraint();
        cfg.horizon = 300;
        cfg.checkpoints = vec![100, 300];
        cfg.seeds = vec![4, 9];
        let resolved = cfg.resolve().unwrap();
        let report = run_resolved(&resolved);
        assert_eq!(report.seeds.len(), 2);
        assert!(report.seeds.iter().all(|s| s.outcome.is_ok()));
        assert_eq!(report.median_relative_gaps().len(), 2);
        // A start outside H fails inside every seed; seeds report it rather than panic.
        let mut broken = resolved.clone();
        broken.theta0 = Theta::new(vec![-1.0], vec![0.0]);
        let report = run_resolved(&broken);
        assert!(report.seeds.iter().all(|s| s.outcome.is_err()));
        assert!(!report.all_passed());
    }

    #[test]
    fn median_of_even_count() {
        assert_eq!(median(vec![3.0, 1.0, 2.0, 4.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }
}
