//! The per-slot program solved by the online allocator:
//!
//! ```text
//! maximize   sum_i w_i (r_i - kappa_i (r_i - m_i)^2)
//! subject to c(r) <= 0,  r >= 0
//! ```
//!
//! with `w_i = (U_i^E)'(e_i)`, `kappa_i = (U_i^V)'(v_i)`, `e_i = m_i - U_i^V(v_i)`.
//! The objective is strictly concave, so the maximizer is unique.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{clamp_dust, dual_bisection, project_feasible, Constraint};
use crate::error::{invalid, Error, Result};
use crate::kkt;
use crate::utilities::UtilityProfile;

/// Tracked statistics `(m, v)`, an element of `H = [0, r_max]^N x [0, v_max]^N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Theta {
    pub fn new(m: Vec<f64>, v: Vec<f64>) -> Self {
        Self { m, v }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// `(m_1..m_N, v_1..v_N)`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.m.iter().chain(&self.v).copied().collect()
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.is_empty() || x.len() % 2 != 0 {
            return invalid(format!("theta needs 2N entries, got {}", x.len()));
        }
        let n = x.len() / 2;
        Ok(Self {
            m: x[..n].to_vec(),
            v: x[n..].to_vec(),
        })
    }

    pub fn distance_inf(&self, other: &Theta) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// How far `self` lies outside `H` (zero when inside).
    pub fn excess_outside(&self, r_max: f64) -> f64 {
        let v_max = r_max * r_max;
        let out = |x: f64, hi: f64| (-x).max(x - hi).max(0.0);
        let m = self.m.iter().map(|&x| out(x, r_max));
        let v = self.v.iter().map(|&x| out(x, v_max));
        m.chain(v).fold(0.0, f64::max)
    }

    pub fn clamp_into(&mut self, r_max: f64) {
        let v_max = r_max * r_max;
        self.m.iter_mut().for_each(|x| *x = x.clamp(0.0, r_max));
        self.v.iter_mut().for_each(|x| *x = x.clamp(0.0, v_max));
    }

    /// Rejects `theta` outside `H` (up to rounding) or with the wrong dimension.
    pub fn check(&self, profile: &UtilityProfile) -> Result<()> {
        let n = profile.len();
        if self.m.len() != n || self.v.len() != n {
            return invalid(format!("theta has dimension ({}, {}), profile has {n} users", self.m.len(), self.v.len()));
        }
        let r_max = profile.r_max();
        let slack = 1e-12 * r_max.max(1.0) * r_max.max(1.0);
        for (i, (&m, &v)) in self.m.iter().zip(&self.v).enumerate() {
            if !(m >= -slack && m <= r_max + slack) {
                return invalid(format!("m_{i} = {m} outside [0, {r_max}]"));
            }
            if !(v >= -slack && v <= profile.v_max() + slack) {
                return invalid(format!("v_{i} = {v} outside [0, {}]", profile.v_max()));
            }
        }
        Ok(())
    }
}

/// Per-user coefficients of the slot program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotWeights {
    pub w: f64,
    pub kappa: f64,
    pub e: f64,
}

pub fn weights_from_theta(theta: &Theta, profile: &UtilityProfile) -> Result<Vec<SlotWeights>> {
    theta.check(profile)?;
    (0..profile.len())
        .map(|i| {
            let user = profile.user(i);
            let (penalty, kappa) = user.penalty.eval(theta.v[i])?;
            let e = theta.m[i] - penalty;
            let (_, w) = user.qoe.eval(e)?;
            if !(w > 0.0 && kappa > 0.0 && w.is_finite() && kappa.is_finite()) {
                return Err(Error::Assumption {
                    assumption: "U.E/U.V.1",
                    detail: format!("user {i}: w = {w}, kappa = {kappa} must be positive and finite"),
                });
            }
            Ok(SlotWeights { w, kappa, e })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Dual bisection for every separable family (all shipped families).
    #[default]
    Auto,
    DualBisection,
    ProjectedGradient,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Backend::Auto),
            "dual_bisection" | "bisection" => Ok(Backend::DualBisection),
            "projected_gradient" | "pg" => Ok(Backend::ProjectedGradient),
            other => invalid(format!("unknown backend {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotOptions {
    pub backend: Backend,
    /// KKT residual the solution must reach.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SlotOptions {
    fn default() -> Self {
        Self {
            backend: Backend::Auto,
            tol: 1e-8,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotSolution {
    pub r_star: Vec<f64>,
    pub mu: f64,
    pub gamma: Vec<f64>,
    pub kkt_residual: f64,
    pub backend: Backend,
}

/// `sum_i w_i (r_i - kappa_i (r_i - m_i)^2)`.
pub fn slot_objective(weights: &[SlotWeights], m: &[f64], r: &[f64]) -> f64 {
    weights
        .iter()
        .zip(m.iter().zip(r))
        .map(|(sw, (&mi, &ri))| sw.w * (ri - sw.kappa * (ri - mi) * (ri - mi)))
        .sum()
}

fn slot_gradient(weights: &[SlotWeights], m: &[f64], r: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .zip(m.iter().zip(r))
        .map(|(sw, (&mi, &ri))| sw.w * (1.0 - 2.0 * sw.kappa * (ri - mi)))
        .collect()
}

pub fn solve_optavr(theta: &Theta, c: &Constraint, profile: &UtilityProfile) -> Result<SlotSolution> {
    solve_optavr_with(theta, c, profile, &SlotOptions::default())
}

pub fn solve_optavr_with(theta: &Theta, c: &Constraint, profile: &UtilityProfile, opts: &SlotOptions) -> Result<SlotSolution> {
    let weights = weights_from_theta(theta, profile)?;
    if c.dim() != profile.len() {
        return invalid(format!("constraint has {} users, profile has {}", c.dim(), profile.len()));
    }
    let backend = match opts.backend {
        Backend::Auto => Backend::DualBisection,
        b => b,
    };
    let (mut r, hint) = match backend {
        Backend::ProjectedGradient => (projected_gradient(&weights, &theta.m, c, opts)?, None),
        _ => {
            let center: Vec<f64> = weights.iter().zip(&theta.m).map(|(sw, m)| m + 0.5 / sw.kappa).collect();
            let curv: Vec<f64> = weights.iter().map(|sw| 2.0 * sw.w * sw.kappa).collect();
            let found = dual_bisection(c, &center, &curv, 1e-12, "OPTAVR dual bisection")?;
            (found.x, Some(found.lambda))
        }
    };
    clamp_dust(&mut r);
    let grad = slot_gradient(&weights, &theta.m, &r);
    let cert = kkt::recover(c, &r, &grad, hint.as_slice());
    if !(cert.residual <= opts.tol) {
        return Err(Error::NotConverged {
            solver: "OPTAVR",
            iterations: 0,
            residual: cert.residual,
            best: r,
        });
    }
    Ok(SlotSolution {
        r_star: r,
        mu: cert.mu,
        gamma: cert.gamma,
        kkt_residual: cert.residual,
        backend,
    })
}

fn projected_gradient(weights: &[SlotWeights], m: &[f64], c: &Constraint, opts: &SlotOptions) -> Result<Vec<f64>> {
    let lip = 2.0 * weights.iter().map(|sw| sw.w * sw.kappa).fold(0.0, f64::max);
    let center: Vec<f64> = weights.iter().zip(m).map(|(sw, mi)| mi + 0.5 / sw.kappa).collect();
    let mut r = project_feasible(c, &center)?;
    let mut f = slot_objective(weights, m, &r);
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let grad = slot_gradient(weights, m, &r);
        residual = kkt::recover(c, &r, &grad, &[]).residual;
        if residual <= opts.tol {
            return Ok(r);
        }
        let mut step = 1.0 / lip;
        loop {
            let trial: Vec<f64> = r.iter().zip(&grad).map(|(x, g)| x + step * g).collect();
            let cand = project_feasible(c, &trial)?;
            let d2: f64 = cand.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum();
            let lin: f64 = cand.iter().zip(&r).zip(&grad).map(|((a, b), g)| g * (a - b)).sum();
            let fc = slot_objective(weights, m, &cand);
            if fc >= f + lin - d2 / (2.0 * step) - 1e-15 * f.abs().max(1.0) || step < 1e-14 / lip {
                r = cand;
                f = fc;
                break;
            }
            step *= 0.5;
        }
    }
    Err(Error::NotConverged {
        solver: "OPTAVR projected gradient",
        iterations: opts.max_iter,
        residual,
        best: r,
    })
}

/// KKT residual of `sol` with its own multipliers: stationarity, both
/// complementary slackness conditions, and sign/feasibility violations.
pub fn kkt_residual_optavr(sol: &SlotSolution, theta: &Theta, c: &Constraint, profile: &UtilityProfile) -> Result<f64> {
    let weights = weights_from_theta(theta, profile)?;
    if sol.r_star.len() != profile.len() || sol.gamma.len() != profile.len() {
        return invalid("solution dimension does not match the profile");
    }
    let grad = slot_gradient(&weights, &theta.m, &sol.r_star);
    Ok(kkt::residual(c, &sol.r_star, &grad, sol.mu, &sol.gamma))
}

/// Largest observed `||r*(theta + d) - r*(theta)|| / ||d||` over `samples`
/// random `theta` in `H` and perturbations with `||d|| = 1e-4`.
pub fn empirical_lipschitz(c: &Constraint, profile: &UtilityProfile, samples: usize, seed: u64) -> Result<f64> {
    const STEP: f64 = 1e-4;
    let n = profile.len();
    let r_max = profile.r_max();
    let v_max = profile.v_max();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let theta = Theta {
            m: (0..n).map(|_| rng.random::<f64>() * r_max).collect(),
            v: (0..n).map(|_| rng.random::<f64>() * v_max).collect(),
        };
        let mut dir: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>() - 0.5).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let base = theta.to_vec();
        for (j, d) in dir.iter_mut().enumerate() {
            *d *= STEP / norm;
            let hi = if j < n { r_max } else { v_max };
            // Reflect components that would leave H.
            if !(0.0..=hi).contains(&(base[j] + *d)) {
                *d = -*d;
            }
        }
        let moved: Vec<f64> = base.iter().zip(&dir).map(|(a, b)| a + b).collect();
        let moved = Theta::from_slice(&moved)?;
        let a = solve_optavr(&theta, c, profile)?;
        let b = solve_optavr(&moved, c, profile)?;
        let diff = a.r_star.iter().zip(&b.r_star).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        worst = worst.max(diff / STEP);
    }
    Ok(worst)
}
