//! Weighted block program shared by the offline and stationary oracles.
//!
//! Blocks `k` carry a constraint `c_k`, a weight `pi_k` (summing to one) and
//! an allocation `rho_k`. With `m = sum_k pi_k rho_k` and
//! `v = sum_k pi_k (rho_k - m)^2` the objective is
//! `sum_i U_i^E(m_i - U_i^V(v_i))`. Its gradient with respect to `rho_k` is
//! `pi_k G_k` with `G_ki = w_i (1 - 2 kappa_i (rho_ki - m_i))`, so projected
//! gradient ascent in the `pi`-weighted metric moves every block along `G_k`
//! and projects each block separately.

use crate::constraints::{project_feasible, Constraint};
use crate::error::{invalid, Error, Result};
use crate::kkt::{self, BlockKkt};
use crate::utilities::UtilityProfile;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PooledOptions {
    pub tol: f64,
    pub max_iter: usize,
}

pub(crate) struct Pooled<'a> {
    pub constraints: Vec<&'a Constraint>,
    pub weights: Vec<f64>,
    pub profile: &'a UtilityProfile,
}

#[derive(Debug, Clone)]
pub(crate) struct PooledSolution {
    pub rho: Vec<Vec<f64>>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub objective: f64,
    /// Multipliers in the scaled form `G_k + gamma_k - mu_k c_k' = 0`.
    pub blocks: Vec<BlockKkt>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

struct Eval {
    m: Vec<f64>,
    v: Vec<f64>,
    objective: f64,
}

impl<'a> Pooled<'a> {
    pub fn new(constraints: Vec<&'a Constraint>, weights: Vec<f64>, profile: &'a UtilityProfile) -> Result<Self> {
        if constraints.is_empty() || constraints.len() != weights.len() {
            return invalid("block program needs one positive weight per constraint");
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return invalid("block weights must be positive");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("block weights sum to {total}, not 1"));
        }
        if let Some(c) = constraints.iter().find(|c| c.dim() != profile.len()) {
            return invalid(format!("constraint has {} users, profile has {}", c.dim(), profile.len()));
        }
        Ok(Self {
            constraints,
            weights,
            profile,
        })
    }

    fn n(&self) -> usize {
        self.profile.len()
    }

    pub fn moments(&self, rho: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut m = vec![0.0; n];
        for (p, r) in self.weights.iter().zip(rho) {
            for i in 0..n {
                m[i] += p * r[i];
            }
        }
        let mut v = vec![0.0; n];
        for (p, r) in self.weights.iter().zip(rho) {
            for i in 0..n {
                v[i] += p * (r[i] - m[i]) * (r[i] - m[i]);
            }
        }
        (m, v)
    }

    fn eval(&self, rho: &[Vec<f64>]) -> Result<Eval> {
        let (m, v) = self.moments(rho);
        let mut objective = 0.0;
        for i in 0..self.n() {
            let u = self.profile.user(i);
            objective += u.qoe.eval(m[i] - u.penalty.eval(v[i])?.0)?.0;
        }
        Ok(Eval { m, v, objective })
    }

    pub fn objective(&self, rho: &[Vec<f64>]) -> Result<f64> {
        Ok(self.eval(rho)?.objective)
    }

    /// Scaled gradient blocks `G_k` at moments `(m, v)`.
    fn gradient(&self, rho: &[Vec<f64>], m: &[f64], v: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n = self.n();
        let mut w = vec![0.0; n];
        let mut kappa = vec![0.0; n];
        for i in 0..n {
            let u = self.profile.user(i);
            let (pen, k) = u.penalty.eval(v[i])?;
            w[i] = u.qoe.eval(m[i] - pen)?.1;
            kappa[i] = k;
        }
        Ok(rho
            .iter()
            .map(|r| (0..n).map(|i| w[i] * (1.0 - 2.0 * kappa[i] * (r[i] - m[i]))).collect())
            .collect())
    }

    /// Scaled gradient blocks at `rho`.
    pub fn scaled_gradient(&self, rho: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let (m, v) = self.moments(rho);
        self.gradient(rho, &m, &v)
    }

    /// Per-block multipliers and the largest block residual.
    pub fn certify(&self, rho: &[Vec<f64>]) -> Result<(Vec<BlockKkt>, f64)> {
        let g = self.scaled_gradient(rho)?;
        let blocks: Vec<BlockKkt> = self
            .constraints
            .iter()
            .zip(rho.iter().zip(&g))
            .map(|(c, (r, gk))| kkt::recover(c, r, gk, &[]))
            .collect();
        let worst = blocks.iter().map(|b| b.residual).fold(0.0, f64::max);
        Ok((blocks, worst))
    }

    fn project(&self, rho: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.constraints.iter().zip(rho).map(|(c, r)| project_feasible(c, r)).collect()
    }

    /// Projected gradient ascent with backtracking, an expanding step and
    /// momentum that is reset whenever it opposes the gradient map.
    pub fn solve(&self, init: Option<Vec<Vec<f64>>>, opts: &PooledOptions) -> Result<PooledSolution> {
        let n = self.n();
        let start = match init {
            Some(r) => {
                if r.len() != self.constraints.len() || r.iter().any(|x| x.len() != n) {
                    return invalid("warm start has the wrong shape");
                }
                r
            }
            None => vec![vec![0.0; n]; self.constraints.len()],
        };
        let mut x = self.project(&start)?;
        let mut y = x.clone();
        let mut momentum = 1.0f64;
        let mut step = 1.0 / self.initial_lipschitz(&self.eval(&x)?);
        let mut best_residual = f64::INFINITY;
        for iter in 0..opts.max_iter {
            let (blocks, residual) = self.certify(&x)?;
            best_residual = best_residual.min(residual);
            if residual <= opts.tol {
                let fx = self.eval(&x)?;
                return Ok(PooledSolution {
                    rho: x,
                    m: fx.m,
                    v: fx.v,
                    objective: fx.objective,
                    blocks,
                    kkt_residual: residual,
                    iterations: iter,
                });
            }
            let g = self.scaled_gradient(&y)?;
            // Backtrack until the step is below the inverse local curvature.
            let cand = loop {
                let trial: Vec<Vec<f64>> = y
                    .iter()
                    .zip(&g)
                    .map(|(r, gk)| r.iter().zip(gk).map(|(a, b)| a + step * b).collect())
                    .collect();
                let cand = self.project(&trial)?;
                let gc = self.scaled_gradient(&cand)?;
                let mut d2 = 0.0;
                let mut curv = 0.0;
                for k in 0..cand.len() {
                    for i in 0..n {
                        let d = cand[k][i] - y[k][i];
                        d2 += self.weights[k] * d * d;
                        curv += self.weights[k] * (g[k][i] - gc[k][i]) * d;
                    }
                }
                if step * curv <= d2 || step < 1e-300 {
                    break cand;
                }
                step *= 0.5;
            };
            step *= 1.5;
            let mut uphill = 0.0;
            for k in 0..cand.len() {
                for i in 0..n {
                    uphill += self.weights[k] * (cand[k][i] - y[k][i]) * (cand[k][i] - x[k][i]);
                }
            }
            if uphill < 0.0 {
                // Momentum points against the gradient map: restart from the last iterate.
                momentum = 1.0;
                y = x.clone();
                continue;
            }
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next_momentum;
            let extrap: Vec<Vec<f64>> = cand
                .iter()
                .zip(&x)
                .map(|(c, p)| c.iter().zip(p).map(|(a, b)| a + beta * (a - b)).collect())
                .collect();
            momentum = next_momentum;
            x = cand;
            // The extrapolated point may leave the feasible set; bring it back.
            y = self.project(&extrap)?;
        }
        Err(Error::NotConverged {
            solver: "block projected gradient",
            iterations: opts.max_iter,
            residual: best_residual,
            best: x.into_iter().flatten().collect(),
        })
    }

    fn initial_lipschitz(&self, at: &Eval) -> f64 {
        let mut lip: f64 = 1e-12;
        for i in 0..self.n() {
            let u = self.profile.user(i);
            let (pen, kappa) = u.penalty.eval_raw(at.v[i].max(0.0));
            let w = u.qoe.eval_raw(at.m[i] - pen).1;
            lip = lip.max(2.0 * w * kappa);
        }
        lip
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utilities::{UeFamily, UvFamily};

    #[test]
    fn two_constraint_worked_example() {
        let p = UtilityProfile::new(&[(UeFamily::Linear { slope: 1.0 }, UvFamily::Linear { kappa: 1.0 })], 3.0).unwrap();
        let a = Constraint::linear(&[1.0], 1.0);
        let b = Constraint::linear(&[1.0], 3.0);
        let prob = Pooled::new(vec![&a, &b], vec![0.5, 0.5], &p).unwrap();
        let sol = prob.solve(None, &PooledOptions { tol: 1e-10, max_iter: 100_000 }).unwrap();
        assert!((sol.rho[0][0] - 1.0).abs() < 1e-8);
        assert!((sol.rho[1][0] - 2.0).abs() < 1e-8);
        assert!((sol.objective - 1.25).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_weights() {
        let p = UtilityProfile::new(&[(UeFamily::Linear { slope: 1.0 }, UvFamily::Linear { kappa: 1.0 })], 3.0).unwrap();
        let a = Constraint::linear(&[1.0], 1.0);
        assert!(Pooled::new(vec![&a, &a], vec![0.5, 0.6], &p).is_err());
        assert!(Pooled::new(vec![&a], vec![0.5, 0.5], &p).is_err());
        assert!(Pooled::new(vec![&a, &a], vec![1.0, 0.0], &p).is_err());
    }
}
