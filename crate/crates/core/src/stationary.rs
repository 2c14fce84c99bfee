//! The stationary program, its fixed point `theta_pi`, the mean-field ODE
//! `d theta / d tau = gbar(theta)` and the Lyapunov function
//! `L(m, v) = -sum_i U_i^E(m_i - U_i^V(v_i))`.
//!
//! Expectations over the constraint law are exact `pi`-weighted sums over
//! the finite universe.

use rand::Rng;
use rayon::prelude::*;

use crate::constraints::{project_feasible, ConstraintUniverse};
use crate::error::{invalid, Error, Result};
use crate::pooled::{Pooled, PooledOptions};
use crate::slot_solver::{solve_optavr_with, SlotOptions, Theta};
use crate::utilities::UtilityProfile;

/// Universes at least this large evaluate `gbar` in parallel.
const PARALLEL_MIN_CONSTRAINTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct StationarySolution {
    /// `rho[k]` is the allocation under constraint `k`.
    pub rho: Vec<Vec<f64>>,
    pub theta_pi: Theta,
    pub e_pi: Vec<f64>,
    pub objective: f64,
    /// `mu^pi(c)`, already multiplied by `pi(c)`.
    pub mu: Vec<f64>,
    /// `gamma^pi(c)`, already multiplied by `pi(c)`.
    pub gamma: Vec<Vec<f64>>,
    /// Largest KKT violation, per constraint, in the form divided by `pi(c)`.
    pub kkt_residual: f64,
    pub iterations: usize,
}

fn check_pi(universe: &ConstraintUniverse, pi: &[f64]) -> Result<()> {
    if pi.len() != universe.len() {
        return invalid(format!("pi has {} entries, universe has {}", pi.len(), universe.len()));
    }
    if pi.iter().any(|p| !(*p > 0.0)) {
        return invalid("pi must be strictly positive");
    }
    let s: f64 = pi.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return invalid(format!("pi sums to {s}, not 1"));
    }
    Ok(())
}

pub fn solve_optstat(universe: &ConstraintUniverse, pi: &[f64], profile: &UtilityProfile, tol: f64) -> Result<StationarySolution> {
    solve_optstat_from(universe, pi, profile, tol, None)
}

/// As [`solve_optstat`], starting the ascent from `init` (one allocation per constraint).
pub fn solve_optstat_from(
    universe: &ConstraintUniverse,
    pi: &[f64],
    profile: &UtilityProfile,
    tol: f64,
    init: Option<Vec<Vec<f64>>>,
) -> Result<StationarySolution> {
    check_pi(universe, pi)?;
    let problem = Pooled::new(universe.constraints().iter().collect(), pi.to_vec(), profile)?;
    let sol = problem.solve(init, &PooledOptions { tol, max_iter: 500_000 })?;
    let e_pi = (0..profile.len())
        .map(|i| Ok(sol.m[i] - profile.user(i).penalty.eval(sol.v[i])?.0))
        .collect::<Result<Vec<_>>>()?;
    let mu = sol.blocks.iter().zip(pi).map(|(b, p)| p * b.mu).collect();
    let gamma = sol
        .blocks
        .iter()
        .zip(pi)
        .map(|(b, p)| b.gamma.iter().map(|g| p * g).collect())
        .collect();
    Ok(StationarySolution {
        theta_pi: Theta::new(sol.m, sol.v),
        rho: sol.rho,
        e_pi,
        objective: sol.objective,
        mu,
        gamma,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
    })
}

/// `phi_pi` of a stationary allocation.
pub fn stationary_objective(universe: &ConstraintUniverse, pi: &[f64], profile: &UtilityProfile, rho: &[Vec<f64>]) -> Result<f64> {
    check_pi(universe, pi)?;
    Pooled::new(universe.constraints().iter().collect(), pi.to_vec(), profile)?.objective(rho)
}

/// Slot solutions `r*(theta, c)` for every constraint of the universe.
pub fn slot_responses(theta: &Theta, universe: &ConstraintUniverse, profile: &UtilityProfile, opts: &SlotOptions) -> Result<Vec<Vec<f64>>> {
    let solve = |c| solve_optavr_with(theta, c, profile, opts).map(|s| s.r_star);
    if universe.len() >= PARALLEL_MIN_CONSTRAINTS {
        universe.constraints().par_iter().map(solve).collect()
    } else {
        universe.constraints().iter().map(solve).collect()
    }
}

/// Mean-field drift: `(E r*(theta, C) - m, E (r*(theta, C) - m)^2 - v)`.
pub fn gbar(theta: &Theta, universe: &ConstraintUniverse, pi: &[f64], profile: &UtilityProfile) -> Result<Vec<f64>> {
    check_pi(universe, pi)?;
    let responses = slot_responses(theta, universe, profile, &SlotOptions::default())?;
    let n = theta.dim();
    let mut out = vec![0.0; 2 * n];
    for (r, p) in responses.iter().zip(pi) {
        for i in 0..n {
            let d = r[i] - theta.m[i];
            out[i] += p * r[i];
            out[n + i] += p * d * d;
        }
    }
    for i in 0..n {
        out[i] -= theta.m[i];
        out[n + i] -= theta.v[i];
    }
    Ok(out)
}

/// `||gbar(theta)||_inf`; zero exactly at `theta_pi`.
pub fn fixed_point_residual(theta: &Theta, universe: &ConstraintUniverse, pi: &[f64], profile: &UtilityProfile) -> Result<f64> {
    Ok(gbar(theta, universe, pi, profile)?.iter().fold(0.0, |a, x| a.max(x.abs())))
}

/// Damped iteration `theta <- theta + damping * gbar(theta)` until `||gbar||_inf <= tol`.
///
/// For `damping` in `(0, 1]` every iterate is a convex combination of points of `H`.
pub fn fixed_point_iteration(
    theta0: &Theta,
    universe: &ConstraintUniverse,
    pi: &[f64],
    profile: &UtilityProfile,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Theta, usize)> {
    if !(damping > 0.0 && damping <= 1.0) {
        return invalid(format!("damping must lie in (0, 1], got {damping}"));
    }
    theta0.check(profile)?;
    let mut theta = theta0.clone();
    let mut residual = f64::INFINITY;
    for iter in 0..max_iter {
        let g = gbar(&theta, universe, pi, profile)?;
        residual = g.iter().fold(0.0, |a, x| a.max(x.abs()));
        if residual <= tol {
            return Ok((theta, iter));
        }
        let mut next = Theta::from_slice(&theta.to_vec().iter().zip(&g).map(|(x, d)| x + damping * d).collect::<Vec<_>>())?;
        next.clamp_into(profile.r_max());
        theta = next;
    }
    Err(Error::NotConverged {
        solver: "damped fixed-point iteration",
        iterations: max_iter,
        residual,
        best: theta.to_vec(),
    })
}

/// `L(theta) = -sum_i U_i^E(m_i - U_i^V(v_i))`.
pub fn lyapunov(theta: &Theta, profile: &UtilityProfile) -> Result<f64> {
    theta.check(profile)?;
    let mut total = 0.0;
    for i in 0..profile.len() {
        let u = profile.user(i);
        total -= u.qoe.eval(theta.m[i] - u.penalty.eval(theta.v[i])?.0)?.0;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Record every `sample_every`-th step (the initial and final points are always kept).
    pub sample_every: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            t_end: 200.0,
            dt: 0.01,
            sample_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrajectory {
    pub samples: Vec<(f64, Theta)>,
    pub dt: f64,
    /// `||gbar||_inf` at the final point.
    pub terminal_residual: f64,
    /// Accepted steps that landed outside `H` by more than rounding (1e-12).
    pub clamping_events: usize,
    pub max_excess: f64,
}

impl OdeTrajectory {
    pub fn terminal(&self) -> &Theta {
        &self.samples.last().expect("trajectory has its initial point").1
    }
}

/// Fourth-order Runge-Kutta on `d theta / d tau = gbar(theta)`.
///
/// The drift never points out of `H`, so iterates must stay inside. A step
/// that exits by more than 1e-9 is a fault; smaller exits are counted and
/// clamped.
pub fn integrate_ode(
    theta0: &Theta,
    universe: &ConstraintUniverse,
    pi: &[f64],
    profile: &UtilityProfile,
    opts: &OdeOptions,
) -> Result<OdeTrajectory> {
    const ROUNDING: f64 = 1e-12;
    const FAULT: f64 = 1e-9;
    if !(opts.dt > 0.0 && opts.t_end >= 0.0 && opts.sample_every >= 1) {
        return invalid("ODE needs dt > 0, t_end >= 0 and sample_every >= 1");
    }
    theta0.check(profile)?;
    let r_max = profile.r_max();
    let steps = (opts.t_end / opts.dt).round() as usize;
    let drift = |x: &[f64]| -> Result<Vec<f64>> {
        let mut th = Theta::from_slice(x)?;
        th.clamp_into(r_max);
        gbar(&th, universe, pi, profile)
    };
    let axpy = |x: &[f64], a: f64, d: &[f64]| -> Vec<f64> { x.iter().zip(d).map(|(p, q)| p + a * q).collect() };
    let mut x = theta0.to_vec();
    let mut samples = vec![(0.0, theta0.clone())];
    let mut clamping_events = 0;
    let mut max_excess: f64 = 0.0;
    let h = opts.dt;
    for step in 1..=steps {
        let k1 = drift(&x)?;
        let k2 = drift(&axpy(&x, 0.5 * h, &k1))?;
        let k3 = drift(&axpy(&x, 0.5 * h, &k2))?;
        let k4 = drift(&axpy(&x, h, &k3))?;
        for j in 0..x.len() {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let mut th = Theta::from_slice(&x)?;
        let excess = th.excess_outside(r_max);
        max_excess = max_excess.max(excess);
        let tau = step as f64 * h;
        if excess > FAULT {
            return Err(Error::LeftDomain { tau, excess });
        }
        if excess > ROUNDING {
            clamping_events += 1;
        }
        th.clamp_into(r_max);
        x = th.to_vec();
        if step % opts.sample_every == 0 || step == steps {
            samples.push((tau, th));
        }
    }
    let terminal_residual = fixed_point_residual(&Theta::from_slice(&x)?, universe, pi, profile)?;
    Ok(OdeTrajectory {
        samples,
        dt: h,
        terminal_residual,
        clamping_events,
        max_excess,
    })
}

/// A random point of the achievable set: the mean of a random feasible
/// stationary policy, with variance between the policy's variance and `v_max`.
pub fn sample_achievable<R: Rng>(universe: &ConstraintUniverse, pi: &[f64], profile: &UtilityProfile, rng: &mut R) -> Result<Theta> {
    check_pi(universe, pi)?;
    let n = profile.len();
    let r_max = profile.r_max();
    let rho = universe
        .constraints()
        .iter()
        .map(|c| {
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * r_max).collect();
            project_feasible(c, &x)
        })
        .collect::<Result<Vec<_>>>()?;
    let problem = Pooled::new(universe.constraints().iter().collect(), pi.to_vec(), profile)?;
    let (m, var) = problem.moments(&rho);
    let v_max = profile.v_max();
    let v = var.iter().map(|&s| s + rng.random::<f64>() * (v_max - s).max(0.0)).collect();
    Ok(Theta::new(m, v))
}

/// A uniformly random point of `H`.
pub fn sample_h<R: Rng>(profile: &UtilityProfile, rng: &mut R) -> Theta {
    let n = profile.len();
    Theta::new(
        (0..n).map(|_| rng.random::<f64>() * profile.r_max()).collect(),
        (0..n).map(|_| rng.random::<f64>() * profile.v_max()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Constraint;
    use crate::slot_solver::solve_optavr;
    use crate::utilities::{UeFamily, UvFamily};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn worked() -> (ConstraintUniverse, Vec<f64>, UtilityProfile) {
        let u = ConstraintUniverse::new(vec![Constraint::linear(&[1.0], 1.0), Constraint::linear(&[1.0], 3.0)]).unwrap();
        let p = UtilityProfile::new(&[(UeFamily::Linear { slope: 1.0 }, UvFamily::Linear { kappa: 1.0 })], u.r_max()).unwrap();
        (u, vec![0.5, 0.5], p)
    }

    fn deterministic() -> (ConstraintUniverse, Vec<f64>, UtilityProfile) {
        let u = ConstraintUniverse::new(vec![Constraint::linear(&[1.0], 1.0)]).unwrap();
        let p = UtilityProfile::new(&[(UeFamily::Linear { slope: 1.0 }, UvFamily::Linear { kappa: 1.0 })], u.r_max()).unwrap();
        (u, vec![1.0], p)
    }

    /// 2-D grid over `(rho_1, rho_2)` at step 1e-3 for the two-constraint example.
    fn grid_oracle() -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for a in 0..=1000 {
            for b in 0..=3000 {
                let (x, y) = (a as f64 * 1e-3, b as f64 * 1e-3);
                let m = 0.5 * (x + y);
                let f = m - 0.25 * (x - y) * (x - y);
                if f > best.0 {
                    best = (f, x, y);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn worked_stationary_solution() {
        let (u, pi, p) = worked();
        let sol = solve_optstat(&u, &pi, &p, 1e-10).unwrap();
        let (g1, g2) = grid_oracle();
        assert!((sol.rho[0][0] - g1).abs() <= 1e-3 && (sol.rho[1][0] - g2).abs() <= 1e-3);
        assert!((sol.rho[0][0] - 1.0).abs() < 1e-8 && (sol.rho[1][0] - 2.0).abs() < 1e-8);
        // Interior stationarity rho_2 = rho_1 + 1/kappa.
        assert!((sol.rho[1][0] - sol.rho[0][0] - 1.0).abs() < 1e-8);
        assert!((sol.theta_pi.m[0] - 1.5).abs() < 1e-8);
        assert!((sol.theta_pi.v[0] - 0.25).abs() < 1e-8);
        assert!((sol.e_pi[0] - 1.25).abs() < 1e-8);
        for (k, c) in u.constraints().iter().enumerate() {
            let r = solve_optavr(&sol.theta_pi, c, &p).unwrap();
            assert!((r.r_star[0] - sol.rho[k][0]).abs() <= 1e-4);
        }
        assert!(fixed_point_residual(&sol.theta_pi, &u, &pi, &p).unwrap() <= 1e-6);
        let moved = Theta::new(vec![sol.theta_pi.m[0] + 0.1], sol.theta_pi.v.clone());
        assert!(fixed_point_residual(&moved, &u, &pi, &p).unwrap() > 1e-3);
        let origin = gbar(&Theta::zeros(1), &u, &pi, &p).unwrap();
        assert!(origin[0] > 0.0);
    }

    #[test]
    fn deterministic_fixed_point() {
        let (u, pi, p) = deterministic();
        let sol = solve_optstat(&u, &pi, &p, 1e-10).unwrap();
        assert!((sol.rho[0][0] - 1.0).abs() < 1e-9);
        assert!((sol.theta_pi.m[0] - 1.0).abs() < 1e-9 && sol.theta_pi.v[0].abs() < 1e-12);
        let at = Theta::new(vec![1.0], vec![0.0]);
        assert!(fixed_point_residual(&at, &u, &pi, &p).unwrap() <= 1e-10);
    }

    #[test]
    fn lyapunov_linear_substitution() {
        let p = UtilityProfile::new(&[(UeFamily::Linear { slope: 1.0 }, UvFamily::Linear { kappa: 1.0 }); 2], 2.0).unwrap();
        let th = Theta::new(vec![1.0, 0.5], vec![0.25, 2.0]);
        assert!((lyapunov(&th, &p).unwrap() + (0.75 + (-1.5))).abs() < 1e-15);
        assert!(lyapunov(&Theta::new(vec![3.0, 0.0], vec![0.0, 0.0]), &p).is_err());
    }

    #[test]
    fn ode_converges_and_stays_in_h() {
        let (u, pi, p) = worked();
        let target = Theta::new(vec![1.5], vec![0.25]);
        let traj = integrate_ode(&Theta::zeros(1), &u, &pi, &p, &OdeOptions::default()).unwrap();
        assert!(traj.terminal().distance_inf(&target) <= 1e-3);
        assert_eq!(traj.clamping_events, 0);
        let still = integrate_ode(&target, &u, &pi, &p, &OdeOptions { t_end: 5.0, ..Default::default() }).unwrap();
        assert!(still.samples.iter().all(|(_, th)| th.distance_inf(&target) <= 1e-6));
    }

    #[test]
    fn lyapunov_descends_from_achievable_starts() {
        let (u, pi, p) = worked();
        let target = Theta::new(vec![1.5], vec![0.25]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let start = sample_achievable(&u, &pi, &p, &mut rng).unwrap();
            let traj = integrate_ode(&start, &u, &pi, &p, &OdeOptions { t_end: 30.0, ..Default::default() }).unwrap();
            for w in traj.samples.windows(2) {
                if w[0].1.distance_inf(&target) > 1e-3 {
                    assert!(lyapunov(&w[1].1, &p).unwrap() < lyapunov(&w[0].1, &p).unwrap());
                }
            }
        }
    }

    #[test]
    fn fixed_point_iteration_matches_optstat() {
        let (u, pi, p) = worked();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..3 {
            let start = sample_h(&p, &mut rng);
            let (th, _) = fixed_point_iteration(&start, &u, &pi, &p, 0.5, 1e-10, 100_000).unwrap();
            assert!(th.distance_inf(&Theta::new(vec![1.5], vec![0.25])) <= 1e-6);
        }
        assert!(fixed_point_iteration(&Theta::zeros(1), &u, &pi, &p, 0.0, 1e-10, 10).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn solution_moments_are_consistent(
                p1 in 0.5f64..3.0,
                p2 in 0.5f64..3.0,
                w in 0.1f64..0.9,
                kappa in 0.1f64..2.0,
                delta in 0.05f64..1.0,
            ) {
                let u = ConstraintUniverse::new(vec![Constraint::capacity(&[p1, p2]), Constraint::capacity(&[p2, p1])]).unwrap();
                let pi = [w, 1.0 - w];
                let p = UtilityProfile::new(
                    &[
                        (UeFamily::alpha_fair(1.0), UvFamily::Linear { kappa }),
                        (UeFamily::alpha_fair(2.0), UvFamily::SqrtShifted { delta }),
                    ],
                    u.r_max(),
                )
                .unwrap();
                let sol = solve_optstat(&u, &pi, &p, 1e-9).unwrap();
                for (c, rho) in u.constraints().iter().zip(&sol.rho) {
                    prop_assert!(c.value(rho) <= 1e-8);
                }
                for i in 0..2 {
                    let m: f64 = pi.iter().zip(&sol.rho).map(|(q, r)| q * r[i]).sum();
                    let v: f64 = pi.iter().zip(&sol.rho).map(|(q, r)| q * (r[i] - m).powi(2)).sum();
                    prop_assert!((m - sol.theta_pi.m[i]).abs() <= 1e-12);
                    prop_assert!((v - sol.theta_pi.v[i]).abs() <= 1e-12);
                    let (pen, _) = p.user(i).penalty.eval(v).unwrap();
                    prop_assert!((sol.e_pi[i] - (m - pen)).abs() <= 1e-12);
                }
                let opts = OdeOptions { t_end: 20.0, ..OdeOptions::default() };
                let traj = integrate_ode(&Theta::zeros(2), &u, &pi, &p, &opts).unwrap();
                prop_assert!(traj.clamping_events == 0);
                for (_, th) in &traj.samples {
                    prop_assert!(th.excess_outside(p.r_max()) == 0.0);
                }
            }
        }
    }
}
