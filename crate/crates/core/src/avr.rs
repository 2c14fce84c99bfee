//! The online allocator.
//!
//! Each slot solves the slot program at the tracked `theta(t)` and then
//! updates the estimates with step `1/t`, clipped back into `H`:
//!
//! ```text
//! m_i(t+1) = clip(m_i(t) + (r_i - m_i(t)) / t,                 0, r_max)
//! v_i(t+1) = clip(v_i(t) + ((r_i - m_i(t))^2 - v_i(t)) / t,    0, v_max)
//! ```
//!
//! The variance update uses the mean from before the update.

use crate::constraints::{ConstraintUniverse, Constraint, ProcessSpec};
use crate::error::{invalid, Result};
use crate::metrics::{HorizonTrace, StreamingStats};
use crate::slot_solver::{solve_optavr_with, SlotOptions, Theta};
use crate::utilities::UtilityProfile;

#[derive(Debug, Clone, PartialEq)]
pub struct AvrState {
    /// Index of the next slot to be served (starts at 1).
    pub t: u64,
    pub theta: Theta,
    /// Running moments of the allocations emitted so far, per user.
    pub emitted: Vec<StreamingStats>,
}

pub fn avr_init(theta0: Theta, profile: &UtilityProfile) -> Result<AvrState> {
    theta0.check(profile)?;
    let mut theta = theta0;
    theta.clamp_into(profile.r_max());
    Ok(AvrState {
        t: 1,
        emitted: vec![StreamingStats::new(); theta.dim()],
        theta,
    })
}

/// Serves one slot. Returns the allocation and the state for the next slot.
pub fn avr_step(state: &AvrState, c: &Constraint, profile: &UtilityProfile, opts: &SlotOptions) -> Result<(Vec<f64>, AvrState)> {
    let sol = solve_optavr_with(&state.theta, c, profile, opts)?;
    let r = sol.r_star;
    let step = 1.0 / state.t as f64;
    let r_max = profile.r_max();
    let v_max = profile.v_max();
    let mut next = state.clone();
    for i in 0..r.len() {
        let m_old = state.theta.m[i];
        let v_old = state.theta.v[i];
        let dev = r[i] - m_old;
        next.theta.m[i] = (m_old + dev * step).clamp(0.0, r_max);
        next.theta.v[i] = (v_old + (dev * dev - v_old) * step).clamp(0.0, v_max);
        next.emitted[i].push(r[i]);
    }
    next.t += 1;
    debug_assert_eq!(next.theta.excess_outside(r_max), 0.0);
    Ok((r, next))
}

/// Runs the allocator for `horizon` slots on the realization drawn from `process`.
pub fn run_avr(
    process: &ProcessSpec,
    universe: &ConstraintUniverse,
    profile: &UtilityProfile,
    horizon: usize,
    theta0: Theta,
    opts: &SlotOptions,
) -> Result<HorizonTrace> {
    if horizon == 0 {
        return invalid("horizon must be at least 1");
    }
    if process.n_states() != universe.len() {
        return invalid(format!("process has {} states, universe has {} constraints", process.n_states(), universe.len()));
    }
    let realization = process.realize(horizon);
    run_avr_on(&realization, universe, profile, theta0, opts)
}

/// Runs the allocator on a given sequence of constraint indices.
pub fn run_avr_on(
    realization: &[usize],
    universe: &ConstraintUniverse,
    profile: &UtilityProfile,
    theta0: Theta,
    opts: &SlotOptions,
) -> Result<HorizonTrace> {
    if profile.len() != universe.n_users() {
        return invalid(format!("profile has {} users, universe has {}", profile.len(), universe.n_users()));
    }
    if let Some(&k) = realization.iter().find(|&&k| k >= universe.len()) {
        return invalid(format!("constraint index {k} outside the universe"));
    }
    let mut state = avr_init(theta0, profile)?;
    let mut allocations = Vec::with_capacity(realization.len());
    let mut path = Vec::with_capacity(realization.len());
    for &k in realization {
        let (r, next) = avr_step(&state, universe.get(k), profile, opts)?;
        allocations.push(r);
        path.push(next.theta.clone());
        state = next;
    }
    Ok(HorizonTrace {
        allocations,
        constraint_indices: realization.to_vec(),
        theta_path: Some(path),
    })
}
