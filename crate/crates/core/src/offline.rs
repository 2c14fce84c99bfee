//! The offline oracle: maximizes `phi_T` over the whole horizon with the
//! realized constraint sequence known in advance.
//!
//! The problem is strictly concave in each user's allocation sequence, so
//! slots that face the same constraint receive the same allocation at the
//! optimum. The solver exploits this by pooling slots per distinct
//! constraint, each pool weighted by its share of the horizon; the unpooled
//! form (one block per slot) is available for cross-checks.

use crate::constraints::{Constraint, ConstraintUniverse};
use crate::error::{invalid, Result};
use crate::metrics::{self, HorizonTrace};
use crate::pooled::{Pooled, PooledOptions};
use crate::utilities::UtilityProfile;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineOptions {
    /// KKT residual (per slot, in the form multiplied through by `T`) to reach.
    pub tol: f64,
    pub max_iter: usize,
    /// Pool slots that face identical constraints.
    pub pool: bool,
}

impl Default for OfflineOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200_000,
            pool: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    pub allocations: Vec<Vec<f64>>,
    pub objective: f64,
    /// `mu^T(t)` per slot.
    pub mu: Vec<f64>,
    /// `gamma^T(t)` per slot.
    pub gamma: Vec<Vec<f64>>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Groups slot indices by constraint. `keys[t]` identifies the constraint of slot `t`.
fn group_by<K: PartialEq + Copy>(keys: &[K]) -> (Vec<K>, Vec<usize>) {
    let mut distinct: Vec<K> = Vec::new();
    let mut slot_group = Vec::with_capacity(keys.len());
    for &k in keys {
        let g = match distinct.iter().position(|d| *d == k) {
            Some(g) => g,
            None => {
                distinct.push(k);
                distinct.len() - 1
            }
        };
        slot_group.push(g);
    }
    (distinct, slot_group)
}

/// Solves the offline problem for an explicit constraint sequence.
pub fn solve_offline(c_seq: &[Constraint], profile: &UtilityProfile, opts: &OfflineOptions) -> Result<HorizonSolution> {
    solve_offline_warm(c_seq, profile, opts, None)
}

/// As [`solve_offline`], starting from `warm` (one row per slot) when given.
pub fn solve_offline_warm(
    c_seq: &[Constraint],
    profile: &UtilityProfile,
    opts: &OfflineOptions,
    warm: Option<&[Vec<f64>]>,
) -> Result<HorizonSolution> {
    if c_seq.is_empty() {
        return invalid("offline horizon must contain at least one slot");
    }
    for c in c_seq {
        c.check()?;
    }
    let refs: Vec<&Constraint> = c_seq.iter().collect();
    let keys: Vec<usize> = if opts.pool {
        // Key each slot by the first slot carrying an equal constraint.
        let mut firsts: Vec<usize> = Vec::new();
        c_seq
            .iter()
            .enumerate()
            .map(|(t, c)| match firsts.iter().find(|&&f| c_seq[f] == *c) {
                Some(&f) => f,
                None => {
                    firsts.push(t);
                    t
                }
            })
            .collect()
    } else {
        (0..c_seq.len()).collect()
    };
    solve_grouped(&refs, &keys, profile, opts, warm)
}

/// Solves the offline problem for a realization of universe indices.
pub fn solve_offline_indexed(
    realization: &[usize],
    universe: &ConstraintUniverse,
    profile: &UtilityProfile,
    opts: &OfflineOptions,
    warm: Option<&[Vec<f64>]>,
) -> Result<HorizonSolution> {
    if realization.is_empty() {
        return invalid("offline horizon must contain at least one slot");
    }
    if let Some(&k) = realization.iter().find(|&&k| k >= universe.len()) {
        return invalid(format!("constraint index {k} outside the universe"));
    }
    let refs: Vec<&Constraint> = realization.iter().map(|&k| universe.get(k)).collect();
    let keys: Vec<usize> = if opts.pool {
        realization.to_vec()
    } else {
        (0..realization.len()).collect()
    };
    solve_grouped(&refs, &keys, profile, opts, warm)
}

fn solve_grouped(
    slots: &[&Constraint],
    keys: &[usize],
    profile: &UtilityProfile,
    opts: &OfflineOptions,
    warm: Option<&[Vec<f64>]>,
) -> Result<HorizonSolution> {
    let t_len = slots.len();
    let (distinct, slot_group) = group_by(keys);
    let mut first_slot = vec![usize::MAX; distinct.len()];
    let mut counts = vec![0usize; distinct.len()];
    for (t, &g) in slot_group.iter().enumerate() {
        counts[g] += 1;
        if first_slot[g] == usize::MAX {
            first_slot[g] = t;
        }
    }
    let constraints: Vec<&Constraint> = first_slot.iter().map(|&t| slots[t]).collect();
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / t_len as f64).collect();
    let problem = Pooled::new(constraints, weights, profile)?;
    let init = match warm {
        Some(rows) => {
            // Average the warm rows of each group; slots beyond the warm start keep zero.
            let n = profile.len();
            let mut acc = vec![vec![0.0; n]; distinct.len()];
            let mut seen = vec![0usize; distinct.len()];
            for (t, row) in rows.iter().enumerate().take(t_len) {
                let g = slot_group[t];
                seen[g] += 1;
                for i in 0..n {
                    acc[g][i] += row.get(i).copied().unwrap_or(0.0);
                }
            }
            for (a, s) in acc.iter_mut().zip(&seen) {
                if *s > 0 {
                    a.iter_mut().for_each(|x| *x /= *s as f64);
                }
            }
            Some(acc)
        }
        None => None,
    };
    let sol = problem.solve(
        init,
        &PooledOptions {
            tol: opts.tol,
            max_iter: opts.max_iter,
        },
    )?;
    let allocations: Vec<Vec<f64>> = slot_group.iter().map(|&g| sol.rho[g].clone()).collect();
    let mu = slot_group.iter().map(|&g| sol.blocks[g].mu).collect();
    let gamma = slot_group.iter().map(|&g| sol.blocks[g].gamma.clone()).collect();
    let objective = metrics::phi(&allocations, profile)?;
    debug_assert!((objective - sol.objective).abs() <= 1e-9 * objective.abs().max(1.0));
    Ok(HorizonSolution {
        allocations,
        objective,
        mu,
        gamma,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
    })
}

/// Largest per-slot violation of the offline KKT system (multiplied through by
/// `T`), with multipliers recovered slot by slot from the gradient of `phi_T`.
pub fn kkt_residual_offline(allocations: &[Vec<f64>], c_seq: &[Constraint], profile: &UtilityProfile) -> Result<f64> {
    if allocations.len() != c_seq.len() || allocations.is_empty() {
        return invalid("allocations and constraint sequence differ in length");
    }
    let t_len = c_seq.len();
    let problem = Pooled::new(c_seq.iter().collect(), vec![1.0 / t_len as f64; t_len], profile)?;
    Ok(problem.certify(allocations)?.1)
}

/// Scaled gradient `T * d phi_T / d r(t)` at an allocation sequence.
pub fn phi_gradient(allocations: &[Vec<f64>], c_seq: &[Constraint], profile: &UtilityProfile) -> Result<Vec<Vec<f64>>> {
    let t_len = c_seq.len();
    let problem = Pooled::new(c_seq.iter().collect(), vec![1.0 / t_len as f64; t_len], profile)?;
    problem.scaled_gradient(allocations)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPoint {
    pub horizon: usize,
    pub offline_objective: f64,
    pub avr_objective: f64,
    pub gap: f64,
    /// `gap / max(1, |offline_objective|)`.
    pub relative_gap: f64,
    pub kkt_residual: f64,
}

/// Offline-minus-online objective at each checkpoint of `ladder`.
///
/// Each prefix solve is warm-started from the previous checkpoint's solution.
pub fn optimality_gap(
    realization: &[usize],
    universe: &ConstraintUniverse,
    avr_trace: &HorizonTrace,
    profile: &UtilityProfile,
    ladder: &[usize],
    opts: &OfflineOptions,
) -> Result<Vec<GapPoint>> {
    if avr_trace.constraint_indices.len() < realization.len()
        || avr_trace.constraint_indices[..realization.len()] != *realization
    {
        return invalid("the online trace was produced on a different realization");
    }
    let mut out = Vec::with_capacity(ladder.len());
    let mut warm: Option<Vec<Vec<f64>>> = None;
    for &h in ladder {
        if h == 0 || h > realization.len() {
            return invalid(format!("checkpoint {h} outside the realized horizon {}", realization.len()));
        }
        let sol = solve_offline_indexed(&realization[..h], universe, profile, opts, warm.as_deref())?;
        let avr_objective = metrics::phi(&avr_trace.allocations[..h], profile)?;
        let gap = sol.objective - avr_objective;
        out.push(GapPoint {
            horizon: h,
            offline_objective: sol.objective,
            avr_objective,
            gap,
            relative_gap: gap / sol.objective.abs().max(1.0),
            kkt_residual: sol.kkt_residual,
        });
        warm = Some(sol.allocations);
    }
    Ok(out)
}
