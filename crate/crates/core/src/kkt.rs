//! Multiplier recovery and KKT residuals for one separable constraint block.
//!
//! All three programs share the per-block stationarity condition
//!
//! ```text
//! G_i + gamma_i - mu c'_i(x) = 0,   mu c(x) = 0,   gamma_i x_i = 0
//! ```
//!
//! where `G` is the (suitably scaled) gradient of the objective.

use crate::constraints::Constraint;

/// Coordinates at or below this value are treated as sitting on `x_i = 0`.
const ZERO_COORD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockKkt {
    pub mu: f64,
    pub gamma: Vec<f64>,
    pub residual: f64,
}

/// Residual of the KKT system at `x` for given multipliers.
pub(crate) fn residual(c: &Constraint, x: &[f64], grad: &[f64], mu: f64, gamma: &[f64]) -> f64 {
    let cv = c.value(x);
    let dc = c.gradient(x);
    let mut res = (mu * cv).abs().max(cv.max(0.0)).max((-mu).max(0.0));
    for i in 0..x.len() {
        let stat = grad[i] + gamma[i] - mu * dc[i];
        res = res
            .max(stat.abs())
            .max((gamma[i] * x[i]).abs())
            .max((-x[i]).max(0.0))
            .max((-gamma[i]).max(0.0));
    }
    res
}

fn gamma_for(x: &[f64], grad: &[f64], dc: &[f64], mu: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| if x[i] > ZERO_COORD { 0.0 } else { (mu * dc[i] - grad[i]).max(0.0) })
        .collect()
}

/// Picks the multipliers that best certify `x`, trying `mu = 0`, a least-squares
/// fit on the positive coordinates, the smallest `mu` that clears every zero
/// coordinate, and any caller-supplied candidates.
pub(crate) fn recover(c: &Constraint, x: &[f64], grad: &[f64], extra: &[f64]) -> BlockKkt {
    let dc = c.gradient(x);
    let mut candidates = vec![0.0];
    let (mut num, mut den) = (0.0, 0.0);
    let mut clear: f64 = 0.0;
    for i in 0..x.len() {
        if x[i] > ZERO_COORD {
            num += grad[i] * dc[i];
            den += dc[i] * dc[i];
        } else if dc[i] > 0.0 {
            clear = clear.max(grad[i] / dc[i]);
        }
    }
    if den > 0.0 {
        candidates.push((num / den).max(0.0));
    }
    candidates.push(clear.max(0.0));
    candidates.extend(extra.iter().map(|m| m.max(0.0)));

    let mut best: Option<BlockKkt> = None;
    for mu in candidates {
        let gamma = gamma_for(x, grad, &dc, mu);
        let r = residual(c, x, grad, mu, &gamma);
        if best.as_ref().is_none_or(|b| r < b.residual) {
            best = Some(BlockKkt { mu, gamma, residual: r });
        }
    }
    best.expect("at least one candidate")
}
