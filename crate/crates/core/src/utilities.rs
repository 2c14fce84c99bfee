//! Fairness utilities `U^E`, variability penalties `U^V`, and the sampling
//! validators for the assumptions the convergence results rely on.
//!
//! A [`UePiece`] maps a user's QoE `e` to utility; a [`UvPiece`] maps a
//! temporal variance `v` to a penalty in reward units. Both are immutable
//! once built. The QoE domain `[e_min, e_max]` of every user is derived from
//! the penalty and `r_max`, never supplied directly:
//!
//! ```text
//! e_min = -U^V(v_max)      e_max = r_max - U^V(0)      v_max = r_max^2
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default offset added above the QoE floor for anchored α-fair pieces.
pub const DEFAULT_ALPHA_FAIR_DELTA: f64 = 1e-2;
/// Default offset inside the square root of [`UvFamily::SqrtShifted`].
pub const DEFAULT_SQRT_DELTA: f64 = 1e-2;

const GRID_POINTS: usize = 10_000;
const RANDOM_PAIRS: usize = 1_000;
const VALIDATION_SEED: u64 = 0x5eed_0001;

fn domain_slack(lo: f64, hi: f64) -> f64 {
    1e-9 * lo.abs().max(hi.abs()).max(1.0)
}

/// Where an α-fair piece places its argument shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shift {
    /// `U(e) = U_alpha(e + s)`.
    Fixed(f64),
    /// `U(e) = U_alpha(e - e_min + delta)`, resolved when the piece is bound to its domain.
    AboveFloor(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UeFamily {
    /// `log(x)` for `alpha == 1`, `x^(1-alpha) / (1-alpha)` otherwise, with `x = e + shift`.
    AlphaFair { alpha: f64, shift: Shift },
    Linear { slope: f64 },
}

impl UeFamily {
    pub fn alpha_fair(alpha: f64) -> Self {
        UeFamily::AlphaFair {
            alpha,
            shift: Shift::AboveFloor(DEFAULT_ALPHA_FAIR_DELTA),
        }
    }
}

/// A fairness utility bound to its QoE domain.
#[derive(Debug, Clone, PartialEq)]
pub struct UePiece {
    kind: UeKind,
    lo: f64,
    hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum UeKind {
    AlphaFair { alpha: f64, shift: f64 },
    Linear { slope: f64 },
}

impl UePiece {
    pub fn new(family: UeFamily, e_min: f64, e_max: f64) -> Result<Self> {
        if !(e_min.is_finite() && e_max.is_finite() && e_min < e_max) {
            return invalid(format!("QoE domain [{e_min}, {e_max}] is empty or not finite"));
        }
        let kind = match family {
            UeFamily::AlphaFair { alpha, shift } => {
                if !(alpha.is_finite() && alpha > 0.0) {
                    return invalid(format!("alpha-fair alpha must be positive, got {alpha}"));
                }
                let shift = match shift {
                    Shift::Fixed(s) => s,
                    Shift::AboveFloor(delta) => {
                        if !(delta.is_finite() && delta > 0.0) {
                            return invalid(format!("alpha-fair delta must be positive, got {delta}"));
                        }
                        delta - e_min
                    }
                };
                if !shift.is_finite() {
                    return invalid("alpha-fair shift is not finite");
                }
                UeKind::AlphaFair { alpha, shift }
            }
            UeFamily::Linear { slope } => {
                if !slope.is_finite() {
                    return invalid("linear slope is not finite");
                }
                UeKind::Linear { slope }
            }
        };
        Ok(Self {
            kind,
            lo: e_min,
            hi: e_max,
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// `(U^E(e), (U^E)'(e))`, rejecting `e` outside the bound domain.
    pub fn eval(&self, e: f64) -> Result<(f64, f64)> {
        let slack = domain_slack(self.lo, self.hi);
        if !(e >= self.lo - slack && e <= self.hi + slack) {
            return Err(Error::Domain {
                what: "QoE",
                value: e,
                lo: self.lo,
                hi: self.hi,
            });
        }
        if let UeKind::AlphaFair { shift, .. } = self.kind {
            if e + shift <= 0.0 {
                return Err(Error::Domain {
                    what: "shifted QoE",
                    value: e + shift,
                    lo: 0.0,
                    hi: f64::INFINITY,
                });
            }
        }
        Ok(self.eval_raw(e))
    }

    pub(crate) fn eval_raw(&self, e: f64) -> (f64, f64) {
        match self.kind {
            UeKind::Linear { slope } => (slope * e, slope),
            UeKind::AlphaFair { alpha, shift } => {
                let x = e + shift;
                if alpha == 1.0 {
                    (x.ln(), 1.0 / x)
                } else {
                    (x.powf(1.0 - alpha) / (1.0 - alpha), x.powf(-alpha))
                }
            }
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, UeKind::Linear { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UvFamily {
    /// `kappa * v`
    Linear { kappa: f64 },
    /// `sqrt(v + delta)`: a smoothed standard deviation.
    SqrtShifted { delta: f64 },
}

/// A variability penalty on `[0, v_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UvPiece {
    family: UvFamily,
    v_max: f64,
}

impl UvPiece {
    pub fn new(family: UvFamily, v_max: f64) -> Result<Self> {
        if !(v_max.is_finite() && v_max > 0.0) {
            return invalid(format!("v_max must be positive, got {v_max}"));
        }
        match family {
            UvFamily::Linear { kappa } if !kappa.is_finite() => {
                return invalid("linear kappa is not finite")
            }
            UvFamily::SqrtShifted { delta } if !(delta.is_finite() && delta >= 0.0) => {
                return invalid(format!("sqrt delta must be nonnegative, got {delta}"))
            }
            _ => {}
        }
        Ok(Self { family, v_max })
    }

    pub fn family(&self) -> UvFamily {
        self.family
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.family, UvFamily::Linear { .. })
    }

    /// `(U^V(v), (U^V)'(v))` for `v` in `[0, v_max]`.
    pub fn eval(&self, v: f64) -> Result<(f64, f64)> {
        let slack = domain_slack(0.0, self.v_max);
        if !(v >= -slack && v <= self.v_max + slack) {
            return Err(Error::Domain {
                what: "variance",
                value: v,
                lo: 0.0,
                hi: self.v_max,
            });
        }
        Ok(self.eval_raw(v.max(0.0)))
    }

    pub(crate) fn eval_raw(&self, v: f64) -> (f64, f64) {
        match self.family {
            UvFamily::Linear { kappa } => (kappa * v, kappa),
            UvFamily::SqrtShifted { delta } => {
                let s = (v + delta).sqrt();
                (s, 0.5 / s)
            }
        }
    }

    pub(crate) fn value_raw(&self, v: f64) -> f64 {
        self.eval_raw(v).0
    }
}

/// One user's pair of utility pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct UserUtility {
    pub qoe: UePiece,
    pub penalty: UvPiece,
}

/// Per-user utilities bound to a common `r_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityProfile {
    users: Vec<UserUtility>,
    r_max: f64,
}

impl UtilityProfile {
    /// Binds each user's families to the domains implied by `r_max`.
    pub fn new(families: &[(UeFamily, UvFamily)], r_max: f64) -> Result<Self> {
        if families.is_empty() {
            return invalid("a utility profile needs at least one user");
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return invalid(format!("r_max must be positive, got {r_max}"));
        }
        let v_max = r_max * r_max;
        let users = families
            .iter()
            .map(|&(ue, uv)| {
                let penalty = UvPiece::new(uv, v_max)?;
                let e_min = -penalty.value_raw(v_max);
                let e_max = r_max - penalty.value_raw(0.0);
                let qoe = UePiece::new(ue, e_min, e_max)?;
                Ok(UserUtility { qoe, penalty })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { users, r_max })
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn users(&self) -> &[UserUtility] {
        &self.users
    }

    pub fn user(&self, i: usize) -> &UserUtility {
        &self.users[i]
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn v_max(&self) -> f64 {
        self.r_max * self.r_max
    }

    /// Indices of users with a linear penalty (the set `N_l`).
    pub fn linear_penalty_users(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.users[i].penalty.is_linear()).collect()
    }

    /// QoE `m - U^V(v)` for user `i`.
    pub fn qoe(&self, i: usize, mean: f64, var: f64) -> Result<f64> {
        Ok(mean - self.users[i].penalty.eval(var)?.0)
    }
}

/// `(U^E(e), slope)` for a piece. See [`UePiece::eval`].
pub fn ue_value_and_slope(piece: &UePiece, e: f64) -> Result<(f64, f64)> {
    piece.eval(e)
}

/// `(U^V(v), slope)` for a piece. See [`UvPiece::eval`].
pub fn uv_value_and_slope(piece: &UvPiece, v: f64) -> Result<(f64, f64)> {
    piece.eval(v)
}

/// Outcome of one sampled assumption check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub user: usize,
    pub assumption: &'static str,
    pub passed: bool,
    pub witness: String,
    /// Largest observed `|s(x) - s(y)| / |x - y|` for the slope `s`, when measured.
    pub max_slope_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "pass" } else { "FAIL" };
            write!(f, "[{tag}] user {} {}: {}", c.user, c.assumption, c.witness)?;
            if let Some(r) = c.max_slope_ratio {
                write!(f, " (max slope ratio {r:.3e})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(move |k| if k + 1 == n { hi } else { lo + h * k as f64 })
}

/// Max slope-difference ratio over adjacent grid points and random pairs.
fn slope_ratio(slope: impl Fn(f64) -> f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    let pts: Vec<f64> = grid(lo, hi, GRID_POINTS).collect();
    let mut worst = 0.0f64;
    for w in pts.windows(2) {
        let r = (slope(w[1]) - slope(w[0])).abs() / (w[1] - w[0]);
        worst = if r.is_nan() { f64::INFINITY } else { worst.max(r) };
    }
    for _ in 0..RANDOM_PAIRS {
        let x = rng.random_range(lo..=hi);
        let y = rng.random_range(lo..=hi);
        if x != y {
            let r = (slope(x) - slope(y)).abs() / (x - y).abs();
            worst = if r.is_nan() { f64::INFINITY } else { worst.max(r) };
        }
    }
    worst
}

fn check_penalty(user: usize, uv: &UvPiece, rng: &mut ChaCha8Rng, out: &mut Vec<Check>) {
    let v_max = uv.v_max();
    // U.V.1: slope finite and bounded away from zero, slope Lipschitz.
    let mut min_slope = f64::INFINITY;
    let mut at = 0.0;
    let mut finite = true;
    for v in grid(0.0, v_max, GRID_POINTS) {
        let (val, s) = uv.eval_raw(v);
        if !(s.is_finite() && val.is_finite()) {
            finite = false;
            at = v;
            min_slope = s;
            break;
        }
        if s < min_slope {
            min_slope = s;
            at = v;
        }
    }
    let ratio = slope_ratio(|v| uv.eval_raw(v).1, 0.0, v_max, rng);
    let passed = finite && min_slope > 0.0 && ratio.is_finite();
    let witness = if !finite {
        format!("slope not finite at v = {at}")
    } else {
        format!("min slope {min_slope:.6e} at v = {at:.6e}")
    };
    out.push(Check {
        user,
        assumption: "U.V.1",
        passed,
        witness,
        max_slope_ratio: Some(ratio),
    });

    // U.V.2: strict midpoint inequality on squared arguments.
    let z_max = v_max.sqrt();
    let mut worst_gap = f64::INFINITY;
    let mut worst = (0.0, 0.0, 0.0);
    for _ in 0..RANDOM_PAIRS {
        let z1 = rng.random_range(-z_max..=z_max);
        let z2 = rng.random_range(-z_max..=z_max);
        let a = rng.random_range(1e-3..1.0 - 1e-3);
        // Near-coincident pairs only measure rounding noise.
        if (z1 - z2).abs() < 1e-2 * z_max {
            continue;
        }
        let lhs = uv.value_raw((a * z1 + (1.0 - a) * z2).powi(2));
        let rhs = a * uv.value_raw(z1 * z1) + (1.0 - a) * uv.value_raw(z2 * z2);
        let gap = (rhs - lhs) / (z1 - z2).powi(2);
        if gap < worst_gap {
            worst_gap = gap;
            worst = (z1, z2, a);
        }
    }
    out.push(Check {
        user,
        assumption: "U.V.2",
        passed: worst_gap > 1e-12,
        witness: format!(
            "min scaled gap {worst_gap:.3e} at (z1, z2, alpha) = ({:.4}, {:.4}, {:.4})",
            worst.0, worst.1, worst.2
        ),
        max_slope_ratio: None,
    });
}

fn check_qoe(user: usize, ue: &UePiece, rng: &mut ChaCha8Rng, out: &mut Vec<Check>) {
    let (lo, hi) = ue.domain();
    let mut prev: Option<(f64, f64, f64)> = None;
    let mut problem: Option<String> = None;
    for e in grid(lo, hi, GRID_POINTS) {
        let (val, s) = ue.eval_raw(e);
        if !(val.is_finite() && s.is_finite()) || (matches!(ue.kind, UeKind::AlphaFair { shift, .. } if e + shift <= 0.0)) {
            problem = Some(format!("not finite at e = {e}"));
            break;
        }
        if let Some((pe, pv, ps)) = prev {
            if val <= pv {
                problem = Some(format!("not strictly increasing on [{pe}, {e}]"));
                break;
            }
            if s > ps + 1e-12 * ps.abs().max(1.0) {
                problem = Some(format!("slope increases on [{pe}, {e}] (not concave)"));
                break;
            }
        }
        prev = Some((e, val, s));
    }
    let slope_at_max = ue.eval_raw(hi).1;
    if problem.is_none() && !(slope_at_max > 0.0) {
        problem = Some(format!("slope at e_max = {hi} is {slope_at_max:e}"));
    }
    let ratio = if problem.is_none() {
        slope_ratio(|e| ue.eval_raw(e).1, lo, hi, rng)
    } else {
        f64::INFINITY
    };
    if problem.is_none() && !ratio.is_finite() {
        problem = Some("slope not Lipschitz on the domain".into());
    }
    out.push(Check {
        user,
        assumption: "U.E",
        passed: problem.is_none(),
        witness: problem.unwrap_or_else(|| {
            format!("concave increasing on [{lo:.4}, {hi:.4}], slope at e_max {slope_at_max:.6e}")
        }),
        max_slope_ratio: Some(ratio),
    });
}

/// Samples every user's pieces against U.V.1, U.V.2 and U.E.
///
/// Failures are report entries, not errors. Lipschitz constants are not
/// proven; the report carries the largest observed slope ratio.
pub fn validate_profile(profile: &UtilityProfile) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
    let mut checks = Vec::new();
    for (i, u) in profile.users().iter().enumerate() {
        check_penalty(i, &u.penalty, &mut rng, &mut checks);
        check_qoe(i, &u.qoe, &mut rng, &mut checks);
    }
    ValidationReport { checks }
}
