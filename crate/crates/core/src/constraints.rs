//! Slot constraints, the finite constraint universe, and the stationary
//! process that selects one constraint per slot.
//!
//! Every shipped family is separable:
//!
//! ```text
//! c(r) = sum_i h_i(r_i) - budget,   h_i convex, increasing, h_i(0) = 0
//! ```
//!
//! which is what lets both the slot solver and the Euclidean projection
//! reduce to a one-dimensional search on a single multiplier.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const BISECTION_MAX_ITERS: usize = 400;
const DUST: f64 = 1e-12;

/// Rate needed to deliver perceived quality `y`: `linear * y + quadratic * y^2`.
///
/// This is the inverse of the user's (increasing, concave) rate-to-quality map,
/// so a quality-mapped slot constraint stays convex in the quality allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityMap {
    pub linear: f64,
    pub quadratic: f64,
}

impl QualityMap {
    pub fn rate_for(&self, quality: f64) -> f64 {
        quality * (self.linear + self.quadratic * quality)
    }

    pub fn rate_slope(&self, quality: f64) -> f64 {
        self.linear + 2.0 * self.quadratic * quality
    }

    /// Quality delivered by `rate`: the positive root of `rate_for(y) = rate`.
    pub fn quality_at(&self, rate: f64) -> f64 {
        if self.quadratic == 0.0 {
            rate / self.linear
        } else {
            let (a, b) = (self.linear, self.quadratic);
            // Rationalized root, stable for small b.
            2.0 * rate / (a + (a * a + 4.0 * b * rate).sqrt())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Constraint {
    /// `sum_i r_i / p_i - 1`
    Capacity { peaks: Vec<f64> },
    /// `sum_i r_i / p_i - (1 - f)`: a fraction `f` of the slot is taken by other traffic.
    Exogenous { peaks: Vec<f64>, load_fraction: f64 },
    /// `sum_i q_i^{-1}(r_i) / p_i - 1` with rewards in quality units.
    QualityMapped { peaks: Vec<f64>, maps: Vec<QualityMap> },
    /// `a . r - b`
    Linear { normal: Vec<f64>, offset: f64 },
}

impl Constraint {
    pub fn capacity(peaks: &[f64]) -> Self {
        Constraint::Capacity { peaks: peaks.to_vec() }
    }

    pub fn exogenous(peaks: &[f64], load_fraction: f64) -> Self {
        Constraint::Exogenous {
            peaks: peaks.to_vec(),
            load_fraction,
        }
    }

    pub fn linear(normal: &[f64], offset: f64) -> Self {
        Constraint::Linear {
            normal: normal.to_vec(),
            offset,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Constraint::Capacity { peaks }
            | Constraint::Exogenous { peaks, .. }
            | Constraint::QualityMapped { peaks, .. } => peaks.len(),
            Constraint::Linear { normal, .. } => normal.len(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Constraint::Capacity { .. } => "capacity",
            Constraint::Exogenous { .. } => "exogenous",
            Constraint::QualityMapped { .. } => "quality_mapped",
            Constraint::Linear { .. } => "linear",
        }
    }

    /// True when every `h_i` is linear, so `c` is an affine function.
    pub fn is_linear(&self) -> bool {
        match self {
            Constraint::QualityMapped { maps, .. } => maps.iter().all(|q| q.quadratic == 0.0),
            _ => true,
        }
    }

    /// Structural checks on the parameters of the family.
    pub fn check(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return invalid("constraint has no users");
        }
        let positive = |xs: &[f64], what: &str| -> Result<()> {
            match xs.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                Some(x) => invalid(format!("{what} must be positive, got {x}")),
                None => Ok(()),
            }
        };
        match self {
            Constraint::Capacity { peaks } => positive(peaks, "peak rate"),
            Constraint::Exogenous { peaks, load_fraction } => {
                positive(peaks, "peak rate")?;
                if !(0.0..1.0).contains(load_fraction) {
                    return invalid(format!("load fraction must lie in [0, 1), got {load_fraction}"));
                }
                Ok(())
            }
            Constraint::QualityMapped { peaks, maps } => {
                positive(peaks, "peak rate")?;
                if maps.len() != n {
                    return invalid(format!("{} quality maps for {n} users", maps.len()));
                }
                for q in maps {
                    if !(q.linear.is_finite() && q.linear > 0.0 && q.quadratic.is_finite() && q.quadratic >= 0.0) {
                        return invalid(format!("quality map needs linear > 0, quadratic >= 0, got {q:?}"));
                    }
                }
                Ok(())
            }
            Constraint::Linear { normal, offset } => {
                if normal.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                    return invalid("linear constraint normal must be nonnegative");
                }
                if !offset.is_finite() {
                    return invalid("linear constraint offset is not finite");
                }
                Ok(())
            }
        }
    }

    fn budget(&self) -> f64 {
        match self {
            Constraint::Capacity { .. } | Constraint::QualityMapped { .. } => 1.0,
            Constraint::Exogenous { load_fraction, .. } => 1.0 - load_fraction,
            Constraint::Linear { offset, .. } => *offset,
        }
    }

    /// `h_i(x)`
    fn cost(&self, i: usize, x: f64) -> f64 {
        match self {
            Constraint::Capacity { peaks } | Constraint::Exogenous { peaks, .. } => x / peaks[i],
            Constraint::QualityMapped { peaks, maps } => maps[i].rate_for(x) / peaks[i],
            Constraint::Linear { normal, .. } => normal[i] * x,
        }
    }

    /// `h_i'(x)`
    fn slope(&self, i: usize, x: f64) -> f64 {
        match self {
            Constraint::Capacity { peaks } | Constraint::Exogenous { peaks, .. } => 1.0 / peaks[i],
            Constraint::QualityMapped { peaks, maps } => maps[i].rate_slope(x) / peaks[i],
            Constraint::Linear { normal, .. } => normal[i],
        }
    }

    /// `argmin_{x >= 0} curv/2 (x - center)^2 + lambda h_i(x)` in closed form.
    pub(crate) fn coordinate_response(&self, i: usize, center: f64, curv: f64, lambda: f64) -> f64 {
        let x = match self {
            Constraint::QualityMapped { peaks, maps } => {
                let (a, b) = (maps[i].linear / peaks[i], maps[i].quadratic / peaks[i]);
                (curv * center - lambda * a) / (curv + 2.0 * lambda * b)
            }
            _ => center - lambda * self.slope(i, 0.0) / curv,
        };
        x.max(0.0)
    }

    pub fn value(&self, r: &[f64]) -> f64 {
        r.iter().enumerate().map(|(i, &x)| self.cost(i, x)).sum::<f64>() - self.budget()
    }

    pub fn gradient(&self, r: &[f64]) -> Vec<f64> {
        r.iter().enumerate().map(|(i, &x)| self.slope(i, x)).collect()
    }

    /// `(c(r), grad c(r))` for a nonnegative reward vector.
    pub fn eval(&self, r: &[f64]) -> Result<(f64, Vec<f64>)> {
        if r.len() != self.dim() {
            return invalid(format!("reward vector has {} entries, constraint has {}", r.len(), self.dim()));
        }
        if let Some((i, x)) = r.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
            return invalid(format!("reward r_{i} = {x} is negative"));
        }
        Ok((self.value(r), self.gradient(r)))
    }

    /// Largest value user `i` can receive when everyone else gets zero.
    pub fn user_bound(&self, i: usize) -> f64 {
        let budget = self.budget();
        match self {
            Constraint::Capacity { peaks } => peaks[i],
            Constraint::Exogenous { peaks, .. } => peaks[i] * budget,
            Constraint::QualityMapped { peaks, maps } => maps[i].quality_at(peaks[i]),
            Constraint::Linear { normal, .. } => {
                if normal[i] > 0.0 {
                    budget / normal[i]
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn is_feasible(&self, r: &[f64], tol: f64) -> bool {
        r.iter().all(|&x| x >= -tol) && self.value(r) <= tol
    }
}

/// Result of the shared multiplier search.
pub(crate) struct DualSearch {
    pub lambda: f64,
    pub x: Vec<f64>,
}

/// Finds the smallest `lambda >= 0` whose coordinate responses satisfy `c <= 0`.
///
/// `center[i]` and `curv[i]` describe the separable quadratic being traded
/// against the constraint. Returns the feasible end of the final bracket.
pub(crate) fn dual_bisection(
    c: &Constraint,
    center: &[f64],
    curv: &[f64],
    rel_width: f64,
    solver: &'static str,
) -> Result<DualSearch> {
    let n = center.len();
    let respond = |lambda: f64| -> Vec<f64> {
        (0..n).map(|i| c.coordinate_response(i, center[i], curv[i], lambda)).collect()
    };
    let x0 = respond(0.0);
    let v0 = c.value(&x0);
    if v0 <= 0.0 {
        return Ok(DualSearch { lambda: 0.0, x: x0 });
    }
    // Beyond this multiplier every coordinate response is zero, which is feasible.
    let mut hi = (0..n)
        .map(|i| curv[i] * center[i].max(0.0) / c.slope(i, 0.0))
        .fold(0.0f64, f64::max);
    if !(hi.is_finite() && hi > 0.0) {
        return Err(Error::Assumption {
            assumption: "C.3",
            detail: format!("no finite multiplier makes {} feasible", c.family_name()),
        });
    }
    let mut x_hi = respond(hi);
    let mut v_hi = c.value(&x_hi);
    if v_hi > 0.0 {
        // c(0) > 0: the constraint excludes the origin.
        return Err(Error::Assumption {
            assumption: "C.3",
            detail: format!("c(0) = {v_hi} > 0"),
        });
    }
    let (mut lo, mut v_lo) = (0.0, v0);
    let width = rel_width * hi.max(1.0);
    let mut iters = 0;
    while hi - lo > width {
        iters += 1;
        if iters > BISECTION_MAX_ITERS {
            return Err(Error::NotConverged {
                solver,
                iterations: iters,
                residual: hi - lo,
                best: x_hi,
            });
        }
        let mid = 0.5 * (lo + hi);
        let x = respond(mid);
        let v = c.value(&x);
        if v > v_lo || v < v_hi {
            return Err(Error::NonMonotone { solver, multiplier: mid });
        }
        if v > 0.0 {
            lo = mid;
            v_lo = v;
        } else {
            hi = mid;
            x_hi = x;
            v_hi = v;
        }
    }
    // Secant step inside the final bracket: exact when both ends share an active set.
    if v_lo > v_hi {
        let lambda = lo + (hi - lo) * v_lo / (v_lo - v_hi);
        if lambda > lo && lambda < hi {
            let x = respond(lambda);
            if c.value(&x) <= 1e-15 * (1.0 + c.budget().abs()) {
                return Ok(DualSearch { lambda, x });
            }
        }
    }
    Ok(DualSearch { lambda: hi, x: x_hi })
}

/// Euclidean projection of `r` onto `{x >= 0 : c(x) <= 0}`.
pub fn project_feasible(c: &Constraint, r: &[f64]) -> Result<Vec<f64>> {
    if r.len() != c.dim() {
        return invalid(format!("point has {} entries, constraint has {}", r.len(), c.dim()));
    }
    let ones = vec![1.0; r.len()];
    let found = dual_bisection(c, r, &ones, 1e-10, "projection")?;
    Ok(found.x)
}

pub(crate) fn clamp_dust(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 && *v > -DUST {
            *v = 0.0;
        }
    }
}

/// Bounds certified for a universe: Assumptions C.2 and C.3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniverseBounds {
    pub r_max: f64,
    pub v_max: f64,
    pub delta_feas: f64,
}

/// Derives `r_max` and `delta_feas` for a set of constraints over the same users.
///
/// Capacity and exogenous members use the closed forms
/// `r_max = max p_i` and `delta_feas = min p_i (1 - f_max) / (2N)`.
/// Quality-mapped members bound `r_i` by `q_i(p_i)`, linear members by
/// `b / a_i`; their `delta_feas` is found by halving from `r_max`.
pub fn derive_rmax(members: &[Constraint]) -> Result<UniverseBounds> {
    let Some(first) = members.first() else {
        return invalid("constraint universe is empty");
    };
    let n = first.dim();
    for c in members {
        c.check()?;
        if c.dim() != n {
            return invalid(format!("constraints disagree on user count ({} vs {n})", c.dim()));
        }
        let at_origin = c.value(&vec![0.0; n]);
        if at_origin > 0.0 {
            return Err(Error::Assumption {
                assumption: "C.3",
                detail: format!("c(0) = {at_origin} > 0 for a {} constraint", c.family_name()),
            });
        }
    }
    let mut r_max = 0.0f64;
    for c in members {
        for i in 0..n {
            let b = c.user_bound(i);
            if !b.is_finite() {
                return Err(Error::Assumption {
                    assumption: "C.2",
                    detail: format!("user {i} is unbounded under a {} constraint", c.family_name()),
                });
            }
            r_max = r_max.max(b);
        }
    }
    if !(r_max > 0.0) {
        return Err(Error::Assumption {
            assumption: "C.2",
            detail: "every feasible set is {0}".into(),
        });
    }

    let mut delta = f64::INFINITY;
    let rate_family: Vec<&Constraint> = members
        .iter()
        .filter(|c| matches!(c, Constraint::Capacity { .. } | Constraint::Exogenous { .. }))
        .collect();
    if !rate_family.is_empty() {
        let mut p_min = f64::INFINITY;
        let mut f_max = 0.0f64;
        for c in &rate_family {
            match c {
                Constraint::Capacity { peaks } => p_min = peaks.iter().copied().fold(p_min, f64::min),
                Constraint::Exogenous { peaks, load_fraction } => {
                    p_min = peaks.iter().copied().fold(p_min, f64::min);
                    f_max = f_max.max(*load_fraction);
                }
                _ => unreachable!(),
            }
        }
        delta = p_min * (1.0 - f_max) / (2.0 * n as f64);
    }
    for c in members.iter().filter(|c| matches!(c, Constraint::QualityMapped { .. } | Constraint::Linear { .. })) {
        let mut d = r_max;
        let mut halvings = 0;
        while c.value(&vec![d; n]) >= 0.0 {
            d *= 0.5;
            halvings += 1;
            if halvings > 200 {
                return Err(Error::Assumption {
                    assumption: "C.3",
                    detail: format!("no strictly feasible diagonal point for a {} constraint", c.family_name()),
                });
            }
        }
        // Half of the boundary point, as in the closed forms.
        delta = delta.min(0.5 * d);
    }
    for (k, c) in members.iter().enumerate() {
        let v = c.value(&vec![delta; n]);
        if !(v < 0.0) {
            return Err(Error::Assumption {
                assumption: "C.3",
                detail: format!("constraint {k}: c(delta_feas * 1) = {v} is not negative"),
            });
        }
    }
    Ok(UniverseBounds {
        r_max,
        v_max: r_max * r_max,
        delta_feas: delta,
    })
}

/// The finite set of slot constraints with its certified bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintUniverse {
    constraints: Vec<Constraint>,
    bounds: UniverseBounds,
}

impl ConstraintUniverse {
    pub fn new(constraints: Vec<Constraint>) -> Result<Self> {
        let bounds = derive_rmax(&constraints)?;
        Ok(Self { constraints, bounds })
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.constraints[0].dim()
    }

    pub fn get(&self, k: usize) -> &Constraint {
        &self.constraints[k]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn bounds(&self) -> UniverseBounds {
        self.bounds
    }

    pub fn r_max(&self) -> f64 {
        self.bounds.r_max
    }

    pub fn v_max(&self) -> f64 {
        self.bounds.v_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessKind {
    Iid { pi: Vec<f64> },
    Markov { transition: Vec<Vec<f64>> },
}

/// A stationary ergodic constraint process over universe indices.
///
/// Draws are a pure function of `(seed, stream, step, previous index)`: the
/// generator is ChaCha8 repositioned to a word offset derived from the step,
/// so any cursor can be replayed without the history that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSpec {
    kind: ProcessKind,
    marginal: Vec<f64>,
    seed: u64,
    stream: u64,
}

/// Position in a realization. Cheap to copy; advancing returns a new cursor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcessCursor {
    step: u64,
    previous: Option<usize>,
}

impl ProcessCursor {
    pub fn step(&self) -> u64 {
        self.step
    }
}

fn check_distribution(p: &[f64], what: &str, strict: bool) -> Result<()> {
    if p.is_empty() {
        return invalid(format!("{what} is empty"));
    }
    if p.iter().any(|x| !(x.is_finite() && (if strict { *x > 0.0 } else { *x >= 0.0 }))) {
        let req = if strict { "positive" } else { "nonnegative" };
        return invalid(format!("{what} must have {req} entries"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return invalid(format!("{what} sums to {s}, not 1"));
    }
    Ok(())
}

fn reachable_from(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[start] = Some(0);
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let next = level[u].unwrap() + 1;
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Stationary law of an irreducible aperiodic chain, by a direct linear solve.
pub fn stationary_distribution(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = transition.len();
    if k == 0 {
        return invalid("transition matrix is empty");
    }
    for (row_idx, row) in transition.iter().enumerate() {
        if row.len() != k {
            return invalid(format!("transition row {row_idx} has {} entries, expected {k}", row.len()));
        }
        check_distribution(row, &format!("transition row {row_idx}"), false)?;
    }
    let adj: Vec<Vec<usize>> = transition
        .iter()
        .map(|row| (0..k).filter(|&j| row[j] > 0.0).collect())
        .collect();
    let levels = reachable_from(&adj, 0);
    let mut reverse = vec![Vec::new(); k];
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            reverse[v].push(u);
        }
    }
    if levels.iter().any(Option::is_none) || reachable_from(&reverse, 0).iter().any(Option::is_none) {
        return Err(Error::Assumption {
            assumption: "C.1",
            detail: "Markov chain is not irreducible".into(),
        });
    }
    let mut period = 0;
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            let (lu, lv) = (levels[u].unwrap(), levels[v].unwrap());
            period = gcd(period, (lu + 1).abs_diff(lv));
        }
    }
    if period != 1 {
        return Err(Error::Assumption {
            assumption: "C.1",
            detail: format!("Markov chain has period {period}"),
        });
    }
    // pi (P - I) = 0 with the last equation replaced by sum(pi) = 1.
    let mut a = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            a[(j, i)] = transition[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for i in 0..k {
        a[(k - 1, i)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(k);
    b[k - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Invalid("singular stationary system".into()))?;
    Ok(pi.iter().map(|x| x.max(0.0)).collect())
}

impl ProcessSpec {
    pub fn new(kind: ProcessKind, seed: u64) -> Result<Self> {
        let marginal = match &kind {
            ProcessKind::Iid { pi } => {
                check_distribution(pi, "pi", true)?;
                pi.clone()
            }
            ProcessKind::Markov { transition } => {
                let pi = stationary_distribution(transition)?;
                if pi.iter().any(|p| !(*p > 0.0)) {
                    return Err(Error::Assumption {
                        assumption: "C.1",
                        detail: "stationary law has a zero entry".into(),
                    });
                }
                pi
            }
        };
        Ok(Self {
            kind,
            marginal,
            seed,
            stream: 0,
        })
    }

    pub fn iid(pi: &[f64], seed: u64) -> Result<Self> {
        Self::new(ProcessKind::Iid { pi: pi.to_vec() }, seed)
    }

    pub fn markov(transition: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        Self::new(ProcessKind::Markov { transition }, seed)
    }

    /// Same law, independent stream (for replications sharing a seed).
    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn kind(&self) -> &ProcessKind {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The marginal law `pi` of each `C_t`.
    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    pub fn n_states(&self) -> usize {
        self.marginal.len()
    }

    pub fn start(&self) -> ProcessCursor {
        ProcessCursor {
            step: 0,
            previous: None,
        }
    }

    fn uniform_at(&self, step: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(u128::from(step) * 2);
        rng.random::<f64>()
    }

    /// Index of the constraint for the cursor's slot, and the next cursor.
    /// The first draw comes from the stationary law, so the chain is stationary from slot 1.
    pub fn sample_next(&self, cursor: ProcessCursor) -> (usize, ProcessCursor) {
        let u = self.uniform_at(cursor.step);
        let row = match (&self.kind, cursor.previous) {
            (ProcessKind::Markov { transition }, Some(prev)) => transition[prev].as_slice(),
            _ => self.marginal.as_slice(),
        };
        let idx = categorical(row, u);
        (
            idx,
            ProcessCursor {
                step: cursor.step + 1,
                previous: Some(idx),
            },
        )
    }

    /// The first `horizon` constraint indices.
    pub fn realize(&self, horizon: usize) -> Vec<usize> {
        let mut cursor = self.start();
        (0..horizon)
            .map(|_| {
                let (k, next) = self.sample_next(cursor);
                cursor = next;
                k
            })
            .collect()
    }
}

fn categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    // Rounding left u above the cumulative sum: take the last state with mass.
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}
