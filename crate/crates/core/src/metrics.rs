//! Horizon operators `m^T`, `Var^T`, `e^T` and the horizon objective `phi_T`.
//!
//! Variances are population variances (divide by `T`).

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::slot_solver::Theta;
use crate::utilities::{UtilityProfile, UvPiece};

pub fn horizon_mean(seq: &[f64]) -> Result<f64> {
    if seq.is_empty() {
        return invalid("horizon mean of an empty sequence");
    }
    Ok(seq.iter().sum::<f64>() / seq.len() as f64)
}

pub fn horizon_variance(seq: &[f64]) -> Result<f64> {
    let m = horizon_mean(seq)?;
    Ok(seq.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / seq.len() as f64)
}

/// `e^T = m^T - U^V(Var^T)`.
pub fn horizon_qoe(seq: &[f64], uv: &UvPiece) -> Result<f64> {
    let m = horizon_mean(seq)?;
    let var = horizon_variance(seq)?;
    Ok(m - uv.eval(var)?.0)
}

/// One-pass mean and population variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StreamingStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl StreamingStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then_some(self.mean)
    }

    pub fn variance(&self) -> Option<f64> {
        (self.count > 0).then(|| (self.m2 / self.count as f64).max(0.0))
    }
}

/// Extracts the reward sequence of user `i` from row-major allocations.
pub fn user_series(allocations: &[Vec<f64>], i: usize) -> Vec<f64> {
    allocations.iter().map(|row| row[i]).collect()
}

/// Per-user `(m^T, Var^T)` of a row-major allocation matrix.
pub fn horizon_moments(allocations: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let Some(first) = allocations.first() else {
        return invalid("empty horizon");
    };
    let n = first.len();
    let mut stats = vec![StreamingStats::new(); n];
    for (t, row) in allocations.iter().enumerate() {
        if row.len() != n {
            return invalid(format!("slot {t} has {} users, expected {n}", row.len()));
        }
        for (s, &x) in stats.iter_mut().zip(row) {
            s.push(x);
        }
    }
    Ok(stats.iter().map(|s| (s.mean().unwrap(), s.variance().unwrap())).collect())
}

/// `phi_T = sum_i U^E_i(e_i^T)` for a row-major allocation matrix.
pub fn phi(allocations: &[Vec<f64>], profile: &UtilityProfile) -> Result<f64> {
    let moments = horizon_moments(allocations)?;
    if moments.len() != profile.len() {
        return invalid(format!("{} users in allocations, {} in profile", moments.len(), profile.len()));
    }
    let mut total = 0.0;
    for (i, &(m, var)) in moments.iter().enumerate() {
        let user = profile.user(i);
        let e = m - user.penalty.eval(var)?.0;
        total += user.qoe.eval(e)?.0;
    }
    Ok(total)
}

/// [`phi`] over the allocations of a trace.
pub fn objective_phi(trace: &HorizonTrace, profile: &UtilityProfile) -> Result<f64> {
    phi(&trace.allocations, profile)
}

/// A realized horizon: allocations, the constraint index of every slot, and
/// optionally the tracked state after every slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HorizonTrace {
    pub allocations: Vec<Vec<f64>>,
    pub constraint_indices: Vec<usize>,
    /// `theta_path[t]` is the tracked state after slot `t` has been processed.
    pub theta_path: Option<Vec<Theta>>,
}

impl HorizonTrace {
    pub fn len(&self) -> usize {
        self.allocations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.allocations.first().map_or(0, Vec::len)
    }

    /// The first `t` slots.
    pub fn prefix(&self, t: usize) -> HorizonTrace {
        HorizonTrace {
            allocations: self.allocations[..t].to_vec(),
            constraint_indices: self.constraint_indices[..t].to_vec(),
            theta_path: self.theta_path.as_ref().map(|p| p[..t].to_vec()),
        }
    }

    /// Per-slot QoE estimates `m_i(t) - U_i^V(v_i(t))` along the tracked path.
    pub fn qoe_estimates(&self, profile: &UtilityProfile) -> Option<Vec<Vec<f64>>> {
        let path = self.theta_path.as_ref()?;
        Some(
            path.iter()
                .map(|th| {
                    (0..th.m.len())
                        .map(|i| th.m[i] - profile.user(i).penalty.value_raw(th.v[i]))
                        .collect()
                })
                .collect(),
        )
    }

    /// Writes `t, constraint_index, r_1..r_N, m_1..m_N, v_1..v_N, e_1..e_N`.
    ///
    /// Tracked columns are left empty when the trace has no path. A leading
    /// `# config_digest=<hex>` line is written when `digest` is given.
    pub fn write_csv<W: Write>(&self, mut out: W, profile: &UtilityProfile, digest: Option<&str>) -> Result<()> {
        if let Some(d) = digest {
            writeln!(out, "# config_digest={d}")?;
        }
        let n = self.n_users();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "constraint_index".to_string()];
        for prefix in ["r", "m", "v", "e"] {
            header.extend((1..=n).map(|i| format!("{prefix}_{i}")));
        }
        w.write_record(&header)?;
        let qoe = self.qoe_estimates(profile);
        let mut record = Vec::with_capacity(header.len());
        for t in 0..self.len() {
            record.clear();
            record.push((t + 1).to_string());
            record.push(self.constraint_indices[t].to_string());
            record.extend(self.allocations[t].iter().map(|x| format_float(*x)));
            match (&self.theta_path, &qoe) {
                (Some(path), Some(e)) => {
                    record.extend(path[t].m.iter().map(|x| format_float(*x)));
                    record.extend(path[t].v.iter().map(|x| format_float(*x)));
                    record.extend(e[t].iter().map(|x| format_float(*x)));
                }
                _ => record.extend(std::iter::repeat_n(String::new(), 3 * n)),
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace written by [`HorizonTrace::write_csv`]. Returns the trace and the embedded digest.
    pub fn read_csv<R: std::io::BufRead>(mut input: R) -> Result<(HorizonTrace, Option<String>)> {
        let mut body = String::new();
        input.read_to_string(&mut body)?;
        let mut digest = None;
        let mut rest = body.as_str();
        if let Some(line) = rest.lines().next() {
            if let Some(d) = line.strip_prefix("# config_digest=") {
                digest = Some(d.trim().to_string());
                rest = &rest[line.len()..].trim_start_matches(['\r', '\n']);
            }
        }
        let mut r = csv::Reader::from_reader(rest.as_bytes());
        let header = r.headers()?.clone();
        let n = header.iter().filter(|h| h.starts_with("r_")).count();
        if n == 0 || header.len() != 2 + 4 * n {
            return invalid("trace CSV does not follow the t, constraint_index, r, m, v, e layout");
        }
        let mut trace = HorizonTrace::default();
        let mut path = Vec::new();
        let mut has_path = true;
        for rec in r.records() {
            let rec = rec?;
            let num = |j: usize| -> Result<f64> {
                rec[j]
                    .parse::<f64>()
                    .map_err(|e| Error::Invalid(format!("column {}: {e}", header[j].to_string())))
            };
            let idx = rec[1]
                .parse::<usize>()
                .map_err(|e| Error::Invalid(format!("constraint_index: {e}")))?;
            trace.constraint_indices.push(idx);
            trace.allocations.push((0..n).map(|i| num(2 + i)).collect::<Result<_>>()?);
            if rec[2 + n].is_empty() {
                has_path = false;
            } else {
                path.push(Theta {
                    m: (0..n).map(|i| num(2 + n + i)).collect::<Result<_>>()?,
                    v: (0..n).map(|i| num(2 + 2 * n + i)).collect::<Result<_>>()?,
                });
            }
        }
        if has_path && !path.is_empty() {
            trace.theta_path = Some(path);
        }
        Ok((trace, digest))
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_float(x: f64) -> String {
    format!("{x:?}")
}
