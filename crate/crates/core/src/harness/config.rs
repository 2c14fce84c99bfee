//! Experiment configuration: a TOML document with a fixed schema.
//!
//! ```toml
//! scenario = "two-constraint"
//! horizon = 100000                  # slots per AVR run
//! checkpoints = [200, 2000, 20000]  # offline prefix horizons
//! seeds = [1, 2, 3, 4, 5]
//! output_dir = "out/two-constraint"
//! backend = "auto"                  # auto | dual_bisection | projected_gradient
//!
//! [tolerances]
//! solver = 1e-8     # KKT residual of every solver
//! tracking = 5e-2   # tracked-statistic deviations (QoE uses twice this)
//! gap = 1e-8        # allowed negative optimality gap
//!
//! [[users]]
//! qoe = { family = "alpha_fair", alpha = 1.0, delta = 0.01 }
//! penalty = { family = "linear", kappa = 0.5 }
//!
//! [[constraints]]
//! family = "capacity"
//! peaks = [1.0, 2.0]
//!
//! [process]
//! kind = "iid"
//! pi = [0.5, 0.5]
//!
//! [initial]         # optional; defaults to the origin
//! m = [0.0]
//! v = [0.0]
//! ```
//!
//! `qoe.family` is `alpha_fair` (with `alpha` and either a fixed `shift` or a
//! `delta` above the QoE floor, default 0.01) or `linear` (with `slope`).
//! `penalty.family` is `linear` (`kappa`) or `sqrt_shifted` (`delta`, default 0.01).
//! Constraint families are `capacity`, `exogenous` (`load_fraction`),
//! `quality_mapped` (`maps = [{ linear, quadratic }, ...]`) and `linear`
//! (`normal`, `offset`). Processes are `iid` (`pi`) or `markov` (`transition`).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constraints::{Constraint, ConstraintUniverse, ProcessKind, ProcessSpec};
use crate::error::{Error, Result};
use crate::slot_solver::{Backend, SlotOptions, Theta};
use crate::utilities::{validate_profile, Shift, UeFamily, UtilityProfile, UvFamily, ValidationReport, DEFAULT_ALPHA_FAIR_DELTA, DEFAULT_SQRT_DELTA};

/// Largest universe accepted by default experiments.
pub const MAX_UNIVERSE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum QoeDecl {
    AlphaFair {
        alpha: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shift: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
    },
    Linear {
        slope: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltyDecl {
    Linear {
        kappa: f64,
    },
    SqrtShifted {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserDecl {
    pub qoe: QoeDecl,
    pub penalty: PenaltyDecl,
}

impl UserDecl {
    pub fn families(&self) -> Result<(UeFamily, UvFamily)> {
        let ue = match self.qoe {
            QoeDecl::AlphaFair { alpha, shift: Some(s), delta: None } => UeFamily::AlphaFair {
                alpha,
                shift: Shift::Fixed(s),
            },
            QoeDecl::AlphaFair { alpha, shift: None, delta } => UeFamily::AlphaFair {
                alpha,
                shift: Shift::AboveFloor(delta.unwrap_or(DEFAULT_ALPHA_FAIR_DELTA)),
            },
            QoeDecl::AlphaFair { .. } => return Err(Error::Config("alpha_fair takes either shift or delta, not both".into())),
            QoeDecl::Linear { slope } => UeFamily::Linear { slope },
        };
        let uv = match self.penalty {
            PenaltyDecl::Linear { kappa } => UvFamily::Linear { kappa },
            PenaltyDecl::SqrtShifted { delta } => UvFamily::SqrtShifted {
                delta: delta.unwrap_or(DEFAULT_SQRT_DELTA),
            },
        };
        Ok((ue, uv))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_solver_tol")]
    pub solver: f64,
    #[serde(default = "default_tracking_tol")]
    pub tracking: f64,
    #[serde(default = "default_gap_tol")]
    pub gap: f64,
}

fn default_solver_tol() -> f64 {
    1e-8
}

fn default_tracking_tol() -> f64 {
    5e-2
}

fn default_gap_tol() -> f64 {
    1e-8
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            solver: default_solver_tol(),
            tracking: default_tracking_tol(),
            gap: default_gap_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDecl {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

fn default_checkpoints() -> Vec<usize> {
    vec![200, 2000, 20_000]
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_output_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub horizon: usize,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub users: Vec<UserDecl>,
    pub constraints: Vec<Constraint>,
    pub process: ProcessKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialDecl>,
}

/// A configuration with every declaration resolved and validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub universe: ConstraintUniverse,
    pub profile: UtilityProfile,
    /// Process with the first configured seed; use [`ProcessSpec::with_seed`] for the others.
    pub process: ProcessSpec,
    pub theta0: Theta,
    pub validation: ValidationReport,
    pub digest: String,
}

impl Resolved {
    pub fn pi(&self) -> &[f64] {
        self.process.marginal()
    }

    pub fn slot_options(&self) -> SlotOptions {
        SlotOptions {
            backend: self.config.backend,
            tol: self.config.tolerances.solver,
            ..SlotOptions::default()
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Canonical serialization; the digest is computed over this text.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical text with `output_dir` blanked, so moving outputs keeps the digest.
    pub fn digest(&self) -> Result<String> {
        let mut located = self.clone();
        located.output_dir.clear();
        Ok(hex::encode(Sha256::digest(located.to_toml()?.as_bytes())))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Resolves every declaration, collecting all problems into one diagnostic.
    pub fn resolve(&self) -> Result<Resolved> {
        let mut problems: Vec<String> = Vec::new();
        if self.horizon == 0 {
            problems.push("horizon must be at least 1".into());
        }
        if self.seeds.is_empty() {
            problems.push("seeds must not be empty".into());
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            problems.push("checkpoints must be strictly increasing".into());
        }
        if let Some(&c) = self.checkpoints.iter().find(|&&c| c == 0 || c > self.horizon) {
            problems.push(format!("checkpoint {c} outside [1, horizon = {}]", self.horizon));
        }
        for (name, tol) in [
            ("solver", self.tolerances.solver),
            ("tracking", self.tolerances.tracking),
            ("gap", self.tolerances.gap),
        ] {
            if !(tol > 0.0 && tol.is_finite()) {
                problems.push(format!("tolerance {name} must be positive"));
            }
        }
        if self.constraints.len() > MAX_UNIVERSE {
            problems.push(format!("universe has {} constraints; at most {MAX_UNIVERSE} are supported", self.constraints.len()));
        }
        if self.users.is_empty() {
            problems.push("at least one user is required".into());
        }
        let families: Vec<(UeFamily, UvFamily)> = self
            .users
            .iter()
            .enumerate()
            .filter_map(|(i, u)| match u.families() {
                Ok(f) => Some(f),
                Err(e) => {
                    problems.push(format!("user {i}: {e}"));
                    None
                }
            })
            .collect();
        if let Some((k, c)) = self.constraints.iter().enumerate().find(|(_, c)| c.dim() != self.users.len()) {
            problems.push(format!("constraint {k} covers {} users, {} declared", c.dim(), self.users.len()));
        }
        let universe = match ConstraintUniverse::new(self.constraints.clone()) {
            Ok(u) => Some(u),
            Err(e) => {
                problems.push(format!("constraints: {e}"));
                None
            }
        };
        let process = match ProcessSpec::new(self.process.clone(), self.seeds.first().copied().unwrap_or(0)) {
            Ok(p) => {
                if p.n_states() != self.constraints.len() {
                    problems.push(format!(
                        "process has {} states, universe has {} constraints",
                        p.n_states(),
                        self.constraints.len()
                    ));
                }
                Some(p)
            }
            Err(e) => {
                problems.push(format!("process: {e}"));
                None
            }
        };
        let profile = universe.as_ref().and_then(|u| {
            if families.len() != self.users.len() {
                return None;
            }
            match UtilityProfile::new(&families, u.r_max()) {
                Ok(p) => Some(p),
                Err(e) => {
                    problems.push(format!("users: {e}"));
                    None
                }
            }
        });
        let validation = profile.as_ref().map(validate_profile);
        if let Some(report) = &validation {
            for f in report.failures() {
                problems.push(format!("user {}: assumption {} fails ({})", f.user, f.assumption, f.witness));
            }
        }
        let theta0 = match (&self.initial, &profile) {
            (Some(init), Some(p)) => {
                let th = Theta::new(init.m.clone(), init.v.clone());
                if let Err(e) = th.check(p) {
                    problems.push(format!("initial state: {e}"));
                }
                th
            }
            _ => Theta::zeros(self.users.len()),
        };
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        Ok(Resolved {
            config: self.clone(),
            universe: universe.expect("checked"),
            profile: profile.expect("checked"),
            process: process.expect("checked"),
            theta0,
            validation: validation.expect("checked"),
            digest: self.digest()?,
        })
    }
}
