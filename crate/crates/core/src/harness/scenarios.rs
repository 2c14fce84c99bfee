//! Named experiment configurations.

use crate::constraints::{Constraint, ProcessKind, QualityMap};
use crate::slot_solver::Backend;

use super::config::{ExperimentConfig, PenaltyDecl, QoeDecl, Tolerances, UserDecl};

pub const CAPACITY_MARKOV: &str = "capacity-markov";
pub const EXOGENOUS_LOAD: &str = "exogenous-load";
pub const VIDEO_QUALITY: &str = "video-quality";
pub const TWO_CONSTRAINT: &str = "two-constraint";
pub const DETERMINISTIC: &str = "deterministic";

fn alpha_fair(alpha: f64, delta: Option<f64>, penalty: PenaltyDecl) -> UserDecl {
    UserDecl {
        qoe: QoeDecl::AlphaFair {
            alpha,
            shift: None,
            delta,
        },
        penalty,
    }
}

fn log_user(kappa: f64) -> UserDecl {
    alpha_fair(1.0, None, PenaltyDecl::Linear { kappa })
}

fn sqrt(delta: f64) -> PenaltyDecl {
    PenaltyDecl::SqrtShifted { delta: Some(delta) }
}

fn base(name: &str, users: Vec<UserDecl>, constraints: Vec<Constraint>, process: ProcessKind) -> ExperimentConfig {
    ExperimentConfig {
        scenario: name.to_string(),
        horizon: 100_000,
        checkpoints: vec![200, 2000, 20_000],
        seeds: vec![1, 2, 3, 4, 5],
        output_dir: format!("out/{name}"),
        backend: Backend::Auto,
        tolerances: Tolerances::default(),
        users,
        constraints,
        process,
        initial: None,
    }
}

/// Time-shared scheduling over three peak-rate vectors driven by a Markov chain.
pub fn capacity_markov() -> ExperimentConfig {
    base(
        CAPACITY_MARKOV,
        vec![
            alpha_fair(2.0, Some(0.3), PenaltyDecl::Linear { kappa: 0.25 }),
            alpha_fair(2.0, Some(0.3), sqrt(1.0)),
        ],
        vec![
            Constraint::capacity(&[1.0, 2.0]),
            Constraint::capacity(&[2.0, 1.0]),
            Constraint::capacity(&[3.0, 3.0]),
        ],
        ProcessKind::Markov {
            transition: vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.6, 0.2], vec![0.1, 0.3, 0.6]],
        },
    )
}

/// Two peak vectors, each with and without half the slot taken by exogenous load.
pub fn exogenous_load() -> ExperimentConfig {
    let mut constraints = Vec::new();
    for peaks in [[1.0, 2.0], [2.0, 1.0]] {
        for f in [0.0, 0.5] {
            constraints.push(Constraint::exogenous(&peaks, f));
        }
    }
    base(
        EXOGENOUS_LOAD,
        vec![
            alpha_fair(2.0, Some(0.3), PenaltyDecl::Linear { kappa: 0.1 }),
            alpha_fair(1.0, None, sqrt(0.25)),
        ],
        constraints,
        ProcessKind::Iid { pi: vec![0.25; 4] },
    )
}

/// Video quality levels whose rate cost grows quadratically.
pub fn video_quality() -> ExperimentConfig {
    let maps = vec![
        QualityMap {
            linear: 1.0,
            quadratic: 0.5,
        },
        QualityMap {
            linear: 0.8,
            quadratic: 0.2,
        },
    ];
    let constraints = [[2.0, 4.0], [4.0, 2.0], [3.0, 3.0], [1.0, 1.0]]
        .iter()
        .map(|p| Constraint::QualityMapped {
            peaks: p.to_vec(),
            maps: maps.clone(),
        })
        .collect();
    base(
        VIDEO_QUALITY,
        vec![log_user(0.5), log_user(0.5)],
        constraints,
        ProcessKind::Iid {
            pi: vec![0.3, 0.3, 0.2, 0.2],
        },
    )
}

/// One user, `r <= 1` or `r <= 3` with equal probability.
pub fn two_constraint() -> ExperimentConfig {
    base(
        TWO_CONSTRAINT,
        vec![UserDecl {
            qoe: QoeDecl::Linear { slope: 1.0 },
            penalty: PenaltyDecl::Linear { kappa: 1.0 },
        }],
        vec![Constraint::linear(&[1.0], 1.0), Constraint::linear(&[1.0], 3.0)],
        ProcessKind::Iid { pi: vec![0.5, 0.5] },
    )
}

/// A single capacity constraint served every slot.
pub fn deterministic() -> ExperimentConfig {
    let mut cfg = base(
        DETERMINISTIC,
        vec![log_user(0.5), log_user(0.5)],
        vec![Constraint::capacity(&[1.0, 1.2])],
        ProcessKind::Iid { pi: vec![1.0] },
    );
    cfg.seeds = vec![1];
    cfg
}

pub fn scenario_library() -> Vec<ExperimentConfig> {
    vec![capacity_markov(), exogenous_load(), video_quality(), two_constraint(), deterministic()]
}

pub fn scenario(name: &str) -> Option<ExperimentConfig> {
    scenario_library().into_iter().find(|c| c.scenario == name)
}

/// Scenarios whose constraint process is not constant.
pub fn stochastic_scenarios() -> Vec<ExperimentConfig> {
    scenario_library().into_iter().filter(|c| c.constraints.len() > 1).collect()
}
