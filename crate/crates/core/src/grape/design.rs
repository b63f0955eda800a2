//! Staged pulse design: evolution-fraction continuation for universal
//! targets, and a mirrored front-half seed in REBURP mode.

use serde::{Deserialize, Serialize};

use super::cost::EnsembleSpec;
use super::optimize::{
    optimize_with, OptimError, OptimResult, OptimizerConfig, SymmetryConstraint,
};
use super::target::TargetSpec;
use crate::pulse::PulseShape;
use crate::su2::AxisAngle;
use crate::symmetry::{concat, partner, SymmetryKind};

/// Largest evolution fraction optimized directly from a random start.
pub const DIRECT_FRACTION: f64 = 0.5;
/// Intermediate evolution fractions used on the way to larger targets.
pub const STAGE_FRACTIONS: [f64; 2] = [DIRECT_FRACTION, 0.8];
/// Stop threshold floor for intermediate stages.
pub const STAGE_STOP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub label: String,
    pub infidelity: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    /// Outcome of the final stage.
    pub result: OptimResult,
    pub stages: Vec<StageReport>,
}

impl DesignResult {
    pub fn iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }
}

/// Scale factors applied to `(a, b)` in successive stages.
pub fn evolution_schedule(a: f64, b: f64) -> Vec<f64> {
    let m = a.abs().max(b.abs());
    if m <= DIRECT_FRACTION {
        return vec![1.0];
    }
    STAGE_FRACTIONS
        .iter()
        .filter(|&&f| f < m)
        .map(|f| f / m)
        .chain(std::iter::once(1.0))
        .collect()
}

fn continuation(
    initial: &PulseShape,
    spec: &TargetSpec,
    ens: &EnsembleSpec,
    cfg: &OptimizerConfig,
    prefix: &str,
    stages: &mut Vec<StageReport>,
    progress: &mut impl FnMut(usize, f64),
) -> Result<OptimResult, OptimError> {
    let schedule = match spec {
        TargetSpec::UniversalRotation { a, b, .. } => evolution_schedule(*a, *b),
        _ => vec![1.0],
    };
    let mut shape = initial.clone();
    let mut last = None;
    for (i, &f) in schedule.iter().enumerate() {
        let final_stage = i + 1 == schedule.len();
        let stage_spec = match spec {
            TargetSpec::UniversalRotation { a, b, rotation } if !final_stage => {
                TargetSpec::UniversalRotation {
                    a: a * f,
                    b: b * f,
                    rotation: *rotation,
                }
            }
            _ => spec.clone(),
        };
        let stage_cfg = OptimizerConfig {
            stop_infidelity: if final_stage {
                cfg.stop_infidelity
            } else {
                cfg.stop_infidelity.max(STAGE_STOP)
            },
            ..*cfg
        };
        let r = optimize_with(&shape, &stage_spec, ens, &stage_cfg, &mut *progress)?;
        stages.push(StageReport {
            label: match &stage_spec {
                TargetSpec::UniversalRotation { a, b, .. } => format!("{prefix}a={a:.3} b={b:.3}"),
                _ => format!("{prefix}target"),
            },
            infidelity: r.infidelity,
            iterations: r.iterations,
        });
        shape = r.shape.clone();
        last = Some(r);
    }
    Ok(last.expect("schedule is never empty"))
}

/// Designs a pulse from `initial`. Universal targets with an evolution
/// fraction above [`DIRECT_FRACTION`] are reached through intermediate
/// fractions. In REBURP mode without a symmetry constraint the front half is
/// first designed alone against the half target, mirrored by order/phase
/// reversal, and the whole pulse is then optimized with both scores.
/// `cfg.max_iter` applies to each stage.
pub fn design(
    initial: &PulseShape,
    spec: &TargetSpec,
    ens: &EnsembleSpec,
    cfg: &OptimizerConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<DesignResult, OptimError> {
    let mut stages = Vec::new();
    let seeded = cfg.reburp && cfg.symmetry == SymmetryConstraint::None && initial.len().is_multiple_of(2);
    let start = if seeded {
        let (front, _) = initial
            .split_half()
            .ok_or(OptimError::OddSegments(initial.len()))?;
        let half_spec = TargetSpec::UniversalRotation {
            a: 2.0 * cfg.ev_alpha,
            b: cfg.ev_beta,
            rotation: AxisAngle::x(std::f64::consts::FRAC_PI_2),
        };
        let half_cfg = OptimizerConfig {
            reburp: false,
            stop_infidelity: cfg.stop_infidelity.max(STAGE_STOP),
            ..*cfg
        };
        let r = continuation(
            &front,
            &half_spec,
            ens,
            &half_cfg,
            "half ",
            &mut stages,
            &mut progress,
        )?;
        let back = partner(&r.shape, SymmetryKind::OrderPhaseReverse);
        let mut full =
            concat(&r.shape, &back).map_err(|_| OptimError::OddSegments(initial.len()))?;
        full.name = initial.name.clone();
        full
    } else {
        initial.clone()
    };
    let result = if seeded {
        let r = optimize_with(&start, spec, ens, cfg, &mut progress)?;
        stages.push(StageReport {
            label: "full".into(),
            infidelity: r.infidelity,
            iterations: r.iterations,
        });
        r
    } else {
        continuation(&start, spec, ens, cfg, "", &mut stages, &mut progress)?
    };
    Ok(DesignResult { result, stages })
}
