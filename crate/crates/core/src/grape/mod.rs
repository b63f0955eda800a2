//! Gradient-based pulse optimization against schematic, state-to-state and
//! transverse-excitation targets over offset × B1 ensembles.

pub mod cost;
pub mod design;
pub mod lbfgs;
pub mod optimize;
pub mod target;

pub use cost::{cost_and_gradient, score_pulse, CostGradient, EnsembleSpec, HalfScore, PointScore};
pub use design::{design, evolution_schedule, DesignResult, StageReport};
pub use optimize::{
    optimize, optimize_with, random_initial, OptimError, OptimResult, OptimizerConfig, ParamMode,
    SymmetryConstraint,
};
pub use target::{parse_target, ChainToken, OperatorExpr, TargetAt, TargetSpec};
