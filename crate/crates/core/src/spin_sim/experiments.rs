//! INEPT with rectangular pulses, JINEPT with evolution-controlled pulses,
//! and `A sin(πJΔ)` fitting of transfer-versus-Δ sweeps.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_sequence, DensityState, ProductOp, SequenceElement, SpinError, SpinSystem};
use crate::grape::{
    optimize, parse_target, EnsembleSpec, OptimError, OptimResult, OptimizerConfig,
};
use crate::propagation::{analyze, EvalPoint};
use crate::pulse::{CartesianOp, PulseShape, Segment};
use crate::su2::AxisAngle;
use crate::symmetry::{partner, SymmetryKind};

/// Largest |b| for which a JINEPT a90x is accepted without a warning.
pub const JINEPT_MAX_B: f64 = 0.05;

fn transfer(sys: &SpinSystem, seq: &[SequenceElement]) -> Result<f64, SpinError> {
    if sys.len() < 2 {
        return Err(SpinError::NeedSpins(2));
    }
    let n = sys.len();
    let rho0 = DensityState::new(&ProductOp::single(0, CartesianOp::Iz), n);
    let rho = simulate_sequence(sys, seq, &rho0)?;
    Ok(rho.coefficient(&ProductOp::pair(0, CartesianOp::Iz, 1, CartesianOp::Iz)))
}

fn channel(sys: &SpinSystem, k: usize) -> String {
    sys.spins[k].channel.clone()
}

fn s180_x() -> AxisAngle {
    AxisAngle::new([1.0, 0.0, 0.0], PI).expect("unit axis")
}

/// Rectangular 90° of length `t90`.
pub fn rect90(t90: f64) -> PulseShape {
    PulseShape {
        name: "rect90".into(),
        segments: vec![Segment::new(1.0, 0.0)],
        peak_field: 0.25 / t90,
        duration: t90,
    }
}

/// `Δ = 2τ + 4(2/π)T₉₀` of the rectangular-pulse INEPT.
pub fn delta_hard(tau: f64, t90: f64) -> f64 {
    2.0 * tau + 8.0 * t90 / PI
}

/// INEPT `90x(I) – τ – 180x(I, S) – τ – 90y(I)` with rectangular I pulses and
/// an instantaneous S 180 at the middle of the I 180. Spin 0 is `I`, spin 1
/// is `S`. Returns the `2I_zS_z` coefficient from `I_z`.
pub fn inept_hard(sys: &SpinSystem, tau: f64, t90: f64) -> Result<f64, SpinError> {
    if sys.len() < 2 {
        return Err(SpinError::NeedSpins(2));
    }
    let (ci, cs) = (channel(sys, 0), channel(sys, 1));
    let p = rect90(t90);
    let pulse = |phase| SequenceElement::Pulse {
        channel: ci.clone(),
        shape: p.clone(),
        phase,
    };
    let seq = vec![
        pulse(0.0),
        SequenceElement::Delay { tau },
        pulse(0.0),
        SequenceElement::IdealRotation {
            channel: cs,
            rotation: s180_x(),
        },
        pulse(0.0),
        SequenceElement::Delay { tau },
        pulse(FRAC_PI_2),
    ];
    transfer(sys, &seq)
}

/// The S-channel 180 used by JINEPT.
#[derive(Debug, Clone, PartialEq)]
pub enum S180 {
    Ideal,
    Shaped(PulseShape),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JineptResult {
    /// `2I_zS_z` coefficient from `I_z`.
    pub amplitude: f64,
    /// `4aT` with `a` from the pulse analysis at the I offset.
    pub delta: f64,
    pub a: f64,
    pub b: f64,
    /// The a90x is not band-schematic with `b ≈ 0` at the I offset.
    pub warning: bool,
}

/// JINEPT `V′(a90x), a90x, 180x(S), V′(a90x), a90y` with `V′` the
/// order/phase-reversed partner.
pub fn jinept(sys: &SpinSystem, a90x: &PulseShape, s180: &S180) -> Result<JineptResult, SpinError> {
    if sys.len() < 2 {
        return Err(SpinError::NeedSpins(2));
    }
    let (ci, cs) = (channel(sys, 0), channel(sys, 1));
    let rev = partner(a90x, SymmetryKind::OrderPhaseReverse);
    let pulse = |shape: &PulseShape, phase| SequenceElement::Pulse {
        channel: ci.clone(),
        shape: shape.clone(),
        phase,
    };
    let s = match s180 {
        S180::Ideal => SequenceElement::IdealRotation {
            channel: cs,
            rotation: s180_x(),
        },
        S180::Shaped(shape) => SequenceElement::Pulse {
            channel: cs,
            shape: shape.clone(),
            phase: 0.0,
        },
    };
    let seq = vec![
        pulse(&rev, 0.0),
        pulse(a90x, 0.0),
        s,
        pulse(&rev, 0.0),
        pulse(a90x, FRAC_PI_2),
    ];
    let amplitude = transfer(sys, &seq)?;
    let params = analyze(a90x, &EvalPoint::at_offset(sys.offset(0)?));
    Ok(JineptResult {
        amplitude,
        delta: 4.0 * params.a * a90x.duration,
        a: params.a,
        b: params.b,
        warning: !params.is_ok() || params.b.abs() > JINEPT_MAX_B,
    })
}

/// Least-squares fit of `I = A sin(πJΔ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub j_hz: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    pub ok: bool,
}

impl FitResult {
    /// Δ of the first maximum, `1/(2J)`.
    pub fn delta_max(&self) -> f64 {
        0.5 / self.j_hz
    }
}

/// Fits `A sin(πJΔ)` to `(Δ, I)` points by a J grid scan with closed-form A,
/// refined by Gauss–Newton. Fewer than 5 points or singular normal equations
/// give `ok = false`.
pub fn fit_sine(points: &[(f64, f64)]) -> FitResult {
    let failed = FitResult {
        amplitude: f64::NAN,
        j_hz: f64::NAN,
        residual: f64::NAN,
        ok: false,
    };
    if points.len() < 5 {
        return failed;
    }
    let mut ds: Vec<f64> = points.iter().map(|p| p.0).collect();
    ds.sort_by(f64::total_cmp);
    let d_max = ds[ds.len() - 1].abs().max(ds[0].abs());
    let min_gap = ds
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|g| *g > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !(d_max > 0.0) || !min_gap.is_finite() {
        return failed;
    }
    let amp_for = |j: f64| {
        let (mut ys, mut ss) = (0.0, 0.0);
        for &(d, y) in points {
            let s = (PI * j * d).sin();
            ys += y * s;
            ss += s * s;
        }
        if ss > 0.0 {
            ys / ss
        } else {
            0.0
        }
    };
    let rss = |a: f64, j: f64| -> f64 {
        points
            .iter()
            .map(|&(d, y)| (y - a * (PI * j * d).sin()).powi(2))
            .sum()
    };
    let (lo, hi) = (0.05 / d_max, 0.5 / min_gap);
    let steps = 4000;
    let (mut j, mut best) = (lo, f64::INFINITY);
    for i in 0..=steps {
        let jj = lo + (hi - lo) * i as f64 / steps as f64;
        let r = rss(amp_for(jj), jj);
        if r < best {
            best = r;
            j = jj;
        }
    }
    let mut a = amp_for(j);
    for _ in 0..100 {
        let (mut h11, mut h12, mut h22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(d, y) in points {
            let (s, c) = (PI * j * d).sin_cos();
            let r = y - a * s;
            let (da, dj) = (s, a * PI * d * c);
            h11 += da * da;
            h12 += da * dj;
            h22 += dj * dj;
            g1 += da * r;
            g2 += dj * r;
        }
        let det = h11 * h22 - h12 * h12;
        if !(det.abs() > 1e-14 * h11 * h22) {
            return failed;
        }
        let step_a = (h22 * g1 - h12 * g2) / det;
        let step_j = (h11 * g2 - h12 * g1) / det;
        a += step_a;
        j += step_j;
        if step_a.abs() <= 1e-14 * a.abs().max(1e-300) && step_j.abs() <= 1e-14 * j.abs() {
            break;
        }
    }
    if !(a.is_finite() && j.is_finite()) {
        return failed;
    }
    FitResult {
        amplitude: a,
        j_hz: j,
        residual: (rss(a, j) / points.len() as f64).sqrt(),
        ok: true,
    }
}

/// Designs one `a90xb` (b = 0) pulse per entry of `a_values` over `ens`,
/// each starting from the previous result.
pub fn a90x_family(
    a_values: &[f64],
    initial: &PulseShape,
    ens: &EnsembleSpec,
    cfg: &OptimizerConfig,
) -> Result<Vec<OptimResult>, OptimError> {
    let mut shape = initial.clone();
    let mut out = Vec::with_capacity(a_values.len());
    for &a in a_values {
        let spec = parse_target("a90xb", a, 0.0).expect("a90xb parses");
        let r = optimize(&shape, &spec, ens, cfg)?;
        shape = r.shape.clone();
        out.push(r);
    }
    Ok(out)
}

/// Experiment grid for [`delta_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub enum SweepKind {
    /// Rectangular INEPT at the given total coupling times Δ.
    Hard { t90: f64, deltas: Vec<f64> },
    /// JINEPT, one a90x per grid point.
    Jinept { pulses: Vec<PulseShape>, s180: S180 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// `(Δ, intensity)` per grid point.
    pub points: Vec<(f64, f64)>,
    pub fit: FitResult,
    /// Grid points whose a90x raised the JINEPT warning.
    pub warnings: usize,
}

/// Runs the experiment on every grid point and fits `A sin(πJΔ)`.
pub fn delta_sweep(sys: &SpinSystem, kind: &SweepKind) -> Result<SweepResult, SpinError> {
    let (points, warnings) = match kind {
        SweepKind::Hard { t90, deltas } => {
            let pts = deltas
                .par_iter()
                .map(|&d| {
                    let tau = 0.5 * (d - 8.0 * t90 / PI);
                    inept_hard(sys, tau.max(0.0), *t90).map(|v| (delta_hard(tau.max(0.0), *t90), v))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (pts, 0)
        }
        SweepKind::Jinept { pulses, s180 } => {
            let rs = pulses
                .par_iter()
                .map(|p| jinept(sys, p, s180))
                .collect::<Result<Vec<_>, _>>()?;
            let w = rs.iter().filter(|r| r.warning).count();
            (rs.iter().map(|r| (r.delta, r.amplitude)).collect(), w)
        }
    };
    Ok(SweepResult {
        fit: fit_sine(&points),
        points,
        warnings,
    })
}
