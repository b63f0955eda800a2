//! Symmetry partners of shaped pulses and composite builders.
//!
//! All partners reverse the segment order and remap phases:
//!
//! | kind | phase | propagator |
//! |------|-------|------------|
//! | `OrderPhaseReverse` (V′) | `-φ` | `Y(π) V† Y†(π)` |
//! | `XPartner` (Vˣ) | `-π-φ` | `X(π) V† X†(π)` |
//! | `ZPartner` (Vᶻ) | `π+φ` | `V†(-Ω)` |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagation::{propagator, EvalPoint};
use crate::pulse::{wrap_phase, PulseShape};
use crate::su2::Hermitian2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymmetryError {
    #[error("segment dwell mismatch: {0} s vs {1} s")]
    DwellMismatch(f64, f64),
    #[error("peak field mismatch: {0} Hz vs {1} Hz")]
    PeakFieldMismatch(f64, f64),
    #[error("excitation reaches -Iy from Iz with fidelity {fidelity:.6} at offset {offset} rad/s (need > {required})")]
    Precondition {
        fidelity: f64,
        offset: f64,
        required: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymmetryKind {
    OrderPhaseReverse,
    XPartner,
    ZPartner,
}

impl SymmetryKind {
    pub fn map_phase(self, phi: f64) -> f64 {
        use std::f64::consts::PI;
        wrap_phase(match self {
            SymmetryKind::OrderPhaseReverse => -phi,
            SymmetryKind::XPartner => -PI - phi,
            SymmetryKind::ZPartner => PI + phi,
        })
    }

    fn suffix(self) -> &'static str {
        match self {
            SymmetryKind::OrderPhaseReverse => "pr",
            SymmetryKind::XPartner => "xp",
            SymmetryKind::ZPartner => "zp",
        }
    }
}

impl FromStr for SymmetryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vprime" | "pr" | "y" => Ok(SymmetryKind::OrderPhaseReverse),
            "x" => Ok(SymmetryKind::XPartner),
            "z" => Ok(SymmetryKind::ZPartner),
            _ => Err(format!(
                "unknown symmetry kind '{s}' (expected vprime, x or z)"
            )),
        }
    }
}

impl fmt::Display for SymmetryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SymmetryKind::OrderPhaseReverse => "vprime",
            SymmetryKind::XPartner => "x",
            SymmetryKind::ZPartner => "z",
        })
    }
}

/// Symmetry partner: segments reversed, phases remapped by `kind`.
pub fn partner(shape: &PulseShape, kind: SymmetryKind) -> PulseShape {
    let segments = shape
        .segments
        .iter()
        .rev()
        .map(|s| crate::pulse::Segment::new(s.amplitude, kind.map_phase(s.phase)))
        .collect();
    PulseShape {
        name: format!("{}_{}", shape.name, kind.suffix()),
        segments,
        peak_field: shape.peak_field,
        duration: shape.duration,
    }
}

/// Segments reversed, phases kept. `Z(π) V†(Ω) Z†(π)` equals the reflected
/// pulse evaluated at `-Ω`.
pub fn time_reflect(shape: &PulseShape) -> PulseShape {
    let mut out = shape.clone();
    out.segments.reverse();
    out
}

/// `first` followed by `second`; the propagator is `V_second · V_first`.
pub fn concat(first: &PulseShape, second: &PulseShape) -> Result<PulseShape, SymmetryError> {
    let (d1, d2) = (first.dwell(), second.dwell());
    if (d1 - d2).abs() > 1e-12 * d1.max(d2) {
        return Err(SymmetryError::DwellMismatch(d1, d2));
    }
    let (f1, f2) = (first.peak_field, second.peak_field);
    if (f1 - f2).abs() > 1e-9 * f1.abs().max(f2.abs()).max(1.0) {
        return Err(SymmetryError::PeakFieldMismatch(f1, f2));
    }
    let mut segments = first.segments.clone();
    segments.extend_from_slice(&second.segments);
    Ok(PulseShape {
        name: format!("{}+{}", first.name, second.name),
        segments,
        peak_field: f1,
        duration: first.duration + second.duration,
    })
}

/// Normalized `⟨-I_y⟩` after the pulse acts on `I_z`.
pub fn excitation_fidelity(shape: &PulseShape, pt: &EvalPoint) -> f64 {
    let v = propagator(shape, pt);
    let rho = v.conjugate(&Hermitian2::iz());
    -2.0 * rho.overlap(&Hermitian2::iy())
}

/// Minimum state fidelity for the `Z → -Y` precondition of [`luy_180`].
pub const LUY_MIN_FIDELITY: f64 = 1.0 - 1e-3;

/// Composite 180° built from a `Z → -Y` excitation followed by its
/// order/phase reversed partner. The precondition is checked at every
/// supplied evaluation point.
pub fn luy_180(excitation: &PulseShape, band: &[EvalPoint]) -> Result<PulseShape, SymmetryError> {
    for pt in band {
        let f = excitation_fidelity(excitation, pt);
        if f <= LUY_MIN_FIDELITY {
            return Err(SymmetryError::Precondition {
                fidelity: f,
                offset: pt.offset,
                required: LUY_MIN_FIDELITY,
            });
        }
    }
    let back = partner(excitation, SymmetryKind::OrderPhaseReverse);
    let mut out = concat(excitation, &back)?;
    out.name = format!("{}_luy180", excitation.name);
    Ok(out)
}
