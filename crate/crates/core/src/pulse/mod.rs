//! Piecewise-constant RF waveforms, classical shape generators and
//! on-resonance field calibration.

pub mod tables;

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagation::{propagator, EvalPoint};
use crate::su2::Hermitian2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("pulse has no segments")]
    Empty,
    #[error("segment {index} amplitude {value} outside [0, 1]")]
    Amplitude { index: usize, value: f64 },
    #[error("duration must be positive, got {0}")]
    Duration(f64),
    #[error("peak field must be finite and non-negative, got {0}")]
    PeakField(f64),
    #[error("unknown shape kind '{0}'")]
    UnknownKind(String),
    #[error("shape needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("CHIRP needs a positive sweep width and n >= 1")]
    ChirpParams,
    #[error("{0} has no built-in waveform; supply a table")]
    MissingTable(ShapeKind),
    #[error("calibration target {0} outside [-1, 1]")]
    Target(f64),
    #[error("no field below {bound_hz} Hz reached the target (best residual {best_residual:.3e} at {best_field:.3} Hz)")]
    CalibrationFailed {
        bound_hz: f64,
        best_field: f64,
        best_residual: f64,
    },
}

/// One constant-field element of a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Fraction of the peak field, in `[0, 1]`.
    pub amplitude: f64,
    /// RF phase in radians.
    pub phase: f64,
}

impl Segment {
    pub fn new(amplitude: f64, phase: f64) -> Self {
        Self { amplitude, phase }
    }
}

/// A piecewise-constant pulse with equal segment dwell times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub name: String,
    pub segments: Vec<Segment>,
    /// Peak RF field in Hz.
    pub peak_field: f64,
    /// Total duration in seconds.
    pub duration: f64,
}

impl PulseShape {
    pub fn new(
        name: impl Into<String>,
        segments: Vec<Segment>,
        peak_field: f64,
        duration: f64,
    ) -> Result<Self, PulseError> {
        let s = Self {
            name: name.into(),
            segments,
            peak_field,
            duration,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), PulseError> {
        if self.segments.is_empty() {
            return Err(PulseError::Empty);
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(PulseError::Duration(self.duration));
        }
        if !(self.peak_field >= 0.0) || !self.peak_field.is_finite() {
            return Err(PulseError::PeakField(self.peak_field));
        }
        for (index, s) in self.segments.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.amplitude) {
                return Err(PulseError::Amplitude {
                    index,
                    value: s.amplitude,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segment dwell time `T / N` in seconds.
    pub fn dwell(&self) -> f64 {
        self.duration / self.segments.len() as f64
    }

    /// Peak nutation rate in rad/s.
    pub fn omega_max(&self) -> f64 {
        TAU * self.peak_field
    }

    pub fn with_peak_field(mut self, hz: f64) -> Self {
        self.peak_field = hz;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Front and back halves, each with half the duration. Requires an even
    /// number of segments.
    pub fn split_half(&self) -> Option<(PulseShape, PulseShape)> {
        let n = self.segments.len();
        if !n.is_multiple_of(2) {
            return None;
        }
        let h = n / 2;
        let half = |segs: &[Segment], tag: &str| PulseShape {
            name: format!("{}_{tag}", self.name),
            segments: segs.to_vec(),
            peak_field: self.peak_field,
            duration: 0.5 * self.duration,
        };
        Some((
            half(&self.segments[..h], "front"),
            half(&self.segments[h..], "back"),
        ))
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Adds `delta` to every segment phase. Equivalent to conjugating the
/// propagator by `Z(δ)`.
pub fn phase_shift(shape: &PulseShape, delta: f64) -> PulseShape {
    let mut out = shape.clone();
    for s in &mut out.segments {
        s.phase = wrap_phase(s.phase + delta);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeKind {
    Hard,
    Eburp1,
    Reburp,
    Pc9,
    BestPc9,
    Q3,
    Q5,
    Chirp,
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ShapeKind::Hard => "HARD",
            ShapeKind::Eburp1 => "EBURP1",
            ShapeKind::Reburp => "REBURP",
            ShapeKind::Pc9 => "PC9",
            ShapeKind::BestPc9 => "BESTPC9",
            ShapeKind::Q3 => "Q3",
            ShapeKind::Q5 => "Q5",
            ShapeKind::Chirp => "CHIRP",
        };
        f.write_str(s)
    }
}

impl FromStr for ShapeKind {
    type Err = PulseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "HARD" | "RECT" => ShapeKind::Hard,
            "EBURP1" | "EBURP" => ShapeKind::Eburp1,
            "REBURP" | "REBURP1" => ShapeKind::Reburp,
            "PC9" => ShapeKind::Pc9,
            "BESTPC9" => ShapeKind::BestPc9,
            "Q3" => ShapeKind::Q3,
            "Q5" => ShapeKind::Q5,
            "CHIRP" => ShapeKind::Chirp,
            _ => return Err(PulseError::UnknownKind(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpParams {
    /// Sweep width in Hz.
    pub sweep: f64,
    /// Amplitude ramp factor; the edges rise over `T / n`.
    pub n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecipe {
    pub kind: ShapeKind,
    pub n_points: usize,
    /// Seconds.
    pub duration: f64,
    pub chirp: Option<ChirpParams>,
    /// Waveform for kinds without a built-in formula (PC9, BESTPC9). Resampled
    /// to the requested number of points.
    pub table: Option<Vec<Segment>>,
}

impl ShapeRecipe {
    pub fn new(kind: ShapeKind, n_points: usize, duration: f64) -> Self {
        Self {
            kind,
            n_points,
            duration,
            chirp: None,
            table: None,
        }
    }

    pub fn with_chirp(mut self, sweep: f64, n: f64) -> Self {
        self.chirp = Some(ChirpParams { sweep, n });
        self
    }

    pub fn with_table(mut self, table: Vec<Segment>) -> Self {
        self.table = Some(table);
        self
    }
}

fn midpoints(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| (i as f64 + 0.5) / n as f64)
}

/// Real waveform to amplitude/phase with sign carried as a phase of π.
fn signed_to_segments(f: &[f64]) -> Vec<Segment> {
    let max = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max = if max > 0.0 { max } else { 1.0 };
    f.iter()
        .map(|&v| Segment::new(v.abs() / max, if v < 0.0 { PI } else { 0.0 }))
        .collect()
}

/// Piecewise-constant resampling of a table onto `n` segments.
pub fn resample(table: &[Segment], n: usize) -> Vec<Segment> {
    let m = table.len();
    midpoints(n)
        .map(|x| table[((x * m as f64).floor() as usize).min(m - 1)])
        .collect()
}

fn normalize_amplitudes(segs: &mut [Segment]) {
    let max = segs.iter().fold(0.0f64, |m, s| m.max(s.amplitude));
    if max > 0.0 {
        for s in segs {
            s.amplitude /= max;
        }
    }
}

fn chirp_segments(n_points: usize, duration: f64, p: &ChirpParams) -> Vec<Segment> {
    let h = n_points / 2;
    let mut front: Vec<Segment> = (0..h)
        .map(|i| {
            let g = i as f64 * duration / n_points as f64;
            let ramp = (PI * g * p.n / (2.0 * duration)).min(FRAC_PI_2);
            let phase_deg = (1.0 - g / duration) * g * (p.sweep / 2.0) * 360.0;
            Segment::new(ramp.sin(), wrap_phase(phase_deg.to_radians()))
        })
        .collect();
    let mut back = front.clone();
    back.reverse();
    if n_points % 2 == 1 {
        front.push(*back.first().unwrap_or(&Segment::new(1.0, 0.0)));
    }
    front.extend(back);
    normalize_amplitudes(&mut front);
    front
}

/// Builds the segment list for a recipe. The peak field is left at zero; set
/// it directly or through [`calibrate_b1`].
pub fn generate_shape(recipe: &ShapeRecipe) -> Result<PulseShape, PulseError> {
    let n = recipe.n_points;
    if n < 2 {
        return Err(PulseError::TooFewPoints(n));
    }
    if !(recipe.duration > 0.0) {
        return Err(PulseError::Duration(recipe.duration));
    }
    let segments = match recipe.kind {
        ShapeKind::Hard => vec![Segment::new(1.0, 0.0); n],
        ShapeKind::Eburp1 => {
            let f: Vec<f64> = midpoints(n)
                .map(|x| tables::fourier(x, &tables::EBURP1_A, &tables::EBURP1_B))
                .collect();
            signed_to_segments(&f)
        }
        ShapeKind::Reburp => {
            let f: Vec<f64> = midpoints(n)
                .map(|x| tables::fourier(x, &tables::REBURP_A, &[]))
                .collect();
            signed_to_segments(&f)
        }
        ShapeKind::Q5 => {
            let f: Vec<f64> = midpoints(n).map(|x| tables::Q5.eval(x)).collect();
            signed_to_segments(&f)
        }
        ShapeKind::Q3 => {
            let f: Vec<f64> = midpoints(n).map(|x| tables::Q3.eval(x)).collect();
            signed_to_segments(&f)
        }
        ShapeKind::Chirp => {
            let p = recipe.chirp.ok_or(PulseError::ChirpParams)?;
            if !(p.sweep > 0.0) || !(p.n >= 1.0) {
                return Err(PulseError::ChirpParams);
            }
            chirp_segments(n, recipe.duration, &p)
        }
        ShapeKind::Pc9 => {
            let table = recipe
                .table
                .as_ref()
                .filter(|t| !t.is_empty())
                .ok_or(PulseError::MissingTable(ShapeKind::Pc9))?;
            let mut s = resample(table, n);
            normalize_amplitudes(&mut s);
            s
        }
        ShapeKind::BestPc9 => {
            let table = recipe
                .table
                .as_ref()
                .filter(|t| !t.is_empty())
                .ok_or(PulseError::MissingTable(ShapeKind::BestPc9))?;
            let h = n / 2;
            let pc9 = resample(table, n - h);
            let mut s: Vec<Segment> = resample(table, h).into_iter().rev().collect();
            s.extend(pc9);
            normalize_amplitudes(&mut s);
            s
        }
    };
    PulseShape::new(recipe.kind.to_string(), segments, 0.0, recipe.duration)
}

/// Cartesian spin operator used as a calibration start or finish state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CartesianOp {
    Ix,
    Iy,
    Iz,
}

impl CartesianOp {
    pub fn operator(self) -> Hermitian2 {
        match self {
            CartesianOp::Ix => Hermitian2::ix(),
            CartesianOp::Iy => Hermitian2::iy(),
            CartesianOp::Iz => Hermitian2::iz(),
        }
    }
}

impl FromStr for CartesianOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ix" => Ok(CartesianOp::Ix),
            "iy" => Ok(CartesianOp::Iy),
            "iz" => Ok(CartesianOp::Iz),
            _ => Err(format!("unknown operator '{s}'")),
        }
    }
}

impl fmt::Display for CartesianOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CartesianOp::Ix => "Ix",
            CartesianOp::Iy => "Iy",
            CartesianOp::Iz => "Iz",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub start: CartesianOp,
    pub finish: CartesianOp,
    /// Required normalized expectation of `finish`, in `[-1, 1]`.
    pub target: f64,
    /// Upper bound of the field search in Hz.
    pub bound_hz: f64,
}

impl CalibrationSpec {
    pub const DEFAULT_BOUND_HZ: f64 = 10_000.0;

    pub fn new(start: CartesianOp, finish: CartesianOp, target: f64) -> Result<Self, PulseError> {
        if !(-1.0..=1.0).contains(&target) {
            return Err(PulseError::Target(target));
        }
        Ok(Self {
            start,
            finish,
            target,
            bound_hz: Self::DEFAULT_BOUND_HZ,
        })
    }

    pub fn with_bound(mut self, hz: f64) -> Self {
        self.bound_hz = hz;
        self
    }
}

/// Normalized `⟨finish⟩` after the shape acts on resonance on `start` with
/// the given peak field.
pub fn on_resonance_expectation(shape: &PulseShape, field_hz: f64, spec: &CalibrationSpec) -> f64 {
    let s = PulseShape {
        peak_field: field_hz,
        ..shape.clone()
    };
    let v = propagator(&s, &EvalPoint::on_resonance());
    let rho = v.conjugate(&spec.start.operator());
    let fin = spec.finish.operator();
    rho.overlap(&fin) / fin.overlap(&fin)
}

const CALIBRATION_GRID: usize = 64;
const CALIBRATION_TOL: f64 = 1e-4;
const CALIBRATION_ACCEPT: f64 = 1e-3;

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > 1e-9 * hi.max(1.0) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Finds the smallest peak field (Hz) that makes the shape perform the
/// requested transformation on resonance.
///
/// A uniform grid over `(0, bound]` locates local minima of the residual
/// `|⟨finish⟩ - target|`, which are refined in ascending field order by
/// golden-section search. If no grid minimum refines below the tolerance
/// the grid is densified (up to 64× finer) before giving up.
pub fn calibrate_b1(shape: &PulseShape, spec: &CalibrationSpec) -> Result<f64, PulseError> {
    if !(-1.0..=1.0).contains(&spec.target) {
        return Err(PulseError::Target(spec.target));
    }
    let residual = |w: f64| (on_resonance_expectation(shape, w, spec) - spec.target).abs();
    let mut best = (f64::NAN, f64::INFINITY);
    let mut points = CALIBRATION_GRID;
    while points <= CALIBRATION_GRID * 64 {
        let step = spec.bound_hz / points as f64;
        let grid: Vec<f64> = (0..=points).map(|i| i as f64 * step).collect();
        let res: Vec<f64> = grid.par_iter().map(|&w| residual(w)).collect();
        for i in 1..=points {
            let left = res[i - 1];
            let right = if i < points {
                res[i + 1]
            } else {
                f64::INFINITY
            };
            if res[i] <= left && res[i] <= right {
                let lo = grid[i - 1];
                let hi = (grid[i] + step).min(spec.bound_hz);
                let (w, r) = golden_min(residual, lo, hi);
                if r < best.1 {
                    best = (w, r);
                }
                if r < CALIBRATION_TOL {
                    return Ok(w);
                }
            }
        }
        points *= 4;
    }
    if best.1 < CALIBRATION_ACCEPT {
        Ok(best.0)
    } else {
        Err(PulseError::CalibrationFailed {
            bound_hz: spec.bound_hz,
            best_field: best.0,
            best_residual: best.1,
        })
    }
}
