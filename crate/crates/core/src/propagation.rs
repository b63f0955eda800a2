//! Single-spin propagators, the evolution operator `p`, schematic parameter
//! extraction and offset sweeps.
//!
//! The evolution operator is `p = (i/T) V† dV/dΩ`. For a propagator in
//! schematic form `V = Z(bΩT) U Z(aΩT)` it equals `a I_z + b Z(aΩT)† U† I_z U Z(aΩT)`,
//! which is what [`extract_schematic`] inverts.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pulse::PulseShape;
use crate::su2::{
    axis_angle_of, project, rot_unchecked, unitary_fidelity, AxisAngle, Hermitian2, Unitary2,
};

/// Singularity threshold on `u_ψ` and `u_θ`, radians.
pub const SINGULAR_EPS: f64 = 0.05;

/// Converts a chemical shift (ppm) to an angular offset (rad/s) at the given
/// Larmor frequency (MHz), relative to a carrier (ppm).
pub fn ppm_to_rad(ppm: f64, carrier_ppm: f64, frq_mhz: f64) -> f64 {
    TAU * (ppm - carrier_ppm) * frq_mhz
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Resonance offset in rad/s.
    pub offset: f64,
    /// Fraction of the nominal peak field.
    pub b1_scale: f64,
}

impl EvalPoint {
    pub fn new(offset: f64, b1_scale: f64) -> Self {
        debug_assert!(b1_scale > 0.0);
        Self { offset, b1_scale }
    }

    pub fn on_resonance() -> Self {
        Self::new(0.0, 1.0)
    }

    pub fn at_offset(offset: f64) -> Self {
        Self::new(offset, 1.0)
    }
}

/// Exact propagator of one rectangular element,
/// `exp(-i t (ω (cos φ I_x + sin φ I_y) + Ω I_z))`, with `ω` and `Ω` in rad/s.
#[inline]
pub fn segment_unitary(omega: f64, phase: f64, offset: f64, t: f64) -> Unitary2 {
    let (sp, cp) = phase.sin_cos();
    let hx = omega * cp;
    let hy = omega * sp;
    let h = (omega * omega + offset * offset).sqrt();
    if h == 0.0 {
        return Unitary2::IDENTITY;
    }
    rot_unchecked([hx / h, hy / h, offset / h], h * t)
}

/// Propagator `V = V_N ⋯ V_1` of a shaped pulse.
pub fn propagator(shape: &PulseShape, pt: &EvalPoint) -> Unitary2 {
    let t = shape.dwell();
    let w = pt.b1_scale * shape.omega_max();
    shape.segments.iter().fold(Unitary2::IDENTITY, |acc, s| {
        segment_unitary(w * s.amplitude, s.phase, pt.offset, t) * acc
    })
}

/// Dimensionless evolution vector `(p_x, p_y, p_z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EvolutionVector {
    pub fn from_hermitian(h: &Hermitian2) -> Self {
        let [x, y, z] = h.cartesian();
        Self { x, y, z }
    }

    pub fn to_hermitian(&self) -> Hermitian2 {
        Hermitian2::from_cartesian(self.x, self.y, self.z)
    }

    /// Transverse magnitude `p_R`.
    pub fn transverse(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// `(1 - sinc ψ) / ψ²` and `(1 - cos ψ) / ψ²` with series limits near zero.
#[inline]
fn p_kernels(psi: f64) -> (f64, f64, f64) {
    if psi.abs() < 1e-3 {
        let p2 = psi * psi;
        let sinc = 1.0 - p2 / 6.0 + p2 * p2 / 120.0;
        (sinc, 1.0 / 6.0 - p2 / 120.0, 0.5 - p2 / 24.0)
    } else {
        let sinc = psi.sin() / psi;
        let p2 = psi * psi;
        (sinc, (1.0 - sinc) / p2, (1.0 - psi.cos()) / p2)
    }
}

/// Evolution operator `(i/t) V† dV/dΩ` of a single rectangular element.
/// `omega` and `offset` are in rad/s, `t` in seconds.
pub fn segment_p(omega: f64, phase: f64, offset: f64, t: f64) -> Hermitian2 {
    let [x, y, z] = segment_p_vec(omega, phase, offset, t);
    Hermitian2::from_cartesian(x, y, z)
}

#[inline]
pub(crate) fn segment_p_vec(omega: f64, phase: f64, offset: f64, t: f64) -> [f64; 3] {
    let h2 = omega * omega + offset * offset;
    let psi = t * h2.sqrt();
    let (sinc, k1, k2) = p_kernels(psi);
    let px0 = t * t * omega * offset * k1;
    let py0 = t * omega * k2;
    let pz0 = if h2 > 0.0 {
        (offset * offset + omega * omega * sinc) / h2
    } else {
        1.0
    };
    let (s, c) = phase.sin_cos();
    [c * px0 - s * py0, s * px0 + c * py0, pz0]
}

/// Rotates the Cartesian vector of `Q` into `V† Q V`.
#[inline]
pub(crate) fn adjoint_rotate(v: &Unitary2, q: [f64; 3]) -> [f64; 3] {
    let h = Hermitian2::from_cartesian(q[0], q[1], q[2]);
    v.adjoint().conjugate(&h).cartesian()
}

/// Propagator and evolution vector in one pass. `p` follows the backward
/// recursion `Q_k = V_k† Q_{k+1} V_k + p_k`, `p = Q_1 / N`.
pub fn propagate_with_p(shape: &PulseShape, pt: &EvalPoint) -> (Unitary2, EvolutionVector) {
    let t = shape.dwell();
    let w = pt.b1_scale * shape.omega_max();
    let mut v = Unitary2::IDENTITY;
    let mut q = [0.0; 3];
    for s in shape.segments.iter().rev() {
        let vk = segment_unitary(w * s.amplitude, s.phase, pt.offset, t);
        let pk = segment_p_vec(w * s.amplitude, s.phase, pt.offset, t);
        let r = adjoint_rotate(&vk, q);
        q = [r[0] + pk[0], r[1] + pk[1], r[2] + pk[2]];
        v = v * vk;
    }
    let n = shape.segments.len() as f64;
    (
        v,
        EvolutionVector {
            x: q[0] / n,
            y: q[1] / n,
            z: q[2] / n,
        },
    )
}

pub fn evolution_operator(shape: &PulseShape, pt: &EvalPoint) -> EvolutionVector {
    propagate_with_p(shape, pt).1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Singularity {
    Ok,
    /// Central rotation close to 180° about an axis in the xy plane.
    Near180Xy,
    /// Central rotation close to the identity (or a pure z rotation).
    NearIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchematicParams {
    pub a: f64,
    pub b: f64,
    pub u_psi: f64,
    pub u_theta: f64,
    pub u_phi: f64,
    pub singular: Singularity,
}

impl SchematicParams {
    pub fn is_ok(&self) -> bool {
        self.singular == Singularity::Ok
    }

    pub fn central_rotation(&self) -> AxisAngle {
        AxisAngle::from_spherical(self.u_theta, self.u_phi, self.u_psi)
    }

    /// `Z(bΩT) U Z(aΩT)`.
    pub fn rebuild(&self, offset: f64, duration: f64) -> Unitary2 {
        let aa = self.central_rotation();
        let u = rot_unchecked(aa.axis, aa.angle);
        Unitary2::rz(self.b * offset * duration) * u * Unitary2::rz(self.a * offset * duration)
    }
}

/// Exact evolution vector of a schematic form, `a I_z + b Z_a† U† I_z U Z_a`.
pub fn schematic_p(a: f64, b: f64, u: &Unitary2, offset: f64, duration: f64) -> EvolutionVector {
    let uz = *u * Unitary2::rz(a * offset * duration);
    let [x, y, z] = adjoint_rotate(&uz, [0.0, 0.0, 1.0]);
    EvolutionVector {
        x: b * x,
        y: b * y,
        z: a + b * z,
    }
}

/// Inverts `(V, p)` into schematic parameters `(a, b, U)` for a pulse of
/// duration `duration` at offset `offset` (rad/s).
pub fn extract_schematic(
    v: &Unitary2,
    p: &EvolutionVector,
    offset: f64,
    duration: f64,
) -> SchematicParams {
    let vp = project(v);
    let (ix, iy) = (vp.x.im, vp.y.im);
    let vr2 = -(ix * ix + iy * iy);
    let pr = p.transverse();
    let den = -vr2 * (4.0 + vr2);
    let b = if den > 1e-300 {
        2.0 * pr / den.sqrt()
    } else {
        0.0
    };
    let b = if b.is_finite() { b } else { 0.0 };
    let a = p.z - 0.5 * b * (2.0 + vr2);
    let wt = offset * duration;
    let u_phi = wrap(0.5 * wt * (a - b) - iy.atan2(-ix));
    let c = C64::from_polar(1.0, 0.5 * (a + b) * wt) * (vp.e + 0.5 * vp.z);
    let u_psi = 2.0 * c.re.clamp(-1.0, 1.0).acos();
    let sh = (0.5 * u_psi).sin();
    let u_theta = if sh > 1e-12 {
        (-c.im / sh).clamp(-1.0, 1.0).acos()
    } else {
        0.0
    };
    let singular = if u_psi.min(TAU - u_psi) < SINGULAR_EPS || vr2.abs() < 1e-9 {
        Singularity::NearIdentity
    } else if ((u_psi - PI).abs() < SINGULAR_EPS && (u_theta - FRAC_PI_2).abs() < SINGULAR_EPS)
        || (4.0 + vr2).abs() < 1e-9
    {
        Singularity::Near180Xy
    } else {
        Singularity::Ok
    };
    SchematicParams {
        a,
        b,
        u_psi,
        u_theta,
        u_phi,
        singular,
    }
}

fn wrap(x: f64) -> f64 {
    crate::pulse::wrap_phase(x)
}

/// Schematic analysis of a whole pulse at one evaluation point.
pub fn analyze(shape: &PulseShape, pt: &EvalPoint) -> SchematicParams {
    let (v, p) = propagate_with_p(shape, pt);
    extract_schematic(&v, &p, pt.offset, shape.duration)
}

/// Two-halves analysis `V = Z(cΩT) U₂ Z(bΩT) U₁ Z(aΩT)`, fractions of the
/// full duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfAnalysis {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub u1: AxisAngle,
    pub u2: AxisAngle,
    pub front: Singularity,
    pub back: Singularity,
}

impl HalfAnalysis {
    pub fn is_ok(&self) -> bool {
        self.front == Singularity::Ok && self.back == Singularity::Ok
    }

    pub fn rebuild(&self, offset: f64, duration: f64) -> Unitary2 {
        let wt = offset * duration;
        Unitary2::rz(self.c * wt)
            * rot_unchecked(self.u2.axis, self.u2.angle)
            * Unitary2::rz(self.b * wt)
            * rot_unchecked(self.u1.axis, self.u1.angle)
            * Unitary2::rz(self.a * wt)
    }
}

/// Splits the pulse at the half-way point and analyses each half. Returns
/// `None` for an odd number of segments.
pub fn analyze_half(shape: &PulseShape, pt: &EvalPoint) -> Option<HalfAnalysis> {
    let (front, back) = shape.split_half()?;
    let f = analyze(&front, pt);
    let k = analyze(&back, pt);
    Some(HalfAnalysis {
        a: 0.5 * f.a,
        b: 0.5 * (f.b + k.a),
        c: 0.5 * k.b,
        u1: f.central_rotation(),
        u2: k.central_rotation(),
        front: f.singular,
        back: k.singular,
    })
}

/// An offset band (rad/s, inclusive) over which schematic constancy is judged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo.min(self.hi) - 1e-9 && x <= self.hi.max(self.lo) + 1e-9
    }
}

/// Thresholds for the band-schematic verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictThresholds {
    /// Largest allowed deviation of each delay fraction from its band mean.
    pub max_delay_dev: f64,
    /// Smallest allowed fidelity of each central rotation to the band mean.
    pub min_rotation_fidelity: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        Self {
            max_delay_dev: 0.01,
            min_rotation_fidelity: 1.0 - 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandVerdict {
    pub band: Band,
    pub band_schematic: bool,
    /// Band means of the delay fractions: `(a, b)` or `(a, b, c)` in half mode.
    pub mean_delays: Vec<f64>,
    pub max_delay_dev: Vec<f64>,
    pub min_rotation_fidelity: f64,
    pub singular_points: usize,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub point: EvalPoint,
    pub params: SchematicParams,
    pub rotation: AxisAngle,
    pub half: Option<HalfAnalysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSweepReport {
    pub entries: Vec<SweepEntry>,
    pub verdicts: Vec<BandVerdict>,
}

/// Quaternion `(w, x, y, z)` of an SU(2) matrix, `w = cos(ψ/2)`.
fn quaternion(u: &Unitary2) -> [f64; 4] {
    let p = project(&u.to_special());
    [p.e.re, -0.5 * p.x.im, -0.5 * p.y.im, -0.5 * p.z.im]
}

/// Sign-aligned quaternion average, normalized; the rotation analogue of a
/// mean.
pub fn mean_rotation(us: &[Unitary2]) -> Unitary2 {
    let Some(first) = us.first() else {
        return Unitary2::IDENTITY;
    };
    let q0 = quaternion(first);
    let mut acc = [0.0; 4];
    for u in us {
        let q = quaternion(u);
        let dot: f64 = q.iter().zip(&q0).map(|(a, b)| a * b).sum();
        let s = if dot < 0.0 { -1.0 } else { 1.0 };
        for k in 0..4 {
            acc[k] += s * q[k];
        }
    }
    let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    let q = acc.map(|x| x / n);
    Unitary2::su2(C64::new(q[0], -q[3]), C64::new(q[2], -q[1]))
}

fn judge(
    band: Band,
    delays: &[Vec<f64>],
    rotations: &[Unitary2],
    singular: usize,
    th: &VerdictThresholds,
) -> BandVerdict {
    let n = delays.len();
    let k = delays.first().map_or(0, |d| d.len());
    let mut mean = vec![0.0; k];
    for d in delays {
        for j in 0..k {
            mean[j] += d[j] / n as f64;
        }
    }
    let mut dev = vec![0.0f64; k];
    for d in delays {
        for j in 0..k {
            dev[j] = dev[j].max((d[j] - mean[j]).abs());
        }
    }
    let m = mean_rotation(rotations);
    let min_fid = rotations
        .iter()
        .map(|u| unitary_fidelity(u, &m))
        .fold(1.0f64, f64::min);
    let ok = n > 0
        && dev.iter().all(|&d| d < th.max_delay_dev)
        && min_fid > th.min_rotation_fidelity
        && dev.iter().all(|d| d.is_finite());
    BandVerdict {
        band,
        band_schematic: ok,
        mean_delays: mean,
        max_delay_dev: dev,
        min_rotation_fidelity: min_fid,
        singular_points: singular,
        points: n,
    }
}

/// Schematic analysis over an offset × B1 grid (offsets in rad/s), with a
/// band-schematic verdict per band. With `half` set, the verdict judges the
/// half-analysis delays `(a, b, c)` and the first-half rotation `U₁`, which is
/// the meaningful description for 180° pulses.
pub fn sweep_offsets(
    shape: &PulseShape,
    offsets: &[f64],
    b1_scales: &[f64],
    bands: &[Band],
    half: bool,
    thresholds: &VerdictThresholds,
) -> OffsetSweepReport {
    let points: Vec<EvalPoint> = offsets
        .iter()
        .flat_map(|&o| b1_scales.iter().map(move |&s| EvalPoint::new(o, s)))
        .collect();
    let entries: Vec<SweepEntry> = points
        .par_iter()
        .map(|pt| {
            let params = analyze(shape, pt);
            SweepEntry {
                point: *pt,
                params,
                rotation: params.central_rotation(),
                half: if half { analyze_half(shape, pt) } else { None },
            }
        })
        .collect();
    let verdicts = bands
        .iter()
        .map(|band| {
            let inside: Vec<&SweepEntry> = entries
                .iter()
                .filter(|e| band.contains(e.point.offset))
                .collect();
            let mut delays = Vec::with_capacity(inside.len());
            let mut rots = Vec::with_capacity(inside.len());
            let mut singular = 0;
            for e in &inside {
                match (half, e.half) {
                    (true, Some(h)) => {
                        delays.push(vec![h.a, h.b, h.c]);
                        rots.push(rot_unchecked(h.u1.axis, h.u1.angle));
                        singular += usize::from(!h.is_ok());
                    }
                    _ => {
                        delays.push(vec![e.params.a, e.params.b]);
                        rots.push(rot_unchecked(e.rotation.axis, e.rotation.angle));
                        singular += usize::from(!e.params.is_ok());
                    }
                }
            }
            judge(*band, &delays, &rots, singular, thresholds)
        })
        .collect();
    OffsetSweepReport { entries, verdicts }
}

/// Recovered central rotation of the whole propagator, for reports.
pub fn overall_rotation(shape: &PulseShape, pt: &EvalPoint) -> AxisAngle {
    axis_angle_of(&propagator(shape, pt)).rotation
}
