//! Ensemble infidelity and its exact gradient with respect to segment
//! amplitudes and phases.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::target::{reburp_half_target, TargetAt, TargetSpec};
use crate::propagation::{ppm_to_rad, EvalPoint};
use crate::pulse::PulseShape;
use crate::su2::{overlap, Hermitian2, Unitary2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("ensemble needs at least one offset")]
    NoOffsets,
    #[error("ensemble needs at least one B1 scale")]
    NoScales,
    #[error("B1 weights must be non-negative and sum to 1 (sum {0})")]
    Weights(f64),
    #[error("B1 scale must be positive, got {0}")]
    Scale(f64),
}

/// Offsets × B1 scales with weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub offsets_ppm: Vec<f64>,
    /// `(scale, weight)` rows; weights sum to 1.
    pub b1: Vec<(f64, f64)>,
    pub frq_mhz: f64,
    pub carrier_ppm: f64,
}

impl EnsembleSpec {
    pub fn new(
        offsets_ppm: Vec<f64>,
        b1: Vec<(f64, f64)>,
        frq_mhz: f64,
        carrier_ppm: f64,
    ) -> Result<Self, EnsembleError> {
        let e = Self {
            offsets_ppm,
            b1,
            frq_mhz,
            carrier_ppm,
        };
        e.validate()?;
        Ok(e)
    }

    /// Uniform grid of `n` offsets over `[lo, hi]` ppm.
    pub fn band(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n <= 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    /// Equal weights over the given scales.
    pub fn uniform_b1(scales: &[f64]) -> Vec<(f64, f64)> {
        let w = 1.0 / scales.len() as f64;
        scales.iter().map(|&s| (s, w)).collect()
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.offsets_ppm.is_empty() {
            return Err(EnsembleError::NoOffsets);
        }
        if self.b1.is_empty() {
            return Err(EnsembleError::NoScales);
        }
        let mut sum = 0.0;
        for &(s, w) in &self.b1 {
            if !(s > 0.0) {
                return Err(EnsembleError::Scale(s));
            }
            if !(w >= 0.0) {
                return Err(EnsembleError::Weights(w));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(EnsembleError::Weights(sum));
        }
        Ok(())
    }

    pub fn offset_rad(&self, ppm: f64) -> f64 {
        ppm_to_rad(ppm, self.carrier_ppm, self.frq_mhz)
    }

    /// Evaluation points with weights summing to one, offset-major order.
    pub fn points(&self) -> Vec<(EvalPoint, f64)> {
        let n = self.offsets_ppm.len() as f64;
        self.offsets_ppm
            .iter()
            .flat_map(|&ppm| {
                let off = self.offset_rad(ppm);
                self.b1
                    .iter()
                    .map(move |&(s, w)| (EvalPoint::new(off, s), w / n))
            })
            .collect()
    }
}

/// Per-point fidelity of a propagator against a resolved target. State
/// targets use normalized operators so every fidelity lies in `[-1, 1]`.
pub fn point_fidelity(v: &Unitary2, target: &TargetAt) -> f64 {
    match target {
        TargetAt::Unitary(u) => overlap(v, u).norm_sqr(),
        TargetAt::State { initial, target } => {
            let rho = v.conjugate(initial);
            rho.overlap(target) / (target.overlap(target).sqrt() * initial.overlap(initial).sqrt())
        }
        TargetAt::Xy { initial } => {
            let c = v.conjugate(initial).cartesian();
            let n = initial.overlap(initial) * 2.0;
            (c[0] * c[0] + c[1] * c[1]) / n
        }
    }
}

type M2 = [[C64; 2]; 2];

#[inline]
fn mm(a: &M2, b: &M2) -> M2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

#[inline]
fn scale(a: &M2, s: C64) -> M2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

#[inline]
fn adj(a: &M2) -> M2 {
    [
        [a[0][0].conj(), a[1][0].conj()],
        [a[0][1].conj(), a[1][1].conj()],
    ]
}

/// `(Φ, L)` with `dΦ = Re Tr(L dV)`.
fn fidelity_and_left(v: &Unitary2, target: &TargetAt) -> (f64, M2) {
    match target {
        TargetAt::Unitary(u) => {
            let g = overlap(v, u);
            (g.norm_sqr(), scale(&adj(&u.m), g.conj()))
        }
        TargetAt::State { initial, target } => {
            let norm = target.overlap(target).sqrt() * initial.overlap(initial).sqrt();
            let rho = v.conjugate(initial);
            let phi = rho.overlap(target) / norm;
            let l = mm(&mm(&initial.m, &adj(&v.m)), &target.m);
            (phi, scale(&l, C64::new(2.0 / norm, 0.0)))
        }
        TargetAt::Xy { initial } => {
            let n = initial.overlap(initial) * 2.0;
            let c = v.conjugate(initial).cartesian();
            let phi = (c[0] * c[0] + c[1] * c[1]) / n;
            // dx = 4 Re Tr(ρ V† I_x dV) for x = 2 Tr(I_x V ρ V†).
            let o = Hermitian2::from_cartesian(c[0], c[1], 0.0);
            let l = mm(&mm(&initial.m, &adj(&v.m)), &o.m);
            (phi, scale(&l, C64::new(8.0 / n, 0.0)))
        }
    }
}

/// Derivatives of one segment propagator with respect to its phase and its
/// amplitude fraction.
struct SegmentDerivs {
    v: Unitary2,
    d_phase: M2,
    d_amp: M2,
}

#[inline]
fn segment_derivs(w: f64, amp: f64, phase: f64, offset: f64, t: f64) -> SegmentDerivs {
    let (sp, cp) = phase.sin_cos();
    let (hx, hy, hz) = (w * amp * cp, w * amp * sp, offset);
    let h2 = hx * hx + hy * hy + hz * hz;
    let h = h2.sqrt();
    let theta = 0.5 * h * t;
    // g1 = sin θ / |h|, g2 = (θ cos θ - sin θ) / |h|³
    let (g1, g2) = if theta < 1e-4 {
        (
            0.5 * t * (1.0 - theta * theta / 6.0),
            -t * t * t / 24.0 * (1.0 - theta * theta / 10.0),
        )
    } else {
        let (s, c) = theta.sin_cos();
        (s / h, (theta * c - s) / (h2 * h))
    };
    let v = Unitary2::su2(C64::new(theta.cos(), -g1 * hz), C64::new(g1 * hy, -g1 * hx));
    let beta = v.m[1][0];
    let i = C64::new(0.0, 1.0);
    // dV/dφ = -i [I_z, V]
    let d_phase = [
        [C64::new(0.0, 0.0), i * beta.conj()],
        [i * beta, C64::new(0.0, 0.0)],
    ];
    // dV/du = Σ_j dV/dh_j · w (cos φ, sin φ, 0)_j
    let (ex, ey) = (w * cp, w * sp);
    let he = hx * ex + hy * ey;
    let e0 = -0.5 * t * g1 * he;
    let k = g2 * he;
    // -i [k (h·σ) + g1 (e·σ)]
    let sx = k * hx + g1 * ex;
    let sy = k * hy + g1 * ey;
    let sz = k * hz;
    let d_amp = [
        [C64::new(e0, -sz), C64::new(-sy, -sx)],
        [C64::new(sy, -sx), C64::new(e0, sz)],
    ];
    SegmentDerivs { v, d_phase, d_amp }
}

#[inline]
fn re_tr(a: &M2, b: &M2) -> f64 {
    (a[0][0] * b[0][0] + a[0][1] * b[1][0] + a[1][0] * b[0][1] + a[1][1] * b[1][1]).re
}

/// Infidelity and gradients for one evaluation point.
#[derive(Debug, Clone, PartialEq)]
struct PointResult {
    infidelity: f64,
    d_phase: Vec<f64>,
    d_amp: Vec<f64>,
}

/// Half-time scoring in REBURP mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfScore {
    pub ev_alpha: f64,
    pub ev_beta: f64,
}

fn point_cost(
    shape: &PulseShape,
    target: &TargetAt,
    half: Option<&Unitary2>,
    pt: &EvalPoint,
    with_grad: bool,
) -> PointResult {
    let n = shape.segments.len();
    let t = shape.dwell();
    let w = pt.b1_scale * shape.omega_max();
    let segs: Vec<SegmentDerivs> = shape
        .segments
        .iter()
        .map(|s| segment_derivs(w, s.amplitude, s.phase, pt.offset, t))
        .collect();
    let mut fwd = Vec::with_capacity(n + 1);
    fwd.push(Unitary2::IDENTITY);
    for s in &segs {
        let last = *fwd.last().unwrap();
        fwd.push(s.v * last);
    }
    let (phi, left) = fidelity_and_left(&fwd[n], target);
    let mut infidelity = 1.0 - phi;
    let mut d_phase = vec![0.0; if with_grad { n } else { 0 }];
    let mut d_amp = vec![0.0; if with_grad { n } else { 0 }];
    if with_grad {
        let mut m = left;
        for k in (0..n).rev() {
            let g = mm(&fwd[k].m, &m);
            d_phase[k] -= re_tr(&g, &segs[k].d_phase);
            d_amp[k] -= re_tr(&g, &segs[k].d_amp);
            m = mm(&m, &segs[k].v.m);
        }
    }
    if let Some(u_half) = half {
        let h = n / 2;
        let (phi_h, left_h) = fidelity_and_left(&fwd[h], &TargetAt::Unitary(*u_half));
        infidelity += 1.0 - phi_h;
        if with_grad {
            let mut m = left_h;
            for k in (0..h).rev() {
                let g = mm(&fwd[k].m, &m);
                d_phase[k] -= re_tr(&g, &segs[k].d_phase);
                d_amp[k] -= re_tr(&g, &segs[k].d_amp);
                m = mm(&m, &segs[k].v.m);
            }
        }
    }
    PointResult {
        infidelity,
        d_phase,
        d_amp,
    }
}

/// Weighted ensemble infidelity with gradients per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGradient {
    pub infidelity: f64,
    pub d_phase: Vec<f64>,
    pub d_amplitude: Vec<f64>,
    /// Unweighted infidelity per ensemble point, in [`EnsembleSpec::points`] order.
    pub per_point: Vec<f64>,
}

/// Resolved targets for each ensemble point.
#[derive(Debug, Clone)]
pub struct Problem {
    pub points: Vec<(EvalPoint, f64)>,
    targets: Vec<TargetAt>,
    halves: Option<Vec<Unitary2>>,
}

impl Problem {
    pub fn new(
        spec: &TargetSpec,
        ens: &EnsembleSpec,
        duration: f64,
        half: Option<HalfScore>,
    ) -> Self {
        let points = ens.points();
        let targets = points
            .iter()
            .map(|(pt, _)| spec.at(pt.offset, duration))
            .collect();
        let halves = half.map(|h| {
            points
                .iter()
                .map(|(pt, _)| reburp_half_target(h.ev_alpha, h.ev_beta, pt.offset, duration))
                .collect()
        });
        Self {
            points,
            targets,
            halves,
        }
    }

    pub fn evaluate(&self, shape: &PulseShape, with_grad: bool) -> CostGradient {
        let results: Vec<PointResult> = (0..self.points.len())
            .into_par_iter()
            .map(|i| {
                point_cost(
                    shape,
                    &self.targets[i],
                    self.halves.as_ref().map(|h| &h[i]),
                    &self.points[i].0,
                    with_grad,
                )
            })
            .collect();
        let n = shape.segments.len();
        let mut out = CostGradient {
            infidelity: 0.0,
            d_phase: vec![0.0; if with_grad { n } else { 0 }],
            d_amplitude: vec![0.0; if with_grad { n } else { 0 }],
            per_point: Vec::with_capacity(results.len()),
        };
        for (r, (_, w)) in results.iter().zip(&self.points) {
            out.infidelity += w * r.infidelity;
            out.per_point.push(r.infidelity);
            if with_grad {
                for k in 0..n {
                    out.d_phase[k] += w * r.d_phase[k];
                    out.d_amplitude[k] += w * r.d_amp[k];
                }
            }
        }
        out
    }
}

/// Ensemble infidelity and exact gradients for a shape. With `half` set the
/// front half is also scored against the REBURP-mode half target, with equal
/// weight.
pub fn cost_and_gradient(
    shape: &PulseShape,
    spec: &TargetSpec,
    ens: &EnsembleSpec,
    half: Option<HalfScore>,
) -> CostGradient {
    Problem::new(spec, ens, shape.duration, half).evaluate(shape, true)
}

/// One row of a score table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointScore {
    pub point: EvalPoint,
    pub weight: f64,
    pub fidelity: f64,
}

/// Per-point fidelities without gradients.
pub fn score_pulse(shape: &PulseShape, spec: &TargetSpec, ens: &EnsembleSpec) -> Vec<PointScore> {
    let pts = ens.points();
    pts.par_iter()
        .map(|(pt, w)| {
            let v = crate::propagation::propagator(shape, pt);
            PointScore {
                point: *pt,
                weight: *w,
                fidelity: point_fidelity(&v, &spec.at(pt.offset, shape.duration)),
            }
        })
        .collect()
}
