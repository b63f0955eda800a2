//! Weakly coupled spin-1/2 systems under one-channel-at-a-time sequences.
//!
//! A pulse on one channel is built block-diagonally: for every state of the
//! unpulsed spins, each pulsed spin sees a one-spin propagator at its offset
//! shifted by `Σ 2πJ m` over its unpulsed partners, and the unpulsed spins
//! contribute a commuting phase.

pub mod experiments;

use std::collections::HashSet;
use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagation::{propagator, EvalPoint};
use crate::pulse::{phase_shift, CartesianOp, PulseShape};
use crate::su2::{rot, AxisAngle, Su2Error, Unitary2};

pub use experiments::{
    a90x_family, delta_sweep, fit_sine, inept_hard, jinept, FitResult, JineptResult, SweepKind,
    SweepResult, S180,
};

/// Largest supported system.
pub const MAX_SPINS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("spin system has no spins")]
    Empty,
    #[error("too many spins ({0}), at most {MAX_SPINS}")]
    TooMany(usize),
    #[error("duplicate spin label '{0}'")]
    DuplicateLabel(String),
    #[error("duplicate channel '{0}'")]
    DuplicateChannel(String),
    #[error("unknown channel '{0}'")]
    UnknownChannel(String),
    #[error("unknown spin '{0}'")]
    UnknownSpin(String),
    #[error("spin '{0}' coupled to itself")]
    SelfCoupling(String),
    #[error("duplicate coupling between '{0}' and '{1}'")]
    DuplicateCoupling(String, String),
    #[error("channel '{0}' has non-positive Larmor frequency")]
    Frequency(String),
    #[error("spins '{0}' and '{1}' share the pulsed channel and are coupled")]
    CoupledOnPulsedChannel(String, String),
    #[error("system needs at least {0} spins")]
    NeedSpins(usize),
    #[error(transparent)]
    Rotation(#[from] Su2Error),
    #[error("invalid spin system JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    /// Larmor frequency, MHz.
    pub frq: f64,
    /// Carrier, ppm.
    #[serde(default)]
    pub carrier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinSpec {
    pub label: String,
    pub channel: String,
    pub ppm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub a: String,
    pub b: String,
    pub hz: f64,
}

/// Spins with per-channel Larmor frequencies and weak scalar couplings.
/// Weak coupling is assumed, not checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    pub channels: Vec<ChannelSpec>,
    pub spins: Vec<SpinSpec>,
    #[serde(default)]
    pub couplings: Vec<CouplingSpec>,
}

impl SpinSystem {
    pub fn from_json(text: &str) -> Result<Self, SpinError> {
        let sys: SpinSystem =
            serde_json::from_str(text).map_err(|e| SpinError::Json(e.to_string()))?;
        sys.validate()?;
        Ok(sys)
    }

    /// Heteronuclear pair `I` (channel `I`, 600 MHz) and `S` (channel `S`,
    /// 150.9 MHz), carriers at zero.
    pub fn two_spin(i_ppm: f64, s_ppm: f64, j_hz: f64) -> Self {
        Self {
            channels: vec![
                ChannelSpec {
                    name: "I".into(),
                    frq: 600.0,
                    carrier: 0.0,
                },
                ChannelSpec {
                    name: "S".into(),
                    frq: 150.9,
                    carrier: 0.0,
                },
            ],
            spins: vec![
                SpinSpec {
                    label: "I".into(),
                    channel: "I".into(),
                    ppm: i_ppm,
                },
                SpinSpec {
                    label: "S".into(),
                    channel: "S".into(),
                    ppm: s_ppm,
                },
            ],
            couplings: vec![CouplingSpec {
                a: "I".into(),
                b: "S".into(),
                hz: j_hz,
            }],
        }
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        if self.spins.is_empty() {
            return Err(SpinError::Empty);
        }
        if self.spins.len() > MAX_SPINS {
            return Err(SpinError::TooMany(self.spins.len()));
        }
        let mut names = HashSet::new();
        for c in &self.channels {
            if !names.insert(c.name.as_str()) {
                return Err(SpinError::DuplicateChannel(c.name.clone()));
            }
            if !(c.frq > 0.0) {
                return Err(SpinError::Frequency(c.name.clone()));
            }
        }
        let mut labels = HashSet::new();
        for s in &self.spins {
            if !labels.insert(s.label.as_str()) {
                return Err(SpinError::DuplicateLabel(s.label.clone()));
            }
            if !names.contains(s.channel.as_str()) {
                return Err(SpinError::UnknownChannel(s.channel.clone()));
            }
        }
        let mut pairs = HashSet::new();
        for c in &self.couplings {
            let a = self.index(&c.a)?;
            let b = self.index(&c.b)?;
            if a == b {
                return Err(SpinError::SelfCoupling(c.a.clone()));
            }
            if !pairs.insert((a.min(b), a.max(b))) {
                return Err(SpinError::DuplicateCoupling(c.a.clone(), c.b.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn dim(&self) -> usize {
        1 << self.spins.len()
    }

    pub fn index(&self, label: &str) -> Result<usize, SpinError> {
        self.spins
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| SpinError::UnknownSpin(label.into()))
    }

    pub fn channel(&self, name: &str) -> Result<&ChannelSpec, SpinError> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| SpinError::UnknownChannel(name.into()))
    }

    /// Offset of spin `k` from its channel carrier, rad/s.
    pub fn offset(&self, k: usize) -> Result<f64, SpinError> {
        let s = &self.spins[k];
        let c = self.channel(&s.channel)?;
        Ok(TAU * (s.ppm - c.carrier) * c.frq)
    }

    fn offsets(&self) -> Result<Vec<f64>, SpinError> {
        (0..self.len()).map(|k| self.offset(k)).collect()
    }

    /// Coupling constants in Hz, symmetric, zero diagonal.
    pub fn j_matrix(&self) -> Result<Vec<Vec<f64>>, SpinError> {
        let n = self.len();
        let mut j = vec![vec![0.0; n]; n];
        for c in &self.couplings {
            let (a, b) = (self.index(&c.a)?, self.index(&c.b)?);
            j[a][b] = c.hz;
            j[b][a] = c.hz;
        }
        Ok(j)
    }

    /// Spins on a channel.
    pub fn on_channel(&self, channel: &str) -> Result<Vec<usize>, SpinError> {
        self.channel(channel)?;
        Ok((0..self.len())
            .filter(|&k| self.spins[k].channel == channel)
            .collect())
    }
}

/// Largest entry modulus.
pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// `m_k` of spin `k` in basis state `idx`; spin 0 is the most significant bit
/// and bit value 0 is `m = +½`.
#[inline]
fn m_of(idx: usize, k: usize, n: usize) -> f64 {
    if (idx >> (n - 1 - k)) & 1 == 0 {
        0.5
    } else {
        -0.5
    }
}

#[inline]
fn bit(idx: usize, k: usize, n: usize) -> usize {
    (idx >> (n - 1 - k)) & 1
}

/// Diagonal energy of `H₀ = Σ Ω_k I_zk + Σ 2πJ I_zk I_zl` restricted to `spins`.
fn energy(idx: usize, spins: &[usize], offsets: &[f64], j: &[Vec<f64>], n: usize) -> f64 {
    let mut e = 0.0;
    for (p, &k) in spins.iter().enumerate() {
        let mk = m_of(idx, k, n);
        e += offsets[k] * mk;
        for &l in &spins[p + 1..] {
            e += TAU * j[k][l] * mk * m_of(idx, l, n);
        }
    }
    e
}

/// Product of single-spin Cartesian operators with its conventional
/// `2^(k−1)` scale, e.g. `2 I_z S_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductOp {
    pub factors: Vec<(usize, CartesianOp)>,
}

impl ProductOp {
    pub fn single(k: usize, op: CartesianOp) -> Self {
        Self {
            factors: vec![(k, op)],
        }
    }

    pub fn pair(k: usize, a: CartesianOp, l: usize, b: CartesianOp) -> Self {
        Self {
            factors: vec![(k, a), (l, b)],
        }
    }

    pub fn matrix(&self, n: usize) -> DMatrix<C64> {
        let d = 1 << n;
        let scale = 2f64.powi(self.factors.len() as i32 - 1);
        DMatrix::from_fn(d, d, |r, c| {
            let mut v = C64::new(scale, 0.0);
            for k in 0..n {
                let (br, bc) = (bit(r, k, n), bit(c, k, n));
                match self.factors.iter().find(|(s, _)| *s == k) {
                    Some((_, op)) => v *= op.operator().m[br][bc],
                    None if br != bc => return C64::new(0.0, 0.0),
                    None => {}
                }
            }
            v
        })
    }
}

/// `ρ = E/d + Δ`, stored as the traceless-part deviation `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    pub deviation: DMatrix<C64>,
}

impl DensityState {
    pub fn new(op: &ProductOp, n: usize) -> Self {
        Self {
            deviation: op.matrix(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.deviation.nrows()
    }

    pub fn trace(&self) -> f64 {
        1.0 + self.deviation.trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_abs(&(&self.deviation - self.deviation.adjoint()))
    }

    /// Coefficient of a product operator, `Tr(ΔB)/Tr(BB)`.
    pub fn coefficient(&self, op: &ProductOp) -> f64 {
        let n = self.dim().trailing_zeros() as usize;
        let b = op.matrix(n);
        (&self.deviation * &b).trace().re / (&b * &b).trace().re
    }

    pub fn transform(&self, u: &DMatrix<C64>) -> Self {
        Self {
            deviation: u * &self.deviation * u.adjoint(),
        }
    }
}

/// One element of a pulse sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum SequenceElement {
    Pulse {
        channel: String,
        shape: PulseShape,
        /// Added to every segment phase, radians.
        phase: f64,
    },
    Delay {
        tau: f64,
    },
    IdealRotation {
        channel: String,
        rotation: AxisAngle,
    },
}

/// Pulse propagator from the block-diagonal one-spin construction.
pub fn block_pulse_propagator(
    sys: &SpinSystem,
    channel: &str,
    shape: &PulseShape,
) -> Result<DMatrix<C64>, SpinError> {
    let n = sys.len();
    let pulsed = sys.on_channel(channel)?;
    let j = sys.j_matrix()?;
    for (p, &k) in pulsed.iter().enumerate() {
        for &l in &pulsed[p + 1..] {
            if j[k][l] != 0.0 {
                return Err(SpinError::CoupledOnPulsedChannel(
                    sys.spins[k].label.clone(),
                    sys.spins[l].label.clone(),
                ));
            }
        }
    }
    let offsets = sys.offsets()?;
    let free: Vec<usize> = (0..n).filter(|k| !pulsed.contains(k)).collect();
    let d = sys.dim();
    let pulsed_mask: usize = pulsed.iter().map(|&k| 1 << (n - 1 - k)).sum();
    let mut u = DMatrix::zeros(d, d);
    for base in 0..d {
        if base & pulsed_mask != 0 {
            continue;
        }
        let phase = C64::from_polar(1.0, -shape.duration * energy(base, &free, &offsets, &j, n));
        let blocks: Vec<Unitary2> = pulsed
            .iter()
            .map(|&k| {
                let shift: f64 = free.iter().map(|&l| TAU * j[k][l] * m_of(base, l, n)).sum();
                propagator(shape, &EvalPoint::new(offsets[k] + shift, 1.0))
            })
            .collect();
        fill_blocks(&mut u, base, pulsed_mask, &pulsed, &blocks, phase, n);
    }
    Ok(u)
}

/// Writes `phase · ⊗ blocks` into the sub-block of states sharing the
/// unpulsed bits of `base`.
fn fill_blocks(
    u: &mut DMatrix<C64>,
    base: usize,
    mask: usize,
    pulsed: &[usize],
    blocks: &[Unitary2],
    phase: C64,
    n: usize,
) {
    let d = 1 << n;
    for r in 0..d {
        if r & !mask != base {
            continue;
        }
        for c in 0..d {
            if c & !mask != base {
                continue;
            }
            let mut v = phase;
            for (b, &k) in blocks.iter().zip(pulsed) {
                v *= b.m[bit(r, k, n)][bit(c, k, n)];
            }
            u[(r, c)] = v;
        }
    }
}

/// Instantaneous rotation of every spin on a channel.
pub fn ideal_rotation_propagator(
    sys: &SpinSystem,
    channel: &str,
    rotation: &AxisAngle,
) -> Result<DMatrix<C64>, SpinError> {
    let n = sys.len();
    let pulsed = sys.on_channel(channel)?;
    let r = rot(rotation)?;
    let mask: usize = pulsed.iter().map(|&k| 1 << (n - 1 - k)).sum();
    let blocks = vec![r; pulsed.len()];
    let mut u = DMatrix::zeros(sys.dim(), sys.dim());
    for base in 0..sys.dim() {
        if base & mask == 0 {
            fill_blocks(&mut u, base, mask, &pulsed, &blocks, C64::new(1.0, 0.0), n);
        }
    }
    Ok(u)
}

/// Free precession under `H₀` for `tau` seconds.
pub fn delay_propagator(sys: &SpinSystem, tau: f64) -> Result<DMatrix<C64>, SpinError> {
    let n = sys.len();
    let offsets = sys.offsets()?;
    let j = sys.j_matrix()?;
    let all: Vec<usize> = (0..n).collect();
    let diag: Vec<C64> = (0..sys.dim())
        .map(|i| C64::from_polar(1.0, -tau * energy(i, &all, &offsets, &j, n)))
        .collect();
    Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)))
}

pub fn element_propagator(
    sys: &SpinSystem,
    el: &SequenceElement,
) -> Result<DMatrix<C64>, SpinError> {
    match el {
        SequenceElement::Pulse {
            channel,
            shape,
            phase,
        } => {
            if *phase == 0.0 {
                block_pulse_propagator(sys, channel, shape)
            } else {
                block_pulse_propagator(sys, channel, &phase_shift(shape, *phase))
            }
        }
        SequenceElement::Delay { tau } => delay_propagator(sys, *tau),
        SequenceElement::IdealRotation { channel, rotation } => {
            ideal_rotation_propagator(sys, channel, rotation)
        }
    }
}

/// Applies a sequence to `rho0`, first element first.
pub fn simulate_sequence(
    sys: &SpinSystem,
    seq: &[SequenceElement],
    rho0: &DensityState,
) -> Result<DensityState, SpinError> {
    sys.validate()?;
    let mut rho = rho0.clone();
    for el in seq {
        rho = rho.transform(&element_propagator(sys, el)?);
    }
    Ok(rho)
}

/// Full Hamiltonian `H₀ + ω(cos φ I_x + sin φ I_y)` on one channel, dense.
pub fn dense_hamiltonian(
    sys: &SpinSystem,
    channel: &str,
    omega: f64,
    phase: f64,
) -> Result<DMatrix<C64>, SpinError> {
    let n = sys.len();
    let offsets = sys.offsets()?;
    let j = sys.j_matrix()?;
    let pulsed = sys.on_channel(channel)?;
    let mut h = DMatrix::zeros(sys.dim(), sys.dim());
    for k in 0..n {
        h += ProductOp::single(k, CartesianOp::Iz).matrix(n) * C64::new(offsets[k], 0.0);
        for l in k + 1..n {
            if j[k][l] != 0.0 {
                let zz = ProductOp::pair(k, CartesianOp::Iz, l, CartesianOp::Iz).matrix(n);
                h += zz * C64::new(0.5 * TAU * j[k][l], 0.0);
            }
        }
    }
    let (s, c) = phase.sin_cos();
    for &k in &pulsed {
        h += ProductOp::single(k, CartesianOp::Ix).matrix(n) * C64::new(omega * c, 0.0);
        h += ProductOp::single(k, CartesianOp::Iy).matrix(n) * C64::new(omega * s, 0.0);
    }
    Ok(h)
}

/// `exp(−iHt)` of a Hermitian matrix by eigendecomposition.
pub fn expm_hermitian(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let phases = eig.eigenvalues.map(|e| C64::from_polar(1.0, -e * t));
    &eig.eigenvectors * DMatrix::from_diagonal(&phases) * eig.eigenvectors.adjoint()
}

/// Pulse propagator by dense exponentiation of the full Hamiltonian per
/// segment.
pub fn dense_pulse_propagator(
    sys: &SpinSystem,
    channel: &str,
    shape: &PulseShape,
) -> Result<DMatrix<C64>, SpinError> {
    let t = shape.dwell();
    let mut u = DMatrix::identity(sys.dim(), sys.dim());
    for s in &shape.segments {
        let h = dense_hamiltonian(sys, channel, shape.omega_max() * s.amplitude, s.phase)?;
        u = expm_hermitian(&h, t) * u;
    }
    Ok(u)
}
