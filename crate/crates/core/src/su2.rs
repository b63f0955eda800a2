//! Exact 2×2 unitary algebra for a single spin-1/2.
//!
//! Spin operators are normalized as `I_k = σ_k / 2`. A rotation by angle `ψ`
//! about the unit axis `n` is `exp(-i ψ n·I)`. Unitaries produced by products
//! of such rotations stay in SU(2), so their sign is meaningful: `rot(n, ψ)`
//! and `rot(-n, 2π - ψ)` differ by a global factor of -1 and are reported as
//! distinct rotations, which is why angles live in `[0, 2π)`.

use std::f64::consts::TAU;
use std::ops::Mul;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const I: C64 = C64::new(0.0, 1.0);
const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Angles with `sin(ψ/2)` below this are treated as the identity.
pub const DEGENERATE_ANGLE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Su2Error {
    #[error("rotation axis must be unit length, got norm {0}")]
    NonUnitAxis(f64),
    #[error("rotation axis has zero length")]
    ZeroAxis,
}

/// Shared access to the four entries of a 2×2 complex matrix.
pub trait Mat2 {
    fn entries(&self) -> &[[C64; 2]; 2];

    fn trace(&self) -> C64 {
        let m = self.entries();
        m[0][0] + m[1][1]
    }
}

/// A 2×2 complex matrix that is unitary (not checked on construction; see
/// [`Unitary2::is_unitary`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unitary2 {
    pub m: [[C64; 2]; 2],
}

/// A 2×2 Hermitian matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hermitian2 {
    pub m: [[C64; 2]; 2],
}

impl Mat2 for Unitary2 {
    fn entries(&self) -> &[[C64; 2]; 2] {
        &self.m
    }
}

impl Mat2 for Hermitian2 {
    fn entries(&self) -> &[[C64; 2]; 2] {
        &self.m
    }
}

#[inline]
fn matmul(a: &[[C64; 2]; 2], b: &[[C64; 2]; 2]) -> [[C64; 2]; 2] {
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
fn adjoint(a: &[[C64; 2]; 2]) -> [[C64; 2]; 2] {
    [
        [a[0][0].conj(), a[1][0].conj()],
        [a[0][1].conj(), a[1][1].conj()],
    ]
}

impl Unitary2 {
    pub const IDENTITY: Unitary2 = Unitary2 {
        m: [[ONE, ZERO], [ZERO, ONE]],
    };

    pub fn from_entries(m: [[C64; 2]; 2]) -> Self {
        Self { m }
    }

    /// SU(2) element `[[α, -β*], [β, α*]]`.
    #[inline]
    pub fn su2(alpha: C64, beta: C64) -> Self {
        Self {
            m: [[alpha, -beta.conj()], [beta, alpha.conj()]],
        }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            m: adjoint(&self.m),
        }
    }

    pub fn det(&self) -> C64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// Rotation about z by `theta`, `exp(-i θ I_z)`.
    pub fn rz(theta: f64) -> Self {
        let h = 0.5 * theta;
        Self {
            m: [
                [C64::from_polar(1.0, -h), ZERO],
                [ZERO, C64::from_polar(1.0, h)],
            ],
        }
    }

    /// Rotation about x by `theta`.
    pub fn rx(theta: f64) -> Self {
        let (s, c) = (0.5 * theta).sin_cos();
        Self::su2(C64::new(c, 0.0), C64::new(0.0, -s))
    }

    /// Rotation about y by `theta`.
    pub fn ry(theta: f64) -> Self {
        let (s, c) = (0.5 * theta).sin_cos();
        Self::su2(C64::new(c, 0.0), C64::new(s, 0.0))
    }

    /// Conjugation `self · h · self†`.
    pub fn conjugate(&self, h: &Hermitian2) -> Hermitian2 {
        Hermitian2 {
            m: matmul(&matmul(&self.m, &h.m), &adjoint(&self.m)),
        }
    }

    /// Largest entrywise deviation of `U†U` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let p = matmul(&adjoint(&self.m), &self.m);
        let mut err: f64 = 0.0;
        for (i, row) in p.iter().enumerate() {
            for (j, z) in row.iter().enumerate() {
                let target = if i == j { ONE } else { ZERO };
                err = err.max((z - target).norm());
            }
        }
        err
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() <= tol && (self.det().norm() - 1.0).abs() <= tol
    }

    /// Divides out the global phase so that `det = 1`, using the principal
    /// square root of the determinant.
    pub fn to_special(&self) -> Self {
        let d = self.det();
        if (d - ONE).norm() < 1e-15 {
            return *self;
        }
        let s = d.sqrt();
        let inv = ONE / s;
        Self {
            m: [
                [self.m[0][0] * inv, self.m[0][1] * inv],
                [self.m[1][0] * inv, self.m[1][1] * inv],
            ],
        }
    }

    /// Largest entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &Unitary2) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                err = err.max((self.m[i][j] - other.m[i][j]).norm());
            }
        }
        err
    }
}

impl Mul for Unitary2 {
    type Output = Unitary2;

    #[inline]
    fn mul(self, rhs: Unitary2) -> Unitary2 {
        Unitary2 {
            m: matmul(&self.m, &rhs.m),
        }
    }
}

impl Mul for &Unitary2 {
    type Output = Unitary2;

    #[inline]
    fn mul(self, rhs: &Unitary2) -> Unitary2 {
        Unitary2 {
            m: matmul(&self.m, &rhs.m),
        }
    }
}

impl Hermitian2 {
    pub const ZERO: Hermitian2 = Hermitian2 {
        m: [[ZERO, ZERO], [ZERO, ZERO]],
    };

    /// `x I_x + y I_y + z I_z`.
    pub fn from_cartesian(x: f64, y: f64, z: f64) -> Self {
        Self {
            m: [
                [C64::new(0.5 * z, 0.0), C64::new(0.5 * x, -0.5 * y)],
                [C64::new(0.5 * x, 0.5 * y), C64::new(-0.5 * z, 0.0)],
            ],
        }
    }

    pub fn ix() -> Self {
        Self::from_cartesian(1.0, 0.0, 0.0)
    }

    pub fn iy() -> Self {
        Self::from_cartesian(0.0, 1.0, 0.0)
    }

    pub fn iz() -> Self {
        Self::from_cartesian(0.0, 0.0, 1.0)
    }

    /// Real Cartesian components `(x, y, z)` on `(I_x, I_y, I_z)`.
    pub fn cartesian(&self) -> [f64; 3] {
        let p = project(self);
        [p.x.re, p.y.re, p.z.re]
    }

    /// Largest entrywise deviation from `M†`.
    pub fn hermiticity_error(&self) -> f64 {
        let a = adjoint(&self.m);
        let mut err: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                err = err.max((self.m[i][j] - a[i][j]).norm());
            }
        }
        err
    }

    /// `Tr(self · other)`, real for Hermitian operands.
    pub fn overlap(&self, other: &Hermitian2) -> f64 {
        let p = matmul(&self.m, &other.m);
        (p[0][0] + p[1][1]).re
    }
}

impl std::ops::Add for Hermitian2 {
    type Output = Hermitian2;

    fn add(self, rhs: Hermitian2) -> Hermitian2 {
        let mut m = self.m;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, z) in row.iter_mut().enumerate() {
                *z += rhs.m[i][j];
            }
        }
        Hermitian2 { m }
    }
}

/// Coefficients of a 2×2 matrix on the basis `(I_x, I_y, I_z, E)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianProjection {
    pub x: C64,
    pub y: C64,
    pub z: C64,
    pub e: C64,
}

impl CartesianProjection {
    /// Rebuilds `x I_x + y I_y + z I_z + e E`.
    pub fn unproject(&self) -> [[C64; 2]; 2] {
        let h = 0.5;
        [
            [self.e + h * self.z, h * (self.x - I * self.y)],
            [h * (self.x + I * self.y), self.e - h * self.z],
        ]
    }

    /// `V_R² = V_x² + V_y²`; non-positive for SU(2) sources.
    pub fn transverse_sq(&self) -> C64 {
        self.x * self.x + self.y * self.y
    }
}

/// Projects a 2×2 matrix onto `(I_x, I_y, I_z, E)`. The basis is orthogonal
/// under the trace inner product with `Tr(I_k I_k) = 1/2` and `Tr(E E) = 2`.
pub fn project<M: Mat2 + ?Sized>(m: &M) -> CartesianProjection {
    let a = m.entries();
    CartesianProjection {
        x: a[0][1] + a[1][0],
        y: I * (a[0][1] - a[1][0]),
        z: a[0][0] - a[1][1],
        e: 0.5 * (a[0][0] + a[1][1]),
    }
}

/// Rotation axis (unit vector) and angle in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle {
    pub axis: [f64; 3],
    pub angle: f64,
}

impl AxisAngle {
    /// Checked constructor; the axis must already be unit length.
    pub fn new(axis: [f64; 3], angle: f64) -> Result<Self, Su2Error> {
        let n = norm3(&axis);
        if (n - 1.0).abs() > 1e-12 {
            return Err(Su2Error::NonUnitAxis(n));
        }
        Ok(Self { axis, angle })
    }

    /// Normalizes `axis` before constructing.
    pub fn normalized(axis: [f64; 3], angle: f64) -> Result<Self, Su2Error> {
        let n = norm3(&axis);
        if n < 1e-300 {
            return Err(Su2Error::ZeroAxis);
        }
        Ok(Self {
            axis: [axis[0] / n, axis[1] / n, axis[2] / n],
            angle,
        })
    }

    pub fn x(angle: f64) -> Self {
        Self {
            axis: [1.0, 0.0, 0.0],
            angle,
        }
    }

    pub fn y(angle: f64) -> Self {
        Self {
            axis: [0.0, 1.0, 0.0],
            angle,
        }
    }

    pub fn z(angle: f64) -> Self {
        Self {
            axis: [0.0, 0.0, 1.0],
            angle,
        }
    }

    /// Axis from polar angle `theta` and azimuth `phi`.
    pub fn from_spherical(theta: f64, phi: f64, angle: f64) -> Self {
        Self {
            axis: [
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            ],
            angle,
        }
    }

    pub fn angle_degrees(&self) -> f64 {
        self.angle.to_degrees()
    }
}

pub(crate) fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// `exp(-i ψ n·I)`.
pub fn rot(aa: &AxisAngle) -> Result<Unitary2, Su2Error> {
    let n = norm3(&aa.axis);
    if (n - 1.0).abs() > 1e-12 {
        return Err(Su2Error::NonUnitAxis(n));
    }
    Ok(rot_unchecked(aa.axis, aa.angle))
}

#[inline]
pub(crate) fn rot_unchecked(axis: [f64; 3], angle: f64) -> Unitary2 {
    let (s, c) = (0.5 * angle).sin_cos();
    Unitary2::su2(
        C64::new(c, -s * axis[2]),
        C64::new(s * axis[1], -s * axis[0]),
    )
}

/// Axis/angle recovered from a unitary, with a flag for the identity case
/// where the axis is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveredRotation {
    pub rotation: AxisAngle,
    pub degenerate: bool,
}

/// Recovers the rotation performed by `u`. The global phase is first removed
/// so that `det = 1`; SU(2) inputs keep their sign and may report angles
/// above π.
pub fn axis_angle_of(u: &Unitary2) -> RecoveredRotation {
    let su = u.to_special();
    let p = project(&su);
    let cos_half = p.e.re;
    // v_k = -2i sin(ψ/2) n_k, and sin(ψ/2) ≥ 0 on [0, 2π].
    let v = [-0.5 * p.x.im, -0.5 * p.y.im, -0.5 * p.z.im];
    let s = norm3(&v);
    if s < DEGENERATE_ANGLE {
        return RecoveredRotation {
            rotation: AxisAngle::z(0.0),
            degenerate: true,
        };
    }
    let mut angle = 2.0 * s.atan2(cos_half);
    if angle >= TAU {
        angle -= TAU;
    }
    RecoveredRotation {
        rotation: AxisAngle {
            axis: [v[0] / s, v[1] / s, v[2] / s],
            angle,
        },
        degenerate: false,
    }
}

/// `|½ Tr(V U†)|²`: one exactly when `V` equals `U` up to a global phase.
pub fn unitary_fidelity(v: &Unitary2, target: &Unitary2) -> f64 {
    let o = overlap(v, target);
    o.norm_sqr()
}

/// `½ Tr(V U†)`.
#[inline]
pub fn overlap(v: &Unitary2, target: &Unitary2) -> C64 {
    let a = &v.m;
    let b = &target.m;
    0.5 * (a[0][0] * b[0][0].conj()
        + a[0][1] * b[0][1].conj()
        + a[1][0] * b[1][0].conj()
        + a[1][1] * b[1][1].conj())
}
