//! Quaternion algebra, the KS map `z ↦ z̄ i z`, the Hopf map and rotations of
//! the imaginary subspace.
//!
//! Physical positions `u ∈ ℝ³` are identified with imaginary quaternions
//! `u₁ i + u₂ j + u₃ k`. The circle group acting on the KS fibers is realized
//! as the unit quaternions in `span{1, i}`, acting by left multiplication.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ksreg::KSState;

/// Tolerance on `| |q| − 1 |` accepted by operations that need unit input.
pub const UNIT_TOL: f64 = 1e-12;

/// Below this angle `rotation_to_i` returns the identity.
const POLE_ANGLE_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuatError {
    #[error("expected a unit quaternion, got norm {norm}")]
    NotUnit { norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Quaternion {
    pub re: f64,
    pub i: f64,
    pub j: f64,
    pub k: f64,
}

impl Quaternion {
    pub const ONE: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Quaternion = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Quaternion = Quaternion::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 1.0);
    pub const ZERO: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(re: f64, i: f64, j: f64, k: f64) -> Self {
        Quaternion { re, i, j, k }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.re, self.i, self.j, self.k]
    }

    pub fn from_im(v: ImQuaternion) -> Self {
        Quaternion::new(0.0, v.0.x, v.0.y, v.0.z)
    }

    /// `cos θ + i sin θ`, the circle-group element of angle `θ`.
    pub fn unit_complex(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Quaternion::new(c, s, 0.0, 0.0)
    }

    /// Rotation by `angle` about the (not necessarily unit) `axis`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Quaternion::ONE;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Quaternion::new(c, s * a.x, s * a.y, s * a.z)
    }

    pub fn conj(self) -> Self {
        Quaternion::new(self.re, -self.i, -self.j, -self.k)
    }

    pub fn norm_sq(self) -> f64 {
        self.re * self.re + self.i * self.i + self.j * self.j + self.k * self.k
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Euclidean inner product on `ℍ ≅ ℝ⁴`.
    pub fn dot(self, o: Quaternion) -> f64 {
        self.re * o.re + self.i * o.i + self.j * o.j + self.k * o.k
    }

    pub fn normalize(self) -> Self {
        self * (1.0 / self.norm())
    }

    pub fn im(self) -> ImQuaternion {
        ImQuaternion(Vector3::new(self.i, self.j, self.k))
    }

    pub fn scale(self, s: f64) -> Self {
        Quaternion::new(self.re * s, self.i * s, self.j * s, self.k * s)
    }

    pub fn check_unit(self) -> Result<Self, QuatError> {
        let n = self.norm();
        if (n - 1.0).abs() > UNIT_TOL {
            Err(QuatError::NotUnit { norm: n })
        } else {
            Ok(self)
        }
    }
}

/// Hamilton product.
pub fn qmul(a: Quaternion, b: Quaternion) -> Quaternion {
    Quaternion::new(
        a.re * b.re - a.i * b.i - a.j * b.j - a.k * b.k,
        a.re * b.i + a.i * b.re + a.j * b.k - a.k * b.j,
        a.re * b.j - a.i * b.k + a.j * b.re + a.k * b.i,
        a.re * b.k + a.i * b.j - a.j * b.i + a.k * b.re,
    )
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, rhs: Quaternion) -> Quaternion {
        qmul(self, rhs)
    }
}

impl Mul<f64> for Quaternion {
    type Output = Quaternion;
    fn mul(self, rhs: f64) -> Quaternion {
        self.scale(rhs)
    }
}

impl Mul<Quaternion> for f64 {
    type Output = Quaternion;
    fn mul(self, rhs: Quaternion) -> Quaternion {
        rhs.scale(self)
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.re + o.re, self.i + o.i, self.j + o.j, self.k + o.k)
    }
}

impl AddAssign for Quaternion {
    fn add_assign(&mut self, o: Quaternion) {
        *self = *self + o;
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;
    fn sub(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.re - o.re, self.i - o.i, self.j - o.j, self.k - o.k)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }
}

/// Purely imaginary quaternion, i.e. a vector of `ℝ³` along `(i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImQuaternion(pub Vector3<f64>);

impl ImQuaternion {
    pub fn new(i: f64, j: f64, k: f64) -> Self {
        ImQuaternion(Vector3::new(i, j, k))
    }

    pub fn vec(self) -> Vector3<f64> {
        self.0
    }

    pub fn norm(self) -> f64 {
        self.0.norm()
    }

    pub fn to_quat(self) -> Quaternion {
        Quaternion::from_im(self)
    }
}

impl From<Vector3<f64>> for ImQuaternion {
    fn from(v: Vector3<f64>) -> Self {
        ImQuaternion(v)
    }
}

/// The KS map `Π(z) = z̄ i z`.
///
/// Written out in components so that the real part is exactly zero and
/// `|Π(z)| = |z|²` holds to rounding.
pub fn ks_map(z: Quaternion) -> ImQuaternion {
    let (a, b, c, d) = (z.re, z.i, z.j, z.k);
    ImQuaternion::new(
        a * a + b * b - c * c - d * d,
        2.0 * (b * c - a * d),
        2.0 * (a * c + b * d),
    )
}

/// Hopf map `S³ → S²`, the restriction of [`ks_map`] to unit quaternions.
pub fn hopf(z: Quaternion) -> Result<ImQuaternion, QuatError> {
    z.check_unit()?;
    Ok(ks_map(z))
}

/// `g ∗ (z, w, t, τ) = (g z, g w, t, τ)` with `g = cos θ + i sin θ`.
pub fn circle_act(theta: f64, x: &KSState) -> KSState {
    let g = Quaternion::unit_complex(theta);
    KSState {
        z: g * x.z,
        w: g * x.w,
        t: x.t,
        tau: x.tau,
    }
}

/// `q v q̄` for unit `q`.
pub fn rotate_im(q: Quaternion, v: ImQuaternion) -> Result<ImQuaternion, QuatError> {
    q.check_unit()?;
    Ok(rotate_im_unchecked(q, v))
}

pub(crate) fn rotate_im_unchecked(q: Quaternion, v: ImQuaternion) -> ImQuaternion {
    (q * v.to_quat() * q.conj()).im()
}

/// A unit quaternion `q` with `q ξ q̄ = i`, built from the axis `ξ × i` and
/// the angle between `ξ` and `i`.
pub fn rotation_to_i(xi: ImQuaternion) -> Result<Quaternion, QuatError> {
    let n = xi.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(QuatError::NotUnit { norm: n });
    }
    let v = xi.0 / n;
    let ex = Vector3::x();
    let cos_a = v.dot(&ex).clamp(-1.0, 1.0);
    let axis = v.cross(&ex);
    let sin_a = axis.norm();
    let angle = sin_a.atan2(cos_a);
    if angle < POLE_ANGLE_EPS {
        return Ok(Quaternion::ONE);
    }
    if std::f64::consts::PI - angle < POLE_ANGLE_EPS {
        // axis ξ × i degenerates at −i
        return Ok(Quaternion::from_axis_angle(
            Vector3::y(),
            std::f64::consts::PI,
        ));
    }
    Ok(Quaternion::from_axis_angle(axis, angle))
}

/// A smooth local section of the Hopf map: a unit `Σ` with `Π(Σ) = γ`.
///
/// Uses `(1 − iγ)/|1 − iγ|` on the closed hemisphere `γ₁ ≥ 0` and
/// `j·Σ(−γ)` on the other one, so it is well conditioned everywhere.
pub fn hopf_section(gamma: ImQuaternion) -> Quaternion {
    let g = gamma.0 / gamma.0.norm();
    if g.x >= 0.0 {
        section_away_from_minus_i(g)
    } else {
        Quaternion::J * section_away_from_minus_i(-g)
    }
}

fn section_away_from_minus_i(g: Vector3<f64>) -> Quaternion {
    let ig = Quaternion::I * Quaternion::new(0.0, g.x, g.y, g.z);
    (Quaternion::ONE - ig).normalize()
}
