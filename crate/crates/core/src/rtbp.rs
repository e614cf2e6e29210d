//! The spatial elliptic restricted three-body problem in an inertial frame,
//! written as a forced Kepler problem around the big primary.
//!
//! Primaries of masses `M_ε = 1 − m_ε` and `m_ε` move on Keplerian ellipses
//! with eccentricity `e`, semi-major axis `a_ε` (of the big primary's orbit)
//! and period `T_ε = 2π a_ε^{3/2} / m_ε^{3/2}`. With `t = T_ε s` and
//! `ξ = φ_ε(s) + λ_ε u`, `λ_ε³ = T_ε² M_ε`, the motion of the massless body
//! becomes `u″ = −u/|u|³ + ε∇ᵤU(s, u, ε)` with
//!
//! `U = f(ε)/|d(s, ε) − u| − g(ε)⟨χ(s, ε), u⟩`,
//!
//! where `d = λ⁻¹(ψ − φ)` is the scaled position of the small primary and
//! `φ″ = a_ε χ`. The period in `s` is 1.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kepler::{PerturbationEval, PerturbationModel, PhysState, Vec3};
use crate::quat::{rotate_im_unchecked, ImQuaternion, Quaternion};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RtbpError {
    #[error("invalid primaries family: {0}")]
    BadFamily(String),
    #[error("distance bound is not positive (inf |d| = {0})")]
    DeltaBoundViolated(f64),
    #[error("body coincides with a primary at t = {0}")]
    AtPrimaryCollision(f64),
}

/// `m_ε` as a function of `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MassRule {
    /// `m_ε = ε`
    Linear,
    /// `m_ε = Σ cₙ εⁿ⁺¹` (coefficients of `m_ε/ε`)
    Polynomial(Vec<f64>),
}

/// `a_ε` as a function of `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SemiMajorRule {
    /// `a_ε = m_ε (T₀/2π)^{2/3}`, so that `T_ε ≡ T₀`.
    ConstantPeriod,
    /// `a_ε / m_ε = Σ cₙ εⁿ`
    Polynomial(Vec<f64>),
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &cn| acc * x + cn)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimariesFamily {
    pub e0: f64,
    pub t0: f64,
    /// Orientation of the orbital plane (`R_ε`, constant in `ε`).
    pub rotation: Quaternion,
    pub mass: MassRule,
    pub a_rule: SemiMajorRule,
}

impl PrimariesFamily {
    /// `m_ε = ε`, `T_ε = T₀`, orbital plane `i`–`j`.
    pub fn default_family(e0: f64, t0: f64) -> Self {
        PrimariesFamily {
            e0,
            t0,
            rotation: Quaternion::ONE,
            mass: MassRule::Linear,
            a_rule: SemiMajorRule::ConstantPeriod,
        }
    }

    pub fn validate(&self, eps_star: f64) -> Result<(), RtbpError> {
        if !(0.0..1.0).contains(&self.e0) {
            return Err(RtbpError::BadFamily(format!(
                "eccentricity {} not in [0, 1)",
                self.e0
            )));
        }
        if !(self.t0 > 0.0) {
            return Err(RtbpError::BadFamily(format!(
                "period {} must be positive",
                self.t0
            )));
        }
        if ((self.rotation.norm()) - 1.0).abs() > 1e-12 {
            return Err(RtbpError::BadFamily(
                "rotation must be a unit quaternion".into(),
            ));
        }
        if !(eps_star > 0.0 && eps_star < 1.0) {
            return Err(RtbpError::BadFamily(format!(
                "eps_star {eps_star} not in (0, 1)"
            )));
        }
        for n in 1..=100 {
            let eps = eps_star * n as f64 / 100.0;
            let (m, big) = self.masses(eps);
            if !(m > 0.0 && big > 0.0) {
                return Err(RtbpError::BadFamily(format!(
                    "masses ({m}, {big}) at eps = {eps}"
                )));
            }
            if !(self.a_over_m(eps) > 0.0) {
                return Err(RtbpError::BadFamily(format!(
                    "non-positive a/m at eps = {eps}"
                )));
            }
        }
        if !(self.a_over_m(0.0) > 0.0) {
            return Err(RtbpError::BadFamily(
                "a/m must stay positive as eps → 0".into(),
            ));
        }
        Ok(())
    }

    /// `m_ε / ε`, smooth at `ε = 0`.
    pub fn mass_over_eps(&self, eps: f64) -> f64 {
        match &self.mass {
            MassRule::Linear => 1.0,
            MassRule::Polynomial(c) => poly(c, eps),
        }
    }

    /// `(m_ε, M_ε)`
    pub fn masses(&self, eps: f64) -> (f64, f64) {
        let m = eps * self.mass_over_eps(eps);
        (m, 1.0 - m)
    }

    pub fn a_over_m(&self, eps: f64) -> f64 {
        match &self.a_rule {
            SemiMajorRule::ConstantPeriod => (self.t0 / TAU).powf(2.0 / 3.0),
            SemiMajorRule::Polynomial(c) => poly(c, eps),
        }
    }

    pub fn semi_major(&self, eps: f64) -> f64 {
        self.masses(eps).0 * self.a_over_m(eps)
    }

    /// `T_ε = 2π (a_ε/m_ε)^{3/2}`
    pub fn period(&self, eps: f64) -> f64 {
        TAU * self.a_over_m(eps).powf(1.5)
    }

    /// `λ_ε = (T_ε² M_ε)^{1/3}`
    pub fn lambda(&self, eps: f64) -> f64 {
        let big = self.masses(eps).1;
        (self.period(eps).powi(2) * big).cbrt()
    }

    pub fn eccentricity(&self, _eps: f64) -> f64 {
        self.e0
    }

    fn rot(&self, v: Vec3) -> Vec3 {
        rotate_im_unchecked(self.rotation, ImQuaternion(v)).vec()
    }
}

/// Solves Kepler's equation `E − e sin E = ℓ` for `0 ≤ e < 1`.
///
/// Newton from `ℓ + 0.85 e sgn(sin ℓ)` on the reduced anomaly, falling back
/// to bisection inside the bracket `[ℓ − e, ℓ + e]`.
pub fn kepler_eq_solve(ell: f64, e: f64) -> f64 {
    assert!((0.0..1.0).contains(&e), "eccentricity {e} outside [0, 1)");
    let turns = (ell / TAU).round();
    let l = ell - turns * TAU;
    if e == 0.0 {
        return ell;
    }
    let f = |x: f64| x - e * x.sin() - l;
    let (mut lo, mut hi) = (l - e, l + e);
    let mut x = l + 0.85 * e * l.sin().signum();
    x = x.clamp(lo, hi);
    for _ in 0..64 {
        let fx = f(x);
        if fx == 0.0 {
            break;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dfx = 1.0 - e * x.cos();
        let mut next = x - fx / dfx;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    // one more Newton step removes the last rounding of the iteration
    let fx = f(x);
    let x = x - fx / (1.0 - e * x.cos());
    x + turns * TAU
}

/// Eccentric anomaly of the primaries at scaled time `s` and its first three
/// derivatives in `s`.
#[derive(Debug, Clone, Copy)]
struct Anomaly {
    sin: f64,
    cos: f64,
    d1: f64,
    d2: f64,
    d3: f64,
}

fn anomaly(s: f64, e: f64) -> Anomaly {
    let ea = kepler_eq_solve(TAU * s, e);
    let (sin, cos) = ea.sin_cos();
    let dd = 1.0 - e * cos;
    let d1 = TAU / dd;
    let d2 = -TAU * e * sin * d1 / (dd * dd);
    let d3 = -TAU
        * e
        * (cos * d1 * d1 / (dd * dd) + sin * d2 / (dd * dd)
            - 2.0 * e * sin * sin * d1 * d1 / (dd * dd * dd));
    Anomaly {
        sin,
        cos,
        d1,
        d2,
        d3,
    }
}

/// Unit-semi-major ellipse `(cos E − e, √(1−e²) sin E, 0)` before rotation,
/// and its `s`-derivatives up to third order.
fn ellipse_jets(an: &Anomaly, e: f64) -> [Vec3; 4] {
    let b = (1.0 - e * e).sqrt();
    let p = Vec3::new(an.cos - e, b * an.sin, 0.0);
    // dE-derivatives of (cos E, b sin E)
    let t = Vec3::new(-an.sin, b * an.cos, 0.0);
    let n = Vec3::new(-an.cos, -b * an.sin, 0.0);
    let p1 = t * an.d1;
    let p2 = t * an.d2 + n * (an.d1 * an.d1);
    let p3 = t * (an.d3 - an.d1.powi(3)) + n * (3.0 * an.d1 * an.d2);
    [p, p1, p2, p3]
}

/// `(φ_ε(s), ψ_ε(s))`: positions of the big and small primary.
pub fn primary_positions(family: &PrimariesFamily, s: f64, eps: f64) -> (Vec3, Vec3) {
    let e = family.eccentricity(eps);
    let an = anomaly(s, e);
    let [p, ..] = ellipse_jets(&an, e);
    let phi = family.rot(p) * family.semi_major(eps);
    let (m, big) = family.masses(eps);
    let psi = if m > 0.0 {
        -phi * (big / m)
    } else {
        -family.rot(p) * (big * family.a_over_m(eps))
    };
    (phi, psi)
}

/// `(φ′, ψ′)` in scaled time.
pub fn primary_velocities(family: &PrimariesFamily, s: f64, eps: f64) -> (Vec3, Vec3) {
    let e = family.eccentricity(eps);
    let an = anomaly(s, e);
    let [_, p1, ..] = ellipse_jets(&an, e);
    let (_, big) = family.masses(eps);
    let dir = family.rot(p1);
    (
        dir * family.semi_major(eps),
        -dir * (big * family.a_over_m(eps)),
    )
}

/// `χ(s, ε)` with `φ″ = a_ε χ`; independent of the masses.
pub fn chi(family: &PrimariesFamily, s: f64, eps: f64) -> Vec3 {
    let e = family.eccentricity(eps);
    let [_, _, p2, _] = ellipse_jets(&anomaly(s, e), e);
    family.rot(p2)
}

pub fn phi_dd(family: &PrimariesFamily, s: f64, eps: f64) -> Vec3 {
    chi(family, s, eps) * family.semi_major(eps)
}

/// `d(s, ε) = λ⁻¹(ψ − φ)`: scaled position of the small primary relative to
/// the big one.
pub fn scaled_separation(family: &PrimariesFamily, s: f64, eps: f64) -> Vec3 {
    let e = family.eccentricity(eps);
    let [p, ..] = ellipse_jets(&anomaly(s, e), e);
    -family.rot(p) * (family.a_over_m(eps) / family.lambda(eps))
}

/// The RTBP perturbation as a [`PerturbationModel`] in scaled time.
#[derive(Debug, Clone)]
pub struct RtbpPerturbation {
    pub family: PrimariesFamily,
    pub eps_star: f64,
    pub delta_u: f64,
}

/// `½ inf |d(s, ε)|` over a `50 × 20` grid in `s ∈ [0, 1)`, `ε ∈ [0, ε_*]`.
pub fn delta_bound(family: &PrimariesFamily, eps_star: f64) -> f64 {
    0.5 * min_separation(family, eps_star)
}

fn min_separation(family: &PrimariesFamily, eps_star: f64) -> f64 {
    let mut inf = f64::INFINITY;
    for ne in 0..20 {
        let eps = eps_star * ne as f64 / 19.0;
        for ns in 0..50 {
            let s = ns as f64 / 50.0;
            inf = inf.min(scaled_separation(family, s, eps).norm());
        }
    }
    inf
}

/// `inf_s |d(s, ε)|` at fixed `ε`, refined around the grid minimum.
pub fn min_separation_at(family: &PrimariesFamily, eps: f64) -> f64 {
    let n = 1000;
    let norm = |s: f64| scaled_separation(family, s, eps).norm();
    let (mut best_s, mut best) = (0.0, f64::INFINITY);
    for i in 0..n {
        let s = i as f64 / n as f64;
        let v = norm(s);
        if v < best {
            best = v;
            best_s = s;
        }
    }
    // golden-section refinement on the bracketing cell
    let (mut a, mut b) = (best_s - 1.0 / n as f64, best_s + 1.0 / n as f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if norm(c) < norm(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.min(norm(0.5 * (a + b)))
}

pub fn build_perturbation(
    family: PrimariesFamily,
    eps_star: f64,
) -> Result<RtbpPerturbation, RtbpError> {
    family.validate(eps_star)?;
    let inf = min_separation(&family, eps_star);
    if !(inf > 0.0) {
        return Err(RtbpError::DeltaBoundViolated(inf));
    }
    Ok(RtbpPerturbation {
        family,
        eps_star,
        delta_u: 0.5 * inf,
    })
}

impl RtbpPerturbation {
    /// `f(ε) = m_ε/(ε M_ε)`
    pub fn f_coef(&self, eps: f64) -> f64 {
        self.family.mass_over_eps(eps) / self.family.masses(eps).1
    }

    /// `g(ε) = a_ε/(ε λ_ε)`
    pub fn g_coef(&self, eps: f64) -> f64 {
        self.family.mass_over_eps(eps) * self.family.a_over_m(eps) / self.family.lambda(eps)
    }
}

impl PerturbationModel for RtbpPerturbation {
    fn period(&self) -> f64 {
        1.0
    }

    fn domain_radius(&self) -> f64 {
        self.delta_u
    }

    fn eps_max(&self) -> f64 {
        self.eps_star
    }

    fn eval(&self, s: f64, u: &Vec3, eps: f64) -> PerturbationEval {
        let fam = &self.family;
        let e = fam.eccentricity(eps);
        let an = anomaly(s, e);
        let [p, p1, p2, p3] = ellipse_jets(&an, e);
        let scale = fam.a_over_m(eps) / fam.lambda(eps);
        let d = -fam.rot(p) * scale;
        let dd = -fam.rot(p1) * scale;
        let chi = fam.rot(p2);
        let chi_d = fam.rot(p3);
        let (f, g) = (self.f_coef(eps), self.g_coef(eps));
        let r = d - u;
        let rn = r.norm();
        let r3 = rn * rn * rn;
        PerturbationEval {
            value: f / rn - g * chi.dot(u),
            grad_u: r * (f / r3) - chi * g,
            dt: -f * r.dot(&dd) / r3 - g * chi_d.dot(u),
        }
    }
}

/// State of the massless body in the inertial frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub xi: Vec3,
    pub xi_dot: Vec3,
    pub t: f64,
}

/// `M(X − ξ)/|X − ξ|³ + m(x − ξ)/|x − ξ|³` with `X = φ(t/T_ε)`, `x = ψ(t/T_ε)`.
pub fn rtbp_rhs(state: &BodyState, family: &PrimariesFamily, eps: f64) -> Result<Vec3, RtbpError> {
    let s = state.t / family.period(eps);
    let (phi, psi) = primary_positions(family, s, eps);
    let (m, big) = family.masses(eps);
    let r1 = phi - state.xi;
    let r2 = psi - state.xi;
    let (n1, n2) = (r1.norm(), r2.norm());
    if n1 == 0.0 || (m > 0.0 && n2 == 0.0) {
        return Err(RtbpError::AtPrimaryCollision(state.t));
    }
    let mut acc = r1 * (big / (n1 * n1 * n1));
    if m > 0.0 {
        acc += r2 * (m / (n2 * n2 * n2));
    }
    Ok(acc)
}

/// `ξ = φ + λu`, `ξ̇ = (φ′ + λu′)/T_ε` at `t = T_ε s`.
pub fn body_from_scaled(family: &PrimariesFamily, state: &PhysState, eps: f64) -> BodyState {
    let s = state.t;
    let (phi, _) = primary_positions(family, s, eps);
    let (phi_d, _) = primary_velocities(family, s, eps);
    let lam = family.lambda(eps);
    let per = family.period(eps);
    BodyState {
        xi: phi + state.u * lam,
        xi_dot: (phi_d + state.v * lam) / per,
        t: per * s,
    }
}

/// Inverse of [`body_from_scaled`].
pub fn scaled_from_body(family: &PrimariesFamily, body: &BodyState, eps: f64) -> PhysState {
    let per = family.period(eps);
    let s = body.t / per;
    let (phi, _) = primary_positions(family, s, eps);
    let (phi_d, _) = primary_velocities(family, s, eps);
    let lam = family.lambda(eps);
    PhysState {
        u: (body.xi - phi) / lam,
        v: (body.xi_dot * per - phi_d) / lam,
        t: s,
    }
}

/// `u″` assembled from the inertial equations through `ξ = φ + λu`,
/// `η″ = T²ξ̈`, `u″ = λ⁻¹(η″ − φ″)`, minus `−u/|u|³ + ε∇ᵤU`, relative to
/// the size of the right-hand side.
pub fn consistency_check(
    model: &RtbpPerturbation,
    s: f64,
    u: &Vec3,
    eps: f64,
) -> Result<f64, RtbpError> {
    let fam = &model.family;
    let lam = fam.lambda(eps);
    let per = fam.period(eps);
    let (phi, _) = primary_positions(fam, s, eps);
    let body = BodyState {
        xi: phi + u * lam,
        xi_dot: Vec3::zeros(),
        t: per * s,
    };
    let eta_dd = rtbp_rhs(&body, fam, eps)? * (per * per);
    let lhs = (eta_dd - phi_dd(fam, s, eps)) / lam;
    let rn = u.norm();
    let rhs = -u / (rn * rn * rn) + model.eval(s, u, eps).grad_u * eps;
    Ok((lhs - rhs).norm() / rhs.norm())
}

/// Largest mismatch of `½|u′|² − 1/|u| = (T²/λ²)(½|ξ̇ − Ẋ|² − M/|ξ − X|)`
/// over collisionless samples in scaled variables.
pub fn energy_identity_check(model: &RtbpPerturbation, samples: &[PhysState], eps: f64) -> f64 {
    let fam = &model.family;
    let lam = fam.lambda(eps);
    let per = fam.period(eps);
    let big = fam.masses(eps).1;
    let mut worst: f64 = 0.0;
    for st in samples {
        let rn = st.u.norm();
        if rn == 0.0 {
            continue;
        }
        let lhs = 0.5 * st.v.norm_squared() - 1.0 / rn;
        let body = body_from_scaled(fam, st, eps);
        let (big_x, _) = primary_positions(fam, st.t, eps);
        let (big_xd, _) = primary_velocities(fam, st.t, eps);
        let rel_v = body.xi_dot - big_xd / per;
        let rel_x = body.xi - big_x;
        let rhs = per * per / (lam * lam) * (0.5 * rel_v.norm_squared() - big / rel_x.norm());
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

/// Positions `(X, x, ξ)` at inertial time `t` for a body given in scaled
/// variables.
pub fn ephemeris_row(
    family: &PrimariesFamily,
    st: &PhysState,
    eps: f64,
) -> (f64, Vec3, Vec3, Vec3) {
    let body = body_from_scaled(family, st, eps);
    let (phi, psi) = primary_positions(family, st.t, eps);
    (body.t, phi, psi, body.xi)
}

/// Smallest admissible `k` for seeds on a unit scaled period: the seed radius
/// `1/(2τ_k)` must lie strictly inside the perturbation's domain.
pub fn k_min(delta_u: f64, period: f64) -> u32 {
    (1..10_000)
        .find(|&k| seed_radius(k, period) < delta_u * (1.0 - 1e-9))
        .unwrap_or(u32::MAX)
}

pub fn seed_radius(k: u32, period: f64) -> f64 {
    0.5 / crate::ksreg::tau_k(k, period)
}

pub fn axis_angle_rotation(axis: Vector3<f64>, angle: f64) -> Quaternion {
    if axis.norm() == 0.0 {
        return Quaternion::ONE;
    }
    Quaternion::from_axis_angle(axis.normalize(), angle)
}

/// `(1 − e₀)/(2π)^{2/3}`, the `ε → 0` limit of `inf_s |d(s, ε)|`.
pub fn separation_limit(e0: f64) -> f64 {
    (1.0 - e0) / (2.0 * PI).powf(2.0 / 3.0)
}
