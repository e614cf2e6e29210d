//! The periodically forced Kepler problem `ü = −u/|u|³ + ε ∇ᵤU(t, u, ε)`.
//!
//! Besides the vector field this module holds the bookkeeping for
//! generalized solutions: one-sided collision asymptotics
//! `u(t) ≈ a|t − t₀|^{2/3} + b|t − t₀|^{4/3}` and the check that direction
//! and Kepler energy have matching one-sided limits at every collision.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Pass threshold on direction and energy jumps at collisions.
pub const JUMP_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeplerError {
    #[error("|u| = {norm} outside the perturbation domain (radius {radius})")]
    OutsideDomain { norm: f64, radius: f64 },
    #[error("state is at a collision (|u| = 0)")]
    AtCollision,
    #[error("eps = {eps} outside [0, {eps_max}]")]
    EpsOutOfRange { eps: f64, eps_max: f64 },
    #[error("collision fit failed: {0}")]
    BadFit(String),
    #[error("collision times {0} and {1} are not separated")]
    NonDiscreteZeroSet(f64, f64),
    #[error("trajectory is not periodic: endpoint mismatch {0}")]
    NotPeriodic(f64),
}

/// Values of the perturbation at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationEval {
    pub value: f64,
    pub grad_u: Vec3,
    /// `∂U/∂t`
    pub dt: f64,
}

/// A `T`-periodic perturbing potential `U(t, u, ε)` on the ball `|u| < δ_u`.
pub trait PerturbationModel: Send + Sync {
    fn period(&self) -> f64;
    fn domain_radius(&self) -> f64;
    fn eps_max(&self) -> f64;
    /// Value, `u`-gradient and time derivative at `(t, u, ε)`. Callers check
    /// the domain; implementations may assume `|u| < domain_radius()`.
    fn eval(&self, t: f64, u: &Vec3, eps: f64) -> PerturbationEval;

    fn value(&self, t: f64, u: &Vec3, eps: f64) -> f64 {
        self.eval(t, u, eps).value
    }

    fn grad_u(&self, t: f64, u: &Vec3, eps: f64) -> Vec3 {
        self.eval(t, u, eps).grad_u
    }

    fn check_domain(&self, u: &Vec3) -> Result<(), KeplerError> {
        let norm = u.norm();
        let radius = self.domain_radius();
        if norm < radius {
            Ok(())
        } else {
            Err(KeplerError::OutsideDomain { norm, radius })
        }
    }

    fn check_eps(&self, eps: f64) -> Result<(), KeplerError> {
        let eps_max = self.eps_max();
        if (0.0..=eps_max).contains(&eps) {
            Ok(())
        } else {
            Err(KeplerError::EpsOutOfRange { eps, eps_max })
        }
    }
}

/// `U ≡ 0` on a ball, with a nominal period.
#[derive(Debug, Clone, Copy)]
pub struct Unperturbed {
    pub period: f64,
    pub radius: f64,
}

impl PerturbationModel for Unperturbed {
    fn period(&self) -> f64 {
        self.period
    }
    fn domain_radius(&self) -> f64 {
        self.radius
    }
    fn eps_max(&self) -> f64 {
        f64::INFINITY
    }
    fn eval(&self, _t: f64, _u: &Vec3, _eps: f64) -> PerturbationEval {
        PerturbationEval {
            value: 0.0,
            grad_u: Vec3::zeros(),
            dt: 0.0,
        }
    }
}

/// `U = cos(2πt/T)⟨c, u⟩ + ½ h sin(2πt/T)|u|²`, a smooth periodic forcing
/// with non-trivial time dependence, used for tests and benchmarks.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicLinear {
    pub period: f64,
    pub radius: f64,
    pub coeff: Vec3,
    pub hessian: f64,
}

impl PerturbationModel for PeriodicLinear {
    fn period(&self) -> f64 {
        self.period
    }
    fn domain_radius(&self) -> f64 {
        self.radius
    }
    fn eps_max(&self) -> f64 {
        1.0
    }
    fn eval(&self, t: f64, u: &Vec3, _eps: f64) -> PerturbationEval {
        let nu = 2.0 * std::f64::consts::PI / self.period;
        let (s, c) = (nu * t).sin_cos();
        let lin = self.coeff.dot(u);
        let u2 = u.norm_squared();
        PerturbationEval {
            value: c * lin + 0.5 * self.hessian * s * u2,
            grad_u: self.coeff * c + u * (self.hessian * s),
            dt: nu * (-s * lin + 0.5 * self.hessian * c * u2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysState {
    pub u: Vec3,
    pub v: Vec3,
    pub t: f64,
}

impl PhysState {
    pub fn new(u: Vec3, v: Vec3, t: f64) -> Self {
        PhysState { u, v, t }
    }
}

/// `−u/|u|³ + ε ∇ᵤU(t, u, ε)`.
pub fn kepler_rhs(
    state: &PhysState,
    pert: &dyn PerturbationModel,
    eps: f64,
) -> Result<Vec3, KeplerError> {
    let r = state.u.norm();
    if r == 0.0 {
        return Err(KeplerError::AtCollision);
    }
    pert.check_domain(&state.u)?;
    pert.check_eps(eps)?;
    let mut acc = -state.u / (r * r * r);
    if eps != 0.0 {
        acc += pert.grad_u(state.t, &state.u, eps) * eps;
    }
    Ok(acc)
}

/// `½|v|² − 1/|u|`.
pub fn kepler_energy(state: &PhysState) -> Result<f64, KeplerError> {
    let r = state.u.norm();
    if r == 0.0 {
        return Err(KeplerError::AtCollision);
    }
    Ok(0.5 * state.v.norm_squared() - 1.0 / r)
}

/// `σ = u/|u|`.
pub fn direction(state: &PhysState) -> Result<Vec3, KeplerError> {
    let r = state.u.norm();
    if r == 0.0 {
        return Err(KeplerError::AtCollision);
    }
    Ok(state.u / r)
}

/// `σ̇ = (|u|² u̇ − ⟨u, u̇⟩u)/|u|³`.
pub fn direction_rate(state: &PhysState) -> Result<Vec3, KeplerError> {
    let r = state.u.norm();
    if r == 0.0 {
        return Err(KeplerError::AtCollision);
    }
    Ok((state.v * (r * r) - state.u * state.u.dot(&state.v)) / (r * r * r))
}

/// One-sided limit data at a collision time `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionAsymptote {
    pub t0: f64,
    /// Leading coefficient of `u ≈ a|t − t₀|^{2/3}`.
    pub a: Vec3,
    /// Coefficient of the `|t − t₀|^{4/3}` correction.
    pub b: Vec3,
    pub energy_limit: f64,
    /// `−1` samples before the collision, `+1` after.
    pub side: i8,
    /// `|u − a τ^{2/3}| / |a τ^{2/3}|` at the closest sample.
    pub leading_residual: f64,
}

impl CollisionAsymptote {
    pub fn direction(&self) -> Vec3 {
        self.a / self.a.norm()
    }
}

const MIN_FIT_SAMPLES: usize = 8;

/// Fits the Sperling expansion to samples approaching the collision at `t0`
/// from one side.
///
/// `a` and `b` come from a joint least-squares fit on the basis
/// `(τ^{2/3}, τ^{4/3})`, `τ = |t − t₀|`. The energy limit is a three-point
/// Richardson (quadratic) extrapolation in `x = τ^{2/3}` from the three
/// closest samples.
pub fn fit_collision_asymptote(
    samples: &[PhysState],
    t0: f64,
) -> Result<CollisionAsymptote, KeplerError> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(KeplerError::BadFit(format!(
            "need at least {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let side = (samples[0].t - t0).signum();
    if side == 0.0 || samples.iter().any(|s| (s.t - t0).signum() != side) {
        return Err(KeplerError::BadFit(
            "samples must lie strictly on one side of t0".into(),
        ));
    }
    let mut pts: Vec<(f64, &PhysState)> = samples.iter().map(|s| ((s.t - t0).abs(), s)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in pts.windows(2) {
        if !(w[0].1.u.norm() < w[1].1.u.norm()) {
            return Err(KeplerError::BadFit(
                "|u| is not monotone towards the collision".into(),
            ));
        }
    }

    // scaled basis: x = (τ/τ_max)^{2/3}, columns x and x²
    let tau_max = pts.last().unwrap().0;
    let mut ata = Matrix2::zeros();
    let mut atb = [Vector2::zeros(); 3];
    for &(tau, s) in &pts {
        let x = (tau / tau_max).powf(2.0 / 3.0);
        let row = Vector2::new(x, x * x);
        ata += row * row.transpose();
        for c in 0..3 {
            atb[c] += row * s.u[c];
        }
    }
    let chol = ata
        .cholesky()
        .ok_or_else(|| KeplerError::BadFit("degenerate sample times".into()))?;
    let lead_scale = tau_max.powf(2.0 / 3.0);
    let mut a = Vec3::zeros();
    let mut b = Vec3::zeros();
    for c in 0..3 {
        let sol = chol.solve(&atb[c]);
        a[c] = sol[0] / lead_scale;
        b[c] = sol[1] / (lead_scale * lead_scale);
    }
    if a.norm() == 0.0 {
        return Err(KeplerError::BadFit("vanishing leading coefficient".into()));
    }

    let (tau_c, closest) = pts[0];
    let lead = a * tau_c.powf(2.0 / 3.0);
    let leading_residual = (closest.u - lead).norm() / lead.norm();
    if leading_residual > 0.1 {
        return Err(KeplerError::BadFit(format!(
            "leading-term residual {leading_residual:.3e} exceeds 10% at the closest sample"
        )));
    }

    let mut xs = [0.0; 3];
    let mut es = [0.0; 3];
    for (n, &(tau, s)) in pts.iter().take(3).enumerate() {
        xs[n] = tau.powf(2.0 / 3.0);
        es[n] = kepler_energy(s)?;
    }
    let energy_limit = lagrange_at_zero(&xs, &es);

    Ok(CollisionAsymptote {
        t0,
        a,
        b,
        energy_limit,
        side: side as i8,
        leading_residual,
    })
}

fn lagrange_at_zero(x: &[f64; 3], y: &[f64; 3]) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        let mut w = 1.0;
        for j in 0..3 {
            if i != j {
                w *= (0.0 - x[j]) / (x[i] - x[j]);
            }
        }
        acc += w * y[i];
    }
    acc
}

/// A trajectory sampled over one period, with its collision times.
#[derive(Debug, Clone)]
pub struct SampledOrbit {
    pub period: f64,
    /// Sorted by time; should cover one period and be dense near collisions.
    pub samples: Vec<PhysState>,
    pub collision_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedOrbitCheck {
    pub collision_times: Vec<f64>,
    pub direction_jump: f64,
    pub energy_jump: f64,
    pub zset_discrete: bool,
}

impl GeneralizedOrbitCheck {
    pub fn passed(&self) -> bool {
        self.zset_discrete && self.direction_jump < JUMP_TOL && self.energy_jump < JUMP_TOL
    }
}

/// Number of samples per side handed to [`fit_collision_asymptote`].
const SIDE_SAMPLES: usize = 12;

/// Verifies the generalized-solution conditions at every collision: one-sided
/// limits of `u/|u|` and of the Kepler energy must coincide.
pub fn check_generalized(orbit: &SampledOrbit) -> Result<GeneralizedOrbitCheck, KeplerError> {
    let period = orbit.period;
    if let (Some(first), Some(last)) = (orbit.samples.first(), orbit.samples.last()) {
        if ((last.t - first.t) - period).abs() < 1e-9 * period.max(1.0) {
            let mismatch = (last.u - first.u).norm();
            if mismatch > 1e-8 * first.u.norm().max(1.0) {
                return Err(KeplerError::NotPeriodic(mismatch));
            }
        }
    }
    let mut times = orbit.collision_times.clone();
    times.sort_by(f64::total_cmp);
    for w in times.windows(2) {
        if w[1] - w[0] < 1e-6 * period {
            return Err(KeplerError::NonDiscreteZeroSet(w[0], w[1]));
        }
    }
    if times.len() >= 2 {
        let wrap = times[0] + period - times[times.len() - 1];
        if wrap < 1e-6 * period {
            return Err(KeplerError::NonDiscreteZeroSet(
                times[times.len() - 1],
                times[0],
            ));
        }
    }

    let mut direction_jump: f64 = 0.0;
    let mut energy_jump: f64 = 0.0;
    for &t0 in &times {
        let before = fit_collision_asymptote(&side_samples(orbit, t0, -1.0), t0)?;
        let after = fit_collision_asymptote(&side_samples(orbit, t0, 1.0), t0)?;
        direction_jump = direction_jump.max((before.direction() - after.direction()).norm());
        energy_jump = energy_jump.max((before.energy_limit - after.energy_limit).abs());
    }
    Ok(GeneralizedOrbitCheck {
        collision_times: times,
        direction_jump,
        energy_jump,
        zset_discrete: true,
    })
}

/// The samples closest to `t0` on one side, with times shifted by whole
/// periods when the collision sits near the ends of the sampled window.
fn side_samples(orbit: &SampledOrbit, t0: f64, side: f64) -> Vec<PhysState> {
    let period = orbit.period;
    let mut cand: Vec<(f64, PhysState)> = orbit
        .samples
        .iter()
        .filter_map(|s| {
            let mut dt = s.t - t0;
            dt -= period * (dt / period).round();
            if dt * side > 0.0 {
                Some((dt.abs(), PhysState::new(s.u, s.v, t0 + dt)))
            } else {
                None
            }
        })
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0));
    cand.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-15 * period);
    let mut out: Vec<PhysState> = Vec::with_capacity(SIDE_SAMPLES);
    for (_, s) in cand {
        if out.len() == SIDE_SAMPLES {
            break;
        }
        if let Some(prev) = out.last() {
            if s.u.norm() <= prev.u.norm() {
                break;
            }
        }
        out.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{propagate, IntegratorConfig, OutOfDomain};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn unperturbed() -> Unperturbed {
        Unperturbed {
            period: 2.0 * PI,
            radius: 100.0,
        }
    }

    #[test]
    fn rhs_examples() {
        let p = unperturbed();
        let s = PhysState::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.3, 0.2, 0.0), 0.0);
        assert_eq!(kepler_rhs(&s, &p, 0.0).unwrap(), Vec3::new(-1.0, 0.0, 0.0));
        let s = PhysState::new(Vec3::new(0.0, 2.0, 0.0), Vec3::zeros(), 0.0);
        assert_eq!(kepler_rhs(&s, &p, 0.0).unwrap(), Vec3::new(0.0, -0.25, 0.0));
        let s0 = PhysState::new(Vec3::zeros(), Vec3::zeros(), 0.0);
        assert_eq!(kepler_rhs(&s0, &p, 0.0), Err(KeplerError::AtCollision));
        let far = PhysState::new(Vec3::new(200.0, 0.0, 0.0), Vec3::zeros(), 0.0);
        assert!(matches!(
            kepler_rhs(&far, &p, 0.0),
            Err(KeplerError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn rhs_adds_scaled_gradient() {
        let p = PeriodicLinear {
            period: 1.0,
            radius: 1.0,
            coeff: Vec3::new(0.5, -1.0, 2.0),
            hessian: 0.3,
        };
        let s = PhysState::new(Vec3::new(0.2, 0.1, -0.1), Vec3::zeros(), 0.1);
        let acc = kepler_rhs(&s, &p, 0.01).unwrap();
        let r = s.u.norm();
        let expect = -s.u / r.powi(3) + p.grad_u(0.1, &s.u, 0.01) * 0.01;
        assert!((acc - expect).norm() < 1e-14);
        assert!(matches!(
            kepler_rhs(&s, &p, 2.0),
            Err(KeplerError::EpsOutOfRange { .. })
        ));
    }

    #[test]
    fn energy_examples() {
        let e = |u: [f64; 3], v: [f64; 3]| {
            kepler_energy(&PhysState::new(Vec3::from(u), Vec3::from(v), 0.0)).unwrap()
        };
        assert_abs_diff_eq!(e([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            e([1.0, 0.0, 0.0], [0.0, 2f64.sqrt(), 0.0]),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(e([2.0, 0.0, 0.0], [0.0, 0.0, 0.0]), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn direction_examples() {
        let d =
            |u: [f64; 3]| direction(&PhysState::new(Vec3::from(u), Vec3::zeros(), 0.0)).unwrap();
        assert_eq!(d([3.0, 0.0, 0.0]), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(d([0.0, -5.0, 0.0]), Vec3::new(0.0, -1.0, 0.0));
        assert!((d([1.0, 1.0, 1.0]) - Vec3::new(1.0, 1.0, 1.0) / 3f64.sqrt()).norm() < 1e-15);
    }

    #[test]
    fn periodic_linear_gradient_and_time_derivative() {
        let p = PeriodicLinear {
            period: 0.7,
            radius: 1.0,
            coeff: Vec3::new(0.5, -1.0, 2.0),
            hessian: 0.3,
        };
        let u = Vec3::new(0.2, -0.3, 0.1);
        let t = 0.33;
        let ev = p.eval(t, &u, 0.0);
        let h = 1e-6;
        for c in 0..3 {
            let mut up = u;
            let mut um = u;
            up[c] += h;
            um[c] -= h;
            let fd = (p.value(t, &up, 0.0) - p.value(t, &um, 0.0)) / (2.0 * h);
            assert!((fd - ev.grad_u[c]).abs() < 1e-8);
        }
        let fd_t = (p.value(t + h, &u, 0.0) - p.value(t - h, &u, 0.0)) / (2.0 * h);
        assert!((fd_t - ev.dt).abs() < 1e-7);
        assert!((p.value(t + 0.7, &u, 0.0) - ev.value).abs() < 1e-12);
    }

    /// Rectilinear fall from rest at `r0`, integrated in physical variables
    /// until `|u| = r_stop`. Returns samples and the collision time: closed
    /// form `π r0^{3/2} / (2√2)` when unperturbed, else extrapolated.
    fn rectilinear_fall(
        r0: f64,
        dir: Vec3,
        eps: f64,
        pert: &dyn PerturbationModel,
        r_stop: f64,
    ) -> (Vec<PhysState>, f64) {
        let sys = |t: f64, y: &[f64; 6]| -> Result<[f64; 6], OutOfDomain> {
            let s = PhysState::new(Vec3::new(y[0], y[1], y[2]), Vec3::new(y[3], y[4], y[5]), t);
            let a = kepler_rhs(&s, pert, eps).map_err(|e| OutOfDomain(e.to_string()))?;
            Ok([y[3], y[4], y[5], a.x, a.y, a.z])
        };
        let u0 = dir * r0;
        let cfg = IntegratorConfig::with_tol(1e-14).dense();
        let stop = crate::flow::EventSpec::new(move |_t, y: &[f64; 6]| {
            (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt() - r_stop
        })
        .terminal();
        let tr = propagate(
            &sys,
            0.0,
            [u0.x, u0.y, u0.z, 0.0, 0.0, 0.0],
            10.0 * r0.powf(1.5),
            &cfg,
            &[stop],
        )
        .unwrap();
        let t_end = tr.s_final();
        let t0 = if eps == 0.0 {
            PI * r0.powf(1.5) / (2.0 * 2f64.sqrt())
        } else {
            let y = tr.y_final();
            let r_end = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
            t_end + (r_end / 4.5f64.powf(1.0 / 3.0)).powf(1.5)
        };
        // geometric spacing in distance to the collision
        let tau_end = t0 - t_end;
        let mut samples = Vec::new();
        let mut tau = tau_end.max(0.0);
        while t0 - tau > 0.0 && tau < 1e-2 {
            let t = (t0 - tau).min(t_end);
            let y = tr.eval(t).unwrap();
            samples.push(PhysState::new(
                Vec3::new(y[0], y[1], y[2]),
                Vec3::new(y[3], y[4], y[5]),
                t,
            ));
            tau *= 1.25;
        }
        samples.sort_by(|a, b| a.t.total_cmp(&b.t));
        samples.dedup_by(|a, b| a.t == b.t);
        (samples, t0)
    }

    fn near_collision_samples(all: &[PhysState], t0: f64, max_dt: f64) -> Vec<PhysState> {
        all.iter()
            .filter(|s| (t0 - s.t).abs() < max_dt)
            .cloned()
            .collect()
    }

    #[test]
    fn rectilinear_leading_coefficient() {
        let p = unperturbed();
        let (all, t0) = rectilinear_fall(1.0, Vec3::new(0.0, 0.6, 0.8), 0.0, &p, 1e-3);
        let samples = near_collision_samples(&all, t0, 3e-4);
        assert!(samples.len() >= 8, "{} samples", samples.len());
        let fit = fit_collision_asymptote(&samples, t0).unwrap();
        let expect = 4.5f64.powf(1.0 / 3.0);
        assert!(
            (fit.a.norm() - expect).abs() < 1e-4,
            "|a| = {}",
            fit.a.norm()
        );
        assert!((fit.direction() - Vec3::new(0.0, 0.6, 0.8)).norm() < 1e-10);
        assert!(
            (fit.energy_limit + 1.0).abs() < 1e-8,
            "E = {}",
            fit.energy_limit
        );
        assert_eq!(fit.side, -1);

        // ejection is the time mirror of the collision
        let mirrored: Vec<PhysState> = samples
            .iter()
            .map(|s| PhysState::new(s.u, -s.v, 2.0 * t0 - s.t))
            .collect();
        let fit_m = fit_collision_asymptote(&mirrored, t0).unwrap();
        assert!((fit_m.a - fit.a).norm() < 1e-12);
        assert_eq!(fit_m.side, 1);
    }

    #[test]
    fn perturbed_fit_moves_by_order_eps() {
        let p = PeriodicLinear {
            period: 1.0,
            radius: 10.0,
            coeff: Vec3::new(0.3, 0.2, -0.1),
            hessian: 0.5,
        };
        let dir = Vec3::new(1.0, 0.0, 0.0);
        let (all0, t0) = rectilinear_fall(1.0, dir, 0.0, &p, 1e-3);
        let fit0 = fit_collision_asymptote(&near_collision_samples(&all0, t0, 3e-4), t0).unwrap();
        let eps = 1e-3;
        let (all1, t0e) = rectilinear_fall(1.0, dir, eps, &p, 1e-3);
        let fit1 = fit_collision_asymptote(&near_collision_samples(&all1, t0e, 3e-4), t0e).unwrap();
        let diff = (fit1.a - fit0.a).norm();
        assert!(diff < 50.0 * eps, "diff {diff}");
    }

    #[test]
    fn fit_rejects_bad_input() {
        let few: Vec<PhysState> = (1..5)
            .map(|n| PhysState::new(Vec3::new(n as f64, 0.0, 0.0), Vec3::zeros(), -(n as f64)))
            .collect();
        assert!(matches!(
            fit_collision_asymptote(&few, 0.0),
            Err(KeplerError::BadFit(_))
        ));
        // linear approach u ∝ τ is not of Sperling type
        let lin: Vec<PhysState> = (1..12)
            .map(|n| {
                let tau = 1e-3 * 1.5f64.powi(n);
                PhysState::new(Vec3::new(tau, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), -tau)
            })
            .collect();
        assert!(matches!(
            fit_collision_asymptote(&lin, 0.0),
            Err(KeplerError::BadFit(_))
        ));
    }

    fn bounce_orbit(reflect: bool) -> SampledOrbit {
        // exact rectilinear Kepler orbit: u = c τ^{2/3}(1 + ...) is not closed
        // form, so use the leading Sperling term with zero energy correction
        let c = 4.5f64.powf(1.0 / 3.0);
        let dir = Vec3::new(0.0, 0.0, 1.0);
        let t0 = 0.5;
        let mut samples = Vec::new();
        for n in 0..40 {
            let tau = 0.2 * 0.7f64.powi(n);
            for side in [-1.0, 1.0] {
                let t = t0 + side * tau;
                let d = if reflect && side > 0.0 { -dir } else { dir };
                let u = d * (c * tau.powf(2.0 / 3.0));
                let v = d * (side * 2.0 / 3.0 * c * tau.powf(-1.0 / 3.0));
                samples.push(PhysState::new(u, v, t));
            }
        }
        samples.sort_by(|a, b| a.t.total_cmp(&b.t));
        SampledOrbit {
            period: 1.0,
            samples,
            collision_times: vec![t0],
        }
    }

    #[test]
    fn generalized_check_accepts_bounce_and_rejects_reflection() {
        let ok = check_generalized(&bounce_orbit(false)).unwrap();
        assert!(ok.passed(), "{ok:?}");
        let bad = check_generalized(&bounce_orbit(true)).unwrap();
        assert!((bad.direction_jump - 2.0).abs() < 1e-9);
        assert!(!bad.passed());
    }

    #[test]
    fn generalized_check_collisionless_and_clustered() {
        let circle = SampledOrbit {
            period: 2.0 * PI,
            samples: (0..=100)
                .map(|n| {
                    let t = 2.0 * PI * n as f64 / 100.0;
                    PhysState::new(
                        Vec3::new(t.cos(), t.sin(), 0.0),
                        Vec3::new(-t.sin(), t.cos(), 0.0),
                        t,
                    )
                })
                .collect(),
            collision_times: vec![],
        };
        let chk = check_generalized(&circle).unwrap();
        assert!(
            chk.collision_times.is_empty() && chk.direction_jump == 0.0 && chk.energy_jump == 0.0
        );
        let mut clustered = circle.clone();
        clustered.collision_times = vec![1.0, 1.0 + 1e-9];
        assert!(matches!(
            check_generalized(&clustered),
            Err(KeplerError::NonDiscreteZeroSet(..))
        ));
    }
}
