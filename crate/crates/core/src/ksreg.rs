//! Kustaanheimo–Stiefel regularization on the extended phase space
//! `ℍ × ℍ × 𝕋 × ℝ`.
//!
//! The regularized Hamiltonian is
//! `K_ε = |w|²/8 + τ|z|² − 1 − ε|z|²U(t, z̄iz, ε)` with symplectic form
//! `Σ dz_l ∧ dw_l + dt ∧ dτ`, so that on `K_ε = 0`, `Re(z̄iw) = 0` the
//! physical curve `u = z̄iz` solves the forced Kepler problem in Sundman time
//! `dt/ds = |z|²`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{propagate, EventSpec, FlowError, IntegratorConfig, OutOfDomain, Trajectory};
use crate::kepler::{self, KeplerError, PerturbationModel, PhysState, Vec3};
use crate::pathlift::{lift_ppath, LiftError, LiftResult, PPath, PathPiece};
use crate::quat::{hopf_section, ks_map, ImQuaternion, Quaternion};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KsError {
    #[error("|z|² = {z_norm_sq} outside the domain (radius {radius})")]
    OutsideDomain { z_norm_sq: f64, radius: f64 },
    #[error("state is at a collision (|z| = {0})")]
    AtCollision(f64),
    #[error(transparent)]
    Kepler(#[from] KeplerError),
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error("invalid trajectory: {0}")]
    BadTrajectory(String),
}

/// `|z|` below which physical velocities are not reconstructed.
pub const COLLISION_Z_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSState {
    pub z: Quaternion,
    pub w: Quaternion,
    /// Real lift of the periodic time.
    pub t: f64,
    pub tau: f64,
}

impl KSState {
    pub fn new(z: Quaternion, w: Quaternion, t: f64, tau: f64) -> Self {
        KSState { z, w, t, tau }
    }

    /// Flat layout `(z₀..z₃, w₀..w₃, t, τ)`.
    pub fn to_array(&self) -> [f64; 10] {
        let z = self.z.to_array();
        let w = self.w.to_array();
        [
            z[0], z[1], z[2], z[3], w[0], w[1], w[2], w[3], self.t, self.tau,
        ]
    }

    pub fn from_array(a: &[f64; 10]) -> Self {
        KSState {
            z: Quaternion::new(a[0], a[1], a[2], a[3]),
            w: Quaternion::new(a[4], a[5], a[6], a[7]),
            t: a[8],
            tau: a[9],
        }
    }

    pub fn distance(&self, o: &KSState) -> f64 {
        let a = self.to_array();
        let b = o.to_array();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

fn check_domain(z: Quaternion, pert: &dyn PerturbationModel) -> Result<(), KsError> {
    let z_norm_sq = z.norm_sq();
    let radius = pert.domain_radius();
    if z_norm_sq < radius {
        Ok(())
    } else {
        Err(KsError::OutsideDomain { z_norm_sq, radius })
    }
}

/// `K_ε(X)`.
pub fn hamiltonian(x: &KSState, pert: &dyn PerturbationModel, eps: f64) -> Result<f64, KsError> {
    check_domain(x.z, pert)?;
    let r2 = x.z.norm_sq();
    let mut k = x.w.norm_sq() / 8.0 + x.tau * r2 - 1.0;
    if eps != 0.0 {
        let u = ks_map(x.z).vec();
        k -= eps * r2 * pert.value(x.t, &u, eps);
    }
    Ok(k)
}

/// `∇_z (U∘Π)(z)` for `A = ∇ᵤU` at `u = Π(z)`: the quaternion `−2 i z A`.
pub fn pullback_gradient(z: Quaternion, grad_u: &Vec3) -> Quaternion {
    let a = Quaternion::new(0.0, grad_u.x, grad_u.y, grad_u.z);
    (Quaternion::I * z * a).scale(-2.0)
}

/// Hamilton's equations of `K_ε`, derivative with respect to the fictitious
/// time `s`.
pub fn vector_field(
    x: &KSState,
    pert: &dyn PerturbationModel,
    eps: f64,
) -> Result<KSState, KsError> {
    check_domain(x.z, pert)?;
    let r2 = x.z.norm_sq();
    let mut dw = x.z.scale(-2.0 * x.tau);
    let mut dtau = 0.0;
    if eps != 0.0 {
        let u = ks_map(x.z).vec();
        let ev = pert.eval(x.t, &u, eps);
        // ∇_z(|z|²U) = 2Uz + |z|² ∇_z(U∘Π)
        let grad_p = x.z.scale(2.0 * ev.value) + pullback_gradient(x.z, &ev.grad_u).scale(r2);
        dw += grad_p.scale(eps);
        dtau = eps * r2 * ev.dt;
    }
    Ok(KSState {
        z: x.w.scale(0.25),
        w: dw,
        t: r2,
        tau: dtau,
    })
}

/// `Re(z̄ i w)`, the moment map of the circle action.
pub fn bl_moment(x: &KSState) -> f64 {
    bl_full(x).re
}

/// The full quaternion `z̄ i w` (diagnostic only).
pub fn bl_full(x: &KSState) -> Quaternion {
    x.z.conj() * Quaternion::I * x.w
}

pub fn ks_to_phys(x: &KSState) -> Result<PhysState, KsError> {
    let r = x.z.norm();
    if r <= COLLISION_Z_TOL {
        return Err(KsError::AtCollision(r));
    }
    let zp = x.w.scale(0.25);
    let num = zp.conj() * Quaternion::I * x.z + x.z.conj() * Quaternion::I * zp;
    Ok(PhysState {
        u: ks_map(x.z).vec(),
        v: num.im().vec() / (r * r),
        t: x.t,
    })
}

/// Horizontal KS lift of a physical state: `z = |u|^{1/2} e^{iφ} Σ(u/|u|)`,
/// `w = −2 i z v`, `τ = −E + εU`.
pub fn phys_to_ks(
    state: &PhysState,
    fiber_phase: f64,
    pert: &dyn PerturbationModel,
    eps: f64,
) -> Result<KSState, KsError> {
    let r = state.u.norm();
    if r == 0.0 {
        return Err(KsError::AtCollision(0.0));
    }
    pert.check_domain(&state.u)?;
    let sigma = hopf_section(ImQuaternion(state.u / r));
    let z = Quaternion::unit_complex(fiber_phase) * sigma.scale(r.sqrt());
    let v = Quaternion::new(0.0, state.v.x, state.v.y, state.v.z);
    let w = (Quaternion::I * z * v).scale(-2.0);
    let mut tau = -kepler::kepler_energy(state)?;
    if eps != 0.0 {
        tau += eps * pert.value(state.t, &state.u, eps);
    }
    Ok(KSState {
        z,
        w,
        t: state.t,
        tau,
    })
}

/// The KS vector field as an ODE on `ℝ¹⁰`.
pub struct KsSystem<'a> {
    pub pert: &'a dyn PerturbationModel,
    pub eps: f64,
}

impl crate::flow::OdeSystem<10> for KsSystem<'_> {
    fn rhs(&self, _s: f64, y: &[f64; 10]) -> Result<[f64; 10], OutOfDomain> {
        vector_field(&KSState::from_array(y), self.pert, self.eps)
            .map(|d| d.to_array())
            .map_err(|e| OutOfDomain(e.to_string()))
    }
}

/// Integrates the KS flow from `x0` over fictitious time `[0, s_end]`.
pub fn ks_propagate(
    x0: &KSState,
    s_end: f64,
    pert: &dyn PerturbationModel,
    eps: f64,
    cfg: &IntegratorConfig,
    events: &[EventSpec<'_, 10>],
) -> Result<Trajectory<10>, FlowError> {
    let sys = KsSystem { pert, eps };
    propagate(&sys, 0.0, x0.to_array(), s_end, cfg, events)
}

const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Sundman time `t(s) = t₀ + ∫|z|² ds` at the grid points, by 8-point
/// Gauss–Legendre quadrature on each grid cell.
pub fn sundman_time(z_of_s: impl Fn(f64) -> Quaternion, s_grid: &[f64], t0: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(s_grid.len());
    let mut t = t0;
    for (n, &s) in s_grid.iter().enumerate() {
        if n > 0 {
            let (a, b) = (s_grid[n - 1], s);
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            let mut acc = 0.0;
            for (x, wgt) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
                acc += wgt * z_of_s(mid + half * x).norm_sq();
            }
            t += half * acc;
        }
        out.push(t);
    }
    out
}

/// A circular periodic orbit of the unperturbed KS flow on `τ = τ_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedOrbit {
    pub k: u32,
    pub period: f64,
    pub tau_k: f64,
    pub rho: f64,
    pub omega: f64,
    /// Physical rotation `u ↦ q u q̄` applied to the base circle in the
    /// `i`–`k` plane.
    pub orientation: Quaternion,
    pub t0: f64,
    /// Period in `s` of one KS oscillation, advancing `t` by `T/k`.
    pub s_period: f64,
}

pub fn tau_k(k: u32, period: f64) -> f64 {
    (2f64.sqrt() * k as f64 * PI / period).powf(2.0 / 3.0)
}

/// Closed-form seed `z(s) = ρ(cos ωs + j sin ωs)·q̄`, `w = 4z′`.
pub fn make_seed(k: u32, period: f64, orientation: Quaternion, t0: f64) -> SeedOrbit {
    assert!(k >= 1, "revolution count must be positive");
    let tau = tau_k(k, period);
    let omega = (tau / 2.0).sqrt();
    SeedOrbit {
        k,
        period,
        tau_k: tau,
        rho: (2.0 * tau).powf(-0.5),
        omega,
        orientation: orientation.normalize(),
        t0,
        s_period: 2.0 * PI / omega,
    }
}

impl SeedOrbit {
    pub fn state_at(&self, s: f64) -> KSState {
        let (sn, cs) = (self.omega * s).sin_cos();
        let qc = self.orientation.conj();
        let z = Quaternion::new(cs, 0.0, sn, 0.0).scale(self.rho) * qc;
        let w = Quaternion::new(-sn, 0.0, cs, 0.0).scale(4.0 * self.rho * self.omega) * qc;
        KSState {
            z,
            w,
            t: self.t0 + self.rho * self.rho * s,
            tau: self.tau_k,
        }
    }

    pub fn state0(&self) -> KSState {
        self.state_at(0.0)
    }

    /// Fictitious time for `k` oscillations, i.e. `t` advancing by `T`.
    pub fn full_s_period(&self) -> f64 {
        self.k as f64 * self.s_period
    }

    /// Physical radius `ρ² = 1/(2τ_k)`.
    pub fn phys_radius(&self) -> f64 {
        self.rho * self.rho
    }
}

/// A physical trajectory over one period given by an evaluator that is valid
/// away from the listed collision times.
#[derive(Clone)]
pub struct PhysTrajectory {
    pub period: f64,
    pub t_start: f64,
    /// Collision times in `(t_start, t_start + period)`.
    pub collision_times: Vec<f64>,
    pub state: Arc<dyn Fn(f64) -> PhysState + Send + Sync>,
}

/// KS reconstruction of a generalized periodic solution.
pub struct KsLift {
    pub traj: PhysTrajectory,
    pub lift: LiftResult,
}

/// Lifts `σ = u/|u|` horizontally and sets `z = ±|u|^{1/2} Σ`, the sign
/// flipping at each collision so that `z` and `w` pass smoothly through `0`.
pub fn lift_trajectory(traj: &PhysTrajectory, start_phase: f64) -> Result<KsLift, KsError> {
    let t_end = traj.t_start + traj.period;
    let mut partition = vec![traj.t_start];
    let mut colls = traj.collision_times.clone();
    colls.sort_by(f64::total_cmp);
    let gap = 1e-6 * traj.period;
    for &c in &colls {
        if !(c - partition.last().unwrap() > gap && t_end - c > gap) {
            return Err(KsError::BadTrajectory(format!(
                "collision time {c} not strictly inside the period window"
            )));
        }
        partition.push(c);
    }
    partition.push(t_end);
    let n = partition.len() - 1;
    let mut pieces: Vec<Arc<dyn PathPiece>> = Vec::with_capacity(n);
    for _ in 0..n {
        let f = traj.state.clone();
        pieces.push(Arc::new(move |t: f64| {
            let st = f(t);
            let r = st.u.norm();
            let sigma = st.u / r;
            let sigma_dot = (st.v * (r * r) - st.u * st.u.dot(&st.v)) / (r * r * r);
            (sigma, sigma_dot)
        }));
    }
    let path = PPath::new(partition, pieces)?;
    let s0 = (traj.state)(traj.t_start);
    let r0 = s0.u.norm();
    if r0 == 0.0 {
        return Err(KsError::AtCollision(0.0));
    }
    let start = Quaternion::unit_complex(start_phase) * hopf_section(ImQuaternion(s0.u / r0));
    let lift = lift_ppath(&path, start)?;
    Ok(KsLift {
        traj: traj.clone(),
        lift,
    })
}

impl KsLift {
    fn sign_at(&self, t: f64) -> f64 {
        let n = self.traj.collision_times.iter().filter(|&&c| c < t).count();
        if n % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// KS state over physical time `t`; at a collision `z = 0` and `w` is the
    /// one-sided limit taken from just before.
    pub fn state(
        &self,
        t: f64,
        pert: &dyn PerturbationModel,
        eps: f64,
    ) -> Result<KSState, KsError> {
        let near = self
            .traj
            .collision_times
            .iter()
            .find(|&&c| (c - t).abs() < 1e-12 * self.traj.period);
        if let Some(&c) = near {
            let before = self.state(c - 1e-9 * self.traj.period, pert, eps)?;
            return Ok(KSState {
                z: Quaternion::ZERO,
                w: before.w,
                t,
                tau: before.tau,
            });
        }
        let st = (self.traj.state)(t);
        let r = st.u.norm();
        let sign = self.sign_at(t);
        let gamma = self.lift.lift.eval(t);
        let gamma_dot = self.lift.lift.velocity(t)?;
        let rs = r.sqrt();
        let z = gamma.scale(sign * rs);
        // w = 4|u| dz/dt
        let dz = gamma.scale(st.u.dot(&st.v) / (2.0 * r * rs)) + gamma_dot.scale(rs);
        let w = dz.scale(4.0 * r * sign);
        let mut tau = -(0.5 * st.v.norm_squared() - 1.0 / r);
        if eps != 0.0 {
            tau += eps * pert.value(t, &st.u, eps);
        }
        Ok(KSState { z, w, t, tau })
    }

    /// Boundary twist `z(t_start + T) = g z(t_start)` including the collision
    /// sign flips.
    pub fn boundary_twist(&self) -> Option<Quaternion> {
        let g = self.lift.holonomy?;
        let n = self.traj.collision_times.len();
        Some(if n.is_multiple_of(2) { g } else { -g })
    }
}

/// The physical direction of `Π(z)` as a vector.
pub fn phys_position(z: Quaternion) -> Vector3<f64> {
    ks_map(z).vec()
}
