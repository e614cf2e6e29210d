//! Twisted periodic orbits of the KS flow, found by shooting from the
//! unperturbed circular orbits.
//!
//! The unknowns are `(X₀, S, θ)` with `X₀ = (z, w, t₀, τ₀)`. A solution
//! satisfies `X(S) = g_θ ∗ X₀` with `t(S) = t₀ + T`, lies on `K_ε = 0` and on
//! the zero level of the moment map. Two linear pins at the seed remove the
//! time-shift and gauge directions; the remaining near-degeneracy of the
//! unperturbed problem is left to the least-squares solver.

use std::f64::consts::{PI, TAU};

use log::{debug, info, trace, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{
    propagate, propagate_on_mesh, EventSpec, FlowError, IntegratorConfig, OdeSystem, OutOfDomain,
    Trajectory,
};
use crate::kepler::{
    check_generalized, GeneralizedOrbitCheck, KeplerError, PerturbationModel, PhysState,
    SampledOrbit,
};
use crate::ksreg::{
    bl_moment, hamiltonian, ks_to_phys, make_seed, vector_field, KSState, KsError, KsSystem,
    SeedOrbit,
};
use crate::quat::{circle_act, Quaternion};

pub const N_UNKNOWNS: usize = 12;
pub const N_RESIDUALS: usize = 14;
/// Accepted shooting residual.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Collision threshold on `|z|`, relative to the seed amplitude.
pub const COLLISION_REL: f64 = 1e-6;
/// Maximum distance between physical orbits identified by [`dedup`].
pub const DEDUP_TOL: f64 = 1e-6;
const MAX_ITER: usize = 100;
const FD_STEP: f64 = 1e-6;
/// A stalled iteration below this residual is accepted; the final adaptive
/// check still applies.
const STALL_ACCEPT: f64 = 0.5 * RESIDUAL_TOL;
const LADDER_STEPS: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrbitError {
    #[error("seed for k = {k} has radius {radius} outside the domain (δ_u = {delta})")]
    SeedOutsideDomain { k: u32, radius: f64, delta: f64 },
    #[error("no convergence at eps = {eps} after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        eps: f64,
        iterations: usize,
        residual: f64,
        achieved_eps: Option<f64>,
    },
    #[error("found {found} of {target} distinct orbits")]
    TargetNotReached { found: usize, target: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Ks(#[from] KsError),
    #[error(transparent)]
    Kepler(#[from] KeplerError),
}

pub type Unknowns = [f64; N_UNKNOWNS];
pub type Residual = [f64; N_RESIDUALS];

/// The boundary-value problem for one seed at one `ε`.
pub struct ShootingProblem<'a> {
    pub pert: &'a dyn PerturbationModel,
    pub eps: f64,
    pub k: u32,
    pub period: f64,
    pub seed: KSState,
    /// Unit flow direction at the seed.
    pub flow_dir: [f64; 10],
    /// Unit generator of the circle action at the seed.
    pub s1_gen: [f64; 10],
    /// Tolerance of the adaptive runs.
    pub cfg: IntegratorConfig,
}

fn normalized(v: [f64; 10]) -> [f64; 10] {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / n)
}

fn dot10(a: &[f64; 10], b: &[f64; 10]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Flow of `S·F` over `σ ∈ [0, 1]`.
struct Scaled<'a> {
    ks: KsSystem<'a>,
    s_len: f64,
}

impl OdeSystem<10> for Scaled<'_> {
    fn rhs(&self, s: f64, y: &[f64; 10]) -> Result<[f64; 10], OutOfDomain> {
        Ok(self.ks.rhs(s, y)?.map(|v| v * self.s_len))
    }
}

impl<'a> ShootingProblem<'a> {
    pub fn new(
        pert: &'a dyn PerturbationModel,
        eps: f64,
        seed: &SeedOrbit,
    ) -> Result<Self, OrbitError> {
        let x = seed.state0();
        let f = vector_field(&x, pert, 0.0)?;
        let gen = KSState {
            z: Quaternion::I * x.z,
            w: Quaternion::I * x.w,
            t: 0.0,
            tau: 0.0,
        };
        Ok(ShootingProblem {
            pert,
            eps,
            k: seed.k,
            period: pert.period(),
            seed: x,
            flow_dir: normalized(f.to_array()),
            s1_gen: normalized(gen.to_array()),
            cfg: IntegratorConfig::with_tol(1e-13),
        })
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        ShootingProblem {
            pert: self.pert,
            eps,
            k: self.k,
            period: self.period,
            seed: self.seed,
            flow_dir: self.flow_dir,
            s1_gen: self.s1_gen,
            cfg: self.cfg,
        }
    }

    fn system(&self, s_len: f64) -> Scaled<'a> {
        Scaled {
            ks: KsSystem {
                pert: self.pert,
                eps: self.eps,
            },
            s_len,
        }
    }

    pub fn initial_unknowns(&self, seed: &SeedOrbit) -> Unknowns {
        pack(&seed.state0(), seed.full_s_period(), 0.0)
    }

    /// Adaptive run over one shooting period; returns the end state and the
    /// accepted mesh in `σ`.
    pub fn shoot(&self, x: &Unknowns) -> Result<([f64; 10], Vec<f64>), OrbitError> {
        let (x0, s_len, _) = unpack(x);
        let tr = propagate(&self.system(s_len), 0.0, x0.to_array(), 1.0, &self.cfg, &[])?;
        Ok((tr.y_final(), tr.s))
    }

    fn shoot_on_mesh(&self, x: &Unknowns, mesh: &[f64]) -> Result<[f64; 10], OrbitError> {
        let (x0, s_len, _) = unpack(x);
        Ok(propagate_on_mesh(&self.system(s_len), mesh, x0.to_array())?)
    }

    fn assemble(&self, x: &Unknowns, end: &[f64; 10]) -> Result<Residual, OrbitError> {
        let (x0, _, theta) = unpack(x);
        let y = KSState::from_array(end);
        let back = circle_act(-theta, &y);
        let a = x0.to_array();
        let b = back.to_array();
        let mut r = [0.0; N_RESIDUALS];
        for i in 0..8 {
            r[i] = b[i] - a[i];
        }
        r[8] = b[9] - a[9];
        r[9] = y.t - x0.t - self.period;
        r[10] = hamiltonian(&x0, self.pert, self.eps)?;
        r[11] = bl_moment(&x0);
        let mut d = [0.0; 10];
        let s = self.seed.to_array();
        for i in 0..10 {
            d[i] = a[i] - s[i];
        }
        r[12] = dot10(&d, &self.flow_dir);
        r[13] = dot10(&d, &self.s1_gen);
        Ok(r)
    }

    /// The 14 residual components, from an adaptive run.
    pub fn residual(&self, x: &Unknowns) -> Result<Residual, OrbitError> {
        let (end, _) = self.shoot(x)?;
        self.assemble(x, &end)
    }

    /// Residual with the flow map evaluated on a frozen mesh.
    pub fn residual_on_mesh(&self, x: &Unknowns, mesh: &[f64]) -> Result<Residual, OrbitError> {
        let end = self.shoot_on_mesh(x, mesh)?;
        self.assemble(x, &end)
    }

    /// Central-difference Jacobian on a frozen mesh, columns in parallel.
    /// The weakly determined directions of the unperturbed problem have
    /// singular values of order `ε`, below the truncation error of one-sided
    /// differences.
    pub fn jacobian(&self, x: &Unknowns, mesh: &[f64]) -> Result<DMatrix<f64>, OrbitError> {
        let cols: Vec<Result<Residual, OrbitError>> = (0..N_UNKNOWNS)
            .into_par_iter()
            .map(|j| {
                let h = FD_STEP * x[j].abs().max(1.0);
                let (mut xp, mut xm) = (*x, *x);
                xp[j] += h;
                xm[j] -= h;
                let h2 = xp[j] - xm[j];
                let rp = self.residual_on_mesh(&xp, mesh)?;
                let rm = self.residual_on_mesh(&xm, mesh)?;
                let mut col = [0.0; N_RESIDUALS];
                for i in 0..N_RESIDUALS {
                    col[i] = (rp[i] - rm[i]) / h2;
                }
                Ok(col)
            })
            .collect();
        let mut jac = DMatrix::zeros(N_RESIDUALS, N_UNKNOWNS);
        for (j, c) in cols.into_iter().enumerate() {
            let c = c?;
            for i in 0..N_RESIDUALS {
                jac[(i, j)] = c[i];
            }
        }
        Ok(jac)
    }
}

pub fn pack(x0: &KSState, s_len: f64, theta: f64) -> Unknowns {
    let a = x0.to_array();
    let mut x = [0.0; N_UNKNOWNS];
    x[..10].copy_from_slice(&a);
    x[10] = s_len;
    x[11] = theta;
    x
}

pub fn unpack(x: &Unknowns) -> (KSState, f64, f64) {
    let mut a = [0.0; 10];
    a.copy_from_slice(&x[..10]);
    (KSState::from_array(&a), x[10], x[11])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Levenberg–Marquardt with Nielsen's damping update. Each outer iteration
/// freezes the integration mesh of an adaptive run at the current point, so
/// the residual, its Jacobian and the trial step see the same discrete map.
pub fn levenberg_marquardt(
    prob: &ShootingProblem<'_>,
    x_start: Unknowns,
    stop_tol: f64,
) -> (Unknowns, LmReport) {
    let mut x = x_start;
    let mut mu = -1.0;
    let mut nu = 2.0;
    let mut last = f64::INFINITY;
    for iter in 0..MAX_ITER {
        let mesh = match prob.shoot(&x) {
            Ok((_, m)) => m,
            Err(e) => {
                debug!("lm: adaptive run failed at iteration {iter}: {e}");
                return (
                    x,
                    LmReport {
                        iterations: iter,
                        residual: last,
                        converged: false,
                    },
                );
            }
        };
        let r = match prob.residual_on_mesh(&x, &mesh) {
            Ok(r) => r,
            Err(_) => {
                return (
                    x,
                    LmReport {
                        iterations: iter,
                        residual: last,
                        converged: false,
                    },
                )
            }
        };
        let rn = norm(&r);
        last = rn;
        if rn < stop_tol {
            return (
                x,
                LmReport {
                    iterations: iter,
                    residual: rn,
                    converged: true,
                },
            );
        }
        let jac = match prob.jacobian(&x, &mesh) {
            Ok(j) => j,
            Err(_) => {
                return (
                    x,
                    LmReport {
                        iterations: iter,
                        residual: rn,
                        converged: false,
                    },
                )
            }
        };
        let svd = jac.clone().svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let sig = svd.singular_values;
        let rv = DVector::from_column_slice(&r);
        if mu < 0.0 {
            mu = 1e-3 * sig.max().powi(2);
        }
        trace!("lm: iteration {iter}, residual {rn:.3e}, damping {mu:.2e}, smallest singular value {:.2e}", sig.min());
        let solve_damped = |rhs: &DVector<f64>, mu: f64| {
            let urhs = u.transpose() * rhs;
            let mut coef = DVector::zeros(sig.len());
            for i in 0..sig.len() {
                coef[i] = -sig[i] / (sig[i] * sig[i] + mu) * urhs[i];
            }
            vt.transpose() * coef
        };
        let mut accepted = false;
        for _ in 0..40 {
            let delta = solve_damped(&rv, mu);
            let lin = &rv + &jac * &delta;
            let predicted = rn * rn - lin.norm_squared();
            let step_small = delta.norm() <= 1e-15 * (norm(&x) + 1e-15);
            // geodesic acceleration: second directional derivative of the
            // residual along `delta`, from one extra evaluation
            let shifted = |v: &DVector<f64>, c: f64| {
                let mut xn = x;
                for j in 0..N_UNKNOWNS {
                    xn[j] += c * v[j];
                }
                xn
            };
            let hh = 0.1;
            let accel = prob
                .residual_on_mesh(&shifted(&delta, hh), &mesh)
                .ok()
                .map(|rh| {
                    let rvv = (DVector::from_column_slice(&rh) - &rv - &jac * &delta * hh)
                        * (2.0 / (hh * hh));
                    solve_damped(&rvv, mu)
                });
            // near convergence the second difference is dominated by
            // rounding; the plain step is used whenever the correction is
            // not small
            let step = match accel {
                Some(acc) if 2.0 * acc.norm() <= 0.75 * delta.norm() => &delta + acc * 0.5,
                _ => delta.clone(),
            };
            let xn = shifted(&step, 1.0);
            let actual = prob
                .residual_on_mesh(&xn, &mesh)
                .map(|rn2| rn * rn - norm(&rn2).powi(2))
                .unwrap_or(f64::NEG_INFINITY);
            if predicted > 0.0 && actual > 0.0 {
                let rho = actual / predicted;
                x = xn;
                mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                accepted = true;
                break;
            }
            if step_small {
                break;
            }
            mu *= nu;
            nu *= 2.0;
        }
        if !accepted {
            debug!("lm: stalled at iteration {iter} with residual {rn:e}");
            return (
                x,
                LmReport {
                    iterations: iter,
                    residual: rn,
                    converged: rn < STALL_ACCEPT,
                },
            );
        }
    }
    let rn = prob.residual(&x).map(|r| norm(&r)).unwrap_or(f64::INFINITY);
    (
        x,
        LmReport {
            iterations: MAX_ITER,
            residual: rn,
            converged: rn < stop_tol,
        },
    )
}

/// Reduces an angle to `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t > PI {
        t - TAU
    } else {
        t
    }
}

/// Where a seed came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed_index: usize,
    pub orientation: Quaternion,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub k: u32,
    pub eps: f64,
    pub period: f64,
    /// Shooting period in fictitious time.
    pub s_period: f64,
    /// Holonomy angle of the twisted boundary condition.
    pub theta: f64,
    pub x0: KSState,
    pub residual_norm: f64,
    pub drift_k: f64,
    pub drift_moment: f64,
    pub collision_count: usize,
    pub collision_times: Vec<f64>,
    pub physical_samples: Vec<PhysState>,
    pub eta: i64,
    pub provenance: Provenance,
}

impl OrbitRecord {
    pub fn unknowns(&self) -> Unknowns {
        pack(&self.x0, self.s_period, self.theta)
    }

    pub fn max_radius(&self) -> f64 {
        self.physical_samples
            .iter()
            .map(|s| s.u.norm())
            .fold(0.0, f64::max)
    }
}

/// Options for [`solve`] and [`find_orbits`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Tolerances of all adaptive runs.
    pub integrator: IntegratorConfig,
    /// Whether to fall back to the `ε`-ladder when the direct solve fails.
    pub ladder: bool,
    pub n_orient: usize,
    pub n_phase: usize,
    pub planar_only: bool,
    /// Orientation of the primaries' plane; planar seeds lie in it.
    pub base_orientation: Quaternion,
    /// Uniform samples per period in the reconstruction.
    pub n_samples: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            integrator: IntegratorConfig::with_tol(1e-13),
            ladder: true,
            n_orient: 1,
            n_phase: 1,
            planar_only: true,
            base_orientation: Quaternion::ONE,
            n_samples: 1024,
        }
    }
}

pub fn check_seed(pert: &dyn PerturbationModel, seed: &SeedOrbit) -> Result<(), OrbitError> {
    let radius = seed.phys_radius();
    let delta = pert.domain_radius();
    if radius < delta * (1.0 - 1e-9) {
        Ok(())
    } else {
        Err(OrbitError::SeedOutsideDomain {
            k: seed.k,
            radius,
            delta,
        })
    }
}

/// Solves the shooting problem from `seed` at `eps`, climbing the ladder
/// `ε/256, ε/128, …, ε` when the direct solve does not converge.
pub fn solve(
    pert: &dyn PerturbationModel,
    eps: f64,
    seed: &SeedOrbit,
    seed_index: usize,
    opts: &SolveOptions,
) -> Result<OrbitRecord, OrbitError> {
    check_seed(pert, seed)?;
    pert.check_eps(eps)?;
    let stop_tol = 0.1 * RESIDUAL_TOL;
    let mut prob = ShootingProblem::new(pert, eps, seed)?;
    prob.cfg = opts.integrator;
    let start = prob.initial_unknowns(seed);
    let prov = Provenance {
        seed_index,
        orientation: seed.orientation,
        phase: seed.t0,
    };

    let (x, rep) = levenberg_marquardt(&prob, start, stop_tol);
    if rep.converged {
        if let Ok(rec) = finish(&prob, x, prov, opts) {
            return Ok(rec);
        }
    }
    if !opts.ladder || eps == 0.0 {
        return Err(OrbitError::NoConvergence {
            eps,
            iterations: rep.iterations,
            residual: rep.residual,
            achieved_eps: None,
        });
    }
    debug!(
        "k = {}: direct solve failed (residual {:e}); climbing the ladder",
        seed.k, rep.residual
    );
    let x = continuation(&prob, start, stop_tol)?;
    finish(&prob, x, prov, opts)
}

/// Solves along `ε/256, ε/128, …, ε`, each rung started from the previous
/// solution.
pub fn continuation(
    prob: &ShootingProblem<'_>,
    start: Unknowns,
    stop_tol: f64,
) -> Result<Unknowns, OrbitError> {
    let mut x = start;
    let mut achieved = None;
    for n in 0..=LADDER_STEPS {
        let e = prob.eps / 2f64.powi((LADDER_STEPS - n) as i32);
        let (xn, rep) = levenberg_marquardt(&prob.with_eps(e), x, stop_tol);
        if !rep.converged {
            return Err(OrbitError::NoConvergence {
                eps: e,
                iterations: rep.iterations,
                residual: rep.residual,
                achieved_eps: achieved,
            });
        }
        x = xn;
        achieved = Some(e);
    }
    Ok(x)
}

fn finish(
    prob: &ShootingProblem<'_>,
    x: Unknowns,
    prov: Provenance,
    opts: &SolveOptions,
) -> Result<OrbitRecord, OrbitError> {
    let mut x = x;
    x[11] = wrap_angle(x[11]);
    let residual = norm(&prob.residual(&x)?);
    if !(residual < RESIDUAL_TOL) {
        return Err(OrbitError::NoConvergence {
            eps: prob.eps,
            iterations: MAX_ITER,
            residual,
            achieved_eps: None,
        });
    }
    let (x0, s_len, theta) = unpack(&x);
    let mut rec = OrbitRecord {
        k: prob.k,
        eps: prob.eps,
        period: prob.period,
        s_period: s_len,
        theta,
        x0,
        residual_norm: residual,
        drift_k: 0.0,
        drift_moment: 0.0,
        collision_count: 0,
        collision_times: Vec::new(),
        physical_samples: Vec::new(),
        eta: 0,
        provenance: prov,
    };
    let orbit = reconstruct(prob.pert, &rec, &opts.integrator)?;
    let (_, uniform) = orbit.sampled(opts.n_samples);
    rec.drift_k = orbit.drift_k;
    rec.drift_moment = orbit.drift_moment;
    rec.collision_times = orbit.collisions.iter().map(|c| c.1).collect();
    rec.collision_count = rec.collision_times.len();
    rec.eta = orbit.eta();
    let stride = (opts.n_samples / 128).max(1);
    rec.physical_samples = uniform.into_iter().step_by(stride).collect();
    Ok(rec)
}

/// The orbit of a record over one shooting period, with dense output.
pub struct OrbitTrajectory {
    pub traj: Trajectory<10>,
    pub s_period: f64,
    pub period: f64,
    pub t0: f64,
    /// `(s, t)` of every collision.
    pub collisions: Vec<(f64, f64)>,
    pub drift_k: f64,
    pub drift_moment: f64,
    /// Seed amplitude used for the collision threshold.
    pub rho: f64,
}

/// Re-propagates a record over one shooting period and locates collisions
/// as minima of `|z|` below `COLLISION_REL·ρ`.
pub fn reconstruct(
    pert: &dyn PerturbationModel,
    rec: &OrbitRecord,
    cfg: &IntegratorConfig,
) -> Result<OrbitTrajectory, OrbitError> {
    let cfg = (*cfg).dense();
    let ev =
        [
            EventSpec::new(|_s: f64, y: &[f64; 10]| (0..4).map(|i| y[i] * y[i + 4]).sum::<f64>())
                .direction(1),
        ];
    let sys = KsSystem { pert, eps: rec.eps };
    let traj = propagate(&sys, 0.0, rec.x0.to_array(), rec.s_period, &cfg, &ev)?;
    let rho = (0.5 / rec.x0.tau.abs()).sqrt().sqrt();
    let thr = COLLISION_REL * rho;
    let collisions = traj
        .events
        .iter()
        .filter(|h| (0..4).map(|i| h.y[i] * h.y[i]).sum::<f64>().sqrt() < thr)
        .filter(|h| h.s < rec.s_period * (1.0 - 1e-12))
        .map(|h| (h.s, h.y[8]))
        .collect();
    let mut drift_k: f64 = 0.0;
    let mut drift_moment: f64 = 0.0;
    for y in &traj.y {
        let st = KSState::from_array(y);
        drift_k = drift_k.max(hamiltonian(&st, pert, rec.eps)?.abs());
        drift_moment = drift_moment.max(bl_moment(&st).abs());
    }
    Ok(OrbitTrajectory {
        traj,
        s_period: rec.s_period,
        period: rec.period,
        t0: rec.x0.t,
        collisions,
        drift_k,
        drift_moment,
        rho,
    })
}

impl OrbitTrajectory {
    pub fn state_at_s(&self, s: f64) -> KSState {
        let s = s.clamp(0.0, self.s_period);
        KSState::from_array(&self.traj.eval(s).unwrap_or_else(|| self.traj.y_final()))
    }

    pub fn t_end(&self) -> f64 {
        self.traj.y_final()[8]
    }

    /// Winding count of `t` over one shooting period.
    pub fn eta(&self) -> i64 {
        ((self.t_end() - self.t0) / self.period).round() as i64
    }

    /// Inverts the Sundman time on the dense output.
    pub fn s_of_t(&self, t: f64) -> f64 {
        let ys = &self.traj.y;
        let n = ys.partition_point(|y| y[8] <= t);
        if n == 0 {
            return 0.0;
        }
        if n >= ys.len() {
            return self.s_period;
        }
        let (mut a, mut b) = (self.traj.s[n - 1], self.traj.s[n]);
        for _ in 0..64 {
            let m = 0.5 * (a + b);
            if self.state_at_s(m).t <= t {
                a = m;
            } else {
                b = m;
            }
            if b - a <= 1e-15 * b.abs().max(1.0) {
                break;
            }
        }
        0.5 * (a + b)
    }

    /// KS state at physical time `t`, reduced into the first period.
    pub fn state_at_time(&self, t: f64) -> KSState {
        let tr = self.t0 + (t - self.t0).rem_euclid(self.period);
        self.state_at_s(self.s_of_t(tr))
    }

    /// Physical position at time `t`.
    pub fn position_at_time(&self, t: f64) -> nalgebra::Vector3<f64> {
        crate::ksreg::phys_position(self.state_at_time(t).z)
    }

    /// Physical samples over `[t₀, t₀ + T]`: `n + 1` uniform in `s`, plus
    /// geometric refinements on both sides of each collision. The second
    /// value holds the uniform samples alone.
    pub fn sampled(&self, n: usize) -> (SampledOrbit, Vec<PhysState>) {
        let uniform: Vec<PhysState> = (0..=n)
            .filter_map(|i| ks_to_phys(&self.state_at_s(self.s_period * i as f64 / n as f64)).ok())
            .collect();
        let mut samples = uniform.clone();
        let osc = self.s_period / self.eta().max(1) as f64;
        for &(sc, _) in &self.collisions {
            // offsets below ~1e-3 of an oscillation put |t − t_c| under the
            // resolution of the absolute time
            let mut d = 0.02 * osc;
            while d > 4e-4 * osc {
                for s in [sc - d, sc + d] {
                    if s > 0.0 && s < self.s_period {
                        if let Ok(p) = ks_to_phys(&self.state_at_s(s)) {
                            samples.push(p);
                        }
                    }
                }
                d /= 1.25;
            }
        }
        samples.sort_by(|a, b| a.t.total_cmp(&b.t));
        let orbit = SampledOrbit {
            period: self.period,
            samples,
            collision_times: self.collisions.iter().map(|c| c.1).collect(),
        };
        (orbit, uniform)
    }

    pub fn check_generalized(&self, n: usize) -> Result<GeneralizedOrbitCheck, OrbitError> {
        Ok(check_generalized(&self.sampled(n).0)?)
    }
}

/// Largest distance between the physical positions of two orbits at `n`
/// common times.
pub fn orbit_distance(a: &OrbitTrajectory, b: &OrbitTrajectory, n: usize) -> f64 {
    (0..n)
        .map(|i| {
            let t = a.t0 + a.period * i as f64 / n as f64;
            (a.position_at_time(t) - b.position_at_time(t)).norm()
        })
        .fold(0.0, f64::max)
}

/// Merges records describing the same physical orbit. Records are compared
/// through their positions `u(t)`, which removes both the gauge and the
/// choice of initial point; records with different `k` are never merged.
/// The lowest-residual representative of each class is kept, in input order.
pub fn dedup(
    pert: &dyn PerturbationModel,
    records: &[OrbitRecord],
    cfg: &IntegratorConfig,
) -> Result<Vec<OrbitRecord>, OrbitError> {
    let orbits: Vec<OrbitTrajectory> = records
        .par_iter()
        .map(|r| reconstruct(pert, r, cfg))
        .collect::<Result<_, _>>()?;
    let mut class: Vec<usize> = (0..records.len()).collect();
    for i in 0..records.len() {
        if class[i] != i {
            continue;
        }
        for j in i + 1..records.len() {
            if class[j] == j
                && records[j].k == records[i].k
                && orbit_distance(&orbits[i], &orbits[j], 64) < DEDUP_TOL
            {
                class[j] = i;
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..records.len() {
        if class[i] != i {
            continue;
        }
        let best = (i..records.len())
            .filter(|&j| class[j] == i)
            .min_by(|&a, &b| {
                records[a]
                    .residual_norm
                    .total_cmp(&records[b].residual_norm)
            })
            .unwrap_or(i);
        out.push(records[best].clone());
    }
    Ok(out)
}

fn radical_inverse(mut n: usize, base: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut x = 0.0;
    while n > 0 {
        x += (n % base) as f64 * inv;
        n /= base;
        inv /= base as f64;
    }
    x
}

/// Unit quaternion from three numbers in `[0, 1)` (Shoemake's method).
fn shoemake(u1: f64, u2: f64, u3: f64) -> Quaternion {
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (s2, c2) = (TAU * u2).sin_cos();
    let (s3, c3) = (TAU * u3).sin_cos();
    Quaternion::new(a * s2, a * c2, b * s3, b * c3)
}

/// Orientation mapping the seed circle's plane onto the base plane.
/// `retrograde` reverses the sense of revolution.
pub fn planar_orientation(base: Quaternion, retrograde: bool) -> Quaternion {
    let angle = if retrograde { PI / 2.0 } else { -PI / 2.0 };
    (base * Quaternion::from_axis_angle(nalgebra::Vector3::x(), angle)).normalize()
}

/// Seeds on `Λ_k`: `n_orient` orientations times `n_phase` phases
/// `t₀ ∈ {0, T/(n_phase·k), …}`. Planar seeds alternate between prograde and
/// retrograde; spatial ones follow a Halton sequence on SO(3).
pub fn seed_grid(
    k: u32,
    period: f64,
    n_orient: usize,
    n_phase: usize,
    planar_only: bool,
    base: Quaternion,
) -> Vec<SeedOrbit> {
    assert!(n_orient >= 1 && n_phase >= 1, "empty seed grid");
    let orients: Vec<Quaternion> = (0..n_orient)
        .map(|n| {
            if planar_only {
                planar_orientation(base, n % 2 == 1)
            } else {
                let m = n + 1;
                shoemake(
                    radical_inverse(m, 2),
                    radical_inverse(m, 3),
                    radical_inverse(m, 5),
                )
            }
        })
        .collect();
    let mut out = Vec::with_capacity(n_orient * n_phase);
    for q in orients {
        for p in 0..n_phase {
            let t0 = period * p as f64 / (n_phase as f64 * k as f64);
            out.push(make_seed(k, period, q, t0));
        }
    }
    out
}

/// Per-`k` summary of a [`find_orbits`] run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KStats {
    pub k: u32,
    pub seeds: usize,
    pub converged: usize,
    pub distinct: usize,
    pub best_residual: Option<f64>,
    /// Largest `ε` reached by any seed (equal to the target on success).
    pub achieved_eps: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindReport {
    pub eps: f64,
    pub l_target: usize,
    pub records: Vec<OrbitRecord>,
    pub per_k: Vec<KStats>,
}

impl FindReport {
    pub fn target_reached(&self) -> bool {
        self.records.len() >= self.l_target
    }

    pub fn ensure_target(&self) -> Result<(), OrbitError> {
        if self.target_reached() {
            Ok(())
        } else {
            Err(OrbitError::TargetNotReached {
                found: self.records.len(),
                target: self.l_target,
            })
        }
    }
}

/// Runs seed grid, solve and dedup for each admissible `k` in turn until
/// `l_target` distinct orbits are found. A `k` whose seeds all fail is
/// retried once with twice the phase count.
pub fn find_orbits(
    pert: &dyn PerturbationModel,
    eps: f64,
    k_list: &[u32],
    l_target: usize,
    opts: &SolveOptions,
) -> FindReport {
    let period = pert.period();
    let mut report = FindReport {
        eps,
        l_target,
        records: Vec::new(),
        per_k: Vec::new(),
    };
    for &k in k_list {
        if report.target_reached() {
            break;
        }
        let mut stats = KStats {
            k,
            seeds: 0,
            converged: 0,
            distinct: 0,
            best_residual: None,
            achieved_eps: None,
            note: None,
        };
        let probe = make_seed(k, period, Quaternion::ONE, 0.0);
        if let Err(e) = check_seed(pert, &probe) {
            warn!("k = {k} rejected: {e}");
            stats.note = Some(e.to_string());
            report.per_k.push(stats);
            continue;
        }
        let mut found = Vec::new();
        for attempt in 0..2 {
            let n_phase = opts.n_phase << attempt;
            let seeds: Vec<(usize, SeedOrbit)> = seed_grid(
                k,
                period,
                opts.n_orient,
                n_phase,
                opts.planar_only,
                opts.base_orientation,
            )
            .into_iter()
            .enumerate()
            .filter(|(i, _)| attempt == 0 || (i % n_phase) % 2 == 1)
            .collect();
            stats.seeds += seeds.len();
            let results: Vec<Result<OrbitRecord, OrbitError>> = seeds
                .par_iter()
                .map(|(i, s)| solve(pert, eps, s, *i, opts))
                .collect();
            for r in results {
                match r {
                    Ok(rec) => {
                        stats.best_residual = Some(
                            stats
                                .best_residual
                                .map_or(rec.residual_norm, |b: f64| b.min(rec.residual_norm)),
                        );
                        stats.achieved_eps = Some(eps);
                        found.push(rec);
                    }
                    Err(OrbitError::NoConvergence { achieved_eps, .. }) => {
                        if stats.achieved_eps.is_none() {
                            stats.achieved_eps = achieved_eps;
                        } else if let Some(a) = achieved_eps {
                            stats.achieved_eps = stats.achieved_eps.map(|b| b.max(a));
                        }
                    }
                    Err(e) => debug!("k = {k}: seed failed: {e}"),
                }
            }
            if !found.is_empty() {
                break;
            }
            info!(
                "k = {k}: no seed converged; retrying with {} phases",
                n_phase * 2
            );
        }
        stats.converged = found.len();
        match dedup(pert, &found, &opts.integrator) {
            Ok(d) => {
                stats.distinct = d.len();
                report.records.extend(d);
            }
            Err(e) => stats.note = Some(format!("dedup failed: {e}")),
        }
        report.per_k.push(stats);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kepler::{PeriodicLinear, Unperturbed};
    use crate::ksreg::tau_k;
    use crate::quat::ks_map;
    use crate::rtbp::{build_perturbation, PrimariesFamily, RtbpPerturbation};
    use nalgebra::Vector3;

    fn tight() -> IntegratorConfig {
        IntegratorConfig::with_tol(1e-13)
    }

    fn free() -> Unperturbed {
        Unperturbed {
            period: 1.0,
            radius: 10.0,
        }
    }

    fn linear() -> PeriodicLinear {
        PeriodicLinear {
            period: 1.0,
            radius: 0.15,
            coeff: Vector3::new(0.3, -0.2, 0.1),
            hessian: 0.5,
        }
    }

    fn forced() -> RtbpPerturbation {
        build_perturbation(PrimariesFamily::default_family(0.3, TAU), 1e-2).unwrap()
    }

    #[test]
    fn seed_residual_vanishes_without_perturbation() {
        let p = free();
        for k in [1, 3, 9] {
            let seed = make_seed(
                k,
                1.0,
                Quaternion::from_axis_angle(Vector3::new(1.0, 2.0, 3.0).normalize(), 0.4),
                0.1,
            );
            let prob = ShootingProblem::new(&p, 0.0, &seed).unwrap();
            let x = prob.initial_unknowns(&seed);
            let r = prob.residual(&x).unwrap();
            assert!(norm(&r) < 1e-11, "k = {k}: {:e}", norm(&r));
            let mut x2 = x;
            x2[11] += TAU;
            let r2 = prob.residual(&x2).unwrap();
            assert!(r.iter().zip(&r2).all(|(a, b)| (a - b).abs() < 1e-13));
        }
    }

    #[test]
    fn residual_follows_its_linearization() {
        let p = linear();
        let seed = make_seed(4, 1.0, Quaternion::ONE, 0.0);
        let prob = ShootingProblem::new(&p, 1e-3, &seed).unwrap();
        let x = prob.initial_unknowns(&seed);
        let (_, mesh) = prob.shoot(&x).unwrap();
        let r0 = prob.residual_on_mesh(&x, &mesh).unwrap();
        let jac = prob.jacobian(&x, &mesh).unwrap();
        // radial stretch of z and w: changes energy, not a gauge direction
        let mut dx = [0.0; N_UNKNOWNS];
        for i in 0..8 {
            dx[i] = 1e-6 * x[i];
        }
        let mut xp = x;
        for i in 0..N_UNKNOWNS {
            xp[i] += dx[i];
        }
        let r1 = prob.residual(&xp).unwrap();
        let actual: Vec<f64> = r1.iter().zip(&r0).map(|(a, b)| a - b).collect();
        let pred = &jac * DVector::from_column_slice(&dx);
        let (an, pn) = (norm(&actual), pred.norm());
        assert!(an < 10.0 * pn && pn < 10.0 * an, "{an:e} vs {pn:e}");
        let diff: Vec<f64> = actual.iter().zip(pred.iter()).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) < 1e-2 * pn);
    }

    #[test]
    fn zero_eps_returns_the_seed() {
        let p = free();
        let seed = make_seed(3, 1.0, Quaternion::ONE, 0.0);
        let rec = solve(&p, 0.0, &seed, 0, &SolveOptions::default()).unwrap();
        assert!(rec.x0.distance(&seed.state0()) < 1e-14);
        assert!((rec.s_period - seed.full_s_period()).abs() < 1e-14);
        assert!(rec.theta.abs() < 1e-12);
        assert_eq!(rec.eta, 1);
        assert_eq!(rec.collision_count, 0);
        let r = rec.max_radius();
        assert!((r - seed.phys_radius()).abs() < 1e-10);
        for s in &rec.physical_samples {
            assert!((s.u.norm() - r).abs() < 1e-10);
        }
    }

    #[test]
    fn seed_grid_examples() {
        let p = free();
        let one = seed_grid(9, 1.0, 1, 1, true, Quaternion::ONE);
        assert_eq!(one.len(), 1);
        let four = seed_grid(9, 1.0, 1, 4, true, Quaternion::ONE);
        let phases: Vec<f64> = four.iter().map(|s| s.t0).collect();
        let expect = [0.0, 1.0 / 36.0, 2.0 / 36.0, 3.0 / 36.0];
        assert!(phases
            .iter()
            .zip(expect)
            .all(|(a, b)| (a - b).abs() < 1e-15));
        let spatial = seed_grid(5, 1.0, 16, 2, false, Quaternion::ONE);
        assert_eq!(spatial.len(), 32);
        for s in four.iter().chain(&spatial) {
            let x = s.state0();
            assert!(hamiltonian(&x, &p, 0.0).unwrap().abs() < 1e-14);
            assert!(bl_moment(&x).abs() < 1e-15);
        }
        // spatial orientations are distinct unit quaternions
        for (i, a) in spatial.iter().enumerate().step_by(2) {
            assert!((a.orientation.norm() - 1.0).abs() < 1e-14);
            for b in spatial.iter().skip(i + 2).step_by(2) {
                assert!(a.orientation.dot(b.orientation).abs() < 1.0 - 1e-6);
            }
        }
    }

    #[test]
    fn planar_seeds_lie_in_the_base_plane() {
        let base = Quaternion::from_axis_angle(Vector3::new(0.2, -1.0, 0.5).normalize(), 1.1);
        let normal = crate::quat::rotate_im(base, crate::ImQuaternion::new(0.0, 0.0, 1.0))
            .unwrap()
            .vec();
        let grid = seed_grid(6, 1.0, 2, 1, true, base);
        for (n, seed) in grid.iter().enumerate() {
            let mut l = Vector3::zeros();
            for i in 0..16 {
                let x = seed.state_at(seed.s_period * i as f64 / 16.0);
                let ph = ks_to_phys(&x).unwrap();
                assert!(ph.u.dot(&normal).abs() < 1e-14);
                l += ph.u.cross(&ph.v);
            }
            let sense = l.dot(&normal).signum();
            assert_eq!(sense, if n % 2 == 0 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn tau_levels_separate_revolution_counts() {
        for k in 1..40 {
            assert!(tau_k(k + 1, 1.0) > tau_k(k, 1.0));
        }
    }

    #[test]
    fn seeds_outside_the_domain_are_rejected() {
        let p = forced();
        let seed = make_seed(1, 1.0, Quaternion::ONE, 0.0);
        assert!(matches!(
            solve(&p, 1e-3, &seed, 0, &SolveOptions::default()),
            Err(OrbitError::SeedOutsideDomain { k: 1, .. })
        ));
        let rep = find_orbits(&p, 1e-3, &[1, 9], 1, &SolveOptions::default());
        assert!(rep.per_k[0]
            .note
            .as_deref()
            .unwrap_or("")
            .contains("outside"));
        assert_eq!(rep.per_k[1].distinct, 1);
        assert!(rep.ensure_target().is_ok());
        let none = find_orbits(&p, 1e-3, &[1], 1, &SolveOptions::default());
        assert!(matches!(
            none.ensure_target(),
            Err(OrbitError::TargetNotReached {
                found: 0,
                target: 1
            })
        ));
    }

    fn forced_seed() -> SeedOrbit {
        make_seed(9, 1.0, planar_orientation(Quaternion::ONE, true), 0.05)
    }

    fn forced_record() -> OrbitRecord {
        solve(&forced(), 1e-3, &forced_seed(), 0, &SolveOptions::default()).unwrap()
    }

    #[test]
    fn forced_orbit_is_twisted_periodic() {
        let p = forced();
        let rec = forced_record();
        assert!(rec.residual_norm < RESIDUAL_TOL);
        assert_eq!(rec.eta, 1);
        assert!(rec.drift_k < 1e-9 && rec.drift_moment < 1e-9);
        let cfg = IntegratorConfig::with_tol(1e-13);
        let tr = crate::ksreg::ks_propagate(&rec.x0, 3.0 * rec.s_period, &p, rec.eps, &cfg, &[])
            .unwrap();
        let back = KSState::from_array(&tr.y_final());
        let mut target = circle_act(3.0 * rec.theta, &rec.x0);
        target.t += 3.0 * rec.period;
        assert!(back.distance(&target) < 1e-6);
        let orbit = reconstruct(&p, &rec, &tight()).unwrap();
        let u_start = orbit.position_at_time(rec.x0.t);
        assert!((u_start - ks_map(rec.x0.z).vec()).norm() < 1e-12);
        for t in [0.1, 0.45, 0.8] {
            assert!((orbit.position_at_time(t) - orbit.position_at_time(t + 2.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn continuation_reaches_the_target() {
        let p = forced();
        let seed = forced_seed();
        let prob = ShootingProblem::new(&p, 1e-3, &seed).unwrap();
        let x = continuation(&prob, prob.initial_unknowns(&seed), 1e-10).unwrap();
        assert!(norm(&prob.residual(&x).unwrap()) < RESIDUAL_TOL);
        let direct = forced_record();
        let mut via = direct.clone();
        (via.x0, via.s_period, via.theta) = unpack(&x);
        let a = reconstruct(&p, &direct, &tight()).unwrap();
        let b = reconstruct(&p, &via, &tight()).unwrap();
        // the relative phase of body and primaries is only weakly determined,
        // so different solver paths stop at slightly different points of it
        assert!(orbit_distance(&a, &b, 64) < 1e-3 * a.rho * a.rho);
    }

    #[test]
    fn dedup_identifies_gauge_copies() {
        let p = forced();
        let rec = forced_record();
        let mut copy = rec.clone();
        copy.x0 = circle_act(1.3, &rec.x0);
        copy.residual_norm *= 0.5;
        let mut other_k = rec.clone();
        other_k.k = 5;
        let out = dedup(
            &p,
            &[rec.clone(), rec.clone(), copy.clone(), other_k],
            &tight(),
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], copy);
    }

    #[test]
    fn found_set_is_gauge_invariant() {
        let p = forced();
        let seed = forced_seed();
        let rec = forced_record();
        let mut prob = ShootingProblem::new(&p, 1e-3, &seed).unwrap();
        let g = 2.1;
        let gen = |x: &KSState| KSState::new(Quaternion::I * x.z, Quaternion::I * x.w, 0.0, 0.0);
        prob.seed = circle_act(g, &prob.seed);
        prob.flow_dir = normalized(vector_field(&prob.seed, &p, 0.0).unwrap().to_array());
        prob.s1_gen = normalized(gen(&prob.seed).to_array());
        let (x, rep) =
            levenberg_marquardt(&prob, pack(&prob.seed, seed.full_s_period(), 0.0), 1e-10);
        assert!(rep.converged);
        let mut rotated = rec.clone();
        let (x0, s_len, theta) = unpack(&x);
        rotated.x0 = x0;
        rotated.s_period = s_len;
        rotated.theta = theta;
        let a = reconstruct(&p, &rec, &tight()).unwrap();
        let b = reconstruct(&p, &rotated, &tight()).unwrap();
        // equal up to rounding amplified along the weak phase direction
        assert!(orbit_distance(&a, &b, 64) < 1e-5);
        assert!((rec.theta - rotated.theta).abs() < 1e-9);
    }

    #[test]
    fn rectilinear_collisions_are_located_and_regular() {
        let p = free();
        let k = 3;
        let tau = tau_k(k, 1.0);
        let a = tau.powf(-0.5);
        let omega = (tau / 2.0).sqrt();
        let x0 = KSState::new(Quaternion::ONE.scale(a), Quaternion::ZERO, 0.0, tau);
        let rec = OrbitRecord {
            k,
            eps: 0.0,
            period: 1.0,
            s_period: k as f64 * TAU / omega,
            theta: 0.0,
            x0,
            residual_norm: 0.0,
            drift_k: 0.0,
            drift_moment: 0.0,
            collision_count: 0,
            collision_times: vec![],
            physical_samples: vec![],
            eta: 1,
            provenance: Provenance {
                seed_index: 0,
                orientation: Quaternion::ONE,
                phase: 0.0,
            },
        };
        let orbit = reconstruct(&p, &rec, &tight()).unwrap();
        assert_eq!(orbit.collisions.len(), 2 * k as usize);
        for (n, &(s, t)) in orbit.collisions.iter().enumerate() {
            let s_exact = (n as f64 + 0.5) * PI / omega;
            assert!((s - s_exact).abs() < 1e-9);
            assert!((t - (n as f64 + 0.5) / (2 * k) as f64).abs() < 1e-9);
        }
        assert_eq!(orbit.eta(), 1);
        let check = orbit.check_generalized(1024).unwrap();
        assert!(check.passed(), "{check:?}");
        assert_eq!(check.collision_times.len(), 2 * k as usize);
    }

    #[test]
    fn angles_wrap_into_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * TAU + 0.5) - 0.5).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
    }
}
