//! Horizontal lifts of piecewise smooth sphere paths through the Hopf map.
//!
//! Away from the pole `i` the fiber over `γ` is parametrized by `(Γ₂, Γ₃)`
//! with `Γ₂² + Γ₃² = (1 − γ₁)/2`; the remaining components follow from
//! `(1 − γ₁)(Γ₁, Γ₀)ᵀ = M(Γ₂, Γ₃)ᵀ`, `M = [[γ₂, γ₃], [γ₃, −γ₂]]`.
//! Horizontality `Re(Γ̄ i Γ̇) = 0` becomes the planar linear system
//! `(Γ̇₂, Γ̇₃)ᵀ = B(t)(Γ₂, Γ₃)ᵀ`.
//!
//! Paths are rotated once so that their image avoids a neighbourhood of `i`.
//! Velocities may blow up at partition points (Kepler collisions give
//! `|γ̇| ~ |t − tᵢ|^{−1/3}`); the outer thirds of every piece are integrated in
//! the variable `σ` with `t = tᵢ + σ³`, which makes the right-hand side
//! bounded.

use std::sync::Arc;

use nalgebra::{Matrix2, Vector2, Vector3};
use thiserror::Error;

use crate::flow::{propagate, FlowError, IntegratorConfig, OutOfDomain, Trajectory};
use crate::quat::{hopf, ks_map, rotate_im_unchecked, rotation_to_i, ImQuaternion, Quaternion};

pub type Vec3 = Vector3<f64>;

/// `γ₁` values at or above `1 − POLE_EPS` are rejected by [`build_b`].
pub const POLE_EPS: f64 = 1e-10;
/// Minimum great-circle distance from the chosen pole to the path.
pub const POLE_MARGIN: f64 = 1e-3;
/// Samples used by [`lift_ppath`] for pole selection.
pub const POLE_SAMPLES: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiftError {
    #[error("path passes within {0:.3e} of the pole (γ₁ = {1})")]
    PoleTooClose(f64, f64),
    #[error("|γ̇| is not integrable at t = {0}")]
    SingularityNotIntegrable(f64),
    #[error("no pole candidate at distance ≥ {POLE_MARGIN} from the path (best {0:.3e})")]
    PoleSelectionFailed(f64),
    #[error("invalid path: {0}")]
    BadPath(String),
    #[error("start point does not lie over γ(t₀) (mismatch {0:.3e})")]
    StartNotOverPath(f64),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// One smooth piece: `t ↦ (γ(t), γ̇(t))` on an open interval.
pub trait PathPiece: Send + Sync {
    fn eval(&self, t: f64) -> (Vec3, Vec3);
}

impl<F> PathPiece for F
where
    F: Fn(f64) -> (Vec3, Vec3) + Send + Sync,
{
    fn eval(&self, t: f64) -> (Vec3, Vec3) {
        self(t)
    }
}

/// A piecewise smooth path on `S²` with analytic velocities.
#[derive(Clone)]
pub struct PPath {
    partition: Vec<f64>,
    pieces: Vec<Arc<dyn PathPiece>>,
}

impl std::fmt::Debug for PPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PPath")
            .field("partition", &self.partition)
            .finish()
    }
}

impl PPath {
    pub fn new(partition: Vec<f64>, pieces: Vec<Arc<dyn PathPiece>>) -> Result<Self, LiftError> {
        if partition.len() < 2 {
            return Err(LiftError::BadPath(
                "partition needs at least two points".into(),
            ));
        }
        if partition.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LiftError::BadPath(
                "partition is not strictly increasing".into(),
            ));
        }
        if pieces.len() != partition.len() - 1 {
            return Err(LiftError::BadPath(format!(
                "{} pieces for {} subintervals",
                pieces.len(),
                partition.len() - 1
            )));
        }
        Ok(PPath { partition, pieces })
    }

    /// A single smooth piece on `[t0, t1]`.
    pub fn smooth(t0: f64, t1: f64, piece: impl PathPiece + 'static) -> Result<Self, LiftError> {
        PPath::new(vec![t0, t1], vec![Arc::new(piece)])
    }

    pub fn partition(&self) -> &[f64] {
        &self.partition
    }

    pub fn n_pieces(&self) -> usize {
        self.pieces.len()
    }

    pub fn t_start(&self) -> f64 {
        self.partition[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.partition.last().unwrap()
    }

    pub fn piece(&self, n: usize) -> &Arc<dyn PathPiece> {
        &self.pieces[n]
    }

    /// Index of the piece whose closed interval contains `t` (the left one at
    /// interior partition points).
    pub fn piece_index(&self, t: f64) -> usize {
        let n = self.partition.partition_point(|&p| p < t);
        n.saturating_sub(1).min(self.pieces.len() - 1)
    }

    /// Point and velocity at `t`. At a partition point where the piece is not
    /// defined, the point is taken slightly inside the piece.
    pub fn eval(&self, t: f64) -> (Vec3, Vec3) {
        let n = self.piece_index(t);
        self.eval_piece(n, t)
    }

    fn eval_piece(&self, n: usize, t: f64) -> (Vec3, Vec3) {
        let (a, b) = (self.partition[n], self.partition[n + 1]);
        let out = self.pieces[n].eval(t);
        if finite3(&out.0) && finite3(&out.1) {
            return out;
        }
        let nudge = 1e-12 * (b - a);
        let tt = if t - a < b - t { a + nudge } else { b - nudge };
        self.pieces[n].eval(tt)
    }

    pub fn point(&self, t: f64) -> Vec3 {
        self.eval(t).0
    }

    pub fn start_point(&self) -> Vec3 {
        self.eval_piece(0, self.t_start()).0
    }

    pub fn end_point(&self) -> Vec3 {
        let n = self.pieces.len() - 1;
        self.eval_piece(n, self.t_end()).0
    }

    pub fn is_closed(&self, tol: f64) -> bool {
        (self.start_point() - self.end_point()).norm() <= tol
    }

    /// `t ↦ γ(t₀ + t_N − t)`.
    pub fn reversed(&self) -> PPath {
        let (t0, tn) = (self.t_start(), self.t_end());
        let partition: Vec<f64> = self.partition.iter().rev().map(|&t| t0 + tn - t).collect();
        let pieces: Vec<Arc<dyn PathPiece>> = self
            .pieces
            .iter()
            .rev()
            .map(|p| {
                let p = p.clone();
                Arc::new(move |t: f64| {
                    let (g, gd) = p.eval(t0 + tn - t);
                    (g, -gd)
                }) as Arc<dyn PathPiece>
            })
            .collect();
        PPath { partition, pieces }
    }

    /// `t ↦ q γ(t) q̄`.
    pub fn rotated(&self, q: Quaternion) -> PPath {
        let pieces = self
            .pieces
            .iter()
            .map(|p| {
                let p = p.clone();
                Arc::new(move |t: f64| {
                    let (g, gd) = p.eval(t);
                    (rot(q, g), rot(q, gd))
                }) as Arc<dyn PathPiece>
            })
            .collect();
        PPath {
            partition: self.partition.clone(),
            pieces,
        }
    }

    /// Total length `∫|γ̇|`, with the endpoint singularities tested for
    /// integrability.
    pub fn length(&self) -> Result<f64, LiftError> {
        let mut total = 0.0;
        for n in 0..self.pieces.len() {
            total += piece_length(
                self.pieces[n].as_ref(),
                self.partition[n],
                self.partition[n + 1],
            )?;
        }
        Ok(total)
    }
}

fn finite3(v: &Vec3) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn rot(q: Quaternion, v: Vec3) -> Vec3 {
    rotate_im_unchecked(q, ImQuaternion(v)).vec()
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

fn gauss(f: &dyn Fn(f64) -> f64, a: f64, b: f64, cells: usize) -> f64 {
    let h = (b - a) / cells as f64;
    let mut acc = 0.0;
    for c in 0..cells {
        let mid = a + (c as f64 + 0.5) * h;
        for (x, w) in GL8 {
            acc += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * acc
}

/// `∫|γ̇|` over one piece. Near each endpoint the integral is computed in the
/// variable `x = ln|t − tᵢ|` on nested windows `10⁻⁴, 10⁻⁸, 10⁻¹²` (relative);
/// increments that fail to shrink flag a non-integrable singularity.
fn piece_length(piece: &dyn PathPiece, a: f64, b: f64) -> Result<f64, LiftError> {
    let len = b - a;
    let third = len / 3.0;
    let speed = |t: f64| piece.eval(t).1.norm();
    let mid = gauss(&speed, a + third, b - third, 16);
    let mut total = mid;
    for (edge, sign) in [(a, 1.0), (b, -1.0)] {
        let f = |x: f64| {
            let d = x.exp();
            d * speed(edge + sign * d)
        };
        let hi = third.ln();
        let cuts = [hi, (1e-4 * len).ln(), (1e-8 * len).ln(), (1e-12 * len).ln()];
        let mut parts = [0.0; 3];
        for n in 0..3 {
            parts[n] = gauss(&f, cuts[n + 1], cuts[n], 16);
        }
        if parts.iter().any(|p| !p.is_finite()) {
            return Err(LiftError::SingularityNotIntegrable(edge));
        }
        let sofar = parts[0] + parts[1];
        if parts[2] > 0.5 * parts[1] && parts[2] > 1e-9 * sofar.max(1.0) {
            return Err(LiftError::SingularityNotIntegrable(edge));
        }
        // power-law tail below the last window
        let ratio = if parts[1] > 0.0 {
            parts[2] / parts[1]
        } else {
            0.0
        };
        let tail = if ratio > 0.0 && ratio < 0.5 {
            parts[2] * ratio / (1.0 - ratio)
        } else {
            0.0
        };
        total += parts.iter().sum::<f64>() + tail;
    }
    Ok(total)
}

/// `M = [[γ₂, γ₃], [γ₃, −γ₂]]`.
pub fn m_matrix(gamma: &Vec3) -> Matrix2<f64> {
    Matrix2::new(gamma.y, gamma.z, gamma.z, -gamma.y)
}

/// `B = −(γ̇₁ I + c J) / (2(1 − γ₁))`, `c = γ₂γ̇₃ − γ₃γ̇₂`, `J = [[0, 1], [−1, 0]]`.
pub fn build_b(gamma: &Vec3, gamma_dot: &Vec3) -> Result<Matrix2<f64>, LiftError> {
    let d = 1.0 - gamma.x;
    if d <= POLE_EPS {
        return Err(LiftError::PoleTooClose(d, gamma.x));
    }
    let c = gamma.y * gamma_dot.z - gamma.z * gamma_dot.y;
    let f = -0.5 / d;
    Ok(Matrix2::new(
        f * gamma_dot.x,
        f * c,
        -f * c,
        f * gamma_dot.x,
    ))
}

/// Full fiber point from `(Γ₂, Γ₃)` over `γ` (pole-free coordinates).
fn reconstruct(gamma: &Vec3, y: &Vector2<f64>) -> Quaternion {
    let d = 1.0 - gamma.x;
    let g10 = m_matrix(gamma) * y / d;
    Quaternion::new(g10[1], g10[0], y[0], y[1])
}

fn reconstruct_velocity(
    gamma: &Vec3,
    gamma_dot: &Vec3,
    y: &Vector2<f64>,
) -> Result<Quaternion, LiftError> {
    let b = build_b(gamma, gamma_dot)?;
    let d = 1.0 - gamma.x;
    let yd = b * y;
    let g10 = m_matrix(gamma) * y / d;
    let g10d = (g10 * gamma_dot.x + m_matrix(gamma_dot) * y + m_matrix(gamma) * yd) / d;
    Ok(Quaternion::new(g10d[1], g10d[0], yd[0], yd[1]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Chart {
    /// `t = a + σ³`
    Head {
        a: f64,
    },
    Middle,
    /// `t = b − (σ_m − σ)³`
    Tail {
        b: f64,
        sigma_m: f64,
    },
}

impl Chart {
    fn to_param(self, t: f64) -> f64 {
        match self {
            Chart::Head { a } => (t - a).max(0.0).cbrt(),
            Chart::Middle => t,
            Chart::Tail { b, sigma_m } => sigma_m - (b - t).max(0.0).cbrt(),
        }
    }

    /// `(t, dt/dσ)`
    fn to_time(self, sigma: f64) -> (f64, f64) {
        match self {
            Chart::Head { a } => (a + sigma * sigma * sigma, 3.0 * sigma * sigma),
            Chart::Middle => (sigma, 1.0),
            Chart::Tail { b, sigma_m } => {
                let r = sigma_m - sigma;
                (b - r * r * r, 3.0 * r * r)
            }
        }
    }
}

/// Lift of one piece on `[a, b]` in pole-free coordinates.
#[derive(Debug, Clone)]
pub struct IntervalLift {
    a: f64,
    b: f64,
    segments: Vec<(Chart, f64, f64, Trajectory<2>)>,
}

impl IntervalLift {
    fn y_at(&self, t: f64) -> Vector2<f64> {
        let t = t.clamp(self.a, self.b);
        for (chart, t_lo, t_hi, tr) in &self.segments {
            if t >= *t_lo && t <= *t_hi {
                let sigma = chart.to_param(t);
                let sigma = sigma.clamp(tr.s[0], tr.s_final());
                let y = tr.eval(sigma).expect("dense output covers the segment");
                return Vector2::new(y[0], y[1]);
            }
        }
        let y = self.segments.last().unwrap().3.y_final();
        Vector2::new(y[0], y[1])
    }

    fn y_end(&self) -> Vector2<f64> {
        let y = self.segments.last().unwrap().3.y_final();
        Vector2::new(y[0], y[1])
    }
}

fn lift_config() -> IntegratorConfig {
    IntegratorConfig::with_tol(1e-13).dense()
}

/// Solves `(Γ̇₂, Γ̇₃) = B(Γ₂, Γ₃)` on `[a, b]` for a piece that stays away from
/// `i`, starting from `start23` at `a`.
pub fn lift_interval(
    piece: &dyn PathPiece,
    a: f64,
    b: f64,
    start23: [f64; 2],
) -> Result<IntervalLift, LiftError> {
    piece_length(piece, a, b)?;
    let third = (b - a) / 3.0;
    let sigma_m = third.cbrt();
    let charts = [
        (Chart::Head { a }, a, a + third, 0.0, sigma_m),
        (Chart::Middle, a + third, b - third, a + third, b - third),
        (Chart::Tail { b, sigma_m }, b - third, b, 0.0, sigma_m),
    ];
    let cfg = lift_config();
    let mut y0 = start23;
    let mut segments = Vec::with_capacity(3);
    for (chart, t_lo, t_hi, s0, s1) in charts {
        let rhs = |sigma: f64, y: &[f64; 2]| -> Result<[f64; 2], OutOfDomain> {
            let (t, jac) = chart.to_time(sigma);
            if jac == 0.0 || t <= a || t >= b {
                return Ok([0.0, 0.0]);
            }
            let (g, gd) = piece.eval(t);
            let bm = build_b(&g, &gd).map_err(|e| OutOfDomain(e.to_string()))?;
            let yd = bm * Vector2::new(y[0], y[1]) * jac;
            Ok([yd[0], yd[1]])
        };
        let tr = propagate(&rhs, s0, y0, s1, &cfg, &[])?;
        y0 = tr.y_final();
        segments.push((chart, t_lo, t_hi, tr));
    }
    Ok(IntervalLift { a, b, segments })
}

/// A horizontal lift `Γ(t) = Γ*(t)·q` of a [`PPath`].
#[derive(Debug, Clone)]
pub struct LiftedPath {
    rotated: PPath,
    rotation: Quaternion,
    intervals: Vec<IntervalLift>,
}

impl LiftedPath {
    pub fn t_start(&self) -> f64 {
        self.rotated.t_start()
    }

    pub fn t_end(&self) -> f64 {
        self.rotated.t_end()
    }

    pub fn partition(&self) -> &[f64] {
        self.rotated.partition()
    }

    /// The lift in rotated (pole-free) coordinates.
    pub fn eval_rotated(&self, t: f64) -> Quaternion {
        let n = self.rotated.piece_index(t);
        let y = self.intervals[n].y_at(t);
        let g = self.rotated.eval_piece(n, t).0;
        reconstruct(&g, &y)
    }

    pub fn eval(&self, t: f64) -> Quaternion {
        self.eval_rotated(t) * self.rotation
    }

    /// `Γ̇(t)` from the lift equation (not by differencing); undefined at
    /// singular partition points.
    pub fn velocity(&self, t: f64) -> Result<Quaternion, LiftError> {
        let n = self.rotated.piece_index(t);
        let y = self.intervals[n].y_at(t);
        let (g, gd) = self.rotated.eval_piece(n, t);
        Ok(reconstruct_velocity(&g, &gd, &y)? * self.rotation)
    }

    /// `|Re(Γ̄ i Γ̇)|`.
    pub fn horizontality_residual(&self, t: f64) -> Result<f64, LiftError> {
        let g = self.eval(t);
        let gd = self.velocity(t)?;
        Ok((g.conj() * Quaternion::I * gd).re.abs())
    }

    /// `|Γ₂*² + Γ₃*² − (1 − γ₁*)/2|` in rotated coordinates.
    pub fn norm_constraint_residual(&self, t: f64) -> f64 {
        let n = self.rotated.piece_index(t);
        let y = self.intervals[n].y_at(t);
        let g = self.rotated.eval_piece(n, t).0;
        (y.norm_squared() - 0.5 * (1.0 - g.x)).abs()
    }

    fn end_rotated(&self) -> Quaternion {
        let n = self.intervals.len() - 1;
        let g = self.rotated.end_point();
        reconstruct(&g, &self.intervals[n].y_end())
    }
}

#[derive(Debug, Clone)]
pub struct LiftResult {
    pub lift: LiftedPath,
    /// `g` with `Γ(t_N) = g Γ(t₀)`, for closed paths.
    pub holonomy: Option<Quaternion>,
    pub pole: ImQuaternion,
    pub rotation: Quaternion,
}

impl LiftResult {
    pub fn holonomy_angle(&self) -> Option<f64> {
        self.holonomy.map(|g| g.i.atan2(g.re))
    }
}

/// Vertices of the twice-subdivided icosahedron (162 points), oriented so
/// that `±i` are vertices.
pub fn icosphere2() -> Vec<Vec3> {
    use std::collections::HashMap;
    use std::f64::consts::PI;
    let mut verts = vec![Vec3::x(), -Vec3::x()];
    let (h, r) = (1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt());
    for m in 0..5 {
        let a = 2.0 * PI * m as f64 / 5.0;
        verts.push(Vec3::new(h, r * a.cos(), r * a.sin()));
    }
    for m in 0..5 {
        let a = 2.0 * PI * m as f64 / 5.0 + PI / 5.0;
        verts.push(Vec3::new(-h, r * a.cos(), r * a.sin()));
    }
    let up = |m: usize| 2 + m % 5;
    let lo = |m: usize| 7 + m % 5;
    let mut faces = Vec::new();
    for m in 0..5 {
        faces.push([0, up(m), up(m + 1)]);
        faces.push([1, lo(m + 1), lo(m)]);
        faces.push([up(m), lo(m), up(m + 1)]);
        faces.push([up(m + 1), lo(m), lo(m + 1)]);
    }
    for _ in 0..2 {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |i: usize, j: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (i.min(j), i.max(j));
            *cache.entry(key).or_insert_with(|| {
                verts.push((verts[i] + verts[j]).normalize());
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    verts
}

/// Sample times for pole selection: cell midpoints, so that singular
/// partition points are never evaluated.
fn sample_points(path: &PPath, n_samples: usize) -> Vec<Vec3> {
    let (t0, t1) = (path.t_start(), path.t_end());
    let h = (t1 - t0) / n_samples as f64;
    (0..n_samples)
        .map(|n| {
            let g = path.point(t0 + (n as f64 + 0.5) * h);
            g / g.norm()
        })
        .collect()
}

/// The icosphere vertex farthest (in minimum great-circle distance) from the
/// sampled image of the path.
pub fn pole_select(path: &PPath, n_samples: usize) -> Result<ImQuaternion, LiftError> {
    if n_samples < 64 {
        return Err(LiftError::BadPath(
            "pole selection needs at least 64 samples".into(),
        ));
    }
    let pts = sample_points(path, n_samples);
    if pts.iter().any(|p| !finite3(p)) {
        return Err(LiftError::BadPath(
            "path evaluates to a non-finite point".into(),
        ));
    }
    let mut best = (f64::NEG_INFINITY, Vec3::x());
    for c in icosphere2() {
        let max_dot = pts
            .iter()
            .map(|p| p.dot(&c))
            .fold(f64::NEG_INFINITY, f64::max);
        let dist = max_dot.clamp(-1.0, 1.0).acos();
        if dist > best.0 {
            best = (dist, c);
        }
    }
    if best.0 < POLE_MARGIN {
        return Err(LiftError::PoleSelectionFailed(best.0));
    }
    Ok(ImQuaternion(best.1))
}

/// Horizontal lift of `γ` through `start` (a unit quaternion over `γ(t₀)`).
pub fn lift_ppath(path: &PPath, start: Quaternion) -> Result<LiftResult, LiftError> {
    let start = start.normalize();
    let g0 = path.start_point();
    let over = hopf(start).map_err(|e| LiftError::BadPath(e.to_string()))?;
    let mismatch = (over.vec() - g0).norm();
    if mismatch > 1e-8 {
        return Err(LiftError::StartNotOverPath(mismatch));
    }
    let pole = pole_select(path, POLE_SAMPLES)?;
    let q = rotation_to_i(pole).map_err(|e| LiftError::BadPath(e.to_string()))?;
    let rotated = path.rotated(q);

    let gs = start * q.conj();
    let g_rot = ks_map(gs).vec();
    let target = (0.5 * (1.0 - g_rot.x)).max(0.0).sqrt();
    let mut y = Vector2::new(gs.j, gs.k);
    let yn = y.norm();
    if yn > 0.0 {
        y *= target / yn;
    }

    let mut intervals = Vec::with_capacity(rotated.n_pieces());
    for n in 0..rotated.n_pieces() {
        let (a, b) = (rotated.partition[n], rotated.partition[n + 1]);
        let il = lift_interval(rotated.pieces[n].as_ref(), a, b, [y[0], y[1]])?;
        y = il.y_end();
        intervals.push(il);
    }
    let lift = LiftedPath {
        rotated,
        rotation: q,
        intervals,
    };
    let holonomy = if path.is_closed(1e-8) {
        let g = lift.end_rotated() * q * lift.eval(lift.t_start()).conj();
        Some(Quaternion::new(g.re, g.i, 0.0, 0.0).normalize())
    } else {
        None
    };
    Ok(LiftResult {
        lift,
        holonomy,
        pole,
        rotation: q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::{hopf_section, rotate_im};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Literal two-step assembly: substitute `(Γ₁, Γ₀) = M(Γ₂, Γ₃)/(1 − γ₁)`
    /// into `−(γ̇₁ M(Γ₁, Γ₀) + M Ṁ (Γ₂, Γ₃))/(2(1 − γ₁))`.
    fn b_literal(g: &Vec3, gd: &Vec3) -> Matrix2<f64> {
        let d = 1.0 - g.x;
        let m = m_matrix(g);
        let md = m_matrix(gd);
        let to_10 = m / d;
        (m * to_10 * gd.x + m * md) * (-1.0 / (2.0 * d))
    }

    fn tangent_pair(theta: f64, phi: f64, a: f64, b: f64) -> (Vec3, Vec3) {
        let g = Vec3::new(
            theta.cos(),
            theta.sin() * phi.cos(),
            theta.sin() * phi.sin(),
        );
        let e1 = Vec3::new(
            -theta.sin(),
            theta.cos() * phi.cos(),
            theta.cos() * phi.sin(),
        );
        let e2 = Vec3::new(0.0, -phi.sin(), phi.cos());
        (g, e1 * a + e2 * b)
    }

    #[test]
    fn b_examples() {
        let g = Vec3::new(0.3, 0.4, (1.0f64 - 0.09 - 0.16).sqrt());
        assert_eq!(build_b(&g, &Vec3::zeros()).unwrap(), Matrix2::zeros());
        for t in [0.0, 0.7, 2.0, 4.5] {
            let g = Vec3::new(0.0, f64::cos(t), f64::sin(t));
            let gd = Vec3::new(0.0, -f64::sin(t), f64::cos(t));
            let b = build_b(&g, &gd).unwrap();
            let expect = Matrix2::new(0.0, -0.5, 0.5, 0.0);
            assert!((b - expect).norm() < 1e-15);
        }
        assert!(matches!(
            build_b(&Vec3::x(), &Vec3::y()),
            Err(LiftError::PoleTooClose(..))
        ));
    }

    proptest! {
        #[test]
        fn prop_b_matches_literal_assembly(
            theta in 0.05f64..PI, phi in -PI..PI, a in -3.0f64..3.0, b in -3.0f64..3.0
        ) {
            let (g, gd) = tangent_pair(theta, phi, a, b);
            let bc = build_b(&g, &gd).unwrap();
            let bl = b_literal(&g, &gd);
            let scale = bl.norm().max(1.0);
            prop_assert!((bc - bl).norm() < 1e-12 * scale, "{} vs {}", bc, bl);
            prop_assert!((bc.trace() + gd.x / (1.0 - g.x)).abs() < 1e-12 * scale);
        }

        /// The lift equation keeps Γ over γ and horizontal: check the
        /// reconstructed velocity at random points of the fiber.
        #[test]
        fn prop_reconstructed_velocity_is_horizontal_and_tangent(
            theta in 0.1f64..PI, phi in -PI..PI, a in -3.0f64..3.0, b in -3.0f64..3.0, alpha in -PI..PI
        ) {
            let (g, gd) = tangent_pair(theta, phi, a, b);
            let fiber = Quaternion::unit_complex(alpha) * hopf_section(ImQuaternion(g));
            let y = Vector2::new(fiber.j, fiber.k);
            let gam = reconstruct(&g, &y);
            prop_assert!((gam - fiber).norm() < 1e-12);
            let vel = reconstruct_velocity(&g, &gd, &y).unwrap();
            prop_assert!((gam.conj() * Quaternion::I * vel).re.abs() < 1e-12 * gd.norm().max(1.0));
            // dΠ(Γ̇) = γ̇: Π(Γ + hΓ̇) ≈ γ + hγ̇
            let h = 1e-6;
            let fd = (ks_map(gam + vel.scale(h)).vec() - ks_map(gam - vel.scale(h)).vec()) / (2.0 * h);
            prop_assert!((fd - gd).norm() < 1e-8 * gd.norm().max(1.0));
        }
    }

    fn circle_about(axis: Vec3, theta0: f64, turns: f64) -> PPath {
        // γ(t) = cosθ₀ n + sinθ₀ (cos t e₁ + sin t e₂), t ∈ [0, 2π·turns]
        let n = axis.normalize();
        let helper = if n.x.abs() < 0.9 {
            Vec3::x()
        } else {
            Vec3::y()
        };
        let e1 = n.cross(&helper).normalize();
        let e2 = n.cross(&e1);
        PPath::smooth(0.0, 2.0 * PI * turns, move |t: f64| {
            let g = n * theta0.cos() + (e1 * t.cos() + e2 * t.sin()) * theta0.sin();
            let gd = (e1 * -t.sin() + e2 * t.cos()) * theta0.sin();
            (g, gd)
        })
        .unwrap()
    }

    fn start_over(path: &PPath, phase: f64) -> Quaternion {
        Quaternion::unit_complex(phase) * hopf_section(ImQuaternion(path.start_point()))
    }

    fn check_lift(path: &PPath, res: &LiftResult) {
        let (t0, t1) = (path.t_start(), path.t_end());
        for n in 0..1000 {
            let t = t0 + (t1 - t0) * (n as f64 + 0.5) / 1000.0;
            let g = res.lift.eval(t);
            assert!((g.norm() - 1.0).abs() < 1e-8);
            assert!((hopf(g.normalize()).unwrap().vec() - path.point(t)).norm() < 1e-8);
            assert!(res.lift.horizontality_residual(t).unwrap() < 1e-8);
            assert!(res.lift.norm_constraint_residual(t) < 1e-8);
        }
    }

    #[test]
    fn constant_path_has_constant_lift() {
        let path = PPath::smooth(0.0, 1.0, |_t: f64| (Vec3::y(), Vec3::zeros())).unwrap();
        let start = start_over(&path, 0.4);
        let res = lift_ppath(&path, start).unwrap();
        for t in [0.0, 0.3, 0.9, 1.0] {
            assert!((res.lift.eval(t) - start).norm() < 1e-12);
        }
        assert!((res.holonomy.unwrap() - Quaternion::ONE).norm() < 1e-12);
    }

    #[test]
    fn equator_closed_form() {
        // γ = (0, cos t, sin t) avoids i, so the lift can be done in place
        let piece = |t: f64| {
            (
                Vec3::new(0.0, t.cos(), t.sin()),
                Vec3::new(0.0, -t.sin(), t.cos()),
            )
        };
        let start = hopf_section(ImQuaternion(Vec3::y()));
        let il = lift_interval(&piece, 0.0, 2.0 * PI, [start.j, start.k]).unwrap();
        // B = −J/2: y(t) = exp(−tJ/2) y₀, a rotation by t/2
        for n in 0..=20 {
            let t = 2.0 * PI * n as f64 / 20.0;
            let y = il.y_at(t);
            let (s, c) = (0.5 * t).sin_cos();
            let expect = Vector2::new(c * start.j - s * start.k, s * start.j + c * start.k);
            assert!((y - expect).norm() < 1e-12, "t={t}");
            assert!((y.norm_squared() - 0.5).abs() < 1e-12);
        }
    }

    /// Geodesic-polygon lift: step to the nearest fiber point.
    fn polygonal_holonomy(path: &PPath, start: Quaternion, n: usize) -> f64 {
        let (t0, t1) = (path.t_start(), path.t_end());
        let mut g = start;
        for m in 1..=n {
            let t = t0 + (t1 - t0) * m as f64 / n as f64;
            let p = hopf_section(ImQuaternion(path.point(t)));
            let ip = Quaternion::I * p;
            let phi = ip.dot(g).atan2(p.dot(g));
            g = Quaternion::unit_complex(phi) * p;
        }
        let h = g * start.conj();
        h.i.atan2(h.re)
    }

    #[test]
    fn circle_holonomy_matches_polygon_oracle() {
        for (axis, theta0) in [
            (Vec3::new(0.3, -0.5, 0.8), 0.7),
            (Vec3::new(1.0, 0.0, 0.0), 1.2),
            (Vec3::new(-0.2, 0.9, 0.1), 2.5),
        ] {
            let path = circle_about(axis, theta0, 1.0);
            let start = start_over(&path, 0.0);
            let res = lift_ppath(&path, start).unwrap();
            check_lift(&path, &res);
            let g = res.holonomy.unwrap();
            assert!((g.norm() - 1.0).abs() < 1e-10);
            let angle = res.holonomy_angle().unwrap();
            let a1 = polygonal_holonomy(&path, start, 20_000);
            let a2 = polygonal_holonomy(&path, start, 40_000);
            let oracle = a2 + (a2 - a1) / 3.0;
            let diff = (angle - oracle + PI).rem_euclid(2.0 * PI) - PI;
            assert!(diff.abs() < 1e-6, "angle {angle} oracle {oracle}");
            // half the enclosed solid angle
            let expect = -PI * (1.0 - theta0.cos());
            let diff = (angle - expect + PI).rem_euclid(2.0 * PI) - PI;
            assert!(diff.abs() < 1e-9, "angle {angle} expect {expect}");
        }
    }

    #[test]
    fn holonomy_is_start_independent_and_conjugates_on_reversal() {
        let path = circle_about(Vec3::new(0.2, 0.3, -0.9), 0.9, 1.0);
        let base = lift_ppath(&path, start_over(&path, 0.0))
            .unwrap()
            .holonomy
            .unwrap();
        for phase in [0.5, -2.0, 3.0] {
            let g = lift_ppath(&path, start_over(&path, phase))
                .unwrap()
                .holonomy
                .unwrap();
            assert!((g - base).norm() < 1e-10);
        }
        let rev = path.reversed();
        let g = lift_ppath(&rev, start_over(&rev, 0.1))
            .unwrap()
            .holonomy
            .unwrap();
        assert!((g - base.conj()).norm() < 1e-8);
    }

    #[test]
    fn retraced_loop_has_trivial_holonomy() {
        let path = circle_about(Vec3::new(0.0, 0.0, 1.0), 0.8, 1.0);
        let p = path.piece(0).clone();
        let fwd = p.clone();
        let two = PPath::new(
            vec![0.0, 2.0 * PI, 4.0 * PI],
            vec![
                fwd,
                Arc::new(move |t: f64| {
                    let (g, gd) = p.eval(4.0 * PI - t);
                    (g, -gd)
                }),
            ],
        )
        .unwrap();
        let res = lift_ppath(&two, start_over(&two, 0.3)).unwrap();
        assert!((res.holonomy.unwrap() - Quaternion::ONE).norm() < 1e-9);
    }

    /// A latitude arc with a Kepler-type velocity singularity at `t = 1`:
    /// longitude `φ = 0.3 + c|1 − t|^{2/3}` before, `0.3 − 1.5c|t − 1|^{2/3}`
    /// after, so `|γ̇| ~ |t − 1|^{−1/3}`.
    fn collision_path() -> PPath {
        let c = 0.8;
        let r = 0.96f64.sqrt();
        let at = move |phi: f64, dphi: f64| {
            (
                Vec3::new(0.2, r * phi.cos(), r * phi.sin()),
                Vec3::new(0.0, -phi.sin(), phi.cos()) * (r * dphi),
            )
        };
        let left = move |t: f64| {
            let d = 1.0 - t;
            at(
                0.3 + c * d.powf(2.0 / 3.0),
                -c * (2.0 / 3.0) * d.powf(-1.0 / 3.0),
            )
        };
        let right = move |t: f64| {
            let d = t - 1.0;
            at(
                0.3 - 1.5 * c * d.powf(2.0 / 3.0),
                -1.5 * c * (2.0 / 3.0) * d.powf(-1.0 / 3.0),
            )
        };
        PPath::new(vec![0.0, 1.0, 2.0], vec![Arc::new(left), Arc::new(right)]).unwrap()
    }

    #[test]
    fn collision_singularity_is_lifted() {
        let path = collision_path();
        let len = path.length().unwrap();
        // ∫|γ̇| is the swept longitude times the latitude radius
        let expect = 0.96f64.sqrt() * (0.8 + 1.5 * 0.8);
        assert!((len - expect).abs() < 1e-8, "{len} vs {expect}");
        let res = lift_ppath(&path, start_over(&path, 0.0)).unwrap();
        check_lift(&path, &res);
        let l = res.lift.eval(1.0 - 1e-12);
        let rgt = res.lift.eval(1.0 + 1e-12);
        assert!((l - rgt).norm() < 1e-8);
        // same path through a smooth reparametrization gives the same endpoint
        let smooth = PPath::smooth(0.0, 2.0, |t: f64| {
            let phi = 0.3 + 0.8 - 2.0 * 0.8 * 1.25 * 0.5 * t;
            let r = 0.96f64.sqrt();
            (
                Vec3::new(0.2, r * phi.cos(), r * phi.sin()),
                Vec3::new(0.0, -phi.sin(), phi.cos()) * (-r * 0.8 * 1.25),
            )
        })
        .unwrap();
        let res2 = lift_ppath(&smooth, start_over(&smooth, 0.0)).unwrap();
        assert!((smooth.end_point() - path.end_point()).norm() < 1e-12);
        assert!((res2.lift.eval(2.0) - res.lift.eval(2.0)).norm() < 1e-8);
    }

    #[test]
    fn non_integrable_singularity_is_rejected() {
        // φ = ln(1 − t): |γ̇| ~ 1/(1 − t)
        let piece = |t: f64| {
            let d = 1.0 - t;
            let phi = d.ln();
            (
                Vec3::new(0.0, phi.cos(), phi.sin()),
                Vec3::new(0.0, -phi.sin(), phi.cos()) * (-1.0 / d),
            )
        };
        let path = PPath::smooth(0.0, 1.0, piece).unwrap();
        assert!(matches!(
            path.length(),
            Err(LiftError::SingularityNotIntegrable(_))
        ));
        assert!(matches!(
            lift_ppath(&path, start_over(&path, 0.0)),
            Err(LiftError::SingularityNotIntegrable(_))
        ));
    }

    #[test]
    fn start_must_lie_over_path() {
        let path = circle_about(Vec3::z(), 1.0, 1.0);
        let wrong = hopf_section(ImQuaternion(-path.start_point()));
        assert!(matches!(
            lift_ppath(&path, wrong),
            Err(LiftError::StartNotOverPath(_))
        ));
    }

    #[test]
    fn icosphere_has_162_unit_vertices_with_poles() {
        let v = icosphere2();
        assert_eq!(v.len(), 162);
        assert!(v.iter().all(|p| (p.norm() - 1.0).abs() < 1e-14));
        assert!(v.contains(&Vec3::x()) && v.contains(&-Vec3::x()));
        for a in 0..v.len() {
            for b in 0..a {
                assert!((v[a] - v[b]).norm() > 0.1);
            }
        }
    }

    #[test]
    fn pole_select_examples() {
        let const_i = PPath::smooth(0.0, 1.0, |_t: f64| (Vec3::x(), Vec3::zeros())).unwrap();
        let xi = pole_select(&const_i, 64).unwrap();
        assert!((xi.vec() + Vec3::x()).norm() < 1e-14);

        // equator of the axis j: the poles ±j are grid-optimal only up to the
        // grid resolution; brute-force argmax over the same grid
        let eq = circle_about(Vec3::y(), PI / 2.0, 1.0);
        let xi = pole_select(&eq, 256).unwrap();
        assert!(xi.vec().y.abs() > 0.95, "{:?}", xi.vec());
        let pts = sample_points(&eq, 256);
        let best = icosphere2()
            .into_iter()
            .map(|c| {
                pts.iter()
                    .map(|p| p.dot(&c))
                    .fold(f64::NEG_INFINITY, f64::max)
                    .acos()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let got = pts
            .iter()
            .map(|p| p.dot(&xi.vec()))
            .fold(f64::NEG_INFINITY, f64::max)
            .acos();
        assert_eq!(got, best);

        // a wildly winding curve sampled at 64 points still leaves room
        let wild = PPath::smooth(0.0, 1.0, |t: f64| {
            let (th, ph) = (37.0 * t, 101.0 * t);
            let g = Vec3::new(th.cos(), th.sin() * ph.cos(), th.sin() * ph.sin());
            (g, Vec3::zeros())
        })
        .unwrap();
        let xi = pole_select(&wild, 64).unwrap();
        assert!((xi.norm() - 1.0).abs() < 1e-14);
        assert!(matches!(pole_select(&wild, 10), Err(LiftError::BadPath(_))));
    }

    #[test]
    fn rotation_back_matches_paper_relation() {
        let path = circle_about(Vec3::new(1.0, 0.1, 0.0), 0.3, 1.0);
        let res = lift_ppath(&path, start_over(&path, 0.0)).unwrap();
        // the pole is away from the loop around ≈ i, so a rotation was needed
        assert!(res.pole.vec().x < 0.5);
        let q = res.rotation;
        assert!((rotate_im(q, res.pole).unwrap().vec() - Vec3::x()).norm() < 1e-12);
        for t in [0.5, 2.0, 4.0] {
            let gstar = res.lift.eval_rotated(t);
            assert!((res.lift.eval(t) * q.conj() - gstar).norm() < 1e-14);
        }
    }
}
