//! Adaptive Runge–Kutta propagation with dense output and event location.
//!
//! A single method is used everywhere: the explicit Dormand–Prince 8(5,3)
//! pair with its seventh-order continuous extension. Steps are controlled on
//! the mixed 5th/3rd-order error estimate. No projection onto invariant
//! manifolds is performed; conserved quantities drift freely so that the
//! drift can be measured.

mod tableau;

use thiserror::Error;

use tableau::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("step size underflow at s = {s} (h = {h})")]
    StepSizeUnderflow { s: f64, h: f64 },
    #[error("trajectory left the domain of the vector field at s = {s}: {reason}")]
    DomainExit { s: f64, reason: String },
    #[error("maximum number of steps ({0}) exceeded")]
    MaxSteps(usize),
    #[error("invalid integrator configuration: {0}")]
    BadConfig(String),
}

/// Returned by a right-hand side evaluated outside its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct OutOfDomain(pub String);

/// `dy/ds = f(s, y)` on `ℝᴺ`.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, s: f64, y: &[f64; N]) -> Result<[f64; N], OutOfDomain>;
}

impl<const N: usize, F> OdeSystem<N> for F
where
    F: Fn(f64, &[f64; N]) -> Result<[f64; N], OutOfDomain>,
{
    fn rhs(&self, s: f64, y: &[f64; N]) -> Result<[f64; N], OutOfDomain> {
        self(s, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on `|h|`; `f64::INFINITY` for none.
    pub max_step: f64,
    pub dense_output: bool,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            dense_output: false,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tol(tol: f64) -> Self {
        IntegratorConfig {
            rel_tol: tol,
            abs_tol: tol,
            ..Default::default()
        }
    }

    pub fn dense(mut self) -> Self {
        self.dense_output = true;
        self
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        for (name, v) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(1e-15..=1e-3).contains(&v) {
                return Err(FlowError::BadConfig(format!(
                    "{name} = {v} outside [1e-15, 1e-3]"
                )));
            }
        }
        if !(self.max_step > 0.0) {
            return Err(FlowError::BadConfig("max_step must be positive".into()));
        }
        Ok(())
    }
}

/// Event function `g(s, y)`; an event is a root of `g` along the trajectory.
pub struct EventSpec<'a, const N: usize> {
    pub event_fn: Box<dyn Fn(f64, &[f64; N]) -> f64 + 'a>,
    /// `+1` only upward crossings, `-1` only downward, `0` both.
    pub direction: i8,
    pub terminal: bool,
}

impl<'a, const N: usize> EventSpec<'a, N> {
    pub fn new(event_fn: impl Fn(f64, &[f64; N]) -> f64 + 'a) -> Self {
        EventSpec {
            event_fn: Box::new(event_fn),
            direction: 0,
            terminal: false,
        }
    }

    pub fn direction(mut self, d: i8) -> Self {
        self.direction = d.signum();
        self
    }

    pub fn terminal(mut self) -> Self {
        self.terminal = true;
        self
    }

    fn triggers(&self, g0: f64, g1: f64) -> bool {
        let up = g0 < 0.0 && g1 >= 0.0;
        let down = g0 > 0.0 && g1 <= 0.0;
        match self.direction {
            1 => up,
            -1 => down,
            _ => up || down,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventHit<const N: usize> {
    /// Index into the `events` slice passed to [`propagate`].
    pub index: usize,
    pub s: f64,
    pub y: [f64; N],
}

/// Seventh-order continuous extension over one accepted step.
#[derive(Debug, Clone)]
pub struct DenseSegment<const N: usize> {
    pub s0: f64,
    pub h: f64,
    cont: [[f64; N]; 8],
}

impl<const N: usize> DenseSegment<N> {
    pub fn eval(&self, s: f64) -> [f64; N] {
        let th = (s - self.s0) / self.h;
        let th1 = 1.0 - th;
        let c = &self.cont;
        let mut out = [0.0; N];
        for i in 0..N {
            let conpar = c[4][i] + th * (c[5][i] + th1 * (c[6][i] + th * c[7][i]));
            out[i] = c[0][i] + th * (c[1][i] + th1 * (c[2][i] + th * (c[3][i] + th1 * conpar)));
        }
        out
    }

    pub fn s1(&self) -> f64 {
        self.s0 + self.h
    }

    fn contains(&self, s: f64) -> bool {
        let (a, b) = if self.h > 0.0 {
            (self.s0, self.s1())
        } else {
            (self.s1(), self.s0)
        };
        s >= a && s <= b
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory<const N: usize> {
    /// Accepted mesh points, starting with the initial point.
    pub s: Vec<f64>,
    pub y: Vec<[f64; N]>,
    /// One segment per accepted step when dense output was requested.
    pub dense: Vec<DenseSegment<N>>,
    pub events: Vec<EventHit<N>>,
    /// Index of the terminal event that stopped the integration, if any.
    pub stopped_by: Option<usize>,
    pub n_eval: usize,
    pub n_rejected: usize,
}

impl<const N: usize> Trajectory<N> {
    pub fn s_final(&self) -> f64 {
        *self.s.last().expect("trajectory has at least one point")
    }

    pub fn y_final(&self) -> [f64; N] {
        *self.y.last().expect("trajectory has at least one point")
    }

    pub fn n_steps(&self) -> usize {
        self.s.len() - 1
    }

    /// Dense-output evaluation; `None` without dense output or outside the
    /// integrated range.
    pub fn eval(&self, s: f64) -> Option<[f64; N]> {
        if self.dense.is_empty() {
            return if s == self.s[0] {
                Some(self.y[0])
            } else {
                None
            };
        }
        let forward = self.dense[0].h > 0.0;
        let (lo, hi) = if forward {
            (self.s[0], self.s_final())
        } else {
            (self.s_final(), self.s[0])
        };
        if s < lo || s > hi {
            return None;
        }
        let idx =
            self.dense
                .partition_point(|seg| if forward { seg.s1() < s } else { seg.s1() > s });
        let seg = self.dense.get(idx).or_else(|| self.dense.last())?;
        if seg.contains(s) {
            Some(seg.eval(s))
        } else {
            None
        }
    }
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        let ch = c * h;
        for i in 0..N {
            out[i] += ch * k[i];
        }
    }
    out
}

struct StepResult<const N: usize> {
    y_new: [f64; N],
    err: f64,
    stages: [[f64; N]; 12],
}

fn dop853_step<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    s: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    cfg: &IntegratorConfig,
) -> Result<StepResult<N>, OutOfDomain> {
    let k2 = sys.rhs(s + C2 * h, &axpy(y, h, &[(A21, k1)]))?;
    let k3 = sys.rhs(s + C3 * h, &axpy(y, h, &[(A31, k1), (A32, &k2)]))?;
    let k4 = sys.rhs(s + C4 * h, &axpy(y, h, &[(A41, k1), (A43, &k3)]))?;
    let k5 = sys.rhs(
        s + C5 * h,
        &axpy(y, h, &[(A51, k1), (A53, &k3), (A54, &k4)]),
    )?;
    let k6 = sys.rhs(
        s + C6 * h,
        &axpy(y, h, &[(A61, k1), (A64, &k4), (A65, &k5)]),
    )?;
    let k7 = sys.rhs(
        s + C7 * h,
        &axpy(y, h, &[(A71, k1), (A74, &k4), (A75, &k5), (A76, &k6)]),
    )?;
    let k8 = sys.rhs(
        s + C8 * h,
        &axpy(
            y,
            h,
            &[(A81, k1), (A84, &k4), (A85, &k5), (A86, &k6), (A87, &k7)],
        ),
    )?;
    let k9 = sys.rhs(
        s + C9 * h,
        &axpy(
            y,
            h,
            &[
                (A91, k1),
                (A94, &k4),
                (A95, &k5),
                (A96, &k6),
                (A97, &k7),
                (A98, &k8),
            ],
        ),
    )?;
    let k10 = sys.rhs(
        s + C10 * h,
        &axpy(
            y,
            h,
            &[
                (A101, k1),
                (A104, &k4),
                (A105, &k5),
                (A106, &k6),
                (A107, &k7),
                (A108, &k8),
                (A109, &k9),
            ],
        ),
    )?;
    let k11 = sys.rhs(
        s + C11 * h,
        &axpy(
            y,
            h,
            &[
                (A111, k1),
                (A114, &k4),
                (A115, &k5),
                (A116, &k6),
                (A117, &k7),
                (A118, &k8),
                (A119, &k9),
                (A1110, &k10),
            ],
        ),
    )?;
    let k12 = sys.rhs(
        s + h,
        &axpy(
            y,
            h,
            &[
                (A121, k1),
                (A124, &k4),
                (A125, &k5),
                (A126, &k6),
                (A127, &k7),
                (A128, &k8),
                (A129, &k9),
                (A1210, &k10),
                (A1211, &k11),
            ],
        ),
    )?;

    let mut y_new = [0.0; N];
    let mut err = 0.0;
    let mut err2 = 0.0;
    for i in 0..N {
        let sum = B1 * k1[i]
            + B6 * k6[i]
            + B7 * k7[i]
            + B8 * k8[i]
            + B9 * k9[i]
            + B10 * k10[i]
            + B11 * k11[i]
            + B12 * k12[i];
        y_new[i] = y[i] + h * sum;
        let sk = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
        let e3 = sum - BHH1 * k1[i] - BHH2 * k9[i] - BHH3 * k12[i];
        err2 += (e3 / sk).powi(2);
        let e5 = ER1 * k1[i]
            + ER6 * k6[i]
            + ER7 * k7[i]
            + ER8 * k8[i]
            + ER9 * k9[i]
            + ER10 * k10[i]
            + ER11 * k11[i]
            + ER12 * k12[i];
        err += (e5 / sk).powi(2);
    }
    let mut deno = err + 0.01 * err2;
    if deno <= 0.0 {
        deno = 1.0;
    }
    let err = h.abs() * err * (1.0 / (deno * N as f64)).sqrt();
    Ok(StepResult {
        y_new,
        err,
        stages: [*k1, k2, k3, k4, k5, k6, k7, k8, k9, k10, k11, k12],
    })
}

/// Builds the continuous extension for an accepted step; costs three extra
/// right-hand-side evaluations.
fn dense_segment<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    s: f64,
    h: f64,
    y: &[f64; N],
    y_new: &[f64; N],
    k13: &[f64; N],
    st: &[[f64; N]; 12],
) -> Result<DenseSegment<N>, OutOfDomain> {
    let [k1, _, _, _, _, k6, k7, k8, k9, k10, k11, k12] = st;
    let mut cont = [[0.0; N]; 8];
    for i in 0..N {
        let ydiff = y_new[i] - y[i];
        let bspl = h * k1[i] - ydiff;
        cont[0][i] = y[i];
        cont[1][i] = ydiff;
        cont[2][i] = bspl;
        cont[3][i] = ydiff - h * k13[i] - bspl;
        cont[4][i] = D41 * k1[i]
            + D46 * k6[i]
            + D47 * k7[i]
            + D48 * k8[i]
            + D49 * k9[i]
            + D410 * k10[i]
            + D411 * k11[i]
            + D412 * k12[i];
        cont[5][i] = D51 * k1[i]
            + D56 * k6[i]
            + D57 * k7[i]
            + D58 * k8[i]
            + D59 * k9[i]
            + D510 * k10[i]
            + D511 * k11[i]
            + D512 * k12[i];
        cont[6][i] = D61 * k1[i]
            + D66 * k6[i]
            + D67 * k7[i]
            + D68 * k8[i]
            + D69 * k9[i]
            + D610 * k10[i]
            + D611 * k11[i]
            + D612 * k12[i];
        cont[7][i] = D71 * k1[i]
            + D76 * k6[i]
            + D77 * k7[i]
            + D78 * k8[i]
            + D79 * k9[i]
            + D710 * k10[i]
            + D711 * k11[i]
            + D712 * k12[i];
    }
    let k14 = sys.rhs(
        s + C14 * h,
        &axpy(
            y,
            h,
            &[
                (A141, k1),
                (A147, k7),
                (A148, k8),
                (A149, k9),
                (A1410, k10),
                (A1411, k11),
                (A1412, k12),
                (A1413, k13),
            ],
        ),
    )?;
    let k15 = sys.rhs(
        s + C15 * h,
        &axpy(
            y,
            h,
            &[
                (A151, k1),
                (A156, k6),
                (A157, k7),
                (A158, k8),
                (A1511, k11),
                (A1512, k12),
                (A1513, k13),
                (A1514, &k14),
            ],
        ),
    )?;
    let k16 = sys.rhs(
        s + C16 * h,
        &axpy(
            y,
            h,
            &[
                (A161, k1),
                (A166, k6),
                (A167, k7),
                (A168, k8),
                (A169, k9),
                (A1613, k13),
                (A1614, &k14),
                (A1615, &k15),
            ],
        ),
    )?;
    for i in 0..N {
        cont[4][i] =
            h * (cont[4][i] + D413 * k13[i] + D414 * k14[i] + D415 * k15[i] + D416 * k16[i]);
        cont[5][i] =
            h * (cont[5][i] + D513 * k13[i] + D514 * k14[i] + D515 * k15[i] + D516 * k16[i]);
        cont[6][i] =
            h * (cont[6][i] + D613 * k13[i] + D614 * k14[i] + D615 * k15[i] + D616 * k16[i]);
        cont[7][i] =
            h * (cont[7][i] + D713 * k13[i] + D714 * k14[i] + D715 * k15[i] + D716 * k16[i]);
    }
    Ok(DenseSegment { s0: s, h, cont })
}

fn initial_step<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    s: f64,
    y: &[f64; N],
    f0: &[f64; N],
    dir: f64,
    hmax: f64,
    cfg: &IntegratorConfig,
) -> f64 {
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..N {
        let sk = cfg.abs_tol + cfg.rel_tol * y[i].abs();
        dnf += (f0[i] / sk).powi(2);
        dny += (y[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(hmax);
    let y1 = axpy(y, dir * h, &[(1.0, f0)]);
    let der2 = match sys.rhs(s + dir * h, &y1) {
        Ok(f1) => {
            let mut acc = 0.0;
            for i in 0..N {
                let sk = cfg.abs_tol + cfg.rel_tol * y[i].abs();
                acc += ((f1[i] - f0[i]) / sk).powi(2);
            }
            acc.sqrt() / h
        }
        Err(_) => return (h * 1e-3).min(hmax),
    };
    let der12 = der2.abs().max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(1.0 / 8.0)
    };
    (100.0 * h).min(h1).min(hmax)
}

/// Brent's method on a bracketing interval `[a, b]` with `f(a)·f(b) ≤ 0`.
pub(crate) fn brent_root(
    f: impl Fn(f64) -> f64,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    xtol: f64,
) -> f64 {
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    b
}

/// Integrates over a prescribed mesh without error control, one DOP853 step
/// per mesh interval. The result is a smooth function of `y0`, which makes
/// finite-difference derivatives of the flow map well behaved when the mesh
/// is taken from an adaptive run.
pub fn propagate_on_mesh<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    mesh: &[f64],
    y0: [f64; N],
) -> Result<[f64; N], FlowError> {
    let cfg = IntegratorConfig::default();
    let mut y = y0;
    for w in mesh.windows(2) {
        let (s, h) = (w[0], w[1] - w[0]);
        let k1 = sys
            .rhs(s, &y)
            .map_err(|e| FlowError::DomainExit { s, reason: e.0 })?;
        y = dop853_step(sys, s, &y, &k1, h, &cfg)
            .map_err(|e| FlowError::DomainExit { s, reason: e.0 })?
            .y_new;
    }
    Ok(y)
}

/// Integrates `sys` from `(s0, y0)` to `s_end` (either direction).
///
/// Events are checked on every accepted step and located by Brent iteration
/// on the continuous extension to `1e-13·max(1, |s|)`. A terminal event ends
/// the integration at the located root.
pub fn propagate<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    s0: f64,
    y0: [f64; N],
    s_end: f64,
    cfg: &IntegratorConfig,
    events: &[EventSpec<'_, N>],
) -> Result<Trajectory<N>, FlowError> {
    cfg.validate()?;
    let mut traj = Trajectory {
        s: vec![s0],
        y: vec![y0],
        dense: Vec::new(),
        events: Vec::new(),
        stopped_by: None,
        n_eval: 0,
        n_rejected: 0,
    };
    if s_end == s0 {
        return Ok(traj);
    }
    let dir = (s_end - s0).signum();
    let span = (s_end - s0).abs();
    let hmax = cfg.max_step.min(span);

    let mut s = s0;
    let mut y = y0;
    let mut k1 = sys
        .rhs(s, &y)
        .map_err(|e| FlowError::DomainExit { s, reason: e.0 })?;
    traj.n_eval += 1;
    let mut h = initial_step(sys, s, &y, &k1, dir, hmax, cfg);
    traj.n_eval += 1;
    let mut g_prev: Vec<f64> = events.iter().map(|e| (e.event_fn)(s, &y)).collect();

    let mut last_rejected = false;
    let mut domain_retries = 0usize;
    let mut domain_reason: Option<String> = None;
    let mut steps = 0usize;

    loop {
        if steps >= cfg.max_steps {
            return Err(FlowError::MaxSteps(cfg.max_steps));
        }
        let remaining = (s_end - s) * dir;
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        if h < 1e-14 * s.abs().max(1.0) && !last {
            if let Some(reason) = domain_reason {
                return Err(FlowError::DomainExit { s, reason });
            }
            return Err(FlowError::StepSizeUnderflow { s, h });
        }
        let hs = dir * h;
        let step = match dop853_step(sys, s, &y, &k1, hs, cfg) {
            Ok(st) => st,
            Err(e) => {
                traj.n_eval += 11;
                domain_retries += 1;
                if domain_retries > 40 {
                    return Err(FlowError::DomainExit { s, reason: e.0 });
                }
                domain_reason = Some(e.0);
                h *= 0.5;
                last_rejected = true;
                continue;
            }
        };
        traj.n_eval += 11;
        steps += 1;

        let fac11 = step.err.powf(1.0 / 8.0);
        let fac = (1.0 / 6.0f64).max((1.0 / 0.333f64).min(fac11 / 0.9));
        let mut h_new = h / fac;

        if step.err > 1.0 {
            h /= (1.0 / 0.333f64).min(fac11 / 0.9);
            last_rejected = true;
            traj.n_rejected += 1;
            continue;
        }

        let s_new = if last { s_end } else { s + hs };
        let k13 = match sys.rhs(s_new, &step.y_new) {
            Ok(k) => k,
            Err(e) => {
                domain_retries += 1;
                if domain_retries > 40 {
                    return Err(FlowError::DomainExit {
                        s: s_new,
                        reason: e.0,
                    });
                }
                domain_reason = Some(e.0);
                h *= 0.5;
                last_rejected = true;
                continue;
            }
        };
        traj.n_eval += 1;
        domain_retries = 0;
        domain_reason = None;

        let g_new: Vec<f64> = events
            .iter()
            .map(|e| (e.event_fn)(s_new, &step.y_new))
            .collect();
        let triggered: Vec<usize> = (0..events.len())
            .filter(|&i| events[i].triggers(g_prev[i], g_new[i]))
            .collect();

        let need_dense = cfg.dense_output || !triggered.is_empty();
        let seg = if need_dense {
            let seg = dense_segment(sys, s, hs, &y, &step.y_new, &k13, &step.stages)
                .map_err(|e| FlowError::DomainExit { s, reason: e.0 })?;
            traj.n_eval += 3;
            Some(seg)
        } else {
            None
        };

        let mut hits: Vec<EventHit<N>> = Vec::new();
        if let Some(seg) = &seg {
            for &i in &triggered {
                let ev = &events[i];
                let g = |x: f64| (ev.event_fn)(x, &seg.eval(x));
                let xtol = 1e-13 * s.abs().max(s_new.abs()).max(1.0);
                let root = brent_root(g, s, s_new, g_prev[i], g_new[i], xtol);
                hits.push(EventHit {
                    index: i,
                    s: root,
                    y: seg.eval(root),
                });
            }
        }
        hits.sort_by(|a, b| ((a.s - s) * dir).total_cmp(&((b.s - s) * dir)));

        if let Some(pos) = hits.iter().position(|hit| events[hit.index].terminal) {
            let stop = hits[pos].clone();
            traj.events.extend(hits.into_iter().take(pos + 1));
            if cfg.dense_output {
                if let Some(seg) = seg {
                    // eval() clips at the stop point
                    traj.dense.push(seg);
                }
            }
            traj.s.push(stop.s);
            traj.y.push(stop.y);
            traj.stopped_by = Some(stop.index);
            return Ok(traj);
        }
        traj.events.extend(hits);

        if cfg.dense_output {
            if let Some(seg) = seg {
                traj.dense.push(seg);
            }
        }
        s = s_new;
        y = step.y_new;
        k1 = k13;
        g_prev = g_new;
        traj.s.push(s);
        traj.y.push(y);

        if last {
            return Ok(traj);
        }
        if last_rejected {
            h_new = h_new.min(h);
            last_rejected = false;
        }
        h = h_new.min(hmax);
    }
}
