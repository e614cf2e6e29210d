//! `ksorbit lift`: horizontal lift of a sampled sphere path.
//!
//! Each partition subinterval is reconstructed as a cubic Hermite spline
//! through its samples, projected back onto the sphere. A sample at a
//! partition point may omit `gamma_dot` (`null`) to mark a Kepler-type
//! velocity blow-up there; the adjacent spline segment is then built in the
//! variable `x = |t − tᵢ|^{1/3}`, in which such paths are smooth.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::Deserialize;

use ksorbit::io::create_csv;
use ksorbit::pathlift::{lift_ppath, LiftError, PPath, PathPiece, Vec3};
use ksorbit::quat::{hopf_section, ks_map};
use ksorbit::{ImQuaternion, Quaternion};

use crate::Failure;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftInput {
    pub partition: Vec<f64>,
    pub samples: Vec<SampleIn>,
    /// Fiber phase of the starting point over `γ(t₀)`.
    #[serde(default)]
    pub start_phase: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleIn {
    pub t: f64,
    pub gamma: [f64; 3],
    #[serde(default)]
    pub gamma_dot: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy)]
struct Knot {
    t: f64,
    g: Vec3,
    gd: Option<Vec3>,
}

/// Spline through the knots of one subinterval.
struct HermitePiece {
    knots: Vec<Knot>,
}

/// Cubic Hermite on `[0, h]`: value and derivative at `x`.
fn hermite(p0: Vec3, m0: Vec3, p1: Vec3, m1: Vec3, h: f64, x: f64) -> (Vec3, Vec3) {
    let s = x / h;
    let (s2, s3) = (s * s, s * s * s);
    let p = p0 * (2.0 * s3 - 3.0 * s2 + 1.0)
        + m0 * (h * (s3 - 2.0 * s2 + s))
        + p1 * (-2.0 * s3 + 3.0 * s2)
        + m1 * (h * (s3 - s2));
    let d = (p0 * (6.0 * s2 - 6.0 * s) + p1 * (6.0 * s - 6.0 * s2)) / h
        + m0 * (3.0 * s2 - 4.0 * s + 1.0)
        + m1 * (3.0 * s2 - 2.0 * s);
    (p, d)
}

impl PathPiece for HermitePiece {
    fn eval(&self, t: f64) -> (Vec3, Vec3) {
        let n = self
            .knots
            .partition_point(|k| k.t <= t)
            .clamp(1, self.knots.len() - 1);
        let (a, b) = (self.knots[n - 1], self.knots[n]);
        // (p, dp/dt) of the unprojected spline
        let (p, pd) = match (a.gd, b.gd) {
            (Some(ma), Some(mb)) => hermite(a.g, ma, b.g, mb, b.t - a.t, t - a.t),
            (None, Some(mb)) => {
                let h = (b.t - a.t).cbrt();
                let x = (t - a.t).max(0.0).cbrt();
                let (p, px) = hermite(a.g, Vec3::zeros(), b.g, mb * (3.0 * h * h), h, x);
                (p, px / (3.0 * x * x))
            }
            (Some(ma), None) => {
                let h = (b.t - a.t).cbrt();
                let x = (b.t - t).max(0.0).cbrt();
                let (p, px) = hermite(b.g, Vec3::zeros(), a.g, -ma * (3.0 * h * h), h, x);
                (p, -px / (3.0 * x * x))
            }
            (None, None) => (a.g, Vec3::from_element(f64::NAN)),
        };
        let r = p.norm();
        let g = p / r;
        (g, (pd - g * g.dot(&pd)) / r)
    }
}

/// Builds the path. A sample at an interior partition point belongs to both
/// neighbouring pieces; a second sample at the same time overrides it for the
/// right-hand piece (one-sided velocities at a corner).
pub fn build_path(input: &LiftInput) -> Result<PPath> {
    let part = &input.partition;
    ensure!(part.len() >= 2, "partition needs at least two points");
    ensure!(
        part.windows(2).all(|w| w[1] > w[0]),
        "partition is not strictly increasing"
    );
    let samples = &input.samples;
    ensure!(
        samples.windows(2).all(|w| w[1].t >= w[0].t),
        "samples are not sorted by t"
    );
    let (t_lo, t_hi) = (part[0], part[part.len() - 1]);
    let mut lists: Vec<Vec<Knot>> = vec![Vec::new(); part.len() - 1];
    let mut i = 0;
    while i < samples.len() {
        let t = samples[i].t;
        let j = i + samples[i..].iter().take_while(|s| s.t == t).count();
        let run = &samples[i..j];
        ensure!(
            t >= t_lo && t <= t_hi,
            "sample at t = {t} outside the partition"
        );
        let on_partition = part.contains(&t);
        ensure!(
            run.len() == 1 || (on_partition && run.len() == 2),
            "repeated sample time {t} away from a corner"
        );
        for (n, w) in part.windows(2).enumerate() {
            if t == w[1] {
                lists[n].push(knot(&run[0])?);
            } else if t == w[0] {
                lists[n].push(knot(&run[run.len() - 1])?);
            } else if t > w[0] && t < w[1] {
                let k = knot(&run[0])?;
                ensure!(
                    k.gd.is_some(),
                    "gamma_dot may be omitted only at partition points"
                );
                lists[n].push(k);
            }
        }
        i = j;
    }
    let mut pieces: Vec<Arc<dyn PathPiece>> = Vec::new();
    for (knots, w) in lists.into_iter().zip(part.windows(2)) {
        let (lo, hi) = (w[0], w[1]);
        ensure!(
            knots.len() >= 2 && knots[0].t == lo && knots[knots.len() - 1].t == hi,
            "subinterval [{lo}, {hi}] needs samples at both ends"
        );
        if knots.len() == 2 && knots[0].gd.is_none() && knots[1].gd.is_none() {
            bail!("subinterval [{lo}, {hi}] is singular at both ends with no interior sample");
        }
        pieces.push(Arc::new(HermitePiece { knots }));
    }
    PPath::new(part.clone(), pieces).map_err(|e| anyhow!(e))
}

fn knot(s: &SampleIn) -> Result<Knot> {
    let g = Vec3::from(s.gamma);
    ensure!(
        g.iter().all(|x| x.is_finite()),
        "non-finite gamma at t = {}",
        s.t
    );
    ensure!(
        (g.norm() - 1.0).abs() < 1e-6,
        "gamma at t = {} is not a unit vector",
        s.t
    );
    let gd = s.gamma_dot.map(Vec3::from);
    if let Some(v) = gd {
        ensure!(
            v.iter().all(|x| x.is_finite()),
            "non-finite gamma_dot at t = {}",
            s.t
        );
    }
    Ok(Knot {
        t: s.t,
        g: g.normalize(),
        gd,
    })
}

pub struct LiftSummary {
    pub rows: usize,
    pub max_fiber: f64,
    pub max_horiz: f64,
    pub holonomy_angle: Option<f64>,
}

pub fn run(input_path: &Path, output_path: &Path) -> Result<LiftSummary, Failure> {
    let text = std::fs::read_to_string(input_path)
        .with_context(|| format!("reading {}", input_path.display()))
        .map_err(Failure::input)?;
    let input: LiftInput = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", input_path.display()))
        .map_err(Failure::input)?;
    let path = build_path(&input).map_err(Failure::input)?;
    let start = Quaternion::unit_complex(input.start_phase)
        * hopf_section(ImQuaternion(path.start_point()));
    let res = match lift_ppath(&path, start) {
        Ok(r) => r,
        Err(e @ LiftError::PoleSelectionFailed(_)) => return Err(Failure::new(3, anyhow!(e))),
        Err(e) => return Err(Failure::input(anyhow!(e))),
    };

    let write = || -> Result<LiftSummary> {
        let mut csv = create_csv(
            output_path,
            &[
                "t",
                "G0",
                "G1",
                "G2",
                "G3",
                "fiber_residual",
                "horiz_residual",
            ],
        )?;
        let mut times: Vec<f64> = input.samples.iter().map(|s| s.t).collect();
        times.dedup();
        let (mut max_fiber, mut max_horiz) = (0.0f64, 0.0f64);
        for &t in &times {
            let g = res.lift.eval(t);
            let fiber = (ks_map(g).vec() - path.point(t)).norm();
            let horiz = res.lift.horizontality_residual(t)?;
            max_fiber = max_fiber.max(fiber);
            max_horiz = max_horiz.max(horiz);
            csv.row(&[t, g.re, g.i, g.j, g.k, fiber, horiz])?;
        }
        csv.finish()?;
        let closed = path.is_closed(1e-9);
        Ok(LiftSummary {
            rows: times.len(),
            max_fiber,
            max_horiz,
            holonomy_angle: if closed { res.holonomy_angle() } else { None },
        })
    };
    write().map_err(Failure::other)
}
