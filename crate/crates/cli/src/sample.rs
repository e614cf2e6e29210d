//! `ksorbit sample`: plot data for one record on a uniform time grid.

use std::path::Path;

use anyhow::{anyhow, ensure};

use ksorbit::io::{create_csv, read_db};
use ksorbit::ksreg::ks_to_phys;
use ksorbit::porbit::reconstruct;
use ksorbit::rtbp::{build_perturbation, ephemeris_row, scaled_separation};
use ksorbit::PerturbationModel;

use crate::config::RunConfig;
use crate::Failure;

pub struct SampleArgs<'a> {
    pub db: Option<&'a Path>,
    pub id: usize,
    pub dt: f64,
    pub out: &'a Path,
    pub ephemeris: Option<&'a Path>,
}

/// Writes `t, u, v, |u|, E, d` rows for `t = t₀, t₀ + dt, …, t₀ + T`, where
/// `d` is the second primary in the same scaled frame. Returns the row count.
pub fn run(cfg: &RunConfig, args: &SampleArgs<'_>) -> Result<usize, Failure> {
    if !(args.dt > 0.0) {
        return Err(Failure::input(anyhow!("dt must be positive")));
    }
    let db = args
        .db
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.db_path());
    let records = read_db(&db).map_err(|e| Failure::input(anyhow!("{}: {e}", db.display())))?;
    let rec = records.get(args.id).ok_or_else(|| {
        Failure::input(anyhow!(
            "no record {} in {} ({} records)",
            args.id,
            db.display(),
            records.len()
        ))
    })?;
    let family = cfg.family().map_err(Failure::input)?;
    let pert =
        build_perturbation(family, cfg.family.eps_star).map_err(|e| Failure::input(anyhow!(e)))?;
    let orbit = reconstruct(&pert, rec, &cfg.integrator_config())
        .map_err(|e| Failure::other(anyhow!(e)))?;

    let n = (rec.period / args.dt).round().max(1.0) as usize;
    let eps = rec.eps;
    let t0 = rec.x0.t;
    let write = || -> anyhow::Result<usize> {
        ensure!(
            args.out
                .parent()
                .is_none_or(|d| d.as_os_str().is_empty() || d.is_dir()),
            "output directory missing"
        );
        let header = [
            "t", "u_x", "u_y", "u_z", "v_x", "v_y", "v_z", "r", "E", "d_x", "d_y", "d_z",
        ];
        let mut csv = create_csv(args.out, &header)?;
        let eph_path = args
            .ephemeris
            .map(Path::to_path_buf)
            .or_else(|| cfg.ephemeris_path());
        let mut eph = match &eph_path {
            Some(p) => Some(create_csv(
                p,
                &[
                    "t", "X_x", "X_y", "X_z", "x_x", "x_y", "x_z", "xi_x", "xi_y", "xi_z",
                ],
            )?),
            None => None,
        };
        for i in 0..=n {
            let t = t0 + rec.period * i as f64 / n as f64;
            // the last row is the end of the period, not its wrap to t₀
            let st = if i == n {
                orbit.state_at_s(orbit.s_period)
            } else {
                orbit.state_at_time(t)
            };
            let u = ks_map_vec(&st);
            let d = scaled_separation(&pert.family, st.t, eps);
            // Kepler energy from K = 0; finite through collisions
            let energy = -st.tau + eps * pert.value(st.t, &u, eps);
            let (v, r) = match ks_to_phys(&st) {
                Ok(p) => (p.v, p.u.norm()),
                Err(_) => (nalgebra::Vector3::from_element(f64::NAN), 0.0),
            };
            csv.row(&[st.t, u.x, u.y, u.z, v.x, v.y, v.z, r, energy, d.x, d.y, d.z])?;
            if let (Some(w), Ok(p)) = (eph.as_mut(), ks_to_phys(&st)) {
                let (tt, big, small, xi) = ephemeris_row(&pert.family, &p, eps);
                w.row(&[
                    tt, big.x, big.y, big.z, small.x, small.y, small.z, xi.x, xi.y, xi.z,
                ])?;
            }
        }
        csv.finish()?;
        if let Some(w) = eph {
            w.finish()?;
        }
        Ok(n + 1)
    };
    write().map_err(Failure::other)
}

fn ks_map_vec(st: &ksorbit::KSState) -> nalgebra::Vector3<f64> {
    ksorbit::quat::ks_map(st.z).vec()
}
