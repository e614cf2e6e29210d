//! `ksorbit validate`: re-propagates every record of a database and checks
//! closure, collision limits, the energy identity, drifts and the domain.

use std::io::Write;
use std::path::Path;

use anyhow::anyhow;
use log::warn;
use serde::Serialize;

use ksorbit::io::read_db;
use ksorbit::ksreg::KSState;
use ksorbit::porbit::{reconstruct, OrbitRecord};
use ksorbit::quat::circle_act;
use ksorbit::rtbp::{build_perturbation, energy_identity_check, RtbpPerturbation};

use crate::config::RunConfig;
use crate::Failure;

const CLOSURE_TOL: f64 = 1e-8;
const JUMP_TOL: f64 = 1e-6;
const ENERGY_IDENTITY_TOL: f64 = 1e-8;
const DRIFT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct RecordCheck {
    pub index: usize,
    pub k: u32,
    pub closure: f64,
    pub eta: i64,
    pub collisions: usize,
    pub direction_jump: f64,
    pub energy_jump: f64,
    pub energy_identity: f64,
    pub drift_k: f64,
    pub drift_moment: f64,
    pub max_radius: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub db: String,
    pub delta_u: f64,
    pub n_records: usize,
    pub n_failed: usize,
    pub records: Vec<RecordCheck>,
}

fn closure(rec: &OrbitRecord, end: &KSState) -> f64 {
    let back = circle_act(-rec.theta, end);
    let d = KSState {
        t: rec.x0.t,
        ..back
    }
    .distance(&rec.x0);
    let dt = (end.t - rec.x0.t - rec.eta.max(1) as f64 * rec.period).abs();
    d.max(dt)
}

fn check_record(
    pert: &RtbpPerturbation,
    cfg: &RunConfig,
    index: usize,
    rec: &OrbitRecord,
) -> RecordCheck {
    let mut c = RecordCheck {
        index,
        k: rec.k,
        closure: f64::NAN,
        eta: 0,
        collisions: 0,
        direction_jump: f64::NAN,
        energy_jump: f64::NAN,
        energy_identity: f64::NAN,
        drift_k: f64::NAN,
        drift_moment: f64::NAN,
        max_radius: f64::NAN,
        passed: false,
        failures: Vec::new(),
    };
    let orbit = match reconstruct(pert, rec, &cfg.integrator_config()) {
        Ok(o) => o,
        Err(e) => {
            c.failures.push(format!("re-propagation failed: {e}"));
            return c;
        }
    };
    c.closure = closure(rec, &KSState::from_array(&orbit.traj.y_final()));
    c.eta = orbit.eta();
    c.drift_k = orbit.drift_k;
    c.drift_moment = orbit.drift_moment;
    c.collisions = orbit.collisions.len();
    let (sampled, uniform) = orbit.sampled(cfg.solver.n_samples);
    c.max_radius = uniform.iter().map(|s| s.u.norm()).fold(0.0, f64::max);
    c.energy_identity = energy_identity_check(pert, &uniform, rec.eps);
    match ksorbit::kepler::check_generalized(&sampled) {
        Ok(g) => {
            c.direction_jump = g.direction_jump;
            c.energy_jump = g.energy_jump;
            if !g.zset_discrete {
                c.failures.push("collision set is not discrete".into());
            }
        }
        Err(e) => c
            .failures
            .push(format!("generalized-solution check failed: {e}")),
    }

    let mut need = |ok: bool, msg: String| {
        if !ok {
            c.failures.push(msg);
        }
    };
    need(
        c.closure < CLOSURE_TOL,
        format!("closure {:.2e} >= {CLOSURE_TOL:.0e}", c.closure),
    );
    need(
        c.eta == 1 && c.eta == rec.eta,
        format!("eta {} (stored {})", c.eta, rec.eta),
    );
    need(
        !(c.direction_jump >= JUMP_TOL),
        format!("direction jump {:.2e}", c.direction_jump),
    );
    need(
        !(c.energy_jump >= JUMP_TOL),
        format!("energy jump {:.2e}", c.energy_jump),
    );
    need(
        c.energy_identity < ENERGY_IDENTITY_TOL,
        format!("energy identity {:.2e}", c.energy_identity),
    );
    need(c.drift_k < DRIFT_TOL, format!("K drift {:.2e}", c.drift_k));
    need(
        c.drift_moment < DRIFT_TOL,
        format!("BL drift {:.2e}", c.drift_moment),
    );
    need(
        c.max_radius < pert.delta_u,
        format!(
            "max |u| {:.4} outside delta_u {:.4}",
            c.max_radius, pert.delta_u
        ),
    );
    need(
        c.collisions == rec.collision_count,
        format!(
            "{} collisions (stored {})",
            c.collisions, rec.collision_count
        ),
    );
    c.passed = c.failures.is_empty();
    c
}

pub fn run(
    cfg: &RunConfig,
    db_override: Option<&Path>,
    report_override: Option<&Path>,
    out: &mut dyn Write,
) -> Result<ValidationReport, Failure> {
    let db = db_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.db_path());
    let records = read_db(&db).map_err(|e| Failure::input(anyhow!("{}: {e}", db.display())))?;
    let family = cfg.family().map_err(Failure::input)?;
    let pert =
        build_perturbation(family, cfg.family.eps_star).map_err(|e| Failure::input(anyhow!(e)))?;
    if records.is_empty() {
        warn!("{} holds no records", db.display());
    }
    let checks: Vec<RecordCheck> = records
        .iter()
        .enumerate()
        .map(|(i, r)| check_record(&pert, cfg, i, r))
        .collect();
    let report = ValidationReport {
        db: db.display().to_string(),
        delta_u: pert.delta_u,
        n_records: checks.len(),
        n_failed: checks.iter().filter(|c| !c.passed).count(),
        records: checks,
    };
    let path = report_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.report_path());
    let mut write = || -> anyhow::Result<()> {
        std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
        for c in &report.records {
            let status = if c.passed { "ok" } else { "FAILED" };
            writeln!(out, "record {:>3} k = {:>3}: {status} closure {:.2e}, jumps {:.1e}/{:.1e}, energy identity {:.1e}", c.index, c.k, c.closure, c.direction_jump, c.energy_jump, c.energy_identity)?;
            for f in &c.failures {
                writeln!(out, "    {f}")?;
            }
        }
        writeln!(
            out,
            "{} records, {} failed; report in {}",
            report.n_records,
            report.n_failed,
            path.display()
        )?;
        Ok(())
    };
    write().map_err(Failure::other)?;
    if report.n_failed > 0 {
        return Err(Failure::new(
            5,
            anyhow!(
                "{} of {} records failed validation",
                report.n_failed,
                report.n_records
            ),
        ));
    }
    Ok(report)
}
