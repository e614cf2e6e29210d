//! `ksorbit find`: continuation from the unperturbed seeds to an orbit
//! database.

use std::io::Write;
use std::path::Path;

use anyhow::anyhow;
use log::warn;

use ksorbit::io::write_db;
use ksorbit::porbit::{find_orbits, FindReport};
use ksorbit::rtbp::{build_perturbation, k_min, seed_radius};

use crate::config::RunConfig;
use crate::Failure;

pub fn run(
    cfg: &RunConfig,
    db_override: Option<&Path>,
    out: &mut dyn Write,
) -> Result<FindReport, Failure> {
    let family = cfg.family().map_err(Failure::input)?;
    let pert =
        build_perturbation(family, cfg.family.eps_star).map_err(|e| Failure::input(anyhow!(e)))?;
    let opts = cfg.solve_options().map_err(Failure::input)?;
    let kmin = k_min(pert.delta_u, 1.0);
    for &k in cfg.solver.k_list.iter().filter(|&&k| k < kmin) {
        warn!(
            "k = {k} is below k_min = {kmin}: SeedOutsideDomain (seed radius {:.4} >= delta_u {:.4}); skipped",
            seed_radius(k, 1.0),
            pert.delta_u
        );
    }
    let report = find_orbits(
        &pert,
        cfg.solver.eps,
        &cfg.solver.k_list,
        cfg.solver.l_target,
        &opts,
    );

    let db = db_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.db_path());
    write_db(&db, &report.records).map_err(|e| Failure::other(anyhow!(e)))?;
    print_summary(out, &report, pert.delta_u, kmin).map_err(|e| Failure::other(anyhow!(e)))?;
    writeln!(
        out,
        "wrote {} records to {}",
        report.records.len(),
        db.display()
    )
    .map_err(|e| Failure::other(anyhow!(e)))?;
    if let Err(e) = report.ensure_target() {
        return Err(Failure::new(4, anyhow!(e)));
    }
    Ok(report)
}

fn print_summary(
    out: &mut dyn Write,
    rep: &FindReport,
    delta_u: f64,
    kmin: u32,
) -> std::io::Result<()> {
    writeln!(
        out,
        "eps = {:e}, delta_u = {delta_u:.6}, k_min = {kmin}, target l = {}",
        rep.eps, rep.l_target
    )?;
    writeln!(
        out,
        "{:>4} {:>6} {:>6} {:>6} {:>11} {:>10}  note",
        "k", "seeds", "conv", "found", "residual", "collisions"
    )?;
    for s in &rep.per_k {
        let collisions: usize = rep
            .records
            .iter()
            .filter(|r| r.k == s.k)
            .map(|r| r.collision_count)
            .sum();
        let residual = s
            .best_residual
            .map_or("-".to_string(), |r| format!("{r:.2e}"));
        let mut note = s.note.clone().unwrap_or_default();
        if s.converged == 0 {
            if let Some(a) = s.achieved_eps {
                note = format!("{note} reached eps = {a:e}").trim().to_string();
            }
        }
        writeln!(
            out,
            "{:>4} {:>6} {:>6} {:>6} {:>11} {:>10}  {note}",
            s.k, s.seeds, s.converged, s.distinct, residual, collisions
        )?;
    }
    Ok(())
}
