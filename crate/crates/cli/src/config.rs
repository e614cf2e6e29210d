//! Run configuration: `key = value` lines under `[family]`, `[solver]`,
//! `[integrator]` and `[output]` headers (a TOML subset).
//!
//! Relative output paths are resolved against the directory of the config
//! file.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use nalgebra::Vector3;
use serde::Deserialize;

use ksorbit::flow::IntegratorConfig;
use ksorbit::porbit::SolveOptions;
use ksorbit::rtbp::{axis_angle_rotation, MassRule, PrimariesFamily, SemiMajorRule};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: FamilySection,
    pub solver: SolverSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// `"linear"` or polynomial coefficients.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RuleSpec {
    Named(String),
    Coefficients(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    #[serde(default)]
    pub e0: f64,
    #[serde(rename = "T0", default = "two_pi")]
    pub t0: f64,
    /// Largest `ε` of the family; bounds `solver.eps`.
    #[serde(default = "default_eps_star")]
    pub eps_star: f64,
    /// `"linear"` (`m_ε = ε`) or coefficients of `m_ε/ε` in powers of `ε`.
    #[serde(default = "linear")]
    pub masses: RuleSpec,
    /// `"constant_period"` or coefficients of `a_ε/m_ε` in powers of `ε`.
    #[serde(default = "constant_period")]
    pub a_rule: RuleSpec,
    #[serde(default = "z_axis")]
    pub rotation_axis: [f64; 3],
    #[serde(default)]
    pub rotation_angle: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub eps: f64,
    pub k_list: Vec<u32>,
    pub l_target: usize,
    #[serde(default = "one")]
    pub n_orient: usize,
    #[serde(default = "one")]
    pub n_phase: usize,
    #[serde(default = "yes")]
    pub planar_only: bool,
    #[serde(default = "yes")]
    pub ladder: bool,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection {
            rel_tol: 1e-13,
            abs_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_db")]
    pub db: PathBuf,
    #[serde(default = "default_report")]
    pub report: PathBuf,
    pub ephemeris: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            db: default_db(),
            report: default_report(),
            ephemeris: None,
        }
    }
}

fn two_pi() -> f64 {
    std::f64::consts::TAU
}
fn default_eps_star() -> f64 {
    1e-2
}
fn linear() -> RuleSpec {
    RuleSpec::Named("linear".into())
}
fn constant_period() -> RuleSpec {
    RuleSpec::Named("constant_period".into())
}
fn z_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_samples() -> usize {
    1024
}
fn default_db() -> PathBuf {
    "orbits.jsonl".into()
}
fn default_report() -> PathBuf {
    "validation.json".into()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.family;
        let s = &self.solver;
        ensure!(
            f.eps_star > 0.0 && f.eps_star < 1.0,
            "family.eps_star = {} not in (0, 1)",
            f.eps_star
        );
        ensure!(
            s.eps >= 0.0 && s.eps <= f.eps_star,
            "solver.eps = {} not in [0, eps_star = {}]",
            s.eps,
            f.eps_star
        );
        ensure!(!s.k_list.is_empty(), "solver.k_list is empty");
        ensure!(
            s.k_list.iter().all(|&k| k >= 1),
            "solver.k_list entries must be >= 1"
        );
        ensure!(s.l_target >= 1, "solver.l_target must be >= 1");
        ensure!(
            s.n_orient >= 1 && s.n_phase >= 1,
            "seed grid sizes must be >= 1"
        );
        ensure!(s.n_samples >= 16, "solver.n_samples must be >= 16");
        self.integrator_config().validate()?;
        self.family()?.validate(f.eps_star)?;
        for p in self.output_paths() {
            let dir = p
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            ensure!(
                dir.is_dir(),
                "output directory {} does not exist",
                dir.display()
            );
        }
        Ok(())
    }

    pub fn family(&self) -> Result<PrimariesFamily> {
        let f = &self.family;
        let mass = match &f.masses {
            RuleSpec::Named(n) if n == "linear" => MassRule::Linear,
            RuleSpec::Coefficients(c) if !c.is_empty() => MassRule::Polynomial(c.clone()),
            other => bail!("family.masses: expected \"linear\" or coefficients, got {other:?}"),
        };
        let a_rule = match &f.a_rule {
            RuleSpec::Named(n) if n == "constant_period" => SemiMajorRule::ConstantPeriod,
            RuleSpec::Coefficients(c) if !c.is_empty() => SemiMajorRule::Polynomial(c.clone()),
            other => {
                bail!("family.a_rule: expected \"constant_period\" or coefficients, got {other:?}")
            }
        };
        Ok(PrimariesFamily {
            e0: f.e0,
            t0: f.t0,
            rotation: axis_angle_rotation(Vector3::from(f.rotation_axis), f.rotation_angle),
            mass,
            a_rule,
        })
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        IntegratorConfig {
            rel_tol: self.integrator.rel_tol,
            abs_tol: self.integrator.abs_tol,
            ..IntegratorConfig::default()
        }
    }

    pub fn solve_options(&self) -> Result<SolveOptions> {
        let s = &self.solver;
        Ok(SolveOptions {
            integrator: self.integrator_config(),
            ladder: s.ladder,
            n_orient: s.n_orient,
            n_phase: s.n_phase,
            planar_only: s.planar_only,
            base_orientation: self.family()?.rotation,
            n_samples: s.n_samples,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn db_path(&self) -> PathBuf {
        self.resolve(&self.output.db)
    }

    pub fn report_path(&self) -> PathBuf {
        self.resolve(&self.output.report)
    }

    pub fn ephemeris_path(&self) -> Option<PathBuf> {
        self.output.ephemeris.as_deref().map(|p| self.resolve(p))
    }

    fn output_paths(&self) -> Vec<PathBuf> {
        let mut v = vec![self.db_path(), self.report_path()];
        v.extend(self.ephemeris_path());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg =
            parse("[family]\ne0 = 0.0\n[solver]\neps = 1e-3\nk_list = [9, 10]\nl_target = 2\n")
                .unwrap();
        let fam = cfg.family().unwrap();
        assert_eq!(fam.mass, MassRule::Linear);
        assert_eq!(fam.a_rule, SemiMajorRule::ConstantPeriod);
        assert_eq!(fam.t0, std::f64::consts::TAU);
        assert_eq!(cfg.integrator_config().rel_tol, 1e-13);
        assert_eq!(cfg.db_path(), PathBuf::from("orbits.jsonl"));
    }

    #[test]
    fn polynomial_rules_and_rotation() {
        let cfg = parse(
            "[family]\ne0 = 0.2\nmasses = [1.0, 0.5]\na_rule = [1.0]\nrotation_axis = [1, 0, 0]\nrotation_angle = 0.5\n\
             [solver]\neps = 1e-3\nk_list = [9]\nl_target = 1\n",
        )
        .unwrap();
        let fam = cfg.family().unwrap();
        assert_eq!(fam.mass, MassRule::Polynomial(vec![1.0, 0.5]));
        assert!((fam.rotation.re - 0.25f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_values() {
        let base = "[solver]\nk_list = [9]\nl_target = 1\n";
        assert!(parse(&format!("[family]\ne0 = 1.2\n{base}eps = 1e-3\n")).is_err());
        assert!(parse(&format!("[family]\ne0 = 0.0\n{base}eps = 0.5\n")).is_err());
        assert!(parse(&format!("[family]\nmasses = \"cubic\"\n{base}eps = 1e-3\n")).is_err());
        assert!(parse(&format!("[family]\nbogus = 1\n{base}eps = 1e-3\n")).is_err());
        assert!(parse("[family]\n[solver]\neps = 1e-3\nk_list = []\nl_target = 1\n").is_err());
        assert!(parse(&format!(
            "[family]\n{base}eps = 1e-3\n[integrator]\nrel_tol = 1.0\nabs_tol = 1e-12\n"
        ))
        .is_err());
        assert!(parse(&format!(
            "[family]\n{base}eps = 1e-3\n[output]\ndb = \"/no/such/dir/x.jsonl\"\n"
        ))
        .is_err());
    }
}
