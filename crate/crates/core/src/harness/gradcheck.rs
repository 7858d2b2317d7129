use std::io::Write;
use std::path::Path;

use crate::adjoint::NormMode;
use crate::field::VectorField;
use crate::solver::Tolerances;

use super::config::ExperimentConfig;
use super::problem::{Discrepancy, Problem, TINY};
use super::HarnessError;

pub const GRADCHECK_REL_TOL: f64 = 1e-4;
/// Forward solves behind the finite differences.
pub const FD_TOLERANCES: (f64, f64) = (1e-10, 1e-12);
pub const FD_REL_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub field_index: usize,
    pub kind: String,
    pub mode: NormMode,
    pub seed: u64,
    pub param_count: usize,
    pub theta: Discrepancy,
    pub z0: Discrepancy,
    pub times: Discrepancy,
    pub backward_nfe: u64,
}

impl GradcheckRow {
    pub fn overall(&self) -> Discrepancy {
        self.theta.combine(self.z0).combine(self.times)
    }

    pub fn passed(&self) -> bool {
        self.overall().within(GRADCHECK_REL_TOL, TINY)
    }
}

/// Adjoint vs. finite differences for every (field, seed, norm mode) in the config.
/// The adjoint runs at the config's first tolerance pair.
pub fn run_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<GradcheckRow>, HarnessError> {
    let tol = cfg.tolerance_pairs()[0];
    let fd_tol = Tolerances::new(FD_TOLERANCES.0, FD_TOLERANCES.1).expect("constant");
    let mut rows = Vec::new();
    for (idx, spec) in std::iter::once(&cfg.field)
        .chain(&cfg.extra_fields)
        .enumerate()
    {
        for &seed in &cfg.seeds {
            let problem = Problem::from_config(cfg, spec, seed)?;
            let fd = problem.finite_difference_gradient(fd_tol, FD_REL_STEP)?;
            for &mode in &cfg.norm_modes {
                let eval = problem.gradient(tol, mode)?;
                let g = &eval.grad;
                rows.push(GradcheckRow {
                    field_index: idx,
                    kind: spec.kind.as_str().to_string(),
                    mode,
                    seed,
                    param_count: problem.field.param_count(),
                    theta: Discrepancy::between(&g.dl_dtheta, &fd.dl_dtheta),
                    z0: Discrepancy::between(&g.dl_dz0, &fd.dl_dz0),
                    times: Discrepancy::between(&[g.dl_dt0, g.dl_dt1], &[fd.dl_dt0, fd.dl_dt1]),
                    backward_nfe: g.stats.nfe,
                });
            }
        }
    }
    Ok(rows)
}

pub fn cmd_gradcheck(cfg: &ExperimentConfig, out: &Path) -> Result<(), HarnessError> {
    let rows = run_gradcheck(cfg)?;
    let mut w = csv::Writer::from_path(out.join("gradcheck.csv"))?;
    w.write_record([
        "field",
        "kind",
        "mode",
        "seed",
        "params",
        "theta_max_rel",
        "z0_max_rel",
        "time_max_rel",
        "tiny_max_abs",
        "backward_nfe",
        "passed",
    ])?;
    let stdout = std::io::stdout();
    let mut so = stdout.lock();
    let mut worst = 0.0f64;
    for r in &rows {
        let all = r.overall();
        worst = worst.max(all.max_rel);
        w.write_record([
            r.field_index.to_string(),
            r.kind.clone(),
            r.mode.to_string(),
            r.seed.to_string(),
            r.param_count.to_string(),
            r.theta.max_rel.to_string(),
            r.z0.max_rel.to_string(),
            r.times.max_rel.to_string(),
            all.max_abs_tiny.to_string(),
            r.backward_nfe.to_string(),
            r.passed().to_string(),
        ])?;
        let theta = if r.param_count == 0 {
            "theta: (no parameters)".to_string()
        } else {
            format!("theta max rel {:.3e}", r.theta.max_rel)
        };
        writeln!(
            so,
            "[{}] field {} ({}) seed {} {:>8}: {}, z0 max rel {:.3e}, time max rel {:.3e}, bwd nfe {}",
            if r.passed() { "ok" } else { "FAIL" },
            r.field_index,
            r.kind,
            r.seed,
            r.mode,
            theta,
            r.z0.max_rel,
            r.times.max_rel,
            r.backward_nfe
        )?;
    }
    w.flush()?;
    writeln!(
        so,
        "max relative error: {worst:.3e} (threshold {GRADCHECK_REL_TOL:e})"
    )?;
    if rows.iter().all(GradcheckRow::passed) {
        Ok(())
    } else {
        Err(HarnessError::Threshold(format!(
            "gradient check exceeded {GRADCHECK_REL_TOL:e}"
        )))
    }
}
