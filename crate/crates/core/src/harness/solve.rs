use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::field::VectorField;
use crate::stats::{serialize_stats, StatsFormat};

use super::config::ExperimentConfig;
use super::problem::Problem;
use super::HarnessError;

/// Contents of `solution.json`. Wall time is left out so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub kind: &'static str,
    pub seed: u64,
    pub rtol: f64,
    pub atol: f64,
    pub t_span: [f64; 2],
    pub initial_state: Vec<f64>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub terminal_state: Vec<f64>,
    pub nfe: u64,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
}

/// Forward solve for the first seed at the first tolerance pair.
pub fn run_solve(cfg: &ExperimentConfig) -> Result<(SolveReport, Vec<u8>), HarnessError> {
    let seed = cfg.seeds[0];
    let tol = cfg.tolerance_pairs()[0];
    let problem = Problem::from_config(cfg, &cfg.field, seed)?;
    let sol = problem.forward(tol)?;
    let attempts = serialize_stats(&sol.stats, StatsFormat::Csv);
    let report = SolveReport {
        kind: cfg.field.kind.as_str(),
        seed,
        rtol: tol.rtol,
        atol: tol.atol,
        t_span: cfg.t_span,
        initial_state: problem.z0.clone(),
        times: sol.times.clone(),
        terminal_state: sol.terminal().to_vec(),
        states: sol.states,
        nfe: sol.stats.nfe,
        steps_accepted: sol.stats.steps_accepted,
        steps_rejected: sol.stats.steps_rejected,
    };
    debug_assert_eq!(report.initial_state.len(), problem.field.state_dim());
    Ok((report, attempts))
}

pub fn cmd_solve(cfg: &ExperimentConfig, out: &Path) -> Result<(), HarnessError> {
    let (report, attempts) = run_solve(cfg)?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    std::fs::write(out.join("solution.json"), json)?;
    std::fs::write(out.join("attempts_solve.csv"), attempts)?;

    let stdout = std::io::stdout();
    let mut so = stdout.lock();
    let terminal: Vec<String> = report
        .terminal_state
        .iter()
        .map(|x| format!("{x:.12e}"))
        .collect();
    writeln!(
        so,
        "terminal state at t = {}: [{}]",
        report.t_span[1],
        terminal.join(", ")
    )?;
    writeln!(
        so,
        "nfe {}, accepted {}, rejected {}",
        report.nfe, report.steps_accepted, report.steps_rejected
    )?;
    Ok(())
}
