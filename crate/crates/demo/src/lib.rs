//! Browser demo for the adjoint seminorm.
//!
//! The plain functions return serde structs and are tested natively; the
//! `#[wasm_bindgen]` wrappers at the bottom hand them to JavaScript as JSON strings.

use adjoint_seminorm::harness::problem::{Discrepancy, LossKind, Problem};
use adjoint_seminorm::solver::{AttemptInfo, SolveObserver};
use adjoint_seminorm::stats::{step_location_histogram, LocationHistogram};
use adjoint_seminorm::{
    integrate_through, FieldSpec, NormMode, NormSpec, Result, Tolerances, VectorField,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const T_END: f64 = 4.0;
pub const FD_TOLERANCES: (f64, f64) = (1e-10, 1e-12);

/// Fields selectable from the page.
pub fn demo_field(kind: &str, seed: u64) -> Result<FieldSpec> {
    match kind {
        "mlp" => Ok(FieldSpec::mlp_seeded(2, 16, 1.0, seed)),
        "oscillator" => Ok(FieldSpec {
            params: None,
            init_scale: Some(0.5),
            seed: Some(seed),
            ..FieldSpec::forced_oscillator([1.0; 4], 1.5)
        }),
        "linear" => Ok(FieldSpec {
            params: None,
            seed: Some(seed),
            ..FieldSpec::linear(2, Vec::new())
        }),
        other => Err(adjoint_seminorm::Error::InvalidInput(format!(
            "unknown field {other:?}"
        ))),
    }
}

fn demo_problem(kind: &str, seed: u64, t_end: f64) -> Result<Problem> {
    let field = demo_field(kind, seed)?.build(None)?;
    Ok(Problem {
        z0: vec![1.0, 0.0],
        t0: 0.0,
        obs_times: vec![t_end],
        kind: LossKind::TerminalSum,
        targets: vec![vec![0.0; 2]],
        weight: 1.0,
        field,
    })
}

#[derive(Default)]
struct Recorder {
    steps: Vec<StepRecord>,
}

impl SolveObserver for Recorder {
    fn on_attempt(&mut self, a: &AttemptInfo<'_>) {
        self.steps.push(StepRecord {
            t: a.t,
            dt: a.dt,
            error_ratio: a.error_ratio,
            accepted: a.accepted,
            state: Vec::new(),
        });
    }

    fn on_accept(&mut self, _t: f64, y: &[f64]) {
        if let Some(last) = self.steps.last_mut() {
            last.state = y.to_vec();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub error_ratio: f64,
    pub accepted: bool,
    /// State after the step; empty for rejected attempts.
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub z0: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub nfe: u64,
    pub accepted: u64,
    pub rejected: u64,
}

/// Forward solve with every attempt recorded.
pub fn trajectory(kind: &str, seed: u64, rtol: f64) -> Result<Trajectory> {
    let p = demo_problem(kind, seed, T_END)?;
    let tol = Tolerances::new(rtol, rtol * 1e-3)?;
    let mut rec = Recorder::default();
    let sol = integrate_through(
        &p.field,
        &p.z0,
        &[0.0, T_END],
        tol,
        &NormSpec::rms(2),
        &mut rec,
    )?;
    Ok(Trajectory {
        z0: p.z0,
        steps: rec.steps,
        nfe: sol.stats.nfe,
        accepted: sol.stats.steps_accepted,
        rejected: sol.stats.steps_rejected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackwardRun {
    pub mode: NormMode,
    pub nfe: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub histogram: LocationHistogram,
    pub dl_dtheta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormComparison {
    pub param_count: usize,
    pub forward_nfe: u64,
    pub runs: Vec<BackwardRun>,
    /// Largest relative disagreement between the two modes' parameter gradients.
    pub gradient_disagreement: f64,
    pub nfe_reduction_pct: f64,
}

/// Backward passes under both norms, with accept/reject locations binned over the span.
pub fn compare_norms(kind: &str, seed: u64, rtol: f64, bins: usize) -> Result<NormComparison> {
    let p = demo_problem(kind, seed, T_END)?;
    let tol = Tolerances::new(rtol, rtol * 1e-3)?;
    let mut forward_nfe = 0;
    let mut runs = Vec::new();
    for mode in [NormMode::Default, NormMode::Seminorm] {
        let eval = p.gradient(tol, mode)?;
        forward_nfe = eval.forward.stats.nfe;
        let s = &eval.grad.stats;
        runs.push(BackwardRun {
            mode,
            nfe: s.nfe,
            accepted: s.steps_accepted,
            rejected: s.steps_rejected,
            histogram: step_location_histogram(s, bins.max(1), (0.0, T_END))?,
            dl_dtheta: eval.grad.dl_dtheta,
        });
    }
    let disagreement = Discrepancy::between(&runs[1].dl_dtheta, &runs[0].dl_dtheta);
    Ok(NormComparison {
        param_count: p.field.param_count(),
        forward_nfe,
        gradient_disagreement: disagreement.max_rel,
        nfe_reduction_pct: 100.0 * (1.0 - runs[1].nfe as f64 / runs[0].nfe as f64),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientEntry {
    pub name: String,
    pub adjoint: f64,
    pub finite_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub mode: NormMode,
    pub entries: Vec<GradientEntry>,
    pub max_rel: f64,
    pub backward_nfe: u64,
}

/// Adjoint gradient of `Σ z(T)` against central finite differences of the forward solve.
pub fn gradient_check(kind: &str, seed: u64, mode: NormMode, t_end: f64) -> Result<GradientCheck> {
    let p = demo_problem(kind, seed, t_end)?;
    let tol = Tolerances::new(1e-8, 1e-10)?;
    let fd_tol = Tolerances::new(FD_TOLERANCES.0, FD_TOLERANCES.1)?;
    let g = p.gradient(tol, mode)?.grad;
    let fd = p.finite_difference_gradient(fd_tol, 1e-4)?;
    let mut entries = Vec::new();
    let mut push = |name: String, a: f64, b: f64| {
        entries.push(GradientEntry {
            name,
            adjoint: a,
            finite_difference: b,
        })
    };
    for (i, (a, b)) in g.dl_dz0.iter().zip(&fd.dl_dz0).enumerate() {
        push(format!("dL/dz0[{i}]"), *a, *b);
    }
    for (i, (a, b)) in g.dl_dtheta.iter().zip(&fd.dl_dtheta).enumerate() {
        push(format!("dL/dθ[{i}]"), *a, *b);
    }
    push("dL/dt0".into(), g.dl_dt0, fd.dl_dt0);
    push("dL/dT".into(), g.dl_dt1, fd.dl_dt1);
    let (a, b): (Vec<f64>, Vec<f64>) = entries
        .iter()
        .map(|e| (e.adjoint, e.finite_difference))
        .unzip();
    Ok(GradientCheck {
        mode,
        max_rel: Discrepancy::between(&a, &b).max_rel,
        entries,
        backward_nfe: g.stats.nfe,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())))
}

#[wasm_bindgen(js_name = solveTrajectory)]
pub fn solve_trajectory_js(kind: &str, seed: u32, rtol: f64) -> Result<String, JsValue> {
    to_js(trajectory(kind, seed.into(), rtol))
}

#[wasm_bindgen(js_name = compareNorms)]
pub fn compare_norms_js(kind: &str, seed: u32, rtol: f64, bins: u32) -> Result<String, JsValue> {
    to_js(compare_norms(kind, seed.into(), rtol, bins as usize))
}

#[wasm_bindgen(js_name = gradientCheck)]
pub fn gradient_check_js(kind: &str, seed: u32, seminorm: bool) -> Result<String, JsValue> {
    let mode = if seminorm {
        NormMode::Seminorm
    } else {
        NormMode::Default
    };
    to_js(gradient_check(kind, seed.into(), mode, 1.0))
}
