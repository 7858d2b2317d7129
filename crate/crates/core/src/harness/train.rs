//! Full-batch gradient descent of a learnable field against synthetic trajectories.

use std::io::Write;
use std::path::Path;

use crate::adjoint::NormMode;
use crate::field::{uniform_vec, ConfiguredField, VectorField};
use crate::norm::NormSpec;
use crate::solver::{integrate_through, Tolerances};

use super::config::{ExperimentConfig, TrainConfig};
use super::problem::{LossKind, Problem, STATE_STREAM};
use super::HarnessError;

/// Batch member `i` draws its initial state from its own stream.
pub fn batch_initial_states(seed: u64, batch: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..batch as u64)
        .map(|i| {
            uniform_vec(
                (seed ^ STATE_STREAM).wrapping_add(i.wrapping_mul(0x1000_0001)),
                dim,
                1.0,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub t0: f64,
    pub obs_times: Vec<f64>,
    pub initial_states: Vec<Vec<f64>>,
    /// `targets[b][i]` is the ground-truth state of member `b` at `obs_times[i]`.
    pub targets: Vec<Vec<Vec<f64>>>,
}

pub fn synthesize(
    cfg: &ExperimentConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<Dataset, HarnessError> {
    let truth = train
        .ground_truth
        .build(Some(seed))
        .map_err(|e| HarnessError::Config(format!("ground_truth: {e}")))?;
    let tol = Tolerances::new(train.data_tolerance[0], train.data_tolerance[1])
        .map_err(|e| HarnessError::Config(format!("data_tolerance: {e}")))?;
    let d = truth.state_dim();
    let t0 = cfg.t_span[0];
    let obs_times = cfg.observation_times();
    let initial_states = batch_initial_states(seed, train.batch_size, d);
    let times: Vec<f64> = std::iter::once(t0)
        .chain(obs_times.iter().copied())
        .collect();
    let targets = initial_states
        .iter()
        .map(|z0| {
            integrate_through(&truth, z0, &times, tol, &NormSpec::rms(d), &mut ())
                .map(|sol| sol.states[1..].to_vec())
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(Dataset {
        t0,
        obs_times,
        initial_states,
        targets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub fwd_nfe: u64,
    pub bwd_nfe: u64,
    pub cumulative_bwd_nfe: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub mode: NormMode,
    /// One row per update, then a final row holding the loss after the last update.
    pub log: Vec<EpochLog>,
    pub final_params: Vec<f64>,
}

impl TrainRun {
    pub fn final_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn cumulative_bwd_nfe(&self) -> u64 {
        self.log.last().map_or(0, |r| r.cumulative_bwd_nfe)
    }
}

fn batch_problems(learner: &ConfiguredField, data: &Dataset) -> Vec<Problem> {
    let weight = 1.0 / data.initial_states.len() as f64;
    data.initial_states
        .iter()
        .zip(&data.targets)
        .map(|(z0, y)| Problem {
            field: learner.clone(),
            z0: z0.clone(),
            t0: data.t0,
            obs_times: data.obs_times.clone(),
            kind: LossKind::SquaredError,
            targets: y.clone(),
            weight,
        })
        .collect()
}

pub fn train_mode(
    mut learner: ConfiguredField,
    data: &Dataset,
    tol: Tolerances,
    mode: NormMode,
    learning_rate: f64,
    epochs: usize,
) -> Result<TrainRun, HarnessError> {
    let p = learner.param_count();
    let mut log = Vec::with_capacity(epochs + 1);
    let mut cumulative = 0;
    for epoch in 0..epochs {
        let mut loss = 0.0;
        let mut fwd_nfe = 0;
        let mut bwd_nfe = 0;
        let mut grad = vec![0.0; p];
        for problem in batch_problems(&learner, data) {
            let eval = problem.gradient(tol, mode)?;
            loss += eval.loss;
            fwd_nfe += eval.forward.stats.nfe;
            bwd_nfe += eval.grad.stats.nfe;
            grad.iter_mut()
                .zip(&eval.grad.dl_dtheta)
                .for_each(|(g, x)| *g += x);
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(HarnessError::Threshold(format!(
                "{mode}: loss diverged at epoch {epoch}"
            )));
        }
        cumulative += bwd_nfe;
        log.push(EpochLog {
            epoch,
            loss,
            fwd_nfe,
            bwd_nfe,
            cumulative_bwd_nfe: cumulative,
        });
        let theta: Vec<f64> = learner
            .params()
            .iter()
            .zip(&grad)
            .map(|(t, g)| t - learning_rate * g)
            .collect();
        learner.set_params(&theta)?;
    }

    let mut loss = 0.0;
    let mut fwd_nfe = 0;
    for problem in batch_problems(&learner, data) {
        let sol = problem.forward(tol)?;
        fwd_nfe += sol.stats.nfe;
        loss += problem.loss_and_cotangents(&sol).0;
    }
    if !loss.is_finite() {
        return Err(HarnessError::Threshold(format!(
            "{mode}: final loss is not finite"
        )));
    }
    log.push(EpochLog {
        epoch: epochs,
        loss,
        fwd_nfe,
        bwd_nfe: 0,
        cumulative_bwd_nfe: cumulative,
    });
    Ok(TrainRun {
        mode,
        log,
        final_params: learner.params().to_vec(),
    })
}

/// Trains once per configured norm mode from the same initial learner, using the first
/// seed and the first tolerance pair.
pub fn run_train(cfg: &ExperimentConfig) -> Result<Vec<TrainRun>, HarnessError> {
    let train = cfg
        .train
        .as_ref()
        .ok_or_else(|| HarnessError::Config("train subcommand needs a \"train\" section".into()))?;
    if cfg.loss == super::config::LossSpec::TerminalSum {
        return Err(HarnessError::Config(
            "train needs a trajectory_l2 loss with observation times".into(),
        ));
    }
    let seed = cfg.seeds[0];
    let tol = cfg.tolerance_pairs()[0];
    let data = synthesize(cfg, train, seed)?;
    let learner = cfg
        .field
        .build(Some(seed))
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    cfg.norm_modes
        .iter()
        .map(|&mode| {
            train_mode(
                learner.clone(),
                &data,
                tol,
                mode,
                train.learning_rate,
                train.epochs,
            )
        })
        .collect()
}

/// `(final-loss ratio, cumulative backward-NFE ratio)` of seminorm over default.
pub fn comparison(runs: &[TrainRun]) -> Option<(f64, f64)> {
    let find = |m| runs.iter().find(|r| r.mode == m);
    let (d, s) = (find(NormMode::Default)?, find(NormMode::Seminorm)?);
    Some((
        s.final_loss() / d.final_loss(),
        s.cumulative_bwd_nfe() as f64 / d.cumulative_bwd_nfe() as f64,
    ))
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<(), HarnessError> {
    let runs = run_train(cfg)?;
    let stdout = std::io::stdout();
    let mut so = stdout.lock();
    let mut summary = csv::Writer::from_path(out.join("train_summary.csv"))?;
    summary.write_record([
        "mode",
        "epochs",
        "initial_loss",
        "final_loss",
        "cumulative_bwd_nfe",
    ])?;
    for run in &runs {
        let mut w = csv::Writer::from_path(out.join(format!("train_log_{}.csv", run.mode)))?;
        w.write_record(["epoch", "loss", "fwd_nfe", "bwd_nfe", "cumulative_bwd_nfe"])?;
        for r in &run.log {
            w.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                r.fwd_nfe.to_string(),
                r.bwd_nfe.to_string(),
                r.cumulative_bwd_nfe.to_string(),
            ])?;
        }
        w.flush()?;
        let initial = run.log[0].loss;
        summary.write_record([
            run.mode.to_string(),
            (run.log.len() - 1).to_string(),
            initial.to_string(),
            run.final_loss().to_string(),
            run.cumulative_bwd_nfe().to_string(),
        ])?;
        if run.log.len() == 1 {
            writeln!(so, "{:>8}: initial loss {:.6e}", run.mode, initial)?;
        } else {
            writeln!(
                so,
                "{:>8}: loss {:.6e} -> {:.6e} over {} epochs, cumulative backward nfe {}",
                run.mode,
                initial,
                run.final_loss(),
                run.log.len() - 1,
                run.cumulative_bwd_nfe()
            )?;
        }
    }
    summary.flush()?;
    if let Some((loss_ratio, nfe_ratio)) = comparison(&runs) {
        writeln!(
            so,
            "seminorm/default: final-loss ratio {loss_ratio:.4}, backward-nfe ratio {nfe_ratio:.4}"
        )?;
        std::fs::write(
            out.join("train_comparison.csv"),
            format!("final_loss_ratio,bwd_nfe_ratio\n{loss_ratio},{nfe_ratio}\n"),
        )?;
    }
    Ok(())
}
