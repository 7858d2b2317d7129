//! One concrete forward/backward problem: a built field, an initial state, observation
//! times and targets. Shared by every subcommand.

use crate::adjoint::{backprop_multi, Checkpoint, GradientResult, NormMode};
use crate::error::Result;
use crate::field::{uniform_vec, ConfiguredField, FieldSpec, VectorField};
use crate::norm::NormSpec;
use crate::solver::{integrate_through, Solution, Tolerances};

use super::config::{ExperimentConfig, LossSpec};
use super::HarnessError;

/// XORed into a cell seed to get an initial-state stream independent of the θ draw.
pub const STATE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn seeded_initial_state(seed: u64, dim: usize) -> Vec<f64> {
    uniform_vec(seed ^ STATE_STREAM, dim, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    TerminalSum,
    SquaredError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub field: ConfiguredField,
    pub z0: Vec<f64>,
    pub t0: f64,
    /// Strictly increasing; the last entry is the span end.
    pub obs_times: Vec<f64>,
    pub kind: LossKind,
    /// One target per observation time (zeros when not training).
    pub targets: Vec<Vec<f64>>,
    /// Multiplies the loss and its cotangents (batch averaging).
    pub weight: f64,
}

impl Problem {
    pub fn from_config(
        cfg: &ExperimentConfig,
        spec: &FieldSpec,
        seed: u64,
    ) -> std::result::Result<Self, HarnessError> {
        let field = spec
            .build(Some(seed))
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let d = field.state_dim();
        let z0 = match &cfg.initial_state {
            Some(z) if z.len() == d => z.clone(),
            _ => seeded_initial_state(seed, d),
        };
        let obs_times = cfg.observation_times();
        let kind = match cfg.loss {
            LossSpec::TerminalSum => LossKind::TerminalSum,
            LossSpec::TrajectoryL2 { .. } => LossKind::SquaredError,
        };
        Ok(Self {
            field,
            z0,
            t0: cfg.t_span[0],
            targets: vec![vec![0.0; d]; obs_times.len()],
            obs_times,
            kind,
            weight: 1.0,
        })
    }

    pub fn t1(&self) -> f64 {
        *self.obs_times.last().expect("at least one observation")
    }

    fn times_with_start(&self, t0: f64, t1: f64) -> Vec<f64> {
        let n = self.obs_times.len();
        std::iter::once(t0)
            .chain(self.obs_times[..n - 1].iter().copied())
            .chain(std::iter::once(t1))
            .collect()
    }

    /// Forward solve under a plain RMS norm, stopping at every observation time.
    pub fn forward(&self, tol: Tolerances) -> Result<Solution> {
        self.forward_with(&self.field, &self.z0, self.t0, self.t1(), tol)
    }

    fn forward_with(
        &self,
        field: &ConfiguredField,
        z0: &[f64],
        t0: f64,
        t1: f64,
        tol: Tolerances,
    ) -> Result<Solution> {
        let times = self.times_with_start(t0, t1);
        integrate_through(field, z0, &times, tol, &NormSpec::rms(z0.len()), &mut ())
    }

    /// Loss value and per-observation cotangents from a forward solution.
    pub fn loss_and_cotangents(&self, sol: &Solution) -> (f64, Vec<Vec<f64>>) {
        let observed = &sol.states[1..];
        let mut loss = 0.0;
        let cotangents = match self.kind {
            LossKind::TerminalSum => {
                let zt = observed.last().expect("terminal state");
                loss = zt.iter().sum::<f64>() * self.weight;
                let mut c = vec![vec![0.0; zt.len()]; observed.len()];
                *c.last_mut().expect("non-empty") = vec![self.weight; zt.len()];
                c
            }
            LossKind::SquaredError => observed
                .iter()
                .zip(&self.targets)
                .map(|(z, y)| {
                    z.iter()
                        .zip(y)
                        .map(|(zi, yi)| {
                            let r = zi - yi;
                            loss += self.weight * r * r;
                            2.0 * self.weight * r
                        })
                        .collect()
                })
                .collect(),
        };
        (loss, cotangents)
    }

    pub fn loss(&self, tol: Tolerances) -> Result<f64> {
        Ok(self.loss_and_cotangents(&self.forward(tol)?).0)
    }

    /// Forward solve, loss, and adjoint gradients under `mode`.
    pub fn gradient(&self, tol: Tolerances, mode: NormMode) -> Result<Evaluation> {
        let forward = self.forward(tol)?;
        let (loss, cotangents) = self.loss_and_cotangents(&forward);
        let checkpoints: Vec<Checkpoint> = self
            .obs_times
            .iter()
            .zip(&forward.states[1..])
            .map(|(&t, z)| Checkpoint { t, z: z.clone() })
            .collect();
        let grad = backprop_multi(&self.field, self.t0, &checkpoints, &cotangents, tol, mode)?;
        Ok(Evaluation {
            loss,
            forward,
            grad,
        })
    }

    /// Central finite differences of the loss through full forward solves.
    pub fn finite_difference_gradient(&self, tol: Tolerances, rel_step: f64) -> Result<FdGradient> {
        let loss_of = |field: &ConfiguredField, z0: &[f64], t0: f64, t1: f64| -> Result<f64> {
            let sol = self.forward_with(field, z0, t0, t1, tol)?;
            Ok(self.loss_and_cotangents(&sol).0)
        };
        let step = |x: f64| rel_step * x.abs().max(1.0);
        let (t0, t1) = (self.t0, self.t1());

        let mut dl_dtheta = Vec::with_capacity(self.field.param_count());
        let theta = self.field.params().to_vec();
        let mut perturbed = self.field.clone();
        for i in 0..theta.len() {
            let h = step(theta[i]);
            let mut th = theta.clone();
            th[i] = theta[i] + h;
            perturbed.set_params(&th)?;
            let up = loss_of(&perturbed, &self.z0, t0, t1)?;
            th[i] = theta[i] - h;
            perturbed.set_params(&th)?;
            let down = loss_of(&perturbed, &self.z0, t0, t1)?;
            dl_dtheta.push((up - down) / (2.0 * h));
        }

        let mut dl_dz0 = Vec::with_capacity(self.z0.len());
        for i in 0..self.z0.len() {
            let h = step(self.z0[i]);
            let mut z = self.z0.clone();
            z[i] += h;
            let up = loss_of(&self.field, &z, t0, t1)?;
            z[i] -= 2.0 * h;
            let down = loss_of(&self.field, &z, t0, t1)?;
            dl_dz0.push((up - down) / (2.0 * h));
        }

        let h = step(t0);
        let dl_dt0 = (loss_of(&self.field, &self.z0, t0 + h, t1)?
            - loss_of(&self.field, &self.z0, t0 - h, t1)?)
            / (2.0 * h);
        let h = step(t1);
        let dl_dt1 = (loss_of(&self.field, &self.z0, t0, t1 + h)?
            - loss_of(&self.field, &self.z0, t0, t1 - h)?)
            / (2.0 * h);

        Ok(FdGradient {
            dl_dz0,
            dl_dtheta,
            dl_dt0,
            dl_dt1,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub forward: Solution,
    pub grad: GradientResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdGradient {
    pub dl_dz0: Vec<f64>,
    pub dl_dtheta: Vec<f64>,
    pub dl_dt0: f64,
    pub dl_dt1: f64,
}

/// Relative error over entries of magnitude ≥ `tiny`, absolute error below it.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Discrepancy {
    pub max_rel: f64,
    pub max_abs_tiny: f64,
    pub entries: usize,
}

pub const TINY: f64 = 1e-8;

impl Discrepancy {
    pub fn between(adjoint: &[f64], reference: &[f64]) -> Self {
        let mut d = Discrepancy {
            entries: adjoint.len(),
            ..Default::default()
        };
        for (a, b) in adjoint.iter().zip(reference) {
            let m = a.abs().max(b.abs());
            let diff = (a - b).abs();
            if m < TINY {
                d.max_abs_tiny = d.max_abs_tiny.max(diff);
            } else {
                d.max_rel = d.max_rel.max(diff / m);
            }
        }
        d
    }

    pub fn combine(self, other: Self) -> Self {
        Self {
            max_rel: self.max_rel.max(other.max_rel),
            max_abs_tiny: self.max_abs_tiny.max(other.max_abs_tiny),
            entries: self.entries + other.entries,
        }
    }

    pub fn within(&self, rel: f64, abs_tiny: f64) -> bool {
        self.max_rel <= rel && self.max_abs_tiny <= abs_tiny
    }
}
