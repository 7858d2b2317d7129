//! Backward-in-time adjoint solve over the augmented state `[a_t | z | a_z | a_θ]`.
//!
//! `z` is reconstructed backward alongside the adjoints; only per-observation
//! checkpoints are taken from the forward pass. The `a_t` and `a_θ` blocks are
//! pure integrals: their values never feed back into the dynamics, which is what
//! makes zero-weighting them in the error norm safe.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::field::VectorField;
use crate::norm::NormSpec;
use crate::solver::{integrate, OdeSystem, SolveObserver, Tolerances};
use crate::stats::SolveStats;

/// Layout of the augmented backward state, total length `1 + 2d + p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdjointPartition {
    pub state_dim: usize,
    pub param_count: usize,
}

impl AdjointPartition {
    pub fn new(state_dim: usize, param_count: usize) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::invalid("adjoint state needs d >= 1"));
        }
        Ok(Self {
            state_dim,
            param_count,
        })
    }

    pub fn of<F: VectorField + ?Sized>(field: &F) -> Result<Self> {
        Self::new(field.state_dim(), field.param_count())
    }

    pub fn a_t(&self) -> usize {
        0
    }

    pub fn z(&self) -> Range<usize> {
        1..1 + self.state_dim
    }

    pub fn a_z(&self) -> Range<usize> {
        1 + self.state_dim..1 + 2 * self.state_dim
    }

    pub fn a_theta(&self) -> Range<usize> {
        1 + 2 * self.state_dim..self.len()
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.state_dim + self.param_count
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// The augmented adjoint dynamics as an [`OdeSystem`].
#[derive(Debug, Clone, Copy)]
pub struct AugmentedSystem<'a, F: ?Sized> {
    field: &'a F,
    partition: AdjointPartition,
}

impl<'a, F: VectorField + ?Sized> AugmentedSystem<'a, F> {
    pub fn new(field: &'a F) -> Result<Self> {
        Ok(Self {
            field,
            partition: AdjointPartition::of(field)?,
        })
    }

    pub fn partition(&self) -> AdjointPartition {
        self.partition
    }
}

impl<F: VectorField + ?Sized> OdeSystem for AugmentedSystem<'_, F> {
    fn dim(&self) -> usize {
        self.partition.len()
    }

    fn rhs(&self, t: f64, aug: &[f64], out: &mut [f64]) {
        let p = self.partition;
        let z = &aug[p.z()];
        let a_z = &aug[p.a_z()];
        let (head, a_theta_out) = out.split_at_mut(p.a_theta().start);
        let (a_t_out, rest) = head.split_first_mut().expect("a_t slot");
        let (z_out, a_z_out) = rest.split_at_mut(p.state_dim);

        *a_t_out = -self.field.time_vjp(t, z, a_z);
        self.field.eval_into(t, z, z_out);
        self.field.vjp_z_into(t, z, a_z, a_z_out);
        a_z_out.iter_mut().for_each(|x| *x = -*x);
        self.field.vjp_theta_into(t, z, a_z, a_theta_out);
        a_theta_out.iter_mut().for_each(|x| *x = -*x);
    }
}

/// `[−a_z·∂f/∂t | f | −a_z·∂f/∂z | −a_z·∂f/∂θ]` evaluated at `aug`.
pub fn augmented_dynamics<F: VectorField + ?Sized>(
    field: &F,
    t: f64,
    aug: &[f64],
) -> Result<Vec<f64>> {
    let sys = AugmentedSystem::new(field)?;
    check_len("augmented state", sys.dim(), aug.len())?;
    let mut out = vec![0.0; aug.len()];
    sys.rhs(t, aug, &mut out);
    Ok(out)
}

fn group_blocks(d: usize, p: usize, weights: [f64; 4]) -> NormSpec {
    let mut blocks = vec![(1, weights[0]), (d, weights[1]), (d, weights[2])];
    if p > 0 {
        blocks.push((p, weights[3]));
    }
    NormSpec::from_blocks(&blocks).expect("adjoint norm layout is valid for d >= 1")
}

/// Mixed L∞-RMS norm with every block weighted equally.
pub fn make_default_norm(d: usize, p: usize) -> NormSpec {
    group_blocks(d, p, [1.0, 1.0, 1.0, 1.0])
}

/// Zero weight on the integral-only `a_t` and `a_θ` blocks.
pub fn make_seminorm(d: usize, p: usize) -> NormSpec {
    group_blocks(d, p, [0.0, 1.0, 1.0, 0.0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Default,
    Seminorm,
}

impl NormMode {
    pub fn norm(self, d: usize, p: usize) -> NormSpec {
        match self {
            NormMode::Default => make_default_norm(d, p),
            NormMode::Seminorm => make_seminorm(d, p),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormMode::Default => "default",
            NormMode::Seminorm => "seminorm",
        }
    }
}

impl std::fmt::Display for NormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(NormMode::Default),
            "seminorm" => Ok(NormMode::Seminorm),
            other => Err(Error::invalid(format!("unknown norm mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    /// dL/dz(τ).
    pub dl_dz0: Vec<f64>,
    pub dl_dtheta: Vec<f64>,
    /// dL/dτ, the sensitivity to the start of the integration interval.
    pub dl_dt0: f64,
    /// dL/dT, the sensitivity to the end of the integration interval.
    pub dl_dt1: f64,
    pub stats: SolveStats,
}

/// A stored forward state used to restart `z` during a segmented backward solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub z: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradients of a loss depending only on `z(T)`.
///
/// `z_t` must be the forward solution at `T = t_span.1` and `dl_dz_t` the loss
/// cotangent there.
pub fn backprop<F: VectorField + ?Sized>(
    field: &F,
    z_t: &[f64],
    t_span: (f64, f64),
    dl_dz_t: &[f64],
    tol: Tolerances,
    mode: NormMode,
) -> Result<GradientResult> {
    backprop_multi(
        field,
        t_span.0,
        &[Checkpoint {
            t: t_span.1,
            z: z_t.to_vec(),
        }],
        &[dl_dz_t.to_vec()],
        tol,
        mode,
    )
}

/// Gradients of a loss depending on `z` at several observation times.
///
/// `checkpoints` hold forward states at strictly increasing times `t₁ < … < t_n`, all
/// at or after the start time `t0`. The backward solve runs segment by segment from
/// `t_n` to `t0`; at each observation the local cotangent is added to `a_z` and `z`
/// is reset to the stored checkpoint. Each segment restarts step-size selection.
pub fn backprop_multi<F: VectorField + ?Sized>(
    field: &F,
    t0: f64,
    checkpoints: &[Checkpoint],
    cotangents: &[Vec<f64>],
    tol: Tolerances,
    mode: NormMode,
) -> Result<GradientResult> {
    backprop_multi_observed(field, t0, checkpoints, cotangents, tol, mode, &mut ())
}

/// [`backprop_multi`] with an observer attached to every backward segment.
pub fn backprop_multi_observed<F: VectorField + ?Sized>(
    field: &F,
    t0: f64,
    checkpoints: &[Checkpoint],
    cotangents: &[Vec<f64>],
    tol: Tolerances,
    mode: NormMode,
    observer: &mut dyn SolveObserver,
) -> Result<GradientResult> {
    let sys = AugmentedSystem::new(field)?;
    let part = sys.partition();
    let d = part.state_dim;

    if checkpoints.is_empty() {
        return Err(Error::invalid("backprop needs at least one checkpoint"));
    }
    check_len("cotangents", checkpoints.len(), cotangents.len())?;
    if !t0.is_finite() || checkpoints.iter().any(|c| !c.t.is_finite()) {
        return Err(Error::invalid("checkpoint times must be finite"));
    }
    if checkpoints[0].t < t0 || checkpoints.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::invalid(
            "checkpoint times must be strictly increasing and not before the start time",
        ));
    }
    for (c, g) in checkpoints.iter().zip(cotangents) {
        check_len("checkpoint state", d, c.z.len())?;
        check_len("cotangent", d, g.len())?;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("cotangents must be finite"));
        }
    }

    let norm = mode.norm(d, part.param_count);
    let mut aug = vec![0.0; part.len()];
    let mut stats = SolveStats::new();
    let mut fz = vec![0.0; d];

    let last = checkpoints.last().expect("non-empty");
    field.eval_into(last.t, &last.z, &mut fz);
    let dl_dt1 = dot(cotangents.last().expect("non-empty"), &fz);

    for (i, cp) in checkpoints.iter().enumerate().rev() {
        let g = &cotangents[i];
        aug[part.z()].copy_from_slice(&cp.z);
        for (a, gi) in aug[part.a_z()].iter_mut().zip(g) {
            *a += gi;
        }
        // Holding this observation time fixed removes its explicit time sensitivity.
        field.eval_into(cp.t, &cp.z, &mut fz);
        aug[part.a_t()] -= dot(g, &fz);

        let seg_start = if i == 0 { t0 } else { checkpoints[i - 1].t };
        if seg_start == cp.t {
            continue;
        }
        let (next, seg_stats) = integrate(&sys, &aug, (cp.t, seg_start), tol, &norm, observer)
            .map_err(Error::backward)?;
        stats.merge(&seg_stats);
        aug = next;
    }

    let result = GradientResult {
        dl_dz0: aug[part.a_z()].to_vec(),
        dl_dtheta: aug[part.a_theta()].to_vec(),
        dl_dt0: aug[part.a_t()],
        dl_dt1,
        stats,
    };
    let finite = result
        .dl_dz0
        .iter()
        .chain(&result.dl_dtheta)
        .chain([&result.dl_dt0, &result.dl_dt1])
        .all(|x| x.is_finite());
    if !finite {
        return Err(Error::NonFiniteDynamics { t: t0, stage: 0 }.backward());
    }
    Ok(result)
}
