//! Adaptive Dormand-Prince 5(4) integration with (semi)norm-based error control.
//!
//! Per attempt the solver forms `SCALE = atol + rtol · max(|y|, |y_cand|)` channel-wise,
//! computes `r = ‖y_err / SCALE‖` under the caller's [`NormSpec`] and accepts iff `r ≤ 1`.
//! Evaluation counting is raw: every call of the right-hand side increments `nfe`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::field::VectorField;
use crate::norm::NormSpec;
use crate::stats::SolveStats;
use crate::tableau::{ButcherTableau, STAGES};

/// Anything the integrator can step: `dy/dt = rhs(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

impl<F: VectorField + ?Sized> OdeSystem for F {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        self.eval_into(t, y, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerances {
    pub fn new(rtol: f64, atol: f64) -> Result<Self> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if ok(rtol) && ok(atol) {
            Ok(Self { rtol, atol })
        } else {
            Err(Error::invalid(format!(
                "tolerances must be finite and positive (rtol {rtol}, atol {atol})"
            )))
        }
    }
}

pub const SAFETY: f64 = 0.9;
pub const MIN_FACTOR: f64 = 0.2;
pub const MAX_FACTOR: f64 = 10.0;
const RATIO_FLOOR: f64 = 1e-10;
const ORDER_EXPONENT: f64 = 1.0 / 5.0;
/// Relative to the span length; below this a non-final step counts as underflow.
const UNDERFLOW_FRACTION: f64 = 1e-14;
pub const MAX_ATTEMPTS: usize = 1_000_000;

/// `SCALEᵢ = atol + rtol · max(|y_prevᵢ|, |y_candᵢ|)`.
pub fn error_scale(y_prev: &[f64], y_cand: &[f64], tol: Tolerances) -> Result<Vec<f64>> {
    check_len("candidate state", y_prev.len(), y_cand.len())?;
    Ok(y_prev
        .iter()
        .zip(y_cand)
        .map(|(a, b)| tol.atol + tol.rtol * a.abs().max(b.abs()))
        .collect())
}

/// Integral controller: `Δ · clamp(0.9 · r^(−1/5), 0.2, 10)` with `r` floored at 1e−10.
pub fn adapt_step_size(error_ratio: f64, dt: f64) -> f64 {
    let r = error_ratio.max(RATIO_FLOOR);
    let factor = (SAFETY * r.powf(-ORDER_EXPONENT)).clamp(MIN_FACTOR, MAX_FACTOR);
    dt * factor
}

/// Result of one Runge-Kutta attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct RkStep {
    pub y_candidate: Vec<f64>,
    pub y_err: Vec<f64>,
    /// `f(t, y)`; still valid if the attempt is rejected.
    pub first_stage: Vec<f64>,
    /// `f(t + Δ, y_candidate)`, reusable as the first stage of the next step.
    pub last_stage: Vec<f64>,
}

fn eval_checked<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    out: &mut [f64],
    stage: usize,
    nfe: &mut u64,
) -> Result<()> {
    sys.rhs(t, y, out);
    *nfe += 1;
    if out.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteDynamics { t, stage })
    }
}

/// One embedded step of size `dt` (negative for backward integration).
///
/// `first_stage` is `f(t, y)` when already known (FSAL); otherwise it is evaluated here.
/// Costs 6 evaluations with a warm first stage and 7 without.
pub fn rk_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    dt: f64,
    tableau: &ButcherTableau,
    first_stage: Option<&[f64]>,
    nfe: &mut u64,
) -> Result<RkStep> {
    let n = y.len();
    check_len("state", sys.dim(), n)?;
    if dt == 0.0 || !dt.is_finite() {
        return Err(Error::invalid(format!(
            "step size must be finite and nonzero, got {dt}"
        )));
    }
    let mut k = vec![vec![0.0; n]; STAGES];
    match first_stage {
        Some(k0) => {
            check_len("first stage", n, k0.len())?;
            k[0].copy_from_slice(k0);
        }
        None => eval_checked(sys, t, y, &mut k[0], 0, nfe)?,
    }
    let mut stage_y = vec![0.0; n];
    for i in 1..STAGES {
        for (m, s) in stage_y.iter_mut().enumerate() {
            let incr: f64 = (0..i).map(|j| tableau.a[i][j] * k[j][m]).sum();
            *s = y[m] + dt * incr;
        }
        eval_checked(sys, t + tableau.c[i] * dt, &stage_y, &mut k[i], i, nfe)?;
    }
    // With FSAL the last stage input is exactly the propagated solution.
    let y_candidate = if tableau.fsal {
        stage_y
    } else {
        (0..n)
            .map(|m| y[m] + dt * (0..STAGES).map(|j| tableau.b[j] * k[j][m]).sum::<f64>())
            .collect()
    };
    let y_err = (0..n)
        .map(|m| {
            dt * (0..STAGES)
                .map(|j| (tableau.b[j] - tableau.b_hat[j]) * k[j][m])
                .sum::<f64>()
        })
        .collect();
    let last_stage = k.pop().expect("tableau has stages");
    let first_stage = k.swap_remove(0);
    Ok(RkStep {
        y_candidate,
        y_err,
        first_stage,
        last_stage,
    })
}

/// Starting step from the two-evaluation heuristic, signed by `direction`.
pub fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    tol: Tolerances,
    norm: &NormSpec,
    direction: f64,
    nfe: &mut u64,
) -> Result<f64> {
    let n = y0.len();
    check_len("state", sys.dim(), n)?;
    check_len("norm", norm.total_len(), n)?;
    let dir = if direction < 0.0 { -1.0 } else { 1.0 };
    let scale: Vec<f64> = y0.iter().map(|y| tol.atol + tol.rtol * y.abs()).collect();

    let mut f0 = vec![0.0; n];
    eval_checked(sys, t0, y0, &mut f0, 0, nfe)?;
    let d0 = norm.eval_ratio(y0, &scale)?;
    let d1 = norm.eval_ratio(&f0, &scale)?;
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };

    let y1: Vec<f64> = y0.iter().zip(&f0).map(|(y, f)| y + dir * h0 * f).collect();
    let mut f1 = vec![0.0; n];
    eval_checked(sys, t0 + dir * h0, &y1, &mut f1, 1, nfe)?;
    let diff: Vec<f64> = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
    let d2 = norm.eval_ratio(&diff, &scale)? / h0;

    let curvature = d1.max(d2);
    let h1 = if curvature <= 1e-15 {
        f64::INFINITY
    } else {
        (0.01 / curvature).powf(ORDER_EXPONENT)
    };
    Ok(dir * (100.0 * h0).min(h1))
}

/// Per-attempt view handed to observers.
#[derive(Debug)]
pub struct AttemptInfo<'a> {
    pub t: f64,
    pub dt: f64,
    pub y_err: &'a [f64],
    pub scale: &'a [f64],
    pub error_ratio: f64,
    pub accepted: bool,
}

/// Callbacks run on the integrating thread.
pub trait SolveObserver {
    fn on_attempt(&mut self, _attempt: &AttemptInfo<'_>) {}
    fn on_accept(&mut self, _t: f64, _y: &[f64]) {}
}

impl SolveObserver for () {}

/// States at each requested time plus the solve's statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: SolveStats,
}

impl Solution {
    pub fn terminal(&self) -> &[f64] {
        self.states
            .last()
            .expect("solution has at least the initial state")
    }
}

/// Integrates over `t_span` (either orientation) and returns the terminal state.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    t_span: (f64, f64),
    tol: Tolerances,
    norm: &NormSpec,
    observer: &mut dyn SolveObserver,
) -> Result<(Vec<f64>, SolveStats)> {
    let sol = integrate_through(sys, y0, &[t_span.0, t_span.1], tol, norm, observer)?;
    let Solution {
        mut states, stats, ..
    } = sol;
    Ok((states.pop().expect("terminal state"), stats))
}

/// Integrates from `times[0]` through every later entry, landing on each exactly by
/// clipping the step. Step size and the FSAL stage carry across output times.
pub fn integrate_through<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    times: &[f64],
    tol: Tolerances,
    norm: &NormSpec,
    observer: &mut dyn SolveObserver,
) -> Result<Solution> {
    #[cfg(not(target_arch = "wasm32"))]
    let clock = std::time::Instant::now();

    let n = y0.len();
    check_len("state", sys.dim(), n)?;
    check_len("norm", norm.total_len(), n)?;
    if times.len() < 2 {
        return Err(Error::invalid(
            "need a start time and at least one output time",
        ));
    }
    if times.iter().any(|t| !t.is_finite()) || y0.iter().any(|y| !y.is_finite()) {
        return Err(Error::invalid("times and initial state must be finite"));
    }
    let t_start = times[0];
    let t_end = *times.last().expect("len >= 2");
    if t_start == t_end {
        return Err(Error::invalid("integration span must be non-empty"));
    }
    let dir = (t_end - t_start).signum();
    if times.windows(2).any(|w| (w[1] - w[0]) * dir <= 0.0) {
        return Err(Error::invalid("output times must be strictly monotone"));
    }

    let tableau = ButcherTableau::dormand_prince();
    let floor = UNDERFLOW_FRACTION * (t_end - t_start).abs();
    let mut stats = SolveStats::new();
    let mut t = t_start;
    let mut y = y0.to_vec();
    let mut dt = initial_step(sys, t, &y, tol, norm, dir, &mut stats.nfe)?;
    let mut first_stage: Option<Vec<f64>> = None;
    let mut states = vec![y.clone()];
    let mut n_attempts = 0usize;

    for &target in &times[1..] {
        while t != target {
            let remaining = target - t;
            let clipped = dt.abs() >= remaining.abs();
            let step = if clipped { remaining } else { dt };
            if !clipped && step.abs() < floor {
                return Err(Error::StepSizeUnderflow { t, dt: step });
            }
            n_attempts += 1;
            if n_attempts > MAX_ATTEMPTS {
                return Err(Error::TooManySteps {
                    t,
                    max_steps: MAX_ATTEMPTS,
                });
            }

            let out = rk_step(
                sys,
                t,
                &y,
                step,
                &tableau,
                first_stage.as_deref(),
                &mut stats.nfe,
            )?;
            let scale = error_scale(&y, &out.y_candidate, tol)?;
            let r = norm.eval_ratio(&out.y_err, &scale)?;
            let accepted = r <= 1.0;
            stats.record_attempt(t, step, r, accepted);
            observer.on_attempt(&AttemptInfo {
                t,
                dt: step,
                y_err: &out.y_err,
                scale: &scale,
                error_ratio: r,
                accepted,
            });

            let proposal = adapt_step_size(r, step);
            if accepted {
                t = if clipped { target } else { t + step };
                y = out.y_candidate;
                first_stage = Some(out.last_stage);
                observer.on_accept(t, &y);
                // A clipped landing says nothing against the unclipped proposal.
                dt = if clipped && dt.abs() > proposal.abs() {
                    dt
                } else {
                    proposal
                };
            } else {
                // k₁ = f(t, y) is still valid for the retry.
                first_stage = Some(out.first_stage);
                dt = proposal;
            }
        }
        states.push(y.clone());
    }

    #[cfg(not(target_arch = "wasm32"))]
    {
        stats.wall_time = clock.elapsed().as_secs_f64();
    }
    Ok(Solution {
        times: times.to_vec(),
        states,
        stats,
    })
}
