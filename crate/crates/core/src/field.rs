//! Parameterized right-hand sides `f(t, z, θ)` with hand-written vector-Jacobian products.
//!
//! All VJPs use the cotangent-on-the-left convention: `vjp_z(v)[j] = Σᵢ vᵢ ∂fᵢ/∂zⱼ`.
//! Parameters are stored flat so they concatenate directly into an adjoint state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// A parameterized vector field with exact vector-Jacobian products.
///
/// The `*_into` methods are the raw kernels; callers guarantee slice lengths.
/// The checked wrappers (`eval_f`, `vjp_z`, `vjp_theta`, `vjp_t`) validate and allocate.
pub trait VectorField {
    fn state_dim(&self) -> usize;

    fn params(&self) -> &[f64];

    fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Replaces θ. The default accepts only the empty parameter vector.
    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        check_len("params", 0, theta.len())
    }

    fn eval_into(&self, t: f64, z: &[f64], out: &mut [f64]);

    fn vjp_z_into(&self, t: f64, z: &[f64], v: &[f64], out: &mut [f64]);

    fn vjp_theta_into(&self, t: f64, z: &[f64], v: &[f64], out: &mut [f64]);

    /// `v · ∂f/∂t`.
    fn time_vjp(&self, t: f64, z: &[f64], v: &[f64]) -> f64;

    fn eval_f(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.state_dim();
        check_len("z", d, z.len())?;
        let mut out = vec![0.0; d];
        self.eval_into(t, z, &mut out);
        Ok(out)
    }

    fn vjp_z(&self, t: f64, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let d = self.state_dim();
        check_len("z", d, z.len())?;
        check_len("cotangent", d, v.len())?;
        let mut out = vec![0.0; d];
        self.vjp_z_into(t, z, v, &mut out);
        Ok(out)
    }

    fn vjp_theta(&self, t: f64, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let d = self.state_dim();
        check_len("z", d, z.len())?;
        check_len("cotangent", d, v.len())?;
        let mut out = vec![0.0; self.param_count()];
        self.vjp_theta_into(t, z, v, &mut out);
        Ok(out)
    }

    fn vjp_t(&self, t: f64, z: &[f64], v: &[f64]) -> Result<f64> {
        let d = self.state_dim();
        check_len("z", d, z.len())?;
        check_len("cotangent", d, v.len())?;
        Ok(self.time_vjp(t, z, v))
    }
}

/// `f(t, z) = A z` with `A` stored row-major in θ.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    dim: usize,
    matrix: Vec<f64>,
}

impl LinearField {
    pub fn new(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("linear field needs state_dim >= 1"));
        }
        check_len("linear field matrix", dim * dim, matrix.len())?;
        Ok(Self { dim, matrix })
    }

    pub fn scalar(a: f64) -> Self {
        Self {
            dim: 1,
            matrix: vec![a],
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            matrix: vec![0.0; dim * dim],
        }
    }
}

impl VectorField for LinearField {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &self.matrix
    }

    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        check_len("params", self.matrix.len(), theta.len())?;
        self.matrix.copy_from_slice(theta);
        Ok(())
    }

    fn eval_into(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        for (row, o) in self.matrix.chunks_exact(self.dim).zip(out.iter_mut()) {
            *o = row.iter().zip(z).map(|(a, x)| a * x).sum();
        }
    }

    fn vjp_z_into(&self, _t: f64, _z: &[f64], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (row, vi) in self.matrix.chunks_exact(self.dim).zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += vi * a;
            }
        }
    }

    fn vjp_theta_into(&self, _t: f64, z: &[f64], v: &[f64], out: &mut [f64]) {
        for (row, vi) in out.chunks_exact_mut(self.dim).zip(v) {
            for (o, zj) in row.iter_mut().zip(z) {
                *o = vi * zj;
            }
        }
    }

    fn time_vjp(&self, _t: f64, _z: &[f64], _v: &[f64]) -> f64 {
        0.0
    }
}

/// One-hidden-layer tanh network `f(z) = W2 tanh(W1 z + b1) + b2`.
///
/// θ layout: `W1` (h×d, row-major), `b1` (h), `W2` (d×h, row-major), `b2` (d).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpField {
    dim: usize,
    hidden: usize,
    theta: Vec<f64>,
}

impl MlpField {
    pub fn param_count_for(dim: usize, hidden: usize) -> usize {
        2 * hidden * dim + hidden + dim
    }

    pub fn new(dim: usize, hidden: usize, theta: Vec<f64>) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::invalid(
                "mlp field needs state_dim >= 1 and hidden >= 1",
            ));
        }
        check_len(
            "mlp params",
            Self::param_count_for(dim, hidden),
            theta.len(),
        )?;
        Ok(Self { dim, hidden, theta })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (d, h) = (self.dim, self.hidden);
        let (w1, rest) = self.theta.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(d * h);
        (w1, b1, w2, b2)
    }

    fn hidden_activations(&self, z: &[f64]) -> Vec<f64> {
        let (w1, b1, _, _) = self.split();
        w1.chunks_exact(self.dim)
            .zip(b1)
            .map(|(row, b)| (row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + b).tanh())
            .collect()
    }

    /// `δ = (W2ᵀ v) ⊙ (1 − s²)`, the cotangent at the hidden pre-activation.
    fn hidden_cotangent(&self, s: &[f64], v: &[f64]) -> Vec<f64> {
        let (_, _, w2, _) = self.split();
        let mut g = vec![0.0; self.hidden];
        for (row, vi) in w2.chunks_exact(self.hidden).zip(v) {
            for (gk, w) in g.iter_mut().zip(row) {
                *gk += vi * w;
            }
        }
        for (gk, sk) in g.iter_mut().zip(s) {
            *gk *= 1.0 - sk * sk;
        }
        g
    }
}

impl VectorField for MlpField {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        check_len("params", self.theta.len(), theta.len())?;
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    fn eval_into(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        let s = self.hidden_activations(z);
        let (_, _, w2, b2) = self.split();
        for ((o, row), b) in out.iter_mut().zip(w2.chunks_exact(self.hidden)).zip(b2) {
            *o = row.iter().zip(&s).map(|(w, x)| w * x).sum::<f64>() + b;
        }
    }

    fn vjp_z_into(&self, _t: f64, z: &[f64], v: &[f64], out: &mut [f64]) {
        let s = self.hidden_activations(z);
        let delta = self.hidden_cotangent(&s, v);
        let (w1, _, _, _) = self.split();
        out.fill(0.0);
        for (row, dk) in w1.chunks_exact(self.dim).zip(&delta) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += dk * w;
            }
        }
    }

    fn vjp_theta_into(&self, _t: f64, z: &[f64], v: &[f64], out: &mut [f64]) {
        let (d, h) = (self.dim, self.hidden);
        let s = self.hidden_activations(z);
        let delta = self.hidden_cotangent(&s, v);
        let (gw1, rest) = out.split_at_mut(h * d);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(d * h);
        for (row, dk) in gw1.chunks_exact_mut(d).zip(&delta) {
            for (o, zj) in row.iter_mut().zip(z) {
                *o = dk * zj;
            }
        }
        gb1.copy_from_slice(&delta);
        for (row, vi) in gw2.chunks_exact_mut(h).zip(v) {
            for (o, sk) in row.iter_mut().zip(&s) {
                *o = vi * sk;
            }
        }
        gb2.copy_from_slice(v);
    }

    fn time_vjp(&self, _t: f64, _z: &[f64], _v: &[f64]) -> f64 {
        0.0
    }
}

/// Damped, sinusoidally forced oscillator in `(q, p)` form.
///
/// `q̇ = p/m`, `ṗ = −k q − c p + u sin(ω t)` with θ = `(m, k, c, u)`; ω is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedOscillatorField {
    theta: [f64; 4],
    omega: f64,
}

impl ForcedOscillatorField {
    pub fn new(mass: f64, stiffness: f64, damping: f64, forcing: f64, omega: f64) -> Self {
        Self {
            theta: [mass, stiffness, damping, forcing],
            omega,
        }
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// `p²/2m + k q²/2`.
    pub fn energy(&self, z: &[f64]) -> f64 {
        let [m, k, _, _] = self.theta;
        0.5 * z[1] * z[1] / m + 0.5 * k * z[0] * z[0]
    }
}

impl VectorField for ForcedOscillatorField {
    fn state_dim(&self) -> usize {
        2
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        check_len("params", 4, theta.len())?;
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    fn eval_into(&self, t: f64, z: &[f64], out: &mut [f64]) {
        let [m, k, c, u] = self.theta;
        out[0] = z[1] / m;
        out[1] = -k * z[0] - c * z[1] + u * (self.omega * t).sin();
    }

    fn vjp_z_into(&self, _t: f64, _z: &[f64], v: &[f64], out: &mut [f64]) {
        let [m, k, c, _] = self.theta;
        out[0] = -k * v[1];
        out[1] = v[0] / m - c * v[1];
    }

    fn vjp_theta_into(&self, t: f64, z: &[f64], v: &[f64], out: &mut [f64]) {
        let m = self.theta[0];
        out[0] = -v[0] * z[1] / (m * m);
        out[1] = -v[1] * z[0];
        out[2] = -v[1] * z[1];
        out[3] = v[1] * (self.omega * t).sin();
    }

    fn time_vjp(&self, t: f64, _z: &[f64], v: &[f64]) -> f64 {
        let u = self.theta[3];
        v[1] * u * self.omega * (self.omega * t).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Linear,
    Mlp,
    ForcedOscillator,
}

/// JSON description of a field.
///
/// Parameters are either listed explicitly in `params` or drawn from a seeded
/// uniform(−`init_scale`, `init_scale`) initializer. For the oscillator the draw is
/// added to the nominal `(m, k, c, u) = (1, 1, 0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub kind: FieldKind,
    pub state_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Treat θ as constants: the field reports zero parameters.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub frozen: bool,
    /// Test hook: scales every VJP by 1.01 so gradient checks must fail.
    #[serde(
        default,
        rename = "debug_corrupt_vjp",
        skip_serializing_if = "std::ops::Not::not"
    )]
    pub corrupt_vjp: bool,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Linear => "linear",
            FieldKind::Mlp => "mlp",
            FieldKind::ForcedOscillator => "forced_oscillator",
        }
    }
}

pub const DEFAULT_INIT_SCALE: f64 = 0.5;
const OSCILLATOR_NOMINAL: [f64; 4] = [1.0, 1.0, 0.0, 0.0];

impl FieldSpec {
    pub fn linear(state_dim: usize, params: Vec<f64>) -> Self {
        Self::bare(FieldKind::Linear, state_dim, Some(params))
    }

    pub fn mlp_seeded(state_dim: usize, hidden: usize, init_scale: f64, seed: u64) -> Self {
        Self {
            hidden: Some(hidden),
            init_scale: Some(init_scale),
            seed: Some(seed),
            ..Self::bare(FieldKind::Mlp, state_dim, None)
        }
    }

    pub fn forced_oscillator(params: [f64; 4], omega: f64) -> Self {
        Self {
            omega: Some(omega),
            ..Self::bare(FieldKind::ForcedOscillator, 2, Some(params.to_vec()))
        }
    }

    fn bare(kind: FieldKind, state_dim: usize, params: Option<Vec<f64>>) -> Self {
        Self {
            kind,
            state_dim,
            hidden: None,
            omega: None,
            params,
            init_scale: None,
            seed: None,
            frozen: false,
            corrupt_vjp: false,
        }
    }

    /// Seed actually used for a draw: the override if given, else `seed`, else 0.
    /// `None` when parameters are explicit.
    pub fn effective_seed(&self, seed_override: Option<u64>) -> Option<u64> {
        match self.params {
            Some(_) => None,
            None => Some(seed_override.or(self.seed).unwrap_or(0)),
        }
    }

    pub fn build(&self, seed_override: Option<u64>) -> Result<ConfiguredField> {
        let scale = self.init_scale.unwrap_or(DEFAULT_INIT_SCALE);
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::invalid("init_scale must be finite and non-negative"));
        }
        let draw = |n: usize| -> Vec<f64> {
            let seed = self.effective_seed(seed_override).unwrap_or(0);
            uniform_vec(seed, n, scale)
        };
        let field = match self.kind {
            FieldKind::Linear => {
                let n = self.state_dim * self.state_dim;
                let theta = self.params.clone().unwrap_or_else(|| draw(n));
                Field::Linear(LinearField::new(self.state_dim, theta)?)
            }
            FieldKind::Mlp => {
                let hidden = self
                    .hidden
                    .ok_or_else(|| Error::invalid("mlp field requires \"hidden\""))?;
                let n = MlpField::param_count_for(self.state_dim, hidden);
                let theta = self.params.clone().unwrap_or_else(|| draw(n));
                Field::Mlp(MlpField::new(self.state_dim, hidden, theta)?)
            }
            FieldKind::ForcedOscillator => {
                if self.state_dim != 2 {
                    return Err(Error::invalid("forced_oscillator has state_dim 2"));
                }
                let theta = match &self.params {
                    Some(p) => p.clone(),
                    None => {
                        if scale >= 1.0 {
                            return Err(Error::invalid(
                                "forced_oscillator init_scale must be < 1 to keep the mass positive",
                            ));
                        }
                        draw(4)
                            .iter()
                            .zip(OSCILLATOR_NOMINAL)
                            .map(|(x, n)| n + x)
                            .collect()
                    }
                };
                check_len("forced_oscillator params", 4, theta.len())?;
                Field::ForcedOscillator(ForcedOscillatorField::new(
                    theta[0],
                    theta[1],
                    theta[2],
                    theta[3],
                    self.omega.unwrap_or(1.0),
                ))
            }
        };
        Ok(ConfiguredField {
            field,
            frozen: self.frozen,
            corrupt_vjp: self.corrupt_vjp,
        })
    }
}

/// `n` draws from uniform(−scale, scale) on a ChaCha8 stream seeded with `seed`.
pub fn uniform_vec(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if scale > 0.0 {
                rng.gen_range(-scale..scale)
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Linear(LinearField),
    Mlp(MlpField),
    ForcedOscillator(ForcedOscillatorField),
}

macro_rules! dispatch {
    ($self:expr, $f:ident => $body:expr) => {
        match $self {
            Field::Linear($f) => $body,
            Field::Mlp($f) => $body,
            Field::ForcedOscillator($f) => $body,
        }
    };
}

impl VectorField for Field {
    fn state_dim(&self) -> usize {
        dispatch!(self, f => f.state_dim())
    }
    fn params(&self) -> &[f64] {
        dispatch!(self, f => f.params())
    }
    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        dispatch!(self, f => f.set_params(theta))
    }
    fn eval_into(&self, t: f64, z: &[f64], out: &mut [f64]) {
        dispatch!(self, f => f.eval_into(t, z, out))
    }
    fn vjp_z_into(&self, t: f64, z: &[f64], v: &[f64], out: &mut [f64]) {
        dispatch!(self, f => f.vjp_z_into(t, z, v, out))
    }
    fn vjp_theta_into(&self, t: f64, z: &[f64], v: &[f64], out: &mut [f64]) {
        dispatch!(self, f => f.vjp_theta_into(t, z, v, out))
    }
    fn time_vjp(&self, t: f64, z: &[f64], v: &[f64]) -> f64 {
        dispatch!(self, f => f.time_vjp(t, z, v))
    }
}

/// A field built from a [`FieldSpec`], with the `frozen` and corruption flags applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfiguredField {
    pub field: Field,
    pub frozen: bool,
    pub corrupt_vjp: bool,
}

const CORRUPTION: f64 = 1.01;

impl ConfiguredField {
    fn corrupt(&self, out: &mut [f64]) {
        if self.corrupt_vjp {
            out.iter_mut().for_each(|x| *x *= CORRUPTION);
        }
    }
}

impl VectorField for ConfiguredField {
    fn state_dim(&self) -> usize {
        self.field.state_dim()
    }

    fn params(&self) -> &[f64] {
        if self.frozen {
            &[]
        } else {
            self.field.params()
        }
    }

    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if self.frozen {
            check_len("params", 0, theta.len())
        } else {
            self.field.set_params(theta)
        }
    }

    fn eval_into(&self, t: f64, z: &[f64], out: &mut [f64]) {
        self.field.eval_into(t, z, out)
    }

    fn vjp_z_into(&self, t: f64, z: &[f64], v: &[f64], out: &mut [f64]) {
        self.field.vjp_z_into(t, z, v, out);
        self.corrupt(out);
    }

    fn vjp_theta_into(&self, t: f64, z: &[f64], v: &[f64], out: &mut [f64]) {
        if !self.frozen {
            self.field.vjp_theta_into(t, z, v, out);
            self.corrupt(out);
        }
    }

    fn time_vjp(&self, t: f64, z: &[f64], v: &[f64]) -> f64 {
        let g = self.field.time_vjp(t, z, v);
        if self.corrupt_vjp {
            g * CORRUPTION
        } else {
            g
        }
    }
}
