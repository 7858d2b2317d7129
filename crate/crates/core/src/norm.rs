//! Group-weighted mixed L∞-RMS (semi)norms over a flat state vector.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// A contiguous block of channels sharing one RMS and one weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormGroup {
    pub offset: usize,
    pub len: usize,
    pub weight: f64,
}

/// `‖x‖ = max_g w_g · RMS(x_g)` over groups that partition the state.
///
/// Zero weights are allowed (that is what makes it a seminorm) but at least one
/// group must carry positive weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    groups: Vec<NormGroup>,
}

impl NormSpec {
    pub fn new(groups: Vec<NormGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("norm needs at least one group"));
        }
        let mut next = 0;
        for g in &groups {
            if g.offset != next || g.len == 0 {
                return Err(Error::invalid(format!(
                    "norm groups must be non-empty and contiguous from 0 (group at offset {} len {})",
                    g.offset, g.len
                )));
            }
            if !(g.weight.is_finite() && g.weight >= 0.0) {
                return Err(Error::invalid("norm weights must be finite and >= 0"));
            }
            next += g.len;
        }
        if !groups.iter().any(|g| g.weight > 0.0) {
            return Err(Error::invalid(
                "at least one norm group needs positive weight",
            ));
        }
        Ok(Self { groups })
    }

    /// Builds groups from consecutive `(len, weight)` pairs.
    pub fn from_blocks(blocks: &[(usize, f64)]) -> Result<Self> {
        let mut offset = 0;
        let groups = blocks
            .iter()
            .map(|&(len, weight)| {
                let g = NormGroup {
                    offset,
                    len,
                    weight,
                };
                offset += len;
                g
            })
            .collect();
        Self::new(groups)
    }

    /// Plain RMS over `n` channels.
    pub fn rms(n: usize) -> Self {
        Self::from_blocks(&[(n, 1.0)]).expect("rms norm over n >= 1 channels")
    }

    pub fn groups(&self) -> &[NormGroup] {
        &self.groups
    }

    pub fn total_len(&self) -> usize {
        self.groups.last().map_or(0, |g| g.offset + g.len)
    }

    pub fn with_weight(mut self, group: usize, weight: f64) -> Result<Self> {
        let g = self
            .groups
            .get_mut(group)
            .ok_or_else(|| Error::invalid(format!("no norm group {group}")))?;
        g.weight = weight;
        Self::new(self.groups)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_len("norm input", self.total_len(), x.len())?;
        Ok(self.reduce(|i| x[i]))
    }

    /// `‖err / scale‖` with element-wise division, without materializing the quotient.
    pub fn eval_ratio(&self, err: &[f64], scale: &[f64]) -> Result<f64> {
        let n = self.total_len();
        check_len("error estimate", n, err.len())?;
        check_len("error scale", n, scale.len())?;
        Ok(self.reduce(|i| err[i] / scale[i]))
    }

    fn reduce(&self, value: impl Fn(usize) -> f64) -> f64 {
        self.groups
            .iter()
            .filter(|g| g.weight > 0.0)
            .map(|g| {
                let sum_sq: f64 = (g.offset..g.offset + g.len)
                    .map(|i| {
                        let v = value(i);
                        v * v
                    })
                    .sum();
                g.weight * (sum_sq / g.len as f64).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT_12_5: f64 = 3.5355339059327378;

    #[test]
    fn single_group_rms() {
        let n = NormSpec::rms(2);
        assert!((n.eval(&[3.0, 4.0]).unwrap() - SQRT_12_5).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_group_is_ignored() {
        let n = NormSpec::from_blocks(&[(2, 1.0), (2, 0.0)]).unwrap();
        assert_eq!(n.eval(&[0.0, 0.0, 1e6, 1e6]).unwrap(), 0.0);
    }

    #[test]
    fn max_picks_the_nonzero_group() {
        let n = NormSpec::from_blocks(&[(2, 1.0), (2, 1.0)]).unwrap();
        assert!((n.eval(&[3.0, 4.0, 0.0, 0.0]).unwrap() - SQRT_12_5).abs() < 1e-15);
    }

    #[test]
    fn ratio_matches_explicit_division() {
        let n = NormSpec::from_blocks(&[(1, 1.0), (2, 0.5)]).unwrap();
        let err = [0.1, -0.4, 2.0];
        let scale = [0.5, 2.0, 4.0];
        let q: Vec<f64> = err.iter().zip(&scale).map(|(e, s)| e / s).collect();
        assert_eq!(n.eval_ratio(&err, &scale).unwrap(), n.eval(&q).unwrap());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(NormSpec::from_blocks(&[(2, 0.0), (1, 0.0)]).is_err());
        assert!(NormSpec::from_blocks(&[(0, 1.0)]).is_err());
        assert!(NormSpec::from_blocks(&[(1, -1.0)]).is_err());
        assert!(NormSpec::new(vec![NormGroup {
            offset: 1,
            len: 2,
            weight: 1.0
        }])
        .is_err());
        assert!(NormSpec::new(vec![]).is_err());
    }

    #[test]
    fn length_mismatch_is_reported() {
        assert!(matches!(
            NormSpec::rms(3).eval(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 1,
                ..
            })
        ));
    }
}
