//! Explicit Runge-Kutta coefficients.

pub const STAGES: usize = 7;

/// An explicit embedded tableau with a strictly lower triangular coupling matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub c: [f64; STAGES],
    pub a: [[f64; STAGES]; STAGES],
    /// Propagated (5th order) weights.
    pub b: [f64; STAGES],
    /// Embedded (4th order) weights.
    pub b_hat: [f64; STAGES],
    /// The last stage is evaluated at the propagated solution, so it can seed the next step.
    pub fsal: bool,
}

impl ButcherTableau {
    /// Dormand-Prince 5(4).
    pub fn dormand_prince() -> Self {
        Self {
            c: [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0],
            a: [
                [0.0; STAGES],
                [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0, 0.0],
                [
                    19372.0 / 6561.0,
                    -25360.0 / 2187.0,
                    64448.0 / 6561.0,
                    -212.0 / 729.0,
                    0.0,
                    0.0,
                    0.0,
                ],
                [
                    9017.0 / 3168.0,
                    -355.0 / 33.0,
                    46732.0 / 5247.0,
                    49.0 / 176.0,
                    -5103.0 / 18656.0,
                    0.0,
                    0.0,
                ],
                [
                    35.0 / 384.0,
                    0.0,
                    500.0 / 1113.0,
                    125.0 / 192.0,
                    -2187.0 / 6784.0,
                    11.0 / 84.0,
                    0.0,
                ],
            ],
            b: [
                35.0 / 384.0,
                0.0,
                500.0 / 1113.0,
                125.0 / 192.0,
                -2187.0 / 6784.0,
                11.0 / 84.0,
                0.0,
            ],
            b_hat: [
                5179.0 / 57600.0,
                0.0,
                7571.0 / 16695.0,
                393.0 / 640.0,
                -92097.0 / 339200.0,
                187.0 / 2100.0,
                1.0 / 40.0,
            ],
            fsal: true,
        }
    }
}

impl Default for ButcherTableau {
    fn default() -> Self {
        Self::dormand_prince()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        let t = ButcherTableau::dormand_prince();
        assert!((t.b.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
        assert!((t.b_hat.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn structure() {
        let t = ButcherTableau::dormand_prince();
        assert_eq!(t.c[0], 0.0);
        for i in 0..STAGES {
            for j in i..STAGES {
                assert_eq!(t.a[i][j], 0.0, "a[{i}][{j}] must vanish");
            }
            // row sums equal the nodes
            assert!((t.a[i].iter().sum::<f64>() - t.c[i]).abs() < 1e-14);
        }
        assert!(t.fsal);
        assert_eq!(t.a[STAGES - 1], t.b);
    }
}
