use adjoint_seminorm::field::uniform_vec;
use adjoint_seminorm::{
    augmented_dynamics, make_default_norm, make_seminorm, AdjointPartition, FieldSpec, NormSpec,
};
use proptest::prelude::*;

/// Block lengths and weights for a random partition, with at least one positive weight.
fn blocks() -> impl Strategy<Value = Vec<(usize, f64)>> {
    prop::collection::vec((1usize..6, prop_oneof![Just(0.0), 0.0f64..3.0]), 1..5).prop_map(
        |mut b| {
            if b.iter().all(|(_, w)| *w <= 0.0) {
                b[0].1 = 1.0;
            }
            b
        },
    )
}

fn spec_and_vector() -> impl Strategy<Value = (Vec<(usize, f64)>, Vec<f64>)> {
    blocks().prop_flat_map(|b| {
        let n: usize = b.iter().map(|(l, _)| l).sum();
        (Just(b), prop::collection::vec(-1e3f64..1e3, n))
    })
}

fn dims() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..5, 0usize..7).prop_flat_map(|(d, p)| {
        (
            Just(d),
            Just(p),
            prop::collection::vec(-10.0f64..10.0, 1 + 2 * d + p),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn absolutely_homogeneous((b, x) in spec_and_vector(), alpha in -50.0f64..50.0) {
        let spec = NormSpec::from_blocks(&b).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        let lhs = spec.eval(&scaled).unwrap();
        let rhs = alpha.abs() * spec.eval(&x).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn zero_vector_has_zero_norm(b in blocks()) {
        let spec = NormSpec::from_blocks(&b).unwrap();
        prop_assert_eq!(spec.eval(&vec![0.0; spec.total_len()]).unwrap(), 0.0);
    }

    #[test]
    fn dropping_a_group_never_increases((b, x) in spec_and_vector(), pick in 0usize..8) {
        let spec = NormSpec::from_blocks(&b).unwrap();
        let idx = pick % b.len();
        let full = spec.eval(&x).unwrap();
        // Zeroing the only positive weight would leave an invalid spec.
        if let Ok(partial) = spec.clone().with_weight(idx, 0.0) {
            prop_assert!(partial.eval(&x).unwrap() <= full);
        }
    }

    #[test]
    fn norm_is_max_of_weighted_group_rms((b, x) in spec_and_vector()) {
        let spec = NormSpec::from_blocks(&b).unwrap();
        let v = spec.eval(&x).unwrap();
        let mut off = 0;
        let mut hit = false;
        for (len, w) in &b {
            let g = &x[off..off + len];
            let rms = (g.iter().map(|y| y * y).sum::<f64>() / *len as f64).sqrt();
            prop_assert!(w * rms <= v * (1.0 + 1e-12));
            hit |= *w > 0.0 && (w * rms - v).abs() <= 1e-12 * v.max(1.0);
            off += len;
        }
        prop_assert!(hit);
    }

    #[test]
    fn triangle_inequality((b, x) in spec_and_vector(), seed in any::<u64>()) {
        let spec = NormSpec::from_blocks(&b).unwrap();
        let y = uniform_vec(seed, x.len(), 1e3);
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, c)| a + c).collect();
        let (nx, ny, ns) = (spec.eval(&x).unwrap(), spec.eval(&y).unwrap(), spec.eval(&sum).unwrap());
        prop_assert!(ns <= (nx + ny) * (1.0 + 1e-12));
    }

    #[test]
    fn seminorm_ignores_time_and_parameter_adjoints((d, p, aug) in dims(), noise in prop::collection::vec(-1e6f64..1e6, 7)) {
        let part = AdjointPartition::new(d, p).unwrap();
        let semi = make_seminorm(d, p);
        let mut moved = aug.clone();
        moved[part.a_t()] = noise[0];
        for (k, i) in part.a_theta().enumerate() {
            moved[i] = noise[1 + k % 6];
        }
        prop_assert_eq!(semi.eval(&aug).unwrap(), semi.eval(&moved).unwrap());

        let mut kernel = vec![0.0; part.len()];
        kernel[part.a_t()] = noise[0];
        for i in part.a_theta() {
            kernel[i] = noise[1];
        }
        prop_assert_eq!(semi.eval(&kernel).unwrap(), 0.0);
    }

    #[test]
    fn seminorm_never_exceeds_default((d, p, aug) in dims()) {
        let semi = make_seminorm(d, p).eval(&aug).unwrap();
        let full = make_default_norm(d, p).eval(&aug).unwrap();
        prop_assert!(semi <= full);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn augmented_dynamics_never_read_time_or_parameter_adjoints(
        seed in any::<u64>(),
        t in -2.0f64..2.0,
        noise in prop::collection::vec(-1e3f64..1e3, 1 + 27),
    ) {
        let field = FieldSpec::mlp_seeded(2, 5, 0.7, seed).build(None).unwrap();
        let part = AdjointPartition::of(&field).unwrap();
        let aug = uniform_vec(seed ^ 1, part.len(), 2.0);
        let base = augmented_dynamics(&field, t, &aug).unwrap();
        let mut moved = aug.clone();
        moved[part.a_t()] = noise[0];
        for (k, i) in part.a_theta().enumerate() {
            moved[i] = noise[1 + k];
        }
        let out = augmented_dynamics(&field, t, &moved).unwrap();
        prop_assert_eq!(
            base.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            out.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}
