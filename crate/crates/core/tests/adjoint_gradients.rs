use adjoint_seminorm::field::{uniform_vec, FieldSpec};
use adjoint_seminorm::harness::bench::median;
use adjoint_seminorm::harness::problem::{Discrepancy, LossKind, Problem};
use adjoint_seminorm::{
    backprop, backprop_multi, integrate, Checkpoint, ConfiguredField, LinearField, NormMode,
    NormSpec, Tolerances, VectorField,
};

const MODES: [NormMode; 2] = [NormMode::Default, NormMode::Seminorm];

fn tol(rtol: f64, atol: f64) -> Tolerances {
    Tolerances::new(rtol, atol).unwrap()
}

fn terminal_sum_problem(field: ConfiguredField, z0: Vec<f64>, t1: f64) -> Problem {
    let d = z0.len();
    Problem {
        field,
        z0,
        t0: 0.0,
        obs_times: vec![t1],
        kind: LossKind::TerminalSum,
        targets: vec![vec![0.0; d]],
        weight: 1.0,
    }
}

#[test]
fn scalar_linear_matches_closed_form() {
    // z(t) = z0·exp(a t), L = z(T).
    for (a, z0, t1) in [(0.0, 1.0, 1.0), (-1.0, 2.0, 1.0), (0.7, -0.5, 2.0)] {
        let field = LinearField::scalar(a);
        let e = f64::exp(a * t1);
        let z_t = [z0 * e];
        for mode in MODES {
            let g = backprop(&field, &z_t, (0.0, t1), &[1.0], tol(1e-10, 1e-12), mode).unwrap();
            assert!((g.dl_dz0[0] - e).abs() <= 1e-8 * e.max(1.0), "{mode} dz0");
            assert!((g.dl_dtheta[0] - z0 * t1 * e).abs() <= 1e-8, "{mode} dθ");
            assert!((g.dl_dt1 - a * z0 * e).abs() <= 1e-12);
            assert!((g.dl_dt0 + a * z0 * e).abs() <= 1e-8, "{mode} dt0");
        }
    }
}

#[test]
fn zero_cotangent_gives_zero_gradients_but_still_solves() {
    let spec = FieldSpec::mlp_seeded(3, 6, 0.5, 4);
    let field = spec.build(None).unwrap();
    let z0 = [0.2, -0.1, 0.4];
    let (z_t, _) = integrate(
        &field,
        &z0,
        (0.0, 1.0),
        tol(1e-6, 1e-9),
        &NormSpec::rms(3),
        &mut (),
    )
    .unwrap();
    for mode in MODES {
        let g = backprop(&field, &z_t, (0.0, 1.0), &[0.0; 3], tol(1e-6, 1e-9), mode).unwrap();
        assert!(g.dl_dz0.iter().chain(&g.dl_dtheta).all(|x| *x == 0.0));
        assert_eq!((g.dl_dt0, g.dl_dt1), (0.0, 0.0));
        assert!(g.stats.nfe > 0 && g.stats.steps_accepted > 0);
    }
}

#[test]
fn mlp_terminal_sum_matches_finite_differences() {
    for seed in 0..3 {
        let field = FieldSpec::mlp_seeded(2, 4, 0.8, seed).build(None).unwrap();
        let problem = terminal_sum_problem(field, uniform_vec(seed + 50, 2, 1.0), 1.0);
        let fd = problem
            .finite_difference_gradient(tol(1e-10, 1e-12), 1e-4)
            .unwrap();
        for mode in MODES {
            let g = problem.gradient(tol(1e-10, 1e-12), mode).unwrap().grad;
            let err = Discrepancy::between(&g.dl_dtheta, &fd.dl_dtheta)
                .combine(Discrepancy::between(&g.dl_dz0, &fd.dl_dz0))
                .combine(Discrepancy::between(
                    &[g.dl_dt0, g.dl_dt1],
                    &[fd.dl_dt0, fd.dl_dt1],
                ));
            assert!(err.within(1e-4, 1e-8), "seed {seed} {mode}: {err:?}");
        }
    }
}

#[test]
fn single_checkpoint_is_plain_backprop() {
    let field = FieldSpec::mlp_seeded(2, 5, 0.5, 1).build(None).unwrap();
    let z_t = [0.3, -0.8];
    let g = [1.0, -2.0];
    for mode in MODES {
        let a = backprop(&field, &z_t, (0.0, 1.5), &g, tol(1e-7, 1e-9), mode).unwrap();
        let b = backprop_multi(
            &field,
            0.0,
            &[Checkpoint {
                t: 1.5,
                z: z_t.to_vec(),
            }],
            &[g.to_vec()],
            tol(1e-7, 1e-9),
            mode,
        )
        .unwrap();
        assert_eq!(
            (a.dl_dz0, a.dl_dtheta, a.dl_dt0, a.dl_dt1),
            (b.dl_dz0, b.dl_dtheta, b.dl_dt0, b.dl_dt1)
        );
        assert_eq!(a.stats.attempts, b.stats.attempts);
    }
}

#[test]
fn zero_cotangent_at_later_checkpoint_reduces_to_earlier_backprop() {
    let field = FieldSpec::mlp_seeded(2, 5, 0.5, 2).build(None).unwrap();
    let tol = tol(1e-8, 1e-10);
    let sol = adjoint_seminorm::integrate_through(
        &field,
        &[0.5, 0.1],
        &[0.0, 0.6, 1.0],
        tol,
        &NormSpec::rms(2),
        &mut (),
    )
    .unwrap();
    let c1 = Checkpoint {
        t: 0.6,
        z: sol.states[1].clone(),
    };
    let c2 = Checkpoint {
        t: 1.0,
        z: sol.states[2].clone(),
    };
    let g1 = vec![0.7, -1.1];
    for mode in MODES {
        let multi = backprop_multi(
            &field,
            0.0,
            &[c1.clone(), c2.clone()],
            &[g1.clone(), vec![0.0; 2]],
            tol,
            mode,
        )
        .unwrap();
        let single = backprop(&field, &c1.z, (0.0, 0.6), &g1, tol, mode).unwrap();
        assert_eq!(multi.dl_dz0, single.dl_dz0);
        assert_eq!(multi.dl_dtheta, single.dl_dtheta);
        assert_eq!(multi.dl_dt0, single.dl_dt0);
        // The loss does not depend on the later time at all.
        assert_eq!(multi.dl_dt1, 0.0);
    }
}

#[test]
fn two_observation_squared_loss_on_linear_field() {
    // z(t) = z0·e^{θt}; L = z(0.5)² + z(1)².
    let (theta, z0) = (-1.0f64, 1.0f64);
    let closed = z0 * z0 * (f64::exp(theta) + 2.0 * f64::exp(2.0 * theta));
    let spec = FieldSpec::linear(1, vec![theta]);
    let problem = Problem {
        field: spec.build(None).unwrap(),
        z0: vec![z0],
        t0: 0.0,
        obs_times: vec![0.5, 1.0],
        kind: LossKind::SquaredError,
        targets: vec![vec![0.0], vec![0.0]],
        weight: 1.0,
    };
    let fd = problem
        .finite_difference_gradient(tol(1e-10, 1e-12), 1e-4)
        .unwrap();
    assert!(((fd.dl_dtheta[0] - closed) / closed).abs() <= 1e-6);
    for mode in MODES {
        let g = problem.gradient(tol(1e-8, 1e-10), mode).unwrap().grad;
        assert!(
            ((g.dl_dtheta[0] - fd.dl_dtheta[0]) / fd.dl_dtheta[0]).abs() <= 1e-4,
            "{mode}"
        );
        assert!(((g.dl_dtheta[0] - closed) / closed).abs() <= 1e-4, "{mode}");
    }
}

#[test]
fn seminorm_and_default_gradients_agree() {
    let specs = [
        FieldSpec::linear(2, vec![-0.3, 1.0, -1.0, -0.2]),
        FieldSpec::mlp_seeded(4, 16, 0.5, 3),
        FieldSpec::forced_oscillator([1.2, 0.8, 0.1, 0.5], 1.5),
    ];
    for spec in specs {
        let z0 = uniform_vec(77, spec.state_dim, 1.0);
        let problem = terminal_sum_problem(spec.build(None).unwrap(), z0, 1.0);
        let a = problem
            .gradient(tol(1e-8, 1e-10), NormMode::Default)
            .unwrap()
            .grad;
        let b = problem
            .gradient(tol(1e-8, 1e-10), NormMode::Seminorm)
            .unwrap()
            .grad;
        let err = Discrepancy::between(&b.dl_dtheta, &a.dl_dtheta);
        assert!(err.within(1e-3, 1e-8), "{:?}: {err:?}", spec.kind);
    }
}

#[test]
fn seminorm_takes_fewer_backward_evaluations_on_wide_mlp() {
    let (mut default, mut semi) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let field = FieldSpec::mlp_seeded(4, 16, 0.5, seed).build(None).unwrap();
        assert!(field.param_count() >= 100);
        let problem = terminal_sum_problem(field, uniform_vec(seed + 500, 4, 1.0), 1.0);
        default.push(
            problem
                .gradient(tol(1e-6, 1e-9), NormMode::Default)
                .unwrap()
                .grad
                .stats
                .nfe as f64,
        );
        semi.push(
            problem
                .gradient(tol(1e-6, 1e-9), NormMode::Seminorm)
                .unwrap()
                .grad
                .stats
                .nfe as f64,
        );
    }
    assert!(median(&semi) < median(&default), "{semi:?} vs {default:?}");
}
