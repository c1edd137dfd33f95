use proptest::prelude::*;
use qtraj::atom::{rotating_frame_generator, FrameParams};
use qtraj::ops::{
    c, choi_positivity, hermitian_eigen, liouvillian_apply, superop_exp, superop_matrix, DensityOperator2, Operator2,
    Superoperator2,
};

fn op() -> impl Strategy<Value = Operator2> {
    prop::array::uniform8(-1.0f64..1.0)
        .prop_map(|x| Operator2::new(c(x[0], x[1]), c(x[2], x[3]), c(x[4], x[5]), c(x[6], x[7])))
}

fn hermitian() -> impl Strategy<Value = Operator2> {
    op().prop_map(|x| x.hermitian_part())
}

fn state() -> impl Strategy<Value = DensityOperator2> {
    (0.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(r, x, y, z)| {
        let n = (x * x + y * y + z * z).sqrt().max(1e-12);
        DensityOperator2::from_bloch([r * x / n, r * y / n, r * z / n]).unwrap()
    })
}

fn squeezing_frame() -> FrameParams {
    FrameParams {
        gamma: 1.0,
        n_bar: 0.0,
        k0: 0.0,
        k1: 0.3213,
        delta_nu: 1.3833,
        omega_r: 1.6150,
        abs_alpha1: 0.45f64.sqrt(),
        abs_alpha2: 0.45f64.sqrt(),
        theta1: -1.9307,
        theta2: -0.1540,
    }
}

#[test]
fn lindblad_action_in_pauli_algebra() {
    let tau = Operator2::sigma_x();
    let out = liouvillian_apply(&(Operator2::sigma_z() * 0.5), &[], &tau).unwrap();
    assert!((out - Operator2::sigma_y()).max_abs() < 1e-15);

    // sigma_- P sigma_+ = |g><g|, {P, P} = 2P
    let p = Operator2::projector_excited();
    let out = liouvillian_apply(&Operator2::zero(), &[Operator2::sigma_minus()], &p).unwrap();
    let expect = Operator2::from_real(-1.0, 0.0, 0.0, 1.0);
    assert!((out - expect).max_abs() < 1e-15);
}

#[test]
fn generator_exponential_is_cp_on_a_time_grid() {
    let g = rotating_frame_generator(&squeezing_frame()).lhat;
    for i in 1..=10 {
        let t = 0.5 * i as f64;
        let m = choi_positivity(&superop_exp(&g, t).unwrap());
        assert!(m >= -1e-9, "t = {t}: {m}");
    }
    assert!((choi_positivity(&Superoperator2::transpose_map()) + 1.0).abs() < 1e-12);
    assert!(choi_positivity(&Superoperator2::identity()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn generator_is_traceless(h in hermitian(), l1 in op(), l2 in op(), tau in hermitian()) {
        let out = liouvillian_apply(&h, &[l1, l2], &tau).unwrap();
        prop_assert!(out.trace().norm() < 1e-12);
        let g = superop_matrix(&h, &[l1, l2]).unwrap();
        prop_assert!((g.apply(&tau) - out).max_abs() < 1e-12);
    }

    #[test]
    fn semigroup_maps_states_to_states(h in hermitian(), l in op(), rho in state()) {
        let g = superop_matrix(&h, &[l]).unwrap();
        for t in [0.1, 1.0, 10.0] {
            let out = superop_exp(&g, t).unwrap().apply(rho.as_operator());
            prop_assert!(out.is_hermitian(1e-9));
            prop_assert!((out.trace().re - 1.0).abs() < 1e-9);
            prop_assert!(DensityOperator2::check(&out, 1e-9, true).is_ok());
        }
        let e1 = superop_exp(&g, 0.7).unwrap();
        let e2 = superop_exp(&g, 0.4).unwrap();
        let e3 = superop_exp(&g, 1.1).unwrap();
        prop_assert!(e1.compose(&e2).max_abs_diff(&e3) < 1e-9);
    }

    #[test]
    fn eigenpairs_reconstruct_hermitian_operators(x in hermitian()) {
        let [(a, u), (b, v)] = hermitian_eigen(&x);
        prop_assert!(a <= b + 1e-15);
        prop_assert!((u.norm() - 1.0).abs() < 1e-12 && (v.norm() - 1.0).abs() < 1e-12);
        prop_assert!(u.inner(&v).norm() < 1e-12);
        let back = u.projector() * a + v.projector() * b;
        prop_assert!((back - x).max_abs() < 1e-12);
    }
}
