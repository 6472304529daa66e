use proptest::prelude::*;
use thermoconv::criteria::{cd_constant_diffusion, ikb_constants, ou_cd_rho, sync_contraction_test, IkbInputs};
use thermoconv::linalg::{expm, inv, lambda_min_sym, sym, RealMatrix, RealVector};
use thermoconv::ou::{BlockMatrix, OuEps};
use thermoconv::sde::{couple, DiffusionModel};

fn block_strategy() -> impl Strategy<Value = BlockMatrix> {
    (2..=4usize)
        .prop_flat_map(|d| (1..d, prop::collection::vec(-1.0..1.0f64, d * d), Just(d)))
        .prop_filter_map("unstable", |(dx, v, d)| {
            let mut m = RealMatrix::from_row_slice(d, d, &v);
            for i in 0..d {
                m[(i, i)] += 1.2;
            }
            let b = BlockMatrix::new(m, dx).ok()?;
            let s11 = sym(b.matrix()).view((0, 0), (dx, dx)).into_owned();
            (lambda_min_sym(&s11) > 0.0).then_some(b)
        })
}

fn bumped(p: &IkbInputs, field: usize, by: f64) -> IkbInputs {
    let mut q = *p;
    match field {
        0 => q.b_xy_w += by,
        1 => q.b_2x_w += by,
        2 => q.l_eta1_x += by,
        3 => q.l_eta1_y += by,
        4 => q.l_eta2_y += by,
        5 => q.l_bb1_x += by,
        6 => q.l_bb2_y += by,
        _ => q.l_b1_x += by,
    }
    q
}

fn ikb_inputs() -> impl Strategy<Value = IkbInputs> {
    (
        prop::collection::vec(0.0..2.0f64, 12),
        (0.2..1.0f64, 1.0..3.0f64, 0.2..1.0f64, 1.0..3.0f64),
        1..4u32,
    )
        .prop_map(|(v, (l1, bl1, l2, bl2), r1)| IkbInputs {
            lambda1: l1,
            big_lambda1: bl1,
            lambda2: l2,
            big_lambda2: bl2,
            l_eta1_x: v[0],
            l_eta1_y: v[1],
            l_eta2_y: v[2],
            l_bb1_x: v[3],
            l_bb2_y: v[4],
            h1_inf: v[5],
            h2_inf: v[6],
            sup_lf_b1: v[7],
            sup_m2: v[8],
            k_x_w: v[9],
            b_xy_w: v[10],
            b_2x_w: v[11],
            r1,
            ..IkbInputs::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cd_rho_is_nonpositive_and_vanishes_for_psd_symmetric_part(b in block_strategy()) {
        let rho = ou_cd_rho(&b).unwrap();
        prop_assert!(rho <= 0.0);
        if lambda_min_sym(&sym(b.matrix())) >= 0.0 {
            prop_assert_eq!(rho, 0.0);
        }
    }

    #[test]
    fn ou_family_satisfies_its_own_curvature_bound(b in block_strategy()) {
        let kappa = -ou_cd_rho(&b).unwrap();
        for eps in [1.0, 0.1, 0.01] {
            let Ok(me) = OuEps::new(&b, eps) else { continue };
            let a_inv = inv(&me.ieps).unwrap();
            let grid = vec![vec![0.0; b.dim()], vec![1.0; b.dim()]];
            let v = cd_constant_diffusion(|_| me.sigma_inv.clone(), |_| me.k.clone(), &a_inv, &grid, kappa).unwrap();
            prop_assert!(v.satisfied, "eps {eps}: worst {}", v.worst_eigenvalue);
        }
    }

    #[test]
    fn ikb_is_monotone_in_coupling_bounds(p in ikb_inputs(), field in 0..8usize, by in 0.0..1.0f64) {
        let a = ikb_constants(&p).unwrap();
        let b = ikb_constants(&bumped(&p, field, by)).unwrap();
        prop_assert!(b.alpha0 <= a.alpha0);
        prop_assert!(b.beta0 >= a.beta0);
        prop_assert!(b.c >= a.c);
        prop_assert!(b.d >= a.d);
    }
}

#[test]
fn coupling_reproduces_deterministic_separation() {
    let b = BlockMatrix::new(
        RealMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, -1.0, 2.0]),
        1,
    )
    .unwrap();
    let me = OuEps::new(&b, 0.1).unwrap();
    let z1 = [1.0, -0.5, 2.0];
    let z2 = [0.0, 0.5, 1.0];
    let delta0 = RealVector::from_column_slice(&z1) - RealVector::from_column_slice(&z2);
    let dt = 0.01;

    let exact = DiffusionModel::from_ou(&me).unwrap().with_exact_stepping().unwrap();
    let path = couple(&exact, &z1, &z2, dt, 1.0, 5).unwrap();
    for (k, &t) in path.first.times.iter().enumerate() {
        let want = expm(&me.meps, -t).unwrap() * &delta0;
        let got = RealVector::from_column_slice(path.first.state(k)) - RealVector::from_column_slice(path.second.state(k));
        assert!((got - want).norm() < 1e-10, "t = {t}");
    }

    let euler = DiffusionModel::from_ou(&me).unwrap();
    let path = couple(&euler, &z1, &z2, dt, 1.0, 5).unwrap();
    let n_sub = (dt / (0.1 * me.eps)).ceil() as i32;
    let h = dt / n_sub as f64;
    let one_step = RealMatrix::identity(3, 3) - &me.meps * h;
    let mut want = delta0.clone();
    for k in 0..path.first.times.len() {
        let got = RealVector::from_column_slice(path.first.state(k)) - RealVector::from_column_slice(path.second.state(k));
        assert!((&got - &want).norm() < 1e-10, "step {k}");
        for _ in 0..n_sub {
            want = &one_step * &want;
        }
    }
}

#[test]
fn sync_test_flags_a_too_strong_contraction_claim() {
    let b = BlockMatrix::new(RealMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), 1).unwrap();
    let me = OuEps::new(&b, 1.0).unwrap();
    let model = DiffusionModel::from_ou(&me).unwrap().with_exact_stepping().unwrap();
    let pairs = vec![(vec![1.0, 1.0], vec![0.0, 0.0])];
    let honest = sync_contraction_test(&model, &pairs, &[0.5, 1.0], 0.01, -1.0, 50, 3).unwrap();
    assert!(honest.pass);
    let greedy = sync_contraction_test(&model, &pairs, &[0.5, 1.0], 0.01, -1.5, 50, 3).unwrap();
    assert!(!greedy.pass);
    let same = sync_contraction_test(&model, &[(vec![1.0, 1.0], vec![1.0, 1.0])], &[1.0], 0.01, -5.0, 10, 3).unwrap();
    assert!(same.pass);
}
