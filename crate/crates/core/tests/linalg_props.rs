use proptest::prelude::*;
use thermoconv::linalg::{
    expm, gaussian_kl, gaussian_quadratic_expectation, solve_lyapunov, sym, GaussianState, RealMatrix, RealVector,
};
use thermoconv::quadrature::{adaptive_simpson, GaussHermite};
use thermoconv::rng::{fill_normal, path_rng};
use thermoconv::stats::mean_se;

fn square(max_dim: usize, scale: f64) -> impl Strategy<Value = RealMatrix> {
    (1..=max_dim).prop_flat_map(move |n| {
        prop::collection::vec(-scale..scale, n * n).prop_map(move |v| RealMatrix::from_row_slice(n, n, &v))
    })
}

fn stable(max_dim: usize) -> impl Strategy<Value = RealMatrix> {
    square(max_dim, 1.0).prop_map(|g| {
        let n = g.nrows();
        let shift = g.norm() + 0.1;
        g + RealMatrix::identity(n, n) * shift
    })
}

fn spd(n: usize) -> impl Strategy<Value = RealMatrix> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| {
        let g = RealMatrix::from_row_slice(n, n, &v);
        &g * g.transpose() + RealMatrix::identity(n, n) * 0.3
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lyapunov_residual_is_small(m in stable(12), q_seed in spd(12)) {
        let n = m.nrows();
        let q = q_seed.view((0, 0), (n, n)).into_owned();
        let x = solve_lyapunov(&m, &q).unwrap();
        let res = (&m * &x + &x * m.transpose() - &q).norm();
        prop_assert!(res <= 1e-10 * q.norm(), "residual {res:e}");
        prop_assert!((&x - x.transpose()).norm() <= 1e-12 * x.norm());
    }

    #[test]
    fn expm_semigroup(raw in square(6, 1.0), s in 0.0..2.0f64, t in 0.0..2.0f64) {
        let m = if raw.norm() > 5.0 { &raw * (5.0 / raw.norm()) } else { raw };
        let lhs = expm(&m, s + t).unwrap();
        let rhs = expm(&m, s).unwrap() * expm(&m, t).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-8);
    }

    #[test]
    fn kl_matches_quadrature_in_one_dimension(
        m1 in -1.0..1.0f64, m2 in -1.0..1.0f64, v1 in 0.3..2.0f64, v2 in 0.3..2.0f64,
    ) {
        let p = GaussianState::new(RealVector::from_element(1, m1), RealMatrix::from_element(1, 1, v1)).unwrap();
        let q = GaussianState::new(RealVector::from_element(1, m2), RealMatrix::from_element(1, 1, v2)).unwrap();
        let logpdf = |x: f64, m: f64, v: f64| -0.5 * (x - m).powi(2) / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
        let integrand = |x: f64| logpdf(x, m1, v1).exp() * (logpdf(x, m1, v1) - logpdf(x, m2, v2));
        let w = 12.0 * v1.sqrt();
        let num = adaptive_simpson(&integrand, m1 - w, m1 + w, 1e-11);
        prop_assert!((gaussian_kl(&p, &q).unwrap() - num).abs() <= 1e-6);
    }

    #[test]
    fn kl_matches_quadrature_in_two_dimensions(
        mp in prop::collection::vec(-1.0..1.0f64, 2),
        mq in prop::collection::vec(-1.0..1.0f64, 2),
        sp in spd(2), sq in spd(2),
    ) {
        let p = GaussianState::new(RealVector::from_vec(mp.clone()), sp.clone()).unwrap();
        let q = GaussianState::new(RealVector::from_vec(mq.clone()), sq.clone()).unwrap();
        let logpdf = |x: &RealVector, m: &[f64], s: &RealMatrix| {
            let d = x - RealVector::from_column_slice(m);
            let si = s.clone().try_inverse().unwrap();
            -0.5 * d.dot(&(si * &d)) - 0.5 * (4.0 * std::f64::consts::PI.powi(2) * s.determinant()).ln()
        };
        let l = sp.clone().cholesky().unwrap().l();
        let gh = GaussHermite::new(12);
        let num = gh.expect_tensor(2, |xi| {
            let x = RealVector::from_column_slice(&mp) + &l * RealVector::from_column_slice(xi);
            logpdf(&x, &mp, &sp) - logpdf(&x, &mq, &sq)
        });
        prop_assert!((gaussian_kl(&p, &q).unwrap() - num).abs() <= 1e-6);
    }

    #[test]
    fn quadratic_expectation_matches_monte_carlo(
        m in prop::collection::vec(-1.0..1.0f64, 3),
        s in spd(3),
        d in prop::collection::vec(-1.0..1.0f64, 9),
        e in prop::collection::vec(-1.0..1.0f64, 3),
        w in spd(3),
        seed in any::<u64>(),
    ) {
        let state = GaussianState::new(RealVector::from_vec(m), s.clone()).unwrap();
        let dm = RealMatrix::from_row_slice(3, 3, &d);
        let ev = RealVector::from_vec(e);
        let w = sym(&w);
        let exact = gaussian_quadratic_expectation(&state, &dm, &ev, &w).unwrap();
        let l = s.cholesky().unwrap().l();
        let vals: Vec<f64> = (0..20_000u64)
            .map(|i| {
                let mut rng = path_rng(seed, i);
                let mut xi = [0.0; 3];
                fill_normal(&mut rng, &mut xi);
                let z = &state.mean + &l * RealVector::from_column_slice(&xi);
                let v = &dm * z + &ev;
                v.dot(&(&w * &v))
            })
            .collect();
        let (mean, se) = mean_se(&vals);
        prop_assert!((mean - exact).abs() <= 4.0 * se, "mc {mean} ± {se}, exact {exact}");
    }
}
