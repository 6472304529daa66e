use proptest::prelude::*;
use thermoconv::linalg::{RealMatrix, RealVector};
use thermoconv::models::averaging::{hk_gap_mc, locking_gap_quadrature, make_averaging_demo, sigma_hk_mc};
use thermoconv::models::stiff::{stiff_concentration, stiff_phase_map, Potential, StiffModel};
use thermoconv::rng::path_rng;

fn stiff_model() -> impl Strategy<Value = StiffModel> {
    (1..=2usize, 1..=2usize)
        .prop_flat_map(|(dx, dy)| {
            (
                prop::collection::vec(-2.0..2.0f64, dx * dy),
                prop::collection::vec(-1.0..1.0f64, dx),
                Just((dx, dy)),
            )
        })
        .prop_map(|(h, b, (dx, dy))| {
            StiffModel::new(
                RealMatrix::from_row_slice(dx, dy, &h),
                RealVector::from_vec(b),
                RealMatrix::identity(dx, dx),
                Potential::Quadratic {
                    hess: RealMatrix::identity(dx + dy, dx + dy),
                    lin: RealVector::zeros(dx + dy),
                },
                0.1,
            )
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phase_map_inverts_the_embedding(m in stiff_model(), u in prop::collection::vec(-5.0..5.0f64, 2)) {
        let u = &u[..m.dy];
        let back = stiff_phase_map(&m, &m.embed(u));
        for (a, b) in back.iter().zip(u) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        prop_assert!(m.residual(&m.embed(u)).norm() <= 1e-12);
    }
}

fn stationary_states(alpha: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let m = make_averaging_demo(alpha);
    let s = m.stationary.clone().unwrap();
    (0..n).map(|i| s(&mut path_rng(seed, i as u64))).collect()
}

#[test]
fn demo_housekeeping_at_stationarity() {
    for alpha in [0.0, 0.5, 1.0] {
        let model = make_averaging_demo(alpha);
        let dm = model.diffusion_model(0.05).unwrap();
        let states = stationary_states(alpha, 50_000, 3);
        let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let (m, se) = sigma_hk_mc(&dm, &refs).unwrap();
        let want = 2.0 * (1.0 + alpha * alpha);
        assert!((m - want).abs() <= 3.0 * se, "alpha {alpha}: {m} ± {se}");
        let (gap, gse) = hk_gap_mc(&model, &refs, 12).unwrap();
        assert!(gap >= -3.0 * gse - 1e-12);
    }
}

#[test]
fn locking_gap_vanishes_only_without_coupling() {
    let zero = locking_gap_quadrature(&make_averaging_demo(0.0), 7.0, 0.1, 12).unwrap();
    assert!(zero.abs() < 1e-12);
    for alpha in [0.1, 0.5] {
        let g = locking_gap_quadrature(&make_averaging_demo(alpha), 7.0, 0.1, 12).unwrap();
        assert!((g - 2.0 * alpha * alpha).abs() < 1e-6, "alpha {alpha}: {g}");
    }
    assert!(locking_gap_quadrature(&make_averaging_demo(0.5), 2.0, 0.1, 12).is_err());
}

#[test]
fn stiff_demo_residual_law() {
    for (k, eps) in [0.3, 0.1, 0.03].into_iter().enumerate() {
        let m = StiffModel::scalar_demo(1.0, eps).unwrap();
        let r = stiff_concentration(&m, 40_000, k as u64).unwrap();
        let scale = (1.0 + 2.0 / (eps * eps)) / 2.0;
        assert!((r.mean_sq_residual * scale - 1.0).abs() <= 3.0 * r.mean_sq_residual_se * scale);
        assert!(!r.approximate);
    }
}

#[test]
fn double_well_uses_langevin_and_concentrates() {
    let coarse = stiff_concentration(&StiffModel::double_well(0.3).unwrap(), 400, 1).unwrap();
    let fine = stiff_concentration(&StiffModel::double_well(0.1).unwrap(), 400, 1).unwrap();
    assert!(coarse.approximate && fine.approximate);
    assert!(fine.mean_sq_residual < coarse.mean_sq_residual);
}
