//! Sufficient conditions for uniform curvature bounds `CD(−κ,∞)`, the
//! Itô–Kunita structural constants, and a synchronous-coupling falsifier.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lambda_min_sym, schur_complement, sqrt_psd, sym, RealMatrix};
use crate::ou::BlockMatrix;
use crate::sde::{coupled_energies, weighted_energy, DiffusionModel};
use crate::stats::mean_se;

/// Minimum eigenvalue that still counts as nonnegative.
pub const CD_TOL: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdVerdict {
    pub kappa: f64,
    pub satisfied: bool,
    pub worst_point: Option<Vec<f64>>,
    pub worst_eigenvalue: f64,
}

/// Evaluates `f` on every grid point in parallel and returns the minimum
/// together with the first point attaining it.
fn grid_min(
    grid: &[Vec<f64>],
    f: impl Fn(&[f64]) -> Result<f64> + Sync,
) -> Result<(f64, usize)> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let vals: Vec<f64> = grid
        .par_iter()
        .map(|z| f(z))
        .collect::<Result<_>>()?;
    let mut best = (f64::INFINITY, 0);
    for (i, v) in vals.into_iter().enumerate() {
        if v < best.0 || v.is_nan() {
            best = (v, i);
        }
    }
    Ok(best)
}

/// Constant-diffusion Ricci test: `λ_min(∇²V − Sym(∇F) + κA⁻¹) ≥ −1e-9`
/// at every grid point.
pub fn cd_constant_diffusion(
    hess_v: impl Fn(&[f64]) -> RealMatrix + Sync,
    jac_f: impl Fn(&[f64]) -> RealMatrix + Sync,
    a_inv: &RealMatrix,
    grid: &[Vec<f64>],
    kappa: f64,
) -> Result<CdVerdict> {
    if !(kappa >= 0.0) {
        return Err(Error::InvalidBounds(format!("kappa must be nonnegative, got {kappa}")));
    }
    if lambda_min_sym(a_inv) <= 0.0 {
        return Err(Error::SingularA { point: Vec::new() });
    }
    let (worst, idx) = grid_min(grid, |z| {
        let h = hess_v(z);
        let j = jac_f(z);
        if h.shape() != a_inv.shape() || j.shape() != a_inv.shape() {
            return Err(Error::dims("Hessian, Jacobian and A⁻¹ must share one shape"));
        }
        Ok(lambda_min_sym(&(h - sym(&j) + a_inv * kappa)))
    })?;
    Ok(CdVerdict {
        kappa,
        satisfied: worst >= CD_TOL,
        worst_point: Some(grid[idx].clone()),
        worst_eigenvalue: worst,
    })
}

/// Schur-type test for additive noise: with
/// `S = diag(a₁,a₂)^{1/2} Sym(−∇b) diag(a₁,a₂)^{1/2}`, requires `S₁₁ ≻ 0` and
/// returns the smallest `κ ≥ 0` with `λ_min(Schur(S₁₁)) ≥ −κ` on the grid.
/// The verdict's `worst_eigenvalue` is that minimum shifted by `κ`.
pub fn cd_schur_averaging(
    jacb: impl Fn(&[f64]) -> RealMatrix + Sync,
    a1: &RealMatrix,
    a2: &RealMatrix,
    grid: &[Vec<f64>],
) -> Result<(f64, CdVerdict)> {
    let dx = a1.nrows();
    let d = dx + a2.nrows();
    if lambda_min_sym(a1) <= 0.0 || lambda_min_sym(a2) <= 0.0 {
        return Err(Error::SingularA { point: Vec::new() });
    }
    let root = crate::linalg::block_diag(&sqrt_psd(a1), &sqrt_psd(a2));
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let (worst, idx) = grid_min(grid, |z| {
        let j = jacb(z);
        if j.nrows() != d || j.ncols() != d {
            return Err(Error::dims("drift Jacobian does not match a1, a2"));
        }
        let s = &root * sym(&(-j)) * &root;
        let s11 = s.view((0, 0), (dx, dx)).into_owned();
        let min11 = if dx == 0 { f64::INFINITY } else { lambda_min_sym(&s11) };
        if !(min11 > 0.0) {
            return Err(Error::FastBlockNotPD {
                point: z.to_vec(),
                min_eig: min11,
            });
        }
        Ok(lambda_min_sym(&schur_complement(&s, dx)?))
    })?;
    let kappa = (-worst).max(0.0);
    Ok((
        kappa,
        CdVerdict {
            kappa,
            satisfied: true,
            worst_point: Some(grid[idx].clone()),
            worst_eigenvalue: worst + kappa,
        },
    ))
}

/// `ρ = min{0, λ_min(Schur of Sym(B)₁₁ in Sym(B))}`; the OU family satisfies
/// `CD(ρ,∞)` uniformly in ε.
pub fn ou_cd_rho(b: &BlockMatrix) -> Result<f64> {
    let s = sym(b.matrix());
    let dx = b.dx();
    if dx > 0 {
        let min11 = lambda_min_sym(&s.view((0, 0), (dx, dx)).into_owned());
        if !(min11 > 0.0) {
            return Err(Error::FastBlockNotPD {
                point: Vec::new(),
                min_eig: min11,
            });
        }
    }
    let schur = schur_complement(&s, dx)?;
    Ok(lambda_min_sym(&schur).min(0.0))
}

/// Primitive bounds of the Itô–Kunita route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkbInputs {
    pub lambda1: f64,
    #[serde(rename = "Lambda1")]
    pub big_lambda1: f64,
    pub lambda2: f64,
    #[serde(rename = "Lambda2")]
    pub big_lambda2: f64,
    pub l_b1_x: f64,
    pub l_b1_y: f64,
    pub l_b2_x: f64,
    pub l_b2_y: f64,
    pub l_eta1_x: f64,
    pub l_eta1_y: f64,
    pub l_eta2_y: f64,
    pub l_bb1_x: f64,
    pub l_bb1_y: f64,
    pub l_bb2_y: f64,
    pub h1_inf: f64,
    pub h2_inf: f64,
    pub sup_lf_b1: f64,
    pub sup_ls_b1: f64,
    pub sup_m2: f64,
    pub k_x_w: f64,
    pub b_xy_w: f64,
    pub b_2x_w: f64,
    pub m_2y_w: f64,
    pub r1: u32,
}

impl Default for IkbInputs {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            big_lambda1: 1.0,
            lambda2: 1.0,
            big_lambda2: 1.0,
            l_b1_x: 0.0,
            l_b1_y: 0.0,
            l_b2_x: 0.0,
            l_b2_y: 0.0,
            l_eta1_x: 0.0,
            l_eta1_y: 0.0,
            l_eta2_y: 0.0,
            l_bb1_x: 0.0,
            l_bb1_y: 0.0,
            l_bb2_y: 0.0,
            h1_inf: 0.0,
            h2_inf: 0.0,
            sup_lf_b1: 0.0,
            sup_ls_b1: 0.0,
            sup_m2: 0.0,
            k_x_w: 0.0,
            b_xy_w: 0.0,
            b_2x_w: 0.0,
            m_2y_w: 0.0,
            r1: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IkbConstants {
    #[serde(flatten)]
    pub inputs: IkbInputs,
    pub c_1h: f64,
    pub c_1j: f64,
    pub c_2sigma: f64,
    pub c_lf_b1: f64,
    pub c_h: f64,
    pub c_j0: f64,
    pub c_cross: f64,
    pub c_x1: f64,
    pub c_y1: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub c: f64,
    pub d: f64,
    pub rho: f64,
    pub gap_holds: bool,
}

pub fn ikb_constants(p: &IkbInputs) -> Result<IkbConstants> {
    let nonneg = [
        ("lambda1", p.lambda1),
        ("Lambda1", p.big_lambda1),
        ("lambda2", p.lambda2),
        ("Lambda2", p.big_lambda2),
        ("l_b1_x", p.l_b1_x),
        ("l_b1_y", p.l_b1_y),
        ("l_b2_x", p.l_b2_x),
        ("l_b2_y", p.l_b2_y),
        ("l_eta1_x", p.l_eta1_x),
        ("l_eta1_y", p.l_eta1_y),
        ("l_eta2_y", p.l_eta2_y),
        ("l_bb1_x", p.l_bb1_x),
        ("l_bb1_y", p.l_bb1_y),
        ("l_bb2_y", p.l_bb2_y),
        ("h1_inf", p.h1_inf),
        ("h2_inf", p.h2_inf),
        ("sup_lf_b1", p.sup_lf_b1),
        ("sup_ls_b1", p.sup_ls_b1),
        ("sup_m2", p.sup_m2),
    ];
    for (name, v) in nonneg {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidBounds(format!("{name} must be finite and nonnegative, got {v}")));
        }
    }
    for (name, v) in [
        ("k_x_w", p.k_x_w),
        ("b_xy_w", p.b_xy_w),
        ("b_2x_w", p.b_2x_w),
        ("m_2y_w", p.m_2y_w),
    ] {
        if !v.is_finite() {
            return Err(Error::InvalidBounds(format!("{name} must be finite")));
        }
    }
    if !(p.lambda1 > 0.0 && p.lambda2 > 0.0) {
        return Err(Error::InvalidBounds("ellipticity lower bounds must be positive".into()));
    }
    if p.lambda1 > p.big_lambda1 || p.lambda2 > p.big_lambda2 {
        return Err(Error::InvalidBounds("need lambda ≤ Lambda for both blocks".into()));
    }
    if p.r1 == 0 {
        return Err(Error::InvalidBounds("r1 must be at least 1".into()));
    }

    let c_r1 = 2.0 * p.r1 as f64;
    let c_1h = 2.0 * p.big_lambda1 / p.lambda1 * p.l_eta1_x.powi(2);
    let c_1j = 2.0 * p.big_lambda2 / p.lambda1 * p.l_eta1_y.powi(2);
    let c_2sigma = 2.0 * p.big_lambda2 / p.lambda2 * p.l_eta2_y.powi(2);
    let c_lf_b1 = p.big_lambda1 * p.sup_lf_b1;
    let c_h = p.big_lambda1 * p.sup_ls_b1;
    let c_j0 = p.big_lambda2 * p.sup_m2;
    let c_cross = 2.0 * p.big_lambda2 / p.lambda2 * p.l_bb2_y.powi(2) * p.h2_inf.powi(2);
    let c_x1 = c_r1 * p.l_bb1_x * p.h1_inf * (p.l_eta1_x + 0.5 * p.l_eta1_y) * p.big_lambda1;
    let c_y1 = c_r1 * p.l_bb1_x * p.h1_inf * (0.5 * p.l_eta1_y) * p.big_lambda2;
    let alpha0 = 2.0 * p.k_x_w - (p.big_lambda1 * p.b_xy_w + c_1h + c_lf_b1 + c_x1);
    let beta0 = p.big_lambda2 * p.b_xy_w + c_1j + c_y1;
    let c = p.big_lambda1 * p.b_2x_w;
    let d = p.big_lambda2 * p.b_2x_w + 2.0 * p.m_2y_w + c_2sigma + c_j0 + c_cross;
    let rho = (beta0 + d) / 2.0;
    Ok(IkbConstants {
        inputs: *p,
        c_1h,
        c_1j,
        c_2sigma,
        c_lf_b1,
        c_h,
        c_j0,
        c_cross,
        c_x1,
        c_y1,
        alpha0,
        beta0,
        c,
        d,
        rho,
        gap_holds: alpha0 > c,
    })
}

/// Sup of an operator norm found by sampling a box grid. Not a bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupEstimate {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub note: &'static str,
}

pub fn estimate_sup_norm(
    f: impl Fn(&[f64]) -> RealMatrix + Sync,
    lower: &[f64],
    upper: &[f64],
    points_per_dim: usize,
) -> Result<SupEstimate> {
    if lower.len() != upper.len() || lower.is_empty() || points_per_dim < 2 {
        return Err(Error::InvalidBounds("box needs matching nonempty bounds and ≥ 2 points per axis".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::InvalidBounds("lower corner exceeds upper corner".into()));
    }
    let grid = box_grid(lower, upper, points_per_dim);
    let (neg, idx) = grid_min(&grid, |z| {
        let m = f(z);
        let sv = m.singular_values();
        Ok(-sv.iter().copied().fold(0.0, f64::max))
    })?;
    Ok(SupEstimate {
        value: -neg,
        argmax: grid[idx].clone(),
        note: "non-rigorous estimate",
    })
}

/// Tensor grid with `n` equispaced points per axis.
pub fn box_grid(lower: &[f64], upper: &[f64], n: usize) -> Vec<Vec<f64>> {
    let d = lower.len();
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut k| {
            (0..d)
                .map(|i| {
                    let j = k % n;
                    k /= n;
                    if n == 1 {
                        lower[i]
                    } else {
                        lower[i] + (upper[i] - lower[i]) * j as f64 / (n - 1) as f64
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncRow {
    pub pair: usize,
    pub t: f64,
    pub initial_energy: f64,
    pub mean_energy: f64,
    pub se: f64,
    pub bound: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncReport {
    pub growth: f64,
    pub rows: Vec<SyncRow>,
    pub max_ratio: f64,
    pub pass: bool,
}

/// Relative slack on the bound for floating-point rounding in deterministic cases.
pub const SYNC_ROUNDING_SLACK: f64 = 1e-9;

/// Synchronous-coupling test of `E[ΔᵀA(Z¹)⁻¹Δ] ≤ e^{2·growth·t}·initial`.
///
/// `growth` is the exponent in the bound: for `CD(−κ,∞)` it is `κ`, so an
/// OU family passes with `growth = −ou_cd_rho(B)`. The estimate at each
/// time passes when it stays below the bound inflated by three relative
/// standard errors.
pub fn sync_contraction_test(
    model: &DiffusionModel,
    pairs: &[(Vec<f64>, Vec<f64>)],
    times: &[f64],
    dt: f64,
    growth: f64,
    n_reps: usize,
    seed: u64,
) -> Result<SyncReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if n_reps < 2 {
        return Err(Error::InvalidBounds("need at least two replicas".into()));
    }
    let nt = times.len();
    let mut rows = Vec::with_capacity(pairs.len() * nt);
    for (p, (z1, z2)) in pairs.iter().enumerate() {
        let e0 = weighted_energy(model, z1, z2)?;
        let energies = coupled_energies(
            model,
            z1,
            z2,
            dt,
            times,
            n_reps,
            seed.wrapping_add((p as u64) << 32),
        )?;
        for (k, &t) in times.iter().enumerate() {
            let col: Vec<f64> = (0..n_reps).map(|r| energies[r * nt + k]).collect();
            let (mean, se) = mean_se(&col);
            let bound = (2.0 * growth * t).exp() * e0;
            let rel_se = if mean > 0.0 { se / mean } else { 0.0 };
            let allowed = bound * (1.0 + 3.0 * rel_se) * (1.0 + SYNC_ROUNDING_SLACK);
            let ratio = if bound > 0.0 {
                mean / bound
            } else if mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            rows.push(SyncRow {
                pair: p,
                t,
                initial_energy: e0,
                mean_energy: mean,
                se,
                bound,
                ratio,
                pass: mean <= allowed,
            });
        }
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let pass = rows.iter().all(|r| r.pass);
    Ok(SyncReport {
        growth,
        rows,
        max_ratio,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;

    fn line_grid(a: f64, b: f64, h: f64) -> Vec<Vec<f64>> {
        let n = ((b - a) / h).round() as usize;
        (0..=n).map(|i| vec![a + i as f64 * h]).collect()
    }

    #[test]
    fn convex_quadratic_passes() {
        let id = RealMatrix::identity(2, 2);
        let v = cd_constant_diffusion(
            |_| RealMatrix::identity(2, 2),
            |_| RealMatrix::zeros(2, 2),
            &id,
            &[vec![0.0, 0.0], vec![1.0, -1.0]],
            0.0,
        )
        .unwrap();
        assert!(v.satisfied);
        assert!((v.worst_eigenvalue - 1.0).abs() < 1e-14);
    }

    #[test]
    fn double_well() {
        let grid = line_grid(-2.0, 2.0, 0.01);
        let hess = |z: &[f64]| RealMatrix::from_element(1, 1, 3.0 * z[0] * z[0] - 1.0);
        let jac = |_: &[f64]| RealMatrix::zeros(1, 1);
        let one = RealMatrix::identity(1, 1);
        assert!(cd_constant_diffusion(hess, jac, &one, &grid, 1.0).unwrap().satisfied);
        let v = cd_constant_diffusion(hess, jac, &one, &grid, 0.5).unwrap();
        assert!(!v.satisfied);
        assert!(v.worst_point.unwrap()[0].abs() < 1e-12);
        assert!((v.worst_eigenvalue + 0.5).abs() < 1e-12);
        assert!(matches!(
            cd_constant_diffusion(hess, jac, &one, &[], 1.0),
            Err(Error::EmptyGrid)
        ));
    }

    #[test]
    fn schur_averaging_examples() {
        let a = RealMatrix::identity(1, 1);
        let grid = vec![vec![0.0, 0.0]];
        let (k, _) = cd_schur_averaging(|_| -RealMatrix::identity(2, 2), &a, &a, &grid).unwrap();
        assert_eq!(k, 0.0);
        let b = from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (k, v) = cd_schur_averaging(|_| -b.clone(), &a, &a, &grid).unwrap();
        assert_eq!(k, 0.0);
        assert!((v.worst_eigenvalue - 1.5).abs() < 1e-14);
        let b = from_rows(&[vec![2.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let (k, v) = cd_schur_averaging(|_| -b.clone(), &a, &a, &grid).unwrap();
        assert!((k - 1.0).abs() < 1e-14);
        assert!(v.satisfied && v.worst_eigenvalue.abs() < 1e-14);
        let bad = from_rows(&[vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            cd_schur_averaging(|_| -bad.clone(), &a, &a, &grid),
            Err(Error::FastBlockNotPD { .. })
        ));
    }

    #[test]
    fn ou_rho_examples() {
        let mk = |r: &[Vec<f64>]| BlockMatrix::unchecked(from_rows(r).unwrap(), 1).unwrap();
        assert_eq!(ou_cd_rho(&mk(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap(), 0.0);
        assert_eq!(ou_cd_rho(&mk(&[vec![2.0, 1.0], vec![1.0, 2.0]])).unwrap(), 0.0);
        let r = ou_cd_rho(&mk(&[vec![2.0, 2.0], vec![2.0, 1.0]])).unwrap();
        assert!((r + 1.0).abs() < 1e-14);
    }

    #[test]
    fn ikb_validation() {
        let mut p = IkbInputs::default();
        p.lambda1 = 2.0;
        assert!(ikb_constants(&p).is_err());
        let mut p = IkbInputs::default();
        p.l_b1_x = -1.0;
        assert!(ikb_constants(&p).is_err());
        let mut p = IkbInputs::default();
        p.k_x_w = -3.0;
        assert!(ikb_constants(&p).is_ok());
    }

    #[test]
    fn sup_estimate_on_box() {
        let e = estimate_sup_norm(
            |z| RealMatrix::from_element(1, 1, z[0] * z[1]),
            &[-1.0, -2.0],
            &[1.0, 2.0],
            5,
        )
        .unwrap();
        assert!((e.value - 2.0).abs() < 1e-14);
        assert_eq!(e.note, "non-rigorous estimate");
    }
}
