//! Dense linear-algebra kernels shared by every other module.
//!
//! Everything here is a pure function over small matrices (a few dozen
//! rows at most): Lyapunov solves by Kronecker vectorisation, a
//! scaling-and-squaring matrix exponential, spectral stability tests,
//! Schur complements and closed-form Gaussian integrals.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, LU};

use crate::error::{Error, Result};

pub type RealMatrix = DMatrix<f64>;
pub type RealVector = DVector<f64>;

/// Real parts must exceed this margin for a matrix to count as positively stable.
pub const STABILITY_MARGIN: f64 = 1e-12;

/// `expm` is accurate to ~1e-10 relative for `‖Mt‖₁ ≤ 50`; arguments with
/// `‖Mt‖₁` above this limit are refused.
pub const EXPM_MAX_NORM: f64 = 1e6;

/// Condition-number ceiling for the leading block in [`schur_complement`].
pub const MAX_BLOCK_CONDITION: f64 = 1e12;

/// A Gaussian law `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: RealVector,
    pub cov: RealMatrix,
}

impl GaussianState {
    /// Validates symmetry (1e-12 relative) and positive semidefiniteness
    /// (eigenvalues ≥ −1e-12·‖cov‖), then stores the symmetrised covariance.
    pub fn new(mean: RealVector, cov: RealMatrix) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::dims(format!(
                "mean has length {d} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::SingularCovariance);
        }
        let scale = cov.norm().max(f64::MIN_POSITIVE);
        if (&cov - cov.transpose()).norm() > 1e-12 * scale.max(1.0) {
            return Err(Error::SingularCovariance);
        }
        let cov = sym(&cov);
        if d > 0 && lambda_min_sym(&cov) < -1e-12 * scale {
            return Err(Error::SingularCovariance);
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal on the coordinates `start..start+len`.
    pub fn marginal(&self, start: usize, len: usize) -> GaussianState {
        GaussianState {
            mean: self.mean.rows(start, len).into_owned(),
            cov: self.cov.view((start, start), (len, len)).into_owned(),
        }
    }
}

/// Symmetric part `(M + Mᵀ)/2`.
pub fn sym(m: &RealMatrix) -> RealMatrix {
    (m + m.transpose()) * 0.5
}

pub fn check_square(m: &RealMatrix, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::dims(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Smallest real part over the spectrum of a square matrix.
pub fn min_real_eigenvalue(m: &RealMatrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min)
}

/// True iff every eigenvalue of `m` has real part larger than [`STABILITY_MARGIN`].
pub fn is_positively_stable(m: &RealMatrix) -> bool {
    m.is_square() && min_real_eigenvalue(m) > STABILITY_MARGIN
}

pub fn lambda_min_sym(m: &RealMatrix) -> f64 {
    SymmetricEigen::new(sym(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn lambda_max_sym(m: &RealMatrix) -> f64 {
    SymmetricEigen::new(sym(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Principal square root of a symmetric positive semidefinite matrix
/// (negative eigenvalues from round-off are clamped to zero).
pub fn sqrt_psd(m: &RealMatrix) -> RealMatrix {
    let eig = SymmetricEigen::new(sym(m));
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * RealMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn inv_spd(m: &RealMatrix) -> Result<RealMatrix> {
    let ch = Cholesky::new(sym(m)).ok_or(Error::SingularCovariance)?;
    Ok(sym(&ch.inverse()))
}

pub fn inv(m: &RealMatrix) -> Result<RealMatrix> {
    check_square(m, "matrix")?;
    m.clone()
        .try_inverse()
        .ok_or(Error::SingularBlock { cond: f64::INFINITY })
}

/// 2-norm condition number from singular values.
pub fn condition_number(m: &RealMatrix) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn norm1(m: &RealMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `MΣ + ΣMᵀ = Q` through the `n² × n²` Kronecker system
/// `(I⊗M + M⊗I) vec Σ = vec Q`. The result is symmetrised.
pub fn solve_lyapunov(m: &RealMatrix, q: &RealMatrix) -> Result<RealMatrix> {
    let n = check_square(m, "M")?;
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::dims(format!(
            "Q is {}x{} but M is {n}x{n}",
            q.nrows(),
            q.ncols()
        )));
    }
    let min_real = min_real_eigenvalue(m);
    if min_real <= STABILITY_MARGIN {
        return Err(Error::NotStable { min_real });
    }
    let nn = n * n;
    let mut kron = RealMatrix::zeros(nn, nn);
    // column-major vec: entry (i, j) of Σ sits at j*n + i
    for j in 0..n {
        for i in 0..n {
            let row = j * n + i;
            for k in 0..n {
                kron[(row, j * n + k)] += m[(i, k)];
                kron[(row, k * n + i)] += m[(j, k)];
            }
        }
    }
    let rhs = RealVector::from_iterator(nn, q.iter().copied());
    let sol = LU::<f64, Dyn, Dyn>::new(kron)
        .solve(&rhs)
        .ok_or(Error::NotStable { min_real })?;
    let sigma = RealMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(sym(&sigma))
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// `e^{Mt}` by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(m: &RealMatrix, t: f64) -> Result<RealMatrix> {
    let n = check_square(m, "M")?;
    if !t.is_finite() {
        return Err(Error::Overflow {
            norm: f64::INFINITY,
            limit: EXPM_MAX_NORM,
        });
    }
    let a = m * t;
    let norm = norm1(&a);
    if !norm.is_finite() || norm > EXPM_MAX_NORM {
        return Err(Error::Overflow {
            norm,
            limit: EXPM_MAX_NORM,
        });
    }
    let id = RealMatrix::identity(n, n);
    if norm == 0.0 {
        return Ok(id);
    }
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-s);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = LU::<f64, Dyn, Dyn>::new(q)
        .solve(&p)
        .ok_or(Error::Overflow {
            norm,
            limit: EXPM_MAX_NORM,
        })?;
    for _ in 0..s {
        r = &r * &r;
    }
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::Overflow {
            norm,
            limit: EXPM_MAX_NORM,
        });
    }
    Ok(r)
}

/// `S₂₂ − S₂₁ S₁₁⁻¹ S₁₂` where `S₁₁` is the leading `split × split` block.
pub fn schur_complement(s: &RealMatrix, split: usize) -> Result<RealMatrix> {
    let n = check_square(s, "S")?;
    if split > n {
        return Err(Error::dims(format!("split {split} exceeds dimension {n}")));
    }
    let m = n - split;
    let s11 = s.view((0, 0), (split, split)).into_owned();
    let s12 = s.view((0, split), (split, m)).into_owned();
    let s21 = s.view((split, 0), (m, split)).into_owned();
    let s22 = s.view((split, split), (m, m)).into_owned();
    if split == 0 {
        return Ok(s22);
    }
    let cond = condition_number(&s11);
    if !(cond < MAX_BLOCK_CONDITION) {
        return Err(Error::SingularBlock { cond });
    }
    let x = LU::<f64, Dyn, Dyn>::new(s11)
        .solve(&s12)
        .ok_or(Error::SingularBlock { cond })?;
    Ok(s22 - s21 * x)
}

/// `KL(p ‖ q)` in nats for two nondegenerate Gaussians.
pub fn gaussian_kl(p: &GaussianState, q: &GaussianState) -> Result<f64> {
    let d = p.dim();
    if q.dim() != d {
        return Err(Error::dims(format!(
            "KL between dimensions {d} and {}",
            q.dim()
        )));
    }
    let cp = Cholesky::new(p.cov.clone()).ok_or(Error::SingularCovariance)?;
    let cq = Cholesky::new(q.cov.clone()).ok_or(Error::SingularCovariance)?;
    let logdet = |c: &Cholesky<f64, Dyn>| -> f64 {
        2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    };
    let trace = cq.solve(&p.cov).trace();
    let dm = &q.mean - &p.mean;
    let maha = dm.dot(&cq.solve(&dm));
    let kl = 0.5 * (trace + maha - d as f64 + logdet(&cq) - logdet(&cp));
    Ok(kl.max(0.0))
}

/// `E[(Dz + e)ᵀ W (Dz + e)]` for `z ~ state`, i.e.
/// `tr(W D S Dᵀ) + (Dm + e)ᵀ W (Dm + e)`.
pub fn gaussian_quadratic_expectation(
    state: &GaussianState,
    d: &RealMatrix,
    e: &RealVector,
    w: &RealMatrix,
) -> Result<f64> {
    let k = d.nrows();
    if d.ncols() != state.dim() || e.len() != k || w.nrows() != k || w.ncols() != k {
        return Err(Error::dims(format!(
            "D is {}x{}, e has {} entries, W is {}x{}, state dim {}",
            d.nrows(),
            d.ncols(),
            e.len(),
            w.nrows(),
            w.ncols(),
            state.dim()
        )));
    }
    let mean = d * &state.mean + e;
    let cov_part = (w * d * &state.cov * d.transpose()).trace();
    Ok(cov_part + mean.dot(&(w * &mean)))
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(a: &RealMatrix, b: &RealMatrix) -> RealMatrix {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = RealMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((n, n), (m, m)).copy_from(b);
    out
}

/// Builds a matrix from row-major nested rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<RealMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::dims("ragged matrix rows"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidBounds("non-finite matrix entry".into()));
    }
    Ok(RealMatrix::from_row_iterator(
        r,
        c,
        rows.iter().flatten().copied(),
    ))
}

pub fn to_rows(m: &RealMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> RealMatrix {
        RealMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    #[test]
    fn lyapunov_identity_and_diagonal() {
        let id = RealMatrix::identity(2, 2);
        let s = solve_lyapunov(&id, &(&id * 2.0)).unwrap();
        assert!((s - &id).norm() < 1e-14);

        let s = solve_lyapunov(&m2(2.0, 0.0, 0.0, 5.0), &(&id * 2.0)).unwrap();
        assert!((s - m2(0.5, 0.0, 0.0, 0.2)).norm() < 1e-14);
    }

    #[test]
    fn lyapunov_scaled_symmetric_gives_inverse() {
        let b = m2(2.0, 1.0, 1.0, 2.0);
        let ie = RealMatrix::from_diagonal(&RealVector::from_vec(vec![10.0, 1.0]));
        let s = solve_lyapunov(&(&ie * &b), &(&ie * 2.0)).unwrap();
        let expected = m2(2.0, -1.0, -1.0, 2.0) / 3.0;
        assert!((&s - expected).norm() < 1e-12);
        let m = &ie * &b;
        let res = &m * &s + &s * m.transpose() - &ie * 2.0;
        assert!(res.norm() < 1e-12);
    }

    #[test]
    fn lyapunov_rejects_unstable_and_bad_dims() {
        let q = RealMatrix::identity(2, 2);
        assert!(matches!(
            solve_lyapunov(&m2(0.0, 1.0, -1.0, 0.0), &q),
            Err(Error::NotStable { .. })
        ));
        assert!(matches!(
            solve_lyapunov(&RealMatrix::identity(3, 3), &q),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn expm_closed_forms() {
        let z = RealMatrix::zeros(2, 2);
        assert_eq!(expm(&z, 3.0).unwrap(), RealMatrix::identity(2, 2));

        let nil = m2(0.0, 1.0, 0.0, 0.0);
        for t in [0.5, 2.0, 7.0] {
            let e = expm(&nil, t).unwrap();
            assert!((e - m2(1.0, t, 0.0, 1.0)).norm() < 1e-13);
        }

        let e = expm(&m2(-1.0, 0.0, 0.0, -3.0), 1.0).unwrap();
        assert!((e[(0, 0)] - (-1f64).exp()).abs() < 1e-15);
        assert!((e[(1, 1)] - (-3f64).exp()).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn expm_rotation_and_overflow() {
        let rot = m2(0.0, -1.0, 1.0, 0.0);
        let e = expm(&rot, 1.3).unwrap();
        let (c, s) = (1.3f64.cos(), 1.3f64.sin());
        assert!((e - m2(c, -s, s, c)).norm() < 1e-13);
        assert!(matches!(
            expm(&RealMatrix::identity(2, 2), 1e7),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn stability_examples() {
        assert!(is_positively_stable(&RealMatrix::identity(2, 2)));
        assert!(!is_positively_stable(&m2(0.0, 1.0, -1.0, 0.0)));
        assert!(is_positively_stable(&m2(2.0, 1.0, 0.0, 1.0)));
        assert!(!is_positively_stable(&m2(1e-13, 0.0, 0.0, 1.0)));
    }

    #[test]
    fn schur_examples() {
        let bd = block_diag(&m2(3.0, 1.0, 1.0, 4.0), &m2(5.0, 0.5, 0.5, 6.0));
        let s = schur_complement(&bd, 2).unwrap();
        assert!((s - m2(5.0, 0.5, 0.5, 6.0)).norm() < 1e-14);
        let s = schur_complement(&m2(2.0, 1.0, 1.0, 2.0), 1).unwrap();
        assert!((s[(0, 0)] - 1.5).abs() < 1e-15);
        let s = schur_complement(&m2(2.0, 2.0, 2.0, 1.0), 1).unwrap();
        assert!((s[(0, 0)] + 1.0).abs() < 1e-15);
        assert!(matches!(
            schur_complement(&m2(0.0, 1.0, 1.0, 1.0), 1),
            Err(Error::SingularBlock { .. })
        ));
    }

    #[test]
    fn kl_examples() {
        let std1 = |m: f64, v: f64| {
            GaussianState::new(RealVector::from_vec(vec![m]), m2(v, 0.0, 0.0, 0.0).view((0, 0), (1, 1)).into_owned()).unwrap()
        };
        let id = GaussianState::new(RealVector::zeros(2), RealMatrix::identity(2, 2)).unwrap();
        assert_eq!(gaussian_kl(&id, &id).unwrap(), 0.0);
        assert!((gaussian_kl(&std1(1.0, 1.0), &std1(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let expected = 0.5 * (2.0 - 1.0 - 2f64.ln());
        assert!((gaussian_kl(&std1(0.0, 2.0), &std1(0.0, 1.0)).unwrap() - expected).abs() < 1e-15);
        let degenerate = GaussianState::new(RealVector::zeros(2), RealMatrix::zeros(2, 2)).unwrap();
        assert!(matches!(
            gaussian_kl(&degenerate, &id),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn quadratic_expectation_examples() {
        let id = GaussianState::new(RealVector::zeros(2), RealMatrix::identity(2, 2)).unwrap();
        let w = RealMatrix::identity(2, 2);
        let e = RealVector::zeros(2);
        assert_eq!(
            gaussian_quadratic_expectation(&id, &RealMatrix::zeros(2, 2), &e, &w).unwrap(),
            0.0
        );
        assert_eq!(gaussian_quadratic_expectation(&id, &w, &e, &w).unwrap(), 2.0);
        let st = GaussianState::new(
            RealVector::from_vec(vec![1.0, 0.0]),
            m2(2.0, 0.0, 0.0, 3.0),
        )
        .unwrap();
        assert!((gaussian_quadratic_expectation(&st, &w, &e, &w).unwrap() - 6.0).abs() < 1e-14);
        assert!(gaussian_quadratic_expectation(&st, &RealMatrix::identity(3, 3), &e, &w).is_err());
    }

    #[test]
    fn gaussian_state_validation() {
        assert!(GaussianState::new(RealVector::zeros(2), m2(1.0, 0.5, 0.4, 1.0)).is_err());
        assert!(GaussianState::new(RealVector::zeros(2), m2(1.0, 0.0, 0.0, -1.0)).is_err());
        assert!(GaussianState::new(RealVector::zeros(3), RealMatrix::identity(2, 2)).is_err());
    }
}
