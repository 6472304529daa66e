//! Slow–fast averaging model with an irreversible slow drift
//!
//! `dX = −ε⁻¹a₁∇ₓV dt + √(2ε⁻¹a₁) dW`, `dY = (−a₂∇_yV + γ_y) dt + √(2a₂) dW'`,
//!
//! whose invariant law is `π ∝ e^{−V}` for every ε whenever
//! `∇_y·(e^{−V}γ_y) = 0`.

use std::sync::Arc;

use nalgebra::Cholesky;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{block_diag, sqrt_psd, RealMatrix, RealVector};
use crate::quadrature::GaussHermite;
use crate::rng::{fill_normal, PathRng};
use crate::sde::{DiffusionModel, VecField};
use crate::stats::mean_se;

pub type FastMatrix = Arc<dyn Fn(&[f64], &[f64]) -> RealMatrix + Send + Sync>;
pub type SlowMatrix = Arc<dyn Fn(&[f64]) -> RealMatrix + Send + Sync>;
pub type Scalar = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type SplitField = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Fibre law `μ^y = N(mean, LLᵀ)` given as `y ↦ (mean, L)`.
pub type GaussianFibre = Arc<dyn Fn(&[f64]) -> (RealVector, RealMatrix) + Send + Sync>;
pub type Sampler = Arc<dyn Fn(&mut PathRng) -> Vec<f64> + Send + Sync>;

/// Largest tolerated `|∇·(e^{−V}γ)|e^{V}` on the verification grid.
pub const DIVERGENCE_TOL: f64 = 1e-6;

#[derive(Clone)]
pub struct AveragingModel {
    pub dx: usize,
    pub dy: usize,
    pub a1: FastMatrix,
    pub a2: SlowMatrix,
    pub v: Scalar,
    /// Writes `∇V(x, y)` (length `dx + dy`).
    pub grad_v: SplitField,
    /// Writes `γ_y(x, y)` (length `dy`).
    pub gamma_y: SplitField,
    pub constant_diffusion: bool,
    /// Fibre laws, when known in closed form.
    pub fibre: Option<GaussianFibre>,
    /// Density of the slow marginal `π̄`, when known.
    pub slow_density: Option<Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>>,
    /// Exact sampler for `π`, when available.
    pub stationary: Option<Sampler>,
    pub alpha: Option<f64>,
    divergence_verified: bool,
}

impl std::fmt::Debug for AveragingModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AveragingModel")
            .field("dx", &self.dx)
            .field("dy", &self.dy)
            .field("alpha", &self.alpha)
            .field("divergence_verified", &self.divergence_verified)
            .finish()
    }
}

fn split(z: &[f64], dx: usize) -> (&[f64], &[f64]) {
    z.split_at(dx)
}

impl AveragingModel {
    /// A user-defined model. It cannot be simulated until
    /// [`verify_divergence`](Self::verify_divergence) succeeds.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        dx: usize,
        dy: usize,
        a1: FastMatrix,
        a2: SlowMatrix,
        v: Scalar,
        grad_v: SplitField,
        gamma_y: SplitField,
        constant_diffusion: bool,
    ) -> Self {
        Self {
            dx,
            dy,
            a1,
            a2,
            v,
            grad_v,
            gamma_y,
            constant_diffusion,
            fibre: None,
            slow_density: None,
            stationary: None,
            alpha: None,
            divergence_verified: false,
        }
    }

    pub fn divergence_verified(&self) -> bool {
        self.divergence_verified
    }

    /// Central-difference check of `∇_y·γ_y − γ_y·∇_yV = 0` on full-state grid points.
    pub fn verify_divergence(&mut self, grid: &[Vec<f64>]) -> Result<f64> {
        if grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let (dx, dy) = (self.dx, self.dy);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut g = vec![0.0; dy];
        let mut gp = vec![0.0; dy];
        let mut gm = vec![0.0; dy];
        let mut grad = vec![0.0; dx + dy];
        for z in grid {
            if z.len() != dx + dy {
                return Err(Error::dims("divergence grid point has wrong dimension"));
            }
            let (x, y) = split(z, dx);
            (self.gamma_y)(x, y, &mut g);
            (self.grad_v)(x, y, &mut grad);
            let mut div = 0.0;
            let mut yp = y.to_vec();
            for k in 0..dy {
                yp[k] = y[k] + h;
                (self.gamma_y)(x, &yp, &mut gp);
                yp[k] = y[k] - h;
                (self.gamma_y)(x, &yp, &mut gm);
                yp[k] = y[k];
                div += (gp[k] - gm[k]) / (2.0 * h);
            }
            let transport: f64 = (0..dy).map(|k| g[k] * grad[dx + k]).sum();
            worst = worst.max((div - transport).abs());
        }
        if worst > DIVERGENCE_TOL {
            return Err(Error::DivergenceCheck { residual: worst });
        }
        self.divergence_verified = true;
        Ok(worst)
    }

    /// Slow thermodynamic force `a₂⁻¹γ_y`.
    pub fn slow_force(&self, x: &[f64], y: &[f64]) -> Result<RealVector> {
        let mut g = vec![0.0; self.dy];
        (self.gamma_y)(x, y, &mut g);
        let a2 = (self.a2)(y);
        let ch = Cholesky::new(a2).ok_or_else(|| Error::SingularA {
            point: x.iter().chain(y).copied().collect(),
        })?;
        Ok(ch.solve(&RealVector::from_vec(g)))
    }

    /// `F̄(y) = a₂⁻¹E_{μ^y}[γ_y(·, y)]` by Gauss–Hermite over the fibre.
    pub fn averaged_force(&self, y: &[f64], gh: &GaussHermite) -> Result<RealVector> {
        let fibre = self
            .fibre
            .as_ref()
            .ok_or_else(|| Error::config("model.fibre", "fibre laws are not known for this model"))?;
        let (mean, l) = fibre(y);
        let (dx, dy) = (self.dx, self.dy);
        let mut acc = vec![0.0; dy];
        let mut g = vec![0.0; dy];
        let mut x = vec![0.0; dx];
        for k in 0..dy {
            acc[k] = gh.expect_tensor(dx, |xi| {
                for i in 0..dx {
                    x[i] = mean[i] + (0..dx).map(|j| l[(i, j)] * xi[j]).sum::<f64>();
                }
                (self.gamma_y)(&x, y, &mut g);
                g[k]
            });
        }
        if acc.iter().any(|v| !v.is_finite()) {
            return Err(Error::QuadratureDivergence { estimate: f64::INFINITY });
        }
        let a2 = (self.a2)(y);
        let ch = Cholesky::new(a2).ok_or_else(|| Error::SingularA { point: y.to_vec() })?;
        Ok(ch.solve(&RealVector::from_vec(acc)))
    }

    /// The ε-member as a simulable diffusion. Requires constant `a₁, a₂`
    /// and a verified divergence-free γ.
    pub fn diffusion_model(&self, eps: f64) -> Result<DiffusionModel> {
        if !self.divergence_verified {
            return Err(Error::config(
                "model.gamma",
                "custom γ must pass the divergence check before simulation",
            ));
        }
        if !self.constant_diffusion {
            return Err(Error::config(
                "model.a",
                "simulation supports constant a1, a2 only",
            ));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidBounds(format!("eps must be positive, got {eps}")));
        }
        let (dx, dy) = (self.dx, self.dy);
        let d = dx + dy;
        let a1 = (self.a1)(&vec![0.0; dx], &vec![0.0; dy]) / eps;
        let a2 = (self.a2)(&vec![0.0; dy]);
        let a = block_diag(&a1, &a2);
        let sig = sqrt_psd(&(&a * 2.0));
        let sig_rows: Vec<f64> = sig.transpose().iter().copied().collect();
        let grad_v = self.grad_v.clone();
        let gamma_y = self.gamma_y.clone();
        let am = a.clone();
        let drift: VecField = Arc::new(move |z, out| {
            let mut grad = [0.0; 16];
            let mut g = [0.0; 16];
            let (x, y) = z.split_at(dx);
            grad_v(x, y, &mut grad[..d]);
            gamma_y(x, y, &mut g[..dy]);
            for i in 0..d {
                let mut v = -(0..d).map(|j| am[(i, j)] * grad[j]).sum::<f64>();
                if i >= dx {
                    v += g[i - dx];
                }
                out[i] = v;
            }
        });
        if d > 16 {
            return Err(Error::dims("averaging models are limited to 16 coordinates"));
        }
        let noise: VecField = Arc::new(move |_, out| out.copy_from_slice(&sig_rows));
        let gy = self.gamma_y.clone();
        let gamma: VecField = Arc::new(move |z, out| {
            let (x, y) = z.split_at(dx);
            out[..dx].iter_mut().for_each(|v| *v = 0.0);
            gy(x, y, &mut out[dx..]);
        });
        let aa = a.clone();
        Ok(DiffusionModel::new(d, d, drift, noise, Arc::new(move |_| aa.clone()))
            .with_gamma(gamma)
            .with_fast(dx, eps))
    }
}

/// `V = (x² + |y|²)/2`, `a₁ = a₂ = I`, `γ_y = (1 + αx)Jy` with `J` the
/// quarter rotation, `dx = 1`, `dy = 2`. `Jy ⟂ ∇_yV` and `∇_y·(Jy) = 0`, so
/// `π = N(0, I₃)` for every ε.
pub fn make_averaging_demo(alpha: f64) -> AveragingModel {
    let gamma_y: SplitField = Arc::new(move |x, y, out| {
        let s = 1.0 + alpha * x[0];
        out[0] = -s * y[1];
        out[1] = s * y[0];
    });
    let grad_v: SplitField = Arc::new(|x, y, out| {
        out[0] = x[0];
        out[1] = y[0];
        out[2] = y[1];
    });
    let mut m = AveragingModel::custom(
        1,
        2,
        Arc::new(|_, _| RealMatrix::identity(1, 1)),
        Arc::new(|_| RealMatrix::identity(2, 2)),
        Arc::new(|x, y| 0.5 * (x[0] * x[0] + y[0] * y[0] + y[1] * y[1])),
        grad_v,
        gamma_y,
        true,
    );
    m.fibre = Some(Arc::new(|_| (RealVector::zeros(1), RealMatrix::identity(1, 1))));
    m.slow_density = Some(Arc::new(|y| {
        (-0.5 * (y[0] * y[0] + y[1] * y[1])).exp() / (2.0 * std::f64::consts::PI)
    }));
    m.stationary = Some(Arc::new(|rng| {
        let mut z = vec![0.0; 3];
        fill_normal(rng, &mut z);
        z
    }));
    m.alpha = Some(alpha);
    m.divergence_verified = true;
    m
}

/// Monte Carlo housekeeping rate `E[γᵀA⁻¹γ]` over the given states.
pub fn sigma_hk_mc(model: &DiffusionModel, states: &[&[f64]]) -> Result<(f64, f64)> {
    let Some(gamma) = model.gamma.as_ref() else {
        return Ok((0.0, 0.0));
    };
    let vals: Vec<f64> = states
        .par_iter()
        .map(|z| -> Result<f64> {
            let mut g = vec![0.0; model.dim];
            gamma(z, &mut g);
            let a = (model.diffusion)(z);
            let ch = Cholesky::new(a).ok_or_else(|| Error::SingularA { point: z.to_vec() })?;
            let gv = RealVector::from_vec(g);
            Ok(gv.dot(&ch.solve(&gv)))
        })
        .collect::<Result<_>>()?;
    Ok(mean_se(&vals))
}

/// Paired Monte Carlo estimate of `σ_hk,ss − σ̄_hk,ss` from states of `π`:
/// the per-sample difference `|F_y|²_{a₂} − |F̄(y)|²_{a₂}`.
pub fn hk_gap_mc(model: &AveragingModel, states: &[&[f64]], gh_order: usize) -> Result<(f64, f64)> {
    let gh = GaussHermite::new(gh_order);
    let dx = model.dx;
    let vals: Vec<f64> = states
        .par_iter()
        .map(|z| -> Result<f64> {
            let (x, y) = z.split_at(dx);
            let a2 = (model.a2)(y);
            let f = model.slow_force(x, y)?;
            let fb = model.averaged_force(y, &gh)?;
            Ok(f.dot(&(&a2 * &f)) - fb.dot(&(&a2 * &fb)))
        })
        .collect::<Result<_>>()?;
    Ok(mean_se(&vals))
}

/// Fibrewise locking gap `∫∫(F_y − F̄)ᵀa₂(F_y − F̄) dμ^y dπ̄`, by
/// Gauss–Hermite in x and a trapezoid grid on `[−L, L]^dy` in y.
///
/// The mass on the outermost ring of the y grid serves as the truncation
/// estimate; above 1e-4 the result is refused.
pub fn locking_gap_quadrature(
    model: &AveragingModel,
    half_width: f64,
    step: f64,
    x_order: usize,
) -> Result<f64> {
    let density = model
        .slow_density
        .as_ref()
        .ok_or_else(|| Error::config("model", "slow marginal density is not known"))?;
    let fibre = model
        .fibre
        .as_ref()
        .ok_or_else(|| Error::config("model", "fibre laws are not known"))?;
    if !(half_width > 0.0 && step > 0.0 && step < half_width) {
        return Err(Error::InvalidBounds("need 0 < step < half_width".into()));
    }
    let gh = GaussHermite::new(x_order);
    let (dx, dy) = (model.dx, model.dy);
    let n = (2.0 * half_width / step).round() as usize;
    let total_pts = (n + 1).pow(dy as u32);
    let cell = step.powi(dy as i32);
    let parts: Vec<(f64, f64)> = (0..total_pts)
        .into_par_iter()
        .map(|mut k| -> Result<(f64, f64)> {
            let mut y = vec![0.0; dy];
            let mut on_ring = false;
            let mut w = 1.0;
            for yi in y.iter_mut() {
                let j = k % (n + 1);
                k /= n + 1;
                *yi = -half_width + j as f64 * step;
                if j == 0 || j == n {
                    on_ring = true;
                    w *= 0.5;
                }
            }
            let rho = density(&y);
            if rho == 0.0 {
                return Ok((0.0, 0.0));
            }
            let fb = model.averaged_force(&y, &gh)?;
            let a2 = (model.a2)(&y);
            let (mean, l) = fibre(&y);
            let inner = gh.expect_tensor(dx, |xi| {
                let x: Vec<f64> = (0..dx)
                    .map(|i| mean[i] + (0..dx).map(|j| l[(i, j)] * xi[j]).sum::<f64>())
                    .collect();
                match model.slow_force(&x, &y) {
                    Ok(f) => {
                        let diff = f - &fb;
                        diff.dot(&(&a2 * &diff))
                    }
                    Err(_) => f64::NAN,
                }
            });
            if !inner.is_finite() {
                return Err(Error::SingularA { point: y });
            }
            let v = inner * rho * cell * w;
            Ok((v, if on_ring { v } else { 0.0 }))
        })
        .collect::<Result<_>>()?;
    let total: f64 = parts.iter().map(|p| p.0).sum();
    let ring: f64 = parts.iter().map(|p| p.1).sum();
    if ring.abs() > 1e-4 {
        return Err(Error::QuadratureDivergence {
            estimate: ring.abs(),
        });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::path_rng;

    #[test]
    fn demo_passes_divergence_check() {
        let mut m = make_averaging_demo(0.7);
        let grid: Vec<Vec<f64>> = (0..27)
            .map(|k| {
                vec![
                    (k % 3) as f64 - 1.0,
                    ((k / 3) % 3) as f64 - 1.0,
                    (k / 9) as f64 - 1.0,
                ]
            })
            .collect();
        assert!(m.verify_divergence(&grid).unwrap() < 1e-8);
    }

    #[test]
    fn custom_gamma_must_be_checked() {
        let mut m = AveragingModel::custom(
            1,
            1,
            Arc::new(|_, _| RealMatrix::identity(1, 1)),
            Arc::new(|_| RealMatrix::identity(1, 1)),
            Arc::new(|x, y| 0.5 * (x[0] * x[0] + y[0] * y[0])),
            Arc::new(|x, y, out| {
                out[0] = x[0];
                out[1] = y[0];
            }),
            Arc::new(|_, _, out| out[0] = 1.0),
            true,
        );
        assert!(m.diffusion_model(0.1).is_err());
        assert!(matches!(
            m.verify_divergence(&[vec![0.0, 1.0]]),
            Err(Error::DivergenceCheck { .. })
        ));
    }

    #[test]
    fn averaged_force_of_demo() {
        let m = make_averaging_demo(0.5);
        let gh = GaussHermite::new(10);
        let f = m.averaged_force(&[1.0, 2.0], &gh).unwrap();
        assert!((f[0] + 2.0).abs() < 1e-12);
        assert!((f[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reversible_model_has_zero_hk() {
        let d = DiffusionModel::linear(RealMatrix::identity(2, 2), RealMatrix::identity(2, 2)).unwrap();
        let pts = [vec![1.0, 2.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|v| v.as_slice()).collect();
        assert_eq!(sigma_hk_mc(&d, &refs).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn locking_gap_vanishes_without_coupling() {
        let m = make_averaging_demo(0.0);
        assert!(locking_gap_quadrature(&m, 8.0, 0.25, 10).unwrap().abs() < 1e-14);
    }

    #[test]
    fn truncation_is_detected() {
        let m = make_averaging_demo(1.0);
        assert!(matches!(
            locking_gap_quadrature(&m, 2.0, 0.25, 10),
            Err(Error::QuadratureDivergence { .. })
        ));
    }

    #[test]
    fn demo_sampler_is_standard() {
        let m = make_averaging_demo(0.0);
        let s = m.stationary.unwrap();
        let z = s(&mut path_rng(0, 0));
        assert_eq!(z.len(), 3);
    }
}
