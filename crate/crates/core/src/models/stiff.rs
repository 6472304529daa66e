//! Stiff-potential constraint model
//!
//! `dZ = −∇(V + ε⁻²U)(Z) dt + √2 dW`, `U(x,y) = ½(x−Hy−b)ᵀB(x−Hy−b)`,
//!
//! concentrating on the graph `{(Hu+b, u)}` as ε → 0. The slow coordinate
//! is the phase map `Φ(x,y) = G⁻¹(y + Hᵀ(x−b))`, `G = I + HᵀH`, and the
//! limit is `dU = −G⁻¹∇V̄ dt + √2 G^{−1/2} dB` with `V̄(u) = V(Hu+b, u)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{inv, inv_spd, lambda_max_sym, sqrt_psd, sym, RealMatrix, RealVector};
use crate::models::wasserstein::sliced_w1;
use crate::rng::{fill_normal, path_rng};
use crate::sde::{DiffusionModel, VecField, BLOWUP_THRESHOLD};
use crate::stats::mean_se;

pub type GradField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// The soft potential `V` on the full space.
#[derive(Clone)]
pub enum Potential {
    /// `V(z) = ½zᵀQz + cᵀz`.
    Quadratic { hess: RealMatrix, lin: RealVector },
    General {
        v: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        grad: GradField,
    },
}

impl Potential {
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Potential::Quadratic { hess, lin } => {
                let d = lin.len();
                for i in 0..d {
                    out[i] = lin[i] + (0..d).map(|j| hess[(i, j)] * z[j]).sum::<f64>();
                }
            }
            Potential::General { grad, .. } => grad(z, out),
        }
    }
}

#[derive(Clone)]
pub struct StiffModel {
    pub dx: usize,
    pub dy: usize,
    pub h: RealMatrix,
    pub b: RealVector,
    pub bmat: RealMatrix,
    pub potential: Potential,
    pub eps: f64,
}

impl std::fmt::Debug for StiffModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StiffModel")
            .field("dx", &self.dx)
            .field("dy", &self.dy)
            .field("h", &self.h)
            .field("b", &self.b)
            .field("eps", &self.eps)
            .finish()
    }
}

impl StiffModel {
    pub fn new(
        h: RealMatrix,
        b: RealVector,
        bmat: RealMatrix,
        potential: Potential,
        eps: f64,
    ) -> Result<Self> {
        let (dx, dy) = (h.nrows(), h.ncols());
        if b.len() != dx || bmat.nrows() != dx || bmat.ncols() != dx {
            return Err(Error::dims("b and B must match the rows of H"));
        }
        if (&bmat - bmat.transpose()).norm() > 1e-12 * bmat.norm().max(1.0)
            || crate::linalg::lambda_min_sym(&bmat) <= 0.0
        {
            return Err(Error::InvalidBounds("constraint matrix B must be symmetric positive definite".into()));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidBounds(format!("eps must be positive, got {eps}")));
        }
        if let Potential::Quadratic { hess, lin } = &potential {
            if hess.nrows() != dx + dy || hess.ncols() != dx + dy || lin.len() != dx + dy {
                return Err(Error::dims("quadratic potential does not match dx + dy"));
            }
        }
        Ok(Self {
            dx,
            dy,
            h,
            b,
            bmat,
            potential,
            eps,
        })
    }

    /// `V = (a x² + y²)/2`, `H = 1`, `b = 0`, `B = 1`.
    pub fn scalar_demo(anisotropy: f64, eps: f64) -> Result<Self> {
        Self::new(
            RealMatrix::identity(1, 1),
            RealVector::zeros(1),
            RealMatrix::identity(1, 1),
            Potential::Quadratic {
                hess: RealMatrix::from_diagonal(&RealVector::from_vec(vec![anisotropy, 1.0])),
                lin: RealVector::zeros(2),
            },
            eps,
        )
    }

    /// `V = x²/2 + (y² − 1)²/4` with `H = 1`, `b = 0`, `B = 1`.
    pub fn double_well(eps: f64) -> Result<Self> {
        Self::new(
            RealMatrix::identity(1, 1),
            RealVector::zeros(1),
            RealMatrix::identity(1, 1),
            Potential::General {
                v: Arc::new(|z| 0.5 * z[0] * z[0] + 0.25 * (z[1] * z[1] - 1.0).powi(2)),
                grad: Arc::new(|z, out| {
                    out[0] = z[0];
                    out[1] = z[1] * (z[1] * z[1] - 1.0);
                }),
            },
            eps,
        )
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        let mut m = self.clone();
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidBounds(format!("eps must be positive, got {eps}")));
        }
        m.eps = eps;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dx + self.dy
    }

    /// `G = I + HᵀH`.
    pub fn metric(&self) -> RealMatrix {
        RealMatrix::identity(self.dy, self.dy) + self.h.transpose() * &self.h
    }

    /// `L = [I, −H]`, so that `x − Hy − b = Lz − b`.
    fn constraint_map(&self) -> RealMatrix {
        let mut l = RealMatrix::zeros(self.dx, self.dim());
        l.view_mut((0, 0), (self.dx, self.dx))
            .copy_from(&RealMatrix::identity(self.dx, self.dx));
        l.view_mut((0, self.dx), (self.dx, self.dy)).copy_from(&(-&self.h));
        l
    }

    /// `N = [H; I]`, so that `ι(u) = Nu + (b, 0)`.
    fn embedding(&self) -> RealMatrix {
        let mut n = RealMatrix::zeros(self.dim(), self.dy);
        n.view_mut((0, 0), (self.dx, self.dy)).copy_from(&self.h);
        n.view_mut((self.dx, 0), (self.dy, self.dy))
            .copy_from(&RealMatrix::identity(self.dy, self.dy));
        n
    }

    fn offset(&self) -> RealVector {
        let mut c = RealVector::zeros(self.dim());
        c.rows_mut(0, self.dx).copy_from(&self.b);
        c
    }

    pub fn embed(&self, u: &[f64]) -> Vec<f64> {
        let z = self.embedding() * RealVector::from_column_slice(u) + self.offset();
        z.iter().copied().collect()
    }

    /// `U(z)`.
    pub fn constraint(&self, z: &[f64]) -> f64 {
        let w = self.residual(z);
        0.5 * w.dot(&(&self.bmat * &w))
    }

    /// `x − Hy − b`.
    pub fn residual(&self, z: &[f64]) -> RealVector {
        self.constraint_map() * RealVector::from_column_slice(z) - &self.b
    }

    /// Hessian of `ε⁻²U`.
    fn stiff_hessian(&self) -> RealMatrix {
        let l = self.constraint_map();
        l.transpose() * &self.bmat * &l / (self.eps * self.eps)
    }

    /// Exact Gibbs law `N(mean, cov)` of `e^{−V−ε⁻²U}` for quadratic `V`.
    pub fn gibbs_gaussian(&self) -> Result<(RealVector, RealMatrix)> {
        let Potential::Quadratic { hess, lin } = &self.potential else {
            return Err(Error::config("model.potential", "Gibbs law is Gaussian only for quadratic V"));
        };
        let l = self.constraint_map();
        let prec = sym(&(hess + self.stiff_hessian()));
        let cov = inv_spd(&prec)?;
        let lin_total = lin - l.transpose() * &self.bmat * &self.b / (self.eps * self.eps);
        Ok((-(&cov * lin_total), cov))
    }

    /// `π̄₀ ∝ e^{−V̄}` as `N(mean, (∇²V̄)⁻¹)` for quadratic `V`.
    pub fn limit_gaussian(&self) -> Result<(RealVector, RealMatrix)> {
        let Potential::Quadratic { hess, lin } = &self.potential else {
            return Err(Error::config("model.potential", "limit law is Gaussian only for quadratic V"));
        };
        let n = self.embedding();
        let prec = sym(&(n.transpose() * hess * &n));
        let cov = inv_spd(&prec)?;
        let shift = n.transpose() * (hess * self.offset() + lin);
        Ok((-(&cov * shift), cov))
    }
}

/// `Φ(x,y) = (I + HᵀH)⁻¹(y + Hᵀ(x − b))`.
pub fn stiff_phase_map(model: &StiffModel, z: &[f64]) -> Vec<f64> {
    let (x, y) = z.split_at(model.dx);
    let xb = RealVector::from_column_slice(x) - &model.b;
    let rhs = RealVector::from_column_slice(y) + model.h.transpose() * xb;
    let g = model.metric();
    let u = g.lu().solve(&rhs).expect("I + HᵀH is positive definite");
    u.iter().copied().collect()
}

/// The limit diffusion on the slow space, with constant `A = G⁻¹`.
pub fn stiff_limit_model(model: &StiffModel) -> Result<DiffusionModel> {
    let dy = model.dy;
    let g = model.metric();
    let g_inv = inv_spd(&g)?;
    let n = model.embedding();
    let c = model.offset();
    let potential = model.potential.clone();
    let d = model.dim();
    let gi = g_inv.clone();
    let drift: VecField = Arc::new(move |u, out| {
        let z = &n * RealVector::from_column_slice(u) + &c;
        let mut grad = vec![0.0; d];
        potential.gradient(z.as_slice(), &mut grad);
        let gv = n.transpose() * RealVector::from_vec(grad);
        let v = &gi * gv;
        for i in 0..dy {
            out[i] = -v[i];
        }
    });
    let sig = sqrt_psd(&(&g_inv * 2.0));
    let sig_rows: Vec<f64> = sig.transpose().iter().copied().collect();
    let noise: VecField = Arc::new(move |_, out| out.copy_from_slice(&sig_rows));
    let a = g_inv.clone();
    let mut limit = DiffusionModel::new(dy, dy, drift, noise, Arc::new(move |_| a.clone()));
    if let Potential::Quadratic { hess, lin } = &model.potential {
        let nn = model.embedding();
        let constant = nn.transpose() * (hess * model.offset() + lin);
        if constant.norm() == 0.0 {
            limit.linear = Some(&g_inv * nn.transpose() * hess * &nn);
        }
    }
    Ok(limit)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub eps: f64,
    pub n_samples: usize,
    pub mean_sq_residual: f64,
    pub mean_sq_residual_se: f64,
    pub w1_pushforward: f64,
    pub w1_se: f64,
    /// True when samples came from Langevin rather than exact Gaussian draws.
    pub approximate: bool,
}

/// Step size of the Langevin sampler relative to `ε²`.
pub const LANGEVIN_DT_FACTOR: f64 = 0.05;
/// Burn-in length of the Langevin sampler, in time units of the soft dynamics.
pub const LANGEVIN_BURN_IN: f64 = 20.0;

fn draw_gibbs(model: &StiffModel, n: usize, seed: u64) -> Result<(Vec<Vec<f64>>, bool)> {
    let d = model.dim();
    if let Potential::Quadratic { .. } = model.potential {
        let (mean, cov) = model.gibbs_gaussian()?;
        let l = sqrt_psd(&cov);
        let out = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(seed, i as u64);
                let mut xi = vec![0.0; d];
                fill_normal(&mut rng, &mut xi);
                (&mean + &l * RealVector::from_vec(xi)).iter().copied().collect()
            })
            .collect();
        return Ok((out, false));
    }
    let dt = LANGEVIN_DT_FACTOR * model.eps * model.eps;
    let steps = (LANGEVIN_BURN_IN / dt).ceil() as usize;
    let half = steps / 2;
    let stiff = model.stiff_hessian();
    let b_stiff = model.constraint_map().transpose() * &model.bmat * &model.b
        / (model.eps * model.eps);
    let chains: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, f64, f64)> {
            let mut rng = path_rng(seed, i as u64);
            let mut z = vec![0.0; d];
            let mut xi = vec![0.0; d];
            let mut grad = vec![0.0; d];
            let mut mid = 0.0;
            let sq = (2.0 * dt).sqrt();
            for s in 0..steps {
                model.potential.gradient(&z, &mut grad);
                fill_normal(&mut rng, &mut xi);
                let zc = z.clone();
                for k in 0..d {
                    let stiff_k = (0..d).map(|j| stiff[(k, j)] * zc[j]).sum::<f64>() - b_stiff[k];
                    z[k] = zc[k] - (grad[k] + stiff_k) * dt + sq * xi[k];
                }
                if z.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD) {
                    return Err(Error::SimulationBlowup { path: i as u64, step: s });
                }
                if s + 1 == half {
                    mid = model.residual(&z).norm_squared();
                }
            }
            let end = model.residual(&z).norm_squared();
            Ok((z, mid, end))
        })
        .collect::<Result<_>>()?;
    let mids: Vec<f64> = chains.iter().map(|c| c.1).collect();
    let ends: Vec<f64> = chains.iter().map(|c| c.2).collect();
    let (m1, s1) = mean_se(&mids);
    let (m2, s2) = mean_se(&ends);
    let diff_se = (s1 * s1 + s2 * s2).sqrt();
    if n >= 2 && (m1 - m2).abs() > 4.0 * diff_se {
        return Err(Error::SamplerNotConverged(format!(
            "constraint residual drifted from {m1:.4e} to {m2:.4e} between half and full burn-in"
        )));
    }
    Ok((chains.into_iter().map(|c| c.0).collect(), true))
}

fn draw_limit(model: &StiffModel, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let dy = model.dy;
    if let Potential::Quadratic { .. } = model.potential {
        let (mean, cov) = model.limit_gaussian()?;
        let l = sqrt_psd(&cov);
        return Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(seed, i as u64);
                let mut xi = vec![0.0; dy];
                fill_normal(&mut rng, &mut xi);
                (&mean + &l * RealVector::from_vec(xi)).iter().copied().collect()
            })
            .collect());
    }
    let limit = stiff_limit_model(model)?;
    let dt = 1e-3;
    let ens = crate::sde::ensemble(
        &limit,
        &|_| vec![0.0; dy],
        n,
        dt,
        &[LANGEVIN_BURN_IN],
        seed,
    )?;
    Ok(ens.slice(0).into_iter().map(|s| s.to_vec()).collect())
}

/// Concentration of the Gibbs measure on the constraint graph:
/// `Ê|x − Hy − b|²` and the W1 distance between `Φ#πᵉ` and `π̄₀`.
pub fn stiff_concentration(model: &StiffModel, n_samples: usize, seed: u64) -> Result<ConcentrationReport> {
    if n_samples < 2 {
        return Err(Error::InvalidBounds("need at least two samples".into()));
    }
    let (samples, approximate) = draw_gibbs(model, n_samples, seed)?;
    let sq: Vec<f64> = samples
        .iter()
        .map(|z| model.residual(z).norm_squared())
        .collect();
    let (mean_sq_residual, mean_sq_residual_se) = mean_se(&sq);
    let pushed: Vec<Vec<f64>> = samples.iter().map(|z| stiff_phase_map(model, z)).collect();
    let reference = draw_limit(model, n_samples, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let (w1_pushforward, w1_se) = sliced_w1(&pushed, &reference, seed);
    Ok(ConcentrationReport {
        eps: model.eps,
        n_samples,
        mean_sq_residual,
        mean_sq_residual_se,
        w1_pushforward,
        w1_se,
        approximate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicRow {
    pub eps: f64,
    pub dt: f64,
    pub micro: f64,
    pub micro_se: f64,
    pub limit: f64,
    pub limit_se: f64,
    pub gap: f64,
    pub gap_se: f64,
}

/// Cap on the time step of the dynamic check.
pub const DYNAMIC_DT_MAX: f64 = 1e-3;

/// Compares `E_{z₀}[f(Zᵉ_t)]` with `E_{Φ(z₀)}[f(ι(U_t))]` for each ε.
///
/// Both processes are driven by one Brownian motion: the limit uses
/// `dB = G^{−1/2}(dW_y + HᵀdW_x)`, so the gap estimate is a paired mean
/// with a paired standard error.
pub fn stiff_dynamic_check(
    model: &StiffModel,
    z0: &[f64],
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    t: f64,
    eps_grid: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<DynamicRow>> {
    if z0.len() != model.dim() {
        return Err(Error::dims("z0 has wrong dimension"));
    }
    if n_paths < 2 || !(t > 0.0) {
        return Err(Error::InvalidBounds("need t > 0 and at least two paths".into()));
    }
    let d = model.dim();
    let (dx, dy) = (model.dx, model.dy);
    let u0 = stiff_phase_map(model, z0);
    let g_inv = inv(&model.metric())?;
    let n = model.embedding();
    let c = model.offset();
    let h = model.h.clone();
    let mut rows = Vec::with_capacity(eps_grid.len());
    for (k, &eps) in eps_grid.iter().enumerate() {
        let m = model.with_eps(eps)?;
        let stiff = m.stiff_hessian();
        let b_stiff = m.constraint_map().transpose() * &m.bmat * &m.b / (eps * eps);
        let soft = match &m.potential {
            Potential::Quadratic { hess, .. } => lambda_max_sym(hess).max(0.0),
            Potential::General { .. } => 0.0,
        };
        let lam = lambda_max_sym(&stiff) + soft;
        let steps = (t / DYNAMIC_DT_MAX.min(0.1 / lam)).ceil() as usize;
        let dt = t / steps as f64;
        let sq = (2.0 * dt).sqrt();
        let stream = seed.wrapping_add((k as u64) << 40);
        let vals: Vec<(f64, f64)> = (0..n_paths)
            .into_par_iter()
            .map(|p| -> Result<(f64, f64)> {
                let mut rng = path_rng(stream, p as u64);
                let mut z = z0.to_vec();
                let mut u = u0.clone();
                let mut xi = vec![0.0; d];
                let mut grad = vec![0.0; d];
                let mut zu = vec![0.0; d];
                let mut gu = vec![0.0; d];
                let mut proj = vec![0.0; dy];
                for s in 0..steps {
                    fill_normal(&mut rng, &mut xi);
                    m.potential.gradient(&z, &mut grad);
                    let zc = z.clone();
                    for i in 0..d {
                        let st = (0..d).map(|j| stiff[(i, j)] * zc[j]).sum::<f64>() - b_stiff[i];
                        z[i] = zc[i] - (grad[i] + st) * dt + sq * xi[i];
                    }
                    for i in 0..d {
                        zu[i] = c[i] + (0..dy).map(|j| n[(i, j)] * u[j]).sum::<f64>();
                    }
                    m.potential.gradient(&zu, &mut gu);
                    for j in 0..dy {
                        let grad_bar = (0..d).map(|i| n[(i, j)] * gu[i]).sum::<f64>();
                        let noise = xi[dx + j] + (0..dx).map(|i| h[(i, j)] * xi[i]).sum::<f64>();
                        proj[j] = -grad_bar * dt + sq * noise;
                    }
                    for i in 0..dy {
                        u[i] += (0..dy).map(|j| g_inv[(i, j)] * proj[j]).sum::<f64>();
                    }
                    if z.iter().chain(&u).any(|v| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD) {
                        return Err(Error::SimulationBlowup { path: p as u64, step: s });
                    }
                }
                let lifted = m.embed(&u);
                Ok((f(&z), f(&lifted)))
            })
            .collect::<Result<_>>()?;
        let micro: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let limit: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let diff: Vec<f64> = vals.iter().map(|v| v.0 - v.1).collect();
        let (mm, ms) = mean_se(&micro);
        let (lm, ls) = mean_se(&limit);
        let (gm, gs) = mean_se(&diff);
        rows.push(DynamicRow {
            eps,
            dt,
            micro: mm,
            micro_se: ms,
            limit: lm,
            limit_se: ls,
            gap: gm,
            gap_se: gs,
        });
    }
    Ok(rows)
}
