//! Coefficient-convergence tables: projected current, projected diffusivity
//! and projected housekeeping integrals against a fixed test-function library.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{sqrt_psd, RealMatrix, RealVector};
use crate::models::averaging::AveragingModel;
use crate::ou::{BlockMatrix, OuEps};
use crate::quadrature::GaussHermite;
use crate::rng::{fill_normal, path_rng};
use crate::stats::mean_se;

pub const LIBRARY_VERSION: u32 = 1;
pub const LIBRARY_SIZE: usize = 8;

/// Test function on the slow space with its gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TestFunction {
    /// `tanh(s·⟨w, u⟩ + c)` with `wᵢ = 1/(i+1)`.
    Tanh { s: f64, c: f64 },
    /// `exp(−|u − c·w|²/(2r²))` with `wᵢ = 1/(i+1)`.
    Bump { c: f64, r: f64 },
}

pub fn library() -> [TestFunction; LIBRARY_SIZE] {
    [
        TestFunction::Tanh { s: 1.0, c: 0.0 },
        TestFunction::Tanh { s: 0.5, c: 0.3 },
        TestFunction::Tanh { s: 2.0, c: -0.5 },
        TestFunction::Tanh { s: 1.5, c: 1.0 },
        TestFunction::Bump { c: 0.0, r: 1.0 },
        TestFunction::Bump { c: 1.0, r: 0.7 },
        TestFunction::Bump { c: -0.5, r: 1.5 },
        TestFunction::Bump { c: 2.0, r: 1.0 },
    ]
}

fn weight(i: usize) -> f64 {
    1.0 / (i as f64 + 1.0)
}

impl TestFunction {
    pub fn value(&self, u: &[f64]) -> f64 {
        match *self {
            TestFunction::Tanh { s, c } => {
                let a: f64 = u.iter().enumerate().map(|(i, v)| weight(i) * v).sum();
                (s * a + c).tanh()
            }
            TestFunction::Bump { c, r } => {
                let q: f64 = u
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v - c * weight(i)).powi(2))
                    .sum();
                (-q / (2.0 * r * r)).exp()
            }
        }
    }

    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        match *self {
            TestFunction::Tanh { s, c } => {
                let a: f64 = u.iter().enumerate().map(|(i, v)| weight(i) * v).sum();
                let d = s * (1.0 - (s * a + c).tanh().powi(2));
                (0..u.len()).map(|i| d * weight(i)).collect()
            }
            TestFunction::Bump { c, r } => {
                let f = self.value(u);
                u.iter()
                    .enumerate()
                    .map(|(i, v)| -f * (v - c * weight(i)) / (r * r))
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoeffRow {
    pub eps: f64,
    pub function: usize,
    pub drift: f64,
    pub drift_se: f64,
    /// Closed-form value where available (OU family).
    pub drift_exact: Option<f64>,
    pub diffusivity: f64,
    pub diffusivity_se: f64,
    /// Change from the previous ε for the same function.
    pub drift_increment: Option<f64>,
    pub increment_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoeffTable {
    pub library_version: u32,
    pub rows: Vec<CoeffRow>,
    /// `(ε, J_hk,proj, SE)` per ε.
    pub hk_proj: Vec<(f64, f64, f64)>,
    pub sup_hk_proj: f64,
    /// Largest |MC − closed form| in SE units, when closed forms exist.
    pub max_exact_z: Option<f64>,
}

/// Stationary samples with, per sample, the slow coordinate `Φ(z)`, the
/// projected drift `DΦγᵉ`, and `DΦAᵉDΦᵀ`.
struct Projected {
    u: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    q: Vec<RealMatrix>,
}

fn ou_projected(block: &BlockMatrix, eps: f64, n: usize, seed: u64) -> Result<(Projected, OuEps)> {
    let me = OuEps::new(block, eps)?;
    let d = block.dim();
    let dx = block.dx();
    let l = sqrt_psd(&me.sigma);
    let gamma = &me.ieps * &me.k;
    let mut out = Projected {
        u: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
    };
    let q = RealMatrix::identity(block.dy(), block.dy());
    for i in 0..n {
        let mut rng = path_rng(seed, i as u64);
        let mut xi = vec![0.0; d];
        fill_normal(&mut rng, &mut xi);
        let z = &l * RealVector::from_vec(xi);
        let g = &gamma * &z;
        out.u.push(z.rows(dx, block.dy()).iter().copied().collect());
        out.g.push(g.rows(dx, block.dy()).iter().copied().collect());
        out.q.push(q.clone());
    }
    Ok((out, me))
}

fn avg_projected(model: &AveragingModel, n: usize, seed: u64) -> Result<Projected> {
    let sampler = model
        .stationary
        .as_ref()
        .ok_or_else(|| Error::SamplerNotConverged("model has no stationary sampler".into()))?;
    let (dx, dy) = (model.dx, model.dy);
    let mut out = Projected {
        u: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
    };
    for i in 0..n {
        let mut rng = path_rng(seed, i as u64);
        let z = sampler(&mut rng);
        let (x, y) = z.split_at(dx);
        let mut g = vec![0.0; dy];
        (model.gamma_y)(x, y, &mut g);
        out.u.push(y.to_vec());
        out.g.push(g);
        out.q.push((model.a2)(y));
    }
    Ok(out)
}

fn table_rows(
    eps: f64,
    p: &Projected,
    exact: Option<&dyn Fn(&TestFunction, usize) -> f64>,
) -> Result<(Vec<CoeffRow>, (f64, f64, f64))> {
    let dy = p.u.first().map_or(0, |u| u.len());
    let mut rows = Vec::with_capacity(LIBRARY_SIZE);
    for (k, f) in library().iter().enumerate() {
        let comp = k % dy;
        let drift: Vec<f64> = p
            .u
            .iter()
            .zip(&p.g)
            .map(|(u, g)| f.value(u) * g[comp])
            .collect();
        let diff: Vec<f64> = p
            .u
            .iter()
            .zip(&p.q)
            .map(|(u, q)| f.value(u) * q.trace())
            .collect();
        let (dm, ds) = mean_se(&drift);
        let (qm, qs) = mean_se(&diff);
        rows.push(CoeffRow {
            eps,
            function: k,
            drift: dm,
            drift_se: ds,
            drift_exact: exact.map(|e| e(f, comp)),
            diffusivity: qm,
            diffusivity_se: qs,
            drift_increment: None,
            increment_se: None,
        });
    }
    let hk: Vec<f64> = p
        .g
        .iter()
        .zip(&p.q)
        .map(|(g, q)| -> Result<f64> {
            let gv = RealVector::from_column_slice(g);
            let ch = nalgebra::Cholesky::new(q.clone())
                .ok_or_else(|| Error::SingularA { point: g.clone() })?;
            Ok(gv.dot(&ch.solve(&gv)))
        })
        .collect::<Result<_>>()?;
    let (hm, hs) = mean_se(&hk);
    Ok((rows, (eps, hm, hs)))
}

/// `E[φ(y)(DΦγᵉ)_c]` for the OU family by Stein's identity:
/// `Cov((Kz)_c, y)·E[∇φ(y)]`, the last factor by Gauss–Hermite.
fn ou_exact(me: &OuEps, f: &TestFunction, comp: usize, gh: &GaussHermite) -> f64 {
    let (dx, dy) = (me.block.dx(), me.block.dy());
    let gamma = &me.ieps * &me.k;
    let cross = gamma.row(dx + comp) * &me.sigma;
    let syy = me.sigma.view((dx, dx), (dy, dy)).into_owned();
    let l = sqrt_psd(&syy);
    let mut grad_mean = vec![0.0; dy];
    for (j, gm) in grad_mean.iter_mut().enumerate() {
        *gm = gh.expect_tensor(dy, |xi| {
            let y = &l * RealVector::from_column_slice(xi);
            f.gradient(y.as_slice())[j]
        });
    }
    (0..dy).map(|j| cross[dx + j] * grad_mean[j]).sum()
}

fn finish(mut rows: Vec<CoeffRow>, hk: Vec<(f64, f64, f64)>) -> CoeffTable {
    for i in LIBRARY_SIZE..rows.len() {
        let prev = rows[i - LIBRARY_SIZE].clone();
        let r = &mut rows[i];
        r.drift_increment = Some(r.drift - prev.drift);
        r.increment_se = Some((r.drift_se.powi(2) + prev.drift_se.powi(2)).sqrt());
    }
    let max_exact_z = rows
        .iter()
        .filter_map(|r| {
            r.drift_exact.map(|e| {
                if r.drift_se > 0.0 {
                    (r.drift - e).abs() / r.drift_se
                } else if (r.drift - e).abs() < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
        })
        .reduce(f64::max);
    let sup = hk.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max);
    CoeffTable {
        library_version: LIBRARY_VERSION,
        rows,
        hk_proj: hk,
        sup_hk_proj: sup,
        max_exact_z,
    }
}

pub fn coeff_convergence_ou(block: &BlockMatrix, eps_grid: &[f64], n: usize, seed: u64) -> Result<CoeffTable> {
    let gh = GaussHermite::new(16);
    let mut rows = Vec::new();
    let mut hk = Vec::new();
    for (k, &eps) in eps_grid.iter().enumerate() {
        let (p, me) = ou_projected(block, eps, n, seed.wrapping_add((k as u64) << 40))?;
        let exact = |f: &TestFunction, c: usize| ou_exact(&me, f, c, &gh);
        let (r, h) = table_rows(eps, &p, Some(&exact))?;
        rows.extend(r);
        hk.push(h);
    }
    Ok(finish(rows, hk))
}

pub fn coeff_convergence_avg(
    model: &AveragingModel,
    eps_grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<CoeffTable> {
    let mut rows = Vec::new();
    let mut hk = Vec::new();
    for (k, &eps) in eps_grid.iter().enumerate() {
        let p = avg_projected(model, n, seed.wrapping_add((k as u64) << 40))?;
        let (r, h) = table_rows(eps, &p, None)?;
        rows.extend(r);
        hk.push(h);
    }
    Ok(finish(rows, hk))
}
