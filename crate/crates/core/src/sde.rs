//! Trajectory simulation: Euler–Maruyama with fast-block substepping, exact
//! Gaussian stepping for linear models, path ensembles, synchronous coupling
//! and Monte Carlo expectations.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Cholesky;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    expm, is_positively_stable, norm1, solve_lyapunov, sqrt_psd, sym, RealMatrix, RealVector,
};
use crate::ou::OuEps;
use crate::rng::{fill_normal, path_rng, PathRng};
use crate::stats::mean_se;

/// Any coordinate above this magnitude aborts the run.
pub const BLOWUP_THRESHOLD: f64 = 1e8;

/// Fast substeps per slow step are `ceil(dt / (SUBSTEP_FACTOR·ε))`.
pub const SUBSTEP_FACTOR: f64 = 0.1;

pub type VecField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type MatField = Arc<dyn Fn(&[f64]) -> RealMatrix + Send + Sync>;

/// `dZ = b(Z) dt + σ(Z) dW` with `σσᵀ = 2A`.
///
/// `drift` already contains any ε⁻¹ scaling of the first `fast_dims`
/// coordinates; `eps` only controls substepping. `noise` writes σ(z) as a
/// row-major `dim × noise_dim` matrix.
#[derive(Clone)]
pub struct DiffusionModel {
    pub dim: usize,
    pub noise_dim: usize,
    pub drift: VecField,
    pub noise: VecField,
    pub diffusion: MatField,
    pub gamma: Option<VecField>,
    pub fast_dims: usize,
    pub eps: f64,
    /// `Some(M)` when the drift is exactly `−Mz` and `A` is constant.
    pub linear: Option<RealMatrix>,
    /// Use exact Gaussian transitions instead of Euler–Maruyama (linear models only).
    pub exact: bool,
}

impl std::fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("fast_dims", &self.fast_dims)
            .field("eps", &self.eps)
            .field("linear", &self.linear.is_some())
            .field("exact", &self.exact)
            .finish()
    }
}

impl DiffusionModel {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        drift: VecField,
        noise: VecField,
        diffusion: MatField,
    ) -> Self {
        Self {
            dim,
            noise_dim,
            drift,
            noise,
            diffusion,
            gamma: None,
            fast_dims: 0,
            eps: 1.0,
            linear: None,
            exact: false,
        }
    }

    /// `dZ = −MZ dt + √(2A) dW` with constant `A`.
    pub fn linear(m: RealMatrix, a: RealMatrix) -> Result<Self> {
        let d = m.nrows();
        if !m.is_square() || a.nrows() != d || a.ncols() != d {
            return Err(Error::dims("linear model needs square M and A of equal size"));
        }
        let sig = sqrt_psd(&(&a * 2.0));
        let sig_rows: Vec<f64> = sig.transpose().iter().copied().collect();
        let mm = m.clone();
        let drift: VecField = Arc::new(move |z, out| {
            for i in 0..d {
                out[i] = -(0..d).map(|j| mm[(i, j)] * z[j]).sum::<f64>();
            }
        });
        let noise: VecField = Arc::new(move |_, out| out.copy_from_slice(&sig_rows));
        let aa = a.clone();
        let diffusion: MatField = Arc::new(move |_| aa.clone());
        let mut model = Self::new(d, d, drift, noise, diffusion);
        model.linear = Some(m);
        Ok(model)
    }

    /// The ε-member of the OU family, with `γ(z) = IᵉKz`.
    pub fn from_ou(me: &OuEps) -> Result<Self> {
        let mut model = Self::linear(me.meps.clone(), me.ieps.clone())?;
        let g = &me.ieps * &me.k;
        let d = model.dim;
        model.gamma = Some(Arc::new(move |z, out| {
            for i in 0..d {
                out[i] = (0..d).map(|j| g[(i, j)] * z[j]).sum();
            }
        }));
        model.fast_dims = me.block.dx();
        model.eps = me.eps;
        Ok(model)
    }

    pub fn with_gamma(mut self, gamma: VecField) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn with_fast(mut self, fast_dims: usize, eps: f64) -> Self {
        self.fast_dims = fast_dims;
        self.eps = eps;
        self
    }

    pub fn with_exact_stepping(mut self) -> Result<Self> {
        if self.linear.is_none() {
            return Err(Error::config("scheme", "exact stepping needs a linear model"));
        }
        self.exact = true;
        Ok(self)
    }

    pub fn drift_at(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.drift)(z, &mut out);
        out
    }

    pub fn noise_at(&self, z: &[f64]) -> RealMatrix {
        let mut buf = vec![0.0; self.dim * self.noise_dim];
        (self.noise)(z, &mut buf);
        RealMatrix::from_row_slice(self.dim, self.noise_dim, &buf)
    }

    /// Checks `A = Aᵀ` and `σσᵀ = 2A` within 1e-10 at the given points.
    pub fn check_consistency(&self, points: &[Vec<f64>]) -> Result<()> {
        for p in points {
            if p.len() != self.dim {
                return Err(Error::dims("consistency point has wrong dimension"));
            }
            let a = (self.diffusion)(p);
            let scale = a.norm().max(1.0);
            if (&a - a.transpose()).norm() > 1e-10 * scale {
                return Err(Error::SingularA { point: p.clone() });
            }
            let s = self.noise_at(p);
            if (&s * s.transpose() - &a * 2.0).norm() > 1e-10 * scale {
                return Err(Error::InvalidBounds(format!(
                    "noise factor does not match diffusion at {p:?}"
                )));
            }
        }
        Ok(())
    }

    fn substeps(&self, dt: f64) -> usize {
        if self.fast_dims == 0 {
            1
        } else {
            ((dt / (SUBSTEP_FACTOR * self.eps)).ceil() as usize).max(1)
        }
    }
}

/// Precomputed transition `z ↦ Φz + Lξ` of a linear model over one step.
struct ExactStep {
    phi: RealMatrix,
    chol: RealMatrix,
    inner: usize,
}

impl ExactStep {
    fn new(m: &RealMatrix, a: &RealMatrix, dt: f64) -> Result<Self> {
        let d = m.nrows();
        if is_positively_stable(m) {
            let sigma = solve_lyapunov(m, &(a * 2.0))?;
            let phi = expm(m, -dt)?;
            let q = sym(&(&sigma - &phi * &sigma * phi.transpose()));
            return Ok(Self {
                phi,
                chol: sqrt_psd(&q),
                inner: 1,
            });
        }
        // Van Loan block exponential on steps short enough to avoid overflow
        let inner = ((norm1(m) * dt / 2.0).ceil() as usize).max(1);
        let h = dt / inner as f64;
        let mut c = RealMatrix::zeros(2 * d, 2 * d);
        c.view_mut((0, 0), (d, d)).copy_from(m);
        c.view_mut((0, d), (d, d)).copy_from(&(a * 2.0));
        c.view_mut((d, d), (d, d)).copy_from(&(-m.transpose()));
        let e = expm(&c, h)?;
        let phi = expm(m, -h)?;
        let g = e.view((0, d), (d, d)).into_owned();
        let q = sym(&(&phi * g));
        Ok(Self {
            phi,
            chol: sqrt_psd(&q),
            inner,
        })
    }
}

enum Stepper {
    Euler { n_sub: usize, h: f64 },
    Exact(ExactStep),
}

struct Workspace {
    b0: Vec<f64>,
    b: Vec<f64>,
    sig0: Vec<f64>,
    sig: Vec<f64>,
    zf: Vec<f64>,
    dw: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    fn new(model: &DiffusionModel) -> Self {
        let (d, r) = (model.dim, model.noise_dim);
        Self {
            b0: vec![0.0; d],
            b: vec![0.0; d],
            sig0: vec![0.0; d * r],
            sig: vec![0.0; d * r],
            zf: vec![0.0; d],
            dw: vec![0.0; r],
            tmp: vec![0.0; d],
        }
    }
}

impl Stepper {
    fn new(model: &DiffusionModel, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidBounds(format!("dt must be positive, got {dt}")));
        }
        if model.exact {
            let m = model.linear.as_ref().expect("exact stepping needs a linear model");
            let a = (model.diffusion)(&vec![0.0; model.dim]);
            return Ok(Stepper::Exact(ExactStep::new(m, &a, dt)?));
        }
        let n_sub = model.substeps(dt);
        Ok(Stepper::Euler {
            n_sub,
            h: dt / n_sub as f64,
        })
    }

    /// Normals consumed per step.
    fn draws(&self, model: &DiffusionModel) -> usize {
        match self {
            Stepper::Euler { n_sub, .. } => n_sub * model.noise_dim,
            Stepper::Exact(ex) => ex.inner * model.dim,
        }
    }

    fn step(&self, model: &DiffusionModel, z: &mut [f64], xi: &[f64], ws: &mut Workspace) {
        let d = model.dim;
        match self {
            Stepper::Exact(ex) => {
                for k in 0..ex.inner {
                    let noise = &xi[k * d..(k + 1) * d];
                    for i in 0..d {
                        let mut v = 0.0;
                        for j in 0..d {
                            v += ex.phi[(i, j)] * z[j] + ex.chol[(i, j)] * noise[j];
                        }
                        ws.tmp[i] = v;
                    }
                    z.copy_from_slice(&ws.tmp);
                }
            }
            Stepper::Euler { n_sub, h } => {
                let r = model.noise_dim;
                let sqh = h.sqrt();
                (model.drift)(z, &mut ws.b0);
                (model.noise)(z, &mut ws.sig0);
                if *n_sub == 1 {
                    for i in 0..d {
                        let mut v = z[i] + ws.b0[i] * h;
                        for j in 0..r {
                            v += ws.sig0[i * r + j] * sqh * xi[j];
                        }
                        ws.tmp[i] = v;
                    }
                    z.copy_from_slice(&ws.tmp);
                    return;
                }
                let fast = model.fast_dims;
                ws.zf.copy_from_slice(z);
                ws.dw.iter_mut().for_each(|v| *v = 0.0);
                for s in 0..*n_sub {
                    let noise = &xi[s * r..(s + 1) * r];
                    if s == 0 {
                        ws.b.copy_from_slice(&ws.b0);
                        ws.sig.copy_from_slice(&ws.sig0);
                    } else {
                        (model.drift)(&ws.zf, &mut ws.b);
                        (model.noise)(&ws.zf, &mut ws.sig);
                    }
                    for i in 0..fast {
                        let mut v = ws.b[i] * h;
                        for j in 0..r {
                            v += ws.sig[i * r + j] * sqh * noise[j];
                        }
                        ws.tmp[i] = v;
                    }
                    for i in 0..fast {
                        ws.zf[i] += ws.tmp[i];
                    }
                    for j in 0..r {
                        ws.dw[j] += sqh * noise[j];
                    }
                }
                let dt = h * *n_sub as f64;
                for i in fast..d {
                    let mut v = z[i] + ws.b0[i] * dt;
                    for j in 0..r {
                        v += ws.sig0[i * r + j] * ws.dw[j];
                    }
                    ws.zf[i] = v;
                }
                z.copy_from_slice(&ws.zf);
            }
        }
    }
}

fn check_state(z: &[f64], path: u64, step: usize) -> Result<()> {
    if z.iter().all(|v| v.is_finite() && v.abs() <= BLOWUP_THRESHOLD) {
        Ok(())
    } else {
        Err(Error::SimulationBlowup { path, step })
    }
}

/// Step indices for the requested snapshot times; each must be a multiple of `dt`.
pub fn snapshot_steps(times: &[f64], dt: f64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidBounds(format!("snapshot time {t} must be nonnegative")));
        }
        let n = (t / dt).round();
        if (n * dt - t).abs() > 1e-9 * t.max(dt) {
            return Err(Error::InvalidBounds(format!(
                "time {t} is not a multiple of dt = {dt}"
            )));
        }
        out.push(n as usize);
    }
    if out.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidBounds("snapshot times must be nondecreasing".into()));
    }
    Ok(out)
}

fn run_path(
    model: &DiffusionModel,
    stepper: &Stepper,
    z: &mut [f64],
    rng: &mut PathRng,
    steps: &[usize],
    path: u64,
    mut record: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let mut ws = Workspace::new(model);
    let mut xi = vec![0.0; stepper.draws(model)];
    check_state(z, path, 0)?;
    let mut step = 0;
    for (k, &target) in steps.iter().enumerate() {
        while step < target {
            fill_normal(rng, &mut xi);
            stepper.step(model, z, &xi, &mut ws);
            step += 1;
            check_state(z, path, step)?;
        }
        record(k, z);
    }
    Ok(())
}

/// A single path on the grid `0, dt, …, horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub dim: usize,
    /// `times.len() × dim`, row-major.
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }
    pub fn last(&self) -> &[f64] {
        self.state(self.times.len() - 1)
    }
}

fn step_count(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0 && horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidBounds(format!(
            "need dt > 0 and horizon ≥ 0, got dt = {dt}, horizon = {horizon}"
        )));
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon.max(dt) {
        return Err(Error::InvalidBounds(format!(
            "horizon {horizon} is not a multiple of dt = {dt}"
        )));
    }
    Ok(n as usize)
}

pub fn integrate(
    model: &DiffusionModel,
    z0: &[f64],
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    if z0.len() != model.dim {
        return Err(Error::dims("initial state has wrong dimension"));
    }
    let n = step_count(dt, horizon)?;
    let stepper = Stepper::new(model, dt)?;
    let steps: Vec<usize> = (0..=n).collect();
    let mut states = vec![0.0; (n + 1) * model.dim];
    let mut z = z0.to_vec();
    let mut rng = path_rng(seed, 0);
    run_path(model, &stepper, &mut z, &mut rng, &steps, 0, |k, s| {
        states[k * model.dim..(k + 1) * model.dim].copy_from_slice(s)
    })?;
    Ok(Trajectory {
        times: steps.iter().map(|&k| k as f64 * dt).collect(),
        dim: model.dim,
        states,
    })
}

/// Snapshots of many independent paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub dim: usize,
    pub seed: u64,
    /// `n_paths × n_times × dim`, row-major.
    pub states: Vec<f64>,
}

impl PathEnsemble {
    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let off = (path * self.times.len() + k) * self.dim;
        &self.states[off..off + self.dim]
    }

    /// All path states at snapshot `k`.
    pub fn slice(&self, k: usize) -> Vec<&[f64]> {
        (0..self.n_paths).map(|p| self.state(p, k)).collect()
    }

    /// Header `(n_paths, n_times, dim)` as little-endian u64, then the states
    /// as little-endian f64.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + 8 * self.states.len());
        for v in [self.n_paths, self.times.len(), self.dim] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for v in &self.states {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Reads back a file produced by [`write_binary`](Self::write_binary).
    /// Times and seed are not stored and come back empty and zero.
    pub fn read_binary(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 24 {
            return Err(Error::dims("ensemble file shorter than its header"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        let (n, t, d) = (word(0) as usize, word(1) as usize, word(2) as usize);
        let body = &bytes[24..];
        if body.len() != 8 * n * t * d {
            return Err(Error::dims("ensemble file size does not match its header"));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((n, t, d, data))
    }
}

/// Runs `n_paths` paths; path `p` uses stream `(seed, p)` both for its
/// initial state (via `sampler`) and for its increments.
pub fn ensemble(
    model: &DiffusionModel,
    sampler: &(dyn Fn(&mut PathRng) -> Vec<f64> + Sync),
    n_paths: usize,
    dt: f64,
    times: &[f64],
    seed: u64,
) -> Result<PathEnsemble> {
    let steps = snapshot_steps(times, dt)?;
    let stepper = Stepper::new(model, dt)?;
    let d = model.dim;
    let per = times.len() * d;
    let mut states = vec![0.0; n_paths * per];
    states
        .par_chunks_mut(per.max(1))
        .enumerate()
        .try_for_each(|(p, out)| -> Result<()> {
            let mut rng = path_rng(seed, p as u64);
            let mut z = sampler(&mut rng);
            if z.len() != d {
                return Err(Error::dims("sampler returned a state of wrong dimension"));
            }
            run_path(model, &stepper, &mut z, &mut rng, &steps, p as u64, |k, s| {
                out[k * d..(k + 1) * d].copy_from_slice(s)
            })
        })?;
    Ok(PathEnsemble {
        times: times.to_vec(),
        n_paths,
        dim: d,
        seed,
        states,
    })
}

/// `(z¹−z²)ᵀA(z¹)⁻¹(z¹−z²)`.
pub fn weighted_energy(model: &DiffusionModel, z1: &[f64], z2: &[f64]) -> Result<f64> {
    let a = (model.diffusion)(z1);
    let ch = Cholesky::new(a).ok_or_else(|| Error::SingularA { point: z1.to_vec() })?;
    let diff = RealVector::from_iterator(z1.len(), z1.iter().zip(z2).map(|(a, b)| a - b));
    Ok(diff.dot(&ch.solve(&diff)))
}

/// Two synchronously coupled paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPath {
    pub first: Trajectory,
    pub second: Trajectory,
    pub energy: Vec<f64>,
}

fn couple_on_steps(
    model: &DiffusionModel,
    stepper: &Stepper,
    z1: &[f64],
    z2: &[f64],
    steps: &[usize],
    seed: u64,
    key: u64,
    mut record: impl FnMut(usize, &[f64], &[f64]) -> Result<()>,
) -> Result<()> {
    let mut ws = Workspace::new(model);
    let mut xi = vec![0.0; stepper.draws(model)];
    let mut rng = path_rng(seed, key);
    let (mut a, mut b) = (z1.to_vec(), z2.to_vec());
    check_state(&a, key, 0)?;
    check_state(&b, key, 0)?;
    let mut step = 0;
    for (k, &target) in steps.iter().enumerate() {
        while step < target {
            fill_normal(&mut rng, &mut xi);
            stepper.step(model, &mut a, &xi, &mut ws);
            stepper.step(model, &mut b, &xi, &mut ws);
            step += 1;
            check_state(&a, key, step)?;
            check_state(&b, key, step)?;
        }
        record(k, &a, &b)?;
    }
    Ok(())
}

pub fn couple(
    model: &DiffusionModel,
    z1: &[f64],
    z2: &[f64],
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<CoupledPath> {
    if z1.len() != model.dim || z2.len() != model.dim {
        return Err(Error::dims("coupled initial states have wrong dimension"));
    }
    let n = step_count(dt, horizon)?;
    let stepper = Stepper::new(model, dt)?;
    let steps: Vec<usize> = (0..=n).collect();
    let d = model.dim;
    let mut s1 = vec![0.0; (n + 1) * d];
    let mut s2 = vec![0.0; (n + 1) * d];
    let mut energy = vec![0.0; n + 1];
    couple_on_steps(model, &stepper, z1, z2, &steps, seed, 0, |k, a, b| {
        s1[k * d..(k + 1) * d].copy_from_slice(a);
        s2[k * d..(k + 1) * d].copy_from_slice(b);
        energy[k] = weighted_energy(model, a, b)?;
        Ok(())
    })?;
    let times: Vec<f64> = steps.iter().map(|&k| k as f64 * dt).collect();
    Ok(CoupledPath {
        first: Trajectory {
            times: times.clone(),
            dim: d,
            states: s1,
        },
        second: Trajectory {
            times,
            dim: d,
            states: s2,
        },
        energy,
    })
}

/// Weighted energies of `n_reps` coupled replicas at the snapshot times,
/// laid out `n_reps × times.len()`. Replica `r` uses stream `(seed, r)`.
pub fn coupled_energies(
    model: &DiffusionModel,
    z1: &[f64],
    z2: &[f64],
    dt: f64,
    times: &[f64],
    n_reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if z1.len() != model.dim || z2.len() != model.dim {
        return Err(Error::dims("coupled initial states have wrong dimension"));
    }
    let steps = snapshot_steps(times, dt)?;
    let stepper = Stepper::new(model, dt)?;
    let nt = times.len();
    let mut out = vec![0.0; n_reps * nt];
    out.par_chunks_mut(nt.max(1))
        .enumerate()
        .try_for_each(|(r, row)| {
            couple_on_steps(model, &stepper, z1, z2, &steps, seed, r as u64, |k, a, b| {
                row[k] = weighted_energy(model, a, b)?;
                Ok(())
            })
        })?;
    Ok(out)
}

/// Sample mean and standard error of an observable over a set of states.
pub fn mc_expectation<'a>(
    states: impl IntoIterator<Item = &'a [f64]>,
    observable: impl Fn(&[f64]) -> f64,
) -> (f64, f64) {
    let vals: Vec<f64> = states.into_iter().map(observable).collect();
    mean_se(&vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_ou(noise: f64) -> DiffusionModel {
        let s = (2.0 * noise).sqrt();
        DiffusionModel::new(
            1,
            1,
            Arc::new(|z, out| out[0] = -z[0]),
            Arc::new(move |_, out| out[0] = s),
            Arc::new(move |_| RealMatrix::from_element(1, 1, noise.max(1e-300))),
        )
    }

    #[test]
    fn zero_model_stays_put() {
        let m = DiffusionModel::new(
            2,
            2,
            Arc::new(|_, out| out.fill(0.0)),
            Arc::new(|_, out| out.fill(0.0)),
            Arc::new(|_| RealMatrix::identity(2, 2)),
        );
        let p = integrate(&m, &[1.0, -2.0], 0.01, 1.0, 3).unwrap();
        assert!(p.states.chunks(2).all(|s| s == [1.0, -2.0]));
    }

    #[test]
    fn euler_decay() {
        let p = integrate(&scalar_ou(0.0), &[1.0], 1e-3, 1.0, 0).unwrap();
        assert!((p.last()[0] - (-1f64).exp()).abs() < 1e-3);
        assert_eq!(p.times.len(), 1001);
    }

    #[test]
    fn horizon_must_be_multiple() {
        assert!(integrate(&scalar_ou(1.0), &[0.0], 0.3, 1.0, 0).is_err());
    }

    #[test]
    fn blowup_is_reported() {
        let m = DiffusionModel::new(
            1,
            1,
            Arc::new(|z, out| out[0] = z[0] * 100.0),
            Arc::new(|_, out| out[0] = 0.0),
            Arc::new(|_| RealMatrix::identity(1, 1)),
        );
        assert!(matches!(
            integrate(&m, &[1.0], 0.1, 10.0, 0),
            Err(Error::SimulationBlowup { path: 0, .. })
        ));
    }

    #[test]
    fn single_path_ensemble_matches_integrate() {
        let m = scalar_ou(1.0);
        let p = integrate(&m, &[0.5], 0.01, 1.0, 9).unwrap();
        let e = ensemble(&m, &|_| vec![0.5], 1, 0.01, &[1.0], 9).unwrap();
        assert_eq!(e.state(0, 0), p.last());
    }

    #[test]
    fn identical_starts_couple_to_zero() {
        let c = couple(&scalar_ou(1.0), &[0.3], &[0.3], 0.01, 1.0, 1).unwrap();
        assert!(c.energy.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn mc_expectation_of_constant() {
        let pts = [vec![1.0], vec![2.0], vec![3.0]];
        let (m, se) = mc_expectation(pts.iter().map(|v| v.as_slice()), |_| 4.0);
        assert_eq!((m, se), (4.0, 0.0));
    }

    #[test]
    fn binary_roundtrip() {
        let m = scalar_ou(1.0);
        let e = ensemble(&m, &|_| vec![0.0], 3, 0.1, &[0.0, 0.5], 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("ens.bin");
        e.write_binary(&f).unwrap();
        let (n, t, d, data) = PathEnsemble::read_binary(&f).unwrap();
        assert_eq!((n, t, d), (3, 2, 1));
        assert_eq!(data, e.states);
    }

    #[test]
    fn consistency_check_catches_wrong_noise() {
        let mut m = scalar_ou(1.0);
        assert!(m.check_consistency(&[vec![0.0]]).is_ok());
        m.noise = Arc::new(|_, out| out[0] = 1.0);
        assert!(m.check_consistency(&[vec![0.0]]).is_err());
    }
}
