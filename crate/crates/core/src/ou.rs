//! Closed-form thermodynamics of the slow–fast Ornstein–Uhlenbeck family
//!
//! `dZ = −IᵉB Z dt + √(2Iᵉ) dW`, `Iᵉ = diag(ε⁻¹I_dx, I_dy)`,
//!
//! and of its averaged limit `dY = −C Y dt + √2 dW` with `C` the Schur
//! complement of `B₁₁` in `B`. Every functional is a Gaussian integral, so
//! nothing in this module samples.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    block_diag, expm, gaussian_kl, gaussian_quadratic_expectation, inv_spd, is_positively_stable,
    min_real_eigenvalue, schur_complement, solve_lyapunov, sym, GaussianState, RealMatrix,
    RealVector,
};
use crate::stats::{loglog_fit, nonincreasing_with_floor, richardson_linear, PowerFit};

/// Tolerance on the Lyapunov and divergence-free residuals of a constructed model.
pub const MODEL_RESIDUAL_TOL: f64 = 1e-9;

/// Drift matrix `B` with the first `dx` coordinates fast.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    b: RealMatrix,
    dx: usize,
}

impl BlockMatrix {
    /// Checks shape, positive stability of `B₁₁` and of the Schur complement `C`.
    pub fn new(b: RealMatrix, dx: usize) -> Result<Self> {
        let bm = Self::unchecked(b, dx)?;
        if dx > 0 {
            let b11 = bm.b11();
            if !is_positively_stable(&b11) {
                return Err(Error::NotStable {
                    min_real: min_real_eigenvalue(&b11),
                });
            }
        }
        let c = bm.schur()?;
        if !is_positively_stable(&c) {
            return Err(Error::NotStable {
                min_real: min_real_eigenvalue(&c),
            });
        }
        Ok(bm)
    }

    /// Only checks the shape. Used where `C` need not be stable, e.g. for
    /// curvature and coupling tests.
    pub fn unchecked(b: RealMatrix, dx: usize) -> Result<Self> {
        if b.nrows() != b.ncols() {
            return Err(Error::dims(format!(
                "B must be square, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if dx >= b.nrows() {
            return Err(Error::dims(format!(
                "fast dimension {dx} leaves no slow block in a {}x{} matrix",
                b.nrows(),
                b.ncols()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBounds("non-finite entry in B".into()));
        }
        Ok(Self { b, dx })
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.b
    }
    pub fn dx(&self) -> usize {
        self.dx
    }
    pub fn dy(&self) -> usize {
        self.b.nrows() - self.dx
    }
    pub fn dim(&self) -> usize {
        self.b.nrows()
    }
    pub fn b11(&self) -> RealMatrix {
        self.b.view((0, 0), (self.dx, self.dx)).into_owned()
    }
    pub fn b12(&self) -> RealMatrix {
        self.b.view((0, self.dx), (self.dx, self.dy())).into_owned()
    }
    pub fn b21(&self) -> RealMatrix {
        self.b.view((self.dx, 0), (self.dy(), self.dx)).into_owned()
    }
    pub fn b22(&self) -> RealMatrix {
        self.b
            .view((self.dx, self.dx), (self.dy(), self.dy()))
            .into_owned()
    }

    /// `C = B₂₂ − B₂₁B₁₁⁻¹B₁₂`.
    pub fn schur(&self) -> Result<RealMatrix> {
        schur_complement(&self.b, self.dx)
    }

    /// `Iᵉ = diag(ε⁻¹I_dx, I_dy)`.
    pub fn scaling(&self, eps: f64) -> RealMatrix {
        RealMatrix::from_diagonal(&RealVector::from_fn(self.dim(), |i, _| {
            if i < self.dx {
                1.0 / eps
            } else {
                1.0
            }
        }))
    }
}

/// Linear diffusion `dZ = −MZ dt + √(2A) dW` with Gaussian invariant law `N(0, Σ)`
/// and stationary force `K = Σ⁻¹ − A⁻¹M`, so that `γ(z) = AKz`.
pub trait OuModel: Sync {
    fn drift_matrix(&self) -> &RealMatrix;
    fn diffusion(&self) -> &RealMatrix;
    fn sigma(&self) -> &RealMatrix;
    fn sigma_inv(&self) -> &RealMatrix;
    fn force(&self) -> &RealMatrix;
    /// `None` for the averaged model.
    fn eps(&self) -> Option<f64>;

    fn dim(&self) -> usize {
        self.drift_matrix().nrows()
    }

    fn invariant(&self) -> GaussianState {
        GaussianState {
            mean: RealVector::zeros(self.dim()),
            cov: self.sigma().clone(),
        }
    }
}

/// The ε-family member.
#[derive(Debug, Clone)]
pub struct OuEps {
    pub block: BlockMatrix,
    pub eps: f64,
    pub ieps: RealMatrix,
    pub meps: RealMatrix,
    pub sigma: RealMatrix,
    pub sigma_inv: RealMatrix,
    pub k: RealMatrix,
}

impl OuEps {
    pub fn new(block: &BlockMatrix, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidBounds(format!("eps must be positive, got {eps}")));
        }
        let ieps = block.scaling(eps);
        let meps = &ieps * block.matrix();
        if !is_positively_stable(&meps) {
            return Err(Error::NotStable {
                min_real: min_real_eigenvalue(&meps),
            });
        }
        let q = &ieps * 2.0;
        let sigma = solve_lyapunov(&meps, &q)?;
        let res = (&meps * &sigma + &sigma * meps.transpose() - &q).norm();
        if res > MODEL_RESIDUAL_TOL * q.norm() {
            return Err(Error::DivergenceCheck { residual: res });
        }
        let sigma_inv = inv_spd(&sigma)?;
        let k = &sigma_inv - block.matrix();
        let model = Self {
            block: block.clone(),
            eps,
            ieps,
            meps,
            sigma,
            sigma_inv,
            k,
        };
        let div = model.divergence_residual();
        if div > MODEL_RESIDUAL_TOL {
            return Err(Error::DivergenceCheck { residual: div });
        }
        Ok(model)
    }

    /// Size of `Sym(Σ⁻¹IᵉK)`, which vanishes iff `∇·(γπ) = 0`, relative to
    /// the terms that cancel in `K = Σ⁻¹ − B`.
    pub fn divergence_residual(&self) -> f64 {
        let m = &self.sigma_inv * &self.ieps * &self.k;
        let scale = self.sigma_inv.norm()
            * self.ieps.norm()
            * (self.sigma_inv.norm() + self.block.matrix().norm());
        sym(&m).norm() / scale.max(f64::MIN_POSITIVE)
    }

    pub fn gamma(&self, z: &RealVector) -> RealVector {
        &self.ieps * (&self.k * z)
    }
}

impl OuModel for OuEps {
    fn drift_matrix(&self) -> &RealMatrix {
        &self.meps
    }
    fn diffusion(&self) -> &RealMatrix {
        &self.ieps
    }
    fn sigma(&self) -> &RealMatrix {
        &self.sigma
    }
    fn sigma_inv(&self) -> &RealMatrix {
        &self.sigma_inv
    }
    fn force(&self) -> &RealMatrix {
        &self.k
    }
    fn eps(&self) -> Option<f64> {
        Some(self.eps)
    }
}

/// The averaged slow model.
#[derive(Debug, Clone)]
pub struct OuBar {
    pub c: RealMatrix,
    pub sigma_y: RealMatrix,
    pub sigma_y_inv: RealMatrix,
    pub kbar: RealMatrix,
    identity: RealMatrix,
}

impl OuBar {
    pub fn new(block: &BlockMatrix) -> Result<Self> {
        let c = block.schur()?;
        let identity = RealMatrix::identity(c.nrows(), c.nrows());
        let q = &identity * 2.0;
        let sigma_y = solve_lyapunov(&c, &q)?;
        let res = (&c * &sigma_y + &sigma_y * c.transpose() - &q).norm();
        if res > MODEL_RESIDUAL_TOL * q.norm() {
            return Err(Error::DivergenceCheck { residual: res });
        }
        let sigma_y_inv = inv_spd(&sigma_y)?;
        let kbar = &sigma_y_inv - &c;
        Ok(Self {
            c,
            sigma_y,
            sigma_y_inv,
            kbar,
            identity,
        })
    }
}

impl OuModel for OuBar {
    fn drift_matrix(&self) -> &RealMatrix {
        &self.c
    }
    fn diffusion(&self) -> &RealMatrix {
        &self.identity
    }
    fn sigma(&self) -> &RealMatrix {
        &self.sigma_y
    }
    fn sigma_inv(&self) -> &RealMatrix {
        &self.sigma_y_inv
    }
    fn force(&self) -> &RealMatrix {
        &self.kbar
    }
    fn eps(&self) -> Option<f64> {
        None
    }
}

pub fn build_ou(block: &BlockMatrix, eps: f64) -> Result<OuEps> {
    OuEps::new(block, eps)
}

pub fn averaged_ou(block: &BlockMatrix) -> Result<OuBar> {
    OuBar::new(block)
}

/// Law at time `t` of the process started from `rho0`:
/// `m_t = e^{−Mt}m₀`, `S_t = Σ + e^{−Mt}(S₀ − Σ)e^{−Mᵀt}`.
pub fn forward_state<M: OuModel + ?Sized>(
    model: &M,
    rho0: &GaussianState,
    t: f64,
) -> Result<GaussianState> {
    if rho0.dim() != model.dim() {
        return Err(Error::dims(format!(
            "initial state has dimension {} but the model has {}",
            rho0.dim(),
            model.dim()
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidBounds(format!("time must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(rho0.clone());
    }
    let e = expm(model.drift_matrix(), -t)?;
    let sigma = model.sigma();
    let mean = &e * &rho0.mean;
    let cov = sigma + &e * (&rho0.cov - sigma) * e.transpose();
    Ok(GaussianState {
        mean,
        cov: sym(&cov),
    })
}

/// The five functionals at one `(t, ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThermoReport {
    pub t: f64,
    /// `None` means the averaged model.
    pub eps: Option<f64>,
    #[serde(rename = "F")]
    pub free_energy: f64,
    #[serde(rename = "I")]
    pub dissipation: f64,
    pub sigma_hk: f64,
    pub sigma_ex: f64,
    pub sigma_total: f64,
}

/// Functionals of a Gaussian law `N(m, S)` against the model's invariant law.
///
/// With `∇log u = Pz + S⁻¹m`, `P = Σ⁻¹ − S⁻¹`:
/// `I = E[∇log uᵀ A ∇log u]`, `σ_hk = E[(Kz)ᵀA(Kz)]` and
/// `σ = E[(Kz − ∇log u)ᵀA(Kz − ∇log u)]`, each computed on its own.
pub fn thermo_at<M: OuModel + ?Sized>(
    model: &M,
    state: &GaussianState,
    t: f64,
) -> Result<ThermoReport> {
    let d = model.dim();
    let a = model.diffusion();
    let s_inv = inv_spd(&state.cov)?;
    let p = model.sigma_inv() - &s_inv;
    let e = &s_inv * &state.mean;
    let free_energy = gaussian_kl(state, &model.invariant())?;
    let dissipation = gaussian_quadratic_expectation(state, &p, &e, a)?;
    let sigma_hk = gaussian_quadratic_expectation(state, model.force(), &RealVector::zeros(d), a)?;
    let sigma_total = gaussian_quadratic_expectation(state, &(model.force() - &p), &(-&e), a)?;
    Ok(ThermoReport {
        t,
        eps: model.eps(),
        free_energy,
        dissipation,
        sigma_hk,
        sigma_ex: dissipation,
        sigma_total,
    })
}

pub fn thermo_report<M: OuModel + ?Sized>(
    model: &M,
    rho0: &GaussianState,
    t: f64,
) -> Result<ThermoReport> {
    let state = forward_state(model, rho0, t)?;
    thermo_at(model, &state, t)
}

/// Stationary housekeeping rate `tr(KᵀAKΣ)`.
pub fn steady_sigma_hk<M: OuModel + ?Sized>(model: &M) -> Result<f64> {
    gaussian_quadratic_expectation(
        &model.invariant(),
        model.force(),
        &RealVector::zeros(model.dim()),
        model.diffusion(),
    )
}

/// `E_{ρ_t}‖Kᵉz − (0, ψy)‖²_{Iᵉ}`.
pub fn locking_residual(
    me: &OuEps,
    rho0: &GaussianState,
    t: f64,
    psi: &RealMatrix,
) -> Result<f64> {
    let dx = me.block.dx();
    let dy = me.block.dy();
    if psi.nrows() != dy || psi.ncols() != dy {
        return Err(Error::dims(format!(
            "psi is {}x{} but the slow dimension is {dy}",
            psi.nrows(),
            psi.ncols()
        )));
    }
    let state = forward_state(me, rho0, t)?;
    let lifted = block_diag(&RealMatrix::zeros(dx, dx), psi);
    let d = &me.k - lifted;
    gaussian_quadratic_expectation(&state, &d, &RealVector::zeros(me.block.dim()), &me.ieps)
}

/// `N(1, 0.25·Σᵉ)` at the given ε.
pub fn default_initial_state(block: &BlockMatrix, eps: f64) -> Result<GaussianState> {
    let me = OuEps::new(block, eps)?;
    GaussianState::new(RealVector::from_element(block.dim(), 1.0), &me.sigma * 0.25)
}

/// One `(ε, t)` cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub t: f64,
    #[serde(rename = "F_eps")]
    pub f_eps: f64,
    #[serde(rename = "F_bar")]
    pub f_bar: f64,
    #[serde(rename = "I_eps")]
    pub i_eps: f64,
    #[serde(rename = "I_bar")]
    pub i_bar: f64,
    pub shk_eps: f64,
    pub shk_bar: f64,
    pub stot_eps: f64,
    pub stot_bar: f64,
    #[serde(rename = "R_eps")]
    pub r_eps: f64,
}

/// Limits at `ε → 0` from linear extrapolation through the two smallest ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extrapolated {
    pub f_gap: f64,
    pub i_gap: f64,
    pub hk_gap: f64,
    pub total_gap: f64,
    pub residual: f64,
}

/// Log-log slopes of the gaps against ε over the smallest grid values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rates {
    pub f_gap: Option<PowerFit>,
    pub i_gap: Option<PowerFit>,
    pub hk_gap: Option<PowerFit>,
    pub residual: Option<PowerFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeVerdict {
    pub t: f64,
    pub level1: bool,
    pub level2: bool,
    pub level3: bool,
    pub level4: bool,
    pub raw_final: Extrapolated,
    pub extrapolated: Extrapolated,
    pub rates: Rates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdicts {
    pub level1: bool,
    pub level2: bool,
    pub level3: bool,
    pub level4: bool,
    pub level3ss: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub per_time: Vec<TimeVerdict>,
    pub verdicts: Verdicts,
    pub kappa: f64,
    /// `e^{−2κt}Iᵉ(t)` nonincreasing along the time grid for every ε.
    pub weighted_dissipation_monotone: bool,
}

/// Number of smallest ε values forming the tail for monotonicity checks.
pub const EPS_TAIL: usize = 3;
/// Number of smallest ε values used for rate fits.
pub const RATE_WINDOW: usize = 4;
/// Gaps below this are treated as already converged by the monotonicity test.
pub const GAP_FLOOR: f64 = 1e-12;

pub fn validate_eps_grid(eps_grid: &[f64]) -> Result<()> {
    if eps_grid.len() < 2 {
        return Err(Error::config("eps_grid", "needs at least two values"));
    }
    if eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::config("eps_grid", "values must be positive and finite"));
    }
    if eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("eps_grid", "must be strictly decreasing"));
    }
    Ok(())
}

fn tail<T: Copy>(xs: &[T], n: usize) -> &[T] {
    &xs[xs.len().saturating_sub(n)..]
}

fn gap_set(rows: &[&SweepRow], f: impl Fn(&SweepRow) -> f64) -> Vec<f64> {
    rows.iter().map(|r| f(r)).collect()
}

/// Verdicts at a single time from rows ordered by decreasing ε.
pub fn time_verdict(rows: &[&SweepRow], gap_tol: f64) -> TimeVerdict {
    let n = rows.len();
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let f_gap = gap_set(rows, |r| (r.f_eps - r.f_bar).abs());
    let i_gap = gap_set(rows, |r| (r.i_eps - r.i_bar).abs());
    let hk_gap = gap_set(rows, |r| r.shk_eps - r.shk_bar);
    let tot_gap = gap_set(rows, |r| r.stot_eps - r.stot_bar);
    let resid = gap_set(rows, |r| r.r_eps);

    let extrap = |v: &[f64]| richardson_linear(eps[n - 2], v[n - 2], eps[n - 1], v[n - 1]);
    let extrapolated = Extrapolated {
        f_gap: extrap(&f_gap),
        i_gap: extrap(&i_gap),
        hk_gap: extrap(&hk_gap),
        total_gap: extrap(&tot_gap),
        residual: extrap(&resid),
    };
    let raw_final = Extrapolated {
        f_gap: f_gap[n - 1],
        i_gap: i_gap[n - 1],
        hk_gap: hk_gap[n - 1],
        total_gap: tot_gap[n - 1],
        residual: resid[n - 1],
    };
    let fit = |v: &[f64]| {
        let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        loglog_fit(tail(&eps, RATE_WINDOW), tail(&abs, RATE_WINDOW))
    };
    let rates = Rates {
        f_gap: fit(&f_gap),
        i_gap: fit(&i_gap),
        hk_gap: fit(&hk_gap),
        residual: fit(&resid),
    };

    let converging = |v: &[f64], limit: f64| {
        nonincreasing_with_floor(tail(v, EPS_TAIL), GAP_FLOOR) && limit.abs() < gap_tol
    };
    let level1 = converging(&f_gap, extrapolated.f_gap);
    let level2 = level1 && converging(&i_gap, extrapolated.i_gap);
    let level3 = level2 && extrapolated.hk_gap > -gap_tol && extrapolated.total_gap > -gap_tol;
    let level4 = level3
        && extrapolated.hk_gap.abs() < gap_tol
        && extrapolated.total_gap.abs() < gap_tol
        && extrapolated.residual < gap_tol;
    TimeVerdict {
        t: rows[0].t,
        level1,
        level2,
        level3,
        level4,
        raw_final,
        extrapolated,
        rates,
    }
}

/// Re-derives per-time verdicts from sweep rows. Rows for each time are
/// taken in order of decreasing ε.
pub fn verdicts_from_rows(rows: &[SweepRow], gap_tol: f64) -> Vec<TimeVerdict> {
    let mut times: Vec<f64> = Vec::new();
    for r in rows {
        if !times.contains(&r.t) {
            times.push(r.t);
        }
    }
    times
        .iter()
        .map(|&t| {
            let mut sel: Vec<&SweepRow> = rows.iter().filter(|r| r.t == t).collect();
            sel.sort_by(|a, b| b.eps.total_cmp(&a.eps));
            time_verdict(&sel, gap_tol)
        })
        .collect()
}

pub fn combine(per_time: &[TimeVerdict]) -> Verdicts {
    Verdicts {
        level1: per_time.iter().all(|v| v.level1),
        level2: per_time.iter().all(|v| v.level2),
        level3: per_time.iter().all(|v| v.level3),
        level4: per_time.iter().all(|v| v.level4),
        level3ss: None,
    }
}

/// Closed-form ε-sweep. `rho0` defaults to [`default_initial_state`] at the
/// largest ε; the averaged model starts from its slow marginal.
pub fn ou_sweep(
    block: &BlockMatrix,
    rho0: Option<&GaussianState>,
    times: &[f64],
    eps_grid: &[f64],
    kappa: f64,
    gap_tol: f64,
) -> Result<SweepResult> {
    validate_eps_grid(eps_grid)?;
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::config("times", "must be a nonempty list of positive times"));
    }
    let rho0 = match rho0 {
        Some(r) => r.clone(),
        None => default_initial_state(block, eps_grid[0])?,
    };
    if rho0.dim() != block.dim() {
        return Err(Error::dims("initial state does not match B"));
    }
    let bar = OuBar::new(block)?;
    let slow0 = rho0.marginal(block.dx(), block.dy());
    let bar_reports: Vec<ThermoReport> = times
        .iter()
        .map(|&t| thermo_report(&bar, &slow0, t))
        .collect::<Result<_>>()?;

    let per_eps: Vec<(Vec<SweepRow>, bool)> = eps_grid
        .par_iter()
        .map(|&eps| -> Result<(Vec<SweepRow>, bool)> {
            let me = OuEps::new(block, eps)?;
            let mut rows = Vec::with_capacity(times.len());
            let mut weighted = Vec::with_capacity(times.len());
            for (t, rb) in times.iter().copied().zip(&bar_reports) {
                let re = thermo_report(&me, &rho0, t)?;
                let r_eps = locking_residual(&me, &rho0, t, &bar.kbar)?;
                weighted.push((t, (-2.0 * kappa * t).exp() * re.dissipation));
                rows.push(SweepRow {
                    eps,
                    t,
                    f_eps: re.free_energy,
                    f_bar: rb.free_energy,
                    i_eps: re.dissipation,
                    i_bar: rb.dissipation,
                    shk_eps: re.sigma_hk,
                    shk_bar: rb.sigma_hk,
                    stot_eps: re.sigma_total,
                    stot_bar: rb.sigma_total,
                    r_eps,
                });
            }
            weighted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let monotone = weighted
                .windows(2)
                .all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12) + 1e-300);
            Ok((rows, monotone))
        })
        .collect::<Result<_>>()?;

    let weighted_dissipation_monotone = per_eps.iter().all(|(_, m)| *m);
    let rows: Vec<SweepRow> = per_eps.into_iter().flat_map(|(r, _)| r).collect();
    let per_time = verdicts_from_rows(&rows, gap_tol);
    let verdicts = combine(&per_time);
    Ok(SweepResult {
        rows,
        per_time,
        verdicts,
        kappa,
        weighted_dissipation_monotone,
    })
}
