//! Experiment dispatch, verdicts and file output.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::criteria::{cd_constant_diffusion, ikb_constants, ou_cd_rho, sync_contraction_test};
use crate::error::{Error, Result};
use crate::linalg::RealMatrix;
use crate::models::averaging::{hk_gap_mc, locking_gap_quadrature, make_averaging_demo, sigma_hk_mc};
use crate::models::stiff::{stiff_concentration, stiff_dynamic_check, stiff_phase_map, Potential, StiffModel};
use crate::ou::{ou_sweep, steady_sigma_hk, OuBar, OuEps, SweepResult};
use crate::rng::path_rng;
use crate::sde::DiffusionModel;
use crate::stats::loglog_fit;

use super::coeff::{coeff_convergence_avg, coeff_convergence_ou};
use super::config::{Experiment, ExperimentConfig, ModelSpec};
use super::steady::{steady_state_verdict, SteadyRow, SteadyVerdict};

/// Quadrature settings for the fibrewise locking gap of averaging models.
const LOCKING_HALF_WIDTH: f64 = 7.0;
const LOCKING_STEP: f64 = 0.05;
const GH_ORDER: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub csv: String,
    pub json: Value,
    pub pass: bool,
}

fn seed_for(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64) << 40)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Bool(b) => if *b { "1" } else { "0" }.to_string(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        Value::Array(a) => a.iter().map(cell).collect::<Vec<_>>().join(";"),
        Value::Object(_) => v.to_string(),
    }
}

/// Comma-separated table from records with a common set of fields. Arrays
/// are joined with `;`, booleans are written as 0/1.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let values: Vec<Map<String, Value>> = rows
        .iter()
        .map(|r| match serde_json::to_value(r)? {
            Value::Object(m) => Ok(m),
            _ => Err(Error::dims("CSV rows must serialize to objects")),
        })
        .collect::<Result<_>>()?;
    let Some(first) = values.first() else {
        return Ok(String::new());
    };
    let header: Vec<&String> = first.keys().collect();
    let mut out = header.iter().map(|h| h.as_str()).collect::<Vec<_>>().join(",");
    out.push('\n');
    for m in &values {
        let line: Vec<String> = header
            .iter()
            .map(|h| m.get(*h).map(cell).unwrap_or_default())
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn ou_sweep_csv(res: &SweepResult) -> Result<String> {
    #[derive(Serialize)]
    struct Row<'a> {
        #[serde(flatten)]
        row: &'a crate::ou::SweepRow,
        level1: bool,
        level2: bool,
        level3: bool,
        level4: bool,
    }
    let rows: Vec<Row> = res
        .rows
        .iter()
        .map(|r| {
            let v = res
                .per_time
                .iter()
                .find(|v| v.t == r.t)
                .ok_or_else(|| Error::dims("sweep row without a time verdict"))?;
            Ok(Row {
                row: r,
                level1: v.level1,
                level2: v.level2,
                level3: v.level3,
                level4: v.level4,
            })
        })
        .collect::<Result<_>>()?;
    to_csv(&rows)
}

fn ou_steady_rows(cfg: &ExperimentConfig) -> Result<Vec<SteadyRow>> {
    let block = cfg.block_matrix()?;
    let bar = steady_sigma_hk(&OuBar::new(&block)?)?;
    cfg.eps_grid
        .iter()
        .map(|&eps| {
            let s = steady_sigma_hk(&OuEps::new(&block, eps)?)?;
            Ok(SteadyRow {
                eps,
                shk_ss_eps: s,
                shk_ss_eps_se: 0.0,
                shk_ss_bar: bar,
                gap: s - bar,
                gap_se: 0.0,
            })
        })
        .collect()
}

fn run_ou_sweep(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let block = cfg.block_matrix()?;
    let kappa = match cfg.kappa {
        Some(k) => k,
        None => -ou_cd_rho(&block)?,
    };
    let rho0 = cfg.initial_state()?;
    let mut res = ou_sweep(
        &block,
        rho0.as_ref(),
        &cfg.times,
        &cfg.eps_grid,
        kappa,
        cfg.tolerances.gap_tol,
    )?;
    let steady = steady_state_verdict(ou_steady_rows(cfg)?, cfg.tolerances.gap_tol, 0.0);
    res.verdicts.level3ss = Some(steady.pass);
    let v = res.verdicts;
    let pass = (!cfg.require_level1 || v.level1)
        && (!cfg.require_level2 || v.level2)
        && (!cfg.require_level3 || v.level3)
        && (!cfg.require_level4 || v.level4)
        && (!cfg.require_level3ss() || steady.pass);
    let rates: Vec<Value> = res
        .per_time
        .iter()
        .map(|t| json!({"t": t.t, "rates": t.rates}))
        .collect();
    Ok(RunOutcome {
        csv: ou_sweep_csv(&res)?,
        json: json!({
            "verdicts": v,
            "rates": rates,
            "per_time": res.per_time,
            "kappa": res.kappa,
            "weighted_dissipation_monotone": res.weighted_dissipation_monotone,
            "steady_state": steady,
        }),
        pass,
    })
}

fn grid_points(cfg: &ExperimentConfig, default: (f64, f64, f64)) -> Result<Vec<Vec<f64>>> {
    let (lower, upper, step) = match &cfg.grid {
        Some(g) => (g.lower.clone(), g.upper.clone(), g.step),
        None => (vec![default.0], vec![default.1], default.2),
    };
    if lower.len() != upper.len() || lower.is_empty() || !(step > 0.0) {
        return Err(Error::config("grid", "needs matching bounds and a positive step"));
    }
    if lower.iter().zip(&upper).any(|(l, u)| !(u >= l)) {
        return Err(Error::config("grid", "upper bounds must not be below lower bounds"));
    }
    let counts: Vec<usize> = lower
        .iter()
        .zip(&upper)
        .map(|(l, u)| ((u - l) / step + 1e-9).floor() as usize + 1)
        .collect();
    let total: usize = counts.iter().product();
    Ok((0..total)
        .map(|mut k| {
            lower
                .iter()
                .zip(&counts)
                .map(|(l, &c)| {
                    let i = k % c;
                    k /= c;
                    l + i as f64 * step
                })
                .collect()
        })
        .collect())
}

fn run_cd_check(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    #[derive(Serialize)]
    struct Row {
        eps: Option<f64>,
        kappa: f64,
        satisfied: bool,
        worst_eigenvalue: f64,
        worst_point: Option<Vec<f64>>,
    }
    let rows: Vec<Row> = match &cfg.model {
        ModelSpec::Ou { .. } => {
            let block = cfg.block_matrix()?;
            let kappa = match cfg.kappa {
                Some(k) => k,
                None => -ou_cd_rho(&block)?,
            };
            let eps_grid = if cfg.eps_grid.is_empty() { vec![1.0] } else { cfg.eps_grid.clone() };
            let origin = vec![vec![0.0; block.dim()]];
            eps_grid
                .iter()
                .map(|&eps| {
                    let me = OuEps::new(&block, eps)?;
                    let a_inv = crate::linalg::inv(&me.ieps)?;
                    let v = cd_constant_diffusion(
                        |_| me.sigma_inv.clone(),
                        |_| me.k.clone(),
                        &a_inv,
                        &origin,
                        kappa,
                    )?;
                    Ok(Row {
                        eps: Some(eps),
                        kappa,
                        satisfied: v.satisfied,
                        worst_eigenvalue: v.worst_eigenvalue,
                        worst_point: v.worst_point,
                    })
                })
                .collect::<Result<_>>()?
        }
        ModelSpec::DoubleWell {} => {
            let kappa = cfg
                .kappa
                .ok_or_else(|| Error::config("kappa", "required for the double-well audit"))?;
            let grid = grid_points(cfg, (-2.0, 2.0, 0.01))?;
            if grid.iter().any(|p| p.len() != 1) {
                return Err(Error::config("grid", "the double well is one-dimensional"));
            }
            let v = cd_constant_diffusion(
                |z| RealMatrix::from_element(1, 1, 3.0 * z[0] * z[0] - 1.0),
                |_| RealMatrix::zeros(1, 1),
                &RealMatrix::identity(1, 1),
                &grid,
                kappa,
            )?;
            vec![Row {
                eps: None,
                kappa,
                satisfied: v.satisfied,
                worst_eigenvalue: v.worst_eigenvalue,
                worst_point: v.worst_point,
            }]
        }
        _ => return Err(Error::config("model.kind", "cd-check supports `ou` and `double-well`")),
    };
    let pass = rows.iter().all(|r| r.satisfied);
    Ok(RunOutcome {
        csv: to_csv(&rows)?,
        json: json!({ "verdicts": { "cd": pass }, "rows": rows }),
        pass,
    })
}

fn run_sync(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    #[derive(Serialize)]
    struct Row {
        eps: f64,
        #[serde(flatten)]
        row: crate::criteria::SyncRow,
    }
    let block = cfg.block_matrix_unchecked()?;
    let growth = match cfg.growth {
        Some(g) => g,
        None => -ou_cd_rho(&block)?,
    };
    let d = block.dim();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = match &cfg.pairs {
        Some(p) => p.iter().map(|[a, b]| (a.clone(), b.clone())).collect(),
        None => vec![(vec![1.0; d], vec![0.0; d])],
    };
    let mut rows = Vec::new();
    let mut max_ratio = f64::NEG_INFINITY;
    let mut pass = true;
    for (k, &eps) in cfg.eps_grid.iter().enumerate() {
        let me = OuEps::new(&block, eps)?;
        let model = DiffusionModel::from_ou(&me)?.with_exact_stepping()?;
        let rep = sync_contraction_test(
            &model,
            &pairs,
            &cfg.times,
            cfg.dt,
            growth,
            cfg.n_paths,
            seed_for(cfg.seed, k),
        )?;
        max_ratio = max_ratio.max(rep.max_ratio);
        pass &= rep.pass;
        rows.extend(rep.rows.into_iter().map(|row| Row { eps, row }));
    }
    Ok(RunOutcome {
        csv: to_csv(&rows)?,
        json: json!({
            "verdicts": { "sync": pass },
            "growth": growth,
            "max_ratio": max_ratio,
        }),
        pass,
    })
}

fn run_ikb(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let ModelSpec::Ikb(inputs) = &cfg.model else {
        return Err(Error::config("model.kind", "ikb needs an `ikb` model"));
    };
    let c = ikb_constants(inputs)?;
    Ok(RunOutcome {
        csv: to_csv(&[c])?,
        json: json!({ "verdicts": { "gap_holds": c.gap_holds }, "constants": c }),
        pass: c.gap_holds,
    })
}

fn run_avg_steady(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let tol = cfg.tolerances;
    let (rows, quadrature) = match &cfg.model {
        ModelSpec::Ou { .. } => (ou_steady_rows(cfg)?, None),
        ModelSpec::AvgDemo { alpha } => {
            let model = make_averaging_demo(*alpha);
            let sampler = model
                .stationary
                .clone()
                .ok_or_else(|| Error::SamplerNotConverged("no stationary sampler".into()))?;
            let mut rows = Vec::with_capacity(cfg.eps_grid.len());
            for (k, &eps) in cfg.eps_grid.iter().enumerate() {
                let stream = seed_for(cfg.seed, k);
                let states: Vec<Vec<f64>> = (0..cfg.n_paths)
                    .map(|i| sampler(&mut path_rng(stream, i as u64)))
                    .collect();
                let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
                let dm = model.diffusion_model(eps)?;
                let (shk, shk_se) = sigma_hk_mc(&dm, &refs)?;
                let (gap, gap_se) = hk_gap_mc(&model, &refs, GH_ORDER)?;
                rows.push(SteadyRow {
                    eps,
                    shk_ss_eps: shk,
                    shk_ss_eps_se: shk_se,
                    shk_ss_bar: shk - gap,
                    gap,
                    gap_se,
                });
            }
            let q = locking_gap_quadrature(&model, LOCKING_HALF_WIDTH, LOCKING_STEP, GH_ORDER)?;
            (rows, Some(q))
        }
        _ => return Err(Error::config("model.kind", "avg-steady supports `ou` and `avg-demo`")),
    };
    let verdict: SteadyVerdict = steady_state_verdict(rows, tol.gap_tol, tol.se_mult);
    let pass = !cfg.require_level3ss() || verdict.pass;
    Ok(RunOutcome {
        csv: to_csv(&verdict.rows)?,
        json: json!({
            "verdicts": { "level3ss": verdict.pass },
            "steady_state": verdict,
            "locking_gap_quadrature": quadrature,
        }),
        pass,
    })
}

/// `E|x − Hy − b|²` under the exact Gaussian Gibbs law.
fn expected_sq_residual(model: &StiffModel) -> Result<f64> {
    let (mean, cov) = model.gibbs_gaussian()?;
    let r = model.residual(mean.as_slice());
    let mut l = RealMatrix::zeros(model.dx, model.dim());
    for i in 0..model.dx {
        l[(i, i)] = 1.0;
        for j in 0..model.dy {
            l[(i, model.dx + j)] = -model.h[(i, j)];
        }
    }
    Ok(r.norm_squared() + (&l * cov * l.transpose()).trace())
}

fn run_stiff(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    #[derive(Serialize)]
    struct Row {
        #[serde(flatten)]
        report: crate::models::stiff::ConcentrationReport,
        expected_mean_sq_residual: Option<f64>,
    }
    let tol = cfg.tolerances;
    let mut rows = Vec::with_capacity(cfg.eps_grid.len());
    for (k, &eps) in cfg.eps_grid.iter().enumerate() {
        let model = cfg.stiff_model(eps)?;
        let report = stiff_concentration(&model, cfg.n_paths, seed_for(cfg.seed, k))?;
        let expected = match model.potential {
            Potential::Quadratic { .. } => Some(expected_sq_residual(&model)?),
            Potential::General { .. } => None,
        };
        rows.push(Row {
            report,
            expected_mean_sq_residual: expected,
        });
    }
    let w1_ok = rows
        .iter()
        .all(|r| r.report.w1_pushforward <= tol.se_mult * r.report.w1_se);
    let (residual_ok, residual_slope) = if rows.iter().all(|r| r.expected_mean_sq_residual.is_some()) {
        let ok = rows.iter().all(|r| {
            let e = r.expected_mean_sq_residual.unwrap_or(f64::NAN);
            (r.report.mean_sq_residual - e).abs() <= tol.se_mult * r.report.mean_sq_residual_se
        });
        (ok, None)
    } else {
        let eps: Vec<f64> = rows.iter().map(|r| r.report.eps).collect();
        let res: Vec<f64> = rows.iter().map(|r| r.report.mean_sq_residual).collect();
        let fit = loglog_fit(&eps, &res);
        let ok = fit.is_some_and(|f| {
            f.slope >= 2.0 * tol.slope_band[0] && f.slope <= 2.0 * tol.slope_band[1]
        });
        (ok, fit)
    };
    let mut pass = w1_ok && residual_ok;
    let dynamic = match &cfg.dynamic {
        Some(spec) => {
            let model = cfg.stiff_model(cfg.eps_grid[0])?;
            let f = |z: &[f64]| {
                let u = stiff_phase_map(&model, z);
                u.iter().map(|v| v.tanh()).sum::<f64>() / u.len() as f64
            };
            let drows = stiff_dynamic_check(
                &model,
                &spec.z0,
                &f,
                spec.t,
                &cfg.eps_grid,
                spec.n_paths.unwrap_or(cfg.n_paths),
                cfg.seed ^ 0xd1b5_4a32_d192_ed03,
            )?;
            let decreasing = drows.windows(2).all(|w| {
                let se = (w[0].gap_se.powi(2) + w[1].gap_se.powi(2)).sqrt();
                w[0].gap.abs() - w[1].gap.abs() > 2.0 * se
            });
            pass &= decreasing;
            Some(json!({ "rows": drows, "decreasing": decreasing }))
        }
        None => None,
    };
    Ok(RunOutcome {
        csv: to_csv(&rows)?,
        json: json!({
            "verdicts": {
                "residual": residual_ok,
                "w1": w1_ok,
                "dynamic": dynamic.as_ref().map(|d| d["decreasing"].clone()),
            },
            "residual_fit": residual_slope,
            "dynamic": dynamic,
        }),
        pass,
    })
}

fn run_coeff(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let tol = cfg.tolerances;
    let (table, expected_sup) = match &cfg.model {
        ModelSpec::Ou { .. } => {
            let block = cfg.block_matrix()?;
            (coeff_convergence_ou(&block, &cfg.eps_grid, cfg.n_paths, cfg.seed)?, None)
        }
        ModelSpec::AvgDemo { alpha } => {
            let model = make_averaging_demo(*alpha);
            let t = coeff_convergence_avg(&model, &cfg.eps_grid, cfg.n_paths, cfg.seed)?;
            (t, Some(2.0 * (1.0 + alpha * alpha)))
        }
        _ => return Err(Error::config("model.kind", "coeff-check supports `ou` and `avg-demo`")),
    };
    let exact_ok = table.max_exact_z.is_none_or(|z| z <= tol.se_mult);
    let sup_ok = table.sup_hk_proj.is_finite()
        && expected_sup.is_none_or(|e| {
            table
                .hk_proj
                .iter()
                .all(|(_, v, se)| (v - e).abs() <= tol.se_mult * se)
        });
    let pass = exact_ok && sup_ok;
    Ok(RunOutcome {
        csv: to_csv(&table.rows)?,
        json: json!({
            "verdicts": { "closed_form": exact_ok, "uniform_bound": sup_ok },
            "library_version": table.library_version,
            "hk_proj": table.hk_proj,
            "sup_hk_proj": table.sup_hk_proj,
            "expected_sup_hk_proj": expected_sup,
            "max_exact_z": table.max_exact_z,
        }),
        pass,
    })
}

/// Runs one configured experiment. The JSON carries the configuration echo,
/// the verdicts and the experiment's rates and diagnostics.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut out = match cfg.experiment {
        Experiment::OuSweep => run_ou_sweep(cfg)?,
        Experiment::CdCheck => run_cd_check(cfg)?,
        Experiment::SyncCouple => run_sync(cfg)?,
        Experiment::Ikb => run_ikb(cfg)?,
        Experiment::AvgSteady => run_avg_steady(cfg)?,
        Experiment::StiffSweep => run_stiff(cfg)?,
        Experiment::CoeffCheck => run_coeff(cfg)?,
    };
    let mut doc = Map::new();
    doc.insert("experiment".into(), json!(cfg.experiment.name()));
    doc.insert("config".into(), serde_json::to_value(cfg)?);
    doc.insert("pass".into(), json!(out.pass));
    if let Value::Object(m) = std::mem::take(&mut out.json) {
        doc.extend(m);
    }
    out.json = Value::Object(doc);
    Ok(out)
}

/// [`run`] followed by writing `<dir>/<experiment>.csv` and `.json`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    let out = run(cfg)?;
    std::fs::create_dir_all(dir)?;
    let name = cfg.experiment.name();
    std::fs::write(dir.join(format!("{name}.csv")), &out.csv)?;
    std::fs::write(
        dir.join(format!("{name}.json")),
        serde_json::to_string_pretty(&out.json)? + "\n",
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        #[derive(Serialize)]
        struct R {
            a: f64,
            ok: bool,
            v: Vec<f64>,
            n: Option<f64>,
        }
        let s = to_csv(&[R { a: 0.1, ok: true, v: vec![1.0, -2.5], n: None }]).unwrap();
        assert_eq!(s, "a,ok,v,n\n0.1,1,1.0;-2.5,\n");
    }
}
