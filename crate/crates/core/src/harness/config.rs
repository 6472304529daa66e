//! JSON experiment configuration.

use serde::{Deserialize, Serialize};

use crate::criteria::IkbInputs;
use crate::error::{Error, Result};
use crate::linalg::{from_rows, GaussianState, RealMatrix, RealVector};
use crate::models::stiff::{Potential, StiffModel};
use crate::ou::BlockMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    OuSweep,
    CdCheck,
    SyncCouple,
    Ikb,
    AvgSteady,
    StiffSweep,
    CoeffCheck,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::OuSweep => "ou-sweep",
            Experiment::CdCheck => "cd-check",
            Experiment::SyncCouple => "sync-couple",
            Experiment::Ikb => "ikb",
            Experiment::AvgSteady => "avg-steady",
            Experiment::StiffSweep => "stiff-sweep",
            Experiment::CoeffCheck => "coeff-check",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Ou {
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
        dx: usize,
    },
    AvgDemo {
        alpha: f64,
    },
    StiffQuadratic {
        #[serde(rename = "H", default)]
        h: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        b: Option<Vec<f64>>,
        #[serde(rename = "B", default)]
        bmat: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        hess: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        lin: Option<Vec<f64>>,
        #[serde(default)]
        anisotropy: Option<f64>,
    },
    StiffDoubleWell {},
    DoubleWell {},
    Ikb(IkbInputs),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub gap_tol: f64,
    pub slope_band: [f64; 2],
    pub se_mult: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            gap_tol: 1e-3,
            slope_band: [0.7, 1.3],
            se_mult: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicSpec {
    pub z0: Vec<f64>,
    pub t: f64,
    #[serde(default)]
    pub n_paths: Option<usize>,
}

fn default_n_paths() -> usize {
    1000
}
fn default_dt() -> f64 {
    1e-3
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ModelSpec,
    #[serde(default)]
    pub eps_grid: Vec<f64>,
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "yes")]
    pub require_level1: bool,
    #[serde(default = "yes")]
    pub require_level2: bool,
    #[serde(default = "yes")]
    pub require_level3: bool,
    #[serde(default)]
    pub require_level4: bool,
    /// Defaults to true for `avg-steady` and false elsewhere.
    #[serde(default)]
    pub require_level3ss: Option<bool>,
    #[serde(default)]
    pub rho0: Option<GaussianSpec>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub growth: Option<f64>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub pairs: Option<Vec<[Vec<f64>; 2]>>,
    #[serde(default)]
    pub dynamic: Option<DynamicSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eps_grid.is_empty() {
            if self.eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(Error::config("eps_grid", "values must be positive and finite"));
            }
            if self.eps_grid.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::config("eps_grid", "must be strictly decreasing"));
            }
        }
        if self.times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::config("times", "values must be positive and finite"));
        }
        let t = &self.tolerances;
        if !(t.gap_tol > 0.0) {
            return Err(Error::config("tolerances.gap_tol", "must be positive"));
        }
        if !(t.se_mult > 0.0) {
            return Err(Error::config("tolerances.se_mult", "must be positive"));
        }
        if !(t.slope_band[0] > 0.0 && t.slope_band[1] > t.slope_band[0]) {
            return Err(Error::config("tolerances.slope_band", "must be an increasing pair of positive numbers"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", "must be positive"));
        }
        if self.n_paths < 2 {
            return Err(Error::config("n_paths", "must be at least 2"));
        }
        let needs_eps = matches!(
            self.experiment,
            Experiment::OuSweep
                | Experiment::SyncCouple
                | Experiment::AvgSteady
                | Experiment::StiffSweep
                | Experiment::CoeffCheck
        );
        if needs_eps && self.eps_grid.len() < 2 {
            return Err(Error::config("eps_grid", "needs at least two values"));
        }
        if matches!(self.experiment, Experiment::OuSweep | Experiment::SyncCouple) && self.times.is_empty() {
            return Err(Error::config("times", "needs at least one time"));
        }
        Ok(())
    }

    pub fn require_level3ss(&self) -> bool {
        self.require_level3ss
            .unwrap_or(self.experiment == Experiment::AvgSteady)
    }

    pub fn block_matrix(&self) -> Result<BlockMatrix> {
        match &self.model {
            ModelSpec::Ou { b, dx } => {
                let m = from_rows(b).map_err(|e| Error::config("model.B", e.to_string()))?;
                BlockMatrix::new(m, *dx)
            }
            _ => Err(Error::config("model.kind", "this experiment needs an `ou` model")),
        }
    }

    /// Like [`block_matrix`](Self::block_matrix) but without stability checks.
    pub fn block_matrix_unchecked(&self) -> Result<BlockMatrix> {
        match &self.model {
            ModelSpec::Ou { b, dx } => {
                let m = from_rows(b).map_err(|e| Error::config("model.B", e.to_string()))?;
                BlockMatrix::unchecked(m, *dx)
            }
            _ => Err(Error::config("model.kind", "this experiment needs an `ou` model")),
        }
    }

    pub fn initial_state(&self) -> Result<Option<GaussianState>> {
        let Some(spec) = &self.rho0 else {
            return Ok(None);
        };
        let cov = from_rows(&spec.cov).map_err(|e| Error::config("rho0.cov", e.to_string()))?;
        GaussianState::new(RealVector::from_vec(spec.mean.clone()), cov)
            .map(Some)
            .map_err(|e| Error::config("rho0", e.to_string()))
    }

    pub fn stiff_model(&self, eps: f64) -> Result<StiffModel> {
        match &self.model {
            ModelSpec::StiffQuadratic {
                h,
                b,
                bmat,
                hess,
                lin,
                anisotropy,
            } => {
                if h.is_none() && b.is_none() && bmat.is_none() && hess.is_none() && lin.is_none() {
                    return StiffModel::scalar_demo(anisotropy.unwrap_or(1.0), eps);
                }
                let h = from_rows(h.as_ref().ok_or_else(|| Error::config("model.H", "missing"))?)?;
                let (dx, dy) = (h.nrows(), h.ncols());
                let b = RealVector::from_vec(b.clone().unwrap_or_else(|| vec![0.0; dx]));
                let bmat = match bmat {
                    Some(rows) => from_rows(rows)?,
                    None => RealMatrix::identity(dx, dx),
                };
                let hess = match hess {
                    Some(rows) => from_rows(rows)?,
                    None => RealMatrix::identity(dx + dy, dx + dy),
                };
                let lin = RealVector::from_vec(lin.clone().unwrap_or_else(|| vec![0.0; dx + dy]));
                StiffModel::new(h, b, bmat, Potential::Quadratic { hess, lin }, eps)
            }
            ModelSpec::StiffDoubleWell {} => StiffModel::double_well(eps),
            _ => Err(Error::config("model.kind", "this experiment needs a stiff model")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_sweep() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment":"ou-sweep","model":{"kind":"ou","B":[[2,1],[1,2]],"dx":1},
                "eps_grid":[0.2,0.1],"times":[0.5]}"#,
        )
        .unwrap();
        assert_eq!(cfg.experiment, Experiment::OuSweep);
        assert_eq!(cfg.tolerances, Tolerances::default());
        assert!(cfg.require_level3 && !cfg.require_level4 && !cfg.require_level3ss());
    }

    #[test]
    fn reports_field_path() {
        let err = ExperimentConfig::from_json(
            r#"{"experiment":"ou-sweep","model":{"kind":"ou","B":[[2,1],[1,2]],"dx":1},
                "eps_grid":[0.2,0.1],"times":[0.5],"tolerances":{"gap_tol":"x"}}"#,
        )
        .unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "tolerances.gap_tol"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_increasing_grid_and_bad_tolerance() {
        let base = |extra: &str| {
            format!(
                r#"{{"experiment":"ou-sweep","model":{{"kind":"ou","B":[[1,0],[0,1]],"dx":1}},"times":[1]{extra}}}"#
            )
        };
        assert!(ExperimentConfig::from_json(&base(r#","eps_grid":[0.1,0.2]"#)).is_err());
        let e = ExperimentConfig::from_json(&base(
            r#","eps_grid":[0.2,0.1],"tolerances":{"gap_tol":-1}"#,
        ))
        .unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "tolerances.gap_tol"));
    }

    #[test]
    fn experiment_names_roundtrip() {
        for e in [
            Experiment::OuSweep,
            Experiment::CdCheck,
            Experiment::SyncCouple,
            Experiment::Ikb,
            Experiment::AvgSteady,
            Experiment::StiffSweep,
            Experiment::CoeffCheck,
        ] {
            assert_eq!(Experiment::parse(e.name()), Some(e));
        }
        assert_eq!(Experiment::parse("nope"), None);
    }
}
