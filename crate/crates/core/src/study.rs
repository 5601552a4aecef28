//! Monte Carlo comparison of the estimators on a sparse VAR with Gaussian
//! or multivariate-t innovations.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::gaussian::{self, RegularizationParams};
use crate::tlasso::{self, EmConfig};
use crate::var::{
    build_panel, simulate_var, ErrorDistribution, ErrorKind, PanelMatrix, VarModel, DEFAULT_BURN_IN,
};

/// ν used by the fixed-ν t-Lasso when the innovations are Gaussian.
pub const GAUSSIAN_LIMIT_DOF: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ls,
    GaussianLasso,
    TlassoFixed,
    TlassoEstimated,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Ls,
        Estimator::GaussianLasso,
        Estimator::TlassoFixed,
        Estimator::TlassoEstimated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ls => "ls",
            Estimator::GaussianLasso => "gaussian_lasso",
            Estimator::TlassoFixed => "tlasso_fixed",
            Estimator::TlassoEstimated => "tlasso_estimated",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown estimator {s:?}")))
    }
}

/// Innovation law of a simulation setting: t with ν degrees of freedom,
/// or Gaussian (written `inf`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DofSetting {
    Finite(f64),
    Gaussian,
}

impl DofSetting {
    pub fn label(&self) -> String {
        match self {
            DofSetting::Finite(nu) => nu.to_string(),
            DofSetting::Gaussian => "inf".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DofSetting::Finite(nu) if !(*nu > 0.0 && nu.is_finite()) => Err(Error::Parameter(
                format!("degrees of freedom must be positive, got {nu}"),
            )),
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for DofSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "gaussian" => Ok(DofSetting::Gaussian),
            other => other
                .parse::<f64>()
                .map(DofSetting::Finite)
                .map_err(|_| Error::Parameter(format!("invalid degrees of freedom {s:?}"))),
        }
    }
}

impl Serialize for DofSetting {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DofSetting::Finite(nu) => serializer.serialize_f64(*nu),
            DofSetting::Gaussian => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for DofSetting {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(nu) => Ok(DofSetting::Finite(nu)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimStudyConfig {
    pub dim: usize,
    pub length: usize,
    pub order: usize,
    pub nu_list: Vec<DofSetting>,
    pub replicates: usize,
    pub estimators: Vec<Estimator>,
    pub base_seed: u64,
    pub burn_in: usize,
    pub regularization: RegularizationParams,
    pub em: EmConfig,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            length: 100,
            order: 2,
            nu_list: [1.0, 2.0, 3.0, 5.0, 10.0]
                .into_iter()
                .map(DofSetting::Finite)
                .chain([DofSetting::Gaussian])
                .collect(),
            replicates: 100,
            estimators: Estimator::ALL.to_vec(),
            base_seed: 1,
            burn_in: DEFAULT_BURN_IN,
            regularization: RegularizationParams::default(),
            em: EmConfig::default(),
        }
    }
}

impl SimStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Parameter("replicates must be at least 1".into()));
        }
        if self.dim == 0 || self.order == 0 {
            return Err(Error::Parameter(
                "dimension and order must be positive".into(),
            ));
        }
        if self.length <= self.order * (self.dim + 1) {
            return Err(Error::Parameter(format!(
                "length {} is too short for a VAR({}) in {} series",
                self.length, self.order, self.dim
            )));
        }
        if self.estimators.is_empty() {
            return Err(Error::Parameter("no estimators selected".into()));
        }
        for nu in &self.nu_list {
            nu.validate()?;
        }
        self.regularization.validate()
    }
}

/// Lag 1 carries 0.4 and lag 2 carries 0.2 on the diagonal and the first
/// row; higher lags are zero. Scale ψ_ij = 0.1^|i−j|.
pub fn benchmark_model(dim: usize, order: usize, nu: DofSetting) -> Result<VarModel> {
    let coefficients = (0..order)
        .map(|p| {
            let value = [0.4, 0.2].get(p).copied().unwrap_or(0.0);
            DMatrix::from_fn(dim, dim, |r, c| if r == c || r == 0 { value } else { 0.0 })
        })
        .collect();
    let scale = DMatrix::from_fn(dim, dim, |r, c| 0.1f64.powi((r as i32 - c as i32).abs()));
    let error = match nu {
        DofSetting::Finite(nu) => ErrorDistribution::student_t(nu, scale)?,
        DofSetting::Gaussian => ErrorDistribution::gaussian(scale)?,
    };
    VarModel::new(coefficients, error)
}

/// Mean absolute entrywise difference of two coefficient matrices.
pub fn maee(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() || truth.is_empty() {
        return Err(Error::Dimension("coefficient shapes differ".into()));
    }
    Ok((estimate - truth).abs().sum() / truth.len() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    /// MAEE per estimator; failures are `None`.
    pub maee: BTreeMap<Estimator, Option<f64>>,
    pub failures: BTreeMap<Estimator, String>,
    pub dof_estimate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SettingResult {
    pub nu: DofSetting,
    /// Mean MAEE over the replicates an estimator completed.
    pub maee: BTreeMap<Estimator, Option<f64>>,
    pub exclusions: BTreeMap<Estimator, usize>,
    pub dof_estimates: Vec<f64>,
    pub replicates: Vec<ReplicateResult>,
}

impl SettingResult {
    pub fn mean_dof(&self) -> Option<f64> {
        (!self.dof_estimates.is_empty())
            .then(|| self.dof_estimates.iter().sum::<f64>() / self.dof_estimates.len() as f64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub config: SimStudyConfig,
    pub settings: Vec<SettingResult>,
}

impl SimulationReport {
    pub fn setting(&self, nu: DofSetting) -> Option<&SettingResult> {
        self.settings.iter().find(|s| s.nu == nu)
    }
}

/// A fitted VAR with the penalties and ν̂ that produced it.
#[derive(Debug, Clone)]
pub struct FittedVar {
    pub model: VarModel,
    pub dof: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
}

/// Fits `estimator` to a panel. `fixed_dof` is required by the fixed-ν
/// t-Lasso and ignored otherwise.
pub fn fit_var(
    panel: &PanelMatrix,
    estimator: Estimator,
    fixed_dof: Option<f64>,
    regularization: &RegularizationParams,
    em: &EmConfig,
) -> Result<FittedVar> {
    let (coefficients, precision, kind, dof, penalties) = match estimator {
        Estimator::Ls => {
            let f = gaussian::ls_estimate(panel)?;
            (f.coefficients, f.precision, ErrorKind::Gaussian, None, None)
        }
        Estimator::GaussianLasso => {
            let f = gaussian::gaussian_lasso(panel, regularization)?;
            let penalties = Some((f.lambda, f.gamma));
            (
                f.coefficients,
                f.precision,
                ErrorKind::Gaussian,
                None,
                penalties,
            )
        }
        Estimator::TlassoFixed => {
            let nu = fixed_dof.ok_or_else(|| {
                Error::Parameter("the fixed-dof t-Lasso needs a degrees of freedom value".into())
            })?;
            let f = tlasso::em_fixed_nu(panel, nu, em)?;
            let penalties = Some((f.lambda, f.gamma));
            (
                f.coefficients,
                f.precision,
                ErrorKind::StudentT { dof: nu },
                Some(nu),
                penalties,
            )
        }
        Estimator::TlassoEstimated => {
            let f = tlasso::ecm_estimate(panel, em)?;
            let penalties = Some((f.lambda, f.gamma));
            let kind = ErrorKind::StudentT { dof: f.dof };
            (f.coefficients, f.precision, kind, Some(f.dof), penalties)
        }
    };
    let error = ErrorDistribution::from_precision(kind, &precision)?;
    let model = VarModel::from_stacked(&coefficients, panel.order(), error)?
        .with_means(panel.means().clone())?;
    Ok(FittedVar {
        model,
        dof,
        lambda: penalties.map(|p| p.0),
        gamma: penalties.map(|p| p.1),
    })
}

fn replicate_seed(base: u64, replicate: usize) -> u64 {
    base.wrapping_add(replicate as u64)
}

fn fit_replicate(
    config: &SimStudyConfig,
    model: &VarModel,
    nu: DofSetting,
    replicate: usize,
) -> Result<ReplicateResult> {
    let seed = replicate_seed(config.base_seed, replicate);
    let series = simulate_var(model, config.length, config.burn_in, seed)?;
    let panel = build_panel(&series, config.order, true)?;
    let truth = model.stacked();
    let mut maee_by = BTreeMap::new();
    let mut failures = BTreeMap::new();
    let mut dof_estimate = None;
    for &estimator in &config.estimators {
        let coefficients = match estimator {
            Estimator::Ls => gaussian::ls_estimate(&panel).map(|f| f.coefficients),
            Estimator::GaussianLasso => {
                gaussian::gaussian_lasso(&panel, &config.regularization).map(|f| f.coefficients)
            }
            Estimator::TlassoFixed => {
                let dof = match nu {
                    DofSetting::Finite(v) => v,
                    DofSetting::Gaussian => GAUSSIAN_LIMIT_DOF,
                };
                tlasso::em_fixed_nu(&panel, dof, &config.em).map(|f| f.coefficients)
            }
            Estimator::TlassoEstimated => tlasso::ecm_estimate(&panel, &config.em).map(|f| {
                dof_estimate = Some(f.dof);
                f.coefficients
            }),
        };
        match coefficients.and_then(|b| maee(&b, &truth)) {
            Ok(value) => {
                maee_by.insert(estimator, Some(value));
            }
            Err(err) => {
                log::warn!(
                    "nu {} replicate {replicate}: {estimator} failed: {err}",
                    nu.label()
                );
                maee_by.insert(estimator, None);
                failures.insert(estimator, err.to_string());
            }
        }
    }
    Ok(ReplicateResult {
        replicate,
        seed,
        maee: maee_by,
        failures,
        dof_estimate,
    })
}

/// Simulates every (ν, replicate) pair in parallel and averages MAEE per
/// estimator. Failed fits are excluded and counted.
pub fn run_simulation_study(config: &SimStudyConfig) -> Result<SimulationReport> {
    config.validate()?;
    let models = config
        .nu_list
        .iter()
        .map(|nu| benchmark_model(config.dim, config.order, *nu))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> = (0..config.nu_list.len())
        .flat_map(|s| (0..config.replicates).map(move |r| (s, r)))
        .collect();
    let results = tasks
        .par_iter()
        .map(|&(s, r)| fit_replicate(config, &models[s], config.nu_list[s], r))
        .collect::<Result<Vec<_>>>()?;

    let mut results = results.into_iter();
    let settings = config
        .nu_list
        .iter()
        .map(|&nu| {
            let replicates: Vec<ReplicateResult> =
                results.by_ref().take(config.replicates).collect();
            summarize(nu, &config.estimators, replicates)
        })
        .collect();
    Ok(SimulationReport {
        config: config.clone(),
        settings,
    })
}

fn summarize(
    nu: DofSetting,
    estimators: &[Estimator],
    replicates: Vec<ReplicateResult>,
) -> SettingResult {
    let mut maee_mean = BTreeMap::new();
    let mut exclusions = BTreeMap::new();
    for &estimator in estimators {
        let values: Vec<f64> = replicates
            .iter()
            .filter_map(|r| r.maee.get(&estimator).copied().flatten())
            .collect();
        exclusions.insert(estimator, replicates.len() - values.len());
        maee_mean.insert(
            estimator,
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
        );
    }
    let dof_estimates = replicates.iter().filter_map(|r| r.dof_estimate).collect();
    SettingResult {
        nu,
        maee: maee_mean,
        exclusions,
        dof_estimates,
        replicates,
    }
}
