//! Lag-order selection and the rolling-window forecasting and spillover
//! pipeline.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{self, count_nonzero, count_nonzero_lower, RegularizationParams};
use crate::linalg;
use crate::spillover::{self, NetworkExport, DEFAULT_HORIZON, DEFAULT_RETENTION};
use crate::study::{fit_var, Estimator};
use crate::tlasso::EmConfig;
use crate::var::{build_panel, forecast, PanelMatrix};
use crate::volatility::VolatilityPanel;

/// Estimator used to score candidate orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrderCriterion {
    Ls,
    #[default]
    GaussianLasso,
}

/// Gaussian log-likelihood of a fit at its own precision,
/// (N/2)(log|Ω| − tr(SΩ) − J·log 2π).
fn gaussian_loglik(
    panel: &PanelMatrix,
    coefficients: &DMatrix<f64>,
    omega: &DMatrix<f64>,
) -> Result<f64> {
    let residuals = panel.response() - panel.design() * coefficients;
    let n = residuals.nrows() as f64;
    let s = residuals.tr_mul(&residuals) / n;
    let log_det = linalg::log_det_spd(omega, "precision matrix")?;
    let j = omega.nrows() as f64;
    Ok(0.5
        * n
        * (log_det - linalg::trace_of_product(&s, omega) - j * (2.0 * std::f64::consts::PI).ln()))
}

/// BIC-minimizing order in 1..=max_order. Every candidate is fitted on the
/// same responses: the first max_order − P observations are dropped.
pub fn select_order(
    series: &DMatrix<f64>,
    max_order: usize,
    criterion: OrderCriterion,
    params: &RegularizationParams,
) -> Result<usize> {
    if max_order == 0 {
        return Err(Error::Parameter("max_order must be at least 1".into()));
    }
    if series.nrows() <= max_order + 1 {
        return Err(Error::InsufficientData(format!(
            "{} observations cannot support order {max_order}",
            series.nrows()
        )));
    }
    let mut best: Option<(f64, usize)> = None;
    for order in 1..=max_order {
        let rows = series
            .rows(max_order - order, series.nrows() - (max_order - order))
            .into_owned();
        let panel = build_panel(&rows, order, true)?;
        let fit = match criterion {
            OrderCriterion::Ls => gaussian::ls_estimate(&panel)?,
            OrderCriterion::GaussianLasso => gaussian::gaussian_lasso(&panel, params)?,
        };
        let df = count_nonzero(&fit.coefficients) + count_nonzero_lower(&fit.precision);
        let score = gaussian::bic(
            gaussian_loglik(&panel, &fit.coefficients, &fit.precision)?,
            df,
            panel.n_obs() as f64,
        );
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, order));
        }
    }
    Ok(best.expect("at least one order").1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RollingConfig {
    pub window: usize,
    pub horizons: Vec<usize>,
    pub max_order: usize,
    /// Fitted in every window; `tlasso_fixed` is not used here.
    pub estimators: Vec<Estimator>,
    pub order_criterion: OrderCriterion,
    pub spillover_horizon: usize,
    pub retention_quantile: f64,
    /// Window end dates whose spillover networks are exported.
    pub network_dates: Vec<NaiveDate>,
    pub regularization: RegularizationParams,
    pub em: EmConfig,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self {
            window: 220,
            horizons: vec![1, 5, 20],
            max_order: 3,
            estimators: vec![
                Estimator::Ls,
                Estimator::GaussianLasso,
                Estimator::TlassoEstimated,
            ],
            order_criterion: OrderCriterion::GaussianLasso,
            spillover_horizon: DEFAULT_HORIZON,
            retention_quantile: DEFAULT_RETENTION,
            network_dates: Vec::new(),
            regularization: RegularizationParams::default(),
            em: EmConfig::default(),
        }
    }
}

impl RollingConfig {
    pub fn validate(&self, length: usize) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Parameter(
                "horizons must be nonempty and at least 1".into(),
            ));
        }
        if self.max_order == 0 || self.spillover_horizon == 0 {
            return Err(Error::Parameter(
                "max_order and spillover_horizon must be positive".into(),
            ));
        }
        if self.window <= self.max_order + 1 {
            return Err(Error::Parameter(format!(
                "window {} is too short for order {}",
                self.window, self.max_order
            )));
        }
        if self.estimators.is_empty() || self.estimators.contains(&Estimator::TlassoFixed) {
            return Err(Error::Parameter(
                "rolling estimators must be a nonempty subset of ls, gaussian_lasso, tlasso_estimated".into(),
            ));
        }
        if !(self.retention_quantile > 0.0 && self.retention_quantile <= 1.0) {
            return Err(Error::Parameter(
                "retention quantile must be in (0, 1]".into(),
            ));
        }
        let longest = *self.horizons.iter().max().expect("nonempty");
        if length < self.window + longest {
            return Err(Error::InsufficientData(format!(
                "panel length {length} is below window {} + horizon {longest}",
                self.window
            )));
        }
        self.regularization.validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorWindow {
    /// h → mean absolute forecast error over the series; only horizons
    /// whose target lies inside the panel.
    pub mafe: BTreeMap<usize, f64>,
    pub spillover_index: f64,
    pub non_stationary: bool,
    pub dof: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowResult {
    /// Zero-based row of the window's last observation.
    pub end: usize,
    pub end_date: NaiveDate,
    pub order: usize,
    pub estimators: BTreeMap<Estimator, EstimatorWindow>,
    pub networks: BTreeMap<Estimator, NetworkExport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedWindow {
    pub end_date: NaiveDate,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RollingReport {
    pub config: RollingConfig,
    pub labels: Vec<String>,
    pub windows: Vec<WindowResult>,
    pub skipped: Vec<SkippedWindow>,
}

impl RollingReport {
    /// Windows whose h-step target is observed, with their MAFE per estimator.
    pub fn mafe_series(&self, horizon: usize, estimator: Estimator) -> Vec<(NaiveDate, f64)> {
        self.windows
            .iter()
            .filter_map(|w| {
                let value = w.estimators.get(&estimator)?.mafe.get(&horizon)?;
                Some((w.end_date, *value))
            })
            .collect()
    }

    /// Average of MAFE_t over the windows with an observed h-step target.
    pub fn aggregate_mafe(&self, horizon: usize, estimator: Estimator) -> Option<f64> {
        let series = self.mafe_series(horizon, estimator);
        (!series.is_empty())
            .then(|| series.iter().map(|(_, v)| v).sum::<f64>() / series.len() as f64)
    }
}

fn run_window(data: &VolatilityPanel, end: usize, config: &RollingConfig) -> Result<WindowResult> {
    let start = end + 1 - config.window;
    let window = data.log_vol.rows(start, config.window).into_owned();
    let order = select_order(
        &window,
        config.max_order,
        config.order_criterion,
        &config.regularization,
    )?;
    let panel = build_panel(&window, order, true)?;
    let history = window.rows(config.window - order, order).into_owned();
    let longest = *config.horizons.iter().max().expect("validated");
    let export = config.network_dates.contains(&data.dates[end]);

    let mut estimators = BTreeMap::new();
    let mut networks = BTreeMap::new();
    for &estimator in &config.estimators {
        let fitted = fit_var(&panel, estimator, None, &config.regularization, &config.em)?;
        let path = forecast(&fitted.model, &history, longest)?;
        let mut mafe = BTreeMap::new();
        for &h in &config.horizons {
            if end + h < data.len() {
                let predicted = path.row(h - 1);
                let actual = data.log_vol.row(end + h);
                mafe.insert(h, (predicted - actual).abs().mean());
            }
        }
        let spill = spillover::gfevd(&fitted.model, config.spillover_horizon)?;
        if export {
            networks.insert(
                estimator,
                spillover::extract_network(&spill, config.retention_quantile, &data.labels)?,
            );
        }
        estimators.insert(
            estimator,
            EstimatorWindow {
                mafe,
                spillover_index: spill.index,
                non_stationary: spill.non_stationary,
                dof: fitted.dof,
            },
        );
    }
    Ok(WindowResult {
        end,
        end_date: data.dates[end],
        order,
        estimators,
        networks,
    })
}

/// Fits every window [t−W+1, t] for t from W up to the last date with a
/// one-step target of the shortest horizon, in parallel. Each window is
/// centered, order-selected and fitted on its own rows only. Failed
/// windows are skipped and reported.
pub fn run_rolling(data: &VolatilityPanel, config: &RollingConfig) -> Result<RollingReport> {
    config.validate(data.len())?;
    let shortest = *config.horizons.iter().min().expect("validated");
    let ends: Vec<usize> = (config.window - 1..data.len() - shortest).collect();
    let outcomes: Vec<(usize, Result<WindowResult>)> = ends
        .par_iter()
        .map(|&end| (end, run_window(data, end, config)))
        .collect();

    let mut windows = Vec::new();
    let mut skipped = Vec::new();
    for (end, outcome) in outcomes {
        match outcome {
            Ok(w) => windows.push(w),
            Err(err) => {
                log::warn!("window ending {} skipped: {err}", data.dates[end]);
                skipped.push(SkippedWindow {
                    end_date: data.dates[end],
                    reason: err.to_string(),
                });
            }
        }
    }
    Ok(RollingReport {
        config: config.clone(),
        labels: data.labels.clone(),
        windows,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::{benchmark_model, DofSetting};
    use crate::var::{simulate_var, ErrorDistribution, VarModel};

    fn var1(seed: u64, length: usize) -> DMatrix<f64> {
        let b = DMatrix::from_row_slice(3, 3, &[0.7, 0.2, 0.0, 0.0, 0.6, 0.0, 0.1, 0.0, 0.5]);
        let m = VarModel::new(
            vec![b],
            ErrorDistribution::gaussian(DMatrix::identity(3, 3)).unwrap(),
        )
        .unwrap();
        simulate_var(&m, length, 100, seed).unwrap()
    }

    #[test]
    fn strong_var1_selects_order_one() {
        let params = RegularizationParams::default();
        let hits = (0..20)
            .filter(|s| {
                select_order(&var1(*s, 200), 4, OrderCriterion::GaussianLasso, &params).unwrap()
                    == 1
            })
            .count();
        assert!(hits >= 18, "{hits}/20");
    }

    #[test]
    fn white_noise_selects_order_one() {
        let m = VarModel::new(
            vec![DMatrix::zeros(3, 3)],
            ErrorDistribution::gaussian(DMatrix::identity(3, 3)).unwrap(),
        )
        .unwrap();
        let params = RegularizationParams::default();
        for seed in 0..5 {
            let y = simulate_var(&m, 150, 0, seed).unwrap();
            assert_eq!(select_order(&y, 3, OrderCriterion::Ls, &params).unwrap(), 1);
        }
    }

    fn constant_panel(length: usize) -> VolatilityPanel {
        let dates = (0..length)
            .map(|d| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(d as u64))
            .collect();
        VolatilityPanel::new(
            vec!["a".into(), "b".into()],
            dates,
            DMatrix::from_element(length, 2, -9.0),
        )
        .unwrap()
    }

    fn synthetic_panel(length: usize, seed: u64) -> VolatilityPanel {
        let model = benchmark_model(3, 2, DofSetting::Finite(4.0)).unwrap();
        let y = simulate_var(&model, length, 100, seed)
            .unwrap()
            .add_scalar(-8.0);
        let dates = (0..length)
            .map(|d| NaiveDate::from_ymd_opt(2021, 3, 1).unwrap() + chrono::Days::new(d as u64))
            .collect();
        VolatilityPanel::new(vec!["x".into(), "y".into(), "z".into()], dates, y).unwrap()
    }

    fn small_config() -> RollingConfig {
        RollingConfig {
            window: 40,
            horizons: vec![1, 3],
            max_order: 2,
            estimators: vec![Estimator::Ls, Estimator::GaussianLasso],
            ..Default::default()
        }
    }

    #[test]
    fn window_counts_follow_the_averaging_range() {
        let data = synthetic_panel(60, 3);
        let report = run_rolling(&data, &small_config()).unwrap();
        assert!(report.skipped.is_empty());
        assert_eq!(report.windows.len(), 60 - 40 - 1 + 1);
        assert_eq!(report.mafe_series(1, Estimator::Ls).len(), 60 - 40 - 1 + 1);
        assert_eq!(report.mafe_series(3, Estimator::Ls).len(), 60 - 40 - 3 + 1);
    }

    #[test]
    fn constant_panel_forecasts_exactly() {
        let config = RollingConfig {
            estimators: vec![Estimator::GaussianLasso],
            ..small_config()
        };
        let report = run_rolling(&constant_panel(50), &config).unwrap();
        assert!(!report.windows.is_empty());
        for h in [1, 3] {
            assert_eq!(
                report.aggregate_mafe(h, Estimator::GaussianLasso),
                Some(0.0)
            );
        }
    }

    #[test]
    fn future_rows_do_not_change_a_window() {
        let data = synthetic_panel(60, 5);
        let config = small_config();
        let end = 45;
        let base = run_window(&data, end, &config).unwrap();
        let mut perturbed = data.clone();
        for t in end + 4..perturbed.len() {
            perturbed.log_vol.row_mut(t).add_scalar_mut(3.0);
        }
        let other = run_window(&perturbed, end, &config).unwrap();
        assert_eq!(base.order, other.order);
        for (a, b) in base.estimators.values().zip(other.estimators.values()) {
            assert_eq!(a.spillover_index, b.spillover_index);
            assert_eq!(a.mafe, b.mafe);
        }
    }

    #[test]
    fn networks_are_exported_on_requested_dates() {
        let data = synthetic_panel(52, 9);
        let config = RollingConfig {
            network_dates: vec![data.dates[45]],
            ..small_config()
        };
        let report = run_rolling(&data, &config).unwrap();
        let with_network: Vec<_> = report
            .windows
            .iter()
            .filter(|w| !w.networks.is_empty())
            .collect();
        assert_eq!(with_network.len(), 1);
        assert_eq!(with_network[0].end_date, data.dates[45]);
    }

    #[test]
    fn short_panels_are_rejected() {
        assert!(matches!(
            run_rolling(&constant_panel(41), &small_config()),
            Err(Error::InsufficientData(_))
        ));
    }
}
