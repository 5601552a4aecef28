//! Penalized VAR estimation under multivariate Student-t errors.
//!
//! The t law is treated as a Gaussian scale mixture e_t = φ_t/√τ_t with
//! τ_t ~ Gamma(ν/2, ν/2). Each EM iteration replaces τ_t by its posterior
//! mean and solves the Gaussian lasso on rows rescaled by √τ_t; the ECM
//! variant adds a conditional step for ν.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianFit, LassoData, RegularizationParams};
use crate::linalg;
use crate::special::{digamma, ln_gamma};
use crate::var::PanelMatrix;

/// ν used to start the ECM iterations.
pub const INITIAL_DOF: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DofBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for DofBounds {
    fn default() -> Self {
        Self {
            lower: 0.05,
            upper: 1000.0,
        }
    }
}

impl DofBounds {
    pub fn fixed(nu: f64) -> Self {
        Self {
            lower: nu,
            upper: nu,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lower > 0.0 && self.lower <= self.upper && self.upper.is_finite()) {
            return Err(Error::Parameter(format!(
                "invalid degrees-of-freedom bounds [{}, {}]",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    fn clamp(&self, nu: f64) -> f64 {
        nu.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Penalty selection for every M-step.
    pub regularization: RegularizationParams,
    /// Relative change of the weighted objective that ends the iterations.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Cap on the alternations of each M-step, which is warm-started.
    pub m_step_max_iter: usize,
    /// Search interval for ν in the ECM.
    pub dof_bounds: DofBounds,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            regularization: RegularizationParams::default(),
            tolerance: 1e-6,
            max_iter: 200,
            m_step_max_iter: 1,
            dof_bounds: DofBounds::default(),
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        self.regularization.validate()?;
        self.dof_bounds.validate()?;
        if !(self.tolerance > 0.0) || self.max_iter == 0 || self.m_step_max_iter == 0 {
            return Err(Error::Parameter(
                "tolerance must be positive and iteration caps at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TlassoFit {
    /// Stacked (J·P)×J coefficients [B̂_1ᵀ; …; B̂_Pᵀ].
    pub coefficients: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub dof: f64,
    /// True when ν̂ sits on a search bound instead of solving its equation.
    pub dof_on_bound: bool,
    /// Last E-step weights τ̂_t.
    pub weights: Vec<f64>,
    /// Weighted penalized objective at the last iteration.
    pub objective: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Weighted objective after each M-step.
    pub objective_trace: Vec<f64>,
    /// Penalized negative t log-likelihood (per observation) after each M-step.
    pub likelihood_trace: Vec<f64>,
    pub dof_trace: Vec<f64>,
}

/// ν and Ω of a centered multivariate t density.
#[derive(Debug, Clone)]
pub struct TDensityParams {
    nu: f64,
    omega: DMatrix<f64>,
    log_det_omega: f64,
}

impl TDensityParams {
    pub fn new(nu: f64, omega: DMatrix<f64>) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::Parameter(format!(
                "degrees of freedom must be positive, got {nu}"
            )));
        }
        let log_det_omega = linalg::log_det_spd(&omega, "precision matrix")?;
        Ok(Self {
            nu,
            omega,
            log_det_omega,
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn dimension(&self) -> usize {
        self.omega.nrows()
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    fn normalizer(&self) -> f64 {
        let (nu, j) = (self.nu, self.dimension() as f64);
        ln_gamma((nu + j) / 2.0) + 0.5 * self.log_det_omega
            - 0.5 * j * (PI * nu).ln()
            - ln_gamma(nu / 2.0)
    }
}

fn mahalanobis(e: &[f64], omega: &DMatrix<f64>) -> f64 {
    let j = e.len();
    let mut acc = 0.0;
    for c in 0..j {
        let mut inner = 0.0;
        for r in 0..j {
            inner += omega[(r, c)] * e[r];
        }
        acc += e[c] * inner;
    }
    acc
}

fn row(m: &DMatrix<f64>, t: usize) -> Vec<f64> {
    m.row(t).iter().copied().collect()
}

/// log of Γ((ν+J)/2)|Ω|^{1/2} / [(πν)^{J/2} Γ(ν/2) (1 + eᵀΩe/ν)^{(ν+J)/2}].
pub fn t_log_density(e: &[f64], params: &TDensityParams) -> Result<f64> {
    let j = params.dimension();
    if e.len() != j {
        return Err(Error::Dimension(format!(
            "residual has length {}, expected {j}",
            e.len()
        )));
    }
    let nu = params.nu;
    let d = mahalanobis(e, &params.omega);
    Ok(params.normalizer() - 0.5 * (nu + j as f64) * (d / nu).ln_1p())
}

/// Posterior means τ̂_t = (ν + J)/(ν + e_tᵀΩe_t).
pub fn e_step_weights(residuals: &DMatrix<f64>, omega: &DMatrix<f64>, nu: f64) -> Result<Vec<f64>> {
    let j = residuals.ncols();
    if omega.shape() != (j, j) {
        return Err(Error::Dimension(format!("omega must be {j}x{j}")));
    }
    if !(nu > 0.0) {
        return Err(Error::Parameter(format!(
            "degrees of freedom must be positive, got {nu}"
        )));
    }
    linalg::check_finite(residuals, "residuals")?;
    let numerator = nu + j as f64;
    Ok((0..residuals.nrows())
        .map(|t| numerator / (nu + mahalanobis(&row(residuals, t), omega)))
        .collect())
}

/// −ψ(ν/2) + log(ν/2) + (1/N)Σ(log τ̂_t − τ̂_t) + 1 + ψ((ν+J)/2) − log((ν+J)/2).
pub fn nu_equation_lhs(nu: f64, weights: &[f64], dimension: usize) -> f64 {
    let n = weights.len() as f64;
    let mean_term = weights.iter().map(|t| t.ln() - t).sum::<f64>() / n;
    let half = nu / 2.0;
    let shifted = (nu + dimension as f64) / 2.0;
    -digamma(half) + half.ln() + mean_term + 1.0 + digamma(shifted) - shifted.ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofSolution {
    pub nu: f64,
    pub on_bound: bool,
    /// Value of the estimating equation at `nu`.
    pub residual: f64,
}

const BRACKET_POINTS: usize = 120;

/// Root of [`nu_equation_lhs`] inside `bounds`: bracketed on a log grid,
/// refined by bisection. Without a sign change the bound with the smaller
/// |lhs| is returned and flagged.
pub fn solve_dof(weights: &[f64], dimension: usize, bounds: DofBounds) -> Result<DofSolution> {
    bounds.validate()?;
    if weights.is_empty() || weights.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(Error::Parameter(
            "weights must be positive and finite".into(),
        ));
    }
    let f = |nu: f64| nu_equation_lhs(nu, weights, dimension);
    if bounds.lower == bounds.upper {
        return Ok(DofSolution {
            nu: bounds.lower,
            on_bound: true,
            residual: f(bounds.lower),
        });
    }

    let grid = gaussian::log_grid(bounds.upper, bounds.lower / bounds.upper, BRACKET_POINTS);
    let mut grid: Vec<f64> = grid.into_iter().rev().collect();
    grid[0] = bounds.lower;
    grid[BRACKET_POINTS - 1] = bounds.upper;
    let values: Vec<f64> = grid.iter().map(|&nu| f(nu)).collect();

    for k in 0..BRACKET_POINTS - 1 {
        let (fa, fb) = (values[k], values[k + 1]);
        if fa == 0.0 {
            return Ok(DofSolution {
                nu: grid[k],
                on_bound: false,
                residual: 0.0,
            });
        }
        if fa.signum() != fb.signum() {
            let (mut a, mut b, mut fa) = (grid[k], grid[k + 1], fa);
            let mut mid = 0.5 * (a + b);
            for _ in 0..200 {
                mid = 0.5 * (a + b);
                let fm = f(mid);
                if fm == 0.0 || (b - a) <= 4.0 * f64::EPSILON * mid {
                    break;
                }
                if fm.signum() == fa.signum() {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                }
            }
            return Ok(DofSolution {
                nu: mid,
                on_bound: false,
                residual: f(mid),
            });
        }
    }

    let (lo, hi) = (values[0], values[BRACKET_POINTS - 1]);
    let nu = if lo.abs() <= hi.abs() {
        bounds.lower
    } else {
        bounds.upper
    };
    Ok(DofSolution {
        nu,
        on_bound: true,
        residual: f(nu),
    })
}

/// (1/2N)·tr[τ(Y−XB)Ω(Y−XB)ᵀ] − ½·log|Ω| + λ·Σ|B| + γ·Σ_{i≠j}|ω_ij|.
pub fn weighted_objective(
    panel: &PanelMatrix,
    weights: &[f64],
    coefficients: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    let data = scaled_data(panel, weights)?;
    gaussian::joint_objective(&data, coefficients, omega, lambda, gamma)
}

/// −(1/N)·Σ log t_ν(e_t; Ω) + λ·Σ|B| + γ·Σ_{i≠j}|ω_ij|.
pub fn penalized_t_nll(
    panel: &PanelMatrix,
    coefficients: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    nu: f64,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    let params = TDensityParams::new(nu, omega.clone())?;
    let residuals = panel.response() - panel.design() * coefficients;
    let n = residuals.nrows();
    let mut loglik = 0.0;
    for t in 0..n {
        loglik += t_log_density(&row(&residuals, t), &params)?;
    }
    Ok(-loglik / n as f64
        + lambda * gaussian::l1_norm(coefficients)
        + gamma * gaussian::off_diagonal_l1(omega))
}

fn scaled_data(panel: &PanelMatrix, weights: &[f64]) -> Result<LassoData> {
    let factors: Vec<f64> = weights.iter().map(|t| t.sqrt()).collect();
    LassoData::row_scaled(panel, &factors)
}

/// B̂_p = I for every lag.
fn initial_coefficients(dim: usize, order: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(dim * order, dim);
    for p in 0..order {
        for i in 0..dim {
            b[(p * dim + i, i)] = 1.0;
        }
    }
    b
}

/// Weighted M-step: the Gaussian lasso on √τ-scaled rows.
fn m_step(
    panel: &PanelMatrix,
    weights: &[f64],
    config: &EmConfig,
    coefficients: &DMatrix<f64>,
    omega: &DMatrix<f64>,
) -> Result<GaussianFit> {
    let data = scaled_data(panel, weights)?;
    let params = RegularizationParams {
        max_iter: config.regularization.max_iter.min(config.m_step_max_iter),
        ..config.regularization.clone()
    };
    gaussian::gaussian_lasso_from(&data, &params, coefficients.clone(), omega.clone())
}

struct Iterate {
    fit: GaussianFit,
    weights: Vec<f64>,
    nu: f64,
    on_bound: bool,
}

fn run_em(panel: &PanelMatrix, config: &EmConfig, fixed_nu: Option<f64>) -> Result<TlassoFit> {
    config.validate()?;
    let (j, p) = (panel.dim(), panel.order());
    let mut nu = match fixed_nu {
        Some(nu) => nu,
        None => config.dof_bounds.clamp(INITIAL_DOF),
    };
    let mut omega = DMatrix::identity(j, j);
    let mut coefficients = initial_coefficients(j, p);
    let mut residuals = panel.response() - panel.design() * &coefficients;

    let mut objective_trace = Vec::new();
    let mut likelihood_trace = Vec::new();
    let mut dof_trace = Vec::new();
    let mut previous: Option<f64> = None;
    let mut last: Option<Iterate> = None;
    let mut converged = false;

    for _ in 0..config.max_iter {
        let weights = e_step_weights(&residuals, &omega, nu)?;
        let fit = m_step(panel, &weights, config, &coefficients, &omega)?;
        residuals = panel.response() - panel.design() * &fit.coefficients;
        omega = fit.precision.clone();
        coefficients = fit.coefficients.clone();

        let (weights, on_bound) = match fixed_nu {
            Some(_) => (weights, false),
            None => {
                // Second E-step with the new (B, Ω) and the current ν.
                let refreshed = e_step_weights(&residuals, &omega, nu)?;
                let solution = solve_dof(&refreshed, j, config.dof_bounds)?;
                nu = solution.nu;
                (refreshed, solution.on_bound)
            }
        };

        let objective = fit.objective;
        if !objective.is_finite() {
            return Err(Error::Numerical("non-finite weighted objective".into()));
        }
        objective_trace.push(objective);
        likelihood_trace.push(penalized_t_nll(
            panel,
            &fit.coefficients,
            &omega,
            nu,
            fit.lambda,
            fit.gamma,
        )?);
        dof_trace.push(nu);
        last = Some(Iterate {
            fit,
            weights,
            nu,
            on_bound,
        });

        if let Some(prev) = previous {
            if (objective - prev).abs() <= config.tolerance * prev.abs().max(1e-12) {
                converged = true;
                break;
            }
        }
        previous = Some(objective);
    }

    let Iterate {
        fit,
        weights,
        nu,
        on_bound,
    } = last.expect("at least one iteration");
    Ok(TlassoFit {
        coefficients: fit.coefficients,
        precision: fit.precision,
        dof: nu,
        dof_on_bound: on_bound,
        weights,
        objective: fit.objective,
        lambda: fit.lambda,
        gamma: fit.gamma,
        iterations: objective_trace.len(),
        converged,
        objective_trace,
        likelihood_trace,
        dof_trace,
    })
}

/// EM for the t-lasso with known ν.
pub fn em_fixed_nu(panel: &PanelMatrix, nu: f64, config: &EmConfig) -> Result<TlassoFit> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Parameter(format!(
            "degrees of freedom must be positive and finite, got {nu}"
        )));
    }
    run_em(panel, config, Some(nu))
}

/// ECM for the t-lasso with ν estimated inside `config.dof_bounds`.
pub fn ecm_estimate(panel: &PanelMatrix, config: &EmConfig) -> Result<TlassoFit> {
    run_em(panel, config, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cauchy_mode() {
        let params = TDensityParams::new(1.0, DMatrix::identity(1, 1)).unwrap();
        assert_relative_eq!(
            t_log_density(&[0.0], &params).unwrap(),
            (1.0 / PI).ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn gaussian_limit_of_density() {
        let params = TDensityParams::new(1e6, DMatrix::identity(1, 1)).unwrap();
        let normal = -0.5 * (2.0 * PI).ln() - 0.5;
        assert!((t_log_density(&[1.0], &params).unwrap() - normal).abs() < 1e-4);
    }

    #[test]
    fn density_is_symmetric() {
        let omega = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let params = TDensityParams::new(3.5, omega).unwrap();
        let a = t_log_density(&[0.7, -1.2], &params).unwrap();
        let b = t_log_density(&[-0.7, 1.2], &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weight_formula() {
        let zero = DMatrix::zeros(1, 2);
        let w = e_step_weights(&zero, &DMatrix::identity(2, 2), 3.0).unwrap();
        assert_relative_eq!(w[0], 5.0 / 3.0);
        // eᵀΩe = 1² + 2² = 5 with Ω = I.
        let e = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let w = e_step_weights(&e, &DMatrix::identity(2, 2), 3.0).unwrap();
        assert_relative_eq!(w[0], 0.625, epsilon = 1e-15);
        let w = e_step_weights(&e, &DMatrix::identity(2, 2), 1e12).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn weights_validate_inputs() {
        let e = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(e_step_weights(&e, &DMatrix::identity(2, 2), 0.0).is_err());
        assert!(e_step_weights(&e, &DMatrix::identity(3, 3), 1.0).is_err());
    }

    #[test]
    fn unit_weights_push_dof_to_upper_bound() {
        let weights = vec![1.0; 50];
        let solution = solve_dof(&weights, 4, DofBounds::default()).unwrap();
        assert!(solution.on_bound);
        assert_eq!(solution.nu, 1000.0);
    }

    #[test]
    fn dof_root_solves_equation() {
        // Weights typical of ν ≈ 3 residuals.
        let weights: Vec<f64> = (0..200)
            .map(|k| 0.2 + 1.6 * ((k * 37 % 200) as f64 / 200.0))
            .collect();
        let solution = solve_dof(&weights, 3, DofBounds::default()).unwrap();
        assert!(!solution.on_bound);
        assert!(solution.residual.abs() < 1e-8);
        let fixed = solve_dof(&weights, 3, DofBounds::fixed(7.0)).unwrap();
        assert_eq!(fixed.nu, 7.0);
        assert!(fixed.on_bound);
    }

    #[test]
    fn initial_coefficients_are_identity_blocks() {
        let b = initial_coefficients(2, 2);
        assert_eq!(b.as_slice(), &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }
}
