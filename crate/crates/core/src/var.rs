//! VAR data model: lagged design matrices, stationarity, VMA form,
//! iterated forecasts and simulation with Gaussian or multivariate-t
//! innovations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Companion spectral radius must stay below `1 - STATIONARITY_MARGIN`.
pub const STATIONARITY_MARGIN: f64 = 1e-10;

const SQUARINGS: usize = 60;

/// Steps discarded before a simulated path is returned.
pub const DEFAULT_BURN_IN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorKind {
    Gaussian,
    StudentT { dof: f64 },
}

/// Innovation law of a VAR: N(0, Ψ) or t_ν(0, Ψ).
#[derive(Debug, Clone)]
pub struct ErrorDistribution {
    kind: ErrorKind,
    scale: DMatrix<f64>,
    inverse_scale: DMatrix<f64>,
    scale_factor: DMatrix<f64>,
}

impl ErrorDistribution {
    pub fn new(kind: ErrorKind, scale: DMatrix<f64>) -> Result<Self> {
        if let ErrorKind::StudentT { dof } = kind {
            if !(dof > 0.0 && dof.is_finite()) {
                return Err(Error::Parameter(format!(
                    "degrees of freedom must be positive and finite, got {dof}"
                )));
            }
        }
        if linalg::max_asymmetry(&scale) > 1e-10 * (1.0 + scale.amax()) {
            return Err(Error::Parameter("scale matrix is not symmetric".into()));
        }
        let scale = linalg::symmetrize(&scale);
        let chol = linalg::cholesky(&scale, "scale matrix")?;
        let inverse_scale = linalg::symmetrize(&chol.inverse());
        Ok(Self {
            kind,
            scale_factor: chol.unpack(),
            scale,
            inverse_scale,
        })
    }

    pub fn gaussian(scale: DMatrix<f64>) -> Result<Self> {
        Self::new(ErrorKind::Gaussian, scale)
    }

    pub fn student_t(dof: f64, scale: DMatrix<f64>) -> Result<Self> {
        Self::new(ErrorKind::StudentT { dof }, scale)
    }

    /// Builds the distribution from an estimated precision Ω = Ψ⁻¹.
    pub fn from_precision(kind: ErrorKind, precision: &DMatrix<f64>) -> Result<Self> {
        let scale = linalg::spd_inverse(precision, "precision matrix")?;
        Self::new(kind, scale)
    }

    pub fn kind(&self) -> ErrorKind {
        self.kind
    }

    /// ν for a t law, `None` for a Gaussian one.
    pub fn dof(&self) -> Option<f64> {
        match self.kind {
            ErrorKind::Gaussian => None,
            ErrorKind::StudentT { dof } => Some(dof),
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.nrows()
    }

    /// Ψ
    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    /// Ω = Ψ⁻¹
    pub fn inverse_scale(&self) -> &DMatrix<f64> {
        &self.inverse_scale
    }

    /// Σ = Ψ·ν/(ν−2); a domain error when ν ≤ 2.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        match self.kind {
            ErrorKind::Gaussian => Ok(self.scale.clone()),
            ErrorKind::StudentT { dof } if dof > 2.0 => Ok(&self.scale * (dof / (dof - 2.0))),
            ErrorKind::StudentT { dof } => Err(Error::Domain(format!(
                "covariance of a t distribution requires dof > 2, got {dof}"
            ))),
        }
    }

    /// Σ when it exists, otherwise Ψ.
    pub fn dispersion(&self) -> DMatrix<f64> {
        self.covariance().unwrap_or_else(|_| self.scale.clone())
    }
}

/// y_t = Σ_p B_p y_{t−p} + e_t around an optional mean vector.
#[derive(Debug, Clone)]
pub struct VarModel {
    coefficients: Vec<DMatrix<f64>>,
    error: ErrorDistribution,
    means: DVector<f64>,
}

impl VarModel {
    pub fn new(coefficients: Vec<DMatrix<f64>>, error: ErrorDistribution) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::Parameter("VAR order must be at least 1".into()));
        }
        let dim = coefficients[0].nrows();
        if dim == 0 {
            return Err(Error::Parameter("VAR dimension must be at least 1".into()));
        }
        for (p, b) in coefficients.iter().enumerate() {
            if b.nrows() != dim || b.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "coefficient matrix for lag {} is {}x{}, expected {dim}x{dim}",
                    p + 1,
                    b.nrows(),
                    b.ncols()
                )));
            }
            linalg::check_finite(b, "coefficient matrix")?;
        }
        if error.dim() != dim {
            return Err(Error::Dimension(format!(
                "error distribution has dimension {}, coefficients {dim}",
                error.dim()
            )));
        }
        Ok(Self {
            coefficients,
            error,
            means: DVector::zeros(dim),
        })
    }

    /// Unstacks a (J·P)×J matrix whose block p holds B_pᵀ, the layout of
    /// the regression Y = X·B.
    pub fn from_stacked(
        stacked: &DMatrix<f64>,
        order: usize,
        error: ErrorDistribution,
    ) -> Result<Self> {
        let dim = stacked.ncols();
        if order == 0 || stacked.nrows() != dim * order {
            return Err(Error::Dimension(format!(
                "stacked coefficients are {}x{}, expected {}x{dim}",
                stacked.nrows(),
                dim,
                dim * order
            )));
        }
        let coefficients = (0..order)
            .map(|p| stacked.rows(p * dim, dim).transpose())
            .collect();
        Self::new(coefficients, error)
    }

    pub fn with_means(mut self, means: DVector<f64>) -> Result<Self> {
        if means.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "mean vector has length {}, expected {}",
                means.len(),
                self.dim()
            )));
        }
        self.means = means;
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn dim(&self) -> usize {
        self.coefficients[0].nrows()
    }

    pub fn coefficients(&self) -> &[DMatrix<f64>] {
        &self.coefficients
    }

    pub fn error(&self) -> &ErrorDistribution {
        &self.error
    }

    pub fn means(&self) -> &DVector<f64> {
        &self.means
    }

    /// The (J·P)×J regression layout [B_1ᵀ; …; B_Pᵀ].
    pub fn stacked(&self) -> DMatrix<f64> {
        let j = self.dim();
        let mut out = DMatrix::zeros(j * self.order(), j);
        for (p, b) in self.coefficients.iter().enumerate() {
            out.rows_mut(p * j, j).copy_from(&b.transpose());
        }
        out
    }

    pub fn companion(&self) -> DMatrix<f64> {
        let j = self.dim();
        let jp = j * self.order();
        let mut c = DMatrix::zeros(jp, jp);
        for (p, b) in self.coefficients.iter().enumerate() {
            c.view_mut((0, p * j), (j, j)).copy_from(b);
        }
        for k in j..jp {
            c[(k, k - j)] = 1.0;
        }
        c
    }

    /// Spectral radius of the companion matrix by Gelfand's formula
    /// ρ = lim ‖Cᵏ‖^{1/k}, with k = 2⁶⁰ reached by renormalized squaring.
    pub fn spectral_radius(&self) -> f64 {
        let mut power = self.companion();
        let mut log_norm = 0.0;
        let mut exponent = 1.0;
        for _ in 0..=SQUARINGS {
            let norm = power.norm();
            if norm == 0.0 || !norm.is_finite() {
                return if norm == 0.0 { 0.0 } else { f64::INFINITY };
            }
            power /= norm;
            log_norm += norm.ln() / exponent;
            power = &power * &power;
            exponent *= 2.0;
        }
        log_norm.exp()
    }

    pub fn is_stationary(&self) -> bool {
        self.spectral_radius() < 1.0 - STATIONARITY_MARGIN
    }
}

/// Companion-matrix stationarity test.
pub fn stationary(model: &VarModel) -> bool {
    model.is_stationary()
}

/// Y = X·B + E built from a T×J series.
#[derive(Debug, Clone)]
pub struct PanelMatrix {
    response: DMatrix<f64>,
    design: DMatrix<f64>,
    order: usize,
    centered: bool,
    means: DVector<f64>,
}

impl PanelMatrix {
    /// N = T − P
    pub fn n_obs(&self) -> usize {
        self.response.nrows()
    }

    pub fn dim(&self) -> usize {
        self.response.ncols()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn response(&self) -> &DMatrix<f64> {
        &self.response
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Column means removed at construction (zeros when not centered).
    pub fn means(&self) -> &DVector<f64> {
        &self.means
    }

    /// Recovers the raw T×J series on its original scale.
    pub fn reconstruct_series(&self) -> DMatrix<f64> {
        let (n, j, p) = (self.n_obs(), self.dim(), self.order);
        let mut out = DMatrix::zeros(n + p, j);
        // The first design row holds y_P, …, y_1 in blocks 1..P.
        for lag in 1..=p {
            let block = self.design.view((0, (lag - 1) * j), (1, j));
            out.row_mut(p - lag).copy_from(&block);
        }
        out.rows_mut(p, n).copy_from(&self.response);
        for mut row in out.row_iter_mut() {
            row += self.means.transpose();
        }
        out
    }

    /// The last P observations on the original scale, oldest first; the
    /// history needed to forecast beyond the sample.
    pub fn last_observations(&self) -> DMatrix<f64> {
        let series = self.reconstruct_series();
        let t = series.nrows();
        series.rows(t - self.order, self.order).into_owned()
    }
}

/// Builds the lagged regression for a VAR(P).
pub fn build_panel(series: &DMatrix<f64>, order: usize, center: bool) -> Result<PanelMatrix> {
    let (t, j) = series.shape();
    if order == 0 {
        return Err(Error::Parameter("VAR order must be at least 1".into()));
    }
    if j == 0 {
        return Err(Error::Dimension("series has no columns".into()));
    }
    if t <= order {
        return Err(Error::InsufficientData(format!(
            "series length {t} must exceed the VAR order {order}"
        )));
    }
    linalg::check_finite(series, "series")?;

    let means = if center {
        DVector::from_iterator(j, series.column_iter().map(|c| c.mean()))
    } else {
        DVector::zeros(j)
    };
    let mut work = series.clone();
    for mut row in work.row_iter_mut() {
        row -= means.transpose();
    }

    let n = t - order;
    let response = work.rows(order, n).into_owned();
    let mut design = DMatrix::zeros(n, j * order);
    for lag in 1..=order {
        design
            .view_mut((0, (lag - 1) * j), (n, j))
            .copy_from(&work.rows(order - lag, n));
    }

    // Block p of X is Y shifted down by p rows.
    for lag in 1..=order {
        for row in lag..n {
            for col in 0..j {
                if design[(row, (lag - 1) * j + col)] != response[(row - lag, col)] {
                    return Err(Error::Numerical("lag structure check failed".into()));
                }
            }
        }
    }

    Ok(PanelMatrix {
        response,
        design,
        order,
        centered: center,
        means,
    })
}

/// θ_0..θ_{H−1} of the moving-average representation.
#[derive(Debug, Clone)]
pub struct VmaCoefficients {
    thetas: Vec<DMatrix<f64>>,
}

impl VmaCoefficients {
    pub fn horizon(&self) -> usize {
        self.thetas.len()
    }

    pub fn thetas(&self) -> &[DMatrix<f64>] {
        &self.thetas
    }

    pub fn theta(&self, lag: usize) -> &DMatrix<f64> {
        &self.thetas[lag]
    }
}

/// θ_0 = I, θ_s = Σ_{i=1..min(s,P)} B_i θ_{s−i}.
pub fn to_vma(model: &VarModel, horizon: usize) -> Result<VmaCoefficients> {
    if horizon == 0 {
        return Err(Error::Parameter("VMA horizon must be at least 1".into()));
    }
    let j = model.dim();
    let mut thetas: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    thetas.push(DMatrix::identity(j, j));
    for s in 1..horizon {
        let mut theta = DMatrix::zeros(j, j);
        for (i, b) in model.coefficients().iter().enumerate().take(s) {
            theta += b * &thetas[s - i - 1];
        }
        thetas.push(theta);
    }
    Ok(VmaCoefficients { thetas })
}

/// Iterated point forecasts with future shocks set to zero. `history`
/// holds the last P observations on the original scale, oldest first.
pub fn forecast(model: &VarModel, history: &DMatrix<f64>, horizon: usize) -> Result<DMatrix<f64>> {
    let (p, j) = (model.order(), model.dim());
    if history.nrows() != p || history.ncols() != j {
        return Err(Error::Dimension(format!(
            "forecast history must be {p}x{j}, got {}x{}",
            history.nrows(),
            history.ncols()
        )));
    }
    linalg::check_finite(history, "forecast history")?;

    // lags[0] is the most recent centered observation.
    let mut lags: Vec<DVector<f64>> = (0..p)
        .map(|k| history.row(p - 1 - k).transpose() - model.means())
        .collect();
    let mut out = DMatrix::zeros(horizon, j);
    for step in 0..horizon {
        let mut next = DVector::zeros(j);
        for (b, y) in model.coefficients().iter().zip(&lags) {
            next += b * y;
        }
        out.row_mut(step)
            .copy_from(&(&next + model.means()).transpose());
        lags.rotate_right(1);
        lags[0] = next;
    }
    Ok(out)
}

/// n i.i.d. innovation rows drawn from `dist` with the caller's generator.
///
/// All Gaussian components are drawn before the mixing variables, so a
/// Gaussian law and a t law with very large ν share their normal draws
/// under the same seed.
pub fn sample_innovations<R: Rng + ?Sized>(
    n: usize,
    dist: &ErrorDistribution,
    rng: &mut R,
) -> DMatrix<f64> {
    let j = dist.dim();
    let mut z = DMatrix::zeros(n, j);
    for row in 0..n {
        for col in 0..j {
            z[(row, col)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    // Rows of Z·Lᵀ are N(0, L·Lᵀ = Ψ).
    let mut e = z * dist.scale_factor.transpose();
    if let ErrorKind::StudentT { dof } = dist.kind {
        let mixing = Gamma::new(dof / 2.0, 2.0 / dof).expect("dof validated at construction");
        for mut row in e.row_iter_mut() {
            let tau: f64 = mixing.sample(rng);
            row /= tau.sqrt();
        }
    }
    e
}

/// Seeded form of [`sample_innovations`].
pub fn sample_mvt(n: usize, dist: &ErrorDistribution, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_innovations(n, dist, &mut rng)
}

/// Simulates `length` observations after discarding `burn_in` steps that
/// start from a zero state. Means, if set, are added to the output.
pub fn simulate_var(
    model: &VarModel,
    length: usize,
    burn_in: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let radius = model.spectral_radius();
    if radius >= 1.0 - STATIONARITY_MARGIN {
        return Err(Error::NonStationary(radius));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, j) = (model.order(), model.dim());
    let total = burn_in + length;
    let shocks = sample_innovations(total, model.error(), &mut rng);

    let mut path = DMatrix::zeros(total + p, j);
    for step in 0..total {
        let now = step + p;
        let mut y = shocks.row(step).transpose();
        for (lag, b) in model.coefficients().iter().enumerate() {
            y += b * path.row(now - lag - 1).transpose();
        }
        path.row_mut(now).copy_from(&y.transpose());
    }
    let mut out = path.rows(p + burn_in, length).into_owned();
    for mut row in out.row_iter_mut() {
        row += model.means().transpose();
    }
    Ok(out)
}
