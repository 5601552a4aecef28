//! Penalized Gaussian estimation of a VAR: lasso on the autoregressive
//! coefficients given the precision matrix, graphical lasso on the
//! precision given the coefficients, and the alternating loop that tunes
//! both penalties by BIC.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::var::PanelMatrix;

/// Coordinate descent stops once no coefficient moves more than this.
pub const COORDINATE_TOLERANCE: f64 = 1e-10;

/// Target duality gap of the graphical lasso, in the scale of its objective.
pub const GLASSO_GAP: f64 = 1e-10;

/// Floor applied to residual variances so a perfectly fitted column keeps a
/// finite precision.
pub const MIN_VARIANCE: f64 = 1e-12;

const MAX_SWEEPS: usize = 100_000;
const MAX_GLASSO_SWEEPS: usize = 10_000;

/// How a penalty is chosen: a fixed value, an explicit descending grid, or
/// a data-driven log-spaced grid from the smallest fully-sparse value down
/// by `ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyGrid {
    Fixed(f64),
    Grid(Vec<f64>),
    Auto { points: usize, ratio: f64 },
}

impl PenaltyGrid {
    fn validate(&self, name: &str) -> Result<()> {
        match self {
            PenaltyGrid::Fixed(v) if !(*v >= 0.0 && v.is_finite()) => Err(Error::Parameter(
                format!("{name} must be a finite nonnegative value, got {v}"),
            )),
            PenaltyGrid::Grid(g) => {
                if g.is_empty() {
                    return Err(Error::Parameter(format!("{name} grid is empty")));
                }
                if g.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::Parameter(format!(
                        "{name} grid entries must be positive"
                    )));
                }
                if g.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::Parameter(format!(
                        "{name} grid must be strictly descending"
                    )));
                }
                Ok(())
            }
            PenaltyGrid::Auto { points, ratio } => {
                if *points == 0 || !(*ratio > 0.0 && *ratio < 1.0) {
                    return Err(Error::Parameter(format!(
                        "{name} auto grid needs points >= 1 and 0 < ratio < 1"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn resolve(&self, top: f64) -> Vec<f64> {
        match self {
            PenaltyGrid::Fixed(v) => vec![*v],
            PenaltyGrid::Grid(g) => g.clone(),
            PenaltyGrid::Auto { points, ratio } => log_grid(top, *ratio, *points),
        }
    }
}

/// `points` log-spaced values from `top` down to `top * ratio`.
pub fn log_grid(top: f64, ratio: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![top];
    }
    let step = ratio.ln() / (points - 1) as f64;
    (0..points).map(|k| top * (step * k as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationParams {
    /// Penalty on the autoregressive coefficients.
    pub lambda: PenaltyGrid,
    /// Penalty on the off-diagonal precision entries.
    pub gamma: PenaltyGrid,
    /// Relative objective change that ends the alternation.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for RegularizationParams {
    fn default() -> Self {
        Self {
            lambda: PenaltyGrid::Auto {
                points: 20,
                ratio: 1e-3,
            },
            gamma: PenaltyGrid::Auto {
                points: 10,
                ratio: 1e-2,
            },
            tolerance: 1e-6,
            max_iter: 100,
        }
    }
}

impl RegularizationParams {
    pub fn fixed(lambda: f64, gamma: f64) -> Self {
        Self {
            lambda: PenaltyGrid::Fixed(lambda),
            gamma: PenaltyGrid::Fixed(gamma),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lambda.validate("lambda")?;
        self.gamma.validate("gamma")?;
        if !(self.tolerance > 0.0) || self.max_iter == 0 {
            return Err(Error::Parameter(
                "tolerance must be positive and max_iter at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Response, design and their cross products for one regression problem.
#[derive(Debug, Clone)]
pub struct LassoData {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    xtx: DMatrix<f64>,
    xty: DMatrix<f64>,
}

impl LassoData {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.nrows() != x.nrows() {
            return Err(Error::Dimension(format!(
                "response has {} rows, design {}",
                y.nrows(),
                x.nrows()
            )));
        }
        if y.nrows() == 0 || y.ncols() == 0 || x.ncols() == 0 {
            return Err(Error::InsufficientData("empty regression problem".into()));
        }
        linalg::check_finite(&y, "response")?;
        linalg::check_finite(&x, "design")?;
        let xtx = x.tr_mul(&x);
        let xty = x.tr_mul(&y);
        Ok(Self { y, x, xtx, xty })
    }

    pub fn from_panel(panel: &PanelMatrix) -> Self {
        Self::new(panel.response().clone(), panel.design().clone()).expect("panel is validated")
    }

    /// Multiplies row t of both Y and X by `factors[t]`.
    pub fn row_scaled(panel: &PanelMatrix, factors: &[f64]) -> Result<Self> {
        if factors.len() != panel.n_obs() {
            return Err(Error::Dimension(format!(
                "{} row factors for {} observations",
                factors.len(),
                panel.n_obs()
            )));
        }
        let mut y = panel.response().clone();
        let mut x = panel.design().clone();
        for (t, &f) in factors.iter().enumerate() {
            y.row_mut(t).scale_mut(f);
            x.row_mut(t).scale_mut(f);
        }
        Self::new(y, x)
    }

    pub fn n_obs(&self) -> usize {
        self.y.nrows()
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn response(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn residuals(&self, coefficients: &DMatrix<f64>) -> DMatrix<f64> {
        &self.y - &self.x * coefficients
    }

    /// (1/2N)·tr[(Y−XB)Ω(Y−XB)ᵀ]
    pub fn trace_term(&self, coefficients: &DMatrix<f64>, omega: &DMatrix<f64>) -> f64 {
        let r = self.residuals(coefficients);
        let rtr = r.tr_mul(&r);
        linalg::trace_of_product(omega, &rtr) / (2.0 * self.n_obs() as f64)
    }

    /// Smallest λ for which the zero matrix solves the B-step.
    pub fn lambda_max(&self, omega: &DMatrix<f64>) -> f64 {
        (&self.xty * omega).amax() / self.n_obs() as f64
    }
}

pub fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

pub fn off_diagonal_l1(m: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                acc += m[(i, j)].abs();
            }
        }
    }
    acc
}

pub fn count_nonzero(m: &DMatrix<f64>) -> usize {
    m.iter().filter(|v| **v != 0.0).count()
}

/// Nonzero entries strictly below the diagonal.
pub fn count_nonzero_lower(m: &DMatrix<f64>) -> usize {
    let mut count = 0;
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            if m[(i, j)] != 0.0 {
                count += 1;
            }
        }
    }
    count
}

/// B-step objective (1/2N)·tr[(Y−XB)Ω(Y−XB)ᵀ] + λ·Σ|B|.
pub fn b_objective(
    data: &LassoData,
    coefficients: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    data.trace_term(coefficients, omega) + lambda * l1_norm(coefficients)
}

/// Ω-step objective ½·tr(SΩ) − ½·log|Ω| + γ·Σ_{i≠j}|ω_ij| for S = EᵀE/N.
pub fn omega_objective(covariance: &DMatrix<f64>, omega: &DMatrix<f64>, gamma: f64) -> Result<f64> {
    let log_det = linalg::log_det_spd(omega, "precision matrix")?;
    Ok(
        0.5 * linalg::trace_of_product(covariance, omega) - 0.5 * log_det
            + gamma * off_diagonal_l1(omega),
    )
}

/// The joint penalized negative log-likelihood
/// (1/2N)·tr[(Y−XB)Ω(Y−XB)ᵀ] − ½·log|Ω| + λ·Σ|B| + γ·Σ_{i≠j}|ω_ij|.
pub fn joint_objective(
    data: &LassoData,
    coefficients: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    let log_det = linalg::log_det_spd(omega, "precision matrix")?;
    Ok(data.trace_term(coefficients, omega) - 0.5 * log_det
        + lambda * l1_norm(coefficients)
        + gamma * off_diagonal_l1(omega))
}

/// −2·loglik + df·log(n)
pub fn bic(loglik: f64, df: usize, n: f64) -> f64 {
    -2.0 * loglik + df as f64 * n.ln()
}

fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

/// Coordinate descent for the B-step, starting from `start`.
///
/// Every coordinate update is an exact univariate minimization, so the
/// objective never increases from `start`.
struct CoordinateDescent<'a> {
    xtx: &'a DMatrix<f64>,
    xty: &'a DMatrix<f64>,
    omega: &'a DMatrix<f64>,
    lambda: f64,
    n: f64,
    b: DMatrix<f64>,
    // G = Xᵀ(Y − XB)
    g: DMatrix<f64>,
}

impl CoordinateDescent<'_> {
    fn update(&mut self, r: usize, c: usize) -> f64 {
        let curvature = self.xtx[(r, r)] * self.omega[(c, c)] / self.n;
        let old = self.b[(r, c)];
        if curvature <= 0.0 {
            self.b[(r, c)] = 0.0;
            return old.abs();
        }
        let z = curvature * old + self.g.row(r).dot(&self.omega.column(c).transpose()) / self.n;
        let new = soft_threshold(z, self.lambda) / curvature;
        let delta = new - old;
        if delta != 0.0 {
            self.b[(r, c)] = new;
            self.g.column_mut(c).axpy(-delta, &self.xtx.column(r), 1.0);
        }
        delta.abs()
    }

    fn sweep(&mut self, coords: &[(usize, usize)]) -> f64 {
        coords
            .iter()
            .fold(0.0f64, |worst, &(r, c)| worst.max(self.update(r, c)))
    }

    fn active(&self) -> Vec<(usize, usize)> {
        let (k, j) = self.b.shape();
        (0..j)
            .flat_map(|c| (0..k).map(move |r| (r, c)))
            .filter(|&(r, c)| self.b[(r, c)] != 0.0)
            .collect()
    }

    /// Active-set Newton refinement: solves the smooth problem on the current
    /// sign pattern, shrinks the support at sign changes and grows it at
    /// optimality violations. Returns true once the optimality conditions hold.
    fn newton_polish(&mut self) -> bool {
        let (k, j) = self.b.shape();
        let mut signs = self.b.map(f64::signum);
        let mut x = self.b.clone();
        for _ in 0..POLISH_ROUNDS {
            let Some(target) = self.restricted_solve(&signs, &x) else {
                break;
            };
            let mut reach = 1.0f64;
            for (v, (old, sign)) in target.iter().zip(x.iter().zip(signs.iter())) {
                if *sign != 0.0 && v * sign <= 0.0 {
                    reach = reach.min(old / (old - v));
                }
            }
            if reach < 1.0 {
                let moved = &x + (&target - &x) * reach;
                for idx in 0..k * j {
                    let v = target[idx];
                    let old = x[idx];
                    if signs[idx] != 0.0 && v * signs[idx] <= 0.0 && old / (old - v) <= reach {
                        signs[idx] = 0.0;
                    }
                }
                x = moved.zip_map(&signs, |v, s| if s == 0.0 { 0.0 } else { v });
                continue;
            }
            x = target;
            let g = self.xty - self.xtx * &x;
            let gradient = &g * self.omega / self.n;
            let slack = self.lambda * (1.0 + 1e-9) + 1e-12 * gradient.amax().max(1.0);
            let mut entered = false;
            for idx in 0..k * j {
                if signs[idx] == 0.0 && gradient[idx].abs() > slack {
                    signs[idx] = gradient[idx].signum();
                    entered = true;
                }
            }
            if !entered {
                self.b = x;
                self.g = g;
                return true;
            }
        }
        self.g = self.xty - self.xtx * &x;
        self.b = x;
        false
    }

    /// Minimizes the smooth objective on the orthant face fixed by `signs`,
    /// by block-preconditioned conjugate gradients started at `start`.
    fn restricted_solve(&self, signs: &DMatrix<f64>, start: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let (k, j) = signs.shape();
        let mask = signs.map(|v| v != 0.0);
        let rows: Vec<Vec<usize>> = (0..j)
            .map(|c| (0..k).filter(|&r| mask[(r, c)]).collect())
            .collect();
        if rows.iter().all(|r| r.is_empty()) {
            return Some(DMatrix::zeros(k, j));
        }
        let mut blocks = Vec::with_capacity(j);
        for (c, rs) in rows.iter().enumerate() {
            let scale = self.omega[(c, c)] / self.n;
            let block =
                DMatrix::from_fn(rs.len(), rs.len(), |a, b| self.xtx[(rs[a], rs[b])] * scale);
            blocks.push(block.cholesky()?);
        }
        let restrict = |m: &mut DMatrix<f64>| {
            m.zip_apply(&mask, |v, keep| {
                if !keep {
                    *v = 0.0
                }
            })
        };
        let apply = |v: &DMatrix<f64>| {
            let mut out = self.xtx * v * self.omega / self.n;
            restrict(&mut out);
            out
        };
        let precondition = |m: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(k, j);
            for (c, rs) in rows.iter().enumerate() {
                if rs.is_empty() {
                    continue;
                }
                let v = nalgebra::DVector::from_iterator(rs.len(), rs.iter().map(|&r| m[(r, c)]));
                let z = blocks[c].solve(&v);
                for (a, &r) in rs.iter().enumerate() {
                    out[(r, c)] = z[a];
                }
            }
            out
        };

        let mut rhs = self.xty * self.omega / self.n - signs * self.lambda;
        restrict(&mut rhs);
        let target = 1e-15 * rhs.norm().max(f64::MIN_POSITIVE);
        let mut x = start.clone();
        restrict(&mut x);
        let mut residual = &rhs - apply(&x);
        let mut z = precondition(&residual);
        let mut direction = z.clone();
        let mut rz = residual.dot(&z);
        let limit = 4 * rows.iter().map(Vec::len).sum::<usize>() + 20;
        for _ in 0..limit {
            if residual.norm() <= target {
                return Some(x);
            }
            let hd = apply(&direction);
            let curvature = direction.dot(&hd);
            if !(curvature > 0.0) {
                break;
            }
            let step = rz / curvature;
            x += &direction * step;
            residual -= &hd * step;
            z = precondition(&residual);
            let rz_next = residual.dot(&z);
            direction = &z + &direction * (rz_next / rz);
            rz = rz_next;
        }
        (residual.norm() <= 1e-12 * rhs.norm()).then_some(x)
    }
}

const POLISH_ROUNDS: usize = 50;
const POLISH_EVERY: usize = 5;

fn solve_b(
    data: &LassoData,
    omega: &DMatrix<f64>,
    lambda: f64,
    start: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (k, j) = (data.n_features(), data.dim());
    let mut cd = CoordinateDescent {
        xtx: &data.xtx,
        xty: &data.xty,
        omega,
        lambda,
        n: data.n_obs() as f64,
        b: start.clone(),
        g: &data.xty - &data.xtx * start,
    };
    let all: Vec<(usize, usize)> = (0..j).flat_map(|c| (0..k).map(move |r| (r, c))).collect();

    let mut support = cd.b.map(|v| v.signum());
    for _ in 0..MAX_SWEEPS {
        if cd.sweep(&all) < COORDINATE_TOLERANCE {
            break;
        }
        if cd.b.map(|v| v.signum()) == support && cd.newton_polish() {
            continue;
        }
        support = cd.b.map(|v| v.signum());
        // Sweep only the active set for a while, then re-check all.
        let active = cd.active();
        for _ in 0..POLISH_EVERY {
            if cd.sweep(&active) < COORDINATE_TOLERANCE {
                break;
            }
        }
    }
    cd.b
}

/// Minimizes (1/2N)·tr[(Y−XB)Ω(Y−XB)ᵀ] + λ·Σ|B| by coordinate descent.
pub fn b_step(panel: &PanelMatrix, omega: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let data = LassoData::from_panel(panel);
    b_step_data(&data, omega, lambda, None)
}

pub fn b_step_data(
    data: &LassoData,
    omega: &DMatrix<f64>,
    lambda: f64,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let j = data.dim();
    if omega.shape() != (j, j) {
        return Err(Error::Dimension(format!("omega must be {j}x{j}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    if !linalg::is_spd(omega) {
        return Err(Error::Singular(
            "omega must be symmetric positive definite".into(),
        ));
    }
    let zero = DMatrix::zeros(data.n_features(), j);
    let start = match warm_start {
        Some(w) if w.shape() == zero.shape() => w,
        Some(_) => return Err(Error::Dimension("warm start has the wrong shape".into())),
        None => &zero,
    };
    Ok(solve_b(data, omega, lambda, start))
}

/// Sample covariance EᵀE/N with the diagonal floored at [`MIN_VARIANCE`].
pub fn residual_covariance(residuals: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if residuals.nrows() == 0 {
        return Err(Error::InsufficientData("no residual rows".into()));
    }
    linalg::check_finite(residuals, "residuals")?;
    let mut s = residuals.tr_mul(residuals) / residuals.nrows() as f64;
    for i in 0..s.nrows() {
        if s[(i, i)] < MIN_VARIANCE {
            s[(i, i)] = MIN_VARIANCE;
        }
    }
    Ok(linalg::symmetrize(&s))
}

/// Graphical-lasso state carried between calls along a γ grid.
#[derive(Debug, Clone)]
struct GlassoState {
    /// Estimated covariance W.
    w: DMatrix<f64>,
    /// Column i holds the regression of variable i on the others.
    beta: DMatrix<f64>,
}

/// Block coordinate descent of Friedman, Hastie & Tibshirani on
/// tr(SΩ) − log|Ω| + ρ·Σ_{i≠j}|ω_ij| with an unpenalized diagonal.
fn glasso(
    s: &DMatrix<f64>,
    rho: f64,
    warm: Option<&GlassoState>,
) -> Result<(DMatrix<f64>, GlassoState)> {
    let p = s.nrows();
    if rho == 0.0 || p == 1 {
        let omega = linalg::spd_inverse(s, "residual covariance")?;
        return Ok((
            omega,
            GlassoState {
                w: s.clone(),
                beta: DMatrix::zeros(p, p),
            },
        ));
    }
    // Work on the correlation scale with entrywise penalties ρ/(d_i d_j).
    let d: Vec<f64> = s.diagonal().iter().map(|v| v.sqrt()).collect();
    let r = DMatrix::from_fn(p, p, |i, k| {
        if i == k {
            1.0
        } else {
            s[(i, k)] / (d[i] * d[k])
        }
    });
    let penalty = DMatrix::from_fn(p, p, |i, k| rho / (d[i] * d[k]));
    let theta = match warm.map(|w| glasso_scaled(&r, &penalty, w.clone())) {
        Some(Ok(found)) => found,
        _ => glasso_scaled(
            &r,
            &penalty,
            GlassoState {
                w: r.clone(),
                beta: DMatrix::zeros(p, p),
            },
        )?,
    };
    let omega = DMatrix::from_fn(p, p, |i, k| theta.0[(i, k)] / (d[i] * d[k]));
    Ok((omega, theta.1))
}

fn glasso_scaled(
    r: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    mut state: GlassoState,
) -> Result<(DMatrix<f64>, GlassoState)> {
    let p = r.nrows();
    for i in 0..p {
        state.w[(i, i)] = 1.0;
    }
    let mut theta = DMatrix::zeros(p, p);
    for sweep in 0..MAX_GLASSO_SWEEPS {
        let mut max_change = 0.0f64;
        for i in 0..p {
            // Lasso: min ½βᵀW₁₁β − βᵀr₁₂ + Σ_k ρ_ki|β_k| over the coordinates k ≠ i.
            for _ in 0..MAX_SWEEPS {
                let mut change = 0.0f64;
                for k in 0..p {
                    if k == i {
                        continue;
                    }
                    let mut acc = r[(k, i)];
                    for l in 0..p {
                        if l != i && l != k {
                            acc -= state.w[(k, l)] * state.beta[(l, i)];
                        }
                    }
                    let new = soft_threshold(acc, penalty[(k, i)]) / state.w[(k, k)];
                    change = change.max((new - state.beta[(k, i)]).abs());
                    state.beta[(k, i)] = new;
                }
                if change < 1e-14 {
                    break;
                }
            }
            for k in 0..p {
                if k == i {
                    continue;
                }
                let mut w12 = 0.0;
                for l in 0..p {
                    if l != i {
                        w12 += state.w[(k, l)] * state.beta[(l, i)];
                    }
                }
                max_change = max_change.max((w12 - state.w[(k, i)]).abs());
                state.w[(k, i)] = w12;
                state.w[(i, k)] = w12;
            }
        }
        if !max_change.is_finite() {
            return Err(Error::Numerical("graphical lasso diverged".into()));
        }

        if max_change < 1e-12 || sweep + 1 == MAX_GLASSO_SWEEPS {
            theta = precision_from_state(&state);
            if !linalg::is_spd(&theta) {
                theta = linalg::spd_inverse(&state.w, "graphical lasso covariance")?;
            }
            let weighted_l1: f64 = (0..p)
                .flat_map(|i| (0..p).filter(move |&k| k != i).map(move |k| (i, k)))
                .map(|(i, k)| penalty[(i, k)] * theta[(i, k)].abs())
                .sum();
            let gap = 0.5 * (linalg::trace_of_product(r, &theta) + weighted_l1 - p as f64);
            if gap.abs() <= GLASSO_GAP || sweep + 1 == MAX_GLASSO_SWEEPS {
                break;
            }
        }
    }
    Ok((theta, state))
}

fn precision_from_state(state: &GlassoState) -> DMatrix<f64> {
    let p = state.w.nrows();
    let mut omega = DMatrix::zeros(p, p);
    for i in 0..p {
        let mut quad = 0.0;
        for k in 0..p {
            if k != i {
                quad += state.w[(k, i)] * state.beta[(k, i)];
            }
        }
        let diag = 1.0 / (state.w[(i, i)] - quad);
        omega[(i, i)] = diag;
        for k in 0..p {
            if k != i {
                omega[(k, i)] = -state.beta[(k, i)] * diag;
            }
        }
    }
    // Keep an entry only when both regressions agree it is nonzero.
    for i in 0..p {
        for k in 0..i {
            let (a, b) = (omega[(i, k)], omega[(k, i)]);
            let v = if a == 0.0 || b == 0.0 {
                0.0
            } else {
                0.5 * (a + b)
            };
            omega[(i, k)] = v;
            omega[(k, i)] = v;
        }
    }
    omega
}

/// Minimizes (1/2N)·tr[EΩEᵀ] − ½·log|Ω| + γ·Σ_{i≠j}|ω_ij|.
pub fn omega_step(residuals: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!(
            "gamma must be finite and nonnegative, got {gamma}"
        )));
    }
    let s = residual_covariance(residuals)?;
    // ½tr(SΩ) + γ‖Ω‖ is half the glasso objective at ρ = 2γ.
    Ok(glasso(&s, 2.0 * gamma, None)?.0)
}

/// Largest |S_ij| off the diagonal; the top of the automatic γ grid.
pub fn gamma_max(covariance: &DMatrix<f64>) -> f64 {
    let mut top = 0.0f64;
    for j in 0..covariance.ncols() {
        for i in 0..covariance.nrows() {
            if i != j {
                top = top.max(covariance[(i, j)].abs());
            }
        }
    }
    top
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianFit {
    /// Stacked (J·P)×J coefficients [B̂_1ᵀ; …; B̂_Pᵀ].
    pub coefficients: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub objective: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Joint objective after every alternation.
    pub objective_trace: Vec<f64>,
}

/// Chooses λ on its grid by BIC with Ω held fixed.
fn select_lambda(
    data: &LassoData,
    omega: &DMatrix<f64>,
    grid: &PenaltyGrid,
    previous: &DMatrix<f64>,
) -> (f64, DMatrix<f64>) {
    let n = data.n_obs();
    let top = data.lambda_max(omega);
    let candidates = grid.resolve(top);
    if let [lambda] = candidates.as_slice() {
        return (*lambda, solve_b(data, omega, *lambda, previous));
    }
    let mut warm = DMatrix::zeros(data.n_features(), data.dim());
    let mut best: Option<(f64, f64, DMatrix<f64>)> = None;
    for lambda in candidates {
        let b = solve_b(data, omega, lambda, &warm);
        let loglik = -(n as f64) * data.trace_term(&b, omega);
        let score = bic(loglik, count_nonzero(&b), n as f64);
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, lambda, b.clone()));
        }
        warm = b;
    }
    let (_, lambda, b) = best.expect("grid is nonempty");
    (lambda, b)
}

/// Chooses γ on its grid by BIC with B held fixed.
fn select_gamma(
    covariance: &DMatrix<f64>,
    n: usize,
    grid: &PenaltyGrid,
) -> Result<(f64, DMatrix<f64>)> {
    let candidates = grid.resolve(gamma_max(covariance));
    let mut warm: Option<GlassoState> = None;
    let mut best: Option<(f64, f64, DMatrix<f64>)> = None;
    for gamma in candidates {
        let (omega, state) = glasso(covariance, 2.0 * gamma, warm.as_ref())?;
        let loglik = -0.5 * n as f64 * linalg::trace_of_product(covariance, &omega);
        let score = bic(loglik, count_nonzero_lower(&omega), n as f64);
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, gamma, omega));
        }
        warm = Some(state);
    }
    let (_, gamma, omega) = best.expect("grid is nonempty");
    Ok((gamma, omega))
}

/// Alternating B/Ω minimization of the joint objective starting at Ω = I,
/// with λ and γ re-selected by BIC at every alternation.
pub fn gaussian_lasso(panel: &PanelMatrix, params: &RegularizationParams) -> Result<GaussianFit> {
    gaussian_lasso_data(&LassoData::from_panel(panel), params)
}

pub fn gaussian_lasso_data(data: &LassoData, params: &RegularizationParams) -> Result<GaussianFit> {
    let (j, k) = (data.dim(), data.n_features());
    gaussian_lasso_from(data, params, DMatrix::zeros(k, j), DMatrix::identity(j, j))
}

const MAX_CYCLE: usize = 6;

/// Algorithm as in [`gaussian_lasso_data`] started from a given (B, Ω).
pub fn gaussian_lasso_from(
    data: &LassoData,
    params: &RegularizationParams,
    coefficients: DMatrix<f64>,
    omega: DMatrix<f64>,
) -> Result<GaussianFit> {
    params.validate()?;
    let (j, k, n) = (data.dim(), data.n_features(), data.n_obs());
    if coefficients.shape() != (k, j) || omega.shape() != (j, j) {
        return Err(Error::Dimension(
            "starting point has the wrong shape".into(),
        ));
    }
    if !linalg::is_spd(&omega) {
        return Err(Error::Singular(
            "starting precision must be symmetric positive definite".into(),
        ));
    }
    let (mut coefficients, mut omega) = (coefficients, omega);
    let mut trace = Vec::new();
    let mut previous: Option<f64> = None;
    let mut converged = false;
    let (mut lambda, mut gamma) = (0.0, 0.0);

    for _ in 0..params.max_iter {
        let (new_lambda, new_b) = select_lambda(data, &omega, &params.lambda, &coefficients);
        lambda = new_lambda;
        coefficients = new_b;

        let s = residual_covariance(&data.residuals(&coefficients))?;
        let (new_gamma, candidate) = select_gamma(&s, n, &params.gamma)?;
        // Accept the Ω update only if it does not raise the Ω-step objective.
        if new_gamma != gamma
            || omega_objective(&s, &candidate, new_gamma)?
                <= omega_objective(&s, &omega, new_gamma)?
        {
            omega = candidate;
        }
        gamma = new_gamma;

        let objective = joint_objective(data, &coefficients, &omega, lambda, gamma)?;
        if !objective.is_finite() {
            return Err(Error::Numerical(
                "non-finite objective in the Gaussian lasso".into(),
            ));
        }
        trace.push(objective);
        if let Some(prev) = previous {
            if (objective - prev).abs() <= params.tolerance * prev.abs().max(1e-12) {
                converged = true;
                break;
            }
        }
        // Penalty re-selection can settle into a short cycle.
        let tail = trace.len() - 1;
        if (2..=MAX_CYCLE.min(tail)).any(|lag| {
            (objective - trace[tail - lag]).abs() <= params.tolerance * objective.abs().max(1e-12)
        }) {
            converged = true;
            break;
        }
        previous = Some(objective);
    }

    Ok(GaussianFit {
        coefficients,
        precision: omega,
        objective: *trace.last().expect("at least one iteration"),
        lambda,
        gamma,
        iterations: trace.len(),
        converged,
        objective_trace: trace,
    })
}

/// Unpenalized least squares B̂ = (XᵀX)⁻¹XᵀY with Ω̂ the inverse residual
/// covariance.
pub fn ls_estimate(panel: &PanelMatrix) -> Result<GaussianFit> {
    ls_estimate_data(&LassoData::from_panel(panel))
}

pub fn ls_estimate_data(data: &LassoData) -> Result<GaussianFit> {
    if data.n_obs() <= data.n_features() {
        return Err(Error::SingularDesign);
    }
    let chol = nalgebra::Cholesky::new(data.xtx.clone()).ok_or(Error::SingularDesign)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
        (lo.min(*d), hi.max(*d))
    });
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-14 {
        return Err(Error::SingularDesign);
    }
    let coefficients = chol.solve(&data.xty);
    let s = data
        .residuals(&coefficients)
        .tr_mul(&data.residuals(&coefficients))
        / data.n_obs() as f64;
    let precision = linalg::spd_inverse(&linalg::symmetrize(&s), "residual covariance")?;
    let objective = joint_objective(data, &coefficients, &precision, 0.0, 0.0)?;
    Ok(GaussianFit {
        coefficients,
        precision,
        objective,
        lambda: 0.0,
        gamma: 0.0,
        iterations: 1,
        converged: true,
        objective_trace: vec![objective],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::var::build_panel;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_series(t: usize, j: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = DMatrix::<f64>::zeros(t, j);
        for i in 0..t {
            for c in 0..j {
                let prev = if i > 0 { 0.5 * y[(i - 1, c)] } else { 0.0 };
                y[(i, c)] = prev + rng.sample::<f64, _>(StandardNormal);
            }
        }
        y
    }

    #[test]
    fn bic_values() {
        assert_eq!(bic(0.0, 0, 10.0), 0.0);
        let e2 = std::f64::consts::E.powi(2);
        assert_relative_eq!(bic(-10.0, 3, e2), 26.0, epsilon = 1e-12);
        assert!(bic(-10.0, 4, 50.0) > bic(-10.0, 3, 50.0));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(2.0, 1e-3, 20);
        assert_eq!(g.len(), 20);
        assert_relative_eq!(g[0], 2.0);
        assert_relative_eq!(g[19], 2e-3, epsilon = 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn grid_validation() {
        assert!(PenaltyGrid::Grid(vec![1.0, 1.0]).validate("l").is_err());
        assert!(PenaltyGrid::Grid(vec![1.0, 2.0]).validate("l").is_err());
        assert!(PenaltyGrid::Grid(vec![1.0, 0.0]).validate("l").is_err());
        assert!(PenaltyGrid::Grid(vec![2.0, 1.0]).validate("l").is_ok());
        assert!(PenaltyGrid::Fixed(-1.0).validate("l").is_err());
        assert!(PenaltyGrid::Fixed(0.0).validate("l").is_ok());
    }

    #[test]
    fn noiseless_least_squares_interpolates() {
        let x = random_series(40, 3, 1);
        let b_true = DMatrix::from_row_slice(3, 2, &[0.5, -0.2, 0.0, 0.3, 1.0, 0.1]);
        let y = &x * &b_true;
        let fit_data = LassoData::new(y, x).unwrap();
        let chol = nalgebra::Cholesky::new(fit_data.xtx.clone()).unwrap();
        assert_relative_eq!(chol.solve(&fit_data.xty), b_true, epsilon = 1e-10);
    }

    #[test]
    fn scalar_ar1_matches_textbook_slope() {
        let series = random_series(60, 1, 2);
        let panel = build_panel(&series, 1, false).unwrap();
        let fit = ls_estimate(&panel).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for t in 1..60 {
            num += series[(t, 0)] * series[(t - 1, 0)];
            den += series[(t - 1, 0)].powi(2);
        }
        assert_relative_eq!(fit.coefficients[(0, 0)], num / den, epsilon = 1e-12);
    }

    #[test]
    fn ls_rejects_short_panels() {
        let series = random_series(8, 4, 3);
        let panel = build_panel(&series, 2, false).unwrap();
        assert!(matches!(ls_estimate(&panel), Err(Error::SingularDesign)));
    }

    #[test]
    fn b_step_at_lambda_max_is_zero() {
        let series = random_series(50, 3, 4);
        let panel = build_panel(&series, 2, true).unwrap();
        let data = LassoData::from_panel(&panel);
        let omega = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.5]);
        let top = data.lambda_max(&omega);
        assert_eq!(count_nonzero(&b_step(&panel, &omega, top).unwrap()), 0);
        assert!(count_nonzero(&b_step(&panel, &omega, top * 0.9).unwrap()) > 0);
    }

    #[test]
    fn b_step_scalar_matches_grid_search() {
        let series = random_series(30, 1, 5);
        let panel = build_panel(&series, 1, false).unwrap();
        let data = LassoData::from_panel(&panel);
        let omega = DMatrix::from_element(1, 1, 1.0);
        let lambda = 0.05;
        let b = b_step(&panel, &omega, lambda).unwrap()[(0, 0)];
        let objective =
            |v: f64| b_objective(&data, &DMatrix::from_element(1, 1, v), &omega, lambda);
        let mut best = (f64::INFINITY, 0.0);
        let mut v = -2.0;
        while v <= 2.0 {
            let f = objective(v);
            if f < best.0 {
                best = (f, v);
            }
            v += 1e-6;
        }
        assert!((b - best.1).abs() < 2e-6, "cd {b} grid {}", best.1);
    }

    #[test]
    fn omega_step_limits() {
        let residuals = random_series(200, 2, 6);
        let s = residual_covariance(&residuals).unwrap();
        let omega = omega_step(&residuals, 0.0).unwrap();
        assert_relative_eq!(omega, s.clone().try_inverse().unwrap(), epsilon = 1e-6);
        let shrunk = omega_step(&residuals, 1e6).unwrap();
        for i in 0..2 {
            assert_relative_eq!(shrunk[(i, i)], 1.0 / s[(i, i)], epsilon = 1e-9);
        }
        assert_eq!(shrunk[(0, 1)], 0.0);
    }

    #[test]
    fn omega_step_rejects_bad_input() {
        let mut residuals = random_series(20, 2, 7);
        assert!(omega_step(&residuals, -1.0).is_err());
        residuals[(3, 1)] = f64::INFINITY;
        assert!(matches!(omega_step(&residuals, 0.1), Err(Error::Data(_))));
    }

    #[test]
    fn glasso_kkt_conditions_hold() {
        let residuals = random_series(80, 5, 8);
        let s = residual_covariance(&residuals).unwrap();
        let gamma = 0.05;
        let omega = omega_step(&residuals, gamma).unwrap();
        let w = omega.clone().try_inverse().unwrap();
        // ½(S − W) + γ·sign(Ω) = 0 off the diagonal; |S − W| ≤ 2γ where Ω = 0.
        for i in 0..5 {
            assert_relative_eq!(w[(i, i)], s[(i, i)], epsilon = 1e-8);
            for k in 0..5 {
                if i == k {
                    continue;
                }
                let diff = s[(i, k)] - w[(i, k)];
                if omega[(i, k)] == 0.0 {
                    assert!(diff.abs() <= 2.0 * gamma + 1e-8);
                } else {
                    assert_relative_eq!(
                        diff,
                        -2.0 * gamma * omega[(i, k)].signum(),
                        epsilon = 1e-7
                    );
                }
            }
        }
    }
}
