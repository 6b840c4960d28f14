//! Point and quantile predictors fitted on the training split, plus the
//! selection and nonconformity scores derived from them.
//!
//! Models are plain linear functions `intercept + coefficients . x`. Fitting
//! is deterministic for a fixed input; once fitted a model is never mutated.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScopError};

/// Ridge penalty used when the least-squares design is rank deficient.
pub const RIDGE_LAMBDA: f64 = 1e-8;
/// Smoothing floor on `|residual|` in the reweighting step of the quantile fit.
pub const IRLS_EPSILON: f64 = 1e-6;
pub const IRLS_MAX_ITER: usize = 200;
pub const IRLS_TOL: f64 = 1e-8;

/// Rows of features in `R^d`, optionally with a response per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    d: usize,
    features: Vec<f64>,
    responses: Option<Vec<f64>>,
}

impl Dataset {
    /// Labeled dataset from row vectors and their responses.
    pub fn labeled(rows: Vec<Vec<f64>>, responses: Vec<f64>) -> Result<Self> {
        if rows.len() != responses.len() {
            return Err(ScopError::Domain(format!(
                "{} feature rows but {} responses",
                rows.len(),
                responses.len()
            )));
        }
        let mut ds = Self::unlabeled(rows)?;
        if let Some(i) = responses.iter().position(|y| !y.is_finite()) {
            return Err(ScopError::Domain(format!("response {i} is not finite")));
        }
        ds.responses = Some(responses);
        Ok(ds)
    }

    /// Features only (test units whose responses are unobserved).
    pub fn unlabeled(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(ScopError::Domain(format!(
                    "row {i} has dimension {}, expected {d}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ScopError::Domain(format!("row {i} has a non-finite feature")));
            }
            features.extend_from_slice(row);
        }
        Ok(Self {
            d,
            features,
            responses: None,
        })
    }

    /// Build directly from a row-major feature buffer. Used by the generators,
    /// which only ever produce finite values.
    pub(crate) fn from_parts(d: usize, features: Vec<f64>, responses: Option<Vec<f64>>) -> Self {
        debug_assert_eq!(features.len() % d.max(1), 0);
        Self {
            d,
            features,
            responses,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.features
            .len()
            .checked_div(self.d)
            .unwrap_or_else(|| self.responses.as_ref().map_or(0, Vec::len))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn responses(&self) -> Option<&[f64]> {
        self.responses.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.responses.is_some()
    }

    /// Drop the responses (e.g. to hide test labels from the pipeline).
    pub fn without_responses(&self) -> Self {
        Self {
            d: self.d,
            features: self.features.clone(),
            responses: None,
        }
    }

    /// Rows `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            d: self.d,
            features: self.features[start * self.d..end * self.d].to_vec(),
            responses: self.responses.as_ref().map(|y| y[start..end].to_vec()),
        }
    }

    /// Rows picked by `order`, in that order.
    pub fn select(&self, order: &[usize]) -> Self {
        let mut features = Vec::with_capacity(order.len() * self.d);
        for &i in order {
            features.extend_from_slice(self.row(i));
        }
        Self {
            d: self.d,
            features,
            responses: self
                .responses
                .as_ref()
                .map(|y| order.iter().map(|&i| y[i]).collect()),
        }
    }

    fn require_responses(&self) -> Result<&[f64]> {
        self.responses
            .as_deref()
            .ok_or_else(|| ScopError::Domain("training data must carry responses".into()))
    }
}

/// How a fit ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// The design was rank deficient and a ridge penalty was added.
    pub regularized: bool,
    /// The iterative solver met its tolerance (always true for OLS).
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

impl LinearModel {
    pub fn new(intercept: f64, coefficients: Vec<f64>) -> Self {
        Self {
            intercept,
            coefficients,
            diagnostics: FitDiagnostics {
                converged: true,
                ..FitDiagnostics::default()
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(dim_mismatch(self.coefficients.len(), x.len()));
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    fn from_vector(beta: &DVector<f64>, diagnostics: FitDiagnostics) -> Self {
        Self {
            intercept: beta[0],
            coefficients: beta.iter().skip(1).copied().collect(),
            diagnostics,
        }
    }

    fn as_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.coefficients.len() + 1,
            std::iter::once(self.intercept).chain(self.coefficients.iter().copied()),
        )
    }
}

/// Lower and upper conditional quantile models for the CQR score, fitted at
/// levels `alpha / 2` and `1 - alpha / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePair {
    pub lo: LinearModel,
    pub hi: LinearModel,
}

impl QuantilePair {
    pub fn fit(train: &Dataset, alpha: f64) -> Result<Self> {
        crate::order_stats::check_alpha(alpha)?;
        Ok(Self {
            lo: fit_quantile(train, alpha / 2.0)?,
            hi: fit_quantile(train, 1.0 - alpha / 2.0)?,
        })
    }

    /// `(q_lo(x), q_hi(x))`; the two may cross.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        Ok((self.lo.predict(x)?, self.hi.predict(x)?))
    }
}

/// Selection score `g(x)` applied on top of the point prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScoreFn {
    /// `g(x) = mu_hat(x)`
    Prediction,
    /// `g(x) = mu_hat(x) - b0`
    PredictionMinusB0(f64),
}

impl ScoreFn {
    pub fn apply(&self, mu_hat: f64) -> f64 {
        match *self {
            ScoreFn::Prediction => mu_hat,
            ScoreFn::PredictionMinusB0(b0) => mu_hat - b0,
        }
    }
}

/// One calibration or test unit after scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredUnit {
    pub index: usize,
    pub mu_hat: f64,
    pub t_score: f64,
    pub response: Option<f64>,
    /// Nonconformity score; absent while the response is unobserved.
    pub residual_score: Option<f64>,
}

impl ScoredUnit {
    /// Unit from a precomputed prediction and selection score; the
    /// residual is `|y - mu_hat|` when `y` is known.
    pub fn new(index: usize, mu_hat: f64, t_score: f64, response: Option<f64>) -> Self {
        Self {
            index,
            mu_hat,
            t_score,
            response,
            residual_score: response.map(|y| (y - mu_hat).abs()),
        }
    }
}

/// Ordinary least squares with an intercept.
///
/// A rank-deficient design is solved with a tiny ridge penalty instead and
/// the model is flagged `regularized`.
pub fn fit_ols(train: &Dataset) -> Result<LinearModel> {
    let y = train.require_responses()?;
    let d = train.dim();
    if train.len() < d + 1 {
        return Err(ScopError::Parameter(format!(
            "least squares needs at least d + 1 = {} rows, got {}",
            d + 1,
            train.len()
        )));
    }
    let x = design(train);
    let yv = DVector::from_column_slice(y);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (x.nrows().max(x.ncols()) as f64);
    let full_rank = smax > 0.0 && svd.singular_values.iter().all(|&s| s > tol);
    if full_rank {
        if let Ok(beta) = svd.solve(&yv, tol) {
            if beta.iter().all(|b| b.is_finite()) {
                return Ok(LinearModel::from_vector(
                    &beta,
                    FitDiagnostics {
                        regularized: false,
                        converged: true,
                        iterations: 0,
                    },
                ));
            }
        }
    }
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &yv;
    let beta = ridge_solve(xtx, &xty)?;
    Ok(LinearModel::from_vector(
        &beta,
        FitDiagnostics {
            regularized: true,
            converged: true,
            iterations: 0,
        },
    ))
}

/// Mean pinball (check) loss of `model` at `level` on `data`.
pub fn pinball_loss(model: &LinearModel, data: &Dataset, level: f64) -> Result<f64> {
    let y = data.require_responses()?;
    if model.dim() != data.dim() {
        return Err(dim_mismatch(model.dim(), data.dim()));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = data
        .rows()
        .zip(y)
        .map(|(x, &yi)| check_loss(yi - model.predict_unchecked(x), level))
        .sum();
    Ok(total / y.len() as f64)
}

fn check_loss(r: f64, level: f64) -> f64 {
    if r >= 0.0 {
        level * r
    } else {
        (level - 1.0) * r
    }
}

/// Linear quantile regression at `level` by iteratively reweighted least
/// squares on the check loss, started from the OLS fit.
///
/// Each step solves a weighted least-squares problem with weights
/// `w_i = c_i / max(|r_i|, IRLS_EPSILON)`, where `c_i` is `level` for
/// nonnegative residuals and `1 - level` otherwise. The iterate with the
/// smallest pinball loss is returned; `diagnostics.converged` is false when
/// the coefficient change never fell below `IRLS_TOL`.
pub fn fit_quantile(train: &Dataset, level: f64) -> Result<LinearModel> {
    if !(level > 0.0 && level < 1.0) {
        return Err(ScopError::Parameter(format!(
            "quantile level must lie in (0, 1), got {level}"
        )));
    }
    let start = fit_ols(train)?;
    let y = train.require_responses()?;
    let x = design(train);
    let yv = DVector::from_column_slice(y);
    let n = x.nrows();
    let p = x.ncols();

    let mut beta = start.as_vector();
    let mut regularized = start.diagnostics.regularized;
    let mut best = beta.clone();
    let mut best_loss = pinball_loss(&start, train, level)?;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=IRLS_MAX_ITER {
        iterations = iter;
        let fitted = &x * &beta;
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwy = DVector::<f64>::zeros(p);
        for i in 0..n {
            let r = yv[i] - fitted[i];
            let c = if r >= 0.0 { level } else { 1.0 - level };
            let w = c / r.abs().max(IRLS_EPSILON);
            let row = x.row(i);
            for a in 0..p {
                let wa = w * row[a];
                xtwy[a] += wa * yv[i];
                for b in a..p {
                    xtwx[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        let next = match xtwx.clone().cholesky() {
            Some(ch) => ch.solve(&xtwy),
            None => {
                regularized = true;
                ridge_solve(xtwx, &xtwy)?
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        let change = (&next - &beta).amax();
        beta = next;
        let loss = pinball_of(&x, &yv, &beta, level);
        if loss < best_loss {
            best_loss = loss;
            best = beta.clone();
        }
        if change < IRLS_TOL {
            converged = true;
            break;
        }
    }

    Ok(LinearModel::from_vector(
        &best,
        FitDiagnostics {
            regularized,
            converged,
            iterations,
        },
    ))
}

fn pinball_of(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, level: f64) -> f64 {
    let fitted = x * beta;
    let total: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(yi, fi)| check_loss(yi - fi, level))
        .sum();
    total / y.len().max(1) as f64
}

/// Score every row of `data` with `model`.
pub fn score_units(model: &LinearModel, data: &Dataset, score_fn: ScoreFn) -> Result<Vec<ScoredUnit>> {
    if model.dim() != data.dim() {
        return Err(dim_mismatch(model.dim(), data.dim()));
    }
    let responses = data.responses();
    Ok(data
        .rows()
        .enumerate()
        .map(|(i, x)| {
            let mu_hat = model.predict_unchecked(x);
            ScoredUnit::new(i, mu_hat, score_fn.apply(mu_hat), responses.map(|y| y[i]))
        })
        .collect())
}

/// `max(q_lo(x) - y, y - q_hi(x))`; negative when `y` lies strictly inside
/// the quantile band.
pub fn cqr_score(pair: &QuantilePair, x: &[f64], y: f64) -> Result<f64> {
    let (lo, hi) = pair.predict(x)?;
    Ok((lo - y).max(y - hi))
}

fn design(data: &Dataset) -> DMatrix<f64> {
    let n = data.len();
    let d = data.dim();
    DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { data.row(i)[j - 1] })
}

fn ridge_solve(mut gram: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    for k in 0..gram.nrows() {
        gram[(k, k)] += RIDGE_LAMBDA;
    }
    gram.cholesky()
        .map(|ch| ch.solve(rhs))
        .ok_or_else(|| ScopError::Domain("ridge-regularized system is not positive definite".into()))
}

fn dim_mismatch(expected: usize, got: usize) -> ScopError {
    ScopError::Domain(format!("feature dimension {got} does not match model dimension {expected}"))
}
