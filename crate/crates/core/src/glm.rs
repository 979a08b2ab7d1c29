//! Bernoulli-logit primitives shared by every estimation stage.
//!
//! Log-likelihoods are accumulated in the `y·η − softplus(η)` form so that
//! extreme linear predictors (which do occur in sampler tails) never produce
//! `log(0)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row-major real matrix of regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    has_intercept: bool,
}

impl DesignMatrix {
    /// Builds a design from row-major values. When `has_intercept` is set,
    /// column 0 must be identically 1.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, has_intercept: bool) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} design",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite design entry at row {}, column {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        if has_intercept {
            if cols == 0 {
                return Err(Error::InvalidInput("intercept requested for an empty design".into()));
            }
            if (0..rows).any(|i| values[i * cols] != 1.0) {
                return Err(Error::InvalidInput("intercept column is not identically 1".into()));
            }
        }
        Ok(Self {
            rows,
            cols,
            values,
            has_intercept,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], has_intercept: bool) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, values, has_intercept)
    }

    /// Prepends a constant column to a design that has none.
    pub fn with_intercept(&self) -> DesignMatrix {
        if self.has_intercept {
            return self.clone();
        }
        let cols = self.cols + 1;
        let mut values = Vec::with_capacity(self.rows * cols);
        for row in self.values.chunks_exact(self.cols.max(1)).take(self.rows) {
            values.push(1.0);
            values.extend_from_slice(&row[..self.cols]);
        }
        if self.cols == 0 {
            values = vec![1.0; self.rows];
        }
        DesignMatrix {
            rows: self.rows,
            cols,
            values,
            has_intercept: true,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Linear predictor of every row.
    pub fn linear_predictor(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.check_coefs(beta)?;
        Ok(self.iter_rows().map(|row| dot(row, beta)).collect())
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Rows gathered by index (used for bootstrap resamples).
    pub fn select_rows(&self, idx: &[usize]) -> DesignMatrix {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        DesignMatrix {
            rows: idx.len(),
            cols: self.cols,
            values,
            has_intercept: self.has_intercept,
        }
    }

    pub(crate) fn check_coefs(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for a design with {} columns",
                beta.len(),
                self.cols
            )));
        }
        Ok(())
    }
}

/// Regression coefficients on the log-odds scale, with predictor names.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoefVector {
    pub values: Vec<f64>,
    pub labels: Vec<String>,
}

impl CoefVector {
    pub fn new(values: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if values.len() != labels.len() {
            return Err(Error::DimensionMismatch("coefficient/label count".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        Ok(Self { values, labels })
    }

    /// Coefficients labelled `b0, b1, ...`.
    pub fn unlabeled(values: Vec<f64>) -> Self {
        let labels = (0..values.len()).map(|j| format!("b{j}")).collect();
        Self { values, labels }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A vector of exact 0/1 outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryResponse(Vec<u8>);

impl BinaryResponse {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(Error::InvalidInput(format!(
                "binary response has value {} at position {i}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn from_bools(values: impl IntoIterator<Item = bool>) -> Self {
        Self(values.into_iter().map(u8::from).collect())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn ones(&self) -> usize {
        self.0.iter().map(|&v| v as usize).sum()
    }

    pub fn mean(&self) -> f64 {
        self.ones() as f64 / self.len() as f64
    }

    pub fn select(&self, idx: &[usize]) -> BinaryResponse {
        BinaryResponse(idx.iter().map(|&i| self.0[i]).collect())
    }
}

/// Cholesky factor of a symmetric positive definite matrix, rejecting
/// numerically singular ones (pivot below 1e-12 of its diagonal entry).
pub fn checked_cholesky(m: &DMatrix<f64>) -> Result<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>> {
    let chol = m.clone().cholesky().ok_or(Error::SingularHessian)?;
    let l = chol.l_dirty();
    for j in 0..m.nrows() {
        let pivot = l[(j, j)] * l[(j, j)];
        if pivot.is_nan() || pivot <= 1e-12 * m[(j, j)].abs() {
            return Err(Error::SingularHessian);
        }
    }
    Ok(chol)
}

#[inline]
fn norm(v: &[f64]) -> f64 {
    v.iter().map(|b| b * b).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic function `1 / (1 + exp(-z))`, evaluated without overflow.
#[inline]
pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let ez = z.exp();
        ez / (1.0 + ez)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + exp(z))`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Bernoulli log-likelihood contribution of a single unit with linear predictor `eta`.
#[inline]
pub fn bernoulli_logit_term(y: u8, eta: f64) -> f64 {
    if y == 1 {
        eta - softplus(eta)
    } else {
        -softplus(eta)
    }
}

fn check_response(design: &DesignMatrix, y: &BinaryResponse) -> Result<()> {
    if design.rows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows but response has {} entries",
            design.rows(),
            y.len()
        )));
    }
    Ok(())
}

/// `Σ y_i log p_i + (1 − y_i) log(1 − p_i)` with `p_i = expit(design_i · beta)`.
pub fn logistic_loglik(beta: &[f64], design: &DesignMatrix, y: &BinaryResponse) -> Result<f64> {
    design.check_coefs(beta)?;
    check_response(design, y)?;
    Ok(design
        .iter_rows()
        .zip(y.as_slice())
        .map(|(row, &yi)| bernoulli_logit_term(yi, dot(row, beta)))
        .sum())
}

/// Score vector `designᵀ(y − p)` and Hessian `−designᵀ W design`.
pub fn logistic_grad_hess(
    beta: &[f64],
    design: &DesignMatrix,
    y: &BinaryResponse,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    design.check_coefs(beta)?;
    check_response(design, y)?;
    let q = design.cols();
    let mut grad = vec![0.0; q];
    let mut info = DMatrix::<f64>::zeros(q, q);
    for (row, &yi) in design.iter_rows().zip(y.as_slice()) {
        let p = expit(dot(row, beta));
        let resid = yi as f64 - p;
        let w = p * (1.0 - p);
        for j in 0..q {
            grad[j] += resid * row[j];
            let wj = w * row[j];
            for k in j..q {
                info[(j, k)] += wj * row[k];
            }
        }
    }
    for j in 0..q {
        for k in 0..j {
            info[(j, k)] = info[(k, j)];
        }
    }
    Ok((grad, -info))
}

/// Stopping rules for Newton–Raphson.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    pub max_iter: usize,
    /// Convergence threshold on max |gradient|.
    pub tol: f64,
    /// Coefficient norm past which the data are declared separated.
    pub separation_norm: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-8,
            separation_norm: 1e3,
        }
    }
}

/// A converged logistic MLE together with its observed information.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    /// Observed information `−H` at the estimate.
    pub information: DMatrix<f64>,
}

impl LogisticFit {
    /// Asymptotic covariance, the inverse observed information.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        checked_cholesky(&self.information).map(|c| c.inverse())
    }

    pub fn standard_errors(&self) -> Result<Vec<f64>> {
        let cov = self.covariance()?;
        Ok((0..cov.nrows()).map(|j| cov[(j, j)].sqrt()).collect())
    }
}

/// Maximum-likelihood logistic regression started from the zero vector.
pub fn fit_logistic_mle(
    design: &DesignMatrix,
    y: &BinaryResponse,
    opts: &MleOptions,
) -> Result<LogisticFit> {
    fit_logistic_mle_from(design, y, &vec![0.0; design.cols()], opts)
}

/// Newton–Raphson with step halving from an explicit starting point.
///
/// Converges when max |gradient| < `tol` and the Newton step is negligible.
/// A vanishing gradient paired with a step that refuses to shrink means the
/// likelihood is maximised at infinity, which is reported as separation.
pub fn fit_logistic_mle_from(
    design: &DesignMatrix,
    y: &BinaryResponse,
    init: &[f64],
    opts: &MleOptions,
) -> Result<LogisticFit> {
    check_response(design, y)?;
    let successes: Vec<f64> = y.as_slice().iter().map(|&v| v as f64).collect();
    let trials = vec![1.0; y.len()];
    fit_binomial_mle_from(design, &successes, &trials, init, opts)
}

/// Logistic MLE for grouped data: row `i` records `successes[i]` out of
/// `trials[i]` Bernoulli outcomes sharing the same regressors.
pub fn fit_binomial_mle_from(
    design: &DesignMatrix,
    successes: &[f64],
    trials: &[f64],
    init: &[f64],
    opts: &MleOptions,
) -> Result<LogisticFit> {
    design.check_coefs(init)?;
    if successes.len() != design.rows() || trials.len() != design.rows() {
        return Err(Error::DimensionMismatch("grouped response length".into()));
    }
    let (n, q) = (design.rows(), design.cols());
    if n < q {
        return Err(Error::InvalidInput(format!("{n} units for {q} coefficients")));
    }
    let total_s: f64 = successes.iter().sum();
    let total_t: f64 = trials.iter().sum();
    if total_s == 0.0 || total_s == total_t {
        return Err(Error::DegenerateResponse);
    }

    let step_tol = opts.tol.sqrt();
    let mut beta = init.to_vec();
    let mut cur = evaluate(&beta, design, successes, trials);
    let mut max_grad = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        max_grad = cur.grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        let chol = match checked_cholesky(&cur.info) {
            Ok(chol) => chol,
            // Weights that vanished along the way, with nothing left to climb,
            // mean the fitted probabilities saturated at 0 or 1.
            Err(Error::SingularHessian) if iter > 0 && max_grad < opts.tol => {
                return Err(Error::Separation { norm: norm(&beta) });
            }
            Err(e) => return Err(e),
        };
        let step = chol.solve(&DVector::from_column_slice(&cur.grad));
        let max_step = step.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        if max_grad < opts.tol && max_step < step_tol {
            return Ok(LogisticFit {
                coef: beta,
                loglik: cur.loglik,
                iterations: iter,
                information: cur.info,
            });
        }
        if iter == opts.max_iter {
            break;
        }

        let floor = cur.loglik - 1e-12 * (1.0 + cur.loglik.abs());
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let eval = evaluate(&cand, design, successes, trials);
            // Decreases at the level of rounding noise near the optimum are ignored.
            if eval.loglik >= floor {
                next = Some((cand, eval));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, eval)) = next else {
            // No ascent along the Newton direction: already at the numerical optimum.
            return Ok(LogisticFit {
                coef: beta,
                loglik: cur.loglik,
                iterations: iter,
                information: cur.info,
            });
        };
        beta = cand;
        cur = eval;
        if norm(&beta) > opts.separation_norm {
            return Err(Error::Separation { norm: norm(&beta) });
        }
    }
    if max_grad < opts.tol {
        return Err(Error::Separation { norm: norm(&beta) });
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        max_gradient: max_grad,
    })
}

struct Evaluation {
    loglik: f64,
    grad: Vec<f64>,
    info: DMatrix<f64>,
}

/// Log-likelihood, score and observed information in a single pass.
fn evaluate(beta: &[f64], design: &DesignMatrix, successes: &[f64], trials: &[f64]) -> Evaluation {
    let q = design.cols();
    let mut loglik = 0.0;
    let mut grad = vec![0.0; q];
    let mut upper = vec![0.0; q * q];
    for (i, row) in design.iter_rows().enumerate() {
        let eta = dot(row, beta);
        let a = (-eta.abs()).exp();
        let softplus = eta.max(0.0) + a.ln_1p();
        let p = if eta >= 0.0 { 1.0 / (1.0 + a) } else { a / (1.0 + a) };
        let (s, t) = (successes[i], trials[i]);
        loglik += s * eta - t * softplus;
        let resid = s - t * p;
        let w = t * p * (1.0 - p);
        for j in 0..q {
            grad[j] += resid * row[j];
            let wj = w * row[j];
            let base = j * q;
            for k in j..q {
                upper[base + k] += wj * row[k];
            }
        }
    }
    let info = DMatrix::from_fn(q, q, |j, k| if j <= k { upper[j * q + k] } else { upper[k * q + j] });
    Evaluation { loglik, grad, info }
}
