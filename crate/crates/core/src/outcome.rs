//! Outcome models on quintile strata and the standardized average causal
//! effect they imply.
//!
//! Outcome coefficients are laid out as
//! `[intercept, X, I(q2), I(q3), I(q4), I(q5), c1, ..., cp]`, with quintile 1
//! as the reference bin and the covariate block present only for
//! [`OutcomeSpec::PsPlusCovariates`].

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{
    expit, fit_binomial_mle_from, fit_logistic_mle_from, softplus, BinaryResponse, DesignMatrix,
    LogisticFit, MleOptions,
};
use crate::propensity::QuintileStrata;
use crate::strategies::Strategy;

/// Columns shared by both outcome models: intercept, treatment, four dummies.
pub const BASE_WIDTH: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeSpec {
    /// Treatment main effect plus quintile dummies.
    PsOnly,
    /// As `PsOnly`, plus linear main effects of every covariate.
    PsPlusCovariates,
}

impl OutcomeSpec {
    pub fn width(self, p: usize) -> usize {
        match self {
            OutcomeSpec::PsOnly => BASE_WIDTH,
            OutcomeSpec::PsPlusCovariates => BASE_WIDTH + p,
        }
    }

    pub fn labels(self, p: usize) -> Vec<String> {
        let mut labels: Vec<String> = ["intercept", "x", "q2", "q3", "q4", "q5"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if self == OutcomeSpec::PsPlusCovariates {
            labels.extend((1..=p).map(|j| format!("c{j}")));
        }
        labels
    }
}

/// Point estimate and 95% uncertainty interval for the average causal effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    pub point: f64,
    pub interval_low: f64,
    pub interval_high: f64,
    pub method: Strategy,
}

impl DeltaEstimate {
    pub fn width(&self) -> f64 {
        self.interval_high - self.interval_low
    }

    /// Whether the closed interval contains `truth`.
    pub fn covers(&self, truth: f64) -> bool {
        self.interval_low <= truth && truth <= self.interval_high
    }

    /// False when the point estimate falls outside its own interval, which
    /// percentile constructions permit but which deserves a warning.
    pub fn point_inside(&self) -> bool {
        self.covers(self.point)
    }
}

fn check_lengths(x: &BinaryResponse, strata: &QuintileStrata, c: &DesignMatrix) -> Result<()> {
    if x.len() != strata.n() || c.rows() != strata.n() {
        return Err(Error::DimensionMismatch(format!(
            "x has {}, strata {}, covariates {} units",
            x.len(),
            strata.n(),
            c.rows()
        )));
    }
    Ok(())
}

/// Design with columns `[1, X, I(q2), I(q3), I(q4), I(q5), (c1..cp)]`.
pub fn build_outcome_design(
    spec: OutcomeSpec,
    x: &BinaryResponse,
    strata: &QuintileStrata,
    c: &DesignMatrix,
) -> Result<DesignMatrix> {
    check_lengths(x, strata, c)?;
    if let Some(k) = strata.counts.iter().position(|&n| n == 0) {
        return Err(Error::DegenerateStrata { bin: k + 1 });
    }
    let n = strata.n();
    let width = spec.width(c.cols());
    let mut values = Vec::with_capacity(n * width);
    for i in 0..n {
        values.push(1.0);
        values.push(x.get(i) as f64);
        let bin = strata.bin(i);
        for k in 2..=5u8 {
            values.push(if bin == k { 1.0 } else { 0.0 });
        }
        if spec == OutcomeSpec::PsPlusCovariates {
            values.extend_from_slice(c.row(i));
        }
    }
    DesignMatrix::new(n, width, values, true)
}

#[inline]
fn base_predictor(theta: &[f64], x: u8, bin: u8) -> f64 {
    let mut eta = theta[0];
    if x == 1 {
        eta += theta[1];
    }
    if bin >= 2 {
        eta += theta[bin as usize];
    }
    eta
}

/// Average causal effect by standardization over the observed units:
/// `(1/n) Σ_i [expit(row_i(X=1)·θ) − expit(row_i(X=0)·θ)]`, with strata and
/// covariates held at their observed values.
pub fn delta_g_computation(
    theta_y: &[f64],
    spec: OutcomeSpec,
    strata: &QuintileStrata,
    c: &DesignMatrix,
) -> Result<f64> {
    let p = c.cols();
    if theta_y.len() != spec.width(p) {
        return Err(Error::DimensionMismatch(format!(
            "{} outcome coefficients, spec needs {}",
            theta_y.len(),
            spec.width(p)
        )));
    }
    if c.rows() != strata.n() {
        return Err(Error::DimensionMismatch("strata and covariates disagree on n".into()));
    }
    let n = strata.n();
    let mut total = 0.0;
    for i in 0..n {
        let bin = strata.bin(i);
        let mut eta0 = base_predictor(theta_y, 0, bin);
        let mut eta1 = base_predictor(theta_y, 1, bin);
        if spec == OutcomeSpec::PsPlusCovariates {
            let adj = covariate_term(&theta_y[BASE_WIDTH..], c.row(i));
            eta0 += adj;
            eta1 += adj;
        }
        total += expit(eta1) - expit(eta0);
    }
    Ok(total / n as f64)
}

#[inline]
fn covariate_term(coefs: &[f64], row: &[f64]) -> f64 {
    let mut adj = 0.0;
    for (b, v) in coefs.iter().zip(row) {
        adj += b * v;
    }
    adj
}

/// Unit and success counts for each (treatment, stratum) cell. These are
/// sufficient for the propensity-only outcome likelihood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellStats {
    pub units: [[u32; 5]; 2],
    pub successes: [[u32; 5]; 2],
}

impl CellStats {
    pub fn new(x: &BinaryResponse, y: &BinaryResponse, strata: &QuintileStrata) -> Result<Self> {
        if x.len() != y.len() || x.len() != strata.n() {
            return Err(Error::DimensionMismatch("cell statistics inputs disagree on n".into()));
        }
        let mut units = [[0u32; 5]; 2];
        let mut successes = [[0u32; 5]; 2];
        for i in 0..x.len() {
            let (xi, k) = (x.get(i) as usize, strata.bin(i) as usize - 1);
            units[xi][k] += 1;
            successes[xi][k] += y.get(i) as u32;
        }
        Ok(Self { units, successes })
    }

    pub fn loglik(&self, theta: &[f64]) -> f64 {
        let mut ll = 0.0;
        for x in 0..2u8 {
            for k in 0..5usize {
                let n = self.units[x as usize][k];
                if n == 0 {
                    continue;
                }
                let eta = base_predictor(theta, x, k as u8 + 1);
                ll += self.successes[x as usize][k] as f64 * eta - n as f64 * softplus(eta);
            }
        }
        ll
    }

    /// Propensity-only outcome MLE from the (at most ten) non-empty cells.
    /// Same likelihood as the unit-level fit, at a fraction of the cost.
    pub fn fit_mle(&self, init: &[f64], opts: &MleOptions) -> Result<LogisticFit> {
        let (mut rows, mut successes, mut trials) = (Vec::new(), Vec::new(), Vec::new());
        for x in 0..2usize {
            for k in 0..5usize {
                if self.units[x][k] == 0 {
                    continue;
                }
                let mut row = vec![0.0; BASE_WIDTH];
                row[0] = 1.0;
                row[1] = x as f64;
                if k >= 1 {
                    row[k + 1] = 1.0;
                }
                rows.push(row);
                successes.push(self.successes[x][k] as f64);
                trials.push(self.units[x][k] as f64);
            }
        }
        let design = DesignMatrix::from_rows(&rows, true)?;
        fit_binomial_mle_from(&design, &successes, &trials, init, opts)
    }
}

/// Outcome-model MLE at the given strata, optionally warm-started.
pub fn fit_outcome_mle(
    spec: OutcomeSpec,
    data: &Dataset,
    strata: &QuintileStrata,
    init: Option<&[f64]>,
) -> Result<LogisticFit> {
    let opts = MleOptions::default();
    let zeros = vec![0.0; spec.width(data.p())];
    let init = init.unwrap_or(&zeros);
    match spec {
        OutcomeSpec::PsOnly => CellStats::new(&data.x, &data.y, strata)?.fit_mle(init, &opts),
        OutcomeSpec::PsPlusCovariates => {
            let design = build_outcome_design(spec, &data.x, strata, &data.c)?;
            fit_logistic_mle_from(&design, &data.y, init, &opts)
        }
    }
}

/// Outcome-model log-likelihood at the given strata. The propensity-only
/// model is evaluated from cell counts (`cells`, computed when absent).
pub fn outcome_loglik(
    spec: OutcomeSpec,
    theta_y: &[f64],
    data: &Dataset,
    strata: &QuintileStrata,
    cells: Option<&CellStats>,
) -> Result<f64> {
    let p = data.p();
    if theta_y.len() != spec.width(p) {
        return Err(Error::DimensionMismatch(format!(
            "{} outcome coefficients, spec needs {}",
            theta_y.len(),
            spec.width(p)
        )));
    }
    check_lengths(&data.x, strata, &data.c)?;
    match spec {
        OutcomeSpec::PsOnly => Ok(match cells {
            Some(cells) => cells.loglik(theta_y),
            None => CellStats::new(&data.x, &data.y, strata)?.loglik(theta_y),
        }),
        OutcomeSpec::PsPlusCovariates => {
            let coefs = &theta_y[BASE_WIDTH..];
            let mut ll = 0.0;
            for i in 0..data.n() {
                let xi = data.x.get(i);
                let eta = base_predictor(theta_y, xi, strata.bin(i)) + covariate_term(coefs, data.c.row(i));
                ll += crate::glm::bernoulli_logit_term(data.y.get(i), eta);
            }
            Ok(ll)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::logistic_loglik;
    use crate::propensity::quintile_strata_of;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn instance(n: usize, p: usize, seed: u64) -> (Dataset, QuintileStrata) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
        let c = DesignMatrix::new(n, p, c, false).unwrap();
        let x = BinaryResponse::from_bools((0..n).map(|_| rng.random::<bool>()));
        let y = BinaryResponse::from_bools((0..n).map(|_| rng.random::<bool>()));
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let strata = quintile_strata_of(&scores).unwrap();
        (Dataset::new(x, y, c).unwrap(), strata)
    }

    #[test]
    fn design_rows() {
        let (data, strata) = instance(40, 6, 1);
        let design = build_outcome_design(OutcomeSpec::PsPlusCovariates, &data.x, &strata, &data.c).unwrap();
        assert_eq!(design.cols(), 12);
        for i in 0..40 {
            let row = design.row(i);
            assert_eq!(row[0], 1.0);
            assert_eq!(row[1], data.x.get(i) as f64);
            let bin = strata.bin(i);
            for k in 2..=5u8 {
                assert_eq!(row[k as usize], if bin == k { 1.0 } else { 0.0 });
            }
            assert_eq!(&row[6..], data.c.row(i));
            if bin == 1 && data.x.get(i) == 0 {
                assert_eq!(&row[..6], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
            }
            if bin == 5 && data.x.get(i) == 1 {
                assert_eq!(&row[..6], &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
            }
        }
        let ps = build_outcome_design(OutcomeSpec::PsOnly, &data.x, &strata, &data.c).unwrap();
        assert_eq!(ps.cols(), 6);
    }

    #[test]
    fn zero_treatment_coefficient_gives_zero_delta() {
        let (data, strata) = instance(30, 3, 2);
        let theta = [0.3, 0.0, -0.2, 0.5, 1.1, -0.7, 0.4, -0.1, 0.9];
        let d = delta_g_computation(&theta, OutcomeSpec::PsPlusCovariates, &strata, &data.c).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn intercept_and_treatment_only() {
        let (data, strata) = instance(30, 3, 3);
        let (a, b) = (-0.4, 0.9);
        let theta = [a, b, 0.0, 0.0, 0.0, 0.0];
        let d = delta_g_computation(&theta, OutcomeSpec::PsOnly, &strata, &data.c).unwrap();
        assert!((d - (expit(a + b) - expit(a))).abs() < 1e-15);
    }

    #[test]
    fn delta_matches_two_evaluation_oracle() {
        let (data, strata) = instance(50, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let theta: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
        let design = build_outcome_design(OutcomeSpec::PsPlusCovariates, &data.x, &strata, &data.c).unwrap();
        let mut acc = 0.0;
        for i in 0..50 {
            let mut row = design.row(i).to_vec();
            row[1] = 1.0;
            let p1 = 1.0 / (1.0 + (-row.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>()).exp());
            row[1] = 0.0;
            let p0 = 1.0 / (1.0 + (-row.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>()).exp());
            acc += p1 - p0;
        }
        let oracle = acc / 50.0;
        let d = delta_g_computation(&theta, OutcomeSpec::PsPlusCovariates, &strata, &data.c).unwrap();
        assert!((d - oracle).abs() < 1e-12);
    }

    #[test]
    fn fast_loglik_matches_design_loglik() {
        let (data, strata) = instance(200, 6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for spec in [OutcomeSpec::PsOnly, OutcomeSpec::PsPlusCovariates] {
            let theta: Vec<f64> = (0..spec.width(6)).map(|_| rng.sample(StandardNormal)).collect();
            let design = build_outcome_design(spec, &data.x, &strata, &data.c).unwrap();
            let reference = logistic_loglik(&theta, &design, &data.y).unwrap();
            let fast = outcome_loglik(spec, &theta, &data, &strata, None).unwrap();
            assert!(((fast - reference) / reference).abs() < 1e-12, "{spec:?}: {fast} vs {reference}");
        }
    }

    #[test]
    fn cell_fit_matches_unit_level_fit() {
        let (data, strata) = instance(500, 6, 9);
        let design = build_outcome_design(OutcomeSpec::PsOnly, &data.x, &strata, &data.c).unwrap();
        let unit = crate::glm::fit_logistic_mle(&design, &data.y, &MleOptions::default()).unwrap();
        let cell = fit_outcome_mle(OutcomeSpec::PsOnly, &data, &strata, None).unwrap();
        for (a, b) in unit.coef.iter().zip(&cell.coef) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
        assert!((unit.loglik - cell.loglik).abs() < 1e-9 * unit.loglik.abs());
        let warm = fit_outcome_mle(OutcomeSpec::PsOnly, &data, &strata, Some(&cell.coef)).unwrap();
        assert_eq!(warm.iterations, 0);
    }

    #[test]
    fn bin_relabeling_with_permuted_dummies() {
        let (data, strata) = instance(60, 2, 6);
        let theta = [0.1, 0.8, 0.3, -0.4, 0.9, -1.2];
        let d = delta_g_computation(&theta, OutcomeSpec::PsOnly, &strata, &data.c).unwrap();
        // swap bins 3 and 5 and their coefficients
        let mut swapped = strata.clone();
        for b in swapped.assignment.iter_mut() {
            *b = match *b {
                3 => 5,
                5 => 3,
                other => other,
            };
        }
        let theta_swapped = [0.1, 0.8, 0.3, -1.2, 0.9, -0.4];
        let d2 = delta_g_computation(&theta_swapped, OutcomeSpec::PsOnly, &swapped, &data.c).unwrap();
        assert!((d - d2).abs() < 1e-15);
    }

    #[test]
    fn extreme_intercepts_stay_bounded() {
        let (data, strata) = instance(80, 6, 7);
        let base = [0.0, 0.7, 0.2, -0.3, 0.1, 0.4, 0.5, -0.5, 0.2, 0.1, -0.2, 0.3];
        let mut prev: Option<f64> = None;
        for k in -300..=300 {
            let c = k as f64 * 0.1;
            let mut theta = base;
            theta[0] += c;
            let d = delta_g_computation(&theta, OutcomeSpec::PsPlusCovariates, &strata, &data.c).unwrap();
            assert!((0.0..1.0).contains(&d));
            if let Some(p) = prev {
                assert!((d - p).abs() < 0.05);
            }
            prev = Some(d);
        }
    }

    #[test]
    fn dimension_errors() {
        let (data, strata) = instance(20, 6, 8);
        assert!(delta_g_computation(&[0.0; 6], OutcomeSpec::PsPlusCovariates, &strata, &data.c).is_err());
        assert!(outcome_loglik(OutcomeSpec::PsOnly, &[0.0; 5], &data, &strata, None).is_err());
        let short = BinaryResponse::new(vec![0; 3]).unwrap();
        assert!(build_outcome_design(OutcomeSpec::PsOnly, &short, &strata, &data.c).is_err());
    }
}
