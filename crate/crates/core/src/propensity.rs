//! First-stage machinery: propensity scores, the treatment-only posterior and
//! quintile subclassification.

use crate::error::{Error, Result};
use crate::glm::{
    expit, fit_logistic_mle, logistic_loglik, BinaryResponse, DesignMatrix, MleOptions,
};
use crate::samplers::{rw_metropolis_with_shape, ChainConfig, ChainOutput, PriorSpec};
use crate::stats::standardized_mean_difference;

/// Per-unit probabilities of treatment, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityScores(Vec<f64>);

impl PropensityScores {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(Error::InvalidInput(format!(
                "propensity score {} at unit {i} is not inside (0, 1)",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `expit(c_design_i · theta_xc)` for every unit.
pub fn propensity_scores(theta_xc: &[f64], c_design: &DesignMatrix) -> Result<PropensityScores> {
    let lp = c_design.linear_predictor(theta_xc)?;
    PropensityScores::new(lp.into_iter().map(expit).collect())
}

/// Subclassification of units into five propensity-score quintile bins.
///
/// Bin `k` (1-based) holds scores in `[cutoff[k-2], cutoff[k-1])`; the first
/// bin is unbounded below and the last unbounded above.
#[derive(Debug, Clone, PartialEq)]
pub struct QuintileStrata {
    pub cutoffs: [f64; 4],
    pub assignment: Vec<u8>,
    pub counts: [usize; 5],
}

impl QuintileStrata {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Bin of unit `i`, in `1..=5`.
    #[inline]
    pub fn bin(&self, i: usize) -> u8 {
        self.assignment[i]
    }

    /// Units in the given bin.
    pub fn members(&self, bin: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == bin).collect()
    }
}

/// Quintile strata from arbitrary real scores. Cutoffs are the type-7
/// 20/40/60/80 percentiles; an empty bin is an error.
pub fn quintile_strata_of(scores: &[f64]) -> Result<QuintileStrata> {
    quintile_strata_with_scratch(scores, &mut Vec::with_capacity(scores.len()))
}

/// Type-7 quintile cutoffs by repeated selection; reorders `buf`.
fn quintile_cutoffs(buf: &mut [f64]) -> [f64; 4] {
    let last = (buf.len() - 1) as f64;
    let mut start = 0;
    [0.2, 0.4, 0.6, 0.8].map(|p| {
        let h = last * p;
        let lo = h.floor() as usize;
        let frac = h - lo as f64;
        let (_, &mut a, rest) = buf[start..].select_nth_unstable_by(lo - start, f64::total_cmp);
        let cutoff = if frac == 0.0 || rest.is_empty() {
            a
        } else {
            let b = rest.iter().copied().fold(f64::INFINITY, f64::min);
            a + frac * (b - a)
        };
        start = lo;
        cutoff
    })
}

pub(crate) fn quintile_strata_with_scratch(scores: &[f64], scratch: &mut Vec<f64>) -> Result<QuintileStrata> {
    if scores.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "quintile strata need at least 5 units, got {}",
            scores.len()
        )));
    }
    scratch.clear();
    scratch.extend_from_slice(scores);
    let cutoffs = quintile_cutoffs(scratch);
    let mut counts = [0usize; 5];
    let assignment: Vec<u8> = scores
        .iter()
        .map(|&e| {
            let bin = cutoffs.iter().take_while(|&&c| c <= e).count();
            counts[bin] += 1;
            (bin + 1) as u8
        })
        .collect();
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateStrata { bin: k + 1 });
    }
    Ok(QuintileStrata {
        cutoffs,
        assignment,
        counts,
    })
}

pub fn quintile_strata(e: &PropensityScores) -> Result<QuintileStrata> {
    quintile_strata_of(e.values())
}

/// Draws from the treatment-model posterior `p(θ_X|C | X, C)`.
#[derive(Debug, Clone)]
pub struct PropensityDraws {
    pub draws: Vec<Vec<f64>>,
    pub init: Vec<f64>,
    pub acceptance_rate: f64,
    pub stuck: bool,
}

impl From<(ChainOutput, Vec<f64>)> for PropensityDraws {
    fn from((out, init): (ChainOutput, Vec<f64>)) -> Self {
        Self {
            draws: out.draws,
            init,
            acceptance_rate: out.acceptance_rate,
            stuck: out.stuck,
        }
    }
}

/// Random-walk Metropolis on the treatment model alone.
///
/// The chain starts at the MLE with proposals shaped by its asymptotic
/// covariance (falling back to the origin with isotropic proposals when the
/// MLE does not exist). No outcome enters the signature, so the draws cannot
/// depend on `Y`.
pub fn sample_propensity_posterior(
    x: &BinaryResponse,
    c_design: &DesignMatrix,
    prior: &PriorSpec,
    chain: &ChainConfig,
) -> Result<PropensityDraws> {
    chain.validate()?;
    let (init, shape) = match fit_logistic_mle(c_design, x, &MleOptions::default()) {
        Ok(fit) => {
            let shape = fit.covariance().ok();
            (fit.coef, shape)
        }
        Err(_) => (vec![0.0; c_design.cols()], None),
    };
    let target = |theta: &[f64]| -> f64 {
        logistic_loglik(theta, c_design, x).unwrap_or(f64::NEG_INFINITY) + prior.log_density(theta)
    };
    let out = rw_metropolis_with_shape(target, &init, shape.as_ref(), chain)?;
    Ok((out, init).into())
}

/// Absolute standardized mean differences of each covariate between treated
/// and control units: marginally, within each stratum, and stratified (the
/// stratum-size weighted average of the signed within-stratum differences).
#[derive(Debug, Clone)]
pub struct BalanceReport {
    pub marginal: Vec<f64>,
    /// `within[k][j]`: covariate `j` in bin `k + 1`.
    pub within: Vec<Vec<f64>>,
    pub stratified: Vec<f64>,
}

impl BalanceReport {
    pub fn max_within(&self) -> f64 {
        self.within.iter().flatten().fold(0.0, |m, v| m.max(*v))
    }

    pub fn max_marginal(&self) -> f64 {
        self.marginal.iter().fold(0.0, |m, v| m.max(*v))
    }
}

pub fn balance_report(c: &DesignMatrix, x: &BinaryResponse, strata: &QuintileStrata) -> BalanceReport {
    let p = c.cols();
    let marginal = (0..p)
        .map(|j| standardized_mean_difference(&c.column(j), x.as_slice()).abs())
        .collect();
    let signed: Vec<Vec<f64>> = (1..=5u8)
        .map(|bin| {
            let idx = strata.members(bin);
            let xs = x.select(&idx);
            let sub = c.select_rows(&idx);
            (0..p)
                .map(|j| standardized_mean_difference(&sub.column(j), xs.as_slice()))
                .collect()
        })
        .collect();
    let n = strata.n() as f64;
    let stratified = (0..p)
        .map(|j| {
            signed
                .iter()
                .zip(strata.counts)
                .map(|(row, count)| row[j] * count as f64 / n)
                .sum::<f64>()
                .abs()
        })
        .collect();
    let within = signed.into_iter().map(|row| row.into_iter().map(f64::abs).collect()).collect();
    BalanceReport {
        marginal,
        within,
        stratified,
    }
}
