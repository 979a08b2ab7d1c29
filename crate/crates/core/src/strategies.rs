//! The five end-to-end estimators of the average causal effect.
//!
//! | tag | propensity stage            | outcome model | uncertainty                 |
//! |-----|-----------------------------|---------------|-----------------------------|
//! | A1  | MLE                         | ps only       | percentile bootstrap        |
//! | A2  | MLE                         | ps + C        | percentile bootstrap        |
//! | B   | joint posterior (feedback)  | ps only       | central posterior interval  |
//! | C   | treatment-only posterior    | ps only       | central quasi-posterior     |
//! | D   | joint posterior             | ps + C        | central posterior interval  |
//!
//! Every strategy stratifies on the same quintile convention, so differences
//! between them come from the estimation logic alone.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Parallelism};
use crate::glm::{fit_logistic_mle_from, MleOptions};
use crate::outcome::{delta_g_computation, fit_outcome_mle, CellStats, DeltaEstimate, OutcomeSpec};
use crate::propensity::{propensity_scores, quintile_strata, sample_propensity_posterior};
use crate::samplers::{
    rw_metropolis_with_shape, run_joint_chain, ChainConfig, JointChain, JointModel, PriorPair,
};
use crate::seeds::derive_seed;
use crate::stats::{central_interval, mean, sample_sd};

/// Share of bootstrap resamples or cut draws allowed to fail.
pub const MAX_FAILURE_SHARE: f64 = 0.10;
const INTERVAL_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    A1,
    A2,
    B,
    C,
    D,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::A1, Strategy::A2, Strategy::B, Strategy::C, Strategy::D];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::A1 => "A1",
            Strategy::A2 => "A2",
            Strategy::B => "B",
            Strategy::C => "C",
            Strategy::D => "D",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn outcome_spec(self) -> OutcomeSpec {
        match self {
            Strategy::A2 | Strategy::D => OutcomeSpec::PsPlusCovariates,
            _ => OutcomeSpec::PsOnly,
        }
    }

    /// Parses a comma-separated list such as `A1,B,D` (or `all`).
    pub fn parse_list(s: &str) -> Result<Vec<Strategy>> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Strategy::ALL.to_vec());
        }
        let mut out: Vec<Strategy> = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::EmptySelection);
        }
        Ok(out)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A1" => Ok(Strategy::A1),
            "A2" => Ok(Strategy::A2),
            "B" => Ok(Strategy::B),
            "C" => Ok(Strategy::C),
            "D" => Ok(Strategy::D),
            other => Err(Error::InvalidInput(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub acceptance_xc: Option<f64>,
    pub acceptance_y: Option<f64>,
    pub bootstrap_failures: usize,
    pub degenerate_rejections: usize,
    pub dropped_draws: usize,
    pub stuck_chain: bool,
    /// False when the point estimate lies outside its interval.
    pub point_inside_interval: bool,
}

/// Retained draws of a Bayesian strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub theta_xc: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub delta: DeltaEstimate,
    /// Treatment-model point estimates (intercept first).
    pub theta_xc: Vec<f64>,
    /// Posterior SDs of the treatment coefficients, for Bayesian strategies.
    pub theta_xc_sd: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
    pub draws: Option<PosteriorDraws>,
}

/// Settings shared by every strategy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub boot: usize,
    pub chain: ChainConfig,
    pub inner: ChainConfig,
    pub priors: PriorPair,
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            boot: 1000,
            chain: ChainConfig::default(),
            inner: ChainConfig::inner_default(),
            priors: PriorPair::default(),
            parallelism: Parallelism::default(),
        }
    }
}

/// Runs one strategy. `seed` fully determines its randomness: bootstrap
/// resamples for A1/A2, the chain for B/D, and for C the outer chain (seeded
/// with `seed` itself) and the inner chains (seeded from `derive_seed(seed, 1)`).
pub fn run_strategy(strategy: Strategy, data: &Dataset, cfg: &StrategyConfig, seed: u64) -> Result<StrategyResult> {
    let chain = cfg.chain.with_seed(seed);
    match strategy {
        Strategy::A1 | Strategy::A2 => {
            run_sequential(data, strategy.outcome_spec(), cfg.boot, seed, cfg.parallelism)
        }
        Strategy::B => run_joint_b(data, &cfg.priors, &chain),
        Strategy::C => {
            let inner = cfg.inner.with_seed(derive_seed(seed, 1));
            run_cut_c(data, &cfg.priors, &chain, &inner, cfg.parallelism)
        }
        Strategy::D => run_joint_d(data, &cfg.priors, &chain),
    }
}

/// Two-stage maximum-likelihood fit on one dataset.
#[derive(Debug, Clone)]
pub struct SequentialFit {
    pub theta_xc: Vec<f64>,
    pub theta_y: Vec<f64>,
    pub delta: f64,
}

pub fn sequential_estimate(data: &Dataset, spec: OutcomeSpec) -> Result<SequentialFit> {
    sequential_estimate_from(data, spec, None)
}

/// As [`sequential_estimate`], with both Newton fits started from `warm`.
pub fn sequential_estimate_from(
    data: &Dataset,
    spec: OutcomeSpec,
    warm: Option<&SequentialFit>,
) -> Result<SequentialFit> {
    let c_design = data.treatment_design();
    let zeros = vec![0.0; c_design.cols()];
    let init_x = warm.map_or(&zeros[..], |w| &w.theta_xc[..]);
    let fit_x = fit_logistic_mle_from(&c_design, &data.x, init_x, &MleOptions::default())?;
    let e = propensity_scores(&fit_x.coef, &c_design)?;
    let strata = quintile_strata(&e)?;
    let fit_y = fit_outcome_mle(spec, data, &strata, warm.map(|w| &w.theta_y[..]))?;
    let delta = delta_g_computation(&fit_y.coef, spec, &strata, &data.c)?;
    Ok(SequentialFit {
        theta_xc: fit_x.coef,
        theta_y: fit_y.coef,
        delta,
    })
}

/// Δ re-estimated on each supplied resample; failed resamples yield `None`.
///
/// Fits are warm-started from `full`, the estimate on the original data.
pub fn bootstrap_deltas(
    data: &Dataset,
    spec: OutcomeSpec,
    full: &SequentialFit,
    resamples: &[Vec<usize>],
    par: Parallelism,
) -> Vec<Option<f64>> {
    map_indexed(resamples.len(), par, |b| {
        sequential_estimate_from(&data.resample(&resamples[b]), spec, Some(full))
            .ok()
            .map(|f| f.delta)
    })
}

fn resample_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Sequential MLE with a percentile bootstrap interval (A1 for
/// [`OutcomeSpec::PsOnly`], A2 for [`OutcomeSpec::PsPlusCovariates`]).
pub fn run_sequential(
    data: &Dataset,
    spec: OutcomeSpec,
    boot: usize,
    seed: u64,
    par: Parallelism,
) -> Result<StrategyResult> {
    if boot == 0 {
        return Err(Error::InvalidInput("at least one bootstrap resample is required".into()));
    }
    let n = data.n();
    let resamples: Vec<Vec<usize>> = (0..boot)
        .map(|b| resample_indices(n, derive_seed(seed, b as u64)))
        .collect();
    run_sequential_with_resamples(data, spec, &resamples, par)
}

/// As [`run_sequential`] with caller-supplied resamples.
pub fn run_sequential_with_resamples(
    data: &Dataset,
    spec: OutcomeSpec,
    resamples: &[Vec<usize>],
    par: Parallelism,
) -> Result<StrategyResult> {
    let fit = sequential_estimate(data, spec)?;
    let deltas = bootstrap_deltas(data, spec, &fit, resamples, par);
    let ok: Vec<f64> = deltas.iter().flatten().copied().collect();
    let failures = deltas.len() - ok.len();
    check_failures("bootstrap resamples", failures, deltas.len())?;
    let (lo, hi) = central_interval(&ok, INTERVAL_LEVEL);
    let method = match spec {
        OutcomeSpec::PsOnly => Strategy::A1,
        OutcomeSpec::PsPlusCovariates => Strategy::A2,
    };
    let delta = DeltaEstimate {
        point: fit.delta,
        interval_low: lo,
        interval_high: hi,
        method,
    };
    Ok(StrategyResult {
        delta,
        theta_xc: fit.theta_xc,
        theta_xc_sd: None,
        diagnostics: Diagnostics {
            bootstrap_failures: failures,
            point_inside_interval: delta.point_inside(),
            ..Diagnostics::default()
        },
        draws: None,
    })
}

fn check_failures(what: &'static str, failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_FAILURE_SHARE * total as f64 || failed == total {
        return Err(Error::TooManyFailures {
            what,
            failed,
            total,
            limit: MAX_FAILURE_SHARE * 100.0,
        });
    }
    Ok(())
}

fn column_summaries(draws: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let q = draws.first().map_or(0, Vec::len);
    (0..q)
        .map(|j| {
            let col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            (mean(&col), sample_sd(&col))
        })
        .unzip()
}

fn posterior_result(method: Strategy, theta_xc: Vec<Vec<f64>>, delta: Vec<f64>, diagnostics: Diagnostics) -> Result<StrategyResult> {
    if delta.is_empty() {
        return Err(Error::EmptySelection);
    }
    let (lo, hi) = central_interval(&delta, INTERVAL_LEVEL);
    let estimate = DeltaEstimate {
        point: mean(&delta),
        interval_low: lo,
        interval_high: hi,
        method,
    };
    let (means, sds) = column_summaries(&theta_xc);
    Ok(StrategyResult {
        delta: estimate,
        theta_xc: means,
        theta_xc_sd: Some(sds),
        diagnostics: Diagnostics {
            point_inside_interval: estimate.point_inside(),
            ..diagnostics
        },
        draws: Some(PosteriorDraws { theta_xc, delta }),
    })
}

fn joint_result(method: Strategy, chain: JointChain) -> Result<StrategyResult> {
    let diagnostics = Diagnostics {
        acceptance_xc: Some(chain.acceptance_xc),
        acceptance_y: Some(chain.acceptance_y),
        degenerate_rejections: chain.degenerate_rejections,
        stuck_chain: chain.stuck,
        ..Diagnostics::default()
    };
    posterior_result(method, chain.theta_xc, chain.delta, diagnostics)
}

/// Joint Bayesian analysis with the propensity-only outcome model, whose
/// likelihood lets the outcome feed back into the treatment coefficients.
pub fn run_joint_b(data: &Dataset, priors: &PriorPair, cfg: &ChainConfig) -> Result<StrategyResult> {
    joint_result(Strategy::B, run_joint_chain(JointModel::PS_ONLY, data, priors, cfg)?)
}

/// Joint Bayesian analysis with the covariate-augmented outcome model.
pub fn run_joint_d(data: &Dataset, priors: &PriorPair, cfg: &ChainConfig) -> Result<StrategyResult> {
    joint_result(Strategy::D, run_joint_chain(JointModel::AUGMENTED, data, priors, cfg)?)
}

/// Strategy D with the covariate coefficients held at zero. The model then
/// collapses to Strategy B's and, under the same seed, reproduces its draws.
pub fn run_joint_d_pinned(data: &Dataset, priors: &PriorPair, cfg: &ChainConfig) -> Result<StrategyResult> {
    let model = JointModel {
        pin_covariates: true,
        ..JointModel::AUGMENTED
    };
    joint_result(Strategy::D, run_joint_chain(model, data, priors, cfg)?)
}

/// Cut-feedback analysis.
///
/// Treatment coefficients are drawn from their own posterior (no outcome
/// information); each draw fixes propensity scores and strata, a short outcome
/// chain started at the conditional MLE is run with those held constant, and
/// its final state gives one draw of Δ. Draws whose strata or outcome fit
/// degenerate are dropped and counted.
pub fn run_cut_c(
    data: &Dataset,
    priors: &PriorPair,
    cfg: &ChainConfig,
    inner: &ChainConfig,
    par: Parallelism,
) -> Result<StrategyResult> {
    inner.validate()?;
    let c_design = data.treatment_design();
    let outer = sample_propensity_posterior(&data.x, &c_design, &priors.treatment, cfg)?;
    let opts = MleOptions::default();
    let init_y = vec![0.0; OutcomeSpec::PsOnly.width(data.p())];

    let per_draw = map_indexed(outer.draws.len(), par, |k| -> Option<f64> {
        let e = propensity_scores(&outer.draws[k], &c_design).ok()?;
        let strata = quintile_strata(&e).ok()?;
        let cells = CellStats::new(&data.x, &data.y, &strata).ok()?;
        let fit = cells.fit_mle(&init_y, &opts).ok()?;
        let cov = fit.covariance().ok()?;
        let target = |theta: &[f64]| cells.loglik(theta) + priors.outcome.log_density(theta);
        let chain_cfg = inner.with_seed(derive_seed(inner.seed, k as u64));
        let chain = rw_metropolis_with_shape(target, &fit.coef, Some(&cov), &chain_cfg).ok()?;
        delta_g_computation(&chain.last, OutcomeSpec::PsOnly, &strata, &data.c).ok()
    });

    let mut theta_kept = Vec::with_capacity(per_draw.len());
    let mut deltas = Vec::with_capacity(per_draw.len());
    for (theta, d) in outer.draws.iter().zip(&per_draw) {
        if let Some(d) = d {
            theta_kept.push(theta.clone());
            deltas.push(*d);
        }
    }
    let dropped = per_draw.len() - deltas.len();
    check_failures("cut draws", dropped, per_draw.len())?;
    let diagnostics = Diagnostics {
        acceptance_xc: Some(outer.acceptance_rate),
        dropped_draws: dropped,
        stuck_chain: outer.stuck,
        ..Diagnostics::default()
    };
    let mut result = posterior_result(Strategy::C, theta_kept, deltas, diagnostics)?;
    // Report every outer draw, including dropped ones: that set is the cut posterior.
    if let Some(draws) = result.draws.as_mut() {
        draws.theta_xc = outer.draws;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!(Strategy::parse_list("d, a1,B").unwrap(), vec![Strategy::A1, Strategy::B, Strategy::D]);
        assert_eq!(Strategy::parse_list("all").unwrap().len(), 5);
        assert!(Strategy::parse_list("A3").is_err());
        assert!(Strategy::parse_list("").is_err());
    }

    #[test]
    fn failure_threshold() {
        assert!(check_failures("x", 100, 1000).is_ok());
        assert!(check_failures("x", 101, 1000).is_err());
        assert!(check_failures("x", 1, 1).is_err());
    }
}
