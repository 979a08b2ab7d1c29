//! Random-walk Metropolis machinery and the joint log-posteriors.
//!
//! A proposal block moves `θ ← θ + s·L·z` with `z` standard normal, `s` the
//! block's scale and `L` an optional lower-triangular shape (a Cholesky
//! factor of the proposal covariance; the identity when absent). During
//! burn-in `s` is doubled or halved on windowed acceptance, with the factor
//! shrinking toward 1 as windows accumulate; after burn-in it is frozen.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{checked_cholesky, fit_logistic_mle, DesignMatrix, MleOptions};
use crate::outcome::{
    delta_g_computation, fit_outcome_mle, outcome_loglik, CellStats, OutcomeSpec,
};
use crate::propensity::{quintile_strata_with_scratch, QuintileStrata};

const ADAPT_WINDOW: usize = 50;
const TARGET_LOW: f64 = 0.2;
const TARGET_HIGH: f64 = 0.5;
const STUCK_RATE: f64 = 0.01;

/// Independent normal prior on every coefficient of a block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mean: f64,
    pub sd: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { mean: 0.0, sd: 10.0 }
    }
}

impl PriorSpec {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(sd.is_finite() && sd > 0.0 && mean.is_finite()) {
            return Err(Error::InvalidInput(format!("prior sd must be positive, got {sd}")));
        }
        Ok(Self { mean, sd })
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let norm = -(self.sd * (2.0 * std::f64::consts::PI).sqrt()).ln();
        theta
            .iter()
            .map(|t| {
                let z = (t - self.mean) / self.sd;
                norm - 0.5 * z * z
            })
            .sum()
    }
}

/// Priors for the treatment-model and outcome-model coefficient blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorPair {
    pub treatment: PriorSpec,
    pub outcome: PriorSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Initial proposal scale, relative to the block's proposal shape.
    pub proposal_scale: f64,
    pub adapt: bool,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 12_000,
            burn_in: 2_000,
            thin: 10,
            proposal_scale: 1.0,
            adapt: true,
            seed: 0,
        }
    }
}

impl ChainConfig {
    /// Short chain used per outer draw of the cut sampler (keeps its final state).
    pub fn inner_default() -> Self {
        Self {
            iterations: 500,
            burn_in: 250,
            thin: 1,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidInput(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidInput("thin must be at least 1".into()));
        }
        if !(self.proposal_scale.is_finite() && self.proposal_scale >= 0.0) {
            return Err(Error::InvalidInput("proposal scale must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    #[inline]
    fn keeps(&self, iter: usize) -> bool {
        iter >= self.burn_in && (iter - self.burn_in + 1).is_multiple_of(self.thin)
    }
}

/// One Gaussian random-walk block with its own scale adaptation.
#[derive(Debug, Clone)]
struct RwBlock {
    dim: usize,
    scale: f64,
    shape: Option<DMatrix<f64>>,
    adapt: bool,
    window_accepts: usize,
    windows: usize,
    post_accepts: usize,
    post_proposals: usize,
    z: Vec<f64>,
}

impl RwBlock {
    fn new(dim: usize, scale: f64, shape: Option<&DMatrix<f64>>, adapt: bool) -> Result<Self> {
        let shape = match shape {
            Some(cov) => {
                if cov.nrows() != dim || cov.ncols() != dim {
                    return Err(Error::DimensionMismatch("proposal covariance".into()));
                }
                Some(checked_cholesky(cov)?.l())
            }
            None => None,
        };
        Ok(Self {
            dim,
            scale,
            shape,
            adapt,
            window_accepts: 0,
            windows: 0,
            post_accepts: 0,
            post_proposals: 0,
            z: vec![0.0; dim],
        })
    }

    fn propose<R: Rng>(&mut self, rng: &mut R, current: &[f64], out: &mut [f64]) {
        for z in self.z.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        match &self.shape {
            None => {
                for j in 0..self.dim {
                    out[j] = current[j] + self.scale * self.z[j];
                }
            }
            Some(l) => {
                for j in 0..self.dim {
                    let mut step = 0.0;
                    for k in 0..=j {
                        step += l[(j, k)] * self.z[k];
                    }
                    out[j] = current[j] + self.scale * step;
                }
            }
        }
    }

    fn record(&mut self, iter: usize, burn_in: usize, accepted: bool) {
        if iter < burn_in {
            if accepted {
                self.window_accepts += 1;
            }
            if (iter + 1).is_multiple_of(ADAPT_WINDOW) {
                if self.adapt {
                    self.windows += 1;
                    let factor = 1.0 + 1.0 / (self.windows as f64).sqrt();
                    let rate = self.window_accepts as f64 / ADAPT_WINDOW as f64;
                    if rate < TARGET_LOW {
                        self.scale /= factor;
                    } else if rate > TARGET_HIGH {
                        self.scale *= factor;
                    }
                }
                self.window_accepts = 0;
            }
        } else {
            self.post_proposals += 1;
            if accepted {
                self.post_accepts += 1;
            }
        }
    }

    fn acceptance_rate(&self) -> f64 {
        if self.post_proposals == 0 {
            return 0.0;
        }
        self.post_accepts as f64 / self.post_proposals as f64
    }
}

#[inline]
fn metropolis_accept<R: Rng>(rng: &mut R, log_ratio: f64) -> bool {
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// Post-burn-in, thinned draws of a single-block chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    /// Post-burn-in acceptance rate.
    pub acceptance_rate: f64,
    pub final_scale: f64,
    /// Set when post-burn-in acceptance fell below 1%.
    pub stuck: bool,
    pub last: Vec<f64>,
}

/// Gaussian random-walk Metropolis with isotropic proposals.
pub fn rw_metropolis<F>(log_target: F, init: &[f64], cfg: &ChainConfig) -> Result<ChainOutput>
where
    F: FnMut(&[f64]) -> f64,
{
    rw_metropolis_with_shape(log_target, init, None, cfg)
}

/// Gaussian random-walk Metropolis with proposal covariance `scale² · cov`.
pub fn rw_metropolis_with_shape<F>(
    mut log_target: F,
    init: &[f64],
    cov: Option<&DMatrix<f64>>,
    cfg: &ChainConfig,
) -> Result<ChainOutput>
where
    F: FnMut(&[f64]) -> f64,
{
    cfg.validate()?;
    let mut current = init.to_vec();
    let mut current_lp = log_target(&current);
    if !current_lp.is_finite() {
        return Err(Error::NonFiniteTarget);
    }
    let mut block = RwBlock::new(init.len(), cfg.proposal_scale, cov, cfg.adapt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut proposal = vec![0.0; init.len()];
    let mut draws = Vec::with_capacity(cfg.retained());
    for iter in 0..cfg.iterations {
        block.propose(&mut rng, &current, &mut proposal);
        let lp = log_target(&proposal);
        let accepted = metropolis_accept(&mut rng, lp - current_lp);
        if accepted {
            current.copy_from_slice(&proposal);
            current_lp = lp;
        }
        block.record(iter, cfg.burn_in, accepted);
        if cfg.keeps(iter) {
            draws.push(current.clone());
        }
    }
    let acceptance_rate = block.acceptance_rate();
    Ok(ChainOutput {
        draws,
        acceptance_rate,
        final_scale: block.scale,
        stuck: acceptance_rate < STUCK_RATE,
        last: current,
    })
}

/// Outcome model used inside a joint posterior. With `pin_covariates` the
/// covariate coefficients of an augmented model are held at zero and drop out
/// of the parameter vector (and of the prior).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointModel {
    pub spec: OutcomeSpec,
    pub pin_covariates: bool,
}

impl JointModel {
    /// Invalid-factorization model: treatment model times the propensity-only outcome model.
    pub const PS_ONLY: JointModel = JointModel {
        spec: OutcomeSpec::PsOnly,
        pin_covariates: false,
    };

    /// Outcome model augmented with linear covariate terms.
    pub const AUGMENTED: JointModel = JointModel {
        spec: OutcomeSpec::PsPlusCovariates,
        pin_covariates: false,
    };

    /// Spec whose likelihood is actually evaluated.
    pub fn likelihood_spec(&self) -> OutcomeSpec {
        if self.pin_covariates {
            OutcomeSpec::PsOnly
        } else {
            self.spec
        }
    }

    pub fn free_width(&self, p: usize) -> usize {
        self.likelihood_spec().width(p)
    }

    fn embed(&self, free: &[f64], p: usize) -> Vec<f64> {
        let mut full = free.to_vec();
        full.resize(self.spec.width(p), 0.0);
        full
    }
}

/// Joint parameter state with caches derived from `theta_xc`.
#[derive(Debug, Clone)]
pub struct JointState {
    pub theta_xc: Vec<f64>,
    /// Full-width outcome coefficients for the model's spec.
    pub theta_y: Vec<f64>,
    pub e: Vec<f64>,
    pub strata: QuintileStrata,
    pub cells: CellStats,
    treatment_loglik: f64,
}

/// Treatment log-likelihood, propensity scores and strata in one pass.
struct FirstStage {
    loglik: f64,
    e: Vec<f64>,
    strata: QuintileStrata,
}

fn first_stage(
    theta_xc: &[f64],
    c_design: &DesignMatrix,
    data: &Dataset,
    scratch: &mut Vec<f64>,
) -> Result<FirstStage> {
    let mut loglik = 0.0;
    let mut e = Vec::with_capacity(data.n());
    for (i, row) in c_design.iter_rows().enumerate() {
        let eta = crate::glm::dot(row, theta_xc);
        // one exponential serves both softplus(eta) and expit(eta)
        let a = (-eta.abs()).exp();
        let softplus = eta.max(0.0) + a.ln_1p();
        loglik += if data.x.get(i) == 1 { eta - softplus } else { -softplus };
        e.push(if eta >= 0.0 { 1.0 / (1.0 + a) } else { a / (1.0 + a) });
    }
    let strata = quintile_strata_with_scratch(&e, scratch)?;
    Ok(FirstStage { loglik, e, strata })
}

impl JointState {
    pub fn new(theta_xc: Vec<f64>, theta_y: Vec<f64>, data: &Dataset) -> Result<Self> {
        let c_design = data.treatment_design();
        c_design.check_coefs(&theta_xc)?;
        let fs = first_stage(&theta_xc, &c_design, data, &mut Vec::new())?;
        let cells = CellStats::new(&data.x, &data.y, &fs.strata)?;
        Ok(Self {
            theta_xc,
            theta_y,
            e: fs.e,
            strata: fs.strata,
            cells,
            treatment_loglik: fs.loglik,
        })
    }
}

/// Log joint posterior (up to a constant) of a treatment/outcome state:
/// treatment log-likelihood, outcome log-likelihood at the strata implied by
/// the current `theta_xc`, and both log-priors.
pub fn log_posterior_joint(
    model: JointModel,
    state: &JointState,
    data: &Dataset,
    priors: &PriorPair,
) -> Result<f64> {
    let p = data.p();
    if state.theta_y.len() != model.spec.width(p) {
        return Err(Error::DimensionMismatch(format!(
            "theta_y has {} entries, model needs {}",
            state.theta_y.len(),
            model.spec.width(p)
        )));
    }
    let free = &state.theta_y[..model.free_width(p)];
    let outcome = outcome_loglik(
        model.likelihood_spec(),
        free,
        data,
        &state.strata,
        Some(&state.cells),
    )?;
    Ok(state.treatment_loglik
        + priors.treatment.log_density(&state.theta_xc)
        + outcome
        + priors.outcome.log_density(free))
}

/// Joint posterior with the propensity-only outcome model (invalid factorization).
pub fn log_posterior_b(state: &JointState, data: &Dataset, priors: &PriorPair) -> Result<f64> {
    log_posterior_joint(JointModel::PS_ONLY, state, data, priors)
}

/// Joint posterior with the covariate-augmented outcome model.
pub fn log_posterior_d(state: &JointState, data: &Dataset, priors: &PriorPair) -> Result<f64> {
    log_posterior_joint(JointModel::AUGMENTED, state, data, priors)
}

/// Output of a blocked joint sampler.
#[derive(Debug, Clone)]
pub struct JointChain {
    pub theta_xc: Vec<Vec<f64>>,
    pub theta_y: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
    pub acceptance_xc: f64,
    pub acceptance_y: f64,
    pub degenerate_rejections: usize,
    pub stuck: bool,
    pub init_xc: Vec<f64>,
    pub init_y: Vec<f64>,
}

/// Blocked random-walk Metropolis on `(θ_X|C, θ_Y)`.
///
/// Each sweep proposes a treatment block (whose acceptance sees the outcome
/// likelihood through the re-derived strata) and then an outcome block. Both
/// chains start at the sequential MLEs, with proposals shaped by their
/// asymptotic covariances. Proposals that empty a quintile are rejected.
pub fn run_joint_chain(
    model: JointModel,
    data: &Dataset,
    priors: &PriorPair,
    cfg: &ChainConfig,
) -> Result<JointChain> {
    cfg.validate()?;
    let p = data.p();
    let c_design = data.treatment_design();
    let opts = MleOptions::default();
    let fit_x = fit_logistic_mle(&c_design, &data.x, &opts)?;
    let cov_x = fit_x.covariance()?;

    let mut scratch = Vec::with_capacity(data.n());
    let mut stage = first_stage(&fit_x.coef, &c_design, data, &mut scratch)?;
    let lik_spec = model.likelihood_spec();
    let fit_y = fit_outcome_mle(lik_spec, data, &stage.strata, None)?;
    let cov_y = fit_y.covariance()?;

    let mut theta_x = fit_x.coef.clone();
    let mut theta_y = fit_y.coef.clone();
    let mut cells = CellStats::new(&data.x, &data.y, &stage.strata)?;
    let outcome_ll = |theta: &[f64], strata: &QuintileStrata, cells: &CellStats| {
        outcome_loglik(lik_spec, theta, data, strata, Some(cells))
    };
    let mut out_ll = outcome_ll(&theta_y, &stage.strata, &cells)?;
    let mut prior_x = priors.treatment.log_density(&theta_x);
    let mut prior_y = priors.outcome.log_density(&theta_y);
    if !(stage.loglik + prior_x + out_ll + prior_y).is_finite() {
        return Err(Error::NonFiniteTarget);
    }

    let mut block_x = RwBlock::new(theta_x.len(), cfg.proposal_scale, Some(&cov_x), cfg.adapt)?;
    let mut block_y = RwBlock::new(theta_y.len(), cfg.proposal_scale, Some(&cov_y), cfg.adapt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut prop_x = vec![0.0; theta_x.len()];
    let mut prop_y = vec![0.0; theta_y.len()];
    let retained = cfg.retained();
    let mut chain = JointChain {
        theta_xc: Vec::with_capacity(retained),
        theta_y: Vec::with_capacity(retained),
        delta: Vec::with_capacity(retained),
        acceptance_xc: 0.0,
        acceptance_y: 0.0,
        degenerate_rejections: 0,
        stuck: false,
        init_xc: fit_x.coef.clone(),
        init_y: model.embed(&fit_y.coef, p),
    };

    for iter in 0..cfg.iterations {
        // treatment block
        block_x.propose(&mut rng, &theta_x, &mut prop_x);
        let (log_ratio, candidate) = match first_stage(&prop_x, &c_design, data, &mut scratch) {
            Ok(cand) => {
                let cand_cells = CellStats::new(&data.x, &data.y, &cand.strata)?;
                let cand_out = outcome_ll(&theta_y, &cand.strata, &cand_cells)?;
                let cand_prior = priors.treatment.log_density(&prop_x);
                let ratio = (cand.loglik + cand_prior + cand_out) - (stage.loglik + prior_x + out_ll);
                (ratio, Some((cand, cand_cells, cand_out, cand_prior)))
            }
            Err(Error::DegenerateStrata { .. }) => {
                chain.degenerate_rejections += 1;
                (f64::NEG_INFINITY, None)
            }
            Err(e) => return Err(e),
        };
        let accepted = metropolis_accept(&mut rng, log_ratio);
        if accepted {
            if let Some((cand, cand_cells, cand_out, cand_prior)) = candidate {
                theta_x.copy_from_slice(&prop_x);
                stage = cand;
                cells = cand_cells;
                out_ll = cand_out;
                prior_x = cand_prior;
            }
        }
        block_x.record(iter, cfg.burn_in, accepted);

        // outcome block
        block_y.propose(&mut rng, &theta_y, &mut prop_y);
        let cand_out = outcome_ll(&prop_y, &stage.strata, &cells)?;
        let cand_prior = priors.outcome.log_density(&prop_y);
        let accepted = metropolis_accept(&mut rng, (cand_out + cand_prior) - (out_ll + prior_y));
        if accepted {
            theta_y.copy_from_slice(&prop_y);
            out_ll = cand_out;
            prior_y = cand_prior;
        }
        block_y.record(iter, cfg.burn_in, accepted);

        if cfg.keeps(iter) {
            let full_y = model.embed(&theta_y, p);
            chain.delta.push(delta_g_computation(&full_y, model.spec, &stage.strata, &data.c)?);
            chain.theta_xc.push(theta_x.clone());
            chain.theta_y.push(full_y);
        }
    }
    chain.acceptance_xc = block_x.acceptance_rate();
    chain.acceptance_y = block_y.acceptance_rate();
    chain.stuck = chain.acceptance_xc < STUCK_RATE || chain.acceptance_y < STUCK_RATE;
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, sample_sd};

    fn std_normal(theta: &[f64]) -> f64 {
        -0.5 * theta[0] * theta[0]
    }

    #[test]
    fn zero_scale_chain_never_moves() {
        let cfg = ChainConfig {
            iterations: 300,
            burn_in: 100,
            thin: 2,
            proposal_scale: 0.0,
            adapt: true,
            seed: 4,
        };
        let out = rw_metropolis(std_normal, &[0.7], &cfg).unwrap();
        assert_eq!(out.draws.len(), 100);
        assert!(out.draws.iter().all(|d| d[0] == 0.7));
        assert_eq!(out.acceptance_rate, 1.0);
    }

    #[test]
    fn standard_normal_moments() {
        let cfg = ChainConfig {
            iterations: 52_000,
            burn_in: 2_000,
            thin: 1,
            seed: 11,
            ..ChainConfig::default()
        };
        let out = rw_metropolis(std_normal, &[0.0], &cfg).unwrap();
        let xs: Vec<f64> = out.draws.iter().map(|d| d[0]).collect();
        assert_eq!(xs.len(), 50_000);
        assert!(mean(&xs).abs() < 0.05, "mean {}", mean(&xs));
        assert!((sample_sd(&xs) - 1.0).abs() < 0.05, "sd {}", sample_sd(&xs));
        assert!((TARGET_LOW..=TARGET_HIGH + 0.1).contains(&out.acceptance_rate));
    }

    #[test]
    fn additive_constant_does_not_change_draws() {
        let cfg = ChainConfig {
            iterations: 2_000,
            burn_in: 500,
            seed: 5,
            ..ChainConfig::default()
        };
        let a = rw_metropolis(std_normal, &[0.0], &cfg).unwrap();
        let b = rw_metropolis(|t: &[f64]| std_normal(t) + 1000.0, &[0.0], &cfg).unwrap();
        assert_eq!(a.draws, b.draws);
    }

    #[test]
    fn non_finite_init_rejected() {
        let cfg = ChainConfig::default();
        let err = rw_metropolis(|_: &[f64]| f64::NEG_INFINITY, &[0.0], &cfg).unwrap_err();
        assert_eq!(err, Error::NonFiniteTarget);
    }

    #[test]
    fn config_validation() {
        let bad = ChainConfig {
            burn_in: 10,
            iterations: 10,
            ..ChainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ChainConfig {
            thin: 0,
            ..ChainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(ChainConfig::default().retained(), 1000);
        assert!(PriorSpec::new(0.0, 0.0).is_err());
    }

    #[test]
    fn stuck_chain_flagged() {
        // A narrow spike far narrower than the frozen proposal scale.
        let cfg = ChainConfig {
            iterations: 2_000,
            burn_in: 100,
            proposal_scale: 1e3,
            adapt: false,
            seed: 1,
            thin: 1,
        };
        let out = rw_metropolis(|t: &[f64]| -0.5 * (t[0] / 1e-3).powi(2), &[0.0], &cfg).unwrap();
        assert!(out.stuck);
    }

    #[test]
    fn prior_density() {
        let prior = PriorSpec::default();
        let expected = -(10.0 * (2.0 * std::f64::consts::PI).sqrt()).ln() - 0.5 * 0.04;
        assert!((prior.log_density(&[2.0]) - expected).abs() < 1e-14);
    }
}
