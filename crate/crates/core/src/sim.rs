//! Simulation study: data generation, replicated analyses and summaries.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Parallelism};
use crate::glm::{expit, BinaryResponse, DesignMatrix};
use crate::outcome::DeltaEstimate;
use crate::seeds::derive_seed;
use crate::stats::{mean, quantile, sample_sd};
use crate::strategies::{run_strategy, Strategy, StrategyConfig};

/// Number of confounders in the data-generating process.
pub const P: usize = 6;
/// Share of failed replicates (per strategy) that fails a batch.
pub const MAX_BATCH_FAILURE_SHARE: f64 = 0.05;

/// Data-generating process. Covariates are iid standard normal; treatment
/// follows a logistic model linear in `C`; the outcome's linear predictor is
/// `Σ_j b_j · g_j(C_j) + effect · X` with transforms
/// `g = (c, e^{c−1}, c, e^{c−1}, |c|, |c|)`. Neither model has an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpSpec {
    pub n: usize,
    pub treatment_coefs: [f64; P],
    pub outcome_coefs: [f64; P],
    /// Log-odds effect of treatment on the outcome (0 in the reference design).
    pub treatment_effect: f64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            treatment_coefs: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            outcome_coefs: [0.6, 0.5, 0.4, 0.3, 0.2, 0.1],
            treatment_effect: 0.0,
        }
    }
}

impl DgpSpec {
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::InvalidInput(format!("n = {} is below the minimum of 50", self.n)));
        }
        let all = self.treatment_coefs.iter().chain(&self.outcome_coefs);
        if all.chain([&self.treatment_effect]).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite DGP coefficient".into()));
        }
        Ok(())
    }

    pub fn treatment_predictor(&self, c: &[f64]) -> f64 {
        self.treatment_coefs.iter().zip(c).map(|(b, v)| b * v).sum()
    }

    /// Outcome linear predictor without the treatment term.
    pub fn outcome_predictor(&self, c: &[f64]) -> f64 {
        let b = &self.outcome_coefs;
        b[0] * c[0]
            + b[1] * (c[1] - 1.0).exp()
            + b[2] * c[2]
            + b[3] * (c[3] - 1.0).exp()
            + b[4] * c[4].abs()
            + b[5] * c[5].abs()
    }
}

/// Draws one dataset. Per unit: six normals, then the treatment uniform, then
/// the outcome uniform.
pub fn generate_dataset(spec: &DgpSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n;
    let mut c = Vec::with_capacity(n * P);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: [f64; P] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let xi = rng.random::<f64>() < expit(spec.treatment_predictor(&row));
        let eta = spec.outcome_predictor(&row) + if xi { spec.treatment_effect } else { 0.0 };
        let yi = rng.random::<f64>() < expit(eta);
        c.extend_from_slice(&row);
        x.push(xi);
        y.push(yi);
    }
    Dataset::new(
        BinaryResponse::from_bools(x),
        BinaryResponse::from_bools(y),
        DesignMatrix::new(n, P, c, false)?,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueDelta {
    pub value: f64,
    pub mcse: f64,
    /// Monte Carlo draws used (0 when the value is exact).
    pub draws: usize,
}

/// Default Monte Carlo draw count for [`true_delta`].
pub const TRUE_DELTA_DRAWS: usize = 1_000_000;

/// Population average causal effect of the DGP.
///
/// Exact when the treatment has no effect (Δ = 0) or when no covariate enters
/// the outcome (Δ = expit(b) − 1/2); otherwise Monte Carlo over the covariate law.
pub fn true_delta(spec: &DgpSpec) -> TrueDelta {
    true_delta_mc(spec, TRUE_DELTA_DRAWS, 0x5eed_de17a)
}

pub fn true_delta_mc(spec: &DgpSpec, draws: usize, seed: u64) -> TrueDelta {
    if spec.treatment_effect == 0.0 {
        return TrueDelta { value: 0.0, mcse: 0.0, draws: 0 };
    }
    if spec.outcome_coefs.iter().all(|&b| b == 0.0) {
        return TrueDelta {
            value: expit(spec.treatment_effect) - 0.5,
            mcse: 0.0,
            draws: 0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let row: [f64; P] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let eta = spec.outcome_predictor(&row);
        let contrast = expit(eta + spec.treatment_effect) - expit(eta);
        sum += contrast;
        sum_sq += contrast * contrast;
    }
    let m = sum / draws as f64;
    let var = (sum_sq / draws as f64 - m * m).max(0.0) * draws as f64 / (draws as f64 - 1.0);
    TrueDelta {
        value: m,
        mcse: (var / draws as f64).sqrt(),
        draws,
    }
}

/// Per-strategy outcome within one replicate.
#[derive(Debug, Clone, PartialEq)]
pub enum SlotResult {
    NotRun,
    Failed(String),
    Done(StrategySummary),
}

/// The parts of a strategy result kept per replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub delta: DeltaEstimate,
    /// Treatment coefficients on `c1..c6` (intercept excluded).
    pub theta_xc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub replicate: usize,
    /// Indexed by [`Strategy::index`].
    pub slots: [SlotResult; 5],
}

impl ReplicationRecord {
    pub fn slot(&self, s: Strategy) -> &SlotResult {
        &self.slots[s.index()]
    }
}

/// Seed of replicate `r`: dataset from stream 0, strategy `s` from stream `s.index() + 1`.
pub fn replicate_seed(master_seed: u64, replicate: usize) -> u64 {
    derive_seed(master_seed, replicate as u64)
}

pub fn dataset_seed(master_seed: u64, replicate: usize) -> u64 {
    derive_seed(replicate_seed(master_seed, replicate), 0)
}

pub fn strategy_seed(master_seed: u64, replicate: usize, strategy: Strategy) -> u64 {
    derive_seed(replicate_seed(master_seed, replicate), strategy.index() as u64 + 1)
}

/// Analyses replicate `r` with the selected strategies. Strategy failures
/// are recorded in their slot; only data generation can fail the call.
pub fn run_replicate(
    spec: &DgpSpec,
    strategies: &[Strategy],
    cfg: &StrategyConfig,
    master_seed: u64,
    replicate: usize,
) -> Result<ReplicationRecord> {
    let data = generate_dataset(spec, dataset_seed(master_seed, replicate))?;
    let mut slots: [SlotResult; 5] = std::array::from_fn(|_| SlotResult::NotRun);
    for &s in strategies {
        let seed = strategy_seed(master_seed, replicate, s);
        slots[s.index()] = match run_strategy(s, &data, cfg, seed) {
            Ok(res) => SlotResult::Done(StrategySummary {
                delta: res.delta,
                theta_xc: res.theta_xc[1..].to_vec(),
            }),
            Err(e) => SlotResult::Failed(e.to_string()),
        };
    }
    Ok(ReplicationRecord { replicate, slots })
}

/// Runs `r` replicates without judging their failure rate.
pub fn collect_replications(
    spec: &DgpSpec,
    strategies: &[Strategy],
    r: usize,
    master_seed: u64,
    cfg: &StrategyConfig,
) -> Result<Vec<ReplicationRecord>> {
    if r == 0 {
        return Err(Error::InvalidInput("at least one replicate is required".into()));
    }
    if strategies.is_empty() {
        return Err(Error::EmptySelection);
    }
    spec.validate()?;
    // Replicates are the parallel unit; work inside a replicate stays sequential.
    let inner = StrategyConfig {
        parallelism: Parallelism::Sequential,
        ..cfg.clone()
    };
    map_indexed(r, cfg.parallelism, |rep| {
        run_replicate(spec, strategies, &inner, master_seed, rep)
    })
    .into_iter()
    .collect()
}

/// Fails when more than 5% of replicates failed for any strategy.
pub fn check_batch(records: &[ReplicationRecord]) -> Result<()> {
    for s in Strategy::ALL {
        let failed = records
            .iter()
            .filter(|r| matches!(r.slot(s), SlotResult::Failed(_)))
            .count();
        if failed as f64 > MAX_BATCH_FAILURE_SHARE * records.len() as f64 {
            return Err(Error::BatchFailure {
                strategy: s.to_string(),
                failed,
                total: records.len(),
            });
        }
    }
    Ok(())
}

/// Full study: `r` replicates analysed with every selected strategy.
pub fn run_replications(
    spec: &DgpSpec,
    strategies: &[Strategy],
    r: usize,
    master_seed: u64,
    cfg: &StrategyConfig,
) -> Result<Vec<ReplicationRecord>> {
    let records = collect_replications(spec, strategies, r, master_seed, cfg)?;
    check_batch(&records)?;
    Ok(records)
}

/// Aggregates for one strategy across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub mean_delta: f64,
    pub sd_delta: f64,
    pub bias: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
    pub mean_width: f64,
    pub median_width: f64,
    pub n_failed: usize,
    pub n_used: usize,
    /// Monte Carlo SE of `mean_delta` (and of `bias`).
    pub mean_delta_mcse: f64,
    pub mean_width_mcse: f64,
    pub theta_xc_mean: Vec<f64>,
    pub theta_xc_mcse: Vec<f64>,
}

/// Summary table keyed by strategy tag.
pub type SummaryTable = BTreeMap<String, StrategyStats>;

/// Bias, coverage and width summaries per strategy that has at least one
/// successful replicate. Failed replicates are excluded from every metric.
pub fn summarize(records: &[ReplicationRecord], truth: f64) -> Result<SummaryTable> {
    let mut table = SummaryTable::new();
    for s in Strategy::ALL {
        let mut done = Vec::new();
        let mut failed = 0;
        for rec in records {
            match rec.slot(s) {
                SlotResult::Done(d) => done.push(d),
                SlotResult::Failed(_) => failed += 1,
                SlotResult::NotRun => {}
            }
        }
        if done.is_empty() {
            continue;
        }
        let n = done.len() as f64;
        let points: Vec<f64> = done.iter().map(|d| d.delta.point).collect();
        let widths: Vec<f64> = done.iter().map(|d| d.delta.width()).collect();
        let covered = done.iter().filter(|d| d.delta.covers(truth)).count() as f64 / n;
        let mean_delta = mean(&points);
        let sd_delta = sample_sd(&points);
        let p = done.iter().map(|d| d.theta_xc.len()).min().unwrap_or(0);
        let (theta_xc_mean, theta_xc_mcse) = (0..p)
            .map(|j| {
                let col: Vec<f64> = done.iter().map(|d| d.theta_xc[j]).collect();
                (mean(&col), sample_sd(&col) / n.sqrt())
            })
            .unzip();
        table.insert(
            s.to_string(),
            StrategyStats {
                mean_delta,
                sd_delta,
                bias: mean_delta - truth,
                coverage: covered,
                coverage_mcse: (covered * (1.0 - covered) / n).sqrt(),
                mean_width: mean(&widths),
                median_width: quantile(&widths, 0.5),
                n_failed: failed,
                n_used: done.len(),
                mean_delta_mcse: sd_delta / n.sqrt(),
                mean_width_mcse: sample_sd(&widths) / n.sqrt(),
                theta_xc_mean,
                theta_xc_mcse,
            },
        );
    }
    if table.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(table)
}

pub fn write_summary_json<W: Write>(table: &SummaryTable, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, table).map_err(|e| Error::Io(e.to_string()))?;
    writer.write_all(b"\n")?;
    Ok(())
}

const RECORD_HEADER: [&str; 14] = [
    "replicate", "strategy", "delta_hat", "ci_low", "ci_high", "ci_width", "covered",
    "theta_xc_1", "theta_xc_2", "theta_xc_3", "theta_xc_4", "theta_xc_5", "theta_xc_6", "failed",
];

/// One row per (replicate, run strategy). Failed rows leave numeric cells empty.
pub fn write_records_csv<W: Write>(records: &[ReplicationRecord], truth: f64, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORD_HEADER).map_err(|e| Error::Io(e.to_string()))?;
    for rec in records {
        for s in Strategy::ALL {
            let mut row = vec![rec.replicate.to_string(), s.to_string()];
            match rec.slot(s) {
                SlotResult::NotRun => continue,
                SlotResult::Failed(_) => {
                    row.extend(std::iter::repeat_n(String::new(), 11));
                    row.push("1".into());
                }
                SlotResult::Done(d) => {
                    let e = &d.delta;
                    row.extend([e.point, e.interval_low, e.interval_high, e.width()].map(|v| v.to_string()));
                    row.push(u8::from(e.covers(truth)).to_string());
                    row.extend((0..P).map(|j| d.theta_xc.get(j).map_or(String::new(), f64::to_string)));
                    row.push("0".into());
                }
            }
            w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a records CSV back into replicate records (ordered by replicate id).
pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<ReplicationRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(|e| Error::Io(e.to_string()))?.clone();
    if header.len() != RECORD_HEADER.len() || header.iter().zip(RECORD_HEADER).any(|(a, b)| a.trim() != b) {
        return Err(Error::Parse {
            row: 1,
            column: String::new(),
            message: format!("expected header {}", RECORD_HEADER.join(",")),
        });
    }
    let mut by_rep: BTreeMap<usize, [SlotResult; 5]> = BTreeMap::new();
    for (k, rec) in r.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let field = |j: usize| rec.get(j).unwrap_or("").trim();
        let bad = |j: usize, message: String| Error::Parse {
            row,
            column: RECORD_HEADER[j].to_string(),
            message,
        };
        let num = |j: usize| -> Result<f64> {
            let v = field(j);
            v.parse::<f64>().map_err(|_| bad(j, format!("not a number: {v:?}")))
        };
        let replicate: usize = field(0).parse().map_err(|_| bad(0, format!("not an index: {:?}", field(0))))?;
        let strategy: Strategy = field(1).parse().map_err(|e: Error| bad(1, e.to_string()))?;
        let slot = match field(13) {
            "1" => SlotResult::Failed("recorded as failed".into()),
            "0" => {
                let mut theta = Vec::new();
                for j in 7..13 {
                    if !field(j).is_empty() {
                        theta.push(num(j)?);
                    }
                }
                SlotResult::Done(StrategySummary {
                    delta: DeltaEstimate {
                        point: num(2)?,
                        interval_low: num(3)?,
                        interval_high: num(4)?,
                        method: strategy,
                    },
                    theta_xc: theta,
                })
            }
            other => return Err(bad(13, format!("expected 0 or 1, found {other:?}"))),
        };
        let slots = by_rep
            .entry(replicate)
            .or_insert_with(|| std::array::from_fn(|_| SlotResult::NotRun));
        slots[strategy.index()] = slot;
    }
    Ok(by_rep
        .into_iter()
        .map(|(replicate, slots)| ReplicationRecord { replicate, slots })
        .collect())
}
