//! `psbayes`: simulate data, analyse it with the five strategies, run the
//! replicated study, summarise it and draw the boxplots.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or model error, 3 too many
//! failed replicates (outputs are still written).

mod config;
mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use psbayes::exec::with_threads;
use psbayes::sim::{
    check_batch, collect_replications, dataset_seed, generate_dataset, read_records_csv, strategy_seed, summarize,
    true_delta, write_records_csv, write_summary_json, SummaryTable,
};
use psbayes::strategies::{run_strategy, Diagnostics};
use psbayes::Dataset;
use serde::Serialize;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] psbayes::Error),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Model(psbayes::Error::BatchFailure { .. }) => 3,
            CliError::Model(_) | CliError::Io { .. } => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "psbayes", version, about = "Propensity score adjustment with sequential, joint and cut-feedback estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one simulated dataset as CSV (x,y,c1,...,c6).
    Simulate(SimulateArgs),
    /// Run strategies on a dataset CSV and print their estimates as JSON.
    Analyze(AnalyzeArgs),
    /// Run the replicated study, writing records.csv and summary.json.
    Replicate(ReplicateArgs),
    /// Summarise a records CSV as JSON.
    Summarize(SummarizeArgs),
    /// Draw SVG boxplots from a records CSV.
    Plot(PlotArgs),
}

/// Settings shared with the JSON config; flags win over the file.
#[derive(Args)]
struct StudyArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Units per dataset.
    #[arg(long)]
    n: Option<usize>,
    /// "all" or a comma-separated subset of A1,A2,B,C,D.
    #[arg(long)]
    strategies: Option<String>,
    /// Worker threads (1 runs everything sequentially).
    #[arg(long)]
    jobs: Option<usize>,
    /// Bootstrap resamples for A1 and A2.
    #[arg(long)]
    boot: Option<usize>,
    /// Metropolis iterations per chain (B, D and the outer chain of C).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
}

impl StudyArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.n {
            cfg.dgp.n = v;
        }
        if let Some(v) = &self.strategies {
            cfg.strategies = v.clone();
        }
        if let Some(v) = self.jobs {
            cfg.jobs = Some(v);
        }
        if let Some(v) = self.boot {
            cfg.analysis.boot = v;
        }
        if let Some(v) = self.iterations {
            cfg.analysis.chain.iterations = v;
        }
        if let Some(v) = self.burn_in {
            cfg.analysis.chain.burn_in = v;
        }
        if let Some(v) = self.thin {
            cfg.analysis.chain.thin = v;
        }
        cfg.analysis.parallelism = cfg.parallelism();
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    /// Replicate index; the dataset is the one that replicate analyses.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
    /// Output file (standard output when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Dataset CSV with header x,y,c1,...,cp.
    #[arg(long)]
    data: PathBuf,
    /// Replicate index used to derive strategy seeds from the master seed.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplicateArgs {
    /// Number of replicates.
    #[arg(long)]
    r: Option<usize>,
    #[command(flatten)]
    study: StudyArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    records: PathBuf,
    /// True effect the intervals are scored against.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    true_delta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    true_delta: f64,
    /// Config whose DGP supplies the true treatment coefficients.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(io_err(path)),
        None => io::stdout().write_all(bytes).map_err(io_err(Path::new("<stdout>"))),
    }
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(Dataset::read_csv(io::BufReader::new(file))?)
}

fn read_records(path: &Path) -> Result<Vec<psbayes::sim::ReplicationRecord>, CliError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(read_records_csv(io::BufReader::new(file))?)
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.n {
        cfg.dgp.n = v;
    }
    cfg.dgp.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = generate_dataset(&cfg.dgp, dataset_seed(cfg.seed, args.replicate))?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    emit(args.out.as_deref(), &buf)
}

#[derive(Serialize)]
#[serde(untagged)]
enum AnalyzeEntry {
    Done {
        delta_hat: f64,
        ci_low: f64,
        ci_high: f64,
        ci_width: f64,
        /// Intercept first.
        theta_xc: Vec<f64>,
        theta_xc_sd: Option<Vec<f64>>,
        diagnostics: Diagnostics,
    },
    Failed {
        error: String,
    },
}

fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let cfg = args.study.resolve()?;
    cfg.validate()?;
    let strategies = cfg.strategy_list()?;
    let data = read_dataset(&args.data)?;
    let mut out = BTreeMap::new();
    let mut first_error = None;
    with_threads(cfg.jobs, || {
        for &s in &strategies {
            let seed = strategy_seed(cfg.seed, args.replicate, s);
            let entry = match run_strategy(s, &data, &cfg.analysis, seed) {
                Ok(r) => AnalyzeEntry::Done {
                    delta_hat: r.delta.point,
                    ci_low: r.delta.interval_low,
                    ci_high: r.delta.interval_high,
                    ci_width: r.delta.width(),
                    theta_xc: r.theta_xc,
                    theta_xc_sd: r.theta_xc_sd,
                    diagnostics: r.diagnostics,
                },
                Err(e) => {
                    first_error.get_or_insert(e.clone());
                    AnalyzeEntry::Failed { error: e.to_string() }
                }
            };
            out.insert(s.to_string(), entry);
        }
    });
    let mut buf = serde_json::to_vec_pretty(&out).map_err(|e| CliError::Usage(e.to_string()))?;
    buf.push(b'\n');
    emit(args.out.as_deref(), &buf)?;
    match first_error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn summary_bytes(table: &SummaryTable) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_summary_json(table, &mut buf)?;
    Ok(buf)
}

fn replicate(args: ReplicateArgs) -> Result<(), CliError> {
    let mut cfg = args.study.resolve()?;
    if let Some(r) = args.r {
        cfg.r = r;
    }
    if let Some(out) = args.out {
        cfg.out = Some(out);
    }
    cfg.validate()?;
    let strategies = cfg.strategy_list()?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let truth = true_delta(&cfg.dgp).value;
    let records = with_threads(cfg.jobs, || {
        collect_replications(&cfg.dgp, &strategies, cfg.r, cfg.seed, &cfg.analysis)
    })?;
    let mut csv = Vec::new();
    write_records_csv(&records, truth, &mut csv)?;
    let records_path = dir.join("records.csv");
    fs::write(&records_path, csv).map_err(io_err(&records_path))?;
    // A batch failure outranks an empty summary: report it after writing what exists.
    let table = summarize(&records, truth);
    if let Ok(table) = &table {
        let summary_path = dir.join("summary.json");
        fs::write(&summary_path, summary_bytes(table)?).map_err(io_err(&summary_path))?;
        println!("{:<4} {:>10} {:>9} {:>9} {:>9} {:>7}", "", "mean", "sd", "coverage", "width", "failed");
        for (s, st) in table {
            println!(
                "{s:<4} {:>+10.4} {:>9.4} {:>9.3} {:>9.4} {:>7}",
                st.mean_delta, st.sd_delta, st.coverage, st.mean_width, st.n_failed
            );
        }
    }
    check_batch(&records)?;
    table?;
    Ok(())
}

fn summarize_cmd(args: SummarizeArgs) -> Result<(), CliError> {
    let records = read_records(&args.records)?;
    let table = summarize(&records, args.true_delta)?;
    emit(args.out.as_deref(), &summary_bytes(&table)?)
}

fn plot_cmd(args: PlotArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let records = read_records(&args.records)?;
    let svg = plot::render_svg(&records, args.true_delta, &cfg.dgp);
    emit(Some(&args.out), svg.as_bytes())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Replicate(a) => replicate(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::Plot(a) => plot_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("psbayes: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
