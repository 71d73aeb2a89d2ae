//! Command-line driver.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fairgrade_core::fairmetrics::{default_included, BinarizeOptions};
use fairgrade_core::gradcheck::{self, GradCheckConfig, LossVariant};
use fairgrade_core::grade::Cutoff;
use fairgrade_core::synth::{self, verify_statistics};
use fairgrade_core::trainer::{evaluate, train, StrategyConfig};
use log::{info, warn};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::write_dataset;
use crate::report::{self, StrategyResult};

/// Tolerance of the generated-data self check.
pub const SYNTH_STAT_TOLERANCE: f64 = 0.01;
/// Largest accepted relative gradient error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "fairgrade", version, about = "Grade prediction with bias mitigation and fairness reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort.
    Synth(SynthArgs),
    /// Train one strategy and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate checkpoints and write fairness tables.
    Report(ReportArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Train several strategies on one split and report them together.
    Matrix(MatrixArgs),
    /// Print the complete default configuration, generator block included.
    Config,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CommonTrain {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with enrollments.csv and demographics.csv; overrides the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonTrain,
    #[arg(long)]
    pub strategy: Option<String>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_cutoff)]
    pub cutoff: Option<Cutoff>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Single seed; seeds 0, 1 and 2 when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Courses, letters and hidden width as `N,M,H`.
    #[arg(long, value_parser = parse_dims, default_value = "3,4,5")]
    pub dims: (usize, usize, usize),
    /// Perturb one analytic gradient entry; the check must then fail.
    #[arg(long)]
    pub corrupt: bool,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[command(flatten)]
    pub common: CommonTrain,
    /// Comma-separated strategy ids.
    #[arg(long, value_delimiter = ',', default_value = "default,race_feature,adversarial,grad_rate_wgh,equal_wgh")]
    pub strategies: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_cutoff)]
    pub cutoff: Option<Cutoff>,
}

fn parse_cutoff(s: &str) -> std::result::Result<Cutoff, String> {
    match s {
        "A" | "a" => Ok(Cutoff::ACategory),
        "B" | "b" => Ok(Cutoff::BOrBetter),
        _ => Err(format!("expected A or B, found '{s}'")),
    }
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [n, m, h] if n > 0 && m >= 2 && h > 0 => Ok((n, m, h)),
        _ => Err("expected N,M,H with N >= 1, M >= 2, H >= 1".into()),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Matrix(a) => cmd_matrix(&a),
        Command::Config => {
            let mut cfg = RunConfig::default();
            cfg.data.synth = Some(Default::default());
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let mut synth_cfg = cfg.synth_config();
    if let Some(s) = a.seed {
        synth_cfg.seed = s;
    }
    let dataset = synth::generate(&synth_cfg)?;
    write_dataset(&a.out_dir, &dataset)?;
    let stats = verify_statistics(&dataset, &synth_cfg, SYNTH_STAT_TOLERANCE);
    report::write_json(&a.out_dir.join("stats.json"), &stats)?;
    let failed = stats.iter().filter(|s| !s.pass).count();
    println!(
        "wrote {} students, {} enrollments to {}; {}/{} statistics within {SYNTH_STAT_TOLERANCE}",
        dataset.students.len(),
        dataset.num_enrollments(),
        a.out_dir.display(),
        stats.len() - failed,
        stats.len()
    );
    for s in stats.iter().filter(|s| !s.pass) {
        warn!("{}: target {:.4}, observed {:?}", s.name, s.target, s.observed);
    }
    Ok(())
}

fn apply_common(cfg: &mut RunConfig, c: &CommonTrain) {
    if let Some(d) = &c.data {
        cfg.data.dir = Some(d.clone());
        cfg.data.enrollments = None;
        cfg.data.demographics = None;
    }
    if let Some(x) = c.alpha {
        cfg.strategy.alpha = x;
    }
    if let Some(s) = c.seed {
        cfg.model.seed = s;
    }
    if let Some(e) = c.max_epochs {
        cfg.train.max_epochs = e;
    }
}

/// Directory-safe form of a strategy id.
pub fn strategy_dir_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

fn train_one(cfg: &RunConfig, strategy: &StrategyConfig, out: &Path) -> Result<()> {
    let dataset = cfg.load_dataset()?;
    let split = cfg.split(&dataset)?;
    train_on(cfg, &dataset, &split, strategy, out)
}

fn train_on(
    cfg: &RunConfig,
    dataset: &fairgrade_core::cohort::CohortDataset,
    split: &fairgrade_core::cohort::SplitSpec,
    strategy: &StrategyConfig,
    out: &Path,
) -> Result<()> {
    info!("training {} (alpha {}) with seed {}", strategy.id, strategy.alpha, cfg.model.seed);
    let (ckpt, history) = train(dataset, split, strategy, &cfg.train_config())?;
    checkpoint::save(out, &ckpt)?;
    report::write_history_csv(&out.join("history.csv"), &history)?;
    println!(
        "{}: best epoch {} of {}, validation loss {:.6}; checkpoint in {}",
        strategy.id,
        ckpt.best_epoch,
        history.len(),
        ckpt.best_val_loss,
        out.display()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    apply_common(&mut cfg, &a.common);
    if let Some(s) = &a.strategy {
        cfg.strategy.id = s.clone();
    }
    let strategy = cfg.resolve_strategy(&cfg.strategy.id)?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.report.out.clone())
        .unwrap_or_else(|| PathBuf::from(strategy_dir_name(&cfg.strategy.id)));
    train_one(&cfg, &strategy, &out)
}

fn binarize_options(cfg: &RunConfig, cutoff: Option<Cutoff>) -> BinarizeOptions {
    BinarizeOptions {
        cutoff: cutoff.unwrap_or(cfg.report.cutoff),
        pass_as_positive: cfg.report.pass_as_positive,
    }
}

fn included(cfg: &RunConfig, group_list: &[String]) -> Result<Vec<bool>> {
    match &cfg.report.included_groups {
        None => Ok(default_included(group_list)),
        Some(names) => {
            if let Some(bad) = names.iter().find(|n| !group_list.contains(n)) {
                return Err(Error::Usage(format!("report.included_groups: unknown group '{bad}'")));
            }
            Ok(group_list.iter().map(|g| names.contains(g)).collect())
        }
    }
}

fn finish_report(out: &Path, results: &[StrategyResult]) -> Result<()> {
    let t = report::write_all(out, results)?;
    print!("{}", report::render(&t));
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(d) = &a.data {
        cfg.data.dir = Some(d.clone());
        cfg.data.enrollments = None;
        cfg.data.demographics = None;
    }
    let ckpts = a
        .checkpoints
        .iter()
        .map(|p| checkpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    let dataset = cfg.load_dataset()?;
    let split = cfg.split(&dataset)?;
    let opts = binarize_options(&cfg, a.cutoff);
    let inc = included(&cfg, &dataset.group_list)?;
    let mut results = Vec::new();
    for ck in &ckpts {
        let preds = evaluate(ck, &dataset, &split, ck.strategy.inference_mode)?;
        results.push(report::summarize(&ck.strategy.id, &preds, opts, &inc)?);
    }
    let out = a.out.clone().or(cfg.report.out.clone()).unwrap_or_else(|| PathBuf::from("report"));
    finish_report(&out, &results)
}

fn cmd_matrix(a: &MatrixArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    apply_common(&mut cfg, &a.common);
    let strategies = a
        .strategies
        .iter()
        .map(|s| cfg.resolve_strategy(s))
        .collect::<Result<Vec<_>>>()?;
    let dataset = cfg.load_dataset()?;
    let split = cfg.split(&dataset)?;
    let opts = binarize_options(&cfg, a.cutoff);
    let inc = included(&cfg, &dataset.group_list)?;
    let mut results = Vec::new();
    for s in &strategies {
        let dir = a.out.join(strategy_dir_name(&s.id.to_string()));
        train_on(&cfg, &dataset, &split, s, &dir)?;
        let ck = checkpoint::load(&dir)?;
        let preds = evaluate(&ck, &dataset, &split, s.inference_mode)?;
        results.push(report::summarize(&s.id, &preds, opts, &inc)?);
    }
    finish_report(&a.out, &results)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let seeds: Vec<u64> = a.seed.map_or_else(|| vec![0, 1, 2], |s| vec![s]);
    let (n, m, h) = a.dims;
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for seed in seeds {
        let cfg = GradCheckConfig {
            num_courses: n,
            num_letters: m,
            hidden: h,
            seed,
            corrupt: a.corrupt,
            ..GradCheckConfig::default()
        };
        for v in LossVariant::standard() {
            let r = gradcheck::check(&cfg, v)?;
            let ok = r.passes(GRADCHECK_TOLERANCE);
            println!(
                "{} {:<24} seed {seed} max rel err {:.3e} at {}[{}]",
                if ok { "PASS" } else { "FAIL" },
                r.variant,
                r.max_rel_error,
                r.worst_block,
                r.worst_offset
            );
            worst = worst.max(r.max_rel_error);
            if !ok {
                failures.push(format!("{} seed {seed}", r.variant));
            }
        }
    }
    println!("max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e})");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::CheckFailed(format!("gradient check failed: {}", failures.join(", "))))
    }
}
