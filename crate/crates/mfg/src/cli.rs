//! Command-line front end: training runs, reference tables, and metric
//! reports for saved checkpoints.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{MeanFieldMode, RunConfig};
use crate::error::{MfgError, Result};
use crate::metrics::{reference_cost, MetricsEvaluator, MetricsRecord, TestPointSet, METRICS_HEADER};
use crate::problem::{make_problem, MfgProblem, Variant};
use crate::reference::ReferenceEvaluator;
use crate::trainer::{run_policy_iteration, TrainingSession};

/// Particle-based deep policy iteration for finite-horizon mean-field games.
#[derive(Debug, Parser)]
#[command(name = "mfg", version, about)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a run described by a config file and write its artifacts.
    Run {
        /// Sectioned `key = value` config file.
        config: PathBuf,
        /// Overrides the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the closed-form reference table and the reference optimum.
    Reference {
        /// Problem variant (lq1, lq2, lq3, systemic_risk).
        variant: String,
        /// State dimension.
        dim: usize,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Number of table rows over the horizon.
        #[arg(long, default_value_t = 101)]
        rows: usize,
        /// Seed for the cost point set behind the reference optimum.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Recompute metrics for a saved checkpoint without training.
    Evaluate {
        /// Checkpoint file, or a run directory holding checkpoints.
        checkpoint: PathBuf,
        /// Config file describing the problem and metric settings.
        config: PathBuf,
        /// Overrides the metric seed from the config.
        #[arg(long)]
        metric_seed: Option<u64>,
    },
}

/// Parses the command line, runs the requested job, and returns the
/// process exit code: 0 on success, 2 for configuration and usage
/// problems, 1 for runtime failures.
pub fn main() -> i32 {
    let cli = Cli::parse();
    init_thread_pool();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                MfgError::Config(_) | MfgError::ConfigParse { .. } => 2,
                _ => 1,
            }
        }
    }
}

/// Sizes the global worker pool from the `MFG_THREADS` environment
/// variable; without it the pool defaults to the machine's core count.
fn init_thread_pool() {
    let Ok(value) = std::env::var("MFG_THREADS") else {
        return;
    };
    match value.parse::<usize>() {
        Ok(threads) if threads >= 1 => {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
        _ => eprintln!("warning: ignoring MFG_THREADS={value:?}; expected a positive integer"),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed } => run_training(&config, seed),
        Command::Reference {
            variant,
            dim,
            output,
            rows,
            seed,
        } => write_reference(&variant, dim, rows, seed, output.as_deref()),
        Command::Evaluate {
            checkpoint,
            config,
            metric_seed,
        } => evaluate_checkpoint(&checkpoint, &config, metric_seed),
    }
}

/// Builds the closed-form reference when the variant has one.
fn reference_for(config: &RunConfig) -> Result<Option<ReferenceEvaluator>> {
    if !config.variant.is_reference_solvable() {
        return Ok(None);
    }
    let problem: MfgProblem<f64> = config.build_problem()?;
    Ok(Some(ReferenceEvaluator::for_problem(&problem)?))
}

fn evaluator_for(config: &RunConfig) -> Result<MetricsEvaluator<f32>> {
    let problem: MfgProblem<f32> = config.build_problem()?;
    let evaluator = MetricsEvaluator::new(
        problem,
        reference_for(config)?,
        config.metric_seed(),
        config.cost_paths,
    )?;
    match config.mean_field {
        MeanFieldMode::Empirical => Ok(evaluator),
        MeanFieldMode::Reference => evaluator.against_reference_mean(),
    }
}

/// Artifact sink for one training run: the metrics history plus numbered
/// checkpoints and particle snapshots under the output directory.
struct RunLog {
    dir: PathBuf,
    metrics: BufWriter<File>,
    last_checkpoint: Option<PathBuf>,
}

impl RunLog {
    fn create(dir: &Path) -> Result<RunLog> {
        fs::create_dir_all(dir)?;
        let mut metrics = BufWriter::new(File::create(dir.join("metrics.csv"))?);
        writeln!(metrics, "{METRICS_HEADER}")?;
        Ok(RunLog {
            dir: dir.to_path_buf(),
            metrics,
            last_checkpoint: None,
        })
    }

    fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = record.csv_line();
        writeln!(self.metrics, "{line}")?;
        self.metrics.flush()?;
        println!("{line}");
        Ok(())
    }

    fn save_checkpoint(&mut self, session: &TrainingSession<f32>, label: &str) -> Result<PathBuf> {
        let path = self.dir.join(format!("checkpoint_{label}.txt"));
        let stats = session.ensemble().bucket_stats(session.problem())?;
        save_checkpoint(
            &path,
            session.problem(),
            session.iteration(),
            session.control(),
            session.value(),
            session.test_net(),
            &stats,
        )?;
        self.last_checkpoint = Some(path.clone());
        Ok(path)
    }

    fn save_snapshot(&self, session: &TrainingSession<f32>, label: &str) -> Result<()> {
        let file = File::create(self.dir.join(format!("snapshot_{label}.csv")))?;
        let mut out = BufWriter::new(file);
        session.ensemble().write_snapshot(&mut out)?;
        out.flush()?;
        Ok(())
    }

    fn last_checkpoint_display(&self) -> String {
        match &self.last_checkpoint {
            Some(path) => path.display().to_string(),
            None => "none".into(),
        }
    }
}

fn run_training(config_path: &Path, seed_override: Option<u64>) -> Result<()> {
    let mut config = RunConfig::parse_file(config_path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    config.validate()?;

    let mut log = RunLog::create(&config.output_dir)?;
    fs::write(config.output_dir.join("config.cfg"), config.serialize())?;
    println!("writing artifacts to {}", config.output_dir.display());

    let evaluator = evaluator_for(&config)?;
    let problem: MfgProblem<f32> = config.build_problem()?;
    let mut session = TrainingSession::new(problem, config.trainer_config())?;

    let started = Instant::now();
    let total = config.iterations;
    let losses = session.current_losses()?;
    let stats = session.ensemble().bucket_stats(session.problem())?;
    let mut last_record = evaluator.evaluate(
        session.control(),
        session.value(),
        &stats,
        0,
        losses.pe_loss,
        losses.pi_objective,
        started.elapsed().as_secs_f64(),
    )?;
    log.append(&last_record)?;
    if config.snapshot_cadence > 0 {
        log.save_snapshot(&session, &format!("{:07}", 0))?;
    }

    let outcome = run_policy_iteration(&mut session, |s, losses| {
        let i = s.iteration();
        if i % config.metrics_cadence == 0 || i == total {
            let stats = s.ensemble().bucket_stats(s.problem())?;
            last_record = evaluator.evaluate(
                s.control(),
                s.value(),
                &stats,
                i,
                losses.pe_loss,
                losses.pi_objective,
                started.elapsed().as_secs_f64(),
            )?;
            log.append(&last_record)?;
        }
        if config.checkpoint_cadence > 0 && i % config.checkpoint_cadence == 0 && i != total {
            log.save_checkpoint(s, &format!("{i:07}"))?;
        }
        if config.snapshot_cadence > 0 && (i % config.snapshot_cadence == 0 || i == total) {
            log.save_snapshot(s, &format!("{i:07}"))?;
        }
        Ok(())
    });
    if let Err(err) = outcome {
        return Err(match err {
            MfgError::Divergence { iteration, .. } => MfgError::Divergence {
                iteration,
                checkpoint: log.last_checkpoint_display(),
            },
            other => other,
        });
    }

    let final_checkpoint = log.save_checkpoint(&session, "final")?;
    let summary = summary_text(&config, &last_record, evaluator.j_star(), &final_checkpoint);
    let summary_path = config.output_dir.join("summary.txt");
    fs::write(&summary_path, summary)?;
    println!("summary written to {}", summary_path.display());
    Ok(())
}

/// The final run summary: identification, timing, and the closing metric
/// values, as `key = value` lines.
fn summary_text(
    config: &RunConfig,
    record: &MetricsRecord,
    j_star: f64,
    checkpoint: &Path,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("variant = {}\n", config.variant));
    out.push_str(&format!("dim = {}\n", config.dim));
    out.push_str(&format!("iterations = {}\n", record.iteration));
    out.push_str(&format!("seed = {}\n", config.seed));
    out.push_str(&format!("wall_s = {}\n", record.wall_s));
    out.push_str(&format!("pe_loss = {}\n", record.pe_loss));
    out.push_str(&format!("pi_objective = {}\n", record.pi_objective));
    out.push_str(&format!("J_hat = {}\n", record.j_hat));
    if j_star.is_finite() {
        out.push_str(&format!("J_star = {j_star}\n"));
        out.push_str(&format!("RC = {}\n", record.rc));
        out.push_str(&format!("RE1 = {}\n", record.re1));
        out.push_str(&format!("REinf = {}\n", record.re_inf));
    }
    out.push_str(&format!("checkpoint = {}\n", checkpoint.display()));
    out
}

fn write_reference(
    variant: &str,
    dim: usize,
    rows: usize,
    seed: u64,
    output: Option<&Path>,
) -> Result<()> {
    let variant: Variant = variant.parse()?;
    if !variant.is_reference_solvable() {
        return Err(MfgError::Config(format!(
            "{variant} has no closed-form reference; choose one of lq1, lq2, lq3, systemic_risk"
        )));
    }
    let problem = make_problem::<f64>(variant, dim)?;
    let reference = ReferenceEvaluator::for_problem(&problem)?;
    let points = TestPointSet::for_problem(&problem, seed);
    let j_star = reference_cost(&reference, points.cost_points())?;
    let mut table = Vec::new();
    reference.write_table(rows, &mut table)?;
    writeln!(table, "# J_star = {j_star}")?;
    match output {
        Some(path) => fs::write(path, &table)?,
        None => std::io::stdout().write_all(&table)?,
    }
    Ok(())
}

/// Accepts either a checkpoint file or a run directory; a directory
/// resolves to its final checkpoint, else its highest-numbered one.
fn resolve_checkpoint_path(path: &Path) -> Result<PathBuf> {
    if !path.exists() {
        return Err(MfgError::Checkpoint(format!(
            "{} does not exist",
            path.display()
        )));
    }
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let final_path = path.join("checkpoint_final.txt");
    if final_path.is_file() {
        return Ok(final_path);
    }
    let mut candidates: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("checkpoint_") && n.ends_with(".txt"))
        })
        .collect();
    candidates.sort();
    candidates.pop().ok_or_else(|| {
        MfgError::Checkpoint(format!("no checkpoint files in {}", path.display()))
    })
}

fn evaluate_checkpoint(
    checkpoint: &Path,
    config_path: &Path,
    metric_seed: Option<u64>,
) -> Result<()> {
    let mut config = RunConfig::parse_file(config_path)?;
    if let Some(seed) = metric_seed {
        config.metric_seed = Some(seed);
    }
    config.validate()?;

    let path = resolve_checkpoint_path(checkpoint)?;
    let loaded: Checkpoint<f32> = load_checkpoint(&path)?;
    let problem: MfgProblem<f32> = config.build_problem()?;
    loaded.check_compatible(&problem)?;

    let evaluator = evaluator_for(&config)?;
    let record = evaluator.evaluate(
        &loaded.control,
        &loaded.value,
        &loaded.stats,
        loaded.iteration,
        f64::NAN,
        f64::NAN,
        0.0,
    )?;

    let mut report = String::new();
    report.push_str(&format!("checkpoint = {}\n", path.display()));
    report.push_str(&format!("variant = {}\n", loaded.variant));
    report.push_str(&format!("dim = {}\n", loaded.dim));
    report.push_str(&format!("iteration = {}\n", loaded.iteration));
    report.push_str(&format!("J_hat = {}\n", record.j_hat));
    if evaluator.j_star().is_finite() {
        report.push_str(&format!("J_star = {}\n", evaluator.j_star()));
        report.push_str(&format!("RC = {}\n", record.rc));
        report.push_str(&format!("RE1 = {}\n", record.re1));
        report.push_str(&format!("REinf = {}\n", record.re_inf));
    }
    print!("{report}");
    Ok(())
}
