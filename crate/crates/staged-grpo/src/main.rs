//! Command-line front end: `train`, `eval`, `gen-data` and `plot`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use staged_grpo::config::{parse_config, RunConfig};
use staged_grpo::curriculum::{run_training, TrainSink};
use staged_grpo::error::{Error, Result};
use staged_grpo::evaluation::{benchmark_suite, format_table, write_table_records};
use staged_grpo::grpo::RolloutGroup;
use staged_grpo::metrics::{parse_metrics, Record};
use staged_grpo::plot::render_curves;
use staged_grpo::policy::{load_checkpoint, save_checkpoint, PolicyParams};
use staged_grpo::toy_env::{generate_dataset, write_dataset, DifficultyLevel};

#[derive(Parser)]
#[command(
    name = "staged-grpo",
    about = "Difficulty-staged GRPO training on a synthetic arithmetic environment",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the staged training loop and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key: --set section.key=value (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out suites.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for the eval record file.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Generate a dataset dump.
    GenData {
        #[arg(long)]
        level: u8,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render reward and surrogate curves from a metrics log.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        /// Output directory; defaults to the metrics file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_overrides(set: &[String]) -> Result<Vec<(String, String)>> {
    set.iter()
        .map(|pair| {
            pair.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| {
                    Error::Config(format!("--set expects section.key=value, got `{pair}`"))
                })
        })
        .collect()
}

/// Exclusive ownership of a run directory for the lifetime of a train run.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join("lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "pid={}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(
                format!(
                    "run directory `{}` is locked by another train run (remove `lock` if stale)",
                    dir.display()
                ),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Streams records to `metrics.log` (flushed per line) and checkpoints to
/// `checkpoints/stage<l>-step<k>`.
struct DirSink {
    metrics: BufWriter<File>,
    checkpoints: PathBuf,
}

impl DirSink {
    fn new(dir: &Path) -> Result<Self> {
        let checkpoints = dir.join("checkpoints");
        fs::create_dir_all(&checkpoints)?;
        let metrics = BufWriter::new(File::create(dir.join("metrics.log"))?);
        Ok(Self {
            metrics,
            checkpoints,
        })
    }
}

impl TrainSink for DirSink {
    fn on_record(&mut self, record: &Record) -> Result<()> {
        writeln!(self.metrics, "{}", record.format())?;
        self.metrics.flush()?;
        Ok(())
    }

    fn on_checkpoint(&mut self, stage: u8, step: u64, params: &PolicyParams) -> Result<()> {
        let path = self.checkpoints.join(format!("stage{stage}-step{step}"));
        save_checkpoint(params, &path)
    }

    fn on_update_batch(&mut self, _batch: &[RolloutGroup]) -> Result<()> {
        Ok(())
    }
}

fn write_run_meta(dir: &Path, config: &RunConfig) -> Result<()> {
    let run = config.to_train_run()?;
    let mut f = File::create(dir.join("run-meta"))?;
    writeln!(f, "seed={}", run.master_seed)?;
    writeln!(f, "mode={}", run.mode.label())?;
    writeln!(f, "version={}", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

fn cmd_train(config_path: &Path, set: &[String], out: &Path) -> Result<()> {
    let overrides = parse_overrides(set)?;
    let config = parse_config(config_path, &overrides)?;
    fs::create_dir_all(out)?;
    let _lock = RunLock::acquire(out)?;
    fs::write(out.join("config-resolved"), config.echo())?;
    write_run_meta(out, &config)?;
    let run = config.to_train_run()?;
    let mut sink = DirSink::new(out)?;
    let outcome = run_training(&run, &mut sink)?;
    let steps = outcome
        .records
        .iter()
        .filter(|r| matches!(r, Record::Step(_)))
        .count();
    println!(
        "train: {} optimizer steps across {} stages; run directory: {}",
        steps,
        run.stages.len(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(config_path: &Path, set: &[String], checkpoint: &Path, out: &Path) -> Result<()> {
    let overrides = parse_overrides(set)?;
    let config = parse_config(config_path, &overrides)?;
    let params = load_checkpoint(checkpoint)?;
    let expected = config.policy_dims()?;
    if params.dims != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint dims {:?} do not match configured dims {:?}",
            params.dims, expected
        )));
    }
    let eval_cfg = config.eval_config()?;
    let mode = config.mode()?;
    let mut suites = Vec::new();
    for (level, n, seed) in config.eval_suites()? {
        let tasks = generate_dataset(DifficultyLevel::new(level)?, n, seed)?;
        suites.push((format!("level{level}"), tasks));
    }
    let table = benchmark_suite(&params, &suites, &eval_cfg, mode)?;
    print!("{}", format_table(&table));
    fs::create_dir_all(out)?;
    let record_path = out.join("eval-report.tsv");
    let mut f = File::create(&record_path)?;
    write_table_records(&table, &mut f)?;
    println!("records: {}", record_path.display());
    Ok(())
}

fn cmd_gen_data(level: u8, n: usize, seed: u64, out: &Path) -> Result<()> {
    let tasks = generate_dataset(DifficultyLevel::new(level)?, n, seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = BufWriter::new(File::create(out)?);
    write_dataset(&tasks, &mut f)?;
    f.flush()?;
    println!("wrote {} level-{} tasks to {}", n, level, out.display());
    Ok(())
}

fn cmd_plot(metrics_path: &Path, out: Option<&Path>) -> Result<()> {
    let file = File::open(metrics_path)?;
    let records = parse_metrics(std::io::BufReader::new(file))?;
    if records.is_empty() {
        eprintln!("warning: metrics log is empty; emitting placeholder plots");
    }
    let out_dir = match out {
        Some(dir) => dir.to_path_buf(),
        None => metrics_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    fs::create_dir_all(&out_dir)?;
    let (reward, surrogate) = render_curves(&records);
    let reward_path = out_dir.join("reward.svg");
    let surrogate_path = out_dir.join("surrogate.svg");
    fs::write(&reward_path, reward)?;
    fs::write(&surrogate_path, surrogate)?;
    println!(
        "plots: {} {}",
        reward_path.display(),
        surrogate_path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config, set, out } => cmd_train(config, set, out),
        Command::Eval {
            config,
            set,
            checkpoint,
            out,
        } => cmd_eval(config, set, checkpoint, out),
        Command::GenData {
            level,
            n,
            seed,
            out,
        } => cmd_gen_data(*level, *n, *seed, out),
        Command::Plot { metrics, out } => cmd_plot(metrics, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
