use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::metrics::{harmonic_mean, write_metrics_csv, write_summary_json};
use super::train::{evaluate, Experiment};
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::losses::ConstraintMode;
use crate::profiling::{write_embeddings, write_silhouette_report};
use crate::promptcore::PromptModel;
use crate::toyworld::Split;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "aapl", about = "Attribute-decoupled prompt learning on a synthetic image world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from scratch; writes checkpoint.bin, metrics.csv, summary.json and config.toml.
    Train {
        config: PathBuf,
        /// Output directory; defaults to `[output] dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test accuracy of a checkpoint on the base or new classes.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        #[arg(long, value_enum)]
        split: SplitArg,
    },
    /// Silhouette profile of a checkpoint; writes silhouette.csv and embeddings.csv.
    Profile {
        checkpoint: PathBuf,
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dumps the profiling delta meta tokens of a checkpoint.
    ExportEmbeddings {
        checkpoint: PathBuf,
        config: PathBuf,
        out: PathBuf,
    },
    /// Serial grid over alpha, constraint_mode and wrs; writes sweep.csv.
    Sweep {
        config: PathBuf,
        /// `key=v1,v2,...` with key one of alpha, constraint_mode, wrs. Repeatable.
        #[arg(long = "grid", required = true)]
        grid: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Base,
    New,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Base => Split::Base,
            SplitArg::New => Split::New,
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 on bad arguments, config or I/O
/// errors, 2 on numeric failure.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_CONFIG
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            train_into(&cfg, &dir)?;
            Ok(())
        }
        Command::Eval {
            checkpoint,
            config,
            split,
        } => {
            let (ex, model) = load(&checkpoint, &config)?;
            let acc = 100.0 * evaluate(&model, ex.dataset(), split.into())?;
            println!("{acc}");
            Ok(())
        }
        Command::Profile {
            checkpoint,
            config,
            out,
        } => {
            let (ex, model) = load(&checkpoint, &config)?;
            let dir = out.unwrap_or_else(|| ex.config().output.dir.clone());
            fs::create_dir_all(&dir)?;
            let (report, records) = ex.profile(&model, 0)?;
            write_silhouette_report(&mut create(&dir.join("silhouette.csv"))?, &report)?;
            write_embeddings(&mut create(&dir.join("embeddings.csv"))?, &records)?;
            println!("overall silhouette {:.6}", report.overall);
            Ok(())
        }
        Command::ExportEmbeddings {
            checkpoint,
            config,
            out,
        } => {
            let (ex, model) = load(&checkpoint, &config)?;
            let records = ex.profile_deltas(&model, 0)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_embeddings(&mut create(&out)?, &records)
        }
        Command::Sweep { config, grid, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            sweep(&cfg, &grid, &dir)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load(checkpoint: &Path, config: &Path) -> Result<(Experiment, PromptModel)> {
    let cfg = ExperimentConfig::load(config)?;
    let ex = Experiment::build(&cfg)?;
    let mut model = ex.init_model()?;
    let file = File::open(checkpoint)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", checkpoint.display())))?;
    model.load(&mut BufReader::new(file))?;
    Ok((ex, model))
}

/// Trains under `cfg` and writes every artifact into `dir`.
fn train_into(cfg: &ExperimentConfig, dir: &Path) -> Result<super::RunMetrics> {
    let ex = Experiment::build(cfg)?;
    let (model, metrics) = ex.train()?;
    fs::create_dir_all(dir)?;
    let mut w = create(&dir.join("checkpoint.bin"))?;
    model.save(&mut w)?;
    w.flush()?;
    write_metrics_csv(&mut create(&dir.join("metrics.csv"))?, &metrics)?;
    write_summary_json(&mut create(&dir.join("summary.json"))?, &metrics, cfg)?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    let hm = harmonic_mean(metrics.base_accuracy(), metrics.new_accuracy())?;
    println!(
        "base {:.2} new {:.2} hm {:.2} silhouette {:.4} -> {}",
        metrics.base_accuracy(),
        metrics.new_accuracy(),
        hm.value,
        metrics.last().silhouette.overall,
        dir.display()
    );
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq)]
enum GridAxis {
    Alpha(Vec<f64>),
    Constraint(Vec<ConstraintMode>),
    Wrs(Vec<bool>),
}

fn parse_axis(spec: &str) -> Result<GridAxis> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("grid entry '{spec}' is not key=v1,v2,...")))?;
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::Config(format!("grid entry '{spec}' has no values")));
    }
    let bad = |v: &str| Error::Config(format!("bad value '{v}' for grid key '{key}'"));
    Ok(match key.trim() {
        "alpha" => GridAxis::Alpha(values.iter().map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?),
        "constraint_mode" => GridAxis::Constraint(values.iter().map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?),
        "wrs" => GridAxis::Wrs(values.iter().map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?),
        other => {
            return Err(Error::Config(format!(
                "unknown grid key '{other}' (expected alpha, constraint_mode or wrs)"
            )))
        }
    })
}

/// Cartesian product of the axes applied to `base`, in the order given.
fn expand_grid(base: &ExperimentConfig, axes: &[GridAxis]) -> Vec<ExperimentConfig> {
    let mut configs = vec![base.clone()];
    for axis in axes {
        configs = configs
            .into_iter()
            .flat_map(|c| {
                let n = match axis {
                    GridAxis::Alpha(v) => v.len(),
                    GridAxis::Constraint(v) => v.len(),
                    GridAxis::Wrs(v) => v.len(),
                };
                (0..n).map(move |i| {
                    let mut c = c.clone();
                    match axis {
                        GridAxis::Alpha(v) => c.training.alpha = v[i],
                        GridAxis::Constraint(v) => c.training.constraint_mode = v[i],
                        GridAxis::Wrs(v) => c.training.wrs_enabled = v[i],
                    }
                    c
                })
            })
            .collect();
    }
    configs
}

/// Short label of the training mode: `ce` when the triplet term is off,
/// else `adt-c4` / `adt-c2`; `+wrs` marks sampler reweighting.
pub fn mode_label(cfg: &ExperimentConfig) -> String {
    let t = &cfg.training;
    let mut label = if t.alpha == 0.0 {
        "ce".to_string()
    } else {
        format!("adt-{}", t.constraint_mode.label())
    };
    if t.wrs_enabled {
        label.push_str("+wrs");
    }
    label
}

fn sweep(base: &ExperimentConfig, grid: &[String], dir: &Path) -> Result<()> {
    let axes = grid.iter().map(|s| parse_axis(s)).collect::<Result<Vec<_>>>()?;
    let configs = expand_grid(base, &axes);
    for c in &configs {
        c.validate()?;
    }
    fs::create_dir_all(dir)?;
    let mut rows = vec!["run,mode,alpha,constraint_mode,wrs,base_acc,new_acc,hm,silhouette".to_string()];
    for (i, cfg) in configs.iter().enumerate() {
        let run_dir = dir.join(format!("run_{i:03}"));
        let metrics = train_into(cfg, &run_dir)?;
        let t = &cfg.training;
        rows.push(format!(
            "{i},{},{},{},{},{},{},{},{}",
            mode_label(cfg),
            t.alpha,
            t.constraint_mode.label(),
            t.wrs_enabled,
            metrics.base_accuracy(),
            metrics.new_accuracy(),
            metrics.harmonic_mean(),
            metrics.last().silhouette.overall
        ));
    }
    let mut w = create(&dir.join("sweep.csv"))?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}
