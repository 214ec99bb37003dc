//! Command-line workflows: `synth`, `prepare`, `train`, `eval`, `gradcheck`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{generate_synthetic, prepare, read_manifest, PreparedData, Split, SplitPool};
use crate::error::{Error, Result};
use crate::gradcheck::{run_all, GradCheckSettings};
use crate::nn::{load_checkpoint, Model};
use crate::train::{
    evaluate, kshot_sweep, summary_csv, sweep_csv, tasks_csv, train, TrainData, TrainOutputs,
    CHECKPOINT_FILE,
};
use crate::util::atomic_write_str;

pub const CONFIG_SNAPSHOT: &str = "config.txt";
pub const STATS_FILE: &str = "stats.csv";
pub const EVAL_TASKS: &str = "eval_tasks.csv";
pub const EVAL_SUMMARY: &str = "eval_summary.csv";
pub const KSHOT_FILE: &str = "kshot.csv";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "pafs",
    version,
    about = "Few-shot audio classification with prototype losses"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set loss.lambda=0.5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run directory for every output.
    #[arg(long, default_value = "run")]
    pub out_dir: PathBuf,
    /// Worker threads for data preparation and evaluation (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic tone dataset and its manifest.
    Synth(Common),
    /// Build the standardized spectrogram cache from a manifest.
    Prepare(Common),
    /// Episodic training with validation-based checkpoint selection.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on sampled tasks, plus the k-shot sweep.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated evaluation seeds.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth(c) | Command::Prepare(c) => c,
            Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Gradcheck { common, .. } => common,
        }
    }
}

/// Builds the run configuration: defaults, then the file, then `--set`,
/// then dedicated flags, then the environment seed.
pub fn resolve_config(command: &Command) -> Result<RunConfig> {
    let common = command.common();
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| match e {
            Error::Io { path, source } => {
                Error::config("--config", format!("{}: {source}", path.display()))
            }
            other => other,
        })?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    match command {
        Command::Train {
            epochs: Some(e), ..
        } => cfg.train.epochs = *e,
        Command::Eval {
            checkpoint, seeds, ..
        } => {
            if let Some(c) = checkpoint {
                cfg.eval.checkpoint = Some(c.clone());
            }
            if let Some(s) = seeds {
                cfg.set("eval.seeds", s)?;
            }
        }
        _ => {}
    }
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn snapshot(out: &Path, cfg: &RunConfig) -> Result<()> {
    atomic_write_str(&out.join(CONFIG_SNAPSHOT), &cfg.to_text())
}

fn prepared_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.prepared.clone().unwrap_or_else(|| out.to_path_buf())
}

/// Loads the prepared cache and the three split pools.
pub struct Dataset {
    pub data: PreparedData,
    pub train: SplitPool,
    pub val: SplitPool,
    pub test: SplitPool,
}

impl Dataset {
    pub fn load(dir: &Path, min_samples: usize) -> Result<Self> {
        let data = PreparedData::load(dir)?;
        let index = data.index(min_samples)?;
        Ok(Self {
            train: SplitPool::from_index(&index, Split::Train),
            val: SplitPool::from_index(&index, Split::Val),
            test: SplitPool::from_index(&index, Split::Test),
            data,
        })
    }

    pub fn pool(&self, split: Split) -> &SplitPool {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<String> {
    let rows = generate_synthetic(&cfg.synth_spec(), out)?;
    snapshot(out, cfg)?;
    Ok(format!(
        "wrote {} clips and manifest.csv to {}",
        rows.len(),
        out.display()
    ))
}

pub fn cmd_prepare(cfg: &RunConfig, out: &Path) -> Result<String> {
    let manifest = cfg
        .manifest
        .clone()
        .unwrap_or_else(|| out.join("manifest.csv"));
    let rows = read_manifest(&manifest)?;
    let data = prepare(rows, &cfg.prepare_config())?;
    data.save(out)?;
    let stats = data.stats();
    atomic_write_str(
        &out.join(STATS_FILE),
        &format!("mean,std\n{:?},{:?}\n", stats.mean, stats.std),
    )?;
    snapshot(out, cfg)?;
    Ok(format!(
        "cached {} spectrograms of {}x{} (mean {:.4}, std {:.4})",
        data.cache.len(),
        data.cache.n_mels(),
        data.cache.n_frames(),
        stats.mean,
        stats.std
    ))
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<String> {
    let ep = cfg.train.episode;
    let ds = Dataset::load(&prepared_dir(cfg, out), ep.k_shot + ep.q_queries)?;
    let model = Model::<f32>::new(
        cfg.model.clone(),
        ds.data.cache.n_mels(),
        ds.data.cache.n_frames(),
        cfg.seed,
    )?;
    snapshot(out, cfg)?;
    let data = TrainData {
        records: ds.data.records(),
        train: &ds.train,
        val: &ds.val,
    };
    let outputs = TrainOutputs {
        dir: Some(out.to_path_buf()),
        config_text: cfg.to_text(),
        stats: ds.data.stats(),
        workers: cfg.workers,
    };
    let result = train(model, &cfg.train_config(), &data, &outputs)?;
    Ok(format!(
        "best validation accuracy {:.4} at epoch {}; checkpoint {}",
        result.best_val,
        result.best_epoch,
        out.join(CHECKPOINT_FILE).display()
    ))
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<String> {
    let path = cfg.eval.checkpoint.clone().ok_or_else(|| {
        Error::config(
            "eval.checkpoint",
            "eval needs a checkpoint (--checkpoint PATH)",
        )
    })?;
    let ckpt = load_checkpoint(&path)?;
    let trained = RunConfig::from_text(&ckpt.config_text)?;
    let model = ckpt.to_model(trained.model.clone())?;
    let ep = cfg.train.episode;
    let sweep_need = cfg
        .eval
        .shots
        .iter()
        .max()
        .copied()
        .unwrap_or(0)
        .max(ep.k_shot);
    let ds = Dataset::load(&prepared_dir(cfg, out), sweep_need + ep.q_queries)?;
    if ds.data.stats() != ckpt.stats {
        return Err(Error::Contract(
            "the checkpoint was trained on data with different standardization statistics".into(),
        ));
    }
    snapshot(out, cfg)?;
    let aug = cfg.train_config().aug;
    let pool = ds.pool(cfg.eval.split);
    let seeds = cfg.eval_seeds();
    let mut per_seed = Vec::new();
    for &seed in &seeds {
        let setup = cfg.eval_setup(pool, ds.data.records(), &aug, seed);
        let result = evaluate(&model, &setup, cfg.eval.n_tasks)?;
        let name = if seeds.len() == 1 {
            EVAL_TASKS.to_string()
        } else {
            format!("eval_tasks_seed{seed}.csv")
        };
        atomic_write_str(&out.join(name), &tasks_csv(&result))?;
        per_seed.push((seed, result));
    }
    atomic_write_str(&out.join(EVAL_SUMMARY), &summary_csv(&per_seed))?;
    let mut msg = summary_csv(&per_seed);
    if !cfg.eval.shots.is_empty() {
        let setup = cfg.eval_setup(pool, ds.data.records(), &aug, seeds[0]);
        let report = kshot_sweep(&model, &setup, &cfg.eval.shots, cfg.eval.n_tasks, &seeds)?;
        let text = sweep_csv(&report.rows);
        atomic_write_str(&out.join(KSHOT_FILE), &text)?;
        msg.push_str(&text);
    }
    Ok(msg.trim_end().to_string())
}

pub fn cmd_gradcheck(cfg: &RunConfig, instances: usize) -> Result<(bool, String)> {
    let settings = GradCheckSettings {
        instances,
        seed: cfg.seed,
        ..GradCheckSettings::default()
    };
    let summary = run_all(&settings)?;
    let mut s = format!(
        "{:<40} {:>12} {:>8} {:>6} {:>6}\n",
        "check", "max_rel_err", "checked", "zeros", "pass"
    );
    for r in &summary.reports {
        s.push_str(&format!(
            "{:<40} {:>12.3e} {:>8} {:>6} {:>6}\n",
            r.name, r.max_rel_error, r.checked, r.zero_agreements, r.passed
        ));
    }
    s.push_str(&format!(
        "instances redrawn at non-differentiable points: {}",
        summary.skipped
    ));
    Ok((summary.passed(), s))
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<i32> {
    let out = &command.common().out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let msg = match command {
        Command::Synth(_) => cmd_synth(cfg, out)?,
        Command::Prepare(_) => cmd_prepare(cfg, out)?,
        Command::Train { .. } => cmd_train(cfg, out)?,
        Command::Eval { .. } => cmd_eval(cfg, out)?,
        Command::Gradcheck { instances, .. } => {
            let (passed, table) = cmd_gradcheck(cfg, *instances)?;
            println!("{table}");
            return Ok(if passed { EXIT_OK } else { EXIT_FAILURE });
        }
    };
    println!("{msg}");
    Ok(EXIT_OK)
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cfg = match resolve_config(&cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            };
        }
    };
    match dispatch(&cli.command, &cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("pafs").chain(args.iter().copied()))
            .unwrap()
            .command
    }

    #[test]
    fn flags_override_file_and_set() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        std::fs::write(&file, "train.epochs = 9\nloss.lambda = 0.5\n").unwrap();
        let f = file.to_str().unwrap();
        let cmd = parse(&[
            "train",
            "--config",
            f,
            "--set",
            "train.epochs=4",
            "--epochs",
            "2",
            "--workers",
            "1",
        ]);
        let cfg = resolve_config(&cmd).unwrap();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.loss.lambda, 0.5);
        assert_eq!(cfg.workers, 1);
    }

    #[test]
    fn eval_flags() {
        let cmd = parse(&["eval", "--checkpoint", "x.pafs", "--seeds", "1,2"]);
        let cfg = resolve_config(&cmd).unwrap();
        assert_eq!(cfg.eval.checkpoint, Some(PathBuf::from("x.pafs")));
        assert_eq!(cfg.eval_seeds(), vec![1, 2]);
    }

    #[test]
    fn usage_errors_exit_with_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["pafs", "eval", "--out-dir", out]), EXIT_USAGE);
        assert_eq!(
            run(["pafs", "train", "--out-dir", out, "--set", "bogus.key=1"]),
            EXIT_USAGE
        );
        assert_eq!(run(["pafs", "frobnicate"]), EXIT_USAGE);
        let missing = dir.path().join("missing.txt");
        assert_eq!(
            run(["pafs", "synth", "--config", missing.to_str().unwrap()]),
            EXIT_USAGE
        );
    }

    #[test]
    fn runtime_failures_exit_with_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        // nothing has been prepared in this directory
        assert_eq!(run(["pafs", "train", "--out-dir", out]), EXIT_FAILURE);
    }
}
