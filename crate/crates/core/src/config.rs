//! Run configuration: a flat `key = value` text format covering every
//! module. Unknown keys are rejected and the whole configuration is checked
//! before any work starts.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::AugmentConfig;
use crate::data::{PrepareConfig, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::losses::FsPrefactor;
use crate::nn::ModelConfig;
use crate::train::{EpisodeConfig, EvalSetup, TrainConfig};

/// Environment variable that overrides `seed`.
pub const SEED_ENV: &str = "PAFS_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub n_tasks: usize,
    pub split: Split,
    /// Shot counts of the sweep; empty skips it.
    pub shots: Vec<usize>,
    /// Evaluation seeds; empty uses the run seed.
    pub seeds: Vec<u64>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_tasks: 2000,
            split: Split::Test,
            shots: vec![1, 3, 5, 7],
            seeds: Vec::new(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub seed: u64,
    /// Seed of the episode streams when it should differ from `seed`.
    pub episode_seed: Option<u64>,
    /// Manifest read by `prepare`; defaults to `<out-dir>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    /// Directory holding the prepared cache; defaults to `<out-dir>`.
    pub prepared: Option<PathBuf>,
    pub workers: usize,
    pub synth: SynthSpec,
    pub prepare: PrepareConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(
            key,
            format!("expected true or false, got `{value}`"),
        )),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

fn f64_text(v: f64) -> String {
    // `{:?}` keeps a decimal point and round-trips exactly
    format!("{v:?}")
}

impl RunConfig {
    /// Sets one dotted key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let mel = &mut self.prepare.mel;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "data.manifest" => self.manifest = opt_path(v),
            "data.prepared" => self.prepared = opt_path(v),
            "data.min_per_class" => self.prepare.filter.min_per_class = parse(key, v)?,
            "data.max_duration_s" => self.prepare.filter.max_duration_s = parse(key, v)?,

            "synth.n_classes" => self.synth.n_classes = parse(key, v)?,
            "synth.clips_per_class" => self.synth.clips_per_class = parse(key, v)?,
            "synth.duration_s" => self.synth.duration_s = parse(key, v)?,
            "synth.noise_level" => self.synth.noise_level = parse(key, v)?,
            "synth.f0_min" => self.synth.f0_min = parse(key, v)?,
            "synth.f0_max" => self.synth.f0_max = parse(key, v)?,

            "audio.n_fft" => mel.n_fft = parse(key, v)?,
            "audio.win_length" => mel.win_length = parse(key, v)?,
            "audio.hop_length" => mel.hop_length = parse(key, v)?,
            "audio.n_mels" => mel.n_mels = parse(key, v)?,
            "audio.f_min" => mel.f_min = parse(key, v)?,
            "audio.f_max" => mel.f_max = parse(key, v)?,
            "audio.log_eps" => mel.log_eps = parse(key, v)?,
            "audio.segment_s" => self.prepare.segment_s = parse(key, v)?,

            "aug.time_mask_max" => t.aug.time_mask_max = parse(key, v)?,
            "aug.freq_mask_max" => t.aug.freq_mask_max = parse(key, v)?,
            "aug.warp_w" => t.aug.warp_w = parse(key, v)?,
            "aug.eval_augment" => t.aug.eval_augment = parse_bool(key, v)?,

            "episode.n_way" => t.episode.n_way = parse(key, v)?,
            "episode.k_shot" => t.episode.k_shot = parse(key, v)?,
            "episode.q_queries" => t.episode.q_queries = parse(key, v)?,
            "episode.seed" => {
                self.episode_seed = if v.is_empty() {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }

            "model.channels" => self.model.channels = parse_list(key, v)?,
            "model.rnn_hidden" => self.model.rnn_hidden = parse(key, v)?,
            "model.rnn" => self.model.rnn = v.parse()?,
            "model.temporal" => self.model.temporal = v.parse()?,
            "model.ff_dim" => self.model.ff_dim = parse(key, v)?,
            "model.proj_hidden" => self.model.proj_hidden = parse(key, v)?,
            "model.proj_out" => self.model.proj_out = parse(key, v)?,
            "model.project_queries" => self.model.project_queries = parse_bool(key, v)?,
            "model.bn_momentum" => self.model.bn_momentum = parse(key, v)?,
            "model.bn_eps" => self.model.bn_eps = parse(key, v)?,
            "model.ln_eps" => self.model.ln_eps = parse(key, v)?,

            "loss.kind" => t.loss.kind = v.parse()?,
            "loss.lambda" => t.loss.lambda = parse(key, v)?,
            "loss.squared" => t.loss.fs.squared = parse_bool(key, v)?,
            "loss.prefactor" => {
                t.loss.fs.prefactor = match v {
                    "mean" => FsPrefactor::Mean,
                    "literal" => FsPrefactor::Literal,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected mean or literal, got `{v}`"),
                        ))
                    }
                }
            }
            "cpl.temperature" => t.loss.cpl.temperature = parse(key, v)?,
            "cpl.m" => t.loss.cpl.m = parse(key, v)?,
            "apl.alpha_deg" => t.loss.apl.alpha_deg = parse(key, v)?,
            "apl.anchor_mode" => t.loss.apl.anchor_mode = v.parse()?,

            "train.epochs" => t.epochs = parse(key, v)?,
            "train.episodes_per_epoch" => t.episodes_per_epoch = parse(key, v)?,
            "train.lr" => t.schedule.base = parse(key, v)?,
            "train.milestones" => t.schedule.milestones = parse_list(key, v)?,
            "train.gamma" => t.schedule.gamma = parse(key, v)?,
            "train.beta1" => t.adam.beta1 = parse(key, v)?,
            "train.beta2" => t.adam.beta2 = parse(key, v)?,
            "train.adam_eps" => t.adam.eps = parse(key, v)?,
            "train.val_episodes" => t.val_episodes = parse(key, v)?,

            "eval.n_tasks" => self.eval.n_tasks = parse(key, v)?,
            "eval.split" => {
                self.eval.split = v
                    .parse()
                    .map_err(|_| Error::config(key, format!("unknown split `{v}`")))?
            }
            "eval.shots" => self.eval.shots = parse_list(key, v)?,
            "eval.seeds" => self.eval.seeds = parse_list(key, v)?,
            "eval.checkpoint" => self.eval.checkpoint = opt_path(v),
            _ => return Err(Error::config(key, "unknown configuration key")),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mel = &self.prepare.mel;
        let t = &self.train;
        let m = &self.model;
        vec![
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("data.manifest", show_path(&self.manifest)),
            ("data.prepared", show_path(&self.prepared)),
            (
                "data.min_per_class",
                self.prepare.filter.min_per_class.to_string(),
            ),
            (
                "data.max_duration_s",
                f64_text(self.prepare.filter.max_duration_s),
            ),
            ("synth.n_classes", self.synth.n_classes.to_string()),
            (
                "synth.clips_per_class",
                self.synth.clips_per_class.to_string(),
            ),
            ("synth.duration_s", f64_text(self.synth.duration_s)),
            ("synth.noise_level", f64_text(self.synth.noise_level)),
            ("synth.f0_min", f64_text(self.synth.f0_min)),
            ("synth.f0_max", f64_text(self.synth.f0_max)),
            ("audio.n_fft", mel.n_fft.to_string()),
            ("audio.win_length", mel.win_length.to_string()),
            ("audio.hop_length", mel.hop_length.to_string()),
            ("audio.n_mels", mel.n_mels.to_string()),
            ("audio.f_min", f64_text(mel.f_min)),
            ("audio.f_max", f64_text(mel.f_max)),
            ("audio.log_eps", f64_text(mel.log_eps)),
            ("audio.segment_s", f64_text(self.prepare.segment_s)),
            ("aug.time_mask_max", t.aug.time_mask_max.to_string()),
            ("aug.freq_mask_max", t.aug.freq_mask_max.to_string()),
            ("aug.warp_w", t.aug.warp_w.to_string()),
            ("aug.eval_augment", t.aug.eval_augment.to_string()),
            ("episode.n_way", t.episode.n_way.to_string()),
            ("episode.k_shot", t.episode.k_shot.to_string()),
            ("episode.q_queries", t.episode.q_queries.to_string()),
            (
                "episode.seed",
                self.episode_seed.map(|s| s.to_string()).unwrap_or_default(),
            ),
            ("model.channels", join(&m.channels)),
            ("model.rnn_hidden", m.rnn_hidden.to_string()),
            ("model.rnn", m.rnn.as_str().to_string()),
            ("model.temporal", m.temporal.as_str().to_string()),
            ("model.ff_dim", m.ff_dim.to_string()),
            ("model.proj_hidden", m.proj_hidden.to_string()),
            ("model.proj_out", m.proj_out.to_string()),
            ("model.project_queries", m.project_queries.to_string()),
            ("model.bn_momentum", f64_text(m.bn_momentum)),
            ("model.bn_eps", f64_text(m.bn_eps)),
            ("model.ln_eps", f64_text(m.ln_eps)),
            ("loss.kind", t.loss.kind.to_string()),
            ("loss.lambda", f64_text(t.loss.lambda)),
            ("loss.squared", t.loss.fs.squared.to_string()),
            (
                "loss.prefactor",
                match t.loss.fs.prefactor {
                    FsPrefactor::Mean => "mean",
                    FsPrefactor::Literal => "literal",
                }
                .to_string(),
            ),
            ("cpl.temperature", f64_text(t.loss.cpl.temperature)),
            ("cpl.m", t.loss.cpl.m.to_string()),
            ("apl.alpha_deg", f64_text(t.loss.apl.alpha_deg)),
            ("apl.anchor_mode", t.loss.apl.anchor_mode.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.episodes_per_epoch", t.episodes_per_epoch.to_string()),
            ("train.lr", f64_text(t.schedule.base)),
            ("train.milestones", join(&t.schedule.milestones)),
            ("train.gamma", f64_text(t.schedule.gamma)),
            ("train.beta1", f64_text(t.adam.beta1)),
            ("train.beta2", f64_text(t.adam.beta2)),
            ("train.adam_eps", f64_text(t.adam.eps)),
            ("train.val_episodes", t.val_episodes.to_string()),
            ("eval.n_tasks", self.eval.n_tasks.to_string()),
            ("eval.split", self.eval.split.to_string()),
            ("eval.shots", join(&self.eval.shots)),
            ("eval.seeds", join(&self.eval.seeds)),
            ("eval.checkpoint", show_path(&self.eval.checkpoint)),
        ]
    }

    /// Canonical text form; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", n + 1), "expected `key = value`")
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::config(spec, "overrides take the form key=value"))?;
        self.set(key.trim(), value)
    }

    /// Reads the seed override from the environment, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV) {
            Ok(v) => self.seed = parse(SEED_ENV, v.trim())?,
            Err(std::env::VarError::NotPresent) => {}
            Err(_) => return Err(Error::config(SEED_ENV, "not valid unicode")),
        }
        Ok(())
    }

    /// Synthesis parameters with the run seed applied.
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn prepare_config(&self) -> PrepareConfig {
        PrepareConfig {
            workers: self.workers,
            ..self.prepare.clone()
        }
    }

    /// Training parameters with the run seeds applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.episode_seed.unwrap_or(self.seed);
        t.aug.seed = self.seed;
        t
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        if self.eval.seeds.is_empty() {
            vec![self.episode_seed.unwrap_or(self.seed)]
        } else {
            self.eval.seeds.clone()
        }
    }

    /// Checks every module's invariants, including the ones that relate
    /// values of different modules.
    pub fn validate(&self) -> Result<()> {
        self.synth_spec().validate()?;
        self.prepare.validate()?;
        self.model.validate()?;
        let t = self.train_config();
        t.validate()?;
        let n_mels = self.prepare.mel.n_mels;
        let n_frames = crate::audio::n_frames_for(
            (self.prepare.segment_s * crate::audio::TARGET_SAMPLE_RATE as f64).round() as usize,
            &self.prepare.mel,
        );
        self.model.validate_input(n_mels, n_frames)?;
        t.aug.validate_for(n_mels, n_frames)?;
        if self.eval.n_tasks == 0 {
            return Err(Error::config("eval.n_tasks", "must be positive"));
        }
        if self.eval.shots.contains(&0) {
            return Err(Error::config("eval.shots", "shot counts must be positive"));
        }
        Ok(())
    }

    /// Evaluation setup over `pool`; callers fill in the data references.
    pub fn eval_episode(&self) -> EpisodeConfig {
        self.train.episode
    }

    pub fn eval_setup<'a>(
        &self,
        pool: &'a crate::data::SplitPool,
        records: &'a [crate::audio::CacheRecord],
        aug: &'a AugmentConfig,
        seed: u64,
    ) -> EvalSetup<'a> {
        EvalSetup {
            pool,
            records,
            episode: self.eval_episode(),
            aug,
            squared: self.train.loss.fs.squared,
            seed,
            tag: crate::rng::tag::EVAL_EPISODE,
            workers: self.workers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn every_listed_key_is_settable() {
        let cfg = RunConfig::default();
        for (k, v) in cfg.entries() {
            let mut c = RunConfig::default();
            c.set(k, &v).unwrap_or_else(|e| panic!("{k}: {e}"));
            assert_eq!(c, cfg, "{k}");
        }
    }

    #[test]
    fn modified_config_round_trips() {
        let text = "seed = 7\nloss.kind = fs+cpl\ncpl.temperature = 0.25 # comment\n\
                    model.channels = 8,16\ntrain.milestones = 3\neval.seeds = 1,2,3\n\
                    data.manifest = somewhere/m.csv\nepisode.seed = 11\napl.anchor_mode = all\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.loss.kind, LossKind::FsCpl);
        assert_eq!(cfg.model.channels, vec![8, 16]);
        assert_eq!(cfg.eval.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.train_config().seed, 11);
        assert_eq!(cfg.train_config().aug.seed, 7);
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_name_the_key() {
        match RunConfig::from_text("loss.lamda = 0.3") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "loss.lamda"),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_text("train.epochs = many") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "train.epochs"),
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::from_text("no equals sign").is_err());
    }

    #[test]
    fn validation_catches_cross_module_errors() {
        let mut cfg = RunConfig::default();
        cfg.set("train.gamma", "1.5").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { key, .. }) if key == "train.gamma"));

        let mut cfg = RunConfig::default();
        cfg.set("audio.n_mels", "8").unwrap();
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.set("aug.freq_mask_max", "65").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn training_protocol_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(
            cfg.train.episode,
            EpisodeConfig {
                n_way: 5,
                k_shot: 5,
                q_queries: 5
            }
        );
        assert_eq!(cfg.train.loss.lambda, 0.3);
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.train.episodes_per_epoch, 100);
        assert_eq!(cfg.eval.n_tasks, 2000);
    }
}
