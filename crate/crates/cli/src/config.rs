//! Pipeline configuration: a flat `key = value` file with section prefixes.
//!
//! ```text
//! # comment
//! seed = 7
//! threads = 1
//! paths.corpus = train.conll
//! hyper.r = 50
//! sgd.epochs = 20
//! columns.format = conll2009
//! thresholds.relation = 1000
//! train.trainer = als
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bove::corpus::{ConllColumns, NormalizationRules};
use bove::model::Hyperparams;
use bove::sgd::SgdConfig;
use bove::synth::{SynthConfig, SynthMode};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

const PATH_KEYS: &[&str] = &[
    "corpus",
    "pretrained",
    "vocab",
    "tensors",
    "model",
    "log",
    "bags",
    "pairs",
    "scores",
    "report",
    "truth",
    "truth_bags",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Trainer {
    #[default]
    Als,
    Sgd,
}

impl FromStr for Trainer {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "als" => Ok(Trainer::Als),
            "sgd" => Ok(Trainer::Sgd),
            other => Err(CliError::Usage(format!("unknown trainer {other:?} (expected als or sgd)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    #[default]
    Sts,
    Snli,
}

impl FromStr for ScoreMode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "sts" => Ok(ScoreMode::Sts),
            "snli" => Ok(ScoreMode::Snli),
            other => Err(CliError::Usage(format!("unknown score mode {other:?} (expected sts or snli)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    paths: BTreeMap<String, PathBuf>,
    /// `hyper.*` settings in file order, so they can be laid over either the
    /// defaults or the hyperparameters stored in a model file.
    hyper_overrides: Vec<(String, String)>,
    pub sgd: SgdConfig,
    pub columns: ConllColumns,
    pub rules: NormalizationRules,
    pub trainer: Trainer,
    pub score_mode: ScoreMode,
    pub synth: SynthConfig,
    pub seed: u64,
    pub threads: usize,
    pub fail_fast: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: BTreeMap::new(),
            hyper_overrides: Vec::new(),
            sgd: SgdConfig::default(),
            columns: ConllColumns::default(),
            rules: NormalizationRules::default(),
            trainer: Trainer::Als,
            score_mode: ScoreMode::Sts,
            synth: SynthConfig::default(),
            seed: 0,
            threads: 0,
            fail_fast: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::Usage(format!("bad value {value:?} for {key}")))
}

impl PipelineConfig {
    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut config = PipelineConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), i + 1).is_some() {
                return Err(CliError::Usage(format!("config line {}: duplicate key {key}", i + 1)));
            }
            config.set(key, value, base).map_err(|e| match e {
                CliError::Usage(m) => CliError::Usage(format!("config line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        config.hyper()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), CliError> {
        let usage = |e: bove::BoveError| CliError::Usage(e.to_string());
        let (section, name) = key.split_once('.').unwrap_or(("", key));
        match (section, name) {
            ("", "seed") => self.seed = parse(key, value)?,
            ("", "threads") => self.threads = parse(key, value)?,
            ("", "fail_fast") => self.fail_fast = parse(key, value)?,
            ("paths", name) if PATH_KEYS.contains(&name) => {
                self.paths.insert(name.to_string(), base.join(value));
            }
            ("hyper", name) => {
                Hyperparams::default().set(name, value).map_err(usage)?;
                self.hyper_overrides.push((name.to_string(), value.to_string()));
            }
            ("sgd", "seed") => {
                return Err(CliError::Usage("sgd.seed is derived from the global seed; set seed instead".into()))
            }
            ("sgd", name) => self.sgd.set(name, value).map_err(usage)?,
            ("columns", "format") => {
                self.columns = match value {
                    "conll2009" => ConllColumns::CONLL2009,
                    "conll2006" => ConllColumns::CONLL2006,
                    other => return Err(CliError::Usage(format!("unknown column format {other:?}"))),
                }
            }
            ("columns", "id") => self.columns.id = parse(key, value)?,
            ("columns", "form") => self.columns.form = parse(key, value)?,
            ("columns", "pos") => self.columns.pos = parse(key, value)?,
            ("columns", "head") => self.columns.head = parse(key, value)?,
            ("columns", "deprel") => self.columns.deprel = parse(key, value)?,
            ("thresholds", "word") => self.rules.thresholds.word = parse(key, value)?,
            ("thresholds", "pos") => self.rules.thresholds.pos = parse(key, value)?,
            ("thresholds", "relation") => self.rules.thresholds.relation = parse(key, value)?,
            ("train", "trainer") => self.trainer = value.parse()?,
            ("score", "mode") => self.score_mode = value.parse()?,
            ("synth", "num_sentences") => self.synth.num_sentences = parse(key, value)?,
            ("synth", "tokens") => self.synth.tokens = parse(key, value)?,
            ("synth", "r") => self.synth.r = parse(key, value)?,
            ("synth", "c") => self.synth.c = parse(key, value)?,
            ("synth", "d") => self.synth.d = parse(key, value)?,
            ("synth", "mode") => {
                let threshold = match self.synth.mode {
                    SynthMode::Discrete { threshold } => Some(threshold),
                    SynthMode::Exact => None,
                };
                self.synth.mode = value.parse().map_err(usage)?;
                if let (SynthMode::Discrete { threshold: t }, Some(kept)) = (&mut self.synth.mode, threshold) {
                    *t = kept;
                }
            }
            ("synth", "threshold") => {
                let threshold = parse(key, value)?;
                self.synth.mode = SynthMode::Discrete { threshold };
            }
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Default hyperparameters with the `hyper.*` settings applied.
    pub fn hyper(&self) -> Result<Hyperparams, CliError> {
        self.hyper_over(Hyperparams::default())
    }

    /// `base` with the `hyper.*` settings applied.
    pub fn hyper_over(&self, mut base: Hyperparams) -> Result<Hyperparams, CliError> {
        for (k, v) in &self.hyper_overrides {
            base.set(k, v).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(base)
    }

    pub fn path(&self, name: &str) -> Option<&Path> {
        self.paths.get(name).map(PathBuf::as_path)
    }

    /// A path that must be configured.
    pub fn required(&self, name: &str) -> Result<&Path, CliError> {
        self.path(name).ok_or_else(|| CliError::Usage(format!("paths.{name} is not set")))
    }

    /// A configured path that must already exist.
    pub fn input(&self, name: &str) -> Result<&Path, CliError> {
        let path = self.required(name)?;
        if !path.exists() {
            return Err(CliError::Data(format!("paths.{name}: {} does not exist", path.display())));
        }
        Ok(path)
    }

    /// Seed for one pipeline stage, derived from the global seed.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stage as u64);
        rng.next_u64()
    }
}

/// Pipeline stages that consume randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Init = 1,
    Sgd = 2,
    Synth = 3,
}
