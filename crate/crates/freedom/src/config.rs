//! Run configuration: a flat key=value file, ablation tags that flip
//! exactly one knob each, a canonical rendering, and an FNV-1a hash of it
//! that names the run.

use crate::error::{Error, Result};
use crate::interaction::SamplingMode;
use crate::training::TrainConfig;
use std::fmt::Write as _;
use std::str::FromStr;

/// Named single-knob variants of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    /// The full model; no knob changes.
    #[default]
    None,
    /// No per-epoch edge pruning (rho = 0).
    NoPruning,
    /// Degree-agnostic pruning (uniform edge weights).
    UniformPruning,
    /// No modality-projection loss terms (lambda = 0).
    NoModalLoss,
    /// Weighted clamped-cosine item graph instead of the binary one.
    WeightedGraph,
}

impl Ablation {
    pub fn tag(self) -> &'static str {
        match self {
            Ablation::None => "freedom",
            Ablation::NoPruning => "freedom_f",
            Ablation::UniformPruning => "freedom_r",
            Ablation::NoModalLoss => "freedom_0",
            Ablation::WeightedGraph => "lattice_frozen",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freedom" => Ok(Ablation::None),
            "freedom_f" => Ok(Ablation::NoPruning),
            "freedom_r" => Ok(Ablation::UniformPruning),
            "freedom_0" => Ok(Ablation::NoModalLoss),
            "lattice_frozen" => Ok(Ablation::WeightedGraph),
            other => Err(Error::Config(format!(
                "unknown ablation '{}'; expected freedom, freedom_f, freedom_r, freedom_0, or lattice_frozen",
                other
            ))),
        }
    }
}

/// Applies an ablation to a base configuration, changing exactly one knob.
pub fn apply_ablation(base: &TrainConfig, ablation: Ablation) -> TrainConfig {
    let mut c = base.clone();
    match ablation {
        Ablation::None => {}
        Ablation::NoPruning => c.rho = 0.0,
        Ablation::UniformPruning => c.uniform_pruning = true,
        Ablation::NoModalLoss => c.lambda = 0.0,
        Ablation::WeightedGraph => c.weighted_item_graph = true,
    }
    c
}

/// Everything a pipeline run needs: paths, split ratios, the ablation tag,
/// and the training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub data_dir: String,
    pub out_dir: String,
    /// Checkpoint to evaluate; empty in the config file means unset.
    pub checkpoint: Option<String>,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub ablation: Ablation,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "dataset".into(),
            data_dir: "data".into(),
            out_dir: "out".into(),
            checkpoint: None,
            train_ratio: 0.8,
            val_ratio: 0.1,
            test_ratio: 0.1,
            ablation: Ablation::None,
            train: TrainConfig::default(),
        }
    }
}

fn sampling_to_str(mode: SamplingMode) -> &'static str {
    match mode {
        SamplingMode::WithoutReplacement => "without_replacement",
        SamplingMode::WithReplacementDedup => "with_replacement_dedup",
    }
}

fn sampling_from_str(s: &str) -> Result<SamplingMode> {
    match s {
        "without_replacement" => Ok(SamplingMode::WithoutReplacement),
        "with_replacement_dedup" => Ok(SamplingMode::WithReplacementDedup),
        other => Err(Error::Config(format!(
            "unknown sampling mode '{}'; expected without_replacement or with_replacement_dedup",
            other
        ))),
    }
}

impl RunConfig {
    /// Training configuration with the ablation applied.
    pub fn effective_train(&self) -> TrainConfig {
        apply_ablation(&self.train, self.ablation)
    }

    /// Sets one key from its string form; unknown keys and bad values error.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!("key '{}': cannot parse '{}'", key, value))
            })
        }
        match key {
            "dataset" => self.dataset = value.to_string(),
            "data_dir" => self.data_dir = value.to_string(),
            "out_dir" => self.out_dir = value.to_string(),
            "checkpoint" => {
                self.checkpoint = if value.is_empty() { None } else { Some(value.to_string()) }
            }
            "train_ratio" => self.train_ratio = num(key, value)?,
            "val_ratio" => self.val_ratio = num(key, value)?,
            "test_ratio" => self.test_ratio = num(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "lr" => self.train.lr = num(key, value)?,
            "lambda" => self.train.lambda = num(key, value)?,
            "rho" => self.train.rho = num(key, value)?,
            "alpha_v" => self.train.alpha_v = num(key, value)?,
            "k" => self.train.k = num(key, value)?,
            "d" => self.train.d = num(key, value)?,
            "l_ui" => self.train.l_ui = num(key, value)?,
            "l_ii" => self.train.l_ii = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "max_epochs" => self.train.max_epochs = num(key, value)?,
            "patience" => self.train.patience = num(key, value)?,
            "seed" => self.train.seed = num(key, value)?,
            "sampling" => self.train.sampling = sampling_from_str(value)?,
            "uniform_pruning" => self.train.uniform_pruning = num(key, value)?,
            "weighted_item_graph" => self.train.weighted_item_graph = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{}'", other))),
        }
        Ok(())
    }

    /// Parses a key=value file; '#' starts a comment, blank lines are
    /// skipped, duplicate keys are an error.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(idx) => &raw[..idx],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got '{}'",
                    line_no + 1,
                    line
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {}: duplicate key '{}'", line_no + 1, key)));
            }
            seen.push(key.to_string());
            config
                .set_key(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", line_no + 1, e)))?;
        }
        Ok(config)
    }

    /// Ordered (key, value) pairs covering every key.
    pub fn entries(&self) -> Vec<(String, String)> {
        let t = &self.train;
        vec![
            ("dataset".into(), self.dataset.clone()),
            ("data_dir".into(), self.data_dir.clone()),
            ("out_dir".into(), self.out_dir.clone()),
            ("checkpoint".into(), self.checkpoint.clone().unwrap_or_default()),
            ("train_ratio".into(), self.train_ratio.to_string()),
            ("val_ratio".into(), self.val_ratio.to_string()),
            ("test_ratio".into(), self.test_ratio.to_string()),
            ("ablation".into(), self.ablation.tag().to_string()),
            ("lr".into(), t.lr.to_string()),
            ("lambda".into(), t.lambda.to_string()),
            ("rho".into(), t.rho.to_string()),
            ("alpha_v".into(), t.alpha_v.to_string()),
            ("k".into(), t.k.to_string()),
            ("d".into(), t.d.to_string()),
            ("l_ui".into(), t.l_ui.to_string()),
            ("l_ii".into(), t.l_ii.to_string()),
            ("batch_size".into(), t.batch_size.to_string()),
            ("max_epochs".into(), t.max_epochs.to_string()),
            ("patience".into(), t.patience.to_string()),
            ("seed".into(), t.seed.to_string()),
            ("sampling".into(), sampling_to_str(t.sampling).to_string()),
            ("uniform_pruning".into(), t.uniform_pruning.to_string()),
            ("weighted_item_graph".into(), t.weighted_item_graph.to_string()),
        ]
    }

    /// Canonical rendering: every key once, fixed order. Parsing it back
    /// reproduces the config.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{} = {}", k, v).unwrap();
        }
        out
    }

    /// FNV-1a 64-bit hash of the canonical rendering, as 16 hex digits.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_string().as_bytes()))
    }
}

/// Training-config entries that differ: (key, left value, right value).
pub fn config_diff(a: &TrainConfig, b: &TrainConfig) -> Vec<(String, String, String)> {
    let wrap = |t: &TrainConfig| RunConfig { train: t.clone(), ..RunConfig::default() };
    let ea = wrap(a).entries();
    let eb = wrap(b).entries();
    ea.into_iter()
        .zip(eb)
        .filter(|((ka, va), (kb, vb))| {
            debug_assert_eq!(ka, kb);
            va != vb
        })
        .map(|((k, va), (_, vb))| (k, va, vb))
        .collect()
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
