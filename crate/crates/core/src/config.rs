//! Run configuration as a flat `key = value` file.
//!
//! Lines are `key = value`; `#` starts a comment. Loss hyperparameters accept
//! `default`, meaning the published value for the selected loss kind.

use std::path::PathBuf;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{SplitSpec, SynthSpec};
use crate::embedder::{Activation, AdamConfig, ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{EvalOptions, MapMode};
use crate::exec::Execution;
use crate::index::Space;
use crate::losses::{LossKind, LossSpec, Metric};

/// Loss hyperparameters left unset fall back to the kind's defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossOverrides {
    pub alpha: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub r: Option<f64>,
    pub delta: Option<f64>,
    pub kappa: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// CSV input; synthetic data is generated when unset.
    pub data: Option<PathBuf>,
    pub synth_classes: usize,
    pub synth_per_class: usize,
    pub synth_dim: usize,
    pub synth_spacing: f64,
    pub synth_sigma: f64,
    pub split_train_fraction: f64,
    pub split_stratified: bool,
    pub model_hidden: Vec<usize>,
    pub model_embedding_dim: usize,
    pub model_activation: Activation,
    pub model_dropout: f64,
    pub loss: LossKind,
    pub loss_overrides: LossOverrides,
    pub loss_metric: Metric,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub deterministic: bool,
    pub group_classes: usize,
    pub group_size: usize,
    pub eval_z: Vec<usize>,
    pub eval_spaces: Vec<Space>,
    pub map_mode: MapMode,
    /// Margin of the fixed-margin and "both" ablation variants.
    pub ablate_alpha: f64,
    pub out_dir: PathBuf,
    /// Worker threads for evaluation; 0 lets rayon decide.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            data: None,
            synth_classes: 8,
            synth_per_class: 120,
            synth_dim: 32,
            // centers 7.51 sigma apart
            synth_spacing: 5.31,
            synth_sigma: 1.0,
            split_train_fraction: 0.85,
            split_stratified: true,
            model_hidden: vec![32],
            model_embedding_dim: 16,
            model_activation: Activation::Relu,
            model_dropout: 0.0,
            loss: LossKind::Ocam,
            loss_overrides: LossOverrides::default(),
            loss_metric: Metric::Cosine,
            steps: 1500,
            batch_size: 20,
            adam: AdamConfig::default(),
            deterministic: true,
            group_classes: 4,
            group_size: 5,
            eval_z: vec![5, 20, 50],
            eval_spaces: vec![Space::Euclidean, Space::Hamming],
            map_mode: MapMode::Standard,
            ablate_alpha: 0.2,
            out_dir: PathBuf::from("out"),
            threads: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::usage(format!("{key}: cannot parse '{value}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::usage(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn parse_optional(key: &str, value: &str) -> Result<Option<f64>> {
    if value.trim().eq_ignore_ascii_case("default") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Splits `key = value` text into pairs. Errors name the 1-based line.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::usage(format!("config line {}: expected 'key = value'", n + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one setting. Unknown keys are usage errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let o = &mut self.loss_overrides;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "data" => {
                self.data = match value.trim() {
                    "" | "none" | "synthetic" => None,
                    p => Some(PathBuf::from(p)),
                }
            }
            "synth.classes" => self.synth_classes = parse(key, value)?,
            "synth.per_class" => self.synth_per_class = parse(key, value)?,
            "synth.dim" => self.synth_dim = parse(key, value)?,
            "synth.spacing" => self.synth_spacing = parse(key, value)?,
            "synth.sigma" => self.synth_sigma = parse(key, value)?,
            "split.train_fraction" => self.split_train_fraction = parse(key, value)?,
            "split.stratified" => self.split_stratified = parse_bool(key, value)?,
            "model.hidden" => self.model_hidden = parse_list(key, value)?,
            "model.embedding_dim" => self.model_embedding_dim = parse(key, value)?,
            "model.activation" => self.model_activation = value.parse()?,
            "model.dropout" => self.model_dropout = parse(key, value)?,
            "train.loss" => self.loss = value.trim().parse()?,
            "train.steps" => self.steps = parse(key, value)?,
            "train.batch_size" => self.batch_size = parse(key, value)?,
            "train.learning_rate" => self.adam.learning_rate = parse(key, value)?,
            "train.adam_beta1" => self.adam.beta1 = parse(key, value)?,
            "train.adam_beta2" => self.adam.beta2 = parse(key, value)?,
            "train.adam_epsilon" => self.adam.epsilon = parse(key, value)?,
            "train.deterministic" => self.deterministic = parse_bool(key, value)?,
            "train.group_classes" => self.group_classes = parse(key, value)?,
            "train.group_size" => self.group_size = parse(key, value)?,
            "loss.alpha" => o.alpha = parse_optional(key, value)?,
            "loss.sigma1" => o.sigma1 = parse_optional(key, value)?,
            "loss.sigma2" => o.sigma2 = parse_optional(key, value)?,
            "loss.beta1" => o.beta1 = parse_optional(key, value)?,
            "loss.beta2" => o.beta2 = parse_optional(key, value)?,
            "loss.r" => o.r = parse_optional(key, value)?,
            "loss.delta" => o.delta = parse_optional(key, value)?,
            "loss.kappa" => o.kappa = parse_optional(key, value)?,
            "loss.gamma" => o.gamma = parse_optional(key, value)?,
            "loss.metric" => self.loss_metric = value.parse()?,
            "eval.z" => self.eval_z = parse_list(key, value)?,
            "eval.spaces" => {
                self.eval_spaces = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "eval.map_mode" => self.map_mode = value.parse()?,
            "ablate.alpha_fixed" => self.ablate_alpha = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "threads" => self.threads = parse(key, value)?,
            _ => return Err(Error::usage(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Every key in canonical order. With `resolved`, loss hyperparameters
    /// show their effective values; otherwise unset ones print as `default`.
    pub fn entries(&self, resolved: bool) -> IndexMap<String, String> {
        let spec = self.loss_spec();
        let o = &self.loss_overrides;
        let opt = |set: Option<f64>, eff: f64| match (set, resolved) {
            (Some(v), _) => v.to_string(),
            (None, true) => eff.to_string(),
            (None, false) => "default".to_string(),
        };
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            (
                "data",
                self.data
                    .as_ref()
                    .map_or_else(|| "synthetic".to_string(), |p| p.display().to_string()),
            ),
            ("synth.classes", self.synth_classes.to_string()),
            ("synth.per_class", self.synth_per_class.to_string()),
            ("synth.dim", self.synth_dim.to_string()),
            ("synth.spacing", self.synth_spacing.to_string()),
            ("synth.sigma", self.synth_sigma.to_string()),
            ("split.train_fraction", self.split_train_fraction.to_string()),
            ("split.stratified", self.split_stratified.to_string()),
            ("model.hidden", join(&self.model_hidden)),
            ("model.embedding_dim", self.model_embedding_dim.to_string()),
            ("model.activation", self.model_activation.name().to_string()),
            ("model.dropout", self.model_dropout.to_string()),
            ("train.loss", self.loss.name().to_string()),
            ("train.steps", self.steps.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.learning_rate", self.adam.learning_rate.to_string()),
            ("train.adam_beta1", self.adam.beta1.to_string()),
            ("train.adam_beta2", self.adam.beta2.to_string()),
            ("train.adam_epsilon", self.adam.epsilon.to_string()),
            ("train.deterministic", self.deterministic.to_string()),
            ("train.group_classes", self.group_classes.to_string()),
            ("train.group_size", self.group_size.to_string()),
            ("loss.alpha", opt(o.alpha, spec.alpha)),
            ("loss.sigma1", opt(o.sigma1, spec.sigma1)),
            ("loss.sigma2", opt(o.sigma2, spec.sigma2)),
            ("loss.beta1", opt(o.beta1, spec.beta1)),
            ("loss.beta2", opt(o.beta2, spec.beta2)),
            ("loss.r", opt(o.r, spec.r)),
            ("loss.delta", opt(o.delta, spec.delta)),
            ("loss.kappa", opt(o.kappa, spec.kappa)),
            ("loss.gamma", opt(o.gamma, spec.gamma)),
            ("loss.metric", self.loss_metric.name().to_string()),
            ("eval.z", join(&self.eval_z)),
            ("eval.spaces", join(&self.eval_spaces)),
            ("eval.map_mode", self.map_mode.name().to_string()),
            ("ablate.alpha_fixed", self.ablate_alpha.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("threads", self.threads.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// `key = value` lines, loadable by [`RunConfig::from_text`].
    pub fn to_text(&self, resolved: bool) -> String {
        self.entries(resolved)
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Resolved settings that influence results: everything except the
    /// output location and thread count.
    pub fn result_entries(&self) -> IndexMap<String, String> {
        let mut e = self.entries(true);
        e.shift_remove("out_dir");
        e.shift_remove("threads");
        e
    }

    /// SHA-256 over [`RunConfig::result_entries`].
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.result_entries() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn loss_spec(&self) -> LossSpec {
        let o = &self.loss_overrides;
        let d = LossSpec::new(self.loss);
        LossSpec {
            kind: self.loss,
            alpha: o.alpha.unwrap_or(d.alpha),
            sigma1: o.sigma1.unwrap_or(d.sigma1),
            sigma2: o.sigma2.unwrap_or(d.sigma2),
            beta1: o.beta1.unwrap_or(d.beta1),
            beta2: o.beta2.unwrap_or(d.beta2),
            r: o.r.unwrap_or(d.r),
            delta: o.delta.unwrap_or(d.delta),
            kappa: o.kappa.unwrap_or(d.kappa),
            gamma: o.gamma.unwrap_or(d.gamma),
            metric: self.loss_metric,
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            classes: self.synth_classes,
            per_class: self.synth_per_class,
            dim: self.synth_dim,
            spacing: self.synth_spacing,
            sigma: self.synth_sigma,
            seed: self.seed,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.split_train_fraction,
            stratified: self.split_stratified,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden: self.model_hidden.clone(),
            embedding_dim: self.model_embedding_dim,
            activation: self.model_activation,
            dropout_rate: self.model_dropout,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss_spec(),
            steps: self.steps,
            batch_size: self.batch_size,
            adam: self.adam,
            seed: self.seed,
            deterministic: self.deterministic,
            group_classes: self.group_classes,
            group_size: self.group_size,
        }
    }

    pub fn execution(&self) -> Execution {
        if self.threads == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            zs: self.eval_z.clone(),
            spaces: self.eval_spaces.clone(),
            map_mode: self.map_mode,
            exec: self.execution(),
        }
    }

    /// Checks every setting before any computation starts. Referenced files
    /// must exist.
    pub fn validate(&self) -> Result<()> {
        self.loss_spec().validate()?;
        self.train_config().validate()?;
        self.model_config(self.synth_dim.max(1)).validate()?;
        self.eval_options().validate()?;
        if !(self.ablate_alpha >= 0.0 && self.ablate_alpha.is_finite()) {
            return Err(Error::usage("ablate.alpha_fixed must be >= 0"));
        }
        if !(self.split_train_fraction > 0.0 && self.split_train_fraction < 1.0) {
            return Err(Error::usage("split.train_fraction must lie strictly between 0 and 1"));
        }
        match &self.data {
            Some(p) if !p.is_file() => {
                return Err(Error::usage(format!("data file {} does not exist", p.display())))
            }
            Some(_) => {}
            None => {
                if self.synth_classes < 2 || self.synth_per_class < 2 || self.synth_dim == 0 {
                    return Err(Error::usage("synthetic data needs >= 2 classes, >= 2 samples each, dim > 0"));
                }
                if !(self.synth_sigma >= 0.0 && self.synth_spacing >= 0.0)
                    || !self.synth_sigma.is_finite()
                    || !self.synth_spacing.is_finite()
                {
                    return Err(Error::usage("synth.sigma and synth.spacing must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }
}
