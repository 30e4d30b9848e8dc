//! Run configuration: a flat JSON object with strict keys and documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Single,
    NegativesSweep,
    RatioSweep,
    DimSweep,
    CorpusScaling,
    CapacityScaling,
    VerifyAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Dr,
    Mvdr,
    GrCodebook,
    GrText,
}

impl Paradigm {
    pub fn is_generative(self) -> bool {
        matches!(self, Paradigm::GrCodebook | Paradigm::GrText)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldKind {
    /// Logits `U diag(σ) Vᵀ`; items addressed by index.
    Spectral,
    /// Logits from Gaussian query/doc features; items carry feature vectors.
    Featurized,
    /// Documents and queries read from TSV files.
    Tsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Uniform,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrParamName {
    Tabular,
    Featurized,
}

/// Every key is optional; see [`RunConfig::default`] for the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub paradigm: Paradigm,
    pub seed: u64,

    pub world: WorldKind,
    /// Number of queries.
    pub m: usize,
    /// Number of documents.
    #[serde(rename = "N")]
    pub n: usize,
    /// Singular values of a spectral world, non-increasing.
    pub spectrum: Vec<f64>,
    /// Feature width of featurized worlds and hashed TSV text.
    pub feature_dim: usize,
    /// Logit scale of featurized worlds.
    pub strength: f64,
    pub docs_tsv: Option<PathBuf>,
    pub queries_tsv: Option<PathBuf>,
    pub ngram_max: usize,
    /// Observed `(q, d⁺)` pairs drawn from a synthetic world for training.
    pub train_pairs: usize,
    /// Held-out `(q, gold)` pairs drawn for evaluation.
    pub eval_queries: usize,

    pub steps: usize,
    pub learning_rate: f64,
    pub gr_learning_rate: f64,
    pub batch_size: usize,
    /// Candidate-set size: the positive plus `K − 1` negatives.
    #[serde(rename = "K")]
    pub k: usize,
    pub policy: PolicyName,
    pub hard_ratio: f64,
    pub hard_pool_size: usize,
    pub tau: f64,
    pub init_scale: f64,

    pub r: usize,
    pub channels: usize,
    pub projection_dim: Option<usize>,
    pub gr_param: GrParamName,
    pub hidden_width: Option<usize>,
    pub rq_stages: usize,
    pub rq_base: usize,
    pub rq_iters: usize,

    pub k_list: Vec<usize>,
    pub beam_width: usize,

    pub k_grid: Vec<usize>,
    pub ratio_grid: Vec<f64>,
    pub dim_grid: Vec<usize>,
    /// GR hidden widths of the capacity sweep.
    pub capacity_grid: Vec<usize>,
    pub corpus_base: usize,
    pub corpus_growth: usize,
    pub corpus_points: usize,

    pub verify_trials: usize,
    pub verify_worlds: usize,
    pub verify_epsilon: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: ExperimentKind::Single,
            paradigm: Paradigm::Dr,
            seed: 0,
            world: WorldKind::Spectral,
            m: 64,
            n: 256,
            spectrum: (0..16).map(|i| 8.0 * 0.8f64.powi(i)).collect(),
            feature_dim: 32,
            strength: 3.0,
            docs_tsv: None,
            queries_tsv: None,
            ngram_max: 3,
            train_pairs: 20_000,
            eval_queries: 512,
            steps: 2000,
            learning_rate: 0.1,
            gr_learning_rate: 0.5,
            batch_size: 16,
            k: 16,
            policy: PolicyName::Uniform,
            hard_ratio: 0.5,
            hard_pool_size: 32,
            tau: 1.0,
            init_scale: 0.1,
            r: 16,
            channels: 1,
            projection_dim: None,
            gr_param: GrParamName::Tabular,
            hidden_width: None,
            rq_stages: 6,
            rq_base: 256,
            rq_iters: 50,
            k_list: vec![1, 5, 10],
            beam_width: 16,
            k_grid: vec![2, 8, 32, 128],
            ratio_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            dim_grid: vec![2, 4, 8, 16, 32],
            capacity_grid: vec![4, 8, 16, 32],
            corpus_base: 1024,
            corpus_growth: 2,
            corpus_points: 5,
            verify_trials: 100_000,
            verify_worlds: 4,
            verify_epsilon: 0.3,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> LabError {
    LabError::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Checks every cross-field constraint; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("N", self.n),
            ("feature_dim", self.feature_dim),
            ("ngram_max", self.ngram_max),
            ("train_pairs", self.train_pairs),
            ("eval_queries", self.eval_queries),
            ("batch_size", self.batch_size),
            ("hard_pool_size", self.hard_pool_size),
            ("r", self.r),
            ("channels", self.channels),
            ("rq_stages", self.rq_stages),
            ("rq_base", self.rq_base),
            ("rq_iters", self.rq_iters),
            ("beam_width", self.beam_width),
            ("corpus_base", self.corpus_base),
            ("corpus_points", self.corpus_points),
            ("verify_trials", self.verify_trials),
            ("verify_worlds", self.verify_worlds),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(config_err(key, "must be at least 1"));
            }
        }
        if self.k < 2 {
            return Err(config_err("K", "must be at least 2"));
        }
        for (key, v) in [
            ("learning_rate", self.learning_rate),
            ("gr_learning_rate", self.gr_learning_rate),
            ("init_scale", self.init_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_err(key, "must be finite and non-negative"));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(config_err("tau", "must be positive"));
        }
        if !(self.strength.is_finite()) {
            return Err(config_err("strength", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.hard_ratio) {
            return Err(config_err("hard_ratio", "must lie in [0, 1]"));
        }
        if self.spectrum.is_empty() || self.spectrum.len() > self.m.min(self.n) {
            return Err(config_err(
                "spectrum",
                "needs between 1 and min(m, N) values",
            ));
        }
        if self.spectrum.iter().any(|s| !s.is_finite() || *s < 0.0)
            || self.spectrum.windows(2).any(|w| w[0] < w[1])
        {
            return Err(config_err(
                "spectrum",
                "values must be finite, non-negative and non-increasing",
            ));
        }
        if self.rq_base > u32::MAX as usize - 1 {
            return Err(config_err("rq_base", "too large"));
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(config_err("k_list", "needs at least one cutoff, all >= 1"));
        }
        let kmax = *self.k_list.iter().max().expect("non-empty");
        if self.beam_width < kmax {
            return Err(config_err(
                "beam_width",
                format!("must be >= max(k_list) = {kmax}"),
            ));
        }
        if self.projection_dim == Some(0) {
            return Err(config_err("projection_dim", "must be at least 1"));
        }
        if self.hidden_width == Some(0) {
            return Err(config_err("hidden_width", "must be at least 1"));
        }
        if self.paradigm == Paradigm::Dr && self.channels != 1 {
            return Err(config_err(
                "channels",
                "paradigm dr is single-channel; use mvdr",
            ));
        }
        if self.k_grid.is_empty() || self.k_grid.iter().any(|&k| k < 2) {
            return Err(config_err("k_grid", "values must be at least 2"));
        }
        if self.ratio_grid.is_empty() || self.ratio_grid.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(config_err("ratio_grid", "values must lie in [0, 1]"));
        }
        if self.dim_grid.is_empty() || self.dim_grid.contains(&0) {
            return Err(config_err("dim_grid", "values must be at least 1"));
        }
        if self.capacity_grid.is_empty() || self.capacity_grid.contains(&0) {
            return Err(config_err("capacity_grid", "values must be at least 1"));
        }
        if self.corpus_growth < 2 {
            return Err(config_err("corpus_growth", "must be at least 2"));
        }
        let universe = (1..self.corpus_points).try_fold(self.corpus_base, |acc, _| {
            acc.checked_mul(self.corpus_growth)
        });
        if universe.is_none_or(|u| u > 1 << 24) {
            return Err(config_err(
                "corpus_points",
                "largest pool exceeds 2^24 documents",
            ));
        }
        if !(self.verify_epsilon > 0.0 && self.verify_epsilon < 1.0) {
            return Err(config_err("verify_epsilon", "must lie in (0, 1)"));
        }
        if self.world == WorldKind::Tsv {
            if self.docs_tsv.is_none() {
                return Err(config_err("docs_tsv", "required when world = tsv"));
            }
            if self.queries_tsv.is_none() {
                return Err(config_err("queries_tsv", "required when world = tsv"));
            }
        }
        Ok(())
    }

    /// Largest candidate pool of a corpus-scaling sweep.
    pub fn corpus_universe(&self) -> usize {
        self.corpus_base * self.corpus_growth.pow(self.corpus_points as u32 - 1)
    }
}

/// Parses a config from JSON text, applying `key=value` overrides before validation.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| config_err("<document>", e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| config_err("<document>", "config must be a JSON object"))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| config_err(item, "override must look like key=value"))?;
        let parsed = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        obj.insert(key.to_string(), parsed);
    }
    let config: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner().to_string();
        let key = if key == "." {
            // unknown fields are reported at the root
            inner.split('`').nth(1).map(str::to_string).unwrap_or(key)
        } else {
            key
        };
        config_err(&key, inner)
    })?;
    config.validate()?;
    Ok(config)
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>, overrides: &[String]) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse_config_str(&text, overrides)
}
