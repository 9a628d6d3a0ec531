//! Experiment configuration as a flat key/value document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::{Architecture, EncoderSpec};
use crate::error::{Error, Result};
use crate::losses::{enumerate_hybrids, HybridLossSpec, LossContext};
use crate::metrics::{EvalConfig, ProbeConfig};
use crate::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Transductive,
    Inductive,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Transductive => "transductive",
            Setting::Inductive => "inductive",
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Pretraining graph and the graph the frozen encoder is applied to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetPair {
    pub pretrain: String,
    pub apply: String,
}

impl DatasetPair {
    /// Report key in the `Pretrain ↓ Apply` style.
    pub fn key(&self) -> String {
        format!("{} ↓ {}", self.pretrain, self.apply)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: Setting,
    /// Graphs of the transductive setting.
    pub datasets: Vec<String>,
    /// Graph pairs of the inductive setting.
    pub pairs: Vec<DatasetPair>,
    pub architectures: Vec<Architecture>,
    /// Explicit loss specs; when empty every combination up to `max_order`.
    pub losses: Vec<HybridLossSpec>,
    pub max_order: usize,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Requires `embed_dim == 128`.
    pub fixed_embed_dim: bool,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub d_h: usize,
    pub d_out: usize,
    pub attention_heads: usize,
    pub pe_dim: usize,
    pub sage_sample: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub margin: f64,
    pub dae_sigma: f64,
    pub negatives: usize,
    pub anchor_count: usize,
    /// Fraction of edges held out for link prediction.
    pub lp_holdout: f64,
    pub lp_threshold: f64,
    pub knn_k: usize,
    pub kmeans_max_iter: usize,
    pub default_clusters: usize,
    pub probe_hidden: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_repeats: usize,
    pub probe_train_frac: f64,
    pub probe_val_frac: f64,
    /// Dataset directory; falls back to `$LOSSBENCH_DATA_DIR`.
    pub data_dir: Option<PathBuf>,
    /// Seed for dataset sampling (Elliptic subgraph).
    pub data_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let enc = EncoderSpec::default();
        let adam = AdamConfig::default();
        let loss = LossContext::default();
        let eval = EvalConfig::default();
        ExperimentConfig {
            setting: Setting::Transductive,
            datasets: vec!["Cora".into()],
            pairs: Vec::new(),
            architectures: Architecture::EVERY.to_vec(),
            losses: Vec::new(),
            max_order: 5,
            seeds: vec![1, 2, 3, 4, 5],
            epochs: 500,
            patience: 10,
            min_delta: 1e-6,
            fixed_embed_dim: true,
            embed_dim: enc.embed_dim,
            hidden_dim: enc.hidden_dim,
            layers: enc.layers,
            d_h: enc.d_h,
            d_out: enc.d_out,
            attention_heads: enc.attention_heads,
            pe_dim: enc.pe_dim,
            sage_sample: enc.sage_sample,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            margin: loss.margin,
            dae_sigma: loss.dae_sigma,
            negatives: loss.negatives,
            anchor_count: loss.anchor_count,
            lp_holdout: 0.1,
            lp_threshold: eval.lp_threshold,
            knn_k: eval.knn_k,
            kmeans_max_iter: eval.kmeans_max_iter,
            default_clusters: eval.default_clusters,
            probe_hidden: eval.probe.hidden,
            probe_epochs: eval.probe.epochs,
            probe_lr: eval.probe.lr,
            probe_repeats: eval.probe.repeats,
            probe_train_frac: eval.probe.train_frac,
            probe_val_frac: eval.probe.val_frac,
            data_dir: None,
            data_seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON or TOML document, chosen by file extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text)?,
            Some("toml") => Self::from_toml(&text)?,
            _ => {
                return Err(Error::invalid(format!(
                    "{}: expected a .json or .toml file",
                    path.display()
                )))
            }
        };
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field, defaults included, as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.patience == 0 {
            return Err(Error::invalid("epochs and patience must be at least 1"));
        }
        if self.fixed_embed_dim && self.embed_dim != 128 {
            return Err(Error::invalid(format!(
                "fixed_embed_dim requires embed_dim 128, got {}",
                self.embed_dim
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.architectures.is_empty() {
            return Err(Error::invalid("at least one architecture is required"));
        }
        match self.setting {
            Setting::Transductive if self.datasets.is_empty() => {
                return Err(Error::invalid(
                    "transductive setting needs at least one dataset",
                ))
            }
            Setting::Inductive if self.pairs.is_empty() => {
                return Err(Error::invalid(
                    "inductive setting needs at least one dataset pair",
                ))
            }
            _ => {}
        }
        if let Some(p) = self
            .pairs
            .iter()
            .find(|p| p.pretrain.eq_ignore_ascii_case(&p.apply))
        {
            return Err(Error::invalid(format!(
                "inductive pair {} applies to its own pretraining graph",
                p.key()
            )));
        }
        if self.losses.is_empty() {
            enumerate_hybrids(self.max_order)?;
        }
        self.loss_context().validate()?;
        for arch in &self.architectures {
            self.encoder_spec(*arch).validate()?;
        }
        Ok(())
    }

    pub fn loss_specs(&self) -> Result<Vec<HybridLossSpec>> {
        if self.losses.is_empty() {
            enumerate_hybrids(self.max_order)
        } else {
            Ok(self.losses.clone())
        }
    }

    pub fn encoder_spec(&self, arch: Architecture) -> EncoderSpec {
        EncoderSpec {
            arch,
            layers: self.layers,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            d_h: self.d_h,
            d_out: self.d_out,
            attention_heads: self.attention_heads,
            pe_dim: self.pe_dim,
            sage_sample: self.sage_sample,
            ..EncoderSpec::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn loss_context(&self) -> LossContext {
        LossContext {
            margin: self.margin,
            dae_sigma: self.dae_sigma,
            negatives: self.negatives,
            anchor_count: self.anchor_count,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            probe: ProbeConfig {
                hidden: self.probe_hidden,
                epochs: self.probe_epochs,
                lr: self.probe_lr,
                repeats: self.probe_repeats,
                train_frac: self.probe_train_frac,
                val_frac: self.probe_val_frac,
            },
            knn_k: self.knn_k,
            lp_threshold: self.lp_threshold,
            kmeans_max_iter: self.kmeans_max_iter,
            default_clusters: self.default_clusters,
        }
    }

    pub fn train_config(&self) -> super::TrainConfig {
        super::TrainConfig {
            epochs: self.epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            adam: self.adam(),
            loss: self.loss_context(),
        }
    }
}
