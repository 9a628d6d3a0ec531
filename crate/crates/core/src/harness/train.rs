//! Full-batch training of an encoder under a hybrid objective.

use crate::autodiff::Tape;
use crate::encoders::{encode, encode_on_tape, EncoderSpec, PreparedGraph};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{loss_params, total_loss, HybridLossSpec, LossContext, LossTargets};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParameterSet;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    /// A loss counts as improved when it drops by more than this.
    pub min_delta: f64,
    pub adam: AdamConfig,
    pub loss: LossContext,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            patience: 10,
            min_delta: 1e-6,
            adam: AdamConfig::default(),
            loss: LossContext::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Encoder weights, hybrid gates and denoiser at the best epoch.
    pub params: ParameterSet,
    /// Training loss before each update, one entry per epoch run.
    pub curve: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub embedding: Tensor,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.curve.len()
    }

    /// `σ(θ)` of every member gate.
    pub fn gates(&self, spec: &HybridLossSpec) -> Vec<f64> {
        spec.members()
            .iter()
            .map(|l| {
                let theta = self.params.get(&l.gate_name()).map_or(0.0, Tensor::item);
                1.0 / (1.0 + (-theta).exp())
            })
            .collect()
    }
}

/// Trains `spec` on `g` by full-batch Adam on the gated total loss. Stops
/// after `patience` epochs without improvement and restores the best
/// parameters. Negatives, noise and neighbor samples are redrawn every
/// epoch from streams keyed by `seed`.
pub fn train(
    cfg: &TrainConfig,
    spec: &EncoderSpec,
    g: &Graph,
    loss: &HybridLossSpec,
    seed: u64,
) -> Result<TrainOutcome> {
    train_observed(cfg, spec, g, loss, seed, |_, _| {})
}

/// [`train`] with a callback seeing the epoch and parameters after each update.
pub fn train_observed(
    cfg: &TrainConfig,
    spec: &EncoderSpec,
    g: &Graph,
    loss: &HybridLossSpec,
    seed: u64,
    mut observe: impl FnMut(usize, &ParameterSet),
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 || cfg.patience == 0 {
        return Err(Error::invalid("epochs and patience must be at least 1"));
    }
    cfg.loss.validate()?;
    let pg = PreparedGraph::new(g, spec)?;
    let targets = LossTargets::new(g)?;
    let mut params = spec.init_params(g.feature_dim(), rng::derive(seed, "encoder.init", 0))?;
    params.extend(&loss_params(
        loss,
        spec.embed_dim,
        rng::derive(seed, "loss.init", 0),
    ));
    let mut adam = Adam::new(cfg.adam, params.values());

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut stalled = 0;
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, true);
        let z = encode_on_tape(
            &mut tape,
            spec,
            &vars,
            &pg,
            rng::derive(seed, "encoder.sample", epoch as u64),
        )?;
        let (total, _) = total_loss(
            &mut tape,
            loss,
            z,
            g,
            &targets,
            &vars,
            &cfg.loss,
            rng::derive(seed, "loss.sample", epoch as u64),
        )?;
        let value = tape.value(total).item();
        if !value.is_finite() {
            return Err(Error::NonFinite);
        }
        curve.push(value);
        if value < best.0 - cfg.min_delta {
            best = (value, epoch, params.clone());
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= cfg.patience {
                break;
            }
        }
        let grads = tape.backward(total)?;
        let zeros: Vec<Tensor> = params
            .values()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        let g_refs: Vec<&Tensor> = vars
            .vars()
            .iter()
            .zip(&zeros)
            .map(|(&v, zero)| grads.get(v).unwrap_or(zero))
            .collect();
        adam.step(params.values_mut(), &g_refs)?;
        observe(epoch, &params);
    }
    let (_, best_epoch, params) = best;
    let embedding = encode(
        spec,
        &params,
        &pg,
        rng::derive(seed, "encoder.sample", best_epoch as u64),
    )?;
    Ok(TrainOutcome {
        params,
        curve,
        best_epoch,
        embedding,
    })
}
