//! Joint fine-tuning with Adam and validation-based model selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::metrics::compute_metrics_for;
use crate::model::{backward, joint_loss, FusionMode, ModelGrads, MtcAeModel};
use crate::nn::{AdamConfig, AdamState};
use crate::rng::seeded;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the global cross-entropy; locals get `1 - lambda`.
    pub lambda: f64,
    /// Weight of the global posterior in the fused prediction.
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 coefficient on weights during fine-tuning (off by default).
    pub weight_decay: f64,
    pub fusion: FusionMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            gamma: 0.95,
            lr: 3e-4,
            epochs: 1000,
            batch_size: 64,
            weight_decay: 0.0,
            fusion: FusionMode::Sum,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) || !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("lambda and gamma must lie in [0, 1]".into()));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("need lr > 0, batch size >= 1, weight decay >= 0".into()));
        }
        Ok(())
    }
}

/// Per-channel feature matrices with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub channels: Vec<Matrix>,
    pub labels: Vec<usize>,
}

impl ChannelSet {
    pub fn new(channels: Vec<Matrix>, labels: Vec<usize>) -> Result<Self> {
        if let Some(bad) = channels.iter().find(|m| m.rows() != labels.len()) {
            return Err(shape_err("ChannelSet rows", labels.len(), bad.rows()));
        }
        Ok(Self { channels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> ChannelSet {
        ChannelSet {
            channels: self.channels.iter().map(|m| m.select_rows(rows)).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

/// One Adam state per parameter block, in [`MtcAeModel::block_layout`] order.
#[derive(Clone, Debug)]
pub struct ModelOptimizer {
    states: Vec<AdamState>,
    names: Vec<String>,
}

impl ModelOptimizer {
    pub fn new(model: &MtcAeModel, config: AdamConfig) -> Self {
        let layout = model.block_layout();
        Self {
            states: layout.iter().map(|(_, _, len)| AdamState::new(*len, config)).collect(),
            names: layout.into_iter().map(|(name, _, _)| name).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step)
    }

    /// Applies one update to every block. All gradients are checked first,
    /// so a non-finite block leaves the whole model untouched.
    pub fn step(&mut self, model: &mut MtcAeModel, grads: &ModelGrads, lr: f64) -> Result<()> {
        let blocks: Vec<&[f64]> = grads
            .layers()
            .flat_map(|g| [g.weights.data(), g.biases.as_slice()])
            .collect();
        if blocks.len() != self.states.len() {
            return Err(shape_err("ModelOptimizer::step", self.states.len(), blocks.len()));
        }
        if let Some(k) = blocks.iter().position(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteGradient {
                block: self.names[k].clone(),
            });
        }
        let params = model
            .layers_mut()
            .into_iter()
            .flat_map(|l| [l.weights.data_mut(), l.biases.as_mut_slice()]);
        for ((state, p), g) in self.states.iter_mut().zip(params).zip(&blocks) {
            if p.len() != g.len() || state.first_moment.len() != g.len() {
                return Err(shape_err("ModelOptimizer::step", state.first_moment.len(), g.len()));
            }
        }
        let params = model
            .layers_mut()
            .into_iter()
            .flat_map(|l| [l.weights.data_mut(), l.biases.as_mut_slice()]);
        for ((state, p), g) in self.states.iter_mut().zip(params).zip(blocks) {
            state.apply(p, g, lr);
        }
        Ok(())
    }
}

/// Forward, backward and one optimizer update on a single mini-batch;
/// returns the batch's joint loss.
pub fn train_step(
    model: &mut MtcAeModel,
    optimizer: &mut ModelOptimizer,
    batch: &ChannelSet,
    config: &TrainConfig,
) -> Result<f64> {
    let cache = model.forward(&batch.channels)?;
    let loss = joint_loss(&cache, &batch.labels, config.lambda)?.total;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, batch: None });
    }
    let mut grads = backward(model, &cache, &batch.labels, config.lambda)?;
    drop(cache);
    if config.weight_decay > 0.0 {
        let layers: Vec<_> = model
            .named_layers()
            .into_iter()
            .map(|(_, l)| l.weights.clone())
            .collect();
        for (g, w) in grads.layers_mut().zip(&layers) {
            g.weights
                .data_mut()
                .iter_mut()
                .zip(w.data())
                .for_each(|(g, w)| *g += 2.0 * config.weight_decay * w);
        }
    }
    optimizer.step(model, &grads, config.lr)?;
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean joint loss over the epoch's mini-batches (weighted by batch size).
    pub train_loss: f64,
    pub validation_ua: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MtcAeModel,
    /// `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

/// Unweighted accuracy of fused predictions.
pub fn evaluate_ua(model: &MtcAeModel, set: &ChannelSet, gamma: f64, mode: FusionMode) -> Result<f64> {
    let pred = model.predict(&set.channels, gamma, mode)?;
    Ok(compute_metrics_for(&pred, &set.labels, model.classes())?.unweighted_accuracy)
}

/// Mean joint loss over a whole set, evaluated in chunks.
pub fn evaluate_loss(model: &MtcAeModel, set: &ChannelSet, lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    let rows: Vec<usize> = (0..set.len()).collect();
    for chunk in rows.chunks(256) {
        let part = set.select(chunk);
        let cache = model.forward(&part.channels)?;
        total += joint_loss(&cache, &part.labels, lambda)?.total * chunk.len() as f64;
    }
    Ok(total / set.len().max(1) as f64)
}

/// Mini-batch Adam on the joint loss. After every epoch the fused
/// validation UA is measured; the parameters of the best epoch (earliest
/// on ties) are returned.
pub fn train(
    model: MtcAeModel,
    train_set: &ChannelSet,
    validation: &ChannelSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if validation.is_empty() && config.epochs > 0 {
        return Err(Error::Config("empty validation set".into()));
    }
    let mut model = model;
    let mut optimizer = ModelOptimizer::new(&model, AdamConfig::default());
    let mut rng = seeded(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, MtcAeModel)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = train_set.select(chunk);
            let loss = match train_step(&mut model, &mut optimizer, &batch, config) {
                Err(Error::NonFiniteLoss { .. }) => return Err(Error::NonFiniteLoss { epoch, batch: Some(b) }),
                other => other?,
            };
            loss_sum += loss * chunk.len() as f64;
        }
        let validation_ua = evaluate_ua(&model, validation, config.gamma, config.fusion)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            validation_ua,
        });
        if best.as_ref().is_none_or(|(_, ua, _)| validation_ua > *ua) {
            best = Some((epoch, validation_ua, model.clone()));
        }
    }
    Ok(match best {
        Some((epoch, _, m)) => TrainOutcome {
            model: m,
            best_epoch: Some(epoch),
            history,
        },
        None => TrainOutcome {
            model,
            best_epoch: None,
            history,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthSpec;
    use crate::model::Architecture;

    fn small_arch() -> Architecture {
        Architecture {
            encoder: [12, 12],
            bottleneck: 4,
            local_hidden: 8,
            global_hidden: 16,
            classes: 4,
            elu_alpha: 1.0,
        }
    }

    fn synthetic_sets(separation: f64) -> (ChannelSet, ChannelSet) {
        let spec = SynthSpec {
            channels: 3,
            dims: 4,
            per_class: 40,
            speakers: 4,
            separation,
            noise: 1.0,
            seed: 11,
        };
        let (d, m) = spec.generate().unwrap();
        let all = ChannelSet::new(m.split(&d.features).unwrap(), d.labels.clone()).unwrap();
        let (tr, va): (Vec<usize>, Vec<usize>) = (0..d.len()).partition(|&i| d.speakers[i] != "spk03");
        (all.select(&tr), all.select(&va))
    }

    #[test]
    fn training_reduces_loss_on_separable_data() {
        let (tr, va) = synthetic_sets(3.0);
        let m = MtcAeModel::random(&[4, 4, 4], &small_arch(), &mut seeded(1)).unwrap();
        let before = evaluate_loss(&m, &tr, 0.1).unwrap();
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 16,
            lr: 3e-3,
            ..Default::default()
        };
        let out = train(m, &tr, &va, &cfg).unwrap();
        let after = evaluate_loss(&out.model, &tr, 0.1).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert!(out.history.last().unwrap().train_loss < out.history[0].train_loss);
        assert_eq!(out.history.len(), 15);
        let best = out.best_epoch.unwrap();
        let max = out.history.iter().map(|h| h.validation_ua).fold(f64::MIN, f64::max);
        assert_eq!(out.history[best].validation_ua, max);
        assert!(out.history[..best].iter().all(|h| h.validation_ua < max));
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (tr, va) = synthetic_sets(3.0);
        let m = MtcAeModel::random(&[4, 4, 4], &small_arch(), &mut seeded(1)).unwrap();
        let out = train(
            m.clone(),
            &tr,
            &va,
            &TrainConfig {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.model, m);
        assert_eq!(out.best_epoch, None);
        assert!(out.history.is_empty());
    }

    #[test]
    fn fixed_seed_reproduces_history() {
        let (tr, va) = synthetic_sets(1.0);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            seed: 5,
            ..Default::default()
        };
        let run = || {
            let m = MtcAeModel::random(&[4, 4, 4], &small_arch(), &mut seeded(2)).unwrap();
            train(m, &tr, &va, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn degenerate_lambda_freezes_the_unweighted_side() {
        let (tr, _) = synthetic_sets(2.0);
        let init = MtcAeModel::random(&[4, 4, 4], &small_arch(), &mut seeded(3)).unwrap();
        for lambda in [0.0, 1.0] {
            let cfg = TrainConfig {
                lambda,
                ..Default::default()
            };
            let mut m = init.clone();
            let mut opt = ModelOptimizer::new(&m, AdamConfig::default());
            for step in 0..10 {
                let rows: Vec<usize> = (step * 8..step * 8 + 8).collect();
                train_step(&mut m, &mut opt, &tr.select(&rows), &cfg).unwrap();
            }
            if lambda == 0.0 {
                assert_eq!(m.global, init.global);
            } else {
                for (a, b) in m.locals.iter().zip(&init.locals) {
                    assert_eq!((&a.hidden, &a.output), (&b.hidden, &b.output));
                    assert_ne!(a.layer1, b.layer1);
                }
            }
        }
    }

    #[test]
    fn non_finite_inputs_abort_with_position() {
        let (mut tr, va) = synthetic_sets(2.0);
        tr.channels[0].set(0, 0, f64::NAN);
        let m = MtcAeModel::random(&[4, 4, 4], &small_arch(), &mut seeded(3)).unwrap();
        let err = train(
            m,
            &tr,
            &va,
            &TrainConfig {
                epochs: 2,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                Error::NonFiniteLoss {
                    epoch: 0,
                    batch: Some(_)
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            lambda: 1.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            gamma: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
