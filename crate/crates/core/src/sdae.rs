//! Denoising autoencoders and greedy two-stage pretraining per channel.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{glorot_uniform, l2_penalty, Activation, AdamConfig, AdamState, DenseLayer, LayerGrads};
use crate::rng::substream;

/// Masking noise: zeroes exactly `floor(rate · dim)` positions per vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub rate: f64,
}

impl CorruptionSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Config(format!("corruption rate {rate} outside [0, 1]")));
        }
        Ok(Self { rate })
    }

    pub fn masked_count(&self, dim: usize) -> usize {
        // the nudge keeps e.g. 0.7 * 10 from flooring to 6
        (((self.rate * dim as f64) + 1e-9).floor() as usize).min(dim)
    }
}

pub fn corrupt<R: Rng + ?Sized>(x: &[f64], spec: CorruptionSpec, rng: &mut R) -> Vec<f64> {
    let mut out = x.to_vec();
    mask_in_place(&mut out, spec, rng);
    out
}

fn mask_in_place<R: Rng + ?Sized>(x: &mut [f64], spec: CorruptionSpec, rng: &mut R) {
    let k = spec.masked_count(x.len());
    if k == 0 {
        return;
    }
    for i in index::sample(rng, x.len(), k) {
        x[i] = 0.0;
    }
}

fn corrupt_rows<R: Rng + ?Sized>(m: &Matrix, spec: CorruptionSpec, rng: &mut R) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        mask_in_place(out.row_mut(r), spec, rng);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct SdaeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub corruption: f64,
    pub beta: f64,
    pub elu_alpha: f64,
}

impl Default for SdaeConfig {
    fn default() -> Self {
        Self {
            hidden: 400,
            epochs: 200,
            lr: 3e-4,
            batch_size: 64,
            corruption: 0.2,
            beta: 1e-4,
            elu_alpha: 1.0,
        }
    }
}

impl SdaeConfig {
    pub fn validate(&self) -> Result<()> {
        CorruptionSpec::new(self.corruption)?;
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("sdae hidden width and batch size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.beta >= 0.0) || !(self.elu_alpha > 0.0) {
            return Err(Error::Config("sdae lr and elu alpha must be > 0, beta >= 0".into()));
        }
        Ok(())
    }
}

/// Encoder/decoder pair with untied weights, both ELU.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoisingAutoencoder {
    pub encoder: DenseLayer,
    pub decoder: DenseLayer,
}

pub struct DaeGrads {
    pub loss: f64,
    pub reconstruction_error: f64,
    pub encoder: LayerGrads,
    pub decoder: LayerGrads,
}

impl DenoisingAutoencoder {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, hidden: usize, alpha: f64, rng: &mut R) -> Self {
        let act = Activation::Elu { alpha };
        Self {
            encoder: DenseLayer {
                weights: glorot_uniform(in_dim, hidden, rng),
                biases: vec![0.0; hidden],
                activation: act,
            },
            decoder: DenseLayer {
                weights: glorot_uniform(hidden, in_dim, rng),
                biases: vec![0.0; in_dim],
                activation: act,
            },
        }
    }

    pub fn from_layers(encoder: DenseLayer, decoder: DenseLayer) -> Result<Self> {
        if encoder.in_dim() != decoder.out_dim() || encoder.out_dim() != decoder.in_dim() {
            return Err(shape_err(
                "DenoisingAutoencoder",
                format!("decoder {}x{}", encoder.in_dim(), encoder.out_dim()),
                format!("{}x{}", decoder.out_dim(), decoder.in_dim()),
            ));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn in_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    /// `(hidden, reconstruction)` for an already corrupted batch.
    pub fn forward(&self, x_corrupted: &Matrix) -> Result<(Matrix, Matrix)> {
        let (_, hidden) = self.encoder.infer(x_corrupted)?;
        let (_, recon) = self.decoder.infer(&hidden)?;
        Ok((hidden, recon))
    }

    /// Encoder applied to clean inputs.
    pub fn encode(&self, x_clean: &Matrix) -> Result<Matrix> {
        Ok(self.encoder.infer(x_clean)?.1)
    }

    /// Batch-mean squared reconstruction error plus the weight penalty.
    pub fn loss(&self, x_clean: &Matrix, reconstruction: &Matrix, beta: f64) -> Result<f64> {
        Ok(reconstruction_error(x_clean, reconstruction)?
            + l2_penalty(&[&self.encoder.weights, &self.decoder.weights], beta))
    }

    pub fn gradients(&self, x_clean: &Matrix, x_corrupted: &Matrix, beta: f64) -> Result<DaeGrads> {
        let enc = self.encoder.forward(x_corrupted)?;
        let dec = self.decoder.forward(&enc.output)?;
        let recon_err = reconstruction_error(x_clean, &dec.output)?;

        let n = x_clean.rows().max(1) as f64;
        let mut upstream = dec.output.clone();
        upstream
            .data_mut()
            .iter_mut()
            .zip(x_clean.data())
            .for_each(|(r, x)| *r = 2.0 * (*r - x) / n);
        let (mut dec_grads, d_hidden) = self.decoder.backward(&dec, &upstream)?;
        let mut enc_grads = self.encoder.backward_params(&enc, &d_hidden)?;
        let mut penalty = 0.0;
        if beta != 0.0 {
            penalty += add_weight_decay(&mut enc_grads.weights, &self.encoder.weights, beta);
            penalty += add_weight_decay(&mut dec_grads.weights, &self.decoder.weights, beta);
        }
        Ok(DaeGrads {
            loss: recon_err + penalty,
            reconstruction_error: recon_err,
            encoder: enc_grads,
            decoder: dec_grads,
        })
    }
}

/// Adds the gradient of `beta * ||w||²` to `grad` and returns the penalty.
fn add_weight_decay(grad: &mut Matrix, w: &Matrix, beta: f64) -> f64 {
    let mut sq = 0.0;
    for (g, &w) in grad.data_mut().iter_mut().zip(w.data()) {
        *g += 2.0 * beta * w;
        sq += w * w;
    }
    beta * sq
}

/// Mean over rows of the squared Euclidean distance.
pub fn reconstruction_error(x: &Matrix, reconstruction: &Matrix) -> Result<f64> {
    if x.shape() != reconstruction.shape() {
        return Err(shape_err(
            "dae_loss",
            format!("{:?}", x.shape()),
            format!("{:?}", reconstruction.shape()),
        ));
    }
    if x.rows() == 0 {
        return Ok(0.0);
    }
    let sq: f64 = x
        .data()
        .iter()
        .zip(reconstruction.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq / x.rows() as f64)
}

#[derive(Clone, Debug)]
pub struct TrainedDae {
    pub dae: DenoisingAutoencoder,
    /// Mean reconstruction error per epoch, measured on the corrupted
    /// training batches as they were seen.
    pub epoch_errors: Vec<f64>,
}

impl TrainedDae {
    pub fn final_error(&self) -> Option<f64> {
        self.epoch_errors.last().copied()
    }
}

/// Trains one autoencoder with mini-batch Adam, fresh masking every epoch.
pub fn train_dae<R: Rng + ?Sized>(data: &Matrix, config: &SdaeConfig, rng: &mut R) -> Result<TrainedDae> {
    config.validate()?;
    if data.rows() == 0 || data.cols() == 0 {
        return Err(Error::Config("cannot pretrain on an empty channel".into()));
    }
    let spec = CorruptionSpec::new(config.corruption)?;
    let mut dae = DenoisingAutoencoder::new(data.cols(), config.hidden, config.elu_alpha, rng);
    let adam = AdamConfig::default();
    let mut states = [
        AdamState::new(dae.encoder.weights.data().len(), adam),
        AdamState::new(dae.encoder.biases.len(), adam),
        AdamState::new(dae.decoder.weights.data().len(), adam),
        AdamState::new(dae.decoder.biases.len(), adam),
    ];
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut epoch_errors = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut err_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let clean = data.select_rows(chunk);
            let noisy = corrupt_rows(&clean, spec, rng);
            let g = dae.gradients(&clean, &noisy, config.beta)?;
            if !g.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: Some(b) });
            }
            err_sum += g.reconstruction_error * chunk.len() as f64;
            let [ew, eb, dw, db] = &mut states;
            ew.step(
                dae.encoder.weights.data_mut(),
                g.encoder.weights.data(),
                config.lr,
                "encoder.weights",
            )?;
            eb.step(&mut dae.encoder.biases, &g.encoder.biases, config.lr, "encoder.biases")?;
            dw.step(
                dae.decoder.weights.data_mut(),
                g.decoder.weights.data(),
                config.lr,
                "decoder.weights",
            )?;
            db.step(&mut dae.decoder.biases, &g.decoder.biases, config.lr, "decoder.biases")?;
        }
        epoch_errors.push(err_sum / data.rows() as f64);
    }
    Ok(TrainedDae { dae, epoch_errors })
}

/// Two greedily trained autoencoders for one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainedStack {
    pub channel: usize,
    pub stages: [DenoisingAutoencoder; 2],
    pub epoch_errors: [Vec<f64>; 2],
}

impl PretrainedStack {
    pub fn input_dim(&self) -> usize {
        self.stages[0].in_dim()
    }
}

/// Stage 1 on the channel data, stage 2 on stage 1's encoding of the clean data.
pub fn pretrain_stack<R: Rng + ?Sized>(
    channel: usize,
    data: &Matrix,
    config: &SdaeConfig,
    rng: &mut R,
) -> Result<PretrainedStack> {
    let first = train_dae(data, config, rng)?;
    let hidden = first.dae.encode(data)?;
    let second = train_dae(&hidden, config, rng)?;
    Ok(PretrainedStack {
        channel,
        stages: [first.dae, second.dae],
        epoch_errors: [first.epoch_errors, second.epoch_errors],
    })
}

/// Pretrains every channel, channel `i` drawing from substream `i` of
/// `seed`, so the result does not depend on `parallel`.
pub fn pretrain_channels(
    channels: &[Matrix],
    config: &SdaeConfig,
    seed: u64,
    parallel: bool,
) -> Result<Vec<PretrainedStack>> {
    let run = |(i, data): (usize, &Matrix)| {
        let mut rng = substream(seed, i as u64);
        pretrain_stack(i, data, config, &mut rng)
    };
    if parallel {
        channels.par_iter().enumerate().map(run).collect()
    } else {
        channels.iter().enumerate().map(run).collect()
    }
}
