//! Multi-channel model: one local classifier per channel, bottlenecks
//! concatenated into a global classifier, joint loss and late fusion.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::nn::loss::batch_logit_grad;
use crate::nn::{
    central_difference, glorot_uniform, mean_cross_entropy, normwise_relative_error, Activation, DenseLayer,
    LayerCache, LayerGrads,
};
use crate::sdae::PretrainedStack;

/// Layer widths shared by every channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Architecture {
    /// Widths of the two autoencoder-initialised layers.
    pub encoder: [usize; 2],
    pub bottleneck: usize,
    pub local_hidden: usize,
    pub global_hidden: usize,
    pub classes: usize,
    pub elu_alpha: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder: [400, 400],
            bottleneck: 30,
            local_hidden: 100,
            global_hidden: 1000,
            classes: 4,
            elu_alpha: 1.0,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.encoder[0],
            self.encoder[1],
            self.bottleneck,
            self.local_hidden,
            self.global_hidden,
        ];
        if widths.contains(&0) || self.classes < 2 {
            return Err(Error::Config("layer widths must be >= 1 and classes >= 2".into()));
        }
        if !(self.elu_alpha > 0.0) {
            return Err(Error::Config("elu alpha must be > 0".into()));
        }
        Ok(())
    }

    fn elu(&self) -> Activation {
        Activation::Elu { alpha: self.elu_alpha }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// `γ·q_global + (1-γ)·Σ q_local`, unnormalised.
    #[default]
    Sum,
    /// Same, with the local sum divided by the channel count.
    LocalMean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalClassifier {
    pub layer1: DenseLayer,
    pub layer2: DenseLayer,
    pub bottleneck: DenseLayer,
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

impl LocalClassifier {
    pub const LAYER_NAMES: [&'static str; 5] = ["layer1", "layer2", "bottleneck", "hidden", "output"];

    pub fn layers(&self) -> [&DenseLayer; 5] {
        [&self.layer1, &self.layer2, &self.bottleneck, &self.hidden, &self.output]
    }

    pub fn layers_mut(&mut self) -> [&mut DenseLayer; 5] {
        [
            &mut self.layer1,
            &mut self.layer2,
            &mut self.bottleneck,
            &mut self.hidden,
            &mut self.output,
        ]
    }

    pub fn input_dim(&self) -> usize {
        self.layer1.in_dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalClassifier {
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

impl GlobalClassifier {
    pub const LAYER_NAMES: [&'static str; 2] = ["hidden", "output"];

    pub fn layers(&self) -> [&DenseLayer; 2] {
        [&self.hidden, &self.output]
    }

    pub fn layers_mut(&mut self) -> [&mut DenseLayer; 2] {
        [&mut self.hidden, &mut self.output]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MtcAeModel {
    pub locals: Vec<LocalClassifier>,
    pub global: GlobalClassifier,
    pub arch: Architecture,
}

fn glorot_layer<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, act: Activation, rng: &mut R) -> DenseLayer {
    DenseLayer {
        weights: glorot_uniform(fan_in, fan_out, rng),
        biases: vec![0.0; fan_out],
        activation: act,
    }
}

impl MtcAeModel {
    /// Fully random initialisation (no pretraining).
    pub fn random<R: Rng + ?Sized>(channel_dims: &[usize], arch: &Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        if channel_dims.is_empty() || channel_dims.contains(&0) {
            return Err(Error::Config(
                "need at least one channel, each at least one column wide".into(),
            ));
        }
        let elu = arch.elu();
        let encoders: Vec<(DenseLayer, DenseLayer)> = channel_dims
            .iter()
            .map(|&d| {
                let l1 = glorot_layer(d, arch.encoder[0], elu, rng);
                let l2 = glorot_layer(arch.encoder[0], arch.encoder[1], elu, rng);
                (l1, l2)
            })
            .collect();
        Ok(Self::assemble(encoders, arch, rng))
    }

    /// Lowest two layers of each local classifier copied from that
    /// channel's autoencoder stack; every other layer Glorot-initialised.
    pub fn from_pretrained<R: Rng + ?Sized>(
        channel_dims: &[usize],
        stacks: &[PretrainedStack],
        arch: &Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        arch.validate()?;
        if stacks.len() != channel_dims.len() || stacks.is_empty() {
            return Err(Error::Config(format!(
                "{} pretrained stacks for {} channels",
                stacks.len(),
                channel_dims.len()
            )));
        }
        let mut encoders = Vec::with_capacity(stacks.len());
        for (i, (stack, &d)) in stacks.iter().zip(channel_dims).enumerate() {
            let [s1, s2] = &stack.stages;
            if s1.in_dim() != d
                || s1.hidden_dim() != arch.encoder[0]
                || s2.in_dim() != arch.encoder[0]
                || s2.hidden_dim() != arch.encoder[1]
            {
                return Err(Error::Config(format!(
                    "stack {i} is {}->{}->{}, channel expects {d}->{}->{}",
                    s1.in_dim(),
                    s1.hidden_dim(),
                    s2.hidden_dim(),
                    arch.encoder[0],
                    arch.encoder[1]
                )));
            }
            encoders.push((s1.encoder.clone(), s2.encoder.clone()));
        }
        Ok(Self::assemble(encoders, arch, rng))
    }

    fn assemble<R: Rng + ?Sized>(encoders: Vec<(DenseLayer, DenseLayer)>, arch: &Architecture, rng: &mut R) -> Self {
        let elu = arch.elu();
        let locals: Vec<LocalClassifier> = encoders
            .into_iter()
            .map(|(layer1, layer2)| LocalClassifier {
                layer1,
                layer2,
                bottleneck: glorot_layer(arch.encoder[1], arch.bottleneck, elu, rng),
                hidden: glorot_layer(arch.bottleneck, arch.local_hidden, elu, rng),
                output: glorot_layer(arch.local_hidden, arch.classes, Activation::Softmax, rng),
            })
            .collect();
        let concat = locals.len() * arch.bottleneck;
        let global = GlobalClassifier {
            hidden: glorot_layer(concat, arch.global_hidden, elu, rng),
            output: glorot_layer(arch.global_hidden, arch.classes, Activation::Softmax, rng),
        };
        Self {
            locals,
            global,
            arch: arch.clone(),
        }
    }

    pub fn channels(&self) -> usize {
        self.locals.len()
    }

    pub fn channel_dims(&self) -> Vec<usize> {
        self.locals.iter().map(LocalClassifier::input_dim).collect()
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    /// All layers in parameter order, with their names.
    pub fn named_layers(&self) -> Vec<(String, &DenseLayer)> {
        let mut out = Vec::with_capacity(self.locals.len() * 5 + 2);
        for (i, l) in self.locals.iter().enumerate() {
            for (name, layer) in LocalClassifier::LAYER_NAMES.iter().zip(l.layers()) {
                out.push((format!("local[{i}].{name}"), layer));
            }
        }
        for (name, layer) in GlobalClassifier::LAYER_NAMES.iter().zip(self.global.layers()) {
            out.push((format!("global.{name}"), layer));
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut out: Vec<&mut DenseLayer> = Vec::with_capacity(self.locals.len() * 5 + 2);
        for l in &mut self.locals {
            out.extend(l.layers_mut());
        }
        out.extend(self.global.layers_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_layers().iter().map(|(_, l)| l.param_count()).sum()
    }

    /// `(name, offset, len)` of every parameter block in flattened order.
    pub fn block_layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (name, layer) in self.named_layers() {
            let w = layer.weights.data().len();
            out.push((format!("{name}.weights"), offset, w));
            offset += w;
            out.push((format!("{name}.biases"), offset, layer.biases.len()));
            offset += layer.biases.len();
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, layer) in self.named_layers() {
            out.extend_from_slice(layer.weights.data());
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    pub fn set_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(shape_err("MtcAeModel::set_flat", self.param_count(), params.len()));
        }
        let mut rest = params;
        for layer in self.layers_mut() {
            let (w, tail) = rest.split_at(layer.weights.data().len());
            layer.weights.data_mut().copy_from_slice(w);
            let (b, tail) = tail.split_at(layer.biases.len());
            layer.biases.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    fn check_batch(&self, batch: &[Matrix]) -> Result<usize> {
        if batch.len() != self.locals.len() {
            return Err(shape_err("forward (channel count)", self.locals.len(), batch.len()));
        }
        let rows = batch[0].rows();
        for (x, l) in batch.iter().zip(&self.locals) {
            if x.cols() != l.input_dim() || x.rows() != rows {
                return Err(shape_err(
                    "forward (channel input)",
                    format!("{rows}x{}", l.input_dim()),
                    format!("{}x{}", x.rows(), x.cols()),
                ));
            }
        }
        Ok(rows)
    }

    /// Forward pass retaining every layer cache for backpropagation.
    pub fn forward(&self, batch: &[Matrix]) -> Result<ForwardCache> {
        self.check_batch(batch)?;
        let locals: Vec<LocalCache> = self
            .locals
            .par_iter()
            .zip(batch.par_iter())
            .map(|(local, x)| {
                let mut layers = Vec::with_capacity(5);
                let mut input = x;
                for layer in local.layers() {
                    let cache = layer.forward(input)?;
                    layers.push(cache);
                    input = &layers.last().expect("just pushed").output;
                }
                Ok(LocalCache { layers })
            })
            .collect::<Result<_>>()?;
        let bottlenecks: Vec<&Matrix> = locals.iter().map(|c| &c.layers[2].output).collect();
        let concat = Matrix::hconcat(&bottlenecks)?;
        let g_hidden = self.global.hidden.forward(&concat)?;
        let g_out = self.global.output.forward(&g_hidden.output)?;
        Ok(ForwardCache {
            locals,
            global: vec![g_hidden, g_out],
        })
    }

    /// Posteriors only; processes rows in chunks to bound memory.
    pub fn posteriors(&self, batch: &[Matrix]) -> Result<Posteriors> {
        let rows = self.check_batch(batch)?;
        const CHUNK: usize = 256;
        let mut global = Vec::with_capacity(rows * self.classes());
        let mut locals = vec![Vec::with_capacity(rows * self.classes()); self.locals.len()];
        let mut start = 0;
        while start < rows {
            let idx: Vec<usize> = (start..(start + CHUNK).min(rows)).collect();
            let parts: Vec<(Matrix, Matrix)> = self
                .locals
                .par_iter()
                .zip(batch.par_iter())
                .map(|(local, x)| {
                    let mut h = x.select_rows(&idx);
                    let mut bottleneck = None;
                    for (k, layer) in local.layers().into_iter().enumerate() {
                        h = layer.infer(&h)?.1;
                        if k == 2 {
                            bottleneck = Some(h.clone());
                        }
                    }
                    Ok((bottleneck.expect("five layers"), h))
                })
                .collect::<Result<_>>()?;
            let concat = Matrix::hconcat(&parts.iter().map(|p| &p.0).collect::<Vec<_>>())?;
            let g = self.global.hidden.infer(&concat)?.1;
            global.extend_from_slice(self.global.output.infer(&g)?.1.data());
            for (dst, (_, q)) in locals.iter_mut().zip(parts) {
                dst.extend_from_slice(q.data());
            }
            start += CHUNK;
        }
        let c = self.classes();
        Ok(Posteriors {
            global: Matrix::from_vec(rows, c, global)?,
            locals: locals
                .into_iter()
                .map(|d| Matrix::from_vec(rows, c, d))
                .collect::<Result<_>>()?,
        })
    }

    /// Argmax of the fused scores per row (ties to the lowest class).
    pub fn predict(&self, batch: &[Matrix], gamma: f64, mode: FusionMode) -> Result<Vec<usize>> {
        Ok(self.posteriors(batch)?.fuse(gamma, mode).row_argmax())
    }
}

#[derive(Clone, Debug)]
pub struct LocalCache {
    /// layer1, layer2, bottleneck, hidden, output.
    pub layers: Vec<LayerCache>,
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub locals: Vec<LocalCache>,
    /// Global hidden and output layers; the hidden layer's input is the
    /// concatenated bottleneck activations in channel order.
    pub global: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.global[1].output.rows()
    }

    pub fn local_probs(&self, i: usize) -> &Matrix {
        &self.locals[i].layers[4].output
    }

    pub fn global_probs(&self) -> &Matrix {
        &self.global[1].output
    }

    pub fn bottleneck_concat(&self) -> &Matrix {
        &self.global[0].input
    }

    pub fn fuse(&self, gamma: f64, mode: FusionMode) -> Matrix {
        let locals: Vec<&Matrix> = (0..self.locals.len()).map(|i| self.local_probs(i)).collect();
        fuse(self.global_probs(), &locals, gamma, mode)
    }
}

/// Global and per-channel class posteriors for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriors {
    pub global: Matrix,
    pub locals: Vec<Matrix>,
}

impl Posteriors {
    pub fn fuse(&self, gamma: f64, mode: FusionMode) -> Matrix {
        fuse(&self.global, &self.locals.iter().collect::<Vec<_>>(), gamma, mode)
    }
}

/// `γ·q_global + (1-γ)·Σ q_local` (or the local mean under
/// [`FusionMode::LocalMean`]); rows are not renormalised.
pub fn fuse(global: &Matrix, locals: &[&Matrix], gamma: f64, mode: FusionMode) -> Matrix {
    let mut local_sum = Matrix::zeros(global.rows(), global.cols());
    for q in locals {
        local_sum.add_assign(q);
    }
    let local_weight = match mode {
        FusionMode::Sum => 1.0 - gamma,
        FusionMode::LocalMean => (1.0 - gamma) / locals.len().max(1) as f64,
    };
    let mut out = global.clone();
    out.data_mut()
        .iter_mut()
        .zip(local_sum.data())
        .for_each(|(g, s)| *g = gamma * *g + local_weight * s);
    out
}

/// Components of the joint objective for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct JointLoss {
    pub total: f64,
    pub global: f64,
    pub locals: Vec<f64>,
}

/// `λ·CE_global + (1-λ)·Σ_i CE_local_i`, each a batch-mean cross-entropy.
pub fn joint_loss(cache: &ForwardCache, labels: &[usize], lambda: f64) -> Result<JointLoss> {
    if labels.len() != cache.batch_size() {
        return Err(shape_err("joint_loss (labels)", cache.batch_size(), labels.len()));
    }
    let global = mean_cross_entropy(cache.global_probs(), labels);
    let locals: Vec<f64> = (0..cache.locals.len())
        .map(|i| mean_cross_entropy(cache.local_probs(i), labels))
        .collect();
    Ok(JointLoss {
        total: combine_losses(global, &locals, lambda),
        global,
        locals,
    })
}

pub fn combine_losses(global: f64, locals: &[f64], lambda: f64) -> f64 {
    lambda * global + (1.0 - lambda) * locals.iter().sum::<f64>()
}

/// Gradients in the same layer order as [`MtcAeModel::named_layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub locals: Vec<Vec<LayerGrads>>,
    pub global: Vec<LayerGrads>,
}

impl ModelGrads {
    pub fn layers(&self) -> impl Iterator<Item = &LayerGrads> {
        self.locals.iter().flatten().chain(&self.global)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerGrads> {
        self.locals.iter_mut().flatten().chain(self.global.iter_mut())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.layers() {
            out.extend_from_slice(g.weights.data());
            out.extend_from_slice(&g.biases);
        }
        out
    }
}

/// Backpropagates the joint loss. The global term reaches each local
/// classifier's lower layers through its slice of the concatenated
/// bottleneck, where it adds to the local term's gradient.
pub fn backward(model: &MtcAeModel, cache: &ForwardCache, labels: &[usize], lambda: f64) -> Result<ModelGrads> {
    if labels.len() != cache.batch_size() {
        return Err(shape_err("backward (labels)", cache.batch_size(), labels.len()));
    }
    if cache.locals.len() != model.locals.len() {
        return Err(shape_err("backward (channels)", model.locals.len(), cache.locals.len()));
    }
    let dz_global = batch_logit_grad(cache.global_probs(), labels, lambda)?;
    let (g_out, d_hidden) = model.global.output.backward(&cache.global[1], &dz_global)?;
    let (g_hidden, d_concat) = model.global.hidden.backward(&cache.global[0], &d_hidden)?;

    let width = model.arch.bottleneck;
    let locals: Vec<Vec<LayerGrads>> = model
        .locals
        .par_iter()
        .zip(cache.locals.par_iter())
        .enumerate()
        .map(|(i, (local, lc))| {
            let dz = batch_logit_grad(&lc.layers[4].output, labels, 1.0 - lambda)?;
            let (g5, d4) = local.output.backward(&lc.layers[4], &dz)?;
            let (g4, mut d3) = local.hidden.backward(&lc.layers[3], &d4)?;
            d3.add_assign(&d_concat.col_block(i * width, width));
            let (g3, d2) = local.bottleneck.backward(&lc.layers[2], &d3)?;
            let (g2, d1) = local.layer2.backward(&lc.layers[1], &d2)?;
            let g1 = local.layer1.backward_params(&lc.layers[0], &d1)?;
            Ok(vec![g1, g2, g3, g4, g5])
        })
        .collect::<Result<_>>()?;
    Ok(ModelGrads {
        locals,
        global: vec![g_hidden, g_out],
    })
}

/// Finite-difference agreement for one parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub name: String,
    pub params: usize,
    /// Normwise relative error within the block.
    pub relative_error: f64,
    /// Largest analytic gradient magnitude in the block.
    pub max_abs_gradient: f64,
}

/// Compares [`backward`] against central differences of [`joint_loss`], block by block.
pub fn check_joint_gradient(
    model: &MtcAeModel,
    batch: &[Matrix],
    labels: &[usize],
    lambda: f64,
    eps: f64,
) -> Result<Vec<BlockCheck>> {
    let cache = model.forward(batch)?;
    let analytic = backward(model, &cache, labels, lambda)?.flatten();
    let mut probe = model.clone();
    let mut failure = None;
    let numeric = central_difference(
        |p| {
            probe.set_flat(p).expect("length preserved");
            match probe.forward(batch).and_then(|c| joint_loss(&c, labels, lambda)) {
                Ok(l) => l.total,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &model.flatten(),
        eps,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(model
        .block_layout()
        .into_iter()
        .map(|(name, off, len)| {
            let a = &analytic[off..off + len];
            BlockCheck {
                name,
                params: len,
                relative_error: normwise_relative_error(a, &numeric[off..off + len]),
                max_abs_gradient: a.iter().fold(0.0, |m, x| m.max(x.abs())),
            }
        })
        .collect())
}
