//! A small convolutional digit recognizer.
//!
//! The network is `conv → ReLU → 2×2 max-pool` repeated once per
//! [`ConvSpec`], followed by a ReLU fully connected layer and a softmax output
//! layer. The activations of the fully connected layer are the token
//! embedding used for nearest-neighbour support.
//!
//! Everything runs in `f64` on a single thread, so a fixed seed reproduces the
//! same weights bit for bit.

mod file;
mod train;

pub use train::{evaluate, train, train_with, TrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Width of the penultimate layer of the digit model.
pub const EMBEDDING_DIM: usize = 128;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
}

/// Layer sizes. Convolutions are stride 1 without padding; each is followed
/// by non-overlapping 2×2 max-pooling that drops an odd trailing row/column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_side: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
    pub classes: usize,
}

impl Architecture {
    /// The 28×28 digit recognizer: 8 and 16 filters of 3×3, 128 hidden units,
    /// 10 classes.
    pub fn digit() -> Self {
        Self {
            input_side: 28,
            convs: vec![
                ConvSpec {
                    filters: 8,
                    kernel: 3,
                },
                ConvSpec {
                    filters: 16,
                    kernel: 3,
                },
            ],
            hidden: EMBEDDING_DIM,
            classes: NUM_CLASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.convs.is_empty() || self.hidden == 0 || self.classes < 2 {
            return Err(Error::Input(format!("degenerate architecture {self:?}")));
        }
        let mut side = self.input_side;
        for conv in &self.convs {
            if conv.filters == 0 || conv.kernel == 0 || conv.kernel > side {
                return Err(Error::Input(format!(
                    "convolution {conv:?} does not fit a {side}×{side} input"
                )));
            }
            // Valid convolution, then 2×2 pooling.
            side = (side + 1 - conv.kernel) / 2;
            if side == 0 {
                return Err(Error::Input(format!(
                    "architecture {self:?} pools down to nothing"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Conv {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    in_side: usize,
    /// Weights laid out as `[out][in][ky][kx]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv {
    fn out_side(&self) -> usize {
        self.in_side - self.kernel + 1
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        let is = self.in_side;
        let os = self.out_side();
        let k = self.kernel;
        let mut out = vec![0.0; self.out_ch * os * os];
        for oc in 0..self.out_ch {
            let plane = &mut out[oc * os * os..(oc + 1) * os * os];
            plane.fill(self.bias[oc]);
            for ic in 0..self.in_ch {
                let src = &input[ic * is * is..(ic + 1) * is * is];
                for ky in 0..k {
                    for kx in 0..k {
                        let w = self.weights[((oc * self.in_ch + ic) * k + ky) * k + kx];
                        for oy in 0..os {
                            let row = &src[(oy + ky) * is + kx..(oy + ky) * is + kx + os];
                            let dst = &mut plane[oy * os..(oy + 1) * os];
                            for (d, &s) in dst.iter_mut().zip(row) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients into `grad` and returns the gradient
    /// with respect to the input when `want_input` is set.
    fn backward(
        &self,
        input: &[f64],
        grad_out: &[f64],
        grad: &mut Conv,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let is = self.in_side;
        let os = self.out_side();
        let k = self.kernel;
        let mut grad_in = want_input.then(|| vec![0.0; self.in_ch * is * is]);
        for oc in 0..self.out_ch {
            let g_plane = &grad_out[oc * os * os..(oc + 1) * os * os];
            grad.bias[oc] += g_plane.iter().sum::<f64>();
            for ic in 0..self.in_ch {
                let src = &input[ic * is * is..(ic + 1) * is * is];
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((oc * self.in_ch + ic) * k + ky) * k + kx;
                        let mut acc = 0.0;
                        for oy in 0..os {
                            let row = &src[(oy + ky) * is + kx..(oy + ky) * is + kx + os];
                            let g = &g_plane[oy * os..(oy + 1) * os];
                            acc += row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                        }
                        grad.weights[widx] += acc;
                        if let Some(gi) = grad_in.as_mut() {
                            let w = self.weights[widx];
                            let gi = &mut gi[ic * is * is..(ic + 1) * is * is];
                            for oy in 0..os {
                                let dst = &mut gi[(oy + ky) * is + kx..(oy + ky) * is + kx + os];
                                let g = &g_plane[oy * os..(oy + 1) * os];
                                for (d, &gv) in dst.iter_mut().zip(g) {
                                    *d += w * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `[out][in]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    fn backward(&self, input: &[f64], grad_out: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.inputs];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for ((gw, gi), (&w, &x)) in grow
                .iter_mut()
                .zip(grad_in.iter_mut())
                .zip(row.iter().zip(input))
            {
                *gw += g * x;
                *gi += g * w;
            }
        }
        grad_in
    }
}

/// Token embedding: the activations of the penultimate layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub class_probs: Vec<f64>,
    pub embedding: Embedding,
}

impl Forward {
    /// Most probable class; ties go to the lower class.
    pub fn argmax(&self) -> usize {
        argmax(&self.class_probs)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Intermediate activations kept for back-propagation.
struct Trace {
    /// Input of each convolution stage.
    stage_in: Vec<Vec<f64>>,
    /// Post-ReLU convolution output of each stage.
    activated: Vec<Vec<f64>>,
    /// For each pooled cell, the flat index of the winning activation.
    pool_argmax: Vec<Vec<usize>>,
    flat: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    convs: Vec<Conv>,
    hidden: Dense,
    output: Dense,
}

impl Model {
    /// Fresh model with weights drawn uniformly from `[-r, r]`,
    /// `r = sqrt(6 / (fan_in + fan_out))`, and zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(arch);
        for conv in &mut model.convs {
            let fan_in = conv.in_ch * conv.kernel * conv.kernel;
            let fan_out = conv.out_ch * conv.kernel * conv.kernel;
            glorot(&mut rng, &mut conv.weights, fan_in, fan_out);
        }
        let (i, o) = (model.hidden.inputs, model.hidden.outputs);
        glorot(&mut rng, &mut model.hidden.weights, i, o);
        let (i, o) = (model.output.inputs, model.output.outputs);
        glorot(&mut rng, &mut model.output.weights, i, o);
        Ok(model)
    }

    pub fn digit(seed: u64) -> Self {
        Self::new(Architecture::digit(), seed).expect("digit architecture is valid")
    }

    /// A model of the given shape with every parameter zero. Also used as a
    /// gradient accumulator.
    pub(crate) fn zeros(arch: Architecture) -> Self {
        let mut convs = Vec::with_capacity(arch.convs.len());
        let mut side = arch.input_side;
        let mut channels = 1;
        for spec in &arch.convs {
            let k = spec.kernel;
            convs.push(Conv {
                in_ch: channels,
                out_ch: spec.filters,
                kernel: k,
                in_side: side,
                weights: vec![0.0; spec.filters * channels * k * k],
                bias: vec![0.0; spec.filters],
            });
            side = (side + 1 - k) / 2;
            channels = spec.filters;
        }
        let flat = channels * side * side;
        let hidden = Dense {
            inputs: flat,
            outputs: arch.hidden,
            weights: vec![0.0; flat * arch.hidden],
            bias: vec![0.0; arch.hidden],
        };
        let output = Dense {
            inputs: arch.hidden,
            outputs: arch.classes,
            weights: vec![0.0; arch.hidden * arch.classes],
            bias: vec![0.0; arch.classes],
        };
        Self {
            arch,
            convs,
            hidden,
            output,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.hidden
    }

    fn check_input(&self, image: &Raster) -> Result<()> {
        let side = self.arch.input_side;
        if image.width() != side || image.height() != side {
            return Err(Error::Input(format!(
                "image is {}×{}, model expects {side}×{side}",
                image.width(),
                image.height()
            )));
        }
        Ok(())
    }

    fn trace(&self, image: &Raster) -> Result<Trace> {
        self.check_input(image)?;
        let mut current: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
        let mut stage_in = Vec::with_capacity(self.convs.len());
        let mut activated = Vec::with_capacity(self.convs.len());
        let mut pool_argmax = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let mut out = conv.forward(&current);
            for v in &mut out {
                *v = v.max(0.0);
            }
            let (pooled, winners) = max_pool(&out, conv.out_ch, conv.out_side());
            stage_in.push(std::mem::replace(&mut current, pooled));
            activated.push(out);
            pool_argmax.push(winners);
        }
        let mut hidden = self.hidden.forward(&current);
        for v in &mut hidden {
            *v = v.max(0.0);
        }
        let logits = self.output.forward(&hidden);
        Ok(Trace {
            stage_in,
            activated,
            pool_argmax,
            flat: current,
            hidden,
            logits,
        })
    }

    pub fn forward(&self, image: &Raster) -> Result<Forward> {
        let trace = self.trace(image)?;
        Ok(Forward {
            class_probs: softmax(&trace.logits),
            embedding: Embedding(trace.hidden),
        })
    }

    pub fn embed(&self, image: &Raster) -> Result<Embedding> {
        Ok(self.forward(image)?.embedding)
    }

    pub fn predict(&self, image: &Raster) -> Result<usize> {
        Ok(self.forward(image)?.argmax())
    }

    /// Cross-entropy of the softmax output against `label`.
    pub fn loss(&self, image: &Raster, label: usize) -> Result<f64> {
        let trace = self.trace(image)?;
        self.check_label(label)?;
        Ok(cross_entropy(&trace.logits, label))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.arch.classes {
            return Err(Error::Input(format!(
                "label {label} outside 0..{}",
                self.arch.classes
            )));
        }
        Ok(())
    }

    /// Loss and its gradient with respect to every parameter. The gradient is
    /// returned as a model of the same shape.
    pub fn loss_and_gradient(&self, image: &Raster, label: usize) -> Result<(f64, Model)> {
        let mut grad = Model::zeros(self.arch.clone());
        let loss = self.accumulate_gradient(image, label, &mut grad)?;
        Ok((loss, grad))
    }

    pub(crate) fn accumulate_gradient(
        &self,
        image: &Raster,
        label: usize,
        grad: &mut Model,
    ) -> Result<f64> {
        self.check_label(label)?;
        let trace = self.trace(image)?;
        let loss = cross_entropy(&trace.logits, label);

        let mut delta = softmax(&trace.logits);
        delta[label] -= 1.0;
        let mut g_hidden = self.output.backward(&trace.hidden, &delta, &mut grad.output);
        for (g, &h) in g_hidden.iter_mut().zip(&trace.hidden) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        let mut g_flat = self.hidden.backward(&trace.flat, &g_hidden, &mut grad.hidden);

        for stage in (0..self.convs.len()).rev() {
            let conv = &self.convs[stage];
            let act = &trace.activated[stage];
            let mut g_act = vec![0.0; act.len()];
            for (&winner, &g) in trace.pool_argmax[stage].iter().zip(&g_flat) {
                if act[winner] > 0.0 {
                    g_act[winner] += g;
                }
            }
            let want_input = stage > 0;
            match conv.backward(
                &trace.stage_in[stage],
                &g_act,
                &mut grad.convs[stage],
                want_input,
            ) {
                Some(g_in) => g_flat = g_in,
                None => break,
            }
        }
        Ok(loss)
    }

    pub(crate) fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for conv in &self.convs {
            out.push(&conv.weights);
            out.push(&conv.bias);
        }
        out.push(&self.hidden.weights);
        out.push(&self.hidden.bias);
        out.push(&self.output.weights);
        out.push(&self.output.bias);
        out
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for conv in &mut self.convs {
            out.push(&mut conv.weights);
            out.push(&mut conv.bias);
        }
        out.push(&mut self.hidden.weights);
        out.push(&mut self.hidden.bias);
        out.push(&mut self.output.weights);
        out.push(&mut self.output.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// All parameters flattened in layer order (weights before biases).
    pub fn params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn param(&self, index: usize) -> f64 {
        let mut i = index;
        for s in self.param_slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let mut i = index;
        for s in self.param_slices_mut() {
            if i < s.len() {
                s[i] = value;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

fn glorot(rng: &mut ChaCha8Rng, weights: &mut [f64], fan_in: usize, fan_out: usize) {
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in weights {
        *w = rng.gen_range(-r..=r);
    }
}

fn max_pool(input: &[f64], channels: usize, side: usize) -> (Vec<f64>, Vec<usize>) {
    let ps = side / 2;
    let mut pooled = Vec::with_capacity(channels * ps * ps);
    let mut winners = Vec::with_capacity(channels * ps * ps);
    for c in 0..channels {
        let base = c * side * side;
        for py in 0..ps {
            for px in 0..ps {
                let mut best = base + (2 * py) * side + 2 * px;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * py + dy) * side + 2 * px + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                pooled.push(input[best]);
                winners.push(best);
            }
        }
    }
    (pooled, winners)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}
