//! Learned user selection.
//!
//! A fully connected network maps the normalised slot state (weights,
//! effective channels, optionally beam indices) to one sigmoid output per
//! user. Outputs at or above one half mark a candidate; an over-full candidate
//! set is pruned by dropping the lowest interference-free score until `n_max`
//! remain, and an empty one falls back to the single best-scoring user.
//!
//! Training data comes from episodes where the greedy scheduler acts; its
//! selection in every slot is the 0/1 target vector.

use crate::error::{ModelError, ScheduleError};
use crate::precoder::SelectionResult;
use crate::protocol::{episode_seed, SeedStream, Simulator};
use crate::schedulers::{evaluate_or_infeasible, Greedy, SchedulerContext, UserSelector};
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

// ---------------------------------------------------------------------------
// Features

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelFeature {
    None,
    /// `|u_ii|`.
    Diagonal,
    /// `|u_ij|` for all pairs, row-major.
    Whole,
    /// `Re u_ij` then `Im u_ij` for all pairs, row-major.
    RealImag,
}

/// Which blocks make up the network input, in the fixed order
/// `[weights | channels | beams]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputMode {
    pub weights: bool,
    pub channels: ChannelFeature,
    pub beams: bool,
}

impl InputMode {
    pub const DEFAULT: InputMode = InputMode {
        weights: true,
        channels: ChannelFeature::Whole,
        beams: false,
    };

    /// Block lengths for `users` users, zero-length blocks omitted.
    pub fn block_lengths(&self, users: usize) -> Vec<usize> {
        let mut blocks = Vec::new();
        if self.weights {
            blocks.push(users);
        }
        if self.channels != ChannelFeature::None {
            blocks.push(self.channel_len(users));
        }
        if self.beams {
            blocks.push(users);
        }
        blocks
    }

    pub fn dim(&self, users: usize) -> usize {
        self.block_lengths(users).iter().sum()
    }

    /// Per-block maps matching [`InputMode::block_lengths`]. With `log`, the
    /// weight and channel-magnitude blocks are log-compressed.
    pub fn block_scales(&self, log: bool) -> Vec<BlockScale> {
        let pick = |yes: bool| {
            if log && yes {
                BlockScale::Log10
            } else {
                BlockScale::Linear
            }
        };
        let mut scales = Vec::new();
        if self.weights {
            scales.push(pick(true));
        }
        if self.channels != ChannelFeature::None {
            scales.push(pick(self.channels != ChannelFeature::RealImag));
        }
        if self.beams {
            scales.push(BlockScale::Linear);
        }
        scales
    }

    pub fn channel_len(&self, users: usize) -> usize {
        match self.channels {
            ChannelFeature::None => 0,
            ChannelFeature::Diagonal => users,
            ChannelFeature::Whole => users * users,
            ChannelFeature::RealImag => 2 * users * users,
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.weights {
            parts.push("W");
        }
        match self.channels {
            ChannelFeature::None => {}
            ChannelFeature::Diagonal => parts.push("C(D)"),
            ChannelFeature::Whole => parts.push("C(W)"),
            ChannelFeature::RealImag => parts.push("C(R/I)"),
        }
        if self.beams {
            parts.push("B");
        }
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for InputMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut mode = InputMode {
            weights: false,
            channels: ChannelFeature::None,
            beams: false,
        };
        let err = || ModelError::InputMode(s.to_string());
        for token in s.split('+').map(str::trim) {
            match token.to_ascii_uppercase().as_str() {
                "W" if !mode.weights => mode.weights = true,
                "B" if !mode.beams => mode.beams = true,
                c if mode.channels == ChannelFeature::None => {
                    mode.channels = match c {
                        "C(D)" => ChannelFeature::Diagonal,
                        "C(W)" => ChannelFeature::Whole,
                        "C(R/I)" => ChannelFeature::RealImag,
                        _ => return Err(err()),
                    }
                }
                _ => return Err(err()),
            }
        }
        if mode.dim(1) == 0 {
            return Err(err());
        }
        Ok(mode)
    }
}

impl Serialize for InputMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for InputMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Source column of every feature after relabelling users so that new user
/// `k` is old user `perm[k]`.
pub fn permuted_columns(mode: InputMode, n: usize, perm: &[usize]) -> Vec<usize> {
    let mut cols = Vec::with_capacity(mode.dim(n));
    let mut at = 0;
    if mode.weights {
        cols.extend(perm.iter().map(|&p| at + p));
        at += n;
    }
    let pairs = |at: usize, cols: &mut Vec<usize>| {
        for &a in perm {
            cols.extend(perm.iter().map(|&b| at + a * n + b));
        }
    };
    match mode.channels {
        ChannelFeature::None => {}
        ChannelFeature::Diagonal => cols.extend(perm.iter().map(|&p| at + p)),
        ChannelFeature::Whole => pairs(at, &mut cols),
        ChannelFeature::RealImag => {
            pairs(at, &mut cols);
            pairs(at + n * n, &mut cols);
        }
    }
    at += mode.channel_len(n);
    if mode.beams {
        cols.extend(perm.iter().map(|&p| at + p));
    }
    cols
}

/// Raw (unnormalised) network input for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub mode: InputMode,
    pub values: Vec<f64>,
}

pub fn extract_features(ctx: &SchedulerContext<'_>, mode: InputMode) -> FeatureVector {
    let n = ctx.num_users();
    let u = &ctx.channels.u;
    let mut values = Vec::with_capacity(mode.dim(n));
    if mode.weights {
        values.extend_from_slice(ctx.weights);
    }
    match mode.channels {
        ChannelFeature::None => {}
        ChannelFeature::Diagonal => values.extend((0..n).map(|i| u[(i, i)].norm())),
        ChannelFeature::Whole => values.extend(u.as_slice().iter().map(|z| z.norm())),
        ChannelFeature::RealImag => {
            values.extend(u.as_slice().iter().map(|z| z.re));
            values.extend(u.as_slice().iter().map(|z| z.im));
        }
    }
    if mode.beams {
        values.extend(ctx.beams.indices.iter().map(|&k| k as f64));
    }
    FeatureVector { mode, values }
}

/// Values below this are clamped before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-30;

/// Pointwise map applied to a block before standardisation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockScale {
    #[default]
    Linear,
    /// `log10(max(x, LOG_FLOOR))`; for positive, heavy-tailed blocks.
    Log10,
}

impl BlockScale {
    pub fn map(self, x: f64) -> f64 {
        match self {
            BlockScale::Linear => x,
            BlockScale::Log10 => x.max(LOG_FLOOR).log10(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub offset: usize,
    pub len: usize,
    #[serde(default)]
    pub scale: BlockScale,
    pub mean: f64,
    pub std: f64,
}

/// Separate zero-mean, unit-variance scaling per input block, after an
/// optional per-block logarithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub blocks: Vec<BlockStats>,
}

impl Normalizer {
    /// Fits block statistics over the given rows of a row-major `f32` matrix.
    pub fn fit(
        features: &[f32],
        dim: usize,
        rows: impl Iterator<Item = usize> + Clone,
        block_lengths: &[usize],
        scales: &[BlockScale],
    ) -> Self {
        assert_eq!(block_lengths.len(), scales.len());
        let mut blocks = Vec::with_capacity(block_lengths.len());
        let mut offset = 0;
        for (&len, &scale) in block_lengths.iter().zip(scales) {
            let (mut sum, mut count) = (0.0f64, 0usize);
            for r in rows.clone() {
                for &v in &features[r * dim + offset..r * dim + offset + len] {
                    sum += scale.map(v as f64);
                    count += 1;
                }
            }
            let mean = if count > 0 { sum / count as f64 } else { 0.0 };
            let mut var = 0.0;
            for r in rows.clone() {
                for &v in &features[r * dim + offset..r * dim + offset + len] {
                    var += (scale.map(v as f64) - mean).powi(2);
                }
            }
            let std = if count > 0 {
                (var / count as f64).sqrt()
            } else {
                0.0
            };
            blocks.push(BlockStats {
                offset,
                len,
                scale,
                mean,
                std: if std > 0.0 && std.is_finite() {
                    std
                } else {
                    1.0
                },
            });
            offset += len;
        }
        Self { blocks }
    }

    pub fn identity(block_lengths: &[usize]) -> Self {
        let mut offset = 0;
        let blocks = block_lengths
            .iter()
            .map(|&len| {
                let b = BlockStats {
                    offset,
                    len,
                    scale: BlockScale::Linear,
                    mean: 0.0,
                    std: 1.0,
                };
                offset += len;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.len).sum()
    }

    pub fn apply(&self, row: &mut [f64]) {
        for b in &self.blocks {
            for v in &mut row[b.offset..b.offset + b.len] {
                *v = (b.scale.map(*v) - b.mean) / b.std;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Network

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in x out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Self {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// ReLU hidden layers followed by a sigmoid output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorNetwork {
    pub layers: Vec<Dense>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross entropy of `sigmoid(z)` against `y`, computed from the logit.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl SelectorNetwork {
    /// `sizes = [input, hidden..., output]`. Hidden layers use He-uniform
    /// initialisation, the output layer Glorot-uniform; biases start at zero.
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        assert!(
            sizes.len() >= 2,
            "network needs an input and an output size"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = if l == last {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                } else {
                    (6.0 / fan_in as f64).sqrt()
                };
                Dense {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| {
                        rng.random_range(-limit..limit)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.bias.len()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            if l != last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        a
    }

    pub fn probabilities(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.logits(x).mapv_into(sigmoid)
    }

    /// Mean per-element BCE over the batch and its gradient for every layer.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
    ) -> (f64, Vec<Dense>) {
        let last = self.layers.len() - 1;
        let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            inputs.push(a);
            if l != last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        let logits = a;
        let count = logits.len() as f64;
        let loss = Zip::from(&logits)
            .and(&y)
            .fold(0.0, |acc, &z, &t| acc + bce_with_logit(z, t))
            / count;

        let mut delta = Zip::from(&logits)
            .and(&y)
            .map_collect(|&z, &t| (sigmoid(z) - t) / count);
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = &inputs[l];
            let g = Dense {
                weights: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            };
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights.t());
                // The stored input of layer l is the ReLU output of layer l-1;
                // its positivity is the ReLU derivative.
                Zip::from(&mut back).and(input).for_each(|d, &act| {
                    if act <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(g);
        }
        grads.reverse();
        (loss, grads)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer: weights row-major, then bias.
    pub fn flat_parameters(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_parameters(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.parameter_count());
        let mut it = values.iter().copied();
        for layer in &mut self.layers {
            layer
                .weights
                .iter_mut()
                .for_each(|w| *w = it.next().unwrap());
            layer.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Flattens per-layer arrays in the same order as [`SelectorNetwork::flat_parameters`].
pub fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter().copied());
        out.extend(l.bias.iter().copied());
    }
    out
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl Adam {
    fn new(net: &SelectorNetwork, opts: &TrainOptions) -> Self {
        Self {
            lr: opts.learning_rate,
            beta1: opts.beta1,
            beta2: opts.beta2,
            eps: opts.epsilon,
            step: 0,
            m: net.layers.iter().map(Dense::zeros_like).collect(),
            v: net.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    fn update(&mut self, net: &mut SelectorNetwork, grads: &[Dense]) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let lr_t = self.lr * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step));
        let rule = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr_t * *m / (v.sqrt() + eps);
        };
        for (((layer, m), v), g) in net
            .layers
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(grads)
        {
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(rule);
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(rule);
        }
    }
}

// ---------------------------------------------------------------------------
// Model = network + normalisation + input layout

const MODEL_MAGIC: &[u8; 8] = b"HBSELNN1";
const DATASET_MAGIC: &[u8; 8] = b"HBSELDS1";

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorModel {
    pub mode: InputMode,
    pub n_users: usize,
    pub normalizer: Normalizer,
    pub network: SelectorNetwork,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    n_users: usize,
    input_mode: InputMode,
    layer_sizes: Vec<usize>,
    hidden_activation: String,
    output_activation: String,
    dtype: String,
    byte_order: String,
    normalization: Normalizer,
    parameter_layout: Vec<ParameterShape>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParameterShape {
    name: String,
    shape: Vec<usize>,
}

impl SelectorModel {
    pub fn new(
        mode: InputMode,
        n_users: usize,
        hidden: &[usize],
        normalizer: Normalizer,
        seed: u64,
    ) -> Self {
        let mut sizes = vec![mode.dim(n_users)];
        sizes.extend_from_slice(hidden);
        sizes.push(n_users);
        assert_eq!(
            normalizer.dim(),
            sizes[0],
            "normaliser does not match input layout"
        );
        Self {
            mode,
            n_users,
            normalizer,
            network: SelectorNetwork::new(&sizes, seed),
        }
    }

    /// Sigmoid outputs for one raw feature vector.
    pub fn predict(&self, features: &FeatureVector) -> Result<Vec<f64>, ModelError> {
        let dim = self.network.input_dim();
        if features.values.len() != dim || features.mode != self.mode {
            return Err(ModelError::InputDimension {
                expected: dim,
                got: features.values.len(),
            });
        }
        let mut row = features.values.clone();
        self.normalizer.apply(&mut row);
        let x = ArrayView2::from_shape((1, dim), &row).expect("row shape");
        Ok(self.network.probabilities(x).into_raw_vec_and_offset().0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<(), ModelError> {
        let mut layout = Vec::new();
        for (l, layer) in self.network.layers.iter().enumerate() {
            layout.push(ParameterShape {
                name: format!("layer{l}.weight"),
                shape: layer.weights.shape().to_vec(),
            });
            layout.push(ParameterShape {
                name: format!("layer{l}.bias"),
                shape: layer.bias.shape().to_vec(),
            });
        }
        let header = ModelHeader {
            format_version: 1,
            n_users: self.n_users,
            input_mode: self.mode,
            layer_sizes: self.network.sizes(),
            hidden_activation: "relu".into(),
            output_activation: "sigmoid".into(),
            dtype: "f64".into(),
            byte_order: "little-endian".into(),
            normalization: self.normalizer.clone(),
            parameter_layout: layout,
        };
        let json = serde_json::to_vec(&header).map_err(|e| ModelError::Format(e.to_string()))?;
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for v in self.network.flat_parameters() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self, ModelError> {
        let header: ModelHeader = read_header(input, MODEL_MAGIC)?;
        if header.dtype != "f64" || header.byte_order != "little-endian" {
            return Err(ModelError::Format(format!(
                "unsupported parameter encoding {} / {}",
                header.dtype, header.byte_order
            )));
        }
        if header.hidden_activation != "relu" || header.output_activation != "sigmoid" {
            return Err(ModelError::Format(
                "unsupported activation functions".into(),
            ));
        }
        let sizes = &header.layer_sizes;
        if sizes.len() < 2
            || sizes[0] != header.input_mode.dim(header.n_users)
            || *sizes.last().unwrap() != header.n_users
            || header.normalization.dim() != sizes[0]
        {
            return Err(ModelError::Format(
                "layer sizes do not match the input layout".into(),
            ));
        }
        let mut network = SelectorNetwork::new(sizes, 0);
        let mut values = vec![0.0; network.parameter_count()];
        let mut buf = [0u8; 8];
        for v in &mut values {
            input.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        network.set_flat_parameters(&values);
        Ok(Self {
            mode: header.input_mode,
            n_users: header.n_users,
            normalizer: header.normalization,
            network,
        })
    }
}

fn read_header<R: Read, T: for<'de> Deserialize<'de>>(
    input: &mut R,
    magic: &[u8; 8],
) -> Result<T, ModelError> {
    let mut m = [0u8; 8];
    input.read_exact(&mut m)?;
    if &m != magic {
        return Err(ModelError::Format("bad magic bytes".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(ModelError::Format("header too large".into()));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json)?;
    serde_json::from_slice(&json).map_err(|e| ModelError::Format(e.to_string()))
}

// ---------------------------------------------------------------------------
// Inference

/// Keeps the `n_max` candidates with the largest scores by repeatedly
/// removing the lowest-scoring one; among equal scores the higher index goes
/// first. Returns the survivors in ascending order.
pub fn prune_candidates(candidates: &[usize], scores: &[f64], n_max: usize) -> Vec<usize> {
    let mut set = candidates.to_vec();
    set.sort_unstable();
    while set.len() > n_max {
        let (pos, _) = set
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
            .expect("non-empty");
        set.remove(pos);
    }
    set
}

/// Rounds network outputs into a set, enforces the cardinality cap and runs ZF.
/// Sets whose gain matrix cannot be inverted lose their lowest-scoring user
/// until inversion succeeds.
pub fn select_from_outputs(outputs: &[f64], ctx: &SchedulerContext<'_>) -> SelectionResult {
    let candidates: Vec<usize> = (0..outputs.len()).filter(|&i| outputs[i] >= 0.5).collect();
    let scores = ctx.scores();
    let mut set = if candidates.is_empty() {
        vec![ctx.ranked_users()[0]]
    } else if candidates.len() > ctx.n_max {
        prune_candidates(&candidates, &scores, ctx.n_max)
    } else {
        candidates
    };
    // A singular set serves nobody; shed the weakest users until ZF succeeds.
    while set.len() > 1 {
        if let Ok(r) = ctx.channels.evaluate_set(&set, ctx.weights) {
            return r;
        }
        set = prune_candidates(&set, &scores, set.len() - 1);
    }
    evaluate_or_infeasible(ctx, set)
}

pub fn infer_selection(
    model: &SelectorModel,
    features: &FeatureVector,
    ctx: &SchedulerContext<'_>,
) -> Result<SelectionResult, ModelError> {
    if model.n_users != ctx.num_users() {
        return Err(ModelError::LengthMismatch(model.n_users, ctx.num_users()));
    }
    let outputs = model.predict(features)?;
    Ok(select_from_outputs(&outputs, ctx))
}

/// The learned scheduler as a [`UserSelector`]; timing covers feature
/// extraction, the forward pass and ZF.
pub struct MlSelector {
    pub model: SelectorModel,
    pub label: String,
}

impl MlSelector {
    pub fn new(model: SelectorModel) -> Self {
        Self {
            model,
            label: "ml".into(),
        }
    }
}

impl UserSelector for MlSelector {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn select(&self, ctx: &SchedulerContext<'_>) -> Result<SelectionResult, ScheduleError> {
        let features = extract_features(ctx, self.model.mode);
        Ok(infer_selection(&self.model, &features, ctx)?)
    }
}

/// `1 - sum |pred - target| / I`.
pub fn element_accuracy(predicted: &[u8], target: &[u8]) -> Result<f64, ModelError> {
    if predicted.len() != target.len() {
        return Err(ModelError::LengthMismatch(predicted.len(), target.len()));
    }
    if predicted.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mismatches = predicted.iter().zip(target).filter(|(a, b)| a != b).count();
    Ok(1.0 - mismatches as f64 / predicted.len() as f64)
}

// ---------------------------------------------------------------------------
// Dataset

/// Raw features (row-major `f32`) and greedy 0/1 targets, one row per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub mode: InputMode,
    pub n_users: usize,
    pub n_max: usize,
    pub episodes: usize,
    pub steps: usize,
    pub features: Vec<f32>,
    pub targets: Vec<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    input_mode: InputMode,
    n_users: usize,
    n_max: usize,
    episodes: usize,
    steps: usize,
    samples: usize,
    feature_dim: usize,
    feature_dtype: String,
    byte_order: String,
}

impl TrainingSet {
    pub fn dim(&self) -> usize {
        self.mode.dim(self.n_users)
    }

    pub fn len(&self) -> usize {
        self.targets.len() / self.n_users
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn feature_row(&self, r: usize) -> &[f32] {
        let d = self.dim();
        &self.features[r * d..(r + 1) * d]
    }

    pub fn target_row(&self, r: usize) -> &[u8] {
        &self.targets[r * self.n_users..(r + 1) * self.n_users]
    }

    /// Sample ranges `(train, holdout)`; the holdout is the last
    /// `round(fraction * episodes)` episodes, leaving at least one for training.
    pub fn split(&self, holdout_fraction: f64) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let held = ((self.episodes as f64 * holdout_fraction).round() as usize)
            .min(self.episodes.saturating_sub(1));
        let cut = (self.episodes - held) * self.steps;
        (0..cut, cut..self.len())
    }

    pub fn fit_normalizer(&self, rows: std::ops::Range<usize>, log: bool) -> Normalizer {
        Normalizer::fit(
            &self.features,
            self.dim(),
            rows,
            &self.mode.block_lengths(self.n_users),
            &self.mode.block_scales(log),
        )
    }

    /// Normalised `f64` batch of the given rows.
    pub fn batch(&self, rows: &[usize], normalizer: &Normalizer) -> (Array2<f64>, Array2<f64>) {
        self.batch_relabelled(rows, normalizer, None)
    }

    /// Like [`TrainingSet::batch`], optionally relabelling the users of every
    /// sample by an independent random permutation.
    pub fn batch_relabelled(
        &self,
        rows: &[usize],
        normalizer: &Normalizer,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, Array2<f64>) {
        let n = self.n_users;
        let d = self.dim();
        let mut x = Array2::zeros((rows.len(), d));
        let mut y = Array2::zeros((rows.len(), n));
        let mut perm: Vec<usize> = (0..n).collect();
        for (b, &r) in rows.iter().enumerate() {
            let features = self.feature_row(r);
            let targets = self.target_row(r);
            let mut xr = x.row_mut(b);
            let xs = xr.as_slice_mut().expect("contiguous row");
            match rng.as_deref_mut() {
                Some(rng) => {
                    perm.shuffle(rng);
                    let columns = permuted_columns(self.mode, n, &perm);
                    for (dst, &c) in xs.iter_mut().zip(&columns) {
                        *dst = features[c] as f64;
                    }
                    for (dst, &k) in y.row_mut(b).iter_mut().zip(&perm) {
                        *dst = targets[k] as f64;
                    }
                }
                None => {
                    for (dst, &src) in xs.iter_mut().zip(features) {
                        *dst = src as f64;
                    }
                    for (dst, &t) in y.row_mut(b).iter_mut().zip(targets) {
                        *dst = t as f64;
                    }
                }
            }
            normalizer.apply(xs);
        }
        (x, y)
    }

    /// Appends datasets of consecutive episode ranges.
    pub fn concat(parts: Vec<TrainingSet>) -> Result<TrainingSet, ModelError> {
        let mut iter = parts.into_iter();
        let mut out = iter.next().ok_or(ModelError::EmptyDataset)?;
        for p in iter {
            if (p.mode, p.n_users, p.n_max, p.steps)
                != (out.mode, out.n_users, out.n_max, out.steps)
            {
                return Err(ModelError::Format(
                    "cannot join datasets with different layouts".into(),
                ));
            }
            out.episodes += p.episodes;
            out.features.extend_from_slice(&p.features);
            out.targets.extend_from_slice(&p.targets);
        }
        Ok(out)
    }

    /// Same samples under a different input mode whose blocks can be read off
    /// this one (dropping blocks, or `C(D)` from `C(W)`).
    pub fn project(&self, mode: InputMode) -> Result<TrainingSet, ModelError> {
        let n = self.n_users;
        let src_dim = self.dim();
        let mut offset = 0;
        let mut weights_at = None;
        let mut channels_at = None;
        let mut beams_at = None;
        if self.mode.weights {
            weights_at = Some(offset);
            offset += n;
        }
        if self.mode.channels != ChannelFeature::None {
            channels_at = Some(offset);
            offset += self.mode.channel_len(n);
        }
        if self.mode.beams {
            beams_at = Some(offset);
        }
        let unsupported =
            || ModelError::InputMode(format!("{mode} cannot be derived from {}", self.mode));
        // Source column for every target column.
        let mut columns = Vec::with_capacity(mode.dim(n));
        if mode.weights {
            let at = weights_at.ok_or_else(unsupported)?;
            columns.extend(at..at + n);
        }
        match (mode.channels, self.mode.channels) {
            (ChannelFeature::None, _) => {}
            (ChannelFeature::Diagonal, ChannelFeature::Whole) => {
                let at = channels_at.unwrap();
                columns.extend((0..n).map(|i| at + i * n + i));
            }
            (want, have) if want == have => {
                let at = channels_at.unwrap();
                columns.extend(at..at + mode.channel_len(n));
            }
            _ => return Err(unsupported()),
        }
        if mode.beams {
            let at = beams_at.ok_or_else(unsupported)?;
            columns.extend(at..at + n);
        }
        let rows = self.len();
        let mut features = Vec::with_capacity(rows * columns.len());
        for r in 0..rows {
            let row = &self.features[r * src_dim..(r + 1) * src_dim];
            features.extend(columns.iter().map(|&c| row[c]));
        }
        Ok(TrainingSet {
            mode,
            n_users: n,
            n_max: self.n_max,
            episodes: self.episodes,
            steps: self.steps,
            features,
            targets: self.targets.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = DatasetHeader {
            format_version: 1,
            input_mode: self.mode,
            n_users: self.n_users,
            n_max: self.n_max,
            episodes: self.episodes,
            steps: self.steps,
            samples: self.len(),
            feature_dim: self.dim(),
            feature_dtype: "f32".into(),
            byte_order: "little-endian".into(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| ModelError::Format(e.to_string()))?;
        f.write_all(DATASET_MAGIC)?;
        f.write_all(&(json.len() as u64).to_le_bytes())?;
        f.write_all(&json)?;
        for v in &self.features {
            f.write_all(&v.to_le_bytes())?;
        }
        f.write_all(&self.targets)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let h: DatasetHeader = read_header(&mut f, DATASET_MAGIC)?;
        if h.feature_dim != h.input_mode.dim(h.n_users) || h.samples != h.episodes * h.steps {
            return Err(ModelError::Format("dataset header is inconsistent".into()));
        }
        let mut raw = vec![0u8; h.samples * h.feature_dim * 4];
        f.read_exact(&mut raw)?;
        let features = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut targets = vec![0u8; h.samples * h.n_users];
        f.read_exact(&mut targets)?;
        Ok(Self {
            mode: h.input_mode,
            n_users: h.n_users,
            n_max: h.n_max,
            episodes: h.episodes,
            steps: h.steps,
            features,
            targets,
        })
    }
}

/// Runs `episodes` greedy-driven episodes of `stream` and records every slot.
pub fn generate_dataset(
    sim: &Simulator,
    mode: InputMode,
    stream: SeedStream,
    episodes: std::ops::Range<usize>,
) -> Result<TrainingSet, crate::error::SimError> {
    let cfg = &sim.config;
    let n = cfg.num_users;
    let count = episodes.len();
    let mut features = Vec::with_capacity(count * cfg.steps * mode.dim(n));
    let mut targets = Vec::with_capacity(count * cfg.steps * n);
    for e in episodes {
        let seed = episode_seed(cfg.seed, stream, e);
        sim.run_episode_observed(e, seed, &Greedy, false, &mut |view| {
            let f = extract_features(view.ctx, mode);
            features.extend(f.values.iter().map(|&v| v as f32));
            let mut target = vec![0u8; n];
            for &i in &view.selection.selected {
                target[i] = 1;
            }
            targets.extend_from_slice(&target);
        })?;
    }
    Ok(TrainingSet {
        mode,
        n_users: n,
        n_max: cfg.n_max,
        episodes: count,
        steps: cfg.steps,
        features,
        targets,
    })
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Relabel users by a fresh random permutation in every training sample.
    pub permute_users: bool,
}

impl TrainOptions {
    pub fn from_config(ml: &crate::config::MlConfig) -> Self {
        Self {
            epochs: ml.epochs,
            learning_rate: ml.learning_rate,
            beta1: ml.beta1,
            beta2: ml.beta2,
            epsilon: ml.epsilon,
            batch_size: ml.batch_size,
            seed: ml.seed,
            permute_users: ml.permute_users,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when there is no holdout split.
    pub holdout_loss: f64,
    pub holdout_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

/// Mean BCE and element accuracy of rounded outputs over `rows`.
pub fn evaluate_rows(
    model: &SelectorModel,
    data: &TrainingSet,
    rows: std::ops::Range<usize>,
) -> (f64, f64) {
    if rows.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let (mut loss, mut hits, mut total) = (0.0, 0usize, 0usize);
    let chunk = 1024;
    let all: Vec<usize> = rows.collect();
    for part in all.chunks(chunk) {
        let (x, y) = data.batch(part, &model.normalizer);
        let z = model.network.logits(x.view());
        Zip::from(&z).and(&y).for_each(|&zi, &yi| {
            loss += bce_with_logit(zi, yi);
            if ((zi >= 0.0) as u8 as f64) == yi {
                hits += 1;
            }
            total += 1;
        });
    }
    (loss / total as f64, hits as f64 / total as f64)
}

/// Minibatch Adam on mean BCE over `train_rows`.
pub fn train(
    model: &mut SelectorModel,
    data: &TrainingSet,
    train_rows: std::ops::Range<usize>,
    holdout_rows: std::ops::Range<usize>,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport, ModelError> {
    if train_rows.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if data.dim() != model.network.input_dim() || data.mode != model.mode {
        return Err(ModelError::InputDimension {
            expected: model.network.input_dim(),
            got: data.dim(),
        });
    }
    let mut adam = Adam::new(&model.network, opts);
    let mut order: Vec<usize> = train_rows.collect();
    let mut report = TrainReport::default();
    for epoch in 1..=opts.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(opts.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9));
        order.shuffle(&mut rng);
        let (mut sum, mut seen) = (0.0, 0usize);
        for batch in order.chunks(opts.batch_size) {
            let (x, y) = data.batch_relabelled(
                batch,
                &model.normalizer,
                opts.permute_users.then_some(&mut rng),
            );
            let (loss, grads) = model.network.loss_and_gradients(x.view(), y.view());
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch, loss });
            }
            adam.update(&mut model.network, &grads);
            sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = sum / seen as f64;
        if !train_loss.is_finite() || !model.network.is_finite() {
            return Err(ModelError::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        let (holdout_loss, holdout_accuracy) = evaluate_rows(model, data, holdout_rows.clone());
        let stats = EpochStats {
            epoch,
            train_loss,
            holdout_loss,
            holdout_accuracy,
        };
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}

/// Rounded network outputs for one stored row, without pruning or fallback.
pub fn predict_row(model: &SelectorModel, data: &TrainingSet, row: usize) -> Vec<u8> {
    let (x, _) = data.batch(&[row], &model.normalizer);
    model
        .network
        .logits(x.view())
        .slice(s![0, ..])
        .iter()
        .map(|&z| (z >= 0.0) as u8)
        .collect()
}
