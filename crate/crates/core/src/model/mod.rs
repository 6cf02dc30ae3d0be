//! The segmenter: 3×3 convolution (zero padding) → ReLU → 1×1 convolution.
//!
//! Gradients are written out by hand; [`gradcheck`] compares them against
//! central finite differences of the full training loss.

pub mod gradcheck;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{ImageTensor, LogitMap};
use crate::rng::{self, tag};
use crate::{Error, Result};

pub const HIDDEN: usize = 8;
pub const IN_CHANNELS: usize = 3;
pub const KERNEL: usize = 3;
pub const CONV1_LEN: usize = HIDDEN * IN_CHANNELS * KERNEL * KERNEL;

/// Network weights. `conv1_weights` is laid out `[out][in][ky][kx]`,
/// `conv2_weights` is `[class][hidden]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub conv1_weights: Vec<f64>,
    pub conv1_bias: Vec<f64>,
    pub conv2_weights: Vec<f64>,
    pub conv2_bias: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type GradientSet = ModelParams;

#[inline]
pub fn conv1_index(out: usize, inp: usize, ky: usize, kx: usize) -> usize {
    ((out * IN_CHANNELS + inp) * KERNEL + ky) * KERNEL + kx
}

impl ModelParams {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            conv1_weights: vec![0.0; CONV1_LEN],
            conv1_bias: vec![0.0; HIDDEN],
            conv2_weights: vec![0.0; num_classes * HIDDEN],
            conv2_bias: vec![0.0; num_classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.num_classes())
    }

    pub fn num_classes(&self) -> usize {
        self.conv2_bias.len()
    }

    pub fn param_count(num_classes: usize) -> usize {
        CONV1_LEN + HIDDEN + HIDDEN * num_classes + num_classes
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            &self.conv1_weights,
            &self.conv1_bias,
            &self.conv2_weights,
            &self.conv2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.conv1_weights,
            &mut self.conv1_bias,
            &mut self.conv2_weights,
            &mut self.conv2_bias,
        ]
    }

    /// Concatenation of all tensors in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn get_flat(&self, mut i: usize) -> f64 {
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_flat(&mut self, mut i: usize, value: f64) {
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index out of range")
    }

    /// Name and position of a flat index, e.g. `conv1_weights[5]`.
    pub fn describe_flat(&self, mut i: usize) -> String {
        const NAMES: [&str; 4] = ["conv1_weights", "conv1_bias", "conv2_weights", "conv2_bias"];
        for (name, t) in NAMES.iter().zip(self.tensors()) {
            if i < t.len() {
                return format!("{name}[{i}]");
            }
            i -= t.len();
        }
        "out of range".to_owned()
    }

    /// Checks tensor lengths against the fixed architecture and finiteness.
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        let expected = [CONV1_LEN, HIDDEN, c * HIDDEN, c];
        for (t, want) in self.tensors().iter().zip(expected) {
            if t.len() != want {
                return Err(Error::Shape(format!(
                    "parameter tensor has {} values, expected {want}",
                    t.len()
                )));
            }
        }
        if c == 0 {
            return Err(Error::Shape("model has no classes".into()));
        }
        if self
            .tensors()
            .iter()
            .any(|t| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Shape("non-finite parameter".into()));
        }
        Ok(())
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}

/// Uniform `±sqrt(6 / fan_in)` weights and zero biases.
pub fn init_params(seed: u64, num_classes: usize) -> ModelParams {
    let mut rng = rng::substream(seed, tag::INIT, &[num_classes as u64]);
    let mut params = ModelParams::zeros(num_classes);
    let b1 = conv1_bound();
    let b2 = conv2_bound();
    for w in &mut params.conv1_weights {
        *w = rng.random_range(-b1..b1);
    }
    for w in &mut params.conv2_weights {
        *w = rng.random_range(-b2..b2);
    }
    params
}

pub fn conv1_bound() -> f64 {
    (6.0 / (IN_CHANNELS * KERNEL * KERNEL) as f64).sqrt()
}

pub fn conv2_bound() -> f64 {
    (6.0 / HIDDEN as f64).sqrt()
}

/// Pre-activations of the hidden layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `HIDDEN` values per pixel, before ReLU.
    pub hidden: Vec<f64>,
}

fn hidden_preactivations(params: &ModelParams, img: &ImageTensor) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let data = img.data();
    let mut z = vec![0.0; h * w * HIDDEN];
    for y in 0..h {
        for x in 0..w {
            let out = &mut z[(y * w + x) * HIDDEN..(y * w + x + 1) * HIDDEN];
            out.copy_from_slice(&params.conv1_bias);
            for ky in 0..KERNEL {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let sx = x as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let px = &data[(sy as usize * w + sx as usize) * IN_CHANNELS..][..IN_CHANNELS];
                    for (o, acc) in out.iter_mut().enumerate() {
                        for (ci, &v) in px.iter().enumerate() {
                            *acc += params.conv1_weights[conv1_index(o, ci, ky, kx)] * v;
                        }
                    }
                }
            }
        }
    }
    z
}

pub fn forward_cached(params: &ModelParams, img: &ImageTensor) -> (LogitMap, Activations) {
    let c = params.num_classes();
    let z = hidden_preactivations(params, img);
    let mut logits = LogitMap::zeros(img.height(), img.width(), c);
    for (zp, out) in z.chunks_exact(HIDDEN).zip(logits.data.chunks_exact_mut(c)) {
        for (k, o) in out.iter_mut().enumerate() {
            let row = &params.conv2_weights[k * HIDDEN..(k + 1) * HIDDEN];
            *o = params.conv2_bias[k]
                + row
                    .iter()
                    .zip(zp)
                    .map(|(wk, &zh)| wk * zh.max(0.0))
                    .sum::<f64>();
        }
    }
    (logits, Activations { hidden: z })
}

pub fn forward(params: &ModelParams, img: &ImageTensor) -> LogitMap {
    forward_cached(params, img).0
}

/// Gradient of a scalar loss with respect to every parameter, given the loss
/// gradient with respect to the logits.
pub fn backward_cached(
    params: &ModelParams,
    img: &ImageTensor,
    cache: &Activations,
    upstream: &LogitMap,
) -> GradientSet {
    backward_impl(params, img, cache, upstream, false)
}

pub fn backward(params: &ModelParams, img: &ImageTensor, upstream: &LogitMap) -> GradientSet {
    let (_, cache) = forward_cached(params, img);
    backward_cached(params, img, &cache, upstream)
}

/// `corrupt_conv1` swaps the kernel axes of the conv1 gradient; used only to
/// show that the gradient check catches such mistakes.
pub(crate) fn backward_impl(
    params: &ModelParams,
    img: &ImageTensor,
    cache: &Activations,
    upstream: &LogitMap,
    corrupt_conv1: bool,
) -> GradientSet {
    let c = params.num_classes();
    let (h, w) = (img.height(), img.width());
    assert_eq!(upstream.data.len(), h * w * c, "upstream shape");
    let data = img.data();
    let mut grads = params.zeros_like();
    let mut dz = [0.0; HIDDEN];

    for p in 0..h * w {
        let up = upstream.pixel(p);
        let zp = &cache.hidden[p * HIDDEN..(p + 1) * HIDDEN];
        dz.fill(0.0);
        for (k, &g) in up.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.conv2_bias[k] += g;
            for hdn in 0..HIDDEN {
                grads.conv2_weights[k * HIDDEN + hdn] += g * zp[hdn].max(0.0);
                dz[hdn] += g * params.conv2_weights[k * HIDDEN + hdn];
            }
        }
        for (d, &z) in dz.iter_mut().zip(zp) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        let (y, x) = (p / w, p % w);
        for (hdn, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grads.conv1_bias[hdn] += d;
            for ky in 0..KERNEL {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let sx = x as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let px = &data[(sy as usize * w + sx as usize) * IN_CHANNELS..][..IN_CHANNELS];
                    let (gy, gx) = if corrupt_conv1 { (kx, ky) } else { (ky, kx) };
                    for (ci, &v) in px.iter().enumerate() {
                        grads.conv1_weights[conv1_index(hdn, ci, gy, gx)] += d * v;
                    }
                }
            }
        }
    }
    grads
}

/// Per-pixel class probabilities, same layout as [`LogitMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub data: Vec<f64>,
}

impl ProbMap {
    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.num_classes..(i + 1) * self.num_classes]
    }
}

/// Max-shifted softmax over the class axis.
pub fn softmax(logits: &LogitMap) -> ProbMap {
    let c = logits.num_classes;
    let mut data = vec![0.0; logits.data.len()];
    for (src, dst) in logits.data.chunks_exact(c).zip(data.chunks_exact_mut(c)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    ProbMap {
        height: logits.height,
        width: logits.width,
        num_classes: c,
        data,
    }
}

/// Pulls a gradient with respect to probabilities back through the softmax.
pub fn softmax_backward(probs: &ProbMap, grad_probs: &[f64]) -> LogitMap {
    let c = probs.num_classes;
    let mut out = LogitMap::zeros(probs.height, probs.width, c);
    for ((p, g), o) in probs
        .data
        .chunks_exact(c)
        .zip(grad_probs.chunks_exact(c))
        .zip(out.data.chunks_exact_mut(c))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for k in 0..c {
            o[k] = p[k] * (g[k] - dot);
        }
    }
    out
}
