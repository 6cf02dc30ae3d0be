//! Differentiable loss terms of the multi-objective objective.
//!
//! All per-class ratios are smoothed with `ε` and averaged over every class,
//! including classes absent from both prediction and target. Batched terms sum
//! statistics over all pixels of all samples before forming the ratio.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{AttributeRecord, LogitMap, MaskTensor};
use crate::homotopy::ScheduleWeights;
use crate::model::{softmax, softmax_backward, ProbMap};
use crate::rng::{self, tag};
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_SIGMA_R: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FairnessVariant {
    /// Population variance of subgroup scores.
    #[default]
    Variance,
    /// Largest minus smallest subgroup score.
    PerGroup,
}

impl FairnessVariant {
    pub const TOKENS: [&'static str; 2] = ["variance", "pergroup"];

    pub fn token(self) -> &'static str {
        match self {
            FairnessVariant::Variance => "variance",
            FairnessVariant::PerGroup => "pergroup",
        }
    }
}

impl fmt::Display for FairnessVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for FairnessVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variance" => Ok(FairnessVariant::Variance),
            "pergroup" => Ok(FairnessVariant::PerGroup),
            other => Err(Error::config(format!(
                "unknown fairness variant `{other}` (expected one of: variance, pergroup)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub fairness: FairnessVariant,
    pub sigma_r: f64,
    pub epsilon: f64,
    /// Attributes whose subgroups the fairness term compares.
    pub attributes: Vec<String>,
}

impl LossOptions {
    pub fn new(attributes: Vec<String>) -> Result<Self> {
        let opts = Self {
            fairness: FairnessVariant::default(),
            sigma_r: DEFAULT_SIGMA_R,
            epsilon: DEFAULT_EPSILON,
            attributes,
        };
        opts.validate()?;
        Ok(opts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::config("fairness loss needs at least one attribute"));
        }
        if !(self.sigma_r >= 0.0 && self.sigma_r.is_finite()) {
            return Err(Error::config(format!(
                "sigma_r must be >= 0, got {}",
                self.sigma_r
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_acc: f64,
    pub l_rob: f64,
    pub l_fair: f64,
    pub l_total: f64,
    pub weights: ScheduleWeights,
}

fn check_aligned(probs: &[ProbMap], gts: &[MaskTensor]) {
    assert_eq!(probs.len(), gts.len(), "batch length mismatch");
    for (p, g) in probs.iter().zip(gts) {
        assert_eq!(p.num_pixels(), g.num_pixels(), "prob/mask shape mismatch");
        assert_eq!(p.num_classes, g.num_classes(), "class count mismatch");
    }
}

/// Per-class sums over the batch: `Σ p·g`, `Σ p`, `Σ g`.
struct ClassSums {
    inter: Vec<f64>,
    pred: Vec<f64>,
    target: Vec<f64>,
}

fn class_sums(probs: &[ProbMap], gts: &[MaskTensor]) -> ClassSums {
    let c = gts[0].num_classes();
    let mut s = ClassSums {
        inter: vec![0.0; c],
        pred: vec![0.0; c],
        target: vec![0.0; c],
    };
    for (p, g) in probs.iter().zip(gts) {
        for (row, &label) in p.data.chunks_exact(c).zip(g.labels()) {
            for (k, &v) in row.iter().enumerate() {
                s.pred[k] += v;
            }
            s.inter[label as usize] += row[label as usize];
            s.target[label as usize] += 1.0;
        }
    }
    s
}

/// `1 − mean_c (2Σp·g + ε)/(Σp + Σg + ε)` over the batch, with its gradient
/// with respect to every probability.
pub fn dice_loss_batch(probs: &[ProbMap], gts: &[MaskTensor], eps: f64) -> (f64, Vec<Vec<f64>>) {
    check_aligned(probs, gts);
    let c = gts[0].num_classes();
    let s = class_sums(probs, gts);
    let mut mean_dice = 0.0;
    // d dice_c / d p_c = (2g·den − num) / den²
    let mut d_hit = vec![0.0; c];
    let mut d_miss = vec![0.0; c];
    for k in 0..c {
        let num = 2.0 * s.inter[k] + eps;
        let den = s.pred[k] + s.target[k] + eps;
        mean_dice += num / den;
        d_hit[k] = (2.0 * den - num) / (den * den);
        d_miss[k] = -num / (den * den);
    }
    mean_dice /= c as f64;
    let scale = -1.0 / c as f64;
    let grads = gts
        .iter()
        .map(|g| per_pixel_grad(g, c, &d_hit, &d_miss, scale))
        .collect();
    (1.0 - mean_dice, grads)
}

fn per_pixel_grad(
    gt: &MaskTensor,
    c: usize,
    d_hit: &[f64],
    d_miss: &[f64],
    scale: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(gt.num_pixels() * c);
    for &label in gt.labels() {
        for k in 0..c {
            let d = if k == label as usize {
                d_hit[k]
            } else {
                d_miss[k]
            };
            out.push(scale * d);
        }
    }
    out
}

pub fn dice_loss(probs: &ProbMap, gt: &MaskTensor, eps: f64) -> (f64, Vec<f64>) {
    let (v, mut g) = dice_loss_batch(std::slice::from_ref(probs), std::slice::from_ref(gt), eps);
    (v, g.pop().expect("one sample"))
}

/// `mean_c (I_c + ε)/(U_c + ε)` with `I = Σp·g`, `U = Σ(p + g − p·g)`, and
/// its gradient with respect to every probability.
pub fn soft_miou_batch(probs: &[ProbMap], gts: &[MaskTensor], eps: f64) -> (f64, Vec<Vec<f64>>) {
    check_aligned(probs, gts);
    let c = gts[0].num_classes();
    let s = class_sums(probs, gts);
    let mut mean = 0.0;
    // dI/dp = g, dU/dp = 1 − g
    let mut d_hit = vec![0.0; c];
    let mut d_miss = vec![0.0; c];
    for k in 0..c {
        let num = s.inter[k] + eps;
        let den = s.pred[k] + s.target[k] - s.inter[k] + eps;
        mean += num / den;
        d_hit[k] = 1.0 / den;
        d_miss[k] = -num / (den * den);
    }
    let scale = 1.0 / c as f64;
    let grads = gts
        .iter()
        .map(|g| per_pixel_grad(g, c, &d_hit, &d_miss, scale))
        .collect();
    (mean / c as f64, grads)
}

pub fn soft_miou(probs: &ProbMap, gt: &MaskTensor, eps: f64) -> (f64, Vec<f64>) {
    let (v, mut g) = soft_miou_batch(std::slice::from_ref(probs), std::slice::from_ref(gt), eps);
    (v, g.pop().expect("one sample"))
}

/// Adds `N(0, σ²)` noise to every logit. Sample `i` of a batch uses the stream
/// keyed by `(noise_seed, i)`.
pub fn noisy_logits(logits: &LogitMap, sigma_r: f64, noise_seed: u64, index: usize) -> LogitMap {
    let mut out = logits.clone();
    if sigma_r > 0.0 {
        let normal = Normal::new(0.0, sigma_r).expect("sigma_r validated");
        let mut rng = rng::substream(noise_seed, tag::LOGIT_NOISE, &[index as u64]);
        for v in &mut out.data {
            *v += normal.sample(&mut rng);
        }
    }
    out
}

/// `−soft_miou(softmax(logits + noise))`; the noise is held constant when
/// differentiating.
pub fn robustness_loss_batch(
    logits: &[LogitMap],
    gts: &[MaskTensor],
    sigma_r: f64,
    noise_seed: u64,
    eps: f64,
) -> (f64, Vec<LogitMap>) {
    let probs: Vec<ProbMap> = logits
        .iter()
        .enumerate()
        .map(|(i, l)| softmax(&noisy_logits(l, sigma_r, noise_seed, i)))
        .collect();
    let (value, grads) = soft_miou_batch(&probs, gts, eps);
    let grads = probs
        .iter()
        .zip(&grads)
        .map(|(p, g)| {
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            softmax_backward(p, &neg)
        })
        .collect();
    (-value, grads)
}

pub fn robustness_loss(
    logits: &LogitMap,
    gt: &MaskTensor,
    sigma_r: f64,
    noise_seed: u64,
    eps: f64,
) -> (f64, LogitMap) {
    let (v, mut g) = robustness_loss_batch(
        std::slice::from_ref(logits),
        std::slice::from_ref(gt),
        sigma_r,
        noise_seed,
        eps,
    );
    (v, g.pop().expect("one sample"))
}

/// Population variance of `scores` and its gradient. A single score gives 0.
pub fn variance_reduction(scores: &[f64]) -> (f64, Vec<f64>) {
    if scores.len() < 2 {
        return (0.0, vec![0.0; scores.len()]);
    }
    let (mean, value) = crate::metrics::mean_and_variance(scores);
    let n = scores.len() as f64;
    let grad = scores.iter().map(|s| 2.0 * (s - mean) / n).collect();
    (value, grad)
}

/// `max − min` of `scores` and a subgradient; ties resolve to the lowest index.
pub fn gap_reduction(scores: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; scores.len()];
    if scores.len() < 2 {
        return (0.0, grad);
    }
    let (mut hi, mut lo) = (0, 0);
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[hi] {
            hi = i;
        }
        if s < scores[lo] {
            lo = i;
        }
    }
    grad[hi] += 1.0;
    grad[lo] -= 1.0;
    (scores[hi] - scores[lo], grad)
}

/// Fairness term over a batch: per attribute, samples are partitioned by the
/// attribute value, each present subgroup is scored by the mean per-sample
/// soft mIoU, and the subgroup scores are reduced by `variant`. The result is
/// averaged over attributes. Returns gradients with respect to probabilities.
pub fn fairness_loss_batch(
    probs: &[ProbMap],
    gts: &[MaskTensor],
    attrs: &[AttributeRecord],
    attributes: &[String],
    variant: FairnessVariant,
    eps: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_aligned(probs, gts);
    if attributes.is_empty() {
        return Err(Error::config("fairness loss needs at least one attribute"));
    }
    if attrs.len() != probs.len() {
        return Err(Error::Shape("attribute batch length mismatch".into()));
    }
    let per_sample: Vec<(f64, Vec<f64>)> = probs
        .iter()
        .zip(gts)
        .map(|(p, g)| soft_miou(p, g, eps))
        .collect();

    let mut sample_weight = vec![0.0; probs.len()];
    let mut value = 0.0;
    let n_attr = attributes.len() as f64;
    for name in attributes {
        let mut groups: Vec<(u8, Vec<usize>)> = Vec::new();
        for (i, a) in attrs.iter().enumerate() {
            let v = a.get(name).ok_or_else(|| {
                Error::config(format!("sample {} lacks attribute {name}", a.sample_id))
            })?;
            match groups.iter_mut().find(|(gv, _)| *gv == v) {
                Some((_, members)) => members.push(i),
                None => groups.push((v, vec![i])),
            }
        }
        groups.sort_by_key(|(v, _)| *v);
        let scores: Vec<f64> = groups
            .iter()
            .map(|(_, m)| m.iter().map(|&i| per_sample[i].0).sum::<f64>() / m.len() as f64)
            .collect();
        let (v, dscores) = match variant {
            FairnessVariant::Variance => variance_reduction(&scores),
            FairnessVariant::PerGroup => gap_reduction(&scores),
        };
        value += v / n_attr;
        for ((_, members), ds) in groups.iter().zip(dscores) {
            for &i in members {
                sample_weight[i] += ds / (members.len() as f64 * n_attr);
            }
        }
    }
    let grads = per_sample
        .into_iter()
        .zip(sample_weight)
        .map(|((_, g), w)| g.into_iter().map(|v| v * w).collect())
        .collect();
    Ok((value, grads))
}

/// One training batch seen by the loss.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a> {
    pub logits: &'a [LogitMap],
    pub gts: &'a [MaskTensor],
    pub attrs: &'a [AttributeRecord],
}

/// Weighted sum of the three terms and its gradient with respect to each
/// sample's logits. Terms with zero weight are evaluated for reporting but do
/// not enter the gradient.
pub fn total_loss(
    batch: LossBatch<'_>,
    weights: ScheduleWeights,
    options: &LossOptions,
    noise_seed: u64,
) -> Result<(LossBreakdown, Vec<LogitMap>)> {
    let LossBatch { logits, gts, attrs } = batch;
    if logits.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let eps = options.epsilon;
    let probs: Vec<ProbMap> = logits.iter().map(softmax).collect();

    let (l_acc, g_acc) = dice_loss_batch(&probs, gts, eps);
    let (l_rob, g_rob) = robustness_loss_batch(logits, gts, options.sigma_r, noise_seed, eps);
    let (l_fair, g_fair) = fairness_loss_batch(
        &probs,
        gts,
        attrs,
        &options.attributes,
        options.fairness,
        eps,
    )?;

    let ScheduleWeights { alpha, beta, gamma } = weights;
    let l_total = alpha * l_acc + beta * l_rob + gamma * l_fair;

    let grads = probs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut total = LogitMap::zeros(p.height, p.width, p.num_classes);
            if alpha != 0.0 {
                accumulate(&mut total, &softmax_backward(p, &g_acc[i]), alpha);
            }
            if beta != 0.0 {
                accumulate(&mut total, &g_rob[i], beta);
            }
            if gamma != 0.0 {
                accumulate(&mut total, &softmax_backward(p, &g_fair[i]), gamma);
            }
            total
        })
        .collect();

    Ok((
        LossBreakdown {
            l_acc,
            l_rob,
            l_fair,
            l_total,
            weights,
        },
        grads,
    ))
}

fn accumulate(dst: &mut LogitMap, src: &LogitMap, w: f64) {
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += w * s;
    }
}

/// Random logits helper shared by tests in several modules.
#[cfg(test)]
pub(crate) fn random_logits(
    rng: &mut impl rand::Rng,
    h: usize,
    w: usize,
    c: usize,
    scale: f64,
) -> LogitMap {
    LogitMap {
        height: h,
        width: w,
        num_classes: c,
        data: (0..h * w * c)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    }
}
