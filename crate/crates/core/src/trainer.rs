//! Mini-batch training with homotopy-scheduled loss weights and Adam.
//!
//! Per epoch `t` (0-based): weights come from the schedule (or stay at
//! `(1, 0, 0)` in single-objective mode), the training set is reshuffled from
//! the stream keyed by `(seed, t)`, and each batch draws its logit noise from
//! `(seed, t, batch)`. Per-sample forward/backward passes run in parallel and
//! are reduced in sample order, so results do not depend on thread count.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{DatasetRecord, LogitMap, MaskTensor, RunMeta};
use crate::homotopy::{weights_at, ScheduleConfig, ScheduleKind, ScheduleWeights};
use crate::losses::{total_loss, FairnessVariant, LossBatch, LossOptions, DEFAULT_EPSILON};
use crate::metrics;
use crate::model::{backward_cached, forward_cached, init_params, GradientSet, ModelParams};
use crate::rng::{self, tag};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Dice loss only: weights fixed at `(1, 0, 0)`.
    Single,
    #[default]
    Multi,
}

impl TrainMode {
    pub fn token(self) -> &'static str {
        match self {
            TrainMode::Single => "single",
            TrainMode::Multi => "multi",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(TrainMode::Single),
            "multi" => Ok(TrainMode::Multi),
            other => Err(Error::config(format!(
                "unknown mode `{other}` (expected one of: single, multi)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
}

impl AdamState {
    pub fn new(like: &ModelParams) -> Self {
        Self {
            step: 0,
            first_moment: like.zeros_like(),
            second_moment: like.zeros_like(),
        }
    }
}

/// One Adam update with bias-corrected moments.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    state: &mut AdamState,
    hyper: &AdamHyper,
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut());
    for (((p, g), m), v) in tensors {
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Ignored in single-objective mode.
    pub schedule: ScheduleConfig,
    pub fairness_variant: FairnessVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub sigma_r: f64,
    pub seed: u64,
    pub attributes: Vec<String>,
    pub num_classes: usize,
    /// Record wall-clock time per epoch; off by default so logs are reproducible.
    pub record_timing: bool,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, kind: ScheduleKind, epochs: usize, seed: u64) -> Self {
        Self {
            mode,
            schedule: ScheduleConfig::new(kind, epochs),
            fairness_variant: FairnessVariant::Variance,
            epochs,
            batch_size: 8,
            adam: AdamHyper::default(),
            sigma_r: crate::losses::DEFAULT_SIGMA_R,
            seed,
            attributes: vec!["dark_skin".to_owned()],
            num_classes: crate::DEFAULT_NUM_CLASSES,
            record_timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.adam.learning_rate >= 0.0 && self.adam.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning rate must be finite and non-negative",
            ));
        }
        if self.mode == TrainMode::Multi {
            if self.schedule.total_epochs != self.epochs {
                return Err(Error::config(format!(
                    "schedule spans {} epochs but training runs {}",
                    self.schedule.total_epochs, self.epochs
                )));
            }
            self.schedule.validate()?;
        }
        self.loss_options().validate()
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            fairness: self.fairness_variant,
            sigma_r: self.sigma_r,
            epsilon: DEFAULT_EPSILON,
            attributes: self.attributes.clone(),
        }
    }

    pub fn weights_for(&self, epoch: usize) -> Result<ScheduleWeights> {
        match self.mode {
            TrainMode::Single => Ok(ScheduleWeights::ACCURACY_ONLY),
            TrainMode::Multi => weights_at(&self.schedule, epoch),
        }
    }

    pub fn run_meta(&self) -> RunMeta {
        RunMeta {
            mode: self.mode.token().to_owned(),
            schedule: match self.mode {
                TrainMode::Single => "none".to_owned(),
                TrainMode::Multi => self.schedule.kind.token().to_owned(),
            },
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLogRow {
    pub epoch: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub l_acc: f64,
    pub l_rob: f64,
    pub l_fair: f64,
    pub l_total: f64,
    pub train_miou: f64,
    pub wall_ms: u64,
}

pub const LOG_HEADER: &str = "epoch,alpha,beta,gamma,l_acc,l_rob,l_fair,l_total,train_miou,wall_ms";

pub fn format_train_log(rows: &[EpochLogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}\n",
            r.epoch,
            r.alpha,
            r.beta,
            r.gamma,
            r.l_acc,
            r.l_rob,
            r.l_fair,
            r.l_total,
            r.train_miou,
            r.wall_ms
        ));
    }
    out
}

pub fn write_train_log(rows: &[EpochLogRow], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(format_train_log(rows).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLogRow>,
}

struct SampleResult {
    logits: LogitMap,
    cache: crate::model::Activations,
}

pub fn train(cfg: &TrainConfig, dataset: &[DatasetRecord]) -> Result<TrainOutcome> {
    train_from(cfg, dataset, init_params(cfg.seed, cfg.num_classes))
}

/// Trains starting from `params` instead of a fresh initialization.
pub fn train_from(
    cfg: &TrainConfig,
    dataset: &[DatasetRecord],
    mut params: ModelParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if let Some(r) = dataset
        .iter()
        .find(|r| r.mask.num_classes() != cfg.num_classes)
    {
        return Err(Error::config(format!(
            "sample {} has {} classes, model expects {}",
            r.sample_id,
            r.mask.num_classes(),
            cfg.num_classes
        )));
    }
    let options = cfg.loss_options();
    let mut state = AdamState::new(&params);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let weights = cfg.weights_for(epoch)?;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng::substream(cfg.seed, tag::SHUFFLE, &[epoch as u64]));

        let mut sums = [0.0; 4];
        let mut miou_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&DatasetRecord> = idx.iter().map(|&i| &dataset[i]).collect();
            let fwd: Vec<SampleResult> = samples
                .par_iter()
                .map(|r| {
                    let (logits, cache) = forward_cached(&params, &r.image);
                    SampleResult { logits, cache }
                })
                .collect();
            let logits: Vec<LogitMap> = fwd.iter().map(|s| s.logits.clone()).collect();
            let gts: Vec<MaskTensor> = samples.iter().map(|r| r.mask.clone()).collect();
            let attrs: Vec<_> = samples.iter().map(|r| r.attributes.clone()).collect();
            let noise_seed =
                rng::derive_seed(cfg.seed, &[tag::LOGIT_NOISE, epoch as u64, b as u64]);
            let batch = LossBatch {
                logits: &logits,
                gts: &gts,
                attrs: &attrs,
            };
            let (loss, upstream) = total_loss(batch, weights, &options, noise_seed)?;
            if ![loss.l_acc, loss.l_rob, loss.l_fair, loss.l_total]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::Diverged { epoch, batch: b });
            }

            let per_sample: Vec<GradientSet> = samples
                .par_iter()
                .zip(fwd.par_iter())
                .zip(upstream.par_iter())
                .map(|((r, s), up)| backward_cached(&params, &r.image, &s.cache, up))
                .collect();
            let mut grads = params.zeros_like();
            for g in &per_sample {
                grads.add_scaled(g, 1.0);
            }

            let n = samples.len() as f64;
            for (acc, v) in sums
                .iter_mut()
                .zip([loss.l_acc, loss.l_rob, loss.l_fair, loss.l_total])
            {
                *acc += v * n;
            }
            for (s, gt) in fwd.iter().zip(&gts) {
                miou_sum += metrics::miou(&s.logits.argmax(), gt)?.miou;
            }

            adam_step(&mut params, &grads, &mut state, &cfg.adam);
        }

        let n = dataset.len() as f64;
        log.push(EpochLogRow {
            epoch,
            alpha: weights.alpha,
            beta: weights.beta,
            gamma: weights.gamma,
            l_acc: sums[0] / n,
            l_rob: sums[1] / n,
            l_fair: sums[2] / n,
            l_total: sums[3] / n,
            train_miou: miou_sum / n,
            wall_ms: if cfg.record_timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        });
    }
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, GenConfig};
    use rand::{Rng, SeedableRng};

    fn random_params(rng: &mut impl Rng) -> ModelParams {
        let mut p = ModelParams::zeros(6);
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        p
    }

    /// Scalar Adam written from the update equations, one coordinate at a time.
    fn naive_adam(p: &mut [f64], gs: &[Vec<f64>], lr: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        for (i, x) in p.iter_mut().enumerate() {
            let (mut m, mut v) = (0.0, 0.0);
            for (t, g) in gs.iter().enumerate() {
                let g = g[i];
                m = b1 * m + (1.0 - b1) * g;
                v = b2 * v + (1.0 - b2) * g * g;
                let mh = m / (1.0 - b1.powi(t as i32 + 1));
                let vh = v / (1.0 - b2.powi(t as i32 + 1));
                *x -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    #[test]
    fn adam_matches_scalar_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut params = random_params(&mut rng);
        let grads: Vec<ModelParams> = (0..5).map(|_| random_params(&mut rng)).collect();
        let mut flat = params.flatten();
        let hyper = AdamHyper {
            learning_rate: 0.01,
            ..AdamHyper::default()
        };
        let mut state = AdamState::new(&params);
        for g in &grads {
            adam_step(&mut params, g, &mut state, &hyper);
        }
        naive_adam(
            &mut flat,
            &grads.iter().map(|g| g.flatten()).collect::<Vec<_>>(),
            0.01,
        );
        for (a, b) in params.flatten().iter().zip(&flat) {
            assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
        }
        assert_eq!(state.step, 5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut params = random_params(&mut rng);
        let before = params.clone();
        let mut grads = random_params(&mut rng);
        grads.conv2_bias[0] = 0.0;
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &AdamHyper::default());
        for ((a, b), g) in params
            .flatten()
            .iter()
            .zip(before.flatten())
            .zip(grads.flatten())
        {
            if g == 0.0 {
                assert_eq!(*a, b);
            } else {
                // lr·g/(|g| + eps) differs from lr·sign(g) by at most lr·eps/|g|
                assert!(((b - a) - 1e-3 * g.signum()).abs() <= 1e-3 * 1e-8 / g.abs() + 1e-15);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut params = random_params(&mut rng);
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let zeros = params.zeros_like();
        adam_step(&mut params, &zeros, &mut state, &AdamHyper::default());
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    fn tiny_data() -> Vec<DatasetRecord> {
        generate_dataset(&GenConfig {
            count: 6,
            size: 16,
            seed: 1,
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let data = tiny_data();
        let mut cfg = TrainConfig::new(TrainMode::Multi, ScheduleKind::Linear, 1, 4);
        cfg.batch_size = data.len();
        cfg.adam.learning_rate = 0.0;
        let out = train(&cfg, &data).unwrap();
        assert_eq!(out.params, init_params(4, 6));
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn training_is_deterministic_and_logs_schedule() {
        let data = tiny_data();
        let mut cfg = TrainConfig::new(TrainMode::Multi, ScheduleKind::Sigmoid, 4, 9);
        cfg.batch_size = 4;
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(format_train_log(&a.log), format_train_log(&b.log));
        for row in &a.log {
            let w = weights_at(&cfg.schedule, row.epoch).unwrap();
            assert_eq!((row.alpha, row.beta, row.gamma), (w.alpha, w.beta, w.gamma));
            let recombined = row.alpha * row.l_acc + row.beta * row.l_rob + row.gamma * row.l_fair;
            assert!((recombined - row.l_total).abs() < 1e-9);
        }
    }

    #[test]
    fn single_mode_equals_constant_multi_schedule() {
        let data = tiny_data();
        let mut single = TrainConfig::new(TrainMode::Single, ScheduleKind::Linear, 3, 5);
        single.batch_size = 4;
        let mut multi = single.clone();
        multi.mode = TrainMode::Multi;
        multi.schedule = ScheduleConfig::constant_accuracy(3);
        let a = train(&single, &data).unwrap();
        let b = train(&multi, &data).unwrap();
        assert_eq!(
            a.params
                .flatten()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
            b.params
                .flatten()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        );
        assert_eq!(format_train_log(&a.log), format_train_log(&b.log));
    }

    #[test]
    fn config_validation() {
        let data = tiny_data();
        let mut cfg = TrainConfig::new(TrainMode::Multi, ScheduleKind::Linear, 2, 0);
        cfg.batch_size = 0;
        assert!(train(&cfg, &data).is_err());
        let mut cfg = TrainConfig::new(TrainMode::Multi, ScheduleKind::Linear, 2, 0);
        cfg.epochs = 3;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig::new(TrainMode::Multi, ScheduleKind::Linear, 2, 0);
        assert!(train(&cfg, &[]).is_err());
        let mut cfg = TrainConfig::new(TrainMode::Multi, ScheduleKind::Linear, 2, 0);
        cfg.attributes.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let data = tiny_data();
        let cfg = TrainConfig::new(TrainMode::Multi, ScheduleKind::Linear, 1, 0);
        let mut params = init_params(0, 6);
        params.conv2_bias[0] = f64::NAN;
        assert!(matches!(
            train_from(&cfg, &data, params),
            Err(Error::Diverged { epoch: 0, batch: 0 })
        ));
    }
}
