//! Central finite-difference check of the full training-loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{backward_impl, forward_cached, init_params, GradientSet, ModelParams};
use crate::dataio::{AttributeRecord, ImageTensor, MaskTensor};
use crate::homotopy::ScheduleWeights;
use crate::losses::{total_loss, FairnessVariant, LossBatch, LossOptions};
use crate::rng::{self, tag};
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub weights: ScheduleWeights,
    pub fairness: FairnessVariant,
    pub num_classes: usize,
    /// Swap the kernel axes of the conv1 gradient (mutation test).
    pub corrupt_conv1: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            step: 1e-4,
            tolerance: 1e-3,
            weights: ScheduleWeights {
                alpha: 0.4,
                beta: 0.3,
                gamma: 0.3,
            },
            fairness: FairnessVariant::Variance,
            num_classes: crate::DEFAULT_NUM_CLASSES,
            corrupt_conv1: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub passed: bool,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_param: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

const SIDE: usize = 8;
const ATTRIBUTE: &str = "group";

struct Problem {
    images: Vec<ImageTensor>,
    masks: Vec<MaskTensor>,
    attrs: Vec<AttributeRecord>,
    options: LossOptions,
    noise_seed: u64,
}

/// Three random 8×8 samples split over both values of one attribute, so the
/// fairness term is active.
fn build_problem(opts: &GradcheckOptions) -> Result<(ModelParams, Problem)> {
    let c = opts.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(rng::derive_seed(opts.seed, &[tag::GRADCHECK]));
    let mut params = init_params(opts.seed, c);
    for b in params
        .conv1_bias
        .iter_mut()
        .chain(params.conv2_bias.iter_mut())
    {
        *b = rng.random_range(-0.3..0.3);
    }
    let mut images = Vec::new();
    let mut masks = Vec::new();
    let mut attrs = Vec::new();
    for (i, group) in [0u8, 1, 1].into_iter().enumerate() {
        let data = (0..SIDE * SIDE * 3).map(|_| rng.random::<f64>()).collect();
        images.push(ImageTensor::new(SIDE, SIDE, data)?);
        let labels = (0..SIDE * SIDE)
            .map(|_| rng.random_range(0..c as u8))
            .collect();
        masks.push(MaskTensor::new(SIDE, SIDE, c, labels)?);
        let id = format!("g{i}");
        attrs.push(AttributeRecord::new(
            id,
            vec![(ATTRIBUTE.to_owned(), group)],
        )?);
    }
    let mut options = LossOptions::new(vec![ATTRIBUTE.to_owned()])?;
    options.fairness = opts.fairness;
    let noise_seed = rng.random();
    Ok((
        params,
        Problem {
            images,
            masks,
            attrs,
            options,
            noise_seed,
        },
    ))
}

fn loss_and_grad(
    params: &ModelParams,
    problem: &Problem,
    weights: ScheduleWeights,
    corrupt: bool,
) -> Result<(f64, GradientSet)> {
    let (logits, caches): (Vec<_>, Vec<_>) = problem
        .images
        .iter()
        .map(|img| forward_cached(params, img))
        .unzip();
    let batch = LossBatch {
        logits: &logits,
        gts: &problem.masks,
        attrs: &problem.attrs,
    };
    let (breakdown, upstream) = total_loss(batch, weights, &problem.options, problem.noise_seed)?;
    let mut grads = params.zeros_like();
    for ((img, cache), up) in problem.images.iter().zip(&caches).zip(&upstream) {
        grads.add_scaled(&backward_impl(params, img, cache, up, corrupt), 1.0);
    }
    Ok((breakdown.l_total, grads))
}

pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let (params, problem) = build_problem(opts)?;
    let (_, analytic) = loss_and_grad(&params, &problem, opts.weights, opts.corrupt_conv1)?;
    let analytic = analytic.flatten();
    let mut worst = (0.0, 0usize, 0.0, 0.0);
    for (i, &a) in analytic.iter().enumerate() {
        let mut probe = params.clone();
        let x = params.get_flat(i);
        probe.set_flat(i, x + opts.step);
        let (plus, _) = loss_and_grad(&probe, &problem, opts.weights, false)?;
        probe.set_flat(i, x - opts.step);
        let (minus, _) = loss_and_grad(&probe, &problem, opts.weights, false)?;
        let numeric = (plus - minus) / (2.0 * opts.step);
        let err = relative_error(a, numeric);
        if err > worst.0 || !err.is_finite() {
            worst = (err, i, a, numeric);
        }
    }
    let (max_rel_error, worst_index, worst_analytic, worst_numeric) = worst;
    Ok(GradcheckReport {
        passed: max_rel_error < opts.tolerance,
        checked: analytic.len(),
        max_rel_error,
        worst_index,
        worst_param: params.describe_flat(worst_index),
        worst_analytic,
        worst_numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-10, 0.0), 1e-2);
        assert!((relative_error(1.0, 1.001) - 0.001 / 2.001).abs() < 1e-15);
    }

    #[test]
    fn default_check_passes_for_both_variants() {
        for fairness in [FairnessVariant::Variance, FairnessVariant::PerGroup] {
            let report = gradcheck(&GradcheckOptions {
                fairness,
                ..GradcheckOptions::default()
            })
            .unwrap();
            assert_eq!(report.checked, 278);
            assert!(report.passed, "{fairness}: {report:?}");
        }
    }

    #[test]
    fn corrupted_conv1_gradient_is_caught() {
        let report = gradcheck(&GradcheckOptions {
            corrupt_conv1: true,
            ..GradcheckOptions::default()
        })
        .unwrap();
        assert!(!report.passed);
        assert!(
            report.worst_param.starts_with("conv1_weights"),
            "{report:?}"
        );
    }
}
