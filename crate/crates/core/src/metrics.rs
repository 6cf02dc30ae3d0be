//! Hard segmentation metrics and group-level summaries.
//!
//! Classes absent from both prediction and target are left out of the mIoU
//! and Dice means. Dataset-level means sum in sample-index order.

use serde::{Deserialize, Serialize};

use crate::dataio::{AttributeRecord, MaskTensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseReport {
    /// `None` for classes with an empty union.
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_dice: Vec<Option<f64>>,
    pub miou: f64,
    pub dice: f64,
}

/// Per-class pixel counts: `|pred=c ∧ gt=c|`, `|pred=c|`, `|gt=c|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    pub intersection: Vec<u64>,
    pub predicted: Vec<u64>,
    pub target: Vec<u64>,
}

fn check_pair(pred: &MaskTensor, gt: &MaskTensor) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs target {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    if pred.num_classes() != gt.num_classes() {
        return Err(Error::Shape(format!(
            "prediction has {} classes, target {}",
            pred.num_classes(),
            gt.num_classes()
        )));
    }
    Ok(())
}

pub fn class_counts(pred: &MaskTensor, gt: &MaskTensor) -> Result<ClassCounts> {
    check_pair(pred, gt)?;
    let c = gt.num_classes();
    let mut counts = ClassCounts {
        intersection: vec![0; c],
        predicted: vec![0; c],
        target: vec![0; c],
    };
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        counts.predicted[p as usize] += 1;
        counts.target[g as usize] += 1;
        if p == g {
            counts.intersection[p as usize] += 1;
        }
    }
    Ok(counts)
}

fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

pub fn miou(pred: &MaskTensor, gt: &MaskTensor) -> Result<ClasswiseReport> {
    let counts = class_counts(pred, gt)?;
    let c = gt.num_classes();
    let mut per_class_iou = vec![None; c];
    let mut per_class_dice = vec![None; c];
    for k in 0..c {
        let inter = counts.intersection[k];
        let sizes = counts.predicted[k] + counts.target[k];
        let union = sizes - inter;
        if union > 0 {
            per_class_iou[k] = Some(inter as f64 / union as f64);
            per_class_dice[k] = Some(2.0 * inter as f64 / sizes as f64);
        }
    }
    let miou = mean_present(&per_class_iou)
        .ok_or_else(|| Error::Evaluation("no class present in either mask".into()))?;
    let dice = mean_present(&per_class_dice).expect("same inclusion rule as IoU");
    Ok(ClasswiseReport {
        per_class_iou,
        per_class_dice,
        miou,
        dice,
    })
}

/// `mean_c (I_c + ε)/(U_c + ε)` over *all* classes from hard counts; the hard
/// counterpart of the soft-mIoU loss surrogate.
pub fn smoothed_miou_all_classes(pred: &MaskTensor, gt: &MaskTensor, eps: f64) -> Result<f64> {
    let counts = class_counts(pred, gt)?;
    let c = gt.num_classes();
    let total: f64 = (0..c)
        .map(|k| {
            let inter = counts.intersection[k] as f64;
            let union = (counts.predicted[k] + counts.target[k]) as f64 - inter;
            (inter + eps) / (union + eps)
        })
        .sum();
    Ok(total / c as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub attribute: String,
    /// `None` when no sample has the value.
    pub miou_when_0: Option<f64>,
    pub miou_when_1: Option<f64>,
    /// `None` unless both groups are populated.
    pub gap: Option<f64>,
    pub count_0: usize,
    pub count_1: usize,
}

impl GroupReport {
    pub fn single_group(&self) -> bool {
        self.gap.is_none()
    }

    /// Population variance of the two subgroup scores, when both exist.
    pub fn variance(&self) -> Option<f64> {
        match (self.miou_when_0, self.miou_when_1) {
            (Some(a), Some(b)) => fairness_variance(&[a, b]).ok(),
            _ => None,
        }
    }
}

/// Mean per-sample mIoU for each value of a binary attribute.
pub fn per_group_miou(
    preds: &[MaskTensor],
    gts: &[MaskTensor],
    attrs: &[AttributeRecord],
    attribute: &str,
) -> Result<GroupReport> {
    if preds.len() != gts.len() || gts.len() != attrs.len() {
        return Err(Error::Shape(format!(
            "misaligned inputs: {} predictions, {} targets, {} attribute records",
            preds.len(),
            gts.len(),
            attrs.len()
        )));
    }
    let scores = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| miou(p, g).map(|r| r.miou))
        .collect::<Result<Vec<_>>>()?;
    per_group_from_scores(&scores, attrs, attribute)
}

/// Like [`per_group_miou`] but starting from precomputed per-sample scores.
pub fn per_group_from_scores(
    scores: &[f64],
    attrs: &[AttributeRecord],
    attribute: &str,
) -> Result<GroupReport> {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (score, rec) in scores.iter().zip(attrs) {
        let v = rec.get(attribute).ok_or_else(|| {
            Error::Evaluation(format!(
                "unknown attribute `{attribute}` (available: {})",
                rec.names().collect::<Vec<_>>().join(", ")
            ))
        })? as usize;
        sums[v] += score;
        counts[v] += 1;
    }
    let mean = |g: usize| (counts[g] > 0).then(|| sums[g] / counts[g] as f64);
    let (m0, m1) = (mean(0), mean(1));
    Ok(GroupReport {
        attribute: attribute.to_owned(),
        miou_when_0: m0,
        miou_when_1: m1,
        gap: m0.zip(m1).map(|(a, b)| (b - a).abs()),
        count_0: counts[0],
        count_1: counts[1],
    })
}

/// Population variance; a single score has variance 0.
pub fn fairness_variance(group_scores: &[f64]) -> Result<f64> {
    if group_scores.is_empty() {
        return Err(Error::Evaluation("fairness variance of no groups".into()));
    }
    Ok(mean_and_variance(group_scores).1)
}

/// Welford mean and population variance; equal inputs give exactly 0.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    (mean, m2 / values.len() as f64)
}

/// mIoU lost under a perturbation; negative when the perturbation helped.
pub fn robustness_degradation(clean_miou: f64, perturbed_miou: f64) -> f64 {
    clean_miou - perturbed_miou
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn mask(c: usize, labels: &[u8]) -> MaskTensor {
        MaskTensor::new(1, labels.len(), c, labels.to_vec()).unwrap()
    }

    fn attr(id: &str, v: u8) -> AttributeRecord {
        AttributeRecord::new(id, vec![("dark_skin".into(), v)]).unwrap()
    }

    /// Direct per-class scan over pixels, one class at a time.
    fn naive(pred: &MaskTensor, gt: &MaskTensor) -> (f64, f64) {
        let (mut ious, mut dices) = (Vec::new(), Vec::new());
        for c in 0..gt.num_classes() as u8 {
            let (mut i, mut u, mut a, mut b) = (0u32, 0u32, 0u32, 0u32);
            for y in 0..gt.height() {
                for x in 0..gt.width() {
                    let (p, g) = (pred.get(y, x) == c, gt.get(y, x) == c);
                    i += (p && g) as u32;
                    u += (p || g) as u32;
                    a += p as u32;
                    b += g as u32;
                }
            }
            if u > 0 {
                ious.push(i as f64 / u as f64);
                dices.push(2.0 * i as f64 / (a + b) as f64);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        (mean(&ious), mean(&dices))
    }

    #[test]
    fn identity_scores_one() {
        let m = mask(6, &[0, 1, 5, 5, 2]);
        let r = miou(&m, &m).unwrap();
        assert_eq!((r.miou, r.dice), (1.0, 1.0));
        assert_eq!(r.per_class_iou[3], None);
    }

    #[test]
    fn small_hand_case() {
        let pred = MaskTensor::new(2, 2, 2, vec![0, 0, 1, 1]).unwrap();
        let gt = MaskTensor::new(2, 2, 2, vec![0, 1, 1, 1]).unwrap();
        let r = miou(&pred, &gt).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((r.miou - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(r, miou(&pred, &gt).unwrap());
        assert_eq!((r.miou, r.dice), naive(&pred, &gt));
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let r = miou(&mask(2, &[0, 0, 0]), &mask(2, &[1, 1, 1])).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(0.0), Some(0.0)]);
        assert_eq!(r.miou, 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(miou(&mask(2, &[0, 1]), &mask(2, &[0, 1, 1])).is_err());
        assert!(miou(&mask(2, &[0, 1]), &mask(3, &[0, 1])).is_err());
    }

    #[test]
    fn matches_naive_oracle_on_random_masks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let mut draw = || {
                MaskTensor::new(8, 8, 6, (0..64).map(|_| rng.random_range(0..6)).collect()).unwrap()
            };
            let (p, g) = (draw(), draw());
            let r = miou(&p, &g).unwrap();
            assert_eq!((r.miou, r.dice), naive(&p, &g));
        }
    }

    #[test]
    fn group_reports() {
        let gt = mask(2, &[0, 1]);
        let good = gt.clone();
        let bad = mask(2, &[0, 0]);
        // all in group 1
        let r = per_group_miou(
            std::slice::from_ref(&good),
            std::slice::from_ref(&gt),
            &[attr("a", 1)],
            "dark_skin",
        )
        .unwrap();
        assert_eq!(r.miou_when_1, Some(1.0));
        assert_eq!(r.miou_when_0, None);
        assert!(r.single_group());

        let r =
            per_group_from_scores(&[0.8, 0.6], &[attr("a", 0), attr("b", 1)], "dark_skin").unwrap();
        assert!((r.gap.unwrap() - 0.2).abs() < 1e-15);
        assert!((r.variance().unwrap() - 0.01).abs() < 1e-15);
        assert_eq!((r.count_0, r.count_1), (1, 1));

        let r = per_group_miou(&[bad], &[gt], &[attr("a", 0)], "dark_skin").unwrap();
        assert_eq!(r.miou_when_0, Some(0.25));
        assert!(per_group_from_scores(&[0.5], &[attr("a", 0)], "wearing_hat").is_err());
    }

    #[test]
    fn variance_conventions() {
        assert_eq!(fairness_variance(&[0.7, 0.7, 0.7]).unwrap(), 0.0);
        assert!((fairness_variance(&[0.8, 0.6]).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(fairness_variance(&[0.42]).unwrap(), 0.0);
        assert!(fairness_variance(&[]).is_err());
        let x = [0.1, 0.5, 0.9, 0.3];
        let scaled: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let (v, vs) = (
            fairness_variance(&x).unwrap(),
            fairness_variance(&scaled).unwrap(),
        );
        assert!((vs - 9.0 * v).abs() < 1e-12);
    }

    #[test]
    fn degradation_is_plain_difference() {
        assert_eq!(robustness_degradation(0.9, 0.9), 0.0);
        assert!((robustness_degradation(0.9, 0.6) - 0.3).abs() < 1e-15);
        assert!(robustness_degradation(0.5, 0.6) < 0.0);
    }
}
