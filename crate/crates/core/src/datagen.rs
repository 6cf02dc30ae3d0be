//! Procedural "face-like" scenes with binary attributes and a tunable
//! difficulty bias against one demographic group.
//!
//! Each sample is drawn from its own random stream keyed by `(seed, index)`, so
//! sample `k` is identical whatever `count` is. Regions are painted in the
//! order background → skin → hair → hat → eyes → mouth; later regions win.
//! For `dark_skin = 1` samples the skin/background colour contrast is scaled
//! by `1 − bias_contrast` and Gaussian pixel noise is added.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{write_dataset_dir, AttributeRecord, DatasetRecord, ImageTensor, MaskTensor};
use crate::rng::{self, tag};
use crate::{Error, Result};

pub const CLASS_NAMES: [&str; 6] = ["background", "skin", "eyes", "mouth", "hair", "hat"];
pub const BACKGROUND: u8 = 0;
pub const SKIN: u8 = 1;
pub const EYES: u8 = 2;
pub const MOUTH: u8 = 3;
pub const HAIR: u8 = 4;
pub const HAT: u8 = 5;

pub const GEN_CONFIG_FILE: &str = "gen_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeProb {
    pub name: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub class_count: usize,
    /// Bernoulli probability per attribute, in CSV column order.
    pub attribute_probs: Vec<AttributeProb>,
    pub bias_contrast: f64,
    pub bias_noise_sigma: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        let probs = [
            ("dark_skin", 0.3),
            ("wearing_hat", 0.5),
            ("big_eyes", 0.5),
            ("smiling", 0.5),
        ];
        Self {
            count: 200,
            size: 64,
            seed: 0,
            class_count: CLASS_NAMES.len(),
            attribute_probs: probs
                .iter()
                .map(|&(name, p)| AttributeProb {
                    name: name.to_owned(),
                    p,
                })
                .collect(),
            bias_contrast: 0.5,
            bias_noise_sigma: 0.05,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("count must be at least 1"));
        }
        if self.size < 8 {
            return Err(Error::config("image size must be at least 8"));
        }
        if self.class_count != CLASS_NAMES.len() {
            return Err(Error::config(format!(
                "class_count is fixed at {}",
                CLASS_NAMES.len()
            )));
        }
        for a in &self.attribute_probs {
            if !(0.0..=1.0).contains(&a.p) {
                return Err(Error::config(format!(
                    "probability of {} outside [0, 1]",
                    a.name
                )));
            }
        }
        for required in ["dark_skin", "wearing_hat", "big_eyes", "smiling"] {
            if !self.attribute_probs.iter().any(|a| a.name == required) {
                return Err(Error::config(format!(
                    "missing attribute probability {required}"
                )));
            }
        }
        let mut names: Vec<&str> = self
            .attribute_probs
            .iter()
            .map(|a| a.name.as_str())
            .collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("duplicate attribute name"));
        }
        if !(0.0..=1.0).contains(&self.bias_contrast) {
            return Err(Error::config("bias_contrast outside [0, 1]"));
        }
        if !(self.bias_noise_sigma >= 0.0 && self.bias_noise_sigma.is_finite()) {
            return Err(Error::config("bias_noise_sigma must be >= 0"));
        }
        Ok(())
    }

    pub fn set_prob(&mut self, name: &str, p: f64) {
        match self.attribute_probs.iter_mut().find(|a| a.name == name) {
            Some(a) => a.p = p,
            None => self.attribute_probs.push(AttributeProb {
                name: name.to_owned(),
                p,
            }),
        }
    }
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

type Rgb = [f64; 3];

fn jitter(rng: &mut impl Rng, base: Rgb, amount: f64) -> Rgb {
    base.map(|c| (c + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

const LIGHT_SKIN: Rgb = [0.93, 0.78, 0.66];
const DARK_SKIN: Rgb = [0.58, 0.42, 0.32];
const HAIR_COLOR: Rgb = [0.12, 0.08, 0.05];
const HAT_COLOR: Rgb = [0.15, 0.30, 0.85];
const EYE_COLOR: Rgb = [0.97, 0.97, 0.97];
const MOUTH_COLOR: Rgb = [0.80, 0.12, 0.18];

/// Generates sample `index` of the corpus described by `cfg`.
pub fn generate_sample(cfg: &GenConfig, index: usize) -> Result<DatasetRecord> {
    let mut rng = rng::substream(cfg.seed, tag::SAMPLE, &[index as u64]);
    let attributes: Vec<(String, u8)> = cfg
        .attribute_probs
        .iter()
        .map(|a| (a.name.clone(), u8::from(rng.random_bool(a.p))))
        .collect();
    let flag = |name: &str| attributes.iter().any(|(n, v)| n == name && *v == 1);
    let (dark, hat, big_eyes, smiling) = (
        flag("dark_skin"),
        flag("wearing_hat"),
        flag("big_eyes"),
        flag("smiling"),
    );

    let s = cfg.size as f64;
    let cx = s * (0.5 + rng.random_range(-0.05..=0.05));
    let cy = s * (0.56 + rng.random_range(-0.04..=0.04));
    let ax = s * rng.random_range(0.20..=0.26);
    let ay = s * rng.random_range(0.26..=0.32);
    let eye_r = s * 0.05 * if big_eyes { 1.5 } else { 1.0 };
    let eye_dx = ax * 0.42;
    let eye_y = cy - ay * 0.12;
    let mouth_ax = ax * 0.35 * if smiling { 1.5 } else { 1.0 };
    let mouth_ay = ay * 0.1;
    let mouth_y = cy + ay * 0.5;

    let background: Rgb = [
        rng.random_range(0.3..=0.7),
        rng.random_range(0.3..=0.7),
        rng.random_range(0.3..=0.7),
    ];
    let skin_base = jitter(&mut rng, if dark { DARK_SKIN } else { LIGHT_SKIN }, 0.04);
    let contrast = if dark { 1.0 - cfg.bias_contrast } else { 1.0 };
    let skin: Rgb =
        std::array::from_fn(|c| background[c] + (skin_base[c] - background[c]) * contrast);
    let palette: [Rgb; 6] = [
        background,
        skin,
        jitter(&mut rng, EYE_COLOR, 0.03),
        jitter(&mut rng, MOUTH_COLOR, 0.05),
        jitter(&mut rng, HAIR_COLOR, 0.04),
        jitter(&mut rng, HAT_COLOR, 0.05),
    ];

    let inside = |x: f64, y: f64, ex: f64, ey: f64, rx: f64, ry: f64| {
        let (dx, dy) = ((x - ex) / rx, (y - ey) / ry);
        dx * dx + dy * dy <= 1.0
    };
    let n = cfg.size;
    let mut labels = vec![BACKGROUND; n * n];
    for py in 0..n {
        for px in 0..n {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut label = BACKGROUND;
            if inside(x, y, cx, cy, ax, ay) {
                label = SKIN;
            }
            if inside(x, y, cx, cy, ax * 1.12, ay * 1.1) && y <= cy - ay * 0.45 {
                label = HAIR;
            }
            if hat
                && (x - cx).abs() <= ax * 1.25
                && y >= cy - ay * 1.1 - s * 0.08
                && y <= cy - ay * 0.75
            {
                label = HAT;
            }
            if inside(x, y, cx - eye_dx, eye_y, eye_r, eye_r)
                || inside(x, y, cx + eye_dx, eye_y, eye_r, eye_r)
            {
                label = EYES;
            }
            if inside(x, y, cx, mouth_y, mouth_ax, mouth_ay) {
                label = MOUTH;
            }
            labels[py * n + px] = label;
        }
    }

    let mut data: Vec<f64> = labels.iter().flat_map(|&l| palette[l as usize]).collect();
    if dark && cfg.bias_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.bias_noise_sigma).expect("validated sigma");
        for v in &mut data {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }

    let id = sample_id(index);
    DatasetRecord::new(
        id.clone(),
        ImageTensor::new(n, n, data)?,
        MaskTensor::new(n, n, cfg.class_count, labels)?,
        AttributeRecord::new(id, attributes)?,
    )
}

pub fn generate_dataset(cfg: &GenConfig) -> Result<Vec<DatasetRecord>> {
    cfg.validate()?;
    use rayon::prelude::*;
    (0..cfg.count)
        .into_par_iter()
        .map(|i| generate_sample(cfg, i))
        .collect()
}

/// Generates the corpus and writes it, with `gen_config.json`, under `dir`.
pub fn write_dataset(cfg: &GenConfig, dir: &Path) -> Result<Vec<DatasetRecord>> {
    let records = generate_dataset(cfg)?;
    write_dataset_dir(dir, &records)?;
    let path = dir.join(GEN_CONFIG_FILE);
    let json = serde_json::to_string_pretty(cfg).expect("config serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

pub fn read_gen_config(dir: &Path) -> Result<Option<GenConfig>> {
    let path = dir.join(GEN_CONFIG_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Seeded shuffle, then the first `round(n·train_fraction)` records train.
pub fn split_dataset<T: Clone>(
    records: &[T],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = (records.len() as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == records.len() {
        return Err(Error::config(format!(
            "splitting {} records at {train_fraction} leaves one side empty",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng::substream(
        seed,
        tag::SPLIT,
        &[records.len() as u64],
    ));
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::encode_ppm;

    fn small(seed: u64, count: usize) -> GenConfig {
        GenConfig {
            count,
            size: 32,
            seed,
            ..GenConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&small(3, 6)).unwrap();
        let b = generate_dataset(&small(3, 6)).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&small(4, 6)).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn sample_does_not_depend_on_count() {
        let a = generate_dataset(&small(5, 3)).unwrap();
        let b = generate_dataset(&small(5, 10)).unwrap();
        assert_eq!(a[..], b[..3]);
    }

    #[test]
    fn zero_probabilities_give_zero_columns() {
        let mut cfg = small(1, 20);
        for a in &mut cfg.attribute_probs {
            a.p = 0.0;
        }
        for rec in generate_dataset(&cfg).unwrap() {
            assert!(rec.attributes.attributes.iter().all(|(_, v)| *v == 0));
            assert!(!rec.mask.labels().contains(&HAT));
        }
    }

    #[test]
    fn default_corpus_covers_all_classes_and_bias_rate() {
        let cfg = GenConfig {
            seed: 42,
            ..GenConfig::default()
        };
        let recs = generate_dataset(&cfg).unwrap();
        assert_eq!(recs.len(), 200);
        let mut seen = [false; 6];
        for r in &recs {
            assert_eq!((r.image.height(), r.mask.height()), (64, 64));
            for &l in r.mask.labels() {
                seen[l as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        let dark = recs
            .iter()
            .filter(|r| r.attributes.get("dark_skin") == Some(1))
            .count();
        let rate = dark as f64 / 200.0;
        assert!((rate - 0.3).abs() <= 0.10, "{rate}");
    }

    /// Mean over samples of |mean skin colour − mean background colour|.
    fn dark_group_contrast(bias: f64) -> f64 {
        let cfg = GenConfig {
            count: 60,
            seed: 8,
            bias_contrast: bias,
            ..GenConfig::default()
        };
        let mut total = 0.0;
        let mut n = 0;
        for r in generate_dataset(&cfg).unwrap() {
            if r.attributes.get("dark_skin") != Some(1) {
                continue;
            }
            let mut sums = [[0.0; 3]; 2];
            let mut counts = [0.0; 2];
            for (i, &l) in r.mask.labels().iter().enumerate() {
                let slot = match l {
                    SKIN => 0,
                    BACKGROUND => 1,
                    _ => continue,
                };
                counts[slot] += 1.0;
                for (sum, v) in sums[slot]
                    .iter_mut()
                    .zip(r.image.pixel(i / r.image.width(), i % r.image.width()))
                {
                    *sum += v;
                }
            }
            total += (0..3)
                .map(|c| (sums[0][c] / counts[0] - sums[1][c] / counts[1]).abs())
                .sum::<f64>()
                / 3.0;
            n += 1;
        }
        total / n as f64
    }

    #[test]
    fn raising_bias_lowers_dark_group_contrast() {
        let levels = [0.0, 0.25, 0.5, 0.75, 1.0].map(dark_group_contrast);
        for w in levels.windows(2) {
            assert!(w[1] < w[0], "{levels:?}");
        }
    }

    #[test]
    fn light_group_is_unaffected_by_bias() {
        let base = small(2, 12);
        let biased = GenConfig {
            bias_contrast: 0.9,
            ..base.clone()
        };
        for (a, b) in generate_dataset(&base)
            .unwrap()
            .iter()
            .zip(generate_dataset(&biased).unwrap())
        {
            if a.attributes.get("dark_skin") == Some(0) {
                assert_eq!(encode_ppm(&a.image), encode_ppm(&b.image));
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small(0, 0);
        assert!(cfg.validate().is_err());
        cfg.count = 1;
        cfg.bias_contrast = 1.5;
        assert!(cfg.validate().is_err());
        cfg.bias_contrast = 0.5;
        cfg.set_prob("smiling", -0.1);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<usize> = (0..10).collect();
        let (train, test) = split_dataset(&items, 0.8, 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert_eq!(
            (train.clone(), test.clone()),
            split_dataset(&items, 0.8, 1).unwrap()
        );
        assert!(split_dataset(&items, 0.01, 1).is_err());
        assert!(split_dataset(&items, 1.0, 1).is_err());
        assert!(split_dataset(&[1], 0.5, 1).is_err());
    }

    #[test]
    fn split_preserves_multiset() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let n = rng.random_range(2..200);
            let items: Vec<u32> = (0..n).map(|_| rng.random_range(0..20)).collect();
            let frac = rng.random_range(0.3..0.7);
            let (mut a, b) = split_dataset(&items, frac, rng.random()).unwrap();
            a.extend(b);
            a.sort_unstable();
            let mut sorted = items.clone();
            sorted.sort_unstable();
            assert_eq!(a, sorted);
        }
    }
}
