//! Input corruptions for robustness sweeps.
//!
//! Severity in `[0, 1]` maps to a physical parameter per kind:
//!
//! | kind            | parameter                                             |
//! |-----------------|-------------------------------------------------------|
//! | `gaussian_noise`| per-channel noise σ = severity                         |
//! | `blur`          | box radius `round(5·severity)`, edges clamped          |
//! | `occlusion`     | mid-gray rectangle covering `severity·H·W` pixels      |
//! | `salt_pepper`   | `floor(severity·H·W)` pixels set to black or white     |
//! | `brightness`    | `+severity` on every channel                           |
//! | `darkness`      | `−severity` on every channel                           |
//!
//! All results are clamped to `[0, 1]`; stochastic kinds draw from the stream
//! keyed by `PerturbSpec::seed`.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::ImageTensor;
use crate::rng::{self, tag};
use crate::{Error, Result};

pub const OCCLUSION_FILL: f64 = 0.5;
pub const MAX_BLUR_RADIUS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    GaussianNoise,
    Blur,
    Occlusion,
    SaltPepper,
    Brightness,
    Darkness,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 6] = [
        PerturbKind::GaussianNoise,
        PerturbKind::Blur,
        PerturbKind::Occlusion,
        PerturbKind::SaltPepper,
        PerturbKind::Brightness,
        PerturbKind::Darkness,
    ];

    /// The corruption kinds of the robustness sweep (as opposed to the
    /// photometric shifts).
    pub const STOCHASTIC: [PerturbKind; 4] = [
        PerturbKind::GaussianNoise,
        PerturbKind::Blur,
        PerturbKind::Occlusion,
        PerturbKind::SaltPepper,
    ];

    pub fn token(self) -> &'static str {
        match self {
            PerturbKind::GaussianNoise => "gaussian_noise",
            PerturbKind::Blur => "blur",
            PerturbKind::Occlusion => "occlusion",
            PerturbKind::SaltPepper => "salt_pepper",
            PerturbKind::Brightness => "brightness",
            PerturbKind::Darkness => "darkness",
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerturbKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| {
                let tokens: Vec<_> = PerturbKind::ALL.iter().map(|k| k.token()).collect();
                Error::config(format!(
                    "unknown perturbation `{s}` (expected one of: {})",
                    tokens.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub severity: f64,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn new(kind: PerturbKind, severity: f64, seed: u64) -> Result<Self> {
        check_severity(severity)?;
        Ok(Self {
            kind,
            severity,
            seed,
        })
    }
}

fn check_severity(severity: f64) -> Result<()> {
    if (0.0..=1.0).contains(&severity) {
        Ok(())
    } else {
        Err(Error::config(format!("severity {severity} outside [0, 1]")))
    }
}

pub fn blur_radius(severity: f64) -> usize {
    (severity * MAX_BLUR_RADIUS).round() as usize
}

/// Rectangle `(x0, y0, width, height)` already clipped to the image.
pub fn occlusion_rect(
    height: usize,
    width: usize,
    severity: f64,
    rng: &mut impl Rng,
) -> (usize, usize, usize, usize) {
    let area = severity * (height * width) as f64;
    let aspect: f64 = rng.random_range(0.5..=2.0);
    let rw = ((area * aspect).sqrt().round() as usize).min(width);
    let rh = ((area / aspect).sqrt().round() as usize).min(height);
    // centre uniform over the image, then clip
    let cx: f64 = rng.random_range(0.0..width as f64);
    let cy: f64 = rng.random_range(0.0..height as f64);
    let x0 = (cx - rw as f64 / 2.0).round().max(0.0) as usize;
    let y0 = (cy - rh as f64 / 2.0).round().max(0.0) as usize;
    let x0 = x0.min(width);
    let y0 = y0.min(height);
    let x1 = (x0 + rw).min(width);
    let y1 = (y0 + rh).min(height);
    (x0, y0, x1 - x0, y1 - y0)
}

pub fn apply_perturbation(img: &ImageTensor, spec: &PerturbSpec) -> Result<ImageTensor> {
    check_severity(spec.severity)?;
    let mut out = img.clone();
    let mut rng = rng::substream(spec.seed, tag::PERTURB, &[spec.kind as u64]);
    let (h, w) = (img.height(), img.width());
    let s = spec.severity;
    match spec.kind {
        PerturbKind::GaussianNoise => {
            if s > 0.0 {
                let normal = Normal::new(0.0, s).expect("severity is finite");
                for v in out.data_mut() {
                    *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
        }
        PerturbKind::Blur => {
            let r = blur_radius(s);
            if r > 0 {
                box_blur(img, out.data_mut(), r);
            }
        }
        PerturbKind::Occlusion => {
            let (x0, y0, rw, rh) = occlusion_rect(h, w, s, &mut rng);
            let data = out.data_mut();
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    data[(y * w + x) * 3..(y * w + x + 1) * 3].fill(OCCLUSION_FILL);
                }
            }
        }
        PerturbKind::SaltPepper => {
            let n = (s * (h * w) as f64).floor() as usize;
            let picked = index::sample(&mut rng, h * w, n.min(h * w));
            let data = out.data_mut();
            for p in picked.iter() {
                let v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                data[p * 3..p * 3 + 3].fill(v);
            }
        }
        PerturbKind::Brightness => {
            for v in out.data_mut() {
                *v = (*v + s).clamp(0.0, 1.0);
            }
        }
        PerturbKind::Darkness => {
            for v in out.data_mut() {
                *v = (*v - s).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Mean over the `(2r+1)²` window with coordinates clamped to the border.
fn box_blur(img: &ImageTensor, out: &mut [f64], r: usize) {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let r = r as isize;
    let norm = ((2 * r + 1) * (2 * r + 1)) as f64;
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for dy in -r..=r {
                let sy = (y + dy).clamp(0, h - 1) as usize;
                for dx in -r..=r {
                    let sx = (x + dx).clamp(0, w - 1) as usize;
                    for (a, v) in acc.iter_mut().zip(img.pixel(sy, sx)) {
                        *a += v;
                    }
                }
            }
            let o = ((y * w + x) * 3) as usize;
            for c in 0..3 {
                out[o + c] = (acc[c] / norm).clamp(0.0, 1.0);
            }
        }
    }
}

/// One perturbed copy per severity; element `i` uses seed `derive(seed, i)`.
pub fn severity_sweep(
    img: &ImageTensor,
    kind: PerturbKind,
    severities: &[f64],
    seed: u64,
) -> Result<Vec<ImageTensor>> {
    if severities.is_empty() {
        return Err(Error::config("severity sweep needs at least one severity"));
    }
    severities
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let spec = PerturbSpec::new(kind, s, rng::derive_seed(seed, &[i as u64]))?;
            apply_perturbation(img, &spec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_image(seed: u64, h: usize, w: usize) -> ImageTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(h, w, (0..h * w * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn changed_pixels(a: &ImageTensor, b: &ImageTensor) -> usize {
        a.data()
            .chunks_exact(3)
            .zip(b.data().chunks_exact(3))
            .filter(|(x, y)| x != y)
            .count()
    }

    #[test]
    fn zero_severity_is_identity() {
        let img = random_image(1, 9, 7);
        for kind in PerturbKind::ALL {
            let out = apply_perturbation(&img, &PerturbSpec::new(kind, 0.0, 5).unwrap()).unwrap();
            assert_eq!(out, img, "{kind}");
        }
        // radius rounds to 0 below 0.1
        let out = apply_perturbation(&img, &PerturbSpec::new(PerturbKind::Blur, 0.09, 5).unwrap())
            .unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn brightness_saturates() {
        let img = random_image(2, 4, 4);
        let out = apply_perturbation(
            &img,
            &PerturbSpec::new(PerturbKind::Brightness, 1.0, 0).unwrap(),
        )
        .unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
        let out = apply_perturbation(
            &img,
            &PerturbSpec::new(PerturbKind::Darkness, 1.0, 0).unwrap(),
        )
        .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_noise_has_requested_spread() {
        let img = ImageTensor::filled(512, 512, 0.5).unwrap();
        let out = apply_perturbation(
            &img,
            &PerturbSpec::new(PerturbKind::GaussianNoise, 0.1, 42).unwrap(),
        )
        .unwrap();
        let diffs: Vec<f64> = out
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| a - b)
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        // clamping at ±5σ removes a negligible tail
        assert!((sd - 0.1).abs() < 0.005, "{sd}");
    }

    #[test]
    fn blur_averages_with_clamped_edges() {
        let mut data = vec![0.0; 3 * 3 * 3];
        data[4 * 3] = 0.9;
        let img = ImageTensor::new(3, 3, data).unwrap();
        let out = apply_perturbation(&img, &PerturbSpec::new(PerturbKind::Blur, 0.2, 0).unwrap())
            .unwrap();
        assert_eq!(blur_radius(0.2), 1);
        for y in 0..3 {
            for x in 0..3 {
                assert!((out.get(y, x, 0) - 0.1).abs() < 1e-15);
                assert_eq!(out.get(y, x, 1), 0.0);
            }
        }
    }

    #[test]
    fn salt_pepper_changes_exact_count() {
        let img = ImageTensor::filled(20, 13, 0.5).unwrap();
        for (i, s) in [0.1, 0.33, 0.5, 1.0].into_iter().enumerate() {
            let out = apply_perturbation(
                &img,
                &PerturbSpec::new(PerturbKind::SaltPepper, s, i as u64).unwrap(),
            )
            .unwrap();
            assert_eq!(changed_pixels(&img, &out), (s * 260.0_f64).floor() as usize);
            assert!(out.data().iter().all(|&v| v == 0.0 || v == 0.5 || v == 1.0));
        }
    }

    #[test]
    fn occlusion_area_is_bounded() {
        let img = ImageTensor::filled(32, 24, 0.1).unwrap();
        for seed in 0..50 {
            for s in [0.1, 0.3, 0.5] {
                let out = apply_perturbation(
                    &img,
                    &PerturbSpec::new(PerturbKind::Occlusion, s, seed).unwrap(),
                )
                .unwrap();
                let area = s * 768.0;
                let slack = 0.5 * ((area * 2.0).sqrt() + (area / 0.5).sqrt()) + 0.25;
                let changed = changed_pixels(&img, &out);
                assert!(changed as f64 <= area.ceil() + slack, "{changed} > {area}");
                assert!(out.data().iter().all(|&v| v == 0.1 || v == OCCLUSION_FILL));
            }
        }
    }

    #[test]
    fn sweep_shape_and_determinism() {
        let img = random_image(3, 8, 8);
        let a = severity_sweep(&img, PerturbKind::GaussianNoise, &[0.1, 0.3, 0.5], 9).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(
            a,
            severity_sweep(&img, PerturbKind::GaussianNoise, &[0.1, 0.3, 0.5], 9).unwrap()
        );
        assert!(severity_sweep(&img, PerturbKind::Blur, &[], 9).is_err());
        assert!(severity_sweep(&img, PerturbKind::Blur, &[1.5], 9).is_err());
    }

    #[test]
    fn outputs_stay_in_range_and_input_is_untouched() {
        let img = random_image(4, 10, 10);
        let copy = img.clone();
        for kind in PerturbKind::ALL {
            for s in [0.1, 0.5, 0.9] {
                let out = apply_perturbation(&img, &PerturbSpec::new(kind, s, 3).unwrap()).unwrap();
                assert_eq!((out.height(), out.width()), (10, 10));
                assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        assert_eq!(img, copy);
    }

    #[test]
    fn tokens_parse() {
        for kind in PerturbKind::ALL {
            assert_eq!(kind.token().parse::<PerturbKind>().unwrap(), kind);
        }
        assert!("fog".parse::<PerturbKind>().is_err());
    }
}
