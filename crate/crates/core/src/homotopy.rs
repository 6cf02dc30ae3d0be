//! Epoch-indexed loss weights `(α, β, γ)` on the probability simplex.
//!
//! Progress through training is `s = t / (T − 1)` (0 when `T = 1`), so the
//! first epoch sits at the start weights and the last epoch reaches the end
//! weights exactly. Epochs are 0-based.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

/// Weights on the accuracy, robustness and fairness losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ScheduleWeights {
    pub const ACCURACY_ONLY: Self = Self {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
    };

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.alpha, self.beta, self.gamma];
        if parts.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config(format!("weights {self} outside [0, 1]")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::config(format!("weights {self} do not sum to 1")));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.alpha + self.beta + self.gamma
    }
}

impl fmt::Display for ScheduleWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.alpha, self.beta, self.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Sigmoid,
    Piecewise,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 3] = [
        ScheduleKind::Linear,
        ScheduleKind::Sigmoid,
        ScheduleKind::Piecewise,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Sigmoid => "sigmoid",
            ScheduleKind::Piecewise => "piecewise",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "sigmoid" => Ok(ScheduleKind::Sigmoid),
            "piecewise" => Ok(ScheduleKind::Piecewise),
            other => Err(Error::config(format!(
                "unknown schedule `{other}` (expected one of: linear, sigmoid, piecewise)"
            ))),
        }
    }
}

/// A piecewise stage: active once progress reaches `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub threshold: f64,
    pub weights: ScheduleWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub total_epochs: usize,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub beta_end: f64,
    pub gamma_end: f64,
    pub sigmoid_steepness: f64,
    pub piecewise_stages: Vec<Stage>,
}

impl ScheduleConfig {
    pub fn new(kind: ScheduleKind, total_epochs: usize) -> Self {
        Self {
            kind,
            total_epochs,
            alpha_start: 1.0,
            alpha_end: 0.4,
            beta_end: 0.3,
            gamma_end: 0.3,
            sigmoid_steepness: 10.0,
            piecewise_stages: vec![
                Stage {
                    threshold: 0.0,
                    weights: ScheduleWeights::ACCURACY_ONLY,
                },
                Stage {
                    threshold: 1.0 / 3.0,
                    weights: ScheduleWeights {
                        alpha: 0.6,
                        beta: 0.2,
                        gamma: 0.2,
                    },
                },
                Stage {
                    threshold: 2.0 / 3.0,
                    weights: ScheduleWeights {
                        alpha: 0.4,
                        beta: 0.3,
                        gamma: 0.3,
                    },
                },
            ],
        }
    }

    /// A schedule pinned at `(1, 0, 0)` for every epoch.
    pub fn constant_accuracy(total_epochs: usize) -> Self {
        let mut cfg = Self::new(ScheduleKind::Piecewise, total_epochs);
        cfg.piecewise_stages.truncate(1);
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::config("schedule needs at least one epoch"));
        }
        // β and γ start at 0, so α must start at 1 for the sum to hold.
        if (self.alpha_start - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::config(format!(
                "alpha_start must be 1 (beta and gamma start at 0), got {}",
                self.alpha_start
            )));
        }
        ScheduleWeights::new(self.alpha_end, self.beta_end, self.gamma_end)?;
        if self.alpha_end > self.alpha_start {
            return Err(Error::config("alpha_end must not exceed alpha_start"));
        }
        if !(self.sigmoid_steepness > 0.0 && self.sigmoid_steepness.is_finite()) {
            return Err(Error::config("sigmoid steepness must be positive"));
        }
        if self.kind == ScheduleKind::Piecewise {
            let first = self
                .piecewise_stages
                .first()
                .ok_or_else(|| Error::config("piecewise schedule has no stages"))?;
            if first.threshold != 0.0 {
                return Err(Error::config("first piecewise stage must start at 0"));
            }
            for pair in self.piecewise_stages.windows(2) {
                if pair[1].threshold <= pair[0].threshold {
                    return Err(Error::config("piecewise thresholds must increase"));
                }
            }
            for stage in &self.piecewise_stages {
                stage.weights.validate()?;
            }
        }
        Ok(())
    }

    fn progress(&self, t: usize) -> f64 {
        if self.total_epochs == 1 {
            0.0
        } else {
            t as f64 / (self.total_epochs - 1) as f64
        }
    }

    fn along_line(&self, s: f64) -> ScheduleWeights {
        ScheduleWeights {
            alpha: self.alpha_start + (self.alpha_end - self.alpha_start) * s,
            beta: self.beta_end * s,
            gamma: self.gamma_end * s,
        }
    }

    fn logistic(&self, s: f64) -> f64 {
        1.0 / (1.0 + (-self.sigmoid_steepness * (s - 0.5)).exp())
    }

    /// Logistic curve rescaled so that it maps 0 → 0 and 1 → 1.
    fn normalized_logistic(&self, s: f64) -> f64 {
        let (lo, hi) = (self.logistic(0.0), self.logistic(1.0));
        if s <= 0.0 {
            0.0
        } else if s >= 1.0 {
            1.0
        } else {
            (self.logistic(s) - lo) / (hi - lo)
        }
    }
}

/// `h(t)`: the weights for 0-based epoch `t`.
pub fn weights_at(cfg: &ScheduleConfig, t: usize) -> Result<ScheduleWeights> {
    if t >= cfg.total_epochs {
        return Err(Error::EpochRange {
            epoch: t,
            total: cfg.total_epochs,
        });
    }
    let s = cfg.progress(t);
    Ok(match cfg.kind {
        ScheduleKind::Linear => cfg.along_line(s),
        ScheduleKind::Sigmoid => cfg.along_line(cfg.normalized_logistic(s)),
        ScheduleKind::Piecewise => cfg
            .piecewise_stages
            .iter()
            .rev()
            .find(|stage| stage.threshold <= s)
            .map(|stage| stage.weights)
            .unwrap_or(ScheduleWeights::ACCURACY_ONLY),
    })
}

/// Weights for every epoch `0..T`.
pub fn schedule_table(cfg: &ScheduleConfig) -> Result<Vec<ScheduleWeights>> {
    cfg.validate()?;
    (0..cfg.total_epochs).map(|t| weights_at(cfg, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(w: ScheduleWeights, a: f64, b: f64, g: f64) -> bool {
        (w.alpha - a).abs() < 1e-12 && (w.beta - b).abs() < 1e-12 && (w.gamma - g).abs() < 1e-12
    }

    #[test]
    fn linear_endpoints() {
        let cfg = ScheduleConfig::new(ScheduleKind::Linear, 30);
        assert_eq!(weights_at(&cfg, 0).unwrap(), ScheduleWeights::ACCURACY_ONLY);
        assert!(close(weights_at(&cfg, 29).unwrap(), 0.4, 0.3, 0.3));
        assert!(matches!(
            weights_at(&cfg, 30),
            Err(Error::EpochRange {
                epoch: 30,
                total: 30
            })
        ));
    }

    #[test]
    fn piecewise_stage_lookup() {
        let cfg = ScheduleConfig::new(ScheduleKind::Piecewise, 30);
        // 9/29 < 1/3 <= 10/29
        assert!(close(weights_at(&cfg, 9).unwrap(), 1.0, 0.0, 0.0));
        assert!(close(weights_at(&cfg, 10).unwrap(), 0.6, 0.2, 0.2));
        assert!(close(weights_at(&cfg, 20).unwrap(), 0.4, 0.3, 0.3));
    }

    #[test]
    fn sigmoid_endpoints_match_linear() {
        for t_total in [2, 5, 30] {
            let lin = ScheduleConfig::new(ScheduleKind::Linear, t_total);
            let sig = ScheduleConfig::new(ScheduleKind::Sigmoid, t_total);
            for t in [0, t_total - 1] {
                assert_eq!(weights_at(&lin, t).unwrap(), weights_at(&sig, t).unwrap());
            }
        }
    }

    #[test]
    fn single_epoch_table_is_start_weights() {
        for kind in ScheduleKind::ALL {
            let table = schedule_table(&ScheduleConfig::new(kind, 1)).unwrap();
            assert_eq!(table, vec![ScheduleWeights::ACCURACY_ONLY]);
        }
    }

    #[test]
    fn linear_alpha_has_zero_second_difference() {
        let table = schedule_table(&ScheduleConfig::new(ScheduleKind::Linear, 30)).unwrap();
        for w in table.windows(3) {
            let second = w[2].alpha - 2.0 * w[1].alpha + w[0].alpha;
            assert!(second.abs() <= 1e-12, "{second}");
        }
    }

    #[test]
    fn constant_schedule_never_leaves_accuracy_corner() {
        let table = schedule_table(&ScheduleConfig::constant_accuracy(12)).unwrap();
        assert!(table.iter().all(|&w| w == ScheduleWeights::ACCURACY_ONLY));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ScheduleConfig::new(ScheduleKind::Linear, 10);
        cfg.beta_end = 0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ScheduleConfig::new(ScheduleKind::Piecewise, 10);
        cfg.piecewise_stages[1].weights.alpha = 0.9;
        assert!(cfg.validate().is_err());
        assert!(ScheduleConfig::new(ScheduleKind::Linear, 0)
            .validate()
            .is_err());
        assert!("cosine".parse::<ScheduleKind>().is_err());
    }
}
