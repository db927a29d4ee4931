use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::math::{cos, sin, sqrt};

const MAX_BETA: f64 = 0.999;
const COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Variance schedule over `steps` diffusion steps, indexed `1..=steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    #[serde(rename = "T")]
    pub steps: usize,
    pub kind: ScheduleKind,
    betas: Vec<f64>,
    #[serde(skip)]
    alpha_bars: Vec<f64>,
    #[serde(skip)]
    posterior_vars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas run from `1e-4` to `0.02` rescaled by `1000 / steps`, so the
    /// terminal signal level stays near that of a 1000-step schedule.
    pub fn new(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps < 2 {
            return Err(config(format!("schedule needs at least 2 steps, got {steps}")));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                let scale = 1000.0 / steps as f64;
                let (lo, hi) = (1e-4 * scale, 0.02 * scale);
                (0..steps)
                    .map(|i| (lo + (hi - lo) * i as f64 / (steps - 1) as f64).min(MAX_BETA))
                    .collect()
            }
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * PI / 2.0;
                    cos(x) * cos(x)
                };
                (1..=steps)
                    .map(|t| (1.0 - f(t) / f(t - 1)).clamp(0.0, MAX_BETA))
                    .collect()
            }
        };
        Self::from_betas(steps, kind, betas)
    }

    pub fn from_betas(steps: usize, kind: ScheduleKind, betas: Vec<f64>) -> Result<Self> {
        if betas.len() != steps || steps < 2 {
            return Err(config("beta list length must equal the step count (>= 2)"));
        }
        if !betas.iter().all(|&b| b > 0.0 && b < 1.0) {
            return Err(config("betas must lie in (0, 1)"));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(config("betas must be nondecreasing"));
        }
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for &b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        if acc >= 1e-3 {
            return Err(config(format!("terminal alpha_bar {acc:.3e} is not below 1e-3")));
        }
        let posterior_vars = (0..steps)
            .map(|i| {
                if i == 0 {
                    0.0
                } else {
                    (1.0 - alpha_bars[i - 1]) / (1.0 - alpha_bars[i]) * betas[i]
                }
            })
            .collect();
        Ok(Self {
            steps,
            kind,
            betas,
            alpha_bars,
            posterior_vars,
        })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `β_t` for `t` in `1..=steps`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Posterior variance `β̃_t`; zero at `t = 1`.
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_vars[t - 1]
    }

    pub fn signal_scale(&self, t: usize) -> f64 {
        sqrt(self.alpha_bar(t))
    }

    pub fn noise_scale(&self, t: usize) -> f64 {
        sqrt(1.0 - self.alpha_bar(t))
    }
}

/// `(t/T, sin 2πt/T, cos 2πt/T)`.
pub fn time_embedding(t: usize, steps: usize) -> [f64; 3] {
    let x = t as f64 / steps as f64;
    [x, sin(2.0 * PI * x), cos(2.0 * PI * x)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_default_reaches_noise() {
        let s = NoiseSchedule::new(200, ScheduleKind::Linear).unwrap();
        let product: f64 = s.betas().iter().map(|b| 1.0 - b).product();
        assert!(product < 1e-3);
        assert!((s.alpha_bar(200) - product).abs() < 1e-15);
    }

    #[test]
    fn betas_nondecreasing_for_both_kinds() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            for steps in [2, 3, 10, 200, 1000] {
                let s = NoiseSchedule::new(steps, kind).unwrap();
                assert!(s.betas().windows(2).all(|w| w[0] <= w[1]), "{kind:?} {steps}");
                assert!(s.beta(1) > 0.0 && s.beta(steps) < 1.0);
            }
        }
    }

    #[test]
    fn minimal_and_invalid_lengths() {
        assert!(NoiseSchedule::new(2, ScheduleKind::Linear).is_ok());
        assert!(NoiseSchedule::new(1, ScheduleKind::Linear).is_err());
        assert!(NoiseSchedule::new(0, ScheduleKind::Cosine).is_err());
    }

    #[test]
    fn posterior_variance_matches_definition() {
        let s = NoiseSchedule::new(50, ScheduleKind::Linear).unwrap();
        assert_eq!(s.posterior_var(1), 0.0);
        for t in 2..=50 {
            let mut ab_prev = 1.0;
            for u in 1..t {
                ab_prev *= 1.0 - s.beta(u);
            }
            let ab = ab_prev * (1.0 - s.beta(t));
            let expected = (1.0 - ab_prev) / (1.0 - ab) * s.beta(t);
            assert!((s.posterior_var(t) - expected).abs() < 1e-12);
            assert!(s.posterior_var(t) <= s.beta(t));
        }
    }

    #[test]
    fn serde_keeps_derived_quantities() {
        let s = NoiseSchedule::new(20, ScheduleKind::Cosine).unwrap();
        let back = NoiseSchedule::from_betas(s.steps, s.kind, s.betas().to_vec()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn embedding_endpoints() {
        let e = time_embedding(0, 200);
        assert_eq!(e, [0.0, 0.0, 1.0]);
        let e = time_embedding(100, 200);
        assert!((e[0] - 0.5).abs() < 1e-15 && e[1].abs() < 1e-12 && (e[2] + 1.0).abs() < 1e-12);
    }
}
