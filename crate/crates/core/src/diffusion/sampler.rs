use alloc::format;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::DenoiserModel;
use super::schedule::NoiseSchedule;
use crate::error::{contract, Result};
use crate::math::sqrt;
use crate::noise::standard_normal;

/// A latent vector at diffusion time `t` (`0` is clean, `T` is noise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub t: usize,
}

impl LatentState {
    pub fn new(z: Vec<f64>, t: usize) -> Self {
        Self { z, t }
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().all(|v| v.is_finite())
    }
}

fn check_len(what: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(contract(format!("{what} has dimension {found}, expected {expected}")));
    }
    Ok(())
}

/// Closed-form marginal `√ᾱ_t·z0 + √(1−ᾱ_t)·ε` with explicit `ε`.
pub fn forward_noise_with(z0: &[f64], t: usize, schedule: &NoiseSchedule, eps: &[f64]) -> Result<LatentState> {
    if t == 0 || t > schedule.steps {
        return Err(contract(format!(
            "forward_noise needs 1 <= t <= {}, got {t}",
            schedule.steps
        )));
    }
    check_len("noise", eps.len(), z0.len())?;
    let (a, b) = (schedule.signal_scale(t), schedule.noise_scale(t));
    Ok(LatentState::new(
        z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect(),
        t,
    ))
}

pub fn forward_noise<R: Rng + ?Sized>(
    z0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<LatentState> {
    let eps = standard_normal(rng, z0.len());
    forward_noise_with(z0, t, schedule, &eps)
}

/// One application of the stepwise kernel `q(z_t | z_{t-1})`.
pub fn forward_step(z_prev: &[f64], t: usize, schedule: &NoiseSchedule, eps: &[f64]) -> Vec<f64> {
    let b = schedule.beta(t);
    let (a, s) = (sqrt(1.0 - b), sqrt(b));
    z_prev.iter().zip(eps).map(|(z, e)| a * z + s * e).collect()
}

/// `μ̃(z_t, t) = (z_t − β_t/√(1−ᾱ_t)·ε̂) / √(1−β_t)`.
pub fn posterior_mean(z: &[f64], eps_hat: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let b = schedule.beta(t);
    let coef = b / schedule.noise_scale(t);
    let inv = 1.0 / sqrt(1.0 - b);
    z.iter().zip(eps_hat).map(|(z, e)| (z - coef * e) * inv).collect()
}

/// Reverse update with an optional drift `h·β̃_t·g` added to the posterior
/// mean. With no drift this is the plain ancestral step.
pub fn reverse_step_with_drift(
    s: &LatentState,
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    drift: Option<(&[f64], f64)>,
    xi: &[f64],
) -> Result<LatentState> {
    if s.t == 0 || s.t > schedule.steps {
        return Err(contract(format!(
            "reverse step needs 1 <= t <= {}, got {}",
            schedule.steps, s.t
        )));
    }
    check_len("latent", s.z.len(), model.d_z)?;
    check_len("noise", xi.len(), model.d_z)?;
    if let Some((g, _)) = drift {
        check_len("guidance vector", g.len(), model.d_z)?;
    }
    let eps_hat = model.predict_eps(&s.z, s.t);
    let mut z = posterior_mean(&s.z, &eps_hat, s.t, schedule);
    let var = schedule.posterior_var(s.t);
    if let Some((g, h)) = drift {
        for (v, gi) in z.iter_mut().zip(g) {
            *v += h * var * gi;
        }
    }
    if var > 0.0 {
        let sd = sqrt(var);
        for (v, x) in z.iter_mut().zip(xi) {
            *v += sd * x;
        }
    }
    Ok(LatentState::new(z, s.t - 1))
}

pub fn reverse_step(
    s: &LatentState,
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    xi: &[f64],
) -> Result<LatentState> {
    reverse_step_with_drift(s, model, schedule, None, xi)
}

/// `k` reverse steps consuming `noises` in time order `t, t−1, …, t−k+1`.
pub fn macro_step(
    s: &LatentState,
    k: usize,
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    noises: &[Vec<f64>],
) -> Result<LatentState> {
    if k == 0 || k > s.t {
        return Err(contract(format!("macro step length {k} outside 1..={}", s.t)));
    }
    if noises.len() != k {
        return Err(contract(format!(
            "macro step of length {k} got {} noise vectors",
            noises.len()
        )));
    }
    let mut cur = s.clone();
    for xi in noises {
        cur = reverse_step(&cur, model, schedule, xi)?;
    }
    Ok(cur)
}
