//! DDPM noise schedule and the closed-form forward, x0-estimate, and posterior
//! step algebra used by every sampler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// How the posterior noise scale is derived from the schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaConvention {
    /// `σ = sqrt((1 - ᾱ_prev) / (1 - ᾱ_t) · β_t)`, the DDPM posterior standard deviation.
    #[default]
    PosteriorStd,
    /// `σ = (1 - ᾱ_prev) / (1 - ᾱ_t) · β_t` used directly as the noise scale.
    Variance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub inference_steps: usize,
    pub sigma: SigmaConvention,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            inference_steps: 50,
            sigma: SigmaConvention::PosteriorStd,
        }
    }
}

/// One sampler transition from training timestep `t` down to `prev < t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transition {
    pub t: usize,
    pub prev: usize,
}

impl Transition {
    /// The single training-level step `t -> t - 1`.
    pub fn single(t: usize) -> Self {
        Self {
            t,
            prev: t.saturating_sub(1),
        }
    }
}

/// A latent (or pixel-space) sample for one view at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentImage {
    pub data: Image,
    pub timestep: usize,
    pub view_id: usize,
}

impl LatentImage {
    pub fn new(data: Image, timestep: usize, view_id: usize) -> Self {
        Self {
            data,
            timestep,
            view_id,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// Indexed by training timestep, `alpha_bars[0] == 1`.
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
    timestep_map: Vec<usize>,
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let t_train = config.train_steps;
        if t_train < 1 {
            return Err(Error::Schedule("train_steps must be positive".into()));
        }
        if config.inference_steps < 1 || config.inference_steps > t_train {
            return Err(Error::Schedule(format!(
                "inference_steps {} must lie in [1, {t_train}]",
                config.inference_steps
            )));
        }
        if !(config.beta_start > 0.0 && config.beta_end < 1.0 && config.beta_start <= config.beta_end) {
            return Err(Error::Schedule(format!(
                "beta range [{}, {}] must satisfy 0 < start <= end < 1",
                config.beta_start, config.beta_end
            )));
        }
        let betas: Vec<f64> = (0..t_train)
            .map(|i| {
                if t_train == 1 {
                    config.beta_start
                } else {
                    config.beta_start + (config.beta_end - config.beta_start) * i as f64 / (t_train - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(t_train + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let steps = config.inference_steps;
        let timestep_map: Vec<usize> = (0..steps)
            .map(|i| ((t_train * (steps - i)) as f64 / steps as f64).round() as usize)
            .collect();
        let mut schedule = Self {
            config,
            betas,
            alphas,
            alpha_bars,
            sigmas: Vec::new(),
            timestep_map,
        };
        schedule.sigmas = (0..=t_train)
            .map(|t| {
                if t == 0 {
                    0.0
                } else {
                    schedule.sigma(Transition::single(t))
                }
            })
            .collect();
        Ok(schedule)
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn train_steps(&self) -> usize {
        self.config.train_steps
    }

    pub fn inference_steps(&self) -> usize {
        self.config.inference_steps
    }

    /// `β_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `ᾱ_0 ..= ᾱ_T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Per training timestep noise scale of the single-step transition `t -> t-1`.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Training timestep of each inference step, strictly decreasing.
    pub fn timestep_map(&self) -> &[usize] {
        &self.timestep_map
    }

    pub fn transition(&self, step: usize) -> Transition {
        Transition {
            t: self.timestep_map[step],
            prev: self.timestep_map.get(step + 1).copied().unwrap_or(0),
        }
    }

    pub fn is_final_step(&self, step: usize) -> bool {
        step + 1 == self.timestep_map.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.config.train_steps {
            return Err(Error::Schedule(format!(
                "timestep {t} outside [0, {}]",
                self.config.train_steps
            )));
        }
        Ok(())
    }

    /// Effective `(α, β)` of a possibly strided transition.
    pub fn transition_alpha_beta(&self, tr: Transition) -> (f64, f64) {
        let alpha = self.alpha_bar(tr.t) / self.alpha_bar(tr.prev);
        (alpha, 1.0 - alpha)
    }

    pub fn sigma(&self, tr: Transition) -> f64 {
        let (_, beta) = self.transition_alpha_beta(tr);
        let var = (1.0 - self.alpha_bar(tr.prev)) / (1.0 - self.alpha_bar(tr.t)) * beta;
        match self.config.sigma {
            SigmaConvention::PosteriorStd => var.max(0.0).sqrt(),
            SigmaConvention::Variance => var.max(0.0),
        }
    }

    /// Weights `(c_x0, c_xt)` of the posterior mean `μ = c_x0·x̂₀ + c_xt·x_t`.
    pub fn posterior_coefficients(&self, tr: Transition) -> (f64, f64) {
        let (alpha, beta) = self.transition_alpha_beta(tr);
        let ab_t = self.alpha_bar(tr.t);
        let ab_prev = self.alpha_bar(tr.prev);
        (
            ab_prev.sqrt() * beta / (1.0 - ab_t),
            alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t),
        )
    }

    /// `√ᾱ_t·x₀ + √(1-ᾱ_t)·ε`
    pub fn forward_noise(&self, x0: &LatentImage, t: usize, noise: &Image) -> Result<LatentImage> {
        self.check_t(t)?;
        x0.data.ensure_same_shape(noise, "forward_noise noise")?;
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut out = x0.data.clone();
        for (o, n) in out.data_mut().iter_mut().zip(noise.data()) {
            *o = a * *o + b * n;
        }
        Ok(LatentImage::new(out, t, x0.view_id))
    }

    /// `(x_t - √(1-ᾱ_t)·ε) / √ᾱ_t`
    pub fn estimate_x0(&self, x_t: &LatentImage, epsilon: &Image) -> Result<LatentImage> {
        let t = x_t.timestep;
        self.check_t(t)?;
        if t == 0 {
            return Err(Error::Schedule("estimate_x0 requires t > 0".into()));
        }
        x_t.data.ensure_same_shape(epsilon, "estimate_x0 epsilon")?;
        let ab = self.alpha_bar(t);
        if !(ab > 0.0) {
            return Err(Error::Schedule(format!("alpha_bar({t}) is zero")));
        }
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut out = x_t.data.clone();
        for (o, e) in out.data_mut().iter_mut().zip(epsilon.data()) {
            *o = (*o - b * e) / a;
        }
        Ok(LatentImage::new(out, 0, x_t.view_id))
    }

    /// `μ + σ·ε` for the transition, with `σ = 0` on the step that lands on `t = 0`.
    pub fn posterior_step(
        &self,
        x_t: &LatentImage,
        x0_hat: &Image,
        tr: Transition,
        noise: &Image,
    ) -> Result<LatentImage> {
        self.check_t(tr.t)?;
        if tr.t == 0 || tr.prev >= tr.t {
            return Err(Error::Schedule(format!("invalid transition {} -> {}", tr.t, tr.prev)));
        }
        x_t.data.ensure_same_shape(x0_hat, "posterior_step x0")?;
        x_t.data.ensure_same_shape(noise, "posterior_step noise")?;
        let (c0, ct) = self.posterior_coefficients(tr);
        let sigma = if tr.prev == 0 { 0.0 } else { self.sigma(tr) };
        let mut out = x_t.data.clone();
        for ((o, x0), n) in out.data_mut().iter_mut().zip(x0_hat.data()).zip(noise.data()) {
            *o = c0 * x0 + ct * *o + sigma * n;
        }
        Ok(LatentImage::new(out, tr.prev, x_t.view_id))
    }
}

/// Linear interpolation from `start` (first inference step) to `end` (last).
pub fn linear_ramp(start: f64, end: f64, step: usize, steps: usize) -> f64 {
    if steps <= 1 {
        return start;
    }
    start + (end - start) * step as f64 / (steps - 1) as f64
}
