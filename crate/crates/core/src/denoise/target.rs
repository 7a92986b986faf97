use std::collections::BTreeMap;

use super::{DenoiseBatch, Denoiser};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::schedule::NoiseSchedule;

/// The noise that maps `x_t` exactly onto `x0` under the forward process:
/// `(x_t − √ᾱ_t·x0) / √(1−ᾱ_t)`.
pub fn exact_epsilon(x_t: &Image, x0: &Image, alpha_bar: f64) -> Result<Image> {
    x_t.ensure_same_shape(x0, "exact epsilon target")?;
    if !(alpha_bar < 1.0) {
        return Err(Error::Denoise("exact epsilon undefined at alpha_bar = 1".into()));
    }
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    let mut out = x_t.clone();
    for (o, t) in out.data_mut().iter_mut().zip(x0.data()) {
        *o = (*o - a * t) / b;
    }
    Ok(out)
}

/// Predicts the noise that leads every view straight to its own fixed target.
///
/// Prompts and guidance are recorded but do not affect the prediction.
#[derive(Clone, Debug)]
pub struct TargetDenoiser {
    alpha_bars: Vec<f64>,
    targets: BTreeMap<usize, Image>,
    prompts: BTreeMap<usize, String>,
    guidance: Vec<f64>,
}

impl TargetDenoiser {
    /// `targets[view_id]` is the latent-space target of that view.
    pub fn new(schedule: &NoiseSchedule, targets: impl IntoIterator<Item = (usize, Image)>) -> Self {
        Self {
            alpha_bars: schedule.alpha_bars().to_vec(),
            targets: targets.into_iter().collect(),
            prompts: BTreeMap::new(),
            guidance: Vec::new(),
        }
    }

    pub fn target(&self, view: usize) -> Option<&Image> {
        self.targets.get(&view)
    }

    pub fn targets(&self) -> &BTreeMap<usize, Image> {
        &self.targets
    }

    /// Most recent prompt seen for each view.
    pub fn prompts(&self) -> &BTreeMap<usize, String> {
        &self.prompts
    }

    /// Guidance scale of every batch seen, in call order.
    pub fn guidance_history(&self) -> &[f64] {
        &self.guidance
    }

    pub(crate) fn record(&mut self, batch: &DenoiseBatch) {
        for r in &batch.requests {
            self.prompts.insert(r.view_id, r.prompt.clone());
        }
        if let Some(r) = batch.requests.first() {
            self.guidance.push(r.guidance_scale);
        }
    }

    pub(crate) fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or_else(|| Error::Denoise(format!("timestep {t} outside schedule")))
    }

    pub(crate) fn lookup(&self, view: usize) -> Result<&Image> {
        self.targets
            .get(&view)
            .ok_or_else(|| Error::Denoise(format!("no target for view {view}")))
    }
}

impl Denoiser for TargetDenoiser {
    fn name(&self) -> &str {
        "target"
    }

    fn denoise(&mut self, batch: &DenoiseBatch) -> Result<Vec<Image>> {
        self.record(batch);
        batch
            .requests
            .iter()
            .map(|r| {
                let target = self.lookup(r.view_id)?;
                exact_epsilon(&r.latent.data, target, self.alpha_bar(r.timestep)?)
            })
            .collect()
    }
}
