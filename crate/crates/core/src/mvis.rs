//! Multi-view integrated sampling: similarity-weighted texture merging and the
//! per-timestep stage plan that decides when views are synchronized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise::{Denoiser, ViewGraph};
use crate::error::{Error, Result};
use crate::geometry::TextureMap;
use crate::image::Image;
use crate::sampler::{Chain, ChainOutput, MultiViewScene, StepKind, StepObserver};
use crate::schedule::{linear_ramp, NoiseSchedule};

/// How the weighted texel sum is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// `Σ (W/W_max)ᵉ·T / (Σ (W/W_max)ᵉ + γ)`: a convex combination of the views.
    #[default]
    Renormalized,
    /// `Σ Wᵉ·T / (Σ W + γ)`; colors darken wherever `Σ Wᵉ < Σ W`.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergePolicy {
    /// Texels whose summed raw weight is below `gamma` are left empty.
    pub gamma: f64,
    pub exponent_start: f64,
    pub exponent_end: f64,
    pub normalization: NormalizationMode,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            gamma: 1e-8,
            exponent_start: 1.0,
            exponent_end: 6.0,
            normalization: NormalizationMode::Renormalized,
        }
    }
}

impl MergePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "merge gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.exponent_start > 0.0 && self.exponent_end > 0.0)
            || !self.exponent_start.is_finite()
            || !self.exponent_end.is_finite()
        {
            return Err(Error::Config("merge exponents must be positive and finite".into()));
        }
        Ok(())
    }

    /// Similarity exponent at inference step `step` of `steps`.
    pub fn exponent(&self, step: usize, steps: usize) -> f64 {
        linear_ramp(self.exponent_start, self.exponent_end, step, steps)
    }
}

/// Merges per-view textures into one, weighting each by its similarity map
/// raised to `exponent`. The output weight of a texel is the largest view weight.
pub fn dynamic_merge(
    textures: &[TextureMap],
    weights: &[&[f64]],
    policy: &MergePolicy,
    exponent: f64,
) -> Result<TextureMap> {
    let Some(first) = textures.first() else {
        return Err(Error::Shape("merge needs at least one view".into()));
    };
    if weights.len() != textures.len() {
        return Err(Error::Shape(format!(
            "{} weight maps for {} textures",
            weights.len(),
            textures.len()
        )));
    }
    let (w, h, c) = first.texels.shape();
    let n = w * h;
    for (t, wt) in textures.iter().zip(weights) {
        first.texels.ensure_same_shape(&t.texels, "merged textures")?;
        if wt.len() != n {
            return Err(Error::Shape(format!(
                "weight map has {} texels, expected {n}",
                wt.len()
            )));
        }
    }

    let mut out = TextureMap::new(w, h, c);
    out.texels
        .data_mut()
        .par_chunks_mut(c)
        .zip(out.weight.par_iter_mut())
        .enumerate()
        .for_each(|(i, (dst, dst_w))| {
            let raw: f64 = weights.iter().map(|wt| wt[i]).sum();
            if raw < policy.gamma {
                return;
            }
            let max_w = weights.iter().map(|wt| wt[i]).fold(0.0, f64::max);
            // Renormalized weights are taken relative to the strongest view, so
            // `gamma` only guards the division and never dims grazing-only texels.
            let scale = match policy.normalization {
                NormalizationMode::Renormalized => max_w,
                NormalizationMode::Linear => 1.0,
            };
            let mut powered = 0.0;
            for (t, wt) in textures.iter().zip(weights) {
                let wi = wt[i];
                if wi <= 0.0 {
                    continue;
                }
                let we = (wi / scale).powf(exponent);
                powered += we;
                for (d, s) in dst.iter_mut().zip(t.texels.pixel(i)) {
                    *d += we * s;
                }
            }
            let denom = match policy.normalization {
                NormalizationMode::Renormalized => powered,
                NormalizationMode::Linear => raw,
            } + policy.gamma;
            dst.iter_mut().for_each(|d| *d /= denom);
            *dst_w = max_w;
        });
    Ok(out)
}

/// What a stage of the timestep range does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    /// Independent per-view denoising.
    Plain,
    /// Synchronize views through the texture at every step.
    Project,
    /// Synchronize on every other step, starting with the first.
    Alternate,
}

/// Splits the timestep range into four stages at three descending fractions of
/// the training horizon `T`. A step with timestep `t` belongs to the first stage
/// whose lower bound `t ≥ fraction · T` it satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    /// Lower bounds of the first three stages, strictly descending in `(0, 1)`.
    pub bounds: [f64; 3],
    pub modes: [StageMode; 4],
    /// Whether each stage also re-imposes already-painted content.
    #[serde(default)]
    pub repaint: [bool; 4],
}

impl Default for StagePlan {
    fn default() -> Self {
        Self::mvis()
    }
}

impl StagePlan {
    /// Plain warm-up, synchronized middle, alternating, plain detail tail.
    pub fn mvis() -> Self {
        Self {
            bounds: [0.9, 0.5, 0.3],
            modes: [
                StageMode::Plain,
                StageMode::Project,
                StageMode::Alternate,
                StageMode::Plain,
            ],
            repaint: [false; 4],
        }
    }

    /// Repaint-only warm-up, synchronized-and-repainted middle, alternating
    /// without repaint, plain tail.
    pub fn mvrs() -> Self {
        Self {
            bounds: [0.8, 0.5, 0.3],
            modes: [
                StageMode::Plain,
                StageMode::Project,
                StageMode::Alternate,
                StageMode::Plain,
            ],
            repaint: [true, true, false, false],
        }
    }

    /// Synchronize on every step.
    pub fn all_project() -> Self {
        Self {
            bounds: [0.9, 0.5, 0.3],
            modes: [StageMode::Project; 4],
            repaint: [false; 4],
        }
    }

    /// Fully independent per-view chains.
    pub fn independent() -> Self {
        Self {
            bounds: [0.9, 0.5, 0.3],
            modes: [StageMode::Plain; 4],
            repaint: [false; 4],
        }
    }

    /// The same stages with every repaint flag cleared.
    pub fn without_repaint(mut self) -> Self {
        self.repaint = [false; 4];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.bounds;
        if !(a < 1.0 && a > b && b > c && c > 0.0) {
            return Err(Error::Config(format!(
                "stage bounds must descend strictly within (0, 1), got {:?}",
                self.bounds
            )));
        }
        Ok(())
    }

    /// Stage index of training timestep `t`.
    pub fn stage_of(&self, t: usize, train_steps: usize) -> usize {
        let t = t as f64;
        let total = train_steps as f64;
        self.bounds
            .iter()
            .position(|&f| t >= f * total)
            .unwrap_or(self.bounds.len())
    }

    /// Per-step actions for `schedule`'s inference timesteps.
    pub fn steps(&self, schedule: &NoiseSchedule) -> Result<Vec<StepKind>> {
        self.validate()?;
        let mut index_in_stage = [0usize; 4];
        Ok(schedule
            .timestep_map()
            .iter()
            .map(|&t| {
                let s = self.stage_of(t, schedule.train_steps());
                let j = index_in_stage[s];
                index_in_stage[s] += 1;
                let project = match self.modes[s] {
                    StageMode::Plain => false,
                    StageMode::Project => true,
                    StageMode::Alternate => j % 2 == 0,
                };
                StepKind {
                    project,
                    repaint: self.repaint[s],
                }
            })
            .collect())
    }

    /// Number of inference steps that fall in each stage.
    pub fn stage_lengths(&self, schedule: &NoiseSchedule) -> [usize; 4] {
        let mut n = [0; 4];
        for &t in schedule.timestep_map() {
            n[self.stage_of(t, schedule.train_steps())] += 1;
        }
        n
    }
}

/// Inputs of one integrated-sampling run.
pub struct MvisRun<'a> {
    pub schedule: &'a NoiseSchedule,
    pub codec: &'a dyn crate::denoise::Codec,
    pub merge: &'a MergePolicy,
    pub cfg: crate::denoise::CfgSchedule,
    pub scene: &'a MultiViewScene,
    pub view_ids: &'a [usize],
    pub prompts: &'a [String],
    pub graph: &'a ViewGraph,
    pub plan: &'a StagePlan,
    pub seed: u64,
    pub stage: &'a str,
}

/// Runs the synchronized chain over all views and merges the final samples.
pub fn mvis_sample(
    run: &MvisRun<'_>,
    denoiser: &mut dyn Denoiser,
    observer: Option<&mut dyn StepObserver>,
) -> Result<ChainOutput> {
    run.merge.validate()?;
    let plan = run.plan.steps(run.schedule)?;
    if plan.iter().any(|k| k.repaint) {
        return Err(Error::Config(
            "integrated sampling plan cannot contain repaint stages".into(),
        ));
    }
    Chain {
        schedule: run.schedule,
        codec: run.codec,
        merge: run.merge,
        cfg: run.cfg,
        scene: run.scene,
        view_ids: run.view_ids,
        prompts: run.prompts,
        graph: run.graph,
        plan: &plan,
        repaint: None,
        seed: run.seed,
        stage: run.stage,
    }
    .run(denoiser, observer)
}

/// Per-view inverse renders, exposed for diagnostics.
pub fn back_project(scene: &MultiViewScene, images: &[Image]) -> Result<Vec<TextureMap>> {
    images
        .par_iter()
        .zip(scene.projections())
        .map(|(img, p)| p.inverse_render(img))
        .collect()
}
