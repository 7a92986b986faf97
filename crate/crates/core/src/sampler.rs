//! The multi-view DDPM chain shared by integrated sampling and repaint sampling.
//!
//! Each inference step denoises all views as one batch, optionally projects
//! the per-view x0 estimates into texture space, merges them, renders the
//! merged texture back, and substitutes the composite into the posterior mean.
//! Repaint steps additionally blend in the noised painted latents.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::denoise::codec::downsample_to;
use crate::denoise::{check_response, CfgSchedule, Codec, DenoiseBatch, DenoiseRequest, Denoiser, ViewGraph};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Mesh, TextureMap, UvAtlas, ViewProjection};
use crate::image::Image;
use crate::mvis::{dynamic_merge, MergePolicy};
use crate::rng;
use crate::schedule::{LatentImage, NoiseSchedule, Transition};

/// Static per-view geometry for one sampling stage.
pub struct MultiViewScene {
    projections: Vec<ViewProjection>,
    weights: Vec<Vec<f64>>,
    foreground: Vec<Vec<bool>>,
    depth: Vec<Image>,
    image_size: (usize, usize),
    latent_size: (usize, usize),
    texture_size: (usize, usize),
}

impl MultiViewScene {
    pub fn new(mesh: &Mesh, cameras: &[Camera], atlas: &UvAtlas, codec: &dyn Codec) -> Result<Self> {
        let Some(first) = cameras.first() else {
            return Err(Error::Config("a sampling stage needs at least one camera".into()));
        };
        let image_size = (first.width, first.height);
        if let Some(c) = cameras.iter().find(|c| (c.width, c.height) != image_size) {
            return Err(Error::Config(format!(
                "all cameras of a stage must share one resolution ({}x{} vs {}x{})",
                c.width, c.height, image_size.0, image_size.1
            )));
        }
        let latent_size = codec.latent_size(image_size.0, image_size.1)?;
        let projections: Vec<ViewProjection> = cameras
            .par_iter()
            .map(|c| ViewProjection::new(mesh, c, atlas))
            .collect::<Result<_>>()?;
        let scale = codec.spec().spatial_scale;
        let mut weights = Vec::with_capacity(cameras.len());
        let mut foreground = Vec::with_capacity(cameras.len());
        let mut depth = Vec::with_capacity(cameras.len());
        for (v, p) in projections.iter().enumerate() {
            let w = p.weight_map().weight;
            if !w.iter().any(|&x| x > 0.0) {
                log::warn!("view {v} sees no texels; it will not contribute to merges");
            }
            weights.push(w);
            foreground.push(p.raster().face_id().iter().map(|&f| f >= 0).collect());
            depth.push(downsample_to(&p.raster().normalized_depth(), scale)?);
        }
        Ok(Self {
            projections,
            weights,
            foreground,
            depth,
            image_size,
            latent_size,
            texture_size: (atlas.width(), atlas.height()),
        })
    }

    pub fn num_views(&self) -> usize {
        self.projections.len()
    }

    pub fn projection(&self, view: usize) -> &ViewProjection {
        &self.projections[view]
    }

    pub fn projections(&self) -> &[ViewProjection] {
        &self.projections
    }

    /// Back-projected similarity `W_n` of each view.
    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn foreground(&self, view: usize) -> &[bool] {
        &self.foreground[view]
    }

    pub fn depth(&self, view: usize) -> &Image {
        &self.depth[view]
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn latent_size(&self) -> (usize, usize) {
        self.latent_size
    }

    pub fn texture_size(&self) -> (usize, usize) {
        self.texture_size
    }

    /// Inverse-renders one image per view and merges them.
    pub fn merge_images(&self, images: &[Image], policy: &MergePolicy, exponent: f64) -> Result<TextureMap> {
        let per_view: Vec<TextureMap> = images
            .par_iter()
            .zip(&self.projections)
            .map(|(img, p)| p.inverse_render(img))
            .collect::<Result<_>>()?;
        let weights: Vec<&[f64]> = self.weights.iter().map(Vec::as_slice).collect();
        dynamic_merge(&per_view, &weights, policy, exponent)
    }

    /// Merged texture rendered into view `v` over foreground pixels, `fallback`
    /// elsewhere (and where the merged texture has no data).
    pub fn composite(&self, v: usize, merged: &TextureMap, fallback: &Image) -> Result<Image> {
        let rendered = self.projections[v].render(merged)?;
        let mut out = fallback.clone();
        for (i, (&fg, &ok)) in self.foreground[v].iter().zip(&rendered.valid).enumerate() {
            if fg && ok {
                out.pixel_mut(i).copy_from_slice(rendered.color.pixel(i));
            }
        }
        Ok(out)
    }
}

/// What one inference step does.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StepKind {
    /// Project, merge, and substitute the re-rendered x0 estimates.
    pub project: bool,
    /// Blend the noised painted latents back in after the step.
    pub repaint: bool,
}

/// Painted-region conditioning for repaint steps.
#[derive(Clone, Debug)]
pub struct RepaintInputs {
    /// Noise-free painted latents `x_MVIS`, one per view.
    pub painted: Vec<Image>,
    /// Binary masks at latent resolution, 1 where the view is already painted.
    pub masks: Vec<Image>,
    /// Noise the painted latent to `ᾱ_t` instead of `ᾱ_{t-1}`.
    pub strict_alpha: bool,
}

/// `x̃ = √ᾱ·x_painted + √(1−ᾱ)·ε` at the post-step noise level, kept where `mask`
/// is 1; `unpainted_next` elsewhere.
pub fn mask_combine(
    schedule: &NoiseSchedule,
    unpainted_next: &LatentImage,
    painted: &Image,
    tr: Transition,
    noise: &Image,
    mask: &Image,
    strict_alpha: bool,
) -> Result<LatentImage> {
    if tr.t == 0 {
        return Err(Error::Schedule("mask_combine requires t > 0".into()));
    }
    let x = &unpainted_next.data;
    x.ensure_same_shape(painted, "mask_combine painted latent")?;
    x.ensure_same_shape(noise, "mask_combine noise")?;
    if mask.width() != x.width() || mask.height() != x.height() || mask.channels() != 1 {
        return Err(Error::Shape(format!(
            "mask {:?} does not match latent {:?}",
            mask.shape(),
            x.shape()
        )));
    }
    let ab = schedule.alpha_bar(if strict_alpha { tr.t } else { tr.prev });
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let c = x.channels();
    let mut out = x.clone();
    for (i, &m) in mask.data().iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let src_p = painted.pixel(i);
        let src_n = noise.pixel(i);
        let dst = out.pixel_mut(i);
        for k in 0..c {
            let noised = a * src_p[k] + b * src_n[k];
            dst[k] = if m == 1.0 {
                noised
            } else {
                m * noised + (1.0 - m) * dst[k]
            };
        }
    }
    Ok(LatentImage::new(out, unpainted_next.timestep, unpainted_next.view_id))
}

/// Optional hook for intermediate dumps.
pub trait StepObserver {
    fn on_merge(
        &mut self,
        stage: &str,
        step: usize,
        timestep: usize,
        merged: &TextureMap,
        x0_images: &[Image],
    ) -> Result<()>;
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct StepTiming {
    pub step: usize,
    pub timestep: usize,
    pub kind: StepKind,
    pub denoise_ms: f64,
    /// Time spent in the merge barrier (zero for non-projecting steps).
    pub barrier_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ChainReport {
    pub steps: Vec<StepTiming>,
    pub final_merge_ms: f64,
    pub total_ms: f64,
}

pub struct ChainOutput {
    /// Merge of the final per-view images.
    pub texture: TextureMap,
    /// Decoded final sample of every view.
    pub images: Vec<Image>,
    pub latents: Vec<Image>,
    pub report: ChainReport,
}

/// Everything that stays fixed across the steps of one chain.
pub struct Chain<'a> {
    pub schedule: &'a NoiseSchedule,
    pub codec: &'a dyn Codec,
    pub merge: &'a MergePolicy,
    pub cfg: CfgSchedule,
    pub scene: &'a MultiViewScene,
    /// External id of each view (used for denoiser targets and RNG streams).
    pub view_ids: &'a [usize],
    pub prompts: &'a [String],
    pub graph: &'a ViewGraph,
    pub plan: &'a [StepKind],
    pub repaint: Option<&'a RepaintInputs>,
    pub seed: u64,
    /// RNG stream label.
    pub stage: &'a str,
}

struct ViewState {
    latent: LatentImage,
    rng: ChaCha8Rng,
}

impl Chain<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.scene.num_views();
        if self.view_ids.len() != n || self.prompts.len() != n || self.graph.num_views() != n {
            return Err(Error::Config(format!(
                "chain has {n} views but {} ids, {} prompts, {}-view graph",
                self.view_ids.len(),
                self.prompts.len(),
                self.graph.num_views()
            )));
        }
        if self.plan.len() != self.schedule.inference_steps() {
            return Err(Error::Config(format!(
                "plan has {} steps, schedule has {}",
                self.plan.len(),
                self.schedule.inference_steps()
            )));
        }
        if let Some(r) = self.repaint {
            if r.painted.len() != n || r.masks.len() != n {
                return Err(Error::Config("repaint inputs must cover every view".into()));
            }
        }
        if self.plan.iter().any(|k| k.repaint) && self.repaint.is_none() {
            return Err(Error::Config("plan has repaint steps but no painted inputs".into()));
        }
        Ok(())
    }

    pub fn run(&self, denoiser: &mut dyn Denoiser, mut observer: Option<&mut dyn StepObserver>) -> Result<ChainOutput> {
        self.validate()?;
        let started = Instant::now();
        let (lw, lh) = self.scene.latent_size();
        let channels = self.codec.spec().channels;
        let steps = self.schedule.inference_steps();
        let t_start = self.schedule.timestep_map()[0];

        let mut states: Vec<ViewState> = self
            .view_ids
            .iter()
            .map(|&id| {
                let mut rng = rng::stream(self.seed, self.stage, id);
                let x = rng::normal_image(&mut rng, lw, lh, channels);
                ViewState {
                    latent: LatentImage::new(x, t_start, id),
                    rng,
                }
            })
            .collect();

        let mut report = ChainReport::default();
        for (step, &kind) in self.plan.iter().enumerate() {
            let step_start = Instant::now();
            let tr = self.schedule.transition(step);
            let step_err = |e: Error| match e {
                Error::View { view, message } => Error::Step {
                    step,
                    timestep: tr.t,
                    view: Some(view),
                    message,
                },
                other => Error::Step {
                    step,
                    timestep: tr.t,
                    view: None,
                    message: other.to_string(),
                },
            };

            let guidance = self.cfg.scale(step, steps);
            let batch = DenoiseBatch {
                step,
                timestep: tr.t,
                requests: states
                    .iter()
                    .enumerate()
                    .map(|(v, s)| DenoiseRequest {
                        view_id: self.view_ids[v],
                        latent: s.latent.clone(),
                        timestep: tr.t,
                        prompt: self.prompts[v].clone(),
                        depth: self.scene.depth(v).clone(),
                        guidance_scale: guidance,
                        related_views: self.graph.related(v).iter().map(|&r| self.view_ids[r]).collect(),
                    })
                    .collect(),
                graph: self.graph.clone(),
                seed: self.seed,
            };
            batch.validate().map_err(step_err)?;
            let t0 = Instant::now();
            let eps = denoiser.denoise(&batch).map_err(step_err)?;
            check_response(&batch, &eps).map_err(step_err)?;
            let denoise_ms = ms(t0);

            let mut x0: Vec<Image> = states
                .par_iter()
                .zip(&eps)
                .map(|(s, e)| self.schedule.estimate_x0(&s.latent, e).map(|l| l.data))
                .collect::<Result<_>>()
                .map_err(step_err)?;

            let mut barrier_ms = 0.0;
            if kind.project {
                let images: Vec<Image> = x0
                    .par_iter()
                    .map(|x| self.codec.decode(x))
                    .collect::<Result<_>>()
                    .map_err(step_err)?;
                let tb = Instant::now();
                let merged = self
                    .scene
                    .merge_images(&images, self.merge, self.merge.exponent(step, steps))
                    .map_err(step_err)?;
                barrier_ms = ms(tb);
                if let Some(obs) = observer.as_deref_mut() {
                    obs.on_merge(self.stage, step, tr.t, &merged, &images)?;
                }
                x0 = images
                    .par_iter()
                    .enumerate()
                    .map(|(v, img)| {
                        let comp = self.scene.composite(v, &merged, img)?;
                        self.codec.encode(&comp)
                    })
                    .collect::<Result<_>>()
                    .map_err(step_err)?;
            }

            let repaint = if kind.repaint { self.repaint } else { None };
            states
                .par_iter_mut()
                .zip(&x0)
                .enumerate()
                .try_for_each(|(v, (s, x0))| -> Result<()> {
                    let noise = rng::normal_image(&mut s.rng, lw, lh, channels);
                    let mut next = self.schedule.posterior_step(&s.latent, x0, tr, &noise)?;
                    if let Some(r) = repaint {
                        next = mask_combine(
                            self.schedule,
                            &next,
                            &r.painted[v],
                            tr,
                            &noise,
                            &r.masks[v],
                            r.strict_alpha,
                        )?;
                    }
                    if !next.data.is_finite() {
                        return Err(Error::View {
                            view: self.view_ids[v],
                            message: "sample became non-finite".into(),
                        });
                    }
                    s.latent = next;
                    Ok(())
                })
                .map_err(step_err)?;

            report.steps.push(StepTiming {
                step,
                timestep: tr.t,
                kind,
                denoise_ms,
                barrier_ms,
                total_ms: ms(step_start),
            });
        }

        let tf = Instant::now();
        let latents: Vec<Image> = states.into_iter().map(|s| s.latent.data).collect();
        let images: Vec<Image> = latents
            .par_iter()
            .map(|x| self.codec.decode(x))
            .collect::<Result<_>>()?;
        let texture = self
            .scene
            .merge_images(&images, self.merge, self.merge.exponent(steps - 1, steps))?;
        report.final_merge_ms = ms(tf);
        report.total_ms = ms(started);
        Ok(ChainOutput {
            texture,
            images,
            latents,
            report,
        })
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Per-texel disagreement between views after back-projecting their images.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Disagreement {
    /// Texels seen by at least two views.
    pub shared_texels: usize,
    pub mean_std: f64,
    pub max_std: f64,
}

/// Population standard deviation across views (averaged over channels) of the
/// back-projected colors, over texels visible in two or more views.
pub fn cross_view_disagreement(scene: &MultiViewScene, images: &[Image]) -> Result<Disagreement> {
    let per_view = crate::mvis::back_project(scene, images)?;
    let Some(first) = per_view.first() else {
        return Ok(Disagreement::default());
    };
    let texels = first.width() * first.height();
    let c = first.channels();
    let mut out = Disagreement::default();
    let mut sum = 0.0;
    for i in 0..texels {
        let seen: Vec<&[f64]> = per_view
            .iter()
            .filter(|t| t.weight[i] > 0.0)
            .map(|t| t.texels.pixel(i))
            .collect();
        if seen.len() < 2 {
            continue;
        }
        let k = seen.len() as f64;
        let mut std = 0.0;
        for ch in 0..c {
            let mean = seen.iter().map(|p| p[ch]).sum::<f64>() / k;
            let var = seen.iter().map(|p| (p[ch] - mean).powi(2)).sum::<f64>() / k;
            std += var.sqrt();
        }
        std /= c as f64;
        out.shared_texels += 1;
        sum += std;
        out.max_std = out.max_std.max(std);
    }
    if out.shared_texels > 0 {
        out.mean_std = sum / out.shared_texels as f64;
    }
    Ok(out)
}
