//! Multi-view integrated repaint sampling: per-instance texture refinement that
//! keeps regions painted by the room-scale stage and fills the rest.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoise::codec::downsample_to;
use crate::denoise::{CfgSchedule, Codec, DenoiserBackend, SessionInfo};
use crate::error::{Error, Result};
use crate::geometry::{uv_to_texel, Mesh, TextureMap, UvAtlas};
use crate::image::Image;
use crate::mvis::{MergePolicy, StagePlan};
use crate::sampler::{Chain, ChainOutput, ChainReport, MultiViewScene, RepaintInputs, StepObserver};
use crate::scene::{
    build_view_prompt, place_cameras, CameraPolicy, PromptContext, Role, Scene, SceneInstance, ViewSet,
};
use crate::schedule::NoiseSchedule;

pub use crate::sampler::mask_combine;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepaintOptions {
    /// Noise painted latents to the current step's level instead of the next one.
    pub strict_alpha: bool,
    /// A latent cell counts as painted when at least this share of its pixels is.
    pub mask_threshold: f64,
}

impl Default for RepaintOptions {
    fn default() -> Self {
        Self {
            strict_alpha: false,
            mask_threshold: 0.5,
        }
    }
}

/// Shared settings of every instance run.
pub struct MvrsRun<'a> {
    pub schedule: &'a NoiseSchedule,
    pub codec: &'a dyn Codec,
    pub merge: &'a MergePolicy,
    pub cfg: CfgSchedule,
    pub plan: &'a StagePlan,
    pub options: RepaintOptions,
    pub seed: u64,
}

/// Painted mask of one view at image resolution: 1 on foreground pixels whose
/// nearest texel already carries weight in `prior`, 0 elsewhere.
pub fn painted_mask(scene: &MultiViewScene, view: usize, prior: &TextureMap) -> Image {
    let raster = scene.projection(view).raster();
    let (tw, th) = prior.resolution();
    let (w, h) = (raster.width(), raster.height());
    let mut mask = Image::new(w, h, 1);
    for (i, (&f, uv)) in raster.face_id().iter().zip(raster.uv()).enumerate() {
        if f < 0 {
            continue;
        }
        let (tx, ty) = uv_to_texel(*uv, tw, th);
        let x = (tx.floor().max(0.0) as usize).min(tw - 1);
        let y = (ty.floor().max(0.0) as usize).min(th - 1);
        if prior.weight[y * tw + x] > 0.0 {
            mask.data_mut()[i] = 1.0;
        }
    }
    mask
}

/// Box-filters a pixel mask to latent resolution and binarizes it.
pub fn latent_mask(mask: &Image, scale: usize, threshold: f64) -> Result<Image> {
    let coarse = downsample_to(mask, scale)?;
    Ok(coarse.map(|v| if v >= threshold { 1.0 } else { 0.0 }))
}

/// Painted renders and masks of every view, ready for repaint steps.
pub fn repaint_inputs(
    scene: &MultiViewScene,
    prior: &TextureMap,
    codec: &dyn Codec,
    options: &RepaintOptions,
) -> Result<RepaintInputs> {
    let scale = codec.spec().spatial_scale;
    let mut painted = Vec::with_capacity(scene.num_views());
    let mut masks = Vec::with_capacity(scene.num_views());
    for v in 0..scene.num_views() {
        let rendered = scene.projection(v).render(prior)?;
        painted.push(codec.encode(&rendered.color)?);
        masks.push(latent_mask(
            &painted_mask(scene, v, prior),
            scale,
            options.mask_threshold,
        )?);
    }
    Ok(RepaintInputs {
        painted,
        masks,
        strict_alpha: options.strict_alpha,
    })
}

/// One instance's repaint job.
pub struct InstanceJob<'a> {
    /// The instance's own faces (UVs addressing the shared atlas).
    pub mesh: &'a Mesh,
    pub atlas: &'a UvAtlas,
    pub views: &'a ViewSet,
    pub prompts: &'a [String],
    /// Current scene texture; its weights decide what is already painted.
    pub prior: &'a TextureMap,
    /// RNG stream and session label.
    pub stage: &'a str,
}

pub struct InstanceOutput {
    pub chain: ChainOutput,
    /// Share of foreground latent cells that were painted beforehand.
    pub painted_fraction: f64,
}

/// Runs the repaint chain for one instance and returns its merged texture.
pub fn mvrs_instance(
    run: &MvrsRun<'_>,
    job: &InstanceJob<'_>,
    backend: &dyn DenoiserBackend,
    observer: Option<&mut dyn StepObserver>,
) -> Result<InstanceOutput> {
    run.merge.validate()?;
    let cameras = job.views.cameras();
    let scene = MultiViewScene::new(job.mesh, &cameras, job.atlas, run.codec)?;
    let inputs = repaint_inputs(&scene, job.prior, run.codec, &run.options)?;
    let view_ids: Vec<usize> = (0..cameras.len()).collect();
    let session = SessionInfo {
        stage: job.stage,
        mesh: job.mesh,
        atlas: job.atlas,
        cameras: &cameras,
        view_ids: &view_ids,
        codec: run.codec,
        schedule: run.schedule,
    };
    let mut denoiser = backend.open(&session)?;
    let plan = run.plan.steps(run.schedule)?;

    let (mut painted, mut fg) = (0usize, 0usize);
    for v in 0..scene.num_views() {
        let fg_mask = latent_mask(
            &scene.projection(v).raster().foreground_mask(),
            run.codec.spec().spatial_scale,
            run.options.mask_threshold,
        )?;
        fg += fg_mask.data().iter().filter(|&&m| m > 0.0).count();
        painted += inputs.masks[v].data().iter().filter(|&&m| m > 0.0).count();
    }

    let chain = Chain {
        schedule: run.schedule,
        codec: run.codec,
        merge: run.merge,
        cfg: run.cfg,
        scene: &scene,
        view_ids: &view_ids,
        prompts: job.prompts,
        graph: &job.views.graph,
        plan: &plan,
        repaint: Some(&inputs),
        seed: run.seed,
        stage: job.stage,
    }
    .run(denoiser.as_mut(), observer)?;
    Ok(InstanceOutput {
        chain,
        painted_fraction: if fg > 0 { painted as f64 / fg as f64 } else { 0.0 },
    })
}

/// Timing and coverage of one repainted instance.
#[derive(Clone, Debug, Serialize)]
pub struct InstanceReport {
    pub id: u32,
    pub label: String,
    pub role: Role,
    pub views: usize,
    pub painted_fraction: f64,
    /// Instance texels with weight after the run.
    pub covered_texels: usize,
    pub instance_texels: usize,
    pub skipped: bool,
    pub chain: ChainReport,
}

pub struct SceneRepaintOutput {
    pub texture: TextureMap,
    pub instances: Vec<InstanceReport>,
    /// Final per-view images of each instance, keyed by instance id.
    pub views: Vec<(u32, Vec<Image>)>,
}

/// Camera policies for the two instance kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceCameraPolicies {
    pub room_frame: CameraPolicy,
    pub furniture: CameraPolicy,
}

impl Default for InstanceCameraPolicies {
    fn default() -> Self {
        Self {
            room_frame: CameraPolicy::room_frame(),
            furniture: CameraPolicy::furniture(),
        }
    }
}

/// Repaint order: the room frame first, then furniture by decreasing bounding
/// box volume (ties by id).
pub fn repaint_order(scene: &Scene) -> Vec<&SceneInstance> {
    let mut order: Vec<&SceneInstance> = scene.instances.iter().collect();
    order.sort_by(|a, b| {
        let key = |i: &SceneInstance| {
            (
                i.role != Role::RoomFrame,
                std::cmp::Reverse(ordered(i.bounds.volume())),
                i.id,
            )
        };
        key(a).cmp(&key(b))
    });
    order
}

fn ordered(v: f64) -> u64 {
    // Non-negative finite volumes order like their bit patterns.
    v.max(0.0).to_bits()
}

/// Cameras for one instance: the room frame uses the room box, furniture its own.
pub fn instance_views(scene: &Scene, inst: &SceneInstance, policies: &InstanceCameraPolicies) -> Result<ViewSet> {
    match inst.role {
        Role::RoomFrame => place_cameras(&policies.room_frame, &scene.room_bounds()),
        Role::Furniture => place_cameras(&policies.furniture, &inst.bounds),
    }
}

/// Repaints every instance in order on top of `stage1`. Texels an instance
/// covers take its result; all other texels keep their previous value.
pub fn repaint_scene(
    run: &MvrsRun<'_>,
    scene: &Scene,
    stage1: &TextureMap,
    policies: &InstanceCameraPolicies,
    backend: &dyn DenoiserBackend,
    mut observer: Option<&mut dyn StepObserver>,
) -> Result<SceneRepaintOutput> {
    let (tw, th) = stage1.resolution();
    let mut texture = stage1.clone();
    let mut reports = Vec::new();
    let mut views_out = Vec::new();
    for inst in repaint_order(scene) {
        let ctx = format!("instance {} ({})", inst.id, inst.label);
        let started = Instant::now();
        let mesh = scene
            .mesh
            .instance_submesh(inst.id)
            .ok_or_else(|| Error::Mesh(format!("{ctx} has no faces")))?;
        let atlas = UvAtlas::build(&mesh, tw, th);
        let instance_texels = atlas.covered_count();
        if instance_texels == 0 {
            log::warn!("{ctx} covers no atlas texels; skipped");
            reports.push(InstanceReport {
                id: inst.id,
                label: inst.label.clone(),
                role: inst.role,
                views: 0,
                painted_fraction: 0.0,
                covered_texels: 0,
                instance_texels: 0,
                skipped: true,
                chain: ChainReport::default(),
            });
            continue;
        }
        let views = instance_views(scene, inst, policies).map_err(|e| e.context(ctx.clone()))?;
        let prompt_ctx = match inst.role {
            Role::RoomFrame => PromptContext::RoomFrame,
            Role::Furniture => PromptContext::Furniture { instance: inst.id },
        };
        let prompts: Vec<String> = views
            .views
            .iter()
            .map(|v| build_view_prompt(scene, prompt_ctx, v, &[]))
            .collect();
        let stage = format!("mvrs/instance-{}", inst.id);
        let job = InstanceJob {
            mesh: &mesh,
            atlas: &atlas,
            views: &views,
            prompts: &prompts,
            prior: &texture,
            stage: &stage,
        };
        let out = mvrs_instance(
            run,
            &job,
            backend,
            observer.as_mut().map(|o| &mut **o as &mut dyn StepObserver),
        )
        .map_err(|e| e.context(ctx.clone()))?;
        let result = &out.chain.texture;
        let mut covered = 0;
        for i in 0..result.weight.len() {
            if atlas.face(i).is_some() && result.weight[i] > 0.0 {
                texture.texels.pixel_mut(i).copy_from_slice(result.texels.pixel(i));
                texture.weight[i] = result.weight[i];
            }
            if atlas.face(i).is_some() && texture.weight[i] > 0.0 {
                covered += 1;
            }
        }
        let mut chain = out.chain.report;
        chain.total_ms = started.elapsed().as_secs_f64() * 1e3;
        log::info!(
            "{ctx}: {covered}/{instance_texels} texels covered, {:.1}% pre-painted",
            100.0 * out.painted_fraction
        );
        reports.push(InstanceReport {
            id: inst.id,
            label: inst.label.clone(),
            role: inst.role,
            views: views.len(),
            painted_fraction: out.painted_fraction,
            covered_texels: covered,
            instance_texels,
            skipped: false,
            chain,
        });
        views_out.push((inst.id, out.chain.images));
    }
    Ok(SceneRepaintOutput {
        texture,
        instances: reports,
        views: views_out,
    })
}
