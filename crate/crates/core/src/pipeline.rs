//! End-to-end two-stage run: room-scale integrated sampling, then per-instance
//! repaint sampling, with file outputs and a JSON run report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoise::remote::ENDPOINT_ENV;
use crate::denoise::{CfgSchedule, Codec, DenoiserBackend, SessionInfo};
use crate::error::{Error, Result};
use crate::geometry::{render, TextureMap, UvAtlas};
use crate::image::Image;
use crate::mvis::{mvis_sample, MergePolicy, MvisRun, StagePlan};
use crate::mvrs::{repaint_scene, InstanceCameraPolicies, InstanceReport, MvrsRun, RepaintOptions};
use crate::registry::{BackendRegistry, BackendSettings, CodecRegistry, CodecSettings, ReferenceTexture};
use crate::sampler::{ChainReport, MultiViewScene, StepObserver};
use crate::scene::{build_view_prompt, place_cameras, CameraPolicy, PromptContext, Scene, SceneManifest};
use crate::schedule::{NoiseSchedule, ScheduleConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagePlans {
    pub mvis: StagePlan,
    #[serde(default = "StagePlan::mvrs")]
    pub mvrs: StagePlan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraPolicies {
    pub global: CameraPolicy,
    #[serde(flatten)]
    pub instances: InstanceCameraPolicies,
}

impl Default for CameraPolicies {
    fn default() -> Self {
        Self {
            global: CameraPolicy::global(),
            instances: InstanceCameraPolicies::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebugOptions {
    /// Write merged textures of every synchronized step.
    pub dump_intermediates: bool,
    /// Also write float EXR copies of the final textures.
    pub save_exr: bool,
}

/// Run configuration (TOML). Relative paths resolve against the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Scene manifest.
    pub scene: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_texture_resolution")]
    pub texture_resolution: usize,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default)]
    pub backend_settings: BackendSettings,
    #[serde(default)]
    pub codec: CodecSettings,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub merge: MergePolicy,
    #[serde(default)]
    pub cfg: CfgSchedule,
    #[serde(default)]
    pub stages: StagePlans,
    #[serde(default)]
    pub cameras: CameraPolicies,
    #[serde(default)]
    pub repaint: RepaintOptions,
    /// Run the per-instance repaint stage after the room-scale stage.
    #[serde(default = "default_true")]
    pub repaint_instances: bool,
    #[serde(default)]
    pub debug: DebugOptions,
}

fn default_texture_resolution() -> usize {
    1024
}

fn default_backend() -> String {
    "target".into()
}

fn default_true() -> bool {
    true
}

impl PipelineConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| e.context(path.display().to_string()))
    }

    /// Defaults around a scene manifest and output directory.
    pub fn new(scene: PathBuf, output: PathBuf) -> Self {
        Self {
            scene,
            output,
            seed: 0,
            texture_resolution: default_texture_resolution(),
            workers: 0,
            backend: default_backend(),
            backend_settings: BackendSettings::default(),
            codec: CodecSettings::default(),
            schedule: ScheduleConfig::default(),
            merge: MergePolicy::default(),
            cfg: CfgSchedule::default(),
            stages: StagePlans {
                mvis: StagePlan::mvis(),
                mvrs: StagePlan::mvrs(),
            },
            cameras: CameraPolicies::default(),
            repaint: RepaintOptions::default(),
            repaint_instances: true,
            debug: DebugOptions::default(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is serializable")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.scene);
        join(&mut self.output);
        if let ReferenceTexture::Png { path } = &mut self.backend_settings.reference {
            join(path);
        }
    }

    /// Applies the remote-endpoint environment override, if set.
    pub fn apply_env(&mut self) {
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            if !endpoint.trim().is_empty() {
                self.backend_settings.endpoint = Some(endpoint.trim().to_string());
            }
        }
    }

    /// Checks values and referenced files without running anything.
    pub fn validate(&self) -> Result<()> {
        let r = self.texture_resolution;
        if !(256..=4096).contains(&r) || !r.is_power_of_two() {
            return Err(Error::Config(format!(
                "texture_resolution must be a power of two in 256..=4096, got {r}"
            )));
        }
        if !self.scene.is_file() {
            return Err(Error::Config(format!(
                "scene manifest {} does not exist",
                self.scene.display()
            )));
        }
        if let ReferenceTexture::Png { path } = &self.backend_settings.reference {
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "reference texture {} does not exist",
                    path.display()
                )));
            }
        }
        if !BackendRegistry::with_builtins().contains(&self.backend) {
            return Err(Error::Config(format!("unknown backend `{}`", self.backend)));
        }
        let codec = CodecRegistry::with_builtins().create(&self.codec.name, &self.codec)?;
        NoiseSchedule::new(self.schedule.clone())?;
        self.merge.validate()?;
        self.stages.mvis.validate()?;
        self.stages.mvrs.validate()?;
        if self.stages.mvis.repaint.iter().any(|&r| r) {
            return Err(Error::Config("the room-scale stage plan cannot repaint".into()));
        }
        if !(self.cfg.start >= 1.0 && self.cfg.end >= 1.0) {
            return Err(Error::Config("guidance scales must be at least 1".into()));
        }
        if !(self.repaint.mask_threshold > 0.0 && self.repaint.mask_threshold <= 1.0) {
            return Err(Error::Config("repaint mask_threshold must lie in (0, 1]".into()));
        }
        for p in [
            &self.cameras.global,
            &self.cameras.instances.room_frame,
            &self.cameras.instances.furniture,
        ] {
            p.validate()?;
            codec
                .latent_size(p.resolution[0], p.resolution[1])
                .map_err(|e| Error::Config(format!("{:?} cameras: {e}", p.phase)))?;
        }
        Ok(())
    }

    /// Validates the config, then loads and checks the scene it references.
    pub fn validate_all(&self) -> Result<Scene> {
        self.validate()?;
        let manifest = SceneManifest::load(&self.scene)?;
        let base = self.scene.parent().unwrap_or(Path::new("."));
        manifest
            .load_scene(base)
            .map_err(|e| if e.is_config() { e } else { Error::Config(e.to_string()) })
    }
}

/// Texel coverage of the run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct CoverageStats {
    pub atlas_texels: usize,
    /// Atlas texels visible from at least one global camera.
    pub visible_texels: usize,
    pub mvis_covered: usize,
    pub mvrs_covered: usize,
    /// `mvis_covered / visible_texels`.
    pub mvis_visible_fraction: f64,
    /// `mvrs_covered / atlas_texels`.
    pub mvrs_atlas_fraction: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct StageTiming {
    pub setup_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub backend: String,
    pub codec: String,
    pub texture_resolution: usize,
    pub workers: usize,
    pub mvis: StageTiming,
    pub mvis_chain: ChainReport,
    pub mvis_prompts: Vec<String>,
    pub mvrs: StageTiming,
    pub mvrs_instances: Vec<InstanceReport>,
    pub coverage: CoverageStats,
    pub total_ms: f64,
    pub outputs: Vec<PathBuf>,
}

/// Per-run overrides from the command line.
#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub dump_intermediates: bool,
    pub workers: Option<usize>,
}

impl PipelineConfig {
    pub fn with_overrides(mut self, o: &RunOverrides) -> Self {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(b) = &o.backend {
            self.backend = b.clone();
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        self.debug.dump_intermediates |= o.dump_intermediates;
        self
    }
}

struct DumpObserver {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl StepObserver for DumpObserver {
    fn on_merge(
        &mut self,
        stage: &str,
        step: usize,
        timestep: usize,
        merged: &TextureMap,
        _x0_images: &[Image],
    ) -> Result<()> {
        let dir = self.dir.join(stage.replace('/', "_"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("step{step:02}_t{timestep:04}.png"));
        merged.save_png(&path)?;
        self.written.push(path);
        Ok(())
    }
}

fn save(outputs: &mut Vec<PathBuf>, img: &Image, path: PathBuf) -> Result<()> {
    img.save_png(&path)?;
    outputs.push(path);
    Ok(())
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Runs both stages and writes all artifacts into `config.output`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    let scene = config.validate_all()?;
    let backend = BackendRegistry::with_builtins().create(&config.backend, &config.backend_settings)?;
    backend
        .check()
        .map_err(|e| e.context(format!("backend `{}`", config.backend)))?;
    let codec = CodecRegistry::with_builtins().create(&config.codec.name, &config.codec)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let workers = pool.current_num_threads();
    pool.install(|| run_stages(config, &scene, backend.as_ref(), codec.as_ref(), workers))
}

fn run_stages(
    config: &PipelineConfig,
    scene: &Scene,
    backend: &dyn DenoiserBackend,
    codec: &dyn Codec,
    workers: usize,
) -> Result<RunReport> {
    let started = Instant::now();
    let out = &config.output;
    let views_dir = out.join("views");
    std::fs::create_dir_all(&views_dir).map_err(|e| Error::io(&views_dir, e))?;
    let schedule = NoiseSchedule::new(config.schedule.clone())?;
    let res = config.texture_resolution;
    let mut report = RunReport {
        seed: config.seed,
        backend: backend.name().to_string(),
        codec: codec.name().to_string(),
        texture_resolution: res,
        workers,
        ..RunReport::default()
    };
    let mut outputs = Vec::new();
    let mut dump = config.debug.dump_intermediates.then(|| DumpObserver {
        dir: out.join("intermediates"),
        written: Vec::new(),
    });

    // Room-scale stage.
    let t_setup = Instant::now();
    let atlas = UvAtlas::build(&scene.mesh, res, res);
    let views = place_cameras(&config.cameras.global, &scene.room_bounds()).map_err(|e| e.context("global cameras"))?;
    let cameras = views.cameras();
    let mv = MultiViewScene::new(&scene.mesh, &cameras, &atlas, codec).map_err(|e| e.context("stage mvis"))?;
    let prompts: Vec<String> = views
        .views
        .iter()
        .enumerate()
        .map(|(v, pv)| build_view_prompt(scene, PromptContext::Global, pv, mv.projection(v).raster().face_id()))
        .collect();
    let view_ids: Vec<usize> = (0..cameras.len()).collect();
    let session = SessionInfo {
        stage: "mvis",
        mesh: &scene.mesh,
        atlas: &atlas,
        cameras: &cameras,
        view_ids: &view_ids,
        codec,
        schedule: &schedule,
    };
    let mut denoiser = backend.open(&session).map_err(|e| e.context("stage mvis"))?;
    report.mvis.setup_ms = ms(t_setup);
    let run = MvisRun {
        schedule: &schedule,
        codec,
        merge: &config.merge,
        cfg: config.cfg,
        scene: &mv,
        view_ids: &view_ids,
        prompts: &prompts,
        graph: &views.graph,
        plan: &config.stages.mvis,
        seed: config.seed,
        stage: "mvis",
    };
    let stage1 = mvis_sample(
        &run,
        denoiser.as_mut(),
        dump.as_mut().map(|d| d as &mut dyn StepObserver),
    )
    .map_err(|e| e.context("stage mvis"))?;
    drop(denoiser);
    report.mvis.total_ms = ms(t_setup);
    report.mvis_chain = stage1.report.clone();
    report.mvis_prompts = prompts;
    save(&mut outputs, &stage1.texture.texels, out.join("texture_mvis.png"))?;
    save(
        &mut outputs,
        &stage1.texture.weight_image(),
        out.join("weight_mvis.png"),
    )?;
    for (v, img) in stage1.images.iter().enumerate() {
        save(&mut outputs, img, views_dir.join(format!("mvis_view{v:02}.png")))?;
    }

    let visible = (0..atlas.width() * atlas.height())
        .filter(|&i| mv.weights().iter().any(|w| w[i] > 0.0))
        .count();
    report.coverage = CoverageStats {
        atlas_texels: atlas.covered_count(),
        visible_texels: visible,
        mvis_covered: stage1.texture.covered_count(),
        mvis_visible_fraction: if visible > 0 {
            stage1.texture.covered_count() as f64 / visible as f64
        } else {
            0.0
        },
        ..CoverageStats::default()
    };

    // Instance-scale stage.
    let t2 = Instant::now();
    let final_texture = if config.repaint_instances {
        let run = MvrsRun {
            schedule: &schedule,
            codec,
            merge: &config.merge,
            cfg: config.cfg,
            plan: &config.stages.mvrs,
            options: config.repaint,
            seed: config.seed,
        };
        let stage2 = repaint_scene(
            &run,
            scene,
            &stage1.texture,
            &config.cameras.instances,
            backend,
            dump.as_mut().map(|d| d as &mut dyn StepObserver),
        )
        .map_err(|e| e.context("stage mvrs"))?;
        for (id, images) in &stage2.views {
            for (v, img) in images.iter().enumerate() {
                save(
                    &mut outputs,
                    img,
                    views_dir.join(format!("mvrs_instance{id}_view{v:02}.png")),
                )?;
            }
        }
        report.mvrs_instances = stage2.instances;
        stage2.texture
    } else {
        stage1.texture.clone()
    };
    report.mvrs.total_ms = ms(t2);
    save(&mut outputs, &final_texture.texels, out.join("texture_mvrs.png"))?;
    save(&mut outputs, &final_texture.weight_image(), out.join("weight_mvrs.png"))?;
    if config.debug.save_exr {
        for (name, t) in [
            ("texture_mvis.exr", &stage1.texture),
            ("texture_mvrs.exr", &final_texture),
        ] {
            let path = out.join(name);
            t.texels.save_exr(&path)?;
            outputs.push(path);
        }
    }
    for (v, cam) in cameras.iter().enumerate() {
        let bundle = render(&final_texture, &scene.mesh, cam)?;
        save(
            &mut outputs,
            &bundle.color,
            views_dir.join(format!("final_view{v:02}.png")),
        )?;
    }
    report.coverage.mvrs_covered = (0..final_texture.weight.len())
        .filter(|&i| atlas.face(i).is_some() && final_texture.weight[i] > 0.0)
        .count();
    report.coverage.mvrs_atlas_fraction = if report.coverage.atlas_texels > 0 {
        report.coverage.mvrs_covered as f64 / report.coverage.atlas_texels as f64
    } else {
        0.0
    };
    if let Some(d) = dump {
        outputs.extend(d.written);
    }
    report.total_ms = ms(started);
    let report_path = out.join("report.json");
    outputs.push(report_path.clone());
    report.outputs = outputs;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    Ok(report)
}
