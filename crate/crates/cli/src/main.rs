use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use texsync_core::geometry::{obj, render, Camera, Mesh, TextureMap};
use texsync_core::image::Image;
use texsync_core::pipeline::{run_pipeline, PipelineConfig, RunOverrides};
use texsync_core::registry::BackendRegistry;
use texsync_core::scene::toy::ToyRoomSpec;
use texsync_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "texsync",
    version,
    about = "Multi-view consistent texture synthesis for indoor scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs room-scale sampling followed by per-instance repainting.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Denoiser backend name (target, consensus_toy, remote).
        #[arg(long)]
        backend: Option<String>,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        workers: Option<usize>,
        /// Write the merged texture of every synchronized step.
        #[arg(long)]
        dump_intermediates: bool,
    },
    /// Checks a config and the scene it references without sampling.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Renders a textured mesh from one camera.
    Render {
        /// OBJ file with per-corner UVs.
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        texture: PathBuf,
        /// `pos=x,y,z;look=x,y,z[;up=x,y,z][;fov=deg][;res=WxH][;near=n][;far=f]`
        #[arg(long)]
        camera: String,
        #[arg(long, default_value = "render.png")]
        out: PathBuf,
    },
    /// Writes a procedural three-piece room and a matching run config.
    Toy {
        /// Directory that receives the OBJ files, scene.toml and config.toml.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 256)]
        texture_resolution: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err}");
            let config = err
                .chain()
                .any(|e| e.downcast_ref::<Error>().is_some_and(Error::is_config));
            ExitCode::from(if config { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run {
            config,
            seed,
            backend,
            workers,
            dump_intermediates,
        } => {
            let overrides = RunOverrides {
                seed,
                backend,
                dump_intermediates,
                workers,
            };
            let cfg = load_config(&config)?.with_overrides(&overrides);
            let report = run_pipeline(&cfg)?;
            log::info!(
                "done in {:.1} s: mvis covers {:.1}% of visible texels, final texture covers {:.1}% of the atlas",
                report.total_ms / 1e3,
                100.0 * report.coverage.mvis_visible_fraction,
                100.0 * report.coverage.mvrs_atlas_fraction
            );
            println!("{}", cfg.output.join("report.json").display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let scene = cfg.validate_all()?;
            println!(
                "ok: {} instances, {} faces, backends available: {}",
                scene.instances.len(),
                scene.mesh.face_count(),
                BackendRegistry::with_builtins().names().join(", ")
            );
            Ok(())
        }
        Command::Render {
            mesh,
            texture,
            camera,
            out,
        } => render_view(&mesh, &texture, &camera, &out),
        Command::Toy {
            dir,
            texture_resolution,
        } => {
            let spec = ToyRoomSpec::default();
            let scene = spec.write(&dir)?;
            let mut cfg = PipelineConfig::new(PathBuf::from("scene.toml"), PathBuf::from("out"));
            cfg.texture_resolution = texture_resolution;
            let path = dir.join("config.toml");
            std::fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))?;
            println!("{}\n{}", scene.display(), path.display());
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> anyhow::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(path)?;
    cfg.apply_env();
    Ok(cfg)
}

fn render_view(mesh: &Path, texture: &Path, camera: &str, out: &Path) -> anyhow::Result<()> {
    let camera: Camera = camera.parse()?;
    let mesh: Mesh = obj::load_obj(mesh, 0)?;
    let img = Image::load_png(texture)?;
    let n = img.pixel_count();
    let texture = TextureMap::from_parts(img, vec![1.0; n])?;
    let bundle = render(&texture, &mesh, &camera)?;
    bundle.color.save_png(out)?;
    println!("{}", out.display());
    Ok(())
}
