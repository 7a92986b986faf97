//! Independent oracles, scene fixtures, and the per-criterion checks shared by
//! the integration tests and the `acceptance` target.
#![allow(dead_code)]

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use texsync_core::denoise::{
    related_view_attention, scaled_dot_product, CfgSchedule, DenoiseBatch, DenoiseRequest, Denoiser, DenoiserBackend,
    IdentityCodec, SessionInfo, TargetDenoiser, ViewGraph,
};
use texsync_core::geometry::{Camera, Mesh, Point, TextureMap, UvAtlas, Vec3, ViewProjection};
use texsync_core::image::Image;
use texsync_core::mvis::{dynamic_merge, mvis_sample, MergePolicy, MvisRun, NormalizationMode, StagePlan};
use texsync_core::mvrs::{mvrs_instance, repaint_scene, InstanceCameraPolicies, InstanceJob, MvrsRun, RepaintOptions};
use texsync_core::pipeline::{run_pipeline, PipelineConfig};
use texsync_core::registry::{ReferenceBackend, ReferenceTexture};
use texsync_core::sampler::{cross_view_disagreement, ChainOutput, MultiViewScene};
use texsync_core::scene::toy::{box_mesh, smooth_texture, ToyRoomSpec};
use texsync_core::scene::{place_cameras, CameraPolicy, Scene, ViewSet};
use texsync_core::schedule::{LatentImage, NoiseSchedule, ScheduleConfig};

/// Result of one acceptance criterion.
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
    Image::from_fn(w, h, c, |_, _, _| StandardNormal.sample(rng))
}

pub fn schedule() -> NoiseSchedule {
    NoiseSchedule::new(ScheduleConfig::default()).unwrap()
}

// ---------------------------------------------------------------------------
// DDPM algebra

/// `ᾱ_t` of the linear 1e-4 → 0.02, T = 1000 schedule, computed independently
/// with numpy (`cumprod(1 - linspace(1e-4, 0.02, 1000))`).
pub const FROZEN_ALPHA_BARS: [(usize, f64); 5] = [
    (1, 0.9999),
    (20, 0.9942309516861578),
    (500, 0.07858724288177824),
    (980, 6.021910415675225e-05),
    (1000, 4.035829765375676e-05),
];

/// Posterior standard deviation of the strided 1000 → 980 transition (numpy).
pub const FROZEN_SIGMA_1000_980: f64 = 0.5742843507847366;

/// Worst round-trip error of `estimate_x0(forward_noise(x0, t, ε), ε)` in units
/// of `f64::EPSILON · max(|x0|, |ε|) / √ᾱ_t`, over `trials` random triples.
pub fn roundtrip_error_ulps(trials: usize, seed: u64) -> f64 {
    let s = schedule();
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let t = r.random_range(1..=1000usize);
        let x0 = normal(&mut r, 8, 8, 4).map(|v| 3.0 * v);
        let eps = normal(&mut r, 8, 8, 4);
        let xt = s.forward_noise(&LatentImage::new(x0.clone(), 0, 0), t, &eps).unwrap();
        let back = s.estimate_x0(&xt, &eps).unwrap();
        let scale = x0.data().iter().chain(eps.data()).fold(1.0f64, |m, v| m.max(v.abs()));
        let unit = f64::EPSILON * scale / s.alpha_bar(t).sqrt();
        worst = worst.max(back.data.max_abs_diff(&x0) / unit);
    }
    worst
}

/// Runs the 50-step chain for one view with `TargetDenoiser` and no injected
/// noise; returns the RMS distance of the final sample to the target.
pub fn noiseless_chain_rms(seed: u64) -> f64 {
    let s = schedule();
    let mut r = rng(seed);
    let target = Image::from_fn(16, 16, 4, |_, _, _| r.random_range(-1.0..1.0));
    let mut den = TargetDenoiser::new(&s, [(0, target.clone())]);
    let mut x = normal(&mut r, 16, 16, 4);
    let zeros = Image::new(16, 16, 4);
    let cfg = CfgSchedule::default();
    for step in 0..s.inference_steps() {
        let tr = s.transition(step);
        let latent = LatentImage::new(x.clone(), tr.t, 0);
        let batch = DenoiseBatch {
            step,
            timestep: tr.t,
            requests: vec![DenoiseRequest {
                view_id: 0,
                latent: latent.clone(),
                timestep: tr.t,
                prompt: String::new(),
                depth: Image::filled(16, 16, 1, 1.0),
                guidance_scale: cfg.scale(step, s.inference_steps()),
                related_views: vec![0],
            }],
            graph: ViewGraph::self_only(1),
            seed,
        };
        let eps = den.denoise(&batch).unwrap();
        let x0 = s.estimate_x0(&latent, &eps[0]).unwrap();
        x = s.posterior_step(&latent, &x0.data, tr, &zeros).unwrap().data;
    }
    x.rms_diff(&target)
}

pub fn check_ddpm_algebra() -> Outcome {
    let start = Instant::now();
    let ulps = roundtrip_error_ulps(1000, 11);
    let rms = noiseless_chain_rms(12);
    let s = schedule();
    let frozen = FROZEN_ALPHA_BARS
        .iter()
        .all(|&(t, ab)| (s.alpha_bar(t) - ab).abs() <= 1e-12 * ab.max(1e-3));
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        ulps <= 64.0 && rms < 1e-4 && frozen && secs < 5.0,
        format!("round-trip ≤ {ulps:.1} ulp, chain RMS {rms:.2e}, frozen ᾱ {frozen}, {secs:.2} s"),
    )
}

// ---------------------------------------------------------------------------
// Geometry oracles

/// Two bumpy lat-long spheres, the second partly in front of the first, each
/// in its own half of the atlas. At most `2 · 2·seg·(rings−1)` faces.
pub fn random_mesh(r: &mut ChaCha8Rng) -> Mesh {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    let mut ids = Vec::new();
    for blob in 0..2u32 {
        let rings = r.random_range(4..=6usize);
        let seg = r.random_range(6..=10usize);
        let center = if blob == 0 {
            Point::new(0.0, 0.0, 0.0)
        } else {
            Point::new(
                r.random_range(-0.6..0.6),
                r.random_range(-0.6..0.6),
                r.random_range(0.9..1.4),
            )
        };
        let radius = if blob == 0 { 1.0 } else { r.random_range(0.35..0.6) };
        let base = vertices.len() as u32;
        // Vertex grid (rings+1) × (seg+1); the seam column duplicates the first.
        let bumps: Vec<f64> = (0..(rings + 1) * seg).map(|_| r.random_range(0.85..1.15)).collect();
        for i in 0..=rings {
            let theta = PI * i as f64 / rings as f64;
            for j in 0..=seg {
                let phi = TAU * j as f64 / seg as f64;
                let bump = if i == 0 || i == rings {
                    1.0
                } else {
                    bumps[i * seg + j % seg]
                };
                let d = Vec3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin());
                vertices.push(center + radius * bump * d);
            }
        }
        let idx = |i: usize, j: usize| base + (i * (seg + 1) + j) as u32;
        let uv = |i: usize, j: usize| {
            [
                0.5 * blob as f64 + 0.02 + 0.46 * j as f64 / seg as f64,
                0.02 + 0.96 * (1.0 - i as f64 / rings as f64),
            ]
        };
        for i in 0..rings {
            for j in 0..seg {
                let mut tri = |a: (usize, usize), b: (usize, usize), c: (usize, usize)| {
                    faces.push([idx(a.0, a.1), idx(b.0, b.1), idx(c.0, c.1)]);
                    uvs.push([uv(a.0, a.1), uv(b.0, b.1), uv(c.0, c.1)]);
                    ids.push(blob);
                };
                // Pole rows keep only the triangle that is not collapsed.
                if i > 0 {
                    tri((i, j), (i, j + 1), (i + 1, j));
                }
                if i + 1 < rings {
                    tri((i, j + 1), (i + 1, j + 1), (i + 1, j));
                }
            }
        }
    }
    let mesh = Mesh::new(vertices, faces, uvs, ids).unwrap();
    orient_outward(mesh)
}

/// Flips faces whose normal points toward their blob's center.
fn orient_outward(mesh: Mesh) -> Mesh {
    let mut faces = mesh.faces().to_vec();
    let mut uvs: Vec<_> = (0..mesh.face_count()).map(|f| *mesh.face_uvs(f)).collect();
    for f in 0..mesh.face_count() {
        let c = mesh.instance_bounds(mesh.face_instance(f)).unwrap().center();
        let p = mesh.surface_point(f, [1.0 / 3.0; 3]);
        if mesh.face_normal(f).dot(&(p - c)) < 0.0 {
            faces[f].swap(1, 2);
            uvs[f].swap(1, 2);
        }
    }
    Mesh::new(mesh.vertices().to_vec(), faces, uvs, mesh.face_instances().to_vec()).unwrap()
}

/// A camera at distance 3.5–4.5 looking roughly at the origin, from the front
/// hemisphere so the second blob occludes part of the first.
pub fn random_camera(r: &mut ChaCha8Rng, size: usize) -> Camera {
    let az: f64 = r.random_range(-0.6..0.6);
    let el: f64 = r.random_range(-0.5..0.5);
    let d = r.random_range(3.5..4.5);
    let pos = Point::new(d * el.cos() * az.sin(), d * el.sin(), d * el.cos() * az.cos());
    let look = Point::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), 0.0);
    Camera::new(pos, look, r.random_range(40.0..60.0), size, size).with_clip(0.05, 20.0)
}

/// Independently built pinhole basis: `(origin, right, up, forward, focal)`.
struct Pinhole {
    origin: Point,
    right: Vec3,
    up: Vec3,
    forward: Vec3,
    focal: f64,
    w: f64,
    h: f64,
    near: f64,
    far: f64,
}

impl Pinhole {
    fn new(cam: &Camera) -> Self {
        let origin = Point::from(cam.position);
        let forward = (Point::from(cam.look_at) - origin).normalize();
        let right = forward.cross(&Vec3::from(cam.up)).normalize();
        let up = right.cross(&forward);
        let focal = cam.height as f64 / (2.0 * (cam.fov_degrees.to_radians() / 2.0).tan());
        Self {
            origin,
            right,
            up,
            forward,
            focal,
            w: cam.width as f64,
            h: cam.height as f64,
            near: cam.near,
            far: cam.far,
        }
    }

    fn depth(&self, p: &Point) -> f64 {
        (p - self.origin).dot(&self.forward)
    }

    fn project(&self, p: &Point) -> (f64, f64) {
        let d = p - self.origin;
        let z = d.dot(&self.forward);
        (
            self.w / 2.0 + self.focal * d.dot(&self.right) / z,
            self.h / 2.0 - self.focal * d.dot(&self.up) / z,
        )
    }

    fn pixel_ray(&self, x: usize, y: usize) -> Vec3 {
        let px = (x as f64 + 0.5 - self.w / 2.0) / self.focal;
        let py = (self.h / 2.0 - (y as f64 + 0.5)) / self.focal;
        self.forward + px * self.right + py * self.up
    }
}

/// Möller–Trumbore: ray parameter `s` with `origin + s·dir` on the triangle.
fn ray_triangle(origin: &Point, dir: &Vec3, tri: [Point; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = origin - tri[0];
    let u = tv.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = tv.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let s = e2.dot(&q) * inv;
    (s > 0.0).then_some(s)
}

fn front_facing(mesh: &Mesh, f: usize, eye: &Point) -> bool {
    let v0 = mesh.face_vertices(f)[0];
    mesh.face_normal(f).dot(&(eye - v0)) > 0.0
}

/// Ray-cast visibility of every atlas texel: front-facing, inside the image and
/// clip range, and not behind another front face by more than `tol`.
pub fn raycast_visibility(mesh: &Mesh, cam: &Camera, atlas: &UvAtlas, tol: f64) -> Vec<bool> {
    let ph = Pinhole::new(cam);
    (0..atlas.width() * atlas.height())
        .map(|i| {
            let Some(f) = atlas.face(i) else { return false };
            if !front_facing(mesh, f, &ph.origin) {
                return false;
            }
            let p = mesh.surface_point(f, atlas.bary(i));
            let z = ph.depth(&p);
            if z < ph.near || z > ph.far {
                return false;
            }
            let (sx, sy) = ph.project(&p);
            if !(sx >= 0.0 && sy >= 0.0 && sx < ph.w && sy < ph.h) {
                return false;
            }
            let dir = p - ph.origin;
            !(0..mesh.face_count()).any(|g| {
                front_facing(mesh, g, &ph.origin)
                    && ray_triangle(&ph.origin, &dir, mesh.face_vertices(g)).is_some_and(|s| {
                        let zg = s * z;
                        zg >= ph.near && zg <= ph.far && zg < z - tol
                    })
            })
        })
        .collect()
}

/// Ray-cast z-buffer: nearest front face and its view depth at every pixel center.
pub fn raycast_zbuffer(mesh: &Mesh, cam: &Camera) -> (Vec<i32>, Vec<f64>) {
    let ph = Pinhole::new(cam);
    let (w, h) = (cam.width, cam.height);
    let mut ids = vec![-1; w * h];
    let mut depth = vec![f64::INFINITY; w * h];
    for y in 0..h {
        for x in 0..w {
            let dir = ph.pixel_ray(x, y);
            for f in 0..mesh.face_count() {
                if !front_facing(mesh, f, &ph.origin) {
                    continue;
                }
                // `dir` has unit forward component, so `s` is the view depth.
                if let Some(z) = ray_triangle(&ph.origin, &dir, mesh.face_vertices(f)) {
                    if z >= ph.near && z <= ph.far && z < depth[y * w + x] {
                        depth[y * w + x] = z;
                        ids[y * w + x] = f as i32;
                    }
                }
            }
        }
    }
    (ids, depth)
}

/// Low-frequency RGB texture over the atlas coverage.
pub fn gentle_texture(atlas: &UvAtlas, r: &mut ChaCha8Rng) -> TextureMap {
    let p: Vec<f64> = (0..9).map(|_| r.random_range(0.0..1.0)).collect();
    let (w, h) = (atlas.width(), atlas.height());
    let img = Image::from_fn(w, h, 3, |x, y, c| {
        let u = (x as f64 + 0.5) / w as f64;
        let v = (y as f64 + 0.5) / h as f64;
        0.5 + 0.3 * (TAU * (0.5 * p[3 * c] * u + 0.5 * p[3 * c + 1] * v) + TAU * p[3 * c + 2]).sin()
    });
    TextureMap::with_coverage(img, atlas).unwrap()
}

pub struct ProjectionCase {
    pub faces: usize,
    pub visibility_mismatches: usize,
    pub visible_texels: usize,
    pub max_pixel_error: f64,
    pub compared_pixels: usize,
}

pub fn projection_case(seed: u64) -> ProjectionCase {
    let mut r = rng(seed);
    let mesh = random_mesh(&mut r);
    let cam = random_camera(&mut r, 256);
    let atlas = UvAtlas::build(&mesh, 512, 512);
    let proj = ViewProjection::new(&mesh, &cam, &atlas).unwrap();
    let tol = proj.raster().depth_tolerance();
    let oracle = raycast_visibility(&mesh, &cam, &atlas, tol);
    let mut engine = vec![false; oracle.len()];
    for t in proj.texels().visible_texels() {
        engine[t] = true;
    }
    let visibility_mismatches = oracle.iter().zip(&engine).filter(|(a, b)| a != b).count();

    let tex = gentle_texture(&atlas, &mut r);
    let first = proj.render(&tex).unwrap();
    let baked = proj.inverse_render(&first.color).unwrap();
    let second = proj.render(&baked).unwrap();
    let mut max_pixel_error = 0.0f64;
    let mut compared_pixels = 0;
    for (i, &f) in proj.raster().face_id().iter().enumerate() {
        if f < 0 || !first.valid[i] || !second.valid[i] {
            continue;
        }
        compared_pixels += 1;
        for (a, b) in first.color.pixel(i).iter().zip(second.color.pixel(i)) {
            max_pixel_error = max_pixel_error.max((a - b).abs());
        }
    }
    ProjectionCase {
        faces: mesh.face_count(),
        visibility_mismatches,
        visible_texels: oracle.iter().filter(|&&v| v).count(),
        max_pixel_error,
        compared_pixels,
    }
}

pub fn check_projection() -> Outcome {
    let start = Instant::now();
    let cases: Vec<ProjectionCase> = (0..10).map(|k| projection_case(200 + k)).collect();
    let mismatches: usize = cases.iter().map(|c| c.visibility_mismatches).sum();
    let visible: usize = cases.iter().map(|c| c.visible_texels).sum();
    let err = cases.iter().map(|c| c.max_pixel_error).fold(0.0, f64::max);
    let max_faces = cases.iter().map(|c| c.faces).max().unwrap_or(0);
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        mismatches == 0 && err <= 2.0 / 255.0 && max_faces <= 200 && secs < 30.0,
        format!(
            "{mismatches} visibility mismatches over {visible} visible texels, max round-trip error {:.3}/255, ≤ {max_faces} faces, {secs:.1} s",
            err * 255.0
        ),
    )
}

// ---------------------------------------------------------------------------
// Merge oracle

pub struct MergeInputs {
    pub textures: Vec<TextureMap>,
    pub weights: Vec<Vec<f64>>,
    pub exponent: f64,
}

/// Random views with some zero, tiny, and all-zero weights.
pub fn random_merge_inputs(r: &mut ChaCha8Rng) -> MergeInputs {
    let n = r.random_range(1..=6usize);
    let (w, h, c) = (r.random_range(1..=12usize), r.random_range(1..=12usize), 3);
    let textures = (0..n)
        .map(|_| {
            let img = Image::from_fn(w, h, c, |_, _, _| r.random_range(-1.0..2.0));
            TextureMap::from_parts(img, vec![1.0; w * h]).unwrap()
        })
        .collect();
    let weights = (0..n)
        .map(|_| {
            (0..w * h)
                .map(|_| match r.random_range(0..10) {
                    0..=2 => 0.0,
                    3 => r.random_range(0.0..1e-9),
                    _ => r.random_range(0.0..1.0),
                })
                .collect()
        })
        .collect();
    MergeInputs {
        textures,
        weights,
        exponent: r.random_range(1.0..6.0),
    }
}

/// Per-texel scalar merge: returns `(color, weight)` for texel `i`.
pub fn scalar_merge(inputs: &MergeInputs, i: usize, policy: &MergePolicy) -> (Vec<f64>, f64) {
    let c = inputs.textures[0].channels();
    let ws: Vec<f64> = inputs.weights.iter().map(|w| w[i]).collect();
    let raw: f64 = ws.iter().sum();
    if raw < policy.gamma {
        return (vec![0.0; c], 0.0);
    }
    let wmax = ws.iter().cloned().fold(0.0, f64::max);
    let mut num = vec![0.0; c];
    let mut den = 0.0;
    for (v, &w) in ws.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let k = match policy.normalization {
            // exp/ln form of (w / w_max)^e
            NormalizationMode::Renormalized => (inputs.exponent * (w.ln() - wmax.ln())).exp(),
            NormalizationMode::Linear => w.powf(inputs.exponent),
        };
        den += k;
        for (ch, n) in num.iter_mut().enumerate() {
            *n += k * inputs.textures[v].texels.pixel(i)[ch];
        }
    }
    let denom = match policy.normalization {
        NormalizationMode::Renormalized => den + policy.gamma,
        NormalizationMode::Linear => raw + policy.gamma,
    };
    (num.iter().map(|n| n / denom).collect(), wmax)
}

pub struct MergeCheck {
    pub renormalized_err: f64,
    pub linear_err: f64,
    pub unity_err: f64,
}

pub fn merge_check(cases: usize, seed: u64) -> MergeCheck {
    let mut r = rng(seed);
    let mut out = MergeCheck {
        renormalized_err: 0.0,
        linear_err: 0.0,
        unity_err: 0.0,
    };
    for _ in 0..cases {
        let inputs = random_merge_inputs(&mut r);
        let weights: Vec<&[f64]> = inputs.weights.iter().map(Vec::as_slice).collect();
        for mode in [NormalizationMode::Renormalized, NormalizationMode::Linear] {
            let policy = MergePolicy {
                normalization: mode,
                ..MergePolicy::default()
            };
            let merged = dynamic_merge(&inputs.textures, &weights, &policy, inputs.exponent).unwrap();
            let mut worst = 0.0f64;
            for i in 0..merged.weight.len() {
                let (color, weight) = scalar_merge(&inputs, i, &policy);
                worst = worst.max((merged.weight[i] - weight).abs());
                for (a, b) in merged.texels.pixel(i).iter().zip(&color) {
                    worst = worst.max((a - b).abs());
                }
            }
            match mode {
                NormalizationMode::Renormalized => out.renormalized_err = out.renormalized_err.max(worst),
                NormalizationMode::Linear => out.linear_err = out.linear_err.max(worst),
            }
        }
        // Partition of unity: merging all-ones textures yields one wherever the
        // total weight exceeds gamma.
        let (w, h, c) = inputs.textures[0].texels.shape();
        let ones: Vec<TextureMap> = inputs
            .textures
            .iter()
            .map(|_| TextureMap::from_parts(Image::filled(w, h, c, 1.0), vec![1.0; w * h]).unwrap())
            .collect();
        let policy = MergePolicy::default();
        let merged = dynamic_merge(&ones, &weights, &policy, inputs.exponent).unwrap();
        for i in 0..w * h {
            let raw: f64 = inputs.weights.iter().map(|wt| wt[i]).sum();
            if raw > policy.gamma {
                for v in merged.texels.pixel(i) {
                    out.unity_err = out.unity_err.max((v - 1.0).abs());
                }
            }
        }
    }
    out
}

pub fn check_merge() -> Outcome {
    let m = merge_check(300, 31);
    Outcome::new(
        m.renormalized_err <= 1e-6 && m.unity_err <= 1e-6 && m.linear_err <= 1e-12,
        format!(
            "renormalized vs oracle {:.1e}, partition of unity {:.1e}, linear vs verbatim {:.1e}",
            m.renormalized_err, m.unity_err, m.linear_err
        ),
    )
}

// ---------------------------------------------------------------------------
// Attention oracle

/// Explicit-loop softmax attention of one query row over the listed key/value rows.
pub fn brute_attention_row(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
    let d = q.len() as f64;
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let dv = values[0].len();
    (0..dv)
        .map(|j| e.iter().zip(values).map(|(ei, v)| ei * v[j]).sum::<f64>() / z)
        .collect()
}

pub struct AttentionCase {
    pub queries: Vec<Array2<f64>>,
    pub keys: Vec<Array2<f64>>,
    pub values: Vec<Array2<f64>>,
    pub graph: ViewGraph,
}

pub fn random_attention_case(r: &mut ChaCha8Rng) -> AttentionCase {
    let n = r.random_range(1..=4usize);
    let tokens = r.random_range(1..=16usize);
    let d = r.random_range(1..=8usize);
    let dv = r.random_range(1..=8usize);
    let mut mat = |rows: usize, cols: usize| Array2::from_shape_fn((rows, cols), |_| r.random_range(-2.0..2.0));
    let queries = (0..n).map(|_| mat(tokens, d)).collect();
    let keys = (0..n).map(|_| mat(tokens, d)).collect();
    let values = (0..n).map(|_| mat(tokens, dv)).collect();
    let lists = (0..n)
        .map(|_| {
            let mut l: Vec<usize> = (0..n).filter(|_| r.random_bool(0.6)).collect();
            if l.is_empty() {
                l.push(r.random_range(0..n));
            }
            l
        })
        .collect();
    AttentionCase {
        queries,
        keys,
        values,
        graph: ViewGraph::from_lists(lists).unwrap(),
    }
}

pub struct AttentionCheck {
    pub brute_err: f64,
    pub self_err: f64,
    pub order_err: f64,
}

pub fn attention_check(cases: usize, seed: u64) -> AttentionCheck {
    let mut r = rng(seed);
    let mut out = AttentionCheck {
        brute_err: 0.0,
        self_err: 0.0,
        order_err: 0.0,
    };
    let rows = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    for _ in 0..cases {
        let c = random_attention_case(&mut r);
        let n = c.queries.len();
        let got = related_view_attention(&c.queries, &c.keys, &c.values, &c.graph).unwrap();
        for (v, got_v) in got.iter().enumerate() {
            let mut ks = Vec::new();
            let mut vs = Vec::new();
            for &rel in c.graph.related(v) {
                ks.extend(rows(&c.keys[rel]));
                vs.extend(rows(&c.values[rel]));
            }
            for (t, q) in rows(&c.queries[v]).iter().enumerate() {
                let want = brute_attention_row(q, &ks, &vs);
                for (j, w) in want.iter().enumerate() {
                    out.brute_err = out.brute_err.max((got_v[[t, j]] - w).abs());
                }
            }
        }
        // One related view (itself) is plain self-attention.
        let selfish = related_view_attention(&c.queries, &c.keys, &c.values, &ViewGraph::self_only(n)).unwrap();
        for (v, own) in selfish.iter().enumerate() {
            let plain = scaled_dot_product(c.queries[v].view(), c.keys[v].view(), c.values[v].view());
            out.self_err = out.self_err.max((own - &plain).iter().fold(0.0, |m, x| m.max(x.abs())));
        }
        // Reversing every related-view list permutes the keys only.
        let reversed = ViewGraph::from_lists(
            c.graph
                .lists()
                .iter()
                .map(|l| l.iter().rev().copied().collect())
                .collect(),
        )
        .unwrap();
        let flipped = related_view_attention(&c.queries, &c.keys, &c.values, &reversed).unwrap();
        for v in 0..n {
            out.order_err = out
                .order_err
                .max((&flipped[v] - &got[v]).iter().fold(0.0, |m, x| m.max(x.abs())));
        }
    }
    out
}

pub fn check_attention() -> Outcome {
    let a = attention_check(50, 61);
    Outcome::new(
        a.brute_err <= 1e-6 && a.self_err <= 1e-12 && a.order_err <= 1e-12,
        format!(
            "brute force {:.1e}, self-attention reduction {:.1e}, key order {:.1e}",
            a.brute_err, a.self_err, a.order_err
        ),
    )
}

// ---------------------------------------------------------------------------
// Sampling fixtures

pub struct ToyViews {
    pub scene: Scene,
    pub atlas: UvAtlas,
    pub views: ViewSet,
    pub mv: MultiViewScene,
}

pub fn toy_views(texture: usize, image: usize) -> ToyViews {
    let scene = ToyRoomSpec::default().scene().unwrap();
    let atlas = UvAtlas::build(&scene.mesh, texture, texture);
    let views = place_cameras(
        &CameraPolicy::global().with_resolution(image, image),
        &scene.room_bounds(),
    )
    .unwrap();
    let mv = MultiViewScene::new(&scene.mesh, &views.cameras(), &atlas, &IdentityCodec).unwrap();
    ToyViews {
        scene,
        atlas,
        views,
        mv,
    }
}

pub fn run_mvis(toy: &ToyViews, targets: Vec<(usize, Image)>, plan: &StagePlan, seed: u64) -> ChainOutput {
    let s = schedule();
    let ids: Vec<usize> = (0..toy.views.len()).collect();
    let prompts = vec!["a room".to_string(); ids.len()];
    let mut den = TargetDenoiser::new(&s, targets);
    let run = MvisRun {
        schedule: &s,
        codec: &IdentityCodec,
        merge: &MergePolicy::default(),
        cfg: CfgSchedule::default(),
        scene: &toy.mv,
        view_ids: &ids,
        prompts: &prompts,
        graph: &toy.views.graph,
        plan,
        seed,
        stage: "mvis",
    };
    mvis_sample(&run, &mut den, None).unwrap()
}

/// Texture whose views each prefer one primary color: view `v` sees mostly
/// channel `v mod 3`, modulated by the reference texture.
pub fn palette_texture(atlas: &UvAtlas, reference: &TextureMap, view: usize) -> TextureMap {
    let hue = view % 3;
    let img = Image::from_fn(atlas.width(), atlas.height(), 3, |x, y, c| {
        let base = if c == hue { 0.85 } else { 0.1 };
        base + 0.1 * (reference.texels.get(x, y, c) - 0.5)
    });
    TextureMap::with_coverage(img, atlas).unwrap()
}

pub struct RecoveryCheck {
    pub gt_rms: f64,
    pub visible_texels: usize,
    pub consistent_std: f64,
    pub independent_std: f64,
}

pub fn mvis_recovery() -> RecoveryCheck {
    let toy = toy_views(512, 512);
    let gt = smooth_texture(&toy.atlas, 1).unwrap();
    let n = toy.views.len();
    let targets: Vec<(usize, Image)> = (0..n)
        .map(|v| (v, toy.mv.projection(v).render(&gt).unwrap().color))
        .collect();
    let out = run_mvis(&toy, targets, &StagePlan::mvis(), 42);
    let visible: Vec<usize> = (0..gt.weight.len())
        .filter(|&i| toy.mv.weights().iter().any(|w| w[i] > 0.0))
        .collect();
    let gt_rms = out.texture.rms_over(&gt, &visible);

    let conflicting: Vec<(usize, Image)> = (0..n)
        .map(|v| {
            let t = palette_texture(&toy.atlas, &gt, v);
            (v, toy.mv.projection(v).render(&t).unwrap().color)
        })
        .collect();
    let synced = run_mvis(&toy, conflicting.clone(), &StagePlan::all_project(), 42);
    let alone = run_mvis(&toy, conflicting, &StagePlan::independent(), 42);
    RecoveryCheck {
        gt_rms,
        visible_texels: visible.len(),
        consistent_std: cross_view_disagreement(&toy.mv, &synced.images).unwrap().mean_std,
        independent_std: cross_view_disagreement(&toy.mv, &alone.images).unwrap().mean_std,
    }
}

pub fn check_integrated_sampling() -> Outcome {
    let start = Instant::now();
    let faces = ToyRoomSpec::default().mesh().unwrap().face_count();
    let r = mvis_recovery();
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        faces <= 2000 && r.gt_rms < 0.01 && r.consistent_std < 0.02 && r.independent_std > 0.2 && secs < 300.0,
        format!(
            "RMS {:.4} over {} visible texels, disagreement std {:.4} synchronized vs {:.4} independent, {secs:.0} s",
            r.gt_rms, r.visible_texels, r.consistent_std, r.independent_std
        ),
    )
}

// ---------------------------------------------------------------------------
// Repaint guarantees

pub fn mvrs_run<'a>(s: &'a NoiseSchedule, merge: &'a MergePolicy, plan: &'a StagePlan, seed: u64) -> MvrsRun<'a> {
    MvrsRun {
        schedule: s,
        codec: &IdentityCodec,
        merge,
        cfg: CfgSchedule::default(),
        plan,
        options: RepaintOptions::default(),
        seed,
    }
}

/// Instance `id` of the toy room with its furniture cameras.
pub fn toy_instance(id: u32, texture: usize, image: usize) -> (Scene, Mesh, UvAtlas, ViewSet) {
    let scene = ToyRoomSpec::default().scene().unwrap();
    let mesh = scene.mesh.instance_submesh(id).unwrap();
    let atlas = UvAtlas::build(&mesh, texture, texture);
    let inst = scene.instance(id).unwrap().clone();
    let views = place_cameras(&CameraPolicy::furniture().with_resolution(image, image), &inst.bounds).unwrap();
    (scene, mesh, atlas, views)
}

/// RMS change of a fully painted instance whose targets agree with the prior.
pub fn preserved_rms() -> f64 {
    let (_, mesh, atlas, views) = toy_instance(3, 256, 256);
    let prior = smooth_texture(&atlas, 5).unwrap();
    let backend = ReferenceBackend::new(&ReferenceTexture::Procedural { seed: 5 }, false).unwrap();
    let s = schedule();
    let merge = MergePolicy::default();
    let plan = StagePlan::mvrs();
    let prompts = vec!["a chair".to_string(); views.len()];
    let job = InstanceJob {
        mesh: &mesh,
        atlas: &atlas,
        views: &views,
        prompts: &prompts,
        prior: &prior,
        stage: "mvrs/instance-3",
    };
    let out = mvrs_instance(&mvrs_run(&s, &merge, &plan, 9), &job, &backend, None).unwrap();
    let seen: Vec<usize> = (0..prior.weight.len())
        .filter(|&i| out.chain.texture.weight[i] > 0.0)
        .collect();
    out.chain.texture.rms_over(&prior, &seen)
}

/// Whether an unpainted instance repaint equals plain sampling bit for bit.
pub fn unpainted_matches_plain() -> bool {
    let (_, mesh, atlas, views) = toy_instance(2, 256, 128);
    let empty = TextureMap::new(256, 256, 3);
    let backend = ReferenceBackend::new(&ReferenceTexture::Procedural { seed: 8 }, false).unwrap();
    let s = schedule();
    let merge = MergePolicy::default();
    let plan = StagePlan::mvrs();
    let prompts = vec!["a wardrobe".to_string(); views.len()];
    let stage = "mvrs/instance-2";
    let job = InstanceJob {
        mesh: &mesh,
        atlas: &atlas,
        views: &views,
        prompts: &prompts,
        prior: &empty,
        stage,
    };
    let repaint = mvrs_instance(&mvrs_run(&s, &merge, &plan, 17), &job, &backend, None).unwrap();

    let cameras = views.cameras();
    let mv = MultiViewScene::new(&mesh, &cameras, &atlas, &IdentityCodec).unwrap();
    let ids: Vec<usize> = (0..cameras.len()).collect();
    let session = SessionInfo {
        stage,
        mesh: &mesh,
        atlas: &atlas,
        cameras: &cameras,
        view_ids: &ids,
        codec: &IdentityCodec,
        schedule: &s,
    };
    let mut den = backend.open(&session).unwrap();
    let plain_plan = StagePlan::mvrs().without_repaint();
    let run = MvisRun {
        schedule: &s,
        codec: &IdentityCodec,
        merge: &merge,
        cfg: CfgSchedule::default(),
        scene: &mv,
        view_ids: &ids,
        prompts: &prompts,
        graph: &views.graph,
        plan: &plain_plan,
        seed: 17,
        stage,
    };
    let plain = mvis_sample(&run, den.as_mut(), None).unwrap();
    repaint.painted_fraction == 0.0
        && plain.texture.texels.data() == repaint.chain.texture.texels.data()
        && plain.texture.weight == repaint.chain.texture.weight
        && plain.latents == repaint.chain.latents
}

/// Texels with weight after room-scale sampling that lost it after repainting,
/// and the repainted texture's coverage of the atlas.
pub fn zero_weight_growth() -> (usize, usize, usize) {
    let toy = toy_views(256, 128);
    let s = schedule();
    let backend = ReferenceBackend::new(&ReferenceTexture::Procedural { seed: 3 }, false).unwrap();
    let cameras = toy.views.cameras();
    let ids: Vec<usize> = (0..cameras.len()).collect();
    let session = SessionInfo {
        stage: "mvis",
        mesh: &toy.scene.mesh,
        atlas: &toy.atlas,
        cameras: &cameras,
        view_ids: &ids,
        codec: &IdentityCodec,
        schedule: &s,
    };
    let targets = backend.targets(&session).unwrap();
    let stage1 = run_mvis(&toy, targets, &StagePlan::mvis(), 4).texture;
    let merge = MergePolicy::default();
    let plan = StagePlan::mvrs();
    let policies = InstanceCameraPolicies {
        room_frame: CameraPolicy::room_frame().with_resolution(128, 128),
        furniture: CameraPolicy::furniture().with_resolution(128, 128),
    };
    let out = repaint_scene(
        &mvrs_run(&s, &merge, &plan, 4),
        &toy.scene,
        &stage1,
        &policies,
        &backend,
        None,
    )
    .unwrap();
    let lost = (0..stage1.weight.len())
        .filter(|&i| stage1.weight[i] > 0.0 && out.texture.weight[i] <= 0.0)
        .count();
    let covered = (0..stage1.weight.len())
        .filter(|&i| toy.atlas.face(i).is_some() && out.texture.weight[i] > 0.0)
        .count();
    (lost, covered, toy.atlas.covered_count())
}

/// Atlas coverage of a cube whose prior covers only the left half of the atlas.
pub fn half_painted_cube_coverage() -> (usize, usize) {
    let mesh = box_mesh([-0.5, -0.5, -0.5], [0.5, 0.5, 0.5], 3, 0).unwrap();
    let atlas = UvAtlas::build(&mesh, 256, 256);
    let mut prior = smooth_texture(&atlas, 21).unwrap();
    for i in 0..prior.weight.len() {
        if i % 256 >= 128 {
            prior.weight[i] = 0.0;
            prior.texels.pixel_mut(i).fill(0.0);
        }
    }
    let policy = CameraPolicy {
        elevations_deg: vec![35.0, -35.0],
        ..CameraPolicy::furniture().with_resolution(128, 128)
    };
    let views = place_cameras(&policy, &mesh.bounds()).unwrap();
    let backend = ReferenceBackend::new(&ReferenceTexture::Procedural { seed: 22 }, false).unwrap();
    let s = schedule();
    let merge = MergePolicy::default();
    let plan = StagePlan::mvrs();
    let prompts = vec!["a cube".to_string(); views.len()];
    let job = InstanceJob {
        mesh: &mesh,
        atlas: &atlas,
        views: &views,
        prompts: &prompts,
        prior: &prior,
        stage: "mvrs/instance-0",
    };
    let out = mvrs_instance(&mvrs_run(&s, &merge, &plan, 23), &job, &backend, None).unwrap();
    let covered = (0..prior.weight.len())
        .filter(|&i| atlas.face(i).is_some() && (out.chain.texture.weight[i] > 0.0 || prior.weight[i] > 0.0))
        .count();
    (covered, atlas.covered_count())
}

pub fn check_repaint() -> Outcome {
    let start = Instant::now();
    let rms = preserved_rms();
    let identical = unpainted_matches_plain();
    let (lost, covered, total) = zero_weight_growth();
    let (cube_covered, cube_total) = half_painted_cube_coverage();
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        rms < 0.02 && identical && lost == 0 && cube_covered == cube_total && secs < 300.0,
        format!(
            "painted RMS {rms:.4}, unpainted bit-identical {identical}, {lost} texels lost weight ({covered}/{total} covered), cube coverage {cube_covered}/{cube_total}, {secs:.0} s"
        ),
    )
}

// ---------------------------------------------------------------------------
// Schedules and plans

pub fn check_schedules_and_plans() -> Outcome {
    use texsync_core::scene::{stage1_prompt, PROMPT_THRESHOLD};
    let s = schedule();
    let steps = s.inference_steps();
    let merge = MergePolicy::default();
    let cfg = CfgSchedule::default();
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    check(
        merge.exponent(0, steps) == 1.0 && merge.exponent(steps - 1, steps) == 6.0,
        "exponent endpoints",
    );
    check(
        cfg.scale(0, steps) == 10.0 && cfg.scale(steps - 1, steps) == 7.0,
        "guidance endpoints",
    );
    check(
        s.timestep_map().first() == Some(&1000) && s.timestep_map().last() == Some(&20),
        "timestep map",
    );
    check(
        StagePlan::mvis().bounds == [0.9, 0.5, 0.3],
        "integrated-sampling boundaries",
    );
    check(
        StagePlan::mvis().stage_lengths(&s) == [6, 20, 10, 14],
        "integrated-sampling stage lengths",
    );
    check(StagePlan::mvrs().bounds == [0.8, 0.5, 0.3], "repaint boundaries");
    check(
        StagePlan::mvrs().stage_lengths(&s) == [11, 15, 10, 14],
        "repaint stage lengths",
    );
    check(
        StagePlan::mvrs().repaint == [true, true, false, false],
        "repaint stages",
    );

    let scene = ToyRoomSpec::default().scene().unwrap();
    let room = scene.room_bounds();
    let global = place_cameras(&CameraPolicy::global(), &room).unwrap();
    check(
        global.len() == 6 && (global.distance - 1.5).abs() < 1e-12,
        "global cameras",
    );
    let frame = place_cameras(&CameraPolicy::room_frame(), &room).unwrap();
    check(
        frame.len() == 12 && frame.views.iter().all(|v| v.camera.fov_degrees == 80.0),
        "room-frame cameras",
    );
    let bed = scene.instance(1).unwrap();
    let furniture = place_cameras(&CameraPolicy::furniture(), &bed.bounds).unwrap();
    check(
        furniture.len() == 9 && (furniture.distance - 0.95 * bed.bounds.diagonal()).abs() < 1e-12,
        "furniture cameras",
    );
    let base = "A Chinese style bedroom";
    check(PROMPT_THRESHOLD == 0.01, "prompt threshold");
    check(
        stage1_prompt(&scene, &[(1, 0.0101), (2, 0.01), (3, 0.5)], PROMPT_THRESHOLD)
            == format!("{base} with single bed and chair"),
        "prompt threshold rule",
    );
    Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            "exponent 1→6, CFG 10→7, stages [6,20,10,14]/[11,15,10,14], cameras 6/12@80°/9@0.95×diag, threshold 0.01"
                .into()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

// ---------------------------------------------------------------------------
// Determinism

/// A small toy-room pipeline config inside `dir`.
pub fn small_config(dir: &std::path::Path) -> PipelineConfig {
    let scene = ToyRoomSpec::default().write(&dir.join("scene")).unwrap();
    let mut cfg = PipelineConfig::new(scene, dir.join("out"));
    cfg.texture_resolution = 256;
    cfg.seed = 42;
    for p in [
        &mut cfg.cameras.global,
        &mut cfg.cameras.instances.room_frame,
        &mut cfg.cameras.instances.furniture,
    ] {
        p.resolution = [96, 96];
    }
    cfg
}

pub const TEXTURE_FILES: [&str; 4] = [
    "texture_mvis.png",
    "texture_mvrs.png",
    "weight_mvis.png",
    "weight_mvrs.png",
];

pub fn check_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    let mut coverage = Vec::new();
    for workers in [1, 3] {
        let mut cfg = small_config(dir.path());
        cfg.workers = workers;
        cfg.output = dir.path().join(format!("out-{workers}"));
        let report = run_pipeline(&cfg).unwrap();
        coverage.push(report.coverage.mvis_visible_fraction);
        let files: Vec<Vec<u8>> = TEXTURE_FILES
            .iter()
            .map(|f| std::fs::read(cfg.output.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    let identical = outputs[0] == outputs[1];
    Outcome::new(
        identical,
        format!(
            "texture files identical across 1 and 3 workers: {identical}; visible coverage {:.3}",
            coverage[0]
        ),
    )
}
