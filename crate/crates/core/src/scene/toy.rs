//! Procedural box rooms and smooth reference textures for tests and demos.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{InstanceRecord, Role, Scene, SceneManifest, UvLayout};
use crate::error::{Error, Result};
use crate::geometry::{obj, Mesh, Point, TextureMap, Uv, UvAtlas, Vec3};
use crate::image::Image;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyFurniture {
    pub label: String,
    /// Footprint center on the floor, `(x, z)`.
    pub center_xz: [f64; 2],
    pub size: [f64; 3],
    #[serde(default)]
    pub front_deg: f64,
}

/// An axis-aligned room centred on the origin (floor at `y = 0`) with box furniture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRoomSpec {
    pub prompt: String,
    /// Room width (x), height (y), depth (z).
    pub room: [f64; 3],
    pub furniture: Vec<ToyFurniture>,
    /// Each box side is split into `subdivisions²` quads.
    pub subdivisions: usize,
    /// Gap between atlas charts as a fraction of a chart cell.
    pub gutter: f64,
}

impl Default for ToyRoomSpec {
    fn default() -> Self {
        Self {
            prompt: "A Chinese style bedroom".into(),
            room: [4.0, 2.5, 3.0],
            furniture: vec![
                ToyFurniture {
                    label: "single bed".into(),
                    center_xz: [-1.0, 0.2],
                    size: [1.4, 0.5, 2.0],
                    front_deg: 0.0,
                },
                ToyFurniture {
                    label: "wardrobe".into(),
                    center_xz: [1.75, 0.0],
                    size: [0.5, 2.0, 1.0],
                    front_deg: -90.0,
                },
                ToyFurniture {
                    label: "chair".into(),
                    center_xz: [0.5, -0.9],
                    size: [0.6, 0.9, 0.6],
                    front_deg: 0.0,
                },
            ],
            subdivisions: 4,
            gutter: 0.06,
        }
    }
}

struct Quad {
    origin: Point,
    eu: Vec3,
    ev: Vec3,
    instance: u32,
}

/// Sides of an axis-aligned box; `inward` flips the winding so normals point in.
fn box_quads(min: [f64; 3], max: [f64; 3], inward: bool, skip_bottom: bool, instance: u32) -> Vec<Quad> {
    let mut quads = Vec::new();
    for k in 0..3 {
        for outward_positive in [true, false] {
            if skip_bottom && k == 1 && !outward_positive {
                continue;
            }
            let (a, b) = ((k + 1) % 3, (k + 2) % 3);
            let mut origin = [0.0; 3];
            origin[k] = if outward_positive { max[k] } else { min[k] };
            origin[a] = min[a];
            origin[b] = min[b];
            let mut ea = Vec3::zeros();
            ea[a] = max[a] - min[a];
            let mut eb = Vec3::zeros();
            eb[b] = max[b] - min[b];
            // ea × eb points along +k; swap to flip.
            let positive_normal = outward_positive != inward;
            let (eu, ev) = if positive_normal { (ea, eb) } else { (eb, ea) };
            quads.push(Quad {
                origin: Point::from(origin),
                eu,
                ev,
                instance,
            });
        }
    }
    quads
}

/// Packs each quad into its own atlas cell and splits it into `s²` cells of two triangles.
fn quads_mesh(quads: &[Quad], s: usize, gutter: f64) -> Result<Mesh> {
    let g = (quads.len() as f64).sqrt().ceil() as usize;
    let cell = 1.0 / g as f64;
    let pad = gutter * cell;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut uvs: Vec<[Uv; 3]> = Vec::new();
    let mut ids = Vec::new();
    for (q, quad) in quads.iter().enumerate() {
        let (u0, v0) = ((q % g) as f64 * cell + pad, (q / g) as f64 * cell + pad);
        let span = cell - 2.0 * pad;
        let base = vertices.len() as u32;
        for j in 0..=s {
            for i in 0..=s {
                let (a, b) = (i as f64 / s as f64, j as f64 / s as f64);
                vertices.push(quad.origin + a * quad.eu + b * quad.ev);
            }
        }
        let idx = |i: usize, j: usize| base + (j * (s + 1) + i) as u32;
        let uv = |i: usize, j: usize| [u0 + span * i as f64 / s as f64, v0 + span * j as f64 / s as f64];
        for j in 0..s {
            for i in 0..s {
                faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                uvs.push([uv(i, j), uv(i + 1, j), uv(i + 1, j + 1)]);
                faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
                uvs.push([uv(i, j), uv(i + 1, j + 1), uv(i, j + 1)]);
                ids.extend([quad.instance; 2]);
            }
        }
    }
    Mesh::new(vertices, faces, uvs, ids)
}

/// A closed, outward-facing axis-aligned box as one instance, one atlas chart
/// per side, each side split into `subdivisions²` quads.
pub fn box_mesh(min: [f64; 3], max: [f64; 3], subdivisions: usize, instance: u32) -> Result<Mesh> {
    if (0..3).any(|k| !(max[k] > min[k])) || subdivisions == 0 {
        return Err(Error::Config(format!("invalid box {min:?}..{max:?} / {subdivisions}")));
    }
    quads_mesh(&box_quads(min, max, false, false, instance), subdivisions, 0.06)
}

impl ToyRoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.room.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("toy room dimensions must be positive".into()));
        }
        if self.subdivisions == 0 || !(0.0..0.5).contains(&self.gutter) {
            return Err(Error::Config(
                "toy room needs subdivisions ≥ 1 and gutter in [0, 0.5)".into(),
            ));
        }
        for f in &self.furniture {
            if f.size.iter().any(|&s| !(s > 0.0)) || f.label.trim().is_empty() {
                return Err(Error::Config(format!("invalid toy furniture {:?}", f.label)));
            }
        }
        Ok(())
    }

    fn quads(&self) -> Vec<Quad> {
        let [w, h, d] = self.room;
        let mut quads = box_quads([-w / 2.0, 0.0, -d / 2.0], [w / 2.0, h, d / 2.0], true, false, 0);
        for (i, f) in self.furniture.iter().enumerate() {
            let [fx, fy, fz] = f.size;
            let [cx, cz] = f.center_xz;
            let min = [cx - fx / 2.0, 0.0, cz - fz / 2.0];
            let max = [cx + fx / 2.0, fy, cz + fz / 2.0];
            quads.extend(box_quads(min, max, false, true, i as u32 + 1));
        }
        quads
    }

    /// Builds the combined mesh: one atlas chart per box side, instance 0 is the
    /// room frame and furniture follows in order.
    pub fn mesh(&self) -> Result<Mesh> {
        self.validate()?;
        quads_mesh(&self.quads(), self.subdivisions, self.gutter)
    }

    /// Manifest describing this room with one OBJ per instance.
    pub fn manifest(&self) -> SceneManifest {
        let mut instances = vec![InstanceRecord {
            id: 0,
            label: "room".into(),
            role: Role::RoomFrame,
            mesh: PathBuf::from("room.obj"),
            uv_region: None,
            front_deg: 0.0,
            bbox: None,
        }];
        for (i, f) in self.furniture.iter().enumerate() {
            instances.push(InstanceRecord {
                id: i as u32 + 1,
                label: f.label.clone(),
                role: Role::Furniture,
                mesh: PathBuf::from(format!("instance_{}.obj", i + 1)),
                uv_region: None,
                front_deg: f.front_deg,
                bbox: None,
            });
        }
        SceneManifest {
            prompt: self.prompt.clone(),
            style: None,
            uv_layout: UvLayout::AsIs,
            instances,
        }
    }

    pub fn scene(&self) -> Result<Scene> {
        Scene::new(&self.manifest(), self.mesh()?)
    }

    /// Writes the per-instance OBJ files and `scene.toml` into `dir`; returns
    /// the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mesh = self.mesh()?;
        let manifest = self.manifest();
        for r in &manifest.instances {
            let sub = mesh
                .instance_submesh(r.id)
                .ok_or_else(|| Error::Mesh(format!("toy instance {} has no faces", r.id)))?;
            obj::save_obj(&sub, &dir.join(&r.mesh))?;
        }
        let path = dir.join("scene.toml");
        std::fs::write(&path, manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Low-frequency RGB pattern over the atlas, zero (with zero weight) outside charts.
///
/// Each channel is a sum of two plane waves in UV space with random direction
/// and phase drawn from `seed`, so the pattern is smooth at texel scale.
pub fn smooth_texture(atlas: &UvAtlas, seed: u64) -> Result<TextureMap> {
    let mut r = rng::stream(seed, "toy.texture", 0);
    let waves: Vec<[f64; 4]> = (0..6)
        .map(|_| {
            [
                r.random_range(-2.0..2.0),
                r.random_range(-2.0..2.0),
                r.random_range(0.0..TAU),
                r.random_range(0.08..0.18),
            ]
        })
        .collect();
    let means: Vec<f64> = (0..3).map(|_| r.random_range(0.35..0.65)).collect();
    let (w, h) = (atlas.width(), atlas.height());
    let img = Image::from_fn(w, h, 3, |x, y, c| {
        let u = (x as f64 + 0.5) / w as f64;
        let v = 1.0 - (y as f64 + 0.5) / h as f64;
        let mut val = means[c];
        for wave in &waves[2 * c..2 * c + 2] {
            val += wave[3] * (TAU * (wave[0] * u + wave[1] * v) + wave[2]).sin();
        }
        val
    });
    TextureMap::with_coverage(img, atlas)
}
