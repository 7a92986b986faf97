use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{obj, Aabb, Mesh};

/// What part of the scene an instance is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Walls, floor, and ceiling.
    RoomFrame,
    Furniture,
}

/// How instance meshes are laid out in the shared texture atlas.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UvLayout {
    /// Instances without an explicit `uv_region` get one cell of a square grid.
    #[default]
    Grid,
    /// UVs are used exactly as stored in the OBJ files.
    AsIs,
}

/// One `[[instance]]` entry of a manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub id: u32,
    pub label: String,
    pub role: Role,
    /// OBJ file, relative to the manifest.
    pub mesh: PathBuf,
    /// Atlas rectangle `[u0, v0, u1, v1]` the instance UVs are mapped into.
    #[serde(default)]
    pub uv_region: Option<[f64; 4]>,
    /// Azimuth (degrees) of the instance's front side; 0 faces +z.
    #[serde(default)]
    pub front_deg: f64,
    /// Declared bounding box; must contain the mesh when present.
    #[serde(default)]
    pub bbox: Option<Aabb>,
}

/// Scene description file (TOML).
///
/// ```toml
/// prompt = "A Chinese style bedroom"
/// style = "Chinese"          # optional; derived from the prompt otherwise
/// uv_layout = "grid"         # or "as_is"
///
/// [[instance]]
/// id = 0
/// label = "room"
/// role = "room_frame"
/// mesh = "room.obj"
///
/// [[instance]]
/// id = 1
/// label = "single bed"
/// role = "furniture"
/// mesh = "bed.obj"
/// front_deg = 0.0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub prompt: String,
    #[serde(default)]
    pub style: Option<String>,
    #[serde(default)]
    pub uv_layout: UvLayout,
    #[serde(rename = "instance")]
    pub instances: Vec<InstanceRecord>,
}

impl SceneManifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scene manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest is serializable")
    }

    /// Checks the records without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.prompt.trim().is_empty() {
            return Err(Error::Config("scene prompt is empty".into()));
        }
        if self.instances.is_empty() {
            return Err(Error::Config("scene has no instances".into()));
        }
        let mut ids = BTreeSet::new();
        for r in &self.instances {
            if !ids.insert(r.id) {
                return Err(Error::Config(format!("duplicate instance id {}", r.id)));
            }
            if r.label.trim().is_empty() {
                return Err(Error::Config(format!("instance {} has an empty label", r.id)));
            }
            if let Some([u0, v0, u1, v1]) = r.uv_region {
                let inside = [u0, v0, u1, v1].iter().all(|x| (0.0..=1.0).contains(x));
                if !inside || u0 >= u1 || v0 >= v1 {
                    return Err(Error::Config(format!(
                        "instance {} has an invalid uv_region {:?}",
                        r.id, r.uv_region
                    )));
                }
            }
        }
        let frames = self.instances.iter().filter(|r| r.role == Role::RoomFrame).count();
        if frames != 1 {
            return Err(Error::Config(format!(
                "scene needs exactly one room_frame instance, found {frames}"
            )));
        }
        Ok(())
    }

    /// Loads and combines the instance meshes; relative paths resolve against `base`.
    pub fn load_scene(&self, base: &Path) -> Result<Scene> {
        self.validate()?;
        let grid: Vec<usize> = match self.uv_layout {
            UvLayout::Grid => (0..self.instances.len())
                .filter(|&i| self.instances[i].uv_region.is_none())
                .collect(),
            UvLayout::AsIs => Vec::new(),
        };
        let cells = grid_regions(grid.len());
        let mut parts = Vec::with_capacity(self.instances.len());
        for (i, r) in self.instances.iter().enumerate() {
            let path = if r.mesh.is_absolute() {
                r.mesh.clone()
            } else {
                base.join(&r.mesh)
            };
            let mut mesh = obj::load_obj(&path, r.id).map_err(|e| e.context(format!("instance {}", r.id)))?;
            if let Some(region) = r.uv_region {
                mesh = mesh.with_uv_region(region);
            } else if let Some(k) = grid.iter().position(|&g| g == i) {
                if grid.len() > 1 {
                    mesh = mesh.with_uv_region(cells[k]);
                }
            }
            parts.push(mesh);
        }
        let mesh = Mesh::concat(&parts)?;
        Scene::new(self, mesh)
    }
}

/// Square-grid atlas cells with a small inset so charts never touch.
fn grid_regions(n: usize) -> Vec<[f64; 4]> {
    let g = (n as f64).sqrt().ceil().max(1.0) as usize;
    let cell = 1.0 / g as f64;
    let pad = 0.02 * cell;
    (0..n)
        .map(|i| {
            let (c, r) = ((i % g) as f64, (i / g) as f64);
            [
                c * cell + pad,
                r * cell + pad,
                (c + 1.0) * cell - pad,
                (r + 1.0) * cell - pad,
            ]
        })
        .collect()
}

/// An instance of a loaded scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneInstance {
    pub id: u32,
    pub label: String,
    pub role: Role,
    pub bounds: Aabb,
    pub front_deg: f64,
}

/// Loaded scene: combined mesh plus instance metadata in manifest order.
#[derive(Clone, Debug)]
pub struct Scene {
    pub prompt: String,
    pub style: Option<String>,
    pub instances: Vec<SceneInstance>,
    pub mesh: Mesh,
}

impl Scene {
    /// Binds manifest metadata to an already-combined mesh.
    pub fn new(manifest: &SceneManifest, mesh: Mesh) -> Result<Self> {
        manifest.validate()?;
        let declared: BTreeSet<u32> = manifest.instances.iter().map(|r| r.id).collect();
        if let Some(orphan) = mesh.instance_ids().into_iter().find(|id| !declared.contains(id)) {
            return Err(Error::Config(format!(
                "mesh faces carry instance id {orphan} which the manifest does not declare"
            )));
        }
        let mut instances = Vec::with_capacity(manifest.instances.len());
        for r in &manifest.instances {
            let bounds = mesh
                .instance_bounds(r.id)
                .ok_or_else(|| Error::Config(format!("instance {} ({}) has no faces", r.id, r.label)))?;
            if let Some(declared) = r.bbox {
                if !declared.contains(&bounds, 1e-6 * bounds.diagonal().max(1.0)) {
                    return Err(Error::Config(format!(
                        "instance {} bbox {:?} does not contain its mesh {:?}",
                        r.id, declared, bounds
                    )));
                }
            }
            instances.push(SceneInstance {
                id: r.id,
                label: r.label.trim().to_string(),
                role: r.role,
                bounds,
                front_deg: r.front_deg,
            });
        }
        Ok(Self {
            prompt: manifest.prompt.trim().to_string(),
            style: manifest.style.clone(),
            instances,
            mesh,
        })
    }

    pub fn room_frame(&self) -> &SceneInstance {
        self.instances
            .iter()
            .find(|i| i.role == Role::RoomFrame)
            .expect("validated scenes have one room frame")
    }

    /// Bounding box of the room frame mesh.
    pub fn room_bounds(&self) -> Aabb {
        self.room_frame().bounds
    }

    pub fn instance(&self, id: u32) -> Option<&SceneInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn furniture(&self) -> impl Iterator<Item = &SceneInstance> {
        self.instances.iter().filter(|i| i.role == Role::Furniture)
    }
}
