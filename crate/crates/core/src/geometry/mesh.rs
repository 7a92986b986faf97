use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Point = Point3<f64>;
pub type Uv = [f64; 2];

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut min = [first.x, first.y, first.z];
        let mut max = min;
        for p in it {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Some(Self { min, max })
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn extent(&self) -> Vec3 {
        Vec3::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn shortest_axis(&self) -> f64 {
        let e = self.extent();
        e.x.min(e.y).min(e.z)
    }

    pub fn contains(&self, other: &Aabb, tol: f64) -> bool {
        (0..3).all(|k| other.min[k] >= self.min[k] - tol && other.max[k] <= self.max[k] + tol)
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        for k in 0..3 {
            out.min[k] = out.min[k].min(other.min[k]);
            out.max[k] = out.max[k].max(other.max[k]);
        }
        out
    }
}

/// Triangle mesh with a per-corner UV atlas and per-face instance labels.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point>,
    faces: Vec<[u32; 3]>,
    uvs: Vec<[Uv; 3]>,
    face_instance: Vec<u32>,
    normals: Vec<Vec3>,
    charts: Vec<u32>,
    bounds: Aabb,
}

impl Mesh {
    pub fn new(vertices: Vec<Point>, faces: Vec<[u32; 3]>, uvs: Vec<[Uv; 3]>, face_instance: Vec<u32>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::Mesh("mesh has no faces".into()));
        }
        if uvs.len() != faces.len() || face_instance.len() != faces.len() {
            return Err(Error::Mesh(format!(
                "{} faces but {} uv triples and {} instance ids",
                faces.len(),
                uvs.len(),
                face_instance.len()
            )));
        }
        let nv = vertices.len() as u32;
        let mut normals = Vec::with_capacity(faces.len());
        for (f, face) in faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&i| i >= nv) {
                return Err(Error::Mesh(format!(
                    "face {f} references vertex {bad} but mesh has {nv} vertices"
                )));
            }
            for uv in &uvs[f] {
                if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
                    return Err(Error::Mesh(format!(
                        "face {f} has uv ({}, {}) outside [0,1]^2",
                        uv[0], uv[1]
                    )));
                }
            }
            let [a, b, c] = face.map(|i| vertices[i as usize]);
            let n = (b - a).cross(&(c - a));
            let len = n.norm();
            if !(len > 1e-14) {
                return Err(Error::Mesh(format!("face {f} is degenerate")));
            }
            normals.push(n / len);
        }
        if vertices.iter().any(|p| !p.coords.iter().all(|v| v.is_finite())) {
            return Err(Error::Mesh("non-finite vertex position".into()));
        }
        let bounds = Aabb::from_points(&vertices).expect("faces imply vertices");
        let charts = uv_charts(&faces, &uvs);
        Ok(Self {
            vertices,
            faces,
            uvs,
            face_instance,
            normals,
            charts,
            bounds,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn face_uvs(&self, f: usize) -> &[Uv; 3] {
        &self.uvs[f]
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.normals[f]
    }

    /// UV chart of face `f`: faces sharing an edge whose UVs agree on both
    /// sides belong to the same chart, so the texture is continuous across them.
    pub fn face_chart(&self, f: usize) -> u32 {
        self.charts[f]
    }

    pub fn face_charts(&self) -> &[u32] {
        &self.charts
    }

    pub fn face_normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn face_instance(&self, f: usize) -> u32 {
        self.face_instance[f]
    }

    pub fn face_instances(&self) -> &[u32] {
        &self.face_instance
    }

    pub fn face_vertices(&self, f: usize) -> [Point; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    /// Surface point of face `f` at barycentric coordinates `bary`.
    pub fn surface_point(&self, f: usize, bary: [f64; 3]) -> Point {
        let [a, b, c] = self.face_vertices(f);
        Point::from(a.coords * bary[0] + b.coords * bary[1] + c.coords * bary[2])
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn diagonal(&self) -> f64 {
        self.bounds.diagonal()
    }

    /// Sorted, de-duplicated instance ids present in the mesh.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids = self.face_instance.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn instance_bounds(&self, instance: u32) -> Option<Aabb> {
        let pts = self
            .faces
            .iter()
            .zip(&self.face_instance)
            .filter(|(_, &id)| id == instance)
            .flat_map(|(face, _)| face.iter().map(|&i| &self.vertices[i as usize]));
        Aabb::from_points(pts)
    }

    /// Faces of one instance as a standalone mesh. UVs are unchanged so the
    /// sub-mesh addresses the same atlas texels as the full scene.
    pub fn instance_submesh(&self, instance: u32) -> Option<Mesh> {
        let keep: Vec<usize> = (0..self.faces.len())
            .filter(|&f| self.face_instance[f] == instance)
            .collect();
        if keep.is_empty() {
            return None;
        }
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut faces = Vec::with_capacity(keep.len());
        for &f in &keep {
            let face = self.faces[f].map(|i| {
                let slot = &mut remap[i as usize];
                if *slot == u32::MAX {
                    *slot = vertices.len() as u32;
                    vertices.push(self.vertices[i as usize]);
                }
                *slot
            });
            faces.push(face);
        }
        let uvs = keep.iter().map(|&f| self.uvs[f]).collect();
        let ids = vec![instance; keep.len()];
        Mesh::new(vertices, faces, uvs, ids).ok()
    }

    /// Concatenates meshes, keeping each face's instance id.
    pub fn concat(parts: &[Mesh]) -> Result<Mesh> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut uvs = Vec::new();
        let mut ids = Vec::new();
        for part in parts {
            let base = vertices.len() as u32;
            vertices.extend_from_slice(&part.vertices);
            faces.extend(part.faces.iter().map(|f| f.map(|i| i + base)));
            uvs.extend_from_slice(&part.uvs);
            ids.extend_from_slice(&part.face_instance);
        }
        Mesh::new(vertices, faces, uvs, ids)
    }

    /// Returns a copy with every face relabelled to `instance`.
    pub fn with_instance(mut self, instance: u32) -> Mesh {
        self.face_instance.iter_mut().for_each(|id| *id = instance);
        self
    }

    /// Returns a copy with UVs affinely mapped into the rectangle `[u0,v0]..[u1,v1]`.
    pub fn with_uv_region(mut self, region: [f64; 4]) -> Mesh {
        let [u0, v0, u1, v1] = region;
        for tri in &mut self.uvs {
            for uv in tri.iter_mut() {
                uv[0] = (u0 + uv[0] * (u1 - u0)).clamp(0.0, 1.0);
                uv[1] = (v0 + uv[1] * (v1 - v0)).clamp(0.0, 1.0);
            }
        }
        self
    }
}

/// Connected components of faces joined by UV-continuous edges, labelled by
/// their smallest face index.
fn uv_charts(faces: &[[u32; 3]], uvs: &[[Uv; 3]]) -> Vec<u32> {
    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }
    const UV_EPS: f64 = 1e-9;
    let close = |a: Uv, b: Uv| (a[0] - b[0]).abs() <= UV_EPS && (a[1] - b[1]).abs() <= UV_EPS;
    let mut parent: Vec<u32> = (0..faces.len() as u32).collect();
    // Undirected edge -> (face, UV at the lower vertex, UV at the higher vertex).
    type EdgeUses = Vec<(u32, Uv, Uv)>;
    let mut edges: std::collections::HashMap<(u32, u32), EdgeUses> = std::collections::HashMap::new();
    for (f, face) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (face[k], face[(k + 1) % 3]);
            let (ua, ub) = (uvs[f][k], uvs[f][(k + 1) % 3]);
            let (key, u_lo, u_hi) = if a < b { ((a, b), ua, ub) } else { ((b, a), ub, ua) };
            let entry = edges.entry(key).or_default();
            for &(g, g_lo, g_hi) in entry.iter() {
                if close(g_lo, u_lo) && close(g_hi, u_hi) {
                    let (ra, rb) = (find(&mut parent, g), find(&mut parent, f as u32));
                    let (lo, hi) = (ra.min(rb), ra.max(rb));
                    parent[hi as usize] = lo;
                }
            }
            entry.push((f as u32, u_lo, u_hi));
        }
    }
    (0..faces.len() as u32).map(|f| find(&mut parent, f)).collect()
}
