//! Wavefront OBJ reading and writing (positions, texture coordinates, faces).
//!
//! Polygons are fan-triangulated. Faces without texture coordinates are
//! rejected because every face must map into the UV atlas.

use std::fmt::Write as _;
use std::path::Path;

use super::mesh::{Mesh, Point, Uv};
use crate::error::{Error, Result};

/// UVs this far outside `[0,1]` are clamped instead of rejected.
const UV_SLACK: f64 = 1e-6;

pub fn parse_obj(text: &str, instance: u32) -> Result<Mesh> {
    let mut positions: Vec<Point> = Vec::new();
    let mut texcoords: Vec<Uv> = Vec::new();
    let mut faces = Vec::new();
    let mut uvs = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        let Some(kind) = tok.next() else { continue };
        let err = |msg: String| Error::Mesh(format!("line {}: {msg}", lineno + 1));
        let floats = |tok: std::str::SplitWhitespace<'_>, n: usize| -> Result<Vec<f64>> {
            let xs: Vec<f64> = tok
                .take(n)
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(e.to_string()))?;
            if xs.len() < n {
                return Err(err(format!("expected {n} numbers")));
            }
            Ok(xs)
        };
        match kind {
            "v" => {
                let p = floats(tok, 3)?;
                positions.push(Point::new(p[0], p[1], p[2]));
            }
            "vt" => {
                let t = floats(tok, 2)?;
                let mut uv = [t[0], t[1]];
                for c in &mut uv {
                    if *c < -UV_SLACK || *c > 1.0 + UV_SLACK {
                        return Err(err(format!("texture coordinate {c} outside [0,1]")));
                    }
                    *c = c.clamp(0.0, 1.0);
                }
                texcoords.push(uv);
            }
            "f" => {
                let mut corners = Vec::new();
                for t in tok {
                    let mut parts = t.split('/');
                    let vi = resolve(parts.next(), positions.len()).map_err(&err)?;
                    let ti = resolve(parts.next(), texcoords.len())
                        .map_err(|_| err(format!("face corner `{t}` has no texture coordinate")))?;
                    corners.push((vi, ti));
                }
                if corners.len() < 3 {
                    return Err(err("face with fewer than 3 corners".into()));
                }
                for k in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[k], corners[k + 1]];
                    faces.push(tri.map(|c| c.0 as u32));
                    uvs.push(tri.map(|c| texcoords[c.1]));
                }
            }
            _ => {}
        }
    }
    let ids = vec![instance; faces.len()];
    Mesh::new(positions, faces, uvs, ids)
}

fn resolve(token: Option<&str>, len: usize) -> std::result::Result<usize, String> {
    let t = token.filter(|t| !t.is_empty()).ok_or("missing index")?;
    let i: i64 = t.parse().map_err(|e| format!("bad index `{t}`: {e}"))?;
    let idx = if i < 0 { len as i64 + i } else { i - 1 };
    if idx < 0 || idx as usize >= len {
        return Err(format!("index {i} out of range ({len} entries)"));
    }
    Ok(idx as usize)
}

pub fn load_obj(path: &Path, instance: u32) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, instance).map_err(|e| e.context(format!("loading {}", path.display())))
}

/// Serializes a mesh with one texture coordinate per face corner.
pub fn to_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in 0..mesh.face_count() {
        for uv in mesh.face_uvs(f) {
            let _ = writeln!(out, "vt {} {}", uv[0], uv[1]);
        }
    }
    for (f, face) in mesh.faces().iter().enumerate() {
        let _ = writeln!(
            out,
            "f {}/{} {}/{} {}/{}",
            face[0] + 1,
            3 * f + 1,
            face[1] + 1,
            3 * f + 2,
            face[2] + 1,
            3 * f + 3
        );
    }
    out
}

pub fn save_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, to_obj(mesh)).map_err(|e| Error::io(path, e))
}
