//! Perspective rasterization with a z-buffer, texture lookup, and the inverse
//! mapping from image pixels back into atlas texels.

use rayon::prelude::*;

use super::camera::{Camera, CameraFrame};
use super::mesh::{Mesh, Point, Uv, Vec3};
use super::texture::{TextureMap, UvAtlas};
use super::tri::{barycentric, scan_triangle};
use crate::error::{Error, Result};
use crate::image::Image;

/// Depth written to background pixels.
pub const BACKGROUND_DEPTH: f64 = 0.0;

/// Visibility depth tolerance as a fraction of the scene diagonal.
pub const DEPTH_TOLERANCE_FRACTION: f64 = 1e-3;

const BIN_SIZE: usize = 16;

/// Everything a sampler needs to know about one rendered view.
#[derive(Clone, Debug)]
pub struct ViewRenderBundle {
    pub color: Image,
    /// View-space depth; [`BACKGROUND_DEPTH`] where nothing is hit.
    pub depth: Image,
    pub similarity: Image,
    pub foreground_mask: Image,
    /// Visible face per pixel, `-1` on background.
    pub face_id: Vec<i32>,
}

#[derive(Clone, Copy, Debug)]
struct ScreenVertex {
    sx: f64,
    sy: f64,
    inv_z: f64,
    bary: [f64; 3],
}

#[derive(Clone, Debug)]
struct ScreenTri {
    v: [ScreenVertex; 3],
}

impl ScreenTri {
    fn points(&self) -> [(f64, f64); 3] {
        self.v.map(|q| (q.sx, q.sy))
    }

    /// Perspective-correct depth and face barycentrics at screen weights `l`.
    #[inline]
    fn interpolate(&self, l: [f64; 3]) -> (f64, [f64; 3]) {
        let w = [l[0] * self.v[0].inv_z, l[1] * self.v[1].inv_z, l[2] * self.v[2].inv_z];
        let inv_z = w[0] + w[1] + w[2];
        let mut bary = [0.0; 3];
        for (k, b) in bary.iter_mut().enumerate() {
            *b = (w[0] * self.v[0].bary[k] + w[1] * self.v[1].bary[k] + w[2] * self.v[2].bary[k]) / inv_z;
        }
        (1.0 / inv_z, bary)
    }
}

#[derive(Clone, Copy)]
struct ClipVertex {
    view: Vec3,
    bary: [f64; 3],
}

fn clip_polygon(poly: &[ClipVertex], keep: impl Fn(&Vec3) -> f64) -> Vec<ClipVertex> {
    // keep(v) >= 0 is inside
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let da = keep(&a.view);
        let db = keep(&b.view);
        if da >= 0.0 {
            out.push(a);
        }
        if (da >= 0.0) != (db >= 0.0) {
            let t = da / (da - db);
            let bary: [f64; 3] = std::array::from_fn(|k| a.bary[k] + t * (b.bary[k] - a.bary[k]));
            out.push(ClipVertex {
                view: a.view + (b.view - a.view) * t,
                bary,
            });
        }
    }
    out
}

/// Per-pixel rasterization of a mesh from one camera.
#[derive(Clone, Debug)]
pub struct Rasterization {
    frame: CameraFrame,
    face_id: Vec<i32>,
    depth: Vec<f64>,
    uv: Vec<Uv>,
    similarity: Vec<f64>,
    tris: Vec<ScreenTri>,
    bins: Vec<Vec<u32>>,
    bins_x: usize,
    depth_tolerance: f64,
}

/// `max(0, cos)` between the face normal and the direction toward the camera.
#[inline]
pub fn view_similarity(normal: &Vec3, point: &Point, camera: &Point) -> f64 {
    let to_cam = camera - point;
    let len = to_cam.norm();
    if len <= 0.0 {
        return 0.0;
    }
    (normal.dot(&to_cam) / len).clamp(0.0, 1.0)
}

/// Back faces (normal not pointing at the camera) are culled everywhere.
#[inline]
pub fn is_front_facing(mesh: &Mesh, f: usize, camera: &Point) -> bool {
    let v0 = mesh.vertices()[mesh.faces()[f][0] as usize];
    mesh.face_normal(f).dot(&(camera - v0)) > 0.0
}

impl Rasterization {
    pub fn new(mesh: &Mesh, camera: &Camera) -> Result<Self> {
        let frame = camera.frame()?;
        let (w, h) = (frame.width, frame.height);
        let n = w * h;
        let mut face_id = vec![-1i32; n];
        let mut depth = vec![f64::INFINITY; n];
        let mut bary_buf = vec![[0.0; 3]; n];
        let mut tris = Vec::new();
        let cam = frame.origin;

        for f in 0..mesh.face_count() {
            if !is_front_facing(mesh, f, &cam) {
                continue;
            }
            let verts = mesh.face_vertices(f);
            let poly: Vec<ClipVertex> = (0..3)
                .map(|k| {
                    let mut bary = [0.0; 3];
                    bary[k] = 1.0;
                    ClipVertex {
                        view: frame.to_view(&verts[k]),
                        bary,
                    }
                })
                .collect();
            let near = frame.near;
            let far = frame.far;
            let poly = clip_polygon(&poly, |v| v.z - near);
            if poly.len() < 3 {
                continue;
            }
            let poly = clip_polygon(&poly, |v| far - v.z);
            if poly.len() < 3 {
                continue;
            }
            let screen: Vec<ScreenVertex> = poly
                .iter()
                .map(|c| {
                    let (sx, sy) = frame.view_to_screen(&c.view);
                    ScreenVertex {
                        sx,
                        sy,
                        inv_z: 1.0 / c.view.z,
                        bary: c.bary,
                    }
                })
                .collect();
            for k in 1..screen.len() - 1 {
                let tri = ScreenTri {
                    v: [screen[0], screen[k], screen[k + 1]],
                };
                scan_triangle(tri.points(), w, h, |x, y, l| {
                    let (z, bary) = tri.interpolate(l);
                    let i = y * w + x;
                    if z < depth[i] {
                        depth[i] = z;
                        face_id[i] = f as i32;
                        bary_buf[i] = bary;
                    }
                });
                tris.push(tri);
            }
        }

        let mut uv = vec![[0.0; 2]; n];
        let mut similarity = vec![0.0; n];
        for i in 0..n {
            if face_id[i] < 0 {
                depth[i] = BACKGROUND_DEPTH;
                continue;
            }
            let f = face_id[i] as usize;
            let b = bary_buf[i];
            let uvs = mesh.face_uvs(f);
            uv[i] = [
                b[0] * uvs[0][0] + b[1] * uvs[1][0] + b[2] * uvs[2][0],
                b[0] * uvs[0][1] + b[1] * uvs[1][1] + b[2] * uvs[2][1],
            ];
            let p = mesh.surface_point(f, b);
            similarity[i] = view_similarity(&mesh.face_normal(f), &p, &cam);
        }

        let bins_x = w.div_ceil(BIN_SIZE);
        let bins_y = h.div_ceil(BIN_SIZE);
        let mut bins = vec![Vec::new(); bins_x * bins_y];
        for (t, tri) in tris.iter().enumerate() {
            let pts = tri.points();
            let lo_x = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi_x = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let lo_y = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let hi_y = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            if hi_x < 0.0 || hi_y < 0.0 || lo_x > w as f64 || lo_y > h as f64 {
                continue;
            }
            let bx0 = (lo_x.max(0.0) as usize / BIN_SIZE).min(bins_x - 1);
            let bx1 = ((hi_x.min(w as f64)) as usize / BIN_SIZE).min(bins_x - 1);
            let by0 = (lo_y.max(0.0) as usize / BIN_SIZE).min(bins_y - 1);
            let by1 = ((hi_y.min(h as f64)) as usize / BIN_SIZE).min(bins_y - 1);
            for by in by0..=by1 {
                for bx in bx0..=bx1 {
                    bins[by * bins_x + bx].push(t as u32);
                }
            }
        }

        Ok(Self {
            frame,
            face_id,
            depth,
            uv,
            similarity,
            tris,
            bins,
            bins_x,
            depth_tolerance: DEPTH_TOLERANCE_FRACTION * mesh.diagonal(),
        })
    }

    pub fn frame(&self) -> &CameraFrame {
        &self.frame
    }

    pub fn width(&self) -> usize {
        self.frame.width
    }

    pub fn height(&self) -> usize {
        self.frame.height
    }

    pub fn face_id(&self) -> &[i32] {
        &self.face_id
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn uv(&self) -> &[Uv] {
        &self.uv
    }

    pub fn similarity(&self) -> &[f64] {
        &self.similarity
    }

    pub fn depth_tolerance(&self) -> f64 {
        self.depth_tolerance
    }

    pub fn foreground_count(&self) -> usize {
        self.face_id.iter().filter(|&&f| f >= 0).count()
    }

    /// Nearest rasterized depth along the ray through a continuous screen point,
    /// evaluated exactly on the clipped screen triangles rather than at pixel centers.
    pub fn nearest_depth(&self, sx: f64, sy: f64) -> Option<f64> {
        if sx < 0.0 || sy < 0.0 {
            return None;
        }
        let bx = sx as usize / BIN_SIZE;
        let by = sy as usize / BIN_SIZE;
        if bx >= self.bins_x || by * self.bins_x + bx >= self.bins.len() {
            return None;
        }
        let mut best: Option<f64> = None;
        for &t in &self.bins[by * self.bins_x + bx] {
            let tri = &self.tris[t as usize];
            let Some(l) = barycentric(tri.points(), (sx, sy)) else {
                continue;
            };
            if l.iter().all(|&x| x >= 0.0) {
                let (z, _) = tri.interpolate(l);
                best = Some(best.map_or(z, |b: f64| b.min(z)));
            }
        }
        best
    }

    pub fn foreground_mask(&self) -> Image {
        let data = self.face_id.iter().map(|&f| if f >= 0 { 1.0 } else { 0.0 }).collect();
        Image::from_vec(self.width(), self.height(), 1, data).expect("sized from raster")
    }

    pub fn depth_image(&self) -> Image {
        Image::from_vec(self.width(), self.height(), 1, self.depth.clone()).expect("sized from raster")
    }

    pub fn similarity_image(&self) -> Image {
        Image::from_vec(self.width(), self.height(), 1, self.similarity.clone()).expect("sized from raster")
    }

    /// Foreground depth normalized to `[0, 1]` (nearest 0, farthest 1), background 1.
    pub fn normalized_depth(&self) -> Image {
        let fg = self.depth.iter().zip(&self.face_id).filter(|(_, &f)| f >= 0);
        let (lo, hi) = fg.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&d, _)| {
            (lo.min(d), hi.max(d))
        });
        let span = hi - lo;
        let data = self
            .depth
            .iter()
            .zip(&self.face_id)
            .map(|(&d, &f)| {
                if f < 0 {
                    1.0
                } else if span > 0.0 {
                    (d - lo) / span
                } else {
                    0.0
                }
            })
            .collect();
        Image::from_vec(self.width(), self.height(), 1, data).expect("sized from raster")
    }
}

/// Bilinear texture lookup restricted to texels with positive weight.
///
/// Falls back to the nearest weighted texel within two texels when none of
/// the four bilinear taps is weighted. Returns `false` if nothing is found.
pub fn sample_texture(texture: &TextureMap, uv: Uv, out: &mut [f64]) -> bool {
    let (w, h) = texture.resolution();
    let tx = uv[0] * w as f64 - 0.5;
    let ty = (1.0 - uv[1]) * h as f64 - 0.5;
    let x0 = tx.floor();
    let y0 = ty.floor();
    let fx = tx - x0;
    let fy = ty - y0;
    out.fill(0.0);
    let mut total = 0.0;
    for (dx, dy, wt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        let x = x0 as i64 + dx;
        let y = y0 as i64 + dy;
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 || wt <= 0.0 {
            continue;
        }
        let i = y as usize * w + x as usize;
        if texture.weight[i] > 0.0 {
            for (o, v) in out.iter_mut().zip(texture.texels.pixel(i)) {
                *o += wt * v;
            }
            total += wt;
        }
    }
    if total > 0.0 {
        out.iter_mut().for_each(|o| *o /= total);
        return true;
    }
    let cx = (tx + 0.5).floor() as i64;
    let cy = (ty + 0.5).floor() as i64;
    let mut best: Option<(f64, usize)> = None;
    for y in cy - 2..=cy + 2 {
        for x in cx - 2..=cx + 2 {
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                continue;
            }
            let i = y as usize * w + x as usize;
            if texture.weight[i] > 0.0 {
                let d = (x as f64 - tx).powi(2) + (y as f64 - ty).powi(2);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
    }
    match best {
        Some((_, i)) => {
            out.copy_from_slice(texture.texels.pixel(i));
            true
        }
        None => false,
    }
}

/// Footprint multiple within which a pixel's UV counts as adjacent to a texel's.
const UV_MATCH_PIXELS: f64 = 3.0;

/// Smallest UV distance spanned by one pixel step on face `f`: the lower
/// singular value of the affine screen-to-UV map through its projected
/// vertices. Using the lower value keeps the match radius tight on grazing
/// faces, whose stretched direction would otherwise reach across folds. Zero
/// when the face reaches behind the camera, which disables UV-based tap
/// matching for it.
fn uv_per_pixel(mesh: &Mesh, f: usize, frame: &CameraFrame) -> f64 {
    let verts = mesh.face_vertices(f);
    let mut screen = [(0.0, 0.0); 3];
    for (k, p) in verts.iter().enumerate() {
        let v = frame.to_view(p);
        if v.z < frame.near {
            return 0.0;
        }
        screen[k] = frame.view_to_screen(&v);
    }
    let uvs = mesh.face_uvs(f);
    let s = nalgebra::Matrix2::new(
        screen[1].0 - screen[0].0,
        screen[2].0 - screen[0].0,
        screen[1].1 - screen[0].1,
        screen[2].1 - screen[0].1,
    );
    let u = nalgebra::Matrix2::new(
        uvs[1][0] - uvs[0][0],
        uvs[2][0] - uvs[0][0],
        uvs[1][1] - uvs[0][1],
        uvs[2][1] - uvs[0][1],
    );
    match s.try_inverse() {
        Some(inv) => (u * inv).singular_values().min(),
        None => 0.0,
    }
}

/// Where one texel lands in a view, as input to tap selection.
#[derive(Clone, Copy, Debug)]
struct TexelProbe {
    texel: usize,
    face: usize,
    uv: Uv,
    uv_radius: f64,
    sx: f64,
    sy: f64,
    z: f64,
    similarity: f64,
}

#[derive(Clone, Copy, Debug)]
struct TexelTaps {
    texel: u32,
    count: u8,
    pixels: [u32; 4],
    weights: [f64; 4],
    similarity: f64,
}

/// Where each visible atlas texel lands in one view.
#[derive(Clone, Debug)]
pub struct TexelProjection {
    width: usize,
    height: usize,
    entries: Vec<TexelTaps>,
}

impl TexelProjection {
    pub fn new(mesh: &Mesh, raster: &Rasterization, atlas: &UvAtlas) -> Self {
        let frame = raster.frame;
        let tol = raster.depth_tolerance;
        let (iw, ih) = (raster.width(), raster.height());
        let n = atlas.width() * atlas.height();
        let footprints: Vec<f64> = (0..mesh.face_count()).map(|f| uv_per_pixel(mesh, f, &frame)).collect();
        let entries: Vec<TexelTaps> = (0..n)
            .into_par_iter()
            .filter_map(|i| {
                let f = atlas.face(i)?;
                if !is_front_facing(mesh, f, &frame.origin) {
                    return None;
                }
                let p = mesh.surface_point(f, atlas.bary(i));
                let v = frame.to_view(&p);
                if v.z < frame.near || v.z > frame.far {
                    return None;
                }
                let (sx, sy) = frame.view_to_screen(&v);
                if !(sx >= 0.0 && sy >= 0.0 && sx < iw as f64 && sy < ih as f64) {
                    return None;
                }
                if let Some(front) = raster.nearest_depth(sx, sy) {
                    if v.z > front + tol {
                        return None;
                    }
                }
                let similarity = view_similarity(&mesh.face_normal(f), &p, &frame.origin);
                let uvs = mesh.face_uvs(f);
                let b = atlas.bary(i);
                let uv = [
                    b[0] * uvs[0][0] + b[1] * uvs[1][0] + b[2] * uvs[2][0],
                    b[0] * uvs[0][1] + b[1] * uvs[1][1] + b[2] * uvs[2][1],
                ];
                let probe = TexelProbe {
                    texel: i,
                    face: f,
                    uv,
                    uv_radius: UV_MATCH_PIXELS * footprints[f],
                    sx,
                    sy,
                    z: v.z,
                    similarity,
                };
                Some(Self::taps(raster, mesh.face_charts(), &probe, tol))
            })
            .collect();
        Self {
            width: atlas.width(),
            height: atlas.height(),
            entries,
        }
    }

    fn taps(raster: &Rasterization, charts: &[u32], probe: &TexelProbe, tol: f64) -> TexelTaps {
        let TexelProbe {
            texel,
            face,
            uv,
            uv_radius,
            sx,
            sy,
            z,
            similarity,
        } = *probe;
        let (iw, ih) = (raster.width() as i64, raster.height() as i64);
        let tx = sx - 0.5;
        let ty = sy - 0.5;
        let x0 = tx.floor();
        let y0 = ty.floor();
        let fx = tx - x0;
        let fy = ty - y0;
        let cand = [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ]
        .map(|(dx, dy, wt)| {
            let x = (x0 as i64 + dx).clamp(0, iw - 1);
            let y = (y0 as i64 + dy).clamp(0, ih - 1);
            ((y * iw + x) as u32, wt)
        });
        let pick = |accept: &dyn Fn(usize) -> bool| {
            let mut out = TexelTaps {
                texel: texel as u32,
                count: 0,
                pixels: [0; 4],
                weights: [0.0; 4],
                similarity,
            };
            let mut total = 0.0;
            for &(p, wt) in &cand {
                if wt > 0.0 && accept(p as usize) {
                    // merge duplicate taps produced by clamping
                    let n = out.count as usize;
                    if let Some(k) = out.pixels[..n].iter().position(|&q| q == p) {
                        out.weights[k] += wt;
                    } else {
                        out.pixels[n] = p;
                        out.weights[n] = wt;
                        out.count += 1;
                    }
                    total += wt;
                }
            }
            if total > 0.0 {
                out.weights.iter_mut().for_each(|w| *w /= total);
                Some(out)
            } else {
                None
            }
        };
        let fid = raster.face_id();
        let depth = raster.depth();
        let chart = charts[face];
        let same_chart = |p: usize| fid[p] >= 0 && charts[fid[p] as usize] == chart;
        let pixel_uv = raster.uv();
        // Same-chart pixels whose surface point lies next to the texel's: taps
        // may cross face edges inside a chart but never reach an occluding fold.
        let continuous = |p: usize| {
            same_chart(p) && {
                let q = pixel_uv[p];
                (q[0] - uv[0]).hypot(q[1] - uv[1]) <= uv_radius
            }
        };
        pick(&continuous)
            .or_else(|| Self::nearest_accepted(raster, &continuous, texel, sx, sy, similarity))
            .or_else(|| pick(&|p| fid[p] == face as i32))
            .or_else(|| pick(&same_chart))
            .or_else(|| Self::nearest_accepted(raster, &same_chart, texel, sx, sy, similarity))
            .or_else(|| pick(&|p| fid[p] >= 0 && (depth[p] - z).abs() <= tol))
            .unwrap_or_else(|| {
                let nearest = cand
                    .iter()
                    .filter(|(p, _)| fid[*p as usize] >= 0)
                    .min_by(|a, b| {
                        let da = (depth[a.0 as usize] - z).abs();
                        let db = (depth[b.0 as usize] - z).abs();
                        da.total_cmp(&db)
                    })
                    .map(|c| c.0)
                    .unwrap_or_else(|| {
                        let x = (sx.floor() as i64).clamp(0, iw - 1);
                        let y = (sy.floor() as i64).clamp(0, ih - 1);
                        (y * iw + x) as u32
                    });
                TexelTaps {
                    texel: texel as u32,
                    count: 1,
                    pixels: [nearest, 0, 0, 0],
                    weights: [1.0, 0.0, 0.0, 0.0],
                    similarity,
                }
            })
    }

    /// Closest accepted pixel center within a small window, used when the face
    /// is too thin in screen space to cover any of the bilinear taps.
    fn nearest_accepted(
        raster: &Rasterization,
        accept: &dyn Fn(usize) -> bool,
        texel: usize,
        sx: f64,
        sy: f64,
        similarity: f64,
    ) -> Option<TexelTaps> {
        const RADIUS: i64 = 3;
        let (iw, ih) = (raster.width() as i64, raster.height() as i64);
        let (cx, cy) = (sx.floor() as i64, sy.floor() as i64);
        let mut best: Option<(f64, u32)> = None;
        for y in (cy - RADIUS).max(0)..=(cy + RADIUS).min(ih - 1) {
            for x in (cx - RADIUS).max(0)..=(cx + RADIUS).min(iw - 1) {
                let p = (y * iw + x) as usize;
                if !accept(p) {
                    continue;
                }
                let d = (x as f64 + 0.5 - sx).powi(2) + (y as f64 + 0.5 - sy).powi(2);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, p as u32));
                }
            }
        }
        best.map(|(_, p)| TexelTaps {
            texel: texel as u32,
            count: 1,
            pixels: [p, 0, 0, 0],
            weights: [1.0, 0.0, 0.0, 0.0],
            similarity,
        })
    }

    pub fn visible_count(&self) -> usize {
        self.entries.len()
    }

    /// Indices of texels visible in this view.
    pub fn visible_texels(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.texel as usize)
    }

    /// Back-projects an image into the atlas. Visible texels receive the
    /// bilinearly sampled color and their view similarity as weight; all other
    /// texels stay at zero with weight zero.
    pub fn inverse_render(&self, image: &Image) -> TextureMap {
        let c = image.channels();
        let mut tex = TextureMap::new(self.width, self.height, c);
        for e in &self.entries {
            let t = e.texel as usize;
            let dst = tex.texels.pixel_mut(t);
            for k in 0..e.count as usize {
                let src = image.pixel(e.pixels[k] as usize);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += e.weights[k] * s;
                }
            }
            tex.weight[t] = e.similarity;
        }
        tex
    }

    /// Similarity of each visible texel, zero elsewhere.
    pub fn weight_map(&self) -> TextureMap {
        let mut tex = TextureMap::new(self.width, self.height, 1);
        for e in &self.entries {
            tex.texels.data_mut()[e.texel as usize] = e.similarity;
            tex.weight[e.texel as usize] = e.similarity;
        }
        tex
    }
}

/// Rasterization plus texel projection for one (mesh, camera, atlas) triple.
#[derive(Clone, Debug)]
pub struct ViewProjection {
    raster: Rasterization,
    texels: TexelProjection,
}

/// Output of [`ViewProjection::render`]: colors plus which pixels were textured.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub color: Image,
    /// 1 where a foreground pixel found a weighted texel.
    pub valid: Vec<bool>,
}

impl ViewProjection {
    pub fn new(mesh: &Mesh, camera: &Camera, atlas: &UvAtlas) -> Result<Self> {
        let raster = Rasterization::new(mesh, camera)?;
        let texels = TexelProjection::new(mesh, &raster, atlas);
        Ok(Self { raster, texels })
    }

    pub fn raster(&self) -> &Rasterization {
        &self.raster
    }

    pub fn texels(&self) -> &TexelProjection {
        &self.texels
    }

    pub fn render(&self, texture: &TextureMap) -> Result<RenderedView> {
        if texture.resolution() != (self.texels.width, self.texels.height) {
            return Err(Error::Shape(format!(
                "texture {:?} does not match projection atlas {}x{}",
                texture.resolution(),
                self.texels.width,
                self.texels.height
            )));
        }
        let (w, h) = (self.raster.width(), self.raster.height());
        let c = texture.channels();
        let mut color = Image::new(w, h, c);
        let results: Vec<(Vec<f64>, bool)> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let mut px = vec![0.0; c];
                let ok = self.raster.face_id[i] >= 0 && sample_texture(texture, self.raster.uv[i], &mut px);
                (px, ok)
            })
            .collect();
        let mut valid = vec![false; w * h];
        for (i, (px, ok)) in results.into_iter().enumerate() {
            if ok {
                color.pixel_mut(i).copy_from_slice(&px);
                valid[i] = true;
            }
        }
        Ok(RenderedView { color, valid })
    }

    pub fn inverse_render(&self, image: &Image) -> Result<TextureMap> {
        if image.width() != self.raster.width() || image.height() != self.raster.height() {
            return Err(Error::Shape(format!(
                "image {}x{} does not match camera {}x{}",
                image.width(),
                image.height(),
                self.raster.width(),
                self.raster.height()
            )));
        }
        Ok(self.texels.inverse_render(image))
    }

    pub fn weight_map(&self) -> TextureMap {
        self.texels.weight_map()
    }

    pub fn bundle(&self, texture: &TextureMap) -> Result<ViewRenderBundle> {
        let rendered = self.render(texture)?;
        Ok(ViewRenderBundle {
            color: rendered.color,
            depth: self.raster.depth_image(),
            similarity: self.raster.similarity_image(),
            foreground_mask: self.raster.foreground_mask(),
            face_id: self.raster.face_id.clone(),
        })
    }
}

/// Renders `texture` on `mesh` from `camera`.
pub fn render(texture: &TextureMap, mesh: &Mesh, camera: &Camera) -> Result<ViewRenderBundle> {
    if texture.width() == 0 || texture.height() == 0 {
        return Err(Error::Shape("texture resolution must be positive".into()));
    }
    let atlas = UvAtlas::build(mesh, texture.width(), texture.height());
    ViewProjection::new(mesh, camera, &atlas)?.bundle(texture)
}

/// Back-projects `image` into a `resolution` texture through `camera`.
pub fn inverse_render(image: &Image, mesh: &Mesh, camera: &Camera, resolution: (usize, usize)) -> Result<TextureMap> {
    let atlas = UvAtlas::build(mesh, resolution.0, resolution.1);
    ViewProjection::new(mesh, camera, &atlas)?.inverse_render(image)
}

/// The similarity channel of `camera` back-projected into the atlas.
pub fn weight_map(mesh: &Mesh, camera: &Camera, resolution: (usize, usize)) -> Result<TextureMap> {
    let atlas = UvAtlas::build(mesh, resolution.0, resolution.1);
    Ok(ViewProjection::new(mesh, camera, &atlas)?.weight_map())
}
