use std::path::Path;

use super::mesh::{Mesh, Uv};
use super::tri::scan_triangle;
use crate::error::{Error, Result};
use crate::image::Image;

/// Which face (and where on it) each texel center of the atlas belongs to.
#[derive(Clone, Debug)]
pub struct UvAtlas {
    width: usize,
    height: usize,
    texel_face: Vec<i32>,
    texel_bary: Vec<[f64; 3]>,
    overlaps: usize,
}

impl UvAtlas {
    /// Scan-converts every face's UV triangle. Texels claimed by more than one
    /// face are counted as overlaps; the last face wins.
    pub fn build(mesh: &Mesh, width: usize, height: usize) -> Self {
        let n = width * height;
        let mut texel_face = vec![-1i32; n];
        let mut texel_bary = vec![[0.0; 3]; n];
        let mut overlaps = 0;
        for f in 0..mesh.face_count() {
            let pts = mesh.face_uvs(f).map(|uv| uv_to_texel(uv, width, height));
            scan_triangle(pts, width, height, |x, y, bary| {
                let i = y * width + x;
                if texel_face[i] >= 0 && texel_face[i] != f as i32 {
                    overlaps += 1;
                }
                texel_face[i] = f as i32;
                texel_bary[i] = bary;
            });
        }
        if overlaps > 0 {
            log::warn!("uv atlas has {overlaps} overlapping texels; last face wins");
        }
        Self {
            width,
            height,
            texel_face,
            texel_bary,
            overlaps,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn overlap_count(&self) -> usize {
        self.overlaps
    }

    /// Face owning texel `i`, if any.
    pub fn face(&self, i: usize) -> Option<usize> {
        let f = self.texel_face[i];
        (f >= 0).then_some(f as usize)
    }

    pub fn bary(&self, i: usize) -> [f64; 3] {
        self.texel_bary[i]
    }

    pub fn covered_count(&self) -> usize {
        self.texel_face.iter().filter(|&&f| f >= 0).count()
    }

    /// Coverage mask (1 where a face maps to the texel).
    pub fn coverage(&self) -> Vec<f64> {
        self.texel_face
            .iter()
            .map(|&f| if f >= 0 { 1.0 } else { 0.0 })
            .collect()
    }

    /// Texels owned by faces of `instance`.
    pub fn instance_texels(&self, mesh: &Mesh, instance: u32) -> Vec<usize> {
        (0..self.texel_face.len())
            .filter(|&i| self.face(i).is_some_and(|f| mesh.face_instance(f) == instance))
            .collect()
    }
}

/// Continuous texel coordinates of a UV point; `v = 0` is the bottom row.
#[inline]
pub fn uv_to_texel(uv: Uv, width: usize, height: usize) -> (f64, f64) {
    (uv[0] * width as f64, (1.0 - uv[1]) * height as f64)
}

/// UV-space texel grid plus a per-texel coverage/confidence weight in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureMap {
    pub texels: Image,
    pub weight: Vec<f64>,
}

impl TextureMap {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            texels: Image::new(width, height, channels),
            weight: vec![0.0; width * height],
        }
    }

    pub fn from_parts(texels: Image, weight: Vec<f64>) -> Result<Self> {
        if weight.len() != texels.pixel_count() {
            return Err(Error::Shape(format!(
                "{} weights for {}x{} texels",
                weight.len(),
                texels.width(),
                texels.height()
            )));
        }
        Ok(Self { texels, weight })
    }

    /// Texture whose weight is the atlas coverage; uncovered texels are zeroed.
    pub fn with_coverage(mut texels: Image, atlas: &UvAtlas) -> Result<Self> {
        if texels.width() != atlas.width() || texels.height() != atlas.height() {
            return Err(Error::Shape(format!(
                "texture {}x{} does not match atlas {}x{}",
                texels.width(),
                texels.height(),
                atlas.width(),
                atlas.height()
            )));
        }
        let weight = atlas.coverage();
        for (i, &w) in weight.iter().enumerate() {
            if w == 0.0 {
                texels.pixel_mut(i).fill(0.0);
            }
        }
        Ok(Self { texels, weight })
    }

    pub fn width(&self) -> usize {
        self.texels.width()
    }

    pub fn height(&self) -> usize {
        self.texels.height()
    }

    pub fn channels(&self) -> usize {
        self.texels.channels()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    pub fn weight_image(&self) -> Image {
        Image::from_vec(self.width(), self.height(), 1, self.weight.clone()).expect("weight sized from texels")
    }

    pub fn covered_count(&self) -> usize {
        self.weight.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn is_finite(&self) -> bool {
        self.texels.is_finite() && self.weight.iter().all(|w| w.is_finite())
    }

    /// RMS difference of texel values over the given texel indices.
    pub fn rms_over(&self, other: &TextureMap, texels: &[usize]) -> f64 {
        if texels.is_empty() {
            return 0.0;
        }
        let c = self.channels();
        let mut sum = 0.0;
        for &i in texels {
            for (a, b) in self.texels.pixel(i).iter().zip(other.texels.pixel(i)) {
                sum += (a - b) * (a - b);
            }
        }
        (sum / (texels.len() * c) as f64).sqrt()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.texels.save_png(path)
    }
}
