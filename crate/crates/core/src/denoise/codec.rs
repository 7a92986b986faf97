//! Encode/decode between image space and the sampler's latent space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecSpec {
    /// Image pixels per latent cell along each axis.
    pub spatial_scale: usize,
    pub channels: usize,
}

pub trait Codec: Send + Sync {
    fn name(&self) -> &str;
    fn spec(&self) -> CodecSpec;
    fn encode(&self, image: &Image) -> Result<Image>;
    fn decode(&self, latent: &Image) -> Result<Image>;

    /// Latent spatial size for an image of `width x height`.
    fn latent_size(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        let s = self.spec().spatial_scale;
        if !width.is_multiple_of(s) || !height.is_multiple_of(s) {
            return Err(Error::Shape(format!(
                "{width}x{height} is not divisible by codec scale {s}"
            )));
        }
        Ok((width / s, height / s))
    }
}

/// Pass-through codec; latents are images.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn name(&self) -> &str {
        "identity"
    }

    fn spec(&self) -> CodecSpec {
        CodecSpec {
            spatial_scale: 1,
            channels: 3,
        }
    }

    fn encode(&self, image: &Image) -> Result<Image> {
        Ok(image.clone())
    }

    fn decode(&self, latent: &Image) -> Result<Image> {
        Ok(latent.clone())
    }
}

/// Box-filter downsampling on encode, bilinear upsampling on decode.
#[derive(Clone, Copy, Debug)]
pub struct DownscaleCodec {
    scale: usize,
}

impl DownscaleCodec {
    pub fn new(scale: usize) -> Result<Self> {
        if scale < 1 {
            return Err(Error::Config("codec scale must be >= 1".into()));
        }
        Ok(Self { scale })
    }
}

impl Codec for DownscaleCodec {
    fn name(&self) -> &str {
        "downscale"
    }

    fn spec(&self) -> CodecSpec {
        CodecSpec {
            spatial_scale: self.scale,
            channels: 3,
        }
    }

    fn encode(&self, image: &Image) -> Result<Image> {
        let (lw, lh) = self.latent_size(image.width(), image.height())?;
        let s = self.scale;
        let norm = 1.0 / (s * s) as f64;
        Ok(Image::from_fn(lw, lh, image.channels(), |x, y, c| {
            let mut acc = 0.0;
            for dy in 0..s {
                for dx in 0..s {
                    acc += image.get(x * s + dx, y * s + dy, c);
                }
            }
            acc * norm
        }))
    }

    fn decode(&self, latent: &Image) -> Result<Image> {
        let s = self.scale as f64;
        let (lw, lh) = (latent.width(), latent.height());
        Ok(Image::from_fn(
            lw * self.scale,
            lh * self.scale,
            latent.channels(),
            |x, y, c| {
                let fx = ((x as f64 + 0.5) / s - 0.5).clamp(0.0, (lw - 1) as f64);
                let fy = ((y as f64 + 0.5) / s - 0.5).clamp(0.0, (lh - 1) as f64);
                let x0 = fx.floor() as usize;
                let y0 = fy.floor() as usize;
                let x1 = (x0 + 1).min(lw - 1);
                let y1 = (y0 + 1).min(lh - 1);
                let ax = fx - x0 as f64;
                let ay = fy - y0 as f64;
                let top = latent.get(x0, y0, c) * (1.0 - ax) + latent.get(x1, y0, c) * ax;
                let bottom = latent.get(x0, y1, c) * (1.0 - ax) + latent.get(x1, y1, c) * ax;
                top * (1.0 - ay) + bottom * ay
            },
        ))
    }
}

/// Box-filter a single-channel map (depth, masks) down to latent resolution.
pub fn downsample_to(image: &Image, scale: usize) -> Result<Image> {
    if scale == 1 {
        return Ok(image.clone());
    }
    DownscaleCodec::new(scale)?.encode(image)
}
