//! The denoiser contract, the built-in analytic denoisers, guidance, codecs,
//! and related-view attention.

pub mod attention;
pub mod codec;
mod consensus;
mod graph;
pub mod guidance;
pub mod remote;
mod target;
pub mod wire;

pub use attention::{related_view_attention, scaled_dot_product};
pub use codec::{Codec, CodecSpec, DownscaleCodec, IdentityCodec};
pub use consensus::ConsensusToyDenoiser;
pub use graph::{GraphPolicy, ViewGraph};
pub use guidance::{guide, CfgSchedule};
pub use target::{exact_epsilon, TargetDenoiser};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Mesh, UvAtlas};
use crate::image::Image;
use crate::schedule::{LatentImage, NoiseSchedule};

/// One view's input to the noise predictor.
#[derive(Clone, Debug)]
pub struct DenoiseRequest {
    pub view_id: usize,
    pub latent: LatentImage,
    pub timestep: usize,
    pub prompt: String,
    /// Normalized depth at latent resolution, background = 1.
    pub depth: Image,
    pub guidance_scale: f64,
    /// Views whose features this view may attend to.
    pub related_views: Vec<usize>,
}

impl DenoiseRequest {
    pub fn validate(&self) -> Result<()> {
        let (w, h, _) = self.latent.data.shape();
        if self.depth.width() != w || self.depth.height() != h {
            return Err(Error::Shape(format!(
                "view {}: depth {}x{} does not match latent {w}x{h}",
                self.view_id,
                self.depth.width(),
                self.depth.height()
            )));
        }
        if !(self.guidance_scale >= 1.0) {
            return Err(Error::Config(format!(
                "view {}: guidance scale {} < 1",
                self.view_id, self.guidance_scale
            )));
        }
        Ok(())
    }
}

/// All views of one timestep, denoised together so implementations can
/// exchange information across views.
#[derive(Clone, Debug)]
pub struct DenoiseBatch {
    pub step: usize,
    pub timestep: usize,
    pub requests: Vec<DenoiseRequest>,
    pub graph: ViewGraph,
    pub seed: u64,
}

impl DenoiseBatch {
    pub fn validate(&self) -> Result<()> {
        if self.graph.num_views() != self.requests.len() {
            return Err(Error::Shape(format!(
                "graph has {} views but batch has {} requests",
                self.graph.num_views(),
                self.requests.len()
            )));
        }
        self.requests.iter().try_for_each(DenoiseRequest::validate)
    }
}

/// Noise predictor for a batch of views.
///
/// Implementations must be deterministic given the batch (including its seed).
/// The sampler never issues overlapping calls on one instance.
pub trait Denoiser: Send {
    fn name(&self) -> &str;

    /// Returns one `ε` prediction per request, in request order, each with the
    /// request latent's shape.
    fn denoise(&mut self, batch: &DenoiseBatch) -> Result<Vec<Image>>;
}

/// Rejects a response that does not match the batch shape.
pub fn check_response(batch: &DenoiseBatch, eps: &[Image]) -> Result<()> {
    if eps.len() != batch.requests.len() {
        return Err(Error::Denoise(format!(
            "{} predictions for {} views",
            eps.len(),
            batch.requests.len()
        )));
    }
    for (req, e) in batch.requests.iter().zip(eps) {
        if !req.latent.data.same_shape(e) {
            return Err(Error::View {
                view: req.view_id,
                message: format!(
                    "prediction shape {:?} != latent shape {:?}",
                    e.shape(),
                    req.latent.data.shape()
                ),
            });
        }
        if !e.is_finite() {
            return Err(Error::View {
                view: req.view_id,
                message: "prediction contains non-finite values".into(),
            });
        }
    }
    Ok(())
}

/// Everything a backend may need to set up a denoiser for one sampling stage.
pub struct SessionInfo<'a> {
    /// Stage label, e.g. `mvis` or `mvrs/instance-3`.
    pub stage: &'a str,
    /// Geometry the stage's cameras see.
    pub mesh: &'a Mesh,
    pub atlas: &'a UvAtlas,
    pub cameras: &'a [Camera],
    pub view_ids: &'a [usize],
    pub codec: &'a dyn Codec,
    pub schedule: &'a NoiseSchedule,
}

/// A named way of producing denoisers, selected by configuration.
pub trait DenoiserBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Pre-flight check run before any sampling starts (e.g. connectivity).
    fn check(&self) -> Result<()> {
        Ok(())
    }

    fn open(&self, session: &SessionInfo<'_>) -> Result<Box<dyn Denoiser>>;
}
