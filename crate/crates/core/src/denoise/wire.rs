//! Line-delimited JSON messages exchanged with an out-of-process denoiser.
//!
//! Each message is one JSON object on one line, tagged by `type`. Tensors are
//! `{shape: [height, width, channels], data: base64(little-endian f32, row-major)}`.
//! A session starts with a `hello` exchange carrying the protocol version and
//! the schedule's cumulative alphas; then each `denoise` request is answered by
//! one `result` (or `error`) message.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{DenoiseBatch, DenoiseRequest};
use crate::error::{Error, Result};
use crate::image::Image;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireTensor {
    /// `[height, width, channels]`.
    pub shape: [usize; 3],
    pub data: String,
}

impl WireTensor {
    pub fn encode(image: &Image) -> Self {
        let mut bytes = Vec::with_capacity(image.data().len() * 4);
        for &v in image.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Self {
            shape: [image.height(), image.width(), image.channels()],
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Image> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Protocol(format!("tensor is not valid base64: {e}")))?;
        let [h, w, c] = self.shape;
        let expected = h
            .checked_mul(w)
            .and_then(|n| n.checked_mul(c))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Protocol(format!("tensor shape {:?} overflows", self.shape)))?;
        if bytes.len() != expected {
            return Err(Error::Protocol(format!(
                "tensor of shape {:?} needs {expected} bytes, got {}",
                self.shape,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Image::from_vec(w, h, c, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireSession {
    pub stage: String,
    pub view_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireViewRequest {
    pub view_id: usize,
    pub timestep: usize,
    pub latent: WireTensor,
    pub depth: WireTensor,
    pub prompt: String,
    pub guidance_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireViewResult {
    pub view_id: usize,
    pub epsilon: WireTensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        protocol_version: u32,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        alpha_bars: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<WireSession>,
    },
    Denoise {
        protocol_version: u32,
        step: usize,
        timestep: usize,
        seed: u64,
        batch: Vec<WireViewRequest>,
        /// Related view ids of each batch entry, in batch order.
        graph: Vec<Vec<usize>>,
    },
    Result {
        batch: Vec<WireViewResult>,
    },
    Error {
        message: String,
    },
}

impl WireMessage {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("wire messages serialize");
        s.push('\n');
        s
    }

    pub fn from_line(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Protocol(format!("malformed message: {e}")))
    }

    pub fn denoise(batch: &DenoiseBatch) -> Self {
        let view = |r: &DenoiseRequest| WireViewRequest {
            view_id: r.view_id,
            timestep: r.timestep,
            latent: WireTensor::encode(&r.latent.data),
            depth: WireTensor::encode(&r.depth),
            prompt: r.prompt.clone(),
            guidance_scale: r.guidance_scale,
        };
        WireMessage::Denoise {
            protocol_version: PROTOCOL_VERSION,
            step: batch.step,
            timestep: batch.timestep,
            seed: batch.seed,
            batch: batch.requests.iter().map(view).collect(),
            graph: batch.requests.iter().map(|r| r.related_views.clone()).collect(),
        }
    }
}

/// Orders a result batch like the request, rejecting missing, unknown, or
/// duplicated views and shape mismatches.
pub fn match_results(batch: &DenoiseBatch, results: Vec<WireViewResult>) -> Result<Vec<Image>> {
    let mut slots: Vec<Option<Image>> = vec![None; batch.requests.len()];
    for r in results {
        let Some(k) = batch.requests.iter().position(|q| q.view_id == r.view_id) else {
            return Err(Error::Protocol(format!("response has unrequested view {}", r.view_id)));
        };
        if slots[k].is_some() {
            return Err(Error::Protocol(format!("response repeats view {}", r.view_id)));
        }
        let eps = r.epsilon.decode().map_err(|e| Error::View {
            view: r.view_id,
            message: e.to_string(),
        })?;
        let req = &batch.requests[k].latent.data;
        if !req.same_shape(&eps) {
            return Err(Error::View {
                view: r.view_id,
                message: format!(
                    "epsilon shape [{}, {}, {}] does not echo latent shape [{}, {}, {}]",
                    eps.height(),
                    eps.width(),
                    eps.channels(),
                    req.height(),
                    req.width(),
                    req.channels()
                ),
            });
        }
        slots[k] = Some(eps);
    }
    slots
        .into_iter()
        .zip(&batch.requests)
        .map(|(s, q)| {
            s.ok_or_else(|| Error::View {
                view: q.view_id,
                message: "missing from denoiser response".into(),
            })
        })
        .collect()
}
