use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Image;
use crate::schedule::linear_ramp;

/// Classifier-free guidance scale, linear in the inference step index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfgSchedule {
    pub start: f64,
    pub end: f64,
}

impl Default for CfgSchedule {
    fn default() -> Self {
        Self { start: 10.0, end: 7.0 }
    }
}

impl CfgSchedule {
    pub fn scale(&self, step: usize, steps: usize) -> f64 {
        linear_ramp(self.start, self.end, step, steps)
    }
}

/// `ε_uncond + g·(ε_cond − ε_uncond)`
pub fn guide(uncond: &Image, cond: &Image, scale: f64) -> Result<Image> {
    uncond.ensure_same_shape(cond, "guidance")?;
    if scale == 1.0 {
        return Ok(cond.clone());
    }
    let mut out = uncond.clone();
    for (o, c) in out.data_mut().iter_mut().zip(cond.data()) {
        *o += scale * (c - *o);
    }
    Ok(out)
}
