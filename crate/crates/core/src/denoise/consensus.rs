use ndarray::Array2;

use super::attention::related_view_attention;
use super::target::{exact_epsilon, TargetDenoiser};
use super::{DenoiseBatch, Denoiser, ViewGraph};
use crate::error::Result;
use crate::image::Image;
use crate::schedule::NoiseSchedule;

/// Side length of the square patches used as attention tokens.
pub const PATCH: usize = 8;

/// Target denoiser whose per-view targets are first mixed across related
/// views with one attention pass.
///
/// Every patch position is attended independently: view `n`'s token at a
/// position attends to the tokens of its related views at the same position.
/// Identical targets therefore pass through unchanged.
#[derive(Clone, Debug)]
pub struct ConsensusToyDenoiser {
    inner: TargetDenoiser,
}

impl ConsensusToyDenoiser {
    pub fn new(schedule: &NoiseSchedule, targets: impl IntoIterator<Item = (usize, Image)>) -> Self {
        Self {
            inner: TargetDenoiser::new(schedule, targets),
        }
    }

    pub fn prompts(&self) -> &std::collections::BTreeMap<usize, String> {
        self.inner.prompts()
    }

    /// Targets of `views` (in order) mixed over `graph`.
    pub fn mixed_targets(&self, views: &[usize], graph: &ViewGraph) -> Result<Vec<Image>> {
        let targets: Vec<&Image> = views.iter().map(|&v| self.inner.lookup(v)).collect::<Result<_>>()?;
        let Some(first) = targets.first() else {
            return Ok(Vec::new());
        };
        let (w, h, c) = first.shape();
        for t in &targets {
            first.ensure_same_shape(t, "consensus targets")?;
        }
        let mut out: Vec<Image> = targets.iter().map(|_| Image::new(w, h, c)).collect();
        for py in (0..h).step_by(PATCH) {
            for px in (0..w).step_by(PATCH) {
                let pw = PATCH.min(w - px);
                let ph = PATCH.min(h - py);
                let tokens: Vec<Array2<f64>> = targets
                    .iter()
                    .map(|t| {
                        let mut row = Vec::with_capacity(pw * ph * c);
                        for y in py..py + ph {
                            for x in px..px + pw {
                                for ch in 0..c {
                                    row.push(t.get(x, y, ch));
                                }
                            }
                        }
                        Array2::from_shape_vec((1, row.len()), row).expect("row sized from patch")
                    })
                    .collect();
                let mixed = related_view_attention(&tokens, &tokens, &tokens, graph)?;
                for (img, tok) in out.iter_mut().zip(&mixed) {
                    let mut k = 0;
                    for y in py..py + ph {
                        for x in px..px + pw {
                            for ch in 0..c {
                                img.set(x, y, ch, tok[[0, k]]);
                                k += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Denoiser for ConsensusToyDenoiser {
    fn name(&self) -> &str {
        "consensus_toy"
    }

    fn denoise(&mut self, batch: &DenoiseBatch) -> Result<Vec<Image>> {
        self.inner.record(batch);
        let views: Vec<usize> = batch.requests.iter().map(|r| r.view_id).collect();
        let mixed = self.mixed_targets(&views, &batch.graph)?;
        batch
            .requests
            .iter()
            .zip(&mixed)
            .map(|(r, target)| exact_epsilon(&r.latent.data, target, self.inner.alpha_bar(r.timestep)?))
            .collect()
    }
}
