//! Per-(stage, view) random streams derived from one master seed.
//!
//! The stream seed is `SHA-256("texsync.rng.v1" ‖ seed_le64 ‖ len_le64(stage) ‖
//! stage ‖ view_le64)`, used as the 32-byte ChaCha8 key. Each view owns its
//! stream, so results do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::image::Image;

const DOMAIN: &[u8] = b"texsync.rng.v1";

pub fn derive_seed(master: u64, stage: &str, view: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update(master.to_le_bytes());
    h.update((stage.len() as u64).to_le_bytes());
    h.update(stage.as_bytes());
    h.update((view as u64).to_le_bytes());
    h.finalize().into()
}

pub fn stream(master: u64, stage: &str, view: usize) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, stage, view))
}

pub fn normal_image(rng: &mut ChaCha8Rng, width: usize, height: usize, channels: usize) -> Image {
    Image::from_fn(width, height, channels, |_, _, _| StandardNormal.sample(rng))
}
