use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Mini-batch index lists for one epoch. With a seed the order is a
/// permutation derived from `(seed, epoch)`; without one it is sequential.
/// The last short batch is kept.
pub fn batch_iter(n: usize, batch_size: usize, seed: Option<u64>, epoch: usize) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = seed {
        let mix = seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentFlags {
    #[serde(default)]
    pub hflip: bool,
    #[serde(default)]
    pub pad4_crop: bool,
}

/// Mirrors one `C × H × W` image left to right in place.
pub fn hflip_image(img: &mut [f32], h: usize, w: usize) {
    debug_assert_eq!(img.len() % (h * w), 0);
    for row in img.chunks_mut(w) {
        row.reverse();
    }
}

/// Zero-pads by four pixels and crops back to `H × W` at offset `(dy, dx)`
/// in `0..=8`.
fn shift_crop(img: &mut [f32], c: usize, h: usize, w: usize, dy: usize, dx: usize) {
    let src = img.to_vec();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sy = (y + dy) as isize - 4;
                let sx = (x + dx) as isize - 4;
                img[(ch * h + y) * w + x] = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                    src[(ch * h + sy as usize) * w + sx as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

/// Applies the enabled augmentations to an `N × C × H × W` batch.
pub fn augment(batch: &mut Tensor<f32>, flags: AugmentFlags, rng: &mut impl Rng) {
    if !(flags.hflip || flags.pad4_crop) || batch.shape().len() != 4 {
        return;
    }
    let (c, h, w) = (batch.shape()[1], batch.shape()[2], batch.shape()[3]);
    for img in batch.data_mut().chunks_mut(c * h * w) {
        if flags.hflip && rng.random::<bool>() {
            hflip_image(img, h, w);
        }
        if flags.pad4_crop {
            let dy = rng.random_range(0..=8);
            let dx = rng.random_range(0..=8);
            shift_crop(img, c, h, w, dy, dx);
        }
    }
}
