//! Counter-based Gaussian noise.
//!
//! Every draw is a pure function of `(seed, frame index, timestep, tag)`, so
//! results never depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a block of noise is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum NoiseTag {
    /// Starting latent `Z_T`.
    Initial = 1,
    /// `eps_t` of the vanilla reverse step.
    Step = 2,
    /// `eps` of the momentum anchor term.
    Anchor = 3,
    /// Forward-process draws.
    Forward = 4,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hashes a sequence of words into one well-mixed seed.
pub fn derive_seed(base: u64, words: &[u64]) -> u64 {
    words.iter().fold(splitmix(base), |acc, w| splitmix(acc ^ splitmix(*w)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent source, e.g. one per window and sampler pass.
    pub fn substream(&self, words: &[u64]) -> Self {
        Self::new(derive_seed(self.seed, words))
    }

    /// `len` standard normal values for one frame.
    pub fn normal(&self, frame: usize, t: usize, tag: NoiseTag, len: usize) -> Vec<f64> {
        let key = derive_seed(self.seed, &[frame as u64, t as u64, tag as u64]);
        let mut rng = ChaCha12Rng::seed_from_u64(key);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Noise for every frame in `frames`, concatenated frame-major.
    pub fn normal_frames(&self, frames: &[usize], t: usize, tag: NoiseTag, frame_len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(frames.len() * frame_len);
        for &f in frames {
            out.extend(self.normal(f, t, tag, frame_len));
        }
        out
    }
}
