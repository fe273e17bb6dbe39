use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_arg, Result};
use crate::nn::l2_norm;

/// Maps a prompt to a unit-norm `D`-vector. Implementations must be deterministic.
pub trait TextEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

/// Bag-of-tokens stand-in for a pretrained text encoder: every lowercase
/// whitespace token gets a Gaussian vector drawn from a generator seeded by the
/// token's FNV-1a hash; the prompt vector is their normalized mean.
#[derive(Debug, Clone, Copy)]
pub struct ToyTextEncoder {
    dim: usize,
}

impl ToyTextEncoder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(token.as_bytes()));
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl TextEncoder for ToyTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        ensure_arg!(self.dim > 0, "text encoder dim must be positive");
        let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
        ensure_arg!(!tokens.is_empty(), "cannot encode an empty prompt");
        let mut acc = vec![0.0; self.dim];
        for t in &tokens {
            for (a, v) in acc.iter_mut().zip(self.token_vector(t)) {
                *a += v;
            }
        }
        let norm = l2_norm(&acc);
        ensure_arg!(norm > 0.0, "prompt '{text}' encodes to the zero vector");
        acc.iter_mut().for_each(|v| *v /= norm);
        Ok(acc)
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}
