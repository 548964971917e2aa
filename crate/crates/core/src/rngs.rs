//! Seed discipline: every random draw comes from a ChaCha8 stream keyed by
//! (seed, purpose[, step]), so any stage can be replayed without serializing
//! generator state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type DetRng = ChaCha8Rng;

/// Purpose tags keep independent consumers on independent streams.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    NetworkInit = 1,
    FourierEmbedding = 2,
    RigGeneration = 3,
    DepthDistortion = 4,
    BatchSampling = 5,
    RaySampling = 6,
    FeatureBank = 7,
    PosePerturbation = 8,
    MeshSampling = 9,
}

pub fn seeded(seed: u64, stream: Stream) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Stream additionally keyed by a step index (fresh generator per step).
pub fn seeded_step(seed: u64, stream: Stream, step: u64) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (step.wrapping_mul(0x9E3779B97F4A7C15)));
    rng.set_stream(stream as u64);
    rng
}

/// Standard normal draw (Box-Muller; one value per call, deterministic).
pub fn normal(rng: &mut DetRng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
