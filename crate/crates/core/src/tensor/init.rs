use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// He/Kaiming normal initialisation: N(0, 2/fan_in), where fan_in is the
/// product of all axes but the first.
pub fn kaiming_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let std = (2.0 / fan_in.max(1) as f32).sqrt();
    let normal = Normal::new(0.0f32, std).expect("finite standard deviation");
    Tensor::from_fn(shape, |_| normal.sample(rng)).with_grad()
}
