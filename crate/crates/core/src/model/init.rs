use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::{Checkpoint, Tensor};
use super::config::ModelConfig;
use crate::error::Result;

/// Deterministic initialisation: embeddings `N(0, 1)`, norm gains `1`,
/// projection matrices `N(0, 1/fan_in)`. Tensors are drawn in layout order
/// from a single ChaCha8 stream, so `(config, seed)` fixes every bit.
pub fn init_model(config: ModelConfig, seed: u64) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = alloc::collections::BTreeMap::new();
    for (name, shape) in Checkpoint::layout(&config) {
        let tensor = if name.ends_with("norm") {
            Tensor::filled(shape, 1.0)
        } else {
            let scale = if name.ends_with("embed") && name != "unembed" {
                1.0
            } else {
                1.0 / libm::sqrtf(shape[shape.len() - 1] as f32)
            };
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    let z: f32 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect();
            Tensor { shape, data }
        };
        tensors.insert(name, tensor);
    }
    Ok(Checkpoint { config, tensors, seed: Some(seed) })
}
