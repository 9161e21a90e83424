//! Deterministic inputs shared by the benchmarks.

use lpdh_core::hazesynth::procedural_scene;
use lpdh_core::network::{DehazeModel, ModelConfig};
use lpdh_core::Tensor;

/// `[1, 3, h, w]` synthetic scene.
pub fn scene(h: usize, w: usize) -> Tensor<f32> {
    procedural_scene(7, h, w).expect("non-empty scene")
}

/// Values in `[-1, 1)` from a fixed integer hash.
pub fn hashed(shape: &[usize], salt: u64) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |i| {
        let mut z = (i as u64).wrapping_add(salt).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z ^= z >> 31;
        z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z ^= z >> 29;
        (z >> 40) as f32 / (1u64 << 23) as f32 - 1.0
    })
}

/// Default model, Tucker switched as requested.
pub fn model(tucker: bool) -> DehazeModel<f32> {
    DehazeModel::new(ModelConfig {
        tucker_enabled: tucker,
        ..Default::default()
    })
    .expect("default config is valid")
}
