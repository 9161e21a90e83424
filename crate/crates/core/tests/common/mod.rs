#![allow(dead_code)]

use lpdh_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// 64-bit LCG (Knuth MMIX constants) mapped to [0, 1) with 53 bits; mirrors
/// the generator used to produce the recorded reference values.
pub fn lcg_tensor(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut s = seed;
    Tensor::from_fn(shape.to_vec(), |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| r.random::<f64>())
}

pub fn normal(shape: &[usize], seed: u64, sigma: f64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| {
        // Box–Muller
        let u1: f64 = r.random::<f64>().max(1e-300);
        let u2: f64 = r.random();
        sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}
