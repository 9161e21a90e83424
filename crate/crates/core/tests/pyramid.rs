mod common;

use common::{rng, uniform};
use lpdh_core::pyramid::{decompose, decompose_any, reconstruct, reconstruct_crop};
use lpdh_core::Tensor;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn fifty_random_images_reconstruct_in_f32() {
    let mut r = rng(2024);
    for i in 0..50 {
        let h = r.random_range(32..=256);
        let w = r.random_range(32..=256);
        let levels = r.random_range(1..=5);
        let img = uniform(&[1, 3, h, w], 5000 + i).cast::<f32>();
        let (pyr, (oh, ow)) = decompose_any(&img, levels).unwrap();
        assert_eq!(pyr.levels(), levels);
        let back = reconstruct_crop(&pyr, oh, ow).unwrap();
        let err = back.max_abs_diff(&img).unwrap();
        assert!(err <= 1e-6, "image {i} ({h}x{w}, L={levels}): {err:e}");
    }
}

#[test]
fn band_count_and_shapes_follow_halving() {
    let img = uniform(&[2, 3, 48, 80], 1);
    let pyr = decompose(&img, 4).unwrap();
    let dims: Vec<(usize, usize)> = pyr.high_bands.iter().map(|b| (b.shape()[2], b.shape()[3])).collect();
    assert_eq!(dims, vec![(48, 80), (24, 40), (12, 20), (6, 10)]);
    assert_eq!(pyr.low_band.shape(), &[2, 3, 3, 5]);
}

#[test]
fn pyramid_is_linear() {
    let a = uniform(&[1, 3, 32, 32], 2);
    let b = uniform(&[1, 3, 32, 32], 3);
    let mix = Tensor::from_fn([1, 3, 32, 32], |i| 0.3 * a.data()[i] - 1.7 * b.data()[i]);
    let pa = decompose(&a, 3).unwrap();
    let pb = decompose(&b, 3).unwrap();
    let pm = decompose(&mix, 3).unwrap();
    let expect = pa.lincomb(0.3, &pb, -1.7).unwrap();
    for (x, y) in pm.high_bands.iter().zip(&expect.high_bands) {
        assert!(x.max_abs_diff(y).unwrap() < 1e-12);
    }
    assert!(pm.low_band.max_abs_diff(&expect.low_band).unwrap() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn perfect_reconstruction_any_size(h in 1usize..70, w in 1usize..70, levels in 1usize..5, seed in any::<u64>()) {
        let img = uniform(&[1, 3, h, w], seed);
        let (pyr, (oh, ow)) = decompose_any(&img, levels).unwrap();
        let back = reconstruct_crop(&pyr, oh, ow).unwrap();
        prop_assert!(back.max_abs_diff(&img).unwrap() < 1e-12);
    }

    #[test]
    fn divisible_sizes_need_no_padding(k in 1usize..5, mh in 1usize..5, mw in 1usize..5, seed in any::<u64>()) {
        let (h, w) = (mh << k, mw << k);
        let img = uniform(&[1, 2, h, w], seed);
        let pyr = decompose(&img, k).unwrap();
        prop_assert_eq!(pyr.low_band.shape(), &[1, 2, mh, mw]);
        prop_assert!(reconstruct(&pyr).unwrap().max_abs_diff(&img).unwrap() < 1e-12);
    }
}
