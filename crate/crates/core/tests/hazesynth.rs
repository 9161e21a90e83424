mod common;

use common::uniform;
use lpdh_core::hazesynth::{
    apply_haze, procedural_scene, recover_clean, sample_params, sample_scalars, synthesize, transmission, DepthSource,
    HazeParams, AIRLIGHT_RANGE, BETA_RANGE,
};
use lpdh_core::Tensor;
use proptest::prelude::*;

const DRAWS: u64 = 10_000;

/// Kolmogorov–Smirnov distance between samples and `U(lo, hi)`.
fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[test]
fn sampled_scalars_respect_ranges_and_are_uniform() {
    let (a, b): (Vec<f64>, Vec<f64>) = (0..DRAWS).map(sample_scalars).unzip();
    let range = |v: &[f64]| {
        (
            v.iter().cloned().fold(f64::INFINITY, f64::min),
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (amin, amax) = range(&a);
    let (bmin, bmax) = range(&b);
    assert!(amin >= AIRLIGHT_RANGE.0 && amax <= AIRLIGHT_RANGE.1, "{amin} {amax}");
    assert!(bmin >= BETA_RANGE.0 && bmax <= BETA_RANGE.1, "{bmin} {bmax}");
    let ka = ks_uniform(a, AIRLIGHT_RANGE.0, AIRLIGHT_RANGE.1);
    let kb = ks_uniform(b, BETA_RANGE.0, BETA_RANGE.1);
    assert!(ka <= 0.02, "KS(A) = {ka}");
    assert!(kb <= 0.02, "KS(beta) = {kb}");
}

#[test]
fn ks_oracle_flags_a_skewed_stream() {
    let skewed: Vec<f64> = (0..DRAWS).map(|s| sample_scalars(s).0.powi(4)).collect();
    assert!(ks_uniform(skewed, 0.8, 1.0) > 0.1);
}

#[test]
fn same_seed_same_params() {
    for src in [DepthSource::Ramp, DepthSource::Radial, DepthSource::Noise] {
        assert_eq!(
            sample_params(42, &src, 12, 9).unwrap(),
            sample_params(42, &src, 12, 9).unwrap()
        );
    }
}

#[test]
fn synthesis_inverts_where_transmission_is_large() {
    for seed in 0..20u64 {
        let src = [DepthSource::Ramp, DepthSource::Radial, DepthSource::Noise][seed as usize % 3].clone();
        let clean = procedural_scene::<f64>(seed, 24, 31).unwrap();
        let pair = synthesize(clean.clone(), seed, &src).unwrap();
        let t = transmission(&pair.params.depth, pair.params.beta).unwrap();
        let back = recover_clean(&pair.hazy, pair.params.a, &t, 0.05).unwrap();
        for (i, (&r, &c)) in back.data().iter().zip(clean.data()).enumerate() {
            if !r.is_nan() {
                assert!((r - c).abs() <= 1e-6, "seed {seed} px {i}: {r} vs {c}");
            }
        }
    }
}

#[test]
fn inversion_skips_thin_transmission() {
    let depth = Tensor::from_fn([4, 4], |i| i as f64 * 0.5);
    let p = HazeParams {
        a: 0.9,
        beta: 2.0,
        depth,
        seed: 0,
    };
    let clean = uniform(&[1, 3, 4, 4], 1);
    let hazy = apply_haze(&clean, &p).unwrap();
    let t = transmission(&p.depth, p.beta).unwrap();
    let back = recover_clean(&hazy, p.a, &t, 0.05).unwrap();
    let mut checked = 0;
    for (i, (&r, &c)) in back.data().iter().zip(clean.data()).enumerate() {
        let tv = t.data()[i % 16];
        if tv >= 0.05 {
            assert!((r - c).abs() <= 1e-6);
            checked += 1;
        } else {
            assert!(r.is_nan());
        }
    }
    assert!(checked > 0 && checked < 48);
}

proptest! {
    #[test]
    fn more_scattering_moves_towards_airlight(seed in any::<u64>(), b1 in 0.4f64..2.0, db in 0.0f64..1.0) {
        let b2 = (b1 + db).min(2.0);
        let clean = uniform(&[1, 3, 8, 8], seed);
        let depth = DepthSource::Noise.generate(seed, 8, 8).unwrap();
        let (a, _) = sample_scalars(seed);
        let p1 = HazeParams { a, beta: b1, depth: depth.clone(), seed };
        let p2 = HazeParams { a, beta: b2, depth, seed };
        let i1 = apply_haze(&clean, &p1).unwrap();
        let i2 = apply_haze(&clean, &p2).unwrap();
        for (x, y) in i1.data().iter().zip(i2.data()) {
            prop_assert!((y - a).abs() <= (x - a).abs() + 1e-15);
        }
    }

    #[test]
    fn hazing_is_a_convex_combination(seed in any::<u64>()) {
        let clean = uniform(&[1, 3, 6, 5], seed);
        let p = sample_params(seed, &DepthSource::Radial, 6, 5).unwrap();
        let t = transmission(&p.depth, p.beta).unwrap();
        let hazy = apply_haze(&clean, &p).unwrap();
        for (i, (&h, &c)) in hazy.data().iter().zip(clean.data()).enumerate() {
            let tv = t.data()[i % 30];
            let raw = c * tv + p.a * (1.0 - tv);
            prop_assert!((0.0..=1.0).contains(&raw));
            prop_assert_eq!(h, raw);
        }
    }
}
