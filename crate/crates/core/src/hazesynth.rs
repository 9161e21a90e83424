//! Hazy/clean pair synthesis with the atmospheric scattering model
//! `I = J·t + A·(1 − t)`, `t = exp(−β·d)`.
//!
//! Depth maps are normalised to `[0, 1]` before `β` is applied. Random
//! draws use `Xoshiro256PlusPlus` seeded through `SeedableRng::seed_from_u64`
//! (SplitMix64 expansion), so a seed fixes every sampled value.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::{Element, Tensor};

pub const AIRLIGHT_RANGE: (f64, f64) = (0.8, 1.0);
pub const BETA_RANGE: (f64, f64) = (0.4, 2.0);

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Where the depth map comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DepthSource {
    /// Linear ramp along a seeded direction.
    Ramp,
    /// Distance from a seeded centre.
    Radial,
    /// Value-noise octaves on a seeded lattice.
    Noise,
    /// A user-supplied `H×W` map, resampled (nearest) to the target size.
    Map(Tensor<f64>),
}

impl DepthSource {
    pub fn generate(&self, seed: u64, h: usize, w: usize) -> Result<Tensor<f64>> {
        if h == 0 || w == 0 {
            return Err(contract_err!("depth map must be non-empty, got {h}x{w}"));
        }
        let mut r = rng(seed ^ 0xd1b5_4a32_d192_ed03);
        let raw = match self {
            DepthSource::Ramp => {
                let theta = r.random::<f64>() * 2.0 * PI;
                let (dy, dx) = theta.sin_cos();
                grid(h, w, |yi, xi| {
                    let (y, x) = ((yi as f64 + 0.5) / h as f64, (xi as f64 + 0.5) / w as f64);
                    x * dx + y * dy
                })
            }
            DepthSource::Radial => {
                let cy = 0.25 + 0.5 * r.random::<f64>();
                let cx = 0.25 + 0.5 * r.random::<f64>();
                grid(h, w, |yi, xi| {
                    let y = (yi as f64 + 0.5) / h as f64 - cy;
                    let x = (xi as f64 + 0.5) / w as f64 - cx;
                    (x * x + y * y).sqrt()
                })
            }
            DepthSource::Noise => value_noise(&mut r, h, w, 4),
            DepthSource::Map(m) => {
                if m.ndim() != 2 {
                    return Err(dim_err!("depth map must be 2-D, got {:?}", m.shape()));
                }
                if m.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
                    return Err(contract_err!("depth map must be finite and non-negative"));
                }
                let (mh, mw) = (m.shape()[0], m.shape()[1]);
                grid(h, w, |yi, xi| {
                    let y = (yi * mh) / h;
                    let x = (xi * mw) / w;
                    m.data()[y * mw + x]
                })
            }
        };
        Ok(normalise(raw))
    }
}

/// Min-max scale to `[0, 1]`; a constant map becomes all zeros.
pub fn normalise(t: Tensor<f64>) -> Tensor<f64> {
    let lo = t.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return t.map(|_| 0.0);
    }
    t.map(|v| (v - lo) / span)
}

fn grid(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Tensor<f64> {
    Tensor::from_fn([h, w], |i| f(i / w, i % w))
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(r: &mut Xoshiro256PlusPlus, h: usize, w: usize, octaves: usize) -> Tensor<f64> {
    let mut acc = Tensor::<f64>::zeros([h, w]);
    let mut amp = 1.0;
    for o in 0..octaves {
        let cells = 2usize << o;
        let n = cells + 1;
        let lattice: Vec<f64> = (0..n * n).map(|_| r.random::<f64>()).collect();
        let layer = grid(h, w, |yi, xi| {
            let fy = (yi as f64 + 0.5) / h as f64 * cells as f64;
            let fx = (xi as f64 + 0.5) / w as f64 * cells as f64;
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (ty, tx) = (smoothstep(fy - y0 as f64), smoothstep(fx - x0 as f64));
            let g = |y: usize, x: usize| lattice[y.min(cells) * n + x.min(cells)];
            let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
            let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
            top * (1.0 - ty) + bot * ty
        });
        acc = acc.zip_map(&layer, |a, b| a + amp * b).expect("same shape");
        amp *= 0.5;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazeParams {
    /// Grey atmospheric light.
    pub a: f64,
    pub beta: f64,
    /// `H×W`, non-negative.
    pub depth: Tensor<f64>,
    pub seed: u64,
}

impl HazeParams {
    pub fn validate(&self) -> Result<()> {
        if !(AIRLIGHT_RANGE.0..=AIRLIGHT_RANGE.1).contains(&self.a) {
            return Err(contract_err!("airlight {} outside {:?}", self.a, AIRLIGHT_RANGE));
        }
        if !(BETA_RANGE.0..=BETA_RANGE.1).contains(&self.beta) {
            return Err(contract_err!("beta {} outside {:?}", self.beta, BETA_RANGE));
        }
        if self.depth.ndim() != 2 {
            return Err(dim_err!("depth must be H×W, got {:?}", self.depth.shape()));
        }
        check_depth(&self.depth)
    }
}

fn check_depth(d: &Tensor<f64>) -> Result<()> {
    if d.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(contract_err!("depth must be finite and non-negative"));
    }
    Ok(())
}

/// Uniform `(A, β)` from the first two draws of the seeded stream.
pub fn sample_scalars(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let a = AIRLIGHT_RANGE.0 + (AIRLIGHT_RANGE.1 - AIRLIGHT_RANGE.0) * r.random::<f64>();
    let beta = BETA_RANGE.0 + (BETA_RANGE.1 - BETA_RANGE.0) * r.random::<f64>();
    (a, beta)
}

pub fn sample_params(seed: u64, depth: &DepthSource, h: usize, w: usize) -> Result<HazeParams> {
    let (a, beta) = sample_scalars(seed);
    Ok(HazeParams {
        a,
        beta,
        depth: depth.generate(seed, h, w)?,
        seed,
    })
}

/// `exp(−β·d)`.
pub fn transmission(depth: &Tensor<f64>, beta: f64) -> Result<Tensor<f64>> {
    check_depth(depth)?;
    if !beta.is_finite() || beta < 0.0 {
        return Err(contract_err!("beta must be finite and non-negative, got {beta}"));
    }
    Ok(depth.map(|d| (-beta * d).exp()))
}

fn check_image<T: Element>(img: &Tensor<T>, depth: &Tensor<f64>) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = img.dims4()?;
    if depth.shape() != [h, w] {
        return Err(dim_err!("depth {:?} does not match image {}x{}", depth.shape(), h, w));
    }
    Ok((n, c, h, w))
}

/// Haze a clean NCHW image in `[0, 1]`. The depth map broadcasts over batch
/// and channels.
pub fn apply_haze<T: Element>(clean: &Tensor<T>, p: &HazeParams) -> Result<Tensor<T>> {
    p.validate()?;
    check_image(clean, &p.depth)?;
    if clean.data().iter().any(|v| !(v.as_f64() >= 0.0 && v.as_f64() <= 1.0)) {
        return Err(contract_err!("clean image must lie in [0, 1]"));
    }
    let t = transmission(&p.depth, p.beta)?;
    let plane = t.len();
    let out = clean
        .data()
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let tv = t.data()[i % plane];
            T::of((j.as_f64() * tv + p.a * (1.0 - tv)).clamp(0.0, 1.0))
        })
        .collect();
    Tensor::new(clean.shape().to_vec(), out)
}

/// Invert the scattering model with known `A` and `t`. Pixels with
/// `t < t_min` come back as NaN.
pub fn recover_clean(hazy: &Tensor<f64>, a: f64, t: &Tensor<f64>, t_min: f64) -> Result<Tensor<f64>> {
    check_image(hazy, t)?;
    let plane = t.len();
    let data = hazy
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let tv = t.data()[i % plane];
            if tv >= t_min {
                (v - a * (1.0 - tv)) / tv
            } else {
                f64::NAN
            }
        })
        .collect();
    Tensor::new(hazy.shape().to_vec(), data)
}

/// Deterministic synthetic scene: coloured gradients, a few shapes and
/// oriented stripes, values within `[0.05, 0.95]`. Shape `[1, 3, h, w]`.
pub fn procedural_scene<T: Element>(seed: u64, h: usize, w: usize) -> Result<Tensor<T>> {
    if h == 0 || w == 0 {
        return Err(contract_err!("scene must be non-empty, got {h}x{w}"));
    }
    let mut r = rng(seed ^ 0x2545_f491_4f6c_dd1d);
    let mut base = [[0.0f64; 3]; 2];
    for c in base.iter_mut().flat_map(|b| b.iter_mut()) {
        *c = r.random::<f64>();
    }
    struct Shape {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        round: bool,
        colour: [f64; 3],
    }
    let shapes: Vec<Shape> = (0..4 + r.random_range(0..4))
        .map(|_| Shape {
            cy: r.random(),
            cx: r.random(),
            ry: 0.05 + 0.25 * r.random::<f64>(),
            rx: 0.05 + 0.25 * r.random::<f64>(),
            round: r.random(),
            colour: [r.random(), r.random(), r.random()],
        })
        .collect();
    let freq = 6.0 + 18.0 * r.random::<f64>();
    let angle = r.random::<f64>() * PI;
    let (sa, ca) = angle.sin_cos();
    let stripe_amp = 0.05 + 0.1 * r.random::<f64>();
    let img = Tensor::<f64>::from_fn([1, 3, h, w], |i| {
        let c = i / (h * w);
        let y = (((i / w) % h) as f64 + 0.5) / h as f64;
        let x = ((i % w) as f64 + 0.5) / w as f64;
        let mut v = base[0][c] * (1.0 - y) + base[1][c] * y;
        for s in &shapes {
            let (dy, dx) = ((y - s.cy) / s.ry, (x - s.cx) / s.rx);
            let inside = if s.round {
                dy * dy + dx * dx <= 1.0
            } else {
                dy.abs() <= 1.0 && dx.abs() <= 1.0
            };
            if inside {
                v = s.colour[c];
            }
        }
        v += stripe_amp * (2.0 * PI * freq * (x * ca + y * sa)).sin();
        0.05 + 0.9 * v.clamp(0.0, 1.0)
    });
    Ok(img.cast())
}

/// One synthesised pair plus the parameters that produced it.
#[derive(Debug, Clone)]
pub struct SynthPair<T: Element = f32> {
    pub hazy: Tensor<T>,
    pub clean: Tensor<T>,
    pub params: HazeParams,
}

pub fn synthesize<T: Element>(clean: Tensor<T>, seed: u64, depth: &DepthSource) -> Result<SynthPair<T>> {
    let (_, _, h, w) = clean.dims4()?;
    let params = sample_params(seed, depth, h, w)?;
    let hazy = apply_haze(&clean, &params)?;
    Ok(SynthPair { hazy, clean, params })
}
