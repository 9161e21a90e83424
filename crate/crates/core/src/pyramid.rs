//! Laplacian pyramid with a binomial 5-tap Gaussian and half-pixel bilinear
//! expansion.
//!
//! `decompose` stores, per level, the residual between the current image and
//! its blurred-decimated-reexpanded version; `reconstruct` adds the residuals
//! back coarse to fine. Because the same expansion operator is used on both
//! sides, reconstruction is exact up to float rounding whatever the filter.

use rayon::prelude::*;

use crate::error::{contract_err, dim_err, Result};
use crate::kernels;
use crate::tensor::{reflect101, round_up, Element, Tensor};

/// Burt–Adelson binomial kernel, `[1, 4, 6, 4, 1] / 16`.
pub const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid<T: Element = f32> {
    /// Residual bands, finest first: `q_1 … q_{n-1}`.
    pub high_bands: Vec<Tensor<T>>,
    /// Low-frequency residual `q_n`.
    pub low_band: Tensor<T>,
}

impl<T: Element> Pyramid<T> {
    pub fn levels(&self) -> usize {
        self.high_bands.len()
    }

    /// Shape check against the halving invariant.
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<(usize, usize, usize, usize)> = None;
        for t in self.high_bands.iter().chain(std::iter::once(&self.low_band)) {
            let d = t.dims4()?;
            if let Some((n, c, h, w)) = prev {
                if d != (n, c, h / 2, w / 2) || h % 2 != 0 || w % 2 != 0 {
                    return Err(dim_err!(
                        "pyramid band {:?} does not halve {:?}",
                        t.shape(),
                        [n, c, h, w]
                    ));
                }
            }
            prev = Some(d);
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(&Tensor<T>) -> Tensor<T>) -> Self {
        Self {
            high_bands: self.high_bands.iter().map(&f).collect(),
            low_band: f(&self.low_band),
        }
    }

    /// `a·self + b·other`, band by band.
    pub fn lincomb(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if self.levels() != other.levels() {
            return Err(dim_err!("pyramids have {} vs {} levels", self.levels(), other.levels()));
        }
        let comb = |x: &Tensor<T>, y: &Tensor<T>| x.zip_map(y, |p, q| a * p + b * q);
        Ok(Self {
            high_bands: self
                .high_bands
                .iter()
                .zip(&other.high_bands)
                .map(|(x, y)| comb(x, y))
                .collect::<Result<_>>()?,
            low_band: comb(&self.low_band, &other.low_band)?,
        })
    }
}

fn taps<T: Element>() -> [T; 5] {
    BINOMIAL5.map(T::of)
}

/// Horizontal 5-tap pass evaluated at columns `0, step, 2·step, …`.
fn blur_rows<T: Element>(plane: &[T], h: usize, w: usize, step: usize) -> Vec<T> {
    let k = taps::<T>();
    let ow = w.div_ceil(step);
    let mut out = vec![T::zero(); h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for (ox, o) in out[y * ow..(y + 1) * ow].iter_mut().enumerate() {
            let x = (ox * step) as isize;
            let mut acc = T::zero();
            for (t, &kv) in k.iter().enumerate() {
                acc += kv * row[reflect101(x + t as isize - 2, w)];
            }
            *o = acc;
        }
    }
    out
}

/// Vertical 5-tap pass evaluated at rows `0, step, 2·step, …`.
fn blur_cols<T: Element>(plane: &[T], h: usize, w: usize, step: usize) -> Vec<T> {
    let k = taps::<T>();
    let oh = h.div_ceil(step);
    let mut out = vec![T::zero(); oh * w];
    for oy in 0..oh {
        let y = (oy * step) as isize;
        let dst = &mut out[oy * w..(oy + 1) * w];
        for (t, &kv) in k.iter().enumerate() {
            let sy = reflect101(y + t as isize - 2, h);
            for (d, &s) in dst.iter_mut().zip(&plane[sy * w..(sy + 1) * w]) {
                *d += kv * s;
            }
        }
    }
    out
}

fn per_plane<T: Element>(
    img: &Tensor<T>,
    out_h: usize,
    out_w: usize,
    f: impl Fn(&[T]) -> Vec<T> + Sync + Send,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = img.dims4()?;
    let planes: Vec<Vec<T>> = img.data().par_chunks(h * w).map(f).collect();
    Ok(Tensor::from_parts(
        vec![n, c, out_h, out_w],
        planes.into_iter().flatten().collect(),
    ))
}

/// Separable binomial blur with reflect-101 borders.
pub fn gaussian_blur<T: Element>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, h, w) = img.dims4()?;
    per_plane(img, h, w, |p| blur_cols(&blur_rows(p, h, w, 1), h, w, 1))
}

/// Blur, then keep every second row and column starting at 0.
pub fn downsample2<T: Element>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, h, w) = img.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(contract_err!("downsample2 needs even extents, got {h}x{w}; pad first"));
    }
    per_plane(img, h / 2, w / 2, |p| {
        let rows = blur_rows(p, h, w, 2);
        blur_cols(&rows, h, w / 2, 2)
    })
}

pub use crate::kernels::upsample_bilinear;

/// Split `img` into `levels` residual bands plus a low band.
pub fn decompose<T: Element>(img: &Tensor<T>, levels: usize) -> Result<Pyramid<T>> {
    let (_, _, h, w) = img.dims4()?;
    if levels == 0 {
        return Err(contract_err!("pyramid needs at least one level"));
    }
    let m = 1usize
        .checked_shl(levels as u32)
        .filter(|&m| m <= h.max(w))
        .ok_or_else(|| contract_err!("{levels} levels too many for {h}x{w}"))?;
    if h % m != 0 || w % m != 0 {
        return Err(contract_err!(
            "{h}x{w} not divisible by 2^{levels}; pad to a multiple of {m} first"
        ));
    }
    let mut high_bands = Vec::with_capacity(levels);
    let mut current = img.clone();
    for _ in 0..levels {
        let (_, _, ch, cw) = current.dims4()?;
        let down = downsample2(&current)?;
        let expanded = kernels::upsample_bilinear(&down, ch, cw)?;
        high_bands.push(current.sub(&expanded)?);
        current = down;
    }
    Ok(Pyramid {
        high_bands,
        low_band: current,
    })
}

/// Coarse-to-fine `current = upsample(current) + band`.
pub fn reconstruct<T: Element>(pyr: &Pyramid<T>) -> Result<Tensor<T>> {
    pyr.validate()?;
    let mut current = pyr.low_band.clone();
    for band in pyr.high_bands.iter().rev() {
        let (_, _, h, w) = band.dims4()?;
        current = kernels::upsample_bilinear(&current, h, w)?.add(band)?;
    }
    Ok(current)
}

/// Spatial extents after padding to a multiple of `2^levels`.
pub fn padded_dims(h: usize, w: usize, levels: usize) -> (usize, usize) {
    let m = 1 << levels;
    (round_up(h, m), round_up(w, m))
}

/// Reflect-pad, decompose; returns the pyramid and the original extents.
pub fn decompose_any<T: Element>(img: &Tensor<T>, levels: usize) -> Result<(Pyramid<T>, (usize, usize))> {
    let (_, _, h, w) = img.dims4()?;
    let (ph, pw) = padded_dims(h, w, levels);
    let padded = crate::tensor::pad_reflect(img, ph, pw)?;
    Ok((decompose(&padded, levels)?, (h, w)))
}

/// Inverse of [`decompose_any`].
pub fn reconstruct_crop<T: Element>(pyr: &Pyramid<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    crate::tensor::crop(&reconstruct(pyr)?, h, w)
}
