//! Raw compute kernels shared by the autodiff tape and the pyramid code:
//! convolution (im2col + gemm), half-pixel bilinear resampling and their
//! adjoints.
//!
//! Every kernel accumulates in a fixed order, so results are bitwise
//! reproducible regardless of how many worker threads rayon uses.

use rayon::prelude::*;

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::{Element, Tensor};

/// Output pixels per im2col tile.
const TILE_PIXELS: usize = 4096;

/// `c = a · b` for row-major `a: m×k`, `b: k×n`.
fn gemm<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        crow.fill(T::zero());
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new<T: Element>(x: &Tensor<T>, kernel: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let (n, cin, h, w) = x.dims4()?;
        let (cout, kcin, kh, kw) = kernel
            .dims4()
            .map_err(|_| dim_err!("conv2d kernel must be OIHW, got {:?}", kernel.shape()))?;
        if stride == 0 {
            return Err(contract_err!("conv2d stride must be >= 1"));
        }
        if kcin != cin {
            return Err(dim_err!("conv2d: input has {cin} channels, kernel expects {kcin}"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(dim_err!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// Fill `col` (`k × rows*wo`) for output rows `[row0, row0+rows)` of image `img`.
    fn im2col<T: Element>(&self, img: &[T], row0: usize, rows: usize, col: &mut [T]) {
        let p = rows * self.wo;
        for ci in 0..self.cin {
            let plane = &img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let krow = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut col[krow * p..(krow + 1) * p];
                    for r in 0..rows {
                        let iy = ((row0 + r) * self.stride + ky) as isize - self.pad as isize;
                        let out = &mut dst[r * self.wo..(r + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *o = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col) over the full output, accumulating into `img`.
    fn col2im<T: Element>(&self, col: &[T], img: &mut [T]) {
        let p = self.ho * self.wo;
        for ci in 0..self.cin {
            let plane = &mut img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let krow = (ci * self.kh + ky) * self.kw + kx;
                    let src = &col[krow * p..(krow + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let row = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                row[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of an NCHW input with an OIHW kernel, plus optional per-channel bias.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, kernel, stride, pad)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(dim_err!(
                "conv2d bias has {} entries, kernel has {} outputs",
                b.len(),
                g.cout
            ));
        }
    }
    let k = g.k();
    let rows_per_tile = (TILE_PIXELS / g.wo).max(1);
    let tiles: Vec<(usize, usize)> = (0..g.n)
        .flat_map(|b| (0..g.ho).step_by(rows_per_tile).map(move |r| (b, r)))
        .collect();
    let wdata = kernel.data();
    let in_plane = g.cin * g.h * g.w;
    let results: Vec<(usize, usize, usize, Vec<T>)> = tiles
        .par_iter()
        .map(|&(b, row0)| {
            let rows = rows_per_tile.min(g.ho - row0);
            let p = rows * g.wo;
            let mut col = vec![T::zero(); k * p];
            g.im2col(&x.data()[b * in_plane..(b + 1) * in_plane], row0, rows, &mut col);
            let mut out = vec![T::zero(); g.cout * p];
            gemm(wdata, &col, &mut out, g.cout, k, p);
            if let Some(bias) = bias {
                for (co, chunk) in out.chunks_mut(p).enumerate() {
                    let bv = bias.data()[co];
                    chunk.iter_mut().for_each(|v| *v += bv);
                }
            }
            (b, row0, rows, out)
        })
        .collect();
    let plane = g.ho * g.wo;
    let mut data = vec![T::zero(); g.n * g.cout * plane];
    for (b, row0, rows, out) in results {
        let p = rows * g.wo;
        for co in 0..g.cout {
            let dst = (b * g.cout + co) * plane + row0 * g.wo;
            data[dst..dst + p].copy_from_slice(&out[co * p..(co + 1) * p]);
        }
    }
    Ok(Tensor::from_parts(vec![g.n, g.cout, g.ho, g.wo], data))
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(x, kernel, stride, pad)?;
    if grad_out.shape() != [g.n, g.cout, g.ho, g.wo] {
        return Err(dim_err!(
            "conv2d backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.n, g.cout, g.ho, g.wo]
        ));
    }
    let k = g.k();
    let p = g.ho * g.wo;
    let in_plane = g.cin * g.h * g.w;
    // transposed kernel, k × cout
    let mut wt = vec![T::zero(); k * g.cout];
    for co in 0..g.cout {
        for kk in 0..k {
            wt[kk * g.cout + co] = kernel.data()[co * k + kk];
        }
    }
    let mut dk = vec![T::zero(); g.cout * k];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = vec![T::zero(); x.len()];
    let mut col = vec![T::zero(); k * p];
    let mut dcol = vec![T::zero(); k * p];
    for b in 0..g.n {
        let gout = &grad_out.data()[b * g.cout * p..(b + 1) * g.cout * p];
        g.im2col(&x.data()[b * in_plane..(b + 1) * in_plane], 0, g.ho, &mut col);
        dk.par_chunks_mut(k).enumerate().for_each(|(co, drow)| {
            let grow = &gout[co * p..(co + 1) * p];
            for (kk, d) in drow.iter_mut().enumerate() {
                let crow = &col[kk * p..(kk + 1) * p];
                let mut acc = T::zero();
                for (&a, &c) in grow.iter().zip(crow) {
                    acc += a * c;
                }
                *d += acc;
            }
        });
        for (co, d) in db.iter_mut().enumerate() {
            *d += gout[co * p..(co + 1) * p].iter().copied().sum::<T>();
        }
        gemm(&wt, gout, &mut dcol, k, g.cout, p);
        g.col2im(&dcol, &mut dx[b * in_plane..(b + 1) * in_plane]);
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(x.shape().to_vec(), dx),
        kernel: Tensor::from_parts(kernel.shape().to_vec(), dk),
        bias: Tensor::from_parts(vec![g.cout], db),
    })
}

/// Per-axis taps of half-pixel (align_corners = false) linear interpolation:
/// `(i0, i1, weight_of_i1)` for each output coordinate.
pub(crate) fn linear_taps(inp: usize, out: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn check_upsample<T: Element>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(contract_err!("upsample to zero-sized output {out_h}x{out_w}"));
    }
    if out_h < h || out_w < w {
        return Err(contract_err!(
            "upsample target {out_h}x{out_w} smaller than input {h}x{w}"
        ));
    }
    Ok((n, c, h, w))
}

/// Half-pixel bilinear resampling of every plane of an NCHW tensor.
pub fn upsample_bilinear<T: Element>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_upsample(x, out_h, out_w)?;
    let ty = linear_taps(h, out_h);
    let tx: Vec<(usize, usize, T)> = linear_taps(w, out_w)
        .into_iter()
        .map(|(a, b, l)| (a, b, T::of(l)))
        .collect();
    let mut data = vec![T::zero(); n * c * out_h * out_w];
    data.par_chunks_mut(out_h * out_w)
        .zip(x.data().par_chunks(h * w))
        .for_each(|(dst, src)| {
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let ly = T::of(ly);
                let r0 = &src[y0 * w..(y0 + 1) * w];
                let r1 = &src[y1 * w..(y1 + 1) * w];
                let row = &mut dst[oy * out_w..(oy + 1) * out_w];
                for (o, &(x0, x1, lx)) in row.iter_mut().zip(&tx) {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * lx;
                    *o = top + (bot - top) * ly;
                }
            }
        });
    Ok(Tensor::from_parts(vec![n, c, out_h, out_w], data))
}

/// Adjoint of [`upsample_bilinear`]: scatters `grad` back onto an `(h, w)` grid.
pub fn upsample_bilinear_backward<T: Element>(grad: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, c, out_h, out_w) = grad.dims4()?;
    if out_h < h || out_w < w {
        return Err(dim_err!("upsample backward: grad {out_h}x{out_w} < input {h}x{w}"));
    }
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    let mut data = vec![T::zero(); n * c * h * w];
    data.par_chunks_mut(h * w)
        .zip(grad.data().par_chunks(out_h * out_w))
        .for_each(|(dst, g)| {
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let ly = T::of(ly);
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let lx = T::of(lx);
                    let gv = g[oy * out_w + ox];
                    let one = T::one();
                    dst[y0 * w + x0] += gv * (one - ly) * (one - lx);
                    dst[y0 * w + x1] += gv * (one - ly) * lx;
                    dst[y1 * w + x0] += gv * ly * (one - lx);
                    dst[y1 * w + x1] += gv * ly * lx;
                }
            }
        });
    Ok(Tensor::from_parts(vec![n, c, h, w], data))
}
