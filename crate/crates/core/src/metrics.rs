//! PSNR and SSIM, and a per-image evaluation report.

use log::warn;

use crate::error::{contract_err, dim_err, Result};
use crate::network::DehazeModel;
use crate::tensor::{Element, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err!("metric inputs differ: {:?} vs {:?}", a.shape(), b.shape()));
    }
    if a.is_empty() {
        return Err(contract_err!("metric inputs are empty"));
    }
    Ok(())
}

pub fn mse<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(peak² / MSE)` over all channels jointly; `+∞` for identical inputs.
pub fn psnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// BT.601 luma of an NCHW RGB image, shape `[N, 1, H, W]`.
pub fn luma<T: Element>(img: &Tensor<T>) -> Result<Tensor<f64>> {
    let (n, c, h, w) = img.dims4()?;
    if c != 3 {
        return Err(dim_err!("luma needs 3 channels, got {c}"));
    }
    let hw = h * w;
    let d = img.data();
    Ok(Tensor::from_fn([n, 1, h, w], |i| {
        let (b, p) = (i / hw, i % hw);
        let base = b * 3 * hw + p;
        0.299 * d[base].as_f64() + 0.587 * d[base + hw].as_f64() + 0.114 * d[base + 2 * hw].as_f64()
    }))
}

/// PSNR on the luma channel only.
pub fn psnr_luma<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    psnr(&luma(a)?, &luma(b)?, peak)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let x = i as f64 - mid;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Valid-region separable filter of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &x[y * w..(y + 1) * w];
        for ox in 0..ow {
            rows[y * ow + ox] = g.iter().zip(&src[ox..ox + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = g.iter().enumerate().map(|(k, gk)| gk * rows[(oy + k) * ow + ox]).sum();
        }
    }
    out
}

fn grey_planes<T: Element>(img: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
    let (n, c, h, w) = img.dims4()?;
    let hw = h * w;
    Ok((0..n)
        .map(|b| {
            (0..hw)
                .map(|p| (0..c).map(|ch| img.data()[(b * c + ch) * hw + p].as_f64()).sum::<f64>() / c as f64)
                .collect()
        })
        .collect())
}

/// Mean SSIM of the channel-mean grey images (Gaussian 11×11, σ = 1.5,
/// peak 1, valid region), averaged over the batch.
pub fn ssim<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let (n, _, h, w) = a.dims4()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(contract_err!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        ));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let (ga, gb) = (grey_planes(a)?, grey_planes(b)?);
    let mut total = 0.0;
    for (pa, pb) in ga.iter().zip(&gb) {
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let mu_a = filter_valid(pa, h, w, &g);
        let mu_b = filter_valid(pb, h, w, &g);
        let e_aa = filter_valid(&prod(|x, _| x * x), h, w, &g);
        let e_bb = filter_valid(&prod(|_, y| y * y), h, w, &g);
        let e_ab = filter_valid(&prod(|x, y| x * y), h, w, &g);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityRow {
    pub file: String,
    pub psnr_out: f64,
    pub ssim_out: f64,
    pub psnr_hazy: f64,
    pub ssim_hazy: f64,
}

impl QualityRow {
    fn csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.file, self.psnr_out, self.ssim_out, self.psnr_hazy, self.ssim_hazy
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QualityReport {
    pub rows: Vec<QualityRow>,
    /// Pairs that could not be read or evaluated.
    pub skipped: usize,
}

impl QualityReport {
    pub const CSV_HEADER: &'static str = "file,psnr_out,ssim_out,psnr_hazy,ssim_hazy";

    pub fn mean(&self) -> QualityRow {
        let n = self.rows.len().max(1) as f64;
        let avg = |f: fn(&QualityRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        QualityRow {
            file: "mean".into(),
            psnr_out: avg(|r| r.psnr_out),
            ssim_out: avg(|r| r.ssim_out),
            psnr_hazy: avg(|r| r.psnr_hazy),
            ssim_hazy: avg(|r| r.ssim_hazy),
        }
    }

    /// Mean `psnr_out − psnr_hazy`.
    pub fn psnr_uplift(&self) -> f64 {
        let m = self.mean();
        m.psnr_out - m.psnr_hazy
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv());
            s.push('\n');
        }
        s.push_str(&self.mean().csv());
        s.push('\n');
        s
    }
}

/// A named pair, or the reason it could not be loaded.
pub type EvalItem = (String, Result<(Tensor<f32>, Tensor<f32>)>);

/// Score `dehaze(hazy)` and `hazy` itself against `clean` for every pair.
pub fn eval_with<F>(items: Vec<EvalItem>, mut dehaze: F) -> Result<QualityReport>
where
    F: FnMut(&Tensor<f32>) -> Result<Tensor<f32>>,
{
    if items.is_empty() {
        return Err(contract_err!("evaluation needs at least one pair"));
    }
    let mut report = QualityReport::default();
    for (name, item) in items {
        let row = item.and_then(|(hazy, clean)| {
            let out = dehaze(&hazy)?;
            Ok(QualityRow {
                file: name.clone(),
                psnr_out: psnr(&out, &clean, 1.0)?,
                ssim_out: ssim(&out, &clean)?,
                psnr_hazy: psnr(&hazy, &clean, 1.0)?,
                ssim_hazy: ssim(&hazy, &clean)?,
            })
        });
        match row {
            Ok(r) => report.rows.push(r),
            Err(e) => {
                warn!("skipping {name}: {e}");
                report.skipped += 1;
            }
        }
    }
    Ok(report)
}

pub fn eval_dataset(model: &DehazeModel<f32>, items: Vec<EvalItem>) -> Result<QualityReport> {
    eval_with(items, |h| model.dehaze(h))
}
