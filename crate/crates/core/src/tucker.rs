//! Tucker decomposition of 3-way tensors, `X ≈ G ×₁ A ×₂ B ×₃ C`.
//!
//! [`hosvd`] truncates the leading left singular vectors of each mode
//! unfolding; [`hooi`] refines that initialisation by alternating
//! projected SVDs until the relative reconstruction error stops improving.
//!
//! Unfolding convention: mode-n matricization keeps the remaining modes in
//! their natural order with the last one varying fastest, so for mode 0 the
//! column index of `x[i, j, k]` is `j·K + k`, for mode 1 it is `i·K + k`,
//! and for mode 2 it is `i·J + j`.

use crate::error::{contract_err, dim_err, Result};
use crate::linalg::{gram_rows, sym_eigen, Matrix};
use crate::tensor::Tensor;

/// How per-mode ranks are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ranks {
    Explicit([usize; 3]),
    /// Fraction of each mode's extent, rounded up and capped at the extent.
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuckerConfig {
    pub ranks: Ranks,
    /// Stop once the error improves by less than this between sweeps.
    pub tol: f64,
    pub max_iter: usize,
    /// Recorded for provenance. The solver has no random component: HOSVD
    /// initialisation is deterministic and singular vectors are
    /// sign-normalised.
    pub seed: u64,
}

impl Default for TuckerConfig {
    fn default() -> Self {
        Self {
            ranks: Ranks::Fraction(0.5),
            tol: 1e-4,
            max_iter: 100,
            seed: 1,
        }
    }
}

impl TuckerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(contract_err!("tucker tol must be > 0, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return Err(contract_err!("tucker max_iter must be >= 1"));
        }
        if let Ranks::Fraction(f) = self.ranks {
            if !(f > 0.0 && f <= 1.0) {
                return Err(contract_err!("rank fraction must lie in (0, 1], got {f}"));
            }
        }
        Ok(())
    }

    /// Concrete ranks for a tensor of the given extents.
    pub fn resolve(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let ranks = match self.ranks {
            Ranks::Explicit(r) => r,
            Ranks::Fraction(f) => dims.map(|d| ((f * d as f64).ceil() as usize).clamp(1, d)),
        };
        check_ranks(dims, ranks)?;
        Ok(ranks)
    }
}

fn check_ranks(dims: [usize; 3], ranks: [usize; 3]) -> Result<()> {
    for m in 0..3 {
        if ranks[m] == 0 || ranks[m] > dims[m] {
            return Err(contract_err!(
                "rank {} for mode {m} must lie in 1..={}",
                ranks[m],
                dims[m]
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuckerDecomp {
    /// Core of shape `(P, Q, R)`.
    pub core: Tensor<f64>,
    /// `I×P`, `J×Q`, `K×R`, each with orthonormal columns.
    pub factors: [Matrix; 3],
}

impl TuckerDecomp {
    pub fn ranks(&self) -> [usize; 3] {
        self.factors.each_ref().map(|f| f.cols)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.factors.each_ref().map(|f| f.rows)
    }
}

/// Result of [`hooi`] with its convergence trace.
#[derive(Debug, Clone)]
pub struct HooiResult {
    pub decomp: TuckerDecomp,
    /// Sweeps performed after the HOSVD initialisation.
    pub iterations: usize,
    /// Relative error after initialisation and after every sweep.
    pub errors: Vec<f64>,
}

impl HooiResult {
    pub fn error(&self) -> f64 {
        *self.errors.last().expect("at least the init error")
    }
}

fn dims3(t: &Tensor<f64>) -> Result<[usize; 3]> {
    match t.shape() {
        &[i, j, k] => Ok([i, j, k]),
        s => Err(contract_err!("expected a 3-way tensor, got shape {s:?}")),
    }
}

fn col_index(mode: usize, dims: [usize; 3], i: usize, j: usize, k: usize) -> (usize, usize) {
    match mode {
        0 => (i, j * dims[2] + k),
        1 => (j, i * dims[2] + k),
        _ => (k, i * dims[1] + j),
    }
}

/// Mode-n matricization (`dims[mode] × product(other dims)`).
pub fn mode_unfold(t: &Tensor<f64>, mode: usize) -> Result<Matrix> {
    let dims = dims3(t)?;
    if mode > 2 {
        return Err(contract_err!("mode {mode} out of range for a 3-way tensor"));
    }
    let rows = dims[mode];
    let cols = dims.iter().product::<usize>() / rows;
    let mut m = Matrix::zeros(rows, cols);
    let d = t.data();
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let (r, c) = col_index(mode, dims, i, j, k);
                m.data[r * cols + c] = d[(i * dims[1] + j) * dims[2] + k];
            }
        }
    }
    Ok(m)
}

/// Inverse of [`mode_unfold`].
pub fn mode_fold(m: &Matrix, mode: usize, dims: [usize; 3]) -> Result<Tensor<f64>> {
    if mode > 2 {
        return Err(contract_err!("mode {mode} out of range for a 3-way tensor"));
    }
    let total: usize = dims.iter().product();
    if m.rows != dims[mode] || m.rows * m.cols != total {
        return Err(dim_err!(
            "cannot fold {}x{} into {dims:?} along mode {mode}",
            m.rows,
            m.cols
        ));
    }
    let mut data = vec![0.0; total];
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let (r, c) = col_index(mode, dims, i, j, k);
                data[(i * dims[1] + j) * dims[2] + k] = m.data[r * m.cols + c];
            }
        }
    }
    Tensor::new(dims.to_vec(), data)
}

/// `t ×ₙ M`: contracts mode `mode` of `t` with the columns of `m` (`m.cols == dims[mode]`).
pub fn mode_product(t: &Tensor<f64>, mode: usize, m: &Matrix) -> Result<Tensor<f64>> {
    let mut dims = dims3(t)?;
    let unfolded = mode_unfold(t, mode)?;
    if m.cols != dims[mode] {
        return Err(dim_err!(
            "mode-{mode} product: matrix has {} columns, mode extent is {}",
            m.cols,
            dims[mode]
        ));
    }
    let prod = m.matmul(&unfolded)?;
    dims[mode] = m.rows;
    mode_fold(&prod, mode, dims)
}

/// Leading `k` left singular vectors, taken as the top eigenvectors of
/// `M·Mᵀ` so the cost is cubic in the row count only.
fn leading_left_vectors(m: &Matrix, k: usize) -> Result<Matrix> {
    Ok(sym_eigen(&gram_rows(m))?.vectors.leading_cols(k))
}

/// `t ×₁ Aᵀ ×₂ Bᵀ ×₃ Cᵀ`.
fn project(t: &Tensor<f64>, factors: &[Matrix; 3]) -> Result<Tensor<f64>> {
    let mut out = t.clone();
    for (mode, f) in factors.iter().enumerate() {
        out = mode_product(&out, mode, &f.transpose())?;
    }
    Ok(out)
}

/// Truncated higher-order SVD.
pub fn hosvd(t: &Tensor<f64>, ranks: [usize; 3]) -> Result<TuckerDecomp> {
    let dims = dims3(t)?;
    check_ranks(dims, ranks)?;
    let factors: [Matrix; 3] = [
        leading_left_vectors(&mode_unfold(t, 0)?, ranks[0])?,
        leading_left_vectors(&mode_unfold(t, 1)?, ranks[1])?,
        leading_left_vectors(&mode_unfold(t, 2)?, ranks[2])?,
    ];
    let core = project(t, &factors)?;
    Ok(TuckerDecomp { core, factors })
}

/// `G ×₁ A ×₂ B ×₃ C`.
pub fn reconstruct(d: &TuckerDecomp) -> Result<Tensor<f64>> {
    let core_dims = dims3(&d.core)?;
    if core_dims != d.ranks() {
        return Err(dim_err!(
            "core shape {core_dims:?} does not match factor ranks {:?}",
            d.ranks()
        ));
    }
    let mut out = d.core.clone();
    for (mode, f) in d.factors.iter().enumerate() {
        out = mode_product(&out, mode, f)?;
    }
    Ok(out)
}

/// `‖t − reconstruct(d)‖ / ‖t‖` (absolute error when `t` is zero).
pub fn relative_error(t: &Tensor<f64>, d: &TuckerDecomp) -> Result<f64> {
    let r = reconstruct(d)?;
    let diff = t.sub(&r)?.sum_sq().sqrt();
    let norm = t.sum_sq().sqrt();
    Ok(if norm > 0.0 { diff / norm } else { diff })
}

/// Higher-order orthogonal iteration starting from [`hosvd`].
pub fn hooi(t: &Tensor<f64>, cfg: &TuckerConfig) -> Result<HooiResult> {
    let dims = dims3(t)?;
    let ranks = cfg.resolve(dims)?;
    let mut decomp = hosvd(t, ranks)?;
    let mut errors = vec![relative_error(t, &decomp)?];
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let mut factors = decomp.factors.clone();
        for mode in 0..3 {
            let mut y = t.clone();
            for (other, f) in factors.iter().enumerate() {
                if other != mode {
                    y = mode_product(&y, other, &f.transpose())?;
                }
            }
            factors[mode] = leading_left_vectors(&mode_unfold(&y, mode)?, ranks[mode])?;
        }
        let core = project(t, &factors)?;
        let candidate = TuckerDecomp { core, factors };
        let err = relative_error(t, &candidate)?;
        iterations += 1;
        let prev = *errors.last().expect("init error");
        // a sweep cannot increase the error in exact arithmetic; keep the
        // previous iterate if rounding says otherwise
        if err <= prev {
            decomp = candidate;
            errors.push(err);
        } else {
            errors.push(prev);
        }
        if prev - err < cfg.tol {
            break;
        }
    }
    Ok(HooiResult {
        decomp,
        iterations,
        errors,
    })
}

/// Low-rank reconstruction of an `H×W×C` feature map. Not differentiable;
/// callers treat the result as a constant.
pub fn tucker_denoise(feature: &Tensor<f64>, cfg: &TuckerConfig) -> Result<Tensor<f64>> {
    reconstruct(&hooi(feature, cfg)?.decomp)
}

/// Rearrange one NCHW item into the `H×W×C` layout used by [`tucker_denoise`].
pub fn nchw_item_to_hwc<T: crate::Element>(x: &Tensor<T>, n: usize) -> Result<Tensor<f64>> {
    let (_, c, h, w) = x.dims4()?;
    let mut data = vec![0.0; h * w * c];
    for ch in 0..c {
        for (p, &v) in x.plane(n, ch).iter().enumerate() {
            data[p * c + ch] = v.as_f64();
        }
    }
    Tensor::new([h, w, c], data)
}

/// Inverse of [`nchw_item_to_hwc`]: `H×W×C` to `[1, C, H, W]`.
pub fn hwc_to_nchw<T: crate::Element>(x: &Tensor<f64>) -> Result<Tensor<T>> {
    let &[h, w, c] = x.shape() else {
        return Err(dim_err!("expected an H×W×C tensor, got {:?}", x.shape()));
    };
    let mut out = Vec::with_capacity(x.len());
    for ch in 0..c {
        out.extend((0..h * w).map(|p| T::of(x.data()[p * c + ch])));
    }
    Tensor::new([1, c, h, w], out)
}

/// Apply [`tucker_denoise`] to every item of an NCHW batch.
pub fn denoise_nchw<T: crate::Element>(x: &Tensor<T>, cfg: &TuckerConfig) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let mut out = Vec::with_capacity(x.len());
    for item in 0..n {
        let clean = tucker_denoise(&nchw_item_to_hwc(x, item)?, cfg)?;
        for ch in 0..c {
            out.extend((0..h * w).map(|p| T::of(clean.data()[p * c + ch])));
        }
    }
    Tensor::new([n, c, h, w], out)
}
