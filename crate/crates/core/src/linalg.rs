//! Small dense `f64` matrices and a one-sided Jacobi SVD.

use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_err!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(dim_err!(
                "matmul {}x{} · {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// First `k` columns.
    pub fn leading_cols(&self, k: usize) -> Self {
        Self::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `max |(AᵀA − I)_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.transpose().matmul(self).expect("square gram");
        let mut worst: f64 = 0.0;
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }
}

/// Thin SVD `A = U · diag(S) · Vᵀ` with `S` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

const MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD.
///
/// Left singular vectors are sign-normalised so that the entry of largest
/// magnitude in each column is positive; the matching right vectors flip
/// with them. Columns belonging to zero singular values are completed to an
/// orthonormal set.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("svd of a matrix with non-finite entries".into()));
    }
    if a.rows < a.cols {
        let t = svd_tall(&a.transpose())?;
        // Aᵀ = U' S V'ᵀ  ⇒  A = V' S U'ᵀ
        let mut out = Svd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        };
        fix_signs(&mut out);
        return Ok(out);
    }
    let mut out = svd_tall(a)?;
    fix_signs(&mut out);
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[allow(clippy::needless_range_loop)]
fn svd_tall(a: &Matrix) -> Result<Svd> {
    let (m, n) = (a.rows, a.cols);
    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let eps = f64::EPSILON;
    let tol = eps * m as f64;
    // columns this small are truncated to zero singular values anyway
    let floor = (eps * m.max(n) as f64 * a.frobenius()).powi(2);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || alpha <= floor || beta <= floor || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "jacobi svd did not converge in {MAX_SWEEPS} sweeps ({m}x{n})"
        )));
    }
    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let cutoff = smax * eps * m.max(n) as f64;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut vt = Matrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        if sigma > cutoff && sigma > 0.0 {
            u_cols.push(cols[j].iter().map(|x| x / sigma).collect());
            s.push(sigma);
        } else {
            u_cols.push(Vec::new());
            s.push(0.0);
        }
        for i in 0..n {
            vt.set(k, i, v[j][i]);
        }
    }
    complete_basis(&mut u_cols, m);
    let u = Matrix::from_fn(m, n, |i, k| u_cols[k][i]);
    Ok(Svd { u, s, vt })
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fill empty columns with unit vectors orthogonal to all others
/// (modified Gram–Schmidt over the standard basis).
fn complete_basis(cols: &mut [Vec<f64>], m: usize) {
    let mut next_e = 0;
    for k in 0..cols.len() {
        if !cols[k].is_empty() {
            continue;
        }
        while next_e < m {
            let mut cand = vec![0.0; m];
            cand[next_e] = 1.0;
            next_e += 1;
            for _ in 0..2 {
                for other in cols.iter().filter(|c| !c.is_empty()) {
                    let d = dot(&cand, other);
                    cand.iter_mut().zip(other).for_each(|(c, o)| *c -= d * o);
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if norm > 1e-8 {
                cols[k] = cand.into_iter().map(|c| c / norm).collect();
                break;
            }
        }
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending and
/// eigenvectors in the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// `A · Aᵀ`.
pub fn gram_rows(a: &Matrix) -> Matrix {
    let n = a.rows;
    let row = |i: usize| &a.data[i * a.cols..(i + 1) * a.cols];
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = dot(row(i), row(j));
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    g
}

/// Householder tridiagonalisation followed by implicit QL. Only the lower
/// triangle of `a` is trusted to be consistent with the upper one.
/// Eigenvectors share the SVD sign convention.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    if a.rows != a.cols {
        return Err(dim_err!("eigendecomposition of a {}x{} matrix", a.rows, a.cols));
    }
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "eigendecomposition of a matrix with non-finite entries".into(),
        ));
    }
    let n = a.rows;
    if n == 0 {
        return Ok(SymEigen {
            values: Vec::new(),
            vectors: Matrix::zeros(0, 0),
        });
    }
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| a.data[i * n..(i + 1) * n].to_vec()).collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalise(&mut v, &mut d, &mut e);
    // rows of `w` are the eigenvector columns of `v`
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    ql_implicit(&mut w, &mut d, &mut e)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]).then(i.cmp(&j)));
    let mut vectors = Matrix::from_fn(n, n, |i, k| w[order[k]][i]);
    normalise_column_signs(&mut vectors);
    Ok(SymEigen {
        values: order.iter().map(|&k| d[k]).collect(),
        vectors,
    })
}

#[allow(clippy::needless_range_loop)]
fn tridiagonalise(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    d.copy_from_slice(&v[n - 1]);
    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = if f > 0.0 { -h.sqrt() } else { h.sqrt() };
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].fill(0.0);
            for j in 0..i {
                f = d[j];
                v[j][i] = f;
                g = e[j] + v[j][j] * f;
                for k in j + 1..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for row in v.iter_mut().take(i + 1) {
            row[i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

const QL_MAX_ITER: usize = 60;

/// Implicit QL on the tridiagonal `(d, e)`; `w[i]` holds eigenvector `i`.
fn ql_implicit(w: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        let mut iter = 0;
        while m > l && e[l].abs() > eps * tst1 {
            iter += 1;
            if iter > QL_MAX_ITER {
                return Err(Error::Numeric(format!(
                    "symmetric eigensolver did not converge for eigenvalue {l} of {n}"
                )));
            }
            let g = d[l];
            let mut p = (d[l + 1] - g) / (2.0 * e[l]);
            let mut r = p.hypot(1.0);
            if p < 0.0 {
                r = -r;
            }
            d[l] = e[l] / (p + r);
            d[l + 1] = e[l] * (p + r);
            let dl1 = d[l + 1];
            let mut h = g - d[l];
            for x in d.iter_mut().skip(l + 2) {
                *x -= h;
            }
            f += h;
            p = d[m];
            let (mut c, mut c2, mut c3) = (1.0, 1.0, 1.0);
            let el1 = e[l + 1];
            let (mut s, mut s2) = (0.0, 0.0);
            for i in (l..m).rev() {
                c3 = c2;
                c2 = c;
                s2 = s;
                let g = c * e[i];
                h = c * p;
                r = p.hypot(e[i]);
                e[i + 1] = s * r;
                s = e[i] / r;
                c = p / r;
                p = c * d[i] - s * g;
                d[i + 1] = h + s * (c * g + s * d[i]);
                let (lo, hi) = w.split_at_mut(i + 1);
                for (a, b) in lo[i].iter_mut().zip(hi[0].iter_mut()) {
                    let hb = *b;
                    *b = s * *a + c * hb;
                    *a = c * *a - s * hb;
                }
            }
            p = -s * s2 * c3 * el1 * e[l] / dl1;
            e[l] = s * p;
            d[l] = c * p;
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Flip columns so each one's largest-magnitude entry is positive; returns
/// which columns were flipped.
fn normalise_column_signs(u: &mut Matrix) -> Vec<bool> {
    (0..u.cols)
        .map(|k| {
            let mut best = 0.0f64;
            for i in 0..u.rows {
                let v = u.get(i, k);
                if v.abs() > best.abs() + 1e-14 {
                    best = v;
                }
            }
            let flip = best < 0.0;
            if flip {
                for i in 0..u.rows {
                    let v = u.get(i, k);
                    u.set(i, k, -v);
                }
            }
            flip
        })
        .collect()
}

fn fix_signs(svd: &mut Svd) {
    let flipped = normalise_column_signs(&mut svd.u);
    for (k, _) in flipped.iter().enumerate().filter(|(_, &f)| f) {
        for j in 0..svd.vt.cols {
            let v = svd.vt.get(k, j);
            svd.vt.set(k, j, -v);
        }
    }
}
