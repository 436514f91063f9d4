//! Dense matrix core: storage, products, QR, a one-sided Jacobi SVD, and the
//! polar factor built on top of it.
//!
//! Everything here is plain `f64` in row-major order. The SVD is written from
//! scratch (no BLAS/LAPACK) so results are bit-reproducible across platforms;
//! matrices at the scales this crate works with (a few hundred rows) keep the
//! cubic costs comfortably in the milliseconds-to-subsecond range.

use crate::error::{Error, Result};

/// Maximum Jacobi sweeps before giving up.
const MAX_JACOBI_SWEEPS: usize = 60;

/// Rotation threshold: a column pair (p, q) is rotated while
/// |w_p . w_q| > JACOBI_TOL * ||w_p|| * ||w_q||.
const JACOBI_TOL: f64 = 1e-14;

/// A dense row-major matrix of finite `f64` values.
///
/// Public constructors require at least one row and one column and reject
/// non-finite entries. Factor matrices returned by [`svd`] may have zero
/// columns when the input is the zero matrix (its compact rank is 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major values.
    ///
    /// # Errors
    /// `InvalidDimensions` if a dimension is zero or the value count does not
    /// equal `rows * cols`; `NonFinite` if any entry is NaN or infinite.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDimensions(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidDimensions(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {}) is {}",
                pos / cols,
                pos % cols,
                values[pos]
            )));
        }
        Ok(Self {
            rows,
            cols,
            data: values,
        })
    }

    pub(crate) fn new_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zeros needs positive dimensions");
        Self::new_unchecked(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix entrywise from `f(i, j)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "from_fn needs positive dimensions");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new_unchecked(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidDimensions(
                "from_rows needs at least one row and one column".into(),
            ));
        }
        let cols = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::InvalidDimensions(format!(
                "ragged rows: expected {cols} columns, found a row with {}",
                bad.len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::new_unchecked(self.cols, self.rows, out)
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} times {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &a_ip) in a_row.iter().enumerate() {
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ip * b;
                }
            }
        }
        Matrix::new_unchecked(m, n, out)
    }

    /// `self * other^T`.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.cols,
            "matmul_nt: {}x{} times ({}x{})^T",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, n) = (self.rows, other.rows);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = self.row(i);
            let out_row = &mut out[i * n..(i + 1) * n];
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a_row, other.row(j));
            }
        }
        Matrix::new_unchecked(m, n, out)
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, other.rows,
            "matmul_tn: ({}x{})^T times {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (k, n) = (self.cols, other.cols);
        let mut out = vec![0.0; k * n];
        for i in 0..self.rows {
            let a_row = self.row(i);
            let b_row = other.row(i);
            for (p, &a_ip) in a_row.iter().enumerate() {
                let out_row = &mut out[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ip * b;
                }
            }
        }
        Matrix::new_unchecked(k, n, out)
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix::new_unchecked(self.rows, self.cols, self.data.iter().map(|v| v * c).collect())
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "elementwise op on mismatched shapes"
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix::new_unchecked(self.rows, self.cols, data)
    }

    /// `self += c * other`, in place.
    pub fn add_scaled(&mut self, c: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// Rescales row `i` by `scales[i]`.
    pub fn scale_rows(&self, scales: &[f64]) -> Matrix {
        assert_eq!(scales.len(), self.rows);
        let mut out = self.clone();
        for (i, &s) in scales.iter().enumerate() {
            for v in &mut out.data[i * self.cols..(i + 1) * self.cols] {
                *v *= s;
            }
        }
        out
    }

    /// Rescales column `j` by `scales[j]`.
    pub fn scale_cols(&self, scales: &[f64]) -> Matrix {
        assert_eq!(scales.len(), self.cols);
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols) {
            for (v, &s) in row.iter_mut().zip(scales) {
                *v *= s;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Frobenius inner product `<a, b> = sum_ij a_ij b_ij`.
pub fn frobenius_inner(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols), "frobenius_inner shapes");
    dot(&a.data, &b.data)
}

/// Dot product with four independent accumulators (keeps the hot Jacobi and
/// Gram loops fast without changing results between runs).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut chunks_a = a.chunks_exact(4);
    let mut chunks_b = b.chunks_exact(4);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

// ── Singular value decomposition ────────────────────────────────────────────

/// Compact SVD `A = U diag(s) V^T`.
///
/// `left_vectors` is m x r and `right_vectors` is n x r with orthonormal
/// columns; `singular_values` are strictly positive in descending order. For
/// the zero matrix r = 0 and both factors have zero columns.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub left_vectors: Matrix,
    pub singular_values: Vec<f64>,
    pub right_vectors: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U diag(s) V^T`, for reconstruction checks.
    pub fn reconstruct(&self, rows: usize, cols: usize) -> Matrix {
        if self.rank() == 0 {
            return Matrix::zeros(rows, cols);
        }
        let scaled = self.left_vectors.scale_cols(&self.singular_values);
        scaled.matmul_nt(&self.right_vectors)
    }
}

/// Compact SVD via one-sided Jacobi on the taller orientation.
///
/// # Errors
/// `ConvergenceFailure` if the rotation sweeps do not settle within
/// [`MAX_JACOBI_SWEEPS`] (not observed on finite input, but reported rather
/// than returning silently wrong factors).
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.rows >= a.cols {
        jacobi_svd_tall(a)
    } else {
        let t = a.transpose();
        let r = jacobi_svd_tall(&t)?;
        Ok(SvdResult {
            left_vectors: r.right_vectors,
            singular_values: r.singular_values,
            right_vectors: r.left_vectors,
        })
    }
}

/// One-sided Jacobi on a matrix with rows >= cols: rotates column pairs of W
/// (initially A) until all pairs are orthogonal, accumulating the rotations
/// in V; then sigma_j = ||w_j|| and U columns are the normalized w_j.
fn jacobi_svd_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = (a.rows, a.cols);

    // Column-major working copies: w[j*m..] is column j of W, v[j*n..] is
    // column j of V.
    let mut w = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            w[j * m + i] = a.data[i * n + j];
        }
    }
    let mut v = vec![0.0f64; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }

    let mut norms_sq = vec![0.0f64; n];
    let mut converged = false;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        for (j, ns) in norms_sq.iter_mut().enumerate() {
            let col = &w[j * m..(j + 1) * m];
            *ns = dot(col, col);
        }
        // Rank-deficient inputs leave residue columns that collapse toward
        // zero but stay nearly parallel, and the relative rotation test
        // below would chase them forever. A column whose norm is under
        // EPSILON times the largest column norm sits below the final rank
        // cutoff no matter what (sigma_max is at least the largest column
        // norm), so flush it to exact zero and let the pair loop skip it.
        let max_ns = norms_sq.iter().fold(0.0f64, |a, &b| a.max(b));
        let flush = max_ns * (f64::EPSILON * f64::EPSILON);
        for (j, ns) in norms_sq.iter_mut().enumerate() {
            if *ns > 0.0 && *ns <= flush {
                w[j * m..(j + 1) * m].fill(0.0);
                *ns = 0.0;
            }
        }
        let mut rotated = 0usize;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let alpha = norms_sq[p];
                let beta = norms_sq[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = {
                    let (head, tail) = w.split_at(q * m);
                    dot(&head[p * m..(p + 1) * m], &tail[..m])
                };
                // sqrt the factors separately so the product cannot
                // underflow for tiny surviving columns.
                if gamma.abs() <= JACOBI_TOL * (alpha.sqrt() * beta.sqrt()) {
                    continue;
                }
                rotated += 1;
                let tau = (beta - alpha) / (2.0 * gamma);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, m, p, q, c, s);
                rotate_pair(&mut v, n, p, q, c, s);
                norms_sq[p] = (alpha - t * gamma).max(0.0);
                norms_sq[q] = (beta + t * gamma).max(0.0);
            }
        }
        if rotated == 0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure {
            routine: "jacobi_svd",
            limit: MAX_JACOBI_SWEEPS,
        });
    }

    let mut sigma: Vec<f64> = (0..n)
        .map(|j| {
            let col = &w[j * m..(j + 1) * m];
            dot(col, col).sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap().then(i.cmp(&j)));

    let sigma_max = sigma[order[0]];
    let cutoff = (m.max(n) as f64) * sigma_max * f64::EPSILON;
    let rank = order
        .iter()
        .take_while(|&&j| sigma[j] > cutoff)
        .count();

    let mut left = vec![0.0f64; m * rank];
    let mut right = vec![0.0f64; n * rank];
    for (k, &j) in order.iter().take(rank).enumerate() {
        let s = sigma[j];
        let col = &w[j * m..(j + 1) * m];
        for i in 0..m {
            left[i * rank + k] = col[i] / s;
        }
        let vcol = &v[j * n..(j + 1) * n];
        for i in 0..n {
            right[i * rank + k] = vcol[i];
        }
    }
    sigma = order.iter().take(rank).map(|&j| sigma[j]).collect();

    Ok(SvdResult {
        left_vectors: Matrix {
            rows: m,
            cols: rank,
            data: left,
        },
        singular_values: sigma,
        right_vectors: Matrix {
            rows: n,
            cols: rank,
            data: right,
        },
    })
}

/// Applies the rotation (x_p, x_q) <- (c x_p - s x_q, s x_p + c x_q) to
/// columns p < q of a column-major buffer with column length `len`.
fn rotate_pair(buf: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = buf.split_at_mut(q * len);
    let col_p = &mut head[p * len..(p + 1) * len];
    let col_q = &mut tail[..len];
    for (x, y) in col_p.iter_mut().zip(col_q.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

// ── Derived operations ──────────────────────────────────────────────────────

/// Polar factor `U V^T` from the compact SVD; the zero matrix maps to itself.
pub fn polar_factor(a: &Matrix) -> Result<Matrix> {
    let s = svd(a)?;
    if s.rank() == 0 {
        return Ok(Matrix::zeros(a.rows, a.cols));
    }
    Ok(s.left_vectors.matmul_nt(&s.right_vectors))
}

/// The four matrix norms this crate reports together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub frobenius: f64,
    pub spectral: f64,
    pub nuclear: f64,
    pub max_abs: f64,
}

/// Frobenius, spectral, nuclear, and max-abs norms (the latter two via SVD).
pub fn norms(a: &Matrix) -> Result<Norms> {
    let s = svd(a)?;
    Ok(Norms {
        frobenius: a.frobenius_norm(),
        spectral: s.singular_values.first().copied().unwrap_or(0.0),
        nuclear: s.singular_values.iter().sum(),
        max_abs: a.max_abs(),
    })
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    let s = svd(a)?;
    Ok(s.singular_values.first().copied().unwrap_or(0.0))
}

/// Per-row and per-column sums of squared entries.
pub fn row_col_sq_norms(a: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mut row_sums = vec![0.0f64; a.rows];
    let mut col_sums = vec![0.0f64; a.cols];
    for (i, row) in a.data.chunks_exact(a.cols).enumerate() {
        let mut acc = 0.0;
        for (j, &x) in row.iter().enumerate() {
            let sq = x * x;
            acc += sq;
            col_sums[j] += sq;
        }
        row_sums[i] = acc;
    }
    (row_sums, col_sums)
}

/// Thin Q factor of a Householder QR, for rows >= cols, with the sign
/// convention that R has a nonnegative diagonal.
pub fn qr_thin_q(a: &Matrix) -> Result<Matrix> {
    let (m, n) = (a.rows, a.cols);
    if m < n {
        return Err(Error::InvalidDimensions(format!(
            "qr_thin_q needs rows >= cols, got {m}x{n}"
        )));
    }
    let mut r = a.data.clone();
    let mut betas = vec![0.0f64; n];
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut diag_sign = vec![1.0f64; n];

    for k in 0..n {
        let mut norm_sq = 0.0;
        for i in k..m {
            let x = r[i * n + k];
            norm_sq += x * x;
        }
        let norm = norm_sq.sqrt();
        let x0 = r[k * n + k];
        if norm == 0.0 {
            vs.push(Vec::new());
            continue;
        }
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        diag_sign[k] = alpha.signum();
        let mut v = vec![0.0f64; m - k];
        v[0] = x0 - alpha;
        for i in (k + 1)..m {
            v[i - k] = r[i * n + k];
        }
        let v_norm_sq = dot(&v, &v);
        let beta = if v_norm_sq == 0.0 { 0.0 } else { 2.0 / v_norm_sq };
        betas[k] = beta;
        // Apply I - beta v v^T to the trailing block of R.
        for j in k..n {
            let mut proj = 0.0;
            for i in k..m {
                proj += v[i - k] * r[i * n + j];
            }
            let proj = beta * proj;
            for i in k..m {
                r[i * n + j] -= proj * v[i - k];
            }
        }
        vs.push(v);
    }

    // Accumulate Q = H_0 ... H_{n-1} applied to the first n identity columns.
    let mut q = vec![0.0f64; m * n];
    for j in 0..n {
        q[j * n + j] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &vs[k];
        if v.is_empty() {
            continue;
        }
        let beta = betas[k];
        for j in 0..n {
            let mut proj = 0.0;
            for i in k..m {
                proj += v[i - k] * q[i * n + j];
            }
            let proj = beta * proj;
            for i in k..m {
                q[i * n + j] -= proj * v[i - k];
            }
        }
    }
    // Flip columns where the R diagonal came out negative.
    for (j, &sign) in diag_sign.iter().enumerate() {
        if sign < 0.0 {
            for i in 0..m {
                q[i * n + j] = -q[i * n + j];
            }
        }
    }
    Ok(Matrix::new_unchecked(m, n, q))
}
