//! Dense tensors, matrices and the multilinear primitives used by the
//! factorization routines.
//!
//! Storage is row-major everywhere (last index fastest). Mode-n unfoldings
//! place mode `n` along the rows; the remaining modes index the columns with
//! the lower-numbered modes varying fastest. With that convention the mode-1
//! unfolding of a CP tensor `[A, B, C]` is exactly `B · khatri_rao(C, A)ᵀ`.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DataLength {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged matrix literal");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
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

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let other_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(other_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`, without materializing the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "matmul_t {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{what} {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    /// Euclidean norm of every column.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sq.iter_mut().zip(self.row(i)) {
                *s += v * v;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    pub fn scale_column(&mut self, j: usize, alpha: f64) {
        for i in 0..self.rows {
            self.data[i * self.cols + j] *= alpha;
        }
    }

    /// View as a 2-way tensor sharing the same row-major layout.
    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor {
            shape: vec![self.rows, self.cols],
            data: self.data.clone(),
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// N-way dense tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        })
    }

    /// Fills the tensor from a function of the multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        validate_shape(shape)?;
        let len = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.shape.len()];
        for m in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[m] = strides[m + 1] * self.shape[m + 1];
        }
        strides
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.shape.len());
        let offset: usize = idx
            .iter()
            .zip(self.strides())
            .map(|(&i, s)| i * s)
            .sum();
        self.data[offset]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Same data, new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<DenseTensor> {
        DenseTensor::new(shape.to_vec(), self.data.clone())
    }

    /// Interprets a 2-way tensor as a matrix.
    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.ndim() != 2 {
            return Err(Error::UnsupportedOrder(self.ndim(), "2"));
        }
        Matrix::from_vec(self.shape[0], self.shape[1], self.data.clone())
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&n| n == 0) {
        return Err(Error::EmptyExtent(shape.to_vec()));
    }
    Ok(())
}

/// Advances a row-major multi-index by one position.
#[inline]
fn increment(idx: &mut [usize], shape: &[usize]) {
    for m in (0..shape.len()).rev() {
        idx[m] += 1;
        if idx[m] < shape[m] {
            return;
        }
        idx[m] = 0;
    }
}

/// Column strides of the mode-`mode` unfolding, indexed by tensor mode.
/// The entry for `mode` itself is zero.
fn unfold_col_strides(shape: &[usize], mode: usize) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1;
    for (m, &n) in shape.iter().enumerate() {
        if m == mode {
            continue;
        }
        strides[m] = acc;
        acc *= n;
    }
    strides
}

/// Ordered CP factor matrices sharing a common rank.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    factors: Vec<Matrix>,
}

impl FactorSet {
    pub fn new(factors: Vec<Matrix>) -> Result<Self> {
        if !(2..=3).contains(&factors.len()) {
            return Err(Error::UnsupportedOrder(factors.len(), "2 or 3"));
        }
        let rank = factors[0].cols();
        if rank == 0 {
            return Err(Error::ZeroRank);
        }
        if factors.iter().any(|f| f.cols() != rank) {
            return Err(Error::ShapeMismatch(
                "factors must share the same column count".into(),
            ));
        }
        Ok(Self { factors })
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.factors[0].cols()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    #[inline]
    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    #[inline]
    pub fn factor(&self, i: usize) -> &Matrix {
        &self.factors[i]
    }

    pub fn into_factors(self) -> Vec<Matrix> {
        self.factors
    }

    /// Row counts of the factors, i.e. the shape of the tensor they model.
    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    pub(crate) fn check_against(&self, shape: &[usize]) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "factor rows {:?} do not match tensor shape {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(())
    }
}

/// Mode-`mode` unfolding: rows indexed by `mode`, remaining modes along the
/// columns with the lower-numbered mode varying fastest.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    let ndim = t.ndim();
    if mode >= ndim {
        return Err(Error::ModeOutOfRange { mode, ndim });
    }
    let rows = t.shape[mode];
    let cols = t.len() / rows;
    let col_strides = unfold_col_strides(&t.shape, mode);
    let mut out = Matrix::zeros(rows, cols);
    let mut idx = vec![0usize; ndim];
    for &v in &t.data {
        let col: usize = idx.iter().zip(&col_strides).map(|(&i, &s)| i * s).sum();
        out.data[idx[mode] * cols + col] = v;
        increment(&mut idx, &t.shape);
    }
    Ok(out)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    validate_shape(shape)?;
    let ndim = shape.len();
    if mode >= ndim {
        return Err(Error::ModeOutOfRange { mode, ndim });
    }
    let len: usize = shape.iter().product();
    if m.rows != shape[mode] || m.rows * m.cols != len {
        return Err(Error::ShapeMismatch(format!(
            "cannot fold {}x{} at mode {mode} into {shape:?}",
            m.rows, m.cols
        )));
    }
    let col_strides = unfold_col_strides(shape, mode);
    let mut data = Vec::with_capacity(len);
    let mut idx = vec![0usize; ndim];
    for _ in 0..len {
        let col: usize = idx.iter().zip(&col_strides).map(|(&i, &s)| i * s).sum();
        data.push(m.data[idx[mode] * m.cols + col]);
        increment(&mut idx, shape);
    }
    Ok(DenseTensor {
        shape: shape.to_vec(),
        data,
    })
}

/// Column-wise Kronecker product; the row index of `a` varies slowest.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch(format!(
            "khatri_rao column counts {} and {}",
            a.cols, b.cols
        )));
    }
    let cols = a.cols;
    let mut out = Matrix::zeros(a.rows * b.rows, cols);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            let br = b.row(j);
            let dst = &mut out.data[(i * b.rows + j) * cols..(i * b.rows + j + 1) * cols];
            for ((d, x), y) in dst.iter_mut().zip(ar).zip(br) {
                *d = x * y;
            }
        }
    }
    Ok(out)
}

/// `aᵀ · a`.
pub fn gram(a: &Matrix) -> Matrix {
    let n = a.cols;
    let mut out = Matrix::zeros(n, n);
    for i in 0..a.rows {
        let row = a.row(i);
        for p in 0..n {
            let rp = row[p];
            if rp == 0.0 {
                continue;
            }
            for q in p..n {
                out.data[p * n + q] += rp * row[q];
            }
        }
    }
    for p in 0..n {
        for q in 0..p {
            out.data[p * n + q] = out.data[q * n + p];
        }
    }
    out
}

/// Khatri-Rao product of every factor except `mode`, higher-numbered factor
/// first, e.g. `khatri_rao(C, A)` for mode 1 of a 3-way set.
pub fn khatri_rao_except(fs: &FactorSet, mode: usize) -> Result<Matrix> {
    let ndim = fs.len();
    if mode >= ndim {
        return Err(Error::ModeOutOfRange { mode, ndim });
    }
    let mut others = (0..ndim).rev().filter(|&m| m != mode);
    let first = others.next().expect("at least two factors");
    let mut acc = fs.factors[first].clone();
    for m in others {
        acc = khatri_rao(&acc, &fs.factors[m])?;
    }
    Ok(acc)
}

/// Matricized tensor times Khatri-Rao product, evaluated directly from the
/// tensor entries without forming the unfolding or the Khatri-Rao matrix.
///
/// Equal (up to summation order) to
/// `unfold(t, mode) · khatri_rao_except(fs, mode)`.
pub fn mttkrp(t: &DenseTensor, fs: &FactorSet, mode: usize) -> Result<Matrix> {
    let ndim = t.ndim();
    if mode >= ndim {
        return Err(Error::ModeOutOfRange { mode, ndim });
    }
    if fs.len() != ndim {
        return Err(Error::ShapeMismatch(format!(
            "{} factors for a {ndim}-way tensor",
            fs.len()
        )));
    }
    fs.check_against(&t.shape)?;
    let rank = fs.rank();
    let mut out = Matrix::zeros(t.shape[mode], rank);
    match ndim {
        2 => {
            let x = Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone())?;
            out = if mode == 0 {
                x.matmul(&fs.factors[1])?
            } else {
                x.transpose().matmul(&fs.factors[0])?
            };
        }
        3 => {
            let (ni, nj, nk) = (t.shape[0], t.shape[1], t.shape[2]);
            let (fa, fb, fc) = (&fs.factors[0], &fs.factors[1], &fs.factors[2]);
            let mut weights = vec![0.0; rank];
            for i in 0..ni {
                for j in 0..nj {
                    let fiber = &t.data[(i * nj + j) * nk..(i * nj + j + 1) * nk];
                    match mode {
                        0 => {
                            // Σ_k x(i,j,k) C(k,:) then scale by B(j,:)
                            weights.iter_mut().for_each(|w| *w = 0.0);
                            for (k, &x) in fiber.iter().enumerate() {
                                for (w, c) in weights.iter_mut().zip(fc.row(k)) {
                                    *w += x * c;
                                }
                            }
                            let dst = &mut out.data[i * rank..(i + 1) * rank];
                            for ((d, w), b) in dst.iter_mut().zip(&weights).zip(fb.row(j)) {
                                *d += w * b;
                            }
                        }
                        1 => {
                            weights.iter_mut().for_each(|w| *w = 0.0);
                            for (k, &x) in fiber.iter().enumerate() {
                                for (w, c) in weights.iter_mut().zip(fc.row(k)) {
                                    *w += x * c;
                                }
                            }
                            let dst = &mut out.data[j * rank..(j + 1) * rank];
                            for ((d, w), a) in dst.iter_mut().zip(&weights).zip(fa.row(i)) {
                                *d += w * a;
                            }
                        }
                        _ => {
                            for (w, (a, b)) in weights.iter_mut().zip(fa.row(i).iter().zip(fb.row(j))) {
                                *w = a * b;
                            }
                            for (k, &x) in fiber.iter().enumerate() {
                                let dst = &mut out.data[k * rank..(k + 1) * rank];
                                for (d, w) in dst.iter_mut().zip(&weights) {
                                    *d += x * w;
                                }
                            }
                        }
                    }
                }
            }
        }
        _ => return Err(Error::UnsupportedOrder(ndim, "2 or 3")),
    }
    Ok(out)
}

/// Sum of rank-1 outer products of the factor columns.
pub fn reconstruct(fs: &FactorSet, shape: &[usize]) -> Result<DenseTensor> {
    fs.check_against(shape)?;
    match fs.len() {
        2 => {
            let m = fs.factors[0].matmul_t(&fs.factors[1])?;
            Ok(DenseTensor {
                shape: shape.to_vec(),
                data: m.data,
            })
        }
        3 => {
            // X = A · khatri_rao(B, C)ᵀ in row-major (i, j·K + k) layout.
            let bc = khatri_rao(&fs.factors[1], &fs.factors[2])?;
            let m = fs.factors[0].matmul_t(&bc)?;
            Ok(DenseTensor {
                shape: shape.to_vec(),
                data: m.data,
            })
        }
        n => Err(Error::UnsupportedOrder(n, "2 or 3")),
    }
}

/// ‖t − approx‖_F / ‖t‖_F.
pub fn rel_error(t: &DenseTensor, approx: &DenseTensor) -> Result<f64> {
    if t.shape != approx.shape {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            t.shape, approx.shape
        )));
    }
    let norm = t.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let diff: f64 = t
        .data
        .iter()
        .zip(&approx.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(diff.sqrt() / norm)
}
