//! Dense complex tensors and matrices.
//!
//! Tensors are stored row-major with explicit shape metadata. Contraction is
//! realized as permute → reshape → matrix multiply, which keeps the cost model
//! predictable and makes brute-force index loops a simple independent check.
//!
//! Matrices use the same row-major layout. Gate matrices act on column vectors
//! `U[out, in]`, with the first qubit of a gate as the most significant bit of
//! the local basis index.

use std::ops::{Index, IndexMut};

use faer::Mat;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::tol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} entries but {found} were given")]
    ShapeMismatch { shape: Vec<usize>, expected: usize, found: usize },

    #[error("zero-length axis in shape {0:?}")]
    ZeroDimension(Vec<usize>),

    #[error("tensor contains a non-finite entry")]
    NonFinite,

    #[error("axis {axis} out of range for a rank-{rank} tensor")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("axis {0} appears more than once")]
    RepeatedAxis(usize),

    #[error("paired axes have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),

    #[error("left axes must be a nonempty proper subset of the tensor's axes")]
    BadPartition,

    #[error("max_rank must be at least 1")]
    ZeroRank,

    #[error("singular value decomposition failed to converge")]
    SvdFailed,

    #[error("matrix is not an isometry: max |V^H V - I| = {0:.3e}")]
    NotIsometry(f64),
}

pub type TensorResult<T> = Result<T, TensorError>;

fn product(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

/// Dense complex tensor in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> TensorResult<Self> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDimension(shape));
        }
        let expected = product(&shape);
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch { shape, expected, found: data.len() });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-length axis in {shape:?}");
        let n = product(&shape);
        Self { shape, data: vec![C64::new(0.0, 0.0); n] }
    }

    pub fn scalar(value: C64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in row-major
    /// order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> C64) -> Self {
        let mut out = Self::zeros(shape);
        let mut idx = vec![0; out.shape.len()];
        for k in 0..out.data.len() {
            out.data[k] = f(&idx);
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < out.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.shape)
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        assert_eq!(idx.len(), self.shape.len());
        let offset: usize = idx
            .iter()
            .zip(self.strides())
            .zip(&self.shape)
            .map(|((&i, s), &d)| {
                assert!(i < d, "index {i} out of range for axis of length {d}");
                i * s
            })
            .sum();
        self.data[offset]
    }

    fn check_axes(&self, axes: &[usize]) -> TensorResult<()> {
        let mut seen = vec![false; self.rank()];
        for &ax in axes {
            if ax >= self.rank() {
                return Err(TensorError::AxisOutOfRange { axis: ax, rank: self.rank() });
            }
            if seen[ax] {
                return Err(TensorError::RepeatedAxis(ax));
            }
            seen[ax] = true;
        }
        Ok(())
    }

    /// Reorders axes so that new axis `k` is old axis `axes[k]`.
    pub fn permute(&self, axes: &[usize]) -> TensorResult<Tensor> {
        self.check_axes(axes)?;
        if axes.len() != self.rank() {
            return Err(TensorError::BadPartition);
        }
        if axes.iter().enumerate().all(|(k, &a)| k == a) {
            return Ok(self.clone());
        }
        let old_strides = self.strides();
        let new_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| old_strides[a]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; axes.len()];
        let mut offset = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[offset]);
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                offset += src_strides[ax];
                if idx[ax] < new_shape[ax] {
                    break;
                }
                offset -= src_strides[ax] * new_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor { shape: new_shape, data })
    }

    pub fn reshape(self, shape: Vec<usize>) -> TensorResult<Tensor> {
        Tensor::new(shape, self.data)
    }

    pub fn scale(&self, c: C64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|z| z * c).collect() }
    }

    pub fn conj(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|z| z.conj()).collect() }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Matricizes the tensor: rows run over `row_axes` (in the given order),
    /// columns over the remaining axes in their original order.
    pub fn to_matrix(&self, row_axes: &[usize]) -> TensorResult<Matrix> {
        self.check_axes(row_axes)?;
        let col_axes: Vec<usize> = (0..self.rank()).filter(|a| !row_axes.contains(a)).collect();
        let order: Vec<usize> = row_axes.iter().chain(&col_axes).copied().collect();
        let rows = row_axes.iter().map(|&a| self.shape[a]).product();
        let cols = col_axes.iter().map(|&a| self.shape[a]).product();
        let t = self.permute(&order)?;
        Ok(Matrix { rows, cols, data: t.data })
    }
}

/// Contracts `a` with `b` over the listed axis pairs.
///
/// The result carries the unpaired axes of `a` in order, followed by the
/// unpaired axes of `b`.
pub fn contract(a: &Tensor, b: &Tensor, pairs: &[(usize, usize)]) -> TensorResult<Tensor> {
    let a_axes: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let b_axes: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    a.check_axes(&a_axes)?;
    b.check_axes(&b_axes)?;
    for &(i, j) in pairs {
        if a.shape[i] != b.shape[j] {
            return Err(TensorError::DimensionMismatch(a.shape[i], b.shape[j]));
        }
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|x| !a_axes.contains(x)).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|x| !b_axes.contains(x)).collect();

    let a_order: Vec<usize> = free_a.iter().chain(&a_axes).copied().collect();
    let b_order: Vec<usize> = b_axes.iter().chain(&free_b).copied().collect();
    let am = a.permute(&a_order)?;
    let bm = b.permute(&b_order)?;

    let m: usize = free_a.iter().map(|&x| a.shape[x]).product();
    let k: usize = a_axes.iter().map(|&x| a.shape[x]).product();
    let n: usize = free_b.iter().map(|&x| b.shape[x]).product();
    let data = matmul_raw(&am.data, &bm.data, m, k, n);

    let shape: Vec<usize> = free_a
        .iter()
        .map(|&x| a.shape[x])
        .chain(free_b.iter().map(|&x| b.shape[x]))
        .collect();
    Ok(Tensor { shape, data })
}

fn matmul_raw(a: &[C64], b: &[C64], m: usize, k: usize, n: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip.re == 0.0 && aip.im == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// Splits `t` across the bipartition `left_axes | rest` by a singular value
/// decomposition, keeping at most `max_rank` singular values.
///
/// Returns `(u, s, v)` where `u` has shape `[left dims.., k]`, `s` holds the
/// `k` kept singular values in descending order, and `v` has shape
/// `[k, right dims..]` with the right axes in their original order.
pub fn svd_split(
    t: &Tensor,
    left_axes: &[usize],
    max_rank: usize,
) -> TensorResult<(Tensor, Vec<f64>, Tensor)> {
    if max_rank == 0 {
        return Err(TensorError::ZeroRank);
    }
    if left_axes.is_empty() || left_axes.len() >= t.rank() {
        return Err(TensorError::BadPartition);
    }
    let m = t.to_matrix(left_axes)?;
    let right_axes: Vec<usize> = (0..t.rank()).filter(|a| !left_axes.contains(a)).collect();

    let fm = Mat::<C64>::from_fn(m.rows, m.cols, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().map_err(|_| TensorError::SvdFailed)?;
    let (su, ss, sv) = (svd.U(), svd.S().column_vector(), svd.V());
    let full = m.rows.min(m.cols);
    let k = max_rank.min(full);

    let s: Vec<f64> = (0..k).map(|i| ss[i].re).collect();
    let left_dims: Vec<usize> = left_axes.iter().map(|&a| t.shape[a]).collect();
    let right_dims: Vec<usize> = right_axes.iter().map(|&a| t.shape[a]).collect();

    let mut u_shape = left_dims.clone();
    u_shape.push(k);
    let u = Tensor::from_fn(u_shape, |idx| {
        let (rows, bond) = idx.split_at(idx.len() - 1);
        su[(flat_index(rows, &left_dims), bond[0])]
    });
    let mut v_shape = vec![k];
    v_shape.extend(&right_dims);
    let v = Tensor::from_fn(v_shape, |idx| sv[(flat_index(&idx[1..], &right_dims), idx[0])].conj());
    Ok((u, s, v))
}

fn flat_index(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &d)| acc * d + i)
}

/// Dense complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> TensorResult<Self> {
        if rows == 0 || cols == 0 {
            return Err(TensorError::ZeroDimension(vec![rows, cols]));
        }
        if data.len() != rows * cols {
            return Err(TensorError::ShapeMismatch {
                shape: vec![rows, cols],
                expected: rows * cols,
                found: data.len(),
            });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<C64>]) -> Self {
        let rows = columns[0].len();
        Self::from_fn(rows, columns.len(), |i, j| columns[j][i])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let data = matmul_raw(&self.data, &other.data, self.rows, self.cols, other.cols);
        Matrix { rows: self.rows, cols: other.cols, data }
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Matrix) -> Matrix {
        Matrix::from_fn(self.rows * other.rows, self.cols * other.cols, |i, j| {
            self[(i / other.rows, j / other.cols)] * other[(i % other.rows, j % other.cols)]
        })
    }

    pub fn scale(&self, c: C64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * c).collect() }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// `max |V^H V - I|` over all entries.
    pub fn isometry_residual(&self) -> f64 {
        let g = self.adjoint().matmul(self);
        g.max_abs_diff(&Matrix::identity(self.cols))
    }

    pub fn is_isometry(&self, tol: f64) -> bool {
        self.cols <= self.rows && self.isometry_residual() <= tol
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.rows == self.cols && self.isometry_residual() <= tol
    }

    /// Reinterprets the row-major entries as a tensor of the given shape.
    pub fn into_tensor(self, shape: Vec<usize>) -> TensorResult<Tensor> {
        Tensor::new(shape, self.data)
    }

    pub(crate) fn to_faer(&self) -> Mat<C64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)])
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = C64;

    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Completes an isometry to a unitary.
///
/// The first `v.cols()` columns of the result are the columns of `v`; the
/// rest come from orthonormalizing the standard basis vectors against the
/// columns accepted so far, in index order, skipping candidates whose residual
/// norm falls below the linear-dependence threshold. The completion is a pure
/// function of `v`.
pub fn complete_isometry(v: &Matrix) -> TensorResult<Matrix> {
    if v.cols > v.rows {
        return Err(TensorError::NotIsometry(f64::INFINITY));
    }
    let residual = v.isometry_residual();
    if residual > tol::STRUCTURAL {
        return Err(TensorError::NotIsometry(residual));
    }
    let n = v.rows;
    let mut basis: Vec<Vec<C64>> = (0..v.cols).map(|j| v.column(j)).collect();
    for k in 0..n {
        if basis.len() == n {
            break;
        }
        let mut cand = vec![C64::new(0.0, 0.0); n];
        cand[k] = C64::new(1.0, 0.0);
        // Two Gram-Schmidt passes.
        for _ in 0..2 {
            for q in &basis {
                let overlap: C64 = q.iter().zip(&cand).map(|(a, b)| a.conj() * b).sum();
                for (c, a) in cand.iter_mut().zip(q) {
                    *c -= overlap * a;
                }
            }
        }
        let norm = cand.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < tol::DEPENDENCE {
            continue;
        }
        cand.iter_mut().for_each(|z| *z /= norm);
        basis.push(cand);
    }
    debug_assert_eq!(basis.len(), n);
    Ok(Matrix::from_columns(&basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_tensor(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
        Tensor::from_fn(shape, |_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    /// QR-style random isometry via Gram-Schmidt on a random matrix.
    pub(crate) fn random_isometry(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        let mut cols_v: Vec<Vec<C64>> = Vec::new();
        while cols_v.len() < cols {
            let mut v: Vec<C64> =
                (0..rows).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            for _ in 0..2 {
                for q in &cols_v {
                    let o: C64 = q.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                    for (x, a) in v.iter_mut().zip(q) {
                        *x -= o * a;
                    }
                }
            }
            let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.iter_mut().for_each(|z| *z /= n);
            cols_v.push(v);
        }
        Matrix::from_columns(&cols_v)
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![c(0.0, 0.0); 3]),
            Err(TensorError::ShapeMismatch { .. })
        ));
        assert!(matches!(Tensor::new(vec![2, 0], vec![]), Err(TensorError::ZeroDimension(_))));
        assert_eq!(Tensor::new(vec![1], vec![c(f64::NAN, 0.0)]), Err(TensorError::NonFinite));
    }

    #[test]
    fn permute_matches_index_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor(vec![2, 3, 4], &mut rng);
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(p.get(&[k, i, j]), t.get(&[i, j, k]));
                }
            }
        }
    }

    #[test]
    fn contract_identity_with_vector() {
        let id = Matrix::identity(2).into_tensor(vec![2, 2]).unwrap();
        let v = Tensor::new(vec![2], vec![c(0.3, -0.1), c(0.5, 0.2)]).unwrap();
        let out = contract(&id, &v, &[(1, 0)]).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn contract_is_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_tensor(vec![2, 3], &mut rng);
        let b = random_tensor(vec![3, 4], &mut rng);
        let out = contract(&a, &b, &[(1, 0)]).unwrap();
        assert_eq!(out.shape(), &[2, 4]);
        for i in 0..2 {
            for j in 0..4 {
                let expect: C64 = (0..3).map(|k| a.get(&[i, k]) * b.get(&[k, j])).sum();
                assert!((out.get(&[i, j]) - expect).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn full_contraction_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_tensor(vec![2, 2, 2], &mut rng);
        let a = a.scale(c(1.0 / a.norm(), 0.0));
        let b = random_tensor(vec![2, 2, 2], &mut rng);
        let b = b.scale(c(1.0 / b.norm(), 0.0));
        let out = contract(&a.conj(), &b, &[(0, 0), (1, 1), (2, 2)]).unwrap();
        assert!(out.shape().is_empty());
        let mut brute = c(0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    brute += a.get(&[i, j, k]).conj() * b.get(&[i, j, k]);
                }
            }
        }
        assert!((out.data()[0] - brute).norm() < 1e-14);
    }

    #[test]
    fn contract_crossed_pairs_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_tensor(vec![2, 3, 5], &mut rng);
        let b = random_tensor(vec![5, 7, 2], &mut rng);
        let out = contract(&a, &b, &[(2, 0), (0, 2)]).unwrap();
        assert_eq!(out.shape(), &[3, 7]);
        let expect: C64 = (0..2)
            .flat_map(|i| (0..5).map(move |k| (i, k)))
            .map(|(i, k)| a.get(&[i, 1, k]) * b.get(&[k, 4, i]))
            .sum();
        assert!((out.get(&[1, 4]) - expect).norm() < 1e-13);

        assert_eq!(contract(&a, &b, &[(1, 0)]), Err(TensorError::DimensionMismatch(3, 5)));
        assert_eq!(contract(&a, &b, &[(2, 0), (2, 1)]), Err(TensorError::RepeatedAxis(2)));
        assert!(matches!(contract(&a, &b, &[(3, 0)]), Err(TensorError::AxisOutOfRange { .. })));
    }

    #[test]
    fn contract_is_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_tensor(vec![2, 3, 2], &mut rng);
            let b = random_tensor(vec![3, 2], &mut rng);
            let alpha = c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let lhs = contract(&a.scale(alpha), &b, &[(1, 0)]).unwrap();
            let rhs = contract(&a, &b, &[(1, 0)]).unwrap().scale(alpha);
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);
            let lhs = contract(&a, &b.scale(alpha), &[(1, 0)]).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    fn reassemble(u: &Tensor, s: &[f64], v: &Tensor) -> Tensor {
        let k = s.len();
        let mut us = u.clone();
        let n = us.data.len() / k;
        for r in 0..n {
            for (j, &sv) in s.iter().enumerate() {
                us.data[r * k + j] *= sv;
            }
        }
        contract(&us, v, &[(u.rank() - 1, 0)]).unwrap()
    }

    #[test]
    fn svd_rank_one_product() {
        let a = [c(0.6, 0.0), c(0.0, 0.8)];
        let b = [c(1.0, 1.0), c(0.5, 0.0), c(-0.25, 0.1)];
        let t = Tensor::from_fn(vec![2, 3], |i| a[i[0]] * b[i[1]]);
        let (u, s, v) = svd_split(&t, &[0], 1).unwrap();
        assert_eq!(s.len(), 1);
        let r = reassemble(&u, &s, &v);
        assert!(r.max_abs_diff(&t) < 1e-12);
        let (_, s_full, _) = svd_split(&t, &[1], 3).unwrap();
        assert!(s_full[1] < 1e-12);
    }

    #[test]
    fn svd_of_unitary_unfolding_is_exact_at_rank_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u8 = random_isometry(8, 8, &mut rng);
        let t = u8.into_tensor(vec![2; 6]).unwrap();
        let (u, s, v) = svd_split(&t, &[0, 1], 4).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        assert!(reassemble(&u, &s, &v).max_abs_diff(&t) < 1e-10);
    }

    #[test]
    fn svd_of_zeros() {
        let t = Tensor::zeros(vec![2, 2, 2]);
        let (_, s, _) = svd_split(&t, &[0], 4).unwrap();
        assert!(s.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn svd_partition_errors() {
        let t = Tensor::zeros(vec![2, 2]);
        assert_eq!(svd_split(&t, &[], 1).unwrap_err(), TensorError::BadPartition);
        assert_eq!(svd_split(&t, &[0, 1], 1).unwrap_err(), TensorError::BadPartition);
        assert_eq!(svd_split(&t, &[0], 0).unwrap_err(), TensorError::ZeroRank);
    }

    #[test]
    fn svd_non_leading_partition_reorders_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_tensor(vec![2, 3, 4], &mut rng);
        let (u, s, v) = svd_split(&t, &[2, 0], 8).unwrap();
        assert_eq!(u.shape(), &[4, 2, 3]);
        assert_eq!(v.shape(), &[3, 3]);
        let r = reassemble(&u, &s, &v);
        assert!(r.max_abs_diff(&t.permute(&[2, 0, 1]).unwrap()) < 1e-12);
    }

    #[test]
    fn truncation_error_is_discarded_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let t = random_tensor(vec![3, 4, 2], &mut rng);
            let (_, s_all, _) = svd_split(&t, &[0, 2], 6).unwrap();
            assert_eq!(s_all.len(), 4);
            for keep in 1..=s_all.len() {
                let (u, s, v) = svd_split(&t, &[0, 2], keep).unwrap();
                let r = reassemble(&u, &s, &v).permute(&[0, 2, 1]).unwrap();
                let diff: Vec<C64> = r.data().iter().zip(t.data()).map(|(a, b)| a - b).collect();
                let err = Tensor::new(t.shape().to_vec(), diff).unwrap();
                let discarded: f64 = s_all[keep..].iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((err.norm() - discarded).abs() < 1e-10, "keep={keep}");
            }
        }
    }

    #[test]
    fn completion_canonical_cases() {
        let e0 = Matrix::from_columns(&[vec![c(1.0, 0.0), c(0.0, 0.0)]]);
        assert_eq!(complete_isometry(&e0).unwrap(), Matrix::identity(2));
        let e1 = Matrix::from_columns(&[vec![c(0.0, 0.0), c(1.0, 0.0)]]);
        let u = complete_isometry(&e1).unwrap();
        assert_eq!(u.column(0), vec![c(0.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(u.column(1), vec![c(1.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn completion_of_random_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_isometry(8, 4, &mut rng);
        let u = complete_isometry(&v).unwrap();
        assert!(u.is_unitary(1e-10));
        for j in 0..4 {
            for i in 0..8 {
                assert!((u[(i, j)] - v[(i, j)]).norm() <= 1e-12);
            }
        }
        assert_eq!(u, complete_isometry(&v).unwrap());
    }

    #[test]
    fn completion_many_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let rows = rng.gen_range(1..=16);
            let cols = rng.gen_range(1..=rows.min(8));
            let v = random_isometry(rows, cols, &mut rng);
            assert!(complete_isometry(&v).unwrap().is_unitary(1e-10));
        }
    }

    #[test]
    fn completion_rejects_non_isometry() {
        let v = Matrix::from_columns(&[vec![c(1.0, 0.0), c(1.0, 0.0)]]);
        assert!(matches!(complete_isometry(&v), Err(TensorError::NotIsometry(_))));
        let wide = Matrix::identity(2).kron(&Matrix::from_fn(1, 2, |_, _| c(0.5, 0.0)));
        assert!(matches!(complete_isometry(&wide), Err(TensorError::NotIsometry(_))));
    }
}
