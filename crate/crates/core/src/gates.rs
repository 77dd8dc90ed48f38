//! Parameterized gate blocks and the maps between unitaries and PEPS
//! tensors.
//!
//! A two-qubit block is one Mølmer–Sørensen gate dressed by a U3 rotation on
//! every incoming and outgoing rail (12 angles). A three-qubit block is two
//! staggered two-qubit blocks, on rails (0,1) and then (1,2) (24 angles).
//!
//! Rail 0 is the most significant bit of a gate's local basis index.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{complete_isometry, contract, svd_split, Matrix, Tensor, TensorError};
use crate::tol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("{kind:?} takes {expected} parameters, got {found}")]
    WrongParamCount { kind: GateKind, expected: usize, found: usize },

    #[error("{kind:?} acts on {expected} qubits, got {found}")]
    WrongQubitCount { kind: GateKind, expected: usize, found: usize },

    #[error("qubit {0} listed twice in one gate")]
    DuplicateQubit(usize),

    #[error("custom unitary is missing its matrix")]
    MissingMatrix,

    #[error("matrix is not unitary: max |U^H U - I| = {0:.3e}")]
    NotUnitary(f64),

    #[error("matrix dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("fixed input {input} is not a valid, distinct rail of a {n_qubits}-qubit gate")]
    BadFixedInput { input: usize, n_qubits: usize },

    #[error("final-row split reconstructs the clamped map only to {0:.3e}")]
    ReconstructionFailed(f64),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type GateResult<T> = Result<T, GateError>;

/// Standard three-Euler-angle single-qubit rotation.
pub fn u3(theta: f64, phi: f64, lam: f64) -> Matrix {
    let (s, c) = (theta / 2.0).sin_cos();
    let e = |a: f64| C64::from_polar(1.0, a);
    Matrix::new(2, 2, vec![C64::new(c, 0.0), -e(lam) * s, e(phi) * s, e(phi + lam) * c])
        .expect("2x2")
}

/// `exp(-i π/4 X⊗X)`, mapping `|00>` to `(|00> - i|11>)/√2`.
pub fn ms_gate() -> Matrix {
    let a = C64::new(FRAC_1_SQRT_2, 0.0);
    let b = C64::new(0.0, -FRAC_1_SQRT_2);
    let z = C64::new(0.0, 0.0);
    #[rustfmt::skip]
    let data = vec![
        a, z, z, b,
        z, a, b, z,
        z, b, a, z,
        b, z, z, a,
    ];
    Matrix::new(4, 4, data).expect("4x4")
}

fn u3_of(p: &[f64]) -> Matrix {
    u3(p[0], p[1], p[2])
}

/// `(U3_out0 ⊗ U3_out1) · MS · (U3_in0 ⊗ U3_in1)`; parameters ordered
/// in-rail-0, in-rail-1, out-rail-0, out-rail-1, three angles each.
pub fn two_qubit_block(params: &[f64]) -> GateResult<Matrix> {
    check_count(GateKind::TwoQubitBlock, params)?;
    let pre = u3_of(&params[0..3]).kron(&u3_of(&params[3..6]));
    let post = u3_of(&params[6..9]).kron(&u3_of(&params[9..12]));
    Ok(post.matmul(&ms_gate()).matmul(&pre))
}

/// `(I ⊗ B2) · (B1 ⊗ I)` with `B1` from the first 12 parameters on rails
/// (0,1) and `B2` from the last 12 on rails (1,2).
pub fn three_qubit_block(params: &[f64]) -> GateResult<Matrix> {
    check_count(GateKind::ThreeQubitBlock, params)?;
    staircase(params, 3)
}

/// `n - 1` two-qubit blocks applied in sequence on rails (0,1), (1,2), …
pub fn staircase(params: &[f64], n_qubits: usize) -> GateResult<Matrix> {
    let expected = 12 * n_qubits.saturating_sub(1);
    if n_qubits < 2 || params.len() != expected {
        return Err(GateError::WrongParamCount {
            kind: GateKind::ThreeQubitBlock,
            expected,
            found: params.len(),
        });
    }
    let mut u = Matrix::identity(1 << n_qubits);
    for (k, chunk) in params.chunks(12).enumerate() {
        let b = two_qubit_block(chunk)?;
        let layer = Matrix::identity(1 << k).kron(&b).kron(&Matrix::identity(1 << (n_qubits - k - 2)));
        u = layer.matmul(&u);
    }
    Ok(u)
}

fn check_count(kind: GateKind, params: &[f64]) -> GateResult<()> {
    let expected = kind.param_count().expect("fixed-size kind");
    if params.len() != expected {
        return Err(GateError::WrongParamCount { kind, expected, found: params.len() });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    U3,
    #[serde(rename = "MS")]
    Ms,
    TwoQubitBlock,
    ThreeQubitBlock,
    CustomUnitary,
}

impl GateKind {
    /// Raw parameter count; `None` for custom unitaries.
    pub fn param_count(self) -> Option<usize> {
        match self {
            GateKind::U3 => Some(3),
            GateKind::Ms => Some(0),
            GateKind::TwoQubitBlock => Some(12),
            GateKind::ThreeQubitBlock => Some(24),
            GateKind::CustomUnitary => None,
        }
    }

    pub fn qubit_count(self) -> Option<usize> {
        match self {
            GateKind::U3 => Some(1),
            GateKind::Ms | GateKind::TwoQubitBlock => Some(2),
            GateKind::ThreeQubitBlock => Some(3),
            GateKind::CustomUnitary => None,
        }
    }
}

/// One gate of a program: what it is, its angles, and the register qubits it
/// acts on (in rail order).
#[derive(Clone, Debug, PartialEq)]
pub struct GateSpec {
    pub kind: GateKind,
    pub params: Vec<f64>,
    pub qubits: Vec<usize>,
    /// Explicit matrix, only for [`GateKind::CustomUnitary`].
    pub matrix: Option<Matrix>,
}

impl GateSpec {
    pub fn new(kind: GateKind, params: Vec<f64>, qubits: Vec<usize>) -> GateResult<Self> {
        let g = Self { kind, params, qubits, matrix: None };
        g.validate()?;
        Ok(g)
    }

    pub fn custom(qubits: Vec<usize>, matrix: Matrix) -> GateResult<Self> {
        let g = Self { kind: GateKind::CustomUnitary, params: Vec::new(), qubits, matrix: Some(matrix) };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> GateResult<()> {
        for (k, q) in self.qubits.iter().enumerate() {
            if self.qubits[..k].contains(q) {
                return Err(GateError::DuplicateQubit(*q));
            }
        }
        match self.kind.param_count() {
            Some(expected) if self.params.len() != expected => {
                return Err(GateError::WrongParamCount { kind: self.kind, expected, found: self.params.len() })
            }
            _ => {}
        }
        let expected_qubits = match (self.kind.qubit_count(), &self.matrix) {
            (Some(n), _) => n,
            (None, Some(m)) => {
                if !m.rows().is_power_of_two() {
                    return Err(GateError::NotPowerOfTwo(m.rows()));
                }
                let r = m.isometry_residual();
                if m.rows() != m.cols() || r > tol::STRUCTURAL {
                    return Err(GateError::NotUnitary(r));
                }
                m.rows().trailing_zeros() as usize
            }
            (None, None) => return Err(GateError::MissingMatrix),
        };
        if self.qubits.len() != expected_qubits {
            return Err(GateError::WrongQubitCount {
                kind: self.kind,
                expected: expected_qubits,
                found: self.qubits.len(),
            });
        }
        Ok(())
    }

    /// Matrix realized by this gate on its own rails.
    pub fn unitary(&self) -> Matrix {
        match self.kind {
            GateKind::U3 => u3_of(&self.params),
            GateKind::Ms => ms_gate(),
            GateKind::TwoQubitBlock => two_qubit_block(&self.params).expect("validated"),
            GateKind::ThreeQubitBlock => three_qubit_block(&self.params).expect("validated"),
            GateKind::CustomUnitary => self.matrix.clone().expect("validated"),
        }
    }
}

fn qubits_of(u: &Matrix) -> GateResult<usize> {
    if u.rows() != u.cols() {
        return Err(GateError::NotUnitary(f64::INFINITY));
    }
    if !u.rows().is_power_of_two() {
        return Err(GateError::NotPowerOfTwo(u.rows()));
    }
    Ok(u.rows().trailing_zeros() as usize)
}

fn check_fixed(fixed_inputs: &[usize], n: usize) -> GateResult<()> {
    for (k, &f) in fixed_inputs.iter().enumerate() {
        if f >= n || fixed_inputs[..k].contains(&f) {
            return Err(GateError::BadFixedInput { input: f, n_qubits: n });
        }
    }
    Ok(())
}

/// Input basis index of the unitary for a free-input index, with every fixed
/// rail held at 0.
fn clamped_column(free_index: usize, free: &[usize], n: usize) -> usize {
    free.iter().enumerate().fold(0, |acc, (k, &rail)| {
        let bit = (free_index >> (free.len() - 1 - k)) & 1;
        acc | (bit << (n - 1 - rail))
    })
}

/// Clamps `fixed_inputs` of `u` to `|0>` and returns the remaining map as a
/// tensor with axes `[free inputs (ascending rail).., outputs (rail order)..]`.
pub fn unitary_to_tensor(u: &Matrix, fixed_inputs: &[usize]) -> GateResult<Tensor> {
    let n = qubits_of(u)?;
    let r = u.isometry_residual();
    if r > tol::STRUCTURAL {
        return Err(GateError::NotUnitary(r));
    }
    check_fixed(fixed_inputs, n)?;
    Ok(clamp(u, fixed_inputs, n))
}

fn clamp(u: &Matrix, fixed_inputs: &[usize], n: usize) -> Tensor {
    let free: Vec<usize> = (0..n).filter(|q| !fixed_inputs.contains(q)).collect();
    let n_free = free.len();
    let shape = vec![2; n_free + n];
    Tensor::from_fn(shape, |idx| {
        let fi = idx[..n_free].iter().fold(0, |acc, &b| (acc << 1) | b);
        let oi = idx[n_free..].iter().fold(0, |acc, &b| (acc << 1) | b);
        u[(oi, clamped_column(fi, &free, n))]
    })
}

/// Views a clamped tensor `[free inputs.., outputs..]` as the matrix
/// `outputs × free inputs`.
pub fn tensor_as_map(t: &Tensor, n_free: usize) -> GateResult<Matrix> {
    let outs: Vec<usize> = (n_free..t.rank()).collect();
    Ok(t.to_matrix(&outs)?)
}

/// Embeds an isometry `v` (rows: `n_qubits` output rails; columns: the free
/// input rails) into a unitary on `n_qubits` rails whose `fixed_inputs`
/// columns at `|0>` reproduce `v`. The remaining columns come from
/// [`complete_isometry`].
pub fn embed_isometry(v: &Matrix, n_qubits: usize, fixed_inputs: &[usize]) -> GateResult<Matrix> {
    check_fixed(fixed_inputs, n_qubits)?;
    let dim = 1usize << n_qubits;
    let free: Vec<usize> = (0..n_qubits).filter(|q| !fixed_inputs.contains(q)).collect();
    if v.rows() != dim || v.cols() != 1 << free.len() {
        return Err(GateError::NotPowerOfTwo(v.rows()));
    }
    let w = complete_isometry(v)?;
    let mut columns: Vec<Option<usize>> = vec![None; dim];
    for j in 0..v.cols() {
        columns[clamped_column(j, &free, n_qubits)] = Some(j);
    }
    let mut extra = v.cols()..dim;
    let order: Vec<usize> = columns.iter().map(|c| c.unwrap_or_else(|| extra.next().expect("count"))).collect();
    Ok(Matrix::from_fn(dim, dim, |i, j| w[(i, order[j])]))
}

/// Result of splitting a row unitary into per-site tensors.
#[derive(Clone, Debug)]
pub struct RowSplit {
    /// Site tensors, axes `[phys, up?, left?, right?]`.
    pub tensors: Vec<Tensor>,
    /// Singular values kept at each of the `n - 1` cuts.
    pub singular_values: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum RowLabel {
    In(usize),
    Out(usize),
    Bond(usize),
}

/// Clamps `fixed_inputs` of an `n`-qubit row unitary to `|0>` and factors the
/// result by successive SVDs into `n` site tensors. Rail `j` is column `j`:
/// its input is that site's up bond and its output the site's physical leg.
/// Internal bonds keep the exact numerical rank of each cut.
pub fn split_final_row(u: &Matrix, fixed_inputs: &[usize]) -> GateResult<RowSplit> {
    let n = qubits_of(u)?;
    let clamped = unitary_to_tensor(u, fixed_inputs)?;
    let free: Vec<usize> = (0..n).filter(|q| !fixed_inputs.contains(q)).collect();
    let mut labels: Vec<RowLabel> =
        free.iter().map(|&q| RowLabel::In(q)).chain((0..n).map(RowLabel::Out)).collect();

    let mut rest = clamped.clone();
    let mut tensors = Vec::with_capacity(n);
    let mut spectra = Vec::with_capacity(n.saturating_sub(1));
    let mut site_labels: Vec<Vec<RowLabel>> = Vec::with_capacity(n);
    for j in 0..n.saturating_sub(1) {
        let left: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, RowLabel::In(q) | RowLabel::Out(q) if *q == j) || **l == RowLabel::Bond(j.wrapping_sub(1)))
            .map(|(k, _)| k)
            .collect();
        let full = usize::MAX;
        let (a, s, b) = svd_split(&rest, &left, full)?;
        let cutoff = s.first().copied().unwrap_or(0.0) * 1e-12;
        let rank = s.iter().filter(|&&x| x > cutoff).count().max(1);
        let (a, s, b) = if rank < s.len() { svd_split(&rest, &left, rank)? } else { (a, s, b) };

        let mut lab: Vec<RowLabel> = left.iter().map(|&k| labels[k]).collect();
        lab.push(RowLabel::Bond(j));
        tensors.push(a);
        site_labels.push(lab);

        // absorb singular values into the remainder
        let k = s.len();
        let per = b.len() / k;
        let scaled: Vec<C64> =
            b.data().iter().enumerate().map(|(i, z)| z * s[i / per]).collect();
        rest = Tensor::new(b.shape().to_vec(), scaled)?;
        labels = std::iter::once(RowLabel::Bond(j))
            .chain(labels.iter().enumerate().filter(|(k, _)| !left.contains(k)).map(|(_, l)| *l))
            .collect();
        spectra.push(s);
    }
    tensors.push(rest);
    site_labels.push(labels);

    // reconstruction check against the clamped map
    let mut acc = tensors[0].clone();
    let mut acc_labels = site_labels[0].clone();
    for (t, lab) in tensors.iter().zip(&site_labels).skip(1) {
        let a_ax = acc_labels.iter().position(|l| lab.contains(l)).expect("shared bond");
        let b_ax = lab.iter().position(|l| *l == acc_labels[a_ax]).expect("shared bond");
        acc = contract(&acc, t, &[(a_ax, b_ax)])?;
        let bond = acc_labels.remove(a_ax);
        acc_labels.extend(lab.iter().filter(|l| **l != bond));
    }
    let target: Vec<RowLabel> =
        free.iter().map(|&q| RowLabel::In(q)).chain((0..n).map(RowLabel::Out)).collect();
    let perm: Vec<usize> =
        target.iter().map(|l| acc_labels.iter().position(|m| m == l).expect("all legs")).collect();
    let err = acc.permute(&perm)?.max_abs_diff(&clamped);
    if err > 1e-9 {
        return Err(GateError::ReconstructionFailed(err));
    }

    // reorder each site to [phys, up?, left?, right?]
    let tensors = tensors
        .into_iter()
        .zip(&site_labels)
        .enumerate()
        .map(|(j, (t, lab))| {
            let want = [
                Some(RowLabel::Out(j)),
                Some(RowLabel::In(j)),
                j.checked_sub(1).map(RowLabel::Bond),
                (j + 1 < n).then_some(RowLabel::Bond(j)),
            ];
            let perm: Vec<usize> =
                want.iter().flatten().filter_map(|w| lab.iter().position(|l| l == w)).collect();
            t.permute(&perm)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RowSplit { tensors, singular_values: spectra })
}
