//! Wen plaquette model on an open-boundary grid, its boundary loop
//! observable, and a dense exact-diagonalization oracle.
//!
//! Sites are labeled 1-based in row-major order, so on a 3×3 grid the top
//! row is 1..3 and site 5 is the center. The plaquette anchored at site `i`
//! uses `x̂` = next column and `ŷ` = previous row:
//!
//! ```text
//!   Y(i+ŷ) ── X(i+x̂+ŷ)
//!     │          │
//!   X(i)   ──  Y(i+x̂)
//! ```
//!
//! With this orientation the boundary loop is exactly the product of the
//! four 3×3 plaquettes (up to a sign), so it commutes with every term of the
//! unperturbed Hamiltonian.

use faer::{Mat, Side};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::pauli::{OperatorSum, Pauli, PauliError, PauliString};
use crate::tensor::Matrix;

/// Largest site count accepted by the dense routines.
pub const MAX_DENSE_SITES: usize = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("grid {rows}x{cols} is too small (need at least {min}x{min})")]
    GridTooSmall { rows: usize, cols: usize, min: usize },

    #[error("boundary loop is only defined on the 3x3 grid, got {rows}x{cols}")]
    UnsupportedGrid { rows: usize, cols: usize },

    #[error("{0} sites exceeds the dense limit of {MAX_DENSE_SITES}")]
    TooManySites(usize),

    #[error("state has {state} qubits but the operator needs {needed}")]
    DimensionMismatch { state: usize, needed: usize },

    #[error("amplitude vector of length {0} is not a power of two")]
    BadLength(usize),

    #[error("eigendecomposition failed to converge")]
    EigenFailed,

    #[error("site permutation {0:?} is not a commuting involutive symmetry of the operator")]
    NotASymmetry(Vec<usize>),

    #[error(transparent)]
    Pauli(#[from] PauliError),
}

pub type LatticeResult<T> = Result<T, LatticeError>;

/// Row-major 1-based site label.
pub fn site(row: usize, col: usize, cols: usize) -> usize {
    row * cols + col + 1
}

/// Pure state over `n_qubits` sites with site 1 as the most significant bit.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<C64>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<C64>) -> LatticeResult<Self> {
        let len = amplitudes.len();
        if !len.is_power_of_two() {
            return Err(LatticeError::BadLength(len));
        }
        Ok(Self { n_qubits: len.trailing_zeros() as usize, amplitudes })
    }

    /// `|0...0>`.
    pub fn zero_state(n_qubits: usize) -> Self {
        let mut amplitudes = vec![C64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = C64::new(1.0, 0.0);
        Self { n_qubits, amplitudes }
    }

    /// `|+...+>`.
    pub fn uniform(n_qubits: usize) -> Self {
        let a = C64::new((1usize << n_qubits) as f64, 0.0).sqrt().inv();
        Self { n_qubits, amplitudes: vec![a; 1 << n_qubits] }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes.iter_mut().for_each(|z| *z /= n);
        }
        self
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }

    /// `<psi| P |psi>` for a single Pauli string (phase included).
    pub fn expectation_string(&self, p: &PauliString) -> LatticeResult<C64> {
        if p.max_site() > self.n_qubits {
            return Err(LatticeError::DimensionMismatch { state: self.n_qubits, needed: p.max_site() });
        }
        Ok(self.string_expectation_unchecked(p))
    }

    fn string_expectation_unchecked(&self, p: &PauliString) -> C64 {
        let (flip, sign, ny) = p.masks(self.n_qubits);
        let psi = &self.amplitudes;
        let mut acc = C64::new(0.0, 0.0);
        for (b, amp) in psi.iter().enumerate() {
            let term = psi[b ^ flip].conj() * amp;
            if (b & sign).count_ones() % 2 == 0 {
                acc += term;
            } else {
                acc -= term;
            }
        }
        acc * p.action_scalar(ny)
    }

    /// `<psi| H |psi>` for a weighted Pauli sum.
    pub fn expectation(&self, op: &OperatorSum) -> LatticeResult<C64> {
        if op.max_site() > self.n_qubits {
            return Err(LatticeError::DimensionMismatch { state: self.n_qubits, needed: op.max_site() });
        }
        Ok(op.terms().iter().map(|(c, s)| self.string_expectation_unchecked(s) * *c).sum())
    }
}

/// Either kind of operator accepted by [`expectation`].
pub enum Observable<'a> {
    Sum(&'a OperatorSum),
    String(&'a PauliString),
}

impl<'a> From<&'a OperatorSum> for Observable<'a> {
    fn from(op: &'a OperatorSum) -> Self {
        Observable::Sum(op)
    }
}

impl<'a> From<&'a PauliString> for Observable<'a> {
    fn from(p: &'a PauliString) -> Self {
        Observable::String(p)
    }
}

pub fn expectation<'a>(state: &StateVector, op: impl Into<Observable<'a>>) -> LatticeResult<C64> {
    match op.into() {
        Observable::Sum(s) => state.expectation(s),
        Observable::String(p) => state.expectation_string(p),
    }
}

/// Unperturbed Wen plaquette Hamiltonian `H0 = -sum_i X_i Y_{i+x} X_{i+x+y} Y_{i+y}`
/// with one term per plaquette of the grid.
pub fn wen_hamiltonian(rows: usize, cols: usize) -> LatticeResult<OperatorSum> {
    if rows < 2 || cols < 2 {
        return Err(LatticeError::GridTooSmall { rows, cols, min: 2 });
    }
    let mut h = OperatorSum::new();
    for r in 1..rows {
        for c in 0..cols - 1 {
            let anchor = site(r, c, cols);
            let right = site(r, c + 1, cols);
            let diag = site(r - 1, c + 1, cols);
            let up = site(r - 1, c, cols);
            let term =
                PauliString::from_ops([(anchor, Pauli::X), (right, Pauli::Y), (diag, Pauli::X), (up, Pauli::Y)])?;
            h.add(-1.0, term)?;
        }
    }
    Ok(h)
}

/// Uniform field along (1,1,1): `-g sum_i (X_i + Y_i + Z_i)`. Empty when `g == 0`.
pub fn magnetic_term(rows: usize, cols: usize, g: f64) -> LatticeResult<OperatorSum> {
    if rows < 1 || cols < 1 {
        return Err(LatticeError::GridTooSmall { rows, cols, min: 1 });
    }
    let mut h = OperatorSum::new();
    for s in 1..=rows * cols {
        for p in [Pauli::X, Pauli::Y, Pauli::Z] {
            h.add(-g, PauliString::single(s, p)?)?;
        }
    }
    Ok(h)
}

/// `H(g) = H0 + H_mag(g)`.
pub fn wen_model(rows: usize, cols: usize, g: f64) -> LatticeResult<OperatorSum> {
    Ok(wen_hamiltonian(rows, cols)? + magnetic_term(rows, cols, g)?)
}

/// Closed loop `Y1 Z2 X3 Z4 Y9 Z8 X7 Z6` around the boundary of the 3×3 grid.
pub fn boundary_loop(rows: usize, cols: usize) -> LatticeResult<PauliString> {
    if (rows, cols) != (3, 3) {
        return Err(LatticeError::UnsupportedGrid { rows, cols });
    }
    use Pauli::*;
    Ok(PauliString::from_ops([
        (1, Y),
        (2, Z),
        (3, X),
        (4, Z),
        (9, Y),
        (8, Z),
        (7, X),
        (6, Z),
    ])?)
}

/// Dense `2^n × 2^n` matrix of `op`, site 1 most significant.
pub fn to_dense(op: &OperatorSum, n_sites: usize) -> LatticeResult<Matrix> {
    if n_sites > MAX_DENSE_SITES {
        return Err(LatticeError::TooManySites(n_sites));
    }
    op.check_sites(n_sites)?;
    let dim = 1usize << n_sites;
    let mut m = Matrix::zeros(dim, dim);
    for (c, s) in op.terms() {
        let (flip, sign, ny) = s.masks(n_sites);
        let scalar = s.action_scalar(ny) * *c;
        for b in 0..dim {
            let v = if (b & sign).count_ones() % 2 == 0 { scalar } else { -scalar };
            m[(b ^ flip, b)] += v;
        }
    }
    Ok(m)
}

/// Lowest eigenvalue of `op` and one unit-norm eigenvector, by dense
/// diagonalization. With a degenerate ground space any ground vector may be
/// returned.
pub fn exact_ground(op: &OperatorSum, n_sites: usize) -> LatticeResult<(f64, StateVector)> {
    let m = to_dense(op, n_sites)?;
    let evd = m.to_faer().self_adjoint_eigen(Side::Lower).map_err(|_| LatticeError::EigenFailed)?;
    let energy = evd.S().column_vector()[0].re;
    let u = evd.U();
    let amps: Vec<C64> = (0..m.rows()).map(|i| u[(i, 0)]).collect();
    Ok((energy, StateVector::new(amps)?.normalized()))
}

/// All eigenvalues of `op` in ascending order.
pub fn spectrum(op: &OperatorSum, n_sites: usize) -> LatticeResult<Vec<f64>> {
    let m = to_dense(op, n_sites)?;
    m.to_faer()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| LatticeError::EigenFailed)
}

/// Relabel the sites of `op`: site `s` becomes `perm[s - 1]`.
fn permuted(op: &OperatorSum, perm: &[usize]) -> LatticeResult<OperatorSum> {
    let mut out = OperatorSum::new();
    for (c, s) in op.terms() {
        let ops = s.ops().iter().map(|(&site, &p)| (perm[site - 1], p));
        out.add(*c, PauliString::new(s.phase(), ops)?)?;
    }
    Ok(out)
}

/// True when `perm` (1-based images, `perm[s - 1]` for site `s`) is a
/// bijection of `1..=n_sites` mapping `op` onto itself.
pub fn is_site_symmetry(op: &OperatorSum, n_sites: usize, perm: &[usize]) -> bool {
    let mut seen = vec![false; n_sites];
    for &t in perm {
        if t == 0 || t > n_sites || std::mem::replace(&mut seen[t - 1], true) {
            return false;
        }
    }
    if perm.len() != n_sites || op.check_sites(n_sites).is_err() {
        return false;
    }
    let Ok(image) = permuted(op, perm) else { return false };
    image.len() == op.len()
        && image.terms().iter().all(|(c, s)| {
            op.terms().iter().any(|(c2, s2)| s2 == s && (c - c2).abs() <= 1e-12 * c.abs().max(1.0))
        })
}

/// Basis-state index after moving the bit of every site `s` to `perm[s - 1]`.
fn permute_bits(b: usize, perm: &[usize], n: usize) -> usize {
    perm.iter().enumerate().fold(0, |acc, (s, &t)| acc | (((b >> (n - 1 - s)) & 1) << (n - t)))
}

/// [`exact_ground`] resolved by symmetry: `generators` are pairwise
/// commuting involutive site permutations of `op`. Each character sector is
/// diagonalized densely and the lowest sector wins, which is exact and
/// several times cheaper than one full-size diagonalization.
pub fn exact_ground_symmetric(
    op: &OperatorSum,
    n_sites: usize,
    generators: &[Vec<usize>],
) -> LatticeResult<(f64, StateVector)> {
    if n_sites > MAX_DENSE_SITES {
        return Err(LatticeError::TooManySites(n_sites));
    }
    op.check_sites(n_sites)?;
    let compose = |a: &[usize], b: &[usize]| -> Vec<usize> { b.iter().map(|&t| a[t - 1]).collect() };
    let identity: Vec<usize> = (1..=n_sites).collect();
    for (k, g) in generators.iter().enumerate() {
        let ok = is_site_symmetry(op, n_sites, g)
            && compose(g, g) == identity
            && generators[..k].iter().all(|h| compose(g, h) == compose(h, g));
        if !ok {
            return Err(LatticeError::NotASymmetry(g.clone()));
        }
    }
    // group elements as (bit permutation table, generator mask)
    let dim = 1usize << n_sites;
    let group: Vec<(Vec<usize>, usize)> = (0..1usize << generators.len())
        .map(|mask| {
            let perm = generators
                .iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .fold(identity.clone(), |acc, (_, g)| compose(g, &acc));
            ((0..dim).map(|b| permute_bits(b, &perm, n_sites)).collect(), mask)
        })
        .collect();
    let terms: Vec<(usize, usize, C64)> = op
        .terms()
        .iter()
        .map(|(c, s)| {
            let (flip, sign, ny) = s.masks(n_sites);
            (flip, sign, s.action_scalar(ny) * *c)
        })
        .collect();

    let mut best: Option<(f64, Vec<C64>)> = None;
    for sector in 0..1usize << generators.len() {
        // symmetrized orbit vectors, each stored sparsely with real amplitudes
        let mut owner: Vec<Option<(usize, f64)>> = vec![None; dim];
        let mut basis: Vec<Vec<(usize, f64)>> = Vec::new();
        for b in 0..dim {
            if owner[b].is_some() {
                continue;
            }
            let mut amp = std::collections::BTreeMap::new();
            for (table, mask) in &group {
                let chi = if (mask & sector).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                *amp.entry(table[b]).or_insert(0.0) += chi;
            }
            let norm = amp.values().map(|a: &f64| a * a).sum::<f64>().sqrt();
            if norm < 0.5 {
                // character does not survive on this orbit; mark it done
                for &k in amp.keys() {
                    owner[k] = Some((usize::MAX, 0.0));
                }
                continue;
            }
            let v: Vec<(usize, f64)> = amp.into_iter().map(|(k, a)| (k, a / norm)).collect();
            for &(k, a) in &v {
                owner[k] = Some((basis.len(), a));
            }
            basis.push(v);
        }
        if basis.is_empty() {
            continue;
        }
        let n = basis.len();
        let mut m = Mat::<C64>::zeros(n, n);
        for (j, v) in basis.iter().enumerate() {
            for &(b, a) in v {
                for &(flip, sign, c) in &terms {
                    let x = if (b & sign).count_ones() % 2 == 0 { c * a } else { -c * a };
                    if let Some((i, ai)) = owner[b ^ flip] {
                        if i != usize::MAX {
                            m[(i, j)] += x * ai;
                        }
                    }
                }
            }
        }
        let evd = m.self_adjoint_eigen(Side::Lower).map_err(|_| LatticeError::EigenFailed)?;
        let e = evd.S().column_vector()[0].re;
        if best.as_ref().is_none_or(|(e0, _)| e < *e0) {
            let u = evd.U();
            let mut psi = vec![C64::new(0.0, 0.0); dim];
            for (i, v) in basis.iter().enumerate() {
                for &(b, a) in v {
                    psi[b] += u[(i, 0)] * a;
                }
            }
            best = Some((e, psi));
        }
    }
    let (e, psi) = best.expect("sectors cover the whole space");
    Ok((e, StateVector::new(psi)?.normalized()))
}

/// Site permutations that leave the Wen model with a uniform field
/// invariant: the 180° rotation of the grid, or on square grids the two
/// diagonal reflections (whose product is that rotation).
pub fn grid_symmetries(rows: usize, cols: usize) -> Vec<Vec<usize>> {
    let image = |f: &dyn Fn(usize, usize) -> (usize, usize)| -> Vec<usize> {
        (0..rows * cols)
            .map(|k| {
                let (r, c) = f(k / cols, k % cols);
                site(r, c, cols)
            })
            .collect()
    };
    if rows == cols {
        vec![image(&|r, c| (c, r)), image(&|r, c| (cols - 1 - c, rows - 1 - r))]
    } else {
        vec![image(&|r, c| (rows - 1 - r, cols - 1 - c))]
    }
}

/// Ground energy and state of `wen_model(rows, cols, g)`, symmetry resolved.
pub fn wen_ground(rows: usize, cols: usize, g: f64) -> LatticeResult<(f64, StateVector)> {
    exact_ground_symmetric(&wen_model(rows, cols, g)?, rows * cols, &grid_symmetries(rows, cols))
}

/// Ground energy and `|<O>|` of the loop observable for the 3×3 model.
pub fn exact_loop_value(g: f64) -> LatticeResult<(f64, f64)> {
    let (e, psi) = wen_ground(3, 3, g)?;
    let o = psi.expectation_string(&boundary_loop(3, 3)?)?;
    Ok((e, o.norm()))
}
