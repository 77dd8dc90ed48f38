//! PEPS networks on an open rectangular grid and their exact contraction.
//!
//! Each site tensor carries its physical axis first, followed by whichever
//! bond axes exist at that position, in the fixed order up, left, right,
//! down. Boundary sites simply omit the missing bonds.

use num_complex::Complex64 as C64;
use rand::Rng;
use thiserror::Error;

use crate::lattice::{site, StateVector, MAX_DENSE_SITES};
use crate::tensor::{contract, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PepsError {
    #[error("expected {expected} site tensors, got {found}")]
    WrongTensorCount { expected: usize, found: usize },

    #[error("site {site}: expected rank {expected}, got {found}")]
    WrongRank { site: usize, expected: usize, found: usize },

    #[error("site {site}: physical dimension must be 2, got {found}")]
    PhysicalDimension { site: usize, found: usize },

    #[error("bond between sites {a} and {b} has mismatched dimensions {da} vs {db}")]
    BondMismatch { a: usize, b: usize, da: usize, db: usize },

    #[error("{0} sites exceeds the dense contraction limit of {MAX_DENSE_SITES}")]
    TooManySites(usize),

    #[error("empty grid")]
    EmptyGrid,

    #[error("contraction order must visit every site exactly once")]
    BadOrder,

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type PepsResult<T> = Result<T, PepsError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Leg {
    Phys,
    Up,
    Left,
    Right,
    Down,
}

/// Axis layout of the tensor at `(row, col)` on a `rows × cols` grid.
pub fn legs(rows: usize, cols: usize, row: usize, col: usize) -> Vec<Leg> {
    let mut out = vec![Leg::Phys];
    if row > 0 {
        out.push(Leg::Up);
    }
    if col > 0 {
        out.push(Leg::Left);
    }
    if col + 1 < cols {
        out.push(Leg::Right);
    }
    if row + 1 < rows {
        out.push(Leg::Down);
    }
    out
}

/// Contraction label of an axis: a physical site or a grid edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum Label {
    Phys(usize),
    /// Edge between `(r, c)` and `(r, c + 1)`.
    H(usize, usize),
    /// Edge between `(r, c)` and `(r + 1, c)`.
    V(usize, usize),
}

fn leg_label(leg: Leg, row: usize, col: usize, cols: usize) -> Label {
    match leg {
        Leg::Phys => Label::Phys(site(row, col, cols)),
        Leg::Up => Label::V(row - 1, col),
        Leg::Down => Label::V(row, col),
        Leg::Left => Label::H(row, col - 1),
        Leg::Right => Label::H(row, col),
    }
}

/// Tensor whose axes carry contraction labels.
#[derive(Clone, Debug)]
pub(crate) struct Labeled {
    pub tensor: Tensor,
    pub labels: Vec<Label>,
}

impl Labeled {
    /// Contracts every label shared by `self` and `other`.
    pub fn contract(&self, other: &Labeled) -> Result<Labeled, TensorError> {
        let pairs: Vec<(usize, usize)> = self
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| other.labels.iter().position(|m| m == l).map(|j| (i, j)))
            .collect();
        let tensor = contract(&self.tensor, &other.tensor, &pairs)?;
        let labels = self
            .labels
            .iter()
            .filter(|l| !other.labels.contains(l))
            .chain(other.labels.iter().filter(|l| !self.labels.contains(l)))
            .copied()
            .collect();
        Ok(Labeled { tensor, labels })
    }
}

/// `rows × cols` grid of site tensors, physical dimension 2.
#[derive(Clone, Debug, PartialEq)]
pub struct PepsNetwork {
    rows: usize,
    cols: usize,
    tensors: Vec<Tensor>,
}

impl PepsNetwork {
    /// Validates and wraps row-major site tensors.
    pub fn new(rows: usize, cols: usize, tensors: Vec<Tensor>) -> PepsResult<Self> {
        if rows == 0 || cols == 0 {
            return Err(PepsError::EmptyGrid);
        }
        if tensors.len() != rows * cols {
            return Err(PepsError::WrongTensorCount { expected: rows * cols, found: tensors.len() });
        }
        let net = Self { rows, cols, tensors };
        for r in 0..rows {
            for c in 0..cols {
                let s = site(r, c, cols);
                let t = net.tensor(r, c);
                let expected = legs(rows, cols, r, c).len();
                if t.rank() != expected {
                    return Err(PepsError::WrongRank { site: s, expected, found: t.rank() });
                }
                if t.shape()[0] != 2 {
                    return Err(PepsError::PhysicalDimension { site: s, found: t.shape()[0] });
                }
                if c + 1 < cols {
                    let (da, db) = (net.dim(r, c, Leg::Right), net.dim(r, c + 1, Leg::Left));
                    if da != db {
                        return Err(PepsError::BondMismatch { a: s, b: s + 1, da, db });
                    }
                }
                if r + 1 < rows {
                    let (da, db) = (net.dim(r, c, Leg::Down), net.dim(r + 1, c, Leg::Up));
                    if da != db {
                        return Err(PepsError::BondMismatch { a: s, b: s + cols, da, db });
                    }
                }
            }
        }
        Ok(net)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_sites(&self) -> usize {
        self.rows * self.cols
    }

    pub fn tensor(&self, row: usize, col: usize) -> &Tensor {
        &self.tensors[row * self.cols + col]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    pub fn legs(&self, row: usize, col: usize) -> Vec<Leg> {
        legs(self.rows, self.cols, row, col)
    }

    /// Dimension of `leg` at `(row, col)`; 1 for an absent boundary leg.
    pub fn dim(&self, row: usize, col: usize, leg: Leg) -> usize {
        match self.legs(row, col).iter().position(|&l| l == leg) {
            Some(ax) => self.tensor(row, col).shape()[ax],
            None => 1,
        }
    }

    /// Largest bond dimension in the network (1 if there are no bonds).
    pub fn chi(&self) -> usize {
        let mut chi = 1;
        for r in 0..self.rows {
            for c in 0..self.cols {
                chi = chi.max(self.dim(r, c, Leg::Right)).max(self.dim(r, c, Leg::Down));
            }
        }
        chi
    }

    /// Site tensor with all five legs present in the order
    /// `[phys, up, left, right, down]`, absent legs as dimension-1 axes.
    pub fn padded(&self, row: usize, col: usize) -> Tensor {
        let t = self.tensor(row, col);
        let shape: Vec<usize> = [Leg::Phys, Leg::Up, Leg::Left, Leg::Right, Leg::Down]
            .iter()
            .map(|&l| self.dim(row, col, l))
            .collect();
        t.clone().reshape(shape).expect("padding only inserts unit axes")
    }

    pub(crate) fn labeled(&self, row: usize, col: usize) -> Labeled {
        Labeled {
            tensor: self.tensor(row, col).clone(),
            labels: self.legs(row, col).iter().map(|&l| leg_label(l, row, col, self.cols)).collect(),
        }
    }

    pub fn scale_site(&mut self, row: usize, col: usize, c: C64) {
        let k = row * self.cols + col;
        self.tensors[k] = self.tensors[k].scale(c);
    }

    /// Random complex network with every bond of dimension `chi`.
    pub fn random(rows: usize, cols: usize, chi: usize, rng: &mut impl Rng) -> Self {
        let mut tensors = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let shape: Vec<usize> =
                    legs(rows, cols, r, c).iter().map(|&l| if l == Leg::Phys { 2 } else { chi }).collect();
                tensors.push(Tensor::from_fn(shape, |_| {
                    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                }));
            }
        }
        Self::new(rows, cols, tensors).expect("consistent by construction")
    }
}

/// Contracts the whole network into unnormalized amplitudes, site 1 most
/// significant, sweeping sites in row-major order.
pub fn contract_all(p: &PepsNetwork) -> PepsResult<StateVector> {
    let order: Vec<usize> = (1..=p.n_sites()).collect();
    contract_in_order(p, &order)
}

/// Same as [`contract_all`] with an explicit site visiting order.
pub fn contract_in_order(p: &PepsNetwork, order: &[usize]) -> PepsResult<StateVector> {
    let n = p.n_sites();
    if n > MAX_DENSE_SITES {
        return Err(PepsError::TooManySites(n));
    }
    let mut seen = vec![false; n + 1];
    if order.len() != n || order.iter().any(|&s| s == 0 || s > n || std::mem::replace(&mut seen[s], true)) {
        return Err(PepsError::BadOrder);
    }
    let at = |s: usize| p.labeled((s - 1) / p.cols, (s - 1) % p.cols);
    let mut acc = at(order[0]);
    for &s in &order[1..] {
        acc = acc.contract(&at(s))?;
    }
    let perm: Vec<usize> = (1..=n)
        .map(|s| acc.labels.iter().position(|&l| l == Label::Phys(s)).expect("all bonds contracted"))
        .collect();
    let amps = acc.tensor.permute(&perm)?.into_data();
    Ok(StateVector::new(amps).expect("2^n amplitudes"))
}

/// ℓ2 norm of the contracted state.
pub fn norm(p: &PepsNetwork) -> PepsResult<f64> {
    Ok(contract_all(p)?.norm())
}
