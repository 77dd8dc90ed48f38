//! Pauli strings and real-weighted sums of them.
//!
//! Multiplication is symbolic: phases stay in {±1, ±i} exactly, so
//! commutation checks never touch a dense matrix.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PauliError {
    #[error("site index {site} is outside [1, {n_sites}]")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("site labels are 1-based; got 0")]
    ZeroSite,

    #[error("phase magnitude must be 0 or 1, got {0}")]
    BadPhase(f64),

    #[error("non-finite coefficient")]
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    /// `(product, k)` with `self * other = i^k * product`.
    pub fn mul(self, other: Pauli) -> (Pauli, u8) {
        use Pauli::*;
        match (self, other) {
            (I, p) | (p, I) => (p, 0),
            (a, b) if a == b => (I, 0),
            (X, Y) => (Z, 1),
            (Y, Z) => (X, 1),
            (Z, X) => (Y, 1),
            (Y, X) => (Z, 3),
            (Z, Y) => (X, 3),
            (X, Z) => (Y, 3),
            _ => unreachable!(),
        }
    }

    pub fn anticommutes(self, other: Pauli) -> bool {
        self != Pauli::I && other != Pauli::I && self != other
    }

    pub fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    pub fn from_symbol(c: char) -> Option<Pauli> {
        match c.to_ascii_uppercase() {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

const PHASES: [C64; 4] =
    [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, -1.0)];

/// Tensor product of single-site Paulis with a scalar phase. Sites are
/// 1-based; absent sites carry the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliString {
    phase: C64,
    ops: BTreeMap<usize, Pauli>,
}

impl PauliString {
    pub fn identity() -> Self {
        Self { phase: C64::new(1.0, 0.0), ops: BTreeMap::new() }
    }

    pub fn new(
        phase: C64,
        ops: impl IntoIterator<Item = (usize, Pauli)>,
    ) -> Result<Self, PauliError> {
        let mag = phase.norm();
        if !(mag.abs() < 1e-12 || (mag - 1.0).abs() < 1e-12) {
            return Err(PauliError::BadPhase(mag));
        }
        let mut out = Self { phase, ops: BTreeMap::new() };
        for (site, p) in ops {
            if site == 0 {
                return Err(PauliError::ZeroSite);
            }
            // repeated sites multiply in order
            let cur = out.ops.remove(&site).unwrap_or(Pauli::I);
            let (prod, k) = cur.mul(p);
            out.phase *= PHASES[k as usize];
            if prod != Pauli::I {
                out.ops.insert(site, prod);
            }
        }
        Ok(out)
    }

    pub fn from_ops(ops: impl IntoIterator<Item = (usize, Pauli)>) -> Result<Self, PauliError> {
        Self::new(C64::new(1.0, 0.0), ops)
    }

    pub fn single(site: usize, p: Pauli) -> Result<Self, PauliError> {
        Self::from_ops([(site, p)])
    }

    /// Parses strings like `"Y1 Z2 X3"`; an empty string is the identity.
    pub fn parse(text: &str) -> Option<Self> {
        let mut ops = Vec::new();
        for tok in text.split_whitespace() {
            let mut chars = tok.chars();
            let p = Pauli::from_symbol(chars.next()?)?;
            let site: usize = chars.as_str().parse().ok()?;
            ops.push((site, p));
        }
        Self::from_ops(ops).ok()
    }

    pub fn phase(&self) -> C64 {
        self.phase
    }

    pub fn ops(&self) -> &BTreeMap<usize, Pauli> {
        &self.ops
    }

    pub fn get(&self, site: usize) -> Pauli {
        self.ops.get(&site).copied().unwrap_or(Pauli::I)
    }

    pub fn weight(&self) -> usize {
        self.ops.len()
    }

    pub fn max_site(&self) -> usize {
        self.ops.keys().next_back().copied().unwrap_or(0)
    }

    pub fn check_sites(&self, n_sites: usize) -> Result<(), PauliError> {
        match self.ops.keys().find(|&&s| s > n_sites) {
            Some(&site) => Err(PauliError::SiteOutOfRange { site, n_sites }),
            None => Ok(()),
        }
    }

    pub fn with_phase(&self, phase: C64) -> Self {
        Self { phase, ops: self.ops.clone() }
    }

    pub fn mul(&self, other: &PauliString) -> PauliString {
        let mut out = Self { phase: self.phase * other.phase, ops: self.ops.clone() };
        for (&site, &p) in &other.ops {
            let cur = out.ops.remove(&site).unwrap_or(Pauli::I);
            let (prod, k) = cur.mul(p);
            out.phase *= PHASES[k as usize];
            if prod != Pauli::I {
                out.ops.insert(site, prod);
            }
        }
        out
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let anti = self
            .ops
            .iter()
            .filter(|(s, p)| other.get(**s).anticommutes(**p))
            .count();
        anti % 2 == 0
    }

    /// Bit masks for the action on an `n_sites`-qubit register where site 1
    /// is the most significant bit: `(flip, sign, y_count)` such that
    /// `P|b> = phase * i^y_count * (-1)^{popcount(b & sign)} |b ^ flip>`.
    pub fn masks(&self, n_sites: usize) -> (usize, usize, u32) {
        let (mut flip, mut sign, mut ny) = (0usize, 0usize, 0u32);
        for (&site, &p) in &self.ops {
            let bit = 1usize << (n_sites - site);
            match p {
                Pauli::X => flip |= bit,
                Pauli::Y => {
                    flip |= bit;
                    sign |= bit;
                    ny += 1;
                }
                Pauli::Z => sign |= bit,
                Pauli::I => {}
            }
        }
        (flip, sign, ny)
    }

    /// Overall scalar `phase * i^y_count` from [`PauliString::masks`].
    pub(crate) fn action_scalar(&self, ny: u32) -> C64 {
        self.phase * PHASES[(ny % 4) as usize]
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.phase;
        let prefix = if p == PHASES[0] {
            ""
        } else if p == PHASES[1] {
            "i "
        } else if p == PHASES[2] {
            "- "
        } else if p == PHASES[3] {
            "-i "
        } else {
            return write!(f, "({p}) {}", OpsDisplay(&self.ops));
        };
        write!(f, "{prefix}{}", OpsDisplay(&self.ops))
    }
}

struct OpsDisplay<'a>(&'a BTreeMap<usize, Pauli>);

impl fmt::Display for OpsDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "I");
        }
        let parts: Vec<String> = self.0.iter().map(|(s, p)| format!("{p}{s}")).collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Real-weighted sum of Pauli strings with duplicates merged.
///
/// Real phases (±1) are folded into the coefficient on insertion, so two
/// strings with the same operators always merge. Terms whose coefficient
/// becomes zero are dropped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OperatorSum {
    terms: Vec<(f64, PauliString)>,
}

impl OperatorSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms(
        terms: impl IntoIterator<Item = (f64, PauliString)>,
    ) -> Result<Self, PauliError> {
        let mut out = Self::new();
        for (c, p) in terms {
            out.add(c, p)?;
        }
        Ok(out)
    }

    pub fn add(&mut self, coeff: f64, string: PauliString) -> Result<(), PauliError> {
        if !coeff.is_finite() {
            return Err(PauliError::NonFinite);
        }
        let (coeff, string) = if string.phase == PHASES[2] {
            (-coeff, string.with_phase(PHASES[0]))
        } else {
            (coeff, string)
        };
        if coeff == 0.0 || string.phase == C64::new(0.0, 0.0) {
            return Ok(());
        }
        match self.terms.iter().position(|(_, s)| *s == string) {
            Some(k) => {
                self.terms[k].0 += coeff;
                if self.terms[k].0 == 0.0 {
                    self.terms.remove(k);
                }
            }
            None => self.terms.push((coeff, string)),
        }
        Ok(())
    }

    pub fn extend(&mut self, other: &OperatorSum) {
        for (c, s) in &other.terms {
            // already validated
            self.add(*c, s.clone()).expect("validated term");
        }
    }

    pub fn terms(&self) -> &[(f64, PauliString)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_site(&self) -> usize {
        self.terms.iter().map(|(_, s)| s.max_site()).max().unwrap_or(0)
    }

    pub fn check_sites(&self, n_sites: usize) -> Result<(), PauliError> {
        self.terms.iter().try_for_each(|(_, s)| s.check_sites(n_sites))
    }
}

impl std::ops::Add for OperatorSum {
    type Output = OperatorSum;

    fn add(mut self, rhs: OperatorSum) -> OperatorSum {
        self.extend(&rhs);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Pauli::*;

    #[test]
    fn single_site_products() {
        assert_eq!(X.mul(Y), (Z, 1));
        assert_eq!(Y.mul(X), (Z, 3));
        assert_eq!(Y.mul(Y), (I, 0));
        assert_eq!(Z.mul(X), (Y, 1));
    }

    #[test]
    fn string_product_tracks_phase() {
        let a = PauliString::from_ops([(1, X), (2, Z)]).unwrap();
        let b = PauliString::from_ops([(1, Y), (2, Z), (3, X)]).unwrap();
        let ab = a.mul(&b);
        assert_eq!(ab.phase(), C64::new(0.0, 1.0));
        assert_eq!(ab.get(1), Z);
        assert_eq!(ab.get(2), I);
        assert_eq!(ab.get(3), X);
        assert!(!a.commutes_with(&b));
        let ba = b.mul(&a);
        assert_eq!(ba.phase(), -ab.phase());
    }

    #[test]
    fn construction_errors() {
        assert_eq!(PauliString::single(0, X).unwrap_err(), PauliError::ZeroSite);
        assert!(matches!(
            PauliString::new(C64::new(0.5, 0.0), [(1, X)]),
            Err(PauliError::BadPhase(_))
        ));
        let s = PauliString::single(10, Z).unwrap();
        assert_eq!(s.check_sites(9), Err(PauliError::SiteOutOfRange { site: 10, n_sites: 9 }));
    }

    #[test]
    fn parse_and_display() {
        let s = PauliString::parse("Y1 Z2 X3").unwrap();
        assert_eq!(s.to_string(), "Y1 Z2 X3");
        assert_eq!(PauliString::parse("").unwrap(), PauliString::identity());
        assert!(PauliString::parse("Q1").is_none());
    }

    #[test]
    fn sums_merge_duplicates_and_drop_zeros() {
        let x1 = PauliString::single(1, X).unwrap();
        let mut h = OperatorSum::new();
        h.add(0.5, x1.clone()).unwrap();
        h.add(0.25, x1.clone()).unwrap();
        h.add(1.0, x1.with_phase(C64::new(-1.0, 0.0))).unwrap();
        assert_eq!(h.len(), 1);
        assert!((h.terms()[0].0 + 0.25).abs() < 1e-15);
        h.add(0.25, x1).unwrap();
        assert!(h.is_empty());
        assert!(h.add(f64::NAN, PauliString::identity()).is_err());
    }
}
