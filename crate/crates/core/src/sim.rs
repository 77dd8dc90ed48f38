//! State-vector execution of gate programs with mid-circuit measurement.
//!
//! Two modes: exact evaluation of a Pauli-string observable by enumerating
//! every measurement branch, and shot sampling with one outcome record per
//! shot. Sampling can add uncalibrated single-qubit depolarizing noise after
//! each gate.
//!
//! Each site is measured in the basis of the observable's Pauli on that site
//! (Z for identity sites). The product of a shot runs over the non-identity
//! sites only. The observable's phase is ignored.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::io::Write;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::compiler::{Event, GateProgram, ProgramError};
use crate::pauli::{Pauli, PauliString};
use crate::tensor::Matrix;

/// Branch-enumeration guard on the number of measurements.
pub const MAX_EXACT_MEASUREMENTS: usize = 20;

/// Branches below this probability are dropped by [`exact_observable`].
pub const BRANCH_CUTOFF: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("malformed program: {0}")]
    Program(#[from] ProgramError),

    #[error("no measurement basis given for site {0}")]
    MissingBasis(usize),

    #[error("observable acts on site {site}, but the program measures only {measured} sites")]
    SiteNotMeasured { site: usize, measured: usize },

    #[error("exact evaluation supports at most {limit} measurements, program has {found}")]
    TooManyMeasurements { found: usize, limit: usize },

    #[error("exact evaluation is unsupported for noisy programs (p = {0})")]
    UnsupportedMode(f64),

    #[error("noise probability {0} is outside [0, 1]")]
    BadProbability(f64),

    #[error("at least one shot is required")]
    NoShots,

    #[error("shot log: {0}")]
    Csv(#[from] csv::Error),
}

pub type SimResult<T> = Result<T, SimError>;

/// Pure register state, qubit 0 most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct RegisterState {
    n_qubits: usize,
    amplitudes: Vec<C64>,
}

impl RegisterState {
    /// `|0…0>` on `n_qubits` qubits.
    pub fn new(n_qubits: usize) -> Self {
        let mut amplitudes = vec![C64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = C64::new(1.0, 0.0);
        Self { n_qubits, amplitudes }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    fn bit(&self, q: usize) -> usize {
        1 << (self.n_qubits - 1 - q)
    }

    /// Applies `u` with `qubits[0]` as the most significant rail.
    pub fn apply(&mut self, u: &Matrix, qubits: &[usize]) {
        let k = qubits.len();
        let dim = 1 << k;
        debug_assert_eq!(u.rows(), dim);
        let offsets: Vec<usize> = (0..dim)
            .map(|l| (0..k).filter(|&i| (l >> (k - 1 - i)) & 1 == 1).map(|i| self.bit(qubits[i])).sum())
            .collect();
        let mask: usize = qubits.iter().map(|&q| self.bit(q)).sum();
        let mut local = vec![C64::new(0.0, 0.0); dim];
        for base in (0..self.amplitudes.len()).filter(|b| b & mask == 0) {
            for (l, &o) in offsets.iter().enumerate() {
                local[l] = self.amplitudes[base + o];
            }
            for (i, &o) in offsets.iter().enumerate() {
                self.amplitudes[base + o] = (0..dim).map(|j| u[(i, j)] * local[j]).sum();
            }
        }
    }

    /// Probability of reading `1` on qubit `q` in the computational basis.
    pub fn prob_one(&self, q: usize) -> f64 {
        let b = self.bit(q);
        self.amplitudes.iter().enumerate().filter(|(i, _)| i & b != 0).map(|(_, a)| a.norm_sqr()).sum()
    }

    /// Projects qubit `q` onto `outcome` (0 or 1) given that outcome's
    /// probability, and renormalizes.
    pub fn project(&mut self, q: usize, outcome: usize, prob: f64) {
        let b = self.bit(q);
        let scale = 1.0 / prob.sqrt();
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            if ((i & b != 0) as usize) == outcome {
                *a *= scale;
            } else {
                *a = C64::new(0.0, 0.0);
            }
        }
    }

    /// Returns a qubit known to hold `outcome` to `|0>`.
    pub fn reset(&mut self, q: usize, outcome: usize) {
        if outcome == 1 {
            let b = self.bit(q);
            for i in (0..self.amplitudes.len()).filter(|i| i & b == 0) {
                self.amplitudes[i] = self.amplitudes[i | b];
                self.amplitudes[i | b] = C64::new(0.0, 0.0);
            }
        }
    }
}

fn basis_change(p: Pauli) -> Option<Matrix> {
    let h = FRAC_1_SQRT_2;
    match p {
        Pauli::I | Pauli::Z => None,
        Pauli::X => Some(Matrix::new(2, 2, vec![C64::new(h, 0.0), C64::new(h, 0.0), C64::new(h, 0.0), C64::new(-h, 0.0)]).expect("2x2")),
        // H · S†
        Pauli::Y => Some(Matrix::new(2, 2, vec![C64::new(h, 0.0), C64::new(0.0, -h), C64::new(h, 0.0), C64::new(0.0, h)]).expect("2x2")),
    }
}

fn pauli_matrix(p: Pauli) -> Matrix {
    let (o, z, i) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 1.0));
    let data = match p {
        Pauli::I => vec![o, z, z, o],
        Pauli::X => vec![z, o, o, z],
        Pauli::Y => vec![z, -i, i, z],
        Pauli::Z => vec![o, z, z, -o],
    };
    Matrix::new(2, 2, data).expect("2x2")
}

/// Outcomes of one shot, keyed by site.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShotRecord {
    /// `+1` or `-1` per measured site.
    pub outcomes: BTreeMap<usize, i8>,
    pub basis: BTreeMap<usize, Pauli>,
    /// Product of outcomes over sites whose basis is not `I`.
    pub product: i8,
}

/// Measurement basis of every measured site for observable `obs`.
pub fn bases_for(prog: &GateProgram, obs: &PauliString) -> SimResult<BTreeMap<usize, Pauli>> {
    let measured = prog.n_measurements();
    if let Some(&site) = obs.ops().keys().find(|&&s| s > measured) {
        return Err(SimError::SiteNotMeasured { site, measured });
    }
    Ok(prog.site_map().values().map(|&s| (s, obs.get(s))).collect())
}

/// Program with its gate unitaries and measurement rotations precomputed.
struct Compiled<'a> {
    prog: &'a GateProgram,
    unitaries: Vec<Option<Matrix>>,
    rotations: BTreeMap<usize, Option<Matrix>>,
    bases: &'a BTreeMap<usize, Pauli>,
}

impl<'a> Compiled<'a> {
    fn new(prog: &'a GateProgram, bases: &'a BTreeMap<usize, Pauli>) -> SimResult<Self> {
        prog.validate()?;
        for s in prog.site_map().values() {
            if !bases.contains_key(s) {
                return Err(SimError::MissingBasis(*s));
            }
        }
        let unitaries = prog
            .events()
            .iter()
            .map(|e| match e {
                Event::Gate(g) => Some(g.unitary()),
                _ => None,
            })
            .collect();
        let rotations = bases.iter().map(|(&s, &p)| (s, basis_change(p))).collect();
        Ok(Self { prog, unitaries, rotations, bases })
    }

    fn product(&self, outcomes: &BTreeMap<usize, i8>) -> i8 {
        outcomes.iter().filter(|(s, _)| self.bases[*s] != Pauli::I).map(|(_, &o)| o).product()
    }

    /// One sampled shot; `noise` is the depolarizing probability per qubit
    /// per gate.
    fn shot(&self, rng: &mut impl Rng, noise: f64, mut inspect: impl FnMut(usize, &RegisterState)) -> ShotRecord {
        let paulis = [Pauli::X, Pauli::Y, Pauli::Z].map(pauli_matrix);
        let mut state = RegisterState::new(self.prog.n_qubits());
        let mut outcomes = BTreeMap::new();
        let mut last = 0;
        for (k, e) in self.prog.events().iter().enumerate() {
            match e {
                Event::Gate(g) => {
                    state.apply(self.unitaries[k].as_ref().expect("gate"), &g.qubits);
                    if noise > 0.0 {
                        for &q in &g.qubits {
                            if rng.gen::<f64>() < noise {
                                state.apply(&paulis[rng.gen_range(0..3)], &[q]);
                            }
                        }
                    }
                }
                Event::Measure { qubit, site } => {
                    if let Some(r) = &self.rotations[site] {
                        state.apply(r, &[*qubit]);
                    }
                    let p1 = state.prob_one(*qubit).clamp(0.0, 1.0);
                    last = usize::from(rng.gen::<f64>() < p1);
                    state.project(*qubit, last, if last == 1 { p1 } else { 1.0 - p1 });
                    outcomes.insert(*site, if last == 1 { -1 } else { 1 });
                }
                Event::Reset { qubit } => state.reset(*qubit, last),
            }
            inspect(k, &state);
        }
        let product = self.product(&outcomes);
        ShotRecord { outcomes, basis: self.bases.clone(), product }
    }
}

fn shot_rng(seed: u64, shot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot);
    rng
}

/// Runs one noiseless shot; identical inputs give identical records.
pub fn run_shot(prog: &GateProgram, bases: &BTreeMap<usize, Pauli>, seed: u64) -> SimResult<ShotRecord> {
    let c = Compiled::new(prog, bases)?;
    Ok(c.shot(&mut shot_rng(seed, 0), 0.0, |_, _| {}))
}

fn sample(prog: &GateProgram, obs: &PauliString, shots: usize, seed: u64, noise: f64) -> SimResult<Vec<ShotRecord>> {
    if shots == 0 {
        return Err(SimError::NoShots);
    }
    let bases = bases_for(prog, obs)?;
    let c = Compiled::new(prog, &bases)?;
    Ok((0..shots).map(|k| c.shot(&mut shot_rng(seed, k as u64), noise, |_, _| {})).collect())
}

/// Noiseless shot records; shot `k` draws from stream `k` of `seed`.
pub fn sample_shots(prog: &GateProgram, obs: &PauliString, shots: usize, seed: u64) -> SimResult<Vec<ShotRecord>> {
    sample(prog, obs, shots, seed, 0.0)
}

/// Sample mean of shot products and its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation over `√shots`.
    pub stderr: f64,
    pub shots: usize,
}

impl Estimate {
    pub fn from_records(records: &[ShotRecord]) -> Self {
        let n = records.len();
        let mean = records.iter().map(|r| f64::from(r.product)).sum::<f64>() / n as f64;
        let var = if n > 1 {
            records.iter().map(|r| (f64::from(r.product) - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self { mean, stderr: (var / n as f64).sqrt(), shots: n }
    }
}

pub fn estimate_observable(prog: &GateProgram, obs: &PauliString, shots: usize, seed: u64) -> SimResult<Estimate> {
    Ok(Estimate::from_records(&sample_shots(prog, obs, shots, seed)?))
}

/// Totals of an exact branch enumeration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchSummary {
    pub value: f64,
    pub total_probability: f64,
    pub branches: usize,
}

/// Infinite-shot value of `obs`: the probability-weighted sum of the
/// product over every measurement branch.
pub fn exact_observable(prog: &GateProgram, obs: &PauliString) -> SimResult<f64> {
    Ok(exact_branches(prog, obs)?.value)
}

pub fn exact_branches(prog: &GateProgram, obs: &PauliString) -> SimResult<BranchSummary> {
    let found = prog.n_measurements();
    if found > MAX_EXACT_MEASUREMENTS {
        return Err(SimError::TooManyMeasurements { found, limit: MAX_EXACT_MEASUREMENTS });
    }
    let bases = bases_for(prog, obs)?;
    let c = Compiled::new(prog, &bases)?;
    let mut acc = BranchSummary { value: 0.0, total_probability: 0.0, branches: 0 };
    descend(&c, 0, RegisterState::new(prog.n_qubits()), 1.0, 1.0, &mut acc);
    Ok(acc)
}

fn descend(c: &Compiled, from: usize, mut state: RegisterState, prob: f64, sign: f64, acc: &mut BranchSummary) {
    let events = c.prog.events();
    for k in from..events.len() {
        match &events[k] {
            Event::Gate(g) => state.apply(c.unitaries[k].as_ref().expect("gate"), &g.qubits),
            Event::Measure { qubit, site } => {
                if let Some(r) = &c.rotations[site] {
                    state.apply(r, &[*qubit]);
                }
                let p1 = state.prob_one(*qubit).clamp(0.0, 1.0);
                for (outcome, p) in [(0, 1.0 - p1), (1, p1)] {
                    if prob * p < BRANCH_CUTOFF {
                        continue;
                    }
                    let mut branch = state.clone();
                    branch.project(*qubit, outcome, p);
                    branch.reset(*qubit, outcome);
                    let flip = if outcome == 1 && c.bases[site] != Pauli::I { -1.0 } else { 1.0 };
                    // k + 1 is this measurement's reset, already applied
                    descend(c, k + 2, branch, prob * p, sign * flip, acc);
                }
                return;
            }
            Event::Reset { .. } => unreachable!("resets are consumed with their measurement"),
        }
    }
    acc.value += prob * sign;
    acc.total_probability += prob;
    acc.branches += 1;
}

/// A program run with single-qubit depolarizing noise of strength `p`
/// after every gate (sampling only).
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyProgram {
    pub program: GateProgram,
    pub p: f64,
}

pub fn apply_depolarizing(prog: &GateProgram, p: f64) -> SimResult<NoisyProgram> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SimError::BadProbability(p));
    }
    Ok(NoisyProgram { program: prog.clone(), p })
}

impl NoisyProgram {
    pub fn sample_shots(&self, obs: &PauliString, shots: usize, seed: u64) -> SimResult<Vec<ShotRecord>> {
        sample(&self.program, obs, shots, seed, self.p)
    }

    pub fn estimate_observable(&self, obs: &PauliString, shots: usize, seed: u64) -> SimResult<Estimate> {
        Ok(Estimate::from_records(&self.sample_shots(obs, shots, seed)?))
    }

    /// Delegates to [`exact_observable`] when noiseless.
    pub fn exact_observable(&self, obs: &PauliString) -> SimResult<f64> {
        if self.p > 0.0 {
            return Err(SimError::UnsupportedMode(self.p));
        }
        exact_observable(&self.program, obs)
    }
}

/// Writes `shot_index,site_1..site_n,product` rows.
pub fn write_shot_log<W: Write>(out: W, records: &[ShotRecord], n_sites: usize) -> SimResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["shot_index".to_string()];
    header.extend((1..=n_sites).map(|s| format!("site_{s}")));
    header.push("product".into());
    w.write_record(&header)?;
    for (k, r) in records.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend((1..=n_sites).map(|s| r.outcomes.get(&s).map_or(String::new(), |o| o.to_string())));
        row.push(r.product.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{compile_parameterized, compile_tensors, tensors_from_parameters, LatticeShape};
    use crate::gates::{u3, GateKind, GateSpec};
    use crate::lattice::boundary_loop;
    use crate::peps::contract_all;
    use std::f64::consts::PI;

    fn single(prep: Option<Matrix>) -> GateProgram {
        let mut events = Vec::new();
        if let Some(u) = prep {
            events.push(Event::Gate(GateSpec::custom(vec![0], u).unwrap()));
        }
        events.push(Event::Measure { qubit: 0, site: 1 });
        events.push(Event::Reset { qubit: 0 });
        GateProgram::new(1, events, "test").unwrap()
    }

    fn hadamard() -> Matrix {
        u3(PI / 2.0, 0.0, PI)
    }

    fn obs(text: &str) -> PauliString {
        PauliString::parse(text).unwrap()
    }

    fn random_theta(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..144).map(|_| rng.gen_range(-PI..PI)).collect()
    }

    fn shape() -> LatticeShape {
        LatticeShape::new(3, 3, 1).unwrap()
    }

    #[test]
    fn zero_state_reads_plus_one() {
        let p = single(None);
        let bases = BTreeMap::from([(1, Pauli::Z)]);
        for seed in 0..50 {
            assert_eq!(run_shot(&p, &bases, seed).unwrap().outcomes[&1], 1);
        }
        assert_eq!(exact_observable(&p, &obs("Z1")).unwrap(), 1.0);
    }

    #[test]
    fn plus_state_in_x_and_z() {
        let p = single(Some(hadamard()));
        let bases = BTreeMap::from([(1, Pauli::X)]);
        for seed in 0..50 {
            assert_eq!(run_shot(&p, &bases, seed).unwrap().product, 1);
        }
        let e = estimate_observable(&p, &obs("Z1"), 10_000, 7).unwrap();
        assert!(e.mean.abs() <= 0.03, "{e:?}");
        assert!((exact_observable(&p, &obs("X1")).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn y_basis_reads_plus_i() {
        // S · H |0> = |+i>
        let s = Matrix::new(2, 2, vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 1.0)]).unwrap();
        let p = single(Some(s.matmul(&hadamard())));
        assert!((exact_observable(&p, &obs("Y1")).unwrap() - 1.0).abs() < 1e-12);
        assert!(exact_observable(&p, &obs("X1")).unwrap().abs() < 1e-12);
    }

    #[test]
    fn empty_observable() {
        let p = single(Some(hadamard()));
        let e = estimate_observable(&p, &PauliString::identity(), 100, 1).unwrap();
        assert_eq!((e.mean, e.stderr), (1.0, 0.0));
    }

    #[test]
    fn observable_outside_program_rejected() {
        let p = single(None);
        assert!(matches!(exact_observable(&p, &obs("Z2")), Err(SimError::SiteNotMeasured { site: 2, .. })));
        assert!(matches!(estimate_observable(&p, &obs("Z1"), 0, 0), Err(SimError::NoShots)));
        assert!(matches!(run_shot(&p, &BTreeMap::new(), 0), Err(SimError::MissingBasis(1))));
    }

    #[test]
    fn bernoulli_stderr() {
        let p = compile_parameterized(shape(), &random_theta(40)).unwrap();
        let o = obs("X1 Z2 Y5");
        let e = estimate_observable(&p, &o, 4000, 3).unwrap();
        let bernoulli = ((1.0 - e.mean * e.mean) / 4000.0).sqrt();
        assert!((e.stderr / bernoulli - 1.0).abs() < 0.01);
        let exact = exact_observable(&p, &o).unwrap();
        assert!((e.mean - exact).abs() < 4.0 * e.stderr);
    }

    #[test]
    fn norm_and_reset_invariants() {
        let p = compile_parameterized(shape(), &random_theta(41)).unwrap();
        let bases = bases_for(&p, &boundary_loop(3, 3).unwrap()).unwrap();
        let c = Compiled::new(&p, &bases).unwrap();
        for seed in 0..20 {
            c.shot(&mut shot_rng(seed, 0), 0.0, |k, state| {
                assert!((state.norm() - 1.0).abs() < 1e-10);
                if let Event::Reset { qubit } = p.events()[k] {
                    let b = state.bit(qubit);
                    for (i, a) in state.amplitudes().iter().enumerate() {
                        if i & b != 0 {
                            assert_eq!(*a, C64::new(0.0, 0.0));
                        }
                    }
                }
            });
        }
    }

    #[test]
    fn branch_probabilities_sum_to_one() {
        let p = compile_parameterized(shape(), &random_theta(42)).unwrap();
        let b = exact_branches(&p, &boundary_loop(3, 3).unwrap()).unwrap();
        assert!((b.total_probability - 1.0).abs() < 1e-10);
        assert!(b.branches <= 512);
    }

    #[test]
    fn seeds_are_deterministic() {
        let p = compile_parameterized(shape(), &random_theta(43)).unwrap();
        let bases = bases_for(&p, &boundary_loop(3, 3).unwrap()).unwrap();
        assert_eq!(run_shot(&p, &bases, 9).unwrap(), run_shot(&p, &bases, 9).unwrap());
        let a = sample_shots(&p, &obs("Z1"), 50, 5).unwrap();
        assert_eq!(a, sample_shots(&p, &obs("Z1"), 50, 5).unwrap());
        assert_ne!(a, sample_shots(&p, &obs("Z1"), 50, 6).unwrap());
        assert_eq!(a[0], run_shot(&p, &a[0].basis, 5).unwrap());
    }

    #[test]
    fn exact_matches_contraction() {
        let loop_op = boundary_loop(3, 3).unwrap();
        for seed in 0..3 {
            let theta = random_theta(50 + seed);
            let p = compile_parameterized(shape(), &theta).unwrap();
            let psi = contract_all(&tensors_from_parameters(shape(), &theta).unwrap()).unwrap();
            for o in [loop_op.clone(), obs("Z5"), obs("X1 Y2"), obs("Y4 X6 Z8")] {
                let want = psi.expectation_string(&o).unwrap().re;
                assert!((exact_observable(&p, &o).unwrap() - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn compiled_tensors_agree_with_parameterized() {
        let theta = random_theta(60);
        let a = compile_parameterized(shape(), &theta).unwrap();
        let b = compile_tensors(&tensors_from_parameters(shape(), &theta).unwrap()).unwrap();
        for o in [boundary_loop(3, 3).unwrap(), obs("Z1 Z9"), obs("X5"), obs("Y3 Y7")] {
            let (x, y) = (exact_observable(&a, &o).unwrap(), exact_observable(&b, &o).unwrap());
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn global_phase_is_invisible() {
        let p = compile_parameterized(shape(), &random_theta(44)).unwrap();
        let o = boundary_loop(3, 3).unwrap();
        let before = exact_observable(&p, &o).unwrap();
        for k in 0..p.gates().count() {
            let g = p.gates().nth(k).unwrap();
            let u = g.unitary().scale(C64::from_polar(1.0, 0.7 + k as f64));
            let q = p.with_gate(k, GateSpec::custom(g.qubits.clone(), u).unwrap()).unwrap();
            assert!((exact_observable(&q, &o).unwrap() - before).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_sites_are_measured_but_not_multiplied() {
        let p = compile_parameterized(shape(), &random_theta(45)).unwrap();
        let records = sample_shots(&p, &boundary_loop(3, 3).unwrap(), 20, 1).unwrap();
        for r in &records {
            assert_eq!(r.outcomes.len(), 9);
            assert_eq!(r.basis[&5], Pauli::I);
            let prod: i8 = r.outcomes.iter().filter(|(s, _)| **s != 5).map(|(_, o)| o).product();
            assert_eq!(r.product, prod);
        }
    }

    #[test]
    fn noise_modes() {
        let p = compile_parameterized(shape(), &random_theta(46)).unwrap();
        let o = boundary_loop(3, 3).unwrap();
        assert!(matches!(apply_depolarizing(&p, 1.5), Err(SimError::BadProbability(_))));
        let noisy = apply_depolarizing(&p, 0.1).unwrap();
        assert!(matches!(noisy.exact_observable(&o), Err(SimError::UnsupportedMode(_))));
        let clean = apply_depolarizing(&p, 0.0).unwrap();
        assert_eq!(clean.exact_observable(&o).unwrap(), exact_observable(&p, &o).unwrap());
        assert_eq!(clean.sample_shots(&o, 200, 2).unwrap(), sample_shots(&p, &o, 200, 2).unwrap());
        let full = apply_depolarizing(&p, 1.0).unwrap().estimate_observable(&o, 4000, 3).unwrap();
        assert!(full.mean.abs() <= 3.0 * full.stderr.max(1.0 / 4000f64.sqrt()), "{full:?}");
    }

    #[test]
    fn shot_log_layout() {
        let p = compile_parameterized(shape(), &random_theta(47)).unwrap();
        let records = sample_shots(&p, &obs("Z1 X9"), 3, 0).unwrap();
        let mut buf = Vec::new();
        write_shot_log(&mut buf, &records, 9).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "shot_index,site_1,site_2,site_3,site_4,site_5,site_6,site_7,site_8,site_9,product");
        assert_eq!(lines.len(), 4);
        let fields: Vec<i32> = lines[1].split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields[0], 0);
        assert_eq!(fields[10], fields[1] * fields[9]);
    }

    #[test]
    fn gate_kinds_apply_like_their_matrices() {
        // a two-qubit block on reversed rails equals SWAP-conjugated matrix
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let params: Vec<f64> = (0..12).map(|_| rng.gen_range(-PI..PI)).collect();
        let g = GateSpec::new(GateKind::TwoQubitBlock, params, vec![1, 0]).unwrap();
        let u = g.unitary();
        let mut st = RegisterState::new(2);
        st.apply(&u3(0.3, 0.2, 0.1).kron(&u3(1.1, -0.4, 0.9)), &[0, 1]);
        let start = st.amplitudes().to_vec();
        st.apply(&u, &[1, 0]);
        let swap = |i: usize| ((i & 1) << 1) | (i >> 1);
        for i in 0..4 {
            let want: C64 = (0..4).map(|j| u[(swap(i), swap(j))] * start[j]).sum();
            assert!((st.amplitudes()[i] - want).norm() < 1e-14);
        }
    }
}
