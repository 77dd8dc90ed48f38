//! Lowering of PEPS networks to mid-circuit measure-and-reuse programs.
//!
//! Sites are visited in serpentine ("zig-zag") order: row 0 left to right,
//! row 1 right to left, and so on. Every bond is emitted as an output by the
//! earlier of its two tensors and consumed as an input by the later one, so
//! each non-final tensor is an isometry from its input bonds to its output
//! bonds plus its physical leg. The final row is realized as one unitary on
//! the vertical bond qubits it receives.
//!
//! Gate rails are ordered `[input bonds.., fresh |0>..]` going in and
//! `[output bonds.., physical]` coming out, horizontal bonds before vertical
//! ones. The parameterized layout deviates in one place: a three-qubit block
//! emits `[horizontal, physical, vertical]`. Fresh qubits are allocated
//! lowest free index first.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gates::{
    embed_isometry, split_final_row, staircase, unitary_to_tensor, GateError, GateKind, GateSpec,
};
use crate::lattice::site;
use crate::peps::{legs, Leg, PepsError, PepsNetwork};
use crate::tensor::{contract, Matrix, Tensor, TensorError};
use crate::tol;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("invalid lattice shape {rows}x{cols} with {bond_qubits} bond qubits")]
    InvalidShape { rows: usize, cols: usize, bond_qubits: usize },

    #[error("parameterized layout needs at least 2 rows, 2 columns and one qubit per bond; got {0}")]
    UnsupportedLayout(String),

    #[error("layout takes {expected} parameters, got {found}")]
    ParamCount { expected: usize, found: usize },

    #[error("site {site}: bond dimension {dim} is not a power of two")]
    NotPowerOfTwo { site: usize, dim: usize },

    #[error("site {site}: {inputs} input qubits cannot map isometrically onto {outputs} output qubits")]
    TooManyInputs { site: usize, inputs: usize, outputs: usize },

    #[error("site {site} violates the isometry constraint: max |V^H V - I| = {residual:.3e}")]
    IsometryViolation { site: usize, residual: f64 },

    #[error("schedule uses {used} qubits, above the budget of {budget}")]
    QubitBudget { used: usize, budget: usize },

    #[error("unrecognized layout id {0:?}")]
    BadLayoutId(String),

    #[error(transparent)]
    Program(#[from] ProgramError),

    #[error(transparent)]
    Gate(#[from] GateError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Peps(#[from] PepsError),

    #[error("circuit JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type CompileResult<T> = Result<T, CompileError>;

/// Breaches of the measure-and-reuse discipline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("event {index}: qubit {qubit} is outside the {n_qubits}-qubit register")]
    QubitOutOfRange { index: usize, qubit: usize, n_qubits: usize },

    #[error("event {index}: measure of qubit {qubit} is not immediately followed by its reset")]
    MeasureWithoutReset { index: usize, qubit: usize },

    #[error("event {index}: reset of qubit {qubit} does not follow its measurement")]
    ResetWithoutMeasure { index: usize, qubit: usize },

    #[error("measured sites are not a bijection onto 1..={0}")]
    SitesNotBijective(usize),

    #[error("site map disagrees with the measure events")]
    SiteMapMismatch,

    #[error("event {index}: {source}")]
    BadGate { index: usize, source: GateError },
}

/// Grid dimensions plus qubits per bond (`χ = 2^bond_qubits`). The zig-zag
/// runs along rows, so `cols` is the register width that sets the qubit
/// count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LatticeShape {
    pub rows: usize,
    pub cols: usize,
    pub bond_qubits: usize,
}

impl LatticeShape {
    pub fn new(rows: usize, cols: usize, bond_qubits: usize) -> CompileResult<Self> {
        if rows == 0 || cols == 0 || bond_qubits == 0 {
            return Err(CompileError::InvalidShape { rows, cols, bond_qubits });
        }
        Ok(Self { rows, cols, bond_qubits })
    }

    pub fn n_sites(&self) -> usize {
        self.rows * self.cols
    }

    pub fn chi(&self) -> usize {
        1 << self.bond_qubits
    }

    /// Tag recorded in programs and checkpoints, e.g. `zigzag-r3-c3-nb1`.
    pub fn layout_id(&self) -> String {
        format!("zigzag-r{}-c{}-nb{}", self.rows, self.cols, self.bond_qubits)
    }

    pub fn from_layout_id(id: &str) -> CompileResult<Self> {
        let bad = || CompileError::BadLayoutId(id.to_string());
        let rest = id.strip_prefix("zigzag-").ok_or_else(bad)?;
        let mut it = rest.split('-');
        let mut field = |prefix: &str| -> CompileResult<usize> {
            it.next().and_then(|s| s.strip_prefix(prefix)).and_then(|s| s.parse().ok()).ok_or_else(bad)
        };
        let (rows, cols, nb) = (field("r")?, field("c")?, field("nb")?);
        if it.next().is_some() {
            return Err(bad());
        }
        Self::new(rows, cols, nb).map_err(|_| bad())
    }
}

/// `(cols + 1) · bond_qubits + 1`.
pub fn qubit_count(shape: LatticeShape) -> usize {
    (shape.cols + 1) * shape.bond_qubits + 1
}

/// Whether the compiled register is strictly smaller than the lattice.
pub fn is_qubit_efficient(shape: LatticeShape) -> bool {
    qubit_count(shape) < shape.n_sites()
}

/// A lattice edge. `Horizontal { row, col }` joins `(row, col)` and
/// `(row, col + 1)`; `Vertical { row, col }` joins `(row, col)` and
/// `(row + 1, col)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bond {
    Horizontal { row: usize, col: usize },
    Vertical { row: usize, col: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZigzagStep {
    pub row: usize,
    pub col: usize,
    /// 1-based row-major site label.
    pub site: usize,
    /// Bonds consumed, horizontal first.
    pub inputs: Vec<Bond>,
    /// Bonds produced, horizontal first.
    pub outputs: Vec<Bond>,
}

impl ZigzagStep {
    /// PEPS leg of this site that carries `bond`.
    pub fn leg_of(&self, bond: Bond) -> Leg {
        match bond {
            Bond::Horizontal { col, .. } if col == self.col => Leg::Right,
            Bond::Horizontal { .. } => Leg::Left,
            Bond::Vertical { row, .. } if row == self.row => Leg::Down,
            Bond::Vertical { .. } => Leg::Up,
        }
    }
}

/// Serpentine enumeration of all sites with bond directions assigned.
pub fn zigzag_order(shape: LatticeShape) -> Vec<ZigzagStep> {
    let (rows, cols) = (shape.rows, shape.cols);
    let mut steps = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        let rightward = row % 2 == 0;
        let order: Vec<usize> = if rightward { (0..cols).collect() } else { (0..cols).rev().collect() };
        for (k, &col) in order.iter().enumerate() {
            let mut inputs = Vec::new();
            let mut outputs = Vec::new();
            if k > 0 {
                let prev = order[k - 1];
                inputs.push(Bond::Horizontal { row, col: prev.min(col) });
            }
            if row > 0 {
                inputs.push(Bond::Vertical { row: row - 1, col });
            }
            if k + 1 < cols {
                let next = order[k + 1];
                outputs.push(Bond::Horizontal { row, col: next.min(col) });
            }
            if row + 1 < rows {
                outputs.push(Bond::Vertical { row, col });
            }
            steps.push(ZigzagStep { row, col, site: site(row, col, cols), inputs, outputs });
        }
    }
    steps
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Gate(GateSpec),
    Measure { qubit: usize, site: usize },
    Reset { qubit: usize },
}

/// Ordered gate, measure and reset events on a fixed register, with the
/// lattice site read out by each measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct GateProgram {
    n_qubits: usize,
    events: Vec<Event>,
    site_map: BTreeMap<usize, usize>,
    layout_id: String,
}

impl GateProgram {
    /// Builds and validates a program; the site map is read off the
    /// measure events in order.
    pub fn new(n_qubits: usize, events: Vec<Event>, layout_id: impl Into<String>) -> Result<Self, ProgramError> {
        let site_map = events
            .iter()
            .filter_map(|e| match e {
                Event::Measure { site, .. } => Some(*site),
                _ => None,
            })
            .enumerate()
            .collect();
        let p = Self { n_qubits, events, site_map, layout_id: layout_id.into() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        let n = self.n_qubits;
        let check = |index: usize, qubit: usize| {
            if qubit >= n {
                Err(ProgramError::QubitOutOfRange { index, qubit, n_qubits: n })
            } else {
                Ok(())
            }
        };
        let mut sites = Vec::new();
        for (index, e) in self.events.iter().enumerate() {
            match e {
                Event::Gate(g) => {
                    g.validate().map_err(|source| ProgramError::BadGate { index, source })?;
                    for &q in &g.qubits {
                        check(index, q)?;
                    }
                }
                Event::Measure { qubit, site } => {
                    check(index, *qubit)?;
                    if self.events.get(index + 1) != Some(&Event::Reset { qubit: *qubit }) {
                        return Err(ProgramError::MeasureWithoutReset { index, qubit: *qubit });
                    }
                    sites.push(*site);
                }
                Event::Reset { qubit } => {
                    check(index, *qubit)?;
                    let prev = index.checked_sub(1).and_then(|i| self.events.get(i));
                    if !matches!(prev, Some(Event::Measure { qubit: q, .. }) if q == qubit) {
                        return Err(ProgramError::ResetWithoutMeasure { index, qubit: *qubit });
                    }
                }
            }
        }
        let distinct: BTreeSet<usize> = sites.iter().copied().collect();
        let k = sites.len();
        if distinct.len() != k || distinct.iter().next().is_some_and(|&s| s != 1) || distinct.last().is_some_and(|&s| s != k) {
            return Err(ProgramError::SitesNotBijective(k));
        }
        let expected: BTreeMap<usize, usize> = sites.into_iter().enumerate().collect();
        if expected != self.site_map {
            return Err(ProgramError::SiteMapMismatch);
        }
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Measurement ordinal to site label.
    pub fn site_map(&self) -> &BTreeMap<usize, usize> {
        &self.site_map
    }

    pub fn layout_id(&self) -> &str {
        &self.layout_id
    }

    pub fn n_measurements(&self) -> usize {
        self.site_map.len()
    }

    pub fn gates(&self) -> impl Iterator<Item = &GateSpec> {
        self.events.iter().filter_map(|e| match e {
            Event::Gate(g) => Some(g),
            _ => None,
        })
    }

    /// Returns a copy with the gate at gate-ordinal `k` replaced.
    pub fn with_gate(&self, k: usize, gate: GateSpec) -> Result<Self, ProgramError> {
        let mut p = self.clone();
        if let Some(slot) = p.events.iter_mut().filter(|e| matches!(e, Event::Gate(_))).nth(k) {
            *slot = Event::Gate(gate);
        }
        p.validate()?;
        Ok(p)
    }

    /// Canonical pretty-printed JSON.
    pub fn to_json(&self) -> String {
        let doc = ProgramJson {
            n_qubits: self.n_qubits,
            events: self.events.iter().map(EventJson::from).collect(),
            site_map: self.site_map.clone(),
            layout_id: self.layout_id.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> CompileResult<Self> {
        let doc: ProgramJson = serde_json::from_str(text)?;
        let events = doc.events.into_iter().map(Event::try_from).collect::<Result<Vec<_>, _>>()?;
        let p = Self { n_qubits: doc.n_qubits, events, site_map: doc.site_map, layout_id: doc.layout_id };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgramJson {
    n_qubits: usize,
    events: Vec<EventJson>,
    site_map: BTreeMap<usize, usize>,
    layout_id: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum EventJson {
    Gate {
        kind: GateKind,
        params: Vec<f64>,
        qubits: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix: Option<Vec<[f64; 2]>>,
    },
    Measure {
        qubit: usize,
        site: usize,
    },
    Reset {
        qubit: usize,
    },
}

impl From<&Event> for EventJson {
    fn from(e: &Event) -> Self {
        match e {
            Event::Gate(g) => EventJson::Gate {
                kind: g.kind,
                params: g.params.clone(),
                qubits: g.qubits.clone(),
                matrix: g.matrix.as_ref().map(|m| m.data().iter().map(|z| [z.re, z.im]).collect()),
            },
            Event::Measure { qubit, site } => EventJson::Measure { qubit: *qubit, site: *site },
            Event::Reset { qubit } => EventJson::Reset { qubit: *qubit },
        }
    }
}

impl TryFrom<EventJson> for Event {
    type Error = CompileError;

    fn try_from(e: EventJson) -> CompileResult<Self> {
        Ok(match e {
            EventJson::Gate { kind, params, qubits, matrix } => {
                let matrix = match matrix {
                    Some(entries) => {
                        let dim = (entries.len() as f64).sqrt().round() as usize;
                        let data = entries.iter().map(|&[re, im]| C64::new(re, im)).collect();
                        Some(Matrix::new(dim, dim, data)?)
                    }
                    None => None,
                };
                Event::Gate(GateSpec { kind, params, qubits, matrix })
            }
            EventJson::Measure { qubit, site } => Event::Measure { qubit, site },
            EventJson::Reset { qubit } => Event::Reset { qubit },
        })
    }
}

/// Lowest-free-index register allocator that also records events.
struct Scheduler {
    busy: Vec<bool>,
    events: Vec<Event>,
    bonds: HashMap<Bond, Vec<usize>>,
}

impl Scheduler {
    fn new() -> Self {
        Self { busy: Vec::new(), events: Vec::new(), bonds: HashMap::new() }
    }

    fn alloc(&mut self, k: usize) -> Vec<usize> {
        (0..k)
            .map(|_| {
                let q = self.busy.iter().position(|b| !b).unwrap_or(self.busy.len());
                if q == self.busy.len() {
                    self.busy.push(true);
                } else {
                    self.busy[q] = true;
                }
                q
            })
            .collect()
    }

    /// Rails for a block: the qubits of `inputs` followed by `fresh` new ones.
    fn rails(&mut self, inputs: &[Bond], fresh: usize) -> Vec<usize> {
        let mut rails: Vec<usize> =
            inputs.iter().flat_map(|b| self.bonds.remove(b).expect("bond produced earlier")).collect();
        rails.extend(self.alloc(fresh));
        rails
    }

    /// Hands out the leading rails to `outputs` and returns the physical one.
    fn route(&mut self, rails: &[usize], outputs: &[(Bond, usize)]) -> usize {
        let mut at = 0;
        for &(b, k) in outputs {
            self.bonds.insert(b, rails[at..at + k].to_vec());
            at += k;
        }
        debug_assert_eq!(at + 1, rails.len());
        rails[at]
    }

    fn measure(&mut self, qubit: usize, site: usize) {
        self.events.push(Event::Measure { qubit, site });
        self.events.push(Event::Reset { qubit });
        self.busy[qubit] = false;
    }

    fn finish(self, budget: usize, layout_id: String) -> CompileResult<GateProgram> {
        let used = self.busy.len();
        if used > budget {
            return Err(CompileError::QubitBudget { used, budget });
        }
        Ok(GateProgram::new(used, self.events, layout_id)?)
    }
}

/// Rail of each logical output `[bonds.., phys]` of a parameterized block.
/// In a three-qubit block the physical output takes the middle rail, the
/// only one acted on by both MS gates, so the site couples to both outgoing
/// bonds; with the physical leg on an outer rail the top plaquettes of the
/// 3×3 Wen model cannot all be satisfied.
fn output_rails(width: usize) -> Vec<usize> {
    match width {
        3 => vec![0, 2, 1],
        w => (0..w).collect(),
    }
}

/// One non-final-row block of the parameterized layout.
#[derive(Clone, Debug)]
struct Block {
    step: ZigzagStep,
    kind: GateKind,
    n_fresh: usize,
    offset: usize,
}

fn plan(shape: LatticeShape) -> CompileResult<(Vec<Block>, usize, usize)> {
    if shape.rows < 2 || shape.cols < 2 || shape.bond_qubits != 1 {
        return Err(CompileError::UnsupportedLayout(shape.layout_id()));
    }
    let mut blocks = Vec::new();
    let mut offset = 0;
    for step in zigzag_order(shape).into_iter().filter(|s| s.row + 1 < shape.rows) {
        let n_out = step.outputs.len() + 1;
        let kind = if n_out == 3 { GateKind::ThreeQubitBlock } else { GateKind::TwoQubitBlock };
        let n_fresh = n_out - step.inputs.len();
        let width = kind.param_count().expect("fixed-size kind");
        blocks.push(Block { step, kind, n_fresh, offset });
        offset += width;
    }
    let final_offset = offset;
    Ok((blocks, final_offset, offset + 12 * (shape.cols - 1)))
}

/// Raw parameter count of the parameterized layout (144 for 3×3).
pub fn parameter_count(shape: LatticeShape) -> CompileResult<usize> {
    Ok(plan(shape)?.2)
}

fn check_theta(shape: LatticeShape, theta: &[f64]) -> CompileResult<(Vec<Block>, usize)> {
    let (blocks, final_offset, total) = plan(shape)?;
    if theta.len() != total {
        return Err(CompileError::ParamCount { expected: total, found: theta.len() });
    }
    Ok((blocks, final_offset))
}

/// Gates realizing the final row on `rails` (in column order).
fn final_row_gates(theta: &[f64], rails: &[usize]) -> CompileResult<Vec<GateSpec>> {
    if rails.len() == 3 {
        return Ok(vec![GateSpec::new(GateKind::ThreeQubitBlock, theta.to_vec(), rails.to_vec())?]);
    }
    theta
        .chunks(12)
        .zip(rails.windows(2))
        .map(|(p, w)| Ok(GateSpec::new(GateKind::TwoQubitBlock, p.to_vec(), w.to_vec())?))
        .collect()
}

/// Compiles the parameterized block layout: one MS-based block per
/// non-final site in zig-zag order, then a staircase of two-qubit blocks
/// across the final row.
pub fn compile_parameterized(shape: LatticeShape, theta: &[f64]) -> CompileResult<GateProgram> {
    let (blocks, final_offset) = check_theta(shape, theta)?;
    let mut s = Scheduler::new();
    for b in &blocks {
        let rails = s.rails(&b.step.inputs, b.n_fresh);
        let width = b.kind.param_count().expect("fixed-size kind");
        let params = theta[b.offset..b.offset + width].to_vec();
        s.events.push(Event::Gate(GateSpec::new(b.kind, params, rails.clone())?));
        let at = output_rails(rails.len());
        for (k, &o) in b.step.outputs.iter().enumerate() {
            s.bonds.insert(o, vec![rails[at[k]]]);
        }
        s.measure(rails[at[rails.len() - 1]], b.step.site);
    }
    let last = shape.rows - 1;
    let ups: Vec<Bond> = (0..shape.cols).map(|col| Bond::Vertical { row: last - 1, col }).collect();
    let rails = s.rails(&ups, 0);
    for g in final_row_gates(&theta[final_offset..], &rails)? {
        s.events.push(Event::Gate(g));
    }
    for (col, &q) in rails.iter().enumerate() {
        s.measure(q, site(last, col, shape.cols));
    }
    s.finish(qubit_count(shape), shape.layout_id())
}

/// PEPS network whose contraction equals the joint outcome amplitudes of
/// [`compile_parameterized`] on the same `theta`.
pub fn tensors_from_parameters(shape: LatticeShape, theta: &[f64]) -> CompileResult<PepsNetwork> {
    let (blocks, final_offset) = check_theta(shape, theta)?;
    let (rows, cols) = (shape.rows, shape.cols);
    let mut tensors: Vec<Option<Tensor>> = vec![None; rows * cols];
    for b in &blocks {
        let width = b.kind.param_count().expect("fixed-size kind");
        let spec = GateSpec::new(b.kind, theta[b.offset..b.offset + width].to_vec(), (0..b.n_fresh + b.step.inputs.len()).collect())?;
        let n = spec.qubits.len();
        let fixed: Vec<usize> = (n - b.n_fresh..n).collect();
        let t = unitary_to_tensor(&spec.unitary(), &fixed)?;
        // clamped axes: [inputs.., output rails..]
        let n_in = b.step.inputs.len();
        let at = output_rails(n);
        let perm: Vec<usize> = legs(rows, cols, b.step.row, b.step.col)
            .iter()
            .map(|&leg| {
                if leg == Leg::Phys {
                    return n_in + at[n - 1];
                }
                if let Some(i) = b.step.inputs.iter().position(|&x| b.step.leg_of(x) == leg) {
                    return i;
                }
                let o = b.step.outputs.iter().position(|&x| b.step.leg_of(x) == leg).expect("every leg is a bond");
                n_in + at[o]
            })
            .collect();
        tensors[b.step.site - 1] = Some(t.permute(&perm)?);
    }
    let u = staircase(&theta[final_offset..], cols)?;
    let split = split_final_row(&u, &[])?;
    for (col, t) in split.tensors.into_iter().enumerate() {
        tensors[site(rows - 1, col, cols) - 1] = Some(t);
    }
    Ok(PepsNetwork::new(rows, cols, tensors.into_iter().map(|t| t.expect("all sites built")).collect())?)
}

fn bond_qubits(dim: usize, site: usize) -> CompileResult<usize> {
    if dim.is_power_of_two() {
        Ok(dim.trailing_zeros() as usize)
    } else {
        Err(CompileError::NotPowerOfTwo { site, dim })
    }
}

/// Checks `v` (outputs × inputs) and embeds it with its fresh rails last.
fn embed(v: &Matrix, site: usize, q_in: usize, q_out: usize) -> CompileResult<Matrix> {
    if q_in > q_out {
        return Err(CompileError::TooManyInputs { site, inputs: q_in, outputs: q_out });
    }
    let residual = v.isometry_residual();
    if residual > tol::USER_ISOMETRY {
        return Err(CompileError::IsometryViolation { site, residual });
    }
    Ok(embed_isometry(v, q_out, &(q_in..q_out).collect::<Vec<_>>())?)
}

/// Compiles an arbitrary network whose tensors are isometric along the
/// zig-zag direction. Every bond dimension must be a power of two; a bond of
/// dimension 1 occupies no qubit.
///
/// When the final row has no horizontal bonds (all of dimension 1) its sites
/// are compiled one by one; otherwise the row is contracted into one map and
/// embedded as a single gate.
pub fn compile_tensors(p: &PepsNetwork) -> CompileResult<GateProgram> {
    let (rows, cols) = (p.rows(), p.cols());
    let mut max_nb = 1;
    for r in 0..rows {
        for c in 0..cols {
            for leg in [Leg::Right, Leg::Down] {
                max_nb = max_nb.max(bond_qubits(p.dim(r, c, leg), site(r, c, cols))?);
            }
        }
    }
    let shape = LatticeShape::new(rows, cols, max_nb)?;
    let width = |b: Bond, st: &ZigzagStep| bond_qubits(p.dim(st.row, st.col, st.leg_of(b)), st.site);

    let mut s = Scheduler::new();
    let steps = zigzag_order(shape);
    let (body, last_row): (Vec<_>, Vec<_>) = steps.into_iter().partition(|st| rows == 1 || st.row + 1 < rows);
    // a single-row lattice goes entirely through the per-site path
    let separable_last = last_row.is_empty()
        || (0..cols - 1).all(|c| p.dim(rows - 1, c, Leg::Right) == 1);
    let per_site: Vec<ZigzagStep> = if separable_last {
        body.iter().cloned().chain(last_row.iter().cloned()).collect()
    } else {
        body.clone()
    };

    // try the per-site path for the final row, falling back if a site there
    // is only isometric jointly
    let mut fallback = false;
    let mut prepared: Vec<(ZigzagStep, Matrix, Vec<usize>, Vec<usize>)> = Vec::new();
    for st in &per_site {
        let in_w = st.inputs.iter().map(|&b| width(b, st)).collect::<CompileResult<Vec<_>>>()?;
        let out_w = st.outputs.iter().map(|&b| width(b, st)).collect::<CompileResult<Vec<_>>>()?;
        let (q_in, q_out) = (in_w.iter().sum::<usize>(), out_w.iter().sum::<usize>() + 1);
        let t = p.tensor(st.row, st.col);
        let lg = p.legs(st.row, st.col);
        let axis = |leg: Leg| lg.iter().position(|&l| l == leg).expect("leg present");
        let mut out_axes: Vec<usize> = st.outputs.iter().map(|&b| axis(st.leg_of(b))).collect();
        out_axes.push(0);
        let in_axes: Vec<usize> = st.inputs.iter().map(|&b| axis(st.leg_of(b))).collect();
        let perm: Vec<usize> = out_axes.iter().chain(&in_axes).copied().collect();
        let v = t.permute(&perm)?.to_matrix(&(0..out_axes.len()).collect::<Vec<_>>())?;
        let in_final_row = rows > 1 && st.row + 1 == rows;
        match embed(&v, st.site, q_in, q_out) {
            Ok(u) => prepared.push((st.clone(), u, in_w, out_w)),
            Err(CompileError::IsometryViolation { .. }) if in_final_row => {
                fallback = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if fallback {
        prepared.retain(|(st, ..)| st.row + 1 < rows);
    }

    for (st, u, in_w, out_w) in &prepared {
        let q_in: usize = in_w.iter().sum();
        let rails = s.rails(&st.inputs, u.rows().trailing_zeros() as usize - q_in);
        s.events.push(Event::Gate(GateSpec::custom(rails.clone(), u.clone())?));
        let outs: Vec<(Bond, usize)> = st.outputs.iter().copied().zip(out_w.iter().copied()).collect();
        let phys = s.route(&rails, &outs);
        s.measure(phys, st.site);
    }

    if !separable_last || fallback {
        let last = rows - 1;
        let (v, q_in) = final_row_map(p)?;
        let u = embed(&v, site(last, 0, cols), q_in, cols)?;
        let ups: Vec<Bond> = (0..cols).map(|col| Bond::Vertical { row: last - 1, col }).collect();
        let rails = s.rails(&ups, cols - q_in);
        s.events.push(Event::Gate(GateSpec::custom(rails.clone(), u)?));
        for (col, &q) in rails.iter().enumerate() {
            s.measure(q, site(last, col, cols));
        }
    }
    s.finish(qubit_count(shape), format!("tensors-r{rows}-c{cols}"))
}

/// Final row contracted into `phys (column order) × up bonds (column order)`.
fn final_row_map(p: &PepsNetwork) -> CompileResult<(Matrix, usize)> {
    let (rows, cols) = (p.rows(), p.cols());
    let last = rows - 1;
    // padded site as [phys, up, left, right]
    let site_t = |c: usize| -> CompileResult<Tensor> {
        let t = p.padded(last, c);
        let sh = t.shape().to_vec();
        Ok(t.reshape(sh[..4].to_vec())?)
    };
    let mut acc = site_t(0)?; // [p0, u0, l0 (1), r0]
    for c in 1..cols {
        let next = site_t(c)?;
        acc = contract(&acc, &next, &[(acc.rank() - 1, 2)])?;
    }
    // axes: p0 u0 l0 | p1 u1 | … | r_last
    let rank = acc.rank();
    let phys: Vec<usize> = std::iter::once(0).chain((1..cols).map(|c| 3 + 2 * (c - 1))).collect();
    let ups: Vec<usize> = std::iter::once(1).chain((1..cols).map(|c| 4 + 2 * (c - 1))).collect();
    let dangling = [2, rank - 1];
    let perm: Vec<usize> = phys.iter().chain(&ups).chain(&dangling).copied().collect();
    let t = acc.permute(&perm)?;
    let mut q_in = 0;
    for c in 0..cols {
        q_in += bond_qubits(p.dim(last, c, Leg::Up), site(last, c, cols))?;
    }
    let m = t.to_matrix(&(0..cols).collect::<Vec<_>>())?;
    Ok((m, q_in))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peps::contract_all;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn shape(rows: usize, cols: usize, nb: usize) -> LatticeShape {
        LatticeShape::new(rows, cols, nb).unwrap()
    }

    fn random_theta(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-PI..PI)).collect()
    }

    #[test]
    fn serpentine_visit_order() {
        let order: Vec<usize> = zigzag_order(shape(3, 3, 1)).iter().map(|s| s.site).collect();
        assert_eq!(order, vec![1, 2, 3, 6, 5, 4, 7, 8, 9]);
        let big = zigzag_order(shape(4, 5, 1));
        assert_eq!(big.len(), 20);
        assert_eq!(big.iter().map(|s| s.site).collect::<Vec<_>>()[5..10], [10, 9, 8, 7, 6]);
    }

    #[test]
    fn every_bond_produced_once_then_consumed_once() {
        for (rows, cols) in [(1, 1), (1, 4), (3, 3), (4, 5), (5, 2), (6, 6)] {
            let steps = zigzag_order(shape(rows, cols, 1));
            assert!(steps[0].inputs.is_empty());
            let mut produced: HashMap<Bond, usize> = HashMap::new();
            let mut consumed: HashMap<Bond, usize> = HashMap::new();
            for (k, st) in steps.iter().enumerate() {
                for b in &st.inputs {
                    let at = produced.get(b).expect("input produced earlier");
                    assert!(*at < k);
                    assert!(consumed.insert(*b, k).is_none());
                }
                for b in &st.outputs {
                    assert!(produced.insert(*b, k).is_none());
                }
            }
            let edges = rows * (cols - 1) + (rows - 1) * cols;
            assert_eq!(produced.len(), edges);
            assert_eq!(consumed.len(), edges);
        }
    }

    #[test]
    fn qubit_count_values() {
        assert_eq!(qubit_count(shape(3, 3, 1)), 5);
        assert_eq!(qubit_count(shape(8, 8, 1)), 10);
        assert_eq!(qubit_count(shape(3, 3, 2)), 9);
    }

    #[test]
    fn efficiency_values() {
        assert!(is_qubit_efficient(shape(3, 3, 1)));
        assert!(!is_qubit_efficient(shape(3, 3, 2)));
        // 25 qubits for 25 sites: not strictly fewer
        assert_eq!(qubit_count(shape(5, 5, 4)), 25);
        assert!(!is_qubit_efficient(shape(5, 5, 4)));
        assert!(is_qubit_efficient(shape(5, 5, 3)));
    }

    #[test]
    fn efficiency_matches_inequality_exhaustively() {
        for rows in 1..=6 {
            for cols in 1..=6 {
                for nb in 1..=3 {
                    let s = shape(rows, cols, nb);
                    let direct = (cols + 1) * nb + 1 < rows * cols;
                    assert_eq!(is_qubit_efficient(s), direct);
                    // integer form of the bound on the bond qubits
                    let bound = (rows * cols - 1 + cols) / (cols + 1); // ceil((NM-1)/(N+1))
                    assert_eq!(is_qubit_efficient(s), rows * cols > 1 && nb < bound);
                }
            }
        }
    }

    #[test]
    fn layout_id_round_trip() {
        let s = shape(4, 5, 1);
        assert_eq!(s.layout_id(), "zigzag-r4-c5-nb1");
        assert_eq!(LatticeShape::from_layout_id(&s.layout_id()).unwrap(), s);
        for bad in ["", "zigzag-r3-c3", "zigzag-r3-c3-nb1-x", "tensors-r3-c3", "zigzag-r0-c3-nb1"] {
            assert!(matches!(LatticeShape::from_layout_id(bad), Err(CompileError::BadLayoutId(_))));
        }
        assert!(LatticeShape::new(0, 3, 1).is_err());
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(parameter_count(shape(3, 3, 1)).unwrap(), 144);
        assert_eq!(parameter_count(shape(2, 2, 1)).unwrap(), 48);
        assert_eq!(parameter_count(shape(4, 5, 1)).unwrap(), 3 * (24 * 4 + 12) + 12 * 4);
        assert!(matches!(parameter_count(shape(3, 3, 2)), Err(CompileError::UnsupportedLayout(_))));
        assert!(matches!(
            compile_parameterized(shape(3, 3, 1), &[0.0; 143]),
            Err(CompileError::ParamCount { expected: 144, found: 143 })
        ));
    }

    #[test]
    fn three_by_three_schedule() {
        let p = compile_parameterized(shape(3, 3, 1), &[0.0; 144]).unwrap();
        assert_eq!(p.n_qubits(), 5);
        assert_eq!(p.n_measurements(), 9);
        let rails: Vec<Vec<usize>> = p.gates().map(|g| g.qubits.clone()).collect();
        assert_eq!(
            rails,
            vec![vec![0, 1, 2], vec![0, 1, 3], vec![0, 1], vec![0, 1, 4], vec![0, 3, 1], vec![0, 2], vec![0, 1, 4]]
        );
        let measured: Vec<(usize, usize)> = p
            .events()
            .iter()
            .filter_map(|e| match e {
                Event::Measure { qubit, site } => Some((*site, *qubit)),
                _ => None,
            })
            .collect();
        assert_eq!(measured, vec![(1, 1), (2, 1), (3, 1), (6, 1), (5, 3), (4, 2), (7, 0), (8, 1), (9, 4)]);
        assert!(p.gates().all(|g| g.params.iter().all(|&x| x == 0.0)));
        assert!(p
            .gates()
            .all(|g| matches!(g.kind, GateKind::TwoQubitBlock | GateKind::ThreeQubitBlock)));
    }

    #[test]
    fn other_shapes_stay_within_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for (rows, cols) in [(2, 2), (2, 4), (4, 3), (4, 5), (5, 2)] {
            let s = shape(rows, cols, 1);
            let theta = random_theta(parameter_count(s).unwrap(), &mut rng);
            let p = compile_parameterized(s, &theta).unwrap();
            // two-row lattices never hold a full middle row of bonds
            assert!(p.n_qubits() <= qubit_count(s));
            assert_eq!(p.n_qubits() == qubit_count(s), rows >= 3);
            assert_eq!(p.n_measurements(), rows * cols);
        }
    }

    #[test]
    fn parameter_tensors_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let s = shape(3, 3, 1);
        for _ in 0..5 {
            let net = tensors_from_parameters(s, &random_theta(144, &mut rng)).unwrap();
            assert!((contract_all(&net).unwrap().norm() - 1.0).abs() < 1e-9);
            for r in 0..3 {
                for c in 0..3 {
                    for leg in [Leg::Right, Leg::Down] {
                        let d = net.dim(r, c, leg);
                        let cap = if r == 2 && leg == Leg::Right { 4 } else { 2 };
                        assert!(d <= cap, "site ({r},{c}) {leg:?} has dimension {d}");
                    }
                }
            }
        }
    }

    #[test]
    fn final_row_parameters_are_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let s = shape(3, 3, 1);
        let theta = random_theta(144, &mut rng);
        let mut moved = theta.clone();
        for x in &mut moved[120..] {
            *x += 0.3;
        }
        let (a, b) = (tensors_from_parameters(s, &theta).unwrap(), tensors_from_parameters(s, &moved).unwrap());
        for k in 0..6 {
            assert_eq!(a.tensors()[k], b.tensors()[k]);
        }
        assert_ne!(a.tensors()[8], b.tensors()[8]);
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let s = shape(3, 3, 1);
        let theta = random_theta(144, &mut rng);
        for p in [
            compile_parameterized(s, &theta).unwrap(),
            compile_tensors(&tensors_from_parameters(s, &theta).unwrap()).unwrap(),
        ] {
            let text = p.to_json();
            let back = GateProgram::from_json(&text).unwrap();
            assert_eq!(back, p);
            assert_eq!(back.to_json(), text);
        }
    }

    #[test]
    fn json_field_names() {
        let p = compile_parameterized(shape(2, 2, 1), &[0.0; 48]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        for key in ["n_qubits", "events", "site_map", "layout_id"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["events"][0]["type"], "gate");
        assert_eq!(v["events"][0]["kind"], "ThreeQubitBlock");
        assert_eq!(v["events"][1]["type"], "measure");
        assert_eq!(v["events"][2]["type"], "reset");
        assert_eq!(v["site_map"]["0"], 1);
    }

    #[test]
    fn invariant_breaches_rejected() {
        let g = GateSpec::new(GateKind::Ms, vec![], vec![0, 1]).unwrap();
        let m = |qubit, site| Event::Measure { qubit, site };
        let r = |qubit| Event::Reset { qubit };
        assert!(GateProgram::new(2, vec![Event::Gate(g.clone()), m(0, 1), r(0), m(1, 2), r(1)], "t").is_ok());
        assert!(matches!(
            GateProgram::new(2, vec![m(0, 1), Event::Gate(g.clone()), r(0)], "t"),
            Err(ProgramError::MeasureWithoutReset { index: 0, qubit: 0 })
        ));
        assert!(matches!(
            GateProgram::new(2, vec![r(0)], "t"),
            Err(ProgramError::ResetWithoutMeasure { index: 0, .. })
        ));
        assert!(matches!(
            GateProgram::new(2, vec![m(0, 1), r(1)], "t"),
            Err(ProgramError::MeasureWithoutReset { .. })
        ));
        assert!(matches!(
            GateProgram::new(2, vec![m(0, 2), r(0)], "t"),
            Err(ProgramError::SitesNotBijective(1))
        ));
        assert!(matches!(
            GateProgram::new(2, vec![m(0, 1), r(0), m(1, 1), r(1)], "t"),
            Err(ProgramError::SitesNotBijective(2))
        ));
        assert!(matches!(
            GateProgram::new(1, vec![Event::Gate(g)], "t"),
            Err(ProgramError::QubitOutOfRange { qubit: 1, .. })
        ));
        let text = GateProgram::new(1, vec![m(0, 1), r(0)], "t").unwrap().to_json().replace("\"0\": 1", "\"0\": 2");
        assert!(GateProgram::from_json(&text).is_err());
    }

    #[test]
    fn product_network_compiles_to_single_qubit_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut tensors = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                let rank = legs(3, 3, r, c).len();
                let mut shape = vec![1; rank];
                shape[0] = 2;
                let (a, b) = (rng.gen_range(0.0..PI), rng.gen_range(-PI..PI));
                tensors.push(Tensor::new(shape, vec![C64::new(a.cos(), 0.0), C64::from_polar(a.sin(), b)]).unwrap());
            }
        }
        let net = PepsNetwork::new(3, 3, tensors).unwrap();
        let p = compile_tensors(&net).unwrap();
        assert_eq!(p.n_measurements(), 9);
        assert!(p.gates().all(|g| g.qubits.len() == 1));
        assert_eq!(p.n_qubits(), 1);
    }

    #[test]
    fn non_isometric_network_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let net = PepsNetwork::random(3, 3, 2, &mut rng);
        assert!(matches!(compile_tensors(&net), Err(CompileError::IsometryViolation { site: 1, .. })));
        let odd = PepsNetwork::random(2, 2, 3, &mut rng);
        assert!(matches!(compile_tensors(&odd), Err(CompileError::NotPowerOfTwo { dim: 3, .. })));
    }

    #[test]
    fn compiled_tensors_use_same_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let s = shape(3, 3, 1);
        let net = tensors_from_parameters(s, &random_theta(144, &mut rng)).unwrap();
        let p = compile_tensors(&net).unwrap();
        assert_eq!(p.n_qubits(), 5);
        assert_eq!(p.layout_id(), "tensors-r3-c3");
        let widths: Vec<usize> = p.gates().map(|g| g.qubits.len()).collect();
        assert_eq!(widths, vec![3, 3, 2, 3, 3, 2, 3]);
    }
}
