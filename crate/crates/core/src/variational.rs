//! Variational minimization of the Wen-model energy over the block
//! parameters, evaluated by exact contraction of the parameterized network.
//!
//! Every raw angle enters each gate through a single half- or full-angle
//! phase, so the energy restricted to one coordinate is a first harmonic
//! `a + b cos x + c sin x`. [`Method::Sinusoidal`] exploits this: three
//! evaluations fix the harmonic and its minimum is taken in closed form.

use std::cell::Cell;
use std::f64::consts::{FRAC_PI_4, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{parameter_count, tensors_from_parameters, CompileError, LatticeShape};
use crate::lattice::{boundary_loop, wen_model, LatticeError, StateVector};
use crate::pauli::{OperatorSum, PauliString};
use crate::peps::{contract_all, PepsError};

/// Field strengths of the reference sweep.
pub const DEFAULT_G_LIST: [f64; 6] = [0.0, 0.1, 0.2, 0.4, 0.6, 1.0];

#[derive(Debug, Error)]
pub enum VariationalError {
    #[error(transparent)]
    Compile(#[from] CompileError),

    #[error(transparent)]
    Peps(#[from] PepsError),

    #[error(transparent)]
    Lattice(#[from] LatticeError),

    #[error("empty list of field strengths")]
    EmptyGList,

    #[error("invalid optimizer options: {0}")]
    BadOptions(String),

    #[error("checkpoint has {found} parameters, layout {layout} needs {expected}")]
    CheckpointMismatch { layout: String, expected: usize, found: usize },

    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type VariationalResult<T> = Result<T, VariationalError>;

/// Normalized state of the parameterized network.
pub fn state(shape: LatticeShape, theta: &[f64]) -> VariationalResult<StateVector> {
    Ok(contract_all(&tensors_from_parameters(shape, theta)?)?)
}

fn rayleigh(psi: &StateVector, h: &OperatorSum) -> VariationalResult<f64> {
    let n2 = psi.norm().powi(2);
    Ok(psi.expectation(h)?.re / n2)
}

/// `<ψ(θ)|H(g)|ψ(θ)> / <ψ(θ)|ψ(θ)>`.
pub fn energy(shape: LatticeShape, theta: &[f64], g: f64) -> VariationalResult<f64> {
    let h = wen_model(shape.rows, shape.cols, g)?;
    rayleigh(&state(shape, theta)?, &h)
}

/// `<O>` of the boundary loop in the parameterized state (3×3 only).
pub fn loop_value(shape: LatticeShape, theta: &[f64]) -> VariationalResult<f64> {
    let o: PauliString = boundary_loop(shape.rows, shape.cols)?;
    let psi = state(shape, theta)?;
    let n2 = psi.norm().powi(2);
    Ok(psi.expectation_string(&o)?.re / n2)
}

/// Energy at fixed `g` with an evaluation counter.
pub struct Objective {
    shape: LatticeShape,
    hamiltonian: OperatorSum,
    evaluations: Cell<usize>,
}

impl Objective {
    pub fn new(shape: LatticeShape, g: f64) -> VariationalResult<Self> {
        parameter_count(shape)?;
        Ok(Self { shape, hamiltonian: wen_model(shape.rows, shape.cols, g)?, evaluations: Cell::new(0) })
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.evaluations.set(self.evaluations.get() + 1);
        state(self.shape, theta).and_then(|psi| rayleigh(&psi, &self.hamiltonian)).unwrap_or(f64::INFINITY)
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.get()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Coordinate sweeps with a closed-form minimum per angle.
    Sinusoidal,
    /// Linear-approximation trust region (COBYLA).
    Cobyla,
    /// Downhill simplex.
    NelderMead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Options {
    pub method: Method,
    pub max_evaluations: usize,
    /// Stop once an iteration lowers the objective by less than this.
    pub tol: f64,
    /// Initial step in radians (simplex edge, trust radius).
    pub step: f64,
    /// Every evaluated angle stays within `[-bound, bound]`.
    pub bound: f64,
    /// Once a local search converges, the rest of the budget goes to hops:
    /// every angle of the best point is shifted by up to `±kick` and the
    /// search rerun, keeping only improvements. Zero disables hopping.
    pub kick: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self { method: Method::Sinusoidal, max_evaluations: 20_000, tol: 1e-7, step: 0.3, bound: 2.0 * PI, kick: 1.0 }
    }
}

impl Options {
    fn check(&self) -> VariationalResult<()> {
        let bad = |m: &str| Err(VariationalError::BadOptions(m.into()));
        if self.max_evaluations == 0 {
            return bad("max_evaluations must be positive");
        }
        if !(self.tol >= 0.0) || !(self.step > 0.0) || !(self.kick >= 0.0 && self.kick.is_finite()) {
            return bad("tol and kick must be non-negative and step positive");
        }
        if !(self.bound >= PI) {
            return bad("bound must be at least pi");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationResult {
    pub g: f64,
    pub theta: Vec<f64>,
    pub energy: f64,
    pub evaluations: usize,
    /// True when the tolerance, not the budget, ended the run.
    pub converged: bool,
    /// Accepted objective value after each iteration.
    pub trace: Vec<f64>,
}

/// Uniform in `[-π/4, π/4]` per angle.
pub fn random_init(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-FRAC_PI_4..=FRAC_PI_4)).collect()
}

fn wrap(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y < -PI { y + 2.0 * PI } else { y }
}

/// Derivative-free minimization of the energy at field `g`.
pub fn minimize(shape: LatticeShape, g: f64, theta_init: &[f64], options: &Options) -> VariationalResult<OptimizationResult> {
    options.check()?;
    let n = parameter_count(shape)?;
    if theta_init.len() != n {
        return Err(CompileError::ParamCount { expected: n, found: theta_init.len() }.into());
    }
    if theta_init.iter().any(|x| !(x.abs() <= options.bound)) {
        return Err(VariationalError::BadOptions("initial angles outside the bounds".into()));
    }
    let f = Objective::new(shape, g)?;
    let local = |x: &[f64]| match options.method {
        Method::Sinusoidal => sinusoidal(&f, x, options),
        Method::Cobyla => cobyla_run(&f, x, options),
        Method::NelderMead => nelder_mead(&f, x, options),
    };
    let (mut theta, mut energy, mut converged, mut trace) = local(theta_init);
    if options.kick > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(fingerprint(theta_init));
        // hop while at least one more coordinate sweep fits in the budget
        while converged && f.evaluations() + 2 * n + 1 <= options.max_evaluations {
            let x: Vec<f64> = theta.iter().map(|t| wrap(t + options.kick * rng.gen_range(-1.0..=1.0))).collect();
            let (y, e, c, _) = local(&x);
            if e < energy {
                (theta, energy, converged) = (y, e, c);
                trace.push(e);
            }
        }
    }
    Ok(OptimizationResult { g, theta, energy, evaluations: f.evaluations(), converged, trace })
}

/// Stable hash of the starting angles, so hops are reproducible.
fn fingerprint(x: &[f64]) -> u64 {
    x.iter().fold(0xcbf2_9ce4_8422_2325, |h, v| (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3))
}

fn sinusoidal(f: &Objective, init: &[f64], o: &Options) -> (Vec<f64>, f64, bool, Vec<f64>) {
    let mut x = init.to_vec();
    let mut e = f.eval(&x);
    let mut trace = vec![e];
    let third = 2.0 * PI / 3.0;
    loop {
        let start = e;
        for i in 0..x.len() {
            if f.evaluations() + 2 > o.max_evaluations {
                return (x, e, false, trace);
            }
            let a = x[i];
            x[i] = wrap(a + third);
            let fp = f.eval(&x);
            x[i] = wrap(a - third);
            let fm = f.eval(&x);
            let c0 = (e + fp + fm) / 3.0;
            let c1 = (2.0 * e - fp - fm) / 3.0;
            let s1 = (fp - fm) / 3f64.sqrt();
            let best = c0 - c1.hypot(s1);
            // keep the old angle unless the model promises a real decrease
            if best < e - 1e-13 {
                x[i] = wrap(a + (-s1).atan2(-c1));
                e = best;
            } else {
                x[i] = a;
            }
        }
        if f.evaluations() + 1 > o.max_evaluations {
            return (x, e, false, trace);
        }
        // resynchronize with the true objective once per sweep
        e = f.eval(&x);
        trace.push(e);
        if start - e < o.tol {
            return (x, e, true, trace);
        }
    }
}

fn cobyla_run(f: &Objective, init: &[f64], o: &Options) -> (Vec<f64>, f64, bool, Vec<f64>) {
    let e0 = f.eval(init);
    let best = Cell::new(e0);
    let trace = std::cell::RefCell::new(vec![e0]);
    let bounds = vec![(-o.bound, o.bound); init.len()];
    let objective = |x: &[f64], _: &mut ()| {
        let v = f.eval(x);
        if v < best.get() {
            best.set(v);
            trace.borrow_mut().push(v);
        }
        v
    };
    let cons: Vec<&dyn cobyla::Func<()>> = Vec::new();
    let tols = cobyla::StopTols { ftol_abs: o.tol, ..Default::default() };
    let budget = o.max_evaluations.saturating_sub(f.evaluations()).max(1);
    let outcome = cobyla::minimize(objective, init, &bounds, &cons, (), budget, cobyla::RhoBeg::All(o.step), Some(tols));
    let (x, v, converged) = match outcome {
        Ok((status, x, v)) => (x, v, !matches!(status, cobyla::SuccessStatus::MaxEvalReached)),
        Err((_, x, v)) => (x, v, false),
    };
    let trace = trace.into_inner();
    if v <= e0 {
        (x, v, converged, trace)
    } else {
        (init.to_vec(), e0, converged, trace)
    }
}

fn nelder_mead(f: &Objective, init: &[f64], o: &Options) -> (Vec<f64>, f64, bool, Vec<f64>) {
    let n = init.len();
    let clamp = |x: &mut Vec<f64>| x.iter_mut().for_each(|v| *v = v.clamp(-o.bound, o.bound));
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((init.to_vec(), f.eval(init)));
    for i in 0..n {
        if f.evaluations() >= o.max_evaluations {
            break;
        }
        let mut x = init.to_vec();
        x[i] += if x[i] + o.step <= o.bound { o.step } else { -o.step };
        let v = f.eval(&x);
        simplex.push((x, v));
    }
    let mut trace = vec![simplex[0].1];
    if simplex.len() < n + 1 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, v) = simplex.swap_remove(0);
        return (x, v, false, trace);
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (lo, hi) = (simplex[0].1, simplex[n].1);
        if trace.last().is_some_and(|&t| lo < t) {
            trace.push(lo);
        }
        if hi - lo < o.tol {
            return (simplex[0].0.clone(), lo, true, trace);
        }
        if f.evaluations() + 2 > o.max_evaluations {
            return (simplex[0].0.clone(), lo, false, trace);
        }
        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64).collect();
        let toward = |t: f64| -> Vec<f64> {
            let mut x: Vec<f64> = (0..n).map(|j| centroid[j] + t * (simplex[n].0[j] - centroid[j])).collect();
            clamp(&mut x);
            x
        };
        let xr = toward(-alpha);
        let fr = f.eval(&xr);
        if fr < lo {
            let xe = toward(-alpha * gamma);
            let fe = f.eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < hi {
                let x = toward(-rho);
                let v = f.eval(&x);
                (x, v)
            } else {
                let x = toward(rho);
                let v = f.eval(&x);
                (x, v)
            };
            if fc < hi.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for k in 1..=n {
                    if f.evaluations() >= o.max_evaluations {
                        break;
                    }
                    let x: Vec<f64> = (0..n).map(|j| best[j] + sigma * (simplex[k].0[j] - best[j])).collect();
                    let v = f.eval(&x);
                    simplex[k] = (x, v);
                }
            }
        }
    }
}

fn restart_rng(seed: u64, g_index: usize, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((g_index as u64) << 32) | restart as u64);
    rng
}

/// Best of `restarts` minimizations per `g`, in the given order. From the
/// second `g` on, one of the restarts starts from the previous best angles.
pub fn sweep(
    shape: LatticeShape,
    g_list: &[f64],
    restarts: usize,
    seed: u64,
    options: &Options,
) -> VariationalResult<Vec<OptimizationResult>> {
    if g_list.is_empty() {
        return Err(VariationalError::EmptyGList);
    }
    if restarts == 0 {
        return Err(VariationalError::BadOptions("restarts must be positive".into()));
    }
    let n = parameter_count(shape)?;
    let mut results: Vec<OptimizationResult> = Vec::with_capacity(g_list.len());
    for (gi, &g) in g_list.iter().enumerate() {
        let mut best: Option<OptimizationResult> = None;
        for r in 0..restarts {
            let init = match (r, results.last()) {
                (0, Some(prev)) => prev.theta.clone(),
                _ => random_init(n, &mut restart_rng(seed, gi, r)),
            };
            let res = minimize(shape, g, &init, options)?;
            if best.as_ref().is_none_or(|b| res.energy < b.energy) {
                best = Some(res);
            }
        }
        results.push(best.expect("at least one restart"));
    }
    Ok(results)
}

/// Optimized angles for one `g`, as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub g: f64,
    pub theta: Vec<f64>,
    pub energy: f64,
    pub evaluations: usize,
    pub seed: u64,
    pub layout_id: String,
}

impl Checkpoint {
    pub fn from_result(r: &OptimizationResult, seed: u64, shape: LatticeShape) -> Self {
        Self {
            g: r.g,
            theta: r.theta.clone(),
            energy: r.energy,
            evaluations: r.evaluations,
            seed,
            layout_id: shape.layout_id(),
        }
    }

    /// Shape named by the layout id, checked against the angle count.
    pub fn shape(&self) -> VariationalResult<LatticeShape> {
        let shape = LatticeShape::from_layout_id(&self.layout_id)?;
        let expected = parameter_count(shape)?;
        if expected != self.theta.len() {
            return Err(VariationalError::CheckpointMismatch {
                layout: self.layout_id.clone(),
                expected,
                found: self.theta.len(),
            });
        }
        Ok(shape)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> VariationalResult<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        c.shape()?;
        Ok(c)
    }
}
