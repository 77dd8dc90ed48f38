//! `pepsq`: exact diagonalization, variational optimization, compilation and
//! circuit simulation of the Wen plaquette model on small grids.
//!
//! All randomness flows from `--seed` (default 0).

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pepsq::compiler::{compile_parameterized, is_qubit_efficient, qubit_count, LatticeShape};
use pepsq::lattice::{boundary_loop, wen_ground};
use pepsq::sim::{apply_depolarizing, exact_observable};
use pepsq::variational::{loop_value, sweep, Checkpoint, Method, Options, DEFAULT_G_LIST};

/// Largest allowed |tn_value - contraction value| in a run row.
const CROSSCHECK_TOL: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "pepsq", version, about = "PEPS-to-circuit pipeline for the Wen plaquette model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ground energy and |<O>| by exact diagonalization over a grid of g.
    Ed(EdArgs),
    /// Optimize the block angles for each g and write one checkpoint per g.
    Optimize(OptimizeArgs),
    /// Compile a checkpoint, simulate it and append a sweep row to a CSV.
    Run(RunArgs),
    /// Write the compiled gate program of a checkpoint as JSON.
    Compile(CompileArgs),
}

#[derive(Args)]
struct EdArgs {
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 3)]
    cols: usize,
    /// Single field value; overrides the grid flags.
    #[arg(long)]
    g: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    g_min: f64,
    #[arg(long, default_value_t = 1.2)]
    g_max: f64,
    #[arg(long, default_value_t = 120)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Sinusoidal,
    Cobyla,
    NelderMead,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Sinusoidal => Method::Sinusoidal,
            MethodArg::Cobyla => Method::Cobyla,
            MethodArg::NelderMead => Method::NelderMead,
        }
    }
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 3)]
    cols: usize,
    /// Comma-separated field values.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_G_LIST)]
    g_list: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::Sinusoidal)]
    method: MethodArg,
    /// Objective evaluations per restart.
    #[arg(long, default_value_t = 20_000)]
    max_evals: usize,
    /// Output directory for the checkpoints.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    shots: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Depolarizing probability after every gate.
    #[arg(long, default_value_t = 0.0)]
    noise_p: f64,
    /// CSV to append to; the header is written when the file is new or empty.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompileArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

fn grid(a: &EdArgs) -> Result<Vec<f64>> {
    if let Some(g) = a.g {
        return Ok(vec![g]);
    }
    ensure!(a.steps >= 1, "--steps must be at least 1");
    ensure!(a.g_max >= a.g_min, "--g-max must not be below --g-min");
    let h = (a.g_max - a.g_min) / a.steps as f64;
    Ok((0..=a.steps).map(|k| if k == a.steps { a.g_max } else { a.g_min + h * k as f64 }).collect())
}

fn cmd_ed(a: &EdArgs) -> Result<()> {
    let gs = grid(a)?;
    // the loop observable only exists on the 3x3 grid
    let obs = boundary_loop(a.rows, a.cols).ok();
    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    w.write_record(["g", "energy", "loop_abs"])?;
    for g in gs {
        let (e, psi) = wen_ground(a.rows, a.cols, g)?;
        let loop_abs = match &obs {
            Some(o) => psi.expectation_string(o)?.norm(),
            None => f64::NAN,
        };
        w.write_record([fmt(g), fmt(e), fmt(loop_abs)])?;
    }
    w.flush()?;
    Ok(())
}

fn checkpoint_name(g: f64) -> String {
    format!("checkpoint_g{g:.4}.json")
}

fn cmd_optimize(a: &OptimizeArgs) -> Result<()> {
    let shape = LatticeShape::new(a.rows, a.cols, 1)?;
    let options = Options { method: a.method.into(), max_evaluations: a.max_evals, ..Options::default() };
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let results = sweep(shape, &a.g_list, a.restarts, a.seed, &options)?;
    for r in &results {
        let path = a.out.join(checkpoint_name(r.g));
        fs::write(&path, Checkpoint::from_result(r, a.seed, shape).to_json())
            .with_context(|| format!("cannot write {}", path.display()))?;
        println!("g={} energy={} evaluations={} -> {}", fmt(r.g), fmt(r.energy), r.evaluations, path.display());
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    Checkpoint::from_json(&text).with_context(|| format!("invalid checkpoint {}", path.display()))
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    ensure!(a.shots >= 1, "--shots must be at least 1");
    let c = load_checkpoint(&a.checkpoint)?;
    let shape = c.shape()?;
    let obs = boundary_loop(shape.rows, shape.cols)?;
    let prog = compile_parameterized(shape, &c.theta)?;

    let (_, ground) = wen_ground(shape.rows, shape.cols, c.g)?;
    let ed_value = ground.expectation_string(&obs)?.norm();
    let tn_value = exact_observable(&prog, &obs)?.abs();
    let residual = (tn_value - loop_value(shape, &c.theta)?.abs()).abs();
    if !(residual <= CROSSCHECK_TOL) {
        bail!("circuit and contraction disagree: residual {residual:e} exceeds {CROSSCHECK_TOL:e}");
    }
    let est = apply_depolarizing(&prog, a.noise_p)?.estimate_observable(&obs, a.shots, a.seed)?;

    let fresh = fs::metadata(&a.out).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&a.out)
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record([
            "g",
            "ed_value",
            "tn_value",
            "circuit_mean",
            "circuit_stderr",
            "shots",
            "seed",
            "noise_p",
            "crosscheck_residual",
        ])?;
    }
    w.write_record([
        fmt(c.g),
        fmt(ed_value),
        fmt(tn_value),
        fmt(est.mean),
        fmt(est.stderr),
        a.shots.to_string(),
        a.seed.to_string(),
        fmt(a.noise_p),
        format!("{residual:.3e}"),
    ])?;
    w.flush()?;
    println!(
        "g={} ed={} tn={} circuit={} +- {}",
        fmt(c.g),
        fmt(ed_value),
        fmt(tn_value),
        fmt(est.mean),
        fmt(est.stderr)
    );
    Ok(())
}

fn cmd_compile(a: &CompileArgs) -> Result<()> {
    let c = load_checkpoint(&a.checkpoint)?;
    let shape = c.shape()?;
    let prog = compile_parameterized(shape, &c.theta)?;
    fs::write(&a.out, prog.to_json()).with_context(|| format!("cannot write {}", a.out.display()))?;
    debug_assert_eq!(prog.n_qubits(), qubit_count(shape));
    println!("n_qubits: {}", prog.n_qubits());
    println!("sites: {}", shape.n_sites());
    println!("qubit-efficient: {}", is_qubit_efficient(shape));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Ed(a) => cmd_ed(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Run(a) => cmd_run(a),
        Command::Compile(a) => cmd_compile(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
