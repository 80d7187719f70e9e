//! Command-line front end.
//!
//! Every subcommand writes its main CSV to `--out` (default `<command>.csv`)
//! and a manifest JSON next to it with the full configuration, seeds and
//! convergence flags. Exit codes: 0 success, 1 invalid model or failed run,
//! 2 a solver did not converge (outputs are still written), 64 bad usage.

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Serialize, Serializer};
use serde_json::{json, Value};

use crate::dynbp::{dynbp_evolve, extended_gbp_evolve, DegeneratePolicy, DynOptions, Trajectory, UpdateRule};
use crate::error::{Error, Result};
use crate::exact::{exact_distribution, marginal_of};
use crate::gbp::{gbp_parent_to_child, region_free_energy, sum_product_bp, variable_beliefs, SolverOptions};
use crate::io::{write_canonical_json, Csv, FrameStack, GrayImage, ModelFile};
use crate::ising::{
    build_random_ising_with, free_energy_ratio, run_belief_trace, run_error_histogram, FieldConfig, IsingParams,
    KineticParams, RatioConfig, RunConfig, Topology,
};
use crate::motion::{
    detect_motion_from, run_motion_demo, FrameSequence, MessageStart, MotionParams, VideoConfig,
};
use crate::report;
use crate::temporal::{priors_from_product, TemporalModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

fn as_display<T: Display, S: Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Parser)]
#[command(name = "dynbp", version, about = "Region-based inference for discrete graphical models, static and over time")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file and report every problem.
    Validate(ModelArgs),
    /// Brute-force log Z and marginals.
    Exact(ModelArgs),
    /// Loopy sum-product BP on the static factors.
    Bp(StaticArgs),
    /// Parent-to-child GBP on the file's regions, or Bethe regions.
    Gbp(StaticArgs),
    /// DynBP over the temporal factors.
    Dynbp(TemporalArgs),
    /// Space-time GBP with the priors as factors.
    ExtGbp(TemporalArgs),
    /// One node's belief over time on a random kinetic Ising lattice.
    IsingTrace(TraceArgs),
    /// Relative error of DynBP against the exact evolution over many seeds.
    IsingHist(HistArgs),
    /// Path free energy of DynBP against space-time GBP on random tori.
    FeRatio(RatioArgs),
    /// Moving-object detection on a synthetic or supplied video.
    MotionDemo(MotionArgs),
}

#[derive(Debug, Args, Serialize)]
struct OutArgs {
    /// Main CSV output; the manifest and any extra files sit beside it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct SolverArgs {
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-12)]
    clamp_floor: f64,
}

impl SolverArgs {
    fn options(&self) -> Result<SolverOptions> {
        let opts = SolverOptions {
            max_iters: self.max_iters,
            tolerance: self.tol,
            damping: self.damping,
            clamp_floor: self.clamp_floor,
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Args, Serialize)]
struct DynArgs {
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    /// Child-to-parent update: `joint` or `per-edge`.
    #[arg(long, default_value = "joint")]
    #[serde(serialize_with = "as_display")]
    update_rule: UpdateRule,
    /// `error` or `fixed:<k>` for edges whose counting numbers cancel.
    #[arg(long)]
    #[serde(serialize_with = "opt_display")]
    degenerate_exponent: Option<DegeneratePolicy>,
}

fn opt_display<T: Display, S: Serializer>(v: &Option<T>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.collect_str(v),
        None => s.serialize_none(),
    }
}

impl DynArgs {
    fn options(&self, default_policy: DegeneratePolicy) -> Result<DynOptions> {
        Ok(DynOptions {
            solver: self.solver.options()?,
            degenerate: self.degenerate_exponent.unwrap_or(default_policy),
            rule: self.update_rule,
        })
    }
}

#[derive(Debug, Args, Serialize)]
struct StaticArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct TemporalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Start from this joint state (comma separated) instead of uniform.
    #[arg(long, value_delimiter = ',')]
    initial_state: Option<Vec<usize>>,
    #[command(flatten)]
    #[serde(flatten)]
    dynamics: DynArgs,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct LatticeArgs {
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 4)]
    cols: usize,
    #[arg(long, default_value = "torus")]
    #[serde(serialize_with = "as_display_topology")]
    topology: Topology,
    /// Variance of the per-site fields.
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    /// Variance of the per-bond couplings.
    #[arg(long, default_value_t = 0.1)]
    j: f64,
    #[arg(long, default_value_t = 0.1)]
    theta_dt: f64,
    /// Initial P(s = +1) at every site.
    #[arg(long, default_value_t = 0.9)]
    p_up: f64,
    #[arg(long, default_value_t = 10)]
    steps: usize,
}

fn as_display_topology<S: Serializer>(t: &Topology, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(match t {
        Topology::Torus => "torus",
        Topology::Open => "open",
    })
}

impl LatticeArgs {
    fn run(&self) -> Result<RunConfig> {
        check_probability("p-up", self.p_up)?;
        Ok(RunConfig { kinetic: KineticParams::new(self.theta_dt)?, p_up: self.p_up, steps: self.steps })
    }
}

#[derive(Debug, Args, Serialize)]
struct TraceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    lattice: LatticeArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Site id `row * cols + col` to trace.
    #[arg(long, default_value_t = 0)]
    node: usize,
    #[command(flatten)]
    #[serde(flatten)]
    dynamics: DynArgs,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct HistArgs {
    #[command(flatten)]
    #[serde(flatten)]
    lattice: LatticeArgs,
    /// Number of seeds, counted up from `--seed`.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    node: usize,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    #[serde(flatten)]
    dynamics: DynArgs,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct RatioArgs {
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 3)]
    cols: usize,
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    #[arg(long, default_value_t = 0.1)]
    j: f64,
    #[arg(long, default_value_t = 0.1)]
    theta_dt: f64,
    /// A nearly pinned start; broad priors open a Jensen gap between the two
    /// free energies.
    #[arg(long, default_value_t = 0.999)]
    p_up: f64,
    /// Transitions summed into each free energy. Later steps start from
    /// each solver's own, broader, beliefs.
    #[arg(long, default_value_t = 1)]
    steps: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    #[serde(flatten)]
    dynamics: DynArgs,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct MotionArgs {
    #[arg(long, default_value_t = 50)]
    width: usize,
    #[arg(long, default_value_t = 50)]
    height: usize,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long, default_value_t = 5)]
    patch: usize,
    /// Number of synthetic videos, seeded from `--seed` upwards.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    score_from: usize,
    #[arg(long, default_value_t = 0.99)]
    theta_s: f64,
    #[arg(long, default_value_t = 0.6)]
    theta_t: f64,
    /// Number of motion states C.
    #[arg(long, default_value_t = 2)]
    bins: usize,
    #[arg(long, default_value_t = 0.125)]
    diff_threshold: f64,
    /// `still-scene` or `cold`.
    #[arg(long, default_value = "still-scene")]
    message_start: MessageStart,
    /// Frame stack file or directory of PGM frames to run on instead.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write the DynBP masks here as PGM files.
    #[arg(long)]
    mask_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    #[serde(flatten)]
    dynamics: DynArgs,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Usage(format!("{name} must lie in [0, 1], got {p}")))
    }
}

/// What a subcommand hands back for the manifest.
struct Outcome {
    converged: bool,
    valid: bool,
    seeds: Vec<u64>,
    details: Value,
    outputs: Vec<PathBuf>,
}

impl Outcome {
    fn new(outputs: Vec<PathBuf>) -> Self {
        Outcome { converged: true, valid: true, seeds: vec![], details: Value::Null, outputs }
    }
}

fn beside(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

fn out_path(out: &OutArgs, command: &str) -> PathBuf {
    out.out.clone().unwrap_or_else(|| PathBuf::from(format!("{command}.csv")))
}

fn write_all(files: &[(&Path, &Csv)]) -> Result<()> {
    for (path, csv) in files {
        csv.write(path)?;
    }
    Ok(())
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => EXIT_USAGE,
                _ => EXIT_INVALID,
            }
        }
    }
}

fn dispatch(command: &Command) -> Result<i32> {
    let (name, config, out) = match command {
        Command::Validate(a) => ("validate", serde_json::to_value(a)?, &a.out),
        Command::Exact(a) => ("exact", serde_json::to_value(a)?, &a.out),
        Command::Bp(a) => ("bp", serde_json::to_value(a)?, &a.out),
        Command::Gbp(a) => ("gbp", serde_json::to_value(a)?, &a.out),
        Command::Dynbp(a) => ("dynbp", serde_json::to_value(a)?, &a.out),
        Command::ExtGbp(a) => ("ext-gbp", serde_json::to_value(a)?, &a.out),
        Command::IsingTrace(a) => ("ising-trace", serde_json::to_value(a)?, &a.out),
        Command::IsingHist(a) => ("ising-hist", serde_json::to_value(a)?, &a.out),
        Command::FeRatio(a) => ("fe-ratio", serde_json::to_value(a)?, &a.out),
        Command::MotionDemo(a) => ("motion-demo", serde_json::to_value(a)?, &a.out),
    };
    let out = out_path(out, name);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let outcome = match command {
        Command::Validate(a) => validate(a, &out)?,
        Command::Exact(a) => exact(a, &out)?,
        Command::Bp(a) => static_solve(a, &out, false)?,
        Command::Gbp(a) => static_solve(a, &out, true)?,
        Command::Dynbp(a) => temporal_solve(a, &out, false)?,
        Command::ExtGbp(a) => temporal_solve(a, &out, true)?,
        Command::IsingTrace(a) => ising_trace(a, &out)?,
        Command::IsingHist(a) => ising_hist(a, &out)?,
        Command::FeRatio(a) => fe_ratio(a, &out)?,
        Command::MotionDemo(a) => motion_demo(a, &out)?,
    };
    let code = if !outcome.valid {
        EXIT_INVALID
    } else if !outcome.converged {
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    };
    let manifest = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "seeds": outcome.seeds,
        "valid": outcome.valid,
        "converged": outcome.converged,
        "details": outcome.details,
        "outputs": outcome.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "exit_code": code,
    });
    write_canonical_json(&beside(&out, "manifest.json"), &manifest)?;
    Ok(code)
}

fn validate(a: &ModelArgs, out: &Path) -> Result<Outcome> {
    let problems = ModelFile::load(&a.model)?.problems();
    let mut csv = Csv::new(&["problem"]);
    for p in &problems {
        csv.row([format!("\"{}\"", p.replace('"', "\"\""))]);
    }
    csv.write(out)?;
    if problems.is_empty() {
        println!("valid");
    } else {
        for p in &problems {
            println!("{p}");
        }
    }
    let mut outcome = Outcome::new(vec![out.to_path_buf()]);
    outcome.valid = problems.is_empty();
    outcome.details = json!({ "problems": problems });
    Ok(outcome)
}

fn load_valid(path: &Path) -> Result<ModelFile> {
    let file = ModelFile::load(path)?;
    let problems = file.problems();
    if !problems.is_empty() {
        return Err(Error::InvalidModel(problems.join("; ")));
    }
    Ok(file)
}

fn exact(a: &ModelArgs, out: &Path) -> Result<Outcome> {
    let fg = load_valid(&a.model)?.factor_graph()?;
    let dist = exact_distribution(&fg)?;
    let cards = fg.cardinalities();
    let marginals: Vec<Vec<f64>> = (0..fg.num_variables()).map(|v| marginal_of(&dist.probabilities, &cards, &[v])).collect();
    report::marginals_csv(&marginals).write(out)?;
    println!("log Z = {}", dist.log_z);
    let mut outcome = Outcome::new(vec![out.to_path_buf()]);
    outcome.details = json!({ "log_z": dist.log_z });
    Ok(outcome)
}

fn static_solve(a: &StaticArgs, out: &Path, regions: bool) -> Result<Outcome> {
    let file = load_valid(&a.model)?;
    let fg = file.factor_graph()?;
    let opts = a.solver.options()?;
    let (marginals, res, free_energy) = if regions {
        let rg = file.static_regions()?;
        let res = gbp_parent_to_child(&fg, &rg, &opts)?;
        let f = region_free_energy(&fg, &rg, &res.beliefs, opts.clamp_floor)?;
        (variable_beliefs(&fg, &rg, &res.beliefs), res, f)
    } else {
        let res = sum_product_bp(&fg, &opts)?;
        let f = res.history.last().map(|r| r.free_energy).unwrap_or(f64::NAN);
        (report::solve_marginals(&res, fg.num_variables()), res, f)
    };
    let iterations = beside(out, "iterations.csv");
    write_all(&[(out, &report::marginals_csv(&marginals)), (&iterations, &report::iterations_csv(&res.history))])?;
    println!("free energy = {free_energy}");
    println!("converged = {} after {} iterations", res.converged, res.iterations);
    let mut outcome = Outcome::new(vec![out.to_path_buf(), iterations]);
    outcome.converged = res.converged;
    outcome.details = json!({ "iterations": res.iterations, "free_energy": free_energy });
    Ok(outcome)
}

fn initial_priors(tm: &TemporalModel, state: &Option<Vec<usize>>) -> Result<Vec<Vec<f64>>> {
    let cards = tm.cardinalities();
    let marginals: Vec<Vec<f64>> = match state {
        None => cards.iter().map(|&c| vec![1.0 / c as f64; c]).collect(),
        Some(s) => {
            if s.len() != cards.len() {
                return Err(Error::Usage(format!("initial state has {} values for {} variables", s.len(), cards.len())));
            }
            s.iter()
                .zip(&cards)
                .map(|(&x, &c)| {
                    if x >= c {
                        return Err(Error::Usage(format!("initial state {x} out of range for cardinality {c}")));
                    }
                    Ok((0..c).map(|k| if k == x { 1.0 } else { 0.0 }).collect())
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(priors_from_product(tm, &marginals))
}

fn step_details(traj: &Trajectory) -> Value {
    json!(traj
        .steps
        .iter()
        .map(|s| json!({ "t": s.t, "converged": s.converged, "sweeps": s.sweeps, "ppf": s.ppf }))
        .collect::<Vec<_>>())
}

fn temporal_solve(a: &TemporalArgs, out: &Path, extended: bool) -> Result<Outcome> {
    let tm = load_valid(&a.model)?.temporal_model()?;
    let opts = a.dynamics.options(DegeneratePolicy::Error)?;
    let priors = initial_priors(&tm, &a.initial_state)?;
    let traj = if extended {
        extended_gbp_evolve(&tm, &priors, a.steps, &opts)?
    } else {
        dynbp_evolve(&tm, &priors, a.steps, &opts)?
    };
    let sweeps = beside(out, "sweeps.csv");
    write_all(&[
        (out, &report::trajectory_csv(&traj)),
        (&sweeps, &report::sweeps_csv([("run".to_string(), traj.history.as_slice())])),
    ])?;
    let ppf: f64 = traj.steps.iter().map(|s| s.ppf).sum();
    println!("path free energy = {ppf}");
    let mut outcome = Outcome::new(vec![out.to_path_buf(), sweeps]);
    outcome.converged = traj.all_converged();
    outcome.details = json!({ "steps": step_details(&traj), "ppf_total": ppf });
    Ok(outcome)
}

fn lattice(l: &LatticeArgs, seed: u64) -> Result<IsingParams> {
    build_random_ising_with(l.rows, l.cols, l.topology, l.h, l.j, seed)
}

fn ising_trace(a: &TraceArgs, out: &Path) -> Result<Outcome> {
    let p = lattice(&a.lattice, a.seed)?;
    let opts = a.dynamics.options(DegeneratePolicy::Error)?;
    let trace = run_belief_trace(&p, a.lattice.run()?, a.node, &opts)?;
    let sweeps = beside(out, "sweeps.csv");
    write_all(&[
        (out, &report::trace_csv(&trace)),
        (&sweeps, &report::sweeps_csv([("dynbp".to_string(), trace.dynbp.history.as_slice())])),
    ])?;
    let mut outcome = Outcome::new(vec![out.to_path_buf(), sweeps]);
    outcome.seeds = vec![a.seed];
    outcome.converged = trace.dynbp.all_converged() && trace.loopy_converged;
    outcome.details = json!({
        "dynbp_converged": trace.dynbp.all_converged(),
        "loopy_bp_converged": trace.loopy_converged,
        "steps": step_details(&trace.dynbp),
    });
    Ok(outcome)
}

fn ising_hist(a: &HistArgs, out: &Path) -> Result<Outcome> {
    if a.bins == 0 {
        return Err(Error::Usage("need at least one histogram bin".into()));
    }
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let opts = a.dynamics.options(DegeneratePolicy::Error)?;
    let configs = [FieldConfig { h: a.lattice.h, j: a.lattice.j }];
    let l = &a.lattice;
    if l.topology != Topology::Torus {
        return Err(Error::Usage("the error study runs on a torus".into()));
    }
    let study = run_error_histogram(l.rows, l.cols, &configs, &seeds, a.node, l.run()?, &opts, a.jobs)?;
    let residuals = beside(out, "residuals.csv");
    let bins = beside(out, "bins.csv");
    write_all(&[
        (out, &report::error_samples_csv(&study)),
        (&residuals, &report::residual_curves_csv(&study)),
        (&bins, &report::histogram_csv(&study.histogram(0, a.bins))),
    ])?;
    let within = study.fraction_within(0, 0.1);
    let converged = study.samples.iter().filter(|s| s.converged).count();
    println!("fraction with relative error <= 0.1: {within}");
    println!("converged steps: {converged} of {}", study.samples.len());
    let mut outcome = Outcome::new(vec![out.to_path_buf(), residuals, bins]);
    outcome.seeds = seeds;
    outcome.converged = converged == study.samples.len();
    outcome.details = json!({ "fraction_within_0.1": within, "converged_steps": converged, "steps": study.samples.len() });
    Ok(outcome)
}

fn fe_ratio(a: &RatioArgs, out: &Path) -> Result<Outcome> {
    check_probability("p-up", a.p_up)?;
    let cfg = RatioConfig {
        rows: a.rows,
        cols: a.cols,
        field_variance: a.h,
        coupling_variance: a.j,
        run: RunConfig { kinetic: KineticParams::new(a.theta_dt)?, p_up: a.p_up, steps: a.steps },
    };
    let opts = a.dynamics.options(DegeneratePolicy::Error)?;
    let trials = free_energy_ratio(&cfg, a.trials, a.seed, &opts, a.jobs)?;
    report::ratio_csv(&trials).write(out)?;
    let both = trials.iter().filter(|t| t.converged()).count();
    let in_band = trials.iter().filter(|t| t.converged() && (0.9..=1.1).contains(&t.ratio)).count();
    println!("both converged: {both} of {}", trials.len());
    println!("ratio in [0.9, 1.1]: {in_band} of {both}");
    let mut outcome = Outcome::new(vec![out.to_path_buf()]);
    outcome.seeds = trials.iter().map(|t| t.seed).collect();
    outcome.converged = both == trials.len();
    outcome.details = json!({ "both_converged": both, "in_band": in_band });
    Ok(outcome)
}

fn load_frames(path: &Path) -> Result<FrameSequence> {
    let (width, height, frames) = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
        files.sort();
        let images = files.iter().map(|p| GrayImage::read_pgm(p)).collect::<Result<Vec<_>>>()?;
        let first = images.first().ok_or_else(|| Error::Usage(format!("no .pgm frames in {}", path.display())))?;
        if images.iter().any(|i| i.width != first.width || i.height != first.height) {
            return Err(Error::Format("PGM frames differ in size".into()));
        }
        (first.width, first.height, images.iter().map(|i| i.intensities()).collect::<Vec<_>>())
    } else {
        let stack = FrameStack::read(path)?;
        (stack.width, stack.height, stack.intensities())
    };
    let masks = vec![vec![false; width * height]; frames.len()];
    FrameSequence::new(width, height, frames, masks)
}

fn write_masks(dir: &Path, prefix: &str, width: usize, height: usize, masks: &[Vec<bool>]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    masks
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let path = dir.join(format!("{prefix}frame{k:03}.pgm"));
            GrayImage::from_mask(width, height, m).write_pgm(&path)?;
            Ok(path)
        })
        .collect()
}

fn motion_demo(a: &MotionArgs, out: &Path) -> Result<Outcome> {
    let params = MotionParams { theta_s: a.theta_s, theta_t: a.theta_t, states: a.bins, diff_threshold: a.diff_threshold };
    params.validate()?;
    let opts = a.dynamics.options(DegeneratePolicy::Fixed(0.5))?;
    if let Some(input) = &a.input {
        let fs = load_frames(input)?;
        let det = detect_motion_from(&fs, &params, &opts, a.message_start)?;
        let mut csv = Csv::new(&["frame", "motion_pixels", "converged"]);
        for (k, m) in det.masks.iter().enumerate() {
            let conv = if k == 0 { true } else { det.converged[k - 1] };
            csv.row([k.to_string(), m.iter().filter(|&&x| x).count().to_string(), conv.to_string()]);
        }
        csv.write(out)?;
        let mut outputs = vec![out.to_path_buf()];
        if let Some(dir) = &a.mask_dir {
            outputs.extend(write_masks(dir, "", fs.width, fs.height, &det.masks)?);
        }
        let mut outcome = Outcome::new(outputs);
        outcome.converged = det.all_converged();
        outcome.details = json!({ "degenerate_exponent": opts.degenerate.to_string() });
        return Ok(outcome);
    }
    let video = VideoConfig { width: a.width, height: a.height, frames: a.frames, patch: a.patch, score_from: a.score_from };
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let scores = run_motion_demo(&video, &params, &seeds, &opts, a.message_start, a.jobs)?;
    let frames = beside(out, "frames.csv");
    write_all(&[(out, &report::motion_summary_csv(&scores)), (&frames, &report::motion_frames_csv(&scores))])?;
    let mut outputs = vec![out.to_path_buf(), frames];
    if let Some(dir) = &a.mask_dir {
        for &seed in &seeds {
            let fs = crate::motion::synth_random_patch_video(a.width, a.height, a.frames, a.patch, seed)?;
            let det = detect_motion_from(&fs, &params, &opts, a.message_start)?;
            outputs.extend(write_masks(dir, &format!("seed{seed}_"), a.width, a.height, &det.masks)?);
        }
    }
    for s in &scores {
        println!("seed {}: dynbp {:.4} frame difference {:.4}", s.seed, s.dynbp_iou, s.difference_iou);
    }
    let mut outcome = Outcome::new(outputs);
    outcome.seeds = seeds;
    outcome.converged = scores.iter().all(|s| s.converged);
    outcome.details = json!({
        "degenerate_exponent": opts.degenerate.to_string(),
        "dynbp_beats_difference": scores.iter().all(|s| s.dynbp_iou > s.difference_iou),
    });
    Ok(outcome)
}
