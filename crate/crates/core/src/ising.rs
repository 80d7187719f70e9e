//! Kinetic Ising models on square lattices and the experiments run on them.
//!
//! Spins use state 0 for +1 and state 1 for -1 everywhere.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::dynbp::{dynbp_evolve, extended_gbp_evolve, DynOptions, SweepRecord, Trajectory};
use crate::error::{Error, Result};
use crate::exact::{exact_temporal_evolve, marginal_of, TEMPORAL_STATE_CAP};
use crate::gbp::{sum_product_bp, SolverOptions};
use crate::model::{FactorGraph, FactorTable, VariableDecl};
use crate::par::map_indexed;
use crate::temporal::{
    priors_from_product, product_joint, slice_factor_graph, TemporalFactor, TemporalModel,
};

/// Spin value of a binary state.
pub fn spin(state: usize) -> f64 {
    if state == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Torus,
    Open,
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "torus" => Ok(Topology::Torus),
            "open" => Ok(Topology::Open),
            _ => Err(Error::Usage(format!("topology must be 'torus' or 'open', got '{s}'"))),
        }
    }
}

/// Couplings and fields of a lattice Ising model. Site `(r, c)` has id
/// `r * cols + c`; temperature is folded into `couplings` and `fields`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingParams {
    pub rows: usize,
    pub cols: usize,
    pub topology: Topology,
    /// `(i, j)` with `i < j`; a 2-wide torus repeats a pair, once per bond.
    pub edges: Vec<(usize, usize)>,
    pub couplings: Vec<f64>,
    pub fields: Vec<f64>,
    pub seed: u64,
}

impl IsingParams {
    pub fn num_sites(&self) -> usize {
        self.rows * self.cols
    }

    /// Same lattice with every coupling and field set to the given values.
    pub fn homogeneous(rows: usize, cols: usize, topology: Topology, coupling: f64, field: f64) -> Result<Self> {
        let edges = lattice_edges(rows, cols, topology)?;
        Ok(IsingParams {
            rows,
            cols,
            topology,
            couplings: vec![coupling; edges.len()],
            fields: vec![field; rows * cols],
            edges,
            seed: 0,
        })
    }

    /// Energy `-sum J s_i s_j - sum h s_i` of a state assignment.
    pub fn energy(&self, states: &[usize]) -> f64 {
        let pair: f64 = self
            .edges
            .iter()
            .zip(&self.couplings)
            .map(|(&(i, j), &k)| k * spin(states[i]) * spin(states[j]))
            .sum();
        let site: f64 = states.iter().zip(&self.fields).map(|(&s, &h)| h * spin(s)).sum();
        -pair - site
    }
}

/// Nearest-neighbour bonds: right then down from each site in id order.
pub fn lattice_edges(rows: usize, cols: usize, topology: Topology) -> Result<Vec<(usize, usize)>> {
    if rows < 2 || cols < 2 {
        return Err(Error::Usage(format!("lattice must be at least 2x2, got {rows}x{cols}")));
    }
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let here = id(r, c);
            let wrap = topology == Topology::Torus;
            if c + 1 < cols || wrap {
                let there = id(r, (c + 1) % cols);
                edges.push((here.min(there), here.max(there)));
            }
            if r + 1 < rows || wrap {
                let there = id((r + 1) % rows, c);
                edges.push((here.min(there), here.max(there)));
            }
        }
    }
    Ok(edges)
}

/// Couplings and fields drawn i.i.d. from zero-mean normals with the given
/// variances, from a PCG-64 stream seeded with `seed`. Couplings are drawn
/// first in edge order, then fields in site order.
pub fn build_random_ising_with(
    rows: usize,
    cols: usize,
    topology: Topology,
    field_variance: f64,
    coupling_variance: f64,
    seed: u64,
) -> Result<IsingParams> {
    let edges = lattice_edges(rows, cols, topology)?;
    let normal = |var: f64| {
        Normal::new(0.0, var.sqrt()).map_err(|e| Error::Usage(format!("bad variance {var}: {e}")))
    };
    let (jn, hn) = (normal(coupling_variance)?, normal(field_variance)?);
    let mut rng = Pcg64::seed_from_u64(seed);
    let couplings = (0..edges.len()).map(|_| jn.sample(&mut rng)).collect();
    let fields = (0..rows * cols).map(|_| hn.sample(&mut rng)).collect();
    Ok(IsingParams { rows, cols, topology, edges, couplings, fields, seed })
}

/// Random lattice with couplings and fields of variance 0.1.
pub fn build_random_ising(rows: usize, cols: usize, topology: Topology, seed: u64) -> Result<IsingParams> {
    build_random_ising_with(rows, cols, topology, 0.1, 0.1, seed)
}

/// `exp{J s_i s_j}` per bond and `exp{h s_i}` per site; bond factors first.
pub fn build_static_ising_fg(p: &IsingParams) -> Result<FactorGraph> {
    let variables = (0..p.num_sites()).map(|id| VariableDecl { id, cardinality: 2 }).collect();
    let mut factors = Vec::with_capacity(p.edges.len() + p.num_sites());
    for (k, (&(i, j), &jc)) in p.edges.iter().zip(&p.couplings).enumerate() {
        let values = (0..4).map(|x| (jc * spin(x / 2) * spin(x % 2)).exp()).collect();
        factors.push(FactorTable { id: k, scope: vec![i, j], values });
    }
    for (v, &h) in p.fields.iter().enumerate() {
        let values = (0..2).map(|x| (h * spin(x)).exp()).collect();
        factors.push(FactorTable { id: p.edges.len() + v, scope: vec![v], values });
    }
    FactorGraph::new(variables, factors)
}

/// Glauber-style flip weight per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticParams {
    pub theta_dt: f64,
}

impl KineticParams {
    pub fn new(theta_dt: f64) -> Result<Self> {
        if !(theta_dt > 0.0 && theta_dt < 1.0) {
            return Err(Error::Usage(format!("theta_dt must lie in (0, 1), got {theta_dt}")));
        }
        Ok(KineticParams { theta_dt })
    }
}

/// Unnormalized transition weight of a flip model:
/// `exp{-H(x') + H(x)} (theta_dt)^{flips} (1 - theta_dt)^{N - flips}`.
pub fn kinetic_weight(p: &IsingParams, k: KineticParams, past: &[usize], future: &[usize]) -> f64 {
    let flips = past.iter().zip(future).filter(|(a, b)| a != b).count() as i32;
    let stays = past.len() as i32 - flips;
    (p.energy(past) - p.energy(future)).exp() * k.theta_dt.powi(flips) * (1.0 - k.theta_dt).powi(stays)
}

/// The kinetic conditional as bond and site transition factors on a Bethe
/// region graph. Bond `k` has factor id `k`, site `v` has id `edges + v`.
pub fn build_kinetic_conditional(p: &IsingParams, k: KineticParams) -> Result<TemporalModel> {
    let n = p.num_sites();
    let variables: Vec<VariableDecl> = (0..n).map(|id| VariableDecl { id, cardinality: 2 }).collect();
    let mut factors = Vec::with_capacity(p.edges.len() + n);
    for (id, (&(i, j), &jc)) in p.edges.iter().zip(&p.couplings).enumerate() {
        // Index: (x_i, x_j, x'_i, x'_j), last fastest.
        let values = (0..16)
            .map(|x| {
                let (a, b, c, d) = (spin(x >> 3 & 1), spin(x >> 2 & 1), spin(x >> 1 & 1), spin(x & 1));
                (jc * (c * d - a * b)).exp()
            })
            .collect();
        factors.push(TemporalFactor { id, past_scope: vec![i, j], future_scope: vec![i, j], values });
    }
    for (v, &h) in p.fields.iter().enumerate() {
        let values = (0..4)
            .map(|x| {
                let (a, b) = (x / 2, x % 2);
                let rate = if a == b { 1.0 - k.theta_dt } else { k.theta_dt };
                (h * (spin(b) - spin(a))).exp() * rate
            })
            .collect();
        factors.push(TemporalFactor { id: p.edges.len() + v, past_scope: vec![v], future_scope: vec![v], values });
    }
    TemporalModel::with_bethe_regions(variables, factors)
}

/// Product prior with `P(s = +1) = p_up` at every site.
pub fn uniform_product_marginals(n: usize, p_up: f64) -> Vec<Vec<f64>> {
    vec![vec![p_up, 1.0 - p_up]; n]
}

/// Where an experiment's chain starts and how it moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunConfig {
    pub kinetic: KineticParams,
    /// Initial `P(s = +1)` at every site, independently.
    pub p_up: f64,
    pub steps: usize,
}

/// `P(s = +1)` of one node at one time from each method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: usize,
    pub dynbp: f64,
    pub loopy_bp: f64,
    pub exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTrace {
    pub node: usize,
    pub rows: Vec<TraceRow>,
    pub dynbp: Trajectory,
    /// Whether every per-step loopy BP run converged.
    pub loopy_converged: bool,
}

/// Node marginals over time from loopy BP run on each one-step space-time
/// slice, feeding each step's future marginals forward as the next priors.
pub fn loopy_bp_evolve(
    tm: &TemporalModel,
    initial: &[Vec<f64>],
    steps: usize,
    opts: &SolverOptions,
) -> Result<(Vec<Vec<Vec<f64>>>, bool)> {
    let n = tm.num_variables();
    let mut out = vec![initial.to_vec()];
    let mut converged = true;
    for _ in 0..steps {
        let fg = slice_factor_graph(tm, out.last().expect("non-empty"))?;
        let res = sum_product_bp(&fg, opts)?;
        converged &= res.converged;
        out.push((0..n).map(|v| res.beliefs.get(n + v).to_vec()).collect());
    }
    Ok((out, converged))
}

/// DynBP, loopy BP on the space-time slice and, when the joint fits the
/// oracle cap, the exact evolution of one node's `P(s = +1)`.
pub fn run_belief_trace(
    p: &IsingParams,
    run: RunConfig,
    node: usize,
    opts: &DynOptions,
) -> Result<BeliefTrace> {
    if node >= p.num_sites() {
        return Err(Error::Usage(format!("node {node} outside a {}x{} lattice", p.rows, p.cols)));
    }
    let tm = build_kinetic_conditional(p, run.kinetic)?;
    let marginals = uniform_product_marginals(p.num_sites(), run.p_up);
    let dynbp = dynbp_evolve(&tm, &priors_from_product(&tm, &marginals), run.steps, opts)?;
    let (loopy, loopy_converged) = loopy_bp_evolve(&tm, &marginals, run.steps, &opts.solver)?;
    let exact = if tm.joint_state_count() <= TEMPORAL_STATE_CAP {
        let joints = exact_temporal_evolve(&tm, &product_joint(&marginals), run.steps)?;
        let cards = tm.cardinalities();
        Some(joints.iter().map(|j| marginal_of(j, &cards, &[node])[0]).collect::<Vec<f64>>())
    } else {
        None
    };
    let rows = (0..=run.steps)
        .map(|t| TraceRow {
            t,
            dynbp: dynbp.node_marginals[t][node][0],
            loopy_bp: loopy[t][node][0],
            exact: exact.as_ref().map(|e| e[t]),
        })
        .collect();
    Ok(BeliefTrace { node, rows, dynbp, loopy_converged })
}

/// Field and coupling variances of one random-lattice configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldConfig {
    pub h: f64,
    pub j: f64,
}

/// The three configurations of the node-error study.
pub const ERROR_STUDY_CONFIGS: [FieldConfig; 3] =
    [FieldConfig { h: 0.1, j: 0.5 }, FieldConfig { h: 1.0, j: 0.1 }, FieldConfig { h: 0.1, j: 0.1 }];

/// Relative error of DynBP against the oracle at one (seed, step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSample {
    pub config: usize,
    pub seed: u64,
    pub t: usize,
    pub dynbp: f64,
    pub exact: f64,
    pub rel_err: f64,
    pub converged: bool,
    pub prior_residual: f64,
    pub consistency_residual: f64,
}

/// Sweep history of one (config, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCurve {
    pub config: usize,
    pub seed: u64,
    pub sweeps: Vec<SweepRecord>,
}

/// `bins` equal bins on `[0, 1]`, then one overflow bin for errors above 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(values: impl IntoIterator<Item = f64>, bins: usize) -> Self {
        let mut counts = vec![0; bins + 1];
        for v in values {
            let b = if v > 1.0 { bins } else { ((v * bins as f64) as usize).min(bins - 1) };
            counts[b] += 1;
        }
        Histogram { counts }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStudy {
    pub configs: Vec<FieldConfig>,
    pub node: usize,
    pub samples: Vec<ErrorSample>,
    pub curves: Vec<ResidualCurve>,
}

impl ErrorStudy {
    /// Histogram of the per-step errors of one configuration.
    pub fn histogram(&self, config: usize, bins: usize) -> Histogram {
        Histogram::of(self.samples.iter().filter(|s| s.config == config).map(|s| s.rel_err), bins)
    }

    /// Share of one configuration's samples with error at most `bound`.
    pub fn fraction_within(&self, config: usize, bound: f64) -> f64 {
        let errs: Vec<f64> = self.samples.iter().filter(|s| s.config == config).map(|s| s.rel_err).collect();
        errs.iter().filter(|&&e| e <= bound).count() as f64 / errs.len().max(1) as f64
    }

    /// Mean error over the run, per seed, for one configuration.
    pub fn seed_means(&self, config: usize) -> Vec<(u64, f64)> {
        let mut out: Vec<(u64, f64, usize)> = Vec::new();
        for s in self.samples.iter().filter(|s| s.config == config) {
            match out.iter_mut().find(|o| o.0 == s.seed) {
                Some(o) => {
                    o.1 += s.rel_err;
                    o.2 += 1;
                }
                None => out.push((s.seed, s.rel_err, 1)),
            }
        }
        out.into_iter().map(|(seed, sum, k)| (seed, sum / k as f64)).collect()
    }
}

/// Relative error `|b - p| / p` of DynBP's `P(s = +1)` at `node` against the
/// oracle, for each configuration, seed and step `1..=steps`.
#[allow(clippy::too_many_arguments)]
pub fn run_error_histogram(
    rows: usize,
    cols: usize,
    configs: &[FieldConfig],
    seeds: &[u64],
    node: usize,
    run: RunConfig,
    opts: &DynOptions,
    jobs: usize,
) -> Result<ErrorStudy> {
    let tasks: Vec<(usize, u64)> =
        (0..configs.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let results = map_indexed(tasks.len(), jobs, |k| -> Result<(Vec<ErrorSample>, ResidualCurve)> {
        let (config, seed) = tasks[k];
        let FieldConfig { h, j } = configs[config];
        let p = build_random_ising_with(rows, cols, Topology::Torus, h, j, seed)?;
        let tm = build_kinetic_conditional(&p, run.kinetic)?;
        let marginals = uniform_product_marginals(p.num_sites(), run.p_up);
        let traj = dynbp_evolve(&tm, &priors_from_product(&tm, &marginals), run.steps, opts)?;
        let joints = exact_temporal_evolve(&tm, &product_joint(&marginals), run.steps)?;
        let cards = tm.cardinalities();
        let samples = (1..=run.steps)
            .map(|t| {
                let exact = marginal_of(&joints[t], &cards, &[node])[0];
                let dynbp = traj.node_marginals[t][node][0];
                let step = &traj.steps[t - 1];
                ErrorSample {
                    config,
                    seed,
                    t,
                    dynbp,
                    exact,
                    rel_err: (dynbp - exact).abs() / exact,
                    converged: step.converged,
                    prior_residual: step.prior_residual,
                    consistency_residual: step.consistency_residual,
                }
            })
            .collect();
        Ok((samples, ResidualCurve { config, seed, sweeps: traj.history }))
    });
    let mut samples = Vec::new();
    let mut curves = Vec::new();
    for r in results {
        let (s, c) = r?;
        samples.extend(s);
        curves.push(c);
    }
    Ok(ErrorStudy { configs: configs.to_vec(), node, samples, curves })
}

/// One trial of the DynBP / space-time GBP free-energy comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioTrial {
    pub trial: usize,
    pub seed: u64,
    /// Summed path free energy over the run.
    pub f_dynbp: f64,
    pub f_ext: f64,
    /// `f_dynbp / f_ext`; exactly 1 when they agree to 1e-12, which covers
    /// the 0/0 of a transition matrix with all row sums equal.
    pub ratio: f64,
    pub dynbp_converged: bool,
    pub ext_converged: bool,
}

impl RatioTrial {
    pub fn converged(&self) -> bool {
        self.dynbp_converged && self.ext_converged
    }
}

/// Lattice and dynamics of a free-energy comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioConfig {
    pub rows: usize,
    pub cols: usize,
    pub field_variance: f64,
    pub coupling_variance: f64,
    pub run: RunConfig,
}

/// Runs DynBP and space-time GBP on fresh random torus parameters per trial;
/// trial `k` draws its parameters from seed `seed + k`.
pub fn free_energy_ratio(
    cfg: &RatioConfig,
    trials: usize,
    seed: u64,
    opts: &DynOptions,
    jobs: usize,
) -> Result<Vec<RatioTrial>> {
    map_indexed(trials, jobs, |trial| {
        let s = seed.wrapping_add(trial as u64);
        let p = build_random_ising_with(cfg.rows, cfg.cols, Topology::Torus, cfg.field_variance, cfg.coupling_variance, s)?;
        let tm = build_kinetic_conditional(&p, cfg.run.kinetic)?;
        let priors = priors_from_product(&tm, &uniform_product_marginals(p.num_sites(), cfg.run.p_up));
        let dyn_run = dynbp_evolve(&tm, &priors, cfg.run.steps, opts)?;
        let ext_run = extended_gbp_evolve(&tm, &priors, cfg.run.steps, opts)?;
        let f_dynbp: f64 = dyn_run.steps.iter().map(|s| s.ppf).sum();
        let f_ext: f64 = ext_run.steps.iter().map(|s| s.ppf).sum();
        Ok(RatioTrial {
            trial,
            seed: s,
            f_dynbp,
            f_ext,
            ratio: if (f_dynbp - f_ext).abs() <= 1e-12 { 1.0 } else { f_dynbp / f_ext },
            dynbp_converged: dyn_run.all_converged(),
            ext_converged: ext_run.all_converged(),
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{exact_marginal, TransitionKernel};
    use crate::model::index_to_state;
    use super::DynOptions;

    #[test]
    fn torus_and_open_edge_counts() {
        let t = lattice_edges(3, 3, Topology::Torus).unwrap();
        assert_eq!(t.len(), 18);
        let mut deg = [0; 9];
        for &(i, j) in &t {
            deg[i] += 1;
            deg[j] += 1;
        }
        assert!(deg.iter().all(|&d| d == 4));
        assert_eq!(lattice_edges(3, 4, Topology::Open).unwrap().len(), 17);
        assert!(lattice_edges(1, 4, Topology::Torus).is_err());
    }

    #[test]
    fn random_parameters_are_seeded() {
        let a = build_random_ising(3, 4, Topology::Torus, 9).unwrap();
        let b = build_random_ising(3, 4, Topology::Torus, 9).unwrap();
        let c = build_random_ising(3, 4, Topology::Torus, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.couplings, c.couplings);
    }

    #[test]
    fn sample_variance_is_a_tenth() {
        let p = build_random_ising_with(250, 200, Topology::Torus, 0.1, 0.1, 3).unwrap();
        let draws: Vec<f64> = p.couplings.iter().take(100_000).copied().collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((0.095..=0.105).contains(&var), "{var}");
    }

    #[test]
    fn static_tables() {
        let mut p = IsingParams::homogeneous(2, 2, Topology::Open, 0.0, 0.3).unwrap();
        let fg = build_static_ising_fg(&p).unwrap();
        let site = fg.factors.last().unwrap();
        assert_eq!(site.values, vec![0.3f64.exp(), (-0.3f64).exp()]);
        // Two sites joined by one bond, read off a 2x2 open lattice.
        p.couplings = vec![0.5, 0.0, 0.0, 0.0];
        p.fields = vec![0.0; 4];
        let fg = build_static_ising_fg(&p).unwrap();
        let (a, b) = p.edges[0];
        assert_eq!((a, b), (0, 1));
        let m0 = exact_marginal(&fg, 0).unwrap();
        assert!((m0[0] - 0.5).abs() < 1e-12);
        let joint = crate::exact::exact_distribution(&fg).unwrap();
        let same: f64 = joint
            .probabilities
            .iter()
            .enumerate()
            .filter(|&(x, _)| (x >> 3 & 1) == (x >> 2 & 1))
            .map(|(_, p)| p)
            .sum();
        let e = 0.5f64.exp();
        assert!((same - e / (e + 1.0 / e)).abs() < 1e-12);
    }

    #[test]
    fn kinetic_factors_reproduce_the_flip_weight() {
        let p = build_random_ising(2, 2, Topology::Torus, 5).unwrap();
        let k = KineticParams::new(0.3).unwrap();
        let tm = build_kinetic_conditional(&p, k).unwrap();
        let cards = vec![2; 4];
        for x in 0..16 {
            let past = index_to_state(&cards, x).unwrap();
            for y in 0..16 {
                let fut = index_to_state(&cards, y).unwrap();
                let mut prod = 1.0;
                for f in &tm.factors {
                    let idx = f.past_scope.iter().chain(&f.future_scope).enumerate().fold(0, |acc, (pos, &v)| {
                        let s = if pos < f.past_scope.len() { past[v] } else { fut[v] };
                        acc * 2 + s
                    });
                    prod *= f.values[idx];
                }
                let direct = kinetic_weight(&p, k, &past, &fut);
                assert!((prod - direct).abs() <= 1e-12 * direct, "{x} {y}");
                if x == y {
                    assert!((direct - 0.7f64.powi(4)).abs() < 1e-12);
                }
            }
        }
        // Rows of the normalized conditional sum to one.
        let kernel = TransitionKernel::new(&tm, 1 << 12).unwrap();
        let point: Vec<f64> = (0..16).map(|i| if i == 5 { 1.0 } else { 0.0 }).collect();
        let next = kernel.apply(&point).unwrap();
        assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_site_flip_odds() {
        let p = IsingParams { rows: 1, cols: 1, topology: Topology::Open, edges: vec![], couplings: vec![], fields: vec![0.0], seed: 0 };
        let k = KineticParams::new(0.2).unwrap();
        let odds = kinetic_weight(&p, k, &[0], &[1]) / kinetic_weight(&p, k, &[0], &[0]);
        assert!((odds - 0.25).abs() < 1e-12);
        assert!(KineticParams::new(1.0).is_err());
    }

    fn run(theta: f64, steps: usize) -> RunConfig {
        RunConfig { kinetic: KineticParams::new(theta).unwrap(), p_up: 0.9, steps }
    }

    #[test]
    fn half_flip_rate_settles_in_one_step() {
        let p = build_random_ising(3, 4, Topology::Torus, 1).unwrap();
        let trace = run_belief_trace(&p, run(0.5, 4), 0, &DynOptions::default()).unwrap();
        assert!(trace.dynbp.all_converged() && trace.loopy_converged);
        for r in &trace.rows[2..] {
            assert!((r.dynbp - trace.rows[1].dynbp).abs() < 1e-6);
            assert!((r.exact.unwrap() - trace.rows[1].exact.unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn high_flip_rate_alternates() {
        let p = build_random_ising(3, 4, Topology::Torus, 1).unwrap();
        let trace = run_belief_trace(&p, run(0.9, 6), 0, &DynOptions::default()).unwrap();
        let signs: Vec<bool> = trace.rows.iter().map(|r| r.dynbp > 0.5).collect();
        assert!(signs.windows(2).take(4).all(|w| w[0] != w[1]), "{signs:?}");
    }

    #[test]
    fn loopy_bp_on_a_single_spin_is_exact() {
        let tm = crate::temporal::fixtures::flip_spin(0.2);
        let tight = SolverOptions { tolerance: 1e-13, ..SolverOptions::default() };
        let (m, ok) = loopy_bp_evolve(&tm, &[vec![1.0, 0.0]], 2, &tight).unwrap();
        assert!(ok);
        // Tight tolerance so the stopping rule does not show up in the comparison.
        assert!((m[1][0][0] - 0.8).abs() < 1e-10, "{:?}", m);
        assert!((m[2][0][0] - 0.68).abs() < 1e-10);
    }

    #[test]
    fn free_spins_are_tracked_exactly() {
        let zero = [FieldConfig { h: 0.0, j: 0.0 }];
        let study = run_error_histogram(3, 4, &zero, &[0, 1], 0, run(0.1, 5), &DynOptions::default(), 2).unwrap();
        assert_eq!(study.samples.len(), 10);
        assert!(study.samples.iter().all(|s| s.rel_err < 1e-9), "{:?}", study.samples[0]);
        assert_eq!(study.histogram(0, 10).counts[0], 10);
        assert_eq!(study.seed_means(0).len(), 2);
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::of([0.0, 0.05, 0.1, 0.99, 1.0, 1.5], 10);
        assert_eq!(h.counts, vec![2, 1, 0, 0, 0, 0, 0, 0, 0, 2, 1]);
    }

    #[test]
    fn uniform_ratio_is_one_and_trials_are_seeded() {
        let cfg = RatioConfig { rows: 3, cols: 3, field_variance: 0.0, coupling_variance: 0.0, run: run(0.5, 1) };
        let r = free_energy_ratio(&cfg, 1, 0, &DynOptions::default(), 1).unwrap();
        assert_eq!(r[0].ratio, 1.0);
        let cfg = RatioConfig { field_variance: 0.1, coupling_variance: 0.1, ..cfg };
        let a = free_energy_ratio(&cfg, 4, 7, &DynOptions::default(), 1).unwrap();
        let b = free_energy_ratio(&cfg, 4, 7, &DynOptions::default(), 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|t| t.f_ext <= t.f_dynbp + 1e-9));
    }
}

