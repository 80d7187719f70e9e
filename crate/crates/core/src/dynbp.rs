//! Inference over time with path beliefs.
//!
//! Each region carries a belief over its joint (past, future) state. DynBP
//! minimizes the region path free energy subject to two constraints: summing a
//! path belief over the future must give the region's prior, and summing a
//! parent's path belief down to a child must give the child's. The extended
//! GBP comparator drops the first constraint and keeps only normalization,
//! which is what plain GBP on the space-time graph with the priors attached as
//! factors does.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gbp::SolverOptions;
use crate::model::{positions_in, projection_map};
use crate::temporal::{variable_marginals, PathBeliefStore, TemporalModel};

/// What to do when a parent and child have counting numbers summing to zero,
/// which leaves the child-to-parent message exponent undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DegeneratePolicy {
    Error,
    Fixed(f64),
}

impl std::str::FromStr for DegeneratePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "error" {
            return Ok(DegeneratePolicy::Error);
        }
        if let Some(v) = s.strip_prefix("fixed:") {
            let k: f64 = v.parse().map_err(|_| Error::Usage(format!("bad exponent in '{s}'")))?;
            return Ok(DegeneratePolicy::Fixed(k));
        }
        Err(Error::Usage(format!("degenerate exponent policy must be 'error' or 'fixed:<k>', got '{s}'")))
    }
}

impl std::fmt::Display for DegeneratePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DegeneratePolicy::Error => write!(f, "error"),
            DegeneratePolicy::Fixed(k) => write!(f, "fixed:{k}"),
        }
    }
}

/// How a region's child-to-parent messages are refreshed.
///
/// `PerEdge` closes one edge's consistency gap at a time with the exponent
/// `c_p c_c / (c_p + c_c)`, holding the region's other parent messages fixed.
/// With several parents that step pushes their common disagreement the wrong
/// way (on a z = 4 torus it grows by 4/3 per update), so `Joint` closes all of
/// a region's parent gaps at once. The two agree when a region has one parent,
/// and share their fixed points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum UpdateRule {
    Joint,
    PerEdge,
}

impl std::str::FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(UpdateRule::Joint),
            "per-edge" => Ok(UpdateRule::PerEdge),
            _ => Err(Error::Usage(format!("update rule must be 'joint' or 'per-edge', got '{s}'"))),
        }
    }
}

impl std::fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpdateRule::Joint => "joint",
            UpdateRule::PerEdge => "per-edge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynOptions {
    pub solver: SolverOptions,
    pub degenerate: DegeneratePolicy,
    pub rule: UpdateRule,
}

impl Default for DynOptions {
    fn default() -> Self {
        DynOptions { solver: SolverOptions::default(), degenerate: DegeneratePolicy::Error, rule: UpdateRule::Joint }
    }
}

/// Which constraint set the engine enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Per-state past messages pin every region's past marginal to its prior.
    Dynamic,
    /// Only total normalization; the prior enters as a factor.
    Extended,
}

struct EdgeInfo {
    parent: usize,
    child: usize,
    /// `c_p c_c / (c_p + c_c)`, `None` when the sum vanishes.
    exponent: Option<f64>,
    /// Parent joint index to child joint index.
    proj: Vec<usize>,
}

/// Messages of one time step: child-to-parent tables over the child's joint
/// states and per-region past-state messages, all in the log domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DynMessageStore {
    pub up: Vec<Vec<f64>>,
    pub past: Vec<Vec<f64>>,
}

/// One sweep's convergence record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRecord {
    pub t: usize,
    pub sweep: usize,
    pub max_delta: f64,
    pub prior_residual: f64,
    pub consistency_residual: f64,
    pub ppf: f64,
}

/// Output of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub path: PathBeliefStore,
    /// Region beliefs at the next time, the future marginals of `path`.
    pub next_priors: Vec<Vec<f64>>,
    pub converged: bool,
    pub sweeps: usize,
    pub prior_residual: f64,
    pub consistency_residual: f64,
    /// Path free energy of the final beliefs.
    pub ppf: f64,
    pub history: Vec<SweepRecord>,
    /// Final messages, usable as a warm start for a model with the same
    /// region graph.
    pub messages: DynMessageStore,
}

/// A chained run of time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `region_beliefs[t][r]` for `t = 0..=T`.
    pub region_beliefs: Vec<Vec<Vec<f64>>>,
    /// `node_marginals[t][v]`.
    pub node_marginals: Vec<Vec<Vec<f64>>>,
    pub steps: Vec<StepSummary>,
    pub history: Vec<SweepRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSummary {
    pub t: usize,
    pub converged: bool,
    pub sweeps: usize,
    pub prior_residual: f64,
    pub consistency_residual: f64,
    pub ppf: f64,
}

impl Trajectory {
    pub fn all_converged(&self) -> bool {
        self.steps.iter().all(|s| s.converged)
    }
}

struct Engine<'a> {
    tm: &'a TemporalModel,
    mode: Mode,
    opts: SolverOptions,
    counting: Vec<f64>,
    active: Vec<bool>,
    states: Vec<usize>,
    logf: Vec<Vec<f64>>,
    edges: Vec<EdgeInfo>,
    /// Edges in which the region is the parent.
    down: Vec<Vec<usize>>,
    /// Edges in which the region is the child.
    up: Vec<Vec<usize>>,
    /// `c_r + sum of parent c` for regions updated jointly, `None` for
    /// regions updated edge by edge.
    joint: Vec<Option<f64>>,
}

impl<'a> Engine<'a> {
    fn new(tm: &'a TemporalModel, opts: &DynOptions, mode: Mode) -> Result<Self> {
        opts.solver.validate()?;
        let rg = &tm.regions;
        let n = rg.len();
        let counting: Vec<f64> = rg.counting_numbers().iter().map(|&c| c as f64).collect();
        let active: Vec<bool> = rg.counting_numbers().iter().map(|&c| c != 0).collect();
        for r in 0..n {
            if !active[r] && !rg.children(r).is_empty() {
                return Err(Error::Structural(format!(
                    "region {r} has counting number 0 but has children; its messages are undefined"
                )));
            }
        }
        let states: Vec<usize> = (0..n).map(|r| tm.region_state_count(r)).collect();
        let logf: Vec<Vec<f64>> = (0..n)
            .map(|r| if active[r] { tm.region_log_factors(r, opts.solver.clamp_floor) } else { Vec::new() })
            .collect();
        let mut edges = Vec::new();
        let mut down = vec![Vec::new(); n];
        let mut up = vec![Vec::new(); n];
        for &(p, c) in rg.edges() {
            if !active[p] || !active[c] {
                continue;
            }
            let sum = counting[p] + counting[c];
            let exponent = (sum != 0.0).then(|| counting[p] * counting[c] / sum);
            let pos = positions_in(&rg.region(p).variables, &rg.region(c).variables).expect("nested regions");
            let slice = projection_map(&tm.region_cardinalities(p), &pos);
            let (sp, sc) = (states[p], states[c]);
            let proj = (0..sp * sp).map(|j| slice[j / sp] * sc + slice[j % sp]).collect();
            down[p].push(edges.len());
            up[c].push(edges.len());
            edges.push(EdgeInfo { parent: p, child: c, exponent, proj });
        }
        let mut joint = vec![None; n];
        for r in 0..n {
            if up[r].is_empty() {
                continue;
            }
            if opts.rule == UpdateRule::Joint {
                let d = counting[r] + up[r].iter().map(|&e| counting[edges[e].parent]).sum::<f64>();
                if d != 0.0 {
                    joint[r] = Some(d);
                    continue;
                }
            }
            for &e in &up[r] {
                let edge = &mut edges[e];
                if edge.exponent.is_none() {
                    match opts.degenerate {
                        DegeneratePolicy::Error => {
                            return Err(Error::Structural(format!(
                                "edge ({},{}): counting numbers sum to zero, message exponent undefined",
                                edge.parent, edge.child
                            )))
                        }
                        DegeneratePolicy::Fixed(k) => edge.exponent = Some(k),
                    }
                }
            }
        }
        Ok(Engine { tm, mode, opts: opts.solver, counting, active, states, logf, edges, down, up, joint })
    }

    fn fresh_messages(&self) -> DynMessageStore {
        DynMessageStore {
            up: self.edges.iter().map(|e| vec![0.0; self.states[e.child] * self.states[e.child]]).collect(),
            past: self.states.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    fn check_priors(&self, priors: &[Vec<f64>]) -> Result<()> {
        if priors.len() != self.states.len() {
            return Err(Error::Usage(format!("{} prior tables for {} regions", priors.len(), self.states.len())));
        }
        for (r, p) in priors.iter().enumerate() {
            if p.len() != self.states[r] {
                return Err(Error::Usage(format!("prior of region {r} has {} entries, expected {}", p.len(), self.states[r])));
            }
            if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Usage(format!("prior of region {r} has a negative or non-finite entry")));
            }
        }
        Ok(())
    }

    fn log_priors(&self, priors: &[Vec<f64>]) -> Vec<Vec<f64>> {
        priors.iter().map(|p| p.iter().map(|&v| v.max(self.opts.clamp_floor).ln()).collect()).collect()
    }

    /// Path belief of region `r` from the current messages, normalized to 1.
    fn belief(&self, r: usize, log_prior: &[f64], msgs: &DynMessageStore) -> Vec<f64> {
        let s = self.states[r];
        let inv_c = 1.0 / self.counting[r];
        let mut logs = self.logf[r].clone();
        let mut extra = vec![0.0; s * s];
        if self.mode == Mode::Dynamic {
            for (j, e) in extra.iter_mut().enumerate() {
                *e += msgs.past[r][j / s];
            }
        }
        for &e in &self.down[r] {
            let edge = &self.edges[e];
            for (j, x) in extra.iter_mut().enumerate() {
                *x += msgs.up[e][edge.proj[j]];
            }
        }
        for &e in &self.up[r] {
            for (x, m) in extra.iter_mut().zip(&msgs.up[e]) {
                *x -= m;
            }
        }
        for (j, l) in logs.iter_mut().enumerate() {
            *l += log_prior[j / s] + inv_c * extra[j];
        }
        crate::gbp::normalized_from_logs(&logs)
    }

    fn project(&self, e: usize, parent_belief: &[f64]) -> Vec<f64> {
        let edge = &self.edges[e];
        let sc = self.states[edge.child];
        let mut out = vec![0.0; sc * sc];
        for (&m, &b) in edge.proj.iter().zip(parent_belief) {
            out[m] += b;
        }
        out
    }

    fn all_beliefs(&self, log_priors: &[Vec<f64>], msgs: &DynMessageStore) -> Vec<Vec<f64>> {
        (0..self.states.len())
            .map(|r| if self.active[r] { self.belief(r, &log_priors[r], msgs) } else { Vec::new() })
            .collect()
    }

    fn clamped_ln(&self, x: f64) -> f64 {
        x.max(self.opts.clamp_floor).ln()
    }

    /// One sweep: child-to-parent messages region by region in ascending id,
    /// each from freshly assembled beliefs, then every past-state message.
    /// Past-state messages take the full step; damping them lets the redundant
    /// prior constraints of nested regions drift apart.
    fn sweep(&self, log_priors: &[Vec<f64>], msgs: &mut DynMessageStore) {
        for r in 0..self.states.len() {
            if !self.active[r] {
                continue;
            }
            match self.joint[r] {
                Some(d) => self.joint_update(r, d, log_priors, msgs),
                None => self.per_edge_update(r, log_priors, msgs),
            }
        }
        if self.mode == Mode::Dynamic {
            let beliefs = self.all_beliefs(log_priors, msgs);
            for r in 0..self.states.len() {
                if !self.active[r] {
                    continue;
                }
                let s = self.states[r];
                let mut past = vec![0.0; s];
                for (j, &b) in beliefs[r].iter().enumerate() {
                    past[j / s] += b;
                }
                let c = self.counting[r];
                let msg = &mut msgs.past[r];
                for (x, m) in msg.iter_mut().enumerate() {
                    let target = *m + c * (log_priors[r][x] - self.clamped_ln(past[x]));
                    *m = target;
                }
                recentre(msg);
            }
        }
    }

    /// Solves `ln b_r - ln marg_p = 0` for every parent `p` of `r` at once:
    /// moving message `e` by `delta_e` shifts `ln b_r` by `-sum delta / c_r`
    /// and the parent marginal by `delta_e / c_p`.
    fn joint_update(&self, r: usize, d: f64, log_priors: &[Vec<f64>], msgs: &mut DynMessageStore) {
        let own = self.belief(r, &log_priors[r], msgs);
        let gaps: Vec<Vec<f64>> = self.up[r]
            .iter()
            .map(|&e| {
                let parent = self.edges[e].parent;
                let marg = self.project(e, &self.belief(parent, &log_priors[parent], msgs));
                own.iter().zip(&marg).map(|(&b, &q)| self.clamped_ln(b) - self.clamped_ln(q)).collect()
            })
            .collect();
        let weights: Vec<f64> = self.up[r].iter().map(|&e| self.counting[self.edges[e].parent]).collect();
        for j in 0..own.len() {
            let common = weights.iter().zip(&gaps).map(|(w, g)| w * g[j]).sum::<f64>() / d;
            for ((&e, w), g) in self.up[r].iter().zip(&weights).zip(&gaps) {
                let m = &mut msgs.up[e][j];
                *m = self.opts.damp(*m, *m + w * (g[j] - common));
            }
        }
        for &e in &self.up[r] {
            recentre(&mut msgs.up[e]);
        }
    }

    fn per_edge_update(&self, r: usize, log_priors: &[Vec<f64>], msgs: &mut DynMessageStore) {
        for &e in &self.up[r] {
            let edge = &self.edges[e];
            let k = edge.exponent.expect("degenerate exponents resolved at construction");
            let own = self.belief(r, &log_priors[r], msgs);
            let parent = self.belief(edge.parent, &log_priors[edge.parent], msgs);
            let marg = self.project(e, &parent);
            let msg = &mut msgs.up[e];
            for ((m, &b), &q) in msg.iter_mut().zip(&own).zip(&marg) {
                let target = *m + k * (self.clamped_ln(b) - self.clamped_ln(q));
                *m = self.opts.damp(*m, target);
            }
            recentre(msg);
        }
    }

    /// `max |sum_future b - prior|` and `max |parent marginal - child belief|`.
    fn residuals(&self, beliefs: &[Vec<f64>], priors: &[Vec<f64>]) -> (f64, f64) {
        let mut prior_res = 0.0f64;
        for r in 0..self.states.len() {
            if !self.active[r] {
                continue;
            }
            let s = self.states[r];
            let mut past = vec![0.0; s];
            for (j, &b) in beliefs[r].iter().enumerate() {
                past[j / s] += b;
            }
            for (a, b) in past.iter().zip(&priors[r]) {
                prior_res = prior_res.max((a - b).abs());
            }
        }
        let mut cons_res = 0.0f64;
        for (e, edge) in self.edges.iter().enumerate() {
            let marg = self.project(e, &beliefs[edge.parent]);
            for (a, b) in marg.iter().zip(&beliefs[edge.child]) {
                cons_res = cons_res.max((a - b).abs());
            }
        }
        (prior_res, cons_res)
    }

    fn ppf(&self, beliefs: &[Vec<f64>], log_priors: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for r in 0..self.states.len() {
            if !self.active[r] {
                continue;
            }
            let s = self.states[r];
            let term: f64 = beliefs[r]
                .iter()
                .enumerate()
                .map(|(j, &b)| b * (self.clamped_ln(b) - self.logf[r][j] - log_priors[r][j / s]))
                .sum();
            total += self.counting[r] * term;
        }
        total
    }

    /// Path beliefs of every region, dropped ones projected from a parent.
    fn full_path(&self, beliefs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let rg = &self.tm.regions;
        let mut path = beliefs;
        for r in 0..path.len() {
            if self.active[r] {
                continue;
            }
            let p = rg.parents(r)[0];
            let pos = positions_in(&rg.region(p).variables, &rg.region(r).variables).expect("nested regions");
            let slice = projection_map(&self.tm.region_cardinalities(p), &pos);
            let (sp, sr) = (self.states[p], self.states[r]);
            let mut out = vec![0.0; sr * sr];
            for (j, &b) in path[p].iter().enumerate() {
                out[slice[j / sp] * sr + slice[j % sp]] += b;
            }
            path[r] = out;
        }
        path
    }

    fn step(&self, priors: &[Vec<f64>], t: usize) -> Result<StepResult> {
        self.step_from(priors, t, self.fresh_messages())
    }

    fn check_messages(&self, msgs: &DynMessageStore) -> Result<()> {
        let fresh = self.fresh_messages();
        let same = |a: &[Vec<f64>], b: &[Vec<f64>]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len());
        if !same(&msgs.up, &fresh.up) || !same(&msgs.past, &fresh.past) {
            return Err(Error::Usage("message store does not match the region graph".into()));
        }
        Ok(())
    }

    fn step_from(&self, priors: &[Vec<f64>], t: usize, mut msgs: DynMessageStore) -> Result<StepResult> {
        self.check_priors(priors)?;
        self.check_messages(&msgs)?;
        let log_priors = self.log_priors(priors);
        let mut beliefs = self.all_beliefs(&log_priors, &msgs);
        let mut history = Vec::new();
        let mut converged = false;
        let mut sweeps = 0;
        while sweeps < self.opts.max_iters {
            sweeps += 1;
            self.sweep(&log_priors, &mut msgs);
            let next = self.all_beliefs(&log_priors, &msgs);
            let mut delta = 0.0f64;
            for (a, b) in next.iter().zip(&beliefs) {
                for (x, y) in a.iter().zip(b) {
                    delta = delta.max((x - y).abs());
                }
            }
            beliefs = next;
            let (prior_residual, consistency_residual) = self.residuals(&beliefs, priors);
            history.push(SweepRecord {
                t,
                sweep: sweeps,
                max_delta: delta,
                prior_residual,
                consistency_residual,
                ppf: self.ppf(&beliefs, &log_priors),
            });
            // A vanishing belief change with open constraints is a stall.
            let open = match self.mode {
                Mode::Dynamic => prior_residual.max(consistency_residual),
                Mode::Extended => consistency_residual,
            };
            if delta < self.opts.tolerance && open < self.opts.tolerance {
                converged = true;
                break;
            }
        }
        let (prior_residual, consistency_residual) = self.residuals(&beliefs, priors);
        let ppf = self.ppf(&beliefs, &log_priors);
        let path = PathBeliefStore { path: self.full_path(beliefs), prior: priors.to_vec() };
        let next_priors = (0..path.path.len()).map(|r| path.future_marginal(r)).collect();
        Ok(StepResult {
            path,
            next_priors,
            converged,
            sweeps,
            prior_residual,
            consistency_residual,
            ppf,
            history,
            messages: msgs,
        })
    }

    fn evolve(&self, initial: &[Vec<f64>], steps: usize) -> Result<Trajectory> {
        let mut region_beliefs = vec![initial.to_vec()];
        let mut summaries = Vec::new();
        let mut history = Vec::new();
        for t in 0..steps {
            let res = self.step(region_beliefs.last().expect("non-empty"), t)?;
            summaries.push(StepSummary {
                t,
                converged: res.converged,
                sweeps: res.sweeps,
                prior_residual: res.prior_residual,
                consistency_residual: res.consistency_residual,
                ppf: res.ppf,
            });
            history.extend(res.history);
            region_beliefs.push(res.next_priors);
        }
        let node_marginals = region_beliefs.iter().map(|b| variable_marginals(self.tm, b)).collect();
        Ok(Trajectory { region_beliefs, node_marginals, steps: summaries, history })
    }
}

/// Shifts a log message so its largest entry is 0; message scale never
/// affects a normalized belief.
fn recentre(logs: &mut [f64]) {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in logs.iter_mut() {
        *v -= max;
    }
}

/// Runs one DynBP sweep on explicit stores and returns the updated path
/// beliefs and the max belief change.
pub fn dynbp_sweep(
    tm: &TemporalModel,
    priors: &[Vec<f64>],
    msgs: &mut DynMessageStore,
    opts: &DynOptions,
) -> Result<(PathBeliefStore, f64)> {
    let engine = Engine::new(tm, opts, Mode::Dynamic)?;
    engine.check_priors(priors)?;
    let log_priors = engine.log_priors(priors);
    let before = engine.all_beliefs(&log_priors, msgs);
    engine.sweep(&log_priors, msgs);
    let after = engine.all_beliefs(&log_priors, msgs);
    let delta = before
        .iter()
        .zip(&after)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    Ok((PathBeliefStore { path: engine.full_path(after), prior: priors.to_vec() }, delta))
}

/// All-ones messages for a model, in the shape [`dynbp_sweep`] expects.
pub fn initial_messages(tm: &TemporalModel, opts: &DynOptions) -> Result<DynMessageStore> {
    Ok(Engine::new(tm, opts, Mode::Dynamic)?.fresh_messages())
}

/// One DynBP time step from region priors.
pub fn dynbp_step(tm: &TemporalModel, priors: &[Vec<f64>], opts: &DynOptions) -> Result<StepResult> {
    Engine::new(tm, opts, Mode::Dynamic)?.step(priors, 0)
}

/// One DynBP time step started from the given messages instead of all-ones.
pub fn dynbp_step_from(
    tm: &TemporalModel,
    priors: &[Vec<f64>],
    msgs: DynMessageStore,
    opts: &DynOptions,
) -> Result<StepResult> {
    Engine::new(tm, opts, Mode::Dynamic)?.step_from(priors, 0, msgs)
}

/// `T` chained DynBP steps with messages reset between steps.
pub fn dynbp_evolve(tm: &TemporalModel, initial: &[Vec<f64>], steps: usize, opts: &DynOptions) -> Result<Trajectory> {
    Engine::new(tm, opts, Mode::Dynamic)?.evolve(initial, steps)
}

/// One step of GBP on the space-time graph with the priors attached as factors.
pub fn extended_gbp_step(tm: &TemporalModel, priors: &[Vec<f64>], opts: &DynOptions) -> Result<StepResult> {
    Engine::new(tm, opts, Mode::Extended)?.step(priors, 0)
}

/// `T` chained space-time GBP steps. Each step's `ppf` is the region estimate
/// of `-ln Z` for the slice graph with the priors as factors.
pub fn extended_gbp_evolve(tm: &TemporalModel, initial: &[Vec<f64>], steps: usize, opts: &DynOptions) -> Result<Trajectory> {
    Engine::new(tm, opts, Mode::Extended)?.evolve(initial, steps)
}

/// `sum_r c_r sum_x b_r(x) (H_r(x) + ln b_r(x) - ln prior_r(past(x)))` with
/// `H_r = -sum_{a in r} ln f_a`; logs clamped at `floor`.
pub fn ppf_evaluate(tm: &TemporalModel, path: &PathBeliefStore, floor: f64) -> Result<f64> {
    let rg = &tm.regions;
    if path.path.len() != rg.len() || path.prior.len() != rg.len() {
        return Err(Error::Usage("path store does not match the region graph".into()));
    }
    let mut total = 0.0;
    for r in 0..rg.len() {
        let c = rg.counting_number(r);
        if c == 0 {
            continue;
        }
        let s = tm.region_state_count(r);
        if path.path[r].len() != s * s || path.prior[r].len() != s {
            return Err(Error::Usage(format!("path tables of region {r} have the wrong length")));
        }
        let logf = tm.region_log_factors(r, floor);
        let term: f64 = path.path[r]
            .iter()
            .enumerate()
            .map(|(j, &b)| b * (b.max(floor).ln() - logf[j] - path.prior[r][j / s].max(floor).ln()))
            .sum();
        total += c as f64 * term;
    }
    Ok(total)
}
