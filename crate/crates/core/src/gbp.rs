//! Static approximate inference: sum-product BP on the factor graph,
//! parent-to-child generalized BP on a region graph, region free energies and
//! naive mean field.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{log_sum_exp, positions_in, projection_map, state_count, FactorGraph};
use crate::region::RegionGraph;

/// Iteration controls shared by every iterative solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once the max absolute belief change between sweeps drops below this.
    pub tolerance: f64,
    /// `ln m <- damping * ln m_old + (1 - damping) * ln m_new`.
    pub damping: f64,
    /// Floor applied to factor entries and messages before taking logs.
    pub clamp_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iters: 500, tolerance: 1e-6, damping: 0.5, clamp_floor: 1e-12 }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Usage(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Usage(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        if !(self.clamp_floor > 0.0) {
            return Err(Error::Usage(format!("clamp floor must be positive, got {}", self.clamp_floor)));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn damp(&self, old: f64, new: f64) -> f64 {
        self.damping * old + (1.0 - self.damping) * new
    }
}

/// Normalized probability tables, one per variable or per region.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BeliefSet {
    pub tables: Vec<Vec<f64>>,
}

impl BeliefSet {
    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn get(&self, k: usize) -> &[f64] {
        &self.tables[k]
    }

    /// Largest entrywise difference; infinite when shapes disagree.
    pub fn max_abs_diff(&self, other: &BeliefSet) -> f64 {
        if self.tables.len() != other.tables.len() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for (a, b) in self.tables.iter().zip(&other.tables) {
            if a.len() != b.len() {
                return f64::INFINITY;
            }
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }
}

/// One row of a solver's convergence history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub max_delta: f64,
    pub free_energy: f64,
}

/// Output of an iterative static solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub beliefs: BeliefSet,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
}

/// Exponentiates log weights into a normalized table.
pub(crate) fn normalized_from_logs(logs: &[f64]) -> Vec<f64> {
    let mut out = logs.to_vec();
    crate::model::normalize_log_weights(&mut out);
    out
}

fn shift_to_max_zero(logs: &mut [f64], floor_ln: f64) {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in logs.iter_mut() {
        *v = (*v - max).max(floor_ln);
    }
}

/// Per-factor data for sum-product BP.
struct BpFactor {
    log_table: Vec<f64>,
    scope: Vec<usize>,
    /// `digit[k][j]`: state of scope position `k` in factor state `j`.
    digit: Vec<Vec<usize>>,
}

/// Loopy sum-product BP with a fixed ascending-factor schedule.
///
/// Returns variable beliefs; the history records the Bethe free energy of the
/// current factor and variable beliefs after every sweep.
pub fn sum_product_bp(fg: &FactorGraph, opts: &SolverOptions) -> Result<SolveResult> {
    opts.validate()?;
    let cards = fg.cardinalities();
    let floor_ln = opts.clamp_floor.ln();
    let factors: Vec<BpFactor> = fg
        .factors
        .iter()
        .map(|f| {
            let fc = fg.scope_cardinalities(&f.scope);
            BpFactor {
                log_table: f.values.iter().map(|&v| v.max(opts.clamp_floor).ln()).collect(),
                scope: f.scope.clone(),
                digit: (0..f.scope.len()).map(|k| projection_map(&fc, &[k])).collect(),
            }
        })
        .collect();
    let incidence = fg.incidence();
    // f2v[a][k]: message from factor a to its k-th scope variable.
    let mut f2v: Vec<Vec<Vec<f64>>> =
        factors.iter().map(|f| f.scope.iter().map(|&v| vec![0.0; cards[v]]).collect()).collect();
    let slot_of = |a: usize, v: usize| factors[a].scope.iter().position(|&w| w == v).expect("incident");

    let var_beliefs = |f2v: &Vec<Vec<Vec<f64>>>| -> BeliefSet {
        BeliefSet {
            tables: (0..cards.len())
                .map(|v| {
                    let mut logs = vec![0.0; cards[v]];
                    for &a in &incidence[v] {
                        for (l, m) in logs.iter_mut().zip(&f2v[a][slot_of(a, v)]) {
                            *l += m;
                        }
                    }
                    normalized_from_logs(&logs)
                })
                .collect(),
        }
    };
    let v2f = |f2v: &Vec<Vec<Vec<f64>>>, a: usize, k: usize| -> Vec<f64> {
        let v = factors[a].scope[k];
        let mut logs = vec![0.0; cards[v]];
        for &b in &incidence[v] {
            if b != a {
                for (l, m) in logs.iter_mut().zip(&f2v[b][slot_of(b, v)]) {
                    *l += m;
                }
            }
        }
        logs
    };
    let bethe_energy = |f2v: &Vec<Vec<Vec<f64>>>, vb: &BeliefSet| -> f64 {
        let mut fe = 0.0;
        for (a, f) in factors.iter().enumerate() {
            let incoming: Vec<Vec<f64>> = (0..f.scope.len()).map(|k| v2f(f2v, a, k)).collect();
            let logs: Vec<f64> = (0..f.log_table.len())
                .map(|j| f.log_table[j] + (0..f.scope.len()).map(|k| incoming[k][f.digit[k][j]]).sum::<f64>())
                .collect();
            let b = normalized_from_logs(&logs);
            fe += b.iter().zip(&f.log_table).map(|(&p, &lf)| p * (-lf + p.max(opts.clamp_floor).ln())).sum::<f64>();
        }
        for (v, table) in vb.tables.iter().enumerate() {
            let c = 1.0 - incidence[v].len() as f64;
            fe += c * table.iter().map(|&p| p * p.max(opts.clamp_floor).ln()).sum::<f64>();
        }
        fe
    };

    let mut beliefs = var_beliefs(&f2v);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        for a in 0..factors.len() {
            let f = &factors[a];
            let incoming: Vec<Vec<f64>> = (0..f.scope.len()).map(|k| v2f(&f2v, a, k)).collect();
            for k in 0..f.scope.len() {
                let card = cards[f.scope[k]];
                let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); card];
                for j in 0..f.log_table.len() {
                    let mut w = f.log_table[j];
                    for (k2, inc) in incoming.iter().enumerate() {
                        if k2 != k {
                            w += inc[f.digit[k2][j]];
                        }
                    }
                    buckets[f.digit[k][j]].push(w);
                }
                let mut new: Vec<f64> = buckets.iter().map(|b| log_sum_exp(b)).collect();
                shift_to_max_zero(&mut new, floor_ln);
                for (old, n) in f2v[a][k].iter_mut().zip(&new) {
                    *old = opts.damp(*old, *n);
                }
            }
        }
        let next = var_beliefs(&f2v);
        let delta = next.max_abs_diff(&beliefs);
        beliefs = next;
        history.push(IterationRecord { iteration: iterations, max_delta: delta, free_energy: bethe_energy(&f2v, &beliefs) });
        if delta < opts.tolerance {
            converged = true;
            break;
        }
    }
    Ok(SolveResult { beliefs, converged, iterations, history })
}

/// Per-region and per-edge bookkeeping for parent-to-child GBP.
struct GbpLayout {
    region_states: Vec<usize>,
    region_logf: Vec<Vec<f64>>,
    /// `(edge, projection region -> J)` for each message entering a belief.
    belief_terms: Vec<Vec<(usize, Vec<usize>)>>,
    edge_plans: Vec<EdgePlan>,
}

struct EdgePlan {
    parent_to_child: Vec<usize>,
    /// Factors of the parent not owned by the child, over parent states.
    extra_logf: Vec<f64>,
    n_terms: Vec<(usize, Vec<usize>)>,
    d_terms: Vec<(usize, Vec<usize>)>,
}

/// `sum_{a in factors} ln max(f_a, floor)` over the states of `vars`.
fn log_factor_table(fg: &FactorGraph, vars: &[usize], factor_ids: &[usize], floor: f64) -> Result<Vec<f64>> {
    let cards = fg.scope_cardinalities(vars);
    let size = state_count(&cards).ok_or_else(|| Error::Structural("region state space overflows".into()))?;
    let mut out = vec![0.0; size];
    for &fid in factor_ids {
        let pos = fg
            .factor_position(fid)
            .ok_or_else(|| Error::Structural(format!("region references unknown factor {fid}")))?;
        let f = &fg.factors[pos];
        let local = positions_in(vars, &f.scope)
            .ok_or_else(|| Error::Structural(format!("factor {fid} is not closed in its region")))?;
        for (slot, &j) in out.iter_mut().zip(&projection_map(&cards, &local)) {
            *slot += f.values[j].max(floor).ln();
        }
    }
    Ok(out)
}

impl GbpLayout {
    fn new(fg: &FactorGraph, rg: &RegionGraph, floor: f64) -> Result<Self> {
        let mut proj_cache: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut proj = |a: usize, b: usize| -> Vec<usize> {
            proj_cache
                .entry((a, b))
                .or_insert_with(|| {
                    let ra = rg.region(a);
                    let rb = rg.region(b);
                    let pos = positions_in(&ra.variables, &rb.variables).expect("descendant variables are nested");
                    projection_map(&fg.scope_cardinalities(&ra.variables), &pos)
                })
                .clone()
        };
        let edge_index: HashMap<(usize, usize), usize> =
            rg.edges().iter().enumerate().map(|(k, &e)| (e, k)).collect();
        let mut region_states = Vec::new();
        let mut region_logf = Vec::new();
        let mut belief_terms = Vec::new();
        for r in rg.regions() {
            region_states.push(state_count(&fg.scope_cardinalities(&r.variables)).expect("region size"));
            region_logf.push(log_factor_table(fg, &r.variables, &r.factors, floor)?);
            belief_terms.push(
                rg.belief_messages(r.id).into_iter().map(|(i, j)| (edge_index[&(i, j)], proj(r.id, j))).collect(),
            );
        }
        let mut edge_plans = Vec::new();
        for &(p, c) in rg.edges() {
            let sets = rg.relation_sets(p, c)?;
            let child_factors = &rg.region(c).factors;
            let extra: Vec<usize> =
                rg.region(p).factors.iter().copied().filter(|f| child_factors.binary_search(f).is_err()).collect();
            edge_plans.push(EdgePlan {
                parent_to_child: proj(p, c),
                extra_logf: log_factor_table(fg, &rg.region(p).variables, &extra, floor)?,
                n_terms: sets.n_set.iter().map(|&(i, j)| (edge_index[&(i, j)], proj(p, j))).collect(),
                d_terms: sets.d_set.iter().map(|&(i, j)| (edge_index[&(i, j)], proj(c, j))).collect(),
            });
        }
        Ok(GbpLayout { region_states, region_logf, belief_terms, edge_plans })
    }

    fn beliefs(&self, msgs: &[Vec<f64>]) -> BeliefSet {
        BeliefSet {
            tables: (0..self.region_states.len())
                .map(|r| {
                    let mut logs = self.region_logf[r].clone();
                    for (e, map) in &self.belief_terms[r] {
                        for (l, &j) in logs.iter_mut().zip(map) {
                            *l += msgs[*e][j];
                        }
                    }
                    normalized_from_logs(&logs)
                })
                .collect(),
        }
    }
}

/// Parent-to-child generalized BP. Edges are updated in ascending
/// `(parent, child)` order; region beliefs are assembled from the local factors
/// and every message entering the region or one of its descendants from outside.
pub fn gbp_parent_to_child(fg: &FactorGraph, rg: &RegionGraph, opts: &SolverOptions) -> Result<SolveResult> {
    opts.validate()?;
    let layout = GbpLayout::new(fg, rg, opts.clamp_floor)?;
    let floor_ln = opts.clamp_floor.ln();
    let mut msgs: Vec<Vec<f64>> = rg.edges().iter().map(|&(_, c)| vec![0.0; layout.region_states[c]]).collect();
    let mut beliefs = layout.beliefs(&msgs);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        for (e, &(p, c)) in rg.edges().iter().enumerate() {
            let plan = &layout.edge_plans[e];
            let mut parent = plan.extra_logf.clone();
            for (m, map) in &plan.n_terms {
                for (l, &j) in parent.iter_mut().zip(map) {
                    *l += msgs[*m][j];
                }
            }
            let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); layout.region_states[c]];
            for (x, &w) in parent.iter().enumerate() {
                buckets[plan.parent_to_child[x]].push(w);
            }
            debug_assert_eq!(parent.len(), layout.region_states[p]);
            let mut new: Vec<f64> = buckets.iter().map(|b| log_sum_exp(b)).collect();
            for (m, map) in &plan.d_terms {
                for (l, &j) in new.iter_mut().zip(map) {
                    *l -= msgs[*m][j];
                }
            }
            shift_to_max_zero(&mut new, floor_ln);
            for (old, n) in msgs[e].iter_mut().zip(&new) {
                *old = opts.damp(*old, *n);
            }
        }
        let next = layout.beliefs(&msgs);
        let delta = next.max_abs_diff(&beliefs);
        beliefs = next;
        history.push(IterationRecord {
            iteration: iterations,
            max_delta: delta,
            free_energy: region_free_energy(fg, rg, &beliefs, opts.clamp_floor)?,
        });
        if delta < opts.tolerance {
            converged = true;
            break;
        }
    }
    Ok(SolveResult { beliefs, converged, iterations, history })
}

/// Per-variable marginals of region beliefs, each variable read from the
/// smallest region holding it (ties to the lower id).
pub fn variable_beliefs(fg: &FactorGraph, rg: &RegionGraph, beliefs: &BeliefSet) -> Vec<Vec<f64>> {
    (0..fg.num_variables())
        .map(|v| {
            let (rid, pos) = rg
                .regions()
                .iter()
                .filter_map(|r| r.variables.binary_search(&v).ok().map(|p| (r.id, p)))
                .min_by_key(|&(rid, _)| (rg.region(rid).variables.len(), rid))
                .expect("every variable sits in some region");
            let cards = fg.scope_cardinalities(&rg.region(rid).variables);
            crate::temporal::marginalize(beliefs.get(rid), &cards, &[pos])
        })
        .collect()
}

/// `sum_R c_R sum_x b_R(x) (H_R(x) + ln b_R(x))` with `H_R = -sum_{a in R} ln f_a`.
pub fn region_free_energy(fg: &FactorGraph, rg: &RegionGraph, beliefs: &BeliefSet, floor: f64) -> Result<f64> {
    if beliefs.len() != rg.len() {
        return Err(Error::Usage(format!("{} belief tables for {} regions", beliefs.len(), rg.len())));
    }
    let mut total = 0.0;
    for r in rg.regions() {
        let c = rg.counting_number(r.id);
        if c == 0 {
            continue;
        }
        let logf = log_factor_table(fg, &r.variables, &r.factors, floor)?;
        let b = beliefs.get(r.id);
        if b.len() != logf.len() {
            return Err(Error::Usage(format!("belief table of region {} has the wrong length", r.id)));
        }
        let term: f64 = b.iter().zip(&logf).map(|(&p, &lf)| p * (p.max(floor).ln() - lf)).sum();
        total += c as f64 * term;
    }
    Ok(total)
}

/// Result of the naive mean-field fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldResult {
    pub magnetizations: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Solves `m_i = tanh(sum_j J_ij m_j + h_i)` by damped parallel iteration from
/// `m = 0`. Couplings are undirected `(i, j, J_ij)` triples.
pub fn mean_field_solve(couplings: &[(usize, usize, f64)], fields: &[f64], opts: &SolverOptions) -> Result<MeanFieldResult> {
    opts.validate()?;
    let n = fields.len();
    let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, w) in couplings {
        if i >= n || j >= n || i == j {
            return Err(Error::Usage(format!("coupling ({i},{j}) is invalid for {n} spins")));
        }
        neighbors[i].push((j, w));
        neighbors[j].push((i, w));
    }
    let mut m = vec![0.0; n];
    for it in 1..=opts.max_iters {
        let target: Vec<f64> = (0..n)
            .map(|i| (neighbors[i].iter().map(|&(j, w)| w * m[j]).sum::<f64>() + fields[i]).tanh())
            .collect();
        let mut delta = 0.0f64;
        for (mi, t) in m.iter_mut().zip(&target) {
            let next = opts.damp(*mi, *t);
            delta = delta.max((next - *mi).abs());
            *mi = next;
        }
        if delta < opts.tolerance {
            return Ok(MeanFieldResult { magnetizations: m, converged: true, iterations: it });
        }
    }
    Ok(MeanFieldResult { magnetizations: m, converged: false, iterations: opts.max_iters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{exact_marginals, exact_partition};
    use crate::region::{build_bethe_regions, Region};

    fn tight() -> SolverOptions {
        SolverOptions { tolerance: 1e-13, max_iters: 2000, ..SolverOptions::default() }
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    fn small_tree() -> FactorGraph {
        let mut fg = FactorGraph::with_uniform_cardinality(4, 2);
        fg.variables[2].cardinality = 3;
        fg.push_factor(vec![0, 1], vec![2.0, 0.5, 1.0, 3.0]);
        fg.push_factor(vec![1, 2], vec![1.0, 2.0, 0.3, 0.7, 1.5, 1.1]);
        fg.push_factor(vec![1, 3], vec![0.4, 1.0, 2.5, 1.0]);
        fg.push_factor(vec![2], vec![1.0, 0.2, 3.0]);
        fg
    }

    #[test]
    fn single_factor_belief_is_the_factor() {
        let h: f64 = 0.4;
        let mut fg = FactorGraph::with_uniform_cardinality(1, 2);
        fg.push_factor(vec![0], vec![h.exp(), (-h).exp()]);
        let res = sum_product_bp(&fg, &tight()).unwrap();
        let z = h.exp() + (-h).exp();
        assert_close(res.beliefs.get(0), &[h.exp() / z, (-h).exp() / z], 1e-12);
    }

    #[test]
    fn bp_and_gbp_are_exact_on_a_tree() {
        let fg = small_tree();
        let exact = exact_marginals(&fg).unwrap();
        let bp = sum_product_bp(&fg, &tight()).unwrap();
        assert!(bp.converged);
        for v in 0..4 {
            assert_close(bp.beliefs.get(v), &exact[v], 1e-10);
        }
        let rg = build_bethe_regions(&fg);
        let gbp = gbp_parent_to_child(&fg, &rg, &tight()).unwrap();
        assert!(gbp.converged);
        let f = fg.factors.len();
        for v in 0..4 {
            assert_close(gbp.beliefs.get(f + v), &exact[v], 1e-10);
        }
        let fe = region_free_energy(&fg, &rg, &gbp.beliefs, 1e-12).unwrap();
        assert!((fe + exact_partition(&fg).unwrap()).abs() < 1e-10);
        let bethe = bp.history.last().unwrap().free_energy;
        assert!((bethe - fe).abs() < 1e-10);
    }

    #[test]
    fn uniform_loopy_grid_converges_at_once() {
        let mut fg = FactorGraph::with_uniform_cardinality(4, 2);
        for (a, b) in [(0, 1), (1, 3), (2, 3), (0, 2)] {
            fg.push_factor(vec![a, b], vec![1.0; 4]);
        }
        let bp = sum_product_bp(&fg, &SolverOptions::default()).unwrap();
        assert!(bp.converged && bp.iterations == 1);
        assert!(bp.beliefs.tables.iter().all(|t| t == &vec![0.5, 0.5]));
        let rg = build_bethe_regions(&fg);
        let gbp = gbp_parent_to_child(&fg, &rg, &SolverOptions::default()).unwrap();
        assert!(gbp.converged && gbp.iterations == 1);
    }

    #[test]
    fn whole_graph_region_gives_minus_log_z() {
        let fg = small_tree();
        let rg = RegionGraph::new(
            vec![Region { id: 0, variables: vec![0, 1, 2, 3], factors: vec![0, 1, 2, 3] }],
            Vec::new(),
        )
        .unwrap();
        let res = gbp_parent_to_child(&fg, &rg, &tight()).unwrap();
        let fe = region_free_energy(&fg, &rg, &res.beliefs, 1e-12).unwrap();
        assert!((fe + exact_partition(&fg).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn uniform_beliefs_on_ones_give_minus_n_ln_2() {
        let mut fg = FactorGraph::with_uniform_cardinality(3, 2);
        fg.push_factor(vec![0, 1], vec![1.0; 4]);
        fg.push_factor(vec![1, 2], vec![1.0; 4]);
        fg.push_factor(vec![0, 2], vec![1.0; 4]);
        let rg = build_bethe_regions(&fg);
        let beliefs = BeliefSet {
            tables: rg.regions().iter().map(|r| vec![0.5f64.powi(r.variables.len() as i32); 1 << r.variables.len()]).collect(),
        };
        let fe = region_free_energy(&fg, &rg, &beliefs, 1e-12).unwrap();
        assert!((fe + 3.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn mean_field_examples() {
        let opts = SolverOptions { tolerance: 1e-14, max_iters: 10_000, ..SolverOptions::default() };
        let res = mean_field_solve(&[], &[0.3, -0.7], &opts).unwrap();
        assert_close(&res.magnetizations, &[0.3f64.tanh(), (-0.7f64).tanh()], 1e-13);
        let res = mean_field_solve(&[(0, 1, 0.5)], &[0.0, 0.0], &opts).unwrap();
        assert!(res.converged && res.magnetizations == vec![0.0, 0.0]);
        assert!(mean_field_solve(&[(0, 0, 1.0)], &[0.0], &opts).is_err());
    }

    #[test]
    fn options_are_validated() {
        let bad = SolverOptions { damping: 1.0, ..SolverOptions::default() };
        assert!(matches!(bad.validate(), Err(Error::Usage(_))));
        let bad = SolverOptions { tolerance: 0.0, ..SolverOptions::default() };
        assert!(bad.validate().is_err());
    }
}
