//! Factorized transition models `p(x' | x) = (1/Z(x)) prod_a f_a(x'_a | x_a)`
//! and the per-region path beliefs inferred over one time step.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_values, index_to_state, positions_in, projection_map, state_count, state_to_index, FactorGraph, FactorTable,
    VariableDecl, Violation,
};
use crate::region::{bethe_from_scopes, validate_counting_scopes, RegionGraph};

/// A nonnegative table over `(past_scope, future_scope)`: the past variables
/// index first, the future variables after them, last variable fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalFactor {
    pub id: usize,
    pub past_scope: Vec<usize>,
    pub future_scope: Vec<usize>,
    pub values: Vec<f64>,
}

impl TemporalFactor {
    /// Union of the past and future scopes, ascending.
    pub fn variables(&self) -> Vec<usize> {
        let mut vars: Vec<usize> = self.past_scope.iter().chain(&self.future_scope).copied().collect();
        vars.sort_unstable();
        vars.dedup();
        vars
    }
}

/// Variables, transition factors and the region graph inference runs on.
/// Region factor ids refer to [`TemporalFactor::id`].
#[derive(Debug, Clone)]
pub struct TemporalModel {
    pub variables: Vec<VariableDecl>,
    pub factors: Vec<TemporalFactor>,
    pub regions: RegionGraph,
}

/// A violated invariant of a [`TemporalModel`].
#[derive(Debug, Clone, PartialEq)]
pub enum TemporalViolation {
    Table(Violation),
    Uncovered { variable: usize },
    Counting(String),
}

impl fmt::Display for TemporalViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemporalViolation::Table(v) => write!(f, "{v}"),
            TemporalViolation::Uncovered { variable } => {
                write!(f, "variable {variable} is not in the future scope of any factor")
            }
            TemporalViolation::Counting(msg) => write!(f, "{msg}"),
        }
    }
}

/// Checks ids, scopes, tables, variable coverage and region counting.
pub fn validate_temporal_model(
    variables: &[VariableDecl],
    factors: &[TemporalFactor],
    regions: &RegionGraph,
) -> crate::model::ValidationReport<TemporalViolation> {
    let mut table = Vec::new();
    for (position, var) in variables.iter().enumerate() {
        if var.id != position {
            table.push(Violation::VariableId { position, id: var.id });
        }
        if var.cardinality < 2 {
            table.push(Violation::Cardinality { variable: var.id, cardinality: var.cardinality });
        }
    }
    let n = variables.len();
    let mut ids = std::collections::BTreeSet::new();
    let mut covered = vec![false; n];
    for factor in factors {
        if !ids.insert(factor.id) {
            table.push(Violation::DuplicateFactorId { id: factor.id });
        }
        if factor.future_scope.is_empty() {
            table.push(Violation::EmptyScope { factor: factor.id });
        }
        for scope in [&factor.past_scope, &factor.future_scope] {
            if scope.windows(2).any(|w| w[0] >= w[1]) {
                table.push(Violation::UnsortedScope { factor: factor.id });
            }
        }
        let mut dangling = false;
        for &v in factor.past_scope.iter().chain(&factor.future_scope) {
            if v >= n {
                dangling = true;
                table.push(Violation::DanglingReference { factor: factor.id, variable: v });
            }
        }
        if !dangling {
            for &v in &factor.future_scope {
                covered[v] = true;
            }
            let cards: Vec<usize> = factor
                .past_scope
                .iter()
                .chain(&factor.future_scope)
                .map(|&v| variables[v].cardinality)
                .collect();
            let expected = state_count(&cards).unwrap_or(usize::MAX);
            if expected != factor.values.len() {
                table.push(Violation::TableLength { factor: factor.id, expected, actual: factor.values.len() });
            }
        }
        check_values(factor.id, &factor.values, &mut table);
    }
    let mut violations: Vec<TemporalViolation> = table.into_iter().map(TemporalViolation::Table).collect();
    for (variable, ok) in covered.into_iter().enumerate() {
        if !ok {
            violations.push(TemporalViolation::Uncovered { variable });
        }
    }
    if violations.is_empty() {
        let scopes: Vec<(usize, Vec<usize>)> = factors.iter().map(|f| (f.id, f.variables())).collect();
        let report = validate_counting_scopes(regions, n, &scopes);
        violations.extend(report.violations.iter().map(|v| TemporalViolation::Counting(v.to_string())));
    }
    crate::model::ValidationReport { violations }
}

impl TemporalModel {
    /// Builds and validates a model over a caller-supplied region graph.
    pub fn new(variables: Vec<VariableDecl>, factors: Vec<TemporalFactor>, regions: RegionGraph) -> Result<Self> {
        let report = validate_temporal_model(&variables, &factors, &regions);
        if !report.is_valid() {
            return Err(Error::InvalidModel(report.to_string()));
        }
        Ok(TemporalModel { variables, factors, regions })
    }

    /// Builds a model with Bethe regions over the factors' joint scopes.
    pub fn with_bethe_regions(variables: Vec<VariableDecl>, factors: Vec<TemporalFactor>) -> Result<Self> {
        let scopes: Vec<(usize, Vec<usize>)> = factors.iter().map(|f| (f.id, f.variables())).collect();
        let regions = bethe_from_scopes(variables.len(), &scopes);
        Self::new(variables, factors, regions)
    }

    /// The same model wrapped in one region that holds every variable and
    /// factor, which makes region inference exact.
    pub fn with_single_region(variables: Vec<VariableDecl>, factors: Vec<TemporalFactor>) -> Result<Self> {
        let region = crate::region::Region {
            id: 0,
            variables: (0..variables.len()).collect(),
            factors: factors.iter().map(|f| f.id).collect(),
        };
        let regions = RegionGraph::new(vec![region], Vec::new())?;
        Self::new(variables, factors, regions)
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.cardinality).collect()
    }

    pub fn joint_state_count(&self) -> u128 {
        self.variables
            .iter()
            .try_fold(1u128, |acc, v| acc.checked_mul(v.cardinality as u128))
            .unwrap_or(u128::MAX)
    }

    pub fn factor(&self, id: usize) -> Option<&TemporalFactor> {
        match self.factors.get(id) {
            Some(f) if f.id == id => Some(f),
            _ => self.factors.iter().find(|f| f.id == id),
        }
    }

    /// Cardinalities of a region's variables.
    pub fn region_cardinalities(&self, region: usize) -> Vec<usize> {
        self.regions.region(region).variables.iter().map(|&v| self.variables[v].cardinality).collect()
    }

    /// Number of states of one time slice of a region.
    pub fn region_state_count(&self, region: usize) -> usize {
        state_count(&self.region_cardinalities(region)).expect("region state space overflows")
    }

    /// `sum_a ln max(f_a, floor)` over the region's factors, as a table over
    /// `past * S + future` where `S` is the region's slice state count.
    pub fn region_log_factors(&self, region: usize, floor: f64) -> Vec<f64> {
        let r = self.regions.region(region);
        let cards = self.region_cardinalities(region);
        let s = state_count(&cards).expect("region state space overflows");
        let mut out = vec![0.0; s * s];
        for &fid in &r.factors {
            let factor = self.factor(fid).expect("region references a validated factor");
            let past_pos = positions_in(&r.variables, &factor.past_scope).expect("factor closure");
            let fut_pos = positions_in(&r.variables, &factor.future_scope).expect("factor closure");
            let past_map = projection_map(&cards, &past_pos);
            let fut_map = projection_map(&cards, &fut_pos);
            let fut_states: usize = factor.future_scope.iter().map(|&v| self.variables[v].cardinality).product();
            let logs: Vec<f64> = factor.values.iter().map(|&v| v.max(floor).ln()).collect();
            for past in 0..s {
                let base = past_map[past] * fut_states;
                let row = &mut out[past * s..(past + 1) * s];
                for (fut, slot) in row.iter_mut().enumerate() {
                    *slot += logs[base + fut_map[fut]];
                }
            }
        }
        out
    }
}

/// Per-region joint (past, future) beliefs and the past-slice priors they are
/// constrained to.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBeliefStore {
    /// `path[r][past * S + future]`.
    pub path: Vec<Vec<f64>>,
    /// `prior[r][past]`.
    pub prior: Vec<Vec<f64>>,
}

impl PathBeliefStore {
    /// Sum over past states: the region's belief at the next time.
    pub fn future_marginal(&self, region: usize) -> Vec<f64> {
        let s = self.prior[region].len();
        let mut out = vec![0.0; s];
        for (j, &b) in self.path[region].iter().enumerate() {
            out[j % s] += b;
        }
        out
    }

    /// Sum over future states.
    pub fn past_marginal(&self, region: usize) -> Vec<f64> {
        let s = self.prior[region].len();
        let mut out = vec![0.0; s];
        for (j, &b) in self.path[region].iter().enumerate() {
            out[j / s] += b;
        }
        out
    }
}

/// Marginal of a table over `cards` onto the positions `keep`.
pub fn marginalize(table: &[f64], cards: &[usize], keep: &[usize]) -> Vec<f64> {
    let map = projection_map(cards, keep);
    let size: usize = keep.iter().map(|&p| cards[p]).product();
    let mut out = vec![0.0; size];
    for (&m, &v) in map.iter().zip(table) {
        out[m] += v;
    }
    out
}

/// Region priors from a full joint distribution over all variables.
pub fn priors_from_joint(tm: &TemporalModel, joint: &[f64]) -> Vec<Vec<f64>> {
    let cards = tm.cardinalities();
    tm.regions
        .regions()
        .iter()
        .map(|r| marginalize(joint, &cards, &r.variables))
        .collect()
}

/// Region priors from independent per-variable marginals.
pub fn priors_from_product(tm: &TemporalModel, marginals: &[Vec<f64>]) -> Vec<Vec<f64>> {
    tm.regions
        .regions()
        .iter()
        .map(|r| {
            let mut table = vec![1.0];
            for &v in &r.variables {
                let m = &marginals[v];
                table = table.iter().flat_map(|&a| m.iter().map(move |&b| a * b)).collect();
            }
            table
        })
        .collect()
}

/// Full joint of independent per-variable marginals.
pub fn product_joint(marginals: &[Vec<f64>]) -> Vec<f64> {
    let mut table = vec![1.0];
    for m in marginals {
        table = table.iter().flat_map(|&a| m.iter().map(move |&b| a * b)).collect();
    }
    table
}

/// Per-variable marginals read off region tables: each variable from the
/// smallest region that contains it (ties to the lower id).
pub fn variable_marginals(tm: &TemporalModel, region_tables: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..tm.num_variables())
        .map(|v| {
            let (rid, pos) = tm
                .regions
                .regions()
                .iter()
                .filter_map(|r| r.variables.binary_search(&v).ok().map(|p| (r.id, p)))
                .min_by_key(|&(rid, _)| (tm.regions.region(rid).variables.len(), rid))
                .expect("every variable sits in some region");
            marginalize(&region_tables[rid], &tm.region_cardinalities(rid), &[pos])
        })
        .collect()
}

/// One step unrolled into a static graph: past variable `v` keeps id `v`, its
/// future copy gets `N + v`, every transition factor spans both, and
/// `past_marginals` enter as unary factors on the past slice (ids after the
/// transition factors).
pub fn slice_factor_graph(tm: &TemporalModel, past_marginals: &[Vec<f64>]) -> Result<FactorGraph> {
    let n = tm.num_variables();
    if past_marginals.len() != n {
        return Err(Error::Usage(format!("{} past marginals for {n} variables", past_marginals.len())));
    }
    let cards = tm.cardinalities();
    let mut variables: Vec<VariableDecl> = tm.variables.clone();
    variables.extend(tm.variables.iter().map(|v| VariableDecl { id: n + v.id, cardinality: v.cardinality }));
    let mut factors = Vec::with_capacity(tm.factors.len() + n);
    for (k, f) in tm.factors.iter().enumerate() {
        let order: Vec<usize> = f.past_scope.iter().copied().chain(f.future_scope.iter().map(|&v| n + v)).collect();
        let order_cards: Vec<usize> = order.iter().map(|&v| cards[v % n]).collect();
        let mut scope = order.clone();
        scope.sort_unstable();
        let scope_cards: Vec<usize> = scope.iter().map(|&v| cards[v % n]).collect();
        let size = state_count(&scope_cards).ok_or_else(|| Error::Index("slice factor too large".into()))?;
        let mut values = Vec::with_capacity(size);
        for j in 0..size {
            let digits = index_to_state(&scope_cards, j)?;
            let reordered: Vec<usize> =
                order.iter().map(|v| digits[scope.binary_search(v).expect("scope holds order")]).collect();
            values.push(f.values[state_to_index(&order_cards, &reordered)?]);
        }
        factors.push(FactorTable { id: k, scope, values });
    }
    for (v, m) in past_marginals.iter().enumerate() {
        factors.push(FactorTable { id: tm.factors.len() + v, scope: vec![v], values: m.clone() });
    }
    FactorGraph::new(variables, factors)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn region_log_factors_follow_past_major_layout() {
        let tm = flip_spin(0.1);
        let logs = tm.region_log_factors(0, 1e-12);
        let expected: Vec<f64> = [0.9f64, 0.1, 0.1, 0.9].iter().map(|v| v.ln()).collect();
        for (a, b) in logs.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
        // The small region holds no factor.
        assert_eq!(tm.region_log_factors(1, 1e-12), vec![0.0; 4]);
    }

    #[test]
    fn uncovered_variable_is_reported() {
        let vars = vec![VariableDecl { id: 0, cardinality: 2 }, VariableDecl { id: 1, cardinality: 2 }];
        let f = TemporalFactor { id: 0, past_scope: vec![0, 1], future_scope: vec![0], values: vec![1.0; 8] };
        let err = TemporalModel::with_bethe_regions(vars, vec![f]).unwrap_err();
        assert!(err.to_string().contains("variable 1"));
    }

    #[test]
    fn product_priors_marginalize_consistently() {
        let tm = identity(2, 3);
        let marg = vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.3, 0.1]];
        let priors = priors_from_product(&tm, &marg);
        let joint = product_joint(&marg);
        assert_eq!(priors_from_joint(&tm, &joint).len(), priors.len());
        for (a, b) in priors.iter().zip(priors_from_joint(&tm, &joint)) {
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        let back = variable_marginals(&tm, &priors);
        assert!((back[1][2] - 0.1).abs() < 1e-15);
    }
}
