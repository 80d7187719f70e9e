//! Discrete variables, factor tables and factor graphs.
//!
//! Every table in the crate is flat and row-major over its scope in ascending
//! variable-id order, with the last scope variable varying fastest. The same
//! convention is used on disk, so a table written by one tool indexes the same
//! way everywhere.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A discrete variable with `cardinality` states `0..cardinality`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub id: usize,
    pub cardinality: usize,
}

/// A nonnegative potential over an ascending scope of variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTable {
    pub id: usize,
    pub scope: Vec<usize>,
    pub values: Vec<f64>,
}

/// Undirected model `p(x) = (1/Z) prod_a f_a(x_a)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FactorGraph {
    pub variables: Vec<VariableDecl>,
    pub factors: Vec<FactorTable>,
}

/// Number of joint states of a list of cardinalities, `None` on overflow.
pub fn state_count(cards: &[usize]) -> Option<usize> {
    cards.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c))
}

/// Flat row-major index of `assignment`, last variable fastest.
pub fn state_to_index(cards: &[usize], assignment: &[usize]) -> Result<usize> {
    if cards.len() != assignment.len() {
        return Err(Error::Index(format!(
            "assignment has {} values for {} variables",
            assignment.len(),
            cards.len()
        )));
    }
    let mut index = 0usize;
    for (k, (&card, &value)) in cards.iter().zip(assignment).enumerate() {
        if value >= card {
            return Err(Error::Index(format!(
                "value {value} at position {k} is out of range for cardinality {card}"
            )));
        }
        index = index
            .checked_mul(card)
            .and_then(|i| i.checked_add(value))
            .ok_or_else(|| Error::Index("joint index overflows usize".into()))?;
    }
    Ok(index)
}

/// Inverse of [`state_to_index`].
pub fn index_to_state(cards: &[usize], index: usize) -> Result<Vec<usize>> {
    let total = state_count(cards).ok_or_else(|| Error::Index("state count overflows".into()))?;
    if index >= total {
        return Err(Error::Index(format!(
            "index {index} is out of range for {total} joint states"
        )));
    }
    let mut out = vec![0; cards.len()];
    let mut rest = index;
    for (slot, &card) in out.iter_mut().zip(cards).rev() {
        *slot = rest % card;
        rest /= card;
    }
    Ok(out)
}

/// For every joint index over `cards`, the flat index of the sub-assignment made
/// of the positions in `keep` (in the given order).
pub fn projection_map(cards: &[usize], keep: &[usize]) -> Vec<usize> {
    let total = state_count(cards).expect("projection over an overflowing state space");
    let sub_cards: Vec<usize> = keep.iter().map(|&p| cards[p]).collect();
    let mut sub_strides = vec![0usize; cards.len()];
    let mut stride = 1;
    for (k, &p) in keep.iter().enumerate().rev() {
        sub_strides[p] += stride;
        stride *= sub_cards[k];
    }
    let mut out = Vec::with_capacity(total);
    let mut digits = vec![0usize; cards.len()];
    let mut sub = 0usize;
    for _ in 0..total {
        out.push(sub);
        for pos in (0..cards.len()).rev() {
            digits[pos] += 1;
            sub += sub_strides[pos];
            if digits[pos] < cards[pos] {
                break;
            }
            sub -= sub_strides[pos] * cards[pos];
            digits[pos] = 0;
        }
    }
    out
}

/// Positions of `sub` inside the ascending list `vars`, or `None` when some
/// element of `sub` is missing.
pub fn positions_in(vars: &[usize], sub: &[usize]) -> Option<Vec<usize>> {
    sub.iter().map(|v| vars.binary_search(v).ok()).collect()
}

/// One violated invariant of a [`FactorGraph`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    VariableId { position: usize, id: usize },
    Cardinality { variable: usize, cardinality: usize },
    DuplicateFactorId { id: usize },
    EmptyScope { factor: usize },
    UnsortedScope { factor: usize },
    DanglingReference { factor: usize, variable: usize },
    TableLength { factor: usize, expected: usize, actual: usize },
    NegativeValue { factor: usize, index: usize },
    NonFiniteValue { factor: usize, index: usize },
    AllZero { factor: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::VariableId { position, id } => {
                write!(f, "variable at position {position} has id {id}; ids must be 0..N-1 in order")
            }
            Violation::Cardinality { variable, cardinality } => {
                write!(f, "variable {variable} has cardinality {cardinality} < 2")
            }
            Violation::DuplicateFactorId { id } => write!(f, "factor id {id} is used twice"),
            Violation::EmptyScope { factor } => write!(f, "factor {factor} has an empty scope"),
            Violation::UnsortedScope { factor } => {
                write!(f, "factor {factor} scope is not strictly ascending")
            }
            Violation::DanglingReference { factor, variable } => {
                write!(f, "factor {factor} references undeclared variable {variable}")
            }
            Violation::TableLength { factor, expected, actual } => write!(
                f,
                "factor {factor} table has length {actual}, expected {expected}"
            ),
            Violation::NegativeValue { factor, index } => {
                write!(f, "factor {factor} has a negative value at index {index}")
            }
            Violation::NonFiniteValue { factor, index } => {
                write!(f, "factor {factor} has a non-finite value at index {index}")
            }
            Violation::AllZero { factor } => write!(f, "factor {factor} has no positive entry"),
        }
    }
}

/// Every violated invariant found by a validation pass. Empty iff valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport<V> {
    pub violations: Vec<V>,
}

impl<V> ValidationReport<V> {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl<V: fmt::Display> fmt::Display for ValidationReport<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks ids, cardinalities, scopes and tables; reports every violation.
pub fn validate_factor_graph(fg: &FactorGraph) -> ValidationReport<Violation> {
    let mut violations = Vec::new();
    for (position, var) in fg.variables.iter().enumerate() {
        if var.id != position {
            violations.push(Violation::VariableId { position, id: var.id });
        }
        if var.cardinality < 2 {
            violations.push(Violation::Cardinality {
                variable: var.id,
                cardinality: var.cardinality,
            });
        }
    }
    let n = fg.variables.len();
    let mut seen_ids = std::collections::BTreeSet::new();
    for factor in &fg.factors {
        if !seen_ids.insert(factor.id) {
            violations.push(Violation::DuplicateFactorId { id: factor.id });
        }
        if factor.scope.is_empty() {
            violations.push(Violation::EmptyScope { factor: factor.id });
        }
        if factor.scope.windows(2).any(|w| w[0] >= w[1]) {
            violations.push(Violation::UnsortedScope { factor: factor.id });
        }
        let mut dangling = false;
        for &v in &factor.scope {
            if v >= n {
                dangling = true;
                violations.push(Violation::DanglingReference {
                    factor: factor.id,
                    variable: v,
                });
            }
        }
        if !dangling {
            let cards: Vec<usize> = factor.scope.iter().map(|&v| fg.variables[v].cardinality).collect();
            let expected = state_count(&cards).unwrap_or(usize::MAX);
            if expected != factor.values.len() {
                violations.push(Violation::TableLength {
                    factor: factor.id,
                    expected,
                    actual: factor.values.len(),
                });
            }
        }
        check_values(factor.id, &factor.values, &mut violations);
    }
    ValidationReport { violations }
}

pub(crate) fn check_values(factor: usize, values: &[f64], out: &mut Vec<Violation>) {
    for (index, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            out.push(Violation::NonFiniteValue { factor, index });
        } else if v < 0.0 {
            out.push(Violation::NegativeValue { factor, index });
        }
    }
    if !values.is_empty() && !values.iter().any(|&v| v > 0.0) {
        out.push(Violation::AllZero { factor });
    }
}

impl FactorGraph {
    /// Builds a graph and rejects it if any invariant is violated.
    pub fn new(variables: Vec<VariableDecl>, factors: Vec<FactorTable>) -> Result<Self> {
        let fg = FactorGraph { variables, factors };
        let report = validate_factor_graph(&fg);
        if !report.is_valid() {
            return Err(Error::InvalidModel(report.to_string()));
        }
        Ok(fg)
    }

    /// `n` variables of equal cardinality and no factors.
    pub fn with_uniform_cardinality(n: usize, cardinality: usize) -> Self {
        FactorGraph {
            variables: (0..n).map(|id| VariableDecl { id, cardinality }).collect(),
            factors: Vec::new(),
        }
    }

    /// Appends a factor with the next free id and returns that id.
    pub fn push_factor(&mut self, scope: Vec<usize>, values: Vec<f64>) -> usize {
        let id = self.factors.iter().map(|f| f.id + 1).max().unwrap_or(0);
        self.factors.push(FactorTable { id, scope, values });
        id
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.cardinality).collect()
    }

    pub fn scope_cardinalities(&self, scope: &[usize]) -> Vec<usize> {
        scope.iter().map(|&v| self.variables[v].cardinality).collect()
    }

    /// Position of the factor with the given id.
    pub fn factor_position(&self, id: usize) -> Option<usize> {
        self.factors.iter().position(|f| f.id == id)
    }

    /// Joint state count as a wide integer so callers can compare against caps.
    pub fn joint_state_count(&self) -> u128 {
        self.variables
            .iter()
            .try_fold(1u128, |acc, v| acc.checked_mul(v.cardinality as u128))
            .unwrap_or(u128::MAX)
    }

    /// Factor positions incident to each variable.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.variables.len()];
        for (k, f) in self.factors.iter().enumerate() {
            for &v in &f.scope {
                inc[v].push(k);
            }
        }
        inc
    }

    pub fn scopes(&self) -> Vec<Vec<usize>> {
        self.factors.iter().map(|f| f.scope.clone()).collect()
    }
}

/// `prod_a f_a(x_a)` for a full assignment, without the `1/Z`.
pub fn evaluate_joint_unnormalized(fg: &FactorGraph, assignment: &[usize]) -> Result<f64> {
    if assignment.len() != fg.variables.len() {
        return Err(Error::Index(format!(
            "assignment covers {} of {} variables",
            assignment.len(),
            fg.variables.len()
        )));
    }
    let mut product = 1.0;
    let mut local = Vec::new();
    for factor in &fg.factors {
        local.clear();
        local.extend(factor.scope.iter().map(|&v| assignment[v]));
        let cards = fg.scope_cardinalities(&factor.scope);
        let idx = state_to_index(&cards, &local)?;
        product *= factor.values[idx];
    }
    Ok(product)
}

/// Numerically stable `ln sum exp`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Turns log weights into a normalized distribution in place; returns `ln` of
/// the normalizer.
pub fn normalize_log_weights(values: &mut [f64]) -> f64 {
    let lse = log_sum_exp(values);
    for v in values.iter_mut() {
        *v = (*v - lse).exp();
    }
    lse
}

/// `ln(max(x, floor))`.
#[inline]
pub fn clamped_ln(x: f64, floor: f64) -> f64 {
    x.max(floor).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn chain(f: [f64; 4]) -> FactorGraph {
        let mut fg = FactorGraph::with_uniform_cardinality(3, 2);
        fg.push_factor(vec![0, 1], f.to_vec());
        fg.push_factor(vec![1, 2], f.to_vec());
        fg
    }

    #[test]
    fn indexing_examples() {
        assert_eq!(state_to_index(&[2, 2], &[0, 0]).unwrap(), 0);
        assert_eq!(state_to_index(&[2, 2], &[1, 0]).unwrap(), 2);
        assert_eq!(state_to_index(&[2, 3], &[1, 2]).unwrap(), 5);
        assert!(matches!(state_to_index(&[2, 3], &[2, 0]), Err(Error::Index(_))));
        assert!(matches!(state_to_index(&[2, 3], &[1]), Err(Error::Index(_))));
        assert_eq!(index_to_state(&[2, 3], 5).unwrap(), vec![1, 2]);
        assert!(index_to_state(&[2, 3], 6).is_err());
    }

    #[test]
    fn round_trip_is_exhaustive_for_small_profiles() {
        let profiles: &[&[usize]] = &[&[2], &[2, 2], &[3, 2, 4], &[10, 10, 10, 10], &[2, 5, 2, 5, 2, 5]];
        for cards in profiles {
            let total = state_count(cards).unwrap();
            assert!(total <= 10_000);
            for idx in 0..total {
                let s = index_to_state(cards, idx).unwrap();
                assert_eq!(state_to_index(cards, &s).unwrap(), idx);
            }
        }
    }

    #[test]
    fn projection_matches_direct_indexing() {
        let cards = [2, 3, 4];
        let keep = [0, 2];
        let map = projection_map(&cards, &keep);
        for (idx, &sub) in map.iter().enumerate() {
            let s = index_to_state(&cards, idx).unwrap();
            assert_eq!(sub, state_to_index(&[2, 4], &[s[0], s[2]]).unwrap());
        }
        assert_eq!(projection_map(&cards, &[]), vec![0; 24]);
    }

    #[test]
    fn joint_evaluation() {
        let mut ones = FactorGraph::with_uniform_cardinality(3, 2);
        ones.push_factor(vec![0, 1], vec![1.0; 4]);
        assert_eq!(evaluate_joint_unnormalized(&ones, &[1, 0, 1]).unwrap(), 1.0);

        let fg = chain([2.0, 1.0, 1.0, 2.0]);
        assert_eq!(evaluate_joint_unnormalized(&fg, &[0, 0, 0]).unwrap(), 4.0);
        assert_eq!(evaluate_joint_unnormalized(&fg, &[0, 1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn validation_reports() {
        assert!(validate_factor_graph(&chain([2.0, 1.0, 1.0, 2.0])).is_valid());

        let mut bad_len = FactorGraph::with_uniform_cardinality(3, 2);
        bad_len.push_factor(vec![0, 1], vec![1.0; 3]);
        let report = validate_factor_graph(&bad_len);
        assert_eq!(
            report.violations,
            vec![Violation::TableLength { factor: 0, expected: 4, actual: 3 }]
        );

        let mut dangling = FactorGraph::with_uniform_cardinality(3, 2);
        dangling.push_factor(vec![0, 99], vec![1.0; 4]);
        let report = validate_factor_graph(&dangling);
        assert!(report
            .violations
            .contains(&Violation::DanglingReference { factor: 0, variable: 99 }));

        let mut several = FactorGraph::with_uniform_cardinality(2, 2);
        several.push_factor(vec![1, 0], vec![0.0, -1.0, 0.0, 0.0]);
        let report = validate_factor_graph(&several);
        assert!(report.violations.contains(&Violation::UnsortedScope { factor: 0 }));
        assert!(report.violations.contains(&Violation::NegativeValue { factor: 0, index: 1 }));
        assert!(report.violations.contains(&Violation::AllZero { factor: 0 }));
        assert!(FactorGraph::new(several.variables, several.factors).is_err());
    }

    #[test]
    fn log_helpers() {
        let lse = log_sum_exp(&[0.0, 0.0]);
        assert!((lse - 2f64.ln()).abs() < 1e-15);
        let mut w = vec![1000.0, 1000.0 + 3f64.ln()];
        normalize_log_weights(&mut w);
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
