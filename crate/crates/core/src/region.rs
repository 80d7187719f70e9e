//! Region graphs: clusters of factors and variables, counting numbers and the
//! parent/child bookkeeping used by parent-to-child message passing.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FactorGraph, ValidationReport};

/// A cluster of variables and the factors it owns. Both lists are ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    pub variables: Vec<usize>,
    pub factors: Vec<usize>,
}

impl Region {
    /// True when `self` is a proper sub-region of `other`.
    pub fn is_sub_region_of(&self, other: &Region) -> bool {
        let vars = is_subset(&self.variables, &other.variables);
        let facs = is_subset(&self.factors, &other.factors);
        vars && facs && (self.variables != other.variables || self.factors != other.factors)
    }
}

fn is_subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| b.binary_search(x).is_ok())
}

/// Regions, parent-to-child edges and counting numbers.
///
/// Region ids are dense and equal to their position; every iteration over
/// regions or edges runs in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    regions: Vec<Region>,
    edges: Vec<(usize, usize)>,
    counting: Vec<i64>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

/// `N(P,R)`, `D(P,R)` and `E(R)` for one parent-to-child edge.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RelationSets {
    pub n_set: Vec<(usize, usize)>,
    pub d_set: Vec<(usize, usize)>,
    pub e_of_r: Vec<usize>,
}

impl RegionGraph {
    /// Builds a region graph from regions and `(parent, child)` edges and
    /// computes its counting numbers.
    pub fn new(regions: Vec<Region>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut rg = Self::from_parts(regions, edges, Vec::new())?;
        rg.compute_counting_numbers()?;
        Ok(rg)
    }

    /// Builds a region graph with caller-supplied counting numbers. An empty
    /// `counting` leaves them at zero until [`Self::compute_counting_numbers`].
    pub fn from_parts(
        mut regions: Vec<Region>,
        mut edges: Vec<(usize, usize)>,
        counting: Vec<i64>,
    ) -> Result<Self> {
        regions.sort_by_key(|r| r.id);
        for (pos, r) in regions.iter_mut().enumerate() {
            if r.id != pos {
                return Err(Error::Structural(format!(
                    "region ids must be dense 0..R-1; found id {} at position {pos}",
                    r.id
                )));
            }
            r.variables.sort_unstable();
            r.variables.dedup();
            r.factors.sort_unstable();
            r.factors.dedup();
        }
        edges.sort_unstable();
        edges.dedup();
        let n = regions.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(p, c) in &edges {
            if p >= n || c >= n {
                return Err(Error::Structural(format!("edge ({p},{c}) references a missing region")));
            }
            if !regions[c].is_sub_region_of(&regions[p]) {
                return Err(Error::Structural(format!(
                    "edge ({p},{c}): child is not a proper sub-region of its parent"
                )));
            }
            parents[c].push(p);
            children[p].push(c);
        }
        let counting = if counting.is_empty() { vec![0; n] } else { counting };
        if counting.len() != n {
            return Err(Error::Structural(format!(
                "{} counting numbers supplied for {n} regions",
                counting.len()
            )));
        }
        let rg = RegionGraph { regions, edges, counting, parents, children };
        rg.topological_order()?;
        Ok(rg)
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, id: usize) -> &Region {
        &self.regions[id]
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// `(parent, child)` pairs in ascending order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn counting_numbers(&self) -> &[i64] {
        &self.counting
    }

    pub fn counting_number(&self, id: usize) -> i64 {
        self.counting[id]
    }

    pub fn parents(&self, id: usize) -> &[usize] {
        &self.parents[id]
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn is_edge(&self, parent: usize, child: usize) -> bool {
        self.edges.binary_search(&(parent, child)).is_ok()
    }

    /// Kahn order with smallest-id tie-breaking; fails on a directed cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.regions.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&r| indegree[r] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(r) = ready.pop_first() {
            order.push(r);
            for &c in &self.children[r] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Structural("region graph contains a directed cycle".into()));
        }
        Ok(order)
    }

    fn closure(&self, start: usize, next: &[Vec<usize>]) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<usize> = next[start].iter().copied().collect();
        while let Some(r) = queue.pop_front() {
            if seen.insert(r) {
                queue.extend(next[r].iter().copied());
            }
        }
        seen
    }

    /// All regions reachable by following child edges (excluding `id`).
    pub fn descendants(&self, id: usize) -> BTreeSet<usize> {
        self.closure(id, &self.children)
    }

    /// All super-regions of `id`: every DAG ancestor.
    pub fn ancestors(&self, id: usize) -> BTreeSet<usize> {
        self.closure(id, &self.parents)
    }

    /// `E(R) = R ∪ descendants(R)`.
    pub fn region_and_descendants(&self, id: usize) -> BTreeSet<usize> {
        let mut e = self.descendants(id);
        e.insert(id);
        e
    }

    /// Fills `c_R = 1 - sum over super-regions S of c_S`, top-down.
    pub fn compute_counting_numbers(&mut self) -> Result<()> {
        let order = self.topological_order()?;
        let mut counting = vec![0i64; self.regions.len()];
        for r in order {
            let above: i64 = self.ancestors(r).iter().map(|&a| counting[a]).sum();
            counting[r] = 1 - above;
        }
        self.counting = counting;
        Ok(())
    }

    /// Directed edges `(I, J)` with `J ∈ E(R)` and `I ∉ E(R)`: the messages a
    /// region belief is assembled from.
    pub fn belief_messages(&self, id: usize) -> Vec<(usize, usize)> {
        let e = self.region_and_descendants(id);
        let mut out = Vec::new();
        for &j in &e {
            for &i in &self.parents[j] {
                if !e.contains(&i) {
                    out.push((i, j));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Relation sets of the edge `(parent, child)`.
    pub fn relation_sets(&self, parent: usize, child: usize) -> Result<RelationSets> {
        if !self.is_edge(parent, child) {
            return Err(Error::Usage(format!("({parent},{child}) is not an edge of the region graph")));
        }
        let e_p = self.region_and_descendants(parent);
        let e_r = self.region_and_descendants(child);
        let mut n_set = Vec::new();
        let mut d_set = Vec::new();
        for &j in e_p.difference(&e_r) {
            for &i in &self.parents[j] {
                if !e_p.contains(&i) {
                    n_set.push((i, j));
                }
            }
        }
        for &j in &e_r {
            for &i in &self.parents[j] {
                if e_p.contains(&i) && !e_r.contains(&i) && (i, j) != (parent, child) {
                    d_set.push((i, j));
                }
            }
        }
        n_set.sort_unstable();
        d_set.sort_unstable();
        Ok(RelationSets { n_set, d_set, e_of_r: e_r.into_iter().collect() })
    }

    /// Regions with a nonzero counting number; the rest drop out of every
    /// free-energy sum.
    pub fn active_regions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.regions.len()).filter(|&r| self.counting[r] != 0)
    }
}

/// One large region per factor and one small region per variable, with an edge
/// from a large region to every variable in its scope.
///
/// Large regions take ids `0..F` in factor order, small regions follow.
pub fn bethe_from_scopes(num_variables: usize, factors: &[(usize, Vec<usize>)]) -> RegionGraph {
    let mut regions = Vec::with_capacity(factors.len() + num_variables);
    let mut edges = Vec::new();
    for (k, (fid, scope)) in factors.iter().enumerate() {
        let mut vars = scope.clone();
        vars.sort_unstable();
        vars.dedup();
        for &v in &vars {
            edges.push((k, factors.len() + v));
        }
        regions.push(Region { id: k, variables: vars, factors: vec![*fid] });
    }
    for v in 0..num_variables {
        regions.push(Region { id: factors.len() + v, variables: vec![v], factors: Vec::new() });
    }
    RegionGraph::new(regions, edges).expect("Bethe construction is always a valid DAG")
}

/// Bethe regions of a factor graph.
pub fn build_bethe_regions(fg: &FactorGraph) -> RegionGraph {
    let factors: Vec<(usize, Vec<usize>)> = fg.factors.iter().map(|f| (f.id, f.scope.clone())).collect();
    bethe_from_scopes(fg.num_variables(), &factors)
}

/// A violated counting or closure constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum CountingViolation {
    Factor { factor: usize, sum: i64 },
    Variable { variable: usize, sum: i64 },
    UnknownFactor { region: usize, factor: usize },
    UnknownVariable { region: usize, variable: usize },
    FactorClosure { region: usize, factor: usize, variable: usize },
}

impl fmt::Display for CountingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CountingViolation::Factor { factor, sum } => {
                write!(f, "factor {factor}: counting numbers sum to {sum}, expected 1")
            }
            CountingViolation::Variable { variable, sum } => {
                write!(f, "variable {variable}: counting numbers sum to {sum}, expected 1")
            }
            CountingViolation::UnknownFactor { region, factor } => {
                write!(f, "region {region} references unknown factor {factor}")
            }
            CountingViolation::UnknownVariable { region, variable } => {
                write!(f, "region {region} references unknown variable {variable}")
            }
            CountingViolation::FactorClosure { region, factor, variable } => write!(
                f,
                "region {region} holds factor {factor} but not its variable {variable}"
            ),
        }
    }
}

/// Checks that every factor and every variable is counted exactly once, and
/// that regions are closed under their factors' scopes.
pub fn validate_counting_scopes(
    rg: &RegionGraph,
    num_variables: usize,
    factors: &[(usize, Vec<usize>)],
) -> ValidationReport<CountingViolation> {
    let mut violations = Vec::new();
    let mut factor_sum: std::collections::BTreeMap<usize, i64> =
        factors.iter().map(|(id, _)| (*id, 0)).collect();
    let mut var_sum = vec![0i64; num_variables];
    for region in rg.regions() {
        let c = rg.counting_number(region.id);
        for &v in &region.variables {
            match var_sum.get_mut(v) {
                Some(s) => *s += c,
                None => violations.push(CountingViolation::UnknownVariable { region: region.id, variable: v }),
            }
        }
        for &fid in &region.factors {
            match factor_sum.get_mut(&fid) {
                Some(s) => *s += c,
                None => violations.push(CountingViolation::UnknownFactor { region: region.id, factor: fid }),
            }
            if let Some((_, scope)) = factors.iter().find(|(id, _)| *id == fid) {
                for &v in scope {
                    if region.variables.binary_search(&v).is_err() {
                        violations.push(CountingViolation::FactorClosure {
                            region: region.id,
                            factor: fid,
                            variable: v,
                        });
                    }
                }
            }
        }
    }
    for (factor, sum) in factor_sum {
        if sum != 1 {
            violations.push(CountingViolation::Factor { factor, sum });
        }
    }
    for (variable, sum) in var_sum.into_iter().enumerate() {
        if sum != 1 {
            violations.push(CountingViolation::Variable { variable, sum });
        }
    }
    ValidationReport { violations }
}

/// [`validate_counting_scopes`] for a static factor graph.
pub fn validate_counting(rg: &RegionGraph, fg: &FactorGraph) -> ValidationReport<CountingViolation> {
    let factors: Vec<(usize, Vec<usize>)> = fg.factors.iter().map(|f| (f.id, f.scope.clone())).collect();
    validate_counting_scopes(rg, fg.num_variables(), &factors)
}
