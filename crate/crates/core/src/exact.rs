//! Brute-force enumeration: partition functions, marginals, MAP states and
//! exact temporal evolution for models small enough to list every state.

use crate::error::{Error, Result};
use crate::model::{index_to_state, projection_map, FactorGraph};
use crate::temporal::TemporalModel;

/// Default joint-state cap for static enumeration.
pub const STATIC_STATE_CAP: u128 = 1 << 24;
/// Default joint-state cap for temporal enumeration (the kernel is quadratic).
pub const TEMPORAL_STATE_CAP: u128 = 1 << 12;
/// Largest kernel held in memory as a dense matrix; bigger ones are streamed.
const DENSE_KERNEL_ENTRIES: usize = 1 << 24;

/// Normalized joint table of a static model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    pub log_z: f64,
    pub probabilities: Vec<f64>,
}

fn check_cap(states: u128, cap: u128) -> Result<usize> {
    if states > cap {
        return Err(Error::Size { states, cap });
    }
    usize::try_from(states).map_err(|_| Error::Size { states, cap })
}

/// Visits every joint state with its unnormalized log weight, in flat-index
/// order. Zero factor entries give `-inf`.
fn for_each_log_weight(fg: &FactorGraph, cap: u128, mut visit: impl FnMut(usize, &[usize], f64)) -> Result<()> {
    let total = check_cap(fg.joint_state_count(), cap)?;
    let cards = fg.cardinalities();
    let logs: Vec<Vec<f64>> = fg.factors.iter().map(|f| f.values.iter().map(|v| v.ln()).collect()).collect();
    let strides: Vec<Vec<usize>> = fg
        .factors
        .iter()
        .map(|f| {
            let mut s = vec![0; f.scope.len()];
            let mut acc = 1;
            for k in (0..f.scope.len()).rev() {
                s[k] = acc;
                acc *= cards[f.scope[k]];
            }
            s
        })
        .collect();
    let mut digits = vec![0usize; cards.len()];
    for idx in 0..total {
        let mut lw = 0.0;
        for (k, f) in fg.factors.iter().enumerate() {
            let local: usize = f.scope.iter().zip(&strides[k]).map(|(&v, &s)| digits[v] * s).sum();
            lw += logs[k][local];
        }
        visit(idx, &digits, lw);
        for pos in (0..digits.len()).rev() {
            digits[pos] += 1;
            if digits[pos] < cards[pos] {
                break;
            }
            digits[pos] = 0;
        }
    }
    Ok(())
}

/// Normalized joint distribution and `ln Z`.
pub fn exact_distribution_with_cap(fg: &FactorGraph, cap: u128) -> Result<ExactDistribution> {
    let mut lw = Vec::new();
    for_each_log_weight(fg, cap, |_, _, w| lw.push(w))?;
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidModel("every joint state has zero weight".into()));
    }
    let sum: f64 = lw.iter().map(|&w| (w - max).exp()).sum();
    let log_z = max + sum.ln();
    let probabilities = lw.iter().map(|&w| (w - log_z).exp()).collect();
    Ok(ExactDistribution { log_z, probabilities })
}

pub fn exact_distribution(fg: &FactorGraph) -> Result<ExactDistribution> {
    exact_distribution_with_cap(fg, STATIC_STATE_CAP)
}

/// `ln Z` with a streaming log-sum-exp, without materializing the joint.
pub fn exact_partition_with_cap(fg: &FactorGraph, cap: u128) -> Result<f64> {
    let mut max = f64::NEG_INFINITY;
    let mut acc = 0.0;
    for_each_log_weight(fg, cap, |_, _, w| {
        if w == f64::NEG_INFINITY {
            return;
        }
        if w > max {
            acc = acc * (max - w).exp() + 1.0;
            max = w;
        } else {
            acc += (w - max).exp();
        }
    })?;
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidModel("every joint state has zero weight".into()));
    }
    Ok(max + acc.ln())
}

pub fn exact_partition(fg: &FactorGraph) -> Result<f64> {
    exact_partition_with_cap(fg, STATIC_STATE_CAP)
}

/// Marginal of every variable.
pub fn exact_marginals(fg: &FactorGraph) -> Result<Vec<Vec<f64>>> {
    let dist = exact_distribution(fg)?;
    let cards = fg.cardinalities();
    Ok((0..cards.len()).map(|v| marginal_of(&dist.probabilities, &cards, &[v])).collect())
}

/// Marginal of one variable.
pub fn exact_marginal(fg: &FactorGraph, variable: usize) -> Result<Vec<f64>> {
    if variable >= fg.num_variables() {
        return Err(Error::Index(format!("variable {variable} is not declared")));
    }
    let dist = exact_distribution(fg)?;
    Ok(marginal_of(&dist.probabilities, &fg.cardinalities(), &[variable]))
}

/// Marginal of a joint table onto a set of variable positions.
pub fn marginal_of(joint: &[f64], cards: &[usize], keep: &[usize]) -> Vec<f64> {
    crate::temporal::marginalize(joint, cards, keep)
}

/// Most probable joint state and its unnormalized weight. Ties go to the
/// smallest flat joint index.
pub fn exact_map(fg: &FactorGraph) -> Result<(Vec<usize>, f64)> {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for_each_log_weight(fg, STATIC_STATE_CAP, |idx, _, w| {
        if best.0 == usize::MAX || w > best.1 {
            best = (idx, w);
        }
    })?;
    let state = index_to_state(&fg.cardinalities(), best.0)?;
    let score = crate::model::evaluate_joint_unnormalized(fg, &state)?;
    Ok((state, score))
}

/// Row-normalized transition operator of a temporal model over full joint
/// states.
pub struct TransitionKernel {
    states: usize,
    dense: Option<Vec<f64>>,
    rows: RowBuilder,
}

struct RowBuilder {
    factor_tables: Vec<Vec<f64>>,
    past_index: Vec<Vec<u32>>,
    future_index: Vec<Vec<u32>>,
    future_sizes: Vec<usize>,
}

impl RowBuilder {
    fn new(tm: &TemporalModel) -> Self {
        let cards = tm.cardinalities();
        let mut factor_tables = Vec::new();
        let mut past_index = Vec::new();
        let mut future_index = Vec::new();
        let mut future_sizes = Vec::new();
        for f in &tm.factors {
            past_index.push(projection_map(&cards, &f.past_scope).into_iter().map(|i| i as u32).collect());
            future_index.push(projection_map(&cards, &f.future_scope).into_iter().map(|i| i as u32).collect());
            future_sizes.push(f.future_scope.iter().map(|&v| cards[v]).product());
            factor_tables.push(f.values.clone());
        }
        RowBuilder { factor_tables, past_index, future_index, future_sizes }
    }

    /// Unnormalized `prod_a f_a(x'_a | x_a)` for one past state, and `Z(x)`.
    fn row(&self, past: usize, out: &mut [f64]) -> f64 {
        out.fill(1.0);
        for (k, table) in self.factor_tables.iter().enumerate() {
            let base = self.past_index[k][past] as usize * self.future_sizes[k];
            let sub = &table[base..base + self.future_sizes[k]];
            for (slot, &fi) in out.iter_mut().zip(&self.future_index[k]) {
                *slot *= sub[fi as usize];
            }
        }
        out.iter().sum()
    }
}

impl TransitionKernel {
    pub fn new(tm: &TemporalModel, cap: u128) -> Result<Self> {
        let states = check_cap(tm.joint_state_count(), cap)?;
        let rows = RowBuilder::new(tm);
        let dense = if states.saturating_mul(states) <= DENSE_KERNEL_ENTRIES {
            let mut m = vec![0.0; states * states];
            for past in 0..states {
                let row = &mut m[past * states..(past + 1) * states];
                let z = rows.row(past, row);
                normalize_row(row, z, past)?;
            }
            Some(m)
        } else {
            None
        };
        Ok(TransitionKernel { states, dense, rows })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// `ln Z(x)` for every past joint state.
    pub fn log_conditional_partitions(&self) -> Vec<f64> {
        let mut row = vec![0.0; self.states];
        (0..self.states).map(|past| self.rows.row(past, &mut row).ln()).collect()
    }

    /// One step `b'(x') = sum_x b(x) K(x, x') / Z(x)`.
    pub fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.states {
            return Err(Error::Usage(format!(
                "distribution has {} entries for {} joint states",
                b.len(),
                self.states
            )));
        }
        let mut next = vec![0.0; self.states];
        let mut scratch = vec![0.0; if self.dense.is_some() { 0 } else { self.states }];
        for (past, &w) in b.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let row: &[f64] = match &self.dense {
                Some(m) => &m[past * self.states..(past + 1) * self.states],
                None => {
                    let z = self.rows.row(past, &mut scratch);
                    normalize_row(&mut scratch, z, past)?;
                    &scratch
                }
            };
            for (n, &k) in next.iter_mut().zip(row) {
                *n += w * k;
            }
        }
        Ok(next)
    }
}

fn normalize_row(row: &mut [f64], z: f64, past: usize) -> Result<()> {
    if z <= 0.0 || !z.is_finite() {
        return Err(Error::InvalidModel(format!("conditional partition Z(x) is {z} for past state {past}")));
    }
    for v in row.iter_mut() {
        *v /= z;
    }
    Ok(())
}

/// Exact trajectory `[b0, b1, ..., b_steps]` of full joint distributions.
pub fn exact_temporal_evolve_with_cap(
    tm: &TemporalModel,
    b0: &[f64],
    steps: usize,
    cap: u128,
) -> Result<Vec<Vec<f64>>> {
    let kernel = TransitionKernel::new(tm, cap)?;
    let mut out = vec![b0.to_vec()];
    for _ in 0..steps {
        let next = kernel.apply(out.last().expect("trajectory is never empty"))?;
        out.push(next);
    }
    Ok(out)
}

pub fn exact_temporal_evolve(tm: &TemporalModel, b0: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    exact_temporal_evolve_with_cap(tm, b0, steps, TEMPORAL_STATE_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{evaluate_joint_unnormalized, state_count};
    use crate::temporal::fixtures::{flip_spin, identity};

    fn chain() -> FactorGraph {
        let mut fg = FactorGraph::with_uniform_cardinality(3, 2);
        fg.push_factor(vec![0, 1], vec![2.0, 1.0, 1.0, 2.0]);
        fg.push_factor(vec![1, 2], vec![2.0, 1.0, 1.0, 2.0]);
        fg
    }

    #[test]
    fn partition_examples() {
        let mut ones = FactorGraph::with_uniform_cardinality(3, 2);
        ones.push_factor(vec![0, 1], vec![1.0; 4]);
        ones.push_factor(vec![2], vec![1.0; 2]);
        assert!((exact_partition(&ones).unwrap() - 8f64.ln()).abs() < 1e-14);
        assert!((exact_partition(&chain()).unwrap() - 18f64.ln()).abs() < 1e-14);
        let mut single = FactorGraph::with_uniform_cardinality(2, 3);
        single.push_factor(vec![0, 1], (1..=9).map(f64::from).collect());
        assert!((exact_partition(&single).unwrap() - 45f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn partition_equals_sum_of_joint_terms() {
        let fg = chain();
        let cards = fg.cardinalities();
        let total: f64 = (0..state_count(&cards).unwrap())
            .map(|i| evaluate_joint_unnormalized(&fg, &index_to_state(&cards, i).unwrap()).unwrap())
            .sum();
        assert_eq!(total, 18.0);
    }

    #[test]
    fn chain_marginal_matches_elimination() {
        // p(x1) = (1/Z) sum_x2 f12(x1,x2) sum_x3 f23(x2,x3); every inner sum is 3.
        let p = exact_marginal(&chain(), 0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let mut field = FactorGraph::with_uniform_cardinality(1, 2);
        let h: f64 = 0.7;
        field.push_factor(vec![0], vec![h.exp(), (-h).exp()]);
        let p = exact_marginal(&field, 0).unwrap();
        assert!((p[0] - h.exp() / (h.exp() + (-h).exp())).abs() < 1e-15);
    }

    #[test]
    fn map_tie_break_and_argmax() {
        let mut single = FactorGraph::with_uniform_cardinality(1, 2);
        single.push_factor(vec![0], vec![3.0, 1.0]);
        assert_eq!(exact_map(&single).unwrap(), (vec![0], 3.0));
        let mut ones = FactorGraph::with_uniform_cardinality(3, 2);
        ones.push_factor(vec![0, 1, 2], vec![1.0; 8]);
        assert_eq!(exact_map(&ones).unwrap().0, vec![0, 0, 0]);
        let mut peaked = FactorGraph::with_uniform_cardinality(2, 2);
        peaked.push_factor(vec![0, 1], vec![1.0, 1.0, 5.0, 1.0]);
        assert_eq!(exact_map(&peaked).unwrap().0, vec![1, 0]);
    }

    #[test]
    fn size_cap_is_enforced() {
        let fg = FactorGraph::with_uniform_cardinality(25, 2);
        assert!(matches!(exact_partition(&fg), Err(Error::Size { .. })));
    }

    #[test]
    fn temporal_examples() {
        let traj = exact_temporal_evolve(&flip_spin(0.1), &[1.0, 0.0], 1).unwrap();
        assert!((traj[1][0] - 0.9).abs() < 1e-15 && (traj[1][1] - 0.1).abs() < 1e-15);

        let traj = exact_temporal_evolve(&flip_spin(0.5), &[0.8, 0.2], 2).unwrap();
        assert_eq!(traj[1], vec![0.5, 0.5]);
        assert_eq!(traj[2], traj[1]);

        let b0 = vec![0.1, 0.2, 0.3, 0.4];
        let traj = exact_temporal_evolve(&identity(2, 2), &b0, 3).unwrap();
        for b in &traj {
            for (x, y) in b.iter().zip(&b0) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn streamed_and_dense_kernels_agree() {
        let tm = identity(3, 2);
        let kernel = TransitionKernel::new(&tm, TEMPORAL_STATE_CAP).unwrap();
        let streamed = TransitionKernel { dense: None, ..TransitionKernel::new(&tm, TEMPORAL_STATE_CAP).unwrap() };
        let b: Vec<f64> = (1..=8).map(|k| k as f64 / 36.0).collect();
        assert_eq!(kernel.apply(&b).unwrap(), streamed.apply(&b).unwrap());
    }
}
