use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use dynbp::dynbp::{dynbp_step, DynOptions};
use dynbp::exact::{exact_partition, exact_temporal_evolve, TransitionKernel, TEMPORAL_STATE_CAP};
use dynbp::gbp::{gbp_parent_to_child, sum_product_bp, variable_beliefs, SolverOptions};
use dynbp::io::{canonical_float, csv_float, ModelFile};
use dynbp::ising::{build_kinetic_conditional, IsingParams, KineticParams, Topology};
use dynbp::kikuchi::{aggregate_kikuchi_variables, homogeneous_path_store, random_homogeneous_config};
use dynbp::model::{evaluate_joint_unnormalized, index_to_state, state_count, state_to_index, FactorGraph, FactorTable, VariableDecl};
use dynbp::motion::{build_motion_conditional, map_state, MotionParams};
use dynbp::region::{build_bethe_regions, validate_counting, Region, RegionGraph};
use dynbp::temporal::{marginalize, priors_from_joint, variable_marginals, TemporalFactor, TemporalModel};

/// A factor graph on `n` variables of the given cardinalities with random
/// scopes of size 1 to 3 and positive tables.
fn factor_graph(max_vars: usize, max_card: usize) -> impl Strategy<Value = FactorGraph> {
    vec(2..=max_card, 1..=max_vars).prop_flat_map(|cards| {
        let n = cards.len();
        let scope = proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n.min(3));
        vec((scope, vec(0.1f64..4.0, 27)), 1..=6).prop_map(move |raw| {
            let variables = cards.iter().enumerate().map(|(id, &c)| VariableDecl { id, cardinality: c }).collect();
            let factors = raw
                .into_iter()
                .enumerate()
                .map(|(id, (scope, pool))| {
                    let len: usize = scope.iter().map(|&v| cards[v]).product();
                    FactorTable { id, scope, values: pool.iter().cycle().take(len).copied().collect() }
                })
                .collect();
            FactorGraph::new(variables, factors).unwrap()
        })
    })
}

/// A chain with one pair factor per link and one unary factor per variable.
fn chain() -> impl Strategy<Value = FactorGraph> {
    (2usize..=6, vec(0.1f64..4.0, 64)).prop_map(|(n, pool)| {
        let mut fg = FactorGraph::with_uniform_cardinality(n, 2);
        let mut it = pool.iter().cycle();
        for v in 0..n - 1 {
            fg.push_factor(vec![v, v + 1], (0..4).map(|_| *it.next().unwrap()).collect());
        }
        for v in 0..n {
            fg.push_factor(vec![v], (0..2).map(|_| *it.next().unwrap()).collect());
        }
        fg
    })
}

/// Site and pair transition factors on up to three variables.
fn temporal_model(single: bool) -> impl Strategy<Value = TemporalModel> {
    (vec(2usize..=3, 1..=3), vec(0.1f64..3.0, 64)).prop_map(move |(cards, pool)| {
        let n = cards.len();
        let variables: Vec<VariableDecl> = (0..n).map(|id| VariableDecl { id, cardinality: cards[id] }).collect();
        let mut it = pool.iter().cycle();
        let mut factors = Vec::new();
        for v in 0..n {
            let values = (0..cards[v] * cards[v]).map(|_| *it.next().unwrap()).collect();
            factors.push(TemporalFactor { id: v, past_scope: vec![v], future_scope: vec![v], values });
        }
        for v in 1..n {
            let len = (cards[v - 1] * cards[v]).pow(2);
            let values = (0..len).map(|_| *it.next().unwrap()).collect();
            factors.push(TemporalFactor { id: n + v - 1, past_scope: vec![v - 1, v], future_scope: vec![v - 1, v], values });
        }
        if single {
            TemporalModel::with_single_region(variables, factors).unwrap()
        } else {
            TemporalModel::with_bethe_regions(variables, factors).unwrap()
        }
    })
}

fn normalized(raw: &[f64], len: usize) -> Vec<f64> {
    let v: Vec<f64> = raw.iter().cycle().take(len).copied().collect();
    let total: f64 = v.iter().sum();
    v.into_iter().map(|x| x / total).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> Result<(), TestCaseError> {
    for (x, y) in a.iter().zip(b) {
        prop_assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn index_round_trip(cards in vec(1usize..=10, 1..=4)) {
        let total = state_count(&cards).unwrap();
        prop_assume!(total <= 10_000);
        for index in 0..total {
            let state = index_to_state(&cards, index).unwrap();
            prop_assert_eq!(state_to_index(&cards, &state).unwrap(), index);
        }
    }

    #[test]
    fn enumerated_weights_sum_to_partition(fg in factor_graph(5, 3)) {
        let cards = fg.cardinalities();
        let total: f64 = (0..state_count(&cards).unwrap())
            .map(|k| evaluate_joint_unnormalized(&fg, &index_to_state(&cards, k).unwrap()).unwrap())
            .sum();
        let log_z = exact_partition(&fg).unwrap();
        prop_assert!((total.ln() - log_z).abs() < 1e-12);
    }

    #[test]
    fn partition_ignores_factor_order_and_merges(fg in factor_graph(5, 3), shift in 0usize..6) {
        let log_z = exact_partition(&fg).unwrap();
        let mut rotated = fg.clone();
        rotated.factors.rotate_left(shift % fg.factors.len());
        prop_assert!((exact_partition(&rotated).unwrap() - log_z).abs() < 1e-12);

        // Split the first factor into two with the same scope.
        let mut split = fg.clone();
        let first = split.factors[0].clone();
        split.factors[0].values = first.values.iter().map(|v| v.sqrt()).collect();
        let id = split.factors.iter().map(|f| f.id).max().unwrap() + 1;
        split.factors.push(FactorTable { id, scope: first.scope, values: first.values.iter().map(|v| v.sqrt()).collect() });
        prop_assert!((exact_partition(&split).unwrap() - log_z).abs() < 1e-12);
    }

    #[test]
    fn bethe_regions_count_once(fg in factor_graph(8, 2)) {
        let rg = build_bethe_regions(&fg);
        prop_assert!(validate_counting(&rg, &fg).is_valid());
        for f in &fg.factors {
            let large = rg.regions().iter().filter(|r| rg.parents(r.id).is_empty() && r.factors.contains(&f.id)).count();
            prop_assert_eq!(large, 1);
        }
    }

    #[test]
    fn counting_numbers_follow_regions_not_ids(fg in factor_graph(6, 2), seed in any::<u64>()) {
        let rg = build_bethe_regions(&fg);
        let n = rg.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for k in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(k, (s >> 33) as usize % (k + 1));
        }
        let regions: Vec<Region> = rg.regions().iter().map(|r| Region { id: perm[r.id], ..r.clone() }).collect();
        let edges = rg.edges().iter().map(|&(p, c)| (perm[p], perm[c])).collect();
        let mut shuffled = RegionGraph::new(regions, edges).unwrap();
        for r in 0..n {
            prop_assert_eq!(rg.counting_number(r), shuffled.counting_number(perm[r]));
        }
        let before = shuffled.counting_numbers().to_vec();
        shuffled.compute_counting_numbers().unwrap();
        prop_assert_eq!(before, shuffled.counting_numbers().to_vec());
    }

    #[test]
    fn chain_bp_and_gbp_are_exact(fg in chain()) {
        let opts = SolverOptions { tolerance: 1e-12, max_iters: 2000, ..SolverOptions::default() };
        let exact = dynbp::exact::exact_marginals(&fg).unwrap();
        let bp = sum_product_bp(&fg, &opts).unwrap();
        let rg = build_bethe_regions(&fg);
        let gbp = gbp_parent_to_child(&fg, &rg, &opts).unwrap();
        prop_assert!(bp.converged && gbp.converged);
        let gbp_marg = variable_beliefs(&fg, &rg, &gbp.beliefs);
        for (v, p) in exact.iter().enumerate() {
            close(bp.beliefs.get(v), p, 1e-8)?;
            close(&gbp_marg[v], p, 1e-8)?;
        }
    }

    #[test]
    fn gbp_fixed_points_are_consistent_and_damping_free(fg in factor_graph(5, 2)) {
        let rg = build_bethe_regions(&fg);
        let tol = 1e-9;
        let a = gbp_parent_to_child(&fg, &rg, &SolverOptions { tolerance: tol, max_iters: 3000, damping: 0.5, ..SolverOptions::default() }).unwrap();
        let b = gbp_parent_to_child(&fg, &rg, &SolverOptions { tolerance: tol, max_iters: 3000, damping: 0.2, ..SolverOptions::default() }).unwrap();
        prop_assume!(a.converged && b.converged);
        for &(p, c) in rg.edges() {
            let parent = rg.region(p);
            let keep: Vec<usize> = rg.region(c).variables.iter().map(|v| parent.variables.binary_search(v).unwrap()).collect();
            let cards = fg.scope_cardinalities(&parent.variables);
            close(&marginalize(a.beliefs.get(p), &cards, &keep), a.beliefs.get(c), 1e-6)?;
        }
        // Loopy graphs can hold several fixed points; compare only when both
        // runs land in the same one.
        prop_assume!(a.beliefs.max_abs_diff(&b.beliefs) < 1e-3);
        prop_assert!(a.beliefs.max_abs_diff(&b.beliefs) < 10.0 * tol.max(1e-8));
    }

    #[test]
    fn exact_evolution_conserves_probability(tm in temporal_model(false), raw in vec(0.01f64..1.0, 27)) {
        let joint = normalized(&raw, tm.joint_state_count() as usize);
        for b in exact_temporal_evolve(&tm, &joint, 4).unwrap() {
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_region_step_is_the_kl_minimizer(tm in temporal_model(true), raw in vec(0.01f64..1.0, 27)) {
        let joint = normalized(&raw, tm.joint_state_count() as usize);
        let opts = DynOptions { solver: SolverOptions { tolerance: 1e-13, ..SolverOptions::default() }, ..DynOptions::default() };
        let res = dynbp_step(&tm, &priors_from_joint(&tm, &joint), &opts).unwrap();
        let kernel = TransitionKernel::new(&tm, TEMPORAL_STATE_CAP).unwrap();
        let s = joint.len();
        for past in 0..s {
            let mut point = vec![0.0; s];
            point[past] = 1.0;
            let row = kernel.apply(&point).unwrap();
            let expected: Vec<f64> = row.iter().map(|p| joint[past] * p).collect();
            close(&res.path.path[0][past * s..(past + 1) * s], &expected, 1e-12)?;
        }
    }

    #[test]
    fn dynbp_steps_stay_normalized_and_consistent(tm in temporal_model(false), raw in vec(0.01f64..1.0, 27)) {
        let joint = normalized(&raw, tm.joint_state_count() as usize);
        let opts = DynOptions { solver: SolverOptions { max_iters: 2000, ..SolverOptions::default() }, ..DynOptions::default() };
        let res = dynbp_step(&tm, &priors_from_joint(&tm, &joint), &opts).unwrap();
        for table in &res.next_priors {
            prop_assert!((table.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        if res.converged {
            prop_assert!(res.prior_residual < opts.solver.tolerance);
            prop_assert!(res.consistency_residual < opts.solver.tolerance);
        }
    }

    #[test]
    fn kinetic_rows_are_normalized(coupling in -1.0f64..1.0, field in -1.0f64..1.0, theta in 0.05f64..0.95) {
        let p = IsingParams::homogeneous(2, 2, Topology::Open, coupling, field).unwrap();
        let tm = build_kinetic_conditional(&p, KineticParams::new(theta).unwrap()).unwrap();
        let kernel = TransitionKernel::new(&tm, TEMPORAL_STATE_CAP).unwrap();
        for past in 0..kernel.states() {
            let mut point = vec![0.0; kernel.states()];
            point[past] = 1.0;
            prop_assert!((kernel.apply(&point).unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregated_kikuchi_relations_hold(p_up in 0.05f64..0.95, seed in any::<u64>()) {
        use rand::SeedableRng;
        let p = IsingParams::homogeneous(3, 3, Topology::Torus, 0.2, 0.1).unwrap();
        let tm = build_kinetic_conditional(&p, KineticParams::new(0.3).unwrap()).unwrap();
        let mut rng = rand_pcg::Pcg64::seed_from_u64(seed);
        let v = random_homogeneous_config(p_up, &mut rng);
        let store = homogeneous_path_store(&tm, &v).unwrap();
        let agg = aggregate_kikuchi_variables(&store, &tm.regions).unwrap();
        prop_assert!(agg.variables.relation_residual() < 1e-12);
    }

    #[test]
    fn motion_evidence_is_monotone(
        raw in vec(0.01f64..1.0, 16),
        d in vec(any::<bool>(), 9),
        pixel in 0usize..9,
    ) {
        let params = MotionParams { states: 3, ..MotionParams::default() };
        let opts = dynbp::motion::motion_options();
        let marginals: Vec<Vec<f64>> = (0..9).map(|v| normalized(&raw[v..], 3)).collect();
        let run = |d: &[bool]| {
            let tm = build_motion_conditional(3, 3, d, &params).unwrap();
            let priors = dynbp::temporal::priors_from_product(&tm, &marginals);
            let res = dynbp_step(&tm, &priors, &opts).unwrap();
            variable_marginals(&tm, &res.next_priors)
        };
        let mut off = d.clone();
        off[pixel] = false;
        let mut on = d;
        on[pixel] = true;
        let (before, after) = (run(&off), run(&on));
        for b in before.iter().chain(&after) {
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!(after[pixel][2] + 1e-9 >= before[pixel][2]);
    }

    #[test]
    fn map_state_breaks_ties_low(raw in vec(0.0f64..1.0, 2..6), tie in 0usize..5) {
        let mut b = raw.clone();
        let top = b.iter().copied().fold(0.0, f64::max);
        let k = tie % b.len();
        b[k] = top;
        let first = b.iter().position(|&x| x == top).unwrap();
        prop_assert_eq!(map_state(&b), first);
    }

    #[test]
    fn float_formats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(canonical_float(x).parse::<f64>().unwrap(), x);
        prop_assert_eq!(csv_float(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn model_files_round_trip(fg in factor_graph(5, 3)) {
        let file = ModelFile::from_factor_graph(&fg);
        let text = file.to_canonical_json();
        let back = ModelFile::parse(&text).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(back.to_canonical_json(), text);
    }
}
