//! Static inference on a loopy 3x3 Ising grid: exact enumeration, loopy BP,
//! GBP on Bethe regions, GBP on plaquette regions and naive mean field.
//!
//! Also loads `examples/data/chain.json`, a tree where every method is exact.

use std::collections::BTreeSet;
use std::path::Path;

use dynbp::exact::{exact_distribution, exact_marginals};
use dynbp::gbp::{gbp_parent_to_child, mean_field_solve, region_free_energy, sum_product_bp, variable_beliefs, SolverOptions};
use dynbp::io::ModelFile;
use dynbp::ising::{build_random_ising_with, build_static_ising_fg, Topology};
use dynbp::model::FactorGraph;
use dynbp::region::{build_bethe_regions, validate_counting, Region, RegionGraph};

/// Closes the given clusters under intersection and links each region to
/// its smallest strict supersets. Every region owns the factors it covers.
fn cluster_variation(fg: &FactorGraph, clusters: &[Vec<usize>]) -> dynbp::Result<RegionGraph> {
    let mut sets: BTreeSet<Vec<usize>> = clusters.iter().cloned().collect();
    loop {
        let list: Vec<&Vec<usize>> = sets.iter().collect();
        let mut fresh = BTreeSet::new();
        for (k, a) in list.iter().enumerate() {
            for b in &list[k + 1..] {
                let common: Vec<usize> = a.iter().filter(|v| b.contains(v)).copied().collect();
                if !common.is_empty() && !sets.contains(&common) {
                    fresh.insert(common);
                }
            }
        }
        if fresh.is_empty() {
            break;
        }
        sets.extend(fresh);
    }
    let mut sets: Vec<Vec<usize>> = sets.into_iter().collect();
    sets.sort_by_key(|s| std::cmp::Reverse(s.len()));
    let regions: Vec<Region> = sets
        .iter()
        .enumerate()
        .map(|(id, vars)| Region {
            id,
            variables: vars.clone(),
            factors: fg.factors.iter().filter(|f| f.scope.iter().all(|v| vars.contains(v))).map(|f| f.id).collect(),
        })
        .collect();
    let strict = |a: &Vec<usize>, b: &Vec<usize>| a.len() < b.len() && a.iter().all(|v| b.contains(v));
    let mut edges = Vec::new();
    for (c, child) in sets.iter().enumerate() {
        for (p, parent) in sets.iter().enumerate() {
            let direct = strict(child, parent) && !sets.iter().any(|m| strict(child, m) && strict(m, parent));
            if direct {
                edges.push((p, c));
            }
        }
    }
    RegionGraph::new(regions, edges)
}

fn main() -> dynbp::Result<()> {
    let chain = ModelFile::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/chain.json"))?;
    let fg = chain.factor_graph()?;
    let bp = sum_product_bp(&fg, &SolverOptions::default())?;
    let bethe = bp.history.last().map(|r| r.free_energy).unwrap_or(f64::NAN);
    println!("chain: log Z = {:.6}, Bethe -F = {:.6}", exact_distribution(&fg)?.log_z, -bethe);

    let p = build_random_ising_with(3, 3, Topology::Open, 0.5, 0.5, 3)?;
    let fg = build_static_ising_fg(&p)?;
    let opts = SolverOptions { tolerance: 1e-10, max_iters: 2000, ..SolverOptions::default() };
    let exact = exact_marginals(&fg)?;
    let log_z = exact_distribution(&fg)?.log_z;

    let bp = sum_product_bp(&fg, &opts)?;
    let bp_marg: Vec<Vec<f64>> = (0..fg.num_variables()).map(|v| bp.beliefs.get(v).to_vec()).collect();

    let bethe_rg = build_bethe_regions(&fg);
    let bethe = gbp_parent_to_child(&fg, &bethe_rg, &opts)?;
    let bethe_f = region_free_energy(&fg, &bethe_rg, &bethe.beliefs, opts.clamp_floor)?;

    let plaquettes: Vec<Vec<usize>> = [0, 1, 3, 4].iter().map(|&s| vec![s, s + 1, s + 3, s + 4]).collect();
    let kikuchi_rg = cluster_variation(&fg, &plaquettes)?;
    assert!(validate_counting(&kikuchi_rg, &fg).is_valid());
    let kikuchi = gbp_parent_to_child(&fg, &kikuchi_rg, &opts)?;
    let kikuchi_f = region_free_energy(&fg, &kikuchi_rg, &kikuchi.beliefs, opts.clamp_floor)?;

    let couplings: Vec<(usize, usize, f64)> = p.edges.iter().zip(&p.couplings).map(|(&(i, j), &k)| (i, j, k)).collect();
    let mf = mean_field_solve(&couplings, &p.fields, &opts)?;

    let worst = |m: &[Vec<f64>]| m.iter().zip(&exact).map(|(a, b)| (a[0] - b[0]).abs()).fold(0.0, f64::max);
    let mf_marg: Vec<Vec<f64>> = mf.magnetizations.iter().map(|m| vec![(1.0 + m) / 2.0, (1.0 - m) / 2.0]).collect();

    println!("3x3 grid, log Z = {log_z:.6}");
    println!("method        max |b - p|   -F");
    println!("loopy BP      {:.2e}      {:.6}", worst(&bp_marg), -bp.history.last().map(|r| r.free_energy).unwrap_or(f64::NAN));
    println!("GBP Bethe     {:.2e}      {:.6}", worst(&variable_beliefs(&fg, &bethe_rg, &bethe.beliefs)), -bethe_f);
    println!("GBP plaquette {:.2e}      {:.6}", worst(&variable_beliefs(&fg, &kikuchi_rg, &kikuchi.beliefs)), -kikuchi_f);
    println!("mean field    {:.2e}", worst(&mf_marg));
    Ok(())
}
