//! Region graphs: counting numbers, relation sets of a parent-to-child edge
//! and the messages a region belief is assembled from.

use dynbp::ising::{build_static_ising_fg, IsingParams, Topology};
use dynbp::model::FactorGraph;
use dynbp::region::{build_bethe_regions, validate_counting, Region, RegionGraph};

const NAMES: [&str; 10] = ["A", "B", "C", "F", "R", "D", "E", "G", "H", "-"];

fn name(id: usize) -> &'static str {
    NAMES[id.min(9)]
}

fn pairs(list: &[(usize, usize)]) -> String {
    let parts: Vec<String> = list.iter().map(|&(i, j)| format!("({},{})", name(i), name(j))).collect();
    format!("{{{}}}", parts.join(", "))
}

/// Three-level graph: R under A and B, with D and E under R, E also under C,
/// G under D and E, and H under E, C and F. Each top region owns one factor
/// over all its variables.
fn three_level() -> dynbp::Result<(RegionGraph, FactorGraph)> {
    let vars: [&[usize]; 9] =
        [&[0, 2, 3, 4], &[1, 2, 3, 4], &[3, 4, 5], &[4, 6], &[2, 3, 4], &[2, 3], &[3, 4], &[3], &[4]];
    let regions = vars
        .iter()
        .enumerate()
        .map(|(id, v)| Region { id, variables: v.to_vec(), factors: if id < 4 { vec![id] } else { vec![] } })
        .collect();
    let (a, b, c, f, r, d, e, g, h) = (0, 1, 2, 3, 4, 5, 6, 7, 8);
    let edges = vec![(a, r), (b, r), (r, d), (r, e), (c, e), (d, g), (e, g), (e, h), (c, h), (f, h)];
    let mut fg = FactorGraph::with_uniform_cardinality(7, 2);
    for top in &vars[..4] {
        fg.push_factor(top.to_vec(), vec![1.0; 1 << top.len()]);
    }
    Ok((RegionGraph::new(regions, edges)?, fg))
}

fn main() -> dynbp::Result<()> {
    let (rg, fg) = three_level()?;
    let counting: Vec<String> = (0..rg.len()).map(|r| format!("{}={}", name(r), rg.counting_number(r))).collect();
    println!("counting numbers: {}", counting.join(" "));
    let sets = rg.relation_sets(4, 6)?;
    println!("N(R,E) = {}", pairs(&sets.n_set));
    println!("D(R,E) = {}", pairs(&sets.d_set));
    println!("b_R uses messages {}", pairs(&rg.belief_messages(4)));
    println!("counting valid: {}", validate_counting(&rg, &fg).is_valid());

    let fg = build_static_ising_fg(&IsingParams::homogeneous(3, 3, Topology::Torus, 0.2, 0.1)?)?;
    let bethe = build_bethe_regions(&fg);
    let report = validate_counting(&bethe, &fg);
    let small: Vec<i64> = (0..bethe.len()).filter(|&r| bethe.region(r).variables.len() == 1).map(|r| bethe.counting_number(r)).collect();
    println!(
        "3x3 torus Bethe graph: {} regions, valid = {}, site counting numbers {:?}",
        bethe.len(),
        report.is_valid(),
        small.iter().collect::<std::collections::BTreeSet<_>>()
    );
    Ok(())
}
