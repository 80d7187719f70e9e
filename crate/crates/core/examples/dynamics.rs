//! Inference over time on the chain in `examples/data/chain.json`: DynBP,
//! space-time GBP and the exact evolution, plus the one-region case where
//! DynBP is exact.

use std::path::Path;

use dynbp::dynbp::{dynbp_evolve, dynbp_step, extended_gbp_evolve, DynOptions};
use dynbp::exact::{exact_temporal_evolve, marginal_of};
use dynbp::gbp::SolverOptions;
use dynbp::io::ModelFile;
use dynbp::temporal::{priors_from_joint, priors_from_product, product_joint, TemporalModel};

fn main() -> dynbp::Result<()> {
    let file = ModelFile::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/chain.json"))?;
    let tm = file.temporal_model()?;
    let start = vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]];
    let opts = DynOptions { solver: SolverOptions { tolerance: 1e-10, ..SolverOptions::default() }, ..DynOptions::default() };
    let steps = 6;

    let dyn_run = dynbp_evolve(&tm, &priors_from_product(&tm, &start), steps, &opts)?;
    let ext_run = extended_gbp_evolve(&tm, &priors_from_product(&tm, &start), steps, &opts)?;
    let exact = exact_temporal_evolve(&tm, &product_joint(&start), steps)?;
    let cards = tm.cardinalities();

    println!("P(x0 = 0) over time");
    println!("t  dynbp     ext-gbp   exact     sweeps");
    for t in 0..=steps {
        let sweeps = if t == 0 { String::new() } else { dyn_run.steps[t - 1].sweeps.to_string() };
        println!(
            "{t}  {:.6}  {:.6}  {:.6}  {sweeps}",
            dyn_run.node_marginals[t][0][0],
            ext_run.node_marginals[t][0][0],
            marginal_of(&exact[t], &cards, &[0])[0],
        );
    }
    let f_dyn: f64 = dyn_run.steps.iter().map(|s| s.ppf).sum();
    let f_ext: f64 = ext_run.steps.iter().map(|s| s.ppf).sum();
    println!("path free energy: dynbp {f_dyn:.6}, ext-gbp {f_ext:.6}");

    // One region holding every variable: DynBP reproduces the exact update.
    let whole = TemporalModel::with_single_region(tm.variables.clone(), tm.factors.clone())?;
    let joint = product_joint(&start);
    let step = dynbp_step(&whole, &priors_from_joint(&whole, &joint), &opts)?;
    let truth = exact_temporal_evolve(&whole, &joint, 1)?;
    let gap = step.next_priors[0].iter().zip(&truth[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("single region: max |dynbp - exact| = {gap:.2e}");
    Ok(())
}
