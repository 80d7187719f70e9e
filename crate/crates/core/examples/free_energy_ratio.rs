//! Path free energy from DynBP against GBP on the space-time graph, over 200
//! random 3x3 tori with a nearly pinned start.

use dynbp::dynbp::DynOptions;
use dynbp::ising::{free_energy_ratio, KineticParams, RatioConfig, RunConfig};

fn main() -> dynbp::Result<()> {
    let cfg = RatioConfig {
        rows: 3,
        cols: 3,
        field_variance: 0.1,
        coupling_variance: 0.1,
        run: RunConfig { kinetic: KineticParams::new(0.1)?, p_up: 0.999, steps: 1 },
    };
    let trials = free_energy_ratio(&cfg, 200, 0, &DynOptions::default(), 1)?;
    let ok: Vec<f64> = trials.iter().filter(|t| t.converged()).map(|t| t.ratio).collect();
    let in_band = ok.iter().filter(|r| (0.9..=1.1).contains(*r)).count();
    let mut sorted = ok.clone();
    sorted.sort_by(f64::total_cmp);
    println!("both converged in {}/{} trials", ok.len(), trials.len());
    println!("ratio in [0.9, 1.1]: {in_band}/{}", ok.len());
    if !sorted.is_empty() {
        let q = |f: f64| sorted[((sorted.len() - 1) as f64 * f) as usize];
        println!("quartiles {:.4} {:.4} {:.4}", q(0.25), q(0.5), q(0.75));
    }
    Ok(())
}
