//! Relative error of DynBP node beliefs against the exact evolution on random
//! 3x4 kinetic Ising tori, for three field/coupling settings, with the
//! residuals of the enforced constraints.

use dynbp::dynbp::DynOptions;
use dynbp::ising::{run_error_histogram, KineticParams, RunConfig, ERROR_STUDY_CONFIGS};

fn main() -> dynbp::Result<()> {
    let seeds: Vec<u64> = (0..20).collect();
    let run = RunConfig { kinetic: KineticParams::new(0.1)?, p_up: 0.9, steps: 10 };
    let study = run_error_histogram(3, 4, &ERROR_STUDY_CONFIGS, &seeds, 0, run, &DynOptions::default(), 1)?;
    for (k, cfg) in ERROR_STUDY_CONFIGS.iter().enumerate() {
        let hist = study.histogram(k, 10);
        let settled = study
            .samples
            .iter()
            .filter(|s| s.config == k && s.prior_residual < 1e-6 && s.consistency_residual < 1e-6)
            .count();
        println!(
            "h = {}, j = {}: {:.0}% within 10%, residuals below 1e-6 in {settled}/{} steps, histogram {:?}",
            cfg.h,
            cfg.j,
            100.0 * study.fraction_within(k, 0.1),
            seeds.len() * run.steps,
            hist.counts
        );
    }
    Ok(())
}
