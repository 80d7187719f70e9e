//! CSV renderings of solver and experiment results. Each function fixes its
//! column order, so identical inputs give identical bytes.

use crate::dynbp::{SweepRecord, Trajectory};
use crate::gbp::{IterationRecord, SolveResult};
use crate::io::{csv_float, csv_opt, Csv};
use crate::ising::{BeliefTrace, ErrorStudy, Histogram, RatioTrial};
use crate::motion::MotionScore;

/// `variable,state,probability` for per-variable tables.
pub fn marginals_csv(marginals: &[Vec<f64>]) -> Csv {
    let mut csv = Csv::new(&["variable", "state", "probability"]);
    for (v, table) in marginals.iter().enumerate() {
        for (s, &p) in table.iter().enumerate() {
            csv.row([v.to_string(), s.to_string(), csv_float(p)]);
        }
    }
    csv
}

pub fn iterations_csv(history: &[IterationRecord]) -> Csv {
    let mut csv = Csv::new(&["iteration", "max_delta", "free_energy"]);
    for r in history {
        csv.row([r.iteration.to_string(), csv_float(r.max_delta), csv_float(r.free_energy)]);
    }
    csv
}

/// Per-variable beliefs of a static solve; region solvers list their
/// variables first when `variables` is given.
pub fn solve_marginals(res: &SolveResult, variables: usize) -> Vec<Vec<f64>> {
    res.beliefs.tables.iter().take(variables).cloned().collect()
}

/// `t,variable,state,probability` over a trajectory.
pub fn trajectory_csv(traj: &Trajectory) -> Csv {
    let mut csv = Csv::new(&["t", "variable", "state", "probability"]);
    for (t, nodes) in traj.node_marginals.iter().enumerate() {
        for (v, table) in nodes.iter().enumerate() {
            for (s, &p) in table.iter().enumerate() {
                csv.row([t.to_string(), v.to_string(), s.to_string(), csv_float(p)]);
            }
        }
    }
    csv
}

/// Sweep histories; `run` labels which run each row came from.
pub fn sweeps_csv<'a>(runs: impl IntoIterator<Item = (String, &'a [SweepRecord])>) -> Csv {
    let mut csv =
        Csv::new(&["run", "t", "sweep", "max_delta", "prior_residual", "consistency_residual", "ppf"]);
    for (run, records) in runs {
        for r in records {
            csv.row([
                run.clone(),
                r.t.to_string(),
                r.sweep.to_string(),
                csv_float(r.max_delta),
                csv_float(r.prior_residual),
                csv_float(r.consistency_residual),
                csv_float(r.ppf),
            ]);
        }
    }
    csv
}

/// `t,dynbp,loopy_bp,exact` for one node's `P(s = +1)`.
pub fn trace_csv(trace: &BeliefTrace) -> Csv {
    let mut csv = Csv::new(&["t", "dynbp", "loopy_bp", "exact"]);
    for r in &trace.rows {
        csv.row([r.t.to_string(), csv_float(r.dynbp), csv_float(r.loopy_bp), csv_opt(r.exact)]);
    }
    csv
}

pub fn error_samples_csv(study: &ErrorStudy) -> Csv {
    let mut csv = Csv::new(&[
        "h",
        "j",
        "seed",
        "t",
        "dynbp",
        "exact",
        "rel_err",
        "converged",
        "prior_residual",
        "consistency_residual",
    ]);
    for s in &study.samples {
        let cfg = study.configs[s.config];
        csv.row([
            csv_float(cfg.h),
            csv_float(cfg.j),
            s.seed.to_string(),
            s.t.to_string(),
            csv_float(s.dynbp),
            csv_float(s.exact),
            csv_float(s.rel_err),
            s.converged.to_string(),
            csv_float(s.prior_residual),
            csv_float(s.consistency_residual),
        ]);
    }
    csv
}

/// Residual curves of every (config, seed) run.
pub fn residual_curves_csv(study: &ErrorStudy) -> Csv {
    sweeps_csv(study.curves.iter().map(|c| {
        let cfg = study.configs[c.config];
        (format!("h={} j={} seed={}", cfg.h, cfg.j, c.seed), c.sweeps.as_slice())
    }))
}

/// `bin_low,bin_high,count`; the overflow bin has an empty upper edge.
pub fn histogram_csv(hist: &Histogram) -> Csv {
    let bins = hist.counts.len() - 1;
    let mut csv = Csv::new(&["bin_low", "bin_high", "count"]);
    for (b, &count) in hist.counts.iter().enumerate() {
        let (lo, hi) = if b < bins {
            (b as f64 / bins as f64, Some((b + 1) as f64 / bins as f64))
        } else {
            (1.0, None)
        };
        csv.row([csv_float(lo), csv_opt(hi), count.to_string()]);
    }
    csv
}

pub fn ratio_csv(trials: &[RatioTrial]) -> Csv {
    let mut csv = Csv::new(&["trial", "seed", "f_dynbp", "f_ext", "ratio", "dynbp_converged", "ext_converged"]);
    for t in trials {
        csv.row([
            t.trial.to_string(),
            t.seed.to_string(),
            csv_float(t.f_dynbp),
            csv_float(t.f_ext),
            csv_float(t.ratio),
            t.dynbp_converged.to_string(),
            t.ext_converged.to_string(),
        ]);
    }
    csv
}

/// Per-frame IoU of both detectors for every seed.
pub fn motion_frames_csv(scores: &[MotionScore]) -> Csv {
    let mut csv = Csv::new(&["seed", "frame", "dynbp_iou", "difference_iou"]);
    for s in scores {
        for (k, (a, b)) in s.dynbp_frames.iter().zip(&s.difference_frames).enumerate() {
            csv.row([s.seed.to_string(), k.to_string(), csv_float(*a), csv_float(*b)]);
        }
    }
    csv
}

pub fn motion_summary_csv(scores: &[MotionScore]) -> Csv {
    let mut csv = Csv::new(&["seed", "dynbp_iou", "difference_iou", "dilated_iou", "converged"]);
    for s in scores {
        csv.row([
            s.seed.to_string(),
            csv_float(s.dynbp_iou),
            csv_float(s.difference_iou),
            csv_float(s.dilated_iou),
            s.converged.to_string(),
        ]);
    }
    csv
}

/// `config,offset` rows of the Kikuchi comparison.
pub fn offsets_csv(offsets: &[f64]) -> Csv {
    let mut csv = Csv::new(&["config", "offset"]);
    for (k, &o) in offsets.iter().enumerate() {
        csv.row([k.to_string(), csv_float(o)]);
    }
    csv
}
