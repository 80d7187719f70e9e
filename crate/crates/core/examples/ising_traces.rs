//! Belief of one spin over time on kinetic Ising models at three flip rates:
//! a lone spin, and node (0,0) of a random 3x4 torus against loopy BP and the
//! exact evolution.

use dynbp::dynbp::DynOptions;
use dynbp::ising::{build_random_ising, run_belief_trace, IsingParams, KineticParams, RunConfig, Topology};

fn main() -> dynbp::Result<()> {
    let lone = IsingParams {
        rows: 1,
        cols: 1,
        topology: Topology::Open,
        edges: vec![],
        couplings: vec![],
        fields: vec![0.0],
        seed: 0,
    };
    let torus = build_random_ising(3, 4, Topology::Torus, 0)?;
    let opts = DynOptions::default();
    for (label, p) in [("single spin", &lone), ("3x4 torus", &torus)] {
        println!("{label}: P(s = +1) at node 0");
        for theta_dt in [0.1, 0.5, 0.9] {
            let run = RunConfig { kinetic: KineticParams::new(theta_dt)?, p_up: 0.9, steps: 8 };
            let trace = run_belief_trace(p, run, 0, &opts)?;
            let cells: Vec<String> = trace.rows.iter().map(|r| format!("{:.3}", r.dynbp)).collect();
            let worst = trace.rows.iter().filter_map(|r| r.exact.map(|e| (r.dynbp - e).abs())).fold(0.0, f64::max);
            println!("  theta dt {theta_dt}: {}  (max |b - p| {worst:.1e})", cells.join(" "));
        }
    }
    Ok(())
}
