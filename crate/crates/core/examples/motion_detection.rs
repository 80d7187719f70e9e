//! Detect a camouflaged 5x5 patch wandering over a 50x50 noise background
//! and compare against plain frame differencing.

use dynbp::motion::{motion_options, run_motion_demo, MessageStart, MotionParams, VideoConfig};

fn main() -> dynbp::Result<()> {
    let video = VideoConfig::default();
    let params = MotionParams::default();
    let seeds: Vec<u64> = (0..5).collect();
    let start = std::time::Instant::now();
    let scores = run_motion_demo(&video, &params, &seeds, &motion_options(), MessageStart::StillScene, 1)?;
    println!("seed  dynbp  diff   dilated  converged");
    for s in &scores {
        println!(
            "{:<5} {:.3}  {:.3}  {:.3}    {}",
            s.seed, s.dynbp_iou, s.difference_iou, s.dilated_iou, s.converged
        );
    }
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
