//! Round trips through the on-disk formats: model JSON, frame stacks and PGM
//! masks, all written to a scratch directory.

use dynbp::io::{FrameStack, GrayImage, ModelFile};
use dynbp::ising::{build_kinetic_conditional, build_random_ising, KineticParams, Topology};
use dynbp::motion::synth_random_patch_video;

fn main() -> dynbp::Result<()> {
    let dir = std::env::temp_dir().join("dynbp-formats");
    std::fs::create_dir_all(&dir)?;

    let p = build_random_ising(2, 3, Topology::Open, 4)?;
    let tm = build_kinetic_conditional(&p, KineticParams::new(0.3)?)?;
    let model = ModelFile::from_temporal(&tm);
    let path = dir.join("kinetic.json");
    model.save(&path)?;
    let back = ModelFile::load(&path)?;
    println!("{}: {} temporal factors, problems {:?}", path.display(), back.temporal_factors.len(), back.problems());
    assert_eq!(back, model);

    let video = synth_random_patch_video(16, 12, 4, 3, 0)?;
    let stack = FrameStack::from_intensities(video.width, video.height, &video.frames);
    let path = dir.join("video.dbpf");
    stack.write(&path)?;
    let again = FrameStack::read(&path)?;
    println!("{}: {} frames of {}x{}", path.display(), again.intensities().len(), again.width, again.height);

    let path = dir.join("mask.pgm");
    GrayImage::from_mask(video.width, video.height, &video.masks[0]).write_pgm(&path)?;
    let mask = GrayImage::read_pgm(&path)?;
    let on = mask.intensities().iter().filter(|&&v| v > 0.5).count();
    println!("{}: {on} foreground pixels", path.display());
    Ok(())
}
