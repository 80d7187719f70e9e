//! Moving-object detection with a spatio-temporal MRF run forward in time by
//! DynBP, on synthetic video with a camouflaged random patch.
//!
//! Pixel `(row, col)` has id `row * width + col`. Motion states run
//! `0..C`, and state `C - 1` means "moving".

use rand::Rng;
use rand::SeedableRng;
use rand_pcg::Pcg64;
use serde::Serialize;

use crate::dynbp::{dynbp_step, dynbp_step_from, DegeneratePolicy, DynOptions};
use crate::error::{Error, Result};
use crate::model::VariableDecl;
use crate::par::map_indexed;
use crate::temporal::{priors_from_product, variable_marginals, TemporalFactor, TemporalModel};

/// Intensity levels of the synthetic video and of the differencing quantizer.
pub const LEVELS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub width: usize,
    pub height: usize,
    /// `frames[k][pixel]` in `[0, 1]`.
    pub frames: Vec<Vec<f64>>,
    /// Ground-truth motion masks, one per frame.
    pub masks: Vec<Vec<bool>>,
}

impl FrameSequence {
    pub fn new(width: usize, height: usize, frames: Vec<Vec<f64>>, masks: Vec<Vec<bool>>) -> Result<Self> {
        let n = width * height;
        if n == 0 {
            return Err(Error::Usage("frames must have at least one pixel".into()));
        }
        if frames.len() != masks.len() {
            return Err(Error::Usage(format!("{} frames but {} masks", frames.len(), masks.len())));
        }
        if frames.iter().any(|f| f.len() != n) || masks.iter().any(|m| m.len() != n) {
            return Err(Error::Usage(format!("every frame and mask must have {n} pixels")));
        }
        if frames.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Usage("intensities must lie in [0, 1]".into()));
        }
        Ok(FrameSequence { width, height, frames, masks })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotionParams {
    pub theta_s: f64,
    pub theta_t: f64,
    /// Number of motion states `C`.
    pub states: usize,
    pub diff_threshold: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams { theta_s: 0.99, theta_t: 0.6, states: 2, diff_threshold: 1.0 / LEVELS as f64 }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        if self.states < 2 {
            return Err(Error::Usage(format!("need at least 2 motion states, got {}", self.states)));
        }
        for (name, theta) in [("theta_s", self.theta_s), ("theta_t", self.theta_t)] {
            if !(theta > 0.0 && theta < 1.0) {
                return Err(Error::Usage(format!("{name} must lie in (0, 1), got {theta}")));
            }
            let eps = (1.0 - theta) / (self.states - 1) as f64;
            if theta <= eps {
                return Err(Error::Usage(format!("{name} = {theta} must exceed the off-diagonal weight {eps}")));
            }
        }
        if !(self.diff_threshold > 0.0 && self.diff_threshold < 1.0) {
            return Err(Error::Usage(format!("diff threshold must lie in (0, 1), got {}", self.diff_threshold)));
        }
        Ok(())
    }
}

/// `C x C` compatibility: `theta` on the diagonal, `(1 - theta) / (C - 1)` off it.
pub fn compatibility(theta: f64, states: usize) -> Vec<f64> {
    let eps = (1.0 - theta) / (states - 1) as f64;
    (0..states * states).map(|k| if k / states == k % states { theta } else { eps }).collect()
}

/// 4-neighbour pairs, right then down neighbours of each pixel in id order.
pub fn grid_edges(width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for r in 0..height {
        for c in 0..width {
            let id = r * width + c;
            if c + 1 < width {
                edges.push((id, id + 1));
            }
            if r + 1 < height {
                edges.push((id, id + width));
            }
        }
    }
    edges
}

fn level(rng: &mut Pcg64) -> f64 {
    rng.gen_range(0..LEVELS) as f64 / (LEVELS - 1) as f64
}

/// A static noise background with a `patch x patch` block of fresh noise
/// that takes one random 4-neighbour step per frame, reflecting at borders.
pub fn synth_random_patch_video(
    width: usize,
    height: usize,
    frames: usize,
    patch: usize,
    seed: u64,
) -> Result<FrameSequence> {
    if patch == 0 || patch >= width.min(height) {
        return Err(Error::Usage(format!("patch side {patch} must be in 1..{}", width.min(height))));
    }
    let mut rng = Pcg64::seed_from_u64(seed);
    let background: Vec<f64> = (0..width * height).map(|_| level(&mut rng)).collect();
    let (mut row, mut col) = (rng.gen_range(0..=height - patch), rng.gen_range(0..=width - patch));
    let mut out = Vec::with_capacity(frames);
    let mut masks = Vec::with_capacity(frames);
    for k in 0..frames {
        if k > 0 {
            let (dr, dc): (isize, isize) = [(0, 1), (0, -1), (1, 0), (-1, 0)][rng.gen_range(0..4)];
            let reflect = |pos: usize, d: isize, limit: usize| {
                let next = pos as isize + d;
                if next < 0 || next as usize > limit {
                    (pos as isize - d) as usize
                } else {
                    next as usize
                }
            };
            row = reflect(row, dr, height - patch);
            col = reflect(col, dc, width - patch);
        }
        let mut frame = background.clone();
        let mut mask = vec![false; width * height];
        for r in row..row + patch {
            for c in col..col + patch {
                frame[r * width + c] = level(&mut rng);
                mask[r * width + c] = true;
            }
        }
        out.push(frame);
        masks.push(mask);
    }
    FrameSequence::new(width, height, out, masks)
}

fn quantize(v: f64) -> f64 {
    let top = (LEVELS - 1) as f64;
    (v * top).round() / top
}

/// `d[k - 1][pixel]` is set when the quantized intensity changed by more
/// than `threshold` between frames `k - 1` and `k`.
pub fn frame_difference(fs: &FrameSequence, threshold: f64) -> Result<Vec<Vec<bool>>> {
    if fs.len() < 2 {
        return Err(Error::Usage("frame differencing needs at least two frames".into()));
    }
    Ok(fs
        .frames
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (quantize(*b) - quantize(*a)).abs() > threshold).collect())
        .collect())
}

/// One transition of the motion model: spatial compatibilities between
/// future neighbours, and per pixel either a hard "moving" observation or a
/// decaying temporal compatibility with the past state.
pub fn build_motion_conditional(
    width: usize,
    height: usize,
    d_next: &[bool],
    params: &MotionParams,
) -> Result<TemporalModel> {
    params.validate()?;
    let n = width * height;
    if d_next.len() != n {
        return Err(Error::Usage(format!("difference grid has {} pixels, expected {n}", d_next.len())));
    }
    let c = params.states;
    let variables: Vec<VariableDecl> = (0..n).map(|id| VariableDecl { id, cardinality: c }).collect();
    let spatial = compatibility(params.theta_s, c);
    let temporal = compatibility(params.theta_t, c);
    let edges = grid_edges(width, height);
    let mut factors = Vec::with_capacity(edges.len() + n);
    for (id, &(i, j)) in edges.iter().enumerate() {
        factors.push(TemporalFactor { id, past_scope: vec![], future_scope: vec![i, j], values: spatial.clone() });
    }
    for (v, &moving) in d_next.iter().enumerate() {
        let values = (0..c * c)
            .map(|k| {
                let (past, fut) = (k / c, k % c);
                if moving {
                    if fut == c - 1 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    temporal[fut * c + past.saturating_sub(1)]
                }
            })
            .collect();
        factors.push(TemporalFactor { id: edges.len() + v, past_scope: vec![v], future_scope: vec![v], values });
    }
    TemporalModel::with_bethe_regions(variables, factors)
}

/// Solver settings for motion detection. The degenerate-exponent policy is
/// pinned to a fixed exponent because border pixels have fewer parents.
pub fn motion_options() -> DynOptions {
    DynOptions { degenerate: DegeneratePolicy::Fixed(0.5), ..DynOptions::default() }
}

/// Most probable state, ties to the lower state.
pub fn map_state(belief: &[f64]) -> usize {
    let mut best = 0;
    for (s, &b) in belief.iter().enumerate() {
        if b > belief[best] {
            best = s;
        }
    }
    best
}

/// Intersection over union; two empty masks score 1.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// 4-neighbour binary dilation.
pub fn dilate(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut out = mask.to_vec();
    for &(i, j) in &grid_edges(width, height) {
        if mask[i] || mask[j] {
            out[i] = true;
            out[j] = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// `states[k][pixel]`, MAP state per frame.
    pub states: Vec<Vec<usize>>,
    pub masks: Vec<Vec<bool>>,
    /// `beliefs[k][pixel]`, node marginals per frame.
    pub beliefs: Vec<Vec<Vec<f64>>>,
    pub iou: Vec<f64>,
    /// Convergence of each frame transition; frame 0 has none.
    pub converged: Vec<bool>,
}

impl DetectionResult {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

/// How each frame's message passing starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageStart {
    /// From the converged messages of a scene with no motion at all. At
    /// strong spatial coupling, all-ones messages let hard motion evidence
    /// flood whole background regions that touch the image border.
    #[default]
    StillScene,
    /// From all-ones messages.
    Cold,
}

impl std::str::FromStr for MessageStart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "still-scene" => Ok(MessageStart::StillScene),
            "cold" => Ok(MessageStart::Cold),
            _ => Err(Error::Usage(format!("message start must be 'still-scene' or 'cold', got '{s}'"))),
        }
    }
}

/// Runs DynBP forward through the video, starting from the still-scene
/// fixed point.
pub fn detect_motion(fs: &FrameSequence, params: &MotionParams, opts: &DynOptions) -> Result<DetectionResult> {
    detect_motion_from(fs, params, opts, MessageStart::StillScene)
}

/// [`detect_motion`] with an explicit message start. Frame 0 gets the
/// still-scene beliefs, or uniform beliefs for a cold start.
pub fn detect_motion_from(
    fs: &FrameSequence,
    params: &MotionParams,
    opts: &DynOptions,
    start: MessageStart,
) -> Result<DetectionResult> {
    params.validate()?;
    let diffs = frame_difference(fs, params.diff_threshold)?;
    let (w, h, c) = (fs.width, fs.height, params.states);
    let n = w * h;
    let uniform = vec![vec![1.0 / c as f64; c]; n];
    let still = build_motion_conditional(w, h, &vec![false; n], params)?;
    let (mut priors, warm) = match start {
        MessageStart::StillScene => {
            let base = dynbp_step(&still, &priors_from_product(&still, &uniform), opts)?;
            (base.next_priors, Some(base.messages))
        }
        MessageStart::Cold => (priors_from_product(&still, &uniform), None),
    };
    let mut result = DetectionResult {
        states: Vec::new(),
        masks: Vec::new(),
        beliefs: Vec::new(),
        iou: Vec::new(),
        converged: Vec::new(),
    };
    let record = |beliefs: Vec<Vec<f64>>, truth: &[bool], result: &mut DetectionResult| {
        let states: Vec<usize> = beliefs.iter().map(|b| map_state(b)).collect();
        let mask: Vec<bool> = states.iter().map(|&s| s == c - 1).collect();
        result.iou.push(iou(&mask, truth));
        result.states.push(states);
        result.masks.push(mask);
        result.beliefs.push(beliefs);
    };
    record(variable_marginals(&still, &priors), &fs.masks[0], &mut result);
    for (k, d) in diffs.iter().enumerate() {
        let tm = build_motion_conditional(w, h, d, params)?;
        let step = match &warm {
            Some(msgs) => dynbp_step_from(&tm, &priors, msgs.clone(), opts)?,
            None => dynbp_step(&tm, &priors, opts)?,
        };
        result.converged.push(step.converged);
        record(variable_marginals(&tm, &step.next_priors), &fs.masks[k + 1], &mut result);
        priors = step.next_priors;
    }
    Ok(result)
}

/// Frame-difference masks aligned with frames; frame 0 is empty.
pub fn difference_masks(fs: &FrameSequence, threshold: f64) -> Result<Vec<Vec<bool>>> {
    let mut masks = vec![vec![false; fs.width * fs.height]];
    masks.extend(frame_difference(fs, threshold)?);
    Ok(masks)
}

/// Mean of `values[from..]`.
pub fn mean_from(values: &[f64], from: usize) -> f64 {
    let tail = &values[from.min(values.len())..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VideoConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub patch: usize,
    /// First frame that enters the mean IoU.
    pub score_from: usize,
}

impl Default for VideoConfig {
    fn default() -> Self {
        VideoConfig { width: 50, height: 50, frames: 60, patch: 5, score_from: 10 }
    }
}

/// Per-seed mean IoU of each detector over the scored frames.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotionScore {
    pub seed: u64,
    pub dynbp_iou: f64,
    pub difference_iou: f64,
    pub dilated_iou: f64,
    pub converged: bool,
    /// Per-frame IoU of the DynBP mask.
    #[serde(skip)]
    pub dynbp_frames: Vec<f64>,
    #[serde(skip)]
    pub difference_frames: Vec<f64>,
}

/// Synthesizes one video per seed and scores DynBP against frame
/// differencing, with and without a dilation.
pub fn run_motion_demo(
    video: &VideoConfig,
    params: &MotionParams,
    seeds: &[u64],
    opts: &DynOptions,
    start: MessageStart,
    jobs: usize,
) -> Result<Vec<MotionScore>> {
    map_indexed(seeds.len(), jobs, |k| {
        let seed = seeds[k];
        let fs = synth_random_patch_video(video.width, video.height, video.frames, video.patch, seed)?;
        let det = detect_motion_from(&fs, params, opts, start)?;
        let diff = difference_masks(&fs, params.diff_threshold)?;
        let difference_frames: Vec<f64> = diff.iter().zip(&fs.masks).map(|(m, t)| iou(m, t)).collect();
        let dilated: Vec<f64> = diff
            .iter()
            .zip(&fs.masks)
            .map(|(m, t)| iou(&dilate(m, fs.width, fs.height), t))
            .collect();
        Ok(MotionScore {
            seed,
            dynbp_iou: mean_from(&det.iou, video.score_from),
            difference_iou: mean_from(&difference_frames, video.score_from),
            dilated_iou: mean_from(&dilated, video.score_from),
            converged: det.all_converged(),
            dynbp_frames: det.iou,
            difference_frames,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compatibility_table() {
        let t = compatibility(0.99, 2);
        assert!((t[0] - 0.99).abs() < 1e-15 && (t[1] - 0.01).abs() < 1e-15);
        assert_eq!(t[1], t[2]);
        assert_eq!(t[0], t[3]);
        let t = compatibility(0.6, 3);
        assert!((t[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn weak_theta_is_rejected() {
        let p = MotionParams { theta_t: 0.3, states: 2, ..MotionParams::default() };
        assert!(p.validate().is_err());
        let p = MotionParams { theta_t: 0.3, states: 4, ..MotionParams::default() };
        assert!(p.validate().is_ok());
    }

    #[test]
    fn patch_video_basics() {
        let a = synth_random_patch_video(20, 20, 15, 5, 7).unwrap();
        let b = synth_random_patch_video(20, 20, 15, 5, 7).unwrap();
        assert_eq!(a, b);
        for m in &a.masks {
            assert_eq!(m.iter().filter(|&&x| x).count(), 25);
        }
        // One-pixel steps: consecutive masks overlap in 20 pixels.
        for w in a.masks.windows(2) {
            assert_eq!(iou(&w[0], &w[1]), 20.0 / 30.0);
        }
    }

    #[test]
    fn patch_is_camouflaged() {
        let fs = synth_random_patch_video(50, 50, 60, 5, 3).unwrap();
        let (mut inside, mut outside) = ((0.0, 0usize), (0.0, 0usize));
        for (f, m) in fs.frames.iter().zip(&fs.masks) {
            for (&v, &t) in f.iter().zip(m) {
                let slot = if t { &mut inside } else { &mut outside };
                slot.0 += v;
                slot.1 += 1;
            }
        }
        let (mi, mo) = (inside.0 / inside.1 as f64, outside.0 / outside.1 as f64);
        // Standard deviation of the uniform level grid, then of the patch mean.
        let sd = ((LEVELS * LEVELS - 1) as f64 / 12.0).sqrt() / (LEVELS - 1) as f64;
        assert!((mi - mo).abs() < 3.0 * sd / (inside.1 as f64).sqrt(), "{mi} vs {mo}");
    }

    #[test]
    fn differencing() {
        let still = FrameSequence::new(2, 2, vec![vec![0.5; 4]; 3], vec![vec![false; 4]; 3]).unwrap();
        assert!(frame_difference(&still, 0.125).unwrap().iter().flatten().all(|&d| !d));
        let mut frames = vec![vec![0.0; 4]; 2];
        frames[1][2] = 1.0;
        let jump = FrameSequence::new(2, 2, frames, vec![vec![false; 4]; 2]).unwrap();
        assert_eq!(frame_difference(&jump, 0.125).unwrap(), vec![vec![false, false, true, false]]);
        let fs = synth_random_patch_video(30, 30, 20, 5, 1).unwrap();
        let d = frame_difference(&fs, 0.125).unwrap();
        let (mut hit, mut on, mut false_hit, mut off) = (0, 0, 0, 0);
        for (k, dk) in d.iter().enumerate() {
            for (p, &x) in dk.iter().enumerate() {
                if fs.masks[k + 1][p] {
                    on += 1;
                    hit += x as usize;
                } else {
                    off += 1;
                    false_hit += x as usize;
                }
            }
        }
        assert!(hit as f64 / on as f64 > false_hit as f64 / off as f64);
    }

    #[test]
    fn single_pixel_decay_matches_its_chain() {
        let params = MotionParams { theta_t: 0.6, states: 3, ..MotionParams::default() };
        let frames = vec![vec![0.0], vec![1.0], vec![1.0], vec![1.0], vec![1.0]];
        let fs = FrameSequence::new(1, 1, frames, vec![vec![false]; 5]).unwrap();
        let det = detect_motion(&fs, &params, &motion_options()).unwrap();
        // Hand chain: frame 1 is observed moving, then the state decays.
        let psi = compatibility(0.6, 3);
        let mut b = vec![0.0, 0.0, 1.0];
        for k in 1..5 {
            if k > 1 {
                let mut next = vec![0.0; 3];
                for (s, &p) in b.iter().enumerate() {
                    for (t, slot) in next.iter_mut().enumerate() {
                        *slot += p * psi[t * 3 + s.saturating_sub(1)];
                    }
                }
                b = next;
            }
            for (got, want) in det.beliefs[k][0].iter().zip(&b) {
                assert!((got - want).abs() < 1e-9, "frame {k}: {:?} vs {b:?}", det.beliefs[k][0]);
            }
        }
    }

    #[test]
    fn static_scene_clears_and_full_motion_fills() {
        let params = MotionParams { states: 3, ..MotionParams::default() };
        let still = FrameSequence::new(4, 3, vec![vec![0.5; 12]; 6], vec![vec![false; 12]; 6]).unwrap();
        let det = detect_motion(&still, &params, &motion_options()).unwrap();
        assert!(det.all_converged());
        assert!(det.masks[1..].iter().flatten().all(|&m| !m));
        let flicker: Vec<Vec<f64>> = (0..6).map(|k| vec![(k % 2) as f64; 12]).collect();
        let busy = FrameSequence::new(4, 3, flicker, vec![vec![true; 12]; 6]).unwrap();
        let det = detect_motion(&busy, &params, &motion_options()).unwrap();
        assert!(det.masks[1..].iter().flatten().all(|&m| m));
        for frame in &det.beliefs[1..] {
            for b in frame {
                assert!(b[2] >= 1.0 - 1e-10);
                assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn extra_evidence_never_lowers_motion_belief() {
        let params = MotionParams::default();
        let mut d = vec![false; 16];
        d[5] = true;
        let opts = motion_options();
        let prior = |tm: &TemporalModel| priors_from_product(tm, &vec![vec![0.5, 0.5]; 16]);
        let base = build_motion_conditional(4, 4, &d, &params).unwrap();
        let base_b = variable_marginals(&base, &dynbp_step(&base, &prior(&base), &opts).unwrap().next_priors);
        for extra in [6, 10, 0] {
            let mut d2 = d.clone();
            d2[extra] = true;
            let tm = build_motion_conditional(4, 4, &d2, &params).unwrap();
            let b = variable_marginals(&tm, &dynbp_step(&tm, &prior(&tm), &opts).unwrap().next_priors);
            assert!(b[extra][1] >= base_b[extra][1] - 1e-12);
        }
    }

    #[test]
    fn dilation_and_iou() {
        let mut m = vec![false; 9];
        m[4] = true;
        let d = dilate(&m, 3, 3);
        assert_eq!(d.iter().filter(|&&x| x).count(), 5);
        assert_eq!(iou(&m, &d), 0.2);
        assert_eq!(iou(&[false; 3], &[false; 3]), 1.0);
        assert_eq!(map_state(&[0.5, 0.5]), 0);
    }
}
