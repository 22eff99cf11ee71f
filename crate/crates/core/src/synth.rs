//! Seeded synthetic scenes: stick-figure actors moving across the frame,
//! plus a noise model that turns ground truth into detector-like output.
//!
//! All randomness comes from ChaCha8 seeded with `seed`. Ground truth uses
//! stream 0 and corruption stream 1, so changing the noise model never
//! changes the ground truth. Draws happen in a fixed order (actors in index
//! order, then frames, then joints), which keeps files byte-identical
//! across platforms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{
    derive_box_from_pose, BBox, Detection, Frame, Keypoint, Pose, VideoSequence, DEFAULT_BOX_DILATION, POSETRACK_JOINTS,
};

/// Joint offsets in units of actor height, relative to the head top, in
/// the order of [`POSETRACK_JOINTS`]. `y` grows downwards.
const TEMPLATE: [(f64, f64); 15] = [
    (-0.08, 0.98), // right_ankle
    (-0.08, 0.75), // right_knee
    (-0.08, 0.52), // right_hip
    (0.08, 0.52),  // left_hip
    (0.08, 0.75),  // left_knee
    (0.08, 0.98),  // left_ankle
    (-0.16, 0.47), // right_wrist
    (-0.15, 0.33), // right_elbow
    (-0.12, 0.18), // right_shoulder
    (0.12, 0.18),  // left_shoulder
    (0.15, 0.33),  // left_elbow
    (0.16, 0.47),  // left_wrist
    (0.0, 0.13),   // head_bottom
    (0.05, 0.07),  // nose
    (0.0, 0.0),    // head_top
];

const HEAD_JOINTS: [usize; 3] = [12, 13, 14];
// knees and ankles swing horizontally while walking
const SWING: [(usize, f64); 4] = [(0, 1.0), (1, 0.5), (4, -0.5), (5, -1.0)];
const SWING_AMPLITUDE: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    #[default]
    Linear,
    /// Linear drift plus a vertical oscillation.
    Sinusoidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Actors roam the whole frame and may cross.
    #[default]
    Free,
    /// Actor `k` of `n` stays in the `k`-th of `n` equal vertical strips, so
    /// boxes never overlap (when strips are wide enough).
    Columns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Per-coordinate Gaussian σ on keypoints, pixels.
    pub keypoint_jitter: f64,
    /// Per-coordinate Gaussian σ on box corners, pixels.
    pub box_jitter: f64,
    pub miss_probability: f64,
    /// Expected false positives per frame; the fractional part is a
    /// Bernoulli draw.
    pub false_positive_rate: f64,
    pub tp_score: (f64, f64),
    pub fp_score: (f64, f64),
    pub keypoint_score: (f64, f64),
    /// Fraction of true detections with badly localized joints; these get
    /// `hard_jitter` and scores from `hard_score`.
    pub hard_fraction: f64,
    pub hard_jitter: f64,
    pub hard_score: (f64, f64),
    /// Gaussian σ added to each appearance-embedding component.
    pub feature_noise: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            keypoint_jitter: 2.0,
            box_jitter: 2.0,
            miss_probability: 0.05,
            false_positive_rate: 1.0,
            tp_score: (0.8, 1.0),
            fp_score: (0.3, 0.7),
            keypoint_score: (1.0, 4.0),
            hard_fraction: 0.0,
            hard_jitter: 15.0,
            hard_score: (0.8, 0.95),
            feature_noise: 0.1,
        }
    }
}

impl NoiseModel {
    /// Exact ground-truth geometry, detection score 1, keypoint scores well
    /// above the usual keypoint threshold.
    pub fn none() -> Self {
        NoiseModel {
            keypoint_jitter: 0.0,
            box_jitter: 0.0,
            miss_probability: 0.0,
            false_positive_rate: 0.0,
            tp_score: (1.0, 1.0),
            fp_score: (0.3, 0.7),
            keypoint_score: (4.0, 4.0),
            hard_fraction: 0.0,
            hard_jitter: 0.0,
            hard_score: (1.0, 1.0),
            feature_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub frames: usize,
    pub actors: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub motion: Motion,
    pub layout: Layout,
    /// Pixels per frame.
    pub speed: (f64, f64),
    /// Actor height in pixels.
    pub actor_height: (f64, f64),
    pub occlusion_probability: f64,
    /// Inclusive range of occluded span lengths, in frames.
    pub occlusion_duration: (usize, usize),
    pub noise: NoiseModel,
    pub label_every: usize,
    pub feature_dim: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            frames: 50,
            actors: 5,
            image_width: 1280,
            image_height: 720,
            motion: Motion::Linear,
            layout: Layout::Free,
            speed: (1.0, 4.0),
            actor_height: (150.0, 250.0),
            occlusion_probability: 0.1,
            occlusion_duration: (2, 6),
            noise: NoiseModel::default(),
            label_every: 1,
            feature_dim: 8,
        }
    }
}

impl ScenarioConfig {
    pub fn noiseless(seed: u64) -> Self {
        ScenarioConfig { seed, occlusion_probability: 0.0, noise: NoiseModel::none(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.noise;
        for (name, p) in [
            ("occlusion probability", self.occlusion_probability),
            ("miss probability", n.miss_probability),
            ("hard fraction", n.hard_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.frames == 0 {
            return Err(Error::InvalidArgument("frames must be at least 1".into()));
        }
        if self.label_every == 0 {
            return Err(Error::InvalidArgument("label stride must be at least 1".into()));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        for (name, (lo, hi)) in [
            ("speed", self.speed),
            ("actor height", self.actor_height),
            ("tp score", n.tp_score),
            ("fp score", n.fp_score),
            ("keypoint score", n.keypoint_score),
            ("hard score", n.hard_score),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "{name} range must satisfy 0 <= lo <= hi, got ({lo}, {hi})"
                )));
            }
        }
        if self.actor_height.0 <= 0.0 {
            return Err(Error::InvalidArgument("actor height must be positive".into()));
        }
        if self.occlusion_duration.0 == 0 || self.occlusion_duration.0 > self.occlusion_duration.1 {
            return Err(Error::InvalidArgument("occlusion duration range must satisfy 1 <= lo <= hi".into()));
        }
        for (name, v) in [
            ("keypoint jitter", n.keypoint_jitter),
            ("box jitter", n.box_jitter),
            ("false positive rate", n.false_positive_rate),
            ("hard jitter", n.hard_jitter),
            ("feature noise", n.feature_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    }
}

/// Keep `v` in `[lo, hi]` by reflecting at the bounds; flips `vel` on
/// each bounce.
fn reflect(v: &mut f64, vel: &mut f64, lo: f64, hi: f64) {
    if hi <= lo {
        *v = (lo + hi) / 2.0;
        return;
    }
    for _ in 0..4 {
        if *v < lo {
            *v = 2.0 * lo - *v;
            *vel = -*vel;
        } else if *v > hi {
            *v = 2.0 * hi - *v;
            *vel = -*vel;
        } else {
            return;
        }
    }
    *v = v.clamp(lo, hi);
}

/// Template pose with the head top at `(x, top)`, walking phase `phase`.
pub fn template_pose(x: f64, top: f64, height: f64, phase: f64) -> Pose {
    let mut offsets = TEMPLATE;
    for (j, w) in SWING {
        offsets[j].0 += w * SWING_AMPLITUDE * phase.sin();
    }
    Pose::new(offsets.iter().map(|&(dx, dy)| Keypoint::new(x + dx * height, top + dy * height, 1.0)).collect())
}

/// Box of the three head joints, dilated like person boxes.
pub fn head_box_of(pose: &Pose) -> Result<BBox> {
    let head = Pose::new(HEAD_JOINTS.iter().map(|&j| pose.joints[j]).collect());
    derive_box_from_pose(&head, DEFAULT_BOX_DILATION)
}

struct Actor {
    height: f64,
    x: f64,
    x_range: (f64, f64),
    top: f64,
    vx: f64,
    vy: f64,
    bob_phase: f64,
    occluded: Option<(usize, usize)>,
    embedding: Vec<f64>,
}

fn empty_sequence(cfg: &ScenarioConfig) -> VideoSequence {
    VideoSequence {
        video_id: format!("synth-{}", cfg.seed),
        image_width: cfg.image_width,
        image_height: cfg.image_height,
        joint_names: POSETRACK_JOINTS.iter().map(|s| s.to_string()).collect(),
        frames: Vec::new(),
    }
}

/// Ground-truth scene: one track per actor (ids `0..actors`), stable across
/// occlusions; every detection carries a head box and the actor's
/// appearance embedding.
pub fn generate_ground_truth(cfg: &ScenarioConfig) -> Result<VideoSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
    let mut actors: Vec<Actor> = (0..cfg.actors)
        .map(|k| {
            let height = uniform(&mut rng, cfg.actor_height);
            let (left, right) = match cfg.layout {
                Layout::Free => (0.0, w),
                Layout::Columns => {
                    let strip = w / cfg.actors as f64;
                    (k as f64 * strip, (k + 1) as f64 * strip)
                }
            };
            // person boxes reach 0.192 h either side of the head top
            let half = 0.2 * height;
            let mid = (left + right) / 2.0;
            let x_range = ((left + half).min(mid), (right - half).max(mid));
            let x = uniform(&mut rng, x_range);
            let top = uniform(&mut rng, (0.0, (h - height).max(0.0)));
            let speed = uniform(&mut rng, cfg.speed);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let bob_phase = rng.random_range(0.0..std::f64::consts::TAU);
            let occluded = if rng.random_bool(cfg.occlusion_probability) && cfg.frames > 1 {
                let start = rng.random_range(1..cfg.frames);
                let len = rng.random_range(cfg.occlusion_duration.0..=cfg.occlusion_duration.1);
                Some((start, start + len))
            } else {
                None
            };
            let embedding = (0..cfg.feature_dim).map(|_| normal(&mut rng, 1.0)).collect();
            Actor {
                height,
                x,
                x_range,
                top,
                vx: speed * angle.cos(),
                vy: speed * angle.sin(),
                bob_phase,
                occluded,
                embedding,
            }
        })
        .collect();

    let mut seq = empty_sequence(cfg);
    for t in 0..cfg.frames {
        let mut detections = Vec::with_capacity(actors.len());
        for (id, a) in actors.iter_mut().enumerate() {
            if t > 0 {
                a.x += a.vx;
                a.top += a.vy;
                reflect(&mut a.x, &mut a.vx, a.x_range.0, a.x_range.1);
                reflect(&mut a.top, &mut a.vy, 0.0, h - a.height);
            }
            if a.occluded.is_some_and(|(s, e)| (s..e).contains(&t)) {
                continue;
            }
            let bob = match cfg.motion {
                Motion::Linear => 0.0,
                Motion::Sinusoidal => 0.05 * a.height * (0.2 * t as f64 + a.bob_phase).sin(),
            };
            let pose = template_pose(a.x, a.top + bob, a.height, 0.5 * t as f64 + a.bob_phase);
            let bbox = derive_box_from_pose(&pose, DEFAULT_BOX_DILATION)?;
            let head = head_box_of(&pose)?;
            detections.push(
                Detection::new(bbox, 1.0, pose)
                    .with_track_id(id as u64)
                    .with_head_box(head)
                    .with_feature(a.embedding.clone()),
            );
        }
        seq.frames.push(Frame::new(t as u64, t % cfg.label_every == 0, detections));
    }
    Ok(seq)
}

fn sorted_box(a: f64, b: f64, c: f64, d: f64) -> BBox {
    BBox::new(a.min(c), b.min(d), a.max(c), b.max(d))
}

/// Detector-like output for `gt`: jitter, misses, false positives and
/// scores per `cfg.noise`. Track ids and head boxes are stripped and each
/// frame's detections are shuffled.
pub fn corrupt_to_predictions(gt: &VideoSequence, cfg: &ScenarioConfig) -> Result<VideoSequence> {
    cfg.validate()?;
    let n = &cfg.noise;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let (w, h) = (gt.image_width as f64, gt.image_height as f64);
    let fp_whole = n.false_positive_rate.floor() as usize;
    let fp_frac = n.false_positive_rate - n.false_positive_rate.floor();

    let mut out = gt.clone_header();
    for f in &gt.frames {
        let mut detections = Vec::with_capacity(f.detections.len() + fp_whole + 1);
        for g in &f.detections {
            if rng.random_bool(n.miss_probability) {
                continue;
            }
            let hard = rng.random_bool(n.hard_fraction);
            let sigma = if hard { n.hard_jitter } else { n.keypoint_jitter };
            let joints = g
                .pose
                .joints
                .iter()
                .map(|k| {
                    let dx = normal(&mut rng, sigma);
                    let dy = normal(&mut rng, sigma);
                    let s = uniform(&mut rng, n.keypoint_score);
                    if k.present {
                        Keypoint::new(k.x + dx, k.y + dy, s)
                    } else {
                        Keypoint::absent()
                    }
                })
                .collect();
            let pose = Pose::new(joints);
            let b = derive_box_from_pose(&pose, DEFAULT_BOX_DILATION)?;
            let mut c = [0.0; 4];
            for v in &mut c {
                *v = normal(&mut rng, n.box_jitter);
            }
            let bbox = sorted_box(b.x_min + c[0], b.y_min + c[1], b.x_max + c[2], b.y_max + c[3]);
            let score = uniform(&mut rng, if hard { n.hard_score } else { n.tp_score });
            let mut d = Detection::new(bbox, score, pose);
            if let Some(e) = &g.feature {
                d.feature = Some(e.iter().map(|v| v + normal(&mut rng, n.feature_noise)).collect());
            }
            detections.push(d);
        }

        let fp_count = fp_whole + usize::from(rng.random_bool(fp_frac));
        for _ in 0..fp_count {
            let height = uniform(&mut rng, cfg.actor_height);
            let x = rng.random_range(0.0..w);
            let top = rng.random_range(-0.5 * height..h);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let mut pose = template_pose(x, top, height, phase);
            for k in &mut pose.joints {
                k.score = uniform(&mut rng, n.keypoint_score);
            }
            let bbox = derive_box_from_pose(&pose, DEFAULT_BOX_DILATION)?;
            let score = uniform(&mut rng, n.fp_score);
            let feature = (0..cfg.feature_dim).map(|_| normal(&mut rng, 1.0)).collect();
            detections.push(Detection::new(bbox, score, pose).with_feature(feature));
        }
        detections.shuffle(&mut rng);
        out.frames.push(Frame::new(f.frame_index, f.labeled, detections));
    }
    Ok(out)
}

/// Ground truth and predictions of one scenario.
pub fn generate_pair(cfg: &ScenarioConfig) -> Result<(VideoSequence, VideoSequence)> {
    let gt = generate_ground_truth(cfg)?;
    let pred = corrupt_to_predictions(&gt, cfg)?;
    Ok((gt, pred))
}

/// One pair per seed `first_seed..first_seed + count`, generated
/// independently.
pub fn generate_suite(
    base: &ScenarioConfig,
    first_seed: u64,
    count: usize,
    exec: Execution,
) -> Result<Vec<(VideoSequence, VideoSequence)>> {
    exec.try_map(&(0..count as u64).collect::<Vec<_>>(), |&k| {
        generate_pair(&ScenarioConfig { seed: first_seed + k, ..base.clone() })
    })
}
