//! Domain types for pose detections and ground truth, with JSON file I/O.
//!
//! Sequence files are UTF-8 JSON:
//!
//! ```text
//! {"video_id": "v", "image_size": [w, h], "joint_names": [..J..],
//!  "frames": [{"frame_index": 0, "labeled": true, "detections": [
//!     {"bbox": [x1, y1, x2, y2], "score": 0.9,
//!      "keypoints": [[x, y, score, present01], ..J..],
//!      "feature": [..], "track_id": 3, "head_box": [x1, y1, x2, y2]}]}]}
//! ```
//!
//! `feature`, `track_id` and `head_box` are optional. Reals are written with
//! the shortest representation that parses back to the same bits.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Joint names of the 15-keypoint annotation layout, in file order.
pub const POSETRACK_JOINTS: [&str; 15] = [
    "right_ankle",
    "right_knee",
    "right_hip",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_wrist",
    "right_elbow",
    "right_shoulder",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "head_bottom",
    "nose",
    "head_top",
];

/// Fraction by which a pose-derived person box grows in each dimension.
pub const DEFAULT_BOX_DILATION: f64 = 0.20;

/// A single joint estimate. When `present` is false the other fields carry
/// no meaning and every consumer ignores them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Unnormalized confidence; heatmap-scale scores may exceed 1.
    pub score: f64,
    pub present: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, score: f64) -> Self {
        Keypoint { x, y, score, present: true }
    }

    pub fn absent() -> Self {
        Keypoint::default()
    }

    pub fn distance(&self, other: &Keypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pose {
    pub joints: Vec<Keypoint>,
}

impl Pose {
    pub fn new(joints: Vec<Keypoint>) -> Self {
        Pose { joints }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn present(&self) -> impl Iterator<Item = &Keypoint> {
        self.joints.iter().filter(|k| k.present)
    }

    pub fn present_count(&self) -> usize {
        self.present().count()
    }

    /// Reorder joints so that output joint `i` is input joint `map[i]`.
    pub fn permuted(&self, map: &[usize]) -> Pose {
        Pose { joints: map.iter().map(|&src| self.joints[src]).collect() }
    }
}

/// Axis-aligned box in continuous pixel coordinates; area is
/// `(x_max - x_min) * (y_max - y_min)` with no `+1` convention.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        debug_assert!(x_min <= x_max && y_min <= y_max, "inverted box");
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn try_new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox { x_min, y_min, x_max, y_max };
        b.validate()?;
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.x_min, self.y_min, self.x_max, self.y_max];
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("box"));
        }
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(Error::Invariant(format!("box corners out of order: {:?}", self.to_array())));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn scaled(&self, s: f64) -> BBox {
        BBox::new(self.x_min * s, self.y_min * s, self.x_max * s, self.y_max * s)
    }

    /// Area of the overlap region, zero when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn from_array(a: [f64; 4]) -> Result<BBox> {
        BBox::try_new(a[0], a[1], a[2], a[3])
    }
}

/// One person hypothesis (or labeled person) in one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Detection {
    pub bbox: BBox,
    /// Detector confidence, clamped to `[0, 1]` at load.
    pub score: f64,
    pub pose: Pose,
    pub feature: Option<Vec<f64>>,
    pub track_id: Option<u64>,
    /// Ground truth only; the PCKh normalizer is derived from it.
    pub head_box: Option<BBox>,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, pose: Pose) -> Self {
        Detection { bbox, score, pose, ..Default::default() }
    }

    pub fn with_track_id(mut self, id: u64) -> Self {
        self.track_id = Some(id);
        self
    }

    pub fn with_feature(mut self, feature: Vec<f64>) -> Self {
        self.feature = Some(feature);
        self
    }

    pub fn with_head_box(mut self, head: BBox) -> Self {
        self.head_box = Some(head);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub frame_index: u64,
    /// Only labeled frames take part in evaluation.
    pub labeled: bool,
    pub detections: Vec<Detection>,
}

impl Frame {
    pub fn new(frame_index: u64, labeled: bool, detections: Vec<Detection>) -> Self {
        Frame { frame_index, labeled, detections }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VideoSequence {
    pub video_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub joint_names: Vec<String>,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Prediction,
    GroundTruth,
}

impl VideoSequence {
    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn detections(&self) -> impl Iterator<Item = &Detection> {
        self.frames.iter().flat_map(|f| f.detections.iter())
    }

    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(|f| f.detections.len()).sum()
    }

    /// Distinct track ids present anywhere in the sequence.
    pub fn track_ids(&self) -> std::collections::BTreeSet<u64> {
        self.detections().filter_map(|d| d.track_id).collect()
    }

    /// Check every structural invariant. Ground truth additionally requires a
    /// track id and a head box on every person.
    pub fn validate(&self, role: Role) -> Result<()> {
        let j = self.joint_count();
        let mut feature_dim: Option<usize> = None;
        for (fpos, frame) in self.frames.iter().enumerate() {
            if fpos > 0 && frame.frame_index <= self.frames[fpos - 1].frame_index {
                return Err(Error::Invariant(format!(
                    "non-monotone frames: frame_index {} follows {}",
                    frame.frame_index,
                    self.frames[fpos - 1].frame_index
                )));
            }
            for (di, det) in frame.detections.iter().enumerate() {
                det.bbox.validate()?;
                if !det.score.is_finite() {
                    return Err(Error::NonFinite("detection score"));
                }
                if det.pose.len() != j {
                    return Err(Error::JointCount { expected: j, found: det.pose.len() });
                }
                if det.pose.joints.iter().any(|k| !(k.x.is_finite() && k.y.is_finite() && k.score.is_finite())) {
                    return Err(Error::NonFinite("keypoint"));
                }
                if let Some(f) = &det.feature {
                    if f.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite("feature"));
                    }
                    match feature_dim {
                        None => feature_dim = Some(f.len()),
                        Some(d) if d != f.len() => return Err(Error::FeatureDimension { left: d, right: f.len() }),
                        _ => {}
                    }
                }
                if let Some(h) = &det.head_box {
                    h.validate()?;
                }
                if role == Role::GroundTruth {
                    if det.track_id.is_none() {
                        return Err(Error::MissingGroundTruthField {
                            frame: frame.frame_index,
                            detection: di,
                            field: "track_id",
                        });
                    }
                    if det.head_box.is_none() {
                        return Err(Error::MissingGroundTruthField {
                            frame: frame.frame_index,
                            detection: di,
                            field: "head_box",
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Tight box around the present joints, grown by `dilation` of its span in
/// each dimension (half on each side). A single joint yields a point box.
pub fn derive_box_from_pose(pose: &Pose, dilation: f64) -> Result<BBox> {
    let mut it = pose.present();
    let first = it.next().ok_or(Error::NoPresentJoints)?;
    let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
    for k in it {
        x0 = x0.min(k.x);
        y0 = y0.min(k.y);
        x1 = x1.max(k.x);
        y1 = y1.max(k.y);
    }
    let pad_x = (x1 - x0) * dilation / 2.0;
    let pad_y = (y1 - y0) * dilation / 2.0;
    Ok(BBox::new(x0 - pad_x, y0 - pad_y, x1 + pad_x, y1 + pad_y))
}

/// Drop detections scoring below `det_threshold` and mark keypoints scoring
/// below `kp_threshold` as absent. Frames are kept even when emptied.
pub fn filter_detections(seq: &VideoSequence, det_threshold: f64, kp_threshold: f64) -> VideoSequence {
    let frames = seq
        .frames
        .iter()
        .map(|f| Frame {
            frame_index: f.frame_index,
            labeled: f.labeled,
            detections: f
                .detections
                .iter()
                .filter(|d| d.score >= det_threshold)
                .map(|d| {
                    let mut d = d.clone();
                    for k in &mut d.pose.joints {
                        if k.score < kp_threshold {
                            k.present = false;
                        }
                    }
                    d
                })
                .collect(),
        })
        .collect();
    VideoSequence { frames, ..seq.clone_header() }
}

impl VideoSequence {
    /// Copy of everything except the frames.
    pub fn clone_header(&self) -> VideoSequence {
        VideoSequence {
            video_id: self.video_id.clone(),
            image_width: self.image_width,
            image_height: self.image_height,
            joint_names: self.joint_names.clone(),
            frames: Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// wire format

#[derive(Debug, Clone, Copy, PartialEq)]
struct Presence(bool);

impl Serialize for Presence {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.0 as u8)
    }
}

impl<'de> Deserialize<'de> for Presence {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct PresenceVisitor;
        impl Visitor<'_> for PresenceVisitor {
            type Value = Presence;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a presence flag (0 or 1)")
            }
            fn visit_bool<E: de::Error>(self, v: bool) -> std::result::Result<Presence, E> {
                Ok(Presence(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Presence, E> {
                match v {
                    0 => Ok(Presence(false)),
                    1 => Ok(Presence(true)),
                    _ => Err(E::invalid_value(de::Unexpected::Unsigned(v), &self)),
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Presence, E> {
                match v {
                    0 => Ok(Presence(false)),
                    1 => Ok(Presence(true)),
                    _ => Err(E::invalid_value(de::Unexpected::Signed(v), &self)),
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Presence, E> {
                if v == 0.0 {
                    Ok(Presence(false))
                } else if v == 1.0 {
                    Ok(Presence(true))
                } else {
                    Err(E::invalid_value(de::Unexpected::Float(v), &self))
                }
            }
        }
        d.deserialize_any(PresenceVisitor)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct KeypointRecord(f64, f64, f64, Presence);

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    bbox: [f64; 4],
    score: f64,
    keypoints: Vec<KeypointRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    track_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head_box: Option<[f64; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    frame_index: u64,
    labeled: bool,
    detections: Vec<DetectionRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceRecord {
    video_id: String,
    image_size: [u32; 2],
    joint_names: Vec<String>,
    frames: Vec<FrameRecord>,
}

impl From<&VideoSequence> for SequenceRecord {
    fn from(seq: &VideoSequence) -> Self {
        SequenceRecord {
            video_id: seq.video_id.clone(),
            image_size: [seq.image_width, seq.image_height],
            joint_names: seq.joint_names.clone(),
            frames: seq
                .frames
                .iter()
                .map(|f| FrameRecord {
                    frame_index: f.frame_index,
                    labeled: f.labeled,
                    detections: f
                        .detections
                        .iter()
                        .map(|d| DetectionRecord {
                            bbox: d.bbox.to_array(),
                            score: d.score,
                            keypoints: d
                                .pose
                                .joints
                                .iter()
                                .map(|k| KeypointRecord(k.x, k.y, k.score, Presence(k.present)))
                                .collect(),
                            feature: d.feature.clone(),
                            track_id: d.track_id,
                            head_box: d.head_box.map(|b| b.to_array()),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl SequenceRecord {
    fn into_sequence(self) -> Result<VideoSequence> {
        let mut frames = Vec::with_capacity(self.frames.len());
        for f in self.frames {
            let mut detections = Vec::with_capacity(f.detections.len());
            for d in f.detections {
                let head_box = d.head_box.map(BBox::from_array).transpose()?;
                detections.push(Detection {
                    bbox: BBox::from_array(d.bbox)?,
                    score: d.score.clamp(0.0, 1.0),
                    pose: Pose::new(
                        d.keypoints
                            .into_iter()
                            .map(|KeypointRecord(x, y, score, p)| Keypoint { x, y, score, present: p.0 })
                            .collect(),
                    ),
                    feature: d.feature,
                    track_id: d.track_id,
                    head_box,
                });
            }
            frames.push(Frame { frame_index: f.frame_index, labeled: f.labeled, detections });
        }
        Ok(VideoSequence {
            video_id: self.video_id,
            image_width: self.image_size[0],
            image_height: self.image_size[1],
            joint_names: self.joint_names,
            frames,
        })
    }
}

fn check_permutation(map: &[usize], j: usize) -> Result<()> {
    if map.len() != j {
        return Err(Error::JointCount { expected: j, found: map.len() });
    }
    let mut seen = vec![false; j];
    for &m in map {
        if m >= j || seen[m] {
            return Err(Error::InvalidArgument(format!("joint map {map:?} is not a permutation of 0..{j}")));
        }
        seen[m] = true;
    }
    Ok(())
}

/// Reorder the joints of every pose (and the joint names) so that output
/// joint `i` is input joint `joint_map[i]`.
pub fn permute_joints(seq: &VideoSequence, joint_map: &[usize]) -> Result<VideoSequence> {
    check_permutation(joint_map, seq.joint_count())?;
    let mut out = seq.clone();
    out.joint_names = joint_map.iter().map(|&s| seq.joint_names[s].clone()).collect();
    for frame in &mut out.frames {
        for det in &mut frame.detections {
            if det.pose.len() != joint_map.len() {
                return Err(Error::JointCount { expected: joint_map.len(), found: det.pose.len() });
            }
            det.pose = det.pose.permuted(joint_map);
        }
    }
    Ok(out)
}

/// Parse a sequence from JSON text.
pub fn parse_sequence(text: &str, role: Role, joint_map: Option<&[usize]>) -> Result<VideoSequence> {
    let record: SequenceRecord = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    finish_load(record, role, joint_map)
}

fn finish_load(record: SequenceRecord, role: Role, joint_map: Option<&[usize]>) -> Result<VideoSequence> {
    let mut seq = record.into_sequence()?;
    seq.validate(role)?;
    if let Some(map) = joint_map {
        seq = permute_joints(&seq, map)?;
    }
    Ok(seq)
}

pub fn load_sequence(path: impl AsRef<Path>, role: Role, joint_map: Option<&[usize]>) -> Result<VideoSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record: SequenceRecord = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    finish_load(record, role, joint_map)
}

pub fn sequence_to_json(seq: &VideoSequence) -> String {
    serde_json::to_string(&SequenceRecord::from(seq)).expect("sequence serialization is infallible")
}

/// Write `bytes` to `path` through a temp file in the same directory and an
/// atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save_sequence(seq: &VideoSequence, path: impl AsRef<Path>) -> Result<()> {
    seq.validate(Role::Prediction)?;
    let mut text = sequence_to_json(seq);
    text.push('\n');
    write_atomic(path.as_ref(), text.as_bytes())
}
