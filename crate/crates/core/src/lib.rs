//! Multi-person keypoint tracking downstream of a pose detector.
//!
//! Per-frame person detections (box, score, pose) are linked into
//! identity-consistent tracks by bipartite matching over pluggable
//! similarity criteria, then scored against ground truth with PCKh-based
//! keypoint mAP and per-joint CLEAR-MOT metrics. The crate also carries the
//! geometric kernels of a clip-level detector (tube anchors, delta
//! regression, spatiotemporal RoIAlign, heatmap decoding, weight inflation),
//! upper-bound oracles, and a seeded synthetic scene generator.
//!
//! Data-parallel loops go through [`exec::Execution`]; with the `parallel`
//! feature disabled every path runs sequentially.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod linker;
pub mod metrics;
pub mod model;
pub mod oracles;
pub mod similarity;
pub mod synth;
pub mod tube;

pub use error::{Error, Result};
pub use exec::Execution;
pub use linker::{track_video, Algorithm, Assignment, LinkerConfig};
pub use metrics::{evaluate, EvalReport};
pub use model::{BBox, Detection, Frame, Keypoint, Pose, Role, VideoSequence};
pub use similarity::{CostMatrix, CriterionKind, SimilarityCriterion};
