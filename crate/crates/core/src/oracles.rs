//! Upper-bound transforms: ground-truth identities and/or ground-truth
//! keypoints injected into tracked predictions.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linker::hungarian_assign;
use crate::metrics::match_poses_frame;
use crate::model::{Keypoint, Pose, VideoSequence};
use crate::similarity::{iou, CostMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    PerfectAssociation,
    PerfectKeypoints,
    /// Keypoint replacement first, then association. In this order the
    /// association step sees the replaced poses, so it can only remove
    /// identity errors and the result never scores below keypoints alone.
    Both,
    /// Association first, then keypoint replacement. Detections that gain a
    /// ground-truth pose only in the second step keep their own identity.
    BothAssociationFirst,
}

/// Copy ground-truth track ids onto predictions matched by PCKh pose
/// matching in labeled frames.
///
/// Every other prediction keeps its own identity, remapped densely above the
/// ground-truth id range: the distinct ids of unmatched predictions, in
/// ascending order, become `max_gt_id + 1, max_gt_id + 2, ...`. The remap
/// makes the transform idempotent.
pub fn perfect_association(gt: &VideoSequence, pred: &VideoSequence, alpha: f64) -> Result<VideoSequence> {
    let by_index: HashMap<u64, usize> = pred.frames.iter().enumerate().map(|(i, f)| (f.frame_index, i)).collect();
    // (frame position, detection) -> ground-truth id
    let mut matched: HashMap<(usize, usize), u64> = HashMap::new();
    for gf in gt.frames.iter().filter(|f| f.labeled) {
        let Some(&pos) = by_index.get(&gf.frame_index) else {
            continue;
        };
        let m = match_poses_frame(&gf.detections, &pred.frames[pos].detections, alpha)?;
        for (g, p) in m.pairs {
            if let Some(id) = gf.detections[g].track_id {
                matched.insert((pos, p), id);
            }
        }
    }

    let offset = gt.track_ids().last().map_or(0, |m| m + 1);
    let mut leftover = BTreeSet::new();
    for (pos, f) in pred.frames.iter().enumerate() {
        for (i, d) in f.detections.iter().enumerate() {
            if !matched.contains_key(&(pos, i)) {
                if let Some(id) = d.track_id {
                    leftover.insert(id);
                }
            }
        }
    }
    let remap: HashMap<u64, u64> =
        leftover.into_iter().enumerate().map(|(rank, id)| (id, offset + rank as u64)).collect();

    let mut out = pred.clone();
    for (pos, f) in out.frames.iter_mut().enumerate() {
        for (i, d) in f.detections.iter_mut().enumerate() {
            d.track_id = match matched.get(&(pos, i)) {
                Some(&id) => Some(id),
                None => d.track_id.map(|id| remap[&id]),
            };
        }
    }
    Ok(out)
}

/// Replace the poses of predictions matched to ground truth by box IoU
/// (Hungarian, links need IoU > 0) with the ground-truth poses. Present
/// ground-truth joints get score 1; absent ones stay absent.
pub fn perfect_keypoints(gt: &VideoSequence, pred: &VideoSequence) -> Result<VideoSequence> {
    let by_index: HashMap<u64, usize> = pred.frames.iter().enumerate().map(|(i, f)| (f.frame_index, i)).collect();
    let mut out = pred.clone();
    for gf in gt.frames.iter().filter(|f| f.labeled) {
        let Some(&pos) = by_index.get(&gf.frame_index) else {
            continue;
        };
        let preds = &mut out.frames[pos].detections;
        let (n, m) = (gf.detections.len(), preds.len());
        let mut sim = Vec::with_capacity(n * m);
        for g in &gf.detections {
            for p in preds.iter() {
                sim.push(iou(&g.bbox, &p.bbox));
            }
        }
        let cost = CostMatrix::from_similarity(n, m, sim);
        for (g, p) in hungarian_assign(&cost).pairs {
            if cost.similarity_at(g, p) > 0.0 {
                preds[p].pose = Pose::new(
                    gf.detections[g]
                        .pose
                        .joints
                        .iter()
                        .map(|k| if k.present { Keypoint::new(k.x, k.y, 1.0) } else { Keypoint::absent() })
                        .collect(),
                );
            }
        }
    }
    Ok(out)
}

pub fn apply_oracle(mode: OracleMode, gt: &VideoSequence, pred: &VideoSequence, alpha: f64) -> Result<VideoSequence> {
    match mode {
        OracleMode::PerfectAssociation => perfect_association(gt, pred, alpha),
        OracleMode::PerfectKeypoints => perfect_keypoints(gt, pred),
        OracleMode::Both => perfect_association(gt, &perfect_keypoints(gt, pred)?, alpha),
        OracleMode::BothAssociationFirst => perfect_keypoints(gt, &perfect_association(gt, pred, alpha)?),
    }
}
