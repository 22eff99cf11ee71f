//! PCKh keypoint correctness, keypoint mAP and per-joint CLEAR-MOT scores.
//!
//! Only ground-truth frames with `labeled = true` are scored. Prediction
//! frames are paired with ground-truth frames by `frame_index`.
//!
//! Per joint `j`, over matched (ground truth, prediction) pose pairs:
//! a PCKh-correct joint is a true positive; a present but incorrect
//! predicted joint is a false positive, and the ground-truth joint it failed
//! to hit a false negative. Unmatched predictions and unmatched ground truth
//! contribute one FP / FN per present joint. An identity switch is recorded
//! when a ground-truth track's true-positive joint carries a different
//! predicted track id than at its previous true positive.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linker::hungarian_assign;
use crate::model::{BBox, Detection, Frame, Keypoint, VideoSequence};
use crate::similarity::CostMatrix;

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Head size is this fraction of the head-box diagonal.
pub const HEAD_SIZE_FACTOR: f64 = 0.6;

/// PCKh normalizer of an annotated head box.
pub fn head_size(head_box: &BBox) -> Result<f64> {
    let d = head_box.diagonal();
    if !(d > 0.0) {
        return Err(Error::DegenerateHeadBox);
    }
    Ok(HEAD_SIZE_FACTOR * d)
}

/// True iff both joints are present and `‖gt − pred‖ ≤ alpha·head`.
pub fn pckh_correct(gt: &Keypoint, pred: &Keypoint, head: f64, alpha: f64) -> bool {
    gt.present && pred.present && gt.distance(pred) <= alpha * head
}

/// One-to-one pairing of ground-truth and predicted persons in one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseMatchResult {
    /// (ground-truth index, prediction index), sorted by ground truth.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

fn gt_head_size(d: &Detection) -> Result<f64> {
    let hb = d.head_box.as_ref().ok_or(Error::MissingGroundTruthField { frame: 0, detection: 0, field: "head_box" })?;
    head_size(hb)
}

/// `counts[g * pred.len() + p]` = number of PCKh-correct joints.
fn correct_counts(gt: &[Detection], heads: &[f64], pred: &[Detection], alpha: f64) -> Vec<usize> {
    let mut counts = Vec::with_capacity(gt.len() * pred.len());
    for (g, head) in gt.iter().zip(heads) {
        for p in pred {
            let c = g.pose.joints.iter().zip(&p.pose.joints).filter(|(a, b)| pckh_correct(a, b, *head, alpha)).count();
            counts.push(c);
        }
    }
    counts
}

fn match_with_counts(n_gt: usize, n_pred: usize, counts: &[usize]) -> PoseMatchResult {
    let cost = CostMatrix::from_costs(n_gt, n_pred, counts.iter().map(|&c| -(c as f64)).collect());
    let assignment = hungarian_assign(&cost);
    let pairs: Vec<(usize, usize)> =
        assignment.pairs.into_iter().filter(|&(g, p)| counts[g * n_pred + p] > 0).collect();
    let mut gt_used = vec![false; n_gt];
    let mut pred_used = vec![false; n_pred];
    for &(g, p) in &pairs {
        gt_used[g] = true;
        pred_used[p] = true;
    }
    PoseMatchResult {
        pairs,
        unmatched_gt: (0..n_gt).filter(|&g| !gt_used[g]).collect(),
        unmatched_pred: (0..n_pred).filter(|&p| !pred_used[p]).collect(),
    }
}

/// Pair poses so the total number of PCKh-correct joints is maximal; pairs
/// with no correct joint are dropped.
pub fn match_poses_frame(gt: &[Detection], pred: &[Detection], alpha: f64) -> Result<PoseMatchResult> {
    let heads = gt.iter().map(gt_head_size).collect::<Result<Vec<_>>>()?;
    let counts = correct_counts(gt, &heads, pred, alpha);
    Ok(match_with_counts(gt.len(), pred.len(), &counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JointCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub idsw: u64,
    pub gt: u64,
}

impl JointCounts {
    fn add(&mut self, o: &JointCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.idsw += o.idsw;
        self.gt += o.gt;
    }

    /// `100·(1 − (FN + FP + IDSW)/GT)`, undefined without ground truth.
    pub fn mota(&self) -> Option<f64> {
        (self.gt > 0).then(|| 100.0 * (1.0 - (self.fn_ + self.fp + self.idsw) as f64 / self.gt as f64))
    }

    pub fn precision(&self) -> f64 {
        percent(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        percent(self.tp, self.tp + self.fn_)
    }
}

fn percent(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// CLEAR-MOT results over a set of videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotSummary {
    pub counts: Vec<JointCounts>,
    pub mota: Vec<Option<f64>>,
    /// From counts summed over joints.
    pub mota_total: Option<f64>,
    /// `100 × mean over TP joints of (1 − d/(alpha·head))`.
    pub motp: f64,
    pub precision: f64,
    pub recall: f64,
}

impl MotSummary {
    pub fn totals(&self) -> JointCounts {
        let mut t = JointCounts::default();
        for c in &self.counts {
            t.add(c);
        }
        t
    }
}

/// Per-joint AP and its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    /// Percent; `None` for joints with no ground truth.
    pub ap: Vec<Option<f64>>,
    pub map_total: Option<f64>,
}

struct FrameMot {
    counts: Vec<JointCounts>,
    motp_sum: f64,
    /// (gt track, joint, predicted track) for every true positive.
    tp_events: Vec<(u64, usize, u64)>,
}

fn check_pair(gt: &VideoSequence, pred: &VideoSequence) -> Result<()> {
    if gt.video_id != pred.video_id {
        return Err(Error::VideoMismatch { gt: gt.video_id.clone(), pred: pred.video_id.clone() });
    }
    if gt.joint_count() != pred.joint_count() {
        return Err(Error::JointCount { expected: gt.joint_count(), found: pred.joint_count() });
    }
    Ok(())
}

/// Labeled ground-truth frames paired with the prediction frame of the same
/// index (if any).
fn labeled_pairs<'a>(gt: &'a VideoSequence, pred: &'a VideoSequence) -> Vec<(&'a Frame, Option<&'a Frame>)> {
    let by_index: HashMap<u64, &Frame> = pred.frames.iter().map(|f| (f.frame_index, f)).collect();
    gt.frames.iter().filter(|f| f.labeled).map(|f| (f, by_index.get(&f.frame_index).copied())).collect()
}

fn frame_heads(frame: &Frame) -> Result<Vec<f64>> {
    frame
        .detections
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let hb = d.head_box.as_ref().ok_or(Error::MissingGroundTruthField {
                frame: frame.frame_index,
                detection: i,
                field: "head_box",
            })?;
            head_size(hb)
        })
        .collect()
}

fn score_frame_mot(gt: &Frame, pred: Option<&Frame>, j: usize, alpha: f64) -> Result<FrameMot> {
    let empty: Vec<Detection> = Vec::new();
    let preds = pred.map_or(&empty, |f| &f.detections);
    let heads = frame_heads(gt)?;
    let counts = correct_counts(&gt.detections, &heads, preds, alpha);
    let m = match_with_counts(gt.detections.len(), preds.len(), &counts);

    let mut out = FrameMot { counts: vec![JointCounts::default(); j], motp_sum: 0.0, tp_events: Vec::new() };
    for g in &gt.detections {
        for (k, kp) in g.pose.joints.iter().enumerate() {
            if kp.present {
                out.counts[k].gt += 1;
            }
        }
    }
    for &(gi, pi) in &m.pairs {
        let (g, p) = (&gt.detections[gi], &preds[pi]);
        let gt_track = g.track_id.ok_or(Error::MissingGroundTruthField {
            frame: gt.frame_index,
            detection: gi,
            field: "track_id",
        })?;
        let pred_track = p.track_id.expect("checked before scoring");
        for (k, (a, b)) in g.pose.joints.iter().zip(&p.pose.joints).enumerate() {
            let c = &mut out.counts[k];
            if pckh_correct(a, b, heads[gi], alpha) {
                c.tp += 1;
                out.motp_sum += 1.0 - a.distance(b) / (alpha * heads[gi]);
                out.tp_events.push((gt_track, k, pred_track));
            } else {
                if b.present {
                    c.fp += 1;
                }
                if a.present {
                    c.fn_ += 1;
                }
            }
        }
    }
    for &pi in &m.unmatched_pred {
        for (k, b) in preds[pi].pose.joints.iter().enumerate() {
            if b.present {
                out.counts[k].fp += 1;
            }
        }
    }
    for &gi in &m.unmatched_gt {
        for (k, a) in gt.detections[gi].pose.joints.iter().enumerate() {
            if a.present {
                out.counts[k].fn_ += 1;
            }
        }
    }
    Ok(out)
}

fn require_track_ids(pred: &VideoSequence) -> Result<()> {
    for f in &pred.frames {
        for (i, d) in f.detections.iter().enumerate() {
            if d.track_id.is_none() {
                return Err(Error::MissingTrackId { frame: f.frame_index, detection: i });
            }
        }
    }
    Ok(())
}

fn joint_count_of(pairs: &[(&VideoSequence, &VideoSequence)]) -> Result<usize> {
    let j = pairs.first().map_or(0, |(g, _)| g.joint_count());
    for (g, p) in pairs {
        check_pair(g, p)?;
        if g.joint_count() != j {
            return Err(Error::JointCount { expected: j, found: g.joint_count() });
        }
    }
    Ok(j)
}

/// CLEAR-MOT over a set of (ground truth, tracked prediction) videos.
pub fn evaluate_mot_set(pairs: &[(&VideoSequence, &VideoSequence)], alpha: f64, exec: Execution) -> Result<MotSummary> {
    let j = joint_count_of(pairs)?;
    for (_, p) in pairs {
        require_track_ids(p)?;
    }
    let mut counts = vec![JointCounts::default(); j];
    let mut motp_sum = 0.0;
    for (gt, pred) in pairs {
        let frames = labeled_pairs(gt, pred);
        let scored = exec.try_map(&frames, |(g, p)| score_frame_mot(g, *p, j, alpha))?;
        // identity switches need frame order
        let mut last: HashMap<(u64, usize), u64> = HashMap::new();
        for fm in scored {
            for (k, c) in fm.counts.iter().enumerate() {
                counts[k].add(c);
            }
            motp_sum += fm.motp_sum;
            for (gt_track, k, pred_track) in fm.tp_events {
                if let Some(prev) = last.insert((gt_track, k), pred_track) {
                    if prev != pred_track {
                        counts[k].idsw += 1;
                    }
                }
            }
        }
    }
    let mut total = JointCounts::default();
    for c in &counts {
        total.add(c);
    }
    Ok(MotSummary {
        mota: counts.iter().map(JointCounts::mota).collect(),
        mota_total: total.mota(),
        motp: if total.tp == 0 { 0.0 } else { 100.0 * motp_sum / total.tp as f64 },
        precision: total.precision(),
        recall: total.recall(),
        counts,
    })
}

pub fn evaluate_mot(gt: &VideoSequence, pred: &VideoSequence, alpha: f64) -> Result<MotSummary> {
    evaluate_mot_set(&[(gt, pred)], alpha, Execution::default())
}

/// Area under the precision/recall curve of scored detections against
/// `n_positive` ground-truth items, with the precision envelope taken as the
/// running maximum from the right. Returns a fraction in `[0, 1]`.
pub fn average_precision(records: &[(f64, bool)], n_positive: u64) -> Option<f64> {
    if n_positive == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].0.total_cmp(&records[a].0).then(a.cmp(&b)));
    let mut precision = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0u64, 0u64);
    for &i in &order {
        if records[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    // one division at the end keeps a perfect curve at exactly 1
    let area: f64 = order.iter().zip(&precision).filter(|(&i, _)| records[i].1).map(|(_, p)| p).sum();
    Some(area / n_positive as f64)
}

struct FrameAp {
    /// Per joint: (detection score, true positive).
    records: Vec<Vec<(f64, bool)>>,
    gt: Vec<u64>,
}

fn score_frame_ap(gt: &Frame, pred: Option<&Frame>, j: usize, alpha: f64) -> Result<FrameAp> {
    let empty: Vec<Detection> = Vec::new();
    let preds = pred.map_or(&empty, |f| &f.detections);
    let heads = frame_heads(gt)?;
    let counts = correct_counts(&gt.detections, &heads, preds, alpha);
    let n_pred = preds.len();

    let mut out = FrameAp { records: vec![Vec::new(); j], gt: vec![0; j] };
    let gt_present: Vec<usize> = gt.detections.iter().map(|g| g.pose.present_count()).collect();
    for g in &gt.detections {
        for (k, kp) in g.pose.joints.iter().enumerate() {
            if kp.present {
                out.gt[k] += 1;
            }
        }
    }

    let mut order: Vec<usize> = (0..n_pred).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    let mut claimed = vec![false; gt.detections.len()];
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for g in 0..gt.detections.len() {
            if claimed[g] || gt_present[g] == 0 {
                continue;
            }
            let overlap = counts[g * n_pred + p] as f64 / gt_present[g] as f64;
            if overlap > 0.0 && best.is_none_or(|(_, o)| overlap > o) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, _)) = best {
            claimed[g] = true;
        }
        for (k, b) in preds[p].pose.joints.iter().enumerate() {
            if !b.present {
                continue;
            }
            let tp = best.is_some_and(|(g, _)| pckh_correct(&gt.detections[g].pose.joints[k], b, heads[g], alpha));
            out.records[k].push((preds[p].score, tp));
        }
    }
    Ok(out)
}

/// Keypoint AP per joint over a set of videos.
pub fn evaluate_map_set(pairs: &[(&VideoSequence, &VideoSequence)], alpha: f64, exec: Execution) -> Result<ApSummary> {
    let j = joint_count_of(pairs)?;
    let mut records: Vec<Vec<(f64, bool)>> = vec![Vec::new(); j];
    let mut gt = vec![0u64; j];
    for (g, p) in pairs {
        let frames = labeled_pairs(g, p);
        let scored = exec.try_map(&frames, |(gf, pf)| score_frame_ap(gf, *pf, j, alpha))?;
        for fa in scored {
            for k in 0..j {
                records[k].extend_from_slice(&fa.records[k]);
                gt[k] += fa.gt[k];
            }
        }
    }
    let ap: Vec<Option<f64>> = (0..j).map(|k| average_precision(&records[k], gt[k]).map(|a| 100.0 * a)).collect();
    Ok(ApSummary { map_total: mean_defined(&ap), ap })
}

pub fn evaluate_map(gt: &VideoSequence, pred: &VideoSequence, alpha: f64) -> Result<ApSummary> {
    evaluate_map_set(&[(gt, pred)], alpha, Execution::default())
}

fn mean_defined(xs: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = xs.iter().flatten().copied().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Body-part groups used for tabulation, with the joints each one averages.
pub const BODY_PARTS: [(&str, &[&str]); 7] = [
    ("Head", &["head", "nose", "neck", "eye", "ear"]),
    ("Shou", &["shoulder"]),
    ("Elb", &["elbow"]),
    ("Wri", &["wrist"]),
    ("Hip", &["hip"]),
    ("Knee", &["knee"]),
    ("Ankl", &["ankle"]),
];

/// Joint indices belonging to each body part, matched by name.
pub fn body_part_groups(joint_names: &[String]) -> Vec<(&'static str, Vec<usize>)> {
    BODY_PARTS
        .iter()
        .map(|(part, keys)| {
            let members = joint_names
                .iter()
                .enumerate()
                .filter(|(_, n)| {
                    let n = n.to_lowercase();
                    keys.iter().any(|k| n.contains(k))
                })
                .map(|(i, _)| i)
                .collect();
            (*part, members)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub video_ids: Vec<String>,
    pub alpha: f64,
    pub joint_names: Vec<String>,
    pub ap: Vec<Option<f64>>,
    pub map_total: Option<f64>,
    pub mota: Vec<Option<f64>>,
    pub mota_total: Option<f64>,
    pub motp: f64,
    pub precision: f64,
    pub recall: f64,
    pub counts: Vec<JointCounts>,
    pub totals: JointCounts,
}

impl EvalReport {
    /// Column names in table order: mAP per body part and total, MOTA per
    /// body part and total, then MOTP, precision, recall.
    pub fn table_header() -> Vec<String> {
        let mut h = Vec::new();
        for metric in ["mAP", "MOTA"] {
            for (part, _) in BODY_PARTS {
                h.push(format!("{metric} {part}"));
            }
            h.push(format!("{metric} Total"));
        }
        h.extend(["MOTP Total", "Prec Total", "Rec Total"].map(String::from));
        h
    }

    /// Values matching [`EvalReport::table_header`]. A body part's value is
    /// the mean of its joints' values.
    pub fn table_row(&self) -> Vec<Option<f64>> {
        let groups = body_part_groups(&self.joint_names);
        let part_means = |vals: &[Option<f64>]| -> Vec<Option<f64>> {
            groups.iter().map(|(_, idx)| mean_defined(&idx.iter().map(|&i| vals[i]).collect::<Vec<_>>())).collect()
        };
        let mut row = part_means(&self.ap);
        row.push(self.map_total);
        row.extend(part_means(&self.mota));
        row.push(self.mota_total);
        row.extend([Some(self.motp), Some(self.precision), Some(self.recall)]);
        row
    }

    pub fn summary_line(&self) -> String {
        let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.1}"));
        format!(
            "mAP {} | MOTA {} | MOTP {:.1} | Prec {:.1} | Rec {:.1}",
            f(self.map_total),
            f(self.mota_total),
            self.motp,
            self.precision,
            self.recall
        )
    }
}

/// Full report (mAP and MOT) over a set of video pairs.
pub fn evaluate_set(pairs: &[(&VideoSequence, &VideoSequence)], alpha: f64, exec: Execution) -> Result<EvalReport> {
    let mot = evaluate_mot_set(pairs, alpha, exec)?;
    let ap = evaluate_map_set(pairs, alpha, exec)?;
    let totals = mot.totals();
    Ok(EvalReport {
        video_ids: pairs.iter().map(|(g, _)| g.video_id.clone()).collect(),
        alpha,
        joint_names: pairs.first().map_or_else(Vec::new, |(g, _)| g.joint_names.clone()),
        ap: ap.ap,
        map_total: ap.map_total,
        mota: mot.mota,
        mota_total: mot.mota_total,
        motp: mot.motp,
        precision: mot.precision,
        recall: mot.recall,
        counts: mot.counts,
        totals,
    })
}

pub fn evaluate(gt: &VideoSequence, pred: &VideoSequence, alpha: f64) -> Result<EvalReport> {
    evaluate_set(&[(gt, pred)], alpha, Execution::default())
}
