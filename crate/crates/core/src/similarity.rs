//! Pairwise similarity between detections and cost-matrix construction.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{BBox, Detection};

/// Matrices smaller than this are always filled sequentially; thread
/// dispatch costs more than the work.
const PARALLEL_MIN_ENTRIES: usize = 4096;

/// Intersection over union; 0 when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Fraction of jointly-present joints of `a` and `b` lying within
/// `alpha * norm_scale * diag(a.bbox)` of each other. Zero when the poses
/// share no present joint.
pub fn pose_pckh_similarity(a: &Detection, b: &Detection, alpha: f64, norm_scale: f64) -> f64 {
    let threshold = alpha * norm_scale * a.bbox.diagonal();
    let mut shared = 0usize;
    let mut close = 0usize;
    for (ka, kb) in a.pose.joints.iter().zip(&b.pose.joints) {
        if ka.present && kb.present {
            shared += 1;
            if ka.distance(kb) <= threshold {
                close += 1;
            }
        }
    }
    if shared == 0 {
        0.0
    } else {
        close as f64 / shared as f64
    }
}

/// Cosine of the angle between two feature vectors. A zero vector yields 0
/// with a warning.
pub fn feature_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::FeatureDimension { left: a.len(), right: b.len() });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine similarity with a zero feature vector; using 0");
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    BboxIou,
    PosePckh,
    FeatureCosine,
    /// Weighted mean of IoU, pose PCKh and rescaled cosine.
    Combined,
    /// Per-edge scores read from a file (e.g. a learned metric).
    External,
}

impl CriterionKind {
    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::BboxIou => "bbox_iou",
            CriterionKind::PosePckh => "pose_pckh",
            CriterionKind::FeatureCosine => "feature_cosine",
            CriterionKind::Combined => "combined",
            CriterionKind::External => "external",
        }
    }
}

/// Position of a detection inside a video, used to key external scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Slot {
    pub frame: u64,
    pub index: usize,
    /// True when `frame` immediately precedes the frame being matched.
    pub adjacent: bool,
}

/// Where the two sides of a cost matrix live in the video.
#[derive(Debug, Clone, Copy)]
pub struct EdgeContext<'a> {
    pub curr_frame: u64,
    pub prev_slots: &'a [Slot],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExternalRecord {
    frame: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prev_frame: Option<u64>,
    prev_index: usize,
    curr_index: usize,
    similarity: f64,
}

/// Precomputed edge similarities.
///
/// Entries are keyed by the current frame, the candidate's index in its own
/// frame and the current detection index. An entry may name `prev_frame`
/// explicitly; entries without it apply to candidates from the immediately
/// preceding frame. Missing edges score 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalScores {
    scores: HashMap<(u64, Option<u64>, usize, usize), f64>,
}

impl ExternalScores {
    pub fn insert(
        &mut self,
        frame: u64,
        prev_frame: Option<u64>,
        prev_index: usize,
        curr_index: usize,
        similarity: f64,
    ) {
        self.scores.insert((frame, prev_frame, prev_index, curr_index), similarity);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn lookup(&self, curr_frame: u64, prev: Slot, curr_index: usize) -> f64 {
        if let Some(&s) = self.scores.get(&(curr_frame, Some(prev.frame), prev.index, curr_index)) {
            return s;
        }
        if prev.adjacent {
            if let Some(&s) = self.scores.get(&(curr_frame, None, prev.index, curr_index)) {
                return s;
            }
        }
        0.0
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let records: Vec<ExternalRecord> = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let mut out = ExternalScores::default();
        for r in records {
            if !r.similarity.is_finite() {
                return Err(Error::NonFinite("external similarity"));
            }
            out.insert(r.frame, r.prev_frame, r.prev_index, r.curr_index, r.similarity);
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone)]
pub struct SimilarityCriterion {
    pub kind: CriterionKind,
    /// Mixing weights (iou, pckh, cosine) for [`CriterionKind::Combined`].
    pub weights: [f64; 3],
    pub pckh_alpha: f64,
    /// PCKh normalizer as a fraction of the earlier detection's box diagonal.
    pub pckh_norm_scale: f64,
    pub external: Option<Arc<ExternalScores>>,
}

impl Default for SimilarityCriterion {
    fn default() -> Self {
        SimilarityCriterion {
            kind: CriterionKind::BboxIou,
            weights: [1.0, 1.0, 1.0],
            pckh_alpha: 0.5,
            pckh_norm_scale: 0.1,
            external: None,
        }
    }
}

impl SimilarityCriterion {
    pub fn new(kind: CriterionKind) -> Self {
        SimilarityCriterion { kind, ..Default::default() }
    }

    pub fn combined(weights: [f64; 3]) -> Self {
        SimilarityCriterion { kind: CriterionKind::Combined, weights, ..Default::default() }
    }

    pub fn external(scores: ExternalScores) -> Self {
        SimilarityCriterion { kind: CriterionKind::External, external: Some(Arc::new(scores)), ..Default::default() }
    }

    fn needs_features(&self) -> bool {
        match self.kind {
            CriterionKind::FeatureCosine => true,
            CriterionKind::Combined => self.weights[2] > 0.0,
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == CriterionKind::Combined {
            if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "combined weights must be non-negative: {:?}",
                    self.weights
                )));
            }
            if self.weights.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidArgument("combined weights sum to zero".into()));
            }
        }
        if self.kind == CriterionKind::External && self.external.is_none() {
            return Err(Error::MissingExternalScores);
        }
        Ok(())
    }

    /// Similarity of one (earlier, later) pair. `edge` is only consulted by
    /// the external criterion.
    pub fn pair(&self, prev: &Detection, curr: &Detection, edge: Option<(u64, Slot, usize)>) -> Result<f64> {
        let cosine = || -> Result<f64> {
            match (&prev.feature, &curr.feature) {
                (Some(a), Some(b)) => feature_cosine(a, b),
                _ => Err(Error::MissingFeature {
                    frame: edge.map(|e| e.0).unwrap_or(0),
                    detection: edge.map(|e| e.2).unwrap_or(0),
                    criterion: self.kind.name(),
                }),
            }
        };
        Ok(match self.kind {
            CriterionKind::BboxIou => iou(&prev.bbox, &curr.bbox),
            CriterionKind::PosePckh => pose_pckh_similarity(prev, curr, self.pckh_alpha, self.pckh_norm_scale),
            CriterionKind::FeatureCosine => cosine()?,
            CriterionKind::Combined => {
                let [_, wp, wc] = self.weights;
                let pckh = if wp > 0.0 {
                    pose_pckh_similarity(prev, curr, self.pckh_alpha, self.pckh_norm_scale)
                } else {
                    0.0
                };
                let cos01 = if wc > 0.0 { (cosine()? + 1.0) / 2.0 } else { 0.0 };
                mix_similarities(self.weights, [iou(&prev.bbox, &curr.bbox), pckh, cos01])
            }
            CriterionKind::External => {
                let scores = self.external.as_ref().ok_or(Error::MissingExternalScores)?;
                let (frame, slot, ci) = edge.ok_or(Error::MissingEdgeContext)?;
                scores.lookup(frame, slot, ci)
            }
        })
    }
}

/// Weighted mean of (iou, pckh, cosine rescaled to [0, 1]).
pub fn mix_similarities(weights: [f64; 3], base: [f64; 3]) -> f64 {
    let total: f64 = weights.iter().sum();
    (weights[0] * base[0] + weights[1] * base[1] + weights[2] * base[2]) / total
}

/// Dense link costs between two detection sets; `cost = -similarity`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub similarity: Vec<f64>,
    pub cost: Vec<f64>,
}

impl CostMatrix {
    pub fn from_similarity(rows: usize, cols: usize, similarity: Vec<f64>) -> Self {
        assert_eq!(similarity.len(), rows * cols, "similarity shape");
        let cost = similarity.iter().map(|s| -s).collect();
        CostMatrix { rows, cols, similarity, cost }
    }

    /// Build directly from costs; similarity is the negation.
    pub fn from_costs(rows: usize, cols: usize, cost: Vec<f64>) -> Self {
        assert_eq!(cost.len(), rows * cols, "cost shape");
        let similarity = cost.iter().map(|c| -c).collect();
        CostMatrix { rows, cols, similarity, cost }
    }

    pub fn from_cost_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost rows");
        CostMatrix::from_costs(rows.len(), cols, rows.concat())
    }

    pub fn from_similarity_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged similarity rows");
        CostMatrix::from_similarity(rows.len(), cols, rows.concat())
    }

    pub fn cost_at(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.cols + j]
    }

    pub fn similarity_at(&self, i: usize, j: usize) -> f64 {
        self.similarity[i * self.cols + j]
    }

    pub fn transposed(&self) -> CostMatrix {
        let mut sim = Vec::with_capacity(self.similarity.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                sim.push(self.similarity_at(i, j));
            }
        }
        CostMatrix::from_similarity(self.cols, self.rows, sim)
    }
}

/// Cost matrix between two plain detection lists. The external criterion
/// needs positional context and is rejected here; use
/// [`build_cost_matrix_with`].
pub fn build_cost_matrix(
    prev: &[Detection],
    curr: &[Detection],
    criterion: &SimilarityCriterion,
) -> Result<CostMatrix> {
    let refs: Vec<&Detection> = prev.iter().collect();
    build_cost_matrix_with(&refs, curr, criterion, None, Execution::default())
}

/// Cost matrix between candidate detections (rows) and the current frame
/// (columns). Entries are independent, so large matrices are filled in
/// parallel under [`Execution::Parallel`].
pub fn build_cost_matrix_with(
    prev: &[&Detection],
    curr: &[Detection],
    criterion: &SimilarityCriterion,
    ctx: Option<&EdgeContext<'_>>,
    exec: Execution,
) -> Result<CostMatrix> {
    criterion.validate()?;
    if criterion.kind == CriterionKind::External {
        match ctx {
            None => return Err(Error::MissingEdgeContext),
            Some(c) if c.prev_slots.len() != prev.len() => {
                return Err(Error::LengthMismatch { expected: prev.len(), found: c.prev_slots.len() })
            }
            _ => {}
        }
    }
    if criterion.needs_features() {
        let frame = ctx.map_or(0, |c| c.curr_frame);
        for (i, d) in prev.iter().enumerate() {
            if d.feature.is_none() {
                return Err(Error::MissingFeature {
                    frame: ctx.map_or(frame, |c| c.prev_slots.get(i).map_or(frame, |s| s.frame)),
                    detection: ctx.and_then(|c| c.prev_slots.get(i)).map_or(i, |s| s.index),
                    criterion: criterion.kind.name(),
                });
            }
        }
        for (j, d) in curr.iter().enumerate() {
            if d.feature.is_none() {
                return Err(Error::MissingFeature { frame, detection: j, criterion: criterion.kind.name() });
            }
        }
    }

    let (rows, cols) = (prev.len(), curr.len());
    let entry = |k: usize| -> Result<f64> {
        let (i, j) = (k / cols, k % cols);
        let edge = ctx.map(|c| (c.curr_frame, c.prev_slots[i], j));
        let s = criterion.pair(prev[i], &curr[j], edge)?;
        if !s.is_finite() {
            return Err(Error::NonFinite("similarity"));
        }
        Ok(s)
    };
    let exec = if rows * cols >= PARALLEL_MIN_ENTRIES { exec } else { Execution::Sequential };
    let similarity: Vec<f64> = exec.map_range(rows * cols, entry).into_iter().collect::<Result<_>>()?;
    Ok(CostMatrix::from_similarity(rows, cols, similarity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Keypoint, Pose};
    use proptest::prelude::*;

    fn det(b: BBox, pts: &[(f64, f64)]) -> Detection {
        Detection::new(b, 1.0, Pose::new(pts.iter().map(|&(x, y)| Keypoint::new(x, y, 1.0)).collect()))
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        let b = BBox::new(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        let p = BBox::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&p, &p), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &BBox::new(2.0, 0.0, 4.0, 2.0)), 0.0);
    }

    #[test]
    fn pckh_similarity_examples() {
        let b = BBox::new(0.0, 0.0, 30.0, 40.0); // diagonal 50 -> threshold 0.5*0.1*50 = 2.5
        let pts: Vec<(f64, f64)> = (0..15).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let a = det(b, &pts);
        assert_eq!(pose_pckh_similarity(&a, &a, 0.5, 0.1), 1.0);

        let far: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x + 25.0, y)).collect();
        assert_eq!(pose_pckh_similarity(&a, &det(b, &far), 0.5, 0.1), 0.0);

        let mixed: Vec<(f64, f64)> =
            pts.iter().enumerate().map(|(i, &(x, y))| if i < 9 { (x + 2.0, y) } else { (x + 3.0, y) }).collect();
        assert!((pose_pckh_similarity(&a, &det(b, &mixed), 0.5, 0.1) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn pckh_similarity_without_shared_joints_is_zero() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let mut a = det(b, &[(1.0, 1.0), (2.0, 2.0)]);
        let mut c = det(b, &[(1.0, 1.0), (2.0, 2.0)]);
        a.pose.joints[0].present = false;
        c.pose.joints[1].present = false;
        assert_eq!(pose_pckh_similarity(&a, &c, 0.5, 0.1), 0.0);
    }

    #[test]
    fn cosine_examples() {
        let v = [1.0, 2.0, -3.0];
        assert!((feature_cosine(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(feature_cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((feature_cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(feature_cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(feature_cosine(&[1.0], &[1.0, 2.0]), Err(Error::FeatureDimension { left: 1, right: 2 })));
    }

    fn sample_dets() -> (Vec<Detection>, Vec<Detection>) {
        let mk = |x: f64, f: Vec<f64>| {
            det(BBox::new(x, 0.0, x + 10.0, 20.0), &[(x + 1.0, 2.0), (x + 5.0, 15.0)]).with_feature(f)
        };
        (
            vec![mk(0.0, vec![1.0, 0.0]), mk(30.0, vec![0.0, 1.0])],
            vec![mk(1.0, vec![1.0, 0.1]), mk(29.0, vec![0.1, 1.0]), mk(4.0, vec![-1.0, 0.0])],
        )
    }

    #[test]
    fn identity_matrix_example() {
        let d = det(BBox::new(0.0, 0.0, 4.0, 4.0), &[(1.0, 1.0)]);
        let m = build_cost_matrix(std::slice::from_ref(&d), std::slice::from_ref(&d), &SimilarityCriterion::default())
            .unwrap();
        assert_eq!(m.similarity, vec![1.0]);
        assert_eq!(m.cost, vec![-1.0]);
    }

    #[test]
    fn entries_match_pairwise_ops() {
        let (prev, curr) = sample_dets();
        for kind in
            [CriterionKind::BboxIou, CriterionKind::PosePckh, CriterionKind::FeatureCosine, CriterionKind::Combined]
        {
            let crit = SimilarityCriterion::new(kind);
            let m = build_cost_matrix(&prev, &curr, &crit).unwrap();
            assert_eq!((m.rows, m.cols), (2, 3));
            for (i, a) in prev.iter().enumerate() {
                for (j, b) in curr.iter().enumerate() {
                    let i_ = iou(&a.bbox, &b.bbox);
                    let p_ = pose_pckh_similarity(a, b, 0.5, 0.1);
                    let c_ = feature_cosine(a.feature.as_ref().unwrap(), b.feature.as_ref().unwrap()).unwrap();
                    let expect = match kind {
                        CriterionKind::BboxIou => i_,
                        CriterionKind::PosePckh => p_,
                        CriterionKind::FeatureCosine => c_,
                        _ => (i_ + p_ + (c_ + 1.0) / 2.0) / 3.0,
                    };
                    assert!((m.similarity_at(i, j) - expect).abs() < 1e-12);
                    assert_eq!(m.cost_at(i, j), -m.similarity_at(i, j));
                }
            }
        }
    }

    #[test]
    fn combined_with_iou_only_weights_equals_iou() {
        let (prev, mut curr) = sample_dets();
        curr[0].feature = None;
        let iou_m = build_cost_matrix(&prev, &curr, &SimilarityCriterion::default()).unwrap();
        let comb = build_cost_matrix(&prev, &curr, &SimilarityCriterion::combined([1.0, 0.0, 0.0])).unwrap();
        assert_eq!(iou_m, comb);
    }

    #[test]
    fn missing_features_reported() {
        let (prev, mut curr) = sample_dets();
        curr[2].feature = None;
        let err = build_cost_matrix(&prev, &curr, &SimilarityCriterion::new(CriterionKind::FeatureCosine)).unwrap_err();
        assert!(matches!(err, Error::MissingFeature { detection: 2, .. }));
        assert!(err.to_string().contains("feature"));
        assert!(build_cost_matrix(&prev, &curr, &SimilarityCriterion::combined([1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn external_scores() {
        let (prev, curr) = sample_dets();
        let crit = SimilarityCriterion::new(CriterionKind::External);
        assert!(matches!(build_cost_matrix(&prev, &curr, &crit), Err(Error::MissingExternalScores)));
        let scores = ExternalScores::from_json(
            r#"[{"frame":5,"prev_index":1,"curr_index":2,"similarity":0.75},
                {"frame":5,"prev_frame":1,"prev_index":0,"curr_index":0,"similarity":0.5}]"#,
        )
        .unwrap();
        let crit = SimilarityCriterion::external(scores);
        assert!(matches!(build_cost_matrix(&prev, &curr, &crit), Err(Error::MissingEdgeContext)));
        let slots = [Slot { frame: 1, index: 0, adjacent: false }, Slot { frame: 4, index: 1, adjacent: true }];
        let refs: Vec<&Detection> = prev.iter().collect();
        let ctx = EdgeContext { curr_frame: 5, prev_slots: &slots };
        let m = build_cost_matrix_with(&refs, &curr, &crit, Some(&ctx), Execution::Sequential).unwrap();
        assert_eq!(m.similarity, vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.75]);
    }

    #[test]
    fn empty_inputs() {
        let (prev, _) = sample_dets();
        let m = build_cost_matrix(&prev, &[], &SimilarityCriterion::default()).unwrap();
        assert_eq!((m.rows, m.cols), (2, 0));
        assert!(m.cost.is_empty());
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let dets: Vec<Detection> = (0..80)
            .map(|i| {
                let x = (i * 7 % 50) as f64;
                det(BBox::new(x, 0.0, x + 12.0, 30.0), &[(x + 2.0, 3.0)]).with_feature(vec![x, 1.0])
            })
            .collect();
        let refs: Vec<&Detection> = dets.iter().collect();
        let crit = SimilarityCriterion::combined([1.0, 2.0, 0.5]);
        let a = build_cost_matrix_with(&refs, &dets, &crit, None, Execution::Sequential).unwrap();
        let b = build_cost_matrix_with(&refs, &dets, &crit, None, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-100.0f64..100.0, -100.0f64..100.0, 0.0f64..50.0, 0.0f64..50.0)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_invariant(a in arb_box(), b in arb_box(), dx in -50.0f64..50.0, s in 0.1f64..10.0) {
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert!((iou(&a.translated(dx, -dx), &b.translated(dx, -dx)) - v).abs() < 1e-9);
            prop_assert!((iou(&a.scaled(s), &b.scaled(s)) - v).abs() < 1e-9);
        }

        #[test]
        fn iou_one_only_for_identical(a in arb_box(), b in arb_box()) {
            if iou(&a, &b) == 1.0 {
                prop_assert!(a.area() > 0.0);
                prop_assert!((a.x_min - b.x_min).abs() < 1e-9 && (a.y_max - b.y_max).abs() < 1e-9);
            }
            if a.area() > 0.0 {
                prop_assert_eq!(iou(&a, &a), 1.0);
            }
        }

        #[test]
        fn pckh_similarity_is_rational_step(
            pts in prop::collection::vec((0.0f64..40.0, 0.0f64..40.0, any::<bool>(), any::<bool>()), 1..16),
        ) {
            let b = BBox::new(0.0, 0.0, 40.0, 40.0);
            let mut a = det(b, &pts.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>());
            let mut c = det(b, &pts.iter().map(|p| (p.1, p.0)).collect::<Vec<_>>());
            for (k, p) in pts.iter().enumerate() {
                a.pose.joints[k].present = p.2;
                c.pose.joints[k].present = p.3;
            }
            let m = pts.iter().filter(|p| p.2 && p.3).count();
            let s = pose_pckh_similarity(&a, &c, 0.5, 0.1);
            if m == 0 {
                prop_assert_eq!(s, 0.0);
            } else {
                let k = (s * m as f64).round();
                prop_assert!((s - k / m as f64).abs() < 1e-12);
            }
        }

        #[test]
        fn iou_and_cosine_matrices_transpose(
            xs in prop::collection::vec((0.0f64..60.0, 5.0f64..30.0, -1.0f64..1.0, -1.0f64..1.0), 1..6),
            ys in prop::collection::vec((0.0f64..60.0, 5.0f64..30.0, -1.0f64..1.0, -1.0f64..1.0), 1..6),
        ) {
            let mk = |v: &Vec<(f64, f64, f64, f64)>| -> Vec<Detection> {
                v.iter().map(|&(x, w, f0, f1)| det(BBox::new(x, 0.0, x + w, w), &[(x, 1.0)]).with_feature(vec![f0, f1, 0.5])).collect()
            };
            let (a, b) = (mk(&xs), mk(&ys));
            for kind in [CriterionKind::BboxIou, CriterionKind::FeatureCosine] {
                let crit = SimilarityCriterion::new(kind);
                let ab = build_cost_matrix(&a, &b, &crit).unwrap();
                let ba = build_cost_matrix(&b, &a, &crit).unwrap();
                prop_assert_eq!(ab.transposed(), ba);
            }
        }

        #[test]
        fn combined_monotone_in_each_base(
            base in prop::array::uniform3(0.0f64..1.0),
            bump in 0.0f64..0.5,
            which in 0usize..3,
            w in prop::array::uniform3(0.01f64..3.0),
        ) {
            let mut hi = base;
            hi[which] = (hi[which] + bump).min(1.0);
            prop_assert!(mix_similarities(w, hi) >= mix_similarities(w, base));
        }
    }
}
