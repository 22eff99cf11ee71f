//! Bipartite matching between frames and track-id propagation.
//!
//! Each frame's detections are matched against one representative per live
//! track (its most recent detection, if seen within the last `lookback`
//! frames). Matched detections inherit the track id; the rest open new
//! tracks with consecutive ids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Detection, Frame, VideoSequence};
use crate::similarity::{build_cost_matrix_with, CostMatrix, EdgeContext, SimilarityCriterion, Slot};

/// A one-to-one set of (row, col) pairs and their summed cost.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    fn from_pairs(mut pairs: Vec<(usize, usize)>, cost: &CostMatrix) -> Self {
        pairs.sort_unstable();
        let total_cost = pairs.iter().map(|&(i, j)| cost.cost_at(i, j)).sum();
        Assignment { pairs, total_cost }
    }

    pub fn total_similarity(&self, cost: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(i, j)| cost.similarity_at(i, j)).sum()
    }
}

/// Minimum-cost assignment of `min(rows, cols)` pairs.
///
/// Shortest augmenting paths with row/column potentials (Kuhn-Munkres in
/// the Jonker-Volgenant formulation), `O(n^2 m)` for `n <= m`. Wide and
/// tall matrices are both accepted; tall ones are solved transposed.
pub fn hungarian_assign(cost: &CostMatrix) -> Assignment {
    let (rows, cols) = (cost.rows, cost.cols);
    if rows == 0 || cols == 0 {
        return Assignment::default();
    }
    let pairs = if rows <= cols {
        solve_wide(rows, cols, |i, j| cost.cost_at(i, j)).into_iter().enumerate().collect()
    } else {
        solve_wide(cols, rows, |i, j| cost.cost_at(j, i)).into_iter().enumerate().map(|(c, r)| (r, c)).collect()
    };
    Assignment::from_pairs(pairs, cost)
}

/// Assign each of `n` rows to a distinct one of `m >= n` columns; returns the
/// column chosen for every row.
fn solve_wide(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based internally; index 0 is the virtual source column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            debug_assert!(j1 != 0, "no augmenting column; non-finite costs?");
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            col_of_row[owner[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Repeatedly take the cheapest remaining edge (highest similarity) and drop
/// its row and column. Ties go to the lexicographically smallest `(i, j)`.
pub fn greedy_assign(cost: &CostMatrix) -> Assignment {
    let (rows, cols) = (cost.rows, cost.cols);
    let mut edges: Vec<(usize, usize)> = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();
    edges.sort_by(|&(ai, aj), &(bi, bj)| {
        cost.cost_at(ai, aj).total_cmp(&cost.cost_at(bi, bj)).then((ai, aj).cmp(&(bi, bj)))
    });
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let limit = rows.min(cols);
    let mut pairs = Vec::with_capacity(limit);
    for (i, j) in edges {
        if pairs.len() == limit {
            break;
        }
        if !row_used[i] && !col_used[j] {
            row_used[i] = true;
            col_used[j] = true;
            pairs.push((i, j));
        }
    }
    Assignment::from_pairs(pairs, cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Hungarian,
    Greedy,
    /// Baseline: ignore matching and draw every id uniformly at random.
    Random,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hungarian => "hungarian",
            Algorithm::Greedy => "greedy",
            Algorithm::Random => "random",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinkerConfig {
    pub algorithm: Algorithm,
    pub criterion: SimilarityCriterion,
    /// A matched pair links only when its similarity is strictly greater.
    pub min_similarity: f64,
    /// Number of past frames a track stays matchable after its last detection.
    pub lookback: usize,
    /// Random mode draws ids from `0..=random_max_id`.
    pub random_max_id: u64,
    pub rng_seed: u64,
    pub exec: Execution,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        LinkerConfig {
            algorithm: Algorithm::Hungarian,
            criterion: SimilarityCriterion::default(),
            min_similarity: 0.0,
            lookback: 1,
            random_max_id: 1000,
            rng_seed: 0,
            exec: Execution::default(),
        }
    }
}

impl LinkerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 {
            return Err(Error::InvalidArgument("lookback must be at least 1".into()));
        }
        if !self.min_similarity.is_finite() {
            return Err(Error::NonFinite("min_similarity"));
        }
        self.criterion.validate()
    }

    fn assign(&self, cost: &CostMatrix) -> Assignment {
        match self.algorithm {
            Algorithm::Hungarian => hungarian_assign(cost),
            Algorithm::Greedy => greedy_assign(cost),
            Algorithm::Random => Assignment::default(),
        }
    }
}

/// Per-video bookkeeping from a tracking run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkStats {
    /// Sum over frames of the assignment's total cost, before the
    /// `min_similarity` cut.
    pub matched_cost: f64,
    pub links: usize,
    pub new_tracks: usize,
}

/// Match `curr` against `pool`, write track ids into `curr`, return the next
/// free id.
fn link_candidates(
    pool: &[&Detection],
    pool_ids: &[u64],
    ctx: Option<&EdgeContext<'_>>,
    curr: &mut [Detection],
    cfg: &LinkerConfig,
    mut next_id: u64,
    stats: &mut LinkStats,
) -> Result<u64> {
    let mut assigned: Vec<Option<u64>> = vec![None; curr.len()];
    if !pool.is_empty() && !curr.is_empty() && cfg.algorithm != Algorithm::Random {
        let cost = build_cost_matrix_with(pool, curr, &cfg.criterion, ctx, cfg.exec)?;
        let assignment = cfg.assign(&cost);
        stats.matched_cost += assignment.total_cost;
        for &(i, j) in &assignment.pairs {
            if cost.similarity_at(i, j) > cfg.min_similarity {
                assigned[j] = Some(pool_ids[i]);
                stats.links += 1;
            }
        }
    }
    for (det, id) in curr.iter_mut().zip(assigned) {
        det.track_id = Some(match id {
            Some(id) => id,
            None => {
                next_id += 1;
                stats.new_tracks += 1;
                next_id - 1
            }
        });
    }
    Ok(next_id)
}

/// Link one frame to its predecessor. Matched detections copy the previous
/// track id; unmatched ones receive `next_id, next_id + 1, ...` in index
/// order. Random mode performs no matching here.
pub fn link_frame_pair(
    prev: &[Detection],
    curr: &[Detection],
    cfg: &LinkerConfig,
    next_id: u64,
) -> Result<(Vec<Detection>, u64)> {
    cfg.validate()?;
    let mut ids = Vec::with_capacity(prev.len());
    for (i, d) in prev.iter().enumerate() {
        ids.push(d.track_id.ok_or(Error::MissingTrackId { frame: 0, detection: i })?);
    }
    let refs: Vec<&Detection> = prev.iter().collect();
    let slots: Vec<Slot> = (0..prev.len()).map(|index| Slot { frame: 0, index, adjacent: true }).collect();
    let ctx = EdgeContext { curr_frame: 1, prev_slots: &slots };
    let mut out = curr.to_vec();
    let next = link_candidates(&refs, &ids, Some(&ctx), &mut out, cfg, next_id, &mut LinkStats::default())?;
    Ok((out, next))
}

/// Assign a track id to every detection in the video.
pub fn track_video(seq: &VideoSequence, cfg: &LinkerConfig) -> Result<VideoSequence> {
    track_video_with_stats(seq, cfg).map(|(s, _)| s)
}

#[derive(Debug, Clone, Copy)]
struct LiveTrack {
    id: u64,
    frame_pos: usize,
    det_index: usize,
}

pub fn track_video_with_stats(seq: &VideoSequence, cfg: &LinkerConfig) -> Result<(VideoSequence, LinkStats)> {
    cfg.validate()?;
    let mut out = seq.clone();
    let mut stats = LinkStats::default();

    if cfg.algorithm == Algorithm::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        for det in out.frames.iter_mut().flat_map(|f| f.detections.iter_mut()) {
            det.track_id = Some(rng.random_range(0..=cfg.random_max_id));
        }
        return Ok((out, stats));
    }

    let mut live: Vec<LiveTrack> = Vec::new();
    let mut next_id = 0u64;
    for t in 0..out.frames.len() {
        live.retain(|tr| t - tr.frame_pos <= cfg.lookback);
        // most recent frame first, then detection order: with lookback 1 the
        // pool is exactly the previous frame in its own order
        live.sort_by_key(|tr| (std::cmp::Reverse(tr.frame_pos), tr.det_index));

        let (done, rest) = out.frames.split_at_mut(t);
        let curr: &mut Frame = &mut rest[0];
        let pool: Vec<&Detection> = live.iter().map(|tr| &done[tr.frame_pos].detections[tr.det_index]).collect();
        let pool_ids: Vec<u64> = live.iter().map(|tr| tr.id).collect();
        let slots: Vec<Slot> = live
            .iter()
            .map(|tr| Slot {
                frame: done[tr.frame_pos].frame_index,
                index: tr.det_index,
                adjacent: tr.frame_pos + 1 == t,
            })
            .collect();
        let ctx = EdgeContext { curr_frame: curr.frame_index, prev_slots: &slots };
        next_id = link_candidates(&pool, &pool_ids, Some(&ctx), &mut curr.detections, cfg, next_id, &mut stats)?;

        for (j, det) in curr.detections.iter().enumerate() {
            let id = det.track_id.expect("just assigned");
            match live.iter_mut().find(|tr| tr.id == id) {
                Some(tr) => {
                    tr.frame_pos = t;
                    tr.det_index = j;
                }
                None => live.push(LiveTrack { id, frame_pos: t, det_index: j }),
            }
        }
    }
    Ok((out, stats))
}

/// Track several independent videos; videos run in parallel under
/// `cfg.exec`, each internally sequential.
pub fn track_many(seqs: &[VideoSequence], cfg: &LinkerConfig) -> Result<Vec<(VideoSequence, LinkStats)>> {
    let mut inner = cfg.clone();
    inner.exec = Execution::Sequential;
    cfg.exec.try_map(seqs, |s| track_video_with_stats(s, &inner))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, Keypoint, Pose};
    use crate::similarity::CriterionKind;
    use proptest::prelude::*;
    use rand::Rng;

    /// Exhaustive minimum over all injections of the smaller side.
    fn brute_force_min(cost: &CostMatrix) -> f64 {
        fn rec(c: &CostMatrix, i: usize, used: &mut Vec<bool>, transpose: bool) -> f64 {
            let (n, m) = if transpose { (c.cols, c.rows) } else { (c.rows, c.cols) };
            if i == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..m {
                if !used[j] {
                    used[j] = true;
                    let v = if transpose { c.cost_at(j, i) } else { c.cost_at(i, j) };
                    best = best.min(v + rec(c, i + 1, used, transpose));
                    used[j] = false;
                }
            }
            best
        }
        let transpose = cost.rows > cost.cols;
        let m = if transpose { cost.rows } else { cost.cols };
        rec(cost, 0, &mut vec![false; m], transpose)
    }

    fn check_one_to_one(a: &Assignment, rows: usize, cols: usize) {
        let mut r = vec![false; rows];
        let mut c = vec![false; cols];
        for &(i, j) in &a.pairs {
            assert!(!r[i] && !c[j]);
            r[i] = true;
            c[j] = true;
        }
        assert_eq!(a.pairs.len(), rows.min(cols));
    }

    #[test]
    fn hungarian_examples() {
        let a = hungarian_assign(&CostMatrix::from_cost_rows(&[vec![4.0, 1.0], vec![2.0, 3.0]]));
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.total_cost, 3.0);

        let a = hungarian_assign(&CostMatrix::from_cost_rows(&[vec![0.0]]));
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.total_cost, 0.0);

        let a = hungarian_assign(&CostMatrix::from_cost_rows(&[vec![5.0, 1.0, 3.0]]));
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.total_cost, 1.0);

        let a = hungarian_assign(&CostMatrix::from_cost_rows(&[vec![5.0], vec![1.0], vec![3.0]]));
        assert_eq!(a.pairs, vec![(1, 0)]);

        assert_eq!(hungarian_assign(&CostMatrix::from_costs(0, 0, vec![])), Assignment::default());
        assert_eq!(hungarian_assign(&CostMatrix::from_costs(3, 0, vec![])).pairs, vec![]);
    }

    #[test]
    fn greedy_examples() {
        let m = CostMatrix::from_similarity_rows(&[vec![0.9, 0.85], vec![0.8, 0.0]]);
        let g = greedy_assign(&m);
        assert_eq!(g.pairs, vec![(0, 0), (1, 1)]);
        assert!((g.total_similarity(&m) - 0.9).abs() < 1e-12);
        let h = hungarian_assign(&m);
        assert_eq!(h.pairs, vec![(0, 1), (1, 0)]);
        assert!((h.total_similarity(&m) - 1.65).abs() < 1e-12);

        let d = CostMatrix::from_similarity_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]);
        assert_eq!(greedy_assign(&d).pairs, hungarian_assign(&d).pairs);

        let eq = CostMatrix::from_similarity_rows(&vec![vec![0.5; 3]; 3]);
        assert_eq!(greedy_assign(&eq).pairs, vec![(0, 0), (1, 1), (2, 2)]);
    }

    proptest! {
        #[test]
        fn hungarian_matches_brute_force(rows in 1usize..=6, cols in 1usize..=6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let costs: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-5.0..5.0)).collect();
            let m = CostMatrix::from_costs(rows, cols, costs);
            let h = hungarian_assign(&m);
            check_one_to_one(&h, rows, cols);
            prop_assert!((h.total_cost - brute_force_min(&m)).abs() < 1e-9);
            let g = greedy_assign(&m);
            check_one_to_one(&g, rows, cols);
            prop_assert!(h.total_cost <= g.total_cost + 1e-9);
        }

        #[test]
        fn hungarian_is_deterministic(rows in 1usize..=8, cols in 1usize..=8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let costs: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0..4) as f64).collect();
            let m = CostMatrix::from_costs(rows, cols, costs);
            prop_assert_eq!(hungarian_assign(&m), hungarian_assign(&m));
        }
    }

    fn person(x: f64, y: f64) -> Detection {
        let pose = Pose::new(vec![Keypoint::new(x + 5.0, y + 5.0, 3.0); 2]);
        Detection::new(BBox::new(x, y, x + 20.0, y + 40.0), 1.0, pose)
    }

    fn video(frames: Vec<Vec<Detection>>) -> VideoSequence {
        VideoSequence {
            video_id: "t".into(),
            image_width: 200,
            image_height: 200,
            joint_names: vec!["a".into(), "b".into()],
            frames: frames.into_iter().enumerate().map(|(i, d)| Frame::new(i as u64, true, d)).collect(),
        }
    }

    fn ids(seq: &VideoSequence) -> Vec<Vec<u64>> {
        seq.frames.iter().map(|f| f.detections.iter().map(|d| d.track_id.unwrap()).collect()).collect()
    }

    #[test]
    fn link_pair_examples() {
        let cfg = LinkerConfig::default();
        let prev = vec![person(0.0, 0.0).with_track_id(7)];
        let (out, next) = link_frame_pair(&prev, &[person(1.0, 0.0)], &cfg, 8).unwrap();
        assert_eq!(out[0].track_id, Some(7));
        assert_eq!(next, 8);

        // zero similarity never links
        let (out, next) = link_frame_pair(&prev, &[person(100.0, 100.0)], &cfg, 8).unwrap();
        assert_eq!(out[0].track_id, Some(8));
        assert_eq!(next, 9);

        // 2 prev, 3 curr: IoU matrix [[.9, 0, 0], [0, .9, 0]] leaves curr 2 unmatched
        let prev = vec![person(0.0, 0.0).with_track_id(0), person(60.0, 0.0).with_track_id(1)];
        let curr = vec![person(1.0, 0.0), person(61.0, 0.0), person(120.0, 100.0)];
        let (out, next) = link_frame_pair(&prev, &curr, &cfg, 2).unwrap();
        let got: Vec<u64> = out.iter().map(|d| d.track_id.unwrap()).collect();
        assert_eq!(got, vec![0, 1, 2]);
        assert_eq!(next, 3);

        let untracked = vec![person(0.0, 0.0)];
        assert!(link_frame_pair(&untracked, &curr, &cfg, 0).is_err());
    }

    #[test]
    fn drifting_box_keeps_one_id() {
        let seq = video((0..5).map(|t| vec![person(2.0 * t as f64, 10.0)]).collect());
        let out = track_video(&seq, &LinkerConfig::default()).unwrap();
        assert_eq!(ids(&out), vec![vec![0]; 5]);
    }

    #[test]
    fn lookback_bridges_gap() {
        let seq = video(vec![
            vec![person(10.0, 10.0)],
            vec![person(11.0, 10.0)],
            vec![],
            vec![person(13.0, 10.0)],
            vec![person(14.0, 10.0)],
        ]);
        let k1 = track_video(&seq, &LinkerConfig::default()).unwrap();
        assert_eq!(k1.track_ids().len(), 2);
        let k2 = track_video(&seq, &LinkerConfig { lookback: 2, ..Default::default() }).unwrap();
        assert_eq!(k2.track_ids().len(), 1);
    }

    #[test]
    fn empty_video() {
        let seq = video(vec![]);
        assert_eq!(track_video(&seq, &LinkerConfig::default()).unwrap(), seq);
    }

    #[test]
    fn new_ids_follow_first_appearance() {
        let seq = video(vec![
            vec![person(0.0, 0.0), person(50.0, 0.0)],
            vec![person(100.0, 100.0), person(1.0, 0.0), person(51.0, 0.0)],
        ]);
        let out = track_video(&seq, &LinkerConfig::default()).unwrap();
        assert_eq!(ids(&out), vec![vec![0, 1], vec![2, 0, 1]]);
    }

    #[test]
    fn random_mode_is_seeded() {
        let seq = video((0..10).map(|t| vec![person(t as f64, 0.0), person(90.0, 0.0)]).collect());
        let cfg = LinkerConfig { algorithm: Algorithm::Random, rng_seed: 7, ..Default::default() };
        let a = track_video(&seq, &cfg).unwrap();
        assert_eq!(a, track_video(&seq, &cfg).unwrap());
        assert!(a.detections().all(|d| d.track_id.unwrap() <= 1000));
        let other = track_video(&seq, &LinkerConfig { rng_seed: 8, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn missing_feature_propagates() {
        let seq = video(vec![vec![person(0.0, 0.0)], vec![person(1.0, 0.0)]]);
        let cfg =
            LinkerConfig { criterion: SimilarityCriterion::new(CriterionKind::FeatureCosine), ..Default::default() };
        let err = track_video(&seq, &cfg).unwrap_err();
        assert!(matches!(err, Error::MissingFeature { .. }));
    }

    #[test]
    fn zero_lookback_rejected() {
        let cfg = LinkerConfig { lookback: 0, ..Default::default() };
        assert!(track_video(&video(vec![]), &cfg).is_err());
    }

    #[test]
    fn track_many_matches_single() {
        let a = video((0..6).map(|t| vec![person(t as f64, 0.0)]).collect());
        let b = video((0..4).map(|t| vec![person(3.0 * t as f64, 0.0), person(80.0, 50.0)]).collect());
        let cfg = LinkerConfig::default();
        let many = track_many(&[a.clone(), b.clone()], &cfg).unwrap();
        assert_eq!(many[0].0, track_video(&a, &cfg).unwrap());
        assert_eq!(many[1].0, track_video(&b, &cfg).unwrap());
    }

    fn arb_video() -> impl Strategy<Value = VideoSequence> {
        prop::collection::vec(prop::collection::vec((0.0f64..150.0, 0.0f64..150.0), 0..5), 0..8).prop_map(|frames| {
            video(frames.into_iter().map(|f| f.into_iter().map(|(x, y)| person(x, y)).collect()).collect())
        })
    }

    proptest! {
        #[test]
        fn ids_unique_per_frame_and_contiguous(seq in arb_video(), k in 1usize..4, greedy in any::<bool>()) {
            let cfg = LinkerConfig {
                lookback: k,
                algorithm: if greedy { Algorithm::Greedy } else { Algorithm::Hungarian },
                ..Default::default()
            };
            let out = track_video(&seq, &cfg).unwrap();
            prop_assert_eq!(&out, &track_video(&seq, &cfg).unwrap());
            let mut seen = Vec::new();
            for f in &out.frames {
                let mut in_frame = std::collections::HashSet::new();
                for d in &f.detections {
                    let id = d.track_id.unwrap();
                    prop_assert!(in_frame.insert(id));
                    if !seen.contains(&id) {
                        prop_assert_eq!(id, seen.len() as u64);
                        seen.push(id);
                    }
                }
            }
        }
    }
}
