//! Geometry kernels of a clip-level (tube) person detector.
//!
//! A tube is a short sequence of boxes, one per clip frame. Anchors are
//! ordinary 2D anchors replicated across the clip; regression targets are
//! per-frame anchor-relative deltas laid out frame-major
//! `(tx, ty, tw, th)` for frame 0, then frame 1, and so on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{BBox, Keypoint, Pose};
use crate::similarity::iou;

#[derive(Debug, Clone, PartialEq)]
pub struct Tube {
    pub boxes: Vec<BBox>,
}

impl Tube {
    pub fn new(boxes: Vec<BBox>) -> Self {
        Tube { boxes }
    }

    /// Same box at every one of `frames` frames.
    pub fn constant(b: BBox, frames: usize) -> Self {
        Tube { boxes: vec![b; frames] }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeAnchor {
    pub base: BBox,
    pub frames: usize,
}

impl TubeAnchor {
    pub fn tube(&self) -> Tube {
        Tube::constant(self.base, self.frames)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TubeDeltas {
    pub values: Vec<f64>,
}

impl TubeDeltas {
    pub fn frames(&self) -> usize {
        self.values.len() / 4
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[4 * t..4 * t + 4]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGrid {
    /// Square root of anchor area, in pixels.
    pub scales: Vec<f64>,
    /// Width / height.
    pub aspects: Vec<f64>,
    pub stride: f64,
}

impl Default for AnchorGrid {
    /// 4 scales × 3 aspects = 12 anchors per position, stride 8.
    fn default() -> Self {
        AnchorGrid { scales: vec![32.0, 64.0, 128.0, 256.0], aspects: vec![0.5, 1.0, 2.0], stride: 8.0 }
    }
}

impl AnchorGrid {
    pub fn anchors_per_position(&self) -> usize {
        self.scales.len() * self.aspects.len()
    }
}

/// Anchors at every cell center of a `ceil(H/stride) × ceil(W/stride)` grid,
/// row-major over positions, then scales, then aspects.
pub fn generate_anchors(grid: &AnchorGrid, image_w: u32, image_h: u32, frames: usize) -> Result<Vec<TubeAnchor>> {
    if grid.scales.is_empty() || grid.aspects.is_empty() {
        return Err(Error::InvalidArgument("anchor grid needs at least one scale and one aspect".into()));
    }
    if !(grid.stride > 0.0) || grid.scales.iter().chain(&grid.aspects).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("anchor stride, scales and aspects must be positive".into()));
    }
    if frames == 0 {
        return Err(Error::InvalidArgument("tube length must be at least 1".into()));
    }
    let nx = (image_w as f64 / grid.stride).ceil() as usize;
    let ny = (image_h as f64 / grid.stride).ceil() as usize;
    let mut out = Vec::with_capacity(nx * ny * grid.anchors_per_position());
    for row in 0..ny {
        for col in 0..nx {
            let cx = (col as f64 + 0.5) * grid.stride;
            let cy = (row as f64 + 0.5) * grid.stride;
            for &s in &grid.scales {
                for &a in &grid.aspects {
                    let w = s * a.sqrt();
                    let h = s / a.sqrt();
                    out.push(TubeAnchor { base: BBox::from_center(cx, cy, w, h), frames });
                }
            }
        }
    }
    Ok(out)
}

fn encode_box(target: &BBox, anchor: &BBox) -> Result<[f64; 4]> {
    let (wa, ha) = (anchor.width(), anchor.height());
    if !(wa > 0.0 && ha > 0.0) {
        return Err(Error::InvalidArgument("anchor box must have positive size".into()));
    }
    let (w, h) = (target.width(), target.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::InvalidArgument("target box must have positive size".into()));
    }
    let (xa, ya) = anchor.center();
    let (x, y) = target.center();
    Ok([(x - xa) / wa, (y - ya) / ha, (w / wa).ln(), (h / ha).ln()])
}

fn decode_box(d: &[f64], anchor: &BBox) -> BBox {
    let (wa, ha) = (anchor.width(), anchor.height());
    let (xa, ya) = anchor.center();
    BBox::from_center(d[0] * wa + xa, d[1] * ha + ya, wa * d[2].exp(), ha * d[3].exp())
}

/// `tx = (x − xa)/wa, ty = (y − ya)/ha, tw = ln(w/wa), th = ln(h/ha)` per
/// frame, with centers and sizes of target and anchor.
pub fn encode_tube_deltas(target: &Tube, anchor: &TubeAnchor) -> Result<TubeDeltas> {
    if target.len() != anchor.frames {
        return Err(Error::LengthMismatch { expected: anchor.frames, found: target.len() });
    }
    let mut values = Vec::with_capacity(4 * target.len());
    for b in &target.boxes {
        values.extend_from_slice(&encode_box(b, &anchor.base)?);
    }
    Ok(TubeDeltas { values })
}

pub fn decode_tube_deltas(deltas: &TubeDeltas, anchor: &TubeAnchor) -> Result<Tube> {
    if deltas.values.len() != 4 * anchor.frames {
        return Err(Error::LengthMismatch { expected: 4 * anchor.frames, found: deltas.values.len() });
    }
    Ok(Tube::new(deltas.values.chunks_exact(4).map(|d| decode_box(d, &anchor.base)).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TubeOverlap {
    /// Mean over frames of per-frame IoU.
    #[default]
    MeanIou,
    /// IoU of the boxes enclosing each tube over all frames.
    EnclosingIou,
}

fn enclosing(t: &Tube) -> BBox {
    t.boxes.iter().skip(1).fold(t.boxes[0], |a, b| {
        BBox::new(a.x_min.min(b.x_min), a.y_min.min(b.y_min), a.x_max.max(b.x_max), a.y_max.max(b.y_max))
    })
}

pub fn tube_overlap_with(a: &Tube, b: &Tube, mode: TubeOverlap) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: b.len() });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty tube".into()));
    }
    Ok(match mode {
        TubeOverlap::MeanIou => a.boxes.iter().zip(&b.boxes).map(|(x, y)| iou(x, y)).sum::<f64>() / a.len() as f64,
        TubeOverlap::EnclosingIou => iou(&enclosing(a), &enclosing(b)),
    })
}

/// Mean per-frame IoU.
pub fn tube_overlap(a: &Tube, b: &Tube) -> Result<f64> {
    tube_overlap_with(a, b, TubeOverlap::MeanIou)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Index of the matched ground-truth tube.
    Foreground(usize),
    Background,
    Ignore,
}

/// Label anchors by their best overlap with any ground-truth tube:
/// `≥ fg_thresh` foreground, `≤ bg_thresh` background, otherwise ignored.
/// The best-overlapping anchor(s) of each ground-truth tube are foreground
/// regardless of threshold, provided the overlap is positive.
pub fn assign_anchors(
    anchors: &[TubeAnchor],
    gt_tubes: &[Tube],
    fg_thresh: f64,
    bg_thresh: f64,
) -> Result<Vec<AnchorLabel>> {
    if !(0.0 <= bg_thresh && bg_thresh < fg_thresh && fg_thresh <= 1.0) {
        return Err(Error::InvalidArgument(format!("need 0 <= bg ({bg_thresh}) < fg ({fg_thresh}) <= 1")));
    }
    let n_gt = gt_tubes.len();
    let mut overlaps = Vec::with_capacity(anchors.len() * n_gt);
    for a in anchors {
        let at = a.tube();
        for g in gt_tubes {
            overlaps.push(tube_overlap(&at, g)?);
        }
    }
    let best_gt: Vec<(usize, f64)> = (0..anchors.len())
        .map(|i| {
            (0..n_gt).fold((0, 0.0), |best, g| {
                let o = overlaps[i * n_gt + g];
                if o > best.1 {
                    (g, o)
                } else {
                    best
                }
            })
        })
        .collect();
    let mut labels: Vec<AnchorLabel> = best_gt
        .iter()
        .map(|&(g, o)| {
            if n_gt > 0 && o >= fg_thresh {
                AnchorLabel::Foreground(g)
            } else if o <= bg_thresh {
                AnchorLabel::Background
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();
    for g in 0..n_gt {
        let top = (0..anchors.len()).map(|i| overlaps[i * n_gt + g]).fold(0.0, f64::max);
        if top <= 0.0 {
            continue;
        }
        for (i, label) in labels.iter_mut().enumerate() {
            if overlaps[i * n_gt + g] == top {
                *label = AnchorLabel::Foreground(best_gt[i].0);
            }
        }
    }
    Ok(labels)
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Classification and regression terms of the tube proposal loss.
///
/// `cls` is the mean two-class softmax cross-entropy (`[background,
/// foreground]` logits) over non-ignored anchors. `reg` sums smooth-L1 over
/// the `4T` coordinates of every foreground anchor, divides by the
/// foreground count and then by `T`, so a tube loss stays on the scale of a
/// single-frame box loss.
pub fn tracking_loss(
    pred_deltas: &[TubeDeltas],
    target_deltas: &[TubeDeltas],
    cls_logits: &[[f64; 2]],
    labels: &[AnchorLabel],
    frames: usize,
) -> Result<(f64, f64)> {
    let n = labels.len();
    for len in [pred_deltas.len(), target_deltas.len(), cls_logits.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, found: len });
        }
    }
    if frames == 0 {
        return Err(Error::InvalidArgument("tube length must be at least 1".into()));
    }
    let (mut cls_sum, mut cls_n) = (0.0, 0usize);
    let (mut reg_sum, mut fg_n) = (0.0, 0usize);
    for i in 0..n {
        let target_class = match labels[i] {
            AnchorLabel::Ignore => continue,
            AnchorLabel::Background => 0,
            AnchorLabel::Foreground(_) => 1,
        };
        let [l0, l1] = cls_logits[i];
        let m = l0.max(l1);
        let log_z = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
        cls_sum += log_z - cls_logits[i][target_class];
        cls_n += 1;

        if target_class == 1 {
            let (p, t) = (&pred_deltas[i].values, &target_deltas[i].values);
            if p.len() != 4 * frames || t.len() != 4 * frames {
                return Err(Error::LengthMismatch { expected: 4 * frames, found: p.len().min(t.len()) });
            }
            reg_sum += p.iter().zip(t).map(|(a, b)| smooth_l1(a - b)).sum::<f64>();
            fg_n += 1;
        }
    }
    let cls = if cls_n == 0 { 0.0 } else { cls_sum / cls_n as f64 };
    let reg = if fg_n == 0 { 0.0 } else { reg_sum / fg_n as f64 / frames as f64 };
    Ok((cls, reg))
}

/// Dense `T × C × H × W` feature grid at a fixed stride from the image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: f64,
    pub data: Vec<f64>,
}

impl FeatureVolume {
    pub fn new(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        stride: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        let n = frames * channels * height * width;
        if data.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature volume"));
        }
        if !(stride > 0.0) {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        Ok(FeatureVolume { frames, channels, height, width, stride, data })
    }

    pub fn filled(frames: usize, channels: usize, height: usize, width: usize, stride: f64, value: f64) -> Self {
        FeatureVolume { frames, channels, height, width, stride, data: vec![value; frames * channels * height * width] }
    }

    pub fn slice(&self, t: usize, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        let start = (t * self.channels + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn at(&self, t: usize, c: usize, y: usize, x: usize) -> f64 {
        self.slice(t, c)[y * self.width + x]
    }
}

/// Bilinear sample of one `height × width` plane at continuous index
/// coordinates. Zero beyond one cell outside the plane; clamped to the
/// border within it.
pub fn bilinear_sample(plane: &[f64], height: usize, width: usize, y: f64, x: f64) -> f64 {
    if y < -1.0 || y > height as f64 || x < -1.0 || x > width as f64 {
        return 0.0;
    }
    let y = y.max(0.0);
    let x = x.max(0.0);
    let (mut y0, mut x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1, ly, lx);
    if y0 >= height - 1 {
        y0 = height - 1;
        y1 = y0;
        ly = 0.0;
    } else {
        y1 = y0 + 1;
        ly = y - y0 as f64;
    }
    if x0 >= width - 1 {
        x0 = width - 1;
        x1 = x0;
        lx = 0.0;
    } else {
        x1 = x0 + 1;
        lx = x - x0 as f64;
    }
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    hy * hx * plane[y0 * width + x0]
        + hy * lx * plane[y0 * width + x1]
        + ly * hx * plane[y1 * width + x0]
        + ly * lx * plane[y1 * width + x1]
}

/// RoIAlign of one box on one plane; box is in feature-grid units, sample
/// positions are taken at pixel centers (half-cell offset).
fn roi_align_plane(
    plane: &[f64],
    height: usize,
    width: usize,
    b: &BBox,
    out_size: usize,
    samples: usize,
    out: &mut [f64],
) {
    let (x0, y0) = (b.x_min - 0.5, b.y_min - 0.5);
    let bin_w = b.width() / out_size as f64;
    let bin_h = b.height() / out_size as f64;
    let norm = (samples * samples) as f64;
    for by in 0..out_size {
        for bx in 0..out_size {
            let mut acc = 0.0;
            for sy in 0..samples {
                let y = y0 + bin_h * (by as f64 + (sy as f64 + 0.5) / samples as f64);
                for sx in 0..samples {
                    let x = x0 + bin_w * (bx as f64 + (sx as f64 + 0.5) / samples as f64);
                    acc += bilinear_sample(plane, height, width, y, x);
                }
            }
            out[by * out_size + bx] = acc / norm;
        }
    }
}

/// Cut each clip frame's box out of the matching temporal slice and resample
/// it to `out_size × out_size` bins of `samples_per_bin²` bilinear samples.
/// Output is `T × C × R × R`, row-major. Box coordinates are in image
/// pixels and are divided by the volume's stride.
pub fn spatiotemporal_roi_align(
    vol: &FeatureVolume,
    tube: &Tube,
    out_size: usize,
    samples_per_bin: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    if out_size == 0 {
        return Err(Error::InvalidArgument("output resolution must be positive".into()));
    }
    if samples_per_bin == 0 {
        return Err(Error::InvalidArgument("samples per bin must be positive".into()));
    }
    if tube.len() != vol.frames {
        return Err(Error::LengthMismatch { expected: vol.frames, found: tube.len() });
    }
    if vol.height == 0 || vol.width == 0 {
        return Err(Error::InvalidArgument("empty feature volume".into()));
    }
    let rr = out_size * out_size;
    let scale = 1.0 / vol.stride;
    let planes = exec.map_range(vol.frames * vol.channels, |k| {
        let (t, c) = (k / vol.channels, k % vol.channels);
        let b = tube.boxes[t].scaled(scale);
        let mut out = vec![0.0; rr];
        roi_align_plane(vol.slice(t, c), vol.height, vol.width, &b, out_size, samples_per_bin, &mut out);
        out
    });
    Ok(planes.concat())
}

/// Per-joint score maps over a box, `joints × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmaps {
    pub joints: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// Argmax of each joint's heatmap (ties to the lowest row-major index),
/// mapped to the bin center inside `b`. The keypoint score is the softmax
/// probability of the winning bin.
pub fn decode_keypoint_heatmap(maps: &Heatmaps, b: &BBox) -> Result<Pose> {
    let bins = maps.height * maps.width;
    if bins == 0 {
        return Err(Error::InvalidArgument("heatmap resolution must be at least 1".into()));
    }
    if maps.data.len() != maps.joints * bins {
        return Err(Error::LengthMismatch { expected: maps.joints * bins, found: maps.data.len() });
    }
    if maps.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("heatmap"));
    }
    let bw = b.width() / maps.width as f64;
    let bh = b.height() / maps.height as f64;
    let joints = maps
        .data
        .chunks_exact(bins)
        .map(|h| {
            let mut arg = 0;
            for (i, &v) in h.iter().enumerate() {
                if v > h[arg] {
                    arg = i;
                }
            }
            let peak = h[arg];
            let z: f64 = h.iter().map(|v| (v - peak).exp()).sum();
            let (row, col) = (arg / maps.width, arg % maps.width);
            Keypoint::new(b.x_min + (col as f64 + 0.5) * bw, b.y_min + (row as f64 + 0.5) * bh, 1.0 / z)
        })
        .collect();
    Ok(Pose::new(joints))
}

/// Softmax over one joint's bins.
pub fn heatmap_softmax(bins: &[f64]) -> Vec<f64> {
    let peak = bins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = bins.iter().map(|v| (v - peak).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Inflation {
    /// 2D filter in the middle temporal slice, zeros elsewhere.
    Center,
    /// 2D filter in every slice, divided by the temporal size.
    Mean,
}

/// 2D convolution weights `C_out × C_in × K × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

/// 3D convolution weights `C_out × C_in × K_T × K × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter3d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub temporal: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl Filter3d {
    pub fn at(&self, o: usize, i: usize, t: usize, y: usize, x: usize) -> f64 {
        let k = self.size;
        self.data[(((o * self.in_channels + i) * self.temporal + t) * k + y) * k + x]
    }
}

pub fn inflate_2d_filter(w: &Filter2d, temporal: usize, mode: Inflation) -> Result<Filter3d> {
    let kk = w.size * w.size;
    if w.data.len() != w.out_channels * w.in_channels * kk {
        return Err(Error::LengthMismatch { expected: w.out_channels * w.in_channels * kk, found: w.data.len() });
    }
    if temporal == 0 {
        return Err(Error::InvalidArgument("temporal size must be at least 1".into()));
    }
    if mode == Inflation::Center && temporal.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("center inflation needs an odd temporal size, got {temporal}")));
    }
    let mut data = Vec::with_capacity(w.data.len() * temporal);
    for kernel in w.data.chunks_exact(kk) {
        for t in 0..temporal {
            match mode {
                Inflation::Center if t == temporal / 2 => data.extend_from_slice(kernel),
                Inflation::Center => data.extend(std::iter::repeat_n(0.0, kk)),
                Inflation::Mean => data.extend(kernel.iter().map(|v| v / temporal as f64)),
            }
        }
    }
    Ok(Filter3d { out_channels: w.out_channels, in_channels: w.in_channels, temporal, size: w.size, data })
}
