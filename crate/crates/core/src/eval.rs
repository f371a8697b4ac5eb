//! Oriented 3-D IoU, per-frame TP/FP/FN classification and precision,
//! recall and F1 aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box3D, GeometryError, Vec2};

/// IoU threshold for a detection to count as a true positive.
pub const DEFAULT_TP_IOU: f64 = 0.30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("aggregation needs at least one frame")]
    NoFrames,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    /// Intersection volume over union volume.
    #[default]
    ThreeD,
    /// Footprint area only.
    Bev,
}

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p.x * q.y - q.x * p.y
        })
        .sum();
    0.5 * twice.abs()
}

/// Clips `subject` against the convex counter-clockwise polygon `clip`.
fn clip_polygon(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (dc, dp) = (cross(a, b, cur), cross(a, b, prev));
            if dc >= 0.0 {
                if dp < 0.0 {
                    out.push(intersect(prev, cur, dp, dc));
                }
                out.push(cur);
            } else if dp >= 0.0 {
                out.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    out
}

fn intersect(p: Vec2, q: Vec2, dp: f64, dq: f64) -> Vec2 {
    let t = dp / (dp - dq);
    p + (q - p) * t
}

/// Area of the intersection of two box footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let dc = (a.center.xy() - b.center.xy()).norm();
    if dc > a.bev_radius() + b.bev_radius() {
        return 0.0;
    }
    polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners()))
}

/// Footprint IoU.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> Result<f64, EvalError> {
    a.validate()?;
    b.validate()?;
    let inter = bev_intersection_area(a, b);
    let union = a.size.x * a.size.y + b.size.x * b.size.y - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Volume IoU of two yawed boxes: clipped footprint area times z overlap.
pub fn iou3d(a: &Box3D, b: &Box3D) -> Result<f64, EvalError> {
    a.validate()?;
    b.validate()?;
    let dz = (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0);
    if dz == 0.0 {
        return Ok(0.0);
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

pub fn iou(a: &Box3D, b: &Box3D, mode: IouMode) -> Result<f64, EvalError> {
    match mode {
        IouMode::ThreeD => iou3d(a, b),
        IouMode::Bev => iou_bev(a, b),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub det: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMatch {
    pub counts: FrameCounts,
    pub pairs: Vec<MatchPair>,
}

/// Greedy descending-IoU matching of one frame's detections to its ground
/// truth. Pairs below `threshold` never match; ties go to the lower
/// detection index, then the lower ground-truth index.
pub fn classify(
    dets: &[Box3D],
    gts: &[Box3D],
    threshold: f64,
    mode: IouMode,
) -> Result<FrameMatch, EvalError> {
    let mut cand = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let v = iou(d, g, mode)?;
            if v >= threshold && v > 0.0 {
                cand.push(MatchPair {
                    det: i,
                    gt: j,
                    iou: v,
                });
            }
        }
    }
    cand.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.det.cmp(&b.det))
            .then(a.gt.cmp(&b.gt))
    });
    let mut det_used = vec![false; dets.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for c in cand {
        if !det_used[c.det] && !gt_used[c.gt] {
            det_used[c.det] = true;
            gt_used[c.gt] = true;
            pairs.push(c);
        }
    }
    let tp = pairs.len();
    Ok(FrameMatch {
        counts: FrameCounts {
            tp,
            fp: dets.len() - tp,
            fn_: gts.len() - tp,
        },
        pairs,
    })
}

/// Summed counts with derived metrics; a metric whose denominator is zero
/// is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub frames: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn precision(tp: usize, fp: usize) -> Option<f64> {
    (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64)
}

pub fn recall(tp: usize, fn_: usize) -> Option<f64> {
    (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64)
}

/// Harmonic mean of precision and recall.
pub fn f1_score(p: f64, r: f64) -> Option<f64> {
    (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
}

pub fn aggregate(frames: &[FrameCounts]) -> Result<EvalOutcome, EvalError> {
    if frames.is_empty() {
        return Err(EvalError::NoFrames);
    }
    let (tp, fp, fn_) = frames
        .iter()
        .fold((0, 0, 0), |(a, b, c), f| (a + f.tp, b + f.fp, c + f.fn_));
    let p = precision(tp, fp);
    let r = recall(tp, fn_);
    let f1 = match (p, r) {
        (Some(p), Some(r)) => f1_score(p, r),
        _ => None,
    };
    Ok(EvalOutcome {
        frames: frames.len(),
        tp,
        fp,
        fn_,
        precision: p,
        recall: r,
        f1,
    })
}

impl EvalOutcome {
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        let _ = writeln!(s, "frames    {}", self.frames);
        let _ = writeln!(s, "tp        {}", self.tp);
        let _ = writeln!(s, "fp        {}", self.fp);
        let _ = writeln!(s, "fn        {}", self.fn_);
        let _ = writeln!(s, "precision {}", fmt(self.precision));
        let _ = writeln!(s, "recall    {}", fmt(self.recall));
        let _ = writeln!(s, "f1        {}", fmt(self.f1));
        s
    }
}
