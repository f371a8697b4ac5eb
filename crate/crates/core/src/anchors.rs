//! Altitude-stratified anchors: the layered anchor grid, target assignment,
//! box residuals, the focal classification term and greedy NMS.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{bev_intersection_area, iou, EvalError, IouMode};
use crate::geometry::{wrap_angle, Box3D, GeometryError, Vec3};
use crate::pillars::PillarGridSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnchorError {
    #[error("invalid anchor configuration: {0}")]
    InvalidSpec(String),
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("detection {0} has a non-finite score")]
    NonFiniteScore(usize),
    #[error("residuals must be finite")]
    NonFiniteResidual,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorSpec {
    /// Anchor (length, width, height) in meters.
    pub size: [f64; 3],
    pub layers: usize,
    /// Layers stacked below the sensor layer.
    pub layers_below: usize,
    pub layer_height: f64,
    pub sensor_elevation: f64,
    /// Pillar cells per anchor cell along each axis.
    pub feature_stride: usize,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        Self {
            size: [1.6, 1.6, 1.0],
            layers: 21,
            layers_below: 10,
            layer_height: 1.0,
            sensor_elevation: 0.0,
            feature_stride: 2,
        }
    }
}

impl AnchorSpec {
    pub fn validate(&self) -> Result<(), AnchorError> {
        let bad = |s: &str| Err(AnchorError::InvalidSpec(s.to_string()));
        if !self.size.iter().all(|v| v.is_finite() && *v > 0.0) {
            return bad("anchor size must be positive");
        }
        if self.layers == 0 || self.layers_below >= self.layers {
            return bad("need at least one layer, with the sensor layer inside the stack");
        }
        if !(self.layer_height.is_finite() && self.layer_height > 0.0) {
            return bad("layer height must be positive");
        }
        if !self.sensor_elevation.is_finite() {
            return bad("sensor elevation must be finite");
        }
        if self.feature_stride == 0 {
            return bad("feature stride must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorLayer {
    pub class_id: usize,
    pub class_name: String,
    pub z_center: f64,
    pub size: Vec3,
}

/// Layer `i` spans `[i - below, i - below + 1)` layer heights around the
/// sensor elevation, with its anchors centered in the span.
pub fn anchor_layers(spec: &AnchorSpec) -> Vec<AnchorLayer> {
    (0..spec.layers)
        .map(|i| AnchorLayer {
            class_id: i,
            class_name: format!("drone_{i}"),
            z_center: spec.sensor_elevation
                + (i as f64 - spec.layers_below as f64) * spec.layer_height
                + 0.5 * spec.layer_height,
            size: Vec3::new(spec.size[0], spec.size[1], spec.size[2]),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub layer: usize,
    pub bbox: Box3D,
}

/// Anchors at every anchor cell and layer, addressed by
/// `index = (row * cols + col) * layers + layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub layers: Vec<AnchorLayer>,
    pub rows: usize,
    pub cols: usize,
    pub x_min: f64,
    pub y_min: f64,
    /// Anchor cell pitch in meters.
    pub step: f64,
    pub layer_height: f64,
}

pub fn build_anchor_grid(grid: &PillarGridSpec, spec: &AnchorSpec) -> Result<AnchorGrid, AnchorError> {
    grid.validate()
        .map_err(|e| AnchorError::InvalidSpec(e.to_string()))?;
    spec.validate()?;
    let s = spec.feature_stride;
    Ok(AnchorGrid {
        layers: anchor_layers(spec),
        rows: grid.rows().div_ceil(s),
        cols: grid.cols().div_ceil(s),
        x_min: grid.x_min,
        y_min: grid.y_min,
        step: grid.cell_size * s as f64,
        layer_height: spec.layer_height,
    })
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols * self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize, layer: usize) -> usize {
        (row * self.cols + col) * self.layers.len() + layer
    }

    pub fn center(&self, row: usize, col: usize, layer: usize) -> Vec3 {
        Vec3::new(
            self.x_min + (col as f64 + 0.5) * self.step,
            self.y_min + (row as f64 + 0.5) * self.step,
            self.layers[layer].z_center,
        )
    }

    pub fn anchor(&self, index: usize) -> Anchor {
        let nl = self.layers.len();
        let layer = index % nl;
        let cell = index / nl;
        let (row, col) = (cell / self.cols, cell % self.cols);
        Anchor {
            index,
            row,
            col,
            layer,
            bbox: Box3D {
                center: self.center(row, col, layer),
                size: self.layers[layer].size,
                yaw: 0.0,
            },
        }
    }

    /// Layer whose span holds `z`, if any.
    pub fn layer_of(&self, z: f64) -> Option<usize> {
        let base = self.layers.first()?.z_center - 0.5 * self.layer_height;
        let i = ((z - base) / self.layer_height).floor();
        (i >= 0.0 && i < self.layers.len() as f64).then_some(i as usize)
    }

    /// Candidate index range along one axis for anchors whose center lies
    /// within `reach` of `v`.
    fn axis_range(&self, v: f64, origin: f64, reach: f64, n: usize) -> std::ops::RangeInclusive<usize> {
        let lo = ((v - reach - origin) / self.step - 0.5).floor() - 1.0;
        let hi = ((v + reach - origin) / self.step - 0.5).ceil() + 1.0;
        let lo = lo.max(0.0) as usize;
        let hi = (hi.max(-1.0).min(n as f64 - 1.0)) as isize;
        if hi < lo as isize {
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        lo..=hi as usize
    }

    /// Anchors whose footprint circle and height span can touch the box.
    pub fn candidates(&self, b: &Box3D) -> Vec<usize> {
        let mut out = Vec::new();
        let Some(first) = self.layers.first() else {
            return out;
        };
        let reach = b.bev_radius() + 0.5 * first.size.x.hypot(first.size.y);
        for row in self.axis_range(b.center.y, self.y_min, reach, self.rows) {
            for col in self.axis_range(b.center.x, self.x_min, reach, self.cols) {
                for (layer, l) in self.layers.iter().enumerate() {
                    if (b.center.z - l.z_center).abs() * 2.0 < b.size.z + l.size.z {
                        out.push(self.index(row, col, layer));
                    }
                }
            }
        }
        out
    }

    /// Closest anchor center, ties to the lower index.
    pub fn nearest(&self, p: &Vec3) -> usize {
        let pick = |v: f64, origin: f64, n: usize| -> [usize; 2] {
            let f = ((v - origin) / self.step - 0.5).floor();
            let a = f.clamp(0.0, n as f64 - 1.0) as usize;
            let b = (f + 1.0).clamp(0.0, n as f64 - 1.0) as usize;
            [a, b]
        };
        let mut best = (f64::INFINITY, usize::MAX);
        for row in pick(p.y, self.y_min, self.rows) {
            for col in pick(p.x, self.x_min, self.cols) {
                for layer in 0..self.layers.len() {
                    let d = (self.center(row, col, layer) - p).norm();
                    let i = self.index(row, col, layer);
                    if d < best.0 || (d == best.0 && i < best.1) {
                        best = (d, i);
                    }
                }
            }
        }
        best.1
    }
}

/// Localization residual along z, normalized by the anchor height.
pub fn z_residual(gt_z: f64, anchor_z: f64, anchor_h: f64) -> f64 {
    (gt_z - anchor_z) / anchor_h
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocalVariant {
    /// `-alpha * (1 - p)^gamma`.
    #[default]
    Literal,
    /// `-alpha * (1 - p)^gamma * ln(p)`.
    WithLog,
}

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

pub fn focal_cls_term(p: f64, alpha: f64, gamma: f64, variant: FocalVariant) -> Result<f64, AnchorError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(AnchorError::ProbabilityOutOfRange(p));
    }
    let base = -alpha * (1.0 - p).powf(gamma);
    Ok(match variant {
        FocalVariant::Literal => base,
        FocalVariant::WithLog => base * p.ln(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchThresholds {
    pub positive: f64,
    pub negative: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        Self {
            positive: 0.4,
            negative: 0.35,
        }
    }
}

impl MatchThresholds {
    pub fn validate(&self) -> Result<(), AnchorError> {
        if self.positive > self.negative && self.negative >= 0.0 && self.positive <= 1.0 {
            Ok(())
        } else {
            Err(AnchorError::InvalidSpec(format!(
                "thresholds need 0 <= negative < positive <= 1, got {} / {}",
                self.negative, self.positive
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "label")]
pub enum AnchorLabel {
    Negative,
    Ignored,
    Positive { class_id: u32, gt: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment {
    /// One label per anchor.
    pub labels: Vec<AnchorLabel>,
    /// Best IoU of each anchor over all boxes.
    pub best_iou: Vec<f64>,
    /// Anchor forced positive for each ground-truth box.
    pub forced: Vec<usize>,
}

impl TargetAssignment {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, AnchorLabel::Positive { .. }))
            .map(|(i, _)| i)
    }
}

/// Labels every anchor against the ground truth.
///
/// IoU at or above `positive` marks the anchor positive with its layer's
/// class; below `negative` negative; otherwise ignored. Each box then forces
/// its best anchor positive, ranked by IoU, then center distance, then index.
/// A box overlapping no anchor forces its nearest anchor.
pub fn assign_targets(
    gts: &[Box3D],
    grid: &AnchorGrid,
    thr: &MatchThresholds,
    mode: IouMode,
) -> Result<TargetAssignment, AnchorError> {
    thr.validate()?;
    let n = grid.len();
    let mut best_iou = vec![0.0; n];
    let mut best_gt = vec![u32::MAX; n];
    let mut forced = Vec::with_capacity(gts.len());
    for (g, b) in gts.iter().enumerate() {
        b.validate()?;
        let mut top: Option<(f64, f64, usize)> = None;
        for i in grid.candidates(b) {
            let a = grid.anchor(i).bbox;
            if bev_intersection_area(&a, b) == 0.0 {
                continue;
            }
            let v = iou(&a, b, mode)?;
            if v > best_iou[i] {
                best_iou[i] = v;
                best_gt[i] = g as u32;
            }
            if v > 0.0 {
                let d = (a.center - b.center).norm();
                let better = match top {
                    None => true,
                    Some((tv, td, ti)) => v > tv || (v == tv && (d < td || (d == td && i < ti))),
                };
                if better {
                    top = Some((v, d, i));
                }
            }
        }
        forced.push(top.map_or_else(|| grid.nearest(&b.center), |t| t.2));
    }
    let nl = grid.layers.len();
    let mut labels: Vec<AnchorLabel> = (0..n)
        .map(|i| {
            let v = best_iou[i];
            if v >= thr.positive {
                AnchorLabel::Positive {
                    class_id: (i % nl) as u32,
                    gt: best_gt[i],
                }
            } else if v < thr.negative {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignored
            }
        })
        .collect();
    for (g, &i) in forced.iter().enumerate() {
        labels[i] = AnchorLabel::Positive {
            class_id: (i % nl) as u32,
            gt: g as u32,
        };
    }
    Ok(TargetAssignment {
        labels,
        best_iou,
        forced,
    })
}

/// Box regression targets relative to an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dl: f64,
    pub dw: f64,
    pub dh: f64,
    pub dyaw: f64,
}

impl Residuals {
    pub fn zeros() -> Self {
        Self::from_array([0.0; 7])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.dx, self.dy, self.dz, self.dl, self.dw, self.dh, self.dyaw]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            dx: a[0],
            dy: a[1],
            dz: a[2],
            dl: a[3],
            dw: a[4],
            dh: a[5],
            dyaw: a[6],
        }
    }
}

/// Horizontal offsets over the anchor diagonal, z over the anchor height,
/// log size ratios and a wrapped yaw difference.
pub fn encode_box(gt: &Box3D, anchor: &Box3D) -> Residuals {
    let diag = anchor.size.x.hypot(anchor.size.y);
    Residuals {
        dx: (gt.center.x - anchor.center.x) / diag,
        dy: (gt.center.y - anchor.center.y) / diag,
        dz: z_residual(gt.center.z, anchor.center.z, anchor.size.z),
        dl: (gt.size.x / anchor.size.x).ln(),
        dw: (gt.size.y / anchor.size.y).ln(),
        dh: (gt.size.z / anchor.size.z).ln(),
        dyaw: wrap_angle(gt.yaw - anchor.yaw),
    }
}

/// Inverse of [`encode_box`]; exact for `dyaw` in `(-pi, pi]`.
pub fn decode_box(anchor: &Box3D, r: &Residuals) -> Result<Box3D, AnchorError> {
    if !r.to_array().iter().all(|v| v.is_finite()) {
        return Err(AnchorError::NonFiniteResidual);
    }
    let diag = anchor.size.x.hypot(anchor.size.y);
    Ok(Box3D::new(
        Vec3::new(
            anchor.center.x + r.dx * diag,
            anchor.center.y + r.dy * diag,
            anchor.center.z + r.dz * anchor.size.z,
        ),
        Vec3::new(
            anchor.size.x * r.dl.exp(),
            anchor.size.y * r.dw.exp(),
            anchor.size.z * r.dh.exp(),
        ),
        anchor.yaw + r.dyaw,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: Box3D,
    pub score: f64,
    pub anchor_index: usize,
    pub class_id: usize,
}

/// Greedy suppression: boxes are visited by descending score, ties to the
/// lower anchor index, and dropped when their IoU with a kept box exceeds
/// `iou_thr`.
pub fn nms(dets: &[ScoredBox], iou_thr: f64, mode: IouMode) -> Result<Vec<ScoredBox>, AnchorError> {
    if let Some(i) = dets.iter().position(|d| !d.score.is_finite()) {
        return Err(AnchorError::NonFiniteScore(i));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].anchor_index.cmp(&dets[b].anchor_index))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<ScoredBox> = Vec::new();
    for i in order {
        let d = &dets[i];
        let mut keep = true;
        for k in &kept {
            if iou(&k.bbox, &d.bbox, mode)? > iou_thr {
                keep = false;
                break;
            }
        }
        if keep {
            kept.push(*d);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> AnchorGrid {
        let g = PillarGridSpec {
            x_min: 0.0,
            x_max: 6.4,
            y_min: -3.2,
            y_max: 3.2,
            ..PillarGridSpec::default()
        };
        build_anchor_grid(&g, &AnchorSpec::default()).unwrap()
    }

    #[test]
    fn layer_geometry() {
        let layers = anchor_layers(&AnchorSpec::default());
        assert_eq!(layers.len(), 21);
        assert_eq!(layers[10].z_center, 0.5);
        assert_eq!(layers[10].class_name, "drone_10");
        assert_eq!(layers[0].z_center, -9.5);
        assert_eq!(layers[20].z_center, 10.5);
        assert!(layers.iter().all(|l| l.size == Vec3::new(1.6, 1.6, 1.0)));
        let grid = small_grid();
        assert_eq!(grid.layer_of(0.0), Some(10));
        assert_eq!(grid.layer_of(-0.01), Some(9));
        assert_eq!(grid.layer_of(11.0), None);
    }

    #[test]
    fn z_residual_examples() {
        assert_eq!(z_residual(4.5, 4.5, 1.0), 0.0);
        assert_eq!(z_residual(5.0, 4.5, 1.0), 0.5);
        assert_eq!(z_residual(3.0, 5.0, 1.0), -2.0);
        assert_eq!(z_residual(5.0, 4.5, 2.0), 0.25);
    }

    #[test]
    fn focal_literal_values() {
        let f = |p| focal_cls_term(p, FOCAL_ALPHA, FOCAL_GAMMA, FocalVariant::Literal).unwrap();
        assert_eq!(f(1.0), 0.0);
        assert_eq!(f(0.0), -0.25);
        assert_eq!(f(0.5), -0.0625);
        assert!(focal_cls_term(1.5, 0.25, 2.0, FocalVariant::Literal).is_err());
        let g = focal_cls_term(0.5, 0.25, 2.0, FocalVariant::WithLog).unwrap();
        assert!((g - 0.0625 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_residuals_decode_to_anchor() {
        let grid = small_grid();
        let a = grid.anchor(grid.index(3, 4, 12)).bbox;
        assert_eq!(decode_box(&a, &Residuals::zeros()).unwrap(), a);
        let mut r = Residuals::zeros();
        r.dz = 0.5;
        let a = Box3D::new(Vec3::new(0.0, 0.0, 4.5), Vec3::new(1.6, 1.6, 1.0), 0.0).unwrap();
        assert_eq!(decode_box(&a, &r).unwrap().center.z, 5.0);
    }

    #[test]
    fn anchor_identical_box_is_positive() {
        let grid = small_grid();
        let i = grid.index(5, 7, 10);
        let gt = grid.anchor(i).bbox;
        let t = assign_targets(&[gt], &grid, &MatchThresholds::default(), IouMode::ThreeD).unwrap();
        assert_eq!(t.labels[i], AnchorLabel::Positive { class_id: 10, gt: 0 });
        assert_eq!(t.forced, vec![i]);
        assert_eq!(t.best_iou[i], 1.0);
    }

    #[test]
    fn far_box_forces_nearest_anchor() {
        let grid = small_grid();
        let gt = Box3D::new(Vec3::new(3.3, 0.1, 40.0), Vec3::new(1.0, 1.0, 1.0), 0.0).unwrap();
        let t = assign_targets(&[gt], &grid, &MatchThresholds::default(), IouMode::ThreeD).unwrap();
        let pos: Vec<usize> = t.positives().collect();
        assert_eq!(pos.len(), 1);
        let a = grid.anchor(pos[0]);
        assert_eq!(a.layer, 20);
        assert!(t
            .labels
            .iter()
            .enumerate()
            .all(|(i, l)| i == pos[0] || *l == AnchorLabel::Negative));
    }

    #[test]
    fn nms_keeps_highest_of_duplicates() {
        let b = Box3D::new(Vec3::zeros(), Vec3::new(1.6, 1.6, 1.0), 0.0).unwrap();
        let d = |score, anchor_index| ScoredBox {
            bbox: b,
            score,
            anchor_index,
            class_id: 0,
        };
        let kept = nms(&[d(0.8, 0), d(0.9, 1)], 0.5, IouMode::ThreeD).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
        let kept = nms(&[d(0.9, 5), d(0.9, 2)], 0.5, IouMode::ThreeD).unwrap();
        assert_eq!(kept[0].anchor_index, 2);
        assert_eq!(nms(&[d(f64::NAN, 0)], 0.5, IouMode::ThreeD), Err(AnchorError::NonFiniteScore(0)));
    }
}
