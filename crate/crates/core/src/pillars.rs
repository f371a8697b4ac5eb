//! Pillar front end: grid assignment, nine-feature point decoration, the
//! per-point encoder with channelwise max, and scattering into a pseudo-image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{LidarPoint, ScanFrame};
use crate::spconv::{ActiveMask, FeatureMap};

pub use crate::spconv::PseudoImage;

/// Number of features per decorated point.
pub const DECORATED_DIM: usize = 9;

/// `[x, y, z, r, x_c, y_c, z_c, x_p, y_p]`.
pub type DecoratedPoint = [f64; DECORATED_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PillarError {
    #[error("invalid pillar grid: {0}")]
    InvalidGrid(String),
    #[error("cannot decorate an empty pillar")]
    EmptyPillar,
    #[error("encoder weights have {found} entries, expected {expected}")]
    WeightShape { expected: usize, found: usize },
    #[error("pillar at ({row}, {col}) lies outside the {rows}x{cols} grid")]
    PillarOutOfGrid {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PillarGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub cell_size: f64,
    pub max_points_per_pillar: usize,
    pub max_pillars: usize,
    /// Feed reflectance to the encoder; when off the `r` feature is zero.
    pub use_intensity: bool,
}

impl Default for PillarGridSpec {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 70.4,
            y_min: -40.0,
            y_max: 40.0,
            z_min: -10.0,
            z_max: 10.0,
            cell_size: 0.16,
            max_points_per_pillar: 100,
            max_pillars: 12_000,
            use_intensity: false,
        }
    }
}

impl PillarGridSpec {
    pub fn validate(&self) -> Result<(), PillarError> {
        let bad = |s: &str| Err(PillarError::InvalidGrid(s.to_string()));
        let all = [
            self.x_min,
            self.x_max,
            self.y_min,
            self.y_max,
            self.z_min,
            self.z_max,
            self.cell_size,
        ];
        if !all.iter().all(|v| v.is_finite()) {
            return bad("bounds and cell size must be finite");
        }
        if self.cell_size <= 0.0 {
            return bad("cell size must be positive");
        }
        if self.x_max <= self.x_min || self.y_max <= self.y_min || self.z_max <= self.z_min {
            return bad("every range must have max > min");
        }
        if self.max_points_per_pillar == 0 || self.max_pillars == 0 {
            return bad("caps must be positive");
        }
        if self.cols() == 0 || self.rows() == 0 {
            return bad("grid has no cells");
        }
        Ok(())
    }

    /// Cells along x.
    pub fn cols(&self) -> usize {
        ((self.x_max - self.x_min) / self.cell_size).round() as usize
    }

    /// Cells along y.
    pub fn rows(&self) -> usize {
        ((self.y_max - self.y_min) / self.cell_size).round() as usize
    }

    /// `(row, col)` of the cell holding the point, if it is in range.
    /// Ranges are half-open on every axis.
    pub fn cell_of(&self, x: f64, y: f64, z: f64) -> Option<(usize, usize)> {
        if !(x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max) {
            return None;
        }
        if !(z >= self.z_min && z < self.z_max) {
            return None;
        }
        let col = ((x - self.x_min) / self.cell_size).floor() as usize;
        let row = ((y - self.y_min) / self.cell_size).floor() as usize;
        (col < self.cols() && row < self.rows()).then_some((row, col))
    }

    /// Horizontal center of a cell.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_min + (col as f64 + 0.5) * self.cell_size,
            self.y_min + (row as f64 + 0.5) * self.cell_size,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pillar {
    pub row: usize,
    pub col: usize,
    /// Points in timestamp order.
    pub points: Vec<LidarPoint>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentReport {
    pub in_range: usize,
    pub out_of_range: usize,
    /// Points dropped by the per-pillar cap.
    pub truncated_points: usize,
    /// Pillars dropped by the pillar cap.
    pub dropped_pillars: usize,
    /// Points lost with the dropped pillars.
    pub dropped_pillar_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PillarSet {
    /// Row-major order.
    pub pillars: Vec<Pillar>,
    pub report: AssignmentReport,
}

/// Bins in-range points into pillars and enforces both caps.
///
/// Each pillar keeps its earliest points; when there are too many pillars
/// the densest are kept, ties broken row-major.
pub fn assign_pillars(frame: &ScanFrame, spec: &PillarGridSpec) -> Result<PillarSet, PillarError> {
    spec.validate()?;
    let cols = spec.cols();
    let mut report = AssignmentReport::default();
    let mut keyed: Vec<(usize, &LidarPoint)> = Vec::with_capacity(frame.points.len());
    for p in &frame.points {
        match spec.cell_of(p.x, p.y, p.z) {
            Some((row, col)) => keyed.push((row * cols + col, p)),
            None => report.out_of_range += 1,
        }
    }
    report.in_range = keyed.len();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.t_us.total_cmp(&b.1.t_us)));

    let mut pillars: Vec<(usize, Pillar)> = Vec::new();
    for chunk in keyed.chunk_by(|a, b| a.0 == b.0) {
        let key = chunk[0].0;
        let keep = chunk.len().min(spec.max_points_per_pillar);
        report.truncated_points += chunk.len() - keep;
        pillars.push((
            chunk.len(),
            Pillar {
                row: key / cols,
                col: key % cols,
                points: chunk[..keep].iter().map(|(_, p)| **p).collect(),
            },
        ));
    }
    if pillars.len() > spec.max_pillars {
        let mut order: Vec<usize> = (0..pillars.len()).collect();
        order.sort_by(|&a, &b| pillars[b].0.cmp(&pillars[a].0).then(a.cmp(&b)));
        let mut keep = vec![false; pillars.len()];
        for &i in &order[..spec.max_pillars] {
            keep[i] = true;
        }
        let mut kept = Vec::with_capacity(spec.max_pillars);
        for (i, entry) in pillars.into_iter().enumerate() {
            if keep[i] {
                kept.push(entry);
            } else {
                report.dropped_pillars += 1;
                report.dropped_pillar_points += entry.1.points.len();
            }
        }
        pillars = kept;
    }
    if report.truncated_points > 0 || report.dropped_pillars > 0 {
        log::warn!(
            "pillar caps truncated the frame: {} points over the per-pillar cap, {} pillars ({} points) over the pillar cap",
            report.truncated_points,
            report.dropped_pillars,
            report.dropped_pillar_points
        );
    }
    Ok(PillarSet {
        pillars: pillars.into_iter().map(|(_, p)| p).collect(),
        report,
    })
}

/// Appends the pillar-mean and cell-center offsets to each point.
pub fn decorate(pillar: &Pillar, spec: &PillarGridSpec) -> Result<Vec<DecoratedPoint>, PillarError> {
    if pillar.points.is_empty() {
        return Err(PillarError::EmptyPillar);
    }
    let n = pillar.points.len() as f64;
    let (sx, sy, sz) = pillar
        .points
        .iter()
        .fold((0.0, 0.0, 0.0), |(a, b, c), p| (a + p.x, b + p.y, c + p.z));
    let (mx, my, mz) = (sx / n, sy / n, sz / n);
    let (cx, cy) = spec.cell_center(pillar.row, pillar.col);
    Ok(pillar
        .points
        .iter()
        .map(|p| {
            [
                p.x,
                p.y,
                p.z,
                if spec.use_intensity { p.intensity } else { 0.0 },
                p.x - mx,
                p.y - my,
                p.z - mz,
                p.x - cx,
                p.y - cy,
            ]
        })
        .collect())
}

/// Per-point linear embedding with optional ReLU, reduced by channelwise max.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEncoder {
    channels: usize,
    /// `[F][9]` row-major.
    weights: Vec<f32>,
    bias: Vec<f32>,
    relu: bool,
}

impl PointEncoder {
    pub fn new(
        channels: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
        relu: bool,
    ) -> Result<Self, PillarError> {
        if weights.len() != channels * DECORATED_DIM {
            return Err(PillarError::WeightShape {
                expected: channels * DECORATED_DIM,
                found: weights.len(),
            });
        }
        if bias.len() != channels {
            return Err(PillarError::WeightShape {
                expected: channels,
                found: bias.len(),
            });
        }
        Ok(Self {
            channels,
            weights,
            bias,
            relu,
        })
    }

    /// Passes the nine features straight through.
    pub fn identity() -> Self {
        let mut w = vec![0.0; DECORATED_DIM * DECORATED_DIM];
        for i in 0..DECORATED_DIM {
            w[i * DECORATED_DIM + i] = 1.0;
        }
        Self::new(DECORATED_DIM, w, vec![0.0; DECORATED_DIM], false).unwrap()
    }

    pub fn random(channels: usize, relu: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (3.0 / DECORATED_DIM as f32).sqrt();
        let weights = (0..channels * DECORATED_DIM)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        let bias = (0..channels).map(|_| rng.random_range(-0.1..0.1)).collect();
        Self::new(channels, weights, bias, relu).unwrap()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn embed(&self, p: &DecoratedPoint) -> Vec<f32> {
        (0..self.channels)
            .map(|f| {
                let row = &self.weights[f * DECORATED_DIM..(f + 1) * DECORATED_DIM];
                let v = row
                    .iter()
                    .zip(p)
                    .fold(self.bias[f], |acc, (w, x)| acc + w * (*x as f32));
                if self.relu {
                    v.max(0.0)
                } else {
                    v
                }
            })
            .collect()
    }

    /// Channelwise max of the embeddings; `points` must be non-empty.
    pub fn encode_pillar(&self, points: &[DecoratedPoint]) -> Result<Vec<f32>, PillarError> {
        let mut it = points.iter();
        let mut acc = self.embed(it.next().ok_or(PillarError::EmptyPillar)?);
        for p in it {
            for (a, v) in acc.iter_mut().zip(self.embed(p)) {
                *a = a.max(v);
            }
        }
        Ok(acc)
    }
}

/// Encodes every pillar and scatters the features into a pseudo-image whose
/// occupancy is exactly the set of pillars.
pub fn pillar_encode(
    pillars: &[Pillar],
    spec: &PillarGridSpec,
    encoder: &PointEncoder,
) -> Result<PseudoImage, PillarError> {
    spec.validate()?;
    let (rows, cols) = (spec.rows(), spec.cols());
    let features: Vec<Vec<f32>> = pillars
        .par_iter()
        .map(|p| {
            if p.row >= rows || p.col >= cols {
                return Err(PillarError::PillarOutOfGrid {
                    row: p.row,
                    col: p.col,
                    rows,
                    cols,
                });
            }
            encoder.encode_pillar(&decorate(p, spec)?)
        })
        .collect::<Result<_, _>>()?;
    let mut map = FeatureMap::zeros(rows, cols, encoder.channels());
    let mut occupancy = ActiveMask::new(rows, cols);
    for (p, f) in pillars.iter().zip(features) {
        map.pixel_mut(p.row, p.col).copy_from_slice(&f);
        occupancy.set(p.row, p.col, true);
    }
    Ok(PseudoImage::new(map, occupancy).expect("grid dimensions agree"))
}

/// Assignment followed by encoding.
pub fn frame_to_pseudo_image(
    frame: &ScanFrame,
    spec: &PillarGridSpec,
    encoder: &PointEncoder,
) -> Result<(PseudoImage, AssignmentReport), PillarError> {
    let set = assign_pillars(frame, spec)?;
    let img = pillar_encode(&set.pillars, spec, encoder)?;
    Ok((img, set.report))
}
