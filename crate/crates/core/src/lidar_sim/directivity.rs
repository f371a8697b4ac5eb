//! Directivity response: how many returns a mesh collects at each 1 m
//! voxel of the field of view in a fixed window.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bvh::Bvh;
use super::pattern::{gen_pattern, ScanPattern, TimedRay};
use super::sim::{simulate_rays, SimOptions};
use super::{Pose2D, SimError};
use crate::geometry::Vec3;

/// Sparse-coverage preset, points per voxel.
pub const THRESHOLD_SPARSE: usize = 4;
/// Dense-coverage preset, points per voxel.
pub const THRESHOLD_DENSE: usize = 14;

/// Voxel grid bounds in the sensor frame; voxel centers sit at
/// `min + (i + 0.5) * voxel` for every index whose center is below `max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectivityRegion {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub voxel: f64,
}

impl Default for DirectivityRegion {
    fn default() -> Self {
        Self {
            min: [0.0, -30.0, -30.0],
            max: [40.0, 30.0, 30.0],
            voxel: 1.0,
        }
    }
}

impl DirectivityRegion {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.voxel.is_finite() && self.voxel > 0.0) {
            return Err(SimError::InvalidRegion("voxel size must be positive".into()));
        }
        if (0..3).any(|a| !(self.min[a].is_finite() && self.max[a].is_finite() && self.max[a] > self.min[a])) {
            return Err(SimError::InvalidRegion("every axis needs max > min".into()));
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<Vec3> {
        let n = |a: usize| ((self.max[a] - self.min[a]) / self.voxel).round().max(0.0) as usize;
        let mut out = Vec::new();
        for i in 0..n(0) {
            for j in 0..n(1) {
                for k in 0..n(2) {
                    out.push(Vec3::new(
                        self.min[0] + (i as f64 + 0.5) * self.voxel,
                        self.min[1] + (j as f64 + 0.5) * self.voxel,
                        self.min[2] + (k as f64 + 0.5) * self.voxel,
                    ));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelCount {
    pub center: Vec3,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectivityGrid {
    pub voxel: f64,
    pub window_us: f64,
    pub threshold: usize,
    /// Every voxel in the field of view, in region order.
    pub cells: Vec<VoxelCount>,
}

impl DirectivityGrid {
    pub fn included(&self) -> impl Iterator<Item = &VoxelCount> {
        self.cells.iter().filter(move |c| c.count >= self.threshold)
    }

    /// `x,y,z,count` rows for voxels meeting the threshold.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,z,count\n");
        for c in self.included() {
            let _ = writeln!(s, "{},{},{},{}", c.center.x, c.center.y, c.center.z, c.count);
        }
        s
    }
}

/// Places the mesh, unrotated, at every voxel center inside the field of
/// view and counts the returns of one scan window.
pub fn directivity_analysis(
    pattern: &ScanPattern,
    bvh: &Bvh,
    region: &DirectivityRegion,
    window_us: f64,
    threshold: usize,
) -> Result<DirectivityGrid, SimError> {
    if threshold == 0 {
        return Err(SimError::ZeroThreshold);
    }
    region.validate()?;
    let rays = gen_pattern(pattern, 0.0, window_us)?;
    let radius = bvh.mesh().bounding_radius();
    let opts = SimOptions {
        min_hits: 0,
        ..SimOptions::default()
    };
    let centers: Vec<Vec3> = region
        .centers()
        .into_iter()
        .filter(|c| c.norm() > 0.0 && pattern.in_fov(&c.normalize()))
        .collect();
    let cells = centers
        .par_iter()
        .map(|c| {
            let culled = cone_cull(&rays, c, radius);
            let count = if culled.is_empty() {
                0
            } else {
                simulate_rays(&culled, bvh, &Pose2D::new(0.0, *c), 0.0, window_us, &opts)?.hit_count
            };
            Ok(VoxelCount { center: *c, count })
        })
        .collect::<Result<_, SimError>>()?;
    Ok(DirectivityGrid {
        voxel: region.voxel,
        window_us,
        threshold,
        cells,
    })
}

/// Rays whose direction falls inside the cone subtended by the bounding
/// sphere; every other ray misses.
fn cone_cull(rays: &[TimedRay], center: &Vec3, radius: f64) -> Vec<TimedRay> {
    let d = center.norm();
    if d <= radius {
        return rays.to_vec();
    }
    let cos_limit = (1.0 - (radius / d).powi(2)).sqrt() * (1.0 - 1e-9);
    let axis = center / d;
    rays.iter()
        .filter(|r| r.ray.dir.dot(&axis) >= cos_limit)
        .copied()
        .collect()
}
