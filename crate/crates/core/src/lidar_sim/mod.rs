//! Digital-twin LiDAR: rosette scan pattern, BVH ray casting against a
//! triangle mesh, the rigid ray transform that replaces posing the mesh,
//! Lambertian returns, frame assembly and directivity maps.

mod bvh;
mod directivity;
mod mesh;
mod pattern;
mod sim;
mod trig;

pub use bvh::{Aabb, Bvh, Hit, TraversalStats};
pub use directivity::{
    directivity_analysis, DirectivityGrid, DirectivityRegion, VoxelCount, THRESHOLD_DENSE,
    THRESHOLD_SPARSE,
};
pub use mesh::TriangleMesh;
pub use pattern::{gen_pattern, ScanPattern, TimedRay};
pub use sim::{
    intersect, lambertian, lambertian_deg, posed_label, simulate_frame, transform_rays, SimFrame, SimOptions,
    LABEL_PADDING, MIN_CLUSTER_HITS,
};
pub use trig::cos_pi;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rot_z, wrap_angle, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("scan duration must be positive, got {0} us")]
    NonPositiveDuration(f64),
    #[error("invalid scan pattern: {0}")]
    InvalidPattern(String),
    #[error("mesh has no usable triangles")]
    EmptyMesh,
    #[error("triangle {triangle} references vertex {index} of {vertices}")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        vertices: usize,
    },
    #[error("vertex {0} is not finite")]
    NonFiniteVertex(usize),
    #[error("incidence angle {0} rad is outside [0, pi/2]")]
    AngleOutOfRange(f64),
    #[error("directivity threshold must be at least 1")]
    ZeroThreshold,
    #[error("invalid directivity region: {0}")]
    InvalidRegion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub dir: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Self {
            origin,
            dir: dir.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Yaw about +z and the position of the mesh center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub yaw: f64,
    pub translation: Vec3,
}

impl Pose2D {
    pub fn new(yaw: f64, translation: Vec3) -> Self {
        Self {
            yaw: wrap_angle(yaw),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, Vec3::zeros())
    }

    /// Places a rest-frame point whose mesh center is `center`.
    pub fn apply(&self, center: &Vec3, p: &Vec3) -> Vec3 {
        rot_z(self.yaw) * (p - center) + self.translation
    }
}
