//! Points, frames and oriented boxes shared by every stage.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box dimensions must be positive and finite, got {0:?}")]
    DegenerateBox([f64; 3]),
    #[error("box center or yaw is not finite")]
    NonFiniteBox,
}

/// A single LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Reflectance normalised to `[0, 1]`.
    pub intensity: f64,
    /// Timestamp in microseconds.
    pub t_us: f64,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64, t_us: f64) -> Self {
        Self {
            x,
            y,
            z,
            intensity,
            t_us,
        }
    }

    #[inline]
    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn with_position(mut self, p: &Vec3) -> Self {
        self.x = p.x;
        self.y = p.y;
        self.z = p.z;
        self
    }
}

/// A time window of returns. The window is half-open: `[start_us, start_us + window_us)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFrame {
    pub start_us: f64,
    pub window_us: f64,
    pub points: Vec<LidarPoint>,
}

impl ScanFrame {
    pub fn new(start_us: f64, window_us: f64, points: Vec<LidarPoint>) -> Self {
        Self {
            start_us,
            window_us,
            points,
        }
    }

    pub fn empty(start_us: f64, window_us: f64) -> Self {
        Self::new(start_us, window_us, Vec::new())
    }

    pub fn end_us(&self) -> f64 {
        self.start_us + self.window_us
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains_time(&self, t_us: f64) -> bool {
        t_us >= self.start_us && t_us < self.end_us()
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; keep the half-open convention exact.
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Counter-clockwise rotation about the z axis.
pub fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Oriented 3-D box. `size` is (length, width, height); `yaw` rotates the
/// length axis counter-clockwise from +x about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: Vec3,
    pub size: Vec3,
    pub yaw: f64,
}

impl Box3D {
    pub fn new(center: Vec3, size: Vec3, yaw: f64) -> Result<Self, GeometryError> {
        let b = Self {
            center,
            size,
            yaw: wrap_angle(yaw),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.center.iter().all(|v| v.is_finite()) && self.yaw.is_finite()) {
            return Err(GeometryError::NonFiniteBox);
        }
        if !self.size.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(GeometryError::DegenerateBox([
                self.size.x,
                self.size.y,
                self.size.z,
            ]));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    pub fn z_min(&self) -> f64 {
        self.center.z - 0.5 * self.size.z
    }

    pub fn z_max(&self) -> f64 {
        self.center.z + 0.5 * self.size.z
    }

    /// Expresses a world point in the box's local frame.
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        rot_z(-self.yaw) * (p - self.center)
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Vec3) -> bool {
        self.contains_with_margin(p, 0.0)
    }

    pub fn contains_with_margin(&self, p: &Vec3, margin: f64) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= 0.5 * self.size.x + margin
            && l.y.abs() <= 0.5 * self.size.y + margin
            && l.z.abs() <= 0.5 * self.size.z + margin
    }

    /// Bird's-eye-view corners, counter-clockwise.
    pub fn bev_corners(&self) -> [Vec2; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.size.x;
        let hw = 0.5 * self.size.y;
        let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
        local.map(|(lx, ly)| {
            Vec2::new(
                self.center.x + c * lx - s * ly,
                self.center.y + s * lx + c * ly,
            )
        })
    }

    /// Radius of the smallest circle around the center containing the BEV footprint.
    pub fn bev_radius(&self) -> f64 {
        0.5 * self.size.x.hypot(self.size.y)
    }

    pub fn translated(&self, d: &Vec3) -> Self {
        Self {
            center: self.center + d,
            ..*self
        }
    }
}
