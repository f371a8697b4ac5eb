//! Non-repetitive rosette scan pattern.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Ray, SimError};
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanPattern {
    pub points_per_second: f64,
    pub h_fov_deg: f64,
    pub v_fov_deg: f64,
    /// Rotation rate of the first prism in Hz.
    pub f1_hz: f64,
    /// Rotation rate of the counter-rotating prism in Hz.
    pub f2_hz: f64,
    pub seed: u64,
}

impl Default for ScanPattern {
    fn default() -> Self {
        Self {
            points_per_second: 240_000.0,
            h_fov_deg: 70.4,
            v_fov_deg: 77.2,
            f1_hz: 100.0 * 3f64.sqrt(),
            f2_hz: 100.0 * 2f64.sqrt(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedRay {
    pub ray: Ray,
    pub t_us: f64,
}

impl ScanPattern {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.points_per_second) {
            return Err(SimError::InvalidPattern("rate must be positive".into()));
        }
        if !(ok(self.h_fov_deg) && self.h_fov_deg < 180.0 && ok(self.v_fov_deg) && self.v_fov_deg < 180.0) {
            return Err(SimError::InvalidPattern("fields of view must lie in (0, 180) degrees".into()));
        }
        if !(ok(self.f1_hz) && ok(self.f2_hz)) {
            return Err(SimError::InvalidPattern("prism rates must be positive".into()));
        }
        Ok(())
    }

    fn phases(&self) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let tau = std::f64::consts::TAU;
        (rng.random_range(0.0..tau), rng.random_range(0.0..tau))
    }

    /// Normalised rosette coordinates at time `t_us`, inside the unit disk.
    pub fn rosette(&self, t_us: f64) -> (f64, f64) {
        let (p1, p2) = self.phases();
        self.rosette_with(t_us, p1, p2)
    }

    fn rosette_with(&self, t_us: f64, p1: f64, p2: f64) -> (f64, f64) {
        let t = t_us * 1e-6;
        let tau = std::f64::consts::TAU;
        let a1 = tau * self.f1_hz * t + p1;
        let a2 = tau * self.f2_hz * t + p2;
        (0.5 * (a1.cos() + a2.cos()), 0.5 * (a1.sin() - a2.sin()))
    }

    /// Azimuth and elevation in radians for rosette coordinates.
    pub fn angles(&self, u: f64, v: f64) -> (f64, f64) {
        (
            u * 0.5 * self.h_fov_deg.to_radians(),
            v * 0.5 * self.v_fov_deg.to_radians(),
        )
    }

    /// Whether a sensor-frame direction lies inside the elliptical field of view.
    pub fn in_fov(&self, dir: &Vec3) -> bool {
        let az = dir.y.atan2(dir.x);
        let el = dir.z.atan2(dir.x.hypot(dir.y));
        let a = az / (0.5 * self.h_fov_deg.to_radians());
        let e = el / (0.5 * self.v_fov_deg.to_radians());
        a * a + e * e <= 1.0 + 1e-12
    }

    pub fn ray_count(&self, duration_us: f64) -> usize {
        (self.points_per_second * duration_us * 1e-6).round() as usize
    }
}

/// Rays fired during `[start_us, start_us + duration_us)`, from the sensor
/// origin, centerline on +x. Ray `i` fires at `start_us + (i + 0.5) / rate`,
/// so a longer window from the same start extends a shorter one.
pub fn gen_pattern(
    pattern: &ScanPattern,
    start_us: f64,
    duration_us: f64,
) -> Result<Vec<TimedRay>, SimError> {
    pattern.validate()?;
    if !(duration_us.is_finite() && duration_us > 0.0) {
        return Err(SimError::NonPositiveDuration(duration_us));
    }
    let n = pattern.ray_count(duration_us);
    let period = 1e6 / pattern.points_per_second;
    let (p1, p2) = pattern.phases();
    Ok((0..n)
        .map(|i| {
            let t_us = start_us + (i as f64 + 0.5) * period;
            let (u, v) = pattern.rosette_with(t_us, p1, p2);
            let (az, el) = pattern.angles(u, v);
            let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            TimedRay {
                ray: Ray {
                    origin: Vec3::zeros(),
                    dir,
                },
                t_us,
            }
        })
        .collect())
}
