//! Ray transform, intersection, Lambertian returns and frame assembly.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bvh::{Bvh, Hit, TraversalStats};
use super::pattern::{gen_pattern, ScanPattern, TimedRay};
use super::trig::cos_pi;
use super::{Pose2D, Ray, SimError};
use crate::geometry::{rot_z, Box3D, LidarPoint, ScanFrame, Vec3};

/// Fewest hits for a simulated cluster to be kept.
pub const MIN_CLUSTER_HITS: usize = 10;

/// Re-expresses sensor-frame rays in the rest frame of a mesh centered at
/// `mesh_center`, so that casting them against the unposed mesh is
/// equivalent to casting the originals against the posed one.
///
/// Directions are rotated by `-yaw`; origins are shifted to the posed mesh
/// center, rotated by `-yaw`, and shifted onto the rest-frame center.
pub fn transform_rays(rays: &[Ray], pose: &Pose2D, mesh_center: &Vec3) -> Vec<Ray> {
    let r = rot_z(-pose.yaw);
    rays.iter()
        .map(|ray| Ray {
            origin: r * (ray.origin - pose.translation) + mesh_center,
            dir: r * ray.dir,
        })
        .collect()
}

/// Nearest hit per ray, in parallel; output order follows the input.
pub fn intersect(rays: &[Ray], bvh: &Bvh) -> (Vec<Option<Hit>>, TraversalStats) {
    let per: Vec<(Option<Hit>, TraversalStats)> = rays.par_iter().map(|r| bvh.intersect(r)).collect();
    let mut total = TraversalStats::default();
    let hits = per
        .into_iter()
        .map(|(h, s)| {
            total += s;
            h
        })
        .collect();
    (hits, total)
}

/// `I0 * cos(alpha)` for `alpha` in `[0, pi/2]` radians. The angle is
/// reduced as a multiple of pi before evaluation, so 0, `PI / 3` and
/// `PI / 2` give exactly `I0`, `I0 / 2` and 0.
pub fn lambertian(i0: f64, alpha: f64) -> Result<f64, SimError> {
    if !(0.0..=FRAC_PI_2).contains(&alpha) {
        return Err(SimError::AngleOutOfRange(alpha));
    }
    Ok(i0 * cos_pi((alpha / PI).min(0.5)))
}

/// [`lambertian`] with the angle in degrees.
pub fn lambertian_deg(i0: f64, alpha_deg: f64) -> Result<f64, SimError> {
    if !(0.0..=90.0).contains(&alpha_deg) {
        return Err(SimError::AngleOutOfRange(alpha_deg.to_radians()));
    }
    Ok(i0 * cos_pi(alpha_deg / 180.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    /// Incident intensity.
    pub i0: f64,
    pub min_hits: usize,
    /// Standard deviation of additive range noise in meters; off when `None`.
    pub range_noise_std: Option<f64>,
    pub noise_seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            i0: 1.0,
            min_hits: MIN_CLUSTER_HITS,
            range_noise_std: None,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    /// Returns in the sensor frame; empty when the cluster was rejected.
    pub frame: ScanFrame,
    /// Hits before the cluster-size check.
    pub hit_count: usize,
    pub accepted: bool,
    pub rays: usize,
    /// Posed bounding box of the mesh.
    pub label: Box3D,
    pub stats: TraversalStats,
}

/// Margin added on every side of simulated label boxes, in meters.
pub const LABEL_PADDING: f64 = 0.001;

/// Rest-frame extent, padded, placed at the pose.
pub fn posed_label(bvh: &Bvh, pose: &Pose2D) -> Box3D {
    Box3D {
        center: pose.translation,
        size: bvh.mesh().extent() + Vec3::repeat(2.0 * LABEL_PADDING),
        yaw: pose.yaw,
    }
}

/// One window of the scan against a posed mesh.
pub fn simulate_frame(
    pattern: &ScanPattern,
    bvh: &Bvh,
    pose: &Pose2D,
    start_us: f64,
    window_us: f64,
    opts: &SimOptions,
) -> Result<SimFrame, SimError> {
    let timed = gen_pattern(pattern, start_us, window_us)?;
    simulate_rays(&timed, bvh, pose, start_us, window_us, opts)
}

/// Frame assembly from pre-generated rays; lets callers reuse one pattern
/// across many poses.
pub(crate) fn simulate_rays(
    timed: &[TimedRay],
    bvh: &Bvh,
    pose: &Pose2D,
    start_us: f64,
    window_us: f64,
    opts: &SimOptions,
) -> Result<SimFrame, SimError> {
    let rays: Vec<Ray> = timed.iter().map(|t| t.ray).collect();
    let local = transform_rays(&rays, pose, &bvh.mesh().center());
    let (hits, stats) = intersect(&local, bvh);
    let noise = match opts.range_noise_std {
        Some(s) if s > 0.0 => Some(Normal::new(0.0, s).map_err(|e| SimError::InvalidPattern(e.to_string()))?),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.noise_seed);
    let mut points = Vec::new();
    for (i, h) in hits.iter().enumerate() {
        let Some(h) = h else { continue };
        let mut t = h.t;
        if let Some(n) = &noise {
            t = (t + n.sample(&mut rng)).max(0.0);
        }
        let p = rays[i].at(t);
        let alpha = h.cos_incidence.acos();
        let intensity = lambertian(opts.i0, alpha.min(FRAC_PI_2))?;
        points.push(LidarPoint::new(p.x, p.y, p.z, intensity, timed[i].t_us));
    }
    let hit_count = points.len();
    let accepted = hit_count >= opts.min_hits;
    if !accepted {
        points.clear();
    }
    Ok(SimFrame {
        frame: ScanFrame::new(start_us, window_us, points),
        hit_count,
        accepted,
        rays: rays.len(),
        label: posed_label(bvh, pose),
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidar_sim::TriangleMesh;

    #[test]
    fn identity_pose_leaves_rays() {
        let rays = vec![Ray::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.3, -0.2, 0.9))];
        let c = Vec3::zeros();
        assert_eq!(transform_rays(&rays, &Pose2D::identity(), &c), rays);
    }

    #[test]
    fn quarter_turn_maps_y_to_x() {
        let rays = vec![Ray::new(Vec3::zeros(), Vec3::y())];
        let out = transform_rays(&rays, &Pose2D::new(FRAC_PI_2, Vec3::zeros()), &Vec3::zeros());
        assert!((out[0].dir - Vec3::x()).norm() < 1e-15);
        assert!(((rot_z(FRAC_PI_2) * Vec3::x()) - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn lambertian_landmarks() {
        assert_eq!(lambertian(0.8, 0.0).unwrap(), 0.8);
        assert_eq!(lambertian(0.8, PI / 3.0).unwrap(), 0.4);
        assert_eq!(lambertian(0.8, FRAC_PI_2).unwrap(), 0.0);
        assert_eq!(lambertian_deg(1.0, 60.0).unwrap(), 0.5);
        assert!(lambertian(1.0, 2.0).is_err());
        assert!(lambertian(1.0, -0.1).is_err());
    }

    #[test]
    fn closer_mesh_collects_more_points() {
        let bvh = Bvh::build(TriangleMesh::quadcopter()).unwrap();
        let p = ScanPattern::default();
        let o = SimOptions::default();
        let near = simulate_frame(&p, &bvh, &Pose2D::new(0.3, Vec3::new(10.0, 0.0, 0.0)), 0.0, 1e5, &o)
            .unwrap();
        let far = simulate_frame(&p, &bvh, &Pose2D::new(0.3, Vec3::new(40.0, 0.0, 0.0)), 0.0, 1e5, &o)
            .unwrap();
        assert!(near.hit_count > far.hit_count, "{} vs {}", near.hit_count, far.hit_count);
        assert!(near.accepted);
        assert!(near.frame.points.iter().all(|q| q.intensity >= 0.0 && q.intensity <= 1.0));
        assert!(near
            .frame
            .points
            .iter()
            .all(|q| near.label.contains_with_margin(&q.position(), 1e-6)));
    }

    #[test]
    fn mesh_outside_fov_gives_empty_frame() {
        let bvh = Bvh::build(TriangleMesh::quadcopter()).unwrap();
        let f = simulate_frame(
            &ScanPattern::default(),
            &bvh,
            &Pose2D::new(0.0, Vec3::new(-10.0, 0.0, 0.0)),
            0.0,
            1e5,
            &SimOptions::default(),
        )
        .unwrap();
        assert_eq!(f.hit_count, 0);
        assert!(f.frame.is_empty() && !f.accepted);
    }

    #[test]
    fn thin_cluster_rejected() {
        let bvh = Bvh::build(TriangleMesh::quadcopter()).unwrap();
        let opts = SimOptions {
            min_hits: usize::MAX,
            ..SimOptions::default()
        };
        let f = simulate_frame(
            &ScanPattern::default(),
            &bvh,
            &Pose2D::new(0.0, Vec3::new(10.0, 0.0, 0.0)),
            0.0,
            1e5,
            &opts,
        )
        .unwrap();
        assert!(f.hit_count > 0 && !f.accepted && f.frame.is_empty());
    }
}
