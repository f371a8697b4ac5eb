//! Blended-reality training sets: drone/background separation, insertion of
//! simulated clusters at stratified field-of-view positions, and the paired
//! rigid-copy baseline.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rot_z, Box3D, LidarPoint, ScanFrame, Vec3};
use crate::lidar_sim::{
    simulate_frame, Bvh, DirectivityRegion, Pose2D, ScanPattern, SimError, SimOptions,
    MIN_CLUSTER_HITS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugError {
    #[error("frame has no labels")]
    NoLabels,
    #[error("cluster is empty")]
    EmptyCluster,
    #[error("cluster has {found} points, at least {needed} required")]
    ThinCluster { found: usize, needed: usize },
    #[error("background pool needs {needed} admitted frames, only {found} available")]
    PoolExhausted { needed: usize, found: usize },
    #[error("invalid augmentation plan: {0}")]
    InvalidPlan(String),
    #[error("insertion {index} found no position with enough hits after {attempts} attempts")]
    InsertionFailed { index: usize, attempts: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub bbox: Box3D,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFrame {
    pub frame: ScanFrame,
    pub labels: Vec<Label>,
}

impl LabeledFrame {
    /// Points enclosed by each label box.
    pub fn label_point_counts(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|l| {
                self.frame
                    .points
                    .iter()
                    .filter(|p| l.bbox.contains(&p.position()))
                    .count()
            })
            .collect()
    }

    /// Admission rule: at least one label, each enclosing at least
    /// [`MIN_CLUSTER_HITS`] points.
    pub fn is_admitted(&self) -> bool {
        !self.labels.is_empty()
            && self
                .label_point_counts()
                .iter()
                .all(|&c| c >= MIN_CLUSTER_HITS)
    }
}

/// Points inside any label box, and the rest.
pub fn split_frame(frame: &LabeledFrame) -> Result<(Vec<LidarPoint>, Vec<LidarPoint>), AugError> {
    if frame.labels.is_empty() {
        return Err(AugError::NoLabels);
    }
    Ok(frame
        .frame
        .points
        .iter()
        .partition(|p| frame.labels.iter().any(|l| l.bbox.contains(&p.position()))))
}

/// Rigid copy of a cluster: rotated by `yaw` about `source_center`, then
/// moved so that `source_center` lands on `target`.
pub fn euclidean_augment(
    cluster: &[LidarPoint],
    source_center: &Vec3,
    target: &Vec3,
    yaw: f64,
) -> Result<Vec<LidarPoint>, AugError> {
    if cluster.is_empty() {
        return Err(AugError::EmptyCluster);
    }
    let r = rot_z(yaw);
    Ok(cluster
        .iter()
        .map(|p| p.with_position(&(r * (p.position() - source_center) + target)))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Insertion {
    pub frame: LabeledFrame,
    /// Background points removed because they fell inside the new box.
    pub removed: usize,
    pub collision: bool,
}

/// Merges a cluster into a background and labels it. Background points
/// inside the new box are dropped as occluded and flagged as a collision.
pub fn synth_insert(
    background: &ScanFrame,
    cluster: &[LidarPoint],
    label: Label,
) -> Result<Insertion, AugError> {
    let inside = cluster
        .iter()
        .filter(|p| label.bbox.contains(&p.position()))
        .count();
    if inside < MIN_CLUSTER_HITS {
        return Err(AugError::ThinCluster {
            found: inside,
            needed: MIN_CLUSTER_HITS,
        });
    }
    let (kept, removed) = clear_boxes(&background.points, std::slice::from_ref(&label.bbox));
    let mut points = kept;
    points.extend_from_slice(cluster);
    Ok(Insertion {
        frame: LabeledFrame {
            frame: ScanFrame::new(background.start_us, background.window_us, points),
            labels: vec![label],
        },
        removed,
        collision: removed > 0,
    })
}

fn clear_boxes(points: &[LidarPoint], boxes: &[Box3D]) -> (Vec<LidarPoint>, usize) {
    let kept: Vec<LidarPoint> = points
        .iter()
        .filter(|p| !boxes.iter().any(|b| b.contains(&p.position())))
        .copied()
        .collect();
    let removed = points.len() - kept.len();
    (kept, removed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugPlan {
    /// Admitted frames taken, in order, as backgrounds and drone sources.
    pub pool_size: usize,
    /// Augmented frames per dataset.
    pub instances: usize,
    /// Stratified insertion grid.
    pub region: DirectivityRegion,
    pub max_attempts: usize,
    pub seed: u64,
    pub class: String,
}

impl Default for AugPlan {
    fn default() -> Self {
        Self {
            pool_size: 400,
            instances: 2495,
            region: DirectivityRegion {
                min: [5.0, -20.0, -10.0],
                max: [45.0, 20.0, 10.0],
                voxel: 1.0,
            },
            max_attempts: 32,
            seed: 0,
            class: "drone".into(),
        }
    }
}

impl AugPlan {
    pub fn validate(&self) -> Result<(), AugError> {
        if self.pool_size == 0 || self.instances == 0 || self.max_attempts == 0 {
            return Err(AugError::InvalidPlan(
                "pool size, instance count and attempt limit must be positive".into(),
            ));
        }
        self.region.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub background_index: usize,
    /// Pool frame the rigid-copy cluster came from.
    pub source_frame: usize,
    /// Label within that frame.
    pub drone_index: usize,
    pub location: [f64; 3],
    pub yaw: f64,
    pub background_points: usize,
    pub sim_points: usize,
    pub euc_points: usize,
    pub removed_background: usize,
    pub attempts: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDatasets {
    pub sim: Vec<LabeledFrame>,
    pub euc: Vec<LabeledFrame>,
    pub manifest: Vec<ManifestEntry>,
}

struct Drone {
    frame: usize,
    label: usize,
    bbox: Box3D,
    points: Vec<LidarPoint>,
    start_us: f64,
}

/// Builds the paired simulated and rigid-copy datasets.
///
/// Frame `i` of both datasets shares one background, with points inside
/// either inserted box removed, and one insertion location `L`. The
/// simulated cluster is ray traced at `L` with a uniform yaw; the rigid copy
/// is drone `i mod n` of the pool rotated by the same yaw and moved to `L`.
/// Locations walk a shuffled permutation of the field-of-view voxels of the
/// plan's region, jittered inside each voxel.
pub fn build_datasets(
    plan: &AugPlan,
    real_frames: &[LabeledFrame],
    pattern: &ScanPattern,
    bvh: &Bvh,
) -> Result<AugmentedDatasets, AugError> {
    plan.validate()?;
    let admitted: Vec<&LabeledFrame> = real_frames.iter().filter(|f| f.is_admitted()).collect();
    if admitted.len() < plan.pool_size {
        return Err(AugError::PoolExhausted {
            needed: plan.pool_size,
            found: admitted.len(),
        });
    }
    let pool = &admitted[..plan.pool_size];
    let mut backgrounds = Vec::with_capacity(pool.len());
    let mut drones = Vec::new();
    for (fi, f) in pool.iter().enumerate() {
        let (_, bg) = split_frame(f)?;
        backgrounds.push(ScanFrame::new(f.frame.start_us, f.frame.window_us, bg));
        for (li, l) in f.labels.iter().enumerate() {
            drones.push(Drone {
                frame: fi,
                label: li,
                bbox: l.bbox,
                points: f
                    .frame
                    .points
                    .iter()
                    .filter(|p| l.bbox.contains(&p.position()))
                    .copied()
                    .collect(),
                start_us: f.frame.start_us,
            });
        }
    }

    let mut voxels: Vec<Vec3> = plan
        .region
        .centers()
        .into_iter()
        .filter(|c| c.norm() > 0.0 && pattern.in_fov(&c.normalize()))
        .collect();
    if voxels.is_empty() {
        return Err(AugError::InvalidPlan("insertion region lies outside the field of view".into()));
    }
    voxels.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed));

    let results: Vec<(LabeledFrame, LabeledFrame, ManifestEntry)> = (0..plan.instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(i as u64 + 1);
            let background_index = rng.random_range(0..backgrounds.len());
            let bg = &backgrounds[background_index];
            let drone = &drones[i % drones.len()];
            let half = 0.5 * plan.region.voxel;
            let mut attempts = 0;
            let (location, yaw, sim) = loop {
                if attempts == plan.max_attempts {
                    return Err(AugError::InsertionFailed {
                        index: i,
                        attempts,
                    });
                }
                let v = voxels[(i + attempts * plan.instances) % voxels.len()];
                attempts += 1;
                let jitter = Vec3::new(
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                );
                let location = v + jitter;
                let yaw = rng.random_range(-PI..PI);
                let pose = Pose2D::new(yaw, location);
                let sim = simulate_frame(pattern, bvh, &pose, bg.start_us, bg.window_us, &SimOptions::default())?;
                if sim.accepted {
                    break (location, pose.yaw, sim);
                }
            };
            let sim_label = Label {
                bbox: sim.label,
                class: plan.class.clone(),
            };
            let mut euc_points = euclidean_augment(&drone.points, &drone.bbox.center, &location, yaw)?;
            for p in &mut euc_points {
                p.t_us += bg.start_us - drone.start_us;
            }
            let euc_label = Label {
                bbox: Box3D::new(location, drone.bbox.size, drone.bbox.yaw + yaw)
                    .expect("rotated copy of a valid box"),
                class: plan.class.clone(),
            };
            let (shared, removed) = clear_boxes(&bg.points, &[sim_label.bbox, euc_label.bbox]);
            let shared_bg = ScanFrame::new(bg.start_us, bg.window_us, shared);
            let sim_frame = synth_insert(&shared_bg, &sim.frame.points, sim_label)?.frame;
            let euc_frame = synth_insert(&shared_bg, &euc_points, euc_label)?.frame;
            let entry = ManifestEntry {
                index: i,
                background_index,
                source_frame: drone.frame,
                drone_index: drone.label,
                location: [location.x, location.y, location.z],
                yaw,
                background_points: shared_bg.points.len(),
                sim_points: sim.frame.points.len(),
                euc_points: euc_points.len(),
                removed_background: removed,
                attempts,
                seed: plan.seed,
            };
            Ok((sim_frame, euc_frame, entry))
        })
        .collect::<Result<_, AugError>>()?;

    let mut out = AugmentedDatasets {
        sim: Vec::with_capacity(results.len()),
        euc: Vec::with_capacity(results.len()),
        manifest: Vec::with_capacity(results.len()),
    };
    for (s, e, m) in results {
        out.sim.push(s);
        out.euc.push(e);
        out.manifest.push(m);
    }
    Ok(out)
}

/// Stand-in for recorded flights: each frame holds scattered clutter
/// returns and one simulated drone with its label.
pub fn synthetic_real_frames(
    count: usize,
    window_us: f64,
    pattern: &ScanPattern,
    bvh: &Bvh,
    seed: u64,
) -> Result<Vec<LabeledFrame>, AugError> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let start_us = i as f64 * window_us;
            loop {
                let location = Vec3::new(
                    rng.random_range(8.0..30.0),
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-4.0..4.0),
                );
                let pose = Pose2D::new(rng.random_range(-PI..PI), location);
                let sim = simulate_frame(pattern, bvh, &pose, start_us, window_us, &SimOptions::default())?;
                if !sim.accepted {
                    continue;
                }
                let mut points: Vec<LidarPoint> = (0..400)
                    .map(|_| {
                        let r = rng.random_range(5.0..60.0);
                        let az: f64 = rng.random_range(-0.6..0.6);
                        let el: f64 = rng.random_range(-0.6..0.6);
                        LidarPoint::new(
                            r * el.cos() * az.cos(),
                            r * el.cos() * az.sin(),
                            r * el.sin(),
                            rng.random_range(0.0..1.0),
                            start_us + rng.random_range(0.0..window_us),
                        )
                    })
                    .filter(|p| !sim.label.contains(&p.position()))
                    .collect();
                points.extend(sim.frame.points);
                points.sort_by(|a, b| a.t_us.total_cmp(&b.t_us));
                return Ok(LabeledFrame {
                    frame: ScanFrame::new(start_us, window_us, points),
                    labels: vec![Label {
                        bbox: sim.label,
                        class: "drone".into(),
                    }],
                });
            }
        })
        .collect()
}
