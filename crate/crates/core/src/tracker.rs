//! Tracking by detection with geometric re-centering on dropout, and
//! pairwise separation alerts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Box3D, ScanFrame, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("frame at {t_us} us does not follow the previous frame at {last_us} us")]
    OutOfOrder { t_us: f64, last_us: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Largest center distance for a detection to continue a track, meters.
    pub gate: f64,
    /// Consecutive skipped frames after which a track is dropped.
    pub max_skips: usize,
    /// Alert when two tracks are closer than this, meters.
    pub separation: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate: 2.0,
            max_skips: 10,
            separation: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackState {
    /// Updated from a detection this frame.
    Detected,
    /// Re-centered on the frame's points.
    Tracked,
    /// No detection and no enclosed points; the box was only predicted.
    Coasting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub bbox: Box3D,
    pub state: TrackState,
    /// Meters per second; set once two detections have been confirmed.
    pub velocity: Option<Vec3>,
    /// The two latest confirmed detection centers with their times, oldest first.
    pub confirmed: Vec<(Vec3, f64)>,
    pub skips: usize,
    pub updated_us: f64,
}

impl Track {
    fn confirm(&mut self, bbox: Box3D, t_us: f64) {
        self.bbox = bbox;
        self.state = TrackState::Detected;
        self.skips = 0;
        self.confirmed.push((bbox.center, t_us));
        if self.confirmed.len() > 2 {
            self.confirmed.remove(0);
        }
        if let [(c0, t0), (c1, t1)] = self.confirmed[..] {
            if t1 > t0 {
                self.velocity = Some((c1 - c0) / ((t1 - t0) * 1e-6));
            }
        }
    }
}

/// Moves the box by `velocity * dt_s`, then centers it on the 3-D centroid
/// of the enclosed frame points with yaw from their principal horizontal
/// axis. `None` when the moved box encloses no points.
pub fn recenter(prev: &Box3D, frame: &ScanFrame, velocity: Option<Vec3>, dt_s: f64) -> Option<Box3D> {
    let predicted = prev.translated(&(velocity.unwrap_or_else(Vec3::zeros) * dt_s));
    let enclosed: Vec<Vec3> = frame
        .points
        .iter()
        .map(|p| p.position())
        .filter(|p| predicted.contains(p))
        .collect();
    if enclosed.is_empty() {
        return None;
    }
    let n = enclosed.len() as f64;
    let centroid = enclosed.iter().sum::<Vec3>() / n;
    let yaw = principal_yaw(&enclosed, &centroid).map_or(prev.yaw, |phi| closest_mod_pi(phi, prev.yaw));
    Some(Box3D {
        center: centroid,
        size: prev.size,
        yaw,
    })
}

/// Direction of largest horizontal spread, in `(-pi/2, pi/2]`; `None` when
/// the scatter has no preferred axis.
pub fn principal_yaw(points: &[Vec3], centroid: &Vec3) -> Option<f64> {
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - centroid.x, p.y - centroid.y);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let spread = (sxx - syy).hypot(2.0 * sxy);
    if spread <= 1e-9 * (sxx + syy) || spread == 0.0 {
        return None;
    }
    Some(0.5 * (2.0 * sxy).atan2(sxx - syy))
}

/// The angle congruent to `phi` modulo pi that is closest to `reference`.
fn closest_mod_pi(phi: f64, reference: f64) -> f64 {
    let k = ((reference - phi) / std::f64::consts::PI).round();
    wrap_angle(phi + k * std::f64::consts::PI)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationAlert {
    pub t_us: f64,
    pub a: u64,
    pub b: u64,
    pub distance: f64,
    pub threshold: f64,
}

/// One alert per pair of tracks whose centers are closer than `threshold`.
pub fn separation_monitor(tracks: &[Track], threshold: f64, t_us: f64) -> Vec<SeparationAlert> {
    let mut out = Vec::new();
    for (i, a) in tracks.iter().enumerate() {
        for b in &tracks[i + 1..] {
            let distance = (a.bbox.center - b.bbox.center).norm();
            if distance < threshold {
                let (a, b) = if a.id < b.id { (a.id, b.id) } else { (b.id, a.id) };
                out.push(SeparationAlert {
                    t_us,
                    a,
                    b,
                    distance,
                    threshold,
                });
            }
        }
    }
    out
}

/// One row of the track log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub t_us: f64,
    pub id: u64,
    pub state: TrackState,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub velocity: Option<[f64; 3]>,
}

impl From<(&Track, f64)> for TrackRecord {
    fn from((t, t_us): (&Track, f64)) -> Self {
        Self {
            t_us,
            id: t.id,
            state: t.state,
            center: t.bbox.center.into(),
            size: t.bbox.size.into(),
            yaw: t.bbox.yaw,
            velocity: t.velocity.map(Into::into),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub records: Vec<TrackRecord>,
    pub alerts: Vec<SeparationAlert>,
    pub dropped: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_us: Option<f64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            tracks: Vec::new(),
            next_id: 0,
            last_us: None,
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Advances by one frame, stamped with the frame start.
    ///
    /// Detections continue the nearest track within the gate, greedily by
    /// distance; tracks left without a detection are re-centered on the
    /// frame, or coast on their velocity when no point is enclosed; left-over
    /// detections start new tracks.
    pub fn step(&mut self, frame: &ScanFrame, detections: &[Box3D]) -> Result<StepOutput, TrackError> {
        let t_us = frame.start_us;
        if let Some(last_us) = self.last_us {
            if t_us <= last_us {
                return Err(TrackError::OutOfOrder { t_us, last_us });
            }
        }
        let dt_s = self.last_us.map_or(0.0, |l| (t_us - l) * 1e-6);
        self.last_us = Some(t_us);

        let mut pairs = Vec::new();
        for (ti, tr) in self.tracks.iter().enumerate() {
            let predicted = tr.bbox.center + tr.velocity.unwrap_or_else(Vec3::zeros) * dt_s;
            for (di, d) in detections.iter().enumerate() {
                let dist = (d.center - predicted).norm().min((d.center - tr.bbox.center).norm());
                if dist <= self.config.gate {
                    pairs.push((dist, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_done = vec![false; self.tracks.len()];
        let mut det_done = vec![false; detections.len()];
        for (_, ti, di) in pairs {
            if !track_done[ti] && !det_done[di] {
                track_done[ti] = true;
                det_done[di] = true;
                self.tracks[ti].confirm(detections[di], t_us);
            }
        }
        let mut dropped = Vec::new();
        for (ti, tr) in self.tracks.iter_mut().enumerate() {
            if track_done[ti] {
                tr.updated_us = t_us;
                continue;
            }
            match recenter(&tr.bbox, frame, tr.velocity, dt_s) {
                Some(b) => {
                    tr.bbox = b;
                    tr.state = TrackState::Tracked;
                    tr.skips = 0;
                }
                None => {
                    tr.bbox = tr.bbox.translated(&(tr.velocity.unwrap_or_else(Vec3::zeros) * dt_s));
                    tr.state = TrackState::Coasting;
                    tr.skips += 1;
                    if tr.skips >= self.config.max_skips {
                        dropped.push(tr.id);
                    }
                }
            }
            tr.updated_us = t_us;
        }
        self.tracks.retain(|t| !dropped.contains(&t.id));
        for (di, d) in detections.iter().enumerate() {
            if det_done[di] {
                continue;
            }
            let mut tr = Track {
                id: self.next_id,
                bbox: *d,
                state: TrackState::Detected,
                velocity: None,
                confirmed: Vec::new(),
                skips: 0,
                updated_us: t_us,
            };
            tr.confirm(*d, t_us);
            self.next_id += 1;
            self.tracks.push(tr);
        }
        Ok(StepOutput {
            records: self.tracks.iter().map(|t| (t, t_us).into()).collect(),
            alerts: separation_monitor(&self.tracks, self.config.separation, t_us),
            dropped,
        })
    }
}
