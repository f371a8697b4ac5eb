//! JSON-lines records: detections, ground truth, tracks, alerts, manifests.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geometry::{Box3D, GeometryError, Vec3};

/// One box of one frame; used for detections and ground truth alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: u64,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

impl DetectionRecord {
    pub fn from_box(frame: u64, b: &Box3D) -> Self {
        Self {
            frame,
            center: b.center.into(),
            size: b.size.into(),
            yaw: b.yaw,
            score: None,
            class: None,
        }
    }

    pub fn to_box(&self) -> Result<Box3D, GeometryError> {
        Box3D::new(Vec3::from(self.center), Vec3::from(self.size), self.yaw)
    }
}

/// Labels of one augmented frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub frame: u64,
    pub start_us: f64,
    pub window_us: f64,
    pub labels: Vec<crate::augment::Label>,
}

/// Boxes keyed by frame index, in record order within a frame.
pub fn group_by_frame(records: &[DetectionRecord]) -> Result<BTreeMap<u64, Vec<Box3D>>, GeometryError> {
    let mut out: BTreeMap<u64, Vec<Box3D>> = BTreeMap::new();
    for r in records {
        out.entry(r.frame).or_default().push(r.to_box()?);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(r: R) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| IoError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(w: &mut W, items: &[T]) -> Result<(), IoError> {
    for it in items {
        serde_json::to_writer(&mut *w, it).map_err(|source| IoError::Json { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
