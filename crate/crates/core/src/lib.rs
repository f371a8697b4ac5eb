//! Sensing toolkit for airborne drone detection from LiDAR.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`spconv`]: scatter-based dense, sparse, submanifold and transposed 2-D
//!   convolution, active-site compaction and a backbone benchmark graph.
//! * [`pillars`]: grid assignment, point decoration and pillar max-pooling
//!   into a dense pseudo-image.
//! * [`anchors`]: the altitude-stratified anchor grid, target assignment,
//!   residual coding, focal classification term and NMS.
//! * [`lidar_sim`]: rosette scan patterns, BVH ray casting, the pose
//!   transform that avoids rebuilding the BVH, and directivity analysis.
//! * [`augment`]: blended-reality dataset construction and the Euclidean
//!   augmentation baseline.
//! * [`tracker`]: tracking-by-detection and separation alerting.
//! * [`eval`]: 3-D IoU, TP/FP/FN matching and precision/recall/F1.
//! * [`io`]: point, tensor, mesh and record file formats, frame windowing
//!   and configuration.

pub mod anchors;
pub mod augment;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod lidar_sim;
pub mod pillars;
pub mod spconv;
pub mod tracker;

pub use geometry::{Box3D, LidarPoint, ScanFrame, Vec3};
