//! File formats, frame windowing and configuration.

mod columnar;
mod config;
mod fixture;
mod las;
mod mesh_io;
mod records;
mod window;

pub use columnar::{format_point, read_columnar, write_columnar, ColumnarReader};
pub use config::{Config, DirectivityConfig, EncoderConfig, EvalConfig, FocalConfig, FramesConfig};
pub use fixture::{read_kernel, read_sparse, write_kernel, write_sparse};
pub use las::{write_las, LasHeader, LasReader, LAS_HEADER_SIZE, PRF3_RECORD_LEN};
pub use mesh_io::{read_mesh, read_off, read_stl, write_off, write_stl};
pub use records::{
    group_by_frame, read_jsonl, write_jsonl, DetectionRecord, LabelRecord,
};
pub use window::{window_frames, FrameWindower};

use std::path::{Path, PathBuf};

use crate::geometry::LidarPoint;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a LAS file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported LAS version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("unsupported point record format {0}, only format 3 is read")]
    UnsupportedFormat(u8),
    #[error("header declares record length {0}, format 3 needs at least 34")]
    RecordTooShort(u16),
    #[error("truncated: {0}")]
    Truncated(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("timestamp {t_us} at point {index} precedes {prev_us}")]
    NonMonotone { index: usize, t_us: f64, prev_us: f64 },
    #[error("window length must be positive, got {0}")]
    BadWindow(f64),
    #[error("json line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("mesh: {0}")]
    Mesh(String),
}

pub type PointStream<'a> = Box<dyn Iterator<Item = Result<LidarPoint, IoError>> + 'a>;

pub(crate) fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>, IoError> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })
}

pub(crate) fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, IoError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })
}

/// Streams points from a `.las` file or, for any other extension, the
/// columnar text format.
pub fn read_points(path: &Path) -> Result<PointStream<'static>, IoError> {
    let r = open(path)?;
    let is_las = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("las"));
    if is_las {
        Ok(Box::new(LasReader::new(r)?))
    } else {
        Ok(Box::new(ColumnarReader::new(r)))
    }
}

/// Writes points as LAS (1 mm scale, zero offset) or columnar text by extension.
pub fn write_points(path: &Path, points: &[LidarPoint]) -> Result<(), IoError> {
    let mut w = create(path)?;
    let is_las = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("las"));
    if is_las {
        write_las(&mut w, points, [0.001; 3], [0.0; 3])?;
    } else {
        write_columnar(&mut w, points)?;
    }
    use std::io::Write;
    w.flush()?;
    Ok(())
}
