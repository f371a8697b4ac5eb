//! Whitespace-separated `x y z intensity t_us`, one point per line.
//! Lines starting with `#` and blank lines are ignored.

use std::io::{BufRead, Write};

use super::IoError;
use crate::geometry::LidarPoint;

/// Shortest text that parses back to the same values.
pub fn format_point(p: &LidarPoint) -> String {
    format!("{} {} {} {} {}", p.x, p.y, p.z, p.intensity, p.t_us)
}

pub fn write_columnar<W: Write>(w: &mut W, points: &[LidarPoint]) -> Result<(), IoError> {
    for p in points {
        writeln!(w, "{}", format_point(p))?;
    }
    Ok(())
}

fn parse_line(line: &str, no: usize) -> Result<LidarPoint, IoError> {
    let err = |msg: String| IoError::Parse { line: no, msg };
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|f| f.parse::<f64>().map_err(|e| err(format!("'{f}': {e}"))))
        .collect::<Result<_, _>>()?;
    if vals.len() != 5 {
        return Err(err(format!("expected 5 columns, found {}", vals.len())));
    }
    if !vals.iter().all(|v| v.is_finite()) {
        return Err(err("non-finite value".into()));
    }
    Ok(LidarPoint::new(vals[0], vals[1], vals[2], vals[3], vals[4]))
}

/// Streaming reader; holds one line at a time.
pub struct ColumnarReader<R> {
    inner: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> ColumnarReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            line: 0,
            buf: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for ColumnarReader<R> {
    type Item = Result<LidarPoint, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line += 1;
            let t = self.buf.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            return Some(parse_line(t, self.line));
        }
    }
}

pub fn read_columnar<R: BufRead>(r: R) -> Result<Vec<LidarPoint>, IoError> {
    ColumnarReader::new(r).collect()
}
