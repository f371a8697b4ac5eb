//! LAS 1.2, point record format 3: streaming reader and a minimal writer.
//! Intensity maps `[0, 1]` onto the full `u16` range; GPS time is stored
//! in seconds and surfaced in microseconds.

use std::io::{Read, Write};

use super::IoError;
use crate::geometry::LidarPoint;

pub const LAS_HEADER_SIZE: usize = 227;
pub const PRF3_RECORD_LEN: usize = 34;

#[derive(Debug, Clone, PartialEq)]
pub struct LasHeader {
    pub version: (u8, u8),
    pub header_size: u16,
    pub point_data_offset: u32,
    pub vlr_count: u32,
    pub format: u8,
    pub record_length: u16,
    pub point_count: u32,
    pub scale: [f64; 3],
    pub offset: [f64; 3],
    /// `[max, min]` per axis.
    pub bounds: [[f64; 2]; 3],
}

fn u16_at(b: &[u8], o: usize) -> u16 {
    u16::from_le_bytes([b[o], b[o + 1]])
}

fn u32_at(b: &[u8], o: usize) -> u32 {
    u32::from_le_bytes(b[o..o + 4].try_into().unwrap())
}

fn i32_at(b: &[u8], o: usize) -> i32 {
    i32::from_le_bytes(b[o..o + 4].try_into().unwrap())
}

fn f64_at(b: &[u8], o: usize) -> f64 {
    f64::from_le_bytes(b[o..o + 8].try_into().unwrap())
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), IoError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            IoError::Truncated(what.to_string())
        } else {
            e.into()
        }
    })
}

impl LasHeader {
    pub fn parse(b: &[u8; LAS_HEADER_SIZE]) -> Result<Self, IoError> {
        let magic: [u8; 4] = b[0..4].try_into().unwrap();
        if &magic != b"LASF" {
            return Err(IoError::BadMagic(magic));
        }
        let version = (b[24], b[25]);
        if version.0 != 1 || version.1 > 4 {
            return Err(IoError::UnsupportedVersion(version.0, version.1));
        }
        let format = b[104] & 0x3f;
        if format != 3 {
            return Err(IoError::UnsupportedFormat(format));
        }
        let record_length = u16_at(b, 105);
        if (record_length as usize) < PRF3_RECORD_LEN {
            return Err(IoError::RecordTooShort(record_length));
        }
        let header_size = u16_at(b, 94);
        let point_data_offset = u32_at(b, 96);
        if (header_size as usize) < LAS_HEADER_SIZE || (point_data_offset as usize) < header_size as usize {
            return Err(IoError::Truncated("header size or point offset smaller than 227 bytes".into()));
        }
        let f = |o| f64_at(b, o);
        Ok(Self {
            version,
            header_size,
            point_data_offset,
            vlr_count: u32_at(b, 100),
            format,
            record_length,
            point_count: u32_at(b, 107),
            scale: [f(131), f(139), f(147)],
            offset: [f(155), f(163), f(171)],
            bounds: [[f(179), f(187)], [f(195), f(203)], [f(211), f(219)]],
        })
    }
}

/// Streams point records; memory use is one record.
pub struct LasReader<R> {
    inner: R,
    header: LasHeader,
    remaining: u32,
    index: u32,
    buf: Vec<u8>,
    failed: bool,
}

impl<R: Read> LasReader<R> {
    pub fn new(mut inner: R) -> Result<Self, IoError> {
        let mut hb = [0u8; LAS_HEADER_SIZE];
        read_full(&mut inner, &mut hb, "header")?;
        let header = LasHeader::parse(&hb)?;
        let skip = header.point_data_offset as u64 - LAS_HEADER_SIZE as u64;
        let skipped = std::io::copy(&mut (&mut inner).take(skip), &mut std::io::sink())?;
        if skipped != skip {
            return Err(IoError::Truncated("variable length records".into()));
        }
        Ok(Self {
            remaining: header.point_count,
            buf: vec![0; header.record_length as usize],
            header,
            inner,
            index: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> &LasHeader {
        &self.header
    }
}

impl<R: Read> Iterator for LasReader<R> {
    type Item = Result<LidarPoint, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 || self.failed {
            return None;
        }
        if let Err(e) = read_full(&mut self.inner, &mut self.buf, &format!("point record {}", self.index)) {
            self.failed = true;
            return Some(Err(e));
        }
        self.remaining -= 1;
        self.index += 1;
        let b = &self.buf;
        let h = &self.header;
        let coord = |a: usize| i32_at(b, 4 * a) as f64 * h.scale[a] + h.offset[a];
        Some(Ok(LidarPoint::new(
            coord(0),
            coord(1),
            coord(2),
            u16_at(b, 12) as f64 / 65535.0,
            f64_at(b, 20) * 1e6,
        )))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (0, Some(self.remaining as usize))
    }
}

/// Writes a LAS 1.2 format-3 file with no variable length records.
pub fn write_las<W: Write>(
    w: &mut W,
    points: &[LidarPoint],
    scale: [f64; 3],
    offset: [f64; 3],
) -> Result<(), IoError> {
    let n = u32::try_from(points.len())
        .map_err(|_| IoError::Config("LAS 1.2 holds at most 2^32 - 1 points".into()))?;
    let mut h = vec![0u8; LAS_HEADER_SIZE];
    h[0..4].copy_from_slice(b"LASF");
    h[24] = 1;
    h[25] = 2;
    let name = b"skyscan";
    h[26..26 + name.len()].copy_from_slice(name);
    h[58..58 + name.len()].copy_from_slice(name);
    h[94..96].copy_from_slice(&(LAS_HEADER_SIZE as u16).to_le_bytes());
    h[96..100].copy_from_slice(&(LAS_HEADER_SIZE as u32).to_le_bytes());
    h[104] = 3;
    h[105..107].copy_from_slice(&(PRF3_RECORD_LEN as u16).to_le_bytes());
    h[107..111].copy_from_slice(&n.to_le_bytes());
    h[111..115].copy_from_slice(&n.to_le_bytes());
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for (a, v) in [p.x, p.y, p.z].into_iter().enumerate() {
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    if points.is_empty() {
        lo = [0.0; 3];
        hi = [0.0; 3];
    }
    for a in 0..3 {
        h[131 + 8 * a..139 + 8 * a].copy_from_slice(&scale[a].to_le_bytes());
        h[155 + 8 * a..163 + 8 * a].copy_from_slice(&offset[a].to_le_bytes());
        h[179 + 16 * a..187 + 16 * a].copy_from_slice(&hi[a].to_le_bytes());
        h[187 + 16 * a..195 + 16 * a].copy_from_slice(&lo[a].to_le_bytes());
    }
    w.write_all(&h)?;
    let mut rec = [0u8; PRF3_RECORD_LEN];
    for (i, p) in points.iter().enumerate() {
        for (a, v) in [p.x, p.y, p.z].into_iter().enumerate() {
            let q = ((v - offset[a]) / scale[a]).round();
            if !(q >= i32::MIN as f64 && q <= i32::MAX as f64) {
                return Err(IoError::Config(format!(
                    "point {i} does not fit the LAS scale and offset"
                )));
            }
            rec[4 * a..4 * a + 4].copy_from_slice(&(q as i32).to_le_bytes());
        }
        let inten = (p.intensity.clamp(0.0, 1.0) * 65535.0).round() as u16;
        rec[12..14].copy_from_slice(&inten.to_le_bytes());
        rec[14] = 0b0000_1001;
        rec[20..28].copy_from_slice(&(p.t_us * 1e-6).to_le_bytes());
        w.write_all(&rec)?;
    }
    Ok(())
}
