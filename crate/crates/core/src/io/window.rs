//! Time windowing of a point stream into frames.

use super::IoError;
use crate::geometry::{LidarPoint, ScanFrame};

/// Groups a time-ordered stream into half-open windows
/// `[t0 + k w, t0 + (k + 1) w)`, with `t0` the first timestamp unless an
/// origin is fixed with [`FrameWindower::with_origin`]. Windows without
/// points are not emitted.
pub struct FrameWindower<I> {
    inner: I,
    window_us: f64,
    t0: Option<f64>,
    pending: Option<LidarPoint>,
    prev_us: f64,
    index: usize,
    done: bool,
}

impl<I: Iterator<Item = Result<LidarPoint, IoError>>> FrameWindower<I> {
    pub fn new(inner: I, window_us: f64) -> Result<Self, IoError> {
        if !(window_us.is_finite() && window_us > 0.0) {
            return Err(IoError::BadWindow(window_us));
        }
        Ok(Self {
            inner,
            window_us,
            t0: None,
            pending: None,
            prev_us: f64::NEG_INFINITY,
            index: 0,
            done: false,
        })
    }

    /// Anchors the window grid at `origin_us`, so that frame `k` always
    /// starts at `origin_us + k w`. Points before the origin are an error.
    pub fn with_origin(inner: I, window_us: f64, origin_us: f64) -> Result<Self, IoError> {
        let mut w = Self::new(inner, window_us)?;
        if !origin_us.is_finite() {
            return Err(IoError::BadWindow(origin_us));
        }
        w.t0 = Some(origin_us);
        w.prev_us = origin_us;
        Ok(w)
    }

    fn pull(&mut self) -> Option<Result<LidarPoint, IoError>> {
        if let Some(p) = self.pending.take() {
            return Some(Ok(p));
        }
        let p = match self.inner.next()? {
            Ok(p) => p,
            Err(e) => return Some(Err(e)),
        };
        if p.t_us.is_nan() || p.t_us < self.prev_us {
            return Some(Err(IoError::NonMonotone {
                index: self.index,
                t_us: p.t_us,
                prev_us: self.prev_us,
            }));
        }
        self.prev_us = p.t_us;
        self.index += 1;
        Some(Ok(p))
    }

    /// Start of the window holding `t`, measured against the same bounds
    /// the emitted frame reports, so rounding cannot split the two.
    fn window_start(&self, t: f64) -> f64 {
        let t0 = self.t0.unwrap();
        let start = |k: f64| t0 + k * self.window_us;
        let mut k = ((t - t0) / self.window_us).floor();
        if t < start(k) {
            k -= 1.0;
        } else if t >= start(k) + self.window_us {
            k += 1.0;
        }
        start(k)
    }
}

impl<I: Iterator<Item = Result<LidarPoint, IoError>>> Iterator for FrameWindower<I> {
    type Item = Result<ScanFrame, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let first = match self.pull()? {
            Ok(p) => p,
            Err(e) => {
                self.done = true;
                return Some(Err(e));
            }
        };
        self.t0.get_or_insert(first.t_us);
        let start = self.window_start(first.t_us);
        let mut frame = ScanFrame::new(start, self.window_us, vec![first]);
        loop {
            match self.pull() {
                None => break,
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e));
                }
                Some(Ok(p)) if frame.contains_time(p.t_us) => frame.points.push(p),
                Some(Ok(p)) => {
                    self.pending = Some(p);
                    break;
                }
            }
        }
        Some(Ok(frame))
    }
}

pub fn window_frames<I>(points: I, window_us: f64) -> Result<FrameWindower<I::IntoIter>, IoError>
where
    I: IntoIterator<Item = Result<LidarPoint, IoError>>,
{
    FrameWindower::new(points.into_iter(), window_us)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(ms: f64) -> Result<LidarPoint, IoError> {
        Ok(LidarPoint::new(0.0, 0.0, 0.0, 0.0, ms * 1000.0))
    }

    #[test]
    fn half_open_boundary() {
        let frames: Vec<ScanFrame> = window_frames(vec![at(0.0), at(99.9), at(100.0)], 100_000.0)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].len(), 2);
        assert_eq!(frames[1].len(), 1);
        assert_eq!(frames[1].start_us, 100_000.0);
    }

    #[test]
    fn empty_stream_no_frames() {
        assert_eq!(window_frames(Vec::new(), 1e5).unwrap().count(), 0);
    }

    #[test]
    fn gaps_are_skipped() {
        let frames: Vec<ScanFrame> = window_frames(vec![at(0.0), at(350.0)], 100_000.0)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].start_us, 300_000.0);
        assert!(frames[1].contains_time(350_000.0));
    }

    #[test]
    fn fixed_origin_aligns_frames() {
        let frames: Vec<ScanFrame> =
            FrameWindower::with_origin(vec![at(150.0), at(260.0)].into_iter(), 100_000.0, 0.0)
                .unwrap()
                .collect::<Result<_, _>>()
                .unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].start_us, 100_000.0);
        assert_eq!(frames[1].start_us, 200_000.0);
        let early = FrameWindower::with_origin(vec![at(1.0)].into_iter(), 100_000.0, 5000.0)
            .unwrap()
            .next()
            .unwrap();
        assert!(matches!(early, Err(IoError::NonMonotone { .. })));
    }

    #[test]
    fn non_monotone_is_error() {
        let r: Result<Vec<ScanFrame>, _> = window_frames(vec![at(5.0), at(4.0)], 1e5).unwrap().collect();
        assert!(matches!(r, Err(IoError::NonMonotone { index: 1, .. })));
        assert!(matches!(window_frames(Vec::new(), 0.0), Err(IoError::BadWindow(_))));
    }
}
