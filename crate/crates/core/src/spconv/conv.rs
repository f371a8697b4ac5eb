use std::ops::Range;

use rayon::prelude::*;

use super::scan::site_offsets;
use super::tensor::{ActiveMask, FeatureMap, KernelTensor, SparseFeatureMap};
use super::{ConvError, ConvMode, ConvSpec, ExecMode};

/// Dense output of a scatter convolution together with the number of
/// multiply-accumulates actually performed.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvOutput {
    pub map: FeatureMap,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseConvOutput {
    pub map: SparseFeatureMap,
    pub macs: u64,
}

fn check_kernel(kernel: &KernelTensor, channels: usize) -> Result<(), ConvError> {
    if kernel.in_channels() != channels {
        return Err(ConvError::ChannelMismatch {
            expected: kernel.in_channels(),
            found: channels,
        });
    }
    Ok(())
}

/// Gather convolution with 64-bit accumulation, out-of-bounds inputs read as
/// zero. Standard mode only; this is the oracle the scatter engines are
/// checked against.
pub fn dense_conv_reference(
    input: &FeatureMap,
    kernel: &KernelTensor,
    spec: ConvSpec,
) -> Result<FeatureMap, ConvError> {
    spec.validate()?;
    if spec.mode != ConvMode::Standard {
        return Err(ConvError::UnsupportedMode(spec.mode));
    }
    check_kernel(kernel, input.channels())?;
    let (h, w) = (input.height() as isize, input.width() as isize);
    let (oh, ow) = spec.output_size(input.height(), input.width());
    let k = kernel.k();
    let half = kernel.half() as isize;
    let s = spec.stride as isize;
    let mut out = FeatureMap::zeros(oh, ow, kernel.out_channels());
    for oy in 0..oh {
        for ox in 0..ow {
            let (y, x) = (oy as isize * s, ox as isize * s);
            for f in 0..kernel.out_channels() {
                let mut acc = 0.0f64;
                for m in 0..k {
                    let iy = y + m as isize - half;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for n in 0..k {
                        let ix = x + n as isize - half;
                        if ix < 0 || ix >= w {
                            continue;
                        }
                        let px = input.pixel(iy as usize, ix as usize);
                        for (c, &v) in px.iter().enumerate() {
                            acc += v as f64 * kernel.weight(f, m, n, c) as f64;
                        }
                    }
                }
                out.set(oy, ox, f, acc as f32);
            }
        }
    }
    Ok(out)
}

/// Where each kernel tap of an input site lands.
///
/// Output coordinates are offset by `pad` so that, for stride-1 forward and
/// for transposed convolution, every tap lands inside the buffer and is
/// computed; out-of-range results are cropped afterwards.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    stride: usize,
    transposed: bool,
    half: usize,
    out_h: usize,
    out_w: usize,
    pad: usize,
}

impl Geometry {
    fn new(in_h: usize, in_w: usize, k: usize, spec: ConvSpec) -> Self {
        let (out_h, out_w) = spec.output_size(in_h, in_w);
        let half = k / 2;
        let transposed = spec.mode == ConvMode::Transposed;
        let pad = if transposed {
            half
        } else {
            half.div_ceil(spec.stride)
        };
        Self {
            stride: spec.stride,
            transposed,
            half,
            out_h,
            out_w,
            pad,
        }
    }

    #[inline]
    fn padded_w(&self) -> usize {
        self.out_w + 2 * self.pad
    }

    #[inline]
    fn padded_len(&self, channels: usize) -> usize {
        (self.out_h + 2 * self.pad) * self.padded_w() * channels
    }

    /// Padded output coordinate reached from input coordinate `i` through tap
    /// `m`, or `None` when the tap falls between strided output samples.
    #[inline]
    fn target(&self, i: usize, m: usize) -> Option<usize> {
        if self.transposed {
            return Some(i * self.stride + 2 * self.half - m);
        }
        let y = (i + self.half) as isize - m as isize;
        if self.stride == 1 {
            return Some((y + self.pad as isize) as usize);
        }
        let s = self.stride as isize;
        if y.rem_euclid(s) != 0 {
            return None;
        }
        Some((y.div_euclid(s) + self.pad as isize) as usize)
    }

    /// Unpadded target, if inside the output.
    #[inline]
    fn output_target(&self, i: usize, m: usize, extent: usize) -> Option<usize> {
        let p = self.target(i, m)?;
        let y = p.checked_sub(self.pad)?;
        (y < extent).then_some(y)
    }
}

/// Random access to the pushing sites of either a dense or a compacted map.
struct Sites<'a> {
    coords: Option<&'a [(usize, usize)]>,
    width: usize,
    channels: usize,
    features: &'a [f32],
    len: usize,
}

impl<'a> Sites<'a> {
    fn dense(m: &'a FeatureMap) -> Self {
        Self {
            coords: None,
            width: m.width(),
            channels: m.channels(),
            features: m.data(),
            len: m.height() * m.width(),
        }
    }

    fn sparse(m: &'a SparseFeatureMap) -> Self {
        Self {
            coords: Some(m.coords()),
            width: m.width(),
            channels: m.channels(),
            features: m.features(),
            len: m.len(),
        }
    }

    #[inline]
    fn coord(&self, i: usize) -> (usize, usize) {
        match self.coords {
            Some(c) => c[i],
            None => (i / self.width, i % self.width),
        }
    }

    #[inline]
    fn feature(&self, i: usize) -> &'a [f32] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }
}

/// `out += x * W_tap` for one site and one tap; `taps` is `[in][out]`.
#[inline]
fn accumulate_tap(out: &mut [f32], x: &[f32], taps: &[f32]) {
    let cout = out.len();
    for (ci, &xv) in x.iter().enumerate() {
        let row = &taps[ci * cout..(ci + 1) * cout];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xv * w;
        }
    }
}

fn scatter_range(
    sites: &Sites<'_>,
    range: Range<usize>,
    taps: &[f32],
    kernel: &KernelTensor,
    geo: &Geometry,
    buf: &mut [f32],
) -> u64 {
    let (k, cin, cout) = (kernel.k(), kernel.in_channels(), kernel.out_channels());
    let block = cin * cout;
    let pw = geo.padded_w();
    let mut macs = 0u64;
    for i in range {
        let (r, c) = sites.coord(i);
        let x = sites.feature(i);
        for m in 0..k {
            let Some(pr) = geo.target(r, m) else { continue };
            for n in 0..k {
                let Some(pc) = geo.target(c, n) else { continue };
                let t = (m * k + n) * block;
                let o = (pr * pw + pc) * cout;
                accumulate_tap(&mut buf[o..o + cout], x, &taps[t..t + block]);
                macs += block as u64;
            }
        }
    }
    macs
}

fn split_ranges(len: usize, workers: usize) -> Vec<Range<usize>> {
    let parts = workers.max(1).min(len.max(1));
    let chunk = len.div_ceil(parts).max(1);
    (0..len)
        .step_by(chunk)
        .map(|s| s..(s + chunk).min(len))
        .collect()
}

fn sum_buffers(mut bufs: Vec<(Vec<f32>, u64)>) -> (Vec<f32>, u64) {
    let mut iter = bufs.drain(..);
    let (mut acc, mut macs) = iter.next().unwrap_or_default();
    for (b, m) in iter {
        for (a, v) in acc.iter_mut().zip(&b) {
            *a += v;
        }
        macs += m;
    }
    (acc, macs)
}

fn run_scatter(
    sites: &Sites<'_>,
    kernel: &KernelTensor,
    geo: &Geometry,
    exec: ExecMode,
) -> ConvOutput {
    let taps = kernel.tap_major();
    let cout = kernel.out_channels();
    let len = geo.padded_len(cout);
    let (buf, macs) = match exec {
        ExecMode::Sequential => {
            let mut buf = vec![0.0f32; len];
            let macs = scatter_range(sites, 0..sites.len, &taps, kernel, geo, &mut buf);
            (buf, macs)
        }
        ExecMode::Parallel { workers } => {
            let parts: Vec<(Vec<f32>, u64)> = split_ranges(sites.len, workers)
                .into_par_iter()
                .map(|r| {
                    let mut buf = vec![0.0f32; len];
                    let macs = scatter_range(sites, r, &taps, kernel, geo, &mut buf);
                    (buf, macs)
                })
                .collect();
            let (buf, macs) = sum_buffers(parts);
            (if buf.is_empty() { vec![0.0; len] } else { buf }, macs)
        }
    };
    let mut out = FeatureMap::zeros(geo.out_h, geo.out_w, cout);
    let pw = geo.padded_w();
    for y in 0..geo.out_h {
        let src = ((y + geo.pad) * pw + geo.pad) * cout;
        let dst = y * geo.out_w * cout;
        out.data_mut()[dst..dst + geo.out_w * cout]
            .copy_from_slice(&buf[src..src + geo.out_w * cout]);
    }
    ConvOutput { map: out, macs }
}

fn check_scatter_mode(spec: ConvSpec) -> Result<(), ConvError> {
    spec.validate()?;
    match spec.mode {
        ConvMode::Standard | ConvMode::Transposed => Ok(()),
        ConvMode::Submanifold => Err(ConvError::UnsupportedMode(spec.mode)),
    }
}

/// Convolution with the scatter operation over every site of a dense map.
///
/// Each input element is multiplied by each kernel tap `(m, n)` and added to
/// output `(i - m + k/2, j - n + k/2)`; strided outputs keep only the taps
/// whose target is a multiple of the stride. Also accepts transposed mode,
/// which the dense backbone engine uses for its upsampling stages.
pub fn scatter_conv(
    input: &FeatureMap,
    kernel: &KernelTensor,
    spec: ConvSpec,
    exec: ExecMode,
) -> Result<ConvOutput, ConvError> {
    check_scatter_mode(spec)?;
    check_kernel(kernel, input.channels())?;
    let geo = Geometry::new(input.height(), input.width(), kernel.k(), spec);
    Ok(run_scatter(&Sites::dense(input), kernel, &geo, exec))
}

/// Scatter convolution pushing from the active sites only.
///
/// At stride 1 every site computes all `k*k` taps (`len * k^2 * C * F`
/// multiplies) and results outside the map are cropped.
pub fn sparse_scatter_conv(
    input: &SparseFeatureMap,
    kernel: &KernelTensor,
    spec: ConvSpec,
    exec: ExecMode,
) -> Result<ConvOutput, ConvError> {
    check_scatter_mode(spec)?;
    check_kernel(kernel, input.channels())?;
    let geo = Geometry::new(input.height(), input.width(), kernel.k(), spec);
    Ok(run_scatter(&Sites::sparse(input), kernel, &geo, exec))
}

/// Active site `(i, j)` scatters to `(i*s - m + k/2, j*s - n + k/2)` of a
/// `height*s x width*s` output; targets outside it are dropped.
pub fn transposed_scatter_conv(
    input: &SparseFeatureMap,
    kernel: &KernelTensor,
    stride: usize,
    exec: ExecMode,
) -> Result<ConvOutput, ConvError> {
    sparse_scatter_conv(input, kernel, ConvSpec::transposed(stride), exec)
}

/// Output sites reached by at least one tap of an active input site.
pub fn output_active_mask(
    input: &SparseFeatureMap,
    k: usize,
    spec: ConvSpec,
) -> Result<ActiveMask, ConvError> {
    spec.validate()?;
    if k.is_multiple_of(2) {
        return Err(ConvError::EvenKernel(k));
    }
    if spec.mode == ConvMode::Submanifold {
        return Ok(input.active_mask());
    }
    let geo = Geometry::new(input.height(), input.width(), k, spec);
    let mut mask = ActiveMask::new(geo.out_h, geo.out_w);
    for &(r, c) in input.coords() {
        for m in 0..k {
            let Some(y) = geo.output_target(r, m, geo.out_h) else { continue };
            for n in 0..k {
                if let Some(x) = geo.output_target(c, n, geo.out_w) {
                    mask.set(y, x, true);
                }
            }
        }
    }
    Ok(mask)
}

fn submanifold_range(
    input: &SparseFeatureMap,
    range: Range<usize>,
    offsets: &[u32],
    mask: &ActiveMask,
    taps: &[f32],
    kernel: &KernelTensor,
    buf: &mut [f32],
) -> u64 {
    let (k, cin, cout) = (kernel.k(), kernel.in_channels(), kernel.out_channels());
    let block = cin * cout;
    let half = kernel.half();
    let (h, w) = (input.height(), input.width());
    let mut macs = 0u64;
    for i in range {
        let (r, c) = input.coords()[i];
        let x = input.feature(i);
        for m in 0..k {
            let Some(ty) = (r + half).checked_sub(m).filter(|y| *y < h) else { continue };
            for n in 0..k {
                let Some(tx) = (c + half).checked_sub(n).filter(|x| *x < w) else { continue };
                if !mask.get(ty, tx) {
                    continue;
                }
                let slot = offsets[ty * w + tx] as usize;
                let t = (m * k + n) * block;
                accumulate_tap(&mut buf[slot * cout..(slot + 1) * cout], x, &taps[t..t + block]);
                macs += block as u64;
            }
        }
    }
    macs
}

/// Scatter convolution restricted to the input active set: contributions
/// are kept only when they land on an active site, so the output active set
/// equals the input active set. Target slots come from the prefix sum over
/// the active mask.
pub fn submanifold_scatter_conv(
    input: &SparseFeatureMap,
    kernel: &KernelTensor,
    exec: ExecMode,
) -> Result<SparseConvOutput, ConvError> {
    check_kernel(kernel, input.channels())?;
    let mask = input.active_mask();
    let (offsets, _) = site_offsets(&mask);
    let taps = kernel.tap_major();
    let cout = kernel.out_channels();
    let len = input.len() * cout;
    let (features, macs) = match exec {
        ExecMode::Sequential => {
            let mut buf = vec![0.0f32; len];
            let macs =
                submanifold_range(input, 0..input.len(), &offsets, &mask, &taps, kernel, &mut buf);
            (buf, macs)
        }
        ExecMode::Parallel { workers } => {
            let parts: Vec<(Vec<f32>, u64)> = split_ranges(input.len(), workers)
                .into_par_iter()
                .map(|r| {
                    let mut buf = vec![0.0f32; len];
                    let macs =
                        submanifold_range(input, r, &offsets, &mask, &taps, kernel, &mut buf);
                    (buf, macs)
                })
                .collect();
            let (buf, macs) = sum_buffers(parts);
            (if buf.is_empty() { vec![0.0; len] } else { buf }, macs)
        }
    };
    Ok(SparseConvOutput {
        map: SparseFeatureMap::from_parts_unchecked(
            input.height(),
            input.width(),
            cout,
            input.coords().to_vec(),
            features,
        ),
        macs,
    })
}
