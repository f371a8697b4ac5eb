use rand::Rng;

use super::ConvError;

/// Dense `height x width x channels` map, channel-innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    /// # Panics
    /// If any dimension is zero.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(
            height > 0 && width > 0 && channels > 0,
            "feature map dimensions must be non-zero"
        );
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, ConvError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(ConvError::ZeroDimension {
                height,
                width,
                channels,
            });
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ConvError::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ConvError::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut m = Self::zeros(height, width, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    m.data[(y * width + x) * channels + c] = f(y, x, c);
                }
            }
        }
        m
    }

    pub fn random<R: Rng>(height: usize, width: usize, channels: usize, rng: &mut R) -> Self {
        Self::from_fn(height, width, channels, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Sites where any channel is non-zero.
    pub fn nonzero_mask(&self) -> ActiveMask {
        let mut mask = ActiveMask::new(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.pixel(y, x).iter().any(|v| *v != 0.0) {
                    mask.set(y, x, true);
                }
            }
        }
        mask
    }

    /// Copy with every inactive site zeroed.
    pub fn masked(&self, mask: &ActiveMask) -> Result<FeatureMap, ConvError> {
        mask.check_dims(self.height, self.width)?;
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if !mask.get(y, x) {
                    out.pixel_mut(y, x).fill(0.0);
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f32 {
        assert_eq!(
            (self.height, self.width, self.channels),
            (other.height, other.width, other.channels),
            "shape mismatch"
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Top-left `height x width` crop.
    pub fn crop(&self, height: usize, width: usize) -> FeatureMap {
        assert!(height <= self.height && width <= self.width);
        let mut out = FeatureMap::zeros(height, width, self.channels);
        for y in 0..height {
            let src = (y * self.width) * self.channels;
            let dst = (y * width) * self.channels;
            out.data[dst..dst + width * self.channels]
                .copy_from_slice(&self.data[src..src + width * self.channels]);
        }
        out
    }

    /// Concatenates maps of equal spatial size along the channel axis.
    pub fn concat_channels(maps: &[FeatureMap]) -> Result<FeatureMap, ConvError> {
        let first = maps.first().ok_or(ConvError::ZeroDimension {
            height: 0,
            width: 0,
            channels: 0,
        })?;
        let (h, w) = (first.height, first.width);
        for m in maps {
            if (m.height, m.width) != (h, w) {
                return Err(ConvError::DimensionMismatch {
                    left: (h, w),
                    right: (m.height, m.width),
                });
            }
        }
        let channels: usize = maps.iter().map(|m| m.channels).sum();
        let mut out = FeatureMap::zeros(h, w, channels);
        for y in 0..h {
            for x in 0..w {
                let mut c0 = 0;
                let dst = out.pixel_mut(y, x);
                for m in maps {
                    dst[c0..c0 + m.channels].copy_from_slice(m.pixel(y, x));
                    c0 += m.channels;
                }
            }
        }
        Ok(out)
    }
}

/// One flag per spatial site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveMask {
    height: usize,
    width: usize,
    flags: Vec<bool>,
}

impl ActiveMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            flags: vec![false; height * width],
        }
    }

    pub fn from_flags(height: usize, width: usize, flags: Vec<bool>) -> Result<Self, ConvError> {
        if flags.len() != height * width {
            return Err(ConvError::LengthMismatch {
                expected: height * width,
                found: flags.len(),
            });
        }
        Ok(Self {
            height,
            width,
            flags,
        })
    }

    pub fn from_sites(height: usize, width: usize, sites: &[(usize, usize)]) -> Self {
        let mut m = Self::new(height, width);
        for &(r, c) in sites {
            m.set(r, c, true);
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.flags[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.flags[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn density(&self) -> f64 {
        self.count() as f64 / self.flags.len() as f64
    }

    /// Active sites in row-major order.
    pub fn active_sites(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, f)| **f)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub(crate) fn check_dims(&self, height: usize, width: usize) -> Result<(), ConvError> {
        if (self.height, self.width) != (height, width) {
            return Err(ConvError::DimensionMismatch {
                left: (self.height, self.width),
                right: (height, width),
            });
        }
        Ok(())
    }
}

/// Compacted active sites: coordinates in strictly row-major order and their
/// feature vectors packed contiguously (`len() x channels`).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    coords: Vec<(usize, usize)>,
    features: Vec<f32>,
}

impl SparseFeatureMap {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        coords: Vec<(usize, usize)>,
        features: Vec<f32>,
    ) -> Result<Self, ConvError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(ConvError::ZeroDimension {
                height,
                width,
                channels,
            });
        }
        if features.len() != coords.len() * channels {
            return Err(ConvError::LengthMismatch {
                expected: coords.len() * channels,
                found: features.len(),
            });
        }
        for (i, &(r, c)) in coords.iter().enumerate() {
            if r >= height || c >= width {
                return Err(ConvError::SiteOutOfBounds {
                    row: r,
                    col: c,
                    height,
                    width,
                });
            }
            if i > 0 && coords[i - 1] >= (r, c) {
                return Err(ConvError::UnsortedSites(i));
            }
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(ConvError::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            channels,
            coords,
            features,
        })
    }

    pub fn empty(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            coords: Vec::new(),
            features: Vec::new(),
        }
    }

    /// Exactly `sites` distinct active sites chosen uniformly, features in
    /// `[-1, 1)`. Requires `sites <= height * width`.
    pub fn random<R: Rng>(
        height: usize,
        width: usize,
        channels: usize,
        sites: usize,
        rng: &mut R,
    ) -> Result<Self, ConvError> {
        let cells = height * width;
        if sites > cells {
            return Err(ConvError::LengthMismatch {
                expected: cells,
                found: sites,
            });
        }
        let mut flat = rand::seq::index::sample(rng, cells, sites).into_vec();
        flat.sort_unstable();
        let coords: Vec<(usize, usize)> = flat.iter().map(|&f| (f / width, f % width)).collect();
        let features = (0..sites * channels)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Self::new(height, width, channels, coords, features)
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        coords: Vec<(usize, usize)>,
        features: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(features.len(), coords.len() * channels);
        Self {
            height,
            width,
            channels,
            coords,
            features,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of active sites.
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f32] {
        &mut self.features
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn density(&self) -> f64 {
        self.len() as f64 / (self.height * self.width) as f64
    }

    pub fn active_mask(&self) -> ActiveMask {
        ActiveMask::from_sites(self.height, self.width, &self.coords)
    }

    pub fn to_dense(&self) -> FeatureMap {
        let mut out = FeatureMap::zeros(self.height, self.width, self.channels);
        for (i, &(r, c)) in self.coords.iter().enumerate() {
            out.pixel_mut(r, c).copy_from_slice(self.feature(i));
        }
        out
    }
}

/// Convolution weights laid out as `[out][k][k][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTensor {
    k: usize,
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f32>,
}

impl KernelTensor {
    pub fn new(
        k: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f32>,
    ) -> Result<Self, ConvError> {
        if k.is_multiple_of(2) {
            return Err(ConvError::EvenKernel(k));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(ConvError::ZeroDimension {
                height: k,
                width: k,
                channels: in_channels.min(out_channels),
            });
        }
        let expected = out_channels * k * k * in_channels;
        if weights.len() != expected {
            return Err(ConvError::LengthMismatch {
                expected,
                found: weights.len(),
            });
        }
        if let Some(i) = weights.iter().position(|v| !v.is_finite()) {
            return Err(ConvError::NonFinite(i));
        }
        Ok(Self {
            k,
            in_channels,
            out_channels,
            weights,
        })
    }

    pub fn from_fn(
        k: usize,
        in_channels: usize,
        out_channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self, ConvError> {
        let mut w = Vec::with_capacity(out_channels * k * k * in_channels);
        for o in 0..out_channels {
            for m in 0..k {
                for n in 0..k {
                    for c in 0..in_channels {
                        w.push(f(o, m, n, c));
                    }
                }
            }
        }
        Self::new(k, in_channels, out_channels, w)
    }

    /// Uniform weights in `[-scale, scale]`.
    pub fn random<R: Rng>(
        k: usize,
        in_channels: usize,
        out_channels: usize,
        scale: f32,
        rng: &mut R,
    ) -> Result<Self, ConvError> {
        Self::from_fn(k, in_channels, out_channels, |_, _, _, _| {
            rng.random_range(-scale..=scale)
        })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn half(&self) -> usize {
        self.k / 2
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, o: usize, m: usize, n: usize, c: usize) -> f32 {
        self.weights[((o * self.k + m) * self.k + n) * self.in_channels + c]
    }

    /// Repacks to `[m][n][in][out]` so one tap is a contiguous `in x out` block.
    pub(crate) fn tap_major(&self) -> Vec<f32> {
        let (k, ci, co) = (self.k, self.in_channels, self.out_channels);
        let mut out = vec![0.0; self.weights.len()];
        for o in 0..co {
            for m in 0..k {
                for n in 0..k {
                    for c in 0..ci {
                        out[((m * k + n) * ci + c) * co + o] = self.weight(o, m, n, c);
                    }
                }
            }
        }
        out
    }
}

/// Dense pillar feature map plus the set of occupied cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImage {
    pub features: FeatureMap,
    pub occupancy: ActiveMask,
}

impl PseudoImage {
    pub fn new(features: FeatureMap, occupancy: ActiveMask) -> Result<Self, ConvError> {
        occupancy.check_dims(features.height(), features.width())?;
        Ok(Self {
            features,
            occupancy,
        })
    }

    /// Treats every non-zero site as occupied.
    pub fn from_features(features: FeatureMap) -> Self {
        let occupancy = features.nonzero_mask();
        Self {
            features,
            occupancy,
        }
    }
}
