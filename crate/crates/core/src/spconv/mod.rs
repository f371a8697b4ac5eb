//! Scatter-based 2-D convolution on dense and sparse feature maps.
//!
//! Every engine here is built on one primitive: each active input site
//! multiplies its feature vector by every kernel tap and pushes the result to
//! the output location selected by that tap. Restricting the set of pushing
//! sites to the active ones yields sparse convolution without any rule book or
//! hash table. The dense gather implementation in [`dense_conv_reference`] is
//! kept as an independent oracle.

mod backbone;
mod conv;
mod scan;
mod tensor;

pub use backbone::{
    run_backbone, BackboneLayer, BackboneSpec, BackboneWeights, Engine, InstrumentationReport,
    LayerKind, LayerReport,
};
pub use conv::{
    dense_conv_reference, output_active_mask, scatter_conv, sparse_scatter_conv,
    submanifold_scatter_conv, transposed_scatter_conv, ConvOutput, SparseConvOutput,
};
pub use scan::{compact_active_sites, exclusive_scan, exclusive_scan_parallel};
pub use tensor::{ActiveMask, KernelTensor, PseudoImage, SparseFeatureMap};
pub use tensor::FeatureMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvError {
    #[error("feature map dimensions must be at least 1, got {height}x{width}x{channels}")]
    ZeroDimension {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("expected {expected} values, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("kernel side must be odd, got {0}")]
    EvenKernel(usize),
    #[error("kernel expects {expected} input channels, input has {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("site ({row}, {col}) is outside a {height}x{width} map")]
    SiteOutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("sites must be unique and strictly row-major sorted (violation at index {0})")]
    UnsortedSites(usize),
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("submanifold convolution requires stride 1, got {0}")]
    SubmanifoldStride(usize),
    #[error("{0:?} mode is not supported by this operation")]
    UnsupportedMode(ConvMode),
    #[error("layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },
}

/// How the kernel is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvMode {
    /// Same-centered convolution, optionally strided.
    Standard,
    /// Output only at input active sites; stride must be 1.
    Submanifold,
    /// Zero-insertion upsampling by the stride followed by a same-centered convolution.
    Transposed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub mode: ConvMode,
}

impl ConvSpec {
    pub fn new(stride: usize, mode: ConvMode) -> Result<Self, ConvError> {
        let spec = Self { stride, mode };
        spec.validate()?;
        Ok(spec)
    }

    pub fn standard(stride: usize) -> Self {
        Self {
            stride,
            mode: ConvMode::Standard,
        }
    }

    pub fn transposed(stride: usize) -> Self {
        Self {
            stride,
            mode: ConvMode::Transposed,
        }
    }

    pub fn submanifold() -> Self {
        Self {
            stride: 1,
            mode: ConvMode::Submanifold,
        }
    }

    pub fn validate(&self) -> Result<(), ConvError> {
        if self.stride == 0 {
            return Err(ConvError::ZeroStride);
        }
        if self.mode == ConvMode::Submanifold && self.stride != 1 {
            return Err(ConvError::SubmanifoldStride(self.stride));
        }
        Ok(())
    }

    /// Output spatial size for an input of `height x width`.
    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        match self.mode {
            ConvMode::Standard => (height.div_ceil(self.stride), width.div_ceil(self.stride)),
            ConvMode::Submanifold => (height, width),
            ConvMode::Transposed => (height * self.stride, width * self.stride),
        }
    }
}

/// Execution strategy for the scatter kernels.
///
/// `Parallel` splits the active sites into contiguous ranges, scatters each
/// range into a private output buffer and sums the buffers in range order.
/// Results match `Sequential` up to floating-point reassociation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    #[default]
    Sequential,
    Parallel {
        workers: usize,
    },
}
