//! The three-block convolutional backbone used as a benchmark graph.
//!
//! Blocks hold 4, 6 and 6 convolutions; the first convolution of each block
//! carries the block stride. Each block output is upsampled by a transposed
//! convolution and the upsampled maps are concatenated along channels. The
//! same weights can be run through a dense engine or a sparse one, and the
//! submanifold variants keep every non-first convolution of a block on the
//! block's active set.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{output_active_mask, scatter_conv, sparse_scatter_conv, submanifold_scatter_conv};
use super::scan::compact_active_sites;
use super::tensor::{ActiveMask, FeatureMap, KernelTensor, PseudoImage, SparseFeatureMap};
use super::{ConvError, ConvSpec, ExecMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSpec {
    pub in_channels: usize,
    pub block_convs: Vec<usize>,
    pub block_strides: Vec<usize>,
    pub block_channels: Vec<usize>,
    pub kernel_size: usize,
    pub upsample_strides: Vec<usize>,
    pub upsample_kernels: Vec<usize>,
    pub upsample_channels: Vec<usize>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            in_channels: 64,
            block_convs: vec![4, 6, 6],
            block_strides: vec![2, 2, 2],
            block_channels: vec![64, 128, 256],
            kernel_size: 3,
            upsample_strides: vec![1, 2, 4],
            upsample_kernels: vec![1, 3, 5],
            upsample_channels: vec![128, 128, 128],
        }
    }
}

impl BackboneSpec {
    /// Default topology with every channel width replaced.
    pub fn with_widths(in_channels: usize, block: [usize; 3], upsample: usize) -> Self {
        Self {
            in_channels,
            block_channels: block.to_vec(),
            upsample_channels: vec![upsample; 3],
            ..Self::default()
        }
    }

    pub fn conv_count(&self) -> usize {
        self.block_convs.iter().sum()
    }

    pub fn deconv_count(&self) -> usize {
        self.upsample_strides.len()
    }

    pub fn validate(&self) -> Result<(), ConvError> {
        let n = self.block_convs.len();
        let bad = |detail: String| Err(ConvError::ShapeMismatch { layer: 0, detail });
        if n == 0 {
            return bad("backbone needs at least one block".into());
        }
        for (name, len) in [
            ("block_strides", self.block_strides.len()),
            ("block_channels", self.block_channels.len()),
            ("upsample_strides", self.upsample_strides.len()),
            ("upsample_kernels", self.upsample_kernels.len()),
            ("upsample_channels", self.upsample_channels.len()),
        ] {
            if len != n {
                return bad(format!("{name} has {len} entries, expected {n}"));
            }
        }
        if self.block_convs.contains(&0) {
            return bad("every block needs at least one convolution".into());
        }
        if self.block_strides.contains(&0) || self.upsample_strides.contains(&0) {
            return Err(ConvError::ZeroStride);
        }
        for &k in std::iter::once(&self.kernel_size).chain(&self.upsample_kernels) {
            if k % 2 == 0 {
                return Err(ConvError::EvenKernel(k));
            }
        }
        Ok(())
    }
}

/// One convolution with its optional bias and ReLU hooks.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneLayer {
    pub kernel: KernelTensor,
    pub bias: Option<Vec<f32>>,
    pub relu: bool,
}

impl BackboneLayer {
    pub fn plain(kernel: KernelTensor) -> Self {
        Self {
            kernel,
            bias: None,
            relu: false,
        }
    }

    fn apply_activation(&self, v: &mut [f32]) {
        if let Some(b) = &self.bias {
            for (x, b) in v.iter_mut().zip(b) {
                *x += b;
            }
        }
        if self.relu {
            for x in v {
                *x = x.max(0.0);
            }
        }
    }

    fn has_hooks(&self) -> bool {
        self.bias.is_some() || self.relu
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWeights {
    pub blocks: Vec<Vec<BackboneLayer>>,
    pub upsample: Vec<BackboneLayer>,
}

impl BackboneWeights {
    /// Uniform weights scaled to preserve activation variance.
    pub fn random(spec: &BackboneSpec, seed: u64) -> Result<Self, ConvError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |k: usize, cin: usize, cout: usize| {
            let scale = (3.0 / (k * k * cin) as f32).sqrt();
            KernelTensor::random(k, cin, cout, scale, &mut rng).map(BackboneLayer::plain)
        };
        let mut blocks = Vec::new();
        let mut cin = spec.in_channels;
        for (b, &count) in spec.block_convs.iter().enumerate() {
            let cout = spec.block_channels[b];
            let mut layers = Vec::new();
            for _ in 0..count {
                layers.push(make(spec.kernel_size, cin, cout)?);
                cin = cout;
            }
            blocks.push(layers);
        }
        let upsample = (0..spec.deconv_count())
            .map(|j| {
                make(
                    spec.upsample_kernels[j],
                    spec.block_channels[j],
                    spec.upsample_channels[j],
                )
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { blocks, upsample })
    }

    pub fn validate(&self, spec: &BackboneSpec) -> Result<(), ConvError> {
        spec.validate()?;
        let mismatch = |layer: usize, detail: String| ConvError::ShapeMismatch { layer, detail };
        if self.blocks.len() != spec.block_convs.len() {
            return Err(mismatch(
                0,
                format!("{} blocks, expected {}", self.blocks.len(), spec.block_convs.len()),
            ));
        }
        let mut layer = 0;
        let mut cin = spec.in_channels;
        for (b, block) in self.blocks.iter().enumerate() {
            if block.len() != spec.block_convs[b] {
                return Err(mismatch(
                    layer,
                    format!("block {b} has {} convs, expected {}", block.len(), spec.block_convs[b]),
                ));
            }
            for l in block {
                check_layer(l, layer, spec.kernel_size, cin, spec.block_channels[b])?;
                cin = l.kernel.out_channels();
                layer += 1;
            }
        }
        if self.upsample.len() != spec.deconv_count() {
            return Err(mismatch(
                layer,
                format!("{} upsample layers, expected {}", self.upsample.len(), spec.deconv_count()),
            ));
        }
        for (j, l) in self.upsample.iter().enumerate() {
            check_layer(
                l,
                layer,
                spec.upsample_kernels[j],
                spec.block_channels[j],
                spec.upsample_channels[j],
            )?;
            layer += 1;
        }
        Ok(())
    }
}

fn check_layer(
    l: &BackboneLayer,
    layer: usize,
    k: usize,
    cin: usize,
    cout: usize,
) -> Result<(), ConvError> {
    let kt = &l.kernel;
    if (kt.k(), kt.in_channels(), kt.out_channels()) != (k, cin, cout) {
        return Err(ConvError::ShapeMismatch {
            layer,
            detail: format!(
                "kernel is {}x{} {}->{}, expected {k}x{k} {cin}->{cout}",
                kt.k(),
                kt.k(),
                kt.in_channels(),
                kt.out_channels()
            ),
        });
    }
    if let Some(b) = &l.bias {
        if b.len() != cout {
            return Err(ConvError::ShapeMismatch {
                layer,
                detail: format!("bias has {} entries, expected {cout}", b.len()),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Scatter over every site, bias applied everywhere.
    Dense,
    /// Dense computation with submanifold semantics: outputs are zeroed
    /// outside the active set the sparse submanifold engine would carry.
    /// Serves as its oracle.
    DenseSubmanifold,
    /// Scatter from active sites only.
    Sparse,
    /// Sparse, with every non-first convolution of a block submanifold.
    SparseSubmanifold,
}

impl Engine {
    pub const ALL: [Engine; 4] = [
        Engine::Dense,
        Engine::DenseSubmanifold,
        Engine::Sparse,
        Engine::SparseSubmanifold,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Engine::Dense => "dense",
            Engine::DenseSubmanifold => "dense-submanifold",
            Engine::Sparse => "sparse",
            Engine::SparseSubmanifold => "sparse-submanifold",
        }
    }

    fn is_sparse(&self) -> bool {
        matches!(self, Engine::Sparse | Engine::SparseSubmanifold)
    }

    fn submanifold(&self) -> bool {
        matches!(self, Engine::DenseSubmanifold | Engine::SparseSubmanifold)
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Engine::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown engine '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Submanifold,
    Deconv,
}

impl LayerKind {
    fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Submanifold => "submanifold",
            LayerKind::Deconv => "deconv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub index: usize,
    pub stage: usize,
    pub kind: LayerKind,
    pub stride: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub macs: u64,
    /// Fraction of input sites the engine pushed from.
    pub density: f64,
    pub nanos: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentationReport {
    pub engine: Engine,
    pub layers: Vec<LayerReport>,
}

impl InstrumentationReport {
    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn total_nanos(&self) -> u64 {
        self.layers.iter().map(|l| l.nanos).sum()
    }

    /// Flat `key=value` lines, one fact per line.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "engine={}", self.engine);
        let _ = writeln!(s, "layers={}", self.layers.len());
        for l in &self.layers {
            let i = l.index;
            let _ = writeln!(s, "layer.{i}.kind={}", l.kind.name());
            let _ = writeln!(s, "layer.{i}.stage={}", l.stage);
            let _ = writeln!(s, "layer.{i}.stride={}", l.stride);
            let _ = writeln!(s, "layer.{i}.input={}x{}x{}", l.input[0], l.input[1], l.input[2]);
            let _ = writeln!(
                s,
                "layer.{i}.output={}x{}x{}",
                l.output[0], l.output[1], l.output[2]
            );
            let _ = writeln!(s, "layer.{i}.macs={}", l.macs);
            let _ = writeln!(s, "layer.{i}.density={}", l.density);
            let _ = writeln!(s, "layer.{i}.nanos={}", l.nanos);
        }
        let _ = writeln!(s, "total.macs={}", self.total_macs());
        let _ = writeln!(s, "total.nanos={}", self.total_nanos());
        s
    }

    pub fn from_kv_str(text: &str) -> Result<Self, String> {
        use std::collections::BTreeMap;
        let kv: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_once('=').ok_or_else(|| format!("malformed line '{l}'")))
            .collect::<Result<_, _>>()?;
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| format!("missing key '{k}'"));
        let num = |k: &str| -> Result<u64, String> {
            get(k)?.parse().map_err(|e| format!("{k}: {e}"))
        };
        let dims = |k: &str| -> Result<[usize; 3], String> {
            let v: Vec<usize> = get(k)?
                .split('x')
                .map(|p| p.parse().map_err(|e| format!("{k}: {e}")))
                .collect::<Result<_, _>>()?;
            v.try_into().map_err(|_| format!("{k}: expected three dimensions"))
        };
        let engine: Engine = get("engine")?.parse()?;
        let n = num("layers")? as usize;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let kind = match get(&format!("layer.{i}.kind"))? {
                "conv" => LayerKind::Conv,
                "submanifold" => LayerKind::Submanifold,
                "deconv" => LayerKind::Deconv,
                other => return Err(format!("unknown layer kind '{other}'")),
            };
            layers.push(LayerReport {
                index: i,
                stage: num(&format!("layer.{i}.stage"))? as usize,
                kind,
                stride: num(&format!("layer.{i}.stride"))? as usize,
                input: dims(&format!("layer.{i}.input"))?,
                output: dims(&format!("layer.{i}.output"))?,
                macs: num(&format!("layer.{i}.macs"))?,
                density: get(&format!("layer.{i}.density"))?
                    .parse()
                    .map_err(|e| format!("density: {e}"))?,
                nanos: num(&format!("layer.{i}.nanos"))?,
            });
        }
        Ok(Self { engine, layers })
    }
}

/// Activation state flowing between layers.
enum Activation {
    Dense { map: FeatureMap, mask: ActiveMask },
    Sparse(SparseFeatureMap),
}

impl Activation {
    fn dims(&self) -> [usize; 3] {
        match self {
            Activation::Dense { map, .. } => [map.height(), map.width(), map.channels()],
            Activation::Sparse(s) => [s.height(), s.width(), s.channels()],
        }
    }

    fn mask_as_sites(mask: &ActiveMask) -> SparseFeatureMap {
        let coords: Vec<_> = mask.active_sites().collect();
        let ones = vec![1.0; coords.len()];
        SparseFeatureMap::from_parts_unchecked(mask.height(), mask.width(), 1, coords, ones)
    }
}

fn activate_dense(layer: &BackboneLayer, map: &mut FeatureMap, mask: Option<&ActiveMask>) {
    let (h, w) = (map.height(), map.width());
    for y in 0..h {
        for x in 0..w {
            match mask {
                Some(m) if !m.get(y, x) => map.pixel_mut(y, x).fill(0.0),
                _ => layer.apply_activation(map.pixel_mut(y, x)),
            }
        }
    }
}

fn activate_sparse(layer: &BackboneLayer, s: &mut SparseFeatureMap) {
    if !layer.has_hooks() {
        return;
    }
    let c = s.channels();
    for chunk in s.features_mut().chunks_mut(c) {
        layer.apply_activation(chunk);
    }
}

struct Step {
    kind: LayerKind,
    stage: usize,
    stride: usize,
}

fn conv_step(
    act: Activation,
    layer: &BackboneLayer,
    step: &Step,
    engine: Engine,
    exec: ExecMode,
) -> Result<(Activation, u64, f64), ConvError> {
    let k = layer.kernel.k();
    match act {
        Activation::Sparse(s) => {
            let density = s.density();
            if step.kind == LayerKind::Submanifold {
                let mut out = submanifold_scatter_conv(&s, &layer.kernel, exec)?;
                activate_sparse(layer, &mut out.map);
                return Ok((Activation::Sparse(out.map), out.macs, density));
            }
            let spec = ConvSpec::standard(step.stride);
            let out = sparse_scatter_conv(&s, &layer.kernel, spec, exec)?;
            let mask = output_active_mask(&s, k, spec)?;
            let mut next = compact_active_sites(&mask, &out.map)?;
            activate_sparse(layer, &mut next);
            Ok((Activation::Sparse(next), out.macs, density))
        }
        Activation::Dense { map, mask } => {
            let out = scatter_conv(&map, &layer.kernel, ConvSpec::standard(step.stride), exec)?;
            let mut next = out.map;
            let next_mask = if step.kind == LayerKind::Submanifold {
                mask
            } else {
                output_active_mask(
                    &Activation::mask_as_sites(&mask),
                    k,
                    ConvSpec::standard(step.stride),
                )?
            };
            activate_dense(layer, &mut next, engine.submanifold().then_some(&next_mask));
            Ok((
                Activation::Dense {
                    map: next,
                    mask: next_mask,
                },
                out.macs,
                1.0,
            ))
        }
    }
}

fn deconv_step(
    act: &Activation,
    layer: &BackboneLayer,
    stride: usize,
    engine: Engine,
    exec: ExecMode,
) -> Result<(FeatureMap, u64, f64), ConvError> {
    let spec = ConvSpec::transposed(stride);
    let k = layer.kernel.k();
    match act {
        Activation::Sparse(s) => {
            let mut out = sparse_scatter_conv(s, &layer.kernel, spec, exec)?;
            if layer.has_hooks() {
                let mask = output_active_mask(s, k, spec)?;
                activate_dense(layer, &mut out.map, Some(&mask));
            }
            Ok((out.map, out.macs, s.density()))
        }
        Activation::Dense { map, mask } => {
            let mut out = scatter_conv(map, &layer.kernel, spec, exec)?;
            let reach = engine
                .submanifold()
                .then(|| output_active_mask(&Activation::mask_as_sites(mask), k, spec))
                .transpose()?;
            activate_dense(layer, &mut out.map, reach.as_ref());
            Ok((out.map, out.macs, 1.0))
        }
    }
}

/// Forward pass of the backbone on a pseudo-image.
///
/// Returns the concatenated upsampled feature map (cropped to the smallest
/// upsampled size) and per-layer instrumentation. Dense and sparse engines
/// agree up to floating-point reassociation when no bias is set; the
/// submanifold engines agree with each other.
pub fn run_backbone(
    input: &PseudoImage,
    spec: &BackboneSpec,
    weights: &BackboneWeights,
    engine: Engine,
    exec: ExecMode,
) -> Result<(FeatureMap, InstrumentationReport), ConvError> {
    weights.validate(spec)?;
    if input.features.channels() != spec.in_channels {
        return Err(ConvError::ShapeMismatch {
            layer: 0,
            detail: format!(
                "pseudo-image has {} channels, backbone expects {}",
                input.features.channels(),
                spec.in_channels
            ),
        });
    }
    let mut act = if engine.is_sparse() {
        Activation::Sparse(compact_active_sites(&input.occupancy, &input.features)?)
    } else {
        let map = if engine.submanifold() {
            input.features.masked(&input.occupancy)?
        } else {
            input.features.clone()
        };
        Activation::Dense {
            map,
            mask: input.occupancy.clone(),
        }
    };

    let mut reports = Vec::new();
    let mut block_outputs = Vec::new();
    for (b, block) in weights.blocks.iter().enumerate() {
        for (j, layer) in block.iter().enumerate() {
            let step = Step {
                kind: if j > 0 && engine.submanifold() {
                    LayerKind::Submanifold
                } else {
                    LayerKind::Conv
                },
                stage: b,
                stride: if j == 0 { spec.block_strides[b] } else { 1 },
            };
            let in_dims = act.dims();
            let t0 = Instant::now();
            let (next, macs, density) = conv_step(act, layer, &step, engine, exec)?;
            let nanos = t0.elapsed().as_nanos() as u64;
            act = next;
            reports.push(LayerReport {
                index: reports.len(),
                stage: step.stage,
                kind: step.kind,
                stride: step.stride,
                input: in_dims,
                output: act.dims(),
                macs,
                density,
                nanos,
            });
        }
        block_outputs.push(match &act {
            Activation::Sparse(s) => Activation::Sparse(s.clone()),
            Activation::Dense { map, mask } => Activation::Dense {
                map: map.clone(),
                mask: mask.clone(),
            },
        });
    }

    let mut upsampled = Vec::new();
    for (j, layer) in weights.upsample.iter().enumerate() {
        let src = &block_outputs[j];
        let in_dims = src.dims();
        let t0 = Instant::now();
        let (map, macs, density) = deconv_step(src, layer, spec.upsample_strides[j], engine, exec)?;
        let nanos = t0.elapsed().as_nanos() as u64;
        reports.push(LayerReport {
            index: reports.len(),
            stage: j,
            kind: LayerKind::Deconv,
            stride: spec.upsample_strides[j],
            input: in_dims,
            output: [map.height(), map.width(), map.channels()],
            macs,
            density,
            nanos,
        });
        upsampled.push(map);
    }
    let h = upsampled.iter().map(|m| m.height()).min().unwrap_or(0);
    let w = upsampled.iter().map(|m| m.width()).min().unwrap_or(0);
    let cropped: Vec<FeatureMap> = upsampled.iter().map(|m| m.crop(h, w)).collect();
    let out = FeatureMap::concat_channels(&cropped)?;
    Ok((
        out,
        InstrumentationReport {
            engine,
            layers: reports,
        },
    ))
}
