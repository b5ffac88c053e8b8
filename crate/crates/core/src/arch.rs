//! Patch-sized descriptor networks for receptive fields 17, 33 and 65, and
//! the fully connected decoder used for distillation.
//!
//! Every network maps a `3×p×p` patch to a `d`-dimensional descriptor
//! (`1×1×d` spatially) using only valid convolutions and 2×2 max pooling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StadError};
use crate::graph::{ComputeGraph, NodeId, ParamStore};
use crate::ops::LEAKY_SLOPE;
use crate::tensor::Tensor;

pub const SUPPORTED_PATCH_SIZES: [usize; 3] = [17, 33, 65];
pub const DEFAULT_DESCRIPTOR_DIM: usize = 128;
pub const DEFAULT_TARGET_DIM: usize = 512;
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    MaxPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu(f32),
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    /// Output channels for convolutions; pooling keeps the channel count.
    pub out_channels: usize,
    pub activation: Activation,
}

impl LayerSpec {
    fn conv(kernel: usize, out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel,
            stride: 1,
            out_channels,
            activation: Activation::LeakyRelu(LEAKY_SLOPE),
        }
    }

    fn pool() -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool,
            kernel: 2,
            stride: 2,
            out_channels: 0,
            activation: Activation::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub patch_size: usize,
    pub descriptor_dim: usize,
    pub in_channels: usize,
    /// Hidden channel counts are divided by this factor (1 = full width).
    pub width_divisor: usize,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Full-width network for receptive field `p`.
    pub fn teacher(patch_size: usize, descriptor_dim: usize) -> Result<Self> {
        Self::scaled(patch_size, descriptor_dim, 1)
    }

    /// Same kernels, strides and output dim as [`Architecture::teacher`], with
    /// every hidden layer's channel count divided by `width_divisor`.
    pub fn scaled(patch_size: usize, descriptor_dim: usize, width_divisor: usize) -> Result<Self> {
        if descriptor_dim == 0 {
            return Err(StadError::invalid("descriptor dimension must be positive"));
        }
        if width_divisor == 0 || 128 % width_divisor != 0 {
            return Err(StadError::invalid(format!(
                "width divisor {width_divisor} must divide 128"
            )));
        }
        let ch = |c: usize| c / width_divisor;
        let d = descriptor_dim;
        let final_conv = |kernel| {
            let mut l = LayerSpec::conv(kernel, d);
            l.activation = Activation::None;
            l
        };
        let layers = match patch_size {
            65 => vec![
                LayerSpec::conv(5, ch(128)),
                LayerSpec::pool(),
                LayerSpec::conv(5, ch(128)),
                LayerSpec::pool(),
                LayerSpec::conv(5, ch(256)),
                LayerSpec::pool(),
                LayerSpec::conv(4, ch(256)),
                final_conv(1),
            ],
            33 => vec![
                LayerSpec::conv(3, ch(128)),
                LayerSpec::pool(),
                LayerSpec::conv(5, ch(256)),
                LayerSpec::pool(),
                LayerSpec::conv(2, ch(256)),
                final_conv(4),
            ],
            17 => vec![
                LayerSpec::conv(6, ch(128)),
                LayerSpec::conv(5, ch(256)),
                LayerSpec::conv(5, ch(256)),
                final_conv(4),
            ],
            p => {
                return Err(StadError::invalid(format!(
                    "unsupported patch size {p}; expected one of {SUPPORTED_PATCH_SIZES:?}"
                )))
            }
        };
        let arch = Architecture {
            patch_size,
            descriptor_dim,
            in_channels: IMAGE_CHANNELS,
            width_divisor,
            layers,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Spatial side and channel count after each layer for a `p×p` input.
    pub fn trace(&self) -> Vec<(usize, usize)> {
        let mut side = self.patch_size;
        let mut channels = self.in_channels;
        self.layers
            .iter()
            .map(|l| {
                match l.kind {
                    LayerKind::Conv => {
                        side = (side + 1).saturating_sub(l.kernel);
                        channels = l.out_channels;
                    }
                    LayerKind::MaxPool => side = (side.saturating_sub(l.kernel)) / l.stride + 1,
                }
                (side, channels)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let last_conv = self
            .layers
            .iter()
            .rposition(|l| l.kind == LayerKind::Conv)
            .ok_or_else(|| StadError::invalid("architecture without convolutions"))?;
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.stride == 0 {
                return Err(StadError::invalid(format!("layer {i} has zero kernel or stride")));
            }
            if l.kind == LayerKind::Conv && l.stride != 1 {
                return Err(StadError::invalid("strided convolutions are not supported"));
            }
            let activated = matches!(l.activation, Activation::LeakyRelu(_));
            if l.kind == LayerKind::Conv && activated == (i == last_conv) {
                return Err(StadError::invalid(format!(
                    "layer {i}: every convolution but the last must be activated"
                )));
            }
        }
        match self.trace().last() {
            Some(&(1, c)) if c == self.descriptor_dim => Ok(()),
            other => Err(StadError::invalid(format!(
                "p={} network ends at {other:?}, expected 1×1×{}",
                self.patch_size, self.descriptor_dim
            ))),
        }
    }

    /// `(param prefix, layer)` for each convolution, numbered from 1.
    pub fn conv_layers(&self) -> impl Iterator<Item = (String, &LayerSpec)> {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::Conv)
            .enumerate()
            .map(|(i, l)| (format!("conv{}", i + 1), l))
    }

    /// Input channel count seen by each convolution, in order.
    fn conv_fan_in(&self) -> Vec<usize> {
        let mut channels = self.in_channels;
        let mut out = Vec::new();
        for l in &self.layers {
            if l.kind == LayerKind::Conv {
                out.push(channels);
                channels = l.out_channels;
            }
        }
        out
    }
}

/// A layer as executed: patch networks run with unit dilation, the dense
/// transform rewrites strides and dilations.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ExecLayer {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub activation: Activation,
    pub param_prefix: Option<String>,
}

pub(crate) fn patch_exec_layers(arch: &Architecture) -> Vec<ExecLayer> {
    let mut conv_index = 0;
    arch.layers
        .iter()
        .map(|l| {
            let param_prefix = (l.kind == LayerKind::Conv).then(|| {
                conv_index += 1;
                format!("conv{conv_index}")
            });
            ExecLayer {
                kind: l.kind,
                kernel: l.kernel,
                stride: l.stride,
                dilation: 1,
                activation: l.activation,
                param_prefix,
            }
        })
        .collect()
}

pub(crate) fn run_layers(
    graph: &mut ComputeGraph,
    params: &ParamStore,
    layers: &[ExecLayer],
    mut x: NodeId,
) -> Result<NodeId> {
    for l in layers {
        x = match l.kind {
            LayerKind::Conv => {
                let prefix = l.param_prefix.as_deref().expect("conv layers carry parameters");
                let w = graph.param(params, &format!("{prefix}.weight"))?;
                let b = graph.param(params, &format!("{prefix}.bias"))?;
                graph.conv2d(x, w, b, l.stride, l.dilation)?
            }
            LayerKind::MaxPool => graph.maxpool2d(x, l.kernel, l.stride, l.dilation)?,
        };
        if let Activation::LeakyRelu(slope) = l.activation {
            x = graph.leaky_relu(x, slope)?;
        }
    }
    Ok(x)
}

/// Patch-input network `T̂` (or a student of the same shape) with its
/// parameters.
#[derive(Clone, Debug)]
pub struct PatchNet {
    pub arch: Architecture,
    pub params: ParamStore,
}

impl PatchNet {
    /// Uniform initialization in `±sqrt(1/fan_in)` for weights and biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(arch, |fan_in, len| {
            let bound = (1.0 / fan_in as f32).sqrt();
            (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
        })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        Self::build(arch, |_, len| vec![0.0; len])
    }

    fn build(arch: Architecture, mut init: impl FnMut(usize, usize) -> Vec<f32>) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamStore::new();
        let fans = arch.conv_fan_in();
        for ((prefix, l), c_in) in arch.conv_layers().zip(fans) {
            let fan_in = c_in * l.kernel * l.kernel;
            let w = init(fan_in, l.out_channels * fan_in);
            let b = init(fan_in, l.out_channels);
            params.insert(
                format!("{prefix}.weight"),
                Tensor::new(vec![l.out_channels, c_in, l.kernel, l.kernel], w)?,
            )?;
            params.insert(format!("{prefix}.bias"), Tensor::new(vec![l.out_channels], b)?)?;
        }
        Ok(PatchNet { arch, params })
    }

    /// Replaces parameters, checking every expected tensor is present with
    /// the right shape.
    pub fn from_params(arch: Architecture, params: ParamStore) -> Result<Self> {
        let reference = Self::zeros(arch.clone())?;
        if reference.params.len() != params.len() {
            return Err(StadError::format(format!(
                "expected {} parameter tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for p in reference.params.iter() {
            let got = params
                .get(&p.name)
                .ok_or_else(|| StadError::format(format!("missing parameter {}", p.name)))?;
            if got.value.shape() != p.value.shape() {
                return Err(StadError::format(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    got.value.shape(),
                    p.value.shape()
                )));
            }
        }
        Ok(PatchNet { arch, params })
    }

    pub fn patch_size(&self) -> usize {
        self.arch.patch_size
    }

    pub fn descriptor_dim(&self) -> usize {
        self.arch.descriptor_dim
    }

    /// Records the patch network on `graph` for an `N×3×p×p` input node;
    /// the result is `N×d`.
    pub fn forward(&self, graph: &mut ComputeGraph, x: NodeId) -> Result<NodeId> {
        self.forward_with(graph, &self.params, x)
    }

    /// Like [`PatchNet::forward`] but reading parameters from `params`,
    /// which must hold this network's tensors under the same names.
    pub fn forward_with(&self, graph: &mut ComputeGraph, params: &ParamStore, x: NodeId) -> Result<NodeId> {
        let n = graph.value(x)?.dims4()?.0;
        let y = run_layers(graph, params, &patch_exec_layers(&self.arch), x)?;
        graph.reshape(y, &[n, self.arch.descriptor_dim])
    }

    fn check_patch(&self, shape: &[usize]) -> Result<()> {
        let p = self.arch.patch_size;
        let ok = matches!(*shape, [c, h, w] | [_, c, h, w] if c == self.arch.in_channels && h == p && w == p);
        if ok {
            Ok(())
        } else {
            Err(StadError::shape(format!(
                "expected {}×{p}×{p} patches, got {shape:?}",
                self.arch.in_channels
            )))
        }
    }

    /// Descriptors for an `N×3×p×p` batch, as an `N×d` tensor.
    pub fn forward_batch(&self, patches: &Tensor) -> Result<Tensor> {
        self.check_patch(patches.shape())?;
        let mut g = ComputeGraph::new();
        let x = g.input(patches.clone())?;
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y)?.clone())
    }

    /// The `d`-dimensional descriptor of one `3×p×p` patch.
    pub fn forward_patch(&self, patch: &Tensor) -> Result<Tensor> {
        if patch.ndim() != 3 {
            return Err(StadError::shape(format!("expected a single patch, got {:?}", patch.shape())));
        }
        self.forward_batch(patch)?.reshape(&[self.arch.descriptor_dim])
    }
}

/// Builds `T̂` for receptive field `p` with freshly initialized weights.
pub fn build_teacher_patch_net(patch_size: usize, descriptor_dim: usize, seed: u64) -> Result<PatchNet> {
    PatchNet::new(Architecture::teacher(patch_size, descriptor_dim)?, seed)
}

/// Fully connected map from descriptors to distillation targets.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub input_dim: usize,
    pub target_dim: usize,
    pub params: ParamStore,
}

impl Decoder {
    pub const WEIGHT: &'static str = "decoder.weight";
    pub const BIAS: &'static str = "decoder.bias";

    pub fn new(input_dim: usize, target_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (1.0 / input_dim.max(1) as f32).sqrt();
        let mut draw = |len: usize| -> Vec<f32> { (0..len).map(|_| rng.random_range(-bound..=bound)).collect() };
        let w = draw(target_dim * input_dim);
        let b = draw(target_dim);
        Self::from_tensors(
            Tensor::new(vec![target_dim, input_dim], w)?,
            Tensor::new(vec![target_dim], b)?,
        )
    }

    pub fn from_tensors(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (target_dim, input_dim) = match *weight.shape() {
            [m, n] => (m, n),
            _ => return Err(StadError::shape(format!("decoder weight {:?}", weight.shape()))),
        };
        if bias.shape() != [target_dim] {
            return Err(StadError::shape(format!("decoder bias {:?}", bias.shape())));
        }
        let mut params = ParamStore::new();
        params.insert(Self::WEIGHT, weight)?;
        params.insert(Self::BIAS, bias)?;
        Ok(Decoder {
            input_dim,
            target_dim,
            params,
        })
    }

    pub fn forward(&self, graph: &mut ComputeGraph, descriptors: NodeId) -> Result<NodeId> {
        self.forward_with(graph, &self.params, descriptors)
    }

    pub fn forward_with(&self, graph: &mut ComputeGraph, params: &ParamStore, descriptors: NodeId) -> Result<NodeId> {
        let w = graph.param(params, Self::WEIGHT)?;
        let b = graph.param(params, Self::BIAS)?;
        graph.linear(descriptors, w, b)
    }

    pub fn decode(&self, y: &Tensor) -> Result<Tensor> {
        crate::ops::fully_connected(y, self.params.value(Self::WEIGHT)?, self.params.value(Self::BIAS)?)
    }
}
