//! Dense evaluation of patch networks.
//!
//! A strided pooling layer is replaced by a stride-1 pooling layer, and the
//! dilation of every later layer is multiplied by the removed stride. Each
//! pooling phase then lands in its own interleaved output position, so one
//! pass over an `H×W` image yields the descriptor of every `p×p` window.
//! Floor pooling drops trailing rows inside a patch; the dense stack computes
//! a few extra rows at the bottom/right that the patch grid never reaches,
//! and those are cropped.

use serde::{Deserialize, Serialize};

use crate::arch::{patch_exec_layers, run_layers, ExecLayer, LayerKind, PatchNet};
use crate::error::{Result, StadError};
use crate::graph::{ComputeGraph, NodeId, ParamStore};
use crate::tensor::Tensor;

/// How descriptors are produced near the image border.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderPolicy {
    /// Mirror-pad by `(p−1)/2` so the map has the input's resolution.
    #[default]
    Reflect,
}

#[derive(Clone, Debug)]
pub struct DenseNet {
    net: PatchNet,
    layers: Vec<ExecLayer>,
    pub border: BorderPolicy,
}

/// Rewrites `net` for dense evaluation. Parameters are shared unchanged.
pub fn densify(net: &PatchNet) -> Result<DenseNet> {
    let mut dilation = 1;
    let mut layers = Vec::new();
    for l in patch_exec_layers(&net.arch) {
        match l.kind {
            LayerKind::Conv if l.stride != 1 => {
                return Err(StadError::invalid("cannot densify a strided convolution"));
            }
            LayerKind::Conv | LayerKind::MaxPool => {}
        }
        let stride = l.stride;
        layers.push(ExecLayer {
            stride: 1,
            dilation,
            ..l
        });
        dilation *= stride;
    }
    Ok(DenseNet {
        net: net.clone(),
        layers,
        border: BorderPolicy::Reflect,
    })
}

impl DenseNet {
    pub fn patch_net(&self) -> &PatchNet {
        &self.net
    }

    pub fn patch_size(&self) -> usize {
        self.net.patch_size()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.net.descriptor_dim()
    }

    /// `(kernel, stride, dilation)` of each executed layer.
    pub fn layer_geometry(&self) -> Vec<(usize, usize, usize)> {
        self.layers.iter().map(|l| (l.kernel, l.stride, l.dilation)).collect()
    }

    /// Records the dense stack for a `1×3×H×W` input node. The output is
    /// `1×d×(H−p+1)×(W−p+1)`, one descriptor per fully contained window,
    /// indexed by the window's top-left corner.
    pub fn forward(&self, graph: &mut ComputeGraph, x: NodeId) -> Result<NodeId> {
        self.forward_with(graph, &self.net.params, x)
    }

    /// Like [`DenseNet::forward`] with parameters read from `params`.
    pub fn forward_with(&self, graph: &mut ComputeGraph, params: &ParamStore, x: NodeId) -> Result<NodeId> {
        let (n, _, h, w) = graph.value(x)?.dims4()?;
        let p = self.patch_size();
        if n != 1 {
            return Err(StadError::shape("dense evaluation takes one image at a time"));
        }
        if h < p || w < p {
            return Err(StadError::shape(format!("image {h}×{w} is smaller than the receptive field {p}")));
        }
        let y = run_layers(graph, params, &self.layers, x)?;
        graph.crop(y, h - p + 1, w - p + 1)
    }

    /// Unpadded dense map `d×(H−p+1)×(W−p+1)` of a `3×H×W` image.
    pub fn forward_valid(&self, image: &Tensor) -> Result<Tensor> {
        let (c, h, w) = image.dims3()?;
        if c != self.net.arch.in_channels {
            return Err(StadError::shape(format!("expected {} channels, got {c}", self.net.arch.in_channels)));
        }
        let mut g = ComputeGraph::new();
        let x = g.input(image.clone().reshape(&[1, c, h, w])?)?;
        let y = self.forward(&mut g, x)?;
        let v = g.value(y)?;
        let (_, d, oh, ow) = v.dims4()?;
        v.clone().reshape(&[d, oh, ow])
    }

    /// Pads `image` according to the border policy so that the valid dense
    /// map has the image's own resolution.
    pub fn pad(&self, image: &Tensor) -> Result<Tensor> {
        match self.border {
            BorderPolicy::Reflect => image.reflect_pad((self.patch_size() - 1) / 2),
        }
    }
}

/// Full-resolution descriptor map `d×h×w`; position `(r, c)` describes the
/// `p×p` window centred on that pixel.
pub fn extract_dense(dnet: &DenseNet, image: &Tensor) -> Result<Tensor> {
    let (_, h, w) = image.dims3()?;
    let p = dnet.patch_size();
    if h < p || w < p {
        return Err(StadError::shape(format!("image {h}×{w} is smaller than the receptive field {p}")));
    }
    dnet.forward_valid(&dnet.pad(image)?)
}

/// Slow reference path: runs the patch network on every `p×p` window.
/// Output matches [`DenseNet::forward_valid`].
pub fn sliding_window_reference(net: &PatchNet, image: &Tensor) -> Result<Tensor> {
    const BATCH: usize = 128;
    let (c, h, w) = image.dims3()?;
    let p = net.patch_size();
    if h < p || w < p {
        return Err(StadError::shape(format!("image {h}×{w} is smaller than the receptive field {p}")));
    }
    let (oh, ow) = (h - p + 1, w - p + 1);
    let d = net.descriptor_dim();
    let mut out = Tensor::zeros(&[d, oh, ow]);
    let positions: Vec<(usize, usize)> = (0..oh).flat_map(|y| (0..ow).map(move |x| (y, x))).collect();
    for chunk in positions.chunks(BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * c * p * p);
        for &(y, x) in chunk {
            data.extend_from_slice(image.crop(y, x, p, p)?.data());
        }
        let batch = Tensor::new(vec![chunk.len(), c, p, p], data)?;
        let desc = net.forward_batch(&batch)?;
        for (i, &(y, x)) in chunk.iter().enumerate() {
            for k in 0..d {
                out.data_mut()[(k * oh + y) * ow + x] = desc.data()[i * d + k];
            }
        }
    }
    Ok(out)
}
