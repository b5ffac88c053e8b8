//! Parameter storage and a reverse-mode tape over the layer primitives.
//!
//! Nodes are appended in execution order and may only reference earlier
//! nodes, so walking the tape backwards is a reverse topological order.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, StadError};
use crate::ops::{self, WindowGeometry};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameters with same-shaped gradient slots, in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(StadError::invalid(format!("duplicate parameter {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| StadError::Graph(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Splits into `(others, matching)` by name prefix, keeping order.
    pub fn split_prefix(self, prefix: &str) -> (ParamStore, ParamStore) {
        let mut others = ParamStore::new();
        let mut matching = ParamStore::new();
        for p in self.params {
            let target = if p.name.starts_with(prefix) { &mut matching } else { &mut others };
            target.index.insert(p.name.clone(), target.params.len());
            target.params.push(p);
        }
        (others, matching)
    }

    /// Appends every parameter of `other`; names must not collide.
    pub fn extend(&mut self, other: &ParamStore) -> Result<()> {
        for p in other.iter() {
            self.insert(p.name.clone(), p.value.clone())?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    fn accumulate(&mut self, name: &str, grad: &[f32]) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| StadError::Graph(format!("gradient for unknown parameter {name}")))?;
        if p.grad.len() != grad.len() {
            return Err(StadError::shape(format!("gradient size for {name}")));
        }
        for (g, d) in p.grad.data_mut().iter_mut().zip(grad) {
            *g += d;
        }
        Ok(())
    }
}

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one particular [`ComputeGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId {
    graph: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(String),
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        geom: WindowGeometry,
    },
    MaxPool2d {
        input: usize,
        argmax: Vec<u32>,
    },
    LeakyRelu {
        input: usize,
        slope: f32,
    },
    Linear {
        input: usize,
        weight: usize,
        bias: usize,
        batch: usize,
    },
    Crop {
        input: usize,
    },
    Reshape {
        input: usize,
    },
    Sum {
        input: usize,
    },
    SumSquares {
        input: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of executed operations, sufficient to propagate gradients from a
/// scalar loss back to every parameter it depends on.
#[derive(Debug)]
pub struct ComputeGraph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for ComputeGraph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of tracked inputs after a backward pass.
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        if id.graph != self.graph {
            return None;
        }
        self.grads.get(&id.index)
    }
}

impl ComputeGraph {
    pub fn new() -> Self {
        ComputeGraph {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    fn resolve(&self, id: NodeId) -> Result<usize> {
        if id.graph != self.id || id.index >= self.nodes.len() {
            return Err(StadError::Graph(format!(
                "node {id:?} is not recorded in graph {}",
                self.id
            )));
        }
        Ok(id.index)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<NodeId> {
        value.check_finite(name)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        Ok(&self.nodes[self.resolve(id)?].value)
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Input, false, "input")
    }

    /// An input whose gradient is reported in [`Gradients`].
    pub fn tracked_input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Input, true, "input")
    }

    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let value = store.value(name)?.clone();
        self.push(value, Op::Param(name.to_string()), true, "param")
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, dilation: usize) -> Result<NodeId> {
        let (xi, wi, bi) = (self.resolve(x)?, self.resolve(w)?, self.resolve(b)?);
        let (xv, wv, bv) = (&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value);
        let dims = xv.dims4()?;
        let (o, c, k) = match *wv.shape() {
            [o, c, k, k2] if k == k2 => (o, c, k),
            _ => return Err(StadError::shape(format!("conv weights {:?}", wv.shape()))),
        };
        if c != dims.1 || bv.shape() != [o] {
            return Err(StadError::shape(format!(
                "conv input {:?}, weights {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let geom = WindowGeometry::new(dims, k, stride, dilation)?;
        let out = ops::conv2d_forward(xv.data(), wv.data(), bv.data(), &geom);
        let value = Tensor::new(vec![dims.0, o, geom.out_height, geom.out_width], out)?;
        let rg = self.nodes[xi].requires_grad || self.nodes[wi].requires_grad || self.nodes[bi].requires_grad;
        self.push(
            value,
            Op::Conv2d {
                input: xi,
                weight: wi,
                bias: bi,
                geom,
            },
            rg,
            "conv2d",
        )
    }

    pub fn maxpool2d(&mut self, x: NodeId, kernel: usize, stride: usize, dilation: usize) -> Result<NodeId> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let dims = xv.dims4()?;
        let geom = WindowGeometry::new(dims, kernel, stride, dilation)?;
        let (out, argmax) = ops::maxpool2d_forward(xv.data(), &geom);
        let value = Tensor::new(vec![dims.0, dims.1, geom.out_height, geom.out_width], out)?;
        let rg = self.nodes[xi].requires_grad;
        self.push(value, Op::MaxPool2d { input: xi, argmax }, rg, "maxpool2d")
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> Result<NodeId> {
        let xi = self.resolve(x)?;
        let value = ops::leaky_relu(&self.nodes[xi].value, slope);
        let rg = self.nodes[xi].requires_grad;
        self.push(value, Op::LeakyRelu { input: xi, slope }, rg, "leaky_relu")
    }

    /// Applies `m×n` weights to every row of a `B×n` input (extra trailing
    /// dims are flattened into `n`).
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xi, wi, bi) = (self.resolve(x)?, self.resolve(w)?, self.resolve(b)?);
        let (xv, wv, bv) = (&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value);
        let (m, n) = match *wv.shape() {
            [m, n] => (m, n),
            _ => return Err(StadError::shape(format!("linear weights {:?}", wv.shape()))),
        };
        let batch = xv.shape().first().copied().unwrap_or(0);
        if batch == 0 || xv.len() != batch * n || bv.shape() != [m] {
            return Err(StadError::shape(format!(
                "linear input {:?}, weights {m}×{n}, bias {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let value = Tensor::new(vec![batch, m], ops::linear_forward(xv.data(), wv.data(), bv.data(), batch))?;
        let rg = self.nodes[xi].requires_grad || self.nodes[wi].requires_grad || self.nodes[bi].requires_grad;
        self.push(
            value,
            Op::Linear {
                input: xi,
                weight: wi,
                bias: bi,
                batch,
            },
            rg,
            "linear",
        )
    }

    /// Keeps the top-left `height×width` window of an `N×C×H×W` tensor.
    pub fn crop(&mut self, x: NodeId, height: usize, width: usize) -> Result<NodeId> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let (n, c, h, w) = xv.dims4()?;
        if height > h || width > w {
            return Err(StadError::shape(format!("crop {height}×{width} of {h}×{w}")));
        }
        let mut out = Vec::with_capacity(n * c * height * width);
        for plane in xv.data().chunks(h * w) {
            for row in plane.chunks(w).take(height) {
                out.extend_from_slice(&row[..width]);
            }
        }
        let value = Tensor::new(vec![n, c, height, width], out)?;
        let rg = self.nodes[xi].requires_grad;
        self.push(value, Op::Crop { input: xi }, rg, "crop")
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let xi = self.resolve(x)?;
        let value = self.nodes[xi].value.clone().reshape(shape)?;
        let rg = self.nodes[xi].requires_grad;
        self.push(value, Op::Reshape { input: xi }, rg, "reshape")
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let xi = self.resolve(x)?;
        let s = self.nodes[xi].value.data().iter().sum::<f32>();
        let rg = self.nodes[xi].requires_grad;
        self.push(Tensor::scalar(s), Op::Sum { input: xi }, rg, "sum")
    }

    pub fn sum_squares(&mut self, x: NodeId) -> Result<NodeId> {
        let xi = self.resolve(x)?;
        let s = self.nodes[xi].value.data().iter().map(|v| v * v).sum::<f32>();
        let rg = self.nodes[xi].requires_grad;
        self.push(Tensor::scalar(s), Op::SumSquares { input: xi }, rg, "sum_squares")
    }

    /// Backpropagates from a scalar loss node, accumulating parameter
    /// gradients into `store`.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<Gradients> {
        let li = self.resolve(loss)?;
        let lv = &self.nodes[li].value;
        if lv.len() != 1 {
            return Err(StadError::Graph(format!("loss must be a scalar, got {:?}", lv.shape())));
        }
        self.backward_with(vec![(loss, Tensor::full(lv.shape(), 1.0))], store)
    }

    /// Backpropagates externally computed upstream gradients, e.g. from a
    /// loss head evaluated outside the graph.
    pub fn backward_with(&self, seeds: Vec<(NodeId, Tensor)>, store: &mut ParamStore) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            let i = self.resolve(id)?;
            if g.len() != self.nodes[i].value.len() {
                return Err(StadError::shape(format!(
                    "seed gradient {:?} for node of shape {:?}",
                    g.shape(),
                    self.nodes[i].value.shape()
                )));
            }
            g.check_finite("loss gradient")?;
            add_into(&mut grads[i], g.data());
        }
        let mut out = HashMap::new();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {
                    out.insert(i, Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::Param(name) => store.accumulate(name, &g)?,
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    let need_dx = self.nodes[*input].requires_grad;
                    let wv = &self.nodes[*weight].value;
                    let cg = ops::conv2d_backward(
                        self.nodes[*input].value.data(),
                        wv.data(),
                        wv.shape()[0],
                        &g,
                        geom,
                        need_dx,
                    );
                    if let Some(dx) = cg.input {
                        add_into(&mut grads[*input], &dx);
                    }
                    add_into(&mut grads[*weight], &cg.weight);
                    add_into(&mut grads[*bias], &cg.bias);
                }
                Op::MaxPool2d { input, argmax } => {
                    let dx = ops::maxpool2d_backward(self.nodes[*input].value.len(), argmax, &g);
                    add_into(&mut grads[*input], &dx);
                }
                Op::LeakyRelu { input, slope } => {
                    let dx = ops::leaky_relu_backward(self.nodes[*input].value.data(), &g, *slope);
                    add_into(&mut grads[*input], &dx);
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                    batch,
                } => {
                    let wv = &self.nodes[*weight].value;
                    let (dx, dw, db) =
                        ops::linear_backward(self.nodes[*input].value.data(), wv.data(), &g, *batch, wv.shape()[0]);
                    add_into(&mut grads[*input], &dx);
                    add_into(&mut grads[*weight], &dw);
                    add_into(&mut grads[*bias], &db);
                }
                Op::Crop { input } => {
                    let (_, _, h, w) = self.nodes[*input].value.dims4()?;
                    let (_, _, ch, cw) = node.value.dims4()?;
                    let mut dx = vec![0.0; self.nodes[*input].value.len()];
                    for (plane, gplane) in dx.chunks_mut(h * w).zip(g.chunks(ch * cw)) {
                        for (row, grow) in plane.chunks_mut(w).zip(gplane.chunks(cw)) {
                            row[..cw].copy_from_slice(grow);
                        }
                    }
                    add_into(&mut grads[*input], &dx);
                }
                Op::Reshape { input } => add_into(&mut grads[*input], &g),
                Op::Sum { input } => {
                    let dx = vec![g[0]; self.nodes[*input].value.len()];
                    add_into(&mut grads[*input], &dx);
                }
                Op::SumSquares { input } => {
                    let dx: Vec<f32> = self.nodes[*input].value.data().iter().map(|v| 2.0 * v * g[0]).collect();
                    add_into(&mut grads[*input], &dx);
                }
            }
        }
        Ok(Gradients {
            graph: self.id,
            grads: out,
        })
    }
}

fn add_into(slot: &mut Option<Vec<f32>>, g: &[f32]) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}
