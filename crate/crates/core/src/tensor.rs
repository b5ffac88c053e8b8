//! Dense row-major `f32` tensors.
//!
//! Images and feature maps use channels-first layout: `C×H×W` for a single
//! image, `N×C×H×W` for a batch.

use crate::error::{Result, StadError};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(StadError::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let len: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(StadError::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Interprets the tensor as `N×C×H×W`, treating a 3-d tensor as a batch
    /// of one.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((1, c, h, w)),
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(StadError::shape(format!(
                "expected a C×H×W or N×C×H×W tensor, got {:?}",
                self.shape
            ))),
        }
    }

    /// `C×H×W` view of one image; errors on batched tensors with `N > 1`.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.dims4()? {
            (1, c, h, w) => Ok((c, h, w)),
            (n, ..) => Err(StadError::shape(format!("expected one image, got a batch of {n}"))),
        }
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> f32 {
        let (h, w) = (self.shape[self.ndim() - 2], self.shape[self.ndim() - 1]);
        self.data[(c * h + y) * w + x]
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(StadError::NonFinite(op))
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(StadError::shape(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Descriptor at spatial position `(y, x)` of a `D×H×W` map.
    pub fn pixel_vector(&self, y: usize, x: usize) -> Vec<f32> {
        let nd = self.ndim();
        let (d, h, w) = (self.shape[nd - 3], self.shape[nd - 2], self.shape[nd - 1]);
        (0..d).map(|c| self.data[(c * h + y) * w + x]).collect()
    }

    /// Copies the `h×w` window at `(y0, x0)` out of every channel.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor> {
        let (c, ih, iw) = self.dims3()?;
        if y0 + h > ih || x0 + w > iw {
            return Err(StadError::shape(format!(
                "crop {h}×{w} at ({y0},{x0}) exceeds {ih}×{iw}"
            )));
        }
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                let row = (ch * ih + y0 + y) * iw + x0;
                out.extend_from_slice(&self.data[row..row + w]);
            }
        }
        Tensor::new(vec![c, h, w], out)
    }

    /// Mirror padding that does not repeat the edge pixel (`abc|ba`).
    pub fn reflect_pad(&self, pad: usize) -> Result<Tensor> {
        let (c, h, w) = self.dims3()?;
        if pad == 0 {
            return Ok(self.clone());
        }
        if pad >= h || pad >= w {
            return Err(StadError::shape(format!(
                "reflection pad {pad} needs an image larger than {h}×{w}"
            )));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let reflect = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let mut i = i;
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * (n - 1) - i;
            }
            i as usize
        };
        let mut out = vec![0.0; c * ph * pw];
        for ch in 0..c {
            for y in 0..ph {
                let sy = reflect(y as isize - pad as isize, h);
                for x in 0..pw {
                    let sx = reflect(x as isize - pad as isize, w);
                    out[(ch * ph + y) * pw + x] = self.data[(ch * h + sy) * w + sx];
                }
            }
        }
        Tensor::new(vec![c, ph, pw], out)
    }

    /// Stacks same-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| StadError::invalid("cannot stack an empty list"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(StadError::shape(format!(
                    "stack of {:?} and {:?}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(shape, data)
    }
}
