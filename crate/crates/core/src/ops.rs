//! Layer primitives: valid convolution, max pooling, leaky ReLU and the
//! fully connected map, each with its backward kernel.
//!
//! Convolutions lower to GEMM over chunked `im2col` buffers. Chunk
//! boundaries depend only on the geometry, so results are bit-identical
//! between runs.

use std::cell::RefCell;

use crate::error::{Result, StadError};
use crate::tensor::Tensor;

thread_local! {
    // Reused im2col buffers; every element is overwritten before it is read,
    // so stale contents never leak into results.
    static SCRATCH: RefCell<Vec<Vec<f32>>> = const { RefCell::new(Vec::new()) };
}

fn take_scratch() -> Vec<f32> {
    SCRATCH.with(|s| s.borrow_mut().pop().unwrap_or_default())
}

fn return_scratch(bufs: impl IntoIterator<Item = Vec<f32>>) {
    SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        for b in bufs {
            if s.len() < 8 {
                s.push(b);
            }
        }
    })
}

/// Negative-side slope of every activation in the descriptor networks.
pub const LEAKY_SLOPE: f32 = 5e-3;

/// Upper bound on the floats held by one `im2col` chunk. Small enough that
/// the chunk is still in cache when the GEMM packs it; larger chunks made
/// student training about 1.8× slower.
const CHUNK_FLOATS: usize = 1 << 17;

/// `c = alpha·a·b + beta·c` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm lhs out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm rhs out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm output out of bounds");
    // SAFETY: every index touched by the kernel is bounded by the asserts
    // above, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Sliding-window geometry shared by convolution and pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl WindowGeometry {
    pub fn new(
        (batch, channels, height, width): (usize, usize, usize, usize),
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || dilation == 0 {
            return Err(StadError::invalid(format!(
                "kernel {kernel}, stride {stride}, dilation {dilation} must all be ≥ 1"
            )));
        }
        let extent = (kernel - 1) * dilation + 1;
        if height < extent || width < extent {
            return Err(StadError::shape(format!(
                "input {height}×{width} is smaller than the window extent {extent}"
            )));
        }
        Ok(WindowGeometry {
            batch,
            channels,
            height,
            width,
            kernel,
            stride,
            dilation,
            out_height: (height - extent) / stride + 1,
            out_width: (width - extent) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Splits the `batch·out_height` output rows into im2col chunks.
    fn row_chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let per_row = (self.patch_len() * self.out_width).max(1);
        let step = (CHUNK_FLOATS / per_row).max(1);
        let total = self.batch * self.out_height;
        (0..total)
            .step_by(step)
            .map(move |q0| (q0, (q0 + step).min(total)))
    }
}

fn im2col(x: &[f32], g: &WindowGeometry, q0: usize, q1: usize, cols: &mut [f32]) {
    let ncols = (q1 - q0) * g.out_width;
    let k = g.kernel;
    for c in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let kidx = (c * k + ky) * k + kx;
                let dst = &mut cols[kidx * ncols..(kidx + 1) * ncols];
                for q in q0..q1 {
                    let (n, oy) = (q / g.out_height, q % g.out_height);
                    let iy = oy * g.stride + ky * g.dilation;
                    let src = ((n * g.channels + c) * g.height + iy) * g.width + kx * g.dilation;
                    let d = &mut dst[(q - q0) * g.out_width..(q - q0 + 1) * g.out_width];
                    if g.stride == 1 {
                        d.copy_from_slice(&x[src..src + g.out_width]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = x[src + ox * g.stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f32], g: &WindowGeometry, q0: usize, q1: usize, dx: &mut [f32]) {
    let ncols = (q1 - q0) * g.out_width;
    let k = g.kernel;
    for c in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let kidx = (c * k + ky) * k + kx;
                let src = &cols[kidx * ncols..(kidx + 1) * ncols];
                for q in q0..q1 {
                    let (n, oy) = (q / g.out_height, q % g.out_height);
                    let iy = oy * g.stride + ky * g.dilation;
                    let dst = ((n * g.channels + c) * g.height + iy) * g.width + kx * g.dilation;
                    let s = &src[(q - q0) * g.out_width..(q - q0 + 1) * g.out_width];
                    for (ox, v) in s.iter().enumerate() {
                        dx[dst + ox * g.stride] += v;
                    }
                }
            }
        }
    }
}

/// Forward valid convolution of an `N×C×H×W` buffer with `O×C×k×k` weights.
/// Returns `N×O×H'×W'`.
pub fn conv2d_forward(x: &[f32], weight: &[f32], bias: &[f32], g: &WindowGeometry) -> Vec<f32> {
    let out_channels = bias.len();
    let plen = g.patch_len();
    let plane = g.out_plane();
    let mut out = vec![0.0; g.batch * out_channels * plane];
    let mut cols = take_scratch();
    let mut tmp = take_scratch();
    for (q0, q1) in g.row_chunks() {
        let ncols = (q1 - q0) * g.out_width;
        cols.resize(plen * ncols, 0.0);
        tmp.resize(out_channels * ncols, 0.0);
        im2col(x, g, q0, q1, &mut cols);
        sgemm(
            out_channels,
            plen,
            ncols,
            1.0,
            weight,
            (plen, 1),
            &cols,
            (ncols, 1),
            0.0,
            &mut tmp,
            (ncols, 1),
        );
        for q in q0..q1 {
            let (n, oy) = (q / g.out_height, q % g.out_height);
            for (o, &b) in bias.iter().enumerate() {
                let src = &tmp[o * ncols + (q - q0) * g.out_width..][..g.out_width];
                let dst = &mut out[(n * out_channels + o) * plane + oy * g.out_width..][..g.out_width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + b;
                }
            }
        }
    }
    return_scratch([cols, tmp]);
    out
}

pub struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

pub fn conv2d_backward(
    x: &[f32],
    weight: &[f32],
    out_channels: usize,
    dout: &[f32],
    g: &WindowGeometry,
    need_input_grad: bool,
) -> ConvGrads {
    let plen = g.patch_len();
    let plane = g.out_plane();
    let mut dw = vec![0.0; out_channels * plen];
    let mut db = vec![0.0; out_channels];
    // The transposed form pays for the zero border of the padded gradient,
    // so it only wins when the output is nearly as large as the input.
    let transposed = need_input_grad && g.stride == 1 && 4 * g.height * g.width <= 5 * plane;
    let mut dx = (need_input_grad && !transposed).then(|| vec![0.0; x.len()]);
    let mut cols = take_scratch();
    let mut dtmp = take_scratch();
    let mut dcols = take_scratch();
    for (q0, q1) in g.row_chunks() {
        let ncols = (q1 - q0) * g.out_width;
        dtmp.resize(out_channels * ncols, 0.0);
        for q in q0..q1 {
            let (n, oy) = (q / g.out_height, q % g.out_height);
            for o in 0..out_channels {
                let src = &dout[(n * out_channels + o) * plane + oy * g.out_width..][..g.out_width];
                dtmp[o * ncols + (q - q0) * g.out_width..][..g.out_width].copy_from_slice(src);
            }
        }
        for (o, acc) in db.iter_mut().enumerate() {
            *acc += dtmp[o * ncols..(o + 1) * ncols].iter().sum::<f32>();
        }
        cols.resize(plen * ncols, 0.0);
        im2col(x, g, q0, q1, &mut cols);
        // dW += dOut · colsᵀ
        sgemm(
            out_channels,
            ncols,
            plen,
            1.0,
            &dtmp,
            (ncols, 1),
            &cols,
            (1, ncols),
            1.0,
            &mut dw,
            (plen, 1),
        );
        if let Some(dx) = dx.as_mut() {
            dcols.resize(plen * ncols, 0.0);
            // dCols = Wᵀ · dOut
            sgemm(
                plen,
                out_channels,
                ncols,
                1.0,
                weight,
                (1, plen),
                &dtmp,
                (ncols, 1),
                0.0,
                &mut dcols,
                (ncols, 1),
            );
            col2im_add(&dcols, g, q0, q1, dx);
        }
    }
    return_scratch([cols, dtmp, dcols]);
    if transposed {
        dx = Some(conv2d_input_grad_stride1(weight, out_channels, dout, g));
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// Input gradient of a stride-1 convolution: the output gradient, padded by
/// the dilated kernel extent, convolved with the flipped kernel whose input
/// and output channels are swapped.
fn conv2d_input_grad_stride1(weight: &[f32], out_channels: usize, dout: &[f32], g: &WindowGeometry) -> Vec<f32> {
    let (k, c) = (g.kernel, g.channels);
    let pad = (k - 1) * g.dilation;
    let (oh, ow) = (g.out_height, g.out_width);
    let (ph, pw) = (oh + 2 * pad, ow + 2 * pad);
    let mut padded = vec![0.0; g.batch * out_channels * ph * pw];
    for no in 0..g.batch * out_channels {
        for y in 0..oh {
            let src = &dout[(no * oh + y) * ow..][..ow];
            padded[(no * ph + y + pad) * pw + pad..][..ow].copy_from_slice(src);
        }
    }
    let mut flipped = vec![0.0; c * out_channels * k * k];
    for o in 0..out_channels {
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    flipped[((ci * out_channels + o) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
                        weight[((o * c + ci) * k + ky) * k + kx];
                }
            }
        }
    }
    let tg = WindowGeometry::new((g.batch, out_channels, ph, pw), k, 1, g.dilation)
        .expect("padded gradient covers the kernel");
    debug_assert_eq!((tg.out_height, tg.out_width), (g.height, g.width));
    conv2d_forward(&padded, &flipped, &vec![0.0; c], &tg)
}

/// Max pooling; also returns, per output element, the flat input index of
/// the first maximal element in its window.
pub fn maxpool2d_forward(x: &[f32], g: &WindowGeometry) -> (Vec<f32>, Vec<u32>) {
    let plane = g.out_plane();
    let len = g.batch * g.channels * plane;
    let mut out = Vec::with_capacity(len);
    let mut argmax = Vec::with_capacity(len);
    for nc in 0..g.batch * g.channels {
        let base = nc * g.height * g.width;
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                let (y0, x0) = (oy * g.stride, ox * g.stride);
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = base + y0 * g.width + x0;
                for ky in 0..g.kernel {
                    let row = base + (y0 + ky * g.dilation) * g.width + x0;
                    for kx in 0..g.kernel {
                        let idx = row + kx * g.dilation;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2d_backward(input_len: usize, argmax: &[u32], dout: &[f32]) -> Vec<f32> {
    let mut dx = vec![0.0; input_len];
    for (&i, &d) in argmax.iter().zip(dout) {
        dx[i as usize] += d;
    }
    dx
}

#[inline]
pub fn leaky(v: f32, slope: f32) -> f32 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

pub fn leaky_relu_backward(x: &[f32], dout: &[f32], slope: f32) -> Vec<f32> {
    x.iter()
        .zip(dout)
        .map(|(&v, &d)| if v >= 0.0 { d } else { slope * d })
        .collect()
}

/// `y = x·Wᵀ + b` for a `B×n` input and `m×n` weights.
pub fn linear_forward(x: &[f32], weight: &[f32], bias: &[f32], batch: usize) -> Vec<f32> {
    let m = bias.len();
    let n = x.len().checked_div(batch).unwrap_or(0);
    let mut y = Vec::with_capacity(batch * m);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    sgemm(batch, n, m, 1.0, x, (n, 1), weight, (1, n), 1.0, &mut y, (m, 1));
    y
}

/// Returns `(dx, dW, db)`.
pub fn linear_backward(
    x: &[f32],
    weight: &[f32],
    dy: &[f32],
    batch: usize,
    out_dim: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let n = x.len() / batch.max(1);
    let mut dx = vec![0.0; batch * n];
    let mut dw = vec![0.0; out_dim * n];
    let mut db = vec![0.0; out_dim];
    sgemm(batch, out_dim, n, 1.0, dy, (out_dim, 1), weight, (n, 1), 0.0, &mut dx, (n, 1));
    sgemm(out_dim, batch, n, 1.0, dy, (1, out_dim), x, (n, 1), 0.0, &mut dw, (n, 1));
    for row in dy.chunks(out_dim) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    (dx, dw, db)
}

fn same_rank(input: &Tensor, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if input.ndim() == 3 {
        vec![c, h, w]
    } else {
        vec![n, c, h, w]
    }
}

/// Valid 2-d convolution of a `C×H×W` (or `N×C×H×W`) tensor with `O×C×k×k`
/// weights.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    dilation: usize,
) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let (o, wc, kh, kw) = match *weights.shape() {
        [o, wc, kh, kw] => (o, wc, kh, kw),
        _ => return Err(StadError::shape(format!("conv weights {:?}", weights.shape()))),
    };
    if wc != c || kh != kw || bias.shape() != [o] {
        return Err(StadError::shape(format!(
            "conv input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let g = WindowGeometry::new((n, c, h, w), kh, stride, dilation)?;
    let out = conv2d_forward(input.data(), weights.data(), bias.data(), &g);
    let t = Tensor::new(same_rank(input, n, o, g.out_height, g.out_width), out)?;
    t.check_finite("conv2d")?;
    Ok(t)
}

pub fn maxpool2d(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    maxpool2d_dilated(input, kernel, stride, 1)
}

pub fn maxpool2d_dilated(input: &Tensor, kernel: usize, stride: usize, dilation: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let g = WindowGeometry::new((n, c, h, w), kernel, stride, dilation)?;
    let (out, _) = maxpool2d_forward(input.data(), &g);
    Tensor::new(same_rank(input, n, c, g.out_height, g.out_width), out)
}

pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    x.map(|v| leaky(v, slope))
}

/// `W·x + b` for a single vector `x` (any shape with `n` elements).
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = match *weights.shape() {
        [m, n] => (m, n),
        _ => return Err(StadError::shape(format!("fc weights {:?}", weights.shape()))),
    };
    if input.len() != n || bias.shape() != [m] {
        return Err(StadError::shape(format!(
            "fc input of {} values, weights {m}×{n}, bias {:?}",
            input.len(),
            bias.shape()
        )));
    }
    let y = Tensor::new(vec![m], linear_forward(input.data(), weights.data(), bias.data(), 1))?;
    y.check_finite("fully_connected")?;
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    // Direct nested-loop reference.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, dil: usize) -> Tensor {
        let (c, h, wd) = x.dims3().unwrap();
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let ext = (k - 1) * dil + 1;
        let (oh, ow) = ((h - ext) / stride + 1, (wd - ext) / stride + 1);
        let mut out = Tensor::zeros(&[o, oh, ow]);
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[oc] as f64;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = w.data()[((oc * c + ic) * k + ky) * k + kx] as f64;
                                acc += wv * x.at3(ic, y * stride + ky * dil, xx * stride + kx * dil) as f64;
                            }
                        }
                    }
                    out.data_mut()[(oc * oh + y) * ow + xx] = acc as f32;
                }
            }
        }
        out
    }

    #[test]
    fn conv_scaling_kernel_on_ones() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 1, 1], 2.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_first_layer_shape_for_largest_patch() {
        let x = Tensor::zeros(&[3, 65, 65]);
        let w = Tensor::zeros(&[128, 3, 5, 5]);
        let b = Tensor::zeros(&[128]);
        assert_eq!(conv2d(&x, &w, &b, 1, 1).unwrap().shape(), &[128, 61, 61]);
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(c, h, o, k, s, d) in &[(1, 5, 1, 3, 1, 1), (3, 9, 4, 3, 2, 1), (2, 11, 3, 2, 1, 3), (4, 12, 5, 4, 3, 2)] {
            let x = random(&[c, h, h], &mut rng);
            let w = random(&[o, c, k, k], &mut rng);
            let b = random(&[o], &mut rng);
            let y = conv2d(&x, &w, &b, s, d).unwrap();
            let r = conv_oracle(&x, &w, &b, s, d);
            assert!(y.max_abs_diff(&r).unwrap() <= 1e-5, "case {c} {h} {o} {k} {s} {d}");
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d(&x, &Tensor::zeros(&[1, 3, 3, 3]), &b, 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 5, 5]), &b, 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 3, 3]), &b, 0, 1).is_err());
    }

    #[test]
    fn conv_reports_non_finite_output() {
        let x = Tensor::full(&[1, 2, 2], f32::MAX);
        let w = Tensor::full(&[1, 1, 2, 2], f32::MAX);
        assert!(matches!(
            conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 1),
            Err(StadError::NonFinite(_))
        ));
    }

    #[test]
    fn maxpool_shapes_and_constants() {
        let x = Tensor::full(&[128, 61, 61], 0.25);
        let y = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), &[128, 30, 30]);
        assert!(y.data().iter().all(|&v| v == 0.25));
        assert!(maxpool2d(&Tensor::zeros(&[1, 1, 1]), 2, 2).is_err());
    }

    #[test]
    fn maxpool_matches_window_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 4, 4], &mut rng);
        let y = maxpool2d(&x, 2, 2).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let mut m = f32::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.at3(0, 2 * oy + dy, 2 * ox + dx));
                    }
                }
                assert_eq!(y.at3(0, oy, ox), m);
            }
        }
    }

    #[test]
    fn leaky_relu_definition() {
        assert_eq!(leaky(0.0, LEAKY_SLOPE), 0.0);
        assert_eq!(leaky(-1.0, LEAKY_SLOPE), -0.005);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[50], &mut rng);
        let y = leaky_relu(&x, LEAKY_SLOPE);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert_eq!(*b, if *a >= 0.0 { *a } else { LEAKY_SLOPE * a });
        }
    }

    #[test]
    fn fully_connected_cases() {
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = fully_connected(&x, &eye, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.data(), x.data());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[128], &mut rng);
        let w = random(&[512, 128], &mut rng);
        let b = random(&[512], &mut rng);
        let y = fully_connected(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[512]);
        for i in 0..512 {
            let mut acc = b.data()[i] as f64;
            for j in 0..128 {
                acc += (w.data()[i * 128 + j] * x.data()[j]) as f64;
            }
            assert!((acc as f32 - y.data()[i]).abs() <= 1e-4);
        }
        assert!(fully_connected(&x, &Tensor::zeros(&[4, 3]), &Tensor::zeros(&[4])).is_err());
    }
}
