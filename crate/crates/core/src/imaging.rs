//! Image resampling and colour helpers on `3×H×W` tensors in `[0, 1]`.

use crate::error::{Result, StadError};
use crate::metrics::BinaryMask;
use crate::tensor::Tensor;

/// Source coordinate and blend weight for bilinear sampling with
/// half-pixel centres.
#[inline]
fn bilinear_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f32) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

/// Bilinear resize of the virtual `height×width` zoom of `img`, evaluated
/// only on the window `[y0, y0+out_h) × [x0, x0+out_w)`.
pub fn resize_window(
    img: &Tensor,
    (height, width): (usize, usize),
    (y0, x0): (usize, usize),
    (out_h, out_w): (usize, usize),
) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if height == 0 || width == 0 || h == 0 || w == 0 {
        return Err(StadError::invalid("resize to or from an empty image"));
    }
    if y0 + out_h > height || x0 + out_w > width {
        return Err(StadError::shape(format!(
            "window {out_h}×{out_w} at ({y0},{x0}) exceeds {height}×{width}"
        )));
    }
    let ys: Vec<_> = (y0..y0 + out_h).map(|y| bilinear_coord(y, h, height)).collect();
    let xs: Vec<_> = (x0..x0 + out_w).map(|x| bilinear_coord(x, w, width)).collect();
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(ya, yb, fy) in &ys {
            for &(xa, xb, fx) in &xs {
                let top = plane[ya * w + xa] * (1.0 - fx) + plane[ya * w + xb] * fx;
                let bottom = plane[yb * w + xa] * (1.0 - fx) + plane[yb * w + xb] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Bilinear resize to `side×side`.
pub fn resize_image(img: &Tensor, side: usize) -> Result<Tensor> {
    resize_window(img, (side, side), (0, 0), (side, side))
}

/// Nearest-neighbour resize for masks.
pub fn resize_mask(mask: &BinaryMask, side: usize) -> Result<BinaryMask> {
    if side == 0 || mask.height == 0 || mask.width == 0 {
        return Err(StadError::invalid("resize to or from an empty mask"));
    }
    let near = |dst: usize, src_len: usize| -> usize {
        let s = ((dst as f64 + 0.5) * src_len as f64 / side as f64).floor() as usize;
        s.min(src_len - 1)
    };
    let mut pixels = Vec::with_capacity(side * side);
    for y in 0..side {
        let sy = near(y, mask.height);
        for x in 0..side {
            pixels.push(mask.pixels[sy * mask.width + near(x, mask.width)]);
        }
    }
    BinaryMask::new(side, side, pixels)
}

/// Replaces every channel by the Rec. 601 luma.
pub fn to_grayscale(img: &Tensor) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Ok(img.clone());
    }
    let plane = h * w;
    let d = img.data();
    let luma: Vec<f32> = (0..plane)
        .map(|i| 0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i])
        .collect();
    let mut out = Vec::with_capacity(3 * plane);
    for _ in 0..3 {
        out.extend_from_slice(&luma);
    }
    Tensor::new(vec![3, h, w], out)
}

/// Broadcasts a single-channel image to three channels.
pub fn to_rgb(img: &Tensor) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    match c {
        3 => Ok(img.clone()),
        1 => {
            let mut data = Vec::with_capacity(3 * h * w);
            for _ in 0..3 {
                data.extend_from_slice(img.data());
            }
            Tensor::new(vec![3, h, w], data)
        }
        _ => Err(StadError::shape(format!("cannot convert {c} channels to RGB"))),
    }
}
