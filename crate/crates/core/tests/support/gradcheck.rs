//! Central finite differences against independent f64 re-implementations of
//! every layer primitive and loss head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stad::graph::{ComputeGraph, NodeId, ParamStore};
use stad::student::regression_loss;
use stad::teacher::{compactness_loss, knowledge_loss, metric_loss};
use stad::Tensor;

const INSTANCES: u64 = 20;
const H: f64 = 1e-3;
const TOL: f64 = 1e-3;

fn rng(tag: u64, i: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(tag * 1000 + i)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), v.iter().map(|&x| x as f32).collect()).unwrap()
}

/// Central differences of `f` with respect to every entry of `inputs[which]`.
fn numeric_grad(f: &dyn Fn(&[Vec<f64>]) -> f64, inputs: &[Vec<f64>], which: usize) -> Vec<f64> {
    let mut work = inputs.to_vec();
    (0..inputs[which].len())
        .map(|j| {
            let x0 = work[which][j];
            work[which][j] = x0 + H;
            let up = f(&work);
            work[which][j] = x0 - H;
            let down = f(&work);
            work[which][j] = x0;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic.iter().zip(numeric).map(|(&a, &n)| (a as f64 - n).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

fn assert_close(what: &str, analytic: &[f32], numeric: &[f64]) {
    let e = rel_err(analytic, numeric);
    assert!(e <= TOL, "{what}: relative error {e:e}");
}

/// Builds `op` over tracked inputs, seeds the output with weights `r`, and
/// compares every input gradient with differences of `Σ r·oracle(inputs)`.
fn check_layer(
    what: &str,
    shapes: &[Vec<usize>],
    inputs: &[Vec<f64>],
    r: &[f64],
    op: &dyn Fn(&mut ComputeGraph, &[NodeId]) -> NodeId,
    oracle: &dyn Fn(&[Vec<f64>]) -> Vec<f64>,
) {
    let mut g = ComputeGraph::new();
    let ids: Vec<NodeId> = shapes
        .iter()
        .zip(inputs)
        .map(|(s, v)| g.tracked_input(tensor(s, v)).unwrap())
        .collect();
    let out = op(&mut g, &ids);
    let expected = oracle(inputs);
    let got = g.value(out).unwrap().clone();
    assert_eq!(got.len(), expected.len(), "{what}: output size");
    for (a, b) in got.data().iter().zip(&expected) {
        assert!((*a as f64 - b).abs() <= 1e-4 * (1.0 + b.abs()), "{what}: forward {a} vs {b}");
    }
    let seed = Tensor::new(got.shape().to_vec(), r.iter().map(|&x| x as f32).collect()).unwrap();
    let grads = g.backward_with(vec![(out, seed)], &mut ParamStore::new()).unwrap();
    let f = |xs: &[Vec<f64>]| oracle(xs).iter().zip(r).map(|(o, w)| o * w).sum::<f64>();
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).unwrap();
        assert_close(&format!("{what} input {k}"), analytic.data(), &numeric_grad(&f, inputs, k));
    }
}

fn conv_out(size: usize, k: usize, stride: usize, dil: usize) -> usize {
    (size - dil * (k - 1) - 1) / stride + 1
}

#[allow(clippy::too_many_arguments)]
fn conv_oracle(x: &[f64], w: &[f64], b: &[f64], n: usize, c: usize, h: usize, wd: usize, o: usize, k: usize, s: usize, dl: usize) -> Vec<f64> {
    let (oh, ow) = (conv_out(h, k, s, dl), conv_out(wd, k, s, dl));
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b[oi];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y * s + ky * dl;
                                let ix = xx * s + kx * dl;
                                acc += w[((oi * c + ci) * k + ky) * k + kx] * x[((ni * c + ci) * h + iy) * wd + ix];
                            }
                        }
                    }
                    out[((ni * o + oi) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

pub fn conv2d_gradients() {
    for i in 0..INSTANCES {
        let mut r = rng(1, i);
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
        let k = r.random_range(1..4);
        let (s, dl) = (r.random_range(1..3), r.random_range(1..3));
        let span = dl * (k - 1) + 1;
        let (h, wd) = (span + r.random_range(0..5), span + r.random_range(0..5));
        let shapes = vec![vec![n, c, h, wd], vec![o, c, k, k], vec![o]];
        let inputs: Vec<Vec<f64>> = shapes.iter().map(|sh| rand_vec(&mut r, sh.iter().product())).collect();
        let out_len = n * o * conv_out(h, k, s, dl) * conv_out(wd, k, s, dl);
        let seed = rand_vec(&mut r, out_len);
        check_layer(
            &format!("conv2d #{i}"),
            &shapes,
            &inputs,
            &seed,
            &|g, ids| g.conv2d(ids[0], ids[1], ids[2], s, dl).unwrap(),
            &|xs| conv_oracle(&xs[0], &xs[1], &xs[2], n, c, h, wd, o, k, s, dl),
        );
    }
}

pub fn conv2d_gradients_on_large_planes() {
    // Outputs nearly as large as inputs take the transposed input-gradient path.
    for i in 0..INSTANCES {
        let mut r = rng(11, i);
        let (c, o, k) = (r.random_range(1..3), r.random_range(1..3), 3);
        let (h, wd) = (r.random_range(18..23), r.random_range(18..23));
        let shapes = vec![vec![1, c, h, wd], vec![o, c, k, k], vec![o]];
        let inputs: Vec<Vec<f64>> = shapes.iter().map(|sh| rand_vec(&mut r, sh.iter().product())).collect();
        let seed = rand_vec(&mut r, o * (h - 2) * (wd - 2));
        check_layer(
            &format!("conv2d large #{i}"),
            &shapes,
            &inputs,
            &seed,
            &|g, ids| g.conv2d(ids[0], ids[1], ids[2], 1, 1).unwrap(),
            &|xs| conv_oracle(&xs[0], &xs[1], &xs[2], 1, c, h, wd, o, k, 1, 1),
        );
    }
}

pub fn conv2d_squared_norm_on_3x3() {
    for i in 0..INSTANCES {
        let mut r = rng(2, i);
        let shapes = vec![vec![1, 1, 3, 3], vec![1, 1, 3, 3], vec![1]];
        let inputs: Vec<Vec<f64>> = shapes.iter().map(|sh| rand_vec(&mut r, sh.iter().product())).collect();
        let mut g = ComputeGraph::new();
        let ids: Vec<NodeId> = shapes.iter().zip(&inputs).map(|(s, v)| g.tracked_input(tensor(s, v)).unwrap()).collect();
        let y = g.conv2d(ids[0], ids[1], ids[2], 1, 1).unwrap();
        let loss = g.sum_squares(y).unwrap();
        let grads = g.backward(loss, &mut ParamStore::new()).unwrap();
        let f = |xs: &[Vec<f64>]| conv_oracle(&xs[0], &xs[1], &xs[2], 1, 1, 3, 3, 1, 3, 1, 1)[0].powi(2);
        for (k, id) in ids.iter().enumerate() {
            assert_close("||conv||²", grads.get(*id).unwrap().data(), &numeric_grad(&f, &inputs, k));
        }
    }
}

fn pool_oracle(x: &[f64], nc: usize, h: usize, w: usize, k: usize, s: usize, dl: usize) -> Vec<f64> {
    let (oh, ow) = (conv_out(h, k, s, dl), conv_out(w, k, s, dl));
    let mut out = Vec::with_capacity(nc * oh * ow);
    for p in 0..nc {
        for y in 0..oh {
            for xx in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        m = m.max(x[(p * h + y * s + ky * dl) * w + xx * s + kx * dl]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn maxpool2d_gradients() {
    for i in 0..INSTANCES {
        let mut r = rng(3, i);
        let (n, c) = (r.random_range(1..3), r.random_range(1..3));
        let k = r.random_range(2..4);
        let (s, dl) = (r.random_range(1..3), r.random_range(1..3));
        let span = dl * (k - 1) + 1;
        let (h, w) = (span + r.random_range(0..4), span + r.random_range(0..4));
        // Distinct values 0.05 apart keep every argmax stable under ±H.
        let len = n * c * h * w;
        let mut x: Vec<f64> = (0..len).map(|j| j as f64 * 0.05).collect();
        for j in (1..len).rev() {
            x.swap(j, r.random_range(0..=j));
        }
        let out_len = n * c * conv_out(h, k, s, dl) * conv_out(w, k, s, dl);
        let seed = rand_vec(&mut r, out_len);
        check_layer(
            &format!("maxpool #{i}"),
            &[vec![n, c, h, w]],
            &[x],
            &seed,
            &|g, ids| g.maxpool2d(ids[0], k, s, dl).unwrap(),
            &|xs| pool_oracle(&xs[0], n * c, h, w, k, s, dl),
        );
    }
}

pub fn leaky_relu_gradients() {
    for i in 0..INSTANCES {
        let mut r = rng(4, i);
        let len = r.random_range(1..40);
        // Stay clear of the kink.
        let x: Vec<f64> = rand_vec(&mut r, len).into_iter().map(|v| if v.abs() < 0.01 { v + 0.05 } else { v }).collect();
        let slope = [5e-3, 0.1, 0.3][i as usize % 3];
        let seed = rand_vec(&mut r, len);
        check_layer(
            &format!("leaky_relu #{i}"),
            &[vec![1, 1, 1, len]],
            &[x],
            &seed,
            &|g, ids| g.leaky_relu(ids[0], slope as f32).unwrap(),
            &|xs| xs[0].iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect(),
        );
    }
}

pub fn linear_gradients() {
    for i in 0..INSTANCES {
        let mut r = rng(5, i);
        let (b, n, m) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..6));
        let shapes = vec![vec![b, n, 1, 1], vec![m, n], vec![m]];
        let inputs: Vec<Vec<f64>> = shapes.iter().map(|sh| rand_vec(&mut r, sh.iter().product())).collect();
        let seed = rand_vec(&mut r, b * m);
        check_layer(
            &format!("linear #{i}"),
            &shapes,
            &inputs,
            &seed,
            &|g, ids| g.linear(ids[0], ids[1], ids[2]).unwrap(),
            &|xs| {
                let mut out = Vec::new();
                for bi in 0..b {
                    for mi in 0..m {
                        out.push(xs[2][mi] + (0..n).map(|j| xs[1][mi * n + j] * xs[0][bi * n + j]).sum::<f64>());
                    }
                }
                out
            },
        );
    }
}

pub fn crop_reshape_and_reductions() {
    for i in 0..INSTANCES {
        let mut r = rng(6, i);
        let (n, c, h, w) = (r.random_range(1..3), r.random_range(1..3), r.random_range(1..6), r.random_range(1..6));
        let (ch, cw) = (r.random_range(1..=h), r.random_range(1..=w));
        let x = rand_vec(&mut r, n * c * h * w);
        let seed = rand_vec(&mut r, n * c * ch * cw);
        let crop = |x: &[f64]| {
            let mut out = Vec::new();
            for p in 0..n * c {
                for y in 0..ch {
                    out.extend_from_slice(&x[(p * h + y) * w..(p * h + y) * w + cw]);
                }
            }
            out
        };
        check_layer(
            &format!("crop #{i}"),
            &[vec![n, c, h, w]],
            std::slice::from_ref(&x),
            &seed,
            &|g, ids| g.crop(ids[0], ch, cw).unwrap(),
            &|xs| crop(&xs[0]),
        );
        check_layer(
            &format!("reshape #{i}"),
            &[vec![n, c, h, w]],
            std::slice::from_ref(&x),
            &rand_vec(&mut r, x.len()),
            &|g, ids| g.reshape(ids[0], &[n * c, h * w]).unwrap(),
            &|xs| xs[0].clone(),
        );
        let k = rand_vec(&mut r, 1);
        check_layer(
            &format!("sum #{i}"),
            &[vec![n, c, h, w]],
            std::slice::from_ref(&x),
            &k,
            &|g, ids| g.sum(ids[0]).unwrap(),
            &|xs| vec![xs[0].iter().sum()],
        );
        check_layer(
            &format!("sum_squares #{i}"),
            &[vec![n, c, h, w]],
            &[x],
            &k,
            &|g, ids| g.sum_squares(ids[0]).unwrap(),
            &|xs| vec![xs[0].iter().map(|v| v * v).sum()],
        );
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn metric_loss_gradients() {
    let margin = 1.0;
    let oracle = |xs: &[Vec<f64>], b: usize, d: usize| {
        (0..b)
            .map(|i| {
                let r = i * d..(i + 1) * d;
                let (a, p, n) = (&xs[0][r.clone()], &xs[1][r.clone()], &xs[2][r]);
                (margin + sq(a, p) - sq(a, n).min(sq(p, n))).max(0.0)
            })
            .sum::<f64>()
            / b as f64
    };
    let mut checked = 0;
    let mut swapped = 0;
    let mut seed = 0;
    while checked < INSTANCES {
        let mut r = rng(7, seed);
        seed += 1;
        let (b, d) = (r.random_range(1..5), r.random_range(1..6));
        let xs: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut r, b * d).iter().map(|v| v * 0.8).collect()).collect();
        // Skip instances sitting on a hinge or a swap boundary.
        let near_kink = (0..b).any(|i| {
            let rg = i * d..(i + 1) * d;
            let (a, p, n) = (&xs[0][rg.clone()], &xs[1][rg.clone()], &xs[2][rg]);
            let (an, pn) = (sq(a, n), sq(p, n));
            (margin + sq(a, p) - an.min(pn)).abs() < 0.05 || (an - pn).abs() < 0.05
        });
        if near_kink {
            continue;
        }
        swapped += (0..b)
            .filter(|&i| {
                let rg = i * d..(i + 1) * d;
                sq(&xs[1][rg.clone()], &xs[2][rg.clone()]) < sq(&xs[0][rg.clone()], &xs[2][rg])
            })
            .count();
        let t: Vec<Tensor> = xs.iter().map(|v| tensor(&[b, d], v)).collect();
        let head = metric_loss(&t[0], &t[1], &t[2], margin as f32).unwrap();
        let f = |v: &[Vec<f64>]| oracle(v, b, d);
        assert!((head.value as f64 - f(&xs)).abs() < 1e-5);
        for k in 0..3 {
            assert_close("metric", head.grads[k].data(), &numeric_grad(&f, &xs, k));
        }
        checked += 1;
    }
    assert!(swapped > 0, "no instance exercised the anchor swap");
}

fn correlation_oracle(y: &[f64], b: usize, d: usize) -> f64 {
    let col = |k: usize| (0..b).map(move |i| y[i * d + k]);
    let mean: Vec<f64> = (0..d).map(|k| col(k).sum::<f64>() / b as f64).collect();
    let mut total = 0.0;
    for k in 0..d {
        for l in 0..d {
            if k == l {
                continue;
            }
            let cov: f64 = (0..b).map(|i| (y[i * d + k] - mean[k]) * (y[i * d + l] - mean[l])).sum();
            let vk: f64 = col(k).map(|v| (v - mean[k]).powi(2)).sum();
            let vl: f64 = col(l).map(|v| (v - mean[l]).powi(2)).sum();
            total += cov / (vk * vl).sqrt();
        }
    }
    total
}

pub fn compactness_loss_gradients() {
    for i in 0..INSTANCES {
        let mut r = rng(8, i);
        let (b, d) = (r.random_range(3..8), r.random_range(2..6));
        let y = rand_vec(&mut r, b * d);
        let head = compactness_loss(&tensor(&[b, d], &y)).unwrap();
        let f = |v: &[Vec<f64>]| correlation_oracle(&v[0], b, d);
        let ys = [y];
        assert!((head.value as f64 - f(&ys)).abs() < 1e-4, "value {} vs {}", head.value, f(&ys));
        assert_close("compactness", head.grads[0].data(), &numeric_grad(&f, &ys, 0));
    }
}

pub fn knowledge_loss_gradients() {
    for i in 0..INSTANCES {
        let mut r = rng(9, i);
        let (b, n) = (r.random_range(1..5), r.random_range(1..8));
        let xs = vec![rand_vec(&mut r, b * n), rand_vec(&mut r, b * n)];
        let head = knowledge_loss(&tensor(&[b, n], &xs[0]), &tensor(&[b, n], &xs[1])).unwrap();
        let f = |v: &[Vec<f64>]| sq(&v[0], &v[1]) / b as f64;
        assert!((head.value as f64 - f(&xs)).abs() < 1e-5);
        assert_close("knowledge", head.grads[0].data(), &numeric_grad(&f, &xs, 0));
    }
}

pub fn regression_loss_gradients() {
    for i in 0..INSTANCES {
        let mut r = rng(10, i);
        let (d, h, w) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
        let xs = vec![rand_vec(&mut r, d * h * w), rand_vec(&mut r, d * h * w)];
        let (value, grad) = regression_loss(&tensor(&[d, h, w], &xs[0]), &tensor(&[d, h, w], &xs[1])).unwrap();
        let f = |v: &[Vec<f64>]| sq(&v[0], &v[1]) / (h * w) as f64;
        assert!((value as f64 - f(&xs)).abs() < 1e-5);
        assert_close("regression", grad.data(), &numeric_grad(&f, &xs, 0));
    }
}

/// Every check above.
#[allow(dead_code)]
pub fn all() {
    conv2d_gradients();
    conv2d_gradients_on_large_planes();
    conv2d_squared_norm_on_3x3();
    maxpool2d_gradients();
    leaky_relu_gradients();
    linear_gradients();
    crop_reshape_and_reductions();
    metric_loss_gradients();
    compactness_loss_gradients();
    knowledge_loss_gradients();
    regression_loss_gradients();
}
