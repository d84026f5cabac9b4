//! Layer primitives: forward passes and their backward rules.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Below this `|x - x_ref|` the rescale multiplier falls back to the
/// ordinary ReLU derivative.
pub const RESCALE_EPSILON: f64 = 1e-9;

/// Rule used when propagating gradients through a ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReluBackwardMode {
    Standard,
    /// Only positive upstream signal passes, and only through active units.
    Guided,
    /// DeepLIFT rescale multiplier against a reference activation.
    DeepLiftRescale,
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(format!("{what} must be rank 3 [C,H,W], got {s:?}"))),
    }
}

fn conv_out_dims(
    input: (usize, usize, usize),
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize)> {
    let (cin, h, w) = input;
    let [cout, kcin, kh, kw] = *kernel.shape() else {
        return Err(Error::shape(format!(
            "kernel must be rank 4 [Cout,Cin,kH,kW], got {:?}",
            kernel.shape()
        )));
    };
    if kcin != cin {
        return Err(Error::shape(format!(
            "kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(format!(
            "bias shape {:?} does not match {cout} output channels",
            bias.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(Error::shape(format!(
            "kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    Ok((
        cout,
        (h + 2 * padding - kh) / stride + 1,
        (w + 2 * padding - kw) / stride + 1,
    ))
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (cin, h, w) = dims3(input, "conv2d input")?;
    let (cout, oh, ow) = conv_out_dims((cin, h, w), kernel, bias, stride, padding)?;
    let (kh, kw) = (kernel.shape()[2], kernel.shape()[3]);
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        let b = bias.data()[co];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += x[(ci * h + iy as usize) * w + ix as usize]
                                * k[((co * cin + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc + b;
            }
        }
    }
    Ok(Tensor::from_parts(vec![cout, oh, ow], out))
}

/// Gradients of a conv layer: (input, kernel, bias).
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    upstream: &Tensor,
    stride: usize,
    padding: usize,
    want_params: bool,
) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
    let (cin, h, w) = dims3(input, "conv2d input")?;
    let [cout, _, kh, kw] = *kernel.shape() else {
        return Err(Error::shape("kernel must be rank 4"));
    };
    let (uc, oh, ow) = dims3(upstream, "conv2d upstream")?;
    if uc != cout {
        return Err(Error::shape("upstream channels do not match kernel"));
    }
    let x = input.data();
    let k = kernel.data();
    let g = upstream.data();
    let mut gx = vec![0.0; cin * h * w];
    let mut gk = if want_params { vec![0.0; k.len()] } else { Vec::new() };
    let mut gb = if want_params { vec![0.0; cout] } else { Vec::new() };
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let up = g[(co * oh + oy) * ow + ox];
                if want_params {
                    gb[co] += up;
                }
                if up == 0.0 {
                    continue;
                }
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = (ci * h + iy as usize) * w + ix as usize;
                            let ki = ((co * cin + ci) * kh + ky) * kw + kx;
                            gx[xi] += up * k[ki];
                            if want_params {
                                gk[ki] += up * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    let params = want_params.then(|| {
        (
            Tensor::from_parts(kernel.shape().to_vec(), gk),
            Tensor::from_parts(vec![cout], gb),
        )
    });
    Ok((Tensor::from_parts(vec![cin, h, w], gx), params))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(
    upstream: &Tensor,
    forward_input: &Tensor,
    mode: ReluBackwardMode,
    reference_input: Option<&Tensor>,
) -> Result<Tensor> {
    upstream.check_same_shape(forward_input)?;
    match mode {
        ReluBackwardMode::Standard => upstream.zip_map(forward_input, standard_relu_grad),
        ReluBackwardMode::Guided => {
            upstream.zip_map(forward_input, |g, x| if x > 0.0 { g.max(0.0) } else { 0.0 })
        }
        ReluBackwardMode::DeepLiftRescale => {
            let reference = reference_input.ok_or_else(|| {
                Error::invalid("DeepLiftRescale backward requires a reference input")
            })?;
            forward_input.check_same_shape(reference)?;
            let data = upstream
                .data()
                .iter()
                .zip(forward_input.data())
                .zip(reference.data())
                .map(|((&g, &x), &r)| {
                    let delta = x - r;
                    if delta.abs() < RESCALE_EPSILON {
                        standard_relu_grad(g, x)
                    } else {
                        g * ((x.max(0.0) - r.max(0.0)) / delta)
                    }
                })
                .collect();
            Ok(Tensor::from_parts(upstream.shape().to_vec(), data))
        }
    }
}

fn standard_relu_grad(g: f64, x: f64) -> f64 {
    if x > 0.0 {
        g
    } else {
        0.0
    }
}

fn pool_dims(input: &Tensor, window: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, w) = dims3(input, "max_pool2d input")?;
    if window == 0 || stride == 0 {
        return Err(Error::invalid("pool window and stride must be positive"));
    }
    if window > h || window > w {
        return Err(Error::shape(format!("pool window {window} exceeds input {h}x{w}")));
    }
    Ok((c, h, w, (h - window) / stride + 1, (w - window) / stride + 1))
}

/// Flat input index of each window's maximum; ties go to the lowest index.
fn pool_argmax(input: &Tensor, window: usize, stride: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let (c, h, w, oh, ow) = pool_dims(input, window, stride)?;
    let x = input.data();
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (ch * h + oy * stride) * w + ox * stride;
                for wy in 0..window {
                    for wx in 0..window {
                        let i = (ch * h + oy * stride + wy) * w + ox * stride + wx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    Ok((idx, vec![c, oh, ow]))
}

pub fn max_pool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (idx, shape) = pool_argmax(input, window, stride)?;
    let x = input.data();
    Ok(Tensor::from_parts(shape, idx.iter().map(|&i| x[i]).collect()))
}

pub fn max_pool2d_backward(
    upstream: &Tensor,
    forward_input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<Tensor> {
    let (idx, shape) = pool_argmax(forward_input, window, stride)?;
    if upstream.shape() != shape.as_slice() {
        return Err(Error::shape(format!(
            "pool upstream {:?} does not match output {:?}",
            upstream.shape(),
            shape
        )));
    }
    let mut g = vec![0.0; forward_input.len()];
    for (&i, &u) in idx.iter().zip(upstream.data()) {
        g[i] += u;
    }
    Ok(Tensor::from_parts(forward_input.shape().to_vec(), g))
}

pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [m, n] = *weight.shape() else {
        return Err(Error::shape(format!("weight must be rank 2, got {:?}", weight.shape())));
    };
    if input.len() != n || input.shape().len() != 1 {
        return Err(Error::shape(format!(
            "dense input {:?} does not match weight columns {n}",
            input.shape()
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::shape(format!("bias {:?} does not match {m} rows", bias.shape())));
    }
    let x = input.data();
    let out = weight
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
        .collect();
    Ok(Tensor::from_parts(vec![m], out))
}

/// Gradients of a dense layer: (input, weight, bias).
pub fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    upstream: &Tensor,
    want_params: bool,
) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
    let [m, n] = *weight.shape() else {
        return Err(Error::shape("weight must be rank 2"));
    };
    if upstream.len() != m || input.len() != n {
        return Err(Error::shape("dense backward dimension mismatch"));
    }
    let w = weight.data();
    let g = upstream.data();
    let mut gx = vec![0.0; n];
    for (row, &gi) in w.chunks_exact(n).zip(g) {
        for (acc, wv) in gx.iter_mut().zip(row) {
            *acc += gi * wv;
        }
    }
    let params = want_params.then(|| {
        let x = input.data();
        let gw = g.iter().flat_map(|&gi| x.iter().map(move |&xv| gi * xv)).collect();
        (
            Tensor::from_parts(vec![m, n], gw),
            Tensor::from_parts(vec![m], g.to_vec()),
        )
    });
    Ok((Tensor::from_parts(input.shape().to_vec(), gx), params))
}

/// Bilinear resize of a single-channel `[H,W]` map, half-pixel centers
/// (corner alignment off), source coordinates clamped at the border.
pub fn bilinear_upsample(map: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [h, w] = *map.shape() else {
        return Err(Error::shape(format!("upsample expects [H,W], got {:?}", map.shape())));
    };
    let src = map.data();
    let coord = |dst: usize, in_len: usize, out_len: usize| -> (usize, usize, f64) {
        let scale = in_len as f64 / out_len as f64;
        let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(in_len - 1);
        let i1 = (i0 + 1).min(in_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, ly) = coord(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, lx) = coord(ox, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
            let bottom = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
            out.push(top * (1.0 - ly) + bottom * ly);
        }
    }
    Ok(Tensor::from_parts(vec![out_h, out_w], out))
}
