use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Mat};
use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero-fill so the output keeps the input's spatial size.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

/// Gradients of a convolution with respect to its input, kernels and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Vec<f32>,
}

struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn new(input: &Tensor, kernels: &Tensor, padding: Padding) -> Result<Self> {
        let (c_in, h, w) = input.dims3("conv2d input")?;
        let (c_out, kc, kh, kw) = kernels.dims4("conv2d kernels")?;
        if kc != c_in {
            return Err(Error::Shape {
                op: "conv2d",
                dim: "kernel input channels",
                expected: c_in,
                got: kc,
            });
        }
        if kh != kw {
            return Err(Error::Shape {
                op: "conv2d",
                dim: "kernel width",
                expected: kh,
                got: kw,
            });
        }
        let k = kh;
        if k % 2 == 0 {
            return Err(Error::invalid(format!("conv2d: kernel size {k} must be odd")));
        }
        let (pad, oh, ow) = match padding {
            Padding::Same => (k / 2, h, w),
            Padding::Valid => {
                if h < k || w < k {
                    return Err(Error::Shape {
                        op: "conv2d valid",
                        dim: "input height/width",
                        expected: k,
                        got: h.min(w),
                    });
                }
                (0, h - k + 1, w - k + 1)
            }
        };
        Ok(ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            k,
            pad,
            oh,
            ow,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    /// `true` when the column matrix is the input itself (1x1, no padding).
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    fn im2col(&self, input: &[f32]) -> Vec<f32> {
        let (k, pad, oh, ow) = (self.k, self.pad, self.oh, self.ow);
        let mut cols = vec![0.0f32; self.patch_len() * self.out_len()];
        for ci in 0..self.c_in {
            let plane = &input[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= self.h {
                            continue;
                        }
                        let src = &plane[(iy - pad) * self.w..(iy - pad + 1) * self.w];
                        let (lo, hi) = self.valid_x_range(kx);
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        for ox in lo..hi {
                            drow[ox] = src[ox + kx - pad];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32]) -> Vec<f32> {
        let (k, pad, oh, ow) = (self.k, self.pad, self.oh, self.ow);
        let mut out = vec![0.0f32; self.c_in * self.h * self.w];
        for ci in 0..self.c_in {
            let plane = &mut out[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= self.h {
                            continue;
                        }
                        let (lo, hi) = self.valid_x_range(kx);
                        let dst = &mut plane[(iy - pad) * self.w..(iy - pad + 1) * self.w];
                        let srow = &src[oy * ow..(oy + 1) * ow];
                        for ox in lo..hi {
                            dst[ox + kx - pad] += srow[ox];
                        }
                    }
                }
            }
        }
        out
    }

    /// Output columns `ox` for which `ox + kx - pad` is inside the input row.
    fn valid_x_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.ow);
        (lo, hi.max(lo))
    }
}

/// 2-D cross-correlation of a `[C_in, H, W]` input with `[C_out, C_in, k, k]` kernels.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &[f32], padding: Padding) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernels, padding)?;
    if bias.len() != g.c_out {
        return Err(Error::Shape {
            op: "conv2d",
            dim: "bias length",
            expected: g.c_out,
            got: bias.len(),
        });
    }
    let p = g.out_len();
    let mut out = vec![0.0f32; g.c_out * p];
    let owned;
    let cols: &[f32] = if g.is_pointwise() {
        input.data()
    } else {
        owned = g.im2col(input.data());
        &owned
    };
    gemm(
        Mat::new(kernels.data(), g.c_out, g.patch_len()),
        Mat::new(cols, g.patch_len(), p),
        0.0,
        &mut out,
    );
    for (o, row) in out.chunks_exact_mut(p.max(1)).enumerate().take(g.c_out) {
        let b = bias[o];
        row.iter_mut().for_each(|v| *v += b);
    }
    Tensor::new(vec![g.c_out, g.oh, g.ow], out)
}

/// Backward pass of [`conv2d`] given the upstream gradient `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    padding: Padding,
) -> Result<ConvGrads> {
    let mut dk = vec![0.0f32; kernels.len()];
    let mut db = vec![0.0f32; kernels.shape()[0]];
    let dx = conv2d_backward_accumulate(input, kernels, grad_out, padding, &mut dk, &mut db, true)?;
    Ok(ConvGrads {
        input: dx.expect("input gradient requested"),
        kernels: Tensor::new(kernels.shape().to_vec(), dk)?,
        bias: db,
    })
}

/// Adds kernel and bias gradients into `dk` / `db` and optionally returns the
/// input gradient.
pub(crate) fn conv2d_backward_accumulate(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    padding: Padding,
    dk: &mut [f32],
    db: &mut [f32],
    want_input: bool,
) -> Result<Option<Tensor>> {
    let g = ConvGeometry::new(input, kernels, padding)?;
    let expected = [g.c_out, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::invalid(format!(
            "conv2d backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            expected
        )));
    }
    let p = g.out_len();
    let owned;
    let cols: &[f32] = if g.is_pointwise() {
        input.data()
    } else {
        owned = g.im2col(input.data());
        &owned
    };
    gemm(
        Mat::new(grad_out.data(), g.c_out, p),
        Mat::transposed(cols, p, g.patch_len()),
        1.0,
        dk,
    );
    for (o, row) in grad_out.data().chunks_exact(p.max(1)).enumerate().take(g.c_out) {
        let s: f64 = row.iter().map(|&v| v as f64).sum();
        db[o] = (db[o] as f64 + s) as f32;
    }
    if !want_input {
        return Ok(None);
    }
    let mut dcols = vec![0.0f32; g.patch_len() * p];
    gemm(
        Mat::transposed(kernels.data(), g.patch_len(), g.c_out),
        Mat::new(grad_out.data(), g.c_out, p),
        0.0,
        &mut dcols,
    );
    let dx = if g.is_pointwise() { dcols } else { g.col2im(&dcols) };
    Ok(Some(Tensor::new(vec![g.c_in, g.h, g.w], dx)?))
}

fn upsample_dims(input: &Tensor, kernels: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (c, h, w) = input.dims3("upsample2 input")?;
    let (c_out, kc, kh, kw) = kernels.dims4("upsample2 kernels")?;
    if kc != c {
        return Err(Error::Shape {
            op: "upsample2",
            dim: "kernel input channels",
            expected: c,
            got: kc,
        });
    }
    if kh != 2 || kw != 2 {
        return Err(Error::Shape {
            op: "upsample2",
            dim: "kernel size",
            expected: 2,
            got: if kh != 2 { kh } else { kw },
        });
    }
    Ok((c, h, w, c_out))
}

/// Rows `(tap, o)` for tap = 2a + b, columns `c`.
fn pack_taps(kernels: &[f32], c: usize, c_out: usize) -> Vec<f32> {
    let mut packed = vec![0.0f32; 4 * c_out * c];
    for o in 0..c_out {
        for ci in 0..c {
            for tap in 0..4 {
                packed[(tap * c_out + o) * c + ci] = kernels[(o * c + ci) * 4 + tap];
            }
        }
    }
    packed
}

/// 2x2 transposed convolution with stride 2: `[C, H, W] -> [C_out, 2H, 2W]`.
pub fn upsample2(input: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let (c, h, w, c_out) = upsample_dims(input, kernels)?;
    let p = h * w;
    let packed = pack_taps(kernels.data(), c, c_out);
    let mut taps = vec![0.0f32; 4 * c_out * p];
    gemm(
        Mat::new(&packed, 4 * c_out, c),
        Mat::new(input.data(), c, p),
        0.0,
        &mut taps,
    );
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; c_out * oh * ow];
    for tap in 0..4 {
        let (a, b) = (tap / 2, tap % 2);
        for o in 0..c_out {
            let src = &taps[(tap * c_out + o) * p..(tap * c_out + o + 1) * p];
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            for i in 0..h {
                for j in 0..w {
                    plane[(2 * i + a) * ow + 2 * j + b] = src[i * w + j];
                }
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out)
}

/// Backward pass of [`upsample2`]: returns `(input gradient, kernel gradient)`.
pub fn upsample2_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let mut dk = vec![0.0f32; kernels.len()];
    let dx = upsample2_backward_accumulate(input, kernels, grad_out, &mut dk)?;
    Ok((dx, Tensor::new(kernels.shape().to_vec(), dk)?))
}

pub(crate) fn upsample2_backward_accumulate(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    dk: &mut [f32],
) -> Result<Tensor> {
    let (c, h, w, c_out) = upsample_dims(input, kernels)?;
    let (oh, ow) = (2 * h, 2 * w);
    if grad_out.shape() != [c_out, oh, ow] {
        return Err(Error::invalid(format!(
            "upsample2 backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [c_out, oh, ow]
        )));
    }
    let p = h * w;
    let mut gathered = vec![0.0f32; 4 * c_out * p];
    let g = grad_out.data();
    for tap in 0..4 {
        let (a, b) = (tap / 2, tap % 2);
        for o in 0..c_out {
            let dst = &mut gathered[(tap * c_out + o) * p..(tap * c_out + o + 1) * p];
            let plane = &g[o * oh * ow..(o + 1) * oh * ow];
            for i in 0..h {
                for j in 0..w {
                    dst[i * w + j] = plane[(2 * i + a) * ow + 2 * j + b];
                }
            }
        }
    }
    let packed = pack_taps(kernels.data(), c, c_out);
    let mut dx = vec![0.0f32; c * p];
    gemm(
        Mat::transposed(&packed, c, 4 * c_out),
        Mat::new(&gathered, 4 * c_out, p),
        0.0,
        &mut dx,
    );
    let mut dpacked = vec![0.0f32; 4 * c_out * c];
    gemm(
        Mat::new(&gathered, 4 * c_out, p),
        Mat::transposed(input.data(), p, c),
        0.0,
        &mut dpacked,
    );
    for o in 0..c_out {
        for ci in 0..c {
            for tap in 0..4 {
                dk[(o * c + ci) * 4 + tap] += dpacked[(tap * c_out + o) * c + ci];
            }
        }
    }
    Tensor::new(vec![c, h, w], dx)
}
