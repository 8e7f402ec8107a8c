use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    // Evaluated in f64 so sigmoid(x) + sigmoid(-x) stays at 1 to f32 precision.
    let x = x as f64;
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s as f32
}

pub fn activate(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => input.map(|v| v.max(0.0)),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

/// Gradient through an activation, expressed in terms of its *output*.
pub fn activate_backward(output: &Tensor, grad_out: &Tensor, kind: Activation) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::invalid(format!(
            "activate backward: grad shape {:?} vs output {:?}",
            grad_out.shape(),
            output.shape()
        )));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| match kind {
            Activation::Relu => {
                if y > 0.0 {
                    g
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => g * y * (1.0 - y),
        })
        .collect();
    Tensor::new(output.shape().to_vec(), data)
}

/// Stacks `a`'s channels, then `b`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (c1, h, w) = a.dims3("concat_channels")?;
    let (c2, h2, w2) = b.dims3("concat_channels")?;
    if h2 != h {
        return Err(Error::Shape {
            op: "concat_channels",
            dim: "height",
            expected: h,
            got: h2,
        });
    }
    if w2 != w {
        return Err(Error::Shape {
            op: "concat_channels",
            dim: "width",
            expected: w,
            got: w2,
        });
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![c1 + c2, h, w], data)
}

/// Inverse of [`concat_channels`]: splits off the first `c1` channels.
pub fn split_channels(t: &Tensor, c1: usize) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = t.dims3("split_channels")?;
    if c1 > c {
        return Err(Error::Shape {
            op: "split_channels",
            dim: "channels",
            expected: c,
            got: c1,
        });
    }
    let cut = c1 * h * w;
    Ok((
        Tensor::new(vec![c1, h, w], t.data()[..cut].to_vec())?,
        Tensor::new(vec![c - c1, h, w], t.data()[cut..].to_vec())?,
    ))
}
