use super::Tensor;
use crate::{Error, Result};

/// Winner of every 2x2 pooling window, stored as the in-window offset
/// `2 * dy + dx`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    channels: usize,
    out_h: usize,
    out_w: usize,
    offsets: Vec<u8>,
}

impl PoolIndices {
    /// Input-space `(row, col)` of the winner for output cell `(c, i, j)`.
    pub fn position(&self, c: usize, i: usize, j: usize) -> (usize, usize) {
        let off = self.offsets[(c * self.out_h + i) * self.out_w + j] as usize;
        (2 * i + off / 2, 2 * j + off % 2)
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.channels, self.out_h, self.out_w]
    }
}

/// 2x2 max pooling with stride 2. Ties go to the first element in row-major
/// window order.
pub fn max_pool2(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let (c, h, w) = input.dims3("max_pool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "max_pool2: spatial size {h}x{w} must be even"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = vec![0.0f32; c * oh * ow];
    let mut offsets = vec![0u8; c * oh * ow];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let mut best = plane[2 * i * w + 2 * j];
                let mut arg = 0u8;
                for off in 1..4u8 {
                    let v = plane[(2 * i + off as usize / 2) * w + 2 * j + off as usize % 2];
                    if v > best {
                        best = v;
                        arg = off;
                    }
                }
                let o = (ch * oh + i) * ow + j;
                out[o] = best;
                offsets[o] = arg;
            }
        }
    }
    Ok((
        Tensor::new(vec![c, oh, ow], out)?,
        PoolIndices {
            channels: c,
            out_h: oh,
            out_w: ow,
            offsets,
        },
    ))
}

/// Routes each output gradient to its window's winner.
pub fn max_pool2_backward(grad_out: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    if grad_out.shape() != indices.output_shape() {
        return Err(Error::invalid(format!(
            "max_pool2 backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            indices.output_shape()
        )));
    }
    let [c, oh, ow] = indices.output_shape();
    let (h, w) = (2 * oh, 2 * ow);
    let mut dx = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let (y, x) = indices.position(ch, i, j);
                dx[(ch * h + y) * w + x] = grad_out.data()[(ch * oh + i) * ow + j];
            }
        }
    }
    Tensor::new(vec![c, h, w], dx)
}

/// Nearest-neighbour 2x upsampling (each value copied into a 2x2 block).
pub fn nearest_upsample2(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3("nearest_upsample2")?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                out[(ch * oh + y) * ow + x] = input.data()[(ch * h + y / 2) * w + x / 2];
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_halves_resolution() {
        let x = Tensor::full(&[2, 4, 6], 1.5);
        let (y, _) = max_pool2(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn two_by_two_picks_bottom_right() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.position(0, 0, 0), (1, 1));
    }

    #[test]
    fn ties_resolve_to_first_in_row_major_order() {
        // Enumerate every placement of a tied maximum pair within the window.
        for first in 0..4 {
            for second in first + 1..4 {
                let mut data = vec![0.0f32; 4];
                data[first] = 1.0;
                data[second] = 1.0;
                let x = Tensor::new(vec![1, 2, 2], data).unwrap();
                let (_, idx) = max_pool2(&x).unwrap();
                assert_eq!(idx.position(0, 0, 0), (first / 2, first % 2));
            }
        }
        let (_, idx) = max_pool2(&Tensor::full(&[1, 2, 2], 3.0)).unwrap();
        assert_eq!(idx.position(0, 0, 0), (0, 0));
    }

    #[test]
    fn odd_sizes_rejected() {
        assert!(max_pool2(&Tensor::zeros(&[1, 3, 4])).is_err());
        assert!(max_pool2(&Tensor::zeros(&[1, 4, 5])).is_err());
    }

    #[test]
    fn backward_routes_to_winner() {
        let x = Tensor::new(vec![1, 2, 4], vec![1.0, 5.0, 0.0, 0.0, 2.0, 3.0, 0.0, 9.0]).unwrap();
        let (_, idx) = max_pool2(&x).unwrap();
        let g = Tensor::new(vec![1, 1, 2], vec![10.0, 20.0]).unwrap();
        let dx = max_pool2_backward(&g, &idx).unwrap();
        assert_eq!(dx.data(), &[0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 20.0]);
    }

    #[test]
    fn pool_after_nearest_upsample_is_identity_on_constants() {
        let x = Tensor::full(&[3, 4, 4], -0.75);
        let (y, _) = max_pool2(&nearest_upsample2(&x).unwrap()).unwrap();
        assert_eq!(y, x);
    }
}
