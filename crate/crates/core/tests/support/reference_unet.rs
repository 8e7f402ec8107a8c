//! A deliberately naive f64 re-implementation of the U-Net forward pass
//! and loss, used as an oracle for the optimized f32 implementation.

use uplot::unet::{LayerGraph, LayerKind};
use uplot::Tensor;

#[derive(Clone)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    fn zeros(c: usize, h: usize, w: usize) -> Map {
        Map { c, h, w, v: vec![0.0; c * h * w] }
    }
    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }
    fn set(&mut self, c: usize, y: usize, x: usize, val: f64) {
        self.v[(c * self.h + y) * self.w + x] = val;
    }
}

fn conv_same(input: &Map, k: &[f64], b: &[f64], cout: usize, ks: usize, relu: bool) -> Map {
    let pad = (ks / 2) as isize;
    let mut out = Map::zeros(cout, input.h, input.w);
    for o in 0..cout {
        for y in 0..input.h {
            for x in 0..input.w {
                let mut s = b[o];
                for c in 0..input.c {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let iy = y as isize + ky as isize - pad;
                            let ix = x as isize + kx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= input.h as isize || ix >= input.w as isize {
                                continue;
                            }
                            s += input.at(c, iy as usize, ix as usize) * k[((o * input.c + c) * ks + ky) * ks + kx];
                        }
                    }
                }
                out.set(o, y, x, if relu { s.max(0.0) } else { s });
            }
        }
    }
    out
}

fn max_pool(input: &Map) -> Map {
    let mut out = Map::zeros(input.c, input.h / 2, input.w / 2);
    for c in 0..input.c {
        for y in 0..out.h {
            for x in 0..out.w {
                let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(a, b)| input.at(c, 2 * y + a, 2 * x + b))
                    .fold(f64::NEG_INFINITY, f64::max);
                out.set(c, y, x, m);
            }
        }
    }
    out
}

fn up_conv(input: &Map, k: &[f64], b: &[f64], cout: usize) -> Map {
    let mut out = Map::zeros(cout, input.h * 2, input.w * 2);
    for o in 0..cout {
        for y in 0..out.h {
            for x in 0..out.w {
                let (iy, ix, a, bb) = (y / 2, x / 2, y % 2, x % 2);
                let mut s = b[o];
                for c in 0..input.c {
                    s += input.at(c, iy, ix) * k[((o * input.c + c) * 2 + a) * 2 + bb];
                }
                out.set(o, y, x, s);
            }
        }
    }
    out
}

fn concat(a: &Map, b: &Map) -> Map {
    let mut v = a.v.clone();
    v.extend_from_slice(&b.v);
    Map { c: a.c + b.c, h: a.h, w: a.w, v }
}

/// Logits `[S*S]` of one image, reading parameters in the graph's slot order.
pub fn logits(graph: &LayerGraph, params: &[Vec<f64>], image: &Tensor) -> Vec<f64> {
    let s = graph.spec().input_size;
    let mut outs: Vec<Map> = Vec::new();
    let mut slot = 0;
    let mut take = || {
        slot += 1;
        &params[slot - 1]
    };
    let image = Map { c: 1, h: s, w: s, v: image.data().iter().map(|&v| v as f64).collect() };
    for layer in graph.layers() {
        let input = if layer.index == 1 { &image } else { &outs[layer.index - 2] };
        let cout = layer.shape[0];
        let out = match layer.kind {
            LayerKind::ConvBlock => {
                let (k1, b1) = (take(), take());
                let h1 = conv_same(input, k1, b1, cout, 3, true);
                let (k2, b2) = (take(), take());
                conv_same(&h1, k2, b2, cout, 3, true)
            }
            LayerKind::Pool => max_pool(input),
            LayerKind::UpConv => {
                let (k, b) = (take(), take());
                up_conv(input, k, b, cout)
            }
            LayerKind::Merge => match layer.skip_source() {
                Some(src) => concat(input, &outs[src - 1]),
                None => input.clone(),
            },
            LayerKind::Conv1x1 => {
                let (k, b) = (take(), take());
                conv_same(input, k, b, cout, 1, false)
            }
            LayerKind::Output => input.clone(),
        };
        outs.push(out);
    }
    outs.pop().unwrap().v
}

/// Mean pixelwise binary cross-entropy over the batch.
pub fn loss(graph: &LayerGraph, params: &[Vec<f64>], images: &[&Tensor], masks: &[&Tensor]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (img, mask) in images.iter().zip(masks) {
        for (z, &y) in logits(graph, params, img).into_iter().zip(mask.data()) {
            let y = y as f64;
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            count += 1;
        }
    }
    total / count as f64
}
