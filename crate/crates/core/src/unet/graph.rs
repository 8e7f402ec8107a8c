use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spec::{LayerLayout, NetworkSpec};
use crate::tensorcore::conv::{conv2d_backward_accumulate, upsample2_backward_accumulate};
use crate::tensorcore::elementwise::sigmoid;
use crate::tensorcore::{
    activate_backward, concat_channels, conv2d, max_pool2, max_pool2_backward, split_channels,
    upsample2, Activation, Padding, PoolIndices, Tensor,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    ConvBlock,
    Pool,
    UpConv,
    Merge,
    Conv1x1,
    Output,
}

/// Kernels and bias of one convolution (3x3, 1x1 or 2x2 transposed).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub kernels: Tensor,
    pub bias: Vec<f32>,
}

impl Conv {
    fn init(shape: [usize; 4], fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> Conv {
        let std = (gain / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng) as f32).collect();
        Conv {
            kernels: Tensor::new(shape.to_vec(), data).expect("shape matches"),
            bias: vec![0.0; shape[0]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    /// Two 3x3 same-padded convolutions, each followed by ReLU.
    ConvBlock([Conv; 2]),
    Pool,
    /// 2x2 stride-2 transposed convolution, linear.
    UpConv(Conv),
    /// Concatenates `[upsampled, skip]` channels, or passes the upsampled
    /// stream through when the skip is removed.
    Merge { source: Option<usize> },
    /// Linear 1x1 convolution producing the logits.
    Conv1x1(Conv),
    Output,
}

impl Op {
    fn convs(&self) -> Vec<&Conv> {
        match self {
            Op::ConvBlock([a, b]) => vec![a, b],
            Op::UpConv(c) | Op::Conv1x1(c) => vec![c],
            _ => Vec::new(),
        }
    }

    fn convs_mut(&mut self) -> Vec<&mut Conv> {
        match self {
            Op::ConvBlock([a, b]) => vec![a, b],
            Op::UpConv(c) | Op::Conv1x1(c) => vec![c],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub index: usize,
    pub kind: LayerKind,
    /// Per-sample output shape `[C, H, W]`.
    pub shape: [usize; 3],
    op: Op,
    /// Index of this layer's first parameter slot.
    first_slot: usize,
}

impl Layer {
    /// For merges, the skip source feeding this layer (if enabled).
    pub fn skip_source(&self) -> Option<usize> {
        match self.op {
            Op::Merge { source } => source,
            _ => None,
        }
    }
}

/// A compiled network: indexed layers, skip edges and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

/// Per-parameter-tensor gradient buffers, in [`LayerGraph::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Vec<f32>>);

/// Result of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[B, 1, S, S]` foreground probabilities.
    pub probabilities: Tensor,
    /// Requested layers' outputs stacked over the batch: `[B, C, H, W]`.
    pub captures: BTreeMap<usize, Tensor>,
}

/// Everything the backward pass needs from one sample's forward pass.
struct Tape {
    outputs: Vec<Tensor>,
    inner: Vec<Option<Tensor>>,
    pools: Vec<Option<PoolIndices>>,
}

pub fn build(spec: &NetworkSpec) -> Result<LayerGraph> {
    spec.validate()?;
    let layout = spec.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = spec.base_channels;
    let channels = |level: usize| base << level;
    let mut layers = Vec::with_capacity(layout.layer_count());
    let mut slot = 0;
    let mut push = |layers: &mut Vec<Layer>, kind, shape, op: Op| {
        let n = op.convs().len() * 2;
        layers.push(Layer {
            index: layers.len() + 1,
            kind,
            shape,
            op,
            first_slot: slot,
        });
        slot += n;
    };
    let block = |c_in: usize, c_out: usize, rng: &mut ChaCha8Rng| {
        Op::ConvBlock([
            Conv::init([c_out, c_in, 3, 3], c_in * 9, 2.0, rng),
            Conv::init([c_out, c_out, 3, 3], c_out * 9, 2.0, rng),
        ])
    };

    let mut size = spec.input_size;
    let mut c_prev = 1;
    for level in 0..spec.levels {
        let c = channels(level);
        push(&mut layers, LayerKind::ConvBlock, [c, size, size], block(c_prev, c, &mut rng));
        size /= 2;
        push(&mut layers, LayerKind::Pool, [c, size, size], Op::Pool);
        c_prev = c;
    }
    let c_bottom = channels(spec.levels);
    push(
        &mut layers,
        LayerKind::ConvBlock,
        [c_bottom, size, size],
        block(c_prev, c_bottom, &mut rng),
    );
    c_prev = c_bottom;
    for stage in 0..spec.levels {
        let level = spec.levels - 1 - stage;
        let c = channels(level);
        size *= 2;
        let up = Conv::init([c, c_prev, 2, 2], c_prev, 1.0, &mut rng);
        push(&mut layers, LayerKind::UpConv, [c, size, size], Op::UpConv(up));
        let source = spec
            .skips_enabled
            .iter()
            .find(|s| s.level() == level)
            .map(|&s| layout.skip_source(s));
        let merged = if source.is_some() { 2 * c } else { c };
        push(&mut layers, LayerKind::Merge, [merged, size, size], Op::Merge { source });
        push(&mut layers, LayerKind::ConvBlock, [c, size, size], block(merged, c, &mut rng));
        c_prev = c;
    }
    let head = Conv::init([1, c_prev, 1, 1], c_prev, 1.0, &mut rng);
    push(&mut layers, LayerKind::Conv1x1, [1, size, size], Op::Conv1x1(head));
    push(&mut layers, LayerKind::Output, [1, size, size], Op::Output);
    debug_assert_eq!(layers.len(), layout.layer_count());
    Ok(LayerGraph {
        spec: spec.clone(),
        layers,
    })
}

fn add_into(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn relu_in_place(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

impl LayerGraph {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> LayerLayout {
        self.spec.layout()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Option<&Layer> {
        index.checked_sub(1).and_then(|i| self.layers.get(i))
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Enabled skip edges `(source, merge)`, ordered by merge index.
    pub fn skip_edges(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .filter_map(|l| l.skip_source().map(|s| (s, l.index)))
            .collect()
    }

    /// Merge layers that actually receive a skip stream.
    pub fn active_merges(&self) -> BTreeSet<usize> {
        self.skip_edges().into_iter().map(|(_, m)| m).collect()
    }

    /// Layers whose outputs feed layer `index` directly.
    pub fn predecessors(&self, index: usize) -> Vec<usize> {
        let mut preds = Vec::new();
        if index > 1 {
            preds.push(index - 1);
        }
        if let Some(s) = self.layer(index).and_then(Layer::skip_source) {
            preds.push(s);
        }
        preds
    }

    /// Order in which forward evaluation visits layers.
    pub fn execution_order(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.index).collect()
    }

    pub fn params(&self) -> Vec<&[f32]> {
        self.layers
            .iter()
            .flat_map(|l| l.op.convs())
            .flat_map(|c| [c.kernels.data(), c.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.op.convs_mut())
            .flat_map(|c| [c.kernels.data_mut(), c.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads(self.params().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let (b, c, h, w) = batch.dims4("forward batch")?;
        let s = self.spec.input_size;
        if c != 1 {
            return Err(Error::Shape {
                op: "forward",
                dim: "input channels",
                expected: 1,
                got: c,
            });
        }
        if h != s || w != s {
            return Err(Error::Shape {
                op: "forward",
                dim: "input size",
                expected: s,
                got: if h != s { h } else { w },
            });
        }
        Ok(b)
    }

    /// Runs the network on `[B, 1, S, S]` and returns probabilities plus the
    /// post-nonlinearity outputs of the requested layers.
    pub fn forward(&self, batch: &Tensor, capture: &BTreeSet<usize>) -> Result<ForwardOutput> {
        let b = self.check_batch(batch)?;
        if let Some(&bad) = capture.iter().find(|&&i| i == 0 || i > self.layers.len()) {
            return Err(Error::invalid(format!(
                "capture layer {bad} outside 1..={}",
                self.layers.len()
            )));
        }
        let mut probs = Vec::with_capacity(b);
        let mut captured: BTreeMap<usize, Vec<Tensor>> = BTreeMap::new();
        for i in 0..b {
            let mut tape = self.forward_sample(&batch.outer(i)?)?;
            for &layer in capture {
                captured
                    .entry(layer)
                    .or_default()
                    .push(tape.outputs[layer - 1].clone());
            }
            probs.push(tape.outputs.pop().expect("output layer"));
        }
        let probabilities = if b == 0 {
            let s = self.spec.input_size;
            Tensor::zeros(&[0, 1, s, s])
        } else {
            Tensor::stack(&probs)?
        };
        let captures = captured
            .into_iter()
            .map(|(k, v)| Tensor::stack(&v).map(|t| (k, t)))
            .collect::<Result<_>>()?;
        Ok(ForwardOutput {
            probabilities,
            captures,
        })
    }

    fn forward_sample(&self, image: &Tensor) -> Result<Tape> {
        let n = self.layers.len();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(n);
        let mut inner = vec![None; n];
        let mut pools = vec![None; n];
        for layer in &self.layers {
            let input = if layer.index == 1 {
                image
            } else {
                &outputs[layer.index - 2]
            };
            let out = match &layer.op {
                Op::ConvBlock([a, b]) => {
                    let mut h1 = conv2d(input, &a.kernels, &a.bias, Padding::Same)?;
                    relu_in_place(&mut h1);
                    let mut h2 = conv2d(&h1, &b.kernels, &b.bias, Padding::Same)?;
                    relu_in_place(&mut h2);
                    inner[layer.index - 1] = Some(h1);
                    h2
                }
                Op::Pool => {
                    let (out, idx) = max_pool2(input)?;
                    pools[layer.index - 1] = Some(idx);
                    out
                }
                Op::UpConv(c) => {
                    let mut out = upsample2(input, &c.kernels)?;
                    let plane = out.len() / c.bias.len();
                    for (o, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += c.bias[o]);
                    }
                    out
                }
                Op::Merge { source: Some(s) } => concat_channels(input, &outputs[s - 1])?,
                Op::Merge { source: None } => input.clone(),
                Op::Conv1x1(c) => conv2d(input, &c.kernels, &c.bias, Padding::Same)?,
                Op::Output => input.map(sigmoid),
            };
            outputs.push(out);
        }
        Ok(Tape {
            outputs,
            inner,
            pools,
        })
    }

    /// `(logits, probabilities)` for one `[1, S, S]` image.
    pub(crate) fn predict_sample(&self, image: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = self.forward_sample(image)?;
        let probs = tape.outputs.pop().expect("output layer");
        let logits = tape.outputs.pop().expect("logit layer");
        Ok((logits, probs))
    }

    /// Backpropagates `grad_logits`(gradient w.r.t. the 1x1 conv output)
    /// through one sample's tape, accumulating into `grads`.
    fn backward_sample(
        &self,
        image: &Tensor,
        tape: &Tape,
        grad_logits: Tensor,
        grads: &mut ParamGrads,
    ) -> Result<()> {
        let head = self.layout().conv1x1();
        let mut upstream: Vec<Option<Tensor>> = vec![None; self.layers.len()];
        upstream[head - 1] = Some(grad_logits);
        for layer in self.layers[..head].iter().rev() {
            let idx = layer.index;
            let g = match upstream[idx - 1].take() {
                Some(g) => g,
                None => continue,
            };
            let input = if idx == 1 { image } else { &tape.outputs[idx - 2] };
            let want_input = idx > 1;
            let slot = layer.first_slot;
            let dx = match &layer.op {
                Op::ConvBlock([a, b]) => {
                    let h1 = tape.inner[idx - 1].as_ref().expect("conv block tape");
                    let g2 = activate_backward(&tape.outputs[idx - 1], &g, Activation::Relu)?;
                    let (lo, hi) = grads.0.split_at_mut(slot + 2);
                    let (gb_k, gb_b) = hi.split_at_mut(1);
                    let dh1 = conv2d_backward_accumulate(
                        h1,
                        &b.kernels,
                        &g2,
                        Padding::Same,
                        &mut gb_k[0],
                        &mut gb_b[0],
                        true,
                    )?
                    .expect("requested");
                    let g1 = activate_backward(h1, &dh1, Activation::Relu)?;
                    let (ga_k, ga_b) = lo[slot..].split_at_mut(1);
                    conv2d_backward_accumulate(
                        input,
                        &a.kernels,
                        &g1,
                        Padding::Same,
                        &mut ga_k[0],
                        &mut ga_b[0],
                        want_input,
                    )?
                }
                Op::Pool => {
                    let idx_map = tape.pools[idx - 1].as_ref().expect("pool tape");
                    Some(max_pool2_backward(&g, idx_map)?)
                }
                Op::UpConv(c) => {
                    let plane = g.len() / c.bias.len();
                    for (o, chunk) in g.data().chunks_exact(plane).enumerate() {
                        let s: f64 = chunk.iter().map(|&v| v as f64).sum();
                        let db = &mut grads.0[slot + 1][o];
                        *db = (*db as f64 + s) as f32;
                    }
                    Some(upsample2_backward_accumulate(
                        input,
                        &c.kernels,
                        &g,
                        &mut grads.0[slot],
                    )?)
                }
                Op::Merge { source: Some(s) } => {
                    let c_up = input.shape()[0];
                    let (g_up, g_skip) = split_channels(&g, c_up)?;
                    add_into(&mut upstream[s - 1], g_skip);
                    Some(g_up)
                }
                Op::Merge { source: None } => Some(g),
                Op::Conv1x1(c) => {
                    let (gk, gb) = grads.0[slot..].split_at_mut(1);
                    conv2d_backward_accumulate(
                        input,
                        &c.kernels,
                        &g,
                        Padding::Same,
                        &mut gk[0],
                        &mut gb[0],
                        want_input,
                    )?
                }
                Op::Output => unreachable!("output layer is above the loss"),
            };
            if let (Some(dx), true) = (dx, want_input) {
                add_into(&mut upstream[idx - 2], dx);
            }
        }
        Ok(())
    }

    /// Mean pixelwise binary cross-entropy of the batch and its gradient.
    ///
    /// `masks` are `[1, S, S]` binary targets aligned with `images`.
    pub fn loss_and_grads(&self, images: &[&Tensor], masks: &[&Tensor]) -> Result<BatchResult> {
        if images.len() != masks.len() {
            return Err(Error::Shape {
                op: "loss_and_grads",
                dim: "mask count",
                expected: images.len(),
                got: masks.len(),
            });
        }
        if images.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let s = self.spec.input_size;
        let pixels = s * s;
        let scale = 1.0 / (images.len() * pixels) as f64;
        let mut grads = self.zero_grads();
        let mut loss = 0.0f64;
        let mut probabilities = Vec::with_capacity(images.len());
        for (image, mask) in images.iter().zip(masks) {
            if image.shape() != [1, s, s] || mask.shape() != [1, s, s] {
                return Err(Error::invalid(format!(
                    "expected [1, {s}, {s}] image and mask, got {:?} and {:?}",
                    image.shape(),
                    mask.shape()
                )));
            }
            let mut tape = self.forward_sample(image)?;
            let logits = &tape.outputs[self.layout().conv1x1() - 1];
            let mut grad = vec![0.0f32; pixels];
            for (k, (&z, &y)) in logits.data().iter().zip(mask.data()).enumerate() {
                let (z, y) = (z as f64, y as f64);
                loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                let p = sigmoid(z as f32) as f64;
                grad[k] = ((p - y) * scale) as f32;
            }
            let grad = Tensor::new(vec![1, s, s], grad)?;
            self.backward_sample(image, &tape, grad, &mut grads)?;
            probabilities.push(tape.outputs.pop().expect("output layer"));
        }
        Ok(BatchResult {
            loss: loss * scale,
            grads,
            probabilities,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub grads: ParamGrads,
    /// Per-sample `[1, S, S]` probabilities from the same forward pass.
    pub probabilities: Vec<Tensor>,
}
