use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dice::{binarize, dice};
use super::graph::LayerGraph;
use super::trace::ActivationTrace;
use crate::dataset::Dataset;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epochs (1-based, ascending) after which probe activations are captured.
    pub capture_epochs: Vec<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 300,
            batch_size: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            capture_epochs: Vec::new(),
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.capture_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("capture epochs must be strictly increasing"));
        }
        if let Some(&bad) = self
            .capture_epochs
            .iter()
            .find(|&&e| e == 0 || e > self.epochs)
        {
            return Err(Error::invalid(format!(
                "capture epoch {bad} outside 1..={}",
                self.epochs
            )));
        }
        Ok(())
    }
}

/// The 1-2-5 schedule `1, 2, 5, 10, 20, 50, ...` up to `epochs`, always
/// ending with `epochs` itself.
pub fn exponential_schedule(epochs: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut decade = 1usize;
    'outer: loop {
        for m in [1, 2, 5] {
            let e = m * decade;
            if e > epochs {
                break 'outer;
            }
            out.push(e);
        }
        decade *= 10;
    }
    if epochs > 0 && out.last() != Some(&epochs) {
        out.push(epochs);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_dice: f64,
    pub val_loss: Option<f64>,
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Mean per-sample Dice of the binarized prediction.
    pub dice: f64,
}

/// Mean BCE and mean Dice of the network over a dataset.
pub fn evaluate(graph: &LayerGraph, data: &Dataset) -> Result<Option<Evaluation>> {
    if data.is_empty() {
        return Ok(None);
    }
    let mut loss = 0.0f64;
    let mut dice_sum = 0.0f64;
    for sample in data.samples() {
        let (logits, probs) = graph.predict_sample(&sample.image)?;
        let mut l = 0.0f64;
        for (&z, &y) in logits.data().iter().zip(sample.mask.data()) {
            let (z, y) = (z as f64, y as f64);
            l += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        loss += l / logits.len() as f64;
        dice_sum += dice(&binarize(probs.data()), sample.mask.data())?;
    }
    let n = data.len() as f64;
    Ok(Some(Evaluation {
        loss: loss / n,
        dice: dice_sum / n,
    }))
}

fn sgd_step(graph: &mut LayerGraph, velocity: &mut [Vec<f32>], grads: &[Vec<f32>], lr: f64, momentum: f64) {
    for ((param, v), g) in graph.params_mut().into_iter().zip(velocity.iter_mut()).zip(grads) {
        for ((p, v), &g) in param.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = (momentum * *v as f64 + g as f64) as f32;
            *p -= (lr * *v as f64) as f32;
        }
    }
}

/// Mini-batch SGD with momentum on mean pixelwise BCE.
///
/// Metrics are recorded for epoch 0 (initialization) and after every epoch;
/// training metrics for epochs >= 1 come from the in-pass predictions. At
/// every capture epoch all layers' outputs on `probe` are stored.
pub fn train(
    graph: &mut LayerGraph,
    train_set: &Dataset,
    val_set: &Dataset,
    probe: &Dataset,
    opts: &TrainOptions,
) -> Result<ActivationTrace> {
    opts.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let s = graph.spec().input_size;
    for (what, d) in [("training", train_set), ("validation", val_set), ("probe", probe)] {
        if !d.is_empty() && d.size() != s {
            return Err(Error::invalid(format!(
                "{what} samples are {0}x{0}, network expects {s}x{s}",
                d.size()
            )));
        }
    }
    if !opts.capture_epochs.is_empty() && probe.is_empty() {
        return Err(Error::invalid("captures requested with an empty probe set"));
    }

    let mut metrics = Vec::with_capacity(opts.epochs + 1);
    let init = evaluate(graph, train_set)?.expect("non-empty");
    let val = evaluate(graph, val_set)?;
    metrics.push(EpochMetrics {
        epoch: 0,
        train_loss: init.loss,
        train_dice: init.dice,
        val_loss: val.map(|v| v.loss),
        val_dice: val.map(|v| v.dice),
    });

    let probe_images = if probe.is_empty() { None } else { Some(probe.images()?) };
    let all_layers: BTreeSet<usize> = (1..=graph.layer_count()).collect();
    let captures_wanted: BTreeSet<usize> = opts.capture_epochs.iter().copied().collect();
    let mut captures: BTreeMap<usize, Vec<Tensor>> = BTreeMap::new();

    let mut rng = ChaCha8Rng::seed_from_u64(graph.spec().seed ^ 0x5eed_5eed_5eed_5eed);
    let mut velocity: Vec<Vec<f32>> = graph.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let samples = train_set.samples();

    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut dice_sum = 0.0f64;
        for batch in order.chunks(opts.batch_size) {
            let images: Vec<&Tensor> = batch.iter().map(|&i| &samples[i].image).collect();
            let masks: Vec<&Tensor> = batch.iter().map(|&i| &samples[i].mask).collect();
            let result = graph.loss_and_grads(&images, &masks)?;
            if !result.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += result.loss * batch.len() as f64;
            for (p, m) in result.probabilities.iter().zip(&masks) {
                dice_sum += dice(&binarize(p.data()), m.data())?;
            }
            sgd_step(graph, &mut velocity, &result.grads.0, opts.learning_rate, opts.momentum);
        }
        let n = train_set.len() as f64;
        let val = evaluate(graph, val_set)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_dice: dice_sum / n,
            val_loss: val.map(|v| v.loss),
            val_dice: val.map(|v| v.dice),
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} dice {:.4} val dice {:?}",
            m.train_loss,
            m.train_dice,
            m.val_dice
        );
        metrics.push(m);
        if captures_wanted.contains(&epoch) {
            let images = probe_images.as_ref().expect("probe checked above");
            let out = graph.forward(images, &all_layers)?;
            captures.insert(epoch, out.captures.into_values().collect());
        }
    }

    ActivationTrace::new(
        graph.spec().clone(),
        opts.clone(),
        metrics,
        captures,
        probe.images().ok(),
        probe.masks().ok(),
        graph.layers().iter().map(|l| (l.kind, l.shape)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_one_two_five() {
        assert_eq!(exponential_schedule(300), vec![1, 2, 5, 10, 20, 50, 100, 200, 300]);
        assert_eq!(exponential_schedule(100), vec![1, 2, 5, 10, 20, 50, 100]);
        assert_eq!(exponential_schedule(3), vec![1, 2, 3]);
        assert!(exponential_schedule(0).is_empty());
    }

    #[test]
    fn options_validation() {
        let mut o = TrainOptions {
            epochs: 10,
            capture_epochs: vec![1, 5, 10],
            ..Default::default()
        };
        assert!(o.validate().is_ok());
        o.capture_epochs = vec![5, 2];
        assert!(o.validate().is_err());
        o.capture_epochs = vec![11];
        assert!(o.validate().is_err());
        o.capture_epochs = vec![0];
        assert!(o.validate().is_err());
    }
}
