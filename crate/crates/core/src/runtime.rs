//! Forward evaluation of FC and CNN networks with activation-pattern and
//! margin extraction, and empirical risk of a network on a dataset.

use serde::{Deserialize, Serialize};

use crate::build::{CnnNetwork, CnnStage, Layer, LayerKind, PoolKind, ReluNetwork};
use crate::data::{Dataset, Loss};
use crate::util::pairwise_sum;
use crate::{Error, Result};

/// Per-hidden-layer binary activation states (`true` = pre-activation
/// strictly positive). For CNNs every conv feature-map neuron contributes
/// an entry; pooling layers none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationPattern {
    pub layers: Vec<Vec<bool>>,
}

/// Output of one forward pass. `margin` is the smallest absolute
/// pre-activation over all ReLU neurons; a strictly positive margin means
/// the pattern survives sufficiently small weight perturbations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub output: Vec<f64>,
    pub pattern: ActivationPattern,
    pub margin: f64,
}

fn affine_forward(layer: &Layer, input: &[f64]) -> Vec<f64> {
    layer
        .w
        .iter()
        .zip(&layer.b)
        .map(|(row, bias)| {
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            acc + bias
        })
        .collect()
}

/// Per-processing-step statistics collected during an instrumented forward
/// pass; steps align with [`super::verify`]'s layer views (FC hidden
/// layers, or CNN stages followed by FC hidden layers).
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepStat {
    /// max(1, largest |activation| entering the step); the floor accounts
    /// for the constant bias input.
    pub input_maxabs: f64,
    /// Smallest |pre-activation| of the step; infinity for steps without a
    /// ReLU (pooling).
    pub margin: f64,
}

fn run_fc_layers(
    layers: &[Layer],
    input: Vec<f64>,
    pattern: &mut Vec<Vec<bool>>,
    margin: &mut f64,
    steps: &mut Vec<StepStat>,
) -> Result<Vec<f64>> {
    let mut activ = input;
    for (i, layer) in layers.iter().enumerate() {
        if layer.cols() != activ.len() {
            return Err(Error::Shape(format!(
                "layer {i} expects {} inputs, got {}",
                layer.cols(),
                activ.len()
            )));
        }
        let pre = affine_forward(layer, &activ);
        match layer.kind {
            LayerKind::Relu => {
                let input_maxabs = activ.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let mut step_margin = f64::INFINITY;
                pattern.push(pre.iter().map(|&z| z > 0.0).collect());
                for &z in &pre {
                    step_margin = step_margin.min(z.abs());
                }
                *margin = margin.min(step_margin);
                steps.push(StepStat { input_maxabs, margin: step_margin });
                activ = pre.into_iter().map(|z| if z > 0.0 { z } else { 0.0 }).collect();
            }
            LayerKind::LinearOutput => {
                activ = pre;
            }
        }
    }
    Ok(activ)
}

/// Forward pass through a fully-connected network.
pub fn forward_fc(net: &ReluNetwork, x: &[f64]) -> Result<ForwardTrace> {
    Ok(forward_fc_instrumented(net, x)?.0)
}

pub(crate) fn forward_fc_instrumented(
    net: &ReluNetwork,
    x: &[f64],
) -> Result<(ForwardTrace, Vec<StepStat>)> {
    if x.len() != net.input_dim() {
        return Err(Error::Shape(format!(
            "input of length {}, network expects {}",
            x.len(),
            net.input_dim()
        )));
    }
    let mut pattern = Vec::new();
    let mut margin = f64::INFINITY;
    let mut steps = Vec::new();
    let output = run_fc_layers(&net.layers, x.to_vec(), &mut pattern, &mut margin, &mut steps)?;
    Ok((
        ForwardTrace { output, pattern: ActivationPattern { layers: pattern }, margin },
        steps,
    ))
}

/// Forward pass through a CNN: inner products over patches plus bias and
/// ReLU for conv stages, per-patch mean/max for pooling, then the
/// fully-connected stack on the flattened (channel-major) feature map.
pub fn forward_cnn(net: &CnnNetwork, x: &[f64]) -> Result<ForwardTrace> {
    Ok(forward_cnn_instrumented(net, x)?.0)
}

pub(crate) fn forward_cnn_instrumented(
    net: &CnnNetwork,
    x: &[f64],
) -> Result<(ForwardTrace, Vec<StepStat>)> {
    if x.len() != net.input_len {
        return Err(Error::Shape(format!(
            "input of length {}, network expects {}",
            x.len(),
            net.input_len
        )));
    }
    let mut channels: Vec<Vec<f64>> = vec![x.to_vec()];
    let mut pattern = Vec::new();
    let mut margin = f64::INFINITY;
    let mut steps = Vec::new();

    for stage in &net.stages {
        let input_maxabs = channels
            .iter()
            .flatten()
            .fold(1.0f64, |m, v| m.max(v.abs()));
        match stage {
            CnnStage::Conv(conv) => {
                let in_len = channels[0].len();
                let patches = conv.patch.num_patches(in_len)?;
                let mut out = Vec::new();
                let mut layer_pattern = Vec::new();
                let mut step_margin = f64::INFINITY;
                let mut apply = |filter: &[f64], bias: f64, signal: &[f64]| {
                    let mut channel = Vec::with_capacity(patches);
                    for p in 0..patches {
                        let s = conv.patch.patch_start(p);
                        let mut acc = 0.0;
                        for (w, v) in filter.iter().zip(&signal[s..s + conv.patch.size]) {
                            acc += w * v;
                        }
                        let z = acc + bias;
                        layer_pattern.push(z > 0.0);
                        step_margin = step_margin.min(z.abs());
                        channel.push(if z > 0.0 { z } else { 0.0 });
                    }
                    channel
                };
                if channels.len() == 1 {
                    // single input channel: every filter opens a channel
                    for (t, filter) in conv.filters.iter().enumerate() {
                        out.push(apply(filter, conv.biases[t], &channels[0]));
                    }
                } else if conv.filters.len() == channels.len() {
                    // depthwise: filter t on channel t
                    for (t, filter) in conv.filters.iter().enumerate() {
                        out.push(apply(filter, conv.biases[t], &channels[t]));
                    }
                } else {
                    return Err(Error::Shape(format!(
                        "{} filters cannot consume {} channels",
                        conv.filters.len(),
                        channels.len()
                    )));
                }
                pattern.push(layer_pattern);
                margin = margin.min(step_margin);
                steps.push(StepStat { input_maxabs, margin: step_margin });
                channels = out;
            }
            CnnStage::Pool(pool) => {
                let mut out = Vec::with_capacity(channels.len());
                for channel in &channels {
                    let patches = pool.patch.num_patches(channel.len())?;
                    let pooled: Vec<f64> = (0..patches)
                        .map(|p| {
                            let s = pool.patch.patch_start(p);
                            let window = &channel[s..s + pool.patch.size];
                            match pool.kind {
                                PoolKind::Average => {
                                    window.iter().sum::<f64>() / pool.patch.size as f64
                                }
                                PoolKind::Max => {
                                    window.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                                }
                            }
                        })
                        .collect();
                    out.push(pooled);
                }
                steps.push(StepStat { input_maxabs, margin: f64::INFINITY });
                channels = out;
            }
        }
    }

    let flat: Vec<f64> = channels.into_iter().flatten().collect();
    let output = if net.fc.is_empty() {
        flat
    } else {
        run_fc_layers(&net.fc, flat, &mut pattern, &mut margin, &mut steps)?
    };
    Ok((
        ForwardTrace { output, pattern: ActivationPattern { layers: pattern }, margin },
        steps,
    ))
}

/// A network of either kind, as serialized to network JSON files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Network {
    Fc(ReluNetwork),
    Cnn(CnnNetwork),
}

impl Network {
    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        match self {
            Network::Fc(net) => forward_fc(net, x),
            Network::Cnn(net) => forward_cnn(net, x),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Network::Fc(net) => net.input_dim(),
            Network::Cnn(net) => net.input_len,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Network::Fc(net) => net.output_dim(),
            Network::Cnn(net) => net.fc.last().map_or(0, Layer::rows),
        }
    }
}

/// Empirical risk of a network on a dataset, with the per-sample traces
/// needed by certification.
#[derive(Debug, Clone)]
pub struct RiskReport {
    pub risk: f64,
    pub per_sample_loss: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
    pub patterns: Vec<ActivationPattern>,
    pub min_margin: f64,
    /// Sample index attaining the minimum margin.
    pub min_margin_sample: usize,
}

/// `risk = (1/N) sum_i loss(forward(x_i), y_i)`, evaluated sample-wise
/// (parallel over samples, deterministic pairwise aggregation).
pub fn network_risk(net: &Network, dataset: &Dataset, loss: &Loss) -> Result<RiskReport> {
    if net.input_dim() != dataset.dx() || net.output_dim() != dataset.dy() {
        return Err(Error::Shape(format!(
            "network maps {} -> {}, dataset has dx = {}, dy = {}",
            net.input_dim(),
            net.output_dim(),
            dataset.dx(),
            dataset.dy()
        )));
    }
    let traces: Vec<Result<ForwardTrace>> =
        parallel_map(dataset.len(), |i| net.forward(&dataset.sample(i).x));
    let mut per_sample_loss = Vec::with_capacity(dataset.len());
    let mut outputs = Vec::with_capacity(dataset.len());
    let mut patterns = Vec::with_capacity(dataset.len());
    let mut min_margin = f64::INFINITY;
    let mut min_margin_sample = 0;
    for (i, trace) in traces.into_iter().enumerate() {
        let trace = trace?;
        per_sample_loss.push(loss.eval(&trace.output, &dataset.sample(i).y));
        if trace.margin < min_margin {
            min_margin = trace.margin;
            min_margin_sample = i;
        }
        outputs.push(trace.output);
        patterns.push(trace.pattern);
    }
    Ok(RiskReport {
        risk: pairwise_sum(&per_sample_loss) / dataset.len() as f64,
        per_sample_loss,
        outputs,
        patterns,
        min_margin,
        min_margin_sample,
    })
}

/// Number of workers to use: `available_parallelism`, capped by the
/// `CPWL_THREADS` environment variable and the item count.
pub(crate) fn worker_count(n_items: usize) -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("CPWL_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&c| c >= 1)
        .unwrap_or(avail);
    cap.min(avail).max(1).min(n_items.max(1))
}

/// Applies `f` to `0..n` on a scoped thread pool, preserving index order in
/// the result.
pub(crate) fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = worker_count(n);
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let mut chunks: Vec<Vec<T>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                scope.spawn(move || {
                    let start = w * chunk;
                    let end = ((w + 1) * chunk).min(n);
                    (start..end).map(f).collect::<Vec<T>>()
                })
            })
            .collect();
        for h in handles {
            chunks.push(h.join().expect("worker panicked"));
        }
    });
    chunks.into_iter().flatten().collect()
}
