//! Synthesis of explicit network weights realizing a CPWL predictor: a
//! piece layer shifted by a positive constant, hierarchical min/max gadget
//! trees, and an output layer cancelling the shift. The CNN path fits
//! structured first-layer filters and stacks the same gadget machinery on
//! top of fixed all-ones interior layers.

use serde::{Deserialize, Serialize};

use crate::cpwl::{check_consistency, CpwlPredictor, MaxMinForm};
use crate::data::Dataset;
use crate::fit::{AffinePiece, GroupFit};
use crate::partition::Partition;
use crate::{Error, Result};

/// Gadget trees combine values pairwise.
pub const TREE_FANIN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Relu,
    LinearOutput,
}

/// One dense layer. Serialized as `{kind, rows, cols, weights, biases}`
/// with row-major flat weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "LayerJson", try_from = "LayerJson")]
pub struct Layer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub kind: LayerKind,
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    kind: LayerKind,
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl From<Layer> for LayerJson {
    fn from(l: Layer) -> Self {
        let rows = l.w.len();
        let cols = l.w.first().map_or(0, Vec::len);
        LayerJson {
            kind: l.kind,
            rows,
            cols,
            weights: l.w.into_iter().flatten().collect(),
            biases: l.b,
        }
    }
}

impl TryFrom<LayerJson> for Layer {
    type Error = Error;

    fn try_from(j: LayerJson) -> Result<Layer> {
        if j.weights.len() != j.rows * j.cols || j.biases.len() != j.rows {
            return Err(Error::Shape("layer record has inconsistent dimensions".into()));
        }
        let w = j.weights.chunks(j.cols.max(1)).map(<[f64]>::to_vec).collect();
        Ok(Layer { w, b: j.biases, kind: j.kind })
    }
}

impl Layer {
    pub fn rows(&self) -> usize {
        self.w.len()
    }

    pub fn cols(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }
}

/// A fully-connected network: ReLU hidden layers, linear output layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReluNetwork {
    pub layers: Vec<Layer>,
}

impl ReluNetwork {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::cols)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::rows)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::Relu)
            .map(Layer::rows)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            match (last, l.kind) {
                (true, LayerKind::LinearOutput) | (false, LayerKind::Relu) => {}
                _ => {
                    return Err(Error::Shape(
                        "hidden layers must be relu, the final layer linear_output".into(),
                    ))
                }
            }
            if i > 0 && l.cols() != self.layers[i - 1].rows() {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs, previous layer provides {}",
                    l.cols(),
                    self.layers[i - 1].rows()
                )));
            }
        }
        Ok(())
    }
}

/// Build options. `c` is the uniform positive bias added to every piece
/// neuron; `None` picks the smallest safe value automatically (largest
/// absolute piece value over the domain vertices, plus 1).
#[derive(Debug, Clone, Default)]
pub struct BuildConfig {
    pub c: Option<f64>,
}

/// 2-in/1-out fragment computing `min(a, b) = relu(relu(b) - relu(b - a))`
/// exactly for nonnegative inputs.
pub fn build_min_gadget() -> ReluNetwork {
    ReluNetwork {
        layers: vec![
            Layer {
                w: vec![vec![0.0, 1.0], vec![-1.0, 1.0]],
                b: vec![0.0, 0.0],
                kind: LayerKind::Relu,
            },
            Layer {
                w: vec![vec![1.0, -1.0]],
                b: vec![0.0],
                kind: LayerKind::Relu,
            },
            Layer {
                w: vec![vec![1.0]],
                b: vec![0.0],
                kind: LayerKind::LinearOutput,
            },
        ],
    }
}

/// 2-in/1-out fragment computing `max(a, b) = relu(relu(a) + relu(b - a))`
/// exactly for nonnegative inputs.
pub fn build_max_gadget() -> ReluNetwork {
    ReluNetwork {
        layers: vec![
            Layer {
                w: vec![vec![1.0, 0.0], vec![-1.0, 1.0]],
                b: vec![0.0, 0.0],
                kind: LayerKind::Relu,
            },
            Layer {
                w: vec![vec![1.0, 1.0]],
                b: vec![0.0],
                kind: LayerKind::Relu,
            },
            Layer {
                w: vec![vec![1.0]],
                b: vec![0.0],
                kind: LayerKind::LinearOutput,
            },
        ],
    }
}

// ---------------------------------------------------------------------------
// gadget stack planning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpKind {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Pair { a: usize, b: usize, kind: OpKind },
    Pass { v: usize },
}

/// Deduplicates psi sets and drops supersets of other kept sets. Both
/// reductions leave `max_i min_{j in psi_i} f_j` unchanged: duplicates are
/// literal repeats, and for S a subset of T the min over T lies below the
/// min over S everywhere, so T never wins the outer max.
fn reduced_psi_sets(form: &MaxMinForm) -> Vec<Vec<usize>> {
    let mut unique: Vec<Vec<usize>> = Vec::new();
    for set in &form.psi_sets {
        let mut s = set.clone();
        s.sort_unstable();
        if !unique.contains(&s) {
            unique.push(s);
        }
    }
    let keep: Vec<bool> = unique
        .iter()
        .map(|t| {
            !unique
                .iter()
                .any(|s| s.len() < t.len() && s.iter().all(|j| t.contains(j)))
        })
        .collect();
    unique
        .into_iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect()
}

/// Per-component plan: the sequence of gadget levels turning the shifted
/// piece values into the shifted max-min value. Op operands index the
/// component's value list at the previous level.
fn plan_component(set_sizes: &[usize]) -> Vec<Vec<Op>> {
    let mut levels: Vec<Vec<Op>> = Vec::new();
    // min stage: reduce every set to a single value
    let mut counts: Vec<usize> = set_sizes.to_vec();
    while counts.iter().any(|&c| c > 1) {
        let mut ops = Vec::new();
        let mut pos = 0usize;
        let mut next_counts = Vec::with_capacity(counts.len());
        for &count in &counts {
            let mut remaining = count;
            let mut produced = 0usize;
            while remaining >= 2 {
                ops.push(Op::Pair { a: pos, b: pos + 1, kind: OpKind::Min });
                pos += 2;
                remaining -= 2;
                produced += 1;
            }
            if remaining == 1 {
                ops.push(Op::Pass { v: pos });
                pos += 1;
                produced += 1;
            }
            next_counts.push(produced);
        }
        levels.push(ops);
        counts = next_counts;
    }
    // max stage: reduce the psi values to a single value
    let mut count = counts.len();
    while count > 1 {
        let mut ops = Vec::new();
        let mut pos = 0usize;
        let mut produced = 0usize;
        while pos + 1 < count {
            ops.push(Op::Pair { a: pos, b: pos + 1, kind: OpKind::Max });
            pos += 2;
            produced += 1;
        }
        if pos < count {
            ops.push(Op::Pass { v: pos });
            produced += 1;
        }
        levels.push(ops);
        count = produced;
    }
    levels
}

/// Emits the gadget layers for all components on top of a layer exposing
/// the shifted piece values. `piece_wires[k][i]` is the neuron index of
/// piece `i`, component `k` in that layer. Returns the hidden layers plus
/// the linear output layer, which folds the final gadget level's outer
/// ReLU into the linear read-out and subtracts `shift`.
fn gadget_stack(
    prev_width: usize,
    piece_wires: &[Vec<usize>],
    forms: &[MaxMinForm],
    shift: f64,
) -> Result<Vec<Layer>> {
    let dy = forms.len();
    let mut plans: Vec<Vec<Vec<Op>>> = Vec::with_capacity(dy);
    // wires[k] = neuron indices of component k's current values in the
    // previously emitted layer
    let mut wires: Vec<Vec<usize>> = Vec::with_capacity(dy);
    for (k, form) in forms.iter().enumerate() {
        let sets = reduced_psi_sets(form);
        plans.push(plan_component(&sets.iter().map(Vec::len).collect::<Vec<_>>()));
        wires.push(
            sets.iter()
                .flatten()
                .map(|&j| piece_wires[k][j])
                .collect(),
        );
    }
    let depth = plans.iter().map(Vec::len).max().unwrap_or(0);

    if depth == 0 {
        // single piece per component: the output layer reads it directly
        let mut w = vec![vec![0.0; prev_width]; dy];
        for k in 0..dy {
            w[k][wires[k][0]] = 1.0;
        }
        return Ok(vec![Layer { w, b: vec![-shift; dy], kind: LayerKind::LinearOutput }]);
    }

    // pad shallower components by passing their final value through
    for plan in &mut plans {
        while plan.len() < depth {
            plan.push(vec![Op::Pass { v: 0 }]);
        }
    }

    let mut layers: Vec<Layer> = Vec::with_capacity(2 * depth);
    let mut width_prev = prev_width;

    for level in 0..depth {
        // A layer: per pair a keep neuron and a difference neuron, per
        // passthrough a single keep neuron
        let mut wa: Vec<Vec<f64>> = Vec::new();
        // (keep neuron, optional diff neuron) per op per component
        let mut a_index: Vec<Vec<(usize, Option<usize>)>> = Vec::with_capacity(dy);
        for k in 0..dy {
            let ops = &plans[k][level];
            let mut per_op = Vec::with_capacity(ops.len());
            for op in ops {
                match *op {
                    Op::Pair { a, b, kind } => {
                        let (a, b) = (wires[k][a], wires[k][b]);
                        let mut keep = vec![0.0; width_prev];
                        // min keeps b (min = b - relu(b - a)),
                        // max keeps a (max = a + relu(b - a))
                        keep[if kind == OpKind::Min { b } else { a }] = 1.0;
                        let mut diff = vec![0.0; width_prev];
                        diff[b] += 1.0;
                        diff[a] -= 1.0;
                        wa.push(keep);
                        wa.push(diff);
                        per_op.push((wa.len() - 2, Some(wa.len() - 1)));
                    }
                    Op::Pass { v } => {
                        let v = wires[k][v];
                        let mut row = vec![0.0; width_prev];
                        row[v] = 1.0;
                        wa.push(row);
                        per_op.push((wa.len() - 1, None));
                    }
                }
            }
            a_index.push(per_op);
        }
        let a_width = wa.len();
        layers.push(Layer { w: wa, b: vec![0.0; a_width], kind: LayerKind::Relu });

        // combined read-out of one op from the A layer:
        // min = keep - diff, max = keep + diff, pass = keep
        let combine_row = |k: usize, o: usize| -> Vec<f64> {
            let mut row = vec![0.0; a_width];
            let (keep, diff) = a_index[k][o];
            row[keep] = 1.0;
            if let Some(diff) = diff {
                row[diff] = match plans[k][level][o] {
                    Op::Pair { kind: OpKind::Min, .. } => -1.0,
                    Op::Pair { kind: OpKind::Max, .. } => 1.0,
                    Op::Pass { .. } => unreachable!(),
                };
            }
            row
        };

        if level + 1 == depth {
            let mut w = Vec::with_capacity(dy);
            for (k, plan) in plans.iter().enumerate() {
                if plan[level].len() != 1 {
                    return Err(Error::Config(
                        "gadget planning left more than one value per component".into(),
                    ));
                }
                w.push(combine_row(k, 0));
            }
            layers.push(Layer { w, b: vec![-shift; dy], kind: LayerKind::LinearOutput });
        } else {
            let mut wb: Vec<Vec<f64>> = Vec::new();
            for (k, plan) in plans.iter().enumerate() {
                let mut outs = Vec::with_capacity(plan[level].len());
                for o in 0..plan[level].len() {
                    wb.push(combine_row(k, o));
                    outs.push(wb.len() - 1);
                }
                wires[k] = outs;
            }
            let b_width = wb.len();
            layers.push(Layer { w: wb, b: vec![0.0; b_width], kind: LayerKind::Relu });
            width_prev = b_width;
        }
    }
    Ok(layers)
}

fn max_abs_piece_value(predictor: &CpwlPredictor) -> f64 {
    let mut cmax: f64 = 0.0;
    for v in &predictor.partition.domain.vertices {
        for piece in &predictor.pieces_by_region {
            for value in piece.eval(v) {
                cmax = cmax.max(value.abs());
            }
        }
    }
    cmax
}

fn floor_log2(n: usize) -> u32 {
    usize::BITS - 1 - n.leading_zeros()
}

fn assert_size_bounds(net: &ReluNetwork, n_pieces: usize, dy: usize) -> Result<()> {
    let hidden = net.hidden_widths();
    let depth_bound = 1 + 4 * floor_log2(n_pieces.max(1)) as usize;
    if hidden.len() > depth_bound {
        return Err(Error::Config(format!(
            "construction used {} hidden layers, exceeding the {depth_bound} bound for \
             {n_pieces} pieces",
            hidden.len()
        )));
    }
    let width_bound = n_pieces * n_pieces * dy;
    if let Some(&widest) = hidden.iter().max() {
        if widest > width_bound {
            return Err(Error::Config(format!(
                "construction used width {widest}, exceeding the {width_bound} bound"
            )));
        }
    }
    Ok(())
}

/// Builds a fully-connected ReLU network computing `predictor` on its
/// domain of interest: one shifted piece neuron per (region, component),
/// hierarchical min/max gadget trees per component, and an output layer
/// subtracting the shift again.
pub fn build_fc_network(predictor: &CpwlPredictor, config: &BuildConfig) -> Result<ReluNetwork> {
    let dx = predictor.dx();
    let dy = predictor.dy();
    let n = predictor.pieces_by_region.len();

    let cmax = max_abs_piece_value(predictor);
    let c = match config.c {
        Some(c) => {
            if c < cmax + 1.0 - 1e-12 {
                return Err(Error::Config(format!(
                    "c = {c} too small: pieces reach |{cmax}| on the domain, need c >= {}",
                    cmax + 1.0
                )));
            }
            c
        }
        None => cmax + 1.0,
    };

    // piece layer: neuron (k, i) emits piece_i,k(x) + c > 0 on the domain
    let mut w = Vec::with_capacity(n * dy);
    let mut b = Vec::with_capacity(n * dy);
    let mut piece_wires: Vec<Vec<usize>> = vec![Vec::with_capacity(n); dy];
    for k in 0..dy {
        for piece in &predictor.pieces_by_region {
            let (row, bias) = piece.component(k);
            debug_assert_eq!(row.len(), dx);
            piece_wires[k].push(w.len());
            w.push(row.to_vec());
            b.push(bias + c);
        }
    }
    let piece_layer = Layer { w, b, kind: LayerKind::Relu };

    let mut layers = vec![piece_layer];
    layers.extend(gadget_stack(n * dy, &piece_wires, &predictor.forms, c)?);
    let net = ReluNetwork { layers };
    net.validate()?;
    assert_size_bounds(&net, n, dy)?;
    Ok(net)
}

/// Multiplies hidden layer `layer`'s weights and biases by `a > 0` and the
/// following layer's weights by `1/a`; ReLU positive homogeneity leaves the
/// network function unchanged.
pub fn rescale_homogeneous(net: &ReluNetwork, layer: usize, a: f64) -> Result<ReluNetwork> {
    if !(a > 0.0) {
        return Err(Error::Argument("rescaling requires a > 0".into()));
    }
    if layer + 1 >= net.layers.len() {
        return Err(Error::Argument("rescaling applies to hidden layers only".into()));
    }
    let mut out = net.clone();
    for row in &mut out.layers[layer].w {
        for v in row {
            *v *= a;
        }
    }
    for v in &mut out.layers[layer].b {
        *v *= a;
    }
    for row in &mut out.layers[layer + 1].w {
        for v in row {
            *v /= a;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CNN construction
// ---------------------------------------------------------------------------

/// Sliding-window specification; the window must tile the input exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: usize,
    pub stride: usize,
}

impl PatchSpec {
    pub fn num_patches(&self, len: usize) -> Result<usize> {
        if self.size == 0 || self.stride == 0 {
            return Err(Error::Shape("patch size and stride must be positive".into()));
        }
        if len < self.size || (len - self.size) % self.stride != 0 {
            return Err(Error::Shape(format!(
                "patch spec {}x{} does not tile an input of length {len}",
                self.size, self.stride
            )));
        }
        Ok((len - self.size) / self.stride + 1)
    }

    pub fn patch_start(&self, p: usize) -> usize {
        p * self.stride
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Average,
    Max,
}

/// Architecture descriptor: a conv stage followed by any interleaving of
/// further conv/pool stages. The fully-connected stack is appended by the
/// builder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CnnStagePlan {
    Conv(PatchSpec),
    Pool(PoolKind, PatchSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnArch {
    pub stages: Vec<CnnStagePlan>,
}

impl CnnArch {
    /// Per-channel signal length after every stage.
    pub fn chain(&self, input_len: usize) -> Result<Vec<usize>> {
        if !matches!(self.stages.first(), Some(CnnStagePlan::Conv(_))) {
            return Err(Error::Shape("the first CNN stage must be convolutional".into()));
        }
        let mut len = input_len;
        let mut lens = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let patch = match stage {
                CnnStagePlan::Conv(p) | CnnStagePlan::Pool(_, p) => p,
            };
            len = patch.num_patches(len)?;
            lens.push(len);
        }
        Ok(lens)
    }
}

/// Convolutional layer: `filters[t]` is applied to every patch. On a
/// single-channel input every filter produces one output channel; on a
/// multi-channel input filters act depthwise (filter `t` on channel `t`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvLayer {
    pub filters: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub patch: PatchSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolLayer {
    pub kind: PoolKind,
    pub patch: PatchSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CnnStage {
    Conv(ConvLayer),
    Pool(PoolLayer),
}

/// A CNN: conv/pool stages followed by fully-connected layers. `l_fc` is
/// the index of the first fully-connected layer in the overall sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnNetwork {
    pub input_len: usize,
    pub stages: Vec<CnnStage>,
    pub fc: Vec<Layer>,
    pub l_fc: usize,
}

/// Coefficients `alpha_p` such that summing the all-ones interior chain's
/// final positions equals `sum_p alpha_p * z_p` over first-conv patch
/// outputs `z_p`, computed by pushing unit vectors through the chain.
fn interior_chain_coefficients(arch: &CnnArch, p1: usize) -> Result<Vec<f64>> {
    let mut alphas = Vec::with_capacity(p1);
    for p in 0..p1 {
        let mut signal = vec![0.0; p1];
        signal[p] = 1.0;
        for stage in &arch.stages[1..] {
            signal = match stage {
                CnnStagePlan::Conv(patch) => {
                    let out = patch.num_patches(signal.len())?;
                    (0..out)
                        .map(|q| {
                            let s = patch.patch_start(q);
                            signal[s..s + patch.size].iter().sum()
                        })
                        .collect()
                }
                CnnStagePlan::Pool(PoolKind::Average, patch) => {
                    let out = patch.num_patches(signal.len())?;
                    (0..out)
                        .map(|q| {
                            let s = patch.patch_start(q);
                            signal[s..s + patch.size].iter().sum::<f64>() / patch.size as f64
                        })
                        .collect()
                }
                CnnStagePlan::Pool(PoolKind::Max, _) => {
                    return Err(Error::Unsupported(
                        "max pooling is not supported on the construction path (forward \
                         evaluation only)"
                            .into(),
                    ))
                }
            };
        }
        alphas.push(signal.iter().sum());
    }
    Ok(alphas)
}

/// The fixed linear map `u(x) = sum_p alpha_p * patch_p(x)`; the composed
/// conv-pool-fc chain for one filter `w` is then affine in `(w, bias)` with
/// slope `<w, u(x)>`.
fn structured_input(x: &[f64], patch: &PatchSpec, alphas: &[f64]) -> Vec<f64> {
    let mut u = vec![0.0; patch.size];
    for (p, &alpha) in alphas.iter().enumerate() {
        let s = patch.patch_start(p);
        for i in 0..patch.size {
            u[i] += alpha * x[s + i];
        }
    }
    u
}

/// Builds a CNN realizing per-group structured affine fits: first-layer
/// filters and biases are least-squares optimal per (region, component)
/// over the family reachable through the fixed all-ones interior layers;
/// min/max gadget layers stack above the first fully-connected layer.
///
/// Returns the network together with the per-group fits (pieces expressed
/// as plain affine maps on the raw input).
pub fn build_cnn_network(
    dataset: &Dataset,
    partition: &Partition,
    config: &BuildConfig,
    arch: &CnnArch,
) -> Result<(CnnNetwork, Vec<GroupFit>)> {
    let dx = dataset.dx();
    let dy = dataset.dy();
    let lens = arch.chain(dx)?;
    let first_patch = match &arch.stages[0] {
        CnnStagePlan::Conv(p) => *p,
        CnnStagePlan::Pool(..) => unreachable!("chain() rejects pool-first architectures"),
    };
    let p1 = first_patch.num_patches(dx)?;
    let alphas = interior_chain_coefficients(arch, p1)?;
    let a_total: f64 = alphas.iter().sum();
    if !(a_total > 0.0) {
        return Err(Error::Numerical("interior chain collapsed to zero gain".into()));
    }

    let groups = partition.sample_bearing_regions();
    if groups.is_empty() {
        return Err(Error::Argument("partition has no sample-bearing regions".into()));
    }

    // per (group, component) structured least squares on rows [u(x), 1]
    let mut fits: Vec<GroupFit> = Vec::with_capacity(groups.len());
    let mut filters: Vec<Vec<f64>> = Vec::new(); // filters[j] holds dy blocks of size s
    let mut raw_intercepts: Vec<Vec<f64>> = Vec::new(); // [j][k] = beta
    for &region in &groups {
        let members = partition.group(region);
        let design: Vec<Vec<f64>> = members
            .iter()
            .map(|&i| {
                let mut row = structured_input(&dataset.sample(i).x, &first_patch, &alphas);
                row.push(1.0);
                row
            })
            .collect();
        let targets: Vec<Vec<f64>> =
            members.iter().map(|&i| dataset.sample(i).y.clone()).collect();
        let theta = crate::fit::solve_least_squares(&design, &targets)?;

        // induced affine piece on the raw input
        let mut a = vec![vec![0.0; dx]; dy];
        let mut b = vec![0.0; dy];
        for k in 0..dy {
            for (p, &alpha) in alphas.iter().enumerate() {
                let s = first_patch.patch_start(p);
                for i in 0..first_patch.size {
                    a[k][s + i] += alpha * theta[i][k];
                }
            }
            b[k] = theta[first_patch.size][k];
        }
        let piece = AffinePiece::new(a, b)?;
        let per: Vec<f64> = members
            .iter()
            .map(|&i| {
                let s = dataset.sample(i);
                crate::data::Loss::Mse.eval(&piece.eval(&s.x), &s.y)
            })
            .collect();
        fits.push(GroupFit {
            region_idx: region,
            piece,
            group_risk: crate::util::pairwise_sum(&per),
            n_samples: members.len(),
        });
        raw_intercepts.push((0..dy).map(|k| theta[first_patch.size][k]).collect());
        let mut flat = Vec::with_capacity(dy * first_patch.size);
        for k in 0..dy {
            for row in theta.iter().take(first_patch.size) {
                flat.push(row[k]);
            }
        }
        filters.push(flat);
    }

    // psi structure over the sample-bearing regions only
    let fit_partition = Partition {
        regions: groups.iter().map(|&r| partition.regions[r].clone()).collect(),
        assignment: partition
            .assignment
            .iter()
            .map(|r| {
                groups
                    .iter()
                    .position(|g| g == r)
                    .expect("samples live in sample-bearing regions")
            })
            .collect(),
        domain: partition.domain.clone(),
        auxiliary: vec![false; groups.len()],
    };
    let predictor = CpwlPredictor::from_region_pieces(
        fit_partition,
        fits.iter().map(|f| f.piece.clone()).collect(),
    )?;
    let (consistent, violations) = check_consistency(&predictor, dataset);
    if !consistent {
        return Err(Error::Consistency(format!(
            "fitted pieces do not form a max-min-consistent predictor at {} sample/component \
             pairs (no auxiliary synthesis is available for this input dimension)",
            violations.len()
        )));
    }

    // shift: piece positivity on domain vertices plus patch-level positivity
    // of every first-layer neuron at samples and domain vertices
    let n_groups = groups.len();
    let mut shift_floor = max_abs_piece_value(&predictor);
    let probe_points: Vec<&[f64]> = dataset
        .samples()
        .iter()
        .map(|s| s.x.as_slice())
        .chain(predictor.partition.domain.vertices.iter().map(|v| v.as_slice()))
        .collect();
    for (j, _) in groups.iter().enumerate() {
        for k in 0..dy {
            let w = &filters[j][k * first_patch.size..(k + 1) * first_patch.size];
            let beta = raw_intercepts[j][k];
            for x in &probe_points {
                for p in 0..p1 {
                    let s = first_patch.patch_start(p);
                    let dot: f64 = w
                        .iter()
                        .zip(&x[s..s + first_patch.size])
                        .map(|(a, b)| a * b)
                        .sum();
                    // patch neuron value is dot + (beta + shift) / a_total
                    shift_floor = shift_floor.max(-beta - a_total * dot);
                }
            }
        }
    }
    let shift = match config.c {
        Some(c) => {
            if c < shift_floor + 1.0 - 1e-12 {
                return Err(Error::Config(format!(
                    "c = {c} too small for positivity, need c >= {}",
                    shift_floor + 1.0
                )));
            }
            c
        }
        None => shift_floor + 1.0,
    };

    // assemble stages: the first conv holds the fitted filters (channel id
    // k * P + j), interior convs are all-ones depthwise with zero bias
    let channels = dy * n_groups;
    let mut conv_filters = Vec::with_capacity(channels);
    let mut conv_biases = Vec::with_capacity(channels);
    for k in 0..dy {
        for j in 0..n_groups {
            conv_filters
                .push(filters[j][k * first_patch.size..(k + 1) * first_patch.size].to_vec());
            conv_biases.push((raw_intercepts[j][k] + shift) / a_total);
        }
    }
    let mut stages = vec![CnnStage::Conv(ConvLayer {
        filters: conv_filters,
        biases: conv_biases,
        patch: first_patch,
    })];
    for stage in &arch.stages[1..] {
        stages.push(match stage {
            CnnStagePlan::Conv(patch) => CnnStage::Conv(ConvLayer {
                filters: vec![vec![1.0; patch.size]; channels],
                biases: vec![0.0; channels],
                patch: *patch,
            }),
            CnnStagePlan::Pool(kind, patch) => {
                CnnStage::Pool(PoolLayer { kind: *kind, patch: *patch })
            }
        });
    }

    // first fully-connected layer: all-ones over each channel's positions
    let final_len = *lens.last().expect("arch has at least one stage");
    let flat = channels * final_len;
    let mut w_fc = vec![vec![0.0; flat]; channels];
    for (ch, row) in w_fc.iter_mut().enumerate() {
        for q in 0..final_len {
            row[ch * final_len + q] = 1.0;
        }
    }
    let l_fc_layer = Layer { w: w_fc, b: vec![0.0; channels], kind: LayerKind::Relu };

    // gadget stack over the channel values g_(j,k) = piece_(j,k) + shift
    let piece_wires: Vec<Vec<usize>> = (0..dy)
        .map(|k| (0..n_groups).map(|j| k * n_groups + j).collect())
        .collect();
    let mut fc = vec![l_fc_layer];
    fc.extend(gadget_stack(channels, &piece_wires, &predictor.forms, shift)?);

    let l_fc = stages.len();
    let net = CnnNetwork { input_len: dx, stages, fc, l_fc };
    Ok((net, fits))
}
