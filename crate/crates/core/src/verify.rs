//! Local-minimum certification by seeded perturbation probing, spuriousness
//! demonstration by partition refinement, and enumeration of 1-D fitting
//! patterns and their risk levels.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::build::{CnnStage, LayerKind};
use crate::data::{Dataset, Loss};
use crate::fit::{fit_group_generic, fit_group_mse, GroupFit};
use crate::partition::{distinct_midpoints_1d, refine_isolate, Combinations, Partition};
use crate::pipeline::{rebuild_with_fits, PipelineState};
use crate::runtime::{network_risk, parallel_map, Network, StepStat};
use crate::util::pairwise_sum;
use crate::{Error, Result};

/// Risk decreases below this are considered strict.
pub const STRICT_DECREASE_TOL: f64 = 1e-12;
/// A group risk above this counts as nonzero for spuriousness.
pub const ZERO_RISK_TOL: f64 = 1e-12;
/// Enumeration refuses above this many partitions.
pub const ENUMERATION_LIMIT: u64 = 100_000;

/// Probe parameters. `scales` multiply `epsilon` so the probe also samples
/// strictly smaller neighborhoods; trials are spread round-robin over the
/// scales.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub trials: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub scales: Vec<f64>,
}

impl ProbeConfig {
    pub fn new(trials: usize, epsilon: f64, seed: u64) -> Self {
        ProbeConfig { trials, epsilon, seed, scales: vec![1.0, 0.5, 0.25] }
    }
}

/// Aggregated probe result. Certification requires `min_delta >= -1e-12`
/// and zero activation-pattern changes across all trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub trials: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub scales: Vec<f64>,
    pub min_delta: f64,
    pub per_scale_min_delta: Vec<f64>,
    pub pattern_changes: usize,
    pub certified: bool,
}

/// Per-layer data entering the pattern-flip bound.
struct LayerView {
    /// Number of perturbable entries feeding one neuron (fan-in plus bias).
    fanin: usize,
    /// Largest absolute row sum: amplification of incoming value error.
    row_abs_sum: f64,
    relu: bool,
    perturbable: bool,
    weighted: bool,
}

fn fc_layer_view(layer: &crate::build::Layer, perturbable: bool) -> LayerView {
    LayerView {
        fanin: layer.cols() + 1,
        row_abs_sum: layer
            .w
            .iter()
            .map(|row| row.iter().map(|v| v.abs()).sum())
            .fold(0.0, f64::max),
        relu: layer.kind == LayerKind::Relu,
        perturbable,
        weighted: true,
    }
}

/// Hidden-processing layer views in evaluation order; the linear output
/// layer is excluded (it cannot flip any pattern).
fn layer_views(net: &Network) -> Vec<LayerView> {
    match net {
        Network::Fc(fc) => fc
            .layers
            .iter()
            .take(fc.layers.len().saturating_sub(1))
            .map(|l| fc_layer_view(l, true))
            .collect(),
        Network::Cnn(cnn) => {
            let mut views = Vec::new();
            for (i, stage) in cnn.stages.iter().enumerate() {
                match stage {
                    CnnStage::Conv(conv) => views.push(LayerView {
                        fanin: conv.patch.size + 1,
                        row_abs_sum: conv
                            .filters
                            .iter()
                            .map(|f| f.iter().map(|v| v.abs()).sum())
                            .fold(0.0, f64::max),
                        relu: true,
                        // only the first convolutional layer is optimized /
                        // perturbed; interior all-ones layers stay fixed
                        perturbable: i == 0,
                        weighted: true,
                    }),
                    CnnStage::Pool(_) => views.push(LayerView {
                        fanin: 0,
                        row_abs_sum: 1.0,
                        relu: false,
                        perturbable: false,
                        weighted: false,
                    }),
                }
            }
            for (i, layer) in cnn.fc.iter().take(cnn.fc.len().saturating_sub(1)).enumerate() {
                // the first fully-connected layer is the fixed all-ones
                // read-out; gadget layers above it are perturbable
                views.push(fc_layer_view(layer, i != 0));
            }
            views
        }
    }
}

/// Instrumented forward over all samples: per-step worst-case input
/// magnitude and margin, plus the sample attaining the overall minimum.
fn aggregate_steps(net: &Network, dataset: &Dataset) -> Result<(Vec<StepStat>, f64, usize)> {
    let per_sample: Vec<Result<Vec<StepStat>>> = parallel_map(dataset.len(), |i| {
        let x = &dataset.sample(i).x;
        Ok(match net {
            Network::Fc(fc) => crate::runtime::forward_fc_instrumented(fc, x)?.1,
            Network::Cnn(cnn) => crate::runtime::forward_cnn_instrumented(cnn, x)?.1,
        })
    });
    let mut agg: Vec<StepStat> = Vec::new();
    let mut min_margin = f64::INFINITY;
    let mut min_sample = 0;
    for (i, steps) in per_sample.into_iter().enumerate() {
        let steps = steps?;
        if agg.is_empty() {
            agg = steps.clone();
        } else {
            for (a, s) in agg.iter_mut().zip(&steps) {
                a.input_maxabs = a.input_maxabs.max(s.input_maxabs);
                a.margin = a.margin.min(s.margin);
            }
        }
        let sample_margin = steps.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min);
        if sample_margin < min_margin {
            min_margin = sample_margin;
            min_sample = i;
        }
    }
    Ok((agg, min_margin, min_sample))
}

/// Worst-case pre-activation error after each step for entrywise weight
/// perturbations bounded by `eps`, by the recurrence
/// `e_l = [perturbable] * eps * fanin * M_(l-1) + (rowsum + [perturbable] * eps * fanin) * e_(l-1)`.
/// Returns the margin slack `min_l (margin_l - e_l)`.
fn flip_slack(views: &[LayerView], steps: &[StepStat], eps: f64) -> f64 {
    let mut err = 0.0f64;
    let mut slack = f64::INFINITY;
    for (view, step) in views.iter().zip(steps) {
        if view.weighted {
            let own = if view.perturbable {
                eps * view.fanin as f64 * step.input_maxabs
            } else {
                0.0
            };
            let amplify = view.row_abs_sum
                + if view.perturbable { eps * view.fanin as f64 } else { 0.0 };
            err = own + amplify * err;
        }
        // pooling: averages/maxima are non-expansive in sup norm
        if view.relu {
            slack = slack.min(step.margin - err);
        }
    }
    slack
}

/// Largest entrywise perturbation bound that provably keeps every sample's
/// activation pattern fixed, halved for safety. Errors out when a sample
/// sits exactly on an activation boundary.
pub fn derive_epsilon(net: &Network, dataset: &Dataset) -> Result<f64> {
    let views = layer_views(net);
    let (steps, min_margin, min_sample) = aggregate_steps(net, dataset)?;
    if views.len() != steps.len() {
        return Err(Error::Shape("instrumentation steps do not match layer views".into()));
    }
    if views.is_empty() {
        return Err(Error::Argument("network has no hidden layers to certify".into()));
    }
    if min_margin <= 0.0 {
        return Err(Error::ZeroMargin { sample: min_sample });
    }

    // grow then bisect: flip_slack is strictly decreasing in eps
    let mut hi = 1.0f64;
    let mut grow = 0;
    while flip_slack(&views, &steps, hi) > 0.0 && grow < 60 {
        hi *= 2.0;
        grow += 1;
    }
    let mut lo = 0.0f64;
    if flip_slack(&views, &steps, hi) > 0.0 {
        lo = hi; // margins survive even huge perturbations
    } else {
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if flip_slack(&views, &steps, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    if lo <= 0.0 {
        return Err(Error::ZeroMargin { sample: min_sample });
    }
    Ok(0.5 * lo)
}

/// Returns a copy of the network with every perturbable weight and bias
/// entry shifted by an i.i.d. uniform draw from `[-eps, eps]`.
fn perturbed_network(net: &Network, rng: &mut ChaCha8Rng, eps: f64) -> Network {
    let mut out = net.clone();
    let mut bump = |v: &mut f64| *v += rng.gen_range(-eps..=eps);
    match &mut out {
        Network::Fc(fc) => {
            for layer in &mut fc.layers {
                for row in &mut layer.w {
                    for v in row {
                        bump(v);
                    }
                }
                for v in &mut layer.b {
                    bump(v);
                }
            }
        }
        Network::Cnn(cnn) => {
            // first conv layer and the gadget/output layers above the fixed
            // all-ones read-out; interior all-ones layers stay exactly fixed
            if let Some(CnnStage::Conv(conv)) = cnn.stages.first_mut() {
                for f in &mut conv.filters {
                    for v in f {
                        bump(v);
                    }
                }
                for v in &mut conv.biases {
                    bump(v);
                }
            }
            for layer in cnn.fc.iter_mut().skip(1) {
                for row in &mut layer.w {
                    for v in row {
                        bump(v);
                    }
                }
                for v in &mut layer.b {
                    bump(v);
                }
            }
        }
    }
    out
}

/// Seeded perturbation probe: perturbs all perturbable layers entrywise,
/// re-evaluates risk and activation patterns, and records the worst risk
/// delta and every pattern change.
pub fn probe_local_min(
    net: &Network,
    dataset: &Dataset,
    loss: &Loss,
    cfg: &ProbeConfig,
) -> Result<ProbeOutcome> {
    if cfg.trials == 0 || cfg.scales.is_empty() {
        return Err(Error::Argument("probe needs at least one trial and one scale".into()));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::Argument("probe epsilon must be positive".into()));
    }
    let base = network_risk(net, dataset, loss)?;

    let results: Vec<Result<(f64, usize, usize)>> = parallel_map(cfg.trials, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(t as u64 + 1);
        let scale_idx = t % cfg.scales.len();
        let trial_net = perturbed_network(net, &mut rng, cfg.epsilon * cfg.scales[scale_idx]);
        let report = network_risk(&trial_net, dataset, loss)?;
        let changes = report
            .patterns
            .iter()
            .zip(&base.patterns)
            .filter(|(a, b)| a != b)
            .count();
        Ok((report.risk - base.risk, changes, scale_idx))
    });

    let mut min_delta = f64::INFINITY;
    let mut per_scale_min_delta = vec![f64::INFINITY; cfg.scales.len()];
    let mut pattern_changes = 0;
    for r in results {
        let (delta, changes, scale_idx) = r?;
        min_delta = min_delta.min(delta);
        per_scale_min_delta[scale_idx] = per_scale_min_delta[scale_idx].min(delta);
        pattern_changes += changes;
    }
    let certified = min_delta >= -STRICT_DECREASE_TOL && pattern_changes == 0;
    Ok(ProbeOutcome {
        trials: cfg.trials,
        epsilon: cfg.epsilon,
        seed: cfg.seed,
        scales: cfg.scales.clone(),
        min_delta,
        per_scale_min_delta,
        pattern_changes,
        certified,
    })
}

/// True when all samples assigned to one region share an identical
/// activation pattern. This is load-bearing for certification: with shared
/// patterns each group follows one perturbed affine predictor, so
/// per-group optimality applies.
pub fn pattern_constancy(
    patterns: &[crate::runtime::ActivationPattern],
    partition: &Partition,
) -> bool {
    let mut seen: Vec<Option<&crate::runtime::ActivationPattern>> =
        vec![None; partition.num_regions()];
    for (i, pattern) in patterns.iter().enumerate() {
        let region = partition.assignment[i];
        match seen[region] {
            None => seen[region] = Some(pattern),
            Some(reference) => {
                if reference != pattern {
                    return false;
                }
            }
        }
    }
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupRiskEntry {
    pub region: usize,
    pub n_samples: usize,
    pub group_risk: f64,
}

/// Result of the refinement step of [`demonstrate_spurious`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementReport {
    pub isolated_sample: usize,
    pub refined_region: usize,
    pub refined_risk: f64,
    pub decrease: f64,
    pub strict_decrease: bool,
    pub refined_epsilon: f64,
    pub refined_probe: ProbeOutcome,
    pub refined_pattern_constancy: bool,
    pub refined_hidden_widths: Vec<usize>,
}

/// Certification summary for one build, serialized as the report JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificationReport {
    pub loss: String,
    pub base_risk: f64,
    pub group_risks: Vec<GroupRiskEntry>,
    pub min_margin: f64,
    pub epsilon: f64,
    pub pattern_constancy: bool,
    pub hidden_widths: Vec<usize>,
    pub probe: ProbeOutcome,
    pub refinement: Option<RefinementReport>,
    pub is_local_min_certified: bool,
    pub is_spurious_demonstrated: bool,
    pub verdict: String,
}

/// Certifies the built network as an empirical local minimum and, when some
/// group carries nonzero risk, demonstrates spuriousness by isolating the
/// worst sample of the worst group, refitting, rebuilding and re-probing.
pub fn demonstrate_spurious(
    state: &PipelineState,
    dataset: &Dataset,
    loss: &Loss,
    trials: usize,
    seed: u64,
) -> Result<CertificationReport> {
    let base = network_risk(&state.network, dataset, loss)?;
    let constancy = pattern_constancy(&base.patterns, &state.predictor.partition);
    let epsilon = derive_epsilon(&state.network, dataset)?;
    let probe = probe_local_min(&state.network, dataset, loss, &ProbeConfig::new(trials, epsilon, seed))?;
    let is_local_min_certified = probe.certified && constancy;

    let group_risks: Vec<GroupRiskEntry> = state
        .fits
        .iter()
        .map(|f| GroupRiskEntry {
            region: f.region_idx,
            n_samples: f.n_samples,
            group_risk: f.group_risk,
        })
        .collect();

    let report_without_refinement = |verdict: String, probe: ProbeOutcome| CertificationReport {
        loss: loss.name().into(),
        base_risk: base.risk,
        group_risks: group_risks.clone(),
        min_margin: base.min_margin,
        epsilon,
        pattern_constancy: constancy,
        hidden_widths: state.hidden_widths(),
        probe,
        refinement: None,
        is_local_min_certified,
        is_spurious_demonstrated: false,
        verdict,
    };

    if state.fits.iter().all(|f| f.group_risk <= ZERO_RISK_TOL) {
        let verdict = format!("not spurious, global minimum (risk {})", base.risk);
        return Ok(report_without_refinement(verdict, probe));
    }

    if dataset.dx() != 1 {
        return Ok(report_without_refinement(
            "probe-only certification: refinement splits are implemented for dx = 1".into(),
            probe,
        ));
    }

    // worst refinable group, ties to the lowest region index
    let target = state
        .fits
        .iter()
        .filter(|f| f.group_risk > ZERO_RISK_TOL && f.n_samples >= 2)
        .max_by(|a, b| {
            a.group_risk
                .partial_cmp(&b.group_risk)
                .expect("risks are finite")
                .then(b.region_idx.cmp(&a.region_idx))
        });

    let Some(worst_fit) = target else {
        return Ok(report_without_refinement(
            "nonzero risk but every lossy group is a singleton; nothing to isolate".into(),
            probe,
        ));
    };

    // worst sample of the worst group, ties to the lowest sample index
    let region = worst_fit.region_idx;
    let members = state.partition.group(region);
    let sample = members
        .iter()
        .copied()
        .max_by(|&a, &b| {
            let la = loss.eval(&worst_fit.piece.eval(&dataset.sample(a).x), &dataset.sample(a).y);
            let lb = loss.eval(&worst_fit.piece.eval(&dataset.sample(b).x), &dataset.sample(b).y);
            la.partial_cmp(&lb).expect("losses are finite").then(b.cmp(&a))
        })
        .expect("worst group is nonempty");

    let refined_partition = refine_isolate(&state.partition, dataset, region, sample)?;
    let split_bounds = state.partition.regions[region].interval_bounds()?;
    let refined_fits =
        refit_groups(dataset, &refined_partition, &worst_fit.piece, split_bounds, loss)?;

    // refit monotonicity: each subgroup of the split region must do at
    // least as well as the parent piece did on it
    for fit in &refined_fits {
        let (lo, hi) = refined_partition.regions[fit.region_idx].interval_bounds()?;
        if lo >= split_bounds.0 - 1e-12 && hi <= split_bounds.1 + 1e-12 {
            let parent: Vec<f64> = refined_partition
                .group(fit.region_idx)
                .iter()
                .map(|&i| {
                    let s = dataset.sample(i);
                    loss.eval(&worst_fit.piece.eval(&s.x), &s.y)
                })
                .collect();
            let parent_risk = pairwise_sum(&parent);
            if fit.group_risk > parent_risk + 1e-9 {
                return Err(Error::Numerical(format!(
                    "subgroup refit regressed: {} > {parent_risk}",
                    fit.group_risk
                )));
            }
        }
    }

    let refined_state = rebuild_with_fits(dataset, refined_partition, refined_fits)?;
    let refined = network_risk(&refined_state.network, dataset, loss)?;
    let refined_constancy = pattern_constancy(&refined.patterns, &refined_state.predictor.partition);
    let refined_epsilon = derive_epsilon(&refined_state.network, dataset)?;
    let refined_probe = probe_local_min(
        &refined_state.network,
        dataset,
        loss,
        &ProbeConfig::new(trials, refined_epsilon, seed),
    )?;

    let decrease = base.risk - refined.risk;
    let strict = refined.risk < base.risk - STRICT_DECREASE_TOL;
    let is_spurious_demonstrated =
        strict && is_local_min_certified && refined_probe.certified && refined_constancy;
    let verdict = if is_spurious_demonstrated {
        format!(
            "spurious local minimum demonstrated: refinement lowers the risk by {decrease:e}"
        )
    } else if !is_local_min_certified {
        if probe.pattern_changes > 0 {
            "probe invalid: activation patterns flipped within epsilon".into()
        } else {
            "probe found a descent direction: construction invalid or loss lacks per-group \
             optimality"
                .into()
        }
    } else {
        "refinement did not strictly decrease the risk".into()
    };

    Ok(CertificationReport {
        loss: loss.name().into(),
        base_risk: base.risk,
        group_risks,
        min_margin: base.min_margin,
        epsilon,
        pattern_constancy: constancy,
        hidden_widths: state.hidden_widths(),
        probe,
        refinement: Some(RefinementReport {
            isolated_sample: sample,
            refined_region: region,
            refined_risk: refined.risk,
            decrease,
            strict_decrease: strict,
            refined_epsilon,
            refined_probe,
            refined_pattern_constancy: refined_constancy,
            refined_hidden_widths: refined_state.hidden_widths(),
        }),
        is_local_min_certified,
        is_spurious_demonstrated,
        verdict,
    })
}

/// Refits every sample-bearing region of `partition`. For generic losses,
/// subgroups of the split region keep the parent piece whenever descent
/// fails to beat it (least-squares refits cannot regress, descent can).
fn refit_groups(
    dataset: &Dataset,
    partition: &Partition,
    parent_piece: &crate::fit::AffinePiece,
    split_bounds: (f64, f64),
    loss: &Loss,
) -> Result<Vec<GroupFit>> {
    partition
        .sample_bearing_regions()
        .into_iter()
        .map(|r| {
            if loss.is_mse() {
                return fit_group_mse(dataset, partition, r);
            }
            let mut fit = fit_group_generic(dataset, partition, r, loss, 200, 0.1)?;
            let (lo, hi) = partition.regions[r].interval_bounds()?;
            if lo >= split_bounds.0 - 1e-12 && hi <= split_bounds.1 + 1e-12 {
                let parent: Vec<f64> = partition
                    .group(r)
                    .iter()
                    .map(|&i| {
                        let s = dataset.sample(i);
                        loss.eval(&parent_piece.eval(&s.x), &s.y)
                    })
                    .collect();
                let parent_risk = pairwise_sum(&parent);
                if fit.group_risk > parent_risk {
                    fit.piece = parent_piece.clone();
                    fit.group_risk = parent_risk;
                }
            }
            Ok(fit)
        })
        .collect()
}

/// One enumerated fitting pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnumRow {
    pub id: usize,
    pub p: usize,
    pub boundaries: Vec<f64>,
    pub risk: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnumTable {
    pub rows: Vec<EnumRow>,
    pub distinct_levels: usize,
}

impl EnumTable {
    /// `partition_id,boundaries,p,risk` with semicolon-joined boundaries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("partition_id,boundaries,p,risk\n");
        for row in &self.rows {
            let bounds: Vec<String> = row.boundaries.iter().map(f64::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.id,
                bounds.join(";"),
                row.p,
                row.risk
            ));
        }
        out
    }
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 0..k {
        result = result * (n - i) as u128 / (i + 1) as u128;
    }
    result
}

fn count_distinct(risks: &mut [f64]) -> usize {
    risks.sort_by(|a, b| a.partial_cmp(b).expect("risks are finite"));
    let mut count = 0;
    let mut prev = f64::NEG_INFINITY;
    for &r in risks.iter() {
        if r - prev > 1e-9 {
            count += 1;
            prev = r;
        }
    }
    count
}

/// Enumerates every contiguous partition with `P <= p_max` groups,
/// computing the optimal piecewise risk of each (auxiliary pieces carry no
/// samples and are excluded). Returns the table sorted by enumeration
/// order plus the count of risk levels differing by more than 1e-9.
pub fn enumerate_patterns_1d(dataset: &Dataset, p_max: usize, loss: &Loss) -> Result<EnumTable> {
    if dataset.dx() != 1 {
        return Err(Error::Argument("enumeration requires dx = 1".into()));
    }
    let midpoints = distinct_midpoints_1d(dataset)?;
    let m = midpoints.len() + 1;
    if p_max < 1 || p_max > m {
        return Err(Error::Argument(format!(
            "p_max = {p_max} with only {m} distinct x-values"
        )));
    }
    let total: u128 = (1..=p_max)
        .map(|p| binomial((m - 1) as u64, (p - 1) as u64))
        .sum();
    if total > ENUMERATION_LIMIT as u128 {
        return Err(Error::TooManyPartitions { estimate: total, limit: ENUMERATION_LIMIT });
    }

    // prefix statistics over samples sorted by x, split at distinct-value
    // boundaries
    let order = dataset.sorted_indices_1d()?;
    let n = order.len();
    let dy = dataset.dy();
    let xs: Vec<f64> = order.iter().map(|&i| dataset.sample(i).x[0]).collect();
    // cut_positions[g] = first sorted-sample index of distinct value g+1
    let mut cut_positions = Vec::with_capacity(m.saturating_sub(1));
    for i in 1..n {
        if xs[i] > xs[i - 1] {
            cut_positions.push(i);
        }
    }
    debug_assert_eq!(cut_positions.len(), m - 1);

    let mse = loss.is_mse();
    let mut px = vec![0.0; n + 1];
    let mut pxx = vec![0.0; n + 1];
    let mut py = vec![vec![0.0; n + 1]; dy];
    let mut pxy = vec![vec![0.0; n + 1]; dy];
    let mut pyy = vec![vec![0.0; n + 1]; dy];
    if mse {
        for i in 0..n {
            let x = xs[i];
            px[i + 1] = px[i] + x;
            pxx[i + 1] = pxx[i] + x * x;
            for k in 0..dy {
                let y = dataset.sample(order[i]).y[k];
                py[k][i + 1] = py[k][i] + y;
                pxy[k][i + 1] = pxy[k][i] + x * y;
                pyy[k][i + 1] = pyy[k][i] + y * y;
            }
        }
    }
    let range_rss = |a: usize, b: usize| -> f64 {
        let cnt = (b - a) as f64;
        let sx = px[b] - px[a];
        let sxx = pxx[b] - pxx[a];
        let mut total = 0.0;
        for k in 0..dy {
            let sy = py[k][b] - py[k][a];
            let sxy = pxy[k][b] - pxy[k][a];
            let syy = pyy[k][b] - pyy[k][a];
            let denom = cnt * sxx - sx * sx;
            let rss = if denom.abs() <= 1e-12 * (1.0 + cnt * sxx.abs()) {
                syy - sy * sy / cnt
            } else {
                let slope = (cnt * sxy - sx * sy) / denom;
                let intercept = (sy - slope * sx) / cnt;
                syy + slope * slope * sxx + cnt * intercept * intercept
                    - 2.0 * (slope * sxy + intercept * sy - slope * intercept * sx)
            };
            total += rss.max(0.0);
        }
        total
    };

    let mut rows = Vec::with_capacity(total as usize);
    for p in 1..=p_max {
        for picks in Combinations::new(m - 1, p - 1) {
            let boundaries: Vec<f64> = picks.iter().map(|&g| midpoints[g]).collect();
            let risk = if mse {
                let mut edges = vec![0usize];
                edges.extend(picks.iter().map(|&g| cut_positions[g]));
                edges.push(n);
                let per_group: Vec<f64> =
                    edges.windows(2).map(|w| range_rss(w[0], w[1])).collect();
                pairwise_sum(&per_group) / n as f64
            } else {
                let partition = crate::partition::partition_1d(dataset, &boundaries)?;
                let fits = partition
                    .sample_bearing_regions()
                    .into_iter()
                    .map(|r| fit_group_generic(dataset, &partition, r, loss, 200, 0.1))
                    .collect::<Result<Vec<_>>>()?;
                let per_group: Vec<f64> = fits.iter().map(|f| f.group_risk).collect();
                pairwise_sum(&per_group) / n as f64
            };
            rows.push(EnumRow { id: rows.len(), p, boundaries, risk });
        }
    }
    let mut risks: Vec<f64> = rows.iter().map(|r| r.risk).collect();
    let distinct_levels = count_distinct(&mut risks);
    Ok(EnumTable { rows, distinct_levels })
}
