//! End-to-end wiring of the stages: partition, fit, assemble, build.

use crate::build::{build_fc_network, BuildConfig};
use crate::cpwl::{check_consistency, CpwlPredictor};
use crate::data::{Dataset, Loss};
use crate::fit::{fit_group_generic, fit_group_mse, GroupFit};
use crate::partition::{partition_1d, Partition};
use crate::runtime::Network;
use crate::{Error, Result};

/// Iterations and initial step used when fitting generic losses.
pub const GENERIC_FIT_ITERS: usize = 200;
pub const GENERIC_FIT_STEP: f64 = 0.1;

/// Everything the certification stage needs: the sample-level partition,
/// the per-group fits on it, the assembled predictor and the built network.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub partition: Partition,
    pub fits: Vec<GroupFit>,
    pub predictor: CpwlPredictor,
    pub network: Network,
}

impl PipelineState {
    pub fn hidden_widths(&self) -> Vec<usize> {
        match &self.network {
            Network::Fc(fc) => fc.hidden_widths(),
            Network::Cnn(cnn) => cnn
                .fc
                .iter()
                .filter(|l| l.kind == crate::build::LayerKind::Relu)
                .map(crate::build::Layer::rows)
                .collect(),
        }
    }
}

pub(crate) fn fit_all_groups(
    dataset: &Dataset,
    partition: &Partition,
    loss: &Loss,
) -> Result<Vec<GroupFit>> {
    partition
        .sample_bearing_regions()
        .into_iter()
        .map(|r| {
            if loss.is_mse() {
                fit_group_mse(dataset, partition, r)
            } else {
                fit_group_generic(dataset, partition, r, loss, GENERIC_FIT_ITERS, GENERIC_FIT_STEP)
            }
        })
        .collect()
}

/// Runs partition -> fit -> assemble -> build for a 1-D dataset.
pub fn build_1d_state(
    dataset: &Dataset,
    boundaries: &[f64],
    loss: &Loss,
    config: &BuildConfig,
) -> Result<PipelineState> {
    let partition = partition_1d(dataset, boundaries)?;
    let fits = fit_all_groups(dataset, &partition, loss)?;
    assemble_and_build(dataset, partition, fits, config)
}

/// Fits and builds on an already-constructed partition (e.g. user-supplied
/// multi-d regions).
pub fn build_state_on_partition(
    dataset: &Dataset,
    partition: Partition,
    loss: &Loss,
    config: &BuildConfig,
) -> Result<PipelineState> {
    let fits = fit_all_groups(dataset, &partition, loss)?;
    assemble_and_build(dataset, partition, fits, config)
}

/// Assembles fits on an existing partition into a predictor and network.
/// Used both by the initial build and by refinement.
pub fn rebuild_with_fits(
    dataset: &Dataset,
    partition: Partition,
    fits: Vec<GroupFit>,
) -> Result<PipelineState> {
    assemble_and_build(dataset, partition, fits, &BuildConfig::default())
}

fn assemble_and_build(
    dataset: &Dataset,
    partition: Partition,
    fits: Vec<GroupFit>,
    config: &BuildConfig,
) -> Result<PipelineState> {
    let predictor = if dataset.dx() == 1 {
        CpwlPredictor::assemble_1d(dataset, &partition, &fits)?
    } else {
        // no auxiliary synthesis beyond one dimension: regions are used
        // as supplied and consistency is checked below
        let bearing = partition.sample_bearing_regions();
        let sub = Partition {
            regions: bearing.iter().map(|&r| partition.regions[r].clone()).collect(),
            assignment: partition
                .assignment
                .iter()
                .map(|r| {
                    bearing
                        .iter()
                        .position(|g| g == r)
                        .expect("samples live in sample-bearing regions")
                })
                .collect(),
            domain: partition.domain.clone(),
            auxiliary: vec![false; bearing.len()],
        };
        let pieces = bearing
            .iter()
            .map(|&r| {
                fits.iter()
                    .find(|f| f.region_idx == r)
                    .map(|f| f.piece.clone())
                    .ok_or_else(|| Error::Argument(format!("no fit for region {r}")))
            })
            .collect::<Result<Vec<_>>>()?;
        CpwlPredictor::from_region_pieces(sub, pieces)?
    };
    let (consistent, violations) = check_consistency(&predictor, dataset);
    if !consistent {
        return Err(Error::Consistency(format!(
            "assembled predictor disagrees with its pieces at {} sample/component pairs",
            violations.len()
        )));
    }
    let network = Network::Fc(build_fc_network(&predictor, config)?);
    Ok(PipelineState { partition, fits, predictor, network })
}

/// Contiguous even-count split of a 1-D dataset into `groups` groups:
/// boundaries at midpoints between adjacent distinct x-values, chosen so
/// group sizes differ by at most one.
pub fn even_count_boundaries(dataset: &Dataset, groups: usize) -> Result<Vec<f64>> {
    if groups < 1 {
        return Err(Error::Argument("need at least one group".into()));
    }
    let order = dataset.sorted_indices_1d()?;
    let mut distinct: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for &i in &order {
        let x = dataset.sample(i).x[0];
        if distinct.last().map_or(true, |&last| x > last) {
            distinct.push(x);
            counts.push(1);
        } else {
            *counts.last_mut().expect("nonempty") += 1;
        }
    }
    if groups > distinct.len() {
        return Err(Error::Argument(format!(
            "cannot form {groups} groups from {} distinct x-values",
            distinct.len()
        )));
    }
    let n = order.len();
    let mut boundaries = Vec::with_capacity(groups - 1);
    let mut seen = 0usize;
    let mut next_group = 1usize;
    for (v, &count) in counts.iter().enumerate() {
        seen += count;
        if next_group == groups {
            break;
        }
        // target cumulative count for the end of group `next_group`
        let target = (n * next_group).div_ceil(groups);
        if seen >= target && v + 1 < distinct.len() {
            boundaries.push(0.5 * (distinct[v] + distinct[v + 1]));
            next_group += 1;
        }
    }
    Ok(boundaries)
}
