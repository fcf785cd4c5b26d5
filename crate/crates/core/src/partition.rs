//! Disjoint convex polytopes covering the domain of interest, sample
//! assignment, gap queries and refinement splits.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::{Error, Result};

/// Tolerance for vertex-against-halfspace containment checks.
pub const VERTEX_TOL: f64 = 1e-9;
/// A boundary closer than this to a sample x-value is degenerate.
pub const BOUNDARY_SAMPLE_TOL: f64 = 1e-12;

/// One halfspace `normal . x <= offset`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// A bounded convex polytope in both H-representation (halfspaces) and
/// V-representation (explicit vertices). The vertex list is required: affine
/// dominance checks reduce to vertex evaluations only on bounded regions.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Polytope {
    pub halfspaces: Vec<Halfspace>,
    pub vertices: Vec<Vec<f64>>,
    pub dim: usize,
}

impl Polytope {
    pub fn new(halfspaces: Vec<Halfspace>, vertices: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::Validation(
                "polytope requires a nonempty vertex list (bounded regions only)".into(),
            ));
        }
        for h in &halfspaces {
            if h.normal.len() != dim {
                return Err(Error::Shape(format!(
                    "halfspace normal of length {}, expected {dim}",
                    h.normal.len()
                )));
            }
        }
        for v in &vertices {
            if v.len() != dim {
                return Err(Error::Shape(format!(
                    "vertex of length {}, expected {dim}",
                    v.len()
                )));
            }
        }
        let p = Polytope { halfspaces, vertices, dim };
        for v in &p.vertices {
            if !p.contains(v, VERTEX_TOL) {
                return Err(Error::Validation(format!(
                    "vertex {v:?} violates a halfspace by more than {VERTEX_TOL:e}"
                )));
            }
        }
        Ok(p)
    }

    /// Closed interval `[lo, hi]` as a 1-D polytope.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Argument(format!("empty interval [{lo}, {hi}]")));
        }
        Polytope::new(
            vec![
                Halfspace { normal: vec![1.0], offset: hi },
                Halfspace { normal: vec![-1.0], offset: -lo },
            ],
            vec![vec![lo], vec![hi]],
            1,
        )
    }

    /// Axis-aligned box with the given per-coordinate bounds.
    pub fn bbox(lows: &[f64], highs: &[f64]) -> Result<Self> {
        let dim = lows.len();
        if highs.len() != dim || dim == 0 {
            return Err(Error::Shape("bbox bounds must have equal nonzero length".into()));
        }
        let mut halfspaces = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            if !(lows[i] < highs[i]) {
                return Err(Error::Argument(format!(
                    "empty box extent in coordinate {i}"
                )));
            }
            let mut n = vec![0.0; dim];
            n[i] = 1.0;
            halfspaces.push(Halfspace { normal: n.clone(), offset: highs[i] });
            n[i] = -1.0;
            halfspaces.push(Halfspace { normal: n, offset: -lows[i] });
        }
        let mut vertices = Vec::with_capacity(1 << dim);
        for mask in 0u32..(1 << dim) {
            let v: Vec<f64> = (0..dim)
                .map(|i| if mask >> i & 1 == 1 { highs[i] } else { lows[i] })
                .collect();
            vertices.push(v);
        }
        Polytope::new(halfspaces, vertices, dim)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.halfspaces.iter().all(|h| {
            let dot: f64 = h.normal.iter().zip(x).map(|(a, b)| a * b).sum();
            dot <= h.offset + tol
        })
    }

    /// True when `x` satisfies every halfspace with slack strictly larger
    /// than `tol`.
    pub fn contains_strictly(&self, x: &[f64], tol: f64) -> bool {
        self.halfspaces.iter().all(|h| {
            let dot: f64 = h.normal.iter().zip(x).map(|(a, b)| a * b).sum();
            dot < h.offset - tol
        })
    }

    /// Interval bounds for 1-D regions.
    pub fn interval_bounds(&self) -> Result<(f64, f64)> {
        if self.dim != 1 {
            return Err(Error::Argument("interval_bounds requires dim = 1".into()));
        }
        let lo = self.vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
        let hi = self.vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
        Ok((lo, hi))
    }
}

/// Domain of interest: the bounding box of the samples inflated by 10% per
/// side (degenerate extents get an absolute margin instead).
pub fn domain_of(dataset: &Dataset) -> Result<Polytope> {
    let dx = dataset.dx();
    let mut lows = vec![f64::INFINITY; dx];
    let mut highs = vec![f64::NEG_INFINITY; dx];
    for s in dataset.samples() {
        for i in 0..dx {
            lows[i] = lows[i].min(s.x[i]);
            highs[i] = highs[i].max(s.x[i]);
        }
    }
    for i in 0..dx {
        let range = highs[i] - lows[i];
        let margin = if range > 0.0 { 0.1 * range } else { 1.0 };
        lows[i] -= margin;
        highs[i] += margin;
    }
    Polytope::bbox(&lows, &highs)
}

/// A disjoint cover of the domain of interest with a sample-to-region
/// assignment. Regions flagged auxiliary contain no samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Partition {
    pub regions: Vec<Polytope>,
    /// `assignment[i]` is the region index of sample `i`.
    pub assignment: Vec<usize>,
    pub domain: Polytope,
    pub auxiliary: Vec<bool>,
}

impl Partition {
    /// Number of regions (including auxiliary ones).
    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    /// Indices of the samples assigned to `region`.
    pub fn group(&self, region: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &r)| (r == region).then_some(i))
            .collect()
    }

    pub fn group_size(&self, region: usize) -> usize {
        self.assignment.iter().filter(|&&r| r == region).count()
    }

    /// Builds a partition from user-supplied regions by assigning each
    /// sample to the region containing it. Rejects samples lying strictly
    /// inside two regions or inside none.
    pub fn from_regions(
        regions: Vec<Polytope>,
        domain: Polytope,
        dataset: &Dataset,
    ) -> Result<Self> {
        let mut assignment = Vec::with_capacity(dataset.len());
        for (i, s) in dataset.samples().iter().enumerate() {
            let strict: Vec<usize> = regions
                .iter()
                .enumerate()
                .filter_map(|(r, p)| p.contains_strictly(&s.x, VERTEX_TOL).then_some(r))
                .collect();
            if strict.len() > 1 {
                return Err(Error::Validation(format!(
                    "sample {i} lies strictly inside regions {strict:?}"
                )));
            }
            let containing = strict.first().copied().or_else(|| {
                regions.iter().position(|p| p.contains(&s.x, VERTEX_TOL))
            });
            match containing {
                Some(r) => assignment.push(r),
                None => {
                    return Err(Error::Validation(format!(
                        "sample {i} is not contained in any region"
                    )))
                }
            }
        }
        let auxiliary: Vec<bool> = (0..regions.len())
            .map(|r| !assignment.contains(&r))
            .collect();
        Ok(Partition { regions, assignment, domain, auxiliary })
    }

    /// Region indices that carry at least one sample, in region order.
    pub fn sample_bearing_regions(&self) -> Vec<usize> {
        (0..self.regions.len())
            .filter(|&r| !self.auxiliary[r] && self.group_size(r) > 0)
            .collect()
    }
}

/// Splits a 1-D dataset at the given boundary positions. Regions are the
/// intervals `[lo, b1], [b1, b2], ..., [bk, hi]` over the domain of
/// interest; samples are assigned by interval membership.
pub fn partition_1d(dataset: &Dataset, boundaries: &[f64]) -> Result<Partition> {
    if dataset.dx() != 1 {
        return Err(Error::Argument("partition_1d requires dx = 1".into()));
    }
    for w in boundaries.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::Argument(format!(
                "boundaries must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    let domain = domain_of(dataset)?;
    let (lo, hi) = domain.interval_bounds()?;
    for &b in boundaries {
        if b <= lo || b >= hi {
            return Err(Error::Argument(format!(
                "boundary {b} lies outside the domain of interest [{lo}, {hi}]"
            )));
        }
        for (i, s) in dataset.samples().iter().enumerate() {
            if (s.x[0] - b).abs() <= BOUNDARY_SAMPLE_TOL {
                return Err(Error::DegenerateBoundary(format!(
                    "boundary {b} coincides with sample {i} (x = {})",
                    s.x[0]
                )));
            }
        }
    }

    let mut edges = Vec::with_capacity(boundaries.len() + 2);
    edges.push(lo);
    edges.extend_from_slice(boundaries);
    edges.push(hi);
    let regions: Vec<Polytope> = edges
        .windows(2)
        .map(|w| Polytope::interval(w[0], w[1]))
        .collect::<Result<_>>()?;

    let mut assignment = Vec::with_capacity(dataset.len());
    for s in dataset.samples() {
        let x = s.x[0];
        // Boundaries never coincide with samples, so strict comparison below
        // picks a unique interval.
        let r = boundaries.iter().filter(|&&b| b < x).count();
        assignment.push(r);
    }
    let auxiliary: Vec<bool> = (0..regions.len())
        .map(|r| !assignment.contains(&r))
        .collect();
    Ok(Partition { regions, assignment, domain, auxiliary })
}

/// Enumerates all `C(M-1, p-1)` contiguous splits of the `M` sorted distinct
/// x-values into `p` nonempty groups, with boundaries placed at midpoints
/// between adjacent distinct values.
pub fn contiguous_partitions_1d<'a>(
    dataset: &'a Dataset,
    p: usize,
) -> Result<impl Iterator<Item = Partition> + 'a> {
    let midpoints = distinct_midpoints_1d(dataset)?;
    let m = midpoints.len() + 1; // number of distinct x-values
    if p < 1 || p > m {
        return Err(Error::Argument(format!(
            "cannot split {m} distinct x-values into {p} contiguous groups"
        )));
    }
    let combos = Combinations::new(midpoints.len(), p - 1);
    Ok(combos.map(move |picks| {
        let bounds: Vec<f64> = picks.iter().map(|&i| midpoints[i]).collect();
        partition_1d(dataset, &bounds).expect("midpoint boundaries are valid by construction")
    }))
}

/// Midpoints between adjacent distinct sorted x-values of a 1-D dataset.
pub fn distinct_midpoints_1d(dataset: &Dataset) -> Result<Vec<f64>> {
    let order = dataset.sorted_indices_1d()?;
    let mut distinct: Vec<f64> = Vec::new();
    for &i in &order {
        let x = dataset.sample(i).x[0];
        if distinct.last().map_or(true, |&last| x > last) {
            distinct.push(x);
        }
    }
    Ok(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect())
}

/// Lexicographic k-combinations of `0..n`.
pub(crate) struct Combinations {
    n: usize,
    k: usize,
    state: Option<Vec<usize>>,
}

impl Combinations {
    pub(crate) fn new(n: usize, k: usize) -> Self {
        let state = (k <= n).then(|| (0..k).collect());
        Combinations { n, k, state }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.state.as_ref()?.clone();
        // advance
        let state = self.state.as_mut().unwrap();
        let mut i = self.k;
        loop {
            if i == 0 {
                self.state = None;
                break;
            }
            i -= 1;
            if state[i] + 1 <= self.n - (self.k - i) {
                state[i] += 1;
                for j in i + 1..self.k {
                    state[j] = state[j - 1] + 1;
                }
                break;
            }
        }
        Some(current)
    }
}

/// Open interval between the largest sample of the left group and the
/// smallest sample of the right group.
pub fn gap_interval(
    partition: &Partition,
    dataset: &Dataset,
    left_region: usize,
    right_region: usize,
) -> Result<(f64, f64)> {
    if dataset.dx() != 1 {
        return Err(Error::Argument("gap_interval requires dx = 1".into()));
    }
    let bearing = partition.sample_bearing_regions();
    let li = bearing.iter().position(|&r| r == left_region);
    let ri = bearing.iter().position(|&r| r == right_region);
    match (li, ri) {
        (Some(li), Some(ri)) if ri == li + 1 => {}
        _ => {
            return Err(Error::Argument(format!(
                "regions {left_region} and {right_region} are not adjacent sample-bearing groups"
            )))
        }
    }
    let left_max = partition
        .group(left_region)
        .iter()
        .map(|&i| dataset.sample(i).x[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let right_min = partition
        .group(right_region)
        .iter()
        .map(|&i| dataset.sample(i).x[0])
        .fold(f64::INFINITY, f64::min);
    if !(left_max < right_min) {
        return Err(Error::Argument(format!(
            "no open gap between groups: left max {left_max} >= right min {right_min}"
        )));
    }
    Ok((left_max, right_min))
}

/// Splits region `region_idx` so that sample `sample_idx` becomes the only
/// sample of one subregion (1-D: midpoint cuts towards its nearest in-group
/// neighbors). All other regions and assignments are preserved.
pub fn refine_isolate(
    partition: &Partition,
    dataset: &Dataset,
    region_idx: usize,
    sample_idx: usize,
) -> Result<Partition> {
    if dataset.dx() != 1 {
        return Err(Error::Unsupported(
            "refine_isolate is implemented for dx = 1 only".into(),
        ));
    }
    if partition.assignment.get(sample_idx) != Some(&region_idx) {
        return Err(Error::Argument(format!(
            "sample {sample_idx} is not assigned to region {region_idx}"
        )));
    }
    let group = partition.group(region_idx);
    if group.len() < 2 {
        return Err(Error::CannotRefine(format!(
            "region {region_idx} holds a single sample"
        )));
    }
    let xn = dataset.sample(sample_idx).x[0];
    if group
        .iter()
        .any(|&i| i != sample_idx && (dataset.sample(i).x[0] - xn).abs() <= BOUNDARY_SAMPLE_TOL)
    {
        return Err(Error::CannotRefine(format!(
            "sample {sample_idx} shares its x-value with another sample in the group"
        )));
    }
    let left_neighbor = group
        .iter()
        .map(|&i| dataset.sample(i).x[0])
        .filter(|&x| x < xn)
        .fold(f64::NEG_INFINITY, f64::max);
    let right_neighbor = group
        .iter()
        .map(|&i| dataset.sample(i).x[0])
        .filter(|&x| x > xn)
        .fold(f64::INFINITY, f64::min);
    let (lo, hi) = partition.regions[region_idx].interval_bounds()?;
    let mut cuts = Vec::new();
    if left_neighbor.is_finite() {
        cuts.push(0.5 * (left_neighbor + xn));
    }
    if right_neighbor.is_finite() {
        cuts.push(0.5 * (xn + right_neighbor));
    }

    let mut edges = vec![lo];
    edges.extend_from_slice(&cuts);
    edges.push(hi);
    let subregions: Vec<Polytope> = edges
        .windows(2)
        .map(|w| Polytope::interval(w[0], w[1]))
        .collect::<Result<_>>()?;
    let added = subregions.len() - 1;

    let mut regions = Vec::with_capacity(partition.regions.len() + added);
    regions.extend_from_slice(&partition.regions[..region_idx]);
    regions.extend(subregions);
    regions.extend_from_slice(&partition.regions[region_idx + 1..]);

    let assignment: Vec<usize> = partition
        .assignment
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if r < region_idx {
                r
            } else if r > region_idx {
                r + added
            } else {
                let x = dataset.sample(i).x[0];
                region_idx + cuts.iter().filter(|&&c| c < x).count()
            }
        })
        .collect();
    let auxiliary: Vec<bool> = (0..regions.len())
        .map(|r| !assignment.contains(&r))
        .collect();
    Ok(Partition {
        regions,
        assignment,
        domain: partition.domain.clone(),
        auxiliary,
    })
}
