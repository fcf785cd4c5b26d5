//! Max-over-min representation of continuous piecewise-linear predictors:
//! dominance tests, psi-set construction, evaluation and consistency checks.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::fit::{auxiliary_segment_1d, AffinePiece, GroupFit};
use crate::partition::{gap_interval, Partition, Polytope};
use crate::{Error, Result};

/// Ties count as dominating: `f_j >= f_i` is tested against `-DOM_TOL`.
pub const DOM_TOL: f64 = 1e-9;
/// Max-min evaluation must reproduce region pieces to this tolerance.
pub const CONSISTENCY_TOL: f64 = 1e-9;

/// A scalar affine function `x -> w . x + b`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScalarAffine {
    pub w: Vec<f64>,
    pub b: f64,
}

impl ScalarAffine {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.b
    }
}

/// One output component of a CPWL predictor in max-over-min form: pieces
/// (one per region, auxiliaries included) and per-region psi index sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaxMinForm {
    pub pieces: Vec<ScalarAffine>,
    pub psi_sets: Vec<Vec<usize>>,
    pub component: usize,
}

/// A CPWL predictor: the partition, the `dy x dx` affine piece of every
/// region, and one max-min form per output component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpwlPredictor {
    pub partition: Partition,
    pub forms: Vec<MaxMinForm>,
    pub pieces_by_region: Vec<AffinePiece>,
}

/// True iff `f_j >= f_i` at every vertex of `region` (affine functions
/// attain their extrema at vertices of bounded polytopes).
pub fn dominates(f_j: &ScalarAffine, f_i: &ScalarAffine, region: &Polytope) -> Result<bool> {
    if region.vertices.is_empty() {
        return Err(Error::Argument("dominance test requires explicit vertices".into()));
    }
    Ok(region
        .vertices
        .iter()
        .all(|v| f_j.eval(v) - f_i.eval(v) >= -DOM_TOL))
}

/// psi_sets[i] = { j : f_j >= f_i everywhere on region i }; always contains
/// `i` itself.
pub fn build_maxmin(
    pieces: &[ScalarAffine],
    partition: &Partition,
    component: usize,
) -> Result<MaxMinForm> {
    if pieces.len() != partition.num_regions() {
        return Err(Error::Shape(format!(
            "{} pieces for {} regions",
            pieces.len(),
            partition.num_regions()
        )));
    }
    let mut psi_sets = Vec::with_capacity(pieces.len());
    for (i, region) in partition.regions.iter().enumerate() {
        let mut set = Vec::new();
        for (j, fj) in pieces.iter().enumerate() {
            if j == i || dominates(fj, &pieces[i], region)? {
                set.push(j);
            }
        }
        psi_sets.push(set);
    }
    Ok(MaxMinForm { pieces: pieces.to_vec(), psi_sets, component })
}

/// `max_i min_{j in psi_sets[i]} f_j(x)`.
pub fn eval_maxmin(form: &MaxMinForm, x: &[f64]) -> f64 {
    form.psi_sets
        .iter()
        .map(|set| {
            set.iter()
                .map(|&j| form.pieces[j].eval(x))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One sample/component pair where the max-min form disagrees with the
/// assigned region's piece.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyViolation {
    pub sample: usize,
    pub component: usize,
    pub maxmin_value: f64,
    pub piece_value: f64,
}

impl CpwlPredictor {
    /// Builds the predictor directly from one affine piece per region (no
    /// auxiliary synthesis). Used for user-supplied multi-d partitions; the
    /// caller is expected to run [`check_consistency`] afterwards.
    pub fn from_region_pieces(
        partition: Partition,
        pieces_by_region: Vec<AffinePiece>,
    ) -> Result<Self> {
        if pieces_by_region.len() != partition.num_regions() {
            return Err(Error::Shape(format!(
                "{} pieces for {} regions",
                pieces_by_region.len(),
                partition.num_regions()
            )));
        }
        let dy = pieces_by_region
            .first()
            .map(AffinePiece::dy)
            .ok_or_else(|| Error::Argument("predictor needs at least one region".into()))?;
        let mut forms = Vec::with_capacity(dy);
        for k in 0..dy {
            let scalars: Vec<ScalarAffine> = pieces_by_region
                .iter()
                .map(|p| {
                    let (w, b) = p.component(k);
                    ScalarAffine { w: w.to_vec(), b }
                })
                .collect();
            forms.push(build_maxmin(&scalars, &partition, k)?);
        }
        Ok(CpwlPredictor { partition, forms, pieces_by_region })
    }

    /// Assembles a continuous 1-D predictor from per-group fits: adjacent
    /// pieces meeting inside their sample gap share a boundary there, all
    /// other gaps receive an auxiliary connector piece.
    pub fn assemble_1d(dataset: &Dataset, partition: &Partition, fits: &[GroupFit]) -> Result<Self> {
        if dataset.dx() != 1 {
            return Err(Error::Argument("assemble_1d requires dx = 1".into()));
        }
        let bearing = partition.sample_bearing_regions();
        if bearing.is_empty() {
            return Err(Error::Argument("partition has no sample-bearing regions".into()));
        }
        let fit_for = |region: usize| -> Result<&GroupFit> {
            fits.iter()
                .find(|f| f.region_idx == region)
                .ok_or_else(|| Error::Argument(format!("no fit supplied for region {region}")))
        };
        // regions must come sorted left to right
        for w in bearing.windows(2) {
            let (_, hi) = partition.regions[w[0]].interval_bounds()?;
            let (lo, _) = partition.regions[w[1]].interval_bounds()?;
            if hi > lo + 1e-12 {
                return Err(Error::Argument("1-D regions must be ordered left to right".into()));
            }
        }

        let (dom_lo, dom_hi) = partition.domain.interval_bounds()?;
        let mut edges = vec![dom_lo];
        let mut pieces: Vec<AffinePiece> = vec![fit_for(bearing[0])?.piece.clone()];
        let mut auxiliary = vec![false];
        let mut group_region: Vec<usize> = vec![0];

        for pair in bearing.windows(2) {
            let left = fit_for(pair[0])?;
            let right = fit_for(pair[1])?;
            let gap = gap_interval(partition, dataset, pair[0], pair[1])?;
            let (aux_piece, bounds) = auxiliary_segment_1d(left, right, gap)?;
            match aux_piece {
                None => {
                    edges.push(bounds[0]);
                }
                Some(aux) => {
                    edges.push(bounds[0]);
                    edges.push(bounds[1]);
                    pieces.push(aux);
                    auxiliary.push(true);
                }
            }
            pieces.push(right.piece.clone());
            auxiliary.push(false);
            group_region.push(pieces.len() - 1);
        }
        edges.push(dom_hi);

        let regions: Vec<Polytope> = edges
            .windows(2)
            .map(|w| Polytope::interval(w[0], w[1]))
            .collect::<Result<_>>()?;
        let mut assignment = vec![usize::MAX; dataset.len()];
        for (gi, &old_region) in bearing.iter().enumerate() {
            for sample in partition.group(old_region) {
                assignment[sample] = group_region[gi];
            }
        }
        if assignment.iter().any(|&r| r == usize::MAX) {
            return Err(Error::Validation("a sample lost its group during assembly".into()));
        }
        let new_partition = Partition {
            regions,
            assignment,
            domain: partition.domain.clone(),
            auxiliary,
        };
        Self::from_region_pieces(new_partition, pieces)
    }

    pub fn dy(&self) -> usize {
        self.forms.len()
    }

    pub fn dx(&self) -> usize {
        self.partition.domain.dim
    }

    /// Max-min evaluation of every output component.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.forms.iter().map(|f| eval_maxmin(f, x)).collect()
    }

    /// Index of a region containing `x`, if any.
    pub fn region_of(&self, x: &[f64]) -> Option<usize> {
        self.partition
            .regions
            .iter()
            .position(|r| r.contains(x, crate::partition::VERTEX_TOL))
    }

    /// Value of the region piece at `x` for points inside region `r`.
    pub fn piece_value(&self, r: usize, x: &[f64]) -> Vec<f64> {
        self.pieces_by_region[r].eval(x)
    }
}

/// Verifies that max-min evaluation reproduces every sample's assigned
/// region piece. Returns the verdict together with the violation list.
pub fn check_consistency(
    predictor: &CpwlPredictor,
    dataset: &Dataset,
) -> (bool, Vec<ConsistencyViolation>) {
    let mut violations = Vec::new();
    for (i, s) in dataset.samples().iter().enumerate() {
        let region = predictor.partition.assignment[i];
        let piece = predictor.piece_value(region, &s.x);
        for (k, form) in predictor.forms.iter().enumerate() {
            let mm = eval_maxmin(form, &s.x);
            if (mm - piece[k]).abs() > CONSISTENCY_TOL {
                violations.push(ConsistencyViolation {
                    sample: i,
                    component: k,
                    maxmin_value: mm,
                    piece_value: piece[k],
                });
            }
        }
    }
    (violations.is_empty(), violations)
}

/// Grid variant of [`check_consistency`]: compares max-min evaluation with
/// the containing region's piece at arbitrary probe points.
pub fn consistency_on_points(predictor: &CpwlPredictor, points: &[Vec<f64>]) -> (bool, usize) {
    let mut failures = 0;
    for x in points {
        if let Some(r) = predictor.region_of(x) {
            let piece = predictor.piece_value(r, x);
            for (k, form) in predictor.forms.iter().enumerate() {
                if (eval_maxmin(form, x) - piece[k]).abs() > CONSISTENCY_TOL {
                    failures += 1;
                }
            }
        }
    }
    (failures == 0, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_parabola, Dataset, Sample};
    use crate::fit::fit_group_mse;
    use crate::partition::partition_1d;

    /// The three-piece instance used throughout: f1 = x + 1 on [-3, 0],
    /// f2 = -x + 1 on [0, 2], f3 = 3x - 7 on [2, 4].
    fn three_piece_instance() -> (Vec<ScalarAffine>, Partition) {
        let pieces = vec![
            ScalarAffine { w: vec![1.0], b: 1.0 },
            ScalarAffine { w: vec![-1.0], b: 1.0 },
            ScalarAffine { w: vec![3.0], b: -7.0 },
        ];
        let regions = vec![
            Polytope::interval(-3.0, 0.0).unwrap(),
            Polytope::interval(0.0, 2.0).unwrap(),
            Polytope::interval(2.0, 4.0).unwrap(),
        ];
        let domain = Polytope::interval(-3.0, 4.0).unwrap();
        let partition = Partition {
            regions,
            assignment: vec![],
            domain,
            auxiliary: vec![false; 3],
        };
        (pieces, partition)
    }

    #[test]
    fn dominance_by_vertex_evaluation() {
        let region = Polytope::interval(0.0, 1.0).unwrap();
        let fj = ScalarAffine { w: vec![-1.0], b: 2.0 };
        let fi = ScalarAffine { w: vec![1.0], b: 0.0 };
        assert!(dominates(&fj, &fi, &region).unwrap());
        assert!(!dominates(&fi, &fj, &region).unwrap());
    }

    #[test]
    fn dominance_three_piece_sign_check() {
        // f3 - f1 = 2x - 8 < 0 on [-3, 0] at both endpoints
        let (pieces, partition) = three_piece_instance();
        assert!(!dominates(&pieces[2], &pieces[0], &partition.regions[0]).unwrap());
    }

    #[test]
    fn psi_sets_of_three_piece_instance() {
        let (pieces, partition) = three_piece_instance();
        let form = build_maxmin(&pieces, &partition, 0).unwrap();
        assert_eq!(form.psi_sets[0], vec![0, 1]);
        assert_eq!(form.psi_sets[1], vec![0, 1]);
        assert_eq!(form.psi_sets[2], vec![0, 2]);
    }

    #[test]
    fn psi_set_single_region() {
        let pieces = vec![ScalarAffine { w: vec![2.0], b: -1.0 }];
        let partition = Partition {
            regions: vec![Polytope::interval(0.0, 1.0).unwrap()],
            assignment: vec![],
            domain: Polytope::interval(0.0, 1.0).unwrap(),
            auxiliary: vec![false],
        };
        let form = build_maxmin(&pieces, &partition, 0).unwrap();
        assert_eq!(form.psi_sets, vec![vec![0]]);
        assert_eq!(eval_maxmin(&form, &[0.3]), pieces[0].eval(&[0.3]));
    }

    #[test]
    fn identical_pieces_dominate_mutually() {
        let f = ScalarAffine { w: vec![1.0], b: 0.0 };
        let partition = Partition {
            regions: vec![
                Polytope::interval(0.0, 1.0).unwrap(),
                Polytope::interval(1.0, 2.0).unwrap(),
            ],
            assignment: vec![],
            domain: Polytope::interval(0.0, 2.0).unwrap(),
            auxiliary: vec![false; 2],
        };
        let form = build_maxmin(&[f.clone(), f], &partition, 0).unwrap();
        assert_eq!(form.psi_sets[0], vec![0, 1]);
        assert_eq!(form.psi_sets[1], vec![0, 1]);
    }

    #[test]
    fn eval_matches_pointwise_arithmetic() {
        let (pieces, partition) = three_piece_instance();
        let form = build_maxmin(&pieces, &partition, 0).unwrap();
        // x = -1: max(min(0, 2), min(0, -10)) = 0 = f1(-1)
        assert_eq!(eval_maxmin(&form, &[-1.0]), 0.0);
        // x = 3: max(min(4, -2), min(4, 2)) = 2 = f3(3)
        assert_eq!(eval_maxmin(&form, &[3.0]), 2.0);
    }

    #[test]
    fn eval_reproduces_region_pieces_on_grid() {
        let (pieces, partition) = three_piece_instance();
        let form = build_maxmin(&pieces, &partition, 0).unwrap();
        for step in 0..=1000 {
            let x = -3.0 + 7.0 * step as f64 / 1000.0;
            let region = partition.regions.iter().position(|r| r.contains(&[x], 0.0));
            let expected = pieces[region.unwrap()].eval(&[x]);
            let got = eval_maxmin(&form, &[x]);
            assert!(
                (got - expected).abs() <= 1e-9,
                "x = {x}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn dominated_piece_never_changes_the_max() {
        let (mut pieces, mut partition) = three_piece_instance();
        let form = build_maxmin(&pieces, &partition, 0).unwrap();
        // append an everywhere-dominated copy of f1 shifted down by 1000 on
        // an extra auxiliary region
        pieces.push(ScalarAffine { w: vec![1.0], b: -999.0 });
        partition.regions.push(Polytope::interval(-3.0, 4.0).unwrap());
        partition.auxiliary.push(true);
        let bigger = build_maxmin(&pieces, &partition, 0).unwrap();
        for step in 0..=200 {
            let x = -3.0 + 7.0 * step as f64 / 200.0;
            assert!((eval_maxmin(&form, &[x]) - eval_maxmin(&bigger, &[x])).abs() <= 1e-12);
        }
    }

    #[test]
    fn assembled_parabola_predictor_is_consistent() {
        let ds = gen_parabola(40, -1.0, 1.0).unwrap();
        let partition = partition_1d(&ds, &[0.0]).unwrap();
        let fits = vec![
            fit_group_mse(&ds, &partition, 0).unwrap(),
            fit_group_mse(&ds, &partition, 1).unwrap(),
        ];
        let predictor = CpwlPredictor::assemble_1d(&ds, &partition, &fits).unwrap();
        let (ok, violations) = check_consistency(&predictor, &ds);
        assert!(ok, "violations: {violations:?}");

        // continuity on a fine grid: finite Lipschitz bound from the pieces
        let lip = predictor
            .pieces_by_region
            .iter()
            .map(|p| p.a[0][0].abs())
            .fold(0.0, f64::max);
        let (lo, hi) = predictor.partition.domain.interval_bounds().unwrap();
        let h = (hi - lo) / 2000.0;
        let mut prev = predictor.eval(&[lo])[0];
        for step in 1..=2000 {
            let x = lo + h * step as f64;
            let value = predictor.eval(&[x])[0];
            assert!(
                (value - prev).abs() <= lip * h + 1e-9,
                "jump at x = {x}"
            );
            prev = value;
        }
    }

    #[test]
    fn discontinuous_pieces_without_connector_fail_consistency() {
        // y = x and y = x - 10 on adjacent regions cannot agree: the max-min
        // form overrides one side.
        let ds = Dataset::new(
            vec![
                Sample { x: vec![0.25], y: vec![0.25] },
                Sample { x: vec![0.75], y: vec![-9.25] },
            ],
            1,
            1,
        )
        .unwrap();
        let partition = partition_1d(&ds, &[0.5]).unwrap();
        let pieces = vec![
            AffinePiece::new(vec![vec![1.0]], vec![0.0]).unwrap(),
            AffinePiece::new(vec![vec![1.0]], vec![-10.0]).unwrap(),
        ];
        let predictor = CpwlPredictor::from_region_pieces(partition, pieces).unwrap();
        let (ok, violations) = check_consistency(&predictor, &ds);
        assert!(!ok);
        assert!(!violations.is_empty());
    }

    #[test]
    fn single_region_predictor_is_consistent() {
        let ds = gen_parabola(5, -1.0, 1.0).unwrap();
        let partition = partition_1d(&ds, &[]).unwrap();
        let fits = vec![fit_group_mse(&ds, &partition, 0).unwrap()];
        let predictor = CpwlPredictor::assemble_1d(&ds, &partition, &fits).unwrap();
        let (ok, _) = check_consistency(&predictor, &ds);
        assert!(ok);
    }

    #[test]
    fn assembly_preserves_group_predictions() {
        // auxiliary pieces must not change any sample's prediction
        let ds = gen_parabola(24, -1.0, 1.0).unwrap();
        let partition = partition_1d(&ds, &[-0.31, 0.29]).unwrap();
        let fits: Vec<_> = (0..3)
            .map(|r| fit_group_mse(&ds, &partition, r).unwrap())
            .collect();
        let predictor = CpwlPredictor::assemble_1d(&ds, &partition, &fits).unwrap();
        for (i, s) in ds.samples().iter().enumerate() {
            let old_region = partition.assignment[i];
            let expected = fits[old_region].piece.eval(&s.x);
            let got = predictor.eval(&s.x);
            for k in 0..ds.dy() {
                assert!(
                    (got[k] - expected[k]).abs() <= 1e-9,
                    "sample {i} moved from its fitted piece"
                );
            }
        }
    }

    #[test]
    fn grid_consistency_for_assembled_predictors() {
        let ds = gen_parabola(30, -1.0, 1.0).unwrap();
        for bounds in [vec![], vec![0.01], vec![-0.35, 0.33]] {
            let partition = partition_1d(&ds, &bounds).unwrap();
            let fits: Vec<_> = (0..partition.num_regions())
                .map(|r| fit_group_mse(&ds, &partition, r).unwrap())
                .collect();
            let predictor = CpwlPredictor::assemble_1d(&ds, &partition, &fits).unwrap();
            let (lo, hi) = predictor.partition.domain.interval_bounds().unwrap();
            let points: Vec<Vec<f64>> = (0..=1000)
                .map(|i| vec![lo + (hi - lo) * i as f64 / 1000.0])
                .collect();
            let (ok, failures) = consistency_on_points(&predictor, &points);
            assert!(ok, "{failures} grid failures for bounds {bounds:?}");
        }
    }
}
