//! Optimal affine predictors per sample group and 1-D auxiliary connector
//! segments.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Loss};
use crate::partition::Partition;
use crate::util::pairwise_sum;
use crate::{Error, Result};

/// Ridge term used when the normal equations are rank deficient.
const RIDGE: f64 = 1e-10;
/// Auxiliary segments anchor at 25% / 75% of the sample gap.
const GAP_ANCHOR: f64 = 0.25;

/// An affine map `x -> A x + b` with `A` of shape `dy x dx`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AffinePiece {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl AffinePiece {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "{} weight rows for {} biases",
                a.len(),
                b.len()
            )));
        }
        let piece = AffinePiece { a, b };
        if !piece.is_finite() {
            return Err(Error::Validation("affine piece has non-finite entries".into()));
        }
        Ok(piece)
    }

    pub fn dy(&self) -> usize {
        self.b.len()
    }

    pub fn dx(&self) -> usize {
        self.a.first().map_or(0, Vec::len)
    }

    pub fn is_finite(&self) -> bool {
        self.b.iter().all(|v| v.is_finite())
            && self.a.iter().flatten().all(|v| v.is_finite())
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    /// Weight row and bias of one output component.
    pub fn component(&self, k: usize) -> (&[f64], f64) {
        (&self.a[k], self.b[k])
    }
}

/// Result of fitting one region's samples. `group_risk` is the sum of
/// per-sample losses over the group (not divided by N).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupFit {
    pub region_idx: usize,
    pub piece: AffinePiece,
    pub group_risk: f64,
    pub n_samples: usize,
}

fn sum_loss(dataset: &Dataset, idx: &[usize], piece: &AffinePiece, loss: &Loss) -> f64 {
    let per: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let s = dataset.sample(i);
            loss.eval(&piece.eval(&s.x), &s.y)
        })
        .collect();
    pairwise_sum(&per)
}

/// Solves `min_theta |design * theta - targets|_F` via the normal equations
/// with a ridge fallback for rank-deficient designs. When both routes
/// produce finite solutions the one with the smaller residual is kept.
/// Returns theta as `cols(design)` rows of `cols(targets)` values.
pub(crate) fn solve_least_squares(
    design: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let n = design.len();
    if n == 0 || targets.len() != n {
        return Err(Error::Argument("design and target row counts must match".into()));
    }
    let cols = design[0].len();
    let dy = targets[0].len();
    let x = DMatrix::from_fn(n, cols, |r, c| design[r][c]);
    let y = DMatrix::from_fn(n, dy, |r, c| targets[r][c]);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;

    let plain = Cholesky::new(xtx.clone()).map(|ch| ch.solve(&xty));
    let mut ridged = xtx;
    for i in 0..cols {
        ridged[(i, i)] += RIDGE;
    }
    let ridge = Cholesky::new(ridged)
        .ok_or_else(|| Error::Numerical("ridge-regularized normal equations not SPD".into()))?
        .solve(&xty);

    let residual = |theta: &DMatrix<f64>| -> f64 {
        let mut total = 0.0;
        for r in 0..n {
            for k in 0..dy {
                let mut pred = 0.0;
                for c in 0..cols {
                    pred += design[r][c] * theta[(c, k)];
                }
                let e = pred - targets[r][k];
                total += e * e;
            }
        }
        total
    };
    let mut best: Option<(&DMatrix<f64>, f64)> = None;
    for theta in plain.iter().chain(std::iter::once(&ridge)) {
        if theta.iter().all(|v| v.is_finite()) {
            let res = residual(theta);
            if best.as_ref().map_or(true, |(_, r)| res < *r) {
                best = Some((theta, res));
            }
        }
    }
    let (theta, _) = best.ok_or_else(|| {
        Error::Numerical("least-squares solve produced no finite solution".into())
    })?;
    Ok((0..cols).map(|c| (0..dy).map(|k| theta[(c, k)]).collect()).collect())
}

/// Least-squares fit of `A x + b` to one group via the normal equations,
/// with a ridge fallback for rank-deficient groups (e.g. singletons).
pub fn fit_group_mse(dataset: &Dataset, partition: &Partition, region_idx: usize) -> Result<GroupFit> {
    let idx = partition.group(region_idx);
    if idx.is_empty() {
        return Err(Error::Argument(format!(
            "region {region_idx} holds no samples"
        )));
    }
    let dx = dataset.dx();
    let dy = dataset.dy();

    // augmented design matrix [x, 1]
    let design: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| {
            let mut row = dataset.sample(i).x.clone();
            row.push(1.0);
            row
        })
        .collect();
    let targets: Vec<Vec<f64>> = idx.iter().map(|&i| dataset.sample(i).y.clone()).collect();
    let theta = solve_least_squares(&design, &targets)?;

    let a: Vec<Vec<f64>> = (0..dy)
        .map(|k| (0..dx).map(|j| theta[j][k]).collect())
        .collect();
    let b: Vec<f64> = (0..dy).map(|k| theta[dx][k]).collect();
    let piece = AffinePiece::new(a, b)?;
    let group_risk = sum_loss(dataset, &idx, &piece, &Loss::Mse);
    Ok(GroupFit { region_idx, piece, group_risk, n_samples: idx.len() })
}

/// Approximate minimizer for an arbitrary continuous loss: finite-difference
/// gradient descent with backtracking, warm-started from the MSE fit. The
/// accepted iterates never increase the objective, so the result is at most
/// the MSE piece's risk under `loss`.
pub fn fit_group_generic(
    dataset: &Dataset,
    partition: &Partition,
    region_idx: usize,
    loss: &Loss,
    iters: usize,
    step: f64,
) -> Result<GroupFit> {
    if iters < 1 {
        return Err(Error::Argument("iters >= 1 required".into()));
    }
    if !(step > 0.0) {
        return Err(Error::Argument("step > 0 required".into()));
    }
    let warm = fit_group_mse(dataset, partition, region_idx)?;
    if loss.is_mse() {
        return Ok(warm);
    }
    let idx = partition.group(region_idx);
    let dx = dataset.dx();
    let dy = dataset.dy();

    let unpack = |theta: &[f64]| -> AffinePiece {
        let a: Vec<Vec<f64>> = (0..dy)
            .map(|k| theta[k * (dx + 1)..k * (dx + 1) + dx].to_vec())
            .collect();
        let b: Vec<f64> = (0..dy).map(|k| theta[k * (dx + 1) + dx]).collect();
        AffinePiece { a, b }
    };
    let objective = |theta: &[f64]| -> Result<f64> {
        let v = sum_loss(dataset, &idx, &unpack(theta), loss);
        if !v.is_finite() {
            return Err(Error::Numerical("loss evaluated to a non-finite value".into()));
        }
        Ok(v)
    };

    let mut theta: Vec<f64> = (0..dy)
        .flat_map(|k| {
            warm.piece.a[k]
                .iter()
                .copied()
                .chain(std::iter::once(warm.piece.b[k]))
                .collect::<Vec<f64>>()
        })
        .collect();
    let mut current = objective(&theta)?;

    for _ in 0..iters {
        // central finite differences
        let mut grad = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let h = 1e-6 * (1.0 + theta[i].abs());
            let mut plus = theta.clone();
            plus[i] += h;
            let mut minus = theta.clone();
            minus[i] -= h;
            grad[i] = (objective(&plus)? - objective(&minus)?) / (2.0 * h);
        }
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2 == 0.0 {
            break;
        }
        let mut t = step;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(&grad)
                .map(|(p, g)| p - t * g)
                .collect();
            let value = objective(&candidate)?;
            if value <= current - 1e-4 * t * gnorm2 {
                theta = candidate;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    Ok(GroupFit {
        region_idx,
        piece: unpack(&theta),
        group_risk: current,
        n_samples: idx.len(),
    })
}

/// Connects two adjacent 1-D group fits across their sample gap `(u, v)`.
///
/// Returns `(None, [x*])` when the pieces intersect at a common interior
/// point (or agree identically, in which case `x*` is the gap midpoint),
/// and otherwise an auxiliary piece over `[u', v']` joining the left
/// piece's values at `u'` to the right piece's values at `v'`.
pub fn auxiliary_segment_1d(
    left: &GroupFit,
    right: &GroupFit,
    gap: (f64, f64),
) -> Result<(Option<AffinePiece>, Vec<f64>)> {
    let (u, v) = gap;
    if !(u < v) {
        return Err(Error::Argument(format!("empty gap interval ({u}, {v})")));
    }
    let lp = &left.piece;
    let rp = &right.piece;
    if lp.dx() != 1 || rp.dx() != 1 || lp.dy() != rp.dy() {
        return Err(Error::Shape("auxiliary segments require dx = 1 and matching dy".into()));
    }
    let dy = lp.dy();

    let identical = (0..dy).all(|k| {
        let (wl, bl) = lp.component(k);
        let (wr, br) = rp.component(k);
        (wl[0] - wr[0]).abs() <= 1e-12 * (1.0 + wl[0].abs().max(wr[0].abs()))
            && (bl - br).abs() <= 1e-12 * (1.0 + bl.abs().max(br.abs()))
    });
    if identical {
        return Ok((None, vec![0.5 * (u + v)]));
    }

    // per-component intersections
    let mut crossings = Vec::with_capacity(dy);
    for k in 0..dy {
        let (wl, bl) = lp.component(k);
        let (wr, br) = rp.component(k);
        let denom = wl[0] - wr[0];
        if denom.abs() <= 1e-12 * (1.0 + wl[0].abs().max(wr[0].abs())) {
            crossings.push(None); // parallel component
        } else {
            crossings.push(Some((br - bl) / denom));
        }
    }
    let shared_interior = crossings.iter().try_fold(None::<f64>, |acc, c| match (acc, c) {
        (_, None) => Err(()),
        (None, Some(x)) => Ok(Some(*x)),
        (Some(prev), Some(x)) => {
            if (prev - x).abs() <= 1e-9 {
                Ok(Some(prev))
            } else {
                Err(())
            }
        }
    });
    if let Ok(Some(xstar)) = shared_interior {
        if u < xstar && xstar < v {
            return Ok((None, vec![xstar]));
        }
    }

    // auxiliary connector over the shrunk gap
    let u1 = u + GAP_ANCHOR * (v - u);
    let v1 = v - GAP_ANCHOR * (v - u);
    let mut a = Vec::with_capacity(dy);
    let mut b = Vec::with_capacity(dy);
    for k in 0..dy {
        let yl = lp.eval(&[u1])[k];
        let yr = rp.eval(&[v1])[k];
        let slope = (yr - yl) / (v1 - u1);
        a.push(vec![slope]);
        b.push(yl - slope * u1);
    }
    Ok((Some(AffinePiece::new(a, b)?), vec![u1, v1]))
}
