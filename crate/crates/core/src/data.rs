//! Dataset representation, CSV ingestion and synthetic generators.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::util::pairwise_sum;
use crate::{Error, Result};

/// One labeled sample: input `x` of length `dx`, target `y` of length `dy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// An immutable in-memory dataset of `N` samples with fixed `dx`/`dy`.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    dx: usize,
    dy: usize,
}

impl Dataset {
    /// Validates dimensions and finiteness of every sample.
    pub fn new(samples: Vec<Sample>, dx: usize, dy: usize) -> Result<Self> {
        if dx < 1 || dy < 1 {
            return Err(Error::Validation("dx >= 1 and dy >= 1 required".into()));
        }
        if samples.is_empty() {
            return Err(Error::Validation("N >= 1 required".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != dx || s.y.len() != dy {
                return Err(Error::Validation(format!(
                    "sample {i} has shape ({}, {}), expected ({dx}, {dy})",
                    s.x.len(),
                    s.y.len()
                )));
            }
            if s.x.iter().chain(s.y.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "sample {i} contains a non-finite value"
                )));
            }
        }
        Ok(Dataset { samples, dx, dy })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    pub fn dy(&self) -> usize {
        self.dy
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// Sample indices sorted by the scalar input value. Only meaningful for
    /// one-dimensional inputs.
    pub fn sorted_indices_1d(&self) -> Result<Vec<usize>> {
        if self.dx != 1 {
            return Err(Error::Argument("operation requires dx = 1".into()));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.samples[a].x[0]
                .partial_cmp(&self.samples[b].x[0])
                .expect("finite by construction")
        });
        Ok(idx)
    }
}

/// Loss function used for fitting and risk evaluation.
///
/// `Mse` is the squared Euclidean distance. `Custom` wraps any continuous
/// loss `(prediction, target) -> value >= 0`; continuity is assumed, not
/// checked.
#[derive(Clone)]
pub enum Loss {
    Mse,
    Custom {
        name: String,
        f: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
    },
}

impl Loss {
    /// Sum of absolute per-component errors; a built-in continuous loss
    /// exercising the generic fitting path.
    pub fn absolute() -> Self {
        Loss::Custom {
            name: "abs".into(),
            f: Arc::new(|pred, target| {
                pred.iter()
                    .zip(target)
                    .map(|(p, t)| (p - t).abs())
                    .sum::<f64>()
            }),
        }
    }

    pub fn eval(&self, prediction: &[f64], target: &[f64]) -> f64 {
        match self {
            Loss::Mse => prediction
                .iter()
                .zip(target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum(),
            Loss::Custom { f, .. } => f(prediction, target),
        }
    }

    pub fn is_mse(&self) -> bool {
        matches!(self, Loss::Mse)
    }

    pub fn name(&self) -> &str {
        match self {
            Loss::Mse => "mse",
            Loss::Custom { name, .. } => name,
        }
    }
}

impl fmt::Debug for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Loss({})", self.name())
    }
}

/// Parses a dataset from CSV text. The header must name the columns
/// `x0,...,x{dx-1},y0,...,y{dy-1}` in that order.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "missing header row".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dx = cols.iter().take_while(|c| c.starts_with('x')).count();
    let dy = cols.len() - dx;
    for (i, c) in cols.iter().enumerate() {
        let expect = if i < dx { format!("x{i}") } else { format!("y{}", i - dx) };
        if **c != expect {
            return Err(Error::Parse {
                line: 1,
                msg: format!("bad header column {:?}, expected {:?}", c, expect),
            });
        }
    }
    if dx == 0 || dy == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "header must contain x columns followed by y columns".into(),
        });
    }

    let mut samples = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dx + dy {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected {} fields, found {}", dx + dy, fields.len()),
            });
        }
        let mut values = Vec::with_capacity(dx + dy);
        for f in &fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("not a number: {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite value {f:?} at line {}",
                    lineno + 1
                )));
            }
            values.push(v);
        }
        let y = values.split_off(dx);
        samples.push(Sample { x: values, y });
    }
    Dataset::new(samples, dx, dy)
}

/// Loads a dataset from a CSV file. See [`parse_csv`] for the format.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

/// Renders a dataset back to CSV with the canonical header.
pub fn to_csv(dataset: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..dataset.dx() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("x{i}"));
    }
    for i in 0..dataset.dy() {
        out.push(',');
        out.push_str(&format!("y{i}"));
    }
    out.push('\n');
    for s in dataset.samples() {
        let row: Vec<String> = s.x.iter().chain(s.y.iter()).map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// `n` samples with `x` evenly spaced on `[lo, hi]` (both endpoints
/// included) and targets `y = x^2`.
pub fn gen_parabola(n: usize, lo: f64, hi: f64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Argument("gen_parabola requires n >= 2".into()));
    }
    if !(lo < hi) {
        return Err(Error::Argument("gen_parabola requires lo < hi".into()));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let samples = (0..n)
        .map(|k| {
            let x = if k + 1 == n { hi } else { lo + step * k as f64 };
            Sample { x: vec![x], y: vec![x * x] }
        })
        .collect();
    Dataset::new(samples, 1, 1)
}

/// Mean empirical risk `(1/N) * sum_i loss(prediction_i, y_i)`.
pub fn risk(dataset: &Dataset, predictions: &[Vec<f64>], loss: &Loss) -> Result<f64> {
    if predictions.len() != dataset.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} samples",
            predictions.len(),
            dataset.len()
        )));
    }
    let mut per_sample = Vec::with_capacity(dataset.len());
    for (pred, s) in predictions.iter().zip(dataset.samples()) {
        if pred.len() != dataset.dy() {
            return Err(Error::Argument(format!(
                "prediction of length {}, expected {}",
                pred.len(),
                dataset.dy()
            )));
        }
        per_sample.push(loss.eval(pred, &s.y));
    }
    Ok(pairwise_sum(&per_sample) / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_points() -> Dataset {
        Dataset::new(
            vec![
                Sample { x: vec![-1.0], y: vec![1.0] },
                Sample { x: vec![0.0], y: vec![0.0] },
                Sample { x: vec![1.0], y: vec![1.0] },
            ],
            1,
            1,
        )
        .unwrap()
    }

    #[test]
    fn parse_csv_roundtrip() {
        let ds = parse_csv("x0,y0\n-1,1\n0,0\n1,1\n").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dx(), 1);
        assert_eq!(ds.dy(), 1);
        assert_eq!(ds.sample(0).x, vec![-1.0]);
        let again = parse_csv(&to_csv(&ds)).unwrap();
        assert_eq!(again.samples(), ds.samples());
    }

    #[test]
    fn wrong_header_rejected() {
        let err = parse_csv("a,b\n0,0\n").unwrap_err();
        match err {
            Error::Parse { line: 1, .. } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_data_section_rejected() {
        let err = parse_csv("x0,y0\n").unwrap_err();
        assert!(err.to_string().contains("N >= 1"), "{err}");
    }

    #[test]
    fn nan_rejected_with_line_number() {
        let err = parse_csv("x0,y0\n0,0\n1,NaN\n").unwrap_err();
        assert!(err.to_string().contains("3"), "{err}");
    }

    #[test]
    fn malformed_row_names_line() {
        let err = parse_csv("x0,y0\n0,0\n1\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parabola_matches_stated_grid() {
        let ds = gen_parabola(40, -1.0, 1.0).unwrap();
        assert_eq!(ds.len(), 40);
        assert_eq!(ds.sample(0).x[0], -1.0);
        assert_eq!(ds.sample(39).x[0], 1.0);
        let spacing = ds.sample(1).x[0] - ds.sample(0).x[0];
        assert!((spacing - 2.0 / 39.0).abs() < 1e-15);
    }

    #[test]
    fn parabola_endpoints_only() {
        let ds = gen_parabola(2, 0.0, 1.0).unwrap();
        assert_eq!(ds.sample(0).x[0], 0.0);
        assert_eq!(ds.sample(0).y[0], 0.0);
        assert_eq!(ds.sample(1).x[0], 1.0);
        assert_eq!(ds.sample(1).y[0], 1.0);
    }

    #[test]
    fn parabola_three_point_symmetry() {
        let ds = gen_parabola(3, -1.0, 1.0).unwrap();
        assert_eq!(ds.sample(0).y[0], 1.0);
        assert_eq!(ds.sample(1).x[0], 0.0);
        assert_eq!(ds.sample(1).y[0], 0.0);
        assert_eq!(ds.sample(2).y[0], 1.0);
    }

    #[test]
    fn parabola_rejects_tiny_n() {
        assert!(gen_parabola(1, 0.0, 1.0).is_err());
    }

    #[test]
    fn risk_perfect_fit_is_zero() {
        let ds = three_points();
        let preds: Vec<Vec<f64>> = ds.samples().iter().map(|s| s.y.clone()).collect();
        assert_eq!(risk(&ds, &preds, &Loss::Mse).unwrap(), 0.0);
    }

    #[test]
    fn risk_constant_two_thirds() {
        // (1/9 + 4/9 + 1/9) / 3 = 2/9
        let ds = three_points();
        let preds = vec![vec![2.0 / 3.0]; 3];
        let r = risk(&ds, &preds, &Loss::Mse).unwrap();
        assert!((r - 2.0 / 9.0).abs() < 1e-15, "{r}");
    }

    #[test]
    fn risk_unit_residual() {
        let ds = Dataset::new(vec![Sample { x: vec![0.0], y: vec![1.0] }], 1, 1).unwrap();
        let r = risk(&ds, &[vec![2.0]], &Loss::Mse).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn risk_length_mismatch() {
        let ds = three_points();
        assert!(risk(&ds, &[vec![0.0]], &Loss::Mse).is_err());
    }

    #[test]
    fn risk_permutation_invariant_within_tolerance() {
        let ds = gen_parabola(17, -1.0, 2.0).unwrap();
        let preds: Vec<Vec<f64>> = ds.samples().iter().map(|s| vec![s.y[0] + 0.3]).collect();
        let r = risk(&ds, &preds, &Loss::Mse).unwrap();

        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.reverse();
        let samples2: Vec<Sample> = order.iter().map(|&i| ds.sample(i).clone()).collect();
        let preds2: Vec<Vec<f64>> = order.iter().map(|&i| preds[i].clone()).collect();
        let ds2 = Dataset::new(samples2, 1, 1).unwrap();
        let r2 = risk(&ds2, &preds2, &Loss::Mse).unwrap();
        assert!((r - r2).abs() <= 1e-12 * (1.0 + r.abs()));
    }

    #[test]
    fn parabola_cannot_be_fitted_linearly() {
        // Assumption check: the best least-squares line on y = x^2 with
        // n >= 3 distinct inputs keeps a strictly positive risk.
        let ds = gen_parabola(5, -1.0, 1.0).unwrap();
        // Closed-form simple regression: symmetric grid => slope 0,
        // intercept mean(y).
        let ybar: f64 = ds.samples().iter().map(|s| s.y[0]).sum::<f64>() / 5.0;
        let preds = vec![vec![ybar]; 5];
        let r = risk(&ds, &preds, &Loss::Mse).unwrap();
        assert!(r > 1e-3, "{r}");
    }
}
