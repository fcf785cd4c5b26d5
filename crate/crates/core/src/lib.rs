//! Piecewise-linear fitting and exact ReLU network synthesis.
//!
//! The crate implements a constructive pipeline over labeled datasets:
//!
//! 1. partition the input domain into disjoint convex regions and assign
//!    samples to groups ([`partition`]),
//! 2. fit each group with its optimal affine predictor ([`fit`]),
//! 3. assemble the pieces into a continuous piecewise-linear (CPWL)
//!    predictor in max-over-min form ([`cpwl`]),
//! 4. realize that predictor as explicit fully-connected ReLU or CNN
//!    weights ([`build`], [`runtime`]),
//! 5. certify numerically that the weights are a local minimum of the
//!    empirical risk and demonstrate spuriousness by refinement
//!    ([`verify`]).
//!
//! [`pipeline`] wires the stages together and [`plot`] renders fits as SVG.

pub mod build;
pub mod cpwl;
pub mod data;
mod error;
pub mod fit;
pub mod partition;
pub mod pipeline;
pub mod plot;
pub mod runtime;
pub mod verify;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

pub(crate) mod util {
    /// Sums `values` by pairwise (cascade) summation so the result does not
    /// depend on chunking choices made by callers and float drift stays
    /// O(log n) in the worst case.
    pub fn pairwise_sum(values: &[f64]) -> f64 {
        match values.len() {
            0 => 0.0,
            1 => values[0],
            2 => values[0] + values[1],
            n => {
                let (lo, hi) = values.split_at(n / 2);
                pairwise_sum(lo) + pairwise_sum(hi)
            }
        }
    }

    #[cfg(test)]
    mod tests {
        use super::pairwise_sum;

        #[test]
        fn matches_naive_sum_on_small_inputs() {
            let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
            assert_eq!(pairwise_sum(&xs), 15.0);
            assert_eq!(pairwise_sum(&[]), 0.0);
            assert_eq!(pairwise_sum(&[7.5]), 7.5);
        }
    }
}
