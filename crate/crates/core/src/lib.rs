//! Tempered-posterior variational inference for probabilistic PCA.
//!
//! The crate fits mean-field Gaussian approximations of the tempered posterior
//! over loading matrices, scores candidate ranks with a penalized ELBO, and
//! provides the numerical checks (divergence closed forms, rate sweeps, bound
//! evaluators, discrete oracles) used to validate the procedure.
//!
//! Module map:
//! - [`gauss`]: Gaussian KL / Rényi closed forms, clipping, spectral norm.
//! - [`ppca`]: the generative model, Sherman-Morrison inverse, log-likelihood.
//! - [`variational`]: variational families, ELBO estimator, gradient, optimizer.
//! - [`selection`]: penalized ELBO rank selection, covariance estimators, bounds.
//! - [`discrete`]: exact tempered posteriors on finite grids.
//! - [`harness`]: seeded experiment drivers behind the `ppca-elbo` CLI.

pub mod discrete;
pub mod error;
pub mod gauss;
pub mod harness;
pub mod ppca;
pub mod rng;
pub mod selection;
pub mod variational;

mod csvfmt;

pub use error::{Error, Result};
pub use gauss::{Alpha, SpdMatrix};
pub use ppca::{Dataset, LoadingMatrix, PpcaParams};
pub use selection::{ModelPrior, SelectionReport};
pub use variational::{
    ColumnGaussian, CovStructure, ElboEstimate, PriorSpec, TemperConfig, VariationalFamily,
};

/// Library version echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Mean and standard error of a Monte-Carlo average.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl McEstimate {
    /// Sample mean and `sd / sqrt(m)` (unbiased variance). A single sample has zero error.
    pub fn from_samples(values: &[f64]) -> Self {
        let m = values.len();
        if m == 0 {
            return McEstimate { estimate: f64::NAN, std_err: f64::NAN, samples: 0 };
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let std_err = if m > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        } else {
            0.0
        };
        McEstimate { estimate: mean, std_err, samples: m }
    }
}
