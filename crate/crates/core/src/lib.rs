//! Approximate-Bayesian image restoration with expectation propagation.
//!
//! The posterior over pixels combines a Gaussian observation model
//! `y = H x + noise` with a sparsity prior on nearest-neighbour pixel
//! differences. Expectation propagation replaces each non-Gaussian factor
//! by a diagonal Gaussian site refined through moment matching, yielding a
//! posterior-mean restoration together with per-pixel variances; an
//! EM-style outer loop can estimate the prior scale from the data.

pub mod em;
pub mod engine;
pub mod error;
pub mod forward;
pub mod gaussian;
pub mod io;
pub mod likelihood;
pub mod math;
pub mod metrics;
pub mod oracle;
pub mod partition;
pub mod phantom;
pub mod prior;
pub mod prior_sites;

pub use em::{run_ep_em, EmConfig, EmResult, LambdaRule};
pub use engine::{run_ep, EpConfig, EpResult, EpState, IterationStats};
pub use error::{EpError, Result};
pub use forward::{ForwardOp, Kernel2D};
pub use gaussian::{DiagGaussian, NaturalSite};
pub use likelihood::{CgConfig, LikelihoodModel, VarianceStrategy};
pub use partition::EdgePartition;
pub use prior::{PriorSpec, TiltedMoments1D};
