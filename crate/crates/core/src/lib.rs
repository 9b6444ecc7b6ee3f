//! Federated transfer learning on SPD covariance manifolds for EEG
//! classification: manifold-reduction network layers, MMD domain
//! adaptation, federated averaging of the shared classifier, and
//! Riemannian baselines.

pub mod baselines;
pub mod data;
pub mod error;
pub mod federated;
pub mod layers;
pub mod losses;
pub mod mat;
pub mod optim;
pub mod scalar;
pub mod spd;

pub use error::{Error, Result};

/// Concrete double-precision aliases used by the network, losses, and
/// the federated simulator.
pub type Matrix = mat::Mat<f64>;
pub type SymMat = spd::SymMatrix<f64>;
pub type SpdMat = spd::SpdMatrix<f64>;
pub type Eigen = spd::EigenDecomposition<f64>;
