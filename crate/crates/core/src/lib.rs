//! Riemannian optimization on the indefinite Stiefel manifold
//! `iSt_{A,J}(p,n) = {X ∈ ℝ^{n×p} : XᵀAX = J}`.

pub mod error;
pub mod experiments;
pub mod kernels;
pub mod manifold;
pub mod oracles;
pub mod second_order;
pub mod solvers;

pub use error::{Error, Result};
pub use kernels::Mat;
pub use manifold::{random_point, ManifoldSpec, Metric, MetricField, PointWorkspace, TangentVector};
