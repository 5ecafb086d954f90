//! Structured linear algebra: lazy Kronecker and projected operators,
//! batched conjugate gradients, randomized log-det and trace estimators,
//! Kronecker square-root sampling, and a dense materialization used as the
//! reference path.

mod cg;
mod dense;
mod operator;
mod root;
mod stochastic;

pub use cg::{cg_solve, CgConfig, CgReport};
pub use dense::{cholesky_blocked, spd_inverse};
pub(crate) use operator::kron_apply;
pub use operator::{
    dense_materialize, observed_diag_mean, KroneckerOperator, LinearOperator, ProjectedKroneckerOperator,
    ProjectionMask, ScaledIdentity, DEFAULT_DENSE_CAP, DEFAULT_JITTER_REL,
};
pub use root::{kron_root_sample, KroneckerRoot};
pub use stochastic::{
    hutchinson_trace_grad, slq_logdet, trace_from_solves, ProbeSet, DEFAULT_LANCZOS_STEPS, DEFAULT_PROBES,
};
