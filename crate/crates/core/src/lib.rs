//! Computable convergence-rate bounds for subgeometrically ergodic Markov chains.
//!
//! The pipeline turns a drift/minorisation certificate into hitting-time moment
//! bounds ([`drift`]), feeds those into the coupling bound engine ([`bounds`])
//! and checks the resulting curves against an exact truncated-kernel oracle and
//! a Monte Carlo coupling simulator ([`verify`]). Two worked models ship with the
//! crate: the embedded M/G/1 queue ([`mg1`]) and an independence sampler
//! ([`isampler`]).
//!
//! Total variation is reported as `sup_A |μ(A) - ν(A)|`, so distances lie in
//! `[0, 1]`. The f-norm and interpolated bounds use `sup_{|g| <= f} |μ(g) - ν(g)|`.

// Negated comparisons reject NaN in validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod drift;
pub mod error;
pub mod isampler;
pub mod mg1;
pub mod monotone;
pub mod quad;
pub mod rates;
pub mod verify;

pub use bounds::{
    bound_vs_stationary, compute_m_u, f_norm_bound, interpolated_bound, tv_bound, BoundConstants, BoundCurve,
    BoundInputs, MomentBounds, YoungPair,
};
pub use error::{Error, Result};
pub use monotone::{DiscreteKernel, MinorisationCert};
pub use rates::{cumulative_rate, h_phi, h_phi_inverse, rate_from_phi, PhiGenerator, RateFamily, RateSequence};
