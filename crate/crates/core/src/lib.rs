//! Saturated PMSM modelling, HF-injection position estimation and
//! locked-rotor magnetic identification.

// Negated comparisons deliberately reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod demod;
pub mod estimator;
pub mod frame;
pub mod harness;
pub mod ident;
pub mod injection;
pub mod lstsq;
pub mod magnetics;
pub mod ode;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod vec2;
