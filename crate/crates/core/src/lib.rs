//! Discrete-event simulation of live migration for virtualized 5G core
//! network functions across edge hosts.
//!
//! The clock counts whole microseconds. Quantities that can be fractional
//! (one-way latency, dirty rates, the closed-form pre-copy estimate) are
//! generic over [`num::Scalar`], implemented for `f32`, `f64` and the exact
//! rational [`Exact`]. The aliases below fix the scalar for common uses.

pub mod memory;
pub mod migration;
pub mod model;
pub mod num;
pub mod policy;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use num::{Exact, Scalar};

pub type ExactDirtyProcess = memory::DirtyProcess<Exact>;
pub type DirtyProcessF64 = memory::DirtyProcess<f64>;
pub type DirtyProcessF32 = memory::DirtyProcess<f32>;
pub type ExactDirtyModel = memory::DirtyModel<Exact>;
pub type ExactReplicaHandle<'a> = migration::ReplicaHandle<'a, Exact>;
pub type ExactPreCopyEstimate = migration::PreCopyEstimate<Exact>;
pub type PreCopyEstimateF64 = migration::PreCopyEstimate<f64>;
