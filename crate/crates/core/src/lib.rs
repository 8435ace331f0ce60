//! Trace-driven energy attribution for CPU packages and DRAM nodes.
//!
//! The library redistributes component-level energy sensor readings to the
//! threads and applications that caused them, using hardware-counter deltas
//! recorded per scheduling interval. The numeric core is generic over the
//! [`Scalar`] type: use the `f64` aliases below for production work, `f32`
//! to study precision sensitivity, or [`Exact`] (arbitrary-precision
//! rationals) when results must be bit-for-bit reproducible oracles.
//!
//! The crate is organised as a pipeline:
//!
//! - [`model`] — physical/logical entity model, metrics, topology rules;
//! - [`interval`] — scheduling intervals and SMT sub-interval splitting;
//! - [`attribution`] — the active/idle energy attribution model itself;
//! - [`ingestion`] — the JSONL trace format and its validation;
//! - [`store`] — append-only measurement storage with windowed queries;
//! - [`simulator`] — synthetic traces with a ground-truth energy ledger;
//! - [`pipeline`] — window tiling, orchestration, conservation checks and
//!   report rendering.

pub mod attribution;
pub mod ingestion;
pub mod interval;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod simulator;
pub mod store;

pub use attribution::{ModelParams, DEFAULT_GAMMA_REMOTE, DEFAULT_SMT_SIGMA};
pub use model::{LogicalId, Measurement, Ns, PhysicalId, Topology, NS_PER_SEC};
pub use scalar::Scalar;

/// Arbitrary-precision rational scalar; attribution over `Exact` is exact.
pub type Exact = num::BigRational;

/// Production-precision model parameters.
pub type Params = attribution::ModelParams<f64>;
/// Production-precision per-window report.
pub type Report = attribution::AttributionReport<f64>;
/// Production-precision whole-trace report.
pub type FullReport = pipeline::TraceReport<f64>;

/// Exact-arithmetic model parameters.
pub type ExactParams = attribution::ModelParams<Exact>;
/// Exact-arithmetic per-window report.
pub type ExactReport = attribution::AttributionReport<Exact>;
