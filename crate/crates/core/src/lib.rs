//! Trace-driven planner and simulator for confidence-based cascade serving
//! of multi-size model families.
//!
//! A cascade chains small-to-large versions of one model family: each stage
//! answers the requests it is confident about and escalates the rest. This
//! crate covers the full offline pipeline over recorded prediction traces:
//!
//! - [`trace`] — trace/profile/cluster ingestion plus a synthetic generator
//!   that reproduces a target joint-accuracy structure.
//! - [`calibration`] — temperature-scaled confidence score functions per
//!   task kind (classification, generation, question answering).
//! - [`cascade`] — threshold routing with optional skip bands, and the
//!   accuracy/energy/latency metrics of a configured cascade.
//! - [`threshold`] — sampling-based threshold search producing the
//!   accuracy-energy performance graph and the AP/EO operating points.
//! - [`skip`] — energy-benefit pruning of dead stages and log-spaced skip
//!   band assignment.
//! - [`planner`] — batch-size profile fitting, replica sizing, and the
//!   GPU placement integer program with an exact branch-and-bound solver.
//! - [`sim`] — discrete-event cluster simulation of a deployed plan with
//!   per-GPU energy metering.
//! - [`manifest`] — reproducibility manifests written next to artifacts.

pub mod calibration;
pub mod cascade;
pub mod error;
pub mod manifest;
pub mod planner;
pub mod sim;
pub mod skip;
pub mod threshold;
pub mod trace;

pub use error::{Error, Result};
