//! Mobility-based social distancing analysis: device sightings in, daily
//! distancing indices and phase statistics out.

pub mod activity;
pub mod calendar;
pub mod cases;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod metrics;
pub mod phase;
pub mod pipeline;
pub mod report;
pub mod sdi;
pub mod stats;
pub mod synth;
pub mod trips;
pub mod weights;

pub use error::{Error, Result};
