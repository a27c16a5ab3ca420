//! Encrypted-traffic classification from packet captures.
//!
//! Captures are filtered, cut into overlapping time windows, and each window
//! becomes one feature row: packet-size statistics per direction, flow
//! statistics, an amplitude-weighted signal that merges every flow of the
//! window onto one time axis, and an inter-arrival summary. A deterministic
//! random forest classifies the rows.
//!
//! ```no_run
//! use interflow::{config::RunConfig, pipeline, evaluation};
//! # fn main() -> interflow::Result<()> {
//! let config = RunConfig::default();
//! let (captures, failed) = pipeline::load_manifest_captures("data/manifest.csv".as_ref(), &config.ingest_config())?;
//! pipeline::require_some(&captures, &failed)?;
//! let rows = pipeline::extract_prepared(&captures, &config)?.rows;
//! let outcome = evaluation::run_holdout(&rows, &config)?;
//! println!("accuracy {:.3}", outcome.metrics.accuracy);
//! # Ok(()) }
//! ```

pub mod chunking;
pub mod classifier;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod ingest;
pub mod packet;
pub mod pipeline;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
pub use packet::{Direction, Endpoint, FlowKey, PacketRecord, Proto};
