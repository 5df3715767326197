//! Deterministic discrete-event simulator for dual-band 6TiSCH networks.
//!
//! Two independent TSCH/RPL planes (2.4 GHz and 868 MHz) are simulated over
//! the same topology and the same application schedule; the DAG root keeps
//! whichever copy of each packet arrives first.
//!
//! Module map:
//! - [`model`]: band parameters, time, packet identity, app config
//! - [`topology`]: linear grid and random deployments
//! - [`propagation`]: Friis/Pister-Hack link model, waterfall tables, SINR
//! - [`mac`]: TSCH cells, schedules, queues, channel hopping, slot resolution
//! - [`rpl`]: DODAG formation with an ETX objective function
//! - [`msf`]: traffic-adaptive dedicated cells
//! - [`engine`]: one band's slot-by-slot run
//! - [`trace`]: run traces and their file formats
//! - [`metrics`]: PDR, latency and first-arrival combining
//! - [`experiment`]: seed sweeps, result files and plot data

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod experiment;
pub mod mac;
pub mod metrics;
pub mod model;
pub mod msf;
pub mod propagation;
pub mod rng;
pub mod rpl;
pub mod topology;
pub mod trace;

pub use engine::{generate_app_schedule, run_band, RunConfig, ScheduledPacket};
pub use error::{Error, Result};
pub use metrics::{
    band_latency, band_pdr, combine, combined_total_retries, retry_statistics, winning_band_per_node,
    CombinedPacketOutcome, MetricsReport, RetryAttribution,
};
pub use model::{asn_to_time, validate_band_config, AppConfig, Asn, BandConfig, BandId, NodeId, PacketId, SimTime};
pub use propagation::{friis_path_loss, WaterfallTable};
pub use rpl::hop_count;
pub use topology::{Position, Topology};
pub use trace::RunTrace;
