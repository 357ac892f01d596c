//! # fogkit
//!
//! A label-efficient freezing-of-gait (FoG) detection toolkit for 3-axis
//! accelerometer recordings. The pipeline, end to end:
//!
//! 1. **ingest** — load recordings (canonical CSV, Daphnet, column-mapped
//!    layouts), resample to a working rate, per-window mean removal.
//! 2. **windowing** — differential-hop segmentation for training (denser
//!    overlap inside FoG episodes, rebalancing the rare class) and fixed
//!    50%-overlap segmentation for inference.
//! 3. **neuralcore** — a small 1D-CNN engine (forward, exact backprop, Adam)
//!    sized for on-device inference; no GPU, no autodiff graph.
//! 4. **ssl** — masked-reconstruction pretraining on unlabeled windows, then
//!    frozen-encoder fine-tuning of the classifier head on a labeled subset.
//! 5. **gate** — a magnitude-threshold activation gate that skips the model
//!    on inactive windows, plus the activity-threshold optimization sweep.
//! 6. **metrics** — window metrics, rank-statistic ROC AUC, episode-level
//!    analytics (detection rate, latency, FP proximity), majority-vote
//!    smoothing.
//! 7. **harness** — synthetic cohorts, leave-one-group-out cross-validation,
//!    label-ratio and gate-threshold sweeps, reproducibility manifests.
//!
//! Every stage is deterministic given its seed; see `harness::seeds` for the
//! master-seed fan-out. The `fogkit` binary exposes each stage as a
//! subcommand; the `examples/` directory has one runnable program per major
//! capability.

pub mod error;
pub mod gate;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod neuralcore;
pub mod seeds;
pub mod ssl;
pub mod windowing;

pub use error::{FogError, Result};
pub use ingest::{Label, Medication, SignalStream, Unit};
pub use windowing::{SegmentMode, WindowSet, WindowSpec};
