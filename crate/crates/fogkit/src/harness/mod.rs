//! Experiment orchestration: synthetic cohorts, the LOGO cross-validation
//! protocol, label-ratio sweeps, configuration, and reproducibility
//! manifests.

pub mod config;
pub mod logo;
pub mod sweeps;
pub mod synth;

pub use config::{load_cohort_dir, write_cohort_dir, Manifest, RunConfig};
pub use logo::{logo_csv, make_logo_split, run_logo, LogoConfig, LogoPlan, LogoReport, LogoRow};
pub use sweeps::{label_ratio_sweep, sweep_csv, SweepOutcome, SweepPoint};
pub use synth::{synth_cohort, SubjectFeatures, SynthSpec};
