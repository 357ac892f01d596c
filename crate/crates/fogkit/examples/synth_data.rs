//! Generate a small synthetic cohort and write it as a dataset directory
//! (`subjects.csv` + one canonical CSV per subject).
//!
//!     cargo run --example synth_data

use fogkit::harness::{synth_cohort, write_cohort_dir, SynthSpec};
use fogkit::Result;

fn main() -> Result<()> {
    let spec = SynthSpec {
        subjects: 4,
        duration_s: 120.0,
        rate_hz: 40.0,
        fog_rate: 0.3,
    };
    let cohort = synth_cohort(&spec, 7)?;

    for (stream, features) in &cohort {
        println!(
            "{}: {} samples, {:.1}% FoG, age {:.0}, updrs {:.0}",
            features.subject_id,
            stream.len(),
            100.0 * stream.fog_sample_fraction(),
            features.age.unwrap_or(f64::NAN),
            features.updrs.unwrap_or(f64::NAN),
        );
    }

    let dir = std::path::Path::new("out/synth_demo");
    write_cohort_dir(dir, &cohort)?;
    println!("dataset written to {}", dir.display());
    Ok(())
}
