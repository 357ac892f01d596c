//! Differential hopping vs fixed-overlap segmentation: the training-mode
//! segmenter hops faster inside FoG episodes, so the rare class ends up
//! much better represented.
//!
//!     cargo run --example segment_dhwt

use fogkit::harness::{synth_cohort, SynthSpec};
use fogkit::windowing::{class_balance, segment, WindowSpec};
use fogkit::Result;

fn main() -> Result<()> {
    let spec = SynthSpec {
        subjects: 1,
        duration_s: 600.0,
        rate_hz: 40.0,
        fog_rate: 0.25,
    };
    let (stream, _) = synth_cohort(&spec, 3)?.remove(0);
    println!(
        "stream: {} samples, {:.1}% FoG at the sample level",
        stream.len(),
        100.0 * stream.fog_sample_fraction()
    );

    let fixed = segment(&stream, &WindowSpec::inference())?;
    let dhwt = segment(&stream, &WindowSpec::train())?;

    let (_, fog_fixed) = class_balance(&fixed)?;
    let (_, fog_dhwt) = class_balance(&dhwt)?;
    println!(
        "fixed 50% overlap: {:4} windows, {:.1}% FoG",
        fixed.len(),
        100.0 * fog_fixed
    );
    println!(
        "differential hop:  {:4} windows, {:.1}% FoG (mixed windows discarded)",
        dhwt.len(),
        100.0 * fog_dhwt
    );
    Ok(())
}
