//! Masked-reconstruction pretraining at desk scale: random segments of each
//! window are zeroed and the encoder learns to predict them back. No labels
//! are touched — the entry point takes a label-free view of the windows.
//!
//!     cargo run --example pretrain_masked

use fogkit::harness::{synth_cohort, SynthSpec};
use fogkit::neuralcore::ArchSpec;
use fogkit::ssl::{apply_mask, pretrain, MaskSpec, TrainPlan};
use fogkit::windowing::{segment, WindowSpec};
use fogkit::Result;

fn main() -> Result<()> {
    let spec = SynthSpec {
        subjects: 2,
        duration_s: 180.0,
        rate_hz: 40.0,
        fog_rate: 0.3,
    };
    let cohort = synth_cohort(&spec, 11)?;
    let ws = segment(&cohort[0].0, &WindowSpec::train())?;

    let mask = MaskSpec::default();
    let masked = apply_mask(&ws.frames, &mask)?;
    println!(
        "{} windows; {} of {} scalars masked per window",
        ws.len(),
        masked.positions[0].len(),
        ws.window_samples() * ws.channels()
    );

    // A slim encoder and a short schedule keep this demo quick.
    let arch = ArchSpec {
        conv_filters: vec![16, 32, 16],
        dense_units: vec![32],
        ..ArchSpec::default()
    };
    let plan = TrainPlan {
        pretrain_epochs: 10,
        ..TrainPlan::desk()
    };
    let bundle = pretrain(&ws.unlabeled(), &arch, &plan, &mask, 42)?;

    for (epoch, loss) in bundle.meta.pretrain_loss.iter().enumerate() {
        println!("epoch {epoch:2}: masked MSE {loss:.5}");
    }
    let l = &bundle.meta.pretrain_loss;
    println!(
        "loss ratio final/first = {:.3}",
        l.last().unwrap() / l.first().unwrap()
    );
    Ok(())
}
