//! The full label-efficient pipeline at desk scale: pretrain on unlabeled
//! windows from one subject pool, fine-tune the classifier head on a
//! fraction of the labels with the encoder frozen, and evaluate on a
//! held-out subject.
//!
//!     cargo run --example finetune_frozen

use fogkit::harness::{synth_cohort, SynthSpec};
use fogkit::metrics::{roc_auc, window_metrics};
use fogkit::neuralcore::ArchSpec;
use fogkit::ssl::{finetune, predict, pretrain, MaskSpec, TrainPlan};
use fogkit::windowing::{segment, WindowSet, WindowSpec};
use fogkit::Result;

fn main() -> Result<()> {
    let spec = SynthSpec {
        subjects: 3,
        duration_s: 240.0,
        rate_hz: 40.0,
        fog_rate: 0.3,
    };
    let cohort = synth_cohort(&spec, 5)?;

    // Train on the first two subjects, hold out the third.
    let train_sets: Vec<WindowSet> = cohort[..2]
        .iter()
        .map(|(s, _)| segment(s, &WindowSpec::train()))
        .collect::<Result<_>>()?;
    let train_ws = WindowSet::concat(&train_sets)?;
    let test_ws = segment(&cohort[2].0, &WindowSpec::inference())?;

    let arch = ArchSpec {
        conv_filters: vec![16, 32, 16],
        dense_units: vec![32, 16],
        ..ArchSpec::default()
    };
    let plan = TrainPlan {
        pretrain_epochs: 12,
        finetune_epochs: 25,
        finetune_lr: 0.003,
        label_fraction: 0.5, // only half the labels are ever used
        ..TrainPlan::default()
    };

    println!("pretraining on {} unlabeled windows...", train_ws.len());
    let pre = pretrain(&train_ws.unlabeled(), &arch, &plan, &MaskSpec::default(), 9)?;
    let before = pre.params.encoder_checksum();

    println!("fine-tuning on {:.0}% of the labels...", plan.label_fraction * 100.0);
    let tuned = finetune(&pre, &train_ws, &plan, 10)?;
    assert_eq!(
        tuned.params.encoder_checksum(),
        before,
        "frozen encoder must stay bit-identical"
    );

    let trace = predict(&tuned, &test_ws)?;
    let m = window_metrics(&trace)?;
    println!(
        "held-out subject: accuracy {:.3}, AUC {:.3}, sensitivity {:.3}, specificity {:.3}",
        m.accuracy,
        roc_auc(&trace)?,
        m.sensitivity.unwrap_or(f64::NAN),
        m.specificity.unwrap_or(f64::NAN),
    );
    Ok(())
}
