//! Label-ratio sweep: SSL against the compute-matched supervised baseline
//! at varying labeled-data budgets.

use serde::{Deserialize, Serialize};

use crate::error::{FogError, Result};
use crate::ingest::SignalStream;
use crate::metrics;
use crate::seeds;
use crate::ssl::{self, TrainPlan};

use super::logo::{group_windows, make_logo_split, LogoConfig};
use super::synth::SubjectFeatures;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    /// `ssl` or `supervised`.
    pub model: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    /// Fractions that could not run (e.g. the subsample went single-class),
    /// with the reason.
    pub skipped: Vec<(f64, String)>,
}

/// Run the sweep on the first LOGO direction (train on group A, evaluate on
/// group B). Pretraining happens once — it never sees labels — and each
/// fraction fine-tunes from the same pretrained encoder; the supervised
/// baseline retrains end-to-end per fraction.
pub fn label_ratio_sweep(
    data: &[(SignalStream, SubjectFeatures)],
    cfg: &LogoConfig,
    fractions: &[f64],
) -> Result<SweepOutcome> {
    if fractions.is_empty() {
        return Err(FogError::Config("no fractions to sweep".into()));
    }
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(FogError::Config(format!("fraction {f} outside (0, 1]")));
        }
    }
    let feats: Vec<SubjectFeatures> = data.iter().map(|(_, f)| f.clone()).collect();
    let plan = make_logo_split(&feats, seeds::derive(cfg.seed, "logo-split"))?;
    let train_ws = group_windows(data, &plan.group_a, &cfg.window_train)?;
    let test_sets: Vec<_> = plan
        .group_b
        .iter()
        .map(|id| {
            let stream = data
                .iter()
                .find(|(_, f)| &f.subject_id == id)
                .map(|(s, _)| s)
                .expect("split ids come from the data");
            crate::windowing::segment(stream, &cfg.window_infer)
        })
        .collect::<Result<Vec<_>>>()?;

    let seed = seeds::derive_n(cfg.seed, "repeat", 0);
    let dir_seed = seeds::derive(seed, "eval-b");
    let pre = ssl::pretrain(
        &train_ws.unlabeled(),
        &cfg.arch,
        &cfg.plan,
        &cfg.mask,
        seeds::derive(dir_seed, "pretrain"),
    )?;

    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &fraction in fractions {
        let frac_plan = TrainPlan {
            label_fraction: fraction,
            ..cfg.plan
        };
        let mut eval = |model: &str, bundle: ssl::ModelBundle| -> Result<()> {
            let mut all = Vec::new();
            for ws in &test_sets {
                all.extend(ssl::predict(&bundle, ws)?.records);
            }
            let trace = metrics::PredictionTrace {
                records: all,
                window_s: cfg.window_infer.window_s,
                stride_s: cfg.window_infer.stride_s(),
                gate_cost_s: 0.0,
                model_cost_reference_s: None,
            };
            let m = metrics::window_metrics(&trace)?;
            points.push(SweepPoint {
                fraction,
                model: model.to_string(),
                precision: m.precision,
                recall: m.sensitivity,
                f1: m.f1,
                accuracy: m.accuracy,
            });
            Ok(())
        };

        match ssl::finetune(&pre, &train_ws, &frac_plan, seeds::derive(dir_seed, "finetune")) {
            Ok(bundle) => eval("ssl", bundle)?,
            Err(FogError::Config(msg)) => {
                skipped.push((fraction, format!("ssl: {msg}")));
            }
            Err(e) => return Err(e),
        }
        match ssl::train_supervised(&cfg.arch, &train_ws, &frac_plan, seeds::derive(dir_seed, "sup"))
        {
            Ok(bundle) => eval("supervised", bundle)?,
            Err(FogError::Config(msg)) => {
                skipped.push((fraction, format!("supervised: {msg}")));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SweepOutcome { points, skipped })
}

/// `fraction,model,precision,recall,f1,accuracy`.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("fraction,model,precision,recall,f1,accuracy\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6}\n",
            p.fraction,
            p.model,
            opt(p.precision),
            opt(p.recall),
            opt(p.f1),
            p.accuracy
        ));
    }
    out
}
