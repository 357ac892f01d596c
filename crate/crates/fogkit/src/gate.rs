//! Model activation gate and the activity-threshold optimization sweep.
//!
//! The gate compares each window's mean acceleration magnitude — computed
//! on the raw, pre-centering samples, where the ~1 g gravity baseline keeps
//! rest distinguishable — against a threshold `alpha`. Rejected windows
//! skip the model entirely and are scored as predicted-NonFog downstream,
//! which is what makes gated sensitivity monotone in `alpha`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{FogError, Result};
use crate::ingest::Label;
use crate::metrics::{self, PredictionTrace, WindowRecord};
use crate::ssl::ModelBundle;
use crate::windowing::WindowSet;

/// Magnitude threshold in the stream's declared unit (canonically g).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub alpha: f64,
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(FogError::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Which window metric the threshold sweep treats as "performance".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMetric {
    F1,
    Sensitivity,
    Accuracy,
}

impl BaselineMetric {
    fn of(self, trace: &PredictionTrace) -> Result<Option<f64>> {
        let m = metrics::window_metrics(trace)?;
        Ok(match self {
            BaselineMetric::F1 => m.f1,
            BaselineMetric::Sensitivity => m.sensitivity,
            BaselineMetric::Accuracy => Some(m.accuracy),
        })
    }
}

/// Sweep parameters for [`ato`]. `tolerance` bounds how far performance may
/// drift from the baseline measured at `alpha_start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtoConfig {
    pub alpha_start: f64,
    pub alpha_final: f64,
    pub delta_alpha: f64,
    pub tolerance: f64,
    pub metric: BaselineMetric,
}

impl AtoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_start > self.alpha_final {
            return Err(FogError::Config("alpha_start must not exceed alpha_final".into()));
        }
        if self.delta_alpha <= 0.0 {
            return Err(FogError::Config("delta_alpha must be positive".into()));
        }
        if self.tolerance < 0.0 {
            return Err(FogError::Config("tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// Mean per-sample Euclidean norm over a raw `T' x C` window.
pub fn magnitude(frame: &ArrayView2<f64>) -> f64 {
    let rows = frame.nrows();
    if rows == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for r in frame.rows() {
        acc += r.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    acc / rows as f64
}

/// Exhaustive, exclusive partition into active and rejected windows.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSplit {
    pub active: Vec<usize>,
    pub rejected: Vec<usize>,
    pub rejection_ratio: f64,
}

/// Partition by the stored raw-window magnitudes: active iff `M_i >= alpha`.
pub fn gate(ws: &WindowSet, cfg: &GateConfig) -> Result<GateSplit> {
    cfg.validate()?;
    Ok(gate_magnitudes(&ws.raw_magnitude, cfg.alpha))
}

/// Same partition over raw frames (magnitudes computed on the spot).
pub fn gate_frames(frames: &[ArrayView2<f64>], cfg: &GateConfig) -> Result<GateSplit> {
    cfg.validate()?;
    let mags: Vec<f64> = frames.iter().map(magnitude).collect();
    Ok(gate_magnitudes(&mags, cfg.alpha))
}

fn gate_magnitudes(mags: &[f64], alpha: f64) -> GateSplit {
    let mut active = Vec::new();
    let mut rejected = Vec::new();
    for (i, &m) in mags.iter().enumerate() {
        if m >= alpha {
            active.push(i);
        } else {
            rejected.push(i);
        }
    }
    let total = mags.len().max(1);
    GateSplit {
        rejection_ratio: rejected.len() as f64 / total as f64,
        active,
        rejected,
    }
}

/// Anything that can turn one window into a FoG probability. Implemented by
/// [`ModelBundle`]; tests substitute stubs with controlled cost.
pub trait WindowClassifier {
    fn classify(&self, frame: ArrayView2<f64>) -> f64;
}

impl WindowClassifier for ModelBundle {
    fn classify(&self, frame: ArrayView2<f64>) -> f64 {
        self.classify_window(frame)
    }
}

fn record_for(
    ws: &WindowSet,
    i: usize,
    probability: f64,
    gated_out: bool,
    model_cost_s: f64,
) -> WindowRecord {
    WindowRecord {
        start_s: ws.start_s(i),
        truth: ws.labels[i],
        probability,
        decision: if !gated_out && probability >= 0.5 { Label::Fog } else { Label::NonFog },
        gated_out,
        model_cost_s,
    }
}

/// Run the classifier on every window (no gate). The per-window wall time
/// feeds the duty-cycle accounting.
pub fn run_ungated(model: &dyn WindowClassifier, ws: &WindowSet) -> Result<PredictionTrace> {
    if ws.is_empty() {
        return Err(FogError::EmptyInput("no windows to classify".into()));
    }
    let mut records = Vec::with_capacity(ws.len());
    for i in 0..ws.len() {
        let t0 = Instant::now();
        let p = model.classify(ws.frame(i));
        records.push(record_for(ws, i, p, false, t0.elapsed().as_secs_f64()));
    }
    Ok(PredictionTrace {
        records,
        window_s: ws.spec.window_s,
        stride_s: ws.spec.stride_s(),
        gate_cost_s: 0.0,
        model_cost_reference_s: None,
    })
}

/// Gate first, classify only the active windows. Rejected windows get the
/// NonFog decision with probability 0. The measured mean gate-decision cost
/// is recorded on the trace.
pub fn run_gated(
    model: &dyn WindowClassifier,
    ws: &WindowSet,
    cfg: &GateConfig,
) -> Result<PredictionTrace> {
    cfg.validate()?;
    if ws.is_empty() {
        return Err(FogError::EmptyInput("no windows to classify".into()));
    }
    let mut records = Vec::with_capacity(ws.len());
    let mut gate_cost = 0.0;
    for i in 0..ws.len() {
        let t0 = Instant::now();
        let active = ws.raw_magnitude[i] >= cfg.alpha;
        gate_cost += t0.elapsed().as_secs_f64();
        if active {
            let t1 = Instant::now();
            let p = model.classify(ws.frame(i));
            records.push(record_for(ws, i, p, false, t1.elapsed().as_secs_f64()));
        } else {
            records.push(record_for(ws, i, 0.0, true, 0.0));
        }
    }
    Ok(PredictionTrace {
        records,
        window_s: ws.spec.window_s,
        stride_s: ws.spec.stride_s(),
        gate_cost_s: gate_cost / ws.len() as f64,
        model_cost_reference_s: None,
    })
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub n_active: usize,
    pub rejection_ratio: f64,
    /// The sweep metric; absent when undefined (e.g. F1 with no positive
    /// predictions left).
    pub performance: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub mean_inference_ms: f64,
}

/// Classify every window once, then score the gated system at each `alpha`.
/// Rejected windows are rescored as predicted-NonFog; active predictions
/// are exactly the ungated ones (gating never alters a computed
/// prediction).
pub fn gate_sweep(
    model: &dyn WindowClassifier,
    ws: &WindowSet,
    alphas: &[f64],
    metric: BaselineMetric,
) -> Result<Vec<SweepRow>> {
    let base = run_ungated(model, ws)?;
    alphas
        .iter()
        .map(|&alpha| evaluate_alpha(&base, ws, alpha, metric))
        .collect()
}

fn evaluate_alpha(
    base: &PredictionTrace,
    ws: &WindowSet,
    alpha: f64,
    metric: BaselineMetric,
) -> Result<SweepRow> {
    let gated = apply_gate_to_trace(base, ws, alpha);
    let m = metrics::window_metrics(&gated)?;
    let performance = metric.of(&gated)?;
    let active = gated.records.iter().filter(|r| !r.gated_out).count();
    let mean_ms = if active > 0 {
        gated
            .records
            .iter()
            .filter(|r| !r.gated_out)
            .map(|r| r.model_cost_s)
            .sum::<f64>()
            / active as f64
            * 1e3
    } else {
        0.0
    };
    Ok(SweepRow {
        alpha,
        n_active: active,
        rejection_ratio: 1.0 - active as f64 / gated.len() as f64,
        performance,
        sensitivity: m.sensitivity,
        specificity: m.specificity,
        f1: m.f1,
        mean_inference_ms: mean_ms,
    })
}

/// Rewrite an ungated trace as if the gate at `alpha` had run: rejected
/// windows become NonFog decisions with zero model cost.
pub fn apply_gate_to_trace(base: &PredictionTrace, ws: &WindowSet, alpha: f64) -> PredictionTrace {
    let mut out = base.clone();
    for (i, r) in out.records.iter_mut().enumerate() {
        if ws.raw_magnitude[i] < alpha {
            r.gated_out = true;
            r.decision = Label::NonFog;
            r.probability = 0.0;
            r.model_cost_s = 0.0;
        }
    }
    // The ungated run doubles as the duty-cycle reference.
    let mean_model: f64 =
        base.records.iter().map(|r| r.model_cost_s).sum::<f64>() / base.len().max(1) as f64;
    out.model_cost_reference_s = Some(mean_model);
    out
}

/// Result of the activity-threshold sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtoOutcome {
    /// Largest swept alpha whose performance stayed within tolerance.
    pub alpha_opt: f64,
    /// First alpha that broke tolerance (the literal loop exit), if any.
    pub break_alpha: Option<f64>,
    /// Set when the sweep exhausted `[alpha_start, alpha_final]` without a
    /// violation.
    pub no_degradation_found: bool,
    /// Active window indices at `alpha_opt`.
    pub active: Vec<usize>,
    pub sweep: Vec<SweepRow>,
    /// Number of gate evaluations performed (one per visited alpha).
    pub evaluations: usize,
}

/// Activity-threshold optimization: ascend alpha from `alpha_start` in
/// `delta_alpha` steps, stop at the first alpha whose performance deviates
/// from the `alpha_start` baseline by more than `tolerance`, and return the
/// last satisfying alpha with its active set. Model predictions are
/// computed once; each step re-applies only the gate.
pub fn ato(
    model: &dyn WindowClassifier,
    ws: &WindowSet,
    cfg: &AtoConfig,
) -> Result<AtoOutcome> {
    cfg.validate()?;
    if ws.is_empty() {
        return Err(FogError::EmptyInput("no windows for the threshold sweep".into()));
    }
    let base = run_ungated(model, ws)?;

    let mut sweep = Vec::new();
    let mut alpha = cfg.alpha_start;
    let mut baseline: Option<f64> = None;
    let mut last_ok = cfg.alpha_start;
    let mut break_alpha = None;
    let mut evaluations = 0usize;

    // Guard against a zero-measure step from float drift.
    let eps = cfg.delta_alpha * 1e-9;
    while alpha <= cfg.alpha_final + eps {
        let row = evaluate_alpha(&base, ws, alpha, cfg.metric)?;
        evaluations += 1;
        let p = row.performance;
        sweep.push(row);
        if baseline.is_none() {
            baseline = Some(p.ok_or_else(|| {
                FogError::Undefined(format!(
                    "{:?} is undefined at alpha_start; no baseline",
                    cfg.metric
                ))
            })?);
        }
        let p0 = baseline.expect("baseline set above");
        // An undefined metric mid-sweep means performance collapsed
        // outright; treat it as a tolerance violation.
        let ok = p.is_some_and(|p| (p - p0).abs() <= cfg.tolerance);
        if ok {
            last_ok = alpha;
            alpha += cfg.delta_alpha;
        } else {
            break_alpha = Some(alpha);
            break;
        }
    }

    let split = gate_magnitudes(&ws.raw_magnitude, last_ok);
    Ok(AtoOutcome {
        alpha_opt: last_ok,
        break_alpha,
        no_degradation_found: break_alpha.is_none(),
        active: split.active,
        sweep,
        evaluations,
    })
}

/// Sweep CSV:
/// `alpha,n_active,rejection_ratio,sensitivity,specificity,f1,mean_inference_ms`.
pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out =
        String::from("alpha,n_active,rejection_ratio,sensitivity,specificity,f1,mean_inference_ms\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.alpha,
            r.n_active,
            r.rejection_ratio,
            opt(r.sensitivity),
            opt(r.specificity),
            opt(r.f1),
            r.mean_inference_ms
        );
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windowing::{SegmentMode, WindowSpec};
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Probability = scaled window energy; deterministic, model-free.
    struct EnergyStub;

    impl WindowClassifier for EnergyStub {
        fn classify(&self, frame: ArrayView2<f64>) -> f64 {
            let e = frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64;
            (e * 4.0).min(1.0)
        }
    }

    fn synth_ws(n: usize, seed: u64) -> WindowSet {
        // Rest windows near 1 g with tiny jitter; active windows with extra
        // oscillation energy; FoG truth on the highest-energy half of the
        // active windows.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frames = Array3::zeros((n, 40, 3));
        let mut labels = Vec::with_capacity(n);
        let mut mags = Vec::with_capacity(n);
        for i in 0..n {
            let kind = i % 4; // 0,1 rest; 2 walk; 3 fog
            let amp = match kind {
                0 | 1 => 0.003,
                2 => 0.25,
                _ => 0.45,
            };
            for t in 0..40 {
                let x = t as f64 * 0.8;
                frames[[i, t, 0]] = amp * x.sin() + 0.001 * rng.gen_range(-1.0..1.0);
                frames[[i, t, 1]] = amp * x.cos();
                frames[[i, t, 2]] = 1.0 + 0.05 * amp * x.sin();
            }
            labels.push(if kind == 3 { Label::Fog } else { Label::NonFog });
            mags.push(magnitude(&frames.index_axis(ndarray::Axis(0), i)));
        }
        WindowSet {
            frames,
            fog_fraction: labels.iter().map(|l| l.as_bit() as f64).collect(),
            start_index: (0..n).map(|i| i * 60).collect(),
            raw_magnitude: mags,
            labels,
            spec: WindowSpec {
                mode: SegmentMode::InferenceFixed,
                ..WindowSpec::inference()
            },
            rate_hz: 40.0,
            subject_id: "g".into(),
        }
    }

    #[test]
    fn magnitude_hand_values() {
        let zero = Array2::zeros((10, 3));
        assert_eq!(magnitude(&zero.view()), 0.0);
        // 3-4-5 triple scaled: (0.6, 0.8, 0.0) has norm 1.
        let mut f = Array2::zeros((7, 3));
        for t in 0..7 {
            f[[t, 0]] = 0.6;
            f[[t, 1]] = 0.8;
        }
        assert!((magnitude(&f.view()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn magnitude_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Array2::from_shape_fn((120, 3), |_| rng.gen_range(-2.0..2.0));
        let got = magnitude(&f.view());
        let mut acc = 0.0;
        for t in 0..120 {
            let (a, b, c) = (f[[t, 0]], f[[t, 1]], f[[t, 2]]);
            acc += (a * a + b * b + c * c).sqrt();
        }
        assert!((got - acc / 120.0).abs() < 1e-12);
    }

    #[test]
    fn gate_partition_is_exhaustive_and_exclusive() {
        let ws = synth_ws(40, 1);
        let split = gate(&ws, &GateConfig { alpha: 1.01 }).unwrap();
        assert_eq!(split.active.len() + split.rejected.len(), ws.len());
        for &i in &split.active {
            assert!(ws.raw_magnitude[i] >= 1.01);
        }
        for &i in &split.rejected {
            assert!(ws.raw_magnitude[i] < 1.01);
        }
        assert_eq!(
            split.rejection_ratio,
            split.rejected.len() as f64 / ws.len() as f64
        );
    }

    #[test]
    fn alpha_zero_rejects_nothing() {
        let ws = synth_ws(24, 2);
        let split = gate(&ws, &GateConfig { alpha: 0.0 }).unwrap();
        assert_eq!(split.rejection_ratio, 0.0);
        assert!(split.rejected.is_empty());
    }

    #[test]
    fn alpha_above_max_rejects_everything() {
        let ws = synth_ws(24, 3);
        let max = ws.raw_magnitude.iter().cloned().fold(0.0, f64::max);
        let split = gate(&ws, &GateConfig { alpha: max + 1.0 }).unwrap();
        assert_eq!(split.rejection_ratio, 1.0);
        assert!(split.active.is_empty());
    }

    #[test]
    fn rejection_matches_brute_force_count() {
        let ws = synth_ws(100, 5);
        let alpha = 1.005;
        let split = gate(&ws, &GateConfig { alpha }).unwrap();
        let want = ws.raw_magnitude.iter().filter(|&&m| m < alpha).count();
        assert_eq!(split.rejected.len(), want);
    }

    #[test]
    fn gated_decisions_equal_ungated_on_active_set() {
        let ws = synth_ws(60, 6);
        let ungated = run_ungated(&EnergyStub, &ws).unwrap();
        let gated = run_gated(&EnergyStub, &ws, &GateConfig { alpha: 1.01 }).unwrap();
        for (u, g) in ungated.records.iter().zip(&gated.records) {
            if !g.gated_out {
                assert_eq!(u.decision, g.decision);
                assert_eq!(u.probability, g.probability);
            } else {
                assert_eq!(g.decision, Label::NonFog);
            }
        }
    }

    #[test]
    fn sweep_is_monotone_in_alpha() {
        let ws = synth_ws(120, 7);
        let alphas: Vec<f64> = (0..20).map(|i| 0.95 + i as f64 * 0.01).collect();
        let rows = gate_sweep(&EnergyStub, &ws, &alphas, BaselineMetric::F1).unwrap();
        for pair in rows.windows(2) {
            assert!(pair[1].rejection_ratio >= pair[0].rejection_ratio);
            let s0 = pair[0].sensitivity.unwrap();
            let s1 = pair[1].sensitivity.unwrap();
            assert!(s1 <= s0 + 1e-12, "sensitivity rose with alpha: {s0} -> {s1}");
        }
    }

    #[test]
    fn ato_no_degradation_returns_final_with_flag() {
        // Performance constant in alpha (stub ignores gating on this set's
        // range below every magnitude): loop exhausts, flag set.
        let ws = synth_ws(40, 8);
        let cfg = AtoConfig {
            alpha_start: 0.0,
            alpha_final: 0.5,
            delta_alpha: 0.1,
            tolerance: 0.0,
            metric: BaselineMetric::Sensitivity,
        };
        let out = ato(&EnergyStub, &ws, &cfg).unwrap();
        assert!(out.no_degradation_found);
        assert_eq!(out.alpha_opt, 0.5);
        assert_eq!(out.evaluations, 6); // ceil(0.5/0.1)+1
    }

    #[test]
    fn ato_finds_known_degradation_threshold() {
        // FoG windows sit at magnitude ~1.02+; sweeping past that loses
        // sensitivity sharply, so alpha_opt must land within one step below
        // the first FoG magnitude.
        let ws = synth_ws(200, 9);
        let fog_mags: Vec<f64> = (0..ws.len())
            .filter(|&i| ws.labels[i].is_fog())
            .map(|i| ws.raw_magnitude[i])
            .collect();
        let alpha_star = fog_mags.iter().cloned().fold(f64::INFINITY, f64::min);
        let cfg = AtoConfig {
            alpha_start: 0.9,
            alpha_final: 1.2,
            delta_alpha: 0.005,
            tolerance: 0.01,
            metric: BaselineMetric::Sensitivity,
        };
        let out = ato(&EnergyStub, &ws, &cfg).unwrap();
        assert!(!out.no_degradation_found);
        assert!(
            out.alpha_opt <= alpha_star && out.alpha_opt >= alpha_star - cfg.delta_alpha,
            "alpha_opt {} vs alpha* {}",
            out.alpha_opt,
            alpha_star
        );
        let max_evals = ((cfg.alpha_final - cfg.alpha_start) / cfg.delta_alpha).ceil() as usize + 1;
        assert!(out.evaluations <= max_evals);
    }

    #[test]
    fn sweep_csv_has_documented_header() {
        let ws = synth_ws(24, 10);
        let rows = gate_sweep(&EnergyStub, &ws, &[0.0, 1.0], BaselineMetric::Accuracy).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "alpha,n_active,rejection_ratio,sensitivity,specificity,f1,mean_inference_ms\n"
        ));
        assert_eq!(text.lines().count(), 3);
    }
}
