//! Window- and episode-level evaluation.
//!
//! Window metrics treat FoG as the positive class. Episode analytics follow
//! the run-of-consecutive-FoG-windows definition: an episode counts as
//! detected when at least one of its windows is predicted FoG, per-episode
//! detection quality is the fraction of its windows predicted FoG, and
//! latency is measured window-start to window-start at the inference
//! stride. False-positive runs are scored by their distance to the nearest
//! true-FoG window.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FogError, Result};
use crate::ingest::Label;

/// One classified window, aligned to ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowRecord {
    pub start_s: f64,
    pub truth: Label,
    pub probability: f64,
    pub decision: Label,
    /// True when the activation gate rejected the window (the model never
    /// ran; the decision is NonFog by policy).
    pub gated_out: bool,
    /// Wall time the model spent on this window (0 when gated out).
    pub model_cost_s: f64,
}

/// Time-ordered per-window predictions plus the timing bookkeeping the
/// duty-cycle accounting needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub records: Vec<WindowRecord>,
    pub window_s: f64,
    pub stride_s: f64,
    /// Mean measured per-window gate cost (0 for ungated runs).
    pub gate_cost_s: f64,
    /// Mean per-window model cost from an ungated reference run, when one
    /// was measured.
    pub model_cost_reference_s: Option<f64>,
}

impl PredictionTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn decisions(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.decision).collect()
    }

    pub fn truths(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.truth).collect()
    }

    /// CSV with header
    /// `window,start_s,truth,probability,decision,gated_out,model_cost_s`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        out.push_str("window,start_s,truth,probability,decision,gated_out,model_cost_s\n");
        for (i, r) in self.records.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{}",
                r.start_s, r.truth, r.probability, r.decision, r.gated_out as u8, r.model_cost_s
            );
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, window_s: f64, stride_s: f64) -> Result<PredictionTrace> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| FogError::EmptyInput("trace CSV has no header".into()))?;
        if header.trim() != "window,start_s,truth,probability,decision,gated_out,model_cost_s" {
            return Err(FogError::Format(format!("unexpected trace header `{}`", header.trim())));
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(FogError::Parse {
                    line: lineno,
                    msg: format!("expected 7 fields, got {}", f.len()),
                });
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| FogError::Parse {
                    line: lineno,
                    msg: format!("bad number `{s}`"),
                })
            };
            let bit = |s: &str| -> Result<Label> {
                match s {
                    "0" => Ok(Label::NonFog),
                    "1" => Ok(Label::Fog),
                    _ => Err(FogError::Parse {
                        line: lineno,
                        msg: format!("bad label `{s}`"),
                    }),
                }
            };
            records.push(WindowRecord {
                start_s: num(f[1])?,
                truth: bit(f[2])?,
                probability: num(f[3])?,
                decision: bit(f[4])?,
                gated_out: f[5] == "1",
                model_cost_s: num(f[6])?,
            });
        }
        Ok(PredictionTrace {
            records,
            window_s,
            stride_s,
            gate_cost_s: 0.0,
            model_cost_reference_s: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// Window-level rates. Rates whose denominator is empty are absent rather
/// than zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: f64,
    pub counts: ConfusionCounts,
}

pub fn confusion(trace: &PredictionTrace) -> ConfusionCounts {
    let mut c = ConfusionCounts {
        true_pos: 0,
        false_pos: 0,
        false_neg: 0,
        true_neg: 0,
    };
    for r in &trace.records {
        match (r.truth.is_fog(), r.decision.is_fog()) {
            (true, true) => c.true_pos += 1,
            (false, true) => c.false_pos += 1,
            (true, false) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    c
}

pub fn window_metrics(trace: &PredictionTrace) -> Result<WindowMetrics> {
    if trace.is_empty() {
        return Err(FogError::EmptyInput("empty prediction trace".into()));
    }
    let c = confusion(trace);
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let sensitivity = ratio(c.true_pos, c.true_pos + c.false_neg);
    let specificity = ratio(c.true_neg, c.true_neg + c.false_pos);
    let precision = ratio(c.true_pos, c.true_pos + c.false_pos);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(WindowMetrics {
        sensitivity,
        specificity,
        precision,
        f1,
        accuracy: (c.true_pos + c.true_neg) as f64 / c.total() as f64,
        counts: c,
    })
}

/// ROC AUC by the Mann–Whitney rank statistic with midranks for ties.
pub fn roc_auc(trace: &PredictionTrace) -> Result<f64> {
    let scores: Vec<(f64, bool)> = trace
        .records
        .iter()
        .map(|r| (r.probability, r.truth.is_fog()))
        .collect();
    roc_auc_from_scores(&scores)
}

pub fn roc_auc_from_scores(scores: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scores.iter().filter(|(_, y)| *y).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(FogError::Undefined(
            "AUC needs both classes present in the ground truth".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .0
            .partial_cmp(&scores[b].0)
            .expect("non-finite probability in AUC")
    });

    // Midranks over tie groups (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]].0 == scores[order[i]].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if scores[idx].1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DurationBucket {
    /// < 6 s
    Short,
    /// 6–12 s inclusive
    Medium,
    /// > 12 s
    Long,
}

impl DurationBucket {
    pub fn of(duration_s: f64) -> DurationBucket {
        if duration_s < 6.0 {
            DurationBucket::Short
        } else if duration_s <= 12.0 {
            DurationBucket::Medium
        } else {
            DurationBucket::Long
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DurationBucket::Short => "short",
            DurationBucket::Medium => "medium",
            DurationBucket::Long => "long",
        }
    }
}

/// A maximal run of ground-truth FoG windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start_window: usize,
    /// Inclusive.
    pub end_window: usize,
    pub duration_s: f64,
    pub bucket: DurationBucket,
}

/// Maximal runs of FoG labels; duration spans the first window's start to
/// the last window's end at the given stride.
pub fn extract_episodes(labels: &[Label], window_s: f64, stride_s: f64) -> Vec<Episode> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, l) in labels.iter().enumerate() {
        match (l.is_fog(), run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                out.push(make_episode(s, i - 1, window_s, stride_s));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        out.push(make_episode(s, labels.len() - 1, window_s, stride_s));
    }
    out
}

fn make_episode(start: usize, end: usize, window_s: f64, stride_s: f64) -> Episode {
    let duration_s = window_s + (end - start) as f64 * stride_s;
    Episode {
        start_window: start,
        end_window: end,
        duration_s,
        bucket: DurationBucket::of(duration_s),
    }
}

/// Outcome for one true episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode: Episode,
    pub detected: bool,
    /// Percentage of this episode's windows predicted FoG.
    pub dfog_pct: f64,
    /// Seconds from episode onset to the first detected window's start;
    /// absent when undetected.
    pub latency_s: Option<f64>,
}

/// A maximal predicted-FoG run with no ground-truth FoG overlap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpEpisode {
    pub start_window: usize,
    pub end_window: usize,
    /// Seconds (window-start to window-start) to the nearest true FoG
    /// window; absent when the trace has no true FoG at all.
    pub min_distance_s: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BucketStats {
    pub episodes: usize,
    pub detected: usize,
    pub dfe_pct: Option<f64>,
    /// Mean per-episode detected-window percentage.
    pub dfog_mean_pct: Option<f64>,
    pub latency_mean_s: Option<f64>,
    /// Population standard deviation over detected episodes.
    pub latency_sd_s: Option<f64>,
    pub latency_max_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub overall: BucketStats,
    pub short: BucketStats,
    pub medium: BucketStats,
    pub long: BucketStats,
    /// Trace-wide detected FoG windows: TP / all true-FoG windows, percent.
    pub dfw_trace_pct: Option<f64>,
    pub episodes: Vec<EpisodeOutcome>,
    pub fp_episodes: Vec<FpEpisode>,
}

fn bucket_stats(outcomes: &[&EpisodeOutcome]) -> BucketStats {
    let episodes = outcomes.len();
    let detected = outcomes.iter().filter(|o| o.detected).count();
    let latencies: Vec<f64> = outcomes.iter().filter_map(|o| o.latency_s).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    BucketStats {
        episodes,
        detected,
        dfe_pct: (episodes > 0).then(|| 100.0 * detected as f64 / episodes as f64),
        dfog_mean_pct: (episodes > 0)
            .then(|| outcomes.iter().map(|o| o.dfog_pct).sum::<f64>() / episodes as f64),
        latency_mean_s: (!latencies.is_empty()).then(|| mean(&latencies)),
        latency_sd_s: (!latencies.is_empty()).then(|| {
            let m = mean(&latencies);
            (latencies.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / latencies.len() as f64)
                .sqrt()
        }),
        latency_max_s: latencies
            .iter()
            .copied()
            .fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |a| a.max(l)))),
    }
}

pub fn episode_report(trace: &PredictionTrace) -> EpisodeReport {
    let truths = trace.truths();
    let decisions = trace.decisions();
    let episodes = extract_episodes(&truths, trace.window_s, trace.stride_s);

    let outcomes: Vec<EpisodeOutcome> = episodes
        .iter()
        .map(|ep| {
            let total = ep.end_window - ep.start_window + 1;
            let hits: Vec<usize> = (ep.start_window..=ep.end_window)
                .filter(|&i| decisions[i].is_fog())
                .collect();
            EpisodeOutcome {
                episode: *ep,
                detected: !hits.is_empty(),
                dfog_pct: 100.0 * hits.len() as f64 / total as f64,
                latency_s: hits
                    .first()
                    .map(|&first| (first - ep.start_window) as f64 * trace.stride_s),
            }
        })
        .collect();

    // Maximal predicted-FoG runs with zero true-FoG overlap.
    let mut fp_episodes = Vec::new();
    let fog_truth_idx: Vec<usize> = (0..truths.len()).filter(|&i| truths[i].is_fog()).collect();
    let mut i = 0;
    while i < decisions.len() {
        if decisions[i].is_fog() {
            let mut j = i;
            while j + 1 < decisions.len() && decisions[j + 1].is_fog() {
                j += 1;
            }
            let overlap = (i..=j).any(|k| truths[k].is_fog());
            if !overlap {
                let min_distance_s = fog_truth_idx
                    .iter()
                    .map(|&m| if m < i { (i - m) as f64 } else { (m - j) as f64 })
                    .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
                    .map(|d| d * trace.stride_s);
                fp_episodes.push(FpEpisode {
                    start_window: i,
                    end_window: j,
                    min_distance_s,
                });
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let by_bucket = |b: DurationBucket| -> Vec<&EpisodeOutcome> {
        outcomes.iter().filter(|o| o.episode.bucket == b).collect()
    };
    let all: Vec<&EpisodeOutcome> = outcomes.iter().collect();
    let fog_windows = fog_truth_idx.len();
    let tp = fog_truth_idx
        .iter()
        .filter(|&&i| decisions[i].is_fog())
        .count();

    EpisodeReport {
        overall: bucket_stats(&all),
        short: bucket_stats(&by_bucket(DurationBucket::Short)),
        medium: bucket_stats(&by_bucket(DurationBucket::Medium)),
        long: bucket_stats(&by_bucket(DurationBucket::Long)),
        dfw_trace_pct: (fog_windows > 0).then(|| 100.0 * tp as f64 / fog_windows as f64),
        episodes: outcomes,
        fp_episodes,
    }
}

/// Single-pass neighbor smoothing: an interior window whose two neighbors
/// agree with each other but not with it is flipped to match them. Reads
/// the original decisions only (no iteration to a fixpoint); boundary
/// windows never change; probabilities are untouched.
pub fn majority_vote(trace: &PredictionTrace) -> PredictionTrace {
    let mut out = trace.clone();
    let orig = trace.decisions();
    for i in 1..orig.len().saturating_sub(1) {
        if orig[i - 1] == orig[i + 1] && orig[i - 1] != orig[i] {
            out.records[i].decision = orig[i - 1];
        }
    }
    out
}

/// Repeated application of [`majority_vote`] for sensitivity analysis.
pub fn majority_vote_iterated(trace: &PredictionTrace, passes: usize) -> PredictionTrace {
    let mut t = trace.clone();
    for _ in 0..passes {
        t = majority_vote(&t);
    }
    t
}

/// Mean per-window cost of active (model-executed) and rejected windows
/// plus the saved fraction against an ungated reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DutyCycleReport {
    pub windows: usize,
    pub active: usize,
    pub rejected: usize,
    pub mean_model_cost_active_s: Option<f64>,
    pub mean_cost_rejected_s: f64,
    /// `1 - gated_total / ungated_total`, where the gated total includes
    /// the gate's own cost on every window.
    pub saved_fraction: f64,
}

/// Duty-cycle accounting over a (possibly gated) trace. The ungated
/// reference is `model_cost_reference_s` when the trace carries one,
/// otherwise the mean model cost over active windows.
pub fn duty_cycle_report(trace: &PredictionTrace) -> Result<DutyCycleReport> {
    if trace.is_empty() {
        return Err(FogError::EmptyInput("empty trace in duty-cycle accounting".into()));
    }
    let n = trace.len();
    let active: Vec<&WindowRecord> = trace.records.iter().filter(|r| !r.gated_out).collect();
    let n_active = active.len();
    let model_total: f64 = active.iter().map(|r| r.model_cost_s).sum();
    let mean_active = (n_active > 0).then(|| model_total / n_active as f64);

    let reference = trace.model_cost_reference_s.or(mean_active).ok_or_else(|| {
        FogError::Undefined(
            "no ungated reference cost: every window was rejected and the trace carries no \
             model_cost_reference_s"
                .into(),
        )
    })?;

    let gated_total = model_total + trace.gate_cost_s * n as f64;
    let ungated_total = reference * n as f64;
    Ok(DutyCycleReport {
        windows: n,
        active: n_active,
        rejected: n - n_active,
        mean_model_cost_active_s: mean_active,
        mean_cost_rejected_s: trace.gate_cost_s,
        saved_fraction: 1.0 - gated_total / ungated_total,
    })
}

/// Human-oriented rendering of the window metrics + episode report.
pub fn render_text_report(wm: &WindowMetrics, ep: &EpisodeReport) -> String {
    let fmt_opt = |v: Option<f64>| v.map_or("   -  ".to_string(), |x| format!("{x:6.3}"));
    let mut s = String::new();
    let _ = writeln!(s, "window metrics");
    let _ = writeln!(
        s,
        "  sens {}  spec {}  prec {}  f1 {}  acc {:.3}",
        fmt_opt(wm.sensitivity),
        fmt_opt(wm.specificity),
        fmt_opt(wm.precision),
        fmt_opt(wm.f1),
        wm.accuracy
    );
    let c = &wm.counts;
    let _ = writeln!(
        s,
        "  tp {} fp {} fn {} tn {}",
        c.true_pos, c.false_pos, c.false_neg, c.true_neg
    );
    let _ = writeln!(s, "episodes (dfe% / dfog% / latency mean±sd max)");
    for (name, b) in [
        ("overall", &ep.overall),
        ("short  ", &ep.short),
        ("medium ", &ep.medium),
        ("long   ", &ep.long),
    ] {
        let _ = writeln!(
            s,
            "  {name} n={:<3} det={:<3} dfe {} dfog {} lat {}±{} max {}",
            b.episodes,
            b.detected,
            fmt_opt(b.dfe_pct),
            fmt_opt(b.dfog_mean_pct),
            fmt_opt(b.latency_mean_s),
            fmt_opt(b.latency_sd_s),
            fmt_opt(b.latency_max_s),
        );
    }
    let _ = writeln!(
        s,
        "  dfw(trace) {}  fp-episodes {}",
        fmt_opt(ep.dfw_trace_pct),
        ep.fp_episodes.len()
    );
    s
}

/// Per-episode CSV: `episode_id,bucket,duration_s,detected,dfog_pct,latency_s`.
pub fn write_episode_csv(report: &EpisodeReport, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("episode_id,bucket,duration_s,detected,dfog_pct,latency_s\n");
    for (i, o) in report.episodes.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{}",
            o.episode.bucket.name(),
            o.episode.duration_s,
            o.detected as u8,
            o.dfog_pct,
            o.latency_s.map_or(String::new(), |l| l.to_string()),
        );
    }
    fs::write(path, out)?;
    Ok(())
}
