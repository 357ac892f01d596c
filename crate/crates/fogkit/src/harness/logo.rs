//! Leave-one-group-out cross-validation over two feature-matched cohorts.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FogError, Result};
use crate::ingest::SignalStream;
use crate::metrics::{self, PredictionTrace};
use crate::seeds;
use crate::ssl::{self, fingerprint_frames, MaskSpec, TrainPlan};
use crate::neuralcore::ArchSpec;
use crate::windowing::{segment, WindowSet, WindowSpec};

use super::synth::SubjectFeatures;

/// Two disjoint, feature-matched subject groups.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogoPlan {
    pub group_a: Vec<String>,
    pub group_b: Vec<String>,
    /// Subjects that had at least one feature imputed by the cohort median.
    pub imputed: Vec<String>,
}

/// Sort subjects by a composite z-score over (age, years since diagnosis,
/// UPDRS) — missing values imputed by the cohort median — then deal them
/// alternately into two groups after a seeded tie shuffle. Group means end
/// up within a pooled standard deviation on every feature.
pub fn make_logo_split(features: &[SubjectFeatures], seed: u64) -> Result<LogoPlan> {
    if features.len() < 2 {
        return Err(FogError::Config(
            "LOGO split needs at least two subjects".into(),
        ));
    }
    let get = [
        |f: &SubjectFeatures| f.age,
        |f: &SubjectFeatures| f.years_since_dx,
        |f: &SubjectFeatures| f.updrs,
    ];

    let mut imputed: Vec<String> = Vec::new();
    let mut values = vec![[0.0f64; 3]; features.len()];
    for (k, getter) in get.iter().enumerate() {
        let present: Vec<f64> = features.iter().filter_map(getter).collect();
        let median = median_of(&present);
        for (i, f) in features.iter().enumerate() {
            values[i][k] = match getter(f) {
                Some(v) => v,
                None => {
                    if !imputed.contains(&f.subject_id) {
                        imputed.push(f.subject_id.clone());
                    }
                    median.ok_or_else(|| {
                        FogError::Config(format!(
                            "feature {k} is missing for every subject; cannot impute"
                        ))
                    })?
                }
            };
        }
    }

    // Composite z-score.
    let mut scores = vec![0.0f64; features.len()];
    for k in 0..3 {
        let col: Vec<f64> = values.iter().map(|v| v[k]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64)
            .sqrt();
        for (s, v) in scores.iter_mut().zip(&col) {
            if sd > 0.0 {
                *s += (v - mean) / sd;
            }
        }
    }

    // Seeded shuffle first so equal scores land in random order under the
    // stable sort.
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    let mut group_a = Vec::new();
    let mut group_b = Vec::new();
    for (rank, &idx) in order.iter().enumerate() {
        if rank % 2 == 0 {
            group_a.push(features[idx].subject_id.clone());
        } else {
            group_b.push(features[idx].subject_id.clone());
        }
    }

    // Post condition: per-feature group-mean gap within one pooled SD.
    for k in 0..3 {
        let of = |ids: &[String]| -> Vec<f64> {
            features
                .iter()
                .enumerate()
                .filter(|(_, f)| ids.contains(&f.subject_id))
                .map(|(i, _)| values[i][k])
                .collect()
        };
        let a = of(&group_a);
        let b = of(&group_b);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let pooled = ((var(&a, ma) + var(&b, mb)) / 2.0).sqrt();
        if pooled > 0.0 && (ma - mb).abs() > pooled {
            return Err(FogError::Structural(format!(
                "LOGO split failed to match feature {k}: |{ma:.2} - {mb:.2}| > pooled SD {pooled:.2}"
            )));
        }
    }

    Ok(LogoPlan {
        group_a,
        group_b,
        imputed,
    })
}

fn median_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite feature"));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// One row of the LOGO report (metrics for one evaluated group, or a
/// summary row).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogoRow {
    pub group: String,
    pub prec: Option<f64>,
    pub rec: Option<f64>,
    pub f1: Option<f64>,
    pub acc: Option<f64>,
    pub spec: Option<f64>,
    pub loss: Option<f64>,
    pub dfe_pct: Option<f64>,
    pub dfw_pct: Option<f64>,
}

impl LogoRow {
    fn fields(&self) -> [Option<f64>; 8] {
        [
            self.prec, self.rec, self.f1, self.acc, self.spec, self.loss, self.dfe_pct,
            self.dfw_pct,
        ]
    }

    fn from_fields(group: String, f: [Option<f64>; 8]) -> LogoRow {
        LogoRow {
            group,
            prec: f[0],
            rec: f[1],
            f1: f[2],
            acc: f[3],
            spec: f[4],
            loss: f[5],
            dfe_pct: f[6],
            dfw_pct: f[7],
        }
    }
}

/// Full LOGO outcome: per-repeat group rows plus the averaged table with
/// avg/min/max/std summary rows (the standard deviation is the sample SD
/// across the two group rows).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogoReport {
    pub plan: LogoPlan,
    pub repeats: Vec<LogoRepeat>,
    pub table: Vec<LogoRow>,
    /// Window-set fingerprints per group, recorded for the train/test
    /// disjointness assertion and the manifest.
    pub fingerprints: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogoRepeat {
    pub seed: u64,
    pub rows: Vec<LogoRow>,
}

/// Everything `run_logo` needs besides the data.
#[derive(Debug, Clone)]
pub struct LogoConfig {
    pub window_train: WindowSpec,
    pub window_infer: WindowSpec,
    pub arch: ArchSpec,
    pub plan: TrainPlan,
    pub mask: MaskSpec,
    pub repeats: usize,
    pub seed: u64,
    /// Re-randomize group composition each repeat instead of only the
    /// training seeds.
    pub reshuffle_groups: bool,
    /// Train the same-architecture supervised baseline alongside.
    pub supervised: bool,
}

impl LogoConfig {
    pub fn desk(seed: u64) -> LogoConfig {
        LogoConfig {
            window_train: WindowSpec::train(),
            window_infer: WindowSpec::inference(),
            arch: ArchSpec::default(),
            plan: TrainPlan::desk(),
            mask: MaskSpec::default(),
            repeats: 1,
            seed,
            reshuffle_groups: false,
            supervised: false,
        }
    }
}

fn stream_of<'a>(
    data: &'a [(SignalStream, SubjectFeatures)],
    id: &str,
) -> Result<&'a SignalStream> {
    data.iter()
        .find(|(_, f)| f.subject_id == id)
        .map(|(s, _)| s)
        .ok_or_else(|| FogError::Config(format!("no stream for subject `{id}`")))
}

/// Segment and concatenate one group's training windows.
pub fn group_windows(
    data: &[(SignalStream, SubjectFeatures)],
    ids: &[String],
    spec: &WindowSpec,
) -> Result<WindowSet> {
    let sets: Vec<WindowSet> = ids
        .iter()
        .map(|id| segment(stream_of(data, id)?, spec))
        .collect::<Result<_>>()?;
    WindowSet::concat(&sets)
}

/// Pool window metrics and episode analytics over per-subject traces.
pub fn pooled_row(group: &str, traces: &[PredictionTrace], losses: &[f64]) -> Result<LogoRow> {
    let mut all = PredictionTrace {
        records: Vec::new(),
        window_s: traces.first().map_or(3.0, |t| t.window_s),
        stride_s: traces.first().map_or(1.5, |t| t.stride_s),
        gate_cost_s: 0.0,
        model_cost_reference_s: None,
    };
    // Episode stats must not cross subject boundaries: accumulate per-trace
    // reports, pool the counts.
    let mut episodes = 0usize;
    let mut detected = 0usize;
    let mut fog_windows = 0usize;
    let mut fog_hits = 0usize;
    for t in traces {
        let rep = metrics::episode_report(t);
        episodes += rep.overall.episodes;
        detected += rep.overall.detected;
        for (tr, de) in t.truths().iter().zip(t.decisions()) {
            if tr.is_fog() {
                fog_windows += 1;
                if de.is_fog() {
                    fog_hits += 1;
                }
            }
        }
        all.records.extend(t.records.iter().cloned());
    }
    let wm = metrics::window_metrics(&all)?;
    Ok(LogoRow {
        group: group.to_string(),
        prec: wm.precision,
        rec: wm.sensitivity,
        f1: wm.f1,
        acc: Some(wm.accuracy),
        spec: wm.specificity,
        loss: (!losses.is_empty())
            .then(|| losses.iter().sum::<f64>() / losses.len() as f64),
        dfe_pct: (episodes > 0).then(|| 100.0 * detected as f64 / episodes as f64),
        dfw_pct: (fog_windows > 0).then(|| 100.0 * fog_hits as f64 / fog_windows as f64),
    })
}

/// Train on one group, evaluate per-subject on the other.
#[allow(clippy::too_many_arguments)]
fn run_direction(
    data: &[(SignalStream, SubjectFeatures)],
    train_ids: &[String],
    test_ids: &[String],
    test_group_name: &str,
    cfg: &LogoConfig,
    seed: u64,
    supervised: bool,
    fingerprints: &mut BTreeMap<String, String>,
) -> Result<LogoRow> {
    // Training corpus is assembled before any test-group windows exist.
    let train_ws = group_windows(data, train_ids, &cfg.window_train)?;
    let train_fp = fingerprint_frames(&train_ws.frames);

    let bundle = if supervised {
        ssl::train_supervised(&cfg.arch, &train_ws, &cfg.plan, seeds::derive(seed, "sup"))?
    } else {
        let pre = ssl::pretrain(
            &train_ws.unlabeled(),
            &cfg.arch,
            &cfg.plan,
            &cfg.mask,
            seeds::derive(seed, "pretrain"),
        )?;
        ssl::finetune(&pre, &train_ws, &cfg.plan, seeds::derive(seed, "finetune"))?
    };

    let mut traces = Vec::new();
    let mut losses = Vec::new();
    for id in test_ids {
        let ws = segment(stream_of(data, id)?, &cfg.window_infer)?;
        let fp = fingerprint_frames(&ws.frames);
        if fp == train_fp {
            return Err(FogError::Structural(format!(
                "test subject `{id}` windows share the training fingerprint"
            )));
        }
        fingerprints.insert(format!("test:{id}"), fp);
        let trace = ssl::predict(&bundle, &ws)?;
        let bce: f64 = trace
            .records
            .iter()
            .map(|r| {
                let p = r.probability.clamp(1e-12, 1.0 - 1e-12);
                if r.truth.is_fog() {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / trace.len() as f64;
        losses.push(bce);
        traces.push(trace);
    }
    let arm = if supervised { "supervised" } else { "ssl" };
    fingerprints.insert(format!("train:{arm}:{}", test_group_name), train_fp);
    pooled_row(test_group_name, &traces, &losses)
}

fn summarize(rows: &[LogoRow]) -> Vec<LogoRow> {
    let combine = |name: &str, f: &dyn Fn(Vec<f64>) -> f64| -> LogoRow {
        let mut fields: [Option<f64>; 8] = Default::default();
        for k in 0..8 {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.fields()[k]).collect();
            fields[k] = (vals.len() == rows.len()).then(|| f(vals));
        }
        LogoRow::from_fields(name.to_string(), fields)
    };
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    vec![
        combine("avg", &mean),
        combine("min", &|v: Vec<f64>| v.iter().cloned().fold(f64::INFINITY, f64::min)),
        combine("max", &|v: Vec<f64>| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
        combine("std", &|v: Vec<f64>| {
            let m = mean(v.clone());
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1).max(1) as f64).sqrt()
        }),
    ]
}

/// Leave-one-group-out evaluation: for each direction, pretrain and
/// fine-tune on one group, evaluate per-subject on the held-out group;
/// repeat over derived seeds and average. Group rows are named by the
/// *evaluated* (held-out) group.
pub fn run_logo(
    data: &[(SignalStream, SubjectFeatures)],
    cfg: &LogoConfig,
) -> Result<LogoReport> {
    if cfg.repeats == 0 {
        return Err(FogError::Config("repeats must be at least 1".into()));
    }
    let feats: Vec<SubjectFeatures> = data.iter().map(|(_, f)| f.clone()).collect();
    let base_plan = make_logo_split(&feats, seeds::derive(cfg.seed, "logo-split"))?;

    let mut repeats = Vec::with_capacity(cfg.repeats);
    let mut fingerprints = BTreeMap::new();
    for r in 0..cfg.repeats {
        let plan = if cfg.reshuffle_groups && r > 0 {
            make_logo_split(&feats, seeds::derive_n(cfg.seed, "logo-split", r as u64))?
        } else {
            base_plan.clone()
        };
        let seed = seeds::derive_n(cfg.seed, "repeat", r as u64);
        let mut rows = Vec::new();
        // Row "1": group A evaluated (trained on B), row "2": vice versa.
        rows.push(run_direction(
            data,
            &plan.group_b,
            &plan.group_a,
            "1",
            cfg,
            seeds::derive(seed, "eval-a"),
            false,
            &mut fingerprints,
        )?);
        rows.push(run_direction(
            data,
            &plan.group_a,
            &plan.group_b,
            "2",
            cfg,
            seeds::derive(seed, "eval-b"),
            false,
            &mut fingerprints,
        )?);
        if cfg.supervised {
            rows.push(run_direction(
                data,
                &plan.group_b,
                &plan.group_a,
                "1-supervised",
                cfg,
                seeds::derive(seed, "eval-a"),
                true,
                &mut fingerprints,
            )?);
            rows.push(run_direction(
                data,
                &plan.group_a,
                &plan.group_b,
                "2-supervised",
                cfg,
                seeds::derive(seed, "eval-b"),
                true,
                &mut fingerprints,
            )?);
        }
        repeats.push(LogoRepeat { seed, rows });
    }

    // Average each group row over repeats, then append the summary rows
    // across the (averaged) SSL group rows.
    let group_names: Vec<String> = repeats[0].rows.iter().map(|r| r.group.clone()).collect();
    let mut table = Vec::new();
    for name in &group_names {
        let mut fields: [Option<f64>; 8] = Default::default();
        for k in 0..8 {
            let vals: Vec<f64> = repeats
                .iter()
                .filter_map(|rep| {
                    rep.rows
                        .iter()
                        .find(|row| &row.group == name)
                        .and_then(|row| row.fields()[k])
                })
                .collect();
            fields[k] = (vals.len() == repeats.len())
                .then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        }
        table.push(LogoRow::from_fields(name.clone(), fields));
    }
    let ssl_rows: Vec<LogoRow> = table
        .iter()
        .filter(|r| !r.group.ends_with("supervised"))
        .cloned()
        .collect();
    table.extend(summarize(&ssl_rows));

    Ok(LogoReport {
        plan: base_plan,
        repeats,
        table,
        fingerprints,
    })
}

/// `group,prec,rec,f1,acc,spec,loss,dfe,dfw` with empty cells for
/// undefined entries.
pub fn logo_csv(rows: &[LogoRow]) -> String {
    let mut out = String::from("group,prec,rec,f1,acc,spec,loss,dfe,dfw\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.group,
            opt(r.prec),
            opt(r.rec),
            opt(r.f1),
            opt(r.acc),
            opt(r.spec),
            opt(r.loss),
            opt(r.dfe_pct),
            opt(r.dfw_pct),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str, age: f64, dx: f64, updrs: f64) -> SubjectFeatures {
        SubjectFeatures {
            subject_id: id.into(),
            age: Some(age),
            years_since_dx: Some(dx),
            updrs: Some(updrs),
        }
    }

    #[test]
    fn two_identical_subjects_split_one_each() {
        let f = vec![subject("a", 70.0, 5.0, 30.0), subject("b", 70.0, 5.0, 30.0)];
        let plan = make_logo_split(&f, 1).unwrap();
        assert_eq!(plan.group_a.len(), 1);
        assert_eq!(plan.group_b.len(), 1);
        assert_ne!(plan.group_a[0], plan.group_b[0]);
    }

    #[test]
    fn forty_subjects_with_linear_ages_match_closely() {
        let f: Vec<SubjectFeatures> = (0..40)
            .map(|i| subject(&format!("s{i}"), 55.0 + i as f64 * 0.6, 8.0, 35.0))
            .collect();
        let plan = make_logo_split(&f, 2).unwrap();
        assert_eq!(plan.group_a.len(), 20);
        assert_eq!(plan.group_b.len(), 20);
        let mean_age = |ids: &[String]| -> f64 {
            let v: Vec<f64> = f
                .iter()
                .filter(|s| ids.contains(&s.subject_id))
                .map(|s| s.age.unwrap())
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let ages: Vec<f64> = f.iter().map(|s| s.age.unwrap()).collect();
        let m = ages.iter().sum::<f64>() / ages.len() as f64;
        let sd = (ages.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / ages.len() as f64).sqrt();
        let gap = (mean_age(&plan.group_a) - mean_age(&plan.group_b)).abs();
        assert!(gap < 0.1 * sd, "age gap {gap} vs sd {sd}");
    }

    #[test]
    fn split_is_seed_deterministic() {
        let f: Vec<SubjectFeatures> = (0..10)
            .map(|i| subject(&format!("s{i}"), 60.0 + i as f64, 5.0, 30.0))
            .collect();
        assert_eq!(make_logo_split(&f, 3).unwrap().group_a, make_logo_split(&f, 3).unwrap().group_a);
    }

    #[test]
    fn missing_features_are_imputed_and_flagged() {
        let mut f: Vec<SubjectFeatures> = (0..6)
            .map(|i| subject(&format!("s{i}"), 60.0 + i as f64, 5.0, 30.0))
            .collect();
        f[2].updrs = None;
        let plan = make_logo_split(&f, 4).unwrap();
        assert_eq!(plan.imputed, vec!["s2".to_string()]);
    }

    #[test]
    fn fewer_than_two_subjects_is_config_error() {
        let f = vec![subject("only", 70.0, 5.0, 30.0)];
        assert!(matches!(make_logo_split(&f, 1), Err(FogError::Config(_))));
    }

    #[test]
    fn csv_has_table_iv_columns() {
        let rows = vec![LogoRow {
            group: "1".into(),
            prec: Some(0.5),
            rec: Some(0.5),
            f1: Some(0.5),
            acc: Some(0.5),
            spec: Some(0.5),
            loss: Some(0.2),
            dfe_pct: Some(90.0),
            dfw_pct: Some(80.0),
        }];
        let csv = logo_csv(&rows);
        assert!(csv.starts_with("group,prec,rec,f1,acc,spec,loss,dfe,dfw\n"));
    }
}
