//! Run configuration (UTF-8 `key=value` files, later keys override),
//! dataset-directory I/O, and reproducibility manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FogError, Result};
use crate::gate::{AtoConfig, BaselineMetric, GateConfig};
use crate::ingest::{
    load_canonical_csv, write_canonical_csv, ColumnMap, DaphnetSensor, SignalStream, Unit,
};
use crate::neuralcore::{ArchSpec, DecayMode};
use crate::ssl::{MaskSpec, TrainPlan};
use crate::windowing::WindowSpec;

use super::logo::LogoConfig;
use super::synth::{SubjectFeatures, SynthSpec};

/// Everything the CLI and harness runs consume, with defaults matching the
/// standard pipeline (3 s windows at 40 Hz, 5-layer encoder, 70+40 epochs).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub window_train: WindowSpec,
    pub window_infer: WindowSpec,
    pub arch: ArchSpec,
    pub plan: TrainPlan,
    pub mask: MaskSpec,
    pub gate: GateConfig,
    pub ato: AtoConfig,
    pub target_hz: f64,
    pub unit: Unit,
    pub daphnet_sensor: DaphnetSensor,
    pub column_map: Option<ColumnMap>,
    pub logo_repeats: usize,
    pub reshuffle_groups: bool,
    pub supervised: bool,
    pub fractions: Vec<f64>,
    pub synth: SynthSpec,
    pub majority_vote: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            window_train: WindowSpec::train(),
            window_infer: WindowSpec::inference(),
            arch: ArchSpec::default(),
            plan: TrainPlan::default(),
            mask: MaskSpec::default(),
            gate: GateConfig { alpha: 0.0 },
            ato: AtoConfig {
                alpha_start: 0.0,
                alpha_final: 1.2,
                delta_alpha: 0.05,
                tolerance: 0.02,
                metric: BaselineMetric::F1,
            },
            target_hz: 40.0,
            unit: Unit::G,
            daphnet_sensor: DaphnetSensor::Ankle,
            column_map: None,
            logo_repeats: 3,
            reshuffle_groups: false,
            supervised: false,
            fractions: vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            synth: SynthSpec::default(),
            majority_vote: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Parse a config file: one `key=value` per line, `#` comments, later
    /// keys override earlier ones.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| FogError::Parse {
                line: idx + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| FogError::Config(format!(
                "line {}: {e}",
                idx + 1
            )))?;
        }
        Ok(())
    }

    /// Set one key. Unknown keys are config errors so typos fail loudly.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| FogError::Config(format!("bad value `{value}` for {what}"));
        let f64v = || value.parse::<f64>().map_err(|_| bad(key));
        let usizev = || value.parse::<usize>().map_err(|_| bad(key));
        let boolv = || match value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad(key)),
        };
        let listv = || -> Result<Vec<f64>> {
            value
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad(key)))
                .collect()
        };
        let ulistv = || -> Result<Vec<usize>> {
            value
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| bad(key)))
                .collect()
        };
        match key {
            "window.seconds" => {
                let v = f64v()?;
                self.window_train.window_s = v;
                self.window_infer.window_s = v;
            }
            "window.hop_nonfog" => {
                let v = f64v()?;
                self.window_train.hop_nonfog_frac = v;
                self.window_infer.hop_nonfog_frac = v;
            }
            "window.hop_fog" => {
                let v = f64v()?;
                self.window_train.hop_fog_frac = v;
                self.window_infer.hop_fog_frac = v;
            }
            "window.label_threshold" => {
                let v = f64v()?;
                self.window_train.label_threshold = v;
                self.window_infer.label_threshold = v;
            }
            "resample.target_hz" => self.target_hz = f64v()?,
            "data.unit" => {
                self.unit = match value {
                    "g" => Unit::G,
                    "m_per_s2" | "mps2" => Unit::MPerS2,
                    _ => return Err(bad(key)),
                }
            }
            "daphnet.sensor" => {
                self.daphnet_sensor = match value {
                    "ankle" => DaphnetSensor::Ankle,
                    "thigh" => DaphnetSensor::Thigh,
                    "trunk" => DaphnetSensor::Trunk,
                    _ => return Err(bad(key)),
                }
            }
            "map.time" | "map.ax" | "map.ay" | "map.az" | "map.labels" | "map.time_scale" => {
                let map = self.column_map.get_or_insert_with(|| ColumnMap {
                    time: "Time".into(),
                    ax: "AccV".into(),
                    ay: "AccML".into(),
                    az: "AccAP".into(),
                    label_any: vec![],
                    time_scale: 1.0,
                    unit: Unit::G,
                });
                match key {
                    "map.time" => map.time = value.into(),
                    "map.ax" => map.ax = value.into(),
                    "map.ay" => map.ay = value.into(),
                    "map.az" => map.az = value.into(),
                    "map.labels" => {
                        map.label_any = value.split('|').map(|s| s.trim().to_string()).collect()
                    }
                    _ => map.time_scale = f64v()?,
                }
            }
            "arch.conv_filters" => self.arch.conv_filters = ulistv()?,
            "arch.kernel" => self.arch.kernel = usizev()?,
            "arch.maxpool_after" => {
                self.arch.maxpool_after = if value == "none" { None } else { Some(usizev()?) }
            }
            "arch.pool" => self.arch.pool = usizev()?,
            "arch.dense_units" => self.arch.dense_units = ulistv()?,
            "arch.dropout" => self.arch.dropout = f64v()?,
            "arch.input_len" => self.arch.input_len = usizev()?,
            "train.pretrain_epochs" => self.plan.pretrain_epochs = usizev()?,
            "train.pretrain_lr" => self.plan.pretrain_lr = f64v()?,
            "train.pretrain_decay" => self.plan.pretrain_decay = f64v()?,
            "train.finetune_epochs" => self.plan.finetune_epochs = usizev()?,
            "train.finetune_lr" => self.plan.finetune_lr = f64v()?,
            "train.finetune_decay" => self.plan.finetune_decay = f64v()?,
            "train.batch_size" => self.plan.batch_size = usizev()?,
            "train.label_fraction" => self.plan.label_fraction = f64v()?,
            "train.freeze_encoder" => self.plan.freeze_encoder = boolv()?,
            "train.decay_mode" => {
                self.plan.decay_mode = match value {
                    "time" => DecayMode::TimeBasedLr,
                    "weight" => DecayMode::DecoupledWeightDecay,
                    _ => return Err(bad(key)),
                }
            }
            "mask.segment_len" => self.mask.segment_len = usizev()?,
            "mask.num_segments" => self.mask.num_segments = usizev()?,
            "mask.fill_value" => self.mask.fill_value = f64v()?,
            "mask.seed" => self.mask.seed = value.parse().map_err(|_| bad(key))?,
            "gate.alpha" => self.gate.alpha = f64v()?,
            "ato.alpha_start" => self.ato.alpha_start = f64v()?,
            "ato.alpha_final" => self.ato.alpha_final = f64v()?,
            "ato.delta_alpha" => self.ato.delta_alpha = f64v()?,
            "ato.tolerance" => self.ato.tolerance = f64v()?,
            "ato.metric" => {
                self.ato.metric = match value {
                    "f1" => BaselineMetric::F1,
                    "sensitivity" => BaselineMetric::Sensitivity,
                    "accuracy" => BaselineMetric::Accuracy,
                    _ => return Err(bad(key)),
                }
            }
            "logo.repeats" => self.logo_repeats = usizev()?,
            "logo.reshuffle_groups" => self.reshuffle_groups = boolv()?,
            "logo.supervised" => self.supervised = boolv()?,
            "sweep.fractions" => self.fractions = listv()?,
            "synth.subjects" => self.synth.subjects = usizev()?,
            "synth.duration_s" => self.synth.duration_s = f64v()?,
            "synth.rate_hz" => self.synth.rate_hz = f64v()?,
            "synth.fog_rate" => self.synth.fog_rate = f64v()?,
            "evaluate.majority_vote" => self.majority_vote = boolv()?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            _ => return Err(FogError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical textual form of every setting; hashing this pins the run.
    pub fn canonical(&self) -> String {
        let join = |v: &[usize]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let joinf = |v: &[f64]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("window.seconds", self.window_infer.window_s.to_string());
        kv("window.hop_nonfog", self.window_infer.hop_nonfog_frac.to_string());
        kv("window.hop_fog", self.window_train.hop_fog_frac.to_string());
        kv("window.label_threshold", self.window_infer.label_threshold.to_string());
        kv("resample.target_hz", self.target_hz.to_string());
        kv("arch.conv_filters", join(&self.arch.conv_filters));
        kv("arch.kernel", self.arch.kernel.to_string());
        kv(
            "arch.maxpool_after",
            self.arch.maxpool_after.map_or("none".into(), |v| v.to_string()),
        );
        kv("arch.pool", self.arch.pool.to_string());
        kv("arch.dense_units", join(&self.arch.dense_units));
        kv("arch.dropout", self.arch.dropout.to_string());
        kv("arch.input_len", self.arch.input_len.to_string());
        kv("train.pretrain_epochs", self.plan.pretrain_epochs.to_string());
        kv("train.pretrain_lr", self.plan.pretrain_lr.to_string());
        kv("train.pretrain_decay", self.plan.pretrain_decay.to_string());
        kv("train.finetune_epochs", self.plan.finetune_epochs.to_string());
        kv("train.finetune_lr", self.plan.finetune_lr.to_string());
        kv("train.finetune_decay", self.plan.finetune_decay.to_string());
        kv("train.batch_size", self.plan.batch_size.to_string());
        kv("train.label_fraction", self.plan.label_fraction.to_string());
        kv("train.freeze_encoder", self.plan.freeze_encoder.to_string());
        kv(
            "train.decay_mode",
            match self.plan.decay_mode {
                DecayMode::TimeBasedLr => "time".into(),
                DecayMode::DecoupledWeightDecay => "weight".into(),
            },
        );
        kv("mask.segment_len", self.mask.segment_len.to_string());
        kv("mask.num_segments", self.mask.num_segments.to_string());
        kv("mask.fill_value", self.mask.fill_value.to_string());
        kv("mask.seed", self.mask.seed.to_string());
        kv("gate.alpha", self.gate.alpha.to_string());
        kv("ato.alpha_start", self.ato.alpha_start.to_string());
        kv("ato.alpha_final", self.ato.alpha_final.to_string());
        kv("ato.delta_alpha", self.ato.delta_alpha.to_string());
        kv("ato.tolerance", self.ato.tolerance.to_string());
        kv("logo.repeats", self.logo_repeats.to_string());
        kv("logo.reshuffle_groups", self.reshuffle_groups.to_string());
        kv("logo.supervised", self.supervised.to_string());
        kv("sweep.fractions", joinf(&self.fractions));
        kv("synth.subjects", self.synth.subjects.to_string());
        kv("synth.duration_s", self.synth.duration_s.to_string());
        kv("synth.rate_hz", self.synth.rate_hz.to_string());
        kv("synth.fog_rate", self.synth.fog_rate.to_string());
        kv("evaluate.majority_vote", self.majority_vote.to_string());
        kv("seed", self.seed.to_string());
        s
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The LOGO slice of this config.
    pub fn logo(&self) -> LogoConfig {
        LogoConfig {
            window_train: self.window_train,
            window_infer: self.window_infer,
            arch: self.arch.clone(),
            plan: self.plan,
            mask: self.mask,
            repeats: self.logo_repeats,
            seed: self.seed,
            reshuffle_groups: self.reshuffle_groups,
            supervised: self.supervised,
        }
    }
}

/// Reproducibility manifest written next to every experiment's outputs.
/// Contains no wall-clock state, so identical runs produce identical bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub data_fingerprints: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(cfg: &RunConfig) -> Manifest {
        Manifest {
            tool: "fogkit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            master_seed: cfg.seed,
            stage_seeds: BTreeMap::new(),
            data_fingerprints: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| FogError::Format(format!("manifest serialization failed: {e}")))?;
        fs::write(dir.as_ref().join("manifest.json"), json)?;
        Ok(())
    }
}

/// Write a cohort as a dataset directory: `subjects.csv`
/// (`subject_id,age,years_since_dx,updrs`) plus one canonical CSV per
/// subject.
pub fn write_cohort_dir(
    dir: impl AsRef<Path>,
    cohort: &[(SignalStream, SubjectFeatures)],
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut subjects = String::from("subject_id,age,years_since_dx,updrs\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (stream, feat) in cohort {
        subjects.push_str(&format!(
            "{},{},{},{}\n",
            feat.subject_id,
            opt(feat.age),
            opt(feat.years_since_dx),
            opt(feat.updrs)
        ));
        write_canonical_csv(stream, dir.join(format!("{}.csv", feat.subject_id)))?;
    }
    fs::write(dir.join("subjects.csv"), subjects)?;
    Ok(())
}

/// Load a dataset directory written by [`write_cohort_dir`] (or assembled
/// by hand in the same layout).
pub fn load_cohort_dir(dir: impl AsRef<Path>) -> Result<Vec<(SignalStream, SubjectFeatures)>> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join("subjects.csv"))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| FogError::EmptyInput("subjects.csv is empty".into()))?;
    if header.trim() != "subject_id,age,years_since_dx,updrs" {
        return Err(FogError::Format(format!(
            "expected header `subject_id,age,years_since_dx,updrs`, got `{}`",
            header.trim()
        )));
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(FogError::Parse {
                line: idx + 1,
                msg: format!("expected 4 fields, got {}", f.len()),
            });
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| FogError::Parse {
                    line: idx + 1,
                    msg: format!("bad number `{s}`"),
                })
            }
        };
        let feat = SubjectFeatures {
            subject_id: f[0].to_string(),
            age: num(f[1])?,
            years_since_dx: num(f[2])?,
            updrs: num(f[3])?,
        };
        let stream = load_canonical_csv(dir.join(format!("{}.csv", feat.subject_id)))?;
        out.push((stream, feat));
    }
    if out.is_empty() {
        return Err(FogError::EmptyInput("dataset directory has no subjects".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn later_keys_override_earlier() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("train.batch_size=16\ntrain.batch_size=32\n").unwrap();
        assert_eq!(cfg.plan.batch_size, 32);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let mut cfg = RunConfig::default();
        assert!(matches!(
            cfg.apply_text("no.such.key=1"),
            Err(FogError::Config(_))
        ));
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\n\nseed=9\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.plan.pretrain_epochs = 7;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn cohort_dir_round_trip() {
        let spec = super::super::synth::SynthSpec {
            subjects: 2,
            duration_s: 20.0,
            rate_hz: 40.0,
            fog_rate: 0.2,
        };
        let cohort = super::super::synth::synth_cohort(&spec, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_cohort_dir(dir.path(), &cohort).unwrap();
        let back = load_cohort_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].1, cohort[0].1);
        assert_eq!(back[0].0.accel, cohort[0].0.accel);
        assert_eq!(back[0].0.labels, cohort[0].0.labels);
    }
}
