//! Two-phase training: masked-reconstruction pretraining on unlabeled
//! windows, then supervised fine-tuning of the classifier head with the
//! encoder frozen.
//!
//! Pretraining takes an [`UnlabeledWindows`] view, so label access is ruled
//! out by the type system. Fine-tuning with a frozen encoder precomputes
//! embeddings once and trains only the MLP head, which keeps the encoder
//! arrays bit-identical and the fine-tune phase cheap. A supervised
//! baseline trainer with the same architecture (no pretext, nothing
//! frozen) is included for comparisons.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FogError, Result};
use crate::ingest::Label;
use crate::metrics::{PredictionTrace, WindowRecord};
use crate::neuralcore::net::{
    self, train_batch_classify, train_batch_head, train_batch_pretext, PretextSample,
};
use crate::neuralcore::{
    adam_step, read_fogm1_params, sigmoid, write_fogm1, ArchSpec, DecayMode, OptimizerSpec,
    ParamArrays, ParamSet, TrainScope,
};
use crate::seeds;
use crate::windowing::{UnlabeledWindows, WindowSet};

/// Random-segment masking parameters. Defaults mask two non-overlapping
/// 10-sample segments (~17% of a 120-sample window) across all channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub segment_len: usize,
    pub num_segments: usize,
    pub fill_value: f64,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            segment_len: 10,
            num_segments: 2,
            fill_value: 0.0,
            seed: 0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self, window_samples: usize) -> Result<()> {
        if self.segment_len == 0 || self.num_segments == 0 {
            return Err(FogError::Config("mask segments must be non-empty".into()));
        }
        if self.num_segments * self.segment_len >= window_samples {
            return Err(FogError::Config(format!(
                "{} segments of {} samples cannot fit a {window_samples}-sample window \
                 without overlap",
                self.num_segments, self.segment_len
            )));
        }
        Ok(())
    }
}

/// Epoch/rate schedule for both phases plus the label budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_decay: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub finetune_decay: f64,
    pub batch_size: usize,
    /// Fraction of the labeled windows actually used by fine-tuning
    /// (stratified by class, seeded).
    pub label_fraction: f64,
    pub freeze_encoder: bool,
    pub decay_mode: DecayMode,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            pretrain_epochs: 70,
            pretrain_lr: 0.01,
            pretrain_decay: 0.001,
            finetune_epochs: 40,
            finetune_lr: 1e-4,
            finetune_decay: 0.0,
            batch_size: 64,
            label_fraction: 1.0,
            freeze_encoder: true,
            decay_mode: DecayMode::TimeBasedLr,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.pretrain_epochs == 0 && self.finetune_epochs == 0 {
            return Err(FogError::Config("plan trains for zero epochs".into()));
        }
        if self.pretrain_lr <= 0.0 || self.finetune_lr <= 0.0 {
            return Err(FogError::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(FogError::Config("batch_size must be positive".into()));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(FogError::Config(format!(
                "label_fraction must lie in (0, 1], got {}",
                self.label_fraction
            )));
        }
        Ok(())
    }

    /// Small-and-fast settings used by the runnable examples.
    pub fn desk() -> TrainPlan {
        TrainPlan {
            pretrain_epochs: 15,
            finetune_epochs: 12,
            ..TrainPlan::default()
        }
    }
}

/// Training provenance persisted as the model's JSON sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub plan: TrainPlan,
    pub mask: Option<MaskSpec>,
    pub data_fingerprint: String,
    /// Per-epoch mean masked MSE.
    pub pretrain_loss: Vec<f64>,
    /// Per-epoch mean BCE of the supervised phase.
    pub finetune_loss: Vec<f64>,
    pub supervised_baseline: bool,
}

/// Encoder + heads with provenance; what training produces and inference
/// consumes.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub arch: ArchSpec,
    pub params: ParamSet,
    pub meta: RunMeta,
}

impl ModelBundle {
    /// Evaluation-mode FoG probability for one window.
    pub fn classify_window(&self, frame: ArrayView2<f64>) -> f64 {
        let dims = self.arch.dims().expect("bundle arch validated at construction");
        let ct = net::frame_to_ct(frame);
        let enc = net::encoder_forward(&self.params.arrays, &self.arch, &dims, &ct);
        sigmoid(net::logit_from_embedding(&self.params, &self.arch, &enc.embedding))
    }

    /// Persist weights (`FOGM1`) plus the JSON sidecar at `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_fogm1(path, &self.arch, &self.params.arrays, Some(&self.params.adam))?;
        let json = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| FogError::Format(format!("meta serialization failed: {e}")))?;
        std::fs::write(sidecar(path), json)?;
        Ok(())
    }

    /// Load weights and, when present, the sidecar metadata.
    pub fn load(path: impl AsRef<Path>) -> Result<ModelBundle> {
        let path = path.as_ref();
        let (arch, params) = read_fogm1_params(path)?;
        let meta_path = sidecar(path);
        let meta = if meta_path.exists() {
            serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
                .map_err(|e| FogError::Format(format!("bad model sidecar: {e}")))?
        } else {
            RunMeta {
                seed: 0,
                plan: TrainPlan::default(),
                mask: None,
                data_fingerprint: String::new(),
                pretrain_loss: Vec::new(),
                finetune_loss: Vec::new(),
                supervised_baseline: false,
            }
        };
        Ok(ModelBundle { arch, params, meta })
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut o = path.as_os_str().to_owned();
    o.push(".json");
    o.into()
}

/// SHA-256 (truncated) over window frames; recorded in manifests and used
/// to assert train/test disjointness.
pub fn fingerprint_frames(frames: &Array3<f64>) -> String {
    let mut h = Sha256::new();
    for &d in frames.shape() {
        h.update((d as u64).to_le_bytes());
    }
    for v in frames.iter() {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Masked frames plus the masked scalar positions (flat `t*C + c` indexing)
/// per frame.
#[derive(Debug, Clone)]
pub struct MaskedWindows {
    pub masked: Array3<f64>,
    pub positions: Vec<Vec<usize>>,
}

/// Zero out `num_segments` non-overlapping time segments per frame, across
/// all channels. Positions are reproducible from the mask seed alone.
pub fn apply_mask(frames: &Array3<f64>, mask: &MaskSpec) -> Result<MaskedWindows> {
    let (n, t_prime, c) = {
        let s = frames.shape();
        (s[0], s[1], s[2])
    };
    mask.validate(t_prime)?;
    let mut masked = frames.clone();
    let mut positions = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(mask.seed, i as u64));
        let starts = sample_segments(&mut rng, t_prime, mask.segment_len, mask.num_segments)?;
        let mut pos = Vec::with_capacity(mask.num_segments * mask.segment_len * c);
        for &s in &starts {
            for t in s..s + mask.segment_len {
                for ch in 0..c {
                    masked[[i, t, ch]] = mask.fill_value;
                    pos.push(t * c + ch);
                }
            }
        }
        pos.sort_unstable();
        positions.push(pos);
    }
    Ok(MaskedWindows { masked, positions })
}

fn sample_segments(
    rng: &mut ChaCha8Rng,
    t_prime: usize,
    len: usize,
    count: usize,
) -> Result<Vec<usize>> {
    use rand::Rng;
    let mut starts: Vec<usize> = Vec::with_capacity(count);
    let max_start = t_prime - len; // validated: len*count < t_prime
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..10_000 {
            let s = rng.gen_range(0..=max_start);
            if starts.iter().all(|&e| s + len <= e || e + len <= s) {
                starts.push(s);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(FogError::Config(format!(
                "could not place {count} non-overlapping segments of {len} in {t_prime} samples"
            )));
        }
    }
    starts.sort_unstable();
    Ok(starts)
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

/// Masked-reconstruction pretraining. Labels are unreachable through the
/// `UnlabeledWindows` view. Returns the encoder + pretext head; the
/// classifier head stays at initialization.
pub fn pretrain(
    windows: &UnlabeledWindows<'_>,
    arch: &ArchSpec,
    plan: &TrainPlan,
    mask: &MaskSpec,
    seed: u64,
) -> Result<ModelBundle> {
    plan.validate()?;
    if windows.is_empty() {
        return Err(FogError::EmptyInput("no windows to pretrain on".into()));
    }
    let dims = arch.dims()?;
    if windows.frames.shape()[1] != arch.input_len || windows.frames.shape()[2] != arch.channels {
        return Err(FogError::Structural(format!(
            "window shape {:?} does not match architecture input {}x{}",
            &windows.frames.shape()[1..],
            arch.input_len,
            arch.channels
        )));
    }
    mask.validate(arch.input_len)?;

    let mut params = ParamSet::init(arch, seeds::derive(seed, "init"))?;
    let opt = OptimizerSpec {
        decay_mode: plan.decay_mode,
        ..OptimizerSpec::new(plan.pretrain_lr, plan.pretrain_decay, plan.batch_size)
    };
    let n = windows.len();
    let flat: Vec<Vec<f64>> = (0..n)
        .map(|i| net::frame_to_flat(windows.frames.index_axis(Axis(0), i)))
        .collect();

    // The masked dataset is constructed once, up front: each window gets
    // one seeded set of zeroed segments that every epoch reuses.
    let masked = apply_mask(windows.frames, mask)?;

    let mut epoch_losses = Vec::with_capacity(plan.pretrain_epochs);
    for epoch in 0..plan.pretrain_epochs {
        let order = shuffled_indices(n, seeds::derive_n(seed, "shuffle", epoch as u64));

        let mut loss_acc = 0.0;
        let mut count = 0usize;
        for batch in order.chunks(plan.batch_size) {
            let samples: Vec<PretextSample> = batch
                .iter()
                .map(|&i| PretextSample {
                    ct_masked: net::frame_to_ct(masked.masked.index_axis(Axis(0), i)),
                    target_flat: flat[i].clone(),
                    positions: masked.positions[i].clone(),
                })
                .collect();
            let (loss, grads) = train_batch_pretext(&params, arch, &dims, &samples)
                .map_err(|e| FogError::Numeric(format!("pretrain epoch {epoch}: {e}")))?;
            adam_step(&mut params, &grads, &opt, TrainScope::Pretext)
                .map_err(|e| FogError::Numeric(format!("pretrain epoch {epoch}: {e}")))?;
            loss_acc += loss * batch.len() as f64;
            count += batch.len();
        }
        epoch_losses.push(loss_acc / count as f64);
    }

    Ok(ModelBundle {
        arch: arch.clone(),
        params,
        meta: RunMeta {
            seed,
            plan: *plan,
            mask: Some(*mask),
            data_fingerprint: fingerprint_frames(windows.frames),
            pretrain_loss: epoch_losses,
            finetune_loss: Vec::new(),
            supervised_baseline: false,
        },
    })
}

/// Class-stratified subsample: `round(fraction * n)` windows total with the
/// FoG share preserved to within one window. Errors if either class would
/// vanish.
pub fn stratified_subsample(
    labels: &[Label],
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    let fog: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_fog()).collect();
    let non: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_fog()).collect();
    if fog.is_empty() || non.is_empty() {
        return Err(FogError::Config(
            "labeled training set must contain both classes".into(),
        ));
    }
    let total = ((fraction * labels.len() as f64).round() as usize).min(labels.len());
    let take_fog = ((fraction * fog.len() as f64).round() as usize).min(fog.len());
    let take_non = total.saturating_sub(take_fog).min(non.len());
    if take_fog == 0 || take_non == 0 {
        return Err(FogError::Config(format!(
            "label fraction {fraction} leaves a single-class training set"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fog = fog;
    let mut non = non;
    fog.shuffle(&mut rng);
    non.shuffle(&mut rng);
    let mut out: Vec<usize> = fog[..take_fog].iter().chain(&non[..take_non]).copied().collect();
    out.sort_unstable();
    Ok(out)
}

/// Supervised fine-tuning of a pretrained bundle on (a stratified fraction
/// of) labeled windows. With `freeze_encoder` the encoder arrays stay
/// bit-identical: embeddings are computed once and only the MLP head
/// trains. The head is freshly re-initialized and the optimizer restarts.
pub fn finetune(
    bundle: &ModelBundle,
    ws: &WindowSet,
    plan: &TrainPlan,
    seed: u64,
) -> Result<ModelBundle> {
    plan.validate()?;
    if ws.is_empty() {
        return Err(FogError::EmptyInput("no labeled windows to fine-tune on".into()));
    }
    let arch = bundle.arch.clone();
    let dims = arch.dims()?;
    let subsample = stratified_subsample(&ws.labels, plan.label_fraction, seeds::derive(seed, "subsample"))?;

    let mut params = bundle.params.clone();
    // The classifier head starts from a fresh random initialization; the
    // optimizer state restarts so the pretraining step count does not bleed
    // into the fine-tune schedule.
    let fresh = ParamArrays::init(&arch, seeds::derive(seed, "head-init"))?;
    for i in 0..params.arrays.dense.len() {
        params.arrays.dense[i] = fresh.dense[i].clone();
    }
    params.arrays.out = fresh.out.clone();
    params.adam = ParamSet::init(&arch, 0)?.adam;

    let opt = OptimizerSpec {
        decay_mode: plan.decay_mode,
        ..OptimizerSpec::new(plan.finetune_lr, plan.finetune_decay, plan.batch_size)
    };

    let mut epoch_losses = Vec::with_capacity(plan.finetune_epochs);
    if plan.freeze_encoder {
        // Encoder is frozen: compute embeddings once.
        let embeddings = net::encode(&params, &arch, ws.frames.view())?;
        for epoch in 0..plan.finetune_epochs {
            let order = {
                let mut o = subsample.clone();
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seeds::derive_n(seed, "ft-shuffle", epoch as u64));
                o.shuffle(&mut rng);
                o
            };
            let mut loss_acc = 0.0;
            let mut count = 0usize;
            for batch in order.chunks(plan.batch_size) {
                let dropout_base = seeds::derive_n(seed, "ft-dropout", (epoch * 1_000_003 + count) as u64);
                let (loss, grads) =
                    train_batch_head(&params, &arch, &embeddings, batch, &ws.labels, dropout_base)
                        .map_err(|e| FogError::Numeric(format!("finetune epoch {epoch}: {e}")))?;
                adam_step(&mut params, &grads, &opt, TrainScope::Head)
                    .map_err(|e| FogError::Numeric(format!("finetune epoch {epoch}: {e}")))?;
                loss_acc += loss * batch.len() as f64;
                count += batch.len();
            }
            epoch_losses.push(loss_acc / count as f64);
        }
    } else {
        for epoch in 0..plan.finetune_epochs {
            let order = {
                let mut o = subsample.clone();
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seeds::derive_n(seed, "ft-shuffle", epoch as u64));
                o.shuffle(&mut rng);
                o
            };
            let mut loss_acc = 0.0;
            let mut count = 0usize;
            for batch in order.chunks(plan.batch_size) {
                let dropout_base = seeds::derive_n(seed, "ft-dropout", (epoch * 1_000_003 + count) as u64);
                let (loss, grads) = train_batch_classify(
                    &params,
                    &arch,
                    &dims,
                    &ws.frames,
                    batch,
                    &ws.labels,
                    dropout_base,
                    TrainScope::Full,
                )
                .map_err(|e| FogError::Numeric(format!("finetune epoch {epoch}: {e}")))?;
                adam_step(&mut params, &grads, &opt, TrainScope::Full)
                    .map_err(|e| FogError::Numeric(format!("finetune epoch {epoch}: {e}")))?;
                loss_acc += loss * batch.len() as f64;
                count += batch.len();
            }
            epoch_losses.push(loss_acc / count as f64);
        }
    }

    Ok(ModelBundle {
        arch,
        params,
        meta: RunMeta {
            seed,
            plan: *plan,
            mask: bundle.meta.mask,
            data_fingerprint: fingerprint_frames(&ws.frames),
            pretrain_loss: bundle.meta.pretrain_loss.clone(),
            finetune_loss: epoch_losses,
            supervised_baseline: false,
        },
    })
}

/// Supervised baseline: same architecture trained end-to-end with BCE only
/// (no pretext phase, nothing frozen). The epoch budget folds both phases
/// together so comparisons are compute-matched.
pub fn train_supervised(
    arch: &ArchSpec,
    ws: &WindowSet,
    plan: &TrainPlan,
    seed: u64,
) -> Result<ModelBundle> {
    plan.validate()?;
    if ws.is_empty() {
        return Err(FogError::EmptyInput("no labeled windows to train on".into()));
    }
    let dims = arch.dims()?;
    let subsample = stratified_subsample(&ws.labels, plan.label_fraction, seeds::derive(seed, "subsample"))?;
    let mut params = ParamSet::init(arch, seeds::derive(seed, "sup-init"))?;
    let opt = OptimizerSpec {
        decay_mode: plan.decay_mode,
        ..OptimizerSpec::new(plan.pretrain_lr, plan.pretrain_decay, plan.batch_size)
    };
    let epochs = plan.pretrain_epochs + plan.finetune_epochs;

    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let order = {
            let mut o = subsample.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_n(seed, "sup-shuffle", epoch as u64));
            o.shuffle(&mut rng);
            o
        };
        let mut loss_acc = 0.0;
        let mut count = 0usize;
        for batch in order.chunks(plan.batch_size) {
            let dropout_base = seeds::derive_n(seed, "sup-dropout", (epoch * 1_000_003 + count) as u64);
            let (loss, grads) = train_batch_classify(
                &params,
                &arch.clone(),
                &dims,
                &ws.frames,
                batch,
                &ws.labels,
                dropout_base,
                TrainScope::Full,
            )
            .map_err(|e| FogError::Numeric(format!("supervised epoch {epoch}: {e}")))?;
            adam_step(&mut params, &grads, &opt, TrainScope::Full)
                .map_err(|e| FogError::Numeric(format!("supervised epoch {epoch}: {e}")))?;
            loss_acc += loss * batch.len() as f64;
            count += batch.len();
        }
        epoch_losses.push(loss_acc / count as f64);
    }

    Ok(ModelBundle {
        arch: arch.clone(),
        params,
        meta: RunMeta {
            seed,
            plan: *plan,
            mask: None,
            data_fingerprint: fingerprint_frames(&ws.frames),
            pretrain_loss: Vec::new(),
            finetune_loss: epoch_losses,
            supervised_baseline: true,
        },
    })
}

/// Per-window inference over a window set: probability, 0.5-threshold
/// decision (FoG at exactly 0.5), and per-window wall time; dropout off.
pub fn predict(bundle: &ModelBundle, ws: &WindowSet) -> Result<PredictionTrace> {
    if bundle.params.arrays.dense.len() != bundle.arch.dense_units.len() {
        return Err(FogError::Structural(
            "bundle lacks a classifier head matching its architecture".into(),
        ));
    }
    let dims = bundle.arch.dims()?;
    if ws.window_samples() != bundle.arch.input_len || ws.channels() != bundle.arch.channels {
        return Err(FogError::Structural(format!(
            "window shape {}x{} does not match model input {}x{}",
            ws.window_samples(),
            ws.channels(),
            bundle.arch.input_len,
            bundle.arch.channels
        )));
    }
    let mut records = Vec::with_capacity(ws.len());
    for i in 0..ws.len() {
        let started = Instant::now();
        let ct = net::frame_to_ct(ws.frame(i));
        let enc = net::encoder_forward(&bundle.params.arrays, &bundle.arch, &dims, &ct);
        let logit = net::logit_from_embedding(&bundle.params, &bundle.arch, &enc.embedding);
        let cost = started.elapsed().as_secs_f64();
        let probability = sigmoid(logit);
        records.push(WindowRecord {
            start_s: ws.start_s(i),
            truth: ws.labels[i],
            probability,
            decision: if probability >= 0.5 { Label::Fog } else { Label::NonFog },
            gated_out: false,
            model_cost_s: cost,
        });
    }
    Ok(PredictionTrace {
        records,
        window_s: ws.spec.window_s,
        stride_s: ws.spec.stride_s(),
        gate_cost_s: 0.0,
        model_cost_reference_s: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windowing::{SegmentMode, WindowSpec};
    use ndarray::Array3;
    use rand::Rng;

    fn tiny_arch() -> ArchSpec {
        ArchSpec::tiny()
    }

    fn tiny_mask() -> MaskSpec {
        MaskSpec {
            segment_len: 3,
            num_segments: 2,
            fill_value: 0.0,
            seed: 5,
        }
    }

    fn window_set_from_frames(frames: Array3<f64>, labels: Vec<Label>) -> WindowSet {
        let n = frames.shape()[0];
        WindowSet {
            fog_fraction: labels.iter().map(|l| l.as_bit() as f64).collect(),
            start_index: (0..n).map(|i| i * 8).collect(),
            raw_magnitude: vec![1.0; n],
            spec: WindowSpec {
                window_s: 0.4,
                hop_nonfog_frac: 0.5,
                hop_fog_frac: 0.25,
                label_threshold: 0.5,
                mode: SegmentMode::InferenceFixed,
            },
            rate_hz: 40.0,
            subject_id: "t".into(),
            frames,
            labels,
        }
    }

    #[test]
    fn mask_zeroes_exact_scalar_count() {
        let frames = Array3::from_elem((4, 120, 3), 1.0);
        let mask = MaskSpec::default();
        let mw = apply_mask(&frames, &mask).unwrap();
        for i in 0..4 {
            // 2 segments x 10 steps x 3 channels.
            assert_eq!(mw.positions[i].len(), 60);
            let zeros = mw
                .masked
                .index_axis(Axis(0), i)
                .iter()
                .filter(|&&v| v == 0.0)
                .count();
            assert_eq!(zeros, 60);
        }
    }

    #[test]
    fn mask_positions_reproducible_from_seed() {
        let frames = Array3::from_elem((8, 120, 3), 0.5);
        let mask = MaskSpec::default();
        let a = apply_mask(&frames, &mask).unwrap();
        let b = apply_mask(&frames, &mask).unwrap();
        assert_eq!(a.positions, b.positions);
        let c = apply_mask(&frames, &MaskSpec { seed: 1, ..mask }).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn mask_fraction_is_deterministic_count() {
        let n = 1000;
        let frames = Array3::from_elem((n, 120, 3), 1.0);
        let mw = apply_mask(&frames, &MaskSpec::default()).unwrap();
        let zeroed: usize = mw.positions.iter().map(|p| p.len()).sum();
        let frac = zeroed as f64 / (n * 120 * 3) as f64;
        assert!((frac - 20.0 / 120.0).abs() < 1e-12);
    }

    #[test]
    fn mask_that_cannot_fit_is_config_error() {
        let frames = Array3::from_elem((1, 16, 3), 1.0);
        let mask = MaskSpec {
            segment_len: 10,
            num_segments: 2,
            ..MaskSpec::default()
        };
        assert!(matches!(apply_mask(&frames, &mask), Err(FogError::Config(_))));
    }

    #[test]
    fn pretrain_learns_constant_windows() {
        // Identical constant windows are learnable through the pretext
        // head's bias alone: final loss ~ 0.
        let arch = tiny_arch();
        let mut frames = Array3::zeros((48, 16, 3));
        for mut f in frames.axis_iter_mut(Axis(0)) {
            for t in 0..16 {
                f[[t, 0]] = 0.5;
                f[[t, 1]] = 1.0;
                f[[t, 2]] = 1.5;
            }
        }
        let ws = window_set_from_frames(frames, vec![Label::NonFog; 48]);
        // Adam moves roughly lr per step, so the pretext bias needs a few
        // hundred steps to reach the constants and settle: 24 per epoch.
        let plan = TrainPlan {
            pretrain_epochs: 70,
            batch_size: 2,
            ..TrainPlan::default()
        };
        let bundle = pretrain(&ws.unlabeled(), &arch, &plan, &tiny_mask(), 3).unwrap();
        let losses = &bundle.meta.pretrain_loss;
        assert!(losses.last().unwrap() < &1e-3, "final loss {}", losses.last().unwrap());
        assert!(losses.last().unwrap() < losses.first().unwrap());
    }

    #[test]
    fn pretrain_halves_loss_on_sine_windows() {
        let arch = tiny_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut frames = Array3::zeros((60, 16, 3));
        for mut f in frames.axis_iter_mut(Axis(0)) {
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            for t in 0..16 {
                let x = t as f64 / 16.0 * std::f64::consts::TAU + phase;
                f[[t, 0]] = x.sin();
                f[[t, 1]] = (2.0 * x).sin() * 0.5;
                f[[t, 2]] = x.cos();
            }
        }
        let ws = window_set_from_frames(frames, vec![Label::NonFog; 60]);
        let plan = TrainPlan {
            pretrain_epochs: 40,
            batch_size: 16,
            ..TrainPlan::default()
        };
        let bundle = pretrain(&ws.unlabeled(), &arch, &plan, &tiny_mask(), 4).unwrap();
        let losses = &bundle.meta.pretrain_loss;
        assert!(
            losses.last().unwrap() < &(0.5 * losses.first().unwrap()),
            "losses {:?}",
            (losses.first(), losses.last())
        );
    }

    fn separable_set(n: usize, seed: u64) -> WindowSet {
        // Class A: strong low-frequency oscillation; class B: near-silence.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frames = Array3::zeros((n, 16, 3));
        let mut labels = Vec::with_capacity(n);
        for (i, mut f) in frames.axis_iter_mut(Axis(0)).enumerate() {
            let fog = i % 2 == 0;
            let amp = if fog { 1.0 } else { 0.05 };
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            for t in 0..16 {
                let x = t as f64 / 4.0 * std::f64::consts::TAU + phase;
                f[[t, 0]] = amp * x.sin() + 0.01 * rng.gen_range(-1.0..1.0);
                f[[t, 1]] = amp * x.cos() + 0.01 * rng.gen_range(-1.0..1.0);
                f[[t, 2]] = 0.01 * rng.gen_range(-1.0..1.0);
            }
            labels.push(if fog { Label::Fog } else { Label::NonFog });
        }
        window_set_from_frames(frames, labels)
    }

    #[test]
    fn frozen_finetune_keeps_encoder_bit_identical_and_separates() {
        let arch = tiny_arch();
        let ws = separable_set(80, 12);
        // Few windows means few steps per epoch; raise the head rate so the
        // 40-epoch budget can actually fit the boundary.
        let plan = TrainPlan {
            pretrain_epochs: 10,
            finetune_epochs: 40,
            finetune_lr: 0.01,
            batch_size: 16,
            ..TrainPlan::default()
        };
        let pre = pretrain(&ws.unlabeled(), &arch, &plan, &tiny_mask(), 5).unwrap();
        let encoder_before = pre.params.encoder_checksum();
        let tuned = finetune(&pre, &ws, &plan, 6).unwrap();
        assert_eq!(tuned.params.encoder_checksum(), encoder_before);

        let trace = predict(&tuned, &ws).unwrap();
        let acc = crate::metrics::window_metrics(&trace).unwrap().accuracy;
        assert!(acc >= 0.95, "training accuracy {acc}");
    }

    #[test]
    fn unfrozen_finetune_changes_encoder() {
        let arch = tiny_arch();
        let ws = separable_set(40, 13);
        let plan = TrainPlan {
            pretrain_epochs: 2,
            finetune_epochs: 2,
            batch_size: 16,
            freeze_encoder: false,
            ..TrainPlan::default()
        };
        let pre = pretrain(&ws.unlabeled(), &arch, &plan, &tiny_mask(), 5).unwrap();
        let before = pre.params.encoder_checksum();
        let tuned = finetune(&pre, &ws, &plan, 6).unwrap();
        assert_ne!(tuned.params.encoder_checksum(), before);
    }

    #[test]
    fn stratified_subsample_arithmetic() {
        // 1000 windows, 300 FoG; fraction 0.4 -> exactly 400, 120 of them FoG.
        let labels: Vec<Label> = (0..1000)
            .map(|i| if i < 300 { Label::Fog } else { Label::NonFog })
            .collect();
        let idx = stratified_subsample(&labels, 0.4, 7).unwrap();
        assert_eq!(idx.len(), 400);
        let fog = idx.iter().filter(|&&i| labels[i].is_fog()).count();
        assert_eq!(fog, 120);
        // Deterministic given the seed.
        assert_eq!(idx, stratified_subsample(&labels, 0.4, 7).unwrap());
    }

    #[test]
    fn single_class_set_is_config_error() {
        let labels = vec![Label::NonFog; 50];
        assert!(matches!(
            stratified_subsample(&labels, 0.5, 1),
            Err(FogError::Config(_))
        ));
    }

    #[test]
    fn predict_is_deterministic_and_sized() {
        let arch = tiny_arch();
        let ws = separable_set(30, 21);
        let plan = TrainPlan {
            pretrain_epochs: 2,
            finetune_epochs: 4,
            batch_size: 8,
            ..TrainPlan::default()
        };
        let pre = pretrain(&ws.unlabeled(), &arch, &plan, &tiny_mask(), 5).unwrap();
        let tuned = finetune(&pre, &ws, &plan, 6).unwrap();
        let a = predict(&tuned, &ws).unwrap();
        let b = predict(&tuned, &ws).unwrap();
        assert_eq!(a.len(), ws.len());
        assert_eq!(a.decisions(), b.decisions());
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.probability, y.probability);
        }
        // Decision rule: FoG iff p >= 0.5.
        for r in &a.records {
            assert_eq!(r.decision.is_fog(), r.probability >= 0.5);
        }
    }

    #[test]
    fn bundles_round_trip_through_fogm1() {
        let arch = tiny_arch();
        let ws = separable_set(20, 3);
        let plan = TrainPlan {
            pretrain_epochs: 1,
            finetune_epochs: 1,
            batch_size: 8,
            ..TrainPlan::default()
        };
        let bundle = pretrain(&ws.unlabeled(), &arch, &plan, &tiny_mask(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fogm");
        bundle.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        assert_eq!(back.arch, bundle.arch);
        assert_eq!(back.meta.pretrain_loss.len(), 1);
        // f32 quantization on disk.
        for (a, b) in bundle
            .params
            .arrays
            .conv[0]
            .w
            .iter()
            .zip(&back.params.arrays.conv[0].w)
        {
            assert_eq!(*b, *a as f32 as f64);
        }
    }
}
