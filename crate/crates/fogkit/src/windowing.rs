//! Stream segmentation into fixed-length windows.
//!
//! Two modes:
//!
//! * `TrainDhwt` — differential hopping: after a window whose FoG fraction
//!   reaches the label threshold, the segmenter advances by the (smaller)
//!   FoG hop, densifying coverage inside FoG episodes and rebalancing the
//!   training set. Mixed windows below the threshold are discarded.
//! * `InferenceFixed` — constant 50% overlap, every window kept and labeled
//!   by the >= 50% rule, mimicking deployment where episodes are unknown.
//!
//! Every emitted frame is mean-removed per channel; the pre-centering
//! magnitude is captured per window for the activation gate.

use std::fs;
use std::path::Path;

use ndarray::{Array3, ArrayView2, s};
use serde::{Deserialize, Serialize};

use crate::error::{FogError, Result};
use crate::ingest::{remove_mean_inplace, Label, SignalStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentMode {
    TrainDhwt,
    InferenceFixed,
}

/// Segmentation parameters. Defaults: 3 s windows, 50% hop outside FoG,
/// 25% hop (75% overlap) inside FoG, window labeled FoG at >= 50% FoG
/// content.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_s: f64,
    pub hop_nonfog_frac: f64,
    pub hop_fog_frac: f64,
    pub label_threshold: f64,
    pub mode: SegmentMode,
}

impl WindowSpec {
    pub fn train() -> WindowSpec {
        WindowSpec {
            window_s: 3.0,
            hop_nonfog_frac: 0.5,
            hop_fog_frac: 0.25,
            label_threshold: 0.5,
            mode: SegmentMode::TrainDhwt,
        }
    }

    pub fn inference() -> WindowSpec {
        WindowSpec {
            mode: SegmentMode::InferenceFixed,
            ..WindowSpec::train()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_s <= 0.0 {
            return Err(FogError::Config("window_s must be positive".into()));
        }
        for (name, v) in [
            ("hop_nonfog_frac", self.hop_nonfog_frac),
            ("hop_fog_frac", self.hop_fog_frac),
            ("label_threshold", self.label_threshold),
        ] {
            if v <= 0.0 || v > 1.0 {
                return Err(FogError::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Window length in samples at a given rate.
    pub fn window_samples(&self, rate_hz: f64) -> usize {
        ((self.window_s * rate_hz).round() as usize).max(1)
    }

    pub fn hop_nonfog_samples(&self, rate_hz: f64) -> usize {
        ((self.hop_nonfog_frac * self.window_s * rate_hz).round() as usize).max(1)
    }

    pub fn hop_fog_samples(&self, rate_hz: f64) -> usize {
        ((self.hop_fog_frac * self.window_s * rate_hz).round() as usize).max(1)
    }

    /// Inference stride in seconds (the fixed hop).
    pub fn stride_s(&self) -> f64 {
        self.hop_nonfog_frac * self.window_s
    }
}

/// Segmented, mean-removed windows with labels and provenance.
#[derive(Debug, Clone)]
pub struct WindowSet {
    /// `N x T' x C`, per-channel mean removed.
    pub frames: Array3<f64>,
    pub labels: Vec<Label>,
    /// Fraction of FoG samples in each window's ground truth.
    pub fog_fraction: Vec<f64>,
    /// Sample offset of each window in its source stream.
    pub start_index: Vec<usize>,
    /// Mean per-sample Euclidean norm of the *raw* (pre-centering) window;
    /// the activation gate thresholds on this.
    pub raw_magnitude: Vec<f64>,
    pub spec: WindowSpec,
    pub rate_hz: f64,
    pub subject_id: String,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_samples(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn frame(&self, i: usize) -> ArrayView2<'_, f64> {
        self.frames.slice(s![i, .., ..])
    }

    /// Window start time in seconds relative to the stream origin.
    pub fn start_s(&self, i: usize) -> f64 {
        self.start_index[i] as f64 / self.rate_hz
    }

    /// A view that exposes frames only — the pretraining entry point takes
    /// this type so label access is ruled out statically.
    pub fn unlabeled(&self) -> UnlabeledWindows<'_> {
        UnlabeledWindows { frames: &self.frames }
    }

    /// Concatenate window sets that share a spec and rate. Start indices are
    /// offset per source so they stay strictly increasing; episode-level
    /// evaluation should stay per-source.
    pub fn concat(sets: &[WindowSet]) -> Result<WindowSet> {
        let first = sets
            .first()
            .ok_or_else(|| FogError::EmptyInput("no window sets to concatenate".into()))?;
        let t_prime = first.window_samples();
        let c = first.channels();
        let mut frames = Vec::new();
        let mut labels = Vec::new();
        let mut fog_fraction = Vec::new();
        let mut start_index = Vec::new();
        let mut raw_magnitude = Vec::new();
        let mut subjects = Vec::new();
        let mut offset = 0usize;
        for ws in sets {
            if ws.window_samples() != t_prime || ws.channels() != c {
                return Err(FogError::Structural(
                    "window sets with different shapes cannot be concatenated".into(),
                ));
            }
            frames.extend(ws.frames.iter().copied());
            labels.extend_from_slice(&ws.labels);
            fog_fraction.extend_from_slice(&ws.fog_fraction);
            raw_magnitude.extend_from_slice(&ws.raw_magnitude);
            start_index.extend(ws.start_index.iter().map(|&s| s + offset));
            offset += ws.start_index.last().map_or(0, |&s| s + t_prime);
            subjects.push(ws.subject_id.clone());
        }
        let n = labels.len();
        Ok(WindowSet {
            frames: Array3::from_shape_vec((n, t_prime, c), frames)
                .expect("concatenated frame count consistent"),
            labels,
            fog_fraction,
            start_index,
            raw_magnitude,
            spec: first.spec,
            rate_hz: first.rate_hz,
            subject_id: subjects.join("+"),
        })
    }
}

/// Frames-only view handed to pretraining.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledWindows<'a> {
    pub frames: &'a Array3<f64>,
}

impl UnlabeledWindows<'_> {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn raw_window_magnitude(stream: &SignalStream, start: usize, t_prime: usize) -> f64 {
    let mut acc = 0.0;
    for i in start..start + t_prime {
        let ax = stream.accel[[i, 0]];
        let ay = stream.accel[[i, 1]];
        let az = stream.accel[[i, 2]];
        acc += (ax * ax + ay * ay + az * az).sqrt();
    }
    acc / t_prime as f64
}

/// Segment a stream per the spec's mode. See the module docs for the hop
/// and discard rules.
pub fn segment(stream: &SignalStream, spec: &WindowSpec) -> Result<WindowSet> {
    spec.validate()?;
    let t_prime = spec.window_samples(stream.rate_hz);
    let n = stream.len();
    if n < t_prime {
        return Err(FogError::EmptyInput(format!(
            "stream of {n} samples is shorter than one {t_prime}-sample window"
        )));
    }
    let hop_fog = spec.hop_fog_samples(stream.rate_hz);
    let hop_nonfog = spec.hop_nonfog_samples(stream.rate_hz);

    let mut frames: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut fog_fraction = Vec::new();
    let mut start_index = Vec::new();
    let mut raw_magnitude = Vec::new();

    let mut start = 0usize;
    while start + t_prime <= n {
        let fog_count = stream.labels[start..start + t_prime]
            .iter()
            .filter(|l| l.is_fog())
            .count();
        let ff = fog_count as f64 / t_prime as f64;
        let is_fog = ff >= spec.label_threshold;

        let emit = match spec.mode {
            SegmentMode::InferenceFixed => true,
            // Mixed sub-threshold windows are dropped from training sets.
            SegmentMode::TrainDhwt => is_fog || fog_count == 0,
        };
        if emit {
            let mut frame = stream
                .accel
                .slice(s![start..start + t_prime, ..])
                .to_owned();
            remove_mean_inplace(&mut frame.view_mut());
            frames.extend(frame.iter().copied());
            labels.push(if is_fog { Label::Fog } else { Label::NonFog });
            fog_fraction.push(ff);
            start_index.push(start);
            raw_magnitude.push(raw_window_magnitude(stream, start, t_prime));
        }

        // The hop is decided by the just-considered window's own FoG
        // fraction; in fixed mode it never varies.
        let hop = match spec.mode {
            SegmentMode::InferenceFixed => hop_nonfog,
            SegmentMode::TrainDhwt => {
                if is_fog {
                    hop_fog
                } else {
                    hop_nonfog
                }
            }
        };
        start += hop;
    }

    let count = labels.len();
    Ok(WindowSet {
        frames: Array3::from_shape_vec((count, t_prime, 3), frames)
            .expect("frame count consistent"),
        labels,
        fog_fraction,
        start_index,
        raw_magnitude,
        spec: *spec,
        rate_hz: stream.rate_hz,
        subject_id: stream.subject_id.clone(),
    })
}

/// Fractions of non-FoG and FoG windows; sums to 1.
pub fn class_balance(ws: &WindowSet) -> Result<(f64, f64)> {
    if ws.is_empty() {
        return Err(FogError::EmptyInput("window set is empty".into()));
    }
    let fog = ws.labels.iter().filter(|l| l.is_fog()).count() as f64;
    let total = ws.len() as f64;
    Ok(((total - fog) / total, fog / total))
}

const FOGW_MAGIC: &[u8; 5] = b"FOGW1";

/// Sidecar metadata stored next to the binary container; the container
/// itself carries only shapes, frames, and labels.
#[derive(Debug, Serialize, Deserialize)]
struct WindowSidecar {
    spec: WindowSpec,
    rate_hz: f64,
    subject_id: String,
    start_index: Vec<usize>,
    fog_fraction: Vec<f64>,
    raw_magnitude: Vec<f64>,
}

/// Write the binary window container (`FOGW1`): magic, `N`/`T'`/`C` as u32
/// little-endian, frames as little-endian f32, labels as bytes. Provenance
/// goes to a `<path>.json` sidecar.
pub fn write_fogw1(ws: &WindowSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (n, t_prime, c) = (ws.len(), ws.window_samples(), ws.channels());
    let mut buf = Vec::with_capacity(5 + 12 + n * t_prime * c * 4 + n);
    buf.extend_from_slice(FOGW_MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(t_prime as u32).to_le_bytes());
    buf.extend_from_slice(&(c as u32).to_le_bytes());
    for v in ws.frames.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for l in &ws.labels {
        buf.push(l.as_bit());
    }
    fs::write(path, buf)?;

    let sidecar = WindowSidecar {
        spec: ws.spec,
        rate_hz: ws.rate_hz,
        subject_id: ws.subject_id.clone(),
        start_index: ws.start_index.clone(),
        fog_fraction: ws.fog_fraction.clone(),
        raw_magnitude: ws.raw_magnitude.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| FogError::Format(format!("sidecar serialization failed: {e}")))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut o = path.as_os_str().to_owned();
    o.push(".json");
    o.into()
}

/// Read a `FOGW1` container. If the `.json` sidecar is present, provenance
/// is restored from it; otherwise defaults are synthesized (40 Hz, fixed
/// inference spec, stride-spaced starts) and magnitudes are computed from
/// the stored — already centered — frames.
pub fn read_fogw1(path: impl AsRef<Path>) -> Result<WindowSet> {
    let path = path.as_ref();
    let buf = fs::read(path)?;
    if buf.len() < 17 || &buf[..5] != FOGW_MAGIC {
        return Err(FogError::Format("not a FOGW1 container".into()));
    }
    let rd_u32 = |off: usize| u32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as usize;
    let n = rd_u32(5);
    let t_prime = rd_u32(9);
    let c = rd_u32(13);
    let frames_off = 17;
    let frames_len = n * t_prime * c * 4;
    let labels_off = frames_off + frames_len;
    if buf.len() < labels_off + n {
        return Err(FogError::Format(format!(
            "FOGW1 truncated: need {} bytes, have {}",
            labels_off + n,
            buf.len()
        )));
    }
    let mut frames = Vec::with_capacity(n * t_prime * c);
    for i in 0..n * t_prime * c {
        let off = frames_off + i * 4;
        frames.push(f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64);
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let bit = buf[labels_off + i];
        labels.push(Label::from_bit(bit).ok_or_else(|| {
            FogError::Format(format!("bad label byte {bit} at window {i}"))
        })?);
    }
    let frames = Array3::from_shape_vec((n, t_prime, c), frames).expect("shape consistent");

    let sc_path = sidecar_path(path);
    if sc_path.exists() {
        let sc: WindowSidecar = serde_json::from_str(&fs::read_to_string(&sc_path)?)
            .map_err(|e| FogError::Format(format!("bad window sidecar: {e}")))?;
        if sc.start_index.len() != n || sc.fog_fraction.len() != n || sc.raw_magnitude.len() != n {
            return Err(FogError::Format(
                "window sidecar length disagrees with container".into(),
            ));
        }
        Ok(WindowSet {
            frames,
            labels,
            fog_fraction: sc.fog_fraction,
            start_index: sc.start_index,
            raw_magnitude: sc.raw_magnitude,
            spec: sc.spec,
            rate_hz: sc.rate_hz,
            subject_id: sc.subject_id,
        })
    } else {
        let spec = WindowSpec::inference();
        let rate_hz = 40.0;
        let hop = spec.hop_nonfog_samples(rate_hz);
        let raw_magnitude = (0..n)
            .map(|i| {
                let f = frames.slice(s![i, .., ..]);
                f.rows()
                    .into_iter()
                    .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .sum::<f64>()
                    / t_prime.max(1) as f64
            })
            .collect();
        Ok(WindowSet {
            frames,
            fog_fraction: labels.iter().map(|l| l.as_bit() as f64).collect(),
            start_index: (0..n).map(|i| i * hop).collect(),
            raw_magnitude,
            labels,
            spec,
            rate_hz,
            subject_id: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "windows".into()),
        })
    }
}
