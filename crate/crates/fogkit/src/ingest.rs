//! Loading, resampling, and per-window centering of accelerometer recordings.
//!
//! The toolkit's on-disk interchange format is the *canonical CSV*: UTF-8,
//! header `t,ax,ay,az,label`, `t` in seconds, accelerations as decimal
//! floats, `label` 0 (non-FoG) or 1 (FoG). Dataset-specific adapters
//! ([`load_daphnet`], [`load_mapped_csv`]) convert into the same in-memory
//! representation.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{FogError, Result};

/// Per-sample (and per-window) class label. FoG is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    NonFog,
    Fog,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Label> {
        match bit {
            0 => Some(Label::NonFog),
            1 => Some(Label::Fog),
            _ => None,
        }
    }

    pub fn as_bit(self) -> u8 {
        match self {
            Label::NonFog => 0,
            Label::Fog => 1,
        }
    }

    pub fn is_fog(self) -> bool {
        self == Label::Fog
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_bit())
    }
}

/// Acceleration unit declared by a stream. Gate thresholds are interpreted
/// in this unit; `g` is the canonical choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    G,
    MPerS2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Medication {
    On,
    Off,
    Unknown,
}

/// A uniformly sampled, per-sample-labeled 3-axis accelerometer recording.
#[derive(Debug, Clone)]
pub struct SignalStream {
    /// Timestamps in seconds, strictly increasing, spacing `1/rate_hz`
    /// within 1e-6 s.
    pub t: Vec<f64>,
    /// `n x 3` accelerations in `unit`.
    pub accel: Array2<f64>,
    /// Per-sample labels, same length as `t`.
    pub labels: Vec<Label>,
    pub rate_hz: f64,
    pub unit: Unit,
    pub subject_id: String,
    pub medication: Medication,
}

/// Maximum deviation of timestamp spacing from `1/rate_hz`, in seconds.
pub const SPACING_TOL_S: f64 = 1e-6;

impl SignalStream {
    /// Build a stream and validate its invariants: equal lengths, positive
    /// rate, strictly increasing timestamps on a uniform grid.
    pub fn new(
        t: Vec<f64>,
        accel: Array2<f64>,
        labels: Vec<Label>,
        rate_hz: f64,
        unit: Unit,
        subject_id: impl Into<String>,
        medication: Medication,
    ) -> Result<SignalStream> {
        if rate_hz <= 0.0 || !rate_hz.is_finite() {
            return Err(FogError::Structural(format!(
                "rate_hz must be positive and finite, got {rate_hz}"
            )));
        }
        if accel.nrows() != t.len() || labels.len() != t.len() {
            return Err(FogError::Structural(format!(
                "length mismatch: {} timestamps, {} accel rows, {} labels",
                t.len(),
                accel.nrows(),
                labels.len()
            )));
        }
        if accel.ncols() != 3 {
            return Err(FogError::Structural(format!(
                "expected 3 acceleration channels, got {}",
                accel.ncols()
            )));
        }
        let dt = 1.0 / rate_hz;
        for i in 1..t.len() {
            let spacing = t[i] - t[i - 1];
            if spacing <= 0.0 {
                return Err(FogError::Structural(format!(
                    "timestamps not strictly increasing at sample {i}: {} -> {}",
                    t[i - 1],
                    t[i]
                )));
            }
            if (spacing - dt).abs() > SPACING_TOL_S {
                return Err(FogError::Structural(format!(
                    "sample spacing {spacing} at index {i} deviates from 1/rate = {dt} by more \
                     than {SPACING_TOL_S} s"
                )));
            }
        }
        Ok(SignalStream {
            t,
            accel,
            labels,
            rate_hz,
            unit,
            subject_id: subject_id.into(),
            medication,
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        if self.t.len() < 2 {
            0.0
        } else {
            self.t[self.t.len() - 1] - self.t[0]
        }
    }

    /// Fraction of samples labeled FoG.
    pub fn fog_sample_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let fog = self.labels.iter().filter(|l| l.is_fog()).count();
        fog as f64 / self.labels.len() as f64
    }
}

fn median_spacing(t: &[f64]) -> Result<f64> {
    if t.len() < 2 {
        return Err(FogError::EmptyInput(
            "need at least 2 samples to infer a sample rate".into(),
        ));
    }
    let mut diffs: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    diffs.sort_by(|a, b| a.partial_cmp(b).expect("non-finite timestamp spacing"));
    let n = diffs.len();
    let med = if n % 2 == 1 {
        diffs[n / 2]
    } else {
        0.5 * (diffs[n / 2 - 1] + diffs[n / 2])
    };
    if med <= 0.0 {
        return Err(FogError::Structural(
            "non-positive median timestamp spacing".into(),
        ));
    }
    Ok(med)
}

/// Format a timestamp with at least 6 decimal digits while still parsing
/// back to the exact same f64.
fn format_t(t: f64) -> String {
    let nine = format!("{t:.9}");
    if nine.parse::<f64>() == Ok(t) {
        nine
    } else {
        format!("{t:.17}")
    }
}

/// Load a canonical CSV (`t,ax,ay,az,label`). The sample rate is inferred
/// from the median timestamp spacing.
pub fn load_canonical_csv(path: impl AsRef<Path>) -> Result<SignalStream> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let subject = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".into());
    parse_canonical_csv(&text, &subject)
}

/// Parse canonical CSV text. Separate from [`load_canonical_csv`] so tests
/// and adapters can run on in-memory fixtures.
pub fn parse_canonical_csv(text: &str, subject_id: &str) -> Result<SignalStream> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| {
        FogError::EmptyInput("canonical CSV has no header line".into())
    })?;
    if header.trim() != "t,ax,ay,az,label" {
        return Err(FogError::Format(format!(
            "expected header `t,ax,ay,az,label`, got `{}`",
            header.trim()
        )));
    }

    let mut t = Vec::new();
    let mut accel = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1; // enumerate is 0-based over all lines
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(FogError::Parse {
                line: lineno,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| FogError::Parse {
                line: lineno,
                msg: format!("bad {what} value `{s}`"),
            })
        };
        let ti = parse_f(fields[0], "t")?;
        let ax = parse_f(fields[1], "ax")?;
        let ay = parse_f(fields[2], "ay")?;
        let az = parse_f(fields[3], "az")?;
        let label = match fields[4].trim() {
            "0" => Label::NonFog,
            "1" => Label::Fog,
            other => {
                return Err(FogError::Parse {
                    line: lineno,
                    msg: format!("label must be 0 or 1, got `{other}`"),
                })
            }
        };
        t.push(ti);
        accel.extend_from_slice(&[ax, ay, az]);
        labels.push(label);
    }

    for i in 1..t.len() {
        if t[i] <= t[i - 1] {
            return Err(FogError::Structural(format!(
                "timestamps not strictly increasing at row {i}"
            )));
        }
    }
    let rate_hz = 1.0 / median_spacing(&t)?;
    let n = t.len();
    let accel = Array2::from_shape_vec((n, 3), accel).expect("row count consistent");
    SignalStream::new(t, accel, labels, rate_hz, Unit::G, subject_id, Medication::Unknown)
}

/// Write a stream as canonical CSV. Timestamps carry at least 6 decimal
/// digits; accelerations use shortest-round-trip formatting so that
/// `load_canonical_csv` restores them bit-identically.
pub fn write_canonical_csv(stream: &SignalStream, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::with_capacity(stream.len() * 32);
    writeln!(out, "t,ax,ay,az,label")?;
    for i in 0..stream.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            format_t(stream.t[i]),
            stream.accel[[i, 0]],
            stream.accel[[i, 1]],
            stream.accel[[i, 2]],
            stream.labels[i]
        )?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Which 3-axis sensor group to take from the Daphnet 9-channel layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DaphnetSensor {
    Ankle,
    Thigh,
    Trunk,
}

impl DaphnetSensor {
    fn first_column(self) -> usize {
        match self {
            DaphnetSensor::Ankle => 1,
            DaphnetSensor::Thigh => 4,
            DaphnetSensor::Trunk => 7,
        }
    }
}

/// Load a Daphnet-format recording: space-separated, `time_ms` + 9
/// acceleration columns (mg) + annotation, where annotation 2 = freeze,
/// 1 = no freeze, 0 = out of experiment (dropped).
///
/// Dropped rows leave gaps, so kept samples are rebased onto a uniform grid
/// at the file's native rate; the grid starts at the first kept timestamp.
pub fn load_daphnet(path: impl AsRef<Path>, sensor: DaphnetSensor) -> Result<SignalStream> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let subject = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "daphnet".into());
    parse_daphnet(&text, sensor, &subject)
}

/// Parse Daphnet text; see [`load_daphnet`].
pub fn parse_daphnet(text: &str, sensor: DaphnetSensor, subject_id: &str) -> Result<SignalStream> {
    let mut raw_t_ms: Vec<f64> = Vec::new();
    let mut kept: Vec<([f64; 3], Label)> = Vec::new();
    let mut first_kept_ms: Option<f64> = None;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 11 {
            return Err(FogError::Format(format!(
                "Daphnet rows have 11 columns (time + 9 accel + annotation), got {} at line {}",
                fields.len(),
                lineno
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| FogError::Parse {
                line: lineno,
                msg: format!("bad numeric value `{s}`"),
            })
        };
        let t_ms = parse_f(fields[0])?;
        raw_t_ms.push(t_ms);
        let annotation = fields[10];
        let label = match annotation {
            "0" => continue, // out of experiment
            "1" => Label::NonFog,
            "2" => Label::Fog,
            other => {
                return Err(FogError::Parse {
                    line: lineno,
                    msg: format!("annotation must be 0, 1 or 2, got `{other}`"),
                })
            }
        };
        let c0 = sensor.first_column();
        // Daphnet accelerations are in mg; convert to g.
        let sample = [
            parse_f(fields[c0])? / 1000.0,
            parse_f(fields[c0 + 1])? / 1000.0,
            parse_f(fields[c0 + 2])? / 1000.0,
        ];
        first_kept_ms.get_or_insert(t_ms);
        kept.push((sample, label));
    }

    if kept.is_empty() {
        return Err(FogError::EmptyInput(
            "no in-experiment (annotation 1/2) rows in Daphnet file".into(),
        ));
    }
    let dt_s = median_spacing(&raw_t_ms)? / 1000.0;
    let rate_hz = 1.0 / dt_s;
    let t0 = first_kept_ms.unwrap_or(0.0) / 1000.0;

    let n = kept.len();
    let mut accel = Array2::zeros((n, 3));
    let mut labels = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    for (i, (sample, label)) in kept.into_iter().enumerate() {
        accel[[i, 0]] = sample[0];
        accel[[i, 1]] = sample[1];
        accel[[i, 2]] = sample[2];
        labels.push(label);
        t.push(t0 + i as f64 * dt_s);
    }
    SignalStream::new(t, accel, labels, rate_hz, Unit::G, subject_id, Medication::Unknown)
}

/// Column mapping for headered CSV layouts whose schema is configured
/// rather than hard-coded (e.g. the tDCS provocation-trial exports).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub time: String,
    pub ax: String,
    pub ay: String,
    pub az: String,
    /// A sample is FoG when *any* of these columns is nonzero.
    pub label_any: Vec<String>,
    /// Multiply raw time values by this to get seconds (0.001 for ms).
    pub time_scale: f64,
    pub unit: Unit,
}

/// Load a headered CSV through a [`ColumnMap`].
pub fn load_mapped_csv(path: impl AsRef<Path>, map: &ColumnMap) -> Result<SignalStream> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let subject = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mapped".into());
    parse_mapped_csv(&text, map, &subject)
}

pub fn parse_mapped_csv(text: &str, map: &ColumnMap, subject_id: &str) -> Result<SignalStream> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| FogError::EmptyInput("mapped CSV has no header line".into()))?;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let find = |name: &str| -> Result<usize> {
        cols.iter().position(|c| *c == name).ok_or_else(|| {
            FogError::Format(format!("column `{name}` not found in header `{}`", header.trim()))
        })
    };
    let it = find(&map.time)?;
    let ix = find(&map.ax)?;
    let iy = find(&map.ay)?;
    let iz = find(&map.az)?;
    let ilabels: Vec<usize> = map
        .label_any
        .iter()
        .map(|n| find(n))
        .collect::<Result<_>>()?;
    if ilabels.is_empty() {
        return Err(FogError::Config("column map needs at least one label column".into()));
    }

    let mut t = Vec::new();
    let mut accel = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(FogError::Parse {
                line: lineno,
                msg: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let parse_f = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|_| FogError::Parse {
                line: lineno,
                msg: format!("bad numeric value `{}` in column {}", fields[i], cols[i]),
            })
        };
        t.push(parse_f(it)? * map.time_scale);
        accel.extend_from_slice(&[parse_f(ix)?, parse_f(iy)?, parse_f(iz)?]);
        let fog = ilabels
            .iter()
            .map(|&i| parse_f(i))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .any(|v| *v != 0.0);
        labels.push(if fog { Label::Fog } else { Label::NonFog });
    }

    let rate_hz = 1.0 / median_spacing(&t)?;
    let n = t.len();
    let accel = Array2::from_shape_vec((n, 3), accel).expect("row count consistent");
    SignalStream::new(t, accel, labels, rate_hz, map.unit, subject_id, Medication::Unknown)
}

/// Resample a stream onto a uniform grid at `target_hz`. Signal values are
/// linearly interpolated; labels are taken from the nearest input sample.
pub fn resample(stream: &SignalStream, target_hz: f64) -> Result<SignalStream> {
    if stream.is_empty() {
        return Err(FogError::EmptyInput("cannot resample an empty stream".into()));
    }
    if target_hz <= 0.0 || !target_hz.is_finite() {
        return Err(FogError::Config(format!(
            "target_hz must be positive and finite, got {target_hz}"
        )));
    }
    let n = stream.len();
    if n == 1 {
        return Err(FogError::EmptyInput(
            "cannot resample a single-sample stream".into(),
        ));
    }

    let duration = stream.duration_s();
    let m = (duration * target_hz + 1e-9).floor() as usize + 1;
    let step_in = stream.rate_hz / target_hz; // input-index distance per output sample
    let t0 = stream.t[0];

    let mut t = Vec::with_capacity(m);
    let mut accel = Array2::zeros((m, 3));
    let mut labels = Vec::with_capacity(m);
    for j in 0..m {
        let u = (j as f64 * step_in).min((n - 1) as f64);
        let i0 = (u.floor() as usize).min(n - 2);
        let frac = u - i0 as f64;
        for c in 0..3 {
            accel[[j, c]] =
                (1.0 - frac) * stream.accel[[i0, c]] + frac * stream.accel[[i0 + 1, c]];
        }
        let nearest = (u.round() as usize).min(n - 1);
        labels.push(stream.labels[nearest]);
        t.push(t0 + j as f64 / target_hz);
    }

    SignalStream::new(
        t,
        accel,
        labels,
        target_hz,
        stream.unit,
        stream.subject_id.clone(),
        stream.medication,
    )
}

/// Subtract the per-channel arithmetic mean from a `T' x C` frame.
pub fn remove_mean(frame: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = frame.to_owned();
    remove_mean_inplace(&mut out.view_mut());
    out
}

/// In-place variant of [`remove_mean`], used on every frame the segmenter
/// emits.
pub fn remove_mean_inplace(frame: &mut ArrayViewMut2<f64>) {
    let rows = frame.nrows();
    if rows == 0 {
        return;
    }
    for c in 0..frame.ncols() {
        let mut col = frame.column_mut(c);
        let mean = col.sum() / rows as f64;
        col.mapv_inplace(|v| v - mean);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stream_from_fn(
        n: usize,
        rate: f64,
        f: impl Fn(f64) -> [f64; 3],
        label: impl Fn(usize) -> Label,
    ) -> SignalStream {
        let t: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        let mut accel = Array2::zeros((n, 3));
        for (i, &ti) in t.iter().enumerate() {
            let v = f(ti);
            accel[[i, 0]] = v[0];
            accel[[i, 1]] = v[1];
            accel[[i, 2]] = v[2];
        }
        let labels = (0..n).map(label).collect();
        SignalStream::new(t, accel, labels, rate, Unit::G, "test", Medication::Unknown).unwrap()
    }

    #[test]
    fn canonical_rate_inferred_from_spacing() {
        let text = "t,ax,ay,az,label\n0.000000,0.1,0.2,0.3,0\n0.007812500,0.1,0.2,0.3,0\n0.015625000,0.1,0.2,0.3,1\n0.023437500,0.1,0.2,0.3,0\n";
        let s = parse_canonical_csv(text, "s").unwrap();
        assert_eq!(s.len(), 4);
        assert!((s.rate_hz - 128.0).abs() < 1e-6);
        assert_eq!(s.labels[2], Label::Fog);
    }

    #[test]
    fn canonical_all_zero_labels_mean_no_fog() {
        let text = "t,ax,ay,az,label\n0.000000,0,0,1,0\n0.025000,0,0,1,0\n0.050000,0,0,1,0\n";
        let s = parse_canonical_csv(text, "s").unwrap();
        assert_eq!(s.labels.iter().filter(|l| l.is_fog()).count(), 0);
    }

    #[test]
    fn canonical_malformed_row_reports_line() {
        let text = "t,ax,ay,az,label\n0.000000,0,0,1,0\n0.025,0,oops,1,0\n";
        match parse_canonical_csv(text, "s") {
            Err(FogError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn canonical_non_monotone_is_structural() {
        let text = "t,ax,ay,az,label\n0.025000,0,0,1,0\n0.000000,0,0,1,0\n0.050000,0,0,1,0\n";
        assert!(matches!(
            parse_canonical_csv(text, "s"),
            Err(FogError::Structural(_))
        ));
    }

    #[test]
    fn canonical_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1000;
        let rate = 40.0;
        let t: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        let mut accel = Array2::zeros((n, 3));
        for i in 0..n {
            for c in 0..3 {
                accel[[i, c]] = rng.gen_range(-2.0..2.0);
            }
        }
        let labels: Vec<Label> = (0..n)
            .map(|_| if rng.gen_bool(0.3) { Label::Fog } else { Label::NonFog })
            .collect();
        let s = SignalStream::new(t, accel, labels, rate, Unit::G, "rt", Medication::Unknown)
            .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        write_canonical_csv(&s, &path).unwrap();
        let back = load_canonical_csv(&path).unwrap();

        assert_eq!(back.len(), s.len());
        assert_eq!(back.t, s.t);
        assert_eq!(back.labels, s.labels);
        assert_eq!(back.accel, s.accel);
        assert!((back.rate_hz - s.rate_hz).abs() < 1e-9);
    }

    #[test]
    fn daphnet_annotation_mapping() {
        // 11 columns: time_ms + 9 accel (mg) + annotation.
        let row = |t: u64, a: u8| {
            format!("{t} 10 20 980 11 21 981 12 22 982 {a}")
        };
        let text = [
            row(0, 0),
            row(15, 1),
            row(31, 2),
            row(46, 2),
            row(62, 0),
            row(78, 1),
        ]
        .join("\n");
        let s = parse_daphnet(&text, DaphnetSensor::Ankle, "d").unwrap();
        // annotation-0 rows excluded
        assert_eq!(s.len(), 4);
        assert_eq!(s.labels, vec![Label::NonFog, Label::Fog, Label::Fog, Label::NonFog]);
        // mg -> g on the selected sensor group
        assert!((s.accel[[0, 2]] - 0.980).abs() < 1e-12);
        // ~64 Hz from the 15/16 ms spacing
        assert!((s.rate_hz - 64.0).abs() < 2.0, "rate {}", s.rate_hz);
    }

    #[test]
    fn daphnet_sample_count_matches_annotated_rows() {
        let mut rows = Vec::new();
        let mut expected = 0usize;
        for i in 0..100u64 {
            let a = match i % 5 {
                0 => 0,
                1 | 2 => 1,
                _ => 2,
            };
            if a != 0 {
                expected += 1;
            }
            rows.push(format!("{} 1 2 3 4 5 6 7 8 9 {a}", i * 16));
        }
        let s = parse_daphnet(&rows.join("\n"), DaphnetSensor::Trunk, "d").unwrap();
        assert_eq!(s.len(), expected);
    }

    #[test]
    fn daphnet_column_mismatch_is_format_error() {
        let text = "0 1 2 3 1\n";
        assert!(matches!(
            parse_daphnet(text, DaphnetSensor::Ankle, "d"),
            Err(FogError::Format(_))
        ));
    }

    #[test]
    fn mapped_csv_or_of_label_columns() {
        let map = ColumnMap {
            time: "Time".into(),
            ax: "AccV".into(),
            ay: "AccML".into(),
            az: "AccAP".into(),
            label_any: vec!["StartHesitation".into(), "Turn".into(), "Walking".into()],
            time_scale: 1.0 / 128.0,
            unit: Unit::MPerS2,
        };
        let text = "Time,AccV,AccML,AccAP,StartHesitation,Turn,Walking\n\
                    0,9.8,0,0,0,0,0\n\
                    1,9.8,0,0,0,1,0\n\
                    2,9.8,0,0,0,0,0\n";
        let s = parse_mapped_csv(text, &map, "m").unwrap();
        assert_eq!(s.labels, vec![Label::NonFog, Label::Fog, Label::NonFog]);
        assert!((s.rate_hz - 128.0).abs() < 1e-6);
    }

    #[test]
    fn resample_constant_is_exact() {
        let s = stream_from_fn(256, 128.0, |_| [0.5, 0.5, 0.5], |_| Label::NonFog);
        let r = resample(&s, 40.0).unwrap();
        assert!((r.rate_hz - 40.0).abs() < 1e-12);
        for v in r.accel.iter() {
            assert!((v - 0.5).abs() < 1e-12);
        }
        assert!((r.duration_s() - s.duration_s()).abs() <= 1.0 / 40.0);
    }

    #[test]
    fn resample_linear_ramp_is_exact() {
        let s = stream_from_fn(256, 128.0, |t| [t, 2.0 * t, -t], |_| Label::NonFog);
        let r = resample(&s, 40.0).unwrap();
        for (j, &tj) in r.t.iter().enumerate() {
            assert!((r.accel[[j, 0]] - tj).abs() < 1e-9);
            assert!((r.accel[[j, 1]] - 2.0 * tj).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_freeze_band_sine_amplitude_within_one_percent() {
        // 5 Hz lies in the 3-8 Hz freeze band; 2 s at 128 Hz.
        let f = 5.0;
        let s = stream_from_fn(
            257,
            128.0,
            |t| [(2.0 * std::f64::consts::PI * f * t).sin(), 0.0, 0.0],
            |_| Label::NonFog,
        );
        let r = resample(&s, 40.0).unwrap();
        // Analytic reference: the same sine sampled directly at 40 Hz.
        let rms = |xs: &[f64]| (xs.iter().map(|v| v * v).sum::<f64>() / xs.len() as f64).sqrt();
        let got: Vec<f64> = r.accel.column(0).to_vec();
        let want: Vec<f64> = r
            .t
            .iter()
            .map(|&tj| (2.0 * std::f64::consts::PI * f * tj).sin())
            .collect();
        let ratio = rms(&got) / rms(&want);
        assert!((ratio - 1.0).abs() < 0.01, "amplitude ratio {ratio}");
    }

    #[test]
    fn resample_identity_when_rates_match() {
        let s = stream_from_fn(200, 40.0, |t| [t.sin(), t.cos(), 1.0], |i| {
            if i % 7 == 0 {
                Label::Fog
            } else {
                Label::NonFog
            }
        });
        let r = resample(&s, 40.0).unwrap();
        assert_eq!(r.len(), s.len());
        for (a, b) in r.accel.iter().zip(s.accel.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(r.labels, s.labels);
    }

    #[test]
    fn resample_empty_stream_errors() {
        let s = SignalStream {
            t: vec![],
            accel: Array2::zeros((0, 3)),
            labels: vec![],
            rate_hz: 40.0,
            unit: Unit::G,
            subject_id: "e".into(),
            medication: Medication::Unknown,
        };
        assert!(matches!(resample(&s, 40.0), Err(FogError::EmptyInput(_))));
    }

    #[test]
    fn remove_mean_constant_becomes_zero() {
        let frame = Array2::from_shape_fn((10, 3), |(_, c)| (c + 1) as f64);
        let out = remove_mean(&frame.view());
        for v in out.iter() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn remove_mean_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frame = Array2::from_shape_fn((120, 3), |_| rng.gen_range(-1.0..1.0));
        let once = remove_mean(&frame.view());
        let twice = remove_mean(&once.view());
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for c in 0..3 {
            let mean = once.column(c).sum() / 120.0;
            assert!(mean.abs() < 1e-9);
        }
    }
}
