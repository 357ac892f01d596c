//! Synthetic accelerometer cohorts for desk-scale experiments.
//!
//! Each subject alternates walking bouts (subject-specific gait frequency
//! in the 1.6–2.2 Hz range), injected FoG episodes (5–7 Hz low-amplitude
//! trembling with no gait component), and rest bouts that sit at the ~1 g
//! gravity baseline, below any plausible gate threshold. Labels are exact
//! by construction and the FoG sample count hits the requested rate up to
//! rounding. Episode lengths mix the short/medium/long duration buckets.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FogError, Result};
use crate::ingest::{Label, Medication, SignalStream, Unit};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub subjects: usize,
    /// Recording length per subject, seconds.
    pub duration_s: f64,
    pub rate_hz: f64,
    /// Fraction of samples labeled FoG.
    pub fog_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            subjects: 10,
            duration_s: 900.0,
            rate_hz: 40.0,
            fog_rate: 0.3,
        }
    }
}

/// Clinical matching features used by the LOGO split; `None` marks a
/// missing value to be imputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFeatures {
    pub subject_id: String,
    pub age: Option<f64>,
    pub years_since_dx: Option<f64>,
    pub updrs: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Bout {
    Walk,
    Fog,
    Rest,
}

/// Generate a cohort. Deterministic per `(spec, seed)`; subjects derive
/// independent streams so they can be regenerated individually.
pub fn synth_cohort(spec: &SynthSpec, seed: u64) -> Result<Vec<(SignalStream, SubjectFeatures)>> {
    if !(0.0..=1.0).contains(&spec.fog_rate) {
        return Err(FogError::Config(format!(
            "fog_rate must lie in [0, 1], got {}",
            spec.fog_rate
        )));
    }
    if spec.subjects == 0 || spec.duration_s <= 0.0 || spec.rate_hz <= 0.0 {
        return Err(FogError::Config("synth spec must be positive".into()));
    }
    (0..spec.subjects)
        .map(|s| synth_subject(spec, seeds::derive_n(seed, "subject", s as u64), s))
        .collect()
}

fn synth_subject(
    spec: &SynthSpec,
    seed: u64,
    index: usize,
) -> Result<(SignalStream, SubjectFeatures)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = spec.rate_hz;
    let n = (spec.duration_s * rate).round() as usize;
    let n_fog = (spec.fog_rate * n as f64).round() as usize;

    // Subject-specific signal character.
    let gait_hz = rng.gen_range(1.6..2.2);
    let gait_amp = rng.gen_range(0.35..0.5);
    let tremble_hz = rng.gen_range(5.0..7.0);
    let tremble_amp = rng.gen_range(0.2..0.3);

    let plan = plan_bouts(&mut rng, n, n_fog, rate);

    let mut accel = Array2::zeros((n, 3));
    let mut labels = Vec::with_capacity(n);
    let mut t_idx = 0usize;
    for (bout, len) in plan {
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        for k in 0..len {
            let t = (t_idx + k) as f64 / rate;
            let (ax, ay, az, label) = match bout {
                Bout::Walk => {
                    let w = std::f64::consts::TAU * gait_hz;
                    (
                        gait_amp * (w * t + phase).sin()
                            + 0.3 * gait_amp * (2.0 * w * t + phase).sin(),
                        0.6 * gait_amp * (w * t + phase + 1.1).sin(),
                        1.0 + 0.25 * gait_amp * (2.0 * w * t + phase).sin(),
                        Label::NonFog,
                    )
                }
                Bout::Fog => {
                    let w = std::f64::consts::TAU * tremble_hz;
                    let env = 0.85 + 0.15 * (std::f64::consts::TAU * 0.7 * t).sin();
                    (
                        tremble_amp * env * (w * t + phase).sin(),
                        0.7 * tremble_amp * env * (1.02 * w * t + phase).cos(),
                        1.0 + 0.15 * tremble_amp * (w * t + phase + 0.4).sin(),
                        Label::Fog,
                    )
                }
                Bout::Rest => (0.0, 0.0, 1.0, Label::NonFog),
            };
            let noise = match bout {
                Bout::Rest => 0.002,
                _ => 0.01,
            };
            accel[[t_idx + k, 0]] = ax + noise * rng.gen_range(-1.0..1.0);
            accel[[t_idx + k, 1]] = ay + noise * rng.gen_range(-1.0..1.0);
            accel[[t_idx + k, 2]] = az + noise * rng.gen_range(-1.0..1.0);
            labels.push(label);
        }
        t_idx += len;
    }
    debug_assert_eq!(t_idx, n);

    let t: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
    let stream = SignalStream::new(
        t,
        accel,
        labels,
        rate,
        Unit::G,
        format!("s{index:02}"),
        Medication::Unknown,
    )?;
    let features = SubjectFeatures {
        subject_id: format!("s{index:02}"),
        age: Some(rng.gen_range(55.0..80.0)),
        years_since_dx: Some(rng.gen_range(2.0..18.0)),
        updrs: Some(rng.gen_range(20.0..55.0)),
    };
    Ok((stream, features))
}

/// Lay out bouts so FoG samples total exactly `n_fog`. FoG episode lengths
/// mix the three duration buckets; gaps between episodes are walking with
/// rest inserted in every other gap.
fn plan_bouts(rng: &mut ChaCha8Rng, n: usize, n_fog: usize, rate: f64) -> Vec<(Bout, usize)> {
    let sec = |s: f64| (s * rate).round() as usize;

    // FoG episode lengths summing exactly to n_fog.
    let mut episodes: Vec<usize> = Vec::new();
    let mut remaining = n_fog;
    while remaining > 0 {
        let want = match rng.gen_range(0..10) {
            0..=3 => rng.gen_range(3.0..5.5),   // short
            4..=6 => rng.gen_range(7.0..11.5),  // medium
            _ => rng.gen_range(13.0..20.0),     // long
        };
        let len = sec(want).min(remaining);
        if remaining.saturating_sub(len) < sec(2.0) {
            episodes.push(remaining);
            remaining = 0;
        } else {
            episodes.push(len);
            remaining -= len;
        }
    }

    // Split the non-FoG budget into gaps around the episodes, each at least
    // one window (3 s) so pure non-FoG windows always exist.
    let gaps = episodes.len() + 1;
    let non_fog = n - n_fog;
    let min_gap = sec(4.0).min(non_fog / gaps.max(1)).max(1);
    let mut gap_lens = vec![min_gap; gaps];
    let mut left = non_fog - min_gap * gaps;
    // Spread the remainder by random proportions.
    let weights: Vec<f64> = (0..gaps).map(|_| rng.gen_range(0.2..1.0)).collect();
    let wsum: f64 = weights.iter().sum();
    for (g, w) in gap_lens.iter_mut().zip(&weights) {
        let extra = ((w / wsum) * left as f64).floor() as usize;
        *g += extra;
    }
    let assigned: usize = gap_lens.iter().sum();
    left = non_fog - assigned;
    gap_lens[0] += left; // exact budget

    let mut plan: Vec<(Bout, usize)> = Vec::new();
    for (i, &gap) in gap_lens.iter().enumerate() {
        // Alternate gaps carry a rest bout in the middle when long enough.
        let rest = if i % 2 == 1 && gap > sec(14.0) {
            sec(rng.gen_range(5.0..9.0))
        } else {
            0
        };
        let walk = gap - rest;
        let first_walk = walk / 2;
        if first_walk > 0 {
            plan.push((Bout::Walk, first_walk));
        }
        if rest > 0 {
            plan.push((Bout::Rest, rest));
        }
        if walk - first_walk > 0 {
            plan.push((Bout::Walk, walk - first_walk));
        }
        if i < episodes.len() {
            plan.push((Bout::Fog, episodes[i]));
        }
    }
    plan.retain(|&(_, len)| len > 0);
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_fog_rate_means_no_fog_labels() {
        let spec = SynthSpec {
            subjects: 2,
            duration_s: 60.0,
            fog_rate: 0.0,
            ..SynthSpec::default()
        };
        for (stream, _) in synth_cohort(&spec, 1).unwrap() {
            assert_eq!(stream.labels.iter().filter(|l| l.is_fog()).count(), 0);
        }
    }

    #[test]
    fn fifteen_minutes_at_40hz_is_36000_samples() {
        let spec = SynthSpec {
            subjects: 1,
            duration_s: 900.0,
            rate_hz: 40.0,
            fog_rate: 0.3,
        };
        let cohort = synth_cohort(&spec, 2).unwrap();
        assert_eq!(cohort[0].0.len(), 36000);
    }

    #[test]
    fn fog_fraction_matches_requested_rate() {
        let spec = SynthSpec {
            subjects: 10,
            duration_s: 120.0,
            rate_hz: 40.0,
            fog_rate: 0.3,
        };
        let cohort = synth_cohort(&spec, 3).unwrap();
        let mut fog = 0usize;
        let mut total = 0usize;
        for (stream, _) in &cohort {
            fog += stream.labels.iter().filter(|l| l.is_fog()).count();
            total += stream.len();
        }
        let rate = fog as f64 / total as f64;
        assert!((rate - 0.3).abs() < 0.02, "fog rate {rate}");
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec {
            subjects: 2,
            duration_s: 30.0,
            ..SynthSpec::default()
        };
        let a = synth_cohort(&spec, 7).unwrap();
        let b = synth_cohort(&spec, 7).unwrap();
        assert_eq!(a[0].0.accel, b[0].0.accel);
        assert_eq!(a[1].1, b[1].1);
        let c = synth_cohort(&spec, 8).unwrap();
        assert_ne!(a[0].0.accel, c[0].0.accel);
    }

    #[test]
    fn rest_sits_at_gravity_baseline() {
        let spec = SynthSpec {
            subjects: 1,
            duration_s: 300.0,
            rate_hz: 40.0,
            fog_rate: 0.25,
        };
        let (stream, _) = synth_cohort(&spec, 5).unwrap().remove(0);
        // Norms during any sample are at least ~1 g minus noise; rest stays
        // within a hair of 1 g while activity rises above it.
        let norms: Vec<f64> = (0..stream.len())
            .map(|i| {
                (stream.accel[[i, 0]].powi(2)
                    + stream.accel[[i, 1]].powi(2)
                    + stream.accel[[i, 2]].powi(2))
                .sqrt()
            })
            .collect();
        let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = norms.iter().cloned().fold(0.0, f64::max);
        assert!(min > 0.9, "min norm {min}");
        assert!(max > 1.2, "max norm {max}");
    }
}
