//! Loss functions: masked reconstruction MSE and binary cross-entropy.

use ndarray::ArrayView2;

use crate::error::{FogError, Result};
use crate::ingest::Label;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Single-sample BCE from a logit: `softplus(z) - y*z`.
pub fn bce_single(logit: f64, y: f64) -> f64 {
    softplus(logit) - y * logit
}

/// Mean binary cross-entropy over a batch of logits, evaluated in the
/// numerically stable log-sum-exp form.
pub fn bce(logits: &[f64], labels: &[Label]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(FogError::Structural(format!(
            "{} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(FogError::EmptyInput("empty batch in bce".into()));
    }
    let sum: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &l)| bce_single(z, l.as_bit() as f64))
        .sum();
    Ok(sum / logits.len() as f64)
}

/// Mean squared error over masked scalar positions only; unmasked positions
/// contribute nothing. `positions[i]` indexes into row `i` of `pred`/`target`.
pub fn masked_mse(
    pred: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    positions: &[Vec<usize>],
) -> Result<f64> {
    if pred.shape() != target.shape() || pred.nrows() != positions.len() {
        return Err(FogError::Structural(
            "masked_mse inputs disagree in shape".into(),
        ));
    }
    let n_m: usize = positions.iter().map(|p| p.len()).sum();
    if n_m == 0 {
        return Err(FogError::EmptyInput(
            "masked_mse needs at least one masked position".into(),
        ));
    }
    let mut acc = 0.0;
    for (i, pos) in positions.iter().enumerate() {
        for &j in pos {
            let e = pred[[i, j]] - target[[i, j]];
            acc += e * e;
        }
    }
    Ok(acc / n_m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bce_at_logit_zero_is_ln2() {
        let l = bce(&[0.0, 0.0], &[Label::Fog, Label::NonFog]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_saturates_cleanly() {
        let l = bce(&[50.0], &[Label::Fog]).unwrap();
        assert!(l < 1e-9, "loss {l}");
        let l = bce(&[-50.0], &[Label::NonFog]).unwrap();
        assert!(l < 1e-9, "loss {l}");
        // And the mirrored case is large but finite.
        let l = bce(&[-500.0], &[Label::Fog]).unwrap();
        assert!(l.is_finite() && l > 400.0);
    }

    #[test]
    fn bce_matches_unstable_form_at_moderate_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits: Vec<f64> = (0..64).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let labels: Vec<Label> = (0..64)
            .map(|_| if rng.gen_bool(0.5) { Label::Fog } else { Label::NonFog })
            .collect();
        let stable = bce(&logits, &labels).unwrap();
        let naive: f64 = logits
            .iter()
            .zip(&labels)
            .map(|(&z, &l)| {
                let p = 1.0 / (1.0 + (-z).exp());
                let y = l.as_bit() as f64;
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 64.0;
        assert!((stable - naive).abs() < 1e-10);
    }

    #[test]
    fn masked_mse_ignores_unmasked_positions() {
        let pred = Array2::from_shape_vec((1, 4), vec![1.0, 9.0, 0.0, 9.0]).unwrap();
        let target = Array2::from_shape_vec((1, 4), vec![0.0, 1.0, 0.0, 2.0]).unwrap();
        // Only position 0 masked: loss = (1-0)^2 = 1.
        let l = masked_mse(&pred.view(), &target.view(), &[vec![0]]).unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn masked_mse_perfect_prediction_is_zero() {
        let x = Array2::from_shape_fn((3, 5), |(i, j)| (i * 5 + j) as f64);
        let pos = vec![vec![0, 2], vec![1], vec![4, 3]];
        let l = masked_mse(&x.view(), &x.view(), &pos).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn masked_mse_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pred = Array2::from_shape_fn((6, 30), |_| rng.gen_range(-2.0..2.0));
        let target = Array2::from_shape_fn((6, 30), |_| rng.gen_range(-2.0..2.0));
        let positions: Vec<Vec<usize>> = (0..6)
            .map(|_| {
                let k = rng.gen_range(1..8);
                (0..k).map(|_| rng.gen_range(0..30)).collect()
            })
            .collect();
        let got = masked_mse(&pred.view(), &target.view(), &positions).unwrap();

        let mut acc = 0.0;
        let mut count = 0usize;
        for i in 0..6 {
            for &j in &positions[i] {
                let d = pred[[i, j]] - target[[i, j]];
                acc += d * d;
                count += 1;
            }
        }
        assert!((got - acc / count as f64).abs() < 1e-12);
    }

    #[test]
    fn masked_mse_empty_mask_errors() {
        let x = Array2::zeros((2, 4));
        assert!(matches!(
            masked_mse(&x.view(), &x.view(), &[vec![], vec![]]),
            Err(FogError::EmptyInput(_))
        ));
    }
}
