use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Weight `lambda` of positive frames and margin `phi` of the masked loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub phi: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            phi: 0.7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if !(self.phi > 0.5 && self.phi <= 1.0) {
            return Err(Error::Config("phi must lie in (0.5, 1]".into()));
        }
        Ok(())
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape("margin_loss", format!("{a} scores vs {b} labels")));
    }
    Ok(())
}

/// Margin-masked weighted cross-entropy over probabilities `z`.
///
/// Positive frames contribute `-lambda * ln z` only while `z < phi`;
/// negative frames contribute `-ln(1 - z)` only while `z > 1 - phi`.
pub fn margin_loss(z: &[f64], y: &[f32], cfg: &LossConfig) -> Result<f64> {
    check_lengths(z.len(), y.len())?;
    let mut total = 0.0;
    for (&z, &y) in z.iter().zip(y) {
        let y = y as f64;
        if z > 1.0 - cfg.phi && y < 1.0 {
            total -= (1.0 - y) * (1.0 - z).ln();
        }
        if z < cfg.phi && y > 0.0 {
            total -= cfg.lambda * y * z.ln();
        }
    }
    Ok(total)
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// The same loss evaluated from logits `a` (with `z = sigmoid(a)`), plus
/// its gradient with respect to each logit. The masks are constants of the
/// forward pass, so satisfied frames get exactly zero gradient.
pub fn margin_loss_logits(a: &[f64], y: &[f32], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    check_lengths(a.len(), y.len())?;
    let mut total = 0.0;
    let mut grad = vec![0.0; a.len()];
    for ((&a, &y), g) in a.iter().zip(y).zip(&mut grad) {
        let y = y as f64;
        let z = crate::nn::sigmoid(a);
        if z > 1.0 - cfg.phi && y < 1.0 {
            total += (1.0 - y) * softplus(a);
            *g += (1.0 - y) * z;
        }
        if z < cfg.phi && y > 0.0 {
            total += cfg.lambda * y * softplus(-a);
            *g -= cfg.lambda * y * (1.0 - z);
        }
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn worked_values() {
        let cfg = LossConfig::default();
        assert_eq!(margin_loss(&[0.8], &[1.0], &cfg).unwrap(), 0.0);
        let v = margin_loss(&[0.5], &[1.0], &cfg).unwrap();
        assert!((v - 3.465735902799726).abs() < 1e-12);
        assert!(margin_loss(&[0.5], &[1.0, 0.0], &cfg).is_err());
    }

    #[test]
    fn logit_form_matches_probability_form() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let a: f64 = rng.gen_range(-6.0..6.0);
            let y = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            let z = crate::nn::sigmoid(a);
            let (v, g) = margin_loss_logits(&[a], &[y], &cfg).unwrap();
            assert!((v - margin_loss(&[z], &[y], &cfg).unwrap()).abs() < 1e-9);
            let h = 1e-6;
            let num = (margin_loss(&[crate::nn::sigmoid(a + h)], &[y], &cfg).unwrap()
                - margin_loss(&[crate::nn::sigmoid(a - h)], &[y], &cfg).unwrap())
                / (2.0 * h);
            let near_margin = (z - cfg.phi).abs() < 1e-4 || (z - (1.0 - cfg.phi)).abs() < 1e-4;
            if !near_margin {
                assert!((g[0] - num).abs() < 1e-5, "a={a} y={y} {} vs {num}", g[0]);
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(LossConfig { lambda: 0.0, phi: 0.7 }.validate().is_err());
        assert!(LossConfig { lambda: 1.0, phi: 0.5 }.validate().is_err());
        assert!(LossConfig { lambda: 1.0, phi: 1.0 }.validate().is_ok());
    }
}
