mod common;

use framekws::training::{margin_loss, margin_loss_logits, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn unit_weight_full_margin_is_cross_entropy() {
    let cfg = LossConfig { lambda: 1.0, phi: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let z: f64 = rng.gen_range(1e-6..1.0 - 1e-6);
        let y: f32 = if rng.gen_bool(0.2) { rng.gen() } else { rng.gen_range(0..2) as f32 };
        let got = margin_loss(&[z], &[y], &cfg).unwrap();
        let want = common::bce(&[z], &[y]);
        assert!((got - want).abs() < 1e-12, "z {z} y {y}: {got} vs {want}");
    }
}

#[test]
fn satisfied_frames_contribute_nothing() {
    let cfg = LossConfig { lambda: 5.0, phi: 0.7 };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logit = |z: f64| (z / (1.0 - z)).ln();
    for _ in 0..10_000 {
        let positive = rng.gen_bool(0.5);
        let z: f64 = if positive { rng.gen_range(0.7..1.0) } else { rng.gen_range(0.0..0.3) };
        let y = positive as u8 as f32;
        assert_eq!(margin_loss(&[z], &[y], &cfg).unwrap(), 0.0);
        let a = logit(z);
        if !a.is_finite() {
            continue;
        }
        let sig = 1.0 / (1.0 + (-a).exp());
        // Rounding in the logit can move the probability across the margin.
        if (positive && sig < 0.7) || (!positive && sig > 0.3) {
            continue;
        }
        let (l, g) = margin_loss_logits(&[a], &[y], &cfg).unwrap();
        assert_eq!((l, g[0]), (0.0, 0.0), "z {z} y {y}");
    }
    assert_eq!(margin_loss(&[0.7, 0.3], &[1.0, 0.0], &cfg).unwrap(), 0.0);
}

#[test]
fn unsatisfied_frames_are_weighted() {
    let cfg = LossConfig { lambda: 5.0, phi: 0.7 };
    let l = margin_loss(&[0.5, 0.5], &[1.0, 0.0], &cfg).unwrap();
    assert!((l - 6.0 * 2f64.ln()).abs() < 1e-12);
}
