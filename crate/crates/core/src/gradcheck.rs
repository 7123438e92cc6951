//! Central finite-difference checks of every differentiable kernel and of
//! the composed model, in 64-bit arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::{ModelConfig, ModelGraph, ParameterStore, Phase};
use crate::nn::kernels::dropout_mask;
use crate::nn::{Cell, Direction, Segments, Tape, Tensor, ValueId};
use crate::training::{margin_loss_logits, LossConfig};
use crate::Result;

/// Perturbation used for the central differences.
pub const STEP: f64 = 1e-4;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over all
    /// checked entries, as vector norms.
    pub rel_error: f64,
    pub entries: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_error < TOLERANCE
    }
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(n).map(|(x, y)| x - y));
    diff / norm(&mut a.iter().copied())
        .max(norm(&mut n.iter().copied()))
        .max(1e-7)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks `sum(c * f(inputs))` for a random fixed projection `c`.
fn check_kernel(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId>,
) -> Result<GradCheck> {
    let eval = |inputs: &[Tensor<f64>], proj: Option<&Tensor<f64>>| -> Result<(Tape<f64>, Vec<ValueId>, ValueId, ValueId)> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = f(&mut tape, &ids)?;
        let c = match proj {
            Some(c) => c.clone(),
            None => Tensor::full(tape.value(y).shape(), 1.0),
        };
        let value: f64 = tape.value(y).data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
        let loss = tape.loss(y, value, c)?;
        Ok((tape, ids, y, loss))
    };
    let (probe, _, y, _) = eval(&inputs, None)?;
    let out_shape = probe.value(y).shape().to_vec();
    let proj = random(rng, &out_shape);
    let (tape, ids, _, loss) = eval(&inputs, Some(&proj))?;
    let grads = tape.backward(loss)?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let value = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let (t, _, _, l) = eval(inputs, Some(&proj))?;
        Ok(t.value(l).data()[0])
    };
    for (k, id) in ids.iter().enumerate() {
        analytic.extend_from_slice(grads.get(*id).data());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= STEP;
            numeric.push((value(&plus)? - value(&minus)?) / (2.0 * STEP));
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        rel_error: rel_error(&analytic, &numeric),
        entries: analytic.len(),
    })
}

fn recurrent_inputs(rng: &mut ChaCha8Rng, gates: usize, input: usize, hidden: usize) -> Vec<Tensor<f64>> {
    let mut v = vec![random(rng, &[7, input])];
    for _ in 0..2 {
        v.push(random(rng, &[gates * hidden, input]));
        v.push(random(rng, &[gates * hidden, hidden]));
        v.push(random(rng, &[gates * hidden]));
        v.push(random(rng, &[gates * hidden]));
    }
    v
}

/// Tiny configuration for the whole-model check.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        inventory_size: 4,
        feature_dim: 3,
        embedding_dim: 3,
        query_layers: vec![2, 2],
        doc_layers: vec![3, 2],
        doc_downsample: vec![1, 1],
        joint_dim: 3,
        dropout: 0.25,
    }
}

/// Gradient of the margin loss of one 2-symbol query against one 3-frame
/// utterance, with respect to every trainable parameter.
fn check_model(name: &str, train: bool) -> Result<GradCheck> {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = ParameterStore::<f64>::init(&cfg, &mut rng)?;
    for (pname, t) in params.tensors_mut() {
        if pname.ends_with("running_mean") || pname.ends_with("running_var") {
            for v in t.data_mut() {
                *v = if pname.ends_with("var") { rng.gen_range(0.5..1.5) } else { rng.gen_range(-0.3..0.3) };
            }
        }
    }
    let feats = Tensor::<f32>::matrix(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let query = [1usize, 3];
    let labels = [1.0f32, 0.0, 0.0];
    let loss_cfg = LossConfig { lambda: 5.0, phi: 1.0 };
    let loss_of = |p: &ParameterStore<f64>, grads: bool| -> Result<(f64, Option<std::collections::BTreeMap<String, Tensor<f64>>>)> {
        let mut drop = ChaCha8Rng::seed_from_u64(5);
        let mut phase = if train { Phase::Train(&mut drop) } else { Phase::Infer };
        let mut g = ModelGraph::new(p);
        let q = g.queries(&[&query], &mut phase)?;
        let (h, segs) = g.documents(&[("toy", &feats)], &mut phase)?;
        let logits = g.tape_mut().pair_logits(h, &segs, q, &[(0, 0)])?;
        let a = g.tape().value(logits).data().to_vec();
        let (value, grad) = margin_loss_logits(&a, &labels, &loss_cfg)?;
        let loss = g.tape_mut().loss(logits, value, Tensor::matrix(grad.len(), 1, grad)?)?;
        Ok((value, if grads { Some(g.gradients(loss)?) } else { None }))
    };
    let analytic_map = loss_of(&params, true)?.1.expect("requested");
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (pname, g) in &analytic_map {
        analytic.extend_from_slice(g.data());
        for i in 0..g.len() {
            let base = params.get(pname)?.data()[i];
            params.get_mut(pname)?.data_mut()[i] = base + STEP;
            let up = loss_of(&params, false)?.0;
            params.get_mut(pname)?.data_mut()[i] = base - STEP;
            let down = loss_of(&params, false)?.0;
            params.get_mut(pname)?.data_mut()[i] = base;
            numeric.push((up - down) / (2.0 * STEP));
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        rel_error: rel_error(&analytic, &numeric),
        entries: analytic.len(),
    })
}

/// Runs every check. Deterministic.
pub fn run_suite() -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    let r = &mut rng;

    let inputs = vec![random(r, &[5, 4]), random(r, &[3, 4]), random(r, &[3])];
    out.push(check_kernel("affine", inputs, r, |t, x| t.linear(x[0], x[1], x[2]))?);

    let inputs = vec![random(r, &[4, 3])];
    out.push(check_kernel("embedding", inputs, r, |t, x| t.embedding(x[0], &[1, 3, 1, 0, 1]))?);

    let inputs = vec![random(r, &[6, 3]), random(r, &[3]), random(r, &[3])];
    out.push(check_kernel("batchnorm_train", inputs, r, |t, x| {
        t.batchnorm_train(x[0], x[1], x[2]).map(|(y, _)| y)
    })?);

    let (mean, var) = (random(r, &[3]), Tensor::vector(vec![0.5, 1.2, 2.0]));
    let inputs = vec![random(r, &[6, 3]), random(r, &[3]), random(r, &[3])];
    out.push(check_kernel("batchnorm_infer", inputs, r, |t, x| {
        t.batchnorm_infer(x[0], x[1], x[2], &mean, &var)
    })?);

    let mask: Vec<f64> = dropout_mask(12, 0.4, &mut ChaCha8Rng::seed_from_u64(3))?;
    let inputs = vec![random(r, &[4, 3])];
    out.push(check_kernel("dropout", inputs, r, |t, x| t.dropout(x[0], mask.clone()))?);

    let segs = Segments::from_lens(&[7, 5]);
    let inputs = vec![random(r, &[12, 2])];
    out.push(check_kernel("temporal_downsample", inputs, r, |t, x| {
        t.downsample(x[0], &segs, 3).map(|(y, _)| y)
    })?);

    let seq = Segments::from_lens(&[4, 1, 2]);
    for (name, cell) in [("gru", Cell::Gru), ("lstm", Cell::Lstm)] {
        let inputs = recurrent_inputs(r, cell.gates(), 3, 2);
        out.push(check_kernel(&format!("{name}_bidirectional"), inputs, r, |t, x| {
            t.recurrent(
                cell,
                x[0],
                &seq,
                &[[x[1], x[2], x[3], x[4]], [x[5], x[6], x[7], x[8]]],
                Direction::Bidirectional,
            )
        })?);
    }

    let inputs = vec![random(r, &[7, 3])];
    out.push(check_kernel("segment_sum", inputs, r, |t, x| Ok(t.segment_sum(x[0], &seq)))?);

    let inputs = vec![random(r, &[7, 3]), random(r, &[2, 3])];
    out.push(check_kernel("pair_logits", inputs, r, |t, x| {
        t.pair_logits(x[0], &seq, x[1], &[(0, 0), (1, 0), (1, 2)])
    })?);

    out.push(check_margin_loss(r)?);
    out.push(check_model("model_train_mode", true)?);
    out.push(check_model("model_infer_mode", false)?);
    Ok(out)
}

/// The masked loss away from its margins, where it is smooth.
fn check_margin_loss(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let cfg = LossConfig::default();
    let mut a = Vec::new();
    let mut y = Vec::new();
    while a.len() < 40 {
        let v: f64 = rng.gen_range(-4.0..4.0);
        let z = crate::nn::sigmoid(v);
        if (z - cfg.phi).abs() > 1e-2 && (z - (1.0 - cfg.phi)).abs() > 1e-2 {
            a.push(v);
            y.push(if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
        }
    }
    let (_, analytic) = margin_loss_logits(&a, &y, &cfg)?;
    let mut numeric = Vec::new();
    for i in 0..a.len() {
        let mut p = a.clone();
        p[i] += STEP;
        let mut m = a.clone();
        m[i] -= STEP;
        numeric.push((margin_loss_logits(&p, &y, &cfg)?.0 - margin_loss_logits(&m, &y, &cfg)?.0) / (2.0 * STEP));
    }
    Ok(GradCheck {
        name: "margin_loss".into(),
        rel_error: rel_error(&analytic, &numeric),
        entries: a.len(),
    })
}

#[cfg(test)]
mod tests {
    #[test]
    fn suite_passes() {
        for c in super::run_suite().unwrap() {
            assert!(c.passed(), "{} rel error {:e}", c.name, c.rel_error);
        }
    }
}
