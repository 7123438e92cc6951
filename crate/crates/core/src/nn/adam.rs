use std::collections::BTreeMap;

use super::{Real, Tensor};
use crate::{Error, Result};

pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction over a named parameter set.
///
/// `lr` is public so a scheduler can change it between steps.
#[derive(Clone, Debug)]
pub struct Adam<T = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Tensor<T>>,
    second: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: ADAM_EPS,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Rebuilds an optimizer from persisted moments.
    pub fn restore(
        lr: f64,
        step: u64,
        first: BTreeMap<String, Tensor<T>>,
        second: BTreeMap<String, Tensor<T>>,
    ) -> Self {
        Self {
            step,
            first,
            second,
            ..Self::new(lr)
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.first
    }

    pub fn second_moments(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.second
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<T>>,
        grads: &BTreeMap<String, Tensor<T>>,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            match params.get(name) {
                Some(p) if p.shape() == g.shape() => {}
                Some(p) => {
                    return Err(Error::shape(
                        "adam",
                        format!("{name}: parameter {:?}, gradient {:?}", p.shape(), g.shape()),
                    ))
                }
                None => return Err(Error::Config(format!("gradient for unknown parameter {name}"))),
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = gv.f64();
                let mn = self.beta1 * mv.f64() + (1.0 - self.beta1) * gv;
                let vn = self.beta2 * vv.f64() + (1.0 - self.beta2) * gv * gv;
                *mv = T::of(mn);
                *vv = T::of(vn);
                let update = self.lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
                *pv = T::of(pv.f64() - update);
            }
        }
        Ok(())
    }
}
