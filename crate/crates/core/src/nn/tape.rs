//! Reverse-mode differentiation over recorded kernels.
//!
//! Each op stores the ids of its inputs plus whatever activations its
//! backward pass needs. [`Tape::backward`] walks the nodes in exact reverse
//! order and sums gradients when a value fans out to several consumers.

use super::kernels::{self, BatchNormCache, BatchStats};
use super::recurrent::{self, Cell, Direction, RecurrentCache, RecurrentWeights};
use super::{Real, Segments, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(usize);

/// Ids of one direction's `[w_ih, w_hh, b_ih, b_hh]`.
pub type RecurrentIds = [ValueId; 4];

enum Op<T> {
    Leaf,
    Linear {
        x: ValueId,
        w: ValueId,
        b: ValueId,
    },
    Embedding {
        table: ValueId,
        ids: Vec<usize>,
    },
    BatchNormTrain {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        cache: BatchNormCache<T>,
    },
    BatchNormInfer {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        mean: Tensor<T>,
        var: Tensor<T>,
    },
    Dropout {
        x: ValueId,
        mask: Vec<T>,
    },
    Downsample {
        x: ValueId,
        segs: Segments,
        factor: usize,
    },
    Recurrent {
        x: ValueId,
        cell: Cell,
        weights: Vec<RecurrentIds>,
        segs: Segments,
        cache: RecurrentCache<T>,
    },
    SegmentSum {
        x: ValueId,
        segs: Segments,
    },
    PairLogits {
        docs: ValueId,
        queries: ValueId,
        doc_segs: Segments,
        pairs: Vec<(usize, usize)>,
    },
    Add {
        a: ValueId,
        b: ValueId,
    },
    Sum {
        x: ValueId,
    },
    /// Scalar objective whose gradient w.r.t. `x` was computed alongside it.
    Loss {
        x: ValueId,
        grad: Tensor<T>,
    },
}

/// Recorded computation. Values are stored in creation order and every
/// non-leaf value is produced by exactly one op.
pub struct Tape<T: Real> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> ValueId {
        self.values.push(value);
        self.ops.push(op);
        ValueId(self.values.len() - 1)
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> ValueId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: ValueId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn linear(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let y = kernels::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn embedding(&mut self, table: ValueId, ids: &[usize]) -> Result<ValueId> {
        let y = kernels::embedding_lookup(self.value(table), ids)?;
        Ok(self.push(
            y,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn batchnorm_train(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
    ) -> Result<(ValueId, BatchStats)> {
        let (y, stats, cache) =
            kernels::batchnorm_train(self.value(x), self.value(gamma), self.value(beta))?;
        let id = self.push(
            y,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                cache,
            },
        );
        Ok((id, stats))
    }

    /// Normalizes with fixed running statistics (treated as constants).
    pub fn batchnorm_infer(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        mean: &Tensor<T>,
        var: &Tensor<T>,
    ) -> Result<ValueId> {
        let y = kernels::batchnorm_infer(self.value(x), self.value(gamma), self.value(beta), mean, var)?;
        Ok(self.push(
            y,
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                mean: mean.clone(),
                var: var.clone(),
            },
        ))
    }

    /// Multiplies elementwise by a precomputed mask from [`kernels::dropout_mask`].
    pub fn dropout(&mut self, x: ValueId, mask: Vec<T>) -> Result<ValueId> {
        let mut y = self.value(x).clone();
        if mask.len() != y.len() {
            return Err(Error::shape(
                "dropout",
                format!("mask has {} entries for {} values", mask.len(), y.len()),
            ));
        }
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
        Ok(self.push(y, Op::Dropout { x, mask }))
    }

    pub fn downsample(
        &mut self,
        x: ValueId,
        segs: &Segments,
        factor: usize,
    ) -> Result<(ValueId, Segments)> {
        let (y, out_segs) = kernels::temporal_downsample(self.value(x), segs, factor)?;
        let id = self.push(
            y,
            Op::Downsample {
                x,
                segs: segs.clone(),
                factor,
            },
        );
        Ok((id, out_segs))
    }

    pub fn recurrent(
        &mut self,
        cell: Cell,
        x: ValueId,
        segs: &Segments,
        weights: &[RecurrentIds],
        direction: Direction,
    ) -> Result<ValueId> {
        let views: Vec<RecurrentWeights<T>> = weights
            .iter()
            .map(|ids| self.weights_view(ids))
            .collect();
        let (y, cache) =
            recurrent::recurrent_forward_cached(cell, &views, self.value(x), segs, direction)?;
        Ok(self.push(
            y,
            Op::Recurrent {
                x,
                cell,
                weights: weights.to_vec(),
                segs: segs.clone(),
                cache,
            },
        ))
    }

    fn weights_view(&self, ids: &RecurrentIds) -> RecurrentWeights<'_, T> {
        RecurrentWeights {
            w_ih: self.value(ids[0]),
            w_hh: self.value(ids[1]),
            b_ih: self.value(ids[2]),
            b_hh: self.value(ids[3]),
        }
    }

    pub fn segment_sum(&mut self, x: ValueId, segs: &Segments) -> ValueId {
        let y = kernels::segment_sum(self.value(x), segs);
        self.push(
            y,
            Op::SegmentSum {
                x,
                segs: segs.clone(),
            },
        )
    }

    pub fn pair_logits(
        &mut self,
        docs: ValueId,
        doc_segs: &Segments,
        queries: ValueId,
        pairs: &[(usize, usize)],
    ) -> Result<ValueId> {
        let y = kernels::pair_logits(self.value(docs), doc_segs, self.value(queries), pairs)?;
        Ok(self.push(
            y,
            Op::PairLogits {
                docs,
                queries,
                doc_segs: doc_segs.clone(),
                pairs: pairs.to_vec(),
            },
        ))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn sum(&mut self, x: ValueId) -> ValueId {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Records a scalar objective `value` of `x` together with `d value / d x`.
    pub fn loss(&mut self, x: ValueId, value: T, grad: Tensor<T>) -> Result<ValueId> {
        if grad.shape() != self.value(x).shape() {
            return Err(Error::shape(
                "loss",
                format!("gradient {:?} for value {:?}", grad.shape(), self.value(x).shape()),
            ));
        }
        Ok(self.push(Tensor::scalar(value), Op::Loss { x, grad }))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<T>> {
        let l = self.value(loss);
        if l.len() != 1 {
            return Err(Error::shape("backward", format!("loss has shape {:?}", l.shape())));
        }
        if !l.data()[0].is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", l.data()[0])));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            self.backward_op(&self.ops[idx], &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Gradients {
            shapes: self.values.iter().map(|v| v.shape().to_vec()).collect(),
            grads,
        })
    }

    fn backward_op(&self, op: &Op<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |id: ValueId, g: Tensor<T>| match &mut grads[id.0] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(g),
        };
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (dx, dw, db) = kernels::linear_backward(dy, self.value(*x), self.value(*w));
                acc(*x, dx);
                acc(*w, dw);
                acc(*b, db);
            }
            Op::Embedding { table, ids } => {
                acc(*table, kernels::embedding_backward(dy, ids, self.value(*table).rows()));
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                cache,
            } => {
                let (dx, dg, db) = kernels::batchnorm_train_backward(dy, self.value(*gamma), cache);
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                mean,
                var,
            } => {
                let (dx, dg, db) = kernels::batchnorm_infer_backward(
                    dy,
                    self.value(*x),
                    self.value(*gamma),
                    mean,
                    var,
                );
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::Dropout { x, mask } => {
                let mut dx = dy.clone();
                dx.data_mut().iter_mut().zip(mask).for_each(|(v, &m)| *v *= m);
                acc(*x, dx);
            }
            Op::Downsample { x, segs, factor } => {
                acc(*x, kernels::temporal_downsample_backward(dy, segs, *factor));
            }
            Op::Recurrent {
                x,
                cell,
                weights,
                segs,
                cache,
            } => {
                let views: Vec<RecurrentWeights<T>> =
                    weights.iter().map(|ids| self.weights_view(ids)).collect();
                let (dx, wgrads) =
                    recurrent::recurrent_backward(*cell, &views, self.value(*x), segs, cache, dy);
                acc(*x, dx);
                for (ids, g) in weights.iter().zip(wgrads) {
                    acc(ids[0], g.w_ih);
                    acc(ids[1], g.w_hh);
                    acc(ids[2], g.b_ih);
                    acc(ids[3], g.b_hh);
                }
            }
            Op::SegmentSum { x, segs } => acc(*x, kernels::segment_sum_backward(dy, segs)),
            Op::PairLogits {
                docs,
                queries,
                doc_segs,
                pairs,
            } => {
                let (dd, dq) = kernels::pair_logits_backward(
                    dy,
                    self.value(*docs),
                    doc_segs,
                    self.value(*queries),
                    pairs,
                );
                acc(*docs, dd);
                acc(*queries, dq);
            }
            Op::Add { a, b } => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Sum { x } => {
                let s = dy.data()[0];
                acc(*x, Tensor::full(self.value(*x).shape(), s));
            }
            Op::Loss { x, grad } => {
                let s = dy.data()[0];
                let mut g = grad.clone();
                g.data_mut().iter_mut().for_each(|v| *v *= s);
                acc(*x, g);
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `id`; values the loss does not depend on get zeros.
    pub fn get(&self, id: ValueId) -> Tensor<T> {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    pub fn take(&mut self, id: ValueId) -> Tensor<T> {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}
