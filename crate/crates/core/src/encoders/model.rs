use std::collections::BTreeMap;

use rand::RngCore;
use rayon::prelude::*;

use super::{ModelConfig, ParameterStore};
use crate::nn::kernels::{dropout_mask, update_running};
use crate::nn::{sigmoid, BatchStats, Cell, Direction, Real, Segments, Tape, Tensor, ValueId};
use crate::{Error, Result};

/// Training or inference behaviour for one forward pass.
///
/// Training normalizes with batch statistics and draws dropout masks from
/// the supplied generator; inference uses running statistics and no
/// dropout, so it is deterministic.
pub enum Phase<'r> {
    Infer,
    Train(&'r mut dyn RngCore),
}

impl Phase<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train(_))
    }
}

/// Query vector `e_q` in the joint space.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryEmbedding {
    pub values: Vec<f32>,
}

/// Document matrix `H_X`: one row per downsampled frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DocumentEncoding {
    pub id: String,
    /// Duration of one row in milliseconds.
    pub step_ms: u32,
    pub h: Tensor<f32>,
}

impl DocumentEncoding {
    pub fn frames(&self) -> usize {
        self.h.rows()
    }
}

/// Forward pass of both encoders recorded on one tape.
///
/// Parameters become tape leaves the first time they are used, so the same
/// graph can hold a batch of queries, a batch of documents and the loss
/// that ties them together.
pub struct ModelGraph<'p, T: Real> {
    params: &'p ParameterStore<T>,
    tape: Tape<T>,
    leaves: BTreeMap<String, ValueId>,
    stats: Vec<(String, BatchStats)>,
}

impl<'p, T: Real> ModelGraph<'p, T> {
    pub fn new(params: &'p ParameterStore<T>) -> Self {
        Self {
            params,
            tape: Tape::new(),
            leaves: BTreeMap::new(),
            stats: Vec::new(),
        }
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape<T> {
        &mut self.tape
    }

    fn config(&self) -> &'p ModelConfig {
        self.params.config()
    }

    fn param(&mut self, name: &str) -> Result<ValueId> {
        if let Some(&id) = self.leaves.get(name) {
            return Ok(id);
        }
        let id = self.tape.leaf(self.params.get(name)?.clone());
        self.leaves.insert(name.to_string(), id);
        Ok(id)
    }

    fn normalize(&mut self, x: ValueId, prefix: &str, phase: &Phase) -> Result<ValueId> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        if phase.is_train() {
            let (y, stats) = self.tape.batchnorm_train(x, gamma, beta)?;
            self.stats.push((prefix.to_string(), stats));
            Ok(y)
        } else {
            let mean = self.params.get(&format!("{prefix}.running_mean"))?;
            let var = self.params.get(&format!("{prefix}.running_var"))?;
            self.tape.batchnorm_infer(x, gamma, beta, mean, var)
        }
    }

    fn birnn(&mut self, cell: Cell, x: ValueId, segs: &Segments, prefix: &str) -> Result<ValueId> {
        let mut ids = Vec::with_capacity(2);
        for dir in ["fwd", "bwd"] {
            ids.push([
                self.param(&format!("{prefix}.{dir}.w_ih"))?,
                self.param(&format!("{prefix}.{dir}.w_hh"))?,
                self.param(&format!("{prefix}.{dir}.b_ih"))?,
                self.param(&format!("{prefix}.{dir}.b_hh"))?,
            ]);
        }
        self.tape.recurrent(cell, x, segs, &ids, Direction::Bidirectional)
    }

    /// Encodes a batch of queries into a `queries x D` matrix.
    pub fn queries(&mut self, queries: &[&[usize]], phase: &mut Phase) -> Result<ValueId> {
        let cfg = self.config();
        if queries.is_empty() {
            return Err(Error::Empty("query batch"));
        }
        let mut flat = Vec::new();
        for q in queries {
            if q.is_empty() {
                return Err(Error::Empty("query"));
            }
            if let Some(position) = q.iter().position(|&s| s >= cfg.inventory_size) {
                return Err(Error::OutOfRange {
                    position,
                    index: q[position],
                    limit: cfg.inventory_size,
                });
            }
            flat.extend_from_slice(q);
        }
        let segs = Segments::from_lens(&queries.iter().map(|q| q.len()).collect::<Vec<_>>());
        let table = self.param("query.embedding")?;
        let mut x = self.tape.embedding(table, &flat)?;
        for l in 0..cfg.query_layers.len() {
            let p = format!("query.l{l}");
            x = self.normalize(x, &format!("{p}.bn"), phase)?;
            x = self.birnn(Cell::Gru, x, &segs, &p)?;
        }
        let pooled = self.tape.segment_sum(x, &segs);
        let w = self.param("query.proj.weight")?;
        let b = self.param("query.proj.bias")?;
        self.tape.linear(pooled, w, b)
    }

    /// Encodes a batch of utterances into packed `frames x D` rows.
    pub fn documents(
        &mut self,
        docs: &[(&str, &Tensor<f32>)],
        phase: &mut Phase,
    ) -> Result<(ValueId, Segments)> {
        let cfg = self.config();
        if docs.is_empty() {
            return Err(Error::Empty("document batch"));
        }
        let required = cfg.downsample_product();
        let mut data = Vec::new();
        let mut lens = Vec::with_capacity(docs.len());
        for (id, f) in docs {
            if f.cols() != cfg.feature_dim {
                return Err(Error::shape(
                    "encode_document",
                    format!("{id}: {} feature dims, model expects {}", f.cols(), cfg.feature_dim),
                ));
            }
            if f.rows() < required {
                return Err(Error::TooShort {
                    id: id.to_string(),
                    frames: f.rows(),
                    required,
                });
            }
            data.extend(f.data().iter().map(|&v| T::of(v as f64)));
            lens.push(f.rows());
        }
        let mut segs = Segments::from_lens(&lens);
        let mut x = self
            .tape
            .leaf(Tensor::matrix(segs.total(), cfg.feature_dim, data)?);
        for (l, &factor) in cfg.doc_downsample.iter().enumerate() {
            let p = format!("doc.l{l}");
            x = self.normalize(x, &format!("{p}.bn"), phase)?;
            x = self.birnn(Cell::Lstm, x, &segs, &p)?;
            if factor > 1 {
                let (y, s) = self.tape.downsample(x, &segs, factor)?;
                x = y;
                segs = s;
            }
            if let Phase::Train(rng) = phase {
                if cfg.dropout > 0.0 {
                    let mask = dropout_mask(self.tape.value(x).len(), cfg.dropout, &mut **rng)?;
                    x = self.tape.dropout(x, mask)?;
                }
            }
        }
        let w = self.param("doc.proj.weight")?;
        let b = self.param("doc.proj.bias")?;
        Ok((self.tape.linear(x, w, b)?, segs))
    }

    /// Gradients of `loss` for every trainable parameter; parameters the
    /// loss does not touch get zeros.
    pub fn gradients(&self, loss: ValueId) -> Result<BTreeMap<String, Tensor<T>>> {
        let grads = self.tape.backward(loss)?;
        Ok(self
            .params
            .tensors()
            .iter()
            .filter(|(name, _)| ParameterStore::<T>::is_trainable(name))
            .map(|(name, t)| {
                let g = match self.leaves.get(name) {
                    Some(&id) => grads.get(id),
                    None => Tensor::zeros(t.shape()),
                };
                (name.clone(), g)
            })
            .collect())
    }

    /// Batch statistics gathered by train-mode normalization, keyed by layer
    /// prefix.
    pub fn batch_stats(&self) -> &[(String, BatchStats)] {
        &self.stats
    }

    pub fn leaf(&self, name: &str) -> Option<ValueId> {
        self.leaves.get(name).copied()
    }
}

impl<T: Real> ParameterStore<T> {
    /// Folds train-mode batch statistics into the running estimates.
    pub fn fold_batch_stats(&mut self, stats: &[(String, BatchStats)]) -> Result<()> {
        for (prefix, s) in stats {
            let mut mean = self.get(&format!("{prefix}.running_mean"))?.clone();
            let var = self.get_mut(&format!("{prefix}.running_var"))?;
            update_running(&mut mean, var, s);
            *self.get_mut(&format!("{prefix}.running_mean"))? = mean;
        }
        Ok(())
    }
}

pub fn encode_query(
    params: &ParameterStore,
    symbols: &[usize],
    phase: &mut Phase,
) -> Result<QueryEmbedding> {
    let mut g = ModelGraph::new(params);
    let e = g.queries(&[symbols], phase)?;
    Ok(QueryEmbedding {
        values: g.tape().value(e).data().to_vec(),
    })
}

pub fn encode_document(
    params: &ParameterStore,
    id: &str,
    features: &Tensor<f32>,
    phase: &mut Phase,
) -> Result<DocumentEncoding> {
    let mut g = ModelGraph::new(params);
    let (h, _) = g.documents(&[(id, features)], phase)?;
    Ok(DocumentEncoding {
        id: id.to_string(),
        step_ms: params.config().output_step_ms(),
        h: g.tape().value(h).clone(),
    })
}

/// Inference encoding of many utterances, one at a time and in parallel.
/// Each result depends only on its own features.
pub fn encode_documents(
    params: &ParameterStore,
    docs: &[(String, Tensor<f32>)],
) -> Result<Vec<DocumentEncoding>> {
    docs.par_iter()
        .map(|(id, f)| encode_document(params, id, f, &mut Phase::Infer))
        .collect()
}

/// Occurrence probabilities `sigmoid(H e)`, one per document row.
pub fn score_frames(doc: &DocumentEncoding, query: &QueryEmbedding) -> Result<Vec<f64>> {
    if doc.h.cols() != query.values.len() {
        return Err(Error::shape(
            "score_frames",
            format!("document dim {} vs query dim {}", doc.h.cols(), query.values.len()),
        ));
    }
    Ok((0..doc.h.rows())
        .map(|r| {
            let dot: f64 = doc
                .h
                .row(r)
                .iter()
                .zip(&query.values)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            sigmoid(dot)
        })
        .collect())
}
