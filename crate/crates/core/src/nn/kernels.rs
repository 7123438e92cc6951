//! Differentiable kernels as plain forward/backward function pairs.
//!
//! Sequence kernels take a packed matrix (one row per frame) plus the
//! [`Segments`] describing where each sequence lives.

use rand::Rng;

use super::{Real, Segments, Tensor};
use crate::{Error, Result};

/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

fn check_matrix<T: Real>(op: &'static str, what: &str, t: &Tensor<T>) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::shape(
            op,
            format!("{what} must be a matrix, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// `Y = W X + b` with `X` holding one column per frame (`in x n`), `W` of
/// shape `out x in` and `b` broadcast along the frame axis.
pub fn affine<T: Real>(w: &Tensor<T>, b: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    check_matrix("affine", "W", w)?;
    check_matrix("affine", "X", x)?;
    let (out, inner) = (w.rows(), w.cols());
    if x.rows() != inner {
        return Err(Error::shape(
            "affine",
            format!("W is {out}x{inner} but X is {}x{}", x.rows(), x.cols()),
        ));
    }
    if b.len() != out {
        return Err(Error::shape(
            "affine",
            format!("bias has {} values for {out} outputs", b.len()),
        ));
    }
    let n = x.cols();
    let mut y = vec![T::zero(); out * n];
    for (o, row) in y.chunks_mut(n.max(1)).enumerate().take(out) {
        row.fill(b.data()[o]);
    }
    T::gemm(out, inner, n, T::one(), w.data(), false, x.data(), false, T::one(), &mut y);
    Tensor::matrix(out, n, y)
}

/// Frame-major affine map: `Y = X Wᵀ + b` for `X` of shape `n x in`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_matrix("linear", "W", w)?;
    let (n, inner) = (x.rows(), x.cols());
    let out = w.rows();
    if w.cols() != inner || b.len() != out {
        return Err(Error::shape(
            "linear",
            format!(
                "input has {inner} features, W is {}x{}, bias has {}",
                w.rows(),
                w.cols(),
                b.len()
            ),
        ));
    }
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(b.data());
    }
    T::gemm(n, inner, out, T::one(), x.data(), false, w.data(), true, T::one(), &mut y);
    Tensor::matrix(n, out, y)
}

/// Gradients of [`linear`]: `(dX, dW, db)`.
pub fn linear_backward<T: Real>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, inner, out) = (x.rows(), x.cols(), w.rows());
    let mut dx = Tensor::zeros(&[n, inner]);
    T::gemm(n, out, inner, T::one(), dy.data(), false, w.data(), false, T::zero(), dx.data_mut());
    let mut dw = Tensor::zeros(&[out, inner]);
    T::gemm(out, n, inner, T::one(), dy.data(), true, x.data(), false, T::zero(), dw.data_mut());
    let db = Tensor::vector(column_sums(dy));
    (dx, dw, db)
}

pub(crate) fn column_sums<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let c = x.cols();
    let mut s = vec![T::zero(); c];
    for r in x.data().chunks(c.max(1)) {
        for (a, &v) in s.iter_mut().zip(r) {
            *a += v;
        }
    }
    s
}

/// Gathers rows of `table` for each id.
pub fn embedding_lookup<T: Real>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    check_matrix("embedding_lookup", "table", table)?;
    let limit = table.rows();
    let dim = table.cols();
    let mut out = Vec::with_capacity(ids.len() * dim);
    for (position, &index) in ids.iter().enumerate() {
        if index >= limit {
            return Err(Error::OutOfRange {
                position,
                index,
                limit,
            });
        }
        out.extend_from_slice(table.row(index));
    }
    Tensor::matrix(ids.len(), dim, out)
}

/// Scatter-adds `dy` rows into a zero table of `rows` rows.
pub fn embedding_backward<T: Real>(dy: &Tensor<T>, ids: &[usize], rows: usize) -> Tensor<T> {
    let dim = dy.cols();
    let mut grad = Tensor::zeros(&[rows, dim]);
    for (i, &id) in ids.iter().enumerate() {
        for (g, &d) in grad.row_mut(id).iter_mut().zip(dy.row(i)) {
            *g += d;
        }
    }
    grad
}

/// Per-feature batch statistics from a train-mode pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the estimator folded into running statistics.
    pub var_unbiased: Vec<f64>,
}

/// Saved activations for the train-mode backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Train-mode batch normalization over all rows of `x`, per column.
pub fn batchnorm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, BatchStats, BatchNormCache<T>)> {
    let (n, c) = (x.rows(), x.cols());
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batchnorm",
            format!("{c} features but scale/shift have {}/{}", gamma.len(), beta.len()),
        ));
    }
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mut mean = vec![0.0f64; c];
    for r in x.data().chunks(c) {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v.f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut ss = vec![0.0f64; c];
    for r in x.data().chunks(c) {
        for ((s, &v), m) in ss.iter_mut().zip(r).zip(&mean) {
            let d = v.f64() - m;
            *s += d * d;
        }
    }
    let var: Vec<f64> = ss.iter().map(|s| s / n as f64).collect();
    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + BN_EPS).sqrt())).collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
    let mut xhat = Tensor::zeros(&[n, c]);
    let mut y = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let xr = x.row(i);
        let hr = xhat.row_mut(i);
        for j in 0..c {
            hr[j] = (xr[j] - mean_t[j]) * inv_std[j];
        }
        let yr = y.row_mut(i);
        for j in 0..c {
            yr[j] = gamma.data()[j] * xhat.row(i)[j] + beta.data()[j];
        }
    }
    let var_unbiased = ss.iter().map(|s| s / (n - 1) as f64).collect();
    Ok((y, BatchStats { mean, var_unbiased }, BatchNormCache { xhat, inv_std }))
}

/// Gradients of [`batchnorm_train`]: `(dX, dgamma, dbeta)`.
pub fn batchnorm_train_backward<T: Real>(
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c) = (dy.rows(), dy.cols());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for i in 0..n {
        let (d, h) = (dy.row(i), cache.xhat.row(i));
        for j in 0..c {
            dbeta[j] += d[j];
            dgamma[j] += d[j] * h[j];
        }
    }
    let nf = T::of(n as f64);
    let mut dx = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let (d, h) = (dy.row(i), cache.xhat.row(i));
        let out = dx.row_mut(i);
        for j in 0..c {
            let g = gamma.data()[j] * cache.inv_std[j] / nf;
            out[j] = g * (nf * d[j] - dbeta[j] - h[j] * dgamma[j]);
        }
    }
    (dx, Tensor::vector(dgamma), Tensor::vector(dbeta))
}

/// Inference-mode batch normalization: a fixed per-feature affine map.
pub fn batchnorm_infer<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> Result<Tensor<T>> {
    let c = x.cols();
    if [gamma.len(), beta.len(), running_mean.len(), running_var.len()]
        .iter()
        .any(|&l| l != c)
    {
        return Err(Error::shape(
            "batchnorm",
            format!("{c} features but normalization state has mismatched lengths"),
        ));
    }
    let (scale, shift) = infer_scale_shift(gamma, beta, running_mean, running_var);
    let mut y = x.clone();
    for r in y.data_mut().chunks_mut(c.max(1)) {
        for j in 0..r.len() {
            r[j] = r[j] * scale[j] + shift[j];
        }
    }
    Ok(y)
}

pub(crate) fn infer_scale_shift<T: Real>(
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> (Vec<T>, Vec<T>) {
    let scale: Vec<T> = gamma
        .data()
        .iter()
        .zip(running_var.data())
        .map(|(&g, &v)| T::of(g.f64() / (v.f64() + BN_EPS).sqrt()))
        .collect();
    let shift = beta
        .data()
        .iter()
        .zip(running_mean.data())
        .zip(&scale)
        .map(|((&b, &m), &s)| b - m * s)
        .collect();
    (scale, shift)
}

/// Gradients of [`batchnorm_infer`]: `(dX, dgamma, dbeta)`.
pub fn batchnorm_infer_backward<T: Real>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = x.cols();
    let inv: Vec<T> = running_var
        .data()
        .iter()
        .map(|&v| T::of(1.0 / (v.f64() + BN_EPS).sqrt()))
        .collect();
    let mut dx = dy.clone();
    let mut dgamma = vec![T::zero(); c];
    let dbeta = column_sums(dy);
    for i in 0..x.rows() {
        let (d, xr) = (dy.row(i), x.row(i));
        let out = dx.row_mut(i);
        for j in 0..c {
            out[j] = d[j] * gamma.data()[j] * inv[j];
            dgamma[j] += d[j] * (xr[j] - running_mean.data()[j]) * inv[j];
        }
    }
    (dx, Tensor::vector(dgamma), Tensor::vector(dbeta))
}

/// Learned scale/shift plus running statistics of one normalization layer.
#[derive(Clone, Debug)]
pub struct BatchNormState<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Tensor::full(&[features], T::one()),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], T::one()),
        }
    }

    /// Folds batch statistics into the running estimates.
    pub fn update_running(&mut self, stats: &BatchStats) {
        update_running(&mut self.running_mean, &mut self.running_var, stats);
    }
}

pub(crate) fn update_running<T: Real>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    stats: &BatchStats,
) {
    let m = BN_MOMENTUM;
    for (r, &b) in running_mean.data_mut().iter_mut().zip(&stats.mean) {
        *r = T::of((1.0 - m) * r.f64() + m * b);
    }
    for (r, &b) in running_var.data_mut().iter_mut().zip(&stats.var_unbiased) {
        *r = T::of((1.0 - m) * r.f64() + m * b);
    }
}

/// Train or inference behaviour of normalization and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Batch normalization; train mode also updates the running statistics.
pub fn batchnorm<T: Real>(
    x: &Tensor<T>,
    mode: Mode,
    state: &mut BatchNormState<T>,
) -> Result<Tensor<T>> {
    match mode {
        Mode::Train => {
            let (y, stats, _) = batchnorm_train(x, &state.gamma, &state.beta)?;
            state.update_running(&stats);
            Ok(y)
        }
        Mode::Infer => batchnorm_infer(
            x,
            &state.gamma,
            &state.beta,
            &state.running_mean,
            &state.running_var,
        ),
    }
}

/// Samples an inverted-dropout mask: each entry is 0 with probability `p`,
/// `1 / (1 - p)` otherwise.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Result<Vec<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
    }
    let keep = T::of(1.0 / (1.0 - p));
    if p == 0.0 {
        return Ok(vec![T::one(); len]);
    }
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect())
}

/// Dropout: identity in inference mode.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
    }
    if mode == Mode::Infer || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), p, rng)?;
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
    Ok(y)
}

/// Keeps the last frame of every complete window of `factor` frames, per
/// segment. A segment of length `n` yields `floor(n / factor)` frames.
pub fn temporal_downsample<T: Real>(
    x: &Tensor<T>,
    segs: &Segments,
    factor: usize,
) -> Result<(Tensor<T>, Segments)> {
    if factor == 0 {
        return Err(Error::Config("downsampling factor must be at least 1".into()));
    }
    let out_segs = segs.downsampled(factor);
    let c = x.cols();
    let mut data = Vec::with_capacity(out_segs.total() * c);
    for s in 0..segs.count() {
        let base = segs.offset(s);
        for k in 0..out_segs.len_of(s) {
            data.extend_from_slice(x.row(base + k * factor + factor - 1));
        }
    }
    Ok((Tensor::matrix(out_segs.total(), c, data)?, out_segs))
}

pub fn temporal_downsample_backward<T: Real>(
    dy: &Tensor<T>,
    segs: &Segments,
    factor: usize,
) -> Tensor<T> {
    let out_segs = segs.downsampled(factor);
    let c = dy.cols();
    let mut dx = Tensor::zeros(&[segs.total(), c]);
    for s in 0..segs.count() {
        for k in 0..out_segs.len_of(s) {
            let src = out_segs.offset(s) + k;
            let dst = segs.offset(s) + k * factor + factor - 1;
            dx.row_mut(dst).copy_from_slice(dy.row(src));
        }
    }
    dx
}

/// Sums the rows of each segment: output has one row per segment.
pub fn segment_sum<T: Real>(x: &Tensor<T>, segs: &Segments) -> Tensor<T> {
    let c = x.cols();
    let mut out = Tensor::zeros(&[segs.count(), c]);
    for s in 0..segs.count() {
        let acc = out.row_mut(s);
        for r in segs.range(s) {
            for (a, &v) in acc.iter_mut().zip(x.row(r)) {
                *a += v;
            }
        }
    }
    out
}

pub fn segment_sum_backward<T: Real>(dy: &Tensor<T>, segs: &Segments) -> Tensor<T> {
    let c = dy.cols();
    let mut dx = Tensor::zeros(&[segs.total(), c]);
    for s in 0..segs.count() {
        for r in segs.range(s) {
            dx.row_mut(r).copy_from_slice(dy.row(s));
        }
    }
    dx
}

/// Frame logits `H_d e_q` for each `(query row, document segment)` pair,
/// concatenated pair after pair into an `n x 1` column.
pub fn pair_logits<T: Real>(
    docs: &Tensor<T>,
    doc_segs: &Segments,
    queries: &Tensor<T>,
    pairs: &[(usize, usize)],
) -> Result<Tensor<T>> {
    let d = docs.cols();
    if queries.cols() != d {
        return Err(Error::shape(
            "pair_logits",
            format!("documents have {d} dims, queries {}", queries.cols()),
        ));
    }
    let mut out = Vec::new();
    for &(q, doc) in pairs {
        if q >= queries.rows() || doc >= doc_segs.count() {
            return Err(Error::shape(
                "pair_logits",
                format!("pair ({q}, {doc}) out of range"),
            ));
        }
        let e = queries.row(q);
        for r in doc_segs.range(doc) {
            out.push(docs.row(r).iter().zip(e).map(|(&a, &b)| a * b).sum());
        }
    }
    Tensor::matrix(out.len(), 1, out)
}

/// Gradients of [`pair_logits`]: `(dDocs, dQueries)`.
pub fn pair_logits_backward<T: Real>(
    dy: &Tensor<T>,
    docs: &Tensor<T>,
    doc_segs: &Segments,
    queries: &Tensor<T>,
    pairs: &[(usize, usize)],
) -> (Tensor<T>, Tensor<T>) {
    let d = docs.cols();
    let mut ddocs = Tensor::zeros(&[docs.rows(), d]);
    let mut dq = Tensor::zeros(&[queries.rows(), d]);
    let mut k = 0;
    for &(q, doc) in pairs {
        for r in doc_segs.range(doc) {
            let g = dy.data()[k];
            k += 1;
            let (e, h) = (queries.row(q), docs.row(r));
            for (o, &v) in ddocs.row_mut(r).iter_mut().zip(e) {
                *o += g * v;
            }
            for (o, &v) in dq.row_mut(q).iter_mut().zip(h) {
                *o += g * v;
            }
        }
    }
    (ddocs, dq)
}
