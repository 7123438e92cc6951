//! GRU and LSTM layers over packed variable-length batches.
//!
//! Sequences are visited in descending length order, so at every time step
//! the still-active sequences form a prefix of the recurrent state buffer
//! and the hidden-to-hidden product is a single GEMM.
//!
//! Cell equations (gate order as stored in the weight matrices):
//!
//! * GRU `[r, u, n]`: `r = σ(W_ir x + b_ir + W_hr h + b_hr)`,
//!   `u = σ(W_iu x + b_iu + W_hu h + b_hu)`,
//!   `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`, `h' = (1 − u) ⊙ n + u ⊙ h`.
//! * LSTM `[i, f, g, o]`: gates from `W_ih x + b_ih + W_hh h + b_hh`,
//!   `c' = σ(f) ⊙ c + σ(i) ⊙ tanh(g)`, `h' = σ(o) ⊙ tanh(c')`.

use serde::{Deserialize, Serialize};

use super::kernels::{column_sums, linear};
use super::{Real, Segments, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Gru,
    Lstm,
}

impl Cell {
    pub fn gates(self) -> usize {
        match self {
            Cell::Gru => 3,
            Cell::Lstm => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
    Bidirectional,
}

impl Direction {
    /// The `reverse` flag of each pass, in output column order.
    pub fn passes(self) -> &'static [bool] {
        match self {
            Direction::Forward => &[false],
            Direction::Backward => &[true],
            Direction::Bidirectional => &[false, true],
        }
    }
}

/// Borrowed weights of one direction.
#[derive(Clone, Copy, Debug)]
pub struct RecurrentWeights<'a, T> {
    pub w_ih: &'a Tensor<T>,
    pub w_hh: &'a Tensor<T>,
    pub b_ih: &'a Tensor<T>,
    pub b_hh: &'a Tensor<T>,
}

impl<T: Real> RecurrentWeights<'_, T> {
    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    fn validate(&self, cell: Cell, input: usize) -> Result<()> {
        let h = self.hidden();
        let gh = cell.gates() * h;
        let ok = self.w_ih.shape() == [gh, input]
            && self.w_hh.shape() == [gh, h]
            && self.b_ih.len() == gh
            && self.b_hh.len() == gh;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "recurrent",
                format!(
                    "{cell:?} with {input} inputs and hidden {h}: got W_ih {:?}, W_hh {:?}, biases {}/{}",
                    self.w_ih.shape(),
                    self.w_hh.shape(),
                    self.b_ih.len(),
                    self.b_hh.len()
                ),
            ))
        }
    }
}

/// Gradients for one direction's weights.
#[derive(Clone, Debug)]
pub struct RecurrentGrads<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub b_ih: Tensor<T>,
    pub b_hh: Tensor<T>,
}

/// Activations saved by one direction for the backward pass.
#[derive(Clone, Debug)]
pub struct DirectionCache<T> {
    reverse: bool,
    hidden: usize,
    /// Hidden state per packed row.
    out: Vec<T>,
    /// Activated gates per row.
    gates: Vec<T>,
    /// LSTM: cell state per row. GRU: `W_hn h + b_hn` per row.
    extra: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct RecurrentCache<T> {
    pub(crate) dirs: Vec<DirectionCache<T>>,
}

/// Sequence indices sorted by descending length (stable).
fn length_order(segs: &Segments) -> Vec<usize> {
    let mut order: Vec<usize> = (0..segs.count()).collect();
    order.sort_by(|&a, &b| segs.len_of(b).cmp(&segs.len_of(a)));
    order
}

fn row_at(segs: &Segments, seq: usize, step: usize, reverse: bool) -> usize {
    let len = segs.len_of(seq);
    segs.offset(seq) + if reverse { len - 1 - step } else { step }
}

fn activate_sigmoid<T: Real>(v: &mut [T]) {
    for x in v {
        *x = x.act_sigmoid();
    }
}

fn activate_tanh<T: Real>(v: &mut [T]) {
    for x in v {
        *x = x.act_tanh();
    }
}

fn run_direction<T: Real>(
    cell: Cell,
    p: &RecurrentWeights<T>,
    x: &Tensor<T>,
    segs: &Segments,
    reverse: bool,
) -> Result<DirectionCache<T>> {
    let h = p.hidden();
    let gh = cell.gates() * h;
    let total = segs.total();
    let xproj = linear(x, p.w_ih, p.b_ih)?;
    let xproj = xproj.data();
    let order = length_order(segs);
    let nseq = order.len();
    let maxlen = order.first().map_or(0, |&s| segs.len_of(s));

    let mut state = vec![T::zero(); nseq * h];
    let mut cstate = vec![T::zero(); nseq * h];
    let mut hproj = vec![T::zero(); nseq * gh];
    let mut out = vec![T::zero(); total * h];
    let mut gates = vec![T::zero(); total * gh];
    let mut extra = vec![T::zero(); total * h];
    let mut active = nseq;
    let one = T::one();

    for step in 0..maxlen {
        while active > 0 && segs.len_of(order[active - 1]) <= step {
            active -= 1;
        }
        for j in 0..active {
            hproj[j * gh..(j + 1) * gh].copy_from_slice(p.b_hh.data());
        }
        T::gemm(
            active,
            h,
            gh,
            one,
            &state[..active * h],
            false,
            p.w_hh.data(),
            true,
            one,
            &mut hproj[..active * gh],
        );
        for j in 0..active {
            let row = row_at(segs, order[j], step, reverse);
            let xp = &xproj[row * gh..(row + 1) * gh];
            let hp = &hproj[j * gh..(j + 1) * gh];
            let g = &mut gates[row * gh..(row + 1) * gh];
            let hs = &mut state[j * h..(j + 1) * h];
            let ex = &mut extra[row * h..(row + 1) * h];
            for ((gv, &a), &b) in g.iter_mut().zip(xp).zip(hp) {
                *gv = a + b;
            }
            match cell {
                Cell::Lstm => {
                    let cs = &mut cstate[j * h..(j + 1) * h];
                    let (ifg, o) = g.split_at_mut(3 * h);
                    let (if_, gg) = ifg.split_at_mut(2 * h);
                    activate_sigmoid(if_);
                    activate_tanh(gg);
                    activate_sigmoid(o);
                    let (i, f) = if_.split_at(h);
                    for k in 0..h {
                        let c = f[k] * cs[k] + i[k] * gg[k];
                        cs[k] = c;
                        ex[k] = c;
                    }
                    for ((hv, &c), &o) in hs.iter_mut().zip(&*cs).zip(&*o) {
                        *hv = o * c.act_tanh();
                    }
                }
                Cell::Gru => {
                    let (ru, n) = g.split_at_mut(2 * h);
                    activate_sigmoid(ru);
                    let hn = &hp[2 * h..];
                    let xn = &xp[2 * h..];
                    for k in 0..h {
                        n[k] = xn[k] + ru[k] * hn[k];
                    }
                    activate_tanh(n);
                    ex.copy_from_slice(hn);
                    let u = &ru[h..];
                    for k in 0..h {
                        hs[k] = (one - u[k]) * n[k] + u[k] * hs[k];
                    }
                }
            }
            out[row * h..(row + 1) * h].copy_from_slice(hs);
        }
    }
    Ok(DirectionCache {
        reverse,
        hidden: h,
        out,
        gates,
        extra,
    })
}

fn backward_direction<T: Real>(
    cell: Cell,
    p: &RecurrentWeights<T>,
    x: &Tensor<T>,
    segs: &Segments,
    cache: &DirectionCache<T>,
    dy: &[T],
) -> (Tensor<T>, RecurrentGrads<T>) {
    let h = cache.hidden;
    let gh = cell.gates() * h;
    let total = segs.total();
    let input = x.cols();
    let reverse = cache.reverse;
    let order = length_order(segs);
    let nseq = order.len();
    let maxlen = order.first().map_or(0, |&s| segs.len_of(s));
    let one = T::one();

    let mut da_x = vec![T::zero(); total * gh];
    let mut da_h = match cell {
        Cell::Gru => vec![T::zero(); total * gh],
        Cell::Lstm => Vec::new(),
    };
    let mut dh = vec![T::zero(); nseq * h];
    let mut dc = vec![T::zero(); nseq * h];
    let mut direct = vec![T::zero(); nseq * h];
    let mut gathered = vec![T::zero(); nseq * gh];
    // Previous row in processing order, used for h_{t-1} and c_{t-1}.
    let prev_row = |seq: usize, step: usize| {
        (step > 0).then(|| row_at(segs, seq, step - 1, reverse))
    };

    let mut active = 0;
    for step in (0..maxlen).rev() {
        while active < nseq && segs.len_of(order[active]) > step {
            active += 1;
        }
        for j in 0..active {
            let seq = order[j];
            let row = row_at(segs, seq, step, reverse);
            let prev = prev_row(seq, step);
            let g = &cache.gates[row * gh..(row + 1) * gh];
            let dyr = &dy[row * h..(row + 1) * h];
            match cell {
                Cell::Lstm => {
                    let dar = &mut da_x[row * gh..(row + 1) * gh];
                    for k in 0..h {
                        let dhk = dyr[k] + dh[j * h + k];
                        let (i, f, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                        let c = cache.extra[row * h + k];
                        let c_prev = prev.map_or(T::zero(), |pr| cache.extra[pr * h + k]);
                        let tc = c.act_tanh();
                        let d_o = dhk * tc;
                        let dct = dc[j * h + k] + dhk * o * (one - tc * tc);
                        dc[j * h + k] = dct * f;
                        dar[k] = dct * gg * i * (one - i);
                        dar[h + k] = dct * c_prev * f * (one - f);
                        dar[2 * h + k] = dct * i * (one - gg * gg);
                        dar[3 * h + k] = d_o * o * (one - o);
                    }
                    gathered[j * gh..(j + 1) * gh].copy_from_slice(dar);
                }
                Cell::Gru => {
                    for k in 0..h {
                        let dhk = dyr[k] + dh[j * h + k];
                        let (r, u, n) = (g[k], g[h + k], g[2 * h + k]);
                        let hn = cache.extra[row * h + k];
                        let h_prev = prev.map_or(T::zero(), |pr| cache.out[pr * h + k]);
                        let dn = dhk * (one - u);
                        let du = dhk * (h_prev - n);
                        direct[j * h + k] = dhk * u;
                        let dan = dn * (one - n * n);
                        let dar = dan * hn * r * (one - r);
                        let dau = du * u * (one - u);
                        let ax = &mut da_x[row * gh..(row + 1) * gh];
                        ax[k] = dar;
                        ax[h + k] = dau;
                        ax[2 * h + k] = dan;
                        let ah = &mut da_h[row * gh..(row + 1) * gh];
                        ah[k] = dar;
                        ah[h + k] = dau;
                        ah[2 * h + k] = dan * r;
                    }
                    gathered[j * gh..(j + 1) * gh]
                        .copy_from_slice(&da_h[row * gh..(row + 1) * gh]);
                }
            }
        }
        T::gemm(
            active,
            gh,
            h,
            one,
            &gathered[..active * gh],
            false,
            p.w_hh.data(),
            false,
            T::zero(),
            &mut dh[..active * h],
        );
        if cell == Cell::Gru {
            for (d, &v) in dh[..active * h].iter_mut().zip(&direct[..active * h]) {
                *d += v;
            }
        }
    }

    let da_h_ref: &[T] = match cell {
        Cell::Gru => &da_h,
        Cell::Lstm => &da_x,
    };
    let mut h_prev = vec![T::zero(); total * h];
    for seq in 0..nseq {
        for step in 1..segs.len_of(seq) {
            let row = row_at(segs, seq, step, reverse);
            let pr = row_at(segs, seq, step - 1, reverse);
            h_prev[row * h..(row + 1) * h].copy_from_slice(&cache.out[pr * h..(pr + 1) * h]);
        }
    }

    let mut dx = Tensor::zeros(&[total, input]);
    T::gemm(total, gh, input, one, &da_x, false, p.w_ih.data(), false, T::zero(), dx.data_mut());
    let mut dw_ih = Tensor::zeros(&[gh, input]);
    T::gemm(gh, total, input, one, &da_x, true, x.data(), false, T::zero(), dw_ih.data_mut());
    let mut dw_hh = Tensor::zeros(&[gh, h]);
    T::gemm(gh, total, h, one, da_h_ref, true, &h_prev, false, T::zero(), dw_hh.data_mut());
    let sums = |v: &[T]| {
        let t = Tensor::matrix(total, gh, v.to_vec()).expect("packed gate gradients");
        Tensor::vector(column_sums(&t))
    };
    let grads = RecurrentGrads {
        w_ih: dw_ih,
        w_hh: dw_hh,
        b_ih: sums(&da_x),
        b_hh: sums(da_h_ref),
    };
    (dx, grads)
}

fn validate_inputs<T: Real>(
    cell: Cell,
    weights: &[RecurrentWeights<T>],
    x: &Tensor<T>,
    segs: &Segments,
    direction: Direction,
) -> Result<()> {
    if weights.len() != direction.passes().len() {
        return Err(Error::shape(
            "recurrent",
            format!("{direction:?} needs {} weight sets, got {}", direction.passes().len(), weights.len()),
        ));
    }
    if segs.count() == 0 || (0..segs.count()).any(|s| segs.len_of(s) == 0) {
        return Err(Error::Empty("recurrent layer"));
    }
    if x.rows() != segs.total() {
        return Err(Error::shape(
            "recurrent",
            format!("{} rows but segments cover {}", x.rows(), segs.total()),
        ));
    }
    for w in weights {
        w.validate(cell, x.cols())?;
    }
    if weights.iter().any(|w| w.hidden() != weights[0].hidden()) {
        return Err(Error::shape("recurrent", "directions differ in hidden size"));
    }
    Ok(())
}

/// Runs a (possibly bidirectional) recurrent layer and keeps the activations
/// needed by [`recurrent_backward`]. Bidirectional output rows are
/// `[forward | backward]`.
pub fn recurrent_forward_cached<T: Real>(
    cell: Cell,
    weights: &[RecurrentWeights<T>],
    x: &Tensor<T>,
    segs: &Segments,
    direction: Direction,
) -> Result<(Tensor<T>, RecurrentCache<T>)> {
    validate_inputs(cell, weights, x, segs, direction)?;
    let h = weights[0].hidden();
    let passes = direction.passes();
    let width = h * passes.len();
    let total = segs.total();
    let mut dirs = Vec::with_capacity(passes.len());
    for (w, &reverse) in weights.iter().zip(passes) {
        dirs.push(run_direction(cell, w, x, segs, reverse)?);
    }
    let mut out = vec![T::zero(); total * width];
    for (d, cache) in dirs.iter().enumerate() {
        for r in 0..total {
            out[r * width + d * h..r * width + (d + 1) * h]
                .copy_from_slice(&cache.out[r * h..(r + 1) * h]);
        }
    }
    Ok((Tensor::matrix(total, width, out)?, RecurrentCache { dirs }))
}

/// Recurrent layer output for a packed batch.
pub fn recurrent_forward<T: Real>(
    cell: Cell,
    weights: &[RecurrentWeights<T>],
    x: &Tensor<T>,
    segs: &Segments,
    direction: Direction,
) -> Result<Tensor<T>> {
    recurrent_forward_cached(cell, weights, x, segs, direction).map(|(y, _)| y)
}

/// Gradients of a recurrent layer: input gradient and per-direction weight
/// gradients.
pub fn recurrent_backward<T: Real>(
    cell: Cell,
    weights: &[RecurrentWeights<T>],
    x: &Tensor<T>,
    segs: &Segments,
    cache: &RecurrentCache<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Vec<RecurrentGrads<T>>) {
    let total = segs.total();
    let h = cache.dirs[0].hidden;
    let width = h * cache.dirs.len();
    let mut dx = Tensor::zeros(&[total, x.cols()]);
    let mut grads = Vec::with_capacity(cache.dirs.len());
    for (d, (w, dc)) in weights.iter().zip(&cache.dirs).enumerate() {
        let mut part = vec![T::zero(); total * h];
        for r in 0..total {
            part[r * h..(r + 1) * h]
                .copy_from_slice(&dy.data()[r * width + d * h..r * width + (d + 1) * h]);
        }
        let (dxd, g) = backward_direction(cell, w, x, segs, dc, &part);
        dx.add_assign(&dxd);
        grads.push(g);
    }
    (dx, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Owned {
        w_ih: Tensor<f64>,
        w_hh: Tensor<f64>,
        b_ih: Tensor<f64>,
        b_hh: Tensor<f64>,
    }

    impl Owned {
        fn random(rng: &mut ChaCha8Rng, cell: Cell, input: usize, h: usize, scale: f64) -> Self {
            let gh = cell.gates() * h;
            let mut vals = |n: usize| -> Vec<f64> {
                (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
            };
            Owned {
                w_ih: Tensor::matrix(gh, input, vals(gh * input)).unwrap(),
                w_hh: Tensor::matrix(gh, h, vals(gh * h)).unwrap(),
                b_ih: Tensor::vector(vals(gh)),
                b_hh: Tensor::vector(vals(gh)),
            }
        }

        fn view(&self) -> RecurrentWeights<'_, f64> {
            RecurrentWeights {
                w_ih: &self.w_ih,
                w_hh: &self.w_hh,
                b_ih: &self.b_ih,
                b_hh: &self.b_hh,
            }
        }
    }

    /// Single-sequence reference implementation, one frame at a time.
    fn reference(cell: Cell, p: &Owned, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h = p.w_hh.cols();
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut out = Vec::new();
        let mv = |w: &Tensor<f64>, v: &[f64], b: &Tensor<f64>| -> Vec<f64> {
            (0..w.rows())
                .map(|r| b.data()[r] + w.row(r).iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
                .collect()
        };
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        for x in xs {
            let a = mv(&p.w_ih, x, &p.b_ih);
            let b = mv(&p.w_hh, &hs, &p.b_hh);
            for k in 0..h {
                match cell {
                    Cell::Lstm => {
                        let i = s(a[k] + b[k]);
                        let f = s(a[h + k] + b[h + k]);
                        let g = (a[2 * h + k] + b[2 * h + k]).tanh();
                        let o = s(a[3 * h + k] + b[3 * h + k]);
                        cs[k] = f * cs[k] + i * g;
                        hs[k] = o * cs[k].tanh();
                    }
                    Cell::Gru => {
                        let r = s(a[k] + b[k]);
                        let u = s(a[h + k] + b[h + k]);
                        let n = (a[2 * h + k] + r * b[2 * h + k]).tanh();
                        hs[k] = (1.0 - u) * n + u * hs[k];
                    }
                }
            }
            out.push(hs.clone());
        }
        out
    }

    #[test]
    fn packed_batch_matches_per_sequence_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for cell in [Cell::Gru, Cell::Lstm] {
            let p = Owned::random(&mut rng, cell, 3, 4, 0.7);
            let lens = [5, 2, 7, 1];
            let segs = Segments::from_lens(&lens);
            let x = Tensor::matrix(
                segs.total(),
                3,
                (0..segs.total() * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let y = recurrent_forward(cell, &[p.view()], &x, &segs, Direction::Forward).unwrap();
            for s in 0..lens.len() {
                let xs: Vec<Vec<f64>> = segs.range(s).map(|r| x.row(r).to_vec()).collect();
                let want = reference(cell, &p, &xs);
                for (t, r) in segs.range(s).enumerate() {
                    for k in 0..4 {
                        assert!((y.row(r)[k] - want[t][k]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        for cell in [Cell::Gru, Cell::Lstm] {
            let gh = cell.gates() * 3;
            let z = Owned {
                w_ih: Tensor::zeros(&[gh, 2]),
                w_hh: Tensor::zeros(&[gh, 3]),
                b_ih: Tensor::zeros(&[gh]),
                b_hh: Tensor::zeros(&[gh]),
            };
            let x = Tensor::matrix(4, 2, vec![1.0, -2.0, 3.0, 0.5, 7.0, 7.0, -1.0, 2.0]).unwrap();
            let y = recurrent_forward(
                cell,
                &[z.view(), z.view()],
                &x,
                &Segments::from_lens(&[4]),
                Direction::Bidirectional,
            )
            .unwrap();
            assert_eq!(y.shape(), &[4, 6]);
            assert!(y.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bidirectional_is_concatenation_of_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for cell in [Cell::Gru, Cell::Lstm] {
            let f = Owned::random(&mut rng, cell, 2, 3, 0.8);
            let b = Owned::random(&mut rng, cell, 2, 3, 0.8);
            let n = 6;
            let x = Tensor::matrix(n, 2, (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let segs = Segments::from_lens(&[n]);
            let bi = recurrent_forward(cell, &[f.view(), b.view()], &x, &segs, Direction::Bidirectional)
                .unwrap();
            let fw = recurrent_forward(cell, &[f.view()], &x, &segs, Direction::Forward).unwrap();
            let rev_rows: Vec<Vec<f64>> = (0..n).rev().map(|r| x.row(r).to_vec()).collect();
            let xr = Tensor::from_rows(&rev_rows).unwrap();
            let bw_on_rev = recurrent_forward(cell, &[b.view()], &xr, &segs, Direction::Forward).unwrap();
            for t in 0..n {
                assert_eq!(&bi.row(t)[..3], fw.row(t));
                assert_eq!(&bi.row(t)[3..], bw_on_rev.row(n - 1 - t));
            }
        }
    }

    #[test]
    fn rejects_empty_sequences() {
        let z = Owned {
            w_ih: Tensor::zeros(&[6, 1]),
            w_hh: Tensor::zeros(&[6, 2]),
            b_ih: Tensor::zeros(&[6]),
            b_hh: Tensor::zeros(&[6]),
        };
        let x = Tensor::<f64>::zeros(&[0, 1]);
        assert!(matches!(
            recurrent_forward(Cell::Gru, &[z.view()], &x, &Segments::from_lens(&[0]), Direction::Forward),
            Err(Error::Empty(_))
        ));
    }
}
