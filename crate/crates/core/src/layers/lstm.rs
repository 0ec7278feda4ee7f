//! LSTM cells, directional sequence layers and the bidirectional merge.
//!
//! The four gate matrices are stored stacked in one `4H × (H + in)` tensor
//! (row blocks in the order forget, input, candidate, output), each block
//! acting on the concatenation `[h_{t-1}, x_t]`:
//!
//! ```text
//! f_t = σ(W_f·[h_{t-1}, x_t] + b_f)
//! i_t = σ(W_i·[h_{t-1}, x_t] + b_i)
//! c̃_t = φ(W_c·[h_{t-1}, x_t] + b_c)
//! c_t = f_t ∘ c_{t-1} + i_t ∘ c̃_t
//! o_t = σ(W_o·[h_{t-1}, x_t] + b_o)
//! h_t = o_t ∘ φ(c_t)
//! ```
//!
//! `φ` is the cell activation (ReLU for the models here, tanh classically);
//! gates are always sigmoid.
//!
//! Sequences are processed time-major internally (`T × B × features`) so each
//! step reads and writes contiguous blocks. The input projection of every
//! step is computed up front as one large product; only the recurrent
//! `h_{t-1}·W_hᵀ` term runs step by step.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{gemm, gemm_strided, sigmoid, Activation, MatRef, Tensor};

pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Candidate = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Candidate, Gate::Output];
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `4H × (H + in)`, gate row blocks f, i, c, o.
    pub weight: Tensor,
    /// `4H`, same gate order.
    pub bias: Tensor,
    pub cell_activation: Activation,
}

impl LstmParams {
    pub fn new(weight: Tensor, bias: Tensor, cell_activation: Activation) -> Result<Self> {
        let (rows, cols) = weight.dims2("lstm weight")?;
        if rows % 4 != 0 || cols <= rows / 4 || bias.shape() != [rows] {
            return Err(Error::ShapeMismatch {
                op: "lstm params",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weight,
            bias,
            cell_activation,
        })
    }

    pub fn zeros(input: usize, hidden: usize, cell_activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(&[4 * hidden, hidden + input]),
            bias: Tensor::zeros(&[4 * hidden]),
            cell_activation,
        }
    }

    /// Glorot-uniform gate blocks (fan-in `H + in`, fan-out `H`), zero biases
    /// except the forget gate's.
    pub fn init(input: usize, hidden: usize, cell_activation: Activation, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, hidden, cell_activation);
        let limit = (6.0 / (2 * hidden + input) as f64).sqrt();
        for w in p.weight.data_mut() {
            *w = rng.random_range(-limit..limit);
        }
        p.gate_bias_mut(Gate::Forget).fill(FORGET_BIAS_INIT);
        p
    }

    pub fn hidden(&self) -> usize {
        self.bias.len() / 4
    }

    pub fn input(&self) -> usize {
        self.weight.shape()[1] - self.hidden()
    }

    /// `H × (H + in)` block of one gate.
    pub fn gate_weight(&self, gate: Gate) -> &[f64] {
        let block = self.hidden() * self.weight.shape()[1];
        &self.weight.data()[gate as usize * block..(gate as usize + 1) * block]
    }

    pub fn gate_weight_mut(&mut self, gate: Gate) -> &mut [f64] {
        let block = self.hidden() * self.weight.shape()[1];
        &mut self.weight.data_mut()[gate as usize * block..(gate as usize + 1) * block]
    }

    pub fn gate_bias(&self, gate: Gate) -> &[f64] {
        let h = self.hidden();
        &self.bias.data()[gate as usize * h..(gate as usize + 1) * h]
    }

    pub fn gate_bias_mut(&mut self, gate: Gate) -> &mut [f64] {
        let h = self.hidden();
        &mut self.bias.data_mut()[gate as usize * h..(gate as usize + 1) * h]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn row_len(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Recurrent block `W_h` viewed `4H × H`.
    fn recurrent(&self) -> MatRef<'_> {
        MatRef::strided(self.weight.data(), 4 * self.hidden(), self.hidden(), self.row_len(), 1)
    }

    /// Input block `W_x` viewed `4H × in`.
    fn input_block(&self) -> MatRef<'_> {
        MatRef::strided(
            &self.weight.data()[self.hidden()..],
            4 * self.hidden(),
            self.input(),
            self.row_len(),
            1,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmGrads {
    pub d_weight: Tensor,
    pub d_bias: Tensor,
}

/// Activations of one directional pass, time-major.
#[derive(Clone, Debug)]
pub(crate) struct SeqCache {
    pub batch: usize,
    pub steps: usize,
    hidden: usize,
    x: Vec<f64>,
    /// States `h_0..h_T`, `(T + 1) × B × H`.
    h: Vec<f64>,
    c: Vec<f64>,
    /// `φ(c_t)` for t = 1..T.
    act_c: Vec<f64>,
    /// Post-activation gate values for t = 1..T, `T × B × 4H`.
    gates: Vec<f64>,
}

impl SeqCache {
    fn block(&self) -> usize {
        self.batch * self.hidden
    }

    /// Hidden states `h_1..h_T`, `T × B × H`.
    pub fn outputs(&self) -> &[f64] {
        &self.h[self.block()..]
    }

    /// Final hidden state `h_T`, `B × H`.
    pub fn last(&self) -> &[f64] {
        &self.h[self.steps * self.block()..]
    }

    pub fn last_cell(&self) -> &[f64] {
        &self.c[self.steps * self.block()..]
    }
}

/// Runs the recurrence over a time-major sequence starting from `h0`/`c0`
/// (zeros when `None`).
pub(crate) fn forward_tm(
    p: &LstmParams,
    x: Vec<f64>,
    batch: usize,
    steps: usize,
    h0: Option<&[f64]>,
    c0: Option<&[f64]>,
) -> SeqCache {
    let (hd, inp) = (p.hidden(), p.input());
    let g4 = 4 * hd;
    let bh = batch * hd;
    debug_assert_eq!(x.len(), steps * batch * inp);

    let mut gates: Vec<f64> = p.bias.data().iter().copied().cycle().take(steps * batch * g4).collect();
    gemm(1.0, MatRef::new(&x, steps * batch, inp), p.input_block().t(), 1.0, &mut gates);

    let mut h = vec![0.0; (steps + 1) * bh];
    let mut c = vec![0.0; (steps + 1) * bh];
    if let Some(h0) = h0 {
        h[..bh].copy_from_slice(h0);
    }
    if let Some(c0) = c0 {
        c[..bh].copy_from_slice(c0);
    }
    let mut act_c = vec![0.0; steps * bh];
    let wh_t = p.recurrent().t();
    let phi = p.cell_activation;

    for t in 0..steps {
        let z = &mut gates[t * batch * g4..(t + 1) * batch * g4];
        let (h_done, h_rest) = h.split_at_mut((t + 1) * bh);
        let h_prev = &h_done[t * bh..];
        let h_next = &mut h_rest[..bh];
        gemm(1.0, MatRef::new(h_prev, batch, hd), wh_t, 1.0, z);

        let (c_done, c_rest) = c.split_at_mut((t + 1) * bh);
        let c_prev = &c_done[t * bh..];
        let c_next = &mut c_rest[..bh];
        let ac = &mut act_c[t * bh..(t + 1) * bh];
        for b in 0..batch {
            let zb = &mut z[b * g4..(b + 1) * g4];
            let base = b * hd;
            for j in 0..hd {
                let f = sigmoid(zb[j]);
                let i = sigmoid(zb[hd + j]);
                let g = phi.apply(zb[2 * hd + j]);
                let o = sigmoid(zb[3 * hd + j]);
                zb[j] = f;
                zb[hd + j] = i;
                zb[2 * hd + j] = g;
                zb[3 * hd + j] = o;
                let cn = f * c_prev[base + j] + i * g;
                c_next[base + j] = cn;
                let a = phi.apply(cn);
                ac[base + j] = a;
                h_next[base + j] = o * a;
            }
        }
    }
    SeqCache {
        batch,
        steps,
        hidden: hd,
        x,
        h,
        c,
        act_c,
        gates,
    }
}

/// Backpropagation through time. `d_seq` is the gradient on every `h_t`
/// (`T × B × H`), `d_last` the gradient on `h_T` only. Returns the input
/// gradient (time-major) and the parameter gradients.
pub(crate) fn backward_tm(
    p: &LstmParams,
    cache: &SeqCache,
    d_seq: Option<&[f64]>,
    d_last: Option<&[f64]>,
) -> (Vec<f64>, LstmGrads) {
    let (hd, inp) = (p.hidden(), p.input());
    let (batch, steps) = (cache.batch, cache.steps);
    let g4 = 4 * hd;
    let bh = batch * hd;
    let phi = p.cell_activation;

    let mut dz = vec![0.0; steps * batch * g4];
    let mut dh = vec![0.0; bh];
    let mut dc = vec![0.0; bh];
    if let Some(d) = d_last {
        dh.copy_from_slice(d);
    }
    let wh = p.recurrent();

    for t in (0..steps).rev() {
        if let Some(d) = d_seq {
            for (a, b) in dh.iter_mut().zip(&d[t * bh..(t + 1) * bh]) {
                *a += b;
            }
        }
        let gates = &cache.gates[t * batch * g4..(t + 1) * batch * g4];
        let c_prev = &cache.c[t * bh..(t + 1) * bh];
        let ac = &cache.act_c[t * bh..(t + 1) * bh];
        let dz_t = &mut dz[t * batch * g4..(t + 1) * batch * g4];
        for b in 0..batch {
            let gb = &gates[b * g4..(b + 1) * g4];
            let db = &mut dz_t[b * g4..(b + 1) * g4];
            let base = b * hd;
            for j in 0..hd {
                let (f, i, g, o) = (gb[j], gb[hd + j], gb[2 * hd + j], gb[3 * hd + j]);
                let a = ac[base + j];
                let dhv = dh[base + j];
                let d_o = dhv * a;
                let dcv = dc[base + j] + dhv * o * phi.derivative_from_output(a);
                db[j] = dcv * c_prev[base + j] * f * (1.0 - f);
                db[hd + j] = dcv * g * i * (1.0 - i);
                db[2 * hd + j] = dcv * i * phi.derivative_from_output(g);
                db[3 * hd + j] = d_o * o * (1.0 - o);
                dc[base + j] = dcv * f;
            }
        }
        if t > 0 {
            gemm(1.0, MatRef::new(dz_t, batch, g4), wh, 0.0, &mut dh);
        }
    }

    let rows = steps * batch;
    let row_len = hd + inp;
    let dz_view = MatRef::new(&dz, rows, g4);
    let mut d_weight = vec![0.0; g4 * row_len];
    gemm_strided(1.0, dz_view.t(), MatRef::new(&cache.h[..rows * hd], rows, hd), 0.0, &mut d_weight, row_len);
    gemm_strided(1.0, dz_view.t(), MatRef::new(&cache.x, rows, inp), 0.0, &mut d_weight[hd..], row_len);
    let mut d_bias = vec![0.0; g4];
    for row in dz.chunks_exact(g4) {
        for (acc, v) in d_bias.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut d_x = vec![0.0; rows * inp];
    gemm(1.0, dz_view, p.input_block(), 0.0, &mut d_x);
    (
        d_x,
        LstmGrads {
            d_weight: Tensor::new(vec![g4, row_len], d_weight).expect("lstm weight grad"),
            d_bias: Tensor::new(vec![g4], d_bias).expect("lstm bias grad"),
        },
    )
}

/// `B × T × F` → `T × B × F`.
pub(crate) fn to_time_major(data: &[f64], batch: usize, steps: usize, feat: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..batch {
        for t in 0..steps {
            let src = (b * steps + t) * feat;
            let dst = (t * batch + b) * feat;
            out[dst..dst + feat].copy_from_slice(&data[src..src + feat]);
        }
    }
    out
}

/// `T × B × F` → `B × T × F`.
pub(crate) fn to_batch_major(data: &[f64], batch: usize, steps: usize, feat: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for t in 0..steps {
        for b in 0..batch {
            let src = (t * batch + b) * feat;
            let dst = (b * steps + t) * feat;
            out[dst..dst + feat].copy_from_slice(&data[src..src + feat]);
        }
    }
    out
}

/// Reverses the order of `steps` contiguous blocks.
pub(crate) fn reverse_blocks(data: &[f64], steps: usize) -> Vec<f64> {
    let block = data.len() / steps;
    let mut out = Vec::with_capacity(data.len());
    for t in (0..steps).rev() {
        out.extend_from_slice(&data[t * block..(t + 1) * block]);
    }
    out
}

/// Reverses the time axis of a `B × T × F` batch.
pub fn reverse_time_batch(seq: &Tensor) -> Result<Tensor> {
    let (batch, steps, feat) = dims3(seq, "reverse_time_batch")?;
    let mut out = Vec::with_capacity(seq.len());
    for b in 0..batch {
        let w = &seq.data()[b * steps * feat..(b + 1) * steps * feat];
        out.extend(reverse_blocks(w, steps));
    }
    Tensor::new(vec![batch, steps, feat], out)
}

pub(crate) fn dims3(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [b, s, f] => Ok((b, s, f)),
        _ => Err(Error::ShapeMismatch {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        }),
    }
}

fn check_len(op: &'static str, t: &Tensor, want: usize) -> Result<()> {
    if t.len() != want {
        return Err(Error::ShapeMismatch {
            op,
            left: t.shape().to_vec(),
            right: vec![want],
        });
    }
    Ok(())
}

/// One step of the cell for a single sample: returns `(h_t, c_t)`.
pub fn lstm_cell_step(x_t: &Tensor, h_prev: &Tensor, c_prev: &Tensor, p: &LstmParams) -> Result<(Tensor, Tensor)> {
    check_len("lstm_cell_step input", x_t, p.input())?;
    check_len("lstm_cell_step h_prev", h_prev, p.hidden())?;
    check_len("lstm_cell_step c_prev", c_prev, p.hidden())?;
    let cache = forward_tm(p, x_t.data().to_vec(), 1, 1, Some(h_prev.data()), Some(c_prev.data()));
    Ok((
        Tensor::vector(cache.last().to_vec())?,
        Tensor::vector(cache.last_cell().to_vec())?,
    ))
}

/// Gate activations `(f, i, c̃, o)` of a single step, for inspection.
pub fn lstm_gates(x_t: &Tensor, h_prev: &Tensor, c_prev: &Tensor, p: &LstmParams) -> Result<[Vec<f64>; 4]> {
    check_len("lstm_gates input", x_t, p.input())?;
    check_len("lstm_gates h_prev", h_prev, p.hidden())?;
    check_len("lstm_gates c_prev", c_prev, p.hidden())?;
    let cache = forward_tm(p, x_t.data().to_vec(), 1, 1, Some(h_prev.data()), Some(c_prev.data()));
    let h = p.hidden();
    Ok(std::array::from_fn(|g| cache.gates[g * h..(g + 1) * h].to_vec()))
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    inner: SeqCache,
    return_sequences: bool,
}

/// Runs a layer over a `B × T × in` batch from zero state. Returns every
/// hidden state (`B × T × H`) or only the last (`B × H`).
pub fn lstm_layer_forward(seq: &Tensor, p: &LstmParams, return_sequences: bool) -> Result<(Tensor, LstmCache)> {
    let (batch, steps, feat) = dims3(seq, "lstm_layer_forward")?;
    if feat != p.input() {
        return Err(Error::ShapeMismatch {
            op: "lstm_layer_forward",
            left: seq.shape().to_vec(),
            right: p.weight.shape().to_vec(),
        });
    }
    let inner = forward_tm(p, to_time_major(seq.data(), batch, steps, feat), batch, steps, None, None);
    let h = p.hidden();
    let out = if return_sequences {
        Tensor::new(vec![batch, steps, h], to_batch_major(inner.outputs(), batch, steps, h))?
    } else {
        Tensor::new(vec![batch, h], inner.last().to_vec())?
    };
    Ok((
        out,
        LstmCache {
            inner,
            return_sequences,
        },
    ))
}

pub fn lstm_layer_backward(p: &LstmParams, cache: &LstmCache, grad_out: &Tensor) -> Result<(Tensor, LstmGrads)> {
    let c = &cache.inner;
    let h = p.hidden();
    let want = if cache.return_sequences {
        vec![c.batch, c.steps, h]
    } else {
        vec![c.batch, h]
    };
    if grad_out.shape() != want.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "lstm_layer_backward",
            left: grad_out.shape().to_vec(),
            right: want,
        });
    }
    let (d_x, grads) = if cache.return_sequences {
        let d_seq = to_time_major(grad_out.data(), c.batch, c.steps, h);
        backward_tm(p, c, Some(&d_seq), None)
    } else {
        backward_tm(p, c, None, Some(grad_out.data()))
    };
    let inp = p.input();
    Ok((
        Tensor::new(vec![c.batch, c.steps, inp], to_batch_major(&d_x, c.batch, c.steps, inp))?,
        grads,
    ))
}

/// Forward and backward directional layers of equal width.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn new(forward: LstmParams, backward: LstmParams) -> Result<Self> {
        if forward.weight.shape() != backward.weight.shape() {
            return Err(Error::ShapeMismatch {
                op: "bidirectional widths",
                left: forward.weight.shape().to_vec(),
                right: backward.weight.shape().to_vec(),
            });
        }
        Ok(Self { forward, backward })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BiSeqCache {
    pub fwd: SeqCache,
    pub bwd: SeqCache,
}

pub(crate) fn bi_forward_tm(p: &BiLstmParams, x: Vec<f64>, batch: usize, steps: usize) -> BiSeqCache {
    let rev = reverse_blocks(&x, steps);
    let fwd = forward_tm(&p.forward, x, batch, steps, None, None);
    let bwd = forward_tm(&p.backward, rev, batch, steps, None, None);
    BiSeqCache { fwd, bwd }
}

/// Concatenated `[forward ‖ backward]` states aligned on the original time
/// axis, `T × B × 2H`.
pub(crate) fn bi_outputs(cache: &BiSeqCache) -> Vec<f64> {
    let (batch, steps, h) = (cache.fwd.batch, cache.fwd.steps, cache.fwd.hidden);
    let f = cache.fwd.outputs();
    let r = cache.bwd.outputs();
    let mut out = vec![0.0; steps * batch * 2 * h];
    for t in 0..steps {
        let rt = steps - 1 - t;
        for b in 0..batch {
            let dst = (t * batch + b) * 2 * h;
            out[dst..dst + h].copy_from_slice(&f[(t * batch + b) * h..(t * batch + b + 1) * h]);
            out[dst + h..dst + 2 * h].copy_from_slice(&r[(rt * batch + b) * h..(rt * batch + b + 1) * h]);
        }
    }
    out
}

/// Final states of both directions, `B × 2H`.
pub(crate) fn bi_last(cache: &BiSeqCache) -> Vec<f64> {
    let (batch, h) = (cache.fwd.batch, cache.fwd.hidden);
    let (f, r) = (cache.fwd.last(), cache.bwd.last());
    let mut out = Vec::with_capacity(batch * 2 * h);
    for b in 0..batch {
        out.extend_from_slice(&f[b * h..(b + 1) * h]);
        out.extend_from_slice(&r[b * h..(b + 1) * h]);
    }
    out
}

/// Gradients flow back through both directions; the backward branch's input
/// gradient is re-reversed before the two are summed.
pub(crate) fn bi_backward_tm(
    p: &BiLstmParams,
    cache: &BiSeqCache,
    d_seq: Option<&[f64]>,
    d_last: Option<&[f64]>,
) -> (Vec<f64>, LstmGrads, LstmGrads) {
    let (batch, steps, h) = (cache.fwd.batch, cache.fwd.steps, cache.fwd.hidden);
    let split_rows = |d: &[f64], rows: usize| -> (Vec<f64>, Vec<f64>) {
        let mut a = Vec::with_capacity(rows * h);
        let mut b = Vec::with_capacity(rows * h);
        for row in d.chunks_exact(2 * h) {
            a.extend_from_slice(&row[..h]);
            b.extend_from_slice(&row[h..]);
        }
        (a, b)
    };
    let (seq_f, seq_b) = match d_seq {
        Some(d) => {
            let (f, b) = split_rows(d, steps * batch);
            (Some(f), Some(reverse_blocks(&b, steps)))
        }
        None => (None, None),
    };
    let (last_f, last_b) = match d_last {
        Some(d) => {
            let (f, b) = split_rows(d, batch);
            (Some(f), Some(b))
        }
        None => (None, None),
    };
    let (mut d_x, g_f) = backward_tm(&p.forward, &cache.fwd, seq_f.as_deref(), last_f.as_deref());
    let (d_rev, g_b) = backward_tm(&p.backward, &cache.bwd, seq_b.as_deref(), last_b.as_deref());
    for (a, b) in d_x.iter_mut().zip(reverse_blocks(&d_rev, steps)) {
        *a += b;
    }
    (d_x, g_f, g_b)
}

#[derive(Clone, Debug)]
pub struct BiLstmCache {
    inner: BiSeqCache,
    return_sequences: bool,
}

/// Runs `p_fwd` over the sequence and `p_bwd` over its time reversal and
/// concatenates the two on the feature axis, forward features first.
pub fn bilstm_forward(
    seq: &Tensor,
    p_fwd: &LstmParams,
    p_bwd: &LstmParams,
    return_sequences: bool,
) -> Result<(Tensor, BiLstmCache)> {
    let p = BiLstmParams::new(p_fwd.clone(), p_bwd.clone())?;
    let (batch, steps, feat) = dims3(seq, "bilstm_forward")?;
    if feat != p.forward.input() {
        return Err(Error::ShapeMismatch {
            op: "bilstm_forward",
            left: seq.shape().to_vec(),
            right: p.forward.weight.shape().to_vec(),
        });
    }
    let inner = bi_forward_tm(&p, to_time_major(seq.data(), batch, steps, feat), batch, steps);
    let w = p.output_width();
    let out = if return_sequences {
        Tensor::new(vec![batch, steps, w], to_batch_major(&bi_outputs(&inner), batch, steps, w))?
    } else {
        Tensor::new(vec![batch, w], bi_last(&inner))?
    };
    Ok((
        out,
        BiLstmCache {
            inner,
            return_sequences,
        },
    ))
}

pub fn bilstm_backward(
    p_fwd: &LstmParams,
    p_bwd: &LstmParams,
    cache: &BiLstmCache,
    grad_out: &Tensor,
) -> Result<(Tensor, LstmGrads, LstmGrads)> {
    let p = BiLstmParams::new(p_fwd.clone(), p_bwd.clone())?;
    let c = &cache.inner;
    let (batch, steps) = (c.fwd.batch, c.fwd.steps);
    let w = p.output_width();
    let want = if cache.return_sequences {
        vec![batch, steps, w]
    } else {
        vec![batch, w]
    };
    if grad_out.shape() != want.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "bilstm_backward",
            left: grad_out.shape().to_vec(),
            right: want,
        });
    }
    let (d_x, gf, gb) = if cache.return_sequences {
        let d = to_time_major(grad_out.data(), batch, steps, w);
        bi_backward_tm(&p, c, Some(&d), None)
    } else {
        bi_backward_tm(&p, c, None, Some(grad_out.data()))
    };
    let inp = p.forward.input();
    Ok((
        Tensor::new(vec![batch, steps, inp], to_batch_major(&d_x, batch, steps, inp))?,
        gf,
        gb,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, FD_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, input: usize, hidden: usize, act: Activation) -> LstmParams {
        let mut p = LstmParams::init(input, hidden, act, rng);
        for b in p.bias.data_mut() {
            *b += rng.random_range(-0.3..0.3);
        }
        p
    }

    #[test]
    fn zero_parameters_fixed_point() {
        let p = LstmParams::zeros(3, 2, Activation::Relu);
        let x = Tensor::vector(vec![0.4, -1.0, 2.0]).unwrap();
        let z = Tensor::zeros(&[2]);
        let gates = lstm_gates(&x, &z, &z, &p).unwrap();
        assert_eq!(gates[0], vec![0.5, 0.5]);
        assert_eq!(gates[1], vec![0.5, 0.5]);
        assert_eq!(gates[2], vec![0.0, 0.0]);
        assert_eq!(gates[3], vec![0.5, 0.5]);
        let (h, c) = lstm_cell_step(&x, &z, &z, &p).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
        assert_eq!(c.data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let mut p = LstmParams::zeros(2, 3, Activation::Tanh);
        p.gate_bias_mut(Gate::Forget).fill(50.0);
        let x = Tensor::vector(vec![1.0, -1.0]).unwrap();
        let h = Tensor::zeros(&[3]);
        let c = Tensor::vector(vec![0.7, -0.2, 1.5]).unwrap();
        let (_, c_next) = lstm_cell_step(&x, &h, &c, &p).unwrap();
        for (a, b) in c_next.data().iter().zip(c.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gates_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let p = random_params(&mut rng, 3, 4, Activation::Relu);
            let x = random_tensor(&mut rng, &[3], 5.0);
            let h = random_tensor(&mut rng, &[4], 2.0);
            let c = random_tensor(&mut rng, &[4], 2.0);
            let g = lstm_gates(&x, &h, &c, &p).unwrap();
            for gate in [&g[0], &g[1], &g[3]] {
                assert!(gate.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn length_one_sequence_equals_cell_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(&mut rng, 3, 4, Activation::Relu);
        let x = random_tensor(&mut rng, &[1, 1, 3], 1.0);
        let (out, _) = lstm_layer_forward(&x, &p, false).unwrap();
        let z = Tensor::zeros(&[4]);
        let (h, _) = lstm_cell_step(&Tensor::vector(x.data().to_vec()).unwrap(), &z, &z, &p).unwrap();
        assert_eq!(out.data(), h.data());
    }

    #[test]
    fn sequence_output_ends_with_final_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng, 3, 4, Activation::Tanh);
        let x = random_tensor(&mut rng, &[2, 6, 3], 1.0);
        let (seq, _) = lstm_layer_forward(&x, &p, true).unwrap();
        let (last, _) = lstm_layer_forward(&x, &p, false).unwrap();
        for b in 0..2 {
            assert_eq!(&seq.data()[(b * 6 + 5) * 4..(b * 6 + 6) * 4], last.row(b));
        }
    }

    #[test]
    fn layer_matches_repeated_cell_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(&mut rng, 2, 3, Activation::Relu);
        let x = random_tensor(&mut rng, &[1, 5, 2], 1.0);
        let (last, _) = lstm_layer_forward(&x, &p, false).unwrap();
        let mut h = Tensor::zeros(&[3]);
        let mut c = Tensor::zeros(&[3]);
        for t in 0..5 {
            let xt = Tensor::vector(x.data()[t * 2..t * 2 + 2].to_vec()).unwrap();
            (h, c) = lstm_cell_step(&xt, &h, &c, &p).unwrap();
        }
        for (a, b) in last.data().iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn weighted_sum(y: &Tensor, r: &Tensor) -> f64 {
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for seed in 0..5 {
            for (act, rs) in [(Activation::Tanh, true), (Activation::Relu, false), (Activation::Relu, true)] {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let p = random_params(&mut rng, 2, 3, act);
                let x = random_tensor(&mut rng, &[2, 4, 2], 1.0);
                let (y, cache) = lstm_layer_forward(&x, &p, rs).unwrap();
                let r = random_tensor(&mut rng, y.shape(), 1.0);
                let (dx, g) = lstm_layer_backward(&p, &cache, &r).unwrap();
                let obj = |x: &Tensor, p: &LstmParams| weighted_sum(&lstm_layer_forward(x, p, rs).unwrap().0, &r);
                let ex = finite_diff_check(|x| obj(x, &p), &x, &dx, FD_EPS).unwrap();
                let ew = finite_diff_check(
                    |w| {
                        let mut q = p.clone();
                        q.weight = w.clone();
                        obj(&x, &q)
                    },
                    &p.weight,
                    &g.d_weight,
                    FD_EPS,
                )
                .unwrap();
                let eb = finite_diff_check(
                    |b| {
                        let mut q = p.clone();
                        q.bias = b.clone();
                        obj(&x, &q)
                    },
                    &p.bias,
                    &g.d_bias,
                    FD_EPS,
                )
                .unwrap();
                assert!(ex < 1e-5 && ew < 1e-5 && eb < 1e-5, "seed {seed} {act} rs={rs}: {ex} {ew} {eb}");
            }
        }
    }

    #[test]
    fn dead_backward_branch_outputs_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pf = random_params(&mut rng, 3, 2, Activation::Relu);
        let pb = LstmParams::zeros(3, 2, Activation::Relu);
        let x = random_tensor(&mut rng, &[2, 5, 3], 1.0);
        let (bi, _) = bilstm_forward(&x, &pf, &pb, false).unwrap();
        let (fw, _) = lstm_layer_forward(&x, &pf, false).unwrap();
        for b in 0..2 {
            assert_eq!(&bi.row(b)[..2], fw.row(b));
            assert_eq!(&bi.row(b)[2..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn palindromic_input_gives_equal_final_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(&mut rng, 3, 4, Activation::Relu);
        let half = random_tensor(&mut rng, &[1, 3, 3], 1.0);
        let mut data = half.data().to_vec();
        data.extend_from_slice(&half.data()[6..9]);
        data.extend(reverse_blocks(half.data(), 3));
        let x = Tensor::new(vec![1, 7, 3], data).unwrap();
        assert_eq!(reverse_time_batch(&x).unwrap(), x);
        let (bi, _) = bilstm_forward(&x, &p, &p, false).unwrap();
        assert_eq!(&bi.data()[..4], &bi.data()[4..]);
    }

    #[test]
    fn backward_branch_is_forward_on_reversed_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pf = random_params(&mut rng, 3, 2, Activation::Relu);
        let pb = random_params(&mut rng, 3, 2, Activation::Relu);
        let x = random_tensor(&mut rng, &[2, 6, 3], 1.0);
        let (bi, _) = bilstm_forward(&x, &pf, &pb, true).unwrap();
        let (rev, _) = lstm_layer_forward(&reverse_time_batch(&x).unwrap(), &pb, true).unwrap();
        let rev = reverse_time_batch(&rev).unwrap();
        for b in 0..2 {
            for t in 0..6 {
                let bi_row = &bi.data()[(b * 6 + t) * 4..(b * 6 + t + 1) * 4];
                let r_row = &rev.data()[(b * 6 + t) * 2..(b * 6 + t + 1) * 2];
                assert_eq!(&bi_row[2..], r_row);
            }
        }
    }

    #[test]
    fn bidirectional_gradients_match_finite_differences() {
        for seed in 0..5 {
            for rs in [true, false] {
                let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
                let pf = random_params(&mut rng, 2, 3, Activation::Relu);
                let pb = random_params(&mut rng, 2, 3, Activation::Relu);
                let x = random_tensor(&mut rng, &[2, 4, 2], 1.0);
                let (y, cache) = bilstm_forward(&x, &pf, &pb, rs).unwrap();
                assert_eq!(*y.shape().last().unwrap(), 6);
                let r = random_tensor(&mut rng, y.shape(), 1.0);
                let (dx, gf, gb) = bilstm_backward(&pf, &pb, &cache, &r).unwrap();
                let obj = |x: &Tensor, pf: &LstmParams, pb: &LstmParams| {
                    weighted_sum(&bilstm_forward(x, pf, pb, rs).unwrap().0, &r)
                };
                let ex = finite_diff_check(|x| obj(x, &pf, &pb), &x, &dx, FD_EPS).unwrap();
                let ef = finite_diff_check(
                    |w| {
                        let mut q = pf.clone();
                        q.weight = w.clone();
                        obj(&x, &q, &pb)
                    },
                    &pf.weight,
                    &gf.d_weight,
                    FD_EPS,
                )
                .unwrap();
                let eb = finite_diff_check(
                    |w| {
                        let mut q = pb.clone();
                        q.weight = w.clone();
                        obj(&x, &pf, &q)
                    },
                    &pb.weight,
                    &gb.d_weight,
                    FD_EPS,
                )
                .unwrap();
                assert!(ex < 1e-5 && ef < 1e-5 && eb < 1e-5, "seed {seed} rs={rs}: {ex} {ef} {eb}");
            }
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let pf = LstmParams::zeros(3, 2, Activation::Relu);
        let pb = LstmParams::zeros(3, 4, Activation::Relu);
        let x = Tensor::zeros(&[1, 2, 3]);
        assert!(bilstm_forward(&x, &pf, &pb, false).is_err());
        assert!(lstm_layer_forward(&Tensor::zeros(&[1, 2, 5]), &pf, false).is_err());
        assert!(lstm_cell_step(&Tensor::zeros(&[2]), &Tensor::zeros(&[2]), &Tensor::zeros(&[2]), &pf).is_err());
    }

    #[test]
    fn parameter_count_of_first_standard_layer() {
        let p = LstmParams::zeros(24, 64, Activation::Relu);
        assert_eq!(p.param_count(), 4 * (64 * (64 + 24) + 64));
        assert_eq!(p.param_count(), 22_784);
    }
}
