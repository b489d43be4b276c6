//! Layer definitions with hand-written forward and backward passes.
//!
//! Batched activations are laid out `batch × time × channels` for sequence
//! layers and `batch × features` for dense layers. Shapes passed to
//! [`Layer::output_shape`] exclude the batch axis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv1d,
    Maxpool1d,
    Dense,
    Relu,
    Dropout,
    Lstm,
    Rnn,
    Flatten,
}

/// Valid (unpadded) 1-D convolution over the time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `out_channels × in_channels × kernel`
    pub weight: Tensor,
    /// `out_channels`
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv1d {
    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }
    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }
    pub fn output_len(&self, len: usize) -> Option<usize> {
        conv_output_len(len, self.kernel(), self.stride)
    }
}

/// `floor((len − kernel)/stride) + 1`, or `None` when the window does not fit.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || len < kernel {
        None
    } else {
        Some((len - kernel) / stride + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxPool1d {
    pub pool: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Tensor,
    /// `out`
    pub bias: Tensor,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }
    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub rate: f64,
}

/// LSTM over a whole sequence, emitting the last hidden state.
///
/// Gate rows are stacked in the order input, forget, cell candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `4H × I`
    pub w_input: Tensor,
    /// `4H × H`
    pub w_hidden: Tensor,
    /// `4H`
    pub bias: Tensor,
}

impl Lstm {
    pub fn hidden(&self) -> usize {
        self.w_hidden.shape()[1]
    }
    pub fn inputs(&self) -> usize {
        self.w_input.shape()[1]
    }
}

/// Elman recurrence `h_t = tanh(W_x x_t + W_h h_{t−1} + b)`, emitting the
/// last hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct Rnn {
    /// `H × I`
    pub w_input: Tensor,
    /// `H × H`
    pub w_hidden: Tensor,
    /// `H`
    pub bias: Tensor,
}

impl Rnn {
    pub fn hidden(&self) -> usize {
        self.w_hidden.shape()[1]
    }
    pub fn inputs(&self) -> usize {
        self.w_input.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    MaxPool1d(MaxPool1d),
    Dense(Dense),
    Relu,
    Dropout(Dropout),
    Lstm(Lstm),
    Rnn(Rnn),
    Flatten,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

impl Layer {
    pub fn conv1d(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if kernel == 0 || stride == 0 || out_ch == 0 || in_ch == 0 {
            return Err(NnError::InvalidLayer(format!(
                "conv1d needs positive sizes (in {in_ch}, out {out_ch}, kernel {kernel}, stride {stride})"
            )));
        }
        Ok(Layer::Conv1d(Conv1d {
            weight: glorot(rng, &[out_ch, in_ch, kernel], in_ch * kernel, out_ch * kernel),
            bias: Tensor::zeros(&[out_ch]),
            stride,
        }))
    }

    pub fn maxpool1d(pool: usize, stride: usize) -> Result<Self> {
        if pool == 0 || stride == 0 {
            return Err(NnError::InvalidLayer("maxpool1d needs pool ≥ 1 and stride ≥ 1".into()));
        }
        Ok(Layer::MaxPool1d(MaxPool1d { pool, stride }))
    }

    pub fn dense(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(NnError::InvalidLayer("dense needs positive sizes".into()));
        }
        Ok(Layer::Dense(Dense {
            weight: glorot(rng, &[outputs, inputs], inputs, outputs),
            bias: Tensor::zeros(&[outputs]),
        }))
    }

    pub fn dropout(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidRate(rate));
        }
        Ok(Layer::Dropout(Dropout { rate }))
    }

    /// Forget-gate biases start at 1.0, everything else at 0.
    pub fn lstm(inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if inputs == 0 || hidden == 0 {
            return Err(NnError::InvalidLayer("lstm needs positive sizes".into()));
        }
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        Ok(Layer::Lstm(Lstm {
            w_input: glorot(rng, &[4 * hidden, inputs], inputs, hidden),
            w_hidden: glorot(rng, &[4 * hidden, hidden], hidden, hidden),
            bias,
        }))
    }

    pub fn rnn(inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if inputs == 0 || hidden == 0 {
            return Err(NnError::InvalidLayer("rnn needs positive sizes".into()));
        }
        Ok(Layer::Rnn(Rnn {
            w_input: glorot(rng, &[hidden, inputs], inputs, hidden),
            w_hidden: glorot(rng, &[hidden, hidden], hidden, hidden),
            bias: Tensor::zeros(&[hidden]),
        }))
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv1d(_) => LayerKind::Conv1d,
            Layer::MaxPool1d(_) => LayerKind::Maxpool1d,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Relu => LayerKind::Relu,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::Lstm(_) => LayerKind::Lstm,
            Layer::Rnn(_) => LayerKind::Rnn,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv1d(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Lstm(l) => vec![&l.w_input, &l.w_hidden, &l.bias],
            Layer::Rnn(l) => vec![&l.w_input, &l.w_hidden, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv1d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Lstm(l) => vec![&mut l.w_input, &mut l.w_hidden, &mut l.bias],
            Layer::Rnn(l) => vec![&mut l.w_input, &mut l.w_hidden, &mut l.bias],
            _ => Vec::new(),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: &str| {
            Err(NnError::ShapeMismatch(format!(
                "{:?} cannot accept per-sample shape {input:?}: {what}",
                self.kind()
            )))
        };
        match self {
            Layer::Conv1d(l) => {
                if input.len() != 2 || input[1] != l.in_channels() {
                    return mismatch(&format!("expected [length, {}]", l.in_channels()));
                }
                match l.output_len(input[0]) {
                    Some(len) => Ok(vec![len, l.out_channels()]),
                    None => Err(NnError::ShapeUnderflow(format!(
                        "length {} is shorter than kernel {}",
                        input[0],
                        l.kernel()
                    ))),
                }
            }
            Layer::MaxPool1d(p) => {
                if input.len() != 2 {
                    return mismatch("expected [length, channels]");
                }
                match conv_output_len(input[0], p.pool, p.stride) {
                    Some(len) => Ok(vec![len, input[1]]),
                    None => Err(NnError::ShapeUnderflow(format!(
                        "length {} is shorter than pool {}",
                        input[0], p.pool
                    ))),
                }
            }
            Layer::Dense(l) => {
                if input != [l.inputs()] {
                    return mismatch(&format!("expected [{}]", l.inputs()));
                }
                Ok(vec![l.outputs()])
            }
            Layer::Relu | Layer::Dropout(_) => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Lstm(l) => {
                if input.len() != 2 || input[1] != l.inputs() || input[0] == 0 {
                    return mismatch(&format!("expected [steps ≥ 1, {}]", l.inputs()));
                }
                Ok(vec![l.hidden()])
            }
            Layer::Rnn(l) => {
                if input.len() != 2 || input[1] != l.inputs() || input[0] == 0 {
                    return mismatch(&format!("expected [steps ≥ 1, {}]", l.inputs()));
                }
                Ok(vec![l.hidden()])
            }
        }
    }
}

/// Everything a layer keeps from its forward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Input(Tensor),
    Pool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Dropout {
        scale: Vec<f64>,
    },
    Lstm(LstmTrace),
    Rnn {
        input: Tensor,
        hidden: Vec<Vec<f64>>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
}

fn dims3(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    x.expect_rank(3, what)?;
    Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
}

// ---------------------------------------------------------------- conv1d

/// Convolution with weights re-laid out as `kernel × in × out` so the inner
/// loop runs over contiguous output channels.
pub fn conv1d_forward(x: &Tensor, layer: &Conv1d) -> Result<Tensor> {
    let (batch, len, cin) = dims3(x, "conv1d")?;
    if cin != layer.in_channels() {
        return Err(NnError::ShapeMismatch(format!(
            "conv1d expects {} input channels, got {cin}",
            layer.in_channels()
        )));
    }
    let (cout, k, s) = (layer.out_channels(), layer.kernel(), layer.stride);
    let lout = layer
        .output_len(len)
        .ok_or_else(|| NnError::ShapeMismatch(format!("conv1d: length {len} < kernel {k}")))?;
    let wt = conv_weight_kio(layer);
    let xd = x.data();
    let mut out = vec![0.0; batch * lout * cout];
    for b in 0..batch {
        for t in 0..lout {
            let row = &mut out[(b * lout + t) * cout..][..cout];
            row.copy_from_slice(layer.bias.data());
            for kk in 0..k {
                let xrow = &xd[(b * len + t * s + kk) * cin..][..cin];
                for (ci, &xv) in xrow.iter().enumerate() {
                    let wrow = &wt[(kk * cin + ci) * cout..][..cout];
                    for (o, w) in row.iter_mut().zip(wrow) {
                        *o += xv * w;
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch, lout, cout], out)
}

fn conv_weight_kio(layer: &Conv1d) -> Vec<f64> {
    let (cout, cin, k) = (layer.out_channels(), layer.in_channels(), layer.kernel());
    let w = layer.weight.data();
    let mut wt = vec![0.0; w.len()];
    for c in 0..cout {
        for ci in 0..cin {
            for kk in 0..k {
                wt[(kk * cin + ci) * cout + c] = w[(c * cin + ci) * k + kk];
            }
        }
    }
    wt
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv1d_backward(x: &Tensor, layer: &Conv1d, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, len, cin) = dims3(x, "conv1d")?;
    let (cout, k, s) = (layer.out_channels(), layer.kernel(), layer.stride);
    let lout = dy.shape()[1];
    let wt = conv_weight_kio(layer);
    let xd = x.data();
    let dyd = dy.data();
    let mut dx = vec![0.0; xd.len()];
    let mut dwt = vec![0.0; wt.len()];
    let mut db = vec![0.0; cout];
    for b in 0..batch {
        for t in 0..lout {
            let g = &dyd[(b * lout + t) * cout..][..cout];
            for (acc, gv) in db.iter_mut().zip(g) {
                *acc += gv;
            }
            for kk in 0..k {
                let base = (b * len + t * s + kk) * cin;
                for ci in 0..cin {
                    let xv = xd[base + ci];
                    let off = (kk * cin + ci) * cout;
                    let wrow = &wt[off..][..cout];
                    let dwrow = &mut dwt[off..][..cout];
                    let mut acc = 0.0;
                    for c in 0..cout {
                        dwrow[c] += g[c] * xv;
                        acc += g[c] * wrow[c];
                    }
                    dx[base + ci] += acc;
                }
            }
        }
    }
    let mut dw = vec![0.0; wt.len()];
    for c in 0..cout {
        for ci in 0..cin {
            for kk in 0..k {
                dw[(c * cin + ci) * k + kk] = dwt[(kk * cin + ci) * cout + c];
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(layer.weight.shape().to_vec(), dw)?,
        Tensor::new(vec![cout], db)?,
    ))
}

// --------------------------------------------------------------- maxpool

/// Max over each window; ties resolve to the earliest position. The
/// returned indices are absolute time positions, one per output element.
pub fn maxpool1d_forward(x: &Tensor, pool: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (batch, len, ch) = dims3(x, "maxpool1d")?;
    let lout = conv_output_len(len, pool, stride)
        .ok_or_else(|| NnError::ShapeMismatch(format!("maxpool1d: length {len} < pool {pool}")))?;
    let xd = x.data();
    let mut out = Vec::with_capacity(batch * lout * ch);
    let mut argmax = Vec::with_capacity(batch * lout * ch);
    for b in 0..batch {
        for t in 0..lout {
            for c in 0..ch {
                let mut best = t * stride;
                let mut best_v = xd[(b * len + best) * ch + c];
                for p in 1..pool {
                    let idx = t * stride + p;
                    let v = xd[(b * len + idx) * ch + c];
                    if v > best_v {
                        best = idx;
                        best_v = v;
                    }
                }
                out.push(best_v);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![batch, lout, ch], out)?, argmax))
}

pub fn maxpool1d_backward(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Tensor {
    let (len, ch) = (input_shape[1], input_shape[2]);
    let (batch, lout) = (dy.shape()[0], dy.shape()[1]);
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for b in 0..batch {
        for t in 0..lout {
            for c in 0..ch {
                let o = (b * lout + t) * ch + c;
                d[(b * len + argmax[o]) * ch + c] += dy.data()[o];
            }
        }
    }
    dx
}

// ----------------------------------------------------------------- dense

pub fn dense_forward(x: &Tensor, layer: &Dense) -> Result<Tensor> {
    x.expect_rank(2, "dense")?;
    let (batch, n_in) = (x.shape()[0], x.shape()[1]);
    if n_in != layer.inputs() {
        return Err(NnError::ShapeMismatch(format!(
            "dense expects {} inputs, got {n_in}",
            layer.inputs()
        )));
    }
    let n_out = layer.outputs();
    let w = layer.weight.data();
    let mut out = Vec::with_capacity(batch * n_out);
    for xrow in x.data().chunks_exact(n_in) {
        for (o, &bias) in layer.bias.data().iter().enumerate() {
            out.push(bias + dot(&w[o * n_in..][..n_in], xrow));
        }
    }
    Tensor::new(vec![batch, n_out], out)
}

/// Returns `(dx, dweight, dbias)`.
pub fn dense_backward(x: &Tensor, layer: &Dense, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n_in, n_out) = (layer.inputs(), layer.outputs());
    let w = layer.weight.data();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; n_out];
    for ((xrow, grow), dxrow) in x
        .data()
        .chunks_exact(n_in)
        .zip(dy.data().chunks_exact(n_out))
        .zip(dx.chunks_exact_mut(n_in))
    {
        for (o, &g) in grow.iter().enumerate() {
            db[o] += g;
            axpy(g, xrow, &mut dw[o * n_in..][..n_in]);
            axpy(g, &w[o * n_in..][..n_in], dxrow);
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).unwrap(),
        Tensor::new(layer.weight.shape().to_vec(), dw).unwrap(),
        Tensor::new(vec![n_out], db).unwrap(),
    )
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

// ------------------------------------------------------- relu / dropout

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient flows only where the input was strictly positive.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Training,
    #[default]
    Inference,
}

/// Per-element multipliers for inverted dropout: 0 with probability `rate`,
/// otherwise `1/(1−rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn apply_mask(x: &Tensor, scale: &[f64]) -> Tensor {
    let data = x.data().iter().zip(scale).map(|(v, s)| v * s).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

/// Inverted dropout. Inference mode (or rate 0) is the identity.
pub fn dropout(x: &Tensor, rate: f64, mode: Mode, seed: u64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidRate(rate));
    }
    if mode == Mode::Inference || rate == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(apply_mask(x, &dropout_mask(x.len(), rate, &mut rng)))
}

// ------------------------------------------------------------------ lstm

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Forward trace of an LSTM layer over a sequence.
#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    input: Tensor,
    /// `steps + 1` hidden states, each `batch × H`; index 0 is the zero state.
    hidden: Vec<Vec<f64>>,
    cell: Vec<Vec<f64>>,
    /// Activated gates per step, `batch × 4H` in (i, f, g, o) order.
    gates: Vec<Vec<f64>>,
    tanh_cell: Vec<Vec<f64>>,
}

struct CellOut {
    h: Vec<f64>,
    c: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn lstm_cell(layer: &Lstm, x: &[f64], h_prev: &[f64], c_prev: &[f64], batch: usize) -> CellOut {
    let (n_in, hid) = (layer.inputs(), layer.hidden());
    let (wx, wh, bias) = (layer.w_input.data(), layer.w_hidden.data(), layer.bias.data());
    let mut gates = vec![0.0; batch * 4 * hid];
    let mut h = vec![0.0; batch * hid];
    let mut c = vec![0.0; batch * hid];
    let mut tanh_c = vec![0.0; batch * hid];
    for b in 0..batch {
        let xb = &x[b * n_in..][..n_in];
        let hb = &h_prev[b * hid..][..hid];
        let gb = &mut gates[b * 4 * hid..][..4 * hid];
        for (r, g) in gb.iter_mut().enumerate() {
            let pre = bias[r] + dot(&wx[r * n_in..][..n_in], xb) + dot(&wh[r * hid..][..hid], hb);
            *g = if (2 * hid..3 * hid).contains(&r) {
                pre.tanh()
            } else {
                sigmoid(pre)
            };
        }
        for j in 0..hid {
            let (i, f, g, o) = (gb[j], gb[hid + j], gb[2 * hid + j], gb[3 * hid + j]);
            let cv = f * c_prev[b * hid + j] + i * g;
            let tc = cv.tanh();
            c[b * hid + j] = cv;
            tanh_c[b * hid + j] = tc;
            h[b * hid + j] = o * tc;
        }
    }
    CellOut { h, c, gates, tanh_c }
}

/// One LSTM step: `x_t` is `B × I`, `h_prev`/`c_prev` are `B × H`.
pub fn lstm_step(x_t: &Tensor, h_prev: &Tensor, c_prev: &Tensor, layer: &Lstm) -> Result<(Tensor, Tensor)> {
    x_t.expect_rank(2, "lstm_step input")?;
    let batch = x_t.shape()[0];
    let hid = layer.hidden();
    if x_t.shape()[1] != layer.inputs() || h_prev.shape() != [batch, hid] || c_prev.shape() != [batch, hid] {
        return Err(NnError::ShapeMismatch(format!(
            "lstm_step: x {:?}, h {:?}, c {:?} for I={} H={hid}",
            x_t.shape(),
            h_prev.shape(),
            c_prev.shape(),
            layer.inputs()
        )));
    }
    let out = lstm_cell(layer, x_t.data(), h_prev.data(), c_prev.data(), batch);
    Ok((
        Tensor::new(vec![batch, hid], out.h)?,
        Tensor::new(vec![batch, hid], out.c)?,
    ))
}

fn step_slice(x: &[f64], batch: usize, steps: usize, width: usize, t: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * width);
    for b in 0..batch {
        out.extend_from_slice(&x[(b * steps + t) * width..][..width]);
    }
    out
}

pub(crate) fn lstm_forward(x: &Tensor, layer: &Lstm) -> Result<(Tensor, LstmTrace)> {
    let (batch, steps, n_in) = dims3(x, "lstm")?;
    if n_in != layer.inputs() {
        return Err(NnError::ShapeMismatch(format!(
            "lstm expects {} inputs per step, got {n_in}",
            layer.inputs()
        )));
    }
    let hid = layer.hidden();
    let mut trace = LstmTrace {
        input: x.clone(),
        hidden: vec![vec![0.0; batch * hid]],
        cell: vec![vec![0.0; batch * hid]],
        gates: Vec::with_capacity(steps),
        tanh_cell: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let xt = step_slice(x.data(), batch, steps, n_in, t);
        let out = lstm_cell(layer, &xt, &trace.hidden[t], &trace.cell[t], batch);
        trace.hidden.push(out.h);
        trace.cell.push(out.c);
        trace.gates.push(out.gates);
        trace.tanh_cell.push(out.tanh_c);
    }
    let last = Tensor::new(vec![batch, hid], trace.hidden[steps].clone())?;
    Ok((last, trace))
}

/// Backpropagation through time. Returns `(dx, [dW_x, dW_h, db])`.
pub(crate) fn lstm_backward(layer: &Lstm, trace: &LstmTrace, dy: &Tensor) -> (Tensor, Vec<Tensor>) {
    let x = &trace.input;
    let (batch, steps, n_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hid = layer.hidden();
    let (wx, wh) = (layer.w_input.data(), layer.w_hidden.data());
    let mut dwx = vec![0.0; wx.len()];
    let mut dwh = vec![0.0; wh.len()];
    let mut dbias = vec![0.0; 4 * hid];
    let mut dx = vec![0.0; x.len()];
    let mut dh = dy.data().to_vec();
    let mut dc = vec![0.0; batch * hid];
    let mut dpre = vec![0.0; 4 * hid];
    for t in (0..steps).rev() {
        let gates = &trace.gates[t];
        let tanh_c = &trace.tanh_cell[t];
        let c_prev = &trace.cell[t];
        let h_prev = &trace.hidden[t];
        let mut dh_prev = vec![0.0; batch * hid];
        for b in 0..batch {
            let gb = &gates[b * 4 * hid..][..4 * hid];
            for j in 0..hid {
                let k = b * hid + j;
                let (i, f, g, o) = (gb[j], gb[hid + j], gb[2 * hid + j], gb[3 * hid + j]);
                let tc = tanh_c[k];
                let d_o = dh[k] * tc;
                let dcv = dc[k] + dh[k] * o * (1.0 - tc * tc);
                dpre[j] = dcv * g * i * (1.0 - i);
                dpre[hid + j] = dcv * c_prev[k] * f * (1.0 - f);
                dpre[2 * hid + j] = dcv * i * (1.0 - g * g);
                dpre[3 * hid + j] = d_o * o * (1.0 - o);
                dc[k] = dcv * f;
            }
            let xb_off = (b * steps + t) * n_in;
            let xb = &x.data()[xb_off..][..n_in];
            let hb = &h_prev[b * hid..][..hid];
            let dxb = &mut dx[xb_off..][..n_in];
            let dhb = &mut dh_prev[b * hid..][..hid];
            for (r, &a) in dpre.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                dbias[r] += a;
                axpy(a, xb, &mut dwx[r * n_in..][..n_in]);
                axpy(a, hb, &mut dwh[r * hid..][..hid]);
                axpy(a, &wx[r * n_in..][..n_in], dxb);
                axpy(a, &wh[r * hid..][..hid], dhb);
            }
        }
        dh = dh_prev;
    }
    (
        Tensor::new(x.shape().to_vec(), dx).unwrap(),
        vec![
            Tensor::new(layer.w_input.shape().to_vec(), dwx).unwrap(),
            Tensor::new(layer.w_hidden.shape().to_vec(), dwh).unwrap(),
            Tensor::new(vec![4 * hid], dbias).unwrap(),
        ],
    )
}

// ------------------------------------------------------------------- rnn

pub(crate) fn rnn_forward(x: &Tensor, layer: &Rnn) -> Result<(Tensor, Vec<Vec<f64>>)> {
    let (batch, steps, n_in) = dims3(x, "rnn")?;
    if n_in != layer.inputs() {
        return Err(NnError::ShapeMismatch(format!(
            "rnn expects {} inputs per step, got {n_in}",
            layer.inputs()
        )));
    }
    let hid = layer.hidden();
    let (wx, wh, bias) = (layer.w_input.data(), layer.w_hidden.data(), layer.bias.data());
    let mut hidden = vec![vec![0.0; batch * hid]];
    for t in 0..steps {
        let prev = &hidden[t];
        let mut h = vec![0.0; batch * hid];
        for b in 0..batch {
            let xb = &x.data()[(b * steps + t) * n_in..][..n_in];
            let hb = &prev[b * hid..][..hid];
            for j in 0..hid {
                h[b * hid + j] = (bias[j] + dot(&wx[j * n_in..][..n_in], xb) + dot(&wh[j * hid..][..hid], hb)).tanh();
            }
        }
        hidden.push(h);
    }
    let last = Tensor::new(vec![batch, hid], hidden[steps].clone())?;
    Ok((last, hidden))
}

pub(crate) fn rnn_backward(layer: &Rnn, x: &Tensor, hidden: &[Vec<f64>], dy: &Tensor) -> (Tensor, Vec<Tensor>) {
    let (batch, steps, n_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hid = layer.hidden();
    let (wx, wh) = (layer.w_input.data(), layer.w_hidden.data());
    let mut dwx = vec![0.0; wx.len()];
    let mut dwh = vec![0.0; wh.len()];
    let mut dbias = vec![0.0; hid];
    let mut dx = vec![0.0; x.len()];
    let mut dh = dy.data().to_vec();
    for t in (0..steps).rev() {
        let h = &hidden[t + 1];
        let h_prev = &hidden[t];
        let mut dh_prev = vec![0.0; batch * hid];
        for b in 0..batch {
            let xb_off = (b * steps + t) * n_in;
            let xb = &x.data()[xb_off..][..n_in];
            let hb = &h_prev[b * hid..][..hid];
            for j in 0..hid {
                let k = b * hid + j;
                let a = dh[k] * (1.0 - h[k] * h[k]);
                if a == 0.0 {
                    continue;
                }
                dbias[j] += a;
                axpy(a, xb, &mut dwx[j * n_in..][..n_in]);
                axpy(a, hb, &mut dwh[j * hid..][..hid]);
                axpy(a, &wx[j * n_in..][..n_in], &mut dx[xb_off..][..n_in]);
                axpy(a, &wh[j * hid..][..hid], &mut dh_prev[b * hid..][..hid]);
            }
        }
        dh = dh_prev;
    }
    (
        Tensor::new(x.shape().to_vec(), dx).unwrap(),
        vec![
            Tensor::new(layer.w_input.shape().to_vec(), dwx).unwrap(),
            Tensor::new(layer.w_hidden.shape().to_vec(), dwh).unwrap(),
            Tensor::new(vec![hid], dbias).unwrap(),
        ],
    )
}
