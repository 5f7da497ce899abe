//! Minimal recurrent classifier with hand-written gradients.
//!
//! Two architectures are provided:
//!
//! * single: dropout(0.10) → LSTM(d→480) → dropout(0.50) → linear(480→2),
//!   emitting logits;
//! * dual: LSTM(d→240) → dropout(0.40) → LSTM(240→240) → linear(240→240) →
//!   ReLU → linear(240→2) → log-softmax.
//!
//! The head reads the hidden state of the final timestep. Sequences are
//! processed as batches laid out timestep-major: `xs[t]` is a `batch x d`
//! matrix. Each row of every matrix product depends only on its own sample, so
//! per-sample outputs do not depend on batch composition.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output column of the attack class.
pub const ATTACK: usize = 0;
/// Output column of the bona fide class.
pub const BONAFIDE: usize = 1;
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Single,
    Dual,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(Variant::Single),
            "dual" => Ok(Variant::Dual),
            other => Err(Error::InvalidParam(format!("unknown model variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_size: usize,
    pub hidden: usize,
    /// Single variant only: dropout on every input frame.
    pub input_dropout: f64,
    /// Single: after the LSTM. Dual: between the two LSTMs.
    pub hidden_dropout: f64,
}

impl ModelConfig {
    pub fn single(input_size: usize) -> Self {
        Self {
            variant: Variant::Single,
            input_size,
            hidden: 480,
            input_dropout: 0.10,
            hidden_dropout: 0.50,
        }
    }

    pub fn dual(input_size: usize) -> Self {
        Self {
            variant: Variant::Dual,
            input_size,
            hidden: 240,
            input_dropout: 0.0,
            hidden_dropout: 0.40,
        }
    }

    pub fn for_variant(variant: Variant, input_size: usize) -> Self {
        match variant {
            Variant::Single => Self::single(input_size),
            Variant::Dual => Self::dual(input_size),
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.hidden == 0 {
            return Err(Error::InvalidParam("layer sizes must be >= 1".into()));
        }
        for p in [self.input_dropout, self.hidden_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidParam(format!("dropout rate {p} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

/// Gate blocks are stacked `[input, forget, cell, output]` along the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub w_x: Array2<f64>,
    pub w_h: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmLayerParams {
    pub fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let w_x = uniform(rng, 4 * hidden, input, k);
        let w_h = uniform(rng, 4 * hidden, hidden, k);
        let mut b = Array1::from_shape_simple_fn(4 * hidden, || rng.random_range(-k..=k));
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Self { w_x, w_h, b }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Array2::zeros((4 * hidden, input)),
            w_h: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_x.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_h.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl LinearParams {
    pub fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let k = 1.0 / (input as f64).sqrt();
        Self {
            w: uniform(rng, output, input, k),
            b: Array1::from_shape_simple_fn(output, || rng.random_range(-k..=k)),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }
}

/// All trainable tensors. Also used as the gradient and optimizer-state
/// container, so every instance shares one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub lstm1: LstmLayerParams,
    pub lstm2: Option<LstmLayerParams>,
    pub hidden_fc: Option<LinearParams>,
    pub head: LinearParams,
}

impl Params {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let lstm1 = LstmLayerParams::init(config.input_size, h, &mut rng);
        match config.variant {
            Variant::Single => Self {
                lstm1,
                lstm2: None,
                hidden_fc: None,
                head: LinearParams::init(h, CLASSES, &mut rng),
            },
            Variant::Dual => Self {
                lstm1,
                lstm2: Some(LstmLayerParams::init(h, h, &mut rng)),
                hidden_fc: Some(LinearParams::init(h, h, &mut rng)),
                head: LinearParams::init(h, CLASSES, &mut rng),
            },
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden;
        let dual = config.variant == Variant::Dual;
        Self {
            lstm1: LstmLayerParams::zeros(config.input_size, h),
            lstm2: dual.then(|| LstmLayerParams::zeros(h, h)),
            hidden_fc: dual.then(|| LinearParams::zeros(h, h)),
            head: LinearParams::zeros(h, CLASSES),
        }
    }

    /// Flat views of every tensor in declaration order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.lstm1.w_x.as_slice().expect("standard layout"),
            self.lstm1.w_h.as_slice().expect("standard layout"),
            self.lstm1.b.as_slice().expect("standard layout"),
        ];
        if let Some(l) = &self.lstm2 {
            out.push(l.w_x.as_slice().expect("standard layout"));
            out.push(l.w_h.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        if let Some(fc) = &self.hidden_fc {
            out.push(fc.w.as_slice().expect("standard layout"));
            out.push(fc.b.as_slice().expect("standard layout"));
        }
        out.push(self.head.w.as_slice().expect("standard layout"));
        out.push(self.head.b.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.lstm1.w_x.as_slice_mut().expect("standard layout"),
            self.lstm1.w_h.as_slice_mut().expect("standard layout"),
            self.lstm1.b.as_slice_mut().expect("standard layout"),
        ];
        if let Some(l) = &mut self.lstm2 {
            out.push(l.w_x.as_slice_mut().expect("standard layout"));
            out.push(l.w_h.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        if let Some(fc) = &mut self.hidden_fc {
            out.push(fc.w.as_slice_mut().expect("standard layout"));
            out.push(fc.b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head.w.as_slice_mut().expect("standard layout"));
        out.push(self.head.b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Adds `other` scaled by `alpha`.
    pub fn add_scaled(&mut self, other: &Params, alpha: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations kept for the backward pass of one LSTM layer.
#[derive(Debug, Clone)]
pub struct LstmCache {
    xs: Vec<Array2<f64>>,
    /// `h_0 .. h_n`, `h_0 = 0`.
    hs: Vec<Array2<f64>>,
    /// `c_0 .. c_n`, `c_0 = 0`.
    cs: Vec<Array2<f64>>,
    /// Activated gates `[i | f | g | o]` per step.
    gates: Vec<Array2<f64>>,
    tanh_c: Vec<Array2<f64>>,
}

impl LstmCache {
    /// Hidden outputs `h_1 .. h_n`.
    pub fn outputs(&self) -> &[Array2<f64>] {
        &self.hs[1..]
    }

    pub fn cells(&self) -> &[Array2<f64>] {
        &self.cs[1..]
    }
}

fn check_finite(what: &str, a: &Array2<f64>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Forget-gate LSTM over a timestep-major batch, starting from zero state.
pub fn lstm_forward(xs: &[Array2<f64>], p: &LstmLayerParams) -> Result<(Vec<Array2<f64>>, LstmCache)> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Empty("LSTM input sequence is empty".into()))?;
    let batch = first.nrows();
    let h = p.hidden_size();
    for x in xs {
        if x.ncols() != p.input_size() {
            return Err(Error::DimensionMismatch {
                expected: p.input_size(),
                actual: x.ncols(),
            });
        }
        if x.nrows() != batch {
            return Err(Error::DimensionMismatch {
                expected: batch,
                actual: x.nrows(),
            });
        }
        check_finite("LSTM input", x)?;
    }
    let mut cache = LstmCache {
        xs: xs.to_vec(),
        hs: vec![Array2::zeros((batch, h))],
        cs: vec![Array2::zeros((batch, h))],
        gates: Vec::with_capacity(xs.len()),
        tanh_c: Vec::with_capacity(xs.len()),
    };
    for x in xs {
        let mut z = Array2::zeros((batch, 4 * h));
        general_mat_mul(1.0, x, &p.w_x.t(), 0.0, &mut z);
        general_mat_mul(1.0, cache.hs.last().expect("h_0"), &p.w_h.t(), 1.0, &mut z);
        z += &p.b;
        z.slice_mut(s![.., ..2 * h]).mapv_inplace(sigmoid);
        z.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
        z.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);

        let c_prev = cache.cs.last().expect("c_0");
        let mut c = Array2::zeros((batch, h));
        Zip::from(&mut c)
            .and(c_prev)
            .and(z.slice(s![.., ..h]))
            .and(z.slice(s![.., h..2 * h]))
            .and(z.slice(s![.., 2 * h..3 * h]))
            .for_each(|c, &cp, &i, &f, &g| *c = f * cp + i * g);
        let tc = c.mapv(f64::tanh);
        let hout = &z.slice(s![.., 3 * h..]) * &tc;
        cache.gates.push(z);
        cache.cs.push(c);
        cache.tanh_c.push(tc);
        cache.hs.push(hout);
    }
    Ok((cache.hs[1..].to_vec(), cache))
}

/// Back-propagates `d_out[t]` (gradient w.r.t. `h_t`, absent = zero) through
/// the layer. Accumulates into `grad` and returns gradients w.r.t. the inputs.
pub fn lstm_backward(
    cache: &LstmCache,
    p: &LstmLayerParams,
    d_out: &[Option<Array2<f64>>],
    grad: &mut LstmLayerParams,
) -> Vec<Array2<f64>> {
    let n = cache.xs.len();
    let batch = cache.xs[0].nrows();
    let h = p.hidden_size();
    let mut dh_next = Array2::<f64>::zeros((batch, h));
    let mut dc_next = Array2::<f64>::zeros((batch, h));
    let mut dxs = vec![Array2::zeros((0, 0)); n];
    let mut dz = Array2::<f64>::zeros((batch, 4 * h));
    for t in (0..n).rev() {
        let mut dh = dh_next;
        if let Some(d) = &d_out[t] {
            dh += d;
        }
        let gates = &cache.gates[t];
        let (gi, gf, gg, go) = (
            gates.slice(s![.., ..h]),
            gates.slice(s![.., h..2 * h]),
            gates.slice(s![.., 2 * h..3 * h]),
            gates.slice(s![.., 3 * h..]),
        );
        let tc = &cache.tanh_c[t];
        let c_prev = &cache.cs[t];
        let mut dc = dc_next;
        Zip::from(&mut dc)
            .and(&dh)
            .and(go)
            .and(tc)
            .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));
        {
            let (mut dzi, rest) = dz.view_mut().split_at(Axis(1), h);
            let (mut dzf, rest) = rest.split_at(Axis(1), h);
            let (mut dzg, mut dzo) = rest.split_at(Axis(1), h);
            Zip::from(&mut dzi)
                .and(&dc)
                .and(gi)
                .and(gg)
                .for_each(|d, &dc, &i, &g| *d = dc * g * i * (1.0 - i));
            Zip::from(&mut dzf)
                .and(&dc)
                .and(gf)
                .and(c_prev)
                .for_each(|d, &dc, &f, &cp| *d = dc * cp * f * (1.0 - f));
            Zip::from(&mut dzg)
                .and(&dc)
                .and(gi)
                .and(gg)
                .for_each(|d, &dc, &i, &g| *d = dc * i * (1.0 - g * g));
            Zip::from(&mut dzo)
                .and(&dh)
                .and(go)
                .and(tc)
                .for_each(|d, &dh, &o, &tc| *d = dh * tc * o * (1.0 - o));
        }
        dc_next = &dc * &gf;

        general_mat_mul(1.0, &dz.t(), &cache.xs[t], 1.0, &mut grad.w_x);
        general_mat_mul(1.0, &dz.t(), &cache.hs[t], 1.0, &mut grad.w_h);
        grad.b += &dz.sum_axis(Axis(0));

        let mut dx = Array2::zeros((batch, p.input_size()));
        general_mat_mul(1.0, &dz, &p.w_x, 0.0, &mut dx);
        dxs[t] = dx;
        let mut dhp = Array2::zeros((batch, h));
        general_mat_mul(1.0, &dz, &p.w_h, 0.0, &mut dhp);
        dh_next = dhp;
    }
    dxs
}

/// Inverted dropout. Returns the output and the multiplicative mask.
pub fn dropout_forward(
    x: &Array2<f64>,
    rate: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidParam(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), Array2::ones(x.raw_dim())));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    Ok((x * &mask, mask))
}

/// `x W^T + b`.
pub fn linear_forward(x: &Array2<f64>, p: &LinearParams) -> Result<Array2<f64>> {
    if x.ncols() != p.w.ncols() {
        return Err(Error::DimensionMismatch {
            expected: p.w.ncols(),
            actual: x.ncols(),
        });
    }
    let mut y = Array2::zeros((x.nrows(), p.w.nrows()));
    general_mat_mul(1.0, x, &p.w.t(), 0.0, &mut y);
    y += &p.b;
    Ok(y)
}

pub fn relu_forward(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_forward(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// `-log_probs[label]`.
pub fn nll_loss(log_probs: &[f64], label: usize) -> f64 {
    -log_probs[label]
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    steps: usize,
    input_masks: Vec<Array2<f64>>,
    lstm1: LstmCache,
    mid_masks: Vec<Array2<f64>>,
    lstm2: Option<LstmCache>,
    fc_input: Option<Array2<f64>>,
    fc_pre: Option<Array2<f64>>,
    head_input: Array2<f64>,
    head_output: Array2<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

/// Row-wise softmax probabilities of the head output.
fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    log_softmax_forward(x).mapv(f64::exp)
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: Params::init(&config, seed),
        })
    }

    /// Stacks `n x d` samples into timestep-major `batch x d` matrices.
    pub fn stack_batch(&self, samples: &[ArrayView2<f64>]) -> Result<Vec<Array2<f64>>> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Empty("empty batch".into()))?;
        let (n, d) = first.dim();
        if n == 0 {
            return Err(Error::Empty("sample with no frames".into()));
        }
        if d != self.config.input_size {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_size,
                actual: d,
            });
        }
        let mut xs = vec![Array2::zeros((samples.len(), d)); n];
        for (b, s) in samples.iter().enumerate() {
            if s.dim() != (n, d) {
                return Err(Error::DimensionMismatch {
                    expected: n * d,
                    actual: s.len(),
                });
            }
            for (t, row) in s.outer_iter().enumerate() {
                xs[t].row_mut(b).assign(&row);
            }
        }
        Ok(xs)
    }

    /// Runs the network. The returned `batch x 2` matrix holds log-probabilities
    /// for the dual variant and logits for the single variant.
    pub fn forward(
        &self,
        samples: &[ArrayView2<f64>],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let xs = self.stack_batch(samples)?;
        self.forward_steps(xs, mode, rng)
    }

    pub fn forward_steps(
        &self,
        mut xs: Vec<Array2<f64>>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let c = &self.config;
        let p = &self.params;
        let batch = xs[0].nrows();
        let steps = xs.len();
        let mut input_masks = Vec::new();
        if c.variant == Variant::Single {
            for x in &mut xs {
                let (y, m) = dropout_forward(x, c.input_dropout, mode, rng)?;
                *x = y;
                input_masks.push(m);
            }
        }
        let (h1, lstm1) = lstm_forward(&xs, &p.lstm1)?;
        let mut mid_masks = Vec::new();
        let (head_input, lstm2, fc_input, fc_pre) = match c.variant {
            Variant::Single => {
                let last = h1.last().expect("non-empty sequence");
                let (dropped, m) = dropout_forward(last, c.hidden_dropout, mode, rng)?;
                mid_masks.push(m);
                (dropped, None, None, None)
            }
            Variant::Dual => {
                let mut dropped = Vec::with_capacity(steps);
                for h in &h1 {
                    let (y, m) = dropout_forward(h, c.hidden_dropout, mode, rng)?;
                    dropped.push(y);
                    mid_masks.push(m);
                }
                let l2 = p.lstm2.as_ref().expect("dual has second LSTM");
                let (h2, cache2) = lstm_forward(&dropped, l2)?;
                let last = h2.last().expect("non-empty sequence").clone();
                let fc = p.hidden_fc.as_ref().expect("dual has hidden linear");
                let pre = linear_forward(&last, fc)?;
                (relu_forward(&pre), Some(cache2), Some(last), Some(pre))
            }
        };
        let logits = linear_forward(&head_input, &p.head)?;
        let out = match c.variant {
            Variant::Single => logits.clone(),
            Variant::Dual => log_softmax_forward(&logits),
        };
        check_finite("model output", &out)?;
        Ok((
            out,
            ForwardCache {
                batch,
                steps,
                input_masks,
                lstm1,
                mid_masks,
                lstm2,
                fc_input,
                fc_pre,
                head_input,
                head_output: logits,
            },
        ))
    }

    /// Log-probabilities for either variant.
    pub fn log_probs(&self, output: &Array2<f64>) -> Array2<f64> {
        match self.config.variant {
            Variant::Single => log_softmax_forward(output),
            Variant::Dual => output.clone(),
        }
    }

    /// Mean negative log-likelihood over the batch.
    pub fn loss(&self, output: &Array2<f64>, labels: &[usize]) -> f64 {
        let lp = self.log_probs(output);
        labels
            .iter()
            .enumerate()
            .map(|(b, &y)| nll_loss(lp.row(b).as_slice().expect("row-major"), y))
            .sum::<f64>()
            / labels.len() as f64
    }

    /// Gradients of the mean NLL loss w.r.t. every parameter and every input
    /// step (`steps` matrices of `batch x d`).
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<(Params, Vec<Array2<f64>>)> {
        if labels.len() != cache.batch {
            return Err(Error::DimensionMismatch {
                expected: cache.batch,
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= CLASSES) {
            return Err(Error::InvalidParam(format!("label {bad} is not a class index")));
        }
        let p = &self.params;
        let mut g = Params::zeros(&self.config);
        let scale = 1.0 / cache.batch as f64;

        let mut d_logits = softmax_rows(&cache.head_output);
        for (b, &y) in labels.iter().enumerate() {
            d_logits[[b, y]] -= 1.0;
        }
        d_logits *= scale;
        check_finite("output gradient", &d_logits)?;

        general_mat_mul(1.0, &d_logits.t(), &cache.head_input, 1.0, &mut g.head.w);
        g.head.b += &d_logits.sum_axis(Axis(0));
        let d_head_in = d_logits.dot(&p.head.w);

        let steps = cache.steps;
        let mut d_h1: Vec<Option<Array2<f64>>> = vec![None; steps];
        match self.config.variant {
            Variant::Single => {
                d_h1[steps - 1] = Some(&d_head_in * &cache.mid_masks[0]);
            }
            Variant::Dual => {
                let pre = cache.fc_pre.as_ref().expect("dual cache");
                let mut d_pre = d_head_in;
                Zip::from(&mut d_pre).and(pre).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                let fc = p.hidden_fc.as_ref().expect("dual params");
                let gfc = g.hidden_fc.as_mut().expect("dual grads");
                general_mat_mul(1.0, &d_pre.t(), cache.fc_input.as_ref().expect("dual cache"), 1.0, &mut gfc.w);
                gfc.b += &d_pre.sum_axis(Axis(0));
                let d_h2_last = d_pre.dot(&fc.w);

                let mut d_h2: Vec<Option<Array2<f64>>> = vec![None; steps];
                d_h2[steps - 1] = Some(d_h2_last);
                let l2 = p.lstm2.as_ref().expect("dual params");
                let dx2 = lstm_backward(
                    cache.lstm2.as_ref().expect("dual cache"),
                    l2,
                    &d_h2,
                    g.lstm2.as_mut().expect("dual grads"),
                );
                for (t, dx) in dx2.into_iter().enumerate() {
                    d_h1[t] = Some(dx * &cache.mid_masks[t]);
                }
            }
        }
        let mut dxs = lstm_backward(&cache.lstm1, &p.lstm1, &d_h1, &mut g.lstm1);
        if self.config.variant == Variant::Single {
            for (dx, m) in dxs.iter_mut().zip(&cache.input_masks) {
                *dx *= m;
            }
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        Ok((g, dxs))
    }

    /// Probability of the bona fide class per sample, in inference mode.
    pub fn predict(&self, samples: &[ArrayView2<f64>]) -> Result<Vec<f64>> {
        // Inference draws no random numbers; the generator is never consulted.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = self.forward(samples, Mode::Infer, &mut rng)?;
        let lp = self.log_probs(&out);
        Ok(lp.column(BONAFIDE).iter().map(|v| v.exp()).collect())
    }

    /// Copy with every value rounded through `f32`.
    pub fn to_f32_precision(&self) -> Self {
        let mut m = self.clone();
        for t in m.params.tensors_mut() {
            for v in t {
                *v = *v as f32 as f64;
            }
        }
        m
    }
}
