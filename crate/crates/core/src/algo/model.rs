//! A small recurrent network in double precision: rendered screen → optional
//! convolutions → dense ReLU → stacked LSTM → policy / Q / value heads, with
//! hand-written backpropagation through time.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AlgoError, Algorithm};
use crate::dataset::DEFAULT_ACTION_VOCAB;
use crate::exec::Exec;
use crate::render::{RenderSpec, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub policy: bool,
    /// Number of Q heads of `|A|` values each; 0 disables the Q output.
    pub q_heads: usize,
    pub value: bool,
}

impl HeadSpec {
    pub fn for_algorithm(algo: Algorithm, rem_heads: usize) -> Self {
        match algo {
            Algorithm::Bc => HeadSpec { policy: true, q_heads: 0, value: false },
            Algorithm::Cql => HeadSpec { policy: false, q_heads: 1, value: false },
            Algorithm::Iql => HeadSpec { policy: true, q_heads: 1, value: true },
            Algorithm::Awac => HeadSpec { policy: true, q_heads: 1, value: false },
            Algorithm::Rem => HeadSpec { policy: false, q_heads: rem_heads, value: false },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub render: RenderSpec,
    pub conv: Vec<ConvLayer>,
    /// Width of the dense layer after the image stack.
    pub encoder_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Dropout between LSTM layers, active only in training.
    pub dropout: f64,
    pub num_actions: usize,
    pub heads: HeadSpec,
    /// Feed the previous action (one-hot) to the first LSTM layer.
    pub prev_action: bool,
}

impl ModelConfig {
    /// Full-scale defaults: full-screen render, two strided convolutions,
    /// 2048-wide two-layer LSTM.
    pub fn full_scale(algo: Algorithm, rem_heads: usize) -> Self {
        ModelConfig {
            render: RenderSpec::default(),
            conv: vec![
                ConvLayer { channels: 16, kernel: 8, stride: 4 },
                ConvLayer { channels: 32, kernel: 4, stride: 2 },
            ],
            encoder_dim: 512,
            hidden: 2048,
            layers: 2,
            dropout: 0.0,
            num_actions: DEFAULT_ACTION_VOCAB,
            heads: HeadSpec::for_algorithm(algo, rem_heads),
            prev_action: true,
        }
    }

    /// Desk-scale network on a cursor-centred crop with a dense encoder.
    pub fn desk(algo: Algorithm, rem_heads: usize, hidden: usize) -> Self {
        ModelConfig {
            render: RenderSpec::crop(9, 9),
            conv: Vec::new(),
            encoder_dim: hidden,
            hidden,
            layers: 1,
            dropout: 0.0,
            num_actions: DEFAULT_ACTION_VOCAB,
            heads: HeadSpec::for_algorithm(algo, rem_heads),
            prev_action: true,
        }
    }

    pub fn validate(&self) -> Result<(), AlgoError> {
        let bad = |m: &str| Err(AlgoError::InvalidConfig(m.to_string()));
        if self.hidden == 0 || self.layers == 0 || self.encoder_dim == 0 {
            return bad("hidden size, layer count and encoder width must be ≥ 1");
        }
        if self.num_actions == 0 || self.num_actions > 256 {
            return bad("action count must be in 1..=256");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !self.heads.policy && self.heads.q_heads == 0 && !self.heads.value {
            return bad("model has no heads");
        }
        self.render
            .validate()
            .map_err(|e| AlgoError::InvalidConfig(e.to_string()))?;
        let (mut h, mut w) = (self.render.height(), self.render.width());
        for c in &self.conv {
            if c.kernel == 0 || c.stride == 0 || c.channels == 0 || c.kernel > h || c.kernel > w {
                return bad("convolution does not fit its input");
            }
            h = (h - c.kernel) / c.stride + 1;
            w = (w - c.kernel) / c.stride + 1;
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.render.image_len()
    }

    /// `(channels, height, width)` of every image-stack activation, input first.
    fn image_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut shapes = vec![(CHANNELS, self.render.height(), self.render.width())];
        for c in &self.conv {
            let (_, h, w) = *shapes.last().unwrap();
            shapes.push((c.channels, (h - c.kernel) / c.stride + 1, (w - c.kernel) / c.stride + 1));
        }
        shapes
    }

    fn q_len(&self) -> usize {
        self.heads.q_heads * self.num_actions
    }
}

#[derive(Debug, Clone)]
struct ConvParams {
    w: Range<usize>,
    b: Range<usize>,
}

#[derive(Debug, Clone)]
struct LstmParams {
    /// `[in][4H]`
    wx: Range<usize>,
    /// `[A][4H]`, first layer with action conditioning only.
    wa: Option<Range<usize>>,
    /// `[H][4H]`
    wh: Range<usize>,
    b: Range<usize>,
    input: usize,
}

#[derive(Debug, Clone)]
struct Dense {
    /// `[in][out]`
    w: Range<usize>,
    b: Range<usize>,
}

/// Offsets of every parameter tensor inside the flat vector.
#[derive(Debug, Clone)]
struct Layout {
    shapes: Vec<(usize, usize, usize)>,
    conv: Vec<ConvParams>,
    enc: Dense,
    lstm: Vec<LstmParams>,
    policy: Option<Dense>,
    q: Option<Dense>,
    value: Option<Dense>,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut pos = 0;
        let mut take = |n: usize| {
            let r = pos..pos + n;
            pos += n;
            r
        };
        let shapes = cfg.image_shapes();
        let conv = cfg
            .conv
            .iter()
            .enumerate()
            .map(|(l, c)| ConvParams {
                w: take(c.channels * shapes[l].0 * c.kernel * c.kernel),
                b: take(c.channels),
            })
            .collect();
        let (c, h, w) = *shapes.last().unwrap();
        let enc = Dense {
            w: take(c * h * w * cfg.encoder_dim),
            b: take(cfg.encoder_dim),
        };
        let g = 4 * cfg.hidden;
        let lstm = (0..cfg.layers)
            .map(|l| {
                let input = if l == 0 { cfg.encoder_dim } else { cfg.hidden };
                LstmParams {
                    wx: take(input * g),
                    wa: (l == 0 && cfg.prev_action).then(|| take(cfg.num_actions * g)),
                    wh: take(cfg.hidden * g),
                    b: take(g),
                    input,
                }
            })
            .collect();
        let mut head = |on: bool, out: usize| {
            on.then(|| Dense {
                w: take(cfg.hidden * out),
                b: take(out),
            })
        };
        let policy = head(cfg.heads.policy, cfg.num_actions);
        let q = head(cfg.heads.q_heads > 0, cfg.q_len());
        let value = head(cfg.heads.value, 1);
        Layout {
            shapes,
            conv,
            enc,
            lstm,
            policy,
            q,
            value,
            total: pos,
        }
    }
}

/// Per-layer LSTM hidden and cell vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

/// One window of rendered observations for a single sequence.
#[derive(Debug, Clone, Copy)]
pub struct SeqInput<'a> {
    /// `[T, 3, H, W]`
    pub images: &'a [f64],
    /// `[T]`
    pub prev_actions: &'a [u8],
}

impl SeqInput<'_> {
    pub fn steps(&self) -> usize {
        self.prev_actions.len()
    }
}

/// Head outputs of one sequence over `T` steps. Absent heads have empty arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub steps: usize,
    pub num_actions: usize,
    pub q_heads: usize,
    /// `[T, A]`
    pub policy: Vec<f64>,
    /// `[T, K, A]`
    pub q: Vec<f64>,
    /// `[T]`
    pub value: Vec<f64>,
}

impl HeadOutputs {
    fn new(steps: usize, cfg: &ModelConfig) -> Self {
        let a = cfg.num_actions;
        HeadOutputs {
            steps,
            num_actions: a,
            q_heads: cfg.heads.q_heads,
            policy: if cfg.heads.policy { vec![0.0; steps * a] } else { Vec::new() },
            q: vec![0.0; steps * cfg.q_len()],
            value: if cfg.heads.value { vec![0.0; steps] } else { Vec::new() },
        }
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        HeadOutputs {
            policy: vec![0.0; self.policy.len()],
            q: vec![0.0; self.q.len()],
            value: vec![0.0; self.value.len()],
            ..*self
        }
    }

    pub fn logits(&self, t: usize) -> &[f64] {
        &self.policy[t * self.num_actions..(t + 1) * self.num_actions]
    }

    pub fn logits_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.policy[t * self.num_actions..(t + 1) * self.num_actions]
    }

    pub fn q_head(&self, t: usize, k: usize) -> &[f64] {
        let i = (t * self.q_heads + k) * self.num_actions;
        &self.q[i..i + self.num_actions]
    }

    pub fn q_head_mut(&mut self, t: usize, k: usize) -> &mut [f64] {
        let i = (t * self.q_heads + k) * self.num_actions;
        &mut self.q[i..i + self.num_actions]
    }

    /// Unweighted mean over Q heads at step `t`.
    pub fn mean_q(&self, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions];
        for k in 0..self.q_heads {
            for (o, v) in out.iter_mut().zip(self.q_head(t, k)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.q_heads.max(1) as f64);
        out
    }

    fn append(&mut self, other: &HeadOutputs) {
        self.steps += other.steps;
        self.policy.extend_from_slice(&other.policy);
        self.q.extend_from_slice(&other.q);
        self.value.extend_from_slice(&other.value);
    }
}

/// What the training loop and the losses need from a model.
pub trait ModelContract: Clone + Send + Sync {
    type Trace: Send + Sync;

    fn config(&self) -> &ModelConfig;
    fn initial_state(&self) -> RecurrentState;
    /// Inference forward over a window, threading the recurrent state.
    fn forward(&self, input: SeqInput<'_>, state: &RecurrentState) -> (HeadOutputs, RecurrentState);
    /// Forward that keeps activations for [`ModelContract::backward`]. A
    /// `dropout_seed` enables dropout masks drawn from that seed.
    fn forward_train(&self, input: SeqInput<'_>, state: &RecurrentState, dropout_seed: Option<u64>) -> (HeadOutputs, Self::Trace);
    /// Adds the parameter gradient for head-output gradient `d_out` into `grad`.
    fn backward(&self, input: SeqInput<'_>, trace: &Self::Trace, d_out: &HeadOutputs, grad: &mut [f64]);
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
}

/// The concrete network.
#[derive(Debug, Clone)]
pub struct RecurrentNet {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct LstmStep {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    /// Scaled dropout mask applied to this layer's output, if any.
    mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
struct StepTrace {
    /// Post-ReLU output of each convolution.
    conv: Vec<Vec<f64>>,
    enc: Vec<f64>,
    lstm: Vec<LstmStep>,
}

/// Activations kept by [`RecurrentNet::forward_train`].
#[derive(Debug, Clone, Default)]
pub struct NetTrace {
    steps: Vec<StepTrace>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y += x * w[row]` for every row of an in-major `[rows][y.len()]` matrix.
#[inline]
fn accumulate_rows(y: &mut [f64], x: &[f64], w: &[f64]) {
    let n = y.len();
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            for (yk, wk) in y.iter_mut().zip(&w[j * n..(j + 1) * n]) {
                *yk += xj * wk;
            }
        }
    }
}

/// `dw[row] += x[row] * dy` and `dx[row] = w[row] · dy` (when `dx` is given).
#[inline]
fn backprop_rows(dy: &[f64], x: &[f64], w: &[f64], dw: &mut [f64], dx: Option<&mut [f64]>) {
    let n = dy.len();
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            for (g, d) in dw[j * n..(j + 1) * n].iter_mut().zip(dy) {
                *g += xj * d;
            }
        }
    }
    if let Some(dx) = dx {
        for (j, dxj) in dx.iter_mut().enumerate() {
            *dxj += w[j * n..(j + 1) * n].iter().zip(dy).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

fn conv_forward(input: &[f64], in_shape: (usize, usize, usize), out_shape: (usize, usize, usize), spec: &ConvLayer, w: &[f64], b: &[f64]) -> Vec<f64> {
    let (ic, ih, iw) = in_shape;
    let (oc, oh, ow) = out_shape;
    let k = spec.kernel;
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = b[o];
                for c in 0..ic {
                    for ky in 0..k {
                        let row = (c * ih + y * spec.stride + ky) * iw + x * spec.stride;
                        let wrow = ((o * ic + c) * k + ky) * k;
                        for kx in 0..k {
                            acc += w[wrow + kx] * input[row + kx];
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc.max(0.0);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    output: &[f64],
    d_out: &[f64],
    in_shape: (usize, usize, usize),
    out_shape: (usize, usize, usize),
    spec: &ConvLayer,
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut d_in: Option<&mut [f64]>,
) {
    let (ic, ih, iw) = in_shape;
    let (oc, oh, ow) = out_shape;
    let k = spec.kernel;
    for o in 0..oc {
        for y in 0..oh {
            for x in 0..ow {
                let idx = (o * oh + y) * ow + x;
                if output[idx] <= 0.0 {
                    continue;
                }
                let d = d_out[idx];
                db[o] += d;
                for c in 0..ic {
                    for ky in 0..k {
                        let row = (c * ih + y * spec.stride + ky) * iw + x * spec.stride;
                        let wrow = ((o * ic + c) * k + ky) * k;
                        for kx in 0..k {
                            dw[wrow + kx] += d * input[row + kx];
                            if let Some(di) = d_in.as_deref_mut() {
                                di[row + kx] += d * w[wrow + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl RecurrentNet {
    /// Fresh network with uniform `±1/√fan_in` weights, zero biases and a
    /// forget-gate bias of 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, AlgoError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |r: &Range<usize>, fan_in: usize, p: &mut [f64]| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for v in &mut p[r.clone()] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        for (l, c) in config.conv.iter().enumerate() {
            let fan = layout.shapes[l].0 * c.kernel * c.kernel;
            fill(&layout.conv[l].w, fan, &mut params);
        }
        let (c, h, w) = *layout.shapes.last().unwrap();
        fill(&layout.enc.w, c * h * w, &mut params);
        for lp in &layout.lstm {
            let fan = lp.input + config.hidden;
            fill(&lp.wx, fan, &mut params);
            if let Some(wa) = &lp.wa {
                fill(wa, fan, &mut params);
            }
            fill(&lp.wh, fan, &mut params);
            let hh = config.hidden;
            params[lp.b.start + hh..lp.b.start + 2 * hh].iter_mut().for_each(|v| *v = 1.0);
        }
        for d in [&layout.policy, &layout.q, &layout.value].into_iter().flatten() {
            fill(&d.w, config.hidden, &mut params);
        }
        Ok(RecurrentNet { config, layout, params })
    }

    /// Rebuilds a network from a parameter vector of the right length.
    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self, AlgoError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(AlgoError::InvalidConfig(format!(
                "parameter vector has {} values, model needs {}",
                params.len(),
                layout.total
            )));
        }
        Ok(RecurrentNet { config, layout, params })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    fn run(&self, input: SeqInput<'_>, state: &RecurrentState, dropout_seed: Option<u64>, mut trace: Option<&mut NetTrace>) -> (HeadOutputs, RecurrentState) {
        let cfg = &self.config;
        let p = &self.params;
        let ly = &self.layout;
        let t_len = input.steps();
        let img_len = cfg.input_len();
        assert_eq!(input.images.len(), t_len * img_len, "image buffer does not match window length");
        let hh = cfg.hidden;
        let a = cfg.num_actions;
        let mut out = HeadOutputs::new(t_len, cfg);
        let mut st = state.clone();
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);

        for t in 0..t_len {
            let image = &input.images[t * img_len..(t + 1) * img_len];
            let mut conv_acts: Vec<Vec<f64>> = Vec::with_capacity(cfg.conv.len());
            for (l, spec) in cfg.conv.iter().enumerate() {
                let src = if l == 0 { image } else { &conv_acts[l - 1][..] };
                let o = conv_forward(src, ly.shapes[l], ly.shapes[l + 1], spec, &p[ly.conv[l].w.clone()], &p[ly.conv[l].b.clone()]);
                conv_acts.push(o);
            }
            let flat = conv_acts.last().map_or(image, |v| &v[..]);
            let mut enc = p[ly.enc.b.clone()].to_vec();
            accumulate_rows(&mut enc, flat, &p[ly.enc.w.clone()]);
            enc.iter_mut().for_each(|v| *v = v.max(0.0));

            let mut lstm_steps = Vec::with_capacity(cfg.layers);
            let mut x = enc.clone();
            for (l, lp) in ly.lstm.iter().enumerate() {
                let mut z = p[lp.b.clone()].to_vec();
                accumulate_rows(&mut z, &x, &p[lp.wx.clone()]);
                if let Some(wa) = &lp.wa {
                    let act = (input.prev_actions[t] as usize).min(a - 1);
                    let row = &p[wa.start + act * 4 * hh..wa.start + (act + 1) * 4 * hh];
                    z.iter_mut().zip(row).for_each(|(zi, wi)| *zi += wi);
                }
                accumulate_rows(&mut z, &st.h[l], &p[lp.wh.clone()]);
                let i: Vec<f64> = z[..hh].iter().map(|&v| sigmoid(v)).collect();
                let f: Vec<f64> = z[hh..2 * hh].iter().map(|&v| sigmoid(v)).collect();
                let g: Vec<f64> = z[2 * hh..3 * hh].iter().map(|&v| v.tanh()).collect();
                let o: Vec<f64> = z[3 * hh..].iter().map(|&v| sigmoid(v)).collect();
                let c: Vec<f64> = (0..hh).map(|k| f[k] * st.c[l][k] + i[k] * g[k]).collect();
                let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
                let h: Vec<f64> = (0..hh).map(|k| o[k] * tanh_c[k]).collect();
                let mask = match rng.as_mut() {
                    Some(r) if cfg.dropout > 0.0 && l + 1 < cfg.layers => {
                        let keep = 1.0 - cfg.dropout;
                        Some((0..hh).map(|_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect::<Vec<f64>>())
                    }
                    _ => None,
                };
                let next_x = match &mask {
                    Some(m) => h.iter().zip(m).map(|(a, b)| a * b).collect(),
                    None => h.clone(),
                };
                if trace.is_some() {
                    lstm_steps.push(LstmStep {
                        input: std::mem::take(&mut x),
                        h_prev: std::mem::replace(&mut st.h[l], h),
                        c_prev: std::mem::replace(&mut st.c[l], c),
                        i,
                        f,
                        g,
                        o,
                        tanh_c,
                        mask,
                    });
                } else {
                    st.h[l] = h;
                    st.c[l] = c;
                }
                x = next_x;
            }

            let top = &st.h[cfg.layers - 1];
            if let Some(d) = &ly.policy {
                let y = out.logits_mut(t);
                y.copy_from_slice(&p[d.b.clone()]);
                accumulate_rows(y, top, &p[d.w.clone()]);
            }
            if let Some(d) = &ly.q {
                let n = cfg.q_len();
                let y = &mut out.q[t * n..(t + 1) * n];
                y.copy_from_slice(&p[d.b.clone()]);
                accumulate_rows(y, top, &p[d.w.clone()]);
            }
            if let Some(d) = &ly.value {
                let mut y = [p[d.b.start]];
                accumulate_rows(&mut y, top, &p[d.w.clone()]);
                out.value[t] = y[0];
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.steps.push(StepTrace {
                    conv: conv_acts,
                    enc,
                    lstm: lstm_steps,
                });
            }
        }
        (out, st)
    }

    fn backprop(&self, input: SeqInput<'_>, trace: &NetTrace, d_out: &HeadOutputs, grad: &mut [f64]) {
        let cfg = &self.config;
        let p = &self.params;
        let ly = &self.layout;
        let hh = cfg.hidden;
        let g4 = 4 * hh;
        let img_len = cfg.input_len();
        let nl = cfg.layers;
        let mut dh_next = vec![vec![0.0; hh]; nl];
        let mut dc_next = vec![vec![0.0; hh]; nl];

        for t in (0..trace.steps.len()).rev() {
            let st = &trace.steps[t];
            let h_top: Vec<f64> = {
                let s = &st.lstm[nl - 1];
                (0..hh).map(|k| s.o[k] * s.tanh_c[k]).collect()
            };
            let mut dh_above = vec![0.0; hh];
            if let Some(d) = &ly.policy {
                let dy = d_out.logits(t);
                backprop_rows(dy, &h_top, &p[d.w.clone()], &mut grad[d.w.clone()], Some(&mut dh_above));
                grad[d.b.clone()].iter_mut().zip(dy).for_each(|(g, v)| *g += v);
            }
            if let Some(d) = &ly.q {
                let n = cfg.q_len();
                let dy = &d_out.q[t * n..(t + 1) * n];
                backprop_rows(dy, &h_top, &p[d.w.clone()], &mut grad[d.w.clone()], Some(&mut dh_above));
                grad[d.b.clone()].iter_mut().zip(dy).for_each(|(g, v)| *g += v);
            }
            if let Some(d) = &ly.value {
                let dy = [d_out.value[t]];
                backprop_rows(&dy, &h_top, &p[d.w.clone()], &mut grad[d.w.clone()], Some(&mut dh_above));
                grad[d.b.start] += dy[0];
            }

            for l in (0..nl).rev() {
                let s = &st.lstm[l];
                let lp = &ly.lstm[l];
                let mut dz = vec![0.0; g4];
                let mut dc_prev = vec![0.0; hh];
                for k in 0..hh {
                    let dh = dh_above[k] + dh_next[l][k];
                    let d_o = dh * s.tanh_c[k];
                    let dc = dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]) + dc_next[l][k];
                    let di = dc * s.g[k];
                    let dg = dc * s.i[k];
                    let df = dc * s.c_prev[k];
                    dc_prev[k] = dc * s.f[k];
                    dz[k] = di * s.i[k] * (1.0 - s.i[k]);
                    dz[hh + k] = df * s.f[k] * (1.0 - s.f[k]);
                    dz[2 * hh + k] = dg * (1.0 - s.g[k] * s.g[k]);
                    dz[3 * hh + k] = d_o * s.o[k] * (1.0 - s.o[k]);
                }
                grad[lp.b.clone()].iter_mut().zip(&dz).for_each(|(g, v)| *g += v);
                let mut dx = vec![0.0; lp.input];
                backprop_rows(&dz, &s.input, &p[lp.wx.clone()], &mut grad[lp.wx.clone()], Some(&mut dx));
                if let Some(wa) = &lp.wa {
                    let act = (input.prev_actions[t] as usize).min(cfg.num_actions - 1);
                    let r = wa.start + act * g4..wa.start + (act + 1) * g4;
                    grad[r].iter_mut().zip(&dz).for_each(|(g, v)| *g += v);
                }
                let mut dh_prev = vec![0.0; hh];
                backprop_rows(&dz, &s.h_prev, &p[lp.wh.clone()], &mut grad[lp.wh.clone()], Some(&mut dh_prev));
                dh_next[l] = dh_prev;
                dc_next[l] = dc_prev;
                if l > 0 {
                    // The layer below fed this one through its dropout mask.
                    dh_above = match &st.lstm[l - 1].mask {
                        Some(m) => dx.iter().zip(m).map(|(a, b)| a * b).collect(),
                        None => dx,
                    };
                } else {
                    dh_above = dx;
                }
            }

            // dh_above now holds the gradient w.r.t. the encoder output.
            let d_enc: Vec<f64> = dh_above
                .iter()
                .zip(&st.enc)
                .map(|(d, e)| if *e > 0.0 { *d } else { 0.0 })
                .collect();
            grad[ly.enc.b.clone()].iter_mut().zip(&d_enc).for_each(|(g, v)| *g += v);
            let image = &input.images[t * img_len..(t + 1) * img_len];
            let flat = st.conv.last().map_or(image, |v| &v[..]);
            let need_dflat = !cfg.conv.is_empty();
            let mut d_flat = vec![0.0; if need_dflat { flat.len() } else { 0 }];
            backprop_rows(&d_enc, flat, &p[ly.enc.w.clone()], &mut grad[ly.enc.w.clone()], need_dflat.then_some(&mut d_flat[..]));
            for l in (0..cfg.conv.len()).rev() {
                let src = if l == 0 { image } else { &st.conv[l - 1][..] };
                let mut d_src = if l > 0 { vec![0.0; src.len()] } else { Vec::new() };
                let cp = &ly.conv[l];
                let (gw, gb) = {
                    // Weight and bias ranges are adjacent, w first.
                    let (a, b) = grad[cp.w.start..cp.b.end].split_at_mut(cp.w.len());
                    (a, b)
                };
                conv_backward(
                    src,
                    &st.conv[l],
                    &d_flat,
                    ly.shapes[l],
                    ly.shapes[l + 1],
                    &cfg.conv[l],
                    &p[cp.w.clone()],
                    gw,
                    gb,
                    (l > 0).then_some(&mut d_src[..]),
                );
                d_flat = d_src;
            }
        }
    }
}

impl ModelContract for RecurrentNet {
    type Trace = NetTrace;

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn initial_state(&self) -> RecurrentState {
        RecurrentState {
            h: vec![vec![0.0; self.config.hidden]; self.config.layers],
            c: vec![vec![0.0; self.config.hidden]; self.config.layers],
        }
    }

    fn forward(&self, input: SeqInput<'_>, state: &RecurrentState) -> (HeadOutputs, RecurrentState) {
        self.run(input, state, None, None)
    }

    fn forward_train(&self, input: SeqInput<'_>, state: &RecurrentState, dropout_seed: Option<u64>) -> (HeadOutputs, NetTrace) {
        let mut trace = NetTrace::default();
        let (out, _) = self.run(input, state, dropout_seed, Some(&mut trace));
        (out, trace)
    }

    fn backward(&self, input: SeqInput<'_>, trace: &NetTrace, d_out: &HeadOutputs, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        self.backprop(input, trace, d_out, grad)
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

/// Forward over `L + 1`-step windows for every sequence, zero initial state.
pub fn forward_batch<M: ModelContract>(model: &M, inputs: &[SeqInput<'_>], exec: Exec) -> Vec<HeadOutputs> {
    let s0 = model.initial_state();
    exec.map_slice(inputs, |x| model.forward(*x, &s0).0)
}

/// Forward with traces, then backward, returning the summed parameter
/// gradient. Per-sequence gradients are reduced in sequence order, so the
/// result does not depend on `exec`.
pub fn loss_gradient<M, F>(model: &M, inputs: &[SeqInput<'_>], dropout_seeds: Option<&[u64]>, exec: Exec, loss: F) -> (Vec<f64>, Vec<HeadOutputs>, Vec<HeadOutputs>)
where
    M: ModelContract,
    F: FnOnce(&[HeadOutputs]) -> Vec<HeadOutputs>,
{
    let s0 = model.initial_state();
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let fwd = exec.map_slice(&idx, |&b| model.forward_train(inputs[b], &s0, dropout_seeds.map(|s| s[b])));
    let (outs, traces): (Vec<_>, Vec<_>) = fwd.into_iter().unzip();
    let d_outs = loss(&outs);
    let n = model.params().len();
    let mut total = vec![0.0; n];
    // Bounded chunks keep peak memory at a few gradient vectors.
    for chunk in idx.chunks(8) {
        let grads = exec.map_slice(chunk, |&b| {
            let mut g = vec![0.0; n];
            model.backward(inputs[b], &traces[b], &d_outs[b], &mut g);
            g
        });
        for g in grads {
            total.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
        }
    }
    (total, outs, d_outs)
}

/// Chains single-step forwards; used to check state threading.
pub fn forward_stepwise<M: ModelContract>(model: &M, input: SeqInput<'_>, state: &RecurrentState) -> (HeadOutputs, RecurrentState) {
    let img = model.config().input_len();
    let mut st = state.clone();
    let mut all: Option<HeadOutputs> = None;
    for t in 0..input.steps() {
        let step = SeqInput {
            images: &input.images[t * img..(t + 1) * img],
            prev_actions: &input.prev_actions[t..t + 1],
        };
        let (o, s) = model.forward(step, &st);
        st = s;
        match all.as_mut() {
            Some(a) => a.append(&o),
            None => all = Some(o),
        }
    }
    (all.expect("window has at least one step"), st)
}
