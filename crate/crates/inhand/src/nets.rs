//! Policy, value, and encoder networks with hand-written reverse-mode
//! gradients.
//!
//! Everything is dense `f64` on the CPU: an ELU multilayer perceptron
//! trunk for policy and value, a small perceptron encoding privileged
//! state into a latent, and a causal temporal-convolution encoder that
//! reconstructs the latent from an observation history. Gradients are
//! computed layer by layer and validated against central finite
//! differences (`fd_check`).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::hand::NUM_JOINTS;
use crate::simcore::{OBS_DIM, PRIV_DIM};

/// Observation frames fed to the policy (l1 + 1).
pub const L1_WINDOW: usize = 3;
/// Observation frames fed to the student encoder (l2 + 1).
pub const L2_WINDOW: usize = 30;
/// Latent dimension shared by the teacher and student encoders.
pub const LATENT_DIM: usize = 16;
/// Action dimension: one position offset per joint.
pub const ACTION_DIM: usize = NUM_JOINTS;

/// Policy/value trunk widths.
pub const TRUNK_HIDDEN: [usize; 4] = [512, 256, 128, 64];
/// Teacher encoder widths.
pub const ENCODER_HIDDEN: [usize; 2] = [256, 64];

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// Flat-parameter access shared by every network; the read/write order is
/// fixed and matches the gradient layout produced by the backward passes.
pub trait Parameterized {
    fn param_count(&self) -> usize;
    fn read_params(&self, out: &mut Vec<f64>);
    fn write_params(&mut self, src: &[f64]);

    fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        self.read_params(&mut v);
        v
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// ELU derivative written in terms of the activation value: 1 for the
/// linear branch, y + 1 for the exponential branch.
fn elu_grad_from_output(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

fn assert_finite(m: &DMatrix<f64>, what: &str) {
    assert!(
        m.iter().all(|v| v.is_finite()),
        "non-finite {what} in network forward pass"
    );
}

/// Dense layer `y = x W^T + b` over row-major batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        // He-style scaling keeps ELU activations in range at depth
        let scale = (2.0 / input as f64).sqrt();
        let w = DMatrix::from_fn(output, input, |_, _| {
            scale * (rng.gen::<f64>() * 2.0 - 1.0)
        });
        Self {
            w,
            b: DVector::zeros(output),
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.w.transpose();
        for mut row in y.row_iter_mut() {
            row += self.b.transpose();
        }
        y
    }

    /// Returns the input gradient and appends (dw, db) onto `grads` in
    /// parameter order.
    pub fn backward(
        &self,
        x: &DMatrix<f64>,
        dy: &DMatrix<f64>,
        grads: &mut [f64],
    ) -> DMatrix<f64> {
        let dw = dy.transpose() * x;
        let db = dy.row_sum();
        let (wn, bn) = (self.w.len(), self.b.len());
        for (g, v) in grads[..wn].iter_mut().zip(dw.as_slice()) {
            *g += v;
        }
        for (g, v) in grads[wn..wn + bn].iter_mut().zip(db.iter()) {
            *g += v;
        }
        dy * &self.w
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn read(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w.as_slice());
        out.extend_from_slice(self.b.as_slice());
    }

    fn write(&mut self, src: &[f64]) {
        let wn = self.w.len();
        let bn = self.b.len();
        self.w.as_mut_slice().copy_from_slice(&src[..wn]);
        self.b.as_mut_slice().copy_from_slice(&src[wn..wn + bn]);
    }
}

/// Multilayer perceptron: ELU on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-layer activations retained for the backward pass: `inputs[i]` is
/// what layer `i` consumed (post-activation of the previous layer).
pub struct MlpCache {
    inputs: Vec<DMatrix<f64>>,
    output: DMatrix<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }
}

impl Mlp {
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2);
        let layers = sizes
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(x).output
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> MlpCache {
        assert_finite(x, "input");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            cur = layer.forward(&cur);
            if i + 1 < self.layers.len() {
                cur.apply(|v| *v = elu(*v));
            }
        }
        MlpCache { inputs, output: cur }
    }

    /// Backpropagate `dy` through the cached forward pass; parameter
    /// gradients are accumulated into `grads` (layer order, w then b) and
    /// the gradient with respect to the network input is returned.
    pub fn backward(&self, cache: &MlpCache, dy: &DMatrix<f64>, grads: &mut [f64]) -> DMatrix<f64> {
        let mut d = dy.clone();
        let mut offset = self.param_count();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                // the stored input of layer i+1 is this layer's activation
                let y = &cache.inputs[i + 1];
                d.zip_apply(y, |dv, yv| *dv *= elu_grad_from_output(yv));
            }
            offset -= layer.param_count();
            d = layer.backward(
                &cache.inputs[i],
                &d,
                &mut grads[offset..offset + layer.param_count()],
            );
        }
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }
}

impl Parameterized for Mlp {
    fn param_count(&self) -> usize {
        Mlp::param_count(self)
    }

    fn read_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            l.read(out);
        }
    }

    fn write_params(&mut self, src: &[f64]) {
        let mut offset = 0;
        for l in &mut self.layers {
            let n = l.param_count();
            l.write(&src[offset..offset + n]);
            offset += n;
        }
    }
}

/// Gaussian policy: ELU trunk to an action mean plus a state-independent
/// learned log standard deviation, clamped to [-5, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub trunk: Mlp,
    pub log_std_raw: DVector<f64>,
}

impl PolicyNet {
    pub fn input_dim() -> usize {
        LATENT_DIM + L1_WINDOW * OBS_DIM
    }

    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut sizes = vec![Self::input_dim()];
        sizes.extend_from_slice(&TRUNK_HIDDEN);
        sizes.push(ACTION_DIM);
        Self {
            trunk: Mlp::new(&sizes, rng),
            log_std_raw: DVector::from_element(ACTION_DIM, -0.5),
        }
    }

    pub fn log_std(&self) -> DVector<f64> {
        self.log_std_raw.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        (self.trunk.forward(x), self.log_std())
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> (MlpCache, DVector<f64>) {
        (self.trunk.forward_cached(x), self.log_std())
    }

    /// Backward through the trunk and the log-std parameter; `d_log_std`
    /// is masked where the clamp is active. Returns the input gradient.
    pub fn backward(
        &self,
        cache: &MlpCache,
        d_mean: &DMatrix<f64>,
        d_log_std: &DVector<f64>,
        grads: &mut [f64],
    ) -> DMatrix<f64> {
        let trunk_n = self.trunk.param_count();
        let dx = self.trunk.backward(cache, d_mean, &mut grads[..trunk_n]);
        for k in 0..ACTION_DIM {
            let raw = self.log_std_raw[k];
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                grads[trunk_n + k] += d_log_std[k];
            }
        }
        dx
    }
}

impl Parameterized for PolicyNet {
    fn param_count(&self) -> usize {
        self.trunk.param_count() + ACTION_DIM
    }

    fn read_params(&self, out: &mut Vec<f64>) {
        self.trunk.read_params(out);
        out.extend_from_slice(self.log_std_raw.as_slice());
    }

    fn write_params(&mut self, src: &[f64]) {
        let n = self.trunk.param_count();
        self.trunk.write_params(&src[..n]);
        self.log_std_raw
            .as_mut_slice()
            .copy_from_slice(&src[n..n + ACTION_DIM]);
    }
}

/// Critic with its own trunk; scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub trunk: Mlp,
}

impl ValueNet {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut sizes = vec![PolicyNet::input_dim()];
        sizes.extend_from_slice(&TRUNK_HIDDEN);
        sizes.push(1);
        Self {
            trunk: Mlp::new(&sizes, rng),
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_column_slice(self.trunk.forward(x).column(0).as_slice())
    }
}

impl Parameterized for ValueNet {
    fn param_count(&self) -> usize {
        self.trunk.param_count()
    }

    fn read_params(&self, out: &mut Vec<f64>) {
        self.trunk.read_params(out);
    }

    fn write_params(&mut self, src: &[f64]) {
        self.trunk.write_params(src);
    }
}

/// Privileged-state encoder: deterministic perceptron to the latent.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEncoder {
    pub mlp: Mlp,
}

impl TeacherEncoder {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut sizes = vec![PRIV_DIM];
        sizes.extend_from_slice(&ENCODER_HIDDEN);
        sizes.push(LATENT_DIM);
        Self {
            mlp: Mlp::new(&sizes, rng),
        }
    }

    pub fn encode(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        self.mlp.forward(h)
    }
}

impl Parameterized for TeacherEncoder {
    fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    fn read_params(&self, out: &mut Vec<f64>) {
        self.mlp.read_params(out);
    }

    fn write_params(&mut self, src: &[f64]) {
        self.mlp.write_params(src);
    }
}

/// Causal 1-D convolution along time with left zero padding; weight
/// column layout is tap-major (`col = tap * in_ch + channel`).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub in_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv1d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_ch * kernel;
        let scale = (2.0 / fan_in as f64).sqrt();
        Self {
            w: DMatrix::from_fn(out_ch, fan_in, |_, _| scale * (rng.gen::<f64>() * 2.0 - 1.0)),
            b: DVector::zeros(out_ch),
            in_ch,
            kernel,
            stride,
        }
    }

    pub fn out_len(&self, t_in: usize) -> usize {
        t_in.div_ceil(self.stride)
    }

    /// Unfold the (time x in_ch) signal into the im2col matrix whose row
    /// `t` concatenates the `kernel` causal frames ending at `t * stride`.
    fn unfold(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let t_in = x.nrows() as isize;
        let t_out = self.out_len(x.nrows());
        let mut u = DMatrix::zeros(t_out, self.in_ch * self.kernel);
        for t in 0..t_out {
            let end = (t * self.stride) as isize;
            for j in 0..self.kernel {
                let src = end - (self.kernel - 1 - j) as isize;
                if src >= 0 && src < t_in {
                    for c in 0..self.in_ch {
                        u[(t, j * self.in_ch + c)] = x[(src as usize, c)];
                    }
                }
            }
        }
        u
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.ncols(), self.in_ch, "channel mismatch");
        let u = self.unfold(x);
        let mut y = u * self.w.transpose();
        for mut row in y.row_iter_mut() {
            row += self.b.transpose();
        }
        y
    }

    /// Backward pass; mirrors `forward` through the unfold scatter.
    fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grads: &mut [f64]) -> DMatrix<f64> {
        let u = self.unfold(x);
        let dw = dy.transpose() * &u;
        let db = dy.row_sum();
        let wn = self.w.len();
        for (g, v) in grads[..wn].iter_mut().zip(dw.as_slice()) {
            *g += v;
        }
        for (g, v) in grads[wn..wn + self.b.len()].iter_mut().zip(db.iter()) {
            *g += v;
        }
        // fold du back onto the input timeline
        let du = dy * &self.w;
        let mut dx = DMatrix::zeros(x.nrows(), x.ncols());
        let t_in = x.nrows() as isize;
        for t in 0..du.nrows() {
            let end = (t * self.stride) as isize;
            for j in 0..self.kernel {
                let src = end - (self.kernel - 1 - j) as isize;
                if src >= 0 && src < t_in {
                    for c in 0..self.in_ch {
                        dx[(src as usize, c)] += du[(t, j * self.in_ch + c)];
                    }
                }
            }
        }
        dx
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn read(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w.as_slice());
        out.extend_from_slice(self.b.as_slice());
    }

    fn write(&mut self, src: &[f64]) {
        let wn = self.w.len();
        let bn = self.b.len();
        self.w.as_mut_slice().copy_from_slice(&src[..wn]);
        self.b.as_mut_slice().copy_from_slice(&src[wn..wn + bn]);
    }
}

/// Observation-history encoder: three causal convolutions (channels
/// 32/32/32, kernels 5/3/3, strides 2/1/1) with ELU, then a linear head on
/// the final time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentEncoder {
    pub convs: Vec<Conv1d>,
    pub head: Linear,
}

pub struct StudentCache {
    /// Per sample: input to each conv layer (post-activation of previous).
    conv_inputs: Vec<Vec<DMatrix<f64>>>,
    /// Per sample: final conv activations (pre-head, post-ELU).
    features: Vec<DMatrix<f64>>,
    output: DMatrix<f64>,
}

impl StudentCache {
    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }
}

impl StudentEncoder {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let convs = vec![
            Conv1d::new(OBS_DIM, 32, 5, 2, rng),
            Conv1d::new(32, 32, 3, 1, rng),
            Conv1d::new(32, 32, 3, 1, rng),
        ];
        Self {
            convs,
            head: Linear::new(32, LATENT_DIM, rng),
        }
    }

    /// One observation window as a (time x OBS_DIM) matrix; episode starts
    /// are zero-padded by the caller.
    pub fn window_matrix(frames: &[Vec<f64>]) -> crate::Result<DMatrix<f64>> {
        if frames.len() != L2_WINDOW {
            return Err(crate::InhandError::Contract(format!(
                "student window must hold {} frames, got {}",
                L2_WINDOW,
                frames.len()
            )));
        }
        for f in frames {
            if f.len() != OBS_DIM {
                return Err(crate::InhandError::Contract(format!(
                    "observation frame must have {} entries, got {}",
                    OBS_DIM,
                    f.len()
                )));
            }
        }
        Ok(DMatrix::from_fn(L2_WINDOW, OBS_DIM, |t, c| frames[t][c]))
    }

    pub fn encode_batch(&self, windows: &[DMatrix<f64>]) -> DMatrix<f64> {
        self.forward_cached(windows).output
    }

    pub fn encode(&self, frames: &[Vec<f64>]) -> crate::Result<DVector<f64>> {
        let m = Self::window_matrix(frames)?;
        let z = self.encode_batch(std::slice::from_ref(&m));
        Ok(DVector::from_column_slice(z.row(0).transpose().as_slice()))
    }

    pub fn forward_cached(&self, windows: &[DMatrix<f64>]) -> StudentCache {
        let mut conv_inputs = Vec::with_capacity(windows.len());
        let mut features = Vec::with_capacity(windows.len());
        let mut out = DMatrix::zeros(windows.len(), LATENT_DIM);
        for (s, w) in windows.iter().enumerate() {
            assert_eq!(w.nrows(), L2_WINDOW, "student window must hold 30 frames");
            assert_finite(w, "student input");
            let mut inputs = Vec::with_capacity(self.convs.len());
            let mut cur = w.clone();
            for conv in &self.convs {
                inputs.push(cur.clone());
                cur = conv.forward(&cur);
                cur.apply(|v| *v = elu(*v));
            }
            let last = DMatrix::from_fn(1, cur.ncols(), |_, c| cur[(cur.nrows() - 1, c)]);
            let z = self.head.forward(&last);
            out.row_mut(s).copy_from(&z.row(0));
            conv_inputs.push(inputs);
            features.push(cur);
        }
        StudentCache {
            conv_inputs,
            features,
            output: out,
        }
    }

    /// Accumulate parameter gradients for `d_out` (batch x LATENT_DIM).
    pub fn backward(&self, cache: &StudentCache, d_out: &DMatrix<f64>, grads: &mut [f64]) {
        let conv_n: usize = self.convs.iter().map(Conv1d::param_count).sum();
        for s in 0..cache.features.len() {
            let feats = &cache.features[s];
            let dz = DMatrix::from_fn(1, LATENT_DIM, |_, c| d_out[(s, c)]);
            let last = DMatrix::from_fn(1, feats.ncols(), |_, c| feats[(feats.nrows() - 1, c)]);
            let d_last = self
                .head
                .backward(&last, &dz, &mut grads[conv_n..conv_n + self.head.param_count()]);
            // gradient flows only into the final time step of the last conv
            let mut d = DMatrix::zeros(feats.nrows(), feats.ncols());
            d.row_mut(feats.nrows() - 1).copy_from(&d_last.row(0));
            let mut offset = conv_n;
            for (i, conv) in self.convs.iter().enumerate().rev() {
                // undo ELU using the stored activation
                let y = if i + 1 < self.convs.len() {
                    &cache.conv_inputs[s][i + 1]
                } else {
                    feats
                };
                d.zip_apply(y, |dv, yv| *dv *= elu_grad_from_output(yv));
                offset -= conv.param_count();
                d = conv.backward(
                    &cache.conv_inputs[s][i],
                    &d,
                    &mut grads[offset..offset + conv.param_count()],
                );
            }
        }
    }
}

impl Parameterized for StudentEncoder {
    fn param_count(&self) -> usize {
        self.convs.iter().map(Conv1d::param_count).sum::<usize>() + self.head.param_count()
    }

    fn read_params(&self, out: &mut Vec<f64>) {
        for c in &self.convs {
            c.read(out);
        }
        self.head.read(out);
    }

    fn write_params(&mut self, src: &[f64]) {
        let mut offset = 0;
        for c in &mut self.convs {
            let n = c.param_count();
            c.write(&src[offset..offset + n]);
            offset += n;
        }
        self.head.write(&src[offset..offset + self.head.param_count()]);
    }
}

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Central-difference gradient audit: perturb `probes` randomly chosen
/// parameters by +-epsilon and compare the measured slope against the
/// provided analytic gradient. Returns the maximum relative error.
pub fn fd_check<N, F>(
    net: &mut N,
    analytic: &[f64],
    mut loss: F,
    probes: usize,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> f64
where
    N: Parameterized,
    F: FnMut(&N) -> f64,
{
    let mut params = net.params();
    assert_eq!(params.len(), analytic.len());
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let i = rng.gen_range(0..params.len());
        let orig = params[i];
        params[i] = orig + epsilon;
        net.write_params(&params);
        let up = loss(net);
        params[i] = orig - epsilon;
        net.write_params(&params);
        let down = loss(net);
        params[i] = orig;
        net.write_params(&params);
        let fd = (up - down) / (2.0 * epsilon);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max((fd - analytic[i]).abs() / denom);
    }
    worst
}
