//! Small quantile predictors with hand-written backpropagation.
//!
//! Every net reads a covariate row whose slot 0 is the intercept (`x0 = 1`).
//! Parameters live in one flat vector per net so the optimizer, gradient
//! clipping and serialization can treat all families alike.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output nonlinearity of a single neuron or hidden unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Elu,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp() - 1.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitScheme {
    Ones,
    StandardNormal { seed: u64 },
}

/// Single neuron `eta(x . beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQuantileNet {
    pub weights: Vec<f64>,
    pub activation: Activation,
}

/// Identity neuron trained with inverted input dropout and weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedLinearNet {
    pub weights: Vec<f64>,
    pub dropout_rate: f64,
    pub l2_coeff: f64,
}

/// One LSTM cell unrolled over the lag window, followed by a linear readout
/// of the last hidden state.
///
/// Parameter layout (gate order input, forget, cell, output):
/// `w_ih[4H] | w_hh[4H x H] (row-major) | b[4H] | w_out[H] | b_out[0 or 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmQuantileNet {
    pub hidden_size: usize,
    /// Number of lags; the covariate row is `(1, y_{t-1}, ..., y_{t-window})`.
    pub window: usize,
    pub output_bias: bool,
    pub dropout_rate: f64,
    pub l2_coeff: f64,
    pub params: Vec<f64>,
}

/// A hidden layer of `units` nonlinear neurons feeding a linear readout.
///
/// Layout: `w_hidden[units x input_dim] | w_out[units] | b_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedNet {
    pub units: usize,
    pub input_dim: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub l2_coeff: f64,
    pub params: Vec<f64>,
}

/// Any quantile predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Net {
    Linear(LinearQuantileNet),
    RegularizedLinear(RegularizedLinearNet),
    Lstm(LstmQuantileNet),
    Stacked(StackedNet),
}

/// Buildable description of a net, independent of its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NetSpec {
    Linear {
        activation: Activation,
    },
    RegularizedLinear {
        dropout_rate: f64,
        l2_coeff: f64,
    },
    Lstm {
        hidden_size: usize,
        #[serde(default = "default_true")]
        output_bias: bool,
        #[serde(default)]
        dropout_rate: f64,
        #[serde(default)]
        l2_coeff: f64,
    },
    Stacked {
        units: usize,
        activation: Activation,
        #[serde(default)]
        dropout_rate: f64,
        #[serde(default)]
        l2_coeff: f64,
    },
}

fn default_true() -> bool {
    true
}

pub const DEFAULT_DROPOUT_RATE: f64 = 0.2;
pub const DEFAULT_L2_COEFF: f64 = 1e-3;
pub const DEFAULT_LSTM_HIDDEN: usize = 8;

impl NetSpec {
    pub fn linear() -> Self {
        NetSpec::Linear {
            activation: Activation::Identity,
        }
    }

    pub fn elu() -> Self {
        NetSpec::Linear {
            activation: Activation::Elu,
        }
    }

    pub fn regularized() -> Self {
        NetSpec::RegularizedLinear {
            dropout_rate: DEFAULT_DROPOUT_RATE,
            l2_coeff: DEFAULT_L2_COEFF,
        }
    }

    pub fn lstm() -> Self {
        NetSpec::Lstm {
            hidden_size: DEFAULT_LSTM_HIDDEN,
            output_bias: true,
            dropout_rate: 0.0,
            l2_coeff: 0.0,
        }
    }

    /// Builds a zero-initialized net for covariate rows of length `input_dim`
    /// (intercept slot included).
    pub fn build(&self, input_dim: usize) -> Result<Net> {
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let check_rate = |rate: f64| {
            if (0.0..1.0).contains(&rate) {
                Ok(())
            } else {
                Err(Error::Domain {
                    name: "dropout_rate",
                    value: rate,
                    expected: "0 <= rate < 1",
                })
            }
        };
        let check_l2 = |l2: f64| {
            if l2 >= 0.0 && l2.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain {
                    name: "l2_coeff",
                    value: l2,
                    expected: "l2 >= 0",
                })
            }
        };
        Ok(match *self {
            NetSpec::Linear { activation } => {
                if !matches!(activation, Activation::Identity | Activation::Elu) {
                    return Err(Error::Config(
                        "single-neuron nets support identity or elu activations".into(),
                    ));
                }
                Net::Linear(LinearQuantileNet {
                    weights: vec![0.0; input_dim],
                    activation,
                })
            }
            NetSpec::RegularizedLinear {
                dropout_rate,
                l2_coeff,
            } => {
                check_rate(dropout_rate)?;
                check_l2(l2_coeff)?;
                Net::RegularizedLinear(RegularizedLinearNet {
                    weights: vec![0.0; input_dim],
                    dropout_rate,
                    l2_coeff,
                })
            }
            NetSpec::Lstm {
                hidden_size,
                output_bias,
                dropout_rate,
                l2_coeff,
            } => {
                check_rate(dropout_rate)?;
                check_l2(l2_coeff)?;
                if hidden_size == 0 {
                    return Err(Error::Config("LSTM hidden size must be positive".into()));
                }
                if input_dim < 2 {
                    return Err(Error::Config("LSTM needs at least one lag".into()));
                }
                let mut net = LstmQuantileNet {
                    hidden_size,
                    window: input_dim - 1,
                    output_bias,
                    dropout_rate,
                    l2_coeff,
                    params: Vec::new(),
                };
                net.params = vec![0.0; net.layout().total];
                Net::Lstm(net)
            }
            NetSpec::Stacked {
                units,
                activation,
                dropout_rate,
                l2_coeff,
            } => {
                check_rate(dropout_rate)?;
                check_l2(l2_coeff)?;
                if units == 0 {
                    return Err(Error::Config("stacked net needs at least one unit".into()));
                }
                Net::Stacked(StackedNet {
                    units,
                    input_dim,
                    activation,
                    dropout_rate,
                    l2_coeff,
                    params: vec![0.0; units * input_dim + units + 1],
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct LstmLayout {
    hidden: usize,
    w_ih: usize,
    w_hh: usize,
    b: usize,
    w_out: usize,
    b_out: Option<usize>,
    total: usize,
}

impl LstmQuantileNet {
    fn layout(&self) -> LstmLayout {
        let h = self.hidden_size;
        let w_ih = 0;
        let w_hh = w_ih + 4 * h;
        let b = w_hh + 4 * h * h;
        let w_out = b + 4 * h;
        let end = w_out + h;
        let (b_out, total) = if self.output_bias {
            (Some(end), end + 1)
        } else {
            (None, end)
        };
        LstmLayout {
            hidden: h,
            w_ih,
            w_hh,
            b,
            w_out,
            b_out,
            total,
        }
    }
}

/// Per-step record layout inside the flat LSTM tape:
/// `x | h_prev[H] | c_prev[H] | gates[4H] (i, f, g, o, post-activation) | tanh_c[H]`.
fn lstm_stride(h: usize) -> usize {
    1 + 7 * h
}

#[derive(Debug, Clone)]
enum Record {
    Linear { x: Vec<f64>, z: f64 },
    Lstm { steps: Vec<f64>, h_last: Vec<f64> },
    Stacked { x: Vec<f64>, z: Vec<f64> },
}

/// Forward-pass record consumed by [`Net::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    record: Option<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.record.is_some()
    }

    pub fn clear(&mut self) {
        self.record = None;
    }
}

/// Applies an inverted-dropout mask to the feature slots (intercept untouched).
fn masked_input(x: &[f64], mask: Option<&[f64]>) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    if let Some(m) = mask {
        if m.len() + 1 != x.len() {
            return Err(Error::shape("dropout mask", x.len() - 1, m.len()));
        }
        for (v, s) in out[1..].iter_mut().zip(m) {
            *v *= s;
        }
    }
    Ok(out)
}

/// Draws an inverted-dropout mask: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn sample_dropout_mask<R: Rng + ?Sized>(rate: f64, len: usize, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

impl Net {
    pub fn family_name(&self) -> &'static str {
        match self {
            Net::Linear(n) if n.activation == Activation::Elu => "elu",
            Net::Linear(_) => "linear",
            Net::RegularizedLinear(_) => "regularized_linear",
            Net::Lstm(_) => "lstm",
            Net::Stacked(_) => "stacked",
        }
    }

    /// Length of the covariate rows this net accepts.
    pub fn input_dim(&self) -> usize {
        match self {
            Net::Linear(n) => n.weights.len(),
            Net::RegularizedLinear(n) => n.weights.len(),
            Net::Lstm(n) => n.window + 1,
            Net::Stacked(n) => n.input_dim,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Net::Linear(n) => &n.weights,
            Net::RegularizedLinear(n) => &n.weights,
            Net::Lstm(n) => &n.params,
            Net::Stacked(n) => &n.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Net::Linear(n) => &mut n.weights,
            Net::RegularizedLinear(n) => &mut n.weights,
            Net::Lstm(n) => &mut n.params,
            Net::Stacked(n) => &mut n.params,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params().len()
    }

    pub fn dropout_rate(&self) -> f64 {
        match self {
            Net::Linear(_) => 0.0,
            Net::RegularizedLinear(n) => n.dropout_rate,
            Net::Lstm(n) => n.dropout_rate,
            Net::Stacked(n) => n.dropout_rate,
        }
    }

    pub fn l2_coeff(&self) -> f64 {
        match self {
            Net::Linear(_) => 0.0,
            Net::RegularizedLinear(n) => n.l2_coeff,
            Net::Lstm(n) => n.l2_coeff,
            Net::Stacked(n) => n.l2_coeff,
        }
    }

    /// Which parameters receive weight decay: weights yes, intercepts and
    /// biases no.
    pub fn decay_mask(&self) -> Vec<bool> {
        match self {
            Net::Linear(n) => (0..n.weights.len()).map(|i| i != 0).collect(),
            Net::RegularizedLinear(n) => (0..n.weights.len()).map(|i| i != 0).collect(),
            Net::Lstm(n) => {
                let l = n.layout();
                (0..l.total)
                    .map(|i| (i < l.b) || (i >= l.w_out && Some(i) != l.b_out))
                    .collect()
            }
            Net::Stacked(n) => {
                let p = n.input_dim;
                let hidden = n.units * p;
                (0..n.params.len())
                    .map(|i| {
                        if i < hidden {
                            i % p != 0
                        } else {
                            i < hidden + n.units
                        }
                    })
                    .collect()
            }
        }
    }

    /// `0.5 * l2 * sum(w^2)` over decayed parameters.
    pub fn l2_penalty(&self) -> f64 {
        let l2 = self.l2_coeff();
        if l2 == 0.0 {
            return 0.0;
        }
        let s: f64 = self
            .params()
            .iter()
            .zip(self.decay_mask())
            .filter(|(_, d)| *d)
            .map(|(w, _)| w * w)
            .sum();
        0.5 * l2 * s
    }

    /// Adds `l2 * w` to the gradient of every decayed parameter.
    pub fn add_l2_grad(&self, grad: &mut [f64]) {
        let l2 = self.l2_coeff();
        if l2 == 0.0 {
            return;
        }
        for ((g, w), d) in grad.iter_mut().zip(self.params()).zip(self.decay_mask()) {
            if d {
                *g += l2 * w;
            }
        }
    }

    pub fn init_weights(&mut self, scheme: InitScheme) {
        match scheme {
            InitScheme::Ones => self.params_mut().iter_mut().for_each(|w| *w = 1.0),
            InitScheme::StandardNormal { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for w in self.params_mut() {
                    *w = rng.sample(StandardNormal);
                }
                if let Net::Lstm(n) = self {
                    let l = n.layout();
                    let scale = 1.0 / (l.hidden as f64).sqrt();
                    for w in &mut n.params[l.w_hh..l.b] {
                        *w *= scale;
                    }
                }
            }
        }
    }

    pub fn with_init(mut self, scheme: InitScheme) -> Self {
        self.init_weights(scheme);
        self
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("net input", self.input_dim(), x.len()));
        }
        Ok(())
    }

    /// Evaluation-mode prediction (dropout disabled).
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            Net::Linear(n) => n.activation.apply(dot(&n.weights, x)),
            Net::RegularizedLinear(n) => dot(&n.weights, x),
            Net::Lstm(n) => lstm_forward(n, x, None).0,
            Net::Stacked(n) => stacked_forward(n, x).0,
        })
    }

    /// Training-mode forward pass. `mask` scales the feature slots `x[1..]`
    /// (see [`sample_dropout_mask`]); the pass is recorded into `tape`.
    pub fn forward_train(&self, x: &[f64], mask: Option<&[f64]>, tape: &mut Tape) -> Result<f64> {
        self.check_dim(x)?;
        let xe = masked_input(x, mask)?;
        let (out, record) = match self {
            Net::Linear(n) => {
                let z = dot(&n.weights, &xe);
                (n.activation.apply(z), Record::Linear { x: xe, z })
            }
            Net::RegularizedLinear(n) => {
                let z = dot(&n.weights, &xe);
                (z, Record::Linear { x: xe, z })
            }
            Net::Lstm(n) => {
                let mut steps = match tape.record.take() {
                    Some(Record::Lstm { steps, .. }) => steps,
                    _ => Vec::with_capacity(n.window * lstm_stride(n.hidden_size)),
                };
                steps.clear();
                let (out, h_last) = lstm_forward(n, &xe, Some(&mut steps));
                (out, Record::Lstm { steps, h_last })
            }
            Net::Stacked(n) => {
                let (out, z) = stacked_forward(n, &xe);
                (out, Record::Stacked { x: xe, z })
            }
        };
        tape.record = Some(record);
        Ok(out)
    }

    /// Accumulates `upstream * d(out)/d(params)` into `grad` using the last
    /// pass recorded on `tape`.
    pub fn backward(&self, tape: &Tape, upstream: f64, grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.n_params() {
            return Err(Error::shape("gradient buffer", self.n_params(), grad.len()));
        }
        let record = tape.record.as_ref().ok_or_else(|| {
            Error::Usage("backward called without a recorded forward pass".into())
        })?;
        match (self, record) {
            (Net::Linear(n), Record::Linear { x, z }) => {
                let d = upstream * n.activation.derivative(*z);
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            (Net::RegularizedLinear(_), Record::Linear { x, .. }) => {
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += upstream * xi;
                }
            }
            (Net::Lstm(n), Record::Lstm { steps, h_last }) => {
                lstm_backward(n, steps, h_last, upstream, grad);
            }
            (Net::Stacked(n), Record::Stacked { x, z }) => {
                stacked_backward(n, x, z, upstream, grad);
            }
            _ => {
                return Err(Error::Usage(
                    "tape was recorded by a different net family".into(),
                ))
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lstm_forward(
    n: &LstmQuantileNet,
    x: &[f64],
    mut steps: Option<&mut Vec<f64>>,
) -> (f64, Vec<f64>) {
    let l = n.layout();
    let h_n = l.hidden;
    let p = &n.params;
    let mut h = vec![0.0; h_n];
    let mut c = vec![0.0; h_n];
    let mut a = vec![0.0; 4 * h_n];
    let mut gates = vec![0.0; 4 * h_n];
    // lags arrive newest-first; the cell consumes them oldest-first
    for &xt in x[1..].iter().rev() {
        for (r, ar) in a.iter_mut().enumerate() {
            let row = &p[l.w_hh + r * h_n..l.w_hh + (r + 1) * h_n];
            *ar = p[l.w_ih + r] * xt + dot(row, &h) + p[l.b + r];
        }
        for k in 0..h_n {
            gates[k] = sigmoid(a[k]);
            gates[h_n + k] = sigmoid(a[h_n + k]);
            gates[2 * h_n + k] = a[2 * h_n + k].tanh();
            gates[3 * h_n + k] = sigmoid(a[3 * h_n + k]);
        }
        if let Some(s) = steps.as_deref_mut() {
            s.push(xt);
            s.extend_from_slice(&h);
            s.extend_from_slice(&c);
            s.extend_from_slice(&gates);
        }
        for k in 0..h_n {
            c[k] = gates[h_n + k] * c[k] + gates[k] * gates[2 * h_n + k];
            h[k] = gates[3 * h_n + k] * c[k].tanh();
        }
        if let Some(s) = steps.as_deref_mut() {
            s.extend(c.iter().map(|v| v.tanh()));
        }
    }
    let mut out = dot(&p[l.w_out..l.w_out + h_n], &h);
    if let Some(b) = l.b_out {
        out += p[b];
    }
    (out, h)
}

fn lstm_backward(
    n: &LstmQuantileNet,
    steps: &[f64],
    h_last: &[f64],
    upstream: f64,
    grad: &mut [f64],
) {
    let l = n.layout();
    let h_n = l.hidden;
    let p = &n.params;
    for k in 0..h_n {
        grad[l.w_out + k] += upstream * h_last[k];
    }
    if let Some(b) = l.b_out {
        grad[b] += upstream;
    }
    let mut dh: Vec<f64> = p[l.w_out..l.w_out + h_n]
        .iter()
        .map(|w| upstream * w)
        .collect();
    let mut dh_prev = vec![0.0; h_n];
    let mut dc = vec![0.0; h_n];
    let mut da = vec![0.0; 4 * h_n];
    for s in steps.chunks_exact(lstm_stride(h_n)).rev() {
        let x = s[0];
        let h_prev = &s[1..1 + h_n];
        let c_prev = &s[1 + h_n..1 + 2 * h_n];
        let g = &s[1 + 2 * h_n..1 + 6 * h_n];
        let tanh_c = &s[1 + 6 * h_n..];
        let (gi, gf, gg, go) = (
            &g[..h_n],
            &g[h_n..2 * h_n],
            &g[2 * h_n..3 * h_n],
            &g[3 * h_n..],
        );
        for k in 0..h_n {
            let d_o = dh[k] * tanh_c[k];
            let dck = dc[k] + dh[k] * go[k] * (1.0 - tanh_c[k] * tanh_c[k]);
            da[k] = dck * gg[k] * gi[k] * (1.0 - gi[k]);
            da[h_n + k] = dck * c_prev[k] * gf[k] * (1.0 - gf[k]);
            da[2 * h_n + k] = dck * gi[k] * (1.0 - gg[k] * gg[k]);
            da[3 * h_n + k] = d_o * go[k] * (1.0 - go[k]);
            dc[k] = dck * gf[k];
        }
        dh_prev.iter_mut().for_each(|v| *v = 0.0);
        for (r, &dar) in da.iter().enumerate() {
            grad[l.w_ih + r] += dar * x;
            grad[l.b + r] += dar;
            let base = l.w_hh + r * h_n;
            for k in 0..h_n {
                grad[base + k] += dar * h_prev[k];
                dh_prev[k] += dar * p[base + k];
            }
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }
}

fn stacked_forward(n: &StackedNet, x: &[f64]) -> (f64, Vec<f64>) {
    let p = n.input_dim;
    let hidden_end = n.units * p;
    let z: Vec<f64> = (0..n.units)
        .map(|u| dot(&n.params[u * p..(u + 1) * p], x))
        .collect();
    let out = z
        .iter()
        .enumerate()
        .map(|(u, &zu)| n.params[hidden_end + u] * n.activation.apply(zu))
        .sum::<f64>()
        + n.params[hidden_end + n.units];
    (out, z)
}

fn stacked_backward(n: &StackedNet, x: &[f64], z: &[f64], upstream: f64, grad: &mut [f64]) {
    let p = n.input_dim;
    let hidden_end = n.units * p;
    for (u, &zu) in z.iter().enumerate() {
        grad[hidden_end + u] += upstream * n.activation.apply(zu);
        let dz = upstream * n.params[hidden_end + u] * n.activation.derivative(zu);
        for j in 0..p {
            grad[u * p + j] += dz * x[j];
        }
    }
    grad[hidden_end + n.units] += upstream;
}

/// Negates every feature slot of a covariate row, keeping the intercept.
pub fn negate_features(x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| if i == 0 { v } else { -v })
        .collect()
}

/// Serves right-censored problems with a net fitted on the negated,
/// left-censored problem: `q_theta(x) = -inner_{1-theta}(-x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorWrapper {
    pub inner: Net,
}

impl MirrorWrapper {
    pub fn new(inner: Net) -> Self {
        Self { inner }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.inner.forward(&negate_features(x))?)
    }
}

/// Evaluation-mode predictions for every row.
pub fn predict_rows(net: &Net, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.iter().map(|x| net.forward(x)).collect()
}
