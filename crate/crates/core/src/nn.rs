//! Feed-forward network with an exact forward-mode derivative along the time
//! input and reverse-mode gradients through both the value and the tangent.
//!
//! Inputs are `(t, delta0, omega0, alpha)`, standardized with stored
//! statistics. Outputs `(delta, omega)` are the linear output layer times a
//! fixed per-component scale.
//!
//! Value rows and tangent rows are stacked in one matrix per layer so each
//! affine map costs a single matrix product.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::fileio::{read_file, write_file, Header};
use crate::rom::PllState;

pub const MODEL_MAGIC: &str = "pllpinn-model v1";

pub const INPUT_DIM: usize = 4;
pub const OUTPUT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    #[inline]
    pub fn eval(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            // within a few ulp of `f64::tanh` and much cheaper; saturates
            // cleanly because exp overflows to infinity
            Activation::Tanh => 1.0 - 2.0 / ((2.0 * a).exp() + 1.0),
        }
    }

    /// First and second derivative at pre-activation `a` whose activation
    /// `z = eval(a)` is already known. The ReLU subgradient at 0 is 0.
    #[inline]
    fn derivs(self, a: f64, z: f64) -> (f64, f64) {
        match self {
            Activation::Relu => (if a > 0.0 { 1.0 } else { 0.0 }, 0.0),
            Activation::Tanh => {
                let d1 = 1.0 - z * z;
                (d1, -2.0 * z * d1)
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetworkArch {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Default for NetworkArch {
    fn default() -> Self {
        Self {
            input_dim: INPUT_DIM,
            hidden_layers: 4,
            hidden_width: 100,
            output_dim: OUTPUT_DIM,
            activation: Activation::Relu,
        }
    }
}

impl NetworkArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim != INPUT_DIM || self.output_dim != OUTPUT_DIM {
            return Err(Error::InvalidConfig(format!(
                "network maps {INPUT_DIM} inputs to {OUTPUT_DIM} outputs, got {} -> {}",
                self.input_dim, self.output_dim
            )));
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidConfig("need at least one hidden layer of width >= 1".into()));
        }
        Ok(())
    }

    /// Widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        d.push(self.output_dim);
        d
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Multiply-adds for one value forward pass.
    pub fn macs(&self) -> usize {
        self.dims().windows(2).map(|w| w[1] * w[0]).sum()
    }
}

/// Position of one affine layer inside the flat parameter vector. Weights
/// are `rows x cols` row-major (`rows` outputs), followed by `rows` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub rows: usize,
    pub cols: usize,
    pub weights: usize,
    pub biases: usize,
}

fn layout(arch: &NetworkArch) -> Vec<LayerSlot> {
    let mut off = 0;
    arch.dims()
        .windows(2)
        .map(|w| {
            let slot = LayerSlot {
                rows: w[1],
                cols: w[0],
                weights: off,
                biases: off + w[0] * w[1],
            };
            off += w[1] * (w[0] + 1);
            slot
        })
        .collect()
}

/// Network output at one input: state estimate and its time derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentOutput {
    pub value: PllState,
    pub dt_value: PllState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: NetworkArch,
    layers: Vec<LayerSlot>,
    params: Vec<f64>,
    norm: NormStats,
}

/// `c = beta * c + a * b` for strided row-major views; `c` is `m x n` dense.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m * n <= c.len());
    // SAFETY: the asserts above keep every strided access within the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Reusable buffers for value-only inference.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    x: Vec<f64>,
    y: Vec<f64>,
}

/// Activations cached by a forward pass for the backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    batch: usize,
    tangent: bool,
    /// Standardized inputs, `batch x INPUT_DIM`.
    input: Vec<f64>,
    /// Per hidden layer: pre-activations, value rows then tangent rows.
    pre: Vec<Vec<f64>>,
    /// Per hidden layer: activations, value rows then tangent rows.
    post: Vec<Vec<f64>>,
    /// Unscaled output layer, value rows then tangent rows.
    out: Vec<f64>,
    scratch: Vec<f64>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Rows stored per layer: the batch, doubled when tangents are carried.
    fn rows(&self) -> usize {
        if self.tangent {
            2 * self.batch
        } else {
            self.batch
        }
    }

    pub fn value(&self, i: usize, scale: [f64; 2]) -> PllState {
        PllState::new(self.out[2 * i] * scale[0], self.out[2 * i + 1] * scale[1])
    }

    pub fn dt_value(&self, i: usize, scale: [f64; 2]) -> PllState {
        assert!(self.tangent, "forward pass ran without tangents");
        let o = 2 * (self.batch + i);
        PllState::new(self.out[o] * scale[0], self.out[o + 1] * scale[1])
    }

    /// Smallest `|pre-activation|` of sample `i` over all hidden units.
    pub fn min_abs_preactivation(&self, i: usize) -> f64 {
        self.pre
            .iter()
            .flat_map(|p| {
                let w = p.len() / self.rows();
                p[i * w..(i + 1) * w].iter().map(|a| a.abs())
            })
            .fold(f64::INFINITY, f64::min)
    }
}

impl Network {
    /// He initialization (weight variance `2 / fan_in`, zero biases).
    pub fn init(arch: NetworkArch, norm: NormStats, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layers = layout(&arch);
        let mut params = vec![0.0; arch.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &layers {
            let normal = Normal::new(0.0, (2.0 / l.cols as f64).sqrt()).expect("positive std");
            for w in &mut params[l.weights..l.biases] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(Self { arch, layers, params, norm })
    }

    pub fn from_params(arch: NetworkArch, norm: NormStats, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig("non-finite network parameter".into()));
        }
        Ok(Self {
            layers: layout(&arch),
            arch,
            params,
            norm,
        })
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn layers(&self) -> &[LayerSlot] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Runs the batch forward, caching activations in `tape`. Tangents with
    /// respect to the raw time input are propagated when `tangent` is set.
    pub fn forward_tape(&self, inputs: &[[f64; INPUT_DIM]], tangent: bool, tape: &mut Tape) {
        let b = inputs.len();
        let act = self.arch.activation;
        let rows = if tangent { 2 * b } else { b };
        tape.batch = b;
        tape.tangent = tangent;
        tape.input.clear();
        for x in inputs {
            for j in 0..INPUT_DIM {
                tape.input.push((x[j] - self.norm.input_mean[j]) / self.norm.input_std[j]);
            }
        }
        let hidden = self.arch.hidden_layers;
        tape.pre.resize_with(hidden, Vec::new);
        tape.post.resize_with(hidden, Vec::new);

        for (li, l) in self.layers.iter().enumerate() {
            let w = &self.params[l.weights..l.biases];
            let bias = &self.params[l.biases..l.biases + l.rows];
            let mut target = if li < hidden {
                std::mem::take(&mut tape.pre[li])
            } else {
                std::mem::take(&mut tape.out)
            };
            target.clear();
            target.resize(rows * l.rows, 0.0);
            if li == 0 {
                gemm(b, l.cols, l.rows, &tape.input, l.cols, 1, w, 1, l.cols, 0.0, &mut target);
                if tangent {
                    // d(standardized t)/dt = 1 / std_t, other inputs constant
                    let inv = 1.0 / self.norm.input_std[0];
                    for r in 0..b {
                        let row = &mut target[(b + r) * l.rows..(b + r + 1) * l.rows];
                        for (o, v) in row.iter_mut().enumerate() {
                            *v = w[o * l.cols] * inv;
                        }
                    }
                }
            } else {
                let x = &tape.post[li - 1];
                gemm(rows, l.cols, l.rows, x, l.cols, 1, w, 1, l.cols, 0.0, &mut target);
            }
            for r in 0..b {
                for (v, bb) in target[r * l.rows..(r + 1) * l.rows].iter_mut().zip(bias) {
                    *v += bb;
                }
            }
            if li < hidden {
                let mut z = std::mem::take(&mut tape.post[li]);
                z.clear();
                z.resize(rows * l.rows, 0.0);
                let n = b * l.rows;
                for k in 0..n {
                    z[k] = act.eval(target[k]);
                }
                if tangent {
                    for k in 0..n {
                        z[n + k] = act.derivs(target[k], z[k]).0 * target[n + k];
                    }
                }
                tape.pre[li] = target;
                tape.post[li] = z;
            } else {
                tape.out = target;
            }
        }
    }

    /// Gradient of a loss with respect to every parameter, accumulated into
    /// `grads`. `g_value` and `g_dt` hold the loss gradient with respect to
    /// each sample's output and output time derivative (`g_dt` requires a
    /// tape recorded with tangents).
    pub fn backward(&self, tape: &mut Tape, g_value: &[[f64; 2]], g_dt: Option<&[[f64; 2]]>, grads: &mut [f64]) {
        let b = tape.batch;
        assert_eq!(g_value.len(), b);
        assert_eq!(grads.len(), self.params.len());
        let tangent = g_dt.is_some();
        assert!(!tangent || tape.tangent, "tangent gradient needs a tangent tape");
        let rows = if tangent { 2 * b } else { b };
        let act = self.arch.activation;
        let s = self.norm.output_scale;
        let hidden = self.arch.hidden_layers;

        // gradient at the unscaled output layer
        let mut g = std::mem::take(&mut tape.scratch);
        g.clear();
        g.reserve(rows * OUTPUT_DIM);
        for gv in g_value {
            g.push(gv[0] * s[0]);
            g.push(gv[1] * s[1]);
        }
        if let Some(gd) = g_dt {
            assert_eq!(gd.len(), b);
            for gv in gd {
                g.push(gv[0] * s[0]);
                g.push(gv[1] * s[1]);
            }
        }
        let tape_rows = tape.rows();
        let mut g_prev = Vec::new();

        for li in (0..self.layers.len()).rev() {
            let l = self.layers[li];
            let (gw_all, gb_all) = grads.split_at_mut(l.biases);
            let gw = &mut gw_all[l.weights..];
            let gb = &mut gb_all[..l.rows];
            for r in 0..b {
                for (acc, v) in gb.iter_mut().zip(&g[r * l.rows..(r + 1) * l.rows]) {
                    *acc += v;
                }
            }
            if li == 0 {
                gemm(l.rows, b, l.cols, &g, 1, l.rows, &tape.input, l.cols, 1, 1.0, gw);
                if tangent {
                    let inv = 1.0 / self.norm.input_std[0];
                    for r in 0..b {
                        for o in 0..l.rows {
                            gw[o * l.cols] += g[(b + r) * l.rows + o] * inv;
                        }
                    }
                }
                break;
            }
            let x = &tape.post[li - 1];
            debug_assert_eq!(x.len(), tape_rows * l.cols);
            gemm(l.rows, rows, l.cols, &g, 1, l.rows, x, l.cols, 1, 1.0, gw);

            let w = &self.params[l.weights..l.biases];
            g_prev.clear();
            g_prev.resize(rows * l.cols, 0.0);
            gemm(rows, l.rows, l.cols, &g, l.rows, 1, w, l.cols, 1, 0.0, &mut g_prev);

            // through the activation of hidden layer li - 1
            let pre = &tape.pre[li - 1];
            let post = &tape.post[li - 1];
            let n = b * l.cols;
            if tangent {
                for k in 0..n {
                    let (d1, d2) = act.derivs(pre[k], post[k]);
                    let gz = g_prev[k];
                    let gzd = g_prev[n + k];
                    g_prev[k] = gz * d1 + gzd * d2 * pre[n + k];
                    g_prev[n + k] = gzd * d1;
                }
            } else {
                for k in 0..n {
                    g_prev[k] *= act.derivs(pre[k], post[k]).0;
                }
            }
            std::mem::swap(&mut g, &mut g_prev);
            debug_assert!(li - 1 < hidden);
        }
        tape.scratch = g;
    }

    /// Value-only forward pass reusing `scratch`; appends one state per input
    /// to `out`. Arithmetic is identical to [`Network::forward_tape`].
    pub fn predict_into(&self, inputs: &[[f64; INPUT_DIM]], scratch: &mut Scratch, out: &mut Vec<PllState>) {
        let b = inputs.len();
        let act = self.arch.activation;
        let Scratch { x, y } = scratch;
        x.clear();
        for r in inputs {
            for j in 0..INPUT_DIM {
                x.push((r[j] - self.norm.input_mean[j]) / self.norm.input_std[j]);
            }
        }
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let w = &self.params[l.weights..l.biases];
            let bias = &self.params[l.biases..l.biases + l.rows];
            y.clear();
            y.resize(b * l.rows, 0.0);
            gemm(b, l.cols, l.rows, x, l.cols, 1, w, 1, l.cols, 0.0, y);
            for row in y.chunks_exact_mut(l.rows) {
                for (v, bb) in row.iter_mut().zip(bias) {
                    *v += bb;
                }
            }
            if li < last {
                for v in y.iter_mut() {
                    *v = act.eval(*v);
                }
            }
            std::mem::swap(x, y);
        }
        let s = self.norm.output_scale;
        out.extend(x.chunks_exact(OUTPUT_DIM).map(|o| PllState::new(o[0] * s[0], o[1] * s[1])));
    }

    pub fn forward_batch(&self, inputs: &[[f64; INPUT_DIM]]) -> Vec<PllState> {
        let mut out = Vec::with_capacity(inputs.len());
        self.predict_into(inputs, &mut Scratch::default(), &mut out);
        out
    }

    pub fn forward_with_dt_batch(&self, inputs: &[[f64; INPUT_DIM]]) -> Vec<TangentOutput> {
        let mut tape = Tape::default();
        self.forward_tape(inputs, true, &mut tape);
        let s = self.norm.output_scale;
        (0..inputs.len())
            .map(|i| TangentOutput {
                value: tape.value(i, s),
                dt_value: tape.dt_value(i, s),
            })
            .collect()
    }

    pub fn forward(&self, t: f64, x0: PllState, alpha: f64) -> PllState {
        self.forward_batch(&[[t, x0.delta, x0.omega, alpha]])[0]
    }

    pub fn forward_with_dt(&self, t: f64, x0: PllState, alpha: f64) -> TangentOutput {
        self.forward_with_dt_batch(&[[t, x0.delta, x0.omega, alpha]])[0]
    }

    /// Writes the checkpoint; `config_digest` identifies the training setup.
    pub fn save(&self, path: &Path, config_digest: &str) -> Result<()> {
        let a = &self.arch;
        let mut h = Header::default();
        h.push(
            "arch",
            format!("{} {} {} {}", a.input_dim, a.hidden_layers, a.hidden_width, a.output_dim),
        );
        h.push("activation", a.activation.name());
        h.push_floats("norm_mean", &self.norm.input_mean);
        h.push_floats("norm_std", &self.norm.input_std);
        h.push_floats("output_scale", &self.norm.output_scale);
        h.push("config_digest", if config_digest.is_empty() { "-" } else { config_digest });
        h.push("params", self.params.len());
        write_file(path, MODEL_MAGIC, &h, &self.params)
    }

    /// Loads a checkpoint along with its recorded config digest.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (f, payload) = read_file(path, MODEL_MAGIC)?;
        let dims: Vec<usize> = f
            .raw("arch")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Malformed(format!("bad arch entry `{s}`"))))
            .collect::<Result<_>>()?;
        let [input_dim, hidden_layers, hidden_width, output_dim] = dims[..] else {
            return Err(Error::Malformed("arch expects 4 integers".into()));
        };
        let arch = NetworkArch {
            input_dim,
            hidden_layers,
            hidden_width,
            output_dim,
            activation: f.raw("activation")?.parse().map_err(|e: Error| Error::Malformed(e.to_string()))?,
        };
        arch.validate().map_err(|e| Error::Malformed(e.to_string()))?;
        let declared: usize = f.get("params")?;
        if declared != payload.len() {
            return Err(Error::Malformed(format!(
                "header declares {declared} parameters, payload holds {}",
                payload.len()
            )));
        }
        let norm = NormStats {
            input_mean: f.float_array("norm_mean")?,
            input_std: f.float_array("norm_std")?,
            output_scale: f.float_array("output_scale")?,
        };
        let digest = f.raw("config_digest")?.to_string();
        let net = Self::from_params(arch, norm, payload).map_err(|e| Error::Malformed(e.to_string()))?;
        Ok((net, digest))
    }
}

/// Adam with an optional exponential learning-rate decay: the step size is
/// `lr * decay^(step / decay_every)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: f64,
    pub decay_every: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 1.0,
            decay_every: 1000.0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn with_decay(mut self, decay: f64, every: usize) -> Self {
        self.decay = decay;
        self.decay_every = every.max(1) as f64;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.lr * self.decay.powf(self.step as f64 / self.decay_every)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let lr = self.current_lr();
        self.step += 1;
        let c1 = 1.0 - self.beta1.powf(self.step as f64);
        let c2 = 1.0 - self.beta2.powf(self.step as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}
