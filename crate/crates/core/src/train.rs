//! Loss regimes, the minibatch training loop and rollout-based evaluation.
//!
//! * `Nn`: data loss only.
//! * `DtNn`: data loss plus matching the network's time derivative to the
//!   right-hand side evaluated at the labeled state.
//! * `Pinn`: additionally penalizes the residual `d x_hat/dt - f(x_hat)` at
//!   unlabeled collocation points.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{mean_std, CollocationPoint, Dataset, Sample};
use crate::error::{Error, Result};
use crate::nn::{Adam, Network, NetworkArch, Tape, INPUT_DIM};
use crate::rollout::{rollout_at_times, EquilibriumCriteria, Surrogate};
use crate::rom::{wrap_angle, PllState, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Nn,
    DtNn,
    Pinn,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Nn, Regime::DtNn, Regime::Pinn];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Nn => "nn",
            Regime::DtNn => "dtnn",
            Regime::Pinn => "pinn",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn" => Ok(Regime::Nn),
            "dtnn" => Ok(Regime::DtNn),
            "pinn" => Ok(Regime::Pinn),
            other => Err(Error::InvalidConfig(format!("unknown regime `{other}` (nn, dtnn, pinn)"))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_x: f64,
    pub lambda_dt: f64,
    pub lambda_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_x: 1.0,
            lambda_dt: 1.0,
            lambda_f: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_x, self.lambda_dt, self.lambda_f].iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidConfig("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Zeroes the weights a regime does not use.
    pub fn masked(self, regime: Regime) -> Self {
        match regime {
            Regime::Nn => Self {
                lambda_dt: 0.0,
                lambda_f: 0.0,
                ..self
            },
            Regime::DtNn => Self { lambda_f: 0.0, ..self },
            Regime::Pinn => self,
        }
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub x: f64,
    pub dt: f64,
    pub f: f64,
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    w.lambda_x * parts.x + w.lambda_dt * parts.dt + w.lambda_f * parts.f
}

/// Mean absolute error over the batch and both components.
pub fn loss_x(pred: &[PllState], label: &[PllState]) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions, {} labels", pred.len(), label.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = pred
        .iter()
        .zip(label)
        .map(|(p, l)| (p.delta - l.delta).abs() + (p.omega - l.omega).abs())
        .sum();
    Ok(sum / (2 * pred.len()) as f64)
}

/// Per-component standard deviation of the right-hand side at the labels,
/// used to put both residual components on a common scale.
pub fn residual_scale(data: &Dataset) -> Result<[f64; 2]> {
    let rows: Vec<[f64; 2]> = data
        .samples
        .iter()
        .filter(|s| s.has_label())
        .map(|s| Ok(data.params.with_alpha(s.alpha)?.rhs(s.t, s.x_t).as_array()))
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(mean_std(&rows).1)
}

/// Derivative-matching loss at labeled points: `f` is evaluated at the
/// labeled (true) state.
pub fn loss_dt(net: &Network, batch: &[Sample], base: &SystemParams, scale: [f64; 2]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let inputs: Vec<[f64; INPUT_DIM]> = batch.iter().map(sample_input).collect();
    let out = net.forward_with_dt_batch(&inputs);
    let mut sum = 0.0;
    for (s, y) in batch.iter().zip(&out) {
        let f = base.with_alpha(s.alpha)?.rhs(s.t, s.x_t);
        sum += (y.dt_value.delta - f.d_delta).abs() / scale[0] + (y.dt_value.omega - f.d_omega).abs() / scale[1];
    }
    Ok(sum / (2 * batch.len()) as f64)
}

/// Physics residual at collocation points with `f` evaluated at the
/// network's own prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualLoss {
    pub value: f64,
    /// The batch was empty and the value is 0 by convention.
    pub empty: bool,
}

pub fn loss_f(net: &Network, batch: &[CollocationPoint], base: &SystemParams, scale: [f64; 2]) -> Result<ResidualLoss> {
    if batch.is_empty() {
        return Ok(ResidualLoss { value: 0.0, empty: true });
    }
    let inputs: Vec<[f64; INPUT_DIM]> = batch.iter().map(point_input).collect();
    let out = net.forward_with_dt_batch(&inputs);
    let mut sum = 0.0;
    for (c, y) in batch.iter().zip(&out) {
        let f = base.with_alpha(c.alpha)?.rhs(c.t, y.value);
        sum += (y.dt_value.delta - f.d_delta).abs() / scale[0] + (y.dt_value.omega - f.d_omega).abs() / scale[1];
    }
    Ok(ResidualLoss {
        value: sum / (2 * batch.len()) as f64,
        empty: false,
    })
}

fn sample_input(s: &Sample) -> [f64; INPUT_DIM] {
    [s.t, s.x0.delta, s.x0.omega, s.alpha]
}

fn point_input(c: &CollocationPoint) -> [f64; INPUT_DIM] {
    [c.t, c.x0.delta, c.x0.omega, c.alpha]
}

/// Sign with `sgn(0) = 0`, the subgradient used for absolute errors.
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weighted loss over one labeled batch and one collocation batch.
#[derive(Debug, Clone)]
pub struct Objective {
    pub base: SystemParams,
    pub weights: LossWeights,
    pub residual_scale: [f64; 2],
}

/// Reusable buffers for [`Objective::eval`].
#[derive(Debug, Default)]
pub struct Workspace {
    tape: Tape,
    inputs: Vec<[f64; INPUT_DIM]>,
    g_value: Vec<[f64; 2]>,
    g_dt: Vec<[f64; 2]>,
}

impl Objective {
    /// Loss terms for the batch. When `grads` is given, the gradient of the
    /// weighted total is accumulated into it.
    pub fn eval(
        &self,
        net: &Network,
        labeled: &[Sample],
        colloc: &[CollocationPoint],
        ws: &mut Workspace,
        grads: Option<&mut [f64]>,
    ) -> Result<LossParts> {
        if labeled.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let w = self.weights;
        let use_dt = w.lambda_dt > 0.0;
        let use_f = w.lambda_f > 0.0 && !colloc.is_empty();
        let colloc = if use_f { colloc } else { &[] };
        let tangent = use_dt || use_f;

        ws.inputs.clear();
        ws.inputs.extend(labeled.iter().map(sample_input));
        ws.inputs.extend(colloc.iter().map(point_input));
        net.forward_tape(&ws.inputs, tangent, &mut ws.tape);

        let n = labeled.len();
        let rows = ws.inputs.len();
        let out_scale = net.norm().output_scale;
        let sc = self.residual_scale;
        ws.g_value.clear();
        ws.g_value.resize(rows, [0.0; 2]);
        ws.g_dt.clear();
        ws.g_dt.resize(rows, [0.0; 2]);

        let mut parts = LossParts::default();
        let inv_n = 1.0 / (2 * n) as f64;
        for (i, s) in labeled.iter().enumerate() {
            let y = ws.tape.value(i, out_scale);
            let e = [y.delta - s.x_t.delta, y.omega - s.x_t.omega];
            parts.x += (e[0].abs() + e[1].abs()) * inv_n;
            ws.g_value[i] = [w.lambda_x * sgn(e[0]) * inv_n, w.lambda_x * sgn(e[1]) * inv_n];
            if use_dt {
                let dy = ws.tape.dt_value(i, out_scale);
                let f = self.base.with_alpha(s.alpha)?.rhs(s.t, s.x_t);
                let r = [dy.delta - f.d_delta, dy.omega - f.d_omega];
                parts.dt += (r[0].abs() / sc[0] + r[1].abs() / sc[1]) * inv_n;
                ws.g_dt[i] = [
                    w.lambda_dt * sgn(r[0]) * inv_n / sc[0],
                    w.lambda_dt * sgn(r[1]) * inv_n / sc[1],
                ];
            }
        }
        if use_f {
            let inv_c = 1.0 / (2 * colloc.len()) as f64;
            for (j, c) in colloc.iter().enumerate() {
                let row = n + j;
                let y = ws.tape.value(row, out_scale);
                let dy = ws.tape.dt_value(row, out_scale);
                let p = self.base.with_alpha(c.alpha)?;
                let f = p.rhs(c.t, y);
                let jac = p.jacobian(y);
                let r = [dy.delta - f.d_delta, dy.omega - f.d_omega];
                parts.f += (r[0].abs() / sc[0] + r[1].abs() / sc[1]) * inv_c;
                let k = [
                    w.lambda_f * sgn(r[0]) * inv_c / sc[0],
                    w.lambda_f * sgn(r[1]) * inv_c / sc[1],
                ];
                ws.g_dt[row] = k;
                // r = dy - f(y): dr/dy = -J
                ws.g_value[row] = [
                    -(k[0] * jac[0][0] + k[1] * jac[1][0]),
                    -(k[0] * jac[0][1] + k[1] * jac[1][1]),
                ];
            }
        }
        if let Some(g) = grads {
            net.backward(&mut ws.tape, &ws.g_value, tangent.then_some(&ws.g_dt[..]), g);
        }
        Ok(parts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    pub weights: LossWeights,
    pub arch: NetworkArch,
    pub batch_size: usize,
    pub collocation_batch: usize,
    pub iterations: usize,
    pub eval_every: usize,
    /// Test trajectories used for the periodic evaluation.
    pub eval_subsample: usize,
    pub seed: u64,
    pub lr: f64,
    /// Learning-rate factor applied per 1000 iterations.
    pub lr_decay: f64,
    /// Band deciding which test trajectories count as stable.
    pub criteria: EquilibriumCriteria,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Pinn,
            weights: LossWeights::default(),
            arch: NetworkArch::default(),
            batch_size: 256,
            collocation_batch: 256,
            iterations: 20_000,
            eval_every: 500,
            eval_subsample: 2000,
            seed: 0,
            lr: 1e-3,
            lr_decay: 1.0,
            criteria: EquilibriumCriteria::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.arch.validate()?;
        self.criteria.validate()?;
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig("batch_size and eval_every must be >= 1".into()));
        }
        if self.regime == Regime::Pinn && self.collocation_batch == 0 {
            return Err(Error::InvalidConfig("collocation_batch must be >= 1 for the pinn regime".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig("lr must be > 0 and lr_decay in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn effective_weights(&self) -> LossWeights {
        self.weights.masked(self.regime)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub loss: f64,
    pub parts: LossParts,
    /// Test MAE `(delta, omega)` when a test set was supplied.
    pub test_mae: Option<[f64; 2]>,
}

/// Mean absolute error of rolled-out predictions on stable test states.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mae_per_state: [f64; 2],
    /// `(time, [delta, omega])` per prediction time, ordered.
    pub mae_vs_time: Vec<(f64, [f64; 2])>,
    pub stable: usize,
    pub total: usize,
}

impl EvalReport {
    /// MAE averaged over both state components.
    pub fn overall(&self) -> f64 {
        0.5 * (self.mae_per_state[0] + self.mae_per_state[1])
    }

    /// Mean over both components at the time closest to `t`.
    pub fn mae_at(&self, t: f64) -> f64 {
        let (_, m) = self
            .mae_vs_time
            .iter()
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
            .expect("nonempty report");
        0.5 * (m[0] + m[1])
    }
}

/// Rolls the surrogate out from every test trajectory's initial state and
/// compares with the labels at the trajectory's fixed sample times.
///
/// Only trajectories whose last label lies in the equilibrium band
/// (`criteria`) count. Angle errors are taken modulo a full turn.
pub fn evaluate<S: Surrogate + ?Sized>(
    surrogate: &S,
    test: &Dataset,
    window: f64,
    criteria: &EquilibriumCriteria,
    max_trajectories: Option<usize>,
) -> Result<EvalReport> {
    let n = max_trajectories.unwrap_or(test.trajectories).min(test.trajectories);
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let times: Vec<f64> = test.trajectory(0).iter().map(|s| s.t).collect();
    let mut stable = Vec::new();
    for i in 0..n {
        let traj = test.trajectory(i);
        if traj.iter().map(|s| s.t).ne(times.iter().copied()) {
            return Err(Error::ShapeMismatch("test trajectories must share sample times".into()));
        }
        let last = traj[traj.len() - 1];
        let settled = last.has_label()
            && test
                .params
                .with_alpha(last.alpha)?
                .equilibrium()
                .is_ok_and(|eq| criteria.inside(last.x_t, &eq));
        if settled {
            stable.push(i);
        }
    }
    let initial: Vec<(PllState, f64)> = stable
        .iter()
        .map(|&i| {
            let s = test.trajectory(i)[0];
            (s.x0, s.alpha)
        })
        .collect();
    let preds = rollout_at_times(surrogate, &initial, &times, window)?;
    let mut bins = vec![[0.0; 2]; times.len()];
    for (row, &i) in preds.iter().zip(&stable) {
        for ((b, p), s) in bins.iter_mut().zip(row).zip(test.trajectory(i)) {
            b[0] += wrap_angle(p.delta - s.x_t.delta).abs();
            b[1] += (p.omega - s.x_t.omega).abs();
        }
    }
    let m = stable.len().max(1) as f64;
    let mae_vs_time: Vec<(f64, [f64; 2])> = times.iter().zip(&bins).map(|(&t, b)| (t, [b[0] / m, b[1] / m])).collect();
    let k = mae_vs_time.len() as f64;
    let mae_per_state = [
        mae_vs_time.iter().map(|(_, e)| e[0]).sum::<f64>() / k,
        mae_vs_time.iter().map(|(_, e)| e[1]).sum::<f64>() / k,
    ];
    Ok(EvalReport {
        mae_per_state,
        mae_vs_time,
        stable: stable.len(),
        total: n,
    })
}

/// MAE `(delta, omega)` of single-window predictions on labeled samples.
pub fn train_mae(net: &Network, data: &Dataset) -> [f64; 2] {
    let labeled: Vec<&Sample> = data.samples.iter().filter(|s| s.has_label()).collect();
    let inputs: Vec<[f64; INPUT_DIM]> = labeled.iter().map(|s| sample_input(s)).collect();
    let out = net.forward_batch(&inputs);
    let m = labeled.len().max(1) as f64;
    let mut e = [0.0; 2];
    for (s, y) in labeled.iter().zip(&out) {
        e[0] += (y.delta - s.x_t.delta).abs() / m;
        e[1] += (y.omega - s.x_t.omega).abs() / m;
    }
    e
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    pub history: Vec<HistoryRow>,
    /// Evaluation on the full test set after the last iteration.
    pub report: Option<EvalReport>,
}

/// Inputs to [`train`] beyond the configuration.
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub collocation: &'a [CollocationPoint],
    pub test: Option<&'a Dataset>,
}

/// Minibatch Adam training. `on_eval` runs at every evaluation point with
/// the current network and the new history row.
///
/// Labeled and collocation minibatches are drawn with replacement from
/// separate random streams, so adding collocation points never changes the
/// labeled batch sequence.
pub fn train(
    cfg: &TrainConfig,
    data: TrainData<'_>,
    on_eval: &mut dyn FnMut(&Network, &HistoryRow) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let TrainData { train: set, collocation, test } = data;
    if cfg.regime != Regime::Pinn && !collocation.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "collocation points are only used by the pinn regime, got {} for {}",
            collocation.len(),
            cfg.regime
        )));
    }
    let labeled: Vec<Sample> = set.samples.iter().filter(|s| s.has_label()).copied().collect();
    if labeled.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let objective = Objective {
        base: set.params,
        weights: cfg.effective_weights(),
        residual_scale: residual_scale(set)?,
    };
    let mut net = Network::init(cfg.arch, set.norm, cfg.seed)?;
    let mut opt = Adam::new(net.params().len(), cfg.lr).with_decay(cfg.lr_decay, 1000);
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    data_rng.set_stream(1);
    let mut colloc_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    colloc_rng.set_stream(2);

    let window = set.spec.window;
    let criteria = cfg.criteria;
    let eval_test = |net: &Network| -> Result<Option<[f64; 2]>> {
        test.map(|t| evaluate(net, t, window, &criteria, Some(cfg.eval_subsample)).map(|r| r.mae_per_state))
            .transpose()
    };

    let mut ws = Workspace::default();
    let mut grads = vec![0.0; net.params().len()];
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut cbatch = Vec::with_capacity(cfg.collocation_batch);
    let mut history = Vec::new();
    let mut last = (0.0, LossParts::default());

    for it in 0..=cfg.iterations {
        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let parts = if it == 0 {
                let mut probe = Vec::new();
                let mut r = data_rng.clone();
                probe.extend((0..cfg.batch_size).map(|_| labeled[r.gen_range(0..labeled.len())]));
                let p = objective.eval(&net, &probe, &[], &mut ws, None)?;
                (total_loss(&p, &objective.weights), p)
            } else {
                last
            };
            let row = HistoryRow {
                iteration: it,
                loss: parts.0,
                parts: parts.1,
                test_mae: eval_test(&net)?,
            };
            on_eval(&net, &row)?;
            history.push(row);
        }
        if it == cfg.iterations {
            break;
        }
        batch.clear();
        batch.extend((0..cfg.batch_size).map(|_| labeled[data_rng.gen_range(0..labeled.len())]));
        cbatch.clear();
        if !collocation.is_empty() {
            cbatch.extend((0..cfg.collocation_batch).map(|_| collocation[colloc_rng.gen_range(0..collocation.len())]));
        }
        grads.iter_mut().for_each(|g| *g = 0.0);
        let parts = objective.eval(&net, &batch, &cbatch, &mut ws, Some(&mut grads))?;
        let loss = total_loss(&parts, &objective.weights);
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: it, loss });
        }
        opt.step(net.params_mut(), &grads)?;
        last = (loss, parts);
    }

    let report = test
        .map(|t| evaluate(&net, t, window, &criteria, None))
        .transpose()?;
    Ok(TrainOutcome { net, history, report })
}

/// Writes the history as CSV.
pub fn write_history(path: &Path, history: &[HistoryRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "iteration,loss,loss_x,loss_dt,loss_f,test_mae_delta,test_mae_omega")?;
    for r in history {
        let (d, w) = match r.test_mae {
            Some([d, w]) => (d.to_string(), w.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(out, "{},{},{},{},{},{d},{w}", r.iteration, r.loss, r.parts.x, r.parts.dt, r.parts.f)?;
    }
    out.flush()?;
    Ok(())
}
