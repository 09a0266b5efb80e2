//! Run configuration: a TOML file (optional) merged with `--set` overrides
//! and subcommand flags, validated before any work starts.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pllpinn::dataset::DomainSpec;
use pllpinn::fileio::digest;
use pllpinn::nn::{Activation, NetworkArch};
use pllpinn::ode::IntegratorConfig;
use pllpinn::roa::{alpha_grid, LatticeSpec};
use pllpinn::rollout::{EquilibriumCriteria, RolloutConfig};
use pllpinn::rom::PerUnitBase;
use pllpinn::train::{LossWeights, Regime, TrainConfig};
use pllpinn::SystemParams;

use crate::CliError;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "PLLPINN_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub system: SystemSection,
    pub domain: DomainSection,
    pub integrator: IntegratorSection,
    pub data: DataSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub rollout: RolloutSection,
    pub sweep: SweepSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            threads: 0,
            system: SystemSection::default(),
            domain: DomainSection::default(),
            integrator: IntegratorSection::default(),
            data: DataSection::default(),
            network: NetworkSection::default(),
            train: TrainSection::default(),
            loss: LossSection::default(),
            rollout: RolloutSection::default(),
            sweep: SweepSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub s_base: f64,
    pub v_base: f64,
    pub f0: f64,
    pub k_p: f64,
    pub k_i: f64,
    pub l_g_pu: f64,
    pub i_d_pu: f64,
    pub i_q_pu: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        let b = PerUnitBase::default();
        Self {
            s_base: b.s_base,
            v_base: b.v_base,
            f0: b.f0,
            k_p: 0.025,
            k_i: 1.5,
            l_g_pu: pllpinn::rom::DEFAULT_L_G_PU,
            i_d_pu: 1.0,
            i_q_pu: -0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSection {
    pub delta_range: [f64; 2],
    pub omega_range: [f64; 2],
    pub alpha_range: [f64; 2],
    pub window: f64,
    pub test_window: f64,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self {
            delta_range: [-PI, PI],
            omega_range: [-60.0, 60.0],
            alpha_range: [0.1, 2.0],
            window: 0.1,
            test_window: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub dt: f64,
    pub sample_every: usize,
    pub horizon: f64,
    pub blowup_omega: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let d = IntegratorConfig::default();
        Self {
            dt: d.dt,
            sample_every: d.sample_every,
            horizon: 2.0,
            blowup_omega: d.blowup_omega,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train_trajectories: usize,
    pub samples_per_trajectory: usize,
    pub collocation_points: usize,
    pub test_trajectories: usize,
    pub test_times: usize,
    /// Multiplies the three counts above.
    pub scale: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_trajectories: 12_000,
            samples_per_trajectory: 10,
            collocation_points: 24_000,
            test_trajectories: 24_000,
            test_times: 50,
            scale: 1.0,
        }
    }
}

impl DataSection {
    fn scaled(&self, n: usize) -> usize {
        ((n as f64 * self.scale).round() as usize).max(1)
    }

    pub fn train_count(&self) -> usize {
        self.scaled(self.train_trajectories)
    }

    pub fn collocation_count(&self) -> usize {
        self.scaled(self.collocation_points)
    }

    pub fn test_count(&self) -> usize {
        self.scaled(self.test_trajectories)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: String,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let a = NetworkArch::default();
        Self {
            hidden_layers: a.hidden_layers,
            hidden_width: a.hidden_width,
            activation: a.activation.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub regime: String,
    pub iterations: usize,
    pub batch_size: usize,
    pub collocation_batch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub eval_every: usize,
    pub eval_subsample: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            regime: t.regime.name().to_string(),
            iterations: t.iterations,
            batch_size: t.batch_size,
            collocation_batch: t.collocation_batch,
            lr: t.lr,
            lr_decay: t.lr_decay,
            eval_every: t.eval_every,
            eval_subsample: t.eval_subsample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda_x: f64,
    pub lambda_dt: f64,
    pub lambda_f: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda_x: w.lambda_x,
            lambda_dt: w.lambda_dt,
            lambda_f: w.lambda_f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    pub grid_points: usize,
    pub horizon: f64,
    pub blowup_omega: f64,
    /// 0 disables the guard.
    pub max_refeed_omega: f64,
    pub eps_delta: f64,
    pub eps_omega: f64,
    pub dwell: usize,
}

impl Default for RolloutSection {
    fn default() -> Self {
        let r = RolloutConfig::default();
        Self {
            grid_points: r.grid_points,
            horizon: r.horizon,
            blowup_omega: r.blowup_omega,
            max_refeed_omega: r.max_refeed_omega.unwrap_or(0.0),
            eps_delta: r.criteria.eps_delta,
            eps_omega: r.criteria.eps_omega,
            dwell: r.criteria.dwell,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub grid: usize,
    pub alphas: Vec<f64>,
    /// When > 0, replaces `alphas` by this many values spread evenly over
    /// the domain's alpha range.
    pub alpha_count: usize,
    pub method: String,
    pub rom_dt: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            grid: 64,
            alphas: vec![0.5, 1.0, 1.5],
            alpha_count: 0,
            method: "both".into(),
            rom_dt: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Directory receiving all artifacts; the other paths are relative to it
    /// unless absolute.
    pub out_dir: PathBuf,
    pub train_data: PathBuf,
    pub collocation: PathBuf,
    pub test_data: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            out_dir: "runs".into(),
            train_data: "train.dataset".into(),
            collocation: "collocation.dataset".into(),
            test_data: "test.dataset".into(),
        }
    }
}

/// One-line description per key, shown in `--help`.
const KEY_DOCS: &[(&str, &str)] = &[
    ("seed", "master seed for data generation, initialization and minibatches"),
    ("threads", "worker threads (0 = one per core)"),
    ("system.s_base", "rated apparent power (VA)"),
    ("system.v_base", "nominal grid voltage (V)"),
    ("system.f0", "grid frequency (Hz)"),
    ("system.k_p", "PLL proportional gain"),
    ("system.k_i", "PLL integral gain"),
    ("system.l_g_pu", "grid inductance at alpha = 1 (pu); resistance follows from X/R = 16.3"),
    ("system.i_d_pu", "converter d-axis current (pu)"),
    ("system.i_q_pu", "converter q-axis current (pu)"),
    ("domain.delta_range", "initial angle range (rad)"),
    ("domain.omega_range", "initial frequency deviation range (rad/s)"),
    ("domain.alpha_range", "impedance factor range"),
    ("domain.window", "prediction window of the network (s)"),
    ("domain.test_window", "span of test trajectories (s)"),
    ("integrator.dt", "RK4 step for simulate (s); dataset labels always use 1e-4"),
    ("integrator.sample_every", "steps between stored samples in simulate"),
    ("integrator.horizon", "simulate horizon (s)"),
    ("integrator.blowup_omega", "|omega| marking divergence in simulate and labels (rad/s)"),
    ("data.train_trajectories", "labeled training trajectories"),
    ("data.samples_per_trajectory", "random sample times per training trajectory"),
    ("data.collocation_points", "unlabeled collocation points"),
    ("data.test_trajectories", "test trajectories"),
    ("data.test_times", "evenly spaced label times per test trajectory"),
    ("data.scale", "multiplier on the three counts (0.1 = desk scale)"),
    ("network.hidden_layers", "hidden layers"),
    ("network.hidden_width", "units per hidden layer"),
    ("network.activation", "relu or tanh"),
    ("train.regime", "nn, dtnn or pinn"),
    ("train.iterations", "Adam iterations"),
    ("train.batch_size", "labeled samples per iteration"),
    ("train.collocation_batch", "collocation points per iteration (pinn)"),
    ("train.lr", "Adam learning rate"),
    ("train.lr_decay", "learning-rate factor per 1000 iterations"),
    ("train.eval_every", "iterations between test evaluations and checkpoints"),
    ("train.eval_subsample", "test trajectories used for periodic evaluation"),
    ("loss.lambda_x", "weight of the state loss"),
    ("loss.lambda_dt", "weight of the derivative loss at labeled points"),
    ("loss.lambda_f", "weight of the physics residual at collocation points"),
    ("rollout.grid_points", "samples per window"),
    ("rollout.horizon", "rollout horizon (s)"),
    ("rollout.blowup_omega", "|omega| declaring a rollout unstable (rad/s)"),
    (
        "rollout.max_refeed_omega",
        "window-end |omega| above which the rollout stops as undecided instead of feeding back (0 = off)",
    ),
    ("rollout.eps_delta", "equilibrium band in delta (rad)"),
    ("rollout.eps_omega", "equilibrium band in omega (rad/s)"),
    ("rollout.dwell", "consecutive samples inside the band"),
    ("sweep.grid", "lattice points per axis"),
    ("sweep.alphas", "impedance factors to sweep"),
    ("sweep.alpha_count", "if > 0, use this many factors evenly over domain.alpha_range"),
    ("sweep.method", "rom, repinn or both"),
    ("sweep.rom_dt", "RK4 step of the ROM classifier (s)"),
    ("paths.out_dir", "artifact directory"),
    ("paths.train_data", "training dataset file"),
    ("paths.collocation", "collocation file"),
    ("paths.test_data", "test dataset file"),
];

/// Every configuration key with its default and meaning.
pub fn defaults_help() -> String {
    let table = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
    let mut lines = vec!["Configuration keys and defaults (set in a TOML file or with --set key=value):".to_string()];
    for (key, value) in flatten(&table, "") {
        let doc = KEY_DOCS.iter().find(|(k, _)| *k == key).map_or("", |(_, d)| d);
        lines.push(format!("  {key} = {value}\n      {doc}"));
    }
    lines.push(String::new());
    lines.push(format!(
        "The config file defaults to ${CONFIG_ENV} when --config is absent. Exit codes: 0 ok, 2 config error, 3 runtime error."
    ));
    lines.join("\n")
}

fn flatten(table: &toml::Table, prefix: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => out.extend(flatten(t, &key)),
            other => out.push((key, other.to_string())),
        }
    }
    out
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let c = |e: pllpinn::Error| CliError::Config(e.to_string());
        self.system_params().map_err(c)?;
        self.domain().validate().map_err(c)?;
        self.integrator().validate().map_err(c)?;
        self.train_config(None).map_err(c)?.validate().map_err(c)?;
        self.rollout().validate().map_err(c)?;
        if self.data.samples_per_trajectory == 0 || self.data.test_times == 0 || self.data.scale.is_nan() || self.data.scale <= 0.0 {
            return Err(CliError::Config("data counts and scale must be positive".into()));
        }
        if self.sweep.grid == 0 || self.alphas().is_empty() {
            return Err(CliError::Config("sweep needs a grid >= 1 and at least one alpha".into()));
        }
        self.sweep_method()?;
        self.lattice().validate(&self.domain()).map_err(c)?;
        let base = self.system_params().map_err(c)?;
        for a in self.alphas() {
            if !self.domain().contains_alpha(a) {
                return Err(CliError::Config(format!("sweep alpha {a} is outside domain.alpha_range")));
            }
            base.with_alpha(a).map_err(c)?;
        }
        Ok(())
    }

    /// Short SHA-256 of the canonical serialization. File locations and the
    /// thread count do not change results, so they are left out.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsSection::default();
        c.threads = 0;
        digest(c.to_toml().as_bytes())[..16].to_string()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn system_params(&self) -> pllpinn::Result<SystemParams> {
        let s = &self.system;
        SystemParams::from_per_unit(
            PerUnitBase {
                s_base: s.s_base,
                v_base: s.v_base,
                f0: s.f0,
            },
            s.k_p,
            s.k_i,
            s.l_g_pu,
            s.i_d_pu,
            s.i_q_pu,
        )
    }

    pub fn domain(&self) -> DomainSpec {
        let d = &self.domain;
        DomainSpec {
            delta_range: (d.delta_range[0], d.delta_range[1]),
            omega_range: (d.omega_range[0], d.omega_range[1]),
            alpha_range: (d.alpha_range[0], d.alpha_range[1]),
            window: d.window,
            test_window: d.test_window,
        }
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.integrator.dt,
            sample_every: self.integrator.sample_every,
            max_time: self.integrator.horizon,
            blowup_omega: self.integrator.blowup_omega,
        }
    }

    pub fn criteria(&self) -> EquilibriumCriteria {
        EquilibriumCriteria {
            eps_delta: self.rollout.eps_delta,
            eps_omega: self.rollout.eps_omega,
            dwell: self.rollout.dwell,
        }
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig {
            window: self.domain.window,
            grid_points: self.rollout.grid_points,
            horizon: self.rollout.horizon,
            blowup_omega: self.rollout.blowup_omega,
            max_refeed_omega: (self.rollout.max_refeed_omega > 0.0).then_some(self.rollout.max_refeed_omega),
            criteria: self.criteria(),
        }
    }

    pub fn regime(&self) -> pllpinn::Result<Regime> {
        self.train.regime.parse()
    }

    /// Training configuration; `regime` overrides the configured one.
    pub fn train_config(&self, regime: Option<Regime>) -> pllpinn::Result<TrainConfig> {
        let activation: Activation = self.network.activation.parse()?;
        let t = &self.train;
        Ok(TrainConfig {
            regime: match regime {
                Some(r) => r,
                None => self.regime()?,
            },
            weights: LossWeights {
                lambda_x: self.loss.lambda_x,
                lambda_dt: self.loss.lambda_dt,
                lambda_f: self.loss.lambda_f,
            },
            arch: NetworkArch {
                hidden_layers: self.network.hidden_layers,
                hidden_width: self.network.hidden_width,
                activation,
                ..NetworkArch::default()
            },
            batch_size: t.batch_size,
            collocation_batch: t.collocation_batch,
            iterations: t.iterations,
            eval_every: t.eval_every,
            eval_subsample: t.eval_subsample,
            seed: self.seed,
            lr: t.lr,
            lr_decay: t.lr_decay,
            criteria: self.criteria(),
        })
    }

    pub fn alphas(&self) -> Vec<f64> {
        if self.sweep.alpha_count > 0 {
            alpha_grid((self.domain.alpha_range[0], self.domain.alpha_range[1]), self.sweep.alpha_count)
        } else {
            self.sweep.alphas.clone()
        }
    }

    pub fn lattice(&self) -> LatticeSpec {
        LatticeSpec::square(self.sweep.grid, &self.domain())
    }

    /// `(rom, repinn)` flags.
    pub fn sweep_method(&self) -> Result<(bool, bool), CliError> {
        match self.sweep.method.to_ascii_lowercase().as_str() {
            "rom" => Ok((true, false)),
            "repinn" | "re-pinn" => Ok((false, true)),
            "both" => Ok((true, true)),
            m => Err(CliError::Config(format!("sweep.method `{m}`: expected rom, repinn or both"))),
        }
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.paths.out_dir.join(p)
        }
    }

    pub fn model_path(&self, regime: Regime) -> PathBuf {
        self.paths.out_dir.join(format!("model_{}.ckpt", regime.name()))
    }
}

/// Applies `a.b.c=value`; the value is parsed as a TOML literal and falls
/// back to a plain string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
