//! `pllpinn` command-line interface.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{RunConfig, CONFIG_ENV};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or missing inputs (exit 2).
    Config(String),
    /// Failure while doing the work (exit 3).
    Runtime(String),
}

impl From<pllpinn::Error> for CliError {
    fn from(e: pllpinn::Error) -> Self {
        use pllpinn::Error as E;
        match e {
            E::InvalidParams(_) | E::InvalidAlpha(_) | E::IllPosed { .. } | E::InvalidConfig(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "pllpinn",
    version,
    about = "PLL synchronization stability: ROM simulation, physics-informed surrogate training and region-of-attraction sweeps",
    after_long_help = config::defaults_help()
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// TOML config file (default: $PLLPINN_CONFIG if set)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. --set train.lr=0.003 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Master seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Artifact directory
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate the ROM from one initial state and classify it
    Simulate(SimulateArgs),
    /// Generate training, collocation and test sets
    Gen(GenArgs),
    /// Train a network in one regime
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test set with recurrent rollout
    Eval(EvalArgs),
    /// Roll a checkpoint (or the exact ROM flow) out from one initial state
    Rollout(RolloutArgs),
    /// Region-of-attraction sweep with the ROM, the network or both
    Roa(RoaArgs),
    /// Compare two saved region-of-attraction maps
    Compare(CompareArgs),
    /// Render a saved map, or training histories as an error curve
    Render(RenderArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub delta0: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub omega0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Start at this angle in degrees with zero frequency deviation
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["delta0", "omega0"])]
    pub phase_jump: Option<f64>,
    /// Start at the equilibrium of the chosen alpha
    #[arg(long, conflicts_with_all = ["delta0", "omega0", "phase_jump"])]
    pub at_equilibrium: bool,
    /// Trajectory CSV (default: <out_dir>/simulate.csv)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Multiply all set sizes (0.1 gives the desk-scale set)
    #[arg(long)]
    pub scale: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// nn, dtnn or pinn
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Checkpoint path (default: <out_dir>/model_<regime>.ckpt)
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint (default: <out_dir>/model_<train.regime>.ckpt)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Evaluate only the first N test trajectories
    #[arg(long)]
    pub max_trajectories: Option<usize>,
    /// MAE-vs-time CSV (default: next to the checkpoint)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use the exact ROM flow map instead of a network
    #[arg(long, conflicts_with = "model")]
    pub oracle: bool,
    #[arg(long, allow_hyphen_values = true)]
    pub delta0: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub omega0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RoaArgs {
    /// rom, repinn or both
    #[arg(long)]
    pub method: Option<String>,
    /// Lattice points per axis
    #[arg(long)]
    pub grid: Option<usize>,
    /// A count spread over the alpha range (e.g. 10) or a list (e.g. 0.5,1,1.5)
    #[arg(long)]
    pub alphas: Option<String>,
    /// Checkpoint for the repinn method
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Upper end of the heatmap color ramp (s)
    #[arg(long, default_value_t = 1.0)]
    pub t_max: f64,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Reference map (normally the ROM)
    pub reference: PathBuf,
    /// Candidate map
    pub candidate: PathBuf,
    /// Also write the report here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// One map file, or one or more training history CSVs
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output SVG (default: input with .svg)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output CSV matrix for a map (default: input with .csv)
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub t_max: f64,
}

fn load_config(g: &GlobalOpts) -> Result<RunConfig, CliError> {
    let path = g
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
    let mut cfg = RunConfig::load(path.as_deref(), &g.overrides)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    if let Some(d) = &g.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli.global)?;
    commands::apply_flags(&mut cfg, &cli.command)?;
    cfg.validate()?;
    if cfg.threads > 0 {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    std::fs::create_dir_all(&cfg.paths.out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", cfg.paths.out_dir.display())))?;
    commands::run(&cfg, &cli.command)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
