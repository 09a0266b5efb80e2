//! Labeled trajectory samples and unlabeled collocation points drawn over
//! the domain of initial states, prediction times and impedance factors.

use std::cell::Cell;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fileio::{read_file, write_file, Fields, Header};
use crate::ode::DenseSolution;
use crate::rom::{PllState, RawParams, SystemParams};

pub const DATASET_MAGIC: &str = "pllpinn-dataset v1";

/// Step used to solve trajectories for labels (s).
pub const LABEL_DT: f64 = 1e-4;

/// Blow-up bound on `|omega|` while generating labels (rad/s).
pub const LABEL_BLOWUP_OMEGA: f64 = 500.0;

thread_local! {
    static SOLVES: Cell<usize> = const { Cell::new(0) };
}

/// Trajectory solves performed on the current thread so far.
pub fn solves_on_this_thread() -> usize {
    SOLVES.with(Cell::get)
}

fn count_solve() {
    SOLVES.with(|c| c.set(c.get() + 1));
}

/// Sampling domain for initial states, impedance factors and times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub delta_range: (f64, f64),
    pub omega_range: (f64, f64),
    pub alpha_range: (f64, f64),
    /// Span of labeled training trajectories (s).
    pub window: f64,
    /// Span of evaluation trajectories (s).
    pub test_window: f64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            delta_range: (-PI, PI),
            omega_range: (-60.0, 60.0),
            alpha_range: (0.1, 2.0),
            window: 0.1,
            test_window: 1.0,
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("delta_range", self.delta_range),
            ("omega_range", self.omega_range),
            ("alpha_range", self.alpha_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidConfig(format!("{name} must be a nonempty interval, got [{lo}, {hi}]")));
            }
        }
        if !(self.alpha_range.0 > 0.0) {
            return Err(Error::InvalidConfig("alpha_range must be positive".into()));
        }
        if !(self.window > 0.0 && self.test_window > 0.0) {
            return Err(Error::InvalidConfig("windows must be > 0".into()));
        }
        Ok(())
    }

    pub fn contains_state(&self, s: PllState) -> bool {
        (self.delta_range.0..=self.delta_range.1).contains(&s.delta)
            && (self.omega_range.0..=self.omega_range.1).contains(&s.omega)
    }

    pub fn contains_alpha(&self, alpha: f64) -> bool {
        (self.alpha_range.0..=self.alpha_range.1).contains(&alpha)
    }
}

/// One labeled point: the state at time `t` of the trajectory from `x0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x0: PllState,
    pub alpha: f64,
    /// Label. Both components are NaN when the source trajectory diverged
    /// before `t` (fixed sample times only).
    pub x_t: PllState,
}

impl Sample {
    pub fn has_label(&self) -> bool {
        self.x_t.is_finite()
    }
}

/// Unlabeled input where only the physics residual is enforced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollocationPoint {
    pub t: f64,
    pub x0: PllState,
    pub alpha: f64,
}

/// Standardization constants for network inputs `(t, delta0, omega0, alpha)`
/// and output scales for `(delta, omega)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub input_mean: [f64; 4],
    pub input_std: [f64; 4],
    pub output_scale: [f64; 2],
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            input_mean: [0.0; 4],
            input_std: [1.0; 4],
            output_scale: [1.0; 2],
        }
    }
}

impl NormStats {
    /// Input statistics from the samples; output scales are the standard
    /// deviations of a uniform draw over the state domain.
    pub fn from_samples(samples: &[Sample], spec: &DomainSpec) -> Self {
        let inputs: Vec<[f64; 4]> = samples
            .iter()
            .map(|s| [s.t, s.x0.delta, s.x0.omega, s.alpha])
            .collect();
        let (input_mean, input_std) = mean_std(&inputs);
        let uniform_sd = |(lo, hi): (f64, f64)| (hi - lo) / 12f64.sqrt();
        Self {
            input_mean,
            input_std,
            output_scale: [uniform_sd(spec.delta_range), uniform_sd(spec.omega_range)],
        }
    }
}

/// Per-column mean and standard deviation; degenerate columns get std 1.
pub(crate) fn mean_std<const N: usize>(rows: &[[f64; N]]) -> ([f64; N], [f64; N]) {
    let n = rows.len().max(1) as f64;
    let mut mean = [0.0; N];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; N];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let std = var.map(|s| {
        let sd = (s / n).sqrt();
        if sd > 0.0 && sd.is_finite() {
            sd
        } else {
            1.0
        }
    });
    (mean, std)
}

/// How prediction times are chosen along each labeled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleTimes {
    /// `n` times drawn uniformly within the span (before divergence).
    Random(usize),
    /// The same times for every trajectory.
    Fixed(Vec<f64>),
}

impl SampleTimes {
    pub fn per_trajectory(&self) -> usize {
        match self {
            SampleTimes::Random(n) => *n,
            SampleTimes::Fixed(ts) => ts.len(),
        }
    }

    /// `n` evenly spaced times `span * k / n`, `k = 1..=n`.
    pub fn uniform_grid(span: f64, n: usize) -> Self {
        SampleTimes::Fixed((1..=n).map(|k| span * k as f64 / n as f64).collect())
    }
}

/// Labeled samples grouped by source trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub spec: DomainSpec,
    pub seed: u64,
    /// Base parameters at `alpha = 1`; each sample uses `params.with_alpha(sample.alpha)`.
    pub params: SystemParams,
    /// Span of every source trajectory (s).
    pub span: f64,
    pub trajectories: usize,
    pub samples_per_trajectory: usize,
    pub norm: NormStats,
}

impl Dataset {
    pub fn trajectory(&self, index: usize) -> &[Sample] {
        let k = self.samples_per_trajectory;
        &self.samples[index * k..(index + 1) * k]
    }

    pub fn iter_trajectories(&self) -> impl Iterator<Item = &[Sample]> {
        self.samples.chunks(self.samples_per_trajectory.max(1))
    }

    /// Dataset holding only the first `n` trajectories.
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.trajectories);
        Dataset {
            samples: self.samples[..n * self.samples_per_trajectory].to_vec(),
            trajectories: n,
            ..self.clone()
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform initial state and impedance factor.
pub fn sample_initial<R: Rng + ?Sized>(rng: &mut R, spec: &DomainSpec) -> (PllState, f64) {
    let delta = rng.gen_range(spec.delta_range.0..=spec.delta_range.1);
    let omega = rng.gen_range(spec.omega_range.0..=spec.omega_range.1);
    let alpha = rng.gen_range(spec.alpha_range.0..=spec.alpha_range.1);
    (PllState::new(delta, omega), alpha)
}

/// Integrates `n_traj` random trajectories over `span` and labels each at
/// the requested times.
///
/// Trajectory `i` draws from its own ChaCha stream `i` of `seed`, so the
/// output does not depend on how work is scheduled across threads. Labels
/// are the solver state at exactly `t`: whole steps of [`LABEL_DT`] from the
/// stored dense solution followed by one partial step.
pub fn generate_labeled(
    n_traj: usize,
    times: &SampleTimes,
    spec: &DomainSpec,
    span: f64,
    params: &SystemParams,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    if n_traj == 0 || times.per_trajectory() == 0 {
        return Err(Error::InvalidConfig("need at least one trajectory and one sample per trajectory".into()));
    }
    if !(span > 0.0) {
        return Err(Error::InvalidConfig("span must be > 0".into()));
    }
    if let SampleTimes::Fixed(ts) = times {
        if ts.iter().any(|t| !(0.0..=span).contains(t)) {
            return Err(Error::InvalidConfig("fixed sample times must lie within the span".into()));
        }
    }
    let base = params.with_alpha(1.0)?;
    // Impedance factors must admit valid dynamics over the whole range.
    base.with_alpha(spec.alpha_range.0)?;
    base.with_alpha(spec.alpha_range.1)?;

    let per_traj: Vec<Vec<Sample>> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let (x0, alpha) = sample_initial(&mut rng, spec);
            let p = base.with_alpha(alpha).expect("alpha within validated range");
            count_solve();
            let dense = DenseSolution::solve(x0, &p, LABEL_DT, span, LABEL_BLOWUP_OMEGA);
            let end = dense.diverged_at.unwrap_or(span).min(span);
            let label = |t: f64| {
                if t <= end {
                    dense.state_at(t)
                } else {
                    PllState::new(f64::NAN, f64::NAN)
                }
            };
            match times {
                SampleTimes::Random(n) => (0..*n)
                    .map(|_| {
                        let t = rng.gen_range(0.0..=end);
                        Sample { t, x0, alpha, x_t: label(t) }
                    })
                    .collect(),
                SampleTimes::Fixed(ts) => ts
                    .iter()
                    .map(|&t| Sample { t, x0, alpha, x_t: label(t) })
                    .collect(),
            }
        })
        .collect();

    let samples: Vec<Sample> = per_traj.into_iter().flatten().collect();
    let norm = NormStats::from_samples(&samples, spec);
    Ok(Dataset {
        samples,
        spec: *spec,
        seed,
        params: base,
        span,
        trajectories: n_traj,
        samples_per_trajectory: times.per_trajectory(),
        norm,
    })
}

/// Unlabeled points uniform over `(t, delta, omega, alpha)` with
/// `t in [0, spec.window]`. No trajectory is solved.
pub fn generate_collocation(n: usize, spec: &DomainSpec, seed: u64) -> Result<Vec<CollocationPoint>> {
    spec.validate()?;
    let mut rng = stream_rng(seed, u64::MAX);
    Ok((0..n)
        .map(|_| {
            let t = rng.gen_range(0.0..=spec.window);
            let (x0, alpha) = sample_initial(&mut rng, spec);
            CollocationPoint { t, x0, alpha }
        })
        .collect())
}

/// Collocation points with the metadata needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub points: Vec<CollocationPoint>,
    pub spec: DomainSpec,
    pub seed: u64,
}

fn write_common(h: &mut Header, kind: &str, seed: u64, spec: &DomainSpec) {
    h.push("kind", kind);
    h.push("seed", seed);
    h.push_floats("delta_range", &[spec.delta_range.0, spec.delta_range.1]);
    h.push_floats("omega_range", &[spec.omega_range.0, spec.omega_range.1]);
    h.push_floats("alpha_range", &[spec.alpha_range.0, spec.alpha_range.1]);
    h.push_floats("window", &[spec.window]);
    h.push_floats("test_window", &[spec.test_window]);
}

fn read_spec(f: &Fields) -> Result<DomainSpec> {
    let pair = |k: &str| -> Result<(f64, f64)> {
        let [a, b] = f.float_array::<2>(k)?;
        Ok((a, b))
    };
    let spec = DomainSpec {
        delta_range: pair("delta_range")?,
        omega_range: pair("omega_range")?,
        alpha_range: pair("alpha_range")?,
        window: f.get("window")?,
        test_window: f.get("test_window")?,
    };
    spec.validate().map_err(|e| Error::Malformed(e.to_string()))?;
    Ok(spec)
}

fn expect_kind(f: &Fields, kind: &str) -> Result<()> {
    let found = f.raw("kind")?;
    if found != kind {
        return Err(Error::Malformed(format!("expected a {kind} file, found {found}")));
    }
    Ok(())
}

pub(crate) fn params_to_floats(p: &SystemParams) -> [f64; 8] {
    let r = p.raw();
    [r.k_p, r.k_i, r.v_g, r.r_lg, r.l_g, r.i_d, r.i_q, r.omega_g]
}

pub(crate) fn params_from_floats(v: [f64; 8]) -> Result<SystemParams> {
    SystemParams::new(RawParams {
        k_p: v[0],
        k_i: v[1],
        v_g: v[2],
        r_lg: v[3],
        l_g: v[4],
        i_d: v[5],
        i_q: v[6],
        omega_g: v[7],
        alpha: 1.0,
    })
    .map_err(|e| Error::Malformed(e.to_string()))
}

const LABELED_WIDTH: usize = 6;
const COLLOCATION_WIDTH: usize = 4;

impl Dataset {
    /// Writes the dataset; records are `(t, delta0, omega0, alpha, delta_t, omega_t)`.
    /// `config_digest` identifies the run configuration that produced it.
    pub fn save(&self, path: &Path, config_digest: &str) -> Result<()> {
        let mut h = Header::default();
        write_common(&mut h, "labeled", self.seed, &self.spec);
        h.push("config", config_digest);
        h.push_floats("span", &[self.span]);
        h.push_floats("params", &params_to_floats(&self.params));
        h.push("trajectories", self.trajectories);
        h.push("samples_per_trajectory", self.samples_per_trajectory);
        h.push_floats("norm_mean", &self.norm.input_mean);
        h.push_floats("norm_std", &self.norm.input_std);
        h.push_floats("output_scale", &self.norm.output_scale);
        h.push("record_width", LABELED_WIDTH);
        h.push("records", self.samples.len());
        let payload: Vec<f64> = self
            .samples
            .iter()
            .flat_map(|s| [s.t, s.x0.delta, s.x0.omega, s.alpha, s.x_t.delta, s.x_t.omega])
            .collect();
        write_file(path, DATASET_MAGIC, &h, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (f, payload) = read_file(path, DATASET_MAGIC)?;
        expect_kind(&f, "labeled")?;
        let spec = read_spec(&f)?;
        let width: usize = f.get("record_width")?;
        let records: usize = f.get("records")?;
        let trajectories: usize = f.get("trajectories")?;
        let samples_per_trajectory: usize = f.get("samples_per_trajectory")?;
        if width != LABELED_WIDTH {
            return Err(Error::Malformed(format!("record_width {width}, expected {LABELED_WIDTH}")));
        }
        if payload.len() != records * width || records != trajectories * samples_per_trajectory {
            return Err(Error::Malformed(format!(
                "payload holds {} floats; header declares {records} records of {width} ({trajectories} x {samples_per_trajectory})",
                payload.len()
            )));
        }
        let samples = payload
            .chunks_exact(width)
            .map(|r| Sample {
                t: r[0],
                x0: PllState::new(r[1], r[2]),
                alpha: r[3],
                x_t: PllState::new(r[4], r[5]),
            })
            .collect();
        Ok(Dataset {
            samples,
            spec,
            seed: f.get("seed")?,
            params: params_from_floats(f.float_array("params")?)?,
            span: f.get("span")?,
            trajectories,
            samples_per_trajectory,
            norm: NormStats {
                input_mean: f.float_array("norm_mean")?,
                input_std: f.float_array("norm_std")?,
                output_scale: f.float_array("output_scale")?,
            },
        })
    }
}

impl CollocationSet {
    pub fn generate(n: usize, spec: &DomainSpec, seed: u64) -> Result<Self> {
        Ok(Self {
            points: generate_collocation(n, spec, seed)?,
            spec: *spec,
            seed,
        })
    }

    /// Writes the set; records are `(t, delta0, omega0, alpha)`.
    pub fn save(&self, path: &Path, config_digest: &str) -> Result<()> {
        let mut h = Header::default();
        write_common(&mut h, "collocation", self.seed, &self.spec);
        h.push("config", config_digest);
        h.push("record_width", COLLOCATION_WIDTH);
        h.push("records", self.points.len());
        let payload: Vec<f64> = self
            .points
            .iter()
            .flat_map(|p| [p.t, p.x0.delta, p.x0.omega, p.alpha])
            .collect();
        write_file(path, DATASET_MAGIC, &h, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (f, payload) = read_file(path, DATASET_MAGIC)?;
        expect_kind(&f, "collocation")?;
        let spec = read_spec(&f)?;
        let width: usize = f.get("record_width")?;
        let records: usize = f.get("records")?;
        if width != COLLOCATION_WIDTH || payload.len() != records * width {
            return Err(Error::Malformed("collocation payload does not match header".into()));
        }
        let points = payload
            .chunks_exact(width)
            .map(|r| CollocationPoint {
                t: r[0],
                x0: PllState::new(r[1], r[2]),
                alpha: r[3],
            })
            .collect();
        Ok(Self {
            points,
            spec,
            seed: f.get("seed")?,
        })
    }
}
