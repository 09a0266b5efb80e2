//! Region-of-attraction maps: stability labels over a lattice of initial
//! states per impedance factor, from the ROM integrator or a recurrent
//! surrogate, plus map comparison and rendering.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::DomainSpec;
use crate::error::{Error, Result};
use crate::fileio::{digest, read_file, write_file, Header};
use crate::ode::rk4_step;
use crate::rollout::{rollout_batch, Detector, RolloutConfig, Surrogate, Verdict};
use crate::rom::{wrap_angle, PllState, SystemParams};

pub const MAP_MAGIC: &str = "pllpinn-roa v1";
const PARTIAL_MAGIC: &str = "pllpinn-roa-partial v1";

/// CSV cell value for points that do not settle.
pub const UNSTABLE_SENTINEL: f64 = -1.0;

/// Points classified between partial-result flushes.
pub const SWEEP_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StabilityLabel {
    Stable { t_eq: f64 },
    /// `undecided` marks points that neither settled nor blew up within the
    /// horizon; they count as unstable.
    Unstable { undecided: bool },
}

impl StabilityLabel {
    pub fn is_stable(&self) -> bool {
        matches!(self, StabilityLabel::Stable { .. })
    }

    pub fn t_eq(&self) -> Option<f64> {
        match *self {
            StabilityLabel::Stable { t_eq } => Some(t_eq),
            StabilityLabel::Unstable { .. } => None,
        }
    }

    fn from_verdict(verdict: Verdict, t_eq: Option<f64>) -> Self {
        match (verdict, t_eq) {
            (Verdict::Stable, Some(t_eq)) => StabilityLabel::Stable { t_eq },
            (Verdict::Undecided, _) => StabilityLabel::Unstable { undecided: true },
            _ => StabilityLabel::Unstable { undecided: false },
        }
    }

    fn code(&self) -> (f64, f64) {
        match *self {
            StabilityLabel::Stable { t_eq } => (0.0, t_eq),
            StabilityLabel::Unstable { undecided: false } => (1.0, f64::NAN),
            StabilityLabel::Unstable { undecided: true } => (2.0, f64::NAN),
        }
    }

    fn from_code(code: f64, t_eq: f64) -> Result<Self> {
        match code as i64 {
            0 if t_eq >= 0.0 => Ok(StabilityLabel::Stable { t_eq }),
            1 => Ok(StabilityLabel::Unstable { undecided: false }),
            2 => Ok(StabilityLabel::Unstable { undecided: true }),
            _ => Err(Error::Malformed(format!("bad label record ({code}, {t_eq})"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rom,
    RePinn,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Rom => "rom",
            Method::RePinn => "repinn",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rom" => Ok(Method::Rom),
            "repinn" | "re-pinn" => Ok(Method::RePinn),
            _ => Err(Error::InvalidConfig(format!("unknown method `{s}` (expected rom or repinn)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Evenly spaced `n_delta x n_omega` lattice with both endpoints included.
/// Points are stored row-major with rows indexed by omega.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub n_delta: usize,
    pub n_omega: usize,
    pub delta_range: (f64, f64),
    pub omega_range: (f64, f64),
}

impl LatticeSpec {
    /// Square lattice over the full state domain.
    pub fn square(n: usize, domain: &DomainSpec) -> Self {
        Self {
            n_delta: n,
            n_omega: n,
            delta_range: domain.delta_range,
            omega_range: domain.omega_range,
        }
    }

    pub fn len(&self) -> usize {
        self.n_delta * self.n_omega
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        if self.n_delta == 0 || self.n_omega == 0 {
            return Err(Error::InvalidConfig("lattice needs at least one point per axis".into()));
        }
        let within = |(lo, hi): (f64, f64), (dlo, dhi): (f64, f64)| lo <= hi && lo >= dlo && hi <= dhi;
        if !within(self.delta_range, domain.delta_range) || !within(self.omega_range, domain.omega_range) {
            return Err(Error::InvalidConfig(format!(
                "lattice {:?} x {:?} is not inside the domain {:?} x {:?}",
                self.delta_range, self.omega_range, domain.delta_range, domain.omega_range
            )));
        }
        Ok(())
    }

    pub fn deltas(&self) -> Vec<f64> {
        linspace(self.delta_range, self.n_delta)
    }

    pub fn omegas(&self) -> Vec<f64> {
        linspace(self.omega_range, self.n_omega)
    }

    pub fn point(&self, index: usize) -> PllState {
        let (row, col) = (index / self.n_delta, index % self.n_delta);
        PllState::new(
            lin_at(self.delta_range, self.n_delta, col),
            lin_at(self.omega_range, self.n_omega, row),
        )
    }

    fn floats(&self) -> [f64; 6] {
        [
            self.n_delta as f64,
            self.n_omega as f64,
            self.delta_range.0,
            self.delta_range.1,
            self.omega_range.0,
            self.omega_range.1,
        ]
    }

    fn from_floats(v: [f64; 6]) -> Result<Self> {
        if v[0] < 1.0 || v[1] < 1.0 || v[0].fract() != 0.0 || v[1].fract() != 0.0 {
            return Err(Error::Malformed("bad lattice size".into()));
        }
        Ok(Self {
            n_delta: v[0] as usize,
            n_omega: v[1] as usize,
            delta_range: (v[2], v[3]),
            omega_range: (v[4], v[5]),
        })
    }
}

fn lin_at((lo, hi): (f64, f64), n: usize, i: usize) -> f64 {
    if n == 1 {
        0.5 * (lo + hi)
    } else if i + 1 == n {
        hi
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

fn linspace(range: (f64, f64), n: usize) -> Vec<f64> {
    (0..n).map(|i| lin_at(range, n, i)).collect()
}

/// `n` impedance factors evenly spaced over `range`, endpoints included.
pub fn alpha_grid(range: (f64, f64), n: usize) -> Vec<f64> {
    linspace(range, n)
}

/// How a point is classified.
#[derive(Clone, Copy)]
pub enum Classifier<'a> {
    /// Direct RK4 integration of the ROM with step `dt`.
    Rom { dt: f64 },
    /// Recurrent rollout of a fixed-window predictor.
    Surrogate(&'a dyn Surrogate),
}

impl Classifier<'_> {
    pub fn method(&self) -> Method {
        match self {
            Classifier::Rom { .. } => Method::Rom,
            Classifier::Surrogate(_) => Method::RePinn,
        }
    }
}

/// Integrates the ROM and applies the same detection as the rollout: samples
/// on the rollout grid starting at `t = 0`, blow-up checked at samples.
pub fn classify_rom(
    x0: PllState,
    alpha: f64,
    base: &SystemParams,
    cfg: &RolloutConfig,
    dt: f64,
) -> Result<StabilityLabel> {
    let stride = rom_stride(cfg, dt)?;
    let p = base.with_alpha(alpha)?;
    let mut det = p.equilibrium().ok().map(|e| Detector::new(cfg.criteria, e));
    let grid = cfg.window_grid();
    let mut observe = |t: f64, s: PllState| -> Option<StabilityLabel> {
        if !s.is_finite() {
            return Some(StabilityLabel::Unstable { undecided: true });
        }
        if s.omega.abs() > cfg.blowup_omega {
            return Some(StabilityLabel::Unstable { undecided: false });
        }
        det.as_mut()?.push(t, s).map(|t_eq| StabilityLabel::Stable { t_eq })
    };
    if let Some(label) = observe(0.0, x0) {
        return Ok(label);
    }
    let mut s = x0;
    for k in 0..cfg.max_windows() {
        let t0 = k as f64 * cfg.window;
        for &tg in &grid {
            for _ in 0..stride {
                s = rk4_step(&p, s, dt);
            }
            if let Some(label) = observe(t0 + tg, s) {
                return Ok(label);
            }
        }
        // Same re-anchoring as the rollout so both see identical angles.
        s = PllState::new(wrap_angle(s.delta), s.omega);
    }
    Ok(StabilityLabel::Unstable { undecided: true })
}

fn rom_stride(cfg: &RolloutConfig, dt: f64) -> Result<usize> {
    cfg.validate()?;
    let ratio = cfg.window / cfg.grid_points as f64 / dt;
    let stride = ratio.round();
    if !(dt > 0.0) || stride < 1.0 || (ratio - stride).abs() > 1e-6 * stride {
        return Err(Error::InvalidConfig(format!(
            "sample spacing {} s is not a whole number of steps of {dt} s",
            cfg.window / cfg.grid_points as f64
        )));
    }
    Ok(stride as usize)
}

/// Classifies one initial state.
pub fn classify(
    x0: PllState,
    alpha: f64,
    classifier: Classifier<'_>,
    base: &SystemParams,
    cfg: &RolloutConfig,
) -> Result<StabilityLabel> {
    Ok(classify_many(&[(x0, alpha)], classifier, base, cfg)?[0])
}

/// Classifies a batch; output order follows `points`.
pub fn classify_many(
    points: &[(PllState, f64)],
    classifier: Classifier<'_>,
    base: &SystemParams,
    cfg: &RolloutConfig,
) -> Result<Vec<StabilityLabel>> {
    match classifier {
        Classifier::Rom { dt } => {
            rom_stride(cfg, dt)?;
            points
                .par_iter()
                .map(|&(x0, a)| classify_rom(x0, a, base, cfg, dt))
                .collect()
        }
        Classifier::Surrogate(s) => Ok(rollout_batch(s, points, base, cfg)?
            .into_iter()
            .map(|r| StabilityLabel::from_verdict(r.verdict, r.t_eq))
            .collect()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoaMap {
    pub method: Method,
    pub alpha: f64,
    pub lattice: LatticeSpec,
    pub labels: Vec<StabilityLabel>,
}

impl RoaMap {
    pub fn stable_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_stable()).count()
    }

    pub fn undecided_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, StabilityLabel::Unstable { undecided: true }))
            .count()
    }

    pub fn save(&self, path: &Path, config_digest: &str) -> Result<()> {
        let mut h = Header::default();
        h.push("method", self.method);
        h.push_floats("alpha", &[self.alpha]);
        h.push_floats("lattice", &self.lattice.floats());
        h.push("config", config_digest);
        let payload: Vec<f64> = self
            .labels
            .iter()
            .flat_map(|l| {
                let (c, t) = l.code();
                [c, t]
            })
            .collect();
        write_file(path, MAP_MAGIC, &h, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (f, payload) = read_file(path, MAP_MAGIC)?;
        let method: Method = f.raw("method")?.parse()?;
        let [alpha] = f.float_array::<1>("alpha")?;
        let lattice = LatticeSpec::from_floats(f.float_array("lattice")?)?;
        if payload.len() != 2 * lattice.len() {
            return Err(Error::Malformed(format!(
                "{} label records for a lattice of {}",
                payload.len() / 2,
                lattice.len()
            )));
        }
        let labels = payload
            .chunks_exact(2)
            .map(|c| StabilityLabel::from_code(c[0], c[1]))
            .collect::<Result<_>>()?;
        Ok(Self {
            method,
            alpha,
            lattice,
            labels,
        })
    }
}

/// Sweep bookkeeping supplied by the caller.
#[derive(Default)]
pub struct SweepOptions<'a> {
    /// File receiving completed chunks; an existing file for the same sweep
    /// is resumed and the file is removed once the sweep finishes.
    pub partial: Option<PathBuf>,
    /// Identifies the predictor (e.g. a checkpoint digest) so a partial file
    /// from another model is never resumed.
    pub tag: String,
    /// Called with `(points done, points total)` after each chunk.
    pub progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
}

/// One map per impedance factor. Results do not depend on chunking,
/// resumption or thread count.
pub fn sweep(
    lattice: &LatticeSpec,
    domain: &DomainSpec,
    alphas: &[f64],
    classifier: Classifier<'_>,
    base: &SystemParams,
    cfg: &RolloutConfig,
    opts: &SweepOptions<'_>,
) -> Result<Vec<RoaMap>> {
    lattice.validate(domain)?;
    cfg.validate()?;
    if let Classifier::Rom { dt } = classifier {
        rom_stride(cfg, dt)?;
    }
    for &a in alphas {
        base.with_alpha(a)?;
    }
    let n = lattice.len();
    let total = n * alphas.len();
    let mut labels: Vec<Vec<Option<StabilityLabel>>> = vec![vec![None; n]; alphas.len()];

    let key = sweep_key(lattice, alphas, classifier, base, cfg, &opts.tag);
    let mut store = match &opts.partial {
        Some(path) => Some(PartialStore::open(path, &key, &mut labels)?),
        None => None,
    };

    let pending: Vec<(usize, usize)> = (0..alphas.len())
        .flat_map(|a| (0..n).map(move |i| (a, i)))
        .filter(|&(a, i)| labels[a][i].is_none())
        .collect();
    let mut done = total - pending.len();
    for chunk in pending.chunks(SWEEP_CHUNK) {
        let points: Vec<(PllState, f64)> = chunk.iter().map(|&(a, i)| (lattice.point(i), alphas[a])).collect();
        let out = classify_many(&points, classifier, base, cfg)?;
        if let Some(store) = &mut store {
            store.append(chunk, &out)?;
        }
        for (&(a, i), l) in chunk.iter().zip(out) {
            labels[a][i] = Some(l);
        }
        done += chunk.len();
        if let Some(report) = opts.progress {
            report(done, total);
        }
    }
    if let Some(store) = store {
        store.finish()?;
    }

    Ok(alphas
        .iter()
        .zip(labels)
        .map(|(&alpha, ls)| RoaMap {
            method: classifier.method(),
            alpha,
            lattice: *lattice,
            labels: ls.into_iter().map(|l| l.expect("every point classified")).collect(),
        })
        .collect())
}

fn sweep_key(
    lattice: &LatticeSpec,
    alphas: &[f64],
    classifier: Classifier<'_>,
    base: &SystemParams,
    cfg: &RolloutConfig,
    tag: &str,
) -> String {
    let dt = match classifier {
        Classifier::Rom { dt } => dt,
        Classifier::Surrogate(_) => 0.0,
    };
    let text = format!(
        "{}|{:?}|{:?}|{dt:?}|{:?}|{:?}|{tag}",
        classifier.method(),
        lattice.floats(),
        alphas,
        base.raw(),
        cfg
    );
    digest(text.as_bytes())[..16].to_string()
}

/// Append-only text log of finished points: `alpha_index point_index code t_eq`.
struct PartialStore {
    path: PathBuf,
    out: BufWriter<File>,
}

impl PartialStore {
    fn open(path: &Path, key: &str, labels: &mut [Vec<Option<StabilityLabel>>]) -> Result<Self> {
        let header = format!("{PARTIAL_MAGIC} {key}");
        let mut resumed = false;
        if path.exists() {
            let text = fs::read_to_string(path)?;
            // Only newline-terminated lines are complete; the final segment
            // may have been cut short by an interruption.
            let mut lines = text.split('\n');
            let complete = text.matches('\n').count();
            match lines.next() {
                Some(first) if complete > 0 && first == header => {
                    resumed = true;
                    for line in lines.take(complete - 1) {
                        if let Some((a, i, l)) = parse_partial(line) {
                            if let Some(slot) = labels.get_mut(a).and_then(|v| v.get_mut(i)) {
                                *slot = Some(l);
                            }
                        }
                    }
                }
                Some(first) if first.starts_with(PARTIAL_MAGIC) => {
                    return Err(Error::InvalidConfig(format!(
                        "partial results in {} belong to a different sweep; remove the file to restart",
                        path.display()
                    )));
                }
                _ => {
                    return Err(Error::Malformed(format!("{} is not a sweep partial file", path.display())));
                }
            }
        }
        let file = if resumed {
            OpenOptions::new().append(true).open(path)?
        } else {
            let mut f = File::create(path)?;
            writeln!(f, "{header}")?;
            f
        };
        let mut out = BufWriter::new(file);
        if resumed {
            // terminate a possibly torn last line
            writeln!(out)?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            out,
        })
    }

    fn append(&mut self, chunk: &[(usize, usize)], labels: &[StabilityLabel]) -> Result<()> {
        for (&(a, i), l) in chunk.iter().zip(labels) {
            let (c, t) = l.code();
            writeln!(self.out, "{a} {i} {c} {t:?}")?;
        }
        self.out.flush()?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        drop(self.out);
        fs::remove_file(&self.path)?;
        Ok(())
    }
}

fn parse_partial(line: &str) -> Option<(usize, usize, StabilityLabel)> {
    let mut it = line.split_whitespace();
    let a = it.next()?.parse().ok()?;
    let i = it.next()?.parse().ok()?;
    let c: f64 = it.next()?.parse().ok()?;
    let t: f64 = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((a, i, StabilityLabel::from_code(c, t).ok()?))
}

/// Agreement between a reference map (normally the ROM) and a candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConfusionStats {
    pub both_stable: usize,
    pub both_unstable: usize,
    /// Candidate stable where the reference is unstable.
    pub false_stable: usize,
    /// Candidate unstable where the reference is stable.
    pub false_unstable: usize,
    /// Sum of `|t_eq difference|` over jointly stable points.
    pub t_eq_abs_sum: f64,
}

impl ConfusionStats {
    pub fn total(&self) -> usize {
        self.agree() + self.false_stable + self.false_unstable
    }

    pub fn agree(&self) -> usize {
        self.both_stable + self.both_unstable
    }

    pub fn agreement(&self) -> f64 {
        ratio(self.agree(), self.total())
    }

    /// Fraction of reference-unstable points the candidate calls stable.
    pub fn false_stable_rate(&self) -> f64 {
        ratio(self.false_stable, self.false_stable + self.both_unstable)
    }

    pub fn false_unstable_rate(&self) -> f64 {
        ratio(self.false_unstable, self.false_unstable + self.both_stable)
    }

    /// Zero when no point is jointly stable.
    pub fn t_eq_mae(&self) -> f64 {
        if self.both_stable == 0 {
            0.0
        } else {
            self.t_eq_abs_sum / self.both_stable as f64
        }
    }

    pub fn merge(&mut self, other: &ConfusionStats) {
        self.both_stable += other.both_stable;
        self.both_unstable += other.both_unstable;
        self.false_stable += other.false_stable;
        self.false_unstable += other.false_unstable;
        self.t_eq_abs_sum += other.t_eq_abs_sum;
    }

    /// JSON object with counts and rates.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"total\": {}, \"agree\": {}, \"both_stable\": {}, \"both_unstable\": {}, \
             \"false_stable\": {}, \"false_unstable\": {}, \"agreement\": {:.6}, \
             \"false_stable_rate\": {:.6}, \"false_unstable_rate\": {:.6}, \"t_eq_mae\": {:.6}}}",
            self.total(),
            self.agree(),
            self.both_stable,
            self.both_unstable,
            self.false_stable,
            self.false_unstable,
            self.agreement(),
            self.false_stable_rate(),
            self.false_unstable_rate(),
            self.t_eq_mae()
        )
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compare(reference: &RoaMap, candidate: &RoaMap) -> Result<ConfusionStats> {
    if reference.lattice != candidate.lattice || reference.alpha != candidate.alpha {
        return Err(Error::LatticeMismatch(format!(
            "alpha {} on {:?} vs alpha {} on {:?}",
            reference.alpha, reference.lattice, candidate.alpha, candidate.lattice
        )));
    }
    if reference.labels.len() != reference.lattice.len() || candidate.labels.len() != candidate.lattice.len() {
        return Err(Error::LatticeMismatch("label count differs from lattice size".into()));
    }
    let mut s = ConfusionStats::default();
    for (r, c) in reference.labels.iter().zip(&candidate.labels) {
        match (r.t_eq(), c.t_eq()) {
            (Some(a), Some(b)) => {
                s.both_stable += 1;
                s.t_eq_abs_sum += (a - b).abs();
            }
            (None, None) => s.both_unstable += 1,
            (None, Some(_)) => s.false_stable += 1,
            (Some(_), None) => s.false_unstable += 1,
        }
    }
    Ok(s)
}

/// Point indices where two maps on the same lattice disagree.
pub fn disagreements(a: &RoaMap, b: &RoaMap) -> Result<Vec<usize>> {
    compare(a, b)?;
    Ok((0..a.labels.len())
        .filter(|&i| a.labels[i].is_stable() != b.labels[i].is_stable())
        .collect())
}

/// Indices of points with a differently labeled 8-neighbor.
pub fn boundary_band(map: &RoaMap) -> HashSet<usize> {
    let (nd, nw) = (map.lattice.n_delta as isize, map.lattice.n_omega as isize);
    let stable = |r: isize, c: isize| map.labels[(r * nd + c) as usize].is_stable();
    let mut band = HashSet::new();
    for r in 0..nw {
        for c in 0..nd {
            let me = stable(r, c);
            let edge = (-1..=1).any(|dr| {
                (-1..=1).any(|dc| {
                    let (rr, cc) = (r + dr, c + dc);
                    (0..nw).contains(&rr) && (0..nd).contains(&cc) && stable(rr, cc) != me
                })
            });
            if edge {
                band.insert((r * nd + c) as usize);
            }
        }
    }
    band
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderStyle {
    /// Upper end of the color ramp (s); larger t_eq saturates.
    pub t_max: f64,
    /// Width of the plotting area in pixels.
    pub plot_px: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            t_max: 1.0,
            plot_px: 480.0,
        }
    }
}

/// Writes the map as a CSV matrix (row per omega, column per delta, both
/// ascending; cells hold t_eq or [`UNSTABLE_SENTINEL`]).
pub fn write_csv(map: &RoaMap, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(csv_matrix(map).as_bytes())?;
    out.flush()?;
    Ok(())
}

fn csv_matrix(map: &RoaMap) -> String {
    let mut s = String::new();
    for row in map.labels.chunks(map.lattice.n_delta) {
        let cells: Vec<String> = row
            .iter()
            .map(|l| format!("{}", l.t_eq().unwrap_or(UNSTABLE_SENTINEL)))
            .collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Reads a CSV matrix written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|_| Error::Malformed(format!("bad CSV cell `{c}`"))))
                .collect()
        })
        .collect()
}

pub const UNSTABLE_COLOR: &str = "#bdbdbd";

// viridis, sampled
const RAMP: [[u8; 3]; 6] = [
    [68, 1, 84],
    [65, 68, 135],
    [42, 120, 142],
    [34, 168, 132],
    [122, 209, 81],
    [253, 231, 37],
];

/// Color for a settling time; 0 maps to the first (coolest) ramp color.
pub fn ramp_color(t_eq: f64, t_max: f64) -> String {
    let x = (t_eq / t_max).clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let c: Vec<u8> = (0..3)
        .map(|k| (RAMP[i][k] as f64 + f * (RAMP[i + 1][k] as f64 - RAMP[i][k] as f64)).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn cell_color(l: &StabilityLabel, t_max: f64) -> String {
    match l.t_eq() {
        Some(t) => ramp_color(t, t_max),
        None => UNSTABLE_COLOR.to_string(),
    }
}

/// Heatmap of the map as SVG, omega increasing upwards.
pub fn render_svg(map: &RoaMap, style: &RenderStyle) -> String {
    let lat = &map.lattice;
    let (nd, nw) = (lat.n_delta, lat.n_omega);
    let cw = style.plot_px / nd as f64;
    let ch = style.plot_px / nw as f64;
    let (left, top) = (70.0, 40.0);
    let plot = style.plot_px;
    let width = left + plot + 110.0;
    let height = top + plot + 60.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">Region of attraction, alpha = {:.3} ({})</text>"#,
        left + plot / 2.0,
        map.alpha,
        map.method
    );
    // one rect per run of equal colors along a row keeps the file small
    let _ = writeln!(s, r#"<g shape-rendering="crispEdges">"#);
    for (r, row) in map.labels.chunks(nd).enumerate() {
        let y = top + (nw - 1 - r) as f64 * ch;
        let mut c = 0;
        while c < nd {
            let color = cell_color(&row[c], style.t_max);
            let mut end = c + 1;
            while end < nd && cell_color(&row[end], style.t_max) == color {
                end += 1;
            }
            let _ = writeln!(
                s,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{color}"/>"#,
                left + c as f64 * cw,
                y,
                (end - c) as f64 * cw,
                ch
            );
            c = end;
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
    );
    // axes
    let bottom = top + plot;
    for (i, v) in [lat.delta_range.0, 0.5 * (lat.delta_range.0 + lat.delta_range.1), lat.delta_range.1]
        .iter()
        .enumerate()
    {
        let x = left + plot * i as f64 / 2.0;
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#, bottom + 16.0);
    }
    for (i, v) in [lat.omega_range.0, 0.5 * (lat.omega_range.0 + lat.omega_range.1), lat.omega_range.1]
        .iter()
        .enumerate()
    {
        let y = bottom - plot * i as f64 / 2.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, left - 6.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">delta0 (rad)</text>"#,
        left + plot / 2.0,
        bottom + 38.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">omega0 (rad/s)</text>"#,
        top + plot / 2.0,
        top + plot / 2.0
    );
    // color bar
    let bx = left + plot + 20.0;
    let steps = 50;
    for k in 0..steps {
        let t = style.t_max * (k as f64 + 0.5) / steps as f64;
        let y = bottom - plot * 0.8 * (k + 1) as f64 / steps as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{bx:.1}" y="{y:.3}" width="16" height="{:.3}" fill="{}"/>"#,
            plot * 0.8 / steps as f64 + 0.2,
            ramp_color(t, style.t_max)
        );
    }
    for k in 0..=4 {
        let y = bottom - plot * 0.8 * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{:.2}</text>"#,
            bx + 20.0,
            y + 4.0,
            style.t_max * k as f64 / 4.0
        );
    }
    let _ = writeln!(s, r#"<text x="{bx:.1}" y="{:.1}">t_eq (s)</text>"#, bottom - plot * 0.8 - 10.0);
    let _ = writeln!(
        s,
        r#"<rect x="{bx:.1}" y="{:.1}" width="16" height="12" fill="{UNSTABLE_COLOR}"/><text x="{:.1}" y="{:.1}">unstable</text>"#,
        top,
        bx + 20.0,
        top + 10.0
    );
    s.push_str("</svg>\n");
    s
}

/// Writes the CSV matrix and the SVG heatmap.
pub fn render(map: &RoaMap, style: &RenderStyle, csv_path: &Path, svg_path: &Path) -> Result<()> {
    write_csv(map, csv_path)?;
    fs::write(svg_path, render_svg(map, style))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::RomFlow;
    use crate::rom::DEFAULT_L_G_PU;

    fn base() -> SystemParams {
        SystemParams::benchmark(DEFAULT_L_G_PU).unwrap()
    }

    fn map_with(labels: Vec<StabilityLabel>, n: usize) -> RoaMap {
        RoaMap {
            method: Method::Rom,
            alpha: 1.0,
            lattice: LatticeSpec::square(n, &DomainSpec::default()),
            labels,
        }
    }

    /// Smallest impedance factor without an equilibrium, found by bisection.
    fn alpha_without_equilibrium() -> f64 {
        let b = base();
        let has_eq = |a: f64| b.with_alpha(a).unwrap().equilibrium().is_ok();
        let (mut lo, mut hi) = (1.0, 1.0);
        while has_eq(hi) {
            hi *= 2.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if has_eq(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi * 1.01
    }

    #[test]
    fn lattice_layout() {
        let lat = LatticeSpec::square(3, &DomainSpec::default());
        assert_eq!(lat.len(), 9);
        assert_eq!(lat.deltas(), vec![-std::f64::consts::PI, 0.0, std::f64::consts::PI]);
        assert_eq!(lat.point(5), PllState::new(std::f64::consts::PI, 0.0));
        assert_eq!(lat.point(6), PllState::new(-std::f64::consts::PI, 60.0));
        let big = LatticeSpec { omega_range: (-70.0, 60.0), ..lat };
        assert!(big.validate(&DomainSpec::default()).is_err());
        assert_eq!(alpha_grid((0.1, 2.0), 10).len(), 10);
        assert_eq!(alpha_grid((0.1, 2.0), 10)[9], 2.0);
    }

    #[test]
    fn smoke_two_by_two() {
        let lat = LatticeSpec::square(2, &DomainSpec::default());
        let maps = sweep(
            &lat,
            &DomainSpec::default(),
            &[0.5, 1.0],
            Classifier::Rom { dt: 1e-4 },
            &base(),
            &RolloutConfig::default(),
            &SweepOptions::default(),
        )
        .unwrap();
        assert_eq!(maps.len(), 2);
        assert!(maps.iter().all(|m| m.labels.len() == 4));
    }

    #[test]
    fn equilibrium_start_is_stable_at_zero() {
        let cfg = RolloutConfig::default();
        for alpha in [0.5, 1.0, 1.5] {
            let eq = base().with_alpha(alpha).unwrap().equilibrium().unwrap().state();
            let rom = classify(eq, alpha, Classifier::Rom { dt: 1e-4 }, &base(), &cfg).unwrap();
            assert_eq!(rom, StabilityLabel::Stable { t_eq: 0.0 });
            let flow = RomFlow::new(base(), 1e-4);
            let rp = classify(eq, alpha, Classifier::Surrogate(&flow), &base(), &cfg).unwrap();
            assert_eq!(rp, StabilityLabel::Stable { t_eq: 0.0 });
        }
    }

    #[test]
    fn no_equilibrium_means_all_unstable() {
        let alpha = alpha_without_equilibrium();
        let domain = DomainSpec {
            alpha_range: (0.1, 2.0 * alpha),
            ..DomainSpec::default()
        };
        let lat = LatticeSpec::square(8, &domain);
        let maps = sweep(
            &lat,
            &domain,
            &[alpha],
            Classifier::Rom { dt: 1e-4 },
            &base(),
            &RolloutConfig::default(),
            &SweepOptions::default(),
        )
        .unwrap();
        assert_eq!(maps[0].stable_count(), 0);
        let csv = csv_matrix(&maps[0]);
        assert!(csv.lines().all(|l| l.split(',').all(|c| c == "-1")));
        let svg = render_svg(&maps[0], &RenderStyle::default());
        // only the unstable color appears among the cells
        assert!(svg.contains(UNSTABLE_COLOR));
        assert!(!svg.contains(&format!("fill=\"{}\"/>\n<rect x=\"70.000\"", ramp_color(0.0, 1.0))));
    }

    #[test]
    fn rom_classification_matches_rom_flow_rollout() {
        let cfg = RolloutConfig::default();
        let flow = RomFlow::new(base(), 1e-4);
        let lat = LatticeSpec::square(7, &DomainSpec::default());
        let points: Vec<(PllState, f64)> =
            (0..lat.len()).flat_map(|i| [0.5, 1.5].map(|a| (lat.point(i), a))).collect();
        let a = classify_many(&points, Classifier::Rom { dt: 1e-4 }, &base(), &cfg).unwrap();
        let b = classify_many(&points, Classifier::Surrogate(&flow), &base(), &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.is_stable(), y.is_stable());
            if let (Some(s), Some(t)) = (x.t_eq(), y.t_eq()) {
                assert!((s - t).abs() < 1e-9);
            }
        }
        assert!(a.iter().any(|l| l.is_stable()) && a.iter().any(|l| !l.is_stable()));
    }

    #[test]
    fn stride_must_divide_sample_spacing() {
        let cfg = RolloutConfig::default();
        assert!(classify(PllState::new(0.0, 0.0), 1.0, Classifier::Rom { dt: 3e-4 }, &base(), &cfg).is_err());
    }

    #[test]
    fn compare_counts() {
        let n = 64;
        let labels: Vec<StabilityLabel> = (0..n * n)
            .map(|i| {
                if i % 3 == 0 {
                    StabilityLabel::Unstable { undecided: false }
                } else {
                    StabilityLabel::Stable { t_eq: 0.001 * (i % 100) as f64 }
                }
            })
            .collect();
        let a = map_with(labels.clone(), n);
        let s = compare(&a, &a).unwrap();
        assert_eq!(s.agree(), n * n);
        assert_eq!(s.t_eq_mae(), 0.0);
        assert_eq!(s.agreement(), 1.0);

        let mut flipped = labels;
        flipped[3] = StabilityLabel::Stable { t_eq: 0.2 };
        let b = map_with(flipped, n);
        let s = compare(&a, &b).unwrap();
        assert_eq!(s.agree(), 4095);
        assert_eq!(s.false_stable, 1);
        assert_eq!(s.false_unstable, 0);
        assert_eq!(s.total(), 4096);
        assert_eq!(disagreements(&a, &b).unwrap(), vec![3]);
        let json = s.to_json();
        assert!(json.contains("\"agree\": 4095") && json.contains("\"false_stable\": 1"));
    }

    #[test]
    fn compare_rejects_mismatch() {
        let a = map_with(vec![StabilityLabel::Unstable { undecided: false }; 4], 2);
        let mut b = a.clone();
        b.alpha = 1.5;
        assert!(matches!(compare(&a, &b), Err(Error::LatticeMismatch(_))));
        let c = map_with(vec![StabilityLabel::Unstable { undecided: false }; 9], 3);
        assert!(matches!(compare(&a, &c), Err(Error::LatticeMismatch(_))));
    }

    #[test]
    fn t_eq_mae_is_over_joint_stable_points() {
        let st = |t| StabilityLabel::Stable { t_eq: t };
        let un = StabilityLabel::Unstable { undecided: true };
        let a = map_with(vec![st(0.1), st(0.2), un, st(0.4)], 2);
        let b = map_with(vec![st(0.3), st(0.2), st(0.9), un], 2);
        let s = compare(&a, &b).unwrap();
        assert_eq!((s.both_stable, s.false_stable, s.false_unstable, s.both_unstable), (2, 1, 1, 0));
        assert!((s.t_eq_mae() - 0.1).abs() < 1e-15);
        assert_eq!(s.false_stable_rate(), 1.0);
        let mut m = s;
        m.merge(&s);
        assert_eq!(m.total(), 8);
        assert!((m.t_eq_mae() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn map_roundtrip_and_render() {
        let dir = tempfile::tempdir().unwrap();
        let labels = vec![
            StabilityLabel::Stable { t_eq: 0.0 },
            StabilityLabel::Unstable { undecided: true },
            StabilityLabel::Unstable { undecided: false },
            StabilityLabel::Stable { t_eq: 0.25 },
        ];
        let m = map_with(labels, 2);
        let p = dir.path().join("m.roa");
        m.save(&p, "abc").unwrap();
        assert_eq!(RoaMap::load(&p).unwrap(), m);

        let (csv, svg) = (dir.path().join("m.csv"), dir.path().join("m.svg"));
        render(&m, &RenderStyle::default(), &csv, &svg).unwrap();
        assert_eq!(read_csv(&csv).unwrap(), vec![vec![0.0, -1.0], vec![-1.0, 0.25]]);
        let text = fs::read_to_string(&svg).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
        // the settled-at-once cell gets the coolest ramp color
        assert!(text.contains(&format!("fill=\"{}\"", ramp_color(0.0, 1.0))));
        assert_eq!(ramp_color(0.0, 1.0), "#440154");
        assert_eq!(ramp_color(5.0, 1.0), "#fde725");
        assert_eq!(render_svg(&m, &RenderStyle::default()), text);
    }

    #[test]
    fn interrupted_sweep_resumes_to_same_result() {
        let dir = tempfile::tempdir().unwrap();
        let partial = dir.path().join("sweep.partial");
        let domain = DomainSpec::default();
        let lat = LatticeSpec::square(6, &domain);
        let cfg = RolloutConfig::default();
        let cls = Classifier::Rom { dt: 1e-4 };
        let alphas = [0.5, 1.2];
        let clean = sweep(&lat, &domain, &alphas, cls, &base(), &cfg, &SweepOptions::default()).unwrap();

        // simulate an interruption: keep the header and some finished lines,
        // plus a torn line
        let key = sweep_key(&lat, &alphas, cls, &base(), &cfg, "");
        let mut text = format!("{PARTIAL_MAGIC} {key}\n");
        for i in 0..20 {
            let (c, t) = clean[1].labels[i].code();
            text.push_str(&format!("1 {i} {c} {t:?}\n"));
        }
        text.push_str("0 3 0 0.1");
        fs::write(&partial, text).unwrap();

        let calls = std::sync::atomic::AtomicUsize::new(0);
        let last = std::sync::Mutex::new((0, 0));
        let progress = |d: usize, t: usize| {
            calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            *last.lock().unwrap() = (d, t);
        };
        let opts = SweepOptions {
            partial: Some(partial.clone()),
            tag: String::new(),
            progress: Some(&progress),
        };
        let resumed = sweep(&lat, &domain, &alphas, cls, &base(), &cfg, &opts).unwrap();
        assert_eq!(resumed, clean);
        assert!(!partial.exists());
        assert_eq!(*last.lock().unwrap(), (72, 72));
        assert!(calls.load(std::sync::atomic::Ordering::Relaxed) >= 1);

        // a partial file from a different sweep is refused
        fs::write(&partial, format!("{PARTIAL_MAGIC} deadbeef\n")).unwrap();
        assert!(sweep(&lat, &domain, &[0.7], cls, &base(), &cfg, &opts).is_err());
    }

    #[test]
    fn rom_step_halving_agrees_on_lattice() {
        let domain = DomainSpec::default();
        let lat = LatticeSpec::square(64, &domain);
        let cfg = RolloutConfig::default();
        let run = |dt| {
            sweep(&lat, &domain, &[0.5], Classifier::Rom { dt }, &base(), &cfg, &SweepOptions::default())
                .unwrap()
                .remove(0)
        };
        let (a, b) = (run(1e-4), run(5e-5));
        let s = compare(&a, &b).unwrap();
        assert!(s.agreement() >= 0.995, "{}", s.to_json());
        // flips only where the coarse map itself changes label
        let band = boundary_band(&a);
        assert!(disagreements(&a, &b).unwrap().iter().all(|i| band.contains(i)));
    }
}
