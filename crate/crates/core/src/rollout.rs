//! Recurrent rollout: a fixed-window predictor is chained by feeding each
//! window's end state back as the next initial state, with equilibrium
//! detection on the stitched trajectory.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{Network, Scratch, INPUT_DIM};
use crate::ode::{rk4_step, split_time};
use crate::rom::{wrap_angle, EquilibriumPoint, PllState, SystemParams};

/// A map from `(t, x0, alpha)` with `t` inside one window to the state at `t`.
pub trait Surrogate: Sync {
    /// Predicts one state per input row `(t, delta0, omega0, alpha)`.
    fn predict_batch(&self, inputs: &[[f64; INPUT_DIM]], out: &mut Vec<PllState>);
}

impl Surrogate for Network {
    fn predict_batch(&self, inputs: &[[f64; INPUT_DIM]], out: &mut Vec<PllState>) {
        thread_local! {
            static SCRATCH: std::cell::RefCell<Scratch> = std::cell::RefCell::new(Scratch::default());
        }
        SCRATCH.with(|s| self.predict_into(inputs, &mut s.borrow_mut(), out));
    }
}

/// The exact solver flow map standing in for a trained network.
#[derive(Debug, Clone)]
pub struct RomFlow {
    pub params: SystemParams,
    pub dt: f64,
}

impl RomFlow {
    pub fn new(params: SystemParams, dt: f64) -> Self {
        Self { params, dt }
    }
}

impl Surrogate for RomFlow {
    /// Consecutive rows sharing an initial state and impedance factor, with
    /// non-decreasing times, continue from the previous whole step. The
    /// result equals [`flow_map`] from scratch for every row.
    fn predict_batch(&self, inputs: &[[f64; INPUT_DIM]], out: &mut Vec<PllState>) {
        let mut cur: Option<([f64; 3], SystemParams, usize, PllState)> = None;
        for r in inputs {
            let key = [r[1], r[2], r[3]];
            let (k, rem) = split_time(r[0], self.dt);
            let reuse = matches!(&cur, Some((c, _, done, _)) if *c == key && *done <= k);
            if !reuse {
                let p = self.params.with_alpha(r[3]).expect("alpha validated by caller");
                cur = Some((key, p, 0, PllState::new(r[1], r[2])));
            }
            let (_, p, done, state) = cur.as_mut().expect("set above");
            while *done < k {
                *state = rk4_step(p, *state, self.dt);
                *done += 1;
            }
            out.push(if rem > 0.0 { rk4_step(p, *state, rem) } else { *state });
        }
    }
}

/// Tolerance band around the equilibrium and the number of consecutive
/// samples that must fall inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumCriteria {
    pub eps_delta: f64,
    pub eps_omega: f64,
    pub dwell: usize,
}

impl Default for EquilibriumCriteria {
    fn default() -> Self {
        Self {
            eps_delta: 0.02,
            eps_omega: 0.5,
            dwell: 10,
        }
    }
}

impl EquilibriumCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_delta > 0.0 && self.eps_omega > 0.0) || self.dwell == 0 {
            return Err(Error::InvalidConfig("equilibrium tolerances must be > 0 and dwell >= 1".into()));
        }
        Ok(())
    }

    /// Inside the band; angles are compared modulo a full turn.
    pub fn inside(&self, s: PllState, eq: &EquilibriumPoint) -> bool {
        wrap_angle(s.delta - eq.delta_eq).abs() <= self.eps_delta && (s.omega - eq.omega_eq).abs() <= self.eps_omega
    }
}

/// Streaming form of [`detect_equilibrium`].
#[derive(Debug, Clone)]
pub struct Detector {
    criteria: EquilibriumCriteria,
    eq: EquilibriumPoint,
    run: usize,
    run_start: f64,
}

impl Detector {
    pub fn new(criteria: EquilibriumCriteria, eq: EquilibriumPoint) -> Self {
        Self {
            criteria,
            eq,
            run: 0,
            run_start: 0.0,
        }
    }

    /// Feeds the next sample; returns `t_eq` once the dwell is satisfied.
    pub fn push(&mut self, t: f64, s: PllState) -> Option<f64> {
        if self.criteria.inside(s, &self.eq) {
            if self.run == 0 {
                self.run_start = t;
            }
            self.run += 1;
            (self.run >= self.criteria.dwell).then_some(self.run_start)
        } else {
            self.run = 0;
            None
        }
    }
}

/// Earliest sample time starting `dwell` consecutive samples inside the band.
pub fn detect_equilibrium(
    times: &[f64],
    states: &[PllState],
    eq: &EquilibriumPoint,
    criteria: &EquilibriumCriteria,
) -> Option<f64> {
    let mut det = Detector::new(*criteria, *eq);
    times.iter().zip(states).find_map(|(&t, &s)| det.push(t, s))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    /// Window length the predictor was trained on (s).
    pub window: f64,
    /// Evenly spaced samples per window; the last one is the window end.
    pub grid_points: usize,
    pub horizon: f64,
    /// `|omega|` above which the trajectory is declared unstable (rad/s).
    pub blowup_omega: f64,
    /// When set, a window-end state with `|omega|` above this bound is not
    /// fed back; the rollout ends undecided instead of extrapolating beyond
    /// the inputs the predictor was trained on.
    pub max_refeed_omega: Option<f64>,
    pub criteria: EquilibriumCriteria,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            window: 0.1,
            grid_points: 50,
            horizon: 2.0,
            blowup_omega: 120.0,
            max_refeed_omega: None,
            criteria: EquilibriumCriteria::default(),
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        self.criteria.validate()?;
        if !(self.window > 0.0) || self.grid_points == 0 {
            return Err(Error::InvalidConfig("window must be > 0 with at least one grid point".into()));
        }
        if !(self.horizon >= self.window) {
            return Err(Error::InvalidConfig(format!(
                "horizon {} s is shorter than the window {} s",
                self.horizon, self.window
            )));
        }
        if !(self.blowup_omega > 0.0) {
            return Err(Error::InvalidConfig("blowup_omega must be > 0".into()));
        }
        if self.max_refeed_omega.is_some_and(|w| !(w > 0.0)) {
            return Err(Error::InvalidConfig("max_refeed_omega must be > 0".into()));
        }
        Ok(())
    }

    pub fn max_windows(&self) -> usize {
        // tolerate rounding in horizon / window
        ((self.horizon / self.window) - 1e-9).ceil().max(1.0) as usize
    }

    /// Offsets of the samples inside one window.
    pub fn window_grid(&self) -> Vec<f64> {
        let g = self.grid_points;
        (1..=g).map(|j| self.window * j as f64 / g as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Stable,
    Unstable,
    Undecided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub times: Vec<f64>,
    pub states: Vec<PllState>,
    pub window_index: Vec<usize>,
    pub windows_used: usize,
    pub t_eq: Option<f64>,
    pub verdict: Verdict,
    /// Set when the predictor returned a non-finite state.
    pub non_finite: bool,
}

/// Outcome of a rollout without the stored trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSummary {
    pub verdict: Verdict,
    pub t_eq: Option<f64>,
    pub windows_used: usize,
    pub non_finite: bool,
}

/// Predicts the states at `times` inside a single window.
pub fn predict_window<S: Surrogate + ?Sized>(
    surrogate: &S,
    x0: PllState,
    alpha: f64,
    times: &[f64],
    window: f64,
) -> Result<Vec<PllState>> {
    if let Some(&t) = times.iter().find(|&&t| !(0.0..=window).contains(&t)) {
        return Err(Error::OutsideWindow { t, window });
    }
    let inputs: Vec<[f64; INPUT_DIM]> = times.iter().map(|&t| [t, x0.delta, x0.omega, alpha]).collect();
    let mut out = Vec::with_capacity(times.len());
    surrogate.predict_batch(&inputs, &mut out);
    Ok(out)
}

struct Lane {
    state: PllState,
    alpha: f64,
    detector: Option<Detector>,
    summary: Option<RolloutSummary>,
    trace: Option<(Vec<f64>, Vec<PllState>, Vec<usize>)>,
}

impl Lane {
    fn record(&mut self, t: f64, s: PllState, window: usize) {
        if let Some((ts, ss, ws)) = &mut self.trace {
            ts.push(t);
            ss.push(s);
            ws.push(window);
        }
    }

    /// Processes one sample; returns true once the lane is finished.
    fn observe(&mut self, t: f64, s: PllState, window: usize, cfg: &RolloutConfig) -> bool {
        self.record(t, s, window);
        let finish = |verdict, t_eq, non_finite| RolloutSummary {
            verdict,
            t_eq,
            windows_used: window + 1,
            non_finite,
        };
        if !s.is_finite() {
            self.summary = Some(finish(Verdict::Undecided, None, true));
            return true;
        }
        if s.omega.abs() > cfg.blowup_omega {
            self.summary = Some(finish(Verdict::Unstable, None, false));
            return true;
        }
        if let Some(det) = &mut self.detector {
            if let Some(t_eq) = det.push(t, s) {
                self.summary = Some(finish(Verdict::Stable, Some(t_eq), false));
                return true;
            }
        }
        false
    }
}

/// Rolls out every initial state in lockstep, one window at a time.
///
/// Each lane's equilibrium comes from `base.with_alpha(alpha)`; lanes whose
/// parameters admit no equilibrium can only end unstable or undecided.
fn rollout_lanes<S: Surrogate + ?Sized>(
    surrogate: &S,
    lanes: &mut [Lane],
    cfg: &RolloutConfig,
) {
    let grid = cfg.window_grid();
    let g = grid.len();
    for lane in lanes.iter_mut() {
        let s0 = lane.state;
        lane.observe(0.0, s0, 0, cfg);
    }
    let mut inputs = Vec::new();
    let mut preds = Vec::new();
    let mut active: Vec<usize> = (0..lanes.len()).filter(|&i| lanes[i].summary.is_none()).collect();
    let windows = cfg.max_windows();
    for k in 0..windows {
        if active.is_empty() {
            break;
        }
        inputs.clear();
        for &i in &active {
            let l = &lanes[i];
            inputs.extend(grid.iter().map(|&t| [t, l.state.delta, l.state.omega, l.alpha]));
        }
        preds.clear();
        surrogate.predict_batch(&inputs, &mut preds);
        let t0 = k as f64 * cfg.window;
        let mut next = Vec::with_capacity(active.len());
        for (slot, &i) in active.iter().enumerate() {
            let lane = &mut lanes[i];
            let block = &preds[slot * g..(slot + 1) * g];
            let mut done = false;
            for (j, &s) in block.iter().enumerate() {
                if lane.observe(t0 + grid[j], s, k, cfg) {
                    done = true;
                    break;
                }
            }
            if !done {
                let end = block[g - 1];
                if cfg.max_refeed_omega.is_some_and(|w| end.omega.abs() > w) {
                    lane.summary = Some(RolloutSummary {
                        verdict: Verdict::Undecided,
                        t_eq: None,
                        windows_used: k + 1,
                        non_finite: false,
                    });
                    continue;
                }
                lane.state = PllState::new(wrap_angle(end.delta), end.omega);
                next.push(i);
            }
        }
        active = next;
    }
    for lane in lanes.iter_mut() {
        if lane.summary.is_none() {
            lane.summary = Some(RolloutSummary {
                verdict: Verdict::Undecided,
                t_eq: None,
                windows_used: windows,
                non_finite: false,
            });
        }
    }
}

fn make_lane(x0: PllState, alpha: f64, base: &SystemParams, cfg: &RolloutConfig, trace: bool) -> Result<Lane> {
    let eq = base.with_alpha(alpha)?.equilibrium().ok();
    Ok(Lane {
        state: x0,
        alpha,
        detector: eq.map(|e| Detector::new(cfg.criteria, e)),
        summary: None,
        trace: trace.then(|| (Vec::new(), Vec::new(), Vec::new())),
    })
}

/// Chains windows from `x0` until equilibrium, blow-up or the horizon.
///
/// The window-end angle is wrapped into `[-pi, pi)` before it is fed back;
/// the dynamics are periodic in the angle, so this only keeps the next
/// window's input inside the trained domain.
pub fn rollout<S: Surrogate + ?Sized>(
    surrogate: &S,
    x0: PllState,
    alpha: f64,
    base: &SystemParams,
    cfg: &RolloutConfig,
) -> Result<RolloutResult> {
    cfg.validate()?;
    let mut lanes = [make_lane(x0, alpha, base, cfg, true)?];
    rollout_lanes(surrogate, &mut lanes, cfg);
    let [lane] = lanes;
    let summary = lane.summary.expect("finished lane");
    let (times, states, window_index) = lane.trace.expect("trace requested");
    Ok(RolloutResult {
        times,
        states,
        window_index,
        windows_used: summary.windows_used,
        t_eq: summary.t_eq,
        verdict: summary.verdict,
        non_finite: summary.non_finite,
    })
}

/// Number of initial states advanced together per predictor call.
pub const LANE_CHUNK: usize = 64;

/// Rolls out many initial states; chunks run in parallel and results are
/// independent of scheduling.
pub fn rollout_batch<S: Surrogate + ?Sized>(
    surrogate: &S,
    initial: &[(PllState, f64)],
    base: &SystemParams,
    cfg: &RolloutConfig,
) -> Result<Vec<RolloutSummary>> {
    cfg.validate()?;
    let mut lanes = initial
        .iter()
        .map(|&(x0, a)| make_lane(x0, a, base, cfg, false))
        .collect::<Result<Vec<_>>>()?;
    lanes
        .par_chunks_mut(LANE_CHUNK)
        .for_each(|chunk| rollout_lanes(surrogate, chunk, cfg));
    Ok(lanes.into_iter().map(|l| l.summary.expect("finished lane")).collect())
}

/// States at absolute times (each in `(0, n * window]`) reached by chaining
/// windows without stopping. Returns one row of `times.len()` states per
/// initial state.
pub fn rollout_at_times<S: Surrogate + ?Sized>(
    surrogate: &S,
    initial: &[(PllState, f64)],
    times: &[f64],
    window: f64,
) -> Result<Vec<Vec<PllState>>> {
    if !(window > 0.0) {
        return Err(Error::InvalidConfig("window must be > 0".into()));
    }
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    if let Some(&t) = times.iter().find(|&&t| !(t >= 0.0 && t.is_finite())) {
        return Err(Error::OutsideWindow { t, window: t_max });
    }
    let windows = ((t_max / window) - 1e-9).ceil().max(1.0) as usize;
    // window k covers (k T, (k + 1) T]; t = 0 is served by window 0
    let owner = |t: f64| (((t / window) - 1e-9).ceil().max(1.0) as usize) - 1;

    let rows: Vec<Vec<PllState>> = initial
        .par_chunks(LANE_CHUNK)
        .flat_map_iter(|chunk| {
            let mut cur: Vec<PllState> = chunk.iter().map(|c| c.0).collect();
            let mut out = vec![vec![PllState::new(f64::NAN, f64::NAN); times.len()]; chunk.len()];
            let mut inputs = Vec::new();
            let mut preds = Vec::new();
            for k in 0..windows {
                let local: Vec<(usize, f64)> = times
                    .iter()
                    .enumerate()
                    .filter(|(_, &t)| owner(t) == k)
                    .map(|(j, &t)| (j, t - k as f64 * window))
                    .collect();
                inputs.clear();
                for (s, &(_, alpha)) in cur.iter().zip(chunk) {
                    inputs.extend(local.iter().map(|&(_, dt)| [dt, s.delta, s.omega, alpha]));
                    inputs.push([window, s.delta, s.omega, alpha]);
                }
                preds.clear();
                surrogate.predict_batch(&inputs, &mut preds);
                let stride = local.len() + 1;
                for (i, s) in cur.iter_mut().enumerate() {
                    let block = &preds[i * stride..(i + 1) * stride];
                    for (&(j, _), &p) in local.iter().zip(block) {
                        out[i][j] = p;
                    }
                    let end = block[local.len()];
                    *s = PllState::new(wrap_angle(end.delta), end.omega);
                }
            }
            out.into_iter()
        })
        .collect();
    Ok(rows)
}

impl RolloutResult {
    /// Writes the stitched trajectory as CSV `t,delta,omega,window_index`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t,delta,omega,window_index")?;
        for ((t, s), w) in self.times.iter().zip(&self.states).zip(&self.window_index) {
            writeln!(out, "{t},{},{},{w}", s.delta, s.omega)?;
        }
        out.flush()?;
        Ok(())
    }
}
