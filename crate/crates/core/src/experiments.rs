//! Experiment drivers with pass/fail verdicts: timescale scaling, perturbation
//! recovery, reduction accuracy, the decision simulation, and gradient checks.
//!
//! Every driver is deterministic. Per-ε runs execute on a rayon pool whose size
//! is capped by the caller; results are always assembled in input order.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::csvfmt;
use crate::error::{Error, Result};
use crate::fastslow::{self, ReductionReport, SolverOptions};
use crate::flow::{self, FlowSystem, IntegratorConfig, KickTarget, Perturbation, Trajectory};
use crate::geometry::{Metric, Partition, State};
use crate::potentials::{
    self, BiasRamp, Component, CompositePotential, CubicBenchmark, DecisionPotential, Potential, DEFAULT_FD_STEP,
};

/// Saddle-node bias of `c³ − c + b`: `2/(3√3)`.
pub fn saddle_node_bias() -> f64 {
    2.0 / (3.0 * 3.0_f64.sqrt())
}

fn benchmark_partition() -> Partition {
    Partition::new(1, 1).expect("1+1 partition")
}

/// Maps `f` over `items` on a pool of at most `threads` workers, preserving order.
pub fn par_map<T, R, F>(items: &[T], threads: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    match builder.build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("could not build thread pool ({e}); running sequentially");
            items.iter().map(f).collect()
        }
    }
}

/// Ordinary least squares on `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<LogLogFit> {
    if xs.len() != ys.len() {
        return Err(Error::Domain(format!(
            "{} abscissae but {} ordinates",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 points, got {}", xs.len())));
    }
    if let Some(bad) = xs.iter().chain(ys).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!(
            "log-log fit needs positive finite data, got {bad}"
        )));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx <= 1e-300 {
        return Err(Error::Degenerate("zero variance in log x".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy <= 1e-300 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(LogLogFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Acceptance region for an observed quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Range(f64, f64),
    AtMost(f64),
    AtLeast(f64),
}

impl Bound {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Bound::Range(lo, hi) => x >= lo && x <= hi,
            Bound::AtMost(hi) => x <= hi,
            Bound::AtLeast(lo) => x >= lo,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Range(lo, hi) => write!(f, "{lo:?}..{hi:?}"),
            Bound::AtMost(hi) => write!(f, "<={hi:?}"),
            Bound::AtLeast(lo) => write!(f, ">={lo:?}"),
        }
    }
}

impl FromStr for Bound {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Domain(format!("bad bound '{s}'")))
        };
        if let Some(rest) = s.strip_prefix("<=") {
            Ok(Bound::AtMost(num(rest)?))
        } else if let Some(rest) = s.strip_prefix(">=") {
            Ok(Bound::AtLeast(num(rest)?))
        } else if let Some((lo, hi)) = s.split_once("..") {
            Ok(Bound::Range(num(lo)?, num(hi)?))
        } else {
            Err(Error::Domain(format!("bad bound '{s}'")))
        }
    }
}

/// One `criterion,observed,bound,pass` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub criterion: String,
    pub observed: f64,
    pub bound: Bound,
    pub pass: bool,
}

impl Verdict {
    pub fn check(criterion: impl Into<String>, observed: f64, bound: Bound) -> Self {
        Self {
            criterion: criterion.into(),
            observed,
            pass: bound.contains(observed),
            bound,
        }
    }
}

pub fn all_pass(verdicts: &[Verdict]) -> bool {
    verdicts.iter().all(|v| v.pass)
}

pub fn write_verdict_csv<W: Write>(w: &mut W, verdicts: &[Verdict]) -> io::Result<()> {
    csvfmt::write_row(w, &["criterion", "observed", "bound", "pass"])?;
    for v in verdicts {
        let fields = [
            v.criterion.clone(),
            csvfmt::float(v.observed),
            v.bound.to_string(),
            v.pass.to_string(),
        ];
        csvfmt::write_row(w, &fields)?;
    }
    Ok(())
}

/// Reads a verdict file back, recomputing `pass` from `observed` and `bound`.
pub fn read_verdict_csv<R: BufRead>(r: R) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Domain(e.to_string()))?;
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Domain(format!(
                "verdict line {} has {} fields",
                i + 1,
                fields.len()
            )));
        }
        let observed = fields[1]
            .parse::<f64>()
            .map_err(|_| Error::Domain(format!("bad observed value on line {}", i + 1)))?;
        out.push(Verdict::check(fields[0], observed, fields[2].parse()?));
    }
    Ok(out)
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("epsilon must lie in (0,1), got {eps}")))
    }
}

macro_rules! impl_integrator {
    ($($t:ty),*) => {$(
        impl $t {
            /// Integrator settings for a run ending at `t_end`.
            pub fn integrator(&self, t_end: f64) -> IntegratorConfig {
                IntegratorConfig {
                    record_stride: self.record_stride,
                    ..IntegratorConfig::new(self.dt, t_end)
                }
            }
        }
    )*};
}

impl_integrator!(ScalingConfig, RecoveryConfig, ReductionConfig, DecisionConfig);

fn run_benchmark(
    epsilon: f64,
    eta0: &DVector<f64>,
    config: &IntegratorConfig,
    kick: Option<&Perturbation>,
) -> Result<Trajectory> {
    let metric = Metric::block_anisotropic(epsilon, benchmark_partition())?;
    let system = FlowSystem::new(&CubicBenchmark, &metric)?;
    let initial = State::new(eta0.clone(), config.t_start)?;
    Ok(flow::integrate(&system, &initial, config, kick)?)
}

// ---------------------------------------------------------------------------
// Timescale scaling

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    pub epsilons: Vec<f64>,
    pub eta0: DVector<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub record_stride: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.4, 0.2, 0.1, 0.05],
            eta0: DVector::from_vec(vec![1.5, -1.0]),
            t_end: 20.0,
            dt: 0.01,
            record_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub epsilon: f64,
    pub mean_fast_speed: f64,
    pub mean_slow_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingResult {
    /// Sorted by decreasing ε.
    pub rows: Vec<ScalingRow>,
    pub fast_slope: f64,
    pub slow_slope: f64,
    pub r_squared_slow: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingBounds {
    pub slow_slope: Bound,
    pub fast_slope: Bound,
    pub r_squared_slow: Bound,
}

impl Default for ScalingBounds {
    fn default() -> Self {
        Self {
            slow_slope: Bound::Range(1.8, 2.2),
            fast_slope: Bound::Range(-0.2, 0.2),
            r_squared_slow: Bound::AtLeast(0.99),
        }
    }
}

impl ScalingResult {
    /// Fits both slopes from per-ε rows.
    pub fn from_rows(mut rows: Vec<ScalingRow>) -> Result<Self> {
        rows.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
        let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
        let fast: Vec<f64> = rows.iter().map(|r| r.mean_fast_speed).collect();
        let slow: Vec<f64> = rows.iter().map(|r| r.mean_slow_speed).collect();
        let fast_fit = fit_loglog_slope(&eps, &fast)?;
        let slow_fit = fit_loglog_slope(&eps, &slow)?;
        Ok(Self {
            rows,
            fast_slope: fast_fit.slope,
            slow_slope: slow_fit.slope,
            r_squared_slow: slow_fit.r_squared,
        })
    }

    pub fn verdicts(&self, bounds: &ScalingBounds) -> Vec<Verdict> {
        vec![
            Verdict::check("slow_speed_slope", self.slow_slope, bounds.slow_slope),
            Verdict::check("slow_speed_r_squared", self.r_squared_slow, bounds.r_squared_slow),
            Verdict::check("fast_speed_slope", self.fast_slope, bounds.fast_slope),
        ]
    }

    /// `epsilon,mean_fast_speed,mean_slow_speed`.
    pub fn write_data_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        csvfmt::write_row(w, &["epsilon", "mean_fast_speed", "mean_slow_speed"])?;
        for r in &self.rows {
            csvfmt::write_floats(w, &[r.epsilon, r.mean_fast_speed, r.mean_slow_speed])?;
        }
        Ok(())
    }

    /// Rebuilds the result (and hence its verdicts) from a saved data file.
    pub fn read_data_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Domain(e.to_string()))?;
            if i == 0 || line.is_empty() {
                continue;
            }
            let v: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            match v.as_deref() {
                Ok([e, f, s]) => rows.push(ScalingRow {
                    epsilon: *e,
                    mean_fast_speed: *f,
                    mean_slow_speed: *s,
                }),
                _ => return Err(Error::Domain(format!("bad scaling row {}", i + 1))),
            }
        }
        Self::from_rows(rows)
    }
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.len() < 3 {
            return Err(Error::Config(format!(
                "scaling needs at least 3 epsilon values, got {}",
                self.epsilons.len()
            )));
        }
        self.epsilons.iter().try_for_each(|&e| check_epsilon(e))?;
        if self.eta0.len() != 2 {
            return Err(Error::Config("scaling eta0 must have 2 coordinates".into()));
        }
        self.integrator(self.t_end).validate()
    }
}

/// One benchmark integration per ε with a shared start and horizon.
pub fn run_timescale_scaling(config: &ScalingConfig, threads: Option<usize>) -> Result<ScalingResult> {
    config.validate()?;
    let icfg = config.integrator(config.t_end);
    let rows = par_map(&config.epsilons, threads, |&eps| -> Result<ScalingRow> {
        let traj = run_benchmark(eps, &config.eta0, &icfg, None).map_err(|e| tag_epsilon(e, eps))?;
        let speeds = flow::mean_speed_by_block(&traj, benchmark_partition())?;
        Ok(ScalingRow {
            epsilon: eps,
            mean_fast_speed: speeds.fast,
            mean_slow_speed: speeds.slow,
        })
    });
    ScalingResult::from_rows(rows.into_iter().collect::<Result<Vec<_>>>()?)
}

fn tag_epsilon(e: Error, eps: f64) -> Error {
    match e {
        Error::Divergence { time, state } => {
            log::error!("run with epsilon = {eps} diverged at t = {time}");
            Error::Divergence { time, state }
        }
        other => other,
    }
}

/// A phase-portrait run: one start, one ε.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrack {
    pub epsilon: f64,
    pub start: DVector<f64>,
    pub trajectory: Trajectory,
}

/// Number of starts on the phase-portrait ring.
pub const PHASE_RING_STARTS: usize = 6;
pub const PHASE_RING_RADIUS: f64 = 1.5;

/// Trajectories from `PHASE_RING_STARTS` points on a circle of radius
/// `PHASE_RING_RADIUS` around the origin, for every ε.
pub fn phase_portrait(config: &ScalingConfig, record_stride: usize, threads: Option<usize>) -> Result<Vec<PhaseTrack>> {
    config.validate()?;
    let mut jobs = Vec::new();
    for &eps in &config.epsilons {
        for i in 0..PHASE_RING_STARTS {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / PHASE_RING_STARTS as f64;
            jobs.push((
                eps,
                DVector::from_vec(vec![PHASE_RING_RADIUS * angle.cos(), PHASE_RING_RADIUS * angle.sin()]),
            ));
        }
    }
    let icfg = IntegratorConfig {
        record_stride,
        ..IntegratorConfig::new(config.dt, config.t_end)
    };
    par_map(&jobs, threads, |(eps, start)| {
        Ok(PhaseTrack {
            epsilon: *eps,
            start: start.clone(),
            trajectory: run_benchmark(*eps, start, &icfg, None)?,
        })
    })
    .into_iter()
    .collect()
}

/// `epsilon,start,t,h,c` rows for every phase track.
pub fn write_phase_csv<W: Write>(w: &mut W, tracks: &[PhaseTrack]) -> io::Result<()> {
    csvfmt::write_row(w, &["epsilon", "start", "t", "h", "c"])?;
    for (i, tr) in tracks.iter().enumerate() {
        let idx = i % PHASE_RING_STARTS;
        for (t, s) in tr.trajectory.times.iter().zip(&tr.trajectory.states) {
            let fields = [
                csvfmt::float(tr.epsilon),
                idx.to_string(),
                csvfmt::float(*t),
                csvfmt::float(s[0]),
                csvfmt::float(s[1]),
            ];
            csvfmt::write_row(w, &fields)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Perturbation recovery

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    pub epsilon: f64,
    pub eta0: DVector<f64>,
    pub t_kick: f64,
    pub delta: DVector<f64>,
    pub target: KickTarget,
    pub t_end: f64,
    pub dt: f64,
    pub record_stride: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            eta0: DVector::from_vec(vec![1.5, -1.0]),
            t_kick: 40.0,
            delta: DVector::from_vec(vec![1.0]),
            target: KickTarget::Fast,
            t_end: 55.0,
            dt: 0.01,
            record_stride: 1,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if self.eta0.len() != 2 {
            return Err(Error::Config("recovery eta0 must have 2 coordinates".into()));
        }
        if !(self.t_kick >= 0.0 && self.t_kick < self.t_end) {
            return Err(Error::Config(format!(
                "t_kick must lie in [0, t_end), got {} with t_end = {}",
                self.t_kick, self.t_end
            )));
        }
        self.integrator(self.t_end).validate()
    }
}

/// Regression windows for the decay rates, relative to start and kick.
pub const PRE_KICK_WINDOW_START: f64 = 1.0;
pub const POST_KICK_WINDOW: (f64, f64) = (0.5, 5.0);
/// D values at or below this are excluded from rate fits.
pub const DISTANCE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub distance_series: Vec<(f64, f64)>,
    pub pre_kick_rate: Option<f64>,
    pub post_kick_rate: Option<f64>,
    pub kick_time: f64,
    /// λ_min of the fast Hessian at the kick point.
    pub stability_margin: f64,
    pub delta_norm: f64,
    /// `D(t_kick + 5)`, linearly interpolated.
    pub distance_after_window: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryBounds {
    /// Allowed relative deviation of the post-kick rate from the stability margin.
    pub rate_rel_tol: f64,
    /// Upper bound on `D(t_kick + 5) / ‖delta‖`.
    pub residual_fraction: f64,
}

impl Default for RecoveryBounds {
    fn default() -> Self {
        Self {
            rate_rel_tol: 0.10,
            residual_fraction: 0.01,
        }
    }
}

impl RecoveryResult {
    pub fn verdicts(&self, bounds: &RecoveryBounds) -> Vec<Verdict> {
        let m = self.stability_margin;
        let rate = self.post_kick_rate.unwrap_or(f64::NAN);
        let fraction = if self.delta_norm > 0.0 {
            self.distance_after_window / self.delta_norm
        } else {
            f64::NAN
        };
        vec![
            Verdict::check(
                "post_kick_decay_rate",
                rate,
                Bound::Range(m * (1.0 - bounds.rate_rel_tol), m * (1.0 + bounds.rate_rel_tol)),
            ),
            Verdict::check(
                "distance_after_5_over_delta",
                fraction,
                Bound::AtMost(bounds.residual_fraction),
            ),
        ]
    }

    /// `t,D`.
    pub fn write_data_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        fastslow::write_distance_csv(w, &self.distance_series)
    }
}

/// Exponential decay rate `−d ln D / dt` fitted over `(lo, hi]` (or `[lo, hi)`).
///
/// The window is cut at the first point with `D <= DISTANCE_FLOOR`.
pub fn decay_rate(series: &[(f64, f64)], lo: f64, hi: f64, include_lo: bool) -> Option<f64> {
    let in_window = |t: f64| {
        if include_lo {
            t >= lo && t < hi
        } else {
            t > lo && t <= hi
        }
    };
    let window: Vec<(f64, f64)> = series.iter().copied().filter(|&(t, _)| in_window(t)).collect();
    let usable: Vec<(f64, f64)> = window
        .iter()
        .copied()
        .take_while(|&(_, d)| d > DISTANCE_FLOOR)
        .collect();
    if usable.len() < window.len() {
        log::warn!(
            "D fell below {DISTANCE_FLOOR:e} inside the fit window ({lo}, {hi}); window shortened to {} points",
            usable.len()
        );
    }
    if usable.len() < 2 {
        return None;
    }
    let n = usable.len() as f64;
    let mt = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = usable.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let stt: f64 = usable.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let stl: f64 = usable.iter().map(|p| (p.0 - mt) * (p.1.ln() - ml)).sum();
    Some(-stl / stt)
}

fn interpolate_series(series: &[(f64, f64)], t: f64) -> f64 {
    let i = series.partition_point(|p| p.0 <= t);
    if i == 0 {
        return series[0].1;
    }
    if i == series.len() {
        return series[i - 1].1;
    }
    let (t0, d0) = series[i - 1];
    let (t1, d1) = series[i];
    if t == t0 {
        return d0;
    }
    d0 + (d1 - d0) * (t - t0) / (t1 - t0)
}

pub fn run_perturbation_recovery(config: &RecoveryConfig) -> Result<RecoveryResult> {
    config.validate()?;
    let kick = Perturbation {
        t_kick: config.t_kick,
        delta: config.delta.clone(),
        target: config.target,
    };
    let icfg = config.integrator(config.t_end);
    let trajectory = run_benchmark(config.epsilon, &config.eta0, &icfg, Some(&kick))?;
    let partition = benchmark_partition();
    let opts = SolverOptions::default();
    let distance_series = fastslow::manifold_distance_series(&trajectory, &CubicBenchmark, partition, &opts)?;
    let event = trajectory
        .kick
        .ok_or_else(|| Error::Contract("perturbation was not applied before t_end".into()))?;
    let kick_time = event.time;
    let kick_state = &trajectory.states[event.index];
    let eq = fastslow::solve_fast_equilibrium(
        &CubicBenchmark,
        &partition.slow_block(kick_state),
        &partition.fast_block(kick_state),
        kick_time,
        &opts,
    )?;
    let pre_kick_rate = decay_rate(&distance_series, PRE_KICK_WINDOW_START, kick_time, true);
    let post_kick_rate = decay_rate(
        &distance_series,
        kick_time + POST_KICK_WINDOW.0,
        kick_time + POST_KICK_WINDOW.1,
        false,
    );
    let distance_after_window = interpolate_series(&distance_series, kick_time + POST_KICK_WINDOW.1);
    Ok(RecoveryResult {
        distance_series,
        pre_kick_rate,
        post_kick_rate,
        kick_time,
        stability_margin: eq.stability_margin,
        delta_norm: config.delta.norm(),
        distance_after_window,
        trajectory,
    })
}

// ---------------------------------------------------------------------------
// Reduction validation

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionConfig {
    pub epsilons: Vec<f64>,
    pub c0: f64,
    /// Full runs start at `h0 = c0³ + h_offset`.
    pub h_offset: f64,
    /// Horizon `horizon / ε²` when true, `fixed_t_end` otherwise.
    pub t_end_scaled: bool,
    pub horizon: f64,
    pub fixed_t_end: f64,
    pub transient_cutoff: f64,
    pub dt: f64,
    pub record_stride: usize,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.4, 0.3, 0.2, 0.15, 0.1],
            c0: 1.0,
            h_offset: 0.5,
            t_end_scaled: true,
            horizon: 10.0,
            fixed_t_end: 50.0,
            transient_cutoff: 5.0,
            dt: 0.01,
            record_stride: 1,
        }
    }
}

impl ReductionConfig {
    pub fn t_end(&self, epsilon: f64) -> f64 {
        if self.t_end_scaled {
            self.horizon / (epsilon * epsilon)
        } else {
            self.fixed_t_end
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Config("reduction needs at least one epsilon".into()));
        }
        self.epsilons.iter().try_for_each(|&e| check_epsilon(e))?;
        if !(self.transient_cutoff >= 0.0) {
            return Err(Error::Config("transient cutoff must be >= 0".into()));
        }
        for &e in &self.epsilons {
            self.integrator(self.t_end(e)).validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionValidation {
    pub reports: Vec<ReductionReport>,
    /// Log-log fit of max error against ε, or why it could not be computed.
    pub fit: std::result::Result<LogLogFit, Error>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionBounds {
    pub slope: Bound,
}

impl Default for ReductionBounds {
    fn default() -> Self {
        Self {
            slope: Bound::Range(1.7, 2.3),
        }
    }
}

impl ReductionValidation {
    /// Count of adjacent pairs (ordered by decreasing ε) where the error fails to decrease.
    pub fn monotonicity_violations(&self) -> usize {
        let mut sorted = self.reports.clone();
        sorted.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
        sorted.windows(2).filter(|w| !(w[1].max_error < w[0].max_error)).count()
    }

    pub fn verdicts(&self, bounds: &ReductionBounds) -> Vec<Verdict> {
        let slope = self.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN);
        vec![
            Verdict::check(
                "error_decrease_violations",
                self.monotonicity_violations() as f64,
                Bound::AtMost(0.0),
            ),
            Verdict::check("max_error_slope", slope, bounds.slope),
        ]
    }

    /// `epsilon,max_error`.
    pub fn write_data_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        fastslow::write_reduction_csv(w, &self.reports)
    }
}

/// Full and reduced trajectories for one ε.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionRun {
    pub report: ReductionReport,
    pub full: Trajectory,
    pub reduced: Trajectory,
}

pub fn run_reduction_single(config: &ReductionConfig, epsilon: f64) -> Result<ReductionRun> {
    let t_end = config.t_end(epsilon);
    let icfg = config.integrator(t_end);
    let eta0 = DVector::from_vec(vec![config.c0.powi(3) + config.h_offset, config.c0]);
    let full = run_benchmark(epsilon, &eta0, &icfg, None)?;
    let c0 = DVector::from_vec(vec![config.c0]);
    let reduced = fastslow::integrate_reduced(&CubicBenchmark, epsilon, &c0, &icfg)?;
    let report = fastslow::reduction_error(&full, &reduced, benchmark_partition(), epsilon, config.transient_cutoff)?;
    Ok(ReductionRun { report, full, reduced })
}

pub fn run_reduction_validation(config: &ReductionConfig, threads: Option<usize>) -> Result<ReductionValidation> {
    config.validate()?;
    let reports = par_map(&config.epsilons, threads, |&eps| {
        run_reduction_single(config, eps).map(|r| r.report)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = reports.iter().map(|r| r.epsilon).collect();
    let errs: Vec<f64> = reports.iter().map(|r| r.max_error).collect();
    let fit = fit_loglog_slope(&eps, &errs);
    if let Err(e) = &fit {
        log::warn!("reduction slope undefined: {e}");
    }
    Ok(ReductionValidation { reports, fit })
}

// ---------------------------------------------------------------------------
// Decision simulation

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionConfig {
    pub beta: f64,
    pub ramp: BiasRamp,
    pub epsilon: f64,
    pub t_end: f64,
    pub dt: f64,
    pub record_stride: usize,
    /// Initial slow coordinate; the fast one starts on-manifold at `tanh(β c0)`.
    pub c0: f64,
    /// Ramp level of the sub-threshold control run.
    pub control_level: f64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            ramp: BiasRamp::default(),
            epsilon: 0.2,
            t_end: 200.0,
            dt: 0.01,
            record_stride: 1,
            c0: 1.0,
            control_level: 0.2,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if self.c0 == 0.0 || !self.c0.is_finite() {
            return Err(Error::Config("decision c0 must be finite and nonzero".into()));
        }
        DecisionPotential::new(
            self.beta,
            BiasRamp::new(self.ramp.start, self.ramp.end, self.ramp.level)?,
        )?;
        self.integrator(self.t_end).validate()
    }

    pub fn potential(&self) -> Result<DecisionPotential> {
        DecisionPotential::new(self.beta, self.ramp)
    }

    /// The same configuration with the ramp capped at `control_level`.
    pub fn control(&self) -> Self {
        Self {
            ramp: BiasRamp {
                level: self.control_level.copysign(self.ramp.level),
                ..self.ramp
            },
            ..self.clone()
        }
    }
}

/// Half-width parameters of the window around the switch excluded from tracking checks.
pub const TRACKING_WINDOW_BEFORE: f64 = 1.0;
pub const TRACKING_WINDOW_AFTER: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionResult {
    pub trajectory: Trajectory,
    /// First time after the ramp starts at which `c` has left its initial sign.
    pub switch_time: Option<f64>,
    pub bias_at_switch: Option<f64>,
    /// Number of sign changes of `c` along the whole run.
    pub sign_switches: usize,
    /// `(t, |h − g(c)|)`.
    pub tracking_error_series: Vec<(f64, f64)>,
}

impl DecisionResult {
    /// Max tracking error outside `(switch − 1, switch + 3)` (whole run without a switch).
    pub fn tracking_error_outside_switch(&self) -> f64 {
        self.tracking_error_series
            .iter()
            .filter(|(t, _)| match self.switch_time {
                Some(s) => *t <= s - TRACKING_WINDOW_BEFORE || *t >= s + TRACKING_WINDOW_AFTER,
                None => true,
            })
            .map(|p| p.1)
            .fold(0.0, f64::max)
    }

    /// `t,tracking_error`.
    pub fn write_tracking_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        csvfmt::write_row(w, &["t", "tracking_error"])?;
        for &(t, e) in &self.tracking_error_series {
            csvfmt::write_floats(w, &[t, e])?;
        }
        Ok(())
    }
}

pub fn run_decision_simulation(config: &DecisionConfig) -> Result<DecisionResult> {
    config.validate()?;
    let potential = config.potential()?;
    let metric = Metric::block_anisotropic(config.epsilon, benchmark_partition())?;
    let system = FlowSystem::new(&potential, &metric)?;
    let initial = State::from_slice(&[potential.habit(config.c0), config.c0], 0.0)?;
    let icfg = config.integrator(config.t_end);
    let trajectory = flow::integrate(&system, &initial, &icfg, None)?;

    let sign0 = config.c0.signum();
    let switch_time = trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .find(|(t, s)| **t >= config.ramp.start && s[1] * sign0 < 0.0)
        .map(|(t, _)| *t);
    let bias_at_switch = switch_time.map(|t| potential.bias(t));

    let mut sign_switches = 0;
    let mut last_sign = sign0;
    for s in &trajectory.states {
        let sg = if s[1] > 0.0 {
            1.0
        } else if s[1] < 0.0 {
            -1.0
        } else {
            continue;
        };
        if sg != last_sign {
            sign_switches += 1;
            last_sign = sg;
        }
    }
    let tracking_error_series = trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .map(|(t, s)| (*t, (s[0] - potential.habit(s[1])).abs()))
        .collect();
    Ok(DecisionResult {
        trajectory,
        switch_time,
        bias_at_switch,
        sign_switches,
        tracking_error_series,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionExperiment {
    pub main: DecisionResult,
    /// Same run with the ramp capped below the saddle-node threshold.
    pub control: DecisionResult,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionBounds {
    pub min_bias_at_switch: f64,
    pub max_tracking_error: f64,
}

impl Default for DecisionBounds {
    fn default() -> Self {
        Self {
            min_bias_at_switch: saddle_node_bias() - 0.05,
            max_tracking_error: 0.05,
        }
    }
}

impl DecisionExperiment {
    pub fn verdicts(&self, bounds: &DecisionBounds) -> Vec<Verdict> {
        vec![
            Verdict::check("sign_switches", self.main.sign_switches as f64, Bound::Range(1.0, 1.0)),
            Verdict::check(
                "abs_bias_at_switch",
                self.main.bias_at_switch.map_or(f64::NAN, f64::abs),
                Bound::AtLeast(bounds.min_bias_at_switch),
            ),
            Verdict::check(
                "tracking_error_outside_switch",
                self.main.tracking_error_outside_switch(),
                Bound::AtMost(bounds.max_tracking_error),
            ),
            Verdict::check(
                "control_sign_switches",
                self.control.sign_switches as f64,
                Bound::AtMost(0.0),
            ),
        ]
    }
}

pub fn run_decision_experiment(config: &DecisionConfig, threads: Option<usize>) -> Result<DecisionExperiment> {
    let configs = [config.clone(), config.control()];
    let mut results = par_map(&configs, threads, run_decision_simulation)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let control = results.pop().expect("two runs");
    let main = results.pop().expect("two runs");
    Ok(DecisionExperiment { main, control })
}

// ---------------------------------------------------------------------------
// Gradient / Hessian checks

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub samples: usize,
    /// Random times per state for time-varying potentials.
    pub times_per_state: usize,
    pub box_half_width: f64,
    pub max_time: f64,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            times_per_state: 10,
            box_half_width: 2.0,
            max_time: 60.0,
            step: DEFAULT_FD_STEP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub potential: String,
    pub evaluations: usize,
    pub max_gradient_error: f64,
    /// `None` when the potential has no analytic fast Hessian.
    pub max_hessian_error: Option<f64>,
}

/// The named built-in potentials with default parameters.
pub fn builtin_potentials() -> Vec<Arc<dyn Potential>> {
    vec![
        Arc::new(CubicBenchmark),
        Arc::new(DecisionPotential::default()),
        Arc::new(default_composite(1.0, 1.0)),
    ]
}

/// `w_c · CubicBenchmark + w_d · DecisionPotential`.
pub fn default_composite(cubic_weight: f64, decision_weight: f64) -> CompositePotential {
    composite_of(cubic_weight, decision_weight, DecisionPotential::default())
}

pub fn composite_of(cubic_weight: f64, decision_weight: f64, decision: DecisionPotential) -> CompositePotential {
    CompositePotential::new(vec![
        Component {
            label: "prediction".into(),
            weight: cubic_weight,
            potential: Arc::new(CubicBenchmark),
        },
        Component {
            label: "reward".into(),
            weight: decision_weight,
            potential: Arc::new(decision),
        },
    ])
    .expect("built-in components share a partition")
}

pub fn run_gradcheck(potentials: &[Arc<dyn Potential>], config: &GradcheckConfig) -> Result<Vec<GradcheckRow>> {
    let mut rows = Vec::with_capacity(potentials.len());
    for p in potentials {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let times = if p.is_time_varying() {
            config.times_per_state.max(1)
        } else {
            1
        };
        let has_hessian = p.partition().is_some() && {
            let probe = DVector::zeros(p.dim());
            p.hessian_fast_block(&probe, 0.0).is_some()
        };
        let (mut gerr, mut herr, mut count) = (0.0_f64, 0.0_f64, 0);
        for _ in 0..config.samples {
            let w = config.box_half_width;
            let coords = DVector::from_fn(p.dim(), |_, _| rng.random_range(-w..w));
            for _ in 0..times {
                let t = if p.is_time_varying() {
                    rng.random_range(0.0..config.max_time)
                } else {
                    0.0
                };
                let state = State::new(coords.clone(), t)?;
                gerr = gerr.max(potentials::gradient_check_error(p.as_ref(), &state, config.step)?);
                if has_hessian {
                    herr = herr.max(potentials::hessian_check_error(p.as_ref(), &state, config.step)?);
                }
                count += 1;
            }
        }
        rows.push(GradcheckRow {
            potential: p.name().to_string(),
            evaluations: count,
            max_gradient_error: gerr,
            max_hessian_error: has_hessian.then_some(herr),
        });
    }
    Ok(rows)
}

/// Slope recovered from `y = 3 x^1.5` with 1% multiplicative noise at 10 points.
pub fn noisy_fit_self_test(seed: u64) -> Result<LogLogFit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..10).map(|i| 0.1 * 1.5_f64.powi(i)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| 3.0 * x.powf(1.5) * (1.0 + 0.01 * rng.random_range(-1.0..1.0)))
        .collect();
    fit_loglog_slope(&xs, &ys)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckBounds {
    pub max_relative_error: f64,
    pub noisy_slope: Bound,
}

impl Default for GradcheckBounds {
    fn default() -> Self {
        Self {
            max_relative_error: 1e-6,
            noisy_slope: Bound::Range(1.4, 1.6),
        }
    }
}

pub fn gradcheck_verdicts(rows: &[GradcheckRow], noisy: &LogLogFit, bounds: &GradcheckBounds) -> Vec<Verdict> {
    let mut out = Vec::new();
    for r in rows {
        out.push(Verdict::check(
            format!("{}_gradient_rel_error", r.potential),
            r.max_gradient_error,
            Bound::AtMost(bounds.max_relative_error),
        ));
        if let Some(h) = r.max_hessian_error {
            out.push(Verdict::check(
                format!("{}_hessian_rel_error", r.potential),
                h,
                Bound::AtMost(bounds.max_relative_error),
            ));
        }
    }
    out.push(Verdict::check("noisy_fit_slope", noisy.slope, bounds.noisy_slope));
    out
}

/// `potential,evaluations,max_rel_gradient_error,max_rel_hessian_error`.
pub fn write_gradcheck_csv<W: Write>(w: &mut W, rows: &[GradcheckRow]) -> io::Result<()> {
    csvfmt::write_row(
        w,
        &[
            "potential",
            "evaluations",
            "max_rel_gradient_error",
            "max_rel_hessian_error",
        ],
    )?;
    for r in rows {
        let fields = [
            r.potential.clone(),
            r.evaluations.to_string(),
            csvfmt::float(r.max_gradient_error),
            r.max_hessian_error.map_or_else(|| "NA".to_string(), csvfmt::float),
        ];
        csvfmt::write_row(w, &fields)?;
    }
    Ok(())
}
