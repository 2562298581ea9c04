//! Fixed-step RK4 integration of the gradient flow `η̇ = −G(η)⁻¹∇J(η, t)`.

use std::io::{self, Write};

use nalgebra::DVector;
use thiserror::Error;

use crate::csvfmt;
use crate::error::{Error, Result};
use crate::geometry::{min_eigenvalue, Metric, Partition, State};
use crate::potentials::{self, Potential};

/// Allowed per-step increase of `J`, relative to `1 + max|J|`.
pub const DESCENT_SLACK: f64 = 1e-9;

/// Steps larger than `STABILITY_FACTOR / λ_max` trigger a warning.
pub const STABILITY_FACTOR: f64 = 0.2;

/// A potential paired with a metric: the right-hand side of the flow.
#[derive(Clone, Copy)]
pub struct FlowSystem<'a> {
    pub potential: &'a dyn Potential,
    pub metric: &'a Metric,
    sign: f64,
}

impl<'a> FlowSystem<'a> {
    pub fn new(potential: &'a dyn Potential, metric: &'a Metric) -> Result<Self> {
        if let Some(d) = metric.expected_dim() {
            if d != potential.dim() {
                return Err(Error::Config(format!(
                    "metric dimension {d} does not match potential '{}' dimension {}",
                    potential.name(),
                    potential.dim()
                )));
            }
        }
        Ok(Self {
            potential,
            metric,
            sign: -1.0,
        })
    }

    /// The same system flowing uphill (`η̇ = +G⁻¹∇J`).
    pub fn reversed(self) -> Self {
        Self {
            sign: -self.sign,
            ..self
        }
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn partition(&self) -> Option<Partition> {
        match self.metric {
            Metric::BlockAnisotropic { partition, .. } => Some(*partition),
            _ => self.potential.partition(),
        }
    }

    /// Flow velocity at `(coords, t)`.
    pub fn field(&self, coords: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let state = State {
            coords: coords.clone(),
            time: t,
        };
        let g = potentials::gradient(self.potential, &state)?;
        let w = self.metric.inverse_apply(&state, &g)?;
        Ok(w * self.sign)
    }

    fn stage(&self, coords: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let diverged = || Error::Divergence {
            time: t,
            state: coords.as_slice().to_vec(),
        };
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(diverged());
        }
        match self.field(coords, t) {
            Ok(v) if v.iter().all(|x| x.is_finite()) => Ok(v),
            Ok(_) | Err(Error::Evaluation { .. }) => Err(diverged()),
            Err(e) => Err(e),
        }
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn step_rk4(system: &FlowSystem<'_>, state: &State, dt: f64) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let (y, t) = (&state.coords, state.time);
    let half = 0.5 * dt;
    let k1 = system.stage(y, t)?;
    let k2 = system.stage(&(y + &k1 * half), t + half)?;
    let k3 = system.stage(&(y + &k2 * half), t + half)?;
    let k4 = system.stage(&(y + &k3 * dt), t + dt)?;
    let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence {
            time: t + dt,
            state: next.as_slice().to_vec(),
        });
    }
    Ok(State {
        coords: next,
        time: t + dt,
    })
}

/// Step size, horizon and recording density of an integration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Record every `record_stride`-th step (the last step is always recorded).
    pub record_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_start: 0.0,
            t_end: 20.0,
            record_stride: 1,
        }
    }
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let span = self.t_end - self.t_start;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "dt must be positive and finite, got {}",
                self.dt
            )));
        }
        if !(span > 0.0 && span.is_finite()) {
            return Err(Error::Config(format!(
                "t_end ({}) must exceed t_start ({})",
                self.t_end, self.t_start
            )));
        }
        if self.dt > span {
            return Err(Error::Config(format!(
                "dt ({}) must not exceed the integration span ({span})",
                self.dt
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of RK4 steps; the final time is the first grid point `>= t_end`.
    pub fn steps(&self) -> usize {
        let n = (self.t_end - self.t_start) / self.dt;
        (n - 1e-9).ceil().max(1.0) as usize
    }

    pub fn time_at(&self, step: usize) -> f64 {
        self.t_start + step as f64 * self.dt
    }

    /// `STABILITY_FACTOR / λ_max` of the fast Hessian at `state`, when it is available.
    pub fn stability_bound(potential: &dyn Potential, state: &State) -> Option<f64> {
        let h = potential.hessian_fast_block(&state.coords, state.time)?;
        let lmax = -min_eigenvalue(&(-h));
        (lmax > 0.0).then(|| STABILITY_FACTOR / lmax)
    }
}

/// Which part of the state a perturbation displaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KickTarget {
    Fast,
    Slow,
    Full,
}

/// An instantaneous displacement added at the first grid time `>= t_kick`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub t_kick: f64,
    pub delta: DVector<f64>,
    pub target: KickTarget,
}

impl Perturbation {
    fn full_delta(&self, n: usize, partition: Option<Partition>) -> Result<DVector<f64>> {
        let (range, len) = match self.target {
            KickTarget::Full => (0..n, n),
            KickTarget::Fast | KickTarget::Slow => {
                let p =
                    partition.ok_or_else(|| Error::Config("block perturbation needs a fast/slow partition".into()))?;
                if self.target == KickTarget::Fast {
                    (p.fast_range(), p.fast())
                } else {
                    (p.slow_range(), p.slow())
                }
            }
        };
        if self.delta.len() != len {
            return Err(Error::Config(format!(
                "perturbation delta has length {}, target block has length {len}",
                self.delta.len()
            )));
        }
        let mut full = DVector::zeros(n);
        for (i, j) in range.enumerate() {
            full[j] = self.delta[i];
        }
        Ok(full)
    }
}

/// Recorded position of an applied perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KickEvent {
    /// Index into the recorded arrays; the state there is post-kick.
    pub index: usize,
    pub time: f64,
}

/// Time-stamped record of one integration run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub potential_values: Vec<f64>,
    pub velocities: Vec<DVector<f64>>,
    pub kick: Option<KickEvent>,
    pub time_varying: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn last_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    pub fn push(&mut self, t: f64, state: DVector<f64>, value: f64, velocity: DVector<f64>) {
        self.times.push(t);
        self.states.push(state);
        self.potential_values.push(value);
        self.velocities.push(velocity);
    }

    /// Values of coordinate `i` over time.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }

    /// Writes `t,eta_1..eta_n,J,v_1..v_n`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("eta_{i}")));
        header.push("J".into());
        header.extend((1..=n).map(|i| format!("v_{i}")));
        csvfmt::write_row(w, &header)?;
        for i in 0..self.len() {
            let mut row = Vec::with_capacity(2 * n + 2);
            row.push(self.times[i]);
            row.extend(self.states[i].iter());
            row.push(self.potential_values[i]);
            row.extend(self.velocities[i].iter());
            csvfmt::write_floats(w, &row)?;
        }
        Ok(())
    }
}

/// Integration that stopped early; `partial` holds everything recorded so far.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct IntegrationFailure {
    pub partial: Trajectory,
    pub error: Error,
}

impl From<IntegrationFailure> for Error {
    fn from(f: IntegrationFailure) -> Self {
        f.error
    }
}

fn record(system: &FlowSystem<'_>, traj: &mut Trajectory, state: &State) -> Result<()> {
    let v = system.stage(&state.coords, state.time)?;
    let j = system.potential.value(&state.coords, state.time);
    if !j.is_finite() {
        return Err(Error::Divergence {
            time: state.time,
            state: state.coords.as_slice().to_vec(),
        });
    }
    traj.push(state.time, state.coords.clone(), j, v);
    Ok(())
}

/// Integrates the flow from `initial` over `[config.t_start, config.t_end]`.
///
/// The initial state's own time is ignored in favour of `config.t_start`.
pub fn integrate(
    system: &FlowSystem<'_>,
    initial: &State,
    config: &IntegratorConfig,
    perturbation: Option<&Perturbation>,
) -> std::result::Result<Trajectory, IntegrationFailure> {
    let mut traj = Trajectory {
        time_varying: system.potential.is_time_varying(),
        ..Trajectory::default()
    };
    let fail = |traj: Trajectory, error: Error| IntegrationFailure { partial: traj, error };

    if let Err(e) = config.validate() {
        return Err(fail(traj, e));
    }
    if initial.dim() != system.dim() {
        let e = Error::Config(format!(
            "initial state has dimension {}, system has dimension {}",
            initial.dim(),
            system.dim()
        ));
        return Err(fail(traj, e));
    }
    let kick = match perturbation {
        Some(p) => match p.full_delta(system.dim(), system.partition()) {
            Ok(d) => Some((p.t_kick, d)),
            Err(e) => return Err(fail(traj, e)),
        },
        None => None,
    };
    let mut state = State {
        coords: initial.coords.clone(),
        time: config.t_start,
    };
    if let Some(bound) = IntegratorConfig::stability_bound(system.potential, &state) {
        if config.dt > bound {
            log::warn!("dt = {} exceeds the RK4 stability estimate {bound:.3e}", config.dt);
        }
    }

    let mut pending = kick;
    let steps = config.steps();
    for i in 0..=steps {
        if i > 0 {
            match step_rk4(system, &state, config.dt) {
                Ok(mut next) => {
                    next.time = config.time_at(i);
                    state = next;
                }
                Err(e) => return Err(fail(traj, e)),
            }
        }
        let mut kicked = false;
        if let Some((t_kick, delta)) = &pending {
            if state.time >= *t_kick {
                state.coords += delta;
                kicked = true;
            }
        }
        if kicked {
            pending = None;
            traj.kick = Some(KickEvent {
                index: traj.len(),
                time: state.time,
            });
        }
        if kicked || i % config.record_stride == 0 || i == steps {
            if let Err(e) = record(system, &mut traj, &state) {
                return Err(fail(traj, e));
            }
        }
    }
    Ok(traj)
}

/// Largest recorded increase of `J` between consecutive points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityReport {
    pub max_increase: f64,
    /// First index `i + 1` whose increase over `i` exceeds `slack`.
    pub violating_index: Option<usize>,
    pub slack: f64,
}

impl MonotonicityReport {
    pub fn passes(&self) -> bool {
        self.violating_index.is_none()
    }
}

pub fn monotonicity_report(trajectory: &Trajectory) -> Result<MonotonicityReport> {
    if trajectory.time_varying {
        return Err(Error::Contract(
            "monotone descent only holds for time-invariant potentials".into(),
        ));
    }
    if trajectory.kick.is_some() {
        return Err(Error::Contract(
            "trajectory contains a perturbation event; scan the segments separately".into(),
        ));
    }
    let jmax = trajectory.potential_values.iter().fold(0.0_f64, |m, j| m.max(j.abs()));
    let slack = DESCENT_SLACK * (1.0 + jmax);
    let mut max_increase = 0.0_f64;
    let mut violating_index = None;
    for (i, w) in trajectory.potential_values.windows(2).enumerate() {
        let inc = w[1] - w[0];
        if inc > max_increase {
            max_increase = inc;
        }
        if inc > slack && violating_index.is_none() {
            violating_index = Some(i + 1);
        }
    }
    Ok(MonotonicityReport {
        max_increase,
        violating_index,
        slack,
    })
}

/// Time-averaged speeds of the fast and slow blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpeeds {
    pub fast: f64,
    pub slow: f64,
}

/// Trapezoidal time average of `‖ḣ‖` and `‖ċ‖` over the recorded window.
pub fn mean_speed_by_block(trajectory: &Trajectory, partition: Partition) -> Result<BlockSpeeds> {
    if trajectory.is_empty() {
        return Err(Error::Contract("cannot average speeds over an empty trajectory".into()));
    }
    partition.check_dim(trajectory.dim())?;
    let speeds: Vec<(f64, f64)> = trajectory
        .velocities
        .iter()
        .map(|v| {
            (
                v.rows(0, partition.fast()).norm(),
                v.rows(partition.fast(), partition.slow()).norm(),
            )
        })
        .collect();
    if trajectory.len() == 1 {
        let (fast, slow) = speeds[0];
        return Ok(BlockSpeeds { fast, slow });
    }
    let (mut fast, mut slow) = (0.0, 0.0);
    for i in 1..speeds.len() {
        let dt = trajectory.times[i] - trajectory.times[i - 1];
        fast += 0.5 * dt * (speeds[i].0 + speeds[i - 1].0);
        slow += 0.5 * dt * (speeds[i].1 + speeds[i - 1].1);
    }
    let span = trajectory.times[trajectory.len() - 1] - trajectory.times[0];
    Ok(BlockSpeeds {
        fast: fast / span,
        slow: slow / span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{CubicBenchmark, QuadraticBowl};
    use approx::assert_abs_diff_eq;

    fn st(c: &[f64]) -> State {
        State::from_slice(c, 0.0).unwrap()
    }

    fn p11() -> Partition {
        Partition::new(1, 1).unwrap()
    }

    #[test]
    fn rk4_step_matches_exponential() {
        let bowl = QuadraticBowl::new(2);
        let sys = FlowSystem::new(&bowl, &Metric::Identity).unwrap();
        let next = step_rk4(&sys, &st(&[1.0, 0.0]), 0.1).unwrap();
        assert_abs_diff_eq!(next.coords[0], (-0.1f64).exp(), epsilon = 1e-7);
        assert_eq!(next.coords[1], 0.0);
        assert_abs_diff_eq!(next.time, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn rk4_step_at_critical_point_is_identity() {
        let metric = Metric::block_anisotropic(0.3, p11()).unwrap();
        let sys = FlowSystem::new(&CubicBenchmark, &metric).unwrap();
        let s = st(&[0.0, 0.0]);
        assert_eq!(step_rk4(&sys, &s, 0.05).unwrap().coords, s.coords);
    }

    #[test]
    fn rk4_step_stays_near_manifold() {
        let eps = 0.2;
        let c: f64 = 1.2;
        let dt = 0.01;
        let metric = Metric::block_anisotropic(eps, p11()).unwrap();
        let sys = FlowSystem::new(&CubicBenchmark, &metric).unwrap();
        let s = st(&[c.powi(3), c]);
        let one = step_rk4(&sys, &s, dt).unwrap();
        // oracle: same interval with 100 sub-steps
        let fine = integrate(
            &sys,
            &s,
            &IntegratorConfig {
                dt: dt / 100.0,
                t_end: dt,
                ..IntegratorConfig::default()
            },
            None,
        )
        .unwrap();
        let fine_end = fine.last_state().unwrap();
        assert!((&one.coords - fine_end).amax() < 1e-12);
        let offset = (one.coords[0] - one.coords[1].powi(3)).abs();
        assert!(offset <= 10.0 * dt * eps * eps, "offset {offset}");
    }

    #[test]
    fn divergence_is_reported_with_partial_trajectory() {
        let metric = Metric::block_anisotropic(0.4, p11()).unwrap();
        let sys = FlowSystem::new(&CubicBenchmark, &metric).unwrap();
        let cfg = IntegratorConfig::new(10.0, 200.0);
        let err = integrate(&sys, &st(&[1.5, -1.0]), &cfg, None).unwrap_err();
        assert!(matches!(err.error, Error::Divergence { .. }));
        assert_eq!(err.partial.len(), 1);
    }

    #[test]
    fn zero_gradient_start_is_constant() {
        let metric = Metric::block_anisotropic(0.2, p11()).unwrap();
        let sys = FlowSystem::new(&CubicBenchmark, &metric).unwrap();
        let traj = integrate(&sys, &st(&[0.0, 0.0]), &IntegratorConfig::new(0.01, 5.0), None).unwrap();
        assert_eq!(traj.len(), 501);
        assert!(traj.states.iter().all(|s| s.iter().all(|&x| x == 0.0)));
        assert!(traj.velocities.iter().all(|v| v.iter().all(|&x| x == 0.0)));
        let rep = monotonicity_report(&traj).unwrap();
        assert_eq!(rep.max_increase, 0.0);
        let sp = mean_speed_by_block(&traj, p11()).unwrap();
        assert_eq!((sp.fast, sp.slow), (0.0, 0.0));
    }

    #[test]
    fn trajectory_bookkeeping() {
        let traj = integrate(
            &FlowSystem::new(&QuadraticBowl::new(2), &Metric::Identity).unwrap(),
            &st(&[1.0, 2.0]),
            &IntegratorConfig {
                dt: 0.03,
                t_end: 1.0,
                record_stride: 4,
                ..IntegratorConfig::default()
            },
            None,
        )
        .unwrap();
        assert_eq!(traj.times[0], 0.0);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        let last = *traj.times.last().unwrap();
        assert!((1.0..=1.0 + 0.03 + 1e-12).contains(&last));
        assert_eq!(traj.states.len(), traj.len());
        assert_eq!(traj.velocities.len(), traj.len());
        assert_eq!(traj.potential_values.len(), traj.len());
    }

    #[test]
    fn kick_on_fast_block() {
        let metric = Metric::block_anisotropic(0.2, p11()).unwrap();
        let sys = FlowSystem::new(&CubicBenchmark, &metric).unwrap();
        let cfg = IntegratorConfig::new(0.01, 5.0);
        let s0 = st(&[1.5, -1.0]);
        let plain = integrate(&sys, &s0, &cfg, None).unwrap();
        let kick = Perturbation {
            t_kick: 2.0,
            delta: DVector::from_vec(vec![0.75]),
            target: KickTarget::Fast,
        };
        let kicked = integrate(&sys, &s0, &cfg, Some(&kick)).unwrap();
        let ev = kicked.kick.unwrap();
        assert!(ev.time >= 2.0 && ev.time < 2.0 + 0.01);
        for i in 0..ev.index {
            assert_eq!(kicked.states[i], plain.states[i]);
        }
        let jump = (&kicked.states[ev.index] - &plain.states[ev.index]).norm();
        assert_abs_diff_eq!(jump, 0.75, epsilon = 1e-14);
        assert!(matches!(monotonicity_report(&kicked), Err(Error::Contract(_))));
    }

    #[test]
    fn wrong_kick_length_is_config_error() {
        let metric = Metric::block_anisotropic(0.2, p11()).unwrap();
        let sys = FlowSystem::new(&CubicBenchmark, &metric).unwrap();
        let kick = Perturbation {
            t_kick: 1.0,
            delta: DVector::from_vec(vec![1.0, 1.0]),
            target: KickTarget::Slow,
        };
        let err = integrate(&sys, &st(&[1.0, 1.0]), &IntegratorConfig::new(0.1, 2.0), Some(&kick)).unwrap_err();
        assert!(matches!(err.error, Error::Config(_)));
    }

    #[test]
    fn frozen_slow_block_has_zero_slow_speed() {
        // ε → 0 limit: a metric whose slow block never moves.
        let frozen = FnFrozen;
        let traj = integrate(
            &FlowSystem::new(&frozen, &Metric::Identity).unwrap(),
            &st(&[2.0, 0.7]),
            &IntegratorConfig::new(0.01, 3.0),
            None,
        )
        .unwrap();
        let sp = mean_speed_by_block(&traj, p11()).unwrap();
        assert_eq!(sp.slow, 0.0);
        assert!(sp.fast > 0.0);
    }

    /// Cubic benchmark with the slow gradient switched off.
    struct FnFrozen;

    impl Potential for FnFrozen {
        fn name(&self) -> &str {
            "frozen"
        }
        fn dim(&self) -> usize {
            2
        }
        fn partition(&self) -> Option<Partition> {
            Some(Partition::new(1, 1).unwrap())
        }
        fn value(&self, x: &DVector<f64>, t: f64) -> f64 {
            CubicBenchmark.value(x, t)
        }
        fn gradient(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
            let mut g = CubicBenchmark.gradient(x, t);
            g[1] = 0.0;
            g
        }
    }

    #[test]
    fn empty_trajectory_speed_is_contract_error() {
        assert!(matches!(
            mean_speed_by_block(&Trajectory::default(), p11()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn csv_header_and_rows() {
        let traj = integrate(
            &FlowSystem::new(&CubicBenchmark, &Metric::Identity).unwrap(),
            &st(&[1.0, 0.5]),
            &IntegratorConfig::new(0.5, 1.0),
            None,
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,eta_1,eta_2,J,v_1,v_2");
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(row.len(), 6);
        assert_eq!(row[1], 1.0);
        assert_eq!(text.lines().count(), 1 + traj.len());
    }
}
