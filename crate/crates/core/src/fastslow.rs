//! Fast equilibria `h*(c)`, the critical manifold, and the reduced slow flow
//! `ċ = −ε² ∇_c J(h*(c), c)`.

use std::io::{self, Write};

use nalgebra::DVector;

use crate::csvfmt;
use crate::error::{Error, Result};
use crate::flow::{IntegrationFailure, IntegratorConfig, Trajectory};
use crate::geometry::{min_eigenvalue, Partition, State};
use crate::potentials::{self, HessianSource, Potential};

/// Offset of the extra initial guesses used to detect non-unique fast minimisers.
pub const BRANCH_PROBE_RADIUS: f64 = 1.0;

/// Two equilibria closer than this count as the same branch.
pub const BRANCH_MATCH_TOL: f64 = 1e-6;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub hessian: HessianSource,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            hessian: HessianSource::Analytic,
        }
    }
}

/// A solved point `(h*(c), c)` of the critical manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct FastEquilibrium {
    pub c: DVector<f64>,
    pub h_star: DVector<f64>,
    /// Smallest eigenvalue of `∇²_hh J` at the solution.
    pub stability_margin: f64,
    /// `‖∇_h J‖` at the solution.
    pub residual: f64,
    pub iterations: usize,
    /// Residual norm at every iterate, starting with `h_init`.
    pub residual_history: Vec<f64>,
}

fn require_partition(potential: &dyn Potential) -> Result<Partition> {
    potential
        .partition()
        .ok_or_else(|| Error::Contract(format!("potential '{}' has no fast/slow partition", potential.name())))
}

struct FastProblem<'a> {
    potential: &'a dyn Potential,
    partition: Partition,
    c: &'a DVector<f64>,
    t: f64,
    hessian: HessianSource,
}

impl FastProblem<'_> {
    fn state(&self, h: &DVector<f64>) -> State {
        State {
            coords: self.partition.join(h, self.c),
            time: self.t,
        }
    }

    fn residual(&self, h: &DVector<f64>) -> Result<DVector<f64>> {
        let g = potentials::gradient(self.potential, &self.state(h))?;
        Ok(g.rows(0, self.partition.fast()).into_owned())
    }

    fn value(&self, h: &DVector<f64>) -> Result<f64> {
        potentials::evaluate(self.potential, &self.state(h))
    }

    fn hessian(&self, h: &DVector<f64>) -> Result<nalgebra::DMatrix<f64>> {
        potentials::hessian_fast_block(self.potential, &self.state(h), self.hessian)
    }

    /// Newton direction with backtracking on `½‖r‖²`; `None` when the
    /// Hessian is singular or the direction does not descend `J`.
    fn newton_step(&self, h: &DVector<f64>, r: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        let hess = self.hessian(h)?;
        let Some(dir) = hess.lu().solve(&(-r)) else {
            return Ok(None);
        };
        if dir.iter().any(|x| !x.is_finite()) || dir.dot(r) >= 0.0 {
            return Ok(None);
        }
        let phi = 0.5 * r.norm_squared();
        let mut alpha = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let trial = h + &dir * alpha;
            if let Ok(rt) = self.residual(&trial) {
                if 0.5 * rt.norm_squared() <= (1.0 - 2.0 * ARMIJO * alpha) * phi {
                    return Ok(Some(trial));
                }
            }
            alpha *= 0.5;
        }
        Ok(None)
    }

    /// Steepest descent on `J(·, c)` with Armijo backtracking.
    fn gradient_step(&self, h: &DVector<f64>, r: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        let j0 = self.value(h)?;
        let slope = r.norm_squared();
        let mut alpha = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let trial = h - r * alpha;
            if let Ok(jt) = self.value(&trial) {
                if jt <= j0 - ARMIJO * alpha * slope {
                    return Ok(Some(trial));
                }
            }
            alpha *= 0.5;
        }
        Ok(None)
    }
}

/// Solves `∇_h J(h, c) = 0` by damped Newton, falling back to gradient descent.
pub fn solve_fast_equilibrium(
    potential: &dyn Potential,
    c: &DVector<f64>,
    h_init: &DVector<f64>,
    t: f64,
    options: &SolverOptions,
) -> Result<FastEquilibrium> {
    let partition = require_partition(potential)?;
    if c.len() != partition.slow() || h_init.len() != partition.fast() {
        return Err(Error::Config(format!(
            "expected |c| = {} and |h| = {}, got {} and {}",
            partition.slow(),
            partition.fast(),
            c.len(),
            h_init.len()
        )));
    }
    let problem = FastProblem {
        potential,
        partition,
        c,
        t,
        hessian: options.hessian,
    };
    let mut h = h_init.clone();
    let mut r = problem.residual(&h)?;
    let mut history = vec![r.norm()];
    let mut iterations = 0;
    while r.norm() > options.tol {
        if iterations == options.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: r.norm(),
                best: h.as_slice().to_vec(),
            });
        }
        iterations += 1;
        let next = match problem.newton_step(&h, &r)? {
            Some(n) => Some(n),
            None => problem.gradient_step(&h, &r)?,
        };
        let Some(next) = next else {
            return Err(Error::NonConvergence {
                iterations,
                residual: r.norm(),
                best: h.as_slice().to_vec(),
            });
        };
        h = next;
        r = problem.residual(&h)?;
        history.push(r.norm());
    }
    let margin = min_eigenvalue(&problem.hessian(&h)?);
    if !(margin > 0.0) {
        return Err(Error::StabilityViolation {
            c: c.as_slice().to_vec(),
            h_star: h.as_slice().to_vec(),
            margin,
        });
    }
    Ok(FastEquilibrium {
        c: c.clone(),
        h_star: h,
        stability_margin: margin,
        residual: r.norm(),
        iterations,
        residual_history: history,
    })
}

/// Critical manifold sampled on a grid of slow values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CriticalManifoldSample {
    pub points: Vec<FastEquilibrium>,
}

impl CriticalManifoldSample {
    pub fn min_margin(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.stability_margin)
            .fold(f64::INFINITY, f64::min)
    }

    /// Writes `c_1..c_k,h_1..h_m,margin,residual`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let Some(first) = self.points.first() else {
            return Ok(());
        };
        let mut header: Vec<String> = (1..=first.c.len()).map(|i| format!("c_{i}")).collect();
        header.extend((1..=first.h_star.len()).map(|i| format!("h_{i}")));
        header.push("margin".into());
        header.push("residual".into());
        csvfmt::write_row(w, &header)?;
        for p in &self.points {
            let mut row: Vec<f64> = p.c.iter().chain(p.h_star.iter()).copied().collect();
            row.push(p.stability_margin);
            row.push(p.residual);
            csvfmt::write_floats(w, &row)?;
        }
        Ok(())
    }
}

fn probes(h: &DVector<f64>) -> [DVector<f64>; 2] {
    let shift = DVector::from_element(h.len(), BRANCH_PROBE_RADIUS);
    [h + &shift, h - &shift]
}

/// Solves along `c_grid` with warm starts, checking each point for a second
/// stable branch reachable from nearby initial guesses.
pub fn sample_critical_manifold(
    potential: &dyn Potential,
    c_grid: &[DVector<f64>],
    h_init: &DVector<f64>,
    t: f64,
    options: &SolverOptions,
) -> Result<CriticalManifoldSample> {
    for w in c_grid.windows(2) {
        if w[0].len() != w[1].len() || w[0].iter().zip(w[1].iter()).any(|(a, b)| b <= a) {
            return Err(Error::Contract(
                "slow grid must be strictly increasing in every coordinate".into(),
            ));
        }
    }
    let mut warm = h_init.clone();
    let mut points = Vec::with_capacity(c_grid.len());
    for c in c_grid {
        let eq = solve_fast_equilibrium(potential, c, &warm, t, options)?;
        let mut others = Vec::new();
        for guess in probes(&eq.h_star) {
            if let Ok(alt) = solve_fast_equilibrium(potential, c, &guess, t, options) {
                if (&alt.h_star - &eq.h_star).amax() > BRANCH_MATCH_TOL {
                    others.push(alt.h_star.as_slice().to_vec());
                }
            }
        }
        if !others.is_empty() {
            let mut solutions = vec![eq.h_star.as_slice().to_vec()];
            solutions.extend(others);
            return Err(Error::BranchDependence {
                c: c.as_slice().to_vec(),
                solutions,
            });
        }
        warm = eq.h_star.clone();
        points.push(eq);
    }
    Ok(CriticalManifoldSample { points })
}

/// Smallest stability margin over a slow grid: a sampled lower bound on α.
pub fn stability_margin_over_grid(
    potential: &dyn Potential,
    c_grid: &[DVector<f64>],
    h_init: &DVector<f64>,
    t: f64,
    options: &SolverOptions,
) -> Result<f64> {
    Ok(sample_critical_manifold(potential, c_grid, h_init, t, options)?.min_margin())
}

/// `−ε² ∇_c J(h*, c)`.
pub fn reduced_velocity(
    potential: &dyn Potential,
    epsilon: f64,
    c: &DVector<f64>,
    h_star: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let partition = require_partition(potential)?;
    let state = State {
        coords: partition.join(h_star, c),
        time: t,
    };
    let g = potentials::gradient(potential, &state)?;
    Ok(g.rows(partition.fast(), partition.slow()) * (-epsilon * epsilon))
}

struct ReducedFlow<'a> {
    potential: &'a dyn Potential,
    partition: Partition,
    epsilon: f64,
    options: SolverOptions,
}

impl ReducedFlow<'_> {
    /// Velocity and manifold value at `c`; `warm` is updated to the new `h*`.
    fn eval(&self, c: &DVector<f64>, t: f64, warm: &mut DVector<f64>) -> Result<(DVector<f64>, f64)> {
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                time: t,
                state: c.as_slice().to_vec(),
            });
        }
        let eq = solve_fast_equilibrium(self.potential, c, warm, t, &self.options)?;
        let v = reduced_velocity(self.potential, self.epsilon, c, &eq.h_star, t)?;
        let j = self.potential.value(&self.partition.join(&eq.h_star, c), t);
        *warm = eq.h_star;
        Ok((v, j))
    }

    fn step(&self, c: &DVector<f64>, t: f64, dt: f64, warm: &mut DVector<f64>) -> Result<DVector<f64>> {
        let half = 0.5 * dt;
        let (k1, _) = self.eval(c, t, warm)?;
        let (k2, _) = self.eval(&(c + &k1 * half), t + half, warm)?;
        let (k3, _) = self.eval(&(c + &k2 * half), t + half, warm)?;
        let (k4, _) = self.eval(&(c + &k3 * dt), t + dt, warm)?;
        Ok(c + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
    }
}

/// RK4 on the reduced flow; every stage re-solves `h*(c)` from the previous solution.
///
/// The returned trajectory holds slow coordinates only; its potential values
/// are `J(h*(c), c)` and its velocities the reduced field.
pub fn integrate_reduced(
    potential: &dyn Potential,
    epsilon: f64,
    c0: &DVector<f64>,
    config: &IntegratorConfig,
) -> std::result::Result<Trajectory, IntegrationFailure> {
    let mut traj = Trajectory {
        time_varying: potential.is_time_varying(),
        ..Trajectory::default()
    };
    let fail = |traj: Trajectory, error: Error| IntegrationFailure { partial: traj, error };
    if let Err(e) = config.validate() {
        return Err(fail(traj, e));
    }
    let partition = match require_partition(potential) {
        Ok(p) => p,
        Err(e) => return Err(fail(traj, e)),
    };
    if c0.len() != partition.slow() {
        let e = Error::Config(format!("c0 has length {}, expected {}", c0.len(), partition.slow()));
        return Err(fail(traj, e));
    }
    let flow = ReducedFlow {
        potential,
        partition,
        epsilon,
        options: SolverOptions::default(),
    };
    let mut warm = DVector::zeros(partition.fast());
    let mut c = c0.clone();
    let steps = config.steps();
    for i in 0..=steps {
        let t = config.time_at(i);
        if i > 0 {
            match flow.step(&c, config.time_at(i - 1), config.dt, &mut warm) {
                Ok(next) => c = next,
                Err(e) => return Err(fail(traj, e)),
            }
        }
        if i % config.record_stride == 0 || i == steps {
            match flow.eval(&c, t, &mut warm) {
                Ok((v, j)) => traj.push(t, c.clone(), j, v),
                Err(e) => return Err(fail(traj, e)),
            }
        }
    }
    Ok(traj)
}

/// `D(t) = ‖h(t) − h*(c(t))‖` along a full-state trajectory.
pub fn manifold_distance_series(
    trajectory: &Trajectory,
    potential: &dyn Potential,
    partition: Partition,
    options: &SolverOptions,
) -> Result<Vec<(f64, f64)>> {
    partition.check_dim(trajectory.dim())?;
    let mut out = Vec::with_capacity(trajectory.len());
    let mut warm: Option<DVector<f64>> = None;
    for (t, s) in trajectory.times.iter().zip(&trajectory.states) {
        let h = partition.fast_block(s);
        let c = partition.slow_block(s);
        let guess = warm.take().unwrap_or_else(|| h.clone());
        let eq = solve_fast_equilibrium(potential, &c, &guess, *t, options)?;
        out.push((*t, (&h - &eq.h_star).norm()));
        warm = Some(eq.h_star);
    }
    Ok(out)
}

pub fn write_distance_csv<W: Write>(w: &mut W, series: &[(f64, f64)]) -> io::Result<()> {
    csvfmt::write_row(w, &["t", "D"])?;
    for &(t, d) in series {
        csvfmt::write_floats(w, &[t, d])?;
    }
    Ok(())
}

/// Maximum slow-coordinate deviation between a full and a reduced run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionReport {
    pub epsilon: f64,
    pub max_error: f64,
    pub transient_cutoff: f64,
}

pub fn write_reduction_csv<W: Write>(w: &mut W, reports: &[ReductionReport]) -> io::Result<()> {
    csvfmt::write_row(w, &["epsilon", "max_error"])?;
    for r in reports {
        csvfmt::write_floats(w, &[r.epsilon, r.max_error])?;
    }
    Ok(())
}

fn slow_series(traj: &Trajectory, partition: Partition) -> Result<Vec<DVector<f64>>> {
    let n = traj.dim();
    if n == partition.slow() {
        Ok(traj.states.clone())
    } else if n == partition.dim() {
        Ok(traj.states.iter().map(|s| partition.slow_block(s)).collect())
    } else {
        Err(Error::Config(format!(
            "trajectory dimension {n} matches neither the slow block nor the full state"
        )))
    }
}

fn interpolate(times: &[f64], values: &[DVector<f64>], t: f64) -> DVector<f64> {
    let i = times.partition_point(|&x| x <= t);
    if i == 0 {
        return values[0].clone();
    }
    if i == times.len() {
        return values[i - 1].clone();
    }
    let (t0, t1) = (times[i - 1], times[i]);
    if t == t0 {
        return values[i - 1].clone();
    }
    let w = (t - t0) / (t1 - t0);
    &values[i - 1] * (1.0 - w) + &values[i] * w
}

/// Max over the union time grid (restricted to `t >= transient_cutoff`) of
/// `‖c_full(t) − c_reduced(t)‖`, both linearly interpolated.
pub fn reduction_error(
    full: &Trajectory,
    reduced: &Trajectory,
    partition: Partition,
    epsilon: f64,
    transient_cutoff: f64,
) -> Result<ReductionReport> {
    if !(transient_cutoff >= 0.0) {
        return Err(Error::Contract(format!(
            "transient cutoff must be >= 0, got {transient_cutoff}"
        )));
    }
    if full.is_empty() || reduced.is_empty() {
        return Err(Error::Contract(
            "reduction error needs two non-empty trajectories".into(),
        ));
    }
    let a = slow_series(full, partition)?;
    let b = slow_series(reduced, partition)?;
    let lo = full.times[0].max(reduced.times[0]).max(transient_cutoff);
    let hi = full.times[full.len() - 1].min(reduced.times[reduced.len() - 1]);
    if lo > hi {
        return Err(Error::Contract(format!(
            "trajectories do not overlap after the cutoff (window [{lo}, {hi}])"
        )));
    }
    let mut grid: Vec<f64> = full
        .times
        .iter()
        .chain(&reduced.times)
        .copied()
        .filter(|&t| t >= lo && t <= hi)
        .collect();
    grid.push(lo);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let max_error = grid
        .iter()
        .map(|&t| (interpolate(&full.times, &a, t) - interpolate(&reduced.times, &b, t)).norm())
        .fold(0.0, f64::max);
    Ok(ReductionReport {
        epsilon,
        max_error,
        transient_cutoff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{BiasRamp, CubicBenchmark, DecisionPotential, FnPotential};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    /// `½(h² − c)²`: two minimisers `±√c` for `c > 0`.
    fn double_branch() -> FnPotential {
        FnPotential::new(
            "double-branch",
            2,
            |x, _| 0.5 * (x[0] * x[0] - x[1]).powi(2),
            |x, _| {
                let r = x[0] * x[0] - x[1];
                DVector::from_vec(vec![2.0 * x[0] * r, -r])
            },
        )
        .with_partition(Partition::new(1, 1).unwrap())
        .with_fast_hessian(|x, _| DMatrix::from_element(1, 1, 6.0 * x[0] * x[0] - 2.0 * x[1]))
    }

    #[test]
    fn cubic_equilibria() {
        let eq = solve_fast_equilibrium(&CubicBenchmark, &v(&[2.0]), &v(&[0.0]), 0.0, &opts()).unwrap();
        assert_abs_diff_eq!(eq.h_star[0], 8.0, epsilon = 1e-12);
        assert_eq!(eq.stability_margin, 1.0);
        let eq = solve_fast_equilibrium(&CubicBenchmark, &v(&[0.0]), &v(&[0.0]), 0.0, &opts()).unwrap();
        assert_eq!(eq.h_star[0], 0.0);
        assert_eq!(eq.stability_margin, 1.0);
        assert_eq!(eq.iterations, 0);
    }

    #[test]
    fn decision_equilibrium_is_habit() {
        let p = DecisionPotential::default();
        for t in [0.0, 17.0, 55.0] {
            let eq = solve_fast_equilibrium(&p, &v(&[1.0]), &v(&[-0.3]), t, &opts()).unwrap();
            assert_abs_diff_eq!(eq.h_star[0], 2.0f64.tanh(), epsilon = 1e-12);
            assert_abs_diff_eq!(eq.h_star[0], 0.964028, epsilon = 1e-6);
            assert_eq!(eq.stability_margin, 1.0);
        }
    }

    #[test]
    fn newton_residuals_non_increasing() {
        let p = double_branch();
        let eq = solve_fast_equilibrium(&p, &v(&[2.0]), &v(&[5.0]), 0.0, &opts()).unwrap();
        assert_abs_diff_eq!(eq.h_star[0], 2.0f64.sqrt(), epsilon = 1e-10);
        assert!(
            eq.residual_history.windows(2).all(|w| w[1] <= w[0]),
            "{:?}",
            eq.residual_history
        );
        assert!(eq.iterations > 1);
    }

    #[test]
    fn saddle_start_reports_stability_violation() {
        // h = 0 solves ∇_h J = 0 but is a local maximum for c > 0.
        let err = solve_fast_equilibrium(&double_branch(), &v(&[1.0]), &v(&[0.0]), 0.0, &opts()).unwrap_err();
        match err {
            Error::StabilityViolation { margin, .. } => assert_abs_diff_eq!(margin, -2.0, epsilon = 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_convergence_carries_best_iterate() {
        let tight = SolverOptions { max_iter: 1, ..opts() };
        let err = solve_fast_equilibrium(&double_branch(), &v(&[2.0]), &v(&[50.0]), 0.0, &tight).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 1, .. }));
    }

    #[test]
    fn singular_hessian_falls_back_to_gradient_descent() {
        // J = ¼h⁴ − hc has a zero fast Hessian at h = 0.
        let p = FnPotential::new(
            "flat",
            2,
            |x, _| 0.25 * x[0].powi(4) - x[0] * x[1],
            |x, _| DVector::from_vec(vec![x[0].powi(3) - x[1], -x[0]]),
        )
        .with_partition(Partition::new(1, 1).unwrap())
        .with_fast_hessian(|x, _| DMatrix::from_element(1, 1, 3.0 * x[0] * x[0]));
        let eq = solve_fast_equilibrium(&p, &v(&[8.0]), &v(&[0.0]), 0.0, &opts()).unwrap();
        assert_abs_diff_eq!(eq.h_star[0], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn cubic_manifold_and_margin() {
        let grid: Vec<_> = (0..41).map(|i| v(&[-2.0 + 0.1 * i as f64])).collect();
        let sample = sample_critical_manifold(&CubicBenchmark, &grid, &v(&[0.0]), 0.0, &opts()).unwrap();
        for p in &sample.points {
            assert!((p.h_star[0] - p.c[0].powi(3)).abs() <= 1e-10);
            assert!(p.residual <= 1e-10);
        }
        assert_eq!(sample.min_margin(), 1.0);
        let m = stability_margin_over_grid(&DecisionPotential::default(), &grid, &v(&[0.0]), 10.0, &opts()).unwrap();
        assert_eq!(m, 1.0);
    }

    #[test]
    fn double_branch_is_detected() {
        let grid: Vec<_> = (0..8).map(|i| v(&[0.25 + 0.25 * i as f64])).collect();
        let err = stability_margin_over_grid(&double_branch(), &grid, &v(&[0.1]), 0.0, &opts()).unwrap_err();
        match err {
            Error::BranchDependence { c, solutions } => {
                let root = c[0].sqrt();
                assert!(solutions.iter().any(|s| (s[0] - root).abs() < 1e-9));
                assert!(solutions.iter().any(|s| (s[0] + root).abs() < 1e-9));
            }
            other => panic!("unexpected {other:?}"),
        }
        // Single-branch margin matches the closed form 6c − 2c = 4c.
        let eq = solve_fast_equilibrium(&double_branch(), &v(&[0.5]), &v(&[1.0]), 0.0, &opts()).unwrap();
        assert_abs_diff_eq!(eq.stability_margin, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn grid_must_increase() {
        let grid = vec![v(&[0.0]), v(&[0.0])];
        assert!(matches!(
            sample_critical_manifold(&CubicBenchmark, &grid, &v(&[0.0]), 0.0, &opts()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn reduced_velocity_examples() {
        let c = v(&[1.5]);
        let h = v(&[3.375]);
        let r = reduced_velocity(&CubicBenchmark, 0.2, &c, &h, 0.0).unwrap();
        assert_abs_diff_eq!(r[0], -0.06, epsilon = 1e-15);
        let a = reduced_velocity(&CubicBenchmark, 0.1, &c, &h, 0.0).unwrap();
        let b = reduced_velocity(&CubicBenchmark, 0.2, &c, &h, 0.0).unwrap();
        assert_abs_diff_eq!(b[0] / a[0], 4.0, epsilon = 1e-12);
        let zero = reduced_velocity(&CubicBenchmark, 0.3, &v(&[0.0]), &v(&[0.0]), 0.0).unwrap();
        assert_eq!(zero[0], 0.0);
    }

    #[test]
    fn reduced_flow_matches_exponential() {
        let cfg = IntegratorConfig::new(0.01, 50.0);
        let traj = integrate_reduced(&CubicBenchmark, 0.2, &v(&[1.0]), &cfg).unwrap();
        let end = traj.last_state().unwrap()[0];
        assert_abs_diff_eq!(end, (-2.0f64).exp(), epsilon = 1e-6);
        assert_abs_diff_eq!(end, 0.135335, epsilon = 1e-6);
        assert!(traj
            .potential_values
            .windows(2)
            .all(|w| w[1] - w[0] <= 1e-9 * (1.0 + w[0].abs())));

        let zero = integrate_reduced(&CubicBenchmark, 0.2, &v(&[0.0]), &IntegratorConfig::new(0.1, 10.0)).unwrap();
        assert!(zero.states.iter().all(|s| s[0] == 0.0));
    }

    #[test]
    fn reduced_decision_flow_settles_in_right_well() {
        let p = DecisionPotential::new(2.0, BiasRamp::none()).unwrap();
        let traj = integrate_reduced(&p, 0.5, &v(&[1.0]), &IntegratorConfig::new(0.05, 100.0)).unwrap();
        assert_abs_diff_eq!(traj.last_state().unwrap()[0], 1.0, epsilon = 1e-9);
        let traj = integrate_reduced(&p, 0.5, &v(&[0.3]), &IntegratorConfig::new(0.05, 400.0)).unwrap();
        assert_abs_diff_eq!(traj.last_state().unwrap()[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn distance_is_zero_on_manifold() {
        let mut traj = Trajectory::default();
        for i in 0..10 {
            let c = -1.0 + 0.2 * i as f64;
            traj.push(i as f64, v(&[c * c * c, c]), 0.0, v(&[0.0, 0.0]));
        }
        let d = manifold_distance_series(&traj, &CubicBenchmark, Partition::new(1, 1).unwrap(), &opts()).unwrap();
        assert!(d.iter().all(|&(_, x)| x <= 1e-15));
    }

    #[test]
    fn reduction_error_of_identical_trajectories_is_zero() {
        let traj = integrate_reduced(&CubicBenchmark, 0.3, &v(&[1.0]), &IntegratorConfig::new(0.1, 20.0)).unwrap();
        let r = reduction_error(&traj, &traj, Partition::new(1, 1).unwrap(), 0.3, 5.0).unwrap();
        assert_eq!(r.max_error, 0.0);
    }

    #[test]
    fn reduction_error_rejects_disjoint_windows() {
        let a = integrate_reduced(&CubicBenchmark, 0.3, &v(&[1.0]), &IntegratorConfig::new(0.1, 2.0)).unwrap();
        let mut b = a.clone();
        for t in &mut b.times {
            *t += 10.0;
        }
        assert!(matches!(
            reduction_error(&a, &b, Partition::new(1, 1).unwrap(), 0.3, 0.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn reduced_self_consistency_under_half_step() {
        let coarse = integrate_reduced(&CubicBenchmark, 0.1, &v(&[1.0]), &IntegratorConfig::new(0.01, 100.0)).unwrap();
        let fine = integrate_reduced(&CubicBenchmark, 0.1, &v(&[1.0]), &IntegratorConfig::new(0.005, 100.0)).unwrap();
        let r = reduction_error(&coarse, &fine, Partition::new(1, 1).unwrap(), 0.1, 5.0).unwrap();
        assert!(r.max_error <= 1e-8, "{}", r.max_error);
    }
}
