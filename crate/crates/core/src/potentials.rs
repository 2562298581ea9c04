//! Scalar potentials `J(η, t)` and finite-difference oracles for them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{Partition, State};

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Asymmetry of a finite-difference Hessian above which a warning is logged.
pub const FD_HESSIAN_ASYMMETRY_WARN: f64 = 1e-8;

/// A twice-differentiable scalar field over the state space.
///
/// Implementations work on raw coordinate vectors; the checked entry points
/// [`evaluate`], [`gradient`] and [`hessian_fast_block`] add finiteness checks.
pub trait Potential: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Fast/slow split, if the potential has one.
    fn partition(&self) -> Option<Partition>;

    fn value(&self, coords: &DVector<f64>, t: f64) -> f64;

    fn gradient(&self, coords: &DVector<f64>, t: f64) -> DVector<f64>;

    /// Analytic `∇²_hh J`, when available.
    fn hessian_fast_block(&self, _coords: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        None
    }

    fn is_time_varying(&self) -> bool {
        false
    }
}

impl fmt::Debug for dyn Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Potential({})", self.name())
    }
}

fn check_state_dim(potential: &dyn Potential, state: &State) -> Result<()> {
    if state.dim() != potential.dim() {
        return Err(Error::Config(format!(
            "potential '{}' has dimension {}, state has dimension {}",
            potential.name(),
            potential.dim(),
            state.dim()
        )));
    }
    Ok(())
}

fn evaluation_error(quantity: &'static str, state: &State) -> Error {
    Error::Evaluation {
        quantity,
        state: state.coords.as_slice().to_vec(),
        time: state.time,
    }
}

/// `J(η, t)` at the state's own time.
pub fn evaluate(potential: &dyn Potential, state: &State) -> Result<f64> {
    check_state_dim(potential, state)?;
    let v = potential.value(&state.coords, state.time);
    if !v.is_finite() {
        return Err(evaluation_error("potential value", state));
    }
    Ok(v)
}

pub fn gradient(potential: &dyn Potential, state: &State) -> Result<DVector<f64>> {
    check_state_dim(potential, state)?;
    let g = potential.gradient(&state.coords, state.time);
    if g.len() != state.dim() {
        return Err(Error::Config(format!(
            "potential '{}' returned a gradient of length {}",
            potential.name(),
            g.len()
        )));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(evaluation_error("gradient", state));
    }
    Ok(g)
}

/// Where the fast-block Hessian may come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianSource {
    /// Only the potential's analytic block is accepted.
    #[default]
    Analytic,
    /// Use the analytic block when present, otherwise central differences.
    AllowFiniteDifference,
}

pub fn hessian_fast_block(potential: &dyn Potential, state: &State, source: HessianSource) -> Result<DMatrix<f64>> {
    check_state_dim(potential, state)?;
    let partition = potential
        .partition()
        .ok_or_else(|| Error::Contract(format!("potential '{}' has no fast/slow partition", potential.name())))?;
    let h = match (potential.hessian_fast_block(&state.coords, state.time), source) {
        (Some(h), _) => h,
        (None, HessianSource::AllowFiniteDifference) => {
            finite_difference_fast_hessian(potential, state, DEFAULT_FD_STEP)?
        }
        (None, HessianSource::Analytic) => {
            return Err(Error::Contract(format!(
                "potential '{}' has no analytic fast Hessian and finite differences were not enabled",
                potential.name()
            )))
        }
    };
    let m = partition.fast();
    if h.nrows() != m || h.ncols() != m {
        return Err(Error::Config(format!(
            "fast Hessian must be {m}x{m}, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(evaluation_error("fast Hessian", state));
    }
    Ok(h)
}

/// Central-difference gradient of the potential value; error is O(step²).
pub fn finite_difference_gradient(potential: &dyn Potential, state: &State, step: f64) -> DVector<f64> {
    let t = state.time;
    let mut x = state.coords.clone();
    DVector::from_fn(x.len(), |i, _| {
        let x0 = x[i];
        x[i] = x0 + step;
        let up = potential.value(&x, t);
        x[i] = x0 - step;
        let down = potential.value(&x, t);
        x[i] = x0;
        (up - down) / (2.0 * step)
    })
}

/// Central differences of the analytic fast-block gradient.
pub fn finite_difference_fast_hessian(potential: &dyn Potential, state: &State, step: f64) -> Result<DMatrix<f64>> {
    let partition = potential
        .partition()
        .ok_or_else(|| Error::Contract(format!("potential '{}' has no fast/slow partition", potential.name())))?;
    let m = partition.fast();
    let t = state.time;
    let mut x = state.coords.clone();
    let mut h = DMatrix::zeros(m, m);
    for j in 0..m {
        let x0 = x[j];
        x[j] = x0 + step;
        let up = potential.gradient(&x, t);
        x[j] = x0 - step;
        let down = potential.gradient(&x, t);
        x[j] = x0;
        for i in 0..m {
            h[(i, j)] = (up[i] - down[i]) / (2.0 * step);
        }
    }
    let mut asym = 0.0_f64;
    for i in 0..m {
        for j in (i + 1)..m {
            asym = asym.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    if asym > FD_HESSIAN_ASYMMETRY_WARN {
        log::warn!(
            "finite-difference fast Hessian of '{}' is asymmetric by {asym:e}; symmetrizing",
            potential.name()
        );
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Componentwise relative error; components with `|a| < 1e-8` contribute their absolute error.
pub fn max_relative_error<'a, I>(analytic: I, reference: I) -> f64
where
    I: IntoIterator<Item = &'a f64>,
{
    analytic
        .into_iter()
        .zip(reference)
        .map(|(a, r)| {
            let d = (a - r).abs();
            if a.abs() >= 1e-8 {
                d / a.abs()
            } else {
                d
            }
        })
        .fold(0.0, f64::max)
}

/// Analytic vs central-difference gradient at one state.
pub fn gradient_check_error(potential: &dyn Potential, state: &State, step: f64) -> Result<f64> {
    let analytic = gradient(potential, state)?;
    let numeric = finite_difference_gradient(potential, state, step);
    Ok(max_relative_error(analytic.iter(), numeric.iter()))
}

/// Analytic vs finite-difference fast Hessian at one state.
pub fn hessian_check_error(potential: &dyn Potential, state: &State, step: f64) -> Result<f64> {
    let analytic = hessian_fast_block(potential, state, HessianSource::Analytic)?;
    let numeric = finite_difference_fast_hessian(potential, state, step)?;
    Ok(max_relative_error(analytic.iter(), numeric.iter()))
}

fn two_dim_partition() -> Partition {
    Partition::new(1, 1).expect("1+1 partition")
}

/// `J(h,c) = ½(h − c³)² + ½c²` with critical manifold `h = c³`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CubicBenchmark;

impl Potential for CubicBenchmark {
    fn name(&self) -> &str {
        "cubic-benchmark"
    }

    fn dim(&self) -> usize {
        2
    }

    fn partition(&self) -> Option<Partition> {
        Some(two_dim_partition())
    }

    fn value(&self, x: &DVector<f64>, _t: f64) -> f64 {
        let (h, c) = (x[0], x[1]);
        let r = h - c * c * c;
        0.5 * r * r + 0.5 * c * c
    }

    fn gradient(&self, x: &DVector<f64>, _t: f64) -> DVector<f64> {
        let (h, c) = (x[0], x[1]);
        let r = h - c * c * c;
        DVector::from_vec(vec![r, r * (-3.0 * c * c) + c])
    }

    fn hessian_fast_block(&self, _x: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, 1.0))
    }
}

/// Piecewise-linear evidence bias `b(t)`: zero until `start`, linear up to
/// `level` at `end`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasRamp {
    pub start: f64,
    pub end: f64,
    pub level: f64,
}

impl Default for BiasRamp {
    fn default() -> Self {
        Self {
            start: 0.0,
            end: 40.0,
            level: 0.5,
        }
    }
}

impl BiasRamp {
    pub fn new(start: f64, end: f64, level: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && level.is_finite()) || end < start {
            return Err(Error::Config(format!(
                "bias ramp needs finite start <= end (got start = {start}, end = {end}, level = {level})"
            )));
        }
        Ok(Self { start, end, level })
    }

    /// Zero bias at all times.
    pub fn none() -> Self {
        Self {
            start: 0.0,
            end: 0.0,
            level: 0.0,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        if t <= self.start {
            if t == self.start && self.end == self.start {
                self.level
            } else {
                0.0
            }
        } else if t >= self.end {
            self.level
        } else {
            self.level * (t - self.start) / (self.end - self.start)
        }
    }
}

/// Time-varying double-well decision landscape
/// `J(h,c,t) = ½(h − tanh(βc))² + ¼c⁴ − ½c² + b(t)·c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionPotential {
    beta: f64,
    ramp: BiasRamp,
}

impl Default for DecisionPotential {
    fn default() -> Self {
        Self {
            beta: 2.0,
            ramp: BiasRamp::default(),
        }
    }
}

impl DecisionPotential {
    pub fn new(beta: f64, ramp: BiasRamp) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { beta, ramp })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn ramp(&self) -> BiasRamp {
        self.ramp
    }

    /// Habitual response `g(c) = tanh(βc)`.
    pub fn habit(&self, c: f64) -> f64 {
        (self.beta * c).tanh()
    }

    fn habit_slope(&self, c: f64) -> f64 {
        let g = self.habit(c);
        self.beta * (1.0 - g * g)
    }

    pub fn bias(&self, t: f64) -> f64 {
        self.ramp.at(t)
    }
}

impl Potential for DecisionPotential {
    fn name(&self) -> &str {
        "decision"
    }

    fn dim(&self) -> usize {
        2
    }

    fn partition(&self) -> Option<Partition> {
        Some(two_dim_partition())
    }

    fn value(&self, x: &DVector<f64>, t: f64) -> f64 {
        let (h, c) = (x[0], x[1]);
        let r = h - self.habit(c);
        let c2 = c * c;
        0.5 * r * r + 0.25 * c2 * c2 - 0.5 * c2 + self.bias(t) * c
    }

    fn gradient(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let (h, c) = (x[0], x[1]);
        let r = h - self.habit(c);
        let dc = -r * self.habit_slope(c) + c * c * c - c + self.bias(t);
        DVector::from_vec(vec![r, dc])
    }

    fn hessian_fast_block(&self, _x: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, 1.0))
    }

    fn is_time_varying(&self) -> bool {
        true
    }
}

/// One labeled, weighted term of a [`CompositePotential`].
#[derive(Clone)]
pub struct Component {
    pub label: String,
    pub weight: f64,
    pub potential: Arc<dyn Potential>,
}

/// Weighted sum of labeled potentials (prediction, complexity, reward, ...).
#[derive(Clone)]
pub struct CompositePotential {
    dim: usize,
    partition: Option<Partition>,
    components: Vec<Component>,
}

impl fmt::Debug for CompositePotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.components.iter().map(|c| (&c.label, c.weight, c.potential.name())))
            .finish()
    }
}

impl CompositePotential {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Config("composite potential needs at least one component".into()))?;
        let dim = first.potential.dim();
        let partition = first.potential.partition();
        for c in &components {
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::Config(format!(
                    "component '{}' has invalid weight {}",
                    c.label, c.weight
                )));
            }
            if c.potential.dim() != dim || c.potential.partition() != partition {
                return Err(Error::Config(format!(
                    "component '{}' does not share the composite's dimension/partition",
                    c.label
                )));
            }
        }
        Ok(Self {
            dim,
            partition,
            components,
        })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }
}

impl Potential for CompositePotential {
    fn name(&self) -> &str {
        "composite"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn partition(&self) -> Option<Partition> {
        self.partition
    }

    fn value(&self, x: &DVector<f64>, t: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.potential.value(x, t)).sum()
    }

    fn gradient(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        self.components.iter().fold(DVector::zeros(self.dim), |acc, c| {
            acc + c.potential.gradient(x, t) * c.weight
        })
    }

    fn hessian_fast_block(&self, x: &DVector<f64>, t: f64) -> Option<DMatrix<f64>> {
        let m = self.partition?.fast();
        let mut sum = DMatrix::zeros(m, m);
        for c in &self.components {
            sum += c.potential.hessian_fast_block(x, t)? * c.weight;
        }
        Some(sum)
    }

    fn is_time_varying(&self) -> bool {
        self.components.iter().any(|c| c.potential.is_time_varying())
    }
}

/// `J(η) = ½‖η‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticBowl {
    dim: usize,
    partition: Option<Partition>,
}

impl QuadraticBowl {
    pub fn new(dim: usize) -> Self {
        Self { dim, partition: None }
    }

    pub fn with_partition(partition: Partition) -> Self {
        Self {
            dim: partition.dim(),
            partition: Some(partition),
        }
    }
}

impl Potential for QuadraticBowl {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn partition(&self) -> Option<Partition> {
        self.partition
    }

    fn value(&self, x: &DVector<f64>, _t: f64) -> f64 {
        0.5 * x.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>, _t: f64) -> DVector<f64> {
        x.clone()
    }

    fn hessian_fast_block(&self, _x: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        self.partition.map(|p| DMatrix::identity(p.fast(), p.fast()))
    }
}

type ValueFn = dyn Fn(&DVector<f64>, f64) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync;
type HessianFn = dyn Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync;

/// Potential assembled from closures, for user-supplied slots.
#[derive(Clone)]
pub struct FnPotential {
    name: String,
    dim: usize,
    partition: Option<Partition>,
    value: Arc<ValueFn>,
    gradient: Arc<GradientFn>,
    hessian: Option<Arc<HessianFn>>,
    time_varying: bool,
}

impl FnPotential {
    pub fn new<V, G>(name: impl Into<String>, dim: usize, value: V, gradient: G) -> Self
    where
        V: Fn(&DVector<f64>, f64) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            partition: None,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: None,
            time_varying: false,
        }
    }

    pub fn with_partition(mut self, partition: Partition) -> Self {
        self.partition = Some(partition);
        self
    }

    pub fn with_fast_hessian<H>(mut self, hessian: H) -> Self
    where
        H: Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    pub fn time_varying(mut self, yes: bool) -> Self {
        self.time_varying = yes;
        self
    }
}

impl Potential for FnPotential {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn partition(&self) -> Option<Partition> {
        self.partition
    }

    fn value(&self, x: &DVector<f64>, t: f64) -> f64 {
        (self.value)(x, t)
    }

    fn gradient(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        (self.gradient)(x, t)
    }

    fn hessian_fast_block(&self, x: &DVector<f64>, t: f64) -> Option<DMatrix<f64>> {
        self.hessian.as_ref().map(|h| h(x, t))
    }

    fn is_time_varying(&self) -> bool {
        self.time_varying
    }
}
