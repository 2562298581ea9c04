//! Run configuration: a flat `key = value` document with optional `[section]`
//! headers (keys inside a section become `section.key`).
//!
//! The schema is strict: unknown keys, duplicates and malformed lines are
//! rejected with line numbers. `effective_text` writes the fully resolved
//! configuration back in the same format; parsing it reproduces the config.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use cogflow::experiments::{
    Bound, DecisionBounds, DecisionConfig, GradcheckBounds, GradcheckConfig, RecoveryBounds, RecoveryConfig,
    ReductionBounds, ReductionConfig, ScalingBounds, ScalingConfig,
};
use cogflow::potentials::{BiasRamp, DecisionPotential, DEFAULT_FD_STEP};
use cogflow::KickTarget;
use nalgebra::DVector;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("duplicate key '{key}' on lines {first} and {second}")]
    Duplicate { key: String, first: usize, second: usize },
    #[error("{}unknown key '{key}'", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    UnknownKey { key: String, line: Option<usize> },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("{0}")]
    Io(String),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Scaling,
    Recovery,
    Reduction,
    Decision,
    Gradcheck,
    All,
}

impl Experiment {
    pub const RUNNABLE: [Experiment; 5] = [
        Experiment::Scaling,
        Experiment::Recovery,
        Experiment::Reduction,
        Experiment::Decision,
        Experiment::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Scaling => "scaling",
            Experiment::Recovery => "recovery",
            Experiment::Reduction => "reduction",
            Experiment::Decision => "decision",
            Experiment::Gradcheck => "gradcheck",
            Experiment::All => "all",
        }
    }

    /// The concrete experiments this selection dispatches, in run order.
    pub fn expand(self) -> Vec<Experiment> {
        match self {
            Experiment::All => Self::RUNNABLE.to_vec(),
            e => vec![e],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::RUNNABLE
            .iter()
            .chain(&[Experiment::All])
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                format!("unknown experiment '{s}' (expected scaling, recovery, reduction, decision, gradcheck or all)")
            })
    }
}

/// Which potentials the gradient check covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialChoice {
    Cubic,
    Decision,
    Composite,
    All,
}

impl PotentialChoice {
    pub fn name(self) -> &'static str {
        match self {
            PotentialChoice::Cubic => "cubic-benchmark",
            PotentialChoice::Decision => "decision",
            PotentialChoice::Composite => "composite",
            PotentialChoice::All => "all",
        }
    }
}

impl FromStr for PotentialChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cubic-benchmark" => Ok(PotentialChoice::Cubic),
            "decision" => Ok(PotentialChoice::Decision),
            "composite" => Ok(PotentialChoice::Composite),
            "all" => Ok(PotentialChoice::All),
            _ => Err(format!(
                "unknown potential '{s}' (expected cubic-benchmark, decision, composite or all)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialParams {
    pub name: PotentialChoice,
    pub beta: f64,
    pub ramp_start: f64,
    pub ramp_end: f64,
    pub ramp_level: f64,
    /// Composite weights: (cubic benchmark, decision).
    pub weights: [f64; 2],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundsConfig {
    pub scaling: ScalingBounds,
    pub recovery: RecoveryBounds,
    pub reduction: ReductionBounds,
    pub decision: DecisionBounds,
    pub gradcheck: GradcheckBounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Single ε for recovery and decision runs.
    pub epsilon: f64,
    /// ε grid of the scaling sweep.
    pub epsilons: Vec<f64>,
    /// Start for scaling and recovery runs.
    pub initial_state: Vec<f64>,
    pub dt: f64,
    pub record_stride: usize,
    pub potential: PotentialParams,
    pub scaling_t_end: f64,
    pub phase_stride: usize,
    pub recovery_t_kick: f64,
    pub recovery_t_end: f64,
    pub recovery_delta: Vec<f64>,
    pub recovery_target: KickTarget,
    pub reduction: ReductionConfig,
    pub decision_t_end: f64,
    pub decision_c0: f64,
    pub decision_control_level: f64,
    pub gradcheck_samples: usize,
    pub gradcheck_times: usize,
    pub bounds: BoundsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scaling = ScalingConfig::default();
        let recovery = RecoveryConfig::default();
        let decision = DecisionConfig::default();
        let grad = GradcheckConfig::default();
        let ramp = BiasRamp::default();
        Self {
            experiment: Experiment::All,
            output_dir: PathBuf::from("cogflow-out"),
            seed: grad.seed,
            epsilon: recovery.epsilon,
            epsilons: scaling.epsilons,
            initial_state: scaling.eta0.iter().copied().collect(),
            dt: scaling.dt,
            record_stride: 1,
            potential: PotentialParams {
                name: PotentialChoice::All,
                beta: DecisionPotential::default().beta(),
                ramp_start: ramp.start,
                ramp_end: ramp.end,
                ramp_level: ramp.level,
                weights: [1.0, 1.0],
            },
            scaling_t_end: scaling.t_end,
            phase_stride: 10,
            recovery_t_kick: recovery.t_kick,
            recovery_t_end: recovery.t_end,
            recovery_delta: recovery.delta.iter().copied().collect(),
            recovery_target: recovery.target,
            reduction: ReductionConfig::default(),
            decision_t_end: decision.t_end,
            decision_c0: decision.c0,
            decision_control_level: decision.control_level,
            gradcheck_samples: grad.samples,
            gradcheck_times: grad.times_per_state,
            bounds: BoundsConfig::default(),
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "experiment",
    "output_dir",
    "seed",
    "epsilon",
    "epsilons",
    "initial_state",
    "integrator.dt",
    "integrator.record_stride",
    "potential.name",
    "potential.beta",
    "potential.ramp_start",
    "potential.ramp_end",
    "potential.ramp_level",
    "potential.weights",
    "scaling.t_end",
    "scaling.phase_stride",
    "recovery.t_kick",
    "recovery.t_end",
    "recovery.delta",
    "recovery.target",
    "reduction.epsilons",
    "reduction.c0",
    "reduction.h_offset",
    "reduction.t_end_scaled",
    "reduction.horizon",
    "reduction.t_end",
    "reduction.cutoff",
    "decision.t_end",
    "decision.c0",
    "decision.control_level",
    "gradcheck.samples",
    "gradcheck.times_per_state",
    "bounds.scaling_slow_slope",
    "bounds.scaling_fast_slope",
    "bounds.scaling_r_squared",
    "bounds.recovery_rate_rel_tol",
    "bounds.recovery_residual_fraction",
    "bounds.reduction_slope",
    "bounds.decision_min_bias",
    "bounds.decision_max_tracking_error",
    "bounds.gradcheck_max_rel_error",
    "bounds.noisy_fit_slope",
];

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v
        .parse()
        .map_err(|_| invalid(key, format!("expected a number, got '{v}'")))?;
    if !x.is_finite() {
        return Err(invalid(key, format!("must be finite, got '{v}'")));
    }
    Ok(x)
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_f64(key, x.trim())).collect()
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse()
        .map_err(|_| invalid(key, format!("expected a non-negative integer, got '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(key, format!("expected true or false, got '{v}'"))),
    }
}

fn parse_bound(key: &str, v: &str) -> Result<Bound, ConfigError> {
    if let Ok(b) = v.parse::<Bound>() {
        return Ok(b);
    }
    Err(invalid(key, format!("expected 'lo..hi', '<=x' or '>=x', got '{v}'")))
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", ")
}

fn target_name(t: KickTarget) -> &'static str {
    match t {
        KickTarget::Fast => "fast",
        KickTarget::Slow => "slow",
        KickTarget::Full => "full",
    }
}

impl RunConfig {
    /// Sets one key from its textual value. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "experiment" => self.experiment = v.parse().map_err(|m| invalid(key, m))?,
            "output_dir" => {
                if v.is_empty() {
                    return Err(invalid(key, "must not be empty"));
                }
                self.output_dir = PathBuf::from(v)
            }
            "seed" => {
                self.seed = v
                    .parse()
                    .map_err(|_| invalid(key, format!("expected an integer, got '{v}'")))?
            }
            "epsilon" => self.epsilon = parse_f64(key, v)?,
            "epsilons" => self.epsilons = parse_list(key, v)?,
            "initial_state" => self.initial_state = parse_list(key, v)?,
            "integrator.dt" => self.dt = parse_f64(key, v)?,
            "integrator.record_stride" => self.record_stride = parse_usize(key, v)?,
            "potential.name" => self.potential.name = v.parse().map_err(|m| invalid(key, m))?,
            "potential.beta" => self.potential.beta = parse_f64(key, v)?,
            "potential.ramp_start" => self.potential.ramp_start = parse_f64(key, v)?,
            "potential.ramp_end" => self.potential.ramp_end = parse_f64(key, v)?,
            "potential.ramp_level" => self.potential.ramp_level = parse_f64(key, v)?,
            "potential.weights" => {
                let w = parse_list(key, v)?;
                self.potential.weights = w
                    .try_into()
                    .map_err(|_| invalid(key, "expected two weights: cubic-benchmark, decision"))?;
            }
            "scaling.t_end" => self.scaling_t_end = parse_f64(key, v)?,
            "scaling.phase_stride" => self.phase_stride = parse_usize(key, v)?,
            "recovery.t_kick" => self.recovery_t_kick = parse_f64(key, v)?,
            "recovery.t_end" => self.recovery_t_end = parse_f64(key, v)?,
            "recovery.delta" => self.recovery_delta = parse_list(key, v)?,
            "recovery.target" => {
                self.recovery_target = match v {
                    "fast" => KickTarget::Fast,
                    "slow" => KickTarget::Slow,
                    "full" => KickTarget::Full,
                    _ => return Err(invalid(key, format!("expected fast, slow or full, got '{v}'"))),
                }
            }
            "reduction.epsilons" => self.reduction.epsilons = parse_list(key, v)?,
            "reduction.c0" => self.reduction.c0 = parse_f64(key, v)?,
            "reduction.h_offset" => self.reduction.h_offset = parse_f64(key, v)?,
            "reduction.t_end_scaled" => self.reduction.t_end_scaled = parse_bool(key, v)?,
            "reduction.horizon" => self.reduction.horizon = parse_f64(key, v)?,
            "reduction.t_end" => self.reduction.fixed_t_end = parse_f64(key, v)?,
            "reduction.cutoff" => self.reduction.transient_cutoff = parse_f64(key, v)?,
            "decision.t_end" => self.decision_t_end = parse_f64(key, v)?,
            "decision.c0" => self.decision_c0 = parse_f64(key, v)?,
            "decision.control_level" => self.decision_control_level = parse_f64(key, v)?,
            "gradcheck.samples" => self.gradcheck_samples = parse_usize(key, v)?,
            "gradcheck.times_per_state" => self.gradcheck_times = parse_usize(key, v)?,
            "bounds.scaling_slow_slope" => self.bounds.scaling.slow_slope = parse_bound(key, v)?,
            "bounds.scaling_fast_slope" => self.bounds.scaling.fast_slope = parse_bound(key, v)?,
            "bounds.scaling_r_squared" => self.bounds.scaling.r_squared_slow = parse_bound(key, v)?,
            "bounds.recovery_rate_rel_tol" => self.bounds.recovery.rate_rel_tol = parse_f64(key, v)?,
            "bounds.recovery_residual_fraction" => self.bounds.recovery.residual_fraction = parse_f64(key, v)?,
            "bounds.reduction_slope" => self.bounds.reduction.slope = parse_bound(key, v)?,
            "bounds.decision_min_bias" => self.bounds.decision.min_bias_at_switch = parse_f64(key, v)?,
            "bounds.decision_max_tracking_error" => self.bounds.decision.max_tracking_error = parse_f64(key, v)?,
            "bounds.gradcheck_max_rel_error" => self.bounds.gradcheck.max_relative_error = parse_f64(key, v)?,
            "bounds.noisy_fit_slope" => self.bounds.gradcheck.noisy_slope = parse_bound(key, v)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line: None,
                })
            }
        }
        Ok(())
    }

    /// Textual value of a key, in the format `set` accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "experiment" => self.experiment.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "seed" => self.seed.to_string(),
            "epsilon" => fmt_f64(self.epsilon),
            "epsilons" => fmt_list(&self.epsilons),
            "initial_state" => fmt_list(&self.initial_state),
            "integrator.dt" => fmt_f64(self.dt),
            "integrator.record_stride" => self.record_stride.to_string(),
            "potential.name" => self.potential.name.name().to_string(),
            "potential.beta" => fmt_f64(self.potential.beta),
            "potential.ramp_start" => fmt_f64(self.potential.ramp_start),
            "potential.ramp_end" => fmt_f64(self.potential.ramp_end),
            "potential.ramp_level" => fmt_f64(self.potential.ramp_level),
            "potential.weights" => fmt_list(&self.potential.weights),
            "scaling.t_end" => fmt_f64(self.scaling_t_end),
            "scaling.phase_stride" => self.phase_stride.to_string(),
            "recovery.t_kick" => fmt_f64(self.recovery_t_kick),
            "recovery.t_end" => fmt_f64(self.recovery_t_end),
            "recovery.delta" => fmt_list(&self.recovery_delta),
            "recovery.target" => target_name(self.recovery_target).to_string(),
            "reduction.epsilons" => fmt_list(&self.reduction.epsilons),
            "reduction.c0" => fmt_f64(self.reduction.c0),
            "reduction.h_offset" => fmt_f64(self.reduction.h_offset),
            "reduction.t_end_scaled" => self.reduction.t_end_scaled.to_string(),
            "reduction.horizon" => fmt_f64(self.reduction.horizon),
            "reduction.t_end" => fmt_f64(self.reduction.fixed_t_end),
            "reduction.cutoff" => fmt_f64(self.reduction.transient_cutoff),
            "decision.t_end" => fmt_f64(self.decision_t_end),
            "decision.c0" => fmt_f64(self.decision_c0),
            "decision.control_level" => fmt_f64(self.decision_control_level),
            "gradcheck.samples" => self.gradcheck_samples.to_string(),
            "gradcheck.times_per_state" => self.gradcheck_times.to_string(),
            "bounds.scaling_slow_slope" => self.bounds.scaling.slow_slope.to_string(),
            "bounds.scaling_fast_slope" => self.bounds.scaling.fast_slope.to_string(),
            "bounds.scaling_r_squared" => self.bounds.scaling.r_squared_slow.to_string(),
            "bounds.recovery_rate_rel_tol" => fmt_f64(self.bounds.recovery.rate_rel_tol),
            "bounds.recovery_residual_fraction" => fmt_f64(self.bounds.recovery.residual_fraction),
            "bounds.reduction_slope" => self.bounds.reduction.slope.to_string(),
            "bounds.decision_min_bias" => fmt_f64(self.bounds.decision.min_bias_at_switch),
            "bounds.decision_max_tracking_error" => fmt_f64(self.bounds.decision.max_tracking_error),
            "bounds.gradcheck_max_rel_error" => fmt_f64(self.bounds.gradcheck.max_relative_error),
            "bounds.noisy_fit_slope" => self.bounds.gradcheck.noisy_slope.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| invalid(o, "override must have the form key=value"))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// The resolved configuration in the accepted document format.
    pub fn effective_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for key in KEYS {
            let (sec, name) = key.split_once('.').unwrap_or(("", key));
            if sec != section {
                out.push_str(&format!("\n[{sec}]\n"));
                section = sec;
            }
            out.push_str(&format!("{name} = {}\n", self.get(key).expect("listed key")));
        }
        out
    }

    pub fn scaling(&self) -> ScalingConfig {
        ScalingConfig {
            epsilons: self.epsilons.clone(),
            eta0: DVector::from_vec(self.initial_state.clone()),
            t_end: self.scaling_t_end,
            dt: self.dt,
            record_stride: self.record_stride,
        }
    }

    pub fn recovery(&self) -> RecoveryConfig {
        RecoveryConfig {
            epsilon: self.epsilon,
            eta0: DVector::from_vec(self.initial_state.clone()),
            t_kick: self.recovery_t_kick,
            delta: DVector::from_vec(self.recovery_delta.clone()),
            target: self.recovery_target,
            t_end: self.recovery_t_end,
            dt: self.dt,
            record_stride: self.record_stride,
        }
    }

    pub fn reduction(&self) -> ReductionConfig {
        ReductionConfig {
            dt: self.dt,
            record_stride: self.record_stride,
            ..self.reduction.clone()
        }
    }

    pub fn ramp(&self) -> BiasRamp {
        BiasRamp {
            start: self.potential.ramp_start,
            end: self.potential.ramp_end,
            level: self.potential.ramp_level,
        }
    }

    pub fn decision_potential(&self) -> DecisionPotential {
        DecisionPotential::new(self.potential.beta, self.ramp()).expect("validated decision parameters")
    }

    pub fn decision(&self) -> DecisionConfig {
        DecisionConfig {
            beta: self.potential.beta,
            ramp: self.ramp(),
            epsilon: self.epsilon,
            t_end: self.decision_t_end,
            dt: self.dt,
            c0: self.decision_c0,
            control_level: self.decision_control_level,
            record_stride: self.record_stride,
        }
    }

    pub fn gradcheck(&self) -> GradcheckConfig {
        GradcheckConfig {
            samples: self.gradcheck_samples,
            times_per_state: self.gradcheck_times,
            box_half_width: 2.0,
            max_time: 60.0,
            step: DEFAULT_FD_STEP,
            seed: self.seed,
        }
    }

    /// Checks every parameter against the preconditions of the experiments it feeds.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let eps_ok = |key: &str, e: f64| {
            if e > 0.0 && e < 1.0 {
                Ok(())
            } else {
                Err(invalid(key, format!("epsilon must lie in (0,1), got {e}")))
            }
        };
        let positive = |key: &str, x: f64| {
            if x > 0.0 {
                Ok(())
            } else {
                Err(invalid(key, format!("must be positive, got {x}")))
            }
        };
        let non_negative = |key: &str, x: f64| {
            if x >= 0.0 {
                Ok(())
            } else {
                Err(invalid(key, format!("must be non-negative, got {x}")))
            }
        };
        eps_ok("epsilon", self.epsilon)?;
        if self.epsilons.len() < 3 {
            return Err(invalid(
                "epsilons",
                format!("need at least 3 values, got {}", self.epsilons.len()),
            ));
        }
        for &e in &self.epsilons {
            eps_ok("epsilons", e)?;
        }
        if self.reduction.epsilons.is_empty() {
            return Err(invalid("reduction.epsilons", "need at least one value"));
        }
        for &e in &self.reduction.epsilons {
            eps_ok("reduction.epsilons", e)?;
        }
        if self.initial_state.len() != 2 {
            return Err(invalid("initial_state", "expected two coordinates: h, c"));
        }
        positive("integrator.dt", self.dt)?;
        if self.record_stride == 0 {
            return Err(invalid("integrator.record_stride", "must be at least 1"));
        }
        positive("potential.beta", self.potential.beta)?;
        if self.potential.ramp_end < self.potential.ramp_start {
            return Err(invalid("potential.ramp_end", "must not precede potential.ramp_start"));
        }
        for w in self.potential.weights {
            non_negative("potential.weights", w)?;
        }
        positive("scaling.t_end", self.scaling_t_end)?;
        if self.phase_stride == 0 {
            return Err(invalid("scaling.phase_stride", "must be at least 1"));
        }
        positive("recovery.t_end", self.recovery_t_end)?;
        if !(self.recovery_t_kick >= 0.0 && self.recovery_t_kick < self.recovery_t_end) {
            return Err(invalid("recovery.t_kick", "must lie in [0, recovery.t_end)"));
        }
        let need = match self.recovery_target {
            KickTarget::Fast | KickTarget::Slow => 1,
            KickTarget::Full => 2,
        };
        if self.recovery_delta.len() != need {
            return Err(invalid(
                "recovery.delta",
                format!(
                    "{} kick needs {need} component(s), got {}",
                    target_name(self.recovery_target),
                    self.recovery_delta.len()
                ),
            ));
        }
        positive("reduction.horizon", self.reduction.horizon)?;
        positive("reduction.t_end", self.reduction.fixed_t_end)?;
        non_negative("reduction.cutoff", self.reduction.transient_cutoff)?;
        positive("decision.t_end", self.decision_t_end)?;
        if self.decision_c0 == 0.0 {
            return Err(invalid("decision.c0", "must be nonzero"));
        }
        if self.gradcheck_samples == 0 {
            return Err(invalid("gradcheck.samples", "must be at least 1"));
        }
        if self.gradcheck_times == 0 {
            return Err(invalid("gradcheck.times_per_state", "must be at least 1"));
        }
        for key in KEYS.iter().filter(|k| k.starts_with("bounds.")) {
            if let Some(Ok(Bound::Range(lo, hi))) = self.get(key).map(|s| s.parse::<Bound>()) {
                if lo > hi {
                    return Err(invalid(key, "lower bound exceeds upper bound"));
                }
            }
        }
        positive("bounds.recovery_rate_rel_tol", self.bounds.recovery.rate_rel_tol)?;
        // Final consistency pass through the experiment validators.
        let core = |key: &str, r: cogflow::Result<()>| r.map_err(|e| invalid(key, e.to_string()));
        core("scaling", self.scaling().validate())?;
        core("recovery", self.recovery().validate())?;
        core("reduction", self.reduction().validate())?;
        core("decision", self.decision().validate())?;
        Ok(())
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg = parse_document(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a document on top of the defaults without the final validation pass.
pub fn parse_document(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    for (key, (value, line)) in parse_entries(text)? {
        cfg.set(&key, &value).map_err(|e| match e {
            ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { key, line: Some(line) },
            ConfigError::Invalid { key, message } => ConfigError::Invalid {
                key,
                message: format!("{message} (line {line})"),
            },
            other => other,
        })?;
    }
    Ok(cfg)
}

/// Document, then `key=value` overrides in order, then validation.
pub fn load_config<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<RunConfig, ConfigError> {
    let mut cfg = parse_document(text)?;
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Raw `dotted.key -> (value, line)` entries of a document.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, (String, usize)>, ConfigError> {
    let mut entries: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("unterminated section header '{content}'"),
            })?;
            let name = name.trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("invalid section name '{name}'"),
                });
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("expected 'key = value', got '{content}'"),
        })?;
        let k = k.trim();
        if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(ConfigError::Syntax {
                line,
                message: format!("invalid key '{k}'"),
            });
        }
        let v = v.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(v)
            .to_string();
        let key = if section.is_empty() {
            k.to_string()
        } else {
            format!("{section}.{k}")
        };
        if let Some((_, first)) = entries.get(&key) {
            return Err(ConfigError::Duplicate {
                key,
                first: *first,
                second: line,
            });
        }
        entries.insert(key, (v, line));
    }
    Ok(entries)
}
