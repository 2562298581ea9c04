//! Dispatches experiments, writes their artifacts and maps outcomes to exit codes.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cogflow::experiments::{self, GradcheckRow, Verdict};
use cogflow::potentials::{CubicBenchmark, Potential};
use cogflow::{csvfmt, Error};

use crate::config::{ConfigError, Experiment, PotentialChoice, RunConfig};
use crate::svg::{self, AxisScale, PlotError, PlotSpec, Series};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

pub const FAILED_MARKER: &str = "FAILED";
pub const EFFECTIVE_CONFIG: &str = "effective_config";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] Error),
    #[error("plot: {0}")]
    Plot(#[from] PlotError),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Core(Error::Config(_)) => EXIT_CONFIG,
            HarnessError::Core(Error::Divergence { .. }) => EXIT_DIVERGENCE,
            _ => EXIT_FAIL,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Result of one dispatched experiment.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub experiment: Experiment,
    pub verdicts: Vec<Verdict>,
    pub error: Option<HarnessError>,
}

impl ExperimentOutcome {
    pub fn exit_code(&self) -> i32 {
        match &self.error {
            Some(e) => e.exit_code(),
            None if experiments::all_pass(&self.verdicts) => EXIT_PASS,
            None => EXIT_FAIL,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub experiments: Vec<ExperimentOutcome>,
    /// Set when the run stopped before dispatching anything.
    pub setup_error: Option<HarnessError>,
}

impl RunOutcome {
    fn setup_failure(e: HarnessError) -> Self {
        Self {
            exit_code: e.exit_code(),
            experiments: Vec::new(),
            setup_error: Some(e),
        }
    }

    /// One human-readable line per verdict or error.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(e) = &self.setup_error {
            out.push(format!("ERROR {e}"));
        }
        for x in &self.experiments {
            for v in &x.verdicts {
                out.push(format!(
                    "{} {} {} observed={:?} bound={}",
                    if v.pass { "PASS" } else { "FAIL" },
                    x.experiment,
                    v.criterion,
                    v.observed,
                    v.bound
                ));
            }
            if let Some(e) = &x.error {
                out.push(format!("ERROR {} {e}", x.experiment));
            }
        }
        out
    }
}

/// Creates the output directory and proves it is writable.
pub fn prepare_output_dir(dir: &Path) -> Result<(), HarnessError> {
    let not_writable = |e: io::Error| {
        HarnessError::Config(ConfigError::Io(format!(
            "output_dir {} is not writable: {e}",
            dir.display()
        )))
    };
    fs::create_dir_all(dir).map_err(not_writable)?;
    let probe = dir.join(".cogflow-write-probe");
    fs::write(&probe, b"").map_err(not_writable)?;
    fs::remove_file(&probe).map_err(not_writable)?;
    Ok(())
}

fn write_artifact<F>(dir: &Path, name: &str, f: F) -> Result<(), HarnessError>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let path = dir.join(name);
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))
}

fn write_verdicts(dir: &Path, name: &str, verdicts: &[Verdict]) -> Result<(), HarnessError> {
    write_artifact(dir, &format!("{name}_verdict.csv"), |w| {
        experiments::write_verdict_csv(w, verdicts)
    })
}

/// Runs the configured experiments and writes every artifact into `output_dir`.
///
/// `threads` caps the per-ε parallelism; `None` uses all available cores.
pub fn run(cfg: &RunConfig, threads: Option<usize>) -> RunOutcome {
    if let Err(e) = cfg.validate() {
        return RunOutcome::setup_failure(e.into());
    }
    let dir = cfg.output_dir.as_path();
    if let Err(e) = prepare_output_dir(dir) {
        return RunOutcome::setup_failure(e);
    }
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        if let Err(e) = fs::remove_file(&marker) {
            return RunOutcome::setup_failure(io_err(&marker)(e));
        }
    }
    if let Err(e) = write_artifact(dir, EFFECTIVE_CONFIG, |w| w.write_all(cfg.effective_text().as_bytes())) {
        return RunOutcome::setup_failure(e);
    }

    let mut outcomes = Vec::new();
    for exp in cfg.experiment.expand() {
        log::info!("running {exp}");
        let result = match exp {
            Experiment::Scaling => run_scaling(cfg, dir, threads),
            Experiment::Recovery => run_recovery(cfg, dir),
            Experiment::Reduction => run_reduction(cfg, dir, threads),
            Experiment::Decision => run_decision(cfg, dir, threads),
            Experiment::Gradcheck => run_gradcheck(cfg, dir),
            Experiment::All => unreachable!("expanded"),
        };
        let outcome = match result {
            Ok(verdicts) => ExperimentOutcome {
                experiment: exp,
                verdicts,
                error: None,
            },
            Err(e) => {
                log::error!("{exp} aborted: {e}");
                ExperimentOutcome {
                    experiment: exp,
                    verdicts: Vec::new(),
                    error: Some(e),
                }
            }
        };
        outcomes.push(outcome);
    }

    let codes: Vec<i32> = outcomes.iter().map(ExperimentOutcome::exit_code).collect();
    let exit_code = if codes.contains(&EXIT_DIVERGENCE) {
        EXIT_DIVERGENCE
    } else if codes.contains(&EXIT_CONFIG) {
        EXIT_CONFIG
    } else if codes.contains(&EXIT_FAIL) {
        EXIT_FAIL
    } else {
        EXIT_PASS
    };
    let outcome = RunOutcome {
        exit_code,
        experiments: outcomes,
        setup_error: None,
    };
    if exit_code != EXIT_PASS {
        let mut text = String::new();
        for line in outcome.summary_lines() {
            if !line.starts_with("PASS") {
                text.push_str(&line);
                text.push('\n');
            }
        }
        if let Err(e) = fs::write(&marker, text) {
            log::error!("could not write {}: {e}", marker.display());
        }
    }
    outcome
}

fn run_scaling(cfg: &RunConfig, dir: &Path, threads: Option<usize>) -> Result<Vec<Verdict>, HarnessError> {
    let scfg = cfg.scaling();
    let result = experiments::run_timescale_scaling(&scfg, threads)?;
    write_artifact(dir, "scaling_data.csv", |w| result.write_data_csv(w))?;
    let verdicts = result.verdicts(&cfg.bounds.scaling);
    write_verdicts(dir, "scaling", &verdicts)?;
    let fast: Vec<(f64, f64)> = result.rows.iter().map(|r| (r.epsilon, r.mean_fast_speed)).collect();
    let slow: Vec<(f64, f64)> = result.rows.iter().map(|r| (r.epsilon, r.mean_slow_speed)).collect();
    svg::emit_svg_lineplot(
        &[Series::new("mean |dh/dt|", fast), Series::new("mean |dc/dt|", slow)],
        &PlotSpec::new("Block speeds", "epsilon", "mean speed", AxisScale::Log, AxisScale::Log),
        &dir.join("scaling.svg"),
    )?;

    let tracks = experiments::phase_portrait(&scfg, cfg.phase_stride, threads)?;
    write_artifact(dir, "scaling_phase.csv", |w| experiments::write_phase_csv(w, &tracks))?;
    let eps_min = scfg.epsilons.iter().copied().fold(f64::INFINITY, f64::min);
    let mut series: Vec<Series> = tracks
        .iter()
        .filter(|t| t.epsilon == eps_min)
        .enumerate()
        .map(|(i, t)| {
            let pts = t.trajectory.states.iter().map(|s| (s[1], s[0])).collect();
            Series::new(format!("start {i}"), pts)
        })
        .collect();
    let manifold = (-40..=40).map(|i| {
        let c = 1.6 * i as f64 / 40.0;
        (c, c * c * c)
    });
    series.push(Series::new("h = c^3", manifold.collect()));
    svg::emit_svg_lineplot(
        &series,
        &PlotSpec::new(
            &format!("Phase portrait, epsilon = {eps_min}"),
            "c",
            "h",
            AxisScale::Linear,
            AxisScale::Linear,
        ),
        &dir.join("scaling_phase.svg"),
    )?;
    Ok(verdicts)
}

fn run_recovery(cfg: &RunConfig, dir: &Path) -> Result<Vec<Verdict>, HarnessError> {
    let result = experiments::run_perturbation_recovery(&cfg.recovery())?;
    write_artifact(dir, "recovery_data.csv", |w| result.write_data_csv(w))?;
    write_artifact(dir, "recovery_trajectory.csv", |w| result.trajectory.write_csv(w))?;
    let verdicts = result.verdicts(&cfg.bounds.recovery);
    write_verdicts(dir, "recovery", &verdicts)?;
    let positive: Vec<(f64, f64)> = result.distance_series.iter().copied().filter(|p| p.1 > 0.0).collect();
    if positive.is_empty() {
        log::warn!("manifold distance is identically zero; skipping recovery.svg");
    } else {
        svg::emit_svg_lineplot(
            &[Series::new("D(t)", positive)],
            &PlotSpec::new(
                "Distance to the critical manifold",
                "t",
                "D",
                AxisScale::Linear,
                AxisScale::Log,
            ),
            &dir.join("recovery.svg"),
        )?;
    }
    Ok(verdicts)
}

fn run_reduction(cfg: &RunConfig, dir: &Path, threads: Option<usize>) -> Result<Vec<Verdict>, HarnessError> {
    let result = experiments::run_reduction_validation(&cfg.reduction(), threads)?;
    write_artifact(dir, "reduction_data.csv", |w| result.write_data_csv(w))?;
    let verdicts = result.verdicts(&cfg.bounds.reduction);
    write_verdicts(dir, "reduction", &verdicts)?;
    let pts: Vec<(f64, f64)> = result.reports.iter().map(|r| (r.epsilon, r.max_error)).collect();
    let scale = if pts.iter().all(|p| p.1 > 0.0) {
        AxisScale::Log
    } else {
        AxisScale::Linear
    };
    svg::emit_svg_lineplot(
        &[Series::new("max slow error", pts)],
        &PlotSpec::new("Reduction error", "epsilon", "max error", scale, scale),
        &dir.join("reduction.svg"),
    )?;
    Ok(verdicts)
}

fn write_decision_csv<W: Write>(
    w: &mut W,
    r: &experiments::DecisionResult,
    potential: &cogflow::DecisionPotential,
) -> io::Result<()> {
    csvfmt::write_row(w, &["t", "h", "c", "bias", "tracking_error"])?;
    for ((t, s), (_, e)) in r
        .trajectory
        .times
        .iter()
        .zip(&r.trajectory.states)
        .zip(&r.tracking_error_series)
    {
        csvfmt::write_floats(w, &[*t, s[0], s[1], potential.bias(*t), *e])?;
    }
    Ok(())
}

fn run_decision(cfg: &RunConfig, dir: &Path, threads: Option<usize>) -> Result<Vec<Verdict>, HarnessError> {
    let dcfg = cfg.decision();
    let result = experiments::run_decision_experiment(&dcfg, threads)?;
    let main_potential = dcfg.potential()?;
    let control_potential = dcfg.control().potential()?;
    write_artifact(dir, "decision_data.csv", |w| {
        write_decision_csv(w, &result.main, &main_potential)
    })?;
    write_artifact(dir, "decision_control.csv", |w| {
        write_decision_csv(w, &result.control, &control_potential)
    })?;
    let verdicts = result.verdicts(&cfg.bounds.decision);
    write_verdicts(dir, "decision", &verdicts)?;
    let traj = &result.main.trajectory;
    let pick = |i: usize| -> Vec<(f64, f64)> { traj.times.iter().zip(&traj.states).map(|(t, s)| (*t, s[i])).collect() };
    let bias: Vec<(f64, f64)> = traj.times.iter().map(|t| (*t, main_potential.bias(*t))).collect();
    let control: Vec<(f64, f64)> = result
        .control
        .trajectory
        .times
        .iter()
        .zip(&result.control.trajectory.states)
        .map(|(t, s)| (*t, s[1]))
        .collect();
    svg::emit_svg_lineplot(
        &[
            Series::new("h (habit)", pick(0)),
            Series::new("c (deliberation)", pick(1)),
            Series::new("bias b(t)", bias),
            Series::new("c, capped ramp", control),
        ],
        &PlotSpec::new("Decision dynamics", "t", "value", AxisScale::Linear, AxisScale::Linear),
        &dir.join("decision.svg"),
    )?;
    Ok(verdicts)
}

/// The gradcheck targets selected by `potential.name`.
pub fn selected_potentials(cfg: &RunConfig) -> Vec<Arc<dyn Potential>> {
    let decision = cfg.decision_potential();
    let [wc, wd] = cfg.potential.weights;
    let cubic: Arc<dyn Potential> = Arc::new(CubicBenchmark);
    let dec: Arc<dyn Potential> = Arc::new(decision);
    let comp: Arc<dyn Potential> = Arc::new(experiments::composite_of(wc, wd, decision));
    match cfg.potential.name {
        PotentialChoice::Cubic => vec![cubic],
        PotentialChoice::Decision => vec![dec],
        PotentialChoice::Composite => vec![comp],
        PotentialChoice::All => vec![cubic, dec, comp],
    }
}

fn run_gradcheck(cfg: &RunConfig, dir: &Path) -> Result<Vec<Verdict>, HarnessError> {
    let rows: Vec<GradcheckRow> = experiments::run_gradcheck(&selected_potentials(cfg), &cfg.gradcheck())?;
    let fit = experiments::noisy_fit_self_test(cfg.seed)?;
    write_artifact(dir, "gradcheck_data.csv", |w| {
        experiments::write_gradcheck_csv(w, &rows)
    })?;
    let verdicts = experiments::gradcheck_verdicts(&rows, &fit, &cfg.bounds.gradcheck);
    write_verdicts(dir, "gradcheck", &verdicts)?;
    Ok(verdicts)
}

/// Reads `COGFLOW_THREADS`: unset means all cores; anything but a positive integer is a config error.
pub fn threads_from_env() -> Result<Option<usize>, ConfigError> {
    match std::env::var("COGFLOW_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(ConfigError::Invalid {
            key: "COGFLOW_THREADS".into(),
            message: e.to_string(),
        }),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ConfigError::Invalid {
                key: "COGFLOW_THREADS".into(),
                message: format!("expected a positive integer, got '{v}'"),
            }),
        },
    }
}
