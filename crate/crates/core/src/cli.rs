//! Command-line front end: simulate, calibrate, run, evaluate, report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::calib::{calibrate_stage1, calibrate_stage2, CalibResult, CalibSetup};
use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::dynamics::SingleTrack;
use crate::error::{Error, Result};
use crate::estimator::{mounting_prior, AnchorSource, Estimator, FrameInput, InitialState, NoAnchors, StateRecord};
use crate::eval::{prediction_rpe, tracking_rpe, trim_standing_tail, PredictionSetup, RpeReport, Trajectory};
use crate::integrate::ControlTimeline;
use crate::io;
use crate::sim::{builtin_script, simulate, KeyframeAnchors};

#[derive(Debug, Parser)]
#[command(name = "trackcal", version, about = "Vehicle model calibration inside a sliding-window estimator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML); defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the simulation and anchor seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one dataset per script into the output directory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated script names.
        #[arg(long, value_delimiter = ',')]
        scripts: Option<Vec<String>>,
    },
    /// Two-stage offline calibration; writes a parameter file.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Straight-driving dataset for the longitudinal stage.
        straight: PathBuf,
        /// Mixed-driving dataset for the full stage.
        mixed: PathBuf,
        /// Initial guess; perturbed truth from the dataset header otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Run the estimator over a dataset into the output directory.
    Run {
        #[command(flatten)]
        common: Common,
        dataset: PathBuf,
        /// Initial parameters; perturbed truth from the dataset header otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Comma-separated prediction horizons, s.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<f64>>,
    },
    /// Tracking and prediction errors of a run.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `run`.
        run: PathBuf,
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<f64>>,
    },
    /// Aggregate table over evaluation files.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        evaluations: Vec<PathBuf>,
    },
}

pub const RUN_FORMAT: &str = "trackcal-run";
pub const PREDICTIONS_FORMAT: &str = "trackcal-predictions";
pub const TRACE_FILE: &str = "params_trace.jsonl";
pub const STATES_FILE: &str = "states.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const RUN_FILE: &str = "run.json";
pub const EVALUATION_FORMAT: &str = "trackcal-evaluation";
pub const REPORT_FORMAT: &str = "trackcal-report";

/// Summary of a run, read back by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub dataset: String,
    pub initial: CalibResult,
    /// Online estimate at the last frame.
    pub last: CalibResult,
    pub frames: usize,
    pub gate_on_frame: Option<u64>,
    pub solver_failures: usize,
}

/// Open-loop prediction made online from one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub frame: u64,
    pub t: f64,
    pub horizon: f64,
    /// Planar body motion `(x, y, yaw)` over the horizon.
    pub pose: [f64; 3],
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evaluation {
    pub name: String,
    pub tracking: RpeReport,
    /// Predictions with the initial parameters.
    pub prediction_init: RpeReport,
    /// Predictions with the online parameters of each frame.
    pub prediction_calib: RpeReport,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.sim.seed = seed;
        cfg.anchors.seed = seed;
    }
    Ok(cfg)
}

fn header(data: &Dataset) -> Result<&crate::data::DatasetHeader> {
    data.header.as_ref().ok_or_else(|| Error::Schema("dataset has no header".into()))
}

fn controls(data: &Dataset) -> Result<ControlTimeline> {
    ControlTimeline::new(data.controls.clone())
}

/// Initial guess from a parameter file, or the dataset truth perturbed as
/// configured.
fn initial_guess(data: &Dataset, cfg: &ExperimentConfig, params: Option<&Path>) -> Result<CalibResult> {
    if let Some(p) = params {
        return io::read_params(p);
    }
    let h = header(data)?;
    let truth = data
        .params_at(0.0)
        .ok_or_else(|| Error::Schema("no --params given and the dataset carries no true parameters".into()))?;
    Ok(CalibResult {
        params: cfg.perturbation.apply(&truth),
        hyper: h.hyper,
        extrinsics: h.extrinsics.retract(&Vector6::from(cfg.perturbation.extrinsics)),
        cost: 0.0,
        iterations: 0,
    })
}

pub fn simulate_cmd(common: &Common, scripts: Option<&[String]>) -> Result<Vec<PathBuf>> {
    let cfg = load_config(common)?;
    let names = scripts.map(<[String]>::to_vec).unwrap_or(cfg.scenario.scripts.clone());
    let mut written = Vec::new();
    for name in &names {
        let script = builtin_script(name, cfg.scenario.duration, cfg.scenario.control_rate)?;
        let data = simulate(&cfg.sim, &script, cfg.scenario.duration, name)?;
        let path = common.out.join(format!("{name}.jsonl"));
        io::write_dataset(&data, &path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn calibrate_cmd(common: &Common, straight: &Path, mixed: &Path, params: Option<&Path>) -> Result<CalibResult> {
    let cfg = load_config(common)?;
    let straight = io::read_dataset(straight)?;
    let mixed = io::read_dataset(mixed)?;
    let init = initial_guess(&mixed, &cfg, params)?;
    let h = header(&mixed)?;
    let setup = CalibSetup { geometry: h.geometry, mounting: mounting_prior(&h.extrinsics, &h.geometry) };
    let first = calibrate_stage1(&straight, &setup, &init.hyper, &init.params, &init.extrinsics, &cfg.calibration)?;
    let result = calibrate_stage2(&mixed, &setup, &first, &init.extrinsics, &cfg.calibration)?;
    io::write_params(&common.out, &result)?;
    Ok(result)
}

/// Feeds every frame through the estimator, collecting states and the
/// online predictions at `horizons`.
pub fn run_dataset(
    data: &Dataset,
    cfg: &ExperimentConfig,
    init: &CalibResult,
    horizons: &[f64],
) -> Result<(Vec<StateRecord>, Vec<PredictionRecord>, f64)> {
    let h = header(data)?;
    let model = SingleTrack::new(h.geometry, init.hyper);
    let mut est = Estimator::new(
        cfg.estimator,
        model,
        Arc::new(controls(data)?),
        mounting_prior(&h.extrinsics, &h.geometry),
        InitialState { pose: h.initial_pose, extrinsics: init.extrinsics, params: init.params, gyro_bias: Default::default() },
    )?;
    let anchors: Box<dyn AnchorSource> = if cfg.anchors.enabled {
        Box::new(KeyframeAnchors::from_dataset(data, &cfg.sim.noise, cfg.anchors.seed))
    } else {
        Box::new(NoAnchors)
    };
    let dt = data.frame_dt();
    let longest = horizons.iter().copied().fold(0.0, f64::max);
    let mut states = Vec::with_capacity(data.odom.len());
    let mut predictions = Vec::new();
    let start = Instant::now();
    for odom in &data.odom {
        let gyro = data.nearest_gyro(odom.t).map(|g| g.omega).unwrap_or_default();
        let rec = est.add_frame(&FrameInput { odom: *odom, gyro }, anchors.as_ref())?;
        // Predictions need controls beyond the end of the log near the end.
        if rec.gate && odom.t + longest <= data.controls.last().map_or(f64::NEG_INFINITY, |c| c.t) {
            let roll = est.current_prediction(longest)?;
            for &hz in horizons {
                let k = ((hz / dt).round() as usize).min(roll.poses.len() - 1);
                predictions.push(PredictionRecord {
                    frame: rec.frame,
                    t: rec.t,
                    horizon: hz,
                    pose: roll.poses[k],
                    velocity: roll.velocities[k],
                });
            }
        }
        states.push(rec);
    }
    let mean_ms = 1e3 * start.elapsed().as_secs_f64() / data.odom.len().max(1) as f64;
    Ok((states, predictions, mean_ms))
}

pub fn run_cmd(common: &Common, dataset: &Path, params: Option<&Path>, horizons: Option<&[f64]>) -> Result<RunSummary> {
    let cfg = load_config(common)?;
    let data = io::read_dataset(dataset)?;
    let init = initial_guess(&data, &cfg, params)?;
    let horizons = horizons.unwrap_or(&cfg.evaluation.horizons);
    let (states, predictions, mean_ms) = run_dataset(&data, &cfg, &init, horizons)?;
    let last = states.last().ok_or_else(|| Error::Schema("dataset has no odometry frames".into()))?;
    let summary = RunSummary {
        dataset: header(&data)?.name.clone(),
        initial: init,
        last: CalibResult {
            params: last.params,
            hyper: init.hyper,
            extrinsics: last.extrinsics,
            cost: last.cost,
            iterations: last.iterations,
        },
        frames: states.len(),
        gate_on_frame: states.iter().find(|r| r.gate).map(|r| r.frame),
        solver_failures: states.iter().filter(|r| r.solver_failure.is_some()).count(),
    };
    let out = &common.out;
    io::write_states(&out.join(STATES_FILE), &states)?;
    io::write_records(&out.join(TRACE_FILE), io::TRACE_FORMAT, &io::params_trace(&states))?;
    io::write_records(&out.join(PREDICTIONS_FILE), PREDICTIONS_FORMAT, &predictions)?;
    io::write_document(&out.join(RUN_FILE), RUN_FORMAT, &summary)?;
    eprintln!("{} frames, {mean_ms:.2} ms per frame", states.len());
    Ok(summary)
}

pub fn evaluate(
    name: &str,
    states: &[StateRecord],
    data: &Dataset,
    init: &CalibResult,
    cfg: &ExperimentConfig,
    horizons: &[f64],
) -> Result<Evaluation> {
    let h = header(data)?;
    let e = &cfg.evaluation;
    let gt = trim_standing_tail(&Trajectory::from_groundtruth(data)?, e.trim_threshold, e.trim_window)?;
    let est = Trajectory::from_records(states)?;
    let tracking = tracking_rpe(&est, &gt, &e.fractions)?;
    let ctrl = controls(data)?;
    let model = SingleTrack::new(h.geometry, init.hyper);
    let mut setup = PredictionSetup::new(&model, &ctrl, horizons);
    setup.integrator = cfg.estimator.integrator;
    setup.start_after = e.prediction_start;
    setup.trim_threshold = e.trim_threshold;
    setup.trim_window = e.trim_window;
    let prediction_calib = prediction_rpe(states, data, &setup)?;
    setup.params = Some(init.params);
    let prediction_init = prediction_rpe(states, data, &setup)?;
    Ok(Evaluation { name: name.into(), tracking, prediction_init, prediction_calib })
}

pub fn evaluate_cmd(common: &Common, run: &Path, dataset: &Path, horizons: Option<&[f64]>) -> Result<Evaluation> {
    let cfg = load_config(common)?;
    let data = io::read_dataset(dataset)?;
    let summary: RunSummary = io::read_document(&run.join(RUN_FILE), RUN_FORMAT)?;
    let states = io::read_states(&run.join(STATES_FILE))?;
    let horizons = horizons.unwrap_or(&cfg.evaluation.horizons);
    let eval = evaluate(&summary.dataset, &states, &data, &summary.initial, &cfg, horizons)?;
    io::write_document(&common.out, EVALUATION_FORMAT, &eval)?;
    Ok(eval)
}

/// Markdown tables: tracking error per sequence, then prediction error per
/// sequence and horizon for initial and online parameters.
pub fn report_table(evals: &[Evaluation]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "## Tracking RPE\n\n| sequence | trans. [m] | rot. [deg] |\n|---|---|---|");
    for e in evals {
        let _ = writeln!(s, "| {} | {:.4} | {:.3} |", e.name, e.tracking.translation_rmse, e.tracking.rotation_rmse_deg);
    }
    let horizons: Vec<f64> = evals.first().map_or(Vec::new(), |e| e.prediction_calib.breakdown.iter().map(|b| b.label).collect());
    let _ = write!(s, "\n## Prediction RPE, trans. [m] / rot. [deg]\n\n| sequence | params |");
    for h in &horizons {
        let _ = write!(s, " {h:.2} s |");
    }
    let _ = writeln!(s, "\n|---|---|{}", "---|".repeat(horizons.len()));
    for e in evals {
        for (label, r) in [("init", &e.prediction_init), ("calib", &e.prediction_calib)] {
            let _ = write!(s, "| {} | {label} |", e.name);
            for h in &horizons {
                match r.breakdown.iter().find(|b| b.label == *h) {
                    Some(b) => {
                        let _ = write!(s, " {:.4} / {:.3} |", b.translation_rmse, b.rotation_rmse_deg);
                    }
                    None => s.push_str(" - |"),
                }
            }
            s.push('\n');
        }
    }
    s
}

pub fn report_cmd(common: &Common, evaluations: &[PathBuf]) -> Result<String> {
    let evals: Vec<Evaluation> = std::thread::scope(|scope| {
        let handles: Vec<_> = evaluations
            .iter()
            .map(|p| scope.spawn(move || io::read_document::<Evaluation>(p, EVALUATION_FORMAT)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("reader panicked")).collect::<Result<_>>()
    })?;
    let table = report_table(&evals);
    io::write_document(&common.out.join("report.json"), REPORT_FORMAT, &evals)?;
    std::fs::write(common.out.join("report.md"), &table).map_err(|e| Error::File(format!("{}: {e}", common.out.display())))?;
    Ok(table)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, scripts } => {
            for p in simulate_cmd(&common, scripts.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::Calibrate { common, straight, mixed, params } => {
            let r = calibrate_cmd(&common, &straight, &mixed, params.as_deref())?;
            println!("{} iterations, cost {:.6e}", r.iterations, r.cost);
        }
        Command::Run { common, dataset, params, horizons } => {
            let s = run_cmd(&common, &dataset, params.as_deref(), horizons.as_deref())?;
            println!("{}: {} frames, gate on at {:?}", s.dataset, s.frames, s.gate_on_frame);
        }
        Command::Evaluate { common, run, dataset, horizons } => {
            let e = evaluate_cmd(&common, &run, &dataset, horizons.as_deref())?;
            println!(
                "{}: tracking {:.4} m / {:.3} deg",
                e.name, e.tracking.translation_rmse, e.tracking.rotation_rmse_deg
            );
        }
        Command::Report { common, evaluations } => print!("{}", report_cmd(&common, &evaluations)?),
    }
    Ok(())
}
