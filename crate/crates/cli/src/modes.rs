//! The five experiment modes.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use spinprobe::chain::{sector_state, ChainSpec};
use spinprobe::estimation::{run_protocol, EstimationTrace};
use spinprobe::optimizer::{maximize_qfi, optimize_initial_state_uncontrolled};
use spinprobe::oracles::{
    simulated_three_step_qfi, three_step_qfi_closed_form, uncontrolled_asymptotic_rate,
    TwoSpinProtocol, READOUT_OFFSET,
};
use spinprobe::propagator::{population_trace, ControlPulse};
use spinprobe::qfi::QfiProblem;
use spinprobe::rng::{child_rng, derive_seed};

use crate::config::{ExperimentConfig, Mode};
use crate::error::{CliError, Result};
use crate::output::{Cell, OutputDir};

/// What a mode wrote and a short machine-readable summary.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub mode: &'static str,
    pub files: Vec<String>,
    pub summary: Value,
}

pub fn run(mode: Mode, config: &ExperimentConfig, out_dir: &Path) -> Result<Report> {
    config.validate(mode)?;
    let mut out = OutputDir::create(out_dir, mode, config)?;
    let summary = match mode {
        Mode::QfiSweep => qfi_sweep(config, &mut out)?,
        Mode::Populations => populations(config, &mut out)?,
        Mode::Estimate => estimate(config, &mut out)?,
        Mode::Oracle => oracle(config, &mut out)?,
        Mode::BoundCheck => bound_check(config, &mut out)?,
    };
    Ok(Report {
        mode: mode.name(),
        files: out.written().iter().map(|p| p.display().to_string()).collect(),
        summary,
    })
}

fn chain(config: &ExperimentConfig) -> Result<ChainSpec> {
    Ok(ChainSpec::new(config.chain_length, config.coupling)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPulse {
    pub time: f64,
    pub seed: u64,
    pub qfi: f64,
    pub pulse: ControlPulse,
}

pub const SWEEP_COLUMNS: [&str; 10] = [
    "time",
    "controlled_rate",
    "uncontrolled_rate",
    "controlled_qfi",
    "uncontrolled_qfi",
    "best_restart",
    "converged_restarts",
    "theta",
    "phi",
    "status",
];

/// Controlled and uncontrolled `F/T²` on the time grid.
fn qfi_sweep(config: &ExperimentConfig, out: &mut OutputDir) -> Result<Value> {
    let spec = chain(config)?;
    let times = config.times()?;
    let psi0 = sector_state(&spec, 1)?;
    let lambda = config.lambda_true;

    let points: Vec<_> = times
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            let seed = derive_seed(config.seed, k as u64);
            let controlled = maximize_qfi(&spec, t, lambda, &psi0, &config.optimizer(seed));
            let uncontrolled = optimize_initial_state_uncontrolled(&spec, t, lambda);
            (t, seed, controlled, uncontrolled)
        })
        .collect();

    let mut rows = Vec::new();
    let mut pulses = Vec::new();
    let mut flagged = 0;
    for (t, seed, controlled, uncontrolled) in points {
        let mut status = Vec::new();
        let mut row: Vec<Cell> = vec![t.into()];
        let (c_qfi, best, converged) = match controlled {
            Ok(r) => {
                pulses.push(SweepPulse {
                    time: t,
                    seed,
                    qfi: r.best_qfi,
                    pulse: r.best_pulse.clone(),
                });
                let converged = r.converged_flags().iter().filter(|c| **c).count();
                (Some(r.best_qfi), Some(r.best_restart), Some(converged))
            }
            Err(e) => {
                status.push(format!("controlled: {e}"));
                (None, None, None)
            }
        };
        let (u_qfi, theta, phi) = match uncontrolled {
            Ok(u) => (Some(u.qfi), Some(u.theta), Some(u.phi)),
            Err(e) => {
                status.push(format!("uncontrolled: {e}"));
                (None, None, None)
            }
        };
        if !status.is_empty() {
            flagged += 1;
        }
        row.extend([
            c_qfi.map(|f| f / (t * t)).into(),
            u_qfi.map(|f| f / (t * t)).into(),
            c_qfi.into(),
            u_qfi.into(),
            best.into(),
            converged.into(),
            theta.into(),
            phi.into(),
            Cell::Text(if status.is_empty() { "ok".into() } else { status.join("; ") }),
        ]);
        rows.push(row);
    }
    out.write_table("qfi_sweep", &SWEEP_COLUMNS, &rows)?;
    out.write_json("qfi_sweep_pulses", &json!({ "pulses": pulses }))?;
    Ok(json!({ "points": rows.len(), "flagged": flagged }))
}

/// Loads either a bare pulse or the sweep pulse file (picking the entry at `time`).
pub fn load_pulse(path: &Path, time: f64) -> Result<ControlPulse> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parse_err = |message: String| CliError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let value: Value = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    if let Ok(pulse) = serde_json::from_value::<ControlPulse>(value.clone()) {
        return Ok(pulse);
    }
    let entries = value["data"]["pulses"]
        .as_array()
        .ok_or_else(|| parse_err("expected a pulse or a qfi_sweep_pulses file".into()))?;
    for entry in entries {
        let e: SweepPulse = serde_json::from_value(entry.clone()).map_err(|e| parse_err(e.to_string()))?;
        if (e.time - time).abs() <= 1e-12 * time.max(1.0) {
            return Ok(e.pulse);
        }
    }
    Err(parse_err(format!("no pulse for T = {time}")))
}

/// Site populations along one pulse.
fn populations(config: &ExperimentConfig, out: &mut OutputDir) -> Result<Value> {
    let spec = chain(config)?;
    let t = config.times()?[0];
    let psi0 = sector_state(&spec, config.initial_site)?;
    let (pulse, source) = if let Some(path) = &config.pulse_file {
        (load_pulse(path, t)?, "file")
    } else if let Some(c) = config.constant_control {
        (ControlPulse::constant(t, config.slots, c)?, "constant")
    } else {
        let r = maximize_qfi(&spec, t, config.lambda_true, &psi0, &config.optimizer(config.seed))?;
        (r.best_pulse, "optimized")
    };
    if (pulse.total_time() - t).abs() > 1e-9 * t {
        return Err(CliError::Config(format!(
            "pulse lasts {} but the probing time is {t}",
            pulse.total_time()
        )));
    }
    let trace = population_trace(&spec, &pulse, config.lambda_true, &psi0, config.samples_per_slot)?;

    let mut columns = vec!["time".to_string(), "amplitude".to_string()];
    columns.extend((0..spec.dim()).map(|j| format!("p{j}")));
    columns.push("norm".into());
    let columns: Vec<&str> = columns.iter().map(String::as_str).collect();

    let mut worst_norm = 0.0f64;
    let rows: Vec<Vec<Cell>> = trace
        .times
        .iter()
        .zip(&trace.populations)
        .zip(&trace.amplitudes)
        .map(|((&time, pops), &amp)| {
            let norm: f64 = pops.iter().sum();
            worst_norm = worst_norm.max((norm - 1.0).abs());
            let mut row: Vec<Cell> = vec![time.into(), amp.into()];
            row.extend(pops.iter().map(|&p| Cell::Float(p)));
            row.push(norm.into());
            row
        })
        .collect();
    out.write_table("populations", &columns, &rows)?;
    out.write_json("populations_pulse", &pulse)?;
    let qfi = QfiProblem::new(&spec, config.lambda_true, &psi0)?.evaluate(&pulse, false)?.qfi.value;
    Ok(json!({
        "samples": rows.len(),
        "pulse_source": source,
        "qfi": qfi,
        "max_norm_error": worst_norm,
    }))
}

#[derive(Debug, Clone, Serialize)]
struct ArmSummary {
    arm: &'static str,
    runs: usize,
    failed: usize,
    converged: usize,
    mean_total_shots: Option<f64>,
    std_total_shots: Option<f64>,
    mean_rounds: Option<f64>,
    rms_error: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

pub const ESTIMATE_COLUMNS: [&str; 10] = [
    "arm",
    "time",
    "run",
    "seed",
    "total_shots",
    "rounds",
    "final_estimate",
    "converged",
    "stop_reason",
    "error",
];

/// Repeated adaptive estimation with and/or without control.
fn estimate(config: &ExperimentConfig, out: &mut OutputDir) -> Result<Value> {
    let spec = chain(config)?;
    let times = config.times()?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut traces: Vec<Value> = Vec::new();

    for (k, &t) in times.iter().enumerate() {
        for use_control in config.arms.flags() {
            let arm = if use_control { "controlled" } else { "uncontrolled" };
            let results: Vec<(u64, spinprobe::Result<EstimationTrace>)> = (0..config.runs)
                .into_par_iter()
                .map(|r| {
                    let seed = derive_seed(derive_seed(config.seed, k as u64), r as u64);
                    let res = run_protocol(
                        &spec,
                        t,
                        config.lambda_true,
                        config.lambda_init,
                        config.epsilon,
                        use_control,
                        &config.protocol(seed),
                    );
                    (seed, res)
                })
                .collect();

            let mut shots = Vec::new();
            let mut rounds = Vec::new();
            let mut sq_err = Vec::new();
            let mut failed = 0;
            let mut converged = 0;
            for (r, (seed, res)) in results.into_iter().enumerate() {
                match res {
                    Ok(trace) => {
                        shots.push(trace.total_shots as f64);
                        rounds.push(trace.rounds.len() as f64);
                        sq_err.push((trace.final_estimate - config.lambda_true).powi(2));
                        converged += usize::from(trace.converged);
                        rows.push(vec![
                            arm.into(),
                            t.into(),
                            r.into(),
                            seed.into(),
                            trace.total_shots.into(),
                            trace.rounds.len().into(),
                            trace.final_estimate.into(),
                            trace.converged.into(),
                            Cell::Text(serde_json::to_value(trace.stop_reason)?.as_str().unwrap_or_default().into()),
                            Cell::Empty,
                        ]);
                        traces.push(json!({ "arm": arm, "time": t, "run": r, "seed": seed, "trace": trace }));
                    }
                    Err(e) => {
                        failed += 1;
                        rows.push(vec![
                            arm.into(),
                            t.into(),
                            r.into(),
                            seed.into(),
                            Cell::Empty,
                            Cell::Empty,
                            Cell::Empty,
                            false.into(),
                            Cell::Empty,
                            Cell::Text(e.to_string()),
                        ]);
                    }
                }
            }
            let (mean_total_shots, std_total_shots) = mean_std(&shots);
            let (mean_rounds, _) = mean_std(&rounds);
            let (mse, _) = mean_std(&sq_err);
            summaries.push(json!({
                "time": t,
                "summary": ArmSummary {
                    arm,
                    runs: config.runs,
                    failed,
                    converged,
                    mean_total_shots,
                    std_total_shots,
                    mean_rounds,
                    rms_error: mse.map(f64::sqrt),
                }
            }));
        }
    }
    out.write_table("estimate_runs", &ESTIMATE_COLUMNS, &rows)?;
    out.write_json("estimate_summary", &json!({ "arms": summaries }))?;
    out.write_json("estimate_traces", &json!({ "runs": traces }))?;
    Ok(json!({ "arms": summaries }))
}

pub const ORACLE_COLUMNS: [&str; 8] = [
    "quantity",
    "time",
    "lambda",
    "offset",
    "simulated",
    "reference",
    "relative_error",
    "status",
];

/// Two-spin closed forms against the simulator.
fn oracle(config: &ExperimentConfig, out: &mut OutputDir) -> Result<Value> {
    let spec = ChainSpec::new(2, config.coupling)?;
    let j = config.coupling;
    let lambda = config.lambda_true;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let row = |q: &str, t: f64, offset: Option<f64>, sim: spinprobe::Result<f64>, reference: spinprobe::Result<f64>| {
        match (sim, reference) {
            (Ok(s), Ok(r)) => {
                let rel = (s / r - 1.0).abs();
                (vec![q.into(), t.into(), lambda.into(), offset.into(), s.into(), r.into(), rel.into(), "ok".into()], Some(rel))
            }
            (s, r) => {
                let msg = [s.err(), r.err()].into_iter().flatten().map(|e| e.to_string()).collect::<Vec<_>>();
                (
                    vec![q.into(), t.into(), lambda.into(), offset.into(), Cell::Empty, Cell::Empty, Cell::Empty, msg.join("; ").into()],
                    None,
                )
            }
        }
    };
    for &t in &config.times()? {
        let protocol = TwoSpinProtocol::with_strong_field(t, j, config.strong_field * j);
        for offset in [-READOUT_OFFSET, READOUT_OFFSET] {
            let sim = protocol
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|p| simulated_three_step_qfi(p, lambda, offset, config.slots));
            let (r, rel) = row("three_step_qfi", t, Some(offset), sim, three_step_qfi_closed_form(t, j));
            rows.push(r);
            worst = worst.max(rel.unwrap_or(0.0));
        }
        let sim = optimize_initial_state_uncontrolled(&spec, t, lambda).map(|o| o.qfi / (t * t));
        let (r, _) = row("uncontrolled_rate", t, None, sim, Ok(uncontrolled_asymptotic_rate(lambda / j)));
        rows.push(r);
    }
    out.write_table("oracle", &ORACLE_COLUMNS, &rows)?;
    Ok(json!({ "rows": rows.len(), "max_three_step_relative_error": worst }))
}

pub const BOUND_COLUMNS: [&str; 6] = ["sample", "time", "slots", "lambda", "qfi", "ratio_to_bound"];

/// `F ≤ 4T²` on random pulses.
fn bound_check(config: &ExperimentConfig, out: &mut OutputDir) -> Result<Value> {
    use rand::Rng;

    let spec = chain(config)?;
    let psi0 = sector_state(&spec, 1)?;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for (k, &t) in config.times()?.iter().enumerate() {
        let mut rng = child_rng(config.seed, k as u64);
        for s in 0..config.runs {
            let amplitudes = (0..config.slots)
                .map(|_| rng.random_range(-3.0 * config.coupling..3.0 * config.coupling))
                .collect();
            let lambda = config.lambda_true + rng.random_range(-0.5..0.5) * config.coupling;
            let pulse = ControlPulse::uniform(t, amplitudes)?;
            let f = QfiProblem::new(&spec, lambda, &psi0)?.evaluate(&pulse, false)?.qfi.value;
            let ratio = f / (4.0 * t * t);
            worst = worst.max(ratio);
            rows.push(vec![s.into(), t.into(), config.slots.into(), lambda.into(), f.into(), ratio.into()]);
        }
    }
    out.write_table("bound_check", &BOUND_COLUMNS, &rows)?;
    if worst > 1.0 + 1e-9 {
        return Err(CliError::Check(format!("F/(4T²) reached {worst}")));
    }
    Ok(json!({ "samples": rows.len(), "max_ratio_to_bound": worst }))
}
