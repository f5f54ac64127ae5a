//! QFI maximization over piecewise-constant pulses, and initial-state
//! optimization for the uncontrolled baseline.
//!
//! Each restart runs quasi-Newton (BFGS) ascent with an Armijo backtracking
//! line search: initial step 1, shrink factor 0.5. Every accepted step
//! satisfies `F(x + s) ≥ F(x) + c₁ ∇F·s`, so `F` never decreases along a
//! restart. When the BFGS direction fails the line search the inverse Hessian
//! is reset and the search retried along the plain gradient.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{probe_state, ChainSpec, ProbeEmbedding};
use crate::error::{Error, Result};
use crate::propagator::{ChainPropagator, ControlPulse};
use crate::qfi::{qfi, QfiProblem};
use crate::rng::child_rng;
use crate::CVector;

const ARMIJO_C1: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Number of equal-length slots `m`.
    pub slots: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop when `‖∇F‖ < gradient_tolerance · max(1, F)`.
    pub gradient_tolerance: f64,
    /// Range of the uniform initial amplitudes; `None` means `[-J, J]`.
    pub init_amplitude_range: Option<(f64, f64)>,
    /// Optional box constraint `|cᵢ| ≤ bound` enforced by projection.
    pub amplitude_bound: Option<f64>,
    pub rng_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            slots: 20,
            restarts: 20,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            init_amplitude_range: None,
            amplitude_bound: None,
            rng_seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 {
            return Err(Error::Config("optimizer needs at least one slot".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("optimizer needs at least one restart".into()));
        }
        if !(self.gradient_tolerance.is_finite() && self.gradient_tolerance > 0.0) {
            return Err(Error::Config(format!(
                "gradient tolerance must be positive, got {}",
                self.gradient_tolerance
            )));
        }
        if let Some((lo, hi)) = self.init_amplitude_range {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("bad initial amplitude range [{lo}, {hi}]")));
            }
        }
        if let Some(b) = self.amplitude_bound {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::Config(format!("amplitude bound must be positive, got {b}")));
            }
        }
        Ok(())
    }

    fn init_range(&self, spec: &ChainSpec) -> (f64, f64) {
        let (lo, hi) = self
            .init_amplitude_range
            .unwrap_or((-spec.coupling(), spec.coupling()));
        match self.amplitude_bound {
            Some(b) => (lo.max(-b), hi.min(b)),
            None => (lo, hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartStatus {
    /// Gradient norm fell below the tolerance.
    Converged,
    IterationLimit,
    /// No step along the gradient satisfied the Armijo condition.
    Stalled,
    /// The QFI became non-finite; the restart is discarded.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub index: usize,
    pub initial_qfi: f64,
    pub final_qfi: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub status: RestartStatus,
    pub amplitudes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best_pulse: ControlPulse,
    pub best_qfi: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartRecord>,
}

impl OptimizationResult {
    /// Final QFI per restart; `NaN` for failed restarts.
    pub fn per_restart_qfi(&self) -> Vec<f64> {
        self.restarts.iter().map(|r| r.final_qfi).collect()
    }

    pub fn iterations_used(&self) -> Vec<usize> {
        self.restarts.iter().map(|r| r.iterations).collect()
    }

    pub fn converged_flags(&self) -> Vec<bool> {
        self.restarts
            .iter()
            .map(|r| r.status == RestartStatus::Converged)
            .collect()
    }
}

struct Point {
    x: DVector<f64>,
    value: f64,
    grad: DVector<f64>,
}

fn evaluate(problem: &QfiProblem, template: &ControlPulse, x: &DVector<f64>) -> Option<Point> {
    let pulse = template.with_amplitudes(x.iter().copied().collect()).ok()?;
    let eval = problem.evaluate(&pulse, true).ok()?;
    let grad = DVector::from_vec(eval.gradient?);
    let value = eval.qfi.value;
    if !value.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return None;
    }
    Some(Point {
        x: x.clone(),
        value,
        grad,
    })
}

fn project(x: DVector<f64>, bound: Option<f64>) -> DVector<f64> {
    match bound {
        Some(b) => x.map(|v| v.clamp(-b, b)),
        None => x,
    }
}

/// Backtracking along `direction`; returns the first point satisfying Armijo.
fn line_search(
    problem: &QfiProblem,
    template: &ControlPulse,
    current: &Point,
    direction: &DVector<f64>,
    bound: Option<f64>,
) -> Option<Point> {
    let mut step = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        let trial = project(&current.x + direction * step, bound);
        let s = &trial - &current.x;
        let predicted = current.grad.dot(&s);
        if predicted <= 0.0 || s.norm() == 0.0 {
            return None;
        }
        if let Some(p) = evaluate(problem, template, &trial) {
            if p.value >= current.value + ARMIJO_C1 * predicted {
                return Some(p);
            }
        }
        step *= SHRINK;
    }
    None
}

fn ascend(
    problem: &QfiProblem,
    template: &ControlPulse,
    index: usize,
    x0: DVector<f64>,
    config: &OptimizerConfig,
) -> RestartRecord {
    let failed = |initial: f64, iterations: usize, x: &DVector<f64>| RestartRecord {
        index,
        initial_qfi: initial,
        final_qfi: f64::NAN,
        iterations,
        gradient_norm: f64::NAN,
        status: RestartStatus::Failed,
        amplitudes: x.iter().copied().collect(),
    };

    let x0 = project(x0, config.amplitude_bound);
    let Some(mut current) = evaluate(problem, template, &x0) else {
        return failed(f64::NAN, 0, &x0);
    };
    let initial = current.value;
    let n = x0.len();
    let mut inv_hessian = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut status = RestartStatus::IterationLimit;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        if current.grad.norm() < config.gradient_tolerance * current.value.max(1.0) {
            status = RestartStatus::Converged;
            break;
        }
        iterations += 1;

        let mut direction = &inv_hessian * &current.grad;
        if direction.dot(&current.grad) <= 0.0 {
            inv_hessian.fill_with_identity();
            scaled = false;
            direction = current.grad.clone();
        }
        let next = match line_search(problem, template, &current, &direction, config.amplitude_bound) {
            Some(p) => Some(p),
            None => {
                inv_hessian.fill_with_identity();
                scaled = false;
                line_search(problem, template, &current, &current.grad, config.amplitude_bound)
            }
        };
        let Some(next) = next else {
            status = RestartStatus::Stalled;
            break;
        };

        // BFGS on f = -F.
        let s = &next.x - &current.x;
        let y = &current.grad - &next.grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                inv_hessian *= sy / y.dot(&y);
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &inv_hessian * &y;
            let yhy = y.dot(&hy);
            inv_hessian += (&s * s.transpose()) * (rho * (1.0 + rho * yhy))
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        current = next;
    }
    if status == RestartStatus::IterationLimit
        && current.grad.norm() < config.gradient_tolerance * current.value.max(1.0)
    {
        status = RestartStatus::Converged;
    }

    RestartRecord {
        index,
        initial_qfi: initial,
        final_qfi: current.value,
        iterations,
        gradient_norm: current.grad.norm(),
        status,
        amplitudes: current.x.iter().copied().collect(),
    }
}

/// Best-of-restarts QFI maximization with `ψ₀` and `λ_guess` fixed.
pub fn maximize_qfi(
    spec: &ChainSpec,
    total_time: f64,
    lambda_guess: f64,
    psi0: &CVector,
    config: &OptimizerConfig,
) -> Result<OptimizationResult> {
    maximize_qfi_from(spec, total_time, lambda_guess, psi0, config, None)
}

/// As [`maximize_qfi`]; when `warm_start` is given, restart 0 starts from it
/// instead of a random pulse.
pub fn maximize_qfi_from(
    spec: &ChainSpec,
    total_time: f64,
    lambda_guess: f64,
    psi0: &CVector,
    config: &OptimizerConfig,
    warm_start: Option<&[f64]>,
) -> Result<OptimizationResult> {
    config.validate()?;
    if !(total_time.is_finite() && total_time > 0.0) {
        return Err(Error::Config(format!("total time must be positive, got {total_time}")));
    }
    if let Some(w) = warm_start {
        if w.len() != config.slots {
            return Err(Error::Config(format!(
                "warm start has {} slots, optimizer expects {}",
                w.len(),
                config.slots
            )));
        }
    }
    let problem = QfiProblem::new(spec, lambda_guess, psi0)?;
    let template = ControlPulse::constant(total_time, config.slots, 0.0)?;
    let (lo, hi) = config.init_range(spec);

    let restarts: Vec<RestartRecord> = (0..config.restarts)
        .into_par_iter()
        .map(|index| {
            let x0 = match (index, warm_start) {
                (0, Some(w)) => DVector::from_column_slice(w),
                _ => {
                    let mut rng = child_rng(config.rng_seed, index as u64);
                    DVector::from_fn(config.slots, |_, _| {
                        if hi > lo {
                            rng.random_range(lo..hi)
                        } else {
                            lo
                        }
                    })
                }
            };
            ascend(&problem, &template, index, x0, config)
        })
        .collect();

    let mut best: Option<&RestartRecord> = None;
    for r in &restarts {
        if r.status == RestartStatus::Failed {
            continue;
        }
        if best.is_none_or(|b| r.final_qfi > b.final_qfi) {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| Error::Numeric("every optimizer restart failed".into()))?;
    Ok(OptimizationResult {
        best_pulse: template.with_amplitudes(best.amplitudes.clone())?,
        best_qfi: best.final_qfi,
        best_restart: best.index,
        restarts: restarts.clone(),
    })
}

/// Optimal probe preparation without control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncontrolledOptimum {
    pub theta: f64,
    pub phi: f64,
    pub qfi: f64,
}

/// QFI without control as a function of the initial probe state.
#[derive(Debug, Clone)]
pub struct UncontrolledLandscape {
    spec: ChainSpec,
    embedding: ProbeEmbedding,
    u: crate::CMatrix,
    du: crate::CMatrix,
}

impl UncontrolledLandscape {
    pub fn new(spec: &ChainSpec, total_time: f64, lambda: f64) -> Result<Self> {
        if !(total_time.is_finite() && total_time > 0.0) {
            return Err(Error::Config(format!("total time must be positive, got {total_time}")));
        }
        let pulse = ControlPulse::constant(total_time, 1, 0.0)?;
        let (u, du) = ChainPropagator::new(spec, lambda).compose_lambda_only(&pulse)?;
        Ok(Self {
            spec: *spec,
            embedding: ProbeEmbedding::for_chain(spec),
            u,
            du,
        })
    }

    pub fn qfi(&self, theta: f64, phi: f64) -> Result<f64> {
        let psi0 = probe_state(&self.spec, theta, phi);
        let (u, du) = self.embedding.reduce(&(&self.u * &psi0), &(&self.du * &psi0))?;
        Ok(qfi(&u, &du)?.value)
    }
}

/// QFI of the uncontrolled chain for `ψ₀ = cos(θ/2)|0⟩ + e^{iφ} sin(θ/2)|1⟩`.
pub fn uncontrolled_qfi(spec: &ChainSpec, total_time: f64, lambda: f64, theta: f64, phi: f64) -> Result<f64> {
    UncontrolledLandscape::new(spec, total_time, lambda)?.qfi(theta, phi)
}

/// Grid search over `(θ, φ) ∈ [0, π] × [0, 2π)` at spacing π/60, then a
/// compass search from the best grid point.
pub fn optimize_initial_state_uncontrolled(
    spec: &ChainSpec,
    total_time: f64,
    lambda_guess: f64,
) -> Result<UncontrolledOptimum> {
    let landscape = UncontrolledLandscape::new(spec, total_time, lambda_guess)?;
    let h = PI / 60.0;
    let mut best = UncontrolledOptimum {
        theta: 0.0,
        phi: 0.0,
        qfi: f64::NEG_INFINITY,
    };
    for i in 0..=60 {
        for k in 0..120 {
            let (theta, phi) = (i as f64 * h, k as f64 * h);
            let f = landscape.qfi(theta, phi)?;
            if f > best.qfi {
                best = UncontrolledOptimum { theta, phi, qfi: f };
            }
        }
    }

    let mut step = 0.5 * h;
    while step > 1e-10 {
        let mut improved = false;
        for (dt, dp) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let theta = (best.theta + dt).clamp(0.0, PI);
            let phi = (best.phi + dp).rem_euclid(2.0 * PI);
            let f = landscape.qfi(theta, phi)?;
            if f > best.qfi {
                best = UncontrolledOptimum { theta, phi, qfi: f };
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::sector_state;

    fn quick_config(seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            slots: 6,
            restarts: 3,
            max_iterations: 60,
            rng_seed: seed,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig {
            restarts: 0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = OptimizerConfig {
            gradient_tolerance: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            init_amplitude_range: Some((1.0, -1.0)),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ascent_never_loses_ground_and_respects_the_bound() {
        let spec = ChainSpec::unit(3).unwrap();
        let psi0 = sector_state(&spec, 1).unwrap();
        let res = maximize_qfi(&spec, 6.0, 0.0, &psi0, &quick_config(5)).unwrap();
        for r in &res.restarts {
            assert!(r.final_qfi >= r.initial_qfi);
            assert!(r.final_qfi <= 4.0 * 36.0 * (1.0 + 1e-9));
        }
        let max = res.per_restart_qfi().into_iter().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(res.best_qfi, max);
        assert_eq!(res.best_pulse.slot_count(), 6);
    }

    #[test]
    fn same_seed_same_result() {
        let spec = ChainSpec::unit(3).unwrap();
        let psi0 = sector_state(&spec, 1).unwrap();
        let a = maximize_qfi(&spec, 5.0, 0.1, &psi0, &quick_config(9)).unwrap();
        let b = maximize_qfi(&spec, 5.0, 0.1, &psi0, &quick_config(9)).unwrap();
        assert_eq!(a, b);
        let c = maximize_qfi(&spec, 5.0, 0.1, &psi0, &quick_config(10)).unwrap();
        assert_ne!(a.restarts[0].initial_qfi, c.restarts[0].initial_qfi);
    }

    #[test]
    fn amplitude_bound_is_enforced() {
        let spec = ChainSpec::unit(2).unwrap();
        let psi0 = sector_state(&spec, 1).unwrap();
        let cfg = OptimizerConfig {
            amplitude_bound: Some(0.5),
            ..quick_config(2)
        };
        let res = maximize_qfi(&spec, 4.0, 0.0, &psi0, &cfg).unwrap();
        assert!(res.best_pulse.amplitudes().iter().all(|a| a.abs() <= 0.5));
    }

    #[test]
    fn warm_start_is_used_for_restart_zero() {
        let spec = ChainSpec::unit(2).unwrap();
        let psi0 = sector_state(&spec, 1).unwrap();
        let cfg = OptimizerConfig {
            max_iterations: 0,
            ..quick_config(1)
        };
        let warm = vec![0.25; 6];
        let res = maximize_qfi_from(&spec, 3.0, 0.0, &psi0, &cfg, Some(&warm)).unwrap();
        assert_eq!(res.restarts[0].amplitudes, warm);
        assert!(maximize_qfi_from(&spec, 3.0, 0.0, &psi0, &cfg, Some(&[0.0; 2])).is_err());
    }

    #[test]
    fn all_down_initial_state_carries_no_information() {
        let spec = ChainSpec::unit(3).unwrap();
        let f = uncontrolled_qfi(&spec, 7.0, 0.2, 0.0, 0.0).unwrap();
        assert!(f.abs() < 1e-20);
    }

    #[test]
    fn uncontrolled_qfi_does_not_depend_on_phi() {
        let spec = ChainSpec::unit(4).unwrap();
        let land = UncontrolledLandscape::new(&spec, 9.0, 0.1).unwrap();
        let a = land.qfi(1.3, 0.0).unwrap();
        for phi in [0.5, 2.0, 4.0] {
            assert!((land.qfi(1.3, phi).unwrap() - a).abs() < 1e-10 * a);
        }
    }

    #[test]
    fn uncontrolled_optimum_beats_every_grid_point() {
        let spec = ChainSpec::unit(3).unwrap();
        let opt = optimize_initial_state_uncontrolled(&spec, 6.0, 0.0).unwrap();
        let land = UncontrolledLandscape::new(&spec, 6.0, 0.0).unwrap();
        for i in 0..=30 {
            let theta = i as f64 * PI / 30.0;
            assert!(opt.qfi >= land.qfi(theta, 0.0).unwrap());
        }
    }
}
