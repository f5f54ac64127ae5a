//! Optimal single-qubit measurement and the adaptive estimation loop.
//!
//! At a guess `λₙ` the symmetric logarithmic derivative of the probe state is
//! `L = α I + v·σ` with
//!
//! ```text
//! α = -(u·∂λu)/(1 - ‖u‖²),    v = ∂λu + [(u·∂λu)/(1 - ‖u‖²)] u
//! ```
//!
//! Measuring `L` is a projective measurement along `v̂` with outcomes
//! `ℓ± = α ± ‖v‖`. Shots are taken on the state at the *true* parameter and
//! the guess is updated to the sample mean of the estimator `λₙ + L/F`.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::chain::{probe_state, sector_state, ChainSpec};
use crate::error::{Error, Result};
use crate::optimizer::{
    maximize_qfi_from, optimize_initial_state_uncontrolled, OptimizerConfig, UncontrolledLandscape,
};
use crate::propagator::ControlPulse;
use crate::qfi::{guarded_ratio, Bloch, QfiProblem};
use crate::rng::{child_rng, derive_seed};

/// Below this `‖v‖` the measurement is considered uninformative.
pub const DEGENERATE_V_NORM: f64 = 1e-12;
/// Largest per-round shot count the simulator accepts.
pub const MAX_SHOTS: u64 = 1 << 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SldMeasurement {
    pub alpha: f64,
    pub v: Bloch,
    pub ell_plus: f64,
    pub ell_minus: f64,
}

impl SldMeasurement {
    /// Measurement axis `v/‖v‖`.
    pub fn axis(&self) -> Bloch {
        self.v / self.v.norm()
    }

    /// `tr[ρL] = α + u·v` for `ρ = (I + u·σ)/2`.
    pub fn trace_rho_l(&self, u: &Bloch) -> f64 {
        self.alpha + u.dot(&self.v)
    }

    /// `tr[ρL²] = α² + ‖v‖² + 2α u·v`.
    pub fn trace_rho_l_squared(&self, u: &Bloch) -> f64 {
        self.alpha * self.alpha + self.v.norm_squared() + 2.0 * self.alpha * u.dot(&self.v)
    }
}

pub fn sld_from_bloch(u: &Bloch, du: &Bloch) -> Result<SldMeasurement> {
    let g = guarded_ratio(u, du)?;
    let alpha = -g;
    let v = du + u * g;
    let norm = v.norm();
    if norm < DEGENERATE_V_NORM {
        return Err(Error::DegenerateMeasurement { norm });
    }
    Ok(SldMeasurement {
        alpha,
        v,
        ell_plus: alpha + norm,
        ell_minus: alpha - norm,
    })
}

/// `p± = (1 ± u_true·v̂)/2`.
pub fn outcome_probabilities(u_true: &Bloch, measurement: &SldMeasurement) -> (f64, f64) {
    let p_plus = (0.5 * (1.0 + u_true.dot(&measurement.axis()))).clamp(0.0, 1.0);
    (p_plus, 1.0 - p_plus)
}

/// Number of `+` outcomes among `shots` independent measurements.
pub fn simulate_round<R: Rng + ?Sized>(p_plus: f64, shots: u64, rng: &mut R) -> Result<u64> {
    if !(0.0..=1.0).contains(&p_plus) {
        return Err(Error::Contract(format!("probability {p_plus} outside [0, 1]")));
    }
    if shots == 0 {
        return Err(Error::Contract("a round needs at least one shot".into()));
    }
    let dist = Binomial::new(shots, p_plus).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// `λₙ + (ℓ⁺ p̃⁺ + ℓ⁻ p̃⁻)/Fₙ` with the frequency `p̃⁺` given directly.
pub fn update_from_frequency(lambda_n: f64, measurement: &SldMeasurement, plus_frequency: f64, qfi: f64) -> Result<f64> {
    if !(qfi.is_finite() && qfi > 0.0) {
        return Err(Error::Protocol(format!("QFI at the guess must be positive, got {qfi}")));
    }
    let mean = measurement.ell_plus * plus_frequency + measurement.ell_minus * (1.0 - plus_frequency);
    Ok(lambda_n + mean / qfi)
}

/// Update from `k⁺` plus outcomes in `shots` measurements.
pub fn update_estimate(
    lambda_n: f64,
    measurement: &SldMeasurement,
    plus_count: u64,
    shots: u64,
    qfi: f64,
) -> Result<f64> {
    if shots == 0 || plus_count > shots {
        return Err(Error::Contract(format!("{plus_count} plus outcomes in {shots} shots")));
    }
    update_from_frequency(lambda_n, measurement, plus_count as f64 / shots as f64, qfi)
}

/// `Sₙ = ⌈1/(ε² Fₙ)⌉`.
pub fn shots_for(epsilon: f64, qfi: f64) -> Result<u64> {
    if !(qfi.is_finite() && qfi > 0.0) {
        return Err(Error::Protocol(format!("QFI at the guess must be positive, got {qfi}")));
    }
    let s = (1.0 / (epsilon * epsilon * qfi)).ceil();
    if !(s <= MAX_SHOTS as f64) {
        return Err(Error::Protocol(format!(
            "round would need {s:e} shots (F = {qfi:e})"
        )));
    }
    Ok((s as u64).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    /// Optimizer settings for round 0; `restarts` is replaced by
    /// `warm_restarts` in later rounds.
    pub optimizer: OptimizerConfig,
    pub warm_restarts: usize,
    pub max_rounds: usize,
    /// Shots of each round are split into this many folds for the
    /// standard-error stop rule; 0 or 1 disables the rule.
    pub subsample_folds: usize,
    /// Fresh random pulses tried after a degenerate measurement.
    pub degenerate_retries: usize,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            warm_restarts: 5,
            max_rounds: 50,
            subsample_folds: 10,
            degenerate_retries: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `|λₙ₊₁ - λₙ| < ε`.
    StepBelowEpsilon,
    /// Fold standard error below `ε/2`.
    StandardError,
    MaxRounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub guess: f64,
    pub qfi: f64,
    pub shots: u64,
    pub plus_count: u64,
    pub next_guess: f64,
    /// Probability of `+` on the true state.
    pub p_plus_true: f64,
    pub standard_error: Option<f64>,
    /// Pulse amplitudes (controlled) or `[θ, φ]` of the initial state (uncontrolled).
    pub settings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationTrace {
    pub rounds: Vec<RoundRecord>,
    pub total_shots: u64,
    pub converged: bool,
    pub final_estimate: f64,
    pub stop_reason: StopReason,
}

/// Measurement at the guess and Bloch vector at the truth for one round.
struct RoundSetup {
    qfi: f64,
    measurement: SldMeasurement,
    u_true: Bloch,
    settings: Vec<f64>,
}

struct Controlled<'a> {
    spec: &'a ChainSpec,
    total_time: f64,
    lambda_true: f64,
    config: &'a ProtocolConfig,
    previous: Option<Vec<f64>>,
}

impl Controlled<'_> {
    fn setup(&mut self, round: usize, guess: f64) -> Result<RoundSetup> {
        let psi0 = sector_state(self.spec, 1)?;
        let mut last_err = None;
        for attempt in 0..=self.config.degenerate_retries {
            let warm = if attempt == 0 { self.previous.clone() } else { None };
            let mut cfg = self.config.optimizer.clone();
            cfg.rng_seed = derive_seed(self.config.seed, 1 + (round * 64 + attempt) as u64);
            if warm.is_some() {
                cfg.restarts = self.config.warm_restarts.max(1);
            }
            let opt = maximize_qfi_from(self.spec, self.total_time, guess, &psi0, &cfg, warm.as_deref())?;
            let pulse: ControlPulse = opt.best_pulse;
            let at_guess = QfiProblem::new(self.spec, guess, &psi0)?.evaluate(&pulse, false)?;
            let (u_true, _) = QfiProblem::new(self.spec, self.lambda_true, &psi0)?.bloch(&pulse)?;
            match sld_from_bloch(&at_guess.surface.u, &at_guess.surface.du) {
                Ok(measurement) => {
                    self.previous = Some(pulse.amplitudes().to_vec());
                    return Ok(RoundSetup {
                        qfi: at_guess.qfi.value,
                        measurement,
                        u_true,
                        settings: pulse.amplitudes().to_vec(),
                    });
                }
                Err(e @ Error::DegenerateMeasurement { .. }) => {
                    self.previous = None;
                    last_err = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::Protocol(format!(
            "round {round}: {}",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )))
    }
}

fn uncontrolled_setup(spec: &ChainSpec, total_time: f64, lambda_true: f64, guess: f64) -> Result<RoundSetup> {
    let opt = optimize_initial_state_uncontrolled(spec, total_time, guess)?;
    let psi0 = probe_state(spec, opt.theta, opt.phi);
    let pulse = ControlPulse::constant(total_time, 1, 0.0)?;
    let (u, du) = QfiProblem::new(spec, guess, &psi0)?.bloch(&pulse)?;
    let (u_true, _) = QfiProblem::new(spec, lambda_true, &psi0)?.bloch(&pulse)?;
    let measurement = sld_from_bloch(&u, &du).map_err(|e| Error::Protocol(e.to_string()))?;
    // The landscape value and the direct evaluation are the same quantity.
    debug_assert!({
        let f = UncontrolledLandscape::new(spec, total_time, guess)?.qfi(opt.theta, opt.phi)?;
        (f - opt.qfi).abs() <= 1e-9 * opt.qfi.max(1.0)
    });
    Ok(RoundSetup {
        qfi: opt.qfi,
        measurement,
        u_true,
        settings: vec![opt.theta, opt.phi],
    })
}

/// Fold sizes summing to `shots`, as equal as possible.
fn fold_sizes(shots: u64, folds: usize) -> Vec<u64> {
    let f = (folds as u64).min(shots).max(1);
    let base = shots / f;
    let extra = shots % f;
    (0..f).map(|i| base + u64::from(i < extra)).collect()
}

/// Runs the feedback loop until `|λₙ₊₁ - λₙ| < ε`, the fold standard error
/// drops below `ε/2`, or `max_rounds` is reached.
pub fn run_protocol(
    spec: &ChainSpec,
    total_time: f64,
    lambda_true: f64,
    lambda_init: f64,
    epsilon: f64,
    use_control: bool,
    config: &ProtocolConfig,
) -> Result<EstimationTrace> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Config(format!("target accuracy must be positive, got {epsilon}")));
    }
    if !(total_time.is_finite() && total_time > 0.0) {
        return Err(Error::Config(format!("total time must be positive, got {total_time}")));
    }
    if config.max_rounds == 0 {
        return Err(Error::Config("max_rounds must be at least 1".into()));
    }
    config.optimizer.validate()?;

    let mut rng = child_rng(config.seed, 0);
    let mut controlled = Controlled {
        spec,
        total_time,
        lambda_true,
        config,
        previous: None,
    };
    let mut rounds = Vec::new();
    let mut guess = lambda_init;
    let mut total_shots = 0u64;

    for round in 0..config.max_rounds {
        let setup = if use_control {
            controlled.setup(round, guess)?
        } else {
            uncontrolled_setup(spec, total_time, lambda_true, guess)?
        };
        let shots = shots_for(epsilon, setup.qfi)?;
        let (p_plus, _) = outcome_probabilities(&setup.u_true, &setup.measurement);

        let sizes = fold_sizes(shots, config.subsample_folds);
        let mut plus_count = 0;
        let mut fold_estimates = Vec::with_capacity(sizes.len());
        for &size in &sizes {
            let k = simulate_round(p_plus, size, &mut rng)?;
            plus_count += k;
            fold_estimates.push(update_estimate(guess, &setup.measurement, k, size, setup.qfi)?);
        }
        let next = update_estimate(guess, &setup.measurement, plus_count, shots, setup.qfi)?;
        let standard_error = (fold_estimates.len() >= 2).then(|| {
            let f = fold_estimates.len() as f64;
            let mean = fold_estimates.iter().sum::<f64>() / f;
            let var = fold_estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (f - 1.0);
            (var / f).sqrt()
        });
        total_shots += shots;
        rounds.push(RoundRecord {
            round,
            guess,
            qfi: setup.qfi,
            shots,
            plus_count,
            next_guess: next,
            p_plus_true: p_plus,
            standard_error,
            settings: setup.settings,
        });

        let step = (next - guess).abs();
        guess = next;
        let stop = if step < epsilon {
            Some(StopReason::StepBelowEpsilon)
        } else if standard_error.is_some_and(|se| se < 0.5 * epsilon) {
            Some(StopReason::StandardError)
        } else {
            None
        };
        if let Some(reason) = stop {
            return Ok(EstimationTrace {
                rounds,
                total_shots,
                converged: true,
                final_estimate: guess,
                stop_reason: reason,
            });
        }
    }
    Ok(EstimationTrace {
        rounds,
        total_shots,
        converged: false,
        final_estimate: guess,
        stop_reason: StopReason::MaxRounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::UncontrolledLandscape;
    use crate::qfi::qfi;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sld_worked_values() {
        let m = sld_from_bloch(&Bloch::zeros(), &Bloch::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(m.alpha, 0.0);
        assert_eq!(m.v, Bloch::new(1.0, 0.0, 0.0));
        assert_eq!((m.ell_plus, m.ell_minus), (1.0, -1.0));

        let m = sld_from_bloch(&Bloch::new(0.6, 0.0, 0.0), &Bloch::new(1.0, 0.0, 0.0)).unwrap();
        assert!((m.alpha + 0.9375).abs() < 1e-14);
        assert!((m.v - Bloch::new(1.5625, 0.0, 0.0)).norm() < 1e-14);
        assert!((m.ell_plus - 0.625).abs() < 1e-14);
        assert!((m.ell_minus + 2.5).abs() < 1e-14);
    }

    #[test]
    fn degenerate_measurement_is_reported() {
        assert!(matches!(
            sld_from_bloch(&Bloch::new(0.3, 0.0, 0.0), &Bloch::zeros()),
            Err(Error::DegenerateMeasurement { .. })
        ));
    }

    #[test]
    fn sld_identities_on_random_bloch_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let dir = Bloch::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let u = dir.normalize() * rng.random_range(0.0..0.95);
            let du = Bloch::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let m = sld_from_bloch(&u, &du).unwrap();
            let f = qfi(&u, &du).unwrap().value;
            assert!(m.trace_rho_l(&u).abs() < 1e-9);
            assert!((m.trace_rho_l_squared(&u) - f).abs() < 1e-9 * f.max(1.0));
        }
    }

    #[test]
    fn probabilities() {
        let m = sld_from_bloch(&Bloch::zeros(), &Bloch::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(outcome_probabilities(&Bloch::new(0.0, 0.7, 0.0), &m), (0.5, 0.5));
        assert_eq!(outcome_probabilities(&Bloch::new(1.0, 0.0, 0.0), &m), (1.0, 0.0));
        let (p, q) = outcome_probabilities(&Bloch::new(0.6, 0.0, 0.0), &m);
        assert!((p - 0.8).abs() < 1e-15 && (q - 0.2).abs() < 1e-15);
    }

    #[test]
    fn binomial_rounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(simulate_round(1.0, 37, &mut rng).unwrap(), 37);
        assert_eq!(simulate_round(0.0, 37, &mut rng).unwrap(), 0);
        let k = simulate_round(0.5, 1_000_000, &mut rng).unwrap();
        assert!((k as f64 / 1e6 - 0.5).abs() < 0.002);
        assert!(simulate_round(1.5, 10, &mut rng).is_err());
        assert!(simulate_round(0.5, 0, &mut rng).is_err());

        let a = simulate_round(0.3, 1000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = simulate_round(0.3, 1000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn update_rules() {
        let m = sld_from_bloch(&Bloch::zeros(), &Bloch::new(1.0, 0.0, 0.0)).unwrap();
        let next = update_estimate(0.3, &m, 6, 10, 1.0).unwrap();
        assert!((next - 0.5).abs() < 1e-15);
        assert!(matches!(update_estimate(0.3, &m, 6, 10, 0.0), Err(Error::Protocol(_))));
        assert!(update_estimate(0.3, &m, 11, 10, 1.0).is_err());

        // Frequencies equal to the model at the guess: no move.
        let u = Bloch::new(0.2, -0.4, 0.1);
        let du = Bloch::new(0.9, 0.3, -0.5);
        let m = sld_from_bloch(&u, &du).unwrap();
        let (p, _) = outcome_probabilities(&u, &m);
        let f = qfi(&u, &du).unwrap().value;
        assert!((update_from_frequency(1.7, &m, p, f).unwrap() - 1.7).abs() < 1e-12);
    }

    #[test]
    fn shot_counts() {
        assert_eq!(shots_for(0.01, 100.0).unwrap(), 100);
        assert_eq!(shots_for(0.01, 3.0).unwrap(), 3334);
        assert_eq!(shots_for(0.005, 100.0).unwrap(), 400);
        assert_eq!(shots_for(1.0, 1e9).unwrap(), 1);
        assert!(shots_for(0.01, 0.0).is_err());
        assert!(shots_for(1e-9, 1e-9).is_err());
        assert_eq!(fold_sizes(23, 10).iter().sum::<u64>(), 23);
        assert_eq!(fold_sizes(3, 10), vec![1, 1, 1]);
        assert_eq!(fold_sizes(5, 0), vec![5]);
    }

    /// Expected next guess for the two-spin chain without control.
    fn expected_update(land_guess: &UncontrolledLandscape, spec: &ChainSpec, t: f64, guess: f64, truth: f64, theta: f64) -> f64 {
        let psi0 = probe_state(spec, theta, 0.0);
        let pulse = ControlPulse::constant(t, 1, 0.0).unwrap();
        let (u, du) = QfiProblem::new(spec, guess, &psi0).unwrap().bloch(&pulse).unwrap();
        let (ut, _) = QfiProblem::new(spec, truth, &psi0).unwrap().bloch(&pulse).unwrap();
        let m = sld_from_bloch(&u, &du).unwrap();
        let (p, _) = outcome_probabilities(&ut, &m);
        let f = land_guess.qfi(theta, 0.0).unwrap();
        update_from_frequency(guess, &m, p, f).unwrap()
    }

    #[test]
    fn expected_update_is_locally_unbiased() {
        let spec = ChainSpec::unit(2).unwrap();
        let (t, guess, theta) = (3.0, 0.1, 2.0);
        let land = UncontrolledLandscape::new(&spec, t, guess).unwrap();
        let bias = |d: f64| expected_update(&land, &spec, t, guess, guess + d, theta) - (guess + d);
        let (b1, b2) = (bias(0.02), bias(0.01));
        assert!(b1.abs() < 0.02 * 0.2, "bias {b1}");
        // Second order: halving the offset quarters the bias.
        let ratio = b1 / b2;
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn noiseless_iteration_converges_monotonically() {
        let spec = ChainSpec::unit(2).unwrap();
        let t = 3.0;
        let truth = 0.0;
        for &start in &[0.2, -0.2, 0.1, -0.05] {
            let mut guess: f64 = start;
            let mut err = (guess - truth).abs();
            for _ in 0..8 {
                let opt = optimize_initial_state_uncontrolled(&spec, t, guess).unwrap();
                let land = UncontrolledLandscape::new(&spec, t, guess).unwrap();
                guess = expected_update(&land, &spec, t, guess, truth, opt.theta);
                let e = (guess - truth).abs();
                assert!(e <= err + 1e-14, "start {start}: {e} > {err}");
                err = e;
            }
            assert!(err < 1e-6, "start {start}: final error {err}");
        }
    }

    #[test]
    fn uncontrolled_protocol_is_reproducible_and_converges() {
        let spec = ChainSpec::unit(2).unwrap();
        let cfg = ProtocolConfig {
            seed: 4,
            ..Default::default()
        };
        let a = run_protocol(&spec, 3.0, 0.0, 0.1, 0.01, false, &cfg).unwrap();
        let b = run_protocol(&spec, 3.0, 0.0, 0.1, 0.01, false, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.converged);
        assert_eq!(a.total_shots, a.rounds.iter().map(|r| r.shots).sum::<u64>());
        assert!(a.rounds.iter().all(|r| r.shots >= 1));
        assert!(a.final_estimate.abs() < 0.05);
    }

    #[test]
    fn consistent_start_stops_quickly() {
        let spec = ChainSpec::unit(2).unwrap();
        let cfg = ProtocolConfig {
            seed: 8,
            ..Default::default()
        };
        let tr = run_protocol(&spec, 3.0, 0.05, 0.05, 0.01, false, &cfg).unwrap();
        assert!(tr.converged);
        assert!(tr.rounds.len() <= 4);
        assert!((tr.final_estimate - 0.05).abs() < 0.04);
    }

    #[test]
    fn controlled_protocol_runs() {
        let spec = ChainSpec::unit(3).unwrap();
        let cfg = ProtocolConfig {
            optimizer: OptimizerConfig {
                slots: 8,
                restarts: 3,
                max_iterations: 80,
                ..Default::default()
            },
            warm_restarts: 2,
            seed: 2,
            ..Default::default()
        };
        let tr = run_protocol(&spec, 6.0, 0.0, 0.1, 0.01, true, &cfg).unwrap();
        assert!(tr.converged);
        assert!(tr.final_estimate.abs() < 0.05);
        assert_eq!(tr.rounds[0].settings.len(), 8);
    }

    #[test]
    fn invalid_protocol_inputs() {
        let spec = ChainSpec::unit(2).unwrap();
        let cfg = ProtocolConfig::default();
        assert!(matches!(run_protocol(&spec, 3.0, 0.0, 0.1, 0.0, false, &cfg), Err(Error::Config(_))));
        assert!(matches!(run_protocol(&spec, -1.0, 0.0, 0.1, 0.01, false, &cfg), Err(Error::Config(_))));
    }
}
