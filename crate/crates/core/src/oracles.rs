//! Closed-form two-spin results and the explicit three-step control protocol.
//!
//! For `N = 2` the optimal QFI without control grows as
//!
//! ```text
//! T² / [(1 - x²)(1 + x²)²]     x² < 1/2
//! 4T² x² / (1 + x²)²           otherwise,      x = λ/J
//! ```
//!
//! while the three-step protocol (prepare, accumulate, map back) reaches
//! `4[T - (π/2 - 1)/J]²`, approaching the `4T²` bound.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chain::{sector_state, ChainSpec};
use crate::error::{Error, Result};
use crate::propagator::{ChainPropagator, ControlPulse};
use crate::qfi::QfiProblem;

/// Default strong-field amplitude of step 2, in units of J.
pub const DEFAULT_STRONG_FIELD: f64 = 200.0;
/// Below this multiple of J the strong field no longer freezes the exchange well.
pub const STRONG_FIELD_WARNING: f64 = 50.0;
/// Duration of the phase-cancelling rotation slot as a fraction of `T`.
pub const ROTATION_FRACTION: f64 = 1e-4;
/// Default `(λ_true - λ_guess)/J` at which the protocol QFI is read off.
///
/// Right at the guess the probe ends almost exactly in `|2⟩` and the residual
/// leakage of order `(J/c_strong)²` opens a narrow dip (width ~1e-4 J) in the
/// QFI; a few widths away the QFI is flat in the offset.
pub const READOUT_OFFSET: f64 = 1e-2;

/// Large-`T` rate `F/T²` of the optimally initialized, uncontrolled two-spin chain.
///
/// The branch is selected on the dimensionless `λ²/J² < 1/2`.
pub fn uncontrolled_asymptotic_rate(lambda_over_j: f64) -> f64 {
    let x2 = lambda_over_j * lambda_over_j;
    if x2 < 0.5 {
        1.0 / ((1.0 - x2) * (1.0 + x2).powi(2))
    } else {
        4.0 * x2 / (1.0 + x2).powi(2)
    }
}

pub fn uncontrolled_asymptotic_qfi(lambda_over_j: f64, total_time: f64) -> f64 {
    uncontrolled_asymptotic_rate(lambda_over_j) * total_time * total_time
}

/// `4[T - (π/2 - 1)/J]²`.
pub fn three_step_qfi_closed_form(total_time: f64, coupling: f64) -> Result<f64> {
    let offset = (PI / 2.0 - 1.0) / coupling;
    if !(coupling > 0.0 && total_time >= offset) {
        return Err(Error::Domain(format!(
            "closed form needs T ≥ (π/2 - 1)/J = {offset}, got T = {total_time}"
        )));
    }
    Ok(4.0 * (total_time - offset).powi(2))
}

/// Parameters of the three-step two-spin protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSpinProtocol {
    pub total_time: f64,
    pub coupling: f64,
    /// Amplitude during the phase-accumulation step.
    pub strong_field: f64,
}

impl TwoSpinProtocol {
    pub fn new(total_time: f64, coupling: f64) -> Result<Self> {
        Self::with_strong_field(total_time, coupling, DEFAULT_STRONG_FIELD * coupling)
    }

    pub fn with_strong_field(total_time: f64, coupling: f64, strong_field: f64) -> Result<Self> {
        if !(coupling.is_finite() && coupling > 0.0) {
            return Err(Error::Config(format!("coupling must be positive, got {coupling}")));
        }
        let min_time = PI / (2.0 * coupling) / (1.0 - ROTATION_FRACTION);
        if !(total_time.is_finite() && total_time > min_time) {
            return Err(Error::Config(format!(
                "three-step protocol needs T > π/(2J), got T = {total_time}"
            )));
        }
        if !strong_field.is_finite() {
            return Err(Error::Config("strong field must be finite".into()));
        }
        Ok(Self {
            total_time,
            coupling,
            strong_field,
        })
    }

    /// Quarter-swap time `π/(4J)` of steps 1 and 3.
    pub fn swap_time(&self) -> f64 {
        PI / (4.0 * self.coupling)
    }

    pub fn rotation_duration(&self) -> f64 {
        ROTATION_FRACTION * self.total_time
    }

    pub fn accumulation_time(&self) -> f64 {
        self.total_time - 2.0 * self.swap_time() - self.rotation_duration()
    }

    pub fn strong_field_is_weak(&self) -> bool {
        self.strong_field.abs() < STRONG_FIELD_WARNING * self.coupling
    }
}

/// The protocol realized as a piecewise-constant pulse, with a record of how
/// the instantaneous rotation was approximated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeStepPulse {
    pub pulse: ControlPulse,
    /// Relative phase of `|2⟩` against `|1⟩` removed by the rotation slot, in (-π, π].
    pub phase_rotation: f64,
    pub rotation_duration: f64,
    pub rotation_amplitude: f64,
    /// Phase left over after the rotation, as simulated at the guess.
    pub residual_phase: f64,
    /// Slots per step: (preparation, accumulation, rotation, read-out).
    pub step_slots: (usize, usize, usize, usize),
    /// Set when the strong field is below 50 J.
    pub weak_field_warning: bool,
}

fn wrap_phase(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Phase of `a₂/a₁` minus π/2: zero on `(|1⟩ + i|2⟩)/√2`.
fn relative_phase(psi: &crate::CVector) -> f64 {
    wrap_phase((psi[2] / psi[1]).arg() - PI / 2.0)
}

/// Builds the three-step pulse for `λ_guess`. `slots` is a lower bound on
/// the slot count; at least four slots are always used and any extra slots
/// subdivide the accumulation step.
pub fn build_three_step_pulse(
    protocol: &TwoSpinProtocol,
    lambda_guess: f64,
    slots: usize,
) -> Result<ThreeStepPulse> {
    let spec = ChainSpec::new(2, protocol.coupling)?;
    let prop = ChainPropagator::new(&spec, lambda_guess);
    let accumulation_slots = slots.max(4) - 3;
    let swap = protocol.swap_time();
    let tau = protocol.rotation_duration();
    let hold = protocol.accumulation_time();

    // State at the end of step 2, simulated at the guess.
    let head = ControlPulse::from_slots(
        std::iter::once(lambda_guess)
            .chain(std::iter::repeat_n(protocol.strong_field, accumulation_slots))
            .collect(),
        std::iter::once(swap)
            .chain(std::iter::repeat_n(hold / accumulation_slots as f64, accumulation_slots))
            .collect(),
    )?;
    let psi1 = sector_state(&spec, 1)?;
    let after_hold = prop.total_unitary(&head)? * &psi1;
    let phase = relative_phase(&after_hold);

    // On the rotation slot the relative phase advances by about -2(a - λ)τ;
    // start there and polish with secant steps on the simulated phase.
    let phase_after = |a: f64| -> Result<f64> {
        let h = prop.hamiltonian(a) * Complex64::new(0.0, -tau);
        Ok(relative_phase(&(crate::expm::expm(&h)? * &after_hold)))
    };
    let mut a0 = lambda_guess + phase / (2.0 * tau);
    let mut f0 = phase_after(a0)?;
    let mut a1 = a0 + f0 / (2.0 * tau);
    let mut f1 = phase_after(a1)?;
    for _ in 0..8 {
        if f1.abs() < 1e-14 || f1 == f0 {
            break;
        }
        let a2 = a1 - f1 * (a1 - a0) / (f1 - f0);
        (a0, f0) = (a1, f1);
        a1 = a2;
        f1 = phase_after(a1)?;
    }
    let rotation_amplitude = a1;

    let mut amplitudes = head.amplitudes().to_vec();
    let mut durations = head.durations().to_vec();
    amplitudes.extend([rotation_amplitude, lambda_guess]);
    durations.extend([tau, swap]);

    Ok(ThreeStepPulse {
        pulse: ControlPulse::from_slots(amplitudes, durations)?,
        phase_rotation: phase,
        rotation_duration: tau,
        rotation_amplitude,
        residual_phase: f1,
        step_slots: (1, accumulation_slots, 1, 1),
        weak_field_warning: protocol.strong_field_is_weak(),
    })
}

/// QFI of the probe for the three-step pulse built at `λ_guess`, with the
/// chain evolving at `λ_guess + offset`.
pub fn simulated_three_step_qfi(
    protocol: &TwoSpinProtocol,
    lambda_guess: f64,
    offset: f64,
    slots: usize,
) -> Result<f64> {
    let spec = ChainSpec::new(2, protocol.coupling)?;
    let built = build_three_step_pulse(protocol, lambda_guess, slots)?;
    let psi0 = sector_state(&spec, 1)?;
    let problem = QfiProblem::new(&spec, lambda_guess + offset * protocol.coupling, &psi0)?;
    Ok(problem.evaluate(&built.pulse, false)?.qfi.value)
}
