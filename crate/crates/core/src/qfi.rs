//! Probe Bloch vector, quantum Fisher information and its pulse gradient.
//!
//! For a qubit `ρ = (I + u·σ)/2` depending on `λ`,
//!
//! ```text
//! F = ‖∂λu‖² + (u·∂λu)² / (1 - ‖u‖²)
//! ```

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainSpec, ProbeEmbedding};
use crate::error::{Error, Result};
use crate::propagator::{check_normalized, evolve_state, ChainPropagator, ControlPulse};
use crate::CVector;

/// Below this value of `1 - ‖u‖²` the state is treated as pure.
pub const PURE_STATE_EPSILON: f64 = 1e-10;
/// In the pure regime, `|u·∂λu|` below this is treated as exactly zero.
pub const PURE_STATE_OVERLAP_FLOOR: f64 = 1e-8;
/// Allowed excess of `‖u‖` over 1 from rounding.
pub const BLOCH_NORM_TOLERANCE: f64 = 1e-9;

pub type Bloch = Vector3<f64>;

/// Bloch vector of the probe, its λ-derivative and optional per-slot data.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSurface {
    pub u: Bloch,
    pub du: Bloch,
    /// `∂ᵢu` for each slot.
    pub slot_u: Option<Vec<Bloch>>,
    /// `∂ᵢ∂λu` for each slot.
    pub slot_du: Option<Vec<Bloch>>,
}

/// QFI and the auxiliary `g = (∂λu·u)/(1 - ‖u‖²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QfiValue {
    pub value: f64,
    pub g: f64,
}

impl ProbeEmbedding {
    /// `Re⟨a|σ̃_k|b⟩` for `k = x, y, z`.
    pub fn real_overlap(&self, a: &CVector, b: &CVector) -> Bloch {
        let [x, y, z] = self.components();
        Bloch::new(
            a.dotc(&(x * b)).re,
            a.dotc(&(y * b)).re,
            a.dotc(&(z * b)).re,
        )
    }

    /// `(u, ∂λu)` with `u = ⟨ψ|σ̃|ψ⟩` and `∂λu = 2 Re⟨∂λψ|σ̃|ψ⟩`.
    pub fn reduce(&self, psi: &CVector, d_psi: &CVector) -> Result<(Bloch, Bloch)> {
        check_normalized(psi)?;
        Ok((
            self.real_overlap(psi, psi),
            2.0 * self.real_overlap(d_psi, psi),
        ))
    }
}

/// Probe Bloch vector and its λ-derivative for a chain state.
pub fn reduce_to_bloch(psi: &CVector, d_psi: &CVector) -> Result<(Bloch, Bloch)> {
    if psi.len() < 2 || psi.len() != d_psi.len() {
        return Err(Error::Contract(format!(
            "state vectors of length {} and {}",
            psi.len(),
            d_psi.len()
        )));
    }
    ProbeEmbedding::new(psi.len()).reduce(psi, d_psi)
}

/// `g = (u·∂λu)/(1 - ‖u‖²)` with the pure-state guard applied.
pub fn guarded_ratio(u: &Bloch, du: &Bloch) -> Result<f64> {
    let norm = u.norm();
    if !norm.is_finite() || !du.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("non-finite Bloch data".into()));
    }
    if norm > 1.0 + BLOCH_NORM_TOLERANCE {
        return Err(Error::Numeric(format!("Bloch vector outside the ball, ‖u‖ = {norm}")));
    }
    let overlap = u.dot(du);
    let denom = 1.0 - norm * norm;
    if denom < PURE_STATE_EPSILON {
        if overlap.abs() > PURE_STATE_OVERLAP_FLOOR {
            Ok(overlap / PURE_STATE_EPSILON)
        } else {
            Ok(0.0)
        }
    } else {
        Ok(overlap / denom)
    }
}

pub fn qfi(u: &Bloch, du: &Bloch) -> Result<QfiValue> {
    let g = guarded_ratio(u, du)?;
    Ok(QfiValue {
        value: du.norm_squared() + g * u.dot(du),
        g,
    })
}

/// `∂ᵢF = 2(∂ᵢ∂λu)·∂λu + 2g(∂ᵢ∂λu·u + ∂λu·∂ᵢu + g ∂ᵢu·u)`.
pub fn qfi_gradient(surface: &ProbeSurface) -> Result<Vec<f64>> {
    let (Some(slot_u), Some(slot_du)) = (&surface.slot_u, &surface.slot_du) else {
        return Err(Error::Contract("surface has no per-slot derivatives".into()));
    };
    if slot_u.len() != slot_du.len() {
        return Err(Error::Contract("per-slot derivative lists differ in length".into()));
    }
    let g = guarded_ratio(&surface.u, &surface.du)?;
    let (u, du) = (&surface.u, &surface.du);
    Ok(slot_u
        .iter()
        .zip(slot_du)
        .map(|(di_u, di_du)| {
            2.0 * di_du.dot(du) + 2.0 * g * (di_du.dot(u) + du.dot(di_u) + g * di_u.dot(u))
        })
        .collect())
}

/// One evaluation of the QFI at a pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct QfiEvaluation {
    pub qfi: QfiValue,
    pub gradient: Option<Vec<f64>>,
    pub surface: ProbeSurface,
}

/// The chain at a fixed `λ` with a fixed initial state; evaluates the QFI of
/// arbitrary pulses.
#[derive(Debug, Clone)]
pub struct QfiProblem {
    propagator: ChainPropagator,
    embedding: ProbeEmbedding,
    psi0: CVector,
}

impl QfiProblem {
    pub fn new(spec: &ChainSpec, lambda: f64, psi0: &CVector) -> Result<Self> {
        check_normalized(psi0)?;
        if psi0.len() != spec.dim() {
            return Err(Error::Config(format!(
                "initial state has {} entries, sector dimension is {}",
                psi0.len(),
                spec.dim()
            )));
        }
        Ok(Self {
            propagator: ChainPropagator::new(spec, lambda),
            embedding: ProbeEmbedding::for_chain(spec),
            psi0: psi0.clone(),
        })
    }

    pub fn spec(&self) -> &ChainSpec {
        self.propagator.spec()
    }

    pub fn lambda(&self) -> f64 {
        self.propagator.lambda()
    }

    pub fn initial_state(&self) -> &CVector {
        &self.psi0
    }

    /// `(u, ∂λu)` at the end of `pulse`.
    pub fn bloch(&self, pulse: &ControlPulse) -> Result<(Bloch, Bloch)> {
        let (u, du) = self.propagator.compose_lambda_only(pulse)?;
        self.embedding.reduce(&(&u * &self.psi0), &(&du * &self.psi0))
    }

    pub fn evaluate(&self, pulse: &ControlPulse, with_gradient: bool) -> Result<QfiEvaluation> {
        if !with_gradient {
            let (u, du) = self.bloch(pulse)?;
            return Ok(QfiEvaluation {
                qfi: qfi(&u, &du)?,
                gradient: None,
                surface: ProbeSurface {
                    u,
                    du,
                    slot_u: None,
                    slot_du: None,
                },
            });
        }

        let bundle = self.propagator.compose(pulse)?;
        let state = evolve_state(&bundle, &self.psi0)?;
        let (u, du) = self.embedding.reduce(&state.psi, &state.d_lambda)?;
        let slot_u = state
            .d_control
            .iter()
            .map(|di| 2.0 * self.embedding.real_overlap(di, &state.psi))
            .collect();
        let slot_du = state
            .d_mixed
            .iter()
            .zip(&state.d_control)
            .map(|(dil, di)| {
                2.0 * self.embedding.real_overlap(dil, &state.psi)
                    + 2.0 * self.embedding.real_overlap(&state.d_lambda, di)
            })
            .collect();
        let surface = ProbeSurface {
            u,
            du,
            slot_u: Some(slot_u),
            slot_du: Some(slot_du),
        };
        let value = qfi(&surface.u, &surface.du)?;
        let gradient = qfi_gradient(&surface)?;
        Ok(QfiEvaluation {
            qfi: value,
            gradient: Some(gradient),
            surface,
        })
    }
}

/// End-to-end QFI (and optionally its gradient) of `pulse` at `λ`.
pub fn qfi_of_pulse(
    spec: &ChainSpec,
    pulse: &ControlPulse,
    lambda: f64,
    psi0: &CVector,
    with_gradient: bool,
) -> Result<QfiEvaluation> {
    QfiProblem::new(spec, lambda, psi0)?.evaluate(pulse, with_gradient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{probe_state, sector_state};
    use nalgebra::{Rotation3, Unit};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn bloch_vectors_of_simple_states() {
        let s = 0.5f64.sqrt();
        let zero = CVector::zeros(3);
        let (u, _) = reduce_to_bloch(&CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]), &zero).unwrap();
        assert_eq!(u, Bloch::new(0.0, 0.0, -1.0));
        let (u, _) = reduce_to_bloch(&CVector::from_vec(vec![c(s, 0.0), c(s, 0.0), c(0.0, 0.0)]), &zero).unwrap();
        assert!((u - Bloch::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        let (u, _) = reduce_to_bloch(&CVector::from_vec(vec![c(0.0, 0.0), c(s, 0.0), c(s, 0.0)]), &zero).unwrap();
        assert!(u.norm() < 1e-15);
    }

    #[test]
    fn y_component_follows_phase_convention() {
        let spec = ChainSpec::unit(3).unwrap();
        let phi = 0.7;
        let psi = probe_state(&spec, std::f64::consts::FRAC_PI_2, phi);
        let (u, _) = reduce_to_bloch(&psi, &CVector::zeros(4)).unwrap();
        let expected = 2.0 * (psi[1] * psi[0].conj()).im;
        assert!((u.y - expected).abs() < 1e-15);
        assert!((u.y - phi.sin()).abs() < 1e-15);
    }

    #[test]
    fn rejects_unnormalized_state() {
        let psi = CVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(
            reduce_to_bloch(&psi, &CVector::zeros(2)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn qfi_worked_values() {
        let f = qfi(&Bloch::zeros(), &Bloch::new(1.0, 0.0, 0.0)).unwrap();
        assert!((f.value - 1.0).abs() < 1e-15);
        let f = qfi(&Bloch::new(0.6, 0.0, 0.0), &Bloch::new(0.0, 0.8, 0.0)).unwrap();
        assert!((f.value - 0.64).abs() < 1e-15);
        let f = qfi(&Bloch::new(0.6, 0.0, 0.0), &Bloch::new(1.0, 0.0, 0.0)).unwrap();
        assert!((f.value - 1.5625).abs() < 1e-14);
        assert!((f.g - 0.9375).abs() < 1e-14);
    }

    #[test]
    fn qfi_rejects_vectors_outside_the_ball() {
        assert!(matches!(
            qfi(&Bloch::new(1.0 + 1e-6, 0.0, 0.0), &Bloch::zeros()),
            Err(Error::Numeric(_))
        ));
        // Rounding-level excess is tolerated.
        assert!(qfi(&Bloch::new(1.0 + 1e-12, 0.0, 0.0), &Bloch::zeros()).is_ok());
    }

    #[test]
    fn pure_state_guard() {
        let u = Bloch::new(0.0, 0.0, 1.0);
        // Orthogonal derivative: second term dropped.
        let f = qfi(&u, &Bloch::new(0.3, 0.0, 0.0)).unwrap();
        assert!((f.value - 0.09).abs() < 1e-15);
        assert_eq!(f.g, 0.0);
        // Tangential overlap above the floor uses the floor denominator.
        let f = qfi(&u, &Bloch::new(0.0, 0.0, 1e-6)).unwrap();
        assert!((f.value - (1e-12 + 1e-12 / PURE_STATE_EPSILON)).abs() < 1e-12);
    }

    #[test]
    fn gradient_requires_slot_data() {
        let s = ProbeSurface {
            u: Bloch::zeros(),
            du: Bloch::zeros(),
            slot_u: None,
            slot_du: None,
        };
        assert!(matches!(qfi_gradient(&s), Err(Error::Contract(_))));
    }

    #[test]
    fn insensitive_pulse_has_zero_gradient() {
        let s = ProbeSurface {
            u: Bloch::new(0.2, 0.1, 0.3),
            du: Bloch::new(0.5, -0.3, 0.1),
            slot_u: Some(vec![Bloch::zeros(); 4]),
            slot_du: Some(vec![Bloch::zeros(); 4]),
        };
        assert_eq!(qfi_gradient(&s).unwrap(), vec![0.0; 4]);
    }

    fn fd_gradient(problem: &QfiProblem, pulse: &ControlPulse, h: f64) -> Vec<f64> {
        (0..pulse.slot_count())
            .map(|i| {
                let mut plus = pulse.amplitudes().to_vec();
                let mut minus = plus.clone();
                plus[i] += h;
                minus[i] -= h;
                let fp = problem.evaluate(&pulse.with_amplitudes(plus).unwrap(), false).unwrap().qfi.value;
                let fm = problem.evaluate(&pulse.with_amplitudes(minus).unwrap(), false).unwrap().qfi.value;
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        diff / scale.max(1e-12)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for &(n, m, t) in &[(2usize, 4usize, 3.0), (5, 20, 8.0)] {
            let spec = ChainSpec::unit(n).unwrap();
            let psi0 = sector_state(&spec, 1).unwrap();
            let problem = QfiProblem::new(&spec, 0.15, &psi0).unwrap();
            let amps: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pulse = ControlPulse::uniform(t, amps).unwrap();
            let eval = problem.evaluate(&pulse, true).unwrap();
            let fd = fd_gradient(&problem, &pulse, 1e-5);
            let err = relative_error(eval.gradient.as_ref().unwrap(), &fd);
            assert!(err < 1e-5, "N={n} m={m}: {err:e}");
        }
    }

    #[test]
    fn value_paths_agree() {
        let spec = ChainSpec::unit(4).unwrap();
        let psi0 = probe_state(&spec, 2.0, 0.3);
        let pulse = ControlPulse::uniform(6.0, vec![0.4, -0.9, 1.7, 0.0, 0.2]).unwrap();
        let a = qfi_of_pulse(&spec, &pulse, -0.1, &psi0, false).unwrap();
        let b = qfi_of_pulse(&spec, &pulse, -0.1, &psi0, true).unwrap();
        assert!((a.qfi.value - b.qfi.value).abs() < 1e-10 * b.qfi.value.max(1.0));
    }

    #[test]
    fn no_information_at_zero_time() {
        let spec = ChainSpec::unit(2).unwrap();
        let psi0 = sector_state(&spec, 1).unwrap();
        let mut last = f64::INFINITY;
        for &t in &[1e-1, 1e-2, 1e-3] {
            let pulse = ControlPulse::constant(t, 1, 0.0).unwrap();
            let f = qfi_of_pulse(&spec, &pulse, 0.3, &psi0, false).unwrap().qfi.value;
            assert!(f < last, "T = {t}: {f} >= {last}");
            last = f;
        }
        assert!(last < 1e-8);
    }

    #[test]
    fn frozen_exchange_stays_pure_and_finite() {
        // c ≫ J: the excitation stays on the probe, the reduced state stays pure.
        let spec = ChainSpec::unit(2).unwrap();
        let psi0 = probe_state(&spec, 1.2, 0.0);
        let pulse = ControlPulse::constant(3.0, 1, 1e4).unwrap();
        let eval = qfi_of_pulse(&spec, &pulse, 0.0, &psi0, true).unwrap();
        assert!(1.0 - eval.surface.u.norm_squared() < 1e-8);
        assert!(eval.qfi.value.is_finite());
        assert!(eval.gradient.unwrap().iter().all(|g| g.is_finite()));
    }

    proptest! {
        #[test]
        fn qfi_is_rotation_invariant(
            ux in -0.5f64..0.5, uy in -0.5f64..0.5, uz in -0.5f64..0.5,
            dx in -2.0f64..2.0, dy in -2.0f64..2.0, dz in -2.0f64..2.0,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
            angle in 0.0f64..6.28,
        ) {
            let u = Bloch::new(ux, uy, uz);
            let du = Bloch::new(dx, dy, dz);
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Bloch::new(ax, ay, az)), angle);
            let a = qfi(&u, &du).unwrap().value;
            let b = qfi(&(rot * u), &(rot * du)).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
