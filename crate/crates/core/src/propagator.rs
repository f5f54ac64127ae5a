//! Slot propagators of piecewise-constant pulses and their derivatives.
//!
//! For one slot of duration `δt` at amplitude `c` the propagator
//! `U = exp(-i H_{c,λ} δt)` and its derivatives `∂λU`, `∂cU`, `∂c∂λU` are the
//! first block column of `exp(-i M δt)` with
//!
//! ```text
//!     ⎡ H      0      0      0 ⎤
//! M = ⎢ ∂λH    H      0      0 ⎥      H = H_λ + c H_ctrl
//!     ⎢ H_ctrl 0      H      0 ⎥
//!     ⎣ 0      H_ctrl ∂λH    H ⎦
//! ```
//!
//! evaluated with the block-structured Padé scheme in [`crate::expm`].
//! A pulse propagates right to left in time: `U_total = U_m ⋯ U_1`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chain::{build_sector_hamiltonian, derivative_generators, ChainSpec, Generators};
use crate::error::{Error, Result};
use crate::expm::{expm, pade_expm, DualMatrix, MatrixJet};
use crate::{CMatrix, CVector};

/// Tolerance on `‖ψ₀‖ - 1` accepted by the state-evolution routines.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Piecewise-constant control field: one amplitude per slot.
///
/// Slots are usually of equal length `T/m`; [`ControlPulse::from_slots`]
/// also accepts explicit per-slot durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPulse {
    amplitudes: Vec<f64>,
    durations: Vec<f64>,
}

impl ControlPulse {
    /// `m = amplitudes.len()` slots of duration `total_time / m`.
    pub fn uniform(total_time: f64, amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Config("pulse needs at least one slot".into()));
        }
        if !(total_time.is_finite() && total_time > 0.0) {
            return Err(Error::Config(format!(
                "total time must be positive, got {total_time}"
            )));
        }
        let dt = total_time / amplitudes.len() as f64;
        let durations = vec![dt; amplitudes.len()];
        Self::from_slots(amplitudes, durations)
    }

    pub fn constant(total_time: f64, slots: usize, amplitude: f64) -> Result<Self> {
        Self::uniform(total_time, vec![amplitude; slots])
    }

    pub fn from_slots(amplitudes: Vec<f64>, durations: Vec<f64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Config("pulse needs at least one slot".into()));
        }
        if amplitudes.len() != durations.len() {
            return Err(Error::Config(format!(
                "{} amplitudes but {} durations",
                amplitudes.len(),
                durations.len()
            )));
        }
        if let Some(d) = durations.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::Config(format!("slot duration must be positive, got {d}")));
        }
        if let Some(a) = amplitudes.iter().find(|a| !a.is_finite()) {
            return Err(Error::Numeric(format!("non-finite pulse amplitude {a}")));
        }
        Ok(Self {
            amplitudes,
            durations,
        })
    }

    /// Same slot grid, new amplitudes.
    pub fn with_amplitudes(&self, amplitudes: Vec<f64>) -> Result<Self> {
        Self::from_slots(amplitudes, self.durations.clone())
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn slot_count(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn total_time(&self) -> f64 {
        self.durations.iter().sum()
    }

    pub fn is_uniform(&self) -> bool {
        self.durations.windows(2).all(|w| w[0] == w[1])
    }
}

/// Propagator of one slot and its derivatives with respect to `λ` and the
/// slot amplitude `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotBundle {
    pub u: CMatrix,
    pub d_lambda: CMatrix,
    pub d_control: CMatrix,
    pub d_mixed: CMatrix,
}

/// Full-pulse propagator with `∂λ`, the per-slot `∂ᵢ = ∂/∂cᵢ` and the mixed
/// `∂ᵢ∂λ` derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseBundle {
    pub u: CMatrix,
    pub d_lambda: CMatrix,
    pub d_control: Vec<CMatrix>,
    pub d_mixed: Vec<CMatrix>,
}

/// Slot bundle for `H = h_lambda + control · h_ctrl` over `dt`.
pub fn slot_bundle(
    h_lambda: &CMatrix,
    d_lambda_h: &CMatrix,
    h_ctrl: &CMatrix,
    control: f64,
    dt: f64,
) -> Result<SlotBundle> {
    let n = h_lambda.nrows();
    for (name, m) in [("H_λ", h_lambda), ("∂λH", d_lambda_h), ("H_ctrl", h_ctrl)] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Config(format!(
                "{name} is {}x{}, expected {n}x{n}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(Error::Config(format!("slot duration must be non-negative, got {dt}")));
    }
    if !control.is_finite() {
        return Err(Error::Numeric(format!("non-finite control amplitude {control}")));
    }

    let s = Complex64::new(0.0, -dt);
    let h = h_lambda + h_ctrl * Complex64::from(control);
    let generator = MatrixJet::new(h * s, d_lambda_h * s, h_ctrl * s, DMatrix::zeros(n, n));
    let e = pade_expm(&generator)?;
    Ok(SlotBundle {
        u: e.value,
        d_lambda: e.d_a,
        d_control: e.d_b,
        d_mixed: e.d_ab,
    })
}

/// Cached chain operators at a fixed `λ`.
#[derive(Debug, Clone)]
pub struct ChainPropagator {
    spec: ChainSpec,
    lambda: f64,
    h_lambda: CMatrix,
    generators: Generators,
}

impl ChainPropagator {
    pub fn new(spec: &ChainSpec, lambda: f64) -> Self {
        Self {
            spec: *spec,
            lambda,
            h_lambda: build_sector_hamiltonian(spec, 0.0, lambda).matrix,
            generators: derivative_generators(spec),
        }
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `H_{c,λ}`.
    pub fn hamiltonian(&self, control: f64) -> CMatrix {
        &self.h_lambda + &self.generators.control * Complex64::from(control)
    }

    pub fn slot(&self, control: f64, dt: f64) -> Result<SlotBundle> {
        slot_bundle(
            &self.h_lambda,
            &self.generators.d_lambda,
            &self.generators.control,
            control,
            dt,
        )
    }

    /// `(U, ∂λU)` of one slot.
    pub fn slot_with_lambda_derivative(&self, control: f64, dt: f64) -> Result<(CMatrix, CMatrix)> {
        let s = Complex64::new(0.0, -dt);
        let generator = DualMatrix::new(self.hamiltonian(control) * s, &self.generators.d_lambda * s);
        let e = pade_expm(&generator)?;
        Ok((e.value, e.d))
    }

    /// Slot bundles for every slot, reusing bundles of repeated `(c, δt)`.
    pub fn slot_bundles(&self, pulse: &ControlPulse) -> Result<Vec<SlotBundle>> {
        let mut cache: HashMap<(u64, u64), SlotBundle> = HashMap::new();
        pulse
            .amplitudes()
            .iter()
            .zip(pulse.durations())
            .map(|(&c, &dt)| {
                let key = (c.to_bits(), dt.to_bits());
                if let Some(b) = cache.get(&key) {
                    return Ok(b.clone());
                }
                let b = self.slot(c, dt)?;
                cache.insert(key, b.clone());
                Ok(b)
            })
            .collect()
    }

    /// Chain-rule composition of all slot bundles.
    pub fn compose(&self, pulse: &ControlPulse) -> Result<PulseBundle> {
        let slots = self.slot_bundles(pulse)?;
        Ok(compose_slots(&slots))
    }

    /// `(U_total, ∂λU_total)` without the control derivatives.
    pub fn compose_lambda_only(&self, pulse: &ControlPulse) -> Result<(CMatrix, CMatrix)> {
        let dim = self.spec.dim();
        let mut u = DMatrix::identity(dim, dim);
        let mut du = DMatrix::zeros(dim, dim);
        let mut cache: HashMap<(u64, u64), (CMatrix, CMatrix)> = HashMap::new();
        for (&c, &dt) in pulse.amplitudes().iter().zip(pulse.durations()) {
            let key = (c.to_bits(), dt.to_bits());
            let (uk, duk) = match cache.get(&key) {
                Some(v) => v.clone(),
                None => {
                    let v = self.slot_with_lambda_derivative(c, dt)?;
                    cache.insert(key, v.clone());
                    v
                }
            };
            du = &duk * &u + &uk * &du;
            u = &uk * &u;
        }
        Ok((u, du))
    }

    /// `U_total` alone.
    pub fn total_unitary(&self, pulse: &ControlPulse) -> Result<CMatrix> {
        let dim = self.spec.dim();
        let mut u = DMatrix::identity(dim, dim);
        for (&c, &dt) in pulse.amplitudes().iter().zip(pulse.durations()) {
            u = expm(&(self.hamiltonian(c) * Complex64::new(0.0, -dt)))? * u;
        }
        Ok(u)
    }
}

/// Composes slot bundles in time order (`slots[0]` acts first).
///
/// With `P_i = U_{i-1}⋯U_0` and `S_i = U_{m-1}⋯U_{i+1}`:
/// `∂ᵢU = S_i ∂cU_i P_i` and
/// `∂ᵢ∂λU = (∂λS_i) ∂cU_i P_i + S_i ∂c∂λU_i P_i + S_i ∂cU_i (∂λP_i)`.
pub fn compose_slots(slots: &[SlotBundle]) -> PulseBundle {
    let m = slots.len();
    let dim = slots[0].u.nrows();
    let id = DMatrix::<Complex64>::identity(dim, dim);
    let zero = DMatrix::<Complex64>::zeros(dim, dim);

    let mut prefix = Vec::with_capacity(m + 1);
    let mut d_prefix = Vec::with_capacity(m + 1);
    prefix.push(id.clone());
    d_prefix.push(zero.clone());
    for s in slots {
        let p = prefix.last().unwrap();
        let dp = d_prefix.last().unwrap();
        let next_dp = &s.d_lambda * p + &s.u * dp;
        let next_p = &s.u * p;
        prefix.push(next_p);
        d_prefix.push(next_dp);
    }

    let mut suffix = vec![id; m];
    let mut d_suffix = vec![zero; m];
    for i in (0..m.saturating_sub(1)).rev() {
        let next = &slots[i + 1];
        suffix[i] = &suffix[i + 1] * &next.u;
        d_suffix[i] = &d_suffix[i + 1] * &next.u + &suffix[i + 1] * &next.d_lambda;
    }

    let mut d_control = Vec::with_capacity(m);
    let mut d_mixed = Vec::with_capacity(m);
    for (i, s) in slots.iter().enumerate() {
        let dc_p = &s.d_control * &prefix[i];
        d_control.push(&suffix[i] * &dc_p);
        let mixed = &d_suffix[i] * &dc_p
            + &suffix[i] * (&s.d_mixed * &prefix[i] + &s.d_control * &d_prefix[i]);
        d_mixed.push(mixed);
    }

    PulseBundle {
        u: prefix.pop().unwrap(),
        d_lambda: d_prefix.pop().unwrap(),
        d_control,
        d_mixed,
    }
}

/// Full-pulse bundle for `spec` at `λ`.
pub fn compose_pulse(pulse: &ControlPulse, spec: &ChainSpec, lambda: f64) -> Result<PulseBundle> {
    ChainPropagator::new(spec, lambda).compose(pulse)
}

/// Final state and its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolvedState {
    pub psi: CVector,
    pub d_lambda: CVector,
    pub d_control: Vec<CVector>,
    pub d_mixed: Vec<CVector>,
}

pub(crate) fn check_normalized(psi: &CVector) -> Result<()> {
    let norm = psi.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::Contract(format!(
            "state must be normalized, ‖ψ‖ = {norm}"
        )));
    }
    Ok(())
}

/// Applies every matrix of `bundle` to `psi0`.
pub fn evolve_state(bundle: &PulseBundle, psi0: &CVector) -> Result<EvolvedState> {
    check_normalized(psi0)?;
    if psi0.len() != bundle.u.ncols() {
        return Err(Error::Config(format!(
            "state has {} entries, propagator is {}x{}",
            psi0.len(),
            bundle.u.nrows(),
            bundle.u.ncols()
        )));
    }
    Ok(EvolvedState {
        psi: &bundle.u * psi0,
        d_lambda: &bundle.d_lambda * psi0,
        d_control: bundle.d_control.iter().map(|m| m * psi0).collect(),
        d_mixed: bundle.d_mixed.iter().map(|m| m * psi0).collect(),
    })
}

/// Site populations `|a_j(t)|²` sampled along a pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationTrace {
    /// Sample times, starting at 0 and ending at `T`.
    pub times: Vec<f64>,
    /// `populations[k][j]` is the population of `|j⟩` at `times[k]`.
    pub populations: Vec<Vec<f64>>,
    /// Amplitude of the slot containing each sample (the slot just finished
    /// for the final sample, the first slot at `t = 0`).
    pub amplitudes: Vec<f64>,
}

/// Evolves `psi0` slot by slot, sampling `samples_per_slot` times per slot.
pub fn population_trace(
    spec: &ChainSpec,
    pulse: &ControlPulse,
    lambda: f64,
    psi0: &CVector,
    samples_per_slot: usize,
) -> Result<PopulationTrace> {
    check_normalized(psi0)?;
    if samples_per_slot == 0 {
        return Err(Error::Config("samples_per_slot must be at least 1".into()));
    }
    let prop = ChainPropagator::new(spec, lambda);
    let populations_of = |psi: &CVector| psi.iter().map(|a| a.norm_sqr()).collect::<Vec<_>>();

    let mut psi = psi0.clone();
    let mut t = 0.0;
    let mut trace = PopulationTrace {
        times: vec![0.0],
        populations: vec![populations_of(&psi)],
        amplitudes: vec![pulse.amplitudes()[0]],
    };
    for (&c, &dt) in pulse.amplitudes().iter().zip(pulse.durations()) {
        let step = dt / samples_per_slot as f64;
        let u = expm(&(prop.hamiltonian(c) * Complex64::new(0.0, -step)))?;
        for _ in 0..samples_per_slot {
            psi = &u * psi;
            t += step;
            trace.times.push(t);
            trace.populations.push(populations_of(&psi));
            trace.amplitudes.push(c);
        }
    }
    Ok(trace)
}
