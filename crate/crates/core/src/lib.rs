//! Control-enhanced estimation of a remote field through a single probe qubit.
//!
//! A Heisenberg chain of `N` spins carries an unknown field `λ` on its last
//! site. Only the first spin (the probe) can be driven, by a piecewise-constant
//! field `c(t)`, and measured. The crate
//!
//! * builds the chain Hamiltonian in the single-excitation sector ([`chain`]),
//! * propagates piecewise-constant pulses with exact first and mixed second
//!   derivatives of every slot propagator ([`propagator`], [`expm`]),
//! * evaluates the probe's quantum Fisher information and its pulse gradient
//!   ([`qfi`]),
//! * maximizes the QFI over pulses ([`optimizer`]),
//! * runs the adaptive SLD measurement loop ([`estimation`]),
//! * and provides closed-form two-spin results used as oracles ([`oracles`]).

pub mod chain;
pub mod error;
pub mod estimation;
pub mod expm;
pub mod optimizer;
pub mod oracles;
pub mod propagator;
pub mod qfi;
pub mod rng;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub use chain::{ChainSpec, ProbeEmbedding, SectorHamiltonian};
pub use error::{Error, Result};
pub use estimation::{EstimationTrace, ProtocolConfig, SldMeasurement};
pub use optimizer::{OptimizationResult, OptimizerConfig};
pub use propagator::{ControlPulse, PulseBundle, SlotBundle};
pub use qfi::{ProbeSurface, QfiValue};
