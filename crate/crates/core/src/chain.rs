//! Heisenberg chain with a controlled probe at site 1 and the unknown field at
//! site N, restricted to the zero/one-excitation sector.
//!
//! The full Hamiltonian is
//!
//! ```text
//! H = -(J/2) Σ_{j=1}^{N-1} σ^(j)·σ^(j+1) - c σ_z^(1) - λ σ_z^(N)
//! ```
//!
//! It conserves total σ_z, so a state built from the all-down state `|0⟩` and
//! the single flips `|j⟩` (spin `j` up, `1 ≤ j ≤ N`) never leaves the
//! `(N+1)`-dimensional span of these vectors. Every module uses the basis
//! ordering `[|0⟩, |1⟩, …, |N⟩]`.
//!
//! Units: ħ = 1, energies in units of J, times in units of 1/J.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{CMatrix, CVector};

/// Largest chain the brute-force `2^N` oracle will build.
pub const FULL_SPACE_MAX_SPINS: usize = 12;

/// Chain length and exchange coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    spins: usize,
    coupling: f64,
}

impl ChainSpec {
    pub fn new(spins: usize, coupling: f64) -> Result<Self> {
        if spins < 2 {
            return Err(Error::Config(format!(
                "chain needs at least 2 spins, got {spins}"
            )));
        }
        if !(coupling.is_finite() && coupling > 0.0) {
            return Err(Error::Config(format!(
                "coupling must be positive and finite, got {coupling}"
            )));
        }
        Ok(Self { spins, coupling })
    }

    /// Chain of `spins` sites with J = 1.
    pub fn unit(spins: usize) -> Result<Self> {
        Self::new(spins, 1.0)
    }

    pub fn spins(&self) -> usize {
        self.spins
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    /// Sector dimension `N + 1`.
    pub fn dim(&self) -> usize {
        self.spins + 1
    }

    pub fn basis(&self) -> SectorBasis {
        SectorBasis { spins: self.spins }
    }
}

/// The ordered basis `[|0⟩, |1⟩, …, |N⟩]` of the single-excitation sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectorBasis {
    spins: usize,
}

impl SectorBasis {
    pub fn dimension(&self) -> usize {
        self.spins + 1
    }

    /// Human-readable labels, `|0⟩` first.
    pub fn labels(&self) -> Vec<String> {
        (0..=self.spins).map(|j| format!("|{j}⟩")).collect()
    }

    /// Index of the sector state `|j⟩` in the `2^N` tensor-product basis.
    ///
    /// Site 1 is the leftmost tensor factor and each factor is ordered
    /// `(|↑⟩, |↓⟩)`, so a set bit means spin down.
    pub fn full_space_index(&self, label: usize) -> usize {
        let all_down = (1usize << self.spins) - 1;
        if label == 0 {
            all_down
        } else {
            all_down & !(1usize << (self.spins - label))
        }
    }
}

/// Sector Hamiltonian `H_{c,λ}` together with the field values it was built at.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorHamiltonian {
    pub matrix: CMatrix,
    pub control: f64,
    pub lambda: f64,
}

/// Builds `H_{c,λ}` in the sector basis.
///
/// Nonzero entries: `⟨j|H|j+1⟩ = -J` for `1 ≤ j ≤ N-1`, and the diagonal
///
/// ```text
/// d_0 = -(J/2)(N-1) + c + λ
/// d_1 = -(J/2)(N-3) - c + λ
/// d_j = -(J/2)(N-5) + c + λ      2 ≤ j ≤ N-1
/// d_N = -(J/2)(N-3) + c - λ
/// ```
///
/// For `N = 2` site 1 is never the last site, so `d_1` and `d_N` follow the
/// same rules with no middle block.
pub fn build_sector_hamiltonian(spec: &ChainSpec, control: f64, lambda: f64) -> SectorHamiltonian {
    let n = spec.spins();
    let j = spec.coupling();
    let nf = n as f64;
    let mut h = DMatrix::<Complex64>::zeros(n + 1, n + 1);

    h[(0, 0)] = Complex64::from(-0.5 * j * (nf - 1.0) + control + lambda);
    h[(1, 1)] = Complex64::from(-0.5 * j * (nf - 3.0) - control + lambda);
    for site in 2..n {
        h[(site, site)] = Complex64::from(-0.5 * j * (nf - 5.0) + control + lambda);
    }
    h[(n, n)] = Complex64::from(-0.5 * j * (nf - 3.0) + control - lambda);

    for site in 1..n {
        h[(site, site + 1)] = Complex64::from(-j);
        h[(site + 1, site)] = Complex64::from(-j);
    }

    SectorHamiltonian {
        matrix: h,
        control,
        lambda,
    }
}

/// `∂H/∂λ` and the control generator `H_ctrl = ∂H/∂c` in the sector basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Generators {
    pub d_lambda: CMatrix,
    pub control: CMatrix,
}

/// Both generators are diagonal: `∂λH = diag(1, …, 1, -1)` (the `-1` at `|N⟩`)
/// and `H_ctrl = diag(1, -1, 1, …, 1)` (the `-1` at `|1⟩`), which is `-σ̃_z`.
pub fn derivative_generators(spec: &ChainSpec) -> Generators {
    let dim = spec.dim();
    let mut d_lambda = DMatrix::<Complex64>::identity(dim, dim);
    d_lambda[(dim - 1, dim - 1)] = Complex64::from(-1.0);
    let mut control = DMatrix::<Complex64>::identity(dim, dim);
    control[(1, 1)] = Complex64::from(-1.0);
    Generators { d_lambda, control }
}

/// Probe Pauli operators embedded in the sector as a direct sum.
///
/// `σ̃_x = |0⟩⟨1| + |1⟩⟨0|`, `σ̃_y = i|1⟩⟨0| - i|0⟩⟨1|` and
/// `σ̃_z = |1⟩⟨1| - Σ_{j≠1} |j⟩⟨j|`.
///
/// Phase convention: `⟨1|σ̃_y|0⟩ = +i`, so a state with amplitudes
/// `(a_0, a_1, …)` has `u_y = 2 Im(a_1 conj(a_0))`. The QFI does not depend on
/// this choice but every Bloch vector in the crate uses it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeEmbedding {
    pub x: CMatrix,
    pub y: CMatrix,
    pub z: CMatrix,
}

impl ProbeEmbedding {
    pub fn new(dim: usize) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);

        let mut x = DMatrix::from_element(dim, dim, zero);
        x[(0, 1)] = one;
        x[(1, 0)] = one;

        let mut y = DMatrix::from_element(dim, dim, zero);
        y[(1, 0)] = i;
        y[(0, 1)] = -i;

        let mut z = DMatrix::from_diagonal_element(dim, dim, -one);
        z[(1, 1)] = one;

        Self { x, y, z }
    }

    pub fn for_chain(spec: &ChainSpec) -> Self {
        Self::new(spec.dim())
    }

    pub fn components(&self) -> [&CMatrix; 3] {
        [&self.x, &self.y, &self.z]
    }
}

/// The sector basis vector `|label⟩`.
pub fn sector_state(spec: &ChainSpec, label: usize) -> Result<CVector> {
    if label > spec.spins() {
        return Err(Error::Config(format!(
            "basis label {label} outside sector of {} spins",
            spec.spins()
        )));
    }
    let mut v = DVector::zeros(spec.dim());
    v[label] = Complex64::new(1.0, 0.0);
    Ok(v)
}

/// `cos(θ/2)|0⟩ + e^{iφ} sin(θ/2)|1⟩`: the probe in a pure state, the rest of the chain down.
pub fn probe_state(spec: &ChainSpec, theta: f64, phi: f64) -> CVector {
    let mut v = DVector::zeros(spec.dim());
    v[0] = Complex64::new((0.5 * theta).cos(), 0.0);
    v[1] = Complex64::from_polar((0.5 * theta).sin(), phi);
    v
}

fn pauli(axis: usize) -> CMatrix {
    let z = Complex64::new(0.0, 0.0);
    let o = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    // Basis (|↑⟩, |↓⟩).
    match axis {
        0 => DMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        1 => DMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        _ => DMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
    }
}

/// `I ⊗ … ⊗ op ⊗ … ⊗ I`, with `op` acting on the consecutive sites starting at
/// `first_site` (1-based) and spanning `op.nrows() = 2^k` dimensions.
fn embed(op: &CMatrix, first_site: usize, spins: usize) -> CMatrix {
    let span = op.nrows().trailing_zeros() as usize;
    let left = 1usize << (first_site - 1);
    let right = 1usize << (spins + 1 - first_site - span);
    let l = DMatrix::<Complex64>::identity(left, left);
    let r = DMatrix::<Complex64>::identity(right, right);
    l.kronecker(op).kronecker(&r)
}

/// Literal tensor-product construction of `H_{c,λ}` on all `2^N` states.
///
/// Test oracle for [`build_sector_hamiltonian`]; refuses `N > 12`.
pub fn build_full_hamiltonian_oracle(spec: &ChainSpec, control: f64, lambda: f64) -> Result<CMatrix> {
    let n = spec.spins();
    if n > FULL_SPACE_MAX_SPINS {
        return Err(Error::Resource(format!(
            "full-space oracle limited to {FULL_SPACE_MAX_SPINS} spins, got {n}"
        )));
    }
    let dim = 1usize << n;
    let j = spec.coupling();
    let mut h = DMatrix::<Complex64>::zeros(dim, dim);

    for axis in 0..3 {
        let p = pauli(axis);
        let pair = p.kronecker(&p);
        for site in 1..n {
            h -= embed(&pair, site, n) * Complex64::from(0.5 * j);
        }
    }
    let sz = pauli(2);
    h -= embed(&sz, 1, n) * Complex64::from(control);
    h -= embed(&sz, n, n) * Complex64::from(lambda);
    Ok(h)
}

/// Total `Σ_j σ_z^(j)` on the `2^N` space.
pub fn total_sz_full(spins: usize) -> CMatrix {
    let sz = pauli(2);
    let dim = 1usize << spins;
    (1..=spins).fold(DMatrix::zeros(dim, dim), |acc, site| acc + embed(&sz, site, spins))
}

/// Restricts a `2^N` operator to the sector basis.
pub fn project_onto_sector(spec: &ChainSpec, full: &CMatrix) -> CMatrix {
    let basis = spec.basis();
    let dim = spec.dim();
    DMatrix::from_fn(dim, dim, |r, c| {
        full[(basis.full_space_index(r), basis.full_space_index(c))]
    })
}
