//! Matrix exponential by scaling and squaring with diagonal Padé approximants
//! (Higham 2005, "The scaling and squaring method for the matrix exponential
//! revisited").
//!
//! The algorithm is written once over [`PadeOperand`] and instantiated for
//! dense complex matrices and for [`MatrixJet`], the block-lower-triangular
//! algebra that carries a matrix together with its first and mixed second
//! derivatives in two parameters.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::CMatrix;

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068;
const THETA_13: f64 = 5.371920351148152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Operations the Padé scheme needs from a matrix-like type.
pub trait PadeOperand: Clone {
    fn identity_like(&self) -> Self;
    fn product(&self, rhs: &Self) -> Self;
    /// `self += alpha * x`
    fn add_scaled(&mut self, alpha: f64, x: &Self);
    fn scaled(&self, alpha: f64) -> Self;
    /// `q⁻¹ p`, or `None` when `q` is singular.
    fn solve(q: &Self, p: &Self) -> Option<Self>;
    /// Induced 1-norm of the matrix this value represents.
    fn norm1(&self) -> f64;
    fn is_finite(&self) -> bool;
}

impl PadeOperand for CMatrix {
    fn identity_like(&self) -> Self {
        DMatrix::identity(self.nrows(), self.ncols())
    }

    fn product(&self, rhs: &Self) -> Self {
        self * rhs
    }

    fn add_scaled(&mut self, alpha: f64, x: &Self) {
        *self += x * Complex64::from(alpha);
    }

    fn scaled(&self, alpha: f64) -> Self {
        self * Complex64::from(alpha)
    }

    fn solve(q: &Self, p: &Self) -> Option<Self> {
        q.clone().lu().solve(p)
    }

    fn norm1(&self) -> f64 {
        column_abs_sums(self).into_iter().fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

fn column_abs_sums(m: &CMatrix) -> Vec<f64> {
    m.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum())
        .collect()
}

/// `value + ε_a·d_a + ε_b·d_b + ε_a ε_b·d_ab` with nilpotent, central `ε_a`, `ε_b`.
///
/// Equivalent to the dense block matrix
///
/// ```text
/// ⎡ value  0     0     0     ⎤
/// ⎢ d_a    value 0     0     ⎥
/// ⎢ d_b    0     value 0     ⎥
/// ⎣ d_ab   d_b   d_a   value ⎦
/// ```
///
/// which is closed under products and inverses. A product costs nine block
/// products instead of sixty-four, and the Padé approximant computed in this
/// algebra is exactly the Padé approximant of the dense block matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixJet {
    pub value: CMatrix,
    pub d_a: CMatrix,
    pub d_b: CMatrix,
    pub d_ab: CMatrix,
}

impl MatrixJet {
    pub fn new(value: CMatrix, d_a: CMatrix, d_b: CMatrix, d_ab: CMatrix) -> Self {
        Self {
            value,
            d_a,
            d_b,
            d_ab,
        }
    }

    pub fn dim(&self) -> usize {
        self.value.nrows()
    }

    /// Dense `4n × 4n` block matrix.
    pub fn to_dense(&self) -> CMatrix {
        let n = self.dim();
        let mut out = DMatrix::zeros(4 * n, 4 * n);
        let place = |out: &mut CMatrix, r: usize, c: usize, m: &CMatrix| {
            out.view_mut((r * n, c * n), (n, n)).copy_from(m);
        };
        for k in 0..4 {
            place(&mut out, k, k, &self.value);
        }
        place(&mut out, 1, 0, &self.d_a);
        place(&mut out, 2, 0, &self.d_b);
        place(&mut out, 3, 0, &self.d_ab);
        place(&mut out, 3, 1, &self.d_b);
        place(&mut out, 3, 2, &self.d_a);
        out
    }
}

impl PadeOperand for MatrixJet {
    fn identity_like(&self) -> Self {
        let n = self.dim();
        let z = DMatrix::zeros(n, n);
        Self::new(DMatrix::identity(n, n), z.clone(), z.clone(), z)
    }

    fn product(&self, rhs: &Self) -> Self {
        let value = &self.value * &rhs.value;
        let d_a = &self.d_a * &rhs.value + &self.value * &rhs.d_a;
        let d_b = &self.d_b * &rhs.value + &self.value * &rhs.d_b;
        let d_ab = &self.d_ab * &rhs.value
            + &self.d_a * &rhs.d_b
            + &self.d_b * &rhs.d_a
            + &self.value * &rhs.d_ab;
        Self::new(value, d_a, d_b, d_ab)
    }

    fn add_scaled(&mut self, alpha: f64, x: &Self) {
        self.value.add_scaled(alpha, &x.value);
        self.d_a.add_scaled(alpha, &x.d_a);
        self.d_b.add_scaled(alpha, &x.d_b);
        self.d_ab.add_scaled(alpha, &x.d_ab);
    }

    fn scaled(&self, alpha: f64) -> Self {
        Self::new(
            self.value.scaled(alpha),
            self.d_a.scaled(alpha),
            self.d_b.scaled(alpha),
            self.d_ab.scaled(alpha),
        )
    }

    fn solve(q: &Self, p: &Self) -> Option<Self> {
        // Block forward substitution.
        let lu = q.value.clone().lu();
        let value = lu.solve(&p.value)?;
        let d_a = lu.solve(&(&p.d_a - &q.d_a * &value))?;
        let d_b = lu.solve(&(&p.d_b - &q.d_b * &value))?;
        let rhs = &p.d_ab - &q.d_ab * &value - &q.d_a * &d_b - &q.d_b * &d_a;
        let d_ab = lu.solve(&rhs)?;
        Some(Self::new(value, d_a, d_b, d_ab))
    }

    fn norm1(&self) -> f64 {
        let v = column_abs_sums(&self.value);
        let a = column_abs_sums(&self.d_a);
        let b = column_abs_sums(&self.d_b);
        let ab = column_abs_sums(&self.d_ab);
        (0..v.len())
            .map(|k| {
                let first = v[k] + a[k] + b[k] + ab[k];
                let second = v[k] + b[k];
                let third = v[k] + a[k];
                first.max(second).max(third)
            })
            .fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.d_a.is_finite() && self.d_b.is_finite() && self.d_ab.is_finite()
    }
}

/// `value + ε·d` with `ε² = 0`; the dense form is `[[value, 0], [d, value]]`.
///
/// Used when only the λ-derivative of a propagator is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct DualMatrix {
    pub value: CMatrix,
    pub d: CMatrix,
}

impl DualMatrix {
    pub fn new(value: CMatrix, d: CMatrix) -> Self {
        Self { value, d }
    }
}

impl PadeOperand for DualMatrix {
    fn identity_like(&self) -> Self {
        let n = self.value.nrows();
        Self::new(DMatrix::identity(n, n), DMatrix::zeros(n, n))
    }

    fn product(&self, rhs: &Self) -> Self {
        Self::new(
            &self.value * &rhs.value,
            &self.d * &rhs.value + &self.value * &rhs.d,
        )
    }

    fn add_scaled(&mut self, alpha: f64, x: &Self) {
        self.value.add_scaled(alpha, &x.value);
        self.d.add_scaled(alpha, &x.d);
    }

    fn scaled(&self, alpha: f64) -> Self {
        Self::new(self.value.scaled(alpha), self.d.scaled(alpha))
    }

    fn solve(q: &Self, p: &Self) -> Option<Self> {
        let lu = q.value.clone().lu();
        let value = lu.solve(&p.value)?;
        let d = lu.solve(&(&p.d - &q.d * &value))?;
        Some(Self::new(value, d))
    }

    fn norm1(&self) -> f64 {
        let v = column_abs_sums(&self.value);
        let d = column_abs_sums(&self.d);
        v.iter().zip(&d).map(|(a, b)| a + b).fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.d.is_finite()
    }
}

/// `Σ coeffs[k] · powers[k]` plus `identity_coeff · I`.
fn combine<T: PadeOperand>(identity: &T, identity_coeff: f64, terms: &[(f64, &T)]) -> T {
    let mut acc = identity.scaled(identity_coeff);
    for &(c, m) in terms {
        acc.add_scaled(c, m);
    }
    acc
}

/// Returns `(U, V)` such that `r(A) = (V - U)⁻¹ (V + U)`.
fn pade_uv<T: PadeOperand>(a: &T, degree: usize) -> (T, T) {
    let id = a.identity_like();
    let a2 = a.product(a);
    match degree {
        3 => {
            let b = &B3;
            let u = a.product(&combine(&id, b[1], &[(b[3], &a2)]));
            let v = combine(&id, b[0], &[(b[2], &a2)]);
            (u, v)
        }
        5 => {
            let b = &B5;
            let a4 = a2.product(&a2);
            let u = a.product(&combine(&id, b[1], &[(b[3], &a2), (b[5], &a4)]));
            let v = combine(&id, b[0], &[(b[2], &a2), (b[4], &a4)]);
            (u, v)
        }
        7 => {
            let b = &B7;
            let a4 = a2.product(&a2);
            let a6 = a4.product(&a2);
            let u = a.product(&combine(&id, b[1], &[(b[3], &a2), (b[5], &a4), (b[7], &a6)]));
            let v = combine(&id, b[0], &[(b[2], &a2), (b[4], &a4), (b[6], &a6)]);
            (u, v)
        }
        9 => {
            let b = &B9;
            let a4 = a2.product(&a2);
            let a6 = a4.product(&a2);
            let a8 = a6.product(&a2);
            let u = a.product(&combine(
                &id,
                b[1],
                &[(b[3], &a2), (b[5], &a4), (b[7], &a6), (b[9], &a8)],
            ));
            let v = combine(&id, b[0], &[(b[2], &a2), (b[4], &a4), (b[6], &a6), (b[8], &a8)]);
            (u, v)
        }
        _ => {
            let b = &B13;
            let a4 = a2.product(&a2);
            let a6 = a4.product(&a2);
            let zero = id.scaled(0.0);
            let inner_u = a6.product(&combine(&zero, 0.0, &[(b[13], &a6), (b[11], &a4), (b[9], &a2)]));
            let u = a.product(&combine(
                &id,
                b[1],
                &[(1.0, &inner_u), (b[7], &a6), (b[5], &a4), (b[3], &a2)],
            ));
            let inner_v = a6.product(&combine(&zero, 0.0, &[(b[12], &a6), (b[10], &a4), (b[8], &a2)]));
            let v = combine(
                &id,
                b[0],
                &[(1.0, &inner_v), (b[6], &a6), (b[4], &a4), (b[2], &a2)],
            );
            (u, v)
        }
    }
}

/// `exp(a)` for any [`PadeOperand`].
pub fn pade_expm<T: PadeOperand>(a: &T) -> Result<T> {
    if !a.is_finite() {
        return Err(Error::Numeric("matrix exponential of non-finite input".into()));
    }
    let norm = a.norm1();
    let (degree, squarings) = if norm <= THETA_3 {
        (3, 0)
    } else if norm <= THETA_5 {
        (5, 0)
    } else if norm <= THETA_7 {
        (7, 0)
    } else if norm <= THETA_9 {
        (9, 0)
    } else {
        (13, (norm / THETA_13).log2().ceil().max(0.0) as i32)
    };
    let scaled;
    let arg = if squarings > 0 {
        scaled = a.scaled(2f64.powi(-squarings));
        &scaled
    } else {
        a
    };

    let (u, v) = pade_uv(arg, degree);
    let mut numer = v.clone();
    numer.add_scaled(1.0, &u);
    let mut denom = v;
    denom.add_scaled(-1.0, &u);
    let mut result = T::solve(&denom, &numer)
        .ok_or_else(|| Error::Numeric("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        result = result.product(&result);
    }
    if !result.is_finite() {
        return Err(Error::Numeric("matrix exponential overflowed".into()));
    }
    Ok(result)
}

/// Dense complex matrix exponential.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    if a.nrows() != a.ncols() {
        return Err(Error::Config(format!(
            "matrix exponential of non-square {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    pade_expm(a)
}

/// `exp(-i H t)` for Hermitian `H`.
pub fn unitary_propagator(h: &CMatrix, t: f64) -> Result<CMatrix> {
    expm(&(h * Complex64::new(0.0, -t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMatrix {
        DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
        })
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMatrix {
        let a = random_matrix(rng, n, scale);
        (&a + a.adjoint()) * Complex64::from(0.5)
    }

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `V exp(-i E t) V†` from the Hermitian eigendecomposition.
    fn spectral_propagator(h: &CMatrix, t: f64) -> CMatrix {
        let eig = h.clone().symmetric_eigen();
        let v = &eig.eigenvectors;
        let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| Complex64::new(0.0, -e * t).exp()));
        v * phases * v.adjoint()
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let z = DMatrix::<Complex64>::zeros(4, 4);
        let e = expm(&z).unwrap();
        assert_eq!(e, DMatrix::identity(4, 4));
    }

    #[test]
    fn diagonal_matrix() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(0.3, 1.0),
            Complex64::new(-2.0, 0.0),
            Complex64::new(5.0, -3.0),
        ]));
        let e = expm(&d).unwrap();
        for k in 0..3 {
            let expected = d[(k, k)].exp();
            assert!((e[(k, k)] - expected).norm() < 1e-12 * expected.norm());
        }
    }

    #[test]
    fn nilpotent_matrix_is_a_finite_series() {
        let mut n = DMatrix::<Complex64>::zeros(3, 3);
        n[(0, 1)] = Complex64::from(2.0);
        n[(1, 2)] = Complex64::from(3.0);
        let e = expm(&n).unwrap();
        assert!((e[(0, 2)] - Complex64::from(3.0)).norm() < 1e-13);
        assert!((e[(0, 1)] - Complex64::from(2.0)).norm() < 1e-13);
    }

    #[test]
    fn matches_spectral_propagator_across_padé_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &scale in &[1e-3, 0.05, 0.2, 0.4, 1.0, 4.0, 30.0] {
            for _ in 0..5 {
                let h = random_hermitian(&mut rng, 6, scale);
                let got = unitary_propagator(&h, 1.0).unwrap();
                let want = spectral_propagator(&h, 1.0);
                assert!(max_abs(&(got - want)) < 1e-11, "scale {scale}");
            }
        }
    }

    #[test]
    fn rejects_non_finite_and_non_square() {
        let mut m = DMatrix::<Complex64>::zeros(2, 2);
        m[(0, 0)] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(expm(&m), Err(Error::Numeric(_))));
        assert!(matches!(expm(&DMatrix::zeros(2, 3)), Err(Error::Config(_))));
    }

    #[test]
    fn jet_algebra_matches_dense_block_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = MatrixJet::new(
            random_matrix(&mut rng, 3, 1.0),
            random_matrix(&mut rng, 3, 1.0),
            random_matrix(&mut rng, 3, 1.0),
            random_matrix(&mut rng, 3, 1.0),
        );
        let y = MatrixJet::new(
            random_matrix(&mut rng, 3, 1.0) + DMatrix::identity(3, 3) * Complex64::from(4.0),
            random_matrix(&mut rng, 3, 1.0),
            random_matrix(&mut rng, 3, 1.0),
            random_matrix(&mut rng, 3, 1.0),
        );
        let prod = x.product(&y).to_dense();
        assert!(max_abs(&(prod - x.to_dense() * y.to_dense())) < 1e-12);

        let solved = MatrixJet::solve(&y, &x).unwrap().to_dense();
        let dense = y.to_dense().lu().solve(&x.to_dense()).unwrap();
        assert!(max_abs(&(solved - dense)) < 1e-12);

        assert!((x.norm1() - x.to_dense().norm1()).abs() < 1e-12);
    }

    #[test]
    fn dual_exponential_matches_jet_leading_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (v, a, b) = (
            random_matrix(&mut rng, 3, 1.5),
            random_matrix(&mut rng, 3, 1.5),
            random_matrix(&mut rng, 3, 1.5),
        );
        let jet = pade_expm(&MatrixJet::new(v.clone(), a.clone(), b, DMatrix::zeros(3, 3))).unwrap();
        let dual = pade_expm(&DualMatrix::new(v, a)).unwrap();
        assert!(max_abs(&(jet.value - dual.value)) < 1e-12);
        assert!(max_abs(&(jet.d_a - dual.d)) < 1e-12);
    }

    #[test]
    fn jet_exponential_matches_dense_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &scale in &[0.01, 0.3, 2.0, 10.0] {
            let jet = MatrixJet::new(
                random_matrix(&mut rng, 4, scale),
                random_matrix(&mut rng, 4, scale),
                random_matrix(&mut rng, 4, scale),
                DMatrix::zeros(4, 4),
            );
            let e_jet = pade_expm(&jet).unwrap().to_dense();
            let e_dense = expm(&jet.to_dense()).unwrap();
            let rel = max_abs(&(&e_jet - &e_dense)) / max_abs(&e_dense);
            assert!(rel < 1e-12, "scale {scale}: {rel:e}");
        }
    }
}
