//! Seeded random test families: diagonalizable sectorial matrices and
//! simultaneously diagonalizable pairs sharing one eigenbasis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{CMatrix, CVector, Lu};
use num_complex::Complex64;

pub type FamilyRng = ChaCha8Rng;

pub fn rng(seed: u64) -> FamilyRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Eigenvalues of the first member: `Re` in `[0.15, 3]`, `|arg| <= atan(0.7)`.
/// Such matrices certify at angle `3π/4`.
pub fn steep_eigenvalue(rng: &mut impl Rng) -> Complex64 {
    let re = rng.random_range(0.15..3.0);
    Complex64::new(re, rng.random_range(-0.7..0.7) * re)
}

/// Eigenvalues of the second member: `Re` in `[0.15, 3]`, `|Im| <= 2`.
/// Such matrices certify at angle `π/3`.
pub fn wide_eigenvalue(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(rng.random_range(0.15..3.0), rng.random_range(-2.0..2.0))
}

pub fn complex(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

pub fn vector(rng: &mut impl Rng, n: usize) -> CVector {
    CVector::new((0..n).map(|_| complex(rng)).collect()).expect("finite entries")
}

/// A well-conditioned eigenbasis `I + R/(2n)` with its inverse.
pub struct Basis {
    pub vectors: CMatrix,
    pub inverse: CMatrix,
}

impl Basis {
    pub fn random(rng: &mut impl Rng, n: usize) -> Self {
        let scale = 0.5 / n as f64;
        let entries = (0..n * n)
            .map(|k| {
                let d = if k / n == k % n { 1.0 } else { 0.0 };
                Complex64::new(d, 0.0) + complex(rng) * scale
            })
            .collect();
        let vectors = CMatrix::new(n, entries).expect("finite entries");
        let inverse = Lu::factor(&vectors, Complex64::new(0.0, 0.0))
            .expect("diagonally dominant")
            .inverse();
        Self { vectors, inverse }
    }

    pub fn assemble(&self, eigenvalues: &[Complex64]) -> CMatrix {
        let n = eigenvalues.len();
        let v = self.vectors.as_nalgebra();
        let d = nalgebra::DMatrix::from_fn(n, n, |i, j| if i == j { eigenvalues[i] } else { Complex64::new(0.0, 0.0) });
        CMatrix::from_nalgebra(v * d * self.inverse.as_nalgebra()).expect("finite product")
    }
}

pub fn sectorial_matrix(rng: &mut impl Rng, n: usize) -> CMatrix {
    let basis = Basis::random(rng, n);
    let eig: Vec<Complex64> = (0..n).map(|_| steep_eigenvalue(rng)).collect();
    basis.assemble(&eig)
}

/// `(A, B)` with `A` of the steep and `B` of the wide eigenvalue kind.
pub fn commuting_pair(rng: &mut impl Rng, n: usize) -> (CMatrix, CMatrix) {
    let basis = Basis::random(rng, n);
    let ea: Vec<Complex64> = (0..n).map(|_| steep_eigenvalue(rng)).collect();
    let eb: Vec<Complex64> = (0..n).map(|_| wide_eigenvalue(rng)).collect();
    (basis.assemble(&ea), basis.assemble(&eb))
}
