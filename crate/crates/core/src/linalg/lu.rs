use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{CMatrix, CVector, ZERO};
use crate::error::{Error, Result};

/// LU factorization with partial pivoting of `A + zI`.
///
/// A pivot below `n * eps * ||A + zI||_inf` is reported as a singular shift.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: DMatrix<Complex64>,
    pivots: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &CMatrix, shift: Complex64) -> Result<Self> {
        let m = a.shifted(shift);
        let n = m.dim();
        let threshold = n as f64 * f64::EPSILON * m.inf_norm();
        let mut lu = m.into_nalgebra();
        let mut pivots = Vec::with_capacity(n);

        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].norm();
            for i in k + 1..n {
                let v = lu[(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= threshold || best == 0.0 {
                return Err(Error::SingularShift {
                    shift,
                    pivot: best,
                    threshold,
                });
            }
            pivots.push(p);
            if p != k {
                lu.swap_rows(p, k);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                if factor != ZERO {
                    for j in k + 1..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= factor * u;
                    }
                }
            }
        }
        Ok(Self { lu, pivots })
    }

    pub fn dim(&self) -> usize {
        self.pivots.len()
    }

    fn solve_in_place(&self, x: &mut [Complex64]) {
        let n = self.dim();
        for (k, &p) in self.pivots.iter().enumerate() {
            if p != k {
                x.swap(k, p);
            }
        }
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
    }

    pub fn solve(&self, y: &CVector) -> Result<CVector> {
        if y.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: y.dim(),
            });
        }
        let mut x = y.entries().to_vec();
        self.solve_in_place(&mut x);
        Ok(CVector::wrap(DVector::from_vec(x)))
    }

    /// Solves for a raw slice; used on hot paths that already own their buffers.
    pub fn solve_slice(&self, x: &mut [Complex64]) {
        assert_eq!(x.len(), self.dim());
        self.solve_in_place(x);
    }

    pub fn solve_matrix(&self, rhs: &CMatrix) -> CMatrix {
        let n = self.dim();
        let mut out = rhs.as_nalgebra().clone();
        let mut col = vec![ZERO; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = out[(i, j)];
            }
            self.solve_in_place(&mut col);
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        CMatrix::wrap(out)
    }

    pub fn inverse(&self) -> CMatrix {
        self.solve_matrix(&CMatrix::identity(self.dim()))
    }
}

/// Computes `(A + zI)^{-1} y`.
pub fn solve_shifted(a: &CMatrix, z: Complex64, y: &CVector) -> Result<CVector> {
    Lu::factor(a, z)?.solve(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn scalar_and_diagonal_solves() {
        let a = CMatrix::from_real_diagonal(&[1.0]);
        let x = solve_shifted(&a, c(1.0), &CVector::from_real(&[1.0])).unwrap();
        assert!((x.get(0) - c(0.5)).norm() < 1e-15);

        let a = CMatrix::from_real_diagonal(&[1.0, 2.0]);
        let x = solve_shifted(&a, c(0.0), &CVector::from_real(&[1.0, 1.0])).unwrap();
        assert!((x.get(0) - c(1.0)).norm() < 1e-15);
        assert!((x.get(1) - c(0.5)).norm() < 1e-15);
    }

    #[test]
    fn triangular_solve_matches_hand_solution() {
        // [[3,1],[0,3]] u = (1,1): u2 = 1/3, u1 = (1 - 1/3)/3 = 2/9
        let a = CMatrix::from_real_rows(&[&[2.0, 1.0], &[0.0, 2.0]]).unwrap();
        let y = CVector::from_real(&[1.0, 1.0]);
        let x = solve_shifted(&a, c(1.0), &y).unwrap();
        assert!((x.get(0) - c(2.0 / 9.0)).norm() < 1e-15);
        assert!((x.get(1) - c(1.0 / 3.0)).norm() < 1e-15);
        let r = &a.shifted(c(1.0)).apply(&x) - &y;
        assert!(r.norm() <= 1e-14 * y.norm());
    }

    #[test]
    fn singular_shift_is_reported() {
        let a = CMatrix::from_real_diagonal(&[1.0, 2.0]);
        let err = solve_shifted(&a, c(-2.0), &CVector::from_real(&[1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::SingularShift { .. }));
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let lu = Lu::factor(&a, c(0.0)).unwrap();
        let inv = lu.inverse();
        assert!(inv.max_abs_diff(&a) < 1e-15);
    }
}
