use nalgebra::linalg::Schur;
use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{min_singular_value, op_norm, CMatrix, Lu, ONE, ZERO};
use crate::error::{Error, Result};

/// Eigenvector-matrix condition numbers above this are treated as defective.
pub const DIAGONALIZABILITY_CAP: f64 = 1e8;

/// Spectral decomposition `A = V diag(lambda) V^{-1}`.
#[derive(Clone, Debug)]
pub struct EigOracle {
    pub eigenvalues: Vec<Complex64>,
    pub vectors: CMatrix,
    pub inverse_vectors: CMatrix,
    pub condition: f64,
}

impl EigOracle {
    /// `V diag(f(lambda_i)) V^{-1}`.
    pub fn map<F: Fn(Complex64) -> Complex64>(&self, f: F) -> CMatrix {
        let d: Vec<Complex64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mid = CMatrix::from_diagonal(&d);
        &(&self.vectors * &mid) * &self.inverse_vectors
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.map(|l| l)
    }
}

fn schur(a: &CMatrix) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let s = Schur::try_new(a.as_nalgebra().clone(), f64::EPSILON, 10_000)
        .ok_or(Error::EigenFailure)?;
    Ok(s.unpack())
}

/// Eigenvalues from the complex Schur form (no diagonalizability needed).
pub fn eigenvalues(a: &CMatrix) -> Result<Vec<Complex64>> {
    let (_, t) = schur(a)?;
    Ok(t.diagonal().iter().copied().collect())
}

pub fn eig_decompose(a: &CMatrix) -> Result<EigOracle> {
    let n = a.dim();
    let (q, t) = schur(a)?;
    let tnorm = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * tnorm;

    // eigenvectors of the triangular factor by back substitution
    let mut x = DMatrix::<Complex64>::zeros(n, n);
    for k in 0..n {
        let lk = t[(k, k)];
        x[(k, k)] = ONE;
        for j in (0..k).rev() {
            let mut s = ZERO;
            for l in j + 1..=k {
                s += t[(j, l)] * x[(l, k)];
            }
            let mut d = t[(j, j)] - lk;
            if d.norm() < small {
                d = Complex64::new(small, 0.0);
            }
            x[(j, k)] = -s / d;
        }
    }
    let mut v = &q * &x;
    for mut col in v.column_iter_mut() {
        let nrm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm > 0.0 && nrm.is_finite() {
            col /= Complex64::new(nrm, 0.0);
        }
    }
    if v.iter().any(|z| !z.is_finite()) {
        return Err(Error::NotDiagonalizable {
            condition: f64::INFINITY,
            cap: DIAGONALIZABILITY_CAP,
        });
    }
    let vectors = CMatrix::wrap(v);
    let smin = min_singular_value(&vectors);
    let condition = if smin > 0.0 {
        op_norm(&vectors) / smin
    } else {
        f64::INFINITY
    };
    if !(condition <= DIAGONALIZABILITY_CAP) {
        return Err(Error::NotDiagonalizable {
            condition,
            cap: DIAGONALIZABILITY_CAP,
        });
    }
    let inverse_vectors = Lu::factor(&vectors, ZERO)?.inverse();
    Ok(EigOracle {
        eigenvalues: t.diagonal().iter().copied().collect(),
        vectors,
        inverse_vectors,
        condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_re(v: &[Complex64]) -> Vec<f64> {
        let mut r: Vec<f64> = v.iter().map(|z| z.re).collect();
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        r
    }

    #[test]
    fn diagonal_matrix() {
        let a = CMatrix::from_real_diagonal(&[1.0, 2.0]);
        let e = eig_decompose(&a).unwrap();
        assert_eq!(sorted_re(&e.eigenvalues), vec![1.0, 2.0]);
        assert!(e.condition < 1.0 + 1e-12);
        assert!(e.reconstruct().max_abs_diff(&a) < 1e-14);
    }

    #[test]
    fn symmetric_swap() {
        let a = CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let e = eig_decompose(&a).unwrap();
        let ev = sorted_re(&e.eigenvalues);
        assert!((ev[0] + 1.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
        assert!(e.reconstruct().max_abs_diff(&a) < 1e-14);
    }

    #[test]
    fn jordan_block_is_rejected() {
        let a = CMatrix::from_real_rows(&[&[2.0, 1.0], &[0.0, 2.0]]).unwrap();
        assert!(matches!(
            eig_decompose(&a),
            Err(Error::NotDiagonalizable { .. })
        ));
        // eigenvalues alone are still available
        let ev = eigenvalues(&a).unwrap();
        assert!(ev.iter().all(|l| (l - Complex64::new(2.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn non_normal_reconstruction() {
        let a = CMatrix::new(
            3,
            vec![
                Complex64::new(1.0, 0.5),
                Complex64::new(2.0, 0.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(3.0, 0.0),
                Complex64::new(1.0, 1.0),
                Complex64::new(0.5, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(-2.0, 0.25),
            ],
        )
        .unwrap();
        let e = eig_decompose(&a).unwrap();
        let tol = e.condition * 1e-13 * a.op_norm();
        assert!(e.reconstruct().max_abs_diff(&a) < tol);
    }
}
