use num_complex::Complex64;

use super::{eig_decompose, CMatrix};

/// Eigenvector conditions above this switch the oracle to scaling and squaring.
const EIG_ROUTE_CONDITION: f64 = 1e3;

/// `e^{-tA}`, via the eigendecomposition when it is well conditioned and
/// Taylor scaling-and-squaring otherwise.
pub fn expm_oracle(a: &CMatrix, t: f64) -> CMatrix {
    if t == 0.0 {
        return CMatrix::identity(a.dim());
    }
    if let Ok(e) = eig_decompose(a) {
        if e.condition <= EIG_ROUTE_CONDITION {
            return e.map(|l| (-t * l).exp());
        }
    }
    taylor_scaling_squaring(&a.scale(Complex64::new(-t, 0.0)))
}

fn taylor_scaling_squaring(m: &CMatrix) -> CMatrix {
    let n = m.dim();
    let norm1 = m.inf_norm().max(m.adjoint().inf_norm());
    let squarings = if norm1 > 0.25 {
        (norm1 / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m.scale(Complex64::new(2f64.powi(-squarings), 0.0));
    let mut sum = CMatrix::identity(n);
    let mut term = CMatrix::identity(n);
    for k in 1..=30 {
        term = (&term * &scaled).scale(Complex64::new(1.0 / k as f64, 0.0));
        sum = &sum + &term;
        if term.frobenius_norm() <= f64::EPSILON * sum.frobenius_norm() * 1e-2 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}
