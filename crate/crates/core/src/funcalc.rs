//! Functional calculus by contour integration: negative and positive
//! fractional powers, the holomorphic semigroup, and `f(-A)` for
//! exponentially decaying operator-valued `f`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::contour::{integrate_adaptive, Adaptive, ContourSpec, DecayEnvelope, DiscretizeOptions};
use crate::error::{Error, Result};
use crate::linalg::{op_norm, CMatrix, Lu};
use crate::report::Table;
use crate::sectorial::{extended_angle, CertificationReport, SectorialOperator, TargetClass};

/// Default quadrature tolerance for matrix functions.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Fraction of the available exponential decay used for the envelope.
pub const DECAY_SAFETY: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct CalcOptions {
    pub tol: f64,
    /// Keyhole radius; defaults to half the smallest eigenvalue modulus.
    pub rho: Option<f64>,
}

impl Default for CalcOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, rho: None }
    }
}

fn check_invertible(op: &SectorialOperator) -> Result<f64> {
    let min = op.min_eigen_modulus();
    if !(min > op.dim() as f64 * f64::EPSILON * op.norm().max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularOperator);
    }
    Ok(min)
}

/// `A^{-theta}` for `theta` in (0, 1).
pub fn frac_power_neg(op: &SectorialOperator, theta: f64) -> Result<CMatrix> {
    frac_power_neg_with(op, theta, &CalcOptions::default()).map(|a| a.value)
}

/// As [`frac_power_neg`], returning the quadrature details.
///
/// Uses `(A+λ)^{-1} = λ^{-1} - λ^{-1} A (A+λ)^{-1}`; the scalar part
/// integrates to zero over the keyhole, leaving an integrand that decays
/// like `|λ|^{-2-theta}`.
pub fn frac_power_neg_with(op: &SectorialOperator, theta: f64, opts: &CalcOptions) -> Result<Adaptive<CMatrix>> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::PreconditionViolated(format!("exponent {theta} must lie in (0, 1)")));
    }
    if !(op.angle() > 0.0) {
        return Err(Error::AngleOutOfRange("fractional powers need a sector angle > 0".into()));
    }
    let min = check_invertible(op)?;
    let rho = opts.rho.unwrap_or(0.5 * min);
    let spec = ContourSpec::keyhole(rho, op.angle())?;
    let env = DecayEnvelope::algebraic(2.0 + theta, op.norm() * op.constant());
    let dopts = DiscretizeOptions {
        scale: Some(rho),
        spectral_scale: Some(op.max_eigen_modulus()),
        ..Default::default()
    };
    let a = op.matrix();
    integrate_adaptive(&spec, &env, opts.tol, &dopts, |l| {
        let x = Lu::factor(a, l)?.solve_matrix(a);
        Ok(x.scale(-(-l).powf(-theta) / l))
    })
}

/// `A^{theta}` for `theta` in (0, 1), as `A · A^{theta-1}`.
pub fn frac_power_pos(op: &SectorialOperator, theta: f64) -> Result<CMatrix> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::PreconditionViolated(format!("exponent {theta} must lie in (0, 1)")));
    }
    let m = frac_power_neg(op, 1.0 - theta)?;
    Ok(op.matrix() * &m)
}

/// Angle of the integration rays and the decay rate of `e^{wλ}` on them.
fn semigroup_geometry(op: &SectorialOperator, w: Complex64) -> Result<(f64, f64, f64)> {
    if !(op.angle() > PI / 2.0) {
        return Err(Error::AngleOutOfRange(format!(
            "semigroup needs a sector angle > pi/2, got {}",
            op.angle()
        )));
    }
    if w == Complex64::new(0.0, 0.0) || !w.is_finite() {
        return Err(Error::AngleOutOfRange("w must be finite and nonzero".into()));
    }
    let arg = w.arg().abs();
    let limit = op.angle() - PI / 2.0;
    if arg > limit + 1e-12 {
        return Err(Error::AngleOutOfRange(format!("|arg w| = {arg} exceeds {limit}")));
    }
    let rate = |angle: f64| -w.norm() * (angle - arg).cos();
    let (angle, constant) = if rate(op.angle()) >= 0.1 * w.norm() {
        (op.angle(), op.constant())
    } else {
        let wide = extended_angle(op.angle(), op.constant());
        (0.5 * (op.angle() + wide), 2.0 * op.constant() + 1.0)
    };
    Ok((angle, DECAY_SAFETY * rate(angle), constant))
}

/// `e^{-wA}` for `|arg w| <= angle - pi/2`.
pub fn semigroup(op: &SectorialOperator, w: Complex64) -> Result<CMatrix> {
    semigroup_with(op, w, &CalcOptions::default()).map(|a| a.value)
}

pub fn semigroup_with(op: &SectorialOperator, w: Complex64, opts: &CalcOptions) -> Result<Adaptive<CMatrix>> {
    let (angle, delta, constant) = semigroup_geometry(op, w)?;
    let min = check_invertible(op)?;
    let spec = ContourSpec::keyhole(0.0, angle)?;
    let env = DecayEnvelope::exponential(delta, constant);
    let dopts = DiscretizeOptions {
        scale: Some(min),
        spectral_scale: Some(op.max_eigen_modulus()),
        max_panel_width: Some(8.0 / delta),
        ..Default::default()
    };
    let a = op.matrix();
    integrate_adaptive(&spec, &env, opts.tol, &dopts, |l| {
        Ok(Lu::factor(a, l)?.inverse().scale((w * l).exp()))
    })
}

pub type MatrixFn = Arc<dyn Fn(Complex64) -> CMatrix + Send + Sync>;

/// An operator-valued function holomorphic off the sector with
/// `||f(λ)|| <= c |λ|/(1+|λ|) e^{-delta |λ|}`.
#[derive(Clone)]
pub struct HeFunction {
    pub eval: MatrixFn,
    pub dim: usize,
    pub c: f64,
    pub delta: f64,
    /// Matrix whose resolvents `f` is declared to commute with.
    pub commutes_with: Option<CMatrix>,
}

impl std::fmt::Debug for HeFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HeFunction")
            .field("dim", &self.dim)
            .field("c", &self.c)
            .field("delta", &self.delta)
            .finish()
    }
}

impl HeFunction {
    pub fn new(dim: usize, c: f64, delta: f64, eval: MatrixFn) -> Self {
        Self { eval, dim, c, delta, commutes_with: None }
    }

    /// `λ ↦ g(λ) I`.
    pub fn scalar<G>(dim: usize, c: f64, delta: f64, g: G) -> Self
    where
        G: Fn(Complex64) -> Complex64 + Send + Sync + 'static,
    {
        Self::new(dim, c, delta, Arc::new(move |l| CMatrix::identity(dim).scale(g(l))))
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, 1.0, 1.0, Arc::new(move |_| CMatrix::zeros(dim)))
    }

    /// `λ e^{λ}` with constants valid outside the sector of half-angle
    /// `angle > pi/2`: `delta = 0.9 |cos angle|`, and `c` the supremum of
    /// `(1+r) e^{-(|cos angle| - delta) r}`.
    pub fn lambda_exp(dim: usize, angle: f64) -> Self {
        let decay = -angle.cos();
        let delta = DECAY_SAFETY * decay;
        let gap = decay - delta;
        let c = if gap >= 1.0 { 1.0 } else { (gap - 1.0).exp() / gap };
        Self::scalar(dim, c * (1.0 + 1e-12), delta, |l| l * l.exp())
    }

    pub fn commuting_with(mut self, a: CMatrix) -> Self {
        self.commutes_with = Some(a);
        self
    }

    pub fn evaluate(&self, l: Complex64) -> CMatrix {
        (self.eval)(l)
    }

    /// `alpha f + beta g`, with constants from the triangle inequality.
    pub fn combine(alpha: Complex64, f: &Self, beta: Complex64, g: &Self) -> Self {
        let (fe, ge) = (f.eval.clone(), g.eval.clone());
        Self {
            eval: Arc::new(move |l| &fe(l).scale(alpha) + &ge(l).scale(beta)),
            dim: f.dim,
            c: alpha.norm() * f.c + beta.norm() * g.c,
            delta: f.delta.min(g.delta),
            commutes_with: f.commutes_with.clone().or_else(|| g.commutes_with.clone()),
        }
    }
}

/// Samples the decay bound outside the sector and, when declared, the
/// commutation with the resolvent.
pub fn envelope_check(f: &HeFunction, angle: f64, budget: usize) -> CertificationReport {
    let target = TargetClass::Envelope { angle, c: f.c, delta: f.delta };
    let side = ((budget.max(100)) as f64).sqrt().floor() as usize;
    let angles: Vec<f64> = (0..side)
        .map(|k| angle + (2.0 * PI - 2.0 * angle) * k as f64 / (side - 1) as f64)
        .collect();
    let step = (1e6f64).ln() / (side - 1) as f64;
    let radii: Vec<f64> = (0..side).map(|k| 1e-3 * (step * k as f64).exp()).collect();
    let points: Vec<Complex64> = radii
        .iter()
        .flat_map(|&r| angles.iter().map(move |&p| Complex64::from_polar(r, p)))
        .collect();
    let ratios: Vec<f64> = points
        .par_iter()
        .map(|&l| {
            let r = l.norm();
            let bound = f.c * r / (1.0 + r) * (-f.delta * r).exp();
            let v = op_norm(&f.evaluate(l));
            if !v.is_finite() {
                f64::INFINITY
            } else if v == 0.0 {
                0.0
            } else {
                v / bound
            }
        })
        .collect();

    let mut table = Table::new("envelope_samples", &["radius", "max_ratio_to_bound"]);
    let mut max = 0.0;
    let mut worst = points[0];
    for (i, &r) in radii.iter().enumerate() {
        let row = &ratios[i * side..(i + 1) * side];
        table.push([r, row.iter().copied().fold(0.0, f64::max)]);
        for (j, &q) in row.iter().enumerate() {
            if q > max || q.is_nan() {
                max = q;
                worst = points[i * side + j];
            }
        }
    }
    let mut notes = Vec::new();
    let mut verdict = max <= 1.0;
    if !verdict {
        notes.push(format!("bound exceeded by factor {max} at {worst}"));
    }
    if let Some(a) = &f.commutes_with {
        let shifts = [1.0, 2.0, 4.0].map(|s| Complex64::new(s * (1.0 + op_norm(a)), 0.0));
        let mut worst_comm: f64 = 0.0;
        for z in shifts {
            let Ok(lu) = Lu::factor(a, z) else { continue };
            let rz = lu.inverse();
            for &l in points.iter().step_by(7) {
                let fl = f.evaluate(l);
                let scale = op_norm(&fl) * op_norm(&rz);
                if scale > 0.0 {
                    worst_comm = worst_comm.max(op_norm(&fl.commutator(&rz)) / scale);
                }
            }
        }
        if worst_comm > 1e-10 {
            verdict = false;
            notes.push(format!("commutation residual {worst_comm}"));
        }
    }
    CertificationReport {
        target,
        constant: max,
        max_sample: max,
        worst_point: worst,
        table,
        verdict,
        samples: points.len(),
        notes,
    }
}

/// `f(-A) = (1/2 pi i) ∫ f(λ)(A+λ)^{-1} dλ` over the rays at the sector angle.
pub fn hcalc_apply(op: &SectorialOperator, f: &HeFunction) -> Result<CMatrix> {
    hcalc_apply_with(op, f, &CalcOptions::default()).map(|a| a.value)
}

pub fn hcalc_apply_with(op: &SectorialOperator, f: &HeFunction, opts: &CalcOptions) -> Result<Adaptive<CMatrix>> {
    if !(op.angle() > PI / 2.0) {
        return Err(Error::AngleOutOfRange(format!(
            "the calculus needs a sector angle > pi/2, got {}",
            op.angle()
        )));
    }
    if f.dim != op.dim() {
        return Err(Error::DimensionMismatch { expected: op.dim(), actual: f.dim });
    }
    let f = if f.commutes_with.is_none() {
        f.clone().commuting_with(op.matrix().clone())
    } else {
        f.clone()
    };
    let check = envelope_check(&f, op.angle(), 400);
    if !check.verdict {
        return Err(Error::EnvelopeViolation(check.notes.join("; ")));
    }
    let min = check_invertible(op)?;
    let spec = ContourSpec::keyhole(0.0, op.angle())?;
    let env = DecayEnvelope::exponential(f.delta, f.c * op.constant());
    let dopts = DiscretizeOptions {
        scale: Some(min),
        spectral_scale: Some(op.max_eigen_modulus()),
        max_panel_width: Some(8.0 / f.delta),
        ..Default::default()
    };
    let a = op.matrix();
    integrate_adaptive(&spec, &env, opts.tol, &dopts, |l| {
        let r = Lu::factor(a, l)?.inverse();
        Ok(&f.evaluate(l) * &r)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eig_decompose, expm_oracle};

    fn op(diag: &[f64], k: f64, angle: f64) -> SectorialOperator {
        SectorialOperator::asserted(CMatrix::from_real_diagonal(diag), k, angle).unwrap()
    }

    fn sector_op(diag: &[f64], angle: f64) -> SectorialOperator {
        // for a positive diagonal the constant at angle phi is 1/sin(pi - phi)
        // beyond pi/2 and sqrt 2 at pi/2; 3 is a safe cap for the angles used
        op(diag, 3.0, angle)
    }

    #[test]
    fn scalar_square_root() {
        let m = frac_power_neg(&sector_op(&[4.0], 2.0), 0.5).unwrap();
        assert!((m.get(0, 0) - 0.5).norm() < 1e-10);
    }

    #[test]
    fn identity_powers() {
        let m = frac_power_neg(&sector_op(&[1.0, 1.0, 1.0], 2.0), 0.37).unwrap();
        assert!(m.max_abs_diff(&CMatrix::identity(3)) < 1e-10);
    }

    #[test]
    fn diagonal_inverse_square_root_with_node_budget() {
        let a = frac_power_neg_with(&sector_op(&[1.0, 9.0], 3.0 * PI / 4.0), 0.5, &CalcOptions::default())
            .unwrap();
        let want = CMatrix::from_real_diagonal(&[1.0, 1.0 / 3.0]);
        assert!(a.value.max_abs_diff(&want) < 1e-8);
        assert!(a.info.nodes <= 400, "{} nodes", a.info.nodes);
    }

    #[test]
    fn positive_powers() {
        let o = sector_op(&[4.0], 2.0);
        assert!((frac_power_pos(&o, 0.5).unwrap().get(0, 0) - 2.0).norm() < 1e-9);
        let o = sector_op(&[1.0, 9.0], 2.0);
        let p = frac_power_pos(&o, 0.5).unwrap();
        let y = crate::linalg::CVector::from_real(&[1.0, 1.0]);
        let x = p.apply(&y);
        assert!((x.get(0) - 1.0).norm() < 1e-9 && (x.get(1) - 3.0).norm() < 1e-8);
        let back = frac_power_neg(&o, 0.5).unwrap().apply(&x);
        assert!(back.max_abs_diff(&y) < 1e-7);
    }

    #[test]
    fn power_of_non_normal_matrix_matches_eigen_oracle() {
        let a = CMatrix::from_real_rows(&[&[2.0, 1.0], &[0.0, 3.0]]).unwrap();
        let (o, _) = SectorialOperator::certify(a.clone(), 2.0, 400).unwrap();
        let m = frac_power_neg(&o, 0.3).unwrap();
        let want = eig_decompose(&a).unwrap().map(|l| l.powf(-0.3));
        assert!(m.max_abs_diff(&want) < 1e-9);
    }

    #[test]
    fn rho_independence() {
        let o = sector_op(&[1.0, 5.0], 2.2);
        let a = frac_power_neg_with(&o, 0.6, &CalcOptions { rho: Some(0.5), ..Default::default() }).unwrap();
        let b = frac_power_neg_with(&o, 0.6, &CalcOptions { rho: Some(0.25), ..Default::default() }).unwrap();
        assert!(a.value.max_abs_diff(&b.value) < 1e-8);
    }

    #[test]
    fn power_preconditions() {
        let o = sector_op(&[1.0], 2.0);
        assert!(frac_power_neg(&o, 1.0).is_err());
        assert!(matches!(frac_power_neg(&op(&[1.0], 1.0, 0.0), 0.5), Err(Error::AngleOutOfRange(_))));
    }

    #[test]
    fn semigroup_scalar_and_diagonal() {
        let w = Complex64::new(1.0, 0.0);
        let m = semigroup(&sector_op(&[2f64.ln()], 2.4), w).unwrap();
        assert!((m.get(0, 0) - 0.5).norm() < 1e-9);
        let a = CMatrix::from_real_diagonal(&[1.0, 2.0]);
        let m = semigroup(&sector_op(&[1.0, 2.0], 2.4), w).unwrap();
        assert!(m.max_abs_diff(&expm_oracle(&a, 1.0)) < 1e-8);
    }

    #[test]
    fn semigroup_on_boundary_ray() {
        let angle = 2.0 * PI / 3.0;
        let o = op(&[1.0, 2.0], 2.1, angle);
        let w = Complex64::from_polar(1.0, angle - PI / 2.0);
        let m = semigroup(&o, w).unwrap();
        let want = CMatrix::from_diagonal(&[(-w).exp(), (-2.0 * w).exp()]);
        assert!(m.max_abs_diff(&want) < 1e-8);
        assert!(semigroup(&o, Complex64::from_polar(1.0, angle - PI / 2.0 + 0.01)).is_err());
        assert!(semigroup(&sector_op(&[1.0], 1.0), Complex64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn lambda_exp_envelope_examples() {
        // on the rays at 2 pi/3, |λ e^λ| = r e^{-r/2}; against r/(1+r) e^{-0.4 r}
        // the ratio is (1+r) e^{-0.1 r}, whose maximum 10 e^{-0.9} exceeds 1
        let mk = |c: f64| HeFunction::scalar(1, c, 0.4, |l| l * l.exp());
        let angle = 2.0 * PI / 3.0;
        let sup = 10.0 * (-0.9f64).exp();
        assert!(!envelope_check(&mk(1.0), angle, 400).verdict);
        assert!(envelope_check(&mk(sup * (1.0 + 1e-9)), angle, 400).verdict);
        assert!(envelope_check(&HeFunction::zero(1), angle, 400).verdict);
        assert!(!envelope_check(&HeFunction::scalar(1, 1.0, 0.4, |_| Complex64::new(1.0, 0.0)), angle, 400).verdict);
        assert!(envelope_check(&HeFunction::lambda_exp(1, angle), angle, 400).verdict);
    }

    #[test]
    fn envelope_detects_non_commuting_function() {
        let a = CMatrix::from_real_rows(&[&[1.0, 1.0], &[0.0, 2.0]]).unwrap();
        let b = a.transpose();
        let f = HeFunction::new(2, 10.0, 0.4, Arc::new(move |l: Complex64| b.scale(l * l.exp())))
            .commuting_with(a);
        let r = envelope_check(&f, 2.0 * PI / 3.0, 400);
        assert!(!r.verdict);
    }

    #[test]
    fn calculus_residue_examples() {
        let angle = 3.0 * PI / 4.0;
        let o = sector_op(&[1.0], angle);
        let m = hcalc_apply(&o, &HeFunction::lambda_exp(1, angle)).unwrap();
        assert!((m.get(0, 0) + (-1f64).exp()).norm() < 1e-7);
        let o = sector_op(&[1.0, 2.0], angle);
        let m = hcalc_apply(&o, &HeFunction::lambda_exp(2, angle)).unwrap();
        let want = CMatrix::from_real_diagonal(&[-(-1f64).exp(), -2.0 * (-2f64).exp()]);
        assert!(m.max_abs_diff(&want) < 1e-7);
        let z = hcalc_apply(&o, &HeFunction::zero(2)).unwrap();
        assert_eq!(z, CMatrix::zeros(2));
        let bad = HeFunction::scalar(2, 1.0, 0.4, |_| Complex64::new(1.0, 0.0));
        assert!(matches!(hcalc_apply(&o, &bad), Err(Error::EnvelopeViolation(_))));
    }
}
