//! The contour inverse of `A + B` for resolvent-commuting sectorial pairs,
//! with the identity and regularity diagnostics built on it.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::contour::{integrate_adaptive, Adaptive, ContourSpec, DecayEnvelope, DiscretizeOptions};
use crate::error::{Error, Result};
use crate::funcalc::{frac_power_neg, DECAY_SAFETY};
use crate::linalg::{CMatrix, CVector, Lu};
use crate::report::Table;
use crate::sectorial::{check_resolvent_commuting, SectorialOperator, COMMUTATION_TOL};

/// Default quadrature tolerance for the sum inverse.
pub const DEFAULT_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct SumProblem {
    pub op_a: SectorialOperator,
    pub op_b: SectorialOperator,
    /// Largest relative resolvent commutator over the probe shifts.
    pub commutation_residual: f64,
}

impl SumProblem {
    pub fn new(op_a: SectorialOperator, op_b: SectorialOperator) -> Result<Self> {
        if op_a.dim() != op_b.dim() {
            return Err(Error::DimensionMismatch { expected: op_a.dim(), actual: op_b.dim() });
        }
        let (ta, tb) = (op_a.angle(), op_b.angle());
        if !(ta > tb && ta + tb > PI) {
            return Err(Error::HypothesisViolation(format!(
                "need angle_A > angle_B and angle_A + angle_B > pi, got {ta} and {tb}"
            )));
        }
        let scale = 1.0 + op_a.norm().max(op_b.norm());
        let zero = Complex64::new(0.0, 0.0);
        let shifts = [
            (zero, zero),
            (Complex64::new(scale, 0.0), Complex64::new(scale, 0.0)),
            (Complex64::new(0.0, scale), Complex64::new(2.0 * scale, -scale)),
        ];
        let mut worst: f64 = 0.0;
        for (l, m) in shifts {
            let c = check_resolvent_commuting(op_a.matrix(), op_b.matrix(), l, m)?;
            if c.scale > 0.0 {
                worst = worst.max(c.residual / c.scale);
            }
        }
        if worst > COMMUTATION_TOL {
            return Err(Error::CommutationViolation { residual: worst });
        }
        Ok(Self { op_a, op_b, commutation_residual: worst })
    }

    pub fn dim(&self) -> usize {
        self.op_a.dim()
    }

    fn a(&self) -> &CMatrix {
        self.op_a.matrix()
    }

    fn b(&self) -> &CMatrix {
        self.op_b.matrix()
    }

    fn bound(&self) -> f64 {
        self.op_a.constant() * self.op_b.constant()
    }

    fn scales(&self) -> (f64, f64) {
        let min = self.op_a.min_eigen_modulus().min(self.op_b.min_eigen_modulus());
        let max = self.op_a.max_eigen_modulus().max(self.op_b.max_eigen_modulus());
        (0.5 * min, max)
    }
}

/// Which path realizes the sum inverse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KappaRoute {
    /// `∫ (A-z)^{-1}(B+z)^{-1} dz` over the rays at angle_B.
    Direct,
    /// `∫ (A+λ)^{-1}(B-λ)^{-1} dλ` over the rays at angle_A.
    Swapped,
    /// The direct integrand over rays at `angle_B - eps` from a real vertex.
    Shifted { shift: f64, eps: f64 },
}

impl KappaRoute {
    /// Default shifted path: `eps = (angle_A + angle_B - pi)/4` and a vertex
    /// at `±rho/2`, `rho` half the smallest eigenvalue modulus of A, with the
    /// sign chosen so that the path still separates the two spectra.
    pub fn default_shifted(p: &SumProblem) -> Result<Self> {
        let eps = (p.op_a.angle() + p.op_b.angle() - PI) / 4.0;
        let rho = 0.5 * p.op_a.min_eigen_modulus();
        for shift in [0.5 * rho, -0.5 * rho] {
            if separates(p, shift, p.op_b.angle() - eps) {
                return Ok(Self::Shifted { shift, eps });
            }
        }
        Err(Error::HypothesisViolation(
            "no shifted path at ±rho/2 separates the spectra of A and -B".into(),
        ))
    }
}

/// Whether rays from `shift` at `±angle` keep the spectrum of `A` outside and
/// that of `-B` inside the keyhole region.
fn separates(p: &SumProblem, shift: f64, angle: f64) -> bool {
    let inside = |z: Complex64| {
        let d = z - shift;
        d.norm() > 0.0 && d.arg().abs() > angle
    };
    p.op_a.eigenvalues().iter().all(|&a| !inside(a) && (a - shift).norm() > 0.0)
        && p.op_b.eigenvalues().iter().all(|&b| inside(-b))
}

fn check_dim(p: &SumProblem, y: &CVector) -> Result<()> {
    if y.dim() != p.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), actual: y.dim() });
    }
    Ok(())
}

/// `𝒦y`, the contour form of `(A+B)^{-1} y`.
pub fn kappa_apply(p: &SumProblem, y: &CVector) -> Result<CVector> {
    kappa_apply_with(p, y, KappaRoute::Direct, DEFAULT_SUM_TOL).map(|a| a.value)
}

pub fn kappa_apply_with(p: &SumProblem, y: &CVector, route: KappaRoute, tol: f64) -> Result<Adaptive<CVector>> {
    check_dim(p, y)?;
    let (scale, spectral) = p.scales();
    let ynorm = y.norm().max(f64::MIN_POSITIVE);
    let opts = DiscretizeOptions {
        scale: Some(scale),
        spectral_scale: Some(spectral),
        ..Default::default()
    };
    let (a, b) = (p.a(), p.b());
    let env = DecayEnvelope::double_resolvent(p.bound() * ynorm);
    let direct = |z: Complex64| -> Result<CVector> {
        let u = Lu::factor(b, z)?.solve(y)?;
        Lu::factor(a, -z)?.solve(&u)
    };
    let result = match route {
        KappaRoute::Direct => {
            let spec = ContourSpec::keyhole(0.0, p.op_b.angle())?;
            integrate_adaptive(&spec, &env, tol, &opts, direct)
        }
        KappaRoute::Swapped => {
            let spec = ContourSpec::keyhole(0.0, p.op_a.angle())?;
            integrate_adaptive(&spec, &env, tol, &opts, |l: Complex64| {
                let u = Lu::factor(b, -l)?.solve(y)?;
                Lu::factor(a, l)?.solve(&u)
            })
        }
        KappaRoute::Shifted { shift, eps } => {
            let angle = p.op_b.angle() - eps;
            if !separates(p, shift, angle) {
                return Err(Error::HypothesisViolation(format!(
                    "shifted path (vertex {shift}, angle {angle}) does not separate the spectra"
                )));
            }
            let spec = ContourSpec::shifted_keyhole(shift, 0.0, angle)?;
            let grow = (1.0 + shift.abs()) * (1.0 + shift.abs());
            let env = DecayEnvelope::double_resolvent(p.bound() * ynorm * grow);
            integrate_adaptive(&spec, &env, tol, &opts, direct)
        }
    };
    result.map_err(|e| match e {
        Error::NoConvergence(m) => Error::QuadratureFailure(m),
        other => other,
    })
}

/// `||A𝒦y + B𝒦y - y|| / ||y||`.
pub fn sum_residual(p: &SumProblem, y: &CVector) -> Result<f64> {
    check_dim(p, y)?;
    if y.norm() == 0.0 {
        return Ok(0.0);
    }
    let x = kappa_apply(p, y)?;
    let r = &(&p.a().apply(&x) + &p.b().apply(&x)) - y;
    Ok(r.norm() / y.norm())
}

/// `||A^{-1}B^{-1}w - (A^{-1} + B^{-1})𝒦w|| / ||w||`.
pub fn inverse_identity_check(p: &SumProblem, w: &CVector) -> Result<f64> {
    check_dim(p, w)?;
    if w.norm() == 0.0 {
        return Ok(0.0);
    }
    let zero = Complex64::new(0.0, 0.0);
    let la = Lu::factor(p.a(), zero).map_err(|_| Error::SingularOperator)?;
    let lb = Lu::factor(p.b(), zero).map_err(|_| Error::SingularOperator)?;
    let left = la.solve(&lb.solve(w)?)?;
    let k = kappa_apply(p, w)?;
    let right = &la.solve(&k)? + &lb.solve(&k)?;
    Ok((&left - &right).norm() / w.norm())
}

/// `𝒦e^{-wA}y` and `A𝒦e^{-wA}y`, both by single contour integrals.
#[derive(Clone, Debug)]
pub struct Smoothed {
    pub x: CVector,
    pub ax: CVector,
    /// `||A x - ax|| / max(||ax||, ||y||)`.
    pub cross_check: f64,
}

pub fn smoothed_kappa(p: &SumProblem, w: f64, y: &CVector) -> Result<Smoothed> {
    check_dim(p, y)?;
    if !(p.op_a.angle() > PI / 2.0) {
        return Err(Error::AngleOutOfRange(format!(
            "smoothing needs angle_A > pi/2, got {}",
            p.op_a.angle()
        )));
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::PreconditionViolated(format!("w = {w} must be positive")));
    }
    let n = p.dim();
    if y.norm() == 0.0 {
        return Ok(Smoothed { x: CVector::zeros(n), ax: CVector::zeros(n), cross_check: 0.0 });
    }
    let (scale, spectral) = p.scales();
    let delta = DECAY_SAFETY * w * (-p.op_a.angle().cos());
    let spec = ContourSpec::keyhole(0.0, p.op_a.angle())?;
    let env = DecayEnvelope::exponential(delta, p.bound() * y.norm());
    let opts = DiscretizeOptions {
        scale: Some(scale),
        spectral_scale: Some(spectral),
        max_panel_width: Some(8.0 / delta),
        ..Default::default()
    };
    let (a, b) = (p.a(), p.b());
    let joint: Adaptive<Vec<Complex64>> = integrate_adaptive(&spec, &env, DEFAULT_SUM_TOL, &opts, |l| {
        let u = Lu::factor(b, -l)?.solve(y)?;
        let v = Lu::factor(a, l)?.solve(&u)?;
        let e = (w * l).exp();
        let mut out: Vec<Complex64> = v.entries().iter().map(|&c| c * e).collect();
        out.extend(v.entries().iter().map(|&c| -c * l * e));
        Ok(out)
    })
    .map_err(|e| match e {
        Error::NoConvergence(m) => Error::QuadratureFailure(m),
        other => other,
    })?;
    let x = CVector::new(joint.value[..n].to_vec())?;
    let ax = CVector::new(joint.value[n..].to_vec())?;
    let cross_check = (&a.apply(&x) - &ax).norm() / ax.norm().max(y.norm());
    Ok(Smoothed { x, ax, cross_check })
}

#[derive(Clone, Debug)]
pub struct ProbeTable {
    /// `(w, ||A𝒦e^{-wA}y|| / ||y||)`.
    pub rows: Vec<(f64, f64)>,
    pub sup: f64,
    /// `||A𝒦y|| / ||y||` from the unsmoothed inverse.
    pub limit: f64,
}

impl ProbeTable {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new("closedness_probe", &["w", "smoothed_ratio"]);
        for &(w, v) in &self.rows {
            t.push([w, v]);
        }
        t
    }
}

/// Smoothing parameters `2^{-j}` for `j = 0..=20`.
pub fn default_probe_sequence() -> Vec<f64> {
    (0..=20).map(|j| 2f64.powi(-j)).collect()
}

pub fn closedness_probe(p: &SumProblem, y: &CVector, ws: &[f64]) -> Result<ProbeTable> {
    check_dim(p, y)?;
    let ynorm = y.norm();
    if ynorm == 0.0 {
        return Ok(ProbeTable { rows: ws.iter().map(|&w| (w, 0.0)).collect(), sup: 0.0, limit: 0.0 });
    }
    let mut rows = Vec::with_capacity(ws.len());
    for &w in ws {
        let s = smoothed_kappa(p, w, y)?;
        rows.push((w, s.ax.norm() / ynorm));
    }
    let sup = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let limit = p.a().apply(&kappa_apply(p, y)?).norm() / ynorm;
    Ok(ProbeTable { rows, sup, limit })
}

#[derive(Clone, Debug)]
pub struct RegularityCheck {
    /// `A^{phi-1}𝒦y` by composition.
    pub composed: CVector,
    /// The single-contour form.
    pub contour: CVector,
    pub residual: f64,
}

/// Compares `A^{phi-1}𝒦y` with
/// `(1/2 pi i) ∫ (A+λ)^{-1}(B-λ)^{-1}(-λ)^{phi-1} y dλ` over the keyhole at
/// angle_A.
pub fn regularity_fraction_check(p: &SumProblem, phi: f64, y: &CVector) -> Result<RegularityCheck> {
    check_dim(p, y)?;
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::PreconditionViolated(format!("fraction {phi} must lie in (0, 1)")));
    }
    let n = p.dim();
    if y.norm() == 0.0 {
        return Ok(RegularityCheck { composed: CVector::zeros(n), contour: CVector::zeros(n), residual: 0.0 });
    }
    let composed = frac_power_neg(&p.op_a, 1.0 - phi)?.apply(&kappa_apply(p, y)?);
    let (_, spectral) = p.scales();
    let rho = 0.5 * p.op_a.min_eigen_modulus();
    let spec = ContourSpec::keyhole(rho, p.op_a.angle())?;
    let env = DecayEnvelope::algebraic(3.0 - phi, p.bound() * y.norm());
    let opts = DiscretizeOptions {
        scale: Some(rho),
        spectral_scale: Some(spectral),
        ..Default::default()
    };
    let (a, b) = (p.a(), p.b());
    let contour = integrate_adaptive(&spec, &env, DEFAULT_SUM_TOL, &opts, |l: Complex64| {
        let u = Lu::factor(b, -l)?.solve(y)?;
        Ok(Lu::factor(a, l)?.solve(&u)?.scale((-l).powf(phi - 1.0)))
    })?
    .value;
    let residual = (&composed - &contour).norm() / y.norm();
    Ok(RegularityCheck { composed, contour, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(diag: &[f64], angle: f64) -> SectorialOperator {
        let (o, _) = SectorialOperator::certify(CMatrix::from_real_diagonal(diag), angle, 400).unwrap();
        o
    }

    fn problem(a: &[f64], b: &[f64]) -> SumProblem {
        SumProblem::new(op(a, 3.0 * PI / 4.0), op(b, PI / 3.0)).unwrap()
    }

    fn close(v: &CVector, want: &[f64], tol: f64) -> bool {
        v.max_abs_diff(&CVector::from_real(want)) <= tol
    }

    #[test]
    fn scalar_and_diagonal_inverses() {
        let x = kappa_apply(&problem(&[1.0], &[2.0]), &CVector::from_real(&[1.0])).unwrap();
        assert!(close(&x, &[1.0 / 3.0], 1e-8), "{x:?}");
        let x = kappa_apply(&problem(&[1.0], &[1.0]), &CVector::from_real(&[1.0])).unwrap();
        assert!(close(&x, &[0.5], 1e-8));
        let p = problem(&[1.0, 2.0], &[3.0, 4.0]);
        let y = CVector::from_real(&[1.0, 1.0]);
        assert!(close(&kappa_apply(&p, &y).unwrap(), &[0.25, 1.0 / 6.0], 1e-8));
        assert!(sum_residual(&p, &y).unwrap() <= 1e-6);
        assert_eq!(sum_residual(&p, &CVector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn routes_agree() {
        let p = problem(&[1.0, 2.0], &[3.0, 4.0]);
        let y = CVector::from_real(&[1.0, -2.0]);
        let d = kappa_apply_with(&p, &y, KappaRoute::Direct, DEFAULT_SUM_TOL).unwrap().value;
        let s = kappa_apply_with(&p, &y, KappaRoute::Swapped, DEFAULT_SUM_TOL).unwrap().value;
        let route = KappaRoute::default_shifted(&p).unwrap();
        let h = kappa_apply_with(&p, &y, route, DEFAULT_SUM_TOL).unwrap().value;
        assert!(d.max_abs_diff(&s) < 1e-7 && d.max_abs_diff(&h) < 1e-7);
    }

    #[test]
    fn hypotheses_are_enforced() {
        let a = op(&[1.0], PI / 3.0);
        let b = op(&[1.0], PI / 3.0);
        assert!(matches!(SumProblem::new(a, b), Err(Error::HypothesisViolation(_))));
        let m = CMatrix::from_real_rows(&[&[1.0, 1.0], &[0.0, 2.0]]).unwrap();
        let (a, _) = SectorialOperator::certify(m.clone(), 3.0 * PI / 4.0, 400).unwrap();
        let (b, _) = SectorialOperator::certify(m.transpose(), PI / 3.0, 400).unwrap();
        assert!(matches!(SumProblem::new(a, b), Err(Error::CommutationViolation { .. })));
    }

    #[test]
    fn inverse_identity_examples() {
        let p = problem(&[1.0], &[2.0]);
        assert!(inverse_identity_check(&p, &CVector::from_real(&[1.0])).unwrap() < 1e-8);
        assert_eq!(inverse_identity_check(&p, &CVector::zeros(1)).unwrap(), 0.0);
        let p = problem(&[1.0, 2.0], &[3.0, 4.0]);
        assert!(inverse_identity_check(&p, &CVector::from_real(&[1.0, 1.0])).unwrap() <= 1e-6);
    }

    #[test]
    fn smoothed_examples() {
        let e1 = (-1f64).exp();
        let s = smoothed_kappa(&problem(&[1.0], &[2.0]), 1.0, &CVector::from_real(&[1.0])).unwrap();
        assert!(close(&s.x, &[e1 / 3.0], 1e-8) && close(&s.ax, &[e1 / 3.0], 1e-8));
        let p = problem(&[1.0, 2.0], &[1.0, 1.0]);
        let s = smoothed_kappa(&p, 0.5, &CVector::from_real(&[1.0, 1.0])).unwrap();
        assert!(close(&s.x, &[(-0.5f64).exp() / 2.0, e1 / 3.0], 1e-8));
        assert!(s.cross_check <= 1e-6);
        let z = smoothed_kappa(&p, 0.5, &CVector::zeros(2)).unwrap();
        assert_eq!(z.x, CVector::zeros(2));
    }

    #[test]
    fn closedness_probe_tends_to_limit() {
        let p = problem(&[1.0], &[2.0]);
        let t = closedness_probe(&p, &CVector::from_real(&[1.0]), &default_probe_sequence()).unwrap();
        assert!((t.limit - 1.0 / 3.0).abs() < 1e-8);
        let last = t.rows.last().unwrap().1;
        assert!((last - 1.0 / 3.0).abs() < 1e-4, "{last}");
        // stiff pair: componentwise a/(a+b) e^{-wa}; the limit is the norm of (1/2, 1000/1001)
        let p = problem(&[1.0, 1e3], &[1.0, 1.0]);
        let y = CVector::from_real(&[1.0, 1.0]);
        let t = closedness_probe(&p, &y, &default_probe_sequence()).unwrap();
        let oracle = (0.25f64 + (1e3f64 / 1001.0).powi(2)).sqrt() / 2f64.sqrt();
        assert!((t.limit - oracle).abs() < 1e-7);
        for &(w, v) in &t.rows {
            let c1 = (-w).exp() / 2.0;
            let c2 = 1e3 / 1001.0 * (-1e3 * w).exp();
            let exact = (c1 * c1 + c2 * c2).sqrt() / 2f64.sqrt();
            assert!((v - exact).abs() < 1e-7, "w={w}: {v} vs {exact}");
        }
    }

    #[test]
    fn regularity_examples() {
        let r = regularity_fraction_check(&problem(&[4.0], &[1.0]), 0.5, &CVector::from_real(&[1.0])).unwrap();
        assert!(close(&r.composed, &[0.1], 1e-8) && close(&r.contour, &[0.1], 1e-8));
        let p = problem(&[1.0, 9.0], &[1.0, 1.0]);
        let r = regularity_fraction_check(&p, 0.5, &CVector::from_real(&[1.0, 1.0])).unwrap();
        assert!(close(&r.contour, &[0.5, 1.0 / 30.0], 1e-8));
        assert!(r.residual <= 1e-6);
    }

    #[test]
    fn commutes_with_resolvent() {
        let p = problem(&[1.0, 2.0], &[3.0, 4.0]);
        let y = CVector::from_real(&[0.3, -1.0]);
        let l = Complex64::new(0.5, 1.0);
        let lu = Lu::factor(p.a(), l).unwrap();
        let left = lu.solve(&kappa_apply(&p, &y).unwrap()).unwrap();
        let right = kappa_apply(&p, &lu.solve(&y).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right) < 1e-8);
    }
}
