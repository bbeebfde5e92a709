//! First-order abstract Cauchy problems `f' + Af = g`, `f(0) = 0`, on a
//! uniform time grid.
//!
//! Time derivatives act as an operator with zero initial value whose
//! resolvent is a causal exponential convolution. The convolution is
//! integrated exactly against the piecewise-linear interpolant of the data,
//! so the solution at `t = 0` is exactly zero.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::contour::{gauss_legendre, integrate_adaptive, ContourSpec, DecayEnvelope, DiscretizeOptions, QuadratureInfo};
use crate::error::{Error, Result};
use crate::linalg::{expm_oracle, CMatrix, CVector, Lu, ZERO};
use crate::report::Table;
use crate::sectorial::SectorialOperator;

/// Vector samples `g(t_j)`, `t_j = jT/m`, with a Lebesgue exponent for norms.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    horizon: f64,
    exponent: f64,
    values: Vec<CVector>,
}

impl GridFunction {
    pub fn new(horizon: f64, exponent: f64, values: Vec<CVector>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::PreconditionViolated(format!("horizon {horizon} must be positive")));
        }
        if !(exponent > 1.0 && exponent.is_finite()) {
            return Err(Error::PreconditionViolated(format!("exponent {exponent} must lie in (1, inf)")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidShape);
        }
        let n = values[0].dim();
        for (j, v) in values.iter().enumerate() {
            if v.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: v.dim() });
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(j));
            }
        }
        Ok(Self { horizon, exponent, values })
    }

    /// Samples `f` on `m` intervals of `[0, horizon]`.
    pub fn from_fn<F: Fn(f64) -> CVector>(horizon: f64, m: usize, exponent: f64, f: F) -> Result<Self> {
        let values = (0..=m).map(|j| f(horizon * j as f64 / m as f64)).collect();
        Self::new(horizon, exponent, values)
    }

    /// Scalar-valued samples broadcast to vector `v`.
    pub fn scalar_times<F: Fn(f64) -> f64>(horizon: f64, m: usize, exponent: f64, v: &CVector, f: F) -> Result<Self> {
        Self::from_fn(horizon, m, exponent, |t| v.scale(Complex64::new(f(t), 0.0)))
    }

    pub fn zeros(horizon: f64, m: usize, exponent: f64, n: usize) -> Result<Self> {
        Self::new(horizon, exponent, vec![CVector::zeros(n); m + 1])
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.intervals() as f64
    }

    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    pub fn time(&self, j: usize) -> f64 {
        self.horizon * j as f64 / self.intervals() as f64
    }

    pub fn values(&self) -> &[CVector] {
        &self.values
    }

    pub fn value(&self, j: usize) -> &CVector {
        &self.values[j]
    }

    fn with_values(&self, values: Vec<CVector>) -> Self {
        Self { values, ..self.clone() }
    }

    /// `(dt Σ w_j ||g_j||^p)^{1/p}` with trapezoid end weights.
    pub fn norm(&self) -> f64 {
        let p = self.exponent;
        let m = self.intervals();
        let s: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let w = if j == 0 || j == m { 0.5 } else { 1.0 };
                w * v.norm().powf(p)
            })
            .sum();
        (self.step() * s).powf(1.0 / p)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.with_values(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        self.with_values(self.values.iter().map(|v| v.scale(s)).collect())
    }

    pub fn map_matrix(&self, m: &CMatrix) -> Self {
        self.with_values(self.values.iter().map(|v| m.apply(v)).collect())
    }

    /// Slopes of the piecewise-linear interpolant, one per interval.
    pub fn slopes(&self) -> Vec<CVector> {
        let inv = Complex64::new(1.0 / self.step(), 0.0);
        self.values.windows(2).map(|w| (&w[1] - &w[0]).scale(inv)).collect()
    }

    pub(crate) fn from_flat(&self, flat: &[Complex64], n: usize) -> Result<Self> {
        let values = flat.chunks(n).map(|c| CVector::new(c.to_vec())).collect::<Result<Vec<_>>>()?;
        Self::new(self.horizon, self.exponent, values)
    }
}

/// `(1 - e^{-mu})/mu` and `(1 - e^{-mu}(1+mu))/mu^2`, by series near 0.
fn phi_weights(mu: Complex64) -> (Complex64, Complex64) {
    if mu.norm() < 0.5 {
        let mut e1 = ZERO;
        let mut e2 = ZERO;
        let mut pow = Complex64::new(1.0, 0.0);
        let mut fact = 1.0;
        for k in 0..24 {
            if k > 0 {
                pow *= -mu;
                fact *= k as f64;
            }
            e1 += pow / (fact * (k + 1) as f64);
            e2 += pow / (fact * (k + 2) as f64);
        }
        (e1, e2)
    } else {
        let e = (-mu).exp();
        ((1.0 - e) / mu, (1.0 - e * (1.0 + mu)) / (mu * mu))
    }
}

/// Per-step coefficients `(decay, current, difference)` with
/// `h_{j+1} = decay h_j + current g_{j+1} - difference (g_{j+1} - g_j)`.
fn step_coefficients(lambda: Complex64, dt: f64) -> (Complex64, Complex64, Complex64) {
    let mu = lambda * dt;
    let (e1, e2) = phi_weights(mu);
    ((-mu).exp(), dt * e1, dt * e2)
}

/// `h(t) = ∫_0^t e^{λ(x-t)} g(x) dx` on the grid of `g`, exact for the
/// piecewise-linear interpolant of `g`.
pub fn b_resolvent(g: &GridFunction, lambda: Complex64) -> GridFunction {
    let flat = b_resolvent_flat(g, lambda);
    g.from_flat(&flat, g.dim()).expect("finite convolution of finite data")
}

pub(crate) fn b_resolvent_flat(g: &GridFunction, lambda: Complex64) -> Vec<Complex64> {
    let n = g.dim();
    let (decay, cur, diff) = step_coefficients(lambda, g.step());
    let mut out = vec![ZERO; (g.intervals() + 1) * n];
    for j in 0..g.intervals() {
        let (g0, g1) = (g.values[j].entries(), g.values[j + 1].entries());
        for i in 0..n {
            let h = out[j * n + i];
            out[(j + 1) * n + i] = decay * h + cur * g1[i] - diff * (g1[i] - g0[i]);
        }
    }
    out
}

/// The same convolution for data that is constant on each interval.
fn b_resolvent_piecewise_constant(template: &GridFunction, slopes: &[CVector], lambda: Complex64) -> GridFunction {
    let n = template.dim();
    let (decay, cur, _) = step_coefficients(lambda, template.step());
    let mut values = vec![CVector::zeros(n)];
    for s in slopes {
        let prev = values.last().unwrap();
        values.push(&prev.scale(decay) + &s.scale(cur));
    }
    template.with_values(values)
}

/// Default quadrature tolerance for the time-dependent solvers.
pub const DEFAULT_EVOLUTION_TOL: f64 = 1e-9;

/// Solves `f' + Af = g`, `f(0) = 0` by
/// `f(t) = (1/2 pi i) ∫ (A+z)^{-1} ∫_0^t e^{z(t-x)} g(x) dx dz` over the
/// rays at the sector angle.
pub fn parabolic_solve(op: &SectorialOperator, g: &GridFunction) -> Result<GridFunction> {
    parabolic_solve_with(op, g, DEFAULT_EVOLUTION_TOL).map(|r| r.0)
}

pub fn parabolic_solve_with(op: &SectorialOperator, g: &GridFunction, tol: f64) -> Result<(GridFunction, QuadratureInfo)> {
    if !(op.angle() > PI / 2.0) {
        return Err(Error::AngleOutOfRange(format!(
            "the parabolic solver needs a sector angle > pi/2, got {}",
            op.angle()
        )));
    }
    if g.dim() != op.dim() {
        return Err(Error::DimensionMismatch { expected: op.dim(), actual: g.dim() });
    }
    let spec = ContourSpec::keyhole(0.0, op.angle())?;
    // the inner convolution is O(1/(|z| |cos angle|)), so the integrand is O(|z|^-2)
    let env = DecayEnvelope::double_resolvent(op.constant() * g.sup_norm().max(f64::MIN_POSITIVE) / (-op.angle().cos()));
    let opts = DiscretizeOptions {
        scale: Some(op.min_eigen_modulus().min(1.0 / g.horizon())),
        spectral_scale: Some(op.max_eigen_modulus().max(1.0 / g.step())),
        ..Default::default()
    };
    let n = g.dim();
    let a = op.matrix();
    let res = integrate_adaptive(&spec, &env, tol, &opts, |z| {
        let mut h = b_resolvent_flat(g, -z);
        let lu = Lu::factor(a, z)?;
        for chunk in h.chunks_mut(n) {
            lu.solve_slice(chunk);
        }
        Ok(h)
    })
    .map_err(|e| match e {
        Error::NoConvergence(m) => Error::QuadratureFailure(m),
        other => other,
    })?;
    let mut flat = res.value;
    flat[..n].iter_mut().for_each(|v| *v = ZERO);
    Ok((g.from_flat(&flat, n)?, res.info))
}

/// `∫_0^t e^{-(t-x)A} g(x) dx` for the piecewise-linear interpolant of `g`,
/// stepping with matrix exponentials and Gauss–Legendre in each interval.
pub fn duhamel_oracle(a: &CMatrix, g: &GridFunction) -> Result<GridFunction> {
    if g.dim() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), actual: g.dim() });
    }
    let dt = g.step();
    let (xs, ws) = gauss_legendre(12);
    let step = expm_oracle(a, dt);
    // nodes s in (0, dt): weight e^{-(dt - s)A}, linear interpolation factor s/dt
    let kernels: Vec<(CMatrix, f64, f64)> = xs
        .iter()
        .zip(&ws)
        .map(|(&x, &w)| {
            let s = 0.5 * dt * (x + 1.0);
            (expm_oracle(a, dt - s), 0.5 * dt * w, s / dt)
        })
        .collect();
    let mut values = vec![CVector::zeros(g.dim())];
    for j in 0..g.intervals() {
        let (g0, g1) = (g.value(j), g.value(j + 1));
        let mut next = step.apply(values.last().unwrap());
        for (k, w, frac) in &kernels {
            let gs = &g0.scale(Complex64::new(1.0 - frac, 0.0)) + &g1.scale(Complex64::new(*frac, 0.0));
            next.axpy(Complex64::new(*w, 0.0), &k.apply(&gs));
        }
        values.push(next);
    }
    Ok(g.with_values(values))
}

/// Decay table along rays `λ = k + r e^{i phi}`.
#[derive(Clone, Debug)]
pub struct DecayTable {
    pub table: Table,
    pub verdict: bool,
    pub notes: Vec<String>,
}

const RAY_ANGLES: [f64; 3] = [0.0, PI / 4.0, -PI / 4.0];

/// Default radii for the decay checks: 25 geometric points in `[1, 1e4]`.
pub fn default_radii() -> Vec<f64> {
    (0..25).map(|k| 10f64.powf(k as f64 / 6.0)).collect()
}

/// Tabulates `||(B+λ)^{-1} g||_p`; passes when the last entry along each ray
/// is at most 5% of the first.
pub fn riemann_lebesgue_check(g: &GridFunction, k: f64, radii: &[f64]) -> DecayTable {
    let mut table = Table::new("resolvent_decay", &["ray_angle", "abs_lambda", "norm"]);
    let mut verdict = true;
    let mut notes = Vec::new();
    for phi in RAY_ANGLES {
        let norms: Vec<(f64, f64)> = radii
            .iter()
            .map(|&r| {
                let l = k + Complex64::from_polar(r, phi);
                (l.norm(), b_resolvent(g, l).norm())
            })
            .collect();
        for &(l, v) in &norms {
            table.push([phi, l, v]);
        }
        if let (Some(first), Some(last)) = (norms.first(), norms.last()) {
            if !(last.1 <= 0.05 * first.1) {
                verdict = false;
                notes.push(format!("ray {phi}: last/first = {}", last.1 / first.1));
            }
        }
    }
    DecayTable { table, verdict, notes }
}

/// Tabulates `|λ| ||(B+λ)^{-1} g||_p` and checks
/// `λ(B+λ)^{-1}g = g - (B+λ)^{-1}g'` at each sample.
pub fn derivative_decay_check(g: &GridFunction, k: f64, radii: &[f64]) -> Result<DecayTable> {
    let scale = g.sup_norm();
    if g.value(0).norm() > 1e-14 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::PreconditionViolated("g(0) must vanish".into()));
    }
    let slopes = g.slopes();
    let gnorm = g.norm();
    let mut table = Table::new("scaled_resolvent", &["ray_angle", "abs_lambda", "scaled_norm", "identity_residual"]);
    let mut verdict = true;
    let mut notes = Vec::new();
    for phi in RAY_ANGLES {
        let mut scaled = Vec::with_capacity(radii.len());
        for &r in radii {
            let l = k + Complex64::from_polar(r, phi);
            let h = b_resolvent(g, l);
            let hd = b_resolvent_piecewise_constant(g, &slopes, l);
            let resid = if gnorm > 0.0 { h.scale(l).sub(&g.sub(&hd)).norm() / gnorm } else { 0.0 };
            let s = l.norm() * h.norm();
            table.push([phi, l.norm(), s, resid]);
            scaled.push(s);
            if !(resid <= 1e-6) {
                verdict = false;
                notes.push(format!("ray {phi}, |λ| = {}: identity residual {resid}", l.norm()));
            }
        }
        let third = scaled.len() / 3;
        if third > 0 {
            let mid = scaled[third..2 * third].iter().copied().fold(0.0, f64::max);
            let tail = scaled[2 * third..].iter().copied().fold(0.0, f64::max);
            if !(tail.is_finite() && tail <= 1.1 * mid + 1e-300) {
                verdict = false;
                notes.push(format!("ray {phi}: scaled norms still growing ({mid} -> {tail})"));
            }
        }
    }
    Ok(DecayTable { table, verdict, notes })
}

/// `(||(B+λ)^{-1}g||_p, (1 - e^{-Re λ T})/Re λ · ||g||_p)` for `Re λ > 0`.
pub fn young_bound(g: &GridFunction, lambda: Complex64) -> Result<(f64, f64)> {
    if !(lambda.re > 0.0) {
        return Err(Error::PreconditionViolated("the convolution bound needs Re λ > 0".into()));
    }
    let lhs = b_resolvent(g, lambda).norm();
    let factor = (1.0 - (-lambda.re * g.horizon()).exp()) / lambda.re;
    Ok((lhs, factor * g.norm()))
}

/// `max_j ||f'(t_j) + A f(t_j) - g(t_j)||` with forward differences.
pub fn discrete_equation_residual(a: &CMatrix, f: &GridFunction, g: &GridFunction) -> f64 {
    let inv = Complex64::new(1.0 / f.step(), 0.0);
    (0..f.intervals())
        .map(|j| {
            let d = (f.value(j + 1) - f.value(j)).scale(inv);
            (&(&d + &a.apply(f.value(j))) - g.value(j)).norm()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> CVector {
        CVector::from_real(&[1.0])
    }

    fn scalar_grid<F: Fn(f64) -> f64>(m: usize, f: F) -> GridFunction {
        GridFunction::scalar_times(1.0, m, 2.0, &one(), f).unwrap()
    }

    fn max_err<F: Fn(f64) -> f64>(h: &GridFunction, f: F) -> f64 {
        (0..=h.intervals())
            .map(|j| (h.value(j).get(0) - f(h.time(j))).norm())
            .fold(0.0, f64::max)
    }

    fn op(diag: &[f64]) -> SectorialOperator {
        SectorialOperator::asserted(CMatrix::from_real_diagonal(diag), 1.5, 3.0 * PI / 4.0).unwrap()
    }

    #[test]
    fn grid_norm_uses_trapezoid_weights() {
        let g = scalar_grid(4, |_| 1.0);
        assert!((g.norm() - 1.0).abs() < 1e-15);
        let g = GridFunction::scalar_times(2.0, 2, 3.0, &one(), |t| t).unwrap();
        // dt = 1: (0.5*0 + 1 + 0.5*8)^{1/3}
        assert!((g.norm() - 5f64.powf(1.0 / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn weights_match_closed_form_across_the_switch() {
        for mu in [0.49, 0.51, 0.1, 2.0] {
            let m = Complex64::new(mu, 0.3);
            let (e1, e2) = phi_weights(m);
            let e = (-m).exp();
            assert!((e1 - (1.0 - e) / m).norm() < 1e-14);
            assert!((e2 - (1.0 - e * (1.0 + m)) / (m * m)).norm() < 1e-13);
        }
    }

    #[test]
    fn resolvent_closed_forms() {
        let g = scalar_grid(50, |_| 1.0);
        assert!(max_err(&b_resolvent(&g, ZERO), |t| t) < 1e-14);
        let h = b_resolvent(&g, Complex64::new(1.0, 0.0));
        assert!(max_err(&h, |t| 1.0 - (-t).exp()) < 1e-14);
        assert!((h.value(50).get(0).re - 0.632121).abs() < 1e-6);
        assert_eq!(h.value(0).get(0), ZERO);
        let g = scalar_grid(400, |t| (-t).exp());
        let h = b_resolvent(&g, Complex64::new(1.0, 0.0));
        assert!(max_err(&h, |t| t * (-t).exp()) < 1e-6);
    }

    #[test]
    fn first_resolvent_identity() {
        let g = scalar_grid(400, |t| (3.0 * t).sin());
        let (l, mu) = (Complex64::new(2.0, 1.0), Complex64::new(0.5, -3.0));
        let left = b_resolvent(&g, l).sub(&b_resolvent(&g, mu));
        let right = b_resolvent(&b_resolvent(&g, mu), l).scale(mu - l);
        assert!(left.max_abs_diff(&right) < 1e-5);
    }

    #[test]
    fn scalar_solutions() {
        let o = op(&[1.0]);
        let f = parabolic_solve(&o, &scalar_grid(200, |_| 1.0)).unwrap();
        assert!(max_err(&f, |t| 1.0 - (-t).exp()) <= 1e-4);
        assert_eq!(f.value(0).get(0), ZERO);
        let f = parabolic_solve(&o, &scalar_grid(200, |t| (-t).exp())).unwrap();
        assert!(max_err(&f, |t| t * (-t).exp()) <= 1e-4);
        assert!((f.value(200).get(0).re - 0.367879).abs() < 1e-5);
        let z = parabolic_solve(&o, &GridFunction::zeros(1.0, 10, 2.0, 1).unwrap()).unwrap();
        assert!(z.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn matrix_solution_matches_duhamel_oracle() {
        let a = CMatrix::from_real_rows(&[&[2.0, 1.0], &[0.0, 3.0]]).unwrap();
        let (o, _) = SectorialOperator::certify(a.clone(), 3.0 * PI / 4.0, 400).unwrap();
        let g = GridFunction::from_fn(1.0, 100, 2.0, |t| CVector::from_real(&[t.cos(), 1.0 - t])).unwrap();
        let f = parabolic_solve(&o, &g).unwrap();
        let oracle = duhamel_oracle(&a, &g).unwrap();
        assert!(f.max_abs_diff(&oracle) < 1e-8);
        assert!(discrete_equation_residual(&a, &f, &g) < 0.05);
    }

    #[test]
    fn duhamel_oracle_closed_form() {
        let a = CMatrix::from_real_diagonal(&[1.0]);
        let f = duhamel_oracle(&a, &scalar_grid(20, |_| 1.0)).unwrap();
        assert!(max_err(&f, |t| 1.0 - (-t).exp()) < 1e-14);
    }

    #[test]
    fn decay_tables() {
        let r = riemann_lebesgue_check(&scalar_grid(200, |_| 1.0), 1.0, &default_radii());
        assert!(r.verdict, "{:?}", r.notes);
        let r = riemann_lebesgue_check(&scalar_grid(200, |_| 0.0), 1.0, &default_radii());
        assert!(r.table.rows.iter().all(|row| row[2] == "0"));
        let spike = scalar_grid(200, |t| if (t - 0.5).abs() < 1e-9 { 1.0 } else { 0.0 });
        assert!(riemann_lebesgue_check(&spike, 1.0, &default_radii()).verdict);

        let d = derivative_decay_check(&scalar_grid(200, |t| t), 1.0, &default_radii()).unwrap();
        assert!(d.verdict, "{:?}", d.notes);
        let d = derivative_decay_check(&scalar_grid(200, |t| (PI * t).sin()), 1.0, &default_radii()).unwrap();
        assert!(d.verdict, "{:?}", d.notes);
        assert!(matches!(
            derivative_decay_check(&scalar_grid(10, |_| 1.0), 1.0, &default_radii()),
            Err(Error::PreconditionViolated(_))
        ));
    }

    #[test]
    fn young_bound_holds() {
        let g = scalar_grid(400, |t| 1.0 + t * t);
        for l in [Complex64::new(0.5, 0.0), Complex64::new(3.0, 5.0), Complex64::new(40.0, -2.0)] {
            let (lhs, rhs) = young_bound(&g, l).unwrap();
            assert!(lhs <= rhs * (1.0 + 10.0 / 400.0), "{lhs} > {rhs}");
        }
    }
}
