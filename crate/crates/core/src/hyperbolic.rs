//! Second-order problems `f'' + Af = g`, `f(0) = f'(0) = 0`, for matrices
//! whose resolvent decays on the parabola region `Q(c^2)`, solved by a
//! contour integral over the vertical line `Re z = -c`.
//!
//! Writing `B` for the time derivative with zero initial value, the problem
//! is `(B^2 + A) f = g` and `B^2 + A = (B + i√A)(B - i√A)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::contour::{discretize_truncated, integrate_adaptive_truncated, ContourSpec, DiscretizeOptions, DiscretizedContour, QuadratureInfo};
use crate::error::{Error, Result};
use crate::funcalc::frac_power_neg;
use crate::linalg::{eig_decompose, op_norm, CMatrix, CVector, Lu, ZERO};
use crate::parabolic::{b_resolvent, b_resolvent_flat, GridFunction};
use crate::report::Table;
use crate::sectorial::{certify_parabola_class, CertificationReport, SectorialOperator, DEFAULT_SAMPLE_BUDGET};

/// Default quadrature tolerance of the line solver.
pub const DEFAULT_HYPERBOLIC_TOL: f64 = 1e-6;
/// Accepted `||√A √A - A|| / max(1, ||A||)`.
pub const SQRT_TOL: f64 = 1e-8;
/// Accepted relative residual of each identity.
pub const IDENTITY_TOL: f64 = 1e-3;
/// Quadrature tolerance of the identity checks.
pub const IDENTITY_QUAD_TOL: f64 = 1e-5;
/// Largest phase change `|Im z| t` across one panel at level 0.
const PANEL_RADIANS: f64 = 40.0;
/// Truncation of the inner, non-oscillating line integrals.
const INNER_RADIUS: f64 = 1e10;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// Eigenvectors of `A` with the square roots of its eigenvalues.
#[derive(Clone, Debug)]
struct Modal {
    vectors: CMatrix,
    inverse: CMatrix,
}

impl Modal {
    /// `V diag(d) V^{-1}`.
    fn assemble(&self, d: &[Complex64]) -> CMatrix {
        let n = d.len();
        let mut rows = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                rows.push((0..n).map(|k| self.vectors.get(i, k) * d[k] * self.inverse.get(k, j)).sum());
            }
        }
        CMatrix::new(n, rows).expect("square")
    }
}

#[derive(Clone, Debug)]
pub struct HyperbolicProblem {
    op: SectorialOperator,
    c: f64,
    sqrt_a: CMatrix,
    inv_sqrt_a: CMatrix,
    sqrt_eigs: Vec<Complex64>,
    modal: Option<Modal>,
    g: GridFunction,
    certification: CertificationReport,
    sqrt_residual: f64,
    sqrt_eigen_gap: Option<f64>,
}

impl HyperbolicProblem {
    /// Certifies `Q(c^2)`, computes `√A` by inverting `A^{-1/2}` and checks
    /// that `A^{3/2} g` is finite on the grid.
    pub fn new(op: SectorialOperator, c: f64, g: GridFunction) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::PreconditionViolated(format!("line offset {c} must be positive")));
        }
        if g.dim() != op.dim() {
            return Err(Error::DimensionMismatch { expected: op.dim(), actual: g.dim() });
        }
        let certification = match certify_parabola_class(op.matrix(), c * c, DEFAULT_SAMPLE_BUDGET) {
            Ok(r) => r,
            Err(Error::SpectrumInRegion { z }) => {
                return Err(Error::RegionViolation(format!(
                    "-λ = {z} lies in the parabola region of parameter {}",
                    c * c
                )))
            }
            Err(Error::NotSectorial(m)) => return Err(Error::RegionViolation(m)),
            Err(e) => return Err(e),
        };
        if !certification.verdict {
            return Err(Error::RegionViolation(format!(
                "resolvent decay on the parabola region of parameter {} not certified: {}",
                c * c,
                certification.notes.join("; ")
            )));
        }
        let base = if op.angle() > 0.0 { op.clone() } else { op.extend() };
        let inv_sqrt_a = frac_power_neg(&base, 0.5)?;
        let sqrt_a = Lu::factor(&inv_sqrt_a, ZERO)?.inverse();
        let a = op.matrix();
        let sqrt_residual = op_norm(&(&(&sqrt_a * &sqrt_a) - a)) / op.norm().max(1.0);
        if !(sqrt_residual <= SQRT_TOL) {
            return Err(Error::NoConvergence(format!("square root residual {sqrt_residual} exceeds {SQRT_TOL}")));
        }
        let eig = eig_decompose(a).ok();
        let sqrt_eigen_gap = eig
            .as_ref()
            .map(|e| e.map(|l| l.sqrt()).max_abs_diff(&sqrt_a) / op_norm(&sqrt_a).max(f64::MIN_POSITIVE));
        let (sqrt_eigs, modal) = match (&eig, sqrt_eigen_gap) {
            (Some(e), Some(gap)) if gap <= SQRT_TOL => (
                e.eigenvalues.iter().map(|l| l.sqrt()).collect(),
                Some(Modal { vectors: e.vectors.clone(), inverse: e.inverse_vectors.clone() }),
            ),
            _ => (op.eigenvalues().iter().map(|l| l.sqrt()).collect(), None),
        };
        let p = Self {
            op,
            c,
            sqrt_a,
            inv_sqrt_a,
            sqrt_eigs,
            modal,
            g,
            certification,
            sqrt_residual,
            sqrt_eigen_gap,
        };
        p.check_data(&p.g)?;
        Ok(p)
    }

    /// Certifies `A` on the positive ray first.
    pub fn from_matrix(a: CMatrix, c: f64, g: GridFunction) -> Result<Self> {
        let (op, _) = SectorialOperator::certify(a, 0.0, 100).map_err(|e| match e {
            Error::SpectrumInSector { z } => {
                Error::RegionViolation(format!("spectrum meets the negative ray at -λ = {z}"))
            }
            other => other,
        })?;
        Self::new(op, c, g)
    }

    fn check_data(&self, g: &GridFunction) -> Result<()> {
        if g.dim() != self.op.dim() {
            return Err(Error::DimensionMismatch { expected: self.op.dim(), actual: g.dim() });
        }
        let a32 = self.op.matrix() * &self.sqrt_a;
        for (j, v) in g.values().iter().enumerate() {
            if !a32.apply(v).is_finite() {
                return Err(Error::HypothesisViolation(format!("A^(3/2) g is not finite at grid point {j}")));
            }
        }
        Ok(())
    }

    /// The same operator with new data.
    pub fn with_data(&self, g: GridFunction) -> Result<Self> {
        self.check_data(&g)?;
        Ok(Self { g, ..self.clone() })
    }

    pub fn op(&self) -> &SectorialOperator {
        &self.op
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn sqrt_a(&self) -> &CMatrix {
        &self.sqrt_a
    }

    pub fn inv_sqrt_a(&self) -> &CMatrix {
        &self.inv_sqrt_a
    }

    pub fn data(&self) -> &GridFunction {
        &self.g
    }

    pub fn certification(&self) -> &CertificationReport {
        &self.certification
    }

    pub fn sqrt_residual(&self) -> f64 {
        self.sqrt_residual
    }

    /// Relative distance to the eigendecomposition square root, when `A`
    /// is diagonalizable.
    pub fn sqrt_eigen_gap(&self) -> Option<f64> {
        self.sqrt_eigen_gap
    }

    /// `(Im, |Re + line_c|)` of the poles `±i√λ` seen from `Re z = -line_c`.
    fn poles(&self, line_c: f64) -> Vec<(f64, f64)> {
        self.sqrt_eigs
            .iter()
            .flat_map(|s| [I * s, -I * s])
            .map(|p| (p.im, (p.re + line_c).abs()))
            .collect()
    }

    fn spectral_scale(&self) -> f64 {
        self.op.max_eigen_modulus().sqrt().max(self.c)
    }
}

/// `(±i√A + z)^{-1} = z(A+z^2)^{-1} ∓ i√A(A+z^2)^{-1}` for `Re z <= -c`.
pub fn resolvent_split(p: &HyperbolicProblem, z: Complex64, branch: Branch) -> Result<CMatrix> {
    if !(z.re <= -p.c * (1.0 - 1e-12)) {
        return Err(Error::RegionViolation(format!("Re z = {} > -{}", z.re, p.c)));
    }
    let r = Lu::factor(p.op.matrix(), z * z)
        .map_err(|_| Error::RegionViolation(format!("A + z^2 is singular at z = {z}")))?
        .inverse();
    let cross = (&p.sqrt_a * &r).scale(I * branch.sign());
    Ok(&r.scale(z) - &cross)
}

/// `(±i√A + z)^{-1}` by direct factorization.
pub fn resolvent_direct(p: &HyperbolicProblem, z: Complex64, branch: Branch) -> Result<CMatrix> {
    Ok(Lu::factor(&p.sqrt_a.scale(I * branch.sign()), z)?.inverse())
}

/// Post-knee samples must be non-increasing and fall to a tenth of their
/// first value.
pub fn decay_verdict(seq: &[f64]) -> bool {
    seq.len() >= 2
        && seq.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9))
        && seq[seq.len() - 1] <= 0.1 * seq[0]
}

#[derive(Clone, Debug)]
pub struct SplitDecay {
    pub table: Table,
    pub verdict: bool,
    pub notes: Vec<String>,
}

/// Tabulates `||(±i√A + z)^{-1} A^{-1/2}||` along rays into `Re z <= -c`.
pub fn decay_split_check(p: &HyperbolicProblem, per_sweep: usize) -> Result<SplitDecay> {
    let per_sweep = per_sweep.max(8);
    let norm = p.op.norm();
    let knee = 2.0 * (norm.sqrt() + p.c);
    let r_max = 1e4 * (norm + p.c);
    let radii: Vec<f64> = (0..per_sweep)
        .map(|k| 1e-2 * p.c * (r_max / (1e-2 * p.c)).powf(k as f64 / (per_sweep - 1) as f64))
        .collect();
    let sweeps = [
        ("left", Complex64::new(-1.0, 0.0)),
        ("up_left", Complex64::from_polar(1.0, 0.75 * PI)),
        ("down_left", Complex64::from_polar(1.0, -0.75 * PI)),
        ("line_up", I),
        ("line_down", -I),
    ];
    let mut table = Table::new("split_decay", &["sweep", "branch", "abs_z", "re_z", "im_z", "norm"]);
    let mut verdict = true;
    let mut notes = Vec::new();
    for (name, dir) in sweeps {
        for branch in [Branch::Plus, Branch::Minus] {
            let zs: Vec<Complex64> = radii.iter().map(|&r| Complex64::new(-p.c, 0.0) + dir * r).collect();
            let vals = zs
                .par_iter()
                .map(|&z| Ok(op_norm(&(&resolvent_split(p, z, branch)? * &p.inv_sqrt_a))))
                .collect::<Vec<Result<f64>>>()
                .into_iter()
                .collect::<Result<Vec<f64>>>()?;
            let label = if branch == Branch::Plus { "+" } else { "-" };
            let mut post = Vec::new();
            for (z, v) in zs.iter().zip(&vals) {
                table.push([name.to_string(), label.to_string(), z.norm().to_string(), z.re.to_string(), z.im.to_string(), v.to_string()]);
                if z.norm() >= knee {
                    post.push(*v);
                }
            }
            if !decay_verdict(&post) {
                verdict = false;
                notes.push(format!("sweep {name}{label} does not decay"));
            }
        }
    }
    Ok(SplitDecay { table, verdict, notes })
}

/// Sizes of grid data entering the tail model.
struct DataScales {
    sup: f64,
    slope: f64,
    start: f64,
    start_slope: f64,
    variation: f64,
}

fn data_scales(u: &GridFunction) -> DataScales {
    let s = u.slopes();
    DataScales {
        sup: u.sup_norm(),
        slope: s.iter().map(|v| v.norm()).fold(0.0, f64::max),
        start: u.value(0).norm(),
        start_slope: s[0].norm(),
        variation: s.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum(),
    }
}

/// Tail bound for line integrands of the form
/// `smooth |z|^-3 + oscillating e^{-zt} |z|^-3` with `|e^{-zt}| <= e^{growth t}`.
/// The oscillating part integrates to `O(1/(t R^3))` beyond `R`.
struct TailModel {
    smooth: f64,
    oscillating: f64,
    growth: f64,
    horizon: f64,
}

impl TailModel {
    fn tail(&self, r: f64) -> f64 {
        let near = (4.0 * self.growth / r).exp() / (2.0 * r * r);
        let far = 2.0 * (self.growth * self.horizon).exp() / (self.horizon * r.powi(3));
        (self.smooth / (2.0 * r * r) + self.oscillating * near.max(far)) / PI
    }

    fn radius(&self, budget: f64, floor: f64) -> Result<f64> {
        let mut hi = floor;
        while self.tail(hi) > budget {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::QuadratureFailure(format!("line truncation beyond {hi} for tail budget {budget}")));
            }
        }
        if hi == floor {
            return Ok(hi);
        }
        let mut lo = 0.5 * hi;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.tail(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }
}

/// Largest sampled value of `f` on `Re z = -line_c`.
fn sup_on_line<F: Fn(Complex64) -> Result<f64> + Sync>(line_c: f64, reach: f64, extra: &[f64], f: F) -> Result<f64> {
    let mut ys: Vec<f64> = vec![0.0];
    for k in 0..200 {
        let y = 1e-3 * (reach / 1e-3).powf(k as f64 / 199.0);
        ys.extend([y, -y]);
    }
    ys.extend_from_slice(extra);
    let vals = ys
        .par_iter()
        .map(|&y| f(Complex64::new(-line_c, y)))
        .collect::<Vec<Result<f64>>>()
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    Ok(1.05 * vals.into_iter().fold(0.0, f64::max))
}

struct LinePlan {
    spec: ContourSpec,
    opts: DiscretizeOptions,
    floor: f64,
}

fn line_plan(p: &HyperbolicProblem, line_c: f64, horizon: f64) -> Result<LinePlan> {
    let poles = p.poles(line_c);
    let width = poles
        .iter()
        .map(|&(_, d)| 0.5 * d)
        .fold(line_c, f64::min)
        .max(1e-6 * line_c);
    let focus: Vec<f64> = poles.iter().map(|&(y, _)| y).collect();
    let reach = focus.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    let opts = DiscretizeOptions {
        scale: Some(line_c),
        spectral_scale: Some(p.spectral_scale()),
        max_panel_width: Some(PANEL_RADIANS / horizon),
        focus,
        focus_width: width,
    };
    Ok(LinePlan {
        spec: ContourSpec::vertical_line(line_c)?,
        opts,
        floor: (4.0 * line_c.max(p.spectral_scale())).max(reach + 8.0 * width),
    })
}

fn quadrature_failure(e: Error) -> Error {
    match e {
        Error::NoConvergence(m) => Error::QuadratureFailure(m),
        other => other,
    }
}

/// `f(t) = (1/2 pi i) ∫_{Re z = -c} (A+z^2)^{-1} ∫_0^t e^{z(x-t)} g(x) dx dz`.
pub fn hyperbolic_solve(p: &HyperbolicProblem) -> Result<GridFunction> {
    hyperbolic_solve_with(p, p.c, DEFAULT_HYPERBOLIC_TOL).map(|r| r.0)
}

/// As [`hyperbolic_solve`] on the line `Re z = -line_c`, `line_c >= c`.
pub fn hyperbolic_solve_with(p: &HyperbolicProblem, line_c: f64, tol: f64) -> Result<(GridFunction, QuadratureInfo)> {
    if !(line_c >= p.c * (1.0 - 1e-12)) {
        return Err(Error::RegionViolation(format!("line offset {line_c} is below the certified {}", p.c)));
    }
    let g = &p.g;
    let a = p.op.matrix();
    let plan = line_plan(p, line_c, g.horizon())?;
    let k = sup_on_line(line_c, 1e4 * plan.floor, &plan.opts.focus, |z| {
        let r = Lu::factor(a, z * z).map_err(|_| Error::RegionViolation(format!("A + z^2 is singular at z = {z}")))?;
        Ok((1.0 + z.norm_sqr()) * op_norm(&r.inverse()))
    })?;
    let d = data_scales(g);
    let model = TailModel {
        smooth: k * (d.sup + d.slope),
        oscillating: k * (d.start + d.start_slope + d.variation),
        growth: line_c,
        horizon: g.horizon(),
    };
    let budget = tol / 100.0 * d.sup.max(f64::MIN_POSITIVE);
    let radius = model.radius(budget, plan.floor)?;
    let n = g.dim();
    let res = integrate_adaptive_truncated(&plan.spec, radius, model.tail(radius), tol, &plan.opts, |z| {
        let mut h = b_resolvent_flat(g, z);
        let lu = Lu::factor(a, z * z)?;
        for chunk in h.chunks_mut(n) {
            lu.solve_slice(chunk);
        }
        Ok(h)
    })
    .map_err(quadrature_failure)?;
    Ok((g.from_flat(&res.value, n)?, res.info))
}

/// `f(t) = ∫_0^t (√A)^{-1} sin((t-x)√A) g(x) dx` for diagonalizable `A`
/// with positive spectrum, exact for the piecewise-linear interpolant of `g`.
pub fn sine_kernel_oracle(p: &HyperbolicProblem) -> Result<GridFunction> {
    sine_kernel_oracle_for(p.op.matrix(), &p.g)
}

pub fn sine_kernel_oracle_for(a: &CMatrix, g: &GridFunction) -> Result<GridFunction> {
    let eig = eig_decompose(a)?;
    for l in &eig.eigenvalues {
        if !(l.re > 0.0 && l.im.abs() <= 1e-10 * l.re) {
            return Err(Error::PreconditionViolated(format!("eigenvalue {l} is not positive")));
        }
    }
    let omegas: Vec<f64> = eig.eigenvalues.iter().map(|l| l.re.sqrt()).collect();
    let dt = g.step();
    let to_modal = |v: &CVector| eig.inverse_vectors.apply(v);
    let n = g.dim();
    let mut f = vec![ZERO; n];
    let mut v = vec![ZERO; n];
    let mut out = vec![CVector::zeros(n)];
    for j in 0..g.intervals() {
        let (g0, g1) = (to_modal(g.value(j)), to_modal(g.value(j + 1)));
        for i in 0..n {
            let w = omegas[i];
            let w2 = w * w;
            let a0 = g0.get(i);
            let s = (g1.get(i) - a0) / dt;
            // homogeneous part about the particular solution (a0 + s τ)/w^2
            let y0 = f[i] - a0 / w2;
            let y1 = v[i] - s / w2;
            let (sn, cs) = (w * dt).sin_cos();
            f[i] = y0 * cs + y1 * sn / w + (a0 + s * dt) / w2;
            v[i] = -y0 * w * sn + y1 * cs + s / w2;
        }
        out.push(eig.vectors.apply(&CVector::new(f.clone())?));
    }
    GridFunction::new(g.horizon(), g.exponent(), out)
}

/// `max_j ||f''(t_j) + A f(t_j) - g(t_j)||` over interior points, with
/// central second differences.
pub fn discrete_equation_residual(a: &CMatrix, f: &GridFunction, g: &GridFunction) -> f64 {
    let inv = Complex64::new(1.0 / (f.step() * f.step()), 0.0);
    (1..f.intervals())
        .map(|j| {
            let d2 = (&(f.value(j + 1) + f.value(j - 1)) - &f.value(j).scale(Complex64::new(2.0, 0.0))).scale(inv);
            (&(&d2 + &a.apply(f.value(j))) - g.value(j)).norm()
        })
        .fold(0.0, f64::max)
}

/// Second derivative on the grid, central in the interior and linearly
/// extrapolated at both ends.
pub fn second_derivative(g: &GridFunction) -> Result<GridFunction> {
    let m = g.intervals();
    if m < 3 {
        return Err(Error::PreconditionViolated("second derivative needs at least 3 intervals".into()));
    }
    let inv = Complex64::new(1.0 / (g.step() * g.step()), 0.0);
    let two = Complex64::new(2.0, 0.0);
    let mut d: Vec<CVector> = vec![CVector::zeros(g.dim())];
    for j in 1..m {
        d.push((&(g.value(j + 1) + g.value(j - 1)) - &g.value(j).scale(two)).scale(inv));
    }
    d[0] = &d[1].scale(two) - &d[2];
    let end = &d[m - 1].scale(two) - &d[m - 2];
    d.push(end);
    GridFunction::new(g.horizon(), g.exponent(), d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub lhs: GridFunction,
    pub rhs: GridFunction,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
    pub inner_c: f64,
    pub outer_c: f64,
    pub inner_info: QuadratureInfo,
    pub outer_info: QuadratureInfo,
    pub pass: bool,
}

impl IdentityReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new("identity_residuals", &["identity", "residual", "lhs_norm", "pass"]);
        for c in &self.checks {
            t.push([
                c.name.to_string(),
                c.residual.to_string(),
                c.lhs.sup_norm().to_string(),
                (c.residual <= IDENTITY_TOL).to_string(),
            ]);
        }
        t
    }

    pub fn residual(&self, name: &str) -> Option<f64> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.residual)
    }
}

fn kernel(z: Complex64, l: Complex64) -> Complex64 {
    1.0 / ((z + l) * (z - l))
}

/// Line `Re x = -line_c` for an inner integral whose integrand has a
/// near-pole at height `near`.
fn inner_line(p: &HyperbolicProblem, line_c: f64, near: f64, width: f64) -> Result<DiscretizedContour> {
    // the kernel has poles at x = z and x = -z
    let mut focus = vec![near, -near];
    let mut w = width;
    for (y, d) in p.poles(line_c) {
        focus.push(y);
        w = w.min(0.5 * d);
    }
    let opts = DiscretizeOptions {
        scale: Some(line_c),
        spectral_scale: Some(p.spectral_scale()),
        max_panel_width: None,
        focus,
        focus_width: w.max(1e-6 * line_c),
    };
    let radius = INNER_RADIUS.max(near.abs() * 1e3);
    discretize_truncated(&ContourSpec::vertical_line(line_c)?, radius, 0, &opts)
}

/// `(1/2 pi i) Σ w k(x)` and `(1/2 pi i) Σ w k(x) (i√A + shift(x))^{-1}` over
/// an inner line, in eigen coordinates when available.
fn kernel_sums<K, S>(p: &HyperbolicProblem, line: &DiscretizedContour, k: K, shift: S) -> Result<(Complex64, CMatrix)>
where
    K: Fn(Complex64) -> Complex64,
    S: Fn(Complex64) -> Complex64,
{
    let norm = 1.0 / (2.0 * PI * I);
    let mut scalar = ZERO;
    match &p.modal {
        Some(modal) => {
            let mut diag = vec![ZERO; p.sqrt_eigs.len()];
            for (&x, &w) in line.nodes.iter().zip(&line.weights) {
                let kw = w * k(x);
                scalar += kw;
                let s = shift(x);
                for (d, sigma) in diag.iter_mut().zip(&p.sqrt_eigs) {
                    *d += kw / (I * sigma + s);
                }
            }
            diag.iter_mut().for_each(|d| *d *= norm);
            Ok((scalar * norm, modal.assemble(&diag)))
        }
        None => {
            let is = p.sqrt_a.scale(I);
            let mut m = CMatrix::zeros(p.sqrt_eigs.len());
            for (&x, &w) in line.nodes.iter().zip(&line.weights) {
                let kw = w * k(x);
                scalar += kw;
                m = &m + &Lu::factor(&is, shift(x))?.inverse().scale(kw);
            }
            Ok((scalar * norm, m.scale(norm)))
        }
    }
}

fn apply_flat(m: &CMatrix, flat: &[Complex64], n: usize) -> Vec<Complex64> {
    flat.chunks(n)
        .flat_map(|c| m.apply(&CVector::new(c.to_vec()).expect("chunk")).entries().to_vec())
        .collect()
}

fn solve_flat(lu: &Lu, flat: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = flat.to_vec();
    for c in out.chunks_mut(n) {
        lu.solve_slice(c);
    }
    out
}

/// `-(u(t) - e^{-xt} u(0)) / x^2`, the leading behaviour of
/// `(S - x)^{-1}(B + x)^{-1} u`; its line integral is `t u(0)`.
fn leading_term(u: &GridFunction, x: Complex64) -> Vec<Complex64> {
    let n = u.dim();
    let u0 = u.value(0).entries();
    let mut out = Vec::with_capacity((u.intervals() + 1) * n);
    for j in 0..=u.intervals() {
        let e = (-x * u.time(j)).exp();
        for i in 0..n {
            out.push(-(u.value(j).get(i) - e * u0[i]) / (x * x));
        }
    }
    out
}

fn add_leading_integral(flat: &mut [Complex64], u: &GridFunction) {
    let n = u.dim();
    for j in 0..=u.intervals() {
        let t = u.time(j);
        for i in 0..n {
            flat[j * n + i] += t * u.value(0).get(i);
        }
    }
}

fn block(all: &[Complex64], k: usize, len: usize) -> &[Complex64] {
    &all[k * len..(k + 1) * len]
}

fn relative_residual(lhs: &GridFunction, rhs: &GridFunction, scale: f64) -> f64 {
    let diff = lhs.sub(rhs).sup_norm();
    let denom = lhs.sup_norm().max(scale);
    if denom == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / denom
    }
}

/// Evaluates both sides of the identities behind the line formula with
/// double line integrals over `Re z = -outer_c` and `Re λ = -c`.
///
/// Requires `g(0) = 0` and a vanishing initial slope on the grid.
pub fn verify_identities(p: &HyperbolicProblem, outer_c: f64) -> Result<IdentityReport> {
    let c = p.c;
    if !(outer_c > c && outer_c.is_finite()) {
        return Err(Error::PreconditionViolated(format!("outer offset {outer_c} must exceed {c}")));
    }
    let g = &p.g;
    let gs = data_scales(g);
    if gs.start > 1e-14 * gs.sup.max(f64::MIN_POSITIVE) {
        return Err(Error::PreconditionViolated("the identities need g(0) = 0".into()));
    }
    let slopes = g.slopes();
    if slopes[0].norm() > 2.0 * (&slopes[1] - &slopes[0]).norm() + 1e-12 * gs.sup {
        return Err(Error::PreconditionViolated("the identities need g'(0) = 0".into()));
    }
    let n = g.dim();
    let len = (g.intervals() + 1) * n;
    let a = p.op.matrix();
    let is = p.sqrt_a.scale(I);
    let neg_is = p.sqrt_a.scale(-I);
    let h = {
        let d2 = second_derivative(g)?;
        let ag = g.map_matrix(a);
        GridFunction::new(g.horizon(), g.exponent(), d2.values().iter().zip(ag.values()).map(|(x, y)| x + y).collect())?
    };
    let scale = gs.sup.max(f64::MIN_POSITIVE);
    let budget = IDENTITY_QUAD_TOL / 100.0 * scale;
    let width = 0.5 * (outer_c - c);
    let s_norm = op_norm(&p.sqrt_a);

    let resolvent_bound = |line_c: f64, plan: &LinePlan| {
        sup_on_line(line_c, 1e4 * plan.floor, &plan.opts.focus, |x| {
            let a = op_norm(&Lu::factor(&is, -x)?.inverse());
            let b = op_norm(&Lu::factor(&neg_is, -x)?.inverse());
            Ok((1.0 + x.norm()) * a.max(b))
        })
    };
    let model_for = |k: f64, line_c: f64, data: &[&GridFunction]| {
        let mut m = TailModel { smooth: 0.0, oscillating: 0.0, growth: line_c, horizon: g.horizon() };
        for u in data {
            let d = data_scales(u);
            m.smooth = m.smooth.max(k * ((1.0 + s_norm) * d.sup + d.slope));
            m.oscillating = m.oscillating.max(k * ((1.0 + s_norm) * d.start + d.start_slope + d.variation));
        }
        m
    };

    // inner pass over λ on Re λ = -c
    let lplan = line_plan(p, c, g.horizon())?;
    let kl = resolvent_bound(c, &lplan)?;
    let lmodel = model_for(kl, c, &[&h, g]);
    let lradius = lmodel.radius(budget, lplan.floor)?;
    let lres = integrate_adaptive_truncated(&lplan.spec, lradius, lmodel.tail(lradius), IDENTITY_QUAD_TOL, &lplan.opts, |l| {
        let uh = b_resolvent_flat(&h, l);
        let ug = b_resolvent_flat(g, l);
        let lu_m = Lu::factor(&neg_is, -l)?;
        let zc = inner_line(p, outer_c, l.im, width)?;
        // Σ k(z, λ) (iS - z)^{-1}
        let (s4, m2) = kernel_sums(p, &zc, |z| kernel(z, l), |z| -z)?;
        let rh = solve_flat(&lu_m, &uh, n);
        let rg = solve_flat(&lu_m, &ug, n);
        let mut out = apply_flat(&m2, &uh, n);
        out.extend(rh.iter().map(|v| -s4 * v));
        out.extend(rh.iter().zip(leading_term(&h, l)).map(|(v, m)| v - m));
        out.extend(rg.iter().zip(leading_term(g, l)).map(|(v, m)| v - m));
        Ok(out)
    })
    .map_err(quadrature_failure)?;
    let lv = &lres.value;
    let vanishing_minus = g.from_flat(&block(lv, 0, len).iter().map(|v| -v).collect::<Vec<_>>(), n)?;
    let vanishing_plus = g.from_flat(block(lv, 1, len), n)?;
    let mut vh = block(lv, 2, len).to_vec();
    add_leading_integral(&mut vh, &h);
    let vh = g.from_flat(&vh, n)?;
    let mut vg = block(lv, 3, len).to_vec();
    add_leading_integral(&mut vg, g);
    let vg = g.from_flat(&vg, n)?;

    // outer pass over z on Re z = -outer_c
    let zplan = line_plan(p, outer_c, g.horizon())?;
    let kz = resolvent_bound(outer_c, &zplan)?;
    let zmodel = model_for(kz, outer_c, &[&h, &vh, &vg]);
    let zradius = zmodel.radius(budget, zplan.floor)?;
    let zres = integrate_adaptive_truncated(&zplan.spec, zradius, zmodel.tail(zradius), IDENTITY_QUAD_TOL, &zplan.opts, |z| {
        let uh = b_resolvent_flat(&h, z);
        let uvh = b_resolvent_flat(&vh, z);
        let uvg = b_resolvent_flat(&vg, z);
        let lu = Lu::factor(&is, -z)?;
        let lc = inner_line(p, c, z.im, width)?;
        // Σ k(z, λ) (iS + λ)^{-1}
        let (s1, m3) = kernel_sums(p, &lc, |l| kernel(z, l), |l| l)?;
        let mut out: Vec<Complex64> = solve_flat(&lu, &uh, n).into_iter().map(|v| s1 * v).collect();
        out.extend(apply_flat(&m3, &uh, n));
        out.extend(solve_flat(&lu, &uvh, n).into_iter().zip(leading_term(&vh, z)).map(|(v, m)| v - m));
        out.extend(solve_flat(&lu, &uvg, n).into_iter().zip(leading_term(&vg, z)).map(|(v, m)| v - m));
        Ok(out)
    })
    .map_err(quadrature_failure)?;
    let zv = &zres.value;
    let half_minus = g.from_flat(block(zv, 0, len), n)?;
    let half_plus = g.from_flat(&block(zv, 1, len).iter().map(|v| -v).collect::<Vec<_>>(), n)?;
    let mut dbl = block(zv, 2, len).to_vec();
    add_leading_integral(&mut dbl, &vh);
    let double_inverse = g.from_flat(&dbl, n)?;
    let mut rep = block(zv, 3, len).to_vec();
    add_leading_integral(&mut rep, &vg);
    let representation = g.from_flat(&rep, n)?;

    // left-hand sides
    let integrated = b_resolvent(&g.map_matrix(&p.sqrt_a), ZERO);
    let half = g.scale(Complex64::new(0.5, 0.0));
    let lhs_minus = half.sub(&integrated.scale(0.5 * I));
    let lhs_plus = half.sub(&integrated.scale(-0.5 * I));
    let zero = g.scale(ZERO);
    let (solution, _) = hyperbolic_solve_with(p, c, IDENTITY_QUAD_TOL)?;

    let pairs: Vec<(&'static str, GridFunction, GridFunction)> = vec![
        ("half_minus", lhs_minus, half_minus),
        ("vanishing_minus", zero.clone(), vanishing_minus),
        ("half_plus", lhs_plus, half_plus),
        ("vanishing_plus", zero, vanishing_plus),
        ("double_inverse", g.clone(), double_inverse),
        ("solution_representation", solution, representation),
    ];
    let checks: Vec<IdentityCheck> = pairs
        .into_iter()
        .map(|(name, lhs, rhs)| {
            let residual = relative_residual(&lhs, &rhs, gs.sup);
            IdentityCheck { name, lhs, rhs, residual }
        })
        .collect();
    let pass = checks.iter().all(|c| c.residual <= IDENTITY_TOL);
    Ok(IdentityReport {
        checks,
        inner_c: c,
        outer_c,
        inner_info: lres.info,
        outer_info: zres.info,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(a: f64, c: f64, horizon: f64, m: usize, g: impl Fn(f64) -> f64) -> HyperbolicProblem {
        let grid = GridFunction::scalar_times(horizon, m, 2.0, &CVector::from_real(&[1.0]), g).unwrap();
        HyperbolicProblem::from_matrix(CMatrix::from_real_diagonal(&[a]), c, grid).unwrap()
    }

    fn max_err(f: &GridFunction, exact: impl Fn(f64) -> f64) -> f64 {
        (0..=f.intervals())
            .map(|j| (f.value(j).get(0) - exact(f.time(j))).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn split_scalar_values() {
        let p = scalar_problem(4.0, 2.0, 1.0, 10, |_| 1.0);
        let r = resolvent_split(&p, Complex64::new(-2.0, 0.0), Branch::Plus).unwrap();
        assert!((r.get(0, 0) - Complex64::new(-2.0, -2.0) / 8.0).norm() < 1e-12);
        let q = scalar_problem(1.0, 1.0, 1.0, 10, |_| 1.0);
        let r = resolvent_split(&q, Complex64::new(-1.0, 0.0), Branch::Minus).unwrap();
        assert!((r.get(0, 0) - 1.0 / Complex64::new(-1.0, -1.0)).norm() < 1e-12);
        assert!(matches!(
            resolvent_split(&p, Complex64::new(-1.0, 3.0), Branch::Plus),
            Err(Error::RegionViolation(_))
        ));
    }

    #[test]
    fn split_product_inverts_the_quadratic() {
        let q = scalar_problem(1.0, 1.0, 1.0, 10, |_| 1.0);
        let z = Complex64::new(-2.0, 0.0);
        // (i - 2)(-i - 2) = 5 = z^2 + A
        let plus = resolvent_split(&q, z, Branch::Plus).unwrap();
        let minus = resolvent_split(&q, z, Branch::Minus).unwrap();
        assert!(((&plus * &minus).get(0, 0) - 0.2).norm() < 1e-14);
        let prod = &(&q.op.matrix().shifted(z * z) * &plus) * &minus;
        assert!(prod.max_abs_diff(&CMatrix::identity(1)) < 1e-12);
    }

    #[test]
    fn square_root_matches_eigen_root() {
        let p = scalar_problem(4.0, 2.0, 1.0, 10, |_| 1.0);
        assert!((p.sqrt_a().get(0, 0) - 2.0).norm() < 1e-9);
        assert!(p.sqrt_eigen_gap().unwrap() < 1e-9);
        assert!(p.sqrt_residual() <= SQRT_TOL);
    }

    #[test]
    fn uncertified_operator_is_rejected() {
        let g = GridFunction::zeros(1.0, 10, 2.0, 1).unwrap();
        let bad = CMatrix::from_real_diagonal(&[-1.0]);
        assert!(matches!(HyperbolicProblem::from_matrix(bad, 1.0, g.clone()), Err(Error::RegionViolation(_))));
        // -λ = -1 + 10i lies inside the region of parameter 1
        let a = CMatrix::new(1, vec![Complex64::new(1.0, -10.0)]).unwrap();
        assert!(matches!(HyperbolicProblem::from_matrix(a, 1.0, g), Err(Error::RegionViolation(_))));
    }

    #[test]
    fn split_decay_tables() {
        let p = scalar_problem(4.0, 2.0, 1.0, 10, |_| 1.0);
        let d = decay_split_check(&p, 40).unwrap();
        assert!(d.verdict, "{:?}", d.notes);
        let q = scalar_problem(1.0, 1.0, 1.0, 10, |_| 1.0);
        assert!(decay_split_check(&q, 40).unwrap().verdict);
        assert!(!decay_verdict(&[1.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn sine_kernel_closed_forms() {
        let p = scalar_problem(4.0, 2.0, PI, 400, |_| 1.0);
        let f = sine_kernel_oracle(&p).unwrap();
        assert!(max_err(&f, |t| (1.0 - (2.0 * t).cos()) / 4.0) < 1e-13);
        let a = CMatrix::from_real_diagonal(&[1.0, 4.0]);
        let g = GridFunction::from_fn(PI, 100, 2.0, |_| CVector::from_real(&[1.0, 1.0])).unwrap();
        let f = sine_kernel_oracle_for(&a, &g).unwrap();
        for j in 0..=100 {
            let t = f.time(j);
            assert!((f.value(j).get(0).re - (1.0 - t.cos())).abs() < 1e-13);
            assert!((f.value(j).get(1).re - (1.0 - (2.0 * t).cos()) / 4.0).abs() < 1e-13);
        }
    }

    #[test]
    fn line_solution_matches_closed_form() {
        let p = scalar_problem(4.0, 2.0, PI, 400, |_| 1.0);
        let f = hyperbolic_solve(&p).unwrap();
        assert_eq!(f.value(0).get(0), ZERO);
        assert!(max_err(&f, |t| (1.0 - (2.0 * t).cos()) / 4.0) <= 1e-3);
        assert!((f.value(200).get(0).re - 0.5).abs() < 1e-4);
        assert!(discrete_equation_residual(p.op().matrix(), &f, p.data()) < 1e-3);

        let q = scalar_problem(1.0, 1.0, PI, 200, |_| 1.0);
        let f = hyperbolic_solve(&q).unwrap();
        assert!((f.value(200).get(0).re - 2.0).abs() < 1e-4);

        let z = q.with_data(GridFunction::zeros(PI, 20, 2.0, 1).unwrap()).unwrap();
        assert!(hyperbolic_solve(&z).unwrap().values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn line_offset_does_not_matter() {
        let p = scalar_problem(4.0, 2.0, 2.0, 100, |t| t * t);
        let (f1, _) = hyperbolic_solve_with(&p, 2.0, 1e-7).unwrap();
        let (f2, _) = hyperbolic_solve_with(&p, 2.5, 1e-7).unwrap();
        assert!(f1.max_abs_diff(&f2) < 1e-6);
        assert!(matches!(hyperbolic_solve_with(&p, 1.0, 1e-7), Err(Error::RegionViolation(_))));
    }

    #[test]
    fn inner_kernel_integrals_match_residues() {
        let p = scalar_problem(4.0, 2.0, 1.0, 10, |_| 1.0);
        for y in [0.0, 3.0, -40.0, 2500.0] {
            let z = Complex64::new(-3.0, y);
            let lc = inner_line(&p, 2.0, y, 0.5).unwrap();
            let s: Complex64 = lc.nodes.iter().zip(&lc.weights).map(|(&l, &w)| w * kernel(z, l)).sum::<Complex64>() / (2.0 * PI * I);
            assert!((s + 0.5 / z).norm() < 1e-9, "y = {y}: {s}");
            let l = Complex64::new(-2.0, y);
            let zc = inner_line(&p, 3.0, y, 0.5).unwrap();
            let s: Complex64 = zc.nodes.iter().zip(&zc.weights).map(|(&z, &w)| w * kernel(z, l)).sum::<Complex64>() / (2.0 * PI * I);
            assert!(s.norm() < 1e-9, "y = {y}: {s}");
        }
    }

    #[test]
    fn identities_hold() {
        let p = scalar_problem(4.0, 2.0, 1.0, 64, |t| t * t);
        let r = verify_identities(&p, 3.0).unwrap();
        for c in &r.checks {
            assert!(c.residual <= IDENTITY_TOL, "{}: {}", c.name, c.residual);
        }
        let q = scalar_problem(1.0, 1.0, 1.0, 64, |t| t * t);
        let r = verify_identities(&q, 2.0).unwrap();
        assert!(r.residual("solution_representation").unwrap() <= IDENTITY_TOL);
        let z = q.with_data(GridFunction::zeros(1.0, 16, 2.0, 1).unwrap()).unwrap();
        let r = verify_identities(&z, 2.0).unwrap();
        assert!(r.checks.iter().all(|c| c.residual == 0.0));
        assert!(matches!(verify_identities(&p, 1.5), Err(Error::PreconditionViolated(_))));
        let lin = p.with_data(GridFunction::scalar_times(1.0, 16, 2.0, &CVector::from_real(&[1.0]), |t| t).unwrap()).unwrap();
        assert!(matches!(verify_identities(&lin, 3.0), Err(Error::PreconditionViolated(_))));
    }
}
