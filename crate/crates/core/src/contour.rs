//! Integration paths and their quadrature.
//!
//! Three path families are supported:
//!
//! * the keyhole `{rho e^{i phi} : theta <= phi <= 2pi - theta} ∪ {r e^{±i theta} : r >= rho}`,
//!   positively oriented around the negative real axis (with `rho = 0` it
//!   degenerates to the two rays),
//! * the same keyhole translated by a real shift,
//! * the vertical line `Re z = -c`, traversed upward.
//!
//! Each ray or half-line is split into Gauss–Legendre panels graded
//! geometrically away from the path's inner end, with an optional cap on
//! panel width for oscillatory or exponentially damped integrands. The
//! truncation radius comes from the analytic tail of a [`DecayEnvelope`].
//! [`integrate_adaptive`] doubles the node count until the result is stable.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, ZERO};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Nodes per Gauss–Legendre panel.
pub const PANEL_NODES: usize = 32;
/// Initial log-ratio between consecutive geometric breakpoints.
const INITIAL_LOG_STEP: f64 = 3.0;
const MAX_LEVELS: usize = 9;
/// Hard cap on nodes in one discretization.
pub const MAX_NODES: usize = 2_000_000;
/// Nodes per sequential partial sum.
const SUM_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ContourSpec {
    Keyhole { rho: f64, theta: f64 },
    ShiftedKeyhole { shift: f64, rho: f64, theta: f64 },
    /// The line `i R - c`, traversed upward.
    VerticalLine { c: f64 },
}

impl ContourSpec {
    pub fn keyhole(rho: f64, theta: f64) -> Result<Self> {
        Self::shifted_keyhole(0.0, rho, theta).map(|s| match s {
            Self::ShiftedKeyhole { rho, theta, .. } => Self::Keyhole { rho, theta },
            other => other,
        })
    }

    pub fn shifted_keyhole(shift: f64, rho: f64, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < PI) {
            return Err(Error::AngleOutOfRange(format!(
                "contour angle {theta} must lie strictly inside (0, pi)"
            )));
        }
        if !(rho >= 0.0 && rho.is_finite()) || !shift.is_finite() {
            return Err(Error::PreconditionViolated(format!(
                "keyhole radius {rho} and shift {shift} must be finite, radius >= 0"
            )));
        }
        Ok(Self::ShiftedKeyhole { shift, rho, theta })
    }

    pub fn vertical_line(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::PreconditionViolated(format!(
                "vertical line offset {c} must be positive"
            )));
        }
        Ok(Self::VerticalLine { c })
    }

    fn parts(&self) -> (f64, f64, f64) {
        match *self {
            Self::Keyhole { rho, theta } => (0.0, rho, theta),
            Self::ShiftedKeyhole { shift, rho, theta } => (shift, rho, theta),
            Self::VerticalLine { c } => (-c, 0.0, PI / 2.0),
        }
    }

    /// Distance scale of the path's closest approach to the origin.
    fn base_offset(&self) -> f64 {
        match *self {
            Self::Keyhole { rho, .. } => rho,
            Self::ShiftedKeyhole { shift, rho, .. } => rho + shift.abs(),
            Self::VerticalLine { c } => c,
        }
    }
}

impl fmt::Display for ContourSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::VerticalLine { c } => write!(f, "contour=vline;c={c}"),
            _ => {
                let (shift, rho, theta) = self.parts();
                write!(f, "contour=keyhole;rho={rho};theta={theta};shift={shift}")
            }
        }
    }
}

/// Decay class of an integrand along a path, with its leading constant:
/// `||phi(z)|| <= constant * shape(|z|)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecayKind {
    /// `O(1/|z|)`; not integrable on unbounded paths.
    Resolvent,
    /// `O(1/|z|^2)`.
    DoubleResolvent,
    /// `O(|z|^{-order})`.
    Algebraic(f64),
    /// `O(e^{-delta |z|})`, measured from the path's base offset.
    Exponential(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayEnvelope {
    pub kind: DecayKind,
    pub constant: f64,
}

impl DecayEnvelope {
    pub fn resolvent(constant: f64) -> Self {
        Self { kind: DecayKind::Resolvent, constant }
    }

    pub fn double_resolvent(constant: f64) -> Self {
        Self { kind: DecayKind::DoubleResolvent, constant }
    }

    pub fn algebraic(order: f64, constant: f64) -> Self {
        Self { kind: DecayKind::Algebraic(order), constant }
    }

    pub fn exponential(delta: f64, constant: f64) -> Self {
        Self { kind: DecayKind::Exponential(delta), constant }
    }

    fn order(&self) -> Option<f64> {
        match self.kind {
            DecayKind::Resolvent => Some(1.0),
            DecayKind::DoubleResolvent => Some(2.0),
            DecayKind::Algebraic(p) => Some(p),
            DecayKind::Exponential(_) => None,
        }
    }

    /// Analytic bound on `∫_R^∞ envelope` along one unbounded end.
    pub fn tail(&self, radius: f64, base: f64) -> f64 {
        let c = self.constant.max(0.0);
        match (self.kind, self.order()) {
            (DecayKind::Exponential(delta), _) => c * (-delta * (radius - base)).exp() / delta,
            (_, Some(p)) if p > 1.0 => c * radius.powf(1.0 - p) / (p - 1.0),
            _ => f64::INFINITY,
        }
    }

    /// Smallest radius whose tail is within `budget`.
    fn radius_for(&self, budget: f64, base: f64) -> Result<f64> {
        let c = self.constant.max(f64::MIN_POSITIVE);
        match (self.kind, self.order()) {
            (DecayKind::Exponential(delta), _) => {
                if !(delta > 0.0) {
                    return Err(Error::NoConvergence(format!(
                        "exponential envelope needs delta > 0, got {delta}"
                    )));
                }
                Ok(base + (c / (delta * budget)).ln().max(0.0) / delta)
            }
            (_, Some(p)) if p > 1.0 => Ok((c / ((p - 1.0) * budget)).powf(1.0 / (p - 1.0))),
            _ => Err(Error::NoConvergence(
                "a 1/|z| envelope is not integrable on an unbounded path; \
                 the integrand needs an additional decay factor"
                    .into(),
            )),
        }
    }
}

/// Tuning knobs for [`discretize`] beyond the spec/envelope/tolerance triple.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizeOptions {
    /// Radius at which geometric grading starts when the path passes
    /// through its base point (`rho = 0` keyholes, vertical lines).
    pub scale: Option<f64>,
    /// Upper bound on panel width along rays (oscillatory integrands).
    pub max_panel_width: Option<f64>,
    /// Largest spectral modulus of interest; rays are resolved uniformly
    /// in `ln r` up to here.
    pub spectral_scale: Option<f64>,
    /// Extra breakpoints, as signed positions along the path: for a
    /// vertical line these are imaginary parts, for a keyhole the
    /// positive/negative values select the upper/lower ray radius.
    pub focus: Vec<f64>,
    /// Width of the refined region around each focus point.
    pub focus_width: f64,
}

impl Default for DiscretizeOptions {
    fn default() -> Self {
        Self {
            scale: None,
            max_panel_width: None,
            spectral_scale: None,
            focus: Vec::new(),
            focus_width: 1.0,
        }
    }
}

/// Quadrature nodes and weights for a path.
///
/// `weights[k]` already contains the path derivative; integrals are
/// `(1/2 pi i) Σ weights[k] f(nodes[k])`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizedContour {
    pub spec: Option<ContourSpec>,
    pub nodes: Vec<Complex64>,
    pub weights: Vec<Complex64>,
    pub radius: f64,
    pub tail_estimate: f64,
    pub level: usize,
}

impl DiscretizedContour {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Closed circle, counterclockwise, trapezoidal rule. Used to test the
    /// summation machinery against the residue theorem.
    pub fn circle(center: Complex64, radius: f64, nodes: usize) -> Self {
        let h = 2.0 * PI / nodes as f64;
        let (zs, ws) = (0..nodes)
            .map(|k| {
                let e = Complex64::from_polar(1.0, k as f64 * h);
                (center + radius * e, I * radius * e * h)
            })
            .unzip();
        Self {
            spec: None,
            nodes: zs,
            weights: ws,
            radius,
            tail_estimate: 0.0,
            level: 0,
        }
    }

    /// The path `z -> -z`, traversed so that `∫ F(z) dz = ∫_Γ F(-λ) dλ`.
    pub fn reflected(&self) -> Self {
        Self {
            spec: None,
            nodes: self.nodes.iter().map(|z| -z).collect(),
            weights: self.weights.clone(),
            ..self.clone()
        }
    }

    /// `Σ w_k f(z_k)` without the `1/2 pi i` factor.
    pub fn weighted_sum<T, F>(&self, f: F) -> Result<T>
    where
        T: ContourValue,
        F: Fn(Complex64) -> Result<T> + Sync,
    {
        // fixed chunks keep the summation order independent of the thread count
        let partials: Vec<Result<Option<T>>> = self
            .nodes
            .par_chunks(SUM_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut acc: Option<T> = None;
                for (i, &z) in chunk.iter().enumerate() {
                    let k = c * SUM_CHUNK + i;
                    let value = f(z)?;
                    if !value.all_finite() {
                        return Err(Error::NonFiniteIntegrand { node: k, z });
                    }
                    match acc.as_mut() {
                        None => {
                            let mut first = value.zero_like();
                            first.add_scaled(self.weights[k], &value);
                            acc = Some(first);
                        }
                        Some(a) => a.add_scaled(self.weights[k], &value),
                    }
                }
                Ok(acc)
            })
            .collect();
        let mut acc: Option<T> = None;
        for part in partials {
            if let Some(p) = part? {
                match acc.as_mut() {
                    None => acc = Some(p),
                    Some(a) => a.add_scaled(Complex64::new(1.0, 0.0), &p),
                }
            }
        }
        acc.ok_or_else(|| Error::QuadratureFailure("empty contour".into()))
    }

    /// Node/weight dump, one `re(z),im(z),re(w),im(w)` line per node.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re(z),im(z),re(w),im(w)\n");
        for (z, w) in self.nodes.iter().zip(&self.weights) {
            out.push_str(&format!("{},{},{},{}\n", z.re, z.im, w.re, w.im));
        }
        out
    }
}

/// Values a contour integral can produce.
pub trait ContourValue: Send + Sized {
    fn zero_like(&self) -> Self;
    fn add_scaled(&mut self, w: Complex64, other: &Self);
    fn all_finite(&self) -> bool;
    fn max_abs(&self) -> f64;
    fn max_abs_diff(&self, other: &Self) -> f64;
    fn scaled(mut self, s: Complex64) -> Self {
        let z = self.zero_like();
        let mut out = z;
        out.add_scaled(s, &self);
        self = out;
        self
    }
}

impl ContourValue for Complex64 {
    fn zero_like(&self) -> Self {
        ZERO
    }
    fn add_scaled(&mut self, w: Complex64, other: &Self) {
        *self += w * other;
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
    fn max_abs(&self) -> f64 {
        self.norm()
    }
    fn max_abs_diff(&self, other: &Self) -> f64 {
        (self - other).norm()
    }
}

impl ContourValue for Vec<Complex64> {
    fn zero_like(&self) -> Self {
        vec![ZERO; self.len()]
    }
    fn add_scaled(&mut self, w: Complex64, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            *a += w * b;
        }
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|z| z.is_finite())
    }
    fn max_abs(&self) -> f64 {
        self.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
    fn max_abs_diff(&self, other: &Self) -> f64 {
        self.iter().zip(other).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

impl ContourValue for CVector {
    fn zero_like(&self) -> Self {
        CVector::zeros(self.dim())
    }
    fn add_scaled(&mut self, w: Complex64, other: &Self) {
        self.axpy(w, other);
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
    fn max_abs(&self) -> f64 {
        self.entries().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
    fn max_abs_diff(&self, other: &Self) -> f64 {
        CVector::max_abs_diff(self, other)
    }
}

impl ContourValue for CMatrix {
    fn zero_like(&self) -> Self {
        CMatrix::zeros(self.dim())
    }
    fn add_scaled(&mut self, w: Complex64, other: &Self) {
        *self = &*self + &other.scale(w);
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
    fn max_abs(&self) -> f64 {
        self.row_major().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
    fn max_abs_diff(&self, other: &Self) -> f64 {
        CMatrix::max_abs_diff(self, other)
    }
}

/// `(1/2 pi i) Σ_k w_k f(z_k)`, reduced in node order.
pub fn integrate<T, F>(contour: &DiscretizedContour, f: F) -> Result<T>
where
    T: ContourValue,
    F: Fn(Complex64) -> Result<T> + Sync,
{
    let raw = contour.weighted_sum(f)?;
    Ok(raw.scaled(1.0 / (2.0 * PI * I)))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { t } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (t * pn - pm) / (t * t - 1.0);
            let dt = pn / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -t;
        x[n - 1 - i] = t;
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// A quadrature panel on a ray parameter `r`; logarithmic panels place the
/// Gauss–Legendre rule in `s = ln r`.
#[derive(Clone, Copy, Debug)]
struct Panel {
    a: f64,
    b: f64,
    log: bool,
}

struct Rule {
    gl_x: Vec<f64>,
    gl_w: Vec<f64>,
}

impl Rule {
    fn new() -> Self {
        let (gl_x, gl_w) = gauss_legendre(PANEL_NODES);
        Self { gl_x, gl_w }
    }

    /// `(r, dr-weight)` pairs over consecutive panels, in increasing `r`.
    fn along(&self, panels: &[Panel]) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(panels.len() * PANEL_NODES);
        for p in panels {
            let (a, b) = if p.log { (p.a.ln(), p.b.ln()) } else { (p.a, p.b) };
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for (x, w) in self.gl_x.iter().zip(&self.gl_w) {
                let t = mid + half * x;
                if p.log {
                    let r = t.exp();
                    out.push((r, r * half * w));
                } else {
                    out.push((t, half * w));
                }
            }
        }
        out
    }

    fn on_interval(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        self.along(&[Panel { a, b, log: false }])
    }
}

struct RayPlan {
    scale: f64,
    spectral: f64,
    log_step: f64,
    max_width: f64,
    refine: f64,
}

impl RayPlan {
    /// Panels covering `[r0, radius]`. Uniform in `ln r` up to the spectral
    /// scale, widening in proportion to the log-distance beyond it.
    fn panels(&self, r0: f64, radius: f64, focus: &[f64], focus_width: f64) -> Result<Vec<Panel>> {
        let mut breaks = Vec::new();
        let mut r = if r0 > 0.0 {
            r0
        } else {
            let start = (0.5 * self.scale).min(radius);
            breaks.push((0.0, false));
            start
        };
        breaks.push((r, true));
        let s_spec = self.spectral.ln();
        while r < radius {
            let s = r.ln();
            let mut w = self.log_step.max(0.75 * (s - s_spec) / self.refine);
            if self.max_width.is_finite() {
                w = w.min((1.0 + self.max_width / r).ln());
            }
            let next = (r * w.exp()).min(radius);
            breaks.push((next, true));
            r = next;
            if breaks.len() * PANEL_NODES > MAX_NODES {
                return Err(Error::QuadratureFailure(format!(
                    "more than {MAX_NODES} nodes needed to reach radius {radius}"
                )));
            }
        }
        for &f in focus {
            let mut offsets = vec![0.0, 0.5 * focus_width, -0.5 * focus_width];
            let mut d = focus_width;
            while d < (f - r0).max(8.0 * f.max(focus_width)).min(radius) {
                offsets.extend([d, -d]);
                d *= 4.0;
            }
            for k in offsets {
                let p = f + k;
                if p > r0 && p < radius {
                    breaks.push((p, true));
                }
            }
        }
        breaks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        breaks.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-14 * b.0.abs().max(1.0));
        let first_log = if r0 > 0.0 { r0 } else { (0.5 * self.scale).min(radius) };
        Ok(breaks
            .windows(2)
            .map(|w| Panel {
                a: w[0].0,
                b: w[1].0,
                log: w[0].0 >= first_log * (1.0 - 1e-14) && w[0].0 > 0.0,
            })
            .collect())
    }
}

fn build(
    spec: &ContourSpec,
    radius: f64,
    tail: f64,
    level: usize,
    opts: &DiscretizeOptions,
) -> Result<DiscretizedContour> {
    let rule = Rule::new();
    let refine = 2f64.powi(level as i32);
    let default_scale = match *spec {
        ContourSpec::VerticalLine { c } => c,
        _ => {
            let (_, rho, _) = spec.parts();
            if rho > 0.0 {
                rho
            } else {
                1.0
            }
        }
    };
    let scale = opts.scale.unwrap_or(default_scale);
    let plan = RayPlan {
        scale,
        spectral: opts.spectral_scale.unwrap_or(scale).max(scale),
        log_step: INITIAL_LOG_STEP / refine,
        max_width: opts.max_panel_width.unwrap_or(f64::INFINITY) / refine,
        refine,
    };
    let mut nodes = Vec::new();
    let mut weights = Vec::new();

    let focus_on = |sign: f64| -> Vec<f64> {
        opts.focus
            .iter()
            .filter(|&&f| f * sign >= 0.0 || f.abs() < opts.focus_width * 4.0)
            .map(|f| f.abs())
            .collect()
    };
    let ray = |r0: f64, sign: f64| -> Result<Vec<(f64, f64)>> {
        Ok(rule.along(&plan.panels(r0, radius, &focus_on(sign), opts.focus_width)?))
    };

    match *spec {
        ContourSpec::VerticalLine { c } => {
            let apex = Complex64::new(-c, 0.0);
            for &(r, w) in ray(0.0, -1.0)?.iter().rev() {
                nodes.push(apex - I * r);
                weights.push(I * w);
            }
            for (r, w) in ray(0.0, 1.0)? {
                nodes.push(apex + I * r);
                weights.push(I * w);
            }
        }
        _ => {
            let (shift, rho, theta) = spec.parts();
            let apex = Complex64::new(shift, 0.0);
            let up = Complex64::from_polar(1.0, theta);
            let down = Complex64::from_polar(1.0, -theta);
            // lower ray, inward
            for &(r, w) in ray(rho, -1.0)?.iter().rev() {
                nodes.push(apex + r * down);
                weights.push(-down * w);
            }
            // arc through -rho, clockwise about the apex
            if rho > 0.0 {
                let arc_panels = 1usize << level.min(6);
                let span = (2.0 * PI - 2.0 * theta) / arc_panels as f64;
                for k in 0..arc_panels {
                    let hi = 2.0 * PI - theta - span * k as f64;
                    let mut arc = rule.on_interval(hi - span, hi);
                    arc.reverse();
                    for (phi, w) in arc {
                        let e = Complex64::from_polar(1.0, phi);
                        nodes.push(apex + rho * e);
                        weights.push(-I * rho * e * w);
                    }
                }
            }
            // upper ray, outward
            for (r, w) in ray(rho, 1.0)? {
                nodes.push(apex + r * up);
                weights.push(up * w);
            }
        }
    }
    Ok(DiscretizedContour {
        spec: Some(*spec),
        nodes,
        weights,
        radius,
        tail_estimate: tail,
        level,
    })
}

fn truncation(spec: &ContourSpec, env: &DecayEnvelope, tol: f64, opts: &DiscretizeOptions) -> Result<(f64, f64)> {
    if !(tol > 0.0) {
        return Err(Error::PreconditionViolated(format!("tolerance {tol} must be positive")));
    }
    let base = spec.base_offset();
    let budget = tol / 100.0;
    let mut radius = env.radius_for(budget, base)?;
    let floor = 4.0 * base.max(opts.scale.unwrap_or(0.0)).max(1e-300);
    if radius < floor {
        radius = floor;
    }
    for &f in &opts.focus {
        radius = radius.max(f.abs() + 8.0 * opts.focus_width);
    }
    Ok((radius, env.tail(radius, base)))
}

/// Effective quadrature parameters, for reports.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureInfo {
    pub spec: ContourSpec,
    pub nodes: usize,
    pub radius: f64,
    pub tail_estimate: f64,
    /// Max-abs change observed when the node count was doubled.
    pub doubling_change: f64,
}

/// Result of [`integrate_adaptive`].
#[derive(Clone, Debug)]
pub struct Adaptive<T> {
    pub value: T,
    pub contour: DiscretizedContour,
    pub info: QuadratureInfo,
}

/// Integrates `f` over `spec`, doubling the node count until the result
/// changes by at most `tol/10` (relative to `max(1, |value|)`), and returns
/// the coarser of the two agreeing levels.
pub fn integrate_adaptive<T, F>(
    spec: &ContourSpec,
    env: &DecayEnvelope,
    tol: f64,
    opts: &DiscretizeOptions,
    f: F,
) -> Result<Adaptive<T>>
where
    T: ContourValue,
    F: Fn(Complex64) -> Result<T> + Sync,
{
    let (radius, tail) = truncation(spec, env, tol, opts)?;
    integrate_adaptive_truncated(spec, radius, tail, tol, opts, f)
}

/// As [`integrate_adaptive`], with the truncation radius and its tail bound
/// supplied by the caller.
pub fn integrate_adaptive_truncated<T, F>(
    spec: &ContourSpec,
    radius: f64,
    tail: f64,
    tol: f64,
    opts: &DiscretizeOptions,
    f: F,
) -> Result<Adaptive<T>>
where
    T: ContourValue,
    F: Fn(Complex64) -> Result<T> + Sync,
{
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::PreconditionViolated(format!("truncation radius {radius} must be positive")));
    }
    let mut prev = build(spec, radius, tail, 0, opts)?;
    let mut prev_value: T = integrate(&prev, &f)?;
    for level in 1..MAX_LEVELS {
        let contour = build(spec, radius, tail, level, opts)?;
        let value: T = integrate(&contour, &f)?;
        let change = value.max_abs_diff(&prev_value);
        if change <= tol / 10.0 * value.max_abs().max(1.0) {
            let info = QuadratureInfo {
                spec: *spec,
                nodes: prev.len(),
                radius,
                tail_estimate: tail,
                doubling_change: change,
            };
            return Ok(Adaptive {
                value: prev_value,
                contour: prev,
                info,
            });
        }
        prev = contour;
        prev_value = value;
    }
    Err(Error::NoConvergence(format!(
        "node doubling did not settle within {MAX_LEVELS} levels on {spec}"
    )))
}

/// Fixed-level discretization truncated at `radius`.
pub fn discretize_truncated(
    spec: &ContourSpec,
    radius: f64,
    level: usize,
    opts: &DiscretizeOptions,
) -> Result<DiscretizedContour> {
    build(spec, radius, f64::NAN, level, opts)
}

/// Discretizes `spec` against a scalar probe shaped like `env`.
pub fn discretize(spec: &ContourSpec, env: &DecayEnvelope, tol: f64) -> Result<DiscretizedContour> {
    discretize_with(spec, env, tol, &DiscretizeOptions::default())
}

pub fn discretize_with(
    spec: &ContourSpec,
    env: &DecayEnvelope,
    tol: f64,
    opts: &DiscretizeOptions,
) -> Result<DiscretizedContour> {
    let pole = match *spec {
        ContourSpec::VerticalLine { c } => Complex64::new(-2.0 * c, 0.0),
        _ => {
            let (shift, rho, _) = spec.parts();
            Complex64::new(shift - 2.0 * rho.max(opts.scale.unwrap_or(0.5)), 0.0)
        }
    };
    let kind = env.kind;
    let probe = move |z: Complex64| -> Result<Complex64> {
        let shape = match kind {
            DecayKind::Resolvent => 1.0,
            DecayKind::DoubleResolvent => 1.0 / (1.0 + z.norm()),
            DecayKind::Algebraic(p) => (1.0 + z.norm()).powf(1.0 - p),
            DecayKind::Exponential(d) => (-d * z.norm()).exp(),
        };
        Ok(shape / (z - pole))
    };
    integrate_adaptive(spec, env, tol, opts, probe).map(|a| a.contour)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(PANEL_NODES);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let m62: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(62)).sum();
        assert!((m62 - 2.0 / 63.0).abs() < 1e-14);
        let (x5, w5) = gauss_legendre(5);
        let m8: f64 = x5.iter().zip(&w5).map(|(x, w)| w * x.powi(8)).sum();
        assert!((m8 - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn vline_exponential_truncation_radius() {
        // e^{-(R - 1)} <= 1e-10  =>  R = 1 + 10 ln 10
        let spec = ContourSpec::vertical_line(1.0).unwrap();
        let env = DecayEnvelope::exponential(1.0, 1.0);
        let (r, tail) = truncation(&spec, &env, 1e-8, &DiscretizeOptions::default()).unwrap();
        assert!((r - (1.0 + 10.0 * 10f64.ln())).abs() < 1e-9, "R = {r}");
        assert!((r - 24.03).abs() < 0.01);
        assert!(tail <= 1e-10 * (1.0 + 1e-9));
    }

    #[test]
    fn keyhole_geometry() {
        let theta = 3.0 * PI / 4.0;
        let spec = ContourSpec::keyhole(0.5, theta).unwrap();
        let c = discretize(&spec, &DecayEnvelope::double_resolvent(1.0), 1e-6).unwrap();
        for z in &c.nodes {
            let on_arc = (z.norm() - 0.5).abs() < 1e-12 && {
                let phi = z.arg().rem_euclid(2.0 * PI);
                phi >= theta - 1e-12 && phi <= 2.0 * PI - theta + 1e-12
            };
            let on_ray = z.norm() >= 0.5 - 1e-12 && (z.arg().abs() - theta).abs() < 1e-12;
            assert!(on_arc || on_ray, "node {z} off the keyhole");
        }
    }

    #[test]
    fn resolvent_envelope_on_unbounded_path_is_rejected() {
        let spec = ContourSpec::keyhole(0.5, 2.0).unwrap();
        assert!(matches!(
            discretize(&spec, &DecayEnvelope::resolvent(1.0), 1e-6),
            Err(Error::NoConvergence(_))
        ));
    }

    #[test]
    fn angle_validation() {
        assert!(ContourSpec::keyhole(0.1, 0.0).is_err());
        assert!(ContourSpec::keyhole(0.1, PI).is_err());
        assert!(ContourSpec::vertical_line(0.0).is_err());
    }

    #[test]
    fn circle_residue() {
        let c = DiscretizedContour::circle(ZERO, 2.0, 128);
        let raw: Complex64 = c.weighted_sum(|z| Ok(1.0 / (z - 1.0))).unwrap();
        assert!((raw - 2.0 * PI * I).norm() < 1e-12);
    }

    #[test]
    fn zero_integrand_is_exactly_zero() {
        let spec = ContourSpec::keyhole(0.5, 2.0).unwrap();
        let c = discretize(&spec, &DecayEnvelope::double_resolvent(1.0), 1e-8).unwrap();
        let v: Complex64 = integrate(&c, |_| Ok(ZERO)).unwrap();
        assert_eq!(v, ZERO);
    }

    #[test]
    fn keyhole_residue_at_minus_one() {
        // 2/((z+1)(1-z)) has residue 1 at z = -1 (enclosed) and its other
        // pole at z = 1 lies outside the keyhole region
        let spec = ContourSpec::keyhole(0.5, 2.0 * PI / 3.0).unwrap();
        let env = DecayEnvelope::double_resolvent(2.0);
        let a: Adaptive<Complex64> =
            integrate_adaptive(&spec, &env, 1e-10, &DiscretizeOptions::default(), |z| {
                Ok(2.0 / ((z + 1.0) * (1.0 - z)))
            })
            .unwrap();
        assert!((a.value - 1.0).norm() < 1e-8, "{}", a.value);
    }

    #[test]
    fn scalar_semigroup_on_rays_through_origin() {
        let theta = 2.0 * PI / 3.0;
        let spec = ContourSpec::keyhole(0.0, theta).unwrap();
        let env = DecayEnvelope::exponential(0.5 * 0.9, 1.0);
        let a: Adaptive<Complex64> =
            integrate_adaptive(&spec, &env, 1e-10, &DiscretizeOptions::default(), |z| {
                Ok(z.exp() / (1.0 + z))
            })
            .unwrap();
        assert!((a.value - (-1f64).exp()).norm() < 1e-8, "{}", a.value);
    }

    #[test]
    fn upward_line_orientation() {
        // closing to the right, the upward line picks up minus the residues
        // of e^{-z}/((z^2+1)(z+2)) at z = ±i
        let i = I;
        let oracle = -((-i).exp() / (2.0 * i * (i + 2.0)) - i.exp() / (2.0 * i * (2.0 - i)));
        let spec = ContourSpec::vertical_line(1.0).unwrap();
        let env = DecayEnvelope::algebraic(3.0, 3.0);
        let opts = DiscretizeOptions { max_panel_width: Some(8.0), ..Default::default() };
        let a: Adaptive<Complex64> = integrate_adaptive(&spec, &env, 1e-6, &opts, |z| {
            Ok((-z).exp() / ((z * z + 1.0) * (z + 2.0)))
        })
        .unwrap();
        assert!((a.value - oracle).norm() < 1e-6, "{} vs {}", a.value, oracle);
    }

    #[test]
    fn node_cap_is_enforced() {
        let spec = ContourSpec::vertical_line(1.0).unwrap();
        let env = DecayEnvelope::double_resolvent(1.0);
        let opts = DiscretizeOptions { max_panel_width: Some(1e-3), ..Default::default() };
        assert!(matches!(
            discretize_with(&spec, &env, 1e-8, &opts),
            Err(Error::QuadratureFailure(_))
        ));
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let c = DiscretizedContour::circle(ZERO, 1.0, 4);
        let csv = c.to_csv();
        assert!(csv.starts_with("re(z),im(z),re(w),im(w)\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn spec_serialization() {
        let k = ContourSpec::shifted_keyhole(-0.25, 0.5, 1.0).unwrap();
        assert_eq!(k.to_string(), "contour=keyhole;rho=0.5;theta=1;shift=-0.25");
        assert_eq!(
            ContourSpec::vertical_line(2.0).unwrap().to_string(),
            "contour=vline;c=2"
        );
    }
}
