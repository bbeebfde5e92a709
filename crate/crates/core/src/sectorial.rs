//! Certification of the sectorial class `P_K(theta)` and the parabolic class
//! `Q(c)` by resolvent sampling, plus the sector-widening argument and the
//! resolvent-commutation check.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, min_singular_value, op_norm, CMatrix, Lu};
use crate::report::{Report, Table};

/// Default sampling budget: a 64 x 64 angle/radius grid plus the origin.
pub const DEFAULT_SAMPLE_BUDGET: usize = 64 * 64 + 1;
/// Safety margin applied to the sampled sector constant.
pub const CONSTANT_MARGIN: f64 = 1.05;
const RADIUS_RANGE: (f64, f64) = (1e-3, 1e3);
const ARG_SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    CertifiedBySampling,
    AssertedByUser,
    ExtendedByAppendix,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CertifiedBySampling => "certified-by-sampling",
            Self::AssertedByUser => "asserted-by-user",
            Self::ExtendedByAppendix => "extended-by-appendix",
        })
    }
}

/// A matrix with a sector `{|arg z| <= angle} ∪ {0}` on which
/// `(1+|z|) ||(A+z)^{-1}|| <= constant`.
#[derive(Clone, Debug)]
pub struct SectorialOperator {
    matrix: CMatrix,
    constant: f64,
    angle: f64,
    provenance: Provenance,
    eigenvalues: Vec<Complex64>,
    norm: f64,
}

impl SectorialOperator {
    /// Trusts the caller's constants; only the spectrum is checked against
    /// the sector.
    pub fn asserted(matrix: CMatrix, constant: f64, angle: f64) -> Result<Self> {
        if !(constant >= 1.0 && constant.is_finite()) {
            return Err(Error::NotSectorial(format!("constant {constant} must be >= 1")));
        }
        check_angle(angle)?;
        let eigenvalues = eigenvalues(&matrix)?;
        spectrum_outside_sector(&matrix, &eigenvalues, angle)?;
        Ok(Self {
            norm: op_norm(&matrix),
            matrix,
            constant,
            angle,
            provenance: Provenance::AssertedByUser,
            eigenvalues,
        })
    }

    pub fn certify(matrix: CMatrix, angle: f64, budget: usize) -> Result<(Self, CertificationReport)> {
        let report = certify_sector(&matrix, angle, budget)?;
        let eigenvalues = eigenvalues(&matrix)?;
        let op = Self {
            norm: op_norm(&matrix),
            matrix,
            constant: report.constant,
            angle,
            provenance: Provenance::CertifiedBySampling,
            eigenvalues,
        };
        Ok((op, report))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Spectral norm of the matrix.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn min_eigen_modulus(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigen_modulus(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max)
    }

    /// Factorization of `A + z`.
    pub fn resolvent(&self, z: Complex64) -> Result<Lu> {
        Lu::factor(&self.matrix, z)
    }

    pub fn extend(&self) -> Self {
        extend_sector(self)
    }
}

fn check_angle(angle: f64) -> Result<()> {
    if !(0.0..PI).contains(&angle) {
        return Err(Error::AngleOutOfRange(format!("sector angle {angle} must lie in [0, pi)")));
    }
    Ok(())
}

fn spectrum_outside_sector(a: &CMatrix, eig: &[Complex64], angle: f64) -> Result<()> {
    let tiny = a.dim() as f64 * f64::EPSILON * op_norm(a).max(f64::MIN_POSITIVE);
    for &l in eig {
        let z = -l;
        if z.norm() <= tiny || z.arg().abs() <= angle + ARG_SLACK {
            return Err(Error::SpectrumInSector { z });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetClass {
    Sector { angle: f64 },
    Parabola { c: f64 },
    Envelope { angle: f64, c: f64, delta: f64 },
}

impl fmt::Display for TargetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sector { angle } => write!(f, "P_K({angle})"),
            Self::Parabola { c } => write!(f, "Q({c})"),
            Self::Envelope { angle, c, delta } => write!(f, "He(angle={angle};c={c};delta={delta})"),
        }
    }
}

/// Outcome of a sampling certification.
#[derive(Clone, Debug, PartialEq)]
pub struct CertificationReport {
    pub target: TargetClass,
    /// The certified constant (sector constant with margin, or the largest
    /// sampled resolvent norm for the parabola class).
    pub constant: f64,
    pub max_sample: f64,
    pub worst_point: Complex64,
    pub table: Table,
    pub verdict: bool,
    pub samples: usize,
    pub notes: Vec<String>,
}

impl CertificationReport {
    pub fn to_report(&self) -> Report {
        let mut r = Report::new();
        r.set("target", self.target)
            .set("verdict", if self.verdict { "pass" } else { "fail" })
            .set("constant", self.constant)
            .set("max_sample", self.max_sample)
            .set_complex("worst_point", self.worst_point)
            .set("samples", self.samples);
        for (k, note) in self.notes.iter().enumerate() {
            r.set(&format!("note{k}"), note);
        }
        r.add_table(self.table.clone());
        r
    }
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let step = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|k| lo * (step * k as f64).exp()).collect()
}

/// `(1+|z|) ||(A+z)^{-1}||`, or `None` if `A+z` is numerically singular.
fn sector_sample(a: &CMatrix, z: Complex64) -> Option<f64> {
    let m = a.shifted(z);
    let smin = min_singular_value(&m);
    let thresh = m.dim() as f64 * f64::EPSILON * op_norm(&m);
    if smin <= thresh {
        return None;
    }
    Some((1.0 + z.norm()) / smin)
}

/// Samples `(1+|z|)||(A+z)^{-1}||` over the sector `|arg z| <= angle` and
/// the origin, returning the maximum rounded up by [`CONSTANT_MARGIN`].
pub fn certify_sector(a: &CMatrix, angle: f64, budget: usize) -> Result<CertificationReport> {
    check_angle(angle)?;
    if budget < 100 {
        return Err(Error::PreconditionViolated(format!("sample budget {budget} < 100")));
    }
    let eig = eigenvalues(a)?;
    spectrum_outside_sector(a, &eig, angle)?;

    let side = ((budget - 1) as f64).sqrt().floor() as usize;
    let (n_ang, n_rad) = if angle == 0.0 {
        (1, (budget - 1).min(64 * 64))
    } else {
        (side, side)
    };
    let angles: Vec<f64> = if n_ang == 1 {
        vec![0.0]
    } else {
        (0..n_ang)
            .map(|k| -angle + 2.0 * angle * k as f64 / (n_ang - 1) as f64)
            .collect()
    };
    let radii = geometric(RADIUS_RANGE.0, RADIUS_RANGE.1, n_rad);

    let mut points = vec![Complex64::new(0.0, 0.0)];
    for &r in &radii {
        for &phi in &angles {
            points.push(Complex64::from_polar(r, phi));
        }
    }
    let values: Vec<Option<f64>> = points.par_iter().map(|&z| sector_sample(a, z)).collect();

    let mut max = f64::NEG_INFINITY;
    let mut worst = points[0];
    for (&z, v) in points.iter().zip(&values) {
        let v = v.ok_or(Error::SpectrumInSector { z })?;
        if v > max {
            max = v;
            worst = z;
        }
    }

    let mut table = Table::new("sector_samples", &["radius", "max_scaled_resolvent"]);
    table.push([0.0, values[0].unwrap_or(f64::NAN)]);
    for (i, &r) in radii.iter().enumerate() {
        let row = &values[1 + i * n_ang..1 + (i + 1) * n_ang];
        let m = row.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        table.push([r, m]);
    }
    Ok(CertificationReport {
        target: TargetClass::Sector { angle },
        constant: CONSTANT_MARGIN * max,
        max_sample: max,
        worst_point: worst,
        table,
        verdict: true,
        samples: points.len(),
        notes: Vec::new(),
    })
}

/// Opening of the largest sector inside the union of disks of radius
/// `(1+|z|)/(2K)` centred on a sector of half-angle `angle`.
pub fn extended_angle(angle: f64, constant: f64) -> f64 {
    (angle + (1.0 / (2.0 * constant)).asin()).min(0.5 * (angle + PI))
}

/// Widens the sector by the disk argument; the constant becomes `2K+1`.
pub fn extend_sector(op: &SectorialOperator) -> SectorialOperator {
    SectorialOperator {
        constant: 2.0 * op.constant + 1.0,
        angle: extended_angle(op.angle, op.constant),
        provenance: Provenance::ExtendedByAppendix,
        ..op.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommutationCheck {
    /// Spectral norm of the commutator of the two resolvents.
    pub residual: f64,
    /// Product of the two resolvent norms.
    pub scale: f64,
    pub pass: bool,
}

pub const COMMUTATION_TOL: f64 = 1e-10;

pub fn check_resolvent_commuting(
    a: &CMatrix,
    b: &CMatrix,
    lambda: Complex64,
    mu: Complex64,
) -> Result<CommutationCheck> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), actual: b.dim() });
    }
    let ra = Lu::factor(a, lambda)?.inverse();
    let rb = Lu::factor(b, mu)?.inverse();
    let residual = op_norm(&ra.commutator(&rb));
    let scale = op_norm(&ra) * op_norm(&rb);
    Ok(CommutationCheck {
        residual,
        scale,
        pass: residual <= COMMUTATION_TOL * scale,
    })
}

/// `{ Re z >= c - (Im z)^2 / (4c) }`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParabolaRegion {
    c: f64,
}

impl ParabolaRegion {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::PreconditionViolated(format!("parabola parameter {c} must be positive")));
        }
        Ok(Self { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn contains(&self, z: Complex64) -> bool {
        z.re >= self.c - z.im * z.im / (4.0 * self.c)
    }

    /// Boundary point with imaginary part `y`.
    pub fn boundary_point(&self, y: f64) -> Complex64 {
        Complex64::new(self.c - y * y / (4.0 * self.c), y)
    }
}

struct Sweep {
    name: String,
    points: Vec<Complex64>,
}

/// Checks the two decay conditions of the parabolic class `Q(c)` along the
/// boundary of the region and radial sweeps inside it.
pub fn certify_parabola_class(a: &CMatrix, c: f64, budget: usize) -> Result<CertificationReport> {
    let region = ParabolaRegion::new(c)?;
    if budget < 100 {
        return Err(Error::PreconditionViolated(format!("sample budget {budget} < 100")));
    }
    let base = match SectorialOperator::certify(a.clone(), 0.0, 100) {
        Ok((op, _)) => op,
        Err(Error::SpectrumInSector { z }) => {
            return Err(Error::NotSectorial(format!(
                "spectrum meets the positive ray at z = {z}; the matrix is not in P(0)"
            )))
        }
        Err(e) => return Err(e),
    };
    for &l in base.eigenvalues() {
        if region.contains(-l) {
            return Err(Error::SpectrumInRegion { z: -l });
        }
    }
    let inv_sqrt = crate::funcalc::frac_power_neg(&base.extend(), 0.5)?;

    let norm = base.norm();
    let knee = 2.0 * norm + 2.0 * c;
    let r_max = 1e4 * (norm + c);
    let angles = [0.0, PI / 4.0, -PI / 4.0, PI / 2.0, -PI / 2.0, 3.0 * PI / 4.0, -3.0 * PI / 4.0];
    let per_sweep = (budget / (angles.len() + 2)).max(16);

    let mut sweeps = Vec::new();
    let y_max = 2.0 * (c * r_max).sqrt();
    for (name, sign) in [("boundary+", 1.0), ("boundary-", -1.0)] {
        let ys = geometric(1e-2 * c, y_max, per_sweep);
        sweeps.push(Sweep {
            name: name.to_string(),
            points: ys.iter().map(|&y| region.boundary_point(sign * y)).collect(),
        });
    }
    for &phi in &angles {
        let rs = geometric(1e-2 * c, r_max, per_sweep);
        sweeps.push(Sweep {
            name: format!("ray{phi}"),
            points: rs
                .iter()
                .map(|&r| Complex64::from_polar(r, phi))
                .filter(|&z| region.contains(z))
                .collect(),
        });
    }

    let mut table = Table::new(
        "parabola_decay",
        &["sweep", "abs_z", "re_z", "im_z", "resolvent_norm", "scaled_smoothed_norm"],
    );
    let mut notes = Vec::new();
    let mut max = f64::NEG_INFINITY;
    let mut worst = Complex64::new(0.0, 0.0);
    let mut samples = 0;
    let mut verdict = true;
    for sweep in &sweeps {
        let vals: Vec<Result<(f64, f64)>> = sweep
            .points
            .par_iter()
            .map(|&z| {
                let r = Lu::factor(a, z)
                    .map_err(|_| Error::SpectrumInRegion { z })?
                    .inverse();
                let q1 = op_norm(&r);
                let q2 = z.norm().sqrt() * op_norm(&(&r * &inv_sqrt));
                Ok((q1, q2))
            })
            .collect();
        let mut post_knee: Vec<(f64, f64)> = Vec::new();
        for (&z, v) in sweep.points.iter().zip(vals) {
            let (q1, q2) = v?;
            samples += 1;
            table.push([
                sweep.name.clone(),
                z.norm().to_string(),
                z.re.to_string(),
                z.im.to_string(),
                q1.to_string(),
                q2.to_string(),
            ]);
            if q1 > max {
                max = q1;
                worst = z;
            }
            if z.norm() >= knee {
                post_knee.push((q1, q2));
            }
        }
        if post_knee.len() < 2 {
            verdict = false;
            notes.push(format!("sweep {} has fewer than two samples beyond the knee", sweep.name));
            continue;
        }
        for (idx, label) in [(0usize, "resolvent_norm"), (1, "scaled_smoothed_norm")] {
            let seq: Vec<f64> = post_knee.iter().map(|p| if idx == 0 { p.0 } else { p.1 }).collect();
            let monotone = seq.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
            let small = seq[seq.len() - 1] <= 0.1 * seq[0];
            if !monotone || !small {
                verdict = false;
                notes.push(format!(
                    "sweep {}: {label} not decaying (monotone={monotone}, last/first={})",
                    sweep.name,
                    seq[seq.len() - 1] / seq[0]
                ));
            }
        }
    }
    notes.push(format!("knee={knee};r_max={r_max};limit read as |z| -> infinity inside the region"));
    Ok(CertificationReport {
        target: TargetClass::Parabola { c },
        constant: max,
        max_sample: max,
        worst_point: worst,
        table,
        verdict,
        samples,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> CMatrix {
        CMatrix::from_real_diagonal(&[a])
    }

    #[test]
    fn scalar_on_positive_ray() {
        let r = certify_sector(&scalar(1.0), 0.0, 200).unwrap();
        assert!((r.max_sample - 1.0).abs() < 1e-12);
        assert!((r.constant - 1.05).abs() < 1e-12);
    }

    #[test]
    fn scalar_on_right_half_plane() {
        // max over y of (1+|y|)/sqrt(1+y^2) is sqrt 2 at y = ±1
        let r = certify_sector(&scalar(1.0), PI / 2.0, DEFAULT_SAMPLE_BUDGET).unwrap();
        let oracle = 2f64.sqrt();
        assert!(r.max_sample <= oracle + 1e-12);
        // the radius grid does not contain |z| = 1 exactly
        assert!(r.max_sample >= oracle * (1.0 - 1e-2), "{}", r.max_sample);
        assert!(r.constant >= oracle && r.constant <= CONSTANT_MARGIN * oracle);
    }

    #[test]
    fn spectrum_in_sector_is_reported() {
        assert!(matches!(
            certify_sector(&scalar(-1.0), 0.0, 100),
            Err(Error::SpectrumInSector { .. })
        ));
        assert!(matches!(certify_sector(&scalar(1.0), 0.0, 50), Err(Error::PreconditionViolated(_))));
        assert!(matches!(certify_sector(&scalar(1.0), PI, 100), Err(Error::AngleOutOfRange(_))));
    }

    #[test]
    fn extension_constants_and_angle() {
        let op = SectorialOperator::asserted(scalar(1.0), 1.0, 0.5).unwrap();
        assert_eq!(extend_sector(&op).constant(), 3.0);
        let k = 2f64.sqrt();
        let op = SectorialOperator::asserted(scalar(1.0), k, PI / 2.0).unwrap();
        let ext = extend_sector(&op);
        assert!((ext.angle() - (PI / 2.0 + 0.3614)).abs() < 1e-4);
        assert!((ext.constant() - (2.0 * k + 1.0)).abs() < 1e-15);
        assert_eq!(ext.provenance(), Provenance::ExtendedByAppendix);
        let re = certify_sector(ext.matrix(), ext.angle(), DEFAULT_SAMPLE_BUDGET).unwrap();
        assert!(re.max_sample <= ext.constant());
    }

    #[test]
    fn origin_disk_enters_extended_region() {
        // with K = 1 the disk about 0 has radius 1/2; its points at angle
        // beyond the sector still satisfy the widened bound 2K+1
        let a = scalar(1.0);
        for phi in [PI / 2.0, PI * 0.75, PI] {
            let z = Complex64::from_polar(0.5, phi);
            let v = sector_sample(&a, z).unwrap();
            assert!(v <= 3.0, "{v}");
        }
    }

    #[test]
    fn commutation_examples() {
        let a = CMatrix::from_real_diagonal(&[1.0, 2.0]);
        let b = CMatrix::from_real_diagonal(&[3.0, 4.0]);
        let zero = Complex64::new(0.0, 0.0);
        let c = check_resolvent_commuting(&a, &b, zero, zero).unwrap();
        assert_eq!(c.residual, 0.0);
        assert!(c.pass);
        let i2 = CMatrix::identity(2);
        assert!(check_resolvent_commuting(&a, &i2, Complex64::new(0.5, 1.0), zero).unwrap().pass);
    }

    #[test]
    fn non_commuting_triangular_pair() {
        // A^{-1} = [[1,-1/2],[0,1/2]], B^{-1} its transpose;
        // [A^{-1}, B^{-1}] = [[1/4,1/4],[1/4,-1/4]] with spectral norm sqrt(2)/4
        let a = CMatrix::from_real_rows(&[&[1.0, 1.0], &[0.0, 2.0]]).unwrap();
        let b = a.transpose();
        let zero = Complex64::new(0.0, 0.0);
        let c = check_resolvent_commuting(&a, &b, zero, zero).unwrap();
        let ai = CMatrix::from_real_rows(&[&[1.0, -0.5], &[0.0, 0.5]]).unwrap();
        let hand = ai.commutator(&ai.transpose());
        let want = CMatrix::from_real_rows(&[&[0.25, 0.25], &[0.25, -0.25]]).unwrap();
        assert!(hand.max_abs_diff(&want) < 1e-15);
        assert!((c.residual - 2f64.sqrt() / 4.0).abs() < 1e-12);
        assert!(!c.pass);
    }

    #[test]
    fn parabola_membership() {
        let p = ParabolaRegion::new(2.0).unwrap();
        assert!(p.contains(Complex64::new(2.0, 0.0)));
        assert!(!p.contains(Complex64::new(-1.0, 0.0)));
        assert!(p.contains(p.boundary_point(3.0)));
        assert!(!p.contains(p.boundary_point(3.0) - 1e-9));
    }

    #[test]
    fn parabola_class_examples() {
        let r = certify_parabola_class(&scalar(1.0), 1.0, 400).unwrap();
        assert!(r.verdict, "{:?}", r.notes);
        let r = certify_parabola_class(&scalar(4.0), 4.0, 400).unwrap();
        assert!(r.verdict, "{:?}", r.notes);
        // scaled column equals sqrt|z| / (2|4+z|)
        for row in r.table.rows.iter().take(5) {
            let re: f64 = row[2].parse().unwrap();
            let im: f64 = row[3].parse().unwrap();
            let z = Complex64::new(re, im);
            let q2: f64 = row[5].parse().unwrap();
            let oracle = z.norm().sqrt() / (2.0 * (z + 4.0).norm());
            assert!((q2 - oracle).abs() < 1e-7 * oracle.max(1e-3), "{q2} vs {oracle}");
        }
        assert!(matches!(
            certify_parabola_class(&scalar(-1.0), 1.0, 400),
            Err(Error::NotSectorial(_))
        ));
    }

    #[test]
    fn parabola_class_rejects_spectrum_in_region() {
        // eigenvalue -3 of A puts z = 3 inside the region with c = 1
        let a = CMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -3.0]]).unwrap();
        assert!(certify_parabola_class(&a, 1.0, 400).is_err());
        // an eigenvalue with large imaginary part escapes P(0) but its negative
        // lands in the region
        let a = CMatrix::from_diagonal(&[Complex64::new(1.0, 10.0)]);
        assert!(matches!(
            certify_parabola_class(&a, 1.0, 400),
            Err(Error::SpectrumInRegion { .. })
        ));
    }
}
