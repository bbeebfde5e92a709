//! Seeded property suites behind `verify`. Each check compares a computed
//! quantity with an oracle or an invariant and records one table row.

use std::f64::consts::PI;

use rand::Rng;
use sectorcalc_core::dpgsum::{
    closedness_probe, default_probe_sequence, inverse_identity_check, kappa_apply_with, smoothed_kappa, KappaRoute,
    SumProblem, DEFAULT_SUM_TOL,
};
use sectorcalc_core::families::{self, FamilyRng};
use sectorcalc_core::funcalc::{
    envelope_check, frac_power_neg, frac_power_neg_with, hcalc_apply, semigroup, CalcOptions, HeFunction,
};
use sectorcalc_core::hyperbolic::{
    hyperbolic_solve, hyperbolic_solve_with, resolvent_direct, resolvent_split, sine_kernel_oracle, verify_identities,
    Branch, HyperbolicProblem, DEFAULT_HYPERBOLIC_TOL, IDENTITY_TOL,
};
use sectorcalc_core::linalg::{eig_decompose, expm_oracle, solve_shifted, Lu};
use sectorcalc_core::parabolic::{
    b_resolvent, default_radii, derivative_decay_check, duhamel_oracle, parabolic_solve, riemann_lebesgue_check,
    young_bound,
};
use sectorcalc_core::sectorial::{certify_parabola_class, certify_sector, extend_sector, DEFAULT_SAMPLE_BUDGET};
use sectorcalc_core::{CMatrix, CVector, Complex64, GridFunction, Num, ParabolaRegion, Report, SectorialOperator, Table};

use crate::commands::Failure;
use crate::config::Suite;

const SUITES: [Suite; 6] = [
    Suite::Opcore,
    Suite::Sectorial,
    Suite::Funcalc,
    Suite::Dpg,
    Suite::Parabolic,
    Suite::Hyperbolic,
];

/// Matrices per randomized family in the funcalc suite.
const FUNCALC_FAMILY: usize = 5;
/// Pairs in the dpg suite.
const DPG_FAMILY: usize = 5;
/// Admissible points in the split-equivalence check.
const SPLIT_POINTS: usize = 500;

struct Checks {
    suite: &'static str,
    table: Table,
    failed: usize,
}

impl Checks {
    fn new() -> Self {
        Self {
            suite: "",
            table: Table::new("checks", &["suite", "check", "value", "bound", "pass"]),
            failed: 0,
        }
    }

    fn row(&mut self, name: &str, value: String, bound: String, pass: bool) {
        if !pass {
            self.failed += 1;
        }
        let verdict = if pass { "pass" } else { "fail" };
        self.table.push([self.suite.to_string(), name.to_string(), value, bound, verdict.to_string()]);
    }

    /// Passes when `value <= tol`.
    fn at_most(&mut self, name: &str, value: sectorcalc_core::Result<f64>, tol: f64) {
        match value {
            Ok(v) => self.row(name, Num(v).to_string(), format!("<={}", Num(tol)), v <= tol),
            Err(e) => self.row(name, format!("error: {e}"), format!("<={}", Num(tol)), false),
        }
    }

    /// Passes when `value >= tol`.
    fn at_least(&mut self, name: &str, value: sectorcalc_core::Result<f64>, tol: f64) {
        match value {
            Ok(v) => self.row(name, Num(v).to_string(), format!(">={}", Num(tol)), v >= tol),
            Err(e) => self.row(name, format!("error: {e}"), format!(">={}", Num(tol)), false),
        }
    }

    fn holds(&mut self, name: &str, value: sectorcalc_core::Result<bool>) {
        match value {
            Ok(v) => self.row(name, v.to_string(), "true".into(), v),
            Err(e) => self.row(name, format!("error: {e}"), "true".into(), false),
        }
    }
}

fn stream(seed: u64, suite: u64) -> FamilyRng {
    families::rng(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(suite))
}

pub fn run(suite: Suite, seed: u64, report: &mut Report) -> Result<bool, Failure> {
    let mut checks = Checks::new();
    for (k, s) in SUITES.iter().enumerate() {
        if suite != Suite::All && suite != *s {
            continue;
        }
        checks.suite = s.name();
        let mut rng = stream(seed, k as u64 + 1);
        match s {
            Suite::Opcore => opcore(&mut checks, &mut rng),
            Suite::Sectorial => sectorial(&mut checks, &mut rng),
            Suite::Funcalc => funcalc(&mut checks, &mut rng),
            Suite::Dpg => dpg(&mut checks, &mut rng),
            Suite::Parabolic => parabolic(&mut checks),
            Suite::Hyperbolic => hyperbolic(&mut checks, &mut rng),
            Suite::All => unreachable!(),
        }
    }
    report
        .set("checks.total", checks.table.rows.len())
        .set("checks.failed", checks.failed);
    let pass = checks.failed == 0;
    report.add_table(checks.table);
    Ok(pass)
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(1.0)
}

fn general_matrix(rng: &mut FamilyRng, n: usize) -> CMatrix {
    CMatrix::new(n, (0..n * n).map(|_| families::complex(rng)).collect()).expect("finite entries")
}

fn shift(rng: &mut FamilyRng) -> Complex64 {
    Complex64::from_polar(rng.random_range(2.0..4.0), rng.random_range(-PI..PI))
}

fn opcore(ch: &mut Checks, rng: &mut FamilyRng) {
    let (mut ident, mut solve, mut law) = (0.0f64, 0.0f64, 0.0f64);
    let mut errors = Vec::new();
    for _ in 0..5 {
        let a = general_matrix(rng, 4);
        let (z, l) = (shift(rng), shift(rng));
        let y = families::vector(rng, 4);
        let (s, t) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let r = (|| -> sectorcalc_core::Result<()> {
            let rz = Lu::factor(&a, z)?.inverse();
            let rl = Lu::factor(&a, l)?.inverse();
            let right = (&rz * &rl).scale(l - z);
            ident = ident.max(rel((&rz - &rl).max_abs_diff(&right), rz.inf_norm()));
            let u = solve_shifted(&a, z, &y)?;
            let eig = eig_decompose(&a)?;
            let oracle = eig.map(|m| 1.0 / (m + z)).apply(&y);
            solve = solve.max(rel(u.max_abs_diff(&oracle), oracle.norm()));
            let whole = expm_oracle(&a, s + t);
            law = law.max(rel(whole.max_abs_diff(&(&expm_oracle(&a, s) * &expm_oracle(&a, t))), whole.inf_norm()));
            Ok(())
        })();
        if let Err(e) = r {
            errors.push(e);
        }
    }
    let first = |v: f64| errors.first().cloned().map_or(Ok(v), Err);
    ch.at_most("resolvent_identity", first(ident), 1e-10);
    ch.at_most("solve_vs_eigen_inverse", first(solve), 1e-9);
    ch.at_most("expm_semigroup_law", first(law), 1e-9);
}

fn sectorial(ch: &mut Checks, rng: &mut FamilyRng) {
    let scalar = CMatrix::from_real_diagonal(&[1.0]);
    let cert = certify_sector(&scalar, PI / 2.0, DEFAULT_SAMPLE_BUDGET);
    let s2 = 2f64.sqrt();
    match cert {
        Ok(c) => ch.row(
            "scalar_constant",
            c.constant.to_string(),
            format!("[{s2},{}]", 1.05 * s2),
            (s2..=1.05 * s2).contains(&c.constant),
        ),
        Err(e) => ch.row("scalar_constant", format!("error: {e}"), String::new(), false),
    }
    let mut worst_ext = 0.0f64;
    let mut stability = 0.0f64;
    let mut err = None;
    let mut mats = vec![scalar];
    mats.extend((0..3).map(|_| families::sectorial_matrix(rng, 6)));
    for (k, a) in mats.iter().enumerate() {
        let angle = if k == 0 { PI / 2.0 } else { 3.0 * PI / 4.0 };
        let r = (|| -> sectorcalc_core::Result<()> {
            let (op, cert) = SectorialOperator::certify(a.clone(), angle, DEFAULT_SAMPLE_BUDGET)?;
            let ext = extend_sector(&op);
            let re = certify_sector(a, ext.angle(), DEFAULT_SAMPLE_BUDGET)?;
            worst_ext = worst_ext.max(re.constant / ext.constant());
            if k == 1 {
                let dense = certify_sector(a, angle, 10 * DEFAULT_SAMPLE_BUDGET)?;
                stability = dense.max_sample / cert.constant;
            }
            Ok(())
        })();
        if let Err(e) = r {
            err.get_or_insert(e);
        }
    }
    let first = |v: f64| err.clone().map_or(Ok(v), Err);
    ch.at_most("extension_recertifies_ratio", first(worst_ext), 1.0);
    ch.at_most("dense_resampling_ratio", first(stability), 1.0);
    ch.holds(
        "parabola_membership",
        ParabolaRegion::new(2.0).map(|r| r.contains(Complex64::new(2.0, 0.0)) && !r.contains(Complex64::new(-1.0, 0.0))),
    );
    ch.holds(
        "q_class_diag4",
        certify_parabola_class(&CMatrix::from_real_diagonal(&[4.0]), 4.0, DEFAULT_SAMPLE_BUDGET).map(|c| c.verdict),
    );
}

fn certified(a: CMatrix, angle: f64) -> sectorcalc_core::Result<SectorialOperator> {
    SectorialOperator::certify(a, angle, DEFAULT_SAMPLE_BUDGET).map(|(op, _)| op)
}

fn funcalc(ch: &mut Checks, rng: &mut FamilyRng) {
    let d19 = (|| {
        let op = certified(CMatrix::from_real_diagonal(&[1.0, 9.0]), 3.0 * PI / 4.0)?;
        let r = frac_power_neg_with(&op, 0.5, &CalcOptions::default())?;
        let want = CMatrix::from_real_diagonal(&[1.0, 1.0 / 3.0]);
        Ok((r.value.max_abs_diff(&want), r.info.nodes as f64))
    })();
    ch.at_most("diag_1_9_inverse_sqrt", d19.clone().map(|v| v.0), 1e-8);
    ch.at_most("diag_1_9_nodes", d19.map(|v| v.1), 400.0);

    let (mut comp, mut oracle, mut law, mut inv) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut err = None;
    for _ in 0..FUNCALC_FAMILY {
        let a = families::sectorial_matrix(rng, 6);
        let r = (|| -> sectorcalc_core::Result<()> {
            let op = certified(a.clone(), 3.0 * PI / 4.0)?;
            let p7 = frac_power_neg(&op, 0.7)?;
            let prod = &frac_power_neg(&op, 0.3)? * &frac_power_neg(&op, 0.4)?;
            comp = comp.max(rel(prod.max_abs_diff(&p7), p7.inf_norm()));
            let half = frac_power_neg(&op, 0.5)?;
            let lu_inv = Lu::factor(&a, Complex64::new(0.0, 0.0))?.inverse();
            inv = inv.max(rel((&half * &half).max_abs_diff(&lu_inv), lu_inv.inf_norm()));
            for w in [0.1, 1.0, 10.0] {
                let s = semigroup(&op, Complex64::new(w, 0.0))?;
                let o = expm_oracle(&a, w);
                oracle = oracle.max(rel(s.max_abs_diff(&o), o.inf_norm()));
            }
            let (w1, w2) = (Complex64::new(0.3, 0.0), Complex64::new(0.5, 0.0));
            let whole = semigroup(&op, w1 + w2)?;
            law = law.max(rel((&semigroup(&op, w1)? * &semigroup(&op, w2)?).max_abs_diff(&whole), whole.inf_norm()));
            Ok(())
        })();
        if let Err(e) = r {
            err.get_or_insert(e);
        }
    }
    let first = |v: f64| err.clone().map_or(Ok(v), Err);
    ch.at_most("power_composition", first(comp), 1e-7);
    ch.at_most("inverse_from_square_roots", first(inv), 1e-7);
    ch.at_most("semigroup_vs_expm", first(oracle), 1e-8);
    ch.at_most("semigroup_law", first(law), 1e-8);

    let angle = 3.0 * PI / 4.0;
    let he = (|| {
        let op = certified(CMatrix::from_real_diagonal(&[1.0, 2.0]), angle)?;
        let m = hcalc_apply(&op, &HeFunction::lambda_exp(2, angle))?;
        let e = |x: f64| -x * (-x).exp();
        Ok(m.max_abs_diff(&CMatrix::from_real_diagonal(&[e(1.0), e(2.0)])))
    })();
    ch.at_most("hcalc_lambda_exp_residue", he, 1e-7);
    let one = HeFunction::scalar(1, 1.0, 0.1, |_| Complex64::new(1.0, 0.0));
    ch.holds("envelope_rejects_constant", Ok(!envelope_check(&one, angle, 400).verdict));
    let rho = (|| {
        let op = certified(families::sectorial_matrix(rng, 4), angle)?;
        let base = frac_power_neg_with(&op, 0.5, &CalcOptions::default())?;
        let rho = 0.25 * op.min_eigen_modulus();
        let half = frac_power_neg_with(&op, 0.5, &CalcOptions { rho: Some(rho), ..Default::default() })?;
        Ok(rel(base.value.max_abs_diff(&half.value), base.value.inf_norm()))
    })();
    ch.at_most("keyhole_radius_independence", rho, 1e-8);
}

fn sum_problem(a: CMatrix, b: CMatrix) -> sectorcalc_core::Result<SumProblem> {
    SumProblem::new(certified(a, 3.0 * PI / 4.0)?, certified(b, PI / 3.0)?)
}

fn dpg(ch: &mut Checks, rng: &mut FamilyRng) {
    let mut worst = [0.0f64; 6];
    let names = [
        "sum_residual",
        "direct_solve",
        "symmetry",
        "contour_shift",
        "inverse_identity",
        "smoothed_cross_check",
    ];
    let mut err = None;
    let mut probe_gap = Err(sectorcalc_core::Error::PreconditionViolated("no pair".into()));
    for k in 0..DPG_FAMILY {
        let (a, b) = families::commuting_pair(rng, 8);
        let y = families::vector(rng, 8);
        let r = (|| -> sectorcalc_core::Result<()> {
            let p = sum_problem(a.clone(), b.clone())?;
            let x = kappa_apply_with(&p, &y, KappaRoute::Direct, DEFAULT_SUM_TOL)?.value;
            let s = y.norm();
            let res = (&(&a.apply(&x) + &b.apply(&x)) - &y).norm() / s;
            let exact = Lu::factor(&(&a + &b), Complex64::new(0.0, 0.0))?.solve(&y)?;
            let swapped = kappa_apply_with(&p, &y, KappaRoute::Swapped, DEFAULT_SUM_TOL)?.value;
            let shifted = kappa_apply_with(&p, &y, KappaRoute::default_shifted(&p)?, DEFAULT_SUM_TOL)?.value;
            let vals = [
                res,
                (&x - &exact).norm() / s,
                (&x - &swapped).norm() / s,
                (&x - &shifted).norm() / s,
                inverse_identity_check(&p, &y)?,
                smoothed_kappa(&p, 1.0, &y)?.cross_check,
            ];
            for (w, v) in worst.iter_mut().zip(vals) {
                *w = w.max(v);
            }
            if k == 0 {
                let t = closedness_probe(&p, &y, &default_probe_sequence())?;
                probe_gap = Ok((t.rows.last().map_or(f64::NAN, |r| r.1) - t.limit).abs());
            }
            Ok(())
        })();
        if let Err(e) = r {
            err.get_or_insert(e);
        }
    }
    for (name, v) in names.iter().zip(worst) {
        ch.at_most(name, err.clone().map_or(Ok(v), Err), 1e-6);
    }
    ch.at_most("closedness_probe_limit_gap", probe_gap, 1e-4);
}

fn scalar_grid(m: usize, f: impl Fn(f64) -> f64) -> sectorcalc_core::Result<GridFunction> {
    GridFunction::scalar_times(1.0, m, 2.0, &CVector::from_real(&[1.0]), f)
}

fn oracle_error(g: &GridFunction, exact: impl Fn(f64) -> f64) -> f64 {
    (0..=g.intervals())
        .map(|j| (g.value(j).get(0) - exact(g.time(j))).norm())
        .fold(0.0, f64::max)
}

fn parabolic(ch: &mut Checks) {
    let op = certified(CMatrix::from_real_diagonal(&[1.0]), 3.0 * PI / 4.0);
    let solve = |m: usize, g: fn(f64) -> f64, exact: fn(f64) -> f64| -> sectorcalc_core::Result<f64> {
        let op = op.clone()?;
        Ok(oracle_error(&parabolic_solve(&op, &scalar_grid(m, g)?)?, exact))
    };
    ch.at_most("scalar_constant_data", solve(200, |_| 1.0, |t| 1.0 - (-t).exp()), 1e-4);
    let coarse = solve(200, |t| (-t).exp(), |t| t * (-t).exp());
    let fine = solve(400, |t| (-t).exp(), |t| t * (-t).exp());
    ch.at_least("refinement_ratio", coarse.and_then(|c| fine.map(|f| c / f)), 3.0);
    let young = (|| {
        let g = scalar_grid(200, |t| (5.0 * t).sin() + 0.5)?;
        let (lhs, bound) = young_bound(&g, Complex64::new(1.5, 2.0))?;
        Ok(lhs / (bound * (1.0 + 10.0 / 200.0)))
    })();
    ch.at_most("young_bound_ratio", young, 1.0);
    let first = (|| {
        let g = scalar_grid(400, |t| (3.0 * t).sin())?;
        let (l, mu) = (Complex64::new(2.0, 1.0), Complex64::new(0.5, -3.0));
        let left = b_resolvent(&g, l).sub(&b_resolvent(&g, mu));
        let right = b_resolvent(&b_resolvent(&g, mu), l).scale(mu - l);
        Ok(left.max_abs_diff(&right))
    })();
    ch.at_most("first_resolvent_identity", first, 1e-5);
    ch.holds("riemann_lebesgue", scalar_grid(200, |_| 1.0).map(|g| riemann_lebesgue_check(&g, 1.0, &default_radii()).verdict));
    ch.holds(
        "derivative_decay",
        scalar_grid(200, |t| t).and_then(|g| derivative_decay_check(&g, 1.0, &default_radii())).map(|d| d.verdict),
    );
    let matrix = (|| {
        let a = CMatrix::from_real_rows(&[&[2.0, 1.0, 0.0], &[0.0, 1.0, 0.5], &[0.0, 0.0, 3.0]])?;
        let op = certified(a.clone(), 3.0 * PI / 4.0)?;
        let g = GridFunction::from_fn(2.0, 100, 2.0, |t| CVector::from_real(&[1.0, t, (2.0 * t).cos()]))?;
        Ok(parabolic_solve(&op, &g)?.max_abs_diff(&duhamel_oracle(&a, &g)?))
    })();
    ch.at_most("matrix_vs_duhamel", matrix, 1e-8);
}

fn hyperbolic(ch: &mut Checks, rng: &mut FamilyRng) {
    let one = CVector::from_real(&[1.0]);
    let problem = |a: f64, c: f64, horizon: f64, m: usize, g: fn(f64) -> f64| {
        let data = GridFunction::scalar_times(horizon, m, 2.0, &one, g)?;
        HyperbolicProblem::from_matrix(CMatrix::from_real_diagonal(&[a]), c, data)
    };
    let line = (|| {
        let p = problem(4.0, 2.0, PI, 400, |_| 1.0)?;
        let f = hyperbolic_solve(&p)?;
        Ok((oracle_error(&f, |t| (1.0 - (2.0 * t).cos()) / 4.0), f.value(0).norm()))
    })();
    ch.at_most("line_solution_vs_closed_form", line.clone().map(|v| v.0), 1e-3);
    ch.holds("initial_value_exact_zero", line.map(|v| v.1 == 0.0));

    let split = (|| {
        let p = problem(4.0, 2.0, 1.0, 8, |t| t * t)?;
        let mut worst = 0.0f64;
        for k in 0..SPLIT_POINTS {
            let z = Complex64::new(-2.0 - rng.random_range(0.0..20.0), rng.random_range(-50.0..50.0));
            let branch = if k % 2 == 0 { Branch::Plus } else { Branch::Minus };
            let s = resolvent_split(&p, z, branch)?;
            let d = resolvent_direct(&p, z, branch)?;
            worst = worst.max(rel(s.max_abs_diff(&d), d.inf_norm()));
        }
        Ok(worst)
    })();
    ch.at_most("split_equivalence", split, 1e-9);

    let shift = (|| {
        let p = problem(4.0, 2.0, PI, 200, |_| 1.0)?;
        let a = hyperbolic_solve_with(&p, 2.0, DEFAULT_HYPERBOLIC_TOL)?.0;
        let b = hyperbolic_solve_with(&p, 2.5, DEFAULT_HYPERBOLIC_TOL)?.0;
        Ok(a.max_abs_diff(&b))
    })();
    ch.at_most("line_offset_independence", shift, 1e-6);

    let oracle = (|| {
        let basis = families::Basis::random(rng, 3);
        let eig: Vec<Complex64> = (0..3).map(|_| Complex64::new(rng.random_range(1.0..6.0), 0.0)).collect();
        let a = basis.assemble(&eig);
        let c = eig.iter().map(|l| l.re.sqrt()).fold(f64::INFINITY, f64::min);
        let g = GridFunction::from_fn(2.0, 200, 2.0, |t| CVector::from_real(&[t, 1.0, (t).sin()]))?;
        let p = HyperbolicProblem::from_matrix(a, c, g)?;
        Ok(hyperbolic_solve(&p)?.max_abs_diff(&sine_kernel_oracle(&p)?))
    })();
    ch.at_most("matrix_vs_sine_kernel", oracle, 1e-3);

    let ident = (|| {
        let p = problem(4.0, 2.0, 1.0, 32, |t| t * t)?;
        verify_identities(&p, 3.0)
    })();
    match ident {
        Ok(r) => {
            for c in &r.checks {
                ch.at_most(&format!("identity_{}", c.name), Ok(c.residual), IDENTITY_TOL);
            }
        }
        Err(e) => ch.at_most("identities", Err(e), IDENTITY_TOL),
    }
}
