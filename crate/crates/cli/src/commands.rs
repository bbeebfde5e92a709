//! One function per subcommand. Each builds a [`Report`] whose header
//! starts with the effective configuration.

use std::f64::consts::PI;
use std::fmt::Display;
use std::path::Path;

use sectorcalc_core::contour::QuadratureInfo;
use sectorcalc_core::dpgsum::{
    closedness_probe, default_probe_sequence, inverse_identity_check, kappa_apply_with, smoothed_kappa, KappaRoute,
    SumProblem,
};
use sectorcalc_core::funcalc::{frac_power_neg_with, frac_power_pos, semigroup_with, CalcOptions};
use sectorcalc_core::hyperbolic::{
    decay_split_check, hyperbolic_solve_with, sine_kernel_oracle, verify_identities, HyperbolicProblem,
};
use sectorcalc_core::linalg::{eig_decompose, expm_oracle, Lu};
use sectorcalc_core::parabolic::{
    default_radii, derivative_decay_check, duhamel_oracle, parabolic_solve_with, riemann_lebesgue_check, young_bound,
};
use sectorcalc_core::sectorial::{certify_parabola_class, certify_sector, extend_sector};
use sectorcalc_core::{io, CMatrix, CVector, Complex64, Error, GridFunction, Num, Report, SectorialOperator};

use crate::config::{Command, RunConfig};
use crate::suites;

/// Accepted relative distance of a power from its eigen-oracle.
pub const POWER_ORACLE_TOL: f64 = 1e-7;
/// Accepted relative distance of a semigroup value from its oracle.
pub const SEMIGROUP_ORACLE_TOL: f64 = 1e-8;
/// Accepted relative residuals of the sum solver.
pub const SUM_TOL: f64 = 1e-6;
/// Probe sweep density of the split decay check.
const SPLIT_SWEEP: usize = 24;

pub struct Outcome {
    pub report: Report,
    /// `(file name, contents)` written next to the report.
    pub artifacts: Vec<(String, String)>,
    pub pass: bool,
}

/// Input that could not be read or parsed.
#[derive(Debug)]
pub struct InputError(pub String);

/// A module error tagged with where it happened.
pub struct Failure {
    module: &'static str,
    operation: &'static str,
    error: Error,
}

trait At<T> {
    fn at(self, module: &'static str, operation: &'static str) -> Result<T, Failure>;
}

impl<T> At<T> for sectorcalc_core::Result<T> {
    fn at(self, module: &'static str, operation: &'static str) -> Result<T, Failure> {
        self.map_err(|error| Failure { module, operation, error })
    }
}

fn error_kind(e: &Error) -> String {
    format!("{e:?}").chars().take_while(|c| c.is_alphanumeric()).collect()
}

fn read_input<T>(flag: &str, path: &Path, parse: fn(&str) -> sectorcalc_core::Result<T>) -> Result<T, InputError> {
    let text = std::fs::read_to_string(path).map_err(|e| InputError(format!("{flag} {}: {e}", path.display())))?;
    parse(&text).map_err(|e| InputError(format!("{flag} {}: {e}", path.display())))
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}

/// Effective configuration, every default spelled out.
pub fn config_header(cfg: &RunConfig) -> Report {
    let mut r = Report::new();
    let cmd = &cfg.command;
    r.set("command", cmd.name());
    let mut set = |k: &str, v: &dyn Display| {
        r.set(&format!("config.{k}"), v);
    };
    match cmd {
        Command::CertifySector { matrix, theta, budget, .. } => {
            set("matrix", &matrix.display());
            set("theta", theta);
            set("budget", budget);
        }
        Command::CertifyQ { matrix, c, budget, .. } => {
            set("matrix", &matrix.display());
            set("c", c);
            set("budget", budget);
        }
        Command::FracPower { matrix, theta, sector_angle, tol, budget, .. } => {
            set("matrix", &matrix.display());
            set("theta", theta);
            set("sector_angle", sector_angle);
            set("tol", &Num(*tol));
            set("budget", budget);
        }
        Command::Semigroup { matrix, w, sector_angle, tol, budget, .. } => {
            set("matrix", &matrix.display());
            set("w", &io::format_complex(*w));
            set("sector_angle", sector_angle);
            set("tol", &Num(*tol));
            set("budget", budget);
        }
        Command::SumSolve { matrix_a, matrix_b, rhs, theta_a, theta_b, tol, budget, .. } => {
            set("matrix_a", &matrix_a.display());
            set("matrix_b", &matrix_b.display());
            set("rhs", &rhs.display());
            set("theta_a", theta_a);
            set("theta_b", theta_b);
            set("tol", &Num(*tol));
            set("budget", budget);
        }
        Command::Parabolic { matrix, g, theta, tol, oracle_tol, budget, .. } => {
            set("matrix", &matrix.display());
            set("g", &g.display());
            set("theta", theta);
            set("tol", &Num(*tol));
            set("oracle_tol", &Num(*oracle_tol));
            set("budget", budget);
        }
        Command::Hyperbolic { matrix, g, c, verify_identities, outer_c, tol, oracle_tol, .. } => {
            set("matrix", &matrix.display());
            set("g", &g.display());
            set("c", c);
            set("verify_identities", verify_identities);
            set("outer_c", &outer_c.unwrap_or(c + 1.0));
            set("tol", &Num(*tol));
            set("oracle_tol", &Num(*oracle_tol));
        }
        Command::Verify { suite, seed, .. } => {
            set("suite", &suite.name());
            set("seed", seed);
        }
    }
    if let Some(out) = &cmd.output().out {
        r.set("config.out", out.display());
    }
    r
}

/// Runs `cfg`. Unreadable inputs are errors; module failures become a
/// failing outcome whose report names the module and operation.
pub fn run(cfg: &RunConfig) -> Result<Outcome, InputError> {
    let mut report = config_header(cfg);
    let mut artifacts = Vec::new();
    let result = match &cfg.command {
        Command::CertifySector { matrix, theta, budget, .. } => {
            let a = read_input("--matrix", matrix, io::read_matrix)?;
            certify_sector_cmd(&a, *theta, *budget, &mut report)
        }
        Command::CertifyQ { matrix, c, budget, .. } => {
            let a = read_input("--matrix", matrix, io::read_matrix)?;
            certify_q_cmd(&a, *c, *budget, &mut report)
        }
        Command::FracPower { matrix, theta, sector_angle, tol, budget, .. } => {
            let a = read_input("--matrix", matrix, io::read_matrix)?;
            frac_power_cmd(a, *theta, *sector_angle, *tol, *budget, &mut report, &mut artifacts)
        }
        Command::Semigroup { matrix, w, sector_angle, tol, budget, .. } => {
            let a = read_input("--matrix", matrix, io::read_matrix)?;
            semigroup_cmd(a, *w, *sector_angle, *tol, *budget, &mut report, &mut artifacts)
        }
        Command::SumSolve { matrix_a, matrix_b, rhs, theta_a, theta_b, tol, budget, .. } => {
            let a = read_input("--matrix-a", matrix_a, io::read_matrix)?;
            let b = read_input("--matrix-b", matrix_b, io::read_matrix)?;
            let y = read_input("--rhs", rhs, io::read_vector)?;
            sum_solve_cmd(a, b, &y, (*theta_a, *theta_b), *tol, *budget, &mut report, &mut artifacts)
        }
        Command::Parabolic { matrix, g, theta, tol, oracle_tol, budget, .. } => {
            let a = read_input("--matrix", matrix, io::read_matrix)?;
            let g = read_input("--g", g, io::read_grid)?;
            parabolic_cmd(a, &g, *theta, *tol, *oracle_tol, *budget, &mut report, &mut artifacts)
        }
        Command::Hyperbolic { matrix, g, c, verify_identities, outer_c, tol, oracle_tol, .. } => {
            let a = read_input("--matrix", matrix, io::read_matrix)?;
            let g = read_input("--g", g, io::read_grid)?;
            let outer = outer_c.unwrap_or(c + 1.0);
            let ident = verify_identities.then_some(outer);
            hyperbolic_cmd(a, g, *c, ident, *tol, *oracle_tol, &mut report, &mut artifacts)
        }
        Command::Verify { suite, seed, .. } => suites::run(*suite, *seed, &mut report),
    };
    let pass = match result {
        Ok(pass) => pass,
        Err(f) => {
            report
                .set("error.module", f.module)
                .set("error.operation", f.operation)
                .set("error.kind", error_kind(&f.error))
                .set("error.message", &f.error);
            false
        }
    };
    report.set("status", verdict(pass));
    Ok(Outcome { report, artifacts, pass })
}

fn certify_sector_cmd(a: &CMatrix, theta: f64, budget: usize, r: &mut Report) -> Result<bool, Failure> {
    let (op, cert) = SectorialOperator::certify(a.clone(), theta, budget).at("sectorial", "certify_sector")?;
    r.merge("certification", &cert.to_report());
    let ext = extend_sector(&op);
    r.set("extension.angle", ext.angle()).set("extension.constant", ext.constant());
    let re = certify_sector(a, ext.angle(), budget).at("sectorial", "extend_sector")?;
    let ok = re.constant <= ext.constant();
    r.set("extension.recertified_constant", re.constant)
        .set("extension.verdict", verdict(ok));
    Ok(cert.verdict && ok)
}

fn certify_q_cmd(a: &CMatrix, c: f64, budget: usize, r: &mut Report) -> Result<bool, Failure> {
    let cert = certify_parabola_class(a, c, budget).at("sectorial", "certify_parabola_class")?;
    r.merge("certification", &cert.to_report());
    Ok(cert.verdict)
}

fn certified(a: CMatrix, angle: f64, budget: usize, r: &mut Report) -> Result<SectorialOperator, Failure> {
    let (op, cert) = SectorialOperator::certify(a, angle, budget).at("sectorial", "certify_sector")?;
    r.set("operator.angle", op.angle())
        .set("operator.constant", op.constant())
        .set("operator.provenance", op.provenance())
        .set("operator.certification_samples", cert.samples);
    Ok(op)
}

fn relative(diff: f64, scale: f64) -> f64 {
    diff / scale.max(1.0)
}

fn set_quadrature(r: &mut Report, info: &QuadratureInfo) {
    r.set_quadrature("quadrature", info);
}

fn frac_power_cmd(
    a: CMatrix,
    theta: f64,
    angle: f64,
    tol: f64,
    budget: usize,
    r: &mut Report,
    artifacts: &mut Vec<(String, String)>,
) -> Result<bool, Failure> {
    let op = certified(a, angle, budget, r)?;
    let (m, name) = if theta > 0.0 {
        let adaptive = frac_power_neg_with(&op, theta, &CalcOptions { tol, rho: None }).at("funcalc", "frac_power_neg")?;
        set_quadrature(r, &adaptive.info);
        (adaptive.value, "frac_power_neg")
    } else {
        (frac_power_pos(&op, -theta).at("funcalc", "frac_power_pos")?, "frac_power_pos")
    };
    r.set("operation", name);
    let mut pass = true;
    match eig_decompose(op.matrix()) {
        Ok(eig) => {
            let oracle = eig.map(|l| l.powf(-theta));
            let res = relative(m.max_abs_diff(&oracle), oracle.inf_norm());
            pass = res <= POWER_ORACLE_TOL;
            r.set("oracle.residual", Num(res))
                .set("oracle.tolerance", Num(POWER_ORACLE_TOL))
                .set("oracle.verdict", verdict(pass));
        }
        Err(e) => {
            r.set("oracle.unavailable", e);
        }
    }
    artifacts.push(("power.mat".into(), io::write_matrix(&m)));
    Ok(pass)
}

fn semigroup_cmd(
    a: CMatrix,
    w: Complex64,
    angle: f64,
    tol: f64,
    budget: usize,
    r: &mut Report,
    artifacts: &mut Vec<(String, String)>,
) -> Result<bool, Failure> {
    let op = certified(a, angle, budget, r)?;
    let adaptive = semigroup_with(&op, w, &CalcOptions { tol, rho: None }).at("funcalc", "semigroup")?;
    set_quadrature(r, &adaptive.info);
    let m = adaptive.value;
    let oracle = if w.im == 0.0 {
        Some(("expm_oracle", expm_oracle(op.matrix(), w.re)))
    } else {
        eig_decompose(op.matrix()).ok().map(|e| ("eig_decompose", e.map(|l| (-w * l).exp())))
    };
    let mut pass = true;
    match oracle {
        Some((name, o)) => {
            let res = relative(m.max_abs_diff(&o), o.inf_norm());
            pass = res <= SEMIGROUP_ORACLE_TOL;
            r.set("oracle.kind", name)
                .set("oracle.residual", Num(res))
                .set("oracle.tolerance", Num(SEMIGROUP_ORACLE_TOL))
                .set("oracle.verdict", verdict(pass));
        }
        None => {
            r.set("oracle.unavailable", "complex w on a non-diagonalizable matrix");
        }
    }
    artifacts.push(("semigroup.mat".into(), io::write_matrix(&m)));
    Ok(pass)
}

#[allow(clippy::too_many_arguments)]
fn sum_solve_cmd(
    a: CMatrix,
    b: CMatrix,
    y: &CVector,
    (theta_a, theta_b): (f64, f64),
    tol: f64,
    budget: usize,
    r: &mut Report,
    artifacts: &mut Vec<(String, String)>,
) -> Result<bool, Failure> {
    if y.dim() != a.dim() {
        return Err(Failure {
            module: "dpgsum",
            operation: "kappa_apply",
            error: Error::DimensionMismatch { expected: a.dim(), actual: y.dim() },
        });
    }
    let (op_a, _) = SectorialOperator::certify(a, theta_a, budget).at("sectorial", "certify_sector")?;
    let (op_b, _) = SectorialOperator::certify(b, theta_b, budget).at("sectorial", "certify_sector")?;
    r.set("operator_a.constant", op_a.constant())
        .set("operator_b.constant", op_b.constant());
    let p = SumProblem::new(op_a, op_b).at("dpgsum", "sum_problem")?;
    r.set("commutation_residual", Num(p.commutation_residual));
    let direct = kappa_apply_with(&p, y, KappaRoute::Direct, tol).at("dpgsum", "kappa_apply")?;
    set_quadrature(r, &direct.info);
    let x = direct.value;
    let scale = y.norm().max(f64::MIN_POSITIVE);
    let (pa, pb) = (p.op_a.matrix(), p.op_b.matrix());
    let residual = (&(&pa.apply(&x) + &pb.apply(&x)) - y).norm() / scale;
    let lu = Lu::factor(&(pa + pb), Complex64::new(0.0, 0.0)).at("opcore", "solve_shifted")?;
    let exact = lu.solve(y).at("opcore", "solve_shifted")?;
    let vs_direct = (&x - &exact).norm() / scale;
    let swapped = kappa_apply_with(&p, y, KappaRoute::Swapped, tol).at("dpgsum", "kappa_apply")?.value;
    let route = KappaRoute::default_shifted(&p).at("dpgsum", "kappa_apply")?;
    let shifted = kappa_apply_with(&p, y, route, tol).at("dpgsum", "kappa_apply")?.value;
    let symmetry = (&x - &swapped).norm() / scale;
    let shift = (&x - &shifted).norm() / scale;
    let identity = inverse_identity_check(&p, y).at("dpgsum", "inverse_identity_check")?;
    let mut checks = vec![
        ("sum_residual", residual),
        ("direct_solve", vs_direct),
        ("symmetry", symmetry),
        ("contour_shift", shift),
        ("inverse_identity", identity),
    ];
    if p.op_a.angle() > PI / 2.0 {
        let s = smoothed_kappa(&p, 1.0, y).at("dpgsum", "smoothed_kappa")?;
        checks.push(("smoothed_cross_check", s.cross_check));
        let probe = closedness_probe(&p, y, &default_probe_sequence()).at("dpgsum", "closedness_probe")?;
        let last = probe.rows.last().map_or(0.0, |row| row.1);
        checks.push(("closedness_limit_gap", (last - probe.limit).abs()));
        r.set("closedness.sup", probe.sup).set("closedness.limit", probe.limit);
        r.add_table(probe.to_table());
    } else {
        r.set("smoothing.skipped", "theta_a <= pi/2");
    }
    let mut pass = true;
    let mut table = sectorcalc_core::Table::new("residuals", &["check", "value", "tolerance", "pass"]);
    for (name, v) in checks {
        let tol = if name == "closedness_limit_gap" { 1e-4 } else { SUM_TOL };
        let ok = v <= tol;
        pass &= ok;
        table.push([name.to_string(), Num(v).to_string(), Num(tol).to_string(), verdict(ok).to_string()]);
    }
    r.tables.insert(0, table);
    artifacts.push(("solution.vec".into(), io::write_vector(&x)));
    Ok(pass)
}

#[allow(clippy::too_many_arguments)]
fn parabolic_cmd(
    a: CMatrix,
    g: &GridFunction,
    theta: f64,
    tol: f64,
    oracle_tol: f64,
    budget: usize,
    r: &mut Report,
    artifacts: &mut Vec<(String, String)>,
) -> Result<bool, Failure> {
    if g.dim() != a.dim() {
        return Err(Failure {
            module: "parabolic",
            operation: "parabolic_solve",
            error: Error::DimensionMismatch { expected: a.dim(), actual: g.dim() },
        });
    }
    let op = certified(a, theta, budget, r)?;
    let (f, info) = parabolic_solve_with(&op, g, tol).at("parabolic", "parabolic_solve")?;
    set_quadrature(r, &info);
    let oracle = duhamel_oracle(op.matrix(), g).at("parabolic", "duhamel_oracle")?;
    let err = f.max_abs_diff(&oracle);
    let mut pass = err <= oracle_tol;
    r.set("grid.intervals", g.intervals())
        .set("grid.horizon", g.horizon())
        .set("grid.exponent", g.exponent())
        .set("oracle.max_abs_diff", Num(err))
        .set("oracle.tolerance", Num(oracle_tol))
        .set("oracle.verdict", verdict(err <= oracle_tol))
        .set(
            "discrete_equation_residual",
            Num(sectorcalc_core::parabolic::discrete_equation_residual(op.matrix(), &f, g)),
        );
    let (lhs, bound) = young_bound(g, Complex64::new(1.0, 0.0)).at("parabolic", "young_bound")?;
    let slack = 1.0 + 10.0 / g.intervals() as f64;
    let young = lhs <= bound * slack;
    pass &= young;
    r.set("young.lhs", lhs).set("young.bound", bound).set("young.slack", slack).set("young.verdict", verdict(young));
    let rl = riemann_lebesgue_check(g, 1.0, &default_radii());
    pass &= rl.verdict;
    r.set("riemann_lebesgue.verdict", verdict(rl.verdict));
    for (k, n) in rl.notes.iter().enumerate() {
        r.set(&format!("riemann_lebesgue.note{k}"), n);
    }
    r.add_table(rl.table);
    match derivative_decay_check(g, 1.0, &default_radii()) {
        Ok(d) => {
            pass &= d.verdict;
            r.set("derivative_decay.verdict", verdict(d.verdict));
            for (k, n) in d.notes.iter().enumerate() {
                r.set(&format!("derivative_decay.note{k}"), n);
            }
            r.add_table(d.table);
        }
        Err(Error::PreconditionViolated(m)) => {
            r.set("derivative_decay.skipped", m);
        }
        Err(e) => return Err(e).at("parabolic", "derivative_decay_check"),
    }
    artifacts.push(("solution.grid".into(), io::write_grid(&f)));
    Ok(pass)
}

#[allow(clippy::too_many_arguments)]
fn hyperbolic_cmd(
    a: CMatrix,
    g: GridFunction,
    c: f64,
    identities: Option<f64>,
    tol: f64,
    oracle_tol: f64,
    r: &mut Report,
    artifacts: &mut Vec<(String, String)>,
) -> Result<bool, Failure> {
    if g.dim() != a.dim() {
        return Err(Failure {
            module: "hyperbolic",
            operation: "hyperbolic_solve",
            error: Error::DimensionMismatch { expected: a.dim(), actual: g.dim() },
        });
    }
    let p = HyperbolicProblem::from_matrix(a, c, g).at("hyperbolic", "hyperbolic_problem")?;
    r.set("operator.q_constant", p.certification().constant)
        .set("operator.sqrt_residual", Num(p.sqrt_residual()));
    let (f, info) = hyperbolic_solve_with(&p, c, tol).at("hyperbolic", "hyperbolic_solve")?;
    set_quadrature(r, &info);
    let g = p.data();
    let mut pass = f.value(0).norm() == 0.0;
    r.set("grid.intervals", g.intervals())
        .set("grid.horizon", g.horizon())
        .set("grid.exponent", g.exponent())
        .set("initial_value_exact_zero", f.value(0).norm() == 0.0)
        .set(
            "discrete_equation_residual",
            Num(sectorcalc_core::hyperbolic::discrete_equation_residual(p.op().matrix(), &f, g)),
        );
    match sine_kernel_oracle(&p) {
        Ok(o) => {
            let err = f.max_abs_diff(&o);
            pass &= err <= oracle_tol;
            r.set("oracle.max_abs_diff", Num(err))
                .set("oracle.tolerance", Num(oracle_tol))
                .set("oracle.verdict", verdict(err <= oracle_tol));
        }
        Err(e) => {
            r.set("oracle.unavailable", e);
        }
    }
    let split = decay_split_check(&p, SPLIT_SWEEP).at("hyperbolic", "decay_split_check")?;
    pass &= split.verdict;
    r.set("split_decay.verdict", verdict(split.verdict));
    for (k, n) in split.notes.iter().enumerate() {
        r.set(&format!("split_decay.note{k}"), n);
    }
    r.add_table(split.table);
    if let Some(outer) = identities {
        let ident = verify_identities(&p, outer).at("hyperbolic", "verify_identities")?;
        pass &= ident.pass;
        r.set("identities.verdict", verdict(ident.pass));
        r.set_quadrature("identities.inner", &ident.inner_info);
        r.set_quadrature("identities.outer", &ident.outer_info);
        let table = ident.to_table();
        artifacts.push(("identity_residuals.csv".into(), table_csv(&table)));
        r.add_table(table);
    }
    artifacts.push(("solution.grid".into(), io::write_grid(&f)));
    Ok(pass)
}

fn table_csv(t: &sectorcalc_core::Table) -> String {
    let mut out = t.columns.join(",");
    out.push('\n');
    for row in &t.rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
