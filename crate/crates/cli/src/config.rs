//! Command-line and config-file parsing into a validated [`RunConfig`].

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sectorcalc_core::sectorial::DEFAULT_SAMPLE_BUDGET;
use sectorcalc_core::Complex64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Parser, Debug, Clone, PartialEq)]
#[command(name = "sectorcalc", version, about = "Contour-integral functional calculus for sectorial matrices")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct Output {
    /// Directory for the report and result files; the report is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, PartialEq)]
pub enum Command {
    /// Certify (1+|z|)||(A+z)^{-1}|| <= K on the sector |arg z| <= theta.
    CertifySector {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        theta: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_BUDGET)]
        budget: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Certify the resolvent bounds of the parabola class Q(c).
    CertifyQ {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        c: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_BUDGET)]
        budget: usize,
        #[command(flatten)]
        output: Output,
    },
    /// A^{-theta} for theta in (-1, 1) without 0; negative theta gives a positive power.
    FracPower {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        theta: f64,
        /// Sector angle at which A is certified.
        #[arg(long, default_value_t = PI / 2.0)]
        sector_angle: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_BUDGET)]
        budget: usize,
        #[command(flatten)]
        output: Output,
    },
    /// e^{-wA} for complex w, written `re,im`.
    Semigroup {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, value_parser = parse_complex_flag, allow_hyphen_values = true)]
        w: Complex64,
        #[arg(long, default_value_t = 3.0 * PI / 4.0)]
        sector_angle: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_BUDGET)]
        budget: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Solve (A+B)x = y by the contour inverse of A+B.
    SumSolve {
        #[arg(long)]
        matrix_a: PathBuf,
        #[arg(long)]
        matrix_b: PathBuf,
        #[arg(long)]
        rhs: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        theta_a: f64,
        #[arg(long, allow_negative_numbers = true)]
        theta_b: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_BUDGET)]
        budget: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Solve f' + Af = g, f(0) = 0 on the grid of g.
    Parabolic {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        g: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        theta: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Accepted max-abs distance from the Duhamel oracle.
        #[arg(long, default_value_t = 1e-4)]
        oracle_tol: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_BUDGET)]
        budget: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Solve f'' + Af = g, f(0) = f'(0) = 0 on the line Re z = -c.
    Hyperbolic {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        g: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        c: f64,
        #[arg(long)]
        verify_identities: bool,
        /// Offset of the outer line for the identity checks; defaults to c + 1.
        #[arg(long)]
        outer_c: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Accepted max-abs distance from the sine-kernel oracle.
        #[arg(long, default_value_t = 1e-3)]
        oracle_tol: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Run seeded property suites.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Opcore,
    Sectorial,
    Funcalc,
    Dpg,
    Parabolic,
    Hyperbolic,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Self::Opcore => "opcore",
            Self::Sectorial => "sectorial",
            Self::Funcalc => "funcalc",
            Self::Dpg => "dpg",
            Self::Parabolic => "parabolic",
            Self::Hyperbolic => "hyperbolic",
            Self::All => "all",
        }
    }
}

fn parse_complex_flag(s: &str) -> Result<Complex64, String> {
    sectorcalc_core::io::parse_complex(s, 1).map_err(|_| format!("expected `re,im`, found `{s}`"))
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CertifySector { .. } => "certify-sector",
            Self::CertifyQ { .. } => "certify-q",
            Self::FracPower { .. } => "frac-power",
            Self::Semigroup { .. } => "semigroup",
            Self::SumSolve { .. } => "sum-solve",
            Self::Parabolic { .. } => "parabolic",
            Self::Hyperbolic { .. } => "hyperbolic",
            Self::Verify { .. } => "verify",
        }
    }

    pub fn output(&self) -> &Output {
        match self {
            Self::CertifySector { output, .. }
            | Self::CertifyQ { output, .. }
            | Self::FracPower { output, .. }
            | Self::Semigroup { output, .. }
            | Self::SumSolve { output, .. }
            | Self::Parabolic { output, .. }
            | Self::Hyperbolic { output, .. }
            | Self::Verify { output, .. } => output,
        }
    }

    fn inputs(&self) -> Vec<(&'static str, &Path)> {
        match self {
            Self::CertifySector { matrix, .. }
            | Self::CertifyQ { matrix, .. }
            | Self::FracPower { matrix, .. }
            | Self::Semigroup { matrix, .. } => vec![("--matrix", matrix)],
            Self::SumSolve { matrix_a, matrix_b, rhs, .. } => {
                vec![("--matrix-a", matrix_a), ("--matrix-b", matrix_b), ("--rhs", rhs)]
            }
            Self::Parabolic { matrix, g, .. } | Self::Hyperbolic { matrix, g, .. } => {
                vec![("--matrix", matrix), ("--g", g)]
            }
            Self::Verify { .. } => Vec::new(),
        }
    }
}

fn usage(flag: &str, message: impl std::fmt::Display) -> UsageError {
    UsageError(format!("{flag}: {message}"))
}

fn angle(flag: &str, v: f64) -> Result<(), UsageError> {
    if (0.0..PI).contains(&v) {
        Ok(())
    } else {
        Err(usage(flag, format!("angle {v} must lie in [0, pi)")))
    }
}

fn positive(flag: &str, v: f64) -> Result<(), UsageError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(usage(flag, format!("{v} must be positive and finite")))
    }
}

fn budget(v: usize) -> Result<(), UsageError> {
    if v >= 100 {
        Ok(())
    } else {
        Err(usage("--budget", format!("{v} must be at least 100")))
    }
}

impl RunConfig {
    /// Range checks and input existence.
    pub fn validate(&self) -> Result<(), UsageError> {
        match &self.command {
            Command::CertifySector { theta, budget: b, .. } => {
                angle("--theta", *theta)?;
                budget(*b)?;
            }
            Command::CertifyQ { c, budget: b, .. } => {
                positive("--c", *c)?;
                budget(*b)?;
            }
            Command::FracPower { theta, sector_angle, tol, budget: b, .. } => {
                if !(theta.abs() < 1.0 && *theta != 0.0) {
                    return Err(usage("--theta", format!("exponent {theta} must lie in (-1, 1) without 0")));
                }
                angle("--sector-angle", *sector_angle)?;
                positive("--tol", *tol)?;
                budget(*b)?;
            }
            Command::Semigroup { w, sector_angle, tol, budget: b, .. } => {
                if *w == Complex64::new(0.0, 0.0) {
                    return Err(usage("--w", "w must be nonzero"));
                }
                angle("--sector-angle", *sector_angle)?;
                positive("--tol", *tol)?;
                budget(*b)?;
            }
            Command::SumSolve { theta_a, theta_b, tol, budget: b, .. } => {
                angle("--theta-a", *theta_a)?;
                angle("--theta-b", *theta_b)?;
                positive("--tol", *tol)?;
                budget(*b)?;
            }
            Command::Parabolic { theta, tol, oracle_tol, budget: b, .. } => {
                angle("--theta", *theta)?;
                positive("--tol", *tol)?;
                positive("--oracle-tol", *oracle_tol)?;
                budget(*b)?;
            }
            Command::Hyperbolic { c, outer_c, tol, oracle_tol, .. } => {
                positive("--c", *c)?;
                if let Some(o) = outer_c {
                    if !(*o > *c && o.is_finite()) {
                        return Err(usage("--outer-c", format!("{o} must exceed --c {c}")));
                    }
                }
                positive("--tol", *tol)?;
                positive("--oracle-tol", *oracle_tol)?;
            }
            Command::Verify { .. } => {}
        }
        for (flag, path) in self.command.inputs() {
            if !path.is_file() {
                return Err(usage(flag, format!("no such file `{}`", path.display())));
            }
        }
        Ok(())
    }
}

/// Parses `args` (program name first). `sectorcalc --config FILE` reads the
/// command from a file of `key=value` lines: `command=<name>` plus one line
/// per flag, `true`/`false` for switches. Blank lines and `#` comments are skipped.
pub fn parse_config<I, S>(args: I) -> Result<RunConfig, ParseOutcome>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let args = if args.get(1).map(String::as_str) == Some("--config") {
        match args.get(2) {
            Some(path) if args.len() == 3 => config_file_args(&args[0], Path::new(path)).map_err(ParseOutcome::Usage)?,
            _ => return Err(ParseOutcome::Usage(usage("--config", "expects exactly one file and no other flags"))),
        }
    } else {
        args
    };
    let config = RunConfig::try_parse_from(&args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ParseOutcome::Info(e.to_string()),
        _ => ParseOutcome::Usage(UsageError(e.to_string().trim_end().to_string())),
    })?;
    config.validate().map_err(ParseOutcome::Usage)?;
    Ok(config)
}

/// Why parsing stopped without a config.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseOutcome {
    /// `--help` or `--version` text.
    Info(String),
    Usage(UsageError),
}

fn config_file_args(program: &str, path: &Path) -> Result<Vec<String>, UsageError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage("--config", format!("{}: {e}", path.display())))?;
    let mut command = None;
    let mut flags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage("--config", format!("line {}: expected key=value", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key == "command" {
            command = Some(value.to_string());
        } else if value == "true" {
            flags.push(format!("--{key}"));
        } else if value != "false" {
            flags.push(format!("--{key}"));
            flags.push(value.to_string());
        }
    }
    let command = command.ok_or_else(|| usage("--config", "missing `command=` line"))?;
    Ok([program.to_string(), command].into_iter().chain(flags).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn usage_text(args: &[&str]) -> String {
        match parse_config(args.iter().copied()) {
            Err(ParseOutcome::Usage(e)) => e.0,
            other => panic!("expected usage error, got {other:?}"),
        }
    }

    #[test]
    fn missing_flag_is_named() {
        let msg = usage_text(&["sectorcalc", "sum-solve", "--matrix-b", "b", "--rhs", "y", "--theta-a", "2", "--theta-b", "1.5"]);
        assert!(msg.contains("--matrix-a"), "{msg}");
    }

    #[test]
    fn angles_are_range_checked() {
        let msg = usage_text(&["sectorcalc", "certify-sector", "--matrix", "a", "--theta", "4.0"]);
        assert!(msg.starts_with("--theta"), "{msg}");
        let msg = usage_text(&["sectorcalc", "frac-power", "--matrix", "a", "--theta", "1.5"]);
        assert!(msg.starts_with("--theta"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "command=verify\nsuite=dpg\nbogus=1\n").unwrap();
        let msg = usage_text(&["sectorcalc", "--config", cfg.to_str().unwrap()]);
        assert!(msg.contains("--bogus"), "{msg}");
    }

    #[test]
    fn config_file_matches_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "# suite run\ncommand=verify\nsuite=dpg\nseed=7\n").unwrap();
        let from_file = parse_config(["sectorcalc", "--config", cfg.to_str().unwrap()]).unwrap();
        let from_args = parse_config(["sectorcalc", "verify", "--suite", "dpg", "--seed", "7"]).unwrap();
        assert_eq!(from_file, from_args);
    }

    #[test]
    fn valid_sum_solve() {
        let dir = tempfile::tempdir().unwrap();
        let p = |n: &str| {
            let f = dir.path().join(n);
            std::fs::write(&f, "1\n1,0\n").unwrap();
            f.to_str().unwrap().to_string()
        };
        let (a, b, y) = (p("a.mat"), p("b.mat"), p("y.vec"));
        let cfg = parse_config([
            "sectorcalc", "sum-solve", "--matrix-a", &a, "--matrix-b", &b, "--rhs", &y, "--theta-a", "2.0", "--theta-b", "1.5",
        ])
        .unwrap();
        assert_eq!(cfg.command.name(), "sum-solve");
    }
}
