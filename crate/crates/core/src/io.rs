//! Text formats for matrices, vectors and grid functions.
//!
//! Complex entries are written `re,im` with the shortest decimal that
//! round-trips, so writing then reading is bit-exact. Blank lines are ignored.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::parabolic::GridFunction;

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Non-blank lines with their 1-based line numbers.
struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty()),
        );
        Self {
            inner: it.peekable(),
            last: 0,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last = n;
                Ok((n, l))
            }
            None if self.last == 0 => Err(parse_error(1, "empty input")),
            None => Err(parse_error(self.last + 1, format!("unexpected end of input, expected {what}"))),
        }
    }

    fn finish(&mut self) -> Result<()> {
        match self.inner.next() {
            Some((n, _)) => Err(parse_error(n, "trailing content")),
            None => Ok(()),
        }
    }
}

pub fn parse_complex(token: &str, line: usize) -> Result<Complex64> {
    let (re, im) = token
        .split_once(',')
        .ok_or_else(|| parse_error(line, format!("expected `re,im`, found `{token}`")))?;
    let part = |s: &str| -> Result<f64> {
        let v: f64 = s
            .parse()
            .map_err(|_| parse_error(line, format!("invalid number `{s}` in `{token}`")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(parse_error(line, format!("non-finite number in `{token}`")))
        }
    };
    Ok(Complex64::new(part(re)?, part(im)?))
}

pub fn format_complex(z: Complex64) -> String {
    format!("{},{}", z.re, z.im)
}

fn parse_count(token: &str, line: usize, what: &str) -> Result<usize> {
    match token.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(parse_error(line, format!("{what} must be a positive integer, found `{token}`"))),
    }
}

fn parse_row(text: &str, line: usize, n: usize) -> Result<Vec<Complex64>> {
    let row = text
        .split_whitespace()
        .map(|t| parse_complex(t, line))
        .collect::<Result<Vec<_>>>()?;
    if row.len() != n {
        return Err(parse_error(line, format!("expected {n} entries, found {}", row.len())));
    }
    Ok(row)
}

fn write_row(out: &mut String, row: impl IntoIterator<Item = Complex64>) {
    let row: Vec<String> = row.into_iter().map(format_complex).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

fn header_dim(lines: &mut Lines<'_>) -> Result<usize> {
    let (ln, text) = lines.next("dimension")?;
    let mut tokens = text.split_whitespace();
    let n = parse_count(tokens.next().unwrap_or(""), ln, "dimension")?;
    if tokens.next().is_some() {
        return Err(parse_error(ln, "dimension line has extra tokens"));
    }
    Ok(n)
}

pub fn read_matrix(text: &str) -> Result<CMatrix> {
    let mut lines = Lines::new(text);
    let n = header_dim(&mut lines)?;
    let mut entries = Vec::with_capacity(n * n);
    for _ in 0..n {
        let (ln, row) = lines.next("matrix row")?;
        entries.extend(parse_row(row, ln, n)?);
    }
    lines.finish()?;
    CMatrix::new(n, entries)
}

pub fn write_matrix(a: &CMatrix) -> String {
    let n = a.dim();
    let mut out = format!("{n}\n");
    for i in 0..n {
        write_row(&mut out, (0..n).map(|j| a.get(i, j)));
    }
    out
}

pub fn read_vector(text: &str) -> Result<CVector> {
    let mut lines = Lines::new(text);
    let n = header_dim(&mut lines)?;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, row) = lines.next("vector entry")?;
        entries.extend(parse_row(row, ln, 1)?);
    }
    lines.finish()?;
    CVector::new(entries)
}

pub fn write_vector(v: &CVector) -> String {
    let mut out = format!("{}\n", v.dim());
    for &z in v.entries() {
        let _ = writeln!(out, "{}", format_complex(z));
    }
    out
}

/// Reads `m T p n` followed by m+1 rows of n entries.
pub fn read_grid(text: &str) -> Result<GridFunction> {
    let mut lines = Lines::new(text);
    let (ln, header) = lines.next("grid header")?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 4 {
        return Err(parse_error(ln, format!("grid header needs `m T p n`, found {} tokens", tokens.len())));
    }
    let m = parse_count(tokens[0], ln, "interval count")?;
    let real = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_error(ln, format!("invalid {what} `{s}`")))
    };
    let horizon = real(tokens[1], "horizon")?;
    let exponent = real(tokens[2], "exponent")?;
    let n = parse_count(tokens[3], ln, "dimension")?;
    let mut values = Vec::with_capacity(m + 1);
    for _ in 0..=m {
        let (ln, row) = lines.next("grid row")?;
        values.push(CVector::new(parse_row(row, ln, n)?)?);
    }
    lines.finish()?;
    GridFunction::new(horizon, exponent, values).map_err(|e| parse_error(ln, e.to_string()))
}

pub fn write_grid(g: &GridFunction) -> String {
    let mut out = format!("{} {} {} {}\n", g.intervals(), g.horizon(), g.exponent(), g.dim());
    for v in g.values() {
        write_row(&mut out, v.entries().iter().copied());
    }
    out
}
