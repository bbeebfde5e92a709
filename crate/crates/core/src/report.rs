//! Plain-text reports: a `key=value` header followed by CSV tables.
//!
//! Numbers are written with `Display`, which for `f64` is the shortest
//! string that round-trips, so equal results give byte-equal reports.

use std::fmt::{self, Display, Write as _};

use num_complex::Complex64;

use crate::contour::QuadratureInfo;

/// An `f64` shown in exponent form outside `[1e-4, 1e15)`. Both forms are
/// the shortest decimal that round-trips.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Num(pub f64);

impl Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.0.abs();
        if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
            write!(f, "{:e}", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I, D>(&mut self, row: I)
    where
        I: IntoIterator<Item = D>,
        D: Display,
    {
        let row: Vec<String> = row.into_iter().map(|d| d.to_string()).collect();
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub header: Vec<(String, String)>,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        let value = value.to_string();
        match self.header.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.header.push((key.to_string(), value)),
        }
        self
    }

    pub fn set_complex(&mut self, key: &str, z: Complex64) -> &mut Self {
        self.set(key, format_args!("{},{}", z.re, z.im))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Records contour parameters under `prefix.*`.
    pub fn set_quadrature(&mut self, prefix: &str, q: &QuadratureInfo) -> &mut Self {
        self.set(&format!("{prefix}.path"), q.spec);
        self.set(&format!("{prefix}.nodes"), q.nodes);
        self.set(&format!("{prefix}.radius"), Num(q.radius));
        self.set(&format!("{prefix}.tail_estimate"), Num(q.tail_estimate));
        self.set(&format!("{prefix}.doubling_change"), Num(q.doubling_change))
    }

    pub fn add_table(&mut self, table: Table) -> &mut Self {
        self.tables.push(table);
        self
    }

    /// Appends another report's header and tables, prefixing its keys.
    pub fn merge(&mut self, prefix: &str, other: &Report) -> &mut Self {
        for (k, v) in &other.header {
            self.set(&format!("{prefix}.{k}"), v);
        }
        for t in &other.tables {
            let mut t = t.clone();
            t.name = format!("{prefix}.{}", t.name);
            self.tables.push(t);
        }
        self
    }
}

impl Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for (k, v) in &self.header {
            writeln!(out, "{k}={v}")?;
        }
        for t in &self.tables {
            writeln!(out)?;
            writeln!(out, "# table={}", t.name)?;
            writeln!(out, "{}", t.columns.join(","))?;
            for row in &t.rows {
                writeln!(out, "{}", row.join(","))?;
            }
        }
        f.write_str(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_header_then_tables() {
        let mut r = Report::new();
        r.set("command", "certify-sector").set("theta", 0.5).set("theta", 1.5);
        let mut t = Table::new("decay", &["r", "value"]);
        t.push([0.1, 2.0]);
        r.add_table(t);
        assert_eq!(
            r.to_string(),
            "command=certify-sector\ntheta=1.5\n\n# table=decay\nr,value\n0.1,2\n"
        );
    }

    #[test]
    fn num_switches_to_exponent_form() {
        assert_eq!(Num(2.5e-16).to_string(), "2.5e-16");
        assert_eq!(Num(0.001).to_string(), "0.001");
        assert_eq!(Num(0.0).to_string(), "0");
        assert_eq!(Num(-3e20).to_string(), "-3e20");
        for x in [1.2345678901234567e-9, 0.1 + 0.2, 6.02e23] {
            let back: f64 = Num(x).to_string().parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn floats_round_trip() {
        let x: f64 = 0.1 + 0.2;
        let mut r = Report::new();
        r.set("x", x);
        let back: f64 = r.get("x").unwrap().parse().unwrap();
        assert_eq!(back.to_bits(), x.to_bits());
    }
}
