//! Line-based text format for field specifications.
//!
//! ```text
//! field-spec 1
//! family mak
//! species X1 X2
//! reactions R1
//! reactants 1 2
//! 1 1
//! products 1 2
//! 2 0
//! theta 1.0
//! ```
//!
//! Matrix blocks start with `<name> <rows> <cols>` followed by one line per
//! row. The `theta` line is optional. Floats use the shortest round-trip
//! representation, so values survive a write/read cycle exactly.

use std::fmt::Write as _;

use super::{FieldKind, FieldSpec, IntMatrix, Stoichiometry};
use crate::error::{Error, Result};

pub const FIELD_SCHEMA_VERSION: u32 = 1;

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn write_matrix(out: &mut String, name: &str, m: &IntMatrix) {
    let _ = writeln!(out, "{name} {} {}", m.rows(), m.cols());
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(u32::to_string).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

/// Serializes a spec and optionally a parameter vector.
pub fn write_field(spec: &FieldSpec, theta: Option<&[f64]>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "field-spec {FIELD_SCHEMA_VERSION}");
    let _ = writeln!(out, "family {}", spec.family().tag());
    let _ = writeln!(out, "species {}", spec.species().join(" "));
    match spec.kind() {
        FieldKind::Mak(st) => {
            let _ = writeln!(out, "reactions {}", st.reactions().join(" "));
            write_matrix(&mut out, "reactants", st.reactants());
            write_matrix(&mut out, "products", st.products());
        }
        FieldKind::Plk { exponents } => write_matrix(&mut out, "exponents", exponents),
        FieldKind::Rlk {
            numerator,
            denominator,
        } => {
            write_matrix(&mut out, "numerator", numerator);
            write_matrix(&mut out, "denominator", denominator);
        }
        FieldKind::Rmak {
            exponents,
            complexes,
        } => {
            write_matrix(&mut out, "exponents", exponents);
            write_matrix(&mut out, "complexes", complexes);
        }
    }
    if let Some(theta) = theta {
        let vals: Vec<String> = theta.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "theta {}", vals.join(" "));
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (n, line) in self.inner.by_ref() {
            let line = line.trim();
            if !line.is_empty() && !line.starts_with('#') {
                return Some((n + 1, line));
            }
        }
        None
    }

    fn expect(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self
            .next_line()
            .ok_or_else(|| Error::Parse(format!("unexpected end of input, wanted {key:?}")))?;
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or_default();
        if head != key {
            return Err(Error::Parse(format!(
                "line {n}: expected {key:?}, found {head:?}"
            )));
        }
        Ok((n, parts.collect()))
    }

    fn matrix(&mut self, key: &str) -> Result<IntMatrix> {
        let (n, dims) = self.expect(key)?;
        if dims.len() != 2 {
            return Err(Error::Parse(format!("line {n}: {key} needs <rows> <cols>")));
        }
        let rows: usize = parse_num(dims[0], n)?;
        let cols: usize = parse_num(dims[1], n)?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = self
                .next_line()
                .ok_or_else(|| Error::Parse(format!("truncated matrix {key}")))?;
            let row: Vec<u32> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<u32>().map_err(|_| {
                        Error::InvalidSpec(format!(
                            "line {n}: exponent {t:?} is not a non-negative integer"
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(Error::Parse(format!(
                    "line {n}: expected {cols} entries, found {}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        IntMatrix::new(rows, cols, data)
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad number {tok:?}")))
}

/// Parses the output of [`write_field`].
pub fn read_field(input: &str) -> Result<(FieldSpec, Option<Vec<f64>>)> {
    let mut lines = Lines {
        inner: input.lines().enumerate().peekable(),
    };
    let (_, version) = lines.expect("field-spec")?;
    let found = version.first().copied().unwrap_or_default();
    if found != FIELD_SCHEMA_VERSION.to_string() {
        return Err(Error::Schema {
            expected: FIELD_SCHEMA_VERSION,
            found: found.to_string(),
        });
    }
    let (n, fam) = lines.expect("family")?;
    let species: Vec<String> = lines
        .expect("species")?
        .1
        .into_iter()
        .map(String::from)
        .collect();
    let spec = match fam.first().copied() {
        Some("mak") => {
            let reactions = lines
                .expect("reactions")?
                .1
                .into_iter()
                .map(String::from)
                .collect();
            let a = lines.matrix("reactants")?;
            let b = lines.matrix("products")?;
            FieldSpec::mass_action(Stoichiometry::new(a, b, species, reactions)?)
        }
        Some("plk") => FieldSpec::power_law(lines.matrix("exponents")?, species)?,
        Some("rlk") => {
            let a = lines.matrix("numerator")?;
            let b = lines.matrix("denominator")?;
            FieldSpec::rational_law(a, b, species)?
        }
        Some("rmak") => {
            let a = lines.matrix("exponents")?;
            let c = lines.matrix("complexes")?;
            FieldSpec::rational_mass_action(a, c, species)?
        }
        other => return Err(Error::Parse(format!("line {n}: unknown family {other:?}"))),
    };
    let theta = match lines.next_line() {
        None => None,
        Some((n, line)) => {
            let mut parts = line.split_whitespace();
            if parts.next() != Some("theta") {
                return Err(Error::Parse(format!("line {n}: expected theta")));
            }
            let vals: Vec<f64> = parts.map(|t| parse_num(t, n)).collect::<Result<_>>()?;
            if vals.len() != spec.n_params() {
                return Err(Error::dim("theta line", spec.n_params(), vals.len()));
            }
            Some(vals)
        }
    };
    Ok((spec, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{enumerate_search_space, SearchSpace};
    use proptest::prelude::*;

    #[test]
    fn every_family_round_trips() {
        for spec in crate::field::tests::sample_specs() {
            let theta: Vec<f64> = (0..spec.n_params())
                .map(|j| 0.1 * j as f64 + 1e-17)
                .collect();
            let text = write_field(&spec, Some(&theta));
            let (back, t) = read_field(&text).unwrap();
            assert_eq!(back, spec);
            assert_eq!(t.unwrap(), theta);
            assert_eq!(write_field(&back, Some(&theta)), text);
        }
    }

    #[test]
    fn rejects_fractional_exponent_and_bad_version() {
        let spec = enumerate_search_space(SearchSpace::Enzyme, 2).unwrap();
        let text = write_field(&spec, None);
        let bad = text.replacen("1 1\n", "1 1.5\n", 1);
        assert!(read_field(&bad).is_err());
        let bad = text.replacen("field-spec 1", "field-spec 9", 1);
        assert!(matches!(read_field(&bad), Err(Error::Schema { .. })));
    }

    proptest! {
        #[test]
        fn theta_values_round_trip_exactly(theta in proptest::collection::vec(-1e6f64..1e6, 6)) {
            let spec = enumerate_search_space(SearchSpace::Enzyme, 3).unwrap();
            let (_, back) = read_field(&write_field(&spec, Some(&theta))).unwrap();
            prop_assert_eq!(back.unwrap(), theta);
        }
    }
}
