//! Candidate model spaces searched by the estimators.

use std::fmt;
use std::str::FromStr;

use super::{default_names, FieldSpec, IntMatrix, Stoichiometry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SearchSpace {
    /// `X_i + X_j -> 2X_i` (i != j), `X_i -> 2X_i` and `X_i -> 0`.
    LotkaVolterra,
    /// `X_i + X_j -> 2X_i`, i != j.
    Enzyme,
    /// `X_i + X_j -> X_i + X_k` with i, j, k distinct.
    EnzymeThreeIndex,
    /// Rational law kinetics where numerator and denominator monomials run
    /// over all first-order terms (the constant 1 and each `x_i`).
    RationalFirstOrder,
    /// `X -> Y`, `X + Y -> Z` and `Z -> X + Y` over distinct species.
    Conversion,
}

impl SearchSpace {
    pub fn name(self) -> &'static str {
        match self {
            SearchSpace::LotkaVolterra => "lotka-volterra",
            SearchSpace::Enzyme => "enzyme",
            SearchSpace::EnzymeThreeIndex => "enzyme-three-index",
            SearchSpace::RationalFirstOrder => "rational-first-order",
            SearchSpace::Conversion => "conversion",
        }
    }
}

impl fmt::Display for SearchSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SearchSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lotka-volterra" | "lotka-volterra-space" => SearchSpace::LotkaVolterra,
            "enzyme" | "two-index" => SearchSpace::Enzyme,
            "enzyme-three-index" | "three-index" => SearchSpace::EnzymeThreeIndex,
            "rational-first-order" => SearchSpace::RationalFirstOrder,
            "conversion" | "envz" => SearchSpace::Conversion,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown search space {other:?}"
                )))
            }
        })
    }
}

struct Builder {
    d: usize,
    names: Vec<String>,
    reactants: Vec<Vec<u32>>,
    products: Vec<Vec<u32>>,
}

impl Builder {
    fn new(d: usize) -> Self {
        Builder {
            d,
            names: Vec::new(),
            reactants: Vec::new(),
            products: Vec::new(),
        }
    }

    fn push(&mut self, lhs: &[usize], rhs: &[usize]) {
        let mut a = vec![0; self.d];
        let mut b = vec![0; self.d];
        lhs.iter().for_each(|&i| a[i] += 1);
        rhs.iter().for_each(|&i| b[i] += 1);
        self.names.push(format!("{}->{}", side(&a), side(&b)));
        self.reactants.push(a);
        self.products.push(b);
    }

    fn build(self) -> Result<FieldSpec> {
        let st = Stoichiometry::new(
            IntMatrix::from_rows(&self.reactants)?,
            IntMatrix::from_rows(&self.products)?,
            default_names("X", self.d),
            self.names,
        )?;
        Ok(FieldSpec::mass_action(st))
    }
}

fn side(coef: &[u32]) -> String {
    let parts: Vec<String> = coef
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| {
            if c == 1 {
                format!("X{}", i + 1)
            } else {
                format!("{c}X{}", i + 1)
            }
        })
        .collect();
    if parts.is_empty() {
        "0".into()
    } else {
        parts.join("+")
    }
}

/// Enumerates a candidate search space over `d` species in a fixed
/// lexicographic order.
pub fn enumerate_search_space(kind: SearchSpace, d: usize) -> Result<FieldSpec> {
    if d < 2 {
        return Err(Error::InvalidInput(format!(
            "search space {kind} needs at least 2 species, got {d}"
        )));
    }
    match kind {
        SearchSpace::LotkaVolterra => {
            let mut b = Builder::new(d);
            for i in 0..d {
                for j in (0..d).filter(|&j| j != i) {
                    b.push(&[i, j], &[i, i]);
                }
            }
            for i in 0..d {
                b.push(&[i], &[i, i]);
            }
            for i in 0..d {
                b.push(&[i], &[]);
            }
            b.build()
        }
        SearchSpace::Enzyme => {
            let mut b = Builder::new(d);
            for i in 0..d {
                for j in (0..d).filter(|&j| j != i) {
                    b.push(&[i, j], &[i, i]);
                }
            }
            b.build()
        }
        SearchSpace::EnzymeThreeIndex => {
            if d < 3 {
                return Err(Error::InvalidInput(
                    "three-index reactions need at least 3 species".into(),
                ));
            }
            let mut b = Builder::new(d);
            for i in 0..d {
                for j in (0..d).filter(|&j| j != i) {
                    for k in (0..d).filter(|&k| k != i && k != j) {
                        b.push(&[i, j], &[i, k]);
                    }
                }
            }
            b.build()
        }
        SearchSpace::Conversion => {
            if d < 3 {
                return Err(Error::InvalidInput(
                    "conversion reactions need at least 3 species".into(),
                ));
            }
            let mut b = Builder::new(d);
            for x in 0..d {
                for y in (0..d).filter(|&y| y != x) {
                    b.push(&[x], &[y]);
                }
            }
            for x in 0..d {
                for y in x + 1..d {
                    for z in (0..d).filter(|&z| z != x && z != y) {
                        b.push(&[x, y], &[z]);
                    }
                }
            }
            for x in 0..d {
                for y in x + 1..d {
                    for z in (0..d).filter(|&z| z != x && z != y) {
                        b.push(&[z], &[x, y]);
                    }
                }
            }
            b.build()
        }
        SearchSpace::RationalFirstOrder => {
            let first_order: Vec<Vec<u32>> = (0..=d)
                .map(|k| {
                    let mut row = vec![0; d];
                    if k > 0 {
                        row[k - 1] = 1;
                    }
                    row
                })
                .collect();
            let mut num = Vec::with_capacity((d + 1) * (d + 1));
            let mut den = Vec::with_capacity((d + 1) * (d + 1));
            for a in &first_order {
                for b in &first_order {
                    num.push(a.clone());
                    den.push(b.clone());
                }
            }
            FieldSpec::rational_law(
                IntMatrix::from_rows(&num)?,
                IntMatrix::from_rows(&den)?,
                default_names("X", d),
            )
        }
    }
}

/// Index of the reaction with the given reactant and product multisets in a
/// mass action spec, if present.
pub fn find_reaction(spec: &FieldSpec, lhs: &[usize], rhs: &[usize]) -> Option<usize> {
    let super::FieldKind::Mak(st) = spec.kind() else {
        return None;
    };
    let d = spec.dim();
    let mut a = vec![0u32; d];
    let mut b = vec![0u32; d];
    lhs.iter().for_each(|&i| a[i] += 1);
    rhs.iter().for_each(|&i| b[i] += 1);
    (0..st.n_reactions()).find(|&r| st.reactants().row(r) == a && st.products().row(r) == b)
}
