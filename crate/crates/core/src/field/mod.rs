//! Parameterized ODE vector fields.
//!
//! Four families are supported, all with fixed non-negative integer exponent
//! structure and estimable coefficients:
//!
//! * mass action kinetics (MAK): `dx/dt = (B - A)^T diag(x^A) k`
//! * power law kinetics (PLK): `dx/dt = theta x^A`
//! * rational law kinetics (RLK): `dx/dt = theta x^A / (1 + x^B)`
//! * rational mass action kinetics (RMAK):
//!   `dx/dt = C^T (theta1 x^A) / (1 + theta2 x^A)`
//!
//! Matrix-shaped coefficients are vectorized row-major, so for PLK and RLK the
//! coefficient on monomial `r` in the equation of species `i` sits at index
//! `i * R + r`. For RMAK the `theta1` block comes first, followed by `theta2`.

mod monomial;
pub mod space;
pub mod text;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use monomial::Monomial;

pub use space::{enumerate_search_space, find_reaction, SearchSpace};

/// Dense row-major matrix of non-negative integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u32>,
}

impl IntMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("integer matrix data", rows * cols, data.len()));
        }
        Ok(IntMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::dim("integer matrix row", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(IntMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u32) {
        self.data[r * self.cols + c] = v;
    }
}

/// Reactant and product coefficients of a reaction network.
#[derive(Debug, Clone, PartialEq)]
pub struct Stoichiometry {
    reactants: IntMatrix,
    products: IntMatrix,
    species: Vec<String>,
    reactions: Vec<String>,
}

impl Stoichiometry {
    pub fn new(
        reactants: IntMatrix,
        products: IntMatrix,
        species: Vec<String>,
        reactions: Vec<String>,
    ) -> Result<Self> {
        if reactants.rows != products.rows || reactants.cols != products.cols {
            return Err(Error::InvalidSpec(format!(
                "reactant matrix is {}x{} but product matrix is {}x{}",
                reactants.rows, reactants.cols, products.rows, products.cols
            )));
        }
        if species.len() != reactants.cols {
            return Err(Error::dim("species names", reactants.cols, species.len()));
        }
        if reactions.len() != reactants.rows {
            return Err(Error::dim(
                "reaction names",
                reactants.rows,
                reactions.len(),
            ));
        }
        for r in 0..reactants.rows {
            if reactants.row(r) == products.row(r) {
                return Err(Error::InvalidSpec(format!(
                    "reaction {} ({}) has no net effect",
                    r, reactions[r]
                )));
            }
        }
        check_names(&species)?;
        check_names(&reactions)?;
        Ok(Stoichiometry {
            reactants,
            products,
            species,
            reactions,
        })
    }

    /// Builds a network with species named `X1..Xd` and reactions `R1..RR`.
    pub fn with_default_names(reactants: IntMatrix, products: IntMatrix) -> Result<Self> {
        let species = default_names("X", reactants.cols);
        let reactions = default_names("R", reactants.rows);
        Stoichiometry::new(reactants, products, species, reactions)
    }

    pub fn reactants(&self) -> &IntMatrix {
        &self.reactants
    }

    pub fn products(&self) -> &IntMatrix {
        &self.products
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn reactions(&self) -> &[String] {
        &self.reactions
    }

    pub fn n_reactions(&self) -> usize {
        self.reactants.rows
    }
}

pub(crate) fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn check_names(names: &[String]) -> Result<()> {
    for n in names {
        if n.is_empty() || n.chars().any(char::is_whitespace) {
            return Err(Error::InvalidSpec(format!("invalid label {n:?}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mak,
    Plk,
    Rlk,
    Rmak,
}

impl Family {
    pub fn tag(self) -> &'static str {
        match self {
            Family::Mak => "mak",
            Family::Plk => "plk",
            Family::Rlk => "rlk",
            Family::Rmak => "rmak",
        }
    }
}

/// The user-facing structure of a field family.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    Mak(Stoichiometry),
    Plk {
        exponents: IntMatrix,
    },
    Rlk {
        numerator: IntMatrix,
        denominator: IntMatrix,
    },
    Rmak {
        exponents: IntMatrix,
        complexes: IntMatrix,
    },
}

#[derive(Debug, Clone)]
struct Scalar {
    num: Monomial,
    den: Option<Monomial>,
    vars: Vec<usize>,
}

impl Scalar {
    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        let m = self.num.eval(x);
        match &self.den {
            None => m,
            Some(den) => m / (1.0 + den.eval(x)),
        }
    }

    #[inline]
    fn add_gradient(&self, x: &[f64], scale: f64, grad: &mut [f64]) {
        match &self.den {
            None => self.num.add_gradient(x, scale, grad),
            Some(den) => {
                let q = 1.0 + den.eval(x);
                let m = self.num.eval(x);
                self.num.add_gradient(x, scale / q, grad);
                den.add_gradient(x, -scale * m / (q * q), grad);
            }
        }
    }

    fn new(num: Monomial, den: Option<Monomial>) -> Self {
        let mut vars: Vec<usize> = num
            .factors()
            .iter()
            .chain(den.iter().flat_map(|d| d.factors().iter()))
            .map(|&(i, _)| i)
            .collect();
        vars.sort_unstable();
        vars.dedup();
        Scalar { num, den, vars }
    }
}

#[derive(Debug, Clone)]
struct Term {
    scalar: usize,
    dir: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
enum Compiled {
    /// `f(x, theta) = sum_j theta_j * scalar_j(x) * dir_j`
    Linear {
        scalars: Vec<Scalar>,
        terms: Vec<Term>,
    },
    Rmak {
        monos: Vec<Monomial>,
        complexes: Vec<Vec<(usize, f64)>>,
    },
}

/// An ODE field family with its fixed structure. Immutable once built.
#[derive(Debug, Clone)]
pub struct FieldSpec {
    kind: FieldKind,
    species: Vec<String>,
    compiled: Compiled,
}

impl PartialEq for FieldSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.species == other.species
    }
}

impl FieldSpec {
    pub fn mass_action(stoich: Stoichiometry) -> Self {
        let species = stoich.species.clone();
        let d = species.len();
        let mut scalars = Vec::with_capacity(stoich.n_reactions());
        let mut terms = Vec::with_capacity(stoich.n_reactions());
        for r in 0..stoich.n_reactions() {
            let a = stoich.reactants.row(r);
            let b = stoich.products.row(r);
            scalars.push(Scalar::new(Monomial::from_row(a), None));
            let dir = (0..d)
                .filter(|&i| a[i] != b[i])
                .map(|i| (i, b[i] as f64 - a[i] as f64))
                .collect();
            terms.push(Term { scalar: r, dir });
        }
        FieldSpec {
            kind: FieldKind::Mak(stoich),
            species,
            compiled: Compiled::Linear { scalars, terms },
        }
    }

    pub fn power_law(exponents: IntMatrix, species: Vec<String>) -> Result<Self> {
        if species.len() != exponents.cols {
            return Err(Error::dim("species names", exponents.cols, species.len()));
        }
        check_names(&species)?;
        let d = species.len();
        let r = exponents.rows;
        let scalars = (0..r)
            .map(|s| Scalar::new(Monomial::from_row(exponents.row(s)), None))
            .collect();
        Ok(FieldSpec {
            kind: FieldKind::Plk { exponents },
            species,
            compiled: Compiled::Linear {
                scalars,
                terms: per_species_terms(d, r),
            },
        })
    }

    pub fn rational_law(
        numerator: IntMatrix,
        denominator: IntMatrix,
        species: Vec<String>,
    ) -> Result<Self> {
        if numerator.rows != denominator.rows || numerator.cols != denominator.cols {
            return Err(Error::InvalidSpec(
                "numerator and denominator exponent matrices differ in shape".into(),
            ));
        }
        if species.len() != numerator.cols {
            return Err(Error::dim("species names", numerator.cols, species.len()));
        }
        check_names(&species)?;
        let d = species.len();
        let r = numerator.rows;
        let scalars = (0..r)
            .map(|s| {
                Scalar::new(
                    Monomial::from_row(numerator.row(s)),
                    Some(Monomial::from_row(denominator.row(s))),
                )
            })
            .collect();
        Ok(FieldSpec {
            kind: FieldKind::Rlk {
                numerator,
                denominator,
            },
            species,
            compiled: Compiled::Linear {
                scalars,
                terms: per_species_terms(d, r),
            },
        })
    }

    pub fn rational_mass_action(
        exponents: IntMatrix,
        complexes: IntMatrix,
        species: Vec<String>,
    ) -> Result<Self> {
        if exponents.cols != complexes.cols {
            return Err(Error::InvalidSpec(
                "exponent and complex matrices must have one column per species".into(),
            ));
        }
        if species.len() != exponents.cols {
            return Err(Error::dim("species names", exponents.cols, species.len()));
        }
        check_names(&species)?;
        let monos = (0..exponents.rows)
            .map(|j| Monomial::from_row(exponents.row(j)))
            .collect();
        let cplx = (0..complexes.rows)
            .map(|s| {
                complexes
                    .row(s)
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c != 0)
                    .map(|(i, &c)| (i, c as f64))
                    .collect()
            })
            .collect();
        Ok(FieldSpec {
            kind: FieldKind::Rmak {
                exponents,
                complexes,
            },
            species,
            compiled: Compiled::Rmak {
                monos,
                complexes: cplx,
            },
        })
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn family(&self) -> Family {
        match self.kind {
            FieldKind::Mak(_) => Family::Mak,
            FieldKind::Plk { .. } => Family::Plk,
            FieldKind::Rlk { .. } => Family::Rlk,
            FieldKind::Rmak { .. } => Family::Rmak,
        }
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn dim(&self) -> usize {
        self.species.len()
    }

    pub fn n_params(&self) -> usize {
        match &self.compiled {
            Compiled::Linear { terms, .. } => terms.len(),
            Compiled::Rmak { monos, complexes } => 2 * monos.len() * complexes.len(),
        }
    }

    /// True for the families whose field is linear in the parameters.
    pub fn is_theta_linear(&self) -> bool {
        matches!(self.compiled, Compiled::Linear { .. })
    }

    /// Default box constraints: rate constants and RMAK denominator
    /// coefficients are non-negative, everything else is free.
    pub fn default_bounds(&self) -> Vec<(f64, f64)> {
        let p = self.n_params();
        match &self.kind {
            FieldKind::Mak(_) => vec![(0.0, f64::INFINITY); p],
            FieldKind::Plk { .. } | FieldKind::Rlk { .. } => {
                vec![(f64::NEG_INFINITY, f64::INFINITY); p]
            }
            FieldKind::Rmak { .. } => {
                let mut b = vec![(f64::NEG_INFINITY, f64::INFINITY); p / 2];
                b.extend(std::iter::repeat_n((0.0, f64::INFINITY), p / 2));
                b
            }
        }
    }

    /// Human readable label of parameter coordinate `j`.
    pub fn param_label(&self, j: usize) -> String {
        match &self.kind {
            FieldKind::Mak(st) => st.reactions[j].clone(),
            FieldKind::Plk { exponents }
            | FieldKind::Rlk {
                numerator: exponents,
                ..
            } => {
                let r = exponents.rows;
                format!("{}:{}", self.species[j / r], j % r)
            }
            FieldKind::Rmak {
                exponents,
                complexes,
            } => {
                let b = exponents.rows;
                let block = complexes.rows * b;
                let (which, k) = if j < block { (1, j) } else { (2, j - block) };
                format!("theta{which}[{},{}]", k / b, k % b)
            }
        }
    }

    /// Structural network edges `(from, to)` switched on by a nonzero
    /// coordinate `j`: `from -> to` whenever `d^2 f_to / d theta_j d x_from`
    /// is not identically zero.
    pub fn param_edges(&self, j: usize) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        match &self.compiled {
            Compiled::Linear { scalars, terms } => {
                let term = &terms[j];
                let vars = &scalars[term.scalar].vars;
                for &(i, _) in &term.dir {
                    for &l in vars {
                        edges.push((l, i));
                    }
                }
            }
            Compiled::Rmak { monos, complexes } => {
                let b = monos.len();
                let k = j % (complexes.len() * b);
                let (s, m) = (k / b, k % b);
                for &(i, _) in &complexes[s] {
                    for &(l, _) in monos[m].factors() {
                        edges.push((l, i));
                    }
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Structural adjacency (`adj[to][from]`) of the network induced by the
    /// support of `theta`.
    pub fn network(&self, theta: &[f64]) -> Vec<Vec<bool>> {
        let d = self.dim();
        let mut adj = vec![vec![false; d]; d];
        for (j, &t) in theta.iter().enumerate() {
            if t != 0.0 {
                for (l, i) in self.param_edges(j) {
                    adj[i][l] = true;
                }
            }
        }
        adj
    }

    /// Evaluates the field without validation. Integer exponents make the
    /// formula well-defined for any real state, which the solvers and the
    /// collocation quadrature rely on when noisy curves dip below zero.
    pub fn eval_into(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.compiled {
            Compiled::Linear { scalars, terms } => {
                for (term, &t) in terms.iter().zip(theta) {
                    if t == 0.0 {
                        continue;
                    }
                    let v = t * scalars[term.scalar].eval(x);
                    for &(i, c) in &term.dir {
                        out[i] += c * v;
                    }
                }
            }
            Compiled::Rmak { monos, complexes } => {
                let b = monos.len();
                let block = complexes.len() * b;
                let mvals: Vec<f64> = monos.iter().map(|m| m.eval(x)).collect();
                for (s, cplx) in complexes.iter().enumerate() {
                    let (num, den) = rmak_rate_parts(theta, &mvals, s, b, block);
                    let gamma = num / den;
                    for &(i, c) in cplx {
                        out[i] += c * gamma;
                    }
                }
            }
        }
    }

    /// Row-major `d x d` Jacobian in the state.
    pub fn jacobian_x_into(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.compiled {
            Compiled::Linear { scalars, terms } => {
                let mut grad = vec![0.0; d];
                for (term, &t) in terms.iter().zip(theta) {
                    if t == 0.0 {
                        continue;
                    }
                    let sc = &scalars[term.scalar];
                    if sc.vars.is_empty() {
                        continue;
                    }
                    sc.add_gradient(x, t, &mut grad);
                    for &(i, c) in &term.dir {
                        let row = &mut out[i * d..(i + 1) * d];
                        for &l in &sc.vars {
                            row[l] += c * grad[l];
                        }
                    }
                    for &l in &sc.vars {
                        grad[l] = 0.0;
                    }
                }
            }
            Compiled::Rmak { monos, complexes } => {
                let b = monos.len();
                let block = complexes.len() * b;
                let mvals: Vec<f64> = monos.iter().map(|m| m.eval(x)).collect();
                let mut dnum = vec![0.0; d];
                let mut dden = vec![0.0; d];
                for (s, cplx) in complexes.iter().enumerate() {
                    let (num, den) = rmak_rate_parts(theta, &mvals, s, b, block);
                    dnum.iter_mut().for_each(|g| *g = 0.0);
                    dden.iter_mut().for_each(|g| *g = 0.0);
                    for (m, mono) in monos.iter().enumerate() {
                        mono.add_gradient(x, theta[s * b + m], &mut dnum);
                        mono.add_gradient(x, theta[block + s * b + m], &mut dden);
                    }
                    for &(i, c) in cplx {
                        let row = &mut out[i * d..(i + 1) * d];
                        for l in 0..d {
                            row[l] += c * (dnum[l] * den - num * dden[l]) / (den * den);
                        }
                    }
                }
            }
        }
    }

    /// Row-major `d x cols.len()` block of the parameter Jacobian.
    pub fn jacobian_theta_cols_into(
        &self,
        theta: &[f64],
        x: &[f64],
        cols: &[usize],
        out: &mut [f64],
    ) {
        let m = cols.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.compiled {
            Compiled::Linear { scalars, terms } => {
                for (k, &j) in cols.iter().enumerate() {
                    let term = &terms[j];
                    let v = scalars[term.scalar].eval(x);
                    if v == 0.0 {
                        continue;
                    }
                    for &(i, c) in &term.dir {
                        out[i * m + k] = c * v;
                    }
                }
            }
            Compiled::Rmak { monos, complexes } => {
                let b = monos.len();
                let block = complexes.len() * b;
                let mvals: Vec<f64> = monos.iter().map(|mo| mo.eval(x)).collect();
                for (k, &j) in cols.iter().enumerate() {
                    let second = j >= block;
                    let jj = if second { j - block } else { j };
                    let (s, mi) = (jj / b, jj % b);
                    let (num, den) = rmak_rate_parts(theta, &mvals, s, b, block);
                    let dg = if second {
                        -num * mvals[mi] / (den * den)
                    } else {
                        mvals[mi] / den
                    };
                    for &(i, c) in &complexes[s] {
                        out[i * m + k] = c * dg;
                    }
                }
            }
        }
    }

    /// Species whose equation can depend on coordinate `j`.
    pub(crate) fn param_species(&self, j: usize) -> Vec<usize> {
        match &self.compiled {
            Compiled::Linear { terms, .. } => terms[j].dir.iter().map(|&(i, _)| i).collect(),
            Compiled::Rmak { monos, complexes } => {
                let b = monos.len();
                let k = j % (complexes.len() * b);
                complexes[k / b].iter().map(|&(i, _)| i).collect()
            }
        }
    }

    pub(crate) fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let p = self.n_params();
        if theta.len() != p {
            return Err(Error::dim("parameter vector", p, theta.len()));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        match &self.kind {
            FieldKind::Mak(_) => {
                if let Some(j) = theta.iter().position(|&t| t < 0.0) {
                    return Err(Error::Domain(format!("negative rate constant at {j}")));
                }
            }
            FieldKind::Rmak { .. } => {
                if let Some(j) = theta[p / 2..].iter().position(|&t| t < 0.0) {
                    return Err(Error::Domain(format!(
                        "negative denominator coefficient at {}",
                        p / 2 + j
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub(crate) fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim("state vector", self.dim(), x.len()));
        }
        if let Some(i) = x.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!(
                "state coordinate {i} is {} (must be finite and non-negative)",
                x[i]
            )));
        }
        Ok(())
    }
}

#[inline]
fn rmak_rate_parts(theta: &[f64], mvals: &[f64], s: usize, b: usize, block: usize) -> (f64, f64) {
    let t1 = &theta[s * b..(s + 1) * b];
    let t2 = &theta[block + s * b..block + (s + 1) * b];
    let num: f64 = t1.iter().zip(mvals).map(|(t, m)| t * m).sum();
    let den: f64 = 1.0 + t2.iter().zip(mvals).map(|(t, m)| t * m).sum::<f64>();
    (num, den)
}

fn per_species_terms(d: usize, r: usize) -> Vec<Term> {
    (0..d)
        .flat_map(|i| {
            (0..r).map(move |s| Term {
                scalar: s,
                dir: vec![(i, 1.0)],
            })
        })
        .collect()
}

/// Evaluates `f(x, theta)`, validating dimensions, sign constraints and the
/// non-negative state domain.
pub fn eval_field(spec: &FieldSpec, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    spec.check_theta(theta)?;
    spec.check_state(x)?;
    let mut out = vec![0.0; spec.dim()];
    spec.eval_into(theta, x, &mut out);
    Ok(out)
}

/// `d x d` Jacobian `df/dx`.
pub fn jacobian_x(spec: &FieldSpec, theta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
    spec.check_theta(theta)?;
    spec.check_state(x)?;
    let d = spec.dim();
    let mut out = vec![0.0; d * d];
    spec.jacobian_x_into(theta, x, &mut out);
    Ok(DMatrix::from_row_slice(d, d, &out))
}

/// `d x p` Jacobian `df/dtheta`.
pub fn jacobian_theta(spec: &FieldSpec, theta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
    spec.check_theta(theta)?;
    spec.check_state(x)?;
    let (d, p) = (spec.dim(), spec.n_params());
    let cols: Vec<usize> = (0..p).collect();
    let mut out = vec![0.0; d * p];
    spec.jacobian_theta_cols_into(theta, x, &cols, &mut out);
    Ok(DMatrix::from_row_slice(d, p, &out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mak(a: &[Vec<u32>], b: &[Vec<u32>]) -> FieldSpec {
        let st = Stoichiometry::with_default_names(
            IntMatrix::from_rows(a).unwrap(),
            IntMatrix::from_rows(b).unwrap(),
        )
        .unwrap();
        FieldSpec::mass_action(st)
    }

    #[test]
    fn autocatalytic_reaction_rate() {
        let spec = mak(&[vec![1, 1]], &[vec![2, 0]]);
        let f = eval_field(&spec, &[1.0], &[2.0, 3.0]).unwrap();
        assert_eq!(f, vec![6.0, -6.0]);
    }

    #[test]
    fn zero_rates_give_zero_field() {
        let spec = mak(&[vec![1, 1], vec![2, 0]], &[vec![0, 2], vec![0, 1]]);
        let f = eval_field(&spec, &[0.0, 0.0], &[1.5, 2.5]).unwrap();
        assert_eq!(f, vec![0.0, 0.0]);
        let j = jacobian_x(&spec, &[0.0, 0.0], &[1.5, 2.5]).unwrap();
        assert!(j.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lotka_volterra_pair_encoding() {
        // X1 -> 2X1 (k=2), X1 + X2 -> 2X2 (k=v), X2 -> 0 (k=2)
        let spec = mak(
            &[vec![1, 0], vec![1, 1], vec![0, 1]],
            &[vec![2, 0], vec![0, 2], vec![0, 0]],
        );
        let f = eval_field(&spec, &[2.0, 5.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(f, vec![-3.0, 3.0]);
    }

    #[test]
    fn dimerization_state_jacobian() {
        let spec = mak(&[vec![2, 0]], &[vec![0, 1]]);
        let j = jacobian_x(&spec, &[1.0], &[3.0, 0.0]).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[-12.0, 0.0, 6.0, 0.0]));
    }

    #[test]
    fn power_law_scalar_jacobian() {
        let spec =
            FieldSpec::power_law(IntMatrix::from_rows(&[vec![2]]).unwrap(), vec!["X1".into()])
                .unwrap();
        let j = jacobian_x(&spec, &[5.0], &[2.0]).unwrap();
        assert_eq!(j[(0, 0)], 20.0);
    }

    #[test]
    fn conversion_parameter_jacobian() {
        let spec = mak(&[vec![1, 0]], &[vec![0, 1]]);
        let j = jacobian_theta(&spec, &[0.7], &[4.0, 0.0]).unwrap();
        assert_eq!(j.column(0).as_slice(), &[-4.0, 4.0]);
    }

    #[test]
    fn parameter_jacobian_vanishes_at_origin() {
        let spec = mak(
            &[vec![1, 0], vec![1, 1], vec![0, 1]],
            &[vec![2, 0], vec![0, 2], vec![0, 0]],
        );
        let j = jacobian_theta(&spec, &[1.0, 1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(j.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = mak(&[vec![1, 0]], &[vec![0, 1]]);
        assert!(matches!(
            eval_field(&spec, &[1.0, 2.0], &[1.0, 1.0]),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            eval_field(&spec, &[1.0], &[-1.0, 1.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            eval_field(&spec, &[1.0], &[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn rejects_null_reaction() {
        let a = IntMatrix::from_rows(&[vec![1, 1]]).unwrap();
        let r = Stoichiometry::with_default_names(a.clone(), a);
        assert!(matches!(r, Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn rejects_mismatched_stoichiometry() {
        let a = IntMatrix::from_rows(&[vec![1, 0]]).unwrap();
        let b = IntMatrix::from_rows(&[vec![0, 1, 0]]).unwrap();
        assert!(Stoichiometry::with_default_names(a, b).is_err());
    }

    #[test]
    fn rmak_requires_nonnegative_denominator() {
        let spec = FieldSpec::rational_mass_action(
            IntMatrix::from_rows(&[vec![1]]).unwrap(),
            IntMatrix::from_rows(&[vec![1]]).unwrap(),
            vec!["X1".into()],
        )
        .unwrap();
        assert!(eval_field(&spec, &[1.0, -0.5], &[1.0]).is_err());
        let f = eval_field(&spec, &[2.0, 0.5], &[2.0]).unwrap();
        assert!((f[0] - 4.0 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn parameter_counts_follow_family() {
        let e = IntMatrix::from_rows(&[vec![1, 0], vec![0, 1], vec![1, 1]]).unwrap();
        let names = vec!["A".to_string(), "B".to_string()];
        assert_eq!(
            FieldSpec::power_law(e.clone(), names.clone())
                .unwrap()
                .n_params(),
            6
        );
        assert_eq!(
            FieldSpec::rational_law(e.clone(), e.clone(), names.clone())
                .unwrap()
                .n_params(),
            6
        );
        let c = IntMatrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap();
        assert_eq!(
            FieldSpec::rational_mass_action(e, c, names)
                .unwrap()
                .n_params(),
            2 * 2 * 3
        );
    }

    #[test]
    fn enzyme_reactions_conserve_mass() {
        let spec = enumerate_search_space(SearchSpace::Enzyme, 4).unwrap();
        let theta: Vec<f64> = (0..spec.n_params())
            .map(|j| 0.1 + j as f64 * 0.05)
            .collect();
        let f = eval_field(&spec, &theta, &[1.0, 2.0, 0.5, 3.0]).unwrap();
        assert!(f.iter().sum::<f64>().abs() < 1e-12);
    }

    pub(crate) fn sample_specs() -> Vec<FieldSpec> {
        let names = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        let e1 =
            IntMatrix::from_rows(&[vec![1, 0, 0], vec![1, 1, 0], vec![0, 2, 1], vec![0, 0, 0]])
                .unwrap();
        let e2 =
            IntMatrix::from_rows(&[vec![0, 1, 0], vec![0, 0, 1], vec![1, 0, 0], vec![1, 1, 0]])
                .unwrap();
        let cplx = IntMatrix::from_rows(&[vec![1, 0, 1], vec![0, 2, 0]]).unwrap();
        vec![
            enumerate_search_space(SearchSpace::LotkaVolterra, 3).unwrap(),
            FieldSpec::power_law(e1.clone(), names.clone()).unwrap(),
            FieldSpec::rational_law(e1.clone(), e2, names.clone()).unwrap(),
            FieldSpec::rational_mass_action(e1, cplx, names).unwrap(),
        ]
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn jacobians_match_central_differences(
            seed_theta in proptest::collection::vec(0.05f64..2.0, 30),
            x in proptest::collection::vec(0.1f64..3.0, 3),
        ) {
            for spec in sample_specs() {
                let p = spec.n_params();
                let d = spec.dim();
                let theta: Vec<f64> = seed_theta.iter().cycle().take(p).cloned().collect();
                let jx = jacobian_x(&spec, &theta, &x).unwrap();
                let jt = jacobian_theta(&spec, &theta, &x).unwrap();
                for l in 0..d {
                    let h = 1e-6 * x[l].abs().max(1.0);
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[l] += h;
                    xm[l] -= h;
                    let fp = eval_field(&spec, &theta, &xp).unwrap();
                    let fm = eval_field(&spec, &theta, &xm).unwrap();
                    for i in 0..d {
                        let fd = (fp[i] - fm[i]) / (2.0 * h);
                        prop_assert!(rel_close(jx[(i, l)], fd, 1e-5), "{:?} dx {} {}", spec.family(), jx[(i, l)], fd);
                    }
                }
                for j in 0..p {
                    let h = 1e-6 * theta[j].abs().max(1.0);
                    let mut tp = theta.clone();
                    let mut tm = theta.clone();
                    tp[j] += h;
                    tm[j] -= h;
                    let fp = eval_field(&spec, &tp, &x).unwrap();
                    let fm = eval_field(&spec, &tm, &x).unwrap();
                    for i in 0..d {
                        let fd = (fp[i] - fm[i]) / (2.0 * h);
                        prop_assert!(rel_close(jt[(i, j)], fd, 1e-5), "{:?} dtheta {} {}", spec.family(), jt[(i, j)], fd);
                    }
                }
            }
        }

        #[test]
        fn linear_families_are_linear_in_theta(
            t1 in proptest::collection::vec(0.0f64..2.0, 27),
            t2 in proptest::collection::vec(0.0f64..2.0, 27),
            a in 0.0f64..3.0,
            b in 0.0f64..3.0,
            x in proptest::collection::vec(0.0f64..3.0, 3),
        ) {
            for spec in sample_specs().into_iter().filter(FieldSpec::is_theta_linear) {
                let p = spec.n_params();
                let (t1, t2) = (&t1[..p], &t2[..p]);
                let comb: Vec<f64> = t1.iter().zip(t2).map(|(u, v)| a * u + b * v).collect();
                let f1 = eval_field(&spec, t1, &x).unwrap();
                let f2 = eval_field(&spec, t2, &x).unwrap();
                let fc = eval_field(&spec, &comb, &x).unwrap();
                for i in 0..spec.dim() {
                    prop_assert!(rel_close(fc[i], a * f1[i] + b * f2[i], 1e-12));
                }
            }
        }

        #[test]
        fn balanced_reactions_preserve_total(
            k in proptest::collection::vec(0.0f64..5.0, 12),
            x in proptest::collection::vec(0.0f64..5.0, 4),
        ) {
            let spec = enumerate_search_space(SearchSpace::Enzyme, 4).unwrap();
            let f = eval_field(&spec, &k, &x).unwrap();
            prop_assert!(f.iter().sum::<f64>().abs() < 1e-10);
        }
    }
}
