//! Weighted linear least squares `1/2 ||X theta - r||^2` as an objective.

use nalgebra::{DMatrix, DVector};

use super::{Eval, Objective};
use crate::error::Result;

/// Above this many columns the Gram matrix is not formed and products go
/// through the design directly.
const GRAM_LIMIT: usize = 2000;

#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    p: usize,
    gram: Option<DMatrix<f64>>,
    design: Option<DMatrix<f64>>,
    response: Option<DVector<f64>>,
    b: DVector<f64>,
    c: f64,
}

impl QuadraticLoss {
    /// `design` and `response` must already carry the square-root weights.
    pub fn from_design(design: DMatrix<f64>, response: DVector<f64>) -> Self {
        let p = design.ncols();
        let b = design.tr_mul(&response);
        let c = 0.5 * response.norm_squared();
        if p <= GRAM_LIMIT {
            QuadraticLoss {
                p,
                gram: Some(design.tr_mul(&design)),
                design: None,
                response: None,
                b,
                c,
            }
        } else {
            QuadraticLoss {
                p,
                gram: None,
                design: Some(design),
                response: Some(response),
                b,
                c,
            }
        }
    }

    /// From precomputed `Q = X'X`, `b = X'r` and `c = r'r / 2`.
    pub fn from_gram(gram: DMatrix<f64>, b: DVector<f64>, c: f64) -> Self {
        QuadraticLoss {
            p: gram.ncols(),
            gram: Some(gram),
            design: None,
            response: None,
            b,
            c,
        }
    }

    pub fn gram(&self) -> Option<&DMatrix<f64>> {
        self.gram.as_ref()
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.b
    }

    fn support(theta: &[f64]) -> Vec<usize> {
        (0..theta.len()).filter(|&j| theta[j] != 0.0).collect()
    }

    fn residual(&self, theta: &[f64], supp: &[usize]) -> DVector<f64> {
        let x = self.design.as_ref().expect("design mode");
        let mut r = -self.response.as_ref().expect("design mode").clone();
        for &j in supp {
            r.axpy(theta[j], &x.column(j), 1.0);
        }
        r
    }

    /// `(Q theta)_j` for the requested columns.
    fn q_theta(&self, theta: &[f64], supp: &[usize], cols: &[usize]) -> Vec<f64> {
        let q = self.gram.as_ref().expect("gram mode");
        cols.iter()
            .map(|&j| supp.iter().map(|&k| q[(j, k)] * theta[k]).sum())
            .collect()
    }
}

impl Objective for QuadraticLoss {
    fn dim(&self) -> usize {
        self.p
    }

    fn value(&self, theta: &[f64]) -> Result<Eval> {
        let supp = Self::support(theta);
        let value = if self.gram.is_some() {
            let qt = self.q_theta(theta, &supp, &supp);
            let quad: f64 = supp.iter().zip(&qt).map(|(&j, v)| theta[j] * v).sum();
            let lin: f64 = supp.iter().map(|&j| self.b[j] * theta[j]).sum();
            0.5 * quad - lin + self.c
        } else {
            0.5 * self.residual(theta, &supp).norm_squared()
        };
        Ok(Eval {
            value,
            grad: Vec::new(),
            diverged: false,
        })
    }

    fn value_grad(&self, theta: &[f64], cols: &[usize]) -> Result<Eval> {
        let supp = Self::support(theta);
        if self.gram.is_some() {
            let qt_cols = self.q_theta(theta, &supp, cols);
            let grad: Vec<f64> = cols
                .iter()
                .zip(&qt_cols)
                .map(|(&j, v)| v - self.b[j])
                .collect();
            let value = self.value(theta)?.value;
            Ok(Eval {
                value,
                grad,
                diverged: false,
            })
        } else {
            let r = self.residual(theta, &supp);
            let x = self.design.as_ref().expect("design mode");
            let grad = cols.iter().map(|&j| x.column(j).dot(&r)).collect();
            Ok(Eval {
                value: 0.5 * r.norm_squared(),
                grad,
                diverged: false,
            })
        }
    }
}
