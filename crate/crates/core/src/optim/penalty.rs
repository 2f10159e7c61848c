//! Penalty families, the proximal operator and majorization weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PenaltyKind {
    L1,
    /// `t^2 / 2`.
    L2,
    /// `alpha |t| + (1 - alpha) t^2 / 2`.
    ElasticNet {
        alpha: f64,
    },
    Scad {
        a: f64,
    },
    Mcp {
        gamma: f64,
    },
    None,
}

impl PenaltyKind {
    pub const DEFAULT_ELASTIC_NET: PenaltyKind = PenaltyKind::ElasticNet { alpha: 0.25 };
    pub const DEFAULT_SCAD: PenaltyKind = PenaltyKind::Scad { a: 3.7 };
    pub const DEFAULT_MCP: PenaltyKind = PenaltyKind::Mcp { gamma: 3.0 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            PenaltyKind::ElasticNet { alpha } if !(0.0..=1.0).contains(&alpha) => Err(
                Error::InvalidInput(format!("elastic net alpha must be in [0, 1], got {alpha}")),
            ),
            PenaltyKind::Scad { a } if !(a > 2.0) => {
                Err(Error::InvalidInput(format!("SCAD needs a > 2, got {a}")))
            }
            PenaltyKind::Mcp { gamma } if !(gamma > 1.0) => Err(Error::InvalidInput(format!(
                "MCP needs gamma > 1, got {gamma}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_concave(&self) -> bool {
        matches!(self, PenaltyKind::Scad { .. } | PenaltyKind::Mcp { .. })
    }

    /// Coefficient of the quadratic part folded into the smooth term:
    /// the smooth term gains `lambda * q * v_j * t^2 / 2`.
    pub(crate) fn quadratic_part(&self) -> f64 {
        match *self {
            PenaltyKind::L2 => 1.0,
            PenaltyKind::ElasticNet { alpha } => 1.0 - alpha,
            _ => 0.0,
        }
    }

    /// Coefficient of `|t|` in the thresholded part for convex penalties.
    pub(crate) fn l1_part(&self) -> f64 {
        match *self {
            PenaltyKind::L1 => 1.0,
            PenaltyKind::ElasticNet { alpha } => alpha,
            _ => 0.0,
        }
    }

    /// `pen_lambda(|t|)` including the factor lambda.
    pub fn value(&self, t: f64, lambda: f64) -> f64 {
        let t = t.abs();
        match *self {
            PenaltyKind::L1 => lambda * t,
            PenaltyKind::L2 => lambda * t * t / 2.0,
            PenaltyKind::ElasticNet { alpha } => lambda * (alpha * t + (1.0 - alpha) * t * t / 2.0),
            PenaltyKind::Scad { a } => {
                if t <= lambda {
                    lambda * t
                } else if t <= a * lambda {
                    (2.0 * a * lambda * t - t * t - lambda * lambda) / (2.0 * (a - 1.0))
                } else {
                    lambda * lambda * (a + 1.0) / 2.0
                }
            }
            PenaltyKind::Mcp { gamma } => {
                if t <= gamma * lambda {
                    lambda * t - t * t / (2.0 * gamma)
                } else {
                    gamma * lambda * lambda / 2.0
                }
            }
            PenaltyKind::None => 0.0,
        }
    }

    /// Derivative of `pen_lambda` at `|t|` from the right.
    pub fn derivative(&self, t: f64, lambda: f64) -> f64 {
        let t = t.abs();
        match *self {
            PenaltyKind::L1 => lambda,
            PenaltyKind::L2 => lambda * t,
            PenaltyKind::ElasticNet { alpha } => lambda * (alpha + (1.0 - alpha) * t),
            PenaltyKind::Scad { a } => {
                if t <= lambda {
                    lambda
                } else if t <= a * lambda {
                    (a * lambda - t) / (a - 1.0)
                } else {
                    0.0
                }
            }
            PenaltyKind::Mcp { gamma } => (lambda - t / gamma).max(0.0),
            PenaltyKind::None => 0.0,
        }
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyKind::L1 => write!(f, "l1"),
            PenaltyKind::L2 => write!(f, "l2"),
            PenaltyKind::ElasticNet { alpha } => write!(f, "elastic-net:{alpha}"),
            PenaltyKind::Scad { a } => write!(f, "scad:{a}"),
            PenaltyKind::Mcp { gamma } => write!(f, "mcp:{gamma}"),
            PenaltyKind::None => write!(f, "none"),
        }
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    /// `l1`, `l2`, `none`, `elastic-net[:alpha]`, `scad[:a]`, `mcp[:gamma]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |default: f64| -> Result<f64> {
            arg.map_or(Ok(default), |a| {
                a.parse()
                    .map_err(|_| Error::InvalidInput(format!("bad penalty parameter {a:?}")))
            })
        };
        let kind = match name {
            "l1" | "lasso" => PenaltyKind::L1,
            "l2" | "ridge" => PenaltyKind::L2,
            "none" => PenaltyKind::None,
            "elastic-net" | "enet" => PenaltyKind::ElasticNet { alpha: num(0.25)? },
            "scad" => PenaltyKind::Scad { a: num(3.7)? },
            "mcp" => PenaltyKind::Mcp { gamma: num(3.0)? },
            other => return Err(Error::InvalidInput(format!("unknown penalty {other:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Coordinatewise `sign(theta - tau p) max(0, |theta - tau p| - lambda mu)`,
/// followed by clipping to `bounds`.
pub fn prox_operator(
    theta: &[f64],
    p: &[f64],
    tau: f64,
    lambda: f64,
    mu: &[f64],
    bounds: &[(f64, f64)],
) -> Vec<f64> {
    theta
        .iter()
        .enumerate()
        .map(|(j, &t)| prox_scalar(t, p[j], tau, lambda * mu[j], bounds[j]))
        .collect()
}

#[inline]
pub(crate) fn prox_scalar(theta: f64, p: f64, tau: f64, thresh: f64, bound: (f64, f64)) -> f64 {
    let z = theta - tau * p;
    let mag = (z.abs() - thresh).max(0.0);
    let v = if mag == 0.0 { 0.0 } else { mag.copysign(z) };
    v.clamp(bound.0, bound.1)
}

/// Effective per-coordinate weights `mu_j` such that the thresholded part of
/// the penalty near `theta` is `lambda sum_j mu_j |theta_j|`.
///
/// SCAD and MCP use the local linear approximation
/// `mu_j = v_j pen'(|theta_j|) / lambda`; convex kinds return the weights of
/// their `|t|` component.
pub fn majorize_weights(
    kind: &PenaltyKind,
    theta: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Vec<f64> {
    theta
        .iter()
        .zip(weights)
        .map(|(&t, &v)| threshold_weight(kind, t, v, lambda))
        .collect()
}

#[inline]
pub(crate) fn threshold_weight(kind: &PenaltyKind, t: f64, v: f64, lambda: f64) -> f64 {
    if kind.is_concave() {
        if lambda <= 0.0 {
            return 0.0;
        }
        v * kind.derivative(t, lambda) / lambda
    } else {
        v * kind.l1_part()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FREE: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(prox_scalar(3.0, 1.0, 1.0, 0.5, FREE), 1.5);
        assert_eq!(prox_scalar(3.0, 1.0, 0.5, 0.0, FREE), 2.5);
        assert_eq!(prox_scalar(0.2, 0.1, 1.0, 0.5, FREE), 0.0);
        assert_eq!(prox_scalar(-3.0, 0.0, 1.0, 1.0, FREE), -2.0);
        assert_eq!(prox_scalar(-3.0, 0.0, 1.0, 1.0, (0.0, f64::INFINITY)), 0.0);
    }

    #[test]
    fn scad_and_mcp_weights() {
        let scad = PenaltyKind::DEFAULT_SCAD;
        let lam = 0.3;
        assert_eq!(majorize_weights(&scad, &[0.0], &[2.0], lam), vec![2.0]);
        assert_eq!(
            majorize_weights(&scad, &[10.0 * 3.7 * lam], &[2.0], lam),
            vec![0.0]
        );
        let mcp = PenaltyKind::DEFAULT_MCP;
        let w = majorize_weights(&mcp, &[3.0 * lam / 2.0], &[1.0], lam);
        assert!((w[0] - 0.5).abs() < 1e-12);
        let l1 = PenaltyKind::L1;
        assert_eq!(majorize_weights(&l1, &[5.0], &[0.7], lam), vec![0.7]);
        let en = PenaltyKind::DEFAULT_ELASTIC_NET;
        assert_eq!(majorize_weights(&en, &[5.0], &[1.0], lam), vec![0.25]);
    }

    #[test]
    fn penalty_values_are_continuous() {
        for kind in [PenaltyKind::DEFAULT_SCAD, PenaltyKind::DEFAULT_MCP] {
            let lam = 0.7;
            for t in [lam, 3.0 * lam, 3.7 * lam] {
                let a = kind.value(t - 1e-9, lam);
                let b = kind.value(t + 1e-9, lam);
                assert!((a - b).abs() < 1e-8, "{kind} at {t}");
            }
        }
    }

    #[test]
    fn parses_penalty_names() {
        assert_eq!("l1".parse::<PenaltyKind>().unwrap(), PenaltyKind::L1);
        assert_eq!(
            "elastic-net".parse::<PenaltyKind>().unwrap(),
            PenaltyKind::ElasticNet { alpha: 0.25 }
        );
        assert_eq!(
            "scad:4".parse::<PenaltyKind>().unwrap(),
            PenaltyKind::Scad { a: 4.0 }
        );
        assert!("scad:1.5".parse::<PenaltyKind>().is_err());
        assert!("mcp:1".parse::<PenaltyKind>().is_err());
        assert!("elastic-net:2".parse::<PenaltyKind>().is_err());
        for k in ["l1", "l2", "none", "elastic-net:0.5", "scad:3.7", "mcp:3"] {
            let kind: PenaltyKind = k.parse().unwrap();
            assert_eq!(kind.to_string().parse::<PenaltyKind>().unwrap(), kind);
        }
    }

    proptest! {
        #[test]
        fn prox_is_non_expansive(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
            p in proptest::collection::vec(-2.0f64..2.0, 6),
            tau in 0.01f64..2.0,
            lam in 0.0f64..2.0,
        ) {
            let mu = vec![1.0; 6];
            let bounds = vec![(0.0, 3.0); 6];
            let pa = prox_operator(&a, &p, tau, lam, &mu, &bounds);
            let pb = prox_operator(&b, &p, tau, lam, &mu, &bounds);
            let d1: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum();
            let d0: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!(d1.sqrt() <= d0.sqrt() + 1e-12);
        }
    }
}
