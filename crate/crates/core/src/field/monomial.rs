/// Sparse monomial `x^a = prod_i x_i^{a_i}` over non-negative integer exponents.
///
/// Zero exponents are dropped at construction, which gives the `0^0 = 1`
/// convention for free.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Monomial {
    factors: Vec<(usize, i32)>,
}

impl Monomial {
    pub(crate) fn from_row(row: &[u32]) -> Self {
        let factors = row
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0)
            .map(|(i, &a)| (i, a as i32))
            .collect();
        Monomial { factors }
    }

    #[cfg(test)]
    pub(crate) fn is_constant(&self) -> bool {
        self.factors.is_empty()
    }

    pub(crate) fn factors(&self) -> &[(usize, i32)] {
        &self.factors
    }

    #[inline]
    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        self.factors
            .iter()
            .fold(1.0, |acc, &(i, a)| acc * pow(x[i], a))
    }

    /// Adds `scale * d(x^a)/dx` into `grad`.
    #[inline]
    pub(crate) fn add_gradient(&self, x: &[f64], scale: f64, grad: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        for (k, &(l, a)) in self.factors.iter().enumerate() {
            let mut g = a as f64 * pow(x[l], a - 1);
            if g == 0.0 {
                continue;
            }
            for (m, &(i, b)) in self.factors.iter().enumerate() {
                if m != k {
                    g *= pow(x[i], b);
                }
            }
            grad[l] += scale * g;
        }
    }
}

#[inline]
fn pow(v: f64, a: i32) -> f64 {
    match a {
        0 => 1.0,
        1 => v,
        2 => v * v,
        _ => v.powi(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_exponent_at_zero_is_one() {
        let m = Monomial::from_row(&[0, 0]);
        assert_eq!(m.eval(&[0.0, 0.0]), 1.0);
        assert!(m.is_constant());
    }

    #[test]
    fn gradient_of_square_times_linear() {
        // x0^2 x1 at (3, 2): grad = (2*3*2, 9)
        let m = Monomial::from_row(&[2, 1]);
        let mut g = [0.0; 2];
        m.add_gradient(&[3.0, 2.0], 1.0, &mut g);
        assert_eq!(g, [12.0, 9.0]);
    }

    #[test]
    fn linear_factor_at_zero_has_unit_derivative() {
        let m = Monomial::from_row(&[1, 0]);
        let mut g = [0.0; 2];
        m.add_gradient(&[0.0, 5.0], 1.0, &mut g);
        assert_eq!(g, [1.0, 0.0]);
    }
}
