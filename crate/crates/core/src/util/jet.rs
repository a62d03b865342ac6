//! Truncated Taylor arithmetic ("jets") for exact higher derivatives.
//!
//! A `Jet` stores the Taylor coefficients `c_k = f^(k)(x0) / k!` of a
//! function along a single variable, truncated at a fixed order. Arithmetic
//! on jets propagates derivatives exactly (to rounding), which is how the
//! smooth cutoff functions expose closed-form derivatives of every order:
//! they are compositions of rational operations and `exp`.

#[derive(Clone, Debug)]
pub struct Jet {
    /// Taylor coefficients, length = order + 1.
    pub c: Vec<f64>,
}

impl Jet {
    /// The constant `v` as a jet of the given order.
    pub fn constant(v: f64, order: usize) -> Self {
        let mut c = vec![0.0; order + 1];
        c[0] = v;
        Jet { c }
    }

    /// The identity variable `x ↦ x` expanded at `x0`.
    pub fn variable(x0: f64, order: usize) -> Self {
        let mut c = vec![0.0; order + 1];
        c[0] = x0;
        if order >= 1 {
            c[1] = 1.0;
        }
        Jet { c }
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// k-th derivative: k! · c_k.
    pub fn derivative(&self, k: usize) -> f64 {
        let mut fact = 1.0;
        for i in 2..=k {
            fact *= i as f64;
        }
        self.c[k] * fact
    }

    pub fn neg(&self) -> Jet {
        Jet { c: self.c.iter().map(|v| -v).collect() }
    }

    pub fn add(&self, rhs: &Jet) -> Jet {
        let c = self.c.iter().zip(&rhs.c).map(|(a, b)| a + b).collect();
        Jet { c }
    }

    pub fn sub(&self, rhs: &Jet) -> Jet {
        let c = self.c.iter().zip(&rhs.c).map(|(a, b)| a - b).collect();
        Jet { c }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet { c: self.c.iter().map(|v| v * s).collect() }
    }

    /// Cauchy product truncated at the jet order.
    pub fn mul(&self, rhs: &Jet) -> Jet {
        let n = self.c.len();
        let mut c = vec![0.0; n];
        for i in 0..n {
            for j in 0..n - i {
                c[i + j] += self.c[i] * rhs.c[j];
            }
        }
        Jet { c }
    }

    /// Reciprocal; requires a nonzero value part.
    pub fn recip(&self) -> Jet {
        let n = self.c.len();
        let mut c = vec![0.0; n];
        c[0] = 1.0 / self.c[0];
        for k in 1..n {
            let mut s = 0.0;
            for j in 1..=k {
                s += self.c[j] * c[k - j];
            }
            c[k] = -s / self.c[0];
        }
        Jet { c }
    }

    pub fn div(&self, rhs: &Jet) -> Jet {
        self.mul(&rhs.recip())
    }

    /// exp of a jet: y0 = exp(u0), y_k = (1/k) Σ_{j=1..k} j u_j y_{k-j}.
    pub fn exp(&self) -> Jet {
        let n = self.c.len();
        let mut c = vec![0.0; n];
        c[0] = self.c[0].exp();
        for k in 1..n {
            let mut s = 0.0;
            for j in 1..=k {
                s += (j as f64) * self.c[j] * c[k - j];
            }
            c[k] = s / k as f64;
        }
        Jet { c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_derivatives_match_closed_form() {
        // f(x) = exp(-1/x) at x0 = 0.5: f' = exp(-1/x)/x^2, etc.
        let x = Jet::variable(0.5, 4);
        let f = x.recip().neg().exp();
        let e = (-2.0f64).exp();
        assert!((f.value() - e).abs() < 1e-15);
        // f'(x) = e^{-1/x} / x^2 = e * 4
        assert!((f.derivative(1) - e * 4.0).abs() < 1e-13);
        // f''(x) = e^{-1/x} (1/x^4 - 2/x^3) = e * (16 - 16) = 0
        assert!(f.derivative(2).abs() < 1e-12);
    }

    #[test]
    fn division_roundtrips() {
        let x = Jet::variable(1.3, 6);
        let y = x.mul(&x).add(&Jet::constant(2.0, 6)); // x^2 + 2
        let q = x.div(&y).mul(&y); // (x / y) * y = x
        for k in 0..=6 {
            assert!((q.c[k] - x.c[k]).abs() < 1e-12, "coef {k}");
        }
    }
}
