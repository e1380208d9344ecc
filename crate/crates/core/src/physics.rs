//! Split real/imaginary residuals of the two-component CGNLS system.
//!
//! With h_j = u_j + i v_j the system `i h_t + h_xx + 2 G h = 0` becomes
//!
//! ```text
//! f1u = v1_t - u1_xx - 2 G u1      f1v = u1_t + v1_xx + 2 G v1
//! f2u = v2_t - u2_xx - 2 G u2      f2v = u2_t + v2_xx + 2 G v2
//! G   = a(u1²+v1²) + b(u2²+v2²) + 2 Re(g) (u1u2+v1v2) - 2 Im(g) (v1u2-u1v2)
//! ```
//!
//! The identification form replaces the dispersion factors with λ1, λ3 and
//! the nonlinear factors `2` with λ2, λ4, with a = b = g = 1.

use crate::error::{Error, Result};
use crate::net::Jet2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CGNLSCoefficients {
    /// Self-phase modulation.
    pub alpha: f64,
    /// Cross-phase modulation.
    pub beta: f64,
    /// Four-wave mixing, real and imaginary parts.
    pub gamma_re: f64,
    pub gamma_im: f64,
}

impl CGNLSCoefficients {
    pub fn new(alpha: f64, beta: f64, gamma_re: f64, gamma_im: f64) -> Self {
        Self { alpha, beta, gamma_re, gamma_im }
    }

    pub fn unit() -> Self {
        Self::new(1.0, 1.0, 1.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma_re, self.gamma_im].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("CGNLS coefficients must be finite".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LambdaVector {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
}

impl LambdaVector {
    pub fn new(l1: f64, l2: f64, l3: f64, l4: f64) -> Self {
        Self { l1, l2, l3, l4 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.l1, self.l2, self.l3, self.l4]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualVector {
    pub f1u: f64,
    pub f1v: f64,
    pub f2u: f64,
    pub f2v: f64,
}

impl ResidualVector {
    pub fn new(f1u: f64, f1v: f64, f2u: f64, f2v: f64) -> Self {
        Self { f1u, f1v, f2u, f2v }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.f1u, self.f1v, self.f2u, self.f2v]
    }

    /// |f1u| + |f1v| + |f2u| + |f2v|, the per-point refinement score.
    pub fn score(&self) -> f64 {
        self.f1u.abs() + self.f1v.abs() + self.f2u.abs() + self.f2v.abs()
    }

    pub fn max_abs(&self) -> f64 {
        self.as_array().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sum_squares(&self) -> f64 {
        self.as_array().iter().map(|v| v * v).sum()
    }
}

pub fn coupling_term(u1: f64, v1: f64, u2: f64, v2: f64, c: &CGNLSCoefficients) -> f64 {
    c.alpha * (u1 * u1 + v1 * v1) + c.beta * (u2 * u2 + v2 * v2) + 2.0 * c.gamma_re * (u1 * u2 + v1 * v2)
        - 2.0 * c.gamma_im * (v1 * u2 - u1 * v2)
}

/// Gradient of [`coupling_term`] with respect to (u1, v1, u2, v2).
fn coupling_gradient(u: [f64; 4], c: &CGNLSCoefficients) -> [f64; 4] {
    let [u1, v1, u2, v2] = u;
    [
        2.0 * (c.alpha * u1 + c.gamma_re * u2 + c.gamma_im * v2),
        2.0 * (c.alpha * v1 + c.gamma_re * v2 - c.gamma_im * u2),
        2.0 * (c.beta * u2 + c.gamma_re * u1 - c.gamma_im * v1),
        2.0 * (c.beta * v2 + c.gamma_re * v1 + c.gamma_im * u1),
    ]
}

/// Which form of the system the residual is taken in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualMode {
    /// Known coefficients, unit dispersion and factor 2 on the coupling.
    Forward(CGNLSCoefficients),
    /// Trainable dispersion/nonlinearity factors with a = b = g = 1.
    Inverse(LambdaVector),
}

impl ResidualMode {
    /// (coupling coefficients, [d1, n1, d2, n2]).
    fn factors(&self) -> (CGNLSCoefficients, [f64; 4]) {
        match *self {
            ResidualMode::Forward(c) => (c, [1.0, 2.0, 1.0, 2.0]),
            ResidualMode::Inverse(l) => (CGNLSCoefficients::unit(), [l.l1, l.l2, l.l3, l.l4]),
        }
    }

    pub fn residual(&self, jets: &[Jet2]) -> ResidualVector {
        let (c, [d1, n1, d2, n2]) = self.factors();
        let [u1, v1, u2, v2] = [jets[0], jets[1], jets[2], jets[3]];
        let g = coupling_term(u1.value, v1.value, u2.value, v2.value, &c);
        ResidualVector {
            f1u: v1.d_t - d1 * u1.d_xx - n1 * g * u1.value,
            f1v: u1.d_t + d1 * v1.d_xx + n1 * g * v1.value,
            f2u: v2.d_t - d2 * u2.d_xx - n2 * g * u2.value,
            f2v: u2.d_t + d2 * v2.d_xx + n2 * g * v2.value,
        }
    }

    /// Reverse pass of [`ResidualMode::residual`]: given dL/df for the four
    /// residuals, returns dL/d(jet) for (u1, v1, u2, v2) and dL/dλ (zero in
    /// forward mode).
    pub fn residual_adjoint(&self, jets: &[Jet2], df: [f64; 4]) -> ([Jet2; 4], [f64; 4]) {
        let (c, [d1, n1, d2, n2]) = self.factors();
        let vals = [jets[0].value, jets[1].value, jets[2].value, jets[3].value];
        let [u1, v1, u2, v2] = vals;
        let g = coupling_term(u1, v1, u2, v2, &c);
        let dg = coupling_gradient(vals, &c);
        let [w1u, w1v, w2u, w2v] = df;
        // dL/dG through the explicit G factors.
        let s = -w1u * n1 * u1 + w1v * n1 * v1 - w2u * n2 * u2 + w2v * n2 * v2;
        let mut out = [Jet2::default(); 4];
        out[0].value = -w1u * n1 * g + s * dg[0];
        out[1].value = w1v * n1 * g + s * dg[1];
        out[2].value = -w2u * n2 * g + s * dg[2];
        out[3].value = w2v * n2 * g + s * dg[3];
        out[1].d_t = w1u;
        out[0].d_t = w1v;
        out[3].d_t = w2u;
        out[2].d_t = w2v;
        out[0].d_xx = -w1u * d1;
        out[1].d_xx = w1v * d1;
        out[2].d_xx = -w2u * d2;
        out[3].d_xx = w2v * d2;
        let dlambda = match self {
            ResidualMode::Forward(_) => [0.0; 4],
            ResidualMode::Inverse(_) => [
                -w1u * jets[0].d_xx + w1v * jets[1].d_xx,
                g * (-w1u * u1 + w1v * v1),
                -w2u * jets[2].d_xx + w2v * jets[3].d_xx,
                g * (-w2u * u2 + w2v * v2),
            ],
        };
        (out, dlambda)
    }
}

/// Residuals of the known-coefficient system at one point. `jets` are
/// (u1, v1, u2, v2).
pub fn forward_residual(jets: &[Jet2], c: &CGNLSCoefficients) -> ResidualVector {
    ResidualMode::Forward(*c).residual(jets)
}

/// Residuals of the identification form with trainable λ.
pub fn inverse_residual(jets: &[Jet2], lam: &LambdaVector) -> ResidualVector {
    ResidualMode::Inverse(*lam).residual(jets)
}

/// Mean over points of |f1u| + |f1v| + |f2u| + |f2v|.
pub fn mean_residual(residuals: &[ResidualVector]) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::Usage("mean residual of an empty set".into()));
    }
    Ok(residuals.iter().map(ResidualVector::score).sum::<f64>() / residuals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jet(value: f64, d_t: f64, d_x: f64, d_xx: f64) -> Jet2 {
        Jet2 { value, d_t, d_x, d_xx }
    }

    #[test]
    fn coupling_examples() {
        let c = CGNLSCoefficients::new(1.0, 1.0, 0.0, 0.0);
        assert_eq!(coupling_term(0.0, 0.0, 0.0, 0.0, &c), 0.0);
        // Manakov reduction: a = b, g = 0 gives a(|h1|² + |h2|²)
        assert_eq!(coupling_term(1.0, 0.0, 0.0, 1.0, &c), 2.0);
        let c = CGNLSCoefficients::new(1.0, 1.0, 1.0, 0.0);
        assert_eq!(coupling_term(1.0, 0.0, 1.0, 0.0, &c), 4.0);
    }

    #[test]
    fn coupling_matches_complex_form() {
        use num_complex::Complex64 as C;
        let c = CGNLSCoefficients::new(0.7, -1.3, 0.4, 0.9);
        let h1 = C::new(0.3, -1.1);
        let h2 = C::new(-0.8, 0.25);
        let g = C::new(c.gamma_re, c.gamma_im);
        let expected =
            c.alpha * h1.norm_sqr() + c.beta * h2.norm_sqr() + (g * h1 * h2.conj() + g.conj() * h2 * h1.conj()).re;
        let got = coupling_term(h1.re, h1.im, h2.re, h2.im, &c);
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_jets_give_zero_residual() {
        let z = [Jet2::default(); 4];
        assert_eq!(forward_residual(&z, &CGNLSCoefficients::unit()), ResidualVector::default());
        let lam = LambdaVector::new(0.3, -2.0, 5.0, 1.0);
        assert_eq!(inverse_residual(&z, &lam), ResidualVector::default());
    }

    #[test]
    fn constant_real_field() {
        let jets = [jet(1.0, 0.0, 0.0, 0.0), Jet2::default(), Jet2::default(), Jet2::default()];
        let r = forward_residual(&jets, &CGNLSCoefficients::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(r.f1v, 0.0);
        assert_eq!(r.f1u, -2.0);
    }

    #[test]
    fn zero_lambda_leaves_time_derivatives() {
        let jets =
            [jet(0.3, 1.5, 0.2, -0.7), jet(-0.4, 2.5, 0.1, 0.9), jet(0.8, -3.5, 0.0, 1.1), jet(0.1, 4.5, 0.4, -0.2)];
        let r = inverse_residual(&jets, &LambdaVector::default());
        assert_eq!(r, ResidualVector::new(2.5, 1.5, 4.5, -3.5));
    }

    #[test]
    fn inverse_truth_equals_forward_unit() {
        let jets =
            [jet(0.3, 1.5, 0.2, -0.7), jet(-0.4, 2.5, 0.1, 0.9), jet(0.8, -3.5, 0.0, 1.1), jet(0.1, 4.5, 0.4, -0.2)];
        let a = inverse_residual(&jets, &LambdaVector::new(1.0, 2.0, 1.0, 2.0));
        let b = forward_residual(&jets, &CGNLSCoefficients::unit());
        assert_eq!(a, b);
    }

    #[test]
    fn mean_residual_examples() {
        assert_eq!(mean_residual(&[ResidualVector::new(1.0, 1.0, 1.0, 1.0)]).unwrap(), 4.0);
        assert_eq!(
            mean_residual(&[ResidualVector::new(1.0, 0.0, 0.0, 0.0), ResidualVector::new(0.0, 1.0, 0.0, 0.0)]).unwrap(),
            1.0
        );
        assert_eq!(mean_residual(&[ResidualVector::new(-2.0, 0.0, 0.0, 0.0)]).unwrap(), 2.0);
        assert!(matches!(mean_residual(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let jets =
            [jet(0.3, 1.5, 0.2, -0.7), jet(-0.4, 2.5, 0.1, 0.9), jet(0.8, -3.5, 0.0, 1.1), jet(0.1, 4.5, 0.4, -0.2)];
        let w = [0.7, -1.2, 0.4, 2.0];
        let modes = [
            ResidualMode::Forward(CGNLSCoefficients::new(2.0, 2.0, 0.5, 0.5)),
            ResidualMode::Inverse(LambdaVector::new(0.9, 2.1, 1.3, 1.7)),
        ];
        let loss = |mode: &ResidualMode, j: &[Jet2]| -> f64 {
            let r = mode.residual(j).as_array();
            r.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for mode in &modes {
            let (adj, dl) = mode.residual_adjoint(&jets, w);
            for o in 0..4 {
                for field in 0..4 {
                    let mut jp = jets;
                    let mut jm = jets;
                    fn get(j: &mut Jet2, field: usize) -> &mut f64 {
                        match field {
                            0 => &mut j.value,
                            1 => &mut j.d_t,
                            2 => &mut j.d_x,
                            _ => &mut j.d_xx,
                        }
                    }
                    *get(&mut jp[o], field) += h;
                    *get(&mut jm[o], field) -= h;
                    let fd = (loss(mode, &jp) - loss(mode, &jm)) / (2.0 * h);
                    let mut a = adj[o];
                    let an = *get(&mut a, field);
                    assert!((fd - an).abs() < 1e-7, "output {o} field {field}: {fd} vs {an}");
                }
            }
            if let ResidualMode::Inverse(l) = mode {
                for k in 0..4 {
                    let mut lp = l.as_array();
                    let mut lm = l.as_array();
                    lp[k] += h;
                    lm[k] -= h;
                    let fd = (loss(&ResidualMode::Inverse(LambdaVector::from_slice(&lp)), &jets)
                        - loss(&ResidualMode::Inverse(LambdaVector::from_slice(&lm)), &jets))
                        / (2.0 * h);
                    assert!((fd - dl[k]).abs() < 1e-7);
                }
            }
        }
    }
}
