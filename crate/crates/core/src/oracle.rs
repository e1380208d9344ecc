//! Closed-form bright vector one- and two-soliton solutions (Hirota form) of
//! the CGNLS system, grid sampling, and a finite-difference self-check that
//! the fields annihilate the residual.

use num_complex::Complex64 as C;

use crate::error::{Error, Result};
use crate::net::{Jet2, Point};
use crate::physics::{forward_residual, CGNLSCoefficients};
use crate::precision::{Cx, DoubleDouble, Real};

/// A complex vector field (h1, h2) over the space-time plane.
pub trait ExactSolution {
    /// The field evaluated in arithmetic `R`.
    fn field_in<R: Real>(&self, x: R, t: R) -> (Cx<R>, Cx<R>);

    fn coefficients(&self) -> CGNLSCoefficients;

    fn field(&self, p: Point) -> (C, C) {
        let (h1, h2) = self.field_in(p.x, p.t);
        (h1.to_complex64(), h2.to_complex64())
    }
}

fn gamma(c: &CGNLSCoefficients) -> C {
    C::new(c.gamma_re, c.gamma_im)
}

/// The Hermitian form <p, q> = a p1 q1* + b p2 q2* + g p1 q2* + g* p2 q1*
/// induced by the coupling coefficients.
fn coupling_form(p: [C; 2], q: [C; 2], c: &CGNLSCoefficients) -> C {
    let g = gamma(c);
    c.alpha * p[0] * q[0].conj() + c.beta * p[1] * q[1].conj() + g * p[0] * q[1].conj() + g.conj() * p[1] * q[0].conj()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneSolitonSpec {
    pub a: C,
    pub b: C,
    pub k: C,
    pub coeffs: CGNLSCoefficients,
}

impl OneSolitonSpec {
    /// a = 1, b = 2, k = 1.5 + i, α = β = γ = 1.
    pub fn preset() -> Self {
        Self { a: C::new(1.0, 0.0), b: C::new(2.0, 0.0), k: C::new(1.5, 1.0), coeffs: CGNLSCoefficients::unit() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OneSoliton {
    spec: OneSolitonSpec,
    /// e^c
    exp_c: f64,
}

impl OneSoliton {
    pub fn new(spec: OneSolitonSpec) -> Result<Self> {
        spec.coeffs.validate()?;
        if spec.k.re == 0.0 {
            return Err(Error::Degenerate("k + conj(k)"));
        }
        let num = coupling_form([spec.a, spec.b], [spec.a, spec.b], &spec.coeffs).re;
        let den = (2.0 * spec.k.re).powi(2);
        let exp_c = num / den;
        if exp_c == 0.0 || !exp_c.is_finite() {
            return Err(Error::Degenerate("e^c"));
        }
        Ok(Self { spec, exp_c })
    }

    pub fn spec(&self) -> &OneSolitonSpec {
        &self.spec
    }

    pub fn exp_c(&self) -> f64 {
        self.exp_c
    }

    /// Localization constant c; only real when e^c > 0.
    pub fn c(&self) -> f64 {
        self.exp_c.ln()
    }

    /// Peak magnitudes (|a|, |b|)/2 · e^{-c/2}, attained along θ_R + c/2 = 0.
    pub fn peak_magnitudes(&self) -> (f64, f64) {
        let f = 0.5 / self.exp_c.sqrt();
        (self.spec.a.norm() * f, self.spec.b.norm() * f)
    }

    /// Center line x(t) where θ_R + c/2 = 0.
    pub fn center(&self, t: f64) -> f64 {
        let k = self.spec.k;
        (2.0 * k.re * k.im * t - 0.5 * self.c()) / k.re
    }
}

impl ExactSolution for OneSoliton {
    fn field_in<R: Real>(&self, x: R, t: R) -> (Cx<R>, Cx<R>) {
        let k = self.spec.k;
        let ik2 = C::i() * k * k;
        // θ = k x + i k² t
        let theta = Cx::lift(k).scale(x) + Cx::lift(ik2).scale(t);
        let e = theta.exp();
        let den = R::from_f64(1.0) + (theta.re + theta.re).exp() * R::from_f64(self.exp_c);
        let h1 = Cx::lift(self.spec.a) * e;
        let h2 = Cx::lift(self.spec.b) * e;
        (Cx::new(h1.re / den, h1.im / den), Cx::new(h2.re / den, h2.im / den))
    }

    fn coefficients(&self) -> CGNLSCoefficients {
        self.spec.coeffs
    }
}

pub fn one_soliton(spec: &OneSolitonSpec, p: Point) -> Result<(C, C)> {
    Ok(OneSoliton::new(*spec)?.field(p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoSolitonSpec {
    pub k1: C,
    pub k2: C,
    /// `xi[m][j]`: component j+1 polarization of soliton m+1.
    pub xi: [[C; 2]; 2],
    pub coeffs: CGNLSCoefficients,
}

impl TwoSolitonSpec {
    /// Elastic collision: k1 = 1+i, k2 = 2-i, all ξ = 1, α = β = 2, γ = 0.5+0.5i.
    pub fn elastic_preset() -> Self {
        let one = C::new(1.0, 0.0);
        Self {
            k1: C::new(1.0, 1.0),
            k2: C::new(2.0, -1.0),
            xi: [[one, one], [one, one]],
            coeffs: CGNLSCoefficients::new(2.0, 2.0, 0.5, 0.5),
        }
    }

    /// Shape-changing collision: as elastic but ξ2⁽¹⁾ = (39+80i)/89.
    pub fn shape_changing_preset() -> Self {
        let mut s = Self::elastic_preset();
        s.xi[1][0] = C::new(39.0, 80.0) / 89.0;
        s
    }

    fn k(&self, m: usize) -> C {
        if m == 0 {
            self.k1
        } else {
            self.k2
        }
    }
}

/// φ_mn for m, n in {1, 2}: the coupling form of the polarizations divided
/// by k_m + k_n*.
pub fn phi_mn(spec: &TwoSolitonSpec, m: usize, n: usize) -> Result<C> {
    if !(1..=2).contains(&m) || !(1..=2).contains(&n) {
        return Err(Error::Usage(format!("phi index ({m}, {n}) out of range")));
    }
    let (m, n) = (m - 1, n - 1);
    let den = spec.k(m) + spec.k(n).conj();
    if den == C::new(0.0, 0.0) {
        return Err(Error::Degenerate("k_m + conj(k_n)"));
    }
    Ok(coupling_form(spec.xi[m], spec.xi[n], &spec.coeffs) / den)
}

#[derive(Debug, Clone, Copy)]
pub struct TwoSoliton {
    spec: TwoSolitonSpec,
    e_delta0: C,
    e_r1: C,
    e_r2: C,
    e_r3: C,
    /// e^{δ_{1j}}, e^{δ_{2j}} for components j = 1, 2.
    e_delta1: [C; 2],
    e_delta2: [C; 2],
}

impl TwoSoliton {
    pub fn new(spec: TwoSolitonSpec) -> Result<Self> {
        spec.coeffs.validate()?;
        let (k1, k2) = (spec.k1, spec.k2);
        if k1.re == 0.0 {
            return Err(Error::Degenerate("k1 + conj(k1)"));
        }
        if k2.re == 0.0 {
            return Err(Error::Degenerate("k2 + conj(k2)"));
        }
        if k1 + k2.conj() == C::new(0.0, 0.0) {
            return Err(Error::Degenerate("k1 + conj(k2)"));
        }
        if k1 == k2 {
            return Err(Error::Degenerate("k1 - k2"));
        }
        let p11 = phi_mn(&spec, 1, 1)?;
        let p12 = phi_mn(&spec, 1, 2)?;
        let p21 = phi_mn(&spec, 2, 1)?;
        let p22 = phi_mn(&spec, 2, 2)?;
        let k11 = k1 + k1.conj();
        let k22 = k2 + k2.conj();
        let k12 = k1 + k2.conj();
        let k21 = k2 + k1.conj();
        let e_r3 = (k1 - k2).norm_sqr() * (p11 * p22 - p12 * p21) / (k11 * k22 * k12.norm_sqr());
        let xi = spec.xi;
        let e_delta1 = [0, 1].map(|j| (k1 - k2) * (xi[0][j] * p21 - xi[1][j] * p11) / (k11 * k21));
        let e_delta2 = [0, 1].map(|j| (k2 - k1) * (xi[1][j] * p12 - xi[0][j] * p22) / (k22 * k12));
        Ok(Self { spec, e_delta0: p12 / k12, e_r1: p11 / k11, e_r2: p22 / k22, e_r3, e_delta1, e_delta2 })
    }

    pub fn spec(&self) -> &TwoSolitonSpec {
        &self.spec
    }
}

impl ExactSolution for TwoSoliton {
    fn field_in<R: Real>(&self, x: R, t: R) -> (Cx<R>, Cx<R>) {
        let i = C::i();
        let (k1, k2) = (self.spec.k1, self.spec.k2);
        // η_m = k_m (x + i k_m t)
        let eta1 = Cx::lift(k1).scale(x) + Cx::lift(i * k1 * k1).scale(t);
        let eta2 = Cx::lift(k2).scale(x) + Cx::lift(i * k2 * k2).scale(t);
        let e1 = eta1.exp();
        let e2 = eta2.exp();
        let e11 = Cx::real((eta1.re + eta1.re).exp());
        let e22 = Cx::real((eta2.re + eta2.re).exp());
        let e12 = (eta1 + eta2.conj()).exp();
        let lift = Cx::<R>::lift;
        let den = Cx::real(R::from_f64(1.0))
            + e11 * lift(self.e_r1)
            + e12 * lift(self.e_delta0)
            + e12.conj() * lift(self.e_delta0.conj())
            + e22 * lift(self.e_r2)
            + e11 * e22 * lift(self.e_r3);
        let xi = self.spec.xi;
        let num = |j: usize| {
            lift(xi[0][j]) * e1
                + lift(xi[1][j]) * e2
                + e11 * e2 * lift(self.e_delta1[j])
                + e1 * e22 * lift(self.e_delta2[j])
        };
        (num(0) / den, num(1) / den)
    }

    fn coefficients(&self) -> CGNLSCoefficients {
        self.spec.coeffs
    }
}

pub fn two_soliton(spec: &TwoSolitonSpec, p: Point) -> Result<(C, C)> {
    Ok(TwoSoliton::new(*spec)?.field(p))
}

/// A closed-form reference solution.
#[derive(Debug, Clone, Copy)]
pub enum Oracle {
    One(OneSoliton),
    Two(TwoSoliton),
}

impl ExactSolution for Oracle {
    fn field_in<R: Real>(&self, x: R, t: R) -> (Cx<R>, Cx<R>) {
        match self {
            Oracle::One(s) => s.field_in(x, t),
            Oracle::Two(s) => s.field_in(x, t),
        }
    }

    fn coefficients(&self) -> CGNLSCoefficients {
        match self {
            Oracle::One(s) => s.coefficients(),
            Oracle::Two(s) => s.coefficients(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub nx: usize,
    pub nt: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, t_min: f64, t_max: f64, nx: usize, nt: usize) -> Result<Self> {
        let g = Self { x_min, x_max, t_min, t_max, nx, nt };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max && self.t_min < self.t_max) {
            return Err(Error::Config(format!(
                "grid bounds must be increasing: x [{}, {}], t [{}, {}]",
                self.x_min, self.x_max, self.t_min, self.t_max
            )));
        }
        if self.nx < 2 || self.nt < 2 {
            return Err(Error::Config(format!("grid needs at least 2 nodes per axis (got {} x {})", self.nx, self.nt)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        (self.t_max - self.t_min) / (self.nt - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.nx {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx()
        }
    }

    pub fn t(&self, j: usize) -> f64 {
        if j + 1 == self.nt {
            self.t_max
        } else {
            self.t_min + j as f64 * self.dt()
        }
    }

    /// Nodes in row-major order: t outer, x inner.
    pub fn points(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.nt {
            let t = self.t(j);
            for i in 0..self.nx {
                out.push(Point::new(self.x(i), t));
            }
        }
        out
    }
}

/// One dataset row: a point and the split field values there.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldSample {
    pub point: Point,
    pub u1: f64,
    pub v1: f64,
    pub u2: f64,
    pub v2: f64,
}

impl FieldSample {
    pub fn from_complex(point: Point, h1: C, h2: C) -> Self {
        Self { point, u1: h1.re, v1: h1.im, u2: h2.re, v2: h2.im }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.u1, self.v1, self.u2, self.v2]
    }

    pub fn set_values(&mut self, v: [f64; 4]) {
        [self.u1, self.v1, self.u2, self.v2] = v;
    }

    pub fn magnitudes(&self) -> (f64, f64) {
        (self.u1.hypot(self.v1), self.u2.hypot(self.v2))
    }
}

pub fn sample_grid<S: ExactSolution + ?Sized>(solution: &S, grid: &GridSpec) -> Result<Vec<FieldSample>> {
    grid.validate()?;
    Ok(grid
        .points()
        .into_iter()
        .map(|p| {
            let (h1, h2) = solution.field(p);
            FieldSample::from_complex(p, h1, h2)
        })
        .collect())
}

/// Jets of (u1, v1, u2, v2) by central differences of the field. The
/// stencil is evaluated and differenced in double-double so that the
/// truncation error, not cancellation, sets the accuracy.
pub fn finite_difference_jets<S: ExactSolution + ?Sized>(solution: &S, p: Point, step: f64) -> [Jet2; 4] {
    type DD = DoubleDouble;
    let split = |x: DD, t: DD| {
        let (h1, h2) = solution.field_in(x, t);
        [h1.re, h1.im, h2.re, h2.im]
    };
    let (x, t, h) = (DD::from_f64(p.x), DD::from_f64(p.t), DD::from_f64(step));
    let f0 = split(x, t);
    let fxp = split(x + h, t);
    let fxm = split(x - h, t);
    let ftp = split(x, t + h);
    let ftm = split(x, t - h);
    let two_h = h + h;
    let h2 = h * h;
    let mut out = [Jet2::default(); 4];
    for k in 0..4 {
        out[k] = Jet2 {
            value: f0[k].to_f64(),
            d_t: ((ftp[k] - ftm[k]) / two_h).to_f64(),
            d_x: ((fxp[k] - fxm[k]) / two_h).to_f64(),
            d_xx: ((fxp[k] - f0[k] - f0[k] + fxm[k]) / h2).to_f64(),
        };
    }
    out
}

/// Largest residual component over the interior grid nodes, with
/// derivatives by central differences of step `fd_step`.
pub fn pde_selfcheck<S: ExactSolution + ?Sized>(solution: &S, grid: &GridSpec, fd_step: f64) -> Result<f64> {
    grid.validate()?;
    if !(fd_step > 0.0) {
        return Err(Error::Usage(format!("finite-difference step must be positive (got {fd_step})")));
    }
    if grid.nx < 3 || grid.nt < 3 {
        return Err(Error::Usage("self-check needs interior grid nodes".into()));
    }
    let coeffs = solution.coefficients();
    let mut worst = 0.0f64;
    for j in 1..grid.nt - 1 {
        for i in 1..grid.nx - 1 {
            let jets = finite_difference_jets(solution, Point::new(grid.x(i), grid.t(j)), fd_step);
            worst = worst.max(forward_residual(&jets, &coeffs).max_abs());
        }
    }
    Ok(worst)
}
