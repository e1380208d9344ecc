//! Scalar reverse-mode differentiation on a tape.
//!
//! This is the general-purpose gradient route: any loss written against
//! [`Scalar`] can be differentiated with respect to a flat parameter slice by
//! [`grad_params`]. Training uses the fused batch path in [`crate::net`]
//! instead; the two are checked against each other in tests.

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Arithmetic needed by the generic network evaluation.
pub trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    fn value(&self) -> f64;
    fn scale(self, c: f64) -> Self;
    fn offset(self, c: f64) -> Self;
    fn tanh(self) -> Self;
    /// A zero that lives wherever `self` lives (same tape for [`Var`]).
    fn zero_like(self) -> Self {
        self.scale(0.0)
    }
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn offset(self, c: f64) -> Self {
        self + c
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn zero_like(self) -> Self {
        0.0
    }
}

const NO_PARENT: usize = usize::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [usize; 2],
    partials: [f64; 2],
}

/// Append-only record of scalar operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, [NO_PARENT; 2], [0.0; 2])
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: f64, parents: [usize; 2], partials: [f64; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents, partials });
        Var { tape: self, index: nodes.len() - 1, value }
    }

    /// Adjoints of every node with respect to `output`.
    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        adjoint[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                if node.parents[k] != NO_PARENT {
                    adjoint[node.parents[k]] += a * node.partials[k];
                }
            }
        }
        adjoint
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn constant(&self, c: f64) -> Var<'t> {
        self.tape.var(c)
    }

    fn unary(self, value: f64, partial: f64) -> Var<'t> {
        self.tape.push(value, [self.index, NO_PARENT], [partial, 0.0])
    }

    fn binary(self, other: Var<'t>, value: f64, da: f64, db: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        self.tape.push(value, [self.index, other.index], [da, db])
    }

    pub fn square(self) -> Var<'t> {
        self.unary(self.value * self.value, 2.0 * self.value)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(&self) -> f64 {
        self.value
    }
    fn scale(self, c: f64) -> Self {
        self.unary(self.value * c, c)
    }
    fn offset(self, c: f64) -> Self {
        self.unary(self.value + c, 1.0)
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(t, 1.0 - t * t)
    }
}

/// Value and gradient of `loss` at `params` by reverse accumulation.
///
/// The gradient has the same layout as `params`; parameters the loss never
/// touches get an exact zero.
pub fn grad_params<F>(params: &[f64], loss: F) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|&p| tape.var(p)).collect();
    let out = loss(&vars);
    if !out.value.is_finite() {
        return Err(Error::NonFiniteLoss { phase: "grad_params", iteration: 0 });
    }
    let adjoint = tape.gradient(out);
    let grad = vars.iter().map(|v| adjoint[v.index]).collect();
    Ok((out.value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_square_norm_gradient_is_identity() {
        let p = vec![0.5, -1.25, 3.0, 0.0];
        let (v, g) = grad_params(&p, |w| {
            let mut acc = w[0].square();
            for x in &w[1..] {
                acc = acc + x.square();
            }
            acc.scale(0.5)
        })
        .unwrap();
        assert!((v - 0.5 * (0.25 + 1.5625 + 9.0)).abs() < 1e-15);
        assert_eq!(g, p);
    }

    #[test]
    fn unused_parameter_gets_zero() {
        let p = vec![2.0, 7.0];
        let (_, g) = grad_params(&p, |w| w[0] * w[0].tanh()).unwrap();
        assert_eq!(g[1], 0.0);
        let t = 2.0f64.tanh();
        assert!((g[0] - (t + 2.0 * (1.0 - t * t))).abs() < 1e-14);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let p = vec![f64::INFINITY];
        assert!(grad_params(&p, |w| w[0].square()).is_err());
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // f = (a*b - a)^2, df/da = 2(ab - a)(b - 1), df/db = 2(ab - a) a
        let p = vec![1.5, -0.5];
        let (_, g) = grad_params(&p, |w| (w[0] * w[1] - w[0]).square()).unwrap();
        let r = 1.5 * -0.5 - 1.5;
        assert!((g[0] - 2.0 * r * (-1.5)).abs() < 1e-14);
        assert!((g[1] - 2.0 * r * 1.5).abs() < 1e-14);
    }
}
