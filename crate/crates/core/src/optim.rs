//! Full-batch Adam and L-BFGS over a flat parameter vector.

use crate::error::{Error, Result};

/// A differentiable scalar objective over `dim()` parameters.
pub trait Objective {
    fn dim(&self) -> usize;
    /// Returns f(x) and overwrites `grad` with ∇f(x).
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Wraps a closure as an [`Objective`].
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        Ok((self.f)(x, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iterations: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, iterations: 10_000 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("Adam learning rate must be positive (got {})", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("Adam {name} must lie in [0, 1) (got {b})")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("Adam eps must be positive (got {})", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    /// Stop when the gradient infinity-norm falls to this.
    pub grad_tol: f64,
    /// Stop when a step improves f by less than this relative amount.
    pub f_rel_tol: f64,
    pub max_iters: usize,
    /// Sufficient decrease (Armijo) constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 50,
            grad_tol: 1e-9,
            f_rel_tol: f64::EPSILON,
            max_iters: 5000,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::Config("L-BFGS memory must be at least 1".into()));
        }
        if !(self.grad_tol >= 0.0) || !(self.f_rel_tol >= 0.0) {
            return Err(Error::Config("L-BFGS tolerances must be non-negative".into()));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!(
                "line search needs 0 < c1 < c2 < 1 (got c1 = {}, c2 = {})",
                self.c1, self.c2
            )));
        }
        if self.max_line_search == 0 {
            return Err(Error::Config("line search needs at least one trial".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    /// No acceptable step even after discarding curvature memory.
    LineSearchFailed,
}

impl LbfgsStatus {
    pub fn name(self) -> &'static str {
        match self {
            LbfgsStatus::GradientTolerance => "gradient-tolerance",
            LbfgsStatus::FunctionTolerance => "function-tolerance",
            LbfgsStatus::MaxIterations => "max-iterations",
            LbfgsStatus::LineSearchFailed => "line-search-failed",
        }
    }

    pub fn converged(self) -> bool {
        matches!(self, LbfgsStatus::GradientTolerance | LbfgsStatus::FunctionTolerance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeReport {
    /// Objective value at the returned parameters.
    pub loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Loss after each iteration.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub report: MinimizeReport,
    pub status: LbfgsStatus,
}

fn check_finite(f: f64, phase: &'static str, iteration: usize) -> Result<f64> {
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::NonFiniteLoss { phase, iteration })
    }
}

/// Runs `config.iterations` Adam steps in place. `observer(iter, loss)` sees the
/// loss evaluated at the parameters before step `iter`.
pub fn adam_minimize<O, C>(obj: &mut O, x: &mut [f64], config: &AdamConfig, mut observer: C) -> Result<MinimizeReport>
where
    O: Objective + ?Sized,
    C: FnMut(usize, f64),
{
    config.validate()?;
    check_dim(obj, x)?;
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut losses = Vec::with_capacity(config.iterations);
    let (b1, b2) = (config.beta1, config.beta2);
    let mut b1t = 1.0;
    let mut b2t = 1.0;
    for it in 0..config.iterations {
        let f = match obj.eval(x, &mut g) {
            Ok(f) => check_finite(f, "adam", it)?,
            Err(Error::NonFiniteLayer { .. }) => return Err(Error::NonFiniteLoss { phase: "adam", iteration: it }),
            Err(e) => return Err(e),
        };
        observer(it, f);
        losses.push(f);
        b1t *= b1;
        b2t *= b2;
        let step = config.learning_rate * (1.0 - b2t).sqrt() / (1.0 - b1t);
        let eps_hat = config.eps * (1.0 - b2t).sqrt();
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            x[i] -= step * m[i] / (v[i].sqrt() + eps_hat);
        }
    }
    let loss = check_finite(obj.eval(x, &mut g)?, "adam", config.iterations)?;
    Ok(MinimizeReport { loss, iterations: config.iterations, evaluations: config.iterations + 1, losses })
}

fn check_dim<O: Objective + ?Sized>(obj: &O, x: &[f64]) -> Result<()> {
    if obj.dim() != x.len() {
        return Err(Error::Usage(format!("objective expects {} parameters, got {}", obj.dim(), x.len())));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Probe {
    alpha: f64,
    f: f64,
    dphi: f64,
}

struct LineSearch<'a, O: ?Sized> {
    obj: &'a mut O,
    x0: &'a [f64],
    dir: &'a [f64],
    trial: Vec<f64>,
    grad: Vec<f64>,
    evaluations: usize,
}

impl<O: Objective + ?Sized> LineSearch<'_, O> {
    fn probe(&mut self, alpha: f64) -> Result<Probe> {
        for ((t, x), d) in self.trial.iter_mut().zip(self.x0).zip(self.dir) {
            *t = x + alpha * d;
        }
        self.evaluations += 1;
        let f = match self.obj.eval(&self.trial, &mut self.grad) {
            Ok(f) => f,
            Err(Error::NonFiniteLayer { .. } | Error::NonFiniteLoss { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        if !f.is_finite() {
            // Treated as an infinitely bad trial so the bracket shrinks.
            return Ok(Probe { alpha, f: f64::INFINITY, dphi: f64::NAN });
        }
        Ok(Probe { alpha, f, dphi: dot(&self.grad, self.dir) })
    }
}

/// Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db),
/// safeguarded into the interior of the bracket.
fn cubic_min(a: &Probe, b: &Probe) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let mid = 0.5 * (lo + hi);
    if !(b.f.is_finite() && b.dphi.is_finite()) {
        return mid;
    }
    let d1 = a.dphi + b.dphi - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dphi * b.dphi;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / (b.dphi - a.dphi + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

/// Strong-Wolfe line search (bracketing then zoom). Returns the accepted
/// probe, leaving the gradient at the accepted point in `ls.grad` and the point
/// in `ls.trial`.
fn strong_wolfe<O: Objective + ?Sized>(
    ls: &mut LineSearch<'_, O>,
    f0: f64,
    d0: f64,
    alpha_init: f64,
    cfg: &LbfgsConfig,
) -> Result<Option<Probe>> {
    let mut prev = Probe { alpha: 0.0, f: f0, dphi: d0 };
    let mut alpha = alpha_init;
    let mut budget = cfg.max_line_search;
    let mut first = true;
    loop {
        if budget == 0 {
            return Ok(None);
        }
        budget -= 1;
        let cur = ls.probe(alpha)?;
        if cur.f > f0 + cfg.c1 * alpha * d0 || (!first && cur.f >= prev.f) {
            return zoom(ls, prev, cur, f0, d0, budget, cfg);
        }
        if cur.dphi.abs() <= -cfg.c2 * d0 {
            return Ok(Some(cur));
        }
        if cur.dphi >= 0.0 {
            return zoom(ls, cur, prev, f0, d0, budget, cfg);
        }
        first = false;
        prev = cur;
        alpha *= 2.0;
    }
}

fn zoom<O: Objective + ?Sized>(
    ls: &mut LineSearch<'_, O>,
    mut lo: Probe,
    mut hi: Probe,
    f0: f64,
    d0: f64,
    mut budget: usize,
    cfg: &LbfgsConfig,
) -> Result<Option<Probe>> {
    while budget > 0 {
        budget -= 1;
        let alpha = cubic_min(&lo, &hi);
        if (alpha - lo.alpha).abs() <= f64::EPSILON * alpha.abs().max(1.0) {
            break;
        }
        let cur = ls.probe(alpha)?;
        if cur.f > f0 + cfg.c1 * alpha * d0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.dphi.abs() <= -cfg.c2 * d0 {
                return Ok(Some(cur));
            }
            if cur.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // Accept the best sufficient-decrease point found, if any.
    if lo.alpha > 0.0 && lo.f < f0 {
        let best = ls.probe(lo.alpha)?;
        return Ok(Some(best));
    }
    Ok(None)
}

/// Limited-memory BFGS with a Strong-Wolfe line search, in place.
/// `observer(iter, loss)` sees the loss after each accepted step.
pub fn lbfgs_minimize<O, C>(obj: &mut O, x: &mut [f64], config: &LbfgsConfig, mut observer: C) -> Result<LbfgsReport>
where
    O: Objective + ?Sized,
    C: FnMut(usize, f64),
{
    config.validate()?;
    check_dim(obj, x)?;
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut f = check_finite(obj.eval(x, &mut g)?, "lbfgs", 0)?;
    let mut evaluations = 1;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut alpha_buf = vec![0.0; config.memory];
    let mut dir = vec![0.0; n];
    let mut losses = Vec::new();
    let mut iterations = 0;
    let mut reset_once = false;

    let status = loop {
        if inf_norm(&g) <= config.grad_tol {
            break LbfgsStatus::GradientTolerance;
        }
        if iterations >= config.max_iters {
            break LbfgsStatus::MaxIterations;
        }

        // Two-loop recursion: dir = -H g.
        dir.copy_from_slice(&g);
        let k = s_hist.len();
        for i in (0..k).rev() {
            let a = rho_hist[i] * dot(&s_hist[i], &dir);
            alpha_buf[i] = a;
            for (d, y) in dir.iter_mut().zip(&y_hist[i]) {
                *d -= a * y;
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for i in 0..k {
            let b = rho_hist[i] * dot(&y_hist[i], &dir);
            for (d, s) in dir.iter_mut().zip(&s_hist[i]) {
                *d += (alpha_buf[i] - b) * s;
            }
        }
        dir.iter_mut().for_each(|d| *d = -*d);

        let mut d0 = dot(&g, &dir);
        if !(d0 < 0.0) {
            // Not a descent direction; fall back to steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            for (d, gi) in dir.iter_mut().zip(&g) {
                *d = -gi;
            }
            d0 = dot(&g, &dir);
        }
        let alpha_init = if s_hist.is_empty() { (1.0 / inf_norm(&g)).min(1.0) } else { 1.0 };

        let mut ls =
            LineSearch { obj: &mut *obj, x0: x, dir: &dir, trial: vec![0.0; n], grad: vec![0.0; n], evaluations: 0 };
        let accepted = strong_wolfe(&mut ls, f, d0, alpha_init, config)?;
        evaluations += ls.evaluations;
        let Some(step) = accepted else {
            if !reset_once && !s_hist.is_empty() {
                reset_once = true;
                s_hist.clear();
                y_hist.clear();
                rho_hist.clear();
                continue;
            }
            break LbfgsStatus::LineSearchFailed;
        };
        let LineSearch { trial, grad: g_new, .. } = ls;
        reset_once = false;

        let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        x.copy_from_slice(&trial);
        g.copy_from_slice(&g_new);
        let f_old = f;
        f = step.f;
        iterations += 1;
        losses.push(f);
        observer(iterations, f);

        if sy > f64::EPSILON * dot(&y, &y) {
            if s_hist.len() == config.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }

        if (f_old - f) <= config.f_rel_tol * f_old.abs().max(f.abs()).max(f64::MIN_POSITIVE) {
            break LbfgsStatus::FunctionTolerance;
        }
    };

    Ok(LbfgsReport { report: MinimizeReport { loss: f, iterations, evaluations, losses }, status })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> FnObjective<impl FnMut(&[f64], &mut [f64]) -> f64> {
        FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            (x[0] - 3.0).powi(2)
        })
    }

    fn rosenbrock() -> FnObjective<impl FnMut(&[f64], &mut [f64]) -> f64> {
        FnObjective::new(2, |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        })
    }

    #[test]
    fn lbfgs_quadratic() {
        let mut x = [0.0];
        let r = lbfgs_minimize(&mut quad(), &mut x, &LbfgsConfig::default(), |_, _| {}).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-8, "{x:?}");
        assert!(r.report.iterations <= 5, "{}", r.report.iterations);
        assert!(r.status.converged());
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let mut x = [-1.2, 1.0];
        let r = lbfgs_minimize(&mut rosenbrock(), &mut x, &LbfgsConfig::default(), |_, _| {}).unwrap();
        assert!(r.report.loss < 1e-8, "{r:?}");
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn lbfgs_stationary_start() {
        let mut x = [3.0];
        let r = lbfgs_minimize(&mut quad(), &mut x, &LbfgsConfig::default(), |_, _| {}).unwrap();
        assert_eq!(r.report.iterations, 0);
        assert_eq!(x, [3.0]);
        assert_eq!(r.status, LbfgsStatus::GradientTolerance);
    }

    #[test]
    fn lbfgs_inconsistent_gradient_flags_failure() {
        // Gradient points uphill, so no step can satisfy sufficient decrease.
        let mut obj = FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = -2.0 * x[0];
            x[0] * x[0]
        });
        let mut x = [1.0];
        let r = lbfgs_minimize(&mut obj, &mut x, &LbfgsConfig::default(), |_, _| {}).unwrap();
        assert_eq!(r.status, LbfgsStatus::LineSearchFailed);
        assert_eq!(x, [1.0]);
    }

    fn square() -> FnObjective<impl FnMut(&[f64], &mut [f64]) -> f64> {
        FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            x[0] * x[0]
        })
    }

    #[test]
    fn adam_matches_reference_recurrence() {
        let cfg = AdamConfig { learning_rate: 0.1, iterations: 500, ..Default::default() };
        let mut x = [1.0];
        adam_minimize(&mut square(), &mut x, &cfg, |_, _| {}).unwrap();

        // Textbook form with explicit bias-corrected moments.
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=500 {
            let g = 2.0 * w;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((x[0] - w).abs() < 1e-9, "{} vs {}", x[0], w);
        assert!(x[0].abs() < 1e-2);
        assert!(x[0] * x[0] < 1e-4);
    }

    #[test]
    fn adam_first_step() {
        let cfg = AdamConfig { learning_rate: 0.1, iterations: 1, ..Default::default() };
        let mut x = [1.0];
        adam_minimize(&mut square(), &mut x, &cfg, |_, _| {}).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut obj = FnObjective::new(3, |_: &[f64], g: &mut [f64]| {
            g.fill(0.0);
            1.0
        });
        let mut x = [0.5, -2.0, 7.0];
        let r =
            adam_minimize(&mut obj, &mut x, &AdamConfig { iterations: 50, ..Default::default() }, |_, _| {}).unwrap();
        assert_eq!(x, [0.5, -2.0, 7.0]);
        assert_eq!(r.losses.len(), 50);
    }

    #[test]
    fn adam_reports_nonfinite_iteration() {
        let mut obj = FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = -1.0;
            if x[0] > 1.25 {
                f64::NAN
            } else {
                -x[0]
            }
        });
        let mut x = [1.0];
        let cfg = AdamConfig { learning_rate: 0.1, iterations: 100, ..Default::default() };
        match adam_minimize(&mut obj, &mut x, &cfg, |_, _| {}) {
            Err(Error::NonFiniteLoss { phase: "adam", iteration }) => assert_eq!(iteration, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        assert!(AdamConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(LbfgsConfig::default().validate().is_ok());
        assert!(LbfgsConfig { memory: 0, ..Default::default() }.validate().is_err());
        assert!(LbfgsConfig { c1: 0.95, ..Default::default() }.validate().is_err());
    }
}
