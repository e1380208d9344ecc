//! Space-time domain, Latin hypercube sampling, and greedy selection of the
//! largest-residual candidates.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::Point;
use crate::physics::ResidualVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl Domain {
    pub fn new(x_lo: f64, x_hi: f64, t_lo: f64, t_hi: f64) -> Result<Self> {
        let d = Self { x_lo, x_hi, t_lo, t_hi };
        d.validate()?;
        Ok(d)
    }

    /// [-L, L] x [-T, T]
    pub fn symmetric(l: f64, t: f64) -> Result<Self> {
        Self::new(-l, l, -t, t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_lo < self.x_hi && self.t_lo < self.t_hi {
            Ok(())
        } else {
            Err(Error::Config(format!("empty domain [{}, {}] x [{}, {}]", self.x_lo, self.x_hi, self.t_lo, self.t_hi)))
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        (self.x_lo..=self.x_hi).contains(&p.x) && (self.t_lo..=self.t_hi).contains(&p.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RARConfig {
    /// Points added per round.
    pub m: usize,
    /// Stop once the mean residual drops below this.
    pub epsilon0: f64,
    pub max_rounds: usize,
    /// Size of the freshly drawn candidate pool scored each round.
    pub candidate_pool: usize,
}

impl Default for RARConfig {
    fn default() -> Self {
        Self { m: 5, epsilon0: 0.01, max_rounds: 2, candidate_pool: 10_000 }
    }
}

impl RARConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("RAR must add at least one point per round".into()));
        }
        if !(self.epsilon0 > 0.0) {
            return Err(Error::Config(format!("RAR threshold must be positive (got {})", self.epsilon0)));
        }
        if self.candidate_pool < self.m {
            return Err(Error::Config(format!(
                "candidate pool ({}) smaller than points per round ({})",
                self.candidate_pool, self.m
            )));
        }
        Ok(())
    }

    /// Collocation points a baseline run adds to match a full refinement.
    pub fn budget(&self) -> usize {
        self.m * self.max_rounds
    }
}

/// `n` stratified points: each axis split into `n` equal strata holding
/// exactly one point each, the strata paired by independent permutations.
pub fn lhs_sample(domain: &Domain, n: usize, seed: u64) -> Result<Vec<Point>> {
    domain.validate()?;
    if n == 0 {
        return Err(Error::Usage("LHS needs at least one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata_x: Vec<usize> = (0..n).collect();
    let mut strata_t: Vec<usize> = (0..n).collect();
    strata_x.shuffle(&mut rng);
    strata_t.shuffle(&mut rng);
    let wx = domain.x_hi - domain.x_lo;
    let wt = domain.t_hi - domain.t_lo;
    let nf = n as f64;
    Ok(strata_x
        .iter()
        .zip(&strata_t)
        .map(|(&sx, &st)| {
            let ux: f64 = rng.random();
            let ut: f64 = rng.random();
            Point::new(domain.x_lo + (sx as f64 + ux) / nf * wx, domain.t_lo + (st as f64 + ut) / nf * wt)
        })
        .collect())
}

/// Indices of the `m` largest scores, largest first; equal scores keep pool
/// order.
pub fn top_m_indices(scores: &[f64], m: usize) -> Result<Vec<usize>> {
    if m > scores.len() {
        return Err(Error::Usage(format!("cannot select {m} points from a pool of {}", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort on descending score keeps ties in index order.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(m);
    Ok(order)
}

/// The `m` pool points with the largest |f1u|+|f1v|+|f2u|+|f2v|.
pub fn rar_select<F>(mut residual_at: F, pool: &[Point], m: usize) -> Result<Vec<Point>>
where
    F: FnMut(Point) -> ResidualVector,
{
    if m > pool.len() {
        return Err(Error::Usage(format!("cannot select {m} points from a pool of {}", pool.len())));
    }
    let scores: Vec<f64> = pool.iter().map(|&p| residual_at(p).score()).collect();
    Ok(top_m_indices(&scores, m)?.into_iter().map(|i| pool[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strata(values: impl Iterator<Item = f64>, lo: f64, hi: f64, n: usize) -> Vec<usize> {
        let mut counts = vec![0; n];
        for v in values {
            let k = (((v - lo) / (hi - lo)) * n as f64).floor() as usize;
            counts[k.min(n - 1)] += 1;
        }
        counts
    }

    #[test]
    fn four_points_one_per_stratum() {
        let d = Domain::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let pts = lhs_sample(&d, 4, 3).unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(strata(pts.iter().map(|p| p.x), 0.0, 1.0, 4), vec![1; 4]);
        assert_eq!(strata(pts.iter().map(|p| p.t), 0.0, 1.0, 4), vec![1; 4]);
    }

    #[test]
    fn single_point_inside_and_deterministic() {
        let d = Domain::symmetric(10.0, 2.0).unwrap();
        let p = lhs_sample(&d, 1, 9).unwrap();
        assert_eq!(p.len(), 1);
        assert!(d.contains(p[0]));
        assert_eq!(lhs_sample(&d, 50, 42).unwrap(), lhs_sample(&d, 50, 42).unwrap());
        assert_ne!(lhs_sample(&d, 50, 42).unwrap(), lhs_sample(&d, 50, 43).unwrap());
        assert!(lhs_sample(&d, 0, 1).is_err());
    }

    #[test]
    fn selection_examples() {
        let pool: Vec<Point> = (0..4).map(|i| Point::new(i as f64, 0.0)).collect();
        let scores = [3.0, 0.1, 2.0, 0.05];
        let pick = rar_select(|p| ResidualVector::new(scores[p.x as usize], 0.0, 0.0, 0.0), &pool, 2).unwrap();
        assert_eq!(pick, vec![pool[0], pool[2]]);

        let pick = rar_select(|_| ResidualVector::new(1.0, 1.0, 0.0, 0.0), &pool, 2).unwrap();
        assert_eq!(pick, vec![pool[0], pool[1]]);

        let mut all = rar_select(|p| ResidualVector::new(-p.x, 0.0, 0.0, 0.0), &pool, 4).unwrap();
        all.sort_by(|a, b| a.x.total_cmp(&b.x));
        assert_eq!(all, pool);

        assert!(matches!(rar_select(|_| ResidualVector::default(), &pool, 5), Err(Error::Usage(_))));
    }

    #[test]
    fn rar_config_validation() {
        assert!(RARConfig::default().validate().is_ok());
        assert!(RARConfig { m: 0, ..Default::default() }.validate().is_err());
        assert!(RARConfig { epsilon0: 0.0, ..Default::default() }.validate().is_err());
        assert!(RARConfig { candidate_pool: 2, m: 3, ..Default::default() }.validate().is_err());
        assert_eq!(RARConfig::default().budget(), 10);
    }
}
