//! Identification of the dispersion and nonlinearity factors λ1..λ4 from
//! sampled field data.

use std::cell::Cell;
use std::fmt::Write as _;
use std::rc::Rc;

use rand::seq::index::sample;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::net::{init_params, NetworkShape, ParameterVector, Point};
use crate::optim::{AdamConfig, LbfgsConfig, LbfgsStatus, Objective};
use crate::oracle::FieldSample;
use crate::physics::{LambdaVector, ResidualMode, ResidualVector};
use crate::sampling::{top_m_indices, RARConfig};
use crate::training::{
    residuals_at, run_adam, run_lbfgs, LossBreakdown, LossEngine, Phase, RarEvent, Seeds, Supervised, TrainingHistory,
};

/// Adds zero-mean Gaussian noise to each of u1, v1, u2, v2 with standard
/// deviation `level` times that field's sample standard deviation.
pub fn add_noise(dataset: &[FieldSample], level: f64, seed: u64) -> Result<Vec<FieldSample>> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::Config(format!("noise level must be non-negative (got {level})")));
    }
    if level == 0.0 || dataset.is_empty() {
        return Ok(dataset.to_vec());
    }
    let n = dataset.len() as f64;
    let mut mean = [0.0; 4];
    for s in dataset {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v / n;
        }
    }
    let mut var = [0.0; 4];
    for s in dataset {
        for ((acc, v), m) in var.iter_mut().zip(s.values()).zip(mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let denom = (dataset.len().max(2) - 1) as f64;
    let scale = var.map(|v| level * (v / denom).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(dataset
        .iter()
        .map(|s| {
            let mut out = *s;
            let mut vals = s.values();
            for (v, sd) in vals.iter_mut().zip(scale) {
                let z: f64 = rng.sample(StandardNormal);
                *v += sd * z;
            }
            out.set_values(vals);
            out
        })
        .collect())
}

/// Componentwise |λ̂ − λ*|.
pub fn identification_error(lambda_hat: &LambdaVector, truth: &LambdaVector) -> [f64; 4] {
    let (a, b) = (lambda_hat.as_array(), truth.as_array());
    [0, 1, 2, 3].map(|i| (a[i] - b[i]).abs())
}

/// The identified system in the form i h_t + λ h_xx + λ' G h = 0.
pub fn equation_string(l: &LambdaVector) -> String {
    let g = "(|h1|^2 + |h2|^2 + 2 Re(h1 conj(h2)))";
    let mut s = String::new();
    let _ = writeln!(s, "i h1_t + {:.5} h1_xx + {:.5} {g} h1 = 0", l.l1, l.l2);
    let _ = write!(s, "i h2_t + {:.5} h2_xx + {:.5} {g} h2 = 0", l.l3, l.l4);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InverseLoss {
    pub mse_p: f64,
    pub mse_f: f64,
    pub total: f64,
}

impl From<LossBreakdown> for InverseLoss {
    fn from(b: LossBreakdown) -> Self {
        Self { mse_p: b.loss0, mse_f: b.lossf, total: b.loss0 + b.lossf }
    }
}

/// Data misfit plus identification-form residual at the sample locations,
/// over network parameters followed by λ1..λ4.
pub struct InverseObjective {
    pub engine: LossEngine,
    net_len: usize,
    last: Rc<Cell<LossBreakdown>>,
}

impl InverseObjective {
    pub fn new(engine: LossEngine) -> Self {
        let net_len = engine.shape().param_count();
        Self { engine, net_len, last: Rc::default() }
    }

    pub fn last(&self) -> Rc<Cell<LossBreakdown>> {
        Rc::clone(&self.last)
    }

    pub fn loss(&mut self, x: &[f64]) -> Result<InverseLoss> {
        let (net, lam) = x.split_at(self.net_len);
        let mode = ResidualMode::Inverse(LambdaVector::from_slice(lam));
        Ok(self.engine.evaluate(net, &mode, None)?.into())
    }
}

impl Objective for InverseObjective {
    fn dim(&self) -> usize {
        self.net_len + 4
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (net, lam) = x.split_at(self.net_len);
        let mode = ResidualMode::Inverse(LambdaVector::from_slice(lam));
        grad.fill(0.0);
        let (g_net, g_lam) = grad.split_at_mut(self.net_len);
        let mut dl = [0.0; 4];
        let loss = self.engine.evaluate(net, &mode, Some((g_net, &mut dl)))?;
        g_lam.copy_from_slice(&dl);
        self.last.set(loss);
        Ok(loss.total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseExperiment {
    /// Training samples (N_u of them).
    pub dataset: Vec<FieldSample>,
    /// Reservoir the refinement rounds pick extra samples from.
    pub pool: Vec<FieldSample>,
    pub noise_level: f64,
    pub lambda_init: LambdaVector,
    pub shape: NetworkShape,
    pub adam: AdamConfig,
    pub refit_iterations: usize,
    pub lbfgs: LbfgsConfig,
    pub rar: Option<RARConfig>,
    pub seeds: Seeds,
}

impl InverseExperiment {
    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_empty() {
            return Err(Error::Config("N_u must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!("noise level must lie in [0, 1) (got {})", self.noise_level)));
        }
        self.shape.validate()?;
        self.adam.validate()?;
        self.lbfgs.validate()?;
        if let Some(rar) = &self.rar {
            rar.validate()?;
            if self.pool.len() < rar.m {
                return Err(Error::Config(format!(
                    "refinement pool has {} samples, fewer than m = {}",
                    self.pool.len(),
                    rar.m
                )));
            }
        }
        Ok(())
    }
}

/// Splits `samples` into `n_u` random training samples and the rest.
pub fn split_samples(samples: &[FieldSample], n_u: usize, seed: u64) -> Result<(Vec<FieldSample>, Vec<FieldSample>)> {
    if n_u == 0 || n_u > samples.len() {
        return Err(Error::Config(format!("cannot draw N_u = {n_u} from {} samples", samples.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; samples.len()];
    let picked: Vec<FieldSample> = sample(&mut rng, samples.len(), n_u)
        .into_iter()
        .map(|i| {
            chosen[i] = true;
            samples[i]
        })
        .collect();
    let rest = samples.iter().zip(&chosen).filter(|(_, &c)| !c).map(|(s, _)| *s).collect();
    Ok((picked, rest))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationReport {
    pub lambda_hat: LambdaVector,
    pub errors: [f64; 4],
    pub noise_level: f64,
    /// Samples used, including refinement additions.
    pub n_u: usize,
    pub equation: String,
    pub loss: InverseLoss,
    pub params: ParameterVector,
    pub history: TrainingHistory,
    pub lbfgs_status: Option<LbfgsStatus>,
    pub failure: Option<Error>,
}

fn numeric(e: &Error) -> bool {
    matches!(e, Error::NonFiniteLoss { .. } | Error::NonFiniteLayer { .. })
}

/// Jointly fits the network and λ (Adam, optional refinement, L-BFGS).
pub fn train_inverse(exp: &InverseExperiment, truth: &LambdaVector) -> Result<IdentificationReport> {
    exp.validate()?;
    let shape = exp.shape;
    let n_data = exp.dataset.len();
    let all: Vec<FieldSample> = exp.dataset.iter().chain(&exp.pool).copied().collect();
    let noisy = add_noise(&all, exp.noise_level, exp.seeds.noise)?;
    let (train, pool) = noisy.split_at(n_data);
    let train: Vec<Supervised> = train.iter().map(Supervised::from).collect();
    let mut pool: Vec<Supervised> = pool.iter().map(Supervised::from).collect();

    let mut obj = InverseObjective::new(LossEngine::from_samples(shape, &train)?);
    let last = obj.last();
    let mut x = init_params(&shape, exp.seeds.init)?.values;
    x.extend_from_slice(&exp.lambda_init.as_array());
    let mut history = TrainingHistory::default();
    let mut n_u = n_data;

    let finish =
        |x: Vec<f64>, obj: &mut InverseObjective, history, n_u, status, failure| -> Result<IdentificationReport> {
            let loss = obj.loss(&x)?;
            let lambda_hat = LambdaVector::from_slice(&x[x.len() - 4..]);
            Ok(IdentificationReport {
                lambda_hat,
                errors: identification_error(&lambda_hat, truth),
                noise_level: exp.noise_level,
                n_u,
                equation: equation_string(&lambda_hat),
                loss,
                params: ParameterVector::from_values(&shape, x[..x.len() - 4].to_vec())?,
                history,
                lbfgs_status: status,
                failure,
            })
        };

    let mut trial = x.clone();
    match run_adam(&mut obj, last.clone(), &mut trial, &exp.adam, Phase::Adam, &mut history) {
        Ok(()) => x.copy_from_slice(&trial),
        Err(e) if numeric(&e) => return finish(x, &mut obj, history, n_u, None, Some(e)),
        Err(e) => return Err(e),
    }

    if let Some(rar) = &exp.rar {
        let mut round = 0;
        loop {
            let (net, lam) = x.split_at(x.len() - 4);
            let mode = ResidualMode::Inverse(LambdaVector::from_slice(lam));
            let mut rng = ChaCha8Rng::seed_from_u64(exp.seeds.pool_round(round + 1));
            let take = rar.candidate_pool.min(pool.len());
            let candidates: Vec<usize> = sample(&mut rng, pool.len(), take).into_vec();
            let pts: Vec<Point> = candidates.iter().map(|&i| pool[i].point).collect();
            let scores: Vec<f64> = residuals_at(net, &shape, &mode, &pts)?.iter().map(ResidualVector::score).collect();
            let err = scores.iter().sum::<f64>() / scores.len() as f64;
            if err < rar.epsilon0 || round == rar.max_rounds || take < rar.m {
                if err >= rar.epsilon0 && rar.max_rounds > 0 {
                    history.warnings.push(format!(
                        "refinement stopped after {round} rounds with mean residual {err:.3e} >= {:.3e}",
                        rar.epsilon0
                    ));
                }
                history.rar_events.push(RarEvent { round: round + 1, err, added: Vec::new() });
                break;
            }
            round += 1;
            let mut picked: Vec<usize> = top_m_indices(&scores, rar.m)?.into_iter().map(|k| candidates[k]).collect();
            let added: Vec<Supervised> = picked.iter().map(|&i| pool[i]).collect();
            picked.sort_unstable_by(|a, b| b.cmp(a));
            for i in picked {
                pool.swap_remove(i);
            }
            obj.engine.add_samples(&added);
            n_u += added.len();
            history.rar_events.push(RarEvent { round, err, added: added.iter().map(|s| s.point).collect() });

            let refit = AdamConfig { iterations: exp.refit_iterations, ..exp.adam };
            let mut trial = x.clone();
            match run_adam(&mut obj, last.clone(), &mut trial, &refit, Phase::Refit(round), &mut history) {
                Ok(()) => x.copy_from_slice(&trial),
                Err(e) if numeric(&e) => return finish(x, &mut obj, history, n_u, None, Some(e)),
                Err(e) => return Err(e),
            }
        }
    }

    let mut trial = x.clone();
    let status = match run_lbfgs(&mut obj, last.clone(), &mut trial, &exp.lbfgs, &mut history) {
        Ok(s) => s,
        Err(e) if numeric(&e) => return finish(x, &mut obj, history, n_u, None, Some(e)),
        Err(e) => return Err(e),
    };
    x.copy_from_slice(&trial);
    finish(x, &mut obj, history, n_u, Some(status), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{sample_grid, GridSpec, OneSoliton, OneSolitonSpec};

    fn data(n: usize) -> Vec<FieldSample> {
        let sol = OneSoliton::new(OneSolitonSpec::preset()).unwrap();
        let grid = GridSpec::new(-10.0, 10.0, -2.0, 2.0, n, 20).unwrap();
        sample_grid(&sol, &grid).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let d = data(30);
        assert_eq!(add_noise(&d, 0.0, 1).unwrap(), d);
        assert!(add_noise(&d, -0.1, 1).is_err());
    }

    #[test]
    fn noise_has_requested_relative_spread() {
        let d = data(500);
        assert_eq!(d.len(), 10_000);
        let noisy = add_noise(&d, 0.01, 9).unwrap();
        assert_eq!(noisy, add_noise(&d, 0.01, 9).unwrap());
        for k in 0..4 {
            let f: Vec<f64> = d.iter().map(|s| s.values()[k]).collect();
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (f.len() - 1) as f64).sqrt();
            let diff: Vec<f64> = noisy.iter().zip(&d).map(|(a, b)| (a.values()[k] - b.values()[k]) / sd).collect();
            let dm = diff.iter().sum::<f64>() / diff.len() as f64;
            let dsd = (diff.iter().map(|v| (v - dm).powi(2)).sum::<f64>() / (diff.len() - 1) as f64).sqrt();
            assert!((0.009..=0.011).contains(&dsd), "field {k}: {dsd}");
        }
    }

    #[test]
    fn identification_errors() {
        let t = LambdaVector::new(1.0, 2.0, 1.0, 2.0);
        assert_eq!(identification_error(&t, &t), [0.0; 4]);
        let e = identification_error(&LambdaVector::new(1.01, 2.0, 1.0, 2.0), &t);
        assert!((e[0] - 0.01).abs() < 1e-15 && e[1..] == [0.0; 3]);
        let row = LambdaVector::new(1.0043837, 2.0022939, 0.9982359, 2.0017554);
        let e = identification_error(&row, &t);
        for (a, b) in e.iter().zip([0.0043837, 0.0022939, 0.0017641, 0.0017554]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(equation_string(&t).starts_with("i h1_t + 1.00000 h1_xx + 2.00000"));
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let d = data(10);
        let (a, b) = split_samples(&d, 50, 3).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(b.len(), 150);
        for s in &a {
            assert!(!b.contains(s));
        }
        assert!(split_samples(&d, 201, 3).is_err());
    }

    #[test]
    fn short_run_reports_consistently() {
        let (train, pool) = split_samples(&data(20), 80, 1).unwrap();
        let exp = InverseExperiment {
            dataset: train,
            pool,
            noise_level: 0.0,
            lambda_init: LambdaVector::default(),
            shape: NetworkShape::new(2, 8, 4).unwrap(),
            adam: AdamConfig { iterations: 30, learning_rate: 1e-2, ..Default::default() },
            refit_iterations: 5,
            lbfgs: LbfgsConfig { max_iters: 10, ..Default::default() },
            rar: Some(RARConfig { m: 5, epsilon0: 1e-12, max_rounds: 2, candidate_pool: 100 }),
            seeds: Seeds::from_master(2),
        };
        let truth = LambdaVector::new(1.0, 2.0, 1.0, 2.0);
        let r = train_inverse(&exp, &truth).unwrap();
        assert_eq!(r.n_u, 90);
        assert_eq!(r.history.points_added(), 10);
        assert_eq!(r.errors, identification_error(&r.lambda_hat, &truth));
        assert!((r.loss.total - r.loss.mse_p - r.loss.mse_f).abs() < 1e-15);
        assert!(r.lambda_hat != LambdaVector::default());
        assert_eq!(train_inverse(&exp, &truth).unwrap(), r);
    }
}
