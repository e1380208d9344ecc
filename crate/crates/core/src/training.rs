//! Loss assembly over the initial, boundary and collocation sets, and the
//! forward training driver (Adam, optional residual-based refinement, L-BFGS).

use std::cell::Cell;
use std::rc::Rc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{init_params, JetBatch, JetEvaluator, NetworkShape, ParameterVector, Point, DX, VAL};
use crate::optim::{adam_minimize, lbfgs_minimize, AdamConfig, LbfgsConfig, LbfgsStatus, Objective};
use crate::oracle::{FieldSample, GridSpec};
use crate::physics::{CGNLSCoefficients, ResidualMode, ResidualVector};
use crate::sampling::{lhs_sample, top_m_indices, Domain, RARConfig};

/// Number of network outputs: (u1, v1, u2, v2).
pub const FIELDS: usize = 4;

/// Points per batch when scoring large point sets.
const SCORE_CHUNK: usize = 4096;

/// A point with known field values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Supervised {
    pub point: Point,
    pub values: [f64; FIELDS],
}

impl From<&FieldSample> for Supervised {
    fn from(s: &FieldSample) -> Self {
        Self { point: s.point, values: s.values() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryData {
    /// No boundary term.
    Absent,
    /// Times t at which (x_lo, t) and (x_hi, t) must agree in value and ∂x.
    Periodic(Vec<f64>),
    /// Known values at boundary points.
    Supervised(Vec<Supervised>),
}

impl BoundaryData {
    pub fn len(&self) -> usize {
        match self {
            BoundaryData::Absent => 0,
            BoundaryData::Periodic(t) => t.len(),
            BoundaryData::Supervised(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    Periodic,
    Supervised,
}

impl BoundaryMode {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryMode::Periodic => "periodic",
            BoundaryMode::Supervised => "supervised",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "periodic" => Some(BoundaryMode::Periodic),
            "supervised" => Some(BoundaryMode::Supervised),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataSets {
    pub domain: Domain,
    /// Initial-time supervision; `None` drops the term.
    pub tau0: Option<Vec<Supervised>>,
    pub taub: BoundaryData,
    pub tauf: Vec<Point>,
}

fn on(v: f64, target: f64) -> bool {
    (v - target).abs() <= 1e-12 * (1.0 + target.abs())
}

impl TrainingDataSets {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.tauf.is_empty() {
            return Err(Error::Usage("no collocation points".into()));
        }
        if let Some(tau0) = &self.tau0 {
            if tau0.is_empty() {
                return Err(Error::Usage("initial set is empty (declare it absent instead)".into()));
            }
            if let Some(s) = tau0.iter().find(|s| !on(s.point.t, self.domain.t_lo)) {
                return Err(Error::Usage(format!(
                    "initial point at t = {} is not at t = {}",
                    s.point.t, self.domain.t_lo
                )));
            }
        }
        let on_edge = |x: f64| on(x, self.domain.x_lo) || on(x, self.domain.x_hi);
        match &self.taub {
            BoundaryData::Absent => {}
            BoundaryData::Periodic(t) if t.is_empty() => {
                return Err(Error::Usage("periodic boundary set is empty (declare it absent instead)".into()));
            }
            BoundaryData::Supervised(s) if s.is_empty() => {
                return Err(Error::Usage("boundary set is empty (declare it absent instead)".into()));
            }
            BoundaryData::Supervised(s) => {
                if let Some(b) = s.iter().find(|b| !on_edge(b.point.x)) {
                    return Err(Error::Usage(format!("boundary point at x = {} is off the boundary", b.point.x)));
                }
            }
            BoundaryData::Periodic(_) => {}
        }
        Ok(())
    }

    pub fn n0(&self) -> usize {
        self.tau0.as_ref().map_or(0, Vec::len)
    }

    pub fn nb(&self) -> usize {
        self.taub.len()
    }

    pub fn nf(&self) -> usize {
        self.tauf.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub loss0: f64,
    pub lossb: f64,
    pub lossf: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(loss0: f64, lossb: f64, lossf: f64) -> Self {
        Self { loss0, lossb, lossf, total: loss0 + lossb + lossf }
    }
}

/// Point sets laid out for one batched jet evaluation, with the loss terms
/// addressing rows of that batch.
#[derive(Debug, Clone)]
pub struct LossEngine {
    eval: JetEvaluator,
    points: Vec<Point>,
    initial: Vec<(usize, [f64; FIELDS])>,
    boundary: Vec<(usize, [f64; FIELDS])>,
    pairs: Vec<(usize, usize)>,
    colloc: Vec<usize>,
    adjoint: Vec<f64>,
}

fn check_fields(shape: &NetworkShape) -> Result<()> {
    if shape.output_dim != FIELDS {
        return Err(Error::Config(format!(
            "the two-component system needs {FIELDS} network outputs, got {}",
            shape.output_dim
        )));
    }
    Ok(())
}

impl LossEngine {
    fn empty(shape: NetworkShape) -> Result<Self> {
        check_fields(&shape)?;
        Ok(Self {
            eval: JetEvaluator::new(shape)?,
            points: Vec::new(),
            initial: Vec::new(),
            boundary: Vec::new(),
            pairs: Vec::new(),
            colloc: Vec::new(),
            adjoint: Vec::new(),
        })
    }

    fn push(&mut self, p: Point) -> usize {
        self.points.push(p);
        self.points.len() - 1
    }

    /// Initial, boundary and collocation terms of the forward problem.
    pub fn from_datasets(shape: NetworkShape, data: &TrainingDataSets) -> Result<Self> {
        data.validate()?;
        let mut e = Self::empty(shape)?;
        for s in data.tau0.iter().flatten() {
            let i = e.push(s.point);
            e.initial.push((i, s.values));
        }
        match &data.taub {
            BoundaryData::Absent => {}
            BoundaryData::Periodic(times) => {
                for &t in times {
                    let lo = e.push(Point::new(data.domain.x_lo, t));
                    let hi = e.push(Point::new(data.domain.x_hi, t));
                    e.pairs.push((lo, hi));
                }
            }
            BoundaryData::Supervised(s) => {
                for b in s {
                    let i = e.push(b.point);
                    e.boundary.push((i, b.values));
                }
            }
        }
        e.add_collocation(&data.tauf);
        Ok(e)
    }

    /// Data misfit and residual at the same sample locations (the
    /// identification loss); `loss0` carries the misfit.
    pub fn from_samples(shape: NetworkShape, samples: &[Supervised]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Usage("no data samples".into()));
        }
        let mut e = Self::empty(shape)?;
        e.add_samples(samples);
        Ok(e)
    }

    pub fn add_collocation(&mut self, pts: &[Point]) {
        for &p in pts {
            let i = self.push(p);
            self.colloc.push(i);
        }
    }

    pub fn add_samples(&mut self, samples: &[Supervised]) {
        for s in samples {
            let i = self.push(s.point);
            self.initial.push((i, s.values));
            self.colloc.push(i);
        }
    }

    pub fn shape(&self) -> &NetworkShape {
        self.eval.shape()
    }

    pub fn collocation_count(&self) -> usize {
        self.colloc.len()
    }

    /// Loss at `params` (network parameters only). With `grad`, also
    /// accumulates d(total)/d(params) into the first slice and d(total)/dλ into
    /// the second.
    pub fn evaluate(
        &mut self,
        params: &[f64],
        mode: &ResidualMode,
        grad: Option<(&mut [f64], &mut [f64; 4])>,
    ) -> Result<LossBreakdown> {
        let want_grad = grad.is_some();
        let batch: &JetBatch = self.eval.forward(params, &self.points)?;
        let adj = &mut self.adjoint;
        if want_grad {
            adj.clear();
            adj.resize(batch.data.len(), 0.0);
        }
        let mut dlambda = [0.0; 4];

        let supervised = |set: &[(usize, [f64; FIELDS])], adj: &mut Vec<f64>| {
            if set.is_empty() {
                return 0.0;
            }
            let w = 1.0 / set.len() as f64;
            let mut sum = 0.0;
            for &(i, target) in set {
                for (o, &y) in target.iter().enumerate() {
                    let d = batch.get(VAL, i, o) - y;
                    sum += d * d;
                    if want_grad {
                        adj[batch.index(VAL, i, o)] += 2.0 * w * d;
                    }
                }
            }
            w * sum
        };
        let loss0 = supervised(&self.initial, adj);
        let mut lossb = supervised(&self.boundary, adj);

        if !self.pairs.is_empty() {
            let w = 1.0 / self.pairs.len() as f64;
            let mut sum = 0.0;
            for &(lo, hi) in &self.pairs {
                for block in [VAL, DX] {
                    for o in 0..FIELDS {
                        let d = batch.get(block, lo, o) - batch.get(block, hi, o);
                        sum += d * d;
                        if want_grad {
                            adj[batch.index(block, lo, o)] += 2.0 * w * d;
                            adj[batch.index(block, hi, o)] -= 2.0 * w * d;
                        }
                    }
                }
            }
            lossb += w * sum;
        }

        let mut lossf = 0.0;
        if !self.colloc.is_empty() {
            let w = 1.0 / self.colloc.len() as f64;
            let mut sum = 0.0;
            for &i in &self.colloc {
                let jets = [batch.jet(i, 0), batch.jet(i, 1), batch.jet(i, 2), batch.jet(i, 3)];
                let f = mode.residual(&jets).as_array();
                sum += f.iter().map(|v| v * v).sum::<f64>();
                if want_grad {
                    let df = f.map(|v| 2.0 * w * v);
                    let (dj, dl) = mode.residual_adjoint(&jets, df);
                    for (o, j) in dj.iter().enumerate() {
                        adj[batch.index(VAL, i, o)] += j.value;
                        adj[batch.index(crate::net::DT, i, o)] += j.d_t;
                        adj[batch.index(DX, i, o)] += j.d_x;
                        adj[batch.index(crate::net::DXX, i, o)] += j.d_xx;
                    }
                    for (a, b) in dlambda.iter_mut().zip(dl) {
                        *a += b;
                    }
                }
            }
            lossf = w * sum;
        }

        let loss = LossBreakdown::new(loss0, lossb, lossf);
        if let Some((g, gl)) = grad {
            self.eval.backward(params, &self.adjoint, g);
            for (a, b) in gl.iter_mut().zip(dlambda) {
                *a += b;
            }
        }
        Ok(loss)
    }
}

pub fn compute_loss(
    params: &ParameterVector,
    shape: &NetworkShape,
    data: &TrainingDataSets,
    mode: &ResidualMode,
) -> Result<LossBreakdown> {
    LossEngine::from_datasets(*shape, data)?.evaluate(&params.values, mode, None)
}

/// Residual vectors of the network at each point.
pub fn residuals_at(
    params: &[f64],
    shape: &NetworkShape,
    mode: &ResidualMode,
    points: &[Point],
) -> Result<Vec<ResidualVector>> {
    check_fields(shape)?;
    let mut eval = JetEvaluator::new(*shape)?;
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(SCORE_CHUNK) {
        let batch = eval.forward(params, chunk)?;
        for i in 0..chunk.len() {
            let jets = [batch.jet(i, 0), batch.jet(i, 1), batch.jet(i, 2), batch.jet(i, 3)];
            out.push(mode.residual(&jets));
        }
    }
    Ok(out)
}

/// Residual scores |f1u|+|f1v|+|f2u|+|f2v| at every node of `grid`, in grid
/// order (t outer, x inner).
pub fn export_residual_field(
    params: &ParameterVector,
    shape: &NetworkShape,
    mode: &ResidualMode,
    grid: &GridSpec,
) -> Result<Vec<(Point, f64)>> {
    grid.validate()?;
    let pts = grid.points();
    let res = residuals_at(&params.values, shape, mode, &pts)?;
    Ok(pts.into_iter().zip(res.iter().map(ResidualVector::score)).collect())
}

/// [`LossEngine`] over the network parameters with fixed coefficients.
pub struct ForwardObjective {
    pub engine: LossEngine,
    pub coeffs: CGNLSCoefficients,
    last: Rc<Cell<LossBreakdown>>,
    scratch: [f64; 4],
}

impl ForwardObjective {
    pub fn new(engine: LossEngine, coeffs: CGNLSCoefficients) -> Self {
        Self { engine, coeffs, last: Rc::default(), scratch: [0.0; 4] }
    }

    /// Breakdown of the most recent evaluation.
    pub fn last(&self) -> Rc<Cell<LossBreakdown>> {
        Rc::clone(&self.last)
    }
}

impl Objective for ForwardObjective {
    fn dim(&self) -> usize {
        self.engine.shape().param_count()
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        grad.fill(0.0);
        let loss = self.engine.evaluate(x, &ResidualMode::Forward(self.coeffs), Some((grad, &mut self.scratch)))?;
        self.last.set(loss);
        Ok(loss.total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Adam,
    /// Adam re-fit after refinement round r (1-based).
    Refit(usize),
    Lbfgs,
}

impl Phase {
    pub fn name(&self) -> String {
        match self {
            Phase::Adam => "adam".into(),
            Phase::Refit(r) => format!("refit{r}"),
            Phase::Lbfgs => "lbfgs".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub phase: Phase,
    pub iteration: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RarEvent {
    pub round: usize,
    /// Mean residual over the round's candidate pool.
    pub err: f64,
    pub added: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub records: Vec<LossRecord>,
    pub rar_events: Vec<RarEvent>,
    pub warnings: Vec<String>,
}

impl TrainingHistory {
    pub fn points_added(&self) -> usize {
        self.rar_events.iter().map(|e| e.added.len()).sum()
    }
}

/// Runs Adam on `x` in place, appending per-iteration records.
pub(crate) fn run_adam<O: Objective>(
    obj: &mut O,
    last: Rc<Cell<LossBreakdown>>,
    x: &mut [f64],
    cfg: &AdamConfig,
    phase: Phase,
    history: &mut TrainingHistory,
) -> Result<()> {
    let records = &mut history.records;
    adam_minimize(obj, x, cfg, |it, _| records.push(LossRecord { phase, iteration: it, loss: last.get() }))?;
    Ok(())
}

pub(crate) fn run_lbfgs<O: Objective>(
    obj: &mut O,
    last: Rc<Cell<LossBreakdown>>,
    x: &mut [f64],
    cfg: &LbfgsConfig,
    history: &mut TrainingHistory,
) -> Result<LbfgsStatus> {
    let records = &mut history.records;
    let r = lbfgs_minimize(obj, x, cfg, |it, _| {
        records.push(LossRecord { phase: Phase::Lbfgs, iteration: it, loss: last.get() })
    })?;
    if r.status == LbfgsStatus::LineSearchFailed {
        history
            .warnings
            .push(format!("L-BFGS line search failed after {} iterations; keeping best iterate", r.report.iterations));
    }
    Ok(r.status)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleCounts {
    pub n0: usize,
    pub nb: usize,
    pub nf: usize,
}

/// Independent random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub collocation: u64,
    pub pool: u64,
    pub noise: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        let k = |i: u64| seed.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Self { init: k(0), data: k(1), collocation: k(2), pool: k(3), noise: k(4) }
    }

    /// Pool seed of refinement round `r` (1-based).
    pub fn pool_round(&self, r: usize) -> u64 {
        self.pool.wrapping_add((r as u64 - 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
    }
}

/// Draws initial and boundary sets from the nodes of a sampled grid
/// (`samples` in grid order) and collocation points by LHS.
pub fn build_datasets(
    grid: &GridSpec,
    samples: &[FieldSample],
    counts: SampleCounts,
    boundary: BoundaryMode,
    seeds: &Seeds,
) -> Result<TrainingDataSets> {
    grid.validate()?;
    if samples.len() != grid.len() {
        return Err(Error::Usage(format!("grid has {} nodes but {} samples were given", grid.len(), samples.len())));
    }
    let domain = Domain::new(grid.x_min, grid.x_max, grid.t_min, grid.t_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.data);
    let node = |i: usize, j: usize| Supervised::from(&samples[j * grid.nx + i]);

    let tau0 = if counts.n0 == 0 {
        None
    } else {
        if counts.n0 > grid.nx {
            return Err(Error::Config(format!("N0 = {} exceeds the {} initial-time nodes", counts.n0, grid.nx)));
        }
        Some(sample(&mut rng, grid.nx, counts.n0).into_iter().map(|i| node(i, 0)).collect())
    };

    let taub = if counts.nb == 0 {
        BoundaryData::Absent
    } else {
        match boundary {
            BoundaryMode::Periodic => {
                if counts.nb > grid.nt {
                    return Err(Error::Config(format!("Nb = {} exceeds the {} boundary times", counts.nb, grid.nt)));
                }
                BoundaryData::Periodic(sample(&mut rng, grid.nt, counts.nb).into_iter().map(|j| grid.t(j)).collect())
            }
            BoundaryMode::Supervised => {
                if counts.nb > 2 * grid.nt {
                    return Err(Error::Config(format!(
                        "Nb = {} exceeds the {} boundary nodes",
                        counts.nb,
                        2 * grid.nt
                    )));
                }
                BoundaryData::Supervised(
                    sample(&mut rng, 2 * grid.nt, counts.nb)
                        .into_iter()
                        .map(|k| node(if k % 2 == 0 { 0 } else { grid.nx - 1 }, k / 2))
                        .collect(),
                )
            }
        }
    };

    let tauf = lhs_sample(&domain, counts.nf, seeds.collocation)?;
    Ok(TrainingDataSets { domain, tau0, taub, tauf })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardConfig {
    pub shape: NetworkShape,
    pub coeffs: CGNLSCoefficients,
    pub counts: SampleCounts,
    pub boundary: BoundaryMode,
    pub rar: RARConfig,
    /// Fixed collocation set of size nf + m * max_rounds, no refinement.
    pub tpinn: bool,
    pub adam: AdamConfig,
    pub refit_iterations: usize,
    pub lbfgs: LbfgsConfig,
    pub seeds: Seeds,
}

impl ForwardConfig {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        check_fields(&self.shape)?;
        self.coeffs.validate()?;
        self.rar.validate()?;
        self.adam.validate()?;
        self.lbfgs.validate()?;
        if self.counts.nf == 0 {
            return Err(Error::Config("Nf must be at least 1".into()));
        }
        Ok(())
    }
}

/// Largest candidate-pool residual score at three stages of training.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualMaxima {
    /// After the main Adam phase.
    pub before_refinement: f64,
    /// After the last refinement re-fit.
    pub after_refinement: f64,
    /// After L-BFGS.
    pub final_: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutcome {
    pub params: ParameterVector,
    pub data: TrainingDataSets,
    pub history: TrainingHistory,
    pub lbfgs_status: Option<LbfgsStatus>,
    pub residual_max: ResidualMaxima,
    /// Set when a phase hit a non-finite loss; `params` are then the last
    /// finite iterate before that phase.
    pub failure: Option<Error>,
}

fn max_score(params: &[f64], shape: &NetworkShape, mode: &ResidualMode, pool: &[Point]) -> Result<f64> {
    Ok(residuals_at(params, shape, mode, pool)?.iter().map(ResidualVector::score).fold(0.0, f64::max))
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::NonFiniteLoss { .. } | Error::NonFiniteLayer { .. })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    shape: &NetworkShape,
    params: Vec<f64>,
    data: TrainingDataSets,
    history: TrainingHistory,
    lbfgs_status: Option<LbfgsStatus>,
    residual_max: ResidualMaxima,
    failure: Option<Error>,
) -> Result<ForwardOutcome> {
    Ok(ForwardOutcome {
        params: ParameterVector::from_values(shape, params)?,
        data,
        history,
        lbfgs_status,
        residual_max,
        failure,
    })
}

/// Full forward pipeline on a sampled reference grid.
pub fn train_forward(config: &ForwardConfig, grid: &GridSpec, samples: &[FieldSample]) -> Result<ForwardOutcome> {
    config.validate()?;
    let mut counts = config.counts;
    if config.tpinn {
        counts.nf += config.rar.budget();
    }
    let mut data = build_datasets(grid, samples, counts, config.boundary, &config.seeds)?;
    let shape = config.shape;
    let mode = ResidualMode::Forward(config.coeffs);
    let mut params = init_params(&shape, config.seeds.init)?;
    let mut obj = ForwardObjective::new(LossEngine::from_datasets(shape, &data)?, config.coeffs);
    let last = obj.last();
    let mut history = TrainingHistory::default();
    let mut maxima = ResidualMaxima::default();
    let pool0 = lhs_sample(&data.domain, config.rar.candidate_pool, config.seeds.pool_round(1))?;

    let mut trial = params.values.clone();
    if let Err(e) = run_adam(&mut obj, last.clone(), &mut trial, &config.adam, Phase::Adam, &mut history) {
        if is_numeric_failure(&e) {
            return finish(&shape, params.values, data, history, None, maxima, Some(e));
        }
        return Err(e);
    }
    params.values.copy_from_slice(&trial);
    maxima.before_refinement = max_score(&params.values, &shape, &mode, &pool0)?;

    if !config.tpinn {
        let rar = &config.rar;
        let mut round = 0;
        loop {
            let pool = if round == 0 {
                pool0.clone()
            } else {
                lhs_sample(&data.domain, rar.candidate_pool, config.seeds.pool_round(round + 1))?
            };
            let scores: Vec<f64> =
                residuals_at(&params.values, &shape, &mode, &pool)?.iter().map(ResidualVector::score).collect();
            let err = scores.iter().sum::<f64>() / scores.len() as f64;
            if err < rar.epsilon0 || round == rar.max_rounds {
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
            let added: Vec<Point> = top_m_indices(&scores, rar.m)?.into_iter().map(|i| pool[i]).collect();
            data.tauf.extend_from_slice(&added);
            obj.engine.add_collocation(&added);
            history.rar_events.push(RarEvent { round, err, added });

            let refit = AdamConfig { iterations: config.refit_iterations, ..config.adam };
            let mut trial = params.values.clone();
            if let Err(e) = run_adam(&mut obj, last.clone(), &mut trial, &refit, Phase::Refit(round), &mut history) {
                if is_numeric_failure(&e) {
                    return finish(&shape, params.values, data, history, None, maxima, Some(e));
                }
                return Err(e);
            }
            params.values.copy_from_slice(&trial);
        }
    }
    maxima.after_refinement = max_score(&params.values, &shape, &mode, &pool0)?;

    let mut trial = params.values.clone();
    let status = match run_lbfgs(&mut obj, last.clone(), &mut trial, &config.lbfgs, &mut history) {
        Ok(s) => s,
        Err(e) if is_numeric_failure(&e) => {
            return finish(&shape, params.values, data, history, None, maxima, Some(e));
        }
        Err(e) => return Err(e),
    };
    params.values.copy_from_slice(&trial);
    maxima.final_ = max_score(&params.values, &shape, &mode, &pool0)?;
    finish(&shape, params.values, data, history, Some(status), maxima, None)
}
