//! Antithetic natural evolution strategies.
//!
//! Each iteration draws `N` standard-normal directions `ε_i`, evaluates the
//! objective at `θ ± σ·ε_i`, and forms
//!
//! ```text
//! ĝ = 1/(N·σ) · Σ_i [J(θ + σε_i) − J(θ − σε_i)] · ε_i
//! ```
//!
//! followed by `θ ← clip(θ − α·ĝ)`. For a smooth objective `E[ĝ] = 2∇J`; the
//! factor of two is left in place and absorbed by `α`.
//!
//! Directions come from streams keyed by `(seed, iteration, direction)` and
//! the sum runs in direction order, so results are bit-identical for any
//! `parallelism`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::error::{Error, Result};
use crate::patch::Patch;
use crate::rng::{tags, RngStream};

/// Minimum improvement that resets the plateau counter.
pub const PLATEAU_TOLERANCE: f64 = 1e-4;

/// A point in parameter space plus its feasibility projection.
pub trait SearchPoint: Clone + Send + Sync {
    fn values(&self) -> &[f64];
    /// Same shape with new values, projected onto the feasible set.
    fn with_values(&self, values: Vec<f64>) -> Self;
}

impl SearchPoint for Patch {
    fn values(&self) -> &[f64] {
        Patch::values(self)
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Patch::with_values(self, values)
    }
}

/// Plain unconstrained vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Unbounded(pub Vec<f64>);

impl SearchPoint for Unbounded {
    fn values(&self) -> &[f64] {
        &self.0
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Unbounded(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalIndex {
    pub iteration: usize,
    pub direction: usize,
    pub side: Side,
}

/// Loss to minimize. Called concurrently from the evaluation pool.
pub trait Objective<P>: Sync {
    fn evaluate(&self, point: &P, at: EvalIndex) -> Result<f64>;

    /// Model queries issued per evaluation (for budget accounting).
    fn queries_per_eval(&self) -> u64 {
        1
    }
}

/// Adapts a closure over raw values.
pub struct FnObjective<F>(pub F);

impl<P: SearchPoint, F: Fn(&[f64]) -> f64 + Sync> Objective<P> for FnObjective<F> {
    fn evaluate(&self, point: &P, _at: EvalIndex) -> Result<f64> {
        Ok((self.0)(point.values()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NesConfig {
    #[serde(default = "defaults::population_n")]
    pub population_n: usize,
    #[serde(default = "defaults::sigma")]
    pub sigma: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub early_stop_loss: Option<f64>,
    #[serde(default)]
    pub plateau_window: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::parallelism")]
    pub parallelism: usize,
    /// 0 disables periodic checkpoints.
    #[serde(default = "defaults::checkpoint_every")]
    pub checkpoint_every: usize,
}

mod defaults {
    pub fn population_n() -> usize {
        20
    }
    pub fn sigma() -> f64 {
        0.1
    }
    pub fn alpha() -> f64 {
        0.02
    }
    pub fn iterations() -> usize {
        150
    }
    pub fn parallelism() -> usize {
        1
    }
    pub fn checkpoint_every() -> usize {
        25
    }
}

impl Default for NesConfig {
    fn default() -> Self {
        Self {
            population_n: defaults::population_n(),
            sigma: defaults::sigma(),
            alpha: defaults::alpha(),
            iterations: defaults::iterations(),
            early_stop_loss: None,
            plateau_window: None,
            seed: 0,
            parallelism: defaults::parallelism(),
            checkpoint_every: defaults::checkpoint_every(),
        }
    }
}

impl NesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_n == 0 {
            return Err(Error::config("nes.population_n", "must be >= 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("nes.sigma", "must be > 0"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("nes.alpha", "must be > 0"));
        }
        if self.iterations == 0 {
            return Err(Error::config("nes.iterations", "must be >= 1"));
        }
        if self.parallelism == 0 {
            return Err(Error::config("nes.parallelism", "must be >= 1"));
        }
        if self.plateau_window == Some(0) {
            return Err(Error::config("nes.plateau_window", "must be >= 1 when set"));
        }
        Ok(())
    }
}

/// Standard-normal direction for `(iteration, direction)` under `seed`.
pub fn draw_direction(seed: u64, iteration: usize, direction: usize, dim: usize) -> Vec<f64> {
    let mut rng = RngStream::new(seed, 0)
        .derive(&[tags::NES_DIRECTION, iteration as u64, direction as u64])
        .rng();
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    /// `(J(θ+σε_i), J(θ−σε_i))` per direction.
    pub losses: Vec<(f64, f64)>,
}

impl GradientEstimate {
    pub fn mean_loss(&self) -> f64 {
        let sum: f64 = self.losses.iter().map(|(p, m)| p + m).sum();
        sum / (2 * self.losses.len()) as f64
    }
}

fn offset<P: SearchPoint>(theta: &P, eps: &[f64], scale: f64) -> P {
    theta.with_values(theta.values().iter().zip(eps).map(|(t, e)| t + scale * e).collect())
}

fn evaluate_pair<P: SearchPoint, O: Objective<P> + ?Sized>(
    theta: &P,
    eps: &[f64],
    sigma: f64,
    objective: &O,
    iteration: usize,
    direction: usize,
) -> Result<(f64, f64)> {
    let plus = objective.evaluate(
        &offset(theta, eps, sigma),
        EvalIndex { iteration, direction, side: Side::Plus },
    )?;
    let minus = objective.evaluate(
        &offset(theta, eps, -sigma),
        EvalIndex { iteration, direction, side: Side::Minus },
    )?;
    Ok((plus, minus))
}

fn combine(dim: usize, directions: &[Vec<f64>], losses: &[(f64, f64)], sigma: f64) -> Vec<f64> {
    let mut grad = vec![0.0; dim];
    for (eps, (plus, minus)) in directions.iter().zip(losses) {
        let diff = plus - minus;
        if diff == 0.0 {
            continue;
        }
        grad.iter_mut().zip(eps).for_each(|(g, e)| *g += diff * e);
    }
    let scale = 1.0 / (directions.len() as f64 * sigma);
    grad.iter_mut().for_each(|g| *g *= scale);
    grad
}

/// Estimate from caller-supplied directions.
pub fn estimate_from_directions<P: SearchPoint, O: Objective<P> + ?Sized>(
    theta: &P,
    directions: &[Vec<f64>],
    sigma: f64,
    objective: &O,
    iteration: usize,
) -> Result<GradientEstimate> {
    if directions.is_empty() {
        return Err(Error::InvalidArgument("need at least one direction".into()));
    }
    let dim = theta.values().len();
    let mut losses = Vec::with_capacity(directions.len());
    for (i, eps) in directions.iter().enumerate() {
        if eps.len() != dim {
            return Err(Error::InvalidArgument(format!("direction {i} has length {}, expected {dim}", eps.len())));
        }
        losses.push(evaluate_pair(theta, eps, sigma, objective, iteration, i)?);
    }
    Ok(GradientEstimate { gradient: combine(dim, directions, &losses, sigma), losses })
}

/// Snapshot of an optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<P> {
    pub theta: P,
    /// Iterations completed so far.
    pub iteration: usize,
    pub best_loss: f64,
    pub best_theta: P,
    pub best_iteration: Option<usize>,
    /// Mean candidate loss around `θ_t`, one entry per completed iteration.
    pub loss_history: Vec<f64>,
    pub candidate_evals: u64,
    pub oracle_queries: u64,
}

impl<P: SearchPoint> OptState<P> {
    pub fn new(initial: P) -> Self {
        Self {
            best_theta: initial.clone(),
            theta: initial,
            iteration: 0,
            best_loss: f64::INFINITY,
            best_iteration: None,
            loss_history: Vec::new(),
            candidate_evals: 0,
            oracle_queries: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptStatus {
    Completed,
    EarlyStopped { reason: String },
    Interrupted,
    Aborted { error: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult<P> {
    pub state: OptState<P>,
    pub status: OptStatus,
}

/// Receives progress and periodic checkpoints from [`Nes::optimize`].
pub trait CheckpointSink<P> {
    fn on_iteration(&mut self, _state: &OptState<P>) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _state: &OptState<P>) -> Result<()> {
        Ok(())
    }

    /// Polled before each iteration; `true` stops the run after a checkpoint.
    fn interrupted(&self) -> bool {
        false
    }
}

pub struct NullSink;

impl<P> CheckpointSink<P> for NullSink {}

/// Optimizer bound to a config and an evaluation pool of `cfg.parallelism` threads.
pub struct Nes {
    cfg: NesConfig,
    pool: ThreadPool,
}

impl Nes {
    pub fn new(cfg: NesConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallelism)
            .thread_name(|i| format!("nes-eval-{i}"))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build evaluation pool: {e}")))?;
        Ok(Self { cfg, pool })
    }

    pub fn config(&self) -> &NesConfig {
        &self.cfg
    }

    /// Draws this iteration's directions and returns the antithetic estimate.
    /// On objective failure the first error in direction order is returned.
    pub fn estimate_gradient<P: SearchPoint, O: Objective<P> + ?Sized>(
        &self,
        theta: &P,
        objective: &O,
        iteration: usize,
    ) -> Result<GradientEstimate> {
        let dim = theta.values().len();
        let (sigma, seed) = (self.cfg.sigma, self.cfg.seed);
        let evaluated: Vec<Result<(Vec<f64>, (f64, f64))>> = self.pool.install(|| {
            (0..self.cfg.population_n)
                .into_par_iter()
                .map(|i| {
                    let eps = draw_direction(seed, iteration, i, dim);
                    let pair = evaluate_pair(theta, &eps, sigma, objective, iteration, i)?;
                    Ok((eps, pair))
                })
                .collect()
        });
        let mut directions = Vec::with_capacity(evaluated.len());
        let mut losses = Vec::with_capacity(evaluated.len());
        for r in evaluated {
            let (eps, pair) = r?;
            directions.push(eps);
            losses.push(pair);
        }
        Ok(GradientEstimate { gradient: combine(dim, &directions, &losses, sigma), losses })
    }

    /// One update `θ ← clip(θ − α·ĝ)`. `best_*` tracks the `θ_t` whose
    /// candidates had the lowest mean loss.
    pub fn step<P: SearchPoint, O: Objective<P> + ?Sized>(&self, state: &OptState<P>, objective: &O) -> Result<OptState<P>> {
        let est = self.estimate_gradient(&state.theta, objective, state.iteration)?;
        let mean_loss = est.mean_loss();
        let mut next = state.clone();
        if mean_loss < next.best_loss {
            next.best_loss = mean_loss;
            next.best_theta = state.theta.clone();
            next.best_iteration = Some(state.iteration);
        }
        let alpha = self.cfg.alpha;
        next.theta = state
            .theta
            .with_values(state.theta.values().iter().zip(&est.gradient).map(|(t, g)| t - alpha * g).collect());
        next.loss_history.push(mean_loss);
        next.iteration += 1;
        let evals = 2 * self.cfg.population_n as u64;
        next.candidate_evals += evals;
        next.oracle_queries += evals * objective.queries_per_eval();
        Ok(next)
    }

    pub fn optimize<P: SearchPoint, O: Objective<P> + ?Sized>(
        &self,
        initial: P,
        objective: &O,
        sink: &mut dyn CheckpointSink<P>,
    ) -> Result<OptResult<P>> {
        let mut state = OptState::new(initial);
        let mut status = OptStatus::Completed;
        while state.iteration < self.cfg.iterations {
            if sink.interrupted() {
                warn!(iteration = state.iteration, "interrupted; writing checkpoint");
                sink.checkpoint(&state)?;
                status = OptStatus::Interrupted;
                break;
            }
            state = match self.step(&state, objective) {
                Ok(next) => next,
                Err(e) => {
                    warn!(iteration = state.iteration, error = %e, "aborting optimization");
                    sink.checkpoint(&state)?;
                    status = OptStatus::Aborted { error: e.to_string() };
                    break;
                }
            };
            sink.on_iteration(&state)?;
            debug!(iteration = state.iteration, loss = state.loss_history.last(), best = state.best_loss, "nes step");
            if self.cfg.checkpoint_every > 0 && state.iteration.is_multiple_of(self.cfg.checkpoint_every) {
                sink.checkpoint(&state)?;
            }
            if let Some(reason) = self.stop_reason(&state) {
                info!(iteration = state.iteration, %reason, "early stop");
                status = OptStatus::EarlyStopped { reason };
                break;
            }
        }
        Ok(OptResult { state, status })
    }

    fn stop_reason<P>(&self, state: &OptState<P>) -> Option<String> {
        if let Some(threshold) = self.cfg.early_stop_loss {
            if state.best_loss <= threshold {
                return Some(format!("best loss {} <= {threshold}", state.best_loss));
            }
        }
        let window = self.cfg.plateau_window?;
        let h = &state.loss_history;
        if h.len() <= window {
            return None;
        }
        let (before, recent) = h.split_at(h.len() - window);
        let best_before = before.iter().copied().fold(f64::INFINITY, f64::min);
        let best_recent = recent.iter().copied().fold(f64::INFINITY, f64::min);
        (best_before - best_recent <= PLATEAU_TOLERANCE)
            .then(|| format!("no improvement > {PLATEAU_TOLERANCE} in {window} iterations"))
    }
}
