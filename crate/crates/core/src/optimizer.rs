//! Full-batch Adam training over the flat parameter vector, with optional
//! learning-rate sweeps.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DistanceMatrix;
use crate::losses::{distance_table, Objective};
use crate::metrics::{distortion_from_table, mean_ap, per_node_ap};
use crate::spaces::{Model, ParamLayout, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// When set, one run per rate; the best final metric wins.
    pub lr_sweep: Option<Vec<f64>>,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 0.1,
            lr_sweep: None,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn rates(&self) -> Vec<f64> {
        self.lr_sweep
            .clone()
            .unwrap_or_else(|| vec![self.learning_rate])
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        let rates = self.rates();
        if rates.is_empty() {
            return Err(Error::Config("empty learning-rate sweep".into()));
        }
        if let Some(r) = rates.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("learning rate must be positive, got {r}")));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!(
                "init scale must be non-negative, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }
}

/// `n x d` matrix (row-major) with entries uniform in `[-scale, scale]`.
pub fn init_embedding(n: usize, d: usize, seed: u64, scale: f64) -> Vec<f64> {
    if scale == 0.0 {
        return vec![0.0; n * d];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * d).map(|_| rng.gen_range(-scale..=scale)).collect()
}

/// Seeded embedding plus the model's initial scalars.
pub fn initial_params(model: &Model, n: usize, cfg: &TrainConfig) -> Params {
    let layout = ParamLayout::for_model(model, n);
    let emb = init_embedding(n, layout.dim, cfg.seed, cfg.init_scale);
    Params::new(layout, emb, model.initial_scalars()).expect("layout matches model")
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.first_moment.len() != params.len() {
        return Err(Error::LengthMismatch {
            left: grads.len(),
            right: params.len(),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        let m = b1 * state.first_moment[k] + (1.0 - b1) * g;
        let v = b2 * state.second_moment[k] + (1.0 - b2) * g * g;
        state.first_moment[k] = m;
        state.second_moment[k] = v;
        params[k] -= lr * (m / c1) / ((v / c2).sqrt() + cfg.adam_eps);
    }
    Ok(())
}

fn check_gradient(grad: &[f64], layout: ParamLayout, iteration: usize) -> Result<()> {
    if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
        let max_abs = grad
            .iter()
            .filter(|g| g.is_finite())
            .fold(0.0f64, |a, g| a.max(g.abs()));
        return Err(Error::NonFiniteGradient {
            iteration,
            block: layout.block_name(bad),
            max_abs,
        });
    }
    Ok(())
}

/// A single-rate training run that can be stepped, inspected and resumed.
pub struct Trainer<'a> {
    model: &'a Model,
    objective: Objective<'a>,
    cfg: TrainConfig,
    lr: f64,
    params: Params,
    adam: AdamState,
    iteration: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a Model,
        objective: Objective<'a>,
        params: Params,
        cfg: &TrainConfig,
        lr: f64,
    ) -> Self {
        let len = params.values().len();
        Self::resume(model, objective, params, AdamState::new(len), 0, cfg, lr)
    }

    pub fn resume(
        model: &'a Model,
        objective: Objective<'a>,
        params: Params,
        adam: AdamState,
        iteration: usize,
        cfg: &TrainConfig,
        lr: f64,
    ) -> Self {
        Self {
            model,
            objective,
            cfg: cfg.clone(),
            lr,
            params,
            adam,
            iteration,
        }
    }

    /// Evaluates the loss, updates the parameters and returns the loss
    /// before the update.
    pub fn step(&mut self) -> Result<f64> {
        let (loss, grad) = self
            .objective
            .evaluate(self.model, &self.params, self.iteration)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: self.iteration,
                loss,
            });
        }
        check_gradient(&grad, self.params.layout(), self.iteration)?;
        adam_step(self.params.values_mut(), &grad, &mut self.adam, self.lr, &self.cfg)?;
        self.iteration += 1;
        Ok(loss)
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn into_params(self) -> Params {
        self.params
    }
}

/// The metric used to pick the best rate of a sweep.
#[derive(Debug, Clone, Copy)]
pub enum Selection<'a> {
    /// Lower distortion against the target distances is better.
    Distortion(&'a DistanceMatrix),
    /// Higher mean average precision against the relevance sets is better.
    Map(&'a [Vec<usize>]),
}

impl Selection<'_> {
    pub fn score(&self, model: &Model, params: &Params) -> f64 {
        let table = distance_table(model, params);
        match *self {
            Selection::Distortion(targets) => distortion_from_table(&table, targets),
            Selection::Map(relevance) => mean_ap(&per_node_ap(&table, relevance)),
        }
    }

    /// Whether `a` beats `b`; NaN never wins.
    pub fn better(&self, a: f64, b: f64) -> bool {
        if a.is_nan() {
            return false;
        }
        if b.is_nan() {
            return true;
        }
        match self {
            Selection::Distortion(_) => a < b,
            Selection::Map(_) => a > b,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub lr: f64,
    pub params: Params,
    /// Loss at every iteration, before that iteration's update.
    pub trace: Vec<f64>,
    /// Selection metric after the final update.
    pub metric: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RateFailure {
    pub lr: f64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Finished runs in sweep order.
    pub runs: Vec<RunResult>,
    /// Index of the selected run in `runs`.
    pub best: usize,
    pub failures: Vec<RateFailure>,
}

impl TrainOutcome {
    pub fn best(&self) -> &RunResult {
        &self.runs[self.best]
    }
}

/// Trains from the seeded initialisation at one rate.
pub fn train_rate(
    model: &Model,
    objective: Objective<'_>,
    nodes: usize,
    cfg: &TrainConfig,
    lr: f64,
    selection: Selection<'_>,
) -> Result<RunResult> {
    let start = Instant::now();
    let mut trainer = Trainer::new(model, objective, initial_params(model, nodes, cfg), cfg, lr);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let loss = trainer.step()?;
        if it % 100 == 0 {
            log::debug!("{} lr={lr} iteration {it}: loss {loss:.6}", model.signature());
        }
        trace.push(loss);
    }
    let params = trainer.into_params();
    let metric = selection.score(model, &params);
    Ok(RunResult {
        lr,
        params,
        trace,
        metric,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains once per configured rate and keeps the run with the best final
/// metric. A failing rate is recorded and skipped; the sweep fails only when
/// every rate fails.
pub fn train(
    model: &Model,
    objective: Objective<'_>,
    nodes: usize,
    cfg: &TrainConfig,
    selection: Selection<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Objective::Proxy { spec, .. } = &objective {
        spec.validate(model)?;
    }
    let mut best: Option<usize> = None;
    let mut runs: Vec<RunResult> = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for lr in cfg.rates() {
        match train_rate(model, objective, nodes, cfg, lr, selection) {
            Ok(run) => {
                log::info!(
                    "{} lr={lr}: final loss {:.6}, metric {:.6} ({:.1}s)",
                    model.signature(),
                    run.trace.last().copied().unwrap_or(f64::NAN),
                    run.metric,
                    run.seconds
                );
                if best.is_none_or(|b| selection.better(run.metric, runs[b].metric)) {
                    best = Some(runs.len());
                }
                runs.push(run);
            }
            Err(e) => {
                log::warn!("{} lr={lr}: {e}", model.signature());
                failures.push(RateFailure {
                    lr,
                    message: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    match best {
        Some(best) => Ok(TrainOutcome {
            runs,
            best,
            failures,
        }),
        None => Err(first_error.expect("at least one rate")),
    }
}
