//! Monte-Carlo surrogate loss over sampled (task, preference) pairs and the
//! inner training loop of the parametric model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psmodel::{ForwardWorkspace, Optimizer, OptimizerKind, ParametricPsModel, PsGradients};
use crate::sampling::{sample_simplex, sample_task, RandomSource};
use crate::scalarize::{stch_with_weights, update_ideal, IdealPoint, StchConfig, DEFAULT_EPSILON};
use crate::surrogate::SurrogateModel;
use crate::types::{BoxBounds, EvaluationArchive, TaskParameter};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Task parameters per step `N_t`.
    pub n_tasks: usize,
    /// Preferences per task `N_λ`.
    pub n_prefs: usize,
    /// Inner steps per BO iteration `J`.
    pub steps: usize,
    pub eta_b: f64,
    pub eta_hn: f64,
    /// STCH smoothing `ν`.
    pub nu: f64,
    /// LCB coefficient `β`.
    pub beta: f64,
    /// Ideal-point shift `ε`.
    pub epsilon: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_tasks: 20,
            n_prefs: 10,
            steps: 100,
            eta_b: 1e-3,
            eta_hn: 1e-5,
            nu: 0.01,
            beta: 0.05,
            epsilon: DEFAULT_EPSILON,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 || self.n_prefs == 0 {
            return Err(Error::Config("n_tasks and n_prefs must be at least 1".into()));
        }
        if !(self.eta_b > 0.0 && self.eta_hn > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.nu > 0.0) || !(self.beta >= 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("nu and epsilon must be positive and beta non-negative".into()));
        }
        Ok(())
    }

    pub fn stch(&self) -> StchConfig {
        StchConfig { nu: self.nu }
    }
}

/// Distribution of task parameters used during training and acquisition.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskDistribution {
    /// Uniform over a box.
    Uniform(BoxBounds),
    /// Every draw equals the given parameter.
    Degenerate(TaskParameter),
}

impl TaskDistribution {
    pub fn sample(&self, rng: &mut RandomSource) -> Result<TaskParameter> {
        match self {
            TaskDistribution::Uniform(b) => sample_task(rng, b),
            TaskDistribution::Degenerate(t) => Ok(t.clone()),
        }
    }
}

/// All N_t·N_λ draws of a single training step.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    /// `N_t × p`
    pub tasks: Vec<f64>,
    /// `(N_t·N_λ) × m`, grouped by task.
    pub prefs: Vec<f64>,
}

impl SampleBatch {
    pub fn draw(
        rng: &mut RandomSource,
        dist: &TaskDistribution,
        m: usize,
        n_tasks: usize,
        n_prefs: usize,
    ) -> Result<Self> {
        let mut tasks = Vec::new();
        let mut prefs = Vec::with_capacity(n_tasks * n_prefs * m);
        for _ in 0..n_tasks {
            tasks.extend(dist.sample(rng)?.into_inner());
            for _ in 0..n_prefs {
                prefs.extend(sample_simplex(rng, m)?.into_inner());
            }
        }
        Ok(Self { tasks, prefs })
    }
}

#[derive(Clone, Debug)]
pub struct McEstimate {
    /// Average per-sample loss.
    pub loss: f64,
    pub grads: PsGradients,
    pub per_sample: Vec<f64>,
}

/// Averaged surrogate STCH loss and its gradients on a fixed sample batch.
pub fn mc_loss_on_batch(
    model: &ParametricPsModel,
    surrogate: &dyn SurrogateModel,
    ideal: &IdealPoint,
    cfg: &TrainConfig,
    batch: &SampleBatch,
    ws: &mut ForwardWorkspace,
) -> Result<McEstimate> {
    let (n, p, m) = (model.n(), model.p(), model.n_obj());
    if surrogate.input_dim() != n + p || surrogate.n_obj() != m {
        return Err(Error::Dimension("surrogate and model dimensions disagree".into()));
    }
    model.forward_batch(&batch.tasks, &batch.prefs, ws)?;
    let rows = ws.rows();
    let per_task = ws.rows() / ws_tasks(batch, p);
    let mut z = Vec::with_capacity(rows * (n + p));
    for r in 0..rows {
        z.extend_from_slice(&ws.x[r * n..(r + 1) * n]);
        let g = r / per_task;
        z.extend_from_slice(&batch.tasks[g * p..(g + 1) * p]);
    }
    let pred = surrogate.predict_batch(&z, true)?;
    let d = n + p;
    let scale = 1.0 / rows as f64;
    let mut per_sample = Vec::with_capacity(rows);
    let mut grad_x = vec![0.0; rows * n];
    for r in 0..rows {
        let f = pred.lcb(r, cfg.beta);
        let lambda = &batch.prefs[r * m..(r + 1) * m];
        let (value, w) = stch_with_weights(&f, lambda, ideal, cfg.stch());
        if !value.is_finite() {
            let g = r / per_task;
            return Err(Error::NonFiniteLoss {
                step: 0,
                task: batch.tasks[g * p..(g + 1) * p].to_vec(),
                preference: lambda.to_vec(),
            });
        }
        per_sample.push(value);
        for (i, wi) in w.iter().enumerate() {
            let off = (r * m + i) * d;
            for k in 0..n {
                grad_x[r * n + k] += scale * wi * (pred.grad_mean[off + k] - cfg.beta * pred.grad_std[off + k]);
            }
        }
    }
    let grads = model.backward(ws, &grad_x)?;
    let loss = per_sample.iter().sum::<f64>() * scale;
    Ok(McEstimate { loss, grads, per_sample })
}

fn ws_tasks(batch: &SampleBatch, p: usize) -> usize {
    if p == 0 {
        1
    } else {
        batch.tasks.len() / p
    }
}

/// Draws a fresh batch and returns the averaged loss and gradients.
pub fn mc_loss_and_grads(
    model: &ParametricPsModel,
    surrogate: &dyn SurrogateModel,
    ideal: &IdealPoint,
    cfg: &TrainConfig,
    rng: &mut RandomSource,
    dist: &TaskDistribution,
) -> Result<McEstimate> {
    let batch = SampleBatch::draw(rng, dist, model.n_obj(), cfg.n_tasks, cfg.n_prefs)?;
    mc_loss_on_batch(model, surrogate, ideal, cfg, &batch, &mut ForwardWorkspace::new())
}

/// `cfg.steps` iterations of sampling, loss and parameter update. The ideal
/// point is taken from the archive once, at the start. Returns the loss of
/// every step.
pub fn train_phase(
    model: &mut ParametricPsModel,
    optimizer: &mut Optimizer,
    surrogate: &dyn SurrogateModel,
    archive: &EvaluationArchive,
    cfg: &TrainConfig,
    rng: &mut RandomSource,
    dist: &TaskDistribution,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let ideal = update_ideal(archive, cfg.epsilon)?;
    let mut ws = ForwardWorkspace::new();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = SampleBatch::draw(rng, dist, model.n_obj(), cfg.n_tasks, cfg.n_prefs)?;
        let est = mc_loss_on_batch(model, surrogate, &ideal, cfg, &batch, &mut ws).map_err(|e| match e {
            Error::NonFiniteLoss { task, preference, .. } => Error::NonFiniteLoss { step, task, preference },
            other => other,
        })?;
        if !est.grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                task: batch.tasks.clone(),
                preference: batch.prefs[..model.n_obj()].to_vec(),
            });
        }
        optimizer.step(model, &est.grads, cfg.eta_b, cfg.eta_hn)?;
        trace.push(est.loss);
    }
    Ok(trace)
}
