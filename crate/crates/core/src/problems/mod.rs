//! Parametric multi-objective problems `f(x, t)`, the built-in synthetic
//! benchmarks, the shared-component wrapper and the dynamic clock.

mod dynamic;
mod registry;
mod shared;
mod synthetic;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use dynamic::{online_time, time_index, DynamicSpec};
pub use registry::{ProblemFactory, ProblemRegistry};
pub use shared::{wrap_shared, SharedComponentSpec};
pub use synthetic::{SynthD1, SynthP1, SynthP2, Zdt1};

use crate::error::{Error, Result};
use crate::types::{BoxBounds, DecisionVector, ObjectiveVector, TaskParameter};

/// The mathematical definition of a parametric problem. Implementations are
/// pure; evaluation accounting lives in [`ParametricProblem`].
pub trait ProblemDefinition: Send + Sync {
    fn name(&self) -> &str;
    fn n_obj(&self) -> usize;
    fn decision_bounds(&self) -> &BoxBounds;
    fn parameter_bounds(&self) -> &BoxBounds;
    /// `f(x, t)`; inputs are already validated against the boxes.
    fn objectives(&self, x: &[f64], t: &[f64]) -> Vec<f64>;
    /// `k` points along the true Pareto front at `t`, when known in closed form.
    fn analytic_front(&self, _t: &[f64], _k: usize) -> Option<Vec<Vec<f64>>> {
        None
    }
}

type ObjectiveFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// A problem supplied at runtime through a callback (e.g. an external suite).
pub struct PluginProblem {
    name: String,
    n_obj: usize,
    decision: BoxBounds,
    parameter: BoxBounds,
    f: Box<ObjectiveFn>,
}

impl ProblemDefinition for PluginProblem {
    fn name(&self) -> &str {
        &self.name
    }
    fn n_obj(&self) -> usize {
        self.n_obj
    }
    fn decision_bounds(&self) -> &BoxBounds {
        &self.decision
    }
    fn parameter_bounds(&self) -> &BoxBounds {
        &self.parameter
    }
    fn objectives(&self, x: &[f64], t: &[f64]) -> Vec<f64> {
        (self.f)(x, t)
    }
}

/// A parametric problem together with its expensive-evaluation counter and a
/// separate counter for audit evaluations (metric computation that does not
/// consume budget). Clones share both counters.
#[derive(Clone)]
pub struct ParametricProblem {
    def: Arc<dyn ProblemDefinition>,
    evaluations: Arc<AtomicU64>,
    audits: Arc<AtomicU64>,
}

impl fmt::Debug for ParametricProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricProblem")
            .field("name", &self.name())
            .field("n", &self.n())
            .field("p", &self.p())
            .field("m", &self.m())
            .field("evaluations", &self.evaluation_count())
            .finish()
    }
}

impl ParametricProblem {
    pub fn new(def: impl ProblemDefinition + 'static) -> Self {
        Self::from_arc(Arc::new(def))
    }

    pub fn from_arc(def: Arc<dyn ProblemDefinition>) -> Self {
        Self {
            def,
            evaluations: Arc::new(AtomicU64::new(0)),
            audits: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Registers an external problem given its dimensions, boxes and objective callback.
    pub fn plugin<F>(
        name: impl Into<String>,
        n_obj: usize,
        decision: BoxBounds,
        parameter: BoxBounds,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        decision.validate()?;
        parameter.validate()?;
        if n_obj < 2 {
            return Err(Error::Dimension(format!("a multi-objective problem needs m >= 2, got {n_obj}")));
        }
        if decision.dim() == 0 {
            return Err(Error::Dimension("decision space must have at least one variable".into()));
        }
        Ok(Self::new(PluginProblem { name: name.into(), n_obj, decision, parameter, f: Box::new(f) }))
    }

    pub(crate) fn sharing_counters(def: Arc<dyn ProblemDefinition>, with: &ParametricProblem) -> Self {
        Self { def, evaluations: with.evaluations.clone(), audits: with.audits.clone() }
    }

    pub(crate) fn definition(&self) -> &Arc<dyn ProblemDefinition> {
        &self.def
    }

    pub fn name(&self) -> &str {
        self.def.name()
    }

    /// Decision dimension.
    pub fn n(&self) -> usize {
        self.def.decision_bounds().dim()
    }

    /// Task-parameter dimension.
    pub fn p(&self) -> usize {
        self.def.parameter_bounds().dim()
    }

    /// Number of objectives.
    pub fn m(&self) -> usize {
        self.def.n_obj()
    }

    pub fn decision_bounds(&self) -> &BoxBounds {
        self.def.decision_bounds()
    }

    pub fn parameter_bounds(&self) -> &BoxBounds {
        self.def.parameter_bounds()
    }

    fn compute(&self, x: &[f64], t: &[f64]) -> Result<ObjectiveVector> {
        let y = self.def.objectives(x, t);
        if y.len() != self.m() {
            return Err(Error::Dimension(format!(
                "problem {} returned {} objectives, declared {}",
                self.name(),
                y.len(),
                self.m()
            )));
        }
        ObjectiveVector::new(y)
    }

    fn check_inputs(&self, x: &[f64], t: &[f64]) -> Result<()> {
        self.decision_bounds().check(x, "decision vector")?;
        self.parameter_bounds().check(t, "task parameter")
    }

    /// Expensive evaluation `f(x, t)`; increments the evaluation counter by one.
    /// Out-of-box inputs are rejected without touching the counter.
    pub fn evaluate(&self, x: &DecisionVector, t: &TaskParameter) -> Result<ObjectiveVector> {
        self.check_inputs(x, t)?;
        self.evaluations.fetch_add(1, Ordering::SeqCst);
        self.compute(x, t)
    }

    /// Evaluation for metric computation only; counted separately from the budget.
    pub fn audit(&self, x: &[f64], t: &[f64]) -> Result<ObjectiveVector> {
        self.check_inputs(x, t)?;
        self.audits.fetch_add(1, Ordering::SeqCst);
        self.compute(x, t)
    }

    pub fn evaluation_count(&self) -> u64 {
        self.evaluations.load(Ordering::SeqCst)
    }

    pub fn audit_count(&self) -> u64 {
        self.audits.load(Ordering::SeqCst)
    }

    pub fn has_analytic_front(&self) -> bool {
        let t = self.parameter_bounds().lower.clone();
        self.def.analytic_front(&t, 1).is_some()
    }

    /// `k` points along the analytic Pareto front at `t`.
    pub fn analytic_front(&self, t: &[f64], k: usize) -> Result<Vec<ObjectiveVector>> {
        self.parameter_bounds().check(t, "task parameter")?;
        let front = self.def.analytic_front(t, k).ok_or_else(|| {
            Error::Unsupported(format!("problem {} has no analytic Pareto front", self.name()))
        })?;
        Ok(front.into_iter().map(ObjectiveVector::new_unchecked).collect())
    }
}
