//! End-to-end optimization loop for static parametric problems, run
//! configuration, and inference from a trained model.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::{build_pool, reference_point, select_batch, FrontScope, DEFAULT_POOL_SIZE};
use crate::dynamic::{run_dynamic, DynamicConfig, DynamicSummary};
use crate::error::{Error, Result};
use crate::metrics::{normalized_hv, NormalizationSpec};
use crate::problems::{ParametricProblem, ProblemRegistry};
use crate::psmodel::{ForwardWorkspace, Optimizer, ParametricPsModel, PsModelConfig};
use crate::sampling::{preference_grid, sample_task, space_filling_init, RandomSource};
use crate::surrogate::{GaussianSurrogate, GpConfig};
use crate::trainer::{train_phase, TaskDistribution, TrainConfig};
use crate::types::{DecisionVector, EvaluationArchive, EvaluationRecord, ObjectiveVector, PreferenceVector, TaskParameter};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Static,
    Dynamic,
}

/// Loop variant. `NoHistory` and `Random` are dynamic-mode ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoHistory,
    Random,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_history" => Ok(Ablation::NoHistory),
            "random" => Ok(Ablation::Random),
            other => Err(Error::Config(format!("unknown ablation {other:?}; expected full, no_history or random"))),
        }
    }
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoHistory => "no_history",
            Ablation::Random => "random",
        }
    }
}

/// Post-hoc quality measurement on held-out task parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Number of held-out parameters drawn uniformly from the parameter box.
    pub held_out: usize,
    /// Preferences per inferred front.
    pub front_size: usize,
    /// Record metrics every this many iterations (0: only at the end).
    pub every: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { held_out: 10, front_size: 100, every: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Registered problem name.
    pub problem: String,
    /// Indices of the base problem's variables that become the task parameter.
    pub shared: Option<Vec<usize>>,
    /// Total expensive evaluations (static mode).
    pub budget: usize,
    /// Initial design size; defaults to `max(20, 2(n + p))`.
    pub initial_size: Option<usize>,
    pub batch_size: usize,
    pub pool_size: usize,
    pub seed: u64,
    pub mode: Mode,
    pub ablation: Ablation,
    pub train: TrainConfig,
    pub gp: GpConfig,
    pub model: PsModelConfig,
    pub evaluation: EvaluationConfig,
    pub dynamic: DynamicConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "synth-p1".into(),
            shared: None,
            budget: 200,
            initial_size: None,
            batch_size: 5,
            pool_size: DEFAULT_POOL_SIZE,
            seed: 0,
            mode: Mode::Static,
            ablation: Ablation::Full,
            train: TrainConfig::default(),
            gp: GpConfig::default(),
            model: PsModelConfig::default(),
            evaluation: EvaluationConfig::default(),
            dynamic: DynamicConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn initial_size_for(&self, n: usize, p: usize) -> usize {
        self.initial_size.unwrap_or_else(|| 20.max(2 * (n + p)))
    }

    /// Checks the configuration in isolation.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.pool_size < self.batch_size {
            return Err(Error::Config(format!(
                "pool_size ({}) must be at least batch_size ({})",
                self.pool_size, self.batch_size
            )));
        }
        if matches!(self.initial_size, Some(n) if n < 2) {
            return Err(Error::Config("initial_size must be at least 2".into()));
        }
        if self.mode == Mode::Static && self.ablation != Ablation::Full {
            return Err(Error::Config(format!("ablation {:?} is only defined for dynamic mode", self.ablation.as_str())));
        }
        self.train.validate()?;
        self.gp.validate()?;
        self.model.validate()?;
        if self.mode == Mode::Dynamic {
            self.dynamic.validate()?;
        }
        Ok(())
    }

    /// Creates the problem and checks the configuration against it.
    pub fn problem(&self, registry: &ProblemRegistry) -> Result<ParametricProblem> {
        self.validate()?;
        let problem = registry.create_with_shared(&self.problem, self.shared.as_deref())?;
        if problem.p() == 0 {
            return Err(Error::Config(format!("problem {:?} has no task parameter", self.problem)));
        }
        if problem.m() < 2 || problem.m() > 3 {
            return Err(Error::Config(format!("{} objectives; supported: 2 or 3", problem.m())));
        }
        let n0 = self.initial_size_for(problem.n(), problem.p());
        if self.mode == Mode::Static && self.budget < n0 {
            return Err(Error::Config(format!("budget ({}) is smaller than the initial design ({n0})", self.budget)));
        }
        Ok(problem)
    }

    /// Number of acquisition iterations a static run performs.
    pub fn static_iterations(&self, n0: usize) -> usize {
        self.budget.saturating_sub(n0) / self.batch_size
    }
}

/// One row per iteration (static) or generation (dynamic).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Environment time (dynamic mode).
    pub t: Option<f64>,
    /// Expensive evaluations so far.
    pub evaluations: u64,
    pub archive_size: usize,
    pub training_size: usize,
    pub loss_first: Option<f64>,
    pub loss_last: Option<f64>,
    pub loss_mean: Option<f64>,
    /// Sum over objectives of the fitted log marginal likelihood.
    pub gp_mll: Option<f64>,
    /// Sum of marginal HVI over the selected batch.
    pub batch_gain: Option<f64>,
    /// Latest generation and time present in the surrogate's training set.
    pub max_training_iteration: Option<usize>,
    pub max_training_t: Option<f64>,
    pub igd: Option<f64>,
    pub hv: Option<f64>,
}

/// Surrogate loss of one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    pub step: usize,
    pub loss: f64,
}

/// Normalized HV of an inferred front at a held-out parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    /// Index into the held-out parameters.
    pub task: usize,
    pub hv: f64,
    /// Normalized HV of the analytic front.
    pub hv_optimum: f64,
}

/// Decisions inferred for a grid of preferences at one task parameter, with
/// audit objectives when the problem is available.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontRecord {
    pub label: String,
    pub t: TaskParameter,
    pub preferences: Vec<PreferenceVector>,
    pub decisions: Vec<DecisionVector>,
    pub objectives: Option<Vec<ObjectiveVector>>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: RunConfig,
    /// Every expensive evaluation, in order.
    pub history: EvaluationArchive,
    pub model: ParametricPsModel,
    pub surrogate: Option<GaussianSurrogate>,
    pub trace: Vec<TraceRow>,
    pub losses: Vec<LossRow>,
    pub metrics: Vec<MetricRow>,
    pub fronts: Vec<FrontRecord>,
    pub held_out: Vec<TaskParameter>,
    pub evaluations: u64,
    pub audits: u64,
    pub dynamic: Option<DynamicSummary>,
}

/// Independent random streams of one run.
pub(crate) struct Streams {
    pub init: RandomSource,
    pub model: RandomSource,
    pub gp: RandomSource,
    pub train: RandomSource,
    pub pool: RandomSource,
    pub held_out: RandomSource,
    pub random: RandomSource,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let base = RandomSource::new(seed);
        Self {
            init: base.derive(1),
            model: base.derive(2),
            gp: base.derive(3),
            train: base.derive(4),
            pool: base.derive(5),
            held_out: base.derive(6),
            random: base.derive(7),
        }
    }
}

/// Runs the configured loop on a problem from `registry`.
pub fn run(cfg: &RunConfig, registry: &ProblemRegistry) -> Result<RunResult> {
    let problem = cfg.problem(registry)?;
    match cfg.mode {
        Mode::Static => run_static(cfg, &problem),
        Mode::Dynamic => run_dynamic(cfg, &problem),
    }
}

pub(crate) fn evaluate_into(
    problem: &ParametricProblem,
    archive: &mut EvaluationArchive,
    history: &mut EvaluationArchive,
    x: DecisionVector,
    t: TaskParameter,
    iteration: usize,
) -> Result<()> {
    let y = problem.evaluate(&x, &t)?;
    let rec = EvaluationRecord { x, t, y, iteration, counter: problem.evaluation_count() };
    history.push(rec.clone())?;
    archive.push(rec)
}

/// Static-mode loop: initial design, then fit → train → pool → select →
/// evaluate until another batch would exceed the budget.
pub fn run_static(cfg: &RunConfig, problem: &ParametricProblem) -> Result<RunResult> {
    let (n, p, m) = (problem.n(), problem.p(), problem.m());
    let n0 = cfg.initial_size_for(n, p);
    if cfg.budget < n0 {
        return Err(Error::Config(format!("budget ({}) is smaller than the initial design ({n0})", cfg.budget)));
    }
    let mut s = Streams::new(cfg.seed);
    let held_out: Vec<TaskParameter> = (0..cfg.evaluation.held_out)
        .map(|_| sample_task(&mut s.held_out, problem.parameter_bounds()))
        .collect::<Result<_>>()?;
    let mut eval = HeldOutEvaluator::new(problem, &held_out, cfg.evaluation.front_size)?;
    let counter_start = problem.evaluation_count();

    let mut archive = EvaluationArchive::new();
    let mut history = EvaluationArchive::new();
    for (x, t) in space_filling_init(&mut s.init, n0, problem.decision_bounds(), problem.parameter_bounds())? {
        evaluate_into(problem, &mut archive, &mut history, x, t, 0)?;
    }
    let mut model = ParametricPsModel::init(&cfg.model, m, problem.decision_bounds(), problem.parameter_bounds(), &mut s.model)?;
    let mut optimizer = Optimizer::new(cfg.train.optimizer);
    let dist = TaskDistribution::Uniform(problem.parameter_bounds().clone());
    let mut surrogate: Option<GaussianSurrogate> = None;
    let mut trace = Vec::new();
    let mut loss_log = Vec::new();
    let mut metrics = Vec::new();
    let iterations = cfg.static_iterations(n0);

    for it in 1..=iterations {
        let gp = GaussianSurrogate::fit(
            &archive,
            problem.decision_bounds(),
            problem.parameter_bounds(),
            &cfg.gp,
            &mut s.gp,
            surrogate.as_ref(),
        )?;
        let losses = train_phase(&mut model, &mut optimizer, &gp, &archive, &cfg.train, &mut s.train, &dist)?;
        let pool = build_pool(&model, &gp, &dist, cfg.pool_size, cfg.batch_size, cfg.train.beta, &mut s.pool)?;
        let observed = archive.objectives();
        let r = reference_point(&observed, &pool)?;
        let sel = select_batch(&pool, &archive, cfg.batch_size, &r, FrontScope::All)?;
        let training_size = archive.len();
        for &i in &sel.indices {
            let c = &pool.entries[i];
            evaluate_into(problem, &mut archive, &mut history, c.x.clone(), c.t.clone(), it)?;
        }
        let mut row = TraceRow {
            iteration: it,
            evaluations: problem.evaluation_count() - counter_start,
            archive_size: archive.len(),
            training_size,
            gp_mll: Some(gp.objectives().iter().map(|g| g.log_marginal_likelihood()).sum()),
            batch_gain: Some(sel.gains.iter().sum()),
            max_training_iteration: Some(it - 1),
            ..TraceRow::default()
        };
        fill_losses(&mut row, &losses, &mut loss_log);
        trace.push(row);
        let checkpoint = it == iterations || (cfg.evaluation.every > 0 && it % cfg.evaluation.every == 0);
        if checkpoint {
            metrics.extend(eval.measure(&model, it)?);
        }
        surrogate = Some(gp);
        log::info!("iteration {it}/{iterations}: {} evaluations", archive.len());
    }
    if iterations == 0 {
        metrics.extend(eval.measure(&model, 0)?);
    }
    let fronts = eval.fronts(&model)?;
    let audits = eval.audits();
    drop(eval);
    Ok(RunResult {
        config: cfg.clone(),
        history,
        model,
        surrogate,
        trace,
        losses: loss_log,
        metrics,
        fronts,
        held_out,
        evaluations: problem.evaluation_count() - counter_start,
        audits,
        dynamic: None,
    })
}

pub(crate) fn fill_losses(row: &mut TraceRow, losses: &[f64], log: &mut Vec<LossRow>) {
    log.extend(losses.iter().enumerate().map(|(step, &loss)| LossRow { iteration: row.iteration, step, loss }));
    if !losses.is_empty() {
        row.loss_first = losses.first().copied();
        row.loss_last = losses.last().copied();
        row.loss_mean = Some(losses.iter().sum::<f64>() / losses.len() as f64);
    }
}

/// Held-out parameters with their normalization, built once per run.
struct HeldOutEvaluator<'a> {
    problem: &'a ParametricProblem,
    tasks: &'a [TaskParameter],
    k: usize,
    specs: Option<Vec<(NormalizationSpec, f64)>>,
}

impl<'a> HeldOutEvaluator<'a> {
    fn new(problem: &'a ParametricProblem, tasks: &'a [TaskParameter], k: usize) -> Result<Self> {
        let specs = if problem.has_analytic_front() {
            Some(
                tasks
                    .iter()
                    .map(|t| {
                        let front = problem.analytic_front(t, crate::metrics::NORMALIZATION_FRONT_SIZE)?;
                        let spec = NormalizationSpec::from_front(&front)?;
                        let opt = normalized_hv(&front, &spec)?;
                        Ok((spec, opt))
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self { problem, tasks, k, specs })
    }

    fn audits(&self) -> u64 {
        self.problem.audit_count()
    }

    fn measure(&mut self, model: &ParametricPsModel, iteration: usize) -> Result<Vec<MetricRow>> {
        let Some(specs) = &self.specs else { return Ok(Vec::new()) };
        let mut rows = Vec::with_capacity(self.tasks.len());
        for (i, t) in self.tasks.iter().enumerate() {
            let front = audited_front(self.problem, model, t, self.k, "")?;
            let ys = front.objectives.expect("audited");
            let (spec, opt) = &specs[i];
            rows.push(MetricRow { iteration, task: i, hv: normalized_hv(&ys, spec)?, hv_optimum: *opt });
        }
        Ok(rows)
    }

    fn fronts(&self, model: &ParametricPsModel) -> Result<Vec<FrontRecord>> {
        self.tasks
            .iter()
            .enumerate()
            .map(|(i, t)| audited_front(self.problem, model, t, self.k, &format!("heldout-{i:02}")))
            .collect()
    }
}

/// Infers a front at `t` and audits every decision.
pub fn audited_front(
    problem: &ParametricProblem,
    model: &ParametricPsModel,
    t: &TaskParameter,
    k: usize,
    label: &str,
) -> Result<FrontRecord> {
    let pairs = infer_front(model, t, k)?;
    let (preferences, decisions): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let objectives = decisions.iter().map(|x| problem.audit(x, t)).collect::<Result<Vec<_>>>()?;
    Ok(FrontRecord { label: label.to_string(), t: t.clone(), preferences, decisions, objectives: Some(objectives) })
}

/// Decisions for `k` preferences spread over the simplex at parameter `t`.
/// Performs no expensive evaluations.
pub fn infer_front(model: &ParametricPsModel, t: &TaskParameter, k: usize) -> Result<Vec<(PreferenceVector, DecisionVector)>> {
    model.parameter_bounds().check(t, "task parameter")?;
    infer_front_unchecked(model, t, k)
}

/// As [`infer_front`] but accepts `t` outside the trained parameter box.
pub fn infer_front_unchecked(
    model: &ParametricPsModel,
    t: &TaskParameter,
    k: usize,
) -> Result<Vec<(PreferenceVector, DecisionVector)>> {
    if t.len() != model.p() {
        return Err(Error::Dimension(format!("task parameter has {} components, model expects {}", t.len(), model.p())));
    }
    let prefs = preference_grid(model.n_obj(), k)?;
    let n = model.n();
    let x = if model.n_obj() == 2 {
        let a: Vec<f64> = prefs.iter().map(|p| p[0]).collect();
        model.forward_segment(t, &a)?
    } else {
        let flat: Vec<f64> = prefs.iter().flat_map(|p| p.iter().copied()).collect();
        let mut ws = ForwardWorkspace::new();
        model.forward_batch(t, &flat, &mut ws)?;
        ws.x
    };
    Ok(prefs.into_iter().enumerate().map(|(i, p)| (p, DecisionVector::new(x[i * n..(i + 1) * n].to_vec()))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(budget: usize) -> RunConfig {
        RunConfig {
            budget,
            initial_size: Some(10),
            batch_size: 3,
            pool_size: 20,
            train: TrainConfig { n_tasks: 2, n_prefs: 3, steps: 3, ..TrainConfig::default() },
            gp: GpConfig { steps: 5, restarts: 0, ..GpConfig::default() },
            model: PsModelConfig { hidden: Some(vec![8]), rank: 1, hypernet_hidden: vec![8] },
            evaluation: EvaluationConfig { held_out: 2, front_size: 5, every: 1 },
            ..RunConfig::default()
        }
    }

    #[test]
    fn defaults_match_reference_settings() {
        let c = RunConfig::default();
        assert_eq!((c.batch_size, c.pool_size, c.budget), (5, 1000, 200));
        assert_eq!((c.train.n_tasks, c.train.n_prefs, c.train.steps), (20, 10, 100));
        assert_eq!((c.train.nu, c.train.beta, c.train.eta_b, c.train.eta_hn), (0.01, 0.05, 1e-3, 1e-5));
        assert_eq!(c.model.rank, 3);
        assert_eq!(c.model.hypernet_hidden, vec![1024; 4]);
        assert_eq!(c.model.hidden_for(2), vec![512, 512]);
        assert_eq!(c.model.hidden_for(3), vec![256; 3]);
        assert_eq!(c.initial_size_for(2, 1), 20);
        assert_eq!(c.initial_size_for(10, 1), 22);
    }

    #[test]
    fn budget_arithmetic() {
        let reg = ProblemRegistry::with_builtins();
        let res = run(&tiny(10), &reg).unwrap();
        assert_eq!(res.history.len(), 10);
        assert!(res.trace.is_empty());
        assert_eq!(res.evaluations, 10);

        let res = run(&tiny(18), &reg).unwrap();
        // (18 − 10) / 3 = 2 iterations, 2 evaluations left unused.
        assert_eq!(res.trace.len(), 2);
        assert_eq!(res.history.len(), 16);
        assert_eq!(res.evaluations, 16);
        let cfg = RunConfig { budget: 200, initial_size: Some(50), batch_size: 5, ..RunConfig::default() };
        assert_eq!(cfg.static_iterations(50), 30);
    }

    #[test]
    fn archive_is_append_only_and_deterministic() {
        let reg = ProblemRegistry::with_builtins();
        let a = run(&tiny(16), &reg).unwrap();
        let b = run(&tiny(16), &reg).unwrap();
        let ra: Vec<_> = a.history.records().cloned().collect();
        let rb: Vec<_> = b.history.records().cloned().collect();
        assert_eq!(ra, rb);
        let iters: Vec<usize> = ra.iter().map(|r| r.iteration).collect();
        assert!(iters.windows(2).all(|w| w[0] <= w[1]));
        let counters: Vec<u64> = ra.iter().map(|r| r.counter).collect();
        assert_eq!(counters, (1..=16).collect::<Vec<u64>>());
        // One metric row per held-out parameter per iteration.
        assert_eq!(a.metrics.len(), 2 * a.trace.len());
        assert_eq!(a.fronts.len(), 2);
    }

    #[test]
    fn config_errors_before_evaluation() {
        let reg = ProblemRegistry::with_builtins();
        assert!(matches!(run(&tiny(5), &reg), Err(Error::Config(_))));
        assert!(matches!(run(&RunConfig { problem: "nope".into(), ..tiny(20) }, &reg), Err(Error::Config(_))));
        assert!(matches!(run(&RunConfig { batch_size: 0, ..tiny(20) }, &reg), Err(Error::Config(_))));
        assert!(matches!(run(&RunConfig { pool_size: 2, ..tiny(20) }, &reg), Err(Error::Config(_))));
        assert!(matches!(run(&RunConfig { ablation: Ablation::Random, ..tiny(20) }, &reg), Err(Error::Config(_))));
        assert!(matches!(run(&RunConfig { problem: "zdt1".into(), ..tiny(20) }, &reg), Err(Error::Config(_))));
    }

    #[test]
    fn ablation_flags_parse() {
        assert_eq!("no_history".parse::<Ablation>().unwrap(), Ablation::NoHistory);
        assert_eq!("random".parse::<Ablation>().unwrap(), Ablation::Random);
        assert!(matches!("greedy".parse::<Ablation>(), Err(Error::Config(_))));
        let cfg: std::result::Result<RunConfig, _> = serde_json::from_str(r#"{"ablation": "greedy"}"#);
        assert!(cfg.is_err());
    }

    #[test]
    fn inference_stays_in_box_and_costs_nothing() {
        let reg = ProblemRegistry::with_builtins();
        let problem = reg.create("synth-p1").unwrap();
        let mut rng = RandomSource::new(3);
        let model = ParametricPsModel::init(
            &PsModelConfig { hidden: Some(vec![16, 16]), rank: 2, hypernet_hidden: vec![16] },
            2,
            problem.decision_bounds(),
            problem.parameter_bounds(),
            &mut rng,
        )
        .unwrap();
        let before = problem.evaluation_count();
        let t = TaskParameter::new(vec![0.4]);
        let front = infer_front(&model, &t, 500).unwrap();
        assert_eq!(front.len(), 500);
        assert!(front.iter().all(|(_, x)| problem.decision_bounds().contains(x)));
        assert_eq!(problem.evaluation_count(), before);
        assert!(matches!(infer_front(&model, &TaskParameter::new(vec![1.5]), 5), Err(Error::Bound(_) | Error::Domain(_))));
    }
}
