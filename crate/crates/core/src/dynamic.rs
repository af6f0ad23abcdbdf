//! Dynamic-problem loop: a generation clock driving the task parameter, a
//! degenerate task distribution at the current time, a FIFO window of past
//! evaluations, and per-generation acquisition fronts.

use serde::{Deserialize, Serialize};

use crate::acquisition::{build_pool, hypervolume, reference_point, select_batch, FrontScope};
use crate::error::{Error, Result};
use crate::metrics::{front_max, igd, migd, IGD_FRONT_SIZE};
use crate::pareto::nondominated_indices;
use crate::problems::{time_index, DynamicSpec, ParametricProblem};
use crate::psmodel::{Optimizer, ParametricPsModel};
use crate::runner::{audited_front, evaluate_into, fill_losses, Ablation, FrontRecord, LossRow, RunConfig, RunResult, Streams, TraceRow};
use crate::sampling::{sample_decision, space_filling_init};
use crate::surrogate::GaussianSurrogate;
use crate::trainer::{train_phase, TaskDistribution};
use crate::types::{BoxBounds, EvaluationArchive, TaskParameter};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicConfig {
    /// Severity of change `n_t`.
    pub severity: usize,
    /// Generations per environment `τ_t`.
    pub frequency: usize,
    /// Total generations `T_max`.
    pub generations: usize,
    /// FIFO capacity of the training window.
    pub window: usize,
    /// Evaluations per generation; defaults to the batch size.
    pub per_generation: Option<usize>,
    /// Inferred solutions per generation used for IGD / HV.
    pub front_size: usize,
    /// Analytic reference-front points for IGD.
    pub igd_points: usize,
}

impl Default for DynamicConfig {
    /// 20 environments, two generations each.
    fn default() -> Self {
        Self {
            severity: 20,
            frequency: 2,
            generations: 40,
            window: 200,
            per_generation: None,
            front_size: 200,
            igd_points: IGD_FRONT_SIZE,
        }
    }
}

impl DynamicConfig {
    /// Same clock with 200 evaluations per environment.
    pub fn dense() -> Self {
        Self { per_generation: Some(100), ..Self::default() }
    }

    pub fn spec(&self) -> DynamicSpec {
        DynamicSpec { severity: self.severity, frequency: self.frequency, max_generations: self.generations }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec().validate()?;
        if self.window == 0 || self.front_size == 0 || self.igd_points == 0 {
            return Err(Error::Config("window, front_size and igd_points must be at least 1".into()));
        }
        if self.per_generation == Some(0) {
            return Err(Error::Config("per_generation must be at least 1".into()));
        }
        Ok(())
    }
}

/// Time-averaged indicators of a dynamic run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicSummary {
    pub migd: f64,
    pub mhv: f64,
    pub igd: Vec<f64>,
    pub hv: Vec<f64>,
}

/// Every draw equals `t_now`.
pub fn degenerate_task_dist(t_now: f64) -> Result<TaskDistribution> {
    if !(0.0..=1.0).contains(&t_now) {
        return Err(Error::Domain(format!("normalized time {t_now} outside [0, 1]")));
    }
    Ok(TaskDistribution::Degenerate(TaskParameter::new(vec![t_now])))
}

pub struct DynamicRunState {
    /// Next generation to run.
    pub generation: usize,
    /// Environment time of the last generation run.
    pub t: f64,
    /// FIFO window the surrogate trains on.
    pub window: EvaluationArchive,
    /// All evaluations, append-only.
    pub history: EvaluationArchive,
    pub model: ParametricPsModel,
    pub optimizer: Optimizer,
    pub surrogate: Option<GaussianSurrogate>,
    pub log: Vec<TraceRow>,
    pub losses: Vec<LossRow>,
    pub fronts: Vec<FrontRecord>,
    pub igd: Vec<f64>,
    pub hv: Vec<f64>,
    counter_start: u64,
    /// Counter value after the initial design.
    initial_end: u64,
}

impl DynamicRunState {
    /// Evaluates the initial design in the first environment.
    fn init(cfg: &RunConfig, problem: &ParametricProblem, s: &mut Streams) -> Result<Self> {
        let spec = cfg.dynamic.spec();
        let t0 = time_index(&spec, 0);
        let counter_start = problem.evaluation_count();
        let mut window = EvaluationArchive::with_capacity(cfg.dynamic.window);
        let mut history = EvaluationArchive::new();
        let n0 = cfg.initial_size_for(problem.n(), problem.p());
        for (x, _) in space_filling_init(&mut s.init, n0, problem.decision_bounds(), &BoxBounds::empty())? {
            evaluate_into(problem, &mut window, &mut history, x, TaskParameter::new(vec![t0]), 0)?;
        }
        let initial_end = problem.evaluation_count();
        let model = ParametricPsModel::init(
            &cfg.model,
            problem.m(),
            problem.decision_bounds(),
            problem.parameter_bounds(),
            &mut s.model,
        )?;
        Ok(Self {
            generation: 0,
            t: t0,
            window,
            history,
            model,
            optimizer: Optimizer::new(cfg.train.optimizer),
            surrogate: None,
            log: Vec::new(),
            losses: Vec::new(),
            fronts: Vec::new(),
            igd: Vec::new(),
            hv: Vec::new(),
            counter_start,
            initial_end,
        })
    }
}

/// Records the surrogate may train on. `NoHistory` keeps only the latest
/// generation's batch (the initial design when nothing else exists yet).
fn training_set(window: &EvaluationArchive, ablation: Ablation, initial_end: u64) -> EvaluationArchive {
    match ablation {
        Ablation::NoHistory => {
            let latest = window.records().filter(|r| r.counter > initial_end).map(|r| r.iteration).max();
            match latest {
                Some(g) => window.filtered(|r| r.counter > initial_end && r.iteration == g),
                None => window.clone(),
            }
        }
        _ => window.clone(),
    }
}

/// Runs one generation: refit, train at the current time, select and
/// evaluate a batch in the current environment, then record IGD / HV.
pub(crate) fn step_generation(
    state: &mut DynamicRunState,
    problem: &ParametricProblem,
    cfg: &RunConfig,
    s: &mut Streams,
) -> Result<()> {
    let spec = cfg.dynamic.spec();
    let tau = state.generation;
    if tau >= spec.max_generations {
        return Err(Error::BudgetExhausted);
    }
    let t = time_index(&spec, tau);
    if t < state.t {
        return Err(Error::State(format!("time went backwards: {} -> {t}", state.t)));
    }
    state.t = t;
    let tp = TaskParameter::new(vec![t]);
    let batch = cfg.dynamic.per_generation.unwrap_or(cfg.batch_size);
    let mut row = TraceRow { iteration: tau, t: Some(t), ..TraceRow::default() };

    if cfg.ablation == Ablation::Random {
        for _ in 0..batch {
            let x = sample_decision(&mut s.random, problem.decision_bounds())?;
            evaluate_into(problem, &mut state.window, &mut state.history, x, tp.clone(), tau)?;
        }
    } else {
        let training = training_set(&state.window, cfg.ablation, state.initial_end);
        let max_it = training.records().map(|r| r.iteration).max();
        let max_t = training.records().map(|r| r.t[0]).fold(f64::NEG_INFINITY, f64::max);
        if max_it.is_some_and(|g| g > tau) || max_t > t {
            return Err(Error::State(format!("training record from the future at generation {tau}")));
        }
        row.training_size = training.len();
        row.max_training_iteration = max_it;
        row.max_training_t = Some(max_t);
        let gp = GaussianSurrogate::fit(
            &training,
            problem.decision_bounds(),
            problem.parameter_bounds(),
            &cfg.gp,
            &mut s.gp,
            state.surrogate.as_ref(),
        )?;
        let dist = degenerate_task_dist(t)?;
        let losses = train_phase(&mut state.model, &mut state.optimizer, &gp, &training, &cfg.train, &mut s.train, &dist)?;
        fill_losses(&mut row, &losses, &mut state.losses);
        let pool = build_pool(&state.model, &gp, &dist, cfg.pool_size.max(batch), batch, cfg.train.beta, &mut s.pool)?;
        let current: Vec<Vec<f64>> =
            state.window.records().filter(|r| r.iteration == tau).map(|r| r.y.to_vec()).collect();
        let r = reference_point(&current, &pool)?;
        let sel = select_batch(&pool, &state.window, batch, &r, FrontScope::Generation(tau))?;
        row.gp_mll = Some(gp.objectives().iter().map(|g| g.log_marginal_likelihood()).sum());
        row.batch_gain = Some(sel.gains.iter().sum());
        for &i in &sel.indices {
            let x = pool.entries[i].x.clone();
            evaluate_into(problem, &mut state.window, &mut state.history, x, tp.clone(), tau)?;
        }
        state.surrogate = Some(gp);
    }

    if problem.has_analytic_front() {
        let front = audited_front(problem, &state.model, &tp, cfg.dynamic.front_size, &format!("gen-{tau:03}"))?;
        let approx = current_front(&front, &state.window, t);
        let reference = problem.analytic_front(&tp, cfg.dynamic.igd_points)?;
        let igd_t = igd(&reference, &approx)?;
        let hv_t = hypervolume(&approx, &front_max(&reference)?)?;
        row.igd = Some(igd_t);
        row.hv = Some(hv_t);
        state.igd.push(igd_t);
        state.hv.push(hv_t);
        state.fronts.push(front);
    }
    row.evaluations = problem.evaluation_count() - state.counter_start;
    row.archive_size = state.window.len();
    state.log.push(row);
    state.generation += 1;
    Ok(())
}

/// Non-dominated union of the inferred front and the evaluations made in the
/// environment at time `t`.
pub fn current_front(front: &FrontRecord, window: &EvaluationArchive, t: f64) -> Vec<Vec<f64>> {
    let mut all: Vec<Vec<f64>> = front.objectives.iter().flatten().map(|y| y.to_vec()).collect();
    all.extend(window.records().filter(|r| r.t[0] == t).map(|r| r.y.to_vec()));
    nondominated_indices(&all).into_iter().map(|i| all[i].clone()).collect()
}

/// Runs every generation of a dynamic problem.
pub fn run_dynamic(cfg: &RunConfig, problem: &ParametricProblem) -> Result<RunResult> {
    run_dynamic_observed(cfg, problem, |_| Ok(()))
}

/// As [`run_dynamic`], calling `observe` with the state after each generation.
/// An error from `observe` aborts the run.
pub fn run_dynamic_observed(
    cfg: &RunConfig,
    problem: &ParametricProblem,
    mut observe: impl FnMut(&DynamicRunState) -> Result<()>,
) -> Result<RunResult> {
    cfg.dynamic.validate()?;
    let spec = cfg.dynamic.spec();
    let t_max = time_index(&spec, spec.max_generations - 1);
    let pb = problem.parameter_bounds();
    if problem.p() != 1 || pb.lower[0] > 0.0 || pb.upper[0] < t_max {
        return Err(Error::Config(format!(
            "dynamic mode needs a single time parameter covering [0, {t_max}], problem has {pb:?}"
        )));
    }
    let mut s = Streams::new(cfg.seed);
    let mut state = DynamicRunState::init(cfg, problem, &mut s)?;
    while state.generation < spec.max_generations {
        step_generation(&mut state, problem, cfg, &mut s)?;
        observe(&state)?;
        log::info!("generation {}/{}", state.generation, spec.max_generations);
    }
    let dynamic = if state.igd.is_empty() {
        None
    } else {
        Some(DynamicSummary {
            migd: migd(&state.igd)?,
            mhv: state.hv.iter().sum::<f64>() / state.hv.len() as f64,
            igd: state.igd.clone(),
            hv: state.hv.clone(),
        })
    };
    Ok(RunResult {
        config: cfg.clone(),
        evaluations: problem.evaluation_count() - state.counter_start,
        audits: problem.audit_count(),
        history: state.history,
        model: state.model,
        surrogate: state.surrogate,
        trace: state.log,
        losses: state.losses,
        metrics: Vec::new(),
        fronts: state.fronts,
        held_out: Vec::new(),
        dynamic,
    })
}
