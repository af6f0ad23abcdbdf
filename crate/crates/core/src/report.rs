//! Recomputes quality indicators from the files of a finished run.

use std::path::Path;

use crate::dynamic::current_front;
use crate::error::{Error, Result};
use crate::metrics::{front_max, igd, migd, normalized_hv, NormalizationSpec, NORMALIZATION_FRONT_SIZE};
use crate::acquisition::hypervolume;
use crate::persist::{
    csv_bytes, fmt_f64, read_archive_csv, read_fronts, RunManifest, ARCHIVE_FILE, FRONTS_DIR, MANIFEST_FILE,
};
use crate::problems::{ParametricProblem, ProblemRegistry};
use crate::runner::{FrontRecord, Mode};
use crate::types::EvaluationArchive;

/// One recomputed value. `index` is the held-out task (static) or the
/// generation (dynamic); summary rows carry no index.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub metric: String,
    pub index: Option<usize>,
    pub value: f64,
}

impl EvalRow {
    fn new(metric: &str, index: Option<usize>, value: f64) -> Self {
        Self { metric: metric.to_string(), index, value }
    }
}

pub fn eval_csv(rows: &[EvalRow]) -> Result<Vec<u8>> {
    let header = ["metric", "index", "value"].map(String::from);
    csv_bytes(
        &header,
        rows.iter().map(|r| vec![r.metric.clone(), r.index.map(|i| i.to_string()).unwrap_or_default(), fmt_f64(r.value)]),
    )
}

/// Reads `dir` and recomputes its metrics. Missing inputs are all reported
/// in one error.
pub fn evaluate_run(dir: &Path, registry: &ProblemRegistry) -> Result<Vec<EvalRow>> {
    let missing: Vec<String> = [MANIFEST_FILE, ARCHIVE_FILE, FRONTS_DIR]
        .iter()
        .filter(|f| !dir.join(f).exists())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Domain(format!("{} is missing {}", dir.display(), missing.join(", "))));
    }
    let manifest = RunManifest::load(&dir.join(MANIFEST_FILE))?;
    let fronts = read_fronts(&dir.join(FRONTS_DIR))?;
    let problem = manifest.config.problem(registry)?;
    if !problem.has_analytic_front() {
        return Err(Error::Unsupported(format!("problem {} has no analytic front", problem.name())));
    }
    match manifest.config.mode {
        Mode::Static => static_rows(&problem, &fronts),
        Mode::Dynamic => {
            let history = read_archive_csv(&dir.join(ARCHIVE_FILE))?;
            dynamic_rows(&problem, &fronts, &history, manifest.config.dynamic.window, manifest.config.dynamic.igd_points)
        }
    }
}

fn audited(front: &FrontRecord) -> Result<&[crate::types::ObjectiveVector]> {
    front
        .objectives
        .as_deref()
        .ok_or_else(|| Error::Domain(format!("front {} has no objective columns", front.label)))
}

/// Normalized HV of each logged front.
pub fn static_rows(problem: &ParametricProblem, fronts: &[FrontRecord]) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for (i, f) in fronts.iter().enumerate() {
        let reference = problem.analytic_front(&f.t, NORMALIZATION_FRONT_SIZE)?;
        let spec = NormalizationSpec::from_front(&reference)?;
        rows.push(EvalRow::new("hv", Some(i), normalized_hv(audited(f)?, &spec)?));
        rows.push(EvalRow::new("hv_optimum", Some(i), normalized_hv(&reference, &spec)?));
    }
    Ok(rows)
}

fn generation_of(label: &str) -> Result<usize> {
    label
        .strip_prefix("gen-")
        .and_then(|g| g.parse().ok())
        .ok_or_else(|| Error::Domain(format!("front label {label:?} does not name a generation")))
}

/// The FIFO window as it stood after generation `tau`.
pub fn window_at(history: &EvaluationArchive, capacity: usize, tau: usize) -> Result<EvaluationArchive> {
    let mut window = EvaluationArchive::with_capacity(capacity);
    for r in history.records().filter(|r| r.iteration <= tau) {
        window.push(r.clone())?;
    }
    Ok(window)
}

/// Per-generation IGD and HV, then MIGD and MHV.
pub fn dynamic_rows(
    problem: &ParametricProblem,
    fronts: &[FrontRecord],
    history: &EvaluationArchive,
    window: usize,
    igd_points: usize,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    let (mut igds, mut hvs) = (Vec::new(), Vec::new());
    for f in fronts {
        let tau = generation_of(&f.label)?;
        audited(f)?;
        let w = window_at(history, window, tau)?;
        let approx = current_front(f, &w, f.t[0]);
        let reference = problem.analytic_front(&f.t, igd_points)?;
        let igd_t = igd(&reference, &approx)?;
        let hv_t = hypervolume(&approx, &front_max(&reference)?)?;
        rows.push(EvalRow::new("igd", Some(tau), igd_t));
        rows.push(EvalRow::new("hv", Some(tau), hv_t));
        igds.push(igd_t);
        hvs.push(hv_t);
    }
    rows.push(EvalRow::new("migd", None, migd(&igds)?));
    rows.push(EvalRow::new("mhv", None, hvs.iter().sum::<f64>() / hvs.len() as f64));
    Ok(rows)
}
