//! On-disk formats of a run: archive, trace and front CSVs, JSON checkpoint
//! and manifest. Floats are written with 17 significant digits; every file
//! is written to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::psmodel::ParametricPsModel;
use crate::runner::{FrontRecord, LossRow, MetricRow, RunConfig, RunResult, TraceRow};
use crate::surrogate::{GaussianSurrogate, SurrogateCheckpoint};
use crate::types::{
    DecisionVector, EvaluationArchive, EvaluationRecord, ObjectiveVector, PreferenceVector, TaskParameter,
};

pub const ARCHIVE_FILE: &str = "archive.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LOSSES_FILE: &str = "losses.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRONTS_DIR: &str = "fronts";
pub const FRONT_INDEX_FILE: &str = "index.csv";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Domain(format!("cannot parse {what} value {s:?}")))
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(s, what).map(Some)
    }
}

fn parse_int<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse::<T>().map_err(|_| Error::Domain(format!("cannot parse {what} value {s:?}")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Writes `bytes` to a temporary file next to `path` and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

fn numbered(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (0..k).map(move |i| format!("{prefix}{i}"))
}

fn count_prefix(header: &[String], prefix: &str) -> usize {
    header.iter().filter(|h| h.strip_prefix(prefix).is_some_and(|r| r.parse::<usize>().is_ok())).count()
}

/// Columns `x0.., t0.., y0.., iteration, counter`.
pub fn archive_csv(archive: &EvaluationArchive) -> Result<Vec<u8>> {
    let (n, p, m) = archive.dims().unwrap_or((0, 0, 0));
    let mut header: Vec<String> = numbered("x", n).chain(numbered("t", p)).chain(numbered("y", m)).collect();
    header.push("iteration".into());
    header.push("counter".into());
    csv_bytes(
        &header,
        archive.records().map(|r| {
            let mut row: Vec<String> = r.x.iter().chain(r.t.iter()).chain(r.y.iter()).map(|v| fmt_f64(*v)).collect();
            row.push(r.iteration.to_string());
            row.push(r.counter.to_string());
            row
        }),
    )
}

pub fn read_archive_csv(path: &Path) -> Result<EvaluationArchive> {
    let (header, rows) = read_csv(path)?;
    let (n, p, m) = (count_prefix(&header, "x"), count_prefix(&header, "t"), count_prefix(&header, "y"));
    if header.len() != n + p + m + 2 {
        return Err(Error::Domain(format!("unexpected archive header {header:?}")));
    }
    let mut archive = EvaluationArchive::new();
    for row in rows {
        let vals = (0..n + p + m).map(|i| parse_f64(&row[i], "archive")).collect::<Result<Vec<f64>>>()?;
        archive.push(EvaluationRecord {
            x: DecisionVector::new(vals[..n].to_vec()),
            t: TaskParameter::new(vals[n..n + p].to_vec()),
            y: ObjectiveVector::new(vals[n + p..].to_vec())?,
            iteration: parse_int(&row[n + p + m], "iteration")?,
            counter: parse_int(&row[n + p + m + 1], "counter")?,
        })?;
    }
    Ok(archive)
}

const TRACE_HEADER: [&str; 14] = [
    "iteration",
    "t",
    "evaluations",
    "archive_size",
    "training_size",
    "loss_first",
    "loss_last",
    "loss_mean",
    "gp_mll",
    "batch_gain",
    "max_training_iteration",
    "max_training_t",
    "igd",
    "hv",
];

pub fn trace_csv(rows: &[TraceRow]) -> Result<Vec<u8>> {
    let header: Vec<String> = TRACE_HEADER.iter().map(|s| s.to_string()).collect();
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                fmt_opt(r.t),
                r.evaluations.to_string(),
                r.archive_size.to_string(),
                r.training_size.to_string(),
                fmt_opt(r.loss_first),
                fmt_opt(r.loss_last),
                fmt_opt(r.loss_mean),
                fmt_opt(r.gp_mll),
                fmt_opt(r.batch_gain),
                r.max_training_iteration.map(|v| v.to_string()).unwrap_or_default(),
                fmt_opt(r.max_training_t),
                fmt_opt(r.igd),
                fmt_opt(r.hv),
            ]
        }),
    )
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let (header, rows) = read_csv(path)?;
    if header != TRACE_HEADER {
        return Err(Error::Domain(format!("unexpected trace header {header:?}")));
    }
    rows.iter()
        .map(|r| {
            Ok(TraceRow {
                iteration: parse_int(&r[0], "iteration")?,
                t: parse_opt(&r[1], "t")?,
                evaluations: parse_int(&r[2], "evaluations")?,
                archive_size: parse_int(&r[3], "archive_size")?,
                training_size: parse_int(&r[4], "training_size")?,
                loss_first: parse_opt(&r[5], "loss_first")?,
                loss_last: parse_opt(&r[6], "loss_last")?,
                loss_mean: parse_opt(&r[7], "loss_mean")?,
                gp_mll: parse_opt(&r[8], "gp_mll")?,
                batch_gain: parse_opt(&r[9], "batch_gain")?,
                max_training_iteration: if r[10].is_empty() { None } else { Some(parse_int(&r[10], "max_training_iteration")?) },
                max_training_t: parse_opt(&r[11], "max_training_t")?,
                igd: parse_opt(&r[12], "igd")?,
                hv: parse_opt(&r[13], "hv")?,
            })
        })
        .collect()
}

/// Columns `iteration, step, loss`.
pub fn losses_csv(rows: &[LossRow]) -> Result<Vec<u8>> {
    let header = ["iteration", "step", "loss"].map(String::from);
    csv_bytes(&header, rows.iter().map(|r| vec![r.iteration.to_string(), r.step.to_string(), fmt_f64(r.loss)]))
}

pub fn read_losses_csv(path: &Path) -> Result<Vec<LossRow>> {
    let (_, rows) = read_csv(path)?;
    rows.iter()
        .map(|r| {
            Ok(LossRow {
                iteration: parse_int(&r[0], "iteration")?,
                step: parse_int(&r[1], "step")?,
                loss: parse_f64(&r[2], "loss")?,
            })
        })
        .collect()
}

/// Columns `iteration, task, hv, hv_optimum`.
pub fn metrics_csv(rows: &[MetricRow]) -> Result<Vec<u8>> {
    let header = ["iteration", "task", "hv", "hv_optimum"].map(String::from);
    csv_bytes(
        &header,
        rows.iter().map(|r| vec![r.iteration.to_string(), r.task.to_string(), fmt_f64(r.hv), fmt_f64(r.hv_optimum)]),
    )
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let (_, rows) = read_csv(path)?;
    rows.iter()
        .map(|r| {
            Ok(MetricRow {
                iteration: parse_int(&r[0], "iteration")?,
                task: parse_int(&r[1], "task")?,
                hv: parse_f64(&r[2], "hv")?,
                hv_optimum: parse_f64(&r[3], "hv_optimum")?,
            })
        })
        .collect()
}

/// Columns `lambda0.., x0..` and, when audited, `y0..`.
pub fn front_csv(front: &FrontRecord) -> Result<Vec<u8>> {
    let m = front.preferences.first().map_or(0, |p| p.len());
    let n = front.decisions.first().map_or(0, |x| x.len());
    let my = front.objectives.as_ref().and_then(|ys| ys.first()).map_or(0, |y| y.len());
    let header: Vec<String> = numbered("lambda", m).chain(numbered("x", n)).chain(numbered("y", my)).collect();
    csv_bytes(
        &header,
        (0..front.preferences.len()).map(|i| {
            let mut row: Vec<String> =
                front.preferences[i].iter().chain(front.decisions[i].iter()).map(|v| fmt_f64(*v)).collect();
            if let Some(ys) = &front.objectives {
                row.extend(ys[i].iter().map(|v| fmt_f64(*v)));
            }
            row
        }),
    )
}

pub fn read_front_csv(path: &Path, label: &str, t: TaskParameter) -> Result<FrontRecord> {
    let (header, rows) = read_csv(path)?;
    let (m, n, my) = (count_prefix(&header, "lambda"), count_prefix(&header, "x"), count_prefix(&header, "y"));
    let mut front = FrontRecord {
        label: label.to_string(),
        t,
        preferences: Vec::new(),
        decisions: Vec::new(),
        objectives: (my > 0).then(Vec::new),
    };
    for row in rows {
        let vals = (0..m + n + my).map(|i| parse_f64(&row[i], "front")).collect::<Result<Vec<f64>>>()?;
        front.preferences.push(PreferenceVector::new(vals[..m].to_vec())?);
        front.decisions.push(DecisionVector::new(vals[m..m + n].to_vec()));
        if let Some(ys) = &mut front.objectives {
            ys.push(ObjectiveVector::new(vals[m + n..].to_vec())?);
        }
    }
    Ok(front)
}

/// Columns `file, t0..`: which task parameter each front file belongs to.
pub fn front_index_csv(fronts: &[FrontRecord]) -> Result<Vec<u8>> {
    let p = fronts.first().map_or(0, |f| f.t.len());
    let header: Vec<String> = std::iter::once("file".to_string()).chain(numbered("t", p)).collect();
    csv_bytes(
        &header,
        fronts.iter().map(|f| std::iter::once(format!("{}.csv", f.label)).chain(f.t.iter().map(|v| fmt_f64(*v))).collect()),
    )
}

/// Reads every front listed in `fronts/index.csv`, in index order.
pub fn read_fronts(dir: &Path) -> Result<Vec<FrontRecord>> {
    let index = dir.join(FRONT_INDEX_FILE);
    if !index.exists() {
        return Err(Error::Domain(format!("no front index at {}", index.display())));
    }
    let (header, rows) = read_csv(&index)?;
    let p = count_prefix(&header, "t");
    let fronts = rows
        .iter()
        .map(|r| {
            let file = r[0].to_string();
            let t = (0..p).map(|i| parse_f64(&r[i + 1], "t")).collect::<Result<Vec<f64>>>()?;
            let label = file.trim_end_matches(".csv");
            read_front_csv(&dir.join(&file), label, TaskParameter::new(t))
        })
        .collect::<Result<Vec<_>>>()?;
    if fronts.is_empty() {
        return Err(Error::Domain(format!("front index {} lists no fronts", index.display())));
    }
    Ok(fronts)
}

/// Trained state of a run, sufficient for inference.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub problem: String,
    pub shared: Option<Vec<usize>>,
    pub model: ParametricPsModel,
    pub surrogate: Option<SurrogateCheckpoint>,
    pub held_out: Vec<TaskParameter>,
}

impl Checkpoint {
    pub fn from_run(result: &RunResult) -> Self {
        Self {
            problem: result.config.problem.clone(),
            shared: result.config.shared.clone(),
            model: result.model.clone(),
            surrogate: result.surrogate.as_ref().map(GaussianSurrogate::to_checkpoint),
            held_out: result.held_out.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_slice(&fs::read(path)?)?;
        c.model.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub seed: u64,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub status: String,
    pub error: Option<String>,
    pub evaluations: Option<u64>,
    pub audits: Option<u64>,
    pub migd: Option<f64>,
    pub mhv: Option<f64>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Directory name derived from the configuration (which includes the seed).
pub fn run_dir_name(cfg: &RunConfig) -> Result<String> {
    let json = serde_json::to_vec(cfg)?;
    let mode = serde_json::to_value(cfg.mode)?;
    Ok(format!("{}-{}-{}", cfg.problem, mode.as_str().unwrap_or("run"), &sha256_hex(&json)[..16]))
}

/// Writes all artifacts of a finished run into `dir` and returns the manifest.
pub fn write_run(result: &RunResult, dir: &Path, started_unix: u64) -> Result<RunManifest> {
    let mut files: Vec<(PathBuf, Vec<u8>)> = vec![
        (PathBuf::from(ARCHIVE_FILE), archive_csv(&result.history)?),
        (PathBuf::from(TRACE_FILE), trace_csv(&result.trace)?),
        (PathBuf::from(LOSSES_FILE), losses_csv(&result.losses)?),
        (PathBuf::from(CHECKPOINT_FILE), serde_json::to_vec_pretty(&Checkpoint::from_run(result))?),
    ];
    if !result.metrics.is_empty() {
        files.push((PathBuf::from(METRICS_FILE), metrics_csv(&result.metrics)?));
    }
    let fronts = Path::new(FRONTS_DIR);
    files.push((fronts.join(FRONT_INDEX_FILE), front_index_csv(&result.fronts)?));
    for f in &result.fronts {
        files.push((fronts.join(format!("{}.csv", f.label)), front_csv(f)?));
    }
    let mut entries = Vec::with_capacity(files.len());
    for (rel, bytes) in &files {
        write_atomic(&dir.join(rel), bytes)?;
        entries.push(FileEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }
    let manifest = RunManifest {
        config: result.config.clone(),
        seed: result.config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix,
        finished_unix: unix_now(),
        status: "complete".into(),
        error: None,
        evaluations: Some(result.evaluations),
        audits: Some(result.audits),
        migd: result.dynamic.as_ref().map(|d| d.migd),
        mhv: result.dynamic.as_ref().map(|d| d.mhv),
        files: entries,
    };
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Records a failed run in `dir`.
pub fn write_failure(cfg: &RunConfig, dir: &Path, started_unix: u64, error: &str) -> Result<RunManifest> {
    let manifest = RunManifest {
        config: cfg.clone(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix,
        finished_unix: unix_now(),
        status: "failed".into(),
        error: Some(error.to_string()),
        evaluations: None,
        audits: None,
        migd: None,
        mhv: None,
        files: Vec::new(),
    };
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
