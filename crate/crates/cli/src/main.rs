use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::{info, warn};

use ppsl::persist::{
    self, csv_bytes, fmt_f64, front_csv, run_dir_name, unix_now, write_atomic, write_failure, write_run, Checkpoint,
};
use ppsl::problems::ProblemRegistry;
use ppsl::report::{eval_csv, evaluate_run};
use ppsl::runner::{infer_front_unchecked, run, FrontRecord, RunConfig};
use ppsl::types::TaskParameter;

/// Exit code for configuration and usage errors.
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "ppsl", version, about = "Parametric Pareto set learning with Bayesian optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimization described by a JSON config.
    Run {
        config: PathBuf,
        /// Parent directory of the run directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Infer fronts from a checkpoint at new task parameters.
    Infer {
        checkpoint: PathBuf,
        /// Comma-separated task parameters; components of one parameter are separated by ':'.
        #[arg(long = "t", allow_hyphen_values = true)]
        t: String,
        /// Solutions per front.
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Output directory [default: `infer` next to the checkpoint].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics of a finished run into `<run_dir>/eval/metrics.csv`.
    Eval { run_dir: PathBuf },
}

/// Error that maps to [`EXIT_CONFIG`].
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => cmd_run(&config, &out),
        Command::Infer { checkpoint, t, k, out } => cmd_infer(&checkpoint, &t, k, out),
        Command::Eval { run_dir } => cmd_eval(&run_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

/// Parses and validates a config file without side effects.
fn load_config(path: &Path, registry: &ProblemRegistry) -> anyhow::Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
        ConfigError(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    })?;
    cfg.problem(registry).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn cmd_run(config: &Path, out: &Path) -> anyhow::Result<()> {
    let registry = ProblemRegistry::with_builtins();
    let cfg = load_config(config, &registry)?;
    let dir = out.join(run_dir_name(&cfg)?);
    if dir.join(persist::MANIFEST_FILE).exists() {
        bail!("{} already holds a run; remove it or choose another --out", dir.display());
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    info!("writing to {}", dir.display());
    let started = unix_now();
    let clock = Instant::now();
    match run(&cfg, &registry) {
        Ok(result) => {
            let manifest = write_run(&result, &dir, started)?;
            info!(
                "{} evaluations, {} audits, {:.1} s",
                manifest.evaluations.unwrap_or(0),
                manifest.audits.unwrap_or(0),
                clock.elapsed().as_secs_f64()
            );
            if let (Some(migd), Some(mhv)) = (manifest.migd, manifest.mhv) {
                info!("MIGD {migd:.6}, MHV {mhv:.6}");
            }
            println!("{}", dir.display());
            Ok(())
        }
        Err(e) => {
            write_failure(&cfg, &dir, started, &e.to_string())?;
            Err(anyhow::Error::new(e).context(format!("run failed; see {}", dir.join(persist::MANIFEST_FILE).display())))
        }
    }
}

fn parse_tasks(spec: &str, p: usize) -> anyhow::Result<Vec<TaskParameter>> {
    spec.split(',')
        .map(|item| {
            let v = item
                .split(':')
                .map(|c| c.trim().parse::<f64>().with_context(|| format!("bad task component {c:?}")))
                .collect::<anyhow::Result<Vec<f64>>>()?;
            if v.len() != p {
                bail!("task {item:?} has {} components, the model expects {p}", v.len());
            }
            Ok(TaskParameter::new(v))
        })
        .collect()
}

fn cmd_infer(checkpoint: &Path, t: &str, k: usize, out: Option<PathBuf>) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let model = &ckpt.model;
    let tasks = parse_tasks(t, model.p()).map_err(|e| ConfigError(format!("{e:#}")))?;
    if k == 0 {
        return Err(ConfigError("--k must be at least 1".into()).into());
    }
    let problem = ProblemRegistry::with_builtins().create_with_shared(&ckpt.problem, ckpt.shared.as_deref()).ok();
    let out = out.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join("infer"));
    let mut index = Vec::with_capacity(tasks.len());
    for (i, t) in tasks.into_iter().enumerate() {
        let extrapolated = !model.parameter_bounds().contains(&t);
        if extrapolated {
            warn!("t = {:?} lies outside the trained parameter box; extrapolating", t.as_slice());
        }
        let clock = Instant::now();
        let pairs = infer_front_unchecked(model, &t, k)?;
        let ms = clock.elapsed().as_secs_f64() * 1e3;
        info!("inferred {} solutions at t = {:?} in {ms:.2} ms", pairs.len(), t.as_slice());
        let (preferences, decisions): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let objectives = problem.as_ref().and_then(|p| {
            decisions.iter().map(|x| p.audit(x, &t)).collect::<ppsl::Result<Vec<_>>>().ok()
        });
        let label = format!("front-{i:02}");
        let front = FrontRecord { label: label.clone(), t: t.clone(), preferences, decisions, objectives };
        write_atomic(&out.join(format!("{label}.csv")), &front_csv(&front)?)?;
        let mut row = vec![format!("{label}.csv")];
        row.extend(t.iter().map(|v| fmt_f64(*v)));
        row.push(extrapolated.to_string());
        row.push(format!("{ms:.3}"));
        index.push(row);
    }
    let p = model.p();
    let mut header = vec!["file".to_string()];
    header.extend((0..p).map(|i| format!("t{i}")));
    header.push("extrapolated".into());
    header.push("wall_ms".into());
    write_atomic(&out.join(persist::FRONT_INDEX_FILE), &csv_bytes(&header, index)?)?;
    println!("{}", out.display());
    Ok(())
}

fn cmd_eval(run_dir: &Path) -> anyhow::Result<()> {
    let rows = evaluate_run(run_dir, &ProblemRegistry::with_builtins())
        .with_context(|| format!("evaluating {}", run_dir.display()))?;
    let path = run_dir.join("eval").join(persist::METRICS_FILE);
    write_atomic(&path, &eval_csv(&rows)?)?;
    for r in rows.iter().filter(|r| r.index.is_none()) {
        println!("{} {:.12}", r.metric, r.value);
    }
    println!("{}", path.display());
    Ok(())
}
