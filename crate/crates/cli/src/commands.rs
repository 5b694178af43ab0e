use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use evoskip::bench::{length_sweep, measure_run, sparsity_runtime_tradeoff, write_csv, CsvRow, RunReport};
use evoskip::calibration::{calibrate_with, dense_outputs};
use evoskip::harness::{
    bound_check_experiment, generate_trajectory, perturbation_experiment, persistence_experiment, ExperimentRecord,
    Propagation,
};
use evoskip::skip::MaskSnapshot;
use evoskip::{format, AttentionEngine, ErrorBoundSpec, Execution, SkipMode, ThresholdSchedule, Trajectory};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::{invalid, Command, Experiment};

pub enum Status {
    Done,
    /// Calibration finished but some timesteps could not meet their bound.
    Flagged,
}

pub fn dispatch(command: &Command, cfg: &Config) -> Result<Status> {
    match command {
        Command::Generate => generate(cfg),
        Command::Run => run(cfg),
        Command::Calibrate => calibrate(cfg),
        Command::Experiment { name } => experiment(*name, cfg),
        Command::Report { paths } => report(cfg, paths),
    }
}

fn execution(cfg: &Config) -> Result<Execution> {
    if cfg.workers == 1 {
        return Ok(Execution::Sequential);
    }
    if cfg.workers > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(Execution::Parallel)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn out_dir(cfg: &Config) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_rows(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    write_csv(std::io::BufWriter::new(file), rows)?;
    Ok(())
}

#[derive(Serialize)]
struct InputInfo {
    path: PathBuf,
    sha256: String,
}

/// The trajectory named by `input`, or a freshly generated one.
fn trajectory(cfg: &Config) -> Result<(Trajectory, Option<InputInfo>)> {
    let Some(path) = &cfg.input else {
        return Ok((generate_trajectory(&cfg.trajectory)?, None));
    };
    let traj = format::load(path).with_context(|| format!("loading {}", path.display()))?;
    let t = &cfg.trajectory;
    let expected = (t.steps, t.layers, t.heads, t.n, t.d);
    let found = (traj.len(), traj.layers(), traj.heads(), traj.n(), traj.d());
    if expected != found {
        return Err(invalid(format!(
            "{} has (T, layers, heads, n, d) = {found:?} but the configuration says {expected:?}",
            path.display()
        )));
    }
    let sha256 = sha256_file(path)?;
    Ok((traj, Some(InputInfo { path: path.clone(), sha256 })))
}

fn engine(cfg: &Config) -> Result<AttentionEngine> {
    Ok(AttentionEngine::new(cfg.geometry()?, cfg.ordering).with_execution(execution(cfg)?))
}

fn generate(cfg: &Config) -> Result<Status> {
    let traj = generate_trajectory(&cfg.trajectory)?;
    let path = out_dir(cfg)?.join("trajectory.latn");
    format::save(&path, &traj)?;
    let bytes = fs::metadata(&path)?.len();
    println!("{}  sha256:{}  bytes:{bytes}", path.display(), sha256_file(&path)?);
    Ok(Status::Done)
}

/// Schedule file written by `calibrate`.
#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    eps: ThresholdSchedule,
    xi: f64,
    tau: f64,
    grid: Vec<f64>,
    seed: u64,
    flagged: Vec<usize>,
    bounds: Vec<f64>,
    eta: Vec<f64>,
    config: Value,
}

/// Accepts a schedule file or a bare JSON array of thresholds.
fn load_schedule(path: &Path) -> Result<ThresholdSchedule> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| invalid(format!("schedule {}: {e}", path.display())))?;
    let eps = match value {
        Value::Object(mut map) => map.remove("eps").ok_or_else(|| invalid("schedule file has no `eps` array"))?,
        other => other,
    };
    serde_json::from_value(eps).map_err(|e| invalid(format!("schedule {}: {e}", path.display())))
}

fn run(cfg: &Config) -> Result<Status> {
    let schedule = cfg.schedule.as_deref().map(load_schedule).transpose()?;
    let mode = cfg.skip_mode();
    if schedule.is_some() && mode == SkipMode::Dense {
        return Err(invalid("a schedule needs mode pv or qk"));
    }
    let (traj, input) = trajectory(cfg)?;
    if let Some(s) = &schedule {
        if s.len() != traj.len() {
            return Err(invalid(format!("schedule has {} thresholds for T={}", s.len(), traj.len())));
        }
    }
    let engine = engine(cfg)?;
    let dense = dense_outputs(&traj, engine.execution());
    let report = measure_run(&engine, &traj, mode, schedule.as_ref(), cfg.reps, Some(&dense))?;

    // one more pass to record how the mask evolves
    let mut evolution: Vec<MaskSnapshot> = Vec::new();
    let mode_at = |t: usize| match (mode, &schedule) {
        (SkipMode::Pv { .. }, Some(s)) => SkipMode::Pv { epsilon: s.eps()[t] },
        (SkipMode::Qk { .. }, Some(s)) => SkipMode::Qk { epsilon: s.eps()[t] },
        _ => mode,
    };
    let seq = engine.run_sequence_observed(&traj, mode_at, |_, _, mask| evolution.push(mask.snapshot()))?;

    let dir = out_dir(cfg)?;
    write_json(
        &dir.join("report.json"),
        &json!({
            "command": "run",
            "config": cfg,
            "input": input,
            "schedule": schedule,
            "report": report,
        }),
    )?;
    write_rows(&dir.join("run.csv"), &[report.csv_row()])?;
    write_json(&dir.join("mask_final.json"), &seq.mask.snapshot())?;
    write_json(&dir.join("mask_evolution.json"), &evolution)?;
    println!("{}", summary_line(&report));
    Ok(Status::Done)
}

fn summary_line(r: &RunReport) -> String {
    let eps = r.epsilon.map_or("-".to_string(), |e| e.to_string());
    format!(
        "mode={} ordering={} epsilon={eps} n={} d={} T={} sparsity={:.4} eta_final={:.3e} wall={:.3}s workers={} degenerate_rows={}",
        r.mode,
        r.ordering,
        r.n,
        r.d,
        r.steps,
        r.sparsity(),
        r.eta_final(),
        r.wall_seconds,
        r.workers,
        r.degenerate_rows
    )
}

fn calibrate(cfg: &Config) -> Result<Status> {
    let (traj, _) = trajectory(cfg)?;
    let spec = ErrorBoundSpec::new(cfg.xi, cfg.tau, traj.len())?;
    let cal = calibrate_with(&engine(cfg)?, &traj, &cfg.grid, &spec)?;
    let file = ScheduleFile {
        eps: cal.schedule.clone(),
        xi: cfg.xi,
        tau: cfg.tau,
        grid: cfg.grid.clone(),
        seed: cfg.trajectory.seed,
        flagged: cal.flagged.clone(),
        bounds: cal.bounds.clone(),
        eta: cal.eta.clone(),
        config: serde_json::to_value(cfg)?,
    };
    let path = out_dir(cfg)?.join("schedule.json");
    write_json(&path, &file)?;
    println!("{}  eps={:?}", path.display(), cal.schedule.eps());
    if cal.flagged.is_empty() {
        Ok(Status::Done)
    } else {
        eprintln!("warning: no grid value met the bound at timesteps {:?}", cal.flagged);
        Ok(Status::Flagged)
    }
}

fn experiment(name: Experiment, cfg: &Config) -> Result<Status> {
    let dir = out_dir(cfg)?.to_path_buf();
    let metrics = match name {
        Experiment::Persistence => {
            let (traj, _) = trajectory(cfg)?;
            let report = persistence_experiment(&engine(cfg)?, &traj, cfg.epsilon, &cfg.deltas)?;
            println!(
                "{} probes, {} with persisted <= base rate",
                report.points.len(),
                report.incoherent_points().len()
            );
            serde_json::to_value(report)?
        }
        Experiment::Perturbation => {
            let (traj, _) = trajectory(cfg)?;
            let propagation = Propagation {
                coupling: cfg.coupling,
                seed: Propagation::default().seed.wrapping_add(cfg.trajectory.seed),
            };
            let points = perturbation_experiment(&engine(cfg)?, &traj, &cfg.inject, cfg.epsilon_inject, &propagation)?;
            for p in &points {
                println!("inject t={} eta_inject={:.4e} eta_final={:.4e}", p.inject_t, p.eta_inject, p.eta_final);
            }
            serde_json::to_value(points)?
        }
        Experiment::LengthSweep => {
            let points = length_sweep(
                &cfg.trajectory,
                (cfg.h_q, cfg.h_k),
                &cfg.ns,
                cfg.skip_mode(),
                cfg.ordering,
                execution(cfg)?,
                cfg.reps,
            )?;
            let rows: Vec<CsvRow> = points.iter().map(|p| p.report.csv_row()).collect();
            write_rows(&dir.join("length_sweep.csv"), &rows)?;
            for p in &points {
                println!("n={} final_sparsity={:.4} wall={:.3}s", p.n, p.final_sparsity, p.wall_seconds);
            }
            serde_json::to_value(points)?
        }
        Experiment::Tradeoff => {
            let (traj, _) = trajectory(cfg)?;
            let table = sparsity_runtime_tradeoff(&engine(cfg)?, &traj, &cfg.grid, cfg.reps)?;
            let rows: Vec<CsvRow> = table.rows.iter().map(|r| r.report.csv_row()).collect();
            write_rows(&dir.join("tradeoff.csv"), &rows)?;
            for r in &table.rows {
                println!(
                    "epsilon={} sparsity={:.4} wall_reduction={:.4} eta_final={:.3e}",
                    r.epsilon, r.sparsity, r.wall_reduction, r.eta_final
                );
            }
            serde_json::to_value(table)?
        }
        Experiment::BoundCheck => {
            let summary = bound_check_experiment(cfg.trials, cfg.trajectory.seed)?;
            println!("{} trials, {} violations", summary.trials, summary.violations);
            serde_json::to_value(summary)?
        }
    };
    let record = ExperimentRecord {
        experiment: name.name().to_string(),
        config: serde_json::to_value(cfg)?,
        seed: Some(cfg.trajectory.seed),
        metrics,
    };
    write_json(&dir.join(format!("{}.json", name.name())), &record)?;
    Ok(Status::Done)
}

fn report(cfg: &Config, paths: &[PathBuf]) -> Result<Status> {
    let paths = if paths.is_empty() {
        let mut found: Vec<PathBuf> = fs::read_dir(&cfg.out)
            .with_context(|| format!("listing {}", cfg.out.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        found.sort();
        found
    } else {
        paths.to_vec()
    };
    for path in &paths {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        println!("{}: {}", path.display(), describe(&value));
    }
    Ok(Status::Done)
}

fn describe(value: &Value) -> String {
    if let Some(report) = value.get("report") {
        return match serde_json::from_value::<RunReport>(report.clone()) {
            Ok(r) => format!("run {}", summary_line(&r)),
            Err(_) => "unrecognised run report".to_string(),
        };
    }
    if let Some(name) = value.get("experiment").and_then(Value::as_str) {
        let metrics = &value["metrics"];
        let detail = match name {
            "bound-check" => format!("{} trials, {} violations", metrics["trials"], metrics["violations"]),
            "persistence" => {
                let points = metrics["points"].as_array().map_or(0, Vec::len);
                format!("{points} probes at epsilon {}", metrics["epsilon"])
            }
            "tradeoff" => format!("{} rows", metrics["rows"].as_array().map_or(0, Vec::len)),
            _ => format!("{} points", metrics.as_array().map_or(0, Vec::len)),
        };
        return format!("experiment {name}: {detail}");
    }
    if value.get("eps").is_some() && value.get("xi").is_some() {
        return format!("schedule eps={} flagged={}", value["eps"], value["flagged"]);
    }
    if value.get("slices").is_some() {
        return format!("mask snapshot sparsity={}", value["sparsity"]);
    }
    if let Some(steps) = value.as_array() {
        return format!("mask evolution over {} steps", steps.len());
    }
    "unrecognised JSON".to_string()
}
