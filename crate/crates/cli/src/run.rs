//! Subcommand execution. Work runs on the worker pool; only this coordinator
//! writes files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use traceprint::coarsen::{CoarseningSpec, Mode};
use traceprint::features::{quantize_features, windowed_features};
use traceprint::geo::TemporalScale;
use traceprint::reident::{trace_reduction_experiment, tune_tau, AccuracyConfig, TuneConfig};
use traceprint::separability::{agsi, separability_cdf};
use traceprint::synth::generate;
use traceprint::trace::{
    filter_dataset, load_cabspotting_dir, load_geolife_dir, parse_cabspotting, parse_csv, parse_plt, read_canonical,
    read_csv_dataset, write_canonical, Dataset,
};
use traceprint::uniqueness::{movement_uniqueness, uniqueness, user_count_sweep, MovementConfig, UniquenessReport, UniquenessRun};

use crate::config::{CommandKind, ExperimentConfig, Format};
use crate::error::CliError;

pub const UNIQUENESS_HEADER: [&str; 11] =
    ["dataset", "mode", "kind", "n", "resolution_digits", "users", "samples", "mean", "ci_low", "ci_high", "seed"];
pub const ACCURACY_HEADER: [&str; 12] =
    ["dataset", "n", "tau", "tau_unit", "top_k", "fraction", "users", "reps", "mean_acc", "ci_low", "ci_high", "seed"];

/// Output directory writer that remembers what it produced.
struct Sink {
    dir: PathBuf,
    written: Vec<String>,
}

impl Sink {
    fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn bytes(&mut self, name: &str, data: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, data).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Runtime(e.to_string());
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        let data = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
        self.bytes(name, &data)
    }
}

fn core(e: traceprint::Error) -> CliError {
    CliError::from_core(e)
}

fn open(path: &Path) -> Result<fs::File, CliError> {
    fs::File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))
}

fn file_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trace".into())
}

fn load(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let path = cfg.dataset.as_deref().expect("validated");
    if !path.exists() {
        return Err(CliError::Input(format!("input {} does not exist", path.display())));
    }
    let d = match (cfg.format, path.is_dir()) {
        (Format::Canonical, _) => read_canonical(open(path)?, "").map_err(core)?,
        (Format::Csv, _) if cfg.csv_schema.id.is_some() => read_csv_dataset(open(path)?, &cfg.csv_schema, "").map_err(core)?,
        (Format::Csv, _) => {
            let t = parse_csv(open(path)?, &cfg.csv_schema, &file_id(path)).map_err(core)?;
            Dataset::new("", vec![t], 6).map_err(core)?
        }
        (Format::Plt, true) => load_geolife_dir(path).map_err(core)?,
        (Format::Plt, false) => Dataset::new("", vec![parse_plt(open(path)?, &file_id(path)).map_err(core)?], 6).map_err(core)?,
        (Format::Cabspotting, true) => load_cabspotting_dir(path).map_err(core)?,
        (Format::Cabspotting, false) => {
            let id = file_id(path);
            let id = id.strip_prefix("new_").unwrap_or(&id).to_string();
            Dataset::new("", vec![parse_cabspotting(open(path)?, &id).map_err(core)?], 5).map_err(core)?
        }
    };
    Ok(d.renamed(cfg.dataset_name()))
}

/// Filters then coarsens as configured.
fn prepare(cfg: &ExperimentConfig, d: Dataset, notes: &mut Map<String, Value>) -> Result<Dataset, CliError> {
    let d = if cfg.time_range.is_some() || cfg.bbox.is_some() || cfg.min_points > 0 {
        let f = filter_dataset(&d, cfg.time_range, cfg.bbox, cfg.min_points);
        notes.insert("filter_dropped".into(), json!(f.dropped));
        f.dataset
    } else {
        d
    };
    if cfg.digits.is_none() && cfg.time_bucket_s.is_none() {
        return Ok(d);
    }
    let digits = cfg.digits.unwrap_or(d.resolution_digits());
    let spec = CoarseningSpec::new(digits, cfg.time_bucket_s).map_err(|e| CliError::Config(e.to_string()))?;
    spec.apply(&d).map_err(|e| match e {
        traceprint::Error::InvalidParameter(m) => CliError::Config(m),
        other => core(other),
    })
}

fn f(v: f64) -> String {
    v.to_string()
}

fn uniqueness_row(dataset: &str, r: &UniquenessReport) -> Vec<String> {
    vec![
        dataset.to_string(),
        r.target.mode_label().to_string(),
        r.target.kind_label().to_string(),
        r.n.to_string(),
        r.resolution_digits.to_string(),
        r.users.to_string(),
        r.samples_per_user.to_string(),
        f(r.mean),
        f(r.ci_low),
        f(r.ci_high),
        r.seed.to_string(),
    ]
}

fn run_notes(run: &UniquenessRun) -> Value {
    json!({ "excluded": run.excluded, "duplicate_groups": run.duplicate_groups })
}

fn tau_cells(scale: &TemporalScale, cfg: &ExperimentConfig) -> [String; 2] {
    [scale.tau_label(), scale.unit_label(cfg.tau_unit).to_string()]
}

fn execute(cfg: &ExperimentConfig, sink: &mut Sink, d: Dataset, notes: &mut Map<String, Value>) -> Result<(), CliError> {
    let name = d.name().to_string();
    notes.insert("users".into(), json!(d.len()));
    notes.insert("points".into(), json!(d.total_points()));
    match cfg.command {
        CommandKind::Ingest | CommandKind::Synth | CommandKind::Coarsen => {
            let mut buf = Vec::new();
            write_canonical(&d, &mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
            sink.bytes("traces.csv", &buf)?;
        }
        CommandKind::Features => {
            let mut rows = Vec::new();
            for kind in cfg.targets.iter().flatten() {
                let per_traj: Vec<Vec<Vec<String>>> = d
                    .trajectories()
                    .collect::<Vec<_>>()
                    .par_iter()
                    .map(|t| {
                        let s = windowed_features(t, cfg.window_s, *kind, cfg.window_anchor)?;
                        Ok(quantize_features(&s, &cfg.steps)?
                            .into_iter()
                            .map(|m| {
                                vec![
                                    t.pseudo_id().to_string(),
                                    m.window_start.to_string(),
                                    m.kind.as_str().to_string(),
                                    f(m.value),
                                    m.quantized.map(|q| q.to_string()).unwrap_or_default(),
                                ]
                            })
                            .collect())
                    })
                    .collect::<traceprint::Result<_>>()
                    .map_err(core)?;
                rows.extend(per_traj.into_iter().flatten());
            }
            sink.csv("features.csv", &["pseudo_id", "window_start", "kind", "value", "quantized"], &rows)?;
        }
        CommandKind::Uniqueness => {
            let mut rows = Vec::new();
            let mut k_rows = Vec::new();
            let mut per_target = Map::new();
            for target in &cfg.targets {
                let run = match target {
                    None => uniqueness(&d, cfg.n_max, cfg.mode, cfg.reps, cfg.seed),
                    Some(kind) => {
                        let mc = MovementConfig { window_s: cfg.window_s, kind: *kind, steps: cfg.steps, anchor: cfg.window_anchor };
                        movement_uniqueness(&d, &mc, cfg.n_max, cfg.reps, cfg.seed)
                    }
                }
                .map_err(core)?;
                for &n in &cfg.n {
                    let r = run.report(n).expect("n within n_max");
                    rows.push(uniqueness_row(&name, r));
                    for (m, count) in &r.m_distribution {
                        k_rows.push(vec![
                            name.clone(),
                            r.target.mode_label().to_string(),
                            r.target.kind_label().to_string(),
                            n.to_string(),
                            m.to_string(),
                            count.to_string(),
                            cfg.seed.to_string(),
                        ]);
                    }
                }
                let label = run.reports[0].target.kind_label();
                per_target.insert(label.to_string(), run_notes(&run));
            }
            notes.insert("targets".into(), Value::Object(per_target));
            sink.csv("uniqueness.csv", &UNIQUENESS_HEADER, &rows)?;
            sink.csv("kanonymity.csv", &["dataset", "mode", "kind", "n", "m", "count", "seed"], &k_rows)?;
        }
        CommandKind::SweepUsers => {
            let sweep = user_count_sweep(&d, &cfg.user_counts, &cfg.n, cfg.mode, cfg.reps, cfg.seed).map_err(core)?;
            let rows: Vec<Vec<String>> = sweep.iter().map(|(_, r)| uniqueness_row(&name, r)).collect();
            sink.csv("sweep.csv", &UNIQUENESS_HEADER, &rows)?;
        }
        CommandKind::Classify => {
            let ac = AccuracyConfig { n_list: cfg.n.clone(), reps: cfg.reps, seed: cfg.seed, search: cfg.search };
            let mut rows = Vec::new();
            let mut excluded = Map::new();
            for scale in &cfg.taus {
                let runs = trace_reduction_experiment(&d, scale, &cfg.fractions, &ac).map_err(core)?;
                for (run, frac) in runs.iter().zip(&cfg.fractions) {
                    excluded.insert(format!("tau={} fraction={frac}", scale.tau_label()), json!(run.excluded));
                    for r in &run.reports {
                        let [tau, unit] = tau_cells(scale, cfg);
                        rows.push(vec![
                            name.clone(),
                            r.n.to_string(),
                            tau,
                            unit,
                            r.top_k.to_string(),
                            f(r.fraction),
                            r.users.to_string(),
                            r.reps.to_string(),
                            f(r.mean),
                            f(r.ci_low),
                            f(r.ci_high),
                            r.seed.to_string(),
                        ]);
                    }
                }
                info!("classified at tau {}", scale.tau_label());
            }
            notes.insert("excluded".into(), Value::Object(excluded));
            sink.csv("accuracy.csv", &ACCURACY_HEADER, &rows)?;
        }
        CommandKind::TuneTau => {
            let tc = TuneConfig {
                split_fraction: cfg.split_fraction,
                n_test: cfg.n_test,
                reps: cfg.reps,
                seed: cfg.seed,
                search: cfg.search,
            };
            let res = tune_tau(&d, &cfg.taus, &tc).map_err(core)?;
            let rows: Vec<Vec<String>> = res
                .grid
                .iter()
                .zip(&res.accuracy)
                .map(|(scale, a)| {
                    let [tau, unit] = tau_cells(scale, cfg);
                    vec![
                        name.clone(),
                        cfg.n_test.to_string(),
                        tau,
                        unit,
                        "1".into(),
                        f(cfg.split_fraction),
                        res.users.to_string(),
                        cfg.reps.to_string(),
                        f(a.mean),
                        f(a.ci_low),
                        f(a.ci_high),
                        cfg.seed.to_string(),
                    ]
                })
                .collect();
            sink.csv("tau_accuracy.csv", &ACCURACY_HEADER, &rows)?;
            let best = res.grid.iter().position(|s| *s == res.tau_star).expect("tau_star from grid");
            let [tau, unit] = tau_cells(&res.tau_star, cfg);
            sink.csv(
                "tau_star.csv",
                &["dataset", "tau_star", "tau_unit", "mean_acc", "users", "seed"],
                &[vec![name.clone(), tau, unit, f(res.accuracy[best].mean), res.users.to_string(), cfg.seed.to_string()]],
            )?;
            notes.insert("excluded".into(), json!(res.excluded));
        }
        CommandKind::Separability => {
            let scale = match cfg.mode {
                Mode::Spatial => TemporalScale::Infinite,
                Mode::SpatioTemporal => cfg.taus[0],
            };
            let rep = agsi(&d, cfg.mode, &scale, cfg.class_cap, cfg.seed).map_err(core)?;
            let mode = cfg.mode.as_str().to_string();
            let rows: Vec<Vec<String>> = rep
                .per_class
                .iter()
                .map(|(id, c)| vec![id.clone(), f(c.fraction), c.n_points.to_string(), mode.clone()])
                .collect();
            sink.csv("separability_classes.csv", &["pseudo_id", "fraction", "n_points", "mode"], &rows)?;
            let cdf = separability_cdf(&rep).map_err(core)?;
            let rows: Vec<Vec<String>> = cdf.iter().map(|(x, p)| vec![f(*x), f(*p)]).collect();
            sink.csv("separability_cdf.csv", &["x", "cum_prob"], &rows)?;
            let [tau, unit] = tau_cells(&scale, cfg);
            sink.csv(
                "separability.csv",
                &["dataset", "mode", "tau", "tau_unit", "classes", "agsi", "gsi", "class_cap", "seed"],
                &[vec![
                    name.clone(),
                    mode,
                    tau,
                    unit,
                    rep.per_class.len().to_string(),
                    f(rep.agsi),
                    f(rep.gsi),
                    rep.class_cap.map(|c| c.to_string()).unwrap_or_else(|| "none".into()),
                    cfg.seed.to_string(),
                ]],
            )?;
            notes.insert("excluded".into(), json!(rep.excluded));
            notes.insert("duplicate_groups".into(), json!(rep.duplicate_groups));
        }
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs one configured command: loads input (nothing is written if that
/// fails), executes, and records a manifest whatever the outcome.
pub fn run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let mut notes = Map::new();
    let d = match cfg.command {
        CommandKind::Synth => generate(&cfg.synth).map_err(|e| CliError::Config(e.to_string()))?,
        _ => load(cfg)?,
    };
    let d = prepare(cfg, d, &mut notes)?;

    let mut sink = Sink::create(&cfg.out)?;
    let rendered = cfg.render();
    sink.bytes("config.resolved", rendered.as_bytes())?;
    let outcome = execute(cfg, &mut sink, d, &mut notes);

    let mut manifest = json!({
        "tool": "traceprint",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cfg.command.as_str(),
        "config_hash": hex(&Sha256::digest(rendered.as_bytes())),
        "seed": cfg.seed,
        "threads": rayon::current_num_threads(),
        "wall_clock_s": started.elapsed().as_secs_f64(),
        "status": if outcome.is_ok() { "complete" } else { "incomplete" },
        "outputs": sink.written,
        "notes": notes,
    });
    if let Err(e) = &outcome {
        manifest["error"] = json!({ "kind": e.kind(), "message": e.to_string() });
    }
    let text = serde_json::to_string_pretty(&manifest).expect("serializable");
    sink.bytes("manifest.json", text.as_bytes())?;
    outcome
}
