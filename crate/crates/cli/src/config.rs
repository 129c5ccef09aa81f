//! Experiment configuration: flags > config file > per-command defaults,
//! resolved into one flat key/value map and validated before any work starts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use traceprint::coarsen::Mode;
use traceprint::features::{FeatureKind, QuantizationSteps, WindowAnchor};
use traceprint::geo::{GpsPoint, TemporalScale, TimeUnit};
use traceprint::reident::NearestSearch;
use traceprint::separability::DEFAULT_CLASS_CAP;
use traceprint::synth::SynthSpec;
use traceprint::trace::{BoundingBox, CsvSchema, TimeRange};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CommandKind {
    Ingest,
    Synth,
    Coarsen,
    Features,
    Uniqueness,
    Classify,
    TuneTau,
    Separability,
    SweepUsers,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Ingest => "ingest",
            CommandKind::Synth => "synth",
            CommandKind::Coarsen => "coarsen",
            CommandKind::Features => "features",
            CommandKind::Uniqueness => "uniqueness",
            CommandKind::Classify => "classify",
            CommandKind::TuneTau => "tune-tau",
            CommandKind::Separability => "separability",
            CommandKind::SweepUsers => "sweep-users",
        }
    }
}

macro_rules! options {
    ($($field:ident => $help:literal),* $(,)?) => {
        /// Options shared by every subcommand. All values are kept as text so
        /// that flags and config-file entries go through the same validation.
        #[derive(Debug, Clone, Default, clap::Args)]
        pub struct Opts {
            /// Flat `key = value` config file; flags take precedence over it.
            #[arg(long, value_name = "FILE")]
            pub config: Option<PathBuf>,
            $(
                #[arg(long, value_name = "VALUE", help = $help)]
                pub $field: Option<String>,
            )*
        }

        impl Opts {
            pub fn pairs(&self) -> Vec<(&'static str, String)> {
                let mut v = Vec::new();
                $( if let Some(x) = &self.$field { v.push((stringify!($field), x.clone())); } )*
                v
            }
        }

        pub const KEYS: &[&str] = &[$(stringify!($field)),*];
    };
}

options! {
    dataset => "Input file or directory",
    format => "Input format: cabspotting, plt, csv or canonical",
    name => "Dataset name recorded in outputs (default: input file stem)",
    csv_lat => "Latitude column for csv input",
    csv_lon => "Longitude column for csv input",
    csv_t => "Timestamp column for csv input (empty for none)",
    csv_id => "Pseudo-id column for csv input (empty: one trajectory per file)",
    time_start => "Keep points with t >= this unix time",
    time_end => "Keep points with t < this unix time",
    bbox => "Keep points inside `beijing` or `lat_min,lat_max,lon_min,lon_max`",
    min_points => "Drop trajectories with fewer points after filtering",
    mode => "Point identity: spatial or st",
    digits => "Truncate coordinates to this many decimal places",
    time_bucket_s => "Floor timestamps to multiples of this many seconds",
    n => "Comma-separated sample sizes",
    n_max => "Largest sample size",
    reps => "Sampled subsets or attack repetitions per user",
    tau => "Comma-separated tau values (`inf` allowed)",
    tau_unit => "Tau unit: s, min, h or day",
    window_s => "Movement window length in seconds",
    window_anchor => "Window alignment: trace-start or epoch",
    kind => "Comma-separated targets: point, distance_km, speed_kmh, direction_deg",
    step_distance_km => "Distance quantization step",
    step_speed_kmh => "Speed quantization step",
    step_direction_deg => "Direction quantization step",
    fractions => "Comma-separated observed-trace fractions in (0, 1]",
    split_fraction => "Training share of each trace for tau tuning",
    n_test => "Test points per tau-tuning attack",
    class_cap => "Per-class point cap for separability (`none` to disable)",
    user_counts => "Comma-separated sub-population sizes",
    search => "Nearest-point search: exhaustive or indexed",
    seed => "Master seed",
    out => "Output directory",
    threads => "Worker threads (0: all cores)",
    synth_traces => "Synthetic trace count",
    synth_points => "Synthetic points per trace",
    synth_spread_km => "Synthetic walk radius",
    synth_separation_km => "Synthetic centre spacing",
    synth_step_s => "Synthetic sampling interval",
    synth_offset_s => "Synthetic per-trace start offset",
    synth_overlap => "Fraction of points shared within trace pairs",
}

const DEFAULT_TAUS: &str = "0.0001,0.001,0.01,0.1,1,10";

fn defaults(cmd: CommandKind) -> BTreeMap<&'static str, String> {
    let synth = SynthSpec::default();
    let mut d: BTreeMap<&'static str, String> = [
        ("format", "canonical".to_string()),
        ("csv_lat", "lat".into()),
        ("csv_lon", "lon".into()),
        ("csv_t", "t".into()),
        ("csv_id", "".into()),
        ("mode", "spatial".into()),
        ("tau_unit", "day".into()),
        ("window_s", "30".into()),
        ("window_anchor", "trace-start".into()),
        ("step_distance_km", "0.01".into()),
        ("step_speed_kmh", "1".into()),
        ("step_direction_deg", "1".into()),
        ("fractions", "1".into()),
        ("split_fraction", "0.5".into()),
        ("n_test", "3".into()),
        ("class_cap", DEFAULT_CLASS_CAP.to_string()),
        ("search", "exhaustive".into()),
        ("seed", "0".into()),
        ("out", "out".into()),
        ("threads", "0".into()),
        ("synth_traces", synth.n_traces.to_string()),
        ("synth_points", synth.points_per_trace.to_string()),
        ("synth_spread_km", synth.intra_spread_km.to_string()),
        ("synth_separation_km", synth.inter_separation_km.to_string()),
        ("synth_step_s", synth.time_step_s.to_string()),
        ("synth_offset_s", synth.trace_time_offset_s.to_string()),
        ("synth_overlap", synth.overlap_fraction.to_string()),
    ]
    .into_iter()
    .collect();
    let (reps, kind) = match cmd {
        CommandKind::Uniqueness | CommandKind::SweepUsers => ("1000", "point"),
        CommandKind::Features => ("100", "distance_km,speed_kmh,direction_deg"),
        _ => ("100", "point"),
    };
    d.insert("reps", reps.into());
    d.insert("kind", kind.into());
    if matches!(cmd, CommandKind::Classify | CommandKind::TuneTau) {
        d.insert("tau", DEFAULT_TAUS.into());
    }
    d
}

/// Parses a flat `key = value` file. `#` starts a comment line; keys may use
/// `-` or `_`.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", i + 1)))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("config line {}: unknown key {key:?}", i + 1)));
        }
        if out.iter().any(|(x, _)| *x == key) {
            return Err(CliError::Config(format!("config line {}: duplicate key {key:?}", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Cabspotting,
    Plt,
    Csv,
    Canonical,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cabspotting" => Ok(Format::Cabspotting),
            "plt" => Ok(Format::Plt),
            "csv" => Ok(Format::Csv),
            "canonical" => Ok(Format::Canonical),
            _ => Err(format!("unknown format {s:?}")),
        }
    }
}

/// `None` selects point identity; otherwise a movement feature.
pub type Target = Option<FeatureKind>;

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub dataset: Option<PathBuf>,
    pub format: Format,
    pub name: Option<String>,
    pub csv_schema: CsvSchema,
    pub time_range: Option<TimeRange>,
    pub bbox: Option<BoundingBox>,
    pub min_points: usize,
    pub mode: Mode,
    pub digits: Option<u8>,
    pub time_bucket_s: Option<u64>,
    pub n: Vec<usize>,
    pub n_max: usize,
    pub reps: usize,
    pub taus: Vec<TemporalScale>,
    pub tau_unit: TimeUnit,
    pub window_s: i64,
    pub window_anchor: WindowAnchor,
    pub targets: Vec<Target>,
    pub steps: QuantizationSteps,
    pub fractions: Vec<f64>,
    pub split_fraction: f64,
    pub n_test: usize,
    pub class_cap: Option<usize>,
    pub user_counts: Vec<usize>,
    pub search: NearestSearch,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub synth: SynthSpec,
    /// Every key with its resolved text value (empty when unset).
    pub resolved: BTreeMap<String, String>,
}

struct Resolver {
    values: BTreeMap<&'static str, String>,
}

fn bad(key: &str, v: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key} = {v:?}: {why}"))
}

impl Resolver {
    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|s| !s.is_empty())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map(|v| v.parse::<T>().map_err(|e| bad(key, v, e))).transpose()
    }

    fn req<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| CliError::Config(format!("{key} is required")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',').map(|x| x.trim().parse::<T>().map_err(|e| bad(key, v, e))).collect::<Result<Vec<T>, _>>()
            })
            .transpose()
    }
}

fn positive<T: PartialOrd + Default + std::fmt::Display>(key: &str, v: T) -> Result<T, CliError> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{key} must be positive, got {v}")))
    }
}

fn parse_bbox(v: &str) -> Result<BoundingBox, CliError> {
    if v.eq_ignore_ascii_case("beijing") {
        return Ok(BoundingBox::BEIJING);
    }
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(bad("bbox", v, "expected lat_min,lat_max,lon_min,lon_max"));
    }
    let lo = GpsPoint::parse(parts[0], parts[2], None).map_err(|e| bad("bbox", v, e))?;
    let hi = GpsPoint::parse(parts[1], parts[3], None).map_err(|e| bad("bbox", v, e))?;
    if lo.lat_e6() > hi.lat_e6() || lo.lon_e6() > hi.lon_e6() {
        return Err(bad("bbox", v, "minimum exceeds maximum"));
    }
    Ok(BoundingBox { lat_min_e6: lo.lat_e6(), lat_max_e6: hi.lat_e6(), lon_min_e6: lo.lon_e6(), lon_max_e6: hi.lon_e6() })
}

fn parse_tau(v: &str, unit: TimeUnit) -> Result<TemporalScale, CliError> {
    if v.eq_ignore_ascii_case("inf") {
        return Ok(TemporalScale::Infinite);
    }
    let tau: f64 = v.parse().map_err(|e| bad("tau", v, e))?;
    TemporalScale::finite(tau, unit).map_err(|e| bad("tau", v, e))
}

fn parse_target(v: &str) -> Result<Target, String> {
    if v == "point" {
        Ok(None)
    } else {
        v.parse::<FeatureKind>().map(Some).map_err(|e| e.to_string())
    }
}

struct TargetText(Target);

impl FromStr for TargetText {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        parse_target(s).map(TargetText)
    }
}

impl ExperimentConfig {
    /// Merges defaults, the optional config file and flags, then validates.
    pub fn resolve(command: CommandKind, opts: &crate::config::Opts) -> Result<Self, CliError> {
        let mut values = defaults(command);
        if let Some(path) = &opts.config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config_file(&text)? {
                let key = KEYS.iter().find(|x| **x == k).expect("validated key");
                values.insert(key, v);
            }
        }
        for (k, v) in opts.pairs() {
            values.insert(k, v);
        }
        Self::from_values(command, values)
    }

    fn from_values(command: CommandKind, values: BTreeMap<&'static str, String>) -> Result<Self, CliError> {
        let r = Resolver { values };
        let tau_unit: TimeUnit = r.req("tau_unit")?;
        let n_list: Option<Vec<usize>> = r.list("n")?;
        let n_max_given: Option<usize> = r.get("n_max")?;
        let n_max = n_max_given.or_else(|| n_list.as_ref().and_then(|v| v.iter().copied().max())).unwrap_or(5);
        let n = n_list.unwrap_or_else(|| (1..=n_max).collect());
        if n.is_empty() || n.contains(&0) || n_max == 0 {
            return Err(CliError::Config("sample sizes must be positive".into()));
        }
        if n.iter().any(|&x| x > n_max) {
            return Err(CliError::Config(format!("n values exceed n_max = {n_max}")));
        }
        let taus = match r.raw("tau") {
            Some(v) => v.split(',').map(|x| parse_tau(x.trim(), tau_unit)).collect::<Result<Vec<_>, _>>()?,
            None => Vec::new(),
        };
        let mode: Mode = r.req("mode")?;
        let min_points = match r.get::<usize>("min_points")? {
            Some(m) => m,
            None => match command {
                CommandKind::Uniqueness | CommandKind::Classify | CommandKind::SweepUsers => 2 * n_max,
                CommandKind::TuneTau => 2 * r.req::<usize>("n_test")?,
                _ => 0,
            },
        };
        let time_start: Option<i64> = r.get("time_start")?;
        let time_end: Option<i64> = r.get("time_end")?;
        let time_range = match (time_start, time_end) {
            (None, None) => None,
            (s, e) => {
                let range = TimeRange { start: s.unwrap_or(i64::MIN), end: e.unwrap_or(i64::MAX) };
                if range.start >= range.end {
                    return Err(CliError::Config("time_start must precede time_end".into()));
                }
                Some(range)
            }
        };
        let digits: Option<u8> = r.get("digits")?;
        if let Some(dg) = digits {
            if !(1..=6).contains(&dg) {
                return Err(CliError::Config(format!("digits must be within 1..=6, got {dg}")));
            }
        }
        let time_bucket_s = r.get::<u64>("time_bucket_s")?.map(|b| positive("time_bucket_s", b)).transpose()?;
        let steps = QuantizationSteps {
            distance_km: r.req("step_distance_km")?,
            speed_kmh: r.req("step_speed_kmh")?,
            direction_deg: r.req("step_direction_deg")?,
        };
        steps.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let fractions: Vec<f64> = r.list("fractions")?.unwrap_or_default();
        if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(CliError::Config("fractions must lie in (0, 1]".into()));
        }
        let split_fraction: f64 = r.req("split_fraction")?;
        if !(split_fraction > 0.0 && split_fraction < 1.0) {
            return Err(CliError::Config("split_fraction must lie in (0, 1)".into()));
        }
        let class_cap = match r.raw("class_cap") {
            Some("none") | None => None,
            Some(v) => Some(positive("class_cap", v.parse::<usize>().map_err(|e| bad("class_cap", v, e))?)?),
        };
        let window_anchor = match r.req::<String>("window_anchor")?.as_str() {
            "trace-start" => WindowAnchor::TraceStart,
            "epoch" => WindowAnchor::Epoch,
            other => return Err(bad("window_anchor", other, "expected trace-start or epoch")),
        };
        let search = match r.req::<String>("search")?.as_str() {
            "exhaustive" => NearestSearch::Exhaustive,
            "indexed" => NearestSearch::Indexed,
            other => return Err(bad("search", other, "expected exhaustive or indexed")),
        };
        let targets: Vec<Target> = r.list::<TargetText>("kind")?.unwrap_or_default().into_iter().map(|t| t.0).collect();
        if targets.is_empty() {
            return Err(CliError::Config("kind must name at least one target".into()));
        }
        if command == CommandKind::Features && targets.contains(&None) {
            return Err(CliError::Config("features needs movement kinds, not `point`".into()));
        }
        let seed: u64 = r.req("seed")?;
        let synth = SynthSpec {
            name: r.raw("name").unwrap_or("synth").to_string(),
            n_traces: r.req("synth_traces")?,
            points_per_trace: r.req("synth_points")?,
            intra_spread_km: r.req("synth_spread_km")?,
            inter_separation_km: r.req("synth_separation_km")?,
            time_step_s: r.req("synth_step_s")?,
            trace_time_offset_s: r.req("synth_offset_s")?,
            overlap_fraction: r.req("synth_overlap")?,
            seed,
            ..SynthSpec::default()
        };

        let cfg = ExperimentConfig {
            command,
            dataset: r.raw("dataset").map(PathBuf::from),
            format: r.req("format")?,
            name: r.raw("name").map(str::to_string),
            csv_schema: {
                let mut s = CsvSchema::new(&r.req::<String>("csv_lat")?, &r.req::<String>("csv_lon")?, r.raw("csv_t"));
                if let Some(id) = r.raw("csv_id") {
                    s = s.with_id(id);
                }
                s
            },
            time_range,
            bbox: r.raw("bbox").map(parse_bbox).transpose()?,
            min_points,
            mode,
            digits,
            time_bucket_s,
            n,
            n_max,
            reps: positive("reps", r.req::<usize>("reps")?)?,
            taus,
            tau_unit,
            window_s: positive("window_s", r.req::<i64>("window_s")?)?,
            window_anchor,
            targets,
            steps,
            fractions,
            split_fraction,
            n_test: positive("n_test", r.req::<usize>("n_test")?)?,
            class_cap,
            user_counts: r.list("user_counts")?.unwrap_or_default(),
            search,
            seed,
            out: PathBuf::from(r.req::<String>("out")?),
            threads: r.req("threads")?,
            synth,
            resolved: BTreeMap::new(),
        };
        cfg.check_command()?;
        let mut resolved: BTreeMap<String, String> =
            KEYS.iter().map(|k| (k.to_string(), r.values.get(k).cloned().unwrap_or_default())).collect();
        resolved.insert("n".into(), join(&cfg.n));
        resolved.insert("n_max".into(), cfg.n_max.to_string());
        resolved.insert("min_points".into(), cfg.min_points.to_string());
        Ok(ExperimentConfig { resolved, ..cfg })
    }

    fn check_command(&self) -> Result<(), CliError> {
        let needs_dataset = self.command != CommandKind::Synth;
        if needs_dataset && self.dataset.is_none() {
            return Err(CliError::Config(format!("{} needs --dataset", self.command.as_str())));
        }
        match self.command {
            CommandKind::Coarsen if self.digits.is_none() && self.time_bucket_s.is_none() => {
                Err(CliError::Config("coarsen needs digits and/or time_bucket_s".into()))
            }
            CommandKind::Classify | CommandKind::TuneTau if self.taus.is_empty() => {
                Err(CliError::Config("tau list is empty".into()))
            }
            CommandKind::Separability if self.mode == Mode::SpatioTemporal => match self.taus.as_slice() {
                [TemporalScale::Finite { .. }] => Ok(()),
                _ => Err(CliError::Config("spatio-temporal separability needs exactly one finite --tau".into())),
            },
            CommandKind::SweepUsers if self.user_counts.is_empty() || self.user_counts.contains(&0) => {
                Err(CliError::Config("sweep-users needs positive --user-counts".into()))
            }
            _ => Ok(()),
        }
    }

    /// Resolved configuration as `key = value` lines in key order.
    pub fn render(&self) -> String {
        let mut s = format!("# traceprint {}\ncommand = {}\n", env!("CARGO_PKG_VERSION"), self.command.as_str());
        for (k, v) in &self.resolved {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn dataset_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.dataset
                .as_deref()
                .and_then(Path::file_stem)
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "synth".into())
        })
    }
}

pub fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}
