//! Trajectory storage, dataset ingestion and dataset filters.
//!
//! Three raw layouts are understood (CabSpotting whitespace logs, GeoLife
//! `.plt` files and generic CSV with a declared column schema), plus the
//! canonical CSV `pseudo_id,t_unix_s,lat_e6,lon_e6` that every experiment can
//! be replayed from.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GpsPoint;

/// Header of the canonical trace file.
pub const CANONICAL_HEADER: [&str; 4] = ["pseudo_id", "t_unix_s", "lat_e6", "lon_e6"];

/// All GPS points attributed to one pseudo-identity, ordered by time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pseudo_id: String,
    points: Vec<GpsPoint>,
}

impl Trajectory {
    /// Validates and time-sorts the points. Points must either all carry a
    /// timestamp or all lack one. Duplicate points are kept.
    pub fn new(pseudo_id: impl Into<String>, mut points: Vec<GpsPoint>) -> Result<Self> {
        let pseudo_id = pseudo_id.into();
        if points.is_empty() {
            return Err(Error::InvalidTrajectory(format!("trajectory {pseudo_id:?} has no points")));
        }
        let timed = points[0].t().is_some();
        if points.iter().any(|p| p.t().is_some() != timed) {
            return Err(Error::InvalidTrajectory(format!(
                "trajectory {pseudo_id:?} mixes timestamped and untimed points"
            )));
        }
        if timed {
            points.sort_by_key(|p| p.t());
        }
        Ok(Self { pseudo_id, points })
    }

    pub fn pseudo_id(&self) -> &str {
        &self.pseudo_id
    }

    pub fn points(&self) -> &[GpsPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_timestamps(&self) -> bool {
        self.points[0].t().is_some()
    }

    pub fn into_points(self) -> Vec<GpsPoint> {
        self.points
    }
}

/// A named collection of trajectories, iterated in ascending pseudo-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    name: String,
    trajectories: BTreeMap<String, Trajectory>,
    resolution_digits: u8,
}

impl Dataset {
    pub fn new(name: impl Into<String>, trajectories: Vec<Trajectory>, resolution_digits: u8) -> Result<Self> {
        if !(1..=6).contains(&resolution_digits) {
            return Err(Error::InvalidDataset(format!("resolution digits {resolution_digits} outside 1..=6")));
        }
        let mut map = BTreeMap::new();
        for t in trajectories {
            let id = t.pseudo_id.clone();
            if map.insert(id.clone(), t).is_some() {
                return Err(Error::InvalidDataset(format!("duplicate pseudo_id {id:?}")));
            }
        }
        Ok(Self { name: name.into(), trajectories: map, resolution_digits })
    }

    pub(crate) fn from_map(name: String, trajectories: BTreeMap<String, Trajectory>, resolution_digits: u8) -> Self {
        Self { name, trajectories, resolution_digits }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn resolution_digits(&self) -> u8 {
        self.resolution_digits
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, pseudo_id: &str) -> Option<&Trajectory> {
        self.trajectories.get(pseudo_id)
    }

    pub fn trajectories(&self) -> impl ExactSizeIterator<Item = &Trajectory> + Clone {
        self.trajectories.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.trajectories.keys().map(String::as_str)
    }

    pub fn total_points(&self) -> usize {
        self.trajectories.values().map(Trajectory::len).sum()
    }

    /// Sub-population restricted to the given ids (unknown ids are ignored).
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Dataset {
        let trajectories = ids
            .into_iter()
            .filter_map(|id| self.trajectories.get(id).map(|t| (id.to_string(), t.clone())))
            .collect();
        Dataset::from_map(self.name.clone(), trajectories, self.resolution_digits)
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Dataset {
        self.name = name.into();
        self
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parses a CabSpotting cab log: one `lat lon occupancy unix_time` record per
/// line. The occupancy flag is discarded.
pub fn parse_cabspotting(source: impl Read, pseudo_id: &str) -> Result<Trajectory> {
    let reader = BufReader::new(source);
    let mut points = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(line_no, format!("expected 4 fields, found {}", fields.len())));
        }
        let t: i64 = fields[3]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad timestamp {:?}", fields[3])))?;
        let p = GpsPoint::parse(fields[0], fields[1], Some(t)).map_err(|e| parse_err(line_no, e.to_string()))?;
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::EmptyInput(format!("cab log for {pseudo_id:?} has no records")));
    }
    Trajectory::new(pseudo_id, points)
}

const PLT_HEADER_LINES: usize = 6;

/// Parses a GeoLife `.plt` file: six header lines, then records
/// `lat,lon,0,alt,days,date,time`. Altitude and serial days are discarded;
/// date and time are read as UTC.
pub fn parse_plt(source: impl Read, pseudo_id: &str) -> Result<Trajectory> {
    let points = parse_plt_points(source)?;
    Trajectory::new(pseudo_id, points)
}

fn parse_plt_points(source: impl Read) -> Result<Vec<GpsPoint>> {
    let reader = BufReader::new(source);
    let mut points = Vec::new();
    let mut lines_seen = 0;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        lines_seen = line_no;
        if line_no <= PLT_HEADER_LINES {
            continue;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 7 {
            return Err(parse_err(line_no, format!("expected 7 fields, found {}", fields.len())));
        }
        let date = NaiveDate::parse_from_str(fields[5], "%Y-%m-%d")
            .map_err(|e| parse_err(line_no, format!("bad date {:?}: {e}", fields[5])))?;
        let time = NaiveTime::parse_from_str(fields[6], "%H:%M:%S")
            .map_err(|e| parse_err(line_no, format!("bad time {:?}: {e}", fields[6])))?;
        let t = NaiveDateTime::new(date, time).and_utc().timestamp();
        let p = GpsPoint::parse(fields[0], fields[1], Some(t)).map_err(|e| parse_err(line_no, e.to_string()))?;
        points.push(p);
    }
    if lines_seen <= PLT_HEADER_LINES || points.is_empty() {
        return Err(Error::EmptyInput("plt file has no records after the header".into()));
    }
    Ok(points)
}

/// Column mapping for generic CSV input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub lat: String,
    pub lon: String,
    /// Unix-seconds timestamp column; absent for spatial-only data.
    pub t: Option<String>,
    /// Pseudo-identity column, used only by [`read_csv_dataset`].
    pub id: Option<String>,
}

impl CsvSchema {
    pub fn new(lat: &str, lon: &str, t: Option<&str>) -> Self {
        Self { lat: lat.into(), lon: lon.into(), t: t.map(Into::into), id: None }
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = Some(id.into());
        self
    }
}

struct ResolvedSchema {
    lat: usize,
    lon: usize,
    t: Option<usize>,
    id: Option<usize>,
}

fn resolve_schema(headers: &csv::StringRecord, schema: &CsvSchema) -> Result<ResolvedSchema> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column {name:?} not found in header")))
    };
    Ok(ResolvedSchema {
        lat: find(&schema.lat)?,
        lon: find(&schema.lon)?,
        t: schema.t.as_deref().map(find).transpose()?,
        id: schema.id.as_deref().map(find).transpose()?,
    })
}

fn csv_rows(
    source: impl Read,
    schema: &CsvSchema,
    mut sink: impl FnMut(Option<&str>, GpsPoint),
) -> Result<usize> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
    let headers = rdr.headers()?.clone();
    let cols = resolve_schema(&headers, schema)?;
    let mut n = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line_no = i + 2;
        let rec = rec?;
        let field = |idx: usize| {
            rec.get(idx)
                .map(str::trim)
                .ok_or_else(|| parse_err(line_no, format!("missing column {idx}")))
        };
        let t = match cols.t {
            Some(c) => {
                let raw = field(c)?;
                Some(raw.parse::<i64>().map_err(|_| parse_err(line_no, format!("bad timestamp {raw:?}")))?)
            }
            None => None,
        };
        let p = GpsPoint::parse(field(cols.lat)?, field(cols.lon)?, t)?;
        let id = cols.id.map(field).transpose()?;
        sink(id, p);
        n += 1;
    }
    Ok(n)
}

/// Parses a CSV file with a declared schema into one trajectory.
pub fn parse_csv(source: impl Read, schema: &CsvSchema, pseudo_id: &str) -> Result<Trajectory> {
    let mut points = Vec::new();
    csv_rows(source, schema, |_, p| points.push(p))?;
    if points.is_empty() {
        return Err(Error::EmptyInput(format!("csv for {pseudo_id:?} has no records")));
    }
    Trajectory::new(pseudo_id, points)
}

/// Parses a multi-user CSV file; the schema must name an id column.
pub fn read_csv_dataset(source: impl Read, schema: &CsvSchema, name: &str) -> Result<Dataset> {
    if schema.id.is_none() {
        return Err(Error::Schema("multi-user csv needs an id column".into()));
    }
    let mut groups: BTreeMap<String, Vec<GpsPoint>> = BTreeMap::new();
    csv_rows(source, schema, |id, p| groups.entry(id.unwrap_or_default().to_string()).or_default().push(p))?;
    dataset_from_groups(name, groups, 6)
}

fn dataset_from_groups(name: &str, groups: BTreeMap<String, Vec<GpsPoint>>, digits: u8) -> Result<Dataset> {
    if groups.is_empty() {
        return Err(Error::EmptyInput(format!("dataset {name:?} has no records")));
    }
    let trajectories = groups
        .into_iter()
        .map(|(id, pts)| Trajectory::new(id, pts))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, trajectories, digits)
}

/// Reads the canonical trace CSV. Resolution is inferred from the data.
pub fn read_canonical(source: impl Read, name: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CANONICAL_HEADER {
        return Err(Error::Schema(format!(
            "canonical header must be {:?}, found {:?}",
            CANONICAL_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut groups: BTreeMap<String, Vec<GpsPoint>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line_no = i + 2;
        let rec = rec.map_err(|e| parse_err(line_no, e.to_string()))?;
        let int = |idx: usize, what: &str| -> Result<i64> {
            rec[idx].parse::<i64>().map_err(|_| parse_err(line_no, format!("bad {what} {:?}", &rec[idx])))
        };
        let t = if rec[1].is_empty() { None } else { Some(int(1, "t_unix_s")?) };
        let lat = i32::try_from(int(2, "lat_e6")?).map_err(|_| parse_err(line_no, "lat_e6 overflow"))?;
        let lon = i32::try_from(int(3, "lon_e6")?).map_err(|_| parse_err(line_no, "lon_e6 overflow"))?;
        let p = GpsPoint::from_e6(lat, lon, t).map_err(|e| parse_err(line_no, e.to_string()))?;
        groups.entry(rec[0].to_string()).or_default().push(p);
    }
    let digits = infer_resolution(groups.values().flatten());
    dataset_from_groups(name, groups, digits)
}

/// Writes the canonical trace CSV (LF line endings, ascending pseudo-id).
pub fn write_canonical(dataset: &Dataset, sink: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(CANONICAL_HEADER)?;
    for traj in dataset.trajectories() {
        for p in traj.points() {
            let t = p.t().map(|t| t.to_string()).unwrap_or_default();
            w.write_record([traj.pseudo_id(), &t, &p.lat_e6().to_string(), &p.lon_e6().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Smallest number of decimal digits that represents every coordinate exactly
/// (at least 1).
pub fn infer_resolution<'a>(points: impl IntoIterator<Item = &'a GpsPoint>) -> u8 {
    let mut digits = 1u8;
    for p in points {
        while digits < 6 {
            let step = 10i32.pow(6 - digits as u32);
            if p.lat_e6() % step == 0 && p.lon_e6() % step == 0 {
                break;
            }
            digits += 1;
        }
        if digits == 6 {
            break;
        }
    }
    digits
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads a GeoLife release directory. Accepts either the release root (with a
/// `Data/` folder) or the `Data/` folder itself; each `<user>/Trajectory/*.plt`
/// set becomes one trajectory named after the user folder.
pub fn load_geolife_dir(root: &Path) -> Result<Dataset> {
    let data = if root.join("Data").is_dir() { root.join("Data") } else { root.to_path_buf() };
    let mut users: Vec<PathBuf> = fs::read_dir(&data)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("Trajectory").is_dir())
        .collect();
    users.sort();
    let mut trajectories = Vec::new();
    for user in users {
        let id = user.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut points = Vec::new();
        for f in sorted_files(&user.join("Trajectory"), "plt")? {
            match parse_plt_points(fs::File::open(&f)?) {
                Ok(mut pts) => points.append(&mut pts),
                Err(Error::EmptyInput(_)) => warn!("skipping empty plt file {}", f.display()),
                Err(Error::Parse { line, message }) => {
                    return Err(Error::Parse { line, message: format!("{}: {message}", f.display()) })
                }
                Err(e) => return Err(e),
            }
        }
        if !points.is_empty() {
            trajectories.push(Trajectory::new(id, points)?);
        }
    }
    if trajectories.is_empty() {
        return Err(Error::EmptyInput(format!("no plt trajectories under {}", data.display())));
    }
    Dataset::new("geolife", trajectories, 6)
}

/// Loads a CabSpotting directory of `new_<cab>.txt` logs.
pub fn load_cabspotting_dir(dir: &Path) -> Result<Dataset> {
    let mut trajectories = Vec::new();
    for f in sorted_files(dir, "txt")? {
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let Some(id) = stem.strip_prefix("new_") else { continue };
        let traj = parse_cabspotting(fs::File::open(&f)?, id).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse { line, message: format!("{}: {message}", f.display()) },
            other => other,
        })?;
        trajectories.push(traj);
    }
    if trajectories.is_empty() {
        return Err(Error::EmptyInput(format!("no new_*.txt cab logs in {}", dir.display())));
    }
    Dataset::new("cabspotting", trajectories, 5)
}

/// Half-open time interval `[start, end)` in unix seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

impl TimeRange {
    pub fn contains(&self, t: i64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Inclusive latitude/longitude box in fixed-point units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min_e6: i32,
    pub lat_max_e6: i32,
    pub lon_min_e6: i32,
    pub lon_max_e6: i32,
}

impl BoundingBox {
    /// Generous Beijing municipal bounds: lat [39.4, 41.1], lon [115.4, 117.6].
    pub const BEIJING: BoundingBox =
        BoundingBox { lat_min_e6: 39_400_000, lat_max_e6: 41_100_000, lon_min_e6: 115_400_000, lon_max_e6: 117_600_000 };

    pub fn contains(&self, p: &GpsPoint) -> bool {
        (self.lat_min_e6..=self.lat_max_e6).contains(&p.lat_e6())
            && (self.lon_min_e6..=self.lon_max_e6).contains(&p.lon_e6())
    }
}

/// GeoLife study window: calendar year 2008 (UTC).
pub const YEAR_2008: TimeRange = TimeRange { start: 1_199_145_600, end: 1_230_768_000 };

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub dataset: Dataset,
    /// Trajectories removed entirely, in ascending id order.
    pub dropped: Vec<String>,
    /// Set when no trajectory survived the filter.
    pub emptied: bool,
}

/// Crops every trajectory to the time range and bounding box, then drops
/// trajectories with fewer than `min_points` points. Points without a
/// timestamp never satisfy a time range.
pub fn filter_dataset(
    d: &Dataset,
    time_range: Option<TimeRange>,
    bbox: Option<BoundingBox>,
    min_points: usize,
) -> FilterOutcome {
    let mut kept = BTreeMap::new();
    let mut dropped = Vec::new();
    for traj in d.trajectories() {
        let pts: Vec<GpsPoint> = traj
            .points()
            .iter()
            .filter(|p| time_range.is_none_or(|r| p.t().is_some_and(|t| r.contains(t))))
            .filter(|p| bbox.is_none_or(|b| b.contains(p)))
            .copied()
            .collect();
        if pts.is_empty() || pts.len() < min_points {
            dropped.push(traj.pseudo_id().to_string());
        } else {
            let id = traj.pseudo_id().to_string();
            kept.insert(id.clone(), Trajectory { pseudo_id: id, points: pts });
        }
    }
    let emptied = kept.is_empty();
    if emptied {
        warn!("filter removed every trajectory from dataset {:?}", d.name());
    }
    FilterOutcome { dataset: Dataset::from_map(d.name().to_string(), kept, d.resolution_digits()), dropped, emptied }
}
