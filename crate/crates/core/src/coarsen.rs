//! Spatial truncation, temporal bucketing and k-anonymity counts.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GpsPoint;
use crate::trace::{Dataset, Trajectory};

/// Whether timestamps take part in point identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Spatial,
    SpatioTemporal,
}

impl Mode {
    pub fn key(self, p: &GpsPoint) -> PointKey {
        PointKey {
            lat_e6: p.lat_e6(),
            lon_e6: p.lon_e6(),
            t: match self {
                Mode::Spatial => None,
                Mode::SpatioTemporal => p.t(),
            },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Spatial => "spatial",
            Mode::SpatioTemporal => "st",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spatial" | "s" => Ok(Mode::Spatial),
            "st" | "spatiotemporal" | "spatio-temporal" => Ok(Mode::SpatioTemporal),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

/// Identity of a point under a [`Mode`]; exact and hashable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointKey {
    pub lat_e6: i32,
    pub lon_e6: i32,
    pub t: Option<i64>,
}

/// Fails unless every point carries a timestamp (required by spatio-temporal mode).
pub fn require_timestamps(d: &Dataset, mode: Mode) -> Result<()> {
    if mode == Mode::SpatioTemporal {
        if let Some(t) = d.trajectories().find(|t| !t.has_timestamps()) {
            return Err(Error::InvalidParameter(format!(
                "spatio-temporal mode needs timestamps; trajectory {:?} has none",
                t.pseudo_id()
            )));
        }
    }
    Ok(())
}

/// Spatial and temporal coarsening parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseningSpec {
    digits: u8,
    time_bucket_s: Option<u64>,
}

impl CoarseningSpec {
    pub fn new(digits: u8, time_bucket_s: Option<u64>) -> Result<Self> {
        check_digits(digits)?;
        if time_bucket_s == Some(0) {
            return Err(Error::InvalidParameter("time bucket must be positive".into()));
        }
        Ok(Self { digits, time_bucket_s })
    }

    pub fn digits(&self) -> u8 {
        self.digits
    }

    pub fn time_bucket_s(&self) -> Option<u64> {
        self.time_bucket_s
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        let out = if self.digits < d.resolution_digits() { truncate_resolution(d, self.digits)? } else { d.clone() };
        match self.time_bucket_s {
            Some(b) => coarsen_time(&out, b),
            None => Ok(out),
        }
    }
}

fn check_digits(digits: u8) -> Result<()> {
    if !(1..=6).contains(&digits) {
        return Err(Error::InvalidParameter(format!("digits must be within 1..=6, got {digits}")));
    }
    Ok(())
}

/// Truncates a fixed-point coordinate toward zero at 10^-digits degrees.
pub fn truncate_e6(v: i32, digits: u8) -> i32 {
    let step = 10i32.pow(6 - digits as u32);
    v / step * step
}

pub fn truncate_point(p: &GpsPoint, digits: u8) -> GpsPoint {
    // truncation toward zero never leaves the valid range
    GpsPoint::from_e6(truncate_e6(p.lat_e6(), digits), truncate_e6(p.lon_e6(), digits), p.t())
        .expect("truncated coordinates stay in range")
}

fn map_points(d: &Dataset, digits: u8, f: impl Fn(&GpsPoint) -> GpsPoint) -> Result<Dataset> {
    let trajectories = d
        .trajectories()
        .map(|t| Trajectory::new(t.pseudo_id(), t.points().iter().map(&f).collect()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(d.name(), trajectories, digits)
}

/// Truncates every coordinate to `digits` decimals. `digits` may not exceed the
/// dataset's current resolution.
pub fn truncate_resolution(d: &Dataset, digits: u8) -> Result<Dataset> {
    check_digits(digits)?;
    if digits > d.resolution_digits() {
        return Err(Error::InvalidParameter(format!(
            "cannot truncate to {digits} digits: dataset resolution is {}",
            d.resolution_digits()
        )));
    }
    map_points(d, digits, |p| truncate_point(p, digits))
}

/// Floors every timestamp to a multiple of `bucket_s` seconds.
pub fn coarsen_time(d: &Dataset, bucket_s: u64) -> Result<Dataset> {
    if bucket_s == 0 {
        return Err(Error::InvalidParameter("time bucket must be positive".into()));
    }
    let b = i64::try_from(bucket_s).map_err(|_| Error::InvalidParameter("time bucket too large".into()))?;
    map_points(d, d.resolution_digits(), |p| p.with_time(p.t().map(|t| t.div_euclid(b) * b)))
}

/// Number of trajectories containing every point of `sample` under `mode`.
/// An empty sample is contained in every trajectory.
pub fn k_anonymity_of(d: &Dataset, sample: &[GpsPoint], mode: Mode) -> usize {
    let wanted: Vec<PointKey> = sample.iter().map(|p| mode.key(p)).collect();
    d.trajectories()
        .filter(|t| {
            let keys: HashSet<PointKey> = t.points().iter().map(|p| mode.key(p)).collect();
            wanted.iter().all(|k| keys.contains(k))
        })
        .count()
}
