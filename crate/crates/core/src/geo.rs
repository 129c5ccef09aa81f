//! Geodesic primitives on fixed-point GPS coordinates.
//!
//! Coordinates are stored as signed integers in units of 10^-6 degrees so that
//! equality, hashing and truncation are exact. Distances use the haversine
//! formula on a spherical Earth of radius [`EARTH_RADIUS_KM`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by every distance computation.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Exponent arguments above this value saturate in [`smoothed_distance`].
pub const MAX_EXPONENT: f64 = 700.0;

/// Fixed-point scale: one unit is 10^-6 degrees.
pub const E6: i64 = 1_000_000;

const LAT_MAX_E6: i32 = 90_000_000;
const LON_MAX_E6: i32 = 180_000_000;

/// One timestamped (or spatial-only) GPS fix.
///
/// Equality is exact on the fixed-point coordinates and the timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GpsPoint {
    lat_e6: i32,
    lon_e6: i32,
    t: Option<i64>,
}

impl GpsPoint {
    /// Builds a point from fixed-point coordinates. Latitude must lie in
    /// [-90, 90] and longitude in [-180, 180).
    pub fn from_e6(lat_e6: i32, lon_e6: i32, t: Option<i64>) -> Result<Self> {
        if !(-LAT_MAX_E6..=LAT_MAX_E6).contains(&lat_e6) {
            return Err(Error::CoordinateRange(format!("latitude {}", fmt_e6(lat_e6 as i64))));
        }
        if !(-LON_MAX_E6..LON_MAX_E6).contains(&lon_e6) {
            return Err(Error::CoordinateRange(format!("longitude {}", fmt_e6(lon_e6 as i64))));
        }
        Ok(Self { lat_e6, lon_e6, t })
    }

    /// Builds a point from floating-point degrees, rounding to the nearest
    /// 10^-6 degree.
    pub fn from_degrees(lat: f64, lon: f64, t: Option<i64>) -> Result<Self> {
        let lat_e6 = degrees_to_e6(lat)?;
        let lon_e6 = degrees_to_e6(lon)?;
        Self::from_e6(lat_e6, lon_e6, t)
    }

    /// Parses decimal degree strings without going through floating point.
    pub fn parse(lat: &str, lon: &str, t: Option<i64>) -> Result<Self> {
        let lat_e6 = parse_e6(lat)?;
        let lon_e6 = parse_e6(lon)?;
        Self::from_e6(lat_e6, lon_e6, t)
    }

    pub fn lat_e6(&self) -> i32 {
        self.lat_e6
    }

    pub fn lon_e6(&self) -> i32 {
        self.lon_e6
    }

    pub fn t(&self) -> Option<i64> {
        self.t
    }

    pub fn lat(&self) -> f64 {
        self.lat_e6 as f64 / E6 as f64
    }

    pub fn lon(&self) -> f64 {
        self.lon_e6 as f64 / E6 as f64
    }

    /// Same coordinates, different timestamp.
    pub fn with_time(&self, t: Option<i64>) -> Self {
        Self { t, ..*self }
    }

    /// True when both points share fixed-point latitude and longitude.
    pub fn same_position(&self, other: &GpsPoint) -> bool {
        self.lat_e6 == other.lat_e6 && self.lon_e6 == other.lon_e6
    }
}

impl fmt::Display for GpsPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}", fmt_e6(self.lat_e6 as i64), fmt_e6(self.lon_e6 as i64))?;
        match self.t {
            Some(t) => write!(f, ", t={t})"),
            None => write!(f, ")"),
        }
    }
}

fn degrees_to_e6(deg: f64) -> Result<i32> {
    if !deg.is_finite() {
        return Err(Error::CoordinateRange(format!("non-finite value {deg}")));
    }
    let scaled = (deg * E6 as f64).round();
    if scaled.abs() > i32::MAX as f64 {
        return Err(Error::CoordinateRange(format!("{deg}")));
    }
    Ok(scaled as i32)
}

/// Renders a fixed-point value with exactly six decimals.
pub fn fmt_e6(v: i64) -> String {
    let sign = if v < 0 { "-" } else { "" };
    let a = v.unsigned_abs();
    format!("{sign}{}.{:06}", a / E6 as u64, a % E6 as u64)
}

/// Parses a decimal string such as `-122.39488` into 10^-6 degree units.
///
/// Digits beyond the sixth decimal are rounded half away from zero.
pub fn parse_e6(s: &str) -> Result<i32> {
    let s = s.trim();
    let bad = || Error::CoordinateRange(format!("not a decimal coordinate: {s:?}"));
    let (neg, body) = match s.as_bytes().first() {
        Some(b'-') => (true, &s[1..]),
        Some(b'+') => (false, &s[1..]),
        Some(_) => (false, s),
        None => return Err(bad()),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    if int_part.len() > 4 {
        return Err(bad());
    }
    let int_val: i64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| bad())? };
    let mut frac_val: i64 = 0;
    for (i, b) in frac_part.bytes().take(6).enumerate() {
        frac_val += (b - b'0') as i64 * 10i64.pow(5 - i as u32);
    }
    if let Some(b) = frac_part.as_bytes().get(6) {
        if *b >= b'5' {
            frac_val += 1;
        }
    }
    let mag = int_val * E6 + frac_val;
    let v = if neg { -mag } else { mag };
    i32::try_from(v).map_err(|_| bad())
}

/// Unit in which temporal gaps are expressed before dividing by tau.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum TimeUnit {
    Seconds,
    Minutes,
    Hours,
    #[default]
    Days,
}

impl TimeUnit {
    pub fn seconds(self) -> f64 {
        match self {
            TimeUnit::Seconds => 1.0,
            TimeUnit::Minutes => 60.0,
            TimeUnit::Hours => 3600.0,
            TimeUnit::Days => 86_400.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TimeUnit::Seconds => "s",
            TimeUnit::Minutes => "min",
            TimeUnit::Hours => "h",
            TimeUnit::Days => "day",
        }
    }
}

impl fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TimeUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s" | "sec" | "secs" | "second" | "seconds" => Ok(TimeUnit::Seconds),
            "min" | "mins" | "minute" | "minutes" => Ok(TimeUnit::Minutes),
            "h" | "hr" | "hour" | "hours" => Ok(TimeUnit::Hours),
            "d" | "day" | "days" => Ok(TimeUnit::Days),
            other => Err(Error::InvalidScale(format!("unknown time unit {other:?}"))),
        }
    }
}

/// Temporal smoothing scale for the spatio-temporal point distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TemporalScale {
    Finite { tau: f64, unit: TimeUnit },
    /// Temporal smoothing disabled; distances are purely spatial.
    Infinite,
}

impl TemporalScale {
    pub fn finite(tau: f64, unit: TimeUnit) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidScale(format!("tau must be positive and finite, got {tau}")));
        }
        Ok(TemporalScale::Finite { tau, unit })
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, TemporalScale::Infinite)
    }

    /// Tau rendered for reports (`inf` when infinite).
    pub fn tau_label(&self) -> String {
        match self {
            TemporalScale::Finite { tau, .. } => format!("{tau}"),
            TemporalScale::Infinite => "inf".to_string(),
        }
    }

    pub fn unit_label(&self, default: TimeUnit) -> &'static str {
        match self {
            TemporalScale::Finite { unit, .. } => unit.as_str(),
            TemporalScale::Infinite => default.as_str(),
        }
    }

    /// Orders scales by tau; infinite is the largest.
    pub fn tau_seconds(&self) -> f64 {
        match self {
            TemporalScale::Finite { tau, unit } => tau * unit.seconds(),
            TemporalScale::Infinite => f64::INFINITY,
        }
    }

    /// Temporal gap between two timestamps in this scale's unit, divided by tau.
    /// Returns 0 for an infinite scale.
    pub fn exponent(&self, ta: i64, tb: i64) -> f64 {
        match self {
            TemporalScale::Finite { tau, unit } => {
                let gap = (ta - tb).unsigned_abs() as f64 / unit.seconds();
                gap / tau
            }
            TemporalScale::Infinite => 0.0,
        }
    }
}

impl fmt::Display for TemporalScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemporalScale::Finite { tau, unit } => write!(f, "{tau} {unit}"),
            TemporalScale::Infinite => f.write_str("inf"),
        }
    }
}

/// Great-circle distance in kilometres. Timestamps are ignored.
pub fn haversine_km(a: &GpsPoint, b: &GpsPoint) -> f64 {
    // canonical argument order makes the result exactly symmetric
    let (a, b) = if (a.lat_e6, a.lon_e6) <= (b.lat_e6, b.lon_e6) { (a, b) } else { (b, a) };
    if a.same_position(b) {
        return 0.0;
    }
    let phi1 = a.lat().to_radians();
    let phi2 = b.lat().to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon() - a.lon()).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Initial bearing from `a` towards `b`, in degrees clockwise from north,
/// normalised to [0, 360).
pub fn initial_bearing_deg(a: &GpsPoint, b: &GpsPoint) -> Result<f64> {
    if a.same_position(b) {
        return Err(Error::UndefinedBearing);
    }
    let phi1 = a.lat().to_radians();
    let phi2 = b.lat().to_radians();
    let dlambda = (b.lon() - a.lon()).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    Ok(normalize_degrees(y.atan2(x).to_degrees()))
}

/// Maps any angle in degrees onto [0, 360).
pub fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Spatial distance scaled by `exp(exponent)`, with the exponent clamped at
/// [`MAX_EXPONENT`] and the product capped at `f64::MAX`.
pub fn smoothed_distance(spatial_km: f64, exponent: f64) -> f64 {
    if spatial_km == 0.0 || exponent == 0.0 {
        return spatial_km;
    }
    let v = spatial_km * exponent.min(MAX_EXPONENT).exp();
    if v.is_finite() {
        v
    } else {
        f64::MAX
    }
}

/// Spatio-temporal point distance: haversine distance multiplied by
/// `exp(|t_a - t_b| / tau)`, with the gap expressed in the scale's unit.
pub fn spatiotemporal_distance(a: &GpsPoint, b: &GpsPoint, scale: &TemporalScale) -> Result<f64> {
    let ds = haversine_km(a, b);
    match scale {
        TemporalScale::Infinite => Ok(ds),
        TemporalScale::Finite { .. } => {
            let (ta, tb) = match (a.t, b.t) {
                (Some(ta), Some(tb)) => (ta, tb),
                _ => return Err(Error::MissingTimestamp),
            };
            Ok(smoothed_distance(ds, scale.exponent(ta, tb)))
        }
    }
}
