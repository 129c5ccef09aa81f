//! Windowed movement signatures: distance covered, average speed and
//! distance-weighted direction of travel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, initial_bearing_deg, normalize_degrees, GpsPoint};
use crate::trace::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    Distance,
    Speed,
    Direction,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Distance, FeatureKind::Speed, FeatureKind::Direction];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Distance => "distance_km",
            FeatureKind::Speed => "speed_kmh",
            FeatureKind::Direction => "direction_deg",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "distance" | "distance_km" => Ok(FeatureKind::Distance),
            "speed" | "speed_kmh" => Ok(FeatureKind::Speed),
            "direction" | "direction_deg" => Ok(FeatureKind::Direction),
            other => Err(Error::InvalidParameter(format!("unknown feature kind {other:?}"))),
        }
    }
}

/// Where window boundaries are anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WindowAnchor {
    /// Windows start at the trajectory's first timestamp.
    #[default]
    TraceStart,
    /// Windows are aligned to multiples of the window length since the epoch.
    Epoch,
}

/// One movement measurement over one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    pub window_start: i64,
    pub kind: FeatureKind,
    pub value: f64,
    /// Number of quantization steps below `value`; set by [`quantize_features`].
    pub quantized: Option<i64>,
}

/// Direction of the vector sum of segments given as (length, bearing).
///
/// A lone non-zero segment returns its own bearing unchanged. Returns `None`
/// when the resultant vanishes.
pub fn weighted_direction(segments: &[(f64, f64)]) -> Option<f64> {
    let moving: Vec<&(f64, f64)> = segments.iter().filter(|(len, _)| *len > 0.0).collect();
    if let [only] = moving.as_slice() {
        return Some(only.1);
    }
    let (east, north) = moving.iter().fold((0.0f64, 0.0f64), |(e, n), (len, brg)| {
        let r = brg.to_radians();
        (e + len * r.sin(), n + len * r.cos())
    });
    if east == 0.0 && north == 0.0 {
        return None;
    }
    Some(normalize_degrees(east.atan2(north).to_degrees()))
}

struct Window<'a> {
    start: i64,
    points: &'a [GpsPoint],
}

fn windows(points: &[GpsPoint], window_s: i64, anchor: WindowAnchor) -> Vec<Window<'_>> {
    let origin = match anchor {
        WindowAnchor::TraceStart => points[0].t().unwrap_or(0),
        WindowAnchor::Epoch => points[0].t().unwrap_or(0).div_euclid(window_s) * window_s,
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < points.len() {
        let k = (points[i].t().unwrap_or(0) - origin).div_euclid(window_s);
        let start = origin + k * window_s;
        let end = start + window_s;
        let j = i + points[i..].iter().take_while(|p| p.t().unwrap_or(0) < end).count();
        out.push(Window { start, points: &points[i..j] });
        i = j;
    }
    out
}

/// Movement samples over consecutive windows of `window_s` seconds.
///
/// Windows with fewer than two points emit nothing. Speed needs a positive
/// elapsed time and direction a non-zero displacement; windows lacking them
/// are skipped for that kind.
pub fn windowed_features(
    traj: &Trajectory,
    window_s: i64,
    kind: FeatureKind,
    anchor: WindowAnchor,
) -> Result<Vec<MotionSample>> {
    if window_s <= 0 {
        return Err(Error::InvalidParameter(format!("window must be positive, got {window_s}")));
    }
    if !traj.has_timestamps() {
        return Err(Error::MissingTimestamp);
    }
    let mut out = Vec::new();
    for w in windows(traj.points(), window_s, anchor) {
        if w.points.len() < 2 {
            continue;
        }
        let segments: Vec<(f64, Option<f64>)> = w
            .points
            .windows(2)
            .map(|s| (haversine_km(&s[0], &s[1]), initial_bearing_deg(&s[0], &s[1]).ok()))
            .collect();
        let distance: f64 = segments.iter().map(|s| s.0).sum();
        let value = match kind {
            FeatureKind::Distance => Some(distance),
            FeatureKind::Speed => {
                let elapsed = w.points[w.points.len() - 1].t().unwrap_or(0) - w.points[0].t().unwrap_or(0);
                (elapsed > 0).then(|| distance / (elapsed as f64 / 3600.0))
            }
            FeatureKind::Direction => {
                let segs: Vec<(f64, f64)> = segments.iter().filter_map(|&(l, b)| b.map(|b| (l, b))).collect();
                weighted_direction(&segs)
            }
        };
        if let Some(value) = value {
            out.push(MotionSample { window_start: w.start, kind, value, quantized: None });
        }
    }
    Ok(out)
}

/// Quantization step per feature kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizationSteps {
    pub distance_km: f64,
    pub speed_kmh: f64,
    pub direction_deg: f64,
}

impl Default for QuantizationSteps {
    fn default() -> Self {
        Self { distance_km: 0.01, speed_kmh: 1.0, direction_deg: 1.0 }
    }
}

impl QuantizationSteps {
    pub fn step(&self, kind: FeatureKind) -> f64 {
        match kind {
            FeatureKind::Distance => self.distance_km,
            FeatureKind::Speed => self.speed_kmh,
            FeatureKind::Direction => self.direction_deg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in FeatureKind::ALL {
            let s = self.step(k);
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidParameter(format!("quantization step for {k} must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Floors each value to a multiple of its kind's step.
pub fn quantize_features(samples: &[MotionSample], steps: &QuantizationSteps) -> Result<Vec<MotionSample>> {
    steps.validate()?;
    Ok(samples
        .iter()
        .map(|s| MotionSample { quantized: Some((s.value / steps.step(s.kind)).floor() as i64), ..*s })
        .collect())
}

/// Quantized value in the feature's own unit.
pub fn quantized_value(sample: &MotionSample, steps: &QuantizationSteps) -> Option<f64> {
    sample.quantized.map(|q| q as f64 * steps.step(sample.kind))
}
