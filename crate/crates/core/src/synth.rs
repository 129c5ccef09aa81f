//! Deterministic synthetic trajectories: bounded random walks around
//! per-trace centres, with optional verbatim point sharing between designated
//! trace pairs `(0,1), (2,3), …`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, GpsPoint, EARTH_RADIUS_KM};
use crate::seed;
use crate::trace::{Dataset, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub n_traces: usize,
    pub points_per_trace: usize,
    /// Explicit (lat, lon) centres; `None` spaces them on a square lattice
    /// around `origin` with `inter_separation_km` spacing.
    pub centers: Option<Vec<(f64, f64)>>,
    pub origin: (f64, f64),
    /// Radius of each walk around its centre.
    pub intra_spread_km: f64,
    pub inter_separation_km: f64,
    pub time_step_s: i64,
    pub start_time: i64,
    /// Trace `i` starts at `start_time + i * trace_time_offset_s`.
    pub trace_time_offset_s: i64,
    /// Fraction of points copied from the first to the second trace of each pair.
    pub overlap_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            n_traces: 10,
            points_per_trace: 200,
            centers: None,
            origin: (39.9, 116.4),
            intra_spread_km: 0.5,
            inter_separation_km: 5.0,
            time_step_s: 5,
            start_time: 1_200_000_000,
            trace_time_offset_s: 0,
            overlap_fraction: 0.0,
            seed: 0,
        }
    }
}

fn offset_degrees(center: (f64, f64), north_km: f64, east_km: f64) -> (f64, f64) {
    let lat = center.0 + (north_km / EARTH_RADIUS_KM).to_degrees();
    let lon = center.1 + (east_km / (EARTH_RADIUS_KM * center.0.to_radians().cos())).to_degrees();
    (lat, lon)
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_traces == 0 || self.points_per_trace == 0 {
            return bad("n_traces and points_per_trace must be positive".into());
        }
        if !(self.intra_spread_km > 0.0 && self.intra_spread_km.is_finite()) {
            return bad(format!("intra_spread_km must be positive, got {}", self.intra_spread_km));
        }
        if !(self.inter_separation_km > 0.0 && self.inter_separation_km.is_finite()) {
            return bad(format!("inter_separation_km must be positive, got {}", self.inter_separation_km));
        }
        if self.time_step_s <= 0 {
            return bad(format!("time_step_s must be positive, got {}", self.time_step_s));
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return bad(format!("overlap_fraction must be within [0, 1], got {}", self.overlap_fraction));
        }
        Ok(())
    }

    /// Trace centres, explicit or auto-spaced.
    pub fn resolve_centers(&self) -> Result<Vec<(f64, f64)>> {
        let centers = match &self.centers {
            Some(c) => {
                if c.len() != self.n_traces {
                    return Err(Error::InvalidParameter(format!(
                        "{} centres given for {} traces",
                        c.len(),
                        self.n_traces
                    )));
                }
                c.clone()
            }
            None => {
                let cols = (self.n_traces as f64).sqrt().ceil() as usize;
                (0..self.n_traces)
                    .map(|i| {
                        let (row, col) = (i / cols, i % cols);
                        let (row_lat, _) = offset_degrees(self.origin, row as f64 * self.inter_separation_km, 0.0);
                        offset_degrees((row_lat, self.origin.1), 0.0, col as f64 * self.inter_separation_km)
                    })
                    .collect()
            }
        };
        let pts = centers
            .iter()
            .map(|&(la, lo)| GpsPoint::from_degrees(la, lo, None))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d = haversine_km(&pts[i], &pts[j]);
                // lattice spacing is exact up to fixed-point rounding
                if d < self.inter_separation_km * (1.0 - 1e-3) {
                    return Err(Error::InvalidParameter(format!(
                        "centres {i} and {j} are {d:.3} km apart, closer than {} km",
                        self.inter_separation_km
                    )));
                }
            }
        }
        Ok(centers)
    }

    pub fn pseudo_id(&self, i: usize) -> String {
        let width = format!("{}", self.n_traces.saturating_sub(1)).len().max(3);
        format!("u{i:0width$}")
    }
}

fn walk(spec: &SynthSpec, i: usize, center: (f64, f64)) -> Result<Vec<GpsPoint>> {
    let mut rng = seed::stream(spec.seed, "synth", "", &[i as u64]);
    let r = spec.intra_spread_km;
    let step_max = 0.2 * r;
    let uniform_disc = |rng: &mut seed::StreamRng, radius: f64| {
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let d = radius * rng.random::<f64>().sqrt();
        (d * a.cos(), d * a.sin())
    };
    let (mut north, mut east) = uniform_disc(&mut rng, r);
    let t0 = spec.start_time + i as i64 * spec.trace_time_offset_s;
    let mut out = Vec::with_capacity(spec.points_per_trace);
    for k in 0..spec.points_per_trace {
        let (lat, lon) = offset_degrees(center, north, east);
        out.push(GpsPoint::from_degrees(lat, lon, Some(t0 + k as i64 * spec.time_step_s))?);
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let len = step_max * rng.random::<f64>();
        north += len * a.cos();
        east += len * a.sin();
        let dist = north.hypot(east);
        if dist > r {
            // reflect back inside the disc
            let scale = (2.0 * r - dist) / dist;
            north *= scale;
            east *= scale;
        }
    }
    Ok(out)
}

/// Generates the dataset described by `spec`.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let centers = spec.resolve_centers()?;
    let mut traces: Vec<Vec<GpsPoint>> =
        centers.iter().enumerate().map(|(i, &c)| walk(spec, i, c)).collect::<Result<_>>()?;
    let shared = (spec.overlap_fraction * spec.points_per_trace as f64).round() as usize;
    if shared > 0 {
        for pair in 0..spec.n_traces / 2 {
            let (a, b) = (2 * pair, 2 * pair + 1);
            let mut rng = seed::stream(spec.seed, "overlap", "", &[pair as u64]);
            for idx in index::sample(&mut rng, spec.points_per_trace, shared) {
                traces[b][idx] = traces[a][idx];
            }
        }
    }
    let trajectories = traces
        .into_iter()
        .enumerate()
        .map(|(i, pts)| Trajectory::new(spec.pseudo_id(i), pts))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(&spec.name, trajectories, 6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::write_canonical;

    #[test]
    fn counts_and_ranges() {
        let spec = SynthSpec { n_traces: 7, points_per_trace: 33, ..Default::default() };
        let d = generate(&spec).unwrap();
        assert_eq!(d.len(), 7);
        assert!(d.trajectories().all(|t| t.len() == 33));
        let ids: Vec<&str> = d.ids().collect();
        assert_eq!(ids[0], "u000");
    }

    #[test]
    fn points_stay_within_spread() {
        let spec = SynthSpec { n_traces: 4, points_per_trace: 500, intra_spread_km: 0.3, ..Default::default() };
        let d = generate(&spec).unwrap();
        let centers = spec.resolve_centers().unwrap();
        for (t, c) in d.trajectories().zip(centers) {
            let c = GpsPoint::from_degrees(c.0, c.1, None).unwrap();
            for p in t.points() {
                assert!(haversine_km(&c, p) <= 0.3 + 1e-3);
            }
        }
    }

    #[test]
    fn full_overlap_makes_pairs_identical() {
        let spec = SynthSpec { n_traces: 4, points_per_trace: 50, overlap_fraction: 1.0, ..Default::default() };
        let d = generate(&spec).unwrap();
        assert_eq!(d.get("u000").unwrap().points(), d.get("u001").unwrap().points());
        assert_eq!(d.get("u002").unwrap().points(), d.get("u003").unwrap().points());
        assert_ne!(d.get("u001").unwrap().points(), d.get("u002").unwrap().points());
    }

    #[test]
    fn partial_overlap_shares_the_requested_count() {
        let spec = SynthSpec { n_traces: 2, points_per_trace: 100, overlap_fraction: 0.25, ..Default::default() };
        let d = generate(&spec).unwrap();
        let a = d.get("u000").unwrap().points();
        let b = d.get("u001").unwrap().points();
        assert_eq!(b.iter().filter(|p| a.contains(p)).count(), 25);
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let spec = SynthSpec { seed: 42, ..Default::default() };
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_canonical(&generate(&spec).unwrap(), &mut x).unwrap();
        write_canonical(&generate(&spec).unwrap(), &mut y).unwrap();
        assert_eq!(x, y);
        let mut z = Vec::new();
        write_canonical(&generate(&SynthSpec { seed: 43, ..spec }).unwrap(), &mut z).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn centre_validation() {
        let close = SynthSpec {
            n_traces: 2,
            centers: Some(vec![(39.9, 116.4), (39.9001, 116.4)]),
            inter_separation_km: 1.0,
            ..Default::default()
        };
        assert!(generate(&close).is_err());
        let wrong_len = SynthSpec { n_traces: 3, centers: Some(vec![(0.0, 0.0)]), ..Default::default() };
        assert!(generate(&wrong_len).is_err());
        assert!(generate(&SynthSpec { overlap_fraction: 1.5, ..Default::default() }).is_err());
        assert!(generate(&SynthSpec { intra_spread_km: 0.0, ..Default::default() }).is_err());
        let polar = SynthSpec { n_traces: 100, origin: (89.9, 0.0), inter_separation_km: 50.0, ..Default::default() };
        assert!(generate(&polar).is_err());
    }

    #[test]
    fn time_offsets() {
        let spec = SynthSpec { n_traces: 3, points_per_trace: 4, trace_time_offset_s: 1000, time_step_s: 2, ..Default::default() };
        let d = generate(&spec).unwrap();
        assert_eq!(d.get("u002").unwrap().points()[1].t(), Some(spec.start_time + 2002));
    }
}
