//! Geometric separability of labelled point clouds.
//!
//! For every point the nearest other point is found (by index identity, so
//! coincident points from other classes count as neighbours). A class's
//! separability is the fraction of its points whose nearest neighbour carries
//! the same label; the class-averaged index is the unweighted mean over
//! classes.

use std::collections::BTreeMap;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarsen::{Mode, PointKey};
use crate::error::{Error, Result};
use crate::geo::{haversine_km, smoothed_distance, GpsPoint, TemporalScale};
use crate::grid::SpatialGrid;
use crate::seed;
use crate::trace::Dataset;
use crate::uniqueness::duplicate_groups;

/// Default per-class point cap.
pub const DEFAULT_CLASS_CAP: usize = 2000;

/// Candidate ordering: distance, then label, then timestamp, then index.
type Key = (f64, u32, Option<i64>, usize);

fn better(a: &Key, b: &Key) -> bool {
    a.0.total_cmp(&b.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
        .then(a.3.cmp(&b.3))
        .is_lt()
}

struct NeighbourSearch<'a> {
    points: &'a [GpsPoint],
    labels: &'a [u32],
    grid: SpatialGrid,
    /// Indices sorted by timestamp (temporal mode only).
    by_time: Vec<usize>,
    scale: TemporalScale,
}

impl<'a> NeighbourSearch<'a> {
    fn new(points: &'a [GpsPoint], labels: &'a [u32], scale: TemporalScale) -> Result<Self> {
        let mut by_time = Vec::new();
        if !scale.is_infinite() {
            if points.iter().any(|p| p.t().is_none()) {
                return Err(Error::MissingTimestamp);
            }
            by_time = (0..points.len()).collect();
            by_time.sort_by_key(|&i| (points[i].t(), i));
        }
        Ok(Self { points, labels, grid: SpatialGrid::build(points, None), by_time, scale })
    }

    fn key(&self, j: usize, d: f64) -> Key {
        (d, self.labels[j], self.points[j].t(), j)
    }

    fn spatial(&self, i: usize) -> Option<Key> {
        let q = &self.points[i];
        let mut best: Option<Key> = None;
        self.grid.search(q, |id| {
            let j = id as usize;
            if j != i {
                let k = self.key(j, haversine_km(q, &self.points[j]));
                if best.is_none_or(|b| better(&k, &b)) {
                    best = Some(k);
                }
            }
            best.map_or(f64::INFINITY, |b| b.0)
        });
        best
    }

    fn nearest(&self, i: usize) -> Option<Key> {
        let floor = self.spatial(i)?;
        if self.scale.is_infinite() {
            return Some(floor);
        }
        let q = &self.points[i];
        let qt = q.t().unwrap_or(0);
        let t_of = |j: usize| self.points[j].t().unwrap_or(0);
        let pos = self.by_time.partition_point(|&j| t_of(j) < qt);
        let (mut lo, mut hi) = (pos, pos);
        let mut best: Option<Key> = None;
        loop {
            let take_left = match (lo > 0, hi < self.by_time.len()) {
                (false, false) => break,
                (true, false) => true,
                (false, true) => false,
                (true, true) => qt - t_of(self.by_time[lo - 1]) <= t_of(self.by_time[hi]) - qt,
            };
            let j = if take_left {
                lo -= 1;
                self.by_time[lo]
            } else {
                hi += 1;
                self.by_time[hi - 1]
            };
            let e = self.scale.exponent(qt, t_of(j));
            if best.is_some_and(|b| smoothed_distance(floor.0, e) > b.0) {
                break;
            }
            if j != i {
                let k = self.key(j, smoothed_distance(haversine_km(q, &self.points[j]), e));
                if best.is_none_or(|b| better(&k, &b)) {
                    best = Some(k);
                }
            }
        }
        best
    }
}

/// For every point, whether its nearest other point shares its label.
/// `scale` infinite means purely spatial distance.
pub fn same_label_neighbours(points: &[GpsPoint], labels: &[u32], scale: &TemporalScale) -> Result<Vec<bool>> {
    if points.len() != labels.len() {
        return Err(Error::InvalidParameter("points and labels differ in length".into()));
    }
    if points.len() < 2 {
        return Err(Error::InvalidParameter("separability needs at least two points".into()));
    }
    let search = NeighbourSearch::new(points, labels, *scale)?;
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            search
                .nearest(i)
                .map(|k| labels[k.3] == labels[i])
                .ok_or_else(|| Error::InvalidParameter(format!("point {i} has no eligible neighbour")))
        })
        .collect()
}

/// Fraction of points whose nearest neighbour shares their label.
pub fn gsi(points: &[GpsPoint], labels: &[u32], scale: &TemporalScale) -> Result<f64> {
    let same = same_label_neighbours(points, labels, scale)?;
    Ok(same.iter().filter(|&&s| s).count() as f64 / same.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSeparability {
    pub fraction: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub per_class: BTreeMap<String, ClassSeparability>,
    pub agsi: f64,
    /// Pooled fraction over all points.
    pub gsi: f64,
    pub mode: Mode,
    pub scale: TemporalScale,
    pub class_cap: Option<usize>,
    pub seed: u64,
    pub excluded: Vec<String>,
    pub duplicate_groups: Vec<Vec<String>>,
}

/// Per-class and class-averaged separability of a dataset, classes being
/// pseudo-identities. Classes above `class_cap` points are uniformly
/// subsampled to the cap.
pub fn agsi(d: &Dataset, mode: Mode, scale: &TemporalScale, class_cap: Option<usize>, seed: u64) -> Result<SeparabilityReport> {
    if class_cap == Some(0) {
        return Err(Error::InvalidParameter("class cap must be positive".into()));
    }
    let scale = match mode {
        Mode::Spatial => TemporalScale::Infinite,
        Mode::SpatioTemporal => {
            if scale.is_infinite() {
                return Err(Error::InvalidParameter("spatio-temporal separability needs a finite tau".into()));
            }
            *scale
        }
    };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut classes = Vec::new();
    let mut excluded = Vec::new();
    for t in d.trajectories() {
        let pts = t.points();
        let chosen: Vec<GpsPoint> = match class_cap {
            Some(cap) if pts.len() > cap => {
                let mut rng = seed::stream(seed, "class-cap", t.pseudo_id(), &[]);
                let mut idx = index::sample(&mut rng, pts.len(), cap).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| pts[i]).collect()
            }
            _ => pts.to_vec(),
        };
        if chosen.is_empty() {
            excluded.push(t.pseudo_id().to_string());
            continue;
        }
        let label = classes.len() as u32;
        labels.extend(std::iter::repeat_n(label, chosen.len()));
        classes.push((t.pseudo_id().to_string(), chosen.len()));
        points.extend(chosen);
    }
    let same = same_label_neighbours(&points, &labels, &scale)?;
    let mut hits = vec![0usize; classes.len()];
    for (l, s) in labels.iter().zip(&same) {
        if *s {
            hits[*l as usize] += 1;
        }
    }
    let per_class: BTreeMap<String, ClassSeparability> = classes
        .iter()
        .zip(&hits)
        .map(|((id, n), h)| (id.clone(), ClassSeparability { fraction: *h as f64 / *n as f64, n_points: *n }))
        .collect();
    let agsi = per_class.values().map(|c| c.fraction).sum::<f64>() / per_class.len() as f64;
    let gsi = hits.iter().sum::<usize>() as f64 / points.len() as f64;
    let keyed: BTreeMap<String, Vec<PointKey>> =
        d.trajectories().map(|t| (t.pseudo_id().to_string(), t.points().iter().map(|p| mode.key(p)).collect())).collect();
    Ok(SeparabilityReport {
        per_class,
        agsi,
        gsi,
        mode,
        scale,
        class_cap,
        seed,
        excluded,
        duplicate_groups: duplicate_groups(&keyed),
    })
}

/// Right-continuous empirical CDF of the per-class fractions, one
/// `(x, F(x))` pair per distinct value.
pub fn separability_cdf(report: &SeparabilityReport) -> Result<Vec<(f64, f64)>> {
    let values: Vec<f64> = report.per_class.values().map(|c| c.fraction).collect();
    empirical_cdf(&values)
}

pub fn empirical_cdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no per-class values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = f,
            _ => out.push((*x, f)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{spatiotemporal_distance, TimeUnit};
    use crate::synth::{generate, SynthSpec};
    use crate::trace::Trajectory;
    use proptest::prelude::*;

    fn brute_same(points: &[GpsPoint], labels: &[u32], scale: &TemporalScale) -> Vec<bool> {
        (0..points.len())
            .map(|i| {
                let mut best: Option<(f64, u32, Option<i64>, usize)> = None;
                for j in 0..points.len() {
                    if i == j {
                        continue;
                    }
                    let d = spatiotemporal_distance(&points[i], &points[j], scale).unwrap();
                    let k = (d, labels[j], points[j].t(), j);
                    if best.is_none_or(|b| k.partial_cmp(&b).unwrap().is_lt()) {
                        best = Some(k);
                    }
                }
                labels[best.unwrap().3] == labels[i]
            })
            .collect()
    }

    fn flatten(d: &Dataset) -> (Vec<GpsPoint>, Vec<u32>) {
        let mut p = Vec::new();
        let mut l = Vec::new();
        for (i, t) in d.trajectories().enumerate() {
            p.extend_from_slice(t.points());
            l.extend(std::iter::repeat_n(i as u32, t.len()));
        }
        (p, l)
    }

    fn days(t: f64) -> TemporalScale {
        TemporalScale::finite(t, TimeUnit::Days).unwrap()
    }

    #[test]
    fn separated_clusters_score_one() {
        let d = generate(&SynthSpec { n_traces: 2, points_per_trace: 30, inter_separation_km: 50.0, ..Default::default() }).unwrap();
        let (p, l) = flatten(&d);
        assert_eq!(gsi(&p, &l, &TemporalScale::Infinite).unwrap(), 1.0);
        let r = agsi(&d, Mode::Spatial, &TemporalScale::Infinite, None, 0).unwrap();
        assert_eq!(r.agsi, 1.0);
        assert!(r.duplicate_groups.is_empty());
    }

    #[test]
    fn interleaved_pairs_score_zero() {
        // each class-0 point has a class-1 twin 1 m away; pairs are 1 km apart
        let mut p = Vec::new();
        let mut l = Vec::new();
        for k in 0..20 {
            let base = 39_000_000 + k * 10_000;
            p.push(GpsPoint::from_e6(base, 116_000_000, None).unwrap());
            l.push(0);
            p.push(GpsPoint::from_e6(base + 9, 116_000_000, None).unwrap());
            l.push(1);
        }
        assert_eq!(gsi(&p, &l, &TemporalScale::Infinite).unwrap(), 0.0);
    }

    #[test]
    fn identical_traces_follow_tie_rule() {
        let pts: Vec<GpsPoint> = (0..10).map(|i| GpsPoint::from_e6(39_900_000 + i * 1000, 116_400_000, Some(i as i64 * 10)).unwrap()).collect();
        let doubled: Vec<GpsPoint> = pts.iter().flat_map(|p| [*p, *p]).collect();
        let two = Dataset::new("d", vec![Trajectory::new("a", pts.clone()).unwrap(), Trajectory::new("b", pts.clone()).unwrap()], 6).unwrap();
        let r = agsi(&two, Mode::Spatial, &TemporalScale::Infinite, None, 0).unwrap();
        assert_eq!(r.agsi, 0.0);
        assert_eq!(r.duplicate_groups, vec![vec!["a".to_string(), "b".to_string()]]);
        let d = Dataset::new("d", vec![Trajectory::new("a", doubled).unwrap(), Trajectory::new("b", pts).unwrap()], 6).unwrap();
        for (mode, s) in [(Mode::Spatial, TemporalScale::Infinite), (Mode::SpatioTemporal, days(0.01))] {
            let r = agsi(&d, mode, &s, None, 0).unwrap();
            // zero-distance ties between an own duplicate and the other class
            // go to the lower label
            assert_eq!(r.per_class["a"].fraction, 1.0);
            assert_eq!(r.per_class["b"].fraction, 0.0);
            assert_eq!(r.agsi, 0.5);
            assert_eq!(r.duplicate_groups, vec![vec!["a".to_string(), "b".to_string()]]);
        }
    }

    #[test]
    fn small_inputs_error() {
        let p = [GpsPoint::from_e6(0, 0, None).unwrap()];
        assert!(gsi(&p, &[0], &TemporalScale::Infinite).is_err());
        assert!(gsi(&p, &[0, 1], &TemporalScale::Infinite).is_err());
        assert!(gsi(&[p[0], p[0]], &[0, 1], &days(1.0)).is_err());
    }

    #[test]
    fn fifty_point_three_class_instance_matches_brute_force() {
        let d = generate(&SynthSpec { n_traces: 3, points_per_trace: 17, inter_separation_km: 0.3, seed: 4, ..Default::default() }).unwrap();
        let (p, l) = flatten(&d);
        let p = &p[..50];
        let l = &l[..50];
        for s in [TemporalScale::Infinite, days(1e-3), days(1.0)] {
            assert_eq!(same_label_neighbours(p, l, &s).unwrap(), brute_same(p, l, &s));
        }
    }

    #[test]
    fn five_class_report_matches_brute_force() {
        let d = generate(&SynthSpec { n_traces: 5, points_per_trace: 80, inter_separation_km: 0.4, overlap_fraction: 0.3, seed: 2, ..Default::default() }).unwrap();
        let (p, l) = flatten(&d);
        let s = days(0.005);
        let same = brute_same(&p, &l, &s);
        let r = agsi(&d, Mode::SpatioTemporal, &s, None, 0).unwrap();
        let mut mean = 0.0;
        for (i, (id, c)) in r.per_class.iter().enumerate() {
            let hits = l.iter().zip(&same).filter(|(x, s)| **x == i as u32 && **s).count();
            assert_eq!(c.fraction, hits as f64 / 80.0, "{id}");
            mean += c.fraction;
        }
        assert_eq!(r.agsi, mean / 5.0);
    }

    #[test]
    fn class_cap_subsamples_deterministically() {
        let d = generate(&SynthSpec { n_traces: 3, points_per_trace: 100, ..Default::default() }).unwrap();
        let a = agsi(&d, Mode::Spatial, &TemporalScale::Infinite, Some(25), 7).unwrap();
        assert!(a.per_class.values().all(|c| c.n_points == 25));
        assert_eq!(a, agsi(&d, Mode::Spatial, &TemporalScale::Infinite, Some(25), 7).unwrap());
        assert!(agsi(&d, Mode::SpatioTemporal, &TemporalScale::Infinite, None, 0).is_err());
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(empirical_cdf(&[1.0, 1.0, 1.0]).unwrap(), vec![(1.0, 1.0)]);
        assert_eq!(empirical_cdf(&[0.8, 0.2]).unwrap(), vec![(0.2, 0.5), (0.8, 1.0)]);
        assert!(empirical_cdf(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn cdf_matches_rank_oracle(v in proptest::collection::vec(0u32..=20, 1..40)) {
            let v: Vec<f64> = v.into_iter().map(|x| x as f64 / 20.0).collect();
            let cdf = empirical_cdf(&v).unwrap();
            for (x, f) in &cdf {
                let rank = v.iter().filter(|y| *y <= x).count();
                prop_assert_eq!(*f, rank as f64 / v.len() as f64);
            }
            let mut distinct = v.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            prop_assert_eq!(cdf.len(), distinct.len());
        }

        #[test]
        fn grid_search_matches_brute_force(
            raw in proptest::collection::vec((39_900_000i32..39_905_000, 116_400_000i32..116_405_000, 0i64..5_000, 0u32..4), 2..120),
            tau in prop::sample::select(vec![None, Some(1e-4), Some(0.01), Some(5.0)]),
        ) {
            let p: Vec<GpsPoint> = raw.iter().map(|&(a, b, t, _)| GpsPoint::from_e6(a, b, Some(t)).unwrap()).collect();
            let l: Vec<u32> = raw.iter().map(|r| r.3).collect();
            let s = tau.map_or(TemporalScale::Infinite, days);
            prop_assert_eq!(same_label_neighbours(&p, &l, &s).unwrap(), brute_same(&p, &l, &s));
        }

        #[test]
        fn relabelling_preserves_scores(seed in 0u64..500, perm in Just(vec![3u32, 0, 2, 1]).prop_shuffle()) {
            let d = generate(&SynthSpec { n_traces: 4, points_per_trace: 25, inter_separation_km: 0.3, seed, ..Default::default() }).unwrap();
            let renamed: Vec<Trajectory> = d
                .trajectories()
                .enumerate()
                .map(|(i, t)| Trajectory::new(format!("c{}", perm[i]), t.points().to_vec()).unwrap())
                .collect();
            let e = Dataset::new("e", renamed, 6).unwrap();
            let a = agsi(&d, Mode::Spatial, &TemporalScale::Infinite, None, 0).unwrap();
            let b = agsi(&e, Mode::Spatial, &TemporalScale::Infinite, None, 0).unwrap();
            prop_assert!((a.agsi - b.agsi).abs() < 1e-12);
            prop_assert_eq!(a.gsi, b.gsi);
            prop_assert!(a.per_class.values().chain(b.per_class.values()).all(|c| (0.0..=1.0).contains(&c.fraction)));
        }
    }
}
