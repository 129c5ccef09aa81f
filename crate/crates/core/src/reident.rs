//! Unseen-point re-identification.
//!
//! A sample set `P` is attributed to the trajectory `M` minimising
//! `d(P, M) = (1/|P|) Σ_{p∈P} min_{m∈M} d_st(p, m)`, the modified Hausdorff
//! directed distance generalised with temporal smoothing. With an infinite
//! temporal scale it is exactly the spatial modified Hausdorff distance.

use std::collections::HashSet;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, smoothed_distance, spatiotemporal_distance, GpsPoint, TemporalScale, TimeUnit};
use crate::grid::SpatialGrid;
use crate::seed;
use crate::stats::{mean_ci95, MeanCi};
use crate::trace::{Dataset, Trajectory};
use crate::uniqueness::{distinct_in_order, SampleSet};

/// Strategy for the per-point nearest search inside a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NearestSearch {
    /// Scan every point of the trajectory.
    #[default]
    Exhaustive,
    /// Spatial grid plus time-ordered scan with an exact pruning bound.
    Indexed,
}

/// Default tau grid, in the configured unit.
pub const DEFAULT_TAU_GRID: [f64; 6] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

pub fn default_tau_grid(unit: TimeUnit) -> Vec<TemporalScale> {
    DEFAULT_TAU_GRID.iter().map(|&t| TemporalScale::Finite { tau: t, unit }).collect()
}

fn check_inputs(p: &[GpsPoint], m: &[GpsPoint]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidParameter("sample set is empty".into()));
    }
    if m.is_empty() {
        return Err(Error::InvalidParameter("trajectory is empty".into()));
    }
    Ok(())
}

/// Mean over `p` of the smallest `metric(p, m)` over `m`.
pub fn distance_to_trace_by(
    p: &[GpsPoint],
    m: &[GpsPoint],
    mut metric: impl FnMut(&GpsPoint, &GpsPoint) -> Result<f64>,
) -> Result<f64> {
    check_inputs(p, m)?;
    let mut sum = 0.0;
    for q in p {
        let mut best = f64::INFINITY;
        for x in m {
            best = best.min(metric(q, x)?);
        }
        sum += best;
    }
    Ok(sum / p.len() as f64)
}

/// Exhaustive sample-set-to-trajectory distance under `scale`.
pub fn distance_to_trace(p: &[GpsPoint], m: &[GpsPoint], scale: &TemporalScale) -> Result<f64> {
    distance_to_trace_by(p, m, |a, b| spatiotemporal_distance(a, b, scale))
}

/// Search structure over one trajectory's points (kept in time order).
#[derive(Debug, Clone)]
pub struct TraceIndex {
    points: Vec<GpsPoint>,
    grid: SpatialGrid,
}

impl TraceIndex {
    pub fn new(points: Vec<GpsPoint>) -> Self {
        let mut points = points;
        points.sort_by_key(|p| p.t());
        let grid = SpatialGrid::build(&points, None);
        Self { points, grid }
    }

    pub fn points(&self) -> &[GpsPoint] {
        &self.points
    }

    fn nearest_spatial(&self, q: &GpsPoint, skip: &impl Fn(&GpsPoint) -> bool) -> f64 {
        let mut best = f64::INFINITY;
        self.grid.search(q, |id| {
            let x = &self.points[id as usize];
            if !skip(x) {
                best = best.min(haversine_km(q, x));
            }
            best
        });
        best
    }

    /// Exact `min_m d_st(q, m)` over points not rejected by `skip`.
    /// Returns infinity when every point is skipped.
    pub fn nearest(&self, q: &GpsPoint, scale: &TemporalScale, skip: impl Fn(&GpsPoint) -> bool) -> Result<f64> {
        let floor = self.nearest_spatial(q, &skip);
        if scale.is_infinite() || floor == f64::INFINITY {
            return Ok(floor);
        }
        let qt = q.t().ok_or(Error::MissingTimestamp)?;
        if self.points.first().and_then(|p| p.t()).is_none() {
            return Err(Error::MissingTimestamp);
        }
        // walk outward in |dt|; every unvisited point is at least as far in
        // time as the current front and at least `floor` away in space
        let pos = self.points.partition_point(|p| p.t().unwrap_or(i64::MIN) < qt);
        let (mut lo, mut hi) = (pos, pos);
        let mut best = f64::INFINITY;
        loop {
            let left = (lo > 0).then(|| self.points[lo - 1].t().unwrap_or(0));
            let right = (hi < self.points.len()).then(|| self.points[hi].t().unwrap_or(0));
            let take_left = match (left, right) {
                (None, None) => break,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (Some(l), Some(r)) => qt - l <= r - qt,
            };
            let x = if take_left {
                lo -= 1;
                &self.points[lo]
            } else {
                hi += 1;
                &self.points[hi - 1]
            };
            let bound = smoothed_distance(floor, scale.exponent(qt, x.t().unwrap_or(0)));
            if bound > best {
                break;
            }
            if !skip(x) {
                best = best.min(spatiotemporal_distance(q, x, scale)?);
            }
        }
        Ok(best)
    }

    pub fn distance_from(&self, p: &[GpsPoint], scale: &TemporalScale, skip: impl Fn(&GpsPoint) -> bool) -> Result<f64> {
        check_inputs(p, &self.points)?;
        let mut sum = 0.0;
        for q in p {
            sum += self.nearest(q, scale, &skip)?;
        }
        Ok(sum / p.len() as f64)
    }
}

/// Candidate trajectories ordered by distance, ties broken by pseudo-id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMatch {
    pub ranking: Vec<(String, f64)>,
    pub truth: Option<String>,
    /// Set when removing the sample points emptied the truth trajectory, which
    /// was then left out of the ranking.
    pub truth_skipped: bool,
}

impl RankedMatch {
    /// 1-based rank of `id`.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.ranking.iter().position(|(x, _)| x == id).map(|i| i + 1)
    }

    /// Whether the truth appears among the first `k` entries.
    pub fn hit_at(&self, k: usize) -> bool {
        match &self.truth {
            Some(t) => self.rank_of(t).is_some_and(|r| r <= k),
            None => false,
        }
    }
}

fn sort_ranking(ranking: &mut [(String, f64)]) {
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
}

struct Candidate {
    id: String,
    points: Vec<GpsPoint>,
    index: Option<TraceIndex>,
}

/// Reusable classifier over a fixed set of labelled trajectories.
pub struct Classifier {
    candidates: Vec<Candidate>,
    search: NearestSearch,
}

/// How the truth trajectory is presented during one attack.
enum TruthView<'a> {
    AsIs,
    /// Remove points equal to any sample point.
    Removed(&'a HashSet<GpsPoint>),
    /// Replace the observed truth with these points.
    Replaced(&'a [GpsPoint]),
}

impl Classifier {
    pub fn new(d: &Dataset, search: NearestSearch) -> Self {
        Self::from_trajectories(d.trajectories(), search)
    }

    fn from_trajectories<'a>(trajs: impl Iterator<Item = &'a Trajectory>, search: NearestSearch) -> Self {
        let candidates = trajs
            .map(|t| Candidate {
                id: t.pseudo_id().to_string(),
                points: t.points().to_vec(),
                index: (search == NearestSearch::Indexed).then(|| TraceIndex::new(t.points().to_vec())),
            })
            .collect();
        Self { candidates, search }
    }

    fn from_points(items: Vec<(String, Vec<GpsPoint>)>, search: NearestSearch) -> Self {
        let candidates = items
            .into_iter()
            .map(|(id, points)| {
                let index = (search == NearestSearch::Indexed).then(|| TraceIndex::new(points.clone()));
                Candidate { id, points, index }
            })
            .collect();
        Self { candidates, search }
    }

    fn distance(&self, c: &Candidate, p: &[GpsPoint], scale: &TemporalScale, view: &TruthView) -> Result<Option<f64>> {
        match view {
            TruthView::AsIs => self.plain_distance(c, p, scale).map(Some),
            TruthView::Removed(removed) => {
                if c.points.iter().all(|x| removed.contains(x)) {
                    return Ok(None);
                }
                match &c.index {
                    Some(ix) => ix.distance_from(p, scale, |x| removed.contains(x)).map(Some),
                    None => {
                        let kept: Vec<GpsPoint> = c.points.iter().filter(|x| !removed.contains(x)).copied().collect();
                        distance_to_trace(p, &kept, scale).map(Some)
                    }
                }
            }
            TruthView::Replaced(points) => {
                if points.is_empty() {
                    return Ok(None);
                }
                match self.search {
                    NearestSearch::Indexed => TraceIndex::new(points.to_vec()).distance_from(p, scale, |_| false).map(Some),
                    NearestSearch::Exhaustive => distance_to_trace(p, points, scale).map(Some),
                }
            }
        }
    }

    fn plain_distance(&self, c: &Candidate, p: &[GpsPoint], scale: &TemporalScale) -> Result<f64> {
        match &c.index {
            Some(ix) => ix.distance_from(p, scale, |_| false),
            None => distance_to_trace(p, &c.points, scale),
        }
    }

    fn rank(&self, sample: &SampleSet, scale: &TemporalScale, view: TruthView) -> Result<RankedMatch> {
        let owner = sample.owner();
        let mut ranking = Vec::with_capacity(self.candidates.len());
        let mut truth_skipped = false;
        let mut truth = None;
        for c in &self.candidates {
            let d = if c.id == owner {
                truth = Some(c.id.clone());
                self.distance(c, sample.points(), scale, &view)?
            } else {
                Some(self.plain_distance(c, sample.points(), scale)?)
            };
            match d {
                Some(d) => ranking.push((c.id.clone(), d)),
                None => truth_skipped = true,
            }
        }
        sort_ranking(&mut ranking);
        Ok(RankedMatch { ranking, truth, truth_skipped })
    }

    /// Ranks every trajectory for `sample`. With `exclude_points`, points equal
    /// to a sample point are removed from the owner's trajectory only.
    pub fn classify(&self, sample: &SampleSet, scale: &TemporalScale, exclude_points: bool) -> Result<RankedMatch> {
        if exclude_points {
            let removed: HashSet<GpsPoint> = sample.points().iter().copied().collect();
            self.rank(sample, scale, TruthView::Removed(&removed))
        } else {
            self.rank(sample, scale, TruthView::AsIs)
        }
    }
}

/// One-shot classification with exhaustive search.
pub fn classify(sample: &SampleSet, d: &Dataset, scale: &TemporalScale, exclude_points: bool) -> Result<RankedMatch> {
    Classifier::new(d, NearestSearch::Exhaustive).classify(sample, scale, exclude_points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauTuneResult {
    pub grid: Vec<TemporalScale>,
    pub accuracy: Vec<MeanCi>,
    pub tau_star: TemporalScale,
    pub users: usize,
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub split_fraction: f64,
    pub n_test: usize,
    pub reps: usize,
    pub seed: u64,
    pub search: NearestSearch,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self { split_fraction: 0.5, n_test: 3, reps: 100, seed: 0, search: NearestSearch::Exhaustive }
    }
}

fn draw_distinct(pool: &[GpsPoint], n: usize, rng: &mut seed::StreamRng) -> Vec<GpsPoint> {
    index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
}

/// Picks the tau with the best mean top-1 accuracy (smallest tau on ties).
pub fn pick_tau_star(grid: &[TemporalScale], accuracy: &[MeanCi]) -> Option<TemporalScale> {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].tau_seconds().total_cmp(&grid[b].tau_seconds()));
    let mut best: Option<usize> = None;
    for i in order {
        if best.is_none_or(|b| accuracy[i].mean > accuracy[b].mean) {
            best = Some(i);
        }
    }
    best.map(|i| grid[i])
}

/// Splits every trajectory into random training and test halves, then measures
/// top-1 accuracy of classifying `n_test` test points against the training
/// trajectories for each tau in the grid.
pub fn tune_tau(d: &Dataset, grid: &[TemporalScale], cfg: &TuneConfig) -> Result<TauTuneResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("tau grid is empty".into()));
    }
    if !(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("split fraction must be in (0, 1), got {}", cfg.split_fraction)));
    }
    if cfg.n_test == 0 || cfg.reps == 0 {
        return Err(Error::InvalidParameter("n_test and reps must be positive".into()));
    }
    let mut train = Vec::new();
    let mut tests = Vec::new();
    let mut excluded = Vec::new();
    for t in d.trajectories() {
        let mut rng = seed::stream(cfg.seed, "split", t.pseudo_id(), &[]);
        let n_train = (cfg.split_fraction * t.len() as f64).round() as usize;
        let mut chosen = index::sample(&mut rng, t.len(), n_train).into_vec();
        chosen.sort_unstable();
        let mut in_train = vec![false; t.len()];
        for &i in &chosen {
            in_train[i] = true;
        }
        let (tr, te): (Vec<GpsPoint>, Vec<GpsPoint>) = t
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| (in_train[i], *p))
            .fold((Vec::new(), Vec::new()), |(mut tr, mut te), (train, p)| {
                if train { tr.push(p) } else { te.push(p) }
                (tr, te)
            });
        let te = distinct_in_order(&te);
        if tr.is_empty() || te.len() < cfg.n_test {
            excluded.push(t.pseudo_id().to_string());
            continue;
        }
        train.push((t.pseudo_id().to_string(), tr));
        tests.push((t.pseudo_id().to_string(), te));
    }
    if tests.is_empty() {
        return Err(Error::NoEligibleUsers("no trajectory is large enough to split".into()));
    }
    let classifier = Classifier::from_points(train, cfg.search);
    let per_user: Vec<Vec<f64>> = tests
        .par_iter()
        .map(|(id, pool)| -> Result<Vec<f64>> {
            let mut hits = vec![0u64; grid.len()];
            for r in 0..cfg.reps {
                let mut rng = seed::stream(cfg.seed, "tune", id, &[r as u64]);
                let sample = SampleSet::new(id.clone(), draw_distinct(pool, cfg.n_test, &mut rng))?;
                for (g, scale) in grid.iter().enumerate() {
                    if classifier.classify(&sample, scale, false)?.hit_at(1) {
                        hits[g] += 1;
                    }
                }
            }
            Ok(hits.into_iter().map(|h| h as f64 / cfg.reps as f64).collect())
        })
        .collect::<Result<_>>()?;
    let accuracy: Vec<MeanCi> = (0..grid.len())
        .map(|g| mean_ci95(&per_user.iter().map(|u| u[g]).collect::<Vec<_>>()).expect("non-empty"))
        .collect();
    let tau_star = pick_tau_star(grid, &accuracy).expect("grid non-empty");
    Ok(TauTuneResult { grid: grid.to_vec(), accuracy, tau_star, users: tests.len(), excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyConfig {
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub search: NearestSearch,
}

/// Mean accuracy for one (n, top-k, fraction) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n: usize,
    pub scale: TemporalScale,
    pub top_k: usize,
    pub fraction: f64,
    pub users: usize,
    pub reps: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRun {
    /// Ordered by n, then top-k (1 then 2).
    pub reports: Vec<AccuracyReport>,
    /// Users whose trajectory cannot supply the largest sample.
    pub excluded: Vec<String>,
    /// Per-user top-1 and top-2 hit fractions, indexed like `n_list`.
    pub per_user: Vec<(String, Vec<(f64, f64)>)>,
}

impl AccuracyRun {
    pub fn get(&self, n: usize, top_k: usize) -> Option<&AccuracyReport> {
        self.reports.iter().find(|r| r.n == n && r.top_k == top_k)
    }
}

fn reduce(points: &[GpsPoint], fraction: f64, rng: &mut seed::StreamRng) -> Vec<GpsPoint> {
    if fraction >= 1.0 {
        return points.to_vec();
    }
    let keep = (fraction * points.len() as f64).round() as usize;
    let mut idx = index::sample(rng, points.len(), keep).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}

fn attack(d: &Dataset, scale: &TemporalScale, cfg: &AccuracyConfig, fraction: Option<f64>) -> Result<AccuracyRun> {
    let n_max = cfg.n_list.iter().copied().max().ok_or_else(|| Error::InvalidParameter("empty n list".into()))?;
    if cfg.n_list.contains(&0) || cfg.reps == 0 {
        return Err(Error::InvalidParameter("n values and reps must be positive".into()));
    }
    if let Some(f) = fraction {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidParameter(format!("fraction must be in (0, 1], got {f}")));
        }
    }
    let frac = fraction.unwrap_or(1.0);
    let fbits = frac.to_bits();

    let mut excluded = Vec::new();
    let mut observed = Vec::new();
    let mut eligible = Vec::new();
    for t in d.trajectories() {
        let mut rng = seed::stream(cfg.seed, "reduce", t.pseudo_id(), &[fbits]);
        let obs = reduce(t.points(), frac, &mut rng);
        let distinct = distinct_in_order(t.points());
        let leftover = (frac * (t.len() - n_max.min(t.len())) as f64).round() as usize;
        if obs.is_empty() {
            excluded.push(t.pseudo_id().to_string());
            continue;
        }
        observed.push((t.pseudo_id().to_string(), obs));
        if distinct.len() <= n_max || (frac < 1.0 && leftover == 0) {
            excluded.push(t.pseudo_id().to_string());
        } else {
            eligible.push((t, distinct));
        }
    }
    if eligible.is_empty() {
        return Err(Error::NoEligibleUsers(format!("no trajectory has more than {n_max} distinct points")));
    }
    let classifier = Classifier::from_points(observed, cfg.search);

    let per_user: Vec<(String, Vec<(f64, f64)>)> = eligible
        .par_iter()
        .map(|(t, distinct)| -> Result<(String, Vec<(f64, f64)>)> {
            let id = t.pseudo_id();
            let mut top1 = vec![0u64; cfg.n_list.len()];
            let mut top2 = vec![0u64; cfg.n_list.len()];
            for r in 0..cfg.reps {
                let mut rng = seed::stream(cfg.seed, "attack", id, &[r as u64]);
                let chain = draw_distinct(distinct, n_max, &mut rng);
                for (j, &n) in cfg.n_list.iter().enumerate() {
                    let sample = SampleSet::new(id, chain[..n].to_vec())?;
                    let removed: HashSet<GpsPoint> = sample.points().iter().copied().collect();
                    let m = if frac >= 1.0 {
                        classifier.rank(&sample, scale, TruthView::Removed(&removed))?
                    } else {
                        let rest: Vec<GpsPoint> = t.points().iter().filter(|p| !removed.contains(p)).copied().collect();
                        let mut rng = seed::stream(cfg.seed, "reduce-truth", id, &[r as u64, n as u64, fbits]);
                        let obs = reduce(&rest, frac, &mut rng);
                        classifier.rank(&sample, scale, TruthView::Replaced(&obs))?
                    };
                    if m.hit_at(1) {
                        top1[j] += 1;
                    }
                    if m.hit_at(2) {
                        top2[j] += 1;
                    }
                }
            }
            let reps = cfg.reps as f64;
            Ok((id.to_string(), top1.iter().zip(&top2).map(|(a, b)| (*a as f64 / reps, *b as f64 / reps)).collect()))
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::new();
    for (j, &n) in cfg.n_list.iter().enumerate() {
        for top_k in [1usize, 2] {
            let vals: Vec<f64> =
                per_user.iter().map(|(_, v)| if top_k == 1 { v[j].0 } else { v[j].1 }).collect();
            let ci = mean_ci95(&vals).expect("non-empty");
            reports.push(AccuracyReport {
                n,
                scale: *scale,
                top_k,
                fraction: frac,
                users: vals.len(),
                reps: cfg.reps,
                mean: ci.mean,
                ci_low: ci.ci_low,
                ci_high: ci.ci_high,
                seed: cfg.seed,
            });
        }
    }
    excluded.sort();
    excluded.dedup();
    Ok(AccuracyRun { reports, excluded, per_user })
}

/// For every trajectory and repetition: draw `n` distinct points, remove them
/// from the trajectory, classify, and score top-1 and top-2 hits.
pub fn accuracy_experiment(d: &Dataset, scale: &TemporalScale, cfg: &AccuracyConfig) -> Result<AccuracyRun> {
    attack(d, scale, cfg, None)
}

/// The accuracy experiment with every observed trajectory uniformly
/// subsampled to each fraction. Samples are never part of the observed side.
pub fn trace_reduction_experiment(
    d: &Dataset,
    scale: &TemporalScale,
    fractions: &[f64],
    cfg: &AccuracyConfig,
) -> Result<Vec<AccuracyRun>> {
    fractions.iter().map(|&f| attack(d, scale, cfg, Some(f))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};
    use proptest::prelude::*;

    fn pt(lat: i32, lon: i32, t: i64) -> GpsPoint {
        GpsPoint::from_e6(lat, lon, Some(t)).unwrap()
    }

    fn days(tau: f64) -> TemporalScale {
        TemporalScale::finite(tau, TimeUnit::Days).unwrap()
    }

    fn brute(p: &[GpsPoint], m: &[GpsPoint], scale: &TemporalScale) -> f64 {
        let mut total = 0.0;
        for a in p {
            let mut best = f64::INFINITY;
            for b in m {
                let d = spatiotemporal_distance(a, b, scale).unwrap();
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        total / p.len() as f64
    }

    #[test]
    fn self_match_is_zero() {
        let m: Vec<GpsPoint> = (0..20).map(|i| pt(39_900_000 + i * 100, 116_400_000, i as i64 * 5)).collect();
        assert_eq!(distance_to_trace(&m[3..6], &m, &days(0.01)).unwrap(), 0.0);
    }

    #[test]
    fn single_pair_collapses_to_point_distance() {
        let a = pt(39_900_000, 116_400_000, 0);
        let b = pt(39_910_000, 116_410_000, 600);
        let s = days(0.01);
        assert_eq!(distance_to_trace(&[a], &[b], &s).unwrap(), spatiotemporal_distance(&a, &b, &s).unwrap());
    }

    #[test]
    fn empty_inputs_error() {
        let a = pt(0, 0, 0);
        assert!(distance_to_trace(&[], &[a], &TemporalScale::Infinite).is_err());
        assert!(distance_to_trace(&[a], &[], &TemporalScale::Infinite).is_err());
    }

    #[test]
    fn random_instances_match_double_loop() {
        let d = generate(&SynthSpec { n_traces: 2, points_per_trace: 50, ..Default::default() }).unwrap();
        let m = d.get("u000").unwrap().points();
        let p = &d.get("u001").unwrap().points()[..4];
        for s in [days(1e-3), days(1.0), TemporalScale::Infinite] {
            assert_eq!(distance_to_trace(p, m, &s).unwrap(), brute(p, m, &s));
            assert_eq!(TraceIndex::new(m.to_vec()).distance_from(p, &s, |_| false).unwrap(), brute(p, m, &s));
        }
    }

    #[test]
    fn separated_traces_rank_truth_first() {
        let spec = SynthSpec { n_traces: 3, points_per_trace: 40, inter_separation_km: 50.0, ..Default::default() };
        let d = generate(&spec).unwrap();
        let t = d.get("u001").unwrap();
        let sample = SampleSet::drawn_from(t, t.points()[10..13].to_vec()).unwrap();
        let m = classify(&sample, &d, &days(0.01), true).unwrap();
        assert_eq!(m.ranking[0].0, "u001");
        assert!(m.hit_at(1));
        assert_eq!(m.ranking.len(), 3);
    }

    #[test]
    fn identical_traces_tie_by_id() {
        let pts: Vec<GpsPoint> = (0..10).map(|i| pt(39_900_000 + i * 50, 116_400_000, i as i64)).collect();
        let other: Vec<GpsPoint> = (0..10).map(|i| pt(10_000_000 + i * 50, 16_400_000, i as i64)).collect();
        let d = Dataset::new(
            "d",
            vec![
                Trajectory::new("b", pts.clone()).unwrap(),
                Trajectory::new("a", pts.clone()).unwrap(),
                Trajectory::new("c", other).unwrap(),
            ],
            6,
        )
        .unwrap();
        let sample = SampleSet::new("b", vec![pts[4]]).unwrap();
        let m = classify(&sample, &d, &TemporalScale::Infinite, false).unwrap();
        assert_eq!(m.ranking[0], ("a".to_string(), 0.0));
        assert_eq!(m.ranking[1], ("b".to_string(), 0.0));
        assert_eq!(m.rank_of("b"), Some(2));
        assert!(!m.hit_at(1));
        assert!(m.hit_at(2));
    }

    #[test]
    fn removal_affects_truth_only_and_flags_empty_truth() {
        let a = vec![pt(1_000_000, 1_000_000, 1)];
        let b = vec![pt(1_000_000, 1_000_000, 1), pt(2_000_000, 2_000_000, 2)];
        let d = Dataset::new("d", vec![Trajectory::new("a", a.clone()).unwrap(), Trajectory::new("b", b).unwrap()], 6)
            .unwrap();
        let sample = SampleSet::new("a", a.clone()).unwrap();
        for search in [NearestSearch::Exhaustive, NearestSearch::Indexed] {
            let m = Classifier::new(&d, search).classify(&sample, &TemporalScale::Infinite, true).unwrap();
            assert!(m.truth_skipped);
            assert_eq!(m.ranking, vec![("b".to_string(), 0.0)]);
            assert!(!m.hit_at(2));
        }
    }

    #[test]
    fn ranking_equals_brute_force_per_trace() {
        let d = generate(&SynthSpec {
            n_traces: 10,
            points_per_trace: 60,
            inter_separation_km: 0.3,
            intra_spread_km: 0.5,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let t = d.get("u004").unwrap();
        let sample = SampleSet::drawn_from(t, vec![t.points()[5], t.points()[30], t.points()[55]]).unwrap();
        let removed: HashSet<GpsPoint> = sample.points().iter().copied().collect();
        for s in [days(1e-3), days(0.1), TemporalScale::Infinite] {
            let mut expect: Vec<(String, f64)> = d
                .trajectories()
                .map(|tr| {
                    let pts: Vec<GpsPoint> = if tr.pseudo_id() == "u004" {
                        tr.points().iter().filter(|p| !removed.contains(p)).copied().collect()
                    } else {
                        tr.points().to_vec()
                    };
                    (tr.pseudo_id().to_string(), brute(sample.points(), &pts, &s))
                })
                .collect();
            expect.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            for search in [NearestSearch::Exhaustive, NearestSearch::Indexed] {
                let got = Classifier::new(&d, search).classify(&sample, &s, true).unwrap();
                assert_eq!(got.ranking, expect);
            }
        }
    }

    #[test]
    fn tau_star_edges() {
        let spec = SynthSpec { n_traces: 4, points_per_trace: 40, inter_separation_km: 100.0, ..Default::default() };
        let d = generate(&spec).unwrap();
        let cfg = TuneConfig { reps: 10, seed: 3, ..Default::default() };
        let single = tune_tau(&d, &[days(0.5)], &cfg).unwrap();
        assert_eq!(single.tau_star, days(0.5));
        let grid = default_tau_grid(TimeUnit::Days);
        let all = tune_tau(&d, &grid, &cfg).unwrap();
        assert!(all.accuracy.iter().all(|a| a.mean == 1.0));
        assert_eq!(all.tau_star, days(1e-4));
        assert!(tune_tau(&d, &[], &cfg).is_err());
    }

    #[test]
    fn tau_star_prefers_temporal_discrimination() {
        // traces share one neighbourhood but are recorded on different days
        let n = 8;
        let spec = SynthSpec {
            n_traces: n,
            points_per_trace: 120,
            centers: Some((0..n).map(|i| (39.9 + i as f64 * 1e-4, 116.4)).collect()),
            inter_separation_km: 0.01,
            intra_spread_km: 1.0,
            trace_time_offset_s: 86_400,
            seed: 5,
            ..Default::default()
        };
        let d = generate(&spec).unwrap();
        let grid = default_tau_grid(TimeUnit::Days);
        let cfg = TuneConfig { reps: 20, seed: 1, ..Default::default() };
        let r = tune_tau(&d, &grid, &cfg).unwrap();
        // exhaustive re-evaluation of the whole grid with the indexed search
        let r2 = tune_tau(&d, &grid, &TuneConfig { search: NearestSearch::Indexed, ..cfg }).unwrap();
        assert_eq!(r, r2);
        let first = r.accuracy.first().unwrap().mean;
        let last = r.accuracy.last().unwrap().mean;
        assert_eq!(first, 1.0);
        assert!(last < first, "{:?}", r.accuracy);
        assert!(matches!(r.tau_star, TemporalScale::Finite { .. }));
        assert!(r.tau_star.tau_seconds() < grid.last().unwrap().tau_seconds());
        for w in r.accuracy.windows(2) {
            assert!(w[0].mean >= w[1].mean - 0.05, "{:?}", r.accuracy);
        }
    }

    #[test]
    fn separated_accuracy_is_perfect_and_top2_dominates() {
        let spec = SynthSpec { n_traces: 6, points_per_trace: 50, inter_separation_km: 100.0, intra_spread_km: 0.5, ..Default::default() };
        let d = generate(&spec).unwrap();
        let cfg = AccuracyConfig { n_list: vec![1, 2, 3], reps: 10, seed: 9, search: NearestSearch::Exhaustive };
        let run = accuracy_experiment(&d, &days(0.01), &cfg).unwrap();
        assert_eq!(run.get(1, 1).unwrap().mean, 1.0);
        for (_, v) in &run.per_user {
            for (a, b) in v {
                assert!(b >= a);
            }
        }
        let reduced = trace_reduction_experiment(&d, &days(0.01), &[0.2], &cfg).unwrap();
        assert_eq!(reduced[0].get(1, 1).unwrap().mean, 1.0);
    }

    #[test]
    fn full_fraction_equals_accuracy_experiment() {
        let spec = SynthSpec { n_traces: 6, points_per_trace: 40, inter_separation_km: 0.4, intra_spread_km: 0.5, seed: 2, ..Default::default() };
        let d = generate(&spec).unwrap();
        let cfg = AccuracyConfig { n_list: vec![1, 3], reps: 8, seed: 4, search: NearestSearch::Exhaustive };
        let s = days(0.001);
        let plain = accuracy_experiment(&d, &s, &cfg).unwrap();
        let full = trace_reduction_experiment(&d, &s, &[1.0], &cfg).unwrap();
        assert_eq!(plain, full[0]);
        let idx = accuracy_experiment(&d, &s, &AccuracyConfig { search: NearestSearch::Indexed, ..cfg.clone() }).unwrap();
        assert_eq!(plain, idx);
    }

    #[test]
    fn accuracy_replays_brute_force() {
        let spec = SynthSpec { n_traces: 10, points_per_trace: 30, inter_separation_km: 0.3, intra_spread_km: 0.5, seed: 8, ..Default::default() };
        let d = generate(&spec).unwrap();
        let s = days(0.01);
        let cfg = AccuracyConfig { n_list: vec![1, 2], reps: 5, seed: 6, search: NearestSearch::Exhaustive };
        let run = accuracy_experiment(&d, &s, &cfg).unwrap();
        for (id, fracs) in &run.per_user {
            let t = d.get(id).unwrap();
            let distinct = distinct_in_order(t.points());
            let mut hits = [[0u32; 2]; 2];
            for r in 0..cfg.reps {
                let mut rng = seed::stream(cfg.seed, "attack", id, &[r as u64]);
                let chain = draw_distinct(&distinct, 2, &mut rng);
                for (j, n) in [1usize, 2].into_iter().enumerate() {
                    let p = &chain[..n];
                    let mut scored: Vec<(String, f64)> = d
                        .trajectories()
                        .map(|o| {
                            let pts: Vec<GpsPoint> =
                                o.points().iter().filter(|x| o.pseudo_id() != id || !p.contains(x)).copied().collect();
                            (o.pseudo_id().to_string(), brute(p, &pts, &s))
                        })
                        .collect();
                    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
                    let rank = scored.iter().position(|(x, _)| x == id).unwrap();
                    if rank == 0 {
                        hits[j][0] += 1;
                    }
                    if rank <= 1 {
                        hits[j][1] += 1;
                    }
                }
            }
            for j in 0..2 {
                assert_eq!(fracs[j].0, hits[j][0] as f64 / 5.0);
                assert_eq!(fracs[j].1, hits[j][1] as f64 / 5.0);
            }
        }
    }

    #[test]
    fn reduction_search_modes_agree_and_trend_down() {
        let spec = SynthSpec { n_traces: 8, points_per_trace: 80, inter_separation_km: 0.2, intra_spread_km: 0.6, seed: 21, ..Default::default() };
        let d = generate(&spec).unwrap();
        let s = TemporalScale::Infinite;
        let cfg = AccuracyConfig { n_list: vec![1], reps: 30, seed: 2, search: NearestSearch::Exhaustive };
        let runs = trace_reduction_experiment(&d, &s, &[0.2, 1.0], &cfg).unwrap();
        let idx = trace_reduction_experiment(&d, &s, &[0.2, 1.0], &AccuracyConfig { search: NearestSearch::Indexed, ..cfg.clone() }).unwrap();
        assert_eq!(runs, idx);
        assert!(runs[0].get(1, 1).unwrap().mean <= runs[1].get(1, 1).unwrap().mean);
    }

    #[test]
    fn eligibility_and_validation() {
        let d = Dataset::new(
            "d",
            vec![
                Trajectory::new("a", (0..5).map(|i| pt(i * 1000, 0, i as i64)).collect()).unwrap(),
                Trajectory::new("b", vec![pt(5_000_000, 0, 0)]).unwrap(),
            ],
            6,
        )
        .unwrap();
        let cfg = AccuracyConfig { n_list: vec![1], reps: 2, seed: 0, search: NearestSearch::Exhaustive };
        let run = accuracy_experiment(&d, &TemporalScale::Infinite, &cfg).unwrap();
        assert_eq!(run.excluded, vec!["b"]);
        assert!(accuracy_experiment(&d, &TemporalScale::Infinite, &AccuracyConfig { n_list: vec![], ..cfg.clone() }).is_err());
        assert!(trace_reduction_experiment(&d, &TemporalScale::Infinite, &[0.0], &cfg).is_err());
    }

    // classic directed Hausdorff distance: the worst point instead of the mean
    fn classic_directed(a: &[GpsPoint], b: &[GpsPoint]) -> f64 {
        a.iter()
            .map(|p| b.iter().map(|q| haversine_km(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }

    fn classic(a: &[GpsPoint], b: &[GpsPoint]) -> f64 {
        classic_directed(a, b).max(classic_directed(b, a))
    }

    #[test]
    fn classic_hausdorff_baseline() {
        let d = generate(&SynthSpec { n_traces: 3, points_per_trace: 80, ..Default::default() }).unwrap();
        let m = d.get("u000").unwrap().points();
        for other in ["u001", "u002"] {
            let p = &d.get(other).unwrap().points()[..6];
            let modified = distance_to_trace(p, m, &TemporalScale::Infinite).unwrap();
            assert!(modified <= classic_directed(p, m));
            assert!(classic_directed(p, m) <= classic(p, m));
            assert_eq!(distance_to_trace(&p[..1], m, &TemporalScale::Infinite).unwrap(), classic_directed(&p[..1], m));
        }
        // one far outlier dominates the classic distance but only shifts the mean
        let mut p = m[..9].to_vec();
        p.push(pt(40_800_000, 116_400_000, 0));
        let far = classic_directed(&p[9..], m);
        assert!(far > 90.0);
        assert_eq!(classic_directed(&p, m), far);
        let modified = distance_to_trace(&p, m, &TemporalScale::Infinite).unwrap();
        assert!((modified - far / 10.0).abs() < 1e-9);
    }

    fn arb_pts(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<GpsPoint>> {
        proptest::collection::vec((39_800_000i32..40_000_000, 116_300_000i32..116_500_000, 0i64..200_000), n)
            .prop_map(|v| v.into_iter().map(|(a, b, t)| pt(a, b, t)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn indexed_matches_exhaustive(p in arb_pts(1..5), m in arb_pts(1..120), tau in prop::sample::select(vec![1e-5, 1e-3, 0.1, 10.0])) {
            let ix = TraceIndex::new(m.clone());
            for s in [days(tau), TemporalScale::Infinite] {
                for q in &p {
                    let exhaustive = m.iter().map(|x| spatiotemporal_distance(q, x, &s).unwrap()).fold(f64::INFINITY, f64::min);
                    prop_assert_eq!(ix.nearest(q, &s, |_| false).unwrap(), exhaustive);
                }
            }
        }

        #[test]
        fn scaling_distances_preserves_ranking(p in arb_pts(1..4), ms in proptest::collection::vec(arb_pts(1..30), 2..6), c in 0.01f64..100.0) {
            let rank = |factor: f64| {
                let mut r: Vec<(String, f64)> = ms.iter().enumerate().map(|(i, m)| {
                    let d = distance_to_trace_by(&p, m, |a, b| Ok(factor * spatiotemporal_distance(a, b, &days(0.01))?)).unwrap();
                    (format!("{i}"), d)
                }).collect();
                sort_ranking(&mut r);
                r.into_iter().map(|(id, _)| id).collect::<Vec<_>>()
            };
            prop_assert_eq!(rank(1.0), rank(c));
        }

        #[test]
        fn own_points_never_increase_distance(m in arb_pts(5..40), extra in 1usize..4) {
            let s = days(0.01);
            let base = distance_to_trace(&m[..1], &m[1..], &s).unwrap();
            let outside = [m[0]];
            let mut p = outside.to_vec();
            p.extend_from_slice(&m[1..1 + extra.min(m.len() - 1)]);
            prop_assert!(distance_to_trace(&p, &m[1..], &s).unwrap() <= base);
        }
    }
}
