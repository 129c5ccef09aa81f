//! Seen-point uniqueness protocol.
//!
//! For every eligible user, `samples` random nested chains
//! `S_1 ⊂ S_2 ⊂ … ⊂ S_nmax` of distinct points are drawn from the user's own
//! trajectory. Each chain is matched against a membership index, and the
//! fraction of chains matched by exactly one trajectory is that user's
//! uniqueness at each `n`. The same protocol runs over quantized movement
//! features.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarsen::{require_timestamps, Mode, PointKey};
use crate::error::{Error, Result};
use crate::features::{quantize_features, windowed_features, FeatureKind, QuantizationSteps, WindowAnchor};
use crate::geo::GpsPoint;
use crate::seed;
use crate::stats::mean_ci95;
use crate::trace::{Dataset, Trajectory};

/// Maps each distinct key to the ascending list of trajectories holding it.
#[derive(Debug, Clone)]
pub struct MembershipIndex<K> {
    ids: Vec<String>,
    postings: HashMap<K, Vec<u32>>,
}

impl<K: Hash + Eq + Clone> MembershipIndex<K> {
    pub fn from_keyed(keyed: &BTreeMap<String, Vec<K>>) -> Self {
        let mut postings: HashMap<K, Vec<u32>> = HashMap::new();
        for (i, keys) in keyed.values().enumerate() {
            let i = i as u32;
            for k in keys {
                let list = postings.entry(k.clone()).or_default();
                if list.last() != Some(&i) {
                    list.push(i);
                }
            }
        }
        Self { ids: keyed.keys().cloned().collect(), postings }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn distinct_keys(&self) -> usize {
        self.postings.len()
    }

    /// Trajectory indices holding `key`, ascending.
    pub fn holders(&self, key: &K) -> &[u32] {
        self.postings.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn holder_ids(&self, key: &K) -> Vec<&str> {
        self.holders(key).iter().map(|&i| self.ids[i as usize].as_str()).collect()
    }

    /// m(S): number of trajectories containing every key of `keys`.
    pub fn count_containing(&self, keys: &[K]) -> usize {
        let Some((first, rest)) = keys.split_first() else {
            return self.ids.len();
        };
        let mut candidates = self.holders(first).to_vec();
        for k in rest {
            if candidates.is_empty() {
                break;
            }
            candidates = intersect(&candidates, self.holders(k));
        }
        candidates.len()
    }
}

pub type PointIndex = MembershipIndex<PointKey>;

fn intersect(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn point_keys(d: &Dataset, mode: Mode) -> BTreeMap<String, Vec<PointKey>> {
    d.trajectories()
        .map(|t| (t.pseudo_id().to_string(), t.points().iter().map(|p| mode.key(p)).collect()))
        .collect()
}

/// Constant-time point membership index over a dataset.
pub fn build_point_index(d: &Dataset, mode: Mode) -> PointIndex {
    MembershipIndex::from_keyed(&point_keys(d, mode))
}

/// A small set of distinct points drawn from one owner's trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    owner: String,
    points: Vec<GpsPoint>,
}

impl SampleSet {
    /// Rejects empty or duplicated point lists.
    pub fn new(owner: impl Into<String>, points: Vec<GpsPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidSampleSet("sample set is empty".into()));
        }
        let mut seen = HashSet::with_capacity(points.len());
        if let Some(dup) = points.iter().find(|p| !seen.insert(**p)) {
            return Err(Error::InvalidSampleSet(format!("duplicate point {dup}")));
        }
        Ok(Self { owner: owner.into(), points })
    }

    /// Like [`SampleSet::new`], additionally checking that every point belongs
    /// to `traj`, whose id becomes the owner.
    pub fn drawn_from(traj: &Trajectory, points: Vec<GpsPoint>) -> Result<Self> {
        let members: HashSet<&GpsPoint> = traj.points().iter().collect();
        if let Some(p) = points.iter().find(|p| !members.contains(p)) {
            return Err(Error::InvalidSampleSet(format!("point {p} is not in trajectory {:?}", traj.pseudo_id())));
        }
        Self::new(traj.pseudo_id(), points)
    }

    pub fn owner(&self) -> &str {
        &self.owner
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
}

/// Distinct keys in first-occurrence order.
pub fn distinct_in_order<K: Hash + Eq + Clone>(keys: &[K]) -> Vec<K> {
    let mut seen = HashSet::with_capacity(keys.len());
    keys.iter().filter(|k| seen.insert((*k).clone())).cloned().collect()
}

/// Draws `count` uniformly random ordered prefixes of length `n_max` from
/// `distinct`; the first `k` entries of each chain form `S_k`. The stream is
/// keyed by `(seed, pseudo_id)`.
pub fn nested_chains<K: Clone>(
    distinct: &[K],
    n_max: usize,
    count: usize,
    seed: u64,
    pseudo_id: &str,
) -> Result<Vec<Vec<K>>> {
    if n_max == 0 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    if distinct.len() < n_max {
        return Err(Error::InvalidParameter(format!(
            "{pseudo_id:?} has {} distinct points, fewer than n_max = {n_max}",
            distinct.len()
        )));
    }
    let mut rng = seed::stream(seed, "subsets", pseudo_id, &[]);
    Ok((0..count)
        .map(|_| index::sample(&mut rng, distinct.len(), n_max).into_iter().map(|i| distinct[i].clone()).collect())
        .collect())
}

/// Nested subset chains over a trajectory's distinct points under `mode`.
pub fn sample_nested_subsets(
    traj: &Trajectory,
    mode: Mode,
    n_max: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<PointKey>>> {
    let keys: Vec<PointKey> = traj.points().iter().map(|p| mode.key(p)).collect();
    nested_chains(&distinct_in_order(&keys), n_max, count, seed, traj.pseudo_id())
}

/// What the protocol matched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Points(Mode),
    Movement(FeatureKind),
}

impl Target {
    pub fn mode_label(&self) -> &'static str {
        match self {
            Target::Points(m) => m.as_str(),
            Target::Movement(_) => "movement",
        }
    }

    pub fn kind_label(&self) -> &'static str {
        match self {
            Target::Points(_) => "point",
            Target::Movement(k) => k.as_str(),
        }
    }
}

/// Uniqueness statistics for one subset size `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub n: usize,
    pub target: Target,
    pub resolution_digits: u8,
    pub samples_per_user: usize,
    pub seed: u64,
    pub users: usize,
    pub per_user: BTreeMap<String, f64>,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Distribution of m(S_n) over every sampled subset: m → count.
    pub m_distribution: BTreeMap<usize, u64>,
}

/// Reports for n = 1..=n_max plus eligibility bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessRun {
    pub reports: Vec<UniquenessReport>,
    /// Users with fewer than n_max distinct points.
    pub excluded: Vec<String>,
    /// Groups of trajectories with identical point sets under the target.
    pub duplicate_groups: Vec<Vec<String>>,
}

impl UniquenessRun {
    pub fn report(&self, n: usize) -> Option<&UniquenessReport> {
        self.reports.iter().find(|r| r.n == n)
    }
}

struct UserOutcome {
    id: String,
    // per n: (unique count, m histogram)
    unique: Vec<u64>,
    hist: Vec<BTreeMap<usize, u64>>,
}

struct Protocol {
    n_max: usize,
    samples: usize,
    seed: u64,
    target: Target,
    resolution_digits: u8,
}

impl Protocol {
    fn run<K>(&self, keyed: &BTreeMap<String, Vec<K>>) -> Result<UniquenessRun>
    where
        K: Hash + Eq + Ord + Clone + Send + Sync,
    {
        if self.n_max == 0 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidParameter("samples per user must be at least 1".into()));
        }
        let index = MembershipIndex::from_keyed(keyed);
        let users: Vec<(&String, Vec<K>)> = keyed.iter().map(|(id, keys)| (id, distinct_in_order(keys))).collect();
        let excluded: Vec<String> =
            users.iter().filter(|(_, d)| d.len() < self.n_max).map(|(id, _)| (*id).clone()).collect();
        let eligible: Vec<&(&String, Vec<K>)> = users.iter().filter(|(_, d)| d.len() >= self.n_max).collect();
        if eligible.is_empty() {
            return Err(Error::NoEligibleUsers(format!(
                "no trajectory has at least {} distinct points",
                self.n_max
            )));
        }

        let outcomes: Vec<UserOutcome> = eligible
            .par_iter()
            .map(|(id, distinct)| -> Result<UserOutcome> {
                let chains = nested_chains(distinct, self.n_max, self.samples, self.seed, id)?;
                let mut unique = vec![0u64; self.n_max];
                let mut hist = vec![BTreeMap::new(); self.n_max];
                for chain in &chains {
                    let mut candidates = index.holders(&chain[0]).to_vec();
                    for n in 0..self.n_max {
                        if n > 0 {
                            candidates = intersect(&candidates, index.holders(&chain[n]));
                        }
                        let m = candidates.len();
                        *hist[n].entry(m).or_insert(0) += 1;
                        if m == 1 {
                            unique[n] += 1;
                        }
                    }
                }
                Ok(UserOutcome { id: (*id).clone(), unique, hist })
            })
            .collect::<Result<_>>()?;

        let reports = (0..self.n_max)
            .map(|n| {
                let per_user: BTreeMap<String, f64> = outcomes
                    .iter()
                    .map(|o| (o.id.clone(), o.unique[n] as f64 / self.samples as f64))
                    .collect();
                let values: Vec<f64> = per_user.values().copied().collect();
                let ci = mean_ci95(&values).expect("eligible set is non-empty");
                let mut m_distribution = BTreeMap::new();
                for o in &outcomes {
                    for (m, c) in &o.hist[n] {
                        *m_distribution.entry(*m).or_insert(0) += c;
                    }
                }
                UniquenessReport {
                    n: n + 1,
                    target: self.target,
                    resolution_digits: self.resolution_digits,
                    samples_per_user: self.samples,
                    seed: self.seed,
                    users: outcomes.len(),
                    per_user,
                    mean: ci.mean,
                    ci_low: ci.ci_low,
                    ci_high: ci.ci_high,
                    m_distribution,
                }
            })
            .collect();

        Ok(UniquenessRun { reports, excluded, duplicate_groups: duplicate_groups(keyed) })
    }
}

/// Groups of ids whose key sets are identical (groups of size ≥ 2 only).
pub fn duplicate_groups<K: Hash + Eq + Ord + Clone>(keyed: &BTreeMap<String, Vec<K>>) -> Vec<Vec<String>> {
    let mut by_set: HashMap<Vec<K>, Vec<String>> = HashMap::new();
    for (id, keys) in keyed {
        let mut set = keys.clone();
        set.sort_unstable();
        set.dedup();
        by_set.entry(set).or_default().push(id.clone());
    }
    let mut groups: Vec<Vec<String>> = by_set.into_values().filter(|g| g.len() > 1).collect();
    groups.sort();
    groups
}

/// Spatial or spatio-temporal point uniqueness for n = 1..=n_max.
pub fn uniqueness(d: &Dataset, n_max: usize, mode: Mode, samples: usize, seed: u64) -> Result<UniquenessRun> {
    require_timestamps(d, mode)?;
    Protocol { n_max, samples, seed, target: Target::Points(mode), resolution_digits: d.resolution_digits() }
        .run(&point_keys(d, mode))
}

/// Uniqueness of random sub-populations of each requested size.
pub fn user_count_sweep(
    d: &Dataset,
    user_counts: &[usize],
    n_list: &[usize],
    mode: Mode,
    samples: usize,
    seed: u64,
) -> Result<Vec<(usize, UniquenessReport)>> {
    let n_max = n_list.iter().copied().max().ok_or_else(|| Error::InvalidParameter("empty n list".into()))?;
    let ids: Vec<&str> = d.ids().collect();
    let mut out = Vec::new();
    for &count in user_counts {
        if count == 0 || count > ids.len() {
            return Err(Error::InvalidParameter(format!(
                "user count {count} outside 1..={} (population size)",
                ids.len()
            )));
        }
        let mut rng = seed::stream(seed, "sweep", "", &[count as u64]);
        let mut chosen: Vec<usize> = index::sample(&mut rng, ids.len(), count).into_vec();
        chosen.sort_unstable();
        let sub = d.subset(chosen.into_iter().map(|i| ids[i]));
        let run = uniqueness(&sub, n_max, mode, samples, seed)?;
        for &n in n_list {
            let r = run.report(n).expect("n within 1..=n_max").clone();
            out.push((count, r));
        }
    }
    Ok(out)
}

/// Settings for movement-feature uniqueness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovementConfig {
    pub window_s: i64,
    pub kind: FeatureKind,
    pub steps: QuantizationSteps,
    pub anchor: WindowAnchor,
}

/// Per-user quantized feature sequences.
pub fn movement_keys(d: &Dataset, cfg: &MovementConfig) -> Result<BTreeMap<String, Vec<i64>>> {
    d.trajectories()
        .map(|t| {
            let samples = windowed_features(t, cfg.window_s, cfg.kind, cfg.anchor)?;
            let q = quantize_features(&samples, &cfg.steps)?;
            Ok((t.pseudo_id().to_string(), q.iter().filter_map(|s| s.quantized).collect()))
        })
        .collect()
}

/// The uniqueness protocol over quantized movement features.
pub fn movement_uniqueness(
    d: &Dataset,
    cfg: &MovementConfig,
    n_max: usize,
    samples: usize,
    seed: u64,
) -> Result<UniquenessRun> {
    let keyed = movement_keys(d, cfg)?;
    Protocol { n_max, samples, seed, target: Target::Movement(cfg.kind), resolution_digits: d.resolution_digits() }
        .run(&keyed)
}
