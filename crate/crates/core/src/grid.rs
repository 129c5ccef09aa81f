//! Uniform latitude/longitude bucket grid for exact nearest-neighbour search.
//!
//! Searches expand outward ring by ring from the query cell. After each ring a
//! conservative haversine lower bound for everything outside it is compared to
//! the caller's incumbent; the search stops only once every unvisited point is
//! provably farther than the incumbent, so results are exact.

use std::collections::HashMap;

use crate::geo::{GpsPoint, E6, EARTH_RADIUS_KM};

/// Lower bounds are shrunk by this relative margin to absorb rounding.
const LB_SLACK: f64 = 1.0 - 1e-9;

const MIN_CELL_E6: i64 = 10;
const MAX_CELL_E6: i64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct SpatialGrid {
    cell_e6: i64,
    cells: HashMap<(i64, i64), Vec<u32>>,
    occupied: Vec<(i64, i64)>,
    ci_range: (i64, i64),
    cj_range: (i64, i64),
    max_abs_lat_e6: i64,
    lon_range_e6: (i64, i64),
}

impl SpatialGrid {
    /// Indexes `points` by position; stored ids are indices into the slice.
    /// The cell size is chosen from the bounding box when not given.
    pub fn build(points: &[GpsPoint], cell_e6: Option<i64>) -> Self {
        let (mut lat_lo, mut lat_hi, mut lon_lo, mut lon_hi) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
        for p in points {
            lat_lo = lat_lo.min(p.lat_e6() as i64);
            lat_hi = lat_hi.max(p.lat_e6() as i64);
            lon_lo = lon_lo.min(p.lon_e6() as i64);
            lon_hi = lon_hi.max(p.lon_e6() as i64);
        }
        let cell_e6 = cell_e6.unwrap_or_else(|| {
            if points.is_empty() {
                return MAX_CELL_E6;
            }
            let area = ((lat_hi - lat_lo).max(1) as f64) * ((lon_hi - lon_lo).max(1) as f64);
            let target_cells = (points.len() as f64 / 2.0).max(1.0);
            ((area / target_cells).sqrt() as i64).clamp(MIN_CELL_E6, MAX_CELL_E6)
        });
        let mut cells: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, cell_e6)).or_default().push(i as u32);
        }
        let mut occupied: Vec<(i64, i64)> = cells.keys().copied().collect();
        occupied.sort_unstable();
        let ci_range = occupied.iter().fold((i64::MAX, i64::MIN), |(lo, hi), c| (lo.min(c.0), hi.max(c.0)));
        let cj_range = occupied.iter().fold((i64::MAX, i64::MIN), |(lo, hi), c| (lo.min(c.1), hi.max(c.1)));
        Self {
            cell_e6,
            cells,
            occupied,
            ci_range,
            cj_range,
            max_abs_lat_e6: if points.is_empty() { 0 } else { lat_lo.abs().max(lat_hi.abs()) },
            lon_range_e6: (lon_lo, lon_hi),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn cell_e6(&self) -> i64 {
        self.cell_e6
    }

    /// Lower bound in km on the haversine distance from `q` to any point whose
    /// cell lies at Chebyshev distance greater than `ring` from `q`'s cell.
    fn outside_bound(&self, q: &GpsPoint, ring: i64) -> f64 {
        let gap_deg = (ring * self.cell_e6) as f64 / E6 as f64;
        let lat_lb = EARTH_RADIUS_KM * gap_deg.min(180.0).to_radians();
        let lon_lo = self.lon_range_e6.0.min(q.lon_e6() as i64);
        let lon_hi = self.lon_range_e6.1.max(q.lon_e6() as i64);
        let lon_lb = if lon_hi - lon_lo <= 180 * E6 {
            let max_lat = self.max_abs_lat_e6.max((q.lat_e6() as i64).abs()) as f64 / E6 as f64;
            let c = max_lat.to_radians().cos().max(0.0);
            let half = gap_deg.min(180.0).to_radians() / 2.0;
            2.0 * EARTH_RADIUS_KM * (c * half.sin()).min(1.0).asin()
        } else {
            // extent may wrap the antimeridian; longitude gives no bound
            0.0
        };
        lat_lb.min(lon_lb) * LB_SLACK
    }

    /// Visits candidate point ids in rings of increasing distance from `q`.
    /// `visit` returns the caller's current best distance (use
    /// `f64::INFINITY` until one is known); the search stops once nothing
    /// unvisited can be strictly closer than or equal to it.
    pub fn search(&self, q: &GpsPoint, mut visit: impl FnMut(u32) -> f64) {
        if self.occupied.is_empty() {
            return;
        }
        let (qi, qj) = cell_of(q, self.cell_e6);
        let max_ring = (qi - self.ci_range.0)
            .abs()
            .max((qi - self.ci_range.1).abs())
            .max((qj - self.cj_range.0).abs())
            .max((qj - self.cj_range.1).abs());
        let mut best = f64::INFINITY;
        let mut ring = 0i64;
        while ring <= max_ring {
            let perimeter = if ring == 0 { 1 } else { 8 * ring };
            if perimeter as usize > self.occupied.len() {
                self.search_sparse(q, (qi, qj), ring, best, &mut visit);
                return;
            }
            for cell in ring_cells(qi, qj, ring) {
                if let Some(ids) = self.cells.get(&cell) {
                    for &id in ids {
                        best = visit(id);
                    }
                }
            }
            if self.outside_bound(q, ring) > best {
                return;
            }
            ring += 1;
        }
    }

    // Remaining rings from `from_ring` onward, walking only occupied cells.
    fn search_sparse(
        &self,
        q: &GpsPoint,
        (qi, qj): (i64, i64),
        from_ring: i64,
        mut best: f64,
        visit: &mut impl FnMut(u32) -> f64,
    ) {
        let mut rest: Vec<(i64, (i64, i64))> = self
            .occupied
            .iter()
            .map(|&c| ((c.0 - qi).abs().max((c.1 - qj).abs()), c))
            .filter(|(r, _)| *r >= from_ring)
            .collect();
        rest.sort_unstable();
        let mut i = 0;
        while i < rest.len() {
            let ring = rest[i].0;
            if ring > 0 && self.outside_bound(q, ring - 1) > best {
                return;
            }
            while i < rest.len() && rest[i].0 == ring {
                for &id in &self.cells[&rest[i].1] {
                    best = visit(id);
                }
                i += 1;
            }
        }
    }
}

fn cell_of(p: &GpsPoint, cell_e6: i64) -> (i64, i64) {
    ((p.lat_e6() as i64).div_euclid(cell_e6), (p.lon_e6() as i64).div_euclid(cell_e6))
}

fn ring_cells(qi: i64, qj: i64, r: i64) -> impl Iterator<Item = (i64, i64)> {
    let top_bottom = (-r..=r).flat_map(move |dj| {
        let a = (qi - r, qj + dj);
        let b = (qi + r, qj + dj);
        if r == 0 {
            vec![a]
        } else {
            vec![a, b]
        }
    });
    let sides = (-r + 1..r).flat_map(move |di| [(qi + di, qj - r), (qi + di, qj + r)]);
    top_bottom.chain(sides)
}
