//! Uniform-grid hash index for fixed-radius queries and nearest lookups.

use alloc::vec::Vec;

use hashbrown::HashMap;

use super::{dist2, PointCloud};
use crate::error::{contract, Result};
use crate::{math, Real};

type CellKey = (i64, i64, i64);

/// Immutable uniform-grid hash over point positions. Built once per cell
/// size; all queries are read-only and safe to run concurrently.
pub struct SpatialIndex {
    cell: Real,
    buckets: HashMap<CellKey, Vec<u32>>,
    positions: Vec<[Real; 3]>,
    key_lo: [i64; 3],
    key_hi: [i64; 3],
}

#[inline]
fn cell_of(p: [Real; 3], cell: Real) -> CellKey {
    (
        math::floor(p[0] / cell) as i64,
        math::floor(p[1] / cell) as i64,
        math::floor(p[2] / cell) as i64,
    )
}

impl SpatialIndex {
    /// Build over a cloud with grid edge equal to the intended query radius.
    pub fn build(cloud: &PointCloud, cell: Real) -> Result<Self> {
        Self::build_positions(&cloud.positions, cell)
    }

    pub fn build_positions(positions: &[[Real; 3]], cell: Real) -> Result<Self> {
        contract!(cell > 0.0 && cell.is_finite(), "grid cell must be positive, got {cell}");
        let mut buckets: HashMap<CellKey, Vec<u32>> = HashMap::new();
        let mut key_lo = [i64::MAX; 3];
        let mut key_hi = [i64::MIN; 3];
        for (i, &p) in positions.iter().enumerate() {
            let key = cell_of(p, cell);
            for a in 0..3 {
                let k = [key.0, key.1, key.2][a];
                key_lo[a] = key_lo[a].min(k);
                key_hi[a] = key_hi[a].max(k);
            }
            buckets.entry(key).or_default().push(i as u32);
        }
        Ok(SpatialIndex { cell, buckets, positions: positions.to_vec(), key_lo, key_hi })
    }

    pub fn cell(&self) -> Real {
        self.cell
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Ids of all points within the closed ball of radius `r`, ascending.
    pub fn radius_query(&self, query: [Real; 3], r: Real) -> Vec<u32> {
        let mut out = Vec::new();
        if self.positions.is_empty() || r <= 0.0 {
            if r == 0.0 {
                // Degenerate closed ball: exact matches only.
                for (i, &p) in self.positions.iter().enumerate() {
                    if p == query {
                        out.push(i as u32);
                    }
                }
            }
            return out;
        }
        let r2 = r * r;
        let reach = (r / self.cell) as i64 + 1;
        let center = cell_of(query, self.cell);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let key = (center.0 + dx, center.1 + dy, center.2 + dz);
                    if let Some(ids) = self.buckets.get(&key) {
                        for &i in ids {
                            if dist2(self.positions[i as usize], query) <= r2 {
                                out.push(i);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Neighbor lists for a batch of queries at one radius.
    pub fn radius_query_all(&self, queries: &[[Real; 3]], r: Real) -> Vec<Vec<u32>> {
        queries.iter().map(|&q| self.radius_query(q, r)).collect()
    }

    /// Nearest indexed point to `query` (ties broken by lowest id).
    pub fn nearest(&self, query: [Real; 3]) -> Option<u32> {
        if self.positions.is_empty() {
            return None;
        }
        let center = cell_of(query, self.cell);
        let max_ring = (0..3)
            .map(|a| {
                let c = [center.0, center.1, center.2][a];
                (c - self.key_lo[a]).abs().max((self.key_hi[a] - c).abs())
            })
            .max()
            .unwrap_or(0);
        let mut best: Option<(Real, u32)> = None;
        for ring in 0..=max_ring {
            // Points in ring k are at least (k−1)·cell away, so once the
            // best distance is within that bound the scan can stop.
            if let Some((d2, _)) = best {
                let bound = (ring - 1).max(0) as Real * self.cell;
                if d2 <= bound * bound {
                    break;
                }
            }
            self.scan_ring(center, ring, |i, p| {
                let d2 = dist2(p, query);
                let better = match best {
                    None => true,
                    Some((bd2, bid)) => d2 < bd2 || (d2 == bd2 && i < bid),
                };
                if better {
                    best = Some((d2, i));
                }
            });
        }
        best.map(|(_, i)| i)
    }

    fn scan_ring(&self, center: CellKey, ring: i64, mut visit: impl FnMut(u32, [Real; 3])) {
        let handle = |key: CellKey, visit: &mut dyn FnMut(u32, [Real; 3])| {
            if let Some(ids) = self.buckets.get(&key) {
                for &i in ids {
                    visit(i, self.positions[i as usize]);
                }
            }
        };
        if ring == 0 {
            handle(center, &mut visit);
            return;
        }
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    handle((center.0 + dx, center.1 + dy, center.2 + dz), &mut visit);
                }
            }
        }
    }
}

/// Ids of all points within distance `r` of `query`, ascending.
pub fn radius_neighbors(index: &SpatialIndex, query: [Real; 3], r: Real) -> Result<Vec<u32>> {
    contract!(r > 0.0, "radius must be positive, got {r}");
    Ok(index.radius_query(query, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cloud_of(pts: &[[Real; 3]]) -> PointCloud {
        PointCloud::from_positions(pts.to_vec())
    }

    #[test]
    fn isolated_point_returns_self() {
        let c = cloud_of(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let idx = SpatialIndex::build(&c, 0.02).unwrap();
        assert_eq!(radius_neighbors(&idx, [0.0, 0.0, 0.0], 0.02).unwrap(), vec![0]);
    }

    #[test]
    fn close_pair_sees_both() {
        let c = cloud_of(&[[0.0, 0.0, 0.0], [0.01, 0.0, 0.0]]);
        let idx = SpatialIndex::build(&c, 0.02).unwrap();
        assert_eq!(radius_neighbors(&idx, c.positions[0], 0.02).unwrap(), vec![0, 1]);
        assert_eq!(radius_neighbors(&idx, c.positions[1], 0.02).unwrap(), vec![0, 1]);
    }

    #[test]
    fn closed_ball_includes_boundary() {
        let c = cloud_of(&[[0.0, 0.0, 0.0], [0.02, 0.0, 0.0]]);
        let idx = SpatialIndex::build(&c, 0.02).unwrap();
        assert_eq!(radius_neighbors(&idx, [0.0; 3], 0.02).unwrap(), vec![0, 1]);
    }

    #[test]
    fn nearest_breaks_ties_by_lowest_id() {
        let c = cloud_of(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        let idx = SpatialIndex::build(&c, 0.5).unwrap();
        assert_eq!(idx.nearest([0.0; 3]), Some(0));
    }

    #[test]
    fn nearest_crosses_rings() {
        // The nearest point lives several grid rings away.
        let c = cloud_of(&[[10.0, 0.0, 0.0]]);
        let idx = SpatialIndex::build(&c, 0.1).unwrap();
        assert_eq!(idx.nearest([0.0; 3]), Some(0));
    }
}
