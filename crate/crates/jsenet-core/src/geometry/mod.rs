//! Point-cloud containers, spatial indexing, subsampling, sampling,
//! augmentation, and label projection.

mod augment;
mod grid;
mod project;
mod sample;
mod subsample;

pub use augment::{augment, augment_with, AugmentParams, NOISE_SIGMA, SCALE_RANGE};
pub use grid::{radius_neighbors, SpatialIndex};
pub use project::project_nearest;
pub use sample::{sample_mesh, sample_sphere};
pub use subsample::{grid_subsample, SubsampledCloud};

use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::Real;

/// A labelled, colored point cloud. `labels` use −1 for ignored points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[Real; 3]>,
    pub colors: Vec<[Real; 3]>,
    pub labels: Vec<i32>,
    /// Row in the cloud this one was sampled from, when applicable.
    pub source_indices: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(positions: Vec<[Real; 3]>, colors: Vec<[Real; 3]>, labels: Vec<i32>) -> Result<Self> {
        let cloud = PointCloud { positions, colors, labels, source_indices: None };
        cloud.validate()?;
        Ok(cloud)
    }

    /// Positions only; colors zeroed, labels all ignore.
    pub fn from_positions(positions: Vec<[Real; 3]>) -> Self {
        let n = positions.len();
        PointCloud {
            positions,
            colors: alloc::vec![[0.0; 3]; n],
            labels: alloc::vec![-1; n],
            source_indices: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        contract!(self.colors.len() == n, "colors length {} != {}", self.colors.len(), n);
        contract!(self.labels.len() == n, "labels length {} != {}", self.labels.len(), n);
        if let Some(src) = &self.source_indices {
            contract!(src.len() == n, "source_indices length {} != {}", src.len(), n);
        }
        for p in &self.positions {
            contract!(
                p.iter().all(|v| v.is_finite()),
                "non-finite position {p:?}"
            );
        }
        for &l in &self.labels {
            contract!(l >= -1, "label {l} below -1");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Sub-cloud at the given row indices, composing source indices.
    pub fn select(&self, rows: &[u32]) -> PointCloud {
        let src = match &self.source_indices {
            Some(existing) => rows.iter().map(|&r| existing[r as usize]).collect(),
            None => rows.to_vec(),
        };
        PointCloud {
            positions: rows.iter().map(|&r| self.positions[r as usize]).collect(),
            colors: rows.iter().map(|&r| self.colors[r as usize]).collect(),
            labels: rows.iter().map(|&r| self.labels[r as usize]).collect(),
            source_indices: Some(src),
        }
    }

    /// Axis-aligned bounding box; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<([Real; 3], [Real; 3])> {
        let first = *self.positions.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }
}

/// Triangle mesh with per-vertex labels and colors.
#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<[Real; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub labels: Vec<i32>,
    pub colors: Vec<[Real; 3]>,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<[Real; 3]>,
        faces: Vec<[u32; 3]>,
        labels: Vec<i32>,
        colors: Vec<[Real; 3]>,
    ) -> Result<Self> {
        let v = vertices.len();
        contract!(labels.len() == v, "labels length {} != {}", labels.len(), v);
        contract!(colors.len() == v, "colors length {} != {}", colors.len(), v);
        for f in &faces {
            contract!(
                f.iter().all(|&i| (i as usize) < v),
                "face {f:?} references a vertex beyond {v}"
            );
        }
        Ok(TriangleMesh { vertices, faces, labels, colors })
    }

    pub fn face_area(&self, f: usize) -> Real {
        let [a, b, c] = self.faces[f];
        let (pa, pb, pc) = (
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        );
        let u = sub(pb, pa);
        let v = sub(pc, pa);
        let cx = u[1] * v[2] - u[2] * v[1];
        let cy = u[2] * v[0] - u[0] * v[2];
        let cz = u[0] * v[1] - u[1] * v[0];
        0.5 * crate::math::sqrt(cx * cx + cy * cy + cz * cz)
    }
}

#[inline]
pub(crate) fn sub(a: [Real; 3], b: [Real; 3]) -> [Real; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dist2(a: [Real; 3], b: [Real; 3]) -> Real {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}
