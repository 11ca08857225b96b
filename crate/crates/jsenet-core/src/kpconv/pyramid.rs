//! The five-stage point pyramid shared by the streams and the refinement
//! module: per-level clouds, neighbor lists, and convolution plans.

use alloc::rc::Rc;
use alloc::vec::Vec;

use super::{build_plan, CONV_RADIUS_FACTOR};
use crate::error::{contract, Result};
use crate::geometry::{grid_subsample, PointCloud, SpatialIndex};
use crate::tensor::KpConvPlan;
use crate::Real;

/// Number of encoder stages.
pub const NUM_STAGES: usize = 5;
/// Feature width of each encoder stage.
pub const ENCODER_CHANNELS: [usize; NUM_STAGES] = [64, 128, 256, 512, 1024];

/// One pyramid level. `parent_of`, `pool_neighbors`, `pool_plan`, and
/// `pool_groups` describe the transition from the previous (finer) level
/// and are unset on level 0.
pub struct PyramidLevel {
    pub cloud: PointCloud,
    pub conv_neighbors: Vec<Vec<u32>>,
    pub conv_plan: Rc<KpConvPlan>,
    pub parent_of: Rc<Vec<u32>>,
    pub pool_neighbors: Vec<Vec<u32>>,
    pub pool_plan: Option<Rc<KpConvPlan>>,
    pub pool_groups: Rc<Vec<Vec<u32>>>,
}

pub struct Pyramid {
    pub levels: Vec<PyramidLevel>,
    pub base_cell: Real,
}

impl Pyramid {
    pub fn cell(&self, level: usize) -> Real {
        self.base_cell * (1 << level) as Real
    }

    pub fn conv_radius(&self, level: usize) -> Real {
        CONV_RADIUS_FACTOR * self.cell(level)
    }

    pub fn num_points(&self, level: usize) -> usize {
        self.levels[level].cloud.len()
    }
}

/// Build the pyramid for a cloud already subsampled at `base_cell`: levels
/// at cells {1, 2, 4, 8, 16}×base, each derived from the previous one.
pub fn build_pyramid(cloud: &PointCloud, base_cell: Real) -> Result<Pyramid> {
    contract!(base_cell > 0.0, "base cell must be positive, got {base_cell}");
    contract!(!cloud.is_empty(), "pyramid of an empty cloud (sphere too sparse)");

    let mut levels: Vec<PyramidLevel> = Vec::with_capacity(NUM_STAGES);
    for stage in 0..NUM_STAGES {
        let cell = base_cell * (1 << stage) as Real;
        let radius = CONV_RADIUS_FACTOR * cell;
        if stage == 0 {
            let index = SpatialIndex::build(cloud, radius)?;
            let conv_neighbors = index.radius_query_all(&cloud.positions, radius);
            let conv_plan = build_plan(&cloud.positions, &cloud.positions, &conv_neighbors, radius)?;
            levels.push(PyramidLevel {
                cloud: cloud.clone(),
                conv_neighbors,
                conv_plan,
                parent_of: Rc::new(Vec::new()),
                pool_neighbors: Vec::new(),
                pool_plan: None,
                pool_groups: Rc::new(Vec::new()),
            });
            continue;
        }

        let fine = &levels[stage - 1];
        let sub = grid_subsample(&fine.cloud, cell)?;
        contract!(
            !sub.cloud.is_empty(),
            "pyramid level {stage} is empty (sphere too sparse)"
        );
        let fine_radius = CONV_RADIUS_FACTOR * base_cell * (1 << (stage - 1)) as Real;
        let fine_index = SpatialIndex::build(&fine.cloud, fine_radius)?;
        let pool_neighbors = fine_index.radius_query_all(&sub.cloud.positions, fine_radius);
        let pool_plan =
            build_plan(&sub.cloud.positions, &fine.cloud.positions, &pool_neighbors, fine_radius)?;
        // Shortcut pooling groups must never be empty; fall back to the
        // subsampling members when the radius query comes up dry.
        let pool_groups: Vec<Vec<u32>> = pool_neighbors
            .iter()
            .zip(&sub.members)
            .map(|(nbrs, members)| if nbrs.is_empty() { members.clone() } else { nbrs.clone() })
            .collect();

        let index = SpatialIndex::build(&sub.cloud, radius)?;
        let conv_neighbors = index.radius_query_all(&sub.cloud.positions, radius);
        let conv_plan =
            build_plan(&sub.cloud.positions, &sub.cloud.positions, &conv_neighbors, radius)?;
        levels.push(PyramidLevel {
            cloud: sub.cloud,
            conv_neighbors,
            conv_plan,
            parent_of: Rc::new(sub.parent_of),
            pool_neighbors,
            pool_plan: Some(pool_plan),
            pool_groups: Rc::new(pool_groups),
        });
    }

    Ok(Pyramid { levels, base_cell })
}
