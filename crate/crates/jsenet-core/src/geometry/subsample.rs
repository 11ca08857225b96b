//! Voxel-grid subsampling with barycenter positions and majority labels.

use alloc::vec::Vec;

use hashbrown::HashMap;

use super::PointCloud;
use crate::error::{contract, Result};
use crate::{math, Real};

/// Result of [`grid_subsample`]: the coarse cloud plus the membership
/// structure needed to move values between resolutions.
#[derive(Debug, Clone)]
pub struct SubsampledCloud {
    pub cloud: PointCloud,
    /// Input rows folded into each output point.
    pub members: Vec<Vec<u32>>,
    /// Output row each input point belongs to.
    pub parent_of: Vec<u32>,
}

/// One output point per nonempty cell: barycenter position, mean color,
/// majority-vote label (−1 votes ignored unless the cell is all −1, ties to
/// the lowest class id). Cells are ordered by their first input row, so the
/// output is deterministic.
pub fn grid_subsample(cloud: &PointCloud, cell: Real) -> Result<SubsampledCloud> {
    contract!(cell > 0.0 && cell.is_finite(), "cell must be positive, got {cell}");
    let n = cloud.len();
    let mut order: Vec<Vec<u32>> = Vec::new();
    let mut index: HashMap<(i64, i64, i64), usize> = HashMap::new();
    for (i, p) in cloud.positions.iter().enumerate() {
        let key = (
            math::floor(p[0] / cell) as i64,
            math::floor(p[1] / cell) as i64,
            math::floor(p[2] / cell) as i64,
        );
        let slot = *index.entry(key).or_insert_with(|| {
            order.push(Vec::new());
            order.len() - 1
        });
        order[slot].push(i as u32);
    }

    let mut positions = Vec::with_capacity(order.len());
    let mut colors = Vec::with_capacity(order.len());
    let mut labels = Vec::with_capacity(order.len());
    let mut parent_of = alloc::vec![0u32; n];
    for (out_row, members) in order.iter().enumerate() {
        let inv = 1.0 / members.len() as Real;
        let mut pos = [0.0; 3];
        let mut col = [0.0; 3];
        let mut votes: HashMap<i32, usize> = HashMap::new();
        for &i in members {
            let i = i as usize;
            for a in 0..3 {
                pos[a] += cloud.positions[i][a];
                col[a] += cloud.colors[i][a];
            }
            if cloud.labels[i] >= 0 {
                *votes.entry(cloud.labels[i]).or_default() += 1;
            }
            parent_of[i] = out_row as u32;
        }
        pos.iter_mut().for_each(|v| *v *= inv);
        col.iter_mut().for_each(|v| *v *= inv);
        let label = votes
            .iter()
            .map(|(&l, &c)| (c, core::cmp::Reverse(l)))
            .max()
            .map(|(_, core::cmp::Reverse(l))| l)
            .unwrap_or(-1);
        positions.push(pos);
        colors.push(col);
        labels.push(label);
    }

    Ok(SubsampledCloud {
        cloud: PointCloud { positions, colors, labels, source_indices: None },
        members: order,
        parent_of,
    })
}
