//! Edge map generation: converting a segmentation mask into per-class
//! boundary potentials by comparing each point against its neighborhood
//! mean, `a_i = |mean_r(mask)_i − mask_i|`.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::geometry::{PointCloud, SpatialIndex};
use crate::labels::OneHotMask;
use crate::tensor::{Graph, NodeId};
use crate::{math, Real};

/// Default filter radius as a multiple of the level grid cell.
pub const EMG_RADIUS_FACTOR: Real = 2.5;

/// Mean filter over closed-ball neighborhoods. Every point's group contains
/// the point itself.
pub struct MeanFilterSpec {
    pub radius: Real,
    pub groups: Rc<Vec<Vec<u32>>>,
}

impl MeanFilterSpec {
    pub fn build(cloud: &PointCloud, radius: Real) -> Result<Self> {
        contract!(radius > 0.0, "mean filter radius must be positive, got {radius}");
        let index = SpatialIndex::build(cloud, radius)?;
        let groups = index.radius_query_all(&cloud.positions, radius);
        for (i, g) in groups.iter().enumerate() {
            contract!(
                g.contains(&(i as u32)),
                "mean filter group {i} does not contain the point itself"
            );
        }
        Ok(MeanFilterSpec { radius, groups: Rc::new(groups) })
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Differentiable edge map generation on a probability mask (rows summing
/// to one): per-class absolute difference between the neighborhood mean and
/// the point's own row.
pub fn emg(g: &mut Graph, mask: NodeId, filter: &MeanFilterSpec) -> Result<NodeId> {
    contract!(
        g.value(mask).rows() == filter.len(),
        "mask has {} rows but the filter covers {}",
        g.value(mask).rows(),
        filter.len()
    );
    let mean = g.mean_groups(mask, Rc::clone(&filter.groups))?;
    let neg = g.scale(mask, -1.0)?;
    let diff = g.add(mean, neg)?;
    g.abs(diff)
}

/// Edge map generation on ground truth: the same operator applied to the
/// one-hot mask, without gradient tracking. Ignore-labelled rows are left
/// out of the neighborhood means; a neighborhood with no valid member
/// contributes a zero mean.
pub fn emg_gt(gt: &OneHotMask, filter: &MeanFilterSpec) -> Result<Vec<Real>> {
    contract!(
        gt.num_points == filter.len(),
        "mask has {} rows but the filter covers {}",
        gt.num_points,
        filter.len()
    );
    let k = gt.num_classes;
    let mut out = vec![0.0; gt.num_points * k];
    let mut acc = vec![0.0; k];
    for (i, group) in filter.groups.iter().enumerate() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let mut count = 0usize;
        for &q in group {
            let q = q as usize;
            if gt.ignored[q] {
                continue;
            }
            for (a, &v) in acc.iter_mut().zip(&gt.rows[q * k..(q + 1) * k]) {
                *a += v;
            }
            count += 1;
        }
        if count > 0 {
            let inv = 1.0 / count as Real;
            acc.iter_mut().for_each(|v| *v *= inv);
        }
        for (j, o) in out[i * k..(i + 1) * k].iter_mut().enumerate() {
            *o = math::abs(acc[j] + -gt.rows[i * k + j]);
        }
    }
    Ok(out)
}
