//! Rigid kernel-point convolution: fixed kernel layout, influence plans,
//! layer blocks, and the multi-stage point pyramid.

mod blocks;
mod pyramid;

pub use blocks::{Ctx, FusionSubmodule, KpConvUnit, LinearBn, LinearHead, ResidualBlock};
pub use pyramid::{build_pyramid, Pyramid, PyramidLevel, ENCODER_CHANNELS, NUM_STAGES};

use alloc::rc::Rc;
use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::tensor::{Graph, KpConvPlan, NodeId};
use crate::{math, Real};

/// Number of kernel points: one at the origin, fourteen on a shell.
pub const KERNEL_POINTS: usize = 15;
/// Shell radius as a fraction of the convolution radius.
pub const SHELL_RADIUS: Real = 0.6;
/// Influence distance σ as a fraction of the convolution radius.
pub const SIGMA_FRACTION: Real = 0.3;
/// Convolution radius as a multiple of the grid cell at each level.
pub const CONV_RADIUS_FACTOR: Real = 2.5;

/// Unit-scale kernel point positions: the origin plus fourteen shell points
/// at radius [`SHELL_RADIUS`]. The shell is the minimum-energy arrangement
/// of fourteen repelling points on a sphere, computed once with a fixed
/// seed and frozen here so every build convolves identically.
pub const KERNEL_LAYOUT: [[Real; 3]; KERNEL_POINTS] = [
    [0.0, 0.0, 0.0],
    [0.0, -0.0, 0.6],
    [0.589190842, -0.0, -0.113376154],
    [0.438551476, -0.190992158, 0.362207948],
    [-0.330808122, -0.419423948, -0.273220677],
    [-0.570063313, 0.139815964, -0.124415897],
    [0.189530126, -0.190992158, -0.536283812],
    [0.301278730, 0.381984317, -0.351168205],
    [-0.229893822, 0.139815964, -0.536283812],
    [-0.071384908, -0.521800280, 0.287452017],
    [-0.287912111, 0.381984317, 0.362207948],
    [0.330808122, 0.419423948, 0.273220677],
    [-0.490808856, -0.190992158, 0.287452017],
    [0.268784582, -0.521800280, -0.124415897],
    [-0.137272746, 0.572976475, -0.113376154],
];

/// Influence of a kernel point at `kp` (already scaled by the layer radius)
/// on an offset `d` away: linear correlation, max(0, 1 − d/σ).
#[inline]
fn influence(offset: [Real; 3], kp: [Real; 3], sigma: Real) -> Real {
    let dx = offset[0] - kp[0];
    let dy = offset[1] - kp[1];
    let dz = offset[2] - kp[2];
    let d = math::sqrt(dx * dx + dy * dy + dz * dz);
    (1.0 - d / sigma).max(0.0)
}

/// Build the sparse influence plan for one convolution: queries against
/// their neighbor lists in the support cloud, at the given radius.
///
/// Queries with no neighbors produce zero output rows; they are counted and
/// logged rather than treated as errors.
pub fn build_plan(
    queries: &[[Real; 3]],
    support: &[[Real; 3]],
    neighbors: &[Vec<u32>],
    radius: Real,
) -> Result<Rc<KpConvPlan>> {
    contract!(radius > 0.0, "convolution radius must be positive, got {radius}");
    contract!(
        neighbors.len() == queries.len(),
        "{} neighbor lists for {} queries",
        neighbors.len(),
        queries.len()
    );
    let sigma = SIGMA_FRACTION * radius;
    let kernel: Vec<[Real; 3]> = KERNEL_LAYOUT
        .iter()
        .map(|p| [p[0] * radius, p[1] * radius, p[2] * radius])
        .collect();
    let mut entries: Vec<Vec<(u32, u32, Real)>> = alloc::vec![Vec::new(); KERNEL_POINTS];
    let mut orphans = 0usize;
    for (p, list) in neighbors.iter().enumerate() {
        if list.is_empty() {
            orphans += 1;
            continue;
        }
        let qp = queries[p];
        for &q in list {
            let sp = support[q as usize];
            let offset = [sp[0] - qp[0], sp[1] - qp[1], sp[2] - qp[2]];
            for (i, &kp) in kernel.iter().enumerate() {
                let h = influence(offset, kp, sigma);
                if h > 0.0 {
                    entries[i].push((p as u32, q, h));
                }
            }
        }
    }
    if orphans > 0 {
        log::debug!("kpconv plan: {orphans} queries without neighbors produce zero rows");
    }
    Ok(Rc::new(KpConvPlan { n_out: queries.len(), kernel_points: KERNEL_POINTS, entries }))
}

/// Copy each fine point's coarse parent feature row.
pub fn nearest_upsample(
    g: &mut Graph,
    coarse: NodeId,
    parent_of: &Rc<Vec<u32>>,
    fine_count: usize,
) -> Result<NodeId> {
    contract!(
        parent_of.len() == fine_count,
        "upsample map covers {} of {} fine points",
        parent_of.len(),
        fine_count
    );
    g.gather_rows(coarse, Rc::clone(parent_of))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn layout_shape_is_fixed() {
        assert_eq!(KERNEL_LAYOUT.len(), 15);
        let origin = KERNEL_LAYOUT[0];
        assert_eq!(origin, [0.0, 0.0, 0.0]);
        for p in &KERNEL_LAYOUT[1..] {
            let r = math::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
            assert!((r - SHELL_RADIUS).abs() < 1e-6, "shell radius {r}");
        }
    }

    #[test]
    fn identity_kernel_at_zero_offset() {
        // One point, self neighbor: only the center kernel point is active
        // (h = 1 at d = 0), so with W_center = I the feature passes through.
        let pts = [[0.0, 0.0, 0.0]];
        let neighbors = vec![vec![0u32]];
        let plan = build_plan(&pts, &pts, &neighbors, 1.0).unwrap();
        let c = 3;
        let mut w = vec![0.0; KERNEL_POINTS * c * c];
        for j in 0..c {
            w[j * c + j] = 1.0; // center block = identity
        }
        let mut g = Graph::new();
        let f = g.leaf(Tensor::matrix(1, c, vec![0.5, -1.0, 2.0]).unwrap());
        let wn = g.leaf(Tensor::from_vec(vec![KERNEL_POINTS, c, c], w).unwrap());
        let out = g.kpconv(f, wn, plan).unwrap();
        assert_eq!(g.value(out).data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_features_give_zero_output() {
        let pts = [[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]];
        let neighbors = vec![vec![0u32, 1], vec![0, 1]];
        let plan = build_plan(&pts, &pts, &neighbors, 0.1).unwrap();
        let mut g = Graph::new();
        let f = g.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let w = g.leaf(Tensor::from_vec(vec![KERNEL_POINTS, 2, 2], vec![0.3; KERNEL_POINTS * 4]).unwrap());
        let out = g.kpconv(f, w, plan).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_neighbors_zero_row() {
        let pts = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        let neighbors = vec![vec![0u32], vec![]];
        let plan = build_plan(&pts, &pts, &neighbors, 0.1).unwrap();
        let mut g = Graph::new();
        let f = g.leaf(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let w = g.leaf(Tensor::from_vec(vec![KERNEL_POINTS, 1, 1], vec![1.0; KERNEL_POINTS]).unwrap());
        let out = g.kpconv(f, w, plan).unwrap();
        assert_eq!(g.value(out).data()[1], 0.0);
    }

    #[test]
    fn translation_invariance() {
        // Only relative offsets enter the influence, so shifting everything
        // leaves the output unchanged.
        let pts = [[0.1, 0.2, 0.3], [0.15, 0.24, 0.3]];
        let shifted: Vec<[Real; 3]> = pts.iter().map(|p| [p[0] + 5.0, p[1] - 3.0, p[2] + 0.7]).collect();
        let neighbors = vec![vec![0u32, 1], vec![0, 1]];
        let plan_a = build_plan(&pts, &pts, &neighbors, 0.2).unwrap();
        let plan_b = build_plan(&shifted, &shifted, &neighbors, 0.2).unwrap();
        for (ea, eb) in plan_a.entries.iter().zip(plan_b.entries.iter()) {
            assert_eq!(ea.len(), eb.len());
            for (&(pa, qa, ha), &(pb, qb, hb)) in ea.iter().zip(eb) {
                assert_eq!((pa, qa), (pb, qb));
                assert!((ha - hb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn influence_bounded_and_local() {
        let sigma = 0.3;
        assert_eq!(influence([0.0; 3], [0.0; 3], sigma), 1.0);
        assert_eq!(influence([0.31, 0.0, 0.0], [0.0; 3], sigma), 0.0);
        let h = influence([0.15, 0.0, 0.0], [0.0; 3], sigma);
        assert!(h > 0.0 && h < 1.0);
    }
}
