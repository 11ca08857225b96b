//! Sphere extraction and uniform mesh rasterization.

use alloc::vec::Vec;

use rand::Rng;

use super::{dist2, PointCloud, TriangleMesh};
use crate::error::{contract, Result};
use crate::{math, Real};

/// Sub-cloud of all points within the closed ball around `center`. The
/// result carries source indices into the input cloud; an empty result is
/// valid and the caller is expected to resample.
pub fn sample_sphere(cloud: &PointCloud, center: [Real; 3], r: Real) -> Result<PointCloud> {
    contract!(r > 0.0, "sphere radius must be positive, got {r}");
    let r2 = r * r;
    let rows: Vec<u32> = cloud
        .positions
        .iter()
        .enumerate()
        .filter(|(_, &p)| dist2(p, center) <= r2)
        .map(|(i, _)| i as u32)
        .collect();
    Ok(cloud.select(&rows))
}

/// Rasterize a mesh by uniform sampling on its faces: each face gets
/// `round(area · density)` points, placed barycentrically uniformly, with
/// label and color taken from the vertex carrying the largest barycentric
/// weight.
pub fn sample_mesh(mesh: &TriangleMesh, density: Real, rng: &mut impl Rng) -> Result<PointCloud> {
    contract!(density > 0.0, "density must be positive, got {density}");
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    for f in 0..mesh.faces.len() {
        let area = mesh.face_area(f);
        let count = math::floor(area * density + 0.5) as usize;
        let [ia, ib, ic] = mesh.faces[f];
        let verts = [ia as usize, ib as usize, ic as usize];
        for _ in 0..count {
            let u: Real = rng.random_range(0.0..1.0);
            let v: Real = rng.random_range(0.0..1.0);
            let su = math::sqrt(u);
            let w = [1.0 - su, su * (1.0 - v), su * v];
            let mut p = [0.0; 3];
            for (wi, &vi) in w.iter().zip(&verts) {
                for a in 0..3 {
                    p[a] += wi * mesh.vertices[vi][a];
                }
            }
            // Nearest vertex of the barycentric coordinate: largest weight,
            // first on ties.
            let mut best = 0;
            for k in 1..3 {
                if w[k] > w[best] {
                    best = k;
                }
            }
            positions.push(p);
            colors.push(mesh.colors[verts[best]]);
            labels.push(mesh.labels[verts[best]]);
        }
    }
    Ok(PointCloud { positions, colors, labels, source_indices: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn big_radius_keeps_everything() {
        let c = PointCloud::from_positions(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let s = sample_sphere(&c, [0.0; 3], 10.0).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.source_indices, Some(vec![0, 1, 2]));
    }

    #[test]
    fn far_center_is_empty() {
        let c = PointCloud::from_positions(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let s = sample_sphere(&c, [100.0, 0.0, 0.0], 1.0).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn source_indices_compose() {
        let mut c = PointCloud::from_positions(vec![[0.0; 3], [5.0, 0.0, 0.0]]);
        c.source_indices = Some(vec![7, 9]);
        let s = sample_sphere(&c, [5.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(s.source_indices, Some(vec![9]));
    }

    fn right_triangle() -> TriangleMesh {
        TriangleMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
            vec![0, 1, 2],
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn face_count_follows_area_density() {
        let mesh = right_triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Area 0.5 m², density 2000 → exactly 1000 samples.
        let cloud = sample_mesh(&mesh, 2000.0, &mut rng).unwrap();
        assert_eq!(cloud.len(), 1000);
        for p in &cloud.positions {
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-12);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn sample_mean_near_centroid() {
        let mesh = right_triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = sample_mesh(&mesh, 20000.0, &mut rng).unwrap();
        let n = cloud.len() as Real;
        let mut mean = [0.0; 3];
        for p in &cloud.positions {
            for a in 0..3 {
                mean[a] += p[a] / n;
            }
        }
        // Monte-Carlo oracle: mean approaches the centroid (1/3, 1/3, 0);
        // per-axis standard error of a barycentric-uniform draw is
        // sqrt(1/18)/sqrt(n).
        let se = math::sqrt(1.0 / 18.0) / math::sqrt(n);
        assert!((mean[0] - 1.0 / 3.0).abs() < 3.0 * se, "x off: {}", mean[0]);
        assert!((mean[1] - 1.0 / 3.0).abs() < 3.0 * se, "y off: {}", mean[1]);
    }

    #[test]
    fn zero_area_mesh_is_empty() {
        let mesh = TriangleMesh::new(
            vec![[0.0; 3], [0.0; 3], [0.0; 3]],
            vec![[0, 1, 2]],
            vec![0, 0, 0],
            vec![[0.0; 3]; 3],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(sample_mesh(&mesh, 1000.0, &mut rng).unwrap().is_empty());
    }
}
