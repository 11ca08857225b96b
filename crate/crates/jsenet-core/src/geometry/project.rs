//! Nearest-neighbor value projection between clouds.

use alloc::vec::Vec;

use super::{PointCloud, SpatialIndex};
use crate::error::{contract, Result};
use crate::{math, Real};

/// Give every target position the value of its nearest source point (ties
/// resolved toward the lowest source id).
pub fn project_nearest<T: Clone>(
    from: &PointCloud,
    to_positions: &[[Real; 3]],
    values: &[T],
) -> Result<Vec<T>> {
    contract!(!from.is_empty(), "projection from an empty cloud");
    contract!(
        values.len() == from.len(),
        "{} values for {} source points",
        values.len(),
        from.len()
    );
    let (lo, hi) = from.bounds().expect("nonempty");
    let diag = math::sqrt(
        (0..3).map(|a| (hi[a] - lo[a]) * (hi[a] - lo[a])).sum::<Real>(),
    );
    let cell = if diag > 0.0 {
        (diag / math::powf(from.len() as Real, 1.0 / 3.0)).max(diag * 1e-6)
    } else {
        1.0
    };
    let index = SpatialIndex::build(from, cell)?;
    to_positions
        .iter()
        .map(|&q| {
            let i = index.nearest(q).expect("nonempty index");
            Ok(values[i as usize].clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn projection_onto_itself_is_identity() {
        let c = PointCloud::from_positions(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        let vals = vec![10, 20, 30];
        let out = project_nearest(&c, &c.positions, &vals).unwrap();
        assert_eq!(out, vals);
    }

    #[test]
    fn single_source_is_constant() {
        let c = PointCloud::from_positions(vec![[0.5, 0.5, 0.5]]);
        let targets = vec![[0.0; 3], [9.0, 9.0, 9.0]];
        let out = project_nearest(&c, &targets, &vec![7]).unwrap();
        assert_eq!(out, vec![7, 7]);
    }

    #[test]
    fn empty_source_errors() {
        let c = PointCloud::default();
        let err = project_nearest(&c, &[[0.0; 3]], &Vec::<i32>::new());
        assert!(err.is_err());
    }
}
