//! Ground-truth construction: semantic edge point maps, binary edge maps,
//! one-hot masks, and the skew weights used by the weighted losses.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, CoreError, Result};
use crate::geometry::{PointCloud, SpatialIndex, SubsampledCloud};
use crate::Real;

/// Per-point class bitmasks: bit k is set when the point belongs to the
/// semantic edge of class k. Supports up to 64 classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEdgeLabels {
    pub masks: Vec<u64>,
    pub num_classes: usize,
}

impl SemanticEdgeLabels {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Whether class k's edge bit is set at point i.
    pub fn has(&self, i: usize, k: usize) -> bool {
        self.masks[i] >> k & 1 == 1
    }

    /// Count of points carrying any edge bit.
    pub fn edge_point_count(&self) -> usize {
        self.masks.iter().filter(|&&m| m != 0).count()
    }
}

/// N×K one-hot rows; ignore-labelled points have all-zero rows and are
/// flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotMask {
    pub rows: Vec<Real>,
    pub num_points: usize,
    pub num_classes: usize,
    pub ignored: Vec<bool>,
}

impl OneHotMask {
    pub fn at(&self, i: usize, k: usize) -> Real {
        self.rows[i * self.num_classes + k]
    }

    pub fn valid_count(&self) -> usize {
        self.ignored.iter().filter(|&&b| !b).count()
    }
}

/// Per-cloud skew weights: `per_class[k]` is the fraction of points that are
/// not class-k edge points, `overall` the fraction with no edge bit at all.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewWeights {
    pub per_class: Vec<Real>,
    pub overall: Real,
}

/// Label every point that has a differently-labelled neighbor within `r` as
/// an edge point of all valid classes present in its neighborhood.
///
/// Ignore-labelled points contribute no class bit but still count as
/// "different" neighbors, so boundaries against unlabelled regions become
/// single-class edges.
pub fn generate_edge_labels(cloud: &PointCloud, r: Real, num_classes: usize) -> Result<SemanticEdgeLabels> {
    contract!(r > 0.0, "edge radius must be positive, got {r}");
    contract!(num_classes <= 64, "at most 64 classes supported, got {num_classes}");
    for &l in &cloud.labels {
        contract!(
            l < num_classes as i32,
            "label {l} out of range for {num_classes} classes"
        );
    }
    if cloud.is_empty() {
        return Ok(SemanticEdgeLabels { masks: Vec::new(), num_classes });
    }
    if cloud.labels.iter().all(|&l| l == -1) {
        log::warn!("generate_edge_labels: cloud has no valid labels; all masks zero");
        return Ok(SemanticEdgeLabels { masks: vec![0; cloud.len()], num_classes });
    }

    let index = SpatialIndex::build(cloud, r)?;
    let masks = cloud
        .positions
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let own = cloud.labels[i];
            let mut present = 0u64;
            let mut is_edge = false;
            for q in index.radius_query(p, r) {
                let l = cloud.labels[q as usize];
                if l != own {
                    is_edge = true;
                }
                if l >= 0 {
                    present |= 1 << l;
                }
            }
            if is_edge {
                present
            } else {
                0
            }
        })
        .collect();
    Ok(SemanticEdgeLabels { masks, num_classes })
}

/// Collapse per-class edge bits into a 0/1 binary edge map.
pub fn to_binary_edges(labels: &SemanticEdgeLabels) -> Vec<Real> {
    labels.masks.iter().map(|&m| if m != 0 { 1.0 } else { 0.0 }).collect()
}

/// One-hot encode per-point labels; −1 rows become all-zero and flagged.
pub fn one_hot(labels: &[i32], num_classes: usize) -> Result<OneHotMask> {
    let mut rows = vec![0.0; labels.len() * num_classes];
    let mut ignored = vec![false; labels.len()];
    for (i, &l) in labels.iter().enumerate() {
        if l < 0 {
            ignored[i] = true;
        } else if (l as usize) < num_classes {
            rows[i * num_classes + l as usize] = 1.0;
        } else {
            return Err(CoreError::Contract(alloc::format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
    }
    Ok(OneHotMask { rows, num_points: labels.len(), num_classes, ignored })
}

/// β weights of the weighted edge losses, computed per input cloud.
pub fn skew_weights(labels: &SemanticEdgeLabels) -> Result<SkewWeights> {
    let n = labels.len();
    contract!(n > 0, "skew weights of an empty cloud");
    let inv = 1.0 / n as Real;
    let per_class = (0..labels.num_classes)
        .map(|k| labels.masks.iter().filter(|&&m| m >> k & 1 == 0).count() as Real * inv)
        .collect();
    let overall = labels.masks.iter().filter(|&&m| m == 0).count() as Real * inv;
    Ok(SkewWeights { per_class, overall })
}

/// Transfer raw-resolution edge bits onto a subsampled cloud by OR-ing the
/// bits of every member of each cell.
pub fn transfer_edge_labels(labels: &SemanticEdgeLabels, sub: &SubsampledCloud) -> SemanticEdgeLabels {
    let masks = sub
        .members
        .iter()
        .map(|members| members.iter().fold(0u64, |acc, &i| acc | labels.masks[i as usize]))
        .collect();
    SemanticEdgeLabels { masks, num_classes: labels.num_classes }
}
