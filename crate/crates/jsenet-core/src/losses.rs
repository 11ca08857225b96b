//! The four supervision terms and their weighted total.
//!
//! Every loss is a per-point mean, so magnitudes do not depend on how many
//! points a training sphere happens to contain.

use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::labels::{OneHotMask, SemanticEdgeLabels, SkewWeights};
use crate::tensor::{Graph, NodeId, Tensor};
use crate::Real;

/// Weights of the total loss. `lambda_seg` defaults to the number of
/// semantic classes; the others to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_seg: Real,
    pub lambda_edge: Real,
    pub lambda_bce: Real,
    pub lambda_dual: Real,
}

impl LossWeights {
    pub fn for_classes(num_classes: usize) -> Self {
        LossWeights {
            lambda_seg: num_classes as Real,
            lambda_edge: 1.0,
            lambda_bce: 1.0,
            lambda_dual: 1.0,
        }
    }
}

/// Multi-class cross-entropy against one-hot ground truth, averaged over
/// non-ignored points. `probs` are post-softmax rows.
pub fn loss_seg(g: &mut Graph, probs: NodeId, gt: &OneHotMask) -> Result<NodeId> {
    let t = g.value(probs);
    contract!(
        t.rows() == gt.num_points && t.cols() == gt.num_classes,
        "prediction {}x{} against ground truth {}x{}",
        t.rows(),
        t.cols(),
        gt.num_points,
        gt.num_classes
    );
    let valid = gt.valid_count();
    if valid == 0 {
        log::warn!("loss_seg: every point ignored; returning zero loss");
        return Ok(g.leaf(Tensor::scalar(0.0)));
    }
    let target = g.leaf(Tensor::matrix(gt.num_points, gt.num_classes, gt.rows.clone())?);
    let logp = g.log(probs)?;
    let picked = g.mul(target, logp)?;
    let total = g.sum(picked)?;
    g.scale(total, -1.0 / valid as Real)
}

/// Point-wise weighted multi-label edge loss. `probs` are the K post-sigmoid
/// edge maps as N×K; `beta.per_class[k]` weights positives of class k.
pub fn loss_edge(
    g: &mut Graph,
    probs: NodeId,
    gt: &SemanticEdgeLabels,
    beta: &SkewWeights,
) -> Result<NodeId> {
    let t = g.value(probs);
    let (n, k) = (t.rows(), t.cols());
    contract!(
        n == gt.len() && k == gt.num_classes,
        "prediction {}x{} against {} edge masks of {} classes",
        n,
        k,
        gt.len(),
        gt.num_classes
    );
    contract!(beta.per_class.len() == k, "{} betas for {k} classes", beta.per_class.len());
    for &b in &beta.per_class {
        contract!((0.0..=1.0).contains(&b), "beta {b} outside [0,1]");
    }
    let mut w_pos = Vec::with_capacity(n * k);
    let mut w_neg = Vec::with_capacity(n * k);
    for i in 0..n {
        for (j, &b) in beta.per_class.iter().enumerate() {
            let is_edge = gt.has(i, j);
            w_pos.push(if is_edge { b } else { 0.0 });
            w_neg.push(if is_edge { 0.0 } else { 1.0 - b });
        }
    }
    weighted_bce(g, probs, w_pos, w_neg, n)
}

/// Point-wise weighted binary cross-entropy on one binary edge map (N×1
/// post-sigmoid values).
pub fn loss_bce(g: &mut Graph, probs: NodeId, gt_binary: &[Real], beta: Real) -> Result<NodeId> {
    let t = g.value(probs);
    let n = t.rows();
    contract!(t.cols() == 1, "binary map must be a single column, got {:?}", t.shape());
    contract!(n == gt_binary.len(), "{} predictions for {} labels", n, gt_binary.len());
    contract!((0.0..=1.0).contains(&beta), "beta {beta} outside [0,1]");
    let mut w_pos = Vec::with_capacity(n);
    let mut w_neg = Vec::with_capacity(n);
    for &b in gt_binary {
        let is_edge = b != 0.0;
        w_pos.push(if is_edge { beta } else { 0.0 });
        w_neg.push(if is_edge { 0.0 } else { 1.0 - beta });
    }
    weighted_bce(g, probs, w_pos, w_neg, n)
}

/// Shared core of the weighted cross-entropies:
/// mean_p( −w_pos·log e − w_neg·log(1−e) ).
fn weighted_bce(g: &mut Graph, probs: NodeId, w_pos: Vec<Real>, w_neg: Vec<Real>, n: usize) -> Result<NodeId> {
    let shape = g.value(probs).shape().to_vec();
    let w_pos = g.leaf(Tensor::from_vec(shape.clone(), w_pos)?);
    let w_neg = g.leaf(Tensor::from_vec(shape, w_neg)?);
    let log_p = g.log(probs)?;
    let pos = g.mul(w_pos, log_p)?;
    let flipped = g.scale(probs, -1.0)?;
    let one_minus = g.add_scalar(flipped, 1.0)?;
    let log_q = g.log(one_minus)?;
    let neg = g.mul(w_neg, log_q)?;
    let both = g.add(pos, neg)?;
    let total = g.sum(both)?;
    g.scale(total, -1.0 / n as Real)
}

/// Dual semantic edge loss: β-weighted mean absolute mismatch between
/// predicted and ground-truth edge activation maps.
pub fn loss_dual(g: &mut Graph, act: NodeId, act_gt: &[Real], beta: Real) -> Result<NodeId> {
    let t = g.value(act);
    let (n, k) = (t.rows(), t.cols());
    contract!(
        n * k == act_gt.len(),
        "activation {}x{} against {} ground-truth values",
        n,
        k,
        act_gt.len()
    );
    let neg_gt = g.leaf(Tensor::matrix(n, k, act_gt.iter().map(|&v| -v).collect())?);
    let diff = g.add(act, neg_gt)?;
    let dist = g.abs(diff)?;
    let total = g.sum(dist)?;
    g.scale(total, beta / n as Real)
}

/// Weighted total: λ0·Σ seg terms + λ1·Σ edge terms + λ2·Σ bce terms
/// + λ3·Σ dual terms. Every component must be nonnegative.
pub fn loss_total(
    g: &mut Graph,
    seg_terms: &[NodeId],
    edge_terms: &[NodeId],
    bce_terms: &[NodeId],
    dual_terms: &[NodeId],
    w: &LossWeights,
) -> Result<NodeId> {
    for &t in seg_terms.iter().chain(edge_terms).chain(bce_terms).chain(dual_terms) {
        let v = g.value(t);
        contract!(v.is_scalar(), "loss component must be scalar, got {:?}", v.shape());
        contract!(v.data()[0] >= 0.0, "negative loss component {}", v.data()[0]);
    }
    let mut total = g.leaf(Tensor::scalar(0.0));
    for (terms, lambda) in [
        (seg_terms, w.lambda_seg),
        (edge_terms, w.lambda_edge),
        (bce_terms, w.lambda_bce),
        (dual_terms, w.lambda_dual),
    ] {
        for &term in terms {
            let scaled = g.scale(term, lambda)?;
            total = g.add(total, scaled)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::one_hot;
    use alloc::vec;

    const LN2: Real = core::f64::consts::LN_2 as Real;

    #[test]
    fn seg_zero_at_perfect_prediction() {
        let gt = one_hot(&[0, 1, 2], 3).unwrap();
        let mut g = Graph::new();
        let probs = g.leaf(Tensor::matrix(3, 3, gt.rows.clone()).unwrap());
        let l = loss_seg(&mut g, probs, &gt).unwrap();
        assert!(g.value(l).data()[0].abs() < 1e-6);
    }

    #[test]
    fn seg_uniform_two_classes_is_ln2() {
        let gt = one_hot(&[0, 1], 2).unwrap();
        let mut g = Graph::new();
        let probs = g.leaf(Tensor::matrix(2, 2, vec![0.5; 4]).unwrap());
        let l = loss_seg(&mut g, probs, &gt).unwrap();
        assert!((g.value(l).data()[0] - LN2).abs() < 1e-12);
    }

    #[test]
    fn seg_ignores_flagged_rows() {
        let gt = one_hot(&[0, -1], 2).unwrap();
        let mut g = Graph::new();
        // The ignored row has a terrible prediction; it must not count.
        let probs = g.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let l = loss_seg(&mut g, probs, &gt).unwrap();
        assert!(g.value(l).data()[0].abs() < 1e-6);
    }

    #[test]
    fn seg_all_ignored_is_zero() {
        let gt = one_hot(&[-1, -1], 2).unwrap();
        let mut g = Graph::new();
        let probs = g.leaf(Tensor::matrix(2, 2, vec![0.5; 4]).unwrap());
        let l = loss_seg(&mut g, probs, &gt).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
    }

    #[test]
    fn seg_matches_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (n, k) = (17, 4);
        let labels: Vec<i32> = (0..n).map(|_| rng.random_range(-1..k as i32)).collect();
        let mut probs: Vec<Real> = vec![0.0; n * k];
        for row in probs.chunks_mut(k) {
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = rng.random_range(0.05..1.0);
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        // Scalar loop oracle.
        let mut expect = 0.0;
        let mut valid = 0;
        for (i, &l) in labels.iter().enumerate() {
            if l >= 0 {
                expect -= crate::math::ln(probs[i * k + l as usize].clamp(1e-7, 1.0 - 1e-7));
                valid += 1;
            }
        }
        expect /= valid as Real;
        let gt = one_hot(&labels, k).unwrap();
        let mut g = Graph::new();
        let p = g.leaf(Tensor::matrix(n, k, probs).unwrap());
        let l = loss_seg(&mut g, p, &gt).unwrap();
        assert!((g.value(l).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn edge_closed_form_hand_case() {
        // 4 points, one is an edge of class 0 (β₀ = 0.75), predictions 0.5
        // everywhere: loss = (0.75 + 3·0.25)·ln2 / 4 = 0.375·ln2.
        let gt = SemanticEdgeLabels { masks: vec![1, 0, 0, 0], num_classes: 1 };
        let beta = crate::labels::skew_weights(&gt).unwrap();
        let mut g = Graph::new();
        let probs = g.leaf(Tensor::matrix(4, 1, vec![0.5; 4]).unwrap());
        let l = loss_edge(&mut g, probs, &gt, &beta).unwrap();
        assert!((g.value(l).data()[0] - 0.375 * LN2).abs() < 1e-12);
    }

    #[test]
    fn edge_zero_at_perfect_prediction() {
        let gt = SemanticEdgeLabels { masks: vec![0b10, 0b01, 0], num_classes: 2 };
        let beta = crate::labels::skew_weights(&gt).unwrap();
        let mut g = Graph::new();
        let mut probs = vec![0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                probs[i * 2 + j] = if gt.has(i, j) { 1.0 } else { 0.0 };
            }
        }
        let p = g.leaf(Tensor::matrix(3, 2, probs).unwrap());
        let l = loss_edge(&mut g, p, &gt, &beta).unwrap();
        assert!(g.value(l).data()[0].abs() < 1e-5);
    }

    #[test]
    fn edge_rejects_bad_beta() {
        let gt = SemanticEdgeLabels { masks: vec![0], num_classes: 1 };
        let beta = SkewWeights { per_class: vec![1.5], overall: 1.0 };
        let mut g = Graph::new();
        let p = g.leaf(Tensor::matrix(1, 1, vec![0.5]).unwrap());
        assert!(loss_edge(&mut g, p, &gt, &beta).is_err());
    }

    #[test]
    fn bce_weight_one_kills_negative_term() {
        // β = 1 with no ground-truth edges: both terms vanish.
        let mut g = Graph::new();
        let p = g.leaf(Tensor::matrix(3, 1, vec![0.9, 0.2, 0.6]).unwrap());
        let l = loss_bce(&mut g, p, &[0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
    }

    #[test]
    fn bce_matches_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 23;
        let gt: Vec<Real> = (0..n).map(|_| if rng.random_range(0.0..1.0) < 0.3 { 1.0 } else { 0.0 }).collect();
        let probs: Vec<Real> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let beta = 0.7;
        let mut expect = 0.0;
        for (&b, &p) in gt.iter().zip(&probs) {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            expect += -beta * b * crate::math::ln(p) - (1.0 - beta) * (1.0 - b) * crate::math::ln(1.0 - p);
        }
        expect /= n as Real;
        let mut g = Graph::new();
        let p = g.leaf(Tensor::matrix(n, 1, probs).unwrap());
        let l = loss_bce(&mut g, p, &gt, beta).unwrap();
        assert!((g.value(l).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn dual_zero_at_match() {
        let mut g = Graph::new();
        let act = g.leaf(Tensor::matrix(2, 2, vec![0.1, 0.4, 0.0, 0.2]).unwrap());
        let l = loss_dual(&mut g, act, &[0.1, 0.4, 0.0, 0.2], 0.8).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
    }

    #[test]
    fn dual_constant_gt_closed_form() {
        // â = 0 everywhere → loss = β · mean_p Σ_k |a_k|.
        let mut g = Graph::new();
        let act = g.leaf(Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let l = loss_dual(&mut g, act, &[0.0; 4], 0.5).unwrap();
        assert!((g.value(l).data()[0] - 0.5 * (0.3 + 0.7) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn total_weighs_seg_by_class_count() {
        let w = LossWeights::for_classes(13);
        let mut g = Graph::new();
        let one = g.leaf(Tensor::scalar(1.0));
        let l = loss_total(&mut g, &[one], &[], &[], &[], &w).unwrap();
        assert_eq!(g.value(l).data()[0], 13.0);
    }

    #[test]
    fn total_is_weighted_sum() {
        let w = LossWeights { lambda_seg: 2.0, lambda_edge: 3.0, lambda_bce: 5.0, lambda_dual: 7.0 };
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(0.5));
        let b = g.leaf(Tensor::scalar(0.25));
        let c = g.leaf(Tensor::scalar(1.0));
        let d = g.leaf(Tensor::scalar(0.1));
        let l = loss_total(&mut g, &[a], &[b], &[c], &[d], &w).unwrap();
        let expect = 2.0 * 0.5 + 3.0 * 0.25 + 5.0 * 1.0 + 7.0 * 0.1;
        assert!((g.value(l).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn total_rejects_negative_component() {
        let w = LossWeights::for_classes(2);
        let mut g = Graph::new();
        let bad = g.leaf(Tensor::scalar(-0.1));
        assert!(loss_total(&mut g, &[bad], &[], &[], &[], &w).is_err());
    }

    #[test]
    fn all_zero_components_give_zero() {
        let w = LossWeights::for_classes(4);
        let mut g = Graph::new();
        let z = g.leaf(Tensor::scalar(0.0));
        let l = loss_total(&mut g, &[z], &[z], &[z], &[z], &w).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
    }
}
