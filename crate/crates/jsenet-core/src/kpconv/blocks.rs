//! Layer blocks shared by both streams and the refinement module.

use alloc::format;
use alloc::rc::Rc;

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{nearest_upsample, Pyramid, KERNEL_POINTS};
use crate::error::{contract, Result};
use crate::tensor::{Graph, NodeId, ParamId, ParamStore, Tensor, BN_DECAY};
use crate::{math, Real};

/// Negative slope of every activation in the network.
pub const LEAKY_SLOPE: Real = 0.1;

/// Per-forward context: the tape, the store-aligned node table, and the
/// store itself (mutable for running-statistic updates).
pub struct Ctx<'a, 'g> {
    pub g: &'g mut Graph,
    pub store: &'a mut ParamStore,
    pub nodes: &'a [Option<NodeId>],
    /// Batch-statistics mode: normalize by batch stats and update the
    /// running buffers. Otherwise the frozen running stats are applied.
    pub train: bool,
}

impl Ctx<'_, '_> {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0 as usize].expect("trainable parameter registered on the graph")
    }
}

fn he_normal(rng: &mut impl Rng, fan_in: usize, shape: Vec<usize>) -> Tensor {
    let std = math::sqrt(2.0 / fan_in as Real);
    let dist = Normal::new(0.0_f64, std as f64).expect("valid std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng) as Real).collect();
    Tensor::from_vec(shape, data).expect("consistent shape")
}

/// Batch norm parameters plus running statistics.
pub struct BnParams {
    gamma: ParamId,
    beta: ParamId,
    run_mean: ParamId,
    run_var: ParamId,
}

impl BnParams {
    fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let ones = Tensor::from_vec(alloc::vec![channels], alloc::vec![1.0; channels]).unwrap();
        let zeros = Tensor::zeros(alloc::vec![channels]);
        BnParams {
            gamma: store.add(format!("{name}.bn_gamma"), ones.clone(), true),
            beta: store.add(format!("{name}.bn_beta"), zeros.clone(), true),
            run_mean: store.add(format!("{name}.bn_mean"), zeros, false),
            run_var: store.add(format!("{name}.bn_var"), ones, false),
        }
    }

    fn forward(&self, ctx: &mut Ctx, x: NodeId) -> Result<NodeId> {
        if ctx.train {
            let gamma = ctx.node(self.gamma);
            let beta = ctx.node(self.beta);
            let (y, stats) = ctx.g.batch_norm(x, gamma, beta)?;
            for (id, batch) in [(self.run_mean, &stats.mean), (self.run_var, &stats.var)] {
                let buf = ctx.store.value_mut(id);
                for (r, &b) in buf.data_mut().iter_mut().zip(batch) {
                    *r = BN_DECAY * *r + (1.0 - BN_DECAY) * b;
                }
            }
            Ok(y)
        } else {
            contract!(!ctx.g.requires_grad(x), "frozen batch norm on a tracked input");
            let tx = ctx.g.value(x);
            let (n, c) = (tx.rows(), tx.cols());
            let gamma = ctx.store.value(self.gamma).data();
            let beta = ctx.store.value(self.beta).data();
            let mean = ctx.store.value(self.run_mean).data();
            let var = ctx.store.value(self.run_var).data();
            let mut data = alloc::vec![0.0; n * c];
            for j in 0..c {
                let a = gamma[j] / math::sqrt(var[j] + crate::tensor::BN_EPSILON);
                let b = beta[j] - mean[j] * a;
                for r in 0..n {
                    data[r * c + j] = tx.at(r, j) * a + b;
                }
            }
            let t = Tensor::matrix(n, c, data)?;
            Ok(ctx.g.leaf(t))
        }
    }
}

/// 1×1 transform: linear → batch norm → leaky ReLU (optional).
pub struct LinearBn {
    weight: ParamId,
    bn: BnParams,
    relu: bool,
    pub out_channels: usize,
}

impl LinearBn {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        relu: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            he_normal(rng, c_in, alloc::vec![c_in, c_out]),
            true,
        );
        LinearBn { weight, bn: BnParams::new(store, name, c_out), relu, out_channels: c_out }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: NodeId) -> Result<NodeId> {
        let w = ctx.node(self.weight);
        let y = ctx.g.matmul(x, w)?;
        let y = self.bn.forward(ctx, y)?;
        if self.relu {
            ctx.g.leaky_relu(y, LEAKY_SLOPE)
        } else {
            Ok(y)
        }
    }
}

/// Plain linear head with bias; no normalization or activation.
pub struct LinearHead {
    weight: ParamId,
    bias: ParamId,
}

impl LinearHead {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c_in: usize, c_out: usize) -> Self {
        LinearHead {
            weight: store.add(
                format!("{name}.weight"),
                he_normal(rng, c_in, alloc::vec![c_in, c_out]),
                true,
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(alloc::vec![c_out]), true),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: NodeId) -> Result<NodeId> {
        let w = ctx.node(self.weight);
        let b = ctx.node(self.bias);
        let y = ctx.g.matmul(x, w)?;
        ctx.g.add_row_broadcast(y, b)
    }
}

/// Kernel-point convolution → batch norm → leaky ReLU.
pub struct KpConvUnit {
    weights: ParamId,
    bn: BnParams,
    pub out_channels: usize,
}

impl KpConvUnit {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c_in: usize, c_out: usize) -> Self {
        let weights = store.add(
            format!("{name}.kernel"),
            he_normal(rng, c_in * KERNEL_POINTS, alloc::vec![KERNEL_POINTS, c_in, c_out]),
            true,
        );
        KpConvUnit { weights, bn: BnParams::new(store, name, c_out), out_channels: c_out }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: NodeId, plan: &Rc<crate::tensor::KpConvPlan>) -> Result<NodeId> {
        let w = ctx.node(self.weights);
        let y = ctx.g.kpconv(x, w, Rc::clone(plan))?;
        let y = self.bn.forward(ctx, y)?;
        ctx.g.leaky_relu(y, LEAKY_SLOPE)
    }
}

/// Bottleneck residual block. With a pooling map it becomes the strided
/// transition between pyramid levels; the shortcut then mean-pools its
/// input over the same neighbor lists the convolution uses.
pub struct ResidualBlock {
    reduce: LinearBn,
    conv: KpConvUnit,
    expand: LinearBn,
    shortcut: Option<LinearBn>,
    pub out_channels: usize,
}

impl ResidualBlock {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c_in: usize, c_out: usize) -> Self {
        let mid = (c_out / 4).max(1);
        ResidualBlock {
            reduce: LinearBn::new(store, rng, &format!("{name}.reduce"), c_in, mid, true),
            conv: KpConvUnit::new(store, rng, &format!("{name}.conv"), mid, mid),
            expand: LinearBn::new(store, rng, &format!("{name}.expand"), mid, c_out, false),
            shortcut: (c_in != c_out)
                .then(|| LinearBn::new(store, rng, &format!("{name}.shortcut"), c_in, c_out, false)),
            out_channels: c_out,
        }
    }

    /// In-level residual block (queries == support).
    pub fn forward(&self, ctx: &mut Ctx, x: NodeId, plan: &Rc<crate::tensor::KpConvPlan>) -> Result<NodeId> {
        let mid = self.reduce.forward(ctx, x)?;
        let mid = self.conv.forward(ctx, mid, plan)?;
        let expanded = self.expand.forward(ctx, mid)?;
        let short = match &self.shortcut {
            Some(s) => s.forward(ctx, x)?,
            None => x,
        };
        let sum = ctx.g.add(expanded, short)?;
        ctx.g.leaky_relu(sum, LEAKY_SLOPE)
    }

    /// Strided variant: convolution queries at the coarse points, and the
    /// shortcut mean-pools over `pool_groups`.
    pub fn forward_strided(
        &self,
        ctx: &mut Ctx,
        x: NodeId,
        plan: &Rc<crate::tensor::KpConvPlan>,
        pool_groups: &Rc<Vec<Vec<u32>>>,
    ) -> Result<NodeId> {
        let mid = self.reduce.forward(ctx, x)?;
        let mid = self.conv.forward(ctx, mid, plan)?;
        let expanded = self.expand.forward(ctx, mid)?;
        let pooled = ctx.g.mean_groups(x, Rc::clone(pool_groups))?;
        let short = match &self.shortcut {
            Some(s) => s.forward(ctx, pooled)?,
            None => pooled,
        };
        let sum = ctx.g.add(expanded, short)?;
        ctx.g.leaky_relu(sum, LEAKY_SLOPE)
    }
}

/// U-Net-like fusion sub-module: five encoding convolutions of width 32
/// walking down the pyramid, then a mirrored decoder with skip links and a
/// final head of branch-specific width.
pub struct FusionSubmodule {
    enc: Vec<KpConvUnit>,
    dec: Vec<LinearBn>,
    head: LinearHead,
}

/// Channel width of every fusion layer.
pub const FUSION_WIDTH: usize = 32;

impl FusionSubmodule {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c_in: usize, c_out: usize) -> Self {
        let mut enc = Vec::new();
        for level in 0..super::NUM_STAGES {
            let cin = if level == 0 { c_in } else { FUSION_WIDTH };
            enc.push(KpConvUnit::new(store, rng, &format!("{name}.enc{level}"), cin, FUSION_WIDTH));
        }
        let mut dec = Vec::new();
        for level in (0..super::NUM_STAGES - 1).rev() {
            dec.push(LinearBn::new(
                store,
                rng,
                &format!("{name}.dec{level}"),
                2 * FUSION_WIDTH,
                FUSION_WIDTH,
                true,
            ));
        }
        FusionSubmodule { enc, dec, head: LinearHead::new(store, rng, &format!("{name}.head"), FUSION_WIDTH, c_out) }
    }

    pub fn forward(&self, ctx: &mut Ctx, pyramid: &Pyramid, x: NodeId) -> Result<NodeId> {
        // Encoder: level 0 convolution, then strided convolutions downward.
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut feat = x;
        for (level, unit) in self.enc.iter().enumerate() {
            let plan = if level == 0 {
                Rc::clone(&pyramid.levels[0].conv_plan)
            } else {
                Rc::clone(pyramid.levels[level].pool_plan.as_ref().expect("level > 0"))
            };
            feat = unit.forward(ctx, feat, &plan)?;
            skips.push(feat);
        }
        // Decoder: nearest upsample, concatenate the skip, reduce back to 32.
        for (i, dec) in self.dec.iter().enumerate() {
            let level = self.enc.len() - 1 - i; // upsampling level → level-1
            let fine = &pyramid.levels[level - 1];
            let up = nearest_upsample(ctx.g, feat, &pyramid.levels[level].parent_of, fine.cloud.len())?;
            let cat = ctx.g.concat_cols(&[up, skips[level - 1]])?;
            feat = dec.forward(ctx, cat)?;
        }
        self.head.forward(ctx, feat)
    }
}
