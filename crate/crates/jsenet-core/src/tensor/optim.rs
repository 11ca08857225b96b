//! Named parameter storage and the momentum-SGD optimizer.

use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, NodeId, Tensor};
use crate::error::{contract, Result};
use crate::Real;

/// Index of a parameter within a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub u32);

/// One named tensor. Non-trainable entries hold state such as batch-norm
/// running statistics; they are checkpointed but never updated by the
/// optimizer.
pub struct ParamEntry {
    pub name: String,
    pub value: Rc<Tensor>,
    pub trainable: bool,
}

/// Ordered collection of model parameters. Registration order is fixed at
/// construction, which makes checkpoints and training trajectories
/// reproducible.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        let id = ParamId(self.entries.len() as u32);
        self.entries.push(ParamEntry { name, value: Rc::new(value), trainable });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0 as usize].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0 as usize].name
    }

    /// Mutable access; panics if the tensor is still shared with a live graph.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::get_mut(&mut self.entries[id.0 as usize].value)
            .expect("parameter still borrowed by a graph")
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(|i| ParamId(i as u32))
    }

    /// Register the trainable entries on a graph; gradients are tracked for
    /// those whose name passes `grad_filter`. Returns node ids aligned with
    /// the entry order (`None` for state entries, which stay mutable in the
    /// store while the graph is alive).
    pub fn register_into(&self, g: &mut Graph, grad_filter: impl Fn(&str) -> bool) -> Vec<Option<NodeId>> {
        self.entries
            .iter()
            .map(|e| {
                e.trainable
                    .then(|| g.leaf_shared(Rc::clone(&e.value), grad_filter(&e.name)))
            })
            .collect()
    }

    /// Total number of trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }
}

/// Heavy-ball SGD: v ← m·v − lr·g, p ← p + v.
pub struct MomentumSgd {
    pub learning_rate: Real,
    pub momentum: Real,
    velocity: Vec<Vec<Real>>,
}

impl MomentumSgd {
    /// Velocity buffers start at zero, matching the parameter shapes.
    pub fn new(store: &ParamStore, learning_rate: Real, momentum: Real) -> Self {
        let velocity = store.entries().iter().map(|e| vec![0.0; e.value.numel()]).collect();
        MomentumSgd { learning_rate, momentum, velocity }
    }

    pub fn set_learning_rate(&mut self, lr: Real) {
        self.learning_rate = lr;
    }

    /// Apply one update to a single parameter.
    pub fn apply(&mut self, store: &mut ParamStore, id: ParamId, grad: &[Real]) -> Result<()> {
        let v = &mut self.velocity[id.0 as usize];
        contract!(
            grad.len() == v.len(),
            "gradient length {} does not match parameter `{}` ({} values)",
            grad.len(),
            store.name(id),
            v.len()
        );
        contract!(store.entries()[id.0 as usize].trainable, "update of non-trainable `{}`", store.name(id));
        let (lr, m) = (self.learning_rate, self.momentum);
        let p = store.value_mut(id);
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
            *vv = m * *vv - lr * gv;
            *pv += *vv;
        }
        Ok(())
    }

    /// Update every trainable parameter from the gradients accumulated on a
    /// graph, using the node ids returned by [`ParamStore::register_into`].
    pub fn step(&mut self, store: &mut ParamStore, g: &Graph, nodes: &[Option<NodeId>]) -> Result<usize> {
        let mut updated = 0;
        let grads: Vec<Option<Vec<Real>>> = nodes
            .iter()
            .map(|n| n.and_then(|n| g.grad(n).map(|s| s.to_vec())))
            .collect();
        for (i, grad) in grads.into_iter().enumerate() {
            if let Some(grad) = grad {
                self.apply(store, ParamId(i as u32), &grad)?;
                updated += 1;
            }
        }
        Ok(updated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param_store() -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p".into(), Tensor::scalar(0.0), true);
        (store, id)
    }

    #[test]
    fn first_step_is_minus_lr() {
        let (mut store, id) = one_param_store();
        let mut opt = MomentumSgd::new(&store, 0.01, 0.98);
        opt.apply(&mut store, id, &[1.0]).unwrap();
        assert!((store.value(id).data()[0] + 0.01).abs() < 1e-15);
    }

    #[test]
    fn second_step_accumulates_momentum() {
        let (mut store, id) = one_param_store();
        let mut opt = MomentumSgd::new(&store, 0.01, 0.98);
        opt.apply(&mut store, id, &[1.0]).unwrap();
        let before = store.value(id).data()[0];
        opt.apply(&mut store, id, &[1.0]).unwrap();
        let delta = store.value(id).data()[0] - before;
        // v2 = 0.98·(−0.01) − 0.01 = −0.0198
        assert!((delta + 0.0198).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let (mut store, id) = one_param_store();
        let mut opt = MomentumSgd::new(&store, 0.01, 0.98);
        assert!(opt.apply(&mut store, id, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn fifty_steps_contract_quadratic() {
        // Independent oracle: simulate the same recursion on the scalar
        // objective ½p² (gradient p) and check the optimizer tracks it.
        let (mut store, id) = one_param_store();
        store.value_mut(id).data_mut()[0] = 1.0;
        let mut opt = MomentumSgd::new(&store, 0.01, 0.98);
        let (mut sim_p, mut sim_v) = (1.0_f64, 0.0_f64);
        for _ in 0..50 {
            let g = store.value(id).data()[0];
            opt.apply(&mut store, id, &[g]).unwrap();
            sim_v = 0.98 * sim_v - 0.01 * sim_p;
            sim_p += sim_v;
        }
        let p = store.value(id).data()[0];
        assert!((p - sim_p as Real).abs() < 1e-12);
        assert!(p.abs() < 0.5, "momentum failed to contract: {p}");
    }
}
