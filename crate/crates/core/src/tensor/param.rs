use std::collections::{BTreeMap, BTreeSet};

use super::{Real, Tape, Tensor, Var};
use crate::error::{CpmError, Result};

/// Index of one storage buffer inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotId(pub usize);

/// A named view onto a storage slot. Parameters in one share group that
/// play the same role point at the same slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub slot: SlotId,
    pub share_group: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = super::Float> {
    slots: Vec<Tensor<T>>,
    params: Vec<Parameter>,
    shared: BTreeMap<String, SlotId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { slots: Vec::new(), params: Vec::new(), shared: BTreeMap::new() }
    }

    /// Registers `name`. With a share key `(group, role)`, the first
    /// registration allocates storage and later ones alias it.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        share: Option<(&str, &str)>,
        init: impl FnOnce() -> Tensor<T>,
    ) -> Result<SlotId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(CpmError::Architecture(format!("duplicate parameter name {name}")));
        }
        let slot = match share {
            Some((group, role)) => {
                let key = format!("{group}/{role}");
                match self.shared.get(&key) {
                    Some(&slot) => slot,
                    None => {
                        let slot = self.push_slot(init());
                        self.shared.insert(key, slot);
                        slot
                    }
                }
            }
            None => self.push_slot(init()),
        };
        self.params.push(Parameter { name, slot, share_group: share.map(|(g, _)| g.to_string()) });
        Ok(slot)
    }

    fn push_slot(&mut self, tensor: Tensor<T>) -> SlotId {
        self.slots.push(tensor.with_requires_grad(true));
        SlotId(self.slots.len() - 1)
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn slot(&self, id: SlotId) -> &Tensor<T> {
        &self.slots[id.0]
    }

    pub fn slot_mut(&mut self, id: SlotId) -> &mut Tensor<T> {
        &mut self.slots[id.0]
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_ids(&self) -> impl Iterator<Item = SlotId> {
        (0..self.slots.len()).map(SlotId)
    }

    /// First registered name of a slot.
    pub fn slot_name(&self, id: SlotId) -> &str {
        self.params.iter().find(|p| p.slot == id).map(|p| p.name.as_str()).unwrap_or("")
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &self.slots[p.slot.0])
    }

    /// Number of distinct scalars in storage.
    pub fn scalar_count(&self) -> usize {
        self.slots.iter().map(Tensor::numel).sum()
    }

    /// Records every slot on `tape`; slots failing `trainable` become constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: impl Fn(SlotId) -> bool) -> Vec<Var> {
        self.slot_ids()
            .map(|id| {
                let t = self.slots[id.0].detach().with_requires_grad(trainable(id));
                tape.leaf(t)
            })
            .collect()
    }

    /// Adds tape gradients of the bound trainable slots into storage.
    /// A trainable slot the loss never reached receives zeros.
    pub fn collect_grads(&mut self, tape: &Tape<T>, bound: &[Var]) -> Result<()> {
        for (slot, &v) in self.slots.iter_mut().zip(bound) {
            if !tape.value(v).requires_grad() {
                continue;
            }
            match tape.grad(v) {
                Some(g) => slot.accumulate_grad(g)?,
                None => slot.accumulate_grad(&vec![T::zero(); slot.numel()])?,
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            s.zero_grad();
        }
    }

    /// Plain SGD over the named parameters: `p ← p − lr·grad`, one update
    /// per storage slot, then the gradients are zeroed.
    pub fn sgd_step(&mut self, params: &[Parameter], learning_rate: T) -> Result<()> {
        let slots = self.unique_slots(params)?;
        for id in slots {
            let slot = &mut self.slots[id.0];
            let g = slot.grad().map(<[T]>::to_vec).expect("checked by unique_slots");
            for (p, gi) in slot.data_mut().iter_mut().zip(g) {
                *p -= learning_rate * gi;
            }
            slot.zero_grad();
        }
        Ok(())
    }

    fn unique_slots(&self, params: &[Parameter]) -> Result<BTreeSet<SlotId>> {
        let mut out = BTreeSet::new();
        for p in params {
            if self.slots[p.slot.0].grad().is_none() {
                return Err(CpmError::MissingGrad(p.name.clone()));
            }
            out.insert(p.slot);
        }
        Ok(out)
    }

    /// Parameters whose slot is in `slots`.
    pub fn params_for(&self, slots: &BTreeSet<SlotId>) -> Vec<Parameter> {
        self.params.iter().filter(|p| slots.contains(&p.slot)).cloned().collect()
    }
}

/// SGD with optional heavy-ball momentum: `v ← μv + g; p ← p − lr·v`.
/// With `momentum == 0` this is exactly [`ParamStore::sgd_step`].
#[derive(Clone, Debug)]
pub struct Sgd<T: Real = super::Float> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: BTreeMap<SlotId, Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(learning_rate: T, momentum: T) -> Self {
        Self { learning_rate, momentum, velocity: BTreeMap::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, params: &[Parameter]) -> Result<()> {
        if self.momentum == T::zero() {
            return store.sgd_step(params, self.learning_rate);
        }
        for id in store.unique_slots(params)? {
            let slot = &mut store.slots[id.0];
            let g = slot.grad().map(<[T]>::to_vec).expect("checked by unique_slots");
            let v = self.velocity.entry(id).or_insert_with(|| vec![T::zero(); g.len()]);
            for ((p, vi), gi) in slot.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = self.momentum * *vi + gi;
                *p -= self.learning_rate * *vi;
            }
            slot.zero_grad();
        }
        Ok(())
    }

    pub fn velocity(&self) -> &BTreeMap<SlotId, Vec<T>> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: BTreeMap<SlotId, Vec<T>>) {
        self.velocity = velocity;
    }
}
