use ndarray::{ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Real;
use crate::util::{name_hash, rng_for, sha256_hex};

/// Name, shape and location of one parameter tensor in the flat store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn get<'a, R>(&self, data: &'a [R]) -> &'a [R] {
        &data[self.offset..self.offset + self.len]
    }

    pub fn get_mut<'a, R>(&self, data: &'a mut [R]) -> &'a mut [R] {
        &mut data[self.offset..self.offset + self.len]
    }

    pub fn v1<'a, R>(&self, data: &'a [R]) -> ArrayView1<'a, R> {
        ArrayView1::from(self.get(data))
    }

    pub fn v2<'a, R>(&self, data: &'a [R], shape: (usize, usize)) -> ArrayView2<'a, R> {
        ArrayView2::from_shape(shape, self.get(data)).expect("slot shape")
    }

    pub fn v3<'a, R>(&self, data: &'a [R], shape: (usize, usize, usize)) -> ArrayView3<'a, R> {
        ArrayView3::from_shape(shape, self.get(data)).expect("slot shape")
    }

    pub fn m1<'a, R>(&self, data: &'a mut [R]) -> ArrayViewMut1<'a, R> {
        ArrayViewMut1::from(self.get_mut(data))
    }

    pub fn m2<'a, R>(&self, data: &'a mut [R], shape: (usize, usize)) -> ArrayViewMut2<'a, R> {
        ArrayViewMut2::from_shape(shape, self.get_mut(data)).expect("slot shape")
    }
}

/// Disjoint mutable slices for several slots, which must be listed in
/// increasing offset order (registration order).
pub(crate) fn split_slots<'a, R>(mut data: &'a mut [R], slots: &[Slot]) -> Vec<&'a mut [R]> {
    let mut out = Vec::with_capacity(slots.len());
    let mut base = 0;
    for slot in slots {
        assert!(slot.offset >= base, "slots out of order");
        let rest = std::mem::take(&mut data);
        let (_, tail) = rest.split_at_mut(slot.offset - base);
        let (mine, tail) = tail.split_at_mut(slot.len);
        out.push(mine);
        data = tail;
        base = slot.offset + slot.len;
    }
    out
}

/// Every trainable scalar of a model in one contiguous vector, in
/// registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<R> {
    specs: Vec<ParamSpec>,
    data: Vec<R>,
}

impl<R: Real> ParamStore<R> {
    pub(crate) fn new() -> Self {
        ParamStore {
            specs: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Registers a tensor initialised uniformly in ±1/sqrt(fan_in). The draw
    /// depends only on `(seed, name)`, so the same name gets the same values
    /// in any architecture that contains it.
    pub(crate) fn register(&mut self, name: &str, shape: &[usize], fan_in: usize, seed: u64) -> Slot {
        assert!(!self.specs.iter().any(|s| s.name == name), "duplicate parameter {name}");
        let offset = self.data.len();
        let len: usize = shape.iter().product();
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = rng_for(seed, &[name_hash(name)]);
        self.data
            .extend((0..len).map(|_| R::of(rng.gen_range(-bound..bound))));
        self.specs.push(ParamSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
        });
        Slot { offset, len }
    }

    /// Drops every tensor registered at or after `offset`.
    pub(crate) fn truncate(&mut self, offset: usize) {
        self.specs.retain(|s| s.offset < offset);
        self.data.truncate(offset);
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[R]> {
        self.specs
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.data[s.offset..s.offset + s.len()])
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&ParamSpec, &[R])> {
        self.specs.iter().map(|s| (s, &self.data[s.offset..s.offset + s.len()]))
    }

    /// SHA-256 over names, shapes and f32 little-endian values.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for (spec, values) in self.tensors() {
            bytes.extend_from_slice(spec.name.as_bytes());
            for d in &spec.shape {
                bytes.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in values {
                bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        sha256_hex(&bytes)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
