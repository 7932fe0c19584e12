//! Named trainable parameters.
//!
//! A [`ParamStore`] owns every trainable tensor of a model, keyed by a dense
//! [`ParamId`] and a unique dotted name (the name is what checkpoints and
//! error messages use). Graphs bind parameters by copying the current value
//! into a leaf node, so a store can be shared read-only across threads while
//! updates stay serialized at the optimizer.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    /// Register a tensor under a unique name. Panics on duplicate names:
    /// parameter registration is a programming-time concern, not input.
    pub fn register(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !name.contains(char::is_whitespace),
            "parameter name `{name}` contains whitespace"
        );
        assert!(
            self.id_by_name(name).is_none(),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
        });
        id
    }

    pub fn register_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
        self.register(name, Tensor::new(shape.to_vec(), data).expect("valid shape"))
    }

    pub fn register_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.params[id.0].value.shape() {
            return Err(Error::ShapeMismatch {
                op: "param set",
                left: self.params[id.0].value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.params[id.0].value = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    /// Parameters in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p.name.as_str(), &p.value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_lookup() {
        let mut store = ParamStore::new();
        let id = store.register("enc.w_i", Tensor::vector(&[1.0, 2.0]));
        assert_eq!(store.name(id), "enc.w_i");
        assert_eq!(store.id_by_name("enc.w_i"), Some(id));
        assert_eq!(store.get(id).data(), &[1.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(0.0));
        store.register("w", Tensor::scalar(1.0));
    }
}
