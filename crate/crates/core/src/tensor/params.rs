use std::collections::HashMap;

use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Uniform initialisation in `[-s, s]` with `s = sqrt(6 / fan_in)`.
pub fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let s = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-s..=s)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Ordered, named collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name; parameter layouts are static.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Little-endian dump of every value, in order. Used for byte-exact
    /// freeze comparisons.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    /// Replaces values from `other`, which must have the same names and shapes.
    pub fn assign_from(&mut self, other: &ParamSet) -> Result<()> {
        for (name, t) in other.iter() {
            let dst = self.get_mut(name).ok_or_else(|| {
                Error::Config(format!("unexpected parameter `{name}`"))
            })?;
            if dst.shape() != t.shape() {
                return Err(Error::Shape {
                    name: name.to_string(),
                    expected: dst.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            *dst = t.clone();
        }
        Ok(())
    }

    /// Records every tensor as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| g.param(t.clone())).collect();
        Bound { set: self, vars }
    }

    /// Records every tensor as a constant (frozen / inference).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| g.constant(t.clone())).collect();
        Bound { set: self, vars }
    }

    /// Pairs existing graph variables with this set's names, in order.
    /// Lets callers such as gradient checks own the leaves.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<Bound<'_>> {
        if vars.len() != self.tensors.len() {
            return Err(Error::Dimension(format!(
                "{} variables for {} parameters",
                vars.len(),
                self.tensors.len()
            )));
        }
        Ok(Bound { set: self, vars })
    }
}

/// A [`ParamSet`] recorded on a graph.
pub struct Bound<'a> {
    set: &'a ParamSet,
    vars: Vec<Var>,
}

impl Bound<'_> {
    /// Panics on an unknown name: model code and parameter layout are built
    /// from the same config.
    pub fn get(&self, name: &str) -> Var {
        let i = *self
            .set
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i]
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.set.index.get(name).map(|&i| self.vars[i])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients after backward, zero-filled where a parameter was unreachable.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(self.set.tensors())
            .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_bounded_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let t1 = init_uniform(&[16, 24], 24, &mut a);
        let t2 = init_uniform(&[16, 24], 24, &mut b);
        assert_eq!(t1, t2);
        let s = (6.0f64 / 24.0).sqrt();
        assert!(t1.data().iter().all(|v| v.abs() <= s));
    }

    #[test]
    fn assign_checks_shapes() {
        let mut a = ParamSet::new();
        a.insert("w", Tensor::zeros([2, 2]));
        let mut b = ParamSet::new();
        b.insert("w", Tensor::zeros([3]));
        assert!(matches!(a.assign_from(&b), Err(Error::Shape { .. })));
    }
}
