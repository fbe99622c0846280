//! Named parameter tensors and their binding into a graph.

use std::collections::BTreeMap;

use sepflow_tensor::{Grads, Graph, Real, Tensor, Var};

use crate::{Error, Result};

/// Ordered collection of named tensors. Order is insertion order and is the
/// order used by the optimizer and the checkpoint payload.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<F> {
    entries: Vec<(String, Tensor<F>)>,
    index: BTreeMap<String, usize>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::Contract(format!("unknown parameter {name}"))),
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.entries.iter_mut().map(|(_, t)| t).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            index: self.index.clone(),
        }
    }
}

/// Lazily creates one graph leaf per parameter used in a forward pass.
pub struct Binder<'a, F> {
    store: &'a ParamStore<F>,
    vars: Vec<Option<Var>>,
    track: bool,
}

impl<'a, F: Real> Binder<'a, F> {
    /// `track = false` binds parameters as constants (inference).
    pub fn new(store: &'a ParamStore<F>, track: bool) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
            track,
        }
    }

    pub fn store(&self) -> &'a ParamStore<F> {
        self.store
    }

    pub fn var(&mut self, g: &mut Graph<F>, name: &str) -> Result<Var> {
        let i = self
            .store
            .position(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        if let Some(v) = self.vars[i] {
            return Ok(v);
        }
        let t = self.store.entries[i].1.clone();
        let v = if self.track { g.param(t) } else { g.constant(t) };
        self.vars[i] = Some(v);
        Ok(v)
    }

    pub fn bound(&self, name: &str) -> Option<Var> {
        self.store.position(name).and_then(|i| self.vars[i])
    }

    /// Gradients in store order; parameters untouched by the pass get zeros.
    pub fn collect_grads(&self, grads: &Grads<F>) -> Vec<Tensor<F>> {
        self.store
            .tensors()
            .zip(&self.vars)
            .map(|(t, v)| {
                v.and_then(|v| grads.get(v).cloned())
                    .map(|mut g| {
                        g.requires_grad = false;
                        g
                    })
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::zeros(1, 1)).unwrap();
        assert!(s.insert("a", Tensor::zeros(1, 1)).is_err());
        assert!(s.get("b").is_err());
    }

    #[test]
    fn binder_reuses_leaf() {
        let mut s = ParamStore::<f64>::new();
        s.insert("w", Tensor::full(1, 2, 3.0)).unwrap();
        s.insert("unused", Tensor::zeros(2, 2)).unwrap();
        let mut g = Graph::new();
        let mut b = Binder::new(&s, true);
        let v1 = b.var(&mut g, "w").unwrap();
        let v2 = b.var(&mut g, "w").unwrap();
        assert_eq!(v1, v2);
        let y = g.add(v1, v2).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        let all = b.collect_grads(&grads);
        assert_eq!(all[0], Tensor::full(1, 2, 2.0));
        assert_eq!(all[1], Tensor::zeros(2, 2));
    }
}
