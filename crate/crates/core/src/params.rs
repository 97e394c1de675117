//! Named parameter traversal shared by checkpoints, optimisers and the
//! gradient checker.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A set of named tensors with a stable, canonical order.
pub trait Parameters {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>);

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Same layout with every entry zero.
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for (_, t) in z.named_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    /// Copies tensors from `(name, tensor)` pairs; names and shapes must
    /// match this set exactly.
    fn load_from(&mut self, loaded: &[(String, Tensor)]) -> Result<()> {
        let mut slots = self.named_mut();
        if slots.len() != loaded.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                slots.len(),
                loaded.len()
            )));
        }
        for ((name, slot), (lname, t)) in slots.iter_mut().zip(loaded) {
            if name != lname {
                return Err(Error::invalid(format!("expected {name}, found {lname}")));
            }
            if slot.shape() != t.shape() {
                return Err(Error::shape("load_from", slot.shape(), t.shape()));
            }
            **slot = t.clone();
        }
        Ok(())
    }
}

impl Parameters for Tensor {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}x"), self));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}x"), self));
    }
}
