//! Named parameter storage. Everything is keyed by a stable string name and
//! iterated in sorted order, so optimizer updates and gradient accumulation
//! are deterministic.

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<F: Real> {
    pub shape: Vec<usize>,
    pub values: Vec<F>,
}

/// All trainable tensors of a model, keyed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<F: Real> {
    entries: BTreeMap<String, ParamTensor<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<F>) {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "parameter {name}: shape/value mismatch"
        );
        assert!(
            self.entries
                .insert(name.clone(), ParamTensor { shape, values })
                .is_none(),
            "duplicate parameter name {name}"
        );
    }

    pub fn get(&self, name: &str) -> Result<&ParamTensor<F>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamTensor<F>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamTensor<F>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamTensor<F>)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|t| t.values.len()).sum()
    }

    /// Convert between precisions (used by checkpoint loading and the
    /// finite-difference harness, which always runs in f64).
    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        let mut out = ParamSet::new();
        for (name, t) in &self.entries {
            out.insert(
                name.clone(),
                t.shape.clone(),
                t.values.iter().map(|v| G::from_f64(v.as_f64())).collect(),
            );
        }
        out
    }
}

/// Accumulated gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct GradMap<F: Real> {
    entries: BTreeMap<String, Vec<F>>,
}

impl<F: Real> GradMap<F> {
    pub fn new() -> Self {
        GradMap {
            entries: BTreeMap::new(),
        }
    }

    /// g[name] += grad (allocating on first touch).
    pub fn accumulate(&mut self, name: &str, grad: &[F]) {
        match self.entries.get_mut(name) {
            Some(existing) => {
                assert_eq!(existing.len(), grad.len(), "gradient size drift for {name}");
                for (e, g) in existing.iter_mut().zip(grad) {
                    *e += *g;
                }
            }
            None => {
                self.entries.insert(name.to_string(), grad.to_vec());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&[F]> {
        self.entries.get(name).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<F>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Max |a - b| / max(|a|, |b|, 1e-12) over entries present in either map
    /// (a missing entry counts as zeros).
    pub fn max_rel_err(&self, other: &GradMap<F>) -> f64 {
        let mut worst = 0.0f64;
        let names: std::collections::BTreeSet<&String> =
            self.entries.keys().chain(other.entries.keys()).collect();
        for name in names {
            let zeros;
            let a = match self.get(name) {
                Some(a) => a,
                None => {
                    zeros = vec![F::zero(); other.get(name).map_or(0, |v| v.len())];
                    &zeros
                }
            };
            let zeros2;
            let b = match other.get(name) {
                Some(b) => b,
                None => {
                    zeros2 = vec![F::zero(); a.len()];
                    &zeros2
                }
            };
            for (x, y) in a.iter().zip(b.iter()) {
                worst = worst.max(crate::autodiff::rel_err(x.as_f64(), y.as_f64()));
            }
        }
        worst
    }
}

/// Register one named parameter on a tape. Trainable parameters become
/// leaves (their gradient is collected after backward); frozen ones are
/// constants, which keeps forward-only evaluation off the tape entirely.
pub fn bind_param<F: Real>(
    tape: &mut Tape<F>,
    set: &ParamSet<F>,
    name: &str,
    trainable: bool,
) -> Result<Tensor<F>> {
    let p = set.get(name)?;
    if trainable {
        tape.leaf(p.shape.clone(), p.values.clone())
    } else {
        Ok(Tensor::new(p.shape.clone(), p.values.clone()))
    }
}
