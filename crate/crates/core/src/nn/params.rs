use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// Named learnable arrays of one model, in declaration order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn values(&self) -> Vec<Tensor<T>> {
        self.entries.values().cloned().collect()
    }

    /// Same names and shapes, new values (in declaration order).
    pub fn with_values(&self, values: Vec<Tensor<T>>) -> Result<Self> {
        if values.len() != self.entries.len() {
            return Err(Error::Contract(format!(
                "{} values for {} parameters",
                values.len(),
                self.entries.len()
            )));
        }
        let mut entries = IndexMap::new();
        for ((name, old), new) in self.entries.iter().zip(values) {
            if old.shape() != new.shape() {
                return Err(Error::Shape {
                    op: "with_values",
                    lhs: old.shape().to_vec(),
                    rhs: new.shape().to_vec(),
                });
            }
            entries.insert(name.clone(), new);
        }
        Ok(Self { entries })
    }

    /// Puts every parameter on `tape`; frozen bindings never receive gradients.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        let vars = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
            .collect();
        Bound { vars }
    }

    /// Binds externally created vars, e.g. from a gradient check.
    pub fn bind_vars<'t>(&self, vars: &[Var<'t, T>]) -> Result<Bound<'t, T>> {
        if vars.len() != self.entries.len() {
            return Err(Error::Contract("bind_vars: wrong number of vars".into()));
        }
        Ok(Bound {
            vars: self.entries.keys().cloned().zip(vars.iter().copied()).collect(),
        })
    }

    /// SHA-256 over names, shapes and value bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_f64_lossless().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Parameters of one model as tape vars for a single forward pass.
pub struct Bound<'t, T: Scalar> {
    vars: IndexMap<String, Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unbound parameter `{name}`")))
    }

    /// Gradient per parameter in declaration order; zeros where the loss
    /// does not reach a parameter.
    pub fn gradients(&self, grads: &Gradients<T>) -> Vec<(String, Tensor<T>)> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(&v.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Uniform in ±`bound`, drawn in f64 so f32 and f64 models share initial values.
pub fn uniform_tensor<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Uniform::new_inclusive(-bound, bound);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Glorot-uniform weight `[fan_in×fan_out]` and zero bias.
pub fn init_linear<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    store.insert(format!("{prefix}.weight"), uniform_tensor(&[fan_in, fan_out], bound, rng));
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]));
}

/// Gain applied to output heads so initial predictions are close to uniform.
pub const HEAD_GAIN: f64 = 0.1;

/// Glorot-uniform layer scaled by [`HEAD_GAIN`], for classifier heads.
pub fn init_head<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) {
    let bound = HEAD_GAIN * (6.0 / (fan_in + fan_out) as f64).sqrt();
    store.insert(format!("{prefix}.weight"), uniform_tensor(&[fan_in, fan_out], bound, rng));
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]));
}
