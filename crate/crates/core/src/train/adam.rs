use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, keyed by position in the store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Result<Self> {
        if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::Config(format!("invalid Adam hyper-parameters {config:?}")));
        }
        let zeros: Vec<_> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Ok(Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    /// One bias-corrected Adam update. `grads` must follow the store's order.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[(String, Tensor<T>)]) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFinite { param: name.clone() });
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let lr_t = c.lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let (lr_t, eps_hat) = (T::of(lr_t), T::of(c.eps * (1.0 - c.beta2.powi(t)).sqrt()));
        for (i, ((name, p), (gname, g))) in params.iter_mut().zip(grads).enumerate() {
            if name != gname || p.shape() != g.shape() {
                return Err(Error::Contract(format!("adam: gradient `{gname}` does not match `{name}`")));
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= lr_t * *m / (v.sqrt() + eps_hat);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::from_f64(&[1], &[x]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(1.5);
        let mut st = AdamState::new(AdamConfig::default(), &p).unwrap();
        for _ in 0..5 {
            st.step(&mut p, &[("x".into(), Tensor::zeros(&[1]))]).unwrap();
        }
        assert_eq!(p.get("x").unwrap().data(), &[1.5]);
    }

    #[test]
    fn minimizes_square() {
        let run = || {
            let mut p = store(1.0);
            let cfg = AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            };
            let mut st = AdamState::new(cfg, &p).unwrap();
            for _ in 0..200 {
                let x = p.get("x").unwrap().data()[0];
                st.step(&mut p, &[("x".into(), Tensor::from_f64(&[1], &[2.0 * x]).unwrap())])
                    .unwrap();
            }
            p.get("x").unwrap().data()[0]
        };
        let x = run();
        assert!(x.abs() < 1e-3, "{x}");
        assert_eq!(x.to_bits(), run().to_bits());
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = store(0.0);
        let mut st = AdamState::new(AdamConfig::default(), &p).unwrap();
        let err = st
            .step(&mut p, &[("x".into(), Tensor::from_f64(&[1], &[f64::NAN]).unwrap())])
            .unwrap_err();
        assert!(err.to_string().contains("`x`"));
    }
}
