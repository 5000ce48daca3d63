//! Neural layers with hand-written backward passes.
//!
//! Every layer follows the same protocol: `forward` stores a cache in the
//! layer's [`LayerState`], `backward` consumes it (exactly once), accumulates
//! parameter gradients into the state, and returns the input gradient.
//! `infer` runs the same arithmetic without touching any state.

use std::any::Any;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

mod attention;
mod conv;
mod dense;
mod dropout;
mod lstm;
mod pool;
mod sequential;

pub use attention::{Attention, AttentionOutput, NormMode};
pub use conv::{Conv2d, Padding};
pub use dense::Dense;
pub use dropout::Dropout;
pub use lstm::{lstm_step, lstm_step_backward, BiLstm, Lstm, LstmStepCache, GATES};
pub use pool::MaxPool;
pub use sequential::{relu_pattern, Layer, Sequential, TimeDistributed};

/// Named parameters, matching gradient slots, and the pending forward cache.
#[derive(Default)]
pub struct LayerState {
    params: IndexMap<String, Tensor>,
    grads: IndexMap<String, Tensor>,
    cache: Option<Box<dyn Any + Send + Sync>>,
    has_grads: bool,
}

impl Clone for LayerState {
    /// Clones parameters and gradients; a pending cache is not carried over.
    fn clone(&self) -> Self {
        Self {
            params: self.params.clone(),
            grads: self.grads.clone(),
            cache: None,
            has_grads: self.has_grads,
        }
    }
}

impl std::fmt::Debug for LayerState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.params.iter().map(|(k, v)| (k, v.shape())))
            .finish()
    }
}

impl LayerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: &str, value: Tensor) {
        self.grads
            .insert(name.to_string(), Tensor::zeros(value.shape()));
        self.params.insert(name.to_string(), value);
    }

    pub fn param(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named `{name}`"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Tensor {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("no parameter named `{name}`"))
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        self.grads
            .get(name)
            .unwrap_or_else(|| panic!("no gradient named `{name}`"))
    }

    /// Mutable gradient slot; marks the state as holding gradients.
    pub fn grad_mut(&mut self, name: &str) -> &mut Tensor {
        self.has_grads = true;
        self.grads
            .get_mut(name)
            .unwrap_or_else(|| panic!("no gradient named `{name}`"))
    }

    /// Borrow a parameter and its gradient slot at the same time.
    pub(crate) fn param_and_grad_mut(&mut self, name: &str) -> (&Tensor, &mut Tensor) {
        self.has_grads = true;
        let p = &self.params[name];
        let g = self
            .grads
            .get_mut(name)
            .unwrap_or_else(|| panic!("no gradient named `{name}`"));
        (p, g)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn grads(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_and_grads_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &Tensor)> {
        self.params
            .iter_mut()
            .zip(self.grads.values())
            .map(|((k, p), g)| (k.as_str(), p, g))
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// True once any backward pass has written gradients since the last
    /// [`LayerState::zero_grads`].
    pub fn has_grads(&self) -> bool {
        self.has_grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.values_mut().for_each(|g| g.fill(0.0));
        self.has_grads = false;
    }

    pub fn put_cache<C: Any + Send + Sync>(&mut self, cache: C) {
        self.cache = Some(Box::new(cache));
    }

    pub fn take_cache<C: Any + Send + Sync>(&mut self, layer: &str) -> Result<C> {
        let boxed = self.cache.take().ok_or_else(|| {
            Error::Contract(format!(
                "{layer}: backward called without a preceding forward"
            ))
        })?;
        boxed.downcast::<C>().map(|b| *b).map_err(|_| {
            Error::Contract(format!("{layer}: cache belongs to a different layer kind"))
        })
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Shape description of a parameterized layer, used for initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        kernel: usize,
        in_channels: usize,
        filters: usize,
    },
    Lstm {
        inputs: usize,
        units: usize,
    },
    Attention {
        dim: usize,
    },
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-limit, limit)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// Glorot-uniform weights, zero biases, forget-gate bias 1.
pub fn init_params(spec: &LayerSpec, rng: &mut Rng) -> LayerState {
    let mut state = LayerState::new();
    match *spec {
        LayerSpec::Dense { inputs, outputs } => {
            state.insert_param("w", glorot(&[inputs, outputs], inputs, outputs, rng));
            state.insert_param("b", Tensor::zeros(&[outputs]));
        }
        LayerSpec::Conv2d {
            kernel,
            in_channels,
            filters,
        } => {
            let area = kernel * kernel;
            state.insert_param(
                "kernel",
                glorot(
                    &[kernel, kernel, in_channels, filters],
                    area * in_channels,
                    area * filters,
                    rng,
                ),
            );
            state.insert_param("bias", Tensor::zeros(&[filters]));
        }
        LayerSpec::Lstm { inputs, units } => {
            for gate in GATES {
                state.insert_param(
                    &format!("w_{gate}"),
                    glorot(&[inputs + units, units], inputs + units, units, rng),
                );
            }
            for gate in GATES {
                let fill = if gate == "f" { 1.0 } else { 0.0 };
                state.insert_param(&format!("b_{gate}"), Tensor::full(&[units], fill));
            }
        }
        LayerSpec::Attention { dim } => {
            state.insert_param("w", glorot(&[dim], dim, 1, rng));
            state.insert_param("b", Tensor::zeros(&[1]));
        }
    }
    state
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_init_bound() {
        let mut rng = Rng::new(0);
        let s = init_params(
            &LayerSpec::Dense {
                inputs: 4,
                outputs: 4,
            },
            &mut rng,
        );
        let limit = (6.0f64 / 8.0).sqrt();
        assert!(s.param("w").data().iter().all(|w| w.abs() <= limit));
        assert!(s.param("b").data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let spec = LayerSpec::Lstm {
            inputs: 5,
            units: 3,
        };
        let a = init_params(&spec, &mut Rng::new(11));
        let b = init_params(&spec, &mut Rng::new(11));
        for ((_, x), (_, y)) in a.params().zip(b.params()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn init_mean_near_zero() {
        let mut rng = Rng::new(4);
        let s = init_params(
            &LayerSpec::Dense {
                inputs: 100,
                outputs: 100,
            },
            &mut rng,
        );
        let w = s.param("w");
        assert_eq!(w.len(), 10_000);
        assert!((w.sum() / w.len() as f64).abs() < 0.01);
    }

    #[test]
    fn lstm_forget_bias_is_one() {
        let s = init_params(
            &LayerSpec::Lstm {
                inputs: 2,
                units: 3,
            },
            &mut Rng::new(0),
        );
        assert!(s.param("b_f").data().iter().all(|&v| v == 1.0));
        assert!(s.param("b_i").data().iter().all(|&v| v == 0.0));
        assert_eq!(s.params().count(), 8);
    }

    #[test]
    fn grads_mirror_params() {
        let s = init_params(
            &LayerSpec::Conv2d {
                kernel: 3,
                in_channels: 2,
                filters: 4,
            },
            &mut Rng::new(0),
        );
        for ((pk, p), (gk, g)) in s.params().zip(s.grads()) {
            assert_eq!(pk, gk);
            assert_eq!(p.shape(), g.shape());
        }
    }

    #[test]
    fn take_cache_without_forward_is_contract_error() {
        let mut s = LayerState::new();
        assert!(matches!(s.take_cache::<u32>("x"), Err(Error::Contract(_))));
        s.put_cache(5u32);
        assert_eq!(s.take_cache::<u32>("x").unwrap(), 5);
        assert!(s.take_cache::<u32>("x").is_err());
    }
}
