use super::{Conv2d, Dense, LayerState, MaxPool};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};

/// One entry per element: 1 where a ReLU output is active.
pub fn relu_pattern(y: &Tensor, pattern: &mut Vec<u32>) {
    pattern.extend(y.data().iter().map(|&v| u32::from(v > 0.0)));
}

/// A per-frame layer usable inside a [`Sequential`] stack.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    MaxPool(MaxPool),
    Flatten { in_shape: Option<Vec<usize>> },
    Dense(Dense),
}

impl Layer {
    pub fn flatten() -> Self {
        Layer::Flatten { in_shape: None }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv",
            Layer::MaxPool(_) => "pool",
            Layer::Flatten { .. } => "flatten",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn state(&self) -> Option<&LayerState> {
        match self {
            Layer::Conv2d(c) => Some(&c.state),
            Layer::Dense(d) => Some(&d.state),
            _ => None,
        }
    }

    pub fn state_mut(&mut self) -> Option<&mut LayerState> {
        match self {
            Layer::Conv2d(c) => Some(&mut c.state),
            Layer::Dense(d) => Some(&mut d.state),
            _ => None,
        }
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => c.infer(x),
            Layer::MaxPool(p) => p.infer(x),
            Layer::Flatten { .. } => flatten(x),
            Layer::Dense(d) => d.infer(x),
        }
    }

    /// Inference that appends this layer's piecewise-linear branch choices
    /// (ReLU on/off, max-pool argmax) to `pattern`.
    fn infer_with_pattern(&self, x: &Tensor, pattern: &mut Vec<u32>) -> Result<Tensor> {
        match self {
            Layer::MaxPool(p) => {
                let (y, argmax) = p.infer_with_argmax(x)?;
                pattern.extend(argmax);
                Ok(y)
            }
            Layer::Conv2d(Conv2d { activation, .. }) | Layer::Dense(Dense { activation, .. }) => {
                let y = self.infer(x)?;
                if *activation == Activation::Relu {
                    relu_pattern(&y, pattern);
                }
                Ok(y)
            }
            Layer::Flatten { .. } => self.infer(x),
        }
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => c.forward(x),
            Layer::MaxPool(p) => p.forward(x),
            Layer::Flatten { in_shape } => {
                *in_shape = Some(x.shape().to_vec());
                flatten(x)
            }
            Layer::Dense(d) => d.forward(x),
        }
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => c.backward(dy),
            Layer::MaxPool(p) => p.backward(dy),
            Layer::Flatten { in_shape } => {
                let shape = in_shape.take().ok_or_else(|| {
                    Error::Contract("flatten: backward called without a preceding forward".into())
                })?;
                dy.clone().reshape(&shape)
            }
            Layer::Dense(d) => d.backward(dy),
        }
    }
}

fn flatten(x: &Tensor) -> Result<Tensor> {
    let b = x.shape()[0];
    x.clone().reshape(&[b, x.len() / b])
}

/// Layers applied in order.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// [`Sequential::infer`] recording every layer's branch choices.
    pub fn infer_with_pattern(&self, x: &Tensor, pattern: &mut Vec<u32>) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer_with_pattern(&h, pattern)?;
        }
        Ok(h)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut g = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Parameterized layers as `(name, state)`, e.g. `("0.conv", ..)`.
    pub fn states(&self) -> Vec<(String, &LayerState)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.state().map(|s| (format!("{i}.{}", l.kind()), s)))
            .collect()
    }

    pub fn states_mut(&mut self) -> Vec<(String, &mut LayerState)> {
        self.layers
            .iter_mut()
            .enumerate()
            .filter_map(|(i, l)| {
                let kind = l.kind();
                l.state_mut().map(|s| (format!("{i}.{kind}"), s))
            })
            .collect()
    }
}

/// Applies one shared frame network to every frame of a `B×T×H×W×C` clip
/// batch, producing `B×T×F`.
#[derive(Debug, Clone)]
pub struct TimeDistributed {
    pub net: Sequential,
}

impl TimeDistributed {
    pub fn new(net: Sequential) -> Self {
        Self { net }
    }

    fn frames(xs: &Tensor) -> Result<(usize, usize, Tensor)> {
        match *xs.shape() {
            [b, t, h, w, c] => Ok((b, t, xs.clone().reshape(&[b * t, h, w, c])?)),
            ref s => Err(Error::dim(format!(
                "time-distributed input must be B×T×H×W×C, got {s:?}"
            ))),
        }
    }

    fn unframe(b: usize, t: usize, y: Tensor) -> Result<Tensor> {
        if y.rank() != 2 {
            return Err(Error::dim(format!(
                "frame network must map each frame to a vector, got {:?}",
                y.shape()
            )));
        }
        let f = y.shape()[1];
        y.reshape(&[b, t, f])
    }

    pub fn infer(&self, xs: &Tensor) -> Result<Tensor> {
        let (b, t, frames) = Self::frames(xs)?;
        Self::unframe(b, t, self.net.infer(&frames)?)
    }

    pub fn infer_with_pattern(&self, xs: &Tensor, pattern: &mut Vec<u32>) -> Result<Tensor> {
        let (b, t, frames) = Self::frames(xs)?;
        Self::unframe(b, t, self.net.infer_with_pattern(&frames, pattern)?)
    }

    pub fn forward(&mut self, xs: &Tensor) -> Result<Tensor> {
        let (b, t, frames) = Self::frames(xs)?;
        Self::unframe(b, t, self.net.forward(&frames)?)
    }

    /// Parameter gradients are summed over every frame application.
    pub fn backward(&mut self, dys: &Tensor) -> Result<Tensor> {
        let (b, t, f) = match *dys.shape() {
            [b, t, f] => (b, t, f),
            ref s => return Err(Error::dim(format!("expected B×T×F gradient, got {s:?}"))),
        };
        let dframes = self.net.backward(&dys.clone().reshape(&[b * t, f])?)?;
        let mut shape = vec![b, t];
        shape.extend_from_slice(&dframes.shape()[1..]);
        dframes.reshape(&shape)
    }
}
