use super::{init_params, LayerSpec, LayerState};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, Activation, Tensor};

struct DenseCache {
    x: Tensor,
    y: Tensor,
}

/// Fully connected layer `y = f(x·W + b)` on `B×In` inputs.
#[derive(Debug, Clone)]
pub struct Dense {
    pub activation: Activation,
    pub state: LayerState,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        Self::from_state(
            init_params(&LayerSpec::Dense { inputs, outputs }, rng),
            activation,
        )
    }

    pub fn from_state(state: LayerState, activation: Activation) -> Self {
        Self { activation, state }
    }

    pub fn inputs(&self) -> usize {
        self.state.param("w").shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.state.param("w").shape()[1]
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, inputs) = match x.shape() {
            &[r, c] => (r, c),
            s => return Err(Error::dim(format!("dense expects B×In input, got {s:?}"))),
        };
        if inputs != self.inputs() {
            return Err(Error::dim(format!(
                "dense expects {} input features, got shape {:?}",
                self.inputs(),
                x.shape()
            )));
        }
        let out = self.outputs();
        let bias = self.state.param("b").data();
        let mut y: Vec<f64> = bias.iter().copied().cycle().take(rows * out).collect();
        gemm(
            rows,
            inputs,
            out,
            1.0,
            x.data(),
            false,
            self.state.param("w").data(),
            false,
            1.0,
            &mut y,
        );
        if self.activation != Activation::Identity {
            let f = self.activation;
            y.iter_mut().for_each(|v| *v = f.apply(*v));
        }
        Tensor::new(&[rows, out], y)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.state.put_cache(DenseCache {
            x: x.clone(),
            y: y.clone(),
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let DenseCache { x, y } = self.state.take_cache("dense")?;
        dy.expect_shape(y.shape())?;
        let (rows, inputs, out) = (x.shape()[0], self.inputs(), self.outputs());
        let f = self.activation;
        let dz: Vec<f64> = dy
            .data()
            .iter()
            .zip(y.data())
            .map(|(&g, &yv)| g * f.derivative_from_output(yv))
            .collect();

        gemm(
            inputs,
            rows,
            out,
            1.0,
            x.data(),
            true,
            &dz,
            false,
            1.0,
            self.state.grad_mut("w").data_mut(),
        );
        let db = self.state.grad_mut("b").data_mut();
        for row in dz.chunks(out) {
            for (acc, g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        let mut dx = vec![0.0; rows * inputs];
        gemm(
            rows,
            out,
            inputs,
            1.0,
            &dz,
            false,
            self.state.param("w").data(),
            true,
            0.0,
            &mut dx,
        );
        Tensor::new(&[rows, inputs], dx)
    }
}
