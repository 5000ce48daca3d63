//! LSTM cell, unidirectional sequence layer, and the bidirectional wrapper.
//!
//! Gate equations on the concatenation `z = [x_t, h_{t-1}]`:
//!
//! ```text
//! i = σ(z·W_i + b_i)   f = σ(z·W_f + b_f)   g = tanh(z·W_g + b_g)   o = σ(z·W_o + b_o)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```

use super::{init_params, LayerSpec, LayerState};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, sigmoid, Tensor};

/// Gate order for parameter names `w_*` / `b_*`.
pub const GATES: [&str; 4] = ["i", "f", "g", "o"];

const W_NAMES: [&str; 4] = ["w_i", "w_f", "w_g", "w_o"];
const B_NAMES: [&str; 4] = ["b_i", "b_f", "b_g", "b_o"];

/// Everything one step's backward pass needs.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    batch: usize,
    inputs: usize,
    units: usize,
    xh: Vec<f64>,
    /// Activated gates in [`GATES`] order, each `B×U`.
    gates: [Vec<f64>; 4],
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn lstm_dims(state: &LayerState) -> (usize, usize) {
    let w = state.param("w_i").shape();
    let units = w[1];
    (w[0] - units, units)
}

/// One LSTM step on a `B×In` input with `B×U` recurrent state.
pub fn lstm_step(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    state: &LayerState,
) -> Result<(Tensor, Tensor, LstmStepCache)> {
    let (inputs, units) = lstm_dims(state);
    let batch = match *x.shape() {
        [b, i] if i == inputs => b,
        ref s => {
            return Err(Error::dim(format!(
                "lstm step expects B×{inputs} input, got {s:?}"
            )))
        }
    };
    h_prev.expect_shape(&[batch, units])?;
    c_prev.expect_shape(&[batch, units])?;

    let width = inputs + units;
    let mut xh = vec![0.0; batch * width];
    for b in 0..batch {
        xh[b * width..b * width + inputs].copy_from_slice(&x.data()[b * inputs..(b + 1) * inputs]);
        xh[b * width + inputs..(b + 1) * width]
            .copy_from_slice(&h_prev.data()[b * units..(b + 1) * units]);
    }

    let gates: [Vec<f64>; 4] = std::array::from_fn(|gi| {
        let bias = state.param(B_NAMES[gi]).data();
        let mut z: Vec<f64> = bias.iter().copied().cycle().take(batch * units).collect();
        gemm(
            batch,
            width,
            units,
            1.0,
            &xh,
            false,
            state.param(W_NAMES[gi]).data(),
            false,
            1.0,
            &mut z,
        );
        if GATES[gi] == "g" {
            z.iter_mut().for_each(|v| *v = v.tanh());
        } else {
            z.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        z
    });

    let [i, f, g, o] = &gates;
    let mut c = vec![0.0; batch * units];
    let mut tanh_c = vec![0.0; batch * units];
    let mut h = vec![0.0; batch * units];
    for k in 0..batch * units {
        c[k] = f[k] * c_prev.data()[k] + i[k] * g[k];
        tanh_c[k] = c[k].tanh();
        h[k] = o[k] * tanh_c[k];
    }
    let cache = LstmStepCache {
        batch,
        inputs,
        units,
        xh,
        gates,
        c_prev: c_prev.data().to_vec(),
        tanh_c,
    };
    Ok((
        Tensor::new(&[batch, units], h)?,
        Tensor::new(&[batch, units], c)?,
        cache,
    ))
}

/// Backward of [`lstm_step`]. Accumulates all eight parameter gradients into
/// `state` and returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_step_backward(
    state: &mut LayerState,
    cache: LstmStepCache,
    dh: &Tensor,
    dc: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let LstmStepCache {
        batch,
        inputs,
        units,
        xh,
        gates,
        c_prev,
        tanh_c,
    } = cache;
    dh.expect_shape(&[batch, units])?;
    dc.expect_shape(&[batch, units])?;
    let [i, f, g, o] = &gates;
    let n = batch * units;

    let mut dz: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    let mut dc_prev = vec![0.0; n];
    for k in 0..n {
        let dhk = dh.data()[k];
        let dct = dc.data()[k] + dhk * o[k] * (1.0 - tanh_c[k] * tanh_c[k]);
        let d_o = dhk * tanh_c[k];
        let d_f = dct * c_prev[k];
        let d_i = dct * g[k];
        let d_g = dct * i[k];
        dc_prev[k] = dct * f[k];
        dz[0][k] = d_i * i[k] * (1.0 - i[k]);
        dz[1][k] = d_f * f[k] * (1.0 - f[k]);
        dz[2][k] = d_g * (1.0 - g[k] * g[k]);
        dz[3][k] = d_o * o[k] * (1.0 - o[k]);
    }

    let width = inputs + units;
    let mut dxh = vec![0.0; batch * width];
    for (gi, dzg) in dz.iter().enumerate() {
        let (w, gw) = state.param_and_grad_mut(W_NAMES[gi]);
        gemm(
            width,
            batch,
            units,
            1.0,
            &xh,
            true,
            dzg,
            false,
            1.0,
            gw.data_mut(),
        );
        gemm(
            batch,
            units,
            width,
            1.0,
            dzg,
            false,
            w.data(),
            true,
            1.0,
            &mut dxh,
        );
        let gb = state.grad_mut(B_NAMES[gi]).data_mut();
        for row in dzg.chunks(units) {
            for (acc, v) in gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }

    let mut dx = Vec::with_capacity(batch * inputs);
    let mut dh_prev = Vec::with_capacity(n);
    for row in dxh.chunks(width) {
        dx.extend_from_slice(&row[..inputs]);
        dh_prev.extend_from_slice(&row[inputs..]);
    }
    Ok((
        Tensor::new(&[batch, inputs], dx)?,
        Tensor::new(&[batch, units], dh_prev)?,
        Tensor::new(&[batch, units], dc_prev)?,
    ))
}

/// Copies timestep `t` of a `B×T×D` tensor into a `B×D` matrix.
fn time_slice(xs: &Tensor, t: usize) -> Tensor {
    let (b, steps, d) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
    let mut out = Vec::with_capacity(b * d);
    for bi in 0..b {
        out.extend_from_slice(&xs.data()[(bi * steps + t) * d..][..d]);
    }
    Tensor::new(&[b, d], out).expect("slice shape")
}

fn write_time_slice(xs: &mut Tensor, t: usize, v: &Tensor) {
    let (b, steps, d) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
    for bi in 0..b {
        xs.data_mut()[(bi * steps + t) * d..][..d].copy_from_slice(&v.data()[bi * d..][..d]);
    }
}

/// Reverses the time axis of a `B×T×D` tensor.
pub fn reverse_time(xs: &Tensor) -> Tensor {
    let (b, steps, d) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
    let mut out = Vec::with_capacity(xs.len());
    for bi in 0..b {
        for t in (0..steps).rev() {
            out.extend_from_slice(&xs.data()[(bi * steps + t) * d..][..d]);
        }
    }
    Tensor::new(xs.shape(), out).expect("same shape")
}

/// Concatenates two `B×T×D` tensors along the feature axis.
pub(crate) fn concat_features(a: &Tensor, b: &Tensor) -> Tensor {
    let (da, db) = (a.shape()[2], b.shape()[2]);
    let rows = a.len() / da;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for r in 0..rows {
        out.extend_from_slice(&a.data()[r * da..][..da]);
        out.extend_from_slice(&b.data()[r * db..][..db]);
    }
    Tensor::new(&[a.shape()[0], a.shape()[1], da + db], out).expect("concat shape")
}

fn split_features(x: &Tensor, left: usize) -> (Tensor, Tensor) {
    let d = x.shape()[2];
    let rows = x.len() / d;
    let mut a = Vec::with_capacity(rows * left);
    let mut b = Vec::with_capacity(rows * (d - left));
    for row in x.data().chunks(d) {
        a.extend_from_slice(&row[..left]);
        b.extend_from_slice(&row[left..]);
    }
    let (bs, t) = (x.shape()[0], x.shape()[1]);
    (
        Tensor::new(&[bs, t, left], a).expect("split"),
        Tensor::new(&[bs, t, d - left], b).expect("split"),
    )
}

/// Unidirectional LSTM returning the full hidden sequence `B×T×U`, starting
/// from zero state.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub state: LayerState,
}

impl Lstm {
    pub fn new(inputs: usize, units: usize, rng: &mut Rng) -> Self {
        Self {
            state: init_params(&LayerSpec::Lstm { inputs, units }, rng),
        }
    }

    pub fn units(&self) -> usize {
        lstm_dims(&self.state).1
    }

    pub fn inputs(&self) -> usize {
        lstm_dims(&self.state).0
    }

    fn run(&self, xs: &Tensor, keep: bool) -> Result<(Tensor, Vec<LstmStepCache>)> {
        let (b, steps) = match *xs.shape() {
            [b, t, _] if t >= 1 => (b, t),
            ref s => {
                return Err(Error::dim(format!(
                    "lstm expects B×T×In input with T ≥ 1, got {s:?}"
                )))
            }
        };
        let units = self.units();
        let mut h = Tensor::zeros(&[b, units]);
        let mut c = Tensor::zeros(&[b, units]);
        let mut hs = Tensor::zeros(&[b, steps, units]);
        let mut caches = Vec::new();
        for t in 0..steps {
            let (h_next, c_next, cache) = lstm_step(&time_slice(xs, t), &h, &c, &self.state)?;
            write_time_slice(&mut hs, t, &h_next);
            if keep {
                caches.push(cache);
            }
            h = h_next;
            c = c_next;
        }
        Ok((hs, caches))
    }

    pub fn infer(&self, xs: &Tensor) -> Result<Tensor> {
        self.run(xs, false).map(|(hs, _)| hs)
    }

    pub fn forward(&mut self, xs: &Tensor) -> Result<Tensor> {
        let (hs, caches) = self.run(xs, true)?;
        self.state.put_cache(caches);
        Ok(hs)
    }

    /// Backpropagation through time from per-step hidden-state gradients.
    pub fn backward(&mut self, dhs: &Tensor) -> Result<Tensor> {
        let mut caches: Vec<LstmStepCache> = self.state.take_cache("lstm")?;
        let (inputs, units) = (self.inputs(), self.units());
        let steps = caches.len();
        let b = dhs.shape()[0];
        dhs.expect_shape(&[b, steps, units])?;
        let mut dxs = Tensor::zeros(&[b, steps, inputs]);
        let mut dh_next = Tensor::zeros(&[b, units]);
        let mut dc_next = Tensor::zeros(&[b, units]);
        for t in (0..steps).rev() {
            let cache = caches.pop().expect("one cache per step");
            let dh = time_slice(dhs, t).add(&dh_next)?;
            let (dx, dh_prev, dc_prev) = lstm_step_backward(&mut self.state, cache, &dh, &dc_next)?;
            write_time_slice(&mut dxs, t, &dx);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(dxs)
    }
}

/// Forward and reverse LSTMs over the same sequence; per-timestep outputs are
/// `[h_fwd_t, h_bwd_t]`, both aligned to the original time order.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new(inputs: usize, units: usize, rng: &mut Rng) -> Self {
        let fwd = Lstm::new(inputs, units, rng);
        let bwd = Lstm::new(inputs, units, rng);
        Self { fwd, bwd }
    }

    pub fn units(&self) -> usize {
        self.fwd.units()
    }

    pub fn infer(&self, xs: &Tensor) -> Result<Tensor> {
        let f = self.fwd.infer(xs)?;
        let b = self.bwd.infer(&reverse_time(xs))?;
        Ok(concat_features(&f, &reverse_time(&b)))
    }

    pub fn forward(&mut self, xs: &Tensor) -> Result<Tensor> {
        let f = self.fwd.forward(xs)?;
        let b = self.bwd.forward(&reverse_time(xs))?;
        Ok(concat_features(&f, &reverse_time(&b)))
    }

    pub fn backward(&mut self, dys: &Tensor) -> Result<Tensor> {
        let (df, db) = split_features(dys, self.fwd.units());
        let dx_f = self.fwd.backward(&df)?;
        let dx_b = self.bwd.backward(&reverse_time(&db))?;
        dx_f.add(&reverse_time(&dx_b))
    }
}
