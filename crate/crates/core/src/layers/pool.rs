use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct PoolCache {
    in_shape: Vec<usize>,
    argmax: Vec<u32>,
}

/// Max pooling over NHWC inputs without padding. The gradient of each window
/// goes to its first (row-major) maximum.
#[derive(Debug, Clone)]
pub struct MaxPool {
    pub window: usize,
    pub stride: usize,
    cache: Option<PoolCache>,
}

impl MaxPool {
    pub fn new(window: usize, stride: usize) -> Self {
        Self {
            window,
            stride,
            cache: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::dim("maxpool window and stride must be positive"));
        }
        if self.window > h || self.window > w {
            return Err(Error::dim(format!(
                "maxpool window {} larger than input {h}×{w}",
                self.window
            )));
        }
        Ok((
            (h - self.window) / self.stride + 1,
            (w - self.window) / self.stride + 1,
        ))
    }

    fn run(&self, x: &Tensor) -> Result<(Tensor, Vec<u32>)> {
        let (n, h, w, c) = match *x.shape() {
            [n, h, w, c] => (n, h, w, c),
            ref s => {
                return Err(Error::dim(format!(
                    "maxpool expects B×H×W×C input, got {s:?}"
                )))
            }
        };
        let (oh, ow) = self.output_hw(h, w)?;
        let xd = x.data();
        let mut y = Vec::with_capacity(n * oh * ow * c);
        let mut argmax = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            let base = b * h * w * c;
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for ki in 0..self.window {
                            let iy = oy * self.stride + ki;
                            for kj in 0..self.window {
                                let ix = ox * self.stride + kj;
                                let idx = base + (iy * w + ix) * c + ch;
                                if best_idx == usize::MAX || xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        y.push(best);
                        argmax.push((best_idx - base) as u32);
                    }
                }
            }
        }
        Ok((Tensor::new(&[n, oh, ow, c], y)?, argmax))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x).map(|(y, _)| y)
    }

    /// Inference that also reports the flat in-image index each output took.
    pub fn infer_with_argmax(&self, x: &Tensor) -> Result<(Tensor, Vec<u32>)> {
        self.run(x)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, argmax) = self.run(x)?;
        self.cache = Some(PoolCache {
            in_shape: x.shape().to_vec(),
            argmax,
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::Contract("maxpool: backward called without a preceding forward".into())
        })?;
        if dy.len() != cache.argmax.len() {
            return Err(Error::dim(format!(
                "maxpool backward: gradient shape {:?} does not match forward output",
                dy.shape()
            )));
        }
        let n = cache.in_shape[0];
        let per_in: usize = cache.in_shape[1..].iter().product();
        let per_out = dy.len() / n;
        let mut dx = vec![0.0; n * per_in];
        for b in 0..n {
            let dxb = &mut dx[b * per_in..(b + 1) * per_in];
            for (g, &i) in dy.data()[b * per_out..(b + 1) * per_out]
                .iter()
                .zip(&cache.argmax[b * per_out..(b + 1) * per_out])
            {
                dxb[i as usize] += g;
            }
        }
        Tensor::new(&cache.in_shape, dx)
    }
}
