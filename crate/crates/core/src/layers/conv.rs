use rayon::prelude::*;

use super::{init_params, LayerSpec, LayerState};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, Activation, Tensor};

/// Images per parallel work unit. Fixed so the order of gradient
/// reduction, and therefore every bit of the result, does not depend on
/// the number of worker threads.
const IMAGES_PER_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    f: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn in_len(&self) -> usize {
        self.h * self.w * self.c
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    fn patch(&self) -> usize {
        self.k * self.k * self.c
    }

    /// Unfolds one NHWC image into a `(oh·ow) × (k·k·c)` patch matrix.
    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let patch = self.patch();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut cols[(oy * self.ow + ox) * patch..][..patch];
                for ki in 0..self.k {
                    let iy = (oy * self.stride + ki) as isize - self.pad_top as isize;
                    for kj in 0..self.k {
                        let ix = (ox * self.stride + kj) as isize - self.pad_left as isize;
                        let dst = &mut row[(ki * self.k + kj) * self.c..][..self.c];
                        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
                            dst.fill(0.0);
                        } else {
                            let src = (iy as usize * self.w + ix as usize) * self.c;
                            dst.copy_from_slice(&img[src..src + self.c]);
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters patch gradients back onto the image.
    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let patch = self.patch();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &cols[(oy * self.ow + ox) * patch..][..patch];
                for ki in 0..self.k {
                    let iy = (oy * self.stride + ki) as isize - self.pad_top as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kj in 0..self.k {
                        let ix = (ox * self.stride + kj) as isize - self.pad_left as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let dst = (iy as usize * self.w + ix as usize) * self.c;
                        let src = &row[(ki * self.k + kj) * self.c..][..self.c];
                        for (d, s) in img[dst..dst + self.c].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

struct ConvCache {
    x: Tensor,
    y: Tensor,
}

/// 2-D cross-correlation over NHWC batches with kernels laid out `k×k×C×F`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub stride: usize,
    pub padding: Padding,
    pub activation: Activation,
    pub state: LayerState,
}

impl Conv2d {
    pub fn new(
        kernel: usize,
        in_channels: usize,
        filters: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let spec = LayerSpec::Conv2d {
            kernel,
            in_channels,
            filters,
        };
        Self::from_state(init_params(&spec, rng), stride, padding, activation)
    }

    pub fn from_state(
        state: LayerState,
        stride: usize,
        padding: Padding,
        activation: Activation,
    ) -> Self {
        Self {
            stride,
            padding,
            activation,
            state,
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.state.param("kernel").shape()[0]
    }

    pub fn filters(&self) -> usize {
        self.state.param("kernel").shape()[3]
    }

    /// Output `(H', W')` for an `H×W` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let c = self.state.param("kernel").shape()[2];
        let g = self.geometry(&[1, h, w, c])?;
        Ok((g.oh, g.ow))
    }

    fn geometry(&self, shape: &[usize]) -> Result<Geometry> {
        let kshape = self.state.param("kernel").shape();
        let (k, kc, f) = (kshape[0], kshape[2], kshape[3]);
        let (h, w, c) = match *shape {
            [_, h, w, c] => (h, w, c),
            _ => {
                return Err(Error::dim(format!(
                    "conv2d expects B×H×W×C input, got {shape:?}"
                )))
            }
        };
        if c != kc {
            return Err(Error::dim(format!(
                "conv2d kernel has {kc} input channels, input shape {shape:?}"
            )));
        }
        if k % 2 == 0 {
            return Err(Error::dim(format!(
                "conv2d kernel size must be odd, got {k}"
            )));
        }
        if self.stride == 0 {
            return Err(Error::dim("conv2d stride must be at least 1"));
        }
        let s = self.stride;
        let (oh, ow, pad_top, pad_left) = match self.padding {
            Padding::Same => {
                let oh = h.div_ceil(s);
                let ow = w.div_ceil(s);
                let pad_h = ((oh - 1) * s + k).saturating_sub(h);
                let pad_w = ((ow - 1) * s + k).saturating_sub(w);
                (oh, ow, pad_h / 2, pad_w / 2)
            }
            Padding::Valid => {
                if k > h || k > w {
                    return Err(Error::dim(format!(
                        "conv2d kernel {k}×{k} larger than input {h}×{w}"
                    )));
                }
                ((h - k) / s + 1, (w - k) / s + 1, 0, 0)
            }
        };
        Ok(Geometry {
            h,
            w,
            c,
            k,
            f,
            stride: s,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x.shape())?;
        let batch = x.shape()[0];
        let out_len = g.out_pixels() * g.f;
        let kernel = self.state.param("kernel").data();
        let bias = self.state.param("bias").data();
        let act = self.activation;
        let mut y = vec![0.0; batch * out_len];

        y.par_chunks_mut(out_len * IMAGES_PER_CHUNK)
            .zip(x.data().par_chunks(g.in_len() * IMAGES_PER_CHUNK))
            .for_each(|(ys, xs)| {
                let mut cols = vec![0.0; g.out_pixels() * g.patch()];
                for (yi, xi) in ys.chunks_mut(out_len).zip(xs.chunks(g.in_len())) {
                    g.im2col(xi, &mut cols);
                    for row in yi.chunks_mut(g.f) {
                        row.copy_from_slice(bias);
                    }
                    gemm(
                        g.out_pixels(),
                        g.patch(),
                        g.f,
                        1.0,
                        &cols,
                        false,
                        kernel,
                        false,
                        1.0,
                        yi,
                    );
                    if act != Activation::Identity {
                        yi.iter_mut().for_each(|v| *v = act.apply(*v));
                    }
                }
            });
        Tensor::new(&[batch, g.oh, g.ow, g.f], y)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.state.put_cache(ConvCache {
            x: x.clone(),
            y: y.clone(),
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let ConvCache { x, y } = self.state.take_cache("conv2d")?;
        dy.expect_shape(y.shape())?;
        let g = self.geometry(x.shape())?;
        let out_len = g.out_pixels() * g.f;
        let act = self.activation;
        let kernel = self.state.param("kernel").data();
        let mut dx = vec![0.0; x.len()];

        let partials: Vec<(Vec<f64>, Vec<f64>)> = dx
            .par_chunks_mut(g.in_len() * IMAGES_PER_CHUNK)
            .zip(x.data().par_chunks(g.in_len() * IMAGES_PER_CHUNK))
            .zip(dy.data().par_chunks(out_len * IMAGES_PER_CHUNK))
            .zip(y.data().par_chunks(out_len * IMAGES_PER_CHUNK))
            .map(|(((dxs, xs), dys), ys)| {
                let mut dk = vec![0.0; g.patch() * g.f];
                let mut db = vec![0.0; g.f];
                let mut cols = vec![0.0; g.out_pixels() * g.patch()];
                let mut dz = vec![0.0; out_len];
                for (((dxi, xi), dyi), yi) in dxs
                    .chunks_mut(g.in_len())
                    .zip(xs.chunks(g.in_len()))
                    .zip(dys.chunks(out_len))
                    .zip(ys.chunks(out_len))
                {
                    for ((d, &gv), &yv) in dz.iter_mut().zip(dyi).zip(yi) {
                        *d = gv * act.derivative_from_output(yv);
                    }
                    for row in dz.chunks(g.f) {
                        for (acc, v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    g.im2col(xi, &mut cols);
                    gemm(
                        g.patch(),
                        g.out_pixels(),
                        g.f,
                        1.0,
                        &cols,
                        true,
                        &dz,
                        false,
                        1.0,
                        &mut dk,
                    );
                    gemm(
                        g.out_pixels(),
                        g.f,
                        g.patch(),
                        1.0,
                        &dz,
                        false,
                        kernel,
                        true,
                        0.0,
                        &mut cols,
                    );
                    g.col2im(&cols, dxi);
                }
                (dk, db)
            })
            .collect();

        let gk = self.state.grad_mut("kernel").data_mut();
        for (dk, _) in &partials {
            for (acc, v) in gk.iter_mut().zip(dk) {
                *acc += v;
            }
        }
        let gb = self.state.grad_mut("bias").data_mut();
        for (_, db) in &partials {
            for (acc, v) in gb.iter_mut().zip(db) {
                *acc += v;
            }
        }
        Tensor::new(x.shape(), dx)
    }
}
