//! Square-kernel 2-D convolution over a single `[C, H, W]` frame, lowered
//! to a matrix product through im2col.

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[c_out, c_in * k * k]`.
    pub weight: Tensor,
    pub bias: Tensor,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Lowered input kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Tensor,
    in_shape: [usize; 3],
}

impl Conv2d {
    /// He-normal weights, zero bias, `pad = kernel / 2`.
    pub fn init(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        Self {
            weight: rng.normal_tensor(&[c_out, fan_in], (2.0 / fan_in as f64).sqrt()),
            bias: Tensor::zeros(&[c_out]),
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1] / (self.kernel * self.kernel)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let o = |n: usize| (n + 2 * self.pad - self.kernel) / self.stride + 1;
        (o(h), o(w))
    }

    fn im2col(&self, x: &Tensor) -> Result<(Tensor, [usize; 3])> {
        let [c, h, w] = *x.shape() else {
            return Err(Error::shape("conv2d", x.shape(), &[self.c_in(), 0, 0]));
        };
        if c != self.c_in() || h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            return Err(Error::shape(
                "conv2d",
                x.shape(),
                &[self.c_in(), self.kernel, self.kernel],
            ));
        }
        let (oh, ow) = self.output_hw(h, w);
        let k = self.kernel;
        let l = oh * ow;
        let mut cols = vec![0.0; c * k * k * l];
        let xd = x.data();
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ch * k + ky) * k + kx) * l..][..l];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                row[oy * ow + ox] = xd[(ch * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        Ok((Tensor::from_parts(vec![c * k * k, l], cols), [c, h, w]))
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let (cols, in_shape) = self.im2col(x)?;
        let mut y = self.weight.matmul(&cols)?;
        let l = cols.shape()[1];
        for (row, b) in y.data_mut().chunks_exact_mut(l).zip(self.bias.data()) {
            row.iter_mut().for_each(|v| *v += b);
        }
        let (oh, ow) = self.output_hw(in_shape[1], in_shape[2]);
        Ok((
            y.reshape(&[self.c_out(), oh, ow])?,
            ConvCache { cols, in_shape },
        ))
    }

    /// Returns `(weight, bias)` gradients and, when `need_input`, the input
    /// gradient.
    pub fn backward(
        &self,
        cache: &ConvCache,
        gy: &Tensor,
        need_input: bool,
    ) -> Result<(Tensor, Tensor, Option<Tensor>)> {
        let l = cache.cols.shape()[1];
        let gy = gy.reshape(&[self.c_out(), l])?;
        let gw = gy.matmul(&cache.cols.transpose2()?)?;
        let gb = Tensor::from_parts(
            vec![self.c_out()],
            gy.data().chunks_exact(l).map(|r| r.iter().sum()).collect(),
        );
        if !need_input {
            return Ok((gw, gb, None));
        }
        let gcols = self.weight.transpose2()?.matmul(&gy)?;
        let [c, h, w] = cache.in_shape;
        let (oh, ow) = self.output_hw(h, w);
        let k = self.kernel;
        let mut gx = vec![0.0; c * h * w];
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &gcols.data()[((ch * k + ky) * k + kx) * l..][..l];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                gx[(ch * h + iy as usize) * w + ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        Ok((gw, gb, Some(Tensor::from_parts(vec![c, h, w], gx))))
    }
}

impl Parameters for Conv2d {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}weight"), &self.weight));
        out.push((format!("{prefix}bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}weight"), &mut self.weight));
        out.push((format!("{prefix}bias"), &mut self.bias));
    }
}
