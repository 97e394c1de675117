//! Mask-aware spatial pooling and temporal aggregation of per-frame feature
//! maps into one tracklet descriptor.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-pixel validity of a `T×H×W` stack: `true` for real content, `false`
/// for padding introduced by crop normalisation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    t: usize,
    h: usize,
    w: usize,
    valid: Vec<bool>,
}

impl ValidityMask {
    pub fn new(t: usize, h: usize, w: usize, valid: Vec<bool>) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 || valid.len() != t * h * w {
            return Err(Error::invalid(format!(
                "mask {t}x{h}x{w} with {} entries",
                valid.len()
            )));
        }
        Ok(Self { t, h, w, valid })
    }

    pub fn all_valid(t: usize, h: usize, w: usize) -> Self {
        Self::new(t, h, w, vec![true; t * h * w]).expect("positive extents")
    }

    /// Interprets nonzero entries of a `[T, H, W]` (or `[H, W]`) tensor as valid.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (tt, h, w) = match *t.shape() {
            [h, w] => (1, h, w),
            [tt, h, w] => (tt, h, w),
            _ => return Err(Error::invalid(format!("mask tensor shape {:?}", t.shape()))),
        };
        Self::new(tt, h, w, t.data().iter().map(|&v| v != 0.0).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(
            vec![self.t, self.h, self.w],
            self.valid
                .iter()
                .map(|&v| if v { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    /// Stacks single-frame masks of equal size.
    pub fn stack(frames: &[ValidityMask]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("no masks to stack"))?;
        let mut valid = Vec::new();
        let mut t = 0;
        for f in frames {
            if (f.h, f.w) != (first.h, first.w) {
                return Err(Error::shape(
                    "ValidityMask::stack",
                    &[first.h, first.w],
                    &[f.h, f.w],
                ));
            }
            t += f.t;
            valid.extend_from_slice(&f.valid);
        }
        Self::new(t, first.h, first.w, valid)
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn frame(&self, t: usize) -> &[bool] {
        &self.valid[t * self.h * self.w..(t + 1) * self.h * self.w]
    }

    pub fn get(&self, t: usize, y: usize, x: usize) -> bool {
        self.valid[(t * self.h + y) * self.w + x]
    }

    pub fn valid_count(&self, t: usize) -> usize {
        self.frame(t).iter().filter(|&&v| v).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.valid
    }

    /// Frames `start..start+len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.t {
            return Err(Error::invalid("frame range out of bounds"));
        }
        let hw = self.h * self.w;
        Self::new(
            len,
            self.h,
            self.w,
            self.valid[start * hw..(start + len) * hw].to_vec(),
        )
    }

    /// Mirrors every frame left to right.
    pub fn flip_horizontal(&self) -> Self {
        let mut valid = self.valid.clone();
        for row in valid.chunks_exact_mut(self.w) {
            row.reverse();
        }
        Self { valid, ..*self }
    }
}

/// Downsamples a mask by an integer ratio per axis. An output cell is valid
/// iff strictly more than half of the input pixels it covers are valid; a
/// frame that ends up with no valid cell becomes all-valid.
pub fn mask_downsample(m: &ValidityMask, target: (usize, usize)) -> Result<ValidityMask> {
    let (th, tw) = target;
    if th == 0 || tw == 0 || th > m.h || tw > m.w || m.h % th != 0 || m.w % tw != 0 {
        return Err(Error::invalid(format!(
            "cannot downsample a {}x{} mask to {th}x{tw}: ratio must be an integer",
            m.h, m.w
        )));
    }
    let (ry, rx) = (m.h / th, m.w / tw);
    let window = ry * rx;
    let mut valid = Vec::with_capacity(m.t * th * tw);
    for t in 0..m.t {
        let start = valid.len();
        for oy in 0..th {
            for ox in 0..tw {
                let mut count = 0;
                for y in oy * ry..(oy + 1) * ry {
                    for x in ox * rx..(ox + 1) * rx {
                        count += usize::from(m.get(t, y, x));
                    }
                }
                valid.push(2 * count > window);
            }
        }
        if !valid[start..].iter().any(|&v| v) {
            log::debug!("frame {t}: no valid cell after downsampling, using all cells");
            valid[start..].fill(true);
        }
    }
    ValidityMask::new(m.t, th, tw, valid)
}

fn valid_cells(m: &ValidityMask, t: usize) -> Vec<usize> {
    let cells: Vec<usize> = m
        .frame(t)
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| v.then_some(i))
        .collect();
    if cells.is_empty() {
        (0..m.h * m.w).collect()
    } else {
        cells
    }
}

/// Per-frame mean of the feature vectors at valid cells: `[T, C, H, W]` to
/// `[T, C]`. Frames without any valid cell average over every cell.
pub fn masked_avg_pool(features: &Tensor, m: &ValidityMask) -> Result<Tensor> {
    let [t, c, h, w] = *features.shape() else {
        return Err(Error::shape(
            "masked_avg_pool",
            features.shape(),
            &[m.t, 0, m.h, m.w],
        ));
    };
    if (t, h, w) != (m.t, m.h, m.w) {
        return Err(Error::shape(
            "masked_avg_pool",
            features.shape(),
            &[m.t, c, m.h, m.w],
        ));
    }
    let hw = h * w;
    let mut out = vec![0.0; t * c];
    for ti in 0..t {
        let cells = valid_cells(m, ti);
        let inv = 1.0 / cells.len() as f64;
        for ci in 0..c {
            let plane = &features.data()[(ti * c + ci) * hw..(ti * c + ci + 1) * hw];
            let acc: f64 = cells.iter().map(|&i| plane[i]).sum();
            out[ti * c + ci] = acc * inv;
        }
    }
    Ok(Tensor::from_parts(vec![t, c], out))
}

/// Adjoint of [`masked_avg_pool`].
pub fn masked_avg_pool_backward(grad: &Tensor, m: &ValidityMask) -> Result<Tensor> {
    let [t, c] = *grad.shape() else {
        return Err(Error::shape(
            "masked_avg_pool_backward",
            grad.shape(),
            &[m.t, 0],
        ));
    };
    if t != m.t {
        return Err(Error::shape(
            "masked_avg_pool_backward",
            grad.shape(),
            &[m.t, c],
        ));
    }
    let hw = m.h * m.w;
    let mut out = vec![0.0; t * c * hw];
    for ti in 0..t {
        let cells = valid_cells(m, ti);
        let inv = 1.0 / cells.len() as f64;
        for ci in 0..c {
            let g = grad.data()[ti * c + ci] * inv;
            let plane = &mut out[(ti * c + ci) * hw..(ti * c + ci + 1) * hw];
            for &i in &cells {
                plane[i] = g;
            }
        }
    }
    Ok(Tensor::from_parts(vec![t, c, m.h, m.w], out))
}

/// Mean over the leading (frame) axis of a `[T, C]` tensor.
pub fn temporal_mean(frame_feats: &Tensor) -> Result<Tensor> {
    let [t, c] = *frame_feats.shape() else {
        return Err(Error::invalid(format!(
            "expected [T, C] frame features, got {:?}",
            frame_feats.shape()
        )));
    };
    let mut out = vec![0.0; c];
    for row in frame_feats.data().chunks_exact(c) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= t as f64;
    }
    Ok(Tensor::from_parts(vec![c], out))
}

/// 1-D batch normalisation with learned affine parameters and running
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

/// Batch statistics kept for [`BatchNorm::backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    /// Unit scale, zero shift, running statistics `(0, 1)`.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        let c = self.channels();
        match *x.shape() {
            [cc] if cc == c => Ok((1, c)),
            [b, cc] if cc == c => Ok((b, c)),
            _ => Err(Error::shape("batch_norm", x.shape(), &[c])),
        }
    }

    /// Inference mode: normalises with the running statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c) = self.check(x)?;
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (j, v) in row.iter_mut().enumerate() {
                let inv = 1.0 / (self.running_var.data()[j] + self.eps).sqrt();
                *v = (*v - self.running_mean.data()[j]) * inv * self.gamma.data()[j]
                    + self.beta.data()[j];
            }
        }
        Ok(out)
    }

    /// Training mode on a `[B, C]` batch: normalises with batch statistics
    /// and updates the running estimates.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        let (b, c) = self.check(x)?;
        if x.rank() != 2 || b < 2 {
            return Err(Error::invalid(
                "training-mode batch norm needs a [B, C] batch with B >= 2",
            ));
        }
        let mut mean = vec![0.0; c];
        for row in x.data().chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut var = vec![0.0; c];
        for row in x.data().chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= b as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut normalized = x.clone();
        for row in normalized.data_mut().chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let mut out = normalized.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for ((v, g), b) in row.iter_mut().zip(self.gamma.data()).zip(self.beta.data()) {
                *v = *v * g + b;
            }
        }
        let unbiased = b as f64 / (b as f64 - 1.0);
        for j in 0..c {
            let rm = &mut self.running_mean.data_mut()[j];
            *rm = (1.0 - self.momentum) * *rm + self.momentum * mean[j];
            let rv = &mut self.running_var.data_mut()[j];
            *rv = (1.0 - self.momentum) * *rv + self.momentum * var[j] * unbiased;
        }
        Ok((
            out,
            BatchNormCache {
                normalized,
                inv_std,
            },
        ))
    }

    /// Gradients `(input, gamma, beta)` of a training-mode forward pass.
    pub fn backward(
        &self,
        cache: &BatchNormCache,
        gy: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let xhat = &cache.normalized;
        if gy.shape() != xhat.shape() {
            return Err(Error::shape(
                "batch_norm backward",
                gy.shape(),
                xhat.shape(),
            ));
        }
        let (b, c) = (xhat.shape()[0], xhat.shape()[1]);
        let mut g_gamma = vec![0.0; c];
        let mut g_beta = vec![0.0; c];
        for (grow, xrow) in gy.data().chunks_exact(c).zip(xhat.data().chunks_exact(c)) {
            for j in 0..c {
                g_gamma[j] += grow[j] * xrow[j];
                g_beta[j] += grow[j];
            }
        }
        let mut gx = vec![0.0; b * c];
        let bf = b as f64;
        for i in 0..b {
            for j in 0..c {
                let g = gy.data()[i * c + j];
                let xh = xhat.data()[i * c + j];
                gx[i * c + j] = self.gamma.data()[j] * cache.inv_std[j] / bf
                    * (bf * g - g_beta[j] - xh * g_gamma[j]);
            }
        }
        Ok((
            Tensor::from_parts(vec![b, c], gx),
            Tensor::from_parts(vec![c], g_gamma),
            Tensor::from_parts(vec![c], g_beta),
        ))
    }
}

/// Temporal mean of `[T, C]` frame features (`f_pre`) and its inference-mode
/// batch-normalised version (`f_post`).
pub fn aggregate(frame_feats: &Tensor, bn: &BatchNorm) -> Result<(Tensor, Tensor)> {
    if frame_feats.rank() != 2 || frame_feats.shape()[1] != bn.channels() {
        return Err(Error::shape(
            "aggregate",
            frame_feats.shape(),
            &[0, bn.channels()],
        ));
    }
    let pre = temporal_mean(frame_feats)?;
    let post = bn.forward_eval(&pre)?;
    Ok((pre, post))
}
