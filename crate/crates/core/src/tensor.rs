//! Dense row-major `f64` tensors and the handful of operations the attention,
//! aggregation and training code is built on.

use std::fmt;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` in row-major order.
///
/// Every extent is strictly positive and `data.len()` is the product of the
/// extents.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::invalid("tensor rank must be at least 1"));
    }
    if shape.contains(&0) {
        return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
    }
    shape.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::invalid(format!("shape {shape:?} overflows")))
    })
}

impl Tensor {
    /// Builds a tensor from a shape and row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite element {bad}")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// All-zero tensor. Panics on an empty shape or a zero extent.
    pub fn zeros(shape: &[usize]) -> Self {
        let len = check_shape(shape).expect("invalid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[1], value)
    }

    /// Internal constructor for data produced by an operation on validated shapes.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "mul")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Matrix product of two rank-2 tensors. Summation runs over the inner
    /// index in increasing order.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            let dst = &mut out[i * n..(i + 1) * n];
            for (p, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[p * n..(p + 1) * n];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(Self::from_parts(vec![m, n], out))
    }

    pub fn transpose2(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::invalid(format!(
                "transpose2 needs rank 2, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self::from_parts(vec![n, m], out))
    }

    /// Reorders axes; `order[i]` names the source axis of output axis `i`.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if order.len() != rank
            || order
                .iter()
                .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::invalid(format!(
                "bad permutation {order:?} for rank {rank}"
            )));
        }
        let src_strides = strides(&self.shape);
        let shape: Vec<usize> = order.iter().map(|&a| self.shape[a]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; rank];
        for _ in 0..self.data.len() {
            let off: usize = idx
                .iter()
                .zip(order)
                .map(|(&i, &a)| i * src_strides[a])
                .sum();
            out.push(self.data[off]);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Self::from_parts(shape, out))
    }

    /// Numerically stabilised softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::invalid(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = self.data.clone();
        let mut line = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                for (j, l) in line.iter_mut().enumerate() {
                    *l = self.data[base + j * inner];
                }
                softmax_in_place(&mut line);
                for (j, l) in line.iter().enumerate() {
                    out[base + j * inner] = *l;
                }
            }
        }
        Ok(Self::from_parts(self.shape.clone(), out))
    }

    /// Selects `len` consecutive entries of axis 0 starting at `start`.
    pub fn narrow0(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.shape[0] {
            return Err(Error::invalid(format!(
                "narrow0({start}, {len}) out of range for {:?}",
                self.shape
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self::from_parts(
            shape,
            self.data[start * inner..(start + len) * inner].to_vec(),
        ))
    }

    /// Concatenates along axis 0; all trailing extents must agree.
    pub fn concat0(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat0 of no tensors"))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::shape("concat0", &first.shape, &p.shape));
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Self::from_parts(shape, data))
    }

    /// Average pooling over the last two axes with a `factor`×`factor` window.
    ///
    /// Output extents use ceiling division; a window hanging over the edge
    /// averages only the cells it actually covers.
    pub fn avg_pool_2d(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("pooling factor must be >= 1"));
        }
        let (lead, h, w) = self.split_hw("avg_pool_2d")?;
        if factor == 1 {
            return Ok(self.clone());
        }
        let (ho, wo) = (h.div_ceil(factor), w.div_ceil(factor));
        let mut out = vec![0.0; lead * ho * wo];
        for l in 0..lead {
            let src = &self.data[l * h * w..(l + 1) * h * w];
            let dst = &mut out[l * ho * wo..(l + 1) * ho * wo];
            for oy in 0..ho {
                let ys = oy * factor..((oy + 1) * factor).min(h);
                for ox in 0..wo {
                    let xs = ox * factor..((ox + 1) * factor).min(w);
                    let count = (ys.len() * xs.len()) as f64;
                    let mut acc = 0.0;
                    for y in ys.clone() {
                        for x in xs.clone() {
                            acc += src[y * w + x];
                        }
                    }
                    dst[oy * wo + ox] = acc / count;
                }
            }
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        Ok(Self::from_parts(shape, out))
    }

    /// Adjoint of [`Tensor::avg_pool_2d`]: spreads each pooled gradient evenly
    /// over its window. `fine_hw` is the pre-pooling spatial extent.
    pub fn avg_pool_2d_backward(&self, factor: usize, fine_hw: (usize, usize)) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("pooling factor must be >= 1"));
        }
        let (lead, ho, wo) = self.split_hw("avg_pool_2d_backward")?;
        let (h, w) = fine_hw;
        if h.div_ceil(factor) != ho || w.div_ceil(factor) != wo {
            return Err(Error::shape("avg_pool_2d_backward", &self.shape, &[h, w]));
        }
        let mut out = vec![0.0; lead * h * w];
        for l in 0..lead {
            let src = &self.data[l * ho * wo..(l + 1) * ho * wo];
            let dst = &mut out[l * h * w..(l + 1) * h * w];
            for oy in 0..ho {
                let ys = oy * factor..((oy + 1) * factor).min(h);
                for ox in 0..wo {
                    let xs = ox * factor..((ox + 1) * factor).min(w);
                    let g = src[oy * wo + ox] / (ys.len() * xs.len()) as f64;
                    for y in ys.clone() {
                        for x in xs.clone() {
                            dst[y * w + x] = g;
                        }
                    }
                }
            }
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = h;
        shape[r - 1] = w;
        Ok(Self::from_parts(shape, out))
    }

    /// Nearest-neighbour upsampling of the last two axes by `factor`, cropped
    /// to `target_hw`. The target may not exceed `factor` times the input.
    pub fn upsample_nearest_2d(&self, factor: usize, target_hw: (usize, usize)) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("upsampling factor must be >= 1"));
        }
        let (lead, h, w) = self.split_hw("upsample_nearest_2d")?;
        let (th, tw) = target_hw;
        if th == 0 || tw == 0 || th > h * factor || tw > w * factor {
            return Err(Error::shape("upsample_nearest_2d", &self.shape, &[th, tw]));
        }
        let mut out = vec![0.0; lead * th * tw];
        for l in 0..lead {
            let src = &self.data[l * h * w..(l + 1) * h * w];
            let dst = &mut out[l * th * tw..(l + 1) * th * tw];
            for y in 0..th {
                for x in 0..tw {
                    dst[y * tw + x] = src[(y / factor) * w + x / factor];
                }
            }
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = th;
        shape[r - 1] = tw;
        Ok(Self::from_parts(shape, out))
    }

    /// Adjoint of [`Tensor::upsample_nearest_2d`]: sums each block back onto
    /// its source cell. `coarse_hw` is the pre-upsampling extent.
    pub fn upsample_nearest_2d_backward(
        &self,
        factor: usize,
        coarse_hw: (usize, usize),
    ) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("upsampling factor must be >= 1"));
        }
        let (lead, th, tw) = self.split_hw("upsample_nearest_2d_backward")?;
        let (h, w) = coarse_hw;
        if th > h * factor || tw > w * factor {
            return Err(Error::shape(
                "upsample_nearest_2d_backward",
                &self.shape,
                &[h, w],
            ));
        }
        let mut out = vec![0.0; lead * h * w];
        for l in 0..lead {
            let src = &self.data[l * th * tw..(l + 1) * th * tw];
            let dst = &mut out[l * h * w..(l + 1) * h * w];
            for y in 0..th {
                for x in 0..tw {
                    dst[(y / factor) * w + x / factor] += src[y * tw + x];
                }
            }
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = h;
        shape[r - 1] = w;
        Ok(Self::from_parts(shape, out))
    }

    fn split_hw(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::shape(op, &self.shape, &[]));
        }
        let lead = self.shape[..r - 2].iter().product();
        Ok((lead, self.shape[r - 2], self.shape[r - 1]))
    }
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// In-place max-subtracted softmax over a slice. Empty slices are left alone.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
        assert!(Tensor::from_vec(&[], vec![]).is_err());
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_vec(&[1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn matmul_hand_cases() {
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let col = t(&[2, 1], &[3.0, 4.0]);
        assert_eq!(id.matmul(&col).unwrap(), col);
        let row = t(&[1, 2], &[1.0, 2.0]);
        assert_eq!(row.matmul(&col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = t(&[2, 3], &[0.0; 6])
            .matmul(&t(&[2, 3], &[0.0; 6]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SeededRng::new(11);
        let a = rng.uniform_tensor(&[5, 7], 1.0);
        let b = rng.uniform_tensor(&[7, 3], 1.0);
        let c = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0;
                for p in 0..7 {
                    acc += a.data()[i * 7 + p] * b.data()[p * 3 + j];
                }
                assert!((c.data()[i * 3 + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_cases() {
        let u = t(&[3], &[0.0; 3]).softmax(0).unwrap();
        for v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = t(&[2], &[1000.0, 1000.0]).softmax(0).unwrap();
        assert_eq!(big.data(), &[0.5, 0.5]);
        assert!(t(&[3], &[0.0; 3]).softmax(1).is_err());
    }

    #[test]
    fn softmax_against_direct_normalisation() {
        let s = t(&[3], &[1.0, 2.0, 3.0]).softmax(0).unwrap();
        // exp(k - 3) / (e^-2 + e^-1 + 1), evaluated term by term.
        let z = (-2.0f64).exp() + (-1.0f64).exp() + 1.0;
        let expected = [(-2.0f64).exp() / z, (-1.0f64).exp() / z, 1.0 / z];
        for (a, b) in s.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_along_inner_axis() {
        let x = t(&[2, 3], &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
            .softmax(0)
            .unwrap();
        for j in 0..3 {
            assert!((x.data()[j] + x.data()[3 + j] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn pooling_cases() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.avg_pool_2d(2).unwrap().data(), &[2.5]);
        assert_eq!(x.avg_pool_2d(1).unwrap(), x);
        assert!(x.avg_pool_2d(0).is_err());
        let c = Tensor::full(&[2, 3, 5, 3], 1.25);
        let p = c.avg_pool_2d(2).unwrap();
        assert_eq!(p.shape(), &[2, 3, 3, 2]);
        assert!(p.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn partial_windows_average_only_covered_cells() {
        let x = t(&[1, 3], &[1.0, 2.0, 6.0]);
        assert_eq!(x.avg_pool_2d(2).unwrap().data(), &[1.5, 6.0]);
    }

    #[test]
    fn upsample_cases() {
        let x = t(&[1, 1], &[5.0]);
        assert_eq!(x.upsample_nearest_2d(2, (2, 2)).unwrap().data(), &[5.0; 4]);
        let y = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(y.upsample_nearest_2d(1, (2, 2)).unwrap(), y);
        assert!(y.upsample_nearest_2d(0, (2, 2)).is_err());
        let c = Tensor::full(&[3, 5, 3], -2.0);
        let round = c
            .avg_pool_2d(2)
            .unwrap()
            .upsample_nearest_2d(2, (5, 3))
            .unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn pool_and_upsample_adjoints() {
        let mut rng = SeededRng::new(3);
        let x = rng.uniform_tensor(&[2, 5, 3], 1.0);
        let g = rng.uniform_tensor(&[2, 3, 2], 1.0);
        let lhs = x.avg_pool_2d(2).unwrap().dot(&g).unwrap();
        let rhs = x.dot(&g.avg_pool_2d_backward(2, (5, 3)).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        let u = g.upsample_nearest_2d(2, (5, 3)).unwrap().dot(&x).unwrap();
        let v = g
            .dot(&x.upsample_nearest_2d_backward(2, (3, 2)).unwrap())
            .unwrap();
        assert!((u - v).abs() < 1e-12);
    }

    #[test]
    fn permute_round_trip() {
        let mut rng = SeededRng::new(5);
        let x = rng.uniform_tensor(&[2, 3, 4], 1.0);
        let p = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[1, 0, 2] == x[0, 2, 1]
        assert_eq!(p.data()[6 + 2], x.data()[2 * 4 + 1]);
        assert_eq!(p.permute(&[1, 2, 0]).unwrap(), x);
        assert!(x.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn narrow_and_concat() {
        let x = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let a = x.narrow0(0, 1).unwrap();
        let b = x.narrow0(1, 2).unwrap();
        assert_eq!(Tensor::concat0(&[a, b]).unwrap(), x);
        assert!(x.narrow0(2, 2).is_err());
    }
}
