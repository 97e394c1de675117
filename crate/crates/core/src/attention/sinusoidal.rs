use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed sine/cosine table of shape `[axis_length, dim]`.
///
/// Column `2i` holds `sin(pos / 10000^(2i/dim))` and column `2i+1` the
/// matching cosine, so position 0 reads `[0, 1, 0, 1, ...]`.
pub fn sinusoidal_encode(axis_length: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid(format!(
            "sinusoidal encoding needs an even positive dim, got {dim}"
        )));
    }
    if axis_length == 0 {
        return Err(Error::invalid("axis length must be positive"));
    }
    let mut data = vec![0.0; axis_length * dim];
    for pos in 0..axis_length {
        for i in 0..dim / 2 {
            let freq = 10000f64.powf(-((2 * i) as f64) / dim as f64);
            let angle = pos as f64 * freq;
            data[pos * dim + 2 * i] = angle.sin();
            data[pos * dim + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::from_vec(&[axis_length, dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_alternates() {
        let t = sinusoidal_encode(3, 6).unwrap();
        assert_eq!(&t.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn distinct_positions_differ() {
        let t = sinusoidal_encode(4, 4).unwrap();
        for a in 0..4 {
            for b in a + 1..4 {
                assert_ne!(t.data()[a * 4..a * 4 + 4], t.data()[b * 4..b * 4 + 4]);
            }
        }
    }

    #[test]
    fn deterministic_and_rejects_odd_dims() {
        assert_eq!(
            sinusoidal_encode(5, 8).unwrap(),
            sinusoidal_encode(5, 8).unwrap()
        );
        assert!(sinusoidal_encode(5, 3).is_err());
    }
}
