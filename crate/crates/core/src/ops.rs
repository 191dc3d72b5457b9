//! Elementwise and channel ops with their backward rules.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `upstream` where `input > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(upstream, "relu_backward", |x, g| if x > T::zero() { g } else { T::zero() })
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "add", |x, y| x + y)
}

/// Stacks `[N,C1,H,W]` and `[N,C2,H,W]` into `[N,C1+C2,H,W]`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c1, h, w] = a.dims4("concat_channels")?;
    let [n2, c2, h2, w2] = b.dims4("concat_channels")?;
    if (n, h, w) != (n2, h2, w2) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            expected: alloc::vec![n, c2, h, w],
            actual: b.shape().to_vec(),
        });
    }
    let (sa, sb) = (c1 * h * w, c2 * h * w);
    let mut data = Vec::with_capacity(n * (sa + sb));
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * sa..(i + 1) * sa]);
        data.extend_from_slice(&b.data()[i * sb..(i + 1) * sb]);
    }
    Tensor::from_vec(&[n, c1 + c2, h, w], data)
}

/// Inverse of [`concat_channels`]: splits channels at `c1`.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, c1: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = x.dims4("split_channels")?;
    if c1 > c {
        return Err(Error::InvalidArgument(alloc::format!(
            "split at channel {c1} of {c}"
        )));
    }
    let c2 = c - c1;
    let (sa, sb) = (c1 * h * w, c2 * h * w);
    let mut a = Vec::with_capacity(n * sa);
    let mut b = Vec::with_capacity(n * sb);
    for i in 0..n {
        let s = &x.data()[i * (sa + sb)..(i + 1) * (sa + sb)];
        a.extend_from_slice(&s[..sa]);
        b.extend_from_slice(&s[sa..]);
    }
    Ok((Tensor::from_vec(&[n, c1, h, w], a)?, Tensor::from_vec(&[n, c2, h, w], b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn relu_forward_and_subgradient() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let up = Tensor::full(&[3], 5.0);
        assert_eq!(relu_backward(&x, &up).unwrap().data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn add_identities() {
        let a = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64 - 2.5);
        assert_eq!(add(&a, &Tensor::zeros(&[2, 3])).unwrap(), a);
        assert_eq!(add(&a, &a.map(|v| -v)).unwrap(), Tensor::zeros(&[2, 3]));
        assert!(add(&a, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn concat_places_second_operand_after_first() {
        let a = Tensor::<f32>::from_fn(&[1, 32, 8, 8], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[1, 32, 8, 8], |i| -(i as f32));
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 64, 8, 8]);
        for k in [0, 7, 31] {
            assert_eq!(c.at(&[0, 32 + k, 3, 5]), b.at(&[0, k, 3, 5]));
            assert_eq!(c.at(&[0, k, 3, 5]), a.at(&[0, k, 3, 5]));
        }
        let (sa, sb) = split_channels(&c, 32).unwrap();
        assert_eq!((sa, sb), (a, b));
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros(&[1, 2, 8, 8]);
        assert!(concat_channels(&a, &Tensor::zeros(&[1, 2, 8, 7])).is_err());
        assert!(concat_channels(&a, &Tensor::zeros(&[2, 2, 8, 8])).is_err());
    }
}
