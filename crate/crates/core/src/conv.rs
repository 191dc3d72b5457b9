//! Dilated 2-D convolution with "same" zero padding.
//!
//! The contract is the direct sum
//!
//! ```text
//! out[n,f,y,x] = bias[f] + sum_{c,i,j} input[n,c, y + d*(i - kh/2), x + d*(j - kw/2)] * weight[f,c,i,j]
//! ```
//!
//! with out-of-range input reading as zero. Internally each sample is lowered
//! to a column matrix (rows ordered `c`, then `i`, then `j`) and multiplied
//! with the `[F, C*kh*kw]` weight matrix, so the reduction order is fixed for
//! a given shape.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Geometry shared by the forward and backward passes.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    in_channels: usize,
    out_channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    dilation: usize,
}

impl Geometry {
    fn check<T: Scalar>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        dilation: usize,
    ) -> Result<Self> {
        if dilation < 1 {
            return Err(Error::InvalidDilation(dilation));
        }
        let [n, c, h, w] = input.dims4("conv2d input")?;
        let [f, wc, kh, kw] = weight.dims4("conv2d weight")?;
        if wc != c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: vec![f, c, kh, kw],
                actual: weight.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            b.expect_shape("conv2d bias", &[f])
                .map_err(|_| Error::ShapeMismatch {
                    op: "conv2d bias",
                    expected: vec![f],
                    actual: b.shape().to_vec(),
                })?;
        }
        Ok(Self {
            batch: n,
            in_channels: c,
            out_channels: f,
            height: h,
            width: w,
            kh,
            kw,
            dilation,
        })
    }

    fn taps(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }

    fn offset(&self, tap: usize, k: usize) -> isize {
        self.dilation as isize * (tap as isize - (k / 2) as isize)
    }

    /// Valid destination range `[lo, hi)` along an axis of length `len` for a
    /// source offset `off`.
    fn valid(len: usize, off: isize) -> (usize, usize) {
        let lo = (-off).clamp(0, len as isize) as usize;
        let hi = (len as isize - off).clamp(0, len as isize) as usize;
        (lo, hi.max(lo))
    }
}

/// Lowers one `[C, H, W]` sample into `cols` of shape `[C*kh*kw, H*W]`.
fn im2col<T: Scalar>(g: &Geometry, sample: &[T], cols: &mut [T]) {
    let (h, w) = (g.height, g.width);
    let plane = g.plane();
    for c in 0..g.in_channels {
        let src = &sample[c * plane..(c + 1) * plane];
        for i in 0..g.kh {
            let dy = g.offset(i, g.kh);
            let (ylo, yhi) = Geometry::valid(h, dy);
            for j in 0..g.kw {
                let dx = g.offset(j, g.kw);
                let (xlo, xhi) = Geometry::valid(w, dx);
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                dst.fill(T::zero());
                if xlo == xhi {
                    continue;
                }
                for y in ylo..yhi {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (xlo as isize + dx) as usize;
                    let n = xhi - xlo;
                    dst[y * w + xlo..y * w + xhi].copy_from_slice(&src[sy * w + sx0..sy * w + sx0 + n]);
                }
            }
        }
    }
}

/// Scatters column gradients back onto a `[C, H, W]` sample gradient.
fn col2im<T: Scalar>(g: &Geometry, cols: &[T], sample: &mut [T]) {
    let (h, w) = (g.height, g.width);
    let plane = g.plane();
    for c in 0..g.in_channels {
        let dst = &mut sample[c * plane..(c + 1) * plane];
        for i in 0..g.kh {
            let dy = g.offset(i, g.kh);
            let (ylo, yhi) = Geometry::valid(h, dy);
            for j in 0..g.kw {
                let dx = g.offset(j, g.kw);
                let (xlo, xhi) = Geometry::valid(w, dx);
                if xlo == xhi {
                    continue;
                }
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * plane..(row + 1) * plane];
                for y in ylo..yhi {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (xlo as isize + dx) as usize;
                    let n = xhi - xlo;
                    let d = &mut dst[sy * w + sx0..sy * w + sx0 + n];
                    for (a, &b) in d.iter_mut().zip(&src[y * w + xlo..y * w + xhi]) {
                        *a = *a + b;
                    }
                }
            }
        }
    }
}

/// Dilated "same" convolution: `[N,C,H,W] * [F,C,kh,kw] + [F] -> [N,F,H,W]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    dilation: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::check(input, weight, Some(bias), dilation)?;
    let (plane, taps, f) = (g.plane(), g.taps(), g.out_channels);
    let in_stride = g.in_channels * plane;
    let mut out = vec![T::zero(); g.batch * f * plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); taps * plane]
    };
    for n in 0..g.batch {
        let sample = &input.data()[n * in_stride..(n + 1) * in_stride];
        let lowered: &[T] = if g.is_pointwise() {
            sample
        } else {
            im2col(&g, sample, &mut cols);
            &cols
        };
        let dst = &mut out[n * f * plane..(n + 1) * f * plane];
        for (row, &b) in dst.chunks_exact_mut(plane).zip(bias.data()) {
            row.fill(b);
        }
        T::gemm(
            f,
            taps,
            plane,
            T::one(),
            weight.data(),
            taps as isize,
            1,
            lowered,
            plane as isize,
            1,
            T::one(),
            dst,
            plane as isize,
            1,
        );
    }
    Tensor::from_vec(&[g.batch, f, g.height, g.width], out)
}

/// Gradients of [`conv2d`] with respect to its three operands.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for it.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Analytic gradients of [`conv2d`] for an upstream gradient shaped like its output.
///
/// Padded positions receive no gradient.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    dilation: usize,
    upstream: &Tensor<T>,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let g = Geometry::check(input, weight, None, dilation)?;
    let (plane, taps, f) = (g.plane(), g.taps(), g.out_channels);
    let out_shape = [g.batch, f, g.height, g.width];
    if upstream.shape() != out_shape {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            expected: out_shape.to_vec(),
            actual: upstream.shape().to_vec(),
        });
    }
    let in_stride = g.in_channels * plane;
    let mut grad_w = vec![T::zero(); f * taps];
    let mut grad_b = vec![T::zero(); f];
    let mut grad_in = want_input.then(|| vec![T::zero(); g.batch * in_stride]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); taps * plane]
    };
    let mut grad_cols = if want_input && !g.is_pointwise() {
        vec![T::zero(); taps * plane]
    } else {
        Vec::new()
    };

    for n in 0..g.batch {
        let up = &upstream.data()[n * f * plane..(n + 1) * f * plane];
        for (gb, row) in grad_b.iter_mut().zip(up.chunks_exact(plane)) {
            *gb = row.iter().fold(*gb, |acc, &v| acc + v);
        }

        let sample = &input.data()[n * in_stride..(n + 1) * in_stride];
        let lowered: &[T] = if g.is_pointwise() {
            sample
        } else {
            im2col(&g, sample, &mut cols);
            &cols
        };
        // grad_w[f, t] += up[f, p] * lowered[t, p]
        T::gemm(
            f,
            plane,
            taps,
            T::one(),
            up,
            plane as isize,
            1,
            lowered,
            1,
            plane as isize,
            T::one(),
            &mut grad_w,
            taps as isize,
            1,
        );

        if let Some(gi) = grad_in.as_mut() {
            let dst = &mut gi[n * in_stride..(n + 1) * in_stride];
            // grad_cols[t, p] = weight[f, t]^T * up[f, p]
            let target: &mut [T] = if g.is_pointwise() { dst } else { &mut grad_cols };
            T::gemm(
                taps,
                f,
                plane,
                T::one(),
                weight.data(),
                1,
                taps as isize,
                up,
                plane as isize,
                1,
                T::zero(),
                target,
                plane as isize,
                1,
            );
            if !g.is_pointwise() {
                col2im(&g, &grad_cols, dst);
            }
        }
    }

    Ok(ConvGrads {
        input: match grad_in {
            Some(d) => Some(Tensor::from_vec(input.shape(), d)?),
            None => None,
        },
        weight: Tensor::from_vec(weight.shape(), grad_w)?,
        bias: Tensor::from_vec(&[f], grad_b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation of the convolution sum; the oracle for the lowered path.
    fn direct(input: &Tensor<f64>, weight: &Tensor<f64>, bias: &Tensor<f64>, d: usize) -> Tensor<f64> {
        let [n, c, h, w] = input.dims4("x").unwrap();
        let [f, _, kh, kw] = weight.dims4("w").unwrap();
        let mut out = Tensor::zeros(&[n, f, h, w]);
        for b in 0..n {
            for o in 0..f {
                for y in 0..h {
                    for x in 0..w {
                        let mut s = bias.data()[o];
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let sy = y as isize + (d * i) as isize - (d * (kh / 2)) as isize;
                                    let sx = x as isize + (d * j) as isize - (d * (kw / 2)) as isize;
                                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                        s += input.at(&[b, ci, sy as usize, sx as usize]) * weight.at(&[o, ci, i, j]);
                                    }
                                }
                            }
                        }
                        out.set(&[b, o, y, x], s);
                    }
                }
            }
        }
        out
    }

    fn pseudo_random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut s = seed;
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn all_ones_counts_zero_padding() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let k = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y.at(&[0, 0, 1, 1]), 9.0);
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(&[0, 0, r, c]), 4.0);
        }
        assert_eq!(y.at(&[0, 0, 0, 1]), 6.0);
    }

    #[test]
    fn identity_kernel_is_identity_for_every_dilation() {
        let x = pseudo_random(&[2, 1, 6, 5], 3);
        let mut k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        k.set(&[0, 0, 1, 1], 1.0);
        for d in [1, 2, 4, 8, 16] {
            let y = conv2d(&x, &k, &Tensor::zeros(&[1]), d).unwrap();
            assert_eq!(y, x, "dilation {d}");
        }
    }

    #[test]
    fn dilated_impulse_response() {
        let mut x = Tensor::<f64>::zeros(&[1, 1, 7, 7]);
        x.set(&[0, 0, 3, 3], 1.0);
        let k = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), 2).unwrap();
        let oracle = direct(&x, &k, &Tensor::zeros(&[1]), 2);
        assert_eq!(y, oracle);
        for r in 0..7 {
            for c in 0..7 {
                let expected = [1, 3, 5].contains(&r) && [1, 3, 5].contains(&c);
                assert_eq!(y.at(&[0, 0, r, c]) != 0.0, expected, "({r},{c})");
            }
        }
    }

    #[test]
    fn lowered_path_matches_direct_sum() {
        for (d, kh, kw) in [(1, 3, 3), (2, 3, 3), (3, 1, 3), (1, 1, 1), (5, 3, 3), (2, 5, 3)] {
            let x = pseudo_random(&[2, 3, 7, 6], 11 + d as u64);
            let w = pseudo_random(&[4, 3, kh, kw], 29 + kh as u64);
            let b = pseudo_random(&[4], 5);
            let y = conv2d(&x, &w, &b, d).unwrap();
            let o = direct(&x, &w, &b, d);
            for (a, e) in y.data().iter().zip(o.data()) {
                assert!((a - e).abs() < 1e-12, "d={d} k={kh}x{kw}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn rejects_bad_shapes_and_dilation() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[3, 1, 3, 3]);
        let b = Tensor::<f32>::zeros(&[3]);
        assert!(matches!(conv2d(&x, &w, &b, 1), Err(Error::ShapeMismatch { .. })));
        let w = Tensor::<f32>::zeros(&[3, 2, 3, 3]);
        assert!(matches!(conv2d(&x, &w, &b, 0), Err(Error::InvalidDilation(0))));
        assert!(conv2d(&x, &w, &Tensor::zeros(&[2]), 1).is_err());
        assert!(conv2d(&Tensor::<f32>::zeros(&[2, 4, 4]), &w, &b, 1).is_err());
    }

    #[test]
    fn identity_kernel_backward_passes_upstream() {
        let x = pseudo_random(&[1, 1, 5, 5], 1);
        let mut k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        k.set(&[0, 0, 1, 1], 1.0);
        let up = Tensor::ones(&[1, 1, 5, 5]);
        let g = conv2d_backward(&x, &k, 3, &up, true).unwrap();
        assert_eq!(g.input.unwrap(), Tensor::ones(&[1, 1, 5, 5]));
    }

    #[test]
    fn bias_gradient_is_per_filter_upstream_sum() {
        let x = pseudo_random(&[2, 2, 4, 4], 2);
        let w = pseudo_random(&[3, 2, 3, 3], 4);
        let up = pseudo_random(&[2, 3, 4, 4], 6);
        let g = conv2d_backward(&x, &w, 1, &up, false).unwrap();
        assert!(g.input.is_none());
        for f in 0..3 {
            let mut s = 0.0;
            for n in 0..2 {
                for p in 0..16 {
                    s += up.data()[(n * 3 + f) * 16 + p];
                }
            }
            assert!((g.bias.data()[f] - s).abs() < 1e-12);
        }
    }

    /// Central differences of `sum(conv(x) * up)` against the analytic gradients.
    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-5;
        for d in [1, 2, 3] {
            let x = pseudo_random(&[2, 2, 5, 6], 100 + d as u64);
            let w = pseudo_random(&[3, 2, 3, 3], 200 + d as u64);
            let b = pseudo_random(&[3], 300);
            let up = pseudo_random(&[2, 3, 5, 6], 400);
            let objective = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                let y = direct(x, w, b, d);
                y.data().iter().zip(up.data()).map(|(a, u)| a * u).sum()
            };
            let g = conv2d_backward(&x, &w, d, &up, true).unwrap();
            let gi = g.input.unwrap();
            for idx in 0..w.len() {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp.data_mut()[idx] += h;
                wm.data_mut()[idx] -= h;
                let fd = (objective(&x, &wp, &b) - objective(&x, &wm, &b)) / (2.0 * h);
                let an = g.weight.data()[idx];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "w[{idx}] {fd} vs {an}");
            }
            for idx in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp.data_mut()[idx] += h;
                xm.data_mut()[idx] -= h;
                let fd = (objective(&xp, &w, &b) - objective(&xm, &w, &b)) / (2.0 * h);
                let an = gi.data()[idx];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "x[{idx}] {fd} vs {an}");
            }
        }
    }

    /// 1x1x3x3 all-ones case: each weight gradient is the sum of the input over
    /// the positions that tap reaches.
    #[test]
    fn all_ones_weight_gradient_counts_valid_positions() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let k = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let up = Tensor::ones(&[1, 1, 3, 3]);
        let g = conv2d_backward(&x, &k, 1, &up, false).unwrap();
        let expected = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
        assert_eq!(g.weight.data(), &expected);
    }
}
