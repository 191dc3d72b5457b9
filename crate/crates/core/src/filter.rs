//! 2-D image filters on `[H, W]` tensors: Gaussian smoothing and binary morphology.

use alloc::vec;
use alloc::vec::Vec;


// Float math for no_std builds; with std linked the inherent methods win.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// FWHM to standard deviation: `sigma = fwhm / (2 sqrt(2 ln 2))`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Normalised 1-D Gaussian taps on `[-radius, radius]`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian blur with `sigma = fwhm_px / 2.3548`, truncated at
/// `ceil(3 sigma)` and zero-padded at the borders.
pub fn gaussian_blur_fwhm(image: &Tensor<f64>, fwhm_px: f64) -> Result<Tensor<f64>> {
    if !(fwhm_px > 0.0) || !fwhm_px.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!("fwhm_px must be positive, got {fwhm_px}")));
    }
    let sigma = fwhm_px / FWHM_PER_SIGMA;
    let radius = (3.0 * sigma).ceil() as usize;
    separable(image, &gaussian_kernel(sigma, radius))
}

/// Zero-padded separable correlation with a symmetric odd-length kernel.
pub fn separable(image: &Tensor<f64>, kernel: &[f64]) -> Result<Tensor<f64>> {
    let [h, w] = image.dims2("separable filter")?;
    let r = kernel.len() / 2;
    let src = image.data();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                let sx = x as isize + t as isize - r as isize;
                if sx >= 0 && (sx as usize) < w {
                    s += k * src[y * w + sx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                let sy = y as isize + t as isize - r as isize;
                if sy >= 0 && (sy as usize) < h {
                    s += k * tmp[sy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    Tensor::from_vec(&[h, w], out)
}

fn morph(mask: &Tensor<f64>, radius: usize, dilate: bool) -> Result<Tensor<f64>> {
    let [h, w] = mask.dims2("morphology")?;
    let r = radius as isize;
    let m = mask.data();
    let out = Tensor::from_fn(&[h, w], |i| {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        let mut any = false;
        let mut all = true;
        for dy in -r..=r {
            for dx in -r..=r {
                let (sy, sx) = (y + dy, x + dx);
                let inside = sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w;
                let on = inside && m[sy as usize * w + sx as usize] > 0.5;
                any |= on;
                all &= on;
            }
        }
        let v = if dilate { any } else { all };
        if v {
            1.0
        } else {
            0.0
        }
    });
    Ok(out)
}

/// Binary dilation with a `(2r+1)^2` square.
pub fn dilate(mask: &Tensor<f64>, radius: usize) -> Result<Tensor<f64>> {
    morph(mask, radius, true)
}

/// Binary erosion with a `(2r+1)^2` square; pixels beyond the border count as off.
pub fn erode(mask: &Tensor<f64>, radius: usize) -> Result<Tensor<f64>> {
    morph(mask, radius, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn unit_sigma_delta_response() {
        let mut d = Tensor::<f64>::zeros(&[15, 15]);
        d.set(&[7, 7], 1.0);
        let b = gaussian_blur_fwhm(&d, FWHM_PER_SIGMA).unwrap();
        // Normalised discrete kernel: taps exp(-k^2/2) / S with S = sum over |k| <= 3.
        let s: f64 = (-3..=3).map(|k: i32| (-0.5 * (k * k) as f64).exp()).sum();
        let center = b.at(&[7, 7]);
        assert!((center - 1.0 / (s * s)).abs() < 1e-15);
        assert!((center - 1.0 / (2.0 * PI)).abs() < 1e-3);
        let ratio = b.at(&[7, 8]) / center;
        assert!((ratio - (-0.5f64).exp()).abs() < 1e-12);
        assert!((b.sum() - 1.0).abs() < 1e-12);
        assert_eq!(b.at(&[7, 11]), 0.0);
    }

    #[test]
    fn blur_rejects_nonpositive_fwhm() {
        let d = Tensor::<f64>::zeros(&[4, 4]);
        assert!(gaussian_blur_fwhm(&d, 0.0).is_err());
        assert!(gaussian_blur_fwhm(&d, -1.0).is_err());
    }

    #[test]
    fn morphology_on_a_square() {
        let mut m = Tensor::<f64>::zeros(&[9, 9]);
        for y in 3..6 {
            for x in 3..6 {
                m.set(&[y, x], 1.0);
            }
        }
        assert_eq!(dilate(&m, 1).unwrap().sum(), 25.0);
        assert_eq!(dilate(&m, 2).unwrap().sum(), 49.0);
        let e = erode(&m, 1).unwrap();
        assert_eq!(e.sum(), 1.0);
        assert_eq!(e.at(&[4, 4]), 1.0);
    }
}
