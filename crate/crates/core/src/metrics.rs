//! Image quality metrics: PSNR, SSIM, ROI SNR, GM/WM contrast and voxelwise
//! correlation maps across subjects.
//!
//! All functions take `[H, W]` images and binary masks (values > 0.5 are "in").

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// Float math for no_std builds; with std linked the inherent methods win.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::filter;
use crate::tensor::Tensor;

/// Value reported for PSNR when the images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Pearson r at or below this is zeroed in correlation maps.
pub const CORRELATION_THRESHOLD: f64 = 0.3;
/// Dilation (px) applied to GM ∪ WM to form the evaluation region.
pub const BRAIN_DILATION: usize = 2;
/// Erosion (px) applied to the WM mask to form the noise ROI.
pub const WM_EROSION: usize = 1;

fn same_shape(a: &Tensor<f64>, b: &Tensor<f64>, op: &'static str) -> Result<[usize; 2]> {
    let d = a.dims2(op)?;
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    Ok(d)
}

fn masked<'a>(img: &'a Tensor<f64>, mask: &'a Tensor<f64>) -> impl Iterator<Item = f64> + Clone + 'a {
    let m = mask.data();
    img.data().iter().zip(m).filter(|(_, &k)| k > 0.5).map(|(&v, _)| v)
}

fn count(mask: &Tensor<f64>) -> usize {
    mask.data().iter().filter(|&&k| k > 0.5).count()
}

/// Mean squared error, optionally restricted to a mask.
pub fn mse(test: &Tensor<f64>, truth: &Tensor<f64>, mask: Option<&Tensor<f64>>) -> Result<f64> {
    same_shape(test, truth, "mse")?;
    let (mut s, mut n) = (0.0, 0usize);
    for (i, (a, b)) in test.data().iter().zip(truth.data()).enumerate() {
        if mask.is_some_and(|m| m.data()[i] <= 0.5) {
            continue;
        }
        s += (a - b) * (a - b);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask("mse"));
    }
    Ok(s / n as f64)
}

/// `10 log10(range^2 / MSE)` over the whole image; [`PSNR_CAP_DB`] when MSE is 0.
pub fn psnr(test: &Tensor<f64>, truth: &Tensor<f64>, data_range: f64) -> Result<f64> {
    psnr_masked(test, truth, data_range, None)
}

pub fn psnr_masked(test: &Tensor<f64>, truth: &Tensor<f64>, data_range: f64, mask: Option<&Tensor<f64>>) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("data_range must be positive, got {data_range}")));
    }
    let e = mse(test, truth, mask)?;
    if e == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (data_range * data_range / e).log10())
}

/// Half-open pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

pub fn bounding_box(mask: &Tensor<f64>) -> Result<Option<BBox>> {
    let [h, w] = mask.dims2("bounding_box")?;
    let mut b: Option<BBox> = None;
    for y in 0..h {
        for x in 0..w {
            if mask.data()[y * w + x] > 0.5 {
                let r = b.get_or_insert(BBox {
                    y0: y,
                    y1: y + 1,
                    x0: x,
                    x1: x + 1,
                });
                r.y0 = r.y0.min(y);
                r.y1 = r.y1.max(y + 1);
                r.x0 = r.x0.min(x);
                r.x1 = r.x1.max(x + 1);
            }
        }
    }
    Ok(b)
}

/// Valid-mode separable Gaussian window sums: output `[H-10, W-10]` for an 11-tap window.
fn window_sums(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(t, &kv)| kv * img[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(t, &kv)| kv * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every position where the 11x11 window fits.
pub fn ssim(test: &Tensor<f64>, truth: &Tensor<f64>, data_range: f64) -> Result<f64> {
    ssim_in(test, truth, data_range, None)
}

/// Mean SSIM over window centres inside `region` (all valid centres when
/// `region` is `None` or does not meet the valid area).
///
/// Gaussian window with sigma 1.5, `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`.
pub fn ssim_in(test: &Tensor<f64>, truth: &Tensor<f64>, data_range: f64, region: Option<BBox>) -> Result<f64> {
    let [h, w] = same_shape(test, truth, "ssim")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("data_range must be positive, got {data_range}")));
    }
    let k = filter::gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    let (x, y) = (test.data(), truth.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = window_sums(x, h, w, &k);
    let my = window_sums(y, h, w, &k);
    let sxx = window_sums(&xx, h, w, &k);
    let syy = window_sums(&yy, h, w, &k);
    let sxy = window_sums(&xy, h, w, &k);
    let c1 = (SSIM_K1 * data_range) * (SSIM_K1 * data_range);
    let c2 = (SSIM_K2 * data_range) * (SSIM_K2 * data_range);

    let r = SSIM_WINDOW / 2;
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let select = |region: Option<BBox>| -> (usize, usize, usize, usize) {
        match region {
            Some(b) => {
                let y0 = b.y0.max(r) - r;
                let y1 = b.y1.min(h - r).saturating_sub(r).min(oh);
                let x0 = b.x0.max(r) - r;
                let x1 = b.x1.min(w - r).saturating_sub(r).min(ow);
                (y0, y1, x0, x1)
            }
            None => (0, oh, 0, ow),
        }
    };
    let (mut y0, mut y1, mut x0, mut x1) = select(region);
    if y0 >= y1 || x0 >= x1 {
        (y0, y1, x0, x1) = select(None);
    }
    let mut total = 0.0;
    for yy in y0..y1 {
        for xx in x0..x1 {
            let i = yy * ow + xx;
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            let num = (2.0 * ux * uy + c1) * (2.0 * cov + c2);
            let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
            total += num / den;
        }
    }
    Ok(total / ((y1 - y0) * (x1 - x0)) as f64)
}

/// Mean over the GM ROI divided by the population standard deviation over
/// the WM ROI; `+inf` when that deviation is zero.
pub fn roi_snr(img: &Tensor<f64>, gm_mask: &Tensor<f64>, wm_mask: &Tensor<f64>) -> Result<f64> {
    same_shape(img, gm_mask, "roi_snr")?;
    same_shape(img, wm_mask, "roi_snr")?;
    let n_gm = count(gm_mask);
    let n_wm = count(wm_mask);
    if n_gm == 0 {
        return Err(Error::EmptyMask("gm"));
    }
    if n_wm == 0 {
        return Err(Error::EmptyMask("wm"));
    }
    if n_wm < 2 {
        return Err(Error::InvalidArgument("white matter ROI needs at least 2 pixels".into()));
    }
    let gm_mean = masked(img, gm_mask).sum::<f64>() / n_gm as f64;
    let wm = masked(img, wm_mask);
    let wm_mean = wm.clone().sum::<f64>() / n_wm as f64;
    let var = wm.map(|v| (v - wm_mean) * (v - wm_mean)).sum::<f64>() / n_wm as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(gm_mean / sd)
}

/// Mean over GM divided by mean over WM.
pub fn gmwm_contrast(img: &Tensor<f64>, gm_mask: &Tensor<f64>, wm_mask: &Tensor<f64>) -> Result<f64> {
    same_shape(img, gm_mask, "gmwm_contrast")?;
    same_shape(img, wm_mask, "gmwm_contrast")?;
    let (n_gm, n_wm) = (count(gm_mask), count(wm_mask));
    if n_gm == 0 {
        return Err(Error::EmptyMask("gm"));
    }
    if n_wm == 0 {
        return Err(Error::EmptyMask("wm"));
    }
    let gm = masked(img, gm_mask).sum::<f64>() / n_gm as f64;
    let wm = masked(img, wm_mask).sum::<f64>() / n_wm as f64;
    if wm == 0.0 {
        return Err(Error::ZeroWhiteMatterMean);
    }
    Ok(gm / wm)
}

/// Pearson correlation with population moments; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Per-pixel Pearson r across subjects between outputs and references,
/// with `r <= threshold` set to 0.
pub fn correlation_map(outputs: &[Tensor<f64>], references: &[Tensor<f64>], threshold: f64) -> Result<Tensor<f64>> {
    const MIN_SUBJECTS: usize = 3;
    if outputs.len() < MIN_SUBJECTS || references.len() < MIN_SUBJECTS {
        return Err(Error::TooFewSubjects {
            needed: MIN_SUBJECTS,
            got: outputs.len().min(references.len()),
        });
    }
    if outputs.len() != references.len() {
        return Err(Error::InvalidArgument("outputs and references differ in subject count".into()));
    }
    let [h, w] = outputs[0].dims2("correlation_map")?;
    for (o, r) in outputs.iter().zip(references) {
        same_shape(&outputs[0], o, "correlation_map")?;
        same_shape(&outputs[0], r, "correlation_map")?;
    }
    let n = outputs.len();
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    Ok(Tensor::from_fn(&[h, w], |p| {
        for s in 0..n {
            a[s] = outputs[s].data()[p];
            b[s] = references[s].data()[p];
        }
        let r = pearson(&a, &b);
        if r > threshold {
            r
        } else {
            0.0
        }
    }))
}

/// GM ∪ WM dilated by [`BRAIN_DILATION`] pixels.
pub fn evaluation_region(gm_mask: &Tensor<f64>, wm_mask: &Tensor<f64>) -> Result<Tensor<f64>> {
    let union = gm_mask.zip_map(wm_mask, "evaluation_region", |a, b| if a > 0.5 || b > 0.5 { 1.0 } else { 0.0 })?;
    filter::dilate(&union, BRAIN_DILATION)
}

/// WM mask eroded by [`WM_EROSION`] pixels (falls back to the full mask if erosion empties it).
pub fn wm_roi(wm_mask: &Tensor<f64>) -> Result<Tensor<f64>> {
    let e = filter::erode(wm_mask, WM_EROSION)?;
    Ok(if count(&e) >= 2 { e } else { wm_mask.clone() })
}

/// One CSV row of an evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub subject_id: String,
    pub method: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub snr: f64,
    pub gmwm_contrast: f64,
}

/// Masks and reference shared by every method evaluated on one subject.
#[derive(Debug, Clone)]
pub struct EvaluationContext<'a> {
    pub truth: &'a Tensor<f64>,
    pub gm_mask: &'a Tensor<f64>,
    pub wm_mask: &'a Tensor<f64>,
    /// Common PSNR/SSIM range, the maximum of the pseudo gold standard.
    pub data_range: f64,
}

impl EvaluationContext<'_> {
    /// All four metrics: PSNR inside the dilated brain region, SSIM over the
    /// region's bounding box, SNR against the eroded WM ROI and GM/WM contrast.
    pub fn row(&self, subject_id: &str, method: &str, img: &Tensor<f64>) -> Result<MetricRow> {
        let region = evaluation_region(self.gm_mask, self.wm_mask)?;
        let bbox = bounding_box(&region)?;
        Ok(MetricRow {
            subject_id: subject_id.into(),
            method: method.into(),
            psnr_db: psnr_masked(img, self.truth, self.data_range, Some(&region))?,
            ssim: ssim_in(img, self.truth, self.data_range, bbox)?,
            snr: roi_snr(img, self.gm_mask, &wm_roi(self.wm_mask)?)?,
            gmwm_contrast: gmwm_contrast(img, self.gm_mask, self.wm_mask)?,
        })
    }
}

/// Cohort statistics for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub method: String,
    pub count: usize,
    /// psnr_db, ssim, snr, gmwm_contrast.
    pub mean: [f64; 4],
    /// Population standard deviation, same order as `mean`.
    pub std: [f64; 4],
}

/// Per-method mean and population std, methods in order of first appearance.
pub fn aggregate(rows: &[MetricRow]) -> Vec<Aggregate> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let vals: Vec<[f64; 4]> = rows
                .iter()
                .filter(|r| r.method == m)
                .map(|r| [r.psnr_db, r.ssim, r.snr, r.gmwm_contrast])
                .collect();
            let n = vals.len() as f64;
            let mut mean = [0.0; 4];
            let mut std = [0.0; 4];
            for k in 0..4 {
                mean[k] = vals.iter().map(|v| v[k]).sum::<f64>() / n;
                std[k] = (vals.iter().map(|v| (v[k] - mean[k]) * (v[k] - mean[k])).sum::<f64>() / n).sqrt();
            }
            Aggregate {
                method: m.into(),
                count: vals.len(),
                mean,
                std,
            }
        })
        .collect()
}

/// Evaluation rows plus one correlation map per method.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub correlation_maps: Vec<(String, Tensor<f64>)>,
}

impl MetricsReport {
    pub fn aggregates(&self) -> Vec<Aggregate> {
        aggregate(&self.rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[h, w], |i| ((i * 37) % 101) as f64 + (i / w) as f64)
    }

    #[test]
    fn psnr_identities() {
        let t = ramp(16, 16);
        assert_eq!(psnr(&t, &t, 100.0).unwrap(), PSNR_CAP_DB);
        let truth = Tensor::full(&[8, 8], 100.0);
        let test = Tensor::full(&[8, 8], 110.0);
        assert_eq!(psnr(&test, &truth, 100.0).unwrap(), 20.0);
        assert!(psnr(&test, &Tensor::zeros(&[8, 7]), 100.0).is_err());
        assert!(psnr(&test, &truth, 0.0).is_err());
    }

    #[test]
    fn ssim_identity_symmetry_and_sign() {
        let a = ramp(24, 20);
        assert_eq!(ssim(&a, &a, 140.0).unwrap(), 1.0);
        let b = a.map(|v| (v * 0.7).sin() * 30.0 + v);
        let ab = ssim(&a, &b, 140.0).unwrap();
        let ba = ssim(&b, &a, 140.0).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
        assert!(ab < 1.0);
        let neg = a.map(|v| 200.0 - v);
        assert!(ssim(&a, &neg, 140.0).unwrap() < 1.0);
        assert!(matches!(
            ssim(&Tensor::zeros(&[10, 12]), &Tensor::zeros(&[10, 12]), 1.0),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn roi_snr_arithmetic() {
        let gm = Tensor::from_vec(&[1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let wm = Tensor::from_vec(&[1, 4], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let img = Tensor::from_vec(&[1, 4], vec![60.0, 60.0, 20.0, 30.0]).unwrap();
        assert_eq!(roi_snr(&img, &gm, &wm).unwrap(), 12.0);
        assert!((roi_snr(&img.map(|v| v * 3.5), &gm, &wm).unwrap() - 12.0).abs() < 1e-12);
        // Shifting moves only the numerator.
        assert!((roi_snr(&img.map(|v| v + 10.0), &gm, &wm).unwrap() - 14.0).abs() < 1e-12);
        let flat = Tensor::from_vec(&[1, 4], vec![60.0, 60.0, 25.0, 25.0]).unwrap();
        assert_eq!(roi_snr(&flat, &gm, &wm).unwrap(), f64::INFINITY);
        assert!(matches!(roi_snr(&img, &Tensor::zeros(&[1, 4]), &wm), Err(Error::EmptyMask("gm"))));
        let one = Tensor::from_vec(&[1, 4], vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(roi_snr(&img, &gm, &one).is_err());
    }

    #[test]
    fn contrast_of_flat_tissue() {
        let gm = Tensor::from_vec(&[1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let wm = Tensor::from_vec(&[1, 4], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let img = Tensor::from_vec(&[1, 4], vec![60.0, 60.0, 25.0, 25.0]).unwrap();
        assert_eq!(gmwm_contrast(&img, &gm, &wm).unwrap(), 2.4);
        assert!((gmwm_contrast(&img.map(|v| v * 0.37), &gm, &wm).unwrap() - 2.4).abs() < 1e-12);
        let dead = Tensor::from_vec(&[1, 4], vec![60.0, 60.0, 0.0, 0.0]).unwrap();
        assert!(matches!(gmwm_contrast(&dead, &gm, &wm), Err(Error::ZeroWhiteMatterMean)));
    }

    #[test]
    fn correlation_rules() {
        let refs: Vec<Tensor<f64>> = (0..5).map(|s| Tensor::from_fn(&[2, 2], |p| (s * (p + 1)) as f64)).collect();
        let mut refs_const = refs.clone();
        for r in &mut refs_const {
            r.data_mut()[0] = 4.0;
        }
        let m = correlation_map(&refs_const, &refs_const, 0.3).unwrap();
        assert_eq!(m.data()[0], 0.0);
        for &v in &m.data()[1..] {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            correlation_map(&refs[..2], &refs[..2], 0.3),
            Err(Error::TooFewSubjects { .. })
        ));
    }

    #[test]
    fn aggregate_single_row_and_fixture() {
        let row = |m: &str, p: f64| MetricRow {
            subject_id: "s".into(),
            method: m.into(),
            psnr_db: p,
            ssim: 0.5,
            snr: 3.0,
            gmwm_contrast: 2.0,
        };
        let a = aggregate(&[row("x", 20.0)]);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].mean, [20.0, 0.5, 3.0, 2.0]);
        assert_eq!(a[0].std, [0.0; 4]);
        let a = aggregate(&[row("x", 20.0), row("y", 1.0), row("x", 22.0), row("x", 27.0)]);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].method, "x");
        assert_eq!(a[0].count, 3);
        assert_eq!(a[0].mean[0], 23.0);
        assert!((a[0].std[0] - (26.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
