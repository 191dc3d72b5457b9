//! Synthetic ASL subjects.
//!
//! A subject is a 2-D brain slice with a cortical grey-matter ribbon,
//! subcortical grey-matter nuclei and white matter inside, a clean CBF map
//! and a 40-frame series of noisy CBF frames (the quantity after label/control
//! subtraction and calibration). From the series we derive the four 10-frame
//! segment means used as training pairs and a pseudo gold standard.
//!
//! Noise law: every frame adds independent zero-mean Gaussian noise of
//! standard deviation `sigma`, optionally spatially correlated by a Gaussian
//! filter and renormalised back to `sigma`. Outlier frames scale that noise
//! by `outlier_scale` and add one regional artefact: either a positive spike
//! of `5 * outlier_scale * sigma` or a signal dropout (the clean signal
//! removed) inside a random ellipse covering a sizeable part of the brain.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// Float math for no_std builds; with std linked the inherent methods win.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::filter;
use crate::seed;
use crate::tensor::Tensor;

/// Frames per subject.
pub const FRAMES: usize = 40;
/// Frames per time segment.
pub const SEGMENT: usize = 10;
/// Robust z-score above which a frame is discarded by the cleaner.
pub const OUTLIER_Z: f64 = 2.5;

/// Baseline perfusion values in mL/100g/min.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueModel {
    pub gm_cbf: f64,
    pub wm_cbf: f64,
    /// Amplitude of the smooth multiplicative variation (0.15 = ±15 %).
    pub variation: f64,
}

impl Default for TissueModel {
    fn default() -> Self {
        Self {
            gm_cbf: 60.0,
            wm_cbf: 25.0,
            variation: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Per-frame noise standard deviation, in CBF units.
    pub gaussian_sigma: f64,
    /// Fraction of the 40 frames that are outliers (rounded to a frame count).
    pub outlier_rate: f64,
    pub outlier_scale: f64,
    /// Gaussian correlation length in pixels; 0 gives white noise.
    pub correlation_length: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::clinical_like(0)
    }
}

impl NoiseModel {
    /// Calibrated so that the pseudo gold standard's GM/WM-ROI SNR sits in the
    /// single digits, the regime of clinical single-delay pCASL data.
    pub const CLINICAL_LIKE_SIGMA: f64 = 130.0;

    pub fn clinical_like(seed: u64) -> Self {
        Self {
            gaussian_sigma: Self::CLINICAL_LIKE_SIGMA,
            outlier_rate: 0.0,
            outlier_scale: 1.0,
            correlation_length: 0.0,
            seed,
        }
    }

    pub fn white(sigma: f64, seed: u64) -> Self {
        Self {
            gaussian_sigma: sigma,
            seed,
            ..Self::clinical_like(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.gaussian_sigma >= 0.0) || !self.gaussian_sigma.is_finite() {
            return bad("gaussian_sigma must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return bad("outlier_rate must lie in [0, 1)");
        }
        if self.outlier_rate > 0.0 && !(self.outlier_scale > 1.0) {
            return bad("outlier_scale must exceed 1 when outlier_rate > 0");
        }
        if self.outlier_rate > 0.0 && !(self.gaussian_sigma > 0.0) {
            return bad("outliers are scaled from gaussian_sigma, which must be positive");
        }
        if !(self.correlation_length >= 0.0) {
            return bad("correlation_length must be non-negative");
        }
        Ok(())
    }

    /// Number of outlier frames in a 40-frame series.
    pub fn outlier_frames(&self) -> usize {
        (self.outlier_rate * FRAMES as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSubject {
    /// `[H, W]`, positive inside the brain and zero outside.
    pub clean_cbf: Tensor<f64>,
    /// `[H, W]` binary, disjoint from `wm_mask`.
    pub gm_mask: Tensor<f64>,
    pub wm_mask: Tensor<f64>,
    /// `[40, H, W]` noisy CBF frames.
    pub series: Tensor<f64>,
    pub outlier_flags: Vec<bool>,
}

impl PhantomSubject {
    pub fn shape(&self) -> (usize, usize) {
        let s = self.clean_cbf.shape();
        (s[0], s[1])
    }

    pub fn brain_mask(&self) -> Tensor<f64> {
        self.gm_mask
            .zip_map(&self.wm_mask, "brain mask", |a, b| if a > 0.5 || b > 0.5 { 1.0 } else { 0.0 })
            .expect("masks share a shape")
    }
}

/// Random smooth field with values in `[-1, 1]`.
fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    const TERMS: usize = 3;
    let waves: Vec<(f64, f64, f64)> = (0..TERMS)
        .map(|_| {
            let fy = rng.random_range(-1.5..1.5);
            let fx = rng.random_range(-1.5..1.5);
            let phase = rng.random_range(0.0..2.0 * PI);
            (fy, fx, phase)
        })
        .collect();
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            waves
                .iter()
                .map(|&(fy, fx, p)| (2.0 * PI * (fy * y + fx * x) + p).cos())
                .sum::<f64>()
                / TERMS as f64
        })
        .collect()
}

struct Anatomy {
    gm: Vec<bool>,
    wm: Vec<bool>,
    center: (f64, f64),
    axes: (f64, f64),
}

fn anatomy(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Anatomy {
    let (hf, wf) = (h as f64, w as f64);
    let cy = hf / 2.0 - 0.5 + rng.random_range(-0.03..0.03) * hf;
    let cx = wf / 2.0 - 0.5 + rng.random_range(-0.03..0.03) * wf;
    let a = 0.42 * hf * rng.random_range(0.95..1.05);
    let b = 0.36 * wf * rng.random_range(0.95..1.05);

    let outline_phase = rng.random_range(0.0..2.0 * PI);
    let gyri: [(f64, f64, f64); 2] = [
        (6.0, 0.06, rng.random_range(0.0..2.0 * PI)),
        (11.0, 0.04, rng.random_range(0.0..2.0 * PI)),
    ];
    let ribbon = 0.17 * rng.random_range(0.9..1.1);

    // Four subcortical nuclei, roughly mirrored left/right.
    let mut nuclei = Vec::with_capacity(4);
    for &(sy, sx) in &[(-0.12, -0.28), (-0.12, 0.28), (0.15, -0.18), (0.15, 0.18)] {
        let oy = (sy + rng.random_range(-0.04..0.04)) * a;
        let ox = (sx + rng.random_range(-0.04..0.04)) * b;
        let ry = 0.13 * a * rng.random_range(0.85..1.15);
        let rx = 0.11 * b * rng.random_range(0.85..1.15);
        nuclei.push((cy + oy, cx + ox, ry, rx));
    }

    let mut gm = vec![false; h * w];
    let mut wm = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = ((y as f64 - cy) / a, (x as f64 - cx) / b);
            let theta = dy.atan2(dx);
            let rho = (dy * dy + dx * dx).sqrt() / (1.0 + 0.03 * (3.0 * theta + outline_phase).sin());
            if rho > 1.0 {
                continue;
            }
            let thickness = ribbon + gyri.iter().map(|&(k, amp, p)| amp * (k * theta + p).sin()).sum::<f64>();
            let in_nucleus = nuclei.iter().any(|&(ny, nx, ry, rx)| {
                let (u, v) = ((y as f64 - ny) / ry, (x as f64 - nx) / rx);
                u * u + v * v <= 1.0
            });
            if rho >= 1.0 - thickness.max(0.05) || in_nucleus {
                gm[y * w + x] = true;
            } else {
                wm[y * w + x] = true;
            }
        }
    }
    Anatomy {
        gm,
        wm,
        center: (cy, cx),
        axes: (a, b),
    }
}

fn noise_field(rng: &mut ChaCha8Rng, h: usize, w: usize, sigma: f64, corr: f64) -> Vec<f64> {
    let mut white: Vec<f64> = (0..h * w)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z
        })
        .collect();
    if corr > 0.0 {
        let radius = (3.0 * corr).ceil() as usize;
        let k = filter::gaussian_kernel(corr, radius);
        // Interior variance of separably filtered unit white noise.
        let k2: f64 = k.iter().map(|v| v * v).sum();
        let norm = 1.0 / k2;
        let t = Tensor::from_vec(&[h, w], white).expect("shape");
        white = filter::separable(&t, &k).expect("rank 2").into_data();
        for v in &mut white {
            *v *= norm;
        }
    }
    for v in &mut white {
        *v *= sigma;
    }
    white
}

pub fn generate_subject(geometry_seed: u64, noise: &NoiseModel, shape: (usize, usize)) -> Result<PhantomSubject> {
    generate_subject_with(&TissueModel::default(), geometry_seed, noise, shape)
}

/// Generates one subject; geometry and noise use independent random streams.
pub fn generate_subject_with(
    tissue: &TissueModel,
    geometry_seed: u64,
    noise: &NoiseModel,
    (h, w): (usize, usize),
) -> Result<PhantomSubject> {
    if h < 32 || w < 32 {
        return Err(Error::InvalidArgument(alloc::format!("phantom needs at least 32x32, got {h}x{w}")));
    }
    noise.validate()?;

    let mut geo = seed::rng(seed::derive(geometry_seed, "geometry", 0));
    let anat = anatomy(&mut geo, h, w);
    let vg = smooth_field(&mut geo, h, w);
    let vw = smooth_field(&mut geo, h, w);
    let clean: Vec<f64> = (0..h * w)
        .map(|i| {
            if anat.gm[i] {
                tissue.gm_cbf * (1.0 + tissue.variation * vg[i])
            } else if anat.wm[i] {
                tissue.wm_cbf * (1.0 + tissue.variation * vw[i])
            } else {
                0.0
            }
        })
        .collect();

    let mut rng = seed::rng(seed::derive(noise.seed, "noise", 0));
    let mut flags = vec![false; FRAMES];
    let mut frames: Vec<usize> = (0..FRAMES).collect();
    frames.shuffle(&mut rng);
    for &f in frames.iter().take(noise.outlier_frames()) {
        flags[f] = true;
    }

    let mut series = Vec::with_capacity(FRAMES * h * w);
    for &outlier in &flags {
        let scale = if outlier { noise.outlier_scale } else { 1.0 };
        let n = noise_field(&mut rng, h, w, noise.gaussian_sigma * scale, noise.correlation_length);
        let mut frame: Vec<f64> = clean.iter().zip(&n).map(|(c, e)| c + e).collect();
        if outlier {
            let (cy, cx) = anat.center;
            let (a, b) = anat.axes;
            let oy = cy + rng.random_range(-0.5..0.5) * a;
            let ox = cx + rng.random_range(-0.5..0.5) * b;
            let ry = a * rng.random_range(0.3..0.6);
            let rx = b * rng.random_range(0.3..0.6);
            let spike = rng.random_bool(0.5);
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = ((y as f64 - oy) / ry, (x as f64 - ox) / rx);
                    if u * u + v * v > 1.0 {
                        continue;
                    }
                    let i = y * w + x;
                    if spike {
                        if clean[i] > 0.0 {
                            frame[i] += 5.0 * noise.outlier_scale * noise.gaussian_sigma;
                        }
                    } else {
                        frame[i] -= clean[i];
                    }
                }
            }
        }
        series.extend_from_slice(&frame);
    }

    let mask = |m: &[bool]| Tensor::from_fn(&[h, w], |i| if m[i] { 1.0 } else { 0.0 });
    Ok(PhantomSubject {
        clean_cbf: Tensor::from_vec(&[h, w], clean)?,
        gm_mask: mask(&anat.gm),
        wm_mask: mask(&anat.wm),
        series: Tensor::from_vec(&[FRAMES, h, w], series)?,
        outlier_flags: flags,
    })
}

/// Mean of frames `[start, end)` of a `[T, H, W]` series.
pub fn mean_frames(series: &Tensor<f64>, start: usize, end: usize) -> Result<Tensor<f64>> {
    let s = series.shape();
    if s.len() != 3 || end > s[0] || start >= end {
        return Err(Error::InvalidArgument(alloc::format!("frames {start}..{end} of series {s:?}")));
    }
    let plane = s[1] * s[2];
    let mut acc = vec![0.0; plane];
    for f in start..end {
        for (a, &v) in acc.iter_mut().zip(&series.data()[f * plane..(f + 1) * plane]) {
            *a += v;
        }
    }
    let k = 1.0 / (end - start) as f64;
    Tensor::from_vec(&[s[1], s[2]], acc.into_iter().map(|v| v * k).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMeans {
    pub input1: Tensor<f64>,
    pub ref1: Tensor<f64>,
    pub input2: Tensor<f64>,
    pub ref2: Tensor<f64>,
    /// The first segment, used as the test-time input.
    pub test_input: Tensor<f64>,
}

/// Splits the 40 frames into four 10-frame segments and averages each.
pub fn segment_means(subject: &PhantomSubject) -> Result<SegmentMeans> {
    let n = subject.series.shape().first().copied().unwrap_or(0);
    if n != FRAMES {
        return Err(Error::SeriesLength(n));
    }
    let seg = |k: usize| mean_frames(&subject.series, k * SEGMENT, (k + 1) * SEGMENT);
    let input1 = seg(0)?;
    Ok(SegmentMeans {
        test_input: input1.clone(),
        input1,
        ref1: seg(1)?,
        input2: seg(2)?,
        ref2: seg(3)?,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Simplified outlier-frame detector; returns `true` for frames that are kept.
///
/// Each frame is scored by its mean absolute deviation from the per-pixel
/// median image; frames whose robust z-score (median/MAD of those scores)
/// exceeds [`OUTLIER_Z`] are dropped.
pub fn clean_frames(series: &Tensor<f64>) -> Result<Vec<bool>> {
    let s = series.shape();
    if s.len() != 3 || s[0] == 0 {
        return Err(Error::InvalidArgument(alloc::format!("series shape {s:?}")));
    }
    let (n, plane) = (s[0], s[1] * s[2]);
    let data = series.data();
    let mut column = vec![0.0; n];
    let med_image: Vec<f64> = (0..plane)
        .map(|p| {
            for f in 0..n {
                column[f] = data[f * plane + p];
            }
            median(&mut column)
        })
        .collect();
    let scores: Vec<f64> = (0..n)
        .map(|f| {
            data[f * plane..(f + 1) * plane]
                .iter()
                .zip(&med_image)
                .map(|(v, m)| (v - m).abs())
                .sum::<f64>()
                / plane as f64
        })
        .collect();
    let mut tmp = scores.clone();
    let centre = median(&mut tmp);
    let mut dev: Vec<f64> = scores.iter().map(|s| (s - centre).abs()).collect();
    let mad = 1.4826 * median(&mut dev);
    Ok(scores
        .iter()
        .map(|&s| {
            let excess = s - centre;
            if mad > 0.0 {
                excess / mad <= OUTLIER_Z
            } else {
                excess <= 0.0
            }
        })
        .collect())
}

/// Pseudo gold standard with the list of frames the cleaner kept.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoGold {
    pub image: Tensor<f64>,
    pub kept: Vec<bool>,
}

/// Outlier cleaning, mean of the surviving frames, then Gaussian smoothing.
pub fn pseudo_gold_standard_detailed(subject: &PhantomSubject, fwhm_px: f64) -> Result<PseudoGold> {
    if !(fwhm_px > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("fwhm_px must be positive, got {fwhm_px}")));
    }
    let kept = clean_frames(&subject.series)?;
    let survivors = kept.iter().filter(|&&k| k).count();
    if survivors == 0 {
        return Err(Error::AllFramesDiscarded);
    }
    let (h, w) = subject.shape();
    let plane = h * w;
    let mut acc = vec![0.0; plane];
    for (f, _) in kept.iter().enumerate().filter(|(_, &k)| k) {
        for (a, &v) in acc.iter_mut().zip(&subject.series.data()[f * plane..(f + 1) * plane]) {
            *a += v;
        }
    }
    let k = 1.0 / survivors as f64;
    let mean = Tensor::from_vec(&[h, w], acc.into_iter().map(|v| v * k).collect())?;
    Ok(PseudoGold {
        image: filter::gaussian_blur_fwhm(&mean, fwhm_px)?,
        kept,
    })
}

pub fn pseudo_gold_standard(subject: &PhantomSubject, fwhm_px: f64) -> Result<Tensor<f64>> {
    Ok(pseudo_gold_standard_detailed(subject, fwhm_px)?.image)
}
