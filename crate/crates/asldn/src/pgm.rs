//! 8-bit binary PGM (`P5`) export.

use std::path::Path;

use asldn_core::Tensor;

use crate::error::{Error, Result};
use crate::format::write_atomic;

/// Encodes `[H, W]` gray levels.
pub fn encode(height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), height * width);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Linear window `[lo, hi]` to `0..=255`, clamped.
pub fn window(image: &Tensor<f64>, lo: f64, hi: f64) -> Vec<u8> {
    image
        .data()
        .iter()
        .map(|&v| {
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            if t.is_nan() {
                0
            } else {
                (t * 255.0).round() as u8
            }
        })
        .collect()
}

/// Correlation map rendering: `r` in `[threshold, 1]` maps to gray `1..=255`,
/// zeroed pixels stay 0.
pub fn correlation_levels(map: &Tensor<f64>, threshold: f64) -> Vec<u8> {
    map.data()
        .iter()
        .map(|&r| {
            if r > threshold {
                let t = ((r - threshold) / (1.0 - threshold)).clamp(0.0, 1.0);
                1 + (t * 254.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Stacks `[H, W]` images vertically and writes them windowed to `[0, display_max]`.
pub fn write_panel(path: &Path, rows: &[&Tensor<f64>], display_max: f64) -> Result<()> {
    let Some(first) = rows.first() else {
        return Err(Error::Invalid("empty panel".into()));
    };
    let [h, w] = first.dims2("panel")?;
    let mut pixels = Vec::with_capacity(rows.len() * h * w);
    for r in rows {
        if r.shape() != first.shape() {
            return Err(Error::Invalid("panel rows differ in shape".into()));
        }
        pixels.extend(window(r, 0.0, display_max));
    }
    write_atomic(path, &encode(rows.len() * h, w, &pixels))
}
