//! Procedural panoramas and depth maps used by synthetic runs and tests.
//! All are periodic in the column index so they close seamlessly on a cylinder.

use std::f64::consts::TAU;

use rand::Rng;

use crate::image::{DepthMap, Image};
use crate::seed;

/// Smooth color panorama with values in roughly `[0.1, 0.9]`.
pub fn panorama(width: usize, height: usize, channels: usize, seed_value: u64) -> Image {
    let mut rng = seed::rng(seed::derive(seed_value, &[0xF1]));
    let params: Vec<(f64, f64, f64, f64, f64)> = (0..channels)
        .map(|_| {
            (
                rng.random_range(1..=3) as f64,
                rng.random_range(0.0..TAU),
                rng.random_range(2..=5) as f64,
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
            )
        })
        .collect();
    Image::from_fn(width, height, channels, |x, y, c| {
        let (k1, p1, k2, p2, p3) = params[c];
        let az = TAU * x as f64 / width as f64;
        let v = y as f64 / height as f64;
        (0.5 + 0.2 * (k1 * az + p1).sin() + 0.1 * (TAU * v + p2).cos() * (k2 * az + p3).sin()) as f32
    })
}

/// Smooth disparity panorama with values in roughly `[0.05, 0.95]`.
pub fn depth(width: usize, height: usize) -> DepthMap {
    DepthMap::from_fn(width, height, 1, |x, y, _| {
        let az = TAU * x as f64 / width as f64;
        let v = y as f64 / height as f64;
        0.5 + 0.25 * az.sin()
            + 0.12 * (7.0 * az + 0.3).sin() * (TAU * v).cos()
            + 0.08 * (13.0 * az + 0.5).cos()
            + 0.1 * (v - 0.5)
    })
}

/// Four constant disparity plateaus, one per quarter of the columns.
pub fn plateau_depth(width: usize, height: usize, levels: [f64; 4]) -> DepthMap {
    DepthMap::from_fn(width, height, 1, |x, _, _| levels[(4 * x / width).min(3)])
}
