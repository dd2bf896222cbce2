//! Scalar diagnostics shared by the sampler, depth fusion and the CLI.

use serde::{Deserialize, Serialize};

use crate::geometry::CropLayout;
use crate::image::Image;

/// Root-mean-square difference over all elements.
pub fn rmse(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "rmse operands differ in length");
    if a.is_empty() {
        return 0.0;
    }
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    (s / a.len() as f64).sqrt()
}

/// RMSE over the pixels where `mask` is true, all channels.
pub fn masked_rmse(a: &Image, b: &Image, mask: &[bool]) -> f64 {
    assert_eq!(a.dims(), b.dims());
    let c = a.channels();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (q, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for k in 0..c {
            let d = a.data()[q * c + k] as f64 - b.data()[q * c + k] as f64;
            sum += d * d;
        }
        count += c;
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Mean absolute horizontal gradient on crop-boundary columns versus all
/// other columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeamMetric {
    pub seam: f64,
    pub interior: f64,
}

impl SeamMetric {
    pub fn ratio(&self) -> f64 {
        if self.interior == 0.0 {
            if self.seam == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            self.seam / self.interior
        }
    }
}

/// Horizontal-gradient seam metric of `image` for the crop edges of `layout`.
pub fn seam_metric(image: &Image, layout: &CropLayout) -> SeamMetric {
    let (w, h, c) = image.dims();
    let seams = layout.seam_columns();
    let mut is_seam = vec![false; w];
    for &u in &seams {
        is_seam[u] = true;
    }
    let last = if layout.is_cyclic() { w } else { w.saturating_sub(1) };
    let (mut s_sum, mut s_n, mut i_sum, mut i_n) = (0.0, 0usize, 0.0, 0usize);
    for u in 0..last {
        let next = (u + 1) % w;
        let mut g = 0.0;
        for y in 0..h {
            for k in 0..c {
                g += (image.get(next, y, k) as f64 - image.get(u, y, k) as f64).abs();
            }
        }
        if is_seam[u] {
            s_sum += g;
            s_n += h * c;
        } else {
            i_sum += g;
            i_n += h * c;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    SeamMetric {
        seam: mean(s_sum, s_n),
        interior: mean(i_sum, i_n),
    }
}

/// Least-squares `(a, b)` with `a · est + b ≈ truth`.
pub fn affine_gauge(est: &[f64], truth: &[f64]) -> (f64, f64) {
    let n = est.len() as f64;
    let me = est.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&x, &y) in est.iter().zip(truth) {
        sxy += (x - me) * (y - mt);
        sxx += (x - me) * (x - me);
    }
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (a, mt - a * me)
}

/// RMSE after the optimal affine change of gauge of `est` onto `truth`.
pub fn gauge_aligned_rmse(est: &[f64], truth: &[f64]) -> f64 {
    let (a, b) = affine_gauge(est, truth);
    let s: f64 = est
        .iter()
        .zip(truth)
        .map(|(&x, &y)| (a * x + b - y).powi(2))
        .sum();
    (s / est.len() as f64).sqrt()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
