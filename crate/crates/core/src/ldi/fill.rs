//! Fallback inpainting: harmonic diffusion of a layer's own content into
//! the band it is hidden behind.

use serde::{Deserialize, Serialize};

use super::LayeredDepthImage;
use crate::image::{DepthMap, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FillConfig {
    /// Maximum distance (4-neighborhood steps) from a layer's own pixels.
    pub band: usize,
    /// Jacobi sweeps after the onion-peel initialization.
    pub iterations: usize,
}

impl Default for FillConfig {
    fn default() -> Self {
        Self {
            band: 8,
            iterations: 200,
        }
    }
}

fn neighbors(q: usize, w: usize, h: usize, wrap: bool) -> impl Iterator<Item = usize> {
    let (x, y) = (q % w, q / w);
    let left = if x > 0 {
        Some(q - 1)
    } else if wrap {
        Some(q + w - 1)
    } else {
        None
    };
    let right = if x + 1 < w {
        Some(q + 1)
    } else if wrap {
        Some(q + 1 - w)
    } else {
        None
    };
    let up = (y > 0).then(|| q - w);
    let down = (y + 1 < h).then(|| q + w);
    [left, right, up, down].into_iter().flatten()
}

/// Fills `candidates` pixels within `band` steps of `known` by onion
/// peeling followed by Jacobi iterations of the 4-neighbor Laplacian with
/// `known` held fixed. Returns the mask of filled pixels.
pub fn fill_region(
    color: &mut Image,
    depth: &mut DepthMap,
    known: &[bool],
    candidates: &[bool],
    wrap: bool,
    cfg: &FillConfig,
) -> Vec<bool> {
    let (w, h, c) = color.dims();
    let mut has = known.to_vec();
    let mut filled = vec![false; w * h];
    let mut order: Vec<usize> = Vec::new();
    let mut front: Vec<usize> = (0..w * h).filter(|&q| known[q]).collect();

    for _ in 0..cfg.band {
        let mut ring: Vec<usize> = front
            .iter()
            .flat_map(|&q| neighbors(q, w, h, wrap))
            .filter(|&p| candidates[p] && !has[p])
            .collect();
        ring.sort_unstable();
        ring.dedup();
        if ring.is_empty() {
            break;
        }
        for &p in &ring {
            let mut acc = vec![0.0f64; c + 1];
            let mut n = 0usize;
            for r in neighbors(p, w, h, wrap).filter(|&r| has[r]) {
                for (k, a) in acc[..c].iter_mut().enumerate() {
                    *a += color.data()[r * c + k] as f64;
                }
                acc[c] += depth.data()[r];
                n += 1;
            }
            for k in 0..c {
                color.data_mut()[p * c + k] = (acc[k] / n as f64) as f32;
            }
            depth.data_mut()[p] = acc[c] / n as f64;
        }
        // mark after the whole ring so each ring only sees the previous one
        for &p in &ring {
            has[p] = true;
            filled[p] = true;
        }
        order.extend_from_slice(&ring);
        front = ring;
    }

    for _ in 0..cfg.iterations {
        let mut next_color = Vec::with_capacity(order.len() * c);
        let mut next_depth = Vec::with_capacity(order.len());
        for &p in &order {
            let mut acc = vec![0.0f64; c + 1];
            let mut n = 0usize;
            for r in neighbors(p, w, h, wrap).filter(|&r| has[r]) {
                for (k, a) in acc[..c].iter_mut().enumerate() {
                    *a += color.data()[r * c + k] as f64;
                }
                acc[c] += depth.data()[r];
                n += 1;
            }
            for a in &acc[..c] {
                next_color.push((a / n as f64) as f32);
            }
            next_depth.push(acc[c] / n as f64);
        }
        for (i, &p) in order.iter().enumerate() {
            color.data_mut()[p * c..(p + 1) * c].copy_from_slice(&next_color[i * c..(i + 1) * c]);
            depth.data_mut()[p] = next_depth[i];
        }
    }
    filled
}

/// Fills each layer behind the pixels of nearer layers. Layers without
/// occupied pixels are returned untouched.
pub fn fill_holes(ldi: &LayeredDepthImage, cfg: &FillConfig) -> LayeredDepthImage {
    let mut out = ldi.clone();
    let n = ldi.width * ldi.height;
    let mut nearer = vec![false; n];
    for layer in out.layers.iter_mut() {
        if !layer.is_empty() {
            let candidates: Vec<bool> = (0..n).map(|q| nearer[q] && !layer.occupancy[q]).collect();
            layer.filled = fill_region(
                &mut layer.color,
                &mut layer.depth,
                &layer.occupancy,
                &candidates,
                ldi.wrap,
                cfg,
            );
        }
        for (q, &o) in layer.occupancy.iter().enumerate() {
            nearer[q] |= o;
        }
    }
    out
}
