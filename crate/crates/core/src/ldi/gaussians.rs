use rayon::prelude::*;

use super::LayeredDepthImage;
use crate::error::{Error, Result};
use crate::geometry::CylinderSpec;

/// Per-pixel 3D Gaussian initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSeed {
    pub position: [f32; 3],
    /// Linear RGB, no spherical harmonics.
    pub color: [f32; 3],
    pub scale: [f32; 3],
    /// Quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
    pub opacity: f32,
    pub layer_id: u8,
}

pub const INITIAL_OPACITY: f32 = 0.5;
pub const IDENTITY_ROTATION: [f32; 4] = [1.0, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    pub seeds: Vec<GaussianSeed>,
    /// Pixels dropped for non-positive or non-finite disparity.
    pub skipped: usize,
}

/// One seed per occupied or filled pixel of every layer, unprojected onto a
/// cylinder of radius `1 / disparity`. Seeds are ordered by layer, then
/// row-major pixel.
pub fn init_gaussians(ldi: &LayeredDepthImage, cyl: &CylinderSpec) -> Result<SeedSet> {
    if cyl.width != ldi.width || cyl.height != ldi.height {
        return Err(Error::Dimension {
            context: "cylinder for LDI",
            expected: (ldi.width, ldi.height, 1),
            actual: (cyl.width, cyl.height, 1),
        });
    }
    let w = ldi.width;
    let f = cyl.focal_px;
    let row0 = cyl.center_row() as f64;
    let pixel_angle = cyl.angle_per_px();

    let per_layer: Vec<(Vec<GaussianSeed>, usize)> = ldi
        .layers
        .par_iter()
        .enumerate()
        .map(|(id, layer)| {
            let c = layer.color.channels();
            let mut seeds = Vec::new();
            let mut skipped = 0usize;
            for q in 0..w * ldi.height {
                if !(layer.occupancy[q] || layer.filled[q]) {
                    continue;
                }
                let disparity = layer.depth.data()[q];
                if !(disparity > 0.0 && disparity.is_finite()) {
                    skipped += 1;
                    continue;
                }
                let (u, v) = ((q % w) as f64, (q / w) as f64);
                let r = 1.0 / disparity;
                let phi = cyl.azimuth(u);
                let px = layer.color.pixel(q);
                let color = if c >= 3 { [px[0], px[1], px[2]] } else { [px[0]; 3] };
                let s = (pixel_angle * r) as f32;
                seeds.push(GaussianSeed {
                    position: [
                        (r * phi.sin()) as f32,
                        (-r * (v - row0) / f) as f32,
                        (r * phi.cos()) as f32,
                    ],
                    color,
                    scale: [s; 3],
                    rotation: IDENTITY_ROTATION,
                    opacity: INITIAL_OPACITY,
                    layer_id: id as u8,
                });
            }
            (seeds, skipped)
        })
        .collect();

    let skipped = per_layer.iter().map(|(_, s)| s).sum();
    if skipped > 0 {
        log::warn!("skipped {skipped} pixel(s) with non-positive disparity");
    }
    Ok(SeedSet {
        seeds: per_layer.into_iter().flat_map(|(s, _)| s).collect(),
        skipped,
    })
}
