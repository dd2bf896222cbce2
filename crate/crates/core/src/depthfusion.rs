//! Panoramic depth from overlapping per-crop estimates by alternating a
//! closed-form depth average with per-patch piecewise-linear alignment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_forward, CropLayout, SENTINEL};
use crate::image::{DepthMap, Image};
use crate::metrics::{seam_metric, SeamMetric};
use crate::oracle::{CropContext, DepthOracle};
use crate::plmap::{self, FitOptions, KnotSupport, PiecewiseLinearMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub iters: usize,
    /// Segments `K` per alignment map.
    pub segments: usize,
    /// Patch whose map stays the identity; `None` leaves the gauge free.
    pub anchor_index: Option<usize>,
    pub monotone: bool,
    pub min_slope: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            iters: 4,
            segments: 8,
            anchor_index: Some(0),
            monotone: true,
            min_slope: 1e-3,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.iters == 0 || self.segments == 0 {
            return Err(Error::Config("fusion needs iters >= 1 and segments >= 1".into()));
        }
        if self.monotone && !(self.min_slope > 0.0) {
            return Err(Error::Config("min_slope must be positive".into()));
        }
        if let Some(a) = self.anchor_index {
            if a >= n {
                return Err(Error::Config(format!("anchor patch {a} out of range for {n} patches")));
            }
        }
        Ok(())
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            monotone: self.monotone,
            min_slope: self.min_slope,
        }
    }
}

/// Fused panoramic disparity.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoDepth {
    pub depth: DepthMap,
    pub valid: Vec<bool>,
}

/// One depth estimate per crop of `pano`.
pub fn estimate_patches(pano: &Image, layout: &CropLayout, oracle: &dyn DepthOracle) -> Result<Vec<DepthMap>> {
    pano.ensure_dims("panorama", layout.canvas_width, layout.canvas_height)?;
    layout
        .maps
        .par_iter()
        .map(|map| {
            let k = map.crop_index;
            let crop = project_forward(map, pano)?;
            let ctx = CropContext {
                index: k,
                yaw: layout.yaw(k),
                map,
            };
            let d = oracle.estimate(&crop, &ctx).map_err(|e| Error::Oracle {
                crop: k,
                step: 0,
                message: e.message,
            })?;
            if d.dims() != (crop.width(), crop.height(), 1) {
                return Err(Error::Oracle {
                    crop: k,
                    step: 0,
                    message: format!("depth has dims {:?}", d.dims()),
                });
            }
            if !d.is_finite() {
                return Err(Error::Oracle {
                    crop: k,
                    step: 0,
                    message: "depth is not finite".into(),
                });
            }
            Ok(d)
        })
        .collect()
}

/// Values of `patch` at mapped crop pixels, in crop order.
fn mapped_values(layout: &CropLayout, k: usize, patch: &DepthMap) -> Vec<f64> {
    layout.maps[k]
        .forward
        .iter()
        .zip(patch.data())
        .filter(|(&q, _)| q != SENTINEL)
        .map(|(_, &v)| v)
        .collect()
}

/// Values of the canvas depth `d` sampled at crop `k`'s mapped pixels.
fn sampled_canvas(layout: &CropLayout, k: usize, d: &DepthMap) -> Vec<f64> {
    layout.maps[k]
        .forward
        .iter()
        .filter(|&&q| q != SENTINEL)
        .map(|&q| d.data()[q as usize])
        .collect()
}

/// Unweighted per-pixel mean of back-projected aligned patches.
pub fn solve_depth_stage(aligned: &[DepthMap], layout: &CropLayout) -> Result<PanoDepth> {
    if aligned.len() != layout.n() {
        return Err(Error::Config(format!("expected {} patches, got {}", layout.n(), aligned.len())));
    }
    let (cw, ch) = (layout.canvas_width, layout.canvas_height);
    let mut sum = vec![0.0f64; cw * ch];
    let mut count = vec![0u32; cw * ch];
    for (map, patch) in layout.maps.iter().zip(aligned) {
        patch.ensure_dims("aligned patch", map.crop_width, map.crop_height)?;
        if !patch.is_finite() {
            return Err(Error::NonFiniteInput("aligned patch"));
        }
        for (&q, &v) in map.forward.iter().zip(patch.data()) {
            if q != SENTINEL {
                sum[q as usize] += v;
                count[q as usize] += 1;
            }
        }
    }
    if let Some(q) = count.iter().position(|&c| c == 0) {
        return Err(Error::CoverageGap {
            column: q % cw,
            row: q / cw,
        });
    }
    let data = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    Ok(PanoDepth {
        depth: DepthMap::from_vec(cw, ch, 1, data)?,
        valid: vec![true; cw * ch],
    })
}

/// Knot support of each raw patch: `K` uniform segments over its mapped
/// value range, with data-starved segments merged.
pub fn patch_supports(raw: &[DepthMap], layout: &CropLayout, segments: usize) -> Vec<KnotSupport> {
    raw.iter()
        .enumerate()
        .map(|(k, patch)| {
            let xs = mapped_values(layout, k, patch);
            let (lo, hi) = xs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
            let support = KnotSupport::analyze(plmap::uniform_knots(lo, hi, segments), &xs);
            if support.merged_segments() > 0 {
                log::warn!(
                    "patch {k}: merged {} under-determined segment(s)",
                    support.merged_segments()
                );
            }
            support
        })
        .collect()
}

/// Identity maps on each patch's knots.
pub fn identity_maps(supports: &[KnotSupport]) -> Vec<PiecewiseLinearMap> {
    supports
        .iter()
        .map(|s| PiecewiseLinearMap::new(s.knots.clone(), s.knots.clone()).expect("increasing knots"))
        .collect()
}

/// Per patch, least-squares alignment of the raw patch onto `d`.
pub fn solve_theta_stage(
    d: &PanoDepth,
    raw: &[DepthMap],
    supports: &[KnotSupport],
    layout: &CropLayout,
    config: &FusionConfig,
) -> Result<Vec<PiecewiseLinearMap>> {
    d.depth.ensure_dims("fused depth", layout.canvas_width, layout.canvas_height)?;
    let opts = config.fit_options();
    Ok((0..raw.len())
        .into_par_iter()
        .map(|k| {
            let support = &supports[k];
            if config.anchor_index == Some(k) {
                return PiecewiseLinearMap::new(support.knots.clone(), support.knots.clone())
                    .expect("increasing knots");
            }
            let xs = mapped_values(layout, k, &raw[k]);
            let targets = sampled_canvas(layout, k, &d.depth);
            plmap::fit(support, &xs, &targets, opts)
        })
        .collect())
}

/// `Σ_i Σ_p (D[F_i p] − G_i(raw_i p))²` over mapped crop pixels.
pub fn objective(d: &DepthMap, raw: &[DepthMap], maps: &[PiecewiseLinearMap], layout: &CropLayout) -> f64 {
    (0..raw.len())
        .map(|k| {
            let xs = mapped_values(layout, k, &raw[k]);
            let targets = sampled_canvas(layout, k, d);
            plmap::residual(&maps[k], &xs, &targets)
        })
        .sum()
}

fn apply_maps(raw: &[DepthMap], maps: &[PiecewiseLinearMap]) -> Result<Vec<DepthMap>> {
    raw.iter()
        .zip(maps)
        .map(|(patch, g)| DepthMap::from_vec(patch.width(), patch.height(), 1, g.apply(patch.data())?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HalfStep {
    Depth,
    Theta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRecord {
    pub iteration: usize,
    pub stage: HalfStep,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub depth: PanoDepth,
    pub maps: Vec<PiecewiseLinearMap>,
    pub objective: Vec<ObjectiveRecord>,
    /// Seam metric of the fused depth after each depth half-step.
    pub seams: Vec<SeamMetric>,
}

/// Relative slack allowed on the objective between half-steps.
pub const OBJECTIVE_TOLERANCE: f64 = 1e-9;

/// Alternating minimization over precomputed raw patches.
pub fn fuse_patches(raw: &[DepthMap], layout: &CropLayout, config: &FusionConfig) -> Result<FusionOutput> {
    config.validate(layout.n())?;
    if raw.len() != layout.n() {
        return Err(Error::Config(format!("expected {} patches, got {}", layout.n(), raw.len())));
    }
    for (map, patch) in layout.maps.iter().zip(raw) {
        patch.ensure_dims("raw patch", map.crop_width, map.crop_height)?;
        if !patch.is_finite() {
            return Err(Error::NonFiniteInput("raw patch"));
        }
    }
    let supports = patch_supports(raw, layout, config.segments);
    let mut maps = identity_maps(&supports);
    let mut history: Vec<ObjectiveRecord> = Vec::with_capacity(2 * config.iters);
    let mut seams = Vec::with_capacity(config.iters);
    let mut depth = None;

    let record = |history: &mut Vec<ObjectiveRecord>, iteration, stage, value: f64| -> Result<()> {
        if let Some(prev) = history.last() {
            let increase = value - prev.value;
            if increase > OBJECTIVE_TOLERANCE * prev.value.max(1.0) {
                return Err(Error::ObjectiveIncrease {
                    iteration,
                    stage: match stage {
                        HalfStep::Depth => "depth stage",
                        HalfStep::Theta => "alignment stage",
                    },
                    increase,
                });
            }
        }
        history.push(ObjectiveRecord { iteration, stage, value });
        Ok(())
    };

    for iteration in 0..config.iters {
        let aligned = apply_maps(raw, &maps)?;
        let d = solve_depth_stage(&aligned, layout)?;
        record(&mut history, iteration, HalfStep::Depth, objective(&d.depth, raw, &maps, layout))?;
        seams.push(seam_metric(&d.depth.map(|v| v as f32), layout));

        maps = solve_theta_stage(&d, raw, &supports, layout, config)?;
        record(&mut history, iteration, HalfStep::Theta, objective(&d.depth, raw, &maps, layout))?;
        log::debug!(
            "fusion iteration {iteration}: objective {:.6e}",
            history.last().map_or(0.0, |r| r.value)
        );
        depth = Some(d);
    }
    Ok(FusionOutput {
        depth: depth.expect("at least one iteration"),
        maps,
        objective: history,
        seams,
    })
}

/// Estimates patches with `oracle` and fuses them.
pub fn fuse(pano: &Image, layout: &CropLayout, oracle: &dyn DepthOracle, config: &FusionConfig) -> Result<FusionOutput> {
    config.validate(layout.n())?;
    let raw = estimate_patches(pano, layout, oracle)?;
    fuse_patches(&raw, layout, config)
}
