//! Deterministic synthetic oracles.
//!
//! The `wire_*` functions are the closed forms a synthetic-mode oracle
//! service must reproduce bit for bit: they use only `f32` adds and
//! multiplies on the request payload.

use std::sync::Arc;

use rand::Rng;

use super::{
    CropContext, DenoiseCondition, DenoiserOracle, DepthOracle, NoiseSchedule, OracleError,
    OracleResult,
};
use crate::geometry::project_forward;
use crate::image::{DepthMap, Image};
use crate::plmap::PiecewiseLinearMap;
use crate::seed;

/// `x + rate · (target − x)`, elementwise in `f32`.
pub fn wire_contract(x: &[f32], target: &[f32], rate: f32) -> Vec<f32> {
    x.iter()
        .zip(target)
        .map(|(&a, &b)| a + rate * (b - a))
        .collect()
}

/// Rec. 709 luma in `f32` of an interleaved buffer with `channels` channels.
pub fn wire_luma(data: &[f32], channels: usize) -> Vec<f32> {
    data.chunks_exact(channels)
        .map(|px| {
            if channels >= 3 {
                0.2126f32 * px[0] + 0.7152f32 * px[1] + 0.0722f32 * px[2]
            } else {
                px[0]
            }
        })
        .collect()
}

/// Per-yaw affine gain and offset of the `luma-affine` depth oracle:
/// `a = 1 + 0.1 s`, `b = 0.05 s` with `s = yaw / π − 1`.
pub fn wire_luma_affine_coeffs(yaw: f64) -> (f32, f32) {
    let s = (yaw / std::f64::consts::PI - 1.0) as f32;
    (1.0f32 + 0.1f32 * s, 0.05f32 * s)
}

/// `a · (0.2 + 0.8 · luma) + b`, the depth returned by `luma-affine`.
pub fn wire_luma_affine(data: &[f32], channels: usize, yaw: f64) -> Vec<f32> {
    let (a, b) = wire_luma_affine_coeffs(yaw);
    wire_luma(data, channels)
        .into_iter()
        .map(|l| a * (0.2f32 + 0.8f32 * l) + b)
        .collect()
}

/// Returns its input unchanged.
#[derive(Debug, Clone)]
pub struct IdentityDenoiser {
    pub schedule: NoiseSchedule,
}

impl DenoiserOracle for IdentityDenoiser {
    fn name(&self) -> &str {
        "identity"
    }

    fn steps(&self) -> usize {
        self.schedule.steps
    }

    fn denoise_step(
        &self,
        crop: &Image,
        _t: usize,
        _condition: &DenoiseCondition,
        _ctx: &CropContext<'_>,
        _seed: u64,
    ) -> OracleResult<Image> {
        Ok(crop.clone())
    }

    fn renoise(&self, clean: &Image, t: usize, seed: u64) -> Image {
        self.schedule.renoise(clean, t, seed)
    }
}

/// Moves each crop a fixed fraction toward its condition image.
#[derive(Debug, Clone)]
pub struct ContractKnownDenoiser {
    pub schedule: NoiseSchedule,
    pub rate: f32,
}

impl DenoiserOracle for ContractKnownDenoiser {
    fn name(&self) -> &str {
        "contract-known"
    }

    fn steps(&self) -> usize {
        self.schedule.steps
    }

    fn denoise_step(
        &self,
        crop: &Image,
        _t: usize,
        condition: &DenoiseCondition,
        _ctx: &CropContext<'_>,
        _seed: u64,
    ) -> OracleResult<Image> {
        if condition.known.dims() != crop.dims() {
            return Err(OracleError::new("condition image does not match crop"));
        }
        let data = wire_contract(crop.data(), condition.known.data(), self.rate);
        Image::from_vec(crop.width(), crop.height(), crop.channels(), data)
            .map_err(|e| OracleError::new(e.to_string()))
    }

    fn renoise(&self, clean: &Image, t: usize, seed: u64) -> Image {
        self.schedule.renoise(clean, t, seed)
    }
}

/// Moves each crop a fixed fraction toward the same crop of a fixed
/// panorama, which is therefore the sampler's fixed point.
#[derive(Debug, Clone)]
pub struct ContractFixtureDenoiser {
    pub schedule: NoiseSchedule,
    pub rate: f32,
    pub fixture: Arc<Image>,
}

impl DenoiserOracle for ContractFixtureDenoiser {
    fn name(&self) -> &str {
        "contract-fixture"
    }

    fn steps(&self) -> usize {
        self.schedule.steps
    }

    fn denoise_step(
        &self,
        crop: &Image,
        _t: usize,
        _condition: &DenoiseCondition,
        ctx: &CropContext<'_>,
        _seed: u64,
    ) -> OracleResult<Image> {
        let target = project_forward(ctx.map, &self.fixture).map_err(|e| OracleError::new(e.to_string()))?;
        if target.dims() != crop.dims() {
            return Err(OracleError::new("fixture crop does not match crop"));
        }
        let data = wire_contract(crop.data(), target.data(), self.rate);
        Image::from_vec(crop.width(), crop.height(), crop.channels(), data)
            .map_err(|e| OracleError::new(e.to_string()))
    }

    fn renoise(&self, clean: &Image, t: usize, seed: u64) -> Image {
        self.schedule.renoise(clean, t, seed)
    }
}

/// Constant disparity everywhere.
#[derive(Debug, Clone)]
pub struct ConstantDepth {
    pub value: f32,
}

impl DepthOracle for ConstantDepth {
    fn name(&self) -> &str {
        "constant"
    }

    fn estimate(&self, crop: &Image, _ctx: &CropContext<'_>) -> OracleResult<DepthMap> {
        Ok(DepthMap::filled(
            crop.width(),
            crop.height(),
            1,
            self.value as f64,
        ))
    }
}

/// Disparity from luma, with a per-yaw affine change of gauge.
#[derive(Debug, Clone, Default)]
pub struct LumaAffineDepth;

impl DepthOracle for LumaAffineDepth {
    fn name(&self) -> &str {
        "luma-affine"
    }

    fn estimate(&self, crop: &Image, ctx: &CropContext<'_>) -> OracleResult<DepthMap> {
        let d = wire_luma_affine(crop.data(), crop.channels(), ctx.yaw);
        DepthMap::from_vec(
            crop.width(),
            crop.height(),
            1,
            d.into_iter().map(f64::from).collect(),
        )
        .map_err(|e| OracleError::new(e.to_string()))
    }
}

/// Crops of a known panoramic depth, optionally distorted per crop by a
/// monotone piecewise-linear map and additive Gaussian noise.
#[derive(Debug, Clone)]
pub struct FixtureDepth {
    pub depth: Arc<DepthMap>,
    /// Per crop distortion; `None` leaves that crop exact.
    pub distortions: Vec<Option<PiecewiseLinearMap>>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl FixtureDepth {
    pub fn exact(depth: Arc<DepthMap>) -> Self {
        Self {
            depth,
            distortions: Vec::new(),
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl DepthOracle for FixtureDepth {
    fn name(&self) -> &str {
        if self.distortions.iter().any(Option::is_some) || self.noise_sigma > 0.0 {
            "distorted"
        } else {
            "ground-truth"
        }
    }

    fn estimate(&self, _crop: &Image, ctx: &CropContext<'_>) -> OracleResult<DepthMap> {
        let mut patch = project_forward(ctx.map, &self.depth).map_err(|e| OracleError::new(e.to_string()))?;
        if let Some(Some(g)) = self.distortions.get(ctx.index) {
            for v in patch.data_mut() {
                *v = g.apply_scalar(*v);
            }
        }
        if self.noise_sigma > 0.0 {
            let noise = seed::normals(seed::derive(self.seed, &[0xD3, ctx.index as u64]), patch.data().len());
            for (v, n) in patch.data_mut().iter_mut().zip(noise) {
                *v += self.noise_sigma * n as f64;
            }
        }
        Ok(patch)
    }
}

/// Random strictly increasing piecewise-linear map on `[lo, hi]` with
/// `segments` pieces: per-segment slopes in `[1 − amp, 1 + amp]`, then a
/// global gain in `[1 − amp, 1 + amp]` and offset in `[−amp/2, amp/2]`.
pub fn random_monotone_distortion(
    rng: &mut impl Rng,
    lo: f64,
    hi: f64,
    segments: usize,
    amplitude: f64,
) -> PiecewiseLinearMap {
    let knots = crate::plmap::uniform_knots(lo, hi, segments);
    let gain = rng.random_range(1.0 - amplitude..=1.0 + amplitude);
    let offset = rng.random_range(-amplitude / 2.0..=amplitude / 2.0);
    let mut values = Vec::with_capacity(knots.len());
    let mut y = lo;
    values.push(gain * y + offset);
    for w in knots.windows(2) {
        let slope = rng.random_range(1.0 - amplitude..=1.0 + amplitude);
        y += slope * (w[1] - w[0]);
        values.push(gain * y + offset);
    }
    PiecewiseLinearMap::new(knots, values).expect("increasing knots and finite values")
}

/// Convenience: per-crop distortions drawn from `seed`, leaving `exact` untouched.
pub fn crop_distortions(
    n: usize,
    seed_value: u64,
    range: (f64, f64),
    amplitude: f64,
    exact: Option<usize>,
) -> Vec<Option<PiecewiseLinearMap>> {
    (0..n)
        .map(|k| {
            if Some(k) == exact || amplitude == 0.0 {
                None
            } else {
                let mut rng = seed::rng(seed::derive(seed_value, &[0xD1, k as u64]));
                Some(random_monotone_distortion(&mut rng, range.0, range.1, 4, amplitude))
            }
        })
        .collect()
}
