//! Model oracles: the inpainting denoiser consumed by the panorama sampler
//! and the monocular depth estimator consumed by depth fusion.
//!
//! Both are trait objects so that synthetic, in-process and remote
//! implementations are interchangeable; [`registry::OracleRegistry`] maps
//! names to constructors for runtime selection.

pub mod registry;
pub mod synthetic;

use std::fmt;
use std::sync::Arc;

use crate::geometry::ProjectionMap;
use crate::image::{DepthMap, Image, Mask};
use crate::seed;

pub use registry::{OracleParams, OracleRegistry};

/// Failure reported by an oracle implementation.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleError {
    pub message: String,
}

impl OracleError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for OracleError {}

pub type OracleResult<T> = std::result::Result<T, OracleError>;

/// Which crop of which layout a call concerns.
#[derive(Debug, Clone, Copy)]
pub struct CropContext<'a> {
    pub index: usize,
    pub yaw: f64,
    pub map: &'a ProjectionMap,
}

/// Conditioning passed to the inpainting denoiser for one crop.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseCondition {
    pub prompt: Arc<str>,
    /// 1 = synthesize, 0 = keep.
    pub mask: Mask,
    /// Crop of the condition canvas.
    pub known: Image,
}

impl DenoiseCondition {
    pub fn validate(&self) -> OracleResult<()> {
        if self.mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(OracleError::new("condition mask must be binary"));
        }
        if !self.known.is_finite() {
            return Err(OracleError::new("condition image is not finite"));
        }
        Ok(())
    }
}

/// One step of an inpainting diffusion sampler.
pub trait DenoiserOracle: Send + Sync {
    fn name(&self) -> &str;

    /// Number of denoising steps `T` of the schedule.
    fn steps(&self) -> usize;

    /// Maps the crop state at step `t` to step `t − 1`. Deterministic in
    /// `(crop, t, condition, seed)`; output has the input's dimensions.
    fn denoise_step(
        &self,
        crop: &Image,
        t: usize,
        condition: &DenoiseCondition,
        ctx: &CropContext<'_>,
        seed: u64,
    ) -> OracleResult<Image>;

    /// Noises clean content to the level of step `t`; `t = 0` returns it unchanged.
    fn renoise(&self, clean: &Image, t: usize, seed: u64) -> Image;
}

/// Relative-depth (disparity) estimator for one crop.
pub trait DepthOracle: Send + Sync {
    fn name(&self) -> &str;

    fn estimate(&self, crop: &Image, ctx: &CropContext<'_>) -> OracleResult<DepthMap>;
}

/// Variance-exploding noise schedule `x_t = x_0 + σ_t ε` with `σ_t = σ_max · t / T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub sigma_max: f32,
}

impl NoiseSchedule {
    pub fn new(steps: usize, sigma_max: f32) -> Self {
        Self { steps, sigma_max }
    }

    pub fn sigma(&self, t: usize) -> f32 {
        if self.steps == 0 {
            return 0.0;
        }
        self.sigma_max * t as f32 / self.steps as f32
    }

    pub fn renoise(&self, clean: &Image, t: usize, seed: u64) -> Image {
        let sigma = self.sigma(t);
        if t == 0 || sigma == 0.0 {
            return clean.clone();
        }
        let noise = seed::normals(seed, clean.data().len());
        let mut out = clean.clone();
        for (v, n) in out.data_mut().iter_mut().zip(noise) {
            *v += sigma * n;
        }
        out
    }
}
