//! End-to-end configuration and the in-memory pipeline stages.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::depthfusion::{self, FusionConfig, FusionOutput};
use crate::error::{Error, Result};
use crate::geometry::{default_layout, CropLayout, PerspectiveCamera};
use crate::image::{DepthMap, Image, Rect};
use crate::ldi::{self, ClusterConfig, FillConfig, LayeredDepthImage, SeedSet};
use crate::oracle::{OracleParams, OracleRegistry};
use crate::sampler::{self, SamplerConfig, SamplerOutput};
use crate::fixtures;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    pub fov_deg: f64,
    pub crops: usize,
    /// Square crop side in pixels.
    pub crop_size: usize,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            fov_deg: 45.0,
            crops: 16,
            crop_size: 512,
        }
    }
}

impl LayoutConfig {
    pub fn build(&self) -> Result<CropLayout> {
        let cam = PerspectiveCamera::new(self.fov_deg, self.crop_size, self.crop_size)?;
        default_layout(&cam, self.crops)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthStageConfig {
    pub iters: usize,
    pub segments: usize,
    pub monotone: bool,
    pub min_slope: f64,
    /// Patch held at identity; defaults to the patch nearest the input.
    pub anchor: Option<usize>,
}

impl Default for DepthStageConfig {
    fn default() -> Self {
        let f = FusionConfig::default();
        Self {
            iters: f.iters,
            segments: f.segments,
            monotone: f.monotone,
            min_slope: f.min_slope,
            anchor: None,
        }
    }
}

impl DepthStageConfig {
    /// Fusion settings; `input_column` locates the default anchor patch.
    pub fn fusion(&self, layout: &CropLayout, input_column: f64) -> FusionConfig {
        FusionConfig {
            iters: self.iters,
            segments: self.segments,
            monotone: self.monotone,
            min_slope: self.min_slope,
            anchor_index: Some(self.anchor.unwrap_or_else(|| layout.crop_nearest_column(input_column))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LdiConfig {
    pub cluster: ClusterConfig,
    pub fill: FillConfig,
}

/// Which oracles to use and the knobs of the synthetic ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub denoiser: String,
    pub depth_oracle: String,
    /// Base URL of a remote oracle service.
    pub url: Option<String>,
    pub timeout_s: f64,
    pub retries: u32,
    pub sigma_max: f32,
    pub rate: f32,
    /// Seed of the synthetic fixture panorama and depth distortions.
    pub fixture_seed: u64,
    pub constant_depth: f32,
    pub distortion: f64,
    pub depth_noise: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            denoiser: "contract-fixture".into(),
            depth_oracle: "luma-affine".into(),
            url: None,
            timeout_s: 60.0,
            retries: 2,
            sigma_max: 0.5,
            rate: 0.5,
            fixture_seed: 0,
            constant_depth: 0.5,
            distortion: 0.02,
            depth_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Input image; `None` uses a crop of the synthetic fixture panorama.
    pub input: Option<PathBuf>,
    pub placement: Option<Rect>,
    pub output_dir: PathBuf,
    pub layout: LayoutConfig,
    pub sampler: SamplerConfig,
    pub depth: DepthStageConfig,
    pub ldi: LdiConfig,
    pub oracle: OracleConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            placement: None,
            output_dir: PathBuf::from("out"),
            layout: LayoutConfig::default(),
            sampler: SamplerConfig::default(),
            depth: DepthStageConfig::default(),
            ldi: LdiConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn oracle_params(&self, layout: &CropLayout) -> OracleParams {
        OracleParams {
            seed: self.oracle.fixture_seed,
            steps: self.sampler.inner_steps,
            sigma_max: self.oracle.sigma_max,
            rate: self.oracle.rate,
            canvas: Some((layout.canvas_width, layout.canvas_height, 3)),
            crop_count: layout.n(),
            constant_depth: self.oracle.constant_depth,
            distortion: self.oracle.distortion,
            depth_noise: self.oracle.depth_noise,
            exact_crop: None,
            ..OracleParams::default()
        }
    }
}

/// Input placed on the canvas, downscaled if it does not fit.
pub fn place_input(input: &Image, layout: &CropLayout, placement: Option<Rect>) -> Result<(Image, Rect)> {
    let (cw, ch) = (layout.canvas_width, layout.canvas_height);
    let mut img = input.clone();
    if placement.is_none() && (img.height() > ch || img.width() > cw) {
        let scale = (ch as f64 / img.height() as f64).min(cw as f64 / img.width() as f64);
        let w = ((img.width() as f64 * scale).floor() as usize).max(1);
        let h = ((img.height() as f64 * scale).floor() as usize).max(1);
        log::info!("resizing input from {}x{} to {w}x{h}", img.width(), img.height());
        img = resize(&img, w, h)?;
    }
    let rect = placement.unwrap_or_else(|| Rect::centered(cw / 2, ch / 2, img.width(), img.height()));
    if !rect.fits_in(cw, ch) || rect.width != img.width() || rect.height != img.height() {
        return Err(Error::Config(format!(
            "placement {rect:?} does not hold a {}x{} input on a {cw}x{ch} canvas",
            img.width(),
            img.height()
        )));
    }
    Ok((img, rect))
}

fn resize(img: &Image, width: usize, height: usize) -> Result<Image> {
    let buf = image::Rgb32FImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .ok_or_else(|| Error::Config("resize expects a 3-channel image".into()))?;
    let out = image::imageops::resize(&buf, width as u32, height as u32, image::imageops::FilterType::Triangle);
    Image::from_vec(width, height, 3, out.into_raw())
}

/// Crop of the synthetic fixture panorama centered on the canvas, half a
/// crop wide and half the canvas high.
pub fn synthetic_input(layout: &CropLayout, fixture_seed: u64) -> Image {
    let (cw, ch) = (layout.canvas_width, layout.canvas_height);
    let pano = fixtures::panorama(cw, ch, 3, fixture_seed);
    let rect = Rect::centered(cw / 2, ch / 2, (layout.crop_width / 2).max(1), (ch / 2).max(1));
    Image::from_fn(rect.width, rect.height, 3, |x, y, c| pano.get(rect.x + x, rect.y + y, c))
}

pub struct PanoStage {
    pub layout: CropLayout,
    pub rect: Rect,
    pub output: SamplerOutput,
}

pub fn run_pano(cfg: &PipelineConfig, registry: &OracleRegistry, input: &Image) -> Result<PanoStage> {
    let layout = cfg.layout.build()?;
    let (input, rect) = place_input(input, &layout, cfg.placement)?;
    let oracle = registry.denoiser(&cfg.oracle.denoiser, &cfg.oracle_params(&layout))?;
    let output = sampler::run(&input, rect, oracle.as_ref(), &layout, &cfg.sampler)?;
    Ok(PanoStage { layout, rect, output })
}

/// Canvas column at the center of the input: the configured placement, or
/// the canvas center where [`place_input`] puts it by default.
pub fn input_column(cfg: &PipelineConfig, layout: &CropLayout) -> f64 {
    cfg.placement
        .map_or(layout.canvas_width as f64 / 2.0, |r| r.center_x())
}

pub fn run_depth(
    cfg: &PipelineConfig,
    registry: &OracleRegistry,
    layout: &CropLayout,
    pano: &Image,
) -> Result<FusionOutput> {
    let oracle = registry.depth(&cfg.oracle.depth_oracle, &cfg.oracle_params(layout))?;
    let fusion = cfg.depth.fusion(layout, input_column(cfg, layout));
    depthfusion::fuse(pano, layout, oracle.as_ref(), &fusion)
}

pub struct LdiStage {
    pub decomposition: LayeredDepthImage,
    pub completed: LayeredDepthImage,
    pub seeds: SeedSet,
}

pub fn run_ldi(cfg: &PipelineConfig, layout: &CropLayout, pano: &Image, depth: &DepthMap) -> Result<LdiStage> {
    let cyl = layout
        .cylinder()
        .ok_or_else(|| Error::Config("layered export needs a cylindrical layout".into()))?;
    let decomposition = ldi::cluster_layers(pano, depth, layout.is_cyclic(), &cfg.ldi.cluster)?;
    let completed = ldi::fill_holes(&decomposition, &cfg.ldi.fill);
    let seeds = ldi::init_gaussians(&completed, cyl)?;
    Ok(LdiStage {
        decomposition,
        completed,
        seeds,
    })
}
