//! MultiConDiffusion: panorama outpainting by alternating crop-wise
//! inpainting diffusion (stage 1) with replacement of the condition canvas
//! by the clean result (stage 2).

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_backward, project_forward, project_forward_weight, Accumulator, CropLayout};
use crate::image::{Image, Mask, Rect};
use crate::metrics::{rmse, seam_metric, SeamMetric};
use crate::oracle::{CropContext, DenoiseCondition, DenoiserOracle};
use crate::seed;

const SALT_DENOISE: u64 = 0x5A_01;
const SALT_KNOWN: u64 = 0x5A_02;
const SALT_INIT: u64 = 0x5A_03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub outer_iters: usize,
    /// Denoising steps `T`; must equal the oracle's schedule length.
    pub inner_steps: usize,
    pub seed: u64,
    pub second_term_weight: f32,
    /// Stop once the successive-condition RMSE drops below this value.
    pub early_stop: Option<f64>,
    pub prompt: String,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            outer_iters: 20,
            inner_steps: 10,
            seed: 0,
            second_term_weight: 0.0,
            early_stop: None,
            prompt: String::new(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 {
            return Err(Error::Config("outer_iters must be at least 1".into()));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.second_term_weight) {
            return Err(Error::Config("second_term_weight must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// The evolving canvas `J_t` with the unknown-region mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CanvasState {
    pub j: Image,
    pub t: usize,
    /// 1 where content must be synthesized, 0 on `input_rect`.
    pub unknown: Mask,
    pub input_rect: Rect,
}

impl CanvasState {
    pub fn new(j: Image, t: usize, input_rect: Rect) -> Result<Self> {
        if !input_rect.fits_in(j.width(), j.height()) {
            return Err(Error::Config(format!(
                "input placement {input_rect:?} does not fit a {}x{} canvas",
                j.width(),
                j.height()
            )));
        }
        let unknown = unknown_mask(j.width(), j.height(), &input_rect);
        Ok(Self {
            j,
            t,
            unknown,
            input_rect,
        })
    }
}

/// `U`: 1 everywhere except on `rect`.
pub fn unknown_mask(width: usize, height: usize, rect: &Rect) -> Mask {
    Mask::from_fn(width, height, 1, |x, y, _| if rect.contains(x, y) { 0.0 } else { 1.0 })
}

/// The condition canvas `L` and how many times it has been replaced.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCanvas {
    pub l: Image,
    pub generation: usize,
}

impl ConditionCanvas {
    /// The input placed on a black canvas.
    pub fn initial(width: usize, height: usize, input: &Image, rect: &Rect) -> Result<Self> {
        let mut l = Image::new(width, height, input.channels());
        stamp(&mut l, input, rect)?;
        Ok(Self { l, generation: 0 })
    }
}

fn stamp(canvas: &mut Image, input: &Image, rect: &Rect) -> Result<()> {
    input.ensure_dims("input image", rect.width, rect.height)?;
    if input.channels() != canvas.channels() {
        return Err(Error::Dimension {
            context: "input channels",
            expected: canvas.dims(),
            actual: input.dims(),
        });
    }
    let c = input.channels();
    let cw = canvas.width();
    for y in 0..rect.height {
        let src = &input.data()[y * rect.width * c..(y + 1) * rect.width * c];
        let start = ((rect.y + y) * cw + rect.x) * c;
        canvas.data_mut()[start..start + rect.width * c].copy_from_slice(src);
    }
    Ok(())
}

/// Per-pixel weighted mean of back-projected crop outputs with weights
/// `masks[i]`. The second value flags pixels with zero total weight.
pub fn aggregate_crops(
    outputs: &[Image],
    masks: &[Mask],
    layout: &CropLayout,
    unknown: &Mask,
) -> Result<(Image, Vec<bool>)> {
    if outputs.len() != layout.n() || masks.len() != layout.n() {
        return Err(Error::Config(format!(
            "expected {} crop outputs and masks, got {} and {}",
            layout.n(),
            outputs.len(),
            masks.len()
        )));
    }
    let channels = outputs.first().map_or(1, Image::channels);
    let mut acc = Accumulator::new(layout.canvas_width, layout.canvas_height, channels);
    for ((map, out), mask) in layout.maps.iter().zip(outputs).zip(masks) {
        project_backward(map, out, mask, &mut acc)?;
    }
    let (image, empty) = acc.normalize();
    unknown.ensure_dims("unknown mask", layout.canvas_width, layout.canvas_height)?;
    if let Some(index) = empty
        .iter()
        .zip(unknown.data())
        .position(|(&e, &u)| e && u != 0.0)
    {
        return Err(Error::UncoveredUnknown { index });
    }
    Ok((image, empty))
}

/// Runs the `T` denoising steps of one outer iteration and returns `J*_0`.
pub fn stage1_denoise(
    state: &CanvasState,
    condition: &ConditionCanvas,
    oracle: &dyn DenoiserOracle,
    layout: &CropLayout,
    config: &SamplerConfig,
    iteration: usize,
) -> Result<Image> {
    let steps = config.inner_steps;
    if state.t != steps {
        return Err(Error::Config(format!(
            "stage 1 must start at t = {steps}, state is at t = {}",
            state.t
        )));
    }
    state.j.ensure_dims("canvas", layout.canvas_width, layout.canvas_height)?;
    condition.l.ensure_dims("condition canvas", layout.canvas_width, layout.canvas_height)?;

    let prompt: Arc<str> = config.prompt.as_str().into();
    let conditions = layout
        .maps
        .iter()
        .map(|map| {
            Ok(DenoiseCondition {
                prompt: prompt.clone(),
                mask: project_forward_weight(map, &state.unknown)?.map(|m| if m > 0.0 { 1.0 } else { 0.0 }),
                known: project_forward(map, &condition.l)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let masks: Vec<Mask> = conditions.iter().map(|c| c.mask.clone()).collect();

    let mut j = state.j.clone();
    for t in (1..=steps).rev() {
        let outputs = layout
            .maps
            .par_iter()
            .zip(conditions.par_iter())
            .map(|(map, cond)| {
                let k = map.crop_index;
                let crop = project_forward(map, &j)?;
                let ctx = CropContext {
                    index: k,
                    yaw: layout.yaw(k),
                    map,
                };
                let call_seed = seed::derive(config.seed, &[SALT_DENOISE, iteration as u64, t as u64, k as u64]);
                let out = oracle
                    .denoise_step(&crop, t, cond, &ctx, call_seed)
                    .map_err(|e| Error::Oracle {
                        crop: k,
                        step: t,
                        message: e.message,
                    })?;
                if out.dims() != crop.dims() {
                    return Err(Error::Oracle {
                        crop: k,
                        step: t,
                        message: format!("returned {:?}, expected {:?}", out.dims(), crop.dims()),
                    });
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;

        let (mut next, empty) = aggregate_crops(&outputs, &masks, layout, &state.unknown)?;
        let known = oracle.renoise(
            &condition.l,
            t - 1,
            seed::derive(config.seed, &[SALT_KNOWN, iteration as u64, t as u64]),
        );
        let c = next.channels();
        for (q, (&e, &u)) in empty.iter().zip(state.unknown.data()).enumerate() {
            if e || u == 0.0 {
                next.data_mut()[q * c..(q + 1) * c].copy_from_slice(known.pixel(q));
            }
        }
        if t == 1 && config.second_term_weight > 0.0 {
            let w = config.second_term_weight;
            for (v, &l) in next.data_mut().iter_mut().zip(condition.l.data()) {
                *v = (1.0 - w) * *v + w * l;
            }
        }
        j = next;
    }
    Ok(j)
}

/// Replaces the condition canvas by `j0`, re-stamping the input.
pub fn stage2_update(condition: &ConditionCanvas, j0: &Image, input: &Image, rect: &Rect) -> Result<ConditionCanvas> {
    condition.l.ensure_dims("clean canvas", j0.width(), j0.height())?;
    let mut l = j0.clone();
    stamp(&mut l, input, rect)?;
    Ok(ConditionCanvas {
        l,
        generation: condition.generation + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// RMSE between this iteration's condition canvas and the previous one.
    pub rmse_change: f64,
    pub seam: SeamMetric,
}

#[derive(Debug, Clone)]
pub struct SamplerOutput {
    pub panorama: Image,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// Full MultiConDiffusion run from a single input image.
pub fn run(
    input: &Image,
    placement: Rect,
    oracle: &dyn DenoiserOracle,
    layout: &CropLayout,
    config: &SamplerConfig,
) -> Result<SamplerOutput> {
    config.validate()?;
    if oracle.steps() != config.inner_steps {
        return Err(Error::Config(format!(
            "oracle '{}' has {} steps, sampler configured for {}",
            oracle.name(),
            oracle.steps(),
            config.inner_steps
        )));
    }
    if !input.is_finite() {
        return Err(Error::NonFiniteInput("input image"));
    }
    let (w, h) = (layout.canvas_width, layout.canvas_height);
    let mut condition = ConditionCanvas::initial(w, h, input, &placement)?;
    let unknown = unknown_mask(w, h, &placement);
    let mut diagnostics = Vec::with_capacity(config.outer_iters);

    for iteration in 0..config.outer_iters {
        let j_t = oracle.renoise(
            &condition.l,
            config.inner_steps,
            seed::derive(config.seed, &[SALT_INIT, iteration as u64]),
        );
        let state = CanvasState {
            j: j_t,
            t: config.inner_steps,
            unknown: unknown.clone(),
            input_rect: placement,
        };
        let j0 = stage1_denoise(&state, &condition, oracle, layout, config, iteration)?;
        if !j0.is_finite() {
            return Err(Error::NonFinite { iteration });
        }
        let next = stage2_update(&condition, &j0, input, &placement)?;
        let change = rmse(next.l.data(), condition.l.data());
        let seam = seam_metric(&next.l, layout);
        log::debug!(
            "outer iteration {iteration}: change {change:.3e}, seam ratio {:.3}",
            seam.ratio()
        );
        diagnostics.push(IterationDiagnostics {
            iteration,
            rmse_change: change,
            seam,
        });
        condition = next;
        if config.early_stop.is_some_and(|tol| change < tol) {
            break;
        }
    }
    Ok(SamplerOutput {
        panorama: condition.l,
        diagnostics,
    })
}
