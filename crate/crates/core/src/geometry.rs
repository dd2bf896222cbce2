//! Cylindrical canvas coordinates and the crop operators between the canvas
//! and fixed-size perspective crops.
//!
//! Every crop owns a [`ProjectionMap`]: a precomputed nearest-neighbor index
//! table in both directions. Projection in the hot loops is then a pure
//! gather (canvas → crop) or scatter-add (crop → canvas), with no
//! trigonometry and no filtering, so per-pixel noise statistics survive the
//! trip unchanged.
//!
//! Conventions:
//! - pixel `i` has its center at coordinate `i`;
//! - a crop's principal point is `(width / 2, height / 2)`;
//! - canvas column `u` sits at azimuth `(u - width / 2) · 2π / width`, so the
//!   crop at yaw 0 looks at the canvas center column;
//! - rounding is `floor(x + 0.5)`.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::image::{Grid, Image, Mask};

/// Index value for pixels with no counterpart on the other side of a map.
pub const SENTINEL: i32 = -1;

#[inline]
fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Pinhole camera with square pixels and equal horizontal/vertical FOV.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PerspectiveCamera {
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
    /// Azimuth of the optical axis, radians.
    pub yaw: f64,
}

impl PerspectiveCamera {
    pub fn new(fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fov_deg,
            width,
            height,
            yaw: 0.0,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_yaw(mut self, yaw: f64) -> Self {
        self.yaw = yaw;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config(format!(
                "camera fov {}° must lie in (0, 180)",
                self.fov_deg
            )));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::Config(format!(
                "camera size {}x{} below the 8x8 minimum",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn fov_rad(&self) -> f64 {
        self.fov_deg.to_radians()
    }

    pub fn focal_px(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.fov_rad() / 2.0).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        ((self.width / 2) as f64, (self.height / 2) as f64)
    }
}

/// Full-turn cylindrical canvas sharing its focal length with the crops.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CylinderSpec {
    pub width: usize,
    pub height: usize,
    pub focal_px: f64,
}

impl CylinderSpec {
    /// Canvas matched to `cam`: one column per `1/focal` radian of azimuth,
    /// and the tallest height every column can cover once crops overlap
    /// by at least half their FOV.
    pub fn for_camera(cam: &PerspectiveCamera) -> Self {
        let focal_px = cam.focal_px();
        let width = (TAU * focal_px).round() as usize;
        let half = (cam.height as f64 / 2.0) * (cam.fov_rad() / 2.0).cos();
        let height = 2 * half.floor() as usize;
        Self {
            width,
            height,
            focal_px,
        }
    }

    pub fn angle_per_px(&self) -> f64 {
        TAU / self.width as f64
    }

    pub fn center_column(&self) -> usize {
        self.width / 2
    }

    pub fn center_row(&self) -> usize {
        self.height / 2
    }

    /// Azimuth of column `u`, radians.
    pub fn azimuth(&self, u: f64) -> f64 {
        (u - self.center_column() as f64) * self.angle_per_px()
    }

    /// Column of azimuth `az` (unwrapped, fractional).
    pub fn column_of(&self, az: f64) -> f64 {
        self.center_column() as f64 + az / self.angle_per_px()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 2 || !(self.focal_px > 0.0) {
            return Err(Error::Config(format!(
                "degenerate cylinder {}x{} with focal {}",
                self.width, self.height, self.focal_px
            )));
        }
        Ok(())
    }
}

/// Nearest-neighbor index tables between one crop and the canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMap {
    pub crop_index: usize,
    pub crop_width: usize,
    pub crop_height: usize,
    pub canvas_width: usize,
    pub canvas_height: usize,
    /// Per crop pixel: canvas pixel it samples, or [`SENTINEL`].
    pub forward: Vec<i32>,
    /// Per crop pixel: canvas pixel used to fill it. Equal to `forward`
    /// where mapped; the nearest in-range row otherwise.
    pub fill: Vec<u32>,
    /// Per canvas pixel: crop pixel it projects to, or [`SENTINEL`].
    pub backward: Vec<i32>,
    /// Per crop pixel: `backward[forward[p]] == p`.
    pub bijective_mask: Vec<bool>,
}

impl ProjectionMap {
    fn finish(
        crop_index: usize,
        (crop_width, crop_height): (usize, usize),
        (canvas_width, canvas_height): (usize, usize),
        forward: Vec<i32>,
        fill: Vec<u32>,
        backward: Vec<i32>,
    ) -> Self {
        let bijective_mask = forward
            .iter()
            .enumerate()
            .map(|(p, &q)| q != SENTINEL && backward[q as usize] == p as i32)
            .collect();
        Self {
            crop_index,
            crop_width,
            crop_height,
            canvas_width,
            canvas_height,
            forward,
            fill,
            backward,
            bijective_mask,
        }
    }

    fn cylindrical(index: usize, cam: &PerspectiveCamera, cyl: &CylinderSpec) -> Self {
        let (w, h) = (cam.width, cam.height);
        let (cw, ch) = (cyl.width, cyl.height);
        let f = cyl.focal_px;
        let (cx, cy) = cam.principal_point();
        let row0 = cyl.center_row() as f64;

        let mut forward = Vec::with_capacity(w * h);
        let mut fill = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let az = cam.yaw + dx.atan2(f);
                let u = round_half_up(cyl.column_of(az)).rem_euclid(cw as i64) as usize;
                let v = round_half_up(row0 + dy * f / dx.hypot(f));
                let vc = v.clamp(0, ch as i64 - 1) as usize;
                let q = vc * cw + u;
                forward.push(if v == vc as i64 { q as i32 } else { SENTINEL });
                fill.push(q as u32);
            }
        }

        let mut backward = vec![SENTINEL; cw * ch];
        for u in 0..cw {
            let az = wrap_angle(cyl.azimuth(u as f64) - cam.yaw);
            if az.abs() >= PI / 2.0 {
                continue;
            }
            let xf = round_half_up(cx + f * az.tan());
            if xf < 0 || xf >= w as i64 {
                continue;
            }
            let inv_cos = 1.0 / az.cos();
            for v in 0..ch {
                let yf = round_half_up(cy + (v as f64 - row0) * inv_cos);
                if yf < 0 || yf >= h as i64 {
                    continue;
                }
                backward[v * cw + u] = (yf as usize * w + xf as usize) as i32;
            }
        }

        Self::finish(index, (w, h), (cw, ch), forward, fill, backward)
    }

    fn planar(
        index: usize,
        (x0, y0): (usize, usize),
        (w, h): (usize, usize),
        (cw, ch): (usize, usize),
    ) -> Self {
        let mut forward = Vec::with_capacity(w * h);
        let mut backward = vec![SENTINEL; cw * ch];
        for y in 0..h {
            for x in 0..w {
                let q = (y0 + y) * cw + x0 + x;
                forward.push(q as i32);
                backward[q] = (y * w + x) as i32;
            }
        }
        let fill = forward.iter().map(|&q| q as u32).collect();
        Self::finish(index, (w, h), (cw, ch), forward, fill, backward)
    }

    /// Number of canvas pixels this crop maps onto.
    pub fn mapped_count(&self) -> usize {
        self.backward.iter().filter(|&&p| p != SENTINEL).count()
    }

    /// Fraction of bijective pixels inside the central half-width,
    /// half-height window of the crop.
    pub fn interior_bijective_fraction(&self) -> f64 {
        let (w, h) = (self.crop_width, self.crop_height);
        let (x0, x1) = (w / 4, w - w / 4);
        let (y0, y1) = (h / 4, h - h / 4);
        let mut hit = 0usize;
        let mut total = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                total += 1;
                hit += usize::from(self.bijective_mask[y * w + x]);
            }
        }
        hit as f64 / total as f64
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// How a layout's crops relate to the canvas.
#[derive(Debug, Clone, PartialEq)]
pub enum LayoutKind {
    /// Perspective crops around a full-turn cylinder (wraps at the seam).
    Cylindrical {
        cylinder: CylinderSpec,
        cameras: Vec<PerspectiveCamera>,
    },
    /// Axis-aligned windows on a flat wide canvas (no wraparound).
    Planar { origins: Vec<(usize, usize)> },
}

/// A set of overlapping crops with their projection maps and coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct CropLayout {
    pub canvas_width: usize,
    pub canvas_height: usize,
    pub crop_width: usize,
    pub crop_height: usize,
    pub kind: LayoutKind,
    pub maps: Vec<ProjectionMap>,
    /// Per canvas pixel: number of crops mapping onto it.
    pub coverage: Vec<u32>,
}

/// Builds `n` evenly spaced crops (yaw `2πk/n`) around the cylinder.
pub fn build_layout(cyl: &CylinderSpec, cam: &PerspectiveCamera, n: usize) -> Result<CropLayout> {
    cam.validate()?;
    cyl.validate()?;
    if n == 0 {
        return Err(Error::Config("crop count must be at least 1".into()));
    }
    if cam.fov_deg * n as f64 + 1e-9 < 360.0 {
        return Err(Error::Config(format!(
            "{n} crops of {}° cannot cover 360°",
            cam.fov_deg
        )));
    }
    let focal = cam.focal_px();
    if (cyl.focal_px - focal).abs() > 1e-9 * focal {
        return Err(Error::Config(format!(
            "cylinder focal {} differs from camera focal {focal}",
            cyl.focal_px
        )));
    }

    let cameras: Vec<_> = (0..n)
        .map(|k| cam.with_yaw(TAU * k as f64 / n as f64))
        .collect();
    let maps: Vec<_> = cameras
        .iter()
        .enumerate()
        .map(|(k, c)| ProjectionMap::cylindrical(k, c, cyl))
        .collect();
    finish_layout(
        (cyl.width, cyl.height),
        (cam.width, cam.height),
        LayoutKind::Cylindrical {
            cylinder: *cyl,
            cameras,
        },
        maps,
    )
}

/// Layout matched to `cam` with the default canvas from [`CylinderSpec::for_camera`].
pub fn default_layout(cam: &PerspectiveCamera, n: usize) -> Result<CropLayout> {
    build_layout(&CylinderSpec::for_camera(cam), cam, n)
}

/// Sliding windows over a flat canvas; first and last windows touch the
/// canvas edges and the remaining `n - 2` are evenly spread between them.
pub fn build_planar_layout(
    canvas_width: usize,
    canvas_height: usize,
    crop_width: usize,
    crop_height: usize,
    n: usize,
) -> Result<CropLayout> {
    if crop_width > canvas_width || crop_height > canvas_height {
        return Err(Error::Config(format!(
            "crop {crop_width}x{crop_height} larger than canvas {canvas_width}x{canvas_height}"
        )));
    }
    if n == 0 {
        return Err(Error::Config("crop count must be at least 1".into()));
    }
    let span = canvas_width - crop_width;
    let xs: Vec<usize> = if n == 1 {
        vec![span / 2]
    } else {
        (0..n)
            .map(|k| ((k * span) as f64 / (n - 1) as f64).round() as usize)
            .collect()
    };
    let y0 = (canvas_height - crop_height) / 2;
    let origins: Vec<_> = xs.iter().map(|&x| (x, y0)).collect();
    let maps = origins
        .iter()
        .enumerate()
        .map(|(k, &o)| {
            ProjectionMap::planar(
                k,
                o,
                (crop_width, crop_height),
                (canvas_width, canvas_height),
            )
        })
        .collect();
    finish_layout(
        (canvas_width, canvas_height),
        (crop_width, crop_height),
        LayoutKind::Planar { origins },
        maps,
    )
}

fn finish_layout(
    (cw, ch): (usize, usize),
    (w, h): (usize, usize),
    kind: LayoutKind,
    maps: Vec<ProjectionMap>,
) -> Result<CropLayout> {
    let mut coverage = vec![0u32; cw * ch];
    for map in &maps {
        for (q, &p) in map.backward.iter().enumerate() {
            if p != SENTINEL {
                coverage[q] += 1;
            }
        }
    }
    if let Some(q) = (0..cw)
        .flat_map(|u| (0..ch).map(move |v| v * cw + u))
        .find(|&q| coverage[q] == 0)
    {
        return Err(Error::CoverageGap {
            column: q % cw,
            row: q / cw,
        });
    }
    Ok(CropLayout {
        canvas_width: cw,
        canvas_height: ch,
        crop_width: w,
        crop_height: h,
        kind,
        maps,
        coverage,
    })
}

impl CropLayout {
    pub fn n(&self) -> usize {
        self.maps.len()
    }

    pub fn is_cyclic(&self) -> bool {
        matches!(self.kind, LayoutKind::Cylindrical { .. })
    }

    pub fn canvas_pixels(&self) -> usize {
        self.canvas_width * self.canvas_height
    }

    pub fn cylinder(&self) -> Option<&CylinderSpec> {
        match &self.kind {
            LayoutKind::Cylindrical { cylinder, .. } => Some(cylinder),
            LayoutKind::Planar { .. } => None,
        }
    }

    /// Yaw of crop `k` (0 for planar layouts).
    pub fn yaw(&self, k: usize) -> f64 {
        match &self.kind {
            LayoutKind::Cylindrical { cameras, .. } => cameras[k].yaw,
            LayoutKind::Planar { .. } => 0.0,
        }
    }

    /// Crop whose footprint center is closest to canvas column `column`.
    pub fn crop_nearest_column(&self, column: f64) -> usize {
        let w = self.canvas_width as f64;
        let center = |k: usize| -> f64 {
            match &self.kind {
                LayoutKind::Cylindrical { cylinder, cameras } => cylinder.column_of(cameras[k].yaw),
                LayoutKind::Planar { origins } => origins[k].0 as f64 + self.crop_width as f64 / 2.0,
            }
        };
        let dist = |k: usize| -> f64 {
            let d = (center(k) - column).abs();
            if self.is_cyclic() {
                d.rem_euclid(w).min(w - d.rem_euclid(w))
            } else {
                d
            }
        };
        (0..self.n())
            .min_by(|&a, &b| dist(a).total_cmp(&dist(b)))
            .unwrap_or(0)
    }

    /// Columns `u` whose horizontal neighbor pair `(u, u+1)` straddles the
    /// edge of at least one crop footprint (measured on the center row).
    pub fn seam_columns(&self) -> Vec<usize> {
        let (cw, ch) = (self.canvas_width, self.canvas_height);
        let row = ch / 2;
        let covered = |k: usize, u: usize| self.maps[k].backward[row * cw + u] != SENTINEL;
        let last = if self.is_cyclic() { cw } else { cw - 1 };
        (0..last)
            .filter(|&u| {
                let next = (u + 1) % cw;
                (0..self.n()).any(|k| covered(k, u) != covered(k, next))
            })
            .collect()
    }
}

/// Gathers the crop seen by `map` from `canvas`. Crop pixels outside the
/// canvas's vertical extent take the nearest in-range canvas value.
pub fn project_forward<T: Copy + Default>(map: &ProjectionMap, canvas: &Grid<T>) -> Result<Grid<T>> {
    canvas.ensure_dims("project_forward canvas", map.canvas_width, map.canvas_height)?;
    let c = canvas.channels();
    let mut data = Vec::with_capacity(map.fill.len() * c);
    for &q in &map.fill {
        data.extend_from_slice(canvas.pixel(q as usize));
    }
    Grid::from_vec(map.crop_width, map.crop_height, c, data)
}

/// Gathers a canvas weight mask into crop space; unmapped crop pixels get 0.
pub fn project_forward_weight(map: &ProjectionMap, weight: &Mask) -> Result<Mask> {
    weight.ensure_dims("project_forward weight", map.canvas_width, map.canvas_height)?;
    let data = map
        .forward
        .iter()
        .map(|&q| if q == SENTINEL { 0.0 } else { weight.data()[q as usize] })
        .collect();
    Grid::from_vec(map.crop_width, map.crop_height, 1, data)
}

/// Canvas-sized running sums of weighted values and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Accumulator {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            values: vec![0.0; width * height * channels],
            weights: vec![0.0; width * height],
        }
    }

    /// Weighted mean per pixel; pixels with zero weight are set to 0 and
    /// flagged `true` in the returned residual map.
    pub fn normalize(&self) -> (Image, Vec<bool>) {
        let c = self.channels;
        let mut out = Image::new(self.width, self.height, c);
        let mut empty = vec![false; self.weights.len()];
        for (q, &wsum) in self.weights.iter().enumerate() {
            if wsum > 0.0 {
                let px = out.pixel_mut(q);
                for (k, v) in px.iter_mut().enumerate() {
                    *v = (self.values[q * c + k] / wsum) as f32;
                }
            } else {
                empty[q] = true;
            }
        }
        (out, empty)
    }
}

/// Scatter-adds `weight ⊙ crop` and `weight` into canvas accumulators. This
/// is the adjoint of [`project_forward`]: every mapped crop pixel lands on
/// the canvas pixel it was sampled from.
pub fn project_backward(
    map: &ProjectionMap,
    crop: &Image,
    weight: &Mask,
    acc: &mut Accumulator,
) -> Result<()> {
    crop.ensure_dims("project_backward crop", map.crop_width, map.crop_height)?;
    weight.ensure_dims("project_backward weight", map.crop_width, map.crop_height)?;
    if acc.width != map.canvas_width || acc.height != map.canvas_height || acc.channels != crop.channels() {
        return Err(Error::Dimension {
            context: "project_backward accumulator",
            expected: (map.canvas_width, map.canvas_height, crop.channels()),
            actual: (acc.width, acc.height, acc.channels),
        });
    }
    let c = crop.channels();
    for (p, &q) in map.forward.iter().enumerate() {
        let w = weight.data()[p] as f64;
        if q == SENTINEL || w == 0.0 {
            continue;
        }
        let q = q as usize;
        acc.weights[q] += w;
        for (k, &v) in crop.pixel(p).iter().enumerate() {
            acc.values[q * c + k] += w * v as f64;
        }
    }
    Ok(())
}
