use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::json;

use panofusion::depthfusion::FusionOutput;
use panofusion::geometry::CropLayout;
use panofusion::image::{DepthMap, Image};
use panofusion::io;
use panofusion::ldi;
use panofusion::oracle::OracleRegistry;
use panofusion::pipeline::{self, PipelineConfig};
use panofusion_gateway::{register_remote, OracleEndpoint};

use crate::{Cli, Command, GlobalOpts};

pub const PANORAMA: &str = "panorama.png";
pub const DEPTH: &str = "depth.pfm";
pub const SEEDS: &str = "seeds.ply";

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

impl From<panofusion::Error> for Failure {
    fn from(error: panofusion::Error) -> Self {
        Self {
            code: 1,
            error: error.into(),
        }
    }
}

fn missing(path: &Path) -> Failure {
    Failure {
        code: 2,
        error: anyhow!("input file not found: {}", path.display()),
    }
}

fn require(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(missing(path))
    }
}

pub fn effective_config(opts: &GlobalOpts) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &opts.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &opts.output {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = opts.seed {
        cfg.sampler.seed = v;
    }
    if let Some(v) = &opts.denoiser {
        cfg.oracle.denoiser = v.clone();
    }
    if let Some(v) = &opts.depth_oracle {
        cfg.oracle.depth_oracle = v.clone();
    }
    if let Some(v) = &opts.oracle_url {
        cfg.oracle.url = Some(v.clone());
    }
    if let Some(v) = opts.fov {
        cfg.layout.fov_deg = v;
    }
    if let Some(v) = opts.crops {
        cfg.layout.crops = v;
    }
    if let Some(v) = opts.crop_size {
        cfg.layout.crop_size = v;
    }
    if let Some(v) = opts.outer_iters {
        cfg.sampler.outer_iters = v;
    }
    if let Some(v) = opts.steps {
        cfg.sampler.inner_steps = v;
    }
    if let Some(v) = opts.second_term_weight {
        cfg.sampler.second_term_weight = v;
    }
    if let Some(v) = &opts.prompt {
        cfg.sampler.prompt = v.clone();
    }
    if let Some(v) = opts.depth_iters {
        cfg.depth.iters = v;
    }
    if let Some(v) = opts.segments {
        cfg.depth.segments = v;
    }
    if opts.no_monotone {
        cfg.depth.monotone = false;
    }
    if let Some(v) = opts.layers {
        cfg.ldi.cluster.k = v;
    }
    if opts.synthetic {
        cfg.oracle.denoiser = "contract-fixture".into();
        cfg.oracle.depth_oracle = "luma-affine".into();
        cfg.oracle.url = None;
    }
    Ok(cfg)
}

pub fn registry(cfg: &PipelineConfig) -> OracleRegistry {
    let mut registry = OracleRegistry::with_builtins();
    if let Some(url) = &cfg.oracle.url {
        let mut endpoint = OracleEndpoint::new(url.clone());
        endpoint.timeout = std::time::Duration::from_secs_f64(cfg.oracle.timeout_s);
        endpoint.retries = cfg.oracle.retries;
        register_remote(&mut registry, endpoint);
    }
    registry
}

struct Run {
    cfg: PipelineConfig,
    registry: OracleRegistry,
    layout: CropLayout,
    out: PathBuf,
    resume: bool,
    /// Configuration text recorded in the stage markers.
    stamp: String,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn marker(&self, stage: &str) -> PathBuf {
        self.out.join(format!(".{stage}.done"))
    }

    fn is_done(&self, stage: &str, outputs: &[&str]) -> bool {
        self.resume
            && fs::read_to_string(self.marker(stage)).is_ok_and(|s| s == self.stamp)
            && outputs.iter().all(|o| self.path(o).is_file())
    }

    fn finish(&self, stage: &str) -> anyhow::Result<()> {
        let path = self.marker(stage);
        fs::write(&path, &self.stamp).with_context(|| format!("writing {}", path.display()))
    }

    fn invalidate(&self, stage: &str) {
        let _ = fs::remove_file(self.marker(stage));
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = effective_config(&cli.opts)?;
    match &cli.command {
        Command::Pano { input } | Command::All { input } => {
            if let Some(p) = input {
                require(p)?;
                cfg.input = Some(p.clone());
            } else if let Some(p) = &cfg.input {
                require(p)?;
            }
        }
        Command::Depth { panorama } => {
            if let Some(p) = panorama {
                require(p)?;
            }
        }
        Command::Ldi { panorama, depth } => {
            for p in [panorama, depth].into_iter().flatten() {
                require(p)?;
            }
        }
        Command::Oracles => {
            for (kind, name, desc) in registry(&cfg).describe() {
                println!("{kind:<9} {name:<17} {desc}");
            }
            return Ok(());
        }
    }

    let layout = cfg.layout.build()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let text = cfg.to_toml()?;
    fs::write(out.join("config.toml"), &text).context("writing config.toml")?;
    let run = Run {
        registry: registry(&cfg),
        layout,
        out,
        resume: cli.opts.resume,
        stamp: text,
        cfg,
    };

    match cli.command {
        Command::Pano { .. } => pano(&run),
        Command::Depth { panorama } => depth(&run, panorama.as_deref()),
        Command::Ldi { panorama, depth } => ldi_stage(&run, panorama.as_deref(), depth.as_deref()),
        Command::All { .. } => {
            pano(&run)?;
            depth(&run, None)?;
            ldi_stage(&run, None, None)
        }
        Command::Oracles => unreachable!(),
    }
}

fn load_input(run: &Run) -> Result<Image, Failure> {
    match &run.cfg.input {
        Some(path) => {
            require(path)?;
            Ok(io::read_image(path)?)
        }
        None => {
            log::info!("no input given; using the synthetic fixture");
            Ok(pipeline::synthetic_input(&run.layout, run.cfg.oracle.fixture_seed))
        }
    }
}

fn pano(run: &Run) -> Result<(), Failure> {
    if run.is_done("pano", &[PANORAMA]) {
        log::info!("pano: up to date, skipping");
        return Ok(());
    }
    for stage in ["pano", "depth", "ldi"] {
        run.invalidate(stage);
    }
    let input = load_input(run)?;
    let stage = pipeline::run_pano(&run.cfg, &run.registry, &input)?;
    io::write_png16(&stage.output.panorama, &run.path(PANORAMA))?;
    run.write_json(
        "pano_diagnostics.json",
        &json!({
            "canvas": [stage.layout.canvas_width, stage.layout.canvas_height],
            "input_rect": stage.rect,
            "iterations": stage.output.diagnostics,
        }),
    )?;
    log::info!("pano: wrote {}", run.path(PANORAMA).display());
    run.finish("pano")?;
    Ok(())
}

fn load_panorama(run: &Run, path: &Path) -> Result<Image, Failure> {
    require(path)?;
    let pano = io::read_image(path)?;
    pano.ensure_dims("panorama", run.layout.canvas_width, run.layout.canvas_height)?;
    Ok(pano)
}

fn depth(run: &Run, panorama: Option<&Path>) -> Result<(), Failure> {
    if panorama.is_none() && run.is_done("depth", &[DEPTH]) {
        log::info!("depth: up to date, skipping");
        return Ok(());
    }
    run.invalidate("depth");
    run.invalidate("ldi");
    let pano_path = panorama.map_or_else(|| run.path(PANORAMA), Path::to_path_buf);
    let pano = load_panorama(run, &pano_path)?;
    let fused = pipeline::run_depth(&run.cfg, &run.registry, &run.layout, &pano)?;
    write_depth_outputs(run, &fused)?;
    log::info!(
        "depth: objective {:.6e} -> {:.6e}",
        fused.objective.first().map_or(0.0, |r| r.value),
        fused.objective.last().map_or(0.0, |r| r.value)
    );
    if panorama.is_none() {
        run.finish("depth")?;
    }
    Ok(())
}

fn write_depth_outputs(run: &Run, fused: &FusionOutput) -> anyhow::Result<()> {
    io::write_pfm(&fused.depth.depth, &run.path(DEPTH))?;
    io::write_depth_preview(&fused.depth.depth, &run.path("depth_preview.png"))?;
    let theta: Vec<_> = fused
        .maps
        .iter()
        .enumerate()
        .map(|(i, m)| {
            json!({
                "crop": i,
                "yaw": run.layout.yaw(i),
                "knots": m.knots(),
                "values": m.values(),
                "segments": m.segments(),
            })
        })
        .collect();
    run.write_json("theta.json", &theta)?;
    run.write_json(
        "depth_diagnostics.json",
        &json!({
            "objective": fused.objective,
            "seams": fused.seams,
        }),
    )
}

fn ldi_stage(run: &Run, panorama: Option<&Path>, depth: Option<&Path>) -> Result<(), Failure> {
    let explicit = panorama.is_some() || depth.is_some();
    if !explicit && run.is_done("ldi", &[SEEDS]) {
        log::info!("ldi: up to date, skipping");
        return Ok(());
    }
    run.invalidate("ldi");
    let pano_path = panorama.map_or_else(|| run.path(PANORAMA), Path::to_path_buf);
    let depth_path = depth.map_or_else(|| run.path(DEPTH), Path::to_path_buf);
    let pano = load_panorama(run, &pano_path)?;
    require(&depth_path)?;
    let depth: DepthMap = io::read_pfm(&depth_path)?;
    depth.ensure_dims("depth map", pano.width(), pano.height())?;

    let stage = pipeline::run_ldi(&run.cfg, &run.layout, &pano, &depth)?;
    let (w, h) = (stage.completed.width, stage.completed.height);
    let mut layers = Vec::new();
    for (i, layer) in stage.completed.layers.iter().enumerate() {
        io::write_png16(&layer.color, &run.path(&format!("layer_{i}_color.png")))?;
        io::write_mask_png(&layer.occupancy, w, h, &run.path(&format!("layer_{i}_mask.png")))?;
        io::write_mask_png(&layer.filled, w, h, &run.path(&format!("layer_{i}_filled.png")))?;
        layers.push(json!({
            "index": i,
            "mean_disparity": layer.mean_disparity,
            "occupied": layer.occupied_count(),
            "filled": layer.filled_count(),
        }));
    }
    ldi::write_ply(&stage.seeds.seeds, &run.path(SEEDS))?;
    run.write_json(
        "ldi.json",
        &json!({
            "width": w,
            "height": h,
            "wrap": stage.completed.wrap,
            "active_layers": stage.decomposition.active_layers(),
            "filler": "harmonic-diffusion-fallback",
            "layers": layers,
            "seeds": stage.seeds.seeds.len(),
            "skipped": stage.seeds.skipped,
        }),
    )?;
    log::info!("ldi: {} seeds in {}", stage.seeds.seeds.len(), run.path(SEEDS).display());
    if !explicit {
        run.finish("ldi")?;
    }
    Ok(())
}
