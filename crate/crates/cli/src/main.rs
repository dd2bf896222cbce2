mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Panorama outpainting, panoramic depth fusion and layered Gaussian export.
#[derive(Debug, Parser)]
#[command(name = "panofusion", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub opts: GlobalOpts,
}

#[derive(Debug, Args, Default, Clone)]
pub struct GlobalOpts {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use the in-process synthetic oracles regardless of configuration.
    #[arg(long, global = true)]
    pub synthetic: bool,
    /// Skip stages whose outputs are already complete for this configuration.
    #[arg(long, global = true)]
    pub resume: bool,
    /// Denoiser oracle name (see `panofusion oracles`).
    #[arg(long, global = true)]
    pub denoiser: Option<String>,
    /// Depth oracle name (see `panofusion oracles`).
    #[arg(long, global = true)]
    pub depth_oracle: Option<String>,
    /// Base URL of a remote oracle service; enables the `remote` oracles.
    #[arg(long, global = true, env = "PANOFUSION_ORACLE_URL")]
    pub oracle_url: Option<String>,
    #[arg(long, global = true)]
    pub fov: Option<f64>,
    #[arg(long, global = true)]
    pub crops: Option<usize>,
    #[arg(long, global = true)]
    pub crop_size: Option<usize>,
    #[arg(long, global = true)]
    pub outer_iters: Option<usize>,
    /// Denoising steps per outer iteration.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub second_term_weight: Option<f32>,
    #[arg(long, global = true)]
    pub prompt: Option<String>,
    #[arg(long, global = true)]
    pub depth_iters: Option<usize>,
    /// Segments per alignment map.
    #[arg(long, global = true)]
    pub segments: Option<usize>,
    /// Allow non-monotone alignment maps.
    #[arg(long, global = true)]
    pub no_monotone: bool,
    /// Number of layered-depth layers.
    #[arg(long, global = true)]
    pub layers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Outpaint a 360° cylindrical panorama from one image.
    Pano {
        /// Input image; omitted means a crop of the synthetic fixture.
        #[arg(long, short)]
        input: Option<PathBuf>,
    },
    /// Fuse per-crop depth estimates into a panoramic depth map.
    Depth {
        /// Panorama PNG (default: `<output>/panorama.png`).
        #[arg(long)]
        panorama: Option<PathBuf>,
    },
    /// Build the layered depth image and export Gaussian seeds.
    Ldi {
        #[arg(long)]
        panorama: Option<PathBuf>,
        /// Depth PFM (default: `<output>/depth.pfm`).
        #[arg(long)]
        depth: Option<PathBuf>,
    },
    /// Run pano, depth and ldi in sequence.
    All {
        #[arg(long, short)]
        input: Option<PathBuf>,
    },
    /// List the registered oracles.
    Oracles,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
