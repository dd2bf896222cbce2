//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary so criteria execute sequentially and their timings are honest.

use std::collections::HashMap;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use panofusion::depthfusion::{
    fuse, patch_supports, solve_depth_stage, solve_theta_stage, FusionConfig, PanoDepth,
};
use panofusion::fixtures;
use panofusion::geometry::{
    build_planar_layout, default_layout, project_forward, CropLayout,
    PerspectiveCamera, SENTINEL,
};
use panofusion::image::{DepthMap, Image, Mask, Rect};
use panofusion::ldi::{self, read_ply, write_ply, ClusterConfig, FillConfig};
use panofusion::metrics::{gauge_aligned_rmse, masked_rmse, pearson, seam_metric};
use panofusion::oracle::synthetic::{crop_distortions, ContractFixtureDenoiser, ContractKnownDenoiser, FixtureDepth};
use panofusion::oracle::{DenoiserOracle, NoiseSchedule, OracleRegistry};
use panofusion::pipeline::{self, PipelineConfig};
use panofusion::sampler::{self, aggregate_crops, unknown_mask, SamplerConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn cylinder_layout(px: usize) -> CropLayout {
    let cam = PerspectiveCamera::new(45.0, px, px).unwrap();
    default_layout(&cam, 16).unwrap()
}

/// Records every sampler run's input region for the preservation criterion.
#[derive(Default)]
struct Preservation {
    runs: usize,
    failures: Vec<String>,
}

impl Preservation {
    fn check(&mut self, label: &str, pano: &Image, input: &Image, rect: &Rect) {
        self.runs += 1;
        let c = pano.channels();
        for y in 0..rect.height {
            for x in 0..rect.width {
                for k in 0..c {
                    if pano.get(rect.x + x, rect.y + y, k).to_bits() != input.get(x, y, k).to_bits() {
                        self.failures.push(format!("{label} at ({x}, {y})"));
                        return;
                    }
                }
            }
        }
    }
}

fn aggregation_exactness() -> Verdict {
    let mut elapsed = Duration::ZERO;
    let mut rng = ChaCha8Rng::seed_from_u64(0xA66);
    let instances = 120;
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < instances {
        let ch = rng.random_range(4..=32);
        let cw = rng.random_range(8..=96);
        let n = rng.random_range(1..=5);
        let crop_w = rng.random_range((cw / n).max(1)..=cw);
        // windows that leave a gap are not valid layouts
        let Ok(layout) = build_planar_layout(cw, ch, crop_w, ch, n) else {
            continue;
        };
        done += 1;
        let c = rng.random_range(1..=3);
        let outputs: Vec<Image> = (0..n)
            .map(|_| Image::from_fn(crop_w, ch, c, |_, _, _| rng.random_range(-1.0..1.0)))
            .collect();
        let masks: Vec<Mask> = (0..n)
            .map(|_| {
                Mask::from_fn(crop_w, ch, 1, |_, _, _| {
                    if rng.random_bool(0.3) {
                        0.0
                    } else {
                        rng.random_range(0.0..1.0)
                    }
                })
            })
            .collect();
        let unknown = Mask::new(cw, ch, 1);
        let start = Instant::now();
        let (got, empty) = aggregate_crops(&outputs, &masks, &layout, &unknown).unwrap();
        elapsed += start.elapsed();

        // per canvas pixel and channel: minimize Σ w (x − v)² → (Σ w) x = Σ w v
        for q in 0..cw * ch {
            for k in 0..c {
                let (mut a, mut b) = (0.0f64, 0.0f64);
                for (i, map) in layout.maps.iter().enumerate() {
                    for (p, &f) in map.forward.iter().enumerate() {
                        if f == q as i32 {
                            let w = masks[i].data()[p] as f64;
                            a += w;
                            b += w * outputs[i].data()[p * c + k] as f64;
                        }
                    }
                }
                if a == 0.0 {
                    if !empty[q] {
                        return verdict(false, format!("pixel {q} has zero weight but was not flagged"));
                    }
                    continue;
                }
                let x = b / a;
                worst = worst.max((x - got.data()[q * c + k] as f64).abs());
            }
        }
    }
    verdict(
        worst <= 1e-6 && elapsed < Duration::from_secs(10),
        format!("{instances} instances, max |Δ| = {worst:.2e} (≤ 1e-6), {elapsed:.2?} in aggregation (< 10 s)"),
    )
}

const CONVERGENCE_PX: usize = 64;

fn convergence(preservation: &mut Preservation) -> Verdict {
    let start = Instant::now();
    let layout = cylinder_layout(CONVERGENCE_PX);
    let (cw, ch) = (layout.canvas_width, layout.canvas_height);
    let fixed_point = Arc::new(fixtures::panorama(cw, ch, 3, 0));
    let config = SamplerConfig {
        outer_iters: 20,
        inner_steps: 10,
        seed: 1,
        ..Default::default()
    };
    let oracle = ContractFixtureDenoiser {
        schedule: NoiseSchedule::new(10, 0.5),
        rate: 0.5,
        fixture: fixed_point.clone(),
    };
    let input = pipeline::synthetic_input(&layout, 0);
    let rect = Rect::centered(cw / 2, ch / 2, input.width(), input.height());
    let out = sampler::run(&input, rect, &oracle, &layout, &config).unwrap();
    let elapsed = start.elapsed();
    preservation.check("convergence", &out.panorama, &input, &rect);

    let unknown = unknown_mask(cw, ch, &rect);
    let mask: Vec<bool> = unknown.data().iter().map(|&u| u > 0.0).collect();
    let err = masked_rmse(&out.panorama, &fixed_point, &mask);
    let seam = seam_metric(&out.panorama, &layout);
    let ratio = seam.ratio();
    verdict(
        err <= 1e-3 && ratio <= 2.0 && elapsed < Duration::from_secs(120),
        format!(
            "{CONVERGENCE_PX} px crops, canvas {cw}x{ch}, T=10, 20 iterations: RMSE {err:.2e} (≤ 1e-3), \
             seam/interior {ratio:.3} (≤ 2), {elapsed:.2?} (< 2 min)"
        ),
    )
}

fn preservation_extra(preservation: &mut Preservation) {
    // a denoiser that ignores the fixture and a blended final step
    let layout = cylinder_layout(32);
    let input = pipeline::synthetic_input(&layout, 5);
    let rect = Rect::new(3, 2, input.width(), input.height());
    for (label, weight) in [("contract-known", 0.0f32), ("contract-known blended", 0.5)] {
        let oracle = ContractKnownDenoiser {
            schedule: NoiseSchedule::new(4, 0.5),
            rate: 0.3,
        };
        let config = SamplerConfig {
            outer_iters: 3,
            inner_steps: 4,
            seed: 9,
            second_term_weight: weight,
            ..Default::default()
        };
        let out = sampler::run(&input, rect, &oracle as &dyn DenoiserOracle, &layout, &config).unwrap();
        preservation.check(label, &out.panorama, &input, &rect);
    }
}

fn depth_recovery() -> Verdict {
    let start = Instant::now();
    let sigma = 0.01;
    let layout = cylinder_layout(64);
    let (cw, ch) = (layout.canvas_width, layout.canvas_height);
    let truth = Arc::new(fixtures::depth(cw, ch));
    let oracle = FixtureDepth {
        depth: truth.clone(),
        distortions: crop_distortions(16, 0, (0.0, 1.0), 0.02, Some(0)),
        noise_sigma: sigma,
        seed: 100,
    };
    let pano = fixtures::panorama(cw, ch, 3, 0);
    let config = FusionConfig {
        iters: 4,
        anchor_index: Some(0),
        ..Default::default()
    };
    let out = fuse(&pano, &layout, &oracle, &config).unwrap();
    let elapsed = start.elapsed();
    let d = out.depth.depth.data();
    let rmse = gauge_aligned_rmse(d, truth.data());
    let r = pearson(d, truth.data());
    let max_increase = out
        .objective
        .windows(2)
        .map(|w| w[1].value - w[0].value)
        .fold(f64::NEG_INFINITY, f64::max);
    verdict(
        rmse <= 2.0 * sigma && r >= 0.999 && max_increase <= 1e-9 && elapsed < Duration::from_secs(60),
        format!(
            "16 patches, σ = {sigma}, 4 iterations: aligned RMSE {rmse:.4} (≤ {}), r = {r:.5} (≥ 0.999), \
             largest objective step {max_increase:.2e} (≤ 1e-9) over {} half-steps, {elapsed:.2?} (< 60 s)",
            2.0 * sigma,
            out.objective.len()
        ),
    )
}

fn depth_stage_exactness() -> Verdict {
    let layout = cylinder_layout(32);
    let (cw, ch) = (layout.canvas_width, layout.canvas_height);
    let mut rng = ChaCha8Rng::seed_from_u64(0xDE);

    // depth stage: per canvas pixel, minimize Σ_p (D − a_p)² over the
    // aligned values landing on it
    let aligned: Vec<DepthMap> = layout
        .maps
        .iter()
        .map(|m| DepthMap::from_fn(m.crop_width, m.crop_height, 1, |_, _, _| rng.random_range(0.0..1.0)))
        .collect();
    let d = solve_depth_stage(&aligned, &layout).unwrap();
    let mut landing: HashMap<usize, Vec<f64>> = HashMap::new();
    for (map, patch) in layout.maps.iter().zip(&aligned) {
        for (p, &q) in map.forward.iter().enumerate() {
            if q != SENTINEL {
                landing.entry(q as usize).or_default().push(patch.data()[p]);
            }
        }
    }
    let mut depth_err = 0.0f64;
    for q in 0..cw * ch {
        let vals = &landing[&q];
        let a = DMatrix::<f64>::from_element(vals.len(), 1, 1.0);
        let b = DVector::from_column_slice(vals);
        let x = a.svd(true, true).solve(&b, 1e-14).unwrap()[0];
        depth_err = depth_err.max((x - d.depth.data()[q]).abs());
    }

    // theta stage against an active-set enumeration of the constrained LS
    let config = FusionConfig {
        anchor_index: None,
        ..Default::default()
    };
    let mut theta_err = 0.0f64;
    let mut patches = 0;
    while patches < 50 {
        let target = DepthMap::from_fn(cw, ch, 1, |_, _, _| rng.random_range(0.1..0.9));
        let pd = PanoDepth {
            depth: target.clone(),
            valid: vec![true; cw * ch],
        };
        // raw patches: random, often non-monotone, functions of the target
        let raw: Vec<DepthMap> = layout
            .maps
            .iter()
            .map(|m| {
                let (a, b, c) = (
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-0.5..0.5),
                );
                DepthMap::from_fn(m.crop_width, m.crop_height, 1, |x, y, _| {
                    let q = m.fill[y * m.crop_width + x] as usize;
                    let t = target.data()[q];
                    a * t + b * t * t + c + 0.05 * rng.random_range(-1.0..1.0)
                })
            })
            .collect();
        let supports = patch_supports(&raw, &layout, config.segments);
        let maps = solve_theta_stage(&pd, &raw, &supports, &layout, &config).unwrap();
        for (k, map) in layout.maps.iter().enumerate() {
            if patches == 50 {
                break;
            }
            let (xs, ts): (Vec<f64>, Vec<f64>) = map
                .forward
                .iter()
                .enumerate()
                .filter(|(_, &q)| q != SENTINEL)
                .map(|(p, &q)| (raw[k].data()[p], target.data()[q as usize]))
                .unzip();
            let knots: Vec<f64> = supports[k].kept.iter().map(|&i| supports[k].knots[i]).collect();
            let reference = reference_monotone_fit(&knots, &xs, &ts, config.min_slope);
            for (i, &kv) in supports[k].kept.iter().enumerate() {
                theta_err = theta_err.max((reference[i] - maps[k].values()[kv]).abs());
            }
            patches += 1;
        }
    }
    verdict(
        depth_err <= 1e-9 && theta_err <= 1e-6,
        format!("depth stage max |Δ| {depth_err:.2e} (≤ 1e-9); theta stage max |Δ| {theta_err:.2e} (≤ 1e-6) over {patches} patches"),
    )
}

/// Minimizes `Σ (t − G(x))²` over knot values `y` subject to
/// `y[s+1] − y[s] ≥ min_slope · (k[s+1] − k[s])`, by solving the KKT
/// system of every active set and keeping the best feasible solution.
fn reference_monotone_fit(knots: &[f64], xs: &[f64], ts: &[f64], min_slope: f64) -> Vec<f64> {
    let m = knots.len();
    let mut a = DMatrix::<f64>::zeros(xs.len(), m);
    for (r, &x) in xs.iter().enumerate() {
        let s = (0..m - 1).find(|&s| x < knots[s + 1]).unwrap_or(m - 2);
        let u = (x - knots[s]) / (knots[s + 1] - knots[s]);
        a[(r, s)] = 1.0 - u;
        a[(r, s + 1)] = u;
    }
    let t = DVector::from_column_slice(ts);
    let ata = a.transpose() * &a;
    let att = a.transpose() * &t;
    let bound: Vec<f64> = (0..m - 1).map(|s| min_slope * (knots[s + 1] - knots[s])).collect();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for active in 0u32..(1 << (m - 1)) {
        let rows: Vec<usize> = (0..m - 1).filter(|s| active >> s & 1 == 1).collect();
        let size = m + rows.len();
        let mut kkt = DMatrix::<f64>::zeros(size, size);
        let mut rhs = DVector::<f64>::zeros(size);
        kkt.view_mut((0, 0), (m, m)).copy_from(&ata);
        rhs.rows_mut(0, m).copy_from(&att);
        for (j, &s) in rows.iter().enumerate() {
            kkt[(m + j, s)] = -1.0;
            kkt[(m + j, s + 1)] = 1.0;
            kkt[(s, m + j)] = -1.0;
            kkt[(s + 1, m + j)] = 1.0;
            rhs[m + j] = bound[s];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let y = sol.rows(0, m).into_owned();
        if (0..m - 1).any(|s| y[s + 1] - y[s] < bound[s] - 1e-10) {
            continue;
        }
        let cost = (&a * &y - &t).norm_squared();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, y));
        }
    }
    best.expect("the all-active set is always feasible").1.iter().copied().collect()
}

fn projection_round_trip() -> Verdict {
    let cam = PerspectiveCamera::new(45.0, 512, 512).unwrap();
    let layout = default_layout(&cam, 16).unwrap();
    let (cw, ch) = (layout.canvas_width, layout.canvas_height);
    let mut survived = 0usize;
    let mut bijective = 0usize;
    let mut worst_interior = 1.0f64;
    for map in &layout.maps {
        let (w, h) = (map.crop_width, map.crop_height);
        // crop pixel ids → canvas through the backward table → crop
        let canvas = Image::from_fn(cw, ch, 1, |u, v, _| match map.backward[v * cw + u] {
            SENTINEL => -1.0,
            p => p as f32,
        });
        let back = project_forward(map, &canvas).unwrap();
        for p in 0..w * h {
            let q = map.forward[p];
            let is_bijective = q != SENTINEL && map.backward[q as usize] == p as i32;
            if is_bijective != map.bijective_mask[p] {
                return verdict(false, format!("crop {} pixel {p}: bijective mask disagrees with the tables", map.crop_index));
            }
            if is_bijective {
                bijective += 1;
                survived += usize::from(back.data()[p] == p as f32);
            }
        }
        let (x0, x1, y0, y1) = (w / 4, w - w / 4, h / 4, h - h / 4);
        let inside = (y0..y1).flat_map(|y| (x0..x1).map(move |x| y * w + x));
        let (hit, total) = inside.fold((0usize, 0usize), |(a, b), p| (a + usize::from(map.bijective_mask[p]), b + 1));
        worst_interior = worst_interior.min(hit as f64 / total as f64);
    }
    verdict(
        survived == bijective && worst_interior >= 0.95,
        format!(
            "512 px / 45° / 16 crops on {cw}x{ch}: {survived}/{bijective} bijective pixels survive, \
             worst interior coverage {:.2}% (≥ 95%)",
            100.0 * worst_interior
        ),
    )
}

fn ldi_checks() -> Verdict {
    let layout = cylinder_layout(64);
    let (cw, ch) = (layout.canvas_width, layout.canvas_height);
    let levels = [0.2, 0.9, 0.4, 0.6];
    let depth = fixtures::plateau_depth(cw, ch, levels);
    let pano = fixtures::panorama(cw, ch, 3, 4);
    let decomposition = ldi::cluster_layers(&pano, &depth, true, &ClusterConfig::default()).unwrap();
    // nearest first: plateau index → rank by descending disparity
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| levels[b].total_cmp(&levels[a]));
    let mut rank = [0u8; 4];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r as u8;
    }
    let labels = decomposition.labels();
    let exact = (0..cw * ch).all(|q| labels[q] == Some(rank[(4 * (q % cw) / cw).min(3)]));

    let completed = ldi::fill_holes(&decomposition, &FillConfig::default());
    let seeds = ldi::init_gaussians(&completed, layout.cylinder().unwrap()).unwrap().seeds;
    let attrs = seeds
        .iter()
        .all(|s| s.opacity == 0.5 && s.rotation == [1.0, 0.0, 0.0, 0.0]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seeds.ply");
    write_ply(&seeds, &path).unwrap();
    let back = read_ply(&path).unwrap();
    let bits = |s: &ldi::GaussianSeed| -> Vec<u32> {
        s.position
            .iter()
            .chain(&s.color)
            .chain(&s.scale)
            .chain(&s.rotation)
            .chain(std::iter::once(&s.opacity))
            .map(|v| v.to_bits())
            .chain(std::iter::once(s.layer_id as u32))
            .collect()
    };
    let lossless = back.len() == seeds.len() && back.iter().zip(&seeds).all(|(a, b)| bits(a) == bits(b));
    verdict(
        exact && decomposition.active_layers() == 4 && lossless && attrs,
        format!(
            "plateau partition exact: {exact}, active layers {}; PLY round trip of {} seeds lossless: {lossless}; \
             opacity 0.5 / identity rotation on all: {attrs}",
            decomposition.active_layers(),
            seeds.len()
        ),
    )
}

struct PipelineRun {
    panorama: Vec<u32>,
    depth: Vec<u64>,
    ply: Vec<u8>,
}

fn pipeline_once(cfg: &PipelineConfig, preservation: &mut Preservation, label: &str) -> PipelineRun {
    let registry = OracleRegistry::with_builtins();
    let layout = cfg.layout.build().unwrap();
    let input = pipeline::synthetic_input(&layout, cfg.oracle.fixture_seed);
    let pano = pipeline::run_pano(cfg, &registry, &input).unwrap();
    preservation.check(label, &pano.output.panorama, &input, &pano.rect);
    let depth = pipeline::run_depth(cfg, &registry, &layout, &pano.output.panorama).unwrap();
    let stage = pipeline::run_ldi(cfg, &layout, &pano.output.panorama, &depth.depth.depth).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seeds.ply");
    write_ply(&stage.seeds.seeds, &path).unwrap();
    PipelineRun {
        panorama: pano.output.panorama.data().iter().map(|v| v.to_bits()).collect(),
        depth: depth.depth.depth.data().iter().map(|v| v.to_bits()).collect(),
        ply: std::fs::read(&path).unwrap(),
    }
}

fn determinism(preservation: &mut Preservation) -> Verdict {
    let mut cfg = PipelineConfig::default();
    cfg.layout.crop_size = 32;
    cfg.sampler.outer_iters = 3;
    cfg.sampler.seed = 21;
    cfg.oracle.depth_oracle = "distorted".into();
    cfg.oracle.depth_noise = 0.01;
    let a = pipeline_once(&cfg, preservation, "pipeline run 1");
    // second run on a different thread count
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| pipeline_once(&cfg, preservation, "pipeline run 2"));
    let same = [
        ("panorama", a.panorama == b.panorama),
        ("depth", a.depth == b.depth),
        ("PLY", a.ply == b.ply),
    ];
    verdict(
        same.iter().all(|(_, s)| *s),
        same.iter()
            .map(|(n, s)| format!("{n} {}", if *s { "identical" } else { "DIFFERS" }))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

fn main() -> ExitCode {
    let mut preservation = Preservation::default();
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    results.push(("aggregation exactness", aggregation_exactness()));
    results.push(("sampler convergence", convergence(&mut preservation)));
    results.push(("depth fusion recovery", depth_recovery()));
    results.push(("depth stage exactness", depth_stage_exactness()));
    results.push(("projection round trip", projection_round_trip()));
    results.push(("layered depth image", ldi_checks()));
    results.push(("determinism", determinism(&mut preservation)));
    preservation_extra(&mut preservation);
    results.push((
        "input preservation",
        verdict(
            preservation.failures.is_empty(),
            if preservation.failures.is_empty() {
                format!("input region bit-identical in all {} sampler runs", preservation.runs)
            } else {
                format!("differs in {}", preservation.failures.join("; "))
            },
        ),
    ));

    let mut failed = 0;
    for (name, v) in &results {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
