use proptest::prelude::*;

use panofusion::geometry::{CylinderSpec, PerspectiveCamera};
use panofusion::image::{DepthMap, Image};
use panofusion::ldi::{
    cluster_layers, fill_holes, fill_region, init_gaussians, read_ply, write_ply, ClusterConfig, FillConfig,
    GaussianSeed, Layer, LayeredDepthImage,
};
use panofusion::seed;

/// Best two-cluster split of `values` by exhaustive threshold search
/// (minimum within-cluster sum of squares).
fn best_threshold(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let prefix: Vec<f64> = std::iter::once(0.0)
        .chain(sorted.iter().scan(0.0, |s, &v| {
            *s += v;
            Some(*s)
        }))
        .collect();
    let prefix_sq: Vec<f64> = std::iter::once(0.0)
        .chain(sorted.iter().scan(0.0, |s, &v| {
            *s += v * v;
            Some(*s)
        }))
        .collect();
    let sse = |a: usize, b: usize| {
        let m = (b - a) as f64;
        let s = prefix[b] - prefix[a];
        prefix_sq[b] - prefix_sq[a] - s * s / m
    };
    let split = (1..n)
        .min_by(|&i, &j| (sse(0, i) + sse(i, n)).total_cmp(&(sse(0, j) + sse(j, n))))
        .unwrap();
    (sorted[split - 1] + sorted[split]) / 2.0
}

#[test]
fn two_planes_match_exhaustive_threshold_search() {
    let (w, h) = (120, 40);
    let noise = seed::normals(31, w * h);
    let depth = DepthMap::from_fn(w, h, 1, |x, y, _| {
        let plane = if x < 70 { 0.3 + 0.001 * y as f64 } else { 0.7 - 0.0005 * x as f64 };
        plane + 0.005 * noise[y * w + x] as f64
    });
    let pano = Image::filled(w, h, 3, 0.5);
    let cfg = ClusterConfig {
        k: 2,
        ..Default::default()
    };
    let ldi = cluster_layers(&pano, &depth, false, &cfg).unwrap();
    let threshold = best_threshold(depth.data());
    let labels = ldi.labels();
    let agree = depth
        .data()
        .iter()
        .zip(&labels)
        .filter(|(&d, &l)| l == Some(if d > threshold { 0 } else { 1 }))
        .count();
    assert!(agree as f64 >= 0.99 * (w * h) as f64, "{agree} of {}", w * h);
}

#[test]
fn ramp_hole_is_filled_close_to_the_ramp() {
    let (w, h) = (24, 12);
    let ramp = |x: usize| 0.2 + 0.6 * x as f32 / (w - 1) as f32;
    let mut color = Image::from_fn(w, h, 3, |x, _, _| ramp(x));
    let mut depth = DepthMap::filled(w, h, 1, 0.5);
    let hole = [(10, 5), (11, 5), (12, 5), (13, 5)];
    let mut known = vec![true; w * h];
    let mut candidates = vec![false; w * h];
    for &(x, y) in &hole {
        known[y * w + x] = false;
        candidates[y * w + x] = true;
        for c in 0..3 {
            color.set(x, y, c, 0.0);
        }
    }
    let filled = fill_region(&mut color, &mut depth, &known, &candidates, false, &FillConfig::default());
    for &(x, y) in &hole {
        assert!(filled[y * w + x]);
        let v = color.get(x, y, 0);
        assert!((v - ramp(x)).abs() <= 0.01 * ramp(x), "({x}, {y}): {v} vs {}", ramp(x));
    }
}

#[test]
fn fully_occupied_layer_is_unchanged() {
    let (w, h) = (16, 8);
    let layer = Layer {
        color: Image::from_fn(w, h, 3, |x, y, c| (x + y + c) as f32 / 30.0),
        depth: DepthMap::filled(w, h, 1, 0.4),
        occupancy: vec![true; w * h],
        filled: vec![false; w * h],
        mean_disparity: 0.4,
    };
    let ldi = LayeredDepthImage {
        width: w,
        height: h,
        wrap: true,
        layers: vec![layer],
    };
    assert_eq!(fill_holes(&ldi, &FillConfig::default()), ldi);
}

fn single_pixel(cyl: &CylinderSpec, u: usize, v: usize, disparity: f64) -> GaussianSeed {
    let (w, h) = (cyl.width, cyl.height);
    let mut occupancy = vec![false; w * h];
    occupancy[v * w + u] = true;
    let ldi = LayeredDepthImage {
        width: w,
        height: h,
        wrap: true,
        layers: vec![Layer {
            color: Image::filled(w, h, 3, 0.25),
            depth: DepthMap::filled(w, h, 1, disparity),
            occupancy,
            filled: vec![false; w * h],
            mean_disparity: disparity,
        }],
    };
    let set = init_gaussians(&ldi, cyl).unwrap();
    assert_eq!(set.seeds.len(), 1);
    set.seeds[0]
}

#[test]
fn gaussian_seed_geometry() {
    let cam = PerspectiveCamera::new(45.0, 64, 64).unwrap();
    let cyl = CylinderSpec::for_camera(&cam);
    let (u, v) = (cyl.center_column(), cyl.center_row());
    assert_eq!(cyl.azimuth(u as f64), 0.0);
    let s = single_pixel(&cyl, u, v, 1.0);
    assert!(s.position[0].abs() < 1e-6 && s.position[1].abs() < 1e-6);
    assert!((s.position[2] - 1.0).abs() < 1e-6);
    assert_eq!(s.opacity, 0.5);
    assert_eq!(s.rotation, [1.0, 0.0, 0.0, 0.0]);

    let near = single_pixel(&cyl, u + 3, v + 2, 2.0);
    let far = single_pixel(&cyl, u + 3, v + 2, 1.0);
    for k in 0..3 {
        assert!((2.0 * near.position[k] - far.position[k]).abs() < 1e-6);
        assert!((2.0 * near.scale[k] - far.scale[k]).abs() < 1e-9);
    }
    let r = |p: [f32; 3]| (p[0] * p[0] + p[2] * p[2]).sqrt();
    assert!((r(near.position) - 0.5).abs() < 1e-6);
}

fn seed_strategy() -> impl Strategy<Value = GaussianSeed> {
    (
        prop::array::uniform3(any::<f32>()),
        prop::array::uniform3(any::<f32>()),
        prop::array::uniform3(any::<f32>()),
        prop::array::uniform4(any::<f32>()),
        any::<f32>(),
        any::<u8>(),
    )
        .prop_map(|(position, color, scale, rotation, opacity, layer_id)| GaussianSeed {
            position,
            color,
            scale,
            rotation,
            opacity,
            layer_id,
        })
}

fn bits(s: &GaussianSeed) -> Vec<u32> {
    s.position
        .iter()
        .chain(&s.color)
        .chain(&s.scale)
        .chain(&s.rotation)
        .chain(std::iter::once(&s.opacity))
        .map(|v| v.to_bits())
        .chain(std::iter::once(u32::from(s.layer_id)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ply_round_trip_is_lossless(seeds in prop::collection::vec(seed_strategy(), 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ply");
        write_ply(&seeds, &path).unwrap();
        let back = read_ply(&path).unwrap();
        prop_assert_eq!(back.len(), seeds.len());
        for (a, b) in back.iter().zip(&seeds) {
            prop_assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn layers_partition_and_seed_counts_add_up(seed_value in any::<u64>(), w in 8usize..40, h in 4usize..16, k in 1usize..5) {
        let noise = seed::normals(seed_value, w * h);
        let depth = DepthMap::from_fn(w, h, 1, |x, y, _| 0.5 + 0.2 * noise[y * w + x] as f64 + 0.01 * x as f64);
        let pano = Image::filled(w, h, 3, 0.3);
        let cfg = ClusterConfig { k, ..Default::default() };
        let ldi = cluster_layers(&pano, &depth, true, &cfg).unwrap();
        prop_assert_eq!(ldi.layers.len(), k);
        for q in 0..w * h {
            let owners = ldi.layers.iter().filter(|l| l.occupancy[q]).count();
            prop_assert_eq!(owners, 1);
        }
        let active: Vec<f64> = ldi.layers.iter().filter(|l| !l.is_empty()).map(|l| l.mean_disparity).collect();
        for pair in active.windows(2) {
            prop_assert!(pair[0] > pair[1]);
        }

        let cam = PerspectiveCamera::new(45.0, 16, 16).unwrap();
        let mut cyl = CylinderSpec::for_camera(&cam);
        cyl.width = w;
        cyl.height = h;
        let completed = fill_holes(&ldi, &FillConfig::default());
        let seeds = init_gaussians(&completed, &cyl).unwrap();
        let expected: usize = completed.layers.iter().map(|l| l.occupied_count() + l.filled_count()).sum();
        prop_assert_eq!(seeds.seeds.len() + seeds.skipped, expected);
    }
}
