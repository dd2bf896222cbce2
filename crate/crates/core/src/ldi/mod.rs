//! Layered depth image: disparity clustering into a fixed number of layers,
//! fallback hole filling and Gaussian seed export.

mod fill;
mod gaussians;
mod ply;

pub use fill::{fill_holes, fill_region, FillConfig};
pub use gaussians::{init_gaussians, GaussianSeed, SeedSet};
pub use ply::{read_ply, write_ply};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Number of layers.
    pub k: usize,
    /// Histogram bins over the disparity range.
    pub bins: usize,
    /// Clusters holding less than this fraction of pixels are merged into
    /// their nearest neighbor.
    pub min_cluster_frac: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 4,
            bins: 256,
            min_cluster_frac: 0.0,
        }
    }
}

/// One layer of the decomposition. Empty layers have no occupied pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub color: Image,
    pub depth: DepthMap,
    pub occupancy: Vec<bool>,
    /// Pixels synthesized by [`fill_holes`].
    pub filled: Vec<bool>,
    pub mean_disparity: f64,
}

impl Layer {
    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    pub fn filled_count(&self) -> usize {
        self.filled.iter().filter(|&&f| f).count()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied_count() == 0
    }
}

/// Layers ordered from nearest (largest mean disparity) to farthest;
/// empty layers come last.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredDepthImage {
    pub width: usize,
    pub height: usize,
    pub wrap: bool,
    pub layers: Vec<Layer>,
}

impl LayeredDepthImage {
    pub fn active_layers(&self) -> usize {
        self.layers.iter().filter(|l| !l.is_empty()).count()
    }

    /// Per pixel, index of the layer occupying it.
    pub fn labels(&self) -> Vec<Option<u8>> {
        let mut labels = vec![None; self.width * self.height];
        for (i, layer) in self.layers.iter().enumerate() {
            for (q, &o) in layer.occupancy.iter().enumerate() {
                if o {
                    labels[q] = Some(i as u8);
                }
            }
        }
        labels
    }
}

/// Contiguous run of histogram bins with its pixel statistics.
#[derive(Debug, Clone, Copy)]
struct Cluster {
    first_bin: usize,
    last_bin: usize,
    count: usize,
    sum: f64,
}

impl Cluster {
    fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    fn absorb(&mut self, other: &Cluster) {
        self.first_bin = self.first_bin.min(other.first_bin);
        self.last_bin = self.last_bin.max(other.last_bin);
        self.count += other.count;
        self.sum += other.sum;
    }
}

fn bin_of(d: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((d - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

/// Average-linkage agglomeration of the disparity histogram down to
/// `cfg.k` clusters, returned in increasing disparity order.
///
/// In one dimension the average linkage between two ordered, disjoint
/// clusters is the difference of their means, so the closest pair is
/// always adjacent and only adjacent merges need to be considered.
fn agglomerate(hist_count: &[usize], hist_sum: &[f64], cfg: &ClusterConfig) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = hist_count
        .iter()
        .zip(hist_sum)
        .enumerate()
        .filter(|(_, (&c, _))| c > 0)
        .map(|(b, (&count, &sum))| Cluster {
            first_bin: b,
            last_bin: b,
            count,
            sum,
        })
        .collect();
    let merge_closest = |clusters: &mut Vec<Cluster>, candidates: &dyn Fn(usize) -> bool| {
        let best = (0..clusters.len() - 1)
            .filter(|&i| candidates(i))
            .min_by(|&a, &b| {
                let da = clusters[a + 1].mean() - clusters[a].mean();
                let db = clusters[b + 1].mean() - clusters[b].mean();
                da.total_cmp(&db)
            });
        if let Some(i) = best {
            let right = clusters.remove(i + 1);
            clusters[i].absorb(&right);
        }
    };
    while clusters.len() > cfg.k.max(1) {
        merge_closest(&mut clusters, &|_| true);
    }
    let total: usize = clusters.iter().map(|c| c.count).sum();
    let min_count = (cfg.min_cluster_frac * total as f64).ceil() as usize;
    while clusters.len() > 1 {
        let Some(small) = clusters.iter().position(|c| c.count < min_count) else {
            break;
        };
        merge_closest(&mut clusters, &|i| i == small || i + 1 == small);
    }
    clusters
}

/// Splits `pano` into `cfg.k` layers by clustering `depth` (disparity).
pub fn cluster_layers(pano: &Image, depth: &DepthMap, wrap: bool, cfg: &ClusterConfig) -> Result<LayeredDepthImage> {
    let (w, h) = (depth.width(), depth.height());
    pano.ensure_dims("panorama", w, h)?;
    if cfg.k == 0 || cfg.bins == 0 {
        return Err(Error::Config("cluster k and bins must be positive".into()));
    }
    if !depth.is_finite() {
        return Err(Error::NonFiniteInput("depth"));
    }
    let (lo, hi) = depth
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    let mut hist_count = vec![0usize; cfg.bins];
    let mut hist_sum = vec![0.0f64; cfg.bins];
    for &d in depth.data() {
        let b = bin_of(d, lo, hi, cfg.bins);
        hist_count[b] += 1;
        hist_sum[b] += d;
    }
    let clusters = agglomerate(&hist_count, &hist_sum, cfg);
    if clusters.len() < cfg.k {
        log::warn!(
            "only {} distinct disparity cluster(s) for {} layers; remaining layers are empty",
            clusters.len(),
            cfg.k
        );
    }

    // nearest layer first
    let mut bin_layer = vec![0usize; cfg.bins];
    let n = clusters.len();
    for (i, c) in clusters.iter().enumerate() {
        for slot in &mut bin_layer[c.first_bin..=c.last_bin] {
            *slot = n - 1 - i;
        }
    }
    let mut layers: Vec<Layer> = (0..cfg.k)
        .map(|i| Layer {
            color: Image::new(w, h, pano.channels()),
            depth: DepthMap::new(w, h, 1),
            occupancy: vec![false; w * h],
            filled: vec![false; w * h],
            mean_disparity: if i < n { clusters[n - 1 - i].mean() } else { f64::NAN },
        })
        .collect();
    let c = pano.channels();
    for (q, &d) in depth.data().iter().enumerate() {
        let layer = &mut layers[bin_layer[bin_of(d, lo, hi, cfg.bins)]];
        layer.occupancy[q] = true;
        layer.depth.data_mut()[q] = d;
        layer.color.data_mut()[q * c..(q + 1) * c].copy_from_slice(pano.pixel(q));
    }
    Ok(LayeredDepthImage {
        width: w,
        height: h,
        wrap,
        layers,
    })
}
