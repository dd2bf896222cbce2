//! Name-keyed constructors for denoiser and depth oracles.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::synthetic::{
    crop_distortions, ConstantDepth, ContractFixtureDenoiser, ContractKnownDenoiser, FixtureDepth,
    IdentityDenoiser, LumaAffineDepth,
};
use super::{DenoiserOracle, DepthOracle, NoiseSchedule};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::image::{DepthMap, Image};

/// Everything a constructor may need. Unused fields are ignored.
#[derive(Debug, Clone)]
pub struct OracleParams {
    pub seed: u64,
    /// Denoising steps `T`.
    pub steps: usize,
    /// Noise level at `t = T` for synthetic schedules.
    pub sigma_max: f32,
    /// Contraction rate of the contractive denoisers.
    pub rate: f32,
    /// Canvas `(width, height, channels)`, used to synthesize fixtures on demand.
    pub canvas: Option<(usize, usize, usize)>,
    pub crop_count: usize,
    pub fixture: Option<Arc<Image>>,
    pub depth_fixture: Option<Arc<DepthMap>>,
    pub constant_depth: f32,
    /// Amplitude of per-crop depth distortions.
    pub distortion: f64,
    pub depth_noise: f64,
    /// Crop left undistorted by the `distorted` depth oracle.
    pub exact_crop: Option<usize>,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 10,
            sigma_max: 0.5,
            rate: 0.5,
            canvas: None,
            crop_count: 16,
            fixture: None,
            depth_fixture: None,
            constant_depth: 0.5,
            distortion: 0.03,
            depth_noise: 0.0,
            exact_crop: Some(0),
        }
    }
}

impl OracleParams {
    fn fixture_image(&self) -> Result<Arc<Image>> {
        if let Some(f) = &self.fixture {
            return Ok(f.clone());
        }
        let (w, h, c) = self
            .canvas
            .ok_or_else(|| Error::Config("fixture oracle needs a fixture image or canvas size".into()))?;
        Ok(Arc::new(fixtures::panorama(w, h, c, self.seed)))
    }

    fn fixture_depth(&self) -> Result<Arc<DepthMap>> {
        if let Some(d) = &self.depth_fixture {
            return Ok(d.clone());
        }
        let (w, h, _) = self
            .canvas
            .ok_or_else(|| Error::Config("fixture depth oracle needs a depth map or canvas size".into()))?;
        Ok(Arc::new(fixtures::depth(w, h)))
    }
}

pub type DenoiserFactory = dyn Fn(&OracleParams) -> Result<Box<dyn DenoiserOracle>> + Send + Sync;
pub type DepthFactory = dyn Fn(&OracleParams) -> Result<Box<dyn DepthOracle>> + Send + Sync;

struct Entry<F: ?Sized> {
    description: String,
    factory: Arc<F>,
}

impl<F: ?Sized> Clone for Entry<F> {
    fn clone(&self) -> Self {
        Self {
            description: self.description.clone(),
            factory: self.factory.clone(),
        }
    }
}

#[derive(Clone, Default)]
pub struct OracleRegistry {
    denoisers: BTreeMap<String, Entry<DenoiserFactory>>,
    depth: BTreeMap<String, Entry<DepthFactory>>,
}

impl std::fmt::Debug for OracleRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OracleRegistry")
            .field("denoisers", &self.denoiser_names())
            .field("depth", &self.depth_names())
            .finish()
    }
}

impl OracleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding every in-process synthetic oracle.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register_denoiser("identity", "returns the crop unchanged", |p| {
            Ok(Box::new(IdentityDenoiser {
                schedule: NoiseSchedule::new(p.steps, p.sigma_max),
            }))
        });
        r.register_denoiser(
            "contract-known",
            "moves the crop toward its condition image by a fixed rate",
            |p| {
                Ok(Box::new(ContractKnownDenoiser {
                    schedule: NoiseSchedule::new(p.steps, p.sigma_max),
                    rate: p.rate,
                }))
            },
        );
        r.register_denoiser(
            "contract-fixture",
            "moves the crop toward the same crop of a fixed panorama",
            |p| {
                Ok(Box::new(ContractFixtureDenoiser {
                    schedule: NoiseSchedule::new(p.steps, p.sigma_max),
                    rate: p.rate,
                    fixture: p.fixture_image()?,
                }))
            },
        );
        r.register_depth("constant", "constant disparity", |p| {
            Ok(Box::new(ConstantDepth {
                value: p.constant_depth,
            }))
        });
        r.register_depth("luma-affine", "luma with a per-yaw affine gauge", |_| {
            Ok(Box::new(LumaAffineDepth))
        });
        r.register_depth("ground-truth", "exact crops of a fixture depth", |p| {
            Ok(Box::new(FixtureDepth::exact(p.fixture_depth()?)))
        });
        r.register_depth(
            "distorted",
            "fixture depth crops under random monotone distortions and noise",
            |p| {
                let depth = p.fixture_depth()?;
                let (lo, hi) = depth
                    .data()
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                Ok(Box::new(FixtureDepth {
                    distortions: crop_distortions(p.crop_count, p.seed, (lo, hi), p.distortion, p.exact_crop),
                    depth,
                    noise_sigma: p.depth_noise,
                    seed: p.seed,
                }))
            },
        );
        r
    }

    pub fn register_denoiser<F>(&mut self, name: &str, description: &str, factory: F)
    where
        F: Fn(&OracleParams) -> Result<Box<dyn DenoiserOracle>> + Send + Sync + 'static,
    {
        self.denoisers.insert(
            name.to_string(),
            Entry {
                description: description.to_string(),
                factory: Arc::new(factory),
            },
        );
    }

    pub fn register_depth<F>(&mut self, name: &str, description: &str, factory: F)
    where
        F: Fn(&OracleParams) -> Result<Box<dyn DepthOracle>> + Send + Sync + 'static,
    {
        self.depth.insert(
            name.to_string(),
            Entry {
                description: description.to_string(),
                factory: Arc::new(factory),
            },
        );
    }

    pub fn denoiser(&self, name: &str, params: &OracleParams) -> Result<Box<dyn DenoiserOracle>> {
        let entry = self.denoisers.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "denoiser",
            name: name.to_string(),
            available: self.denoiser_names().join(", "),
        })?;
        (entry.factory)(params)
    }

    pub fn depth(&self, name: &str, params: &OracleParams) -> Result<Box<dyn DepthOracle>> {
        let entry = self.depth.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "depth oracle",
            name: name.to_string(),
            available: self.depth_names().join(", "),
        })?;
        (entry.factory)(params)
    }

    pub fn denoiser_names(&self) -> Vec<String> {
        self.denoisers.keys().cloned().collect()
    }

    pub fn depth_names(&self) -> Vec<String> {
        self.depth.keys().cloned().collect()
    }

    /// `(name, description)` pairs for both kinds, for `--help`-style listings.
    pub fn describe(&self) -> Vec<(String, String, String)> {
        self.denoisers
            .iter()
            .map(|(n, e)| ("denoiser".to_string(), n.clone(), e.description.clone()))
            .chain(
                self.depth
                    .iter()
                    .map(|(n, e)| ("depth".to_string(), n.clone(), e.description.clone())),
            )
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_listed_sorted() {
        let r = OracleRegistry::with_builtins();
        assert_eq!(
            r.denoiser_names(),
            vec!["contract-fixture", "contract-known", "identity"]
        );
        assert_eq!(
            r.depth_names(),
            vec!["constant", "distorted", "ground-truth", "luma-affine"]
        );
    }

    #[test]
    fn unknown_name_lists_alternatives() {
        let r = OracleRegistry::with_builtins();
        match r.denoiser("sdxl", &OracleParams::default()) {
            Err(Error::UnknownStrategy { available, .. }) => assert!(available.contains("identity")),
            _ => panic!("expected unknown strategy"),
        }
    }

    #[test]
    fn fixture_oracles_need_a_source() {
        let r = OracleRegistry::with_builtins();
        assert!(r.denoiser("contract-fixture", &OracleParams::default()).is_err());
        let p = OracleParams {
            canvas: Some((64, 16, 3)),
            ..OracleParams::default()
        };
        assert!(r.denoiser("contract-fixture", &p).is_ok());
        assert!(r.depth("distorted", &p).is_ok());
    }

    #[test]
    fn later_registration_overrides() {
        let mut r = OracleRegistry::with_builtins();
        r.register_depth("constant", "always one", |_| Ok(Box::new(ConstantDepth { value: 1.0 })));
        assert_eq!(r.depth_names().len(), 4);
    }
}
