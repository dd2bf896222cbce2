use std::sync::Arc;

use panofusion::image::{DepthMap, Image};
use panofusion::oracle::{
    CropContext, DenoiseCondition, DenoiserOracle, DepthOracle, NoiseSchedule, OracleError, OracleResult,
};

use crate::client::OracleClient;
use crate::wire::{DenoiseRequest, DepthRequest, TensorMessage};

/// Denoiser served over HTTP. Renoising of known content uses a local
/// schedule, so only `denoise_step` crosses the wire.
#[derive(Debug, Clone)]
pub struct RemoteDenoiser {
    pub client: Arc<OracleClient>,
    pub schedule: NoiseSchedule,
}

impl DenoiserOracle for RemoteDenoiser {
    fn name(&self) -> &str {
        "remote"
    }

    fn steps(&self) -> usize {
        self.schedule.steps
    }

    fn denoise_step(
        &self,
        crop: &Image,
        t: usize,
        condition: &DenoiseCondition,
        ctx: &CropContext<'_>,
        seed: u64,
    ) -> OracleResult<Image> {
        let request = DenoiseRequest {
            request_id: self.client.next_request_id(),
            seed,
            t,
            yaw: ctx.yaw,
            prompt: condition.prompt.to_string(),
            crop_state: TensorMessage::from_image(crop),
            mask: TensorMessage::from_image(&condition.mask),
            known: TensorMessage::from_image(&condition.known),
        };
        let output = self
            .client
            .denoise(&request)
            .map_err(|e| OracleError::new(e.to_string()))?;
        output.to_image().map_err(|e| OracleError::new(e.to_string()))
    }

    fn renoise(&self, clean: &Image, t: usize, seed: u64) -> Image {
        self.schedule.renoise(clean, t, seed)
    }
}

/// Depth estimator served over HTTP.
#[derive(Debug, Clone)]
pub struct RemoteDepth {
    pub client: Arc<OracleClient>,
    pub seed: u64,
}

impl DepthOracle for RemoteDepth {
    fn name(&self) -> &str {
        "remote"
    }

    fn estimate(&self, crop: &Image, ctx: &CropContext<'_>) -> OracleResult<DepthMap> {
        let request = DepthRequest {
            request_id: self.client.next_request_id(),
            seed: panofusion::seed::derive(self.seed, &[ctx.index as u64]),
            yaw: ctx.yaw,
            crop: TensorMessage::from_image(crop),
        };
        let depth = self
            .client
            .depth(&request)
            .map_err(|e| OracleError::new(e.to_string()))?;
        let values = depth.to_f32().map_err(|e| OracleError::new(e.to_string()))?;
        DepthMap::from_vec(crop.width(), crop.height(), 1, values.into_iter().map(f64::from).collect())
            .map_err(|e| OracleError::new(e.to_string()))
    }
}
