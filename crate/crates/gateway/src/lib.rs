//! Client side of the oracle service protocol: tensor transport, an HTTP
//! client with retries, and [`DenoiserOracle`](panofusion::oracle::DenoiserOracle) /
//! [`DepthOracle`](panofusion::oracle::DepthOracle) implementations backed by it.

pub mod client;
pub mod remote;
pub mod wire;

use std::sync::Arc;

use panofusion::oracle::{NoiseSchedule, OracleRegistry};
use panofusion::Error;

pub use client::{GatewayError, OracleClient, OracleEndpoint};
pub use remote::{RemoteDenoiser, RemoteDepth};

/// Name under which the remote oracles are registered.
pub const REMOTE: &str = "remote";

/// Adds `remote` denoiser and depth entries that talk to `endpoint`. The
/// service is contacted (health probe) only when an entry is instantiated.
pub fn register_remote(registry: &mut OracleRegistry, endpoint: OracleEndpoint) {
    let connect = {
        let endpoint = endpoint.clone();
        move || -> panofusion::Result<Arc<OracleClient>> {
            let (client, health) = OracleClient::connect(endpoint.clone()).map_err(|e| Error::Config(e.to_string()))?;
            log::info!(
                "oracle service {} in {:?} mode, models {:?}, max crop {}",
                endpoint.base_url,
                health.mode,
                health.models,
                health.max_crop
            );
            Ok(Arc::new(client))
        }
    };
    let connect_depth = connect.clone();
    registry.register_denoiser(REMOTE, &format!("oracle service at {}", endpoint.base_url), move |p| {
        Ok(Box::new(RemoteDenoiser {
            client: connect()?,
            schedule: NoiseSchedule::new(p.steps, p.sigma_max),
        }))
    });
    registry.register_depth(REMOTE, &format!("oracle service at {}", endpoint.base_url), move |p| {
        Ok(Box::new(RemoteDepth {
            client: connect_depth()?,
            seed: p.seed,
        }))
    });
}
