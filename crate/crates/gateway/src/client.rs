use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::wire::{
    DenoiseRequest, DenoiseResponse, DepthRequest, DepthResponse, ErrorBody, Health, Mode, TensorError,
    TensorMessage, DENOISE_PATH, DEPTH_PATH, HEALTH_PATH,
};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEndpoint {
    pub base_url: String,
    pub timeout: Duration,
    /// Extra attempts after a timeout or transport failure.
    pub retries: u32,
    /// Mode the caller expects; checked against the health report.
    pub mode: Option<Mode>,
}

impl OracleEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(60),
            retries: 2,
            mode: None,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("oracle service at {url} is unreachable: {message}")]
    Unreachable { url: String, message: String },
    #[error("request to {url} timed out after {attempts} attempt(s)")]
    Timeout { url: String, attempts: u32 },
    #[error("{url} rejected the request ({status}, {code}): {message}")]
    Protocol {
        url: String,
        status: u16,
        code: String,
        message: String,
    },
    #[error("{url} failed ({status}): {message}")]
    Server { url: String, status: u16, message: String },
    #[error("bad response from {url}: {source}")]
    Tensor {
        url: String,
        #[source]
        source: TensorError,
    },
    #[error("malformed response from {url}: {message}")]
    Decode { url: String, message: String },
    #[error("{url} answered request {got} while {expected} was pending")]
    RequestId { url: String, expected: u64, got: u64 },
    #[error("{url} runs in {actual:?} mode, expected {expected:?}")]
    Mode { url: String, expected: Mode, actual: Mode },
}

impl GatewayError {
    fn is_checksum(&self) -> bool {
        match self {
            GatewayError::Tensor {
                source: TensorError::Checksum { .. },
                ..
            } => true,
            GatewayError::Protocol { code, .. } => code == "checksum",
            _ => false,
        }
    }

    fn is_transient(&self) -> bool {
        matches!(
            self,
            GatewayError::Timeout { .. } | GatewayError::Unreachable { .. } | GatewayError::Server { .. }
        )
    }
}

/// Blocking client, safe to share across threads.
#[derive(Debug)]
pub struct OracleClient {
    endpoint: OracleEndpoint,
    http: Client,
    next_id: AtomicU64,
}

impl OracleClient {
    pub fn new(endpoint: OracleEndpoint) -> Result<Self, GatewayError> {
        let http = Client::builder()
            .timeout(endpoint.timeout)
            .build()
            .map_err(|e| GatewayError::Unreachable {
                url: endpoint.base_url.clone(),
                message: e.to_string(),
            })?;
        Ok(Self {
            endpoint,
            http,
            next_id: AtomicU64::new(1),
        })
    }

    /// Creates a client and checks that the service answers its health probe.
    pub fn connect(endpoint: OracleEndpoint) -> Result<(Self, Health), GatewayError> {
        let client = Self::new(endpoint)?;
        let health = client.health()?;
        if let Some(expected) = client.endpoint.mode {
            if expected != health.mode {
                return Err(GatewayError::Mode {
                    url: client.endpoint.base_url.clone(),
                    expected,
                    actual: health.mode,
                });
            }
        }
        Ok((client, health))
    }

    pub fn endpoint(&self) -> &OracleEndpoint {
        &self.endpoint
    }

    pub fn next_request_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    pub fn health(&self) -> Result<Health, GatewayError> {
        let url = self.endpoint.url(HEALTH_PATH);
        let response = self.http.get(&url).send().map_err(|e| transport_error(&url, e, 1))?;
        decode(&url, response)
    }

    /// One denoising step; returns the validated output tensor.
    pub fn denoise(&self, request: &DenoiseRequest) -> Result<TensorMessage, GatewayError> {
        let url = self.endpoint.url(DENOISE_PATH);
        self.call(&url, request, |r: DenoiseResponse| {
            check_id(&url, request.request_id, r.request_id)?;
            r.output.bytes().map_err(|source| GatewayError::Tensor {
                url: url.clone(),
                source,
            })?;
            r.output
                .expect_shape(&request.crop_state.shape)
                .map_err(|source| GatewayError::Tensor {
                    url: url.clone(),
                    source,
                })?;
            Ok(r.output)
        })
    }

    pub fn depth(&self, request: &DepthRequest) -> Result<TensorMessage, GatewayError> {
        let url = self.endpoint.url(DEPTH_PATH);
        self.call(&url, request, |r: DepthResponse| {
            check_id(&url, request.request_id, r.request_id)?;
            r.depth.bytes().map_err(|source| GatewayError::Tensor {
                url: url.clone(),
                source,
            })?;
            let (h, w) = request.crop.spatial().unwrap_or((0, 0));
            r.depth.expect_shape(&[h, w, 1]).map_err(|source| GatewayError::Tensor {
                url: url.clone(),
                source,
            })?;
            Ok(r.depth)
        })
    }

    /// POSTs `body`, retrying transient failures up to `retries` times and
    /// checksum failures once. Shape and other protocol errors are final.
    fn call<B, R, T>(
        &self,
        url: &str,
        body: &B,
        accept: impl Fn(R) -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError>
    where
        B: Serialize,
        R: DeserializeOwned,
    {
        let mut attempts = 0u32;
        let mut checksum_retried = false;
        loop {
            attempts += 1;
            let result = self
                .http
                .post(url)
                .json(body)
                .send()
                .map_err(|e| transport_error(url, e, attempts))
                .and_then(|resp| decode::<R>(url, resp))
                .and_then(&accept);
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.is_checksum() && !checksum_retried => {
                    log::warn!("{url}: checksum failure, retrying once");
                    checksum_retried = true;
                }
                Err(e) if e.is_transient() && attempts <= self.endpoint.retries => {
                    log::warn!("{url}: {e}; retrying ({attempts}/{})", self.endpoint.retries);
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn check_id(url: &str, expected: u64, got: u64) -> Result<(), GatewayError> {
    if expected != got {
        return Err(GatewayError::RequestId {
            url: url.to_string(),
            expected,
            got,
        });
    }
    Ok(())
}

fn transport_error(url: &str, e: reqwest::Error, attempts: u32) -> GatewayError {
    if e.is_timeout() {
        GatewayError::Timeout {
            url: url.to_string(),
            attempts,
        }
    } else {
        GatewayError::Unreachable {
            url: url.to_string(),
            message: e.to_string(),
        }
    }
}

fn decode<R: DeserializeOwned>(url: &str, response: Response) -> Result<R, GatewayError> {
    let status = response.status();
    let text = response.text().map_err(|e| transport_error(url, e, 1))?;
    if status.is_success() {
        return serde_json::from_str(&text).map_err(|e| GatewayError::Decode {
            url: url.to_string(),
            message: e.to_string(),
        });
    }
    let body: ErrorBody = serde_json::from_str(&text).unwrap_or(ErrorBody {
        code: if status.is_client_error() { "bad_request" } else { "internal" }.into(),
        message: text,
    });
    if status.is_client_error() {
        Err(GatewayError::Protocol {
            url: url.to_string(),
            status: status.as_u16(),
            code: body.code,
            message: body.message,
        })
    } else {
        Err(GatewayError::Server {
            url: url.to_string(),
            status: status.as_u16(),
            message: body.message,
        })
    }
}
