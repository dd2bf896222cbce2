//! JSON wire format shared with the oracle service.
//!
//! Endpoints: `POST /v1/denoise`, `POST /v1/depth`, `GET /v1/health`.
//! Tensors travel as base64 of little-endian `f32` with their shape and a
//! CRC-32 of the raw bytes. Errors are returned with a 4xx/5xx status and an
//! [`ErrorBody`].

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use panofusion::image::{Grid, Image};

pub const DENOISE_PATH: &str = "/v1/denoise";
pub const DEPTH_PATH: &str = "/v1/depth";
pub const HEALTH_PATH: &str = "/v1/health";

/// Why a tensor failed to decode.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("unsupported dtype '{0}'")]
    Dtype(String),
    #[error("invalid base64: {0}")]
    Base64(String),
    #[error("payload has {actual} bytes, shape {shape:?} needs {expected}")]
    Length {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("checksum mismatch: header {header:08x}, payload {actual:08x}")]
    Checksum { header: u32, actual: u32 },
    #[error("expected shape {expected:?}, got {actual:?}")]
    Shape { expected: Vec<usize>, actual: Vec<usize> },
}

impl TensorError {
    /// Machine-readable error code used in [`ErrorBody::code`].
    pub fn code(&self) -> &'static str {
        match self {
            TensorError::Checksum { .. } => "checksum",
            _ => "shape",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMessage {
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Base64 of the little-endian `f32` payload.
    pub data: String,
    pub crc32: u32,
}

impl TensorMessage {
    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Self {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape,
            dtype: "f32".into(),
            crc32: crc32fast::hash(&bytes),
            data: STANDARD.encode(&bytes),
        }
    }

    /// Raw payload bytes after validating dtype, length and checksum.
    pub fn bytes(&self) -> Result<Vec<u8>, TensorError> {
        if self.dtype != "f32" {
            return Err(TensorError::Dtype(self.dtype.clone()));
        }
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| TensorError::Base64(e.to_string()))?;
        let expected = 4 * self.shape.iter().product::<usize>();
        if bytes.len() != expected {
            return Err(TensorError::Length {
                shape: self.shape.clone(),
                expected,
                actual: bytes.len(),
            });
        }
        let actual = crc32fast::hash(&bytes);
        if actual != self.crc32 {
            return Err(TensorError::Checksum {
                header: self.crc32,
                actual,
            });
        }
        Ok(bytes)
    }

    pub fn to_f32(&self) -> Result<Vec<f32>, TensorError> {
        Ok(self
            .bytes()?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    /// Shape `[height, width, channels]`.
    pub fn from_image(img: &Grid<f32>) -> Self {
        Self::from_f32(vec![img.height(), img.width(), img.channels()], img.data())
    }

    pub fn to_image(&self) -> Result<Image, TensorError> {
        let [h, w, c] = self.shape[..] else {
            return Err(TensorError::Shape {
                expected: vec![0, 0, 0],
                actual: self.shape.clone(),
            });
        };
        let data = self.to_f32()?;
        Ok(Image::from_vec(w, h, c, data).expect("length validated"))
    }

    pub fn expect_shape(&self, expected: &[usize]) -> Result<(), TensorError> {
        if self.shape != expected {
            return Err(TensorError::Shape {
                expected: expected.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// `[height, width]` of an image-shaped tensor.
    pub fn spatial(&self) -> Option<(usize, usize)> {
        match self.shape[..] {
            [h, w, _] | [h, w] => Some((h, w)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRequest {
    pub request_id: u64,
    pub seed: u64,
    pub t: usize,
    /// Crop yaw in radians.
    pub yaw: f64,
    pub prompt: String,
    pub crop_state: TensorMessage,
    pub mask: TensorMessage,
    pub known: TensorMessage,
}

impl DenoiseRequest {
    /// Checks that all tensors decode and share spatial dimensions.
    pub fn validate(&self) -> Result<(), TensorError> {
        self.crop_state.bytes()?;
        self.mask.bytes()?;
        self.known.bytes()?;
        let [h, w, _] = self.crop_state.shape[..] else {
            return Err(TensorError::Shape {
                expected: vec![0, 0, 0],
                actual: self.crop_state.shape.clone(),
            });
        };
        self.mask.expect_shape(&[h, w, 1])?;
        self.known.expect_shape(&self.crop_state.shape)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResponse {
    pub request_id: u64,
    pub output: TensorMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRequest {
    pub request_id: u64,
    pub seed: u64,
    pub yaw: f64,
    pub crop: TensorMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthResponse {
    pub request_id: u64,
    /// Shape `[height, width, 1]`.
    pub depth: TensorMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub mode: Mode,
    pub models: Vec<String>,
    /// Largest accepted crop side in pixels.
    pub max_crop: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// `shape`, `checksum`, `oversize`, `bad_request` or `internal`.
    pub code: String,
    pub message: String,
}
