//! In-test synthetic oracle service built on the shared wire types and the
//! core crate's closed-form synthetic functions.

#![allow(dead_code)]

use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use panofusion::oracle::synthetic::{wire_contract, wire_luma_affine};
use panofusion_gateway::wire::{
    DenoiseRequest, DenoiseResponse, DepthRequest, DepthResponse, ErrorBody, Health, Mode, TensorMessage,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenoiseFn {
    Identity,
    Contract(f32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthFn {
    Constant(f32),
    LumaAffine,
}

#[derive(Debug)]
pub struct Mock {
    pub denoise: DenoiseFn,
    pub depth: DepthFn,
    pub max_crop: usize,
    /// Responses still to be sent with a corrupted checksum.
    pub corrupt: AtomicUsize,
    /// Requests still to be answered after `delay`.
    pub slow: AtomicUsize,
    pub delay: Duration,
    pub hits: AtomicUsize,
}

impl Mock {
    pub fn new(denoise: DenoiseFn, depth: DepthFn) -> Self {
        Self {
            denoise,
            depth,
            max_crop: 64,
            corrupt: AtomicUsize::new(0),
            slow: AtomicUsize::new(0),
            delay: Duration::from_millis(0),
            hits: AtomicUsize::new(0),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn take(counter: &AtomicUsize) -> bool {
    counter
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
}

fn reject(status: StatusCode, code: &str, message: String) -> Response {
    (
        status,
        Json(ErrorBody {
            code: code.into(),
            message,
        }),
    )
        .into_response()
}

async fn health(State(m): State<Arc<Mock>>) -> Json<Health> {
    Json(Health {
        mode: Mode::Synthetic,
        models: vec!["synthetic-denoise".into(), "synthetic-depth".into()],
        max_crop: m.max_crop,
    })
}

async fn pace(m: &Mock) {
    m.hits.fetch_add(1, Ordering::SeqCst);
    if take(&m.slow) {
        tokio::time::sleep(m.delay).await;
    }
}

fn finish(m: &Mock, mut msg: TensorMessage) -> TensorMessage {
    if take(&m.corrupt) {
        msg.crc32 ^= 0xFFFF;
    }
    msg
}

async fn denoise(State(m): State<Arc<Mock>>, Json(req): Json<DenoiseRequest>) -> Response {
    pace(&m).await;
    if let Err(e) = req.validate() {
        return reject(StatusCode::BAD_REQUEST, e.code(), e.to_string());
    }
    let (h, w) = req.crop_state.spatial().unwrap();
    if h.max(w) > m.max_crop {
        return reject(
            StatusCode::PAYLOAD_TOO_LARGE,
            "oversize",
            format!("{w}x{h} exceeds {}", m.max_crop),
        );
    }
    let x = req.crop_state.to_f32().unwrap();
    let out = match m.denoise {
        DenoiseFn::Identity => x,
        DenoiseFn::Contract(rate) => wire_contract(&x, &req.known.to_f32().unwrap(), rate),
    };
    let output = finish(&m, TensorMessage::from_f32(req.crop_state.shape.clone(), &out));
    Json(DenoiseResponse {
        request_id: req.request_id,
        output,
    })
    .into_response()
}

async fn depth(State(m): State<Arc<Mock>>, Json(req): Json<DepthRequest>) -> Response {
    pace(&m).await;
    if let Err(e) = req.crop.bytes() {
        return reject(StatusCode::BAD_REQUEST, e.code(), e.to_string());
    }
    let [h, w, c] = req.crop.shape[..] else {
        return reject(StatusCode::BAD_REQUEST, "shape", "crop must be [h, w, c]".into());
    };
    if h.max(w) > m.max_crop {
        return reject(StatusCode::PAYLOAD_TOO_LARGE, "oversize", format!("{w}x{h}"));
    }
    let x = req.crop.to_f32().unwrap();
    let out = match m.depth {
        DepthFn::Constant(v) => vec![v; h * w],
        DepthFn::LumaAffine => wire_luma_affine(&x, c, req.yaw),
    };
    let depth = finish(&m, TensorMessage::from_f32(vec![h, w, 1], &out));
    Json(DepthResponse {
        request_id: req.request_id,
        depth,
    })
    .into_response()
}

/// Starts the mock on an ephemeral port and returns its base URL.
pub fn spawn(mock: Mock) -> (String, Arc<Mock>) {
    let mock = Arc::new(mock);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let app = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/denoise", post(denoise))
        .route("/v1/depth", post(depth))
        .with_state(mock.clone());
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (url, mock)
}

/// A local URL nothing listens on.
pub fn dead_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}")
}
