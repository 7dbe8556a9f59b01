//! HTTP plumbing: axum routers for the gateway, registrar and mock public
//! chain, and the blocking clients the other roles use to reach them.

use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use ballotchain_core::anchoring::{AdapterError, PublicChainAdapter};
use ballotchain_core::canonical;
use ballotchain_core::gateway::{ApiError, ApiResponse, CheckinRequest, CheckinResponse};
use ballotchain_core::registrar::{Registrar, RegistrarError};
use ballotchain_core::{Digest, ElectionBackend, Gateway, MockChain};
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

pub fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

/// Status and body of a request; transport failures are errors.
pub fn call(
    agent: &ureq::Agent,
    method: &str,
    url: &str,
    body: Option<&[u8]>,
) -> Result<(u16, String)> {
    let mut resp = match (method, body) {
        ("GET", _) => agent.get(url).call(),
        (_, Some(b)) => agent
            .post(url)
            .header("content-type", "application/json")
            .send(b),
        (_, None) => agent.post(url).send_empty(),
    }
    .with_context(|| format!("{method} {url}"))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .with_context(|| format!("reading {url}"))?;
    Ok((status, text))
}

fn json_response(status: u16, body: String) -> Response {
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn api(resp: ApiResponse) -> Response {
    json_response(resp.status, resp.body)
}

/// Routes every `/api/...` request to [`Gateway::dispatch`] on a blocking
/// thread, since backends may do network or disk I/O.
pub fn gateway_router<B: ElectionBackend + ?Sized + 'static>(gateway: Gateway<B>) -> Router {
    Router::new()
        .route(
            "/",
            get(|| async { "ballotchain gateway; API under /api\n" }),
        )
        .fallback(move |method: Method, uri: Uri, body: Bytes| {
            let gateway = gateway.clone();
            async move {
                let path = uri.path().to_owned();
                let query = uri.query().unwrap_or("").to_owned();
                let result = tokio::task::spawn_blocking(move || {
                    gateway.dispatch(method.as_str(), &path, &query, &body)
                })
                .await;
                match result {
                    Ok(resp) => api(resp),
                    Err(e) => api(ApiResponse::error(500, "Internal", e.to_string())),
                }
            }
        })
}

pub struct RegistrarService {
    pub registrar: Registrar,
}

pub fn registrar_router(service: Arc<RegistrarService>) -> Router {
    Router::new()
        .route("/issue", post(issue))
        .route("/log", get(issuance_log))
        .route("/health", get(|| async { "ok\n" }))
        .with_state(service)
}

async fn issue(State(service): State<Arc<RegistrarService>>, body: Bytes) -> Response {
    let req: CheckinRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return api(ApiResponse::error(400, "MalformedRequest", e.to_string())),
    };
    let result = tokio::task::spawn_blocking(move || {
        service.registrar.issue_token(
            &req.voter_id,
            &req.credential,
            &req.blinded_value,
            unix_now(),
        )
    })
    .await;
    match result {
        Ok(Ok(sig)) => api(ApiResponse::ok(&CheckinResponse {
            blind_signature: sig,
        })),
        Ok(Err(e)) => {
            let status = match e {
                RegistrarError::UnknownVoter => 404,
                RegistrarError::BadCredential => 403,
                RegistrarError::AlreadyIssued => 409,
                RegistrarError::BadBlindedValue => 400,
                _ => 500,
            };
            let name = format!("{e:?}");
            let name = name.split(['(', ' ', '{']).next().unwrap_or_default();
            api(ApiResponse::error(status, name, e.to_string()))
        }
        Err(e) => api(ApiResponse::error(500, "Internal", e.to_string())),
    }
}

async fn issuance_log(State(service): State<Arc<RegistrarService>>) -> Response {
    let text = service.registrar.issuance_log_text();
    ([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response()
}

/// Gateway-side client for the registrar service.
pub struct RegistrarClient {
    url: String,
    agent: ureq::Agent,
}

impl RegistrarClient {
    pub fn new(url: &str) -> Self {
        RegistrarClient {
            url: url.trim_end_matches('/').to_owned(),
            agent: agent(Duration::from_secs(30)),
        }
    }

    /// `Err(None)` means the registrar could not be reached.
    pub fn issue(
        &self,
        voter_id: &str,
        credential: &str,
        blinded: &BigUint,
    ) -> Result<BigUint, Option<RegistrarError>> {
        let req = CheckinRequest {
            voter_id: voter_id.to_owned(),
            credential: credential.to_owned(),
            blinded_value: blinded.clone(),
        };
        let body = canonical::to_canonical_bytes(&req);
        let (status, text) = call(
            &self.agent,
            "POST",
            &format!("{}/issue", self.url),
            Some(&body),
        )
        .map_err(|_| None)?;
        if status == 200 {
            let resp: CheckinResponse = serde_json::from_str(&text).map_err(|_| None)?;
            return Ok(resp.blind_signature);
        }
        let err: ApiError = serde_json::from_str(&text).map_err(|_| None)?;
        Err(Some(match err.error.as_str() {
            "UnknownVoter" => RegistrarError::UnknownVoter,
            "BadCredential" => RegistrarError::BadCredential,
            "AlreadyIssued" => RegistrarError::AlreadyIssued,
            "BadBlindedValue" => RegistrarError::BadBlindedValue,
            _ => RegistrarError::Journal(err.detail),
        }))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxReceipt {
    pub txid: Digest,
    pub height: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxRecord {
    /// Hex of the payload bytes.
    pub payload: String,
    pub height: u64,
}

pub fn mockchain_router(chain: Arc<MockChain>) -> Router {
    Router::new()
        .route("/tx", post(submit_tx))
        .route("/tx/{txid}", get(fetch_tx))
        .with_state(chain)
}

async fn submit_tx(State(chain): State<Arc<MockChain>>, body: Bytes) -> Response {
    match tokio::task::spawn_blocking(move || chain.submit(&body)).await {
        Ok(Ok((txid, height))) => api(ApiResponse::ok(&TxReceipt { txid, height })),
        Ok(Err(e)) => api(ApiResponse::error(503, "Unavailable", e.0)),
        Err(e) => api(ApiResponse::error(500, "Internal", e.to_string())),
    }
}

async fn fetch_tx(State(chain): State<Arc<MockChain>>, Path(txid): Path<String>) -> Response {
    let Ok(txid) = Digest::from_hex(&txid) else {
        return api(ApiResponse::error(
            400,
            "MalformedRequest",
            "txid must be 64 hex digits",
        ));
    };
    match chain.fetch(&txid) {
        Ok(Some((payload, height))) => api(ApiResponse::ok(&TxRecord {
            payload: hex::encode(payload),
            height,
        })),
        Ok(None) => api(ApiResponse::error(404, "UnknownTxid", txid.to_hex())),
        Err(e) => api(ApiResponse::error(503, "Unavailable", e.0)),
    }
}

/// [`PublicChainAdapter`] over the mock chain's HTTP API.
pub struct HttpChain {
    url: String,
    agent: ureq::Agent,
}

impl HttpChain {
    pub fn new(url: &str) -> Self {
        HttpChain {
            url: url.trim_end_matches('/').to_owned(),
            agent: agent(Duration::from_secs(10)),
        }
    }
}

impl PublicChainAdapter for HttpChain {
    fn submit(&self, payload: &[u8]) -> Result<(Digest, u64), AdapterError> {
        let (status, text) = call(
            &self.agent,
            "POST",
            &format!("{}/tx", self.url),
            Some(payload),
        )
        .map_err(|e| AdapterError(format!("{e:#}")))?;
        if status != 200 {
            return Err(AdapterError(format!("status {status}: {text}")));
        }
        let r: TxReceipt = serde_json::from_str(&text).map_err(|e| AdapterError(e.to_string()))?;
        Ok((r.txid, r.height))
    }

    fn fetch(&self, txid: &Digest) -> Result<Option<(Vec<u8>, u64)>, AdapterError> {
        let (status, text) = call(
            &self.agent,
            "GET",
            &format!("{}/tx/{}", self.url, txid.to_hex()),
            None,
        )
        .map_err(|e| AdapterError(format!("{e:#}")))?;
        match status {
            404 => Ok(None),
            200 => {
                let r: TxRecord =
                    serde_json::from_str(&text).map_err(|e| AdapterError(e.to_string()))?;
                let payload = hex::decode(&r.payload).map_err(|e| AdapterError(e.to_string()))?;
                Ok(Some((payload, r.height)))
            }
            _ => Err(AdapterError(format!("status {status}: {text}"))),
        }
    }
}

/// A public chain given either as a URL or as a mock chain file.
pub fn open_public_chain(location: &str) -> Result<Arc<dyn PublicChainAdapter>> {
    if location.starts_with("http://") || location.starts_with("https://") {
        Ok(Arc::new(HttpChain::new(location)))
    } else {
        let path = std::path::Path::new(location);
        anyhow::ensure!(path.exists(), "{location} does not exist");
        Ok(Arc::new(
            MockChain::open(path).with_context(|| format!("opening {location}"))?,
        ))
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Binds `listen` and serves `router` until ctrl-c.
pub fn serve(listen: &str, router: Router, what: &str) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        tracing::info!("{what} listening on {}", listener.local_addr()?);
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
