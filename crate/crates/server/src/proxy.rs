//! The intercepting proxy: fetch, look up known errors, heal, serve.
//!
//! Any failure inside the healing path falls back to the upstream response
//! as received.

use std::convert::Infallible;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use futures_util::StreamExt;
use http::header::{CONTENT_ENCODING, CONTENT_LENGTH, HOST};
use http::{HeaderMap, HeaderValue, Method, Request, Response, StatusCode, Uri};
use http_body_util::{BodyExt, BodyStream, StreamBody};
use hyper::body::{Body, Frame};
use hyper::service::service_fn;
use hyper_util::rt::TokioIo;
use parking_lot::Mutex;
use rustls::pki_types::CertificateDer;
use tokio::net::TcpListener;

use selfheal_core::engine::{HealingContext, Healer};
use selfheal_core::eval::AppliedStrategy;
use selfheal_core::model::{classify_content, normalize_url, ContentKind, JsError, Resource};
use selfheal_core::monitor::BEACON_PREFIX;
use selfheal_core::store::{PageLoad, Store};

use crate::client::{self, BoxError, HttpClient};
use crate::compression::{decode, encode, Coding};
use crate::replay::{denial, ReplaySource};
use crate::tls::{CaMaterial, CertAuthority, TlsError};
use crate::{full, ProxyBody};

pub const DEFAULT_MAX_BODY: usize = 8 * 1024 * 1024;
pub const BACKEND_TIMEOUT: Duration = Duration::from_millis(150);
const BEACON_RELAY_TIMEOUT: Duration = Duration::from_secs(2);

pub(crate) const HOP_BY_HOP: [&str; 9] = [
    "connection",
    "keep-alive",
    "proxy-connection",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
];

const CSP_HEADERS: [&str; 2] = ["content-security-policy", "content-security-policy-report-only"];

#[derive(Clone, Debug)]
pub enum Mode {
    /// Absolute-form requests and CONNECT tunnels.
    Forward,
    /// Origin-form requests relayed to a fixed origin.
    Reverse(url::Url),
    /// Answers only from a recorded trace.
    Replay(Arc<ReplaySource>),
}

/// Where known errors come from and where reports go.
#[derive(Clone, Debug)]
pub enum BackendLink {
    Remote(String),
    Local(Arc<Store>),
    Disabled,
}

pub type UuidSource = Arc<dyn Fn() -> String + Send + Sync>;

pub fn random_uuid() -> UuidSource {
    Arc::new(|| uuid::Uuid::new_v4().to_string())
}

#[derive(Clone)]
pub struct ProxyConfig {
    pub mode: Mode,
    pub backend: BackendLink,
    pub healer: Healer,
    /// When false every response is relayed untouched.
    pub heal: bool,
    pub max_body: usize,
    /// CA used to intercept CONNECT tunnels.
    pub ca: Option<CaMaterial>,
    /// Extra trust anchors for upstream TLS.
    pub upstream_roots: Vec<CertificateDer<'static>>,
    /// JSON lines of strategies applied while serving.
    pub applied_log: Option<PathBuf>,
    pub uuid_source: UuidSource,
    pub backend_timeout: Duration,
}

impl std::fmt::Debug for ProxyConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProxyConfig")
            .field("mode", &self.mode)
            .field("backend", &self.backend)
            .field("heal", &self.heal)
            .field("max_body", &self.max_body)
            .field("intercept", &self.ca.is_some())
            .finish_non_exhaustive()
    }
}

impl ProxyConfig {
    pub fn new(mode: Mode, backend: BackendLink) -> Self {
        ProxyConfig {
            mode,
            backend,
            healer: Healer::default(),
            heal: true,
            max_body: DEFAULT_MAX_BODY,
            ca: None,
            upstream_roots: Vec::new(),
            applied_log: None,
            uuid_source: random_uuid(),
            backend_timeout: BACKEND_TIMEOUT,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProxyError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tls(#[from] TlsError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub struct Proxy {
    config: ProxyConfig,
    healer: Arc<Healer>,
    client: HttpClient,
    ca: Option<CertAuthority>,
    applied: Option<Mutex<File>>,
}

fn header_pairs(headers: &HeaderMap) -> Vec<(String, String)> {
    headers
        .iter()
        .map(|(n, v)| (n.as_str().to_owned(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
        .collect()
}

fn strip_hop_by_hop(headers: &mut HeaderMap) {
    let named: Vec<String> = headers
        .get_all(http::header::CONNECTION)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(',').map(|s| s.trim().to_ascii_lowercase()))
        .filter(|s| !s.is_empty())
        .collect();
    for h in HOP_BY_HOP {
        headers.remove(h);
    }
    for h in named {
        headers.remove(h.as_str());
    }
}

fn plain(status: StatusCode, text: &str) -> Response<ProxyBody> {
    Response::builder()
        .status(status)
        .header(http::header::CONTENT_TYPE, "text/plain; charset=utf-8")
        .body(full(Bytes::from(format!("{text}\n"))))
        .expect("static response")
}

enum Buffered {
    Complete(Bytes),
    Overflow(ProxyBody),
}

/// Reads `body` fully if it fits in `limit`; otherwise returns a body that
/// replays what was read followed by the rest.
async fn buffer(mut body: ProxyBody, limit: usize) -> Result<Buffered, BoxError> {
    let mut chunks: Vec<Bytes> = Vec::new();
    let mut total = 0usize;
    while let Some(frame) = body.frame().await {
        let frame = frame?;
        if let Ok(data) = frame.into_data() {
            total += data.len();
            chunks.push(data);
            if total > limit {
                let head = futures_util::stream::iter(chunks.into_iter().map(|c| Ok::<_, BoxError>(Frame::data(c))));
                let rest = BodyStream::new(body);
                return Ok(Buffered::Overflow(BodyExt::boxed(StreamBody::new(head.chain(rest)))));
            }
        }
    }
    let mut out = Vec::with_capacity(total);
    for c in chunks {
        out.extend_from_slice(&c);
    }
    Ok(Buffered::Complete(Bytes::from(out)))
}

fn is_reserved(path: &str) -> bool {
    path == BEACON_PREFIX || path.starts_with(&format!("{BEACON_PREFIX}/"))
}

impl Proxy {
    pub fn new(config: ProxyConfig) -> Result<Arc<Proxy>, ProxyError> {
        if let Mode::Reverse(origin) = &config.mode {
            if !matches!(origin.scheme(), "http" | "https") || origin.host_str().is_none() {
                return Err(ProxyError::Config(format!("reverse origin must be an http(s) URL: {origin}")));
            }
        }
        if let BackendLink::Remote(base) = &config.backend {
            url::Url::parse(base).map_err(|e| ProxyError::Config(format!("backend URL {base}: {e}")))?;
        }
        let ca = config.ca.as_ref().map(CertAuthority::new).transpose()?;
        let applied = match &config.applied_log {
            Some(path) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(path)?)),
            None => None,
        };
        Ok(Arc::new(Proxy {
            client: client::http_client(&config.upstream_roots)?,
            healer: Arc::new(config.healer.clone()),
            config,
            ca,
            applied,
        }))
    }

    pub fn config(&self) -> &ProxyConfig {
        &self.config
    }

    pub async fn handle<B>(self: &Arc<Self>, req: Request<B>) -> Response<ProxyBody>
    where
        B: Body<Data = Bytes> + Send + 'static,
        B::Error: Into<BoxError>,
    {
        self.handle_in(req, None).await
    }

    async fn handle_in<B>(self: &Arc<Self>, req: Request<B>, tunnel: Option<&str>) -> Response<ProxyBody>
    where
        B: Body<Data = Bytes> + Send + 'static,
        B::Error: Into<BoxError>,
    {
        if req.method() == Method::CONNECT {
            return self.connect(req);
        }
        let (parts, body) = req.into_parts();
        let url = match self.target(&parts.method, &parts.uri, &parts.headers, tunnel) {
            Ok(u) => u,
            Err(resp) => return resp,
        };
        let body = match body.collect().await {
            Ok(b) => b.to_bytes(),
            Err(e) => return plain(StatusCode::BAD_REQUEST, &format!("unreadable request body: {}", e.into())),
        };
        if is_reserved(parts.uri.path()) {
            return self.beacon(&parts.method, parts.uri.path(), body).await;
        }
        let mut headers = parts.headers.clone();
        strip_hop_by_hop(&mut headers);
        headers.remove(HOST);
        let resp = self.upstream(&parts.method, &url, headers, body).await;
        self.process(&parts.method, &url, &parts.headers, resp).await
    }

    fn target(&self, method: &Method, uri: &Uri, headers: &HeaderMap, tunnel: Option<&str>) -> Result<String, Response<ProxyBody>> {
        let pq = uri.path_and_query().map_or("/", |p| p.as_str());
        if let Some(authority) = tunnel {
            return Ok(format!("https://{authority}{pq}"));
        }
        if uri.scheme().is_some() {
            return Ok(uri.to_string());
        }
        match &self.config.mode {
            Mode::Reverse(origin) => Ok(format!("{}{pq}", origin.as_str().trim_end_matches('/'))),
            Mode::Replay(src) => {
                let host = headers.get(HOST).and_then(|h| h.to_str().ok());
                Ok(src.resolve(method, host, pq))
            }
            Mode::Forward if is_reserved(uri.path()) => Ok(pq.to_owned()),
            Mode::Forward => Err(plain(StatusCode::BAD_REQUEST, "forward proxy expects absolute-form requests")),
        }
    }

    async fn upstream(&self, method: &Method, url: &str, headers: HeaderMap, body: Bytes) -> Response<ProxyBody> {
        if let Mode::Replay(src) = &self.config.mode {
            return src.respond(method, url);
        }
        let mut req = Request::builder().method(method.clone()).uri(url);
        if let Some(h) = req.headers_mut() {
            *h = headers;
        }
        let req = match req.body(http_body_util::Full::new(body)) {
            Ok(r) => r,
            Err(e) => return plain(StatusCode::BAD_REQUEST, &format!("bad request target: {e}")),
        };
        match self.client.request(req).await {
            Ok(resp) => {
                let (mut parts, body) = resp.into_parts();
                strip_hop_by_hop(&mut parts.headers);
                Response::from_parts(parts, body.map_err(BoxError::from).boxed())
            }
            Err(e) => {
                tracing::warn!(%url, error = %e, "upstream request failed");
                plain(StatusCode::BAD_GATEWAY, &format!("upstream request failed: {e}"))
            }
        }
    }

    async fn process(&self, method: &Method, url: &str, req_headers: &HeaderMap, resp: Response<ProxyBody>) -> Response<ProxyBody> {
        if !self.config.heal || method != Method::GET || resp.status() != StatusCode::OK {
            return resp;
        }
        let pairs = header_pairs(resp.headers());
        let kind = classify_content(url, &pairs);
        let backend_on = !matches!(self.config.backend, BackendLink::Disabled);
        let wanted = match kind {
            ContentKind::Html => backend_on || self.healer.monitor.is_some(),
            ContentKind::Script => backend_on,
            _ => false,
        };
        if !wanted {
            return resp;
        }
        let declared = resp.headers().get(CONTENT_LENGTH).and_then(|v| v.to_str().ok()?.parse::<usize>().ok());
        if declared.is_some_and(|n| n > self.config.max_body) {
            return resp;
        }
        let (parts, body) = resp.into_parts();
        let raw = match buffer(body, self.config.max_body).await {
            Ok(Buffered::Complete(b)) => b,
            Ok(Buffered::Overflow(body)) => return Response::from_parts(parts, body),
            Err(e) => {
                tracing::warn!(%url, error = %e, "upstream body failed");
                return plain(StatusCode::BAD_GATEWAY, "upstream body failed");
            }
        };
        match self.heal_body(url, kind, req_headers, &parts.headers, pairs, &raw).await {
            Some((body, is_html)) => {
                let mut parts = parts;
                parts.headers.remove(CONTENT_LENGTH);
                if is_html {
                    for h in CSP_HEADERS {
                        parts.headers.remove(h);
                    }
                }
                parts.headers.insert(CONTENT_LENGTH, HeaderValue::from(body.len()));
                Response::from_parts(parts, full(Bytes::from(body)))
            }
            None => Response::from_parts(parts, full(raw)),
        }
    }

    /// The healed, re-encoded body, or `None` to serve the original bytes.
    async fn heal_body(
        &self,
        url: &str,
        kind: ContentKind,
        req_headers: &HeaderMap,
        resp_headers: &HeaderMap,
        pairs: Vec<(String, String)>,
        raw: &Bytes,
    ) -> Option<(Vec<u8>, bool)> {
        let coding = Coding::from_header(resp_headers.get(CONTENT_ENCODING).and_then(|v| v.to_str().ok()))?;
        let decoded = decode(coding, raw, self.config.max_body)
            .map_err(|e| tracing::warn!(%url, error = %e, "cannot decode body"))
            .ok()?;
        let resource = Resource::new(url, pairs, decoded).ok()?;
        let known = self.fetch_known_errors(url).await;
        if known.is_empty() && (kind == ContentKind::Script || self.healer.monitor.is_none()) {
            return None;
        }
        let mut ctx = HealingContext::new(resource, known, (self.config.uuid_source)());
        ctx.request_headers = header_pairs(req_headers);
        for script in self.healer.scripts_needed(&ctx) {
            if let Some(text) = self.fetch_text(&script).await {
                ctx.script_sources.insert(script, text);
            }
        }
        let healer = self.healer.clone();
        let (ctx, outcome) = match tokio::task::spawn_blocking(move || {
            let outcome = healer.heal(&ctx);
            (ctx, outcome)
        })
        .await
        {
            Ok(r) => r,
            Err(e) => {
                tracing::error!(%url, error = %e, "healing failed; serving original");
                return None;
            }
        };
        for (e, reason) in &outcome.skipped {
            tracing::debug!(%url, error = %e.key(), %reason, "error not healed");
        }
        if !outcome.modified(&ctx.response) {
            return None;
        }
        let body = encode(coding, &outcome.resource.body)
            .map_err(|e| tracing::warn!(%url, error = %e, "cannot re-encode body"))
            .ok()?;
        let is_html = kind == ContentKind::Html;
        if is_html && outcome.monitor_injected {
            self.register_load(PageLoad {
                page_uuid: ctx.page_uuid.clone(),
                page_url: ctx.response.url.clone(),
                served_at: chrono::Utc::now(),
                expected: outcome.expectations.clone(),
            })
            .await;
        }
        self.log_applied(&ctx.response.url, is_html, &outcome.expectations);
        Some((body, is_html))
    }

    async fn fetch_text(&self, url: &str) -> Option<String> {
        let resp = self.upstream(&Method::GET, url, HeaderMap::new(), Bytes::new()).await;
        if resp.status() != StatusCode::OK {
            return None;
        }
        let coding = Coding::from_header(resp.headers().get(CONTENT_ENCODING).and_then(|v| v.to_str().ok()))?;
        let raw = match buffer(resp.into_body(), self.config.max_body).await.ok()? {
            Buffered::Complete(b) => b,
            Buffered::Overflow(_) => return None,
        };
        let body = decode(coding, &raw, self.config.max_body).ok()?;
        String::from_utf8(body).ok()
    }

    /// Known errors for `url`, deduplicated by identity. Never fails: an
    /// unreachable or misbehaving backend yields no errors.
    pub async fn fetch_known_errors(&self, url: &str) -> Vec<JsError> {
        let canon = normalize_url(url).unwrap_or_else(|_| url.to_owned());
        let errors = match &self.config.backend {
            BackendLink::Disabled => Vec::new(),
            BackendLink::Local(store) => store.query_errors(&canon),
            BackendLink::Remote(base) => {
                let q: String = url::form_urlencoded::byte_serialize(canon.as_bytes()).collect();
                let endpoint = format!("{}/errors?url={q}", base.trim_end_matches('/'));
                match client::get(&self.client, &endpoint, Some(self.config.backend_timeout)).await {
                    Ok(f) if f.status.is_success() => match serde_json::from_slice::<Vec<JsError>>(&f.body) {
                        Ok(list) => list,
                        Err(e) => {
                            tracing::warn!(error = %e, "malformed known-error reply");
                            Vec::new()
                        }
                    },
                    Ok(f) => {
                        tracing::warn!(status = %f.status, "backend refused known-error query");
                        Vec::new()
                    }
                    Err(e) => {
                        tracing::warn!(error = %e, "backend unreachable");
                        Vec::new()
                    }
                }
            }
        };
        let mut seen = std::collections::BTreeSet::new();
        errors.into_iter().filter(|e| seen.insert(e.key())).collect()
    }

    async fn register_load(&self, load: PageLoad) {
        match &self.config.backend {
            BackendLink::Disabled => {}
            BackendLink::Local(store) => {
                if let Err(e) = store.record_load(load) {
                    tracing::warn!(error = %e, "cannot record page load");
                }
            }
            BackendLink::Remote(base) => {
                let body = Bytes::from(serde_json::to_vec(&load).expect("page load serializes"));
                let endpoint = format!("{}/expectations", base.trim_end_matches('/'));
                let sent = client::fetch(
                    &self.client,
                    Method::POST,
                    &endpoint,
                    Some("application/json"),
                    body,
                    Some(self.config.backend_timeout),
                )
                .await;
                if let Err(e) = sent {
                    tracing::warn!(error = %e, "cannot register page load");
                }
            }
        }
    }

    fn log_applied(&self, url: &str, is_html: bool, expectations: &[selfheal_core::engine::Expectation]) {
        let Some(log) = &self.applied else { return };
        let mut out = String::new();
        for e in expectations {
            let line = AppliedStrategy {
                page_url: is_html.then(|| url.to_owned()),
                strategy: e.strategy,
                target_error: e.target_error.clone(),
                resource_url: e.resource_url.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("applied record serializes"));
            out.push('\n');
        }
        if let Err(e) = log.lock().write_all(out.as_bytes()) {
            tracing::warn!(error = %e, "cannot write applied log");
        }
    }

    async fn beacon(&self, method: &Method, path: &str, body: Bytes) -> Response<ProxyBody> {
        let kind = path.trim_start_matches(BEACON_PREFIX);
        let backend_path = match (method, kind) {
            (&Method::POST, "/error") => "/errors",
            (&Method::POST, "/activation") => "/activations",
            _ => return plain(StatusCode::NOT_FOUND, "unknown monitor endpoint"),
        };
        match &self.config.backend {
            BackendLink::Disabled => {}
            BackendLink::Local(store) => {
                let store = store.clone();
                let result = tokio::task::spawn_blocking(move || {
                    if backend_path == "/errors" {
                        crate::backend::record_error_report(&store, &body).map(drop)
                    } else {
                        crate::backend::record_activation_report(&store, &body).map(drop)
                    }
                })
                .await;
                if !matches!(result, Ok(Ok(()))) {
                    tracing::warn!(%path, "monitor report rejected");
                }
            }
            BackendLink::Remote(base) => {
                let endpoint = format!("{}{backend_path}", base.trim_end_matches('/'));
                let sent = client::fetch(
                    &self.client,
                    Method::POST,
                    &endpoint,
                    Some("application/json"),
                    body,
                    Some(BEACON_RELAY_TIMEOUT),
                )
                .await;
                match sent {
                    Ok(f) if f.status.is_success() => {}
                    Ok(f) => tracing::warn!(status = %f.status, %path, "backend rejected monitor report"),
                    Err(e) => tracing::warn!(error = %e, %path, "cannot relay monitor report"),
                }
            }
        }
        Response::builder().status(StatusCode::NO_CONTENT).body(full(Bytes::new())).expect("static response")
    }

    fn connect<B>(self: &Arc<Self>, req: Request<B>) -> Response<ProxyBody>
    where
        B: Body + Send + 'static,
    {
        let Some(authority) = req.uri().authority().map(|a| a.to_string()) else {
            return plain(StatusCode::BAD_REQUEST, "CONNECT needs host:port");
        };
        let intercept = self.ca.is_some();
        if !intercept && !matches!(self.config.mode, Mode::Forward) {
            return match &self.config.mode {
                Mode::Replay(_) => denial(&Method::CONNECT, &format!("https://{authority}/")),
                _ => plain(StatusCode::METHOD_NOT_ALLOWED, "tunnels are not supported in this mode"),
            };
        }
        let proxy = self.clone();
        tokio::spawn(async move {
            let upgraded = match hyper::upgrade::on(req).await {
                Ok(u) => u,
                Err(e) => {
                    tracing::warn!(error = %e, "CONNECT upgrade failed");
                    return;
                }
            };
            let io = TokioIo::new(upgraded);
            if intercept {
                proxy.serve_intercepted(io, authority).await;
            } else {
                tunnel(io, &authority).await;
            }
        });
        Response::new(full(Bytes::new()))
    }

    async fn serve_intercepted(self: Arc<Self>, io: TokioIo<hyper::upgrade::Upgraded>, authority: String) {
        let host = authority.rsplit_once(':').map_or(authority.as_str(), |(h, _)| h).to_owned();
        let config = match self.ca.as_ref().map(|ca| ca.server_config(&host)) {
            Some(Ok(c)) => c,
            Some(Err(e)) => {
                tracing::warn!(%host, error = %e, "cannot issue certificate");
                return;
            }
            None => return,
        };
        let tls = match tokio_rustls::TlsAcceptor::from(config).accept(io).await {
            Ok(s) => s,
            Err(e) => {
                tracing::debug!(%host, error = %e, "client TLS handshake failed");
                return;
            }
        };
        let authority = Arc::new(authority.strip_suffix(":443").unwrap_or(&authority).to_owned());
        let proxy = self.clone();
        let service = service_fn(move |req| {
            let proxy = proxy.clone();
            let authority = authority.clone();
            async move { Ok::<_, Infallible>(proxy.handle_in(req, Some(authority.as_str())).await) }
        });
        if let Err(e) = hyper::server::conn::http1::Builder::new().serve_connection(TokioIo::new(tls), service).await {
            tracing::debug!(error = %e, "intercepted connection ended");
        }
    }
}

async fn tunnel(io: TokioIo<hyper::upgrade::Upgraded>, authority: &str) {
    match tokio::net::TcpStream::connect(authority).await {
        Ok(mut server) => {
            let mut client = io;
            if let Err(e) = tokio::io::copy_bidirectional(&mut client, &mut server).await {
                tracing::debug!(%authority, error = %e, "tunnel closed");
            }
        }
        Err(e) => tracing::warn!(%authority, error = %e, "tunnel connect failed"),
    }
}

/// Accepts connections on `listener` until the task is dropped.
pub async fn serve(listener: TcpListener, proxy: Arc<Proxy>) -> std::io::Result<()> {
    loop {
        let (stream, peer) = listener.accept().await?;
        let proxy = proxy.clone();
        tokio::spawn(async move {
            let service = service_fn(move |req| {
                let proxy = proxy.clone();
                async move { Ok::<_, Infallible>(proxy.handle(req).await) }
            });
            let conn = hyper::server::conn::http1::Builder::new()
                .serve_connection(TokioIo::new(stream), service)
                .with_upgrades();
            if let Err(e) = conn.await {
                tracing::debug!(%peer, error = %e, "connection ended");
            }
        });
    }
}

/// Binds `addr` and serves in the background, returning the bound address.
pub async fn spawn(addr: SocketAddr, proxy: Arc<Proxy>) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(listener, proxy))))
}
