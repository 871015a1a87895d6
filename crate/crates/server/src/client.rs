//! Outbound HTTP(S) client used for upstream fetches and backend calls.

use std::time::Duration;

use bytes::Bytes;
use http::{HeaderMap, Method, Request, StatusCode};
use http_body_util::{BodyExt, Full};
use hyper_rustls::HttpsConnector;
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use rustls::pki_types::CertificateDer;

use crate::tls::{client_config, TlsError};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;
pub type HttpClient = Client<HttpsConnector<HttpConnector>, Full<Bytes>>;

pub fn http_client(extra_roots: &[CertificateDer<'static>]) -> Result<HttpClient, TlsError> {
    let connector = hyper_rustls::HttpsConnectorBuilder::new()
        .with_tls_config(client_config(extra_roots)?)
        .https_or_http()
        .enable_http1()
        .build();
    Ok(Client::builder(TokioExecutor::new()).build(connector))
}

/// A fully read response.
#[derive(Debug, Clone)]
pub struct Fetched {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

/// Sends one request and reads the whole reply, within `timeout` if given.
pub async fn fetch(
    client: &HttpClient,
    method: Method,
    url: &str,
    content_type: Option<&str>,
    body: Bytes,
    timeout: Option<Duration>,
) -> Result<Fetched, BoxError> {
    let mut req = Request::builder().method(method).uri(url);
    if let Some(ct) = content_type {
        req = req.header(http::header::CONTENT_TYPE, ct);
    }
    let req = req.body(Full::new(body))?;
    let work = async {
        let resp = client.request(req).await?;
        let (parts, body) = resp.into_parts();
        let body = body.collect().await?.to_bytes();
        Ok::<_, BoxError>(Fetched { status: parts.status, headers: parts.headers, body })
    };
    match timeout {
        Some(t) => tokio::time::timeout(t, work).await.map_err(|_| BoxError::from("request timed out"))?,
        None => work.await,
    }
}

pub async fn get(client: &HttpClient, url: &str, timeout: Option<Duration>) -> Result<Fetched, BoxError> {
    fetch(client, Method::GET, url, None, Bytes::new(), timeout).await
}
