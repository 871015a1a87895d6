//! Network services: the healing proxy, the monitoring backend and trace
//! replay.

pub mod backend;
pub mod client;
pub mod compression;
pub mod proxy;
pub mod replay;
pub mod tls;

use bytes::Bytes;
use http_body_util::combinators::BoxBody;
use http_body_util::{BodyExt, Full};

pub use client::BoxError;

pub type ProxyBody = BoxBody<Bytes, BoxError>;

pub fn full(bytes: impl Into<Bytes>) -> ProxyBody {
    Full::new(bytes.into()).map_err(|never| match never {}).boxed()
}
