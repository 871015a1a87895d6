//! Serving responses from a recorded trace. Nothing is fetched from the
//! network; requests that were not recorded get a marked 404.

use bytes::Bytes;
use http::{HeaderName, HeaderValue, Method, Response, StatusCode};

use selfheal_core::archive::{ArchivedResponse, LibraryCache, TraceArchive};
use selfheal_core::model::normalize_http_url;
use selfheal_core::store::Store;

use crate::{full, ProxyBody};

/// Header set on every denial.
pub const DENIAL_HEADER: &str = "x-selfheal-replay";
pub const DENIAL_VALUE: &str = "denied";

#[derive(Debug)]
pub struct ReplaySource {
    pub archive: TraceArchive,
    pub libraries: LibraryCache,
}

pub fn is_denial<B>(resp: &Response<B>) -> bool {
    resp.status() == StatusCode::NOT_FOUND && resp.headers().get(DENIAL_HEADER).is_some_and(|v| v == DENIAL_VALUE)
}

fn hop_by_hop(name: &str) -> bool {
    crate::proxy::HOP_BY_HOP.iter().any(|h| name.eq_ignore_ascii_case(h))
}

impl ReplaySource {
    pub fn new(archive: TraceArchive, libraries: LibraryCache) -> Self {
        ReplaySource { archive, libraries }
    }

    fn find(&self, method: &Method, url: &str) -> Option<&ArchivedResponse> {
        self.archive.lookup(method.as_str(), url).or_else(|| self.libraries.lookup(method.as_str(), url))
    }

    pub fn knows(&self, method: &Method, url: &str) -> bool {
        self.find(method, url).is_some()
    }

    /// Absolute URL for an origin-form request. A Host naming a recorded
    /// origin selects it; anything else maps onto the page's origin.
    pub fn resolve(&self, method: &Method, host: Option<&str>, path_and_query: &str) -> String {
        if let Some(host) = host {
            for scheme in ["http", "https"] {
                let candidate = format!("{scheme}://{host}{path_and_query}");
                if self.knows(method, &candidate) {
                    return candidate;
                }
            }
        }
        let origin = url::Url::parse(self.archive.document_url())
            .map(|u| u.origin().ascii_serialization())
            .unwrap_or_default();
        format!("{origin}{path_and_query}")
    }

    pub fn respond(&self, method: &Method, url: &str) -> Response<ProxyBody> {
        match self.find(method, url) {
            Some(r) => {
                let mut resp = Response::builder().status(StatusCode::from_u16(r.status).unwrap_or(StatusCode::OK));
                for (name, value) in &r.headers {
                    if hop_by_hop(name) {
                        continue;
                    }
                    if let (Ok(n), Ok(v)) = (HeaderName::try_from(name.as_str()), HeaderValue::try_from(value.as_str())) {
                        resp = resp.header(n, v);
                    }
                }
                resp.body(full(Bytes::from(r.body.clone()))).unwrap_or_else(|_| denial(method, url))
            }
            None => denial(method, url),
        }
    }

    /// A store holding the recorded errors, as if they had been reported by
    /// earlier visits.
    pub fn seeded_store(&self) -> Store {
        let store = Store::memory();
        for e in self.archive.errors() {
            if let Err(err) = store.record_error(e.clone(), None) {
                tracing::warn!(error = %err, "recorded error not usable for healing");
            }
        }
        store
    }
}

pub fn denial(method: &Method, url: &str) -> Response<ProxyBody> {
    let url = normalize_http_url(url).unwrap_or_else(|_| url.to_owned());
    Response::builder()
        .status(StatusCode::NOT_FOUND)
        .header(DENIAL_HEADER, DENIAL_VALUE)
        .header(http::header::CONTENT_TYPE, "text/plain; charset=utf-8")
        .body(full(Bytes::from(format!("not recorded: {method} {url}\n"))))
        .expect("static response")
}
