//! On-disk web trace archives and their import from HTTP archive (HAR) files.
//!
//! Layout, format `v1`:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/bodies/<sha256 of body>
//! ```
//!
//! The manifest holds the page URL, collection time, observed errors,
//! unmatched failure-point references and one entry per resource with its
//! request method, URL, status, headers and body file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::intel::build_error;
use crate::model::{
    classify_content, header_value, normalize_http_url, normalize_url, resolve_url, ContentKind, ErrorKey, JsError,
    Resource, TracedResource, WebTrace,
};

pub const FORMAT_V1: &str = "v1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArchiveError {
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error("archive I/O failed: {0}")]
    Io(String),
    #[error("cannot import HAR: {0}")]
    Har(String),
}

fn corrupt(msg: impl Into<String>) -> ArchiveError {
    ArchiveError::Corrupt(msg.into())
}

fn io(path: &Path, e: std::io::Error) -> ArchiveError {
    ArchiveError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestResource {
    pub method: String,
    pub url: String,
    pub status: u16,
    pub headers: Vec<(String, String)>,
    /// Path of the body file relative to the archive directory.
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub page_url: String,
    pub collected_at: DateTime<Utc>,
    pub errors: Vec<JsError>,
    pub resources: Vec<ManifestResource>,
    #[serde(default)]
    pub unmatched_references: Vec<String>,
}

/// A stored response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchivedResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

/// A loaded and validated archive. Immutable.
#[derive(Debug, Clone)]
pub struct TraceArchive {
    pub dir: PathBuf,
    pub manifest: Manifest,
    responses: BTreeMap<(String, String), ArchivedResponse>,
    document_url: String,
}

pub fn body_name(body: &[u8]) -> String {
    format!("bodies/{}", hex::encode(Sha256::digest(body)))
}

fn request_key(method: &str, url: &str) -> Option<(String, String)> {
    Some((method.to_ascii_uppercase(), normalize_url(url).ok()?))
}

fn is_redirect(status: u16) -> bool {
    matches!(status, 301 | 302 | 303 | 307 | 308)
}

/// Loads an archive and checks its invariants, reporting the first that fails.
pub fn load_archive(dir: impl AsRef<Path>) -> Result<TraceArchive, ArchiveError> {
    let dir = dir.as_ref().to_path_buf();
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| corrupt(format!("manifest unreadable: {e}")))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| corrupt(format!("manifest malformed: {e}")))?;
    if manifest.format != FORMAT_V1 {
        return Err(corrupt(format!("unsupported format `{}`", manifest.format)));
    }
    let page = normalize_http_url(&manifest.page_url).map_err(|e| corrupt(format!("page_url: {e}")))?;

    let mut responses = BTreeMap::new();
    for entry in &manifest.resources {
        let key = request_key(&entry.method, &entry.url)
            .filter(|(_, u)| u.starts_with("http://") || u.starts_with("https://"))
            .ok_or_else(|| corrupt(format!("resource URL `{}` is not absolute http(s)", entry.url)))?;
        let rel = Path::new(&entry.body);
        if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return Err(corrupt(format!("body reference `{}` escapes the archive", entry.body)));
        }
        let body = fs::read(dir.join(rel)).map_err(|_| corrupt(format!("missing body file `{}`", entry.body)))?;
        if body_name(&body) != entry.body {
            return Err(corrupt(format!("body file `{}` does not match its hash", entry.body)));
        }
        if responses.contains_key(&key) {
            return Err(corrupt(format!("duplicate resource {} {}", key.0, key.1)));
        }
        responses.insert(key, ArchivedResponse { status: entry.status, headers: entry.headers.clone(), body });
    }

    // Follow recorded redirects from the page URL to the document.
    let mut current = page.clone();
    for _ in 0..10 {
        let Some(resp) = responses.get(&("GET".to_owned(), current.clone())) else { break };
        if !is_redirect(resp.status) {
            break;
        }
        let Some(location) = header_value(&resp.headers, "location") else { break };
        current = resolve_url(&current, location).map_err(|e| corrupt(format!("redirect target: {e}")))?;
    }
    let documents = responses
        .iter()
        .filter(|((method, url), r)| {
            method == "GET" && *url == current && !is_redirect(r.status) && classify_content(url, &r.headers) == ContentKind::Html
        })
        .count();
    if documents != 1 {
        return Err(corrupt(format!("expected exactly one top HTML document at {current}, found {documents}")));
    }

    for e in &manifest.errors {
        if let Some(url) = &e.failure_point.resource_url {
            let canon = normalize_url(url).map_err(|err| corrupt(format!("error location: {err}")))?;
            let recorded = responses.keys().any(|(_, u)| *u == canon);
            let unmatched = manifest.unmatched_references.iter().any(|u| normalize_url(u).ok().as_deref() == Some(&canon));
            if !recorded && !unmatched {
                return Err(corrupt(format!("error location {canon} is neither recorded nor listed as unmatched")));
            }
        }
    }

    Ok(TraceArchive { dir, manifest, responses, document_url: current })
}

impl TraceArchive {
    pub fn page_url(&self) -> &str {
        &self.manifest.page_url
    }

    /// URL of the top document after redirects.
    pub fn document_url(&self) -> &str {
        &self.document_url
    }

    pub fn errors(&self) -> &[JsError] {
        &self.manifest.errors
    }

    /// Recorded response for a request; request headers are ignored.
    pub fn lookup(&self, method: &str, url: &str) -> Option<&ArchivedResponse> {
        self.responses.get(&request_key(method, url)?)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn requests(&self) -> impl Iterator<Item = (&str, &str)> {
        self.responses.keys().map(|(m, u)| (m.as_str(), u.as_str()))
    }

    pub fn to_web_trace(&self) -> WebTrace {
        let resources = self
            .responses
            .iter()
            .map(|((method, url), r)| TracedResource {
                method: method.clone(),
                status: r.status,
                resource: Resource {
                    url: url.clone(),
                    headers: r.headers.clone(),
                    body: r.body.clone(),
                    content_kind: classify_content(url, &r.headers),
                },
            })
            .collect();
        WebTrace {
            page_url: self.document_url.clone(),
            resources,
            errors: self.manifest.errors.clone(),
            collected_at: self.manifest.collected_at,
            unmatched_references: self.manifest.unmatched_references.clone(),
        }
    }
}

/// Writes `trace` as a v1 archive into `dir` (created if needed).
pub fn write_archive(dir: impl AsRef<Path>, trace: &WebTrace) -> Result<(), ArchiveError> {
    let dir = dir.as_ref();
    let bodies = dir.join("bodies");
    fs::create_dir_all(&bodies).map_err(|e| io(&bodies, e))?;
    let mut resources = Vec::new();
    for r in &trace.resources {
        let name = body_name(&r.resource.body);
        let path = dir.join(&name);
        if !path.exists() {
            fs::write(&path, &r.resource.body).map_err(|e| io(&path, e))?;
        }
        resources.push(ManifestResource {
            method: r.method.clone(),
            url: r.resource.url.clone(),
            status: r.status,
            headers: r.resource.headers.clone(),
            body: name,
        });
    }
    let manifest = Manifest {
        format: FORMAT_V1.to_owned(),
        page_url: trace.page_url.clone(),
        collected_at: trace.collected_at,
        errors: trace.errors.clone(),
        resources,
        unmatched_references: trace.unmatched_references.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| ArchiveError::Io(e.to_string()))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, text + "\n").map_err(|e| io(&path, e))
}

/// True iff the observed errors equal the recorded ones as a multiset of
/// identity keys.
pub fn reproduction_check(archive: &TraceArchive, observed: &[JsError]) -> bool {
    same_error_multiset(archive.errors(), observed)
}

pub fn same_error_multiset(a: &[JsError], b: &[JsError]) -> bool {
    let count = |errors: &[JsError]| {
        let mut m: BTreeMap<ErrorKey, usize> = BTreeMap::new();
        for e in errors {
            *m.entry(e.key()).or_default() += 1;
        }
        m
    };
    count(a) == count(b)
}

// ---------------------------------------------------------------------------
// HAR import

#[derive(Deserialize)]
struct Har {
    log: HarLog,
}

#[derive(Deserialize)]
struct HarLog {
    #[serde(default)]
    pages: Vec<HarPage>,
    entries: Vec<HarEntry>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct HarPage {
    #[serde(default)]
    started_date_time: Option<DateTime<Utc>>,
}

#[derive(Deserialize)]
struct HarEntry {
    request: HarRequest,
    response: HarResponse,
}

#[derive(Deserialize)]
struct HarRequest {
    method: String,
    url: String,
}

#[derive(Deserialize)]
struct HarResponse {
    status: u16,
    #[serde(default)]
    headers: Vec<HarHeader>,
    #[serde(default)]
    content: HarContent,
}

#[derive(Deserialize)]
struct HarHeader {
    name: String,
    value: String,
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "camelCase")]
struct HarContent {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    encoding: Option<String>,
}

/// A console error captured next to a HAR file: either a structured error or
/// the raw console text (message and stack).
#[derive(Deserialize)]
#[serde(untagged)]
pub enum ConsoleRecord {
    Structured(JsError),
    Raw { text: String },
}

/// Builds a trace from a HAR document and the console errors of the same
/// load. The page is `page_url`, or the first request when absent. HAR bodies
/// are already decoded, so content-encoding and length headers are dropped.
pub fn import_har(
    har_json: &str,
    console: &[ConsoleRecord],
    page_url: Option<&str>,
    collected_at: Option<DateTime<Utc>>,
) -> Result<WebTrace, ArchiveError> {
    let har: Har = serde_json::from_str(har_json).map_err(|e| ArchiveError::Har(e.to_string()))?;
    let first = har.log.entries.first().ok_or_else(|| ArchiveError::Har("no entries".into()))?;
    let page = normalize_http_url(page_url.unwrap_or(&first.request.url)).map_err(|e| ArchiveError::Har(e.to_string()))?;
    let collected_at = collected_at
        .or_else(|| har.log.pages.first().and_then(|p| p.started_date_time))
        .unwrap_or_else(Utc::now);

    let mut resources: Vec<TracedResource> = Vec::new();
    for entry in &har.log.entries {
        let Ok(url) = normalize_http_url(&entry.request.url) else { continue };
        let method = entry.request.method.to_ascii_uppercase();
        if resources.iter().any(|r| r.method == method && r.resource.url == url) {
            continue;
        }
        let body = match (&entry.response.content.text, entry.response.content.encoding.as_deref()) {
            (Some(text), Some("base64")) => {
                STANDARD.decode(text.trim()).map_err(|e| ArchiveError::Har(format!("{url}: {e}")))?
            }
            (Some(text), _) => text.clone().into_bytes(),
            (None, _) => Vec::new(),
        };
        let headers: Vec<(String, String)> = entry
            .response
            .headers
            .iter()
            .filter(|h| !h.name.eq_ignore_ascii_case("content-encoding") && !h.name.eq_ignore_ascii_case("content-length"))
            .map(|h| (h.name.clone(), h.value.clone()))
            .collect();
        let resource = Resource::new(&url, headers, body).map_err(|e| ArchiveError::Har(e.to_string()))?;
        resources.push(TracedResource { method, status: entry.response.status, resource });
    }

    let mut errors = Vec::new();
    for record in console {
        let e = match record {
            ConsoleRecord::Structured(e) => e.clone(),
            ConsoleRecord::Raw { text } => {
                build_error(text, &page, collected_at).map_err(|e| ArchiveError::Har(e.to_string()))?
            }
        };
        errors.push(e);
    }
    let mut unmatched = Vec::new();
    for e in &errors {
        if let Some(url) = &e.failure_point.resource_url {
            let canon = normalize_url(url).unwrap_or_else(|_| url.clone());
            if !resources.iter().any(|r| r.resource.url == canon) && !unmatched.contains(&canon) {
                unmatched.push(canon);
            }
        }
    }
    Ok(WebTrace { page_url: page, resources, errors, collected_at, unmatched_references: unmatched })
}

// ---------------------------------------------------------------------------
// Library cache

#[derive(Debug, Clone, Deserialize)]
struct CacheEntry {
    url: String,
    file: String,
    content_type: String,
}

/// Pinned library builds served in replay when healing injects a library the
/// original trace never loaded. Directory layout: `index.json` listing
/// `{url, file, content_type}` entries next to the files.
#[derive(Debug, Clone, Default)]
pub struct LibraryCache {
    entries: BTreeMap<String, ArchivedResponse>,
}

impl LibraryCache {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ArchiveError> {
        let dir = dir.as_ref();
        let index = dir.join("index.json");
        let text = fs::read_to_string(&index).map_err(|e| io(&index, e))?;
        let list: Vec<CacheEntry> = serde_json::from_str(&text).map_err(|e| corrupt(format!("library index: {e}")))?;
        let mut entries = BTreeMap::new();
        for entry in list {
            let path = dir.join(&entry.file);
            let body = fs::read(&path).map_err(|e| io(&path, e))?;
            let url = normalize_http_url(&entry.url).map_err(|e| corrupt(format!("library index: {e}")))?;
            let headers = vec![("Content-Type".to_owned(), entry.content_type)];
            entries.insert(url, ArchivedResponse { status: 200, headers, body });
        }
        Ok(LibraryCache { entries })
    }

    pub fn lookup(&self, method: &str, url: &str) -> Option<&ArchivedResponse> {
        if !method.eq_ignore_ascii_case("GET") {
            return None;
        }
        self.entries.get(&normalize_url(url).ok()?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn trace() -> WebTrace {
        let at = Utc.with_ymd_and_hms(2024, 2, 2, 0, 0, 0).unwrap();
        let page = Resource::new(
            "http://h.test/",
            vec![("Content-Type".into(), "text/html".into())],
            b"<script src=a.js></script>".to_vec(),
        )
        .unwrap();
        let js = Resource::new("http://h.test/a.js", vec![], b"m();".to_vec()).unwrap();
        let error = build_error("ReferenceError: m is not defined\n    at http://h.test/a.js:1:1", "http://h.test/", at).unwrap();
        WebTrace {
            page_url: "http://h.test/".into(),
            resources: vec![
                TracedResource { method: "GET".into(), status: 200, resource: page },
                TracedResource { method: "GET".into(), status: 200, resource: js },
            ],
            errors: vec![error],
            collected_at: at,
            unmatched_references: vec![],
        }
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_archive(dir.path(), &trace()).unwrap();
        let archive = load_archive(dir.path()).unwrap();
        assert_eq!(archive.len(), 2);
        assert_eq!(archive.lookup("get", "HTTP://h.test/a.js#x").unwrap().body, b"m();");
        assert!(archive.lookup("GET", "http://h.test/b.js").is_none());
        assert!(archive.lookup("POST", "http://h.test/a.js").is_none());
        assert_eq!(archive.to_web_trace().errors, trace().errors);
        assert!(reproduction_check(&archive, &trace().errors));
        assert!(!reproduction_check(&archive, &[]));
        let mut extra = trace().errors;
        extra.push(extra[0].clone());
        assert!(!reproduction_check(&archive, &extra));
    }

    #[test]
    fn corruption_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_archive(dir.path(), &trace()).unwrap();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
        fs::remove_file(dir.path().join(&manifest.resources[1].body)).unwrap();
        let err = load_archive(dir.path()).unwrap_err();
        assert!(err.to_string().contains("missing body file"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        let mut t = trace();
        t.resources.remove(0);
        write_archive(dir.path(), &t).unwrap();
        assert!(load_archive(dir.path()).unwrap_err().to_string().contains("exactly one top HTML document"));

        let dir = tempfile::tempdir().unwrap();
        let mut t = trace();
        t.resources.remove(1);
        write_archive(dir.path(), &t).unwrap();
        assert!(load_archive(dir.path()).unwrap_err().to_string().contains("neither recorded nor listed"));

        let dir = tempfile::tempdir().unwrap();
        let mut t = trace();
        t.errors.clear();
        write_archive(dir.path(), &t).unwrap();
        assert!(load_archive(dir.path()).is_ok());
    }

    #[test]
    fn redirects_lead_to_the_document() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = trace();
        t.page_url = "http://h.test/start".into();
        let hop = Resource::new("http://h.test/start", vec![("Location".into(), "/".into())], vec![]).unwrap();
        t.resources.push(TracedResource { method: "GET".into(), status: 302, resource: hop });
        write_archive(dir.path(), &t).unwrap();
        assert_eq!(load_archive(dir.path()).unwrap().document_url(), "http://h.test/");
    }

    #[test]
    fn har_import() {
        let har = r#"{"log":{"pages":[{"startedDateTime":"2024-03-01T10:00:00Z"}],"entries":[
            {"request":{"method":"GET","url":"http://h.test/"},"response":{"status":200,
             "headers":[{"name":"Content-Type","value":"text/html"},{"name":"Content-Encoding","value":"gzip"}],
             "content":{"text":"<script src=a.js></script>"}}},
            {"request":{"method":"GET","url":"http://h.test/a.js"},"response":{"status":200,
             "headers":[],"content":{"text":"bSgpOw==","encoding":"base64"}}}]}}"#;
        let console: Vec<ConsoleRecord> = serde_json::from_str(
            r#"[{"text":"Uncaught ReferenceError: m is not defined\n    at http://h.test/a.js:1:1"},
                {"text":"x is not defined\n    at http://cdn.test/gone.js:4:2"}]"#,
        )
        .unwrap();
        let t = import_har(har, &console, None, None).unwrap();
        assert_eq!(t.page_url, "http://h.test/");
        assert_eq!(t.resources[1].resource.body, b"m();");
        assert_eq!(t.resources[0].resource.headers.len(), 1);
        assert_eq!(t.errors.len(), 2);
        assert_eq!(t.unmatched_references, vec!["http://cdn.test/gone.js".to_owned()]);
        t.validate().unwrap();
        assert!(import_har("{}", &[], None, None).is_err());
    }
}
