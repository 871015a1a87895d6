//! Domain types shared by the proxy, the backend, the archive and the evaluator.
//!
//! Every type here is an immutable value once constructed. Serialization goes
//! through serde with the field names used on the wire and in archives.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("malformed URL `{0}`")]
    MalformedUrl(String),
    #[error("URL `{0}` is not an absolute http(s) URL")]
    UnsupportedScheme(String),
    #[error("`{0}` is not a canonical version-4 UUID")]
    InvalidUuid(String),
    #[error("invalid failure point: {0}")]
    InvalidFailurePoint(String),
    #[error("invalid error key `{0}`")]
    InvalidKey(String),
    #[error("invalid web trace: {0}")]
    InvalidTrace(String),
}

// ---------------------------------------------------------------------------
// URLs

/// Canonical form of an absolute URL: lowercase scheme and host, no default
/// port, no fragment, percent-encoding normalized. The query is kept.
pub fn normalize_url(input: &str) -> Result<String, ModelError> {
    let url = Url::parse(input.trim()).map_err(|_| ModelError::MalformedUrl(input.to_owned()))?;
    Ok(canonicalize(url))
}

/// Resolves `reference` against `base` and canonicalizes the result.
pub fn resolve_url(base: &str, reference: &str) -> Result<String, ModelError> {
    let base = Url::parse(base.trim()).map_err(|_| ModelError::MalformedUrl(base.to_owned()))?;
    let url = base
        .join(reference.trim())
        .map_err(|_| ModelError::MalformedUrl(reference.to_owned()))?;
    Ok(canonicalize(url))
}

/// Like [`normalize_url`] but additionally requires an http or https scheme.
pub fn normalize_http_url(input: &str) -> Result<String, ModelError> {
    let canon = normalize_url(input)?;
    if canon.starts_with("http://") || canon.starts_with("https://") {
        Ok(canon)
    } else {
        Err(ModelError::UnsupportedScheme(input.to_owned()))
    }
}

fn canonicalize(mut url: Url) -> String {
    url.set_fragment(None);
    if url.cannot_be_a_base() {
        return url.into();
    }
    let path = normalize_percent(url.path());
    url.set_path(&path);
    if let Some(query) = url.query() {
        let query = normalize_percent(query);
        url.set_query(Some(&query));
    }
    url.into()
}

/// Decodes escapes of unreserved characters and uppercases the hex digits of
/// every other escape.
fn normalize_percent(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            let hi = (bytes[i + 1] as char).to_digit(16);
            let lo = (bytes[i + 2] as char).to_digit(16);
            if let (Some(hi), Some(lo)) = (hi, lo) {
                let value = (hi * 16 + lo) as u8;
                if value.is_ascii_alphanumeric() || matches!(value, b'-' | b'.' | b'_' | b'~') {
                    out.push(value as char);
                } else {
                    out.push('%');
                    out.push(bytes[i + 1].to_ascii_uppercase() as char);
                    out.push(bytes[i + 2].to_ascii_uppercase() as char);
                }
                i += 3;
                continue;
            }
        }
        out.push(bytes[i] as char);
        i += 1;
    }
    out
}

// ---------------------------------------------------------------------------
// Resources

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContentKind {
    Html,
    Script,
    Json,
    Css,
    Image,
    Font,
    Media,
    Other,
}

impl ContentKind {
    pub fn is_rewritable(self) -> bool {
        matches!(self, ContentKind::Html | ContentKind::Script)
    }
}

/// Finds a header value by case-insensitive name.
pub fn header_value<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

/// Derives the content kind from the Content-Type header, falling back to the
/// URL path extension when the header is missing or ambiguous. Never looks at
/// the body.
pub fn classify_content(url: &str, headers: &[(String, String)]) -> ContentKind {
    if let Some(kind) = header_value(headers, "content-type").and_then(kind_from_mime) {
        return kind;
    }
    kind_from_extension(url)
}

fn kind_from_mime(value: &str) -> Option<ContentKind> {
    let essence = value.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    let kind = match essence.as_str() {
        "" | "text/plain" | "application/octet-stream" | "binary/octet-stream" => return None,
        "text/html" | "application/xhtml+xml" => ContentKind::Html,
        "application/javascript"
        | "text/javascript"
        | "application/x-javascript"
        | "application/ecmascript"
        | "text/ecmascript"
        | "text/jscript"
        | "application/x-ecmascript" => ContentKind::Script,
        "application/json" | "text/json" | "application/manifest+json" => ContentKind::Json,
        "text/css" => ContentKind::Css,
        "application/font-woff"
        | "application/font-woff2"
        | "application/x-font-woff"
        | "application/x-font-ttf"
        | "application/x-font-otf"
        | "application/vnd.ms-fontobject"
        | "application/font-sfnt" => ContentKind::Font,
        m if m.ends_with("+json") => ContentKind::Json,
        m if m.starts_with("image/") => ContentKind::Image,
        m if m.starts_with("font/") => ContentKind::Font,
        m if m.starts_with("audio/") || m.starts_with("video/") => ContentKind::Media,
        _ => ContentKind::Other,
    };
    Some(kind)
}

fn kind_from_extension(url: &str) -> ContentKind {
    let path = match Url::parse(url) {
        Ok(u) => u.path().to_owned(),
        Err(_) => url.split(['?', '#']).next().unwrap_or("").to_owned(),
    };
    let file = path.rsplit('/').next().unwrap_or("");
    let ext = match file.rsplit_once('.') {
        Some((_, ext)) => ext.to_ascii_lowercase(),
        None => return ContentKind::Other,
    };
    match ext.as_str() {
        "html" | "htm" | "xhtml" | "shtml" => ContentKind::Html,
        "js" | "mjs" | "cjs" | "jsx" => ContentKind::Script,
        "json" | "map" | "webmanifest" => ContentKind::Json,
        "css" => ContentKind::Css,
        "png" | "jpg" | "jpeg" | "gif" | "webp" | "svg" | "ico" | "bmp" | "avif" | "tif" | "tiff" => {
            ContentKind::Image
        }
        "woff" | "woff2" | "ttf" | "otf" | "eot" => ContentKind::Font,
        "mp4" | "webm" | "mp3" | "ogg" | "oga" | "ogv" | "wav" | "m4a" | "mov" | "flac" | "aac" => {
            ContentKind::Media
        }
        _ => ContentKind::Other,
    }
}

/// A URL-addressed unit of web content together with the headers used to serve it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resource {
    pub url: String,
    pub headers: Vec<(String, String)>,
    #[serde(with = "body_base64")]
    pub body: Vec<u8>,
    pub content_kind: ContentKind,
}

impl Resource {
    /// Builds a resource, deriving its content kind. The URL must be absolute http(s).
    pub fn new(url: &str, headers: Vec<(String, String)>, body: Vec<u8>) -> Result<Self, ModelError> {
        let url = normalize_http_url(url)?;
        let content_kind = classify_content(&url, &headers);
        Ok(Resource { url, headers, body, content_kind })
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        header_value(&self.headers, name)
    }

    /// Same resource with a different body; kind and headers are kept.
    pub fn with_body(&self, body: Vec<u8>) -> Self {
        Resource { body, ..self.clone() }
    }
}

mod body_base64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(body: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(body))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Errors observed in the browser

/// Where an uncaught error was thrown. `resource_url` is absent when the
/// browser did not report which script was executing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FailurePoint {
    pub resource_url: Option<String>,
    /// 1-based.
    pub line: u32,
    /// 0-based; 0 also stands for "column unknown".
    pub column: u32,
}

/// Stack-frame alias browsers use for scripts inline in the page itself.
pub const PAGE_ALIAS: &str = "(index)";

impl FailurePoint {
    pub fn new(resource_url: Option<String>, line: u32, column: u32) -> Result<Self, ModelError> {
        if line == 0 {
            return Err(ModelError::InvalidFailurePoint("line must be at least 1".into()));
        }
        Ok(FailurePoint { resource_url, line, column })
    }

    /// Resolves the raw location text taken from a stack frame against the
    /// page URL: `(index)` becomes the page itself, relative names are joined,
    /// everything else is canonicalized. Unresolvable names become absent.
    pub fn resolved(&self, page_url: &str) -> FailurePoint {
        let resource_url = self.resource_url.as_deref().and_then(|raw| {
            if raw == PAGE_ALIAS {
                normalize_url(page_url).ok()
            } else {
                resolve_url(page_url, raw).ok().filter(|u| u.starts_with("http"))
            }
        });
        FailurePoint { resource_url, ..self.clone() }
    }
}

/// Message families, in the rank order used for classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorType {
    NotDefined,
    CannotReadPropertyOfNull,
    NotAFunction,
    UnexpectedToken,
    CannotSetPropertyOfNull,
    InvalidToken,
    UnexpectedIdentifier,
    ScriptErrorFor,
    ManifestError,
    AdsbygoogleNoSlot,
    Unknown,
}

impl ErrorType {
    /// Known families in rank order (without `Unknown`).
    pub const RANKED: [ErrorType; 10] = [
        ErrorType::NotDefined,
        ErrorType::CannotReadPropertyOfNull,
        ErrorType::NotAFunction,
        ErrorType::UnexpectedToken,
        ErrorType::CannotSetPropertyOfNull,
        ErrorType::InvalidToken,
        ErrorType::UnexpectedIdentifier,
        ErrorType::ScriptErrorFor,
        ErrorType::ManifestError,
        ErrorType::AdsbygoogleNoSlot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorType::NotDefined => "NotDefined",
            ErrorType::CannotReadPropertyOfNull => "CannotReadPropertyOfNull",
            ErrorType::NotAFunction => "NotAFunction",
            ErrorType::UnexpectedToken => "UnexpectedToken",
            ErrorType::CannotSetPropertyOfNull => "CannotSetPropertyOfNull",
            ErrorType::InvalidToken => "InvalidToken",
            ErrorType::UnexpectedIdentifier => "UnexpectedIdentifier",
            ErrorType::ScriptErrorFor => "ScriptErrorFor",
            ErrorType::ManifestError => "ManifestError",
            ErrorType::AdsbygoogleNoSlot => "AdsbygoogleNoSlot",
            ErrorType::Unknown => "Unknown",
        }
    }

    /// Human label of the family, as shown in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ErrorType::NotDefined => "XXX is not defined",
            ErrorType::CannotReadPropertyOfNull => "Cannot read property XXX of null",
            ErrorType::NotAFunction => "XXX is not a function",
            ErrorType::UnexpectedToken => "Unexpected token X",
            ErrorType::CannotSetPropertyOfNull => "Cannot set property XXX of null",
            ErrorType::InvalidToken => "Invalid or unexpected token",
            ErrorType::UnexpectedIdentifier => "Unexpected identifier",
            ErrorType::ScriptErrorFor => "Script error for: XXX",
            ErrorType::ManifestError => {
                "The manifest specifies content that cannot be displayed on this browser/platform."
            }
            ErrorType::AdsbygoogleNoSlot => "adsbygoogle.push() error: No slot",
            ErrorType::Unknown => "Other errors",
        }
    }

    pub fn is_null_property(self) -> bool {
        matches!(self, ErrorType::CannotReadPropertyOfNull | ErrorType::CannotSetPropertyOfNull)
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorType::RANKED
            .iter()
            .copied()
            .chain(std::iter::once(ErrorType::Unknown))
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ModelError::InvalidKey(s.to_owned()))
    }
}

/// A structured uncaught script error as reported by a browser console.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsError {
    pub error_type: ErrorType,
    pub identifier: Option<String>,
    pub raw_message: String,
    pub failure_point: FailurePoint,
    pub page_url: String,
    pub observed_at: DateTime<Utc>,
}

impl JsError {
    pub fn key(&self) -> ErrorKey {
        error_identity_key(self)
    }

    /// Checks the structural invariants of a deserialized error.
    pub fn validate(&self) -> Result<(), ModelError> {
        normalize_http_url(&self.page_url)?;
        if self.raw_message.trim().is_empty() {
            return Err(ModelError::InvalidTrace("empty error message".into()));
        }
        if self.failure_point.line == 0 {
            return Err(ModelError::InvalidFailurePoint("line must be at least 1".into()));
        }
        if let Some(url) = &self.failure_point.resource_url {
            normalize_http_url(url)?;
        }
        let needs_identifier = matches!(
            self.error_type,
            ErrorType::NotDefined
                | ErrorType::NotAFunction
                | ErrorType::CannotReadPropertyOfNull
                | ErrorType::CannotSetPropertyOfNull
        );
        if needs_identifier && self.identifier.as_deref().map_or(true, str::is_empty) {
            return Err(ModelError::InvalidTrace(format!("{} error without identifier", self.error_type)));
        }
        Ok(())
    }
}

/// Identity of an error: type, identifier and location. Timestamps and the
/// message text are deliberately not part of it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ErrorKey(String);

/// Decomposed form of an [`ErrorKey`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorKeyParts {
    pub error_type: ErrorType,
    pub identifier: Option<String>,
    pub resource_url: Option<String>,
    pub line: u32,
    pub column: u32,
}

impl ErrorKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn from_parts(parts: &ErrorKeyParts) -> ErrorKey {
        ErrorKey(format!(
            "{}|{}|{}|{}|{}",
            parts.error_type,
            escape_key_field(parts.identifier.as_deref()),
            escape_key_field(parts.resource_url.as_deref()),
            parts.line,
            parts.column
        ))
    }

    pub fn parts(&self) -> Result<ErrorKeyParts, ModelError> {
        let bad = || ModelError::InvalidKey(self.0.clone());
        let fields: Vec<&str> = self.0.split('|').collect();
        let [ty, ident, url, line, column] = fields[..] else {
            return Err(bad());
        };
        Ok(ErrorKeyParts {
            error_type: ty.parse().map_err(|_| bad())?,
            identifier: unescape_key_field(ident).ok_or_else(bad)?,
            resource_url: unescape_key_field(url).ok_or_else(bad)?,
            line: line.parse().map_err(|_| bad())?,
            column: column.parse().map_err(|_| bad())?,
        })
    }
}

impl fmt::Display for ErrorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ErrorKey {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = ErrorKey(s.to_owned());
        key.parts()?;
        Ok(key)
    }
}

// Absent fields serialize as the empty string, present ones with `%`, `|` and
// a leading `~` escaped, and the empty string itself as `~`, so that
// absent/empty stay distinguishable and the key stays injective.
fn escape_key_field(field: Option<&str>) -> String {
    match field {
        None => String::new(),
        Some("") => "~".to_owned(),
        Some(s) => {
            let mut out = String::with_capacity(s.len());
            for (i, c) in s.chars().enumerate() {
                match c {
                    '%' => out.push_str("%25"),
                    '|' => out.push_str("%7C"),
                    '~' if i == 0 => out.push_str("%7E"),
                    c => out.push(c),
                }
            }
            out
        }
    }
}

fn unescape_key_field(field: &str) -> Option<Option<String>> {
    if field.is_empty() {
        return Some(None);
    }
    if field == "~" {
        return Some(Some(String::new()));
    }
    let mut out = String::with_capacity(field.len());
    let mut rest = field;
    while let Some(pos) = rest.find('%') {
        out.push_str(&rest[..pos]);
        let code = rest.get(pos + 1..pos + 3)?;
        match code {
            "25" => out.push('%'),
            "7C" => out.push('|'),
            "7E" => out.push('~'),
            _ => return None,
        }
        rest = &rest[pos + 3..];
    }
    out.push_str(rest);
    Some(Some(out))
}

/// Stable identity of an error, used for deduplication and trace comparison.
pub fn error_identity_key(e: &JsError) -> ErrorKey {
    let resource_url = e
        .failure_point
        .resource_url
        .as_deref()
        .map(|u| normalize_url(u).unwrap_or_else(|_| u.to_owned()));
    ErrorKey::from_parts(&ErrorKeyParts {
        error_type: e.error_type,
        identifier: e.identifier.clone(),
        resource_url,
        line: e.failure_point.line,
        column: e.failure_point.column,
    })
}

// ---------------------------------------------------------------------------
// Traces

/// A resource as it was fetched during a page load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracedResource {
    pub method: String,
    pub status: u16,
    pub resource: Resource,
}

/// One recorded page load: the resources it fetched and the errors it raised.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebTrace {
    pub page_url: String,
    pub resources: Vec<TracedResource>,
    pub errors: Vec<JsError>,
    pub collected_at: DateTime<Utc>,
    /// Failure-point URLs that are not among `resources`.
    #[serde(default)]
    pub unmatched_references: Vec<String>,
}

impl WebTrace {
    pub fn validate(&self) -> Result<(), ModelError> {
        let page = normalize_http_url(&self.page_url)?;
        let documents = self
            .resources
            .iter()
            .filter(|r| r.resource.content_kind == ContentKind::Html && r.resource.url == page)
            .count();
        if documents != 1 {
            return Err(ModelError::InvalidTrace(format!(
                "expected exactly one HTML document at {page}, found {documents}"
            )));
        }
        let known: BTreeMap<&str, ()> = self
            .resources
            .iter()
            .map(|r| (r.resource.url.as_str(), ()))
            .chain(self.unmatched_references.iter().map(|u| (u.as_str(), ())))
            .collect();
        for e in &self.errors {
            if let Some(url) = &e.failure_point.resource_url {
                let canon = normalize_url(url)?;
                if !known.contains_key(canon.as_str()) {
                    return Err(ModelError::InvalidTrace(format!(
                        "error location {canon} is neither a recorded resource nor an unmatched reference"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn error_keys(&self) -> Vec<ErrorKey> {
        self.errors.iter().map(error_identity_key).collect()
    }
}

// ---------------------------------------------------------------------------
// Strategies

/// The five healing strategies, ordered by engine precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    HttpsRedirector,
    LibraryInjector,
    HtmlElementCreator,
    ObjectCreator,
    LineSkipper,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::HttpsRedirector,
        StrategyKind::LibraryInjector,
        StrategyKind::HtmlElementCreator,
        StrategyKind::ObjectCreator,
        StrategyKind::LineSkipper,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::HttpsRedirector => "HttpsRedirector",
            StrategyKind::LibraryInjector => "LibraryInjector",
            StrategyKind::HtmlElementCreator => "HtmlElementCreator",
            StrategyKind::ObjectCreator => "ObjectCreator",
            StrategyKind::LineSkipper => "LineSkipper",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            StrategyKind::HttpsRedirector => "HTTP/HTTPS Redirector",
            StrategyKind::LibraryInjector => "Library Injector",
            StrategyKind::HtmlElementCreator => "HTML Element Creator",
            StrategyKind::ObjectCreator => "Object Creator",
            StrategyKind::LineSkipper => "Line Skipper",
        }
    }

    /// Command-line spelling, e.g. `line-skipper`.
    pub fn cli_name(self) -> &'static str {
        match self {
            StrategyKind::HttpsRedirector => "https-redirector",
            StrategyKind::LibraryInjector => "library-injector",
            StrategyKind::HtmlElementCreator => "html-element-creator",
            StrategyKind::ObjectCreator => "object-creator",
            StrategyKind::LineSkipper => "line-skipper",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s || k.cli_name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// Evidence that the code path introduced by a strategy ran in a page load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyActivation {
    pub page_uuid: String,
    pub strategy: StrategyKind,
    /// Identity key of the targeted error, or [`DOCUMENT_WIDE`].
    pub target_error: String,
    pub resource_url: String,
    pub occurred_at: DateTime<Utc>,
}

/// Target used by document-wide activations that claim no specific error.
pub const DOCUMENT_WIDE: &str = "*";

impl StrategyActivation {
    pub fn validate(&self) -> Result<(), ModelError> {
        check_page_uuid(&self.page_uuid)?;
        normalize_http_url(&self.resource_url)?;
        if self.target_error != DOCUMENT_WIDE {
            self.target_error.parse::<ErrorKey>()?;
        }
        Ok(())
    }
}

/// Accepts only version-4 UUIDs in canonical lowercase hyphenated form.
pub fn check_page_uuid(s: &str) -> Result<(), ModelError> {
    let bad = || ModelError::InvalidUuid(s.to_owned());
    let parsed = uuid::Uuid::parse_str(s).map_err(|_| bad())?;
    if parsed.get_version_num() != 4 || parsed.get_variant() != uuid::Variant::RFC4122 {
        return Err(bad());
    }
    if parsed.hyphenated().to_string() != s {
        return Err(bad());
    }
    Ok(())
}
