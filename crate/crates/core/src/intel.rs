//! Turning browser console output into structured errors, and the lookups
//! strategies need: missing-library rules and DOM queries at a failure point.

use std::path::Path;
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::js::{self, RewriteError};
use crate::model::{normalize_http_url, ErrorType, FailurePoint, JsError, ModelError};

// ---------------------------------------------------------------------------
// Message families

struct Family {
    error_type: ErrorType,
    patterns: Vec<Regex>,
}

fn family(error_type: ErrorType, patterns: &[&str]) -> Family {
    Family { error_type, patterns: patterns.iter().map(|p| Regex::new(p).unwrap()).collect() }
}

// Each pattern captures the identifier slot in a group named `id`. Both the
// older and the current V8 wordings are accepted for the null-property families.
static FAMILIES: LazyLock<Vec<Family>> = LazyLock::new(|| {
    vec![
        family(ErrorType::NotDefined, &[r#"['"]?(?P<id>[\p{L}\p{N}_$]+)['"]? is not defined"#]),
        family(
            ErrorType::CannotReadPropertyOfNull,
            &[
                r#"Cannot read property '(?P<id>[^']*)' of null"#,
                r#"Cannot read property "(?P<id>[^"]*)" of null"#,
                r#"Cannot read property (?P<id>\S+) of null"#,
                r#"Cannot read properties of null \(reading '(?P<id>[^']*)'\)"#,
            ],
        ),
        family(ErrorType::NotAFunction, &[r#"['"]?(?P<id>[^\s'"]+)['"]? is not a function"#]),
        family(ErrorType::UnexpectedToken, &[r#"Unexpected token(?: '(?P<id>[^']+)'| (?P<id2>\S+))?"#]),
        family(
            ErrorType::CannotSetPropertyOfNull,
            &[
                r#"Cannot set property '(?P<id>[^']*)' of null"#,
                r#"Cannot set property "(?P<id>[^"]*)" of null"#,
                r#"Cannot set property (?P<id>\S+) of null"#,
                r#"Cannot set properties of null \(setting '(?P<id>[^']*)'\)"#,
            ],
        ),
        family(ErrorType::InvalidToken, &[r"Invalid or unexpected token"]),
        family(ErrorType::UnexpectedIdentifier, &[r"Unexpected identifier(?: '(?P<id>[^']+)')?"]),
        family(ErrorType::ScriptErrorFor, &[r#"Script error for:? ?(?:"(?P<id>[^"]+)"|(?P<id2>[^\s"]+))"#]),
        family(
            ErrorType::ManifestError,
            &[r"The manifest specifies content that cannot be displayed on this browser/platform"],
        ),
        family(ErrorType::AdsbygoogleNoSlot, &[r"adsbygoogle\.push\(\) error: No slot"]),
    ]
});

/// Classifies a console message into a family of the ranked list and captures
/// its identifier slot. The first family that matches wins.
pub fn classify_error(raw_message: &str) -> (ErrorType, Option<String>) {
    for fam in FAMILIES.iter() {
        for pattern in &fam.patterns {
            if let Some(caps) = pattern.captures(raw_message) {
                let id = caps
                    .name("id")
                    .or_else(|| caps.name("id2"))
                    .map(|m| m.as_str().to_owned())
                    .filter(|s| !s.is_empty());
                return (fam.error_type, id);
            }
        }
    }
    (ErrorType::Unknown, None)
}

/// Synthesizes the console message a browser prints for a family. Families
/// without an identifier slot ignore `identifier`.
pub fn render_message(error_type: ErrorType, identifier: Option<&str>) -> String {
    let id = identifier.unwrap_or("");
    match error_type {
        ErrorType::NotDefined => format!("{id} is not defined"),
        ErrorType::CannotReadPropertyOfNull => format!("Cannot read property '{id}' of null"),
        ErrorType::NotAFunction => format!("{id} is not a function"),
        ErrorType::UnexpectedToken => match identifier {
            Some(tok) => format!("Unexpected token {tok}"),
            None => "Unexpected token".to_owned(),
        },
        ErrorType::CannotSetPropertyOfNull => format!("Cannot set property '{id}' of null"),
        ErrorType::InvalidToken => "Invalid or unexpected token".to_owned(),
        ErrorType::UnexpectedIdentifier => match identifier {
            Some(name) => format!("Unexpected identifier '{name}'"),
            None => "Unexpected identifier".to_owned(),
        },
        ErrorType::ScriptErrorFor => format!("Script error for \"{id}\""),
        ErrorType::ManifestError => {
            "The manifest specifies content that cannot be displayed on this browser/platform.".to_owned()
        }
        ErrorType::AdsbygoogleNoSlot => "adsbygoogle.push() error: No slot size for availableWidth=0".to_owned(),
        ErrorType::Unknown => identifier.unwrap_or("Script error.").to_owned(),
    }
}

// ---------------------------------------------------------------------------
// Stack traces

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no stack frame carries a location")]
pub struct NoLocation;

// `at name (loc:line:col)`, `at loc:line`, `name@loc:line:col`.
static FRAME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?:\bat\s+(?:[^()\n]*?\()?|@|\()(?P<loc>\(index\)|<anonymous>|[^\s()@]+?):(?P<line>\d+)(?::(?P<col>\d+))?(?:\)|\s|,|$)")
        .unwrap()
});

fn frame_in(line: &str) -> Option<FailurePoint> {
    let caps = FRAME.captures(line)?;
    let loc = caps.name("loc")?.as_str();
    let line_no: u32 = caps.name("line")?.as_str().parse().ok()?;
    if line_no == 0 {
        return None;
    }
    // Browsers print 1-based columns.
    let column = caps
        .name("col")
        .and_then(|c| c.as_str().parse::<u32>().ok())
        .map_or(0, |c| c.saturating_sub(1));
    let resource = match loc {
        "<anonymous>" | "native" | "eval" => None,
        other => Some(other.to_owned()),
    };
    Some(FailurePoint { resource_url: resource, line: line_no, column })
}

/// Location of the topmost stack frame in console output (message line plus
/// stack lines). The location is kept as printed; `(index)` stands for the
/// page and is resolved by [`FailurePoint::resolved`].
pub fn parse_failure_point(text: &str) -> Result<FailurePoint, NoLocation> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    lines.find_map(frame_in).or_else(|| frame_in(first)).ok_or(NoLocation)
}

/// Failure point recorded for errors whose location is unknown.
pub fn unknown_location() -> FailurePoint {
    FailurePoint { resource_url: None, line: 1, column: 0 }
}

fn message_line(text: &str) -> &str {
    let first = text.lines().next().unwrap_or("").trim();
    first.strip_prefix("Uncaught ").unwrap_or(first)
}

/// Builds a structured error from console output. The failure point is
/// resolved against `page_url`; a missing location is recorded as an absent
/// resource at line 1.
pub fn build_error(console_text: &str, page_url: &str, observed_at: DateTime<Utc>) -> Result<JsError, ModelError> {
    let page_url = normalize_http_url(page_url)?;
    let raw_message = message_line(console_text).to_owned();
    if raw_message.is_empty() {
        return Err(ModelError::InvalidTrace("empty error message".into()));
    }
    let (error_type, identifier) = classify_error(&raw_message);
    let failure_point = parse_failure_point(console_text)
        .map(|fp| fp.resolved(&page_url))
        .unwrap_or_else(|_| unknown_location());
    Ok(JsError { error_type, identifier, raw_message, failure_point, page_url, observed_at })
}

/// Error report as posted by the in-page monitor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBeacon {
    pub page_uuid: String,
    pub page_url: String,
    pub raw_message: String,
    #[serde(default)]
    pub stack: String,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
}

impl ErrorBeacon {
    /// Structured error for this beacon. The stack is preferred over the
    /// message for locating the failure, since it usually repeats the message
    /// in its first line.
    pub fn to_error(&self, now: DateTime<Utc>) -> Result<JsError, ModelError> {
        let observed_at = self.timestamp.unwrap_or(now);
        let mut error = build_error(&self.raw_message, &self.page_url, observed_at)?;
        if !self.stack.trim().is_empty() {
            let combined = format!("{}\n{}", self.raw_message, self.stack);
            if let Ok(fp) = parse_failure_point(&combined) {
                error.failure_point = fp.resolved(&error.page_url);
            }
        }
        Ok(error)
    }
}

// ---------------------------------------------------------------------------
// Library rules

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("cannot read rule file: {0}")]
    Io(String),
    #[error("rule file is not valid: {0}")]
    Format(String),
    #[error("rule `{library}` has an invalid pattern: {reason}")]
    Pattern { library: String, reason: String },
    #[error("rule `{0}` must inject an https URL")]
    InsecureUrl(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuleSpec {
    pattern: String,
    library_name: String,
    inject_url: String,
    #[serde(default)]
    load_after: Option<String>,
}

/// A pattern over console messages that points at a missing library.
#[derive(Debug, Clone)]
pub struct LibraryRule {
    pub pattern: Regex,
    pub library_name: String,
    pub inject_url: String,
    /// Script URLs this library must load after (plugins of a library the
    /// page already includes).
    pub load_after: Option<Regex>,
}

impl LibraryRule {
    pub fn new(pattern: &str, library_name: &str, inject_url: &str) -> Result<Self, RuleError> {
        let regex = Regex::new(pattern).map_err(|e| RuleError::Pattern {
            library: library_name.to_owned(),
            reason: e.to_string(),
        })?;
        let url = url::Url::parse(inject_url).map_err(|_| RuleError::InsecureUrl(library_name.to_owned()))?;
        if url.scheme() != "https" {
            return Err(RuleError::InsecureUrl(library_name.to_owned()));
        }
        Ok(LibraryRule {
            pattern: regex,
            library_name: library_name.to_owned(),
            inject_url: inject_url.to_owned(),
            load_after: None,
        })
    }

    pub fn with_load_after(mut self, pattern: &str) -> Result<Self, RuleError> {
        self.load_after = Some(Regex::new(pattern).map_err(|e| RuleError::Pattern {
            library: self.library_name.clone(),
            reason: e.to_string(),
        })?);
        Ok(self)
    }
}

impl PartialEq for LibraryRule {
    fn eq(&self, other: &Self) -> bool {
        self.pattern.as_str() == other.pattern.as_str()
            && self.library_name == other.library_name
            && self.inject_url == other.inject_url
            && self.load_after.as_ref().map(Regex::as_str) == other.load_after.as_ref().map(Regex::as_str)
    }
}

const DEFAULT_RULES: &str = include_str!("../assets/library_rules.json");

/// Parses a rule file: a JSON list of `{pattern, library_name, inject_url,
/// load_after?}`.
pub fn parse_rules(text: &str) -> Result<Vec<LibraryRule>, RuleError> {
    let specs: Vec<RuleSpec> = serde_json::from_str(text).map_err(|e| RuleError::Format(e.to_string()))?;
    specs
        .iter()
        .map(|s| {
            let rule = LibraryRule::new(&s.pattern, &s.library_name, &s.inject_url)?;
            match &s.load_after {
                Some(p) => rule.with_load_after(p),
                None => Ok(rule),
            }
        })
        .collect()
}

pub fn load_rules(path: &Path) -> Result<Vec<LibraryRule>, RuleError> {
    let text = std::fs::read_to_string(path).map_err(|e| RuleError::Io(format!("{}: {e}", path.display())))?;
    parse_rules(&text)
}

/// The bundled rule set.
pub fn default_rules() -> Vec<LibraryRule> {
    parse_rules(DEFAULT_RULES).expect("bundled library rules are valid")
}

/// First rule whose pattern matches the error message.
pub fn detect_missing_library<'r>(e: &JsError, rules: &'r [LibraryRule]) -> Option<&'r LibraryRule> {
    rules.iter().find(|r| r.pattern.is_match(&e.raw_message))
}

// ---------------------------------------------------------------------------
// DOM queries

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomQueryKind {
    ById,
}

/// An element lookup performed by the failing statement.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomQuery {
    pub kind: DomQueryKind,
    pub argument: String,
}

/// The by-id lookup dereferenced by the statement at `fp`, if its argument
/// is a string literal.
pub fn extract_dom_query(script_source: &str, fp: &FailurePoint) -> Result<Option<DomQuery>, RewriteError> {
    extract_dom_query_for(script_source, fp, None)
}

/// Like [`extract_dom_query`], restricted to accesses of `property` when given
/// (the property named by a null-property error).
pub fn extract_dom_query_for(
    script_source: &str,
    fp: &FailurePoint,
    property: Option<&str>,
) -> Result<Option<DomQuery>, RewriteError> {
    let id = js::by_id_query_at(script_source, fp, property)?;
    Ok(id.map(|argument| DomQuery { kind: DomQueryKind::ById, argument }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies_ranked_families() {
        assert_eq!(classify_error("jQuery is not defined"), (ErrorType::NotDefined, Some("jQuery".into())));
        assert_eq!(
            classify_error("Cannot set property test of null"),
            (ErrorType::CannotSetPropertyOfNull, Some("test".into()))
        );
        assert_eq!(classify_error("completely novel message 123"), (ErrorType::Unknown, None));
        assert_eq!(
            classify_error("Uncaught TypeError: Cannot read properties of null (reading 'id')"),
            (ErrorType::CannotReadPropertyOfNull, Some("id".into()))
        );
        assert_eq!(
            classify_error("TypeError: Cannot set properties of null (setting 'innerText')"),
            (ErrorType::CannotSetPropertyOfNull, Some("innerText".into()))
        );
        assert_eq!(
            classify_error("Uncaught TypeError: $(...).modal is not a function"),
            (ErrorType::NotAFunction, Some("$(...).modal".into()))
        );
        assert_eq!(classify_error("Invalid or unexpected token"), (ErrorType::InvalidToken, None));
        assert_eq!(classify_error("Unexpected token <"), (ErrorType::UnexpectedToken, Some("<".into())));
        assert_eq!(
            classify_error("Script error for \"jquery\""),
            (ErrorType::ScriptErrorFor, Some("jquery".into()))
        );
    }

    #[test]
    fn frame_from_listing_style_stack() {
        let fp = parse_failure_point(
            "Uncaught TypeError: Cannot read property 'id' of null\n    at bluecava.js?v=1.6:284",
        )
        .unwrap();
        assert_eq!(fp, FailurePoint { resource_url: Some("bluecava.js?v=1.6".into()), line: 284, column: 0 });
    }

    #[test]
    fn frame_on_the_message_line() {
        let fp = parse_failure_point("$ is not defined at (index):20").unwrap();
        assert_eq!(fp, FailurePoint { resource_url: Some("(index)".into()), line: 20, column: 0 });
    }

    #[test]
    fn stackless_has_no_location() {
        assert_eq!(parse_failure_point("Script error."), Err(NoLocation));
    }

    #[test]
    fn topmost_frame_wins_and_columns_become_zero_based() {
        let text = "ReferenceError: m is not defined\n    at f (http://h.test/a.js:3:7)\n    at http://h.test/b.js:9:1";
        let fp = parse_failure_point(text).unwrap();
        assert_eq!(fp, FailurePoint { resource_url: Some("http://h.test/a.js".into()), line: 3, column: 6 });
        let firefox = "f@http://h.test:8080/a.js:12:5\n@http://h.test/b.js:1:1";
        let fp = parse_failure_point(&format!("ReferenceError: x\n{firefox}")).unwrap();
        assert_eq!(fp.resource_url.as_deref(), Some("http://h.test:8080/a.js"));
        assert_eq!((fp.line, fp.column), (12, 4));
        let anon = parse_failure_point("Error: x\n    at <anonymous>:2:3").unwrap();
        assert_eq!(anon, FailurePoint { resource_url: None, line: 2, column: 2 });
    }

    #[test]
    fn build_error_resolves_page_alias() {
        let now = Utc::now();
        let e = build_error("Uncaught ReferenceError: $ is not defined at (index):20", "HTTP://Shop.test/g.html#x", now)
            .unwrap();
        assert_eq!(e.raw_message, "ReferenceError: $ is not defined at (index):20");
        assert_eq!(e.identifier.as_deref(), Some("$"));
        assert_eq!(e.failure_point.resource_url.as_deref(), Some("http://shop.test/g.html"));
        let e = build_error("Script error.", "http://shop.test/", now).unwrap();
        assert_eq!(e.failure_point, unknown_location());
        assert_eq!(e.error_type, ErrorType::Unknown);
    }

    fn err(msg: &str) -> JsError {
        build_error(msg, "http://h.test/", Utc::now()).unwrap()
    }

    #[test]
    fn library_detection() {
        let rules = default_rules();
        assert!(rules.len() >= 10);
        let found = |m: &str| detect_missing_library(&err(m), &rules).map(|r| r.library_name.clone());
        assert_eq!(found("jQuery is not defined").as_deref(), Some("jQuery"));
        assert_eq!(found("Uncaught ReferenceError: $ is not defined").as_deref(), Some("jQuery"));
        assert_eq!(found("ReferenceError: angular is not defined").as_deref(), Some("AngularJS"));
        assert_eq!(found("_ is not defined").as_deref(), Some("Lodash"));
        assert_eq!(found("$(...).tooltip is not a function").as_deref(), Some("Bootstrap"));
        assert_eq!(found("myLocalVar is not defined"), None);
        assert_eq!(found("my$ is not defined"), None);
        assert_eq!(found("window.jQuery is not defined"), None);
    }

    #[test]
    fn rules_reject_plain_http_and_bad_patterns() {
        assert!(matches!(LibraryRule::new("x", "X", "http://a.test/x.js"), Err(RuleError::InsecureUrl(_))));
        assert!(matches!(LibraryRule::new("(", "X", "https://a.test/x.js"), Err(RuleError::Pattern { .. })));
        assert!(parse_rules("{}").is_err());
    }

    #[test]
    fn dom_queries() {
        let fp = FailurePoint::new(None, 1, 0).unwrap();
        let q = extract_dom_query("document.getElementById(\"elementID\").innerText = \"x\";", &fp).unwrap();
        assert_eq!(q, Some(DomQuery { kind: DomQueryKind::ById, argument: "elementID".into() }));
        assert_eq!(extract_dom_query("foo.bar()", &fp).unwrap(), None);
        assert_eq!(extract_dom_query("document.getElementById(\"a\"+i).x = 1", &fp).unwrap(), None);
        assert!(extract_dom_query("foo(", &fp).is_err());
    }
}
