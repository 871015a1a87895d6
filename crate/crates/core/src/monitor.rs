//! The in-page monitor script template.
//!
//! Templates contain the placeholders `{{PAGE_UUID}}`, `{{ENDPOINT}}` and
//! `{{DOC_ACTIVATIONS}}`, each standing for a script expression: two string
//! literals and an array of `[strategy, error key, resource url]` triples.

use std::path::Path;

use crate::js::{join_lines, js_string};
use crate::model::StrategyKind;

const DEFAULT_TEMPLATE: &str = include_str!("../assets/monitor.js");

/// Reserved path prefix for beacons; never forwarded upstream.
pub const BEACON_PREFIX: &str = "/__selfheal";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MonitorError {
    #[error("cannot read monitor snippet: {0}")]
    Io(String),
    #[error("monitor snippet must contain {{{{PAGE_UUID}}}} exactly once")]
    Placeholder,
    #[error("monitor snippet must not contain a closing script tag")]
    ClosingTag,
}

/// An activation reported by the monitor once the page has loaded, for
/// strategies that change the document rather than a code path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentActivation {
    pub strategy: StrategyKind,
    pub target_error: String,
    pub resource_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitorSnippet {
    template: String,
}

impl MonitorSnippet {
    pub fn new(template: impl Into<String>) -> Result<Self, MonitorError> {
        let template = template.into();
        if template.matches("{{PAGE_UUID}}").count() != 1 {
            return Err(MonitorError::Placeholder);
        }
        if template.to_ascii_lowercase().contains("</script") {
            return Err(MonitorError::ClosingTag);
        }
        // Injected on one line, the snippet leaves the line numbers of the
        // page's inline scripts, and so the keys of their errors, unchanged.
        let probe = ["{{PAGE_UUID}}", "{{ENDPOINT}}", "{{DOC_ACTIVATIONS}}"].iter().fold(template.clone(), |t, p| t.replace(p, "0"));
        let template = match join_lines(&probe) {
            Some(_) => template.chars().map(|c| if matches!(c, '\n' | '\r' | '\u{2028}' | '\u{2029}') { ' ' } else { c }).collect(),
            None => template,
        };
        Ok(MonitorSnippet { template })
    }

    pub fn load(path: &Path) -> Result<Self, MonitorError> {
        let text = std::fs::read_to_string(path).map_err(|e| MonitorError::Io(format!("{}: {e}", path.display())))?;
        Self::new(text)
    }

    /// False for templates that could not be joined safely; those shift the
    /// lines of everything after them in the page.
    pub fn is_single_line(&self) -> bool {
        !self.template.contains(['\n', '\r', '\u{2028}', '\u{2029}'])
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn render(&self, page_uuid: &str, endpoint: &str, activations: &[DocumentActivation]) -> String {
        let list = activations
            .iter()
            .map(|a| {
                format!(
                    "[{},{},{}]",
                    js_string(a.strategy.as_str()),
                    js_string(&a.target_error),
                    js_string(&a.resource_url)
                )
            })
            .collect::<Vec<_>>()
            .join(",");
        self.template
            .replace("{{ENDPOINT}}", &js_string(endpoint))
            .replace("{{DOC_ACTIVATIONS}}", &format!("[{list}]"))
            .replace("{{PAGE_UUID}}", &js_string(page_uuid))
    }
}

impl Default for MonitorSnippet {
    fn default() -> Self {
        MonitorSnippet::new(DEFAULT_TEMPLATE).expect("bundled monitor snippet is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_monitor_is_one_line() {
        let m = MonitorSnippet::default();
        assert!(m.is_single_line());
        let out = m.render("0b0e5f7c-3f44-4d1a-9a57-9a0b3c2d1e4f", BEACON_PREFIX, &[]);
        assert!(crate::js::is_parseable(&out));
    }

    #[test]
    fn unsafe_templates_keep_their_lines() {
        let m = MonitorSnippet::new("var u = {{PAGE_UUID}}; // note\nsend(u);").unwrap();
        assert!(!m.is_single_line());
        let m = MonitorSnippet::new("var u = {{PAGE_UUID}}\nsend(u)").unwrap();
        assert!(!m.is_single_line());
        let m = MonitorSnippet::new("var u = {{PAGE_UUID}};\nsend(u);").unwrap();
        assert!(m.is_single_line());
    }

    #[test]
    fn renders_parameters() {
        let uuid = "0b0e5f7c-3f44-4d1a-9a57-9a0b3c2d1e4f";
        let out = MonitorSnippet::default().render(
            uuid,
            BEACON_PREFIX,
            &[DocumentActivation {
                strategy: StrategyKind::LibraryInjector,
                target_error: "NotDefined|jQuery|||1|0".into(),
                resource_url: "http://h.test/".into(),
            }],
        );
        assert_eq!(out.matches(uuid).count(), 1);
        assert!(out.contains("\"/__selfheal\""));
        assert!(out.contains("[[\"LibraryInjector\",\"NotDefined|jQuery|||1|0\",\"http://h.test/\"]]"));
        assert!(!out.contains("{{"));
        assert!(crate::js::is_parseable(&out));
    }

    #[test]
    fn rejects_bad_templates() {
        assert_eq!(MonitorSnippet::new("x"), Err(MonitorError::Placeholder));
        assert_eq!(MonitorSnippet::new("{{PAGE_UUID}}</SCRIPT>"), Err(MonitorError::ClosingTag));
    }
}
