//! Strategy selection and application for one response.
//!
//! Precedence is fixed: HTTPS redirection, library injection, element
//! creation, object creation, line skipping. Each known error is claimed by at
//! most one strategy. Healing is a pure function of its context.

use std::collections::{BTreeMap, BTreeSet};

use crate::html::{self, HtmlDocument, InlineScript};
use crate::intel::{detect_missing_library, extract_dom_query_for, DomQuery, LibraryRule};
use crate::js::{self, Edit, RewriteOptions, RewritePlan};
use crate::model::{normalize_url, ContentKind, ErrorType, FailurePoint, JsError, Resource, StrategyKind, DOCUMENT_WIDE};
use crate::monitor::{DocumentActivation, MonitorSnippet, BEACON_PREFIX};

/// Everything healing may look at for one response.
#[derive(Debug, Clone)]
pub struct HealingContext {
    pub request_url: String,
    pub request_headers: Vec<(String, String)>,
    pub response: Resource,
    pub known_errors: Vec<JsError>,
    pub page_uuid: String,
    /// Bodies of external scripts named by failure points of page errors,
    /// keyed by canonical URL. Used to find DOM lookups for HTML pages.
    pub script_sources: BTreeMap<String, String>,
}

impl HealingContext {
    pub fn new(response: Resource, known_errors: Vec<JsError>, page_uuid: impl Into<String>) -> Self {
        HealingContext {
            request_url: response.url.clone(),
            request_headers: Vec::new(),
            response,
            known_errors,
            page_uuid: page_uuid.into(),
            script_sources: BTreeMap::new(),
        }
    }
}

/// A strategy chosen for an error, or for the whole document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub strategy: StrategyKind,
    pub target: Option<JsError>,
}

impl Selection {
    pub fn target_key(&self) -> String {
        self.target.as_ref().map_or_else(|| DOCUMENT_WIDE.to_owned(), |e| e.key().to_string())
    }
}

/// An activation the backend may expect once the healed response runs.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Expectation {
    pub strategy: StrategyKind,
    pub target_error: String,
    pub resource_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HealOutcome {
    /// The response to serve; its body equals the input when nothing applied.
    pub resource: Resource,
    pub applied: Vec<Selection>,
    pub expectations: Vec<Expectation>,
    /// Errors that looked healable but whose rewrite did not apply.
    pub skipped: Vec<(JsError, String)>,
    pub monitor_injected: bool,
}

impl HealOutcome {
    pub fn modified(&self, original: &Resource) -> bool {
        self.resource.body != original.body
    }
}

/// Strategy configuration shared by all requests.
#[derive(Debug, Clone)]
pub struct Healer {
    pub rules: Vec<LibraryRule>,
    /// Monitor injected into every HTML document; `None` disables monitoring.
    pub monitor: Option<MonitorSnippet>,
    pub endpoint: String,
    /// Emit activation pings in rewritten scripts.
    pub instrument: bool,
}

impl Default for Healer {
    fn default() -> Self {
        Healer {
            rules: crate::intel::default_rules(),
            monitor: Some(MonitorSnippet::default()),
            endpoint: BEACON_PREFIX.to_owned(),
            instrument: true,
        }
    }
}

fn same_url(a: &str, b: &str) -> bool {
    match (normalize_url(a), normalize_url(b)) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

fn fp_in(e: &JsError, url: &str) -> bool {
    e.failure_point.resource_url.as_deref().is_some_and(|r| same_url(r, url))
}

fn line_skippable(t: ErrorType) -> bool {
    matches!(t, ErrorType::NotDefined | ErrorType::NotAFunction) || t.is_null_property()
}

/// Which script-level strategy to use for an error at `fp` in `source`.
fn script_strategy(source: &str, e: &JsError, fp: &FailurePoint) -> Option<StrategyKind> {
    if e.error_type.is_null_property() {
        let property = e.identifier.as_deref()?;
        if let Ok(js::BaseExpr::Ident(_)) = js::failing_base(source, fp, property) {
            return Some(StrategyKind::ObjectCreator);
        }
    }
    line_skippable(e.error_type).then_some(StrategyKind::LineSkipper)
}

fn edit_for(strategy: StrategyKind, e: &JsError, fp: FailurePoint) -> Edit {
    Edit { strategy, fp, error_type: e.error_type, identifier: e.identifier.clone(), key: Some(e.key()) }
}

/// Outcome of rewriting one script body.
struct ScriptRewrite {
    body: String,
    applied: Vec<(StrategyKind, JsError)>,
    skipped: Vec<(JsError, String)>,
}

impl Healer {
    pub fn new(rules: Vec<LibraryRule>, monitor: Option<MonitorSnippet>) -> Self {
        Healer { rules, monitor, ..Healer::default() }
    }

    fn library_for(&self, e: &JsError) -> Option<(usize, &LibraryRule)> {
        let rule = detect_missing_library(e, &self.rules)?;
        self.rules.iter().position(|r| std::ptr::eq(r, rule)).map(|i| (i, rule))
    }

    /// The strategies that `heal` applies for this context, in order.
    pub fn select_strategies(&self, ctx: &HealingContext) -> Vec<Selection> {
        self.heal(ctx).applied
    }

    /// Failure-point URLs of page errors whose scripts may reveal DOM lookups.
    pub fn scripts_needed(&self, ctx: &HealingContext) -> Vec<String> {
        if ctx.response.content_kind != ContentKind::Html {
            return Vec::new();
        }
        let page = &ctx.response.url;
        let mut out = BTreeSet::new();
        for e in &ctx.known_errors {
            if !e.error_type.is_null_property() || !same_url(&e.page_url, page) {
                continue;
            }
            if let Some(url) = e.failure_point.resource_url.as_deref() {
                if !same_url(url, page) {
                    out.insert(normalize_url(url).unwrap_or_else(|_| url.to_owned()));
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn heal(&self, ctx: &HealingContext) -> HealOutcome {
        match ctx.response.content_kind {
            ContentKind::Html => self.heal_document(ctx),
            ContentKind::Script => self.heal_script(ctx),
            _ => unchanged(ctx),
        }
    }

    fn rewrite_script(&self, source: &str, resource_url: &str, errors: &[(JsError, FailurePoint)]) -> Option<ScriptRewrite> {
        let mut plan = RewritePlan::new(resource_url);
        let mut by_key = BTreeMap::new();
        let mut pre_skipped = Vec::new();
        for (e, fp) in errors {
            match script_strategy(source, e, fp) {
                Some(strategy) => {
                    by_key.insert(e.key(), e.clone());
                    plan.push(edit_for(strategy, e, fp.clone()));
                }
                None => pre_skipped.push((e.clone(), "no script strategy for this error".to_owned())),
            }
        }
        if plan.edits.is_empty() {
            return None;
        }
        let options = RewriteOptions { instrument: self.instrument };
        match js::apply_plan(source, &plan, &options) {
            Ok(outcome) => {
                let lookup = |edit: &Edit| edit.key.as_ref().and_then(|k| by_key.get(k)).cloned();
                let applied = outcome.applied.iter().filter_map(|ed| Some((ed.strategy, lookup(ed)?))).collect();
                let mut skipped = pre_skipped;
                skipped.extend(
                    outcome.skipped.iter().filter_map(|s| Some((lookup(&s.edit)?, s.reason.to_string()))),
                );
                Some(ScriptRewrite { body: outcome.body, applied, skipped })
            }
            Err(err) => {
                tracing::debug!(url = resource_url, error = %err, "script left unmodified");
                let reason = err.to_string();
                let skipped = errors.iter().map(|(e, _)| (e.clone(), reason.clone())).collect();
                Some(ScriptRewrite { body: source.to_owned(), applied: Vec::new(), skipped })
            }
        }
    }

    fn heal_script(&self, ctx: &HealingContext) -> HealOutcome {
        let url = &ctx.response.url;
        let Ok(source) = std::str::from_utf8(&ctx.response.body) else {
            return unchanged(ctx);
        };
        let mut targets = Vec::new();
        for e in ctx.known_errors.iter().filter(|e| fp_in(e, url)) {
            if !line_skippable(e.error_type) || self.library_for(e).is_some() {
                continue;
            }
            // Lookups of missing elements are fixed in the page instead.
            if e.error_type.is_null_property() {
                if let Ok(Some(_)) = extract_dom_query_for(source, &e.failure_point, e.identifier.as_deref()) {
                    continue;
                }
            }
            if !targets.iter().any(|(t, _): &(JsError, FailurePoint)| t.key() == e.key()) {
                targets.push((e.clone(), e.failure_point.clone()));
            }
        }
        let Some(rewrite) = self.rewrite_script(source, url, &targets) else {
            return unchanged(ctx);
        };
        let applied: Vec<Selection> =
            rewrite.applied.iter().map(|(s, e)| Selection { strategy: *s, target: Some(e.clone()) }).collect();
        let expectations = applied.iter().map(|s| expectation(s, url)).collect();
        HealOutcome {
            resource: ctx.response.with_body(rewrite.body.into_bytes()),
            applied: sort_selections(applied),
            expectations,
            skipped: rewrite.skipped,
            monitor_injected: false,
        }
    }

    fn heal_document(&self, ctx: &HealingContext) -> HealOutcome {
        let page = ctx.response.url.clone();
        let page_is_https = page.starts_with("https://");
        let mut doc = HtmlDocument::parse(ctx.response.body.clone());
        let mut errors: Vec<JsError> = Vec::new();
        for e in &ctx.known_errors {
            let relevant = same_url(&e.page_url, &page) || fp_in(e, &page);
            if relevant && !errors.iter().any(|x| x.key() == e.key()) {
                errors.push(e.clone());
            }
        }
        let mut claimed = vec![false; errors.len()];
        let mut applied = Vec::new();
        let mut skipped = Vec::new();

        // HTTPS redirection of blocked subresources.
        let (redirected_doc, redirected) = html::redirect_http_to_https(&doc, page_is_https);
        if !redirected.is_empty() {
            doc = redirected_doc;
            let script_redirected = redirected.iter().any(|r| r.tag == "script");
            let mut any = false;
            for (i, e) in errors.iter().enumerate() {
                let here = e.failure_point.resource_url.is_none() || fp_in(e, &page);
                if script_redirected && here && matches!(e.error_type, ErrorType::NotDefined | ErrorType::NotAFunction) {
                    claimed[i] = true;
                    any = true;
                    applied.push(Selection { strategy: StrategyKind::HttpsRedirector, target: Some(e.clone()) });
                }
            }
            if !any {
                applied.push(Selection { strategy: StrategyKind::HttpsRedirector, target: None });
            }
        }

        // Missing libraries.
        let present = doc.script_sources();
        let mut libraries: Vec<(usize, &LibraryRule)> = Vec::new();
        for (i, e) in errors.iter().enumerate() {
            if claimed[i] {
                continue;
            }
            let Some((index, rule)) = self.library_for(e) else { continue };
            if present.iter().any(|s| s.trim() == rule.inject_url) {
                continue;
            }
            claimed[i] = true;
            applied.push(Selection { strategy: StrategyKind::LibraryInjector, target: Some(e.clone()) });
            if !libraries.iter().any(|(j, _)| *j == index) {
                libraries.push((index, rule));
            }
        }
        libraries.sort_by_key(|(i, _)| *i);
        let rules: Vec<&LibraryRule> = libraries.iter().map(|(_, r)| *r).collect();
        doc = html::inject_libraries(&doc, &rules);

        // Missing elements behind by-id lookups.
        let inline = doc.inline_scripts();
        let mut queries: Vec<DomQuery> = Vec::new();
        for (i, e) in errors.iter().enumerate() {
            if claimed[i] || !e.error_type.is_null_property() {
                continue;
            }
            let Some((source, fp)) = source_at(&doc, &inline, &page, e, &ctx.script_sources) else { continue };
            let Ok(Some(q)) = extract_dom_query_for(&source, &fp, e.identifier.as_deref()) else { continue };
            if doc.has_element_id(&q.argument) && !queries.contains(&q) {
                continue;
            }
            claimed[i] = true;
            applied.push(Selection { strategy: StrategyKind::HtmlElementCreator, target: Some(e.clone()) });
            if !queries.contains(&q) {
                queries.push(q);
            }
        }
        for q in &queries {
            doc = html::create_missing_element(&doc, q);
        }

        // Script-level strategies in inline scripts.
        let inline = doc.inline_scripts();
        let mut per_script: BTreeMap<usize, Vec<(JsError, FailurePoint)>> = BTreeMap::new();
        for (i, e) in errors.iter().enumerate() {
            if claimed[i] || !line_skippable(e.error_type) || !fp_in(e, &page) {
                continue;
            }
            match locate_inline(&doc, &inline, &e.failure_point) {
                Some((index, fp)) => per_script.entry(index).or_default().push((e.clone(), fp)),
                None => skipped.push((e.clone(), "no inline script at the failure point".to_owned())),
            }
        }
        let mut replacements = Vec::new();
        for (index, targets) in per_script {
            let script = &inline[index];
            let Ok(source) = std::str::from_utf8(&doc.as_bytes()[script.content.clone()]) else { continue };
            if let Some(rewrite) = self.rewrite_script(source, &page, &targets) {
                applied.extend(rewrite.applied.iter().map(|(s, e)| Selection { strategy: *s, target: Some(e.clone()) }));
                skipped.extend(rewrite.skipped);
                if rewrite.body != source {
                    replacements.push((script.content.clone(), rewrite.body));
                }
            }
        }
        for (range, body) in replacements.into_iter().rev() {
            doc = html::replace_inline_script(&doc, &range, &body);
        }

        let applied = sort_selections(applied);
        let expectations: Vec<Expectation> = applied.iter().map(|s| expectation(s, &page)).collect();
        let monitor_injected = self.monitor.is_some();
        if let Some(monitor) = &self.monitor {
            let activations: Vec<DocumentActivation> = applied
                .iter()
                .filter(|s| {
                    matches!(
                        s.strategy,
                        StrategyKind::HttpsRedirector | StrategyKind::LibraryInjector | StrategyKind::HtmlElementCreator
                    )
                })
                .map(|s| DocumentActivation {
                    strategy: s.strategy,
                    target_error: s.target_key(),
                    resource_url: page.clone(),
                })
                .collect();
            let rendered = monitor.render(&ctx.page_uuid, &self.endpoint, &activations);
            doc = html::inject_monitor_script(&doc, &rendered);
        }
        HealOutcome {
            resource: ctx.response.with_body(doc.into_bytes()),
            applied,
            expectations,
            skipped,
            monitor_injected,
        }
    }
}

fn unchanged(ctx: &HealingContext) -> HealOutcome {
    HealOutcome {
        resource: ctx.response.clone(),
        applied: Vec::new(),
        expectations: Vec::new(),
        skipped: Vec::new(),
        monitor_injected: false,
    }
}

fn expectation(s: &Selection, resource_url: &str) -> Expectation {
    Expectation { strategy: s.strategy, target_error: s.target_key(), resource_url: resource_url.to_owned() }
}

fn sort_selections(mut selections: Vec<Selection>) -> Vec<Selection> {
    // Stable: errors keep their known order within a strategy.
    selections.sort_by_key(|s| s.strategy);
    selections
}

/// The inline script containing a page-relative failure point, with the
/// failure point translated to script coordinates.
fn locate_inline(doc: &HtmlDocument, scripts: &[InlineScript], fp: &FailurePoint) -> Option<(usize, FailurePoint)> {
    let bytes = doc.as_bytes();
    scripts.iter().enumerate().find_map(|(i, s)| {
        let text = &bytes[s.content.clone()];
        let newlines = text
            .iter()
            .enumerate()
            .filter(|(j, &b)| b == b'\n' || (b == b'\r' && text.get(j + 1) != Some(&b'\n')))
            .count() as u32;
        let last_line = s.line + newlines;
        if fp.line < s.line || fp.line > last_line {
            return None;
        }
        let line = fp.line - s.line + 1;
        let column = if fp.line == s.line { fp.column.saturating_sub(s.column) } else { fp.column };
        if fp.line == s.line && fp.column != 0 && fp.column < s.column {
            return None;
        }
        Some((i, FailurePoint { resource_url: fp.resource_url.clone(), line, column }))
    })
}

/// Script text and script-relative failure point for a page error.
fn source_at(
    doc: &HtmlDocument,
    inline: &[InlineScript],
    page: &str,
    e: &JsError,
    sources: &BTreeMap<String, String>,
) -> Option<(String, FailurePoint)> {
    let url = e.failure_point.resource_url.as_deref()?;
    if same_url(url, page) {
        let (index, fp) = locate_inline(doc, inline, &e.failure_point)?;
        let text = std::str::from_utf8(&doc.as_bytes()[inline[index].content.clone()]).ok()?;
        return Some((text.to_owned(), fp));
    }
    let canon = normalize_url(url).ok()?;
    sources.get(&canon).map(|s| (s.clone(), e.failure_point.clone()))
}

/// Error kinds a single strategy can be applied to.
pub fn supported_error_types(strategy: StrategyKind) -> Option<&'static [ErrorType]> {
    match strategy {
        StrategyKind::HttpsRedirector => None,
        StrategyKind::LibraryInjector => {
            Some(&[ErrorType::NotDefined, ErrorType::NotAFunction, ErrorType::ScriptErrorFor])
        }
        StrategyKind::HtmlElementCreator => {
            Some(&[ErrorType::CannotReadPropertyOfNull, ErrorType::CannotSetPropertyOfNull])
        }
        StrategyKind::ObjectCreator => Some(&[ErrorType::CannotReadPropertyOfNull, ErrorType::CannotSetPropertyOfNull]),
        StrategyKind::LineSkipper => Some(&[
            ErrorType::NotDefined,
            ErrorType::NotAFunction,
            ErrorType::CannotReadPropertyOfNull,
            ErrorType::CannotSetPropertyOfNull,
        ]),
    }
}
