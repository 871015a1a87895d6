//! HTML-level rewrites on the original markup bytes.
//!
//! The tokenizer records byte spans for tags and attribute values. Every
//! operation splices new text at those spans and re-tokenizes, so bytes that a
//! rewrite does not touch are returned unchanged.

use std::ops::Range;

use crate::intel::{DomQuery, DomQueryKind, LibraryRule};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attr {
    /// Lowercased attribute name.
    pub name: String,
    /// Byte range of the value without quotes; absent for bare attributes.
    pub value: Option<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TagKind {
    Start { attrs: Vec<Attr>, self_closing: bool, content: Option<Range<usize>> },
    End,
}

/// A start or end tag with its byte span. Raw-text elements (script, style,
/// title...) carry the range of their content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tag {
    pub name: String,
    pub span: Range<usize>,
    pub kind: TagKind,
}

impl Tag {
    pub fn is_start(&self, name: &str) -> bool {
        matches!(self.kind, TagKind::Start { .. }) && self.name == name
    }

    pub fn is_end(&self, name: &str) -> bool {
        matches!(self.kind, TagKind::End) && self.name == name
    }

    pub fn attrs(&self) -> &[Attr] {
        match &self.kind {
            TagKind::Start { attrs, .. } => attrs,
            TagKind::End => &[],
        }
    }

    pub fn content(&self) -> Option<Range<usize>> {
        match &self.kind {
            TagKind::Start { content, .. } => content.clone(),
            TagKind::End => None,
        }
    }
}

const RAW_TEXT: &[&str] = &["script", "style", "xmp", "iframe", "noembed", "noframes", "textarea", "title"];

/// A tokenized HTML document. Parsing never fails.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HtmlDocument {
    bytes: Vec<u8>,
    tags: Vec<Tag>,
}

impl HtmlDocument {
    pub fn parse(bytes: impl Into<Vec<u8>>) -> Self {
        let bytes = bytes.into();
        let tags = tokenize(&bytes);
        HtmlDocument { bytes, tags }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    /// Decoded value of an attribute on a tag.
    pub fn attr(&self, tag: &Tag, name: &str) -> Option<String> {
        let attr = tag.attrs().iter().find(|a| a.name == name)?;
        Some(match &attr.value {
            Some(range) => decode_entities(&String::from_utf8_lossy(&self.bytes[range.clone()])),
            None => String::new(),
        })
    }

    pub fn has_element_id(&self, id: &str) -> bool {
        self.tags.iter().any(|t| matches!(t.kind, TagKind::Start { .. }) && self.attr(t, "id").as_deref() == Some(id))
    }

    /// `src` values of all script elements, decoded but unresolved.
    pub fn script_sources(&self) -> Vec<String> {
        self.tags.iter().filter(|t| t.is_start("script")).filter_map(|t| self.attr(t, "src")).collect()
    }

    /// Inline classic or module scripts, with the position of their first byte.
    pub fn inline_scripts(&self) -> Vec<InlineScript> {
        let lines = HtmlLines::new(&self.bytes);
        self.tags
            .iter()
            .filter(|t| t.is_start("script") && self.attr(t, "src").is_none())
            .filter(|t| is_script_type(self.attr(t, "type").as_deref()))
            .filter_map(|t| {
                let content = t.content()?;
                let (line, column) = lines.position(content.start);
                Some(InlineScript { content, line, column })
            })
            .collect()
    }

    /// Offset just past the end tag of the last script whose `src` matches.
    fn after_script_matching(&self, re: &regex::Regex) -> Option<usize> {
        let start = self
            .tags
            .iter()
            .rposition(|t| t.is_start("script") && self.attr(t, "src").is_some_and(|s| re.is_match(&s)))?;
        let open = &self.tags[start];
        match self.tags[start + 1..].iter().find(|t| t.is_end("script")) {
            Some(end) => Some(end.span.end),
            None => Some(open.span.end),
        }
    }

    fn splice(&self, mut edits: Vec<(Range<usize>, String)>) -> HtmlDocument {
        if edits.is_empty() {
            return self.clone();
        }
        edits.sort_by_key(|(r, _)| (r.start, r.end));
        let mut out = Vec::with_capacity(self.bytes.len() + edits.iter().map(|(_, t)| t.len()).sum::<usize>());
        let mut cursor = 0;
        for (range, text) in edits {
            out.extend_from_slice(&self.bytes[cursor..range.start]);
            out.extend_from_slice(text.as_bytes());
            cursor = range.end;
        }
        out.extend_from_slice(&self.bytes[cursor..]);
        HtmlDocument::parse(out)
    }

    /// Where scripts go so that they run before any page script: right after
    /// the head start tag (and a leading charset declaration), else before the
    /// first script, else after the body start tag, else after a doctype.
    fn early_script_anchor(&self) -> usize {
        if let Some(pos) = self.tags.iter().position(|t| t.is_start("head")) {
            let mut anchor = self.tags[pos].span.end;
            if let Some(next) = self.tags.get(pos + 1) {
                let is_charset = next.is_start("meta")
                    && (self.attr(next, "charset").is_some()
                        || self.attr(next, "http-equiv").is_some_and(|v| v.eq_ignore_ascii_case("content-type")));
                let only_space_between =
                    self.bytes[anchor..next.span.start].iter().all(|b| b.is_ascii_whitespace());
                if is_charset && only_space_between {
                    anchor = next.span.end;
                }
            }
            return anchor;
        }
        if let Some(script) = self.tags.iter().find(|t| t.is_start("script")) {
            return script.span.start;
        }
        if let Some(body) = self.tags.iter().find(|t| t.is_start("body")) {
            return body.span.end;
        }
        if let Some(html) = self.tags.iter().find(|t| t.is_start("html")) {
            return html.span.end;
        }
        leading_doctype_end(&self.bytes)
    }
}

/// An inline script block. `line` is 1-based and `column` 0-based, in the
/// coordinates browsers use for `(index)` stack frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InlineScript {
    pub content: Range<usize>,
    pub line: u32,
    pub column: u32,
}

fn is_script_type(ty: Option<&str>) -> bool {
    let Some(ty) = ty else { return true };
    let essence = ty.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    matches!(
        essence.as_str(),
        "" | "module"
            | "text/javascript"
            | "application/javascript"
            | "application/x-javascript"
            | "text/ecmascript"
            | "application/ecmascript"
            | "text/jscript"
    )
}

struct HtmlLines {
    starts: Vec<usize>,
}

impl HtmlLines {
    fn new(bytes: &[u8]) -> Self {
        let mut starts = vec![0];
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'\r' if bytes.get(i + 1) == Some(&b'\n') => {
                    starts.push(i + 2);
                    i += 1;
                }
                b'\r' | b'\n' => starts.push(i + 1),
                _ => {}
            }
            i += 1;
        }
        HtmlLines { starts }
    }

    fn position(&self, offset: usize) -> (u32, u32) {
        let idx = match self.starts.binary_search(&offset) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        ((idx + 1) as u32, (offset - self.starts[idx]) as u32)
    }
}

fn leading_doctype_end(bytes: &[u8]) -> usize {
    let start = bytes.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(bytes.len());
    let rest = &bytes[start..];
    if rest.len() >= 9 && rest[..9].eq_ignore_ascii_case(b"<!doctype") {
        if let Some(end) = rest.iter().position(|&b| b == b'>') {
            return start + end + 1;
        }
    }
    0
}

// ---------------------------------------------------------------------------
// Tokenizer

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0c)
}

fn find(haystack: &[u8], from: usize, needle: &[u8]) -> Option<usize> {
    haystack.get(from..)?.windows(needle.len()).position(|w| w == needle).map(|p| p + from)
}

fn find_end_tag(bytes: &[u8], from: usize, name: &str) -> usize {
    let mut i = from;
    while let Some(pos) = find(bytes, i, b"</") {
        let after = pos + 2;
        let candidate = bytes.get(after..after + name.len());
        if candidate.is_some_and(|c| c.eq_ignore_ascii_case(name.as_bytes())) {
            match bytes.get(after + name.len()) {
                None => return pos,
                Some(&b) if is_space(b) || b == b'/' || b == b'>' => return pos,
                _ => {}
            }
        }
        i = after;
    }
    bytes.len()
}

fn tokenize(bytes: &[u8]) -> Vec<Tag> {
    let mut tags = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i = find(bytes, i, b"<").unwrap_or(bytes.len());
            continue;
        }
        let rest = &bytes[i..];
        if rest.starts_with(b"<!--") {
            i = find(bytes, i + 4, b"-->").map_or(bytes.len(), |p| p + 3);
        } else if rest.starts_with(b"<!") || rest.starts_with(b"<?") {
            i = find(bytes, i + 2, b">").map_or(bytes.len(), |p| p + 1);
        } else if rest.starts_with(b"</") && rest.get(2).is_some_and(u8::is_ascii_alphabetic) {
            let name_end = (i + 2..bytes.len()).find(|&j| is_space(bytes[j]) || bytes[j] == b'/' || bytes[j] == b'>');
            let name_end = name_end.unwrap_or(bytes.len());
            let name = String::from_utf8_lossy(&bytes[i + 2..name_end]).to_ascii_lowercase();
            let end = find(bytes, name_end, b">").map_or(bytes.len(), |p| p + 1);
            tags.push(Tag { name, span: i..end, kind: TagKind::End });
            i = end;
        } else if rest.get(1).is_some_and(u8::is_ascii_alphabetic) {
            let (tag, end) = start_tag(bytes, i);
            i = end;
            let self_closing = matches!(tag.kind, TagKind::Start { self_closing: true, .. });
            if tag.name == "script" || (RAW_TEXT.contains(&tag.name.as_str()) && !self_closing) {
                let close = find_end_tag(bytes, end, &tag.name);
                let mut tag = tag;
                if let TagKind::Start { content, .. } = &mut tag.kind {
                    *content = Some(end..close);
                }
                tags.push(tag);
                i = close;
            } else {
                tags.push(tag);
            }
        } else {
            i += 1;
        }
    }
    tags
}

fn start_tag(bytes: &[u8], start: usize) -> (Tag, usize) {
    let mut i = start + 1;
    while i < bytes.len() && !is_space(bytes[i]) && bytes[i] != b'/' && bytes[i] != b'>' {
        i += 1;
    }
    let name = String::from_utf8_lossy(&bytes[start + 1..i]).to_ascii_lowercase();
    let mut attrs = Vec::new();
    let mut self_closing = false;
    loop {
        while i < bytes.len() && is_space(bytes[i]) {
            i += 1;
        }
        match bytes.get(i) {
            None => break,
            Some(b'>') => {
                i += 1;
                break;
            }
            Some(b'/') => {
                i += 1;
                if bytes.get(i) == Some(&b'>') {
                    self_closing = true;
                    i += 1;
                    break;
                }
                continue;
            }
            Some(_) => {}
        }
        let name_start = i;
        i += 1;
        while i < bytes.len() && !is_space(bytes[i]) && !matches!(bytes[i], b'/' | b'>' | b'=') {
            i += 1;
        }
        let attr_name = String::from_utf8_lossy(&bytes[name_start..i]).to_ascii_lowercase();
        let mut j = i;
        while j < bytes.len() && is_space(bytes[j]) {
            j += 1;
        }
        let mut value = None;
        if bytes.get(j) == Some(&b'=') {
            j += 1;
            while j < bytes.len() && is_space(bytes[j]) {
                j += 1;
            }
            match bytes.get(j) {
                Some(&q @ (b'"' | b'\'')) => {
                    let close = bytes[j + 1..].iter().position(|&b| b == q).map_or(bytes.len(), |p| p + j + 1);
                    value = Some(j + 1..close);
                    i = (close + 1).min(bytes.len());
                }
                _ => {
                    let end = (j..bytes.len()).find(|&k| is_space(bytes[k]) || bytes[k] == b'>').unwrap_or(bytes.len());
                    value = Some(j..end);
                    i = end;
                }
            }
        }
        if !attrs.iter().any(|a: &Attr| a.name == attr_name) {
            attrs.push(Attr { name: attr_name, value });
        }
    }
    let tag = Tag { name, span: start..i, kind: TagKind::Start { attrs, self_closing, content: None } };
    (tag, i)
}

/// Decodes the character references that commonly appear in attribute values.
pub fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_owned();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let semi = rest.find(';').filter(|&p| p <= 10);
        let decoded = semi.and_then(|p| {
            let entity = &rest[1..p];
            let c = match entity {
                "amp" => Some('&'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "nbsp" => Some('\u{a0}'),
                _ if entity.starts_with("#x") || entity.starts_with("#X") => {
                    u32::from_str_radix(&entity[2..], 16).ok().and_then(char::from_u32)
                }
                _ if entity.starts_with('#') => entity[1..].parse().ok().and_then(char::from_u32),
                _ => None,
            };
            c.map(|c| (c, p + 1))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn escape_attr(s: &str) -> String {
    s.replace('&', "&amp;").replace('"', "&quot;").replace('<', "&lt;").replace('>', "&gt;")
}

// ---------------------------------------------------------------------------
// Rewrites

const SUBRESOURCE_TAGS: &[&str] = &["script", "link", "img", "iframe"];

/// One attribute value changed by [`redirect_http_to_https`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RedirectedUrl {
    pub tag: String,
    pub from: String,
    pub to: String,
}

/// On https pages, switches `src`/`href` of script, link, img and iframe
/// elements from `http://` to `https://`.
pub fn redirect_http_to_https(doc: &HtmlDocument, page_is_https: bool) -> (HtmlDocument, Vec<RedirectedUrl>) {
    if !page_is_https {
        return (doc.clone(), Vec::new());
    }
    let mut edits = Vec::new();
    let mut changed = Vec::new();
    for tag in doc.tags().iter().filter(|t| SUBRESOURCE_TAGS.iter().any(|n| t.is_start(n))) {
        for attr in tag.attrs().iter().filter(|a| a.name == "src" || a.name == "href") {
            let Some(range) = &attr.value else { continue };
            let raw = &doc.bytes[range.clone()];
            let lead = raw.iter().take_while(|b| is_space(**b)).count();
            let scheme = lead..lead + 7;
            if raw.get(scheme.clone()).is_some_and(|s| s.eq_ignore_ascii_case(b"http://")) {
                let from = decode_entities(String::from_utf8_lossy(raw).trim());
                let to = format!("https://{}", &from[7..]);
                edits.push((range.start + scheme.start..range.start + scheme.end, "https://".to_owned()));
                changed.push(RedirectedUrl { tag: tag.name.clone(), from, to });
            }
        }
    }
    (doc.splice(edits), changed)
}

/// Adds a hidden empty element for a by-id lookup that finds nothing.
pub fn create_missing_element(doc: &HtmlDocument, q: &DomQuery) -> HtmlDocument {
    let DomQueryKind::ById = q.kind;
    if q.argument.is_empty() || doc.has_element_id(&q.argument) {
        return doc.clone();
    }
    let element = format!("<div id=\"{}\" style=\"display:none\"></div>", escape_attr(&q.argument));
    let at = doc
        .tags()
        .iter()
        .rev()
        .find(|t| t.is_end("body"))
        .map_or(doc.bytes.len(), |t| t.span.start);
    doc.splice(vec![(at..at, element)])
}

/// Loads each rule's library before any page script, in the given order.
/// A rule with `load_after` goes right after the last page script matching
/// it, when there is one. Libraries already loaded are skipped.
pub fn inject_libraries(doc: &HtmlDocument, rules: &[&LibraryRule]) -> HtmlDocument {
    let present = doc.script_sources();
    let mut seen: Vec<&str> = Vec::new();
    let mut inserts: Vec<(usize, String)> = Vec::new();
    let early = doc.early_script_anchor();
    for rule in rules {
        let url = rule.inject_url.as_str();
        if present.iter().any(|s| s.trim() == url) || seen.contains(&url) {
            continue;
        }
        seen.push(url);
        let at = rule.load_after.as_ref().and_then(|re| doc.after_script_matching(re)).unwrap_or(early);
        let tag = format!("<script src=\"{}\"></script>", escape_attr(url));
        match inserts.iter_mut().find(|(p, _)| *p == at) {
            Some((_, text)) => text.push_str(&tag),
            None => inserts.push((at, tag)),
        }
    }
    if inserts.is_empty() {
        return doc.clone();
    }
    doc.splice(inserts.into_iter().map(|(at, text)| (at..at, text)).collect())
}

pub fn inject_library(doc: &HtmlDocument, rule: &LibraryRule) -> HtmlDocument {
    inject_libraries(doc, &[rule])
}

/// Marker attribute of the injected monitor script.
pub const MONITOR_MARKER: &str = "data-selfheal=\"monitor\"";

/// Inserts an already rendered monitor script so it is the first script to run.
pub fn inject_monitor_script(doc: &HtmlDocument, rendered: &str) -> HtmlDocument {
    let at = doc.early_script_anchor();
    doc.splice(vec![(at..at, format!("<script {MONITOR_MARKER}>{rendered}</script>"))])
}

/// Replaces the content of an inline script.
pub fn replace_inline_script(doc: &HtmlDocument, content: &Range<usize>, new_text: &str) -> HtmlDocument {
    doc.splice(vec![(content.clone(), new_text.to_owned())])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(doc: &HtmlDocument) -> String {
        String::from_utf8(doc.as_bytes().to_vec()).unwrap()
    }

    #[test]
    fn tokenizer_spans() {
        let doc = HtmlDocument::parse(
            "<!DOCTYPE html><html><head><title>a<b></title><script>if (a<b) {}</script></head><body id=x class='y' hidden></body></html>",
        );
        let names: Vec<_> = doc.tags().iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["html", "head", "title", "title", "script", "script", "head", "body", "body", "html"]);
        let body = doc.tags().iter().find(|t| t.is_start("body")).unwrap();
        assert_eq!(doc.attr(body, "class").as_deref(), Some("y"));
        assert_eq!(doc.attr(body, "hidden").as_deref(), Some(""));
        assert!(doc.has_element_id("x"));
        let script = doc.inline_scripts().remove(0);
        assert_eq!(&doc.as_bytes()[script.content.clone()], b"if (a<b) {}");
    }

    #[test]
    fn https_redirect_touches_subresources_only() {
        let src = r#"<html><head><script src="http://www.google-analytics.com/urchin.js"></script><link href="HTTP://a.test/s.css"></head><body><a href="http://x">x</a><img src="//cdn.test/i.png"><img src="data:image/png,1"></body></html>"#;
        let doc = HtmlDocument::parse(src);
        let (out, changed) = redirect_http_to_https(&doc, true);
        assert_eq!(changed.len(), 2);
        assert_eq!(changed[0].to, "https://www.google-analytics.com/urchin.js");
        let t = text(&out);
        assert!(t.contains(r#"<script src="https://www.google-analytics.com/urchin.js">"#));
        assert!(t.contains(r#"<link href="https://a.test/s.css">"#));
        assert!(t.contains(r#"<a href="http://x">"#));
        let (same, none) = redirect_http_to_https(&doc, false);
        assert_eq!(same, doc);
        assert!(none.is_empty());
    }

    #[test]
    fn hidden_element_is_created_once() {
        let doc = HtmlDocument::parse("<html><body><p>x</p></body></html>");
        let q = DomQuery { kind: DomQueryKind::ById, argument: "elementID".into() };
        let once = create_missing_element(&doc, &q);
        assert_eq!(text(&once), "<html><body><p>x</p><div id=\"elementID\" style=\"display:none\"></div></body></html>");
        assert_eq!(create_missing_element(&once, &q), once);
        let other = DomQuery { kind: DomQueryKind::ById, argument: "b".into() };
        let twice = create_missing_element(&once, &other);
        assert!(twice.has_element_id("elementID") && twice.has_element_id("b"));
        let bodyless = create_missing_element(&HtmlDocument::parse("<p>x</p>"), &q);
        assert_eq!(text(&bodyless), "<p>x</p><div id=\"elementID\" style=\"display:none\"></div>");
    }

    fn jquery() -> LibraryRule {
        LibraryRule::new("jQuery is not defined", "jQuery", "https://code.jquery.com/jquery-3.7.1.min.js").unwrap()
    }

    #[test]
    fn library_goes_first_in_head_or_before_first_script() {
        let doc = HtmlDocument::parse("<html><head><script>$()</script></head></html>");
        let out = inject_library(&doc, &jquery());
        assert_eq!(
            text(&out),
            "<html><head><script src=\"https://code.jquery.com/jquery-3.7.1.min.js\"></script><script>$()</script></head></html>"
        );
        assert_eq!(inject_library(&out, &jquery()), out);
        let fragment = inject_library(&HtmlDocument::parse("<p></p><script>$()</script>"), &jquery());
        assert_eq!(
            text(&fragment),
            "<p></p><script src=\"https://code.jquery.com/jquery-3.7.1.min.js\"></script><script>$()</script>"
        );
    }

    #[test]
    fn plugins_follow_their_base_library() {
        let rules = crate::intel::default_rules();
        let bootstrap = rules.iter().find(|r| r.library_name == "Bootstrap").unwrap();
        let doc = HtmlDocument::parse(
            "<head><script>a()</script><script src=\"/js/jquery.min.js\"></script><script>$('#m').modal()</script></head>",
        );
        assert_eq!(
            text(&inject_library(&doc, bootstrap)),
            "<head><script>a()</script><script src=\"/js/jquery.min.js\"></script>\
             <script src=\"https://cdn.jsdelivr.net/npm/bootstrap@3.4.1/dist/js/bootstrap.min.js\"></script>\
             <script>$('#m').modal()</script></head>"
        );
        // Without jQuery on the page both go first, base library first.
        let doc = HtmlDocument::parse("<head><script>x()</script></head>");
        let both = inject_libraries(&doc, &[&jquery(), bootstrap]);
        let t = text(&both);
        assert!(t.find("jquery-3.7.1").unwrap() < t.find("bootstrap@").unwrap());
        assert!(t.find("bootstrap@").unwrap() < t.find("x()").unwrap());
    }

    #[test]
    fn monitor_precedes_libraries() {
        let doc = HtmlDocument::parse("<html><head><meta charset=\"utf-8\"><script>$()</script></head></html>");
        let doc = inject_library(&doc, &jquery());
        let doc = inject_monitor_script(&doc, "M");
        assert_eq!(
            text(&doc),
            "<html><head><meta charset=\"utf-8\"><script data-selfheal=\"monitor\">M</script>\
             <script src=\"https://code.jquery.com/jquery-3.7.1.min.js\"></script><script>$()</script></head></html>"
        );
    }

    #[test]
    fn inline_script_positions() {
        let doc = HtmlDocument::parse("<html>\r\n<body>\n  <script>\nfoo();</script><script type=\"text/template\">x</script>");
        let scripts = doc.inline_scripts();
        assert_eq!(scripts.len(), 1);
        assert_eq!((scripts[0].line, scripts[0].column), (3, 10));
    }

    #[test]
    fn entity_decoding() {
        assert_eq!(decode_entities("a&amp;b&#x41;&#66;&bogus;&"), "a&bAB&bogus;&");
    }
}
