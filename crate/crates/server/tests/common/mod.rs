//! Shared pieces of the server integration tests: the fixture corpus
//! definition, in-process servers and the node-based page runner.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bytes::Bytes;
use chrono::{TimeZone, Utc};
use http::Request;
use http_body_util::{BodyExt, Empty};

use selfheal_core::archive::{load_archive, LibraryCache, TraceArchive};
use selfheal_core::engine::Healer;
use selfheal_core::intel::ErrorBeacon;
use selfheal_core::model::{JsError, Resource, StrategyKind, TracedResource, WebTrace};
use selfheal_core::store::Store;
use selfheal_server::proxy::{self, BackendLink, Mode, Proxy, ProxyConfig};
use selfheal_server::replay::ReplaySource;

pub const FIXED_UUID: &str = "5f0c6f0e-8a4b-4c43-9d2e-1b7a3c9e4d21";

pub fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn corpus_dir() -> PathBuf {
    root().join("fixtures/corpus")
}

pub fn golden_dir() -> PathBuf {
    root().join("fixtures/golden")
}

pub fn library_cache_dir() -> PathBuf {
    root().join("fixtures/library-cache")
}

pub fn parse_failure_dir() -> PathBuf {
    root().join("fixtures/parse-failure")
}

pub fn library_cache() -> LibraryCache {
    LibraryCache::load(library_cache_dir()).unwrap()
}

/// One corpus page: its resources, the strategy expected to heal it and
/// fragments the healed resources must contain.
pub struct Fixture {
    pub name: &'static str,
    pub strategy: StrategyKind,
    pub page_url: &'static str,
    pub resources: Vec<(String, &'static str, String)>,
    pub expect: Vec<(&'static str, &'static str)>,
}

const LOGO: &str = "PNG";
const STYLE: &str = "body { font-family: sans-serif; }\n";

fn page(title: &str, head: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n\
         <link rel=\"stylesheet\" href=\"/style.css\">\n{head}</head>\n<body>\n<img src=\"/logo.png\" alt=\"\">\n{body}\n</body>\n</html>\n"
    )
}

fn site(page_url: &'static str, html: String, extra: Vec<(&str, &'static str, &str)>) -> Vec<(String, &'static str, String)> {
    let base = url::Url::parse(page_url).unwrap();
    let mut out = vec![
        (page_url.to_owned(), "text/html; charset=utf-8", html),
        (base.join("/style.css").unwrap().to_string(), "text/css", STYLE.to_owned()),
        (base.join("/logo.png").unwrap().to_string(), "image/png", LOGO.to_owned()),
    ];
    for (url, ct, body) in extra {
        out.push((base.join(url).unwrap().to_string(), ct, body.to_owned()));
    }
    out
}

fn fixture(
    name: &'static str,
    strategy: StrategyKind,
    page_url: &'static str,
    html: String,
    extra: Vec<(&str, &'static str, &str)>,
    expect: Vec<(&'static str, &'static str)>,
) -> Fixture {
    Fixture { name, strategy, page_url, resources: site(page_url, html, extra), expect }
}

const JS: &str = "application/javascript";
const JQUERY: &str = "https://code.jquery.com/jquery-3.7.1.min.js";

pub fn fixtures() -> Vec<Fixture> {
    use StrategyKind::*;
    vec![
        // HTTPS redirection: http scripts blocked on https pages.
        fixture(
            "redirect-widget",
            HttpsRedirector,
            "https://news.test/",
            page("News", "<script src=\"http://cdn.news.test/widget.js\"></script>\n", "<script>\nWidget.render('#top');\n</script>"),
            vec![],
            vec![("https://news.test/", "<script src=\"https://cdn.news.test/widget.js\">")],
        ),
        fixture(
            "redirect-comments",
            HttpsRedirector,
            "https://blog.test/post/1",
            page("Post", "", "<script src=\"http://static.blog.test/comments.js\"></script>\n<script>\ninitComments();\n</script>"),
            vec![],
            vec![("https://blog.test/post/1", "src=\"https://static.blog.test/comments.js\"")],
        ),
        fixture(
            "redirect-cart",
            HttpsRedirector,
            "https://shop.test/cart",
            page("Cart", "<script src=\"http://cdn.shop.test/cart.js\"></script>\n", "<script>\nvar total = 3;\nCart.add(total);\n</script>"),
            vec![],
            vec![("https://shop.test/cart", "src=\"https://cdn.shop.test/cart.js\"")],
        ),
        fixture(
            "redirect-analytics",
            HttpsRedirector,
            "https://portal.test/",
            page("Portal", "<script src=\"http://metrics.portal.test/analytics.js\"></script>\n", "<script>Analytics.track('home');</script>"),
            vec![],
            vec![("https://portal.test/", "src=\"https://metrics.portal.test/analytics.js\"")],
        ),
        fixture(
            "redirect-slider",
            HttpsRedirector,
            "https://mag.test/issue",
            page("Issue", "", "<div id=\"s\"></div>\n<script src=\"http://cdn.mag.test/slider.js\"></script>\n<script>\nvar slider = new Slider('#s');\n</script>"),
            vec![],
            vec![("https://mag.test/issue", "src=\"https://cdn.mag.test/slider.js\"")],
        ),
        // Missing libraries.
        fixture(
            "library-jquery-inline",
            LibraryInjector,
            "http://bakery.test/",
            page("Bakery", "", "<ul id=\"menu\"></ul>\n<script>\n$('#menu').hide();\n</script>"),
            vec![],
            vec![("http://bakery.test/", "<script src=\"https://code.jquery.com/jquery-3.7.1.min.js\"></script>")],
        ),
        fixture(
            "library-jquery-external",
            LibraryInjector,
            "http://garden.test/tips.html",
            page("Tips", "<script src=\"/js/app.js\"></script>\n", "<p>tips</p>"),
            vec![("/js/app.js", JS, "var ready = false;\njQuery(document).ready(function () { ready = true; });\n")],
            vec![("http://garden.test/tips.html", "jquery-3.7.1.min.js")],
        ),
        fixture(
            "library-lodash",
            LibraryInjector,
            "http://stats.test/",
            page("Stats", "", "<script>\nvar sum = 0;\n_.each([1, 2, 3], function (n) { sum += n; });\n</script>"),
            vec![],
            vec![("http://stats.test/", "lodash@4.17.21/lodash.min.js")],
        ),
        fixture(
            "library-moment",
            LibraryInjector,
            "http://events.test/calendar",
            page("Calendar", "<script src=\"/cal.js\"></script>\n", ""),
            vec![("/cal.js", JS, "var year = moment().format('YYYY');\n")],
            vec![("http://events.test/calendar", "moment@2.30.1/moment.min.js")],
        ),
        fixture(
            "library-bootstrap-plugin",
            LibraryInjector,
            "http://dialog.test/",
            page(
                "Dialog",
                &format!("<script src=\"{JQUERY}\"></script>\n"),
                "<div id=\"dlg\"></div>\n<script>\n$('#dlg').modal('show');\n</script>",
            ),
            vec![(JQUERY, JS, JQUERY_STUB)],
            vec![(
                "http://dialog.test/",
                "jquery-3.7.1.min.js\"></script><script src=\"https://cdn.jsdelivr.net/npm/bootstrap@3.4.1/dist/js/bootstrap.min.js\"></script>",
            )],
        ),
        // Lookups of elements the page never contains.
        fixture(
            "element-banner-inline",
            HtmlElementCreator,
            "http://sale.test/",
            page("Sale", "", "<script>\ndocument.getElementById('banner').innerHTML = 'Sale';\n</script>"),
            vec![],
            vec![("http://sale.test/", "<div id=\"banner\" style=\"display:none\"></div>")],
        ),
        fixture(
            "element-clock-external",
            HtmlElementCreator,
            "http://time.test/",
            page("Time", "", "<script src=\"/clock.js\"></script>"),
            vec![("/clock.js", JS, "var now = '12:00';\ndocument.getElementById('clock').textContent = now;\n")],
            vec![("http://time.test/", "<div id=\"clock\" style=\"display:none\"></div>")],
        ),
        fixture(
            "element-sidebar-read",
            HtmlElementCreator,
            "http://docs.test/guide",
            page("Guide", "", "<main></main>\n<script>\nvar width = document.getElementById('sidebar').offsetWidth;\n</script>"),
            vec![],
            vec![("http://docs.test/guide", "<div id=\"sidebar\" style=\"display:none\"></div>")],
        ),
        fixture(
            "element-search-external",
            HtmlElementCreator,
            "http://find.test/",
            page("Find", "<script src=\"/search.js\" defer></script>\n", ""),
            vec![("/search.js", JS, "function readQuery() {\n  return document.getElementById('q').value;\n}\nvar query = readQuery();\n")],
            vec![("http://find.test/", "<div id=\"q\" style=\"display:none\"></div>")],
        ),
        fixture(
            "element-promo-style",
            HtmlElementCreator,
            "http://deals.test/",
            page("Deals", "", "<script>\ndocument.getElementById('promo').style.display = 'none';\n</script>"),
            vec![],
            vec![("http://deals.test/", "<div id=\"promo\" style=\"display:none\"></div>")],
        ),
        // Null variables.
        fixture(
            "object-config-inline",
            ObjectCreator,
            "http://theme.test/",
            page("Theme", "", "<script>\nvar config = null;\nconfig.theme = 'dark';\n</script>"),
            vec![],
            vec![("http://theme.test/", "if (config == null) {config = {};} config.theme = 'dark';")],
        ),
        fixture(
            "object-settings-external",
            ObjectCreator,
            "http://prefs.test/",
            page("Prefs", "<script src=\"/prefs.js\"></script>\n", ""),
            vec![("/prefs.js", JS, "var settings = null;\nsettings.lang = 'en';\n")],
            vec![("http://prefs.test/prefs.js", "if (settings == null) {settings = {};} settings.lang = 'en';")],
        ),
        fixture(
            "object-state-read",
            ObjectCreator,
            "http://counter.test/",
            page("Counter", "", "<script>\nvar state = null;\nvar count = state.count;\n</script>"),
            vec![],
            vec![("http://counter.test/", "if (state == null) {state = {};} var count = state.count;")],
        ),
        fixture(
            "object-cache-function",
            ObjectCreator,
            "http://feed.test/",
            page("Feed", "<script src=\"/feed.js\"></script>\n", ""),
            vec![("/feed.js", JS, "var cache = null;\nfunction items() {\n  return cache.items;\n}\nvar list = items();\n")],
            vec![("http://feed.test/feed.js", "if (cache == null) {cache = {};} return cache.items;")],
        ),
        fixture(
            "object-user-inline",
            ObjectCreator,
            "http://profile.test/me",
            page("Me", "", "<script>var user = null; user.name = 'anon';</script>"),
            vec![],
            vec![("http://profile.test/me", "if (user == null) {user = {};} user.name = 'anon';")],
        ),
        // Statements that cannot run.
        fixture(
            "skip-undefined-inline",
            LineSkipper,
            "http://guard.test/",
            page("Guard", "", "<script>\nif (m) { document.title = 'm'; }\n</script>"),
            vec![],
            vec![("http://guard.test/", "if (typeof m != 'undefined' && m) {if (m) { document.title = 'm'; }}")],
        ),
        fixture(
            "skip-not-function-external",
            LineSkipper,
            "http://api.test/",
            page("Api", "<script src=\"/api.js\"></script>\n", ""),
            vec![("/api.js", JS, "var api = {};\napi.start();\nvar started = true;\n")],
            vec![("http://api.test/api.js", "if (typeof api.start === 'function') {api.start();}")],
        ),
        fixture(
            "skip-undefined-call-external",
            LineSkipper,
            "http://track.test/",
            page("Track", "", "<script src=\"/track.js\"></script>"),
            vec![("/track.js", JS, "trackPageView('home');\n")],
            vec![("http://track.test/track.js", "if (typeof trackPageView != 'undefined' && trackPageView) {trackPageView('home');}")],
        ),
        fixture(
            "skip-null-member-inline",
            LineSkipper,
            "http://sizes.test/",
            page("Sizes", "", "<script>\nvar cfg = { opts: null };\nvar size = cfg.opts.size;\n</script>"),
            vec![],
            vec![("http://sizes.test/", "if (cfg.opts != null) {var size = cfg.opts.size;}")],
        ),
        fixture(
            "skip-undefined-in-function",
            LineSkipper,
            "http://boot.test/",
            page("Boot", "<script src=\"/boot.js\"></script>\n", ""),
            vec![("/boot.js", JS, "function boot() {\n  setupTheme();\n  return true;\n}\nvar booted = boot();\n")],
            vec![("http://boot.test/boot.js", "if (typeof setupTheme != 'undefined' && setupTheme) {setupTheme();}")],
        ),
    ]
}

pub const JQUERY_STUB: &str = "/* jQuery stand-in for the test corpus */\n(function (w) {\n  function Q(sel) { this.sel = sel; }\n  function $(sel) {\n    if (typeof sel === 'function') { sel(); return; }\n    return new Q(sel);\n  }\n  $.fn = Q.prototype;\n  ['hide', 'show', 'html', 'text', 'on', 'css', 'attr', 'append', 'addClass', 'removeClass', 'each'].forEach(function (m) {\n    Q.prototype[m] = function () { return this; };\n  });\n  Q.prototype.ready = function (f) { if (typeof f === 'function') { f(); } return this; };\n  w.jQuery = w.$ = $;\n})(window);\n";

pub fn fixed_time() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap()
}

/// The trace a fixture defines, with the given errors.
pub fn fixture_trace(f: &Fixture, errors: Vec<JsError>) -> WebTrace {
    let resources = f
        .resources
        .iter()
        .map(|(url, ct, body)| TracedResource {
            method: "GET".into(),
            status: 200,
            resource: Resource::new(url, vec![("Content-Type".into(), (*ct).into())], body.clone().into_bytes()).unwrap(),
        })
        .collect();
    WebTrace { page_url: f.page_url.into(), resources, errors, collected_at: fixed_time(), unmatched_references: vec![] }
}

pub fn replay_source(archive: &Path) -> Arc<ReplaySource> {
    Arc::new(ReplaySource::new(load_archive(archive).unwrap(), library_cache()))
}

/// Replay proxy over `archive`. With `heal`, the archive's errors are the
/// known errors and responses are healed with a fixed page id.
pub fn replay_proxy(archive: &Path, heal: bool, applied_log: Option<PathBuf>) -> (Arc<Proxy>, Arc<Store>) {
    replay_proxy_with(archive, heal, applied_log, Healer::default(), true)
}

/// Healing without monitor or activation pings, so rewrites can be compared
/// against hand-written expectations.
pub fn plain_healer() -> Healer {
    Healer { instrument: false, monitor: None, ..Healer::default() }
}

/// With `seeded` false the backend starts empty, so nothing is known about
/// the page in advance.
pub fn replay_proxy_with(
    archive: &Path,
    heal: bool,
    applied_log: Option<PathBuf>,
    healer: Healer,
    seeded: bool,
) -> (Arc<Proxy>, Arc<Store>) {
    let source = replay_source(archive);
    let store = Arc::new(if seeded { source.seeded_store() } else { Store::memory() });
    let mut config = ProxyConfig::new(Mode::Replay(source), BackendLink::Local(store.clone()));
    config.healer = healer;
    config.heal = heal;
    config.applied_log = applied_log;
    config.uuid_source = Arc::new(|| FIXED_UUID.to_owned());
    (Proxy::new(config).unwrap(), store)
}

pub async fn start(proxy: Arc<Proxy>) -> SocketAddr {
    let (addr, _task) = proxy::spawn("127.0.0.1:0".parse().unwrap(), proxy).await.unwrap();
    addr
}

/// Status, headers and body of a GET handled in process.
pub async fn get(proxy: &Arc<Proxy>, url: &str) -> (u16, http::HeaderMap, Bytes) {
    let req = Request::get(url).body(Empty::<Bytes>::new()).unwrap();
    let resp = proxy.handle(req).await;
    let (parts, body) = resp.into_parts();
    (parts.status.as_u16(), parts.headers, body.collect().await.unwrap().to_bytes())
}

pub fn node_available() -> bool {
    std::process::Command::new("node").arg("--version").output().is_ok_and(|o| o.status.success())
}

#[derive(Debug, serde::Deserialize)]
pub struct PageError {
    pub text: String,
    pub stack: String,
}

#[derive(Debug, serde::Deserialize)]
pub struct Beacon {
    pub path: String,
    pub status: u16,
}

#[derive(Debug, serde::Deserialize)]
pub struct FailedFetch {
    pub url: String,
    pub status: u16,
}

#[derive(Debug, serde::Deserialize)]
pub struct PageRun {
    pub errors: Vec<PageError>,
    pub beacons: Vec<Beacon>,
    pub blocked: Vec<String>,
    pub failed: Vec<FailedFetch>,
}

impl PageRun {
    pub fn js_errors(&self, page_url: &str) -> Vec<JsError> {
        self.errors
            .iter()
            .map(|e| {
                ErrorBeacon {
                    page_uuid: FIXED_UUID.into(),
                    page_url: page_url.into(),
                    raw_message: e.text.clone(),
                    stack: e.stack.clone(),
                    timestamp: Some(fixed_time()),
                }
                .to_error(fixed_time())
                .unwrap()
            })
            .collect()
    }
}

/// Loads `url` through the proxy at `addr` with the node page runner.
pub async fn run_page(addr: SocketAddr, url: &str) -> PageRun {
    let out = tokio::process::Command::new("node")
        .arg(root().join("fixtures/minibrowser.js"))
        .args(["--proxy", &format!("http://{addr}"), "--url", url])
        .output()
        .await
        .unwrap();
    assert!(out.status.success(), "page runner failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

/// File name of a golden body for `url`.
pub fn golden_name(url: &str) -> String {
    url.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

pub fn load_corpus() -> Vec<(String, TraceArchive)> {
    let mut out: Vec<(String, TraceArchive)> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().join("manifest.json").is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), load_archive(e.path()).unwrap()))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}
