//! Command line front end. `run` returns the process exit code: 0 on
//! success, 1 on operational failure, 2 on usage errors.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use selfheal_core::archive::{self, ConsoleRecord, LibraryCache};
use selfheal_core::engine::{HealingContext, Healer};
use selfheal_core::eval;
use selfheal_core::intel::{self, LibraryRule};
use selfheal_core::js::{self, Edit, RewriteOptions, RewritePlan};
use selfheal_core::model::{JsError, Resource, StrategyKind};
use selfheal_core::monitor::MonitorSnippet;
use selfheal_core::store::Store;
use selfheal_server::backend::{self, BackendState};
use selfheal_server::proxy::{self, BackendLink, Mode, Proxy, ProxyConfig, DEFAULT_MAX_BODY};
use selfheal_server::replay::ReplaySource;
use selfheal_server::tls::{pem_certs, CaMaterial};

pub const BACKEND_ENV: &str = "SELF_HEAL_BACKEND";

#[derive(Parser, Debug)]
#[command(name = "selfheal", version, about = "Self-healing HTTP proxy toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the healing proxy.
    Proxy(ProxyArgs),
    /// Run the monitoring backend.
    Backend(BackendArgs),
    /// Serve a recorded trace, optionally healing it.
    Replay(ReplayArgs),
    /// Apply one strategy to a file and print the result.
    Rewrite(RewriteArgs),
    /// Compare original and healed traces and print the outcome tables.
    Evaluate(EvaluateArgs),
    /// Validate an archive, optionally against errors observed on replay.
    Verify(VerifyArgs),
    /// Convert a HAR capture plus console errors into an archive.
    Import(ImportArgs),
    /// Print effectiveness statistics.
    Report(ReportArgs),
    /// Remove stored errors.
    Purge(PurgeArgs),
    /// Generate a CA for TLS interception.
    CaInit(CaInitArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Forward,
    Reverse,
    Replay,
}

#[derive(Args, Debug, Clone)]
pub struct HealingArgs {
    /// Backend base URL; SELF_HEAL_BACKEND takes precedence.
    #[arg(long)]
    pub backend: Option<String>,
    /// Use a local store file instead of a backend service.
    #[arg(long, conflicts_with = "backend")]
    pub store: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_BODY)]
    pub max_body: usize,
    /// Do not inject the monitor into HTML.
    #[arg(long)]
    pub no_monitor: bool,
    #[arg(long)]
    pub library_rules: Option<PathBuf>,
    #[arg(long)]
    pub monitor_snippet: Option<PathBuf>,
    #[arg(long)]
    pub ca_cert: Option<PathBuf>,
    #[arg(long)]
    pub ca_key: Option<PathBuf>,
    /// Append applied strategies as JSON lines.
    #[arg(long)]
    pub applied_log: Option<PathBuf>,
    /// Extra PEM trust anchors for upstream TLS.
    #[arg(long)]
    pub upstream_ca: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProxyArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    #[arg(long, value_enum, default_value_t = ModeArg::Forward)]
    pub mode: ModeArg,
    /// Origin for reverse mode.
    #[arg(long)]
    pub origin: Option<String>,
    /// Archive directory for replay mode.
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub library_cache: Option<PathBuf>,
    #[command(flatten)]
    pub healing: HealingArgs,
}

#[derive(Args, Debug)]
pub struct BackendArgs {
    #[arg(long, default_value = "127.0.0.1:8090")]
    pub listen: SocketAddr,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub library_rules: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8081")]
    pub listen: SocketAddr,
    /// Heal responses. Without a backend or store, the archive's own errors
    /// are the known errors.
    #[arg(long)]
    pub heal: bool,
    #[arg(long)]
    pub library_cache: Option<PathBuf>,
    #[command(flatten)]
    pub healing: HealingArgs,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    HttpsRedirector,
    LibraryInjector,
    HtmlElementCreator,
    ObjectCreator,
    LineSkipper,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::HttpsRedirector => StrategyKind::HttpsRedirector,
            StrategyArg::LibraryInjector => StrategyKind::LibraryInjector,
            StrategyArg::HtmlElementCreator => StrategyKind::HtmlElementCreator,
            StrategyArg::ObjectCreator => StrategyKind::ObjectCreator,
            StrategyArg::LineSkipper => StrategyKind::LineSkipper,
        }
    }
}

#[derive(Args, Debug)]
pub struct RewriteArgs {
    #[arg(long)]
    pub file: PathBuf,
    /// JSON error report: one error or an array.
    #[arg(long)]
    pub error: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    /// URL the file is served at; defaults to the failure point's resource.
    #[arg(long)]
    pub url: Option<String>,
    /// Emit activation pings in rewritten code.
    #[arg(long)]
    pub instrument: bool,
    #[arg(long)]
    pub library_rules: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub original_dir: PathBuf,
    #[arg(long)]
    pub healed_dir: PathBuf,
    /// Applied-strategy or activation log (JSON lines or array).
    #[arg(long)]
    pub activations: Option<PathBuf>,
    /// Structured report output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub archive: PathBuf,
    /// Errors observed when replaying (JSON array); checks reproduction.
    #[arg(long)]
    pub observed: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    #[arg(long)]
    pub har: PathBuf,
    /// Console errors: JSON array of errors or `{"text": ...}` records.
    #[arg(long)]
    pub console: Option<PathBuf>,
    #[arg(long)]
    pub page_url: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long, conflicts_with = "backend")]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub library_rules: Option<PathBuf>,
    /// Print statistics as JSON instead of summary lines.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct PurgeArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Only errors of this page or resource.
    #[arg(long)]
    pub url: Option<String>,
}

#[derive(Args, Debug)]
pub struct CaInitArgs {
    #[arg(long)]
    pub cert: PathBuf,
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long, default_value = "selfheal interception CA")]
    pub name: String,
}

/// Operational failure; exit code 1.
#[derive(Debug)]
pub struct Failure(pub String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Parses `argv` and runs the command, writing machine output to `out`.
pub fn run<I, T>(argv: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn rules(path: Option<&Path>) -> Result<Vec<LibraryRule>, Failure> {
    match path {
        Some(p) => Ok(intel::load_rules(p)?),
        None => Ok(intel::default_rules()),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn execute(command: Command, out: &mut dyn std::io::Write) -> Outcome {
    match command {
        Command::Proxy(a) => run_proxy(a),
        Command::Backend(a) => run_backend(a),
        Command::Replay(a) => run_replay(a),
        Command::Rewrite(a) => rewrite(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Verify(a) => verify(a, out),
        Command::Import(a) => import(a, out),
        Command::Report(a) => report(a, out),
        Command::Purge(a) => {
            let store = Store::open(&a.store)?;
            let n = store.purge(a.url.as_deref())?;
            writeln!(out, "purged {n} error record(s)")?;
            Ok(())
        }
        Command::CaInit(a) => {
            CaMaterial::generate(&a.name)?.write(&a.cert, &a.key)?;
            writeln!(out, "wrote {} and {}", a.cert.display(), a.key.display())?;
            Ok(())
        }
    }
}

/// The backend URL: the environment variable wins over the flag.
pub fn backend_url(flag: &Option<String>) -> Option<String> {
    std::env::var(BACKEND_ENV).ok().filter(|v| !v.trim().is_empty()).or_else(|| flag.clone())
}

fn base_config(h: &HealingArgs, mode: Mode, fallback: BackendLink) -> Result<ProxyConfig, Failure> {
    let backend = match (&h.store, backend_url(&h.backend)) {
        (Some(path), _) if h.backend.is_none() => BackendLink::Local(Arc::new(Store::open(path)?)),
        (_, Some(url)) => BackendLink::Remote(url),
        (_, None) => fallback,
    };
    let mut config = ProxyConfig::new(mode, backend);
    let monitor = match (&h.monitor_snippet, h.no_monitor) {
        (_, true) => None,
        (Some(p), false) => Some(MonitorSnippet::load(p)?),
        (None, false) => Some(MonitorSnippet::default()),
    };
    config.healer = Healer::new(rules(h.library_rules.as_deref())?, monitor);
    config.max_body = h.max_body;
    config.applied_log = h.applied_log.clone();
    config.ca = match (&h.ca_cert, &h.ca_key) {
        (Some(c), Some(k)) => Some(CaMaterial::load(c, k)?),
        (None, None) => None,
        _ => return Err(Failure("--ca-cert and --ca-key go together".into())),
    };
    if let Some(p) = &h.upstream_ca {
        config.upstream_roots = pem_certs(&read(p)?)?;
    }
    Ok(config)
}

fn replay_source(archive: &Path, cache: Option<&Path>) -> Result<Arc<ReplaySource>, Failure> {
    let archive = archive::load_archive(archive)?;
    let libraries = match cache {
        Some(p) => LibraryCache::load(p)?,
        None => LibraryCache::default(),
    };
    Ok(Arc::new(ReplaySource::new(archive, libraries)))
}

fn serve_proxy(listen: SocketAddr, config: ProxyConfig) -> Outcome {
    let proxy = Proxy::new(config)?;
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        proxy::serve(listener, proxy).await
    })?;
    Ok(())
}

fn run_proxy(a: ProxyArgs) -> Outcome {
    let mode = match a.mode {
        ModeArg::Forward => Mode::Forward,
        ModeArg::Reverse => {
            let origin = a.origin.as_deref().ok_or_else(|| Failure("reverse mode needs --origin".into()))?;
            Mode::Reverse(url::Url::parse(origin).map_err(|e| Failure(format!("--origin: {e}")))?)
        }
        ModeArg::Replay => {
            let archive = a.archive.as_deref().ok_or_else(|| Failure("replay mode needs --archive".into()))?;
            Mode::Replay(replay_source(archive, a.library_cache.as_deref())?)
        }
    };
    let config = base_config(&a.healing, mode, BackendLink::Disabled)?;
    serve_proxy(a.listen, config)
}

fn run_replay(a: ReplayArgs) -> Outcome {
    let source = replay_source(&a.archive, a.library_cache.as_deref())?;
    let seeded = BackendLink::Local(Arc::new(source.seeded_store()));
    let mut config = base_config(&a.healing, Mode::Replay(source), seeded)?;
    config.heal = a.heal;
    serve_proxy(a.listen, config)
}

fn run_backend(a: BackendArgs) -> Outcome {
    let store = Arc::new(Store::open(&a.store)?);
    let state = BackendState::new(store, rules(a.library_rules.as_deref())?);
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.listen).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        backend::serve(listener, state).await
    })?;
    Ok(())
}

fn read_errors(path: &Path) -> Result<Vec<JsError>, Failure> {
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let errors = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|e| vec![e])
    };
    errors.map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn rewrite(a: RewriteArgs, out: &mut dyn std::io::Write) -> Outcome {
    let source = read(&a.file)?;
    let errors = read_errors(&a.error)?;
    let strategy = StrategyKind::from(a.strategy);
    let url = a
        .url
        .clone()
        .or_else(|| errors.iter().find_map(|e| e.failure_point.resource_url.clone()))
        .or_else(|| errors.first().map(|e| e.page_url.clone()))
        .ok_or_else(|| Failure("no errors given".into()))?;
    let body = match strategy {
        StrategyKind::LineSkipper | StrategyKind::ObjectCreator => {
            let mut plan = RewritePlan::new(&url);
            for e in &errors {
                plan.push(Edit {
                    strategy,
                    fp: e.failure_point.clone(),
                    error_type: e.error_type,
                    identifier: e.identifier.clone(),
                    key: Some(e.key()),
                });
            }
            let outcome = js::apply_plan(&source, &plan, &RewriteOptions { instrument: a.instrument })?;
            for s in &outcome.skipped {
                eprintln!("skipped {} at {}:{}: {}", s.edit.strategy.cli_name(), s.edit.fp.line, s.edit.fp.column, s.reason);
            }
            if outcome.applied.is_empty() {
                return Err(Failure("no edit applied".into()));
            }
            outcome.body
        }
        _ => {
            let mut healer = Healer::new(rules(a.library_rules.as_deref())?, None);
            healer.instrument = a.instrument;
            let resource = Resource::new(&url, vec![("content-type".into(), "text/html".into())], source.into_bytes())?;
            let ctx = HealingContext::new(resource, errors, uuid_nil());
            let outcome = healer.heal(&ctx);
            if !outcome.applied.iter().any(|s| s.strategy == strategy) {
                return Err(Failure(format!("{} does not apply to these errors", strategy.cli_name())));
            }
            String::from_utf8_lossy(&outcome.resource.body).into_owned()
        }
    };
    out.write_all(body.as_bytes())?;
    Ok(())
}

fn uuid_nil() -> String {
    "00000000-0000-4000-8000-000000000000".to_owned()
}

fn evaluate(a: EvaluateArgs, out: &mut dyn std::io::Write) -> Outcome {
    let applied = match &a.activations {
        Some(p) => eval::read_applied(&read(p)?)?,
        None => Vec::new(),
    };
    let pairs = eval::pair_directories(&a.original_dir, &a.healed_dir, &applied)?;
    if pairs.is_empty() {
        return Err(Failure(format!("no archives under {}", a.original_dir.display())));
    }
    let report = eval::evaluate(&pairs, &applied);
    if let Some(path) = &a.out {
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(path, text + "\n").map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    }
    out.write_all(eval::render_tables(&report).as_bytes())?;
    Ok(())
}

fn verify(a: VerifyArgs, out: &mut dyn std::io::Write) -> Outcome {
    let archive = archive::load_archive(&a.archive)?;
    writeln!(out, "ok: {} resources, {} recorded errors", archive.len(), archive.errors().len())?;
    if let Some(p) = &a.observed {
        let observed = read_errors(p)?;
        if !archive::reproduction_check(&archive, &observed) {
            return Err(Failure("observed errors differ from the recorded ones".into()));
        }
        writeln!(out, "reproduced")?;
    }
    Ok(())
}

fn import(a: ImportArgs, out: &mut dyn std::io::Write) -> Outcome {
    let har = read(&a.har)?;
    let console: Vec<ConsoleRecord> = match &a.console {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Failure(format!("{}: {e}", p.display())))?,
        None => Vec::new(),
    };
    let trace = archive::import_har(&har, &console, a.page_url.as_deref(), None)?;
    archive::write_archive(&a.out, &trace)?;
    archive::load_archive(&a.out)?;
    writeln!(out, "wrote {} ({} resources, {} errors)", a.out.display(), trace.resources.len(), trace.errors.len())?;
    Ok(())
}

fn report(a: ReportArgs, out: &mut dyn std::io::Write) -> Outcome {
    let backend = if a.store.is_some() && a.backend.is_none() { None } else { backend_url(&a.backend) };
    match (backend, &a.store) {
        (None, Some(path)) => {
            let store = Store::open(path)?;
            if a.json {
                writeln!(out, "{}", serde_json::to_string_pretty(&store.compute_stats())?)?;
            } else {
                for line in store.summaries(&rules(a.library_rules.as_deref())?) {
                    writeln!(out, "{line}")?;
                }
            }
            Ok(())
        }
        (Some(base), _) => {
            let path = if a.json { "/stats" } else { "/stats/summary" };
            let url = format!("{}{path}", base.trim_end_matches('/'));
            let fetched = runtime()?.block_on(async {
                let client = selfheal_server::client::http_client(&[])?;
                selfheal_server::client::get(&client, &url, Some(std::time::Duration::from_secs(10))).await
            })?;
            if !fetched.status.is_success() {
                return Err(Failure(format!("backend replied {}", fetched.status)));
            }
            out.write_all(&fetched.body)?;
            Ok(())
        }
        (None, None) => Err(Failure("report needs --backend or --store".into())),
    }
}
