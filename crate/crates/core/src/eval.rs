//! Comparison of original and healed traces, and the aggregate tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::{Manifest, TraceArchive, MANIFEST};
use crate::engine::supported_error_types;
use crate::model::{normalize_url, ErrorKey, ErrorType, JsError, StrategyKind, WebTrace};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("traces are for different pages: {0} vs {1}")]
    PageMismatch(String, String),
    #[error("{0}")]
    Input(String),
}

/// The four reported categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HealingOutcome {
    AllDisappeared,
    SomeDisappeared,
    DifferentErrors,
    NoStrategyApplied,
}

impl HealingOutcome {
    pub const ALL: [HealingOutcome; 4] = [
        HealingOutcome::AllDisappeared,
        HealingOutcome::SomeDisappeared,
        HealingOutcome::DifferentErrors,
        HealingOutcome::NoStrategyApplied,
    ];

    pub fn label(self) -> &'static str {
        match self {
            HealingOutcome::AllDisappeared => "All Errors Disappeared",
            HealingOutcome::SomeDisappeared => "Some Errors Disappeared",
            HealingOutcome::DifferentErrors => "Different/Additional Errors",
            HealingOutcome::NoStrategyApplied => "No Strategy Applied",
        }
    }
}

/// Classification of a trace pair. `NoChange` (strategies applied, error set
/// unchanged) is reported under `DifferentErrors`, marked separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    AllDisappeared,
    SomeDisappeared,
    DifferentErrors,
    NoChange,
    NoStrategyApplied,
}

impl Verdict {
    pub fn outcome(self) -> HealingOutcome {
        match self {
            Verdict::AllDisappeared => HealingOutcome::AllDisappeared,
            Verdict::SomeDisappeared => HealingOutcome::SomeDisappeared,
            Verdict::DifferentErrors | Verdict::NoChange => HealingOutcome::DifferentErrors,
            Verdict::NoStrategyApplied => HealingOutcome::NoStrategyApplied,
        }
    }
}

fn multiset(keys: &[ErrorKey]) -> BTreeMap<&ErrorKey, usize> {
    let mut m = BTreeMap::new();
    for k in keys {
        *m.entry(k).or_default() += 1;
    }
    m
}

/// Classifies by multisets of error identity keys.
pub fn classify(original: &[ErrorKey], healed: &[ErrorKey], strategies_applied: usize) -> Verdict {
    if strategies_applied == 0 {
        return Verdict::NoStrategyApplied;
    }
    if healed.is_empty() {
        return Verdict::AllDisappeared;
    }
    let o = multiset(original);
    let h = multiset(healed);
    let included = h.iter().all(|(k, n)| o.get(k).is_some_and(|m| m >= n));
    if !included {
        Verdict::DifferentErrors
    } else if healed.len() < original.len() {
        Verdict::SomeDisappeared
    } else {
        Verdict::NoChange
    }
}

pub fn compare_traces(original: &WebTrace, healed: &WebTrace, strategies_applied: usize) -> Result<Verdict, EvalError> {
    let a = normalize_url(&original.page_url).unwrap_or_else(|_| original.page_url.clone());
    let b = normalize_url(&healed.page_url).unwrap_or_else(|_| healed.page_url.clone());
    if a != b {
        return Err(EvalError::PageMismatch(a, b));
    }
    Ok(classify(&original.error_keys(), &healed.error_keys(), strategies_applied))
}

/// Errors of one page before and after healing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PagePair {
    pub name: String,
    pub page_url: String,
    pub original: Vec<JsError>,
    pub healed: Vec<JsError>,
    pub strategies_applied: usize,
}

impl PagePair {
    pub fn verdict(&self) -> Verdict {
        let keys = |errors: &[JsError]| errors.iter().map(JsError::key).collect::<Vec<_>>();
        classify(&keys(&self.original), &keys(&self.healed), self.strategies_applied)
    }

    /// Original errors whose key no longer occurs (as a multiset difference).
    pub fn healed_errors(&self) -> Vec<&JsError> {
        let mut remaining: BTreeMap<ErrorKey, usize> = BTreeMap::new();
        for e in &self.healed {
            *remaining.entry(e.key()).or_default() += 1;
        }
        let mut out = Vec::new();
        for e in &self.original {
            match remaining.get_mut(&e.key()) {
                Some(n) if *n > 0 => *n -= 1,
                _ => out.push(e),
            }
        }
        out
    }
}

/// Registrable domain of a page URL, or its host when it has none.
pub fn registrable_domain(page_url: &str) -> String {
    let Some(parsed) = url::Url::parse(page_url).ok() else {
        return String::new();
    };
    match parsed.host() {
        Some(url::Host::Domain(d)) => psl::domain_str(d).unwrap_or(d).to_owned(),
        Some(other) => other.to_string(),
        None => String::new(),
    }
}

/// `healed / initial` as a percentage with two decimals, rounded half up.
pub fn improvement(healed: u64, initial: u64) -> String {
    if initial == 0 {
        return "NA".to_owned();
    }
    let hundredths = (healed * 20_000 + initial) / (2 * initial);
    format!("{}.{:02}%", hundredths / 100, hundredths % 100)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTypeRow {
    pub error_type: ErrorType,
    pub label: String,
    pub pages: u64,
    pub domains: u64,
    pub initial: u64,
    pub healed: u64,
    pub improvement: String,
}

/// One row per error type present in the originals, in rank order with
/// unclassified errors last.
pub fn aggregate_by_error_type(pairs: &[PagePair]) -> Vec<ErrorTypeRow> {
    #[derive(Default)]
    struct Acc {
        pages: BTreeSet<String>,
        domains: BTreeSet<String>,
        initial: u64,
        healed: u64,
    }
    let mut acc: BTreeMap<ErrorType, Acc> = BTreeMap::new();
    for pair in pairs {
        for e in &pair.original {
            let a = acc.entry(e.error_type).or_default();
            a.initial += 1;
            a.pages.insert(pair.name.clone());
            a.domains.insert(registrable_domain(&pair.page_url));
        }
        for e in pair.healed_errors() {
            acc.entry(e.error_type).or_default().healed += 1;
        }
    }
    acc.into_iter()
        .filter(|(_, a)| a.initial > 0)
        .map(|(t, a)| ErrorTypeRow {
            error_type: t,
            label: t.label().to_owned(),
            pages: a.pages.len() as u64,
            domains: a.domains.len() as u64,
            initial: a.initial,
            healed: a.healed,
            improvement: improvement(a.healed, a.initial),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: StrategyKind,
    pub activations: u64,
    /// Number of supported error types; `None` when open-ended.
    pub supported_error_types: Option<usize>,
}

impl StrategyRow {
    pub fn supported_label(&self) -> String {
        self.supported_error_types.map_or_else(|| "NA".to_owned(), |n| n.to_string())
    }
}

/// Row order of the strategy table.
pub const STRATEGY_TABLE_ORDER: [StrategyKind; 5] = [
    StrategyKind::LineSkipper,
    StrategyKind::ObjectCreator,
    StrategyKind::LibraryInjector,
    StrategyKind::HttpsRedirector,
    StrategyKind::HtmlElementCreator,
];

pub fn aggregate_by_strategy(activations: impl IntoIterator<Item = StrategyKind>) -> Vec<StrategyRow> {
    let mut counts: BTreeMap<StrategyKind, u64> = BTreeMap::new();
    for s in activations {
        *counts.entry(s).or_default() += 1;
    }
    STRATEGY_TABLE_ORDER
        .iter()
        .map(|&s| StrategyRow {
            strategy: s,
            activations: counts.get(&s).copied().unwrap_or(0),
            supported_error_types: supported_error_types(s).map(<[ErrorType]>::len),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub outcome: HealingOutcome,
    pub pages: u64,
    pub percent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeTable {
    pub rows: Vec<OutcomeRow>,
    /// Pages counted under DifferentErrors whose error set did not change.
    pub unchanged_with_strategies: u64,
    pub total: u64,
}

pub fn aggregate_outcomes(pairs: &[PagePair]) -> OutcomeTable {
    let verdicts: Vec<Verdict> = pairs.iter().map(PagePair::verdict).collect();
    let total = verdicts.len() as u64;
    let rows = HealingOutcome::ALL
        .iter()
        .map(|&o| {
            let pages = verdicts.iter().filter(|v| v.outcome() == o).count() as u64;
            OutcomeRow { outcome: o, pages, percent: improvement(pages, total) }
        })
        .collect();
    let unchanged = verdicts.iter().filter(|v| **v == Verdict::NoChange).count() as u64;
    OutcomeTable { rows, unchanged_with_strategies: unchanged, total }
}

// ---------------------------------------------------------------------------
// Inputs

/// A strategy applied while serving a page, or a runtime activation.
/// Activation records from the backend deserialize into this as well.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedStrategy {
    #[serde(default)]
    pub page_url: Option<String>,
    pub strategy: StrategyKind,
    pub target_error: String,
    pub resource_url: String,
}

/// Reads JSON lines (or a JSON array) of applied strategies.
pub fn read_applied(text: &str) -> Result<Vec<AppliedStrategy>, EvalError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| EvalError::Input(format!("activations: {e}")));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EvalError::Input(format!("activations line {}: {e}", i + 1))))
        .collect()
}

/// Page URL and errors of a trace directory, without checking bodies.
pub fn read_trace_errors(dir: &Path) -> Result<(String, Vec<JsError>), EvalError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| EvalError::Input(format!("{}: {e}", path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| EvalError::Input(format!("{}: {e}", path.display())))?;
    Ok((manifest.page_url, manifest.errors))
}

fn trace_dirs(root: &Path) -> Result<Vec<(String, std::path::PathBuf)>, EvalError> {
    let entries = fs::read_dir(root).map_err(|e| EvalError::Input(format!("{}: {e}", root.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| EvalError::Input(e.to_string()))?;
        if entry.path().join(MANIFEST).is_file() {
            out.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Pairs original archives with healed traces of the same directory name and
/// attributes applied strategies to pages, by page URL or by resource.
pub fn pair_directories(original: &Path, healed: &Path, applied: &[AppliedStrategy]) -> Result<Vec<PagePair>, EvalError> {
    let mut pairs = Vec::new();
    for (name, dir) in trace_dirs(original)? {
        let archive: TraceArchive =
            crate::archive::load_archive(&dir).map_err(|e| EvalError::Input(format!("{name}: {e}")))?;
        let healed_dir = healed.join(&name);
        let (healed_page, healed_errors) = read_trace_errors(&healed_dir)?;
        let page = normalize_url(archive.page_url()).unwrap_or_else(|_| archive.page_url().to_owned());
        let document = archive.document_url().to_owned();
        if normalize_url(&healed_page).ok().as_deref() != Some(page.as_str()) {
            return Err(EvalError::PageMismatch(page, healed_page));
        }
        let resources: BTreeSet<&str> = archive.requests().map(|(_, u)| u).collect();
        let strategies = applied
            .iter()
            .filter(|a| match &a.page_url {
                Some(p) => {
                    let p = normalize_url(p).unwrap_or_else(|_| p.clone());
                    p == page || p == document
                }
                None => normalize_url(&a.resource_url).is_ok_and(|u| resources.contains(u.as_str())),
            })
            .count();
        pairs.push(PagePair {
            name,
            page_url: page,
            original: archive.errors().to_vec(),
            healed: healed_errors,
            strategies_applied: strategies,
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageReport {
    pub name: String,
    pub page_url: String,
    pub verdict: Verdict,
    pub original_errors: usize,
    pub healed_errors: usize,
    pub strategies_applied: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub pages: Vec<PageReport>,
    pub outcomes: OutcomeTable,
    pub error_types: Vec<ErrorTypeRow>,
    pub strategies: Vec<StrategyRow>,
}

pub fn evaluate(pairs: &[PagePair], applied: &[AppliedStrategy]) -> EvaluationReport {
    EvaluationReport {
        pages: pairs
            .iter()
            .map(|p| PageReport {
                name: p.name.clone(),
                page_url: p.page_url.clone(),
                verdict: p.verdict(),
                original_errors: p.original.len(),
                healed_errors: p.healed.len(),
                strategies_applied: p.strategies_applied,
            })
            .collect(),
        outcomes: aggregate_outcomes(pairs),
        error_types: aggregate_by_error_type(pairs),
        strategies: aggregate_by_strategy(applied.iter().map(|a| a.strategy)),
    }
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_owned()
    };
    let _ = writeln!(out, "{}", line(header.to_vec()));
    let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    for row in rows {
        let _ = writeln!(out, "{}", line(row.iter().map(String::as_str).collect()));
    }
}

/// Plain-text rendering of the three tables.
pub fn render_tables(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Errors by type");
    let rows: Vec<Vec<String>> = report
        .error_types
        .iter()
        .map(|r| {
            let rank = ErrorType::RANKED.iter().position(|t| *t == r.error_type).map_or("-".to_owned(), |i| (i + 1).to_string());
            vec![
                rank,
                r.label.clone(),
                r.pages.to_string(),
                r.domains.to_string(),
                r.initial.to_string(),
                r.healed.to_string(),
                r.improvement.clone(),
            ]
        })
        .collect();
    table(&mut out, &["#", "Error type", "#Pages", "#Domains", "#Initial", "#Healed", "Improvement"], &rows);

    let _ = writeln!(out, "\nOutcomes");
    let mut rows = Vec::new();
    for r in &report.outcomes.rows {
        let label = if r.outcome == HealingOutcome::DifferentErrors && report.outcomes.unchanged_with_strategies > 0 {
            format!("{}*", r.outcome.label())
        } else {
            r.outcome.label().to_owned()
        };
        rows.push(vec![label, format!("{}/{}", r.pages, report.outcomes.total), r.percent.clone()]);
    }
    table(&mut out, &["Category", "#Pages", "%"], &rows);
    if report.outcomes.unchanged_with_strategies > 0 {
        let _ = writeln!(
            out,
            "* includes {} page(s) where strategies applied but the error set was unchanged",
            report.outcomes.unchanged_with_strategies
        );
    }

    let _ = writeln!(out, "\nStrategies");
    let rows: Vec<Vec<String>> = report
        .strategies
        .iter()
        .map(|r| vec![r.strategy.display_name().to_owned(), r.activations.to_string(), r.supported_label()])
        .collect();
    table(&mut out, &["Strategy", "#Activations", "#Supported error types"], &rows);
    out
}
