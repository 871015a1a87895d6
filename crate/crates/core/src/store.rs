//! Persistent store of reported errors, page loads and strategy activations.
//!
//! The store is a single append-only file of JSON lines. Opening it replays
//! every event, so the in-memory state after a restart equals the state
//! before. Writers are serialized; readers share a read lock.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::engine::Expectation;
use crate::intel::LibraryRule;
use crate::model::{check_page_uuid, normalize_url, ErrorKey, JsError, ModelError, StrategyActivation, StrategyKind, DOCUMENT_WIDE};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("store file is corrupt at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("rejected: {0}")]
    Invalid(#[from] ModelError),
}

/// A deduplicated error with its observation count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub key: ErrorKey,
    pub error: JsError,
    /// Load that first reported the error, when known.
    pub page_uuid: Option<String>,
    pub count: u64,
    pub last_seen: DateTime<Utc>,
}

/// A page load served by the proxy, with the activations it may produce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageLoad {
    pub page_uuid: String,
    pub page_url: String,
    pub served_at: DateTime<Utc>,
    #[serde(default)]
    pub expected: Vec<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub activation: StrategyActivation,
    /// The page load it belongs to was not known when it arrived.
    pub orphan: bool,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationAck {
    pub stored: bool,
    pub orphan: bool,
}

/// Effectiveness of one strategy against one error on one page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectivenessStat {
    pub strategy: StrategyKind,
    pub page_url: String,
    pub target_error: String,
    pub activations: u64,
    pub subsequent_loads: u64,
    pub loads_with_error_recurrence: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Event {
    Error { error: JsError, page_uuid: Option<String> },
    Activation { activation: StrategyActivation },
    Load { load: PageLoad },
    Purge { url: Option<String> },
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
struct State {
    seq: u64,
    errors: BTreeMap<ErrorKey, ErrorRecord>,
    by_url: BTreeMap<String, BTreeSet<ErrorKey>>,
    activations: Vec<ActivationRecord>,
    activation_ids: BTreeSet<(String, StrategyKind, String)>,
    loads: BTreeMap<String, (u64, PageLoad)>,
    reported: BTreeMap<String, BTreeSet<ErrorKey>>,
}

fn canon(url: &str) -> String {
    normalize_url(url).unwrap_or_else(|_| url.to_owned())
}

impl State {
    fn apply(&mut self, event: Event) -> Applied {
        self.seq += 1;
        match event {
            Event::Error { error, page_uuid } => {
                let key = error.key();
                if let Some(uuid) = &page_uuid {
                    self.reported.entry(uuid.clone()).or_default().insert(key.clone());
                }
                let record = match self.errors.get_mut(&key) {
                    Some(existing) => {
                        existing.count += 1;
                        existing.last_seen = existing.last_seen.max(error.observed_at);
                        existing.clone()
                    }
                    None => {
                        self.by_url.entry(canon(&error.page_url)).or_default().insert(key.clone());
                        if let Some(url) = &error.failure_point.resource_url {
                            self.by_url.entry(canon(url)).or_default().insert(key.clone());
                        }
                        let record = ErrorRecord {
                            key: key.clone(),
                            last_seen: error.observed_at,
                            error,
                            page_uuid,
                            count: 1,
                        };
                        self.errors.insert(key, record.clone());
                        record
                    }
                };
                Applied::Error(record)
            }
            Event::Activation { activation } => {
                let id = (activation.page_uuid.clone(), activation.strategy, activation.target_error.clone());
                if !self.activation_ids.insert(id) {
                    return Applied::Activation(ActivationAck { stored: false, orphan: false });
                }
                let orphan = !self.loads.contains_key(&activation.page_uuid)
                    && !self.reported.contains_key(&activation.page_uuid);
                self.activations.push(ActivationRecord { activation, orphan, seq: self.seq });
                Applied::Activation(ActivationAck { stored: true, orphan })
            }
            Event::Load { load } => {
                let mut load = load;
                load.page_url = canon(&load.page_url);
                self.loads.entry(load.page_uuid.clone()).or_insert((self.seq, load));
                Applied::Other(0)
            }
            Event::Purge { url } => {
                let doomed: Vec<ErrorKey> = match &url {
                    None => self.errors.keys().cloned().collect(),
                    Some(u) => self.by_url.get(&canon(u)).map(|s| s.iter().cloned().collect()).unwrap_or_default(),
                };
                for key in &doomed {
                    self.errors.remove(key);
                }
                for keys in self.by_url.values_mut() {
                    for key in &doomed {
                        keys.remove(key);
                    }
                }
                self.by_url.retain(|_, keys| !keys.is_empty());
                Applied::Other(doomed.len())
            }
        }
    }
}

enum Applied {
    Error(ErrorRecord),
    Activation(ActivationAck),
    Other(usize),
}

/// The error store. Cheap to share behind an `Arc`.
pub struct Store {
    path: Option<PathBuf>,
    state: RwLock<State>,
    writer: Mutex<Option<File>>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("path", &self.path).finish_non_exhaustive()
    }
}

impl Store {
    /// Opens (or creates) the store file and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Store, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut state = State::default();
        let mut valid_len = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path)?);
            let mut line = String::new();
            let mut number = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line)?;
                if read == 0 {
                    break;
                }
                number += 1;
                let complete = line.ends_with('\n');
                match serde_json::from_str::<Event>(line.trim_end()) {
                    Ok(event) if complete => {
                        state.apply(event);
                        valid_len += read as u64;
                    }
                    // A torn final write: drop it.
                    _ if !complete => {
                        tracing::warn!(line = number, "discarding incomplete trailing store record");
                        break;
                    }
                    Ok(_) => unreachable!(),
                    Err(e) => return Err(StoreError::Corrupt { line: number, reason: e.to_string() }),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if file.metadata()?.len() != valid_len {
            file.set_len(valid_len)?;
        }
        Ok(Store { path: Some(path), state: RwLock::new(state), writer: Mutex::new(Some(file)) })
    }

    /// A store that keeps nothing on disk.
    pub fn memory() -> Store {
        Store { path: None, state: RwLock::new(State::default()), writer: Mutex::new(None) }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn commit(&self, event: Event) -> Result<Applied, StoreError> {
        let mut line = serde_json::to_string(&event).map_err(|e| StoreError::Io(e.into()))?;
        line.push('\n');
        // The writer lock is taken under the state lock so file order equals
        // apply order.
        let mut state = self.state.write();
        if let Some(file) = self.writer.lock().as_mut() {
            file.write_all(line.as_bytes())?;
        }
        Ok(state.apply(event))
    }

    pub fn record_error(&self, error: JsError, page_uuid: Option<String>) -> Result<ErrorRecord, StoreError> {
        error.validate()?;
        if let Some(uuid) = &page_uuid {
            check_page_uuid(uuid)?;
        }
        let mut error = error;
        error.page_url = canon(&error.page_url);
        if let Some(url) = error.failure_point.resource_url.take() {
            error.failure_point.resource_url = Some(canon(&url));
        }
        match self.commit(Event::Error { error, page_uuid })? {
            Applied::Error(record) => Ok(record),
            _ => unreachable!(),
        }
    }

    pub fn record_activation(&self, activation: StrategyActivation) -> Result<ActivationAck, StoreError> {
        activation.validate()?;
        {
            let state = self.state.read();
            let id = (activation.page_uuid.clone(), activation.strategy, activation.target_error.clone());
            if state.activation_ids.contains(&id) {
                return Ok(ActivationAck { stored: false, orphan: false });
            }
        }
        match self.commit(Event::Activation { activation })? {
            Applied::Activation(ack) => Ok(ack),
            _ => unreachable!(),
        }
    }

    pub fn record_load(&self, load: PageLoad) -> Result<(), StoreError> {
        check_page_uuid(&load.page_uuid)?;
        crate::model::normalize_http_url(&load.page_url)?;
        self.commit(Event::Load { load })?;
        Ok(())
    }

    /// Removes error records for one URL, or all of them.
    pub fn purge(&self, url: Option<&str>) -> Result<usize, StoreError> {
        match self.commit(Event::Purge { url: url.map(str::to_owned) })? {
            Applied::Other(n) => Ok(n),
            _ => unreachable!(),
        }
    }

    /// Errors whose page or failure-point resource is `url`.
    pub fn query_errors(&self, url: &str) -> Vec<JsError> {
        let Ok(url) = normalize_url(url) else { return Vec::new() };
        let state = self.state.read();
        state
            .by_url
            .get(&url)
            .map(|keys| keys.iter().filter_map(|k| state.errors.get(k)).map(|r| r.error.clone()).collect())
            .unwrap_or_default()
    }

    pub fn error_records(&self) -> Vec<ErrorRecord> {
        self.state.read().errors.values().cloned().collect()
    }

    pub fn activations(&self) -> Vec<ActivationRecord> {
        self.state.read().activations.clone()
    }

    pub fn load_count(&self) -> usize {
        self.state.read().loads.len()
    }

    /// Canonical rendering of the whole state, for comparing stores.
    pub fn snapshot(&self) -> String {
        serde_json::to_string(&*self.state.read()).expect("state serializes")
    }

    pub fn compute_stats(&self) -> Vec<EffectivenessStat> {
        let state = self.state.read();
        let mut groups: BTreeMap<(StrategyKind, String, String), Vec<&ActivationRecord>> = BTreeMap::new();
        for record in &state.activations {
            let a = &record.activation;
            let page = match state.loads.get(&a.page_uuid) {
                Some((_, load)) => load.page_url.clone(),
                None => a
                    .target_error
                    .parse::<ErrorKey>()
                    .ok()
                    .and_then(|k| state.errors.get(&k))
                    .map(|r| r.error.page_url.clone())
                    .unwrap_or_else(|| canon(&a.resource_url)),
            };
            groups.entry((a.strategy, page, a.target_error.clone())).or_default().push(record);
        }
        let mut out = Vec::new();
        for ((strategy, page_url, target), records) in groups {
            let start = records
                .iter()
                .map(|r| state.loads.get(&r.activation.page_uuid).map_or(r.seq, |(seq, _)| *seq))
                .min()
                .unwrap_or(0);
            let mut loads: BTreeSet<&str> = state
                .loads
                .values()
                .filter(|(seq, load)| *seq >= start && load.page_url == page_url)
                .map(|(_, load)| load.page_uuid.as_str())
                .collect();
            loads.extend(records.iter().map(|r| r.activation.page_uuid.as_str()));
            let recurrences = if target == DOCUMENT_WIDE {
                0
            } else {
                let key = target.parse::<ErrorKey>().ok();
                loads
                    .iter()
                    .filter(|uuid| {
                        key.as_ref().is_some_and(|k| state.reported.get(**uuid).is_some_and(|keys| keys.contains(k)))
                    })
                    .count() as u64
            };
            out.push(EffectivenessStat {
                strategy,
                page_url,
                target_error: target,
                activations: records.len() as u64,
                subsequent_loads: loads.len() as u64,
                loads_with_error_recurrence: recurrences,
            });
        }
        out
    }

    /// One sentence per statistic.
    pub fn summaries(&self, rules: &[LibraryRule]) -> Vec<String> {
        let stats = self.compute_stats();
        let state = self.state.read();
        stats
            .iter()
            .map(|s| {
                let message = s
                    .target_error
                    .parse::<ErrorKey>()
                    .ok()
                    .and_then(|k| state.errors.get(&k))
                    .map(|r| r.error.raw_message.clone())
                    .unwrap_or_else(|| s.target_error.clone());
                summary_line(s, &message, rules)
            })
            .collect()
    }
}

fn verb_phrase(strategy: StrategyKind, message: &str, rules: &[LibraryRule]) -> String {
    match strategy {
        StrategyKind::HttpsRedirector => "redirected HTTP resources to HTTPS".to_owned(),
        StrategyKind::LibraryInjector => {
            let library = rules.iter().find(|r| r.pattern.is_match(message)).map(|r| r.library_name.as_str());
            format!("injected {}", library.unwrap_or("a library"))
        }
        StrategyKind::HtmlElementCreator => "created a missing HTML element".to_owned(),
        StrategyKind::ObjectCreator => "created an empty object".to_owned(),
        StrategyKind::LineSkipper => "skipped a failing statement".to_owned(),
    }
}

/// `The strategy <name> has <verb-phrase> <N> times in the page <url> to handle the error <message>`.
pub fn summary_line(stat: &EffectivenessStat, message: &str, rules: &[LibraryRule]) -> String {
    format!(
        "The strategy {} has {} {} times in the page {} to handle the error {}",
        stat.strategy.display_name(),
        verb_phrase(stat.strategy, message, rules),
        stat.activations,
        stat.page_url,
        message
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intel::{build_error, default_rules};
    use chrono::TimeZone;

    fn at(sec: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 5, 1, 0, 0, sec).unwrap()
    }

    fn jquery_error() -> JsError {
        build_error("ReferenceError: jQuery is not defined\n    at http://shop.test/app.js:3:1", "http://shop.test/gallery.html", at(0))
            .unwrap()
    }

    fn uuid(n: u32) -> String {
        format!("00000000-0000-4000-8000-{n:012}")
    }

    #[test]
    fn upsert_counts_observations() {
        let store = Store::memory();
        let first = store.record_error(jquery_error(), None).unwrap();
        assert_eq!(first.count, 1);
        let mut again = jquery_error();
        again.observed_at = at(30);
        let second = store.record_error(again, None).unwrap();
        assert_eq!(second.count, 2);
        assert_eq!(store.error_records().len(), 1);
        let mut bad = jquery_error();
        bad.page_url = String::new();
        assert!(matches!(store.record_error(bad, None), Err(StoreError::Invalid(_))));
    }

    #[test]
    fn query_by_page_or_resource_canonicalizes() {
        let store = Store::memory();
        assert!(store.query_errors("http://shop.test/gallery.html").is_empty());
        store.record_error(jquery_error(), None).unwrap();
        assert_eq!(store.query_errors("HTTP://SHOP.test:80/gallery.html#x").len(), 1);
        assert_eq!(store.query_errors("http://shop.test/app.js").len(), 1);
        assert!(store.query_errors("http://shop.test/other").is_empty());
        assert!(store.query_errors("not a url").is_empty());
    }

    fn activation(n: u32, strategy: StrategyKind, target: &str) -> StrategyActivation {
        StrategyActivation {
            page_uuid: uuid(n),
            strategy,
            target_error: target.to_owned(),
            resource_url: "http://shop.test/gallery.html".into(),
            occurred_at: at(n),
        }
    }

    #[test]
    fn activations_dedup_and_flag_orphans() {
        let store = Store::memory();
        let key = jquery_error().key().to_string();
        let ack = store.record_activation(activation(1, StrategyKind::LibraryInjector, &key)).unwrap();
        assert_eq!(ack, ActivationAck { stored: true, orphan: true });
        let ack = store.record_activation(activation(1, StrategyKind::LibraryInjector, &key)).unwrap();
        assert!(!ack.stored);
        store
            .record_load(PageLoad { page_uuid: uuid(2), page_url: "http://shop.test/gallery.html".into(), served_at: at(2), expected: vec![] })
            .unwrap();
        let ack = store.record_activation(activation(2, StrategyKind::LibraryInjector, &key)).unwrap();
        assert_eq!(ack, ActivationAck { stored: true, orphan: false });
        assert_eq!(store.activations().len(), 2);
    }

    #[test]
    fn stats_count_loads_and_recurrence() {
        let store = Store::memory();
        let error = jquery_error();
        let key = error.key().to_string();
        store.record_error(error.clone(), Some(uuid(100))).unwrap();
        for n in 1..=5 {
            store
                .record_load(PageLoad {
                    page_uuid: uuid(n),
                    page_url: "http://shop.test/gallery.html".into(),
                    served_at: at(n),
                    expected: vec![],
                })
                .unwrap();
            if n <= 3 {
                store.record_activation(activation(n, StrategyKind::LibraryInjector, &key)).unwrap();
            }
            if n == 4 {
                store.record_error(error.clone(), Some(uuid(n))).unwrap();
            }
        }
        let stats = store.compute_stats();
        assert_eq!(stats.len(), 1);
        let s = &stats[0];
        assert_eq!((s.activations, s.subsequent_loads, s.loads_with_error_recurrence), (3, 5, 1));
        let lines = store.summaries(&default_rules());
        assert_eq!(
            lines,
            vec!["The strategy Library Injector has injected jQuery 3 times in the page http://shop.test/gallery.html to handle the error ReferenceError: jQuery is not defined"]
        );
        assert!(Store::memory().compute_stats().is_empty());
    }

    #[test]
    fn restart_replays_identically_and_purge_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let store = Store::open(&path).unwrap();
        store.record_error(jquery_error(), Some(uuid(1))).unwrap();
        store.record_activation(activation(1, StrategyKind::LibraryInjector, "*")).unwrap();
        let before = store.snapshot();
        let bytes = std::fs::read(&path).unwrap();
        drop(store);
        let reopened = Store::open(&path).unwrap();
        assert_eq!(reopened.snapshot(), before);
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(reopened.purge(Some("http://shop.test/app.js")).unwrap(), 1);
        drop(reopened);
        assert!(Store::open(&path).unwrap().error_records().is_empty());
    }

    #[test]
    fn torn_tail_is_dropped_but_garbage_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let store = Store::open(&path).unwrap();
        store.record_error(jquery_error(), None).unwrap();
        drop(store);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"kind\":\"err").unwrap();
        drop(f);
        let store = Store::open(&path).unwrap();
        assert_eq!(store.error_records().len(), 1);
        store.record_error(jquery_error(), None).unwrap();
        drop(store);
        assert_eq!(Store::open(&path).unwrap().error_records()[0].count, 2);
        std::fs::write(&path, "nonsense\n").unwrap();
        assert!(matches!(Store::open(&path), Err(StoreError::Corrupt { line: 1, .. })));
    }
}
