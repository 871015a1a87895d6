use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use selfheal_core::intel::build_error;
use selfheal_core::model::{JsError, StrategyActivation, StrategyKind};
use selfheal_core::store::{PageLoad, Store};

#[derive(Debug, Clone)]
enum Op {
    Error { page: u8, ident: u8, uuid: Option<u8> },
    Activation { uuid: u8, ident: u8 },
    Load { uuid: u8, page: u8 },
    Purge(Option<u8>),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (0u8..3, 0u8..4, proptest::option::of(0u8..3)).prop_map(|(page, ident, uuid)| Op::Error { page, ident, uuid }),
        3 => (0u8..3, 0u8..4).prop_map(|(uuid, ident)| Op::Activation { uuid, ident }),
        2 => (0u8..3, 0u8..3).prop_map(|(uuid, page)| Op::Load { uuid, page }),
        1 => proptest::option::of(0u8..3).prop_map(Op::Purge),
    ]
}

fn uuid(n: u8) -> String {
    uuid::Builder::from_random_bytes([n + 1; 16]).into_uuid().to_string()
}

fn page(n: u8) -> String {
    format!("http://p{n}.test/")
}

fn error(page_n: u8, ident: u8, t: i64) -> JsError {
    let mut e = build_error(
        &format!("Uncaught ReferenceError: v{ident} is not defined"),
        &page(page_n),
        Utc.timestamp_opt(1_700_000_000 + t, 0).unwrap(),
    )
    .unwrap();
    e.failure_point.resource_url = Some(format!("{}app.js", page(page_n)));
    e.failure_point.line = 1 + u32::from(ident);
    e
}

fn apply(store: &Store, ops: &[Op]) {
    for (t, op) in ops.iter().enumerate() {
        match op {
            Op::Error { page, ident, uuid: u } => {
                store.record_error(error(*page, *ident, t as i64), u.map(uuid)).unwrap();
            }
            Op::Activation { uuid: u, ident } => {
                let key = error(0, *ident, 0).key().to_string();
                store
                    .record_activation(StrategyActivation {
                        page_uuid: uuid(*u),
                        strategy: StrategyKind::LineSkipper,
                        target_error: key,
                        resource_url: page(0),
                        occurred_at: Utc.timestamp_opt(1_700_000_000 + t as i64, 0).unwrap(),
                    })
                    .unwrap();
            }
            Op::Load { uuid: u, page: p } => {
                store
                    .record_load(PageLoad { page_uuid: uuid(*u), page_url: page(*p), served_at: Utc.timestamp_opt(1_700_000_000, 0).unwrap(), expected: vec![] })
                    .unwrap();
            }
            Op::Purge(p) => {
                store.purge(p.map(page).as_deref()).unwrap();
            }
        }
    }
}

/// Error counts and distinct activations, computed from the operations alone.
fn model(ops: &[Op]) -> (BTreeMap<(u8, u8), u64>, usize) {
    let mut counts = BTreeMap::new();
    let mut activations = BTreeSet::new();
    for op in ops {
        match op {
            Op::Error { page, ident, .. } => *counts.entry((*page, *ident)).or_insert(0) += 1,
            Op::Activation { uuid, ident } => {
                activations.insert((*uuid, *ident));
            }
            Op::Load { .. } => {}
            Op::Purge(None) => counts.clear(),
            Op::Purge(Some(p)) => counts.retain(|(page, _), _| page != p),
        }
    }
    (counts, activations.len())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_reproduces_state(ops in prop::collection::vec(op(), 0..60)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let store = Store::open(&path).unwrap();
        apply(&store, &ops);

        let (counts, activations) = model(&ops);
        let records = store.error_records();
        prop_assert_eq!(records.len(), counts.len());
        for r in &records {
            let ident: u8 = r.error.identifier.as_deref().unwrap()[1..].parse().unwrap();
            let page_n: u8 = r.error.page_url[8..9].parse().unwrap();
            prop_assert_eq!(r.count, counts[&(page_n, ident)]);
        }
        prop_assert_eq!(store.activations().len(), activations);

        let snapshot = store.snapshot();
        drop(store);
        let reopened = Store::open(&path).unwrap();
        prop_assert_eq!(reopened.snapshot(), snapshot.clone());

        let memory = Store::memory();
        apply(&memory, &ops);
        prop_assert_eq!(memory.snapshot(), snapshot);
    }
}

#[test]
fn torn_tail_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    let store = Store::open(&path).unwrap();
    apply(&store, &[Op::Error { page: 0, ident: 1, uuid: None }, Op::Error { page: 1, ident: 2, uuid: Some(0) }]);
    let snapshot = store.snapshot();
    let intact = std::fs::read(&path).unwrap();
    drop(store);
    std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"kind\":\"error\",\"err").unwrap();
    let reopened = Store::open(&path).unwrap();
    assert_eq!(reopened.snapshot(), snapshot);
    assert_eq!(std::fs::read(&path).unwrap(), intact);
}

#[test]
fn corrupt_middle_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    std::fs::write(&path, "not json\n{}\n").unwrap();
    assert!(Store::open(&path).is_err());
}
