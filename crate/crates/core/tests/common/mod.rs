#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use incov::harness::{generate_history, HistoryParams};
use incov::model::{CoverageData, DependencyGraph, Snapshot, UnitId};
use proptest::prelude::*;

/// Small valid snapshots, produced by the history generator.
pub fn snapshot() -> impl Strategy<Value = Snapshot> {
    (any::<u64>(), 2usize..16, 1usize..6, 1usize..4).prop_map(|(seed, units, tests, versions)| {
        let params = HistoryParams {
            units,
            tests,
            versions,
            edit_rate: 0.3,
            add_rate: 0.05,
            delete_rate: 0.05,
            branch_flip_rate: 0.2,
        };
        generate_history(seed, &params)
            .expect("valid params")
            .pop()
            .expect("non-empty history")
    })
}

pub fn unit_id() -> impl Strategy<Value = UnitId> {
    (0u8..10).prop_map(|i| UnitId::new(format!("u{i}")))
}

pub fn test_id() -> impl Strategy<Value = UnitId> {
    (0u8..8).prop_map(|i| UnitId::new(format!("t{i}")))
}

pub fn unit_set() -> impl Strategy<Value = BTreeSet<UnitId>> {
    prop::collection::btree_set(prop_oneof![unit_id(), test_id()], 0..8)
}

pub fn test_set() -> impl Strategy<Value = BTreeSet<UnitId>> {
    prop::collection::btree_set(test_id(), 0..8)
}

pub fn coverage() -> impl Strategy<Value = CoverageData> {
    prop::collection::btree_map(unit_id(), prop::collection::btree_set(0u32..12, 0..6), 0..8)
        .prop_map(CoverageData::from_map)
}

pub fn graph() -> impl Strategy<Value = DependencyGraph> {
    prop::collection::btree_map(
        test_id(),
        prop::collection::btree_set(unit_id(), 0..5),
        0..8,
    )
    .prop_map(|edges: BTreeMap<UnitId, BTreeSet<UnitId>>| {
        let mut g = DependencyGraph::new();
        for (t, deps) in edges {
            g.insert(t, deps);
        }
        g
    })
}
