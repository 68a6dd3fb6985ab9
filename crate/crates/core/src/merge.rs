//! Collection phase: fold execution deltas into the persisted graph and coverage.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{ChangeSet, CoverageData, DependencyGraph, SelectionResult, TestId, UnitId};

/// Selected tests take their fresh edges wholesale; unselected tests keep
/// their old ones; tests that no longer exist are dropped.
pub fn merge_dependency_graph(
    g: &DependencyGraph,
    delta: &DependencyGraph,
    selected: &BTreeSet<TestId>,
    current_tests: &BTreeSet<TestId>,
) -> Result<DependencyGraph> {
    if let Some(t) = delta.edges.keys().find(|t| !selected.contains(*t)) {
        return Err(Error::DeltaMismatch(t.clone()));
    }
    let mut out = DependencyGraph::new();
    for (t, deps) in &g.edges {
        if !selected.contains(t) && current_tests.contains(t) {
            out.edges.insert(t.clone(), deps.clone());
        }
    }
    for (t, deps) in &delta.edges {
        if current_tests.contains(t) {
            out.edges.insert(t.clone(), deps.clone());
        }
    }
    Ok(out)
}

/// Affected units take only the fresh delta; every other unit takes the union
/// of old and fresh probes. Units outside `current_units` are purged.
pub fn merge_coverage(
    d: &CoverageData,
    delta: &CoverageData,
    affected: &BTreeSet<UnitId>,
    current_units: &BTreeSet<UnitId>,
) -> CoverageData {
    let mut out = CoverageData::new();
    for (u, probes) in d.iter() {
        if !affected.contains(u) && current_units.contains(u) {
            out.set_unit(u.clone(), probes.clone());
        }
    }
    for (u, probes) in delta.iter() {
        if !current_units.contains(u) {
            continue;
        }
        let mut merged = out.get(u).cloned().unwrap_or_default();
        merged.extend(probes);
        out.set_unit(u.clone(), merged);
    }
    out
}

/// Units whose old coverage is discarded: the selection's affected units
/// widened by the changeset itself, so a changed unit that no test depended
/// on can never keep probe ids from its previous layout.
pub fn overwrite_set(selection: &SelectionResult, cs: &ChangeSet) -> BTreeSet<UnitId> {
    selection
        .affected_units
        .iter()
        .chain(&cs.modified)
        .chain(&cs.added)
        .cloned()
        .collect()
}
