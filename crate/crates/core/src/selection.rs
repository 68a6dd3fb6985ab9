//! Analysis phase: which tests must run so the merged coverage equals a full rerun.
//!
//! Plain regression test selection picks the tests whose recorded
//! dependencies intersect the changeset. That is enough for pass/fail
//! verdicts but not for coverage: every unit those tests touched may lose
//! or gain probes, so its old coverage is discarded and every test that
//! touched it has to run again to rebuild it. The dependency graph already
//! holds transitive dependencies, so both steps are single set-intersection
//! passes.

use std::collections::BTreeSet;

use crate::changedet::compute_changeset;
use crate::error::{Error, Result};
use crate::model::{ChangeSet, DependencyGraph, SelectionResult, Snapshot, TestId, UnitId};

/// Tests whose behavior may differ: dependents of a modified or removed
/// unit, tests new since the old version, and tests the graph has never seen.
pub fn select_rts(
    g: &DependencyGraph,
    cs: &ChangeSet,
    old_tests: &BTreeSet<TestId>,
    new_tests: &BTreeSet<TestId>,
) -> BTreeSet<TestId> {
    let invalidated = cs.invalidated();
    new_tests
        .iter()
        .filter(|t| match g.get(t) {
            None => true,
            Some(deps) => !old_tests.contains(*t) || !deps.is_disjoint(&invalidated),
        })
        .cloned()
        .collect()
}

/// Units whose coverage can change when `tests` run again.
pub fn affected_units<'a>(
    g: &DependencyGraph,
    tests: impl IntoIterator<Item = &'a TestId>,
) -> BTreeSet<UnitId> {
    tests
        .into_iter()
        .filter_map(|t| g.get(t))
        .flat_map(|deps| deps.iter().cloned())
        .collect()
}

/// Every test that touched an affected unit, plus tests with no graph entry yet.
pub fn expand_selection(
    g: &DependencyGraph,
    affected: &BTreeSet<UnitId>,
    new_tests: &BTreeSet<TestId>,
) -> BTreeSet<TestId> {
    g.edges
        .iter()
        .filter(|(_, deps)| !deps.is_disjoint(affected))
        .map(|(t, _)| t.clone())
        .chain(new_tests.iter().cloned())
        .collect()
}

/// Selection when nothing is known about the previous version.
pub fn select_all(new: &Snapshot) -> SelectionResult {
    SelectionResult {
        rts_selected: new.tests.clone(),
        affected_units: new.unit_ids(),
        final_selected: new.tests.clone(),
    }
}

/// Composes the three selection steps for a known changeset.
///
/// Tests that disappeared from the new version also invalidate the units
/// they touched: without them those units might have lost coverage.
pub fn analyze_changeset(g: &DependencyGraph, cs: &ChangeSet, new: &Snapshot) -> SelectionResult {
    if g.is_empty() {
        return select_all(new);
    }
    let old_tests = g.tests();
    let rts_selected = select_rts(g, cs, &old_tests, &new.tests);
    let removed_tests: BTreeSet<TestId> = old_tests.difference(&new.tests).cloned().collect();
    let affected_units: BTreeSet<UnitId> =
        affected_units(g, rts_selected.iter().chain(&removed_tests))
            .into_iter()
            .filter(|u| new.units.contains_key(u))
            .collect();
    let fresh: BTreeSet<TestId> = new.tests.difference(&old_tests).cloned().collect();
    let final_selected = expand_selection(g, &affected_units, &fresh)
        .into_iter()
        .filter(|t| new.tests.contains(t))
        .collect();
    SelectionResult {
        rts_selected,
        affected_units,
        final_selected,
    }
}

/// Full analysis from two snapshots. An empty graph means first version:
/// every test runs and every unit is rebuilt.
pub fn analyze(g: &DependencyGraph, old: &Snapshot, new: &Snapshot) -> Result<SelectionResult> {
    for s in [old, new] {
        let violations = s.validate();
        if !violations.is_empty() {
            return Err(Error::SnapshotInvalid {
                version: s.version_id.clone(),
                violations,
            });
        }
    }
    if g.is_empty() {
        return Ok(select_all(new));
    }
    Ok(analyze_changeset(g, &compute_changeset(old, new), new))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[&str]) -> BTreeSet<UnitId> {
        ids.iter().map(|s| UnitId::from(*s)).collect()
    }

    fn example_graph() -> DependencyGraph {
        let mut g = DependencyGraph::new();
        g.insert("t1".into(), set(&["c1"]));
        g.insert("t2".into(), set(&["c1", "c2"]));
        g.insert("t3".into(), set(&["c3"]));
        g
    }

    fn changeset(modified: &[&str]) -> ChangeSet {
        ChangeSet {
            modified: set(modified),
            ..ChangeSet::default()
        }
    }

    /// Brute-force oracle: test every (test, unit) pair explicitly.
    fn brute_rts(g: &DependencyGraph, changed: &[&str]) -> BTreeSet<UnitId> {
        let mut out = BTreeSet::new();
        for (t, deps) in &g.edges {
            for d in deps {
                for c in changed {
                    if d.as_str() == *c {
                        out.insert(t.clone());
                    }
                }
            }
        }
        out
    }

    #[test]
    fn rts_on_modified_c2_selects_t2() {
        let g = example_graph();
        let tests = set(&["t1", "t2", "t3"]);
        assert_eq!(
            select_rts(&g, &changeset(&["c2"]), &tests, &tests),
            set(&["t2"])
        );
    }

    #[test]
    fn rts_on_empty_changeset_selects_nothing() {
        let g = example_graph();
        let tests = set(&["t1", "t2", "t3"]);
        assert!(select_rts(&g, &ChangeSet::default(), &tests, &tests).is_empty());
    }

    #[test]
    fn rts_on_modified_c1_matches_brute_force() {
        let g = example_graph();
        let tests = set(&["t1", "t2", "t3"]);
        let expected = brute_rts(&g, &["c1"]);
        assert_eq!(expected, set(&["t1", "t2"]));
        assert_eq!(
            select_rts(&g, &changeset(&["c1"]), &tests, &tests),
            expected
        );
    }

    #[test]
    fn rts_includes_added_and_unanalyzed_tests() {
        let g = example_graph();
        let old = set(&["t1", "t2", "t3", "t5"]);
        let new = set(&["t1", "t2", "t3", "t4", "t5"]);
        // t4 is new; t5 existed but has no graph entry.
        assert_eq!(
            select_rts(&g, &ChangeSet::default(), &old, &new),
            set(&["t4", "t5"])
        );
    }

    #[test]
    fn rts_selects_dependents_of_removed_units() {
        let g = example_graph();
        let tests = set(&["t1", "t2", "t3"]);
        let cs = ChangeSet {
            removed: set(&["c3"]),
            ..ChangeSet::default()
        };
        assert_eq!(select_rts(&g, &cs, &tests, &tests), set(&["t3"]));
    }

    #[test]
    fn affected_units_is_union_of_edges() {
        let g = example_graph();
        assert_eq!(affected_units(&g, &set(&["t2"])), set(&["c1", "c2", "t2"]));
        assert!(affected_units(&g, &BTreeSet::new()).is_empty());
        assert_eq!(
            affected_units(&g, &set(&["t1", "t2"])),
            set(&["c1", "c2", "t1", "t2"])
        );
    }

    #[test]
    fn expansion_recovers_the_closure() {
        let g = example_graph();
        let none = BTreeSet::new();
        assert_eq!(
            expand_selection(&g, &set(&["c1", "c2", "t2"]), &none),
            set(&["t1", "t2"])
        );
        assert!(expand_selection(&g, &BTreeSet::new(), &none).is_empty());
        assert_eq!(expand_selection(&g, &set(&["c3"]), &none), set(&["t3"]));
    }

    #[test]
    fn second_expansion_round_can_grow_but_is_not_needed() {
        // t4 shares c2 with t2 but not c1. Changing t1 invalidates c1, so t2
        // reruns; t2's other dependency c2 is not invalidated, so t4 stays out.
        let mut g = example_graph();
        g.insert("t4".into(), set(&["c2"]));
        let rts = set(&["t1"]);
        let affected = affected_units(&g, &rts);
        let final_sel = expand_selection(&g, &affected, &BTreeSet::new());
        assert_eq!(final_sel, set(&["t1", "t2"]));
        let again = expand_selection(&g, &affected_units(&g, &final_sel), &BTreeSet::new());
        assert_eq!(again, set(&["t1", "t2", "t4"]));
    }
}
