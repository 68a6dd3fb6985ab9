//! Hand-crafted version histories, each checked against the retest-all oracle
//! at every step.

use std::collections::BTreeSet;
use std::path::Path;

use incov::harness::{
    replay, run_full, run_incremental, verify_equivalence, Equivalence, ReplayOptions, RunOptions,
};
use incov::miniproj::{load_project, parse_project};
use incov::model::{Snapshot, UnitId};

fn fixture(name: &str) -> Snapshot {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    load_project(&path).unwrap()
}

fn ids(xs: &[&str]) -> BTreeSet<UnitId> {
    xs.iter().map(|s| UnitId::from(*s)).collect()
}

/// Replays `versions` and asserts oracle equality at every step.
fn check_history(versions: &[Snapshot]) -> Vec<incov::harness::RunResult> {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions::default();
    versions
        .iter()
        .map(|s| {
            let run = run_incremental(dir.path(), s, &opts).unwrap();
            let full = run_full(s, &opts).unwrap();
            assert_eq!(
                verify_equivalence(&run.coverage, &full.coverage),
                Equivalence::Equal,
                "version {}",
                s.version_id
            );
            assert_eq!(run.report, full.report, "version {}", s.version_id);
            assert_eq!(run.graph, full.graph, "graph at {}", s.version_id);
            run
        })
        .collect()
}

fn project(version: &str, body: &str) -> Snapshot {
    parse_project(&format!("version {version}\n{body}")).unwrap()
}

#[test]
fn example_change_a_drops_c1_line_3() {
    let runs = check_history(&[
        fixture("example/original.proj"),
        fixture("example/change_a.proj"),
    ]);
    let second = &runs[1];
    assert_eq!(second.selection.rts_selected, ids(&["t2"]));
    assert_eq!(second.selection.affected_units, ids(&["c1", "c2", "t2"]));
    assert_eq!(second.selection.final_selected, ids(&["t1", "t2"]));
    assert_eq!(second.executed_tests, 2);
    let c1_lines = &second.report.covered_line_map[&UnitId::from("c1")];
    assert_eq!(c1_lines, &BTreeSet::from([2]));
}

#[test]
fn example_change_b_merges_c3() {
    let runs = check_history(&[
        fixture("example/original.proj"),
        fixture("example/change_b.proj"),
    ]);
    let second = &runs[1];
    assert_eq!(second.changeset.modified, ids(&["c1"]));
    assert_eq!(second.selection.final_selected, ids(&["t1", "t2"]));
    assert!(!second
        .selection
        .affected_units
        .contains(&UnitId::from("c3")));
    assert_eq!(
        second.report.covered_line_map[&UnitId::from("c3")],
        BTreeSet::from([2, 3])
    );
    assert_eq!(
        second.graph.get(&"t1".into()).unwrap(),
        &ids(&["c1", "c3", "t1"])
    );
    assert_eq!(
        second.graph.get(&"t3".into()),
        runs[0].graph.get(&"t3".into())
    );
}

#[test]
fn first_version_selects_everything_and_no_change_selects_nothing() {
    let v1 = fixture("example/original.proj");
    let mut v2 = v1.clone();
    v2.version_id = "example-again".into();
    let runs = check_history(&[v1, v2]);
    assert!(runs[0].first_version);
    assert_eq!(runs[0].selection_rate, 1.0);
    assert_eq!(runs[1].selection_rate, 0.0);
    assert_eq!(runs[1].executed_tests, 0);
    assert_eq!(runs[1].report, runs[0].report);
}

const BASE: &str = "\
cond fast = true
unit a
fn f:
  line 1
  if fast {
    line 2
    call b.f
  } else {
    line 4
  }
unit b
fn f:
  line 1
unit c
fn f:
  line 1
unit t1 test
fn t:
  line 1
  call a.f
unit t2 test
fn t:
  line 1
  call c.f
";

#[test]
fn condition_flip_decreases_coverage() {
    let flipped = BASE.replace("cond fast = true", "cond fast = false");
    let runs = check_history(&[project("v1", BASE), project("v2", &flipped)]);
    assert_eq!(runs[1].changeset.modified, ids(&["a"]));
    assert!(!runs[1]
        .report
        .covered_line_map
        .contains_key(&UnitId::from("b")));
}

#[test]
fn added_dependency_increases_coverage() {
    let grown = BASE.replace(
        "unit c\nfn f:\n  line 1\n",
        "unit c\nfn f:\n  line 1\n  call b.f\n",
    );
    let runs = check_history(&[project("v1", BASE), project("v2", &grown)]);
    assert_eq!(runs[1].selection.rts_selected, ids(&["t2"]));
}

#[test]
fn comment_only_edit_selects_nothing() {
    let commented = BASE.replace("unit b\n", "unit b\n# reworded\n");
    let runs = check_history(&[project("v1", BASE), project("v2", &commented)]);
    assert!(runs[1].changeset.is_empty());
    assert_eq!(runs[1].executed_tests, 0);
}

#[test]
fn added_test_is_selected() {
    let more = format!("{BASE}unit t3 test\nfn t:\n  line 1\n  call b.f\n");
    let runs = check_history(&[project("v1", BASE), project("v2", &more)]);
    assert!(runs[1].selection.rts_selected.contains(&UnitId::from("t3")));
}

#[test]
fn deleted_test_takes_its_coverage_with_it() {
    let fewer = BASE.replace("unit t2 test\nfn t:\n  line 1\n  call c.f\n", "");
    let runs = check_history(&[project("v1", BASE), project("v2", &fewer)]);
    assert!(!runs[1]
        .report
        .covered_line_map
        .contains_key(&UnitId::from("c")));
    assert!(!runs[1].graph.contains_test(&"t2".into()));
}

#[test]
fn deleted_unit_is_purged() {
    let fewer = BASE
        .replace("unit c\nfn f:\n  line 1\n", "")
        .replace("  line 1\n  call c.f\n", "  line 1\n");
    let runs = check_history(&[project("v1", BASE), project("v2", &fewer)]);
    assert!(runs[1].changeset.removed.contains(&UnitId::from("c")));
    assert!(runs[1].coverage.get(&"c".into()).is_none());
}

#[test]
fn changed_unit_without_dependents_is_rebuilt() {
    // `b` is unreachable in v2's test suite, then edited in v3: its stale
    // probe ids must not survive.
    let v2 = BASE.replace("cond fast = true", "cond fast = false");
    let v3 = v2.replace(
        "unit b\nfn f:\n  line 1\n",
        "unit b\nfn f:\n  line 1\n  if fast {\n    line 2\n  }\n",
    );
    check_history(&[project("v1", BASE), project("v2", &v2), project("v3", &v3)]);
}

#[test]
fn second_expansion_round_is_unnecessary() {
    // t1 and t3 share `a`; t3 and t4 share `d`. Editing t1 reruns t3 to
    // rebuild `a`, but `d` stays valid, so t4 is not rerun.
    let base = "\
unit a
fn f:
  line 1
unit d
fn f:
  line 1
unit t1 test
fn t:
  line 1
  call a.f
unit t3 test
fn t:
  line 1
  call a.f
  call d.f
unit t4 test
fn t:
  line 1
  call d.f
";
    let edited = base.replace(
        "unit t1 test\nfn t:\n  line 1\n",
        "unit t1 test\nfn t:\n  line 2\n",
    );
    let runs = check_history(&[project("v1", base), project("v2", &edited)]);
    assert_eq!(runs[1].selection.final_selected, ids(&["t1", "t3"]));
}

#[test]
fn test_flag_change_is_handled() {
    let demoted = BASE.replace("unit t2 test\n", "unit t2\n");
    let promoted = BASE.replace("unit c\n", "unit c test\n");
    check_history(&[
        project("v1", BASE),
        project("v2", &demoted),
        project("v3", BASE),
        project("v4", &promoted),
    ]);
}

#[test]
fn failing_test_keeps_partial_coverage_across_versions() {
    let base = "\
cond deep = false
unit r
fn f:
  line 1
  if deep {
    call r.f
  }
  line 3
unit t1 test
fn t:
  line 1
  call r.f
";
    let deep = base.replace("cond deep = false", "cond deep = true");
    let runs = check_history(&[
        project("v1", base),
        project("v2", &deep),
        project("v3", base),
    ]);
    assert_eq!(runs[1].failed_tests, 1);
    assert_eq!(runs[2].failed_tests, 0);
}

#[test]
fn replay_of_one_version_summarizes_that_version() {
    let dir = tempfile::tempdir().unwrap();
    let v = fixture("example/original.proj");
    let out = replay(
        std::slice::from_ref(&v),
        dir.path(),
        &ReplayOptions {
            verify: true,
            ..ReplayOptions::default()
        },
    )
    .unwrap();
    assert_eq!(out.summary.versions, 1);
    assert_eq!(
        out.summary.mean_selection_rate,
        out.rows[0].run.selection_rate
    );
    assert_eq!(out.summary.all_equivalent, Some(true));
}
