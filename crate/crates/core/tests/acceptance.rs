//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use incov::changedet::{compute_changeset, normalized_encoding};
use incov::harness::{
    generate_history, replay, run_incremental, HistoryParams, Replay, ReplayOptions, RunOptions,
};
use incov::merge::{merge_coverage, merge_dependency_graph};
use incov::miniproj::{execute_tests, load_project};
use incov::model::{CoverageData, DependencyGraph, Snapshot, UnitId};
use incov::report::compute_report;
use incov::store::{load_state, STORE_FILE};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use common::*;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;
const PROPERTY_CASES: u32 = 1000;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_incov")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn ids(xs: &[&str]) -> BTreeSet<UnitId> {
    xs.iter().map(|s| UnitId::from(*s)).collect()
}

fn verify_opts() -> ReplayOptions {
    ReplayOptions {
        verify: true,
        ..ReplayOptions::default()
    }
}

fn load_history(dir: &Path) -> Vec<Snapshot> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "proj"))
        .collect();
    files.sort();
    files.iter().map(|p| load_project(p).unwrap()).collect()
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn first_mismatch(r: &Replay) -> Option<String> {
    r.rows.iter().find_map(|row| {
        let ok = row.is_equivalent() == Some(true) && row.report_matches == Some(true);
        (!ok).then(|| format!("version {} differs from the oracle", row.run.version_id))
    })
}

/// Seeded default-size histories, replayed once and shared between criteria.
fn seeded_replays() -> &'static Vec<(u64, Replay)> {
    static CELL: OnceLock<Vec<(u64, Replay)>> = OnceLock::new();
    CELL.get_or_init(|| {
        std::thread::scope(|scope| {
            let handles: Vec<_> = SEEDS
                .map(|seed| {
                    scope.spawn(move || {
                        let history = generate_history(seed, &HistoryParams::default()).unwrap();
                        let dir = tempfile::tempdir().unwrap();
                        (seed, replay(&history, dir.path(), &verify_opts()).unwrap())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    })
}

fn oracle_equality() -> Outcome {
    let started = Instant::now();
    let mut versions = 0;
    for (seed, r) in seeded_replays() {
        if let Some(m) = first_mismatch(r) {
            return Err(format!("seed {seed}: {m}"));
        }
        versions += r.rows.len();
    }
    let mut hand = 0;
    let histories = fixtures().join("histories");
    let mut dirs: Vec<PathBuf> = fs::read_dir(&histories)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    dirs.sort();
    let example = fixtures().join("example");
    let mut sequences: Vec<(String, Vec<Snapshot>)> = dirs
        .iter()
        .map(|d| {
            (
                d.file_name().unwrap().to_string_lossy().into_owned(),
                load_history(d),
            )
        })
        .collect();
    for change in ["change_a", "change_b"] {
        let seq = vec![
            load_project(&example.join("original.proj")).unwrap(),
            load_project(&example.join(format!("{change}.proj"))).unwrap(),
        ];
        sequences.push((format!("example/{change}"), seq));
    }
    for (name, seq) in &sequences {
        let dir = tempfile::tempdir().unwrap();
        let r = replay(seq, dir.path(), &verify_opts()).unwrap();
        if let Some(m) = first_mismatch(&r) {
            return Err(format!("{name}: {m}"));
        }
        hand += seq.len();
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(120), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{} seeded histories ({versions} versions) and {} hand-crafted histories ({hand} versions) equal the oracle in {:.1?}",
        SEEDS.count(),
        sequences.len(),
        elapsed
    ))
}

fn example_projects(change: &str) -> Replay {
    let example = fixtures().join("example");
    let seq = [
        load_project(&example.join("original.proj")).unwrap(),
        load_project(&example.join(format!("{change}.proj"))).unwrap(),
    ];
    let dir = tempfile::tempdir().unwrap();
    replay(&seq, dir.path(), &verify_opts()).unwrap()
}

fn example_change_a() -> Outcome {
    let r = example_projects("change_a");
    let run = &r.rows[1].run;
    check(run.selection.rts_selected == ids(&["t2"]), || {
        format!("rts selected {:?}", run.selection.rts_selected)
    })?;
    check(run.selection.final_selected == ids(&["t1", "t2"]), || {
        format!("final selected {:?}", run.selection.final_selected)
    })?;
    let c1 = run
        .report
        .covered_line_map
        .get(&UnitId::from("c1"))
        .cloned()
        .unwrap_or_default();
    check(!c1.contains(&3), || format!("c1 covered lines {c1:?}"))?;
    check(r.rows[1].is_equivalent() == Some(true), || {
        "differs from the oracle".into()
    })?;
    Ok(format!("rts {{t2}}, final {{t1, t2}}, c1 lines {c1:?}"))
}

fn example_change_b() -> Outcome {
    let r = example_projects("change_b");
    let run = &r.rows[1].run;
    let c3 = run
        .report
        .covered_line_map
        .get(&UnitId::from("c3"))
        .cloned()
        .unwrap_or_default();
    check(c3 == BTreeSet::from([2, 3]), || {
        format!("c3 covered lines {c3:?}")
    })?;
    check(r.rows[1].is_equivalent() == Some(true), || {
        "differs from the oracle".into()
    })?;
    let fin: Vec<&str> = run
        .selection
        .final_selected
        .iter()
        .map(|t| t.as_str())
        .collect();
    Ok(format!(
        "c3 lines {c3:?} after the merge, final {{{}}}",
        fin.join(", ")
    ))
}

fn selection_rates() -> Outcome {
    let mut ratios = Vec::new();
    for (seed, r) in seeded_replays() {
        for row in &r.rows {
            let sel = &row.run.selection;
            check(sel.rts_selected.is_subset(&sel.final_selected), || {
                format!(
                    "seed {seed} version {}: rts not within final",
                    row.run.version_id
                )
            })?;
        }
        let s = &r.summary;
        check(s.mean_selection_rate >= s.mean_rts_rate, || {
            format!(
                "seed {seed}: mean selection {} < rts {}",
                s.mean_selection_rate, s.mean_rts_rate
            )
        })?;
        if s.mean_rts_rate > 0.0 {
            ratios.push(s.mean_selection_rate / s.mean_rts_rate);
        }
    }
    let mut low = Vec::new();
    for seed in 1..=4 {
        let history = generate_history(seed, &HistoryParams::low_churn()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let r = replay(&history, dir.path(), &verify_opts()).unwrap();
        if let Some(m) = first_mismatch(&r) {
            return Err(format!("low-churn seed {seed}: {m}"));
        }
        check(r.summary.mean_selection_rate < 1.0, || {
            format!(
                "low-churn seed {seed}: mean selection rate {}",
                r.summary.mean_selection_rate
            )
        })?;
        low.push((r.summary.mean_selection_rate, r.summary.mean_rts_rate));
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    let low_sel = low.iter().map(|p| p.0).sum::<f64>() / low.len() as f64;
    let low_rts = low.iter().map(|p| p.1).sum::<f64>() / low.len() as f64;
    Ok(format!(
        "selection >= rts on all histories (mean ratio {mean_ratio:.2}); low churn: selection {low_sel:.3}, rts {low_rts:.3}"
    ))
}

fn no_change_version() -> Outcome {
    let mut checked = 0;
    let mut bases = vec![load_project(&fixtures().join("example/original.proj")).unwrap()];
    bases.extend(
        generate_history(
            5,
            &HistoryParams {
                versions: 3,
                ..HistoryParams::default()
            },
        )
        .unwrap(),
    );
    for base in bases {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions::default();
        let first = run_incremental(dir.path(), &base, &opts).unwrap();
        let store_before = load_state(dir.path()).unwrap().unwrap();
        let mut again = base.clone();
        again.version_id = format!("{}-again", base.version_id);
        let second = run_incremental(dir.path(), &again, &opts).unwrap();
        let store_after = load_state(dir.path()).unwrap().unwrap();
        check(
            second.selection_rate == 0.0 && second.executed_tests == 0,
            || {
                format!(
                    "{}: selected {} tests",
                    base.version_id, second.executed_tests
                )
            },
        )?;
        check(second.report == first.report, || {
            format!("{}: report changed", base.version_id)
        })?;
        check(
            store_after.coverage == store_before.coverage
                && store_after.graph == store_before.graph,
            || format!("{}: store contents changed", base.version_id),
        )?;
        checked += 1;
    }
    Ok(format!(
        "{checked} unchanged versions select 0 tests and keep their report"
    ))
}

fn parse_csv(text: &str) -> Vec<BTreeMap<String, String>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let headers = rd.headers().unwrap().clone();
    rd.records()
        .map(|r| {
            let r = r.unwrap();
            headers
                .iter()
                .map(String::from)
                .zip(r.iter().map(String::from))
                .collect()
        })
        .collect()
}

fn speedup() -> Outcome {
    let store = tempfile::tempdir().unwrap();
    let low = HistoryParams::low_churn();
    let out = Command::new(bin())
        .args([
            "replay",
            "--seed",
            "1",
            "--versions",
            "50",
            "--verify",
            "--timings",
            "--sequential",
        ])
        .args(["--test-cost-ms", "10", "--format", "csv", "--store"])
        .arg(store.path())
        .args(["--edit-rate", &low.edit_rate.to_string()])
        .args(["--add-rate", &low.add_rate.to_string()])
        .args(["--delete-rate", &low.delete_rate.to_string()])
        .args(["--branch-flip-rate", &low.branch_flip_rate.to_string()])
        .output()
        .unwrap();
    check(out.status.success(), || {
        format!("replay exited with {}", out.status)
    })?;
    let rows = parse_csv(&String::from_utf8(out.stdout).unwrap());
    check(rows.len() == 50, || format!("{} rows", rows.len()))?;
    check(rows.iter().all(|r| r["equivalent"] == "yes"), || {
        "a version differs from the oracle".into()
    })?;
    let speedups: Vec<f64> = rows.iter().map(|r| r["speedup"].parse().unwrap()).collect();
    let mean = speedups.iter().sum::<f64>() / speedups.len() as f64;
    check(mean > 1.5, || format!("mean speedup {mean:.2}"))?;
    Ok(format!(
        "mean speedup {mean:.2}x over 50 low-churn versions at 10 ms per test"
    ))
}

fn replay_cli(history: &Path, store: &Path, extra: &[&str]) -> std::process::Child {
    Command::new(bin())
        .args(["replay", "--format", "csv", "--history"])
        .arg(history)
        .arg("--store")
        .arg(store)
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap()
}

fn run_cli(project: &Path, store: &Path) -> Result<(), String> {
    let status = Command::new(bin())
        .args(["run", "--format", "json", "--project"])
        .arg(project)
        .arg("--store")
        .arg(store)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    check(status.success(), || {
        format!("run {} exited with {status}", project.display())
    })
}

fn determinism() -> Outcome {
    let work = tempfile::tempdir().unwrap();
    let history = work.path().join("history");
    let status = Command::new(bin())
        .args(["gen", "--seed", "3", "--versions", "12", "--out"])
        .arg(&history)
        .status()
        .unwrap();
    check(status.success(), || "gen failed".into())?;
    let mut projects: Vec<PathBuf> = fs::read_dir(&history)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    projects.sort();

    let store_bytes = |dir: &Path| fs::read(dir.join(STORE_FILE)).unwrap();
    let mut csvs = Vec::new();
    let mut stores = Vec::new();
    for name in ["a", "b"] {
        let store = work.path().join(name);
        let out = replay_cli(&history, &store, &["--verify"])
            .wait_with_output()
            .unwrap();
        check(out.status.success(), || {
            format!("replay exited with {}", out.status)
        })?;
        csvs.push(out.stdout);
        stores.push(store_bytes(&store));
    }
    check(csvs[0] == csvs[1], || {
        "CSV output differs between runs".into()
    })?;
    check(stores[0] == stores[1], || {
        "store files differ between runs".into()
    })?;

    // One process per version.
    let stepped = work.path().join("stepped");
    for p in &projects {
        run_cli(p, &stepped)?;
    }
    check(store_bytes(&stepped) == stores[0], || {
        "per-process store differs".into()
    })?;

    // Kill a slow replay part way, then finish from whatever it persisted.
    let killed = work.path().join("killed");
    let mut child = replay_cli(&history, &killed, &["--test-cost-ms", "15", "--sequential"]);
    std::thread::sleep(Duration::from_millis(1500));
    let _ = child.kill();
    let _ = child.wait();
    let done = load_state(&killed)
        .map_err(|e| e.to_string())?
        .map(|s| s.version_id);
    let resume_at = match &done {
        Some(v) => {
            projects
                .iter()
                .position(|p| p.file_stem().unwrap() == v.as_str())
                .unwrap()
                + 1
        }
        None => 0,
    };
    for p in &projects[resume_at..] {
        run_cli(p, &killed)?;
    }
    check(store_bytes(&killed) == stores[0], || {
        "store after kill and restart differs".into()
    })?;

    // Pinned output of the default 50-version history.
    let golden = fs::read(fixtures().join("golden/replay-seed1.csv")).unwrap();
    let fresh = work.path().join("golden");
    let out = Command::new(bin())
        .args([
            "replay", "--seed", "1", "--verify", "--format", "csv", "--store",
        ])
        .arg(&fresh)
        .output()
        .unwrap();
    check(out.stdout == golden, || {
        "CSV differs from the pinned golden file".into()
    })?;
    Ok(format!(
        "identical CSV and store across runs; killed after {} of {} versions and resumed to the same store",
        resume_at,
        projects.len()
    ))
}

fn run_property<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))
}

type MergeCase = (
    CoverageData,
    DependencyGraph,
    CoverageData,
    DependencyGraph,
    BTreeSet<UnitId>,
    BTreeSet<UnitId>,
    BTreeSet<UnitId>,
);

fn merge_idempotence(
    (d, g, delta_cov, delta_graph, affected, units, selected): MergeCase,
) -> Result<(), TestCaseError> {
    let once = merge_coverage(&d, &delta_cov, &affected, &units);
    prop_assert_eq!(&merge_coverage(&once, &delta_cov, &affected, &units), &once);
    let selected: BTreeSet<UnitId> = selected.union(&delta_graph.tests()).cloned().collect();
    let tests = g.tests().union(&selected).cloned().collect();
    let g1 = merge_dependency_graph(&g, &delta_graph, &selected, &tests).unwrap();
    prop_assert_eq!(
        merge_dependency_graph(&g1, &delta_graph, &selected, &tests).unwrap(),
        g1
    );
    Ok(())
}

fn merge_laws(
    (d, delta, affected, units): (
        CoverageData,
        CoverageData,
        BTreeSet<UnitId>,
        BTreeSet<UnitId>,
    ),
) -> Result<(), TestCaseError> {
    let merged = merge_coverage(&d, &delta, &affected, &units);
    let empty = BTreeSet::new();
    let all: BTreeSet<&UnitId> = d
        .units()
        .chain(delta.units())
        .chain(&affected)
        .chain(&units)
        .collect();
    for u in all {
        let got = merged.get(u).unwrap_or(&empty);
        let old = d.get(u).unwrap_or(&empty);
        let new = delta.get(u).unwrap_or(&empty);
        if !units.contains(u) {
            prop_assert!(got.is_empty(), "{} survived removal", u);
        } else if affected.contains(u) {
            prop_assert_eq!(got, new);
        } else {
            prop_assert_eq!(got, &old.union(new).copied().collect());
        }
    }
    Ok(())
}

fn self_edges((seed, units, tests): (u64, usize, usize)) -> Result<(), TestCaseError> {
    let params = HistoryParams {
        units,
        tests,
        versions: 3,
        edit_rate: 0.3,
        add_rate: 0.1,
        delete_rate: 0.1,
        branch_flip_rate: 0.2,
    };
    let history = generate_history(seed, &params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for s in &history {
        let exec = execute_tests(s, &s.tests).unwrap();
        prop_assert!(exec.dep_delta.missing_self_edges().is_empty());
        let run = run_incremental(dir.path(), s, &RunOptions::default()).unwrap();
        prop_assert!(run.graph.missing_self_edges().is_empty());
        prop_assert_eq!(run.graph.tests(), s.tests.clone());
    }
    let stored = load_state(dir.path()).unwrap().unwrap();
    prop_assert!(stored.graph.missing_self_edges().is_empty());
    Ok(())
}

fn comment_invisibility(
    (s, notes, picks): (Snapshot, Vec<String>, Vec<prop::sample::Index>),
) -> Result<(), TestCaseError> {
    let mut edited = s.clone();
    let keys: Vec<UnitId> = s.units.keys().cloned().collect();
    for (note, pick) in notes.iter().zip(&picks) {
        let u = edited.units.get_mut(pick.get(&keys)).unwrap();
        u.comment_text = note.clone();
    }
    prop_assert!(compute_changeset(&s, &edited).is_empty());
    for k in &keys {
        prop_assert_eq!(
            normalized_encoding(&s.units[k]),
            normalized_encoding(&edited.units[k])
        );
    }
    let a = execute_tests(&s, &s.tests).unwrap();
    let b = execute_tests(&edited, &edited.tests).unwrap();
    prop_assert_eq!(&a, &b);
    prop_assert_eq!(
        compute_report(&s, &a.coverage_delta, false).unwrap(),
        compute_report(&edited, &b.coverage_delta, false).unwrap()
    );
    Ok(())
}

fn subset_additivity((s, mask): (Snapshot, Vec<bool>)) -> Result<(), TestCaseError> {
    let (left, right): (Vec<_>, Vec<_>) = s
        .tests
        .iter()
        .cloned()
        .zip(mask.iter().cycle())
        .partition(|(_, m)| **m);
    let left: BTreeSet<UnitId> = left.into_iter().map(|(t, _)| t).collect();
    let right: BTreeSet<UnitId> = right.into_iter().map(|(t, _)| t).collect();
    let whole = execute_tests(&s, &s.tests).unwrap();
    let a = execute_tests(&s, &left).unwrap();
    let b = execute_tests(&s, &right).unwrap();
    let mut cov = a.coverage_delta.clone();
    cov.union_with(&b.coverage_delta);
    prop_assert_eq!(&cov, &whole.coverage_delta);
    let mut edges = a.dep_delta.edges.clone();
    edges.extend(b.dep_delta.edges.clone());
    prop_assert_eq!(&edges, &whole.dep_delta.edges);
    Ok(())
}

fn properties() -> Outcome {
    run_property(
        "merge idempotence",
        (
            coverage(),
            graph(),
            coverage(),
            graph(),
            unit_set(),
            unit_set(),
            test_set(),
        ),
        merge_idempotence,
    )?;
    run_property(
        "union/overwrite laws",
        (coverage(), coverage(), unit_set(), unit_set()),
        merge_laws,
    )?;
    run_property(
        "self-edge invariant",
        (any::<u64>(), 2usize..12, 1usize..5),
        self_edges,
    )?;
    run_property(
        "comment-only edits",
        (
            snapshot(),
            prop::collection::vec("[a-z ]{0,10}", 1..4),
            prop::collection::vec(any::<prop::sample::Index>(), 4),
        ),
        comment_invisibility,
    )?;
    run_property(
        "subset additivity",
        (snapshot(), prop::collection::vec(any::<bool>(), 1..8)),
        subset_additivity,
    )?;
    Ok(format!(
        "merge idempotence, union/overwrite laws, self-edges, comment-only edits, subset additivity: {PROPERTY_CASES} cases each"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 8] = [
        (
            "incremental coverage equals the retest-all oracle",
            oracle_equality,
        ),
        ("example change (a): removed call", example_change_a),
        ("example change (b): added call", example_change_b),
        ("selection rate against plain RTS", selection_rates),
        ("unchanged version", no_change_version),
        ("speedup with expensive tests", speedup),
        ("deterministic replay and restart", determinism),
        ("property suites", properties),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}) [{secs:.1}s]: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}) [{secs:.1}s]: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
