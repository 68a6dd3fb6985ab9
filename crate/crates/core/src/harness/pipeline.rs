use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::changedet::{changeset_from_digests, digest_units_with, DigestTable};
use crate::error::{Error, Result};
use crate::merge::{merge_coverage, merge_dependency_graph, overwrite_set};
use crate::miniproj::{execute_tests_with, ExecConfig, Outcome};
use crate::model::{ChangeSet, CoverageData, DependencyGraph, SelectionResult, Snapshot, UnitId};
use crate::report::{compute_report, CoverageReport};
use crate::selection::{analyze_changeset, select_all};
use crate::store::{load_state, save_state, StoreLock, StoreState};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub exec: ExecConfig,
    pub include_tests: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PhaseTimes {
    pub analysis: Duration,
    pub execution: Duration,
    pub collection: Duration,
    pub report: Duration,
}

impl PhaseTimes {
    pub fn total(&self) -> Duration {
        self.analysis + self.execution + self.collection + self.report
    }

    /// Execution and collection together, the figure comparable to
    /// tools that interleave the two.
    pub fn execution_and_collection(&self) -> Duration {
        self.execution + self.collection
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub version_id: String,
    pub first_version: bool,
    pub changeset: ChangeSet,
    pub selection: SelectionResult,
    pub executed_tests: usize,
    pub total_tests: usize,
    pub failed_tests: usize,
    pub selection_rate: f64,
    /// Share of tests plain regression test selection would have run.
    pub rts_rate: f64,
    pub phase_times: PhaseTimes,
    pub report: CoverageReport,
    pub coverage: CoverageData,
    pub graph: DependencyGraph,
}

fn rate(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        n as f64 / total as f64
    }
}

fn ensure_valid(s: &Snapshot) -> Result<()> {
    let violations = s.validate();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::SnapshotInvalid {
            version: s.version_id.clone(),
            violations,
        })
    }
}

/// Selection for `snapshot` against whatever the store holds, without running anything.
pub fn plan(
    store: Option<&StoreState>,
    snapshot: &Snapshot,
    opts: &RunOptions,
) -> (ChangeSet, SelectionResult) {
    let digests = digest_units_with(snapshot, opts.exec.parallelism);
    plan_with(store, snapshot, &digests)
}

fn plan_with(
    store: Option<&StoreState>,
    snapshot: &Snapshot,
    digests: &DigestTable,
) -> (ChangeSet, SelectionResult) {
    match store {
        None => (
            ChangeSet {
                added: snapshot.unit_ids(),
                ..ChangeSet::default()
            },
            select_all(snapshot),
        ),
        Some(st) => {
            let cs = changeset_from_digests(&st.unit_digests, digests);
            let sel = analyze_changeset(&st.graph, &cs, snapshot);
            (cs, sel)
        }
    }
}

/// One incremental step: analyze, execute the closure, merge, persist, report.
pub fn run_incremental(
    store_dir: &Path,
    snapshot: &Snapshot,
    opts: &RunOptions,
) -> Result<RunResult> {
    ensure_valid(snapshot)?;
    let _lock = StoreLock::acquire(store_dir)?;

    let start = Instant::now();
    let previous = load_state(store_dir)?;
    let digests = digest_units_with(snapshot, opts.exec.parallelism);
    let (changeset, selection) = plan_with(previous.as_ref(), snapshot, &digests);
    let analysis = start.elapsed();

    let start = Instant::now();
    let exec = execute_tests_with(snapshot, &selection.final_selected, &opts.exec)?;
    let execution = start.elapsed();

    let start = Instant::now();
    let (old_graph, old_coverage) = match previous {
        Some(st) => (st.graph, st.coverage),
        None => (DependencyGraph::new(), CoverageData::new()),
    };
    let graph = merge_dependency_graph(
        &old_graph,
        &exec.dep_delta,
        &selection.final_selected,
        &snapshot.tests,
    )?;
    let current_units: BTreeSet<UnitId> = snapshot.unit_ids();
    let coverage = merge_coverage(
        &old_coverage,
        &exec.coverage_delta,
        &overwrite_set(&selection, &changeset),
        &current_units,
    );
    let state = StoreState::new(
        snapshot.version_id.clone(),
        digests,
        graph.clone(),
        coverage.clone(),
    );
    save_state(store_dir, &state)?;
    let collection = start.elapsed();

    let start = Instant::now();
    let report = compute_report(snapshot, &coverage, opts.include_tests)?;
    let report_time = start.elapsed();

    let total_tests = snapshot.tests.len();
    Ok(RunResult {
        version_id: snapshot.version_id.clone(),
        first_version: old_graph.is_empty(),
        executed_tests: exec.executed_count,
        failed_tests: exec
            .outcomes
            .values()
            .filter(|o| **o == Outcome::Failed)
            .count(),
        selection_rate: rate(exec.executed_count, total_tests),
        rts_rate: rate(selection.rts_selected.len(), total_tests),
        total_tests,
        changeset,
        selection,
        phase_times: PhaseTimes {
            analysis,
            execution,
            collection,
            report: report_time,
        },
        report,
        coverage,
        graph,
    })
}

#[derive(Clone, Debug)]
pub struct FullRun {
    pub coverage: CoverageData,
    pub graph: DependencyGraph,
    pub report: CoverageReport,
    pub elapsed: Duration,
}

/// Retest-all baseline: every test from scratch, no store involved.
pub fn run_full(snapshot: &Snapshot, opts: &RunOptions) -> Result<FullRun> {
    ensure_valid(snapshot)?;
    let start = Instant::now();
    let exec = execute_tests_with(snapshot, &snapshot.tests, &opts.exec)?;
    let report = compute_report(snapshot, &exec.coverage_delta, opts.include_tests)?;
    Ok(FullRun {
        coverage: exec.coverage_delta,
        graph: exec.dep_delta,
        report,
        elapsed: start.elapsed(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UnitDiff {
    pub unit: UnitId,
    /// In the oracle but not in the incremental data.
    pub missing: BTreeSet<u32>,
    /// In the incremental data but not in the oracle.
    pub extra: BTreeSet<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Equivalence {
    Equal,
    Diff(Vec<UnitDiff>),
}

impl Equivalence {
    pub fn is_equal(&self) -> bool {
        matches!(self, Equivalence::Equal)
    }
}

pub fn verify_equivalence(incremental: &CoverageData, oracle: &CoverageData) -> Equivalence {
    let empty = BTreeSet::new();
    let units: BTreeSet<&UnitId> = incremental.units().chain(oracle.units()).collect();
    let diffs: Vec<UnitDiff> = units
        .into_iter()
        .filter_map(|u| {
            let inc = incremental.get(u).unwrap_or(&empty);
            let ora = oracle.get(u).unwrap_or(&empty);
            (inc != ora).then(|| UnitDiff {
                unit: u.clone(),
                missing: ora.difference(inc).copied().collect(),
                extra: inc.difference(ora).copied().collect(),
            })
        })
        .collect();
    if diffs.is_empty() {
        Equivalence::Equal
    } else {
        Equivalence::Diff(diffs)
    }
}
