//! Runs a history through the incremental pipeline and tabulates the results.

use std::path::Path;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::model::Snapshot;

use super::pipeline::{
    run_full, run_incremental, verify_equivalence, Equivalence, RunOptions, RunResult,
};

#[derive(Clone, Debug, Default)]
pub struct ReplayOptions {
    pub run: RunOptions,
    /// Also run the retest-all oracle on every version.
    pub verify: bool,
}

#[derive(Clone, Debug)]
pub struct ReplayRow {
    pub run: RunResult,
    pub oracle_time: Option<Duration>,
    pub equivalence: Option<Equivalence>,
    /// Whether the incremental report matched the oracle's report.
    pub report_matches: Option<bool>,
}

impl ReplayRow {
    pub fn speedup(&self) -> Option<f64> {
        let inc = self.run.phase_times.total().as_secs_f64();
        self.oracle_time
            .filter(|_| inc > 0.0)
            .map(|o| o.as_secs_f64() / inc)
    }

    pub fn is_equivalent(&self) -> Option<bool> {
        match (&self.equivalence, self.report_matches) {
            (Some(e), Some(r)) => Some(e.is_equal() && r),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySummary {
    pub versions: usize,
    pub mean_selection_rate: f64,
    pub mean_rts_rate: f64,
    pub mean_speedup: Option<f64>,
    pub all_equivalent: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct Replay {
    pub rows: Vec<ReplayRow>,
    pub summary: ReplaySummary,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn summarize(rows: &[ReplayRow]) -> ReplaySummary {
    let speedups: Option<Vec<f64>> = rows.iter().map(ReplayRow::speedup).collect();
    let equivalent: Option<Vec<bool>> = rows.iter().map(ReplayRow::is_equivalent).collect();
    ReplaySummary {
        versions: rows.len(),
        mean_selection_rate: mean(rows.iter().map(|r| r.run.selection_rate)),
        mean_rts_rate: mean(rows.iter().map(|r| r.run.rts_rate)),
        mean_speedup: speedups
            .filter(|s| !s.is_empty())
            .map(|s| mean(s.into_iter())),
        all_equivalent: equivalent.map(|e| e.into_iter().all(|x| x)),
    }
}

/// Runs one version (incremental, plus the oracle when verifying).
pub fn replay_version(
    snapshot: &Snapshot,
    store_dir: &Path,
    opts: &ReplayOptions,
) -> Result<ReplayRow> {
    let run = run_incremental(store_dir, snapshot, &opts.run)?;
    if !opts.verify {
        return Ok(ReplayRow {
            run,
            oracle_time: None,
            equivalence: None,
            report_matches: None,
        });
    }
    let full = run_full(snapshot, &opts.run)?;
    Ok(ReplayRow {
        equivalence: Some(verify_equivalence(&run.coverage, &full.coverage)),
        report_matches: Some(run.report == full.report),
        oracle_time: Some(full.elapsed),
        run,
    })
}

/// Replays `history` in order against one persistent store directory.
pub fn replay(history: &[Snapshot], store_dir: &Path, opts: &ReplayOptions) -> Result<Replay> {
    if history.is_empty() {
        return Err(Error::Param("history is empty".into()));
    }
    let rows = history
        .iter()
        .map(|s| replay_version(s, store_dir, opts))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&rows);
    Ok(Replay { rows, summary })
}

/// Frozen CSV column order. Timing columns are appended only on request so
/// the default table is byte-for-byte reproducible.
pub const CSV_COLUMNS: &[&str] = &[
    "version",
    "units",
    "tests",
    "modified",
    "added",
    "removed",
    "rts_selected",
    "affected_units",
    "final_selected",
    "failed",
    "selection_rate",
    "rts_rate",
    "lines_covered",
    "lines_total",
    "branches_covered",
    "branches_total",
    "functions_covered",
    "functions_total",
    "equivalent",
];

pub const CSV_TIMING_COLUMNS: &[&str] = &[
    "analysis_us",
    "execution_us",
    "collection_us",
    "report_us",
    "incremental_us",
    "oracle_us",
    "speedup",
];

pub fn csv_row(row: &ReplayRow, units: usize, timings: bool) -> Vec<String> {
    let r = &row.run;
    let t = &r.report.totals;
    let mut out = vec![
        r.version_id.clone(),
        units.to_string(),
        r.total_tests.to_string(),
        r.changeset.modified.len().to_string(),
        r.changeset.added.len().to_string(),
        r.changeset.removed.len().to_string(),
        r.selection.rts_selected.len().to_string(),
        r.selection.affected_units.len().to_string(),
        r.selection.final_selected.len().to_string(),
        r.failed_tests.to_string(),
        format!("{:.6}", r.selection_rate),
        format!("{:.6}", r.rts_rate),
        t.lines_covered.to_string(),
        t.lines_total.to_string(),
        t.branches_covered.to_string(),
        t.branches_total.to_string(),
        t.functions_covered.to_string(),
        t.functions_total.to_string(),
        match row.is_equivalent() {
            Some(true) => "yes".into(),
            Some(false) => "no".into(),
            None => String::new(),
        },
    ];
    if timings {
        let us = |d: Duration| d.as_micros().to_string();
        let p = &r.phase_times;
        out.extend([
            us(p.analysis),
            us(p.execution),
            us(p.collection),
            us(p.report),
            us(p.total()),
            row.oracle_time.map(us).unwrap_or_default(),
            row.speedup().map(|s| format!("{s:.3}")).unwrap_or_default(),
        ]);
    }
    out
}

/// Renders the replay table; `units[i]` is the unit count of version `i`.
pub fn render_csv(replay: &Replay, history: &[Snapshot], timings: bool) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    if timings {
        header.extend_from_slice(CSV_TIMING_COLUMNS);
    }
    w.write_record(&header).expect("in-memory write");
    for (row, snap) in replay.rows.iter().zip(history) {
        w.write_record(csv_row(row, snap.units.len(), timings))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is UTF-8")
}
