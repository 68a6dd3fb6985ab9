//! Coverage reports at line, branch, and function granularity.
//!
//! A line is covered when the block holding it executed. Each branch
//! contributes two arms (an absent `else` is an implicit fall-through arm),
//! and a function counts as covered when its entry block executed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoverageData, Snapshot, UnitId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub lines_covered: u64,
    pub lines_total: u64,
    pub branches_covered: u64,
    pub branches_total: u64,
    pub functions_covered: u64,
    pub functions_total: u64,
}

impl Counters {
    fn add(&mut self, other: &Counters) {
        self.lines_covered += other.lines_covered;
        self.lines_total += other.lines_total;
        self.branches_covered += other.branches_covered;
        self.branches_total += other.branches_total;
        self.functions_covered += other.functions_covered;
        self.functions_total += other.functions_total;
    }

    pub fn line_rate(&self) -> Option<f64> {
        ratio(self.lines_covered, self.lines_total)
    }

    pub fn branch_rate(&self) -> Option<f64> {
        ratio(self.branches_covered, self.branches_total)
    }

    pub fn function_rate(&self) -> Option<f64> {
        ratio(self.functions_covered, self.functions_total)
    }
}

fn ratio(covered: u64, total: u64) -> Option<f64> {
    (total > 0).then(|| covered as f64 / total as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub per_unit: BTreeMap<UnitId, Counters>,
    pub totals: Counters,
    pub covered_line_map: BTreeMap<UnitId, BTreeSet<u32>>,
}

impl CoverageReport {
    /// Totals grouped by unit-id prefix (everything before the last `.`).
    pub fn package_totals(&self) -> BTreeMap<String, Counters> {
        let mut out: BTreeMap<String, Counters> = BTreeMap::new();
        for (id, c) in &self.per_unit {
            let pkg = id.as_str().rsplit_once('.').map_or("", |(p, _)| p);
            out.entry(pkg.to_owned()).or_default().add(c);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

pub fn compute_report(
    s: &Snapshot,
    d: &CoverageData,
    include_tests: bool,
) -> Result<CoverageReport> {
    for (unit, probes) in d.iter() {
        let count = match s.units.get(unit) {
            Some(u) => u.layout().probe_count(),
            None => 0,
        };
        if let Some(&index) = probes.iter().find(|&&p| p >= count) {
            return Err(Error::StaleProbe {
                unit: unit.clone(),
                index,
            });
        }
    }

    let mut report = CoverageReport::default();
    let empty = BTreeSet::new();
    for (id, unit) in &s.units {
        if unit.is_test && !include_tests {
            continue;
        }
        let layout = unit.layout();
        let hit = d.get(id).unwrap_or(&empty);

        let mut lines: BTreeMap<u32, bool> = BTreeMap::new();
        for (probe, block) in layout.blocks.iter().enumerate() {
            let covered = hit.contains(&(probe as u32));
            for &line in &block.lines {
                *lines.entry(line).or_default() |= covered;
            }
        }
        let covered_lines: BTreeSet<u32> =
            lines.iter().filter(|(_, c)| **c).map(|(l, _)| *l).collect();

        let mut c = Counters {
            lines_covered: covered_lines.len() as u64,
            lines_total: lines.len() as u64,
            ..Counters::default()
        };
        for f in &layout.functions {
            c.functions_total += 1;
            c.functions_covered += hit.contains(&f.entry.probe) as u64;
            for arms in &f.branches {
                c.branches_total += 2;
                c.branches_covered +=
                    hit.contains(&arms.then_probe) as u64 + hit.contains(&arms.else_probe) as u64;
            }
        }

        report.totals.add(&c);
        report.per_unit.insert(id.clone(), c);
        if !covered_lines.is_empty() {
            report.covered_line_map.insert(id.clone(), covered_lines);
        }
    }
    Ok(report)
}

fn cell(covered: u64, total: u64) -> String {
    match ratio(covered, total) {
        Some(r) => format!("{covered}/{total} {:>6.1}%", r * 100.0),
        None => format!("{covered}/{total} {:>7}", "-"),
    }
}

pub fn render_text(r: &CoverageReport) -> String {
    let rows: Vec<(String, &Counters)> = r
        .per_unit
        .iter()
        .map(|(id, c)| (id.to_string(), c))
        .chain(std::iter::once(("TOTAL".to_owned(), &r.totals)))
        .collect();
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(4);
    let cells: Vec<[String; 3]> = rows
        .iter()
        .map(|(_, c)| {
            [
                cell(c.lines_covered, c.lines_total),
                cell(c.branches_covered, c.branches_total),
                cell(c.functions_covered, c.functions_total),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..3)
        .map(|i| cells.iter().map(|c| c[i].len()).max().unwrap_or(0).max(9))
        .collect();

    let mut out = String::new();
    writeln!(
        out,
        "{:<name_w$}  {:>w0$}  {:>w1$}  {:>w2$}",
        "unit",
        "lines",
        "branches",
        "functions",
        w0 = widths[0],
        w1 = widths[1],
        w2 = widths[2]
    )
    .unwrap();
    for ((name, _), c) in rows.iter().zip(&cells) {
        writeln!(
            out,
            "{:<name_w$}  {:>w0$}  {:>w1$}  {:>w2$}",
            name,
            c[0],
            c[1],
            c[2],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2]
        )
        .unwrap();
    }
    out
}

/// Pretty JSON with object keys sorted at every level.
pub fn render_json(r: &CoverageReport) -> String {
    let value = serde_json::to_value(r).expect("report is plain data");
    let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
    s.push('\n');
    s
}

pub fn render_report(r: &CoverageReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Text => render_text(r).into_bytes(),
        ReportFormat::Json => render_json(r).into_bytes(),
    }
}
