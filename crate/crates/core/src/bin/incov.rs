use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use incov::harness::{
    generate_history, plan, render_csv, replay, run_full, run_incremental, summarize,
    verify_equivalence, Equivalence, HistoryParams, Replay, ReplayOptions, ReplayRow, RunOptions,
    RunResult,
};
use incov::miniproj::{load_project, serialize_snapshot, TestCost};
use incov::model::Snapshot;
use incov::par::Parallelism;
use incov::report::{compute_report, render_json, render_text, CoverageReport};
use incov::store::load_state;
use incov::Error;

const EXIT_MISMATCH: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "incov",
    version,
    about = "Incremental code coverage for mini-language projects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct ExecArgs {
    /// Artificial cost added to every executed test, in milliseconds.
    #[arg(long, default_value_t = 0)]
    test_cost_ms: u64,
    /// Run tests one after another instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
    /// Include test units in coverage reports.
    #[arg(long)]
    include_tests: bool,
}

impl ExecArgs {
    fn options(&self) -> RunOptions {
        let mut opts = RunOptions {
            include_tests: self.include_tests,
            ..RunOptions::default()
        };
        if self.test_cost_ms > 0 {
            opts.exec.test_cost = Some(TestCost::Sleep(Duration::from_millis(self.test_cost_ms)));
        }
        if self.sequential {
            opts.exec.parallelism = Parallelism::Sequential;
        }
        opts
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = HistoryParams::default().units)]
    units: usize,
    #[arg(long, default_value_t = HistoryParams::default().tests)]
    tests: usize,
    #[arg(long, default_value_t = HistoryParams::default().versions)]
    versions: usize,
    #[arg(long, default_value_t = HistoryParams::default().edit_rate)]
    edit_rate: f64,
    #[arg(long, default_value_t = HistoryParams::default().add_rate)]
    add_rate: f64,
    #[arg(long, default_value_t = HistoryParams::default().delete_rate)]
    delete_rate: f64,
    #[arg(long, default_value_t = HistoryParams::default().branch_flip_rate)]
    branch_flip_rate: f64,
}

impl GenArgs {
    fn params(&self) -> HistoryParams {
        HistoryParams {
            units: self.units,
            tests: self.tests,
            versions: self.versions,
            edit_rate: self.edit_rate,
            add_rate: self.add_rate,
            delete_rate: self.delete_rate,
            branch_flip_rate: self.branch_flip_rate,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the tests the next run would select, without running them.
    Analyze {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Run one incremental step and update the store.
    Run {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Run every test from scratch and print the coverage report.
    Full {
        #[arg(long)]
        project: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Compare the stored coverage with a full rerun; exits 1 on mismatch.
    Verify {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Write a synthetic version history, one project file per version.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Run a history version by version against one store.
    Replay {
        /// Directory of project files (or project directories), replayed in name order.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Also run the retest-all oracle per version; exits 1 on any mismatch.
        #[arg(long)]
        verify: bool,
        /// Append timing columns to the CSV.
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        gen: GenArgs,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Render the report for the stored coverage.
    Report {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Write to this file instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        include_tests: bool,
    },
}

enum Failure {
    Usage(String),
    Mismatch,
    Other(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Other(e)
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| {
            Failure::Other(Error::Io {
                context: format!("writing {}", path.display()),
                source: e,
            })
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| {
                    Failure::Other(Error::Io {
                        context: "writing stdout".into(),
                        source: e,
                    })
                })
        }
    }
}

fn report_bytes(report: &CoverageReport, format: Format) -> Result<Vec<u8>, Failure> {
    match format {
        Format::Text => Ok(render_text(report).into_bytes()),
        Format::Json => Ok(render_json(report).into_bytes()),
        Format::Csv => Err(Failure::Usage(
            "reports support --format text or json".into(),
        )),
    }
}

fn run_json(r: &RunResult) -> serde_json::Value {
    json!({
        "version": r.version_id,
        "first_version": r.first_version,
        "changeset": r.changeset,
        "selection": r.selection,
        "executed_tests": r.executed_tests,
        "total_tests": r.total_tests,
        "failed_tests": r.failed_tests,
        "selection_rate": r.selection_rate,
        "rts_rate": r.rts_rate,
        "phase_times_us": {
            "analysis": r.phase_times.analysis.as_micros() as u64,
            "execution": r.phase_times.execution.as_micros() as u64,
            "collection": r.phase_times.collection.as_micros() as u64,
            "execution_and_collection": r.phase_times.execution_and_collection().as_micros() as u64,
            "report": r.phase_times.report.as_micros() as u64,
        },
        "report": r.report,
    })
}

fn load_history_dir(dir: &Path) -> Result<Vec<Snapshot>, Failure> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| {
            Failure::Other(Error::Io {
                context: format!("listing {}", dir.display()),
                source: e,
            })
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() || p.extension().is_some_and(|x| x == "proj"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Failure::Usage(format!(
            "{} holds no versions",
            dir.display()
        )));
    }
    entries
        .iter()
        .map(|p| load_project(p).map_err(Failure::from))
        .collect()
}

fn replay_text(replay: &Replay) -> String {
    let mut out = String::new();
    for row in &replay.rows {
        let r = &row.run;
        out.push_str(&format!(
            "{:<12} selected {:>4}/{:<4} rts {:>4}  rate {:.3}{}\n",
            r.version_id,
            r.executed_tests,
            r.total_tests,
            r.selection.rts_selected.len(),
            r.selection_rate,
            match row.is_equivalent() {
                Some(true) => "  equal",
                Some(false) => "  MISMATCH",
                None => "",
            }
        ));
    }
    let s = &replay.summary;
    out.push_str(&format!(
        "versions {}  mean selection rate {:.4}  mean rts rate {:.4}",
        s.versions, s.mean_selection_rate, s.mean_rts_rate
    ));
    if let Some(x) = s.mean_speedup {
        out.push_str(&format!("  mean speedup {x:.2}x"));
    }
    out.push('\n');
    out
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Analyze {
            project,
            store,
            format,
        } => {
            let snapshot = load_project(&project)?;
            let state = load_state(&store)?;
            let (cs, sel) = plan(state.as_ref(), &snapshot, &RunOptions::default());
            let bytes = match format {
                Format::Json => {
                    let mut s = serde_json::to_string_pretty(&serde_json::to_value(&sel).unwrap()).unwrap();
                    s.push('\n');
                    s
                }
                Format::Text => format!(
                    "modified: {}\nadded: {}\nremoved: {}\nrts_selected: {}\naffected_units: {}\nfinal_selected: {}\n",
                    join(&cs.modified),
                    join(&cs.added),
                    join(&cs.removed),
                    join(&sel.rts_selected),
                    join(&sel.affected_units),
                    join(&sel.final_selected),
                ),
                Format::Csv => return Err(Failure::Usage("analyze supports --format json or text".into())),
            };
            emit(None, bytes.as_bytes())
        }
        Command::Run {
            project,
            store,
            format,
            exec,
        } => {
            let snapshot = load_project(&project)?;
            let run = run_incremental(&store, &snapshot, &exec.options())?;
            let bytes = match format {
                Format::Text => {
                    let mut s = format!(
                        "version {}: executed {}/{} tests (rts {}), selection rate {:.3}\n",
                        run.version_id,
                        run.executed_tests,
                        run.total_tests,
                        run.selection.rts_selected.len(),
                        run.selection_rate
                    );
                    s.push_str(&render_text(&run.report));
                    s
                }
                Format::Json => {
                    let mut s = serde_json::to_string_pretty(&run_json(&run)).unwrap();
                    s.push('\n');
                    s
                }
                Format::Csv => {
                    let row = ReplayRow {
                        run,
                        oracle_time: None,
                        equivalence: None,
                        report_matches: None,
                    };
                    let rows = vec![row];
                    let replay = Replay {
                        summary: summarize(&rows),
                        rows,
                    };
                    render_csv(&replay, std::slice::from_ref(&snapshot), false)
                }
            };
            emit(None, bytes.as_bytes())
        }
        Command::Full {
            project,
            format,
            exec,
        } => {
            let snapshot = load_project(&project)?;
            let full = run_full(&snapshot, &exec.options())?;
            emit(None, &report_bytes(&full.report, format)?)
        }
        Command::Verify {
            project,
            store,
            exec,
        } => {
            let snapshot = load_project(&project)?;
            let Some(state) = load_state(&store)? else {
                return Err(Failure::Usage(format!("no store in {}", store.display())));
            };
            if state.version_id != snapshot.version_id {
                eprintln!(
                    "warning: store holds version {}, project is {}",
                    state.version_id, snapshot.version_id
                );
            }
            let full = run_full(&snapshot, &exec.options())?;
            match verify_equivalence(&state.coverage, &full.coverage) {
                Equivalence::Equal => {
                    println!("equal");
                    Ok(())
                }
                Equivalence::Diff(diffs) => {
                    for d in diffs {
                        println!(
                            "{}: missing [{}] extra [{}]",
                            d.unit,
                            join(&d.missing),
                            join(&d.extra)
                        );
                    }
                    Err(Failure::Mismatch)
                }
            }
        }
        Command::Gen { out, gen } => {
            let history = generate_history(gen.seed, &gen.params())?;
            fs::create_dir_all(&out).map_err(|e| {
                Failure::Other(Error::Io {
                    context: format!("creating {}", out.display()),
                    source: e,
                })
            })?;
            for s in &history {
                let path = out.join(format!("{}.proj", s.version_id));
                emit(Some(&path), serialize_snapshot(s).as_bytes())?;
            }
            Ok(())
        }
        Command::Replay {
            history,
            store,
            format,
            verify,
            timings,
            gen,
            exec,
        } => {
            let history = match history {
                Some(dir) => load_history_dir(&dir)?,
                None => generate_history(gen.seed, &gen.params())?,
            };
            let opts = ReplayOptions {
                run: exec.options(),
                verify,
            };
            let result = replay(&history, &store, &opts)?;
            let bytes = match format {
                Format::Csv => render_csv(&result, &history, timings),
                Format::Text => replay_text(&result),
                Format::Json => {
                    return Err(Failure::Usage(
                        "replay supports --format csv or text".into(),
                    ))
                }
            };
            emit(None, bytes.as_bytes())?;
            if result.summary.all_equivalent == Some(false) {
                return Err(Failure::Mismatch);
            }
            Ok(())
        }
        Command::Report {
            project,
            store,
            format,
            out,
            include_tests,
        } => {
            let snapshot = load_project(&project)?;
            let Some(state) = load_state(&store)? else {
                return Err(Failure::Usage(format!("no store in {}", store.display())));
            };
            let report = compute_report(&snapshot, &state.coverage, include_tests)?;
            emit(out.as_deref(), &report_bytes(&report, format)?)
        }
    }
}

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Mismatch) => ExitCode::from(EXIT_MISMATCH),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
