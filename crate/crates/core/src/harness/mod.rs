//! Pipeline orchestration, the retest-all oracle, and history replay.

mod history;
mod pipeline;
mod replay;

pub use history::{generate_history, HistoryParams};
pub use pipeline::{
    plan, run_full, run_incremental, verify_equivalence, Equivalence, FullRun, PhaseTimes,
    RunOptions, RunResult, UnitDiff,
};
pub use replay::{
    csv_row, render_csv, replay, replay_version, summarize, Replay, ReplayOptions, ReplayRow,
    ReplaySummary, CSV_COLUMNS, CSV_TIMING_COLUMNS,
};
