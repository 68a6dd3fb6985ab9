//! The mini project language: parser, writer, and the instrumented interpreter.
//!
//! A project is either a single file or a directory of `.unit` files, all of
//! which are linked into one [`Snapshot`](crate::model::Snapshot). See
//! `docs/project-format.md` for the grammar.

mod interp;
mod parser;
mod writer;

use std::fs;
use std::path::Path;

pub use interp::{
    execute_tests, execute_tests_with, ExecConfig, ExecutionResult, Outcome, TestCost,
};
pub use writer::{serialize_snapshot, write_unit};

use crate::error::{Error, Result};
use crate::model::Snapshot;

pub const DEFAULT_MAX_CALL_DEPTH: usize = 64;

/// Parses a single project text. Without a `version` line the id is `unversioned`.
pub fn parse_project(text: &str) -> Result<Snapshot> {
    parser::link(vec![parser::parse_fragment("", text)?], "unversioned")
}

/// Loads a project file or a directory of `.unit` files.
///
/// The version id defaults to the file stem (or directory name) when no
/// `version` line is present.
pub fn load_project(path: &Path) -> Result<Snapshot> {
    let default_version = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unversioned".to_owned());
    let meta =
        fs::metadata(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if !meta.is_dir() {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        return parser::link(vec![parser::parse_fragment("", &text)?], &default_version);
    }

    let mut files: Vec<_> = fs::read_dir(path)
        .map_err(|e| Error::io(format!("listing {}", path.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "unit"))
        .collect();
    files.sort();
    let mut fragments = Vec::with_capacity(files.len());
    for file in &files {
        let text = fs::read_to_string(file)
            .map_err(|e| Error::io(format!("reading {}", file.display()), e))?;
        let label = file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        fragments.push(parser::parse_fragment(&label, &text)?);
    }
    parser::link(fragments, &default_version)
}
