//! Persisted cross-version state.
//!
//! One text file, `incov.store`, per store directory:
//!
//! ```text
//! incov-store v1 sha256 <version_id>
//! section digest <n>
//! <unit> <64 hex digits>            n lines, sorted by unit
//! end digest <crc32>
//! section graph <n>
//! <test> <unit> <unit> ...          n lines, sorted; deps sorted, self-edge included
//! end graph <crc32>
//! section coverage <n>
//! <unit> <probe> <probe> ...        n lines, sorted; probes ascending
//! end coverage <crc32>
//! ```
//!
//! Each CRC-32 (8 lowercase hex digits) covers the section's `section` line
//! and body lines, newline included. The file must end right after the last
//! `end` line. Writes go to a temp file that is renamed into place.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write as _};
use std::path::{Path, PathBuf};

use crate::changedet::{Digest256, DigestTable, UnitDigest, DIGEST_ALGORITHM};
use crate::error::{Error, Result};
use crate::model::{CoverageData, DependencyGraph, UnitId};

pub const STORE_FILE: &str = "incov.store";
pub const LOCK_FILE: &str = "incov.lock";
pub const FORMAT_VERSION: &str = "v1";
const MAGIC: &str = "incov-store";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreState {
    pub version_id: String,
    pub digest_algorithm: String,
    pub unit_digests: DigestTable,
    pub graph: DependencyGraph,
    pub coverage: CoverageData,
}

impl StoreState {
    pub fn new(
        version_id: impl Into<String>,
        unit_digests: DigestTable,
        graph: DependencyGraph,
        coverage: CoverageData,
    ) -> Self {
        Self {
            version_id: version_id.into(),
            digest_algorithm: DIGEST_ALGORITHM.to_owned(),
            unit_digests,
            graph,
            coverage,
        }
    }
}

pub fn store_path(dir: &Path) -> PathBuf {
    dir.join(STORE_FILE)
}

fn section(out: &mut String, name: &str, lines: Vec<String>) {
    let mut body = format!("section {name} {}\n", lines.len());
    for l in lines {
        body.push_str(&l);
        body.push('\n');
    }
    let crc = crc32fast::hash(body.as_bytes());
    out.push_str(&body);
    writeln!(out, "end {name} {crc:08x}").unwrap();
}

/// Serializes a state to the store file format.
pub fn encode_state(st: &StoreState) -> String {
    let mut out = format!(
        "{MAGIC} {FORMAT_VERSION} {} {}\n",
        st.digest_algorithm, st.version_id
    );
    section(
        &mut out,
        "digest",
        st.unit_digests
            .iter()
            .map(|(u, d)| format!("{u} {}", d.digest.to_hex()))
            .collect(),
    );
    section(
        &mut out,
        "graph",
        st.graph
            .edges
            .iter()
            .map(|(t, deps)| {
                let mut line = t.to_string();
                for d in deps {
                    line.push(' ');
                    line.push_str(d.as_str());
                }
                line
            })
            .collect(),
    );
    section(
        &mut out,
        "coverage",
        st.coverage
            .iter()
            .map(|(u, probes)| {
                let mut line = u.to_string();
                for p in probes {
                    write!(line, " {p}").unwrap();
                }
                line
            })
            .collect(),
    );
    out
}

struct Reader<'a> {
    path: &'a Path,
    lines: std::iter::Peekable<std::str::SplitInclusive<'a, char>>,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CorruptStore {
            path: self.path.to_owned(),
            reason: reason.into(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some(l) if l.ends_with('\n') => Ok(l),
            Some(_) => Err(self.corrupt("truncated line")),
            None => Err(self.corrupt("unexpected end of file")),
        }
    }

    fn section(&mut self, name: &str) -> Result<Vec<&'a str>> {
        let header = self.next_line()?;
        let count: usize = header
            .trim_end_matches('\n')
            .strip_prefix("section ")
            .and_then(|r| r.strip_prefix(name))
            .and_then(|r| r.strip_prefix(' '))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| self.corrupt(format!("expected `section {name} <n>`")))?;
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(header.as_bytes());
        let mut body = Vec::with_capacity(count);
        for _ in 0..count {
            let line = self.next_line()?;
            if line.starts_with("end ") {
                return Err(self.corrupt(format!("section {name} is short")));
            }
            hasher.update(line.as_bytes());
            body.push(line.trim_end_matches('\n'));
        }
        let end = self.next_line()?;
        let crc = end
            .trim_end_matches('\n')
            .strip_prefix("end ")
            .and_then(|r| r.strip_prefix(name))
            .and_then(|r| r.strip_prefix(' '))
            .filter(|c| c.len() == 8)
            .and_then(|c| u32::from_str_radix(c, 16).ok())
            .ok_or_else(|| self.corrupt(format!("expected `end {name} <crc32>`")))?;
        if crc != hasher.finalize() {
            return Err(self.corrupt(format!("checksum mismatch in section {name}")));
        }
        Ok(body)
    }
}

/// Parses a store file; `path` only labels errors.
pub fn decode_state(path: &Path, text: &str) -> Result<StoreState> {
    let mut r = Reader {
        path,
        lines: text.split_inclusive('\n').peekable(),
    };
    let header = r.next_line()?.trim_end_matches('\n');
    let mut fields = header.splitn(4, ' ');
    if fields.next() != Some(MAGIC) {
        return Err(r.corrupt("missing store header"));
    }
    let format = fields.next().unwrap_or_default();
    if format != FORMAT_VERSION {
        return Err(Error::IncompatibleStore {
            path: path.to_owned(),
            reason: format!("format {format}, expected {FORMAT_VERSION}"),
        });
    }
    let algorithm = fields.next().unwrap_or_default();
    if algorithm != DIGEST_ALGORITHM {
        return Err(Error::IncompatibleStore {
            path: path.to_owned(),
            reason: format!("digest algorithm {algorithm}, expected {DIGEST_ALGORITHM}"),
        });
    }
    let version_id = fields.next().unwrap_or_default().to_owned();

    let mut unit_digests = DigestTable::new();
    for line in r.section("digest")? {
        let (unit, hex) = line
            .split_once(' ')
            .ok_or_else(|| r.corrupt(format!("bad digest line `{line}`")))?;
        let digest =
            Digest256::from_hex(hex).ok_or_else(|| r.corrupt(format!("bad digest for {unit}")))?;
        let unit = UnitId::from(unit);
        unit_digests.insert(unit.clone(), UnitDigest { unit, digest });
    }

    let mut graph = DependencyGraph::new();
    for line in r.section("graph")? {
        let mut words = line.split(' ');
        let test = UnitId::from(words.next().unwrap_or_default());
        let deps: BTreeSet<UnitId> = words.map(UnitId::from).collect();
        if !deps.contains(&test) {
            return Err(r.corrupt(format!("graph entry {test} lacks its self-edge")));
        }
        graph.edges.insert(test, deps);
    }

    let mut coverage = CoverageData::new();
    for line in r.section("coverage")? {
        let mut words = line.split(' ');
        let unit = UnitId::from(words.next().unwrap_or_default());
        let probes = words
            .map(|w| w.parse::<u32>())
            .collect::<std::result::Result<BTreeSet<u32>, _>>()
            .map_err(|_| r.corrupt(format!("bad probe list for {unit}")))?;
        if probes.is_empty() {
            return Err(r.corrupt(format!("empty coverage entry for {unit}")));
        }
        coverage.set_unit(unit, probes);
    }

    if r.lines.peek().is_some() {
        return Err(r.corrupt("trailing data after coverage section"));
    }

    Ok(StoreState {
        version_id,
        digest_algorithm: algorithm.to_owned(),
        unit_digests,
        graph,
        coverage,
    })
}

/// Atomically writes `st` into `dir`, creating the directory if needed.
pub fn save_state(dir: &Path, st: &StoreState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let target = store_path(dir);
    let tmp = dir.join(format!(".{STORE_FILE}.tmp"));
    let bytes = encode_state(st);
    let write = || -> std::io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, &target)
    };
    write().map_err(|e| Error::io(format!("writing {}", target.display()), e))
}

/// `Ok(None)` when the directory holds no store yet (first version).
pub fn load_state(dir: &Path) -> Result<Option<StoreState>> {
    let path = store_path(dir);
    match fs::read(&path) {
        Ok(bytes) => {
            let text = String::from_utf8(bytes).map_err(|_| Error::CorruptStore {
                path: path.clone(),
                reason: "not UTF-8".to_owned(),
            })?;
            decode_state(&path, &text).map(Some)
        }
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(format!("reading {}", path.display()), e)),
    }
}

/// Exclusive writer lock on a store directory, released on drop.
#[derive(Debug)]
pub struct StoreLock {
    _file: File,
}

impl StoreLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(Error::StoreLocked { path }),
            Err(fs::TryLockError::Error(e)) => {
                Err(Error::io(format!("locking {}", path.display()), e))
            }
        }
    }
}
