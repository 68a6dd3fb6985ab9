//! Change detection by normalized checksums.
//!
//! A unit's checksum covers everything that can influence execution: function
//! ids, statement and branch structure, call targets and line numbers, plus
//! the current default of every condition the unit branches on. Comment text
//! is the only thing left out. Every field is length-prefixed so distinct
//! structures can never encode to the same bytes.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::model::{ChangeSet, Snapshot, Statement, Unit, UnitId};
use crate::par::{self, Parallelism};

/// Name recorded in the store header; stores written with another algorithm are rejected.
pub const DIGEST_ALGORITHM: &str = "sha256";

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest256(pub [u8; 32]);

impl Digest256 {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Self(out))
    }
}

impl fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest256({})", self.to_hex())
    }
}

impl fmt::Display for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitDigest {
    pub unit: UnitId,
    pub digest: Digest256,
}

impl UnitDigest {
    /// Digest of the unit's normalized encoding followed by the bindings of
    /// the conditions it references, so flipping a default invalidates
    /// exactly the units that branch on it.
    pub fn compute(unit: &Unit, conditions: &BTreeMap<String, bool>) -> Self {
        let mut bytes = normalized_encoding(unit);
        let referenced = unit.referenced_conditions();
        put_len(&mut bytes, referenced.len());
        for name in referenced {
            put_str(&mut bytes, name);
            bytes.push(match conditions.get(name) {
                Some(true) => 1,
                Some(false) => 0,
                None => 2,
            });
        }
        let hash = Sha256::digest(&bytes);
        let mut out = [0u8; 32];
        out.copy_from_slice(hash.as_slice());
        Self {
            unit: unit.id.clone(),
            digest: Digest256(out),
        }
    }
}

pub type DigestTable = BTreeMap<UnitId, UnitDigest>;

fn put_len(buf: &mut Vec<u8>, n: usize) {
    buf.extend_from_slice(&(n as u64).to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_len(buf, s.len());
    buf.extend_from_slice(s.as_bytes());
}

fn put_body(buf: &mut Vec<u8>, stmts: &[Statement]) {
    put_len(buf, stmts.len());
    for stmt in stmts {
        match stmt {
            Statement::Line(n) => {
                buf.push(b'L');
                buf.extend_from_slice(&n.to_le_bytes());
            }
            Statement::Call(t) => {
                buf.push(b'C');
                put_str(buf, t.unit.as_str());
                put_str(buf, t.function.as_str());
            }
            Statement::Branch {
                condition,
                then_arm,
                else_arm,
            } => {
                buf.push(b'B');
                put_str(buf, condition);
                put_body(buf, then_arm);
                put_body(buf, else_arm);
            }
            Statement::Return => buf.push(b'R'),
        }
    }
}

/// Canonical byte encoding of a unit with comment text stripped.
pub fn normalized_encoding(unit: &Unit) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64);
    buf.extend_from_slice(b"incov-unit\x01");
    put_str(&mut buf, unit.id.as_str());
    buf.push(unit.is_test as u8);
    put_len(&mut buf, unit.functions.len());
    for f in &unit.functions {
        put_str(&mut buf, f.id.as_str());
        put_body(&mut buf, &f.body);
    }
    buf
}

pub fn digest_units(snapshot: &Snapshot) -> DigestTable {
    digest_units_with(snapshot, Parallelism::default())
}

pub fn digest_units_with(snapshot: &Snapshot, mode: Parallelism) -> DigestTable {
    let units: Vec<&Unit> = snapshot.units.values().collect();
    par::map(mode, &units, |u| {
        UnitDigest::compute(u, &snapshot.condition_defaults)
    })
    .into_iter()
    .map(|d| (d.unit.clone(), d))
    .collect()
}

/// Diffs two digest tables.
pub fn changeset_from_digests(old: &DigestTable, new: &DigestTable) -> ChangeSet {
    let mut cs = ChangeSet::default();
    for (id, d) in new {
        match old.get(id) {
            None => {
                cs.added.insert(id.clone());
            }
            Some(prev) if prev.digest != d.digest => {
                cs.modified.insert(id.clone());
            }
            Some(_) => {}
        }
    }
    cs.removed = old
        .keys()
        .filter(|id| !new.contains_key(*id))
        .cloned()
        .collect();
    cs
}

pub fn compute_changeset(old: &Snapshot, new: &Snapshot) -> ChangeSet {
    changeset_from_digests(&digest_units(old), &digest_units(new))
}
