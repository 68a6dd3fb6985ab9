//! Domain vocabulary shared by every stage of the pipeline.
//!
//! A [`Snapshot`] is one version of a mini-language codebase. Units play the
//! role of classes: both the dependency graph and the coverage data are keyed
//! at unit granularity. Tests are units too, flagged with `is_test`.
//!
//! All identifiers order lexicographically and every collection here is a
//! `BTreeMap`/`BTreeSet`, so iteration order (and therefore every serialized
//! artifact) is deterministic.

mod layout;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use layout::{Block, BlockInfo, BranchArms, Exit, FunctionLayout, Op, UnitLayout};

/// Default bound on `if` nesting inside one function.
pub const DEFAULT_MAX_BRANCH_DEPTH: usize = 8;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// Identifies a unit (the class-granularity key of graphs and coverage).
    UnitId
);
string_id!(
    /// Identifies a function within its unit.
    FunctionId
);

/// Tests are units; the alias documents the role at use sites.
pub type TestId = UnitId;

/// A probe: owned by exactly one basic block of one unit.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProbeId {
    pub unit: UnitId,
    pub index: u32,
}

impl fmt::Display for ProbeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.unit, self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CallTarget {
    pub unit: UnitId,
    pub function: FunctionId,
}

impl CallTarget {
    pub fn new(unit: impl Into<UnitId>, function: impl Into<FunctionId>) -> Self {
        Self {
            unit: unit.into(),
            function: function.into(),
        }
    }
}

impl fmt::Display for CallTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.unit, self.function)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Statement {
    Call(CallTarget),
    Branch {
        condition: String,
        then_arm: Vec<Statement>,
        else_arm: Vec<Statement>,
    },
    Line(u32),
    Return,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub id: FunctionId,
    pub body: Vec<Statement>,
}

impl Function {
    pub fn new(id: impl Into<FunctionId>, body: Vec<Statement>) -> Self {
        Self {
            id: id.into(),
            body,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unit {
    pub id: UnitId,
    pub is_test: bool,
    pub functions: Vec<Function>,
    /// Free text carried along with the unit but invisible to checksums.
    pub comment_text: String,
}

impl Unit {
    pub fn new(id: impl Into<UnitId>, is_test: bool, functions: Vec<Function>) -> Self {
        Self {
            id: id.into(),
            is_test,
            functions,
            comment_text: String::new(),
        }
    }

    pub fn function(&self, id: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.id.as_str() == id)
    }

    /// Number of `line` statements in the unit.
    pub fn source_lines(&self) -> usize {
        fn count(stmts: &[Statement]) -> usize {
            stmts
                .iter()
                .map(|s| match s {
                    Statement::Line(_) => 1,
                    Statement::Branch {
                        then_arm, else_arm, ..
                    } => count(then_arm) + count(else_arm),
                    _ => 0,
                })
                .sum()
        }
        self.functions.iter().map(|f| count(&f.body)).sum()
    }

    /// Names of all conditions tested by any branch in the unit.
    pub fn referenced_conditions(&self) -> BTreeSet<&str> {
        fn walk<'a>(stmts: &'a [Statement], out: &mut BTreeSet<&'a str>) {
            for s in stmts {
                if let Statement::Branch {
                    condition,
                    then_arm,
                    else_arm,
                } = s
                {
                    out.insert(condition.as_str());
                    walk(then_arm, out);
                    walk(else_arm, out);
                }
            }
        }
        let mut out = BTreeSet::new();
        for f in &self.functions {
            walk(&f.body, &mut out);
        }
        out
    }

    /// Block structure and probe assignment of the unit.
    pub fn layout(&self) -> UnitLayout {
        UnitLayout::build(self)
    }
}

/// One version of the codebase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub version_id: String,
    pub units: BTreeMap<UnitId, Unit>,
    pub tests: BTreeSet<TestId>,
    pub condition_defaults: BTreeMap<String, bool>,
}

impl Snapshot {
    /// Builds a snapshot whose test set is derived from the units' `is_test` flags.
    pub fn new(
        version_id: impl Into<String>,
        units: impl IntoIterator<Item = Unit>,
        condition_defaults: BTreeMap<String, bool>,
    ) -> Self {
        let units: BTreeMap<UnitId, Unit> = units.into_iter().map(|u| (u.id.clone(), u)).collect();
        let tests = units
            .values()
            .filter(|u| u.is_test)
            .map(|u| u.id.clone())
            .collect();
        Self {
            version_id: version_id.into(),
            units,
            tests,
            condition_defaults,
        }
    }

    pub fn unit_ids(&self) -> BTreeSet<UnitId> {
        self.units.keys().cloned().collect()
    }

    pub fn validate(&self) -> Vec<String> {
        validate_snapshot(self, DEFAULT_MAX_BRANCH_DEPTH)
    }
}

/// Lists every violated snapshot invariant; an empty list means the snapshot is valid.
pub fn validate_snapshot(s: &Snapshot, max_branch_depth: usize) -> Vec<String> {
    let mut out = Vec::new();

    for t in &s.tests {
        match s.units.get(t) {
            None => out.push(format!("test {t} has no unit")),
            Some(u) if !u.is_test => out.push(format!("test {t} is not marked as a test unit")),
            Some(_) => {}
        }
    }

    for (key, unit) in &s.units {
        if key.as_str().is_empty() {
            out.push("empty unit id".to_owned());
        }
        if key != &unit.id {
            out.push(format!("unit keyed as {key} has id {}", unit.id));
        }
        if unit.is_test && !s.tests.contains(key) {
            out.push(format!("test unit {key} is missing from the test set"));
        }

        let mut seen = BTreeSet::new();
        for f in &unit.functions {
            if f.id.as_str().is_empty() {
                out.push(format!("empty function id in {key}"));
            }
            if !seen.insert(f.id.as_str()) {
                out.push(format!("duplicate function {key}.{}", f.id));
            }
            let mut checker = BodyChecker {
                snapshot: s,
                site: format!("{key}.{}", f.id),
                last_line: None,
                max_depth: max_branch_depth,
                out: &mut out,
            };
            checker.check(&f.body, 1);
        }
    }

    out
}

struct BodyChecker<'a> {
    snapshot: &'a Snapshot,
    site: String,
    last_line: Option<u32>,
    max_depth: usize,
    out: &'a mut Vec<String>,
}

impl BodyChecker<'_> {
    fn check(&mut self, stmts: &[Statement], depth: usize) {
        for stmt in stmts {
            match stmt {
                Statement::Line(n) => {
                    if let Some(prev) = self.last_line {
                        if *n <= prev {
                            self.out.push(format!(
                                "line {n} in {} does not increase (previous {prev})",
                                self.site
                            ));
                        }
                    }
                    self.last_line = Some(*n);
                }
                Statement::Call(target) => {
                    let resolves = self
                        .snapshot
                        .units
                        .get(&target.unit)
                        .is_some_and(|u| u.function(target.function.as_str()).is_some());
                    if !resolves {
                        self.out
                            .push(format!("dangling call {} → {target}", self.site));
                    }
                }
                Statement::Branch {
                    condition,
                    then_arm,
                    else_arm,
                } => {
                    if depth > self.max_depth {
                        self.out.push(format!(
                            "branch nesting in {} exceeds depth {}",
                            self.site, self.max_depth
                        ));
                    }
                    if !self.snapshot.condition_defaults.contains_key(condition) {
                        self.out
                            .push(format!("undeclared condition {condition} in {}", self.site));
                    }
                    self.check(then_arm, depth + 1);
                    self.check(else_arm, depth + 1);
                }
                Statement::Return => {}
            }
        }
    }
}

/// Test → units it touched while running (including itself).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub edges: BTreeMap<TestId, BTreeSet<UnitId>>,
}

impl DependencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `deps` for `test`, adding the mandatory self-edge.
    pub fn insert(&mut self, test: TestId, deps: impl IntoIterator<Item = UnitId>) {
        let mut set: BTreeSet<UnitId> = deps.into_iter().collect();
        set.insert(test.clone());
        self.edges.insert(test, set);
    }

    pub fn get(&self, test: &TestId) -> Option<&BTreeSet<UnitId>> {
        self.edges.get(test)
    }

    pub fn contains_test(&self, test: &TestId) -> bool {
        self.edges.contains_key(test)
    }

    pub fn tests(&self) -> BTreeSet<TestId> {
        self.edges.keys().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    /// Tests missing their self-edge.
    pub fn missing_self_edges(&self) -> Vec<TestId> {
        self.edges
            .iter()
            .filter(|(t, deps)| !deps.contains(*t))
            .map(|(t, _)| t.clone())
            .collect()
    }
}

/// Unit → executed probe indices. Units with no executed probe are absent.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageData {
    hits: BTreeMap<UnitId, BTreeSet<u32>>,
}

impl CoverageData {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(hits: BTreeMap<UnitId, BTreeSet<u32>>) -> Self {
        Self {
            hits: hits.into_iter().filter(|(_, p)| !p.is_empty()).collect(),
        }
    }

    pub fn mark(&mut self, unit: &UnitId, probe: u32) {
        match self.hits.get_mut(unit) {
            Some(set) => {
                set.insert(probe);
            }
            None => {
                self.hits.insert(unit.clone(), BTreeSet::from([probe]));
            }
        }
    }

    /// Replaces the probe set of `unit`; an empty set removes the entry.
    pub fn set_unit(&mut self, unit: UnitId, probes: BTreeSet<u32>) {
        if probes.is_empty() {
            self.hits.remove(&unit);
        } else {
            self.hits.insert(unit, probes);
        }
    }

    pub fn get(&self, unit: &UnitId) -> Option<&BTreeSet<u32>> {
        self.hits.get(unit)
    }

    pub fn contains(&self, probe: &ProbeId) -> bool {
        self.hits
            .get(&probe.unit)
            .is_some_and(|s| s.contains(&probe.index))
    }

    pub fn units(&self) -> impl Iterator<Item = &UnitId> {
        self.hits.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&UnitId, &BTreeSet<u32>)> {
        self.hits.iter()
    }

    pub fn probes(&self) -> impl Iterator<Item = ProbeId> + '_ {
        self.hits.iter().flat_map(|(u, set)| {
            set.iter().map(move |&index| ProbeId {
                unit: u.clone(),
                index,
            })
        })
    }

    pub fn union_with(&mut self, other: &CoverageData) {
        for (u, set) in &other.hits {
            self.hits.entry(u.clone()).or_default().extend(set);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn probe_count(&self) -> usize {
        self.hits.values().map(BTreeSet::len).sum()
    }

    pub fn as_map(&self) -> &BTreeMap<UnitId, BTreeSet<u32>> {
        &self.hits
    }
}

/// Units that differ between two snapshots.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeSet {
    pub modified: BTreeSet<UnitId>,
    pub added: BTreeSet<UnitId>,
    pub removed: BTreeSet<UnitId>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.modified.is_empty() && self.added.is_empty() && self.removed.is_empty()
    }

    /// Units whose old behavior no longer holds: modified or removed.
    pub fn invalidated(&self) -> BTreeSet<UnitId> {
        self.modified.union(&self.removed).cloned().collect()
    }
}

/// The three sets computed by the analysis phase.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub rts_selected: BTreeSet<TestId>,
    pub affected_units: BTreeSet<UnitId>,
    pub final_selected: BTreeSet<TestId>,
}
