//! Seeded synthetic version histories.
//!
//! The initial snapshot groups units into packages of about ten. Calls only go
//! from a unit to units of strictly higher rank, mostly inside the caller's
//! package, so call graphs are acyclic apart from a rare condition-guarded
//! self call (which overflows the call-depth cap when taken). Tests call into
//! their own package. Each later version applies random edits: statement
//! edits, call retargeting and removal, line shifts, unit and test additions
//! and deletions, condition flips, and comment-only edits. Consecutive
//! versions always differ in at least one unit checksum.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::changedet::{changeset_from_digests, digest_units};
use crate::error::{Error, Result};
use crate::model::{CallTarget, Function, Snapshot, Statement, Unit, UnitId};

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryParams {
    /// Non-test units in the first version.
    pub units: usize,
    /// Test units in the first version.
    pub tests: usize,
    pub versions: usize,
    /// Per-unit probability of a code edit in each version.
    pub edit_rate: f64,
    /// Per-unit probability of spawning a new unit or test in each version.
    pub add_rate: f64,
    /// Per-unit probability of deletion in each version.
    pub delete_rate: f64,
    /// Per-condition probability of flipping its default in each version.
    pub branch_flip_rate: f64,
}

impl Default for HistoryParams {
    fn default() -> Self {
        Self {
            units: 100,
            tests: 30,
            versions: 50,
            edit_rate: 0.05,
            add_rate: 0.01,
            delete_rate: 0.01,
            branch_flip_rate: 0.02,
        }
    }
}

impl HistoryParams {
    /// Few edits per version; useful for selection-economy measurements.
    pub fn low_churn() -> Self {
        Self {
            edit_rate: 0.02,
            add_rate: 0.002,
            delete_rate: 0.002,
            branch_flip_rate: 0.005,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.units == 0 || self.tests == 0 || self.versions == 0 {
            return Err(Error::Param(
                "units, tests and versions must be positive".into(),
            ));
        }
        let rates = [
            ("edit_rate", self.edit_rate),
            ("add_rate", self.add_rate),
            ("delete_rate", self.delete_rate),
            ("branch_flip_rate", self.branch_flip_rate),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Param(format!("{name} = {r} is outside [0, 1]")));
            }
        }
        if rates.iter().all(|(_, r)| *r == 0.0) {
            return Err(Error::Param(
                "all rates are zero, so consecutive versions cannot differ".into(),
            ));
        }
        Ok(())
    }
}

const PACKAGE_SIZE: usize = 10;
const SAME_PACKAGE_CALL: f64 = 0.95;
const CONDS_PER_PACKAGE: usize = 3;
const MAX_GEN_DEPTH: usize = 2;

struct World {
    rng: ChaCha8Rng,
    packages: usize,
    ranks: BTreeMap<UnitId, u32>,
    package_of: BTreeMap<UnitId, usize>,
    units: BTreeMap<UnitId, Unit>,
    conds: BTreeMap<String, bool>,
    next_unit: usize,
    next_test: usize,
    revision: usize,
}

impl World {
    fn new(seed: u64, params: &HistoryParams) -> Self {
        let mut w = World {
            rng: ChaCha8Rng::seed_from_u64(seed),
            packages: params.units.div_ceil(PACKAGE_SIZE).max(1),
            ranks: BTreeMap::new(),
            package_of: BTreeMap::new(),
            units: BTreeMap::new(),
            conds: BTreeMap::new(),
            next_unit: 0,
            next_test: 0,
            revision: 0,
        };
        for pkg in 0..w.packages {
            for i in 0..CONDS_PER_PACKAGE {
                let v = w.rng.random_bool(0.5);
                w.conds.insert(format!("p{pkg:02}_k{i}"), v);
            }
        }
        for i in 0..params.units {
            let pkg = i % w.packages;
            w.create_unit(pkg);
        }
        for i in 0..params.tests {
            let pkg = i % w.packages;
            w.create_test(pkg);
        }
        w
    }

    fn snapshot(&self, version: usize) -> Snapshot {
        Snapshot::new(
            format!("v{version:04}"),
            self.units.values().cloned(),
            self.conds.clone(),
        )
    }

    /// A condition local to `pkg`.
    fn random_cond(&mut self, pkg: usize) -> String {
        let i = self.rng.random_range(0..CONDS_PER_PACKAGE);
        format!("p{pkg:02}_k{i}")
    }

    fn pick_target(&mut self, pkg: usize, min_rank: Option<u32>) -> Option<CallTarget> {
        let same = self.rng.random_bool(SAME_PACKAGE_CALL);
        let candidates: Vec<&UnitId> = self
            .ranks
            .iter()
            .filter(|(id, r)| {
                min_rank.is_none_or(|m| **r > m) && (!same || self.package_of[*id] == pkg)
            })
            .map(|(id, _)| id)
            .collect();
        let id = (*candidates.choose(&mut self.rng)?).clone();
        let unit = &self.units[&id];
        let f = unit.functions.choose(&mut self.rng)?.id.clone();
        Some(CallTarget {
            unit: id,
            function: f,
        })
    }

    fn gen_body(&mut self, owner: &UnitId, depth: usize) -> Vec<Statement> {
        let pkg = self.package_of[owner];
        let rank = self.ranks.get(owner).copied();
        let n = self.rng.random_range(1..=4);
        let mut body = vec![Statement::Line(0)];
        for _ in 0..n {
            let roll: f64 = self.rng.random();
            if roll < 0.40 {
                body.push(Statement::Line(0));
            } else if roll < 0.75 {
                if let Some(t) = self.pick_target(pkg, Some(rank.unwrap_or(0))) {
                    body.push(Statement::Call(t));
                } else {
                    body.push(Statement::Line(0));
                }
            } else if depth < MAX_GEN_DEPTH {
                let condition = self.random_cond(pkg);
                let then_arm = self.gen_body(owner, depth + 1);
                let else_arm = if self.rng.random_bool(0.5) {
                    self.gen_body(owner, depth + 1)
                } else {
                    Vec::new()
                };
                body.push(Statement::Branch {
                    condition,
                    then_arm,
                    else_arm,
                });
            }
        }
        if self.rng.random_bool(0.1) {
            body.push(Statement::Return);
        }
        body
    }

    fn create_unit(&mut self, pkg: usize) -> UnitId {
        let id = UnitId::new(format!("p{pkg:02}.c{:04}", self.next_unit));
        self.next_unit += 1;
        let rank = self.rng.random::<u32>();
        self.ranks.insert(id.clone(), rank);
        self.package_of.insert(id.clone(), pkg);
        self.units
            .insert(id.clone(), Unit::new(id.clone(), false, Vec::new()));
        let n_fns = self.rng.random_range(1..=3);
        let mut functions = Vec::with_capacity(n_fns);
        for i in 0..n_fns {
            let fid = format!("f{i}");
            let mut body = self.gen_body(&id, 0);
            if self.rng.random_bool(0.02) {
                body.push(Statement::Branch {
                    condition: self.random_cond(pkg),
                    then_arm: vec![Statement::Call(CallTarget::new(id.clone(), fid.as_str()))],
                    else_arm: Vec::new(),
                });
            }
            functions.push(Function::new(fid, body));
        }
        let unit = self.units.get_mut(&id).unwrap();
        unit.functions = functions;
        renumber(unit);
        id
    }

    fn create_test(&mut self, pkg: usize) -> UnitId {
        let id = UnitId::new(format!("p{pkg:02}.t{:04}", self.next_test));
        self.next_test += 1;
        self.package_of.insert(id.clone(), pkg);
        let n_fns = self.rng.random_range(1..=2);
        let mut functions = Vec::with_capacity(n_fns);
        for i in 0..n_fns {
            let mut body = vec![Statement::Line(0)];
            for _ in 0..self.rng.random_range(1..=3) {
                if let Some(t) = self.pick_target(pkg, None) {
                    body.push(Statement::Call(t));
                }
            }
            functions.push(Function::new(format!("test{i}"), body));
        }
        let mut unit = Unit::new(id.clone(), true, functions);
        renumber(&mut unit);
        self.units.insert(id.clone(), unit);
        id
    }

    fn edit_unit(&mut self, id: &UnitId) {
        let is_test = self.units[id].is_test;
        let pkg = self.package_of[id];
        let rank = self.ranks.get(id).copied();
        let kind = if is_test {
            [0u8, 2, 6, 8][self.rng.random_range(0..4)]
        } else {
            self.rng.random_range(0..9u8)
        };
        let n_fns = self.units[id].functions.len();
        if n_fns == 0 {
            return;
        }
        let fi = self.rng.random_range(0..n_fns);
        let new_call = self.pick_target(
            pkg,
            if is_test {
                None
            } else {
                Some(rank.unwrap_or(0))
            },
        );
        let new_body = (kind == 4).then(|| self.gen_body(id, 1));
        let cond = self.random_cond(pkg);
        let roll: u64 = self.rng.random();

        let unit = self.units.get_mut(id).unwrap();
        let body = &mut unit.functions[fi].body;
        let pos = (roll as usize) % (body.len() + 1);
        match kind {
            0 => body.insert(pos, Statement::Line(0)),
            1 if body.len() > 1 => {
                body.remove(pos.min(body.len() - 1));
            }
            2 | 3 if new_call.is_some() => {
                let target = new_call.unwrap();
                let calls: Vec<usize> = (0..body.len())
                    .filter(|&i| matches!(body[i], Statement::Call(_)))
                    .collect();
                if kind == 3 && !calls.is_empty() {
                    let i = calls[(roll as usize / 7) % calls.len()];
                    body[i] = Statement::Call(target);
                } else {
                    body.insert(pos, Statement::Call(target));
                }
            }
            4 => body.insert(
                pos,
                Statement::Branch {
                    condition: cond,
                    then_arm: new_body.unwrap(),
                    else_arm: vec![Statement::Line(0)],
                },
            ),
            5 => {
                if matches!(body.last(), Some(Statement::Return)) {
                    body.pop();
                } else {
                    body.push(Statement::Return);
                }
            }
            7 => {
                let fid = format!("f{}", unit.functions.len());
                unit.functions
                    .push(Function::new(fid, vec![Statement::Line(0)]));
            }
            8 => {
                let calls: Vec<usize> = (0..body.len())
                    .filter(|&i| matches!(body[i], Statement::Call(_)))
                    .collect();
                let keep = if is_test { 1 } else { 0 };
                if calls.len() > keep {
                    body.remove(calls[(roll as usize / 5) % calls.len()]);
                } else {
                    body.insert(pos, Statement::Line(0));
                }
            }
            _ => {
                shift_lines(unit, (roll % 3 + 1) as u32, roll as usize);
                return;
            }
        }
        renumber(unit);
    }

    fn delete_unit(&mut self, id: &UnitId) {
        self.units.remove(id);
        self.ranks.remove(id);
        self.package_of.remove(id);
        for u in self.units.values_mut() {
            for f in &mut u.functions {
                strip_calls_to(&mut f.body, id);
            }
        }
    }

    fn step(&mut self, params: &HistoryParams) {
        self.revision += 1;
        let ids: Vec<UnitId> = self.units.keys().cloned().collect();

        let mut to_delete = Vec::new();
        for id in &ids {
            if self.rng.random_bool(params.delete_rate) {
                to_delete.push(id.clone());
            }
        }
        for id in to_delete {
            let is_test = self.units[&id].is_test;
            let remaining = self.units.values().filter(|u| u.is_test == is_test).count();
            if remaining > 1 {
                self.delete_unit(&id);
            }
        }

        let ids: Vec<UnitId> = self.units.keys().cloned().collect();
        for id in &ids {
            if self.rng.random_bool(params.edit_rate) {
                self.edit_unit(id);
            }
            if self.rng.random_bool(params.edit_rate / 2.0) {
                let rev = self.revision;
                self.units.get_mut(id).unwrap().comment_text = format!(" revision {rev}");
            }
        }

        let test_share =
            self.units.values().filter(|u| u.is_test).count() as f64 / ids.len() as f64;
        for _ in &ids {
            if !self.rng.random_bool(params.add_rate) {
                continue;
            }
            let pkg = self.rng.random_range(0..self.packages);
            if self.rng.random_bool(test_share) {
                self.create_test(pkg);
            } else {
                let new_id = self.create_unit(pkg);
                let new_rank = self.ranks[&new_id];
                let callers: Vec<UnitId> = self
                    .ranks
                    .iter()
                    .filter(|(c, r)| **r < new_rank && self.package_of[*c] == pkg)
                    .map(|(c, _)| c.clone())
                    .collect();
                if self.rng.random_bool(0.7) {
                    if let Some(caller) = callers.choose(&mut self.rng).cloned() {
                        let unit = self.units.get_mut(&caller).unwrap();
                        let target = CallTarget::new(new_id.clone(), "f0");
                        unit.functions[0].body.push(Statement::Call(target));
                    }
                }
            }
        }

        let names: Vec<String> = self.conds.keys().cloned().collect();
        for name in names {
            if self.rng.random_bool(params.branch_flip_rate) {
                let v = self.conds.get_mut(&name).unwrap();
                *v = !*v;
            }
        }
    }

    fn force_change(&mut self) {
        let ids: Vec<UnitId> = self.units.keys().cloned().collect();
        let id = ids
            .choose(&mut self.rng)
            .expect("history keeps at least one unit")
            .clone();
        let at = self.rng.random_range(0..8);
        shift_lines(self.units.get_mut(&id).unwrap(), 1, at);
    }
}

fn for_each_line(stmts: &mut [Statement], f: &mut impl FnMut(&mut u32)) {
    for s in stmts {
        match s {
            Statement::Line(n) => f(n),
            Statement::Branch {
                then_arm, else_arm, ..
            } => {
                for_each_line(then_arm, f);
                for_each_line(else_arm, f);
            }
            _ => {}
        }
    }
}

/// Numbers every line of the unit 1, 2, 3, ... in textual order.
fn renumber(unit: &mut Unit) {
    let mut next = 1;
    for f in &mut unit.functions {
        for_each_line(&mut f.body, &mut |n| {
            *n = next;
            next += 1;
        });
    }
}

/// Moves every line from the `skip`-th one onwards down by `by`, as if blank lines were inserted.
fn shift_lines(unit: &mut Unit, by: u32, skip: usize) {
    let total = unit.source_lines();
    let skip = if total == 0 { 0 } else { skip % total };
    let mut seen = 0;
    for f in &mut unit.functions {
        for_each_line(&mut f.body, &mut |n| {
            if seen >= skip {
                *n += by;
            }
            seen += 1;
        });
    }
}

fn strip_calls_to(stmts: &mut Vec<Statement>, unit: &UnitId) {
    stmts.retain(|s| !matches!(s, Statement::Call(t) if &t.unit == unit));
    for s in stmts {
        if let Statement::Branch {
            then_arm, else_arm, ..
        } = s
        {
            strip_calls_to(then_arm, unit);
            strip_calls_to(else_arm, unit);
        }
    }
}

/// Generates `params.versions` snapshots, deterministic in `seed`.
pub fn generate_history(seed: u64, params: &HistoryParams) -> Result<Vec<Snapshot>> {
    params.validate()?;
    let mut world = World::new(seed, params);
    let mut history = Vec::with_capacity(params.versions);
    let mut prev = world.snapshot(1);
    let mut prev_digests = digest_units(&prev);
    for version in 2..=params.versions {
        world.step(params);
        let mut next = world.snapshot(version);
        let mut digests = digest_units(&next);
        while changeset_from_digests(&prev_digests, &digests).is_empty() {
            world.force_change();
            next = world.snapshot(version);
            digests = digest_units(&next);
        }
        debug_assert!(next.validate().is_empty(), "{:?}", next.validate());
        history.push(std::mem::replace(&mut prev, next));
        prev_digests = digests;
    }
    history.push(prev);
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HistoryParams {
        HistoryParams {
            units: 20,
            tests: 5,
            versions: 10,
            ..HistoryParams::default()
        }
    }

    #[test]
    fn same_seed_same_history() {
        assert_eq!(
            generate_history(7, &small()).unwrap(),
            generate_history(7, &small()).unwrap()
        );
        assert_ne!(
            generate_history(7, &small()).unwrap(),
            generate_history(8, &small()).unwrap()
        );
    }

    #[test]
    fn all_zero_rates_are_rejected() {
        let p = HistoryParams {
            edit_rate: 0.0,
            add_rate: 0.0,
            delete_rate: 0.0,
            branch_flip_rate: 0.0,
            ..small()
        };
        assert!(matches!(generate_history(1, &p), Err(Error::Param(_))));
    }

    #[test]
    fn out_of_range_rate_is_rejected() {
        let p = HistoryParams {
            edit_rate: 1.5,
            ..small()
        };
        assert!(matches!(p.validate(), Err(Error::Param(_))));
        let p = HistoryParams {
            tests: 0,
            ..small()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn every_version_is_valid_and_changes_something() {
        let h = generate_history(
            3,
            &HistoryParams {
                versions: 30,
                ..small()
            },
        )
        .unwrap();
        assert_eq!(h.len(), 30);
        for s in &h {
            assert_eq!(s.validate(), Vec::<String>::new(), "{}", s.version_id);
        }
        for pair in h.windows(2) {
            let cs = changeset_from_digests(&digest_units(&pair[0]), &digest_units(&pair[1]));
            assert!(
                !cs.is_empty(),
                "{} -> {}",
                pair[0].version_id,
                pair[1].version_id
            );
        }
        let ids: Vec<&str> = h.iter().map(|s| s.version_id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn only_deletions_still_change_every_version() {
        let p = HistoryParams {
            edit_rate: 0.0,
            add_rate: 0.0,
            delete_rate: 0.05,
            branch_flip_rate: 0.0,
            ..small()
        };
        let h = generate_history(11, &p).unwrap();
        assert_eq!(h.len(), 10);
    }
}
