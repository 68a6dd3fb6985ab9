//! Instrumented interpreter.
//!
//! Running a test marks the probe of every block it enters and records every
//! unit whose function it enters in that test's dependency set. Tests share no
//! state, so they can run on separate workers and be unioned afterwards.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{
    Block, CoverageData, DependencyGraph, Exit, Op, Snapshot, TestId, UnitId, UnitLayout,
};
use crate::par::{self, Parallelism};

use super::DEFAULT_MAX_CALL_DEPTH;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Passed,
    Failed,
}

/// Artificial per-test cost, standing in for the runtime of a real test.
///
/// The cost is paid serially, once per executed test, whatever the
/// parallelism: it models the wall time of a single-worker test runner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestCost {
    Sleep(Duration),
    Spin(Duration),
}

impl TestCost {
    fn pay(self) {
        match self {
            TestCost::Sleep(d) => std::thread::sleep(d),
            TestCost::Spin(d) => {
                let start = Instant::now();
                while start.elapsed() < d {
                    std::hint::spin_loop();
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExecConfig {
    pub max_call_depth: usize,
    pub parallelism: Parallelism,
    pub test_cost: Option<TestCost>,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            max_call_depth: DEFAULT_MAX_CALL_DEPTH,
            parallelism: Parallelism::default(),
            test_cost: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecutionResult {
    pub coverage_delta: CoverageData,
    pub dep_delta: DependencyGraph,
    pub outcomes: BTreeMap<TestId, Outcome>,
    pub executed_count: usize,
}

struct CompiledUnit {
    layout: UnitLayout,
    by_name: HashMap<String, usize>,
}

struct Program<'s> {
    snapshot: &'s Snapshot,
    units: HashMap<&'s str, CompiledUnit>,
}

impl<'s> Program<'s> {
    fn compile(snapshot: &'s Snapshot, mode: Parallelism) -> Self {
        let pairs: Vec<_> = snapshot.units.iter().collect();
        let compiled = par::map(mode, &pairs, |(_, unit)| CompiledUnit {
            layout: unit.layout(),
            by_name: unit
                .functions
                .iter()
                .enumerate()
                .map(|(i, f)| (f.id.as_str().to_owned(), i))
                .collect(),
        });
        let units = pairs
            .iter()
            .map(|(id, _)| id.as_str())
            .zip(compiled)
            .collect();
        Self { snapshot, units }
    }
}

struct Overflow;

enum Flow {
    Continue,
    Returned,
}

struct TestRun<'p, 's> {
    program: &'p Program<'s>,
    max_depth: usize,
    deps: BTreeSet<UnitId>,
    hits: BTreeMap<UnitId, BTreeSet<u32>>,
}

impl TestRun<'_, '_> {
    fn call(&mut self, unit: &UnitId, function: usize, depth: usize) -> Result<(), Overflow> {
        if depth > self.max_depth {
            return Err(Overflow);
        }
        if !self.deps.contains(unit) {
            self.deps.insert(unit.clone());
        }
        let compiled = &self.program.units[unit.as_str()];
        self.block(unit, &compiled.layout.functions[function].entry, depth)?;
        Ok(())
    }

    fn block(&mut self, unit: &UnitId, block: &Block, depth: usize) -> Result<Flow, Overflow> {
        match self.hits.get_mut(unit) {
            Some(set) => {
                set.insert(block.probe);
            }
            None => {
                self.hits
                    .insert(unit.clone(), BTreeSet::from([block.probe]));
            }
        }
        for op in &block.ops {
            if let Op::Call(target) = op {
                let index =
                    self.program.units[target.unit.as_str()].by_name[target.function.as_str()];
                self.call(&target.unit, index, depth + 1)?;
            }
        }
        match &block.exit {
            Exit::Fallthrough => Ok(Flow::Continue),
            Exit::Return { .. } => Ok(Flow::Returned),
            Exit::Branch {
                condition,
                then_arm,
                else_arm,
                join,
            } => {
                let taken = self.program.snapshot.condition_defaults[condition.as_str()];
                let arm = if taken { then_arm } else { else_arm };
                if let Flow::Returned = self.block(unit, arm, depth)? {
                    return Ok(Flow::Returned);
                }
                match join {
                    Some(next) => self.block(unit, next, depth),
                    None => Ok(Flow::Continue),
                }
            }
        }
    }
}

struct TestOutput {
    deps: BTreeSet<UnitId>,
    hits: BTreeMap<UnitId, BTreeSet<u32>>,
    outcome: Outcome,
}

fn run_test(program: &Program<'_>, test: &TestId, config: &ExecConfig) -> TestOutput {
    let unit = &program.snapshot.units[test];
    let mut run = TestRun {
        program,
        max_depth: config.max_call_depth,
        deps: BTreeSet::from([test.clone()]),
        hits: BTreeMap::new(),
    };
    let mut outcome = Outcome::Passed;
    for index in 0..unit.functions.len() {
        if run.call(test, index, 1).is_err() {
            outcome = Outcome::Failed;
            break;
        }
    }
    TestOutput {
        deps: run.deps,
        hits: run.hits,
        outcome,
    }
}

/// Runs `tests` with the default configuration.
pub fn execute_tests(s: &Snapshot, tests: &BTreeSet<TestId>) -> Result<ExecutionResult> {
    execute_tests_with(s, tests, &ExecConfig::default())
}

/// Runs every function of each test unit in declaration order.
///
/// A test fails when its call depth exceeds `max_call_depth`; the probes and
/// dependencies it reached before failing are kept.
pub fn execute_tests_with(
    s: &Snapshot,
    tests: &BTreeSet<TestId>,
    config: &ExecConfig,
) -> Result<ExecutionResult> {
    if let Some(unknown) = tests.iter().find(|t| !s.tests.contains(*t)) {
        return Err(Error::UnknownTest(unknown.clone()));
    }
    let program = Program::compile(s, config.parallelism);
    let order: Vec<&TestId> = tests.iter().collect();
    let outputs = par::map(config.parallelism, &order, |t| {
        run_test(&program, t, config)
    });
    if let Some(cost) = config.test_cost {
        for _ in &order {
            cost.pay();
        }
    }

    let mut result = ExecutionResult {
        executed_count: order.len(),
        ..ExecutionResult::default()
    };
    for (test, out) in order.into_iter().zip(outputs) {
        for (unit, probes) in &out.hits {
            for &p in probes {
                result.coverage_delta.mark(unit, p);
            }
        }
        result.dep_delta.insert(test.clone(), out.deps);
        result.outcomes.insert(test.clone(), out.outcome);
    }
    Ok(result)
}
