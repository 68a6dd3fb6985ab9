//! Basic-block partitioning and probe assignment.
//!
//! Each function body is cut into blocks at branch boundaries and after
//! `return`. Every block owns exactly one probe. Probe indices are dense
//! within a unit and follow a single canonical traversal: functions in
//! declaration order, blocks in pre-order (a block, then its `then` arm,
//! its `else` arm, and finally the join block after the branch).
//!
//! Every branch gets two arm blocks even when an arm is empty, so a
//! fall-through `else` is still observable as a covered or missed arm.

use super::{CallTarget, Statement, Unit};

/// Straight-line content of a block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Line(u32),
    Call(CallTarget),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Exit {
    Fallthrough,
    /// `dead` holds statements after the return; they get probes but never run.
    Return {
        dead: Option<Box<Block>>,
    },
    Branch {
        condition: String,
        then_arm: Box<Block>,
        else_arm: Box<Block>,
        join: Option<Box<Block>>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub probe: u32,
    pub ops: Vec<Op>,
    pub exit: Exit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchArms {
    pub then_probe: u32,
    pub else_probe: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockInfo {
    /// Index into `Unit::functions`.
    pub function: usize,
    pub lines: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionLayout {
    pub entry: Block,
    pub branches: Vec<BranchArms>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitLayout {
    /// Indexed by probe.
    pub blocks: Vec<BlockInfo>,
    /// Parallel to `Unit::functions`.
    pub functions: Vec<FunctionLayout>,
}

impl UnitLayout {
    pub fn build(unit: &Unit) -> Self {
        let mut blocks = Vec::new();
        let mut functions = Vec::with_capacity(unit.functions.len());
        for (fi, f) in unit.functions.iter().enumerate() {
            let mut lower = Lowering {
                function: fi,
                blocks: &mut blocks,
                branches: Vec::new(),
            };
            let entry = lower.block(&f.body);
            let branches = lower.branches;
            functions.push(FunctionLayout { entry, branches });
        }
        Self { blocks, functions }
    }

    pub fn probe_count(&self) -> u32 {
        self.blocks.len() as u32
    }

    pub fn entry_probe(&self, function: usize) -> u32 {
        self.functions[function].entry.probe
    }
}

struct Lowering<'a> {
    function: usize,
    blocks: &'a mut Vec<BlockInfo>,
    branches: Vec<BranchArms>,
}

impl Lowering<'_> {
    fn block(&mut self, stmts: &[Statement]) -> Block {
        let probe = self.blocks.len() as u32;
        self.blocks.push(BlockInfo {
            function: self.function,
            lines: Vec::new(),
        });
        let mut ops = Vec::new();
        for (i, stmt) in stmts.iter().enumerate() {
            match stmt {
                Statement::Line(n) => {
                    self.blocks[probe as usize].lines.push(*n);
                    ops.push(Op::Line(*n));
                }
                Statement::Call(t) => ops.push(Op::Call(t.clone())),
                Statement::Return => {
                    let rest = &stmts[i + 1..];
                    let dead = (!rest.is_empty()).then(|| Box::new(self.block(rest)));
                    return Block {
                        probe,
                        ops,
                        exit: Exit::Return { dead },
                    };
                }
                Statement::Branch {
                    condition,
                    then_arm,
                    else_arm,
                } => {
                    let slot = self.branches.len();
                    self.branches.push(BranchArms {
                        then_probe: 0,
                        else_probe: 0,
                    });
                    let then_arm = Box::new(self.block(then_arm));
                    let else_arm = Box::new(self.block(else_arm));
                    self.branches[slot] = BranchArms {
                        then_probe: then_arm.probe,
                        else_probe: else_arm.probe,
                    };
                    let rest = &stmts[i + 1..];
                    let join = (!rest.is_empty()).then(|| Box::new(self.block(rest)));
                    return Block {
                        probe,
                        ops,
                        exit: Exit::Branch {
                            condition: condition.clone(),
                            then_arm,
                            else_arm,
                            join,
                        },
                    };
                }
            }
        }
        Block {
            probe,
            ops,
            exit: Exit::Fallthrough,
        }
    }
}
