//! Line-oriented parser for project files.
//!
//! ```text
//! version v2
//! cond fast = true
//!
//! unit c1
//! # anything after '#' becomes the unit's comment text
//! fn m:
//!   line 3
//!   if fast {
//!     call c2.m
//!   } else {
//!     line 5
//!   }
//!   return
//!
//! unit t1 test
//! fn t:
//!   line 2
//!   call c1.m
//! ```
//!
//! Indentation is free. `cond` and `version` lines are global and may appear
//! anywhere outside an open `if`. Comments before the first `unit` header
//! belong to the file, not to a unit, and are dropped.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::{
    CallTarget, Function, Snapshot, Statement, Unit, UnitId, DEFAULT_MAX_BRANCH_DEPTH,
};

#[derive(Debug)]
struct Pos {
    line: usize,
    column: usize,
}

#[derive(Debug)]
struct CallSite {
    pos: Pos,
    caller: String,
    target: CallTarget,
}

#[derive(Debug)]
struct CondUse {
    pos: Pos,
    caller: String,
    name: String,
}

/// Result of parsing one file, before cross-file linking.
#[derive(Debug, Default)]
pub(crate) struct Fragment {
    label: String,
    version: Option<String>,
    units: Vec<(Unit, Pos)>,
    conds: Vec<(String, bool, Pos)>,
    calls: Vec<CallSite>,
    cond_uses: Vec<CondUse>,
}

struct Frame {
    condition: String,
    then_arm: Vec<Statement>,
    else_arm: Option<Vec<Statement>>,
    pos: Pos,
}

struct OpenFunction {
    id: String,
    body: Vec<Statement>,
    stack: Vec<Frame>,
    last_line: Option<u32>,
}

impl OpenFunction {
    fn push(&mut self, stmt: Statement) {
        match self.stack.last_mut() {
            Some(frame) => match &mut frame.else_arm {
                Some(arm) => arm.push(stmt),
                None => frame.then_arm.push(stmt),
            },
            None => self.body.push(stmt),
        }
    }
}

struct OpenUnit {
    unit: Unit,
    pos: Pos,
    comments: Vec<String>,
}

struct Parser<'a> {
    label: &'a str,
    frag: Fragment,
    unit: Option<OpenUnit>,
    func: Option<OpenFunction>,
    line: usize,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '$'))
}

fn is_unit_ident(s: &str) -> bool {
    !s.is_empty() && s.split('.').all(is_ident)
}

impl<'a> Parser<'a> {
    fn new(label: &'a str) -> Self {
        Self {
            label,
            frag: Fragment {
                label: label.to_owned(),
                ..Fragment::default()
            },
            unit: None,
            func: None,
            line: 0,
        }
    }

    fn err(&self, column: usize, message: impl Into<String>) -> Error {
        let message = message.into();
        Error::Parse {
            line: self.line,
            column,
            message: if self.label.is_empty() {
                message
            } else {
                format!("{}: {message}", self.label)
            },
        }
    }

    fn run(mut self, text: &str) -> Result<Fragment> {
        for (i, raw) in text.lines().enumerate() {
            self.line = i + 1;
            let trimmed = raw.trim_start();
            let column = raw.len() - trimmed.len() + 1;
            let trimmed = trimmed.trim_end();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                if let Some(u) = &mut self.unit {
                    u.comments.push(comment.to_owned());
                }
                continue;
            }
            self.statement(trimmed, column)?;
        }
        self.line += 1;
        self.close_unit(1)?;
        Ok(self.frag)
    }

    fn statement(&mut self, text: &str, column: usize) -> Result<()> {
        let mut words = text.split_whitespace();
        let head = words.next().unwrap_or_default();
        let rest: Vec<&str> = words.collect();
        // Column of the n-th word after the head.
        let col_of = |n: usize| -> usize {
            let mut offset = head.len();
            for (k, w) in rest.iter().enumerate() {
                let start = text[offset..].find(w).map_or(offset, |p| p + offset);
                if k == n {
                    return column + start;
                }
                offset = start + w.len();
            }
            column + text.len()
        };

        match head {
            "version" => {
                if rest.is_empty() {
                    return Err(self.err(col_of(0), "expected version id"));
                }
                self.frag.version = Some(text["version".len()..].trim().to_owned());
            }
            "cond" => {
                if self.func.as_ref().is_some_and(|f| !f.stack.is_empty()) {
                    return Err(self.err(column, "cond inside an open if"));
                }
                let (name, value) = match rest.as_slice() {
                    [name, "=", v] => (*name, *v),
                    _ => return Err(self.err(col_of(0), "expected `cond <name> = true|false`")),
                };
                if !is_ident(name) {
                    return Err(self.err(col_of(0), format!("bad condition name `{name}`")));
                }
                let value = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(
                            self.err(col_of(2), format!("expected true or false, got `{other}`"))
                        )
                    }
                };
                self.frag.conds.push((
                    name.to_owned(),
                    value,
                    Pos {
                        line: self.line,
                        column,
                    },
                ));
            }
            "unit" => {
                self.close_unit(column)?;
                let (id, is_test) = match rest.as_slice() {
                    [id] => (*id, false),
                    [id, "test"] => (*id, true),
                    [_, other, ..] => {
                        return Err(
                            self.err(col_of(1), format!("unexpected `{other}` after unit id"))
                        )
                    }
                    [] => return Err(self.err(col_of(0), "expected unit id")),
                };
                if !is_unit_ident(id) {
                    return Err(self.err(col_of(0), format!("bad unit id `{id}`")));
                }
                self.unit = Some(OpenUnit {
                    unit: Unit::new(id, is_test, Vec::new()),
                    pos: Pos {
                        line: self.line,
                        column,
                    },
                    comments: Vec::new(),
                });
            }
            "fn" => {
                self.close_function(column)?;
                if self.unit.is_none() {
                    return Err(self.err(column, "fn outside unit"));
                }
                let id = match rest.as_slice() {
                    [id] => id.strip_suffix(':').unwrap_or(id),
                    [id, ":"] => id,
                    _ => return Err(self.err(col_of(0), "expected `fn <id>:`")),
                };
                if !is_ident(id) {
                    return Err(self.err(col_of(0), format!("bad function id `{id}`")));
                }
                let unit = &self.unit.as_ref().unwrap().unit;
                if unit.function(id).is_some() {
                    return Err(self.err(col_of(0), format!("duplicate function {}.{id}", unit.id)));
                }
                self.func = Some(OpenFunction {
                    id: id.to_owned(),
                    body: Vec::new(),
                    stack: Vec::new(),
                    last_line: None,
                });
            }
            "line" => {
                let n: u32 = match rest.as_slice() {
                    [n] => n
                        .parse()
                        .map_err(|_| self.err(col_of(0), format!("bad line number `{n}`")))?,
                    _ => return Err(self.err(col_of(0), "expected `line <n>`")),
                };
                let func = self.open_function(column)?;
                if let Some(prev) = func.last_line {
                    if n <= prev {
                        let msg = format!("line {n} does not increase (previous {prev})");
                        return Err(self.err(col_of(0), msg));
                    }
                }
                let func = self.func.as_mut().unwrap();
                func.last_line = Some(n);
                func.push(Statement::Line(n));
            }
            "call" => {
                let target = match rest.as_slice() {
                    [t] => *t,
                    _ => return Err(self.err(col_of(0), "expected `call <unit>.<fn>`")),
                };
                let Some((unit, function)) = target.rsplit_once('.') else {
                    return Err(self.err(col_of(0), format!("call target `{target}` lacks `.fn`")));
                };
                if !is_unit_ident(unit) || !is_ident(function) {
                    return Err(self.err(col_of(0), format!("bad call target `{target}`")));
                }
                let target = CallTarget::new(unit, function);
                let pos = Pos {
                    line: self.line,
                    column: col_of(0),
                };
                let caller = self.site(column)?;
                self.frag.calls.push(CallSite {
                    pos,
                    caller,
                    target: target.clone(),
                });
                self.func.as_mut().unwrap().push(Statement::Call(target));
            }
            "return" => {
                if !rest.is_empty() {
                    return Err(self.err(col_of(0), "`return` takes no operand"));
                }
                self.open_function(column)?;
                self.func.as_mut().unwrap().push(Statement::Return);
            }
            "if" => {
                let name = match rest.as_slice() {
                    [name, "{"] => *name,
                    _ => return Err(self.err(col_of(0), "expected `if <cond> {`")),
                };
                if !is_ident(name) {
                    return Err(self.err(col_of(0), format!("bad condition name `{name}`")));
                }
                let caller = self.site(column)?;
                let func = self.func.as_mut().unwrap();
                if func.stack.len() >= DEFAULT_MAX_BRANCH_DEPTH {
                    let msg = format!("branch nesting exceeds depth {DEFAULT_MAX_BRANCH_DEPTH}");
                    return Err(self.err(column, msg));
                }
                func.stack.push(Frame {
                    condition: name.to_owned(),
                    then_arm: Vec::new(),
                    else_arm: None,
                    pos: Pos {
                        line: self.line,
                        column,
                    },
                });
                self.frag.cond_uses.push(CondUse {
                    pos: Pos {
                        line: self.line,
                        column: col_of(0),
                    },
                    caller,
                    name: name.to_owned(),
                });
            }
            "}" => {
                let is_else = match rest.as_slice() {
                    [] => false,
                    ["else", "{"] => true,
                    _ => return Err(self.err(col_of(0), "expected `}` or `} else {`")),
                };
                let line = self.line;
                let func = match self.func.as_mut() {
                    Some(f) if !f.stack.is_empty() => f,
                    _ => {
                        return Err(Error::Parse {
                            line,
                            column,
                            message: self.prefixed("unmatched `}`"),
                        })
                    }
                };
                let frame = func.stack.last_mut().unwrap();
                if is_else {
                    if frame.else_arm.is_some() {
                        return Err(self.err(column, "second else for one if"));
                    }
                    frame.else_arm = Some(Vec::new());
                } else {
                    let frame = func.stack.pop().unwrap();
                    func.push(Statement::Branch {
                        condition: frame.condition,
                        then_arm: frame.then_arm,
                        else_arm: frame.else_arm.unwrap_or_default(),
                    });
                }
            }
            other => return Err(self.err(column, format!("unknown statement `{other}`"))),
        }
        Ok(())
    }

    fn prefixed(&self, message: &str) -> String {
        if self.label.is_empty() {
            message.to_owned()
        } else {
            format!("{}: {message}", self.label)
        }
    }

    fn open_function(&self, column: usize) -> Result<&OpenFunction> {
        self.func
            .as_ref()
            .ok_or_else(|| self.err(column, "statement outside function"))
    }

    fn site(&self, column: usize) -> Result<String> {
        let func = self.open_function(column)?;
        let unit = &self.unit.as_ref().expect("function implies unit").unit;
        Ok(format!("{}.{}", unit.id, func.id))
    }

    fn close_function(&mut self, column: usize) -> Result<()> {
        if let Some(func) = self.func.take() {
            if let Some(frame) = func.stack.last() {
                let msg = self.prefixed(&format!("unclosed if {}", frame.condition));
                return Err(Error::Parse {
                    line: frame.pos.line,
                    column: frame.pos.column,
                    message: msg,
                });
            }
            let _ = column;
            let unit = &mut self.unit.as_mut().expect("function implies unit").unit;
            unit.functions.push(Function::new(func.id, func.body));
        }
        Ok(())
    }

    fn close_unit(&mut self, column: usize) -> Result<()> {
        self.close_function(column)?;
        if let Some(mut open) = self.unit.take() {
            open.unit.comment_text = open.comments.join("\n");
            self.frag.units.push((open.unit, open.pos));
        }
        Ok(())
    }
}

pub(crate) fn parse_fragment(label: &str, text: &str) -> Result<Fragment> {
    Parser::new(label).run(text)
}

/// Resolves calls and conditions across fragments and builds the snapshot.
pub(crate) fn link(fragments: Vec<Fragment>, default_version: &str) -> Result<Snapshot> {
    let mut units: BTreeMap<UnitId, Unit> = BTreeMap::new();
    let mut conds: BTreeMap<String, bool> = BTreeMap::new();
    let mut version = None;

    let label_msg = |label: &str, msg: String| {
        if label.is_empty() {
            msg
        } else {
            format!("{label}: {msg}")
        }
    };

    for frag in &fragments {
        if let Some(v) = &frag.version {
            version = Some(v.clone());
        }
        for (name, value, pos) in &frag.conds {
            if let Some(prev) = conds.insert(name.clone(), *value) {
                if prev != *value {
                    return Err(Error::Parse {
                        line: pos.line,
                        column: pos.column,
                        message: label_msg(&frag.label, format!("conflicting defaults for {name}")),
                    });
                }
            }
        }
    }

    for frag in fragments.iter() {
        for (unit, pos) in &frag.units {
            if units.contains_key(&unit.id) {
                return Err(Error::Parse {
                    line: pos.line,
                    column: pos.column,
                    message: label_msg(&frag.label, format!("duplicate unit {}", unit.id)),
                });
            }
            units.insert(unit.id.clone(), unit.clone());
        }
    }

    if units.is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "no units".to_owned(),
        });
    }

    for frag in &fragments {
        for call in &frag.calls {
            let ok = units
                .get(&call.target.unit)
                .is_some_and(|u| u.function(call.target.function.as_str()).is_some());
            if !ok {
                return Err(Error::Link {
                    line: call.pos.line,
                    column: call.pos.column,
                    message: label_msg(
                        &frag.label,
                        format!("dangling call {} → {}", call.caller, call.target),
                    ),
                });
            }
        }
        for u in &frag.cond_uses {
            if !conds.contains_key(&u.name) {
                return Err(Error::Link {
                    line: u.pos.line,
                    column: u.pos.column,
                    message: label_msg(
                        &frag.label,
                        format!("undeclared condition {} in {}", u.name, u.caller),
                    ),
                });
            }
        }
    }

    let snapshot = Snapshot::new(
        version.unwrap_or_else(|| default_version.to_owned()),
        units.into_values(),
        conds,
    );
    let violations = snapshot.validate();
    if !violations.is_empty() {
        return Err(Error::SnapshotInvalid {
            version: snapshot.version_id.clone(),
            violations,
        });
    }
    debug_assert!(snapshot.tests.iter().collect::<BTreeSet<_>>().len() == snapshot.tests.len());
    Ok(snapshot)
}
