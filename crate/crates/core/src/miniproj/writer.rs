use std::fmt::Write;

use crate::model::{Snapshot, Statement, Unit};

/// Renders a snapshot in the project file format; `parse_project` reads it back unchanged.
pub fn serialize_snapshot(s: &Snapshot) -> String {
    let mut out = String::new();
    writeln!(out, "version {}", s.version_id).unwrap();
    for (name, value) in &s.condition_defaults {
        writeln!(out, "cond {name} = {value}").unwrap();
    }
    for unit in s.units.values() {
        out.push('\n');
        write_unit(&mut out, unit);
    }
    out
}

pub fn write_unit(out: &mut String, unit: &Unit) {
    if unit.is_test {
        writeln!(out, "unit {} test", unit.id).unwrap();
    } else {
        writeln!(out, "unit {}", unit.id).unwrap();
    }
    if !unit.comment_text.is_empty() {
        for line in unit.comment_text.split('\n') {
            writeln!(out, "#{line}").unwrap();
        }
    }
    for f in &unit.functions {
        writeln!(out, "fn {}:", f.id).unwrap();
        write_body(out, &f.body, 1);
    }
}

fn write_body(out: &mut String, stmts: &[Statement], depth: usize) {
    let pad = "  ".repeat(depth);
    for stmt in stmts {
        match stmt {
            Statement::Line(n) => writeln!(out, "{pad}line {n}").unwrap(),
            Statement::Call(t) => writeln!(out, "{pad}call {t}").unwrap(),
            Statement::Return => writeln!(out, "{pad}return").unwrap(),
            Statement::Branch {
                condition,
                then_arm,
                else_arm,
            } => {
                writeln!(out, "{pad}if {condition} {{").unwrap();
                write_body(out, then_arm, depth + 1);
                if !else_arm.is_empty() {
                    writeln!(out, "{pad}}} else {{").unwrap();
                    write_body(out, else_arm, depth + 1);
                }
                writeln!(out, "{pad}}}").unwrap();
            }
        }
    }
}
