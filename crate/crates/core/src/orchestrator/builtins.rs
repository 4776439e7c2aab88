//! Deterministic operators executed without an agent.

use std::path::{Component, Path};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::compiler::Builtin;
use crate::reference::{Axis, Cell, Number, Reference, ReferenceError, Sign};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("`{op}` expects {expected}, got {got} input(s)")]
    Arity {
        op: &'static str,
        expected: &'static str,
        got: usize,
    },
    #[error("`{op}`: {message}")]
    Invalid { op: &'static str, message: String },
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error("`save`: {0}")]
    Io(String),
}

/// Host services a builtin may need.
#[derive(Debug, Clone, Default)]
pub struct BuiltinEnv<'a> {
    pub output_dir: Option<&'a Path>,
}

fn invalid(op: &'static str, message: impl Into<String>) -> OperatorError {
    OperatorError::Invalid {
        op,
        message: message.into(),
    }
}

fn arity(op: &'static str, expected: &'static str, got: usize) -> OperatorError {
    OperatorError::Arity { op, expected, got }
}

/// Runs `op` over named inputs in declaration order.
pub fn execute_builtin(
    op: Builtin,
    inputs: &[(String, Reference)],
    env: &BuiltinEnv<'_>,
) -> Result<Reference, OperatorError> {
    match op {
        Builtin::Route => route(inputs),
        Builtin::Group => match inputs {
            [(_, items), (_, keys)] => group(items, keys),
            _ => Err(arity("group", "2 (items, keys)", inputs.len())),
        },
        Builtin::Collect => collect(inputs),
        Builtin::Extract => match inputs {
            [(_, r), (_, field)] => extract(r, field),
            _ => Err(arity("extract", "2 (reference, field)", inputs.len())),
        },
        Builtin::Load => match inputs {
            [(_, r)] => load(r),
            _ => Err(arity("load", "1", inputs.len())),
        },
        Builtin::Save => match inputs {
            [(_, value), (_, path)] => save(value, path, env),
            _ => Err(arity("save", "2 (value, path)", inputs.len())),
        },
        Builtin::Wait => inputs
            .first()
            .map(|(_, r)| r.clone())
            .ok_or_else(|| arity("wait", "at least 1", 0)),
    }
}

fn scalar<'a>(op: &'static str, what: &str, r: &'a Reference) -> Result<&'a Cell, OperatorError> {
    r.as_scalar()
        .ok_or_else(|| invalid(op, format!("{what} must be a scalar, got axes {:?}", r.axis_names())))
}

/// Picks one of the branches after the selector. A text selector names a
/// branch input, a number indexes the branches, a bool picks the first
/// (true) or second (false).
fn route(inputs: &[(String, Reference)]) -> Result<Reference, OperatorError> {
    let Some(((_, selector), branches)) = inputs.split_first() else {
        return Err(arity("route", "a selector and at least 1 branch", 0));
    };
    if branches.is_empty() {
        return Err(arity("route", "a selector and at least 1 branch", inputs.len()));
    }
    let index = match scalar("route", "selector", selector)? {
        Cell::Text(name) => branches
            .iter()
            .position(|(n, _)| n == name.trim())
            .ok_or_else(|| invalid("route", format!("no branch named `{name}`")))?,
        Cell::Number(n) => {
            let v = n.value();
            if v.fract() != 0.0 || v < 0.0 || v as usize >= branches.len() {
                return Err(invalid("route", format!("branch index {v} out of range")));
            }
            v as usize
        }
        Cell::Bool(true) => 0,
        Cell::Bool(false) if branches.len() >= 2 => 1,
        other => return Err(invalid("route", format!("unusable selector {}", other.render()))),
    };
    Ok(branches[index].1.clone())
}

/// JSON view of a cell without type tags, used inside structured cells.
fn plain(cell: &Cell) -> Value {
    match cell {
        Cell::Text(s) => Value::String(s.clone()),
        Cell::Number(n) => json!(n),
        Cell::Bool(b) => Value::Bool(*b),
        Cell::Data(v) => v.clone(),
        Cell::Sign(s) => json!({ "sign_id": s.sign_id, "uri": s.uri }),
    }
}

fn plain_reference(r: &Reference) -> Value {
    match r.as_scalar() {
        Some(c) => plain(c),
        None => Value::Array(r.cells().iter().map(plain).collect()),
    }
}

/// Partitions the items along their leading axis by key. Groups appear in
/// order of first occurrence; each cell holds the key, the member indices
/// and the members.
pub fn group(items: &Reference, keys: &Reference) -> Result<Reference, OperatorError> {
    let (Some(item_axis), Some(key_axis)) = (items.axes().first(), keys.axes().first()) else {
        return Err(invalid("group", "items and keys need a leading axis"));
    };
    if item_axis.length != key_axis.length {
        return Err(invalid(
            "group",
            format!("{} items but {} keys", item_axis.length, key_axis.length),
        ));
    }
    if items.signs().next().is_some() {
        return Err(invalid("group", "items must not contain signs; load them first"));
    }
    let mut groups: Vec<(Cell, Vec<usize>, Vec<Value>)> = Vec::new();
    for i in 0..item_axis.length {
        let key_ref = keys.slice(&key_axis.name, i)?;
        let key = scalar("group", "each key", &key_ref)?.clone();
        if matches!(key, Cell::Sign(_)) {
            return Err(invalid("group", "keys must not be signs"));
        }
        let member = plain_reference(&items.slice(&item_axis.name, i)?);
        match groups.iter_mut().find(|(k, _, _)| *k == key) {
            Some((_, idx, members)) => {
                idx.push(i);
                members.push(member);
            }
            None => groups.push((key, vec![i], vec![member])),
        }
    }
    let n = groups.len();
    let cells = groups
        .into_iter()
        .map(|(key, indices, members)| {
            Cell::Data(json!({ "key": plain(&key), "indices": indices, "members": members }))
        })
        .collect();
    Ok(Reference::new(vec![Axis::new("group", n)], cells)?)
}

fn collect(inputs: &[(String, Reference)]) -> Result<Reference, OperatorError> {
    match inputs {
        [] => Err(arity("collect", "at least 1", 0)),
        [(_, one)] => Ok(one.clone()),
        many => {
            let refs: Vec<Reference> = many.iter().map(|(_, r)| r.clone()).collect();
            Ok(Reference::stack(&refs, "collect")?)
        }
    }
}

fn json_to_cell(v: &Value) -> Option<Cell> {
    match v {
        Value::String(s) => Some(Cell::Text(s.clone())),
        Value::Number(n) => n.as_f64().and_then(Number::new).map(Cell::Number),
        Value::Bool(b) => Some(Cell::Bool(*b)),
        Value::Object(_) | Value::Array(_) => Some(Cell::Data(v.clone())),
        Value::Null => None,
    }
}

/// Reads a field (object key or array index) out of every structured cell.
fn extract(r: &Reference, field: &Reference) -> Result<Reference, OperatorError> {
    let field = scalar("extract", "field", field)?.clone();
    r.try_map_cells(|cell| {
        let Cell::Data(v) = cell else {
            return Err(invalid("extract", format!("cell {} is not structured", cell.render())));
        };
        let found = match (&field, v) {
            (Cell::Text(k), Value::Object(map)) => map.get(k.as_str()),
            (Cell::Number(n), Value::Array(items)) if n.value() >= 0.0 && n.value().fract() == 0.0 => {
                items.get(n.value() as usize)
            }
            _ => None,
        };
        found
            .and_then(json_to_cell)
            .ok_or_else(|| invalid("extract", format!("field {} not found", field.render())))
    })
}

/// Sign metadata as structured cells. Never reads the content.
fn load(r: &Reference) -> Result<Reference, OperatorError> {
    r.try_map_cells(|cell| match cell {
        Cell::Sign(s) => {
            let mut map = Map::new();
            map.insert("sign_id".into(), json!(s.sign_id));
            map.insert("uri".into(), json!(s.uri));
            map.insert("media_type".into(), json!(s.media_type));
            Ok(Cell::Data(Value::Object(map)))
        }
        other => Err(invalid("load", format!("expected signs, got {}", other.render()))),
    })
}

fn save(value: &Reference, path: &Reference, env: &BuiltinEnv<'_>) -> Result<Reference, OperatorError> {
    let name = match scalar("save", "path", path)? {
        Cell::Text(s) => s.trim().to_string(),
        other => return Err(invalid("save", format!("path must be text, got {}", other.render()))),
    };
    let rel = Path::new(&name);
    if name.is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(invalid("save", format!("path `{name}` must be relative and stay inside the output directory")));
    }
    let dir = env
        .output_dir
        .ok_or_else(|| invalid("save", "no output directory configured for this run"))?;
    let target = dir.join(rel);
    if let Some(parent) = target.parent() {
        std::fs::create_dir_all(parent).map_err(|e| OperatorError::Io(e.to_string()))?;
    }
    let body = match value.as_scalar() {
        Some(Cell::Text(s)) => s.clone(),
        _ => value.to_canonical_json(),
    };
    std::fs::write(&target, body.as_bytes()).map_err(|e| OperatorError::Io(e.to_string()))?;
    let abs = std::fs::canonicalize(&target).unwrap_or(target);
    Ok(Reference::scalar(Cell::Sign(Sign::for_uri(&format!("file://{}", abs.display())))))
}
