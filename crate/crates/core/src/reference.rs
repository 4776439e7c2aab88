//! References: named-axis tensors of cells, the only data passed between
//! nodes and the unit stored in checkpoints.
//!
//! Storage is dense and row-major over the axis list. Every Reference has a
//! canonical JSON form (`nc-ref/1`) and a SHA-256 digest over a digest form
//! of the same JSON in which signs contribute only `sign_id` and `uri`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const REFERENCE_SCHEMA: &str = "nc-ref/1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReferenceError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("duplicate axis `{0}`")]
    DuplicateAxis(String),
    #[error("unknown axis `{0}`")]
    UnknownAxis(String),
    #[error("index {index} out of range for axis `{axis}` of length {length}")]
    IndexOutOfRange {
        axis: String,
        index: usize,
        length: usize,
    },
    #[error("invalid cell: {0}")]
    InvalidCell(String),
    #[error("unresolvable sign `{uri}`: {reason}")]
    UnresolvableSign { uri: String, reason: String },
    #[error("malformed reference json: {0}")]
    Malformed(String),
}

/// Hex-encoded SHA-256 content digest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Digest(String);

impl Digest {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        Digest(hex::encode(Sha256::digest(bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Accepts only 64 lowercase hex characters.
    pub fn parse(s: &str) -> Option<Self> {
        let ok = s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        ok.then(|| Digest(s.to_string()))
    }

    pub fn short(&self) -> &str {
        &self.0[..12.min(self.0.len())]
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A finite number. Integral values within the exactly representable range
/// serialize without a fractional part.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Number(f64);

impl Number {
    pub fn new(value: f64) -> Option<Self> {
        value.is_finite().then_some(Number(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    fn as_exact_integer(self) -> Option<i64> {
        const LIMIT: f64 = 9_007_199_254_740_992.0; // 2^53
        (self.0.fract() == 0.0 && self.0.abs() < LIMIT).then_some(self.0 as i64)
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_exact_integer() {
            Some(i) => write!(f, "{i}"),
            None => write!(f, "{}", self.0),
        }
    }
}

impl From<i64> for Number {
    fn from(v: i64) -> Self {
        Number(v as f64)
    }
}

impl Serialize for Number {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.as_exact_integer() {
            Some(i) => serializer.serialize_i64(i),
            None => serializer.serialize_f64(self.0),
        }
    }
}

impl<'de> Deserialize<'de> for Number {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Number::new(v).ok_or_else(|| serde::de::Error::custom("number must be finite"))
    }
}

/// Compact pointer to an external resource. Content is fetched only when a
/// semantic step needs it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sign {
    pub sign_id: String,
    pub uri: String,
    pub media_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_digest: Option<Digest>,
}

impl Sign {
    /// Sign with an id derived from the uri, so the same resource always
    /// carries the same id.
    pub fn for_uri(uri: &str) -> Self {
        let id = Digest::of_bytes(uri.as_bytes());
        Sign {
            sign_id: format!("sg-{}", &id.as_str()[..16]),
            uri: uri.to_string(),
            media_type: guess_media_type(uri).to_string(),
            content_digest: None,
        }
    }
}

fn guess_media_type(uri: &str) -> &'static str {
    let ext = uri.rsplit('.').next().unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "txt" => "text/plain",
        "md" => "text/markdown",
        "json" => "application/json",
        "html" | "htm" => "text/html",
        "csv" => "text/csv",
        _ if uri.starts_with("prov://") => "text/plain",
        _ => "application/octet-stream",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Text(String),
    Number(Number),
    Bool(bool),
    /// Structured JSON object or array. Cannot contain signs.
    Data(serde_json::Value),
    Sign(Sign),
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn number(v: f64) -> Self {
        Cell::Number(Number::new(v).expect("finite number"))
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), ReferenceError> {
        match self {
            Cell::Data(v) if !(v.is_object() || v.is_array()) => Err(ReferenceError::InvalidCell(
                "structured cells must be a JSON object or array".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Plain-text rendering used in prompts and table views.
    pub fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Number(n) => n.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Data(v) => v.to_string(),
            Cell::Sign(s) => format!("sign({})", s.uri),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub length: usize,
}

impl Axis {
    pub fn new(name: impl Into<String>, length: usize) -> Self {
        Axis {
            name: name.into(),
            length,
        }
    }
}

/// Named-axis tensor of cells. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    axes: Vec<Axis>,
    cells: Vec<Cell>,
}

#[derive(Serialize, Deserialize)]
struct CanonicalRef<'a> {
    schema: std::borrow::Cow<'a, str>,
    axes: std::borrow::Cow<'a, [Axis]>,
    cells: std::borrow::Cow<'a, [Cell]>,
}

#[derive(Serialize)]
struct DigestRef<'a> {
    schema: &'a str,
    axes: &'a [Axis],
    cells: Vec<DigestCell<'a>>,
}

#[derive(Serialize)]
#[serde(rename_all = "lowercase")]
enum DigestCell<'a> {
    Text(&'a str),
    Number(Number),
    Bool(bool),
    Data(&'a serde_json::Value),
    Sign { sign_id: &'a str, uri: &'a str },
}

impl Reference {
    pub fn new(axes: Vec<Axis>, cells: Vec<Cell>) -> Result<Self, ReferenceError> {
        let mut seen = HashSet::new();
        for axis in &axes {
            if !seen.insert(axis.name.as_str()) {
                return Err(ReferenceError::DuplicateAxis(axis.name.clone()));
            }
        }
        let expected: usize = axes.iter().map(|a| a.length).product();
        if expected != cells.len() {
            return Err(ReferenceError::ShapeMismatch(format!(
                "axes require {expected} cells, got {}",
                cells.len()
            )));
        }
        for cell in &cells {
            cell.validate()?;
        }
        Ok(Reference { axes, cells })
    }

    /// Zero-axis Reference holding one cell.
    pub fn scalar(cell: Cell) -> Self {
        Reference {
            axes: Vec::new(),
            cells: vec![cell],
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        Reference::scalar(Cell::text(s))
    }

    /// One-axis Reference over the given cells.
    pub fn list(axis: impl Into<String>, cells: Vec<Cell>) -> Result<Self, ReferenceError> {
        let len = cells.len();
        Reference::new(vec![Axis::new(axis, len)], cells)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn is_scalar(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn as_scalar(&self) -> Option<&Cell> {
        if self.is_scalar() {
            self.cells.first()
        } else {
            None
        }
    }

    pub fn axis_len(&self, name: &str) -> Option<usize> {
        self.axes.iter().find(|a| a.name == name).map(|a| a.length)
    }

    pub fn axis_names(&self) -> Vec<&str> {
        self.axes.iter().map(|a| a.name.as_str()).collect()
    }

    /// Stacks equally-shaped References along a new leading axis.
    pub fn stack(refs: &[Reference], axis_name: &str) -> Result<Reference, ReferenceError> {
        let Some(first) = refs.first() else {
            return Ok(Reference {
                axes: vec![Axis::new(axis_name, 0)],
                cells: Vec::new(),
            });
        };
        if first.axis_len(axis_name).is_some() {
            return Err(ReferenceError::DuplicateAxis(axis_name.to_string()));
        }
        for (i, r) in refs.iter().enumerate().skip(1) {
            if r.axes != first.axes {
                return Err(ReferenceError::ShapeMismatch(format!(
                    "element {i} has axes {:?}, expected {:?}",
                    r.axis_names(),
                    first.axis_names()
                )));
            }
        }
        let mut axes = Vec::with_capacity(first.axes.len() + 1);
        axes.push(Axis::new(axis_name, refs.len()));
        axes.extend(first.axes.iter().cloned());
        let cells = refs.iter().flat_map(|r| r.cells.iter().cloned()).collect();
        Ok(Reference { axes, cells })
    }

    /// The hyperplane at `index` along `axis_name`, with that axis removed.
    pub fn slice(&self, axis_name: &str, index: usize) -> Result<Reference, ReferenceError> {
        let pos = self
            .axes
            .iter()
            .position(|a| a.name == axis_name)
            .ok_or_else(|| ReferenceError::UnknownAxis(axis_name.to_string()))?;
        let length = self.axes[pos].length;
        if index >= length {
            return Err(ReferenceError::IndexOutOfRange {
                axis: axis_name.to_string(),
                index,
                length,
            });
        }
        let outer: usize = self.axes[..pos].iter().map(|a| a.length).product();
        let inner: usize = self.axes[pos + 1..].iter().map(|a| a.length).product();
        let mut cells = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let start = (o * length + index) * inner;
            cells.extend_from_slice(&self.cells[start..start + inner]);
        }
        let mut axes = self.axes.clone();
        axes.remove(pos);
        Ok(Reference { axes, cells })
    }

    /// Same shape, cells rewritten one by one.
    pub fn try_map_cells<E>(
        &self,
        mut f: impl FnMut(&Cell) -> Result<Cell, E>,
    ) -> Result<Reference, E> {
        let cells = self.cells.iter().map(&mut f).collect::<Result<_, _>>()?;
        Ok(Reference {
            axes: self.axes.clone(),
            cells,
        })
    }

    pub fn signs(&self) -> impl Iterator<Item = &Sign> {
        self.cells.iter().filter_map(|c| match c {
            Cell::Sign(s) => Some(s),
            _ => None,
        })
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(&CanonicalRef {
            schema: REFERENCE_SCHEMA.into(),
            axes: (&self.axes[..]).into(),
            cells: (&self.cells[..]).into(),
        })
        .expect("reference serialization is infallible")
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::from_str(&self.to_canonical_json()).expect("canonical json is valid")
    }

    pub fn from_canonical_json(text: &str) -> Result<Reference, ReferenceError> {
        let raw: CanonicalRef<'static> =
            serde_json::from_str(text).map_err(|e| ReferenceError::Malformed(e.to_string()))?;
        Self::from_canonical(raw)
    }

    pub fn from_json_value(value: &serde_json::Value) -> Result<Reference, ReferenceError> {
        let raw: CanonicalRef<'static> = serde_json::from_value(value.clone())
            .map_err(|e| ReferenceError::Malformed(e.to_string()))?;
        Self::from_canonical(raw)
    }

    /// Lenient form for run inputs: canonical JSON (an object with
    /// `schema`), or a bare string, number or bool as a scalar, or any other
    /// object as a structured scalar.
    pub fn from_input_value(value: &serde_json::Value) -> Result<Reference, ReferenceError> {
        use serde_json::Value;
        match value {
            Value::Object(map) if map.contains_key("schema") => Self::from_json_value(value),
            Value::Object(_) => Ok(Reference::scalar(Cell::Data(value.clone()))),
            Value::String(s) => Ok(Reference::text(s.clone())),
            Value::Bool(b) => Ok(Reference::scalar(Cell::Bool(*b))),
            Value::Number(n) => n
                .as_f64()
                .and_then(Number::new)
                .map(|n| Reference::scalar(Cell::Number(n)))
                .ok_or_else(|| ReferenceError::InvalidCell(format!("number {n} is not finite"))),
            other => Err(ReferenceError::Malformed(format!(
                "input must be a string, number, bool or reference object, got {other}"
            ))),
        }
    }

    fn from_canonical(raw: CanonicalRef<'static>) -> Result<Reference, ReferenceError> {
        if raw.schema != REFERENCE_SCHEMA {
            return Err(ReferenceError::Malformed(format!(
                "unsupported schema `{}`",
                raw.schema
            )));
        }
        Reference::new(raw.axes.into_owned(), raw.cells.into_owned())
    }

    pub fn digest(&self) -> Digest {
        let cells = self
            .cells
            .iter()
            .map(|c| match c {
                Cell::Text(s) => DigestCell::Text(s),
                Cell::Number(n) => DigestCell::Number(*n),
                Cell::Bool(b) => DigestCell::Bool(*b),
                Cell::Data(v) => DigestCell::Data(v),
                Cell::Sign(s) => DigestCell::Sign {
                    sign_id: &s.sign_id,
                    uri: &s.uri,
                },
            })
            .collect();
        let bytes = serde_json::to_vec(&DigestRef {
            schema: REFERENCE_SCHEMA,
            axes: &self.axes,
            cells,
        })
        .expect("digest serialization is infallible");
        Digest::of_bytes(&bytes)
    }
}

impl Serialize for Reference {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CanonicalRef {
            schema: REFERENCE_SCHEMA.into(),
            axes: (&self.axes[..]).into(),
            cells: (&self.cells[..]).into(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Reference {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = CanonicalRef::deserialize(deserializer)?;
        Reference::from_canonical(raw).map_err(serde::de::Error::custom)
    }
}

/// Fetches the bytes behind a sign's uri.
pub trait Resolver: Send + Sync {
    fn fetch(&self, uri: &str) -> Result<Vec<u8>, ReferenceError>;
}

/// Resolves `file://` (relative to a base directory unless absolute) and
/// `prov://<name>` against in-memory provisions. Further schemes can be
/// registered by the host.
#[derive(Clone, Default)]
pub struct DefaultResolver {
    base_dir: Option<PathBuf>,
    provisions: BTreeMap<String, String>,
    schemes: BTreeMap<String, Arc<dyn Resolver>>,
}

impl DefaultResolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_base_dir(mut self, dir: impl AsRef<Path>) -> Self {
        self.base_dir = Some(dir.as_ref().to_path_buf());
        self
    }

    pub fn with_provisions(mut self, provisions: BTreeMap<String, String>) -> Self {
        self.provisions = provisions;
        self
    }

    pub fn with_scheme(mut self, scheme: &str, resolver: Arc<dyn Resolver>) -> Self {
        self.schemes.insert(scheme.to_string(), resolver);
        self
    }

    pub fn file_path(&self, uri: &str) -> Option<PathBuf> {
        let path = uri.strip_prefix("file://")?;
        let path = Path::new(path);
        Some(match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        })
    }
}

impl Resolver for DefaultResolver {
    fn fetch(&self, uri: &str) -> Result<Vec<u8>, ReferenceError> {
        let unresolvable = |reason: String| ReferenceError::UnresolvableSign {
            uri: uri.to_string(),
            reason,
        };
        if let Some(path) = self.file_path(uri) {
            return std::fs::read(&path).map_err(|e| unresolvable(format!("{}: {e}", path.display())));
        }
        if let Some(name) = uri.strip_prefix("prov://") {
            return self
                .provisions
                .get(name)
                .map(|s| s.as_bytes().to_vec())
                .ok_or_else(|| unresolvable(format!("no provision named `{name}`")));
        }
        let scheme = uri.split("://").next().unwrap_or("");
        match self.schemes.get(scheme) {
            Some(r) if uri.contains("://") => r.fetch(uri),
            _ => Err(unresolvable(format!("no resolver for scheme `{scheme}`"))),
        }
    }
}

/// Content fetched for a sign, with the digest of the raw bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmuted {
    pub content: Cell,
    pub content_digest: Digest,
}

pub fn transmute(sign: &Sign, resolver: &dyn Resolver) -> Result<Transmuted, ReferenceError> {
    let bytes = resolver.fetch(&sign.uri)?;
    let content_digest = Digest::of_bytes(&bytes);
    Ok(Transmuted {
        content: Cell::Text(String::from_utf8_lossy(&bytes).into_owned()),
        content_digest,
    })
}
