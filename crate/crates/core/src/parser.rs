//! `.ncds` source parser and canonical printer.
//!
//! The format is line oriented. A concept is declared on its own line as
//! `{name}`; the lines of its block sit one level (four spaces) deeper and
//! are either nested concept declarations or marker lines:
//!
//! ```text
//! {summary}
//!     <= "summarize the document"({document})
//!     {document}
//!         <- sign("file://input.txt")
//! ```
//!
//! `<-` declares a value (literal, `sign("uri")` or an imported `{concept}`),
//! `<=` declares the functional derivation `operator({arg}, ...)`, and `<*`
//! names the collection a block iterates over. Lines starting with `#` are
//! comments. Concept names are free-form Unicode; only the markers and the
//! indentation are rigid.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reference::{Digest, Number};

pub const INDENT_WIDTH: usize = 4;

/// 1-based line and column (columns count Unicode scalar values).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Loc {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at {loc}: {kind}")]
pub struct SyntaxError {
    pub loc: Loc,
    pub kind: SyntaxErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxErrorKind {
    #[error("tab character in indentation")]
    TabIndentation,
    #[error("indentation of {0} spaces is not a multiple of {INDENT_WIDTH}")]
    BadIndentation(usize),
    #[error("indentation deeper than one level below the enclosing concept")]
    IndentationJump,
    #[error("unknown marker or line form `{0}`")]
    UnknownMarker(String),
    #[error("unbalanced braces")]
    UnbalancedBraces,
    #[error("concept already has a derivation (`<-` or `<=`)")]
    DuplicateDerivation,
    #[error("more than one `<*` line in one block")]
    DuplicateContext,
    #[error("empty concept name")]
    EmptyConceptName,
    #[error("a plan has exactly one root concept at indentation 0")]
    MultipleRoots,
    #[error("no root concept")]
    MissingRoot,
    #[error("marker line outside a concept block")]
    MarkerOutsideConcept,
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("unexpected text after `{0}`")]
    TrailingText(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRef {
    pub name: String,
    pub loc: Loc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Literal {
    Text(String),
    Number(Number),
    Sign(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuePayload {
    Concept(ConceptRef),
    Literal(Literal),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    /// Bare identifier naming a syntactic built-in.
    Builtin(String),
    /// Quoted natural-language instruction, executed by an agent.
    Instruction(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalPayload {
    pub operator: Operator,
    pub args: Vec<ConceptRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    Value(ValuePayload),
    Functional(FunctionalPayload),
    Context(ConceptRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerLine {
    pub marker: Marker,
    pub loc: Loc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptNode {
    pub name: String,
    pub lines: Vec<MarkerLine>,
    pub children: Vec<ConceptNode>,
    pub loc: Loc,
}

impl ConceptNode {
    pub fn functional(&self) -> Option<&FunctionalPayload> {
        self.lines.iter().find_map(|l| match &l.marker {
            Marker::Functional(f) => Some(f),
            _ => None,
        })
    }

    pub fn value(&self) -> Option<&ValuePayload> {
        self.lines.iter().find_map(|l| match &l.marker {
            Marker::Value(v) => Some(v),
            _ => None,
        })
    }

    pub fn context(&self) -> Option<&ConceptRef> {
        self.lines.iter().find_map(|l| match &l.marker {
            Marker::Context(c) => Some(c),
            _ => None,
        })
    }

    fn clear_locations(&mut self) {
        self.loc = Loc::default();
        for line in &mut self.lines {
            line.loc = Loc::default();
            match &mut line.marker {
                Marker::Value(ValuePayload::Concept(c)) | Marker::Context(c) => {
                    c.loc = Loc::default()
                }
                Marker::Functional(f) => f.args.iter_mut().for_each(|a| a.loc = Loc::default()),
                Marker::Value(ValuePayload::Literal(_)) => {}
            }
        }
        self.children.iter_mut().for_each(ConceptNode::clear_locations);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePlan {
    pub root: ConceptNode,
    pub source_digest: Digest,
}

impl SourcePlan {
    /// Copy with every location and the source digest erased, for
    /// structural comparison of plans parsed from different texts.
    pub fn structure(&self) -> ConceptNode {
        let mut root = self.root.clone();
        root.clear_locations();
        root
    }

    pub fn same_structure(&self, other: &SourcePlan) -> bool {
        self.structure() == other.structure()
    }
}

/// Parses `.ncds` text. CRLF line endings are accepted.
pub fn parse(text: &str) -> Result<SourcePlan, SyntaxError> {
    let source_digest = Digest::of_bytes(text.as_bytes());
    // stack of open concepts, deepest last; a concept's depth is its index
    let mut stack: Vec<ConceptNode> = Vec::new();
    let mut root_seen = false;

    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let content_start = line
            .char_indices()
            .find(|(_, c)| *c != ' ' && *c != '\t')
            .map(|(i, _)| i);
        let Some(start) = content_start else {
            continue; // blank
        };
        let indent = &line[..start];
        let content = line[start..].trim_end();
        if content.starts_with('#') {
            continue;
        }
        if let Some(tab) = indent.find('\t') {
            return Err(err(line_no, tab + 1, SyntaxErrorKind::TabIndentation));
        }
        if indent.len() % INDENT_WIDTH != 0 {
            return Err(err(line_no, start + 1, SyntaxErrorKind::BadIndentation(indent.len())));
        }
        let depth = indent.len() / INDENT_WIDTH;
        let cursor = Cursor {
            line: line_no,
            base_col: start + 1,
            text: content,
        };

        if content.starts_with('{') {
            let (name_ref, rest) = cursor.concept_ref(0)?;
            if !rest.trim().is_empty() {
                let col = cursor.col_at(content.len() - rest.len());
                return Err(err(line_no, col, SyntaxErrorKind::TrailingText(format!("{{{}}}", name_ref.name))));
            }
            if depth == 0 {
                if root_seen {
                    return Err(err(line_no, start + 1, SyntaxErrorKind::MultipleRoots));
                }
                root_seen = true;
            } else if depth > stack.len() {
                return Err(err(line_no, start + 1, SyntaxErrorKind::IndentationJump));
            }
            close_to(&mut stack, depth);
            stack.push(ConceptNode {
                name: name_ref.name,
                lines: Vec::new(),
                children: Vec::new(),
                loc: name_ref.loc,
            });
            continue;
        }

        let marker_kind = ["<-", "<=", "<*"].into_iter().find(|m| content.starts_with(m));
        let Some(marker_kind) = marker_kind else {
            let word: String = content.chars().take_while(|c| !c.is_whitespace()).collect();
            return Err(err(line_no, start + 1, SyntaxErrorKind::UnknownMarker(word)));
        };
        if depth == 0 || depth > stack.len() {
            let kind = if depth == 0 {
                SyntaxErrorKind::MarkerOutsideConcept
            } else {
                SyntaxErrorKind::IndentationJump
            };
            return Err(err(line_no, start + 1, kind));
        }
        close_to(&mut stack, depth);
        let owner = stack.last_mut().expect("depth >= 1 implies an open concept");
        let loc = Loc {
            line: line_no,
            column: start + 1,
        };
        let marker = match marker_kind {
            "<-" => Marker::Value(cursor.value_payload(2)?),
            "<=" => Marker::Functional(cursor.functional_payload(2)?),
            _ => {
                let (c, rest) = cursor.concept_ref_after_ws(2)?;
                if !rest.trim().is_empty() {
                    let col = cursor.col_at(content.len() - rest.len());
                    return Err(err(line_no, col, SyntaxErrorKind::TrailingText("<*".into())));
                }
                Marker::Context(c)
            }
        };
        match &marker {
            Marker::Context(_) if owner.context().is_some() => {
                return Err(err(line_no, start + 1, SyntaxErrorKind::DuplicateContext));
            }
            Marker::Value(_) | Marker::Functional(_)
                if owner.value().is_some() || owner.functional().is_some() =>
            {
                return Err(err(line_no, start + 1, SyntaxErrorKind::DuplicateDerivation));
            }
            _ => {}
        }
        owner.lines.push(MarkerLine { marker, loc });
    }

    close_to(&mut stack, 1);
    match stack.pop() {
        Some(root) => Ok(SourcePlan {
            root,
            source_digest,
        }),
        None => Err(err(1, 1, SyntaxErrorKind::MissingRoot)),
    }
}

/// Pops open concepts until `depth` remain, attaching each to its parent.
fn close_to(stack: &mut Vec<ConceptNode>, depth: usize) {
    while stack.len() > depth {
        let node = stack.pop().expect("len > depth >= 0");
        match stack.last_mut() {
            Some(parent) => parent.children.push(node),
            None => {
                stack.push(node);
                break;
            }
        }
    }
}

fn err(line: usize, column: usize, kind: SyntaxErrorKind) -> SyntaxError {
    SyntaxError {
        loc: Loc { line, column },
        kind,
    }
}

/// Payload scanner over the content part of one line.
struct Cursor<'a> {
    line: usize,
    /// column (1-based) of the first content character
    base_col: usize,
    text: &'a str,
}

impl<'a> Cursor<'a> {
    /// Column of the byte offset `at` within `text`.
    fn col_at(&self, at: usize) -> usize {
        self.base_col + self.text[..at].chars().count()
    }

    /// Error located at byte `at`, clamped to the last character of the line.
    fn error(&self, at: usize, kind: SyntaxErrorKind) -> SyntaxError {
        let mut col = self.col_at(at.min(self.text.len()));
        let last = self.base_col + self.text.chars().count().saturating_sub(1);
        col = col.min(last);
        err(self.line, col, kind)
    }

    fn skip_ws(&self, at: usize) -> usize {
        at + (self.text[at..].len() - self.text[at..].trim_start().len())
    }

    /// Parses `{name}` starting exactly at byte `at`; returns the ref and the rest.
    fn concept_ref(&self, at: usize) -> Result<(ConceptRef, &'a str), SyntaxError> {
        let rest = &self.text[at..];
        if !rest.starts_with('{') {
            return Err(self.error(at, SyntaxErrorKind::InvalidPayload("expected `{concept}`".into())));
        }
        let body = &rest[1..];
        let close = body.find('}');
        let open = body.find('{');
        let end = match (close, open) {
            (Some(c), Some(o)) if o < c => return Err(self.error(at + 1 + o, SyntaxErrorKind::UnbalancedBraces)),
            (Some(c), _) => c,
            (None, _) => return Err(self.error(at, SyntaxErrorKind::UnbalancedBraces)),
        };
        let name = body[..end].trim();
        if name.is_empty() {
            return Err(self.error(at, SyntaxErrorKind::EmptyConceptName));
        }
        let loc = Loc {
            line: self.line,
            column: self.col_at(at),
        };
        Ok((
            ConceptRef {
                name: name.to_string(),
                loc,
            },
            &body[end + 1..],
        ))
    }

    fn concept_ref_after_ws(&self, at: usize) -> Result<(ConceptRef, &'a str), SyntaxError> {
        self.concept_ref(self.skip_ws(at))
    }

    fn offset_of(&self, rest: &str) -> usize {
        self.text.len() - rest.len()
    }

    fn value_payload(&self, at: usize) -> Result<ValuePayload, SyntaxError> {
        let at = self.skip_ws(at);
        let rest = &self.text[at..];
        let (payload, tail) = if rest.starts_with('{') {
            let (c, tail) = self.concept_ref(at)?;
            (ValuePayload::Concept(c), tail)
        } else if rest.starts_with('"') {
            let (s, tail) = self.quoted(at)?;
            (ValuePayload::Literal(Literal::Text(s)), tail)
        } else if let Some(after) = rest.strip_prefix("sign(") {
            let inner = self.skip_ws(self.offset_of(after));
            let (uri, tail) = self.quoted(inner)?;
            let tail_at = self.skip_ws(self.offset_of(tail));
            let Some(tail) = self.text[tail_at..].strip_prefix(')') else {
                return Err(self.error(tail_at, SyntaxErrorKind::InvalidPayload("expected `)` after sign uri".into())));
            };
            if uri.is_empty() {
                return Err(self.error(inner, SyntaxErrorKind::InvalidPayload("empty sign uri".into())));
            }
            (ValuePayload::Literal(Literal::Sign(uri)), tail)
        } else {
            let token: &str = rest.split_whitespace().next().unwrap_or("");
            let number = token
                .parse::<f64>()
                .ok()
                .filter(|_| token.bytes().all(|b| b.is_ascii_digit() || b"+-.eE".contains(&b)))
                .and_then(Number::new);
            match number {
                Some(n) => (ValuePayload::Literal(Literal::Number(n)), &rest[token.len()..]),
                None => {
                    return Err(self.error(
                        at,
                        SyntaxErrorKind::InvalidPayload(
                            "value must be {concept}, a quoted string, a number or sign(\"uri\")".into(),
                        ),
                    ))
                }
            }
        };
        if !tail.trim().is_empty() {
            return Err(self.error(self.offset_of(tail), SyntaxErrorKind::TrailingText("<-".into())));
        }
        Ok(payload)
    }

    fn functional_payload(&self, at: usize) -> Result<FunctionalPayload, SyntaxError> {
        let at = self.skip_ws(at);
        let rest = &self.text[at..];
        let (operator, tail) = if rest.starts_with('"') {
            let (s, tail) = self.quoted(at)?;
            if s.trim().is_empty() {
                return Err(self.error(at, SyntaxErrorKind::InvalidPayload("empty instruction".into())));
            }
            (Operator::Instruction(s), tail)
        } else {
            let ident_len = rest
                .char_indices()
                .take_while(|(i, c)| c.is_ascii_alphabetic() || *c == '_' || (*i > 0 && c.is_ascii_digit()))
                .map(|(i, c)| i + c.len_utf8())
                .last()
                .unwrap_or(0);
            if ident_len == 0 {
                return Err(self.error(
                    at,
                    SyntaxErrorKind::InvalidPayload("operator must be an identifier or a quoted instruction".into()),
                ));
            }
            (Operator::Builtin(rest[..ident_len].to_string()), &rest[ident_len..])
        };
        let open_at = self.skip_ws(self.offset_of(tail));
        if !self.text[open_at..].starts_with('(') {
            return Err(self.error(open_at, SyntaxErrorKind::InvalidPayload("expected `(` after operator".into())));
        }
        let mut pos = self.skip_ws(open_at + 1);
        let mut args = Vec::new();
        if self.text[pos..].starts_with(')') {
            pos += 1;
        } else {
            loop {
                if !self.text[pos..].starts_with('{') {
                    return Err(self.error(
                        pos,
                        SyntaxErrorKind::InvalidPayload("arguments must be concept references `{name}`".into()),
                    ));
                }
                let (arg, tail) = self.concept_ref(pos)?;
                args.push(arg);
                pos = self.skip_ws(self.offset_of(tail));
                match self.text[pos..].chars().next() {
                    Some(',') => pos = self.skip_ws(pos + 1),
                    Some(')') => {
                        pos += 1;
                        break;
                    }
                    _ => {
                        return Err(self.error(
                            pos,
                            SyntaxErrorKind::InvalidPayload("expected `,` or `)` in argument list".into()),
                        ))
                    }
                }
            }
        }
        if !self.text[pos..].trim().is_empty() {
            return Err(self.error(pos, SyntaxErrorKind::TrailingText("<=".into())));
        }
        Ok(FunctionalPayload { operator, args })
    }

    /// Double-quoted string with `\"`, `\\`, `\n` and `\t` escapes.
    fn quoted(&self, at: usize) -> Result<(String, &'a str), SyntaxError> {
        let rest = &self.text[at..];
        let mut out = String::new();
        let mut chars = rest.char_indices().skip(1);
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => return Ok((out, &rest[i + 1..])),
                '\\' => match chars.next() {
                    Some((_, '"')) => out.push('"'),
                    Some((_, '\\')) => out.push('\\'),
                    Some((_, 'n')) => out.push('\n'),
                    Some((_, 't')) => out.push('\t'),
                    Some((j, other)) => {
                        return Err(self.error(
                            at + j,
                            SyntaxErrorKind::InvalidPayload(format!("unknown escape `\\{other}`")),
                        ))
                    }
                    None => break,
                },
                _ => out.push(c),
            }
        }
        Err(self.error(at, SyntaxErrorKind::InvalidPayload("unterminated string".into())))
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Text(s) => f.write_str(&quote(s)),
            Literal::Number(n) => write!(f, "{n}"),
            Literal::Sign(uri) => write!(f, "sign({})", quote(uri)),
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operator::Builtin(name) => f.write_str(name),
            Operator::Instruction(text) => f.write_str(&quote(text)),
        }
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Marker::Value(ValuePayload::Concept(c)) => write!(f, "<- {{{}}}", c.name),
            Marker::Value(ValuePayload::Literal(l)) => write!(f, "<- {l}"),
            Marker::Functional(func) => {
                write!(f, "<= {}(", func.operator)?;
                for (i, arg) in func.args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{{{}}}", arg.name)?;
                }
                f.write_str(")")
            }
            Marker::Context(c) => write!(f, "<* {{{}}}", c.name),
        }
    }
}

/// Canonical form: four-space indentation, LF endings, marker lines before
/// child concepts, no comments or trailing whitespace.
pub fn pretty_print(plan: &SourcePlan) -> String {
    let mut out = String::new();
    print_node(&plan.root, 0, &mut out);
    out
}

fn print_node(node: &ConceptNode, depth: usize, out: &mut String) {
    let pad = " ".repeat(depth * INDENT_WIDTH);
    let _ = writeln!(out, "{pad}{{{}}}", node.name);
    let inner = " ".repeat((depth + 1) * INDENT_WIDTH);
    for line in &node.lines {
        let _ = writeln!(out, "{inner}{}", line.marker);
    }
    for child in &node.children {
        print_node(child, depth + 1, out);
    }
}
