//! Text renderings of references and trace filtering.

use std::fmt::Write;
use std::str::FromStr;

use nc_core::reference::{Axis, Reference};
use nc_core::{FlowIndex, NodeAddr};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum TensorView {
    #[default]
    Table,
    List,
    Json,
}

impl FromStr for TensorView {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(TensorView::Table),
            "list" => Ok(TensorView::List),
            "json" => Ok(TensorView::Json),
            other => Err(format!("unknown view `{other}`; expected table, list or json")),
        }
    }
}

/// Row-major index of every cell.
fn indices(axes: &[Axis]) -> Vec<Vec<usize>> {
    let total: usize = axes.iter().map(|a| a.length).product();
    (0..total)
        .map(|mut flat| {
            let mut idx = vec![0; axes.len()];
            for (k, a) in axes.iter().enumerate().rev() {
                idx[k] = flat % a.length;
                flat /= a.length;
            }
            idx
        })
        .collect()
}

fn one_line(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "\\r")
}

pub fn render(r: &Reference, view: TensorView) -> String {
    match view {
        TensorView::Json => {
            let mut s = serde_json::to_string_pretty(&r.to_json_value()).expect("reference serializes");
            s.push('\n');
            s
        }
        TensorView::List => render_list(r),
        TensorView::Table => render_table(r),
    }
}

fn render_list(r: &Reference) -> String {
    let mut out = String::new();
    if r.is_scalar() {
        out.push_str(&r.cells()[0].render());
        out.push('\n');
        return out;
    }
    for (idx, cell) in indices(r.axes()).iter().zip(r.cells()) {
        let at: Vec<String> = r.axes().iter().zip(idx).map(|(a, i)| format!("{}={i}", a.name)).collect();
        writeln!(out, "[{}] {}", at.join(", "), one_line(&cell.render())).unwrap();
    }
    out
}

/// Rank 0 and 1 as a two-column table; higher ranks put the last axis
/// across the columns.
fn render_table(r: &Reference) -> String {
    let axes = r.axes();
    let mut rows: Vec<Vec<String>> = Vec::new();
    match axes.len() {
        0 => {
            rows.push(vec!["value".into()]);
            rows.push(vec![one_line(&r.cells()[0].render())]);
        }
        1 => {
            rows.push(vec![axes[0].name.clone(), "value".into()]);
            for (i, cell) in r.cells().iter().enumerate() {
                rows.push(vec![i.to_string(), one_line(&cell.render())]);
            }
        }
        n => {
            let last = &axes[n - 1];
            let mut header: Vec<String> = axes[..n - 1].iter().map(|a| a.name.clone()).collect();
            header.extend((0..last.length).map(|j| format!("{}={j}", last.name)));
            rows.push(header);
            if last.length > 0 {
                for (chunk, idx) in r.cells().chunks(last.length).zip(indices(&axes[..n - 1])) {
                    let mut row: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
                    row.extend(chunk.iter().map(|c| one_line(&c.render())));
                    rows.push(row);
                }
            }
        }
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (k, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if k == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}

/// Inclusive flow-index range; `to` also covers its descendants.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowRange {
    pub from: Option<FlowIndex>,
    pub to: Option<FlowIndex>,
}

impl FlowRange {
    pub fn parse(from: Option<&str>, to: Option<&str>) -> Result<Self, String> {
        let p = |s: Option<&str>| -> Result<Option<FlowIndex>, String> {
            s.filter(|s| !s.is_empty())
                .map(|s| s.parse::<FlowIndex>().map_err(|e| format!("bad flow index `{s}`: {}", e.reason)))
                .transpose()
        };
        Ok(FlowRange { from: p(from)?, to: p(to)? })
    }

    pub fn contains(&self, flow: &FlowIndex) -> bool {
        let above = self.from.as_ref().is_none_or(|f| flow >= f);
        let below = self
            .to
            .as_ref()
            .is_none_or(|t| flow <= t || flow.is_descendant_of(t));
        above && below
    }

    pub fn is_open(&self) -> bool {
        self.from.is_none() && self.to.is_none()
    }

    /// Keeps entries whose `address` falls in the range. Entries without an
    /// address (run start and finish) are kept only by an open range.
    pub fn filter(&self, entries: Vec<Value>) -> Vec<Value> {
        if self.is_open() {
            return entries;
        }
        entries
            .into_iter()
            .filter(|e| {
                e.get("address")
                    .and_then(Value::as_str)
                    .and_then(|a| a.parse::<NodeAddr>().ok())
                    .is_some_and(|a| self.contains(&a.flow))
            })
            .collect()
    }
}
