//! Plans with one injected out-of-scope reference, each paired with the
//! valid plan it was derived from.

use nc_core::compiler::ScopeErrorKind;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::dag::Dag;

pub struct Injection {
    pub text: String,
    pub twin: String,
    pub concept: String,
    pub line: usize,
    pub column: usize,
    pub kind: ScopeErrorKind,
}

fn line_of(text: &str, needle: &str) -> usize {
    text.lines().position(|l| l.starts_with(needle)).expect("line present") + 1
}

/// Adds `{target}` as an extra argument of concept `i`'s functional line.
fn inject_arg(text: &str, i: usize, target: &str) -> (String, usize, usize) {
    let head = format!("        <= \"derive {i}\"(");
    let line = line_of(text, &head);
    let mut out = String::new();
    let mut column = 0;
    for (n, l) in text.lines().enumerate() {
        if n + 1 == line {
            let stem = l.strip_suffix(')').unwrap();
            let sep = if stem.ends_with('(') { "" } else { ", " };
            let edited = format!("{stem}{sep}{{{target}}})");
            column = edited.rfind(&format!("{{{target}}}")).unwrap() + 1;
            out.push_str(&edited);
        } else {
            out.push_str(l);
        }
        out.push('\n');
    }
    (out, line, column)
}

/// Adds a literal child `{hidden}` to concept `k`.
fn add_hidden_child(text: &str, k: usize) -> String {
    let mut out = String::new();
    for l in text.lines() {
        out.push_str(l);
        out.push('\n');
        if l == format!("    {{{}}}", Dag::name(k)) {
            out.push_str("        {hidden}\n            <- \"h\"\n");
        }
    }
    out
}

pub fn corpus() -> Vec<Injection> {
    let mut rng = StdRng::seed_from_u64(7);
    let mut out = Vec::new();
    while out.len() < 30 {
        let n = rng.gen_range(3..12);
        let dag = Dag::random(&mut rng, n, 3);
        let derived: Vec<usize> = (0..dag.len()).filter(|i| !dag.deps[*i].is_empty()).collect();
        if derived.is_empty() {
            continue;
        }
        let i = derived[rng.gen_range(0..derived.len())];
        let base = dag.to_ncds();
        let (text, twin, target) = match out.len() % 3 {
            // a sibling that is not a child
            0 => {
                let Some(j) = (0..dag.len()).find(|j| *j != i && !dag.deps[i].contains(j)) else {
                    continue;
                };
                let target = Dag::name(j);
                (inject_arg(&base, i, &target), base.clone(), target)
            }
            // the enclosing concept itself
            1 => (inject_arg(&base, i, "r"), base.clone(), "r".to_string()),
            // a child of another concept
            _ => {
                let k = (i + 1) % dag.len();
                let with_hidden = add_hidden_child(&base, k);
                (inject_arg(&with_hidden, i, "hidden"), with_hidden, "hidden".to_string())
            }
        };
        let (text, line, column) = text;
        out.push(Injection {
            text,
            twin,
            concept: target,
            line,
            column,
            kind: ScopeErrorKind::OutOfScope,
        });
    }
    out
}

