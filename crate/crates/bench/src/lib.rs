//! Synthetic plans for benchmarking.

use std::fmt::Write;

/// A layered plan of `n` concepts where concept `i` reads up to `fan_in`
/// of the concepts just before it. The root reads the last one.
pub fn layered_plan(n: usize, fan_in: usize) -> String {
    let mut s = String::from("{r}\n");
    writeln!(s, "    <= \"assemble\"({{c{}}})", n - 1).unwrap();
    for i in 0..n {
        writeln!(s, "    {{c{i}}}").unwrap();
        let deps: Vec<usize> = (i.saturating_sub(fan_in)..i).collect();
        if deps.is_empty() {
            writeln!(s, "        <- \"seed {i}\"").unwrap();
            continue;
        }
        let args: Vec<String> = deps.iter().map(|d| format!("{{c{d}}}")).collect();
        writeln!(s, "        <= \"derive {i}\"({})", args.join(", ")).unwrap();
        for d in deps {
            writeln!(s, "        {{c{d}}}\n            <- {{c{d}}}").unwrap();
        }
    }
    s
}
