use std::fmt::Write;

use crate::archspace::{DiscreteArch, SearchSpaceSpec};
use crate::Result;

/// The architecture as a Graphviz chain: input stem, one node per layer
/// labelled with its block, classifier head.
pub fn export_dot(arch: &DiscreteArch, space: &SearchSpaceSpec) -> Result<String> {
    arch.check_for(space)?;
    let mut s = String::from("digraph arch {\n  rankdir=LR;\n  stem [label=\"stem\", shape=box];\n");
    for (l, &k) in arch.ops().iter().enumerate() {
        writeln!(s, "  l{l} [label=\"{}\"];", space.block(k).name()).unwrap();
    }
    s.push_str("  head [label=\"head\", shape=box];\n  stem");
    for l in 0..arch.len() {
        write!(s, " -> l{l}").unwrap();
    }
    s.push_str(" -> head;\n}\n");
    Ok(s)
}
