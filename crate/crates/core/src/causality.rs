//! Structural causality graph over a message catalog.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::{bfs, Catalog, Message, MsgId};

/// Which src/dest relation induces an edge `i -> j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Predicate {
    /// `i.src == j.dest` (request followed by its response).
    PaperSrcDest,
    /// `i.dest == j.src` (forwarding chain).
    ForwardDestSrc,
    #[default]
    Union,
}

impl Predicate {
    pub const ALL: [Predicate; 3] = [
        Predicate::PaperSrcDest,
        Predicate::ForwardDestSrc,
        Predicate::Union,
    ];

    pub fn holds(self, a: &Message, b: &Message) -> bool {
        match self {
            Predicate::PaperSrcDest => a.src == b.dest,
            Predicate::ForwardDestSrc => a.dest == b.src,
            Predicate::Union => a.src == b.dest || a.dest == b.src,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Predicate::PaperSrcDest => "paper-src-dest",
            Predicate::ForwardDestSrc => "forward-dest-src",
            Predicate::Union => "union",
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Predicate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-src-dest" | "paper" => Ok(Predicate::PaperSrcDest),
            "forward-dest-src" | "forward" => Ok(Predicate::ForwardDestSrc),
            "union" => Ok(Predicate::Union),
            other => Err(Error::Config(format!("unknown predicate `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalityGraph {
    pub nodes: BTreeSet<MsgId>,
    pub edges: BTreeSet<(MsgId, MsgId)>,
    pub predicate: Predicate,
    pub starts: BTreeSet<MsgId>,
    pub ends: BTreeSet<MsgId>,
}

impl CausalityGraph {
    pub fn successors(&self) -> BTreeMap<MsgId, Vec<MsgId>> {
        let mut succ: BTreeMap<MsgId, Vec<MsgId>> = BTreeMap::new();
        for &(a, b) in &self.edges {
            succ.entry(a).or_default().push(b);
        }
        succ
    }

    pub fn predecessors(&self) -> BTreeMap<MsgId, Vec<MsgId>> {
        let mut pred: BTreeMap<MsgId, Vec<MsgId>> = BTreeMap::new();
        for &(a, b) in &self.edges {
            pred.entry(b).or_default().push(a);
        }
        pred
    }

    /// Subgraph induced by `keep`, with edges restricted to kept endpoints.
    pub fn restrict(&self, keep: &BTreeSet<MsgId>) -> CausalityGraph {
        CausalityGraph {
            nodes: keep.clone(),
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|(a, b)| keep.contains(a) && keep.contains(b))
                .collect(),
            predicate: self.predicate,
            starts: self.starts.intersection(keep).copied().collect(),
            ends: self.ends.intersection(keep).copied().collect(),
        }
    }
}

/// Edge `(i, j)` for every ordered pair of distinct catalog messages satisfying `predicate`.
pub fn build_graph(catalog: &Catalog, predicate: Predicate) -> CausalityGraph {
    let msgs = catalog.messages();
    let mut edges = BTreeSet::new();
    // Index messages by endpoint so the scan is linear in the output size.
    let mut by_src: BTreeMap<&str, Vec<&Message>> = BTreeMap::new();
    let mut by_dest: BTreeMap<&str, Vec<&Message>> = BTreeMap::new();
    for m in msgs {
        by_src.entry(m.src.as_str()).or_default().push(m);
        by_dest.entry(m.dest.as_str()).or_default().push(m);
    }
    for a in msgs {
        if matches!(predicate, Predicate::PaperSrcDest | Predicate::Union) {
            for b in by_dest.get(a.src.as_str()).into_iter().flatten() {
                if a.id != b.id {
                    edges.insert((a.id, b.id));
                }
            }
        }
        if matches!(predicate, Predicate::ForwardDestSrc | Predicate::Union) {
            for b in by_src.get(a.dest.as_str()).into_iter().flatten() {
                if a.id != b.id {
                    edges.insert((a.id, b.id));
                }
            }
        }
    }
    CausalityGraph {
        nodes: catalog.ids().collect(),
        edges,
        predicate,
        starts: catalog.start_ids.clone(),
        ends: catalog.end_ids.clone(),
    }
}

/// Nodes lying on some nonempty `start -> end` path, with edges restricted to them.
pub fn reachable_subgraph(g: &CausalityGraph, start: MsgId, end: MsgId) -> Result<CausalityGraph> {
    if !g.nodes.contains(&start) || !g.nodes.contains(&end) {
        return Err(Error::NoPath { start, end });
    }
    let succ = g.successors();
    let pred = g.predecessors();
    // Seeding from the successors of `start` requires a nonempty path.
    let mut fwd = BTreeSet::new();
    for &s in succ.get(&start).into_iter().flatten() {
        if !fwd.contains(&s) {
            fwd.extend(bfs(s, &succ));
        }
    }
    if !fwd.contains(&end) {
        return Err(Error::NoPath { start, end });
    }
    fwd.insert(start);
    let bwd = bfs(end, &pred);
    let keep: BTreeSet<MsgId> = fwd.intersection(&bwd).copied().collect();
    let mut sub = g.restrict(&keep);
    sub.starts = BTreeSet::from([start]);
    sub.ends = BTreeSet::from([end]);
    Ok(sub)
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering. Start nodes are green, end nodes purple.
pub fn to_dot(g: &CausalityGraph, catalog: &Catalog, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", dot_escape(name));
    out.push_str("  node [shape=box, style=filled, fillcolor=white];\n");
    for &n in &g.nodes {
        let label = match catalog.get(n) {
            Some(m) => format!("msg_{}\\n{}:{}:{}", n, m.src, m.dest, m.cmd),
            None => format!("msg_{n}"),
        };
        let color = if g.starts.contains(&n) {
            ", fillcolor=green"
        } else if g.ends.contains(&n) {
            ", fillcolor=purple, fontcolor=white"
        } else {
            ""
        };
        let _ = writeln!(out, "  msg_{n} [label=\"{}\"{color}];", dot_escape(&label).replace("\\\\n", "\\n"));
    }
    for (a, b) in &g.edges {
        let _ = writeln!(out, "  msg_{a} -> msg_{b};");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(msgs: &[(MsgId, &str, &str, &str)]) -> Catalog {
        Catalog::new(
            msgs.iter().map(|&(i, s, d, c)| Message::new(i, s, d, c)).collect(),
            BTreeSet::new(),
            BTreeSet::new(),
        )
        .unwrap()
    }

    #[test]
    fn request_response_edge() {
        let c = catalog(&[(1, "CPU_0", "Cache", "rd_req"), (2, "Cache", "CPU_0", "rd_resp")]);
        let g = build_graph(&c, Predicate::PaperSrcDest);
        assert!(g.edges.contains(&(1, 2)));
    }

    #[test]
    fn empty_catalog_empty_graph() {
        let g = build_graph(&catalog(&[]), Predicate::Union);
        assert!(g.nodes.is_empty() && g.edges.is_empty());
    }

    #[test]
    fn no_self_loops() {
        let c = catalog(&[(1, "A", "A", "loop"), (2, "A", "B", "x")]);
        let g = build_graph(&c, Predicate::Union);
        assert!(g.edges.iter().all(|(a, b)| a != b));
    }

    fn manual(nodes: &[MsgId], edges: &[(MsgId, MsgId)]) -> CausalityGraph {
        CausalityGraph {
            nodes: nodes.iter().copied().collect(),
            edges: edges.iter().copied().collect(),
            predicate: Predicate::Union,
            starts: BTreeSet::new(),
            ends: BTreeSet::new(),
        }
    }

    #[test]
    fn dangling_branch_is_pruned() {
        // s=1, a=2, e=3, b=4
        let g = manual(&[1, 2, 3, 4], &[(1, 2), (2, 3), (1, 4)]);
        let sub = reachable_subgraph(&g, 1, 3).unwrap();
        assert_eq!(sub.nodes, BTreeSet::from([1, 2, 3]));
        assert_eq!(sub.edges, BTreeSet::from([(1, 2), (2, 3)]));
    }

    #[test]
    fn start_equals_end_without_cycle_is_no_path() {
        let g = manual(&[1], &[]);
        assert!(matches!(reachable_subgraph(&g, 1, 1), Err(Error::NoPath { .. })));
    }

    #[test]
    fn unreachable_end_is_no_path() {
        let g = manual(&[1, 2, 3], &[(1, 2)]);
        assert!(matches!(reachable_subgraph(&g, 1, 3), Err(Error::NoPath { start: 1, end: 3 })));
    }

    #[test]
    fn dot_colors_and_labels() {
        let mut c = catalog(&[(1, "CPU_0", "Cache", "rd_req"), (2, "Cache", "CPU_0", "rd_resp")]);
        c.start_ids.insert(1);
        c.end_ids.insert(2);
        let dot = to_dot(&build_graph(&c, Predicate::Union), &c, "cg");
        assert!(dot.contains("msg_1 [label=\"msg_1\\nCPU_0:Cache:rd_req\", fillcolor=green]"));
        assert!(dot.contains("fillcolor=purple"));
        assert!(dot.contains("msg_1 -> msg_2;"));
    }
}
