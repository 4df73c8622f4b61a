//! Refines a causality graph into one flow per (start, end) pair by keeping only
//! the edges the scorer considers likely successions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use petgraph::algo::has_path_connecting;
use petgraph::graphmap::DiGraphMap;
use rayon::prelude::*;

use crate::causality::{reachable_subgraph, CausalityGraph};
use crate::error::{Error, Result};
use crate::seqmodel::{successor_distribution, Scorer, DEFAULT_SAMPLES};
use crate::slice::Slicing;
use crate::types::{bfs, Catalog, FlowSpec, MsgId, Trace};

pub const DEFAULT_THETA: f64 = 0.75;
/// Pairs whose end follows their start in fewer slices than this are not mined.
pub const DEFAULT_MIN_SUPPORT: f64 = 0.25;

type Edge = (MsgId, MsgId);

#[derive(Debug, Clone, PartialEq)]
pub struct MineOptions {
    pub theta: f64,
    /// Occurrences of each message sampled when querying the scorer.
    pub samples: usize,
    /// How traces are cut before querying; should match training.
    pub slicing: Slicing,
    /// Minimum [`pair_support`] for a (start, end) pair to be mined.
    pub min_support: f64,
}

impl Default for MineOptions {
    fn default() -> Self {
        MineOptions {
            theta: DEFAULT_THETA,
            samples: DEFAULT_SAMPLES,
            slicing: Slicing::default(),
            min_support: DEFAULT_MIN_SUPPORT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedFlow {
    pub start: MsgId,
    pub end: MsgId,
    pub edges: BTreeSet<Edge>,
    pub theta: f64,
    pub edge_scores: BTreeMap<Edge, f64>,
}

impl MinedFlow {
    pub fn nodes(&self) -> BTreeSet<MsgId> {
        let mut n: BTreeSet<MsgId> = self.edges.iter().flat_map(|&(a, b)| [a, b]).collect();
        n.insert(self.start);
        n.insert(self.end);
        n
    }

    pub fn default_name(&self) -> String {
        format!("flow_{}_{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemovalReason {
    /// Edge into the start or out of the end message.
    Boundary,
    /// Would close a cycle with stronger edges.
    CycleBreak,
    BelowTheta,
    /// No longer on any start-to-end path after other removals.
    Pruned,
}

impl fmt::Display for RemovalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RemovalReason::Boundary => "boundary",
            RemovalReason::CycleBreak => "cycle",
            RemovalReason::BelowTheta => "below-theta",
            RemovalReason::Pruned => "pruned",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovedEdge {
    pub start: MsgId,
    pub end: MsgId,
    pub edge: Edge,
    pub score: f64,
    pub reason: RemovalReason,
}

#[derive(Debug, Default)]
pub struct MineResult {
    pub flows: Vec<MinedFlow>,
    pub removed: Vec<RemovedEdge>,
    /// Pairs without a surviving path, with the reason.
    pub failures: Vec<(MsgId, MsgId, Error)>,
}

impl MineResult {
    /// Human-readable list of removed edges and failed pairs.
    pub fn summary(&self) -> String {
        let mut out = String::from("# start end from to score reason\n");
        for r in &self.removed {
            out += &format!(
                "{} {} {} {} {:.4} {}\n",
                r.start, r.end, r.edge.0, r.edge.1, r.score, r.reason
            );
        }
        for (s, e, err) in &self.failures {
            out += &format!("# pair {s} -> {e} not mined: {err}\n");
        }
        out
    }
}

/// Mines every annotated (start, end) pair with default options and the given threshold.
pub fn mine<S: Scorer + ?Sized>(
    g: &CausalityGraph,
    scorer: &S,
    traces: &[Trace],
    catalog: &Catalog,
    theta: f64,
) -> Result<MineResult> {
    mine_with(
        g,
        scorer,
        traces,
        catalog,
        &MineOptions {
            theta,
            ..MineOptions::default()
        },
    )
}

pub fn mine_with<S: Scorer + ?Sized>(
    g: &CausalityGraph,
    scorer: &S,
    traces: &[Trace],
    catalog: &Catalog,
    opts: &MineOptions,
) -> Result<MineResult> {
    if !(opts.theta > 0.0 && opts.theta <= 1.0) {
        return Err(Error::Config(format!("theta {} outside (0, 1]", opts.theta)));
    }
    if catalog.start_ids.is_empty() || catalog.end_ids.is_empty() {
        return Err(Error::Config("catalog needs at least one start and one end message".into()));
    }
    let slices = opts.slicing.apply(traces, catalog);

    let mut result = MineResult::default();
    let mut candidates = Vec::new();
    for (start, end) in catalog.start_end_pairs() {
        let support = pair_support(&slices, start, end);
        if support < opts.min_support {
            result.failures.push((start, end, Error::Unsupported { start, end, support }));
            continue;
        }
        match candidate_graph(g, start, end) {
            Ok((sub, removed)) => candidates.push((start, end, sub, removed)),
            Err(e) => result.failures.push((start, end, e)),
        }
    }

    // One scorer query batch per source message, shared by all pairs.
    let sources: BTreeSet<MsgId> = candidates
        .iter()
        .flat_map(|(_, _, sub, _)| sub.edges.iter().map(|e| e.0))
        .collect();
    let dists: BTreeMap<MsgId, Option<Vec<f64>>> = sources
        .into_par_iter()
        .map(|m| match successor_distribution(scorer, &slices, m, opts.samples) {
            Ok(d) => Ok((m, Some(d))),
            Err(Error::NoOccurrence(_)) => {
                log::warn!("message {m} never occurs in the traces; its outgoing edges score 0");
                Ok((m, None))
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let vocab = scorer.vocab();
    let outcomes: Vec<_> = candidates
        .into_par_iter()
        .map(|(start, end, sub, boundary)| {
            let succ = sub.successors();
            let scores: BTreeMap<Edge, f64> = sub
                .edges
                .iter()
                .map(|&(a, b)| {
                    let s = dists[&a]
                        .as_ref()
                        .map_or(0.0, |d| relative_score(&succ[&a].iter().map(|&c| vocab.prob(d, c)).collect::<Vec<_>>(), vocab.prob(d, b)));
                    ((a, b), s)
                })
                .collect();
            refine(start, end, sub, boundary, scores, opts.theta)
        })
        .collect();
    for (start, end, outcome, mut removed) in outcomes {
        result.removed.append(&mut removed);
        match outcome {
            Ok(flow) => result.flows.push(flow),
            Err(e) => result.failures.push((start, end, e)),
        }
    }
    Ok(result)
}

/// Share of the slices containing `start` that finish with `end`. A single
/// candidate successor always scores 1, so without this check a pair that never
/// forms an instance could be mined from graph structure alone.
pub fn pair_support(slices: &[Trace], start: MsgId, end: MsgId) -> f64 {
    let (mut with_start, mut finished) = (0usize, 0usize);
    for s in slices.iter().filter(|s| s.events.contains(&start)) {
        with_start += 1;
        if s.events.last() == Some(&end) {
            finished += 1;
        }
    }
    if with_start == 0 {
        0.0
    } else {
        finished as f64 / with_start as f64
    }
}

/// Score of a successor with probability `p` among candidates with probabilities
/// `cands`: its share of the candidate mass times the effective number of
/// candidates (the perplexity), capped at 1. A fair k-way branch scores 1 on every
/// arm; a rare alternative to a dominant successor scores near 0.
fn relative_score(cands: &[f64], p: f64) -> f64 {
    let total: f64 = cands.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let entropy: f64 = cands
        .iter()
        .map(|&q| q / total)
        .filter(|&q| q > 0.0)
        .map(|q| -q * q.ln())
        .sum();
    (p / total * entropy.exp()).clamp(0.0, 1.0)
}

/// Reachable subgraph for the pair without edges into the start or out of the end.
fn candidate_graph(g: &CausalityGraph, start: MsgId, end: MsgId) -> Result<(CausalityGraph, Vec<Edge>)> {
    let mut sub = reachable_subgraph(g, start, end)?;
    let boundary: Vec<Edge> = sub
        .edges
        .iter()
        .copied()
        .filter(|&(a, b)| b == start || a == end)
        .collect();
    for e in &boundary {
        sub.edges.remove(e);
    }
    let kept = on_paths(&sub.edges, start, end).ok_or(Error::NoPath { start, end })?;
    Ok((restrict(&sub, &kept), boundary))
}

fn restrict(g: &CausalityGraph, keep: &BTreeSet<MsgId>) -> CausalityGraph {
    let mut r = g.restrict(keep);
    r.starts = g.starts.clone();
    r.ends = g.ends.clone();
    r
}

/// Nodes on some start-to-end path, or None when the end is unreachable.
fn on_paths(edges: &BTreeSet<Edge>, start: MsgId, end: MsgId) -> Option<BTreeSet<MsgId>> {
    let mut succ: BTreeMap<MsgId, Vec<MsgId>> = BTreeMap::new();
    let mut pred: BTreeMap<MsgId, Vec<MsgId>> = BTreeMap::new();
    for &(a, b) in edges {
        succ.entry(a).or_default().push(b);
        pred.entry(b).or_default().push(a);
    }
    let fwd = bfs(start, &succ);
    if !fwd.contains(&end) || start == end {
        return None;
    }
    let bwd = bfs(end, &pred);
    Some(fwd.intersection(&bwd).copied().collect())
}

type Outcome = (MsgId, MsgId, Result<MinedFlow>, Vec<RemovedEdge>);

fn refine(
    start: MsgId,
    end: MsgId,
    sub: CausalityGraph,
    boundary: Vec<Edge>,
    scores: BTreeMap<Edge, f64>,
    theta: f64,
) -> Outcome {
    let mut removed: Vec<RemovedEdge> = boundary
        .into_iter()
        .map(|edge| RemovedEdge {
            start,
            end,
            edge,
            score: f64::NAN,
            reason: RemovalReason::Boundary,
        })
        .collect();
    let mut note = |edge: Edge, reason| {
        removed.push(RemovedEdge {
            start,
            end,
            edge,
            score: scores[&edge],
            reason,
        })
    };
    let mut edges = sub.edges.clone();

    let below: Vec<Edge> = edges.iter().copied().filter(|e| scores[e] < theta).collect();
    for e in below {
        edges.remove(&e);
        note(e, RemovalReason::BelowTheta);
    }

    // Greedy acyclic subgraph: strongest edges first, skipping any edge that would
    // close a cycle. An edge's fate depends only on stronger edges, so the result
    // shrinks monotonically as theta grows.
    let mut order: Vec<Edge> = edges.iter().copied().collect();
    order.sort_by(|x, y| scores[y].total_cmp(&scores[x]).then(x.cmp(y)));
    let mut kept: DiGraphMap<MsgId, ()> = DiGraphMap::new();
    for e in order {
        if has_path_connecting(&kept, e.1, e.0, None) {
            edges.remove(&e);
            note(e, RemovalReason::CycleBreak);
        } else {
            kept.add_edge(e.0, e.1, ());
        }
    }

    let Some(keep) = on_paths(&edges, start, end) else {
        for e in edges {
            note(e, RemovalReason::Pruned);
        }
        return (start, end, Err(Error::NoPath { start, end }), removed);
    };
    let dead: Vec<Edge> = edges
        .iter()
        .copied()
        .filter(|(a, b)| !keep.contains(a) || !keep.contains(b))
        .collect();
    for e in dead {
        edges.remove(&e);
        note(e, RemovalReason::Pruned);
    }
    let edge_scores = edges.iter().map(|e| (*e, scores[e])).collect();
    let flow = MinedFlow {
        start,
        end,
        edges,
        theta,
        edge_scores,
    };
    (start, end, Ok(flow), removed)
}

/// Converts a mined flow into a flow specification with a single end message.
pub fn to_flowspec(f: &MinedFlow, name: &str) -> Result<FlowSpec> {
    FlowSpec::new(name, f.start, [f.end], f.edges.iter().copied())
        .map_err(|e| Error::InvariantViolation(format!("mined flow {name} is malformed: {e}")))
}

/// Restricts a mined flow to the catalog graph it was mined from, for display.
pub fn as_graph(f: &MinedFlow, g: &CausalityGraph) -> CausalityGraph {
    CausalityGraph {
        nodes: f.nodes(),
        edges: f.edges.clone(),
        predicate: g.predicate,
        starts: BTreeSet::from([f.start]),
        ends: BTreeSet::from([f.end]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causality::{build_graph, Predicate};
    use crate::seqmodel::{NGramScorer, Vocab};
    use crate::types::Message;

    fn chain_catalog() -> Catalog {
        Catalog::new(
            vec![
                Message::new(1, "A", "B", "x"),
                Message::new(2, "B", "C", "x"),
                Message::new(3, "C", "D", "x"),
            ],
            BTreeSet::from([1]),
            BTreeSet::from([3]),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_chain_is_kept() {
        let c = chain_catalog();
        let g = build_graph(&c, Predicate::ForwardDestSrc);
        let traces = vec![Trace::new(vec![1, 2, 3, 1, 2, 3])];
        let s = NGramScorer::fit(Vocab::new(&c), 2, 0.1, &traces).unwrap();
        let r = mine(&g, &s, &traces, &c, 0.75).unwrap();
        assert_eq!(r.flows.len(), 1);
        assert_eq!(r.flows[0].edges, BTreeSet::from([(1, 2), (2, 3)]));
        let spec = to_flowspec(&r.flows[0], "chain").unwrap();
        assert_eq!(spec.paths(), vec![vec![1, 2, 3]]);
    }

    #[test]
    fn theta_out_of_range() {
        let c = chain_catalog();
        let g = build_graph(&c, Predicate::Union);
        let s = NGramScorer::fit(Vocab::new(&c), 2, 0.1, &[Trace::new(vec![1, 2, 3])]).unwrap();
        assert!(mine(&g, &s, &[], &c, 0.0).is_err());
        assert!(mine(&g, &s, &[], &c, 1.5).is_err());
    }

    #[test]
    fn single_edge_flowspec() {
        let f = MinedFlow {
            start: 4,
            end: 9,
            edges: BTreeSet::from([(4, 9)]),
            theta: 0.5,
            edge_scores: BTreeMap::from([((4, 9), 1.0)]),
        };
        assert_eq!(to_flowspec(&f, "s").unwrap().edges.len(), 1);
    }
}
