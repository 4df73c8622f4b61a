//! Independent reference implementations and random inputs shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use flowmine::{CausalityGraph, Catalog, FlowSpec, Message, MsgId, Predicate, Trace};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

/// A random flow over the given distinct ids: ids[0] starts, the last id ends,
/// consecutive ids are chained and extra forward edges are added at random.
pub fn random_flow<R: Rng>(rng: &mut R, name: &str, ids: &[MsgId]) -> FlowSpec {
    let n = ids.len();
    let mut edges: BTreeSet<(MsgId, MsgId)> = (1..n).map(|i| (ids[i - 1], ids[i])).collect();
    for i in 0..n.saturating_sub(1) {
        for j in i + 2..n {
            if rng.random_bool(0.25) {
                edges.insert((ids[i], ids[j]));
            }
        }
    }
    FlowSpec::new(name, ids[0], [ids[n - 1]], edges).expect("forward edges form a valid flow")
}

/// Up to `max_flows` random flows of 2..=`max_nodes` messages drawn from ids
/// `1..=pool`. Each flow's start message is its own; the other messages may be
/// shared between flows.
pub fn random_flows<R: Rng>(rng: &mut R, max_flows: usize, max_nodes: usize, pool: MsgId) -> Vec<FlowSpec> {
    let k = rng.random_range(1..=max_flows);
    let mut ids: Vec<MsgId> = (1..=pool).collect();
    ids.shuffle(rng);
    let (starts, shared) = ids.split_at(k);
    (0..k)
        .map(|f| {
            let n = rng.random_range(2..=max_nodes.min(shared.len() + 1));
            let mut path = vec![starts[f]];
            path.extend(shared.choose_multiple(rng, n - 1).copied());
            random_flow(rng, &format!("f{f}"), &path)
        })
        .collect()
}

#[derive(Clone)]
struct Open {
    flow: usize,
    node: MsgId,
    events: usize,
}

/// Maximum number of events covered by finished instances over every way of
/// assigning each event (reject, spawn, or advance any open instance).
/// Exponential; no memoization or pruning.
pub fn brute_force_accepted(flows: &[FlowSpec], trace: &Trace) -> usize {
    fn go(flows: &[FlowSpec], ev: &[MsgId], open: &mut Vec<Open>, done: usize) -> usize {
        let Some((&e, rest)) = ev.split_first() else { return done };
        let mut best = go(flows, rest, open, done);
        for (f, flow) in flows.iter().enumerate() {
            if flow.start == e {
                if flow.ends.contains(&e) {
                    best = best.max(go(flows, rest, open, done + 1));
                } else {
                    open.push(Open { flow: f, node: e, events: 1 });
                    best = best.max(go(flows, rest, open, done));
                    open.pop();
                }
            }
        }
        for k in 0..open.len() {
            let o = open[k].clone();
            let flow = &flows[o.flow];
            if !flow.edges.contains(&(o.node, e)) {
                continue;
            }
            if flow.ends.contains(&e) {
                open.remove(k);
                best = best.max(go(flows, rest, open, done + o.events + 1));
                open.insert(k, o);
            } else {
                open[k] = Open { node: e, events: o.events + 1, ..o.clone() };
                best = best.max(go(flows, rest, open, done));
                open[k] = o;
            }
        }
        best
    }
    go(flows, &trace.events, &mut Vec::new(), 0)
}

/// A random catalog of 1..=`max` messages over a small pool of IP blocks.
pub fn random_catalog<R: Rng>(rng: &mut R, max: usize) -> Catalog {
    let n = rng.random_range(1..=max);
    let ips = rng.random_range(2..=8);
    let ip = |r: &mut R| format!("IP{}", r.random_range(0..ips));
    let messages: Vec<Message> = (1..=n as MsgId)
        .map(|id| Message::new(id, ip(rng), ip(rng), format!("c{id}")))
        .collect();
    let pick = |r: &mut R| -> BTreeSet<MsgId> {
        (1..=n as MsgId).filter(|_| r.random_bool(0.2)).collect()
    };
    let (starts, ends) = (pick(rng), pick(rng));
    Catalog::new(messages, starts, ends).expect("distinct ids and commands")
}

/// Edge set by direct pairwise evaluation of the predicate definition.
pub fn brute_force_edges(catalog: &Catalog, predicate: Predicate) -> BTreeSet<(MsgId, MsgId)> {
    let mut edges = BTreeSet::new();
    for a in catalog.messages() {
        for b in catalog.messages() {
            let hit = match predicate {
                Predicate::PaperSrcDest => a.src == b.dest,
                Predicate::ForwardDestSrc => a.dest == b.src,
                Predicate::Union => a.src == b.dest || a.dest == b.src,
            };
            if a.id != b.id && hit {
                edges.insert((a.id, b.id));
            }
        }
    }
    edges
}

/// Nodes and edges of the `start -> end` subgraph via a transitive closure:
/// `v` is kept when a nonempty path leads from `start` to `v` (or `v` is
/// `start`) and from `v` to `end` (or `v` is `end`). `None` when no nonempty
/// `start -> end` path exists.
pub fn closure_subgraph(
    g: &CausalityGraph,
    start: MsgId,
    end: MsgId,
) -> Option<(BTreeSet<MsgId>, BTreeSet<(MsgId, MsgId)>)> {
    let ids: Vec<MsgId> = g.nodes.iter().copied().collect();
    let ix = |m: MsgId| ids.iter().position(|&x| x == m);
    let (s, e) = (ix(start)?, ix(end)?);
    let n = ids.len();
    let mut r = vec![vec![false; n]; n];
    for &(a, b) in &g.edges {
        r[ix(a).unwrap()][ix(b).unwrap()] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    if !r[s][e] {
        return None;
    }
    let keep: BTreeSet<MsgId> = (0..n)
        .filter(|&v| (v == s || r[s][v]) && (v == e || r[v][e]))
        .map(|v| ids[v])
        .collect();
    let edges = g
        .edges
        .iter()
        .copied()
        .filter(|(a, b)| keep.contains(a) && keep.contains(b))
        .collect();
    Some((keep, edges))
}
