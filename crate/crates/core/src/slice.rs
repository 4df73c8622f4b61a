//! In-place causality slicing of traces.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::causality::Predicate;
use crate::error::Error;
use crate::types::{Catalog, MsgId, Trace};

pub const DEFAULT_SLICE_WINDOW: usize = 16;
pub const DEFAULT_CHAIN_WINDOW: usize = 48;

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Keep the earliest occurrence as representative.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Groups events into slices: two occurrences at most `window` positions apart are
/// linked when the predicate holds in either direction, and slices are the connected
/// components of that relation. Slices are ordered by their first event; relative
/// order inside a slice is preserved. Ids missing from the catalog link to nothing.
pub fn causality_slice(
    trace: &Trace,
    catalog: &Catalog,
    predicate: Predicate,
    window: usize,
) -> Vec<Trace> {
    let window = window.max(2);
    let n = trace.len();
    let msgs: Vec<_> = trace.events.iter().map(|&id| catalog.get(id)).collect();
    let mut ds = DisjointSet::new(n);
    for j in 0..n {
        let Some(b) = msgs[j] else { continue };
        for i in j.saturating_sub(window)..j {
            if let Some(a) = msgs[i] {
                if predicate.holds(a, b) || predicate.holds(b, a) {
                    ds.union(i, j);
                }
            }
        }
    }
    let mut slot_of_root = vec![usize::MAX; n];
    let mut slices: Vec<Trace> = Vec::new();
    for (j, &id) in trace.events.iter().enumerate() {
        let r = ds.find(j);
        if slot_of_root[r] == usize::MAX {
            slot_of_root[r] = slices.len();
            slices.push(Trace::default());
        }
        slices[slot_of_root[r]].events.push(id);
    }
    slices
}

/// Splits a trace into per-instance chains by attaching each event to an earlier,
/// still childless event at most `window` positions back that causally precedes
/// it. Start messages always open a new chain, as does any event without a
/// candidate parent. The first pass picks the most recent candidate. Each later
/// pass re-estimates, from the previous attribution, how likely an `a` event's
/// child is a `b`, and attaches every event to the candidate that maximizes it
/// (ties go to the most recent). Chains are ordered by their first event.
pub fn causality_chains(trace: &Trace, catalog: &Catalog, predicate: Predicate, window: usize) -> Vec<Trace> {
    let msgs: Vec<_> = trace.events.iter().map(|&id| catalog.get(id)).collect();
    let mut parents = attribute(trace, catalog, predicate, window, &msgs, None);
    for _ in 0..CHAIN_PASSES {
        let freq = child_probability(trace, &parents);
        parents = attribute(trace, catalog, predicate, window, &msgs, Some(&freq));
    }
    let mut chain_of = vec![usize::MAX; trace.len()];
    let mut chains: Vec<Trace> = Vec::new();
    for (j, &id) in trace.events.iter().enumerate() {
        chain_of[j] = match parents[j] {
            Some(i) => chain_of[i],
            None => {
                chains.push(Trace::default());
                chains.len() - 1
            }
        };
        chains[chain_of[j]].events.push(id);
    }
    chains
}

const CHAIN_PASSES: usize = 2;

type Freq = HashMap<(MsgId, MsgId), f64>;

/// Probability that the child of an `a` event is `b`, estimated from an
/// attribution over all occurrences of `a` (events without a child count as
/// stopping).
fn child_probability(trace: &Trace, parents: &[Option<usize>]) -> Freq {
    let mut pair: HashMap<(MsgId, MsgId), f64> = HashMap::new();
    let mut seen: HashMap<MsgId, f64> = HashMap::new();
    for (j, p) in parents.iter().enumerate() {
        *seen.entry(trace.events[j]).or_default() += 1.0;
        if let Some(i) = *p {
            *pair.entry((trace.events[i], trace.events[j])).or_default() += 1.0;
        }
    }
    for ((a, _), v) in pair.iter_mut() {
        *v /= seen[a];
    }
    pair
}

fn attribute(
    trace: &Trace,
    catalog: &Catalog,
    predicate: Predicate,
    window: usize,
    msgs: &[Option<&crate::types::Message>],
    freq: Option<&Freq>,
) -> Vec<Option<usize>> {
    let n = trace.len();
    let mut has_child = vec![false; n];
    let mut parents = vec![None; n];
    for j in 0..n {
        let id = trace.events[j];
        let Some(b) = msgs[j] else { continue };
        if catalog.start_ids.contains(&id) {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for i in (j.saturating_sub(window.max(1))..j).rev() {
            if has_child[i] || !msgs[i].is_some_and(|a| predicate.holds(a, b)) {
                continue;
            }
            let w = freq.map_or(1.0, |f| f.get(&(trace.events[i], id)).copied().unwrap_or(0.0));
            if best.is_none_or(|(bw, _)| w > bw) {
                best = Some((w, i));
            }
            if freq.is_none() {
                break;
            }
        }
        if let Some((_, i)) = best {
            has_child[i] = true;
            parents[j] = Some(i);
        }
    }
    parents
}

/// How traces are cut into training and query sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SliceMode {
    /// Connected components of the causality relation ([`causality_slice`]).
    Components,
    /// Per-instance chains ([`causality_chains`]).
    #[default]
    Chains,
}

impl fmt::Display for SliceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SliceMode::Components => "components",
            SliceMode::Chains => "chains",
        })
    }
}

impl FromStr for SliceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "components" => Ok(SliceMode::Components),
            "chains" => Ok(SliceMode::Chains),
            other => Err(Error::Config(format!("unknown slicing mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slicing {
    pub predicate: Predicate,
    pub mode: SliceMode,
    pub window: usize,
}

impl Default for Slicing {
    fn default() -> Self {
        Slicing::new(Predicate::default(), SliceMode::default())
    }
}

impl Slicing {
    /// Uses the default window of the chosen mode.
    pub fn new(predicate: Predicate, mode: SliceMode) -> Self {
        let window = match mode {
            SliceMode::Components => DEFAULT_SLICE_WINDOW,
            SliceMode::Chains => DEFAULT_CHAIN_WINDOW,
        };
        Slicing { predicate, mode, window }
    }

    pub fn apply(&self, traces: &[Trace], catalog: &Catalog) -> Vec<Trace> {
        traces
            .iter()
            .flat_map(|t| match self.mode {
                SliceMode::Components => causality_slice(t, catalog, self.predicate, self.window),
                SliceMode::Chains => causality_chains(t, catalog, self.predicate, self.window),
            })
            .collect()
    }
}
