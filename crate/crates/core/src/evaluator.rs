//! Trace replay against flow acceptors.
//!
//! Each flow becomes a token-game acceptor: an instance sits on one node of the
//! flow DAG, is created by the start message, advances along an edge when the
//! observed event matches the edge target, and finishes on reaching an end node.
//! Events held by instances that never finish count as rejected.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::{FlowSpec, MsgId, Trace};

pub const DEFAULT_BUDGET: u64 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    GreedyOldest,
    Exhaustive,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::GreedyOldest => "greedy-oldest",
            Policy::Exhaustive => "exhaustive",
        })
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" | "greedy-oldest" => Ok(Policy::GreedyOldest),
            "oracle" | "exhaustive" => Ok(Policy::Exhaustive),
            other => Err(Error::Config(format!("unknown policy `{other}`"))),
        }
    }
}

/// An event that more than one live instance could have consumed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NondetNote {
    pub event_index: usize,
    pub candidates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub total_events: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub incomplete_instances: usize,
    pub acceptance_rate: f64,
    pub policy: Policy,
    /// True when the exhaustive search ran out of budget and the rate is a lower bound.
    pub lower_bound: bool,
    pub notes: Vec<NondetNote>,
    /// Events (by trace index) of every finished instance, in spawn order.
    pub instances: Vec<Vec<usize>>,
}

impl EvalReport {
    fn new(total: usize, accepted: usize, incomplete: usize, policy: Policy) -> Self {
        EvalReport {
            total_events: total,
            accepted,
            rejected: total - accepted,
            incomplete_instances: incomplete,
            acceptance_rate: rate(accepted, total),
            policy,
            lower_bound: false,
            notes: Vec::new(),
            instances: Vec::new(),
        }
    }

    /// Message ids of each finished instance.
    pub fn decomposition(&self, trace: &Trace) -> Vec<Vec<MsgId>> {
        self.instances
            .iter()
            .map(|inst| inst.iter().map(|&i| trace.events[i]).collect())
            .collect()
    }

    /// Sums counts over several traces.
    pub fn merge(reports: &[EvalReport]) -> Option<EvalReport> {
        let first = reports.first()?;
        let total = reports.iter().map(|r| r.total_events).sum();
        let accepted = reports.iter().map(|r| r.accepted).sum();
        let incomplete = reports.iter().map(|r| r.incomplete_instances).sum();
        let mut merged = EvalReport::new(total, accepted, incomplete, first.policy);
        merged.lower_bound = reports.iter().any(|r| r.lower_bound);
        Some(merged)
    }
}

fn rate(accepted: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        accepted as f64 / total as f64
    }
}

/// Acceptors for a flow set, indexed for event lookup.
#[derive(Debug, Clone)]
pub struct FlowAcceptor {
    flows: Vec<FlowSpec>,
    edges: Vec<BTreeSet<(MsgId, MsgId)>>,
    /// Flows started by each message, in declaration order.
    starts: HashMap<MsgId, Vec<usize>>,
    /// Minimum number of further events needed to finish from a node.
    dist_to_end: Vec<HashMap<MsgId, usize>>,
}

impl FlowAcceptor {
    pub fn new(flows: &[FlowSpec]) -> Self {
        let mut starts: HashMap<MsgId, Vec<usize>> = HashMap::new();
        for (i, f) in flows.iter().enumerate() {
            starts.entry(f.start).or_default().push(i);
        }
        let dist_to_end = flows.iter().map(min_dist_to_end).collect();
        FlowAcceptor {
            edges: flows.iter().map(|f| f.edges.clone()).collect(),
            flows: flows.to_vec(),
            starts,
            dist_to_end,
        }
    }

    pub fn flows(&self) -> &[FlowSpec] {
        &self.flows
    }

    fn can_advance(&self, flow: usize, node: MsgId, event: MsgId) -> bool {
        self.edges[flow].contains(&(node, event))
    }

    fn is_end(&self, flow: usize, node: MsgId) -> bool {
        self.flows[flow].is_end(node)
    }

    fn spawned_by(&self, event: MsgId) -> &[usize] {
        self.starts.get(&event).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn min_dist_to_end(flow: &FlowSpec) -> HashMap<MsgId, usize> {
    let mut pred: BTreeMap<MsgId, Vec<MsgId>> = BTreeMap::new();
    for &(a, b) in &flow.edges {
        pred.entry(b).or_default().push(a);
    }
    let mut dist = HashMap::new();
    let mut queue = std::collections::VecDeque::new();
    for &e in &flow.ends {
        dist.insert(e, 0);
        queue.push_back(e);
    }
    while let Some(n) = queue.pop_front() {
        let d = dist[&n];
        for &p in pred.get(&n).into_iter().flatten() {
            if !dist.contains_key(&p) && !flow.is_end(p) {
                dist.insert(p, d + 1);
                queue.push_back(p);
            }
        }
    }
    dist
}

struct LiveInstance {
    flow: usize,
    node: MsgId,
    events: Vec<usize>,
    finished: bool,
}

/// Oldest-first greedy replay. Start messages always spawn a fresh instance;
/// other events go to the first flow (declaration order) with a live instance
/// able to advance, and within it to the oldest such instance.
pub fn evaluate_greedy(flows: &[FlowSpec], trace: &Trace) -> EvalReport {
    evaluate_greedy_with(&FlowAcceptor::new(flows), trace)
}

pub fn evaluate_greedy_with(acc: &FlowAcceptor, trace: &Trace) -> EvalReport {
    let mut instances: Vec<LiveInstance> = Vec::new();
    let mut accepted = vec![false; trace.len()];
    let mut notes = Vec::new();
    for (i, &e) in trace.events.iter().enumerate() {
        if let Some(&flow) = acc.spawned_by(e).first() {
            let finished = acc.is_end(flow, e);
            instances.push(LiveInstance {
                flow,
                node: e,
                events: vec![i],
                finished,
            });
            accepted[i] = true;
            continue;
        }
        let mut candidates: Vec<usize> = instances
            .iter()
            .enumerate()
            .filter(|(_, inst)| !inst.finished && acc.can_advance(inst.flow, inst.node, e))
            .map(|(k, _)| k)
            .collect();
        if candidates.len() > 1 {
            notes.push(NondetNote {
                event_index: i,
                candidates: candidates.clone(),
            });
        }
        // Stable sort keeps spawn order (age) within a flow.
        candidates.sort_by_key(|&k| instances[k].flow);
        if let Some(&k) = candidates.first() {
            let inst = &mut instances[k];
            inst.node = e;
            inst.events.push(i);
            inst.finished = acc.is_end(inst.flow, e);
            accepted[i] = true;
        }
    }
    let mut incomplete = 0;
    let mut finished = Vec::new();
    for inst in instances {
        if inst.finished {
            finished.push(inst.events);
        } else {
            incomplete += 1;
            for &i in &inst.events {
                accepted[i] = false;
            }
        }
    }
    let n_acc = accepted.iter().filter(|&&a| a).count();
    let mut report = EvalReport::new(trace.len(), n_acc, incomplete, Policy::GreedyOldest);
    report.notes = notes;
    report.instances = finished;
    report
}

/// 128-bit fingerprint of (position, sorted live instances). Storing full states
/// costs hundreds of bytes per entry on long traces; a collision among the few
/// million entries a budget allows is far less likely than a hardware fault.
type StateKey = u128;

#[derive(Clone, Copy)]
struct Inst {
    flow: usize,
    node: MsgId,
    id: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Choice {
    Spawn(usize),
    Advance(usize, MsgId),
    Reject,
}

#[derive(Clone, Copy)]
struct Entry {
    value: i64,
    exact: bool,
    choice: Choice,
}

struct Search<'a> {
    acc: &'a FlowAcceptor,
    events: &'a [MsgId],
    memo: HashMap<StateKey, Entry>,
    nodes: u64,
    budget: u64,
    exhausted: bool,
    best: usize,
    /// Only assignments accepting more than this many events are of interest.
    floor: usize,
    best_assign: Vec<Option<usize>>,
    assign: Vec<Option<usize>>,
    next_id: usize,
}

const INFEASIBLE: i64 = i64::MIN / 4;

impl Search<'_> {
    fn key(pos: usize, active: &[Inst]) -> StateKey {
        let mut v: Vec<(usize, MsgId)> = active.iter().map(|i| (i.flow, i.node)).collect();
        v.sort_unstable();
        let half = |salt: u64| {
            let mut h = DefaultHasher::new();
            (salt, pos, &v).hash(&mut h);
            h.finish()
        };
        (u128::from(half(0)) << 64) | u128::from(half(1))
    }

    fn needed(&self, active: &[Inst]) -> usize {
        active
            .iter()
            .map(|i| {
                self.acc.dist_to_end[i.flow]
                    .get(&i.node)
                    .copied()
                    .unwrap_or(self.events.len() + 1)
            })
            .sum()
    }

    /// Applies `choice` for the event at `pos`. Returns the undo information.
    fn apply(&mut self, pos: usize, active: &mut Vec<Inst>, choice: Choice) -> Undo {
        let e = self.events[pos];
        match choice {
            Choice::Reject => Undo::None,
            Choice::Spawn(flow) => {
                let id = self.next_id;
                self.next_id += 1;
                self.assign[pos] = Some(id);
                if self.acc.is_end(flow, e) {
                    Undo::None
                } else {
                    active.push(Inst { flow, node: e, id });
                    Undo::Pop
                }
            }
            Choice::Advance(flow, node) => {
                let k = active
                    .iter()
                    .enumerate()
                    .filter(|(_, i)| i.flow == flow && i.node == node)
                    .min_by_key(|(_, i)| i.id)
                    .map(|(k, _)| k)
                    .expect("advanced instance exists");
                self.assign[pos] = Some(active[k].id);
                if self.acc.is_end(flow, e) {
                    Undo::Reinsert(k, active.remove(k))
                } else {
                    active[k].node = e;
                    Undo::Restore(k, node)
                }
            }
        }
    }

    fn undo(&mut self, pos: usize, active: &mut Vec<Inst>, undo: Undo) {
        self.assign[pos] = None;
        match undo {
            Undo::None => {}
            Undo::Pop => {
                active.pop();
            }
            Undo::Reinsert(k, inst) => active.insert(k, inst),
            Undo::Restore(k, node) => active[k].node = node,
        }
    }

    fn choices(&self, pos: usize, active: &[Inst]) -> Vec<Choice> {
        let e = self.events[pos];
        let mut out: Vec<Choice> = self.acc.spawned_by(e).iter().map(|&f| Choice::Spawn(f)).collect();
        let mut order: Vec<&Inst> = active.iter().collect();
        order.sort_by_key(|i| (i.flow, i.id));
        for inst in order {
            let c = Choice::Advance(inst.flow, inst.node);
            if self.acc.can_advance(inst.flow, inst.node, e) && !out.contains(&c) {
                out.push(c);
            }
        }
        out.push(Choice::Reject);
        out
    }

    /// Best number of events assignable from `pos` on such that every live
    /// instance finishes. Returns (value, exact); inexact values are upper bounds.
    fn dfs(&mut self, pos: usize, active: &mut Vec<Inst>, gained: usize) -> (i64, bool) {
        let remaining = self.events.len() - pos;
        if self.needed(active) > remaining {
            return (INFEASIBLE, true);
        }
        if pos == self.events.len() {
            if gained > self.best {
                self.best = gained;
                self.best_assign = self.assign.clone();
            }
            return (0, true);
        }
        let bar = self.best.max(self.floor);
        if gained + remaining <= bar {
            return (remaining as i64, false);
        }
        let key = Self::key(pos, active);
        if let Some(entry) = self.memo.get(&key).copied() {
            if entry.exact {
                if entry.value > INFEASIBLE && gained as i64 + entry.value > self.best as i64 {
                    self.best = gained + entry.value as usize;
                    let mut assign = self.assign.clone();
                    self.replay(pos, active, &mut assign);
                    self.best_assign = assign;
                }
                return (entry.value, true);
            }
            if gained as i64 + entry.value <= bar as i64 {
                return (entry.value, false);
            }
        }
        if self.exhausted {
            return (remaining as i64, false);
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted = true;
            return (remaining as i64, false);
        }

        let mut best = Entry {
            value: INFEASIBLE,
            exact: true,
            choice: Choice::Reject,
        };
        for choice in self.choices(pos, active) {
            let add = usize::from(choice != Choice::Reject);
            let undo = self.apply(pos, active, choice);
            let (v, exact) = self.dfs(pos + 1, active, gained + add);
            self.undo(pos, active, undo);
            best.exact &= exact;
            if v > INFEASIBLE && v + add as i64 > best.value {
                best.value = v + add as i64;
                best.choice = choice;
            }
        }
        self.memo.insert(key, best);
        (best.value, best.exact)
    }

    /// Follows exact memo choices from `pos`, writing the resulting assignment.
    fn replay(&mut self, pos: usize, active: &[Inst], assign: &mut [Option<usize>]) {
        let mut active = active.to_vec();
        let saved = std::mem::take(&mut self.assign);
        self.assign = vec![None; self.events.len()];
        for p in pos..self.events.len() {
            let choice = self.memo[&Self::key(p, &active)].choice;
            // Undo records are not needed: the replayed state is thrown away.
            let _ = self.apply(p, &mut active, choice);
            assign[p] = self.assign[p];
        }
        self.assign = saved;
    }
}

enum Undo {
    None,
    Pop,
    Reinsert(usize, Inst),
    Restore(usize, MsgId),
}

/// Exhaustive search over instance assignments for the maximum acceptance rate.
///
/// Returns `BudgetExceeded` carrying the best rate found when the node budget runs
/// out; [`evaluate_oracle_bounded`] returns that lower-bound report instead.
pub fn evaluate_oracle(flows: &[FlowSpec], trace: &Trace, budget: u64) -> Result<EvalReport> {
    let report = evaluate_oracle_bounded(&FlowAcceptor::new(flows), trace, budget);
    if report.lower_bound {
        return Err(Error::BudgetExceeded {
            budget,
            best_rate: report.acceptance_rate,
        });
    }
    Ok(report)
}

pub fn evaluate_oracle_bounded(acc: &FlowAcceptor, trace: &Trace, budget: u64) -> EvalReport {
    let greedy = evaluate_greedy_with(acc, trace);
    let n = trace.len();
    let mut seed_assign = vec![None; n];
    for (id, inst) in greedy.instances.iter().enumerate() {
        for &i in inst {
            seed_assign[i] = Some(id);
        }
    }
    let mut search = Search {
        acc,
        events: &trace.events,
        memo: HashMap::new(),
        nodes: 0,
        budget,
        exhausted: false,
        best: greedy.accepted,
        floor: 0,
        best_assign: seed_assign,
        assign: vec![None; n],
        next_id: 0,
    };
    if greedy.accepted < n {
        // Search for a perfect assignment first, then admit geometrically more
        // rejections. A high floor prunes almost every branch that rejects, which
        // matters when the greedy seed is far from the optimum. Memo entries stay
        // valid across passes: inexact ones are upper bounds.
        run_with_stack(n, || {
            let mut slack = 1;
            loop {
                search.floor = n.saturating_sub(slack).max(greedy.accepted);
                search.dfs(0, &mut Vec::new(), 0);
                if search.exhausted || search.best > search.floor || search.floor == greedy.accepted {
                    break;
                }
                slack *= 2;
            }
        });
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, a) in search.best_assign.iter().enumerate() {
        if let Some(id) = a {
            groups.entry(*id).or_default().push(i);
        }
    }
    let mut instances: Vec<Vec<usize>> = groups.into_values().collect();
    instances.sort_by_key(|v| v[0]);
    let mut report = EvalReport::new(n, search.best, 0, Policy::Exhaustive);
    report.lower_bound = search.exhausted;
    report.instances = instances;
    report
}

/// Deep traces recurse once per event; give long searches a dedicated stack.
fn run_with_stack<F: FnOnce() + Send>(depth: usize, f: F) {
    if depth < 2_000 {
        f();
        return;
    }
    let stack = (depth + 64) * 4096;
    std::thread::scope(|s| {
        std::thread::Builder::new()
            .stack_size(stack)
            .spawn_scoped(s, f)
            .expect("spawn search thread")
            .join()
            .expect("search thread panicked");
    });
}

pub fn evaluate(flows: &[FlowSpec], trace: &Trace, policy: Policy, budget: u64) -> EvalReport {
    let acc = FlowAcceptor::new(flows);
    match policy {
        Policy::GreedyOldest => evaluate_greedy_with(&acc, trace),
        Policy::Exhaustive => evaluate_oracle_bounded(&acc, trace, budget),
    }
}

/// Model size: nodes plus edges summed over flows.
pub fn model_size(flows: &[FlowSpec]) -> usize {
    flows.iter().map(|f| f.nodes().len() + f.edges.len()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairComparison {
    pub start: MsgId,
    pub ends: BTreeSet<MsgId>,
    pub mined_edges: usize,
    pub truth_edges: usize,
    pub common_edges: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowComparison {
    pub pairs: Vec<PairComparison>,
    pub precision: f64,
    pub recall: f64,
    /// Mined (start, ends) pairs with no truth flow.
    pub unmatched: Vec<(MsgId, BTreeSet<MsgId>)>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Edge-level precision and recall. Flows are matched on (start, ends); totals are
/// pooled over matched pairs, with unmatched truth edges counted against recall.
pub fn compare_flows(mined: &[FlowSpec], truth: &[FlowSpec]) -> FlowComparison {
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    let (mut common, mut n_mined, mut n_truth) = (0, 0, 0);
    let mut used = vec![false; truth.len()];
    for m in mined {
        let hit = truth
            .iter()
            .position(|t| t.start == m.start && t.ends == m.ends);
        let Some(ti) = hit else {
            unmatched.push((m.start, m.ends.clone()));
            n_mined += m.edges.len();
            continue;
        };
        used[ti] = true;
        let t = &truth[ti];
        let c = m.edges.intersection(&t.edges).count();
        common += c;
        n_mined += m.edges.len();
        n_truth += t.edges.len();
        pairs.push(PairComparison {
            start: m.start,
            ends: m.ends.clone(),
            mined_edges: m.edges.len(),
            truth_edges: t.edges.len(),
            common_edges: c,
            precision: ratio(c, m.edges.len()),
            recall: ratio(c, t.edges.len()),
        });
    }
    for (t, used) in truth.iter().zip(used) {
        if !used {
            n_truth += t.edges.len();
        }
    }
    FlowComparison {
        pairs,
        precision: ratio(common, n_mined),
        recall: ratio(common, n_truth),
        unmatched,
    }
}
