//! Reference catalogs, flows and traces: the textbook cache-read example, the
//! non-deterministic evaluation example, the CPU/UART case study, and
//! generated benchmark suites.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::synthgen::{generate, GenConfig};
use crate::types::{Catalog, FlowSpec, Message, MsgId, Trace};

/// A catalog together with the flows it was built for.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub catalog: Catalog,
    pub flows: Vec<FlowSpec>,
}

fn fixture(messages: Vec<Message>, flows: Vec<FlowSpec>) -> Fixture {
    let starts = flows.iter().map(|f| f.start).collect();
    let ends = flows.iter().flat_map(|f| f.ends.iter().copied()).collect();
    let catalog = Catalog::new(messages, starts, ends).expect("fixture catalog is valid");
    Fixture { catalog, flows }
}

/// Two CPU read flows through a shared cache, one path each, that produce the
/// interleaving `(1,3,5,1,5,6,2,3,6,2,4,4)` when each path runs once.
pub fn cache_read() -> Fixture {
    let m = |id, s, d, c| Message::new(id, s, d, c);
    fixture(
        vec![
            m(1, "CPU_0", "Cache", "rd_req"),
            m(2, "Cache", "CPU_0", "rd_resp"),
            m(3, "Cache", "Mem", "rd_req"),
            m(4, "CPU_0", "Cache", "ack"),
            m(5, "Cache", "Cache", "tag_chk"),
            m(6, "Cache", "Cache", "fill"),
        ],
        vec![
            FlowSpec::new("read_miss", 1, [4], [(1, 3), (3, 5), (5, 6), (6, 2), (2, 4)]).unwrap(),
            FlowSpec::new("read_prefetched", 1, [4], [(1, 5), (5, 3), (3, 6), (6, 2), (2, 4)]).unwrap(),
        ],
    )
}

pub fn cache_read_trace() -> Trace {
    Trace::new(vec![1, 3, 5, 1, 5, 6, 2, 3, 6, 2, 4, 4])
}

/// Single flow whose paths share a prefix, so the owner of a message is ambiguous
/// until later events arrive.
pub fn nondeterministic() -> Vec<FlowSpec> {
    vec![FlowSpec::new("nondet", 1, [4], [(1, 5), (5, 4), (1, 2), (2, 3), (3, 4), (2, 5)]).unwrap()]
}

pub fn nondeterministic_trace() -> Trace {
    Trace::new(vec![1, 1, 5, 1, 2, 5, 4, 4, 3, 4])
}

/// CPU0_Read (2 -> 26) and UART_Upstream_Read (20 -> 30): three paths each,
/// fourteen messages, four of them (9, 12, 19, 26) shared.
pub fn case_study() -> Fixture {
    let m = |id, s, d, c| Message::new(id, s, d, c);
    fixture(
        vec![
            m(2, "CPU0", "L2", "rd_req"),
            m(5, "L2", "Bus", "rd_miss"),
            m(7, "Bus", "CPU1", "snoop_req"),
            m(8, "CPU1", "Bus", "snoop_data"),
            m(9, "Bus", "Mem", "mem_rd"),
            m(12, "Mem", "Bus", "mem_data"),
            m(19, "Bus", "L2", "fill"),
            m(20, "UART", "IO", "up_rd_req"),
            m(21, "IO", "Bus", "up_rd"),
            m(22, "Bus", "L2", "up_lookup"),
            m(26, "L2", "CPU0", "rd_resp"),
            m(27, "L2", "IO", "up_data"),
            m(29, "CPU0", "IO", "fwd_data"),
            m(30, "IO", "UART", "up_rd_resp"),
        ],
        vec![
            FlowSpec::new(
                "CPU0_Read",
                2,
                [26],
                [(2, 26), (2, 5), (5, 9), (9, 12), (12, 19), (5, 7), (7, 8), (8, 19), (19, 26)],
            )
            .unwrap(),
            FlowSpec::new(
                "UART_Upstream_Read",
                20,
                [30],
                [
                    (20, 30),
                    (20, 21),
                    (21, 22),
                    (22, 27),
                    (27, 30),
                    (21, 9),
                    (9, 12),
                    (12, 19),
                    (19, 26),
                    (26, 29),
                    (29, 30),
                ],
            )
            .unwrap(),
        ],
    )
}

/// The case-study corpus: one trace of `runs` interleaved instances.
pub fn case_study_trace(runs: usize, cores: usize, seed: u64) -> Result<Trace> {
    generate(&GenConfig::new(case_study().flows, cores, runs, seed))
}

/// Size class of a generated benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub name: String,
    pub messages: usize,
    pub flows: usize,
    pub cores: usize,
    /// Approximate trace length the run count is chosen for.
    pub target_len: usize,
    pub seed: u64,
}

impl BenchmarkSpec {
    pub fn new(name: &str, messages: usize, flows: usize, cores: usize, target_len: usize, seed: u64) -> Self {
        BenchmarkSpec {
            name: name.to_string(),
            messages,
            flows,
            cores,
            target_len,
            seed,
        }
    }

    /// small = 22 messages, large = 60; the suffix is the core count.
    pub fn standard(seed: u64) -> Vec<BenchmarkSpec> {
        vec![
            BenchmarkSpec::new("small-10", 22, 5, 10, 920, seed),
            BenchmarkSpec::new("small-20", 22, 5, 20, 1840, seed + 1),
            BenchmarkSpec::new("large-10", 60, 12, 10, 4360, seed + 2),
            BenchmarkSpec::new("large-20", 60, 12, 20, 8720, seed + 3),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub fixture: Fixture,
    pub trace: Trace,
}

struct Classes {
    parent: Vec<usize>,
}

impl Classes {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Random flows over disjoint message ranges. Each flow runs from its start to its
/// end through a series of segments: single messages and two-armed diamonds (one
/// or two messages per arm) that rejoin at the next message. Every flow has at
/// least one diamond. Endpoints are assigned so that every flow edge `a -> b`
/// satisfies `a.dest == b.src`; each flow talks over its own set of IP blocks.
pub fn random_flows(messages: usize, flows: usize, seed: u64) -> Fixture {
    assert!(flows >= 1 && messages >= 4 * flows, "need at least four messages per flow");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(flows);
    let mut next_id: MsgId = 1;
    for f in 0..flows {
        let size = messages / flows + usize::from(f < messages % flows);
        let ids: Vec<MsgId> = (next_id..next_id + size as MsgId).collect();
        next_id += size as MsgId;
        let (start, end) = (ids[0], ids[size - 1]);
        let mut inner = ids[1..size - 1].iter().copied().peekable();
        let mut left = size - 2;
        let mut edges = BTreeSet::new();
        let mut tails = vec![start];
        let mut diamonds = 0;
        while left > 0 {
            // A diamond needs two messages and must be followed by a single one
            // (or the end) so that its arms rejoin.
            let want_diamond = tails.len() == 1 && left >= 2 && (diamonds == 0 || rng.random_bool(0.5));
            if want_diamond && (diamonds > 0 || left <= 3 || rng.random_bool(0.5)) {
                let mut new_tails = Vec::new();
                for arm in 0..2 {
                    let long = left >= 3 + usize::from(arm == 0) && rng.random_bool(0.3);
                    let first = inner.next().expect("counted");
                    edges.insert((tails[0], first));
                    left -= 1;
                    let mut last = first;
                    if long {
                        let second = inner.next().expect("counted");
                        edges.insert((first, second));
                        left -= 1;
                        last = second;
                    }
                    new_tails.push(last);
                }
                tails = new_tails;
                diamonds += 1;
            } else {
                let x = inner.next().expect("counted");
                for &t in &tails {
                    edges.insert((t, x));
                }
                tails = vec![x];
                left -= 1;
            }
        }
        if diamonds == 0 {
            // Only one inner message left for a flow of three: make the start
            // branch straight to the end as the second arm.
            edges.insert((start, end));
        }
        for &t in &tails {
            edges.insert((t, end));
        }
        specs.push(FlowSpec::new(format!("flow{f}"), start, [end], edges).expect("series-parallel flow"));
    }

    // Endpoint slots: 2*i is the source of message i, 2*i+1 its destination.
    let n = messages;
    let mut classes = Classes {
        parent: (0..2 * n).collect(),
    };
    for spec in &specs {
        for &(a, b) in &spec.edges {
            let (x, y) = (classes.find(2 * (a as usize - 1) + 1), classes.find(2 * (b as usize - 1)));
            classes.parent[x] = y;
        }
    }
    let mut names: BTreeMap<usize, String> = BTreeMap::new();
    let mut msgs = Vec::with_capacity(n);
    for (f, spec) in specs.iter().enumerate() {
        for id in spec.nodes() {
            let i = id as usize - 1;
            let mut name = |slot: usize| {
                let root = classes.find(slot);
                let k = names.len();
                names.entry(root).or_insert_with(|| format!("F{f}_IP{k}")).clone()
            };
            let (src, dest) = (name(2 * i), name(2 * i + 1));
            msgs.push(Message::new(id, src, dest, format!("op{id}")));
        }
    }
    fixture(msgs, specs)
}

/// Mean number of events per instance under uniform branching.
fn mean_path_len(flow: &FlowSpec) -> f64 {
    let succ = flow.successors();
    let mut memo: BTreeMap<MsgId, f64> = BTreeMap::new();
    fn go(v: MsgId, f: &FlowSpec, succ: &BTreeMap<MsgId, Vec<MsgId>>, memo: &mut BTreeMap<MsgId, f64>) -> f64 {
        if let Some(&x) = memo.get(&v) {
            return x;
        }
        let x = if f.is_end(v) {
            1.0
        } else {
            let s = &succ[&v];
            1.0 + s.iter().map(|&w| go(w, f, succ, memo)).sum::<f64>() / s.len() as f64
        };
        memo.insert(v, x);
        x
    }
    go(flow.start, flow, &succ, &mut memo)
}

pub fn benchmark(spec: &BenchmarkSpec) -> Result<Benchmark> {
    let fixture = random_flows(spec.messages, spec.flows, spec.seed);
    let mean = fixture.flows.iter().map(mean_path_len).sum::<f64>() / fixture.flows.len() as f64;
    let runs = ((spec.target_len as f64 / mean).round() as usize).max(1);
    let trace = generate(&GenConfig::new(fixture.flows.clone(), spec.cores, runs, spec.seed))?;
    Ok(Benchmark {
        spec: spec.clone(),
        fixture,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causality::{build_graph, Predicate};

    #[test]
    fn case_study_shape() {
        let fx = case_study();
        assert_eq!(fx.catalog.len(), 14);
        let a = fx.flows[0].nodes();
        let b = fx.flows[1].nodes();
        assert_eq!(a.intersection(&b).copied().collect::<Vec<_>>(), vec![9, 12, 19, 26]);
        assert!(fx.flows.iter().all(|f| f.paths().len() == 3));
        let g = build_graph(&fx.catalog, Predicate::Union);
        assert!(g.edges.contains(&(19, 27)));
    }

    #[test]
    fn random_flows_respect_forwarding() {
        let fx = random_flows(22, 5, 3);
        assert_eq!(fx.catalog.len(), 22);
        for f in &fx.flows {
            for &(a, b) in &f.edges {
                let (a, b) = (fx.catalog.get(a).unwrap(), fx.catalog.get(b).unwrap());
                assert_eq!(a.dest, b.src);
            }
        }
    }

    #[test]
    fn benchmark_hits_target_length() {
        let b = benchmark(&BenchmarkSpec::new("t", 22, 5, 10, 920, 1)).unwrap();
        let len = b.trace.len() as f64;
        assert!((len - 920.0).abs() / 920.0 < 0.2, "length {len}");
    }
}
