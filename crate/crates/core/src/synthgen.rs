//! Synthetic trace generation: flow instances executed concurrently on simulated cores.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evaluator::{evaluate_oracle_bounded, FlowAcceptor};
use crate::types::{FlowSpec, MsgId, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PathPolicy {
    #[default]
    UniformBranch,
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub flows: Vec<FlowSpec>,
    pub cores: usize,
    pub runs: usize,
    pub seed: u64,
    pub path_policy: PathPolicy,
}

impl GenConfig {
    pub fn new(flows: Vec<FlowSpec>, cores: usize, runs: usize, seed: u64) -> Self {
        GenConfig {
            flows,
            cores,
            runs,
            seed,
            path_policy: PathPolicy::UniformBranch,
        }
    }

    fn check(&self) -> Result<()> {
        if self.cores == 0 || self.runs == 0 {
            return Err(Error::Config("cores and runs must be at least 1".into()));
        }
        if self.flows.is_empty() {
            return Err(Error::Config("no flows to generate from".into()));
        }
        self.flows.iter().try_for_each(FlowSpec::validate)
    }
}

/// A generated trace with the ground-truth instance of every event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub trace: Trace,
    /// `instance_of[i]` is the instance that emitted event `i`.
    pub instance_of: Vec<usize>,
    /// Flow index of each instance, in spawn order.
    pub instance_flow: Vec<usize>,
}

struct Running {
    id: usize,
    path: Vec<MsgId>,
    next: usize,
}

fn walk(flow: &FlowSpec, rng: &mut ChaCha8Rng) -> Vec<MsgId> {
    let succ = flow.successors();
    let mut path = vec![flow.start];
    let mut cur = flow.start;
    while !flow.is_end(cur) {
        let options = &succ[&cur];
        cur = options[rng.random_range(0..options.len())];
        path.push(cur);
    }
    path
}

/// Interleaves `runs` complete flow instances. Each step either spawns an instance
/// on an idle core (probability 0.5 while runs remain, forced when nothing is
/// running) or emits the next event of an instance on a uniformly chosen busy core.
pub fn generate_detailed(config: &GenConfig) -> Result<Generated> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cores: Vec<Option<Running>> = (0..config.cores).map(|_| None).collect();
    let mut spawned = 0;
    let mut out = Generated {
        trace: Trace::default(),
        instance_of: Vec::new(),
        instance_flow: Vec::new(),
    };
    loop {
        let busy: Vec<usize> = (0..cores.len()).filter(|&c| cores[c].is_some()).collect();
        let idle = cores.len() - busy.len();
        if busy.is_empty() && spawned == config.runs {
            break;
        }
        let spawn = spawned < config.runs && idle > 0 && (busy.is_empty() || rng.random_bool(0.5));
        let core = if spawn {
            let core = cores.iter().position(Option::is_none).unwrap();
            let flow = rng.random_range(0..config.flows.len());
            cores[core] = Some(Running {
                id: spawned,
                path: walk(&config.flows[flow], &mut rng),
                next: 0,
            });
            out.instance_flow.push(flow);
            spawned += 1;
            core
        } else {
            busy[rng.random_range(0..busy.len())]
        };
        let run = cores[core].as_mut().unwrap();
        out.trace.events.push(run.path[run.next]);
        out.instance_of.push(run.id);
        run.next += 1;
        if run.next == run.path.len() {
            cores[core] = None;
        }
    }
    Ok(out)
}

pub fn generate(config: &GenConfig) -> Result<Trace> {
    generate_detailed(config).map(|g| g.trace)
}

const NEGATIVE_ATTEMPTS: usize = 64;
const NEGATIVE_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Corruption {
    Delete,
    Transpose,
    Insert,
}

/// A trace derived from a valid interleaving by deleting events, swapping an event
/// ahead of its in-instance predecessor, or inserting a flow message where no
/// instance can take it. The result is checked against the exhaustive evaluator and
/// only returned once it provably falls short of full acceptance.
pub fn generate_negative(config: &GenConfig, corruption_rate: f64) -> Result<Trace> {
    if !(corruption_rate > 0.0 && corruption_rate <= 1.0) {
        return Err(Error::Config(format!(
            "corruption rate {corruption_rate} outside (0, 1]"
        )));
    }
    let base = generate_detailed(config)?;
    if config.flows.iter().all(|f| f.edges.is_empty()) {
        return Err(Error::InfeasibleCorruption);
    }
    let acceptor = FlowAcceptor::new(&config.flows);
    let alphabet: Vec<MsgId> = {
        let mut v: Vec<MsgId> = config.flows.iter().flat_map(|f| f.nodes()).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0bad_c0de_f00d);
    let n_corrupt = ((corruption_rate * config.runs as f64).ceil() as usize).max(1);
    for _ in 0..NEGATIVE_ATTEMPTS {
        let mut events = base.trace.events.clone();
        let mut owner = base.instance_of.clone();
        for _ in 0..n_corrupt {
            let kinds = [Corruption::Delete, Corruption::Transpose, Corruption::Insert];
            match *kinds.choose(&mut rng).unwrap() {
                Corruption::Delete if !events.is_empty() => {
                    let i = rng.random_range(0..events.len());
                    events.remove(i);
                    owner.remove(i);
                }
                Corruption::Transpose => {
                    // Swap an event with its predecessor in the same instance.
                    let pairs: Vec<(usize, usize)> = (1..events.len())
                        .filter_map(|j| {
                            (0..j).rev().find(|&i| owner[i] == owner[j]).map(|i| (i, j))
                        })
                        .filter(|&(i, j)| events[i] != events[j])
                        .collect();
                    if let Some(&(i, j)) = pairs.choose(&mut rng) {
                        events.swap(i, j);
                    }
                }
                _ => {
                    let pos = rng.random_range(0..=events.len());
                    let id = *alphabet.choose(&mut rng).unwrap();
                    events.insert(pos, id);
                    owner.insert(pos, usize::MAX);
                }
            }
        }
        let candidate = Trace::new(events);
        let report = evaluate_oracle_bounded(&acceptor, &candidate, NEGATIVE_BUDGET);
        if !report.lower_bound && report.acceptance_rate < 1.0 {
            return Ok(candidate);
        }
    }
    Err(Error::InfeasibleCorruption)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{evaluate_oracle, DEFAULT_BUDGET};

    fn abc() -> FlowSpec {
        FlowSpec::new("abc", 1, [3], [(1, 2), (2, 3)]).unwrap()
    }

    #[test]
    fn single_core_serializes() {
        let t = generate(&GenConfig::new(vec![abc()], 1, 2, 7)).unwrap();
        assert_eq!(t.events, vec![1, 2, 3, 1, 2, 3]);
    }

    #[test]
    fn same_seed_same_trace() {
        let flows = vec![abc(), FlowSpec::new("de", 4, [5], [(4, 5)]).unwrap()];
        let a = generate(&GenConfig::new(flows.clone(), 3, 40, 11)).unwrap();
        let b = generate(&GenConfig::new(flows, 3, 40, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn positive_trace_fully_accepted() {
        let flows = vec![
            FlowSpec::new("d", 1, [4], [(1, 2), (1, 3), (2, 4), (3, 4)]).unwrap(),
            FlowSpec::new("e", 5, [6], [(5, 2), (2, 6)]).unwrap(),
        ];
        let t = generate(&GenConfig::new(flows.clone(), 3, 12, 3)).unwrap();
        assert_eq!(evaluate_oracle(&flows, &t, DEFAULT_BUDGET).unwrap().acceptance_rate, 1.0);
    }

    #[test]
    fn negative_trace_rejected() {
        let t = generate_negative(&GenConfig::new(vec![abc()], 2, 5, 9), 0.2).unwrap();
        assert!(evaluate_oracle(&[abc()], &t, DEFAULT_BUDGET).unwrap().acceptance_rate < 1.0);
    }

    #[test]
    fn single_message_flows_cannot_be_corrupted() {
        let f = FlowSpec::new("one", 1, [1], []).unwrap();
        assert!(matches!(
            generate_negative(&GenConfig::new(vec![f], 2, 5, 1), 0.5),
            Err(Error::InfeasibleCorruption)
        ));
    }
}
