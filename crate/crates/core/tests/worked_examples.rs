//! The small hand-checkable examples: the cache-read catalog and trace, the
//! ambiguous single flow, and the case study's graph structure.

use std::collections::BTreeSet;

use flowmine::causality::{build_graph, reachable_subgraph};
use flowmine::evaluator::{evaluate_greedy, evaluate_oracle, model_size, DEFAULT_BUDGET};
use flowmine::fixtures::{cache_read, cache_read_trace, case_study, nondeterministic, nondeterministic_trace};
use flowmine::format::{parse_catalog_str, parse_traces_str};
use flowmine::synthgen::{generate_detailed, GenConfig};
use flowmine::{MsgId, Predicate};

#[test]
fn request_and_response_are_causally_linked() {
    let fx = cache_read();
    let g = build_graph(&fx.catalog, Predicate::PaperSrcDest);
    // rd_req CPU_0 -> Cache, rd_resp Cache -> CPU_0.
    assert!(g.edges.contains(&(1, 2)));
}

#[test]
fn union_graph_contains_every_flow() {
    for fx in [cache_read(), case_study()] {
        let g = build_graph(&fx.catalog, Predicate::Union);
        for f in &fx.flows {
            assert!(f.edges.is_subset(&g.edges), "{} not contained", f.name);
        }
    }
}

#[test]
fn cache_read_trace_decomposes_perfectly() {
    let fx = cache_read();
    let text = "# id,src,dest,cmd\n1,CPU_0,Cache,rd_req\n2,Cache,CPU_0,rd_resp\n3,Cache,Mem,rd_req\n\
                4,CPU_0,Cache,ack\n5,Cache,Cache,tag_chk\n6,Cache,Cache,fill\n";
    let catalog = parse_catalog_str(text).unwrap();
    let traces = parse_traces_str("1 3 5 1 5 6 2 3 6 2 4 4\n", &catalog).unwrap().traces;
    assert_eq!(traces, vec![cache_read_trace()]);

    let oracle = evaluate_oracle(&fx.flows, &traces[0], DEFAULT_BUDGET).unwrap();
    assert_eq!(oracle.acceptance_rate, 1.0);
    assert_eq!(oracle.instances.len(), 2);
    let paths: BTreeSet<Vec<MsgId>> = oracle
        .instances
        .iter()
        .map(|inst| inst.iter().map(|&i| traces[0].events[i]).collect())
        .collect();
    assert_eq!(paths, BTreeSet::from([vec![1, 3, 5, 6, 2, 4], vec![1, 5, 3, 6, 2, 4]]));
}

#[test]
fn generated_instances_follow_flow_paths() {
    let fx = cache_read();
    let paths: Vec<Vec<BTreeSet<Vec<MsgId>>>> = vec![fx.flows.iter().map(|f| f.paths().into_iter().collect()).collect()];
    let g = generate_detailed(&GenConfig::new(fx.flows.clone(), 2, 2, 3)).unwrap();
    assert_eq!(g.trace.len(), 12);
    for (inst, &flow) in g.instance_flow.iter().enumerate() {
        let events: Vec<MsgId> = g
            .instance_of
            .iter()
            .zip(&g.trace.events)
            .filter(|(&i, _)| i == inst)
            .map(|(_, &e)| e)
            .collect();
        assert!(paths[0][flow].contains(&events), "instance {inst} emitted {events:?}");
    }
}

#[test]
fn greedy_never_beats_the_oracle_on_the_ambiguous_flow() {
    let flows = nondeterministic();
    let trace = nondeterministic_trace();
    let greedy = evaluate_greedy(&flows, &trace);
    let oracle = evaluate_oracle(&flows, &trace, DEFAULT_BUDGET).unwrap();
    assert_eq!(oracle.acceptance_rate, 1.0);
    assert_eq!((greedy.accepted, greedy.incomplete_instances), (7, 1));
    assert!(!greedy.notes.is_empty());
    // 5 nodes + 6 edges.
    assert_eq!(model_size(&flows), 11);
}

#[test]
fn case_study_subgraph_holds_the_false_edge() {
    let fx = case_study();
    let g = build_graph(&fx.catalog, Predicate::Union);
    let sub = reachable_subgraph(&g, 2, 26).unwrap();
    assert!(sub.edges.contains(&(19, 27)));
    let cpu = fx.flows.iter().find(|f| f.start == 2).unwrap();
    assert!(!cpu.edges.contains(&(19, 27)));
    assert!(cpu.edges.is_subset(&sub.edges));
    assert_eq!(fx.catalog.len(), 14);
}
