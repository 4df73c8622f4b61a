//! Mining message-flow specifications from interleaved SoC communication traces.

pub mod causality;
pub mod error;
pub mod evaluator;
pub mod fixtures;
pub mod format;
pub mod miner;
pub mod scalar;
pub mod seqmodel;
pub mod slice;
pub mod synthgen;
pub mod types;

pub use causality::{build_graph, reachable_subgraph, CausalityGraph, Predicate};
pub use error::{Error, Result};
pub use evaluator::{compare_flows, evaluate_greedy, evaluate_oracle, EvalReport, Policy};
pub use slice::causality_slice;
pub use types::{Catalog, FlowSpec, Message, MsgId, Trace};
pub use miner::{mine, mine_with, to_flowspec, MineOptions, MineResult, MinedFlow};
pub use scalar::Scalar;
pub use seqmodel::{Scorer, Vocab};

pub type AttentionModel64 = seqmodel::AttentionModel<f64>;
pub type AttentionModel32 = seqmodel::AttentionModel<f32>;
pub type Params64 = seqmodel::Params<f64>;
pub type Params32 = seqmodel::Params<f32>;
