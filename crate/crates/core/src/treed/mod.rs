//! Treed GP LLM: a binary partition of the input space with an independent
//! GP LLM per leaf sharing β₀ and W.

mod chain;
mod tree;

pub use chain::{
    predict_tree, run_treed, trace_llm_area, treed_lm_init, treed_predict, TreeMove, TreeMoveStats, TreedChain,
    TreedConfig, TreedRecord, TreedSummary, TreedTrace,
};
pub use tree::{llm_area, NodeView, Skeleton, TreeGeometry, TreeNode, TreePrior};
