//! Exact inside–outside over a fixed binary skeleton.
//!
//! Scores follow the convention that both the inside and the outside score
//! of a node include that node's emission weight; node marginals therefore
//! divide the emission out once, and the root's outside score is its
//! emission weight. The partition function sums over every root polarity.

mod decode;
mod discrete;
mod gm;

pub use decode::{decode_map_wg, decode_mrp, mrp_log_objective};
pub use discrete::{
    constrained_inside_discrete, emission_counts, inside_discrete, node_marginals,
    outside_discrete, rule_posteriors_discrete, transition_counts, DiscreteChart,
};
pub use gm::{
    emission_message, inside_gm, outside_gm, rule_posteriors_gm, GmChart, GmOptions,
};

use crate::treebank::LabeledTree;

/// Per-node label restriction: `None` leaves the polarity free.
pub type Constraint = Vec<Option<usize>>;

pub fn unconstrained(tree: &LabeledTree) -> Constraint {
    vec![None; tree.len()]
}

/// Fix every labeled node to its gold polarity; excluded nodes stay free.
pub fn gold_constraint(tree: &LabeledTree) -> Constraint {
    tree.nodes.iter().map(|n| n.gold).collect()
}

#[inline]
pub(crate) fn allowed(constraint: Option<usize>, polarity: usize) -> bool {
    constraint.is_none_or(|c| c == polarity)
}

/// Anchored rule posteriors `q(A -> B C)` at every internal node.
#[derive(Debug, Clone, PartialEq)]
pub struct RulePosteriors {
    pub classes: usize,
    /// `[node]`: `Some(table)` with `table[(A * C + B) * C + C']` for internal nodes.
    pub tables: Vec<Option<Vec<f64>>>,
    /// Posterior of the root polarity.
    pub root_marginal: Vec<f64>,
}

impl RulePosteriors {
    pub fn get(&self, node: usize, a: usize, b: usize, c: usize) -> f64 {
        let k = self.classes;
        self.tables[node].as_ref().expect("internal node")[(a * k + b) * k + c]
    }

    /// Largest deviation of any table's total mass from 1.
    pub fn max_normalization_error(&self) -> f64 {
        self.tables
            .iter()
            .flatten()
            .map(|t| (t.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}
