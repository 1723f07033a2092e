use crate::error::{Error, Result};
use crate::grammar::DiscreteGrammar;
use crate::treebank::LabeledTree;

use super::RulePosteriors;

/// Best `(B, C)` for each parent polarity, scanning pairs in lexicographic
/// order so the lowest indices win ties.
fn best_pairs(
    k: usize,
    score: impl Fn(usize, usize, usize) -> f64,
) -> (Vec<f64>, Vec<(usize, usize)>) {
    let mut best = vec![f64::NEG_INFINITY; k];
    let mut arg = vec![(0, 0); k];
    for pa in 0..k {
        let mut first = true;
        for pb in 0..k {
            for pc in 0..k {
                let s = score(pa, pb, pc);
                if first || s > best[pa] {
                    best[pa] = s;
                    arg[pa] = (pb, pc);
                    first = false;
                }
            }
        }
    }
    (best, arg)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn backtrack(tree: &LabeledTree, root_label: usize, choice: &[Vec<(usize, usize)>]) -> Vec<usize> {
    let mut labels = vec![0; tree.len()];
    labels[tree.root()] = root_label;
    for v in (0..tree.len()).rev() {
        if let Some((l, r)) = tree.nodes[v].children() {
            let (b, c) = choice[v][labels[v]];
            labels[l] = b;
            labels[r] = c;
        }
    }
    labels
}

/// Labeling maximizing the product of anchored rule posteriors.
///
/// A single-leaf tree has no transition rules; its label is the argmax of
/// the root posterior.
pub fn decode_mrp(post: &RulePosteriors, tree: &LabeledTree) -> Vec<usize> {
    let k = post.classes;
    if tree.len() == 1 {
        return vec![argmax(&post.root_marginal)];
    }
    let mut best = vec![vec![0.0; k]; tree.len()];
    let mut choice = vec![Vec::new(); tree.len()];
    for (v, node) in tree.nodes.iter().enumerate() {
        if let Some((l, r)) = node.children() {
            let table = post.tables[v].as_ref().expect("internal node has a table");
            let (b, arg) = best_pairs(k, |pa, pb, pc| {
                table[(pa * k + pb) * k + pc].ln() + best[l][pb] + best[r][pc]
            });
            best[v] = b;
            choice[v] = arg;
        }
    }
    backtrack(tree, argmax(&best[tree.root()]), &choice)
}

/// `Σ log q` of a labeling's anchored rules.
pub fn mrp_log_objective(post: &RulePosteriors, tree: &LabeledTree, labels: &[usize]) -> f64 {
    tree.nodes
        .iter()
        .enumerate()
        .filter_map(|(v, n)| n.children().map(|(l, r)| post.get(v, labels[v], labels[l], labels[r]).ln()))
        .sum()
}

/// Exact highest-scoring labeling under a weighted grammar (one subtype per
/// polarity), by Viterbi over the fixed skeleton.
pub fn decode_map_wg(tree: &LabeledTree, hs: &[&[f64]], g: &DiscreteGrammar) -> Result<Vec<usize>> {
    if g.subtypes != 1 {
        return Err(Error::Unsupported(format!(
            "exact MAP decoding needs one subtype per polarity, grammar has {}",
            g.subtypes
        )));
    }
    let k = g.classes;
    let mut best = vec![vec![0.0; k]; tree.len()];
    let mut choice = vec![Vec::new(); tree.len()];
    for (v, node) in tree.nodes.iter().enumerate() {
        let emission = g.emission_table(hs[v]);
        match node.children() {
            None => best[v] = emission,
            Some((l, r)) => {
                let (b, arg) = best_pairs(k, |pa, pb, pc| {
                    g.log_weight((pa, pb, pc), (0, 0, 0)) + best[l][pb] + best[r][pc]
                });
                best[v] = b.iter().zip(&emission).map(|(x, e)| x + e).collect();
                choice[v] = arg;
            }
        }
    }
    Ok(backtrack(tree, argmax(&best[tree.root()]), &choice))
}
