use crate::error::{Error, Result};
use crate::grammar::DiscreteGrammar;
use crate::linalg::log_sum_exp;
use crate::treebank::LabeledTree;

use super::{allowed, Constraint, RulePosteriors};

/// Inside and outside log-scores for a weighted or latent-variable grammar.
/// Every per-node vector is laid out `[A * n + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteChart {
    pub classes: usize,
    pub subtypes: usize,
    pub constraint: Constraint,
    pub emission: Vec<Vec<f64>>,
    /// Inside score without the node's own emission (0 at leaves).
    pub inner: Vec<Vec<f64>>,
    pub inside: Vec<Vec<f64>>,
    /// Outside score without the node's own emission (0 at the root).
    pub outer: Vec<Vec<f64>>,
    pub outside: Vec<Vec<f64>>,
    pub log_z: f64,
}

impl DiscreteChart {
    fn width(&self) -> usize {
        self.classes * self.subtypes
    }

    pub fn has_outside(&self) -> bool {
        !self.outside.is_empty()
    }
}

/// `(max, exp(v - max))`, with all-zero output when every entry is `-inf`.
fn scaled(v: &[f64]) -> (f64, Vec<f64>) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return (m, vec![0.0; v.len()]);
    }
    (m, v.iter().map(|x| (x - m).exp()).collect())
}

fn ln_scaled(sum: f64, offset: f64) -> f64 {
    if sum > 0.0 && offset.is_finite() {
        sum.ln() + offset
    } else {
        f64::NEG_INFINITY
    }
}

fn transition_weights(g: &DiscreteGrammar) -> Vec<f64> {
    g.lambda.iter().map(|l| l.exp()).collect()
}

/// Bottom-up inside pass. `hs` holds the encoder state of every node.
pub fn inside_discrete(
    tree: &LabeledTree,
    hs: &[&[f64]],
    g: &DiscreteGrammar,
    constraint: &[Option<usize>],
) -> DiscreteChart {
    let emission: Vec<Vec<f64>> = hs.iter().map(|h| g.emission_table(h)).collect();
    inside_from_emissions(tree, emission, g, constraint)
}

pub(crate) fn inside_from_emissions(
    tree: &LabeledTree,
    emission: Vec<Vec<f64>>,
    g: &DiscreteGrammar,
    constraint: &[Option<usize>],
) -> DiscreteChart {
    let (k, n) = (g.classes, g.subtypes);
    let n3 = n * n * n;
    let weights = transition_weights(g);
    let mut inner = vec![vec![0.0; k * n]; tree.len()];
    let mut inside = vec![vec![f64::NEG_INFINITY; k * n]; tree.len()];

    for (v, node) in tree.nodes.iter().enumerate() {
        if let Some((l, r)) = node.children() {
            let (ml, el) = scaled(&inside[l]);
            let (mr, er) = scaled(&inside[r]);
            let mut acc = vec![0.0; k * n];
            for pa in 0..k {
                if !allowed(constraint[v], pa) {
                    continue;
                }
                for pb in 0..k {
                    for pc in 0..k {
                        let blk = &weights[g.triple(pa, pb, pc) * n3..][..n3];
                        for a in 0..n {
                            let mut s = 0.0;
                            for b in 0..n {
                                let eb = el[pb * n + b];
                                if eb == 0.0 {
                                    continue;
                                }
                                let row = &blk[(a * n + b) * n..][..n];
                                let mut t = 0.0;
                                for c in 0..n {
                                    t += row[c] * er[pc * n + c];
                                }
                                s += eb * t;
                            }
                            acc[pa * n + a] += s;
                        }
                    }
                }
            }
            inner[v] = acc.iter().map(|&s| ln_scaled(s, ml + mr)).collect();
        }
        for pa in 0..k {
            if !allowed(constraint[v], pa) {
                continue;
            }
            for a in 0..n {
                let i = pa * n + a;
                inside[v][i] = emission[v][i] + inner[v][i];
            }
        }
    }
    let log_z = log_sum_exp(&inside[tree.root()]);
    DiscreteChart {
        classes: k,
        subtypes: n,
        constraint: constraint.to_vec(),
        emission,
        inner,
        inside,
        outer: Vec::new(),
        outside: Vec::new(),
        log_z,
    }
}

/// Top-down outside pass over a chart whose inside scores are filled.
pub fn outside_discrete(tree: &LabeledTree, chart: &mut DiscreteChart, g: &DiscreteGrammar) {
    let (k, n) = (g.classes, g.subtypes);
    let n3 = n * n * n;
    let width = chart.width();
    let weights = transition_weights(g);
    let mut outer = vec![vec![f64::NEG_INFINITY; width]; tree.len()];
    let mut outside = vec![vec![f64::NEG_INFINITY; width]; tree.len()];
    let root = tree.root();
    outer[root].fill(0.0);

    for v in (0..tree.len()).rev() {
        for pa in 0..k {
            if !allowed(chart.constraint[v], pa) {
                continue;
            }
            for a in 0..n {
                let i = pa * n + a;
                outside[v][i] = chart.emission[v][i] + outer[v][i];
            }
        }
        let Some((l, r)) = tree.nodes[v].children() else {
            continue;
        };
        let (mo, eo) = scaled(&outside[v]);
        let (ml, el) = scaled(&chart.inside[l]);
        let (mr, er) = scaled(&chart.inside[r]);
        let mut acc_l = vec![0.0; width];
        let mut acc_r = vec![0.0; width];
        for pa in 0..k {
            for pb in 0..k {
                for pc in 0..k {
                    let blk = &weights[g.triple(pa, pb, pc) * n3..][..n3];
                    for a in 0..n {
                        let oa = eo[pa * n + a];
                        if oa == 0.0 {
                            continue;
                        }
                        for b in 0..n {
                            let lb = el[pb * n + b];
                            let row = &blk[(a * n + b) * n..][..n];
                            let mut to_left = 0.0;
                            for c in 0..n {
                                let w = row[c] * oa;
                                to_left += w * er[pc * n + c];
                                acc_r[pc * n + c] += w * lb;
                            }
                            acc_l[pb * n + b] += to_left;
                        }
                    }
                }
            }
        }
        for i in 0..width {
            outer[l][i] = ln_scaled(acc_l[i], mo + mr);
            outer[r][i] = ln_scaled(acc_r[i], mo + ml);
        }
    }
    chart.outer = outer;
    chart.outside = outside;
}

/// Visit every refined anchored transition with its posterior mass:
/// `f(node, A, B, C, a, b, c, q)`.
fn for_each_refined_rule(
    tree: &LabeledTree,
    chart: &DiscreteChart,
    g: &DiscreteGrammar,
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, f64),
) {
    let (k, n) = (g.classes, g.subtypes);
    let n3 = n * n * n;
    let weights = transition_weights(g);
    for (v, node) in tree.nodes.iter().enumerate() {
        let Some((l, r)) = node.children() else {
            continue;
        };
        let (mo, eo) = scaled(&chart.outside[v]);
        let (ml, el) = scaled(&chart.inside[l]);
        let (mr, er) = scaled(&chart.inside[r]);
        let offset = mo + ml + mr - chart.log_z;
        if !offset.is_finite() {
            continue;
        }
        let scale = offset.exp();
        for pa in 0..k {
            for pb in 0..k {
                for pc in 0..k {
                    let blk = &weights[g.triple(pa, pb, pc) * n3..][..n3];
                    for a in 0..n {
                        let oa = eo[pa * n + a];
                        if oa == 0.0 {
                            continue;
                        }
                        for b in 0..n {
                            let lb = el[pb * n + b];
                            if lb == 0.0 {
                                continue;
                            }
                            for c in 0..n {
                                let rc = er[pc * n + c];
                                let q = blk[(a * n + b) * n + c] * oa * lb * rc * scale;
                                f(v, pa, pb, pc, a, b, c, q);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Posterior `q(A -> B C)` at each internal node, summed over subtypes.
pub fn rule_posteriors_discrete(
    tree: &LabeledTree,
    chart: &DiscreteChart,
    g: &DiscreteGrammar,
) -> RulePosteriors {
    let k = g.classes;
    let mut tables: Vec<Option<Vec<f64>>> = tree
        .nodes
        .iter()
        .map(|n| n.children().map(|_| vec![0.0; k * k * k]))
        .collect();
    for_each_refined_rule(tree, chart, g, |v, pa, pb, pc, _, _, _, q| {
        tables[v].as_mut().unwrap()[(pa * k + pb) * k + pc] += q;
    });
    let root_marginal = node_marginals(chart).pop().unwrap_or_default();
    RulePosteriors {
        classes: k,
        tables,
        root_marginal,
    }
}

/// Add `scale` times the expected refined-rule counts into a buffer shaped
/// like the grammar's `lambda`.
pub fn transition_counts(
    tree: &LabeledTree,
    chart: &DiscreteChart,
    g: &DiscreteGrammar,
    scale: f64,
    out: &mut [f64],
) {
    let n = g.subtypes;
    let n3 = n * n * n;
    for_each_refined_rule(tree, chart, g, |_, pa, pb, pc, a, b, c, q| {
        out[g.triple(pa, pb, pc) * n3 + (a * n + b) * n + c] += scale * q;
    });
}

/// Expected emission counts per node, laid out `[A * n + a]`.
pub fn emission_counts(chart: &DiscreteChart) -> Vec<Vec<f64>> {
    chart
        .inside
        .iter()
        .zip(&chart.outside)
        .zip(&chart.emission)
        .map(|((ins, outs), em)| {
            ins.iter()
                .zip(outs)
                .zip(em)
                .map(|((i, o), e)| {
                    let l = i + o - e - chart.log_z;
                    if l.is_nan() {
                        0.0
                    } else {
                        l.exp()
                    }
                })
                .collect()
        })
        .collect()
}

/// Posterior probability of each polarity at each node.
pub fn node_marginals(chart: &DiscreteChart) -> Vec<Vec<f64>> {
    let n = chart.subtypes;
    emission_counts(chart)
        .into_iter()
        .map(|e| e.chunks(n).map(|c| c.iter().sum()).collect())
        .collect()
}

/// Log score of the gold unrefined tree, summed over its refinements.
pub fn constrained_inside_discrete(
    tree: &LabeledTree,
    hs: &[&[f64]],
    g: &DiscreteGrammar,
) -> Result<f64> {
    let constraint: Vec<Option<usize>> = tree.nodes.iter().map(|n| n.gold).collect();
    if let Some(v) = constraint.iter().position(Option::is_none) {
        return Err(Error::Unsupported(format!("node {v} has no gold label")));
    }
    Ok(inside_discrete(tree, hs, g, &constraint).log_z)
}
