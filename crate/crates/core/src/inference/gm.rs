use crate::gaussian::{joint_mass, marginalize, sum, GaussianMixture};
use crate::grammar::GmGrammar;
use crate::linalg::log_sum_exp;
use crate::treebank::LabeledTree;

use super::{allowed, Constraint, RulePosteriors};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GmOptions {
    /// Maximum components kept per chart cell; `None` disables pruning.
    pub budget: Option<usize>,
}

impl Default for GmOptions {
    fn default() -> Self {
        GmOptions { budget: Some(50) }
    }
}

/// Inside and outside score functions as Gaussian mixtures, `[node][polarity]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmChart {
    pub classes: usize,
    pub dim: usize,
    pub constraint: Constraint,
    pub options: GmOptions,
    pub emission: Vec<Vec<GaussianMixture>>,
    /// Inside without the node's emission; `None` (the constant 1) at leaves.
    pub inner: Vec<Vec<Option<GaussianMixture>>>,
    pub inside: Vec<Vec<GaussianMixture>>,
    /// Outside without the node's emission; `None` (the constant 1) at the root.
    pub outer: Vec<Vec<Option<GaussianMixture>>>,
    pub outside: Vec<Vec<GaussianMixture>>,
    pub log_z: f64,
}

impl GmChart {
    fn prune(&self, g: GaussianMixture) -> GaussianMixture {
        match self.options.budget {
            Some(b) => g.prune(b),
            None => g,
        }
    }

    pub fn has_outside(&self) -> bool {
        !self.outside.is_empty()
    }
}

fn times_emission(emission: &GaussianMixture, other: Option<&GaussianMixture>) -> GaussianMixture {
    match other {
        Some(o) => emission.product(o).expect("matching dimensions"),
        None => emission.clone(),
    }
}

pub fn inside_gm(
    tree: &LabeledTree,
    hs: &[&[f64]],
    g: &GmGrammar,
    constraint: &[Option<usize>],
    options: GmOptions,
) -> GmChart {
    let (k, d) = (g.classes, g.dim);
    let emission: Vec<Vec<GaussianMixture>> = hs
        .iter()
        .map(|h| (0..k).map(|a| g.emission_gm(h, a)).collect())
        .collect();
    let mut chart = GmChart {
        classes: k,
        dim: d,
        constraint: constraint.to_vec(),
        options,
        emission,
        inner: Vec::with_capacity(tree.len()),
        inside: Vec::with_capacity(tree.len()),
        outer: Vec::new(),
        outside: Vec::new(),
        log_z: f64::NEG_INFINITY,
    };
    let rules = g.rule_mixtures();
    let blocks = g.blocks();

    for (v, node) in tree.nodes.iter().enumerate() {
        let mut inner_v = Vec::with_capacity(k);
        let mut inside_v = Vec::with_capacity(k);
        for pa in 0..k {
            if !allowed(constraint[v], pa) {
                inner_v.push(Some(GaussianMixture::empty(d)));
                inside_v.push(GaussianMixture::empty(d));
                continue;
            }
            let inner = node.children().map(|(l, r)| {
                let parts: Vec<GaussianMixture> = (0..k)
                    .flat_map(|pb| (0..k).map(move |pc| (pb, pc)))
                    .map(|(pb, pc)| {
                        marginalize(
                            &rules[g.triple(pa, pb, pc)],
                            blocks,
                            [None, Some(&chart.inside[l][pb]), Some(&chart.inside[r][pc])],
                            0,
                        )
                        .expect("consistent blocks")
                    })
                    .collect();
                sum(&parts, d).expect("consistent dimensions")
            });
            let inside = chart.prune(times_emission(&chart.emission[v][pa], inner.as_ref()));
            inner_v.push(inner);
            inside_v.push(inside);
        }
        chart.inner.push(inner_v);
        chart.inside.push(inside_v);
    }
    let roots: Vec<f64> = chart.inside[tree.root()]
        .iter()
        .map(GaussianMixture::total_integral)
        .collect();
    chart.log_z = log_sum_exp(&roots);
    chart
}

pub fn outside_gm(tree: &LabeledTree, chart: &mut GmChart, g: &GmGrammar) {
    let (k, d) = (g.classes, g.dim);
    let rules = g.rule_mixtures();
    let blocks = g.blocks();
    let n = tree.len();
    let mut outer: Vec<Vec<Option<GaussianMixture>>> = vec![Vec::new(); n];
    let mut outside: Vec<Vec<GaussianMixture>> = vec![Vec::new(); n];
    outer[tree.root()] = vec![None; k];

    for v in (0..n).rev() {
        outside[v] = (0..k)
            .map(|pa| {
                if allowed(chart.constraint[v], pa) {
                    chart.prune(times_emission(&chart.emission[v][pa], outer[v][pa].as_ref()))
                } else {
                    GaussianMixture::empty(d)
                }
            })
            .collect();
        let Some((l, r)) = tree.nodes[v].children() else {
            continue;
        };
        for (child, sibling, pos) in [(l, r, 1usize), (r, l, 2usize)] {
            outer[child] = (0..k)
                .map(|px| {
                    if !allowed(chart.constraint[child], px) {
                        return Some(GaussianMixture::empty(d));
                    }
                    let mut parts = Vec::with_capacity(k * k);
                    for pb in 0..k {
                        for py in 0..k {
                            // `child` is block `pos` of the parent's rule, its sibling the other.
                            let (rule, msgs) = if pos == 1 {
                                (
                                    g.triple(pb, px, py),
                                    [Some(&outside[v][pb]), None, Some(&chart.inside[sibling][py])],
                                )
                            } else {
                                (
                                    g.triple(pb, py, px),
                                    [Some(&outside[v][pb]), Some(&chart.inside[sibling][py]), None],
                                )
                            };
                            parts.push(
                                marginalize(&rules[rule], blocks, msgs, pos)
                                    .expect("consistent blocks"),
                            );
                        }
                    }
                    Some(sum(&parts, d).expect("consistent dimensions"))
                })
                .collect();
        }
    }
    chart.outer = outer;
    chart.outside = outside;
}

/// `inner * outer` at a node, the complement of its emission weight.
/// `None` stands for the constant function 1.
pub fn emission_message(chart: &GmChart, v: usize, polarity: usize) -> Option<GaussianMixture> {
    match (&chart.inner[v][polarity], &chart.outer[v][polarity]) {
        (None, None) => None,
        (Some(x), None) | (None, Some(x)) => Some(x.clone()),
        (Some(x), Some(y)) => Some(x.product(y).expect("matching dimensions")),
    }
}

pub fn rule_posteriors_gm(tree: &LabeledTree, chart: &GmChart, g: &GmGrammar) -> RulePosteriors {
    let k = g.classes;
    let rules = g.rule_mixtures();
    let blocks = g.blocks();
    let tables = tree
        .nodes
        .iter()
        .enumerate()
        .map(|(v, node)| {
            node.children().map(|(l, r)| {
                let mut table = vec![0.0; k * k * k];
                for pa in 0..k {
                    for pb in 0..k {
                        for pc in 0..k {
                            let t = g.triple(pa, pb, pc);
                            let mass = joint_mass(
                                &rules[t],
                                blocks,
                                [
                                    Some(&chart.outside[v][pa]),
                                    Some(&chart.inside[l][pb]),
                                    Some(&chart.inside[r][pc]),
                                ],
                            )
                            .expect("consistent blocks");
                            table[t] = (mass - chart.log_z).exp();
                        }
                    }
                }
                table
            })
        })
        .collect();
    let root = tree.root();
    let root_marginal = (0..k)
        .map(|pa| (chart.inside[root][pa].total_integral() - chart.log_z).exp())
        .collect();
    RulePosteriors {
        classes: k,
        tables,
        root_marginal,
    }
}
