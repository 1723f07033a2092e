//! Independent reference computations for the chart algorithms: brute-force
//! enumeration of every refined labeling (discrete grammars) and grid
//! quadrature of the defining integrals (one-dimensional Gaussian grammars).
//!
//! Nothing here calls into `inference`; the suites compare the two.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gaussian::{floored_var, log_normal};
use crate::grammar::{uniform_discrete, DiscreteGrammar, GmGrammar, GmHead, RuleComponent};
use crate::inference::{
    decode_map_wg, decode_mrp, gold_constraint, inside_discrete, inside_gm, mrp_log_objective,
    node_marginals, outside_discrete, outside_gm, rule_posteriors_discrete, rule_posteriors_gm,
    unconstrained, GmOptions,
};
use crate::linalg::{Affine, LogSum, Matrix};
use crate::treebank::{LabeledTree, Node, NodeKind};

/// `|a - b| / max(|a|, |b|, floor)`
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Relative error between two values given by their logs.
pub fn log_rel_err(log_a: f64, log_b: f64) -> f64 {
    if log_a == log_b {
        return 0.0;
    }
    (log_a - log_b).exp_m1().abs()
}

/// Random binary skeleton over `tokens` words with random labels in `0..classes`.
pub fn random_tree<R: Rng>(rng: &mut R, tokens: usize, classes: usize) -> LabeledTree {
    fn build<R: Rng>(
        rng: &mut R,
        start: usize,
        end: usize,
        classes: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let gold = Some(rng.random_range(0..classes));
        let kind = if start == end {
            NodeKind::Leaf {
                token: format!("w{start}"),
            }
        } else {
            let split = rng.random_range(start..end);
            let left = build(rng, start, split, classes, nodes);
            let right = build(rng, split + 1, end, classes, nodes);
            NodeKind::Internal { left, right }
        };
        nodes.push(Node {
            start,
            end,
            gold,
            kind,
        });
        nodes.len() - 1
    }
    let mut nodes = Vec::new();
    build(rng, 0, tokens - 1, classes, &mut nodes);
    LabeledTree { nodes, classes }
}

pub fn random_hidden<R: Rng>(rng: &mut R, nodes: usize, hidden: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..nodes)
        .map(|_| (0..hidden).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn random_discrete<R: Rng>(rng: &mut R, classes: usize, subtypes: usize, hidden: usize) -> DiscreteGrammar {
    let mut g = uniform_discrete(classes, subtypes, hidden);
    g.lambda.iter_mut().for_each(|l| *l = rng.random_range(-1.0..1.0));
    for head in &mut g.heads {
        head.weight = Matrix::uniform(subtypes, hidden, 1.0, rng);
        head.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    g
}

/// Random Gaussian grammar whose variances stay in a range where a grid of
/// step 1e-2 resolves every density.
pub fn random_gm<R: Rng>(rng: &mut R, classes: usize, dim: usize, components: usize, hidden: usize) -> GmGrammar {
    let var_range = (0.3f64.ln(), 2.0f64.ln());
    let rules = (0..classes.pow(3))
        .map(|_| {
            (0..components)
                .map(|_| RuleComponent {
                    log_rho: rng.random_range(-1.0..1.0),
                    mean: (0..3 * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    log_var: (0..3 * dim)
                        .map(|_| rng.random_range(var_range.0..var_range.1))
                        .collect(),
                })
                .collect()
        })
        .collect();
    let affine = |out: usize, w: f64, b: (f64, f64), rng: &mut R| Affine {
        weight: Matrix::uniform(out, hidden, w, rng),
        bias: (0..out).map(|_| rng.random_range(b.0..b.1)).collect(),
    };
    let heads = (0..classes)
        .map(|_| {
            (0..components)
                .map(|_| GmHead {
                    rho: affine(1, 0.5, (-0.5, 0.5), rng),
                    mu: affine(dim, 0.5, (-1.0, 1.0), rng),
                    var: affine(dim, 0.1, (var_range.0 + 0.2, var_range.1 - 0.2), rng),
                })
                .collect()
        })
        .collect();
    GmGrammar {
        classes,
        dim,
        components,
        rules,
        heads,
    }
}

/// Quantities obtained by summing over every refined labeling.
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub log_z: f64,
    pub log_gold: f64,
    pub node_marginals: Vec<Vec<f64>>,
    /// `[node]` tables over `(A * C + B) * C + C'` for internal nodes.
    pub rule_posteriors: Vec<Option<Vec<f64>>>,
}

/// Visit every assignment of `states` values to `len` slots.
fn odometer(len: usize, states: usize, mut f: impl FnMut(&[usize])) {
    let mut digits = vec![0usize; len];
    loop {
        f(&digits);
        let mut i = 0;
        loop {
            if i == len {
                return;
            }
            digits[i] += 1;
            if digits[i] < states {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// Log score of one refined labeling: product of all emission and
/// transition weights.
fn refined_log_score(tree: &LabeledTree, emissions: &[Vec<f64>], g: &DiscreteGrammar, labels: &[usize], subs: &[usize]) -> f64 {
    let n = g.subtypes;
    let mut s = 0.0;
    for (v, node) in tree.nodes.iter().enumerate() {
        s += emissions[v][labels[v] * n + subs[v]];
        if let Some((l, r)) = node.children() {
            s += g.log_weight((labels[v], labels[l], labels[r]), (subs[v], subs[l], subs[r]));
        }
    }
    s
}

/// Number of refined labelings a brute-force pass visits.
pub fn enumeration_size(nodes: usize, classes: usize, subtypes: usize) -> f64 {
    ((classes * subtypes) as f64).powi(nodes as i32)
}

pub fn enumerate_discrete(tree: &LabeledTree, hs: &[Vec<f64>], g: &DiscreteGrammar) -> Enumeration {
    let (k, n) = (g.classes, g.subtypes);
    let nodes = tree.len();
    let emissions: Vec<Vec<f64>> = hs
        .iter()
        .map(|h| {
            (0..k)
                .flat_map(|a| {
                    let head = &g.heads[a];
                    (0..n).map(move |s| {
                        head.bias[s] + head.weight.row(s).iter().zip(h).map(|(w, x)| w * x).sum::<f64>()
                    })
                })
                .collect()
        })
        .collect();

    let mut z = LogSum::default();
    let mut gold = LogSum::default();
    let mut marg = vec![vec![LogSum::default(); k]; nodes];
    let mut rules: Vec<Option<Vec<LogSum>>> = tree
        .nodes
        .iter()
        .map(|nd| nd.children().map(|_| vec![LogSum::default(); k * k * k]))
        .collect();
    let mut labels = vec![0; nodes];
    let mut subs = vec![0; nodes];
    odometer(nodes, k * n, |digits| {
        for (v, d) in digits.iter().enumerate() {
            labels[v] = d / n;
            subs[v] = d % n;
        }
        let s = refined_log_score(tree, &emissions, g, &labels, &subs);
        z.add(s);
        if tree.nodes.iter().zip(&labels).all(|(nd, &l)| nd.gold.is_none_or(|gl| gl == l)) {
            gold.add(s);
        }
        for (v, nd) in tree.nodes.iter().enumerate() {
            marg[v][labels[v]].add(s);
            if let Some((l, r)) = nd.children() {
                rules[v].as_mut().unwrap()[(labels[v] * k + labels[l]) * k + labels[r]].add(s);
            }
        }
    });
    let log_z = z.value();
    Enumeration {
        log_z,
        log_gold: gold.value(),
        node_marginals: marg
            .iter()
            .map(|m| m.iter().map(|x| (x.value() - log_z).exp()).collect())
            .collect(),
        rule_posteriors: rules
            .iter()
            .map(|t| t.as_ref().map(|t| t.iter().map(|x| (x.value() - log_z).exp()).collect()))
            .collect(),
    }
}

/// Maximum of `Σ log q` over every unrefined labeling.
pub fn exhaustive_mrp_objective(tree: &LabeledTree, tables: &[Option<Vec<f64>>], classes: usize) -> f64 {
    let k = classes;
    let mut best = f64::NEG_INFINITY;
    odometer(tree.len(), k, |labels| {
        let s: f64 = tree
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(v, nd)| {
                nd.children().map(|(l, r)| {
                    tables[v].as_ref().unwrap()[(labels[v] * k + labels[l]) * k + labels[r]].ln()
                })
            })
            .sum();
        best = best.max(s);
    });
    best
}

/// Highest tree score under a one-subtype grammar, with the lexicographically
/// smallest maximizing labeling in node order.
pub fn exhaustive_map_wg(tree: &LabeledTree, hs: &[Vec<f64>], g: &DiscreteGrammar) -> (f64, Vec<usize>) {
    let emissions: Vec<Vec<f64>> = hs.iter().map(|h| g.emission_table(h)).collect();
    let subs = vec![0; tree.len()];
    let mut best = (f64::NEG_INFINITY, Vec::new());
    odometer(tree.len(), g.classes, |labels| {
        let s = refined_log_score(tree, &emissions, g, labels, &subs);
        if s > best.0 {
            best = (s, labels.to_vec());
        }
    });
    best
}

/// Score of a labeling under a one-subtype grammar.
pub fn wg_log_score(tree: &LabeledTree, hs: &[Vec<f64>], g: &DiscreteGrammar, labels: &[usize]) -> f64 {
    let emissions: Vec<Vec<f64>> = hs.iter().map(|h| g.emission_table(h)).collect();
    refined_log_score(tree, &emissions, g, labels, &vec![0; tree.len()])
}

/// Uniform grid used by the quadrature oracle.
#[derive(Debug, Clone, Copy)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            lo: -10.0,
            hi: 10.0,
            step: 1e-2,
        }
    }
}

impl Grid {
    fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step).round() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Quadrature {
    pub log_z: f64,
    pub rule_posteriors: Vec<Option<Vec<f64>>>,
}

/// Grid quadrature of the inside, outside and rule-score integrals for a
/// one-dimensional Gaussian grammar, with no pruning.
pub fn quadrature_gm(tree: &LabeledTree, hs: &[Vec<f64>], g: &GmGrammar, grid: Grid) -> Quadrature {
    assert_eq!(g.dim, 1, "quadrature oracle handles one-dimensional latent vectors");
    let k = g.classes;
    let xs = grid.points();
    let h = grid.step;
    let density = |log_rho: f64, mean: f64, var: f64| -> Vec<f64> {
        xs.iter().map(|&x| (log_rho + log_normal(x, mean, var)).exp()).collect()
    };
    let integrate = |f: &[f64], g: &[f64]| -> f64 { f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * h };

    // Emission functions on the grid.
    let emission: Vec<Vec<Vec<f64>>> = hs
        .iter()
        .map(|hv| {
            (0..k)
                .map(|a| {
                    let mut total = vec![0.0; xs.len()];
                    for head in &g.heads[a] {
                        let log_rho = head.rho.apply(hv)[0];
                        let mean = head.mu.apply(hv)[0];
                        let var = floored_var(head.var.apply(hv)[0]);
                        for (t, d) in total.iter_mut().zip(density(log_rho, mean, var)) {
                            *t += d;
                        }
                    }
                    total
                })
                .collect()
        })
        .collect();
    // Per rule component: the three block densities (unit coefficient) and rho.
    let rule = |a: usize, b: usize, c: usize| -> Vec<(f64, [Vec<f64>; 3])> {
        g.rules[g.triple(a, b, c)]
            .iter()
            .map(|t| {
                let blk = |i: usize| density(0.0, t.mean[i], floored_var(t.log_var[i]));
                (t.log_rho.exp(), [blk(0), blk(1), blk(2)])
            })
            .collect()
    };
    let rules: Vec<Vec<(f64, [Vec<f64>; 3])>> = (0..k * k * k)
        .map(|t| rule(t / (k * k), (t / k) % k, t % k))
        .collect();

    let n = tree.len();
    let mut inside: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    for (v, node) in tree.nodes.iter().enumerate() {
        inside[v] = (0..k)
            .map(|a| match node.children() {
                None => emission[v][a].clone(),
                Some((l, r)) => {
                    let mut inner = vec![0.0; xs.len()];
                    for b in 0..k {
                        for c in 0..k {
                            for (rho, blocks) in &rules[(a * k + b) * k + c] {
                                let s = rho * integrate(&blocks[1], &inside[l][b]) * integrate(&blocks[2], &inside[r][c]);
                                for (x, d) in inner.iter_mut().zip(&blocks[0]) {
                                    *x += s * d;
                                }
                            }
                        }
                    }
                    inner.iter().zip(&emission[v][a]).map(|(x, e)| x * e).collect()
                }
            })
            .collect();
    }
    let root = tree.root();
    let z: f64 = (0..k).map(|a| inside[root][a].iter().sum::<f64>() * h).sum();

    let mut outside: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    outside[root] = emission[root].clone();
    for v in (0..n).rev() {
        let Some((l, r)) = tree.nodes[v].children() else {
            continue;
        };
        let mut out_l = vec![vec![0.0; xs.len()]; k];
        let mut out_r = vec![vec![0.0; xs.len()]; k];
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    for (rho, blocks) in &rules[(a * k + b) * k + c] {
                        let ma = integrate(&blocks[0], &outside[v][a]);
                        let mb = integrate(&blocks[1], &inside[l][b]);
                        let mc = integrate(&blocks[2], &inside[r][c]);
                        for (x, d) in out_l[b].iter_mut().zip(&blocks[1]) {
                            *x += rho * ma * mc * d;
                        }
                        for (x, d) in out_r[c].iter_mut().zip(&blocks[2]) {
                            *x += rho * ma * mb * d;
                        }
                    }
                }
            }
        }
        for (child, mut outer) in [(l, out_l), (r, out_r)] {
            for (a, o) in outer.iter_mut().enumerate() {
                o.iter_mut().zip(&emission[child][a]).for_each(|(x, e)| *x *= e);
            }
            outside[child] = outer;
        }
    }

    let rule_posteriors = tree
        .nodes
        .iter()
        .enumerate()
        .map(|(v, node)| {
            node.children().map(|(l, r)| {
                let mut table = vec![0.0; k * k * k];
                for a in 0..k {
                    for b in 0..k {
                        for c in 0..k {
                            let t = (a * k + b) * k + c;
                            table[t] = rules[t]
                                .iter()
                                .map(|(rho, blocks)| {
                                    rho * integrate(&blocks[0], &outside[v][a])
                                        * integrate(&blocks[1], &inside[l][b])
                                        * integrate(&blocks[2], &inside[r][c])
                                })
                                .sum::<f64>()
                                / z;
                        }
                    }
                }
                table
            })
        })
        .collect();
    Quadrature {
        log_z: z.ln(),
        rule_posteriors,
    }
}

/// Outcome of one oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub tolerance: f64,
    /// Worst error per compared quantity.
    pub worst: Vec<(String, f64)>,
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(name: &str, tolerance: f64) -> Self {
        SuiteReport {
            name: name.to_string(),
            cases: 0,
            tolerance,
            worst: Vec::new(),
            failures: Vec::new(),
        }
    }

    fn record(&mut self, case: usize, what: &str, err: f64, tol: f64) {
        match self.worst.iter_mut().find(|(k, _)| k == what) {
            Some((_, w)) => *w = w.max(err),
            None => self.worst.push((what.to_string(), err)),
        }
        if !(err <= tol) {
            self.failures.push(format!("case {case}: {what} error {err:.3e} > {tol:.1e}"));
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn worst_of(&self, what: &str) -> f64 {
        self.worst.iter().find(|(k, _)| k == what).map_or(0.0, |(_, w)| *w)
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}: {} cases, tolerance {:.1e}, {}\n",
            self.name,
            self.cases,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        for (k, w) in &self.worst {
            s.push_str(&format!("  worst {k}: {w:.3e}\n"));
        }
        for f in self.failures.iter().take(10) {
            s.push_str(&format!("  {f}\n"));
        }
        s
    }
}

/// Settings shared by the suites.
#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub seed: u64,
    pub cases: usize,
    pub tolerance: f64,
}

const MAX_ENUMERATION: f64 = 2.0e6;
const HIDDEN: usize = 3;
const PROB_FLOOR: f64 = 1e-12;

/// Draw a small discrete case whose full enumeration stays tractable.
fn discrete_case(rng: &mut ChaCha8Rng, force_wg: bool) -> (LabeledTree, Vec<Vec<f64>>, DiscreteGrammar) {
    loop {
        let classes = rng.random_range(2..=3);
        let subtypes = if force_wg { 1 } else { rng.random_range(1..=3) };
        let tokens = rng.random_range(1..=6);
        if enumeration_size(2 * tokens - 1, classes, subtypes) > MAX_ENUMERATION {
            continue;
        }
        let tree = random_tree(rng, tokens, classes);
        let hs = random_hidden(rng, tree.len(), HIDDEN, 1.0);
        let g = random_discrete(rng, classes, subtypes, HIDDEN);
        return (tree, hs, g);
    }
}

/// Inside–outside versus brute-force enumeration: partition function, gold
/// score, node marginals, rule posteriors, posterior normalization, and
/// optimality of both decoders.
pub fn run_discrete_suite(cfg: SuiteConfig) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = SuiteReport::new("discrete enumeration", cfg.tolerance);
    for case in 0..cfg.cases {
        let (tree, hs, g) = discrete_case(&mut rng, case % 4 == 0);
        let views: Vec<&[f64]> = hs.iter().map(Vec::as_slice).collect();
        let oracle = enumerate_discrete(&tree, &hs, &g);

        let mut chart = inside_discrete(&tree, &views, &g, &unconstrained(&tree));
        outside_discrete(&tree, &mut chart, &g);
        let gold = inside_discrete(&tree, &views, &g, &gold_constraint(&tree));
        let post = rule_posteriors_discrete(&tree, &chart, &g);
        let marg = node_marginals(&chart);

        report.record(case, "log-partition", log_rel_err(chart.log_z, oracle.log_z), cfg.tolerance);
        report.record(case, "gold score", log_rel_err(gold.log_z, oracle.log_gold), cfg.tolerance);
        let m_err = marg
            .iter()
            .flatten()
            .zip(oracle.node_marginals.iter().flatten())
            .map(|(a, b)| rel_err(*a, *b, PROB_FLOOR))
            .fold(0.0, f64::max);
        report.record(case, "node marginals", m_err, cfg.tolerance);
        let q_err = post
            .tables
            .iter()
            .zip(&oracle.rule_posteriors)
            .filter_map(|(a, b)| a.as_ref().zip(b.as_ref()))
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| rel_err(*x, *y, PROB_FLOOR)))
            .fold(0.0, f64::max);
        report.record(case, "rule posteriors", q_err, cfg.tolerance);
        report.record(case, "posterior normalization", post.max_normalization_error(), 1e-9);

        if tree.len() > 1 {
            let labels = decode_mrp(&post, &tree);
            let best = exhaustive_mrp_objective(&tree, &post.tables, g.classes);
            let got = mrp_log_objective(&post, &tree, &labels);
            report.record(case, "mrp optimality gap", (best - got).max(0.0), 1e-12);
        }
        if g.subtypes == 1 {
            let labels = decode_map_wg(&tree, &views, &g).expect("one subtype");
            let (best, _) = exhaustive_map_wg(&tree, &hs, &g);
            let got = wg_log_score(&tree, &hs, &g, &labels);
            report.record(case, "map optimality gap", (best - got).max(0.0), 1e-12);
        }
        report.cases += 1;
    }
    report
}

/// Gaussian-grammar charts (no pruning) versus grid quadrature.
pub fn run_gm_suite(cfg: SuiteConfig, grid: Grid) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = SuiteReport::new("gaussian quadrature", cfg.tolerance);
    for case in 0..cfg.cases {
        let classes = rng.random_range(2..=3);
        let components = rng.random_range(1..=2);
        let tokens = rng.random_range(1..=3);
        let tree = random_tree(&mut rng, tokens, classes);
        let hs = random_hidden(&mut rng, tree.len(), HIDDEN, 1.0);
        let g = random_gm(&mut rng, classes, 1, components, HIDDEN);
        let views: Vec<&[f64]> = hs.iter().map(Vec::as_slice).collect();

        let options = GmOptions { budget: None };
        let mut chart = inside_gm(&tree, &views, &g, &unconstrained(&tree), options);
        outside_gm(&tree, &mut chart, &g);
        let post = rule_posteriors_gm(&tree, &chart, &g);
        let quad = quadrature_gm(&tree, &hs, &g, grid);

        report.record(case, "log-partition", log_rel_err(chart.log_z, quad.log_z), cfg.tolerance);
        let q_err = post
            .tables
            .iter()
            .zip(&quad.rule_posteriors)
            .filter_map(|(a, b)| a.as_ref().zip(b.as_ref()))
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| rel_err(*x, *y, PROB_FLOOR)))
            .fold(0.0, f64::max);
        report.record(case, "rule posteriors", q_err, cfg.tolerance);
        report.record(case, "posterior normalization", post.max_normalization_error(), 1e-6);
        if tree.len() > 1 {
            let labels = decode_mrp(&post, &tree);
            let best = exhaustive_mrp_objective(&tree, &post.tables, g.classes);
            let got = mrp_log_objective(&post, &tree, &labels);
            report.record(case, "mrp optimality gap", (best - got).max(0.0), 1e-12);
        }
        report.cases += 1;
    }
    report
}

/// A weighted grammar and the same parameters viewed as a one-subtype
/// latent-variable grammar must agree exactly on every chart quantity.
pub fn run_wg_lvg_suite(cfg: SuiteConfig) -> SuiteReport {
    use crate::grammar::{init_grammar, Grammar, GrammarKind, PolaritySet};

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = SuiteReport::new("wg vs lvg(n=1)", cfg.tolerance);
    for case in 0..cfg.cases {
        let classes = rng.random_range(2..=5);
        let tokens = rng.random_range(1..=8);
        let tree = random_tree(&mut rng, tokens, classes);
        let hs = random_hidden(&mut rng, tree.len(), HIDDEN, 1.0);
        let views: Vec<&[f64]> = hs.iter().map(Vec::as_slice).collect();
        let seed = rng.random();
        let spec = PolaritySet {
            classes,
            subtypes: 1,
            dim: 1,
            components: 1,
        };
        let (Grammar::Discrete(wg), Grammar::Discrete(lvg)) = (
            init_grammar(spec, GrammarKind::Wg, HIDDEN, seed),
            init_grammar(spec, GrammarKind::Lvg, HIDDEN, seed),
        ) else {
            unreachable!("discrete kinds")
        };

        let run = |g: &DiscreteGrammar| {
            let mut chart = inside_discrete(&tree, &views, g, &unconstrained(&tree));
            outside_discrete(&tree, &mut chart, g);
            let gold = inside_discrete(&tree, &views, g, &gold_constraint(&tree));
            let post = rule_posteriors_discrete(&tree, &chart, g);
            let labels = decode_mrp(&post, &tree);
            (chart, gold.log_z, post, labels)
        };
        let (ca, ga, pa, la) = run(&wg);
        let (cb, gb, pb, lb) = run(&lvg);
        let chart_err = ca
            .inside
            .iter()
            .chain(&ca.outside)
            .flatten()
            .zip(cb.inside.iter().chain(&cb.outside).flatten())
            .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() })
            .fold(0.0, f64::max);
        report.record(case, "chart entries", chart_err, cfg.tolerance);
        report.record(case, "loss", ((ca.log_z - ga) - (cb.log_z - gb)).abs(), cfg.tolerance);
        let q_err = pa
            .tables
            .iter()
            .flatten()
            .flatten()
            .zip(pb.tables.iter().flatten().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        report.record(case, "rule posteriors", q_err, cfg.tolerance);
        report.record(case, "decode mismatch", if la == lb { 0.0 } else { 1.0 }, 0.0);
        let ma = decode_map_wg(&tree, &views, &wg).expect("one subtype");
        let mb = decode_map_wg(&tree, &views, &lvg).expect("one subtype");
        report.record(case, "map decode mismatch", if ma == mb { 0.0 } else { 1.0 }, 0.0);
        report.cases += 1;
    }
    report
}
