//! A generated sentiment language whose phrase labels follow fixed
//! composition rules: intensifiers sharpen, negators flip, and "X but Y"
//! takes the polarity of Y. Labels use the five-way scale.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::treebank::{LabeledTree, Node, NodeKind};

pub const STRONG_NEG: &[&str] = &["awful", "horrible", "terrible", "dreadful", "atrocious", "abysmal"];
pub const NEG: &[&str] = &["bad", "dull", "weak", "clumsy", "bland", "tedious", "messy", "flat"];
pub const POS: &[&str] = &["good", "nice", "pleasant", "charming", "solid", "likable", "decent", "fun"];
pub const STRONG_POS: &[&str] = &["superb", "brilliant", "wonderful", "magnificent", "stunning", "outstanding"];
pub const NOUNS: &[&str] = &[
    "movie", "film", "plot", "cast", "script", "story", "ending", "score", "acting", "director",
];
pub const DETS: &[&str] = &["the", "this", "a", "its"];
pub const VERBS: &[&str] = &["is", "was", "seems", "feels"];
pub const NEGATORS: &[&str] = &["not", "never", "hardly"];
pub const INTENSIFIERS: &[&str] = &["very", "truly", "extremely", "really"];
pub const CONTRAST: &str = "but";
pub const NEUTRAL: usize = 2;

pub fn intensify(label: usize) -> usize {
    match label {
        1 => 0,
        3 => 4,
        l => l,
    }
}

pub fn negate(label: usize) -> usize {
    [3, 3, 2, 1, 1][label]
}

/// Every word of the language.
pub fn lexicon() -> Vec<&'static str> {
    [STRONG_NEG, NEG, POS, STRONG_POS, NOUNS, DETS, VERBS, NEGATORS, INTENSIFIERS]
        .concat()
        .into_iter()
        .chain([CONTRAST])
        .collect()
}

struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    nodes: Vec<Node>,
    next: usize,
}

impl Builder<'_> {
    fn leaf(&mut self, token: &str, label: usize) -> usize {
        self.nodes.push(Node {
            start: self.next,
            end: self.next,
            gold: Some(label),
            kind: NodeKind::Leaf {
                token: token.to_string(),
            },
        });
        self.next += 1;
        self.nodes.len() - 1
    }

    fn join(&mut self, left: usize, right: usize, label: usize) -> usize {
        self.nodes.push(Node {
            start: self.nodes[left].start,
            end: self.nodes[right].end,
            gold: Some(label),
            kind: NodeKind::Internal { left, right },
        });
        self.nodes.len() - 1
    }

    fn label(&self, v: usize) -> usize {
        self.nodes[v].gold.unwrap()
    }

    fn pick(&mut self, words: &[&'static str]) -> &'static str {
        words.choose(self.rng).copied().unwrap()
    }

    /// Adjective phrase with up to `depth` stacked modifiers.
    fn adjp(&mut self, depth: usize) -> usize {
        if depth > 0 && self.rng.random_bool(0.55) {
            let negating = self.rng.random_bool(0.5);
            let word = self.pick(if negating { NEGATORS } else { INTENSIFIERS });
            let m = self.leaf(word, NEUTRAL);
            let inner = self.adjp(depth - 1);
            let l = self.label(inner);
            let label = if negating { negate(l) } else { intensify(l) };
            return self.join(m, inner, label);
        }
        let label = self.rng.random_range(0..4);
        let word = self.pick([STRONG_NEG, NEG, POS, STRONG_POS][label]);
        self.leaf(word, [0, 1, 3, 4][label])
    }

    fn clause(&mut self) -> usize {
        let det = self.pick(DETS);
        let d = self.leaf(det, NEUTRAL);
        let noun = self.pick(NOUNS);
        let n = self.leaf(noun, NEUTRAL);
        let np = self.join(d, n, NEUTRAL);
        let verb = self.pick(VERBS);
        let vb = self.leaf(verb, NEUTRAL);
        let adj = self.adjp(2);
        let vp_label = self.label(adj);
        let vp = self.join(vb, adj, vp_label);
        self.join(np, vp, vp_label)
    }

    fn sentence(&mut self) -> usize {
        let first = self.clause();
        if self.rng.random_bool(0.3) {
            let b = self.leaf(CONTRAST, NEUTRAL);
            let second = self.clause();
            let label = self.label(second);
            let tail = self.join(b, second, label);
            self.join(first, tail, label)
        } else {
            first
        }
    }
}

/// `count` random sentences, deterministic in `seed`.
pub fn generate(count: usize, seed: u64) -> Vec<LabeledTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut b = Builder {
                rng: &mut rng,
                nodes: Vec::new(),
                next: 0,
            };
            b.sentence();
            LabeledTree {
                nodes: b.nodes,
                classes: 5,
            }
        })
        .collect()
}

pub fn contains_negation(tree: &LabeledTree) -> bool {
    tree.tokens().iter().any(|t| NEGATORS.contains(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_ptb;

    #[test]
    fn trees_are_valid_and_deterministic() {
        let a = generate(200, 1);
        assert_eq!(a, generate(200, 1));
        for t in &a {
            t.validate().unwrap();
            assert_eq!(parse_ptb(&t.to_sexpr()).unwrap(), *t);
        }
        assert!(a.iter().any(contains_negation));
        assert!(a.iter().any(|t| t.tokens().contains(&CONTRAST)));
    }

    #[test]
    fn composition_rules() {
        assert_eq!(negate(intensify(3)), 1);
        assert_eq!(intensify(negate(0)), 4);
        assert_eq!(negate(NEUTRAL), NEUTRAL);
        let t = parse_ptb("(1 (2 (2 the) (2 film)) (1 (2 is) (1 (2 not) (3 good))))").unwrap();
        assert!(contains_negation(&t));
        assert!((40..=60).contains(&lexicon().len()));
    }
}
