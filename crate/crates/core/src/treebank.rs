//! SST-style labeled binary trees, task label mappings, vocabularies and
//! pretrained vectors.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Label written for nodes excluded from loss and evaluation.
pub const EXCLUDED_MARK: &str = "_";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Leaf { token: String },
    Internal { left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    /// First token index covered (inclusive).
    pub start: usize,
    /// Last token index covered (inclusive).
    pub end: usize,
    /// Gold polarity; `None` marks a node excluded from loss and accuracy.
    pub gold: Option<usize>,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    pub fn children(&self) -> Option<(usize, usize)> {
        match self.kind {
            NodeKind::Internal { left, right } => Some((left, right)),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn span_len(&self) -> usize {
        self.end - self.start + 1
    }
}

/// A binary constituency skeleton with a label on every node.
///
/// Nodes are stored in post-order: children always precede their parent and
/// the root is the last node. Leaves appear in token order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTree {
    pub nodes: Vec<Node>,
    /// Size of the label space the gold labels live in (5 or 2).
    pub classes: usize,
}

impl LabeledTree {
    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.nodes[self.root()].end + 1
    }

    pub fn tokens(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::Leaf { token } => Some(token.as_str()),
                NodeKind::Internal { .. } => None,
            })
            .collect()
    }

    /// Parent index of every node (`None` for the root).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = vec![None; self.nodes.len()];
        for (v, node) in self.nodes.iter().enumerate() {
            if let Some((l, r)) = node.children() {
                parents[l] = Some(v);
                parents[r] = Some(v);
            }
        }
        parents
    }

    /// Distance from each node to the deepest leaf below it; leaves are 0.
    pub fn heights(&self) -> Vec<usize> {
        let mut heights = vec![0; self.nodes.len()];
        for (v, node) in self.nodes.iter().enumerate() {
            if let Some((l, r)) = node.children() {
                heights[v] = 1 + heights[l].max(heights[r]);
            }
        }
        heights
    }

    pub fn phrase_text(&self, v: usize) -> String {
        let node = &self.nodes[v];
        self.tokens()[node.start..=node.end].join(" ")
    }

    /// Copy of the tree with every node relabeled.
    pub fn with_labels(&self, labels: &[usize]) -> LabeledTree {
        let mut out = self.clone();
        for (node, &l) in out.nodes.iter_mut().zip(labels) {
            node.gold = Some(l);
        }
        out
    }

    pub fn to_sexpr(&self) -> String {
        let mut out = String::new();
        self.write_node(self.root(), &mut out);
        out
    }

    fn write_node(&self, v: usize, out: &mut String) {
        let node = &self.nodes[v];
        out.push('(');
        match node.gold {
            Some(l) => write!(out, "{l}").unwrap(),
            None => out.push_str(EXCLUDED_MARK),
        }
        match &node.kind {
            NodeKind::Leaf { token } => {
                out.push(' ');
                out.push_str(token);
            }
            NodeKind::Internal { left, right } => {
                out.push(' ');
                self.write_node(*left, out);
                out.push(' ');
                self.write_node(*right, out);
            }
        }
        out.push(')');
    }

    /// Check the structural invariants of a tree.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Parse("empty tree".into()));
        }
        let mut next_token = 0;
        for (v, node) in self.nodes.iter().enumerate() {
            if let Some(l) = node.gold {
                if l >= self.classes {
                    return Err(Error::Parse(format!(
                        "label {l} outside 0..{}",
                        self.classes
                    )));
                }
            }
            match node.kind {
                NodeKind::Leaf { .. } => {
                    if node.start != next_token || node.end != next_token {
                        return Err(Error::Parse(format!("leaf {v} has inconsistent span")));
                    }
                    next_token += 1;
                }
                NodeKind::Internal { left, right } => {
                    if left >= v || right >= v {
                        return Err(Error::Parse(format!("node {v} not in post-order")));
                    }
                    let (l, r) = (&self.nodes[left], &self.nodes[right]);
                    if l.start != node.start || r.end != node.end || l.end + 1 != r.start {
                        return Err(Error::Parse(format!(
                            "children of node {v} do not partition its span"
                        )));
                    }
                }
            }
        }
        let root = &self.nodes[self.root()];
        if root.start != 0 || root.end + 1 != next_token {
            return Err(Error::Parse("root does not span the sentence".into()));
        }
        Ok(())
    }
}

#[derive(Debug, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn lex(line: &str) -> Vec<Tok<'_>> {
    let mut toks = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match ch {
            '(' | ')' => {
                if let Some(s) = start.take() {
                    toks.push(Tok::Atom(&line[s..i]));
                }
                toks.push(if ch == '(' { Tok::Open } else { Tok::Close });
            }
            c if c.is_whitespace() => {
                if let Some(s) = start.take() {
                    toks.push(Tok::Atom(&line[s..i]));
                }
            }
            _ => {
                if start.is_none() {
                    start = Some(i);
                }
            }
        }
    }
    if let Some(s) = start {
        toks.push(Tok::Atom(&line[s..]));
    }
    toks
}

struct Reader<'a> {
    toks: Vec<Tok<'a>>,
    pos: usize,
    nodes: Vec<Node>,
    next_token: usize,
}

impl<'a> Reader<'a> {
    fn expect_open(&mut self) -> Result<()> {
        match self.toks.get(self.pos) {
            Some(Tok::Open) => {
                self.pos += 1;
                Ok(())
            }
            Some(Tok::Close) => Err(Error::Parse("unbalanced parentheses: unexpected ')'".into())),
            Some(Tok::Atom(a)) => Err(Error::Parse(format!("expected '(' before `{a}`"))),
            None => Err(Error::Parse("unbalanced parentheses: unexpected end of input".into())),
        }
    }

    fn node(&mut self) -> Result<usize> {
        self.expect_open()?;
        let gold = match self.toks.get(self.pos) {
            Some(Tok::Atom(a)) if *a == EXCLUDED_MARK => None,
            Some(Tok::Atom(a)) => Some(
                a.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("non-integer label `{a}`")))?,
            ),
            Some(_) => return Err(Error::Parse("missing label".into())),
            None => return Err(Error::Parse("unbalanced parentheses: unexpected end of input".into())),
        };
        self.pos += 1;

        if let Some(Tok::Atom(word)) = self.toks.get(self.pos) {
            self.pos += 1;
            match self.toks.get(self.pos) {
                Some(Tok::Close) => self.pos += 1,
                None => {
                    return Err(Error::Parse(
                        "unbalanced parentheses: unexpected end of input".into(),
                    ))
                }
                Some(_) => {
                    return Err(Error::Parse(format!(
                        "leaf `{word}` must hold exactly one terminal"
                    )))
                }
            }
            let k = self.next_token;
            self.next_token += 1;
            self.nodes.push(Node {
                start: k,
                end: k,
                gold,
                kind: NodeKind::Leaf {
                    token: word.to_string(),
                },
            });
            return Ok(self.nodes.len() - 1);
        }

        let mut children = Vec::with_capacity(2);
        loop {
            match self.toks.get(self.pos) {
                Some(Tok::Close) => {
                    self.pos += 1;
                    break;
                }
                Some(Tok::Open) => children.push(self.node()?),
                Some(Tok::Atom(a)) => {
                    return Err(Error::Parse(format!(
                        "terminal `{a}` mixed with subtrees"
                    )))
                }
                None => {
                    return Err(Error::Parse(
                        "unbalanced parentheses: unexpected end of input".into(),
                    ))
                }
            }
        }
        if children.len() != 2 {
            return Err(Error::Parse(format!(
                "internal node with {} children (expected 2)",
                children.len()
            )));
        }
        let (left, right) = (children[0], children[1]);
        self.nodes.push(Node {
            start: self.nodes[left].start,
            end: self.nodes[right].end,
            gold,
            kind: NodeKind::Internal { left, right },
        });
        Ok(self.nodes.len() - 1)
    }
}

/// Parse one SST s-expression such as `(3 (2 A) (4 B))`.
pub fn parse_ptb(line: &str) -> Result<LabeledTree> {
    parse_with_classes(line, 5)
}

pub fn parse_with_classes(line: &str, classes: usize) -> Result<LabeledTree> {
    let toks = lex(line);
    if toks.is_empty() {
        return Err(Error::Parse("empty input".into()));
    }
    let mut reader = Reader {
        toks,
        pos: 0,
        nodes: Vec::new(),
        next_token: 0,
    };
    reader.node()?;
    if reader.pos != reader.toks.len() {
        return Err(Error::Parse(
            "unbalanced parentheses: trailing input after tree".into(),
        ));
    }
    let tree = LabeledTree {
        nodes: reader.nodes,
        classes,
    };
    tree.validate()?;
    Ok(tree)
}

/// Read a tree file, one s-expression per non-blank line.
pub fn read_trees(path: impl AsRef<Path>, classes: usize) -> Result<Vec<LabeledTree>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_with_classes(l, classes).map_err(|e| Error::Data {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Class count and label mapping of a classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub classes: usize,
    pub drop_neutral_root: bool,
    pub exclude_neutral_nodes: bool,
}

impl TaskSpec {
    pub fn sst5() -> Self {
        TaskSpec {
            classes: 5,
            drop_neutral_root: false,
            exclude_neutral_nodes: false,
        }
    }

    pub fn sst2() -> Self {
        TaskSpec {
            classes: 2,
            drop_neutral_root: true,
            exclude_neutral_nodes: true,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sst5" => Ok(Self::sst5()),
            "sst2" => Ok(Self::sst2()),
            other => Err(Error::config("task", format!("unknown task `{other}`"))),
        }
    }

    /// Map a five-way label to this task; `None` means neutral.
    pub fn map_label(&self, label: usize) -> Option<usize> {
        if self.classes == 5 {
            return Some(label);
        }
        match label {
            0 | 1 => Some(0),
            3 | 4 => Some(1),
            _ => None,
        }
    }
}

/// Apply a task's label mapping. Returns `None` when the sentence is dropped.
pub fn to_binary_task(tree: &LabeledTree, spec: &TaskSpec) -> Option<LabeledTree> {
    if tree.classes == spec.classes {
        return Some(tree.clone());
    }
    let mut out = tree.clone();
    out.classes = spec.classes;
    for node in &mut out.nodes {
        node.gold = node.gold.and_then(|l| spec.map_label(l));
    }
    if spec.drop_neutral_root && out.nodes[out.root()].gold.is_none() {
        return None;
    }
    Some(out)
}

/// Prepare a corpus for a task, dropping sentences the task excludes.
pub fn prepare_corpus(trees: &[LabeledTree], spec: &TaskSpec) -> Vec<LabeledTree> {
    trees.iter().filter_map(|t| to_binary_task(t, spec)).collect()
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(content: impl IntoIterator<Item = String>) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(content);
        let mut vocab = Vocab {
            tokens,
            index: HashMap::new(),
        };
        vocab.reindex();
        vocab
    }

    /// Rebuild the lookup table, e.g. after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tree: &LabeledTree) -> Vec<usize> {
        tree.tokens().iter().map(|t| self.lookup(t)).collect()
    }
}

/// Build a vocabulary ordered by descending frequency, then lexicographically.
pub fn build_vocab<'a>(
    corpus: impl IntoIterator<Item = &'a LabeledTree>,
    min_count: usize,
) -> Result<Vocab> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut seen_any = false;
    for tree in corpus {
        seen_any = true;
        for tok in tree.tokens() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if !seen_any {
        return Err(Error::Parse("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut entries: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocab::from_tokens(entries.into_iter().map(|(t, _)| t.to_string())))
}

/// Load whitespace-separated `token v1 .. vD` vectors for the vocabulary.
/// Rows absent from the file are drawn from uniform(-0.05, 0.05); the PAD row is zero.
pub fn load_embeddings<R: Rng>(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    dim: usize,
    rng: &mut R,
) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut matrix = Matrix::uniform(vocab.len(), dim, 0.05, rng);
    matrix.row_mut(PAD_ID).fill(0.0);
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Data {
                line: i + 1,
                message: format!("bad vector value: {e}"),
            })?;
        if values.len() != dim {
            return Err(Error::Data {
                line: i + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        if let Some(&id) = vocab.index.get(token) {
            matrix.row_mut(id).copy_from_slice(&values);
        }
    }
    Ok(matrix)
}
