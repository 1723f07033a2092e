//! Binary Tree-LSTM over a fixed constituency skeleton.
//!
//! Gates are stacked as `[i, f_l, f_r, o, g]`, each `hidden` rows, and read
//! the concatenated input `[x; h_l; h_r]`. Leaves see the word embedding with
//! zero child states; internal nodes see a zero input.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, sigmoid, Affine, Matrix};
use crate::treebank::{LabeledTree, NodeKind};

const GATES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `|V| x embed_dim`
    pub embedding: Matrix,
    /// `5*hidden x (embed_dim + 2*hidden)`
    pub w: Matrix,
    pub b: Vec<f64>,
    /// Per-node softmax head used by the baseline classifier.
    pub head: Affine,
    pub dropout: f64,
}

impl EncoderParams {
    pub fn init<R: Rng>(
        vocab_size: usize,
        embed_dim: usize,
        hidden: usize,
        classes: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let embedding = Matrix::uniform(vocab_size, embed_dim, 0.05, rng);
        let w = Matrix::xavier(GATES * hidden, embed_dim + 2 * hidden, rng);
        let head = Affine::xavier(classes, hidden, rng);
        EncoderParams {
            embedding,
            w,
            b: vec![0.0; GATES * hidden],
            head,
            dropout,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols
    }

    pub fn hidden(&self) -> usize {
        self.w.rows / GATES
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            embedding: Matrix::zeros(self.embedding.rows, self.embedding.cols),
            w: Matrix::zeros(self.w.rows, self.w.cols),
            b: vec![0.0; self.b.len()],
            head: Affine::zeros(self.head.out_dim(), self.head.in_dim()),
            dropout: self.dropout,
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let [hw, hb] = self.head.tensors();
        vec![&self.embedding.data, &self.w.data, &self.b, hw, hb]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let [hw, hb] = self.head.tensors_mut();
        vec![&mut self.embedding.data, &mut self.w.data, &mut self.b, hw, hb]
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub token: Option<usize>,
    /// Dropout-scaled embedding (leaves only; empty otherwise).
    pub x: Vec<f64>,
    /// Activated gates `[i, f_l, f_r, o, g]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    /// Inverted-dropout multipliers applied to `x` (empty when no dropout).
    pub mask: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderState {
    pub nodes: Vec<NodeState>,
    pub hidden: usize,
    children: Vec<Option<(usize, usize)>>,
}

impl EncoderState {
    pub fn hidden_states(&self) -> Vec<&[f64]> {
        self.nodes.iter().map(|n| n.h.as_slice()).collect()
    }

    fn gate<'a>(&self, node: &'a NodeState, k: usize) -> &'a [f64] {
        &node.gates[k * self.hidden..(k + 1) * self.hidden]
    }
}

pub fn forward(
    tree: &LabeledTree,
    ids: &[usize],
    params: &EncoderParams,
    mode: Mode,
    rng_seed: u64,
) -> EncoderState {
    let hidden = params.hidden();
    let embed = params.embed_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let keep = 1.0 - params.dropout;
    let dropout = mode == Mode::Train && params.dropout > 0.0;

    let mut nodes: Vec<NodeState> = Vec::with_capacity(tree.len());
    let mut children = Vec::with_capacity(tree.len());
    let mut input = vec![0.0; embed + 2 * hidden];
    for node in &tree.nodes {
        input.fill(0.0);
        let (token, x, mask) = match node.kind {
            NodeKind::Leaf { .. } => {
                let id = ids[node.start];
                let mut x = params.embedding.row(id).to_vec();
                let mut mask = Vec::new();
                if dropout {
                    mask = (0..embed)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    x.iter_mut().zip(&mask).for_each(|(xi, m)| *xi *= m);
                }
                input[..embed].copy_from_slice(&x);
                children.push(None);
                (Some(id), x, mask)
            }
            NodeKind::Internal { left, right } => {
                input[embed..embed + hidden].copy_from_slice(&nodes[left].h);
                input[embed + hidden..].copy_from_slice(&nodes[right].h);
                children.push(Some((left, right)));
                (None, Vec::new(), Vec::new())
            }
        };

        let mut gates = params.b.clone();
        params.w.gemv_acc(&input, &mut gates);
        for (k, g) in gates.iter_mut().enumerate() {
            *g = if k < 4 * hidden { sigmoid(*g) } else { g.tanh() };
        }

        let mut c = vec![0.0; hidden];
        for d in 0..hidden {
            c[d] = gates[d] * gates[4 * hidden + d];
        }
        if let NodeKind::Internal { left, right } = node.kind {
            for d in 0..hidden {
                c[d] += gates[hidden + d] * nodes[left].c[d] + gates[2 * hidden + d] * nodes[right].c[d];
            }
        }
        let h = (0..hidden)
            .map(|d| gates[3 * hidden + d] * c[d].tanh())
            .collect();
        nodes.push(NodeState {
            token,
            x,
            gates,
            c,
            h,
            mask,
        });
    }
    EncoderState {
        nodes,
        hidden,
        children,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    /// Touched embedding rows only.
    pub embedding: BTreeMap<usize, Vec<f64>>,
    pub w: Matrix,
    pub b: Vec<f64>,
    pub head: Affine,
}

impl EncoderGrads {
    pub fn zeros(params: &EncoderParams) -> Self {
        EncoderGrads {
            embedding: BTreeMap::new(),
            w: Matrix::zeros(params.w.rows, params.w.cols),
            b: vec![0.0; params.b.len()],
            head: Affine::zeros(params.head.out_dim(), params.head.in_dim()),
        }
    }

    pub fn add(&mut self, other: &EncoderGrads) {
        for (&id, row) in &other.embedding {
            let dst = self
                .embedding
                .entry(id)
                .or_insert_with(|| vec![0.0; row.len()]);
            axpy(1.0, row, dst);
        }
        axpy(1.0, &other.w.data, &mut self.w.data);
        axpy(1.0, &other.b, &mut self.b);
        axpy(1.0, &other.head.weight.data, &mut self.head.weight.data);
        axpy(1.0, &other.head.bias, &mut self.head.bias);
    }

    /// Add into dense parameter-shaped gradients.
    pub fn add_to_dense(&self, dense: &mut EncoderParams) {
        for (&id, row) in &self.embedding {
            axpy(1.0, row, dense.embedding.row_mut(id));
        }
        axpy(1.0, &self.w.data, &mut dense.w.data);
        axpy(1.0, &self.b, &mut dense.b);
        axpy(1.0, &self.head.weight.data, &mut dense.head.weight.data);
        axpy(1.0, &self.head.bias, &mut dense.head.bias);
    }
}

/// Reverse-mode pass through the Tree-LSTM for upstream gradients on every
/// node's `h` and `c`. Accumulates into `grads`.
pub fn backward_into(
    state: &EncoderState,
    grad_h: &[Vec<f64>],
    grad_c: &[Vec<f64>],
    params: &EncoderParams,
    grads: &mut EncoderGrads,
) -> Result<()> {
    let n = state.nodes.len();
    let hidden = state.hidden;
    let embed = params.embed_dim();
    if grad_h.len() != n || grad_c.len() != n {
        return Err(Error::Shape(format!(
            "expected {n} per-node gradients, got {} (h) and {} (c)",
            grad_h.len(),
            grad_c.len()
        )));
    }
    if grad_h.iter().chain(grad_c).any(|g| g.len() != hidden) {
        return Err(Error::Shape(format!("per-node gradients must have length {hidden}")));
    }

    let mut dh: Vec<Vec<f64>> = grad_h.to_vec();
    let mut dc: Vec<Vec<f64>> = grad_c.to_vec();
    let mut input = vec![0.0; embed + 2 * hidden];
    let mut dinput = vec![0.0; embed + 2 * hidden];
    let mut dpre = vec![0.0; GATES * hidden];

    for v in (0..n).rev() {
        let node = &state.nodes[v];
        let (i, fl, fr, o, g) = (
            state.gate(node, 0),
            state.gate(node, 1),
            state.gate(node, 2),
            state.gate(node, 3),
            state.gate(node, 4),
        );
        let children = state.children[v];
        let mut dc_total = std::mem::take(&mut dc[v]);
        let dh_v = &dh[v];
        for d in 0..hidden {
            let tc = node.c[d].tanh();
            dpre[3 * hidden + d] = dh_v[d] * tc * o[d] * (1.0 - o[d]);
            dc_total[d] += dh_v[d] * o[d] * (1.0 - tc * tc);
        }
        for d in 0..hidden {
            let dcd = dc_total[d];
            dpre[d] = dcd * g[d] * i[d] * (1.0 - i[d]);
            dpre[4 * hidden + d] = dcd * i[d] * (1.0 - g[d] * g[d]);
            match children {
                Some((l, r)) => {
                    let (cl, cr) = (state.nodes[l].c[d], state.nodes[r].c[d]);
                    dpre[hidden + d] = dcd * cl * fl[d] * (1.0 - fl[d]);
                    dpre[2 * hidden + d] = dcd * cr * fr[d] * (1.0 - fr[d]);
                }
                None => {
                    dpre[hidden + d] = 0.0;
                    dpre[2 * hidden + d] = 0.0;
                }
            }
        }

        input.fill(0.0);
        match children {
            Some((l, r)) => {
                input[embed..embed + hidden].copy_from_slice(&state.nodes[l].h);
                input[embed + hidden..].copy_from_slice(&state.nodes[r].h);
            }
            None => input[..embed].copy_from_slice(&node.x),
        }
        grads.w.add_outer(&dpre, &input);
        axpy(1.0, &dpre, &mut grads.b);
        dinput.fill(0.0);
        params.w.gemv_t_acc(&dpre, &mut dinput);

        match children {
            Some((l, r)) => {
                for d in 0..hidden {
                    dc[l][d] += dc_total[d] * fl[d];
                    dc[r][d] += dc_total[d] * fr[d];
                }
                axpy(1.0, &dinput[embed..embed + hidden], &mut dh[l]);
                axpy(1.0, &dinput[embed + hidden..], &mut dh[r]);
            }
            None => {
                let id = node.token.expect("leaf state carries its token id");
                let row = grads
                    .embedding
                    .entry(id)
                    .or_insert_with(|| vec![0.0; embed]);
                if node.mask.is_empty() {
                    axpy(1.0, &dinput[..embed], row);
                } else {
                    for ((r, dx), m) in row.iter_mut().zip(&dinput[..embed]).zip(&node.mask) {
                        *r += dx * m;
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn backward(
    state: &EncoderState,
    grad_h: &[Vec<f64>],
    grad_c: &[Vec<f64>],
    params: &EncoderParams,
) -> Result<EncoderGrads> {
    let mut grads = EncoderGrads::zeros(params);
    backward_into(state, grad_h, grad_c, params, &mut grads)?;
    Ok(grads)
}

/// Unnormalized per-node class scores from the baseline head.
pub fn baseline_logits(state: &EncoderState, params: &EncoderParams) -> Vec<Vec<f64>> {
    state.nodes.iter().map(|n| params.head.apply(&n.h)).collect()
}

/// Backpropagate per-node logit gradients through the baseline head.
/// Returns the per-node gradient on `h`.
pub fn baseline_backward(
    state: &EncoderState,
    grad_logits: &[Vec<f64>],
    params: &EncoderParams,
    grads: &mut EncoderGrads,
) -> Vec<Vec<f64>> {
    state
        .nodes
        .iter()
        .zip(grad_logits)
        .map(|(node, gl)| {
            let mut gh = vec![0.0; state.hidden];
            params.head.backward(&node.h, gl, &mut grads.head, &mut gh);
            gh
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_ptb;

    fn tiny_params(seed: u64, vocab: usize, embed: usize, hidden: usize) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = EncoderParams::init(vocab, embed, hidden, 3, 0.5, &mut rng);
        p.b = (0..p.b.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
        p
    }

    #[test]
    fn zero_params_fixed_point() {
        let tree = parse_ptb("(1 (2 a) (3 (0 b) (4 c)))").unwrap();
        let mut p = tiny_params(1, 5, 3, 4);
        p.embedding = Matrix::zeros(5, 3);
        p.w = Matrix::zeros(p.w.rows, p.w.cols);
        p.b.fill(0.0);
        let s = forward(&tree, &[2, 3, 4], &p, Mode::Eval, 0);
        for node in &s.nodes {
            for (k, &g) in node.gates.iter().enumerate() {
                let expect = if k < 16 { 0.5 } else { 0.0 };
                assert_eq!(g, expect);
            }
            assert!(node.c.iter().chain(&node.h).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn leaf_identities() {
        let tree = parse_ptb("(1 (2 a) (3 (0 b) (4 c)))").unwrap();
        let p = tiny_params(2, 5, 3, 4);
        let s = forward(&tree, &[2, 3, 4], &p, Mode::Eval, 0);
        for node in &s.nodes {
            for d in 0..4 {
                assert!((node.h[d] - node.gates[12 + d] * node.c[d].tanh()).abs() < 1e-15);
            }
            if node.token.is_some() {
                for d in 0..4 {
                    assert!((node.c[d] - node.gates[d] * node.gates[16 + d]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn dropout_is_seeded_and_eval_is_clean() {
        let tree = parse_ptb("(1 (2 a) (3 b))").unwrap();
        let p = tiny_params(3, 4, 6, 3);
        let a = forward(&tree, &[2, 3], &p, Mode::Train, 11);
        let b = forward(&tree, &[2, 3], &p, Mode::Train, 11);
        assert_eq!(a.nodes[2].h, b.nodes[2].h);
        let e = forward(&tree, &[2, 3], &p, Mode::Eval, 11);
        assert_eq!(e.nodes[0].x, p.embedding.row(2));
        assert!(a.nodes[0].mask.iter().all(|&m| m == 0.0 || m == 2.0));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let tree = parse_ptb("(1 (2 a) (3 b))").unwrap();
        let p = tiny_params(4, 4, 3, 3);
        let s = forward(&tree, &[2, 3], &p, Mode::Eval, 0);
        let zeros = vec![vec![0.0; 3]; 3];
        let g = backward(&s, &zeros, &zeros, &p).unwrap();
        assert!(g.w.data.iter().chain(&g.b).all(|&x| x == 0.0));
        assert!(g.embedding.values().flatten().all(|&x| x == 0.0));
        assert!(backward(&s, &zeros[..2], &zeros, &p).is_err());
    }

    #[test]
    fn baseline_head_is_affine() {
        let tree = parse_ptb("(1 (2 a) (3 b))").unwrap();
        let mut p = tiny_params(5, 4, 3, 3);
        p.head = Affine::zeros(3, 3);
        let s = forward(&tree, &[2, 3], &p, Mode::Eval, 0);
        assert!(baseline_logits(&s, &p).iter().flatten().all(|&x| x == 0.0));
        p.head.weight = Matrix {
            rows: 3,
            cols: 3,
            data: vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        };
        let logits = baseline_logits(&s, &p);
        for (node, l) in s.nodes.iter().zip(&logits) {
            assert_eq!(l[0], node.h[0]);
            assert_eq!(l[1], node.h[2]);
        }
    }
}
