//! Negative log conditional likelihood over gold labeled trees, analytic
//! gradients through the grammar layer and the encoder, Adam, and a
//! central-difference gradient check.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    backward_into, baseline_backward, baseline_logits, forward, EncoderGrads, EncoderParams,
    EncoderState, Mode,
};
use crate::error::{Error, Result};
use crate::gaussian::{floored_var, floored_var_grad, overlap_grad};
use crate::grammar::{init_grammar, DiscreteGrammar, GmGrammar, Grammar, GrammarKind, PolaritySet};
use crate::inference::{
    allowed, decode_mrp, emission_counts, emission_message, gold_constraint, inside_discrete,
    inside_gm, outside_discrete, outside_gm, rule_posteriors_discrete, rule_posteriors_gm,
    transition_counts, unconstrained, DiscreteChart, GmChart, GmOptions,
};
use crate::linalg::{log_softmax, Matrix};
use crate::oracle::rel_err;
use crate::treebank::{LabeledTree, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Per-node softmax over encoder states, no grammar layer.
    Baseline,
    Wg,
    Lvg,
    Lveg,
}

impl ModelKind {
    pub fn grammar_kind(self) -> Option<GrammarKind> {
        match self {
            ModelKind::Baseline => None,
            ModelKind::Wg => Some(GrammarKind::Wg),
            ModelKind::Lvg => Some(GrammarKind::Lvg),
            ModelKind::Lveg => Some(GrammarKind::Lveg),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Wg => "wg",
            ModelKind::Lvg => "lvg",
            ModelKind::Lveg => "lveg",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(ModelKind::Baseline),
            "wg" => Ok(ModelKind::Wg),
            "lvg" => Ok(ModelKind::Lvg),
            "lveg" => Ok(ModelKind::Lveg),
            other => Err(Error::config(
                "kind",
                format!("unknown model kind {other:?} (expected baseline, wg, lvg or lveg)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub classes: usize,
    pub subtypes: usize,
    pub dim: usize,
    pub components: usize,
    /// Component budget per Gaussian chart cell; `None` disables pruning.
    pub budget: Option<usize>,
    pub embed_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn polarity_set(&self) -> PolaritySet {
        PolaritySet {
            classes: self.classes,
            subtypes: if self.kind == ModelKind::Wg { 1 } else { self.subtypes },
            dim: self.dim,
            components: self.components,
        }
    }

    pub fn gm_options(&self) -> GmOptions {
        GmOptions {
            budget: self.budget,
        }
    }
}

/// Every trainable tensor of a model. Also used, with the same shapes, as
/// the dense gradient buffer for the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub encoder: EncoderParams,
    pub grammar: Option<Grammar>,
}

/// Gradients with exactly the shapes of [`Params`].
pub type ModelGrads = Params;

impl Params {
    pub fn init(config: &ModelConfig, vocab_size: usize) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = EncoderParams::init(
            vocab_size,
            config.embed_dim,
            config.hidden,
            config.classes,
            config.dropout,
            &mut rng,
        );
        let grammar = config.kind.grammar_kind().map(|kind| {
            init_grammar(config.polarity_set(), kind, config.hidden, rng.random())
        });
        Params { encoder, grammar }
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            encoder: self.encoder.zeros_like(),
            grammar: self.grammar.as_ref().map(Grammar::zeros_like),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.tensors();
        if let Some(g) = &self.grammar {
            out.extend(g.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.tensors_mut();
        if let Some(g) = &mut self.grammar {
            out.extend(g.tensors_mut());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// A tree paired with its token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tree: LabeledTree,
    pub ids: Vec<usize>,
}

impl Example {
    pub fn new(tree: LabeledTree, vocab: &Vocab) -> Example {
        let ids = vocab.encode(&tree);
        Example { tree, ids }
    }
}

/// `log Z - log score(gold)` for a grammar layer over fixed encodings.
/// Excluded nodes are summed over in the gold term.
pub fn nll_loss(tree: &LabeledTree, hs: &[&[f64]], grammar: &Grammar, options: GmOptions) -> f64 {
    match grammar {
        Grammar::Discrete(g) => {
            let z = inside_discrete(tree, hs, g, &unconstrained(tree)).log_z;
            let gold = inside_discrete(tree, hs, g, &gold_constraint(tree)).log_z;
            (z - gold).max(0.0)
        }
        Grammar::Gm(g) => {
            let z = inside_gm(tree, hs, g, &unconstrained(tree), options).log_z;
            let gold = inside_gm(tree, hs, g, &gold_constraint(tree), options).log_z;
            (z - gold).max(0.0)
        }
    }
}

/// Per-node softmax cross-entropy of the baseline head, summed over
/// non-excluded nodes.
pub fn baseline_loss(tree: &LabeledTree, logits: &[Vec<f64>]) -> f64 {
    tree.nodes
        .iter()
        .zip(logits)
        .filter_map(|(n, l)| n.gold.map(|y| -log_softmax(l)[y]))
        .sum()
}

fn require_outside(ok: bool, which: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("{which} chart has no outside pass")))
    }
}

fn add_discrete_expectations(
    tree: &LabeledTree,
    hs: &[&[f64]],
    chart: &DiscreteChart,
    g: &DiscreteGrammar,
    scale: f64,
    grads: &mut DiscreteGrammar,
    grad_h: &mut [Vec<f64>],
) {
    let n = g.subtypes;
    transition_counts(tree, chart, g, scale, &mut grads.lambda);
    for (v, counts) in emission_counts(chart).iter().enumerate() {
        for (pa, head) in g.heads.iter().enumerate() {
            let upstream: Vec<f64> = counts[pa * n..(pa + 1) * n].iter().map(|c| scale * c).collect();
            if upstream.iter().all(|&x| x == 0.0) {
                continue;
            }
            head.backward(hs[v], &upstream, &mut grads.heads[pa], &mut grad_h[v]);
        }
    }
}

/// Loss gradient for a discrete grammar from the unconstrained and
/// gold-constrained charts (both with outside scores). Grammar gradients are
/// added into `grads`; the returned vectors are the per-node gradients on
/// the encoder states.
pub fn backward_grammar_discrete(
    tree: &LabeledTree,
    hs: &[&[f64]],
    unconstrained: &DiscreteChart,
    gold: &DiscreteChart,
    g: &DiscreteGrammar,
    grads: &mut DiscreteGrammar,
) -> Result<Vec<Vec<f64>>> {
    require_outside(unconstrained.has_outside(), "unconstrained")?;
    require_outside(gold.has_outside(), "gold")?;
    let hidden = hs.first().map_or(0, |h| h.len());
    let mut grad_h = vec![vec![0.0; hidden]; tree.len()];
    add_discrete_expectations(tree, hs, unconstrained, g, 1.0, grads, &mut grad_h);
    add_discrete_expectations(tree, hs, gold, g, -1.0, grads, &mut grad_h);
    Ok(grad_h)
}

fn add_gm_expectations(
    tree: &LabeledTree,
    hs: &[&[f64]],
    chart: &GmChart,
    g: &GmGrammar,
    scale: f64,
    grads: &mut GmGrammar,
    grad_h: &mut [Vec<f64>],
) {
    let (k, d) = (g.classes, g.dim);
    let blocks = g.blocks();

    for (v, node) in tree.nodes.iter().enumerate() {
        // Emission side: d log Z / d e_v^A = inner * outer.
        for pa in 0..k {
            if !allowed(chart.constraint[v], pa) {
                continue;
            }
            let msg = emission_message(chart, v, pa);
            for (j, head) in g.heads[pa].iter().enumerate() {
                let log_rho = head.rho.apply(hs[v])[0];
                let mean = head.mu.apply(hs[v]);
                let log_var = head.var.apply(hs[v]);
                let var: Vec<f64> = log_var.iter().map(|&l| floored_var(l)).collect();
                let og = overlap_grad(&mean, &var, msg.as_ref());
                let w = scale * (log_rho + og.log_mass - chart.log_z).exp();
                if w == 0.0 {
                    continue;
                }
                let hg = &mut grads.heads[pa][j];
                head.rho.backward(hs[v], &[w], &mut hg.rho, &mut grad_h[v]);
                let g_mu: Vec<f64> = og.d_mean.iter().map(|x| w * x).collect();
                head.mu.backward(hs[v], &g_mu, &mut hg.mu, &mut grad_h[v]);
                let g_lv: Vec<f64> = (0..d)
                    .map(|i| w * og.d_var[i] * floored_var_grad(log_var[i]))
                    .collect();
                head.var.backward(hs[v], &g_lv, &mut hg.var, &mut grad_h[v]);
            }
        }

        // Transition side: one posterior weight per rule component.
        let Some((l, r)) = node.children() else {
            continue;
        };
        for pa in 0..k {
            if !allowed(chart.constraint[v], pa) {
                continue;
            }
            for pb in 0..k {
                if !allowed(chart.constraint[l], pb) {
                    continue;
                }
                for pc in 0..k {
                    if !allowed(chart.constraint[r], pc) {
                        continue;
                    }
                    let t = g.triple(pa, pb, pc);
                    let msgs = [&chart.outside[v][pa], &chart.inside[l][pb], &chart.inside[r][pc]];
                    for (comp, gc) in g.rules[t].iter().zip(grads.rules[t].iter_mut()) {
                        let var: Vec<f64> = comp.log_var.iter().map(|&x| floored_var(x)).collect();
                        let parts: Vec<_> = (0..3)
                            .map(|b| {
                                let rg = blocks.range(b);
                                overlap_grad(&comp.mean[rg.clone()], &var[rg], Some(msgs[b]))
                            })
                            .collect();
                        let log_t = comp.log_rho + parts.iter().map(|p| p.log_mass).sum::<f64>();
                        let w = scale * (log_t - chart.log_z).exp();
                        if w == 0.0 || !w.is_finite() {
                            continue;
                        }
                        gc.log_rho += w;
                        for (b, p) in parts.iter().enumerate() {
                            for (i, idx) in blocks.range(b).enumerate() {
                                gc.mean[idx] += w * p.d_mean[i];
                                gc.log_var[idx] += w * p.d_var[i] * floored_var_grad(comp.log_var[idx]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Loss gradient for a Gaussian-mixture grammar; same contract as
/// [`backward_grammar_discrete`]. Both charts must use the same pruning
/// budget.
pub fn backward_grammar_gm(
    tree: &LabeledTree,
    hs: &[&[f64]],
    unconstrained: &GmChart,
    gold: &GmChart,
    g: &GmGrammar,
    grads: &mut GmGrammar,
) -> Result<Vec<Vec<f64>>> {
    require_outside(unconstrained.has_outside(), "unconstrained")?;
    require_outside(gold.has_outside(), "gold")?;
    if unconstrained.options != gold.options {
        return Err(Error::Unsupported(format!(
            "pruning differs between passes ({:?} vs {:?})",
            unconstrained.options.budget, gold.options.budget
        )));
    }
    let hidden = hs.first().map_or(0, |h| h.len());
    let mut grad_h = vec![vec![0.0; hidden]; tree.len()];
    add_gm_expectations(tree, hs, unconstrained, g, 1.0, grads, &mut grad_h);
    add_gm_expectations(tree, hs, gold, g, -1.0, grads, &mut grad_h);
    Ok(grad_h)
}

/// Gradients of one or more sentences, with sparse embedding rows.
#[derive(Debug, Clone)]
pub struct SentenceGrads {
    pub encoder: EncoderGrads,
    pub grammar: Option<Grammar>,
}

impl SentenceGrads {
    pub fn zeros(params: &Params) -> Self {
        SentenceGrads {
            encoder: EncoderGrads::zeros(&params.encoder),
            grammar: params.grammar.as_ref().map(Grammar::zeros_like),
        }
    }

    pub fn add(&mut self, other: &SentenceGrads) {
        self.encoder.add(&other.encoder);
        if let (Some(dst), Some(src)) = (&mut self.grammar, &other.grammar) {
            for (d, s) in dst.tensors_mut().into_iter().zip(src.tensors()) {
                for (x, y) in d.iter_mut().zip(s) {
                    *x += y;
                }
            }
        }
    }

    /// Dense, parameter-shaped copy.
    pub fn to_dense(&self, params: &Params) -> ModelGrads {
        let mut dense = params.zeros_like();
        self.encoder.add_to_dense(&mut dense.encoder);
        dense.grammar = self.grammar.clone();
        dense
    }
}

fn grammar_loss_and_grad_h(
    tree: &LabeledTree,
    hs: &[&[f64]],
    grammar: &Grammar,
    options: GmOptions,
    grads: &mut Grammar,
) -> Result<(f64, Vec<Vec<f64>>)> {
    match (grammar, grads) {
        (Grammar::Discrete(g), Grammar::Discrete(gg)) => {
            let mut unc = inside_discrete(tree, hs, g, &unconstrained(tree));
            let mut gold = inside_discrete(tree, hs, g, &gold_constraint(tree));
            outside_discrete(tree, &mut unc, g);
            outside_discrete(tree, &mut gold, g);
            let grad_h = backward_grammar_discrete(tree, hs, &unc, &gold, g, gg)?;
            Ok(((unc.log_z - gold.log_z).max(0.0), grad_h))
        }
        (Grammar::Gm(g), Grammar::Gm(gg)) => {
            let mut unc = inside_gm(tree, hs, g, &unconstrained(tree), options);
            let mut gold = inside_gm(tree, hs, g, &gold_constraint(tree), options);
            outside_gm(tree, &mut unc, g);
            outside_gm(tree, &mut gold, g);
            let grad_h = backward_grammar_gm(tree, hs, &unc, &gold, g, gg)?;
            Ok(((unc.log_z - gold.log_z).max(0.0), grad_h))
        }
        _ => Err(Error::Shape("gradient buffer does not match grammar kind".into())),
    }
}

fn check_tree(tree: &LabeledTree, ids: &[usize], params: &Params, config: &ModelConfig) -> Result<()> {
    if tree.classes != config.classes {
        return Err(Error::Shape(format!(
            "tree has {} classes but the model has {}",
            tree.classes, config.classes
        )));
    }
    if ids.len() != tree.num_tokens() {
        return Err(Error::Shape(format!(
            "{} token ids for {} tokens",
            ids.len(),
            tree.num_tokens()
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= params.encoder.embedding.rows) {
        return Err(Error::Shape(format!("token id {bad} outside the vocabulary")));
    }
    Ok(())
}

/// Forward and backward for one sentence. Adds into `grads` and returns
/// the sentence loss.
pub fn sentence_step(
    params: &Params,
    config: &ModelConfig,
    example: &Example,
    mode: Mode,
    dropout_seed: u64,
    grads: &mut SentenceGrads,
) -> Result<f64> {
    let tree = &example.tree;
    check_tree(tree, &example.ids, params, config)?;
    let state = forward(tree, &example.ids, &params.encoder, mode, dropout_seed);
    let hs = state.hidden_states();
    let (loss, grad_h) = match (&params.grammar, &mut grads.grammar) {
        (Some(g), Some(gg)) => grammar_loss_and_grad_h(tree, &hs, g, config.gm_options(), gg)?,
        (None, _) => {
            let logits = baseline_logits(&state, &params.encoder);
            let loss = baseline_loss(tree, &logits);
            let grad_logits: Vec<Vec<f64>> = tree
                .nodes
                .iter()
                .zip(&logits)
                .map(|(n, l)| match n.gold {
                    Some(y) => {
                        let mut p: Vec<f64> = log_softmax(l).into_iter().map(f64::exp).collect();
                        p[y] -= 1.0;
                        p
                    }
                    None => vec![0.0; l.len()],
                })
                .collect();
            let gh = baseline_backward(&state, &grad_logits, &params.encoder, &mut grads.encoder);
            (loss, gh)
        }
        (Some(_), None) => return Err(Error::Shape("missing grammar gradient buffer".into())),
    };
    let grad_c = vec![vec![0.0; state.hidden]; tree.len()];
    backward_into(&state, &grad_h, &grad_c, &params.encoder, &mut grads.encoder)?;
    Ok(loss)
}

/// Loss of one sentence without gradients.
pub fn sentence_loss(
    params: &Params,
    config: &ModelConfig,
    example: &Example,
    mode: Mode,
    dropout_seed: u64,
) -> Result<f64> {
    check_tree(&example.tree, &example.ids, params, config)?;
    let state = forward(&example.tree, &example.ids, &params.encoder, mode, dropout_seed);
    Ok(match &params.grammar {
        Some(g) => nll_loss(&example.tree, &state.hidden_states(), g, config.gm_options()),
        None => baseline_loss(&example.tree, &baseline_logits(&state, &params.encoder)),
    })
}

/// Encode a sentence in evaluation mode.
pub fn encode(params: &Params, example: &Example) -> EncoderState {
    forward(&example.tree, &example.ids, &params.encoder, Mode::Eval, 0)
}

/// Predicted polarity of every node: max-rule-product for grammar models,
/// per-node argmax for the baseline.
pub fn predict(params: &Params, config: &ModelConfig, example: &Example) -> Vec<usize> {
    let state = encode(params, example);
    let tree = &example.tree;
    let hs = state.hidden_states();
    match &params.grammar {
        Some(Grammar::Discrete(g)) => {
            let mut chart = inside_discrete(tree, &hs, g, &unconstrained(tree));
            outside_discrete(tree, &mut chart, g);
            decode_mrp(&rule_posteriors_discrete(tree, &chart, g), tree)
        }
        Some(Grammar::Gm(g)) => {
            let mut chart = inside_gm(tree, &hs, g, &unconstrained(tree), config.gm_options());
            outside_gm(tree, &mut chart, g);
            decode_mrp(&rule_posteriors_gm(tree, &chart, g), tree)
        }
        None => baseline_logits(&state, &params.encoder)
            .iter()
            .map(|l| {
                (0..l.len()).fold(0, |best, a| if l[a] > l[best] { a } else { best })
            })
            .collect(),
    }
}

/// Exact MAP labeling under a weighted grammar (one subtype per polarity).
pub fn predict_map_wg(params: &Params, example: &Example) -> Result<Vec<usize>> {
    let Some(Grammar::Discrete(g)) = &params.grammar else {
        return Err(Error::Unsupported("MAP decoding needs a weighted grammar".into()));
    };
    let state = encode(params, example);
    crate::inference::decode_map_wg(&example.tree, &state.hidden_states(), g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(params: &Params, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Applied,
    /// The gradient had a NaN or infinite entry; nothing was changed.
    SkippedNonFinite,
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut Params, grads: &ModelGrads, state: &mut AdamState) -> Result<StepStatus> {
    let shapes = |p: &Params| p.tensors().iter().map(|t| t.len()).collect::<Vec<_>>();
    let expected = shapes(params);
    if shapes(grads) != expected || state.m.iter().map(Vec::len).collect::<Vec<_>>() != expected {
        return Err(Error::Shape("gradient or optimizer state does not match parameters".into()));
    }
    if !grads.is_finite() {
        return Ok(StepStatus::SkippedNonFinite);
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(StepStatus::Applied)
}

/// Rescale `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 32,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
    pub skipped_steps: usize,
    pub seconds: f64,
}

/// Sentences handled by one worker before its partial sum is merged. Fixed
/// so the reduction order, and thus the result, does not depend on the
/// number of threads.
const CHUNK: usize = 4;

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.random::<u64>() ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Summed loss and gradients of a batch.
pub fn batch_gradients(
    params: &Params,
    config: &ModelConfig,
    batch: &[(usize, &Example)],
    seed: u64,
) -> Result<(f64, SentenceGrads)> {
    let partials: Vec<Result<(f64, SentenceGrads)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = SentenceGrads::zeros(params);
            let mut loss = 0.0;
            for &(index, ex) in chunk {
                loss += sentence_step(params, config, ex, Mode::Train, mix_seed(seed, index as u64, 1), &mut grads)
                    .map_err(|e| Error::Sentence {
                        index,
                        source: Box::new(e),
                    })?;
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = SentenceGrads::zeros(params);
    let mut loss = 0.0;
    for p in partials {
        let (l, g) = p?;
        loss += l;
        total.add(&g);
    }
    Ok((loss, total))
}

/// One pass over `dataset` in seeded random order with one optimizer step
/// per mini-batch.
pub fn train_epoch(
    dataset: &[Example],
    params: &mut Params,
    config: &ModelConfig,
    adam: &mut AdamState,
    options: &TrainOptions,
    epoch: usize,
) -> Result<EpochMetrics> {
    if dataset.is_empty() {
        return Err(Error::Unsupported("empty training set".into()));
    }
    let start = Instant::now();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(options.seed, epoch as u64, 0));
    order.shuffle(&mut rng);

    let mut total_loss = 0.0;
    let (mut steps, mut skipped) = (0, 0);
    for (b, idx) in order.chunks(options.batch_size.max(1)).enumerate() {
        let batch: Vec<(usize, &Example)> = idx.iter().map(|&i| (i, &dataset[i])).collect();
        let batch_seed = mix_seed(options.seed, epoch as u64, b as u64 + 1);
        let (loss, grads) = batch_gradients(params, config, &batch, batch_seed)?;
        total_loss += loss;
        let mut dense = grads.to_dense(params);
        clip_global_norm(&mut dense, options.clip_norm);
        match adam_step(params, &dense, adam)? {
            StepStatus::Applied => steps += 1,
            StepStatus::SkippedNonFinite => skipped += 1,
        }
    }
    Ok(EpochMetrics {
        epoch,
        mean_loss: total_loss / dataset.len() as f64,
        steps,
        skipped_steps: skipped,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Per-epoch training metrics and, when a dev set is given, dev scores.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub metrics: EpochMetrics,
    pub dev: Option<crate::eval::EvalReport>,
}

/// Train for `epochs` epochs and return the parameters with the best dev
/// root accuracy (earliest on ties), or the final ones without a dev set.
pub fn fit(
    train: &[Example],
    dev: Option<&[Example]>,
    params: &mut Params,
    config: &ModelConfig,
    lr: f64,
    options: &TrainOptions,
    epochs: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Params, Vec<EpochRecord>)> {
    let mut adam = AdamState::new(params, lr);
    let mut best: Option<(f64, Params)> = None;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let metrics = train_epoch(train, params, config, &mut adam, options, epoch)?;
        let dev = dev.map(|d| crate::eval::evaluate(params, config, d)).transpose()?;
        if let Some(r) = &dev {
            if best.as_ref().is_none_or(|(acc, _)| r.root_accuracy() > *acc) {
                best = Some((r.root_accuracy(), params.clone()));
            }
        }
        let record = EpochRecord { metrics, dev };
        on_epoch(&record);
        history.push(record);
    }
    let chosen = best.map_or_else(|| params.clone(), |(_, p)| p);
    Ok((chosen, history))
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub kind: ModelKind,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// `(tensor, offset, analytic, numeric)` for coordinates over tolerance.
    pub failures: Vec<(usize, usize, f64, f64)>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Denominator floor for relative gradient errors, so coordinates whose
/// true gradient is zero are judged on an absolute scale.
pub const GRAD_REL_FLOOR: f64 = 1e-6;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Compare every analytic gradient coordinate of `example`'s loss with a
/// central difference.
pub fn check_gradients(
    params: &Params,
    config: &ModelConfig,
    example: &Example,
    tolerance: f64,
) -> Result<GradReport> {
    let seed = 7;
    let mut grads = SentenceGrads::zeros(params);
    sentence_step(params, config, example, Mode::Train, seed, &mut grads)?;
    let analytic = grads.to_dense(params);
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();

    let mut probe = params.clone();
    let mut report = GradReport {
        kind: config.kind,
        coordinates: 0,
        max_rel_err: 0.0,
        tolerance,
        failures: Vec::new(),
    };
    for (ti, tensor) in analytic.iter().enumerate() {
        for (i, &a) in tensor.iter().enumerate() {
            let orig = probe.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = orig + FD_STEP;
            let up = sentence_loss(&probe, config, example, Mode::Train, seed)?;
            probe.tensors_mut()[ti][i] = orig - FD_STEP;
            let down = sentence_loss(&probe, config, example, Mode::Train, seed)?;
            probe.tensors_mut()[ti][i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = rel_err(a, numeric, GRAD_REL_FLOOR);
            report.coordinates += 1;
            report.max_rel_err = report.max_rel_err.max(err);
            if !(err <= tolerance) {
                report.failures.push((ti, i, a, numeric));
            }
        }
    }
    Ok(report)
}

/// A small random model and tree for gradient verification: hidden size 4,
/// up to 3 classes and 5 tokens, pruning off.
pub fn gradcheck_case(kind: ModelKind, seed: u64) -> (Params, ModelConfig, Example) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(2..=3);
    let config = ModelConfig {
        kind,
        classes,
        subtypes: if kind == ModelKind::Lvg { rng.random_range(2..=3) } else { 1 },
        dim: 2,
        components: rng.random_range(1..=2),
        budget: None,
        embed_dim: 3,
        hidden: 4,
        dropout: 0.5,
        seed,
    };
    let vocab_size = 8;
    let mut params = Params::init(&config, vocab_size);
    // Spread the parameters so no group sits at a degenerate point.
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    params.encoder.embedding = Matrix::uniform(vocab_size, config.embed_dim, 1.0, &mut rng);
    let tokens = rng.random_range(1..=5);
    let mut tree = crate::oracle::random_tree(&mut rng, tokens, classes);
    if tree.len() > 2 {
        let v = rng.random_range(0..tree.len() - 1);
        tree.nodes[v].gold = None;
    }
    let ids = (0..tokens).map(|_| rng.random_range(1..vocab_size)).collect();
    (params, config, Example { tree, ids })
}

/// Gradient check of a freshly drawn small configuration.
pub fn finite_diff_check(kind: ModelKind, seed: u64, tolerance: f64) -> Result<GradReport> {
    let (params, config, example) = gradcheck_case(kind, seed);
    check_gradients(&params, &config, &example, tolerance)
}
