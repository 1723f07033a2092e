//! Parameter stores for weighted, latent-variable and Gaussian-mixture
//! latent-vector sentiment grammars, and evaluation of their rule weights.
//!
//! Every grammar is complete: each polarity triple `(A, B, C)` has a
//! transition rule and each polarity has an emission rule for every span.
//! Weights are exp-parameterized, so they are strictly positive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::gaussian::{floored_var, Blocks, Component, GaussianMixture};
use crate::linalg::{Affine, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrammarKind {
    Wg,
    Lvg,
    Lveg,
}

/// Polarity inventory with a uniform refinement per polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolaritySet {
    pub classes: usize,
    /// Discrete subtypes per polarity (1 for a plain weighted grammar).
    pub subtypes: usize,
    /// Latent vector dimension per polarity (Gaussian-mixture grammars).
    pub dim: usize,
    /// Mixture components per rule (Gaussian-mixture grammars).
    pub components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteGrammar {
    pub classes: usize,
    pub subtypes: usize,
    /// Log transition weights, laid out as `[A][B][C][a][b][c]`.
    pub lambda: Vec<f64>,
    /// Emission head `f_A: R^hidden -> R^subtypes` per polarity.
    pub heads: Vec<Affine>,
}

impl DiscreteGrammar {
    #[inline]
    pub fn triple(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.classes + b) * self.classes + c
    }

    /// Offset of the `n^3` block of triple `(A, B, C)` in `lambda`.
    #[inline]
    pub fn block(&self, a: usize, b: usize, c: usize) -> usize {
        self.triple(a, b, c) * self.subtypes.pow(3)
    }

    #[inline]
    pub fn log_weight(&self, rule: (usize, usize, usize), sub: (usize, usize, usize)) -> f64 {
        let n = self.subtypes;
        self.lambda[self.block(rule.0, rule.1, rule.2) + (sub.0 * n + sub.1) * n + sub.2]
    }

    /// Log emission weights `f_A(h)`, one per subtype.
    pub fn emission_log(&self, h: &[f64], polarity: usize) -> Vec<f64> {
        self.heads[polarity].apply(h)
    }

    /// Emission weights `exp(f_A(h))`.
    pub fn emission_discrete(&self, h: &[f64], polarity: usize) -> Vec<f64> {
        self.emission_log(h, polarity).into_iter().map(f64::exp).collect()
    }

    /// Log emissions for all polarities, laid out `[A * n + a]`.
    pub fn emission_table(&self, h: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .flat_map(|a| self.emission_log(h, a))
            .collect()
    }
}

/// One mixture component of a transition rule over `[a; b; c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleComponent {
    pub log_rho: f64,
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// Emission heads for one polarity and one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmHead {
    pub rho: Affine,
    pub mu: Affine,
    pub var: Affine,
}

impl GmHead {
    fn zeros_like(&self) -> Self {
        GmHead {
            rho: Affine::zeros(self.rho.out_dim(), self.rho.in_dim()),
            mu: Affine::zeros(self.mu.out_dim(), self.mu.in_dim()),
            var: Affine::zeros(self.var.out_dim(), self.var.in_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmGrammar {
    pub classes: usize,
    pub dim: usize,
    pub components: usize,
    /// `[triple][component]`, triples indexed as in [`DiscreteGrammar::triple`].
    pub rules: Vec<Vec<RuleComponent>>,
    /// `[polarity][component]`
    pub heads: Vec<Vec<GmHead>>,
}

impl GmGrammar {
    #[inline]
    pub fn triple(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.classes + b) * self.classes + c
    }

    pub fn blocks(&self) -> Blocks {
        Blocks::uniform(self.dim)
    }

    /// Weight function of transition rule `A -> B C` as a mixture over `[a; b; c]`.
    pub fn rule_mixture(&self, a: usize, b: usize, c: usize) -> GaussianMixture {
        let comps = self.rules[self.triple(a, b, c)]
            .iter()
            .map(|k| {
                Component::new(
                    k.log_rho,
                    k.mean.clone(),
                    k.log_var.iter().map(|&l| floored_var(l)).collect(),
                )
            })
            .collect();
        GaussianMixture {
            dim: 3 * self.dim,
            components: comps,
        }
    }

    /// All transition rule mixtures, indexed by triple.
    pub fn rule_mixtures(&self) -> Vec<GaussianMixture> {
        let c = self.classes;
        (0..c * c * c)
            .map(|t| self.rule_mixture(t / (c * c), (t / c) % c, t % c))
            .collect()
    }

    /// Emission weight function of polarity `A` at a span with encoding `h`.
    pub fn emission_gm(&self, h: &[f64], polarity: usize) -> GaussianMixture {
        let comps = self.heads[polarity]
            .iter()
            .map(|head| {
                let log_rho = head.rho.apply(h)[0];
                let mean = head.mu.apply(h);
                let var = head.var.apply(h).into_iter().map(floored_var).collect();
                Component::new(log_rho, mean, var)
            })
            .collect();
        GaussianMixture {
            dim: self.dim,
            components: comps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Grammar {
    Discrete(DiscreteGrammar),
    Gm(GmGrammar),
}

impl Grammar {
    pub fn classes(&self) -> usize {
        match self {
            Grammar::Discrete(g) => g.classes,
            Grammar::Gm(g) => g.classes,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Grammar::Discrete(g) => Grammar::Discrete(DiscreteGrammar {
                classes: g.classes,
                subtypes: g.subtypes,
                lambda: vec![0.0; g.lambda.len()],
                heads: g
                    .heads
                    .iter()
                    .map(|h| Affine::zeros(h.out_dim(), h.in_dim()))
                    .collect(),
            }),
            Grammar::Gm(g) => Grammar::Gm(GmGrammar {
                classes: g.classes,
                dim: g.dim,
                components: g.components,
                rules: g
                    .rules
                    .iter()
                    .map(|ks| {
                        ks.iter()
                            .map(|k| RuleComponent {
                                log_rho: 0.0,
                                mean: vec![0.0; k.mean.len()],
                                log_var: vec![0.0; k.log_var.len()],
                            })
                            .collect()
                    })
                    .collect(),
                heads: g
                    .heads
                    .iter()
                    .map(|hs| hs.iter().map(GmHead::zeros_like).collect())
                    .collect(),
            }),
        }
    }

    /// Flat views of every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        match self {
            Grammar::Discrete(g) => {
                out.push(&g.lambda);
                for h in &g.heads {
                    out.extend(h.tensors());
                }
            }
            Grammar::Gm(g) => {
                for k in g.rules.iter().flatten() {
                    out.push(std::slice::from_ref(&k.log_rho));
                    out.push(&k.mean);
                    out.push(&k.log_var);
                }
                for h in g.heads.iter().flatten() {
                    out.extend(h.rho.tensors());
                    out.extend(h.mu.tensors());
                    out.extend(h.var.tensors());
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        match self {
            Grammar::Discrete(g) => {
                out.push(&mut g.lambda);
                for h in &mut g.heads {
                    out.extend(h.tensors_mut());
                }
            }
            Grammar::Gm(g) => {
                for k in g.rules.iter_mut().flatten() {
                    out.push(std::slice::from_mut(&mut k.log_rho));
                    out.push(&mut k.mean);
                    out.push(&mut k.log_var);
                }
                for h in g.heads.iter_mut().flatten() {
                    out.extend(h.rho.tensors_mut());
                    out.extend(h.mu.tensors_mut());
                    out.extend(h.var.tensors_mut());
                }
            }
        }
        out
    }
}

/// Initialize a grammar deterministically from `seed`.
///
/// Transition log-weights are uniform(-0.1, 0.1). Gaussian rules start with
/// `log rho = -log K`, means from N(0, 0.25) and unit variances. Emission
/// heads use the same scheme as the encoder heads.
pub fn init_grammar(spec: PolaritySet, kind: GrammarKind, hidden: usize, seed: u64) -> Grammar {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = spec.classes;
    match kind {
        GrammarKind::Wg | GrammarKind::Lvg => {
            let n = if kind == GrammarKind::Wg { 1 } else { spec.subtypes };
            let lambda = (0..c * c * c * n * n * n)
                .map(|_| rng.random_range(-0.1..0.1))
                .collect();
            let heads = (0..c).map(|_| Affine::xavier(n, hidden, &mut rng)).collect();
            Grammar::Discrete(DiscreteGrammar {
                classes: c,
                subtypes: n,
                lambda,
                heads,
            })
        }
        GrammarKind::Lveg => {
            let (d, k) = (spec.dim, spec.components);
            let normal = Normal::new(0.0, 0.5).expect("valid normal");
            let rules = (0..c * c * c)
                .map(|_| {
                    (0..k)
                        .map(|_| RuleComponent {
                            log_rho: -(k as f64).ln(),
                            mean: (0..3 * d).map(|_| normal.sample(&mut rng)).collect(),
                            log_var: vec![0.0; 3 * d],
                        })
                        .collect()
                })
                .collect();
            let heads = (0..c)
                .map(|_| {
                    (0..k)
                        .map(|_| GmHead {
                            rho: Affine::xavier(1, hidden, &mut rng),
                            mu: Affine::xavier(d, hidden, &mut rng),
                            var: Affine::xavier(d, hidden, &mut rng),
                        })
                        .collect()
                })
                .collect();
            Grammar::Gm(GmGrammar {
                classes: c,
                dim: d,
                components: k,
                rules,
                heads,
            })
        }
    }
}

/// A discrete grammar with the given subtype count and all-zero parameters
/// (every weight equal to 1).
pub fn uniform_discrete(classes: usize, subtypes: usize, hidden: usize) -> DiscreteGrammar {
    DiscreteGrammar {
        classes,
        subtypes,
        lambda: vec![0.0; classes.pow(3) * subtypes.pow(3)],
        heads: (0..classes).map(|_| Affine::zeros(subtypes, hidden)).collect(),
    }
}

/// Replace the weight matrix of an affine head, for tests and tooling.
pub fn set_head_weight(head: &mut Affine, weight: Matrix) {
    assert_eq!((weight.rows, weight.cols), (head.weight.rows, head.weight.cols));
    head.weight = weight;
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec(classes: usize) -> PolaritySet {
        PolaritySet {
            classes,
            subtypes: 4,
            dim: 2,
            components: 1,
        }
    }

    #[test]
    fn zero_head_emits_ones() {
        let g = uniform_discrete(3, 2, 4);
        assert_eq!(g.emission_discrete(&[0.3, -1.0, 2.0, 0.0], 1), vec![1.0, 1.0]);
        assert_eq!(g.emission_log(&[0.3, -1.0, 2.0, 0.0], 1), vec![0.0, 0.0]);
    }

    #[test]
    fn analytic_emission() {
        let mut g = uniform_discrete(2, 1, 3);
        set_head_weight(
            &mut g.heads[0],
            Matrix {
                rows: 1,
                cols: 3,
                data: vec![1.0, 0.0, 0.0],
            },
        );
        let w = g.emission_discrete(&[2.0, 0.0, 0.0], 0);
        assert!((w[0] - 2f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn random_emission_matches_straight_line() {
        let Grammar::Discrete(g) = init_grammar(spec(3), GrammarKind::Lvg, 5, 9) else {
            unreachable!()
        };
        let h = [0.3, -0.2, 0.9, 0.05, -1.1];
        for a in 0..3 {
            let got = g.emission_discrete(&h, a);
            for (s, &w) in got.iter().enumerate() {
                let head = &g.heads[a];
                let mut z = head.bias[s];
                for (k, hk) in h.iter().enumerate() {
                    z += head.weight.data[s * 5 + k] * hk;
                }
                assert!((w - z.exp()).abs() <= 1e-12 * z.exp());
            }
        }
    }

    #[test]
    fn gm_emission_construction() {
        let Grammar::Gm(mut g) = init_grammar(
            PolaritySet {
                classes: 2,
                subtypes: 1,
                dim: 1,
                components: 1,
            },
            GrammarKind::Lveg,
            3,
            1,
        ) else {
            unreachable!()
        };
        let h = [0.4, -0.7, 1.2];
        for head in g.heads.iter_mut().flatten() {
            *head = head.zeros_like();
        }
        let e = g.emission_gm(&h, 0);
        assert_eq!(e.components[0].log_coef, 0.0);
        assert_eq!(e.components[0].mean, vec![0.0]);
        assert_eq!(e.components[0].var, vec![1.0]);

        g.heads[0][0].rho.bias[0] = 0.3;
        g.heads[0][0].mu.bias[0] = -1.2;
        let e = g.emission_gm(&h, 0);
        assert_eq!(e.components[0].log_coef, 0.3);
        assert_eq!(e.components[0].mean, vec![-1.2]);
        assert!((e.density(&[-1.2]) - 0.3f64.exp() / (2.0 * PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gm_density_at_mean_in_two_dims() {
        let g = GaussianMixture::single(0.7, vec![0.1, -0.3], vec![1.0, 1.0]);
        let expect = 0.7f64.exp() / (2.0 * PI);
        assert!((g.density(&[0.1, -0.3]) - expect).abs() < 1e-15);
    }

    #[test]
    fn init_shapes_and_determinism() {
        let Grammar::Discrete(wg) = init_grammar(spec(5), GrammarKind::Wg, 4, 1) else {
            unreachable!()
        };
        assert_eq!(wg.subtypes, 1);
        assert_eq!(wg.lambda.len(), 125);
        assert!(wg.lambda.iter().all(|l| l.abs() < 0.1));

        let Grammar::Discrete(lvg) = init_grammar(spec(5), GrammarKind::Lvg, 4, 1) else {
            unreachable!()
        };
        assert_eq!(lvg.lambda.len(), 125 * 64);
        assert_eq!(lvg.heads[0].out_dim(), 4);

        let a = init_grammar(spec(5), GrammarKind::Lveg, 4, 3);
        let b = init_grammar(spec(5), GrammarKind::Lveg, 4, 3);
        assert_eq!(a, b);
        let Grammar::Gm(gm) = a else { unreachable!() };
        assert_eq!(gm.rules.len(), 125);
        assert_eq!(gm.rules[0][0].mean.len(), 6);
        assert_eq!(gm.rules[0][0].log_rho, 0.0);
        assert_eq!(gm.rule_mixture(1, 2, 3).dim, 6);
    }

    #[test]
    fn weights_are_positive() {
        let Grammar::Discrete(g) = init_grammar(spec(3), GrammarKind::Lvg, 4, 5) else {
            unreachable!()
        };
        assert!(g.lambda.iter().all(|l| l.exp() > 0.0));
        assert!(g.emission_discrete(&[50.0, -50.0, 3.0, 1.0], 2).iter().all(|&w| w > 0.0));
    }
}
