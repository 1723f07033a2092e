use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentgram_core::gaussian::log_normal;
use sentgram_core::grammar::{uniform_discrete, GmGrammar};
use sentgram_core::inference::*;
use sentgram_core::oracle::*;
use sentgram_core::treebank::parse_with_classes;

fn views(hs: &[Vec<f64>]) -> Vec<&[f64]> {
    hs.iter().map(Vec::as_slice).collect()
}

#[test]
fn single_leaf_partition_is_emission_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tree = parse_with_classes("(1 w)", 3).unwrap();
    let g = random_discrete(&mut rng, 3, 2, 4);
    let hs = random_hidden(&mut rng, 1, 4, 1.0);
    let mut chart = inside_discrete(&tree, &views(&hs), &g, &unconstrained(&tree));
    let expect: f64 = (0..3).flat_map(|a| g.emission_discrete(&hs[0], a)).sum();
    assert!((chart.log_z - expect.ln()).abs() < 1e-13);
    outside_discrete(&tree, &mut chart, &g);
    assert_eq!(chart.outside[0], chart.emission[0]);
}

#[test]
fn uniform_weights_three_node_tree() {
    let tree = parse_with_classes("(1 (0 a) (1 b))", 2).unwrap();
    let g = uniform_discrete(2, 1, 3);
    let hs = vec![vec![0.2, -0.1, 0.5]; 3];
    let v = views(&hs);
    let mut chart = inside_discrete(&tree, &v, &g, &unconstrained(&tree));
    assert!((chart.log_z - 8f64.ln()).abs() < 1e-14);
    let gold = constrained_inside_discrete(&tree, &v, &g).unwrap();
    assert!(gold.abs() < 1e-14);
    outside_discrete(&tree, &mut chart, &g);
    let post = rule_posteriors_discrete(&tree, &chart, &g);
    for q in post.tables[2].as_ref().unwrap() {
        assert!((q - 1.0 / 8.0).abs() < 1e-14);
    }
    // Uniform posteriors decode to the lowest label everywhere.
    assert_eq!(decode_mrp(&post, &tree), vec![0, 0, 0]);
}

#[test]
fn inside_outside_identity_at_every_node() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let tokens = rng.random_range(1..=7);
        let tree = random_tree(&mut rng, tokens, 3);
        let g = random_discrete(&mut rng, 3, 2, 4);
        let hs = random_hidden(&mut rng, tree.len(), 4, 1.0);
        let mut chart = inside_discrete(&tree, &views(&hs), &g, &unconstrained(&tree));
        outside_discrete(&tree, &mut chart, &g);
        for v in 0..tree.len() {
            let terms: Vec<f64> = (0..6)
                .map(|i| chart.inside[v][i] + chart.outside[v][i] - chart.emission[v][i])
                .collect();
            let z = sentgram_core::linalg::log_sum_exp(&terms);
            assert!((z - chart.log_z).abs() < 1e-12 * chart.log_z.abs().max(1.0));
        }
    }
}

#[test]
fn gold_score_never_exceeds_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let tokens = rng.random_range(1..=9);
        let tree = random_tree(&mut rng, tokens, 5);
        let g = random_discrete(&mut rng, 5, 2, 3);
        let hs = random_hidden(&mut rng, tree.len(), 3, 1.0);
        let v = views(&hs);
        let z = inside_discrete(&tree, &v, &g, &unconstrained(&tree)).log_z;
        let gold = constrained_inside_discrete(&tree, &v, &g).unwrap();
        assert!(gold <= z);
    }
}

#[test]
fn missing_gold_label_is_an_error() {
    let tree = parse_with_classes("(1 (_ a) (1 b))", 2).unwrap();
    let g = uniform_discrete(2, 1, 2);
    let hs = vec![vec![0.0; 2]; 3];
    assert!(constrained_inside_discrete(&tree, &views(&hs), &g).is_err());
}

#[test]
fn map_decode_rejects_latent_subtypes() {
    let tree = parse_with_classes("(1 (0 a) (1 b))", 2).unwrap();
    let g = uniform_discrete(2, 2, 2);
    let hs = vec![vec![0.0; 2]; 3];
    assert!(decode_map_wg(&tree, &views(&hs), &g).is_err());
}

#[test]
fn equal_transitions_factorize_map_decode() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tree = random_tree(&mut rng, 5, 3);
    let mut g = random_discrete(&mut rng, 3, 1, 4);
    g.lambda.iter_mut().for_each(|l| *l = 0.25);
    let hs = random_hidden(&mut rng, tree.len(), 4, 1.0);
    let labels = decode_map_wg(&tree, &views(&hs), &g).unwrap();
    for (v, &l) in labels.iter().enumerate() {
        let e = g.emission_table(&hs[v]);
        let best = (0..3).fold(0, |b, a| if e[a] > e[b] { a } else { b });
        assert_eq!(l, best);
    }
    let single = parse_with_classes("(2 w)", 3).unwrap();
    let labels = decode_map_wg(&single, &views(&hs[..1]), &g).unwrap();
    let e = g.emission_table(&hs[0]);
    assert_eq!(labels[0], (0..3).fold(0, |b, a| if e[a] > e[b] { a } else { b }));
}

#[test]
fn mrp_single_internal_node_is_table_argmax() {
    let tree = parse_with_classes("(0 (0 a) (0 b))", 3).unwrap();
    let mut table = vec![0.01; 27];
    table[(2 * 3 + 1) * 3] = 0.5;
    let post = RulePosteriors {
        classes: 3,
        tables: vec![None, None, Some(table)],
        root_marginal: vec![0.0, 0.0, 1.0],
    };
    assert_eq!(decode_mrp(&post, &tree), vec![1, 0, 2]);
}

fn one_dim_gm(rng: &mut ChaCha8Rng, classes: usize) -> GmGrammar {
    random_gm(rng, classes, 1, 1, 3)
}

#[test]
fn gm_single_leaf_partition_is_total_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = one_dim_gm(&mut rng, 3);
    let tree = parse_with_classes("(1 w)", 3).unwrap();
    let hs = random_hidden(&mut rng, 1, 3, 1.0);
    let chart = inside_gm(&tree, &views(&hs), &g, &unconstrained(&tree), GmOptions::default());
    let expect: f64 = (0..3).map(|a| g.heads[a][0].rho.apply(&hs[0])[0].exp()).sum();
    assert!((chart.log_z - expect.ln()).abs() < 1e-13);
}

#[test]
fn gm_two_leaf_partition_closed_form() {
    // With K = 1 everywhere the two-leaf partition is a sum of Gaussian overlaps.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = one_dim_gm(&mut rng, 2);
    let tree = parse_with_classes("(1 (0 a) (1 b))", 2).unwrap();
    let hs = random_hidden(&mut rng, 3, 3, 1.0);
    let chart = inside_gm(&tree, &views(&hs), &g, &unconstrained(&tree), GmOptions { budget: None });
    let em = |v: usize, a: usize| {
        let h = &g.heads[a][0];
        (
            h.rho.apply(&hs[v])[0],
            h.mu.apply(&hs[v])[0],
            h.var.apply(&hs[v])[0].exp().max(1e-6),
        )
    };
    let mut total = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                let t = &g.rules[g.triple(a, b, c)][0];
                let var = |i: usize| t.log_var[i].exp();
                let (ra, ma, va) = em(2, a);
                let (rb, mb, vb) = em(0, b);
                let (rc, mc, vc) = em(1, c);
                total += (t.log_rho
                    + ra
                    + rb
                    + rc
                    + log_normal(ma, t.mean[0], va + var(0))
                    + log_normal(mb, t.mean[1], vb + var(1))
                    + log_normal(mc, t.mean[2], vc + var(2)))
                .exp();
            }
        }
    }
    assert!((chart.log_z - total.ln()).abs() < 1e-12);
}

#[test]
fn gm_pruned_normalization_stays_close() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let tokens = rng.random_range(2..=6);
        let tree = random_tree(&mut rng, tokens, 3);
        let g = random_gm(&mut rng, 3, 2, 2, 3);
        let hs = random_hidden(&mut rng, tree.len(), 3, 1.0);
        let v = views(&hs);
        let mut exact = inside_gm(&tree, &v, &g, &unconstrained(&tree), GmOptions { budget: None });
        outside_gm(&tree, &mut exact, &g);
        let post = rule_posteriors_gm(&tree, &exact, &g);
        assert!(post.max_normalization_error() < 1e-6);

        let mut pruned = inside_gm(&tree, &v, &g, &unconstrained(&tree), GmOptions { budget: Some(50) });
        outside_gm(&tree, &mut pruned, &g);
        for row in pruned.inside.iter().chain(&pruned.outside) {
            assert!(row.iter().all(|m| m.len() <= 50));
        }
        worst = worst.max(rule_posteriors_gm(&tree, &pruned, &g).max_normalization_error());
    }
    assert!(worst < 5e-3, "pruned normalization error {worst}");
}

#[test]
fn small_enumeration_suite() {
    let report = run_discrete_suite(SuiteConfig {
        seed: 17,
        cases: 25,
        tolerance: 1e-9,
    });
    assert!(report.passed(), "{}", report.summary());
}

#[test]
fn small_quadrature_suite() {
    let report = run_gm_suite(
        SuiteConfig {
            seed: 17,
            cases: 5,
            tolerance: 1e-3,
        },
        Grid::default(),
    );
    assert!(report.passed(), "{}", report.summary());
}
